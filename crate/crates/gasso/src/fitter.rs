//! Alternating GLM fitters for the joint/individual decomposition.
//!
//! Each sweep cycles through seven sub-updates — U₁, (μ₁,A₁), U₂, (μ₂,A₂),
//! (μ₁,V₁), (μ₂,V₂), U₀ — each a set of independent row- or column-wise
//! exponential-family regressions solved by penalized IRLS (full mode) or a
//! single penalized Newton step (one-step mode), followed by the
//! Θ-preserving normalization. Sub-updates within a group are independent
//! and run in parallel.

use crate::error::{GassoError, Result};
use crate::expfam::{self, Family, VARIANCE_FLOOR};
use crate::model::{
    self, DataBlock, FitResult, GasParams, NormalizeOutcome, Ranks,
};
use crate::numkit::{self, Matrix, Vector};
use rayon::prelude::*;
use std::time::Instant;

/// Optimization flavor.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum FitMode {
    /// Run inner IRLS to convergence in every sub-update; the likelihood is
    /// nondecreasing sweep to sweep.
    Full,
    /// One penalized Newton step per sub-update per sweep.
    OneStep,
    /// One-step updates with a thresholded joint SVD during normalization,
    /// producing row-sparse joint loadings.
    OneStepSparse,
}

/// Block-wise loading threshold used in sparse mode.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub enum SparsityRule {
    /// Per block and component: zero entries below σ̂·√(2 log p_block),
    /// σ̂ estimated by the median absolute deviation.
    Asymptotic,
    /// Per block and component: zero the given fraction of smallest-|·|
    /// entries.
    QuantileFraction(f64),
}

#[derive(Debug, Clone)]
pub struct FitConfig {
    pub mode: FitMode,
    pub max_iter: usize,
    /// Relative log-likelihood change declaring sweep convergence.
    pub tol: f64,
    /// Ridge penalty applied to sub-updates with Bernoulli responses.
    pub ridge_bernoulli: f64,
    pub inner_irls_max: usize,
    pub inner_irls_tol: f64,
    pub sparsity: Option<SparsityRule>,
}

impl FitConfig {
    pub fn full() -> FitConfig {
        FitConfig {
            mode: FitMode::Full,
            max_iter: 1000,
            tol: 1e-6,
            ridge_bernoulli: 1e-3,
            inner_irls_max: 50,
            inner_irls_tol: 1e-8,
            sparsity: None,
        }
    }

    /// One-step sweeps need no Bernoulli ridge: each sub-update takes a
    /// single damped Newton step from the warm start, so the runaway-MLE
    /// divergence that motivates the penalty in full mode cannot occur.
    pub fn one_step() -> FitConfig {
        FitConfig {
            mode: FitMode::OneStep,
            max_iter: 2000,
            ridge_bernoulli: 0.0,
            ..FitConfig::full()
        }
    }

    pub fn one_step_sparse(rule: SparsityRule) -> FitConfig {
        FitConfig {
            mode: FitMode::OneStepSparse,
            sparsity: Some(rule),
            ..FitConfig::one_step()
        }
    }
}

impl Default for FitConfig {
    fn default() -> FitConfig {
        FitConfig::one_step()
    }
}

/// Observation mask; `true` marks an observed entry.
pub type Mask = nalgebra::DMatrix<bool>;

pub struct GlmFit {
    pub beta: Vector,
    /// All weights vanished (fully masked or saturated); warm start kept.
    pub stalled: bool,
}

fn sub_loglik(
    design: &Matrix,
    y: &Vector,
    offset: &Vector,
    families: &[Family],
    mask: Option<&[bool]>,
    beta: &Vector,
) -> Result<f64> {
    let lin = design * beta;
    let mut ll = 0.0;
    for i in 0..y.len() {
        if mask.is_some_and(|m| !m[i]) {
            continue;
        }
        ll += expfam::log_density(families[i], y[i], offset[i] + lin[i])?;
    }
    Ok(ll)
}

fn irls_step(
    design: &Matrix,
    y: &Vector,
    offset: &Vector,
    families: &[Family],
    mask: Option<&[bool]>,
    beta: &Vector,
    lambda: f64,
) -> Result<Option<Vector>> {
    let m = y.len();
    let lin = design * beta;
    let mut w = Vector::zeros(m);
    let mut z = Vector::zeros(m);
    let mut any = false;
    for i in 0..m {
        if mask.is_some_and(|mk| !mk[i]) {
            continue;
        }
        let theta = offset[i] + lin[i];
        let var = expfam::variance_from_natural(families[i], theta)?.max(VARIANCE_FLOOR);
        let mean = expfam::mean_from_natural(families[i], theta)?;
        w[i] = var;
        z[i] = lin[i] + (y[i] - mean) / var;
        any = true;
    }
    if !any {
        return Ok(None);
    }
    Ok(Some(numkit::weighted_ridge_ls(design, &z, &w, lambda)?))
}

/// One exponential-family regression of `y` on `design` with a fixed
/// `offset`, warm-started at `warm`. Full mode runs IRLS to convergence and
/// guards the raw log-likelihood against decrease by step-halving toward the
/// warm start; one-step mode takes a single penalized Newton step.
pub fn glm_row_fit(
    design: &Matrix,
    y: &Vector,
    offset: &Vector,
    families: &[Family],
    mask: Option<&[bool]>,
    warm: &Vector,
    cfg: &FitConfig,
) -> Result<GlmFit> {
    if design.ncols() == 0 {
        return Ok(GlmFit {
            beta: warm.clone(),
            stalled: false,
        });
    }
    let bernoulli = (0..y.len()).any(|i| {
        families[i] == Family::Bernoulli && !mask.is_some_and(|mk| !mk[i])
    });
    let lambda = if bernoulli { cfg.ridge_bernoulli } else { 0.0 };

    if cfg.mode != FitMode::Full {
        return match irls_step(design, y, offset, families, mask, warm, lambda)? {
            Some(beta) => Ok(GlmFit {
                beta,
                stalled: false,
            }),
            None => Ok(GlmFit {
                beta: warm.clone(),
                stalled: true,
            }),
        };
    }

    let mut beta = warm.clone();
    for _ in 0..cfg.inner_irls_max {
        let next = match irls_step(design, y, offset, families, mask, &beta, lambda)? {
            Some(b) => b,
            None => {
                return Ok(GlmFit {
                    beta: warm.clone(),
                    stalled: true,
                })
            }
        };
        let delta = (&next - &beta).norm() / (1.0 + beta.norm());
        beta = next;
        if delta < cfg.inner_irls_tol {
            break;
        }
    }
    // the penalized step may lower the unpenalized likelihood; back off
    // toward the warm start so the global likelihood never decreases
    let ll_warm = sub_loglik(design, y, offset, families, mask, warm)?;
    let slack = 1e-12 * (1.0 + ll_warm.abs());
    if sub_loglik(design, y, offset, families, mask, &beta)? < ll_warm - slack {
        let mut t = 0.5;
        let mut accepted = false;
        for _ in 0..40 {
            let trial = warm + (&beta - warm) * t;
            if sub_loglik(design, y, offset, families, mask, &trial)? >= ll_warm - slack {
                beta = trial;
                accepted = true;
                break;
            }
            t *= 0.5;
        }
        if !accepted {
            beta = warm.clone();
        }
    }
    Ok(GlmFit {
        beta,
        stalled: false,
    })
}

fn column_mask(mask: Option<&Mask>, j: usize) -> Option<Vec<bool>> {
    mask.map(|m| (0..m.nrows()).map(|i| m[(i, j)]).collect())
}

fn row_mask(mask: Option<&Mask>, i: usize) -> Option<Vec<bool>> {
    mask.map(|m| (0..m.ncols()).map(|j| m[(i, j)]).collect())
}

/// Row-wise score updates: for each sample, regress its observations on the
/// fixed loadings.
pub(crate) fn update_scores(
    x: &Matrix,
    families: &[Family],
    mask: Option<&Mask>,
    design: &Matrix,
    offsets: &Matrix,
    warm: &Matrix,
    cfg: &FitConfig,
) -> Result<(Matrix, usize)> {
    let n = x.nrows();
    let rows: Vec<(Vector, bool)> = (0..n)
        .into_par_iter()
        .map(|i| {
            let y = x.row(i).transpose();
            let offset = offsets.row(i).transpose();
            let mk = row_mask(mask, i);
            let fit = glm_row_fit(
                design,
                &y,
                &offset,
                families,
                mk.as_deref(),
                &warm.row(i).transpose(),
                cfg,
            )?;
            Ok((fit.beta, fit.stalled))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut out = Matrix::zeros(n, design.ncols());
    let mut stalls = 0;
    for (i, (beta, stalled)) in rows.into_iter().enumerate() {
        out.set_row(i, &beta.transpose());
        stalls += stalled as usize;
    }
    Ok((out, stalls))
}

/// Column-wise loading updates: for each variable, regress its column on
/// `[1 | scores]`, jointly refreshing the intercept.
#[allow(clippy::too_many_arguments)]
pub(crate) fn update_loadings(
    x: &Matrix,
    families: &[Family],
    mask: Option<&Mask>,
    scores: &Matrix,
    offsets: &Matrix,
    mu: &Vector,
    loadings: &Matrix,
    cfg: &FitConfig,
) -> Result<(Vector, Matrix, usize)> {
    let n = x.nrows();
    let p = x.ncols();
    let q = scores.ncols();
    let mut design = Matrix::zeros(n, 1 + q);
    for i in 0..n {
        design[(i, 0)] = 1.0;
    }
    design.view_mut((0, 1), (n, q)).copy_from(scores);
    let cols: Vec<(Vector, bool)> = (0..p)
        .into_par_iter()
        .map(|j| {
            let y = x.column(j).clone_owned();
            let offset = offsets.column(j).clone_owned();
            let fams = vec![families[j]; n];
            let mk = column_mask(mask, j);
            let mut warm = Vector::zeros(1 + q);
            warm[0] = mu[j];
            for r in 0..q {
                warm[1 + r] = loadings[(j, r)];
            }
            let fit = glm_row_fit(&design, &y, &offset, &fams, mk.as_deref(), &warm, cfg)?;
            Ok((fit.beta, fit.stalled))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut mu_new = Vector::zeros(p);
    let mut load_new = Matrix::zeros(p, q);
    let mut stalls = 0;
    for (j, (beta, stalled)) in cols.into_iter().enumerate() {
        mu_new[j] = beta[0];
        for r in 0..q {
            load_new[(j, r)] = beta[1 + r];
        }
        stalls += stalled as usize;
    }
    Ok((mu_new, load_new, stalls))
}

fn ensure_finite(m: &Matrix, group: &str) -> Result<()> {
    if m.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(GassoError::NonFiniteLikelihood(group.into()))
    }
}

fn masked_loglik(
    params: &GasParams,
    d1: &DataBlock,
    d2: &DataBlock,
    mask1: Option<&Mask>,
    mask2: Option<&Mask>,
) -> Result<f64> {
    let (theta1, theta2) = model::natural_parameters(params)?;
    let mut ll = 0.0;
    for (block, theta, mask) in [(d1, &theta1, mask1), (d2, &theta2, mask2)] {
        for j in 0..block.ncols() {
            for i in 0..block.nrows() {
                if mask.is_some_and(|m| !m[(i, j)]) {
                    continue;
                }
                ll += expfam::log_density(block.families[j], block.x[(i, j)], theta[(i, j)])?;
            }
        }
    }
    Ok(ll)
}

/// Initialize from marginal MLE intercepts and SVDs of the link-transformed,
/// centered data; Bernoulli/Poisson entries are clipped away from the
/// support boundary by 1/(2·#observed) before the link.
pub fn initialize(
    d1: &DataBlock,
    d2: &DataBlock,
    ranks: Ranks,
    mask1: Option<&Mask>,
    mask2: Option<&Mask>,
) -> Result<GasParams> {
    let n = d1.nrows();
    let (p1, p2) = (d1.ncols(), d2.ncols());
    let mut z = Matrix::zeros(n, p1 + p2);
    let mut mu = Vector::zeros(p1 + p2);
    for (block, mask, col0) in [(d1, mask1, 0usize), (d2, mask2, p1)] {
        for j in 0..block.ncols() {
            let fam = block.families[j];
            let observed: Vec<usize> = (0..n)
                .filter(|&i| !mask.is_some_and(|m| !m[(i, j)]))
                .collect();
            if observed.is_empty() {
                return Err(GassoError::CvPlan(format!(
                    "column {} has no observed entries",
                    col0 + j
                )));
            }
            let eps = 1.0 / (2.0 * observed.len() as f64);
            let mean: f64 =
                observed.iter().map(|&i| block.x[(i, j)]).sum::<f64>() / observed.len() as f64;
            let clipped_mean = match fam {
                Family::GaussianUnitVar => mean,
                Family::Bernoulli => mean.clamp(eps, 1.0 - eps),
                Family::Poisson => mean.max(eps),
            };
            mu[col0 + j] = expfam::link(fam, clipped_mean)?;
            for &i in &observed {
                let v = block.x[(i, j)];
                let clipped = match fam {
                    Family::GaussianUnitVar => v,
                    Family::Bernoulli => v.clamp(eps, 1.0 - eps),
                    Family::Poisson => v.max(eps),
                };
                z[(i, col0 + j)] = expfam::link(fam, clipped)? - mu[col0 + j];
            }
        }
    }
    let svd = numkit::thin_svd(&z, ranks.r0)?;
    let u0 = &svd.u * Matrix::from_diagonal(&svd.d);
    let v1 = svd.v.rows(0, p1).clone_owned();
    let v2 = svd.v.rows(p1, p2).clone_owned();
    let resid = &z - &u0 * svd.v.transpose();
    let ind = |cols: std::ops::Range<usize>, r: usize| -> Result<(Matrix, Matrix)> {
        let width = cols.end - cols.start;
        let block = resid.columns(cols.start, width).clone_owned();
        let s = numkit::thin_svd(&block, r)?;
        Ok((&s.u * Matrix::from_diagonal(&s.d), s.v))
    };
    let (u1, a1) = ind(0..p1, ranks.r1)?;
    let (u2, a2) = ind(p1..p1 + p2, ranks.r2)?;
    let params = GasParams {
        mu1: mu.rows(0, p1).clone_owned(),
        mu2: mu.rows(p1, p2).clone_owned(),
        u0,
        u1,
        u2,
        v1,
        v2,
        a1,
        a2,
    };
    Ok(model::normalize(&params)?.params)
}

/// Thresholded joint SVD of the centered joint structure. Alternates between
/// score extraction and block-wise hard-thresholded loading regression until
/// the loading subspace stabilizes, then rotates so the score gram is
/// diagonal nonincreasing. Zero loading rows survive the final rotation, so
/// the row-sparsity pattern is preserved.
pub fn sparse_joint_svd(
    jc: &Matrix,
    r0: usize,
    split: usize,
    rule: SparsityRule,
) -> Result<(Matrix, Matrix, Matrix)> {
    let p = jc.ncols();
    let init = numkit::thin_svd(jc, r0)?;
    let mut v = init.v;
    for _ in 0..100 {
        let u = numkit::orthonormal_basis(&(jc * &v));
        let mut vraw = jc.transpose() * &u;
        for c in 0..vraw.ncols() {
            for (start, len) in [(0usize, split), (split, p - split)] {
                threshold_block(&mut vraw, c, start, len, rule);
            }
        }
        let vnew = numkit::gram_schmidt(&vraw);
        for c in 0..vnew.ncols() {
            if vnew.column(c).norm() == 0.0 {
                return Err(GassoError::ComponentAnnihilated(c));
            }
        }
        // ‖P_new − P_old‖²_F = 2r − 2‖VᵀV_new‖²_F for orthonormal V
        let cross = v.transpose() * &vnew;
        let change = (2.0 * v.ncols().min(vnew.ncols()) as f64
            - 2.0 * cross.norm().powi(2))
        .max(0.0)
        .sqrt();
        let same_width = vnew.ncols() == v.ncols();
        v = vnew;
        if same_width && change < 1e-6 {
            break;
        }
    }
    let scores = jc * &v;
    let rot = numkit::thin_svd(&scores, r0.min(scores.ncols()))?;
    let u0 = &rot.u * Matrix::from_diagonal(&rot.d);
    let v_final = &v * &rot.v;
    Ok((
        u0,
        v_final.rows(0, split).clone_owned(),
        v_final.rows(split, p - split).clone_owned(),
    ))
}

fn threshold_block(v: &mut Matrix, col: usize, start: usize, len: usize, rule: SparsityRule) {
    if len == 0 {
        return;
    }
    let mut mags: Vec<f64> = (0..len).map(|i| v[(start + i, col)].abs()).collect();
    let cut = match rule {
        SparsityRule::Asymptotic => {
            mags.sort_by(|a, b| a.partial_cmp(b).unwrap());
            let median = mags[len / 2];
            let sigma = median / 0.6745;
            sigma * (2.0 * (len as f64).ln()).sqrt()
        }
        SparsityRule::QuantileFraction(f) => {
            let k = ((f.clamp(0.0, 1.0)) * len as f64).floor() as usize;
            if k == 0 {
                return;
            }
            mags.sort_by(|a, b| a.partial_cmp(b).unwrap());
            mags[k - 1]
        }
    };
    for i in 0..len {
        if v[(start + i, col)].abs() <= cut {
            v[(start + i, col)] = 0.0;
        }
    }
}

/// Fit on fully observed blocks.
pub fn fit(d1: &DataBlock, d2: &DataBlock, ranks: Ranks, cfg: &FitConfig) -> Result<FitResult> {
    fit_masked(d1, d2, ranks, cfg, None, None)
}

/// Fit with optional per-entry observation masks (used by rank
/// cross-validation); masked entries get zero IRLS weight and are excluded
/// from the tracked likelihood.
pub fn fit_masked(
    d1: &DataBlock,
    d2: &DataBlock,
    ranks: Ranks,
    cfg: &FitConfig,
    mask1: Option<&Mask>,
    mask2: Option<&Mask>,
) -> Result<FitResult> {
    let start = Instant::now();
    let n = d1.nrows();
    if d2.nrows() != n {
        return Err(GassoError::Dimension("blocks not row-aligned".into()));
    }
    ranks.validate(n, d1.ncols(), d2.ncols())?;
    let (p1, p2) = (d1.ncols(), d2.ncols());

    // concatenated view for the joint-score update
    let mut x_cat = Matrix::zeros(n, p1 + p2);
    x_cat.view_mut((0, 0), (n, p1)).copy_from(&d1.x);
    x_cat.view_mut((0, p1), (n, p2)).copy_from(&d2.x);
    let fams_cat: Vec<Family> = d1
        .families
        .iter()
        .chain(d2.families.iter())
        .copied()
        .collect();
    let mask_cat: Option<Mask> = match (mask1, mask2) {
        (None, None) => None,
        _ => {
            let mut m = Mask::from_element(n, p1 + p2, true);
            if let Some(m1) = mask1 {
                m.view_mut((0, 0), (n, p1)).copy_from(m1);
            }
            if let Some(m2) = mask2 {
                m.view_mut((0, p1), (n, p2)).copy_from(m2);
            }
            Some(m)
        }
    };

    let rule = cfg
        .sparsity
        .unwrap_or(SparsityRule::Asymptotic);
    let normalize = |params: &GasParams| -> Result<NormalizeOutcome> {
        if cfg.mode == FitMode::OneStepSparse {
            model::normalize_with(params, &|jc, r0, split| {
                sparse_joint_svd(jc, r0, split, rule)
            })
        } else {
            model::normalize(params)
        }
    };

    let mut params = initialize(d1, d2, ranks, mask1, mask2)?;
    if cfg.mode == FitMode::OneStepSparse {
        params = normalize(&params)?.params;
    }
    let ones = Matrix::from_element(n, 1, 1.0);
    let mut trace = vec![masked_loglik(&params, d1, d2, mask1, mask2)?];
    let mut converged = false;
    let mut iterations = 0;
    let mut monotonicity_fallback = false;
    let mut rank_collapsed = Vec::new();
    let mut stalled_updates = 0;

    for sweep in 0..cfg.max_iter {
        iterations = sweep + 1;

        // U1
        if ranks.r1 > 0 {
            let offsets = &ones * params.mu1.transpose() + &params.u0 * params.v1.transpose();
            let (u1, s) =
                update_scores(&d1.x, &d1.families, mask1, &params.a1, &offsets, &params.u1, cfg)?;
            ensure_finite(&u1, "U1")?;
            params.u1 = u1;
            stalled_updates += s;
        }
        // (mu1, A1)
        {
            let offsets = &params.u0 * params.v1.transpose();
            let (mu, a1, s) = update_loadings(
                &d1.x,
                &d1.families,
                mask1,
                &params.u1,
                &offsets,
                &params.mu1,
                &params.a1,
                cfg,
            )?;
            ensure_finite(&a1, "mu1-A1")?;
            params.mu1 = mu;
            params.a1 = a1;
            stalled_updates += s;
        }
        // U2
        if ranks.r2 > 0 {
            let offsets = &ones * params.mu2.transpose() + &params.u0 * params.v2.transpose();
            let (u2, s) =
                update_scores(&d2.x, &d2.families, mask2, &params.a2, &offsets, &params.u2, cfg)?;
            ensure_finite(&u2, "U2")?;
            params.u2 = u2;
            stalled_updates += s;
        }
        // (mu2, A2)
        {
            let offsets = &params.u0 * params.v2.transpose();
            let (mu, a2, s) = update_loadings(
                &d2.x,
                &d2.families,
                mask2,
                &params.u2,
                &offsets,
                &params.mu2,
                &params.a2,
                cfg,
            )?;
            ensure_finite(&a2, "mu2-A2")?;
            params.mu2 = mu;
            params.a2 = a2;
            stalled_updates += s;
        }
        // (mu1, V1)
        {
            let offsets = &params.u1 * params.a1.transpose();
            let (mu, v1, s) = update_loadings(
                &d1.x,
                &d1.families,
                mask1,
                &params.u0,
                &offsets,
                &params.mu1,
                &params.v1,
                cfg,
            )?;
            ensure_finite(&v1, "mu1-V1")?;
            params.mu1 = mu;
            params.v1 = v1;
            stalled_updates += s;
        }
        // (mu2, V2)
        {
            let offsets = &params.u2 * params.a2.transpose();
            let (mu, v2, s) = update_loadings(
                &d2.x,
                &d2.families,
                mask2,
                &params.u0,
                &offsets,
                &params.mu2,
                &params.v2,
                cfg,
            )?;
            ensure_finite(&v2, "mu2-V2")?;
            params.mu2 = mu;
            params.v2 = v2;
            stalled_updates += s;
        }
        // U0, across both blocks
        if ranks.r0 > 0 {
            let mut design = Matrix::zeros(p1 + p2, ranks.r0);
            design.view_mut((0, 0), (p1, ranks.r0)).copy_from(&params.v1);
            design.view_mut((p1, 0), (p2, ranks.r0)).copy_from(&params.v2);
            let mut offsets = Matrix::zeros(n, p1 + p2);
            offsets
                .view_mut((0, 0), (n, p1))
                .copy_from(&(&ones * params.mu1.transpose() + &params.u1 * params.a1.transpose()));
            offsets
                .view_mut((0, p1), (n, p2))
                .copy_from(&(&ones * params.mu2.transpose() + &params.u2 * params.a2.transpose()));
            let (u0, s) = update_scores(
                &x_cat,
                &fams_cat,
                mask_cat.as_ref(),
                &design,
                &offsets,
                &params.u0,
                cfg,
            )?;
            ensure_finite(&u0, "U0")?;
            params.u0 = u0;
            stalled_updates += s;
        }

        let outcome = normalize(&params)?;
        params = outcome.params;
        rank_collapsed = outcome.collapsed;

        let ll = masked_loglik(&params, d1, d2, mask1, mask2)?;
        if !ll.is_finite() {
            return Err(GassoError::NonFiniteLikelihood("sweep".into()));
        }
        let prev = *trace.last().unwrap();
        trace.push(ll);
        if ll < prev - 1e-6 * (1.0 + prev.abs()) {
            monotonicity_fallback = true;
        }
        if (ll - prev).abs() / (1.0 + ll.abs()) < cfg.tol {
            converged = true;
            break;
        }
    }

    Ok(FitResult {
        params,
        loglik_trace: trace,
        iterations,
        converged,
        wall_time: start.elapsed().as_secs_f64(),
        monotonicity_fallback,
        rank_collapsed,
        stalled_updates,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::Rng;
    use rand_chacha::rand_core::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn bernoulli_problem(seed: u64) -> (Matrix, Vector, Vector, Vec<Family>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let m = 10;
        let design = Matrix::from_fn(m, 1, |_, _| rng.gen_range(-1.0..1.0));
        let offset = Vector::from_fn(m, |_, _| rng.gen_range(-0.3..0.3));
        let y = Vector::from_fn(m, |i, _| {
            let p = 1.0 / (1.0 + (-(2.0 * design[(i, 0)] + offset[i])).exp());
            (rng.gen::<f64>() < p) as u8 as f64
        });
        (design, y, offset, vec![Family::Bernoulli; m])
    }

    /// Golden-section maximization of the penalized 1-D objective, as an
    /// independent oracle for the IRLS fixed point.
    fn golden_max(f: impl Fn(f64) -> f64, mut a: f64, mut b: f64) -> f64 {
        let phi = (5.0f64.sqrt() - 1.0) / 2.0;
        for _ in 0..200 {
            let c = b - phi * (b - a);
            let d = a + phi * (b - a);
            if f(c) > f(d) {
                b = d;
            } else {
                a = c;
            }
        }
        0.5 * (a + b)
    }

    #[test]
    fn full_irls_matches_golden_section_oracle() {
        let (design, y, offset, fams) = bernoulli_problem(3);
        let cfg = FitConfig::full();
        let fit = glm_row_fit(&design, &y, &offset, &fams, None, &Vector::zeros(1), &cfg).unwrap();
        let m = y.len() as f64;
        let objective = |beta: f64| {
            let mut ll = 0.0;
            for i in 0..y.len() {
                ll += expfam::log_density(
                    Family::Bernoulli,
                    y[i],
                    offset[i] + design[(i, 0)] * beta,
                )
                .unwrap();
            }
            ll - 0.5 * m * cfg.ridge_bernoulli * beta * beta
        };
        let oracle = golden_max(objective, -10.0, 10.0);
        assert_abs_diff_eq!(fit.beta[0], oracle, epsilon = 1e-6);
    }

    #[test]
    fn one_step_is_fixed_point_of_full_optimum() {
        let (design, y, offset, fams) = bernoulli_problem(7);
        let full = glm_row_fit(
            &design,
            &y,
            &offset,
            &fams,
            None,
            &Vector::zeros(1),
            &FitConfig::full(),
        )
        .unwrap();
        // same penalty in both modes so the optimum is a genuine fixed point
        let mut one_cfg = FitConfig::one_step();
        one_cfg.ridge_bernoulli = FitConfig::full().ridge_bernoulli;
        let one = glm_row_fit(&design, &y, &offset, &fams, None, &full.beta, &one_cfg).unwrap();
        assert_abs_diff_eq!(one.beta[0], full.beta[0], epsilon = 1e-7);
    }

    #[test]
    fn masked_entries_are_ignored() {
        let (design, y, offset, fams) = bernoulli_problem(11);
        let cfg = FitConfig::full();
        // mask half the entries; result must match fitting the kept subset
        let mask: Vec<bool> = (0..y.len()).map(|i| i % 2 == 0).collect();
        let masked =
            glm_row_fit(&design, &y, &offset, &fams, Some(&mask), &Vector::zeros(1), &cfg)
                .unwrap();
        let kept: Vec<usize> = (0..y.len()).filter(|&i| mask[i]).collect();
        let sub_design = Matrix::from_fn(kept.len(), 1, |i, _| design[(kept[i], 0)]);
        let sub_y = Vector::from_fn(kept.len(), |i, _| y[kept[i]]);
        let sub_off = Vector::from_fn(kept.len(), |i, _| offset[kept[i]]);
        let sub = glm_row_fit(
            &sub_design,
            &sub_y,
            &sub_off,
            &vec![Family::Bernoulli; kept.len()],
            None,
            &Vector::zeros(1),
            &cfg,
        )
        .unwrap();
        // ridge scales with the row count, so compare against the subset fit
        // at the same effective penalty
        let mut cfg2 = cfg.clone();
        cfg2.ridge_bernoulli = cfg.ridge_bernoulli * y.len() as f64 / kept.len() as f64;
        let sub2 = glm_row_fit(
            &sub_design,
            &sub_y,
            &sub_off,
            &vec![Family::Bernoulli; kept.len()],
            None,
            &Vector::zeros(1),
            &cfg2,
        )
        .unwrap();
        assert_abs_diff_eq!(masked.beta[0], sub2.beta[0], epsilon = 1e-8);
        // and differ from the unadjusted subset only through the penalty
        assert!((masked.beta[0] - sub.beta[0]).abs() < 0.5);
        // fully masked rows stall and keep the warm start
        let none = vec![false; y.len()];
        let stalled = glm_row_fit(
            &design,
            &y,
            &offset,
            &fams,
            Some(&none),
            &Vector::from_element(1, 0.7),
            &cfg,
        )
        .unwrap();
        assert!(stalled.stalled);
        assert_abs_diff_eq!(stalled.beta[0], 0.7);
    }

    fn small_blocks(seed: u64, n: usize, p1: usize, p2: usize) -> (DataBlock, DataBlock) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let u = Matrix::from_fn(n, 2, |_, _| rng.gen_range(-1.0..1.0));
        let v1 = Matrix::from_fn(p1, 2, |_, _| rng.gen_range(-0.8..0.8));
        let v2 = Matrix::from_fn(p2, 2, |_, _| rng.gen_range(-0.8..0.8));
        let t1 = &u * v1.transpose();
        let t2 = &u * v2.transpose();
        let x1 = Matrix::from_fn(n, p1, |i, j| t1[(i, j)] + rng.gen_range(-0.5..0.5));
        let x2 = Matrix::from_fn(n, p2, |i, j| {
            let p = 1.0 / (1.0 + (-t2[(i, j)]).exp());
            (rng.gen::<f64>() < p) as u8 as f64
        });
        (
            DataBlock::uniform(x1, Family::GaussianUnitVar).unwrap(),
            DataBlock::uniform(x2, Family::Bernoulli).unwrap(),
        )
    }

    #[test]
    fn rank_zero_fit_recovers_marginal_mle() {
        let (d1, d2) = small_blocks(5, 30, 4, 3);
        let fit = fit(&d1, &d2, Ranks::new(0, 0, 0), &FitConfig::full()).unwrap();
        for j in 0..4 {
            let mean = d1.x.column(j).sum() / 30.0;
            assert_abs_diff_eq!(fit.params.mu1[j], mean, epsilon = 1e-6);
        }
        for j in 0..3 {
            let mean: f64 = d2.x.column(j).sum() / 30.0;
            // ridge shrinks the Bernoulli intercept slightly
            let logit = (mean / (1.0 - mean)).ln();
            assert!((fit.params.mu2[j] - logit).abs() < 0.05);
        }
    }

    #[test]
    fn full_mode_likelihood_is_monotone() {
        let (d1, d2) = small_blocks(9, 25, 6, 5);
        let result = fit(&d1, &d2, Ranks::new(1, 1, 1), &FitConfig::full()).unwrap();
        assert!(!result.monotonicity_fallback);
        for w in result.loglik_trace.windows(2) {
            assert!(
                w[1] >= w[0] - 1e-9 * (1.0 + w[0].abs()),
                "decrease {} -> {}",
                w[0],
                w[1]
            );
        }
        let report = model::identifiability_report(&result.params, 1e-6);
        assert!(report.pass(), "{report}");
    }

    #[test]
    fn gaussian_joint_only_matches_svd_oracle() {
        // all-Gaussian with only a joint block: the MLE is the rank-r0 SVD of
        // the column-centered concatenated data
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let (n, p1, p2) = (20, 6, 5);
        let x1 = Matrix::from_fn(n, p1, |_, _| rng.gen_range(-1.0..1.0));
        let x2 = Matrix::from_fn(n, p2, |_, _| rng.gen_range(-1.0..1.0));
        let d1 = DataBlock::uniform(x1.clone(), Family::GaussianUnitVar).unwrap();
        let d2 = DataBlock::uniform(x2.clone(), Family::GaussianUnitVar).unwrap();
        let result = fit(&d1, &d2, Ranks::new(2, 0, 0), &FitConfig::full()).unwrap();
        let mut cat = Matrix::zeros(n, p1 + p2);
        cat.view_mut((0, 0), (n, p1)).copy_from(&x1);
        cat.view_mut((0, p1), (n, p2)).copy_from(&x2);
        let (centered, means) = numkit::center_columns(&cat);
        let svd = numkit::thin_svd(&centered, 2).unwrap();
        let oracle =
            Matrix::from_element(n, 1, 1.0) * means.transpose()
                + &svd.u * Matrix::from_diagonal(&svd.d) * svd.v.transpose();
        let (t1, t2) = model::natural_parameters(&result.params).unwrap();
        let mut theta = Matrix::zeros(n, p1 + p2);
        theta.view_mut((0, 0), (n, p1)).copy_from(&t1);
        theta.view_mut((0, p1), (n, p2)).copy_from(&t2);
        assert!(
            (&theta - &oracle).norm() < 1e-4 * oracle.norm(),
            "err {}",
            (&theta - &oracle).norm()
        );
    }

    #[test]
    fn one_step_reaches_full_mode_solution_on_gaussian_data() {
        let (n, p1, p2) = (15, 5, 4);
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let x1 = Matrix::from_fn(n, p1, |_, _| rng.gen_range(-1.0..1.0));
        let x2 = Matrix::from_fn(n, p2, |_, _| rng.gen_range(-1.0..1.0));
        let d1 = DataBlock::uniform(x1, Family::GaussianUnitVar).unwrap();
        let d2 = DataBlock::uniform(x2, Family::GaussianUnitVar).unwrap();
        let ranks = Ranks::new(1, 1, 1);
        let full = fit(&d1, &d2, ranks, &FitConfig::full()).unwrap();
        let one = fit(&d1, &d2, ranks, &FitConfig::one_step()).unwrap();
        let (f1, f2) = model::natural_parameters(&full.params).unwrap();
        let (o1, o2) = model::natural_parameters(&one.params).unwrap();
        assert!((f1 - o1).norm() < 1e-4, "block1 mismatch");
        assert!((f2 - o2).norm() < 1e-4, "block2 mismatch");
    }

    #[test]
    fn quantile_zero_sparse_svd_matches_plain() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let u = Matrix::from_fn(20, 2, |_, _| rng.gen_range(-1.0..1.0));
        let v = Matrix::from_fn(9, 2, |_, _| rng.gen_range(-1.0..1.0));
        let jc = {
            let raw = &u * v.transpose();
            numkit::center_columns(&raw).0
        };
        let (su, sv1, sv2) =
            sparse_joint_svd(&jc, 2, 5, SparsityRule::QuantileFraction(0.0)).unwrap();
        let (pu, pv1, pv2) = model::plain_joint_svd(&jc, 2, 5).unwrap();
        let rec_s = {
            let mut v = Matrix::zeros(9, 2);
            v.view_mut((0, 0), (5, 2)).copy_from(&sv1);
            v.view_mut((5, 0), (4, 2)).copy_from(&sv2);
            &su * v.transpose()
        };
        let rec_p = {
            let mut v = Matrix::zeros(9, 2);
            v.view_mut((0, 0), (5, 2)).copy_from(&pv1);
            v.view_mut((5, 0), (4, 2)).copy_from(&pv2);
            &pu * v.transpose()
        };
        assert!((rec_s - rec_p).norm() < 1e-8);
    }

    #[test]
    fn sparse_svd_recovers_row_support() {
        let mut rng = ChaCha8Rng::seed_from_u64(29);
        let n = 80;
        let p = 40;
        // only rows 0..6 of the loadings are active
        let mut v = Matrix::zeros(p, 2);
        for i in 0..6 {
            for c in 0..2 {
                v[(i, c)] = rng.gen_range(0.5..1.0) * if rng.gen::<bool>() { 1.0 } else { -1.0 };
            }
        }
        let v = numkit::gram_schmidt(&v);
        let u = Matrix::from_fn(n, 2, |_, _| rng.gen_range(-1.0..1.0)) * 8.0;
        let noise = Matrix::from_fn(n, p, |_, _| rng.gen_range(-0.05..0.05));
        let jc = numkit::center_columns(&(&u * v.transpose() + noise)).0;
        let (_u0, v1, v2) = sparse_joint_svd(&jc, 2, p / 2, SparsityRule::Asymptotic).unwrap();
        for i in 6..p / 2 {
            assert!(v1.row(i).norm() < 1e-8, "row {i} not zeroed");
        }
        for i in 0..p / 2 {
            assert!(v2.row(i).norm() < 1e-8);
        }
        // active rows survive
        let active: f64 = (0..6).map(|i| v1.row(i).norm()).sum();
        assert!(active > 0.5);
    }

    #[test]
    fn sparse_annihilation_is_reported() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        // pure noise: the asymptotic threshold wipes out every loading
        let jc = numkit::center_columns(&Matrix::from_fn(30, 10, |_, _| {
            rng.gen_range(-1.0..1.0)
        }))
        .0;
        let res = sparse_joint_svd(&jc, 2, 5, SparsityRule::QuantileFraction(1.0));
        assert!(matches!(res, Err(GassoError::ComponentAnnihilated(_))));
    }

    #[test]
    fn initialize_is_finite_and_identifiable() {
        let (d1, d2) = small_blocks(41, 30, 8, 6);
        let params = initialize(&d1, &d2, Ranks::new(2, 1, 1), None, None).unwrap();
        assert!(model::identifiability_report(&params, 1e-6).pass());
        let (t1, t2) = model::natural_parameters(&params).unwrap();
        assert!(t1.iter().chain(t2.iter()).all(|v| v.is_finite()));
    }

    #[test]
    fn masked_fit_ignores_held_out_entries() {
        let (d1, d2) = small_blocks(47, 30, 6, 5);
        let mut rng = ChaCha8Rng::seed_from_u64(48);
        let mask1 = Mask::from_fn(30, 6, |_, _| rng.gen::<f64>() > 0.15);
        let mask2 = Mask::from_fn(30, 5, |_, _| rng.gen::<f64>() > 0.15);
        let cfg = FitConfig::one_step();
        let res = fit_masked(&d1, &d2, Ranks::new(1, 1, 1), &cfg, Some(&mask1), Some(&mask2))
            .unwrap();
        let (t1, t2) = model::natural_parameters(&res.params).unwrap();
        assert!(t1.iter().chain(t2.iter()).all(|v| v.is_finite()));
        // corrupting masked entries leaves the fit unchanged
        let mut d1b = d1.clone();
        for i in 0..30 {
            for j in 0..6 {
                if !mask1[(i, j)] {
                    d1b.x[(i, j)] = 99.0;
                }
            }
        }
        let res2 =
            fit_masked(&d1b, &d2, Ranks::new(1, 1, 1), &cfg, Some(&mask1), Some(&mask2)).unwrap();
        let (s1, _s2) = model::natural_parameters(&res2.params).unwrap();
        assert!((s1 - t1).norm() < 1e-8);
    }
}
