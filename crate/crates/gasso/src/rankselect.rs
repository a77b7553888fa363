//! Two-step rank estimation.
//!
//! Step one estimates, by entrywise N-fold cross-validation, the rank of each
//! block's centered natural-parameter matrix (r₁⋆, r₂⋆) and of the
//! concatenated blocks (r₀⋆). Step two inverts the linear relations
//! r₁⋆ = r₀+r₁, r₂⋆ = r₀+r₂, r₀⋆ = r₀+r₁+r₂ to obtain (r₀, r₁, r₂).
//! Held-out entries are scored by the mean squared Pearson residual, with
//! the median across folds as the overall score.

use crate::error::{GassoError, Result};
use crate::expfam::{self, Family};
use crate::fitter::{self, FitConfig, Mask};
use crate::model::{DataBlock, Ranks};
use crate::numkit::{self, Matrix, Vector};
use rand::seq::SliceRandom;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

/// Entrywise N-fold partition; fold `l` withholds the entries with
/// `fold_of == l`, and the retained data keeps every row and column
/// nonempty.
#[derive(Debug, Clone)]
pub struct CvPlan {
    pub folds: usize,
    pub fold_of: nalgebra::DMatrix<u32>,
    pub seed: u64,
}

impl CvPlan {
    /// Mask of entries observed when fold `l` is withheld.
    pub fn observed(&self, l: usize) -> Mask {
        Mask::from_fn(self.fold_of.nrows(), self.fold_of.ncols(), |i, j| {
            self.fold_of[(i, j)] != l as u32
        })
    }

    /// Mask of entries withheld by fold `l`.
    pub fn withheld(&self, l: usize) -> Mask {
        Mask::from_fn(self.fold_of.nrows(), self.fold_of.ncols(), |i, j| {
            self.fold_of[(i, j)] == l as u32
        })
    }

    fn violations(&self) -> Vec<(usize, bool, usize)> {
        let (n, p) = (self.fold_of.nrows(), self.fold_of.ncols());
        let mut out = Vec::new();
        for l in 0..self.folds {
            for i in 0..n {
                if (0..p).all(|j| self.fold_of[(i, j)] == l as u32) {
                    out.push((l, true, i));
                }
            }
            for j in 0..p {
                if (0..n).all(|i| self.fold_of[(i, j)] == l as u32) {
                    out.push((l, false, j));
                }
            }
        }
        out
    }
}

fn deal(n: usize, p: usize, folds: usize, rng: &mut ChaCha8Rng) -> nalgebra::DMatrix<u32> {
    let mut entries: Vec<usize> = (0..n * p).collect();
    entries.shuffle(rng);
    let mut fold_of = nalgebra::DMatrix::<u32>::zeros(n, p);
    for (k, &e) in entries.iter().enumerate() {
        fold_of[(e / p, e % p)] = (k % folds) as u32;
    }
    fold_of
}

/// Random entrywise partition into `folds` blocks such that withholding any
/// one block leaves every row and column with at least one observed entry.
/// Redraws on violation, then falls back to moving single entries.
pub fn make_cv_plan(n: usize, p: usize, folds: usize, seed: u64) -> Result<CvPlan> {
    if folds < 2 || folds > n * p {
        return Err(GassoError::CvPlan(format!(
            "folds = {folds} out of range for a {n}x{p} block"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut plan = CvPlan {
        folds,
        fold_of: deal(n, p, folds, &mut rng),
        seed,
    };
    for _ in 0..20 {
        if plan.violations().is_empty() {
            return Ok(plan);
        }
        plan.fold_of = deal(n, p, folds, &mut rng);
    }
    // per-entry repair: reassign one entry of each offending line to another
    // fold, provided the donor keeps its own constraint
    for _ in 0..(4 * folds * (n + p)) {
        let violations = plan.violations();
        if violations.is_empty() {
            return Ok(plan);
        }
        let (l, is_row, idx) = violations[0];
        let mut repaired = false;
        'search: for target in 0..folds {
            if target == l {
                continue;
            }
            let span = if is_row { p } else { n };
            for k in 0..span {
                let (i, j) = if is_row { (idx, k) } else { (k, idx) };
                let old = plan.fold_of[(i, j)];
                plan.fold_of[(i, j)] = target as u32;
                // the move must not create a new violation for `target`
                if plan
                    .violations()
                    .iter()
                    .all(|&(vl, _, _)| vl != target && vl != l)
                {
                    repaired = true;
                    break 'search;
                }
                plan.fold_of[(i, j)] = old;
            }
        }
        if !repaired {
            return Err(GassoError::CvPlan(format!(
                "cannot satisfy row/column constraint for {n}x{p}, {folds} folds"
            )));
        }
    }
    if plan.violations().is_empty() {
        Ok(plan)
    } else {
        Err(GassoError::CvPlan(
            "row/column constraint unsatisfied after repair".into(),
        ))
    }
}

/// Incomplete-data single-matrix fit: Θ = 1μᵀ + UVᵀ at rank `r`, alternating
/// one-step column fits of (μ_j, v_j) and row fits of u_i with zero weight
/// on masked entries; U is re-centered into μ after every sweep.
pub fn fit_incomplete(
    x: &DataBlock,
    r: usize,
    mask: &Mask,
    cfg: &FitConfig,
) -> Result<(Vector, Matrix, Matrix)> {
    let n = x.nrows();
    let p = x.ncols();
    if mask.nrows() != n || mask.ncols() != p {
        return Err(GassoError::Dimension("mask shape".into()));
    }
    if r + 1 > n.min(p) {
        return Err(GassoError::RankOutOfRange {
            requested: r,
            limit: n.min(p) - 1,
        });
    }

    // marginal-MLE intercepts and SVD warm start on the link scale
    let mut mu = Vector::zeros(p);
    let mut z = Matrix::zeros(n, p);
    for j in 0..p {
        let fam = x.families[j];
        let observed: Vec<usize> = (0..n).filter(|&i| mask[(i, j)]).collect();
        if observed.is_empty() {
            return Err(GassoError::CvPlan(format!("column {j} fully masked")));
        }
        let eps = 1.0 / (2.0 * observed.len() as f64);
        let mean = observed.iter().map(|&i| x.x[(i, j)]).sum::<f64>() / observed.len() as f64;
        let cm = match fam {
            Family::GaussianUnitVar => mean,
            Family::Bernoulli => mean.clamp(eps, 1.0 - eps),
            Family::Poisson => mean.max(eps),
        };
        mu[j] = expfam::link(fam, cm)?;
        for &i in &observed {
            let v = x.x[(i, j)];
            let cv = match fam {
                Family::GaussianUnitVar => v,
                Family::Bernoulli => v.clamp(eps, 1.0 - eps),
                Family::Poisson => v.max(eps),
            };
            z[(i, j)] = expfam::link(fam, cv)? - mu[j];
        }
    }
    let svd = numkit::thin_svd(&z, r)?;
    let mut u = &svd.u * Matrix::from_diagonal(&svd.d);
    let mut v = svd.v;

    let observed_ll = |mu: &Vector, u: &Matrix, v: &Matrix| -> Result<f64> {
        let mut ll = 0.0;
        for j in 0..p {
            for i in 0..n {
                if !mask[(i, j)] {
                    continue;
                }
                let theta = mu[j] + u.row(i).dot(&v.row(j));
                ll += expfam::log_density(x.families[j], x.x[(i, j)], theta)?;
            }
        }
        Ok(ll)
    };

    let ones = Matrix::from_element(n, 1, 1.0);
    let mut ll = observed_ll(&mu, &u, &v)?;
    for _ in 0..cfg.max_iter {
        let zero_off = Matrix::zeros(n, p);
        let (mu_new, v_new, _s) = fitter::update_loadings(
            &x.x,
            &x.families,
            Some(mask),
            &u,
            &zero_off,
            &mu,
            &v,
            cfg,
        )?;
        mu = mu_new;
        v = v_new;
        if r > 0 {
            let offsets = &ones * mu.transpose();
            let (u_new, _s) =
                fitter::update_scores(&x.x, &x.families, Some(mask), &v, &offsets, &u, cfg)?;
            u = u_new;
            // fold the column means of U into the intercept
            let (centered, means) = numkit::center_columns(&u);
            u = centered;
            mu += &v * means;
        }
        let ll_new = observed_ll(&mu, &u, &v)?;
        if !ll_new.is_finite() {
            return Err(GassoError::NonFiniteLikelihood("incomplete fit".into()));
        }
        let done = (ll_new - ll).abs() / (1.0 + ll_new.abs()) < cfg.tol;
        ll = ll_new;
        if done {
            break;
        }
    }
    Ok((mu, u, v))
}

/// Per-candidate CV results.
#[derive(Debug, Clone)]
pub struct CvRankResult {
    pub r_star: usize,
    pub candidates: Vec<usize>,
    /// score[c][l] for candidate c, fold l; None marks a failed fit.
    pub scores: Vec<Vec<Option<f64>>>,
    /// Median across valid folds per candidate; None marks disqualification.
    pub medians: Vec<Option<f64>>,
    /// The flatness guard stepped the selection down from the raw argmin.
    pub flat_guard_applied: bool,
}

fn median(values: &mut [f64]) -> f64 {
    values.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let m = values.len();
    if m % 2 == 1 {
        values[m / 2]
    } else {
        0.5 * (values[m / 2 - 1] + values[m / 2])
    }
}

/// Cross-validated rank selection for one block (or the concatenation):
/// mean squared Pearson residual on withheld entries, median across folds,
/// argmin with smallest-rank tie-break and a 0.1% flatness guard.
pub fn cv_rank(
    x: &DataBlock,
    candidates: &[usize],
    folds: usize,
    seed: u64,
    cfg: &FitConfig,
) -> Result<CvRankResult> {
    if candidates.is_empty() {
        return Err(GassoError::Domain("no rank candidates".into()));
    }
    let n = x.nrows();
    let p = x.ncols();
    for &r in candidates {
        if r + 1 > n.min(p) {
            return Err(GassoError::RankOutOfRange {
                requested: r,
                limit: n.min(p) - 1,
            });
        }
    }
    let plan = make_cv_plan(n, p, folds, seed)?;
    let cells: Vec<(usize, usize)> = (0..candidates.len())
        .flat_map(|c| (0..folds).map(move |l| (c, l)))
        .collect();
    let scored: Vec<((usize, usize), Option<f64>)> = cells
        .into_par_iter()
        .map(|(c, l)| {
            let observed = plan.observed(l);
            let fitted = fit_incomplete(x, candidates[c], &observed, cfg);
            let score = fitted.ok().and_then(|(mu, u, v)| {
                let mut total = 0.0;
                let mut count = 0usize;
                for j in 0..p {
                    for i in 0..n {
                        if observed[(i, j)] {
                            continue;
                        }
                        let theta = mu[j] + u.row(i).dot(&v.row(j));
                        match expfam::pearson_residual(x.families[j], x.x[(i, j)], theta) {
                            Ok(res) => {
                                total += res.value * res.value;
                                count += 1;
                            }
                            Err(_) => return None,
                        }
                    }
                }
                if count == 0 || !total.is_finite() {
                    None
                } else {
                    Some(total / count as f64)
                }
            });
            ((c, l), score)
        })
        .collect();
    let mut scores = vec![vec![None; folds]; candidates.len()];
    for ((c, l), s) in scored {
        scores[c][l] = s;
    }
    let medians: Vec<Option<f64>> = scores
        .iter()
        .map(|per_fold| {
            let mut valid: Vec<f64> = per_fold.iter().flatten().copied().collect();
            if per_fold.len() - valid.len() > folds / 2 {
                None
            } else {
                Some(median(&mut valid))
            }
        })
        .collect();
    let (best_idx, best) = medians
        .iter()
        .enumerate()
        .filter_map(|(i, m)| m.map(|v| (i, v)))
        .min_by(|a, b| {
            a.1.partial_cmp(&b.1)
                .unwrap()
                .then(a.0.cmp(&b.0))
        })
        .ok_or_else(|| GassoError::Other("all rank candidates disqualified".into()))?;
    // flatness guard: prefer the smallest candidate whose score is within
    // 0.1% of the minimum
    let guard_idx = medians
        .iter()
        .enumerate()
        .find_map(|(i, m)| {
            m.and_then(|v| (v <= best * 1.001).then_some(i))
        })
        .unwrap_or(best_idx);
    Ok(CvRankResult {
        r_star: candidates[guard_idx],
        candidates: candidates.to_vec(),
        scores,
        medians,
        flat_guard_applied: guard_idx != best_idx,
    })
}

/// Invert r₁⋆ = r₀+r₁, r₂⋆ = r₀+r₂, r₀⋆ = r₀+r₁+r₂; `r0_star` is clamped
/// into [max(r₁⋆, r₂⋆), r₁⋆+r₂⋆] first.
pub fn combine_ranks(r1_star: usize, r2_star: usize, r0_star: usize) -> (Ranks, bool) {
    let lo = r1_star.max(r2_star);
    let hi = r1_star + r2_star;
    let clamped = r0_star.clamp(lo, hi);
    (
        Ranks::new(
            r1_star + r2_star - clamped,
            clamped - r2_star,
            clamped - r1_star,
        ),
        clamped != r0_star,
    )
}

#[derive(Debug, Clone)]
pub struct RankEstimate {
    pub r1_star: usize,
    pub r2_star: usize,
    pub r0_star: usize,
    pub ranks: Ranks,
    pub clamped: bool,
    pub block1: CvRankResult,
    pub block2: CvRankResult,
    pub concatenated: CvRankResult,
}

/// Full two-step procedure: per-block CV over 1..=max_rank, concatenated CV
/// over [max(r₁⋆,r₂⋆), r₁⋆+r₂⋆], then the rank system.
pub fn estimate_ranks(
    d1: &DataBlock,
    d2: &DataBlock,
    folds: usize,
    max_rank: usize,
    seed: u64,
    cfg: &FitConfig,
) -> Result<RankEstimate> {
    if max_rank < 1 {
        return Err(GassoError::Domain("max_rank must be at least 1".into()));
    }
    if d1.nrows() != d2.nrows() {
        return Err(GassoError::Dimension("blocks not row-aligned".into()));
    }
    let singles: Vec<usize> = (1..=max_rank).collect();
    let block1 = cv_rank(d1, &singles, folds, seed, cfg)?;
    let block2 = cv_rank(d2, &singles, folds, seed.wrapping_add(1), cfg)?;
    let (r1_star, r2_star) = (block1.r_star, block2.r_star);
    let n = d1.nrows();
    let p = d1.ncols() + d2.ncols();
    let mut cat = Matrix::zeros(n, p);
    cat.view_mut((0, 0), (n, d1.ncols())).copy_from(&d1.x);
    cat.view_mut((0, d1.ncols()), (n, d2.ncols())).copy_from(&d2.x);
    let fams: Vec<Family> = d1
        .families
        .iter()
        .chain(d2.families.iter())
        .copied()
        .collect();
    let concat_block = DataBlock::new(cat, fams)?;
    let upper = (r1_star + r2_star).min(n.min(p) - 1);
    let joint_candidates: Vec<usize> = (r1_star.max(r2_star)..=upper).collect();
    let concatenated = cv_rank(&concat_block, &joint_candidates, folds, seed.wrapping_add(2), cfg)?;
    let r0_star = concatenated.r_star;
    let (ranks, clamped) = combine_ranks(r1_star, r2_star, r0_star);
    Ok(RankEstimate {
        r1_star,
        r2_star,
        r0_star,
        ranks,
        clamped,
        block1,
        block2,
        concatenated,
    })
}
