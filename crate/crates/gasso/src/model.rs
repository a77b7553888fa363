//! Model parameters, likelihood, and the identifiability-restoring
//! normalization.
//!
//! The natural-parameter matrices of the two blocks decompose as
//! `Θ_k = 1μ_kᵀ + U₀V_kᵀ + U_kA_kᵀ`: an intercept, a joint structure shared
//! through the common score matrix U₀, and a block-specific individual
//! structure. The decomposition is unique (up to column signs) under the
//! conditions checked by [`identifiability_report`].

use crate::error::{GassoError, Result};
use crate::expfam::{self, Family};
use crate::numkit::{self, Matrix, Vector};

/// Observation matrix plus the per-column family map.
#[derive(Debug, Clone)]
pub struct DataBlock {
    pub x: Matrix,
    pub families: Vec<Family>,
}

impl DataBlock {
    /// Build a block, validating every entry against its column's support.
    pub fn new(x: Matrix, families: Vec<Family>) -> Result<DataBlock> {
        if families.len() != x.ncols() {
            return Err(GassoError::Dimension(format!(
                "family vector length {} != column count {}",
                families.len(),
                x.ncols()
            )));
        }
        for j in 0..x.ncols() {
            for i in 0..x.nrows() {
                if !families[j].in_support(x[(i, j)]) {
                    return Err(GassoError::Support {
                        row: i,
                        column: j,
                        value: x[(i, j)],
                        family: families[j].name().into(),
                    });
                }
            }
        }
        Ok(DataBlock { x, families })
    }

    /// All columns share one family.
    pub fn uniform(x: Matrix, family: Family) -> Result<DataBlock> {
        let p = x.ncols();
        DataBlock::new(x, vec![family; p])
    }

    pub fn nrows(&self) -> usize {
        self.x.nrows()
    }

    pub fn ncols(&self) -> usize {
        self.x.ncols()
    }
}

/// Joint and individual ranks (r₀, r₁, r₂).
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct Ranks {
    pub r0: usize,
    pub r1: usize,
    pub r2: usize,
}

impl Ranks {
    pub fn new(r0: usize, r1: usize, r2: usize) -> Ranks {
        Ranks { r0, r1, r2 }
    }

    pub fn validate(&self, n: usize, p1: usize, p2: usize) -> Result<()> {
        if self.r0 > n.min(p1).min(p2)
            || self.r1 > n.min(p1)
            || self.r2 > n.min(p2)
            || self.r0 + self.r1 + self.r2 + 1 > n
        {
            return Err(GassoError::RankOutOfRange {
                requested: self.r0 + self.r1 + self.r2,
                limit: n.saturating_sub(1),
            });
        }
        Ok(())
    }
}

/// The full parameter set {μ₁, μ₂, U₀, U₁, U₂, V₁, V₂, A₁, A₂}.
#[derive(Debug, Clone, PartialEq)]
pub struct GasParams {
    pub mu1: Vector,
    pub mu2: Vector,
    pub u0: Matrix,
    pub u1: Matrix,
    pub u2: Matrix,
    pub v1: Matrix,
    pub v2: Matrix,
    pub a1: Matrix,
    pub a2: Matrix,
}

impl GasParams {
    pub fn zeros(n: usize, p1: usize, p2: usize, ranks: Ranks) -> GasParams {
        GasParams {
            mu1: Vector::zeros(p1),
            mu2: Vector::zeros(p2),
            u0: Matrix::zeros(n, ranks.r0),
            u1: Matrix::zeros(n, ranks.r1),
            u2: Matrix::zeros(n, ranks.r2),
            v1: Matrix::zeros(p1, ranks.r0),
            v2: Matrix::zeros(p2, ranks.r0),
            a1: Matrix::zeros(p1, ranks.r1),
            a2: Matrix::zeros(p2, ranks.r2),
        }
    }

    pub fn n(&self) -> usize {
        self.u0.nrows()
    }

    pub fn p1(&self) -> usize {
        self.mu1.len()
    }

    pub fn p2(&self) -> usize {
        self.mu2.len()
    }

    pub fn ranks(&self) -> Ranks {
        Ranks::new(self.u0.ncols(), self.u1.ncols(), self.u2.ncols())
    }

    pub fn check_dims(&self) -> Result<()> {
        let n = self.n();
        let ok = self.u1.nrows() == n
            && self.u2.nrows() == n
            && self.v1.nrows() == self.mu1.len()
            && self.v2.nrows() == self.mu2.len()
            && self.a1.nrows() == self.mu1.len()
            && self.a2.nrows() == self.mu2.len()
            && self.v1.ncols() == self.u0.ncols()
            && self.v2.ncols() == self.u0.ncols()
            && self.a1.ncols() == self.u1.ncols()
            && self.a2.ncols() == self.u2.ncols();
        if ok {
            Ok(())
        } else {
            Err(GassoError::Dimension("inconsistent GasParams blocks".into()))
        }
    }
}

/// Assemble `Θ_k = 1μ_kᵀ + U₀V_kᵀ + U_kA_kᵀ`.
pub fn natural_parameters(params: &GasParams) -> Result<(Matrix, Matrix)> {
    params.check_dims()?;
    let n = params.n();
    let ones = Matrix::from_element(n, 1, 1.0);
    let theta1 =
        &ones * params.mu1.transpose() + &params.u0 * params.v1.transpose() + &params.u1 * params.a1.transpose();
    let theta2 =
        &ones * params.mu2.transpose() + &params.u0 * params.v2.transpose() + &params.u2 * params.a2.transpose();
    Ok((theta1, theta2))
}

/// Joint log-likelihood of both blocks under the assembled natural
/// parameters.
pub fn joint_log_likelihood(params: &GasParams, d1: &DataBlock, d2: &DataBlock) -> Result<f64> {
    if d1.nrows() != d2.nrows() || d1.nrows() != params.n() {
        return Err(GassoError::Dimension("blocks not row-aligned".into()));
    }
    let (theta1, theta2) = natural_parameters(params)?;
    let mut total = 0.0;
    for (block, theta) in [(d1, &theta1), (d2, &theta2)] {
        for j in 0..block.ncols() {
            let fam = block.families[j];
            for i in 0..block.nrows() {
                total += expfam::log_density(fam, block.x[(i, j)], theta[(i, j)])?;
            }
        }
    }
    Ok(total)
}

/// Joint-block SVD used inside [`normalize`]: maps the centered joint
/// structure to `(U₀, V₁, V₂)`. The sparse fitter swaps in a thresholded
/// variant.
pub type JointSvdFn<'a> = dyn Fn(&Matrix, usize, usize) -> Result<(Matrix, Matrix, Matrix)> + 'a;

/// Plain joint SVD: scores absorb the singular values.
pub fn plain_joint_svd(jc: &Matrix, r0: usize, split: usize) -> Result<(Matrix, Matrix, Matrix)> {
    let svd = numkit::thin_svd(jc, r0)?;
    let u0 = &svd.u * Matrix::from_diagonal(&svd.d);
    let v1 = svd.v.rows(0, split).clone_owned();
    let v2 = svd.v.rows(split, jc.ncols() - split).clone_owned();
    Ok((u0, v1, v2))
}

#[derive(Debug, Clone)]
pub struct NormalizeOutcome {
    pub params: GasParams,
    /// Components whose singular value collapsed to ~0 during
    /// re-normalization, as (block label, component index).
    pub collapsed: Vec<(String, usize)>,
}

/// Restore the identifiability conditions without changing Θ₁, Θ₂:
/// project individual scores off (1, U₀), re-SVD each individual structure
/// (scores absorb singular values), fold the displaced remainder into the
/// joint block, re-center it into the intercepts, and re-SVD the centered
/// joint block.
pub fn normalize(params: &GasParams) -> Result<NormalizeOutcome> {
    normalize_with(params, &|jc, r0, split| plain_joint_svd(jc, r0, split))
}

pub fn normalize_with(params: &GasParams, joint_svd: &JointSvdFn) -> Result<NormalizeOutcome> {
    params.check_dims()?;
    let n = params.n();
    let ranks = params.ranks();
    let ones = Matrix::from_element(n, 1, 1.0);
    let mut collapsed = Vec::new();

    // basis of (1, U0) to project the individual scores against
    let mut one_u0 = Matrix::zeros(n, 1 + ranks.r0);
    one_u0.set_column(0, &ones.column(0));
    for j in 0..ranks.r0 {
        one_u0.set_column(1 + j, &params.u0.column(j));
    }

    let renorm_individual = |u: &Matrix, a: &Matrix, r: usize, label: &str, collapsed: &mut Vec<(String, usize)>| -> Result<(Matrix, Matrix)> {
        if r == 0 {
            return Ok((u.clone(), a.clone()));
        }
        let u_star = numkit::project_complement(u, &one_u0);
        let structure = &u_star * a.transpose();
        let svd = numkit::thin_svd(&structure, r)?;
        let dmax = svd.d[0];
        for j in 0..r {
            if svd.d[j] <= 1e-12 * dmax.max(1e-300) {
                collapsed.push((label.to_string(), j));
            }
        }
        let u_new = &svd.u * Matrix::from_diagonal(&svd.d);
        Ok((u_new, svd.v))
    };

    let (u1, a1) = renorm_individual(&params.u1, &params.a1, ranks.r1, "individual-1", &mut collapsed)?;
    let (u2, a2) = renorm_individual(&params.u2, &params.a2, ranks.r2, "individual-2", &mut collapsed)?;

    // displaced individual remainder plus the old joint structure
    let j1 = &ones * params.mu1.transpose()
        + &params.u0 * params.v1.transpose()
        + &params.u1 * params.a1.transpose()
        - &u1 * a1.transpose();
    let j2 = &ones * params.mu2.transpose()
        + &params.u0 * params.v2.transpose()
        + &params.u2 * params.a2.transpose()
        - &u2 * a2.transpose();
    let p1 = params.p1();
    let p2 = params.p2();
    let mut joint = Matrix::zeros(n, p1 + p2);
    joint.view_mut((0, 0), (n, p1)).copy_from(&j1);
    joint.view_mut((0, p1), (n, p2)).copy_from(&j2);

    let (jc, means) = numkit::center_columns(&joint);
    let mu1 = means.rows(0, p1).clone_owned();
    let mu2 = means.rows(p1, p2).clone_owned();

    let (u0, v1, v2) = if ranks.r0 > 0 {
        let (u0, v1, v2) = joint_svd(&jc, ranks.r0, p1)?;
        for j in 0..ranks.r0 {
            let nrm = u0.column(j).norm();
            if nrm <= 1e-12 * u0.column(0).norm().max(1e-300) {
                collapsed.push(("joint".into(), j));
            }
        }
        (u0, v1, v2)
    } else {
        (
            Matrix::zeros(n, 0),
            Matrix::zeros(p1, 0),
            Matrix::zeros(p2, 0),
        )
    };

    Ok(NormalizeOutcome {
        params: GasParams {
            mu1,
            mu2,
            u0,
            u1,
            u2,
            v1,
            v2,
            a1,
            a2,
        },
        collapsed,
    })
}

/// One identifiability condition with its worst violation magnitude.
#[derive(Debug, Clone)]
pub struct ConditionCheck {
    pub name: &'static str,
    pub violation: f64,
}

#[derive(Debug, Clone)]
pub struct IdentifiabilityReport {
    pub checks: Vec<ConditionCheck>,
    pub tol: f64,
}

impl IdentifiabilityReport {
    pub fn pass(&self) -> bool {
        self.checks.iter().all(|c| c.violation <= self.tol)
    }

    pub fn max_violation(&self) -> f64 {
        self.checks.iter().map(|c| c.violation).fold(0.0, f64::max)
    }
}

impl std::fmt::Display for IdentifiabilityReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        for c in &self.checks {
            writeln!(
                f,
                "{:<32} violation {:>12.3e}  {}",
                c.name,
                c.violation,
                if c.violation <= self.tol { "pass" } else { "FAIL" }
            )?;
        }
        Ok(())
    }
}

fn max_abs(m: &Matrix) -> f64 {
    m.iter().fold(0.0f64, |acc, &x| acc.max(x.abs()))
}

fn off_diag_max(m: &Matrix) -> f64 {
    let mut worst = 0.0f64;
    for i in 0..m.nrows() {
        for j in 0..m.ncols() {
            if i != j {
                worst = worst.max(m[(i, j)].abs());
            }
        }
    }
    worst
}

fn nonincreasing_violation(diag: &[f64]) -> f64 {
    diag.windows(2)
        .map(|w| (w[1] - w[0]).max(0.0))
        .fold(0.0, f64::max)
}

/// Evaluate every identifiability condition and report per-condition
/// max-violation magnitudes.
pub fn identifiability_report(params: &GasParams, tol: f64) -> IdentifiabilityReport {
    let mut checks = Vec::new();
    let col_sums = |m: &Matrix| -> f64 {
        (0..m.ncols())
            .map(|j| m.column(j).sum().abs())
            .fold(0.0, f64::max)
    };
    checks.push(ConditionCheck {
        name: "scores column-centered",
        violation: col_sums(&params.u0)
            .max(col_sums(&params.u1))
            .max(col_sums(&params.u2)),
    });
    checks.push(ConditionCheck {
        name: "U0 orthogonal to U1, U2",
        violation: max_abs(&(params.u0.transpose() * &params.u1))
            .max(max_abs(&(params.u0.transpose() * &params.u2))),
    });
    let gram_checks = |m: &Matrix| {
        let g = m.transpose() * m;
        let diag: Vec<f64> = (0..g.nrows()).map(|i| g[(i, i)]).collect();
        off_diag_max(&g).max(nonincreasing_violation(&diag))
    };
    checks.push(ConditionCheck {
        name: "score grams diagonal, nonincreasing",
        violation: gram_checks(&params.u0)
            .max(gram_checks(&params.u1))
            .max(gram_checks(&params.u2)),
    });
    let r0 = params.u0.ncols();
    let joint_gram =
        params.v1.transpose() * &params.v1 + params.v2.transpose() * &params.v2 - Matrix::identity(r0, r0);
    checks.push(ConditionCheck {
        name: "V1'V1 + V2'V2 = I",
        violation: max_abs(&joint_gram),
    });
    let orth = |m: &Matrix| {
        let r = m.ncols();
        max_abs(&(m.transpose() * m - Matrix::identity(r, r)))
    };
    checks.push(ConditionCheck {
        name: "A1'A1 = I, A2'A2 = I",
        violation: orth(&params.a1).max(orth(&params.a2)),
    });
    IdentifiabilityReport { checks, tol }
}

/// Convergence record of a model fit.
#[derive(Debug, Clone)]
pub struct FitResult {
    pub params: GasParams,
    pub loglik_trace: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    pub wall_time: f64,
    /// One-step sweeps where the likelihood decreased by more than the
    /// relative slack; surfaced rather than aborted.
    pub monotonicity_fallback: bool,
    /// Components that collapsed to zero singular value during
    /// normalization (survivable under over-specified ranks).
    pub rank_collapsed: Vec<(String, usize)>,
    /// Sub-updates that stalled on fully saturated weights.
    pub stalled_updates: usize,
}


#[cfg(test)]
mod tests {
    use super::tests_support::random_raw_params;
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::Rng;
    use rand_chacha::rand_core::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn natural_parameters_assembly() {
        let ranks = Ranks::new(1, 0, 0);
        let mut p = GasParams::zeros(4, 3, 2, ranks);
        p.mu1 = Vector::from_vec(vec![1.0, -2.0, 0.5]);
        let (t1, _t2) = natural_parameters(&p).unwrap();
        for i in 0..4 {
            assert_abs_diff_eq!(t1[(i, 0)], 1.0);
            assert_abs_diff_eq!(t1[(i, 1)], -2.0);
        }

        // rank-1 joint only
        p.mu1.fill(0.0);
        p.u0 = Matrix::from_vec(4, 1, vec![1.0, 2.0, -1.0, 0.0]);
        p.v1 = Matrix::from_vec(3, 1, vec![0.5, 0.0, -0.5]);
        let (t1, _) = natural_parameters(&p).unwrap();
        assert_abs_diff_eq!(t1[(1, 0)], 1.0);
        assert_abs_diff_eq!(t1[(2, 2)], 0.5);
    }

    #[test]
    fn natural_parameters_match_triple_loop() {
        let ranks = Ranks::new(2, 2, 1);
        let params = random_raw_params(3, 6, 4, 3, ranks);
        let (t1, t2) = natural_parameters(&params).unwrap();
        for (theta, mu, v, u_ind, a) in [
            (&t1, &params.mu1, &params.v1, &params.u1, &params.a1),
            (&t2, &params.mu2, &params.v2, &params.u2, &params.a2),
        ] {
            for i in 0..6 {
                for j in 0..mu.len() {
                    let mut expect = mu[j];
                    for r in 0..params.u0.ncols() {
                        expect += params.u0[(i, r)] * v[(j, r)];
                    }
                    for r in 0..u_ind.ncols() {
                        expect += u_ind[(i, r)] * a[(j, r)];
                    }
                    assert_abs_diff_eq!(theta[(i, j)], expect, epsilon = 1e-12);
                }
            }
        }
    }

    #[test]
    fn log_likelihood_examples() {
        let ranks = Ranks::new(0, 0, 0);
        let params = GasParams::zeros(1, 1, 1, ranks);
        let d1 = DataBlock::uniform(Matrix::from_element(1, 1, 1.0), Family::Bernoulli).unwrap();
        let d2 =
            DataBlock::uniform(Matrix::from_element(1, 1, 0.0), Family::GaussianUnitVar).unwrap();
        let ll = joint_log_likelihood(&params, &d1, &d2).unwrap();
        assert_abs_diff_eq!(
            ll,
            -std::f64::consts::LN_2 - 0.5 * (2.0 * std::f64::consts::PI).ln(),
            epsilon = 1e-12
        );
    }

    #[test]
    fn log_likelihood_additivity_and_scalar_loop() {
        let ranks = Ranks::new(1, 1, 1);
        let params = random_raw_params(5, 5, 3, 2, ranks);
        let (t1, t2) = natural_parameters(&params).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let x1 = Matrix::from_fn(5, 3, |i, j| t1[(i, j)] + rng.gen_range(-1.0..1.0));
        let x2 = Matrix::from_fn(5, 2, |i, j| {
            if t2[(i, j)] > 0.0 {
                1.0
            } else {
                0.0
            }
        });
        let d1 = DataBlock::uniform(x1.clone(), Family::GaussianUnitVar).unwrap();
        let d2 = DataBlock::uniform(x2.clone(), Family::Bernoulli).unwrap();
        let ll = joint_log_likelihood(&params, &d1, &d2).unwrap();
        let mut oracle = 0.0;
        for i in 0..5 {
            for j in 0..3 {
                oracle +=
                    expfam::log_density(Family::GaussianUnitVar, x1[(i, j)], t1[(i, j)]).unwrap();
            }
            for j in 0..2 {
                oracle += expfam::log_density(Family::Bernoulli, x2[(i, j)], t2[(i, j)]).unwrap();
            }
        }
        assert_abs_diff_eq!(ll, oracle, epsilon = 1e-10);
    }

    #[test]
    fn normalize_restores_conditions_and_preserves_theta() {
        for seed in 0..10u64 {
            let ranks = Ranks::new(2, 2, 1);
            let params = random_raw_params(seed, 12, 7, 6, ranks);
            let (t1, t2) = natural_parameters(&params).unwrap();
            let norm = normalize(&params).unwrap();
            let report = identifiability_report(&norm.params, 1e-8);
            assert!(report.pass(), "seed {seed}:\n{report}");
            let (n1, n2) = natural_parameters(&norm.params).unwrap();
            assert!((n1 - &t1).norm() < 1e-8, "seed {seed}");
            assert!((n2 - &t2).norm() < 1e-8, "seed {seed}");
        }
    }

    #[test]
    fn normalize_idempotent_up_to_sign() {
        let ranks = Ranks::new(2, 1, 2);
        let params = random_raw_params(21, 10, 5, 6, ranks);
        let once = normalize(&params).unwrap().params;
        let twice = normalize(&once).unwrap().params;
        let (a1, a2) = natural_parameters(&once).unwrap();
        let (b1, b2) = natural_parameters(&twice).unwrap();
        assert!((a1 - b1).norm() < 1e-10);
        assert!((a2 - b2).norm() < 1e-10);
        // column-wise equality up to sign
        for j in 0..once.u0.ncols() {
            let same = (once.u0.column(j) - twice.u0.column(j)).norm();
            let flip = (once.u0.column(j) + twice.u0.column(j)).norm();
            assert!(same.min(flip) < 1e-8);
        }
    }

    #[test]
    fn normalize_preserves_likelihood() {
        let ranks = Ranks::new(1, 1, 1);
        let params = random_raw_params(31, 8, 4, 3, ranks);
        let (t1, _t2) = natural_parameters(&params).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let x1 = Matrix::from_fn(8, 4, |i, j| t1[(i, j)] + rng.gen_range(-0.5..0.5));
        let x2 = Matrix::from_fn(8, 3, |_, _| rng.gen_range(0..4) as f64);
        let d1 = DataBlock::uniform(x1, Family::GaussianUnitVar).unwrap();
        let d2 = DataBlock::uniform(x2, Family::Poisson).unwrap();
        let before = joint_log_likelihood(&params, &d1, &d2).unwrap();
        let after = joint_log_likelihood(&normalize(&params).unwrap().params, &d1, &d2).unwrap();
        assert!((before - after).abs() < 1e-8 * (1.0 + before.abs()));
    }

    #[test]
    fn uniqueness_at_structure_level() {
        // rotate scores/loadings of one normalized set; both map back to the
        // same joint and individual structures
        let ranks = Ranks::new(2, 2, 2);
        let base = normalize(&random_raw_params(45, 14, 8, 7, ranks))
            .unwrap()
            .params;
        let mut rotated = base.clone();
        // invertible mixing of the joint columns, compensated in loadings
        let r = Matrix::from_vec(2, 2, vec![0.8, -0.6, 0.6, 0.8]);
        let r_inv = r.clone().try_inverse().unwrap();
        rotated.u0 = &base.u0 * &r;
        rotated.v1 = &base.v1 * r_inv.transpose();
        rotated.v2 = &base.v2 * r_inv.transpose();
        let na = normalize(&base).unwrap().params;
        let nb = normalize(&rotated).unwrap().params;
        let joint = |p: &GasParams| (&p.u0 * p.v1.transpose(), &p.u0 * p.v2.transpose());
        let (ja1, ja2) = joint(&na);
        let (jb1, jb2) = joint(&nb);
        assert!((ja1 - jb1).norm() < 1e-6);
        assert!((ja2 - jb2).norm() < 1e-6);
        let ind = |p: &GasParams| (&p.u1 * p.a1.transpose(), &p.u2 * p.a2.transpose());
        let (ia1, ia2) = ind(&na);
        let (ib1, ib2) = ind(&nb);
        assert!((ia1 - ib1).norm() < 1e-6);
        assert!((ia2 - ib2).norm() < 1e-6);
    }

    #[test]
    fn report_flags_violations() {
        let ranks = Ranks::new(1, 0, 0);
        let norm = normalize(&random_raw_params(50, 10, 4, 4, ranks)).unwrap();
        assert!(identifiability_report(&norm.params, 1e-8).pass());

        let mut bad = norm.params.clone();
        for i in 0..bad.u0.nrows() {
            bad.u0[(i, 0)] += 0.1;
        }
        let report = identifiability_report(&bad, 1e-8);
        assert!(!report.pass());
        let centering = &report.checks[0];
        assert_abs_diff_eq!(centering.violation, 0.1 * 10.0, epsilon = 1e-8);

        let mut bad2 = norm.params.clone();
        bad2.v1 *= 2.0f64.sqrt();
        bad2.v2 *= 2.0f64.sqrt();
        let report = identifiability_report(&bad2, 1e-8);
        assert!(report.checks.iter().any(|c| c.name.starts_with("V1'V1") && c.violation > 0.5));
    }
}
