//! Ground-truth generators and the benchmark harness.
//!
//! Four built-in settings pair Gaussian, Bernoulli, and Poisson blocks with
//! fixed joint/individual singular values and loading scales. A setting's
//! truth is drawn once from its seed; each replicate then samples fresh data
//! noise from its own stream, so benchmark tables are reproducible and
//! replicates can run in parallel.

use crate::association;
use crate::error::{GassoError, Result};
use crate::expfam::{self, Family};
use crate::fitter::{self, FitConfig};
use crate::model::{self, DataBlock, FitResult, GasParams, Ranks};
use crate::numkit::{self, Matrix};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::Distribution;
use rayon::prelude::*;

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum SettingId {
    S1Gg,
    S2Gb,
    S3Gp,
    S4Bp,
}

impl std::fmt::Display for SettingId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            SettingId::S1Gg => "setting-1 (gaussian-gaussian)",
            SettingId::S2Gb => "setting-2 (gaussian-bernoulli)",
            SettingId::S3Gp => "setting-3 (gaussian-poisson)",
            SettingId::S4Bp => "setting-4 (bernoulli-poisson)",
        };
        f.write_str(s)
    }
}

/// Complete description of a simulation setting.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct SettingSpec {
    pub id: SettingId,
    pub n: usize,
    pub p1: usize,
    pub p2: usize,
    pub ranks: Ranks,
    pub joint_singvals: Vec<f64>,
    pub ind1_singvals: Vec<f64>,
    pub ind2_singvals: Vec<f64>,
    /// Uniform fill bounds for the joint loadings, before orthonormalization
    /// (the relative block scales matter, the absolute scale does not).
    pub v1_range: (f64, f64),
    pub v2_range: (f64, f64),
    pub mu1_range: (f64, f64),
    pub mu2_range: (f64, f64),
    pub family1: Family,
    pub family2: Family,
    /// Quantile fraction for sparse joint loadings; None keeps them dense.
    pub sparse: Option<f64>,
    pub seed: u64,
}

impl SettingSpec {
    pub fn setting1(seed: u64) -> SettingSpec {
        SettingSpec {
            id: SettingId::S1Gg,
            n: 200,
            p1: 120,
            p2: 120,
            ranks: Ranks::new(2, 2, 2),
            joint_singvals: vec![180.0, 140.0],
            ind1_singvals: vec![120.0, 100.0],
            ind2_singvals: vec![100.0, 80.0],
            v1_range: (-0.5, 0.5),
            v2_range: (-0.5, 0.5),
            mu1_range: (-0.5, 0.5),
            mu2_range: (-0.5, 0.5),
            family1: Family::GaussianUnitVar,
            family2: Family::GaussianUnitVar,
            sparse: None,
            seed,
        }
    }

    pub fn setting2(seed: u64) -> SettingSpec {
        SettingSpec {
            id: SettingId::S2Gb,
            joint_singvals: vec![240.0, 220.0],
            ind1_singvals: vec![90.0, 80.0],
            ind2_singvals: vec![200.0, 180.0],
            v2_range: (-1.0, 1.0),
            family2: Family::Bernoulli,
            ..SettingSpec::setting1(seed)
        }
    }

    pub fn setting3(seed: u64) -> SettingSpec {
        SettingSpec {
            id: SettingId::S3Gp,
            joint_singvals: vec![80.0, 40.0],
            ind1_singvals: vec![60.0, 40.0],
            ind2_singvals: vec![20.0, 16.0],
            v2_range: (-0.25, 0.25),
            mu2_range: (2.0, 3.0),
            family2: Family::Poisson,
            ..SettingSpec::setting1(seed)
        }
    }

    pub fn setting4(seed: u64) -> SettingSpec {
        SettingSpec {
            id: SettingId::S4Bp,
            joint_singvals: vec![180.0, 140.0],
            ind1_singvals: vec![200.0, 160.0],
            ind2_singvals: vec![12.0, 10.0],
            v1_range: (-5.0, 5.0),
            v2_range: (-0.5, 0.5),
            mu2_range: (2.0, 3.0),
            family1: Family::Bernoulli,
            family2: Family::Poisson,
            ..SettingSpec::setting1(seed)
        }
    }

    /// Setting-3 variant at dimension `p` with all singular values scaled
    /// proportionally to the dimension, keeping the signal-to-noise ratio
    /// comparable.
    pub fn setting3_with_dim(p: usize, seed: u64) -> SettingSpec {
        let base = SettingSpec::setting3(seed);
        let scale = p as f64 / base.p1 as f64;
        SettingSpec {
            p1: p,
            p2: p,
            joint_singvals: base.joint_singvals.iter().map(|d| d * scale).collect(),
            ind1_singvals: base.ind1_singvals.iter().map(|d| d * scale).collect(),
            ind2_singvals: base.ind2_singvals.iter().map(|d| d * scale).collect(),
            ..base
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok_vec = |v: &[f64], r: usize| {
            v.len() == r && v.iter().all(|&d| d > 0.0) && v.windows(2).all(|w| w[0] >= w[1])
        };
        if !ok_vec(&self.joint_singvals, self.ranks.r0)
            || !ok_vec(&self.ind1_singvals, self.ranks.r1)
            || !ok_vec(&self.ind2_singvals, self.ranks.r2)
        {
            return Err(GassoError::Domain(
                "singular values must be positive, nonincreasing, and match the ranks".into(),
            ));
        }
        if let Some(f) = self.sparse {
            if !(0.0..1.0).contains(&f) {
                return Err(GassoError::Domain(
                    "sparse fraction must lie in [0, 1)".into(),
                ));
            }
        }
        self.ranks.validate(self.n, self.p1, self.p2)
    }
}

/// Copy of the setting with sparse joint loadings at the given quantile
/// fraction.
pub fn sparsify(spec: &SettingSpec, fraction: f64) -> Result<SettingSpec> {
    if !(0.0..1.0).contains(&fraction) {
        return Err(GassoError::Domain(
            "sparse fraction must lie in [0, 1)".into(),
        ));
    }
    Ok(SettingSpec {
        sparse: Some(fraction),
        ..spec.clone()
    })
}

/// Zero all entries with |value| below the fraction-quantile of |entries|,
/// then re-orthonormalize the columns. Errors if thresholding empties a
/// column.
pub fn truncate_loadings(v: &Matrix, fraction: f64) -> Result<Matrix> {
    let mut truncated = v.clone();
    if fraction > 0.0 {
        let mut mags: Vec<f64> = v.iter().map(|x| x.abs()).collect();
        mags.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let k = ((fraction * mags.len() as f64).floor() as usize).min(mags.len() - 1);
        let cut = mags[k];
        for x in truncated.iter_mut() {
            if x.abs() < cut {
                *x = 0.0;
            }
        }
    }
    for c in 0..truncated.ncols() {
        if truncated.column(c).norm() == 0.0 {
            return Err(GassoError::ComponentAnnihilated(c));
        }
    }
    let q = numkit::gram_schmidt(&truncated);
    for c in 0..q.ncols() {
        if q.column(c).norm() == 0.0 {
            return Err(GassoError::ComponentAnnihilated(c));
        }
    }
    Ok(q)
}

fn uniform_matrix(rng: &mut ChaCha8Rng, n: usize, p: usize, range: (f64, f64)) -> Matrix {
    Matrix::from_fn(n, p, |_, _| rng.gen_range(range.0..range.1))
}

/// Draw the ground-truth parameter set for a setting. Scores are uniform
/// fills orthonormalized by Gram–Schmidt across the concatenated
/// (1, U₀, U₁, U₂) system with the singular values absorbed afterwards;
/// loadings are uniform fills orthonormalized to the identifiability
/// conditions.
pub fn generate_truth(spec: &SettingSpec) -> Result<GasParams> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let Ranks { r0, r1, r2 } = spec.ranks;
    let total = r0 + r1 + r2;

    let mut system = Matrix::zeros(spec.n, 1 + total);
    for i in 0..spec.n {
        system[(i, 0)] = 1.0;
    }
    system
        .view_mut((0, 1), (spec.n, total))
        .copy_from(&uniform_matrix(&mut rng, spec.n, total, (-0.5, 0.5)));
    let ortho = numkit::gram_schmidt(&system);
    for c in 1..=total {
        if ortho.column(c).norm() == 0.0 {
            return Err(GassoError::Singular("score system collapsed".into()));
        }
    }
    let score_block = |start: usize, singvals: &[f64]| {
        let mut m = Matrix::zeros(spec.n, singvals.len());
        for (c, &d) in singvals.iter().enumerate() {
            m.set_column(c, &(ortho.column(1 + start + c) * d));
        }
        m
    };
    let u0 = score_block(0, &spec.joint_singvals);
    let u1 = score_block(r0, &spec.ind1_singvals);
    let u2 = score_block(r0 + r1, &spec.ind2_singvals);

    let mut v_stack = Matrix::zeros(spec.p1 + spec.p2, r0);
    v_stack
        .view_mut((0, 0), (spec.p1, r0))
        .copy_from(&uniform_matrix(&mut rng, spec.p1, r0, spec.v1_range));
    v_stack
        .view_mut((spec.p1, 0), (spec.p2, r0))
        .copy_from(&uniform_matrix(&mut rng, spec.p2, r0, spec.v2_range));
    let v_stack = match spec.sparse {
        Some(f) => truncate_loadings(&numkit::gram_schmidt(&v_stack), f)?,
        None => numkit::gram_schmidt(&v_stack),
    };
    let a1 = numkit::gram_schmidt(&uniform_matrix(&mut rng, spec.p1, r1, spec.v1_range));
    let a2 = numkit::gram_schmidt(&uniform_matrix(&mut rng, spec.p2, r2, spec.v2_range));

    let mu1 = uniform_matrix(&mut rng, spec.p1, 1, spec.mu1_range)
        .column(0)
        .clone_owned();
    let mu2 = uniform_matrix(&mut rng, spec.p2, 1, spec.mu2_range)
        .column(0)
        .clone_owned();

    Ok(GasParams {
        mu1,
        mu2,
        u0,
        u1,
        u2,
        v1: v_stack.rows(0, spec.p1).clone_owned(),
        v2: v_stack.rows(spec.p1, spec.p2).clone_owned(),
        a1,
        a2,
    })
}

fn sample_entry(rng: &mut ChaCha8Rng, family: Family, theta: f64) -> Result<f64> {
    let mean = expfam::mean_from_natural(family, theta)?;
    Ok(match family {
        Family::GaussianUnitVar => {
            mean + <rand_distr::StandardNormal as Distribution<f64>>::sample(
                &rand_distr::StandardNormal,
                rng,
            )
        }
        Family::Bernoulli => (rng.gen::<f64>() < mean) as u8 as f64,
        Family::Poisson => rand_distr::Poisson::new(mean)
            .map_err(|e| GassoError::Domain(format!("poisson rate: {e}")))?
            .sample(rng),
    })
}

/// Sample one replicate's data from the truth; replicate `t` uses stream
/// `t + 1` of the setting seed (stream 0 belongs to the truth).
pub fn sample_data(
    truth: &GasParams,
    spec: &SettingSpec,
    replicate: u64,
) -> Result<(DataBlock, DataBlock)> {
    let (theta1, theta2) = model::natural_parameters(truth)?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    rng.set_stream(replicate + 1);
    let mut x1 = Matrix::zeros(spec.n, spec.p1);
    for i in 0..spec.n {
        for j in 0..spec.p1 {
            x1[(i, j)] = sample_entry(&mut rng, spec.family1, theta1[(i, j)])?;
        }
    }
    let mut x2 = Matrix::zeros(spec.n, spec.p2);
    for i in 0..spec.n {
        for j in 0..spec.p2 {
            x2[(i, j)] = sample_entry(&mut rng, spec.family2, theta2[(i, j)])?;
        }
    }
    Ok((
        DataBlock::uniform(x1, spec.family1)?,
        DataBlock::uniform(x2, spec.family2)?,
    ))
}

/// Truth plus the data of replicate 0.
pub fn generate(spec: &SettingSpec) -> Result<(GasParams, DataBlock, DataBlock)> {
    let truth = generate_truth(spec)?;
    let (d1, d2) = sample_data(&truth, spec, 0)?;
    Ok((truth, d1, d2))
}

/// One replicate's evaluation against the truth.
#[derive(Debug, Clone, Copy)]
pub struct MetricsRow {
    pub norm_mu1: f64,
    pub norm_mu2: f64,
    pub norm_jnt1: f64,
    pub norm_jnt2: f64,
    pub norm_ind1: f64,
    pub norm_ind2: f64,
    pub norm_theta1: f64,
    pub norm_theta2: f64,
    pub rel_theta1: f64,
    pub rel_theta2: f64,
    pub angle_v0: f64,
    pub angle_a1: f64,
    pub angle_a2: f64,
    pub rho_hat: f64,
    pub time: f64,
}

pub const METRIC_NAMES: [&str; 15] = [
    "norm_mu1",
    "norm_mu2",
    "norm_jnt1",
    "norm_jnt2",
    "norm_ind1",
    "norm_ind2",
    "norm_theta1",
    "norm_theta2",
    "rel_theta1",
    "rel_theta2",
    "angle_v0",
    "angle_a1",
    "angle_a2",
    "rho_hat",
    "time",
];

impl MetricsRow {
    pub fn fields(&self) -> [f64; 15] {
        [
            self.norm_mu1,
            self.norm_mu2,
            self.norm_jnt1,
            self.norm_jnt2,
            self.norm_ind1,
            self.norm_ind2,
            self.norm_theta1,
            self.norm_theta2,
            self.rel_theta1,
            self.rel_theta2,
            self.angle_v0,
            self.angle_a1,
            self.angle_a2,
            self.rho_hat,
            self.time,
        ]
    }

    pub fn from_fields(f: &[f64; 15]) -> MetricsRow {
        MetricsRow {
            norm_mu1: f[0],
            norm_mu2: f[1],
            norm_jnt1: f[2],
            norm_jnt2: f[3],
            norm_ind1: f[4],
            norm_ind2: f[5],
            norm_theta1: f[6],
            norm_theta2: f[7],
            rel_theta1: f[8],
            rel_theta2: f[9],
            angle_v0: f[10],
            angle_a1: f[11],
            angle_a2: f[12],
            rho_hat: f[13],
            time: f[14],
        }
    }
}

fn stack(v1: &Matrix, v2: &Matrix) -> Matrix {
    let mut out = Matrix::zeros(v1.nrows() + v2.nrows(), v1.ncols());
    out.view_mut((0, 0), (v1.nrows(), v1.ncols())).copy_from(v1);
    out.view_mut((v1.nrows(), 0), (v2.nrows(), v2.ncols()))
        .copy_from(v2);
    out
}

fn subspace_angle(truth: &Matrix, estimate: &Matrix) -> Result<f64> {
    if truth.ncols() == 0 && estimate.ncols() == 0 {
        return Ok(0.0);
    }
    numkit::principal_angle(truth, estimate)
}

/// Frobenius losses, principal angles, and the estimated association
/// coefficient of a fit against the truth.
pub fn evaluate(fit: &FitResult, truth: &GasParams) -> Result<MetricsRow> {
    let est = &fit.params;
    let (t1, t2) = model::natural_parameters(truth)?;
    let (e1, e2) = model::natural_parameters(est)?;
    let jnt = |u: &Matrix, v: &Matrix| u * v.transpose();
    let rho_hat = association_coefficient_of(est)?;
    Ok(MetricsRow {
        norm_mu1: (&truth.mu1 - &est.mu1).norm(),
        norm_mu2: (&truth.mu2 - &est.mu2).norm(),
        norm_jnt1: (jnt(&truth.u0, &truth.v1) - jnt(&est.u0, &est.v1)).norm(),
        norm_jnt2: (jnt(&truth.u0, &truth.v2) - jnt(&est.u0, &est.v2)).norm(),
        norm_ind1: (jnt(&truth.u1, &truth.a1) - jnt(&est.u1, &est.a1)).norm(),
        norm_ind2: (jnt(&truth.u2, &truth.a2) - jnt(&est.u2, &est.a2)).norm(),
        norm_theta1: (&t1 - &e1).norm(),
        norm_theta2: (&t2 - &e2).norm(),
        rel_theta1: (&t1 - &e1).norm() / t1.norm(),
        rel_theta2: (&t2 - &e2).norm() / t2.norm(),
        angle_v0: subspace_angle(
            &stack(&truth.v1, &truth.v2),
            &stack(&est.v1, &est.v2),
        )?,
        angle_a1: subspace_angle(&truth.a1, &est.a1)?,
        angle_a2: subspace_angle(&truth.a2, &est.a2)?,
        rho_hat,
        time: fit.wall_time,
    })
}

/// Association coefficient of a parameter set's natural-parameter matrices.
pub fn association_coefficient_of(params: &GasParams) -> Result<f64> {
    let (t1, t2) = model::natural_parameters(params)?;
    association::association_coefficient(&t1, &t2)
}

#[derive(Debug, Clone)]
pub struct ModeReport {
    pub label: String,
    pub metrics: Vec<MetricsRow>,
    pub failures: usize,
    pub median: MetricsRow,
    pub mad: MetricsRow,
}

#[derive(Debug, Clone)]
pub struct BenchmarkReport {
    pub setting: SettingId,
    pub replicates: usize,
    pub modes: Vec<ModeReport>,
}

fn fieldwise_median_mad(rows: &[MetricsRow]) -> (MetricsRow, MetricsRow) {
    let mut med = [0.0f64; 15];
    let mut mad = [0.0f64; 15];
    for k in 0..15 {
        let mut vals: Vec<f64> = rows.iter().map(|r| r.fields()[k]).collect();
        vals.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let m = vals.len();
        let center = if m % 2 == 1 {
            vals[m / 2]
        } else {
            0.5 * (vals[m / 2 - 1] + vals[m / 2])
        };
        med[k] = center;
        let mut dev: Vec<f64> = vals.iter().map(|v| (v - center).abs()).collect();
        dev.sort_by(|a, b| a.partial_cmp(b).unwrap());
        mad[k] = if m % 2 == 1 {
            dev[m / 2]
        } else {
            0.5 * (dev[m / 2 - 1] + dev[m / 2])
        };
    }
    (MetricsRow::from_fields(&med), MetricsRow::from_fields(&mad))
}

/// Run every mode on `replicates` datasets drawn around one fixed truth;
/// failures are counted and excluded from the medians. `rank_override`
/// fits at deliberately misspecified ranks.
pub fn run_benchmark(
    spec: &SettingSpec,
    replicates: usize,
    modes: &[(String, FitConfig)],
    rank_override: Option<Ranks>,
) -> Result<BenchmarkReport> {
    if replicates == 0 || modes.is_empty() {
        return Err(GassoError::Domain(
            "need at least one replicate and one mode".into(),
        ));
    }
    let truth = generate_truth(spec)?;
    let fit_ranks = rank_override.unwrap_or(spec.ranks);
    let per_mode: Vec<Vec<Option<MetricsRow>>> = modes
        .iter()
        .map(|(_, cfg)| {
            (0..replicates)
                .into_par_iter()
                .map(|t| {
                    let row = (|| -> Result<MetricsRow> {
                        let (d1, d2) = sample_data(&truth, spec, t as u64)?;
                        let fit = fitter::fit(&d1, &d2, fit_ranks, cfg)?;
                        evaluate(&fit, &truth)
                    })();
                    row.ok()
                })
                .collect()
        })
        .collect();
    let mut reports = Vec::new();
    for ((label, _), rows) in modes.iter().zip(per_mode) {
        let metrics: Vec<MetricsRow> = rows.iter().flatten().copied().collect();
        let failures = replicates - metrics.len();
        if metrics.is_empty() {
            return Err(GassoError::Other(format!(
                "all {replicates} replicates failed for mode {label}"
            )));
        }
        let (median, mad) = fieldwise_median_mad(&metrics);
        reports.push(ModeReport {
            label: label.clone(),
            metrics,
            failures,
            median,
            mad,
        });
    }
    Ok(BenchmarkReport {
        setting: spec.id,
        replicates,
        modes: reports,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn small_spec(seed: u64) -> SettingSpec {
        SettingSpec {
            n: 40,
            p1: 15,
            p2: 12,
            joint_singvals: vec![40.0, 30.0],
            ind1_singvals: vec![25.0, 20.0],
            ind2_singvals: vec![22.0, 18.0],
            ..SettingSpec::setting1(seed)
        }
    }

    #[test]
    fn presets_encode_published_parameters() {
        let s1 = SettingSpec::setting1(0);
        assert_eq!((s1.n, s1.p1, s1.p2), (200, 120, 120));
        assert_eq!(s1.ranks, Ranks::new(2, 2, 2));
        assert_eq!(s1.joint_singvals, vec![180.0, 140.0]);
        assert_eq!(s1.ind1_singvals, vec![120.0, 100.0]);
        assert_eq!(s1.ind2_singvals, vec![100.0, 80.0]);
        let s2 = SettingSpec::setting2(0);
        assert_eq!(s2.joint_singvals, vec![240.0, 220.0]);
        assert_eq!(s2.ind2_singvals, vec![200.0, 180.0]);
        assert_eq!(s2.v2_range, (-1.0, 1.0));
        assert_eq!(s2.family2, Family::Bernoulli);
        let s3 = SettingSpec::setting3(0);
        assert_eq!(s3.joint_singvals, vec![80.0, 40.0]);
        assert_eq!(s3.v2_range, (-0.25, 0.25));
        assert_eq!(s3.mu2_range, (2.0, 3.0));
        let s4 = SettingSpec::setting4(0);
        assert_eq!(s4.v1_range, (-5.0, 5.0));
        assert_eq!(s4.ind2_singvals, vec![12.0, 10.0]);
        assert_eq!(s4.family1, Family::Bernoulli);
        assert_eq!(s4.family2, Family::Poisson);
        let hd = SettingSpec::setting3_with_dim(300, 0);
        assert_eq!(hd.p1, 300);
        assert_eq!(hd.joint_singvals, vec![200.0, 100.0]);
    }

    #[test]
    fn truth_is_identifiable_and_deterministic() {
        for spec in [small_spec(3), SettingSpec::setting3(3)] {
            let truth = generate_truth(&spec).unwrap();
            let report = model::identifiability_report(&truth, 1e-8);
            assert!(report.pass(), "{}:\n{report}", spec.id);
            // singular values land in the score norms
            for (c, &d) in spec.joint_singvals.iter().enumerate() {
                assert_abs_diff_eq!(truth.u0.column(c).norm(), d, epsilon = 1e-8);
            }
        }
        let a = generate(&small_spec(5)).unwrap();
        let b = generate(&small_spec(5)).unwrap();
        assert_eq!(a.1.x, b.1.x);
        assert_eq!(a.2.x, b.2.x);
        let c = generate(&small_spec(6)).unwrap();
        assert_ne!(a.1.x, c.1.x);
    }

    #[test]
    fn replicates_share_truth_but_not_noise() {
        let spec = small_spec(9);
        let truth = generate_truth(&spec).unwrap();
        let (d1a, _) = sample_data(&truth, &spec, 0).unwrap();
        let (d1b, _) = sample_data(&truth, &spec, 1).unwrap();
        assert_ne!(d1a.x, d1b.x);
        let (d1a2, _) = sample_data(&truth, &spec, 0).unwrap();
        assert_eq!(d1a.x, d1a2.x);
    }

    #[test]
    fn setting3_block2_is_valid_poisson() {
        let spec = SettingSpec::setting3(11);
        let truth = generate_truth(&spec).unwrap();
        // intercepts drawn from Unif(2,3)
        assert!(truth.mu2.iter().all(|&m| (2.0..3.0).contains(&m)));
        let (_t1, t2) = model::natural_parameters(&truth).unwrap();
        assert!(t2.iter().all(|&t| t.exp() > 0.0));
        let (_d1, d2) = sample_data(&truth, &spec, 0).unwrap();
        assert!(d2.x.iter().all(|&x| x >= 0.0 && x.fract() == 0.0));
    }

    #[test]
    fn sparsify_thresholds_and_renormalizes() {
        let spec = small_spec(13);
        let dense = generate_truth(&spec).unwrap();
        let sparse_spec = sparsify(&spec, 0.4).unwrap();
        let sparse = generate_truth(&sparse_spec).unwrap();
        let v_dense = stack(&dense.v1, &dense.v2);
        let v_sparse = stack(&sparse.v1, &sparse.v2);
        // fraction 0 leaves the loadings unchanged
        let same = generate_truth(&sparsify(&spec, 0.0).unwrap()).unwrap();
        assert!((stack(&same.v1, &same.v2) - &v_dense).norm() < 1e-12);
        // thresholding produced real zeros before re-orthonormalization;
        // count zeros surviving Gram–Schmidt as a proxy
        let zeros = v_sparse.iter().filter(|&&x| x == 0.0).count();
        assert!(zeros > 0, "no zeros in sparse loadings");
        let mut mags: Vec<f64> = v_dense.iter().map(|x| x.abs()).collect();
        mags.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let cut = mags[(0.4 * mags.len() as f64).floor() as usize];
        let pre_zeros = v_dense.iter().filter(|x| x.abs() < cut).count();
        assert!(pre_zeros as f64 >= 0.35 * (v_dense.len() as f64));
        // orthonormality restored
        let gram = v_sparse.transpose() * &v_sparse;
        assert!((gram - Matrix::identity(2, 2)).norm() < 1e-10);
        assert!(model::identifiability_report(&sparse, 1e-8).pass());
    }

    #[test]
    fn evaluate_zero_at_truth_and_rotation_invariant_angles() {
        let spec = small_spec(17);
        let truth = generate_truth(&spec).unwrap();
        let as_fit = |params: GasParams| FitResult {
            params,
            loglik_trace: vec![],
            iterations: 0,
            converged: true,
            wall_time: 0.25,
            monotonicity_fallback: false,
            rank_collapsed: vec![],
            stalled_updates: 0,
        };
        let row = evaluate(&as_fit(truth.clone()), &truth).unwrap();
        for (name, v) in METRIC_NAMES.iter().zip(row.fields()) {
            match *name {
                "rho_hat" => assert!((0.0..=1.0).contains(&v)),
                "time" => assert_abs_diff_eq!(v, 0.25),
                "angle_v0" | "angle_a1" | "angle_a2" => assert!(v < 1e-4, "{name} = {v}"),
                _ => assert!(v < 1e-8, "{name} = {v}"),
            }
        }
        // rotating the joint loadings (and compensating scores) keeps
        // angle_v0 at zero
        let mut rot = truth.clone();
        let r = Matrix::from_vec(2, 2, vec![0.6, -0.8, 0.8, 0.6]);
        rot.v1 = &truth.v1 * &r;
        rot.v2 = &truth.v2 * &r;
        rot.u0 = &truth.u0 * &r;
        let row = evaluate(&as_fit(rot), &truth).unwrap();
        assert!(row.angle_v0 < 1e-4);
        assert!(row.norm_jnt1 < 1e-8 && row.norm_jnt2 < 1e-8);
    }

    #[test]
    fn evaluate_matches_entrywise_oracle_and_sign_flips() {
        let spec = small_spec(19);
        let truth = generate_truth(&spec).unwrap();
        let other = generate_truth(&small_spec(23)).unwrap();
        let as_fit = |params: GasParams| FitResult {
            params,
            loglik_trace: vec![],
            iterations: 0,
            converged: true,
            wall_time: 0.0,
            monotonicity_fallback: false,
            rank_collapsed: vec![],
            stalled_updates: 0,
        };
        let row = evaluate(&as_fit(other.clone()), &truth).unwrap();
        // independent entrywise loss computation
        let mut sq = 0.0;
        for j in 0..spec.p1 {
            sq += (truth.mu1[j] - other.mu1[j]).powi(2);
        }
        assert_abs_diff_eq!(row.norm_mu1, sq.sqrt(), epsilon = 1e-10);
        let mut jnt = 0.0;
        for i in 0..spec.n {
            for j in 0..spec.p1 {
                let a = truth.u0.row(i).dot(&truth.v1.row(j));
                let b = other.u0.row(i).dot(&other.v1.row(j));
                jnt += (a - b).powi(2);
            }
        }
        assert_abs_diff_eq!(row.norm_jnt1, jnt.sqrt(), epsilon = 1e-10);
        // simultaneous sign flips of matched score/loading columns change
        // nothing
        let mut flipped = other.clone();
        flipped.u0.column_mut(0).neg_mut();
        flipped.v1.column_mut(0).neg_mut();
        flipped.v2.column_mut(0).neg_mut();
        flipped.u1.column_mut(1).neg_mut();
        flipped.a1.column_mut(1).neg_mut();
        let row2 = evaluate(&as_fit(flipped), &truth).unwrap();
        for (a, b) in row.fields().iter().zip(row2.fields()) {
            assert_abs_diff_eq!(*a, b, epsilon = 1e-8);
        }
    }

    #[test]
    fn benchmark_runs_and_aggregates() {
        let spec = small_spec(29);
        let modes = vec![("one-step".to_string(), FitConfig::one_step())];
        let report = run_benchmark(&spec, 3, &modes, None).unwrap();
        assert_eq!(report.modes.len(), 1);
        let m = &report.modes[0];
        assert_eq!(m.metrics.len() + m.failures, 3);
        assert!(m.median.norm_theta1.is_finite());
        assert!(m.median.rho_hat >= 0.0 && m.median.rho_hat <= 1.0);
        // deterministic across calls
        let again = run_benchmark(&spec, 3, &modes, None).unwrap();
        assert_abs_diff_eq!(
            m.median.norm_theta1,
            again.modes[0].median.norm_theta1,
            epsilon = 1e-12
        );
        // rank override changes the fitted model
        let over = run_benchmark(&spec, 2, &modes, Some(Ranks::new(1, 3, 3))).unwrap();
        assert!(over.modes[0].median.norm_theta1.is_finite());
    }
}
