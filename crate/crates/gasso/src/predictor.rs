//! Out-of-sample prediction: annotating a new sample's block-2 tags from its
//! block-1 features, and retrieving similar training samples from a binary
//! block-2 query.

use crate::error::{GassoError, Result};
use crate::expfam::Family;
use crate::fitter::{self, FitConfig};
use crate::model::GasParams;
use crate::numkit::{Matrix, Vector};

fn stacked_loadings(v: &Matrix, a: &Matrix) -> Matrix {
    let p = v.nrows();
    let mut design = Matrix::zeros(p, v.ncols() + a.ncols());
    design.view_mut((0, 0), (p, v.ncols())).copy_from(v);
    design.view_mut((0, v.ncols()), (p, a.ncols())).copy_from(a);
    design
}

#[derive(Debug, Clone)]
pub struct Annotation {
    /// Per-tag probabilities, strictly inside (0, 1).
    pub probabilities: Vector,
    /// Estimated joint score of the new sample.
    pub u0_star: Vector,
    /// The feature GLM stalled and kept its warm start.
    pub stalled: bool,
}

/// Annotate a new sample: regress its block-1 features on (V₁, A₁) with
/// offset μ₁, keep the joint part u₀⋆ of the coefficients, and map
/// θ₂⋆ = μ₂ + V₂u₀⋆ through the logistic function.
pub fn annotate(params: &GasParams, x1_new: &Vector, family1: &[Family]) -> Result<Annotation> {
    let p1 = params.p1();
    if x1_new.len() != p1 || family1.len() != p1 {
        return Err(GassoError::Dimension("annotate: feature length".into()));
    }
    if x1_new.iter().any(|v| !v.is_finite()) {
        return Err(GassoError::Domain("annotate: non-finite feature".into()));
    }
    let design = stacked_loadings(&params.v1, &params.a1);
    let r0 = params.u0.ncols();
    let cfg = FitConfig::full();
    let warm = Vector::zeros(design.ncols());
    let fit = fitter::glm_row_fit(&design, x1_new, &params.mu1, family1, None, &warm, &cfg)?;
    let u0_star = fit.beta.rows(0, r0).clone_owned();
    let theta2 = &params.mu2 + &params.v2 * &u0_star;
    let probabilities = theta2.map(|t| 1.0 / (1.0 + (-t).exp()));
    Ok(Annotation {
        probabilities,
        u0_star,
        stalled: fit.stalled,
    })
}

/// Indices of the k largest probabilities, descending; ties keep original
/// index order.
pub fn top_k_indices(probabilities: &Vector, k: usize) -> Result<Vec<usize>> {
    if k > probabilities.len() {
        return Err(GassoError::Domain(format!(
            "k = {k} exceeds {} entries",
            probabilities.len()
        )));
    }
    let mut order: Vec<usize> = (0..probabilities.len()).collect();
    order.sort_by(|&a, &b| probabilities[b].partial_cmp(&probabilities[a]).unwrap());
    order.truncate(k);
    Ok(order)
}

/// The k labels with the largest probabilities.
pub fn top_k_tags(probabilities: &Vector, k: usize, names: &[String]) -> Result<Vec<String>> {
    if names.len() != probabilities.len() {
        return Err(GassoError::Dimension("top_k_tags: label count".into()));
    }
    Ok(top_k_indices(probabilities, k)?
        .into_iter()
        .map(|i| names[i].clone())
        .collect())
}

/// Training-sample score index for Mahalanobis retrieval.
#[derive(Debug, Clone)]
pub struct ScoreIndex {
    /// Rows of (U₀, U₂), one per training sample.
    pub scores: Matrix,
    /// Regularized inverse covariance of the score rows.
    pub precision: Matrix,
    pub labels: Vec<String>,
}

/// Build the retrieval index from (U₀, U₂). `ridge` is added to the sample
/// covariance diagonal; `None` uses 1e-6·trace/dim.
pub fn build_score_index(
    params: &GasParams,
    ridge: Option<f64>,
    labels: Option<Vec<String>>,
) -> Result<ScoreIndex> {
    let n = params.n();
    let dim = params.u0.ncols() + params.u2.ncols();
    if n <= dim {
        return Err(GassoError::Dimension(format!(
            "need more than {dim} samples to index {dim}-dimensional scores"
        )));
    }
    let scores = {
        let mut s = Matrix::zeros(n, dim);
        s.view_mut((0, 0), (n, params.u0.ncols())).copy_from(&params.u0);
        s.view_mut((0, params.u0.ncols()), (n, params.u2.ncols()))
            .copy_from(&params.u2);
        s
    };
    let (centered, _) = crate::numkit::center_columns(&scores);
    let mut cov = centered.transpose() * &centered / (n as f64 - 1.0);
    let ridge = ridge.unwrap_or_else(|| 1e-6 * cov.trace() / dim.max(1) as f64);
    if ridge < 0.0 {
        return Err(GassoError::Domain("negative covariance ridge".into()));
    }
    for i in 0..dim {
        cov[(i, i)] += ridge;
    }
    let chol = cov.clone().cholesky().ok_or_else(|| {
        GassoError::Singular("score covariance is singular; use a ridge > 0".into())
    })?;
    let precision = chol.inverse();
    let labels = labels.unwrap_or_else(|| (0..n).map(|i| i.to_string()).collect());
    if labels.len() != n {
        return Err(GassoError::Dimension("label count != sample count".into()));
    }
    Ok(ScoreIndex {
        scores,
        precision,
        labels,
    })
}

#[derive(Debug, Clone)]
pub struct Retrieval {
    /// Sample indices by ascending Mahalanobis distance; ties keep index
    /// order.
    pub ranking: Vec<usize>,
    /// Distance per position in `ranking`.
    pub distances: Vec<f64>,
    /// Estimated (u₀⋆, u₂⋆) score of the query.
    pub query_score: Vector,
    pub stalled: bool,
}

/// Retrieve training samples near a binary block-2 query: fit (u₀⋆, u₂⋆) by
/// ridged logistic regression of the query on (V₂, A₂) with offset μ₂, then
/// rank indexed samples by Mahalanobis distance under the index precision.
pub fn retrieve(params: &GasParams, index: &ScoreIndex, query: &Vector) -> Result<Retrieval> {
    let p2 = params.p2();
    if query.len() != p2 {
        return Err(GassoError::Dimension("retrieve: query length".into()));
    }
    if query.iter().any(|&v| v != 0.0 && v != 1.0) {
        return Err(GassoError::Domain("retrieve: query must be binary".into()));
    }
    let design = stacked_loadings(&params.v2, &params.a2);
    let fams = vec![Family::Bernoulli; p2];
    let cfg = FitConfig::full();
    let warm = Vector::zeros(design.ncols());
    let fit = fitter::glm_row_fit(&design, query, &params.mu2, &fams, None, &warm, &cfg)?;
    let query_score = fit.beta;
    let n = index.scores.nrows();
    let mut dist: Vec<(usize, f64)> = (0..n)
        .map(|i| {
            let diff = &query_score - index.scores.row(i).transpose();
            let d2 = (diff.transpose() * &index.precision * &diff)[(0, 0)];
            (i, d2.max(0.0).sqrt())
        })
        .collect();
    dist.sort_by(|a, b| a.1.partial_cmp(&b.1).unwrap().then(a.0.cmp(&b.0)));
    Ok(Retrieval {
        ranking: dist.iter().map(|&(i, _)| i).collect(),
        distances: dist.iter().map(|&(_, d)| d).collect(),
        query_score,
        stalled: fit.stalled,
    })
}
