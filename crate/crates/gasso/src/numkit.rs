//! Dense linear-algebra kernels the fitter relies on.
//!
//! Matrices are nalgebra `DMatrix`; singular value decompositions go through
//! faer, whose SVD stays accurate on rank-deficient inputs. Everything here
//! is deterministic for a fixed input, including the SVD sign convention, so
//! seeded runs reproduce bit for bit.

use crate::error::{GassoError, Result};
use nalgebra::{DMatrix, DVector};

pub type Matrix = DMatrix<f64>;
pub type Vector = DVector<f64>;

/// Full thin SVD (k = min(n, p) components, singular values nonincreasing).
pub fn svd_raw(m: &Matrix) -> Result<(Matrix, Vector, Matrix)> {
    let (n, p) = (m.nrows(), m.ncols());
    let k = n.min(p);
    let fm = faer::Mat::<f64>::from_fn(n, p, |i, j| m[(i, j)]);
    let svd = fm
        .thin_svd()
        .map_err(|_| GassoError::Singular("svd did not converge".into()))?;
    let (fu, fs, fv) = (svd.U(), svd.S(), svd.V());
    let u = Matrix::from_fn(n, k, |i, j| fu[(i, j)]);
    let d = Vector::from_fn(k, |i, _| fs[i]);
    let v = Matrix::from_fn(p, k, |i, j| fv[(i, j)]);
    Ok((u, d, v))
}

/// Thin SVD `M ≈ U diag(d) Vᵀ` with `d` nonincreasing and a deterministic
/// sign convention: in each column pair, the V entry of largest absolute
/// value is made positive. Ties in singular values keep original order.
#[derive(Debug, Clone)]
pub struct ThinSvd {
    pub u: Matrix,
    pub d: Vector,
    pub v: Matrix,
}

pub fn thin_svd(m: &Matrix, r: usize) -> Result<ThinSvd> {
    let k = m.nrows().min(m.ncols());
    if r > k {
        return Err(GassoError::RankOutOfRange {
            requested: r,
            limit: k,
        });
    }
    let (u_full, d_full, v_full) = svd_raw(m)?;
    // stable sort by descending singular value; ties keep original order
    let mut order: Vec<usize> = (0..d_full.len()).collect();
    order.sort_by(|&a, &b| d_full[b].partial_cmp(&d_full[a]).unwrap());
    let mut u = Matrix::zeros(m.nrows(), r);
    let mut v = Matrix::zeros(m.ncols(), r);
    let mut d = Vector::zeros(r);
    for (j, &src) in order.iter().take(r).enumerate() {
        d[j] = d_full[src];
        u.set_column(j, &u_full.column(src));
        v.set_column(j, &v_full.column(src));
    }
    apply_sign_convention(&mut u, &mut v);
    Ok(ThinSvd { u, d, v })
}

/// Flip column signs so the largest-magnitude V entry in each column is
/// positive; U flips accordingly.
pub fn apply_sign_convention(u: &mut Matrix, v: &mut Matrix) {
    for j in 0..v.ncols() {
        let mut best = 0usize;
        let mut best_abs = -1.0f64;
        for i in 0..v.nrows() {
            let a = v[(i, j)].abs();
            if a > best_abs {
                best_abs = a;
                best = i;
            }
        }
        if v[(best, j)] < 0.0 {
            for i in 0..v.nrows() {
                v[(i, j)] = -v[(i, j)];
            }
            for i in 0..u.nrows() {
                u[(i, j)] = -u[(i, j)];
            }
        }
    }
}

/// Sum of singular values.
pub fn nuclear_norm(m: &Matrix) -> f64 {
    let fm = faer::Mat::<f64>::from_fn(m.nrows(), m.ncols(), |i, j| m[(i, j)]);
    fm.singular_values()
        .expect("svd did not converge")
        .iter()
        .sum()
}

/// Orthonormal basis of the column space, dropping directions with
/// singular value below `1e-12 * d_max`.
pub fn orthonormal_basis(m: &Matrix) -> Matrix {
    if m.ncols() == 0 {
        return Matrix::zeros(m.nrows(), 0);
    }
    let (u, d, _v) = svd_raw(m).expect("svd did not converge");
    let dmax = d.max();
    let keep: Vec<usize> = (0..d.len())
        .filter(|&i| d[i] > 1e-12 * dmax.max(1e-300))
        .collect();
    let mut q = Matrix::zeros(m.nrows(), keep.len());
    for (j, &src) in keep.iter().enumerate() {
        q.set_column(j, &u.column(src));
    }
    q
}

/// Maximum principal angle between col(A) and col(B), in degrees.
pub fn principal_angle(a: &Matrix, b: &Matrix) -> Result<f64> {
    if a.nrows() != b.nrows() {
        return Err(GassoError::Dimension(
            "principal_angle: row counts differ".into(),
        ));
    }
    let qa = orthonormal_basis(a);
    let qb = orthonormal_basis(b);
    if qa.ncols() < a.ncols() || qb.ncols() < b.ncols() {
        return Err(GassoError::Singular(
            "principal_angle: rank-deficient input".into(),
        ));
    }
    let s = qa.transpose() * qb;
    let (_u, d, _v) = svd_raw(&s)?;
    let smin = d.iter().cloned().fold(f64::INFINITY, f64::min).clamp(-1.0, 1.0);
    Ok(smin.acos().to_degrees())
}

/// Weighted ridge least squares:
/// `argmin_β ‖W½y − W½Xβ‖² + n·λ‖β‖²` via the normal equations
/// `(XᵀWX + nλI)β = XᵀWy`. With λ = 0 and a singular system the
/// minimum-norm solution is returned.
pub fn weighted_ridge_ls(x: &Matrix, y: &Vector, w: &Vector, lambda: f64) -> Result<Vector> {
    let n = x.nrows();
    let p = x.ncols();
    if y.len() != n || w.len() != n {
        return Err(GassoError::Dimension("weighted_ridge_ls: lengths".into()));
    }
    if !w.iter().any(|&wi| wi > 0.0) {
        return Err(GassoError::Singular("all weights are zero".into()));
    }
    if w.iter().any(|&wi| wi < 0.0) {
        return Err(GassoError::Domain("negative weight".into()));
    }
    let ridge = n as f64 * lambda;
    // X^T W X and X^T W y without materializing diag(W)
    let mut xtwx = Matrix::zeros(p, p);
    let mut xtwy = Vector::zeros(p);
    for i in 0..n {
        let wi = w[i];
        if wi == 0.0 {
            continue;
        }
        let row = x.row(i);
        for a in 0..p {
            xtwy[a] += wi * row[a] * y[i];
            for b in a..p {
                xtwx[(a, b)] += wi * row[a] * row[b];
            }
        }
    }
    for a in 0..p {
        for b in 0..a {
            xtwx[(a, b)] = xtwx[(b, a)];
        }
        xtwx[(a, a)] += ridge;
    }
    if let Some(chol) = xtwx.clone().cholesky() {
        let l = chol.l();
        let mut min_piv = f64::INFINITY;
        let mut max_piv = 0.0f64;
        for a in 0..p {
            let piv = l[(a, a)] * l[(a, a)];
            min_piv = min_piv.min(piv);
            max_piv = max_piv.max(piv);
        }
        if min_piv >= 1e-12 * max_piv {
            return Ok(chol.solve(&xtwy));
        }
    }
    // pseudoinverse fallback on the weighted design
    let mut b = x.clone();
    let mut yw = y.clone();
    for i in 0..n {
        let s = w[i].sqrt();
        for a in 0..p {
            b[(i, a)] *= s;
        }
        yw[i] *= s;
    }
    let (u, dvals, v) = svd_raw(&b)?;
    let dmax = dvals.max();
    let uty = u.transpose() * yw;
    let mut coef = Vector::zeros(dvals.len());
    for i in 0..coef.len() {
        let d = dvals[i];
        if lambda > 0.0 {
            coef[i] = d * uty[i] / (d * d + ridge);
        } else if d > 1e-12 * dmax.max(1e-300) {
            coef[i] = uty[i] / d;
        }
    }
    Ok(v * coef)
}

/// Column centering: `Mc = M − 1·meansᵀ`.
pub fn center_columns(m: &Matrix) -> (Matrix, Vector) {
    let n = m.nrows() as f64;
    let means = Vector::from_iterator(m.ncols(), m.column_iter().map(|c| c.sum() / n));
    let mut mc = m.clone();
    for j in 0..m.ncols() {
        for i in 0..m.nrows() {
            mc[(i, j)] -= means[j];
        }
    }
    (mc, means)
}

/// Projection of M onto the orthogonal complement of col(basis):
/// `(I − QQᵀ)M` with Q an orthonormal basis.
pub fn project_complement(m: &Matrix, basis: &Matrix) -> Matrix {
    let q = orthonormal_basis(basis);
    if q.ncols() == 0 {
        return m.clone();
    }
    m - &q * (q.transpose() * m)
}

/// Modified Gram-Schmidt orthonormalization of the columns, in order.
/// Columns that collapse numerically are left as zero.
pub fn gram_schmidt(m: &Matrix) -> Matrix {
    let mut q = m.clone();
    for j in 0..q.ncols() {
        for k in 0..j {
            let proj = q.column(k).dot(&q.column(j));
            let col_k = q.column(k).clone_owned();
            let mut col_j = q.column_mut(j);
            col_j.axpy(-proj, &col_k, 1.0);
        }
        let norm = q.column(j).norm();
        if norm > 1e-12 {
            q.column_mut(j).scale_mut(1.0 / norm);
        } else {
            q.column_mut(j).fill(0.0);
        }
    }
    q
}
