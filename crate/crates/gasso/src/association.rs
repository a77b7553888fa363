//! Association coefficient between two natural-parameter matrices and its
//! permutation test.
//!
//! With Θ̃ₖ the column-centered natural parameters,
//! ρ = ‖Θ̃₁ᵀΘ̃₂‖⋆ / (‖Θ̃₁‖_F ‖Θ̃₂‖_F) ∈ [0, 1]. ρ = 0 exactly when the
//! centered structures occupy orthogonal row spaces, ρ = 1 when one is an
//! orthogonal transformation (plus scaling) of the other. The permutation
//! test re-pairs samples by permuting the rows of Θ̃₂ — no refit — and
//! compares ρ against the permutation null.

use crate::error::{GassoError, Result};
use crate::numkit::{self, Matrix};
use rand::seq::SliceRandom;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

fn centered_checked(theta: &Matrix, label: &str) -> Result<Matrix> {
    let (c, _) = numkit::center_columns(theta);
    if c.norm() == 0.0 {
        return Err(GassoError::Domain(format!(
            "{label} has no variation after column centering"
        )));
    }
    Ok(c)
}

fn rho_centered(c1: &Matrix, c2: &Matrix) -> f64 {
    (numkit::nuclear_norm(&(c1.transpose() * c2)) / (c1.norm() * c2.norm())).clamp(0.0, 1.0)
}

/// Association coefficient of two row-aligned natural-parameter matrices.
/// Columns are re-centered internally, so intercepts do not contribute.
pub fn association_coefficient(theta1: &Matrix, theta2: &Matrix) -> Result<f64> {
    if theta1.nrows() != theta2.nrows() {
        return Err(GassoError::Dimension(
            "association: row counts differ".into(),
        ));
    }
    let c1 = centered_checked(theta1, "theta1")?;
    let c2 = centered_checked(theta2, "theta2")?;
    Ok(rho_centered(&c1, &c2))
}

#[derive(Debug, Clone)]
pub struct AssociationTest {
    pub rho: f64,
    /// Add-one convention: (1 + #{ρ_π ≥ ρ}) / (B + 1).
    pub p_value: f64,
    /// Raw convention: #{ρ_π ≥ ρ} / B.
    pub p_value_raw: f64,
    pub permutations: usize,
    pub null_rhos: Vec<f64>,
}

/// Permutation test of no association: permutation b uses its own
/// deterministic random stream, so results are reproducible for a fixed
/// seed regardless of thread scheduling.
pub fn permutation_test(
    theta1: &Matrix,
    theta2: &Matrix,
    permutations: usize,
    seed: u64,
) -> Result<AssociationTest> {
    if permutations == 0 {
        return Err(GassoError::Domain("need at least one permutation".into()));
    }
    if theta1.nrows() != theta2.nrows() {
        return Err(GassoError::Dimension(
            "association: row counts differ".into(),
        ));
    }
    let c1 = centered_checked(theta1, "theta1")?;
    let c2 = centered_checked(theta2, "theta2")?;
    let rho = rho_centered(&c1, &c2);
    let n = c1.nrows();
    let null_rhos: Vec<f64> = (0..permutations)
        .into_par_iter()
        .map(|b| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(b as u64 + 1);
            let mut perm: Vec<usize> = (0..n).collect();
            perm.shuffle(&mut rng);
            let mut permuted = Matrix::zeros(n, c2.ncols());
            for (dst, &src) in perm.iter().enumerate() {
                permuted.set_row(dst, &c2.row(src));
            }
            rho_centered(&c1, &permuted)
        })
        .collect();
    let exceed = null_rhos.iter().filter(|&&r| r >= rho).count();
    Ok(AssociationTest {
        rho,
        p_value: (1.0 + exceed as f64) / (permutations as f64 + 1.0),
        p_value_raw: exceed as f64 / permutations as f64,
        permutations,
        null_rhos,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::Rng;

    fn toy_u0() -> Matrix {
        Matrix::from_vec(3, 2, vec![2.0, -2.0, 0.0, 1.0, 1.0, -2.0])
    }

    #[test]
    fn toy_example_weak_association() {
        let s = 50.02f64.sqrt();
        let u0 = toy_u0();
        let v1t = Matrix::from_vec(2, 2, vec![5.0 / s, 0.1 / s, 5.0 / s, -0.1 / s]);
        let v2t = Matrix::from_vec(2, 2, vec![0.1 / s, 5.0 / s, -0.1 / s, 5.0 / s]);
        let t1 = &u0 * v1t;
        let t2 = &u0 * v2t;
        let rho = association_coefficient(&t1, &t2).unwrap();
        assert_abs_diff_eq!(rho, 0.0404, epsilon = 1e-3);
    }

    #[test]
    fn toy_example_full_association() {
        let s = 1.5f64.sqrt();
        let u0 = toy_u0();
        let v1t = Matrix::from_vec(2, 2, vec![0.1 / s, -0.2 / s, 0.2 / s, 0.1 / s]);
        let v2t = Matrix::from_vec(2, 2, vec![0.8 / s, -0.9 / s, 0.9 / s, 0.8 / s]);
        let t1 = &u0 * v1t;
        let t2 = &u0 * v2t;
        let rho = association_coefficient(&t1, &t2).unwrap();
        assert_abs_diff_eq!(rho, 1.0, epsilon = 1e-8);
    }

    #[test]
    fn rank_one_joint_only_is_always_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..20 {
            let mut u = Matrix::from_fn(8, 1, |_, _| rng.gen_range(-1.0..1.0));
            let mean = u.sum() / 8.0;
            u.iter_mut().for_each(|x| *x -= mean);
            let v1 = Matrix::from_fn(1, 4, |_, _| rng.gen_range(-1.0..1.0));
            let v2 = Matrix::from_fn(1, 3, |_, _| rng.gen_range(-1.0..1.0));
            let rho = association_coefficient(&(&u * v1), &(&u * v2)).unwrap();
            assert_abs_diff_eq!(rho, 1.0, epsilon = 1e-10);
        }
    }

    #[test]
    fn orthogonal_structures_give_zero() {
        // centered scores with orthogonal columns feeding separate blocks
        let ua = Matrix::from_vec(4, 1, vec![1.0, -1.0, 1.0, -1.0]);
        let ub = Matrix::from_vec(4, 1, vec![1.0, 1.0, -1.0, -1.0]);
        let v1 = Matrix::from_vec(1, 3, vec![0.3, -0.7, 1.1]);
        let v2 = Matrix::from_vec(1, 2, vec![0.9, 0.4]);
        let rho = association_coefficient(&(&ua * v1), &(&ub * v2)).unwrap();
        assert!(rho <= 1e-12, "rho = {rho}");
    }

    #[test]
    fn symmetry_scale_invariance_and_bounds() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..200 {
            let t1 = Matrix::from_fn(6, 4, |_, _| rng.gen_range(-1.0..1.0));
            let t2 = Matrix::from_fn(6, 5, |_, _| rng.gen_range(-1.0..1.0));
            let rho = association_coefficient(&t1, &t2).unwrap();
            assert!((0.0..=1.0).contains(&rho));
            let sym = association_coefficient(&t2, &t1).unwrap();
            assert_abs_diff_eq!(rho, sym, epsilon = 1e-12);
            let scaled = association_coefficient(&(&t1 * 3.7), &(&t2 * 0.2)).unwrap();
            assert_abs_diff_eq!(rho, scaled, epsilon = 1e-10);
            // adding per-column intercepts changes nothing
            let mut shifted = t1.clone();
            for j in 0..4 {
                let delta = rng.gen_range(-5.0..5.0);
                for i in 0..6 {
                    shifted[(i, j)] += delta;
                }
            }
            let shift_rho = association_coefficient(&shifted, &t2).unwrap();
            assert_abs_diff_eq!(rho, shift_rho, epsilon = 1e-10);
        }
    }

    #[test]
    fn orthogonal_transform_gives_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let t1 = Matrix::from_fn(10, 4, |_, _| rng.gen_range(-1.0..1.0));
        // orthogonal 4×4 from the QR of a random matrix
        let q = numkit::orthonormal_basis(&Matrix::from_fn(4, 4, |_, _| {
            rng.gen_range(-1.0..1.0)
        }));
        let t2 = &t1 * &q * 2.5;
        let rho = association_coefficient(&t1, &t2).unwrap();
        assert_abs_diff_eq!(rho, 1.0, epsilon = 1e-10);
    }

    #[test]
    fn zero_structure_is_rejected() {
        let flat = Matrix::from_element(5, 3, 4.2);
        let t2 = Matrix::from_fn(5, 3, |i, j| (i * 3 + j) as f64);
        assert!(association_coefficient(&flat, &t2).is_err());
    }

    #[test]
    fn permutation_test_is_deterministic_and_calibrated() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let u = Matrix::from_fn(40, 2, |_, _| rng.gen_range(-1.0..1.0));
        let t1 = &u * Matrix::from_fn(2, 6, |_, _| rng.gen_range(-1.0..1.0));
        let t2 = &u * Matrix::from_fn(2, 5, |_, _| rng.gen_range(-1.0..1.0));
        let a = permutation_test(&t1, &t2, 200, 99).unwrap();
        let b = permutation_test(&t1, &t2, 200, 99).unwrap();
        assert_eq!(a.null_rhos, b.null_rhos);
        assert_abs_diff_eq!(a.p_value, b.p_value);
        // strong shared structure → smallest attainable p-value
        assert_abs_diff_eq!(a.p_value, 1.0 / 201.0, epsilon = 1e-12);
        assert_abs_diff_eq!(a.p_value_raw, 0.0, epsilon = 1e-12);
        // unrelated noise → non-significant p-value
        let n1 = Matrix::from_fn(40, 6, |_, _| rng.gen_range(-1.0..1.0));
        let n2 = Matrix::from_fn(40, 5, |_, _| rng.gen_range(-1.0..1.0));
        let c = permutation_test(&n1, &n2, 200, 7).unwrap();
        assert!(c.p_value > 0.05, "p = {}", c.p_value);
        assert!(c.null_rhos.len() == 200);
    }
}
