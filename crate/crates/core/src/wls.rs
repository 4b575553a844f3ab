//! Weighted least-squares building blocks.
//!
//! Two estimators handle a rank-deficient covariance `Σ = U1 D1 U1^T`:
//! the whitened solve `(Q A)^+ (Q y)` with `Q = D1^{-1/2} U1^T`, which
//! minimizes the `Σ^+` seminorm, and the null-space solve
//! `(U2^T A)^+ (U2^T y)`, which uses that noise with covariance `Σ` has no
//! component along `U2`.

use log::warn;
use nalgebra::{DMatrix, DVector};

use crate::covariance::SvdSplit;

/// Moore-Penrose pseudo-inverse, dropping singular values at or below
/// `rel_tol * σ_max`.
pub fn pinv(a: &DMatrix<f64>, rel_tol: f64) -> DMatrix<f64> {
    if a.is_empty() {
        return DMatrix::zeros(a.ncols(), a.nrows());
    }
    let svd = a.clone().svd(true, true);
    let smax = svd.singular_values.max();
    let cutoff = rel_tol * smax;
    let u = svd.u.as_ref().expect("u requested");
    let vt = svd.v_t.as_ref().expect("v_t requested");
    let mut out = DMatrix::zeros(a.ncols(), a.nrows());
    for (idx, &s) in svd.singular_values.iter().enumerate() {
        if s > cutoff && s > 0.0 {
            out += vt.row(idx).transpose() * u.column(idx).transpose() / s;
        }
    }
    out
}

/// Minimum-norm least-squares solution `A^+ b`.
pub fn lstsq_min_norm(a: &DMatrix<f64>, b: &DVector<f64>) -> DVector<f64> {
    pinv(a, 1e-13) * b
}

/// Solves a symmetric positive semidefinite system by Cholesky, falling back
/// to the pseudo-inverse. Returns whether the fallback was used.
pub fn solve_spd_or_pinv(normal: &DMatrix<f64>, rhs: &DVector<f64>) -> (DVector<f64>, bool) {
    if let Some(ch) = normal.clone().cholesky() {
        let x = ch.solve(rhs);
        if x.iter().all(|v| v.is_finite()) {
            return (x, false);
        }
    }
    warn!("normal matrix is not positive definite; using the minimum-norm solution");
    (pinv(normal, 1e-13) * rhs, true)
}

/// Dense weighted normal equations `(A^T W A)^{-1} A^T W y`.
pub fn weighted_normal_solve(a: &DMatrix<f64>, y: &DVector<f64>, w: &DMatrix<f64>) -> DVector<f64> {
    let wa = w * a;
    let normal = a.transpose() * &wa;
    let rhs = wa.transpose() * y;
    solve_spd_or_pinv(&normal, &rhs).0
}

/// `(Q A)^+ (Q y)` with `Q = D1^{-1/2} U1^T`.
pub fn q_transform_solve(a: &DMatrix<f64>, y: &DVector<f64>, split: &SvdSplit) -> DVector<f64> {
    let q = whitening(split);
    lstsq_min_norm(&(&q * a), &(&q * y))
}

/// `((U2)^T A)^+ ((U2)^T y)`.
pub fn nullspace_solve(a: &DMatrix<f64>, y: &DVector<f64>, split: &SvdSplit) -> DVector<f64> {
    let ut = split.u2.transpose();
    lstsq_min_norm(&(&ut * a), &(&ut * y))
}

pub(crate) fn whitening(split: &SvdSplit) -> DMatrix<f64> {
    let scale = split.d1.map(|x| x.sqrt().recip());
    DMatrix::from_diagonal(&scale) * split.u1.transpose()
}

/// Normal equations of `min ||y - (I_p ⊗ K) x||_G^2` for a dense weight `G`
/// of size `p q`, without forming the Kronecker product.
pub fn kron_normal_equations(
    g: &DMatrix<f64>,
    k: &DMatrix<f64>,
    p: usize,
    y: &DVector<f64>,
) -> (DMatrix<f64>, DVector<f64>) {
    let (q, r) = k.shape();
    debug_assert_eq!(g.nrows(), p * q);
    // G (I_p ⊗ K), one column block per b
    let mut gk = DMatrix::zeros(p * q, p * r);
    for b in 0..p {
        gk.columns_mut(b * r, r).gemm(1.0, &g.columns(b * q, q), k, 0.0);
    }
    let kt = k.transpose();
    let mut normal = DMatrix::zeros(p * r, p * r);
    for a in 0..p {
        normal.rows_mut(a * r, r).gemm(1.0, &kt, &gk.rows(a * q, q), 0.0);
    }
    let gy = g * y;
    let mut rhs = DVector::zeros(p * r);
    for a in 0..p {
        rhs.rows_mut(a * r, r).copy_from(&(k.transpose() * gy.rows(a * q, q)));
    }
    let sym = (&normal + normal.transpose()) * 0.5;
    (sym, rhs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::covariance::{svd_split, DEFAULT_RANK_THRESHOLD};
    use crate::tensor::kron;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(rng: &mut ChaCha8Rng, r: usize, c: usize) -> DMatrix<f64> {
        DMatrix::from_fn(r, c, |_, _| rng.random_range(-1.0..1.0))
    }

    #[test]
    fn pinv_of_rank_deficient_matrix() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let a = random(&mut rng, 5, 2) * random(&mut rng, 2, 4);
        let p = pinv(&a, 1e-12);
        assert!((&a * &p * &a - &a).norm() < 1e-10);
        assert!((&p * &a * &p - &p).norm() < 1e-10);
        assert!(((&a * &p).transpose() - &a * &p).norm() < 1e-10);
    }

    #[test]
    fn spd_fallback_gives_min_norm() {
        let n = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]);
        let rhs = DVector::from_vec(vec![2.0, 2.0]);
        let (x, fallback) = solve_spd_or_pinv(&n, &rhs);
        assert!(fallback);
        assert!((x - DVector::from_vec(vec![1.0, 1.0])).norm() < 1e-12);
    }

    #[test]
    fn kron_normal_matches_dense_assembly() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let (p, q, r) = (3, 4, 2);
        let k = random(&mut rng, q, r);
        let b = random(&mut rng, p * q, p * q);
        let g = &b * b.transpose();
        let y = DVector::from_fn(p * q, |_, _| rng.random_range(-1.0..1.0));
        let (normal, rhs) = kron_normal_equations(&g, &k, p, &y);
        let big = kron(&DMatrix::identity(p, p), &k);
        assert!((normal - big.transpose() * &g * &big).norm() < 1e-12);
        assert!((rhs - big.transpose() * &g * &y).norm() < 1e-12);
    }

    #[test]
    fn q_transform_full_rank_is_weighted_ls() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a = random(&mut rng, 8, 3);
        let y = DVector::from_fn(8, |_, _| rng.random_range(-1.0..1.0));
        let b = random(&mut rng, 8, 8);
        let sigma = &b * b.transpose() + DMatrix::identity(8, 8) * 0.5;
        let split = svd_split(&sigma, DEFAULT_RANK_THRESHOLD).unwrap();
        let w = sigma.clone().try_inverse().unwrap();
        let x1 = q_transform_solve(&a, &y, &split);
        let x2 = weighted_normal_solve(&a, &y, &w);
        assert!((&x1 - &x2).norm() / x2.norm() < 1e-8);
    }
}
