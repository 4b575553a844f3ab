use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use nalgebra::DMatrix;

use super::{DecoupledModel, Sampling};
use crate::poly::{compose_branches, MonomialBasis, PolyMap};
use crate::tensor::Tensor3;
use crate::{Error, Result};

/// Stream reserved for sampling points; restarts use streams `1..`.
pub(crate) const POINT_STREAM: u64 = 0;

/// `count` points in `R^m`, deterministic in `seed`.
pub fn sample_points(m: usize, count: usize, sampling: Sampling, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(POINT_STREAM);
    (0..count)
        .map(|_| {
            (0..m)
                .map(|_| match sampling {
                    Sampling::Normal => rng.sample(StandardNormal),
                    Sampling::Uniform => rng.random_range(-1.0..=1.0),
                })
                .collect()
        })
        .collect()
}

/// Stacks `J(u_k)` as frontal slices of an `n x m x N` tensor.
pub fn build_jacobian_tensor(f: &PolyMap, points: &[Vec<f64>]) -> Result<Tensor3> {
    let slices = points.iter().map(|u| f.jacobian(u)).collect::<Result<Vec<_>>>()?;
    Tensor3::stack(&slices)
}

/// Random map with an exact `r`-branch decoupling: `W`, `V` and the branch
/// coefficients are i.i.d. uniform on `[-1, 1]`. Returns the expanded map and
/// the generating model.
pub fn random_decoupled(m: usize, n: usize, d: usize, r: usize, seed: u64) -> Result<(PolyMap, DecoupledModel)> {
    if n == 0 || r == 0 {
        return Err(Error::Domain("n and r must be at least 1".into()));
    }
    let basis = MonomialBasis::enumerate(m, d)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut draw = |rows: usize, cols: usize| DMatrix::from_fn(rows, cols, |_, _| rng.random_range(-1.0..=1.0));
    let w = draw(n, r);
    let v = draw(m, r);
    let g: Vec<Vec<f64>> = (0..r).map(|_| draw(d + 1, 1).iter().copied().collect()).collect();
    let f = compose_branches(&basis, &w, &v, &g)?;
    Ok((f, DecoupledModel::new(w, v, g)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::poly::{compose_branches, MonomialBasis};
    use crate::tensor::{CpdFactors, Mode};

    #[test]
    fn points_are_deterministic() {
        assert_eq!(sample_points(3, 10, Sampling::Normal, 4), sample_points(3, 10, Sampling::Normal, 4));
        assert_ne!(sample_points(3, 10, Sampling::Normal, 4), sample_points(3, 10, Sampling::Normal, 5));
    }

    #[test]
    fn normal_points_are_centered() {
        let n = 1000;
        let pts = sample_points(2, n, Sampling::Normal, 1);
        for c in 0..2 {
            let mean: f64 = pts.iter().map(|p| p[c]).sum::<f64>() / n as f64;
            assert!(mean.abs() < 4.0 / (n as f64).sqrt());
        }
    }

    #[test]
    fn uniform_points_in_box() {
        let pts = sample_points(3, 500, Sampling::Uniform, 2);
        assert!(pts.iter().flatten().all(|x| (-1.0..=1.0).contains(x)));
    }

    #[test]
    fn tensor_slices_are_jacobians() {
        let basis = MonomialBasis::enumerate(2, 3).unwrap();
        let coeffs = DMatrix::from_fn(2, basis.len(), |i, j| (i as f64 + 1.0) * (j as f64 - 4.0) / 7.0);
        let f = PolyMap::new(basis.clone(), coeffs).unwrap();
        let pts = sample_points(2, 4, Sampling::Normal, 3);
        let t = build_jacobian_tensor(&f, &pts).unwrap();
        assert_eq!(t.dims(), (2, 2, 4));
        for (k, u) in pts.iter().enumerate() {
            assert_eq!(t.slice(k), f.jacobian(u).unwrap());
        }
        let zero = build_jacobian_tensor(&PolyMap::zeros(basis, 2), &pts).unwrap();
        assert!(zero.as_slice().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn decoupled_map_gives_low_rank_tensor() {
        // J(u) = W diag(g'(V^T u)) V^T, so T = [[W, V, H]] with H[k, j] = g_j'(v_j^T u_k)
        let basis = MonomialBasis::enumerate(2, 3).unwrap();
        let w = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, -0.3, 2.0]);
        let v = DMatrix::from_row_slice(2, 2, &[0.7, -1.0, 0.2, 0.4]);
        let g = vec![vec![0.1, 1.0, -0.5, 0.3], vec![0.0, -0.2, 0.8, 0.1]];
        let f = compose_branches(&basis, &w, &v, &g).unwrap();
        let pts = sample_points(2, 6, Sampling::Normal, 8);
        let t = build_jacobian_tensor(&f, &pts).unwrap();
        let h = DMatrix::from_fn(6, 2, |k, j| {
            let x = v[(0, j)] * pts[k][0] + v[(1, j)] * pts[k][1];
            g[j][1] + 2.0 * g[j][2] * x + 3.0 * g[j][3] * x * x
        });
        let rec = CpdFactors::new(w, v, h).unwrap().reconstruct();
        let diff = t.matricize(Mode::Three) - rec.matricize(Mode::Three);
        assert!(diff.norm() < 1e-12);
    }

    #[test]
    fn random_decoupled_matches_its_model() {
        let (f, model) = random_decoupled(3, 2, 3, 2, 5).unwrap();
        for u in sample_points(3, 10, Sampling::Normal, 1) {
            let a = f.eval(&u).unwrap();
            assert!((a - model.eval(&u).unwrap()).norm() < 1e-12);
        }
        // r = 1, d = 1: affine in the single direction V[:, 0]
        let (f, model) = random_decoupled(2, 3, 1, 1, 2).unwrap();
        let j = f.jacobian(&[0.3, -1.2]).unwrap();
        let expected = &model.w * model.v.transpose() * model.g[0][1];
        assert!((j - expected).norm() < 1e-14);
    }
}
