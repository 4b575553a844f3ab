use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::io::rows;
use crate::poly::{compose_branches, MonomialBasis, PolyMap};
use crate::tensor::CpdFactors;
use crate::wls::lstsq_min_norm;
use crate::{Error, Result};

const MAX_VANDERMONDE_COND: f64 = 1e12;

/// `u ↦ W g(V^T u)` with univariate branches `g_j`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecoupledModel {
    /// `n x r`
    #[serde(rename = "W", with = "rows")]
    pub w: DMatrix<f64>,
    /// `m x r`
    #[serde(rename = "V", with = "rows")]
    pub v: DMatrix<f64>,
    /// Ascending-power coefficients per branch, constant first.
    pub g: Vec<Vec<f64>>,
}

impl DecoupledModel {
    pub fn new(w: DMatrix<f64>, v: DMatrix<f64>, g: Vec<Vec<f64>>) -> Result<Self> {
        let r = w.ncols();
        if r == 0 || v.ncols() != r || g.len() != r {
            return Err(Error::dim(
                "branch count",
                r,
                format!("V has {} columns, g has {} branches", v.ncols(), g.len()),
            ));
        }
        Ok(Self { w, v, g })
    }

    pub fn r(&self) -> usize {
        self.w.ncols()
    }

    pub fn m(&self) -> usize {
        self.v.nrows()
    }

    pub fn n(&self) -> usize {
        self.w.nrows()
    }

    /// Highest branch degree.
    pub fn degree(&self) -> usize {
        self.g.iter().map(|c| c.len().saturating_sub(1)).max().unwrap_or(0)
    }

    pub fn eval(&self, u: &[f64]) -> Result<DVector<f64>> {
        if u.len() != self.m() {
            return Err(Error::dim("input dimension", self.m(), u.len()));
        }
        let x = self.v.transpose() * DVector::from_column_slice(u);
        let gx = DVector::from_fn(self.r(), |j, _| horner(&self.g[j], x[j]));
        Ok(&self.w * gx)
    }

    /// Expands the model into a polynomial map over `basis`.
    pub fn compose(&self, basis: &MonomialBasis) -> Result<PolyMap> {
        compose_branches(basis, &self.w, &self.v, &self.g)
    }
}

fn horner(c: &[f64], x: f64) -> f64 {
    c.iter().rev().fold(0.0, |acc, &a| acc * x + a)
}

fn distinct_count(xs: &[f64], tol: f64) -> usize {
    let mut sorted = xs.to_vec();
    sorted.sort_by(f64::total_cmp);
    let mut count = 0;
    let mut last = f64::NEG_INFINITY;
    for x in sorted {
        if x - last > tol {
            count += 1;
            last = x;
        }
    }
    count
}

/// Degree-`deg` least-squares fit, ascending powers.
fn fit_polynomial(branch: usize, xs: &[f64], ys: &[f64], deg: usize) -> Result<Vec<f64>> {
    let vander = DMatrix::from_fn(xs.len(), deg + 1, |k, p| xs[k].powi(p as i32));
    let sv = vander.clone().svd(false, false).singular_values;
    let cond = sv.max() / sv.min();
    if !(cond <= MAX_VANDERMONDE_COND) {
        return Err(Error::Reconstruction {
            branch,
            reason: format!(
                "Vandermonde matrix is ill-conditioned (condition {cond:.3e}); use more sampling points or a lower degree"
            ),
        });
    }
    Ok(lstsq_min_norm(&vander, &DVector::from_column_slice(ys)).iter().copied().collect())
}

/// Recovers the branch polynomials from the CPD factors: fit `g_j'` to the
/// pairs `(v_j^T u_k, H[k, j])`, integrate, and fit all integration constants
/// jointly against `f` at the sampling points.
pub fn reconstruct_branches(factors: &CpdFactors, f: &PolyMap, points: &[Vec<f64>], d: usize) -> Result<DecoupledModel> {
    let (n, m, big_n) = factors.dims();
    if f.n() != n || f.m() != m {
        return Err(Error::dim("map shape vs factors", format!("n={n}, m={m}"), format!("n={}, m={}", f.n(), f.m())));
    }
    if points.len() != big_n {
        return Err(Error::dim("sampling points", big_n, points.len()));
    }
    if d == 0 {
        return Err(Error::Domain("branch degree must be at least 1".into()));
    }
    let r = factors.rank();
    let mut g = Vec::with_capacity(r);
    let mut xs_all = Vec::with_capacity(r);
    for j in 0..r {
        let vj = factors.v.column(j);
        let xs: Vec<f64> = points.iter().map(|u| (0..m).map(|c| vj[c] * u[c]).sum()).collect();
        let scale = xs.iter().fold(0.0f64, |a, x| a.max(x.abs()));
        let spread = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max) - xs.iter().copied().fold(f64::INFINITY, f64::min);
        if !(spread > 1e-12 * scale.max(f64::MIN_POSITIVE)) || scale == 0.0 {
            return Err(Error::Reconstruction {
                branch: j,
                reason: "projected abscissae are all equal (the V column is degenerate)".into(),
            });
        }
        let distinct = distinct_count(&xs, 1e-12 * scale);
        if distinct < d + 1 {
            return Err(Error::Reconstruction {
                branch: j,
                reason: format!("{distinct} distinct abscissae, at least {} needed", d + 1),
            });
        }
        let hj: Vec<f64> = factors.h.column(j).iter().copied().collect();
        let deriv = fit_polynomial(j, &xs, &hj, d - 1)?;
        let mut coeffs = vec![0.0; d + 1];
        for (p, c) in deriv.iter().enumerate() {
            coeffs[p + 1] = c / (p + 1) as f64;
        }
        g.push(coeffs);
        xs_all.push(xs);
    }

    // mean over k of f(u_k) - W g~(x_k); the constants solve W kappa = mean
    let mut mean = DVector::zeros(n);
    for (k, u) in points.iter().enumerate() {
        let gx = DVector::from_fn(r, |j, _| horner(&g[j], xs_all[j][k]));
        mean += f.eval(u)? - &factors.w * gx;
    }
    mean /= big_n as f64;
    let kappa = lstsq_min_norm(&factors.w, &mean);
    for (j, gj) in g.iter_mut().enumerate() {
        gj[0] = kappa[j];
    }
    DecoupledModel::new(factors.w.clone(), factors.v.clone(), g)
}
