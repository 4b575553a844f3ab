//! Multivariate polynomial maps over a graded-lexicographic monomial basis.
//!
//! Coefficient vectors drop the constant terms and are stacked output-major:
//! `[c_2..c_l of f_1, c_2..c_l of f_2, ...]`. Jacobians are vectorized
//! column-major, so the entry order is `J11, J21, .., Jn1, J12, ..`.

use std::collections::HashMap;

use nalgebra::{DMatrix, DVector};

use crate::{Error, Result};

/// Exponent multi-indices of all monomials in `m` variables of total degree
/// at most `d`, in graded lexicographic order with `u1 > u2 > .. > um`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MonomialBasis {
    m: usize,
    d: usize,
    exponents: Vec<Vec<u32>>,
}

impl MonomialBasis {
    /// For `m = d = 2` this is `[1, u1, u2, u1^2, u1 u2, u2^2]`.
    pub fn enumerate(m: usize, d: usize) -> Result<Self> {
        if m == 0 || d == 0 {
            return Err(Error::Domain(format!(
                "monomial basis needs m >= 1 and d >= 1 (got m={m}, d={d})"
            )));
        }
        let mut exponents = Vec::new();
        let mut current = vec![0u32; m];
        for degree in 0..=d as u32 {
            push_compositions(degree, 0, &mut current, &mut exponents);
        }
        Ok(Self { m, d, exponents })
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn d(&self) -> usize {
        self.d
    }

    /// Number of monomials `l = binom(m + d, m)`.
    pub fn len(&self) -> usize {
        self.exponents.len()
    }

    pub fn is_empty(&self) -> bool {
        self.exponents.is_empty()
    }

    pub fn exponents(&self) -> &[Vec<u32>] {
        &self.exponents
    }

    pub fn index_of(&self, exps: &[u32]) -> Option<usize> {
        self.exponents.iter().position(|e| e.as_slice() == exps)
    }

    /// Values of all monomials at `u`.
    pub fn monomials(&self, u: &[f64]) -> Vec<f64> {
        self.exponents.iter().map(|e| monomial(e, u)).collect()
    }

    /// `d/du_j` of every monomial, evaluated at `u`.
    pub fn monomial_partials(&self, j: usize, u: &[f64]) -> Vec<f64> {
        self.exponents
            .iter()
            .map(|e| {
                if e[j] == 0 {
                    return 0.0;
                }
                let mut lowered = e.clone();
                lowered[j] -= 1;
                f64::from(e[j]) * monomial(&lowered, u)
            })
            .collect()
    }

    fn check_point(&self, u: &[f64]) -> Result<()> {
        if u.len() != self.m {
            return Err(Error::dim("evaluation point", self.m, u.len()));
        }
        if u.iter().any(|x| !x.is_finite()) {
            return Err(Error::Domain("evaluation point has non-finite entries".into()));
        }
        Ok(())
    }
}

// Exponent vectors summing to `remaining` over positions `pos..`, largest
// leading exponent first.
fn push_compositions(remaining: u32, pos: usize, current: &mut Vec<u32>, out: &mut Vec<Vec<u32>>) {
    let m = current.len();
    if pos == m - 1 {
        current[pos] = remaining;
        out.push(current.clone());
        current[pos] = 0;
        return;
    }
    for e in (0..=remaining).rev() {
        current[pos] = e;
        push_compositions(remaining - e, pos + 1, current, out);
    }
    current[pos] = 0;
}

fn monomial(exps: &[u32], u: &[f64]) -> f64 {
    exps.iter()
        .zip(u)
        .map(|(&e, &x)| x.powi(e as i32))
        .product()
}

/// A polynomial vector function `f: R^m -> R^n`; row `i` of `coeffs` holds
/// the coefficients of `f_i` in basis order.
#[derive(Debug, Clone, PartialEq)]
pub struct PolyMap {
    basis: MonomialBasis,
    coeffs: DMatrix<f64>,
}

impl PolyMap {
    pub fn new(basis: MonomialBasis, coeffs: DMatrix<f64>) -> Result<Self> {
        if coeffs.ncols() != basis.len() {
            return Err(Error::dim("polynomial coefficient row length", basis.len(), coeffs.ncols()));
        }
        if coeffs.nrows() == 0 {
            return Err(Error::Domain("polynomial map needs at least one output".into()));
        }
        if coeffs.iter().any(|c| !c.is_finite()) {
            return Err(Error::Domain("polynomial coefficients must be finite".into()));
        }
        Ok(Self { basis, coeffs })
    }

    pub fn zeros(basis: MonomialBasis, n: usize) -> Self {
        let l = basis.len();
        Self {
            basis,
            coeffs: DMatrix::zeros(n, l),
        }
    }

    pub fn basis(&self) -> &MonomialBasis {
        &self.basis
    }

    pub fn coeffs(&self) -> &DMatrix<f64> {
        &self.coeffs
    }

    pub fn m(&self) -> usize {
        self.basis.m
    }

    pub fn n(&self) -> usize {
        self.coeffs.nrows()
    }

    pub fn eval(&self, u: &[f64]) -> Result<DVector<f64>> {
        self.basis.check_point(u)?;
        let mono = DVector::from_vec(self.basis.monomials(u));
        Ok(&self.coeffs * mono)
    }

    /// Exact Jacobian `df_i/du_j` by differentiating the monomials.
    pub fn jacobian(&self, u: &[f64]) -> Result<DMatrix<f64>> {
        self.basis.check_point(u)?;
        let mut jac = DMatrix::zeros(self.n(), self.m());
        for j in 0..self.m() {
            let partials = DVector::from_vec(self.basis.monomial_partials(j, u));
            jac.set_column(j, &(&self.coeffs * partials));
        }
        Ok(jac)
    }

    /// Non-constant coefficients, output-major.
    pub fn coeff_vector(&self) -> DVector<f64> {
        let l = self.basis.len();
        let n = self.n();
        DVector::from_fn((l - 1) * n, |idx, _| {
            let (i, q) = (idx / (l - 1), idx % (l - 1));
            self.coeffs[(i, q + 1)]
        })
    }

    pub fn constants(&self) -> DVector<f64> {
        self.coeffs.column(0).into_owned()
    }

    /// Inverse of [`PolyMap::coeff_vector`] given the constant terms.
    pub fn from_coeff_vector(
        basis: MonomialBasis,
        n: usize,
        values: &DVector<f64>,
        constants: &DVector<f64>,
    ) -> Result<Self> {
        let l = basis.len();
        if values.len() != (l - 1) * n {
            return Err(Error::dim("coefficient vector length", (l - 1) * n, values.len()));
        }
        if constants.len() != n {
            return Err(Error::dim("constant terms", n, constants.len()));
        }
        let coeffs = DMatrix::from_fn(n, l, |i, q| {
            if q == 0 {
                constants[i]
            } else {
                values[i * (l - 1) + q - 1]
            }
        });
        Self::new(basis, coeffs)
    }
}

/// Matrix `A(u)` with `vec(J(u)) = A(u) * coeff_vector(f)` for every map `f`
/// with `n` outputs over `basis`. Shape `(m n) x ((l - 1) n)`.
pub fn a_matrix(basis: &MonomialBasis, n: usize, u: &[f64]) -> Result<DMatrix<f64>> {
    basis.check_point(u)?;
    let m = basis.m;
    let l = basis.len();
    let mut a = DMatrix::zeros(m * n, (l - 1) * n);
    for j in 0..m {
        let partials = basis.monomial_partials(j, u);
        for i in 0..n {
            for q in 1..l {
                a[(i + j * n, i * (l - 1) + q - 1)] = partials[q];
            }
        }
    }
    Ok(a)
}

/// Expands `sum_j W[:, j] * g_j(V[:, j]^T u)` into a polynomial map over
/// `basis`. `g[j]` holds ascending-power coefficients, constant first.
pub fn compose_branches(
    basis: &MonomialBasis,
    w: &DMatrix<f64>,
    v: &DMatrix<f64>,
    g: &[Vec<f64>],
) -> Result<PolyMap> {
    let r = w.ncols();
    if v.ncols() != r || g.len() != r {
        return Err(Error::dim("branch count", r, format!("V has {}, g has {}", v.ncols(), g.len())));
    }
    if v.nrows() != basis.m {
        return Err(Error::dim("rows of V", basis.m, v.nrows()));
    }
    let index: HashMap<&[u32], usize> = basis
        .exponents
        .iter()
        .enumerate()
        .map(|(k, e)| (e.as_slice(), k))
        .collect();
    let l = basis.len();
    let mut coeffs = DMatrix::zeros(w.nrows(), l);
    for (j, gj) in g.iter().enumerate() {
        if gj.len() > basis.d + 1 {
            return Err(Error::dim("branch polynomial length", basis.d + 1, gj.len()));
        }
        // power[k] = (v_j^T u)^p in basis coordinates
        let mut power = vec![0.0; l];
        power[0] = 1.0;
        let mut branch = vec![0.0; l];
        for (p, &gp) in gj.iter().enumerate() {
            if p > 0 {
                let mut next = vec![0.0; l];
                for (k, &c) in power.iter().enumerate() {
                    if c == 0.0 {
                        continue;
                    }
                    let mut e = basis.exponents[k].clone();
                    for var in 0..basis.m {
                        e[var] += 1;
                        let target = index[e.as_slice()];
                        next[target] += c * v[(var, j)];
                        e[var] -= 1;
                    }
                }
                power = next;
            }
            for k in 0..l {
                branch[k] += gp * power[k];
            }
        }
        for i in 0..w.nrows() {
            for k in 0..l {
                coeffs[(i, k)] += w[(i, j)] * branch[k];
            }
        }
    }
    PolyMap::new(basis.clone(), coeffs)
}
