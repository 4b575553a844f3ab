//! Propagation of the coefficient covariance `Σf` to the covariance of the
//! vectorized Jacobian tensor, and the spectral split used by the
//! rank-deficient weighted solver.
//!
//! Since `vec(J(u_k)) = A(u_k) c`, the Jacobian covariance is the congruence
//! `A Σf A^T` with `A` the stack of the per-point `A(u_k)`. Three structural
//! variants are exposed: its diagonal (element-wise), its `mn x mn` diagonal
//! blocks (slice-wise), and the full matrix (dense), whose rank is at most
//! `(l - 1) n`.

use log::warn;
use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::poly::{a_matrix, MonomialBasis};
use crate::tensor::PermutationSpec;
use crate::wls::pinv;
use crate::{Error, Result};

/// Relative eigenvalue cutoff used for numerical rank decisions.
pub const DEFAULT_RANK_THRESHOLD: f64 = 1e-10;

const SYMMETRY_TOL: f64 = 1e-10;
const PSD_TOL: f64 = 1e-8;

/// Covariance of the non-constant coefficients, in coefficient-vector order.
#[derive(Debug, Clone, PartialEq)]
pub struct CoeffCovariance {
    matrix: DMatrix<f64>,
}

impl CoeffCovariance {
    /// Validates symmetry (up to `1e-10` relative) and positive
    /// semidefiniteness; the stored matrix is the symmetrized input.
    pub fn new(matrix: DMatrix<f64>) -> Result<Self> {
        let matrix = symmetrize(matrix, SYMMETRY_TOL)?;
        let eig = SymmetricEigen::new(matrix.clone()).eigenvalues;
        let max_eig = eig.max();
        let min_eig = eig.min();
        if min_eig < -PSD_TOL * max_eig.max(0.0) {
            return Err(Error::NotPsd { min_eig, max_eig });
        }
        Ok(Self { matrix })
    }

    /// Symmetrizes with an absolute asymmetry tolerance `sym_tol` and
    /// projects onto the PSD cone by clipping negative eigenvalues. Meant for
    /// matrices transcribed with rounding.
    pub fn nearest_psd(matrix: DMatrix<f64>, sym_tol: f64) -> Result<Self> {
        let asym = max_asymmetry(&matrix);
        if asym > sym_tol {
            return Err(Error::NotSymmetric {
                asymmetry: asym,
                tolerance: sym_tol,
            });
        }
        let sym = (&matrix + matrix.transpose()) * 0.5;
        let eig = SymmetricEigen::new(sym);
        let clipped = eig.eigenvalues.map(|x| x.max(0.0));
        let rebuilt = &eig.eigenvectors * DMatrix::from_diagonal(&clipped) * eig.eigenvectors.transpose();
        Ok(Self {
            matrix: (&rebuilt + rebuilt.transpose()) * 0.5,
        })
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    fn check(&self, basis: &MonomialBasis, n: usize) -> Result<()> {
        let expected = (basis.len() - 1) * n;
        if self.dim() != expected {
            return Err(Error::dim(
                "coefficient covariance",
                format!("{expected}x{expected}"),
                format!("{0}x{0}", self.dim()),
            ));
        }
        Ok(())
    }
}

fn max_asymmetry(m: &DMatrix<f64>) -> f64 {
    let mut worst = 0.0f64;
    for i in 0..m.nrows() {
        for j in 0..i {
            worst = worst.max((m[(i, j)] - m[(j, i)]).abs());
        }
    }
    worst
}

fn symmetrize(m: DMatrix<f64>, rel_tol: f64) -> Result<DMatrix<f64>> {
    if !m.is_square() {
        return Err(Error::dim("covariance matrix", "square", format!("{}x{}", m.nrows(), m.ncols())));
    }
    if m.iter().any(|x| !x.is_finite()) {
        return Err(Error::Domain("covariance entries must be finite".into()));
    }
    let scale = m.amax().max(1.0);
    let asym = max_asymmetry(&m);
    if asym > rel_tol * scale {
        return Err(Error::NotSymmetric {
            asymmetry: asym,
            tolerance: rel_tol * scale,
        });
    }
    Ok((&m + m.transpose()) * 0.5)
}

/// Structural form of the Jacobian-tensor covariance.
#[derive(Debug, Clone, PartialEq)]
pub enum JacCovKind {
    /// Variances of every entry of `vec(J)`.
    ElementWise(DVector<f64>),
    /// One `mn x mn` block per sampling point.
    SliceWise(Vec<DMatrix<f64>>),
    /// Factored as `A_stack Σf A_stack^T`.
    Dense {
        a_stack: DMatrix<f64>,
        sigma_f: DMatrix<f64>,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct JacCovariance {
    dims: (usize, usize, usize),
    kind: JacCovKind,
}

impl JacCovariance {
    pub fn dims(&self) -> (usize, usize, usize) {
        self.dims
    }

    pub fn kind(&self) -> &JacCovKind {
        &self.kind
    }

    pub fn len(&self) -> usize {
        self.dims.0 * self.dims.1 * self.dims.2
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Element-wise covariance from explicit variances.
    pub fn from_variances(dims: (usize, usize, usize), variances: DVector<f64>) -> Result<Self> {
        if variances.len() != dims.0 * dims.1 * dims.2 {
            return Err(Error::dim("variance vector", dims.0 * dims.1 * dims.2, variances.len()));
        }
        if variances.iter().any(|&v| v < 0.0 || !v.is_finite()) {
            return Err(Error::Domain("variances must be finite and non-negative".into()));
        }
        Ok(Self {
            dims,
            kind: JacCovKind::ElementWise(variances),
        })
    }

    /// Full `(mnN) x (mnN)` matrix in `vec(J)` order.
    pub fn materialize(&self) -> DMatrix<f64> {
        match &self.kind {
            JacCovKind::ElementWise(v) => DMatrix::from_diagonal(v),
            JacCovKind::SliceWise(blocks) => block_diagonal(blocks),
            JacCovKind::Dense { a_stack, sigma_f } => {
                let s = a_stack * sigma_f * a_stack.transpose();
                (&s + s.transpose()) * 0.5
            }
        }
    }
}

pub(crate) fn block_diagonal(blocks: &[DMatrix<f64>]) -> DMatrix<f64> {
    let total: usize = blocks.iter().map(|b| b.nrows()).sum();
    let mut out = DMatrix::zeros(total, total);
    let mut offset = 0;
    for b in blocks {
        out.view_mut((offset, offset), b.shape()).copy_from(b);
        offset += b.nrows();
    }
    out
}

fn per_point_a(sigma_f: &CoeffCovariance, basis: &MonomialBasis, n: usize, points: &[Vec<f64>]) -> Result<Vec<DMatrix<f64>>> {
    sigma_f.check(basis, n)?;
    if points.is_empty() {
        return Err(Error::Domain("at least one sampling point is required".into()));
    }
    points.iter().map(|u| a_matrix(basis, n, u)).collect()
}

/// Diagonal of the Jacobian covariance.
pub fn sigma_elementwise(sigma_f: &CoeffCovariance, basis: &MonomialBasis, n: usize, points: &[Vec<f64>]) -> Result<JacCovariance> {
    let blocks = per_point_a(sigma_f, basis, n, points)?;
    let mn = basis.m() * n;
    let l1 = basis.len() - 1;
    let s = sigma_f.matrix();
    let mut variances = DVector::zeros(mn * points.len());
    for (k, a) in blocks.iter().enumerate() {
        for row in 0..mn {
            // only the coefficient block of output i = row % n is non-zero
            let i = row % n;
            let coeffs = a.view((row, i * l1), (1, l1));
            let sub = s.view((i * l1, i * l1), (l1, l1));
            variances[k * mn + row] = (coeffs * sub * coeffs.transpose())[(0, 0)];
        }
    }
    Ok(JacCovariance {
        dims: (n, basis.m(), points.len()),
        kind: JacCovKind::ElementWise(variances),
    })
}

/// Block-diagonal covariance with blocks `A(u_k) Σf A(u_k)^T`.
pub fn sigma_slicewise(sigma_f: &CoeffCovariance, basis: &MonomialBasis, n: usize, points: &[Vec<f64>]) -> Result<JacCovariance> {
    let blocks = per_point_a(sigma_f, basis, n, points)?
        .into_iter()
        .map(|a| {
            let b = &a * sigma_f.matrix() * a.transpose();
            (&b + b.transpose()) * 0.5
        })
        .collect();
    Ok(JacCovariance {
        dims: (n, basis.m(), points.len()),
        kind: JacCovKind::SliceWise(blocks),
    })
}

/// Dense covariance, kept in factored form.
pub fn sigma_dense(sigma_f: &CoeffCovariance, basis: &MonomialBasis, n: usize, points: &[Vec<f64>]) -> Result<JacCovariance> {
    let blocks = per_point_a(sigma_f, basis, n, points)?;
    let mn = basis.m() * n;
    let mut a_stack = DMatrix::zeros(mn * points.len(), sigma_f.dim());
    for (k, a) in blocks.iter().enumerate() {
        a_stack.view_mut((k * mn, 0), a.shape()).copy_from(a);
    }
    Ok(JacCovariance {
        dims: (n, basis.m(), points.len()),
        kind: JacCovKind::Dense {
            a_stack,
            sigma_f: sigma_f.matrix().clone(),
        },
    })
}

/// Spectral split `Σ = U1 diag(D1) U1^T` with `U2` spanning the numerical
/// null space.
#[derive(Debug, Clone, PartialEq)]
pub struct SvdSplit {
    pub u1: DMatrix<f64>,
    pub u2: DMatrix<f64>,
    pub d1: DVector<f64>,
    pub threshold: f64,
}

impl SvdSplit {
    pub fn rank(&self) -> usize {
        self.d1.len()
    }

    pub fn dim(&self) -> usize {
        self.u1.nrows()
    }

    /// `U1 diag(D1) U1^T`.
    pub fn reconstruct(&self) -> DMatrix<f64> {
        &self.u1 * DMatrix::from_diagonal(&self.d1) * self.u1.transpose()
    }

    /// Pseudo-inverse `U1 diag(1/D1) U1^T`.
    pub fn pseudo_inverse(&self) -> DMatrix<f64> {
        let inv = self.d1.map(|x| 1.0 / x);
        &self.u1 * DMatrix::from_diagonal(&inv) * self.u1.transpose()
    }
}

/// Splits a symmetric PSD matrix at `rel_threshold * σ_max`. For a
/// symmetric PSD matrix the eigendecomposition is its SVD.
pub fn svd_split(sigma: &DMatrix<f64>, rel_threshold: f64) -> Result<SvdSplit> {
    let sym = symmetrize(sigma.clone(), SYMMETRY_TOL)?;
    let dim = sym.nrows();
    let eig = SymmetricEigen::new(sym);
    let mut order: Vec<usize> = (0..dim).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let sigma_max = order.first().map_or(0.0, |&i| eig.eigenvalues[i].max(0.0));
    let threshold = rel_threshold * sigma_max;
    let rank = order
        .iter()
        .take_while(|&&i| eig.eigenvalues[i] > threshold && eig.eigenvalues[i] > 0.0)
        .count();
    let gather = |idx: &[usize]| {
        let mut out = DMatrix::zeros(dim, idx.len());
        for (c, &i) in idx.iter().enumerate() {
            out.set_column(c, &eig.eigenvectors.column(i));
        }
        out
    };
    Ok(SvdSplit {
        u1: gather(&order[..rank]),
        u2: gather(&order[rank..]),
        d1: DVector::from_iterator(rank, order[..rank].iter().map(|&i| eig.eigenvalues[i])),
        threshold,
    })
}

/// `Q = D1^{-1/2} U1^T P^T`, so that `Q^T Q = P Σ^+ P^T`.
pub fn q_factor(split: &SvdSplit, perm: &PermutationSpec) -> DMatrix<f64> {
    let scale = split.d1.map(|x| x.sqrt().recip());
    // column index_map[s] of U1^T P^T is column s of U1^T
    let mut q = DMatrix::zeros(split.rank(), split.dim());
    for (s, &t) in perm.index_map().iter().enumerate() {
        for c in 0..split.rank() {
            q[(c, t)] = scale[c] * split.u1[(s, c)];
        }
    }
    q
}

/// `(U2)^T P^T`, the null-space rows for a permuted problem.
pub fn null_rows(split: &SvdSplit, perm: &PermutationSpec) -> DMatrix<f64> {
    let nulls = split.u2.ncols();
    let mut z = DMatrix::zeros(nulls, split.dim());
    for (s, &t) in perm.index_map().iter().enumerate() {
        for c in 0..nulls {
            z[(c, t)] = split.u2[(s, c)];
        }
    }
    z
}

/// Full-rank weight operator in `vec(J)` order.
#[derive(Debug, Clone, PartialEq)]
pub enum Weight {
    Diagonal(DVector<f64>),
    BlockDiagonal(Vec<DMatrix<f64>>),
    Full(DMatrix<f64>),
}

impl Weight {
    pub fn identity(len: usize) -> Self {
        Weight::Diagonal(DVector::from_element(len, 1.0))
    }

    pub fn len(&self) -> usize {
        match self {
            Weight::Diagonal(v) => v.len(),
            Weight::BlockDiagonal(b) => b.iter().map(|x| x.nrows()).sum(),
            Weight::Full(m) => m.nrows(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        match self {
            Weight::Diagonal(v) => DMatrix::from_diagonal(v),
            Weight::BlockDiagonal(b) => block_diagonal(b),
            Weight::Full(m) => m.clone(),
        }
    }

    /// `r^T W r`.
    pub fn quadratic(&self, r: &DVector<f64>) -> f64 {
        match self {
            Weight::Diagonal(v) => v.iter().zip(r.iter()).map(|(w, x)| w * x * x).sum(),
            Weight::BlockDiagonal(blocks) => {
                let mut offset = 0;
                let mut acc = 0.0;
                for b in blocks {
                    let seg = r.rows(offset, b.nrows());
                    acc += (seg.transpose() * b * seg)[(0, 0)];
                    offset += b.nrows();
                }
                acc
            }
            Weight::Full(m) => (r.transpose() * m * r)[(0, 0)],
        }
    }
}

/// Inverts an element-wise or slice-wise covariance into a weight.
///
/// With `strict`, a zero variance is an error; otherwise its weight is zero
/// (the pseudo-inverse). Singular slice blocks are pseudo-inverted with a
/// warning. Dense covariances are not inverted here.
pub fn weight_from(cov: &JacCovariance, strict: bool) -> Result<Weight> {
    match cov.kind() {
        JacCovKind::ElementWise(vars) => {
            let scale = vars.amax();
            let mut w = DVector::zeros(vars.len());
            for (idx, &v) in vars.iter().enumerate() {
                if v <= DEFAULT_RANK_THRESHOLD * scale || v == 0.0 {
                    if strict {
                        return Err(Error::SingularWeight { index: idx, value: v });
                    }
                    warn!("zero variance at element {idx}; its weight is set to zero");
                } else {
                    w[idx] = 1.0 / v;
                }
            }
            Ok(Weight::Diagonal(w))
        }
        JacCovKind::SliceWise(blocks) => {
            let inv = blocks
                .iter()
                .enumerate()
                .map(|(k, b)| match b.clone().cholesky() {
                    Some(ch) => {
                        let i = ch.inverse();
                        (&i + i.transpose()) * 0.5
                    }
                    None => {
                        warn!("covariance block of sampling point {k} is singular; using its pseudo-inverse");
                        pinv(b, DEFAULT_RANK_THRESHOLD)
                    }
                })
                .collect();
            Ok(Weight::BlockDiagonal(inv))
        }
        JacCovKind::Dense { .. } => Err(Error::Domain(
            "dense covariance is rank deficient; use its SVD split instead of a weight".into(),
        )),
    }
}
