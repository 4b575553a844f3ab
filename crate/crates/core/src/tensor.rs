//! Dense order-3 tensor kernels.
//!
//! Indexing is zero-based and column-major throughout: entry `(i, j, k)` of
//! an `n x m x N` tensor lives at linear position `i + j n + k n m`. The
//! unfoldings follow the Kolda ordering, which makes
//! `T(1) = W (H ⊙ V)^T`, `T(2) = V (H ⊙ W)^T` and `T(3) = H (V ⊙ W)^T`
//! hold for `T = [[W, V, H]]`.

use nalgebra::{DMatrix, DVector};

use crate::{Error, Result};

/// Tensor mode, i.e. which CPD factor is being addressed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Mode {
    /// Output mode, factor `W`.
    One,
    /// Input mode, factor `V`.
    Two,
    /// Sampling-point mode, factor `H`.
    Three,
}

impl Mode {
    pub const ALL: [Mode; 3] = [Mode::One, Mode::Two, Mode::Three];

    pub fn index(self) -> usize {
        match self {
            Mode::One => 0,
            Mode::Two => 1,
            Mode::Three => 2,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor3 {
    dims: (usize, usize, usize),
    data: Vec<f64>,
}

impl Tensor3 {
    pub fn zeros(dims: (usize, usize, usize)) -> Self {
        Self {
            dims,
            data: vec![0.0; dims.0 * dims.1 * dims.2],
        }
    }

    pub fn from_vec(dims: (usize, usize, usize), data: Vec<f64>) -> Result<Self> {
        if data.len() != dims.0 * dims.1 * dims.2 {
            return Err(Error::dim("tensor data length", dims.0 * dims.1 * dims.2, data.len()));
        }
        if data.iter().any(|x| !x.is_finite()) {
            return Err(Error::Domain("tensor entries must be finite".into()));
        }
        Ok(Self { dims, data })
    }

    /// Stacks `n x m` matrices as frontal slices.
    pub fn stack(slices: &[DMatrix<f64>]) -> Result<Self> {
        let first = slices
            .first()
            .ok_or_else(|| Error::Domain("cannot stack zero slices".into()))?;
        let (n, m) = first.shape();
        let mut data = Vec::with_capacity(n * m * slices.len());
        for s in slices {
            if s.shape() != (n, m) {
                return Err(Error::dim("frontal slice shape", format!("{n}x{m}"), format!("{}x{}", s.nrows(), s.ncols())));
            }
            data.extend_from_slice(s.as_slice());
        }
        Self::from_vec((n, m, slices.len()), data)
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        self.dims
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize, k: usize) -> f64 {
        let (n, m, _) = self.dims;
        self.data[i + j * n + k * n * m]
    }

    pub fn slice(&self, k: usize) -> DMatrix<f64> {
        let (n, m, _) = self.dims;
        DMatrix::from_column_slice(n, m, &self.data[k * n * m..(k + 1) * n * m])
    }

    pub fn vec(&self) -> DVector<f64> {
        DVector::from_column_slice(&self.data)
    }

    pub fn norm(&self) -> f64 {
        self.data.iter().map(|x| x * x).sum::<f64>().sqrt()
    }

    /// Mode-`mode` unfolding: `n x (m N)`, `m x (n N)` or `N x (n m)`.
    pub fn matricize(&self, mode: Mode) -> DMatrix<f64> {
        let (n, m, nn) = self.dims;
        match mode {
            Mode::One => DMatrix::from_fn(n, m * nn, |i, c| self.get(i, c % m, c / m)),
            Mode::Two => DMatrix::from_fn(m, n * nn, |j, c| self.get(c % n, j, c / n)),
            Mode::Three => DMatrix::from_fn(nn, n * m, |k, c| self.get(c % n, c / n, k)),
        }
    }
}

/// Factor matrices of a rank-`r` CPD `sum_q w_q ∘ v_q ∘ h_q`.
#[derive(Debug, Clone, PartialEq)]
pub struct CpdFactors {
    pub w: DMatrix<f64>,
    pub v: DMatrix<f64>,
    pub h: DMatrix<f64>,
}

impl CpdFactors {
    pub fn new(w: DMatrix<f64>, v: DMatrix<f64>, h: DMatrix<f64>) -> Result<Self> {
        let r = w.ncols();
        if r == 0 || v.ncols() != r || h.ncols() != r {
            return Err(Error::dim(
                "CPD factor column counts",
                "equal and >= 1",
                format!("W {}, V {}, H {}", w.ncols(), v.ncols(), h.ncols()),
            ));
        }
        Ok(Self { w, v, h })
    }

    pub fn rank(&self) -> usize {
        self.w.ncols()
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        (self.w.nrows(), self.v.nrows(), self.h.nrows())
    }

    pub fn factor(&self, mode: Mode) -> &DMatrix<f64> {
        match mode {
            Mode::One => &self.w,
            Mode::Two => &self.v,
            Mode::Three => &self.h,
        }
    }

    pub fn factor_mut(&mut self, mode: Mode) -> &mut DMatrix<f64> {
        match mode {
            Mode::One => &mut self.w,
            Mode::Two => &mut self.v,
            Mode::Three => &mut self.h,
        }
    }

    /// Khatri-Rao product of the two fixed factors for a `mode` update:
    /// `H ⊙ V`, `H ⊙ W` or `V ⊙ W`.
    pub fn khatri_rao_for(&self, mode: Mode) -> DMatrix<f64> {
        match mode {
            Mode::One => khatri_rao(&self.h, &self.v),
            Mode::Two => khatri_rao(&self.h, &self.w),
            Mode::Three => khatri_rao(&self.v, &self.w),
        }
    }

    pub fn reconstruct(&self) -> Tensor3 {
        let (n, m, nn) = self.dims();
        let r = self.rank();
        let mut data = vec![0.0; n * m * nn];
        for k in 0..nn {
            for j in 0..m {
                for q in 0..r {
                    let vh = self.v[(j, q)] * self.h[(k, q)];
                    if vh == 0.0 {
                        continue;
                    }
                    let base = j * n + k * n * m;
                    for i in 0..n {
                        data[base + i] += self.w[(i, q)] * vh;
                    }
                }
            }
        }
        Tensor3 { dims: (n, m, nn), data }
    }

    pub fn squared_norm(&self) -> f64 {
        self.w.norm_squared() + self.v.norm_squared() + self.h.norm_squared()
    }

    /// Rescales each rank-one term so its three vectors share the same norm.
    /// The represented tensor is unchanged.
    pub fn balance(&mut self) {
        for q in 0..self.rank() {
            let norms = [
                self.w.column(q).norm(),
                self.v.column(q).norm(),
                self.h.column(q).norm(),
            ];
            if norms.iter().any(|&x| x == 0.0 || !x.is_finite()) {
                continue;
            }
            let target = (norms[0] * norms[1] * norms[2]).cbrt();
            self.w.column_mut(q).scale_mut(target / norms[0]);
            self.v.column_mut(q).scale_mut(target / norms[1]);
            self.h.column_mut(q).scale_mut(target / norms[2]);
        }
    }
}

/// Column-wise Kronecker product of `a` (`p x r`) and `b` (`q x r`); row
/// `ia q + ib` of column `c` is `a[ia, c] b[ib, c]`.
pub fn khatri_rao(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    assert_eq!(a.ncols(), b.ncols(), "Khatri-Rao operands need equal column counts");
    let q = b.nrows();
    DMatrix::from_fn(a.nrows() * q, a.ncols(), |row, c| a[(row / q, c)] * b[(row % q, c)])
}

/// Fallible variant of [`khatri_rao`].
pub fn try_khatri_rao(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if a.ncols() != b.ncols() {
        return Err(Error::dim("Khatri-Rao column count", a.ncols(), b.ncols()));
    }
    Ok(khatri_rao(a, b))
}

pub fn kron(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    a.kronecker(b)
}

/// Column-major vectorization.
pub fn vec(m: &DMatrix<f64>) -> DVector<f64> {
    DVector::from_column_slice(m.as_slice())
}

/// Index map realizing `P vec(T) = vec(T(mode)^T)` for a tensor of `dims`.
///
/// `index_map[s]` is the position that source entry `s` of `vec(T)` takes in
/// the permuted vector. Mode three is the identity.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PermutationSpec {
    mode: Mode,
    dims: (usize, usize, usize),
    index_map: Vec<usize>,
    inverse: Vec<usize>,
}

impl PermutationSpec {
    pub fn new(mode: Mode, dims: (usize, usize, usize)) -> Self {
        let (n, m, nn) = dims;
        let total = n * m * nn;
        let mut index_map = vec![0; total];
        for k in 0..nn {
            for j in 0..m {
                for i in 0..n {
                    let s = i + j * n + k * n * m;
                    index_map[s] = match mode {
                        // T(1)^T is (mN) x n with entry (j + k m, i)
                        Mode::One => (j + k * m) + i * m * nn,
                        // T(2)^T is (nN) x m with entry (i + k n, j)
                        Mode::Two => (i + k * n) + j * n * nn,
                        Mode::Three => s,
                    };
                }
            }
        }
        let mut inverse = vec![0; total];
        for (s, &t) in index_map.iter().enumerate() {
            inverse[t] = s;
        }
        Self {
            mode,
            dims,
            index_map,
            inverse,
        }
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        self.dims
    }

    pub fn index_map(&self) -> &[usize] {
        &self.index_map
    }

    pub fn len(&self) -> usize {
        self.index_map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.index_map.is_empty()
    }

    /// `P x`.
    pub fn apply(&self, x: &DVector<f64>) -> DVector<f64> {
        DVector::from_fn(x.len(), |t, _| x[self.inverse[t]])
    }

    /// `P^T x`.
    pub fn apply_transpose(&self, x: &DVector<f64>) -> DVector<f64> {
        DVector::from_fn(x.len(), |s, _| x[self.index_map[s]])
    }

    /// `P M`: row `s` of `M` moves to row `index_map[s]`.
    pub fn permute_rows(&self, m: &DMatrix<f64>) -> DMatrix<f64> {
        DMatrix::from_fn(m.nrows(), m.ncols(), |t, c| m[(self.inverse[t], c)])
    }

    /// `P^T M`.
    pub fn permute_rows_transpose(&self, m: &DMatrix<f64>) -> DMatrix<f64> {
        DMatrix::from_fn(m.nrows(), m.ncols(), |s, c| m[(self.index_map[s], c)])
    }

    /// `P S P^T` by gathering rows and columns; `P` is never materialized.
    pub fn congruence(&self, s: &DMatrix<f64>) -> DMatrix<f64> {
        DMatrix::from_fn(s.nrows(), s.ncols(), |a, b| s[(self.inverse[a], self.inverse[b])])
    }

    /// Dense `P`, for tests and small diagnostics.
    pub fn to_matrix(&self) -> DMatrix<f64> {
        let total = self.len();
        let mut p = DMatrix::zeros(total, total);
        for (s, &t) in self.index_map.iter().enumerate() {
            p[(t, s)] = 1.0;
        }
        p
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_matrix(rng: &mut ChaCha8Rng, r: usize, c: usize) -> DMatrix<f64> {
        DMatrix::from_fn(r, c, |_, _| rng.random_range(-1.0..1.0))
    }

    fn random_tensor(rng: &mut ChaCha8Rng, dims: (usize, usize, usize)) -> Tensor3 {
        let data = (0..dims.0 * dims.1 * dims.2).map(|_| rng.random_range(-1.0..1.0)).collect();
        Tensor3::from_vec(dims, data).unwrap()
    }

    // t_q = q, laid out as the two 2x2 frontal slices [t1 t3; t2 t4], [t5 t7; t6 t8]
    fn numbered() -> Tensor3 {
        let s1 = DMatrix::from_row_slice(2, 2, &[1.0, 3.0, 2.0, 4.0]);
        let s2 = DMatrix::from_row_slice(2, 2, &[5.0, 7.0, 6.0, 8.0]);
        Tensor3::stack(&[s1, s2]).unwrap()
    }

    #[test]
    fn stack_layout_follows_numbering() {
        let t = numbered();
        assert_eq!(t.dims(), (2, 2, 2));
        assert_eq!(t.as_slice(), &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0]);
        assert_eq!(t.slice(1), DMatrix::from_row_slice(2, 2, &[5.0, 7.0, 6.0, 8.0]));
    }

    #[test]
    fn stack_index_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let slices: Vec<_> = (0..3).map(|_| random_matrix(&mut rng, 2, 4)).collect();
        let t = Tensor3::stack(&slices).unwrap();
        for k in 0..3 {
            for i in 0..2 {
                for j in 0..4 {
                    assert_eq!(t.get(i, j, k), slices[k][(i, j)]);
                }
            }
        }
    }

    #[test]
    fn stack_rejects_mismatched_shapes() {
        let a = DMatrix::zeros(2, 2);
        let b = DMatrix::zeros(2, 3);
        assert!(matches!(Tensor3::stack(&[a, b]), Err(Error::Dimension { .. })));
        assert!(Tensor3::stack(&[]).is_err());
    }

    #[test]
    fn reconstruct_small_cases() {
        let e1 = DMatrix::from_column_slice(2, 1, &[1.0, 0.0]);
        let f = CpdFactors::new(e1.clone(), e1.clone(), e1).unwrap();
        let t = f.reconstruct();
        assert_eq!(t.as_slice(), &[1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0]);

        let f = CpdFactors::new(
            DMatrix::from_column_slice(2, 1, &[1.0, 2.0]),
            DMatrix::from_column_slice(2, 1, &[3.0, 4.0]),
            DMatrix::from_column_slice(2, 1, &[5.0, 6.0]),
        )
        .unwrap();
        assert_eq!(f.reconstruct().get(1, 0, 1), 36.0);
    }

    #[test]
    fn reconstruct_triple_loop_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let f = CpdFactors::new(random_matrix(&mut rng, 3, 2), random_matrix(&mut rng, 4, 2), random_matrix(&mut rng, 5, 2)).unwrap();
        let t = f.reconstruct();
        for i in 0..3 {
            for j in 0..4 {
                for k in 0..5 {
                    let expect: f64 = (0..2).map(|q| f.w[(i, q)] * f.v[(j, q)] * f.h[(k, q)]).sum();
                    assert!((t.get(i, j, k) - expect).abs() < 1e-15);
                }
            }
        }
    }

    #[test]
    fn mode_three_of_numbering() {
        let t3 = numbered().matricize(Mode::Three);
        assert_eq!(t3, DMatrix::from_row_slice(2, 4, &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0]));
    }

    #[test]
    fn single_slice_mode_one_is_the_slice() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let s = random_matrix(&mut rng, 3, 2);
        let t = Tensor3::stack(std::slice::from_ref(&s)).unwrap();
        assert_eq!(t.matricize(Mode::One), s);
    }

    #[test]
    fn unfoldings_match_cpd_identities() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..10 {
            let r = rng.random_range(1..4);
            let f = CpdFactors::new(random_matrix(&mut rng, 3, r), random_matrix(&mut rng, 2, r), random_matrix(&mut rng, 4, r)).unwrap();
            let t = f.reconstruct();
            let d1 = t.matricize(Mode::One) - &f.w * khatri_rao(&f.h, &f.v).transpose();
            let d2 = t.matricize(Mode::Two) - &f.v * khatri_rao(&f.h, &f.w).transpose();
            let d3 = t.matricize(Mode::Three) - &f.h * khatri_rao(&f.v, &f.w).transpose();
            assert!(d1.norm() < 1e-12 && d2.norm() < 1e-12 && d3.norm() < 1e-12);
        }
    }

    #[test]
    fn khatri_rao_definitions() {
        let a = DMatrix::from_column_slice(2, 1, &[1.0, 2.0]);
        let b = DMatrix::from_column_slice(2, 1, &[3.0, 4.0]);
        assert_eq!(khatri_rao(&a, &b).as_slice(), &[3.0, 4.0, 6.0, 8.0]);

        let i2 = DMatrix::<f64>::identity(2, 2);
        let expect = DMatrix::from_row_slice(4, 2, &[1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 1.0]);
        assert_eq!(khatri_rao(&i2, &i2), expect);

        assert!(try_khatri_rao(&a, &i2).is_err());
    }

    #[test]
    fn khatri_rao_columns_are_kronecker() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let a = random_matrix(&mut rng, 3, 4);
        let b = random_matrix(&mut rng, 5, 4);
        let kr = khatri_rao(&a, &b);
        for q in 0..4 {
            let col = kron(&DMatrix::from_column_slice(3, 1, a.column(q).as_slice()), &DMatrix::from_column_slice(5, 1, b.column(q).as_slice()));
            assert_eq!(kr.column(q).into_owned(), col.column(0).into_owned());
        }
    }

    #[test]
    fn vec_and_kron() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 3.0, 2.0, 4.0]);
        assert_eq!(vec(&m).as_slice(), &[1.0, 2.0, 3.0, 4.0]);

        let k = kron(&DMatrix::identity(2, 2), &m);
        assert_eq!(k.view((0, 0), (2, 2)), m);
        assert_eq!(k.view((2, 2), (2, 2)), m);
        assert!(k.view((0, 2), (2, 2)).iter().all(|&x| x == 0.0));
        assert!(k.view((2, 0), (2, 2)).iter().all(|&x| x == 0.0));

        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let (a, x, b) = (random_matrix(&mut rng, 3, 3), random_matrix(&mut rng, 3, 3), random_matrix(&mut rng, 3, 3));
        let lhs = vec(&(&a * &x * &b));
        let rhs = kron(&b.transpose(), &a) * vec(&x);
        assert!((lhs - rhs).norm() < 1e-12);
    }

    #[test]
    fn permutation_mode_three_is_identity() {
        let p = PermutationSpec::new(Mode::Three, (2, 3, 4));
        assert!(p.index_map().iter().enumerate().all(|(s, &t)| s == t));
    }

    #[test]
    fn permutation_mode_one_numbering() {
        let t = numbered();
        let p = PermutationSpec::new(Mode::One, (2, 2, 2));
        let permuted = p.apply(&t.vec());
        // T(1) = [t1 t3 t5 t7; t2 t4 t6 t8], so vec(T(1)^T) = (t1,t3,t5,t7,t2,t4,t6,t8)
        assert_eq!(permuted.as_slice(), &[1.0, 3.0, 5.0, 7.0, 2.0, 4.0, 6.0, 8.0]);
        assert_eq!(permuted, vec(&t.matricize(Mode::One).transpose()));
    }

    #[test]
    fn permutation_matches_matricize_for_all_modes() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..20 {
            let dims = (rng.random_range(1..4), rng.random_range(1..4), rng.random_range(1..5));
            let t = random_tensor(&mut rng, dims);
            for mode in Mode::ALL {
                let p = PermutationSpec::new(mode, dims);
                let unfolded = t.matricize(mode);
                assert_eq!(p.apply(&t.vec()), vec(&unfolded.transpose()));
                assert_eq!(p.apply_transpose(&p.apply(&t.vec())), t.vec());
                assert!((unfolded.norm() - t.norm()).abs() < 1e-12);
                let dense = p.to_matrix();
                assert_eq!(&dense * t.vec(), p.apply(&t.vec()));
            }
        }
    }

    #[test]
    fn permutation_is_bijection() {
        let p = PermutationSpec::new(Mode::Two, (3, 2, 5));
        let mut seen = p.index_map().to_vec();
        seen.sort();
        assert_eq!(seen, (0..30).collect::<Vec<_>>());
    }

    #[test]
    fn congruence_matches_dense_product() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let dims = (2, 3, 2);
        let s = random_matrix(&mut rng, 12, 12);
        for mode in Mode::ALL {
            let p = PermutationSpec::new(mode, dims);
            let dense = p.to_matrix();
            assert_eq!(p.congruence(&s), &dense * &s * dense.transpose());
            let m = random_matrix(&mut rng, 12, 3);
            assert_eq!(p.permute_rows(&m), &dense * &m);
            assert_eq!(p.permute_rows_transpose(&m), dense.transpose() * &m);
        }
    }

    #[test]
    fn balance_keeps_tensor() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let mut f = CpdFactors::new(random_matrix(&mut rng, 2, 2) * 10.0, random_matrix(&mut rng, 3, 2), random_matrix(&mut rng, 4, 2) * 0.1).unwrap();
        let before = f.reconstruct();
        f.balance();
        let after = f.reconstruct();
        let diff: f64 = before.as_slice().iter().zip(after.as_slice()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(diff < 1e-13);
        for q in 0..2 {
            assert!((f.w.column(q).norm() - f.h.column(q).norm()).abs() < 1e-12);
        }
    }

    proptest::proptest! {
        #[test]
        fn reconstruct_is_multilinear(seed in 0u64..500, alpha in -4.0f64..4.0) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let f = CpdFactors::new(random_matrix(&mut rng, 2, 2), random_matrix(&mut rng, 3, 2), random_matrix(&mut rng, 2, 2)).unwrap();
            let mut scaled = f.clone();
            scaled.w.column_mut(0).scale_mut(alpha);
            let term = |g: &CpdFactors, q: usize| {
                CpdFactors::new(g.w.columns(q, 1).into_owned(), g.v.columns(q, 1).into_owned(), g.h.columns(q, 1).into_owned()).unwrap().reconstruct()
            };
            let t0 = term(&f, 0);
            let s0 = term(&scaled, 0);
            for (a, b) in t0.as_slice().iter().zip(s0.as_slice()) {
                proptest::prop_assert!((a * alpha - b).abs() < 1e-12);
            }
            let t1 = term(&f, 1);
            let full = scaled.reconstruct();
            for idx in 0..full.len() {
                proptest::prop_assert!((full.as_slice()[idx] - s0.as_slice()[idx] - t1.as_slice()[idx]).abs() < 1e-12);
            }
        }
    }
}
