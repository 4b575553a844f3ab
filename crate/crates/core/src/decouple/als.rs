//! Alternating least-squares engines for the (weighted) CPD.
//!
//! Each factor update solves
//! `min_x || P_i vec(T) - (I_p ⊗ K_i) x ||^2_{P_i W P_i^T}` where `K_i` is the
//! Khatri-Rao product of the two fixed factors and `x = vec(F_i^T)`.
//!
//! For a rank-deficient dense covariance the update solves the stacked
//! system `[Q_i B_i; s U2^T P_i^T B_i] x ≈ [Q_i y_i; s U2^T P_i^T y_i]`. Its
//! normal matrix is `B_i^T P_i G P_i^T B_i` with the full-rank
//! `G = U1 D1^{-1} U1^T + s^2 U2 U2^T`, which is what [`run_wals`] uses.
//! [`als_update_weighted_dense`] keeps the literal stacked form.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::pipeline::ModelMetrics;
use super::AlsConfig;
use crate::covariance::{null_rows, q_factor, svd_split, JacCovariance, SvdSplit, Weight};
use crate::tensor::{kron, CpdFactors, Mode, PermutationSpec, Tensor3};
use crate::wls::{kron_normal_equations, lstsq_min_norm, pinv, solve_spd_or_pinv};
use crate::{Error, Result};

/// Weighting applied to the CPD cost.
#[derive(Debug, Clone, PartialEq)]
pub enum Weighting {
    None,
    /// Invertible weight (element-wise, slice-wise or any SPD matrix).
    FullRank(Weight),
    /// Pseudo-inverse weight of a rank-deficient covariance, plus the
    /// null-space equations scaled by `null_space_scale`.
    Dense { split: SvdSplit, null_space_scale: f64 },
}

impl Weighting {
    /// Dense weighting from a materialized covariance.
    pub fn dense_from(cov: &JacCovariance, rank_threshold: f64, null_space_scale: f64) -> Result<Self> {
        Ok(Weighting::Dense {
            split: svd_split(&cov.materialize(), rank_threshold)?,
            null_space_scale,
        })
    }

    fn check_len(&self, len: usize) -> Result<()> {
        let found = match self {
            Weighting::None => return Ok(()),
            Weighting::FullRank(w) => w.len(),
            Weighting::Dense { split, .. } => split.dim(),
        };
        if found != len {
            return Err(Error::dim("weight size", len, found));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExitReason {
    Tolerance,
    MaxIters,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    pub iterations: usize,
    /// Weighted cost at exit (`Q` seminorm for dense weights).
    pub final_cost: f64,
    /// Quantity the iteration minimizes; equals `final_cost` except for dense
    /// weights, where the null-space term is added.
    pub objective: f64,
    /// Squared Frobenius residual at exit, comparable across weightings.
    pub unweighted_residual: f64,
    pub rel_step: f64,
    pub exit_reason: ExitReason,
    pub best_restart: usize,
    pub restart_costs: Vec<f64>,
    pub cost_trace: Vec<f64>,
    /// Factor updates that fell back to a pseudo-inverse solve.
    pub pinv_fallbacks: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub config: Option<AlsConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub metrics: Option<ModelMetrics>,
}

fn residual(t: &Tensor3, f: &CpdFactors) -> DVector<f64> {
    t.vec() - f.reconstruct().vec()
}

/// Unweighted squared residual, weighted quadratic form, or the `Σ^+`
/// seminorm `||Q r||^2` for dense weights.
pub fn weighted_cost(t: &Tensor3, f: &CpdFactors, weighting: &Weighting) -> f64 {
    let r = residual(t, f);
    match weighting {
        Weighting::None => r.norm_squared(),
        Weighting::FullRank(w) => w.quadratic(&r),
        Weighting::Dense { split, .. } => q_seminorm(split, &r),
    }
}

fn q_seminorm(split: &SvdSplit, r: &DVector<f64>) -> f64 {
    let proj = split.u1.transpose() * r;
    proj.iter().zip(split.d1.iter()).map(|(p, d)| p * p / d).sum()
}

fn objective(t: &Tensor3, f: &CpdFactors, weighting: &Weighting) -> f64 {
    match weighting {
        Weighting::Dense { split, null_space_scale } => {
            let r = residual(t, f);
            let nulls = (split.u2.transpose() * &r).norm_squared();
            q_seminorm(split, &r) + null_space_scale * null_space_scale * nulls
        }
        _ => weighted_cost(t, f, weighting),
    }
}

/// Joint Frobenius norm of the factor change over the joint norm of the new
/// factors.
pub fn relative_step(prev: &CpdFactors, next: &CpdFactors) -> f64 {
    let delta = (&next.w - &prev.w).norm_squared() + (&next.v - &prev.v).norm_squared() + (&next.h - &prev.h).norm_squared();
    let denom = next.squared_norm();
    if denom == 0.0 {
        return if delta == 0.0 { 0.0 } else { f64::INFINITY };
    }
    (delta / denom).sqrt()
}

fn unvec_factor(x: &DVector<f64>, rows: usize, r: usize) -> DMatrix<f64> {
    // x = vec(F^T), F^T is r x rows
    DMatrix::from_fn(rows, r, |a, q| x[a * r + q])
}

fn check_dims(t: &Tensor3, f: &CpdFactors) -> Result<()> {
    if t.dims() != f.dims() {
        return Err(Error::dim("tensor vs factor dimensions", format!("{:?}", f.dims()), format!("{:?}", t.dims())));
    }
    Ok(())
}

/// Least-squares update of one factor with the others fixed. Returns the new
/// factor and whether the Khatri-Rao product was rank deficient.
pub fn als_update_unweighted(t: &Tensor3, f: &CpdFactors, mode: Mode) -> Result<(DMatrix<f64>, bool)> {
    check_dims(t, f)?;
    let kr = f.khatri_rao_for(mode);
    let unfolded = t.matricize(mode);
    let gram = kr.transpose() * &kr;
    let rhs = &unfolded * &kr;
    if let Some(ch) = gram.clone().cholesky() {
        let x = ch.solve(&rhs.transpose()).transpose();
        if x.iter().all(|v| v.is_finite()) {
            return Ok((x, false));
        }
    }
    log::warn!("Khatri-Rao product for {mode:?} is rank deficient; using the minimum-norm update");
    Ok((unfolded * pinv(&kr, 1e-13).transpose(), true))
}

/// Weighted update with an invertible weight given in `vec(T)` order; the
/// weight is permuted as `P W P^T` to match `vec(T(i)^T)`.
pub fn als_update_weighted_fullrank(
    t: &Tensor3,
    f: &CpdFactors,
    mode: Mode,
    weight: &Weight,
    perm: &PermutationSpec,
) -> Result<(DMatrix<f64>, bool)> {
    check_dims(t, f)?;
    if weight.len() != t.len() {
        return Err(Error::dim("weight size", t.len(), weight.len()));
    }
    if perm.mode() != mode || perm.dims() != t.dims() {
        return Err(Error::Domain("permutation does not match the updated mode".into()));
    }
    let g = perm.congruence(&weight.to_dense());
    Ok(solve_kron_weighted(t, f, mode, &g, perm))
}

fn solve_kron_weighted(t: &Tensor3, f: &CpdFactors, mode: Mode, permuted_weight: &DMatrix<f64>, perm: &PermutationSpec) -> (DMatrix<f64>, bool) {
    let k = f.khatri_rao_for(mode);
    let rows = f.factor(mode).nrows();
    let y = perm.apply(&t.vec());
    let (normal, rhs) = kron_normal_equations(permuted_weight, &k, rows, &y);
    let (x, fallback) = solve_spd_or_pinv(&normal, &rhs);
    let next = unvec_factor(&x, rows, f.rank());
    // The solve is an exact block minimizer, so it can only lose to the
    // current factor through roundoff in a singular system. Keep the old one then.
    let current = f.factor(mode);
    if block_cost(permuted_weight, &k, &y, &next) > block_cost(permuted_weight, &k, &y, current) {
        log::debug!("{mode:?} update did not lower the cost; keeping the previous factor");
        return (current.clone(), fallback);
    }
    (next, fallback)
}

// r^T G r with r = y - vec((K X^T)) in the permuted order
fn block_cost(g: &DMatrix<f64>, k: &DMatrix<f64>, y: &DVector<f64>, x: &DMatrix<f64>) -> f64 {
    let fitted = k * x.transpose();
    let r = y - DVector::from_column_slice(fitted.as_slice());
    r.dot(&(g * &r))
}

/// Dense-weight update in its literal stacked form, solved as a
/// minimum-norm least-squares problem through the SVD. The flag reports a
/// rank-deficient stacked matrix.
pub fn als_update_weighted_dense(
    t: &Tensor3,
    f: &CpdFactors,
    mode: Mode,
    split: &SvdSplit,
    perm: &PermutationSpec,
    null_space_scale: f64,
) -> Result<(DMatrix<f64>, bool)> {
    check_dims(t, f)?;
    if split.dim() != t.len() {
        return Err(Error::dim("covariance split size", t.len(), split.dim()));
    }
    let rows = f.factor(mode).nrows();
    let b = kron(&DMatrix::identity(rows, rows), &f.khatri_rao_for(mode));
    let y = perm.apply(&t.vec());
    let q = q_factor(split, perm);
    let z = null_rows(split, perm) * null_space_scale;
    let top = &q * &b;
    let bottom = &z * &b;
    let mut stacked = DMatrix::zeros(top.nrows() + bottom.nrows(), b.ncols());
    stacked.rows_mut(0, top.nrows()).copy_from(&top);
    stacked.rows_mut(top.nrows(), bottom.nrows()).copy_from(&bottom);
    let mut rhs = DVector::zeros(stacked.nrows());
    rhs.rows_mut(0, top.nrows()).copy_from(&(&q * &y));
    rhs.rows_mut(top.nrows(), bottom.nrows()).copy_from(&(&z * &y));

    let sv = stacked.clone().svd(false, false).singular_values;
    let smax = sv.max();
    let rank = sv.iter().filter(|&&s| s > 1e-13 * smax).count();
    let x = lstsq_min_norm(&stacked, &rhs);
    Ok((unvec_factor(&x, rows, f.rank()), rank < b.ncols()))
}

/// Per-mode permuted weights, built once per run.
struct Engine {
    perms: Vec<PermutationSpec>,
    weights: Option<Vec<DMatrix<f64>>>,
}

impl Engine {
    fn new(dims: (usize, usize, usize), weighting: &Weighting) -> Self {
        let perms: Vec<_> = Mode::ALL.iter().map(|&m| PermutationSpec::new(m, dims)).collect();
        let base = match weighting {
            Weighting::None => None,
            Weighting::FullRank(w) => Some(w.to_dense()),
            Weighting::Dense { split, null_space_scale } => {
                // U1 D1^{-1} U1^T + s^2 (I - U1 U1^T)
                let s2 = null_space_scale * null_space_scale;
                let coef = split.d1.map(|d| 1.0 / d - s2);
                let mut g = &split.u1 * DMatrix::from_diagonal(&coef) * split.u1.transpose();
                for i in 0..g.nrows() {
                    g[(i, i)] += s2;
                }
                Some((&g + g.transpose()) * 0.5)
            }
        };
        let weights = base.map(|g| perms.iter().map(|p| p.congruence(&g)).collect());
        Self { perms, weights }
    }

    fn update(&self, t: &Tensor3, f: &CpdFactors, mode: Mode) -> Result<(DMatrix<f64>, bool)> {
        match &self.weights {
            None => als_update_unweighted(t, f, mode),
            Some(ws) => Ok(solve_kron_weighted(t, f, mode, &ws[mode.index()], &self.perms[mode.index()])),
        }
    }
}

struct RunOutcome {
    factors: CpdFactors,
    report: FitReport,
}

fn iterate(t: &Tensor3, weighting: &Weighting, engine: &Engine, config: &AlsConfig, init: CpdFactors) -> Result<RunOutcome> {
    let mut f = init;
    let mut trace = vec![weighted_cost(t, &f, weighting)];
    let mut fallbacks = 0;
    let mut step = f64::INFINITY;
    let mut exit = ExitReason::MaxIters;
    let mut iterations = 0;
    for _ in 0..config.max_iters {
        let prev = f.clone();
        for mode in Mode::ALL {
            let (factor, fell_back) = engine.update(t, &f, mode)?;
            fallbacks += usize::from(fell_back);
            *f.factor_mut(mode) = factor;
        }
        f.balance();
        iterations += 1;
        let cost = weighted_cost(t, &f, weighting);
        trace.push(cost);
        step = relative_step(&prev, &f);
        if !cost.is_finite() {
            break;
        }
        if step < config.tol_rel_step {
            exit = ExitReason::Tolerance;
            break;
        }
    }
    let final_cost = *trace.last().expect("trace starts with the initial cost");
    let report = FitReport {
        iterations,
        final_cost,
        objective: objective(t, &f, weighting),
        unweighted_residual: residual(t, &f).norm_squared(),
        rel_step: step,
        exit_reason: exit,
        best_restart: 0,
        restart_costs: vec![final_cost],
        cost_trace: trace,
        pinv_fallbacks: fallbacks,
        config: None,
        metrics: None,
    };
    Ok(RunOutcome { factors: f, report })
}

fn random_init(dims: (usize, usize, usize), r: usize, seed: u64, restart: usize) -> CpdFactors {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(super::sampling::POINT_STREAM + 1 + restart as u64);
    let mut draw = |rows: usize| DMatrix::from_fn(rows, r, |_, _| StandardNormal.sample(&mut rng));
    let w = draw(dims.0);
    let v = draw(dims.1);
    let h = draw(dims.2);
    CpdFactors { w, v, h }
}

/// Weighted ALS from `config.restarts` random starts; the restart with the
/// lowest objective wins.
pub fn run_wals(t: &Tensor3, weighting: &Weighting, config: &AlsConfig) -> Result<(CpdFactors, FitReport)> {
    config.validate()?;
    weighting.check_len(t.len())?;
    let engine = Engine::new(t.dims(), weighting);
    let mut best: Option<(RunOutcome, usize)> = None;
    let mut restart_costs = Vec::with_capacity(config.restarts);
    for restart in 0..config.restarts {
        let init = random_init(t.dims(), config.r, config.seed, restart);
        let outcome = iterate(t, weighting, &engine, config, init)?;
        restart_costs.push(outcome.report.final_cost);
        if !outcome.report.objective.is_finite() {
            continue;
        }
        let better = best
            .as_ref()
            .is_none_or(|(b, _)| outcome.report.objective < b.report.objective);
        if better {
            best = Some((outcome, restart));
        }
    }
    let (mut outcome, restart) = best.ok_or_else(|| Error::Diverged {
        restarts: config.restarts,
        last_cost: restart_costs.last().copied().unwrap_or(f64::NAN),
    })?;
    outcome.report.best_restart = restart;
    outcome.report.restart_costs = restart_costs;
    Ok((outcome.factors, outcome.report))
}

/// Single ALS run from given initial factors.
pub fn run_wals_from(t: &Tensor3, weighting: &Weighting, config: &AlsConfig, init: CpdFactors) -> Result<(CpdFactors, FitReport)> {
    config.validate()?;
    weighting.check_len(t.len())?;
    check_dims(t, &init)?;
    let engine = Engine::new(t.dims(), weighting);
    let outcome = iterate(t, weighting, &engine, config, init)?;
    if !outcome.report.objective.is_finite() {
        return Err(Error::Diverged {
            restarts: 1,
            last_cost: outcome.report.final_cost,
        });
    }
    Ok((outcome.factors, outcome.report))
}
