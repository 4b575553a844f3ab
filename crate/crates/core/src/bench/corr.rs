//! Error correlations of a weighted CPD of random 2x2x2 tensors.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::pearson;
use crate::covariance::Weight;
use crate::decouple::{run_wals, AlsConfig, Weighting};
use crate::io::rows;
use crate::tensor::Tensor3;
use crate::{Error, Result};

pub const DIMS: (usize, usize, usize) = (2, 2, 2);

/// Almost diagonal 8x8 weight with one coupled pair (elements 2 and 5).
pub fn paper_weight() -> DMatrix<f64> {
    let mut w = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![0.74, 1.67, 0.96, 0.63, 1.0, 0.11, 0.77, 0.31]));
    w[(1, 4)] = 0.87;
    w[(4, 1)] = 0.87;
    w
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrExperimentSpec {
    #[serde(with = "rows")]
    pub weight: DMatrix<f64>,
    pub trials: usize,
    pub seed: u64,
    pub r: usize,
    pub max_iters: usize,
    pub tol_rel_step: f64,
    pub restarts: usize,
}

impl Default for CorrExperimentSpec {
    fn default() -> Self {
        Self {
            weight: paper_weight(),
            trials: 500,
            seed: 0,
            r: 2,
            max_iters: 500,
            tol_rel_step: 1e-8,
            restarts: 5,
        }
    }
}

impl CorrExperimentSpec {
    pub fn validate(&self) -> Result<()> {
        let len = DIMS.0 * DIMS.1 * DIMS.2;
        if self.weight.shape() != (len, len) {
            return Err(Error::dim("weight shape", "8x8", format!("{}x{}", self.weight.nrows(), self.weight.ncols())));
        }
        if (&self.weight - self.weight.transpose()).amax() > 1e-12 * self.weight.amax() {
            return Err(Error::NotSymmetric {
                asymmetry: (&self.weight - self.weight.transpose()).amax(),
                tolerance: 1e-12 * self.weight.amax(),
            });
        }
        if self.weight.clone().cholesky().is_none() {
            return Err(Error::NotPositiveDefinite);
        }
        if self.trials < 2 {
            return Err(Error::Domain("at least two trials are needed for a correlation".into()));
        }
        Ok(())
    }
}

/// Errors `e_q = t_q - t̂_q`, with `t_1..t_8` the column-major elements.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorRecord {
    pub trial: usize,
    pub errors: [f64; 8],
}

impl ErrorRecord {
    /// Error of element `t_q`, one-based.
    pub fn e(&self, q: usize) -> f64 {
        self.errors[q - 1]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrSummary {
    pub trials: usize,
    pub rho_2_5: f64,
    pub rho_3_8: f64,
    /// Trials whose ALS run ended on `max_iters`.
    pub max_iter_exits: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrResult {
    pub records: Vec<ErrorRecord>,
    pub summary: CorrSummary,
}

impl CorrResult {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("trial,e2,e5,e3,e8\n");
        for r in &self.records {
            out.push_str(&format!("{},{:e},{:e},{:e},{:e}\n", r.trial, r.e(2), r.e(5), r.e(3), r.e(8)));
        }
        out
    }

    /// Scatter data for both element pairs.
    pub fn scatter_json(&self) -> serde_json::Value {
        let col = |q: usize| self.records.iter().map(|r| r.e(q)).collect::<Vec<_>>();
        serde_json::json!({
            "correlated": {"x_e2": col(2), "y_e5": col(5), "rho": self.summary.rho_2_5},
            "uncorrelated": {"x_e3": col(3), "y_e8": col(8), "rho": self.summary.rho_3_8},
        })
    }
}

fn trial(spec: &CorrExperimentSpec, index: usize) -> Result<(ErrorRecord, bool)> {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    rng.set_stream(index as u64);
    let data: Vec<f64> = (0..8).map(|_| rng.random::<f64>()).collect();
    let tensor = Tensor3::from_vec(DIMS, data)?;
    let config = AlsConfig {
        r: spec.r,
        restarts: spec.restarts,
        max_iters: spec.max_iters,
        tol_rel_step: spec.tol_rel_step,
        seed: rng.random(),
        ..AlsConfig::default()
    };
    let weighting = Weighting::FullRank(Weight::Full(spec.weight.clone()));
    let (factors, report) = run_wals(&tensor, &weighting, &config)?;
    let diff = tensor.vec() - factors.reconstruct().vec();
    let mut errors = [0.0; 8];
    errors.copy_from_slice(diff.as_slice());
    Ok((ErrorRecord { trial: index, errors }, report.exit_reason == crate::decouple::ExitReason::MaxIters))
}

/// Decomposes `trials` i.i.d. uniform(0, 1) tensors with the weight and
/// correlates the element errors. Trials run in parallel; each has its own
/// RNG stream, so results do not depend on scheduling.
pub fn run_corr_experiment(spec: &CorrExperimentSpec) -> Result<CorrResult> {
    spec.validate()?;
    let outcomes = (0..spec.trials)
        .into_par_iter()
        .map(|i| trial(spec, i))
        .collect::<Result<Vec<_>>>()?;
    let max_iter_exits = outcomes.iter().filter(|(_, hit)| *hit).count();
    let records: Vec<ErrorRecord> = outcomes.into_iter().map(|(r, _)| r).collect();
    let col = |q: usize| records.iter().map(|r| r.e(q)).collect::<Vec<_>>();
    let summary = CorrSummary {
        trials: spec.trials,
        rho_2_5: pearson(&col(2), &col(5)),
        rho_3_8: pearson(&col(3), &col(8)),
        max_iter_exits,
    };
    Ok(CorrResult { records, summary })
}
