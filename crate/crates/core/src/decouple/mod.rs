//! Weighted alternating least squares for the Jacobian tensor, branch
//! reconstruction, and the end-to-end decoupling pipeline.

mod als;
mod branches;
mod pipeline;
mod sampling;

use serde::{Deserialize, Serialize};

pub use als::{
    als_update_unweighted, als_update_weighted_dense, als_update_weighted_fullrank, relative_step,
    run_wals, run_wals_from, weighted_cost, ExitReason, FitReport, Weighting,
};
pub use branches::{reconstruct_branches, DecoupledModel};
pub use pipeline::{build_weighting, decouple_pipeline, model_metrics, ModelMetrics};
pub use sampling::{build_jacobian_tensor, random_decoupled, sample_points};

/// Which covariance structure weights the decomposition.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum WeightKind {
    #[default]
    None,
    #[serde(alias = "element")]
    ElementWise,
    #[serde(alias = "slice")]
    SliceWise,
    Dense,
}

/// Distribution of the sampling points.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Sampling {
    /// i.i.d. standard normal coordinates.
    #[default]
    Normal,
    /// i.i.d. uniform coordinates on `[-1, 1]`.
    Uniform,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AlsConfig {
    /// Number of branches.
    pub r: usize,
    /// Sampling points; `None` means `10 l`.
    pub n_points: Option<usize>,
    pub tol_rel_step: f64,
    pub max_iters: usize,
    pub restarts: usize,
    pub seed: u64,
    pub weight_kind: WeightKind,
    pub sampling: Sampling,
    /// Scale of the null-space block in the dense-weight system.
    pub null_space_scale: f64,
    /// Relative eigenvalue cutoff for the dense covariance rank.
    pub rank_threshold: f64,
}

impl Default for AlsConfig {
    fn default() -> Self {
        Self {
            r: 1,
            n_points: None,
            tol_rel_step: 1e-8,
            max_iters: 500,
            restarts: 5,
            seed: 0,
            weight_kind: WeightKind::None,
            sampling: Sampling::Normal,
            null_space_scale: 1.0,
            rank_threshold: crate::covariance::DEFAULT_RANK_THRESHOLD,
        }
    }
}

impl AlsConfig {
    pub fn validate(&self) -> crate::Result<()> {
        let bad = |msg: &str| Err(crate::Error::Domain(msg.to_string()));
        if self.r == 0 {
            return bad("r must be at least 1");
        }
        if self.n_points == Some(0) {
            return bad("the number of sampling points must be at least 1");
        }
        if !(self.tol_rel_step >= 0.0) {
            return bad("tolerance must be non-negative");
        }
        if self.max_iters == 0 {
            return bad("max_iters must be at least 1");
        }
        if self.restarts == 0 {
            return bad("restarts must be at least 1");
        }
        if !(self.null_space_scale >= 0.0 && self.null_space_scale.is_finite()) {
            return bad("null_space_scale must be finite and non-negative");
        }
        Ok(())
    }

    pub fn points_for(&self, basis_len: usize) -> usize {
        self.n_points.unwrap_or(10 * basis_len)
    }
}
