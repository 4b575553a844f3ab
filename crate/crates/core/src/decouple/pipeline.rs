use serde::{Deserialize, Serialize};

use super::als::{run_wals, FitReport, Weighting};
use super::branches::{reconstruct_branches, DecoupledModel};
use super::sampling::{build_jacobian_tensor, sample_points};
use super::{AlsConfig, WeightKind};
use crate::covariance::{sigma_dense, sigma_elementwise, sigma_slicewise, svd_split, weight_from, CoeffCovariance};
use crate::poly::PolyMap;
use crate::wls::pinv;
use crate::{Error, Result};

/// Coefficient-space errors of a decoupled model against the input map.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelMetrics {
    /// `||c(f) - c(model)|| / ||c(f)||` over the non-constant coefficients.
    pub coeff_rel_error: f64,
    /// `||constants(f) - constants(model)||`.
    pub constant_error: f64,
    /// `sqrt(e^T Σf^+ e)` with `e` the non-constant coefficient error.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weighted_coeff_error: Option<f64>,
}

/// Weighting for `weight_kind`, built from `Σf` propagated to the Jacobian
/// samples at `points`.
pub fn build_weighting(
    kind: WeightKind,
    f: &PolyMap,
    sigma_f: Option<&CoeffCovariance>,
    points: &[Vec<f64>],
    config: &AlsConfig,
) -> Result<Weighting> {
    let cov = match (kind, sigma_f) {
        (WeightKind::None, _) => return Ok(Weighting::None),
        (_, None) => {
            return Err(Error::Domain(format!(
                "weight kind {kind:?} needs a coefficient covariance"
            )))
        }
        (_, Some(cov)) => cov,
    };
    let expected = (f.basis().len() - 1) * f.n();
    if cov.dim() != expected {
        return Err(Error::dim("coefficient covariance size", expected, cov.dim()));
    }
    let (basis, n) = (f.basis(), f.n());
    Ok(match kind {
        WeightKind::None => unreachable!(),
        WeightKind::ElementWise => Weighting::FullRank(weight_from(&sigma_elementwise(cov, basis, n, points)?, false)?),
        WeightKind::SliceWise => Weighting::FullRank(weight_from(&sigma_slicewise(cov, basis, n, points)?, false)?),
        WeightKind::Dense => {
            let dense = sigma_dense(cov, basis, n, points)?;
            Weighting::Dense {
                split: svd_split(&dense.materialize(), config.rank_threshold)?,
                null_space_scale: config.null_space_scale,
            }
        }
    })
}

pub fn model_metrics(f: &PolyMap, model: &DecoupledModel, sigma_f: Option<&CoeffCovariance>, rank_threshold: f64) -> Result<ModelMetrics> {
    let composed = model.compose(f.basis())?;
    if composed.n() != f.n() {
        return Err(Error::dim("model outputs", f.n(), composed.n()));
    }
    let c = f.coeff_vector();
    let e = &c - composed.coeff_vector();
    let norm = c.norm();
    let coeff_rel_error = if norm > 0.0 { e.norm() / norm } else { e.norm() };
    let constant_error = (f.constants() - composed.constants()).norm();
    let weighted_coeff_error = match sigma_f {
        None => None,
        Some(cov) => {
            if cov.dim() != e.len() {
                return Err(Error::dim("coefficient covariance size", e.len(), cov.dim()));
            }
            let q = (e.transpose() * pinv(cov.matrix(), rank_threshold) * &e)[(0, 0)];
            Some(q.max(0.0).sqrt())
        }
    };
    Ok(ModelMetrics {
        coeff_rel_error,
        constant_error,
        weighted_coeff_error,
    })
}

/// Sample, stack the Jacobian tensor, build the weighting, run weighted ALS
/// and reconstruct the branches.
pub fn decouple_pipeline(f: &PolyMap, sigma_f: Option<&CoeffCovariance>, config: &AlsConfig) -> Result<(DecoupledModel, FitReport)> {
    config.validate()?;
    let basis = f.basis();
    let points = sample_points(f.m(), config.points_for(basis.len()), config.sampling, config.seed);
    let tensor = build_jacobian_tensor(f, &points)?;
    let weighting = build_weighting(config.weight_kind, f, sigma_f, &points, config)?;
    let (factors, mut report) = run_wals(&tensor, &weighting, config)?;
    let model = reconstruct_branches(&factors, f, &points, basis.d())?;
    report.metrics = Some(model_metrics(f, &model, sigma_f, config.rank_threshold)?);
    report.config = Some(config.clone());
    Ok((model, report))
}
