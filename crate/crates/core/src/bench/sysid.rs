//! Weighted versus unweighted decoupling of a noisy cubic map placed between
//! linear filters.
//!
//! The single input drives two input filters `L1`, `L2` whose outputs feed
//! the map; its two outputs pass through `R1`, `R2` and are summed. The
//! filters are first-order low-pass stand-ins (poles 0.7 and 0.75); only the
//! comparison across weightings matters, not their exact shape.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::multisine::{magnitude_db, multisine, MultisineSpec};
use crate::covariance::CoeffCovariance;
use crate::decouple::{decouple_pipeline, AlsConfig, DecoupledModel, ExitReason, WeightKind};
use crate::io::CovarianceFile;
use crate::poly::{MonomialBasis, PolyMap};
use crate::{Error, Result};

const SIGMA_F_JSON: &str = include_str!("../../data/sigma_f_sysid.json");

/// Absolute asymmetry tolerated in the transcribed covariance, which is
/// printed with one decimal.
pub const SIGMA_F_SYM_TOL: f64 = 0.15;

/// The two-output cubic. Each row lists `(exponents of u1, u2, coefficient)`.
const PAPER_F: [&[(u32, u32, f64)]; 2] = [
    &[
        (3, 0, 0.09),
        (2, 1, -3.3),
        (2, 0, 0.22),
        (1, 2, 5.0),
        (1, 1, -0.44),
        (1, 0, -0.25),
        (0, 3, -2.2),
        (0, 2, 0.41),
        (0, 1, 0.84),
    ],
    &[
        (3, 0, -0.042),
        (2, 1, 3.2),
        (2, 0, -0.21),
        (1, 2, -4.9),
        (1, 1, 0.45),
        (1, 0, -0.053),
        (0, 3, 2.3),
        (0, 2, -0.12),
        (0, 1, -0.27),
    ],
];

pub fn paper_poly() -> PolyMap {
    let basis = MonomialBasis::enumerate(2, 3).expect("valid basis");
    let mut coeffs = DMatrix::zeros(2, basis.len());
    for (i, terms) in PAPER_F.iter().enumerate() {
        for &(a, b, c) in terms.iter() {
            let q = basis.index_of(&[a, b]).expect("monomial of degree <= 3");
            coeffs[(i, q)] = c;
        }
    }
    PolyMap::new(basis, coeffs).expect("finite coefficients")
}

/// The transcribed 18x18 coefficient covariance, as printed.
pub fn paper_sigma_f_raw() -> DMatrix<f64> {
    let file: CovarianceFile = serde_json::from_str(SIGMA_F_JSON).expect("embedded covariance parses");
    file.to_matrix().expect("embedded covariance is 18x18")
}

/// The printed covariance, symmetrized and projected onto the PSD cone. The
/// one-decimal rounding leaves a few small negative eigenvalues.
pub fn paper_sigma_f() -> CoeffCovariance {
    CoeffCovariance::nearest_psd(paper_sigma_f_raw(), SIGMA_F_SYM_TOL).expect("embedded covariance is near symmetric")
}

/// `y[t] = pole * y[t-1] + (1 - pole) * x[t]`, unit DC gain.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LowPass {
    pub pole: f64,
}

impl LowPass {
    pub fn check(&self, name: &str) -> Result<()> {
        if !(self.pole.abs() < 1.0) {
            return Err(Error::UnstableFilter {
                name: name.to_string(),
                pole: self.pole,
            });
        }
        Ok(())
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        let mut state = 0.0;
        x.iter()
            .map(|&v| {
                state = self.pole * state + (1.0 - self.pole) * v;
                state
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FilterBank {
    pub l1: LowPass,
    pub l2: LowPass,
    pub r1: LowPass,
    pub r2: LowPass,
}

impl Default for FilterBank {
    fn default() -> Self {
        Self {
            l1: LowPass { pole: 0.7 },
            l2: LowPass { pole: 0.75 },
            r1: LowPass { pole: 0.7 },
            r2: LowPass { pole: 0.75 },
        }
    }
}

impl FilterBank {
    pub fn validate(&self) -> Result<()> {
        self.l1.check("L1")?;
        self.l2.check("L2")?;
        self.r1.check("R1")?;
        self.r2.check("R2")
    }
}

#[derive(Debug, Clone)]
pub struct SysIdSpec {
    pub f: PolyMap,
    pub sigma_f: CoeffCovariance,
    pub excitation: MultisineSpec,
    /// RMS of the excitation; zero gives a silent input.
    pub amplitude: f64,
    /// Periods simulated; only the last one is kept, so transients vanish.
    pub periods: usize,
    pub filters: FilterBank,
    /// Base decoupling settings; `weight_kind` is set per method.
    pub als: AlsConfig,
    pub methods: Vec<WeightKind>,
}

impl Default for SysIdSpec {
    fn default() -> Self {
        Self {
            f: paper_poly(),
            sigma_f: paper_sigma_f(),
            excitation: MultisineSpec::default(),
            amplitude: 1.0,
            periods: 3,
            filters: FilterBank::default(),
            als: AlsConfig { r: 2, ..AlsConfig::default() },
            methods: vec![WeightKind::None, WeightKind::ElementWise, WeightKind::SliceWise, WeightKind::Dense],
        }
    }
}

impl SysIdSpec {
    pub fn validate(&self) -> Result<()> {
        self.filters.validate()?;
        self.excitation.bins()?;
        self.als.validate()?;
        if self.f.m() != 2 || self.f.n() != 2 {
            return Err(Error::dim("map shape for the two-branch filter layout", "m=2, n=2", format!("m={}, n={}", self.f.m(), self.f.n())));
        }
        let expected = (self.f.basis().len() - 1) * self.f.n();
        if self.sigma_f.dim() != expected {
            return Err(Error::dim("coefficient covariance size", expected, self.sigma_f.dim()));
        }
        if !(self.amplitude >= 0.0 && self.amplitude.is_finite()) {
            return Err(Error::Domain("amplitude must be finite and non-negative".into()));
        }
        if self.periods == 0 {
            return Err(Error::Domain("at least one period must be simulated".into()));
        }
        Ok(())
    }

    fn excitation_signal(&self) -> Result<Vec<f64>> {
        let one = multisine(&self.excitation)?;
        let rms = (one.iter().map(|v| v * v).sum::<f64>() / one.len() as f64).sqrt();
        let scale = if rms > 0.0 { self.amplitude / rms } else { 0.0 };
        Ok(one.iter().cycle().take(one.len() * self.periods).map(|v| v * scale).collect())
    }

    /// Output over the last simulated period with `map` as the static
    /// nonlinearity.
    pub fn simulate<F>(&self, map: F) -> Result<Vec<f64>>
    where
        F: Fn(&[f64]) -> Result<DVector<f64>>,
    {
        let x = self.excitation_signal()?;
        let u1 = self.filters.l1.apply(&x);
        let u2 = self.filters.l2.apply(&x);
        let mut y1 = Vec::with_capacity(x.len());
        let mut y2 = Vec::with_capacity(x.len());
        for (a, b) in u1.iter().zip(&u2) {
            let y = map(&[*a, *b])?;
            y1.push(y[0]);
            y2.push(y[1]);
        }
        let z1 = self.filters.r1.apply(&y1);
        let z2 = self.filters.r2.apply(&y2);
        let p = self.excitation.period;
        let start = x.len() - p;
        Ok((start..x.len()).map(|t| z1[t] + z2[t]).collect())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodResult {
    pub method: WeightKind,
    /// RMS of the output error after removing its mean.
    pub rms_output_error: f64,
    pub coeff_rel_error: f64,
    pub weighted_coeff_error: f64,
    pub constant_error: f64,
    pub unweighted_residual: f64,
    pub iterations: usize,
    pub exit_reason: ExitReason,
    pub model: DecoupledModel,
    #[serde(skip)]
    pub output_error: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SysIdResult {
    pub methods: Vec<MethodResult>,
    /// Output over one period of the coupled system.
    pub reference_output: Vec<f64>,
    pub period: usize,
}

pub fn method_name(kind: WeightKind) -> &'static str {
    match kind {
        WeightKind::None => "none",
        WeightKind::ElementWise => "element",
        WeightKind::SliceWise => "slice",
        WeightKind::Dense => "dense",
    }
}

impl SysIdResult {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("method,rms_output_error,coeff_rel_error,weighted_coeff_error\n");
        for m in &self.methods {
            out.push_str(&format!(
                "{},{:e},{:e},{:e}\n",
                method_name(m.method),
                m.rms_output_error,
                m.coeff_rel_error,
                m.weighted_coeff_error
            ));
        }
        out
    }

    /// Magnitude spectra in dB of the reference output and of each method's
    /// output error, on normalized frequencies `k / period`.
    pub fn spectra_json(&self) -> serde_json::Value {
        let p = self.period as f64;
        let reference = magnitude_db(&self.reference_output);
        let frequency: Vec<f64> = (0..reference.len()).map(|k| k as f64 / p).collect();
        let mut methods = serde_json::Map::new();
        for m in &self.methods {
            methods.insert(method_name(m.method).to_string(), serde_json::json!(magnitude_db(&m.output_error)));
        }
        serde_json::json!({
            "frequency": frequency,
            "reference_magnitude_db": reference,
            "error_magnitude_db": methods,
        })
    }
}

fn ac_rms(x: &[f64]) -> f64 {
    let mean = x.iter().sum::<f64>() / x.len() as f64;
    (x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / x.len() as f64).sqrt()
}

/// Decouples the map once per method (in parallel) and compares each model
/// with the coupled map inside the filter chain.
pub fn run_sysid_comparison(spec: &SysIdSpec) -> Result<SysIdResult> {
    spec.validate()?;
    let reference = spec.simulate(|u| spec.f.eval(u))?;
    let methods = spec
        .methods
        .par_iter()
        .map(|&kind| {
            let config = AlsConfig { weight_kind: kind, ..spec.als.clone() };
            let (model, report) = decouple_pipeline(&spec.f, Some(&spec.sigma_f), &config)?;
            let out = spec.simulate(|u| model.eval(u))?;
            let err: Vec<f64> = out.iter().zip(&reference).map(|(a, b)| a - b).collect();
            let metrics = report.metrics.as_ref().expect("pipeline reports metrics");
            Ok(MethodResult {
                method: kind,
                rms_output_error: ac_rms(&err),
                coeff_rel_error: metrics.coeff_rel_error,
                weighted_coeff_error: metrics.weighted_coeff_error.expect("covariance given"),
                constant_error: metrics.constant_error,
                unweighted_residual: report.unweighted_residual,
                iterations: report.iterations,
                exit_reason: report.exit_reason,
                model,
                output_error: err,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(SysIdResult {
        methods,
        reference_output: reference,
        period: spec.excitation.period,
    })
}
