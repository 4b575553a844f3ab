//! JSON file formats.
//!
//! * polynomial map: `{"m", "d", "n", "coeffs": [[...]; n]}`, each row holding
//!   the `l` coefficients of one output in graded-lex basis order;
//! * coefficient covariance: `{"order": "coeffvector", "dim", "matrix"}`;
//! * decoupled model: `{"W", "V", "g", "report"}`.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::covariance::CoeffCovariance;
use crate::decouple::{DecoupledModel, FitReport};
use crate::poly::{MonomialBasis, PolyMap};
use crate::{Error, Result};

/// Serde adapter storing a matrix as a list of rows.
pub mod rows {
    use nalgebra::DMatrix;
    use serde::{de::Error as _, Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(m: &DMatrix<f64>, s: S) -> Result<S::Ok, S::Error> {
        to_rows(m).serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<DMatrix<f64>, D::Error> {
        let rows = Vec::<Vec<f64>>::deserialize(d)?;
        from_rows(&rows).map_err(D::Error::custom)
    }

    pub fn to_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
        m.row_iter().map(|r| r.iter().copied().collect()).collect()
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<DMatrix<f64>, String> {
        let ncols = rows.first().map_or(0, Vec::len);
        if let Some((i, r)) = rows.iter().enumerate().find(|(_, r)| r.len() != ncols) {
            return Err(format!("row {i} has {} entries, expected {ncols}", r.len()));
        }
        Ok(DMatrix::from_fn(rows.len(), ncols, |i, j| rows[i][j]))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolyFile {
    pub m: usize,
    pub d: usize,
    pub n: usize,
    pub coeffs: Vec<Vec<f64>>,
}

impl PolyFile {
    pub fn from_poly(f: &PolyMap) -> Self {
        Self {
            m: f.m(),
            d: f.basis().d(),
            n: f.n(),
            coeffs: rows::to_rows(f.coeffs()),
        }
    }

    pub fn into_poly(self) -> Result<PolyMap> {
        let basis = MonomialBasis::enumerate(self.m, self.d)?;
        if self.coeffs.len() != self.n {
            return Err(Error::dim("polynomial outputs", self.n, self.coeffs.len()));
        }
        if let Some((i, row)) = self.coeffs.iter().enumerate().find(|(_, r)| r.len() != basis.len()) {
            return Err(Error::Parse(format!(
                "coefficient row {i} has {} entries, expected {} for m={}, d={}",
                row.len(),
                basis.len(),
                self.m,
                self.d
            )));
        }
        let coeffs = rows::from_rows(&self.coeffs).map_err(Error::Parse)?;
        PolyMap::new(basis, coeffs)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CovarianceFile {
    pub order: String,
    pub dim: usize,
    pub matrix: Vec<Vec<f64>>,
}

pub const COEFF_VECTOR_ORDER: &str = "coeffvector";

impl CovarianceFile {
    pub fn from_cov(cov: &CoeffCovariance) -> Self {
        Self {
            order: COEFF_VECTOR_ORDER.into(),
            dim: cov.dim(),
            matrix: rows::to_rows(cov.matrix()),
        }
    }

    pub fn to_matrix(&self) -> Result<DMatrix<f64>> {
        if self.order != COEFF_VECTOR_ORDER {
            return Err(Error::Parse(format!("unsupported covariance order {:?}", self.order)));
        }
        let m = rows::from_rows(&self.matrix).map_err(Error::Parse)?;
        if m.nrows() != self.dim || m.ncols() != self.dim {
            return Err(Error::dim("covariance matrix shape", format!("{0}x{0}", self.dim), format!("{}x{}", m.nrows(), m.ncols())));
        }
        Ok(m)
    }

    pub fn into_cov(self) -> Result<CoeffCovariance> {
        CoeffCovariance::new(self.to_matrix()?)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelFile {
    #[serde(flatten)]
    pub model: DecoupledModel,
    pub report: FitReport,
}

pub fn read_json<T: serde::de::DeserializeOwned>(path: &std::path::Path) -> Result<T> {
    let text = std::fs::read_to_string(path)?;
    Ok(serde_json::from_str(&text)?)
}

pub fn read_poly(path: &std::path::Path) -> Result<PolyMap> {
    read_json::<PolyFile>(path)?.into_poly()
}

/// Reads a covariance and checks it against the map's coefficient count.
pub fn read_cov_for(path: &std::path::Path, f: &PolyMap) -> Result<CoeffCovariance> {
    let file: CovarianceFile = read_json(path)?;
    let expected = (f.basis().len() - 1) * f.n();
    if file.dim != expected {
        return Err(Error::dim("covariance dimension vs polynomial coefficient count", expected, file.dim));
    }
    file.into_cov()
}
