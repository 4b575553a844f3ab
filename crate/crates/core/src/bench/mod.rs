//! Desk-scale experiments: error correlations of a weighted CPD, and a
//! comparison of weightings on a polynomial placed between linear filters.

pub mod corr;
pub mod multisine;
pub mod sysid;

pub use corr::{paper_weight, run_corr_experiment, CorrExperimentSpec, CorrResult, CorrSummary, ErrorRecord};
pub use multisine::{magnitude_db, multisine, spectrum, MultisineSpec};
pub use sysid::{run_sysid_comparison, FilterBank, LowPass, MethodResult, SysIdResult, SysIdSpec};

/// Pearson correlation; zero when either sample has no spread.
pub fn pearson(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma) * (x - ma);
        sbb += (y - mb) * (y - mb);
    }
    if saa == 0.0 || sbb == 0.0 {
        return 0.0;
    }
    sab / (saa * sbb).sqrt()
}

#[cfg(test)]
mod tests {
    use super::pearson;

    #[test]
    fn pearson_hand_values() {
        assert!((pearson(&[1.0, 2.0, 3.0], &[2.0, 4.0, 6.0]) - 1.0).abs() < 1e-15);
        assert!((pearson(&[1.0, 2.0, 3.0], &[3.0, 2.0, 1.0]) + 1.0).abs() < 1e-15);
        assert_eq!(pearson(&[1.0, 1.0], &[0.0, 5.0]), 0.0);
        // centered x = (-1, 0, 1), y = (1, -2, 1): orthogonal
        assert!(pearson(&[0.0, 1.0, 2.0], &[1.0, -2.0, 1.0]).abs() < 1e-15);
    }
}
