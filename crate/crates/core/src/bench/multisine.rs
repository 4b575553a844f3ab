use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rustfft::{num_complex::Complex, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Random-phase multisine: `lines` unit-amplitude cosines on DFT bins of a
/// `period`-sample record, spread evenly over the normalized band
/// `(band.0, band.1)` (cycles per sample, Nyquist at 0.5).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MultisineSpec {
    pub period: usize,
    pub lines: usize,
    pub band: (f64, f64),
    pub seed: u64,
}

impl Default for MultisineSpec {
    fn default() -> Self {
        Self {
            period: 1000,
            lines: 6,
            band: (0.02, 0.12),
            seed: 0,
        }
    }
}

impl MultisineSpec {
    /// Excited DFT bins.
    pub fn bins(&self) -> Result<Vec<usize>> {
        let (lo, hi) = self.band;
        if self.lines == 0 {
            return Err(Error::Domain("a multisine needs at least one line".into()));
        }
        if !(lo > 0.0 && hi < 0.5 && lo <= hi) {
            return Err(Error::Domain(format!("band ({lo}, {hi}) must lie inside (0, 0.5)")));
        }
        let p = self.period as f64;
        let first = (lo * p - 1e-9).ceil() as usize;
        let last = (hi * p + 1e-9).floor() as usize;
        if first == 0 || last < first || 2 * last >= self.period {
            return Err(Error::Domain(format!("band ({lo}, {hi}) holds no bins for period {}", self.period)));
        }
        if self.lines == 1 {
            return Ok(vec![first]);
        }
        let span = (last - first) as f64;
        let mut bins: Vec<usize> = (0..self.lines)
            .map(|i| first + (span * i as f64 / (self.lines - 1) as f64).round() as usize)
            .collect();
        bins.dedup();
        if bins.len() != self.lines {
            return Err(Error::Domain(format!(
                "{} lines do not fit between bins {first} and {last}",
                self.lines
            )));
        }
        Ok(bins)
    }
}

/// One period of the multisine.
pub fn multisine(spec: &MultisineSpec) -> Result<Vec<f64>> {
    let bins = spec.bins()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let phases: Vec<f64> = bins.iter().map(|_| rng.random_range(0.0..2.0 * PI)).collect();
    let p = spec.period as f64;
    Ok((0..spec.period)
        .map(|t| {
            bins.iter()
                .zip(&phases)
                .map(|(&k, &ph)| (2.0 * PI * k as f64 * t as f64 / p + ph).cos())
                .sum()
        })
        .collect())
}

/// DFT of a real record.
pub fn spectrum(x: &[f64]) -> Vec<Complex<f64>> {
    let mut buf: Vec<Complex<f64>> = x.iter().map(|&v| Complex::new(v, 0.0)).collect();
    FftPlanner::new().plan_fft_forward(buf.len()).process(&mut buf);
    buf
}

/// `20 log10 |X_k|` for bins `0..=len/2`, floored at -400 dB.
pub fn magnitude_db(x: &[f64]) -> Vec<f64> {
    spectrum(x)
        .iter()
        .take(x.len() / 2 + 1)
        .map(|c| 20.0 * c.norm().max(1e-20).log10())
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive_dft(x: &[f64]) -> Vec<(f64, f64)> {
        let n = x.len() as f64;
        (0..x.len())
            .map(|k| {
                x.iter().enumerate().fold((0.0, 0.0), |(re, im), (t, &v)| {
                    let a = -2.0 * PI * k as f64 * t as f64 / n;
                    (re + v * a.cos(), im + v * a.sin())
                })
            })
            .collect()
    }

    #[test]
    fn single_line_is_unit_cosine() {
        let spec = MultisineSpec { period: 64, lines: 1, band: (0.1, 0.2), seed: 3 };
        let x = multisine(&spec).unwrap();
        let k = spec.bins().unwrap()[0];
        assert_eq!(k, 7);
        let peak = x.iter().fold(0.0f64, |a, v| a.max(v.abs()));
        assert!(peak <= 1.0 + 1e-12);
        let power = x.iter().map(|v| v * v).sum::<f64>() / 64.0;
        assert!((power - 0.5).abs() < 1e-12);
        let d = naive_dft(&x);
        assert!(((d[k].0.powi(2) + d[k].1.powi(2)).sqrt() - 32.0).abs() < 1e-9);
    }

    #[test]
    fn flat_on_excited_lines_zero_elsewhere() {
        let spec = MultisineSpec { period: 200, lines: 5, band: (0.05, 0.3), seed: 1 };
        let bins = spec.bins().unwrap();
        let x = multisine(&spec).unwrap();
        let d = naive_dft(&x);
        for (k, (re, im)) in d.iter().enumerate().take(101) {
            let mag = (re * re + im * im).sqrt();
            if bins.contains(&k) {
                assert!((mag - 100.0).abs() < 1e-9);
            } else {
                assert!(mag < 1e-9, "bin {k}: {mag}");
            }
        }
        let fft = spectrum(&x);
        for (a, b) in fft.iter().zip(&d) {
            assert!((a.re - b.0).abs() < 1e-9 && (a.im - b.1).abs() < 1e-9);
        }
    }

    #[test]
    fn default_lines_stay_in_band() {
        let spec = MultisineSpec::default();
        let bins = spec.bins().unwrap();
        assert_eq!(bins, vec![20, 40, 60, 80, 100, 120]);
        let db = magnitude_db(&multisine(&spec).unwrap());
        for (k, v) in db.iter().enumerate() {
            if bins.contains(&k) {
                assert!((v - 20.0 * 500f64.log10()).abs() < 1e-9);
            } else {
                assert!(*v < -150.0);
            }
        }
    }

    #[test]
    fn deterministic_per_seed() {
        let spec = MultisineSpec::default();
        assert_eq!(multisine(&spec).unwrap(), multisine(&spec).unwrap());
        let other = MultisineSpec { seed: 9, ..spec.clone() };
        assert_ne!(multisine(&spec).unwrap(), multisine(&other).unwrap());
    }

    #[test]
    fn band_outside_nyquist_is_rejected() {
        for band in [(0.0, 0.1), (0.1, 0.5), (0.3, 0.2), (-0.1, 0.2)] {
            let spec = MultisineSpec { band, ..MultisineSpec::default() };
            assert!(spec.bins().is_err(), "{band:?}");
        }
        assert!(MultisineSpec { lines: 0, ..MultisineSpec::default() }.bins().is_err());
    }
}
