//! Reconstruction quality metrics.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::ComplexGrid;

/// dB value reported for an exact reconstruction.
pub const NMSE_FLOOR_DB: f64 = -120.0;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Nmse {
    pub linear: f64,
    /// Columns of the true channel with zero norm, left out of the average.
    pub excluded_columns: usize,
}

impl Nmse {
    pub fn db(&self) -> f64 {
        to_db(self.linear)
    }
}

pub fn to_db(linear: f64) -> f64 {
    if linear > 0.0 {
        (10.0 * linear.log10()).max(NMSE_FLOOR_DB)
    } else {
        NMSE_FLOOR_DB
    }
}

/// Per-column normalised squared error averaged over the `N` rows of the
/// `N x M` layout (one per subcarrier).
pub fn nmse(h_hat: &ComplexGrid, h: &ComplexGrid) -> Result<Nmse> {
    if (h_hat.rows(), h_hat.cols()) != (h.rows(), h.cols()) {
        return Err(Error::DimensionMismatch {
            expected: format!("{}x{}", h.rows(), h.cols()),
            found: format!("{}x{}", h_hat.rows(), h_hat.cols()),
        });
    }
    let mut sum = 0.0;
    let mut used = 0;
    for n in 0..h.rows() {
        let truth = h.row(n);
        let den: f64 = truth.iter().map(|v| v.norm_sqr()).sum();
        if den == 0.0 {
            continue;
        }
        let num: f64 = h_hat
            .row(n)
            .iter()
            .zip(truth)
            .map(|(a, b)| (a - b).norm_sqr())
            .sum();
        sum += num / den;
        used += 1;
    }
    if used == 0 {
        return Err(Error::UndefinedMetric("true channel is identically zero".into()));
    }
    Ok(Nmse {
        linear: sum / used as f64,
        excluded_columns: h.rows() - used,
    })
}

/// Spectral efficiency of per-subcarrier MRT built from `h_hat`:
/// `(1/N) sum_n log2(1 + P |h_n . conj(hh_n)|^2 / |hh_n|^2)`.
/// Subcarriers where `h_hat` vanishes contribute zero rate.
pub fn spectral_efficiency(h: &ComplexGrid, h_hat: &ComplexGrid, p: f64) -> Result<f64> {
    if (h_hat.rows(), h_hat.cols()) != (h.rows(), h.cols()) {
        return Err(Error::DimensionMismatch {
            expected: format!("{}x{}", h.rows(), h.cols()),
            found: format!("{}x{}", h_hat.rows(), h_hat.cols()),
        });
    }
    if h_hat.norm_sqr() == 0.0 {
        return Err(Error::UndefinedMetric("estimated channel is zero".into()));
    }
    let n = h.rows();
    let mut total = 0.0;
    for k in 0..n {
        let est = h_hat.row(k);
        let norm: f64 = est.iter().map(|v| v.norm_sqr()).sum();
        if norm == 0.0 {
            continue;
        }
        let g: num_complex::Complex64 = h.row(k).iter().zip(est).map(|(a, b)| a * b.conj()).sum();
        total += (1.0 + p * g.norm_sqr() / norm).log2();
    }
    Ok(total / n as f64)
}
