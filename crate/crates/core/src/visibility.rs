//! Visibility-region identification from per-subarray projection powers.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::grid::ComplexGrid;
use crate::model::{cis_turns, Visibility};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Identifier {
    /// Cursor walk driven by the box-height span estimate.
    Box,
    /// Threshold scan relative to the strongest subarray.
    #[default]
    Power,
}

impl std::str::FromStr for Identifier {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "box" => Ok(Self::Box),
            "power" => Ok(Self::Power),
            other => Err(format!("unknown identifier '{other}' (expected box or power)")),
        }
    }
}

pub const DEFAULT_DELTA: f64 = 0.2;

/// `|(a(theta) o p({s}))^H Y q*(gamma)|^2` for subarray `s` (1-based).
pub fn projection_power(y: &ComplexGrid, theta: f64, gamma: f64, s: usize, s_total: usize) -> f64 {
    projection_powers(y, theta, gamma, s_total)[s - 1]
}

/// Projection power onto every subarray, in order `1..=S`.
pub fn projection_powers(y: &ComplexGrid, theta: f64, gamma: f64, s_total: usize) -> Vec<f64> {
    let m = y.rows();
    let qc: Vec<Complex64> = (0..y.cols()).map(|i| cis_turns(-(i as f64) * gamma)).collect();
    (1..=s_total)
        .map(|s| {
            let rows = Visibility { start: s, end: s }.rows(m, s_total);
            let acc: Complex64 = rows
                .map(|r| {
                    let inner: Complex64 =
                        y.row(r).iter().zip(&qc).map(|(v, q)| v * q).sum();
                    cis_turns(-(r as f64) * theta) * inner
                })
                .sum();
            acc.norm_sqr()
        })
        .collect()
}

/// Two cursors start at `(1, S)`; the weaker end moves inward until the span
/// is `span` subarrays wide.
pub fn identify_by_box(span: usize, powers: &[f64]) -> Visibility {
    let s = powers.len();
    let span = span.clamp(1, s.max(1));
    let (mut i, mut j) = (1, s);
    while j - i + 1 > span {
        if powers[i - 1] >= powers[j - 1] {
            j -= 1;
        } else {
            i += 1;
        }
    }
    Visibility { start: i, end: j }
}

/// Outermost subarrays whose power reaches `delta` times the maximum.
pub fn identify_by_power(powers: &[f64], delta: f64) -> Visibility {
    let s = powers.len();
    let (best, &p_max) = powers
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.total_cmp(b.1))
        .expect("at least one subarray");
    let level = delta * p_max;
    let mut i = 1;
    while i < s && powers[i - 1] < level {
        i += 1;
    }
    let mut j = s;
    while j > 1 && powers[j - 1] < level {
        j -= 1;
    }
    if i > j {
        return Visibility {
            start: best + 1,
            end: best + 1,
        };
    }
    Visibility { start: i, end: j }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::Domain;
    use crate::model::{uplink_pilot_observation, Noise, PathParams, Scenario, SystemConfig};

    const IN: f64 = 1.6e7;

    #[test]
    fn box_cursor_examples() {
        assert_eq!(
            identify_by_box(2, &[4096.0, 4096.0, IN, IN]),
            Visibility { start: 3, end: 4 }
        );
        assert_eq!(
            identify_by_box(4, &[1.0, 2.0, 3.0, 4.0]),
            Visibility { start: 1, end: 4 }
        );
        assert_eq!(
            identify_by_box(1, &[9.0, 1.0, 1.0, 1.0]),
            Visibility { start: 1, end: 1 }
        );
    }

    #[test]
    fn power_scan_examples() {
        assert_eq!(
            identify_by_power(&[4096.0, 4096.0, IN, IN], 0.2),
            Visibility { start: 3, end: 4 }
        );
        assert_eq!(
            identify_by_power(&[5.0; 4], 0.2),
            Visibility { start: 1, end: 4 }
        );
        assert_eq!(
            identify_by_power(&[IN, 4096.0, IN * 0.5, 4096.0], 0.2),
            Visibility { start: 1, end: 3 }
        );
    }

    #[test]
    fn power_scan_single_and_zero() {
        assert_eq!(
            identify_by_power(&[0.0, 0.0, 7.0, 0.0], 0.2),
            Visibility { start: 3, end: 3 }
        );
        // all zero: every subarray passes the zero level
        assert_eq!(
            identify_by_power(&[0.0; 3], 0.2),
            Visibility { start: 1, end: 3 }
        );
    }

    #[test]
    fn identifier_parses() {
        assert_eq!("box".parse::<Identifier>().unwrap(), Identifier::Box);
        assert_eq!("power".parse::<Identifier>().unwrap(), Identifier::Power);
        assert!("grid".parse::<Identifier>().is_err());
    }

    fn one_path(m: usize, n: usize, s: usize, vis: Visibility) -> Scenario {
        Scenario {
            config: SystemConfig::new(m, n, s),
            paths: vec![PathParams {
                theta: 0.271,
                gamma: 0.613,
                alpha: Complex64::new(0.0, 1.0),
                g_dl: Complex64::new(1.0, 0.0),
                visibility: vis,
            }],
            seed: 3,
        }
    }

    #[test]
    fn noiseless_powers_follow_region() {
        let (m, n, s) = (128, 128, 4);
        let sc = one_path(m, n, s, Visibility { start: 2, end: 3 });
        let y = uplink_pilot_observation(&sc, 0.0, Noise::Off);
        let p = projection_powers(&y, 0.271, 0.613, s);
        let full = (m * n / s) as f64;
        let full = full * full;
        assert!((p[1] / full - 1.0).abs() < 0.01);
        assert!((p[2] / full - 1.0).abs() < 0.01);
        assert_eq!(p[0], 0.0);
        assert_eq!(p[3], 0.0);
        assert_eq!(projection_power(&y, 0.271, 0.613, 2, s), p[1]);
    }

    #[test]
    fn brute_force_projection() {
        let (m, n, s) = (8, 6, 2);
        let y = ComplexGrid::from_fn(m, n, Domain::AntennaSubcarrier, |r, c| {
            Complex64::new((r * 3 + c) as f64 * 0.1, (r as f64 - c as f64) * 0.2)
        });
        let (th, ga) = (0.37, 0.81);
        for sub in 1..=s {
            let mut acc = Complex64::new(0.0, 0.0);
            for r in 0..m {
                if (r + 1) * s / m + usize::from((r + 1) * s % m != 0) != sub {
                    continue;
                }
                for c in 0..n {
                    let ph = -2.0 * std::f64::consts::PI * (r as f64 * th + c as f64 * ga);
                    acc += y[(r, c)] * Complex64::from_polar(1.0, ph);
                }
            }
            let got = projection_power(&y, th, ga, sub, s);
            assert!((got - acc.norm_sqr()).abs() <= 1e-9 * acc.norm_sqr().max(1.0));
        }
    }
}
