//! Reference estimators: NOMP, per-entry LS, covariance-aided LMMSE, and the
//! per-subarray stationary scheme.

use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{ComplexGrid, Domain};
use crate::image::{angular_temporal_transform, transform_row, ImageConfig};
use crate::model::{
    accumulate_path, db_to_linear, masked_steering, noise_grid, synthesize_channel, Link, Noise,
    Scenario, Visibility,
};
use crate::pipeline::{estimate_uplink, PipelineConfig};
use crate::refine::{coarse_gains, newton_refine_path, PathEstimate, RefinerConfig};
use crate::rng::Stream;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NompConfig {
    pub oversampling: usize,
    pub max_paths: usize,
    /// Target probability that pure noise produces a path.
    pub false_alarm: f64,
    /// Stop level on `|a^H R q*|^2 / (MN)` in noise-variance units; derived
    /// from `false_alarm` when absent.
    pub stop_threshold: Option<f64>,
    pub newton_rounds: usize,
}

impl Default for NompConfig {
    fn default() -> Self {
        Self {
            oversampling: 4,
            max_paths: 16,
            false_alarm: 0.01,
            stop_threshold: None,
            newton_rounds: 3,
        }
    }
}

impl NompConfig {
    pub fn validate(&self) -> Result<()> {
        if self.oversampling == 0 || self.max_paths == 0 || self.newton_rounds == 0 {
            return Err(Error::InvalidConfig("NOMP settings must be positive".into()));
        }
        if !(self.false_alarm > 0.0 && self.false_alarm < 1.0) {
            return Err(Error::InvalidConfig("false-alarm target must lie in (0, 1)".into()));
        }
        Ok(())
    }

    /// Noise-only matched-filter outputs are unit exponentials; the maximum
    /// over `MN` effective cells stays below `ln(MN) - ln(-ln(1 - p))` with
    /// probability `1 - p`.
    pub fn threshold(&self, m: usize, n: usize) -> f64 {
        self.stop_threshold.unwrap_or_else(|| {
            ((m * n) as f64).ln() - (-(1.0 - self.false_alarm).ln()).ln()
        })
    }
}

fn subtract(res: &mut ComplexGrid, e: &PathEstimate, amp: f64, s: usize) {
    accumulate_path(res, -(e.alpha * amp), e.theta, e.gamma, e.visibility, s);
}

fn add(res: &mut ComplexGrid, e: &PathEstimate, amp: f64, s: usize) {
    accumulate_path(res, e.alpha * amp, e.theta, e.gamma, e.visibility, s);
}

/// Greedy detect / refine / subtract over the full array (no visibility).
pub fn nomp_estimate(y: &ComplexGrid, cfg: &NompConfig, p_ul: f64) -> Result<Vec<PathEstimate>> {
    cfg.validate()?;
    let (m, n) = (y.rows(), y.cols());
    let amp = p_ul.sqrt();
    let full = Visibility::full(1);
    let tau = cfg.threshold(m, n);
    let grid = ImageConfig {
        gamma_a: cfg.oversampling,
        gamma_t: cfg.oversampling,
        eta: 1.0,
    };
    let refiner = RefinerConfig {
        oversampling: cfg.oversampling,
        ..RefinerConfig::default()
    };
    let mut paths: Vec<PathEstimate> = Vec::new();
    let mut res = y.clone();
    while paths.len() < cfg.max_paths {
        let t = angular_temporal_transform(&res, &grid)?;
        let (k, c, peak) = t
            .as_slice()
            .iter()
            .enumerate()
            .map(|(i, v)| (i / t.cols(), i % t.cols(), v.norm_sqr()))
            .max_by(|a, b| a.2.total_cmp(&b.2))
            .expect("non-empty transform");
        if peak / ((m * n) as f64) < tau {
            break;
        }
        let start = PathEstimate::new(
            transform_row(k, t.rows()) as f64 / t.rows() as f64,
            c as f64 / t.cols() as f64,
            full,
        );
        let (new, _) = newton_refine_path(&res, &start, 1, p_ul, &refiner);
        paths.push(new);
        subtract(&mut res, &new, amp, 1);
        for _ in 0..cfg.newton_rounds {
            for i in 0..paths.len() {
                add(&mut res, &paths[i], amp, 1);
                let (next, _) = newton_refine_path(&res, &paths[i], 1, p_ul, &refiner);
                paths[i] = next;
                subtract(&mut res, &paths[i], amp, 1);
            }
        }
        let triples: Vec<_> = paths.iter().map(|e| (e.theta, e.gamma, full)).collect();
        match coarse_gains(y, &triples, 1, p_ul) {
            Ok(g) => {
                for (e, g) in paths.iter_mut().zip(g) {
                    e.alpha = g;
                }
            }
            // the new path duplicates an old one
            Err(Error::IllConditioned { .. }) => {
                paths.pop();
                break;
            }
            Err(e) => return Err(e),
        }
        res = y.clone();
        for e in &paths {
            subtract(&mut res, e, amp, 1);
        }
    }
    for e in &mut paths {
        e.alpha_coarse = e.alpha;
    }
    Ok(paths)
}

/// Per-entry least squares from all-one pilots, `N x M`.
pub fn ls_estimate(y: &ComplexGrid, p: f64) -> ComplexGrid {
    let mut h = y.transpose();
    h.scale(1.0 / p.sqrt());
    h
}

/// Per-subcarrier LMMSE with a covariance built from the true path
/// geometry and gain powers: `R (R + I / P)^-1 h_ls`.
pub fn lmmse_estimate(y: &ComplexGrid, scenario: &Scenario, link: Link, p: f64) -> Result<ComplexGrid> {
    let (m, n, s) = (scenario.config.m, scenario.config.n, scenario.config.s);
    if (y.rows(), y.cols()) != (m, n) {
        return Err(Error::DimensionMismatch {
            expected: format!("{m}x{n}"),
            found: format!("{}x{}", y.rows(), y.cols()),
        });
    }
    let l = scenario.paths.len();
    if l == 0 {
        return Ok(ComplexGrid::zeros(n, m, Domain::AntennaSubcarrier));
    }
    let v = DMatrix::from_fn(m, l, |r, c| {
        let p = &scenario.paths[c];
        masked_steering(p.theta, p.visibility, m, s)[r]
    });
    let d = DMatrix::from_fn(l, l, |i, j| {
        if i != j {
            return Complex64::new(0.0, 0.0);
        }
        let g = match link {
            Link::Uplink => scenario.paths[i].alpha,
            Link::Downlink => scenario.paths[i].g_dl,
        };
        Complex64::new(g.norm_sqr(), 0.0)
    });
    // R (R + s2 I)^-1 = V D (V^H V D + s2 I)^-1 V^H
    let vh = v.adjoint();
    let inner = &vh * &v * &d + DMatrix::identity(l, l) * Complex64::new(1.0 / p, 0.0);
    let inv = inner
        .try_inverse()
        .ok_or(Error::IllConditioned { rcond: 0.0 })?;
    let w = &v * (&d * inv) * &vh;
    let hls = DMatrix::from_fn(m, n, |r, c| y[(r, c)] / p.sqrt());
    let est = w * hls;
    Ok(ComplexGrid::from_fn(n, m, Domain::AntennaSubcarrier, |r, c| est[(c, r)]))
}

/// Full downlink training (one pilot per antenna and subcarrier), `M x N`.
pub fn downlink_training_observation(scenario: &Scenario, snr_db: f64, noise: Noise) -> ComplexGrid {
    let cfg = &scenario.config;
    let amp = db_to_linear(snr_db).sqrt();
    let h = synthesize_channel(scenario, Link::Downlink);
    let mut y = match noise {
        Noise::Off => ComplexGrid::zeros(cfg.m, cfg.n, Domain::AntennaSubcarrier),
        Noise::Draw(k) => noise_grid(cfg.m, cfg.n, scenario.seed, Stream::DownlinkTraining(k)),
    };
    for r in 0..cfg.m {
        for c in 0..cfg.n {
            y[(r, c)] += h[(c, r)] * amp;
        }
    }
    y
}

/// Result of running the stationary chain on each subarray separately.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SubarrayEstimates {
    /// Array-wide estimates, each tagged with its single subarray.
    pub paths: Vec<PathEstimate>,
    /// Paths found per subarray.
    pub counts: Vec<usize>,
    /// Subarrays whose chain failed (for example, nothing detected).
    pub failed: Vec<usize>,
}

/// Treats every subarray as its own stationary array. Gains are rotated to
/// the array-wide phase reference.
pub fn alternative_uplink(
    y: &ComplexGrid,
    s: usize,
    p_ul: f64,
    cfg: &PipelineConfig,
) -> Result<SubarrayEstimates> {
    let (m, n) = (y.rows(), y.cols());
    let per = m / s;
    let mut out = SubarrayEstimates {
        paths: Vec::new(),
        counts: Vec::with_capacity(s),
        failed: Vec::new(),
    };
    for sub in 1..=s {
        let m0 = (sub - 1) * per;
        let slice = ComplexGrid::from_fn(per, n, Domain::AntennaSubcarrier, |r, c| y[(m0 + r, c)]);
        match estimate_uplink(&slice, 1, p_ul, cfg, None) {
            Ok(o) => {
                out.counts.push(o.refined.len());
                out.paths.extend(o.refined.iter().map(|e| {
                    let rot = crate::model::cis_turns(-(m0 as f64) * e.theta);
                    PathEstimate {
                        alpha: e.alpha * rot,
                        alpha_coarse: e.alpha_coarse * rot,
                        visibility: Visibility::single(sub),
                        ..*e
                    }
                }));
            }
            Err(Error::DegenerateInput(_)) => {
                out.counts.push(0);
                out.failed.push(sub);
            }
            Err(e) => return Err(e),
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::nmse;
    use crate::model::{uplink_pilot_observation, PathParams, SystemConfig};

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    fn scenario(m: usize, n: usize, s: usize, paths: &[(f64, f64, Complex64, Visibility)]) -> Scenario {
        Scenario {
            config: SystemConfig::new(m, n, s),
            paths: paths
                .iter()
                .map(|&(theta, gamma, g, visibility)| PathParams {
                    theta,
                    gamma,
                    alpha: g,
                    g_dl: g * c(0.0, -1.0),
                    visibility,
                })
                .collect(),
            seed: 21,
        }
    }

    #[test]
    fn nomp_single_noiseless_path() {
        let sc = scenario(32, 32, 1, &[(0.3217, 0.7781, c(0.6, 0.5), Visibility::full(1))]);
        let y = uplink_pilot_observation(&sc, 10.0, Noise::Off);
        let est = nomp_estimate(&y, &NompConfig::default(), 10.0).unwrap();
        assert_eq!(est.len(), 1);
        assert!((est[0].theta - 0.3217).abs() < 1e-8);
        assert!((est[0].gamma - 0.7781).abs() < 1e-8);
        assert!((est[0].alpha - c(0.6, 0.5)).norm() < 1e-7);
    }

    #[test]
    fn nomp_three_separated_paths() {
        let paths = [
            (0.12, 0.21, c(0.9, 0.0), Visibility::full(1)),
            (0.47, 0.63, c(0.0, 0.7), Visibility::full(1)),
            (0.83, 0.36, c(-0.6, 0.2), Visibility::full(1)),
        ];
        let sc = scenario(64, 64, 1, &paths);
        let y = uplink_pilot_observation(&sc, 10.0, Noise::Draw(0));
        let est = nomp_estimate(&y, &NompConfig::default(), 10.0).unwrap();
        assert_eq!(est.len(), 3);
        let mut res = y.clone();
        for e in &est {
            subtract(&mut res, e, 10f64.sqrt(), 1);
        }
        let noise = noise_grid(64, 64, sc.seed, Stream::UplinkNoise(0)).norm_sqr();
        assert!((res.norm_sqr() / noise - 1.0).abs() < 0.1);
    }

    #[test]
    fn ls_is_exact_without_noise() {
        let sc = scenario(8, 4, 2, &[(0.3, 0.6, c(1.0, 1.0), Visibility::single(2))]);
        let y = uplink_pilot_observation(&sc, 7.0, Noise::Off);
        let h = ls_estimate(&y, db_to_linear(7.0));
        assert!(h.max_abs_diff(&synthesize_channel(&sc, Link::Uplink)).unwrap() < 1e-12);
    }

    #[test]
    fn ls_error_variance_is_inverse_power() {
        let sc = scenario(64, 64, 1, &[(0.3, 0.6, c(1.0, 0.0), Visibility::full(1))]);
        let p = db_to_linear(5.0);
        let y = uplink_pilot_observation(&sc, 5.0, Noise::Draw(2));
        let h = ls_estimate(&y, p);
        let err = h.sub(&synthesize_channel(&sc, Link::Uplink)).unwrap().norm_sqr() / (64.0 * 64.0);
        assert!((err * p - 1.0).abs() < 0.05);
    }

    #[test]
    fn lmmse_lies_on_the_single_path_subspace() {
        let vis = Visibility { start: 1, end: 2 };
        let sc = scenario(16, 8, 4, &[(0.41, 0.2, c(0.8, 0.0), vis)]);
        let y = uplink_pilot_observation(&sc, 0.0, Noise::Draw(0));
        let h = lmmse_estimate(&y, &sc, Link::Uplink, 1.0).unwrap();
        let v = masked_steering(0.41, vis, 16, 4);
        for n in 0..8 {
            let row = h.row(n);
            // row = k v for some scalar k
            let k = row[0] / v[0];
            for (a, b) in row.iter().zip(&v) {
                assert!((a - k * b).norm() < 1e-12);
            }
        }
    }

    #[test]
    fn lmmse_matches_dense_formula() {
        let paths = [
            (0.13, 0.27, c(0.7, 0.1), Visibility { start: 1, end: 2 }),
            (0.42, 0.66, c(-0.3, 0.8), Visibility { start: 2, end: 2 }),
        ];
        let sc = scenario(8, 4, 2, &paths);
        let p = db_to_linear(3.0);
        let y = uplink_pilot_observation(&sc, 3.0, Noise::Draw(0));
        let h = lmmse_estimate(&y, &sc, Link::Uplink, p).unwrap();
        let mut r = DMatrix::<Complex64>::zeros(8, 8);
        for path in &sc.paths {
            let v = DMatrix::from_column_slice(8, 1, &masked_steering(path.theta, path.visibility, 8, 2));
            r += &v * v.adjoint() * Complex64::new(path.alpha.norm_sqr(), 0.0);
        }
        let reg = &r + DMatrix::identity(8, 8) * Complex64::new(1.0 / p, 0.0);
        let w = &r * reg.try_inverse().unwrap();
        for n in 0..4 {
            let hls = DMatrix::from_fn(8, 1, |m, _| y[(m, n)] / p.sqrt());
            let want = &w * hls;
            for m in 0..8 {
                assert!((h[(n, m)] - want[(m, 0)]).norm() < 1e-10);
            }
        }
    }

    #[test]
    fn lmmse_approaches_ls_on_signal_space_at_high_power() {
        let sc = scenario(16, 8, 1, &[(0.2, 0.3, c(1.0, 0.0), Visibility::full(1))]);
        let y = uplink_pilot_observation(&sc, 80.0, Noise::Draw(0));
        let p = db_to_linear(80.0);
        let h = lmmse_estimate(&y, &sc, Link::Uplink, p).unwrap();
        let e = nmse(&h, &synthesize_channel(&sc, Link::Uplink)).unwrap();
        assert!(e.linear < 1e-8);
    }

    #[test]
    fn training_observation_is_scaled_downlink_channel() {
        let sc = scenario(8, 4, 2, &[(0.3, 0.6, c(1.0, 1.0), Visibility::single(1))]);
        let y = downlink_training_observation(&sc, 0.0, Noise::Off);
        let h = ls_estimate(&y, 1.0);
        assert!(h.max_abs_diff(&synthesize_channel(&sc, Link::Downlink)).unwrap() < 1e-12);
    }

    #[test]
    fn subarray_gains_use_the_global_phase_reference() {
        let vis = Visibility { start: 2, end: 2 };
        let sc = scenario(64, 64, 2, &[(0.2731, 0.4419, c(0.3, 0.9), vis)]);
        let y = uplink_pilot_observation(&sc, 10.0, Noise::Off);
        let alt = alternative_uplink(&y, 2, 10.0, &PipelineConfig::default()).unwrap();
        assert_eq!(alt.counts, vec![0, 1]);
        assert_eq!(alt.paths.len(), 1);
        let e = &alt.paths[0];
        assert_eq!(e.visibility, vis);
        assert!((e.alpha - c(0.3, 0.9)).norm() < 1e-6);
    }

    #[test]
    fn stationary_alternative_equals_proposed() {
        let sc = scenario(32, 32, 1, &[(0.61, 0.12, c(0.7, 0.2), Visibility::full(1))]);
        let y = uplink_pilot_observation(&sc, 10.0, Noise::Draw(0));
        let cfg = PipelineConfig::default();
        let alt = alternative_uplink(&y, 1, 10.0, &cfg).unwrap();
        let prop = estimate_uplink(&y, 1, 10.0, &cfg, None).unwrap();
        assert_eq!(alt.paths, prop.refined);
    }
}
