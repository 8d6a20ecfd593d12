//! Scenario generation and ground-truth channel synthesis.
//!
//! A channel is a sum of paths. Each path is a rank-one antenna-by-subcarrier
//! component: a steering vector over the antennas in its visibility region
//! times a delay phase ramp over the subcarriers. Channels are stored
//! subcarrier-major (`N x M`), pilots antenna-major (`M x N`).

use std::f64::consts::TAU;
use std::ops::{Range, RangeInclusive};

use num_complex::Complex64;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{ComplexGrid, Domain};
use crate::rng::{complex_normal, stream_rng, Stream};

/// `exp(j 2 pi x)`, with `x` reduced to `[-0.5, 0.5]` turns first.
#[inline]
pub fn cis_turns(x: f64) -> Complex64 {
    let r = x - x.round();
    Complex64::from_polar(1.0, TAU * r)
}

/// Linear power from a dB figure.
#[inline]
pub fn db_to_linear(db: f64) -> f64 {
    10f64.powf(db / 10.0)
}

fn one() -> f64 {
    1.0
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SystemConfig {
    #[serde(rename = "M")]
    pub m: usize,
    #[serde(rename = "N")]
    pub n: usize,
    #[serde(rename = "S")]
    pub s: usize,
    pub d_over_lambda: f64,
    /// Subcarrier spacing, Hz.
    pub delta_f: f64,
    pub f_ul: f64,
    pub f_dl: f64,
    /// Transmit powers; noise variance is 1. Per-run SNRs override these.
    #[serde(skip_serializing, default = "one")]
    pub p_ul: f64,
    #[serde(skip_serializing, default = "one")]
    pub p_dl: f64,
}

impl Default for SystemConfig {
    fn default() -> Self {
        Self {
            m: 128,
            n: 128,
            s: 4,
            d_over_lambda: 0.5,
            delta_f: 15e3,
            f_ul: 2.58e9,
            f_dl: 2.64e9,
            p_ul: 1.0,
            p_dl: 1.0,
        }
    }
}

impl SystemConfig {
    pub fn new(m: usize, n: usize, s: usize) -> Self {
        Self {
            m,
            n,
            s,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.m == 0 || self.n == 0 || self.s == 0 {
            return Err(Error::InvalidConfig("M, N and S must be positive".into()));
        }
        if self.m % self.s != 0 {
            return Err(Error::InvalidConfig(format!(
                "M = {} is not divisible by S = {}",
                self.m, self.s
            )));
        }
        if !(self.delta_f > 0.0) {
            return Err(Error::InvalidConfig("delta_f must be positive".into()));
        }
        if !(self.p_ul > 0.0 && self.p_dl > 0.0) {
            return Err(Error::InvalidConfig("transmit powers must be positive".into()));
        }
        Ok(())
    }

    /// Antennas per subarray.
    #[inline]
    pub fn subarray_len(&self) -> usize {
        self.m / self.s
    }
}

/// Contiguous run of subarrays `start..=end` (1-based, inclusive).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Visibility {
    pub start: usize,
    pub end: usize,
}

impl Visibility {
    pub fn new(start: usize, end: usize, s: usize) -> Result<Self> {
        if start < 1 || start > end || end > s {
            return Err(Error::Validation(format!(
                "visibility [{start}, {end}] outside 1 <= start <= end <= {s}"
            )));
        }
        Ok(Self { start, end })
    }

    pub fn full(s: usize) -> Self {
        Self { start: 1, end: s }
    }

    pub fn single(s: usize) -> Self {
        Self { start: s, end: s }
    }

    /// Number of subarrays covered.
    #[inline]
    pub fn span(&self) -> usize {
        self.end + 1 - self.start
    }

    #[inline]
    pub fn contains(&self, s: usize) -> bool {
        self.start <= s && s <= self.end
    }

    /// 0-based antenna rows selected by this region.
    #[inline]
    pub fn rows(&self, m: usize, s: usize) -> Range<usize> {
        let per = m / s;
        (self.start - 1) * per..self.end * per
    }

    #[inline]
    pub fn antenna_count(&self, m: usize, s: usize) -> usize {
        self.span() * (m / s)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(from = "PathRecord", into = "PathRecord")]
pub struct PathParams {
    /// Normalised angle `(d / lambda) sin(theta)`, in `[0, 1)`.
    pub theta: f64,
    /// Normalised delay `delta_f * tau`, in `[0, 1)`.
    pub gamma: f64,
    /// Effective uplink gain.
    pub alpha: Complex64,
    pub g_dl: Complex64,
    pub visibility: Visibility,
}

#[derive(Serialize, Deserialize)]
struct PathRecord {
    theta: f64,
    gamma: f64,
    alpha_re: f64,
    alpha_im: f64,
    g_dl_re: f64,
    g_dl_im: f64,
    s_start: usize,
    s_end: usize,
}

impl From<PathRecord> for PathParams {
    fn from(r: PathRecord) -> Self {
        Self {
            theta: r.theta,
            gamma: r.gamma,
            alpha: Complex64::new(r.alpha_re, r.alpha_im),
            g_dl: Complex64::new(r.g_dl_re, r.g_dl_im),
            visibility: Visibility {
                start: r.s_start,
                end: r.s_end,
            },
        }
    }
}

impl From<PathParams> for PathRecord {
    fn from(p: PathParams) -> Self {
        Self {
            theta: p.theta,
            gamma: p.gamma,
            alpha_re: p.alpha.re,
            alpha_im: p.alpha.im,
            g_dl_re: p.g_dl.re,
            g_dl_im: p.g_dl.im,
            s_start: p.visibility.start,
            s_end: p.visibility.end,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub config: SystemConfig,
    pub paths: Vec<PathParams>,
    pub seed: u64,
}

impl Scenario {
    pub fn validate(&self) -> Result<()> {
        self.config.validate()?;
        if self.paths.is_empty() {
            return Err(Error::Validation("scenario has no paths".into()));
        }
        for (i, p) in self.paths.iter().enumerate() {
            if !(0.0..1.0).contains(&p.theta) || !(0.0..1.0).contains(&p.gamma) {
                return Err(Error::Validation(format!("path {i}: theta/gamma outside [0, 1)")));
            }
            Visibility::new(p.visibility.start, p.visibility.end, self.config.s)?;
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let sc: Scenario = serde_json::from_str(text)?;
        sc.validate()?;
        Ok(sc)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Link {
    Uplink,
    Downlink,
}

/// Draws a random scenario: `L` uniform over `l_range`, angles and delays
/// uniform on `[0, 1)`, a shared magnitude in `[0.5, 1]` for both links with
/// independent phases, and a visibility region uniform over ordered pairs.
pub fn sample_scenario(
    config: &SystemConfig,
    l_range: RangeInclusive<usize>,
    seed: u64,
) -> Result<Scenario> {
    config.validate()?;
    if *l_range.start() < 1 || l_range.is_empty() {
        return Err(Error::InvalidConfig(format!(
            "path-count range {l_range:?} must lie in [1, inf)"
        )));
    }
    let mut rng = stream_rng(seed, Stream::Scenario);
    let l = rng.random_range(l_range);
    let s = config.s;
    let pairs = s * (s + 1) / 2;
    let paths = (0..l)
        .map(|_| {
            let theta = rng.random::<f64>();
            let gamma = rng.random::<f64>();
            let beta = rng.random_range(0.5..=1.0);
            let phi_ul = rng.random::<f64>();
            let phi_dl = rng.random::<f64>();
            let visibility = nth_pair(rng.random_range(0..pairs), s);
            PathParams {
                theta,
                gamma,
                alpha: beta * cis_turns(phi_ul),
                g_dl: beta * cis_turns(phi_dl),
                visibility,
            }
        })
        .collect();
    Ok(Scenario {
        config: config.clone(),
        paths,
        seed,
    })
}

/// The `k`-th ordered pair `(a, b)`, `1 <= a <= b <= s`, in lexicographic order.
fn nth_pair(mut k: usize, s: usize) -> Visibility {
    for a in 1..=s {
        let run = s - a + 1;
        if k < run {
            return Visibility {
                start: a,
                end: a + k,
            };
        }
        k -= run;
    }
    unreachable!("pair index out of range")
}

/// ULA steering vector, entry `m` = `exp(j 2 pi m theta)`.
pub fn steering_vector(theta: f64, m: usize) -> Vec<Complex64> {
    (0..m).map(|i| cis_turns(i as f64 * theta)).collect()
}

/// Subcarrier phase ramp, entry `n` = `exp(j 2 pi n gamma)`.
pub fn delay_vector(gamma: f64, n: usize) -> Vec<Complex64> {
    (0..n).map(|i| cis_turns(i as f64 * gamma)).collect()
}

/// 0/1 antenna mask: antenna `m` (1-based) is selected iff `ceil(m S / M)`
/// falls in `[s_start, s_end]`.
pub fn selection_vector(s_start: usize, s_end: usize, m: usize, s: usize) -> Vec<f64> {
    (1..=m)
        .map(|i| {
            let sub = (i * s).div_ceil(m);
            if (s_start..=s_end).contains(&sub) {
                1.0
            } else {
                0.0
            }
        })
        .collect()
}

/// Steering vector masked to the antennas of `vis`.
pub fn masked_steering(theta: f64, vis: Visibility, m: usize, s: usize) -> Vec<Complex64> {
    let rows = vis.rows(m, s);
    (0..m)
        .map(|i| {
            if rows.contains(&i) {
                cis_turns(i as f64 * theta)
            } else {
                Complex64::new(0.0, 0.0)
            }
        })
        .collect()
}

/// Uplink gain rotated by the carrier-offset phase accumulated over `tau` seconds.
pub fn effective_uplink_gain(g_ul: Complex64, tau: f64, f_ul: f64, f_dl: f64) -> Complex64 {
    g_ul * cis_turns((f_ul - f_dl) * tau)
}

/// Adds `coef * (a(theta) o p(vis)) q(gamma)^T` to an antenna-major `M x N`
/// grid, touching only the visible rows.
pub fn accumulate_path(
    grid: &mut ComplexGrid,
    coef: Complex64,
    theta: f64,
    gamma: f64,
    vis: Visibility,
    s: usize,
) {
    let (m, n) = (grid.rows(), grid.cols());
    let q = delay_vector(gamma, n);
    for row in vis.rows(m, s) {
        let w = coef * cis_turns(row as f64 * theta);
        for (z, qn) in grid.row_mut(row).iter_mut().zip(&q) {
            *z += w * qn;
        }
    }
}

/// Ground-truth channel in the `N x M` antenna-subcarrier layout.
pub fn synthesize_channel(scenario: &Scenario, link: Link) -> ComplexGrid {
    let cfg = &scenario.config;
    let mut acc = ComplexGrid::zeros(cfg.m, cfg.n, Domain::AntennaSubcarrier);
    for p in &scenario.paths {
        let gain = match link {
            Link::Uplink => p.alpha,
            Link::Downlink => p.g_dl,
        };
        accumulate_path(&mut acc, gain, p.theta, p.gamma, p.visibility, cfg.s);
    }
    acc.transpose()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Noise {
    Off,
    /// Independent noise realisation `k` of the scenario's seed.
    Draw(u64),
}

/// `M x N` grid of i.i.d. unit-variance circular Gaussian noise.
pub fn noise_grid(rows: usize, cols: usize, seed: u64, stream: Stream) -> ComplexGrid {
    let mut rng = stream_rng(seed, stream);
    ComplexGrid::from_fn(rows, cols, Domain::AntennaSubcarrier, |_, _| {
        complex_normal(&mut rng)
    })
}

/// Uplink all-one pilots at the base station, `M x N`.
pub fn uplink_pilot_observation(scenario: &Scenario, snr_db: f64, noise: Noise) -> ComplexGrid {
    let cfg = &scenario.config;
    let amp = db_to_linear(snr_db).sqrt();
    let mut y = match noise {
        Noise::Off => ComplexGrid::zeros(cfg.m, cfg.n, Domain::AntennaSubcarrier),
        Noise::Draw(k) => noise_grid(cfg.m, cfg.n, scenario.seed, Stream::UplinkNoise(k)),
    };
    for p in &scenario.paths {
        accumulate_path(&mut y, amp * p.alpha, p.theta, p.gamma, p.visibility, cfg.s);
    }
    y
}

/// Indices (0-based) of the paths whose visibility region contains subarray `s`.
pub fn subarray_visibility(scenario: &Scenario, s: usize) -> Vec<usize> {
    scenario
        .paths
        .iter()
        .enumerate()
        .filter(|(_, p)| p.visibility.contains(s))
        .map(|(i, _)| i)
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    fn assert_vec_close(a: &[Complex64], b: &[Complex64], tol: f64) {
        assert_eq!(a.len(), b.len());
        for (x, y) in a.iter().zip(b) {
            assert!((x - y).norm() < tol, "{x} vs {y}");
        }
    }

    #[test]
    fn steering_vector_cases() {
        assert_vec_close(&steering_vector(0.0, 4), &[c(1., 0.); 4], 1e-15);
        assert_vec_close(
            &steering_vector(0.5, 4),
            &[c(1., 0.), c(-1., 0.), c(1., 0.), c(-1., 0.)],
            1e-15,
        );
        assert_vec_close(
            &steering_vector(0.25, 4),
            &[c(1., 0.), c(0., 1.), c(-1., 0.), c(0., -1.)],
            1e-15,
        );
    }

    #[test]
    fn delay_vector_cases() {
        assert_vec_close(&delay_vector(0.0, 3), &[c(1., 0.); 3], 1e-15);
        assert_vec_close(&delay_vector(0.5, 3), &[c(1., 0.), c(-1., 0.), c(1., 0.)], 1e-15);
        let q = delay_vector(0.125, 8);
        for (k, z) in q.iter().enumerate() {
            let expect = Complex64::from_polar(1.0, TAU * k as f64 / 8.0);
            assert!((z - expect).norm() < 1e-15);
        }
    }

    #[test]
    fn selection_vector_cases() {
        assert_eq!(selection_vector(1, 4, 8, 4), vec![1.0; 8]);
        assert_eq!(
            selection_vector(2, 2, 8, 4),
            vec![0., 0., 1., 1., 0., 0., 0., 0.]
        );
        assert_eq!(
            selection_vector(3, 4, 8, 4),
            vec![0., 0., 0., 0., 1., 1., 1., 1.]
        );
    }

    #[test]
    fn selection_vector_agrees_with_row_ranges() {
        for (a, b) in [(1, 1), (1, 3), (2, 4), (4, 4)] {
            let p = selection_vector(a, b, 16, 4);
            let rows = Visibility { start: a, end: b }.rows(16, 4);
            for (i, v) in p.iter().enumerate() {
                assert_eq!(*v == 1.0, rows.contains(&i));
            }
        }
    }

    #[test]
    fn effective_gain_cases() {
        let g = effective_uplink_gain(c(1., 0.), 0.0, 2.58e9, 2.64e9);
        assert_abs_diff_eq!(g.re, 1.0, epsilon = 1e-15);
        let df = 2.58e9 - 2.64e9;
        let g = effective_uplink_gain(c(1., 0.), 1.0 / df, 2.58e9, 2.64e9);
        assert!((g - c(1., 0.)).norm() < 1e-12);
        // 60 MHz offset, half-turn phase
        let tau = 0.5 / 60e6;
        let g = effective_uplink_gain(c(0., 0.5), tau, 2.64e9 + 60e6, 2.64e9);
        assert!((g - c(0., -0.5)).norm() < 1e-12);
    }

    #[test]
    fn sample_respects_range_and_visibility() {
        let cfg = SystemConfig::new(128, 128, 4);
        let sc = sample_scenario(&cfg, 10..=10, 7).unwrap();
        assert_eq!(sc.paths.len(), 10);
        for p in &sc.paths {
            assert!(p.visibility.span() >= 1);
            assert!((0.5..=1.0).contains(&p.alpha.norm()));
            assert_abs_diff_eq!(p.alpha.norm(), p.g_dl.norm(), epsilon = 1e-12);
        }
        sc.validate().unwrap();
    }

    #[test]
    fn stationary_sampling_has_single_subarray() {
        let cfg = SystemConfig::new(16, 16, 1);
        for seed in 0..20 {
            let sc = sample_scenario(&cfg, 1..=10, seed).unwrap();
            assert!(sc.paths.iter().all(|p| p.visibility == Visibility::single(1)));
        }
    }

    #[test]
    fn sampling_is_deterministic() {
        let cfg = SystemConfig::new(32, 32, 4);
        let a = sample_scenario(&cfg, 1..=10, 99).unwrap();
        let b = sample_scenario(&cfg, 1..=10, 99).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn invalid_config_rejected() {
        let cfg = SystemConfig::new(10, 8, 4);
        assert!(matches!(
            sample_scenario(&cfg, 1..=2, 0),
            Err(Error::InvalidConfig(_))
        ));
        let cfg = SystemConfig::new(8, 8, 4);
        assert!(sample_scenario(&cfg, 0..=2, 0).is_err());
    }

    #[test]
    fn all_pairs_are_reachable() {
        let s = 4;
        let mut seen = std::collections::HashSet::new();
        for k in 0..s * (s + 1) / 2 {
            let v = nth_pair(k, s);
            assert!(1 <= v.start && v.start <= v.end && v.end <= s);
            seen.insert(v);
        }
        assert_eq!(seen.len(), 10);
    }

    fn fixture(paths: Vec<PathParams>, m: usize, n: usize, s: usize) -> Scenario {
        Scenario {
            config: SystemConfig::new(m, n, s),
            paths,
            seed: 1,
        }
    }

    fn path(theta: f64, gamma: f64, alpha: Complex64, vis: Visibility) -> PathParams {
        PathParams {
            theta,
            gamma,
            alpha,
            g_dl: alpha,
            visibility: vis,
        }
    }

    #[test]
    fn masking_zeroes_invisible_columns() {
        let sc = fixture(vec![path(0.3, 0.7, c(1., 0.), Visibility::single(1))], 8, 4, 2);
        let h = synthesize_channel(&sc, Link::Uplink);
        assert_eq!((h.rows(), h.cols()), (4, 8));
        for n in 0..4 {
            for m in 4..8 {
                assert_eq!(h[(n, m)], c(0., 0.));
            }
        }
    }

    #[test]
    fn dc_path_is_all_ones() {
        let sc = fixture(vec![path(0.0, 0.0, c(1., 0.), Visibility::full(1))], 4, 3, 1);
        let h = synthesize_channel(&sc, Link::Downlink);
        assert!(h.as_slice().iter().all(|z| (z - c(1., 0.)).norm() < 1e-15));
    }

    #[test]
    fn noiseless_pilots_match_scaled_channel() {
        let cfg = SystemConfig::new(8, 6, 2);
        let sc = sample_scenario(&cfg, 3..=3, 5).unwrap();
        let y = uplink_pilot_observation(&sc, 6.0, Noise::Off);
        let mut h = synthesize_channel(&sc, Link::Uplink).transpose();
        h.scale(db_to_linear(6.0).sqrt());
        assert!(y.max_abs_diff(&h).unwrap() < 1e-12);
    }

    #[test]
    fn pilot_draws_are_repeatable() {
        let cfg = SystemConfig::new(8, 8, 2);
        let sc = sample_scenario(&cfg, 2..=2, 3).unwrap();
        let a = uplink_pilot_observation(&sc, 0.0, Noise::Draw(4));
        let b = uplink_pilot_observation(&sc, 0.0, Noise::Draw(4));
        let d = uplink_pilot_observation(&sc, 0.0, Noise::Draw(5));
        assert_eq!(a, b);
        assert_ne!(a, d);
    }

    #[test]
    fn empty_scenario_pilots_are_unit_variance_noise() {
        let sc = fixture(vec![], 128, 128, 4);
        let y = uplink_pilot_observation(&sc, 0.0, Noise::Draw(0));
        let var = y.norm_sqr() / (128.0 * 128.0);
        assert!((var - 1.0).abs() < 0.05, "sample variance {var}");
    }

    #[test]
    fn figure_one_visibility_sets() {
        let s = 4;
        let sc = fixture(
            vec![
                path(0.1, 0.1, c(1., 0.), Visibility { start: 1, end: 2 }),
                path(0.2, 0.2, c(1., 0.), Visibility::single(s)),
            ],
            16,
            4,
            s,
        );
        assert_eq!(subarray_visibility(&sc, 1), vec![0]);
        assert_eq!(subarray_visibility(&sc, 2), vec![0]);
        assert_eq!(subarray_visibility(&sc, 3), Vec::<usize>::new());
        assert_eq!(subarray_visibility(&sc, s), vec![1]);
    }

    #[test]
    fn stationary_subarray_sees_everything() {
        let cfg = SystemConfig::new(16, 16, 1);
        let sc = sample_scenario(&cfg, 5..=5, 2).unwrap();
        assert_eq!(subarray_visibility(&sc, 1), vec![0, 1, 2, 3, 4]);
    }

    #[test]
    fn json_shape_and_round_trip() {
        let cfg = SystemConfig::new(16, 8, 4);
        let sc = sample_scenario(&cfg, 2..=2, 11).unwrap();
        let text = sc.to_json().unwrap();
        let v: serde_json::Value = serde_json::from_str(&text).unwrap();
        assert_eq!(v["config"]["M"], 16);
        assert!(v["paths"][0]["alpha_re"].is_number());
        assert!(v["paths"][0]["s_start"].is_number());
        assert_eq!(v["seed"], 11);
        assert_eq!(Scenario::from_json(&text).unwrap(), sc);
    }
}
