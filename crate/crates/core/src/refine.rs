//! Per-path Newton refinement of angles and delays on the visible rows,
//! followed by a joint least-squares gain fit.

use std::f64::consts::TAU;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{ComplexGrid, Domain};
use crate::linalg::solve_gram;
use crate::model::{accumulate_path, cis_turns, Visibility};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RefinerConfig {
    pub rounds: usize,
    pub newton_steps_per_visit: usize,
    /// Reject Newton steps that do not increase the matched-filter power.
    pub improvement_only: bool,
    pub fd_check_tol: f64,
    /// Image oversampling; sets the probe size of the fallback search.
    pub oversampling: usize,
}

impl Default for RefinerConfig {
    fn default() -> Self {
        Self {
            rounds: 3,
            newton_steps_per_visit: 1,
            improvement_only: true,
            fd_check_tol: 1e-4,
            oversampling: 16,
        }
    }
}

impl RefinerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.rounds == 0 || self.newton_steps_per_visit == 0 || self.oversampling == 0 {
            return Err(Error::InvalidConfig(
                "refiner rounds, steps and oversampling must be positive".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PathEstimate {
    pub theta: f64,
    pub gamma: f64,
    pub alpha: Complex64,
    /// Gain before refinement.
    pub alpha_coarse: Complex64,
    pub visibility: Visibility,
}

impl PathEstimate {
    pub fn new(theta: f64, gamma: f64, visibility: Visibility) -> Self {
        Self {
            theta: theta.rem_euclid(1.0),
            gamma: gamma.rem_euclid(1.0),
            alpha: Complex64::new(0.0, 0.0),
            alpha_coarse: Complex64::new(0.0, 0.0),
            visibility,
        }
    }
}

/// `sum over the shared rows of exp(j 2 pi m (tj - ti))`.
fn masked_cross(ti: f64, vi: Visibility, tj: f64, vj: Visibility, m: usize, s: usize) -> Complex64 {
    let (ri, rj) = (vi.rows(m, s), vj.rows(m, s));
    (ri.start.max(rj.start)..ri.end.min(rj.end))
        .map(|r| cis_turns(r as f64 * (tj - ti)))
        .sum()
}

fn delay_cross(gi: f64, gj: f64, n: usize) -> Complex64 {
    (0..n).map(|k| cis_turns(k as f64 * (gj - gi))).sum()
}

/// `(a o p)^H Y q*` for one path.
fn correlate(y: &ComplexGrid, theta: f64, gamma: f64, vis: Visibility, s: usize) -> Complex64 {
    let qc: Vec<Complex64> = (0..y.cols()).map(|k| cis_turns(-(k as f64) * gamma)).collect();
    vis.rows(y.rows(), s)
        .map(|r| {
            let inner: Complex64 = y.row(r).iter().zip(&qc).map(|(v, q)| v * q).sum();
            cis_turns(-(r as f64) * theta) * inner
        })
        .sum()
}

/// Joint least-squares gains for fixed angles, delays and regions, scaled by
/// `1 / sqrt(P)` so they estimate the channel gains directly.
pub fn coarse_gains(
    y: &ComplexGrid,
    paths: &[(f64, f64, Visibility)],
    s: usize,
    p_ul: f64,
) -> Result<Vec<Complex64>> {
    let (m, n) = (y.rows(), y.cols());
    let l = paths.len();
    let mut gram = vec![Complex64::new(0.0, 0.0); l * l];
    for (i, &(ti, gi, vi)) in paths.iter().enumerate() {
        for (j, &(tj, gj, vj)) in paths.iter().enumerate().skip(i) {
            let g = masked_cross(ti, vi, tj, vj, m, s) * delay_cross(gi, gj, n);
            gram[i * l + j] = g;
            gram[j * l + i] = g.conj();
        }
    }
    let rhs: Vec<Complex64> = paths
        .iter()
        .map(|&(t, g, v)| correlate(y, t, g, v, s))
        .collect();
    let x = solve_gram(&gram, &rhs)?;
    let k = p_ul.sqrt();
    Ok(x.into_iter().map(|v| v / k).collect())
}

/// Stable descending order of `|alpha|^2` times the visible antenna count.
pub fn order_paths(weights: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..weights.len()).collect();
    idx.sort_by(|&a, &b| weights[b].total_cmp(&weights[a]));
    idx
}

pub fn path_weight(est: &PathEstimate, m: usize, s: usize) -> f64 {
    est.alpha_coarse.norm_sqr() * est.visibility.antenna_count(m, s) as f64
}

/// Matched-filter power on the visible rows with its derivatives.
#[derive(Clone, Copy, Debug)]
pub struct Objective {
    pub value: f64,
    /// `d/dtheta, d/dgamma`.
    pub grad: [f64; 2],
    pub hess: [[f64; 2]; 2],
    /// `(a o p)^H Y q*` at the evaluation point.
    pub corr: Complex64,
}

/// `G = |sum_{m in vis} sum_n exp(-j 2 pi (m theta + n gamma)) Y_mn|^2 / M_vis`.
pub fn objective(y: &ComplexGrid, theta: f64, gamma: f64, vis: Visibility, s: usize) -> Objective {
    let n = y.cols();
    let rows = vis.rows(y.rows(), s);
    let mv = rows.len() as f64;
    let qc: Vec<Complex64> = (0..n).map(|k| cis_turns(-(k as f64) * gamma)).collect();
    let mut f = Complex64::new(0.0, 0.0);
    let (mut ft, mut fg, mut ftt, mut fgg, mut ftg) = (f, f, f, f, f);
    let j = Complex64::new(0.0, -TAU);
    for r in rows {
        let (mut u, mut u1, mut u2) = (f * 0.0, f * 0.0, f * 0.0);
        for (k, (v, q)) in y.row(r).iter().zip(&qc).enumerate() {
            let t = v * q;
            let kk = k as f64;
            u += t;
            u1 += t * kk;
            u2 += t * (kk * kk);
        }
        // d/dgamma brings down -j 2 pi n
        let u1 = u1 * j;
        let u2 = u2 * (j * j);
        let e = cis_turns(-(r as f64) * theta);
        let dm = j * r as f64;
        f += e * u;
        ft += e * u * dm;
        ftt += e * u * dm * dm;
        fg += e * u1;
        fgg += e * u2;
        ftg += e * u1 * dm;
    }
    let g = |a: Complex64, b: Complex64| 2.0 * (a.conj() * b).re / mv;
    Objective {
        value: f.norm_sqr() / mv,
        grad: [g(f, ft), g(f, fg)],
        hess: [
            [g(ft, ft) + g(f, ftt), g(ft, fg) + g(f, ftg)],
            [g(ft, fg) + g(f, ftg), g(fg, fg) + g(f, fgg)],
        ],
        corr: f,
    }
}

fn objective_value(y: &ComplexGrid, theta: f64, gamma: f64, vis: Visibility, s: usize) -> f64 {
    correlate(y, theta, gamma, vis, s).norm_sqr() / vis.rows(y.rows(), s).len() as f64
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum StepKind {
    #[default]
    Newton,
    /// Newton rejected or Hessian unusable; per-axis probes taken.
    Fallback,
    /// Nothing improved the objective.
    Stalled,
}

/// One refinement visit on a residual with the path's own component added
/// back. Only the visible rows of `y` are read.
pub fn newton_refine_path(
    y: &ComplexGrid,
    est: &PathEstimate,
    s: usize,
    p_ul: f64,
    cfg: &RefinerConfig,
) -> (PathEstimate, StepKind) {
    let (m, n) = (y.rows(), y.cols());
    let vis = est.visibility;
    let (mut theta, mut gamma) = (est.theta, est.gamma);
    let mut kind = StepKind::Newton;
    for _ in 0..cfg.newton_steps_per_visit {
        let obj = objective(y, theta, gamma, vis, s);
        // step on ln G, which stays concave across the whole main lobe
        let (gr, v) = (obj.grad, obj.value.max(f64::MIN_POSITIVE));
        let lh = |i: usize, j: usize| obj.hess[i][j] / v - gr[i] * gr[j] / (v * v);
        let lg = [gr[0] / v, gr[1] / v];
        let (a, b, d) = (lh(0, 0), lh(0, 1), lh(1, 1));
        let det = a * d - b * b;
        let mut accepted = false;
        // a maximum needs a negative-definite Hessian
        if a < 0.0 && det > 0.0 {
            let st = -(d * lg[0] - b * lg[1]) / det;
            let sg = -(a * lg[1] - b * lg[0]) / det;
            let (t1, g1) = (theta + st, gamma + sg);
            if !cfg.improvement_only || objective_value(y, t1, g1, vis, s) > obj.value {
                theta = t1;
                gamma = g1;
                accepted = true;
            }
        }
        if !accepted {
            let moved = axis_search(y, &mut theta, &mut gamma, vis, s, obj, cfg.oversampling, m, n);
            kind = if moved { StepKind::Fallback } else { StepKind::Stalled };
        }
    }
    let corr = correlate(y, theta, gamma, vis, s);
    let mv = vis.rows(m, s).len() as f64;
    let alpha = corr / (p_ul.sqrt() * mv * n as f64);
    (
        PathEstimate {
            theta: theta.rem_euclid(1.0),
            gamma: gamma.rem_euclid(1.0),
            alpha,
            alpha_coarse: est.alpha_coarse,
            visibility: vis,
        },
        kind,
    )
}

/// Per-axis 1-D Newton, else probes of half a grid cell halved until the
/// objective improves. Returns whether anything moved.
#[allow(clippy::too_many_arguments)]
fn axis_search(
    y: &ComplexGrid,
    theta: &mut f64,
    gamma: &mut f64,
    vis: Visibility,
    s: usize,
    obj: Objective,
    oversampling: usize,
    m: usize,
    n: usize,
) -> bool {
    let mut best = obj.value;
    let mut moved = false;
    let cells = [0.5 / (oversampling * m) as f64, 0.5 / (oversampling * n) as f64];
    for axis in 0..2 {
        let eval = |x: f64, t: f64, g: f64| {
            if axis == 0 {
                objective_value(y, x, g, vis, s)
            } else {
                objective_value(y, t, x, vis, s)
            }
        };
        let cur = if axis == 0 { *theta } else { *gamma };
        let (g1, g2) = (obj.grad[axis], obj.hess[axis][axis]);
        let mut trial = Vec::with_capacity(24);
        if g2 < 0.0 {
            trial.push(cur - g1 / g2);
        }
        let mut h = cells[axis];
        for _ in 0..10 {
            trial.push(cur + h);
            trial.push(cur - h);
            h *= 0.5;
        }
        for x in trial {
            let v = eval(x, *theta, *gamma);
            if v > best {
                best = v;
                if axis == 0 {
                    *theta = x;
                } else {
                    *gamma = x;
                }
                moved = true;
                break;
            }
        }
    }
    moved
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RefineDiagnostics {
    /// Residual power before refinement and after each round.
    pub residual_power: Vec<f64>,
    /// `(theta, gamma)` of every path after each round.
    pub trajectory: Vec<Vec<(f64, f64)>>,
    pub fallback_steps: usize,
    pub stalled_steps: usize,
}

fn add_component(res: &mut ComplexGrid, est: &PathEstimate, sign: f64, amp: f64, s: usize) {
    accumulate_path(res, est.alpha * (sign * amp), est.theta, est.gamma, est.visibility, s);
}

/// Refines every path against the shared residual for `cfg.rounds` rounds
/// and then re-solves all gains jointly. Returns the estimates and the final
/// residual.
pub fn refine_all(
    y: &ComplexGrid,
    initial: &[PathEstimate],
    s: usize,
    p_ul: f64,
    cfg: &RefinerConfig,
) -> Result<(Vec<PathEstimate>, ComplexGrid, RefineDiagnostics)> {
    cfg.validate()?;
    let (m, _) = (y.rows(), y.cols());
    let amp = p_ul.sqrt();
    let mut ests = initial.to_vec();
    let mut diag = RefineDiagnostics::default();
    if ests.is_empty() {
        diag.residual_power.push(y.norm_sqr());
        return Ok((ests, y.clone(), diag));
    }
    let coarse = coarse_gains(y, &triples(&ests), s, p_ul)?;
    for (e, g) in ests.iter_mut().zip(coarse) {
        e.alpha = g;
        e.alpha_coarse = g;
    }
    let mut res = y.clone();
    for e in &ests {
        add_component(&mut res, e, -1.0, amp, s);
    }
    diag.residual_power.push(res.norm_sqr());
    let order = order_paths(&ests.iter().map(|e| path_weight(e, m, s)).collect::<Vec<_>>());
    for _ in 0..cfg.rounds {
        for &l in &order {
            add_component(&mut res, &ests[l], 1.0, amp, s);
            let (next, kind) = newton_refine_path(&res, &ests[l], s, p_ul, cfg);
            match kind {
                StepKind::Newton => {}
                StepKind::Fallback => diag.fallback_steps += 1,
                StepKind::Stalled => diag.stalled_steps += 1,
            }
            ests[l] = next;
            add_component(&mut res, &ests[l], -1.0, amp, s);
        }
        diag.residual_power.push(res.norm_sqr());
        diag.trajectory
            .push(ests.iter().map(|e| (e.theta, e.gamma)).collect());
    }
    let gains = coarse_gains(y, &triples(&ests), s, p_ul)?;
    for (e, g) in ests.iter_mut().zip(gains) {
        e.alpha = g;
    }
    let mut res = y.clone();
    for e in &ests {
        add_component(&mut res, e, -1.0, amp, s);
    }
    Ok((ests, res, diag))
}

fn triples(ests: &[PathEstimate]) -> Vec<(f64, f64, Visibility)> {
    ests.iter().map(|e| (e.theta, e.gamma, e.visibility)).collect()
}

/// `sum_l alpha_l (a o p) q^T` in the `N x M` layout.
pub fn reconstruct_uplink(ests: &[PathEstimate], m: usize, n: usize, s: usize) -> ComplexGrid {
    let mut acc = ComplexGrid::zeros(m, n, Domain::AntennaSubcarrier);
    for e in ests {
        accumulate_path(&mut acc, e.alpha, e.theta, e.gamma, e.visibility, s);
    }
    acc.transpose()
}
