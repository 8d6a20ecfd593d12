//! Beamformed downlink training, gain estimation at the user, and channel
//! reconstruction at the base station from the fed-back gains.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{ComplexGrid, Domain};
use crate::linalg::solve_gram;
use crate::model::{accumulate_path, cis_turns, db_to_linear, delay_vector, Noise, Scenario};
use crate::refine::PathEstimate;
use crate::rng::{complex_normal, stream_rng, Stream};

/// Downlink gains sent back to the base station.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeedbackPayload {
    pub gains: Vec<Complex64>,
}

/// Unit-norm conjugate beam over the estimated visible antennas.
pub fn beamformer(est: &PathEstimate, m: usize, s: usize) -> Vec<Complex64> {
    let rows = est.visibility.rows(m, s);
    let k = (1.0 / rows.len() as f64).sqrt();
    (0..m)
        .map(|r| {
            if rows.contains(&r) {
                cis_turns(-(r as f64) * est.theta) * k
            } else {
                Complex64::new(0.0, 0.0)
            }
        })
        .collect()
}

/// `(a(theta) o p(vis))^T b` restricted to the visible rows.
fn beam_response(theta: f64, rows: std::ops::Range<usize>, b: &[Complex64]) -> Complex64 {
    rows.map(|r| cis_turns(r as f64 * theta) * b[r]).sum()
}

/// Received pilots on the `L_hat` training symbols, one beam per estimated
/// path. True parameters drive the channel, estimates drive the beams.
pub fn downlink_pilot_observation(
    scenario: &Scenario,
    ests: &[PathEstimate],
    snr_db: f64,
    noise: Noise,
) -> Vec<Vec<Complex64>> {
    let cfg = &scenario.config;
    let (m, n, s) = (cfg.m, cfg.n, cfg.s);
    let amp = db_to_linear(snr_db).sqrt();
    let mut rng = match noise {
        Noise::Off => None,
        Noise::Draw(k) => Some(stream_rng(scenario.seed, Stream::DownlinkNoise(k))),
    };
    let qs: Vec<Vec<Complex64>> = scenario.paths.iter().map(|p| delay_vector(p.gamma, n)).collect();
    ests.iter()
        .map(|e| {
            let b = beamformer(e, m, s);
            let mut y: Vec<Complex64> = match rng.as_mut() {
                Some(r) => (0..n).map(|_| complex_normal(r)).collect(),
                None => vec![Complex64::new(0.0, 0.0); n],
            };
            for (p, q) in scenario.paths.iter().zip(&qs) {
                let c = amp * p.g_dl * beam_response(p.theta, p.visibility.rows(m, s), &b);
                for (v, qn) in y.iter_mut().zip(q) {
                    *v += c * qn;
                }
            }
            y
        })
        .collect()
}

/// Least-squares gains from the stacked training symbols, scaled by
/// `1 / sqrt(P)`.
pub fn estimate_downlink_gains(
    y: &[Vec<Complex64>],
    ests: &[PathEstimate],
    m: usize,
    s: usize,
    p_dl: f64,
) -> Result<FeedbackPayload> {
    let l = ests.len();
    if y.len() != l {
        return Err(Error::DimensionMismatch {
            expected: format!("{l} training symbols"),
            found: format!("{}", y.len()),
        });
    }
    if l == 0 {
        return Ok(FeedbackPayload { gains: Vec::new() });
    }
    let n = y[0].len();
    let beams: Vec<Vec<Complex64>> = ests.iter().map(|e| beamformer(e, m, s)).collect();
    // c[t][l] = (a_l o p_l)^T b_t
    let c: Vec<Vec<Complex64>> = beams
        .iter()
        .map(|b| {
            ests.iter()
                .map(|e| beam_response(e.theta, e.visibility.rows(m, s), b))
                .collect()
        })
        .collect();
    let qs: Vec<Vec<Complex64>> = ests.iter().map(|e| delay_vector(e.gamma, n)).collect();
    let mut gram = vec![Complex64::new(0.0, 0.0); l * l];
    for i in 0..l {
        for j in i..l {
            let qq: Complex64 = (0..n).map(|k| cis_turns(k as f64 * (ests[j].gamma - ests[i].gamma))).sum();
            let cc: Complex64 = c.iter().map(|ct| ct[i].conj() * ct[j]).sum();
            gram[i * l + j] = cc * qq;
            gram[j * l + i] = (cc * qq).conj();
        }
    }
    let rhs: Vec<Complex64> = (0..l)
        .map(|i| {
            c.iter()
                .zip(y)
                .map(|(ct, yt)| {
                    let qy: Complex64 = qs[i].iter().zip(yt).map(|(q, v)| q.conj() * v).sum();
                    ct[i].conj() * qy
                })
                .sum()
        })
        .collect();
    let x = solve_gram(&gram, &rhs)?;
    let k = p_dl.sqrt();
    Ok(FeedbackPayload {
        gains: x.into_iter().map(|v| v / k).collect(),
    })
}

/// `sum_l g_l (a o p) q^T` in the `N x M` layout.
pub fn reconstruct_downlink(
    ests: &[PathEstimate],
    payload: &FeedbackPayload,
    m: usize,
    n: usize,
    s: usize,
) -> Result<ComplexGrid> {
    if payload.gains.len() != ests.len() {
        return Err(Error::DimensionMismatch {
            expected: format!("{} gains", ests.len()),
            found: format!("{}", payload.gains.len()),
        });
    }
    let mut acc = ComplexGrid::zeros(m, n, Domain::AntennaSubcarrier);
    for (e, g) in ests.iter().zip(&payload.gains) {
        accumulate_path(&mut acc, *g, e.theta, e.gamma, e.visibility, s);
    }
    Ok(acc.transpose())
}
