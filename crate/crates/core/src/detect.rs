//! Path detection on angular-temporal images.
//!
//! [`detect_boxes`] is an algorithmic stand-in for a trained object detector:
//! it emits the same `{confidence, x_min, y_min, x_max, y_max}` tuples in the
//! 938 frame. Boxes from an external network can be loaded instead with
//! [`import_detections`].
//!
//! The built-in detector repeatedly takes the strongest remaining cell,
//! sizes its spot from the measured main-lobe extent along the angle axis,
//! and then removes the spot's whole cross-shaped pattern from a working
//! copy of the image before looking for the next one.

use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::RealGrid;
use crate::image::{box_edges, dirichlet, SourceDims, NETWORK_GRID};

/// Detections below this confidence are treated as fake paths.
pub const MIN_CONFIDENCE: f64 = 0.5;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DetectorConfig {
    /// Peak-to-median ratio below which the search stops.
    pub threshold: f64,
    /// Confidence scale: `1 - exp(-(peak / floor) / kappa)`.
    pub kappa: f64,
    pub max_paths: usize,
    /// Extra fraction of the fitted pattern removed during cancellation.
    pub cancel_margin: f64,
}

impl Default for DetectorConfig {
    fn default() -> Self {
        Self {
            threshold: 10.0,
            // 10x the floor maps to confidence 0.8
            kappa: 10.0 / 5f64.ln(),
            max_paths: 16,
            cancel_margin: 0.1,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub confidence: f64,
    pub x_min: i64,
    pub y_min: i64,
    pub x_max: i64,
    pub y_max: i64,
}

impl Detection {
    pub fn validate(&self) -> Result<()> {
        if !(self.confidence > 0.0 && self.confidence <= 1.0) {
            return Err(Error::Validation(format!(
                "confidence {} outside (0, 1]",
                self.confidence
            )));
        }
        let in_frame = |v: i64| (0..=NETWORK_GRID).contains(&v);
        if ![self.x_min, self.y_min, self.x_max, self.y_max]
            .into_iter()
            .all(in_frame)
        {
            return Err(Error::Validation(format!("box {self:?} leaves the 938 frame")));
        }
        if self.x_min >= self.x_max || self.y_min >= self.y_max {
            return Err(Error::Validation(format!("box {self:?} has no area")));
        }
        Ok(())
    }
}

/// Frequency-independent parameters read off one box.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CoarseEstimate {
    pub theta: f64,
    pub gamma: f64,
    /// Estimated number of subarrays that see the path.
    pub span: usize,
}

/// Box centre gives `(theta, gamma)`; box height is matched against the
/// nominal spot height `2S / (sM)` of every candidate span `s`.
pub fn coarse_estimates(det: &Detection, m: usize, _n: usize, s: usize) -> CoarseEstimate {
    let g = NETWORK_GRID as f64;
    let theta = (det.y_min + det.y_max) as f64 / (2.0 * g);
    let gamma = (det.x_min + det.x_max) as f64 / (2.0 * g);
    let h = (det.y_max - det.y_min) as f64 / g;
    let mut span = 1;
    let mut best = f64::INFINITY;
    for cand in 1..=s {
        let d = (h - 2.0 * s as f64 / (cand * m) as f64).abs();
        // strict: ties keep the smaller span
        if d < best {
            best = d;
            span = cand;
        }
    }
    CoarseEstimate { theta, gamma, span }
}

pub fn drop_low_confidence(dets: &[Detection]) -> Vec<Detection> {
    dets.iter()
        .copied()
        .filter(|d| d.confidence >= MIN_CONFIDENCE)
        .collect()
}

/// Parses JSON-lines detections, validates them, and drops fake paths.
pub fn parse_detections(reader: impl BufRead) -> Result<Vec<Detection>> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let det: Detection = serde_json::from_str(&line).map_err(|e| Error::Parse {
            line: i + 1,
            message: e.to_string(),
        })?;
        det.validate()
            .map_err(|e| Error::Validation(format!("line {}: {e}", i + 1)))?;
        out.push(det);
    }
    Ok(drop_low_confidence(&out))
}

pub fn import_detections(path: &Path) -> Result<Vec<Detection>> {
    parse_detections(BufReader::new(std::fs::File::open(path)?))
}

pub fn write_detections(dets: &[Detection], mut w: impl Write) -> Result<()> {
    for d in dets {
        serde_json::to_writer(&mut w, d)?;
        writeln!(w)?;
    }
    Ok(())
}

/// Box edges `ceil(938 (c -+ e/2))`. Near a frame edge the extent is shrunk
/// symmetrically instead of clipped so the box centre stays on the spot.
fn centred_edges(center: f64, extent: f64) -> (i64, i64) {
    let g = NETWORK_GRID as f64;
    let half = (g * extent / 2.0).min(g * center).min(g * (1.0 - center));
    let (lo, hi) = if half < g * extent / 2.0 {
        (
            (g * center - half).ceil() as i64,
            (g * center + half).ceil() as i64,
        )
    } else {
        box_edges(center, extent)
    };
    let lo = lo.clamp(0, NETWORK_GRID - 1);
    (lo, hi.clamp(lo + 1, NETWORK_GRID))
}

/// Circular distance on `[0, 1)`.
#[inline]
fn wrap_dist(a: f64, b: f64) -> f64 {
    let d = (a - b).rem_euclid(1.0);
    d.min(1.0 - d)
}

struct Spot {
    theta: f64,
    gamma: f64,
    height: f64,
}

/// Vertex offset of a parabola through three samples, in `[-0.5, 0.5]`.
fn parabolic_offset(left: f64, mid: f64, right: f64) -> f64 {
    let den = left - 2.0 * mid + right;
    if den >= 0.0 {
        return 0.0;
    }
    (0.5 * (left - right) / den).clamp(-0.5, 0.5)
}

/// Residual of the best scaled fit of `|D_k|` to a column window centred on
/// the peak row; `shift` is the peak row minus the sub-grid centre.
fn lobe_misfit(column: &[f64], window: isize, shift: f64, rows: usize, k: usize) -> f64 {
    let model: Vec<f64> = (-window..=window)
        .map(|i| dirichlet(k, (i as f64 + shift) / rows as f64) / k as f64)
        .collect();
    let mm: f64 = model.iter().map(|v| v * v).sum();
    let xm: f64 = model.iter().zip(column).map(|(m, x)| m * x).sum();
    let a = xm / mm;
    model
        .iter()
        .zip(column)
        .map(|(m, x)| (x - a * m).powi(2))
        .sum()
}

/// Detects path spots in a linear-magnitude angular-temporal image.
pub fn detect_boxes(img: &RealGrid, dims: SourceDims, cfg: &DetectorConfig) -> Vec<Detection> {
    let (rows, cols) = (img.rows, img.cols);
    if rows == 0 || cols == 0 || dims.m == 0 || dims.n == 0 || dims.s == 0 {
        return Vec::new();
    }
    // median found in the scratch copy, which is then restored
    let mut work = img.clone();
    let floor = {
        let mid = work.data.len() / 2;
        let (_, med, _) = work.data.select_nth_unstable_by(mid, f64::total_cmp);
        *med
    };
    work.data.copy_from_slice(&img.data);
    let peak_all = img.data.iter().copied().fold(0.0, f64::max);
    if !(peak_all > 0.0) {
        return Vec::new();
    }
    let floor = floor.max(peak_all * 1e-12);

    let candidates: Vec<usize> = (1..=dims.s).map(|span| span * dims.m / dims.s).collect();
    let width = 2.0 / dims.n as f64;
    let window = (rows as f64 / candidates[0] as f64).ceil() as isize;

    let mut row_max: Vec<f64> = work.data.chunks_exact(cols).map(row_peak).collect();
    let mut spots: Vec<Spot> = Vec::new();
    let mut out = Vec::new();
    let at = |g: &RealGrid, r: isize, c: isize| {
        g.get(
            r.rem_euclid(rows as isize) as usize,
            c.rem_euclid(cols as isize) as usize,
        )
    };

    for _ in 0..4 * cfg.max_paths {
        if out.len() >= cfg.max_paths {
            break;
        }
        let Some(r) = (0..rows).max_by(|&a, &b| row_max[a].total_cmp(&row_max[b])) else { break };
        let row = &work.data[r * cols..(r + 1) * cols];
        let c = (0..cols).fold(0, |b, j| if row[j] > row[b] { j } else { b });
        let v = row[c];
        if v < cfg.threshold * floor {
            break;
        }
        let (ri, ci) = (r as isize, c as isize);
        let dr = parabolic_offset(at(&work, ri - 1, ci), v, at(&work, ri + 1, ci));
        let dc = parabolic_offset(at(&work, ri, ci - 1), v, at(&work, ri, ci + 1));
        let theta = ((r as f64 + dr) / rows as f64).rem_euclid(1.0);
        let gamma = ((c as f64 + dc) / cols as f64).rem_euclid(1.0);

        // main-lobe extent along the angle axis: least-squares fit of each
        // candidate pattern over the widest main lobe
        let column: Vec<f64> = (-window..=window).map(|i| at(&work, ri + i, ci)).collect();
        let k = candidates
            .iter()
            .map(|&k| (k, lobe_misfit(&column, window, r as f64 - theta * rows as f64, rows, k)))
            .min_by(|a, b| a.1.total_cmp(&b.1))
            .map(|(k, _)| k)
            .expect("at least one subarray");
        let height = 2.0 / k as f64;

        let pa: Vec<f64> = (0..rows)
            .map(|i| dirichlet(k, i as f64 / rows as f64 - theta) / k as f64)
            .collect();
        let pt: Vec<f64> = (0..cols)
            .map(|j| dirichlet(dims.n, j as f64 / cols as f64 - gamma) / dims.n as f64)
            .collect();
        let amp = v / (pa[r] * pt[c]).max(1e-6);
        cancel(&mut work, &mut row_max, &pa, &pt, amp * (1.0 + cfg.cancel_margin));
        for i in clear_box(&mut work, theta, gamma, height, width) {
            row_max[i] = row_peak(&work.data[i * cols..(i + 1) * cols]);
        }

        let duplicate = spots.iter().any(|sp| {
            wrap_dist(sp.gamma, gamma) < width / 2.0
                && wrap_dist(sp.theta, theta) < sp.height.max(height) / 2.0
        });
        if duplicate {
            continue;
        }
        spots.push(Spot {
            theta,
            gamma,
            height,
        });

        let confidence = (1.0 - (-(v / floor) / cfg.kappa).exp()).clamp(f64::MIN_POSITIVE, 1.0);
        if confidence < MIN_CONFIDENCE {
            continue;
        }
        let (x_min, x_max) = centred_edges(gamma, width);
        let (y_min, y_max) = centred_edges(theta, height);
        out.push(Detection {
            confidence,
            x_min,
            y_min,
            x_max,
            y_max,
        });
    }
    out
}

fn row_peak(row: &[f64]) -> f64 {
    row.iter().copied().fold(0.0, f64::max)
}

/// `work -= amp * pa pt^T`, floored at zero; refreshes the per-row maxima.
fn cancel(work: &mut RealGrid, row_max: &mut [f64], pa: &[f64], pt: &[f64], amp: f64) {
    let cols = work.cols;
    for ((row, &a), best) in work.data.chunks_exact_mut(cols).zip(pa).zip(row_max) {
        let ka = amp * a;
        let mut m = 0.0f64;
        for (v, &t) in row.iter_mut().zip(pt) {
            *v = (*v - ka * t).max(0.0);
            m = m.max(*v);
        }
        *best = m;
    }
}

/// Zeroes the main-lobe rectangle around a spot (periodic in both axes) and
/// returns the rows touched.
fn clear_box(work: &mut RealGrid, theta: f64, gamma: f64, height: f64, width: f64) -> Vec<usize> {
    let (rows, cols) = (work.rows as isize, work.cols as isize);
    let hr = (height / 2.0 * rows as f64).ceil() as isize;
    let hc = (width / 2.0 * cols as f64).ceil() as isize;
    let r0 = (theta * rows as f64).round() as isize;
    let c0 = (gamma * cols as f64).round() as isize;
    let mut touched = Vec::new();
    for dr in (-hr..=hr).take(rows as usize) {
        let r = (r0 + dr).rem_euclid(rows) as usize;
        for dc in (-hc..=hc).take(cols as usize) {
            let c = (c0 + dc).rem_euclid(cols) as usize;
            work.set(r, c, 0.0);
        }
        touched.push(r);
    }
    touched
}
