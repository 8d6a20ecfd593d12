//! Angular-temporal images of the uplink pilots.
//!
//! The pilots are projected onto an oversampled grid of steering and delay
//! vectors. Each path then shows up as a cross-shaped pattern whose central
//! spot is centred on `(gamma, theta)` and whose size encodes the number of
//! antennas that see the path.
//!
//! Image rows are angle and columns are delay, both running over `[0, 1)`
//! from the top-left corner. The raw product `U_a^H Y U_t` places angle
//! `theta` at row `(-theta mod 1) * gamma_a M`; images undo that reflection so
//! row `r` always means `theta = r / (gamma_a M)`.

use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use num_complex::Complex64;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{ComplexGrid, Domain, RealGrid};
use crate::model::Scenario;

/// Side of the detector's square coordinate frame.
pub const NETWORK_GRID: i64 = 938;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ImageConfig {
    pub gamma_a: usize,
    pub gamma_t: usize,
    pub eta: f64,
}

impl Default for ImageConfig {
    fn default() -> Self {
        Self {
            gamma_a: 16,
            gamma_t: 16,
            eta: 255.0,
        }
    }
}

impl ImageConfig {
    pub fn validate(&self) -> Result<()> {
        if self.gamma_a == 0 || self.gamma_t == 0 {
            return Err(Error::InvalidConfig("oversampling rates must be >= 1".into()));
        }
        if !(self.eta > 0.0) {
            return Err(Error::InvalidConfig("eta must be positive".into()));
        }
        Ok(())
    }
}

/// Array dimensions an image was produced from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SourceDims {
    pub m: usize,
    pub n: usize,
    pub s: usize,
}

#[derive(Clone, Debug)]
pub struct SpectralImage {
    /// `|Y_bar|`, re-indexed so row `r` is angle `r / rows`.
    pub linear: RealGrid,
    /// `eta * linear / max(linear)`.
    pub magnitudes: RealGrid,
    pub eta: f64,
    pub dims: SourceDims,
}

impl SpectralImage {
    pub fn rows(&self) -> usize {
        self.magnitudes.rows
    }

    pub fn cols(&self) -> usize {
        self.magnitudes.cols
    }
}

/// `U_a^H Y U_t` for an `M x N` pilot grid, computed with zero-padded FFTs.
///
/// Column `k` of `U_a` is `a(-k / (gamma_a M))`, column `k` of `U_t` is
/// `q(-k / (gamma_t N))`.
pub fn angular_temporal_transform(y: &ComplexGrid, cfg: &ImageConfig) -> Result<ComplexGrid> {
    cfg.validate()?;
    if y.domain() != Domain::AntennaSubcarrier || y.rows() == 0 || y.cols() == 0 {
        return Err(Error::DimensionMismatch {
            expected: "non-empty antenna x subcarrier grid".into(),
            found: format!("{}x{} {:?}", y.rows(), y.cols(), y.domain()),
        });
    }
    let (m, n) = (y.rows(), y.cols());
    let (ma, nt) = (cfg.gamma_a * m, cfg.gamma_t * n);
    let mut planner = FftPlanner::<f64>::new();
    let zero = Complex64::new(0.0, 0.0);

    // Angle axis first, on the short side: sum_m e^{+j 2 pi m k / ma} Y[m, n]
    // is an unnormalised inverse DFT of each zero-padded column.
    let inv = planner.plan_fft_inverse(ma);
    let mut cols = vec![zero; n * ma];
    for r in 0..m {
        for (c, v) in y.row(r).iter().enumerate() {
            cols[c * ma + r] = *v;
        }
    }
    inv.process(&mut cols);

    // Delay axis: sum_n T[k, n] e^{-j 2 pi n c / nt} is a forward DFT of each
    // zero-padded output row.
    let fwd = planner.plan_fft_forward(nt);
    let mut out = vec![zero; ma * nt];
    for (k, row) in out.chunks_exact_mut(nt).enumerate() {
        for c in 0..n {
            row[c] = cols[c * ma + k];
        }
    }
    fwd.process(&mut out);
    ComplexGrid::from_vec(ma, nt, Domain::AngularTemporal, out)
}

/// Row of the transform output holding image row `r`.
#[inline]
pub fn transform_row(r: usize, rows: usize) -> usize {
    (rows - r) % rows
}

/// Magnitude image of a transform output, normalised so its peak equals `eta`.
pub fn normalize_image(ybar: &ComplexGrid, eta: f64, dims: SourceDims) -> Result<SpectralImage> {
    if !(eta > 0.0) {
        return Err(Error::InvalidConfig("eta must be positive".into()));
    }
    let (rows, cols) = (ybar.rows(), ybar.cols());
    let mut linear = RealGrid::zeros(rows, cols);
    for r in 0..rows {
        let src = ybar.row(transform_row(r, rows));
        for (dst, z) in linear.data[r * cols..(r + 1) * cols].iter_mut().zip(src) {
            *dst = z.norm_sqr().sqrt();
        }
    }
    let peak = linear.data.iter().copied().fold(0.0, f64::max);
    if !(peak > 0.0) || !peak.is_finite() {
        return Err(Error::DegenerateInput(
            "cannot normalise an all-zero angular-temporal grid".into(),
        ));
    }
    let k = eta / peak;
    let magnitudes = RealGrid {
        rows,
        cols,
        data: linear.data.iter().map(|v| v * k).collect(),
    };
    Ok(SpectralImage {
        linear,
        magnitudes,
        eta,
        dims,
    })
}

/// Pilots straight to a normalised image.
pub fn spectral_image(y: &ComplexGrid, s: usize, cfg: &ImageConfig) -> Result<SpectralImage> {
    let ybar = angular_temporal_transform(y, cfg)?;
    normalize_image(
        &ybar,
        cfg.eta,
        SourceDims {
            m: y.rows(),
            n: y.cols(),
            s,
        },
    )
}

/// Nominal spot width (delay) and height (angle) in normalised units.
pub fn spot_size(n: usize, m: usize, s: usize, span: usize) -> (f64, f64) {
    (2.0 / n as f64, 2.0 * s as f64 / (span * m) as f64)
}

/// `{0, x_min, y_min, x_max, y_max}` in the 938 frame; `x` is delay, `y` is angle.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BoxLabel {
    pub class_id: u32,
    pub x_min: i64,
    pub y_min: i64,
    pub x_max: i64,
    pub y_max: i64,
}

impl BoxLabel {
    pub fn validate(&self) -> Result<()> {
        let in_frame = |v: i64| (0..=NETWORK_GRID).contains(&v);
        if self.class_id != 0 {
            return Err(Error::Validation(format!("class id {} != 0", self.class_id)));
        }
        if ![self.x_min, self.y_min, self.x_max, self.y_max]
            .into_iter()
            .all(in_frame)
        {
            return Err(Error::Validation(format!("box {self:?} leaves the frame")));
        }
        if self.x_min >= self.x_max || self.y_min >= self.y_max {
            return Err(Error::Validation(format!("box {self:?} is empty")));
        }
        Ok(())
    }

    pub fn to_line(&self) -> String {
        format!(
            "{} {} {} {} {}",
            self.class_id, self.x_min, self.y_min, self.x_max, self.y_max
        )
    }

    pub fn parse_line(line: &str) -> Result<Self> {
        let fields: Vec<i64> = line
            .split_whitespace()
            .map(|t| t.parse::<i64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| Error::Validation(format!("label `{line}`: {e}")))?;
        let [class, x_min, y_min, x_max, y_max] = fields[..] else {
            return Err(Error::Validation(format!("label `{line}` needs 5 fields")));
        };
        let label = Self {
            class_id: u32::try_from(class)
                .map_err(|_| Error::Validation(format!("bad class id {class}")))?,
            x_min,
            y_min,
            x_max,
            y_max,
        };
        label.validate()?;
        Ok(label)
    }
}

/// `ceil(938 (c -+ extent / 2))` on both sides, clamped to the frame.
pub fn box_edges(center: f64, extent: f64) -> (i64, i64) {
    let g = NETWORK_GRID as f64;
    let lo = (g * (center - extent / 2.0)).ceil() as i64;
    let hi = (g * (center + extent / 2.0)).ceil() as i64;
    (lo.clamp(0, NETWORK_GRID), hi.clamp(0, NETWORK_GRID))
}

/// One training label per path. Spots that wrap past a frame edge are cut at
/// that edge.
pub fn make_labels(scenario: &Scenario) -> Vec<BoxLabel> {
    let cfg = &scenario.config;
    scenario
        .paths
        .iter()
        .map(|p| {
            let (w, h) = spot_size(cfg.n, cfg.m, cfg.s, p.visibility.span());
            let (x_min, x_max) = box_edges(p.gamma, w);
            let (y_min, y_max) = box_edges(p.theta, h);
            BoxLabel {
                class_id: 0,
                x_min,
                y_min,
                x_max,
                y_max,
            }
        })
        .collect()
}

/// 8-bit grayscale pixels, strong components dark on white.
pub fn to_pixels(img: &SpectralImage) -> Vec<u8> {
    img.magnitudes
        .data
        .iter()
        .map(|&v| (255.0 * (img.eta - v) / img.eta).round().clamp(0.0, 255.0) as u8)
        .collect()
}

pub fn export_png(img: &SpectralImage, path: &Path) -> Result<()> {
    let file = File::create(path)?;
    let mut enc = png::Encoder::new(
        BufWriter::new(file),
        img.cols() as u32,
        img.rows() as u32,
    );
    enc.set_color(png::ColorType::Grayscale);
    enc.set_depth(png::BitDepth::Eight);
    let mut writer = enc.write_header().map_err(|e| Error::Png(e.to_string()))?;
    writer
        .write_image_data(&to_pixels(img))
        .map_err(|e| Error::Png(e.to_string()))?;
    writer.finish().map_err(|e| Error::Png(e.to_string()))?;
    Ok(())
}

/// Linear magnitudes recovered from `to_pixels` output. Each level maps to
/// the centre of its quantisation bin so an all-dark background keeps a
/// nonzero floor.
pub fn from_pixels(width: usize, height: usize, pixels: &[u8]) -> Result<RealGrid> {
    if width * height != pixels.len() || pixels.is_empty() {
        return Err(Error::DimensionMismatch {
            expected: format!("{width}x{height} pixels"),
            found: format!("{}", pixels.len()),
        });
    }
    Ok(RealGrid {
        rows: height,
        cols: width,
        data: pixels.iter().map(|&p| 255.0 - p as f64 + 0.5).collect(),
    })
}

/// Reads back an 8-bit grayscale PNG as `(width, height, pixels)`.
pub fn read_png(path: &Path) -> Result<(usize, usize, Vec<u8>)> {
    let dec = png::Decoder::new(BufReader::new(File::open(path)?));
    let mut reader = dec.read_info().map_err(|e| Error::Png(e.to_string()))?;
    let size = reader
        .output_buffer_size()
        .ok_or_else(|| Error::Png("image too large".into()))?;
    let mut buf = vec![0; size];
    let info = reader
        .next_frame(&mut buf)
        .map_err(|e| Error::Png(e.to_string()))?;
    if info.color_type != png::ColorType::Grayscale || info.bit_depth != png::BitDepth::Eight {
        return Err(Error::Png("expected 8-bit grayscale".into()));
    }
    buf.truncate(info.buffer_size());
    Ok((info.width as usize, info.height as usize, buf))
}

/// `|sin(pi k x) / sin(pi x)|`, the magnitude of a `k`-term geometric phase sum.
#[inline]
pub fn dirichlet(k: usize, x: f64) -> f64 {
    let r = x - x.round();
    let den = (std::f64::consts::PI * r).sin();
    if den.abs() < 1e-12 {
        return k as f64;
    }
    ((std::f64::consts::PI * k as f64 * r).sin() / den).abs()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProbeAxis {
    Angle,
    Delay,
}

#[derive(Clone, Copy, Debug)]
pub struct SpotGeometry {
    pub theta: f64,
    pub gamma: f64,
    pub s_start: usize,
    pub s_end: usize,
    pub m: usize,
    pub n: usize,
    pub s: usize,
}

/// Closed-form single-path spot profile sampled on the image grid along one
/// axis: `|kappa_a|` over `gamma_a M` angle rows or `|kappa_t|` over
/// `gamma_t N` delay columns.
pub fn dark_spot_profile(geo: &SpotGeometry, axis: ProbeAxis, oversampling: usize) -> Vec<f64> {
    match axis {
        ProbeAxis::Angle => {
            let k = (geo.s_end + 1 - geo.s_start) * geo.m / geo.s;
            let len = oversampling * geo.m;
            (0..len)
                .map(|r| dirichlet(k, r as f64 / len as f64 - geo.theta))
                .collect()
        }
        ProbeAxis::Delay => {
            let len = oversampling * geo.n;
            (0..len)
                .map(|c| dirichlet(geo.n, c as f64 / len as f64 - geo.gamma))
                .collect()
        }
    }
}

/// Indices of the first local minima on either side of `peak` in a periodic
/// profile, as signed offsets from the peak.
pub fn first_nulls(profile: &[f64], peak: usize) -> (isize, isize) {
    let len = profile.len() as isize;
    let at = |i: isize| profile[i.rem_euclid(len) as usize];
    let walk = |dir: isize| {
        let mut i = 0isize;
        while i.abs() < len / 2 && at(peak as isize + i + dir) < at(peak as isize + i) {
            i += dir;
        }
        i
    };
    (walk(-1), walk(1))
}
