//! Uplink estimation chain: image, detection, visibility, refinement.

use serde::{Deserialize, Serialize};

use crate::detect::{coarse_estimates, detect_boxes, Detection, DetectorConfig};
use crate::error::{Error, Result};
use crate::grid::ComplexGrid;
use crate::image::{spectral_image, ImageConfig};
use crate::refine::{refine_all, PathEstimate, RefineDiagnostics, RefinerConfig};
use crate::visibility::{identify_by_box, identify_by_power, projection_powers, Identifier, DEFAULT_DELTA};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub image: ImageConfig,
    pub detector: DetectorConfig,
    pub refiner: RefinerConfig,
    pub identifier: Identifier,
    pub delta: f64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            image: ImageConfig::default(),
            detector: DetectorConfig::default(),
            refiner: RefinerConfig::default(),
            identifier: Identifier::Power,
            delta: DEFAULT_DELTA,
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        self.image.validate()?;
        self.refiner.validate()?;
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return Err(Error::InvalidConfig(format!("delta {} outside (0, 1)", self.delta)));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct UplinkOutcome {
    pub detections: Vec<Detection>,
    /// Box-derived parameters with their least-squares gains.
    pub coarse: Vec<PathEstimate>,
    pub refined: Vec<PathEstimate>,
    pub diagnostics: RefineDiagnostics,
}

/// Box detections for an `M x N` pilot grid.
pub fn detect_paths(y: &ComplexGrid, s: usize, cfg: &PipelineConfig) -> Result<Vec<Detection>> {
    let img = spectral_image(y, s, &cfg.image)?;
    Ok(detect_boxes(&img.linear, img.dims, &cfg.detector))
}

/// Visibility-tagged coarse estimates for each detection.
pub fn initial_estimates(
    y: &ComplexGrid,
    dets: &[Detection],
    s: usize,
    cfg: &PipelineConfig,
) -> Vec<PathEstimate> {
    let (m, n) = (y.rows(), y.cols());
    dets.iter()
        .map(|d| {
            let c = coarse_estimates(d, m, n, s);
            let powers = projection_powers(y, c.theta, c.gamma, s);
            let vis = match cfg.identifier {
                Identifier::Box => identify_by_box(c.span, &powers),
                Identifier::Power => identify_by_power(&powers, cfg.delta),
            };
            PathEstimate::new(c.theta, c.gamma, vis)
        })
        .collect()
}

/// Runs the whole uplink chain. `imported` replaces the built-in detector.
pub fn estimate_uplink(
    y: &ComplexGrid,
    s: usize,
    p_ul: f64,
    cfg: &PipelineConfig,
    imported: Option<&[Detection]>,
) -> Result<UplinkOutcome> {
    cfg.validate()?;
    let detections = match imported {
        Some(d) => d.to_vec(),
        None => detect_paths(y, s, cfg)?,
    };
    if detections.is_empty() {
        return Err(Error::DegenerateInput("no paths detected".into()));
    }
    let init = initial_estimates(y, &detections, s, cfg);
    let (refined, _, diagnostics) = refine_all(y, &init, s, p_ul, &cfg.refiner)?;
    let coarse = init
        .iter()
        .zip(&refined)
        .map(|(e, r)| PathEstimate {
            alpha: r.alpha_coarse,
            alpha_coarse: r.alpha_coarse,
            ..*e
        })
        .collect();
    Ok(UplinkOutcome {
        detections,
        coarse,
        refined,
        diagnostics,
    })
}
