//! Monte Carlo experiments, overhead ledger, dataset export and result files.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::baselines::{
    alternative_uplink, downlink_training_observation, lmmse_estimate, ls_estimate, nomp_estimate,
    NompConfig,
};
use crate::detect::{detect_boxes, Detection};
use crate::downlink::{downlink_pilot_observation, estimate_downlink_gains, reconstruct_downlink, FeedbackPayload};
use crate::error::{Error, Result};
use crate::grid::ComplexGrid;
use crate::image::{export_png, make_labels, spectral_image, ImageConfig};
use crate::metrics::{nmse, spectral_efficiency, to_db};
use crate::model::{
    db_to_linear, sample_scenario, synthesize_channel, uplink_pilot_observation, Link, Noise,
    Scenario, SystemConfig, Visibility,
};
use crate::pipeline::{estimate_uplink, PipelineConfig};
use crate::refine::{reconstruct_uplink, PathEstimate};
use crate::rng::{derive_seed, stream_rng, Stream};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    Proposed,
    Alternative,
    Nomp,
    Ls,
    Lmmse,
}

impl Scheme {
    pub const ALL: [Scheme; 5] = [
        Scheme::Proposed,
        Scheme::Alternative,
        Scheme::Nomp,
        Scheme::Ls,
        Scheme::Lmmse,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Scheme::Proposed => "proposed",
            Scheme::Alternative => "alternative",
            Scheme::Nomp => "nomp",
            Scheme::Ls => "ls",
            Scheme::Lmmse => "lmmse",
        }
    }
}

impl std::fmt::Display for Scheme {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Scheme {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        Scheme::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| format!("unknown scheme '{s}' (expected proposed, alternative, nomp, ls or lmmse)"))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub system: SystemConfig,
    pub pipeline: PipelineConfig,
    pub nomp: NompConfig,
    pub schemes: Vec<Scheme>,
    pub snr_grid: Vec<f64>,
    pub trials: usize,
    pub seed: u64,
    /// Range of the number of paths per sampled scenario.
    pub paths_min: usize,
    pub paths_max: usize,
    /// Use this scenario in every trial (only the noise changes).
    pub scenario: Option<Scenario>,
    pub out_dir: Option<PathBuf>,
    /// Write one JSON file per trial under `<out>/diagnostics`.
    pub diagnostics: bool,
    pub bootstrap_resamples: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            system: SystemConfig::default(),
            pipeline: PipelineConfig::default(),
            nomp: NompConfig::default(),
            schemes: vec![Scheme::Proposed],
            snr_grid: vec![0.0, 5.0, 10.0],
            trials: 10,
            seed: 1,
            paths_min: 1,
            paths_max: 10,
            scenario: None,
            out_dir: None,
            diagnostics: false,
            bootstrap_resamples: 1000,
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        self.system.validate()?;
        self.pipeline.validate()?;
        self.nomp.validate()?;
        if self.trials == 0 {
            return Err(Error::InvalidConfig("trials must be >= 1".into()));
        }
        if self.snr_grid.is_empty() || self.schemes.is_empty() {
            return Err(Error::InvalidConfig("snr grid and scheme list must be non-empty".into()));
        }
        if self.paths_min == 0 || self.paths_min > self.paths_max {
            return Err(Error::InvalidConfig(format!(
                "path range [{}, {}] is empty",
                self.paths_min, self.paths_max
            )));
        }
        if self.schemes.contains(&Scheme::Alternative) && self.system.s < 2 {
            // still well defined, it just reduces to the proposed scheme
        }
        if let Some(sc) = &self.scenario {
            sc.validate()?;
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Ground truth and noise draw of trial `index`. Identical for every
    /// scheme and SNR point.
    pub fn trial_scenario(&self, index: usize) -> Result<(Scenario, Noise)> {
        match &self.scenario {
            Some(sc) => Ok((sc.clone(), Noise::Draw(index as u64))),
            None => Ok((
                sample_scenario(
                    &self.system,
                    self.paths_min..=self.paths_max,
                    derive_seed(self.seed, index as u64),
                )?,
                Noise::Draw(0),
            )),
        }
    }
}

/// One row of `results.csv`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub scheme: Scheme,
    pub snr_db: f64,
    pub trial: usize,
    pub nmse_ul_db: Option<f64>,
    pub nmse_dl_db: Option<f64>,
    pub se_bps_hz: Option<f64>,
    pub l_hat: usize,
    pub dl_symbols: usize,
    pub feedback_count: usize,
    pub failed: bool,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct StageTimings {
    /// Spectral image formation (proposed scheme only).
    pub image_s: f64,
    /// Path search: box detection, or the whole NOMP loop.
    pub detect_s: f64,
    /// Visibility identification and parameter refinement.
    pub refine_s: f64,
    pub uplink_s: f64,
    pub downlink_s: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TrialOutcome {
    pub record: TrialRecord,
    /// Uplink NMSE of the box-derived estimates before refinement.
    pub nmse_ul_unrefined_db: Option<f64>,
    pub nmse_ul_linear: Option<f64>,
    pub nmse_dl_linear: Option<f64>,
    /// Paths found per subarray (alternative scheme only).
    pub subarray_counts: Option<Vec<usize>>,
    pub timings: StageTimings,
    pub error: Option<String>,
    pub diagnostics: Option<TrialDiagnostics>,
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct TrialDiagnostics {
    pub scenario_seed: u64,
    pub true_paths: usize,
    pub detections: Vec<Detection>,
    pub coarse: Vec<PathEstimate>,
    pub refined: Vec<PathEstimate>,
    pub residual_power: Vec<f64>,
    pub trajectory: Vec<Vec<(f64, f64)>>,
    pub feedback: Option<FeedbackPayload>,
}

struct Estimates {
    h_ul: ComplexGrid,
    h_dl: ComplexGrid,
    unrefined_ul: Option<ComplexGrid>,
    l_hat: usize,
    dl_symbols: usize,
    feedback: usize,
    subarray_counts: Option<Vec<usize>>,
    diag: TrialDiagnostics,
    timings: StageTimings,
}

/// Beamformed training over `ests`, LS gains at the user, reconstruction.
fn beamformed_downlink(
    sc: &Scenario,
    ests: &[PathEstimate],
    snr_db: f64,
    noise: Noise,
) -> Result<(ComplexGrid, FeedbackPayload)> {
    let cfg = &sc.config;
    let y = downlink_pilot_observation(sc, ests, snr_db, noise);
    let fb = estimate_downlink_gains(&y, ests, cfg.m, cfg.s, db_to_linear(snr_db))?;
    let h = reconstruct_downlink(ests, &fb, cfg.m, cfg.n, cfg.s)?;
    Ok((h, fb))
}

fn run_scheme(
    cfg: &ExperimentConfig,
    scheme: Scheme,
    sc: &Scenario,
    noise: Noise,
    snr_db: f64,
    imported: Option<&[Detection]>,
) -> Result<Estimates> {
    let sys = &sc.config;
    let (m, n, s) = (sys.m, sys.n, sys.s);
    let p = db_to_linear(snr_db);
    let y = uplink_pilot_observation(sc, snr_db, noise);
    let t0 = Instant::now();
    let mut diag = TrialDiagnostics {
        scenario_seed: sc.seed,
        true_paths: sc.paths.len(),
        ..TrialDiagnostics::default()
    };
    let mut coarse = None;
    let mut subarray_counts = None;
    let (mut image_s, mut detect_s) = (0.0, 0.0);
    let ests: Vec<PathEstimate> = match scheme {
        Scheme::Proposed => {
            let dets = match imported {
                Some(d) => d.to_vec(),
                None => {
                    let img = spectral_image(&y, s, &cfg.pipeline.image)?;
                    image_s = t0.elapsed().as_secs_f64();
                    let dets = detect_boxes(&img.linear, img.dims, &cfg.pipeline.detector);
                    detect_s = t0.elapsed().as_secs_f64() - image_s;
                    dets
                }
            };
            let out = estimate_uplink(&y, s, p, &cfg.pipeline, Some(&dets))?;
            coarse = Some(out.coarse.clone());
            diag.detections = out.detections;
            diag.coarse = out.coarse;
            diag.residual_power = out.diagnostics.residual_power;
            diag.trajectory = out.diagnostics.trajectory;
            out.refined
        }
        Scheme::Alternative => {
            let out = alternative_uplink(&y, s, p, &cfg.pipeline)?;
            if out.paths.is_empty() {
                return Err(Error::DegenerateInput("no paths detected on any subarray".into()));
            }
            subarray_counts = Some(out.counts);
            out.paths
        }
        Scheme::Nomp => {
            let found = nomp_estimate(&y, &cfg.nomp, p)?;
            detect_s = t0.elapsed().as_secs_f64();
            if found.is_empty() {
                return Err(Error::DegenerateInput("no paths detected".into()));
            }
            found
                .into_iter()
                .map(|e| PathEstimate {
                    visibility: Visibility::full(s),
                    ..e
                })
                .collect()
        }
        Scheme::Ls | Scheme::Lmmse => {
            let h_ul = if scheme == Scheme::Ls {
                ls_estimate(&y, p)
            } else {
                lmmse_estimate(&y, sc, Link::Uplink, p)?
            };
            let uplink_s = t0.elapsed().as_secs_f64();
            let t1 = Instant::now();
            let ytr = downlink_training_observation(sc, snr_db, noise);
            let h_dl = if scheme == Scheme::Ls {
                ls_estimate(&ytr, p)
            } else {
                lmmse_estimate(&ytr, sc, Link::Downlink, p)?
            };
            return Ok(Estimates {
                h_ul,
                h_dl,
                unrefined_ul: None,
                l_hat: 0,
                dl_symbols: m,
                feedback: m * n,
                subarray_counts: None,
                diag,
                timings: StageTimings {
                    uplink_s,
                    downlink_s: t1.elapsed().as_secs_f64(),
                    ..StageTimings::default()
                },
            });
        }
    };
    let uplink_s = t0.elapsed().as_secs_f64();
    let unrefined_ul = coarse.map(|c| reconstruct_uplink(&c, m, n, s));
    let t1 = Instant::now();
    let h_ul = reconstruct_uplink(&ests, m, n, s);
    let (h_dl, fb) = beamformed_downlink(sc, &ests, snr_db, noise)?;
    let l_hat = ests.len();
    diag.refined = ests;
    diag.feedback = Some(fb);
    Ok(Estimates {
        h_ul,
        h_dl,
        unrefined_ul,
        l_hat,
        dl_symbols: l_hat,
        feedback: l_hat,
        subarray_counts,
        diag,
        timings: StageTimings {
            image_s,
            detect_s,
            refine_s: uplink_s - image_s - detect_s,
            uplink_s,
            downlink_s: t1.elapsed().as_secs_f64(),
        },
    })
}

/// Runs one scheme on one trial. Stage errors are recorded, not returned.
pub fn run_trial(
    cfg: &ExperimentConfig,
    scheme: Scheme,
    snr_db: f64,
    trial: usize,
    imported: Option<&[Detection]>,
) -> Result<TrialOutcome> {
    let (sc, noise) = cfg.trial_scenario(trial)?;
    let mut record = TrialRecord {
        scheme,
        snr_db,
        trial,
        nmse_ul_db: None,
        nmse_dl_db: None,
        se_bps_hz: None,
        l_hat: 0,
        dl_symbols: 0,
        feedback_count: 0,
        failed: true,
    };
    let h_ul = synthesize_channel(&sc, Link::Uplink);
    let h_dl = synthesize_channel(&sc, Link::Downlink);
    let scored = run_scheme(cfg, scheme, &sc, noise, snr_db, imported).and_then(|est| {
        let ul = nmse(&est.h_ul, &h_ul)?;
        let dl = nmse(&est.h_dl, &h_dl)?;
        let se = spectral_efficiency(&h_dl, &est.h_dl, db_to_linear(snr_db))?;
        let unrefined = match &est.unrefined_ul {
            Some(h) => Some(nmse(h, &h_ul)?.db()),
            None => None,
        };
        Ok((est, ul, dl, se, unrefined))
    });
    Ok(match scored {
        Ok((est, ul, dl, se, unrefined)) => {
            record.nmse_ul_db = Some(ul.db());
            record.nmse_dl_db = Some(dl.db());
            record.se_bps_hz = Some(se);
            record.l_hat = est.l_hat;
            record.dl_symbols = est.dl_symbols;
            record.feedback_count = est.feedback;
            record.failed = false;
            TrialOutcome {
                record,
                nmse_ul_unrefined_db: unrefined,
                nmse_ul_linear: Some(ul.linear),
                nmse_dl_linear: Some(dl.linear),
                subarray_counts: est.subarray_counts,
                timings: est.timings,
                error: None,
                diagnostics: cfg.diagnostics.then_some(est.diag),
            }
        }
        Err(e) => TrialOutcome {
            record,
            nmse_ul_unrefined_db: None,
            nmse_ul_linear: None,
            nmse_dl_linear: None,
            subarray_counts: None,
            timings: StageTimings::default(),
            error: Some(e.to_string()),
            diagnostics: None,
        },
    })
}

/// Mean with a percentile-bootstrap 95% interval.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Stat {
    pub mean: f64,
    pub ci_low: f64,
    pub ci_high: f64,
}

fn bootstrap(values: &[f64], resamples: usize, seed: u64) -> Option<Stat> {
    if values.is_empty() {
        return None;
    }
    let mean = values.iter().sum::<f64>() / values.len() as f64;
    if resamples == 0 {
        return Some(Stat {
            mean,
            ci_low: mean,
            ci_high: mean,
        });
    }
    let mut rng = stream_rng(seed, Stream::Scenario);
    let mut means: Vec<f64> = (0..resamples)
        .map(|_| {
            (0..values.len())
                .map(|_| values[rng.random_range(0..values.len())])
                .sum::<f64>()
                / values.len() as f64
        })
        .collect();
    means.sort_by(f64::total_cmp);
    let pick = |q: f64| means[((q * (resamples - 1) as f64).round() as usize).min(resamples - 1)];
    Some(Stat {
        mean,
        ci_low: pick(0.025),
        ci_high: pick(0.975),
    })
}

fn to_db_stat(s: Stat) -> Stat {
    Stat {
        mean: to_db(s.mean),
        ci_low: to_db(s.ci_low),
        ci_high: to_db(s.ci_high),
    }
}

/// Aggregates of one `(scheme, snr)` cell. NMSE statistics average the
/// linear values and report dB.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CellSummary {
    pub scheme: Scheme,
    pub snr_db: f64,
    pub trials: usize,
    pub failed: usize,
    pub nmse_ul_db: Option<Stat>,
    pub nmse_dl_db: Option<Stat>,
    pub se_bps_hz: Option<Stat>,
    pub nmse_ul_unrefined_db: Option<Stat>,
    pub mean_l_hat: f64,
    pub mean_dl_symbols: f64,
    pub mean_feedback_count: f64,
    pub mean_image_s: Option<f64>,
    pub mean_detect_s: Option<f64>,
    pub mean_refine_s: Option<f64>,
    pub mean_uplink_s: Option<f64>,
    pub mean_downlink_s: Option<f64>,
}

fn mean(v: impl Iterator<Item = f64>) -> f64 {
    let (s, c) = v.fold((0.0, 0usize), |(s, c), x| (s + x, c + 1));
    if c == 0 {
        f64::NAN
    } else {
        s / c as f64
    }
}

/// Summarises records (and, when present, the matching outcomes).
pub fn summarize(
    records: &[TrialRecord],
    outcomes: Option<&[TrialOutcome]>,
    resamples: usize,
    seed: u64,
) -> Vec<CellSummary> {
    let mut cells: BTreeMap<(Scheme, u64), Vec<usize>> = BTreeMap::new();
    for (i, r) in records.iter().enumerate() {
        cells
            .entry((r.scheme, r.snr_db.to_bits() ^ (1 << 63)))
            .or_default()
            .push(i);
    }
    let mut out: Vec<CellSummary> = cells
        .into_iter()
        .enumerate()
        .map(|(ci, ((scheme, _), idx))| {
            let rows: Vec<&TrialRecord> = idx.iter().map(|&i| &records[i]).collect();
            let ok: Vec<&TrialRecord> = rows.iter().copied().filter(|r| !r.failed).collect();
            let lin = |f: fn(&TrialRecord) -> Option<f64>| -> Vec<f64> {
                ok.iter().filter_map(|r| f(r)).map(|db| 10f64.powf(db / 10.0)).collect()
            };
            let cell_seed = derive_seed(seed, ci as u64);
            let unrefined = outcomes.and_then(|o| {
                let v: Vec<f64> = idx
                    .iter()
                    .filter_map(|&i| o[i].nmse_ul_unrefined_db)
                    .map(|db| 10f64.powf(db / 10.0))
                    .collect();
                bootstrap(&v, resamples, derive_seed(cell_seed, 3)).map(to_db_stat)
            });
            let timing = |f: fn(&StageTimings) -> f64| {
                outcomes.map(|o| mean(idx.iter().filter(|&&i| !o[i].record.failed).map(|&i| f(&o[i].timings))))
            };
            CellSummary {
                scheme,
                snr_db: rows[0].snr_db,
                trials: rows.len(),
                failed: rows.len() - ok.len(),
                nmse_ul_db: bootstrap(&lin(|r| r.nmse_ul_db), resamples, cell_seed).map(to_db_stat),
                nmse_dl_db: bootstrap(&lin(|r| r.nmse_dl_db), resamples, derive_seed(cell_seed, 1))
                    .map(to_db_stat),
                se_bps_hz: bootstrap(
                    &ok.iter().filter_map(|r| r.se_bps_hz).collect::<Vec<_>>(),
                    resamples,
                    derive_seed(cell_seed, 2),
                ),
                nmse_ul_unrefined_db: unrefined,
                mean_l_hat: mean(ok.iter().map(|r| r.l_hat as f64)),
                mean_dl_symbols: mean(ok.iter().map(|r| r.dl_symbols as f64)),
                mean_feedback_count: mean(ok.iter().map(|r| r.feedback_count as f64)),
                mean_image_s: timing(|t| t.image_s),
                mean_detect_s: timing(|t| t.detect_s),
                mean_refine_s: timing(|t| t.refine_s),
                mean_uplink_s: timing(|t| t.uplink_s),
                mean_downlink_s: timing(|t| t.downlink_s),
            }
        })
        .collect();
    out.sort_by(|a, b| (a.scheme, a.snr_db).partial_cmp(&(b.scheme, b.snr_db)).unwrap());
    out
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ReconstructionReport {
    pub scheme: Scheme,
    pub snr_db: f64,
    pub outcomes: Vec<TrialOutcome>,
    pub summary: CellSummary,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RunSummary {
    pub config: ExperimentConfig,
    pub cells: Vec<CellSummary>,
}

/// Every `(scheme, snr, trial)` of the configuration. Results are written
/// to `cfg.out_dir` when set.
pub fn run_experiment(
    cfg: &ExperimentConfig,
    imported: Option<&[Detection]>,
) -> Result<Vec<ReconstructionReport>> {
    cfg.validate()?;
    let mut outcomes = Vec::new();
    for &scheme in &cfg.schemes {
        for &snr in &cfg.snr_grid {
            for t in 0..cfg.trials {
                outcomes.push(run_trial(cfg, scheme, snr, t, imported)?);
            }
        }
    }
    let records: Vec<TrialRecord> = outcomes.iter().map(|o| o.record.clone()).collect();
    let cells = summarize(&records, Some(&outcomes), cfg.bootstrap_resamples, cfg.seed);
    if let Some(dir) = &cfg.out_dir {
        fs::create_dir_all(dir)?;
        write_results_csv(&records, &dir.join("results.csv"))?;
        let summary = RunSummary {
            config: cfg.clone(),
            cells: cells.clone(),
        };
        fs::write(dir.join("summary.json"), serde_json::to_string_pretty(&summary)?)?;
        if cfg.diagnostics {
            let ddir = dir.join("diagnostics");
            fs::create_dir_all(&ddir)?;
            for o in &outcomes {
                let r = &o.record;
                let name = format!("{}_{}_{:05}.json", r.scheme, r.snr_db, r.trial);
                fs::write(ddir.join(name), serde_json::to_string_pretty(o)?)?;
            }
        }
    }
    let mut reports = Vec::new();
    for cell in cells {
        let outs: Vec<TrialOutcome> = outcomes
            .iter()
            .filter(|o| o.record.scheme == cell.scheme && o.record.snr_db == cell.snr_db)
            .cloned()
            .collect();
        reports.push(ReconstructionReport {
            scheme: cell.scheme,
            snr_db: cell.snr_db,
            outcomes: outs,
            summary: cell,
        });
    }
    Ok(reports)
}

pub fn write_results_csv(records: &[TrialRecord], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in records {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_results_csv(path: &Path) -> Result<Vec<TrialRecord>> {
    let mut rd = csv::Reader::from_path(path)?;
    let mut out = Vec::new();
    for (i, row) in rd.deserialize().enumerate() {
        out.push(row.map_err(|e: csv::Error| Error::Parse {
            line: i + 2,
            message: e.to_string(),
        })?);
    }
    Ok(out)
}

/// Recomputes the per-cell summary from a saved `results.csv`.
pub fn evaluate(path: &Path, resamples: usize, seed: u64) -> Result<Vec<CellSummary>> {
    let records = read_results_csv(path)?;
    Ok(summarize(&records, None, resamples, seed))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DatasetConfig {
    pub system: SystemConfig,
    pub image: ImageConfig,
    pub snr_min: f64,
    pub snr_max: f64,
    pub paths_min: usize,
    pub paths_max: usize,
    pub seed: u64,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self {
            system: SystemConfig::default(),
            image: ImageConfig::default(),
            snr_min: 0.0,
            snr_max: 10.0,
            paths_min: 1,
            paths_max: 10,
            seed: 1,
        }
    }
}

/// Writes `count` images to `<out>/images/<id>.png` with YOLO-style labels
/// in `<out>/labels/<id>.txt`. Returns the ids.
pub fn generate_dataset(cfg: &DatasetConfig, count: usize, out: &Path) -> Result<Vec<String>> {
    if count == 0 {
        return Err(Error::InvalidConfig("dataset count must be >= 1".into()));
    }
    if !(cfg.snr_min <= cfg.snr_max) {
        return Err(Error::InvalidConfig("snr_min must not exceed snr_max".into()));
    }
    let images = out.join("images");
    let labels = out.join("labels");
    fs::create_dir_all(&images)?;
    fs::create_dir_all(&labels)?;
    let mut ids = Vec::with_capacity(count);
    for i in 0..count {
        let seed = derive_seed(cfg.seed, i as u64);
        let sc = sample_scenario(&cfg.system, cfg.paths_min..=cfg.paths_max, seed)?;
        let mut rng = stream_rng(derive_seed(seed, u64::MAX), Stream::Scenario);
        let snr = if cfg.snr_max > cfg.snr_min {
            rng.random_range(cfg.snr_min..cfg.snr_max)
        } else {
            cfg.snr_min
        };
        let y = uplink_pilot_observation(&sc, snr, Noise::Draw(0));
        let img = spectral_image(&y, cfg.system.s, &cfg.image)?;
        let id = format!("{i:05}");
        export_png(&img, &images.join(format!("{id}.png")))?;
        let text: String = make_labels(&sc)
            .iter()
            .map(|l| l.to_line() + "\n")
            .collect();
        fs::write(labels.join(format!("{id}.txt")), text)?;
        ids.push(id);
    }
    Ok(ids)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> ExperimentConfig {
        ExperimentConfig {
            system: SystemConfig::new(16, 16, 2),
            schemes: Scheme::ALL.to_vec(),
            snr_grid: vec![10.0],
            trials: 2,
            paths_max: 2,
            bootstrap_resamples: 50,
            ..ExperimentConfig::default()
        }
    }

    #[test]
    fn scheme_names_round_trip() {
        for s in Scheme::ALL {
            assert_eq!(s.name().parse::<Scheme>().unwrap(), s);
        }
        assert!("bt".parse::<Scheme>().is_err());
    }

    #[test]
    fn config_validation() {
        let mut c = small();
        assert!(c.validate().is_ok());
        c.trials = 0;
        assert!(c.validate().is_err());
        let mut c = small();
        c.snr_grid.clear();
        assert!(c.validate().is_err());
        let json = serde_json::to_string(&small()).unwrap();
        assert_eq!(ExperimentConfig::from_json(&json).unwrap(), small());
        let partial = ExperimentConfig::from_json(r#"{"trials": 3}"#).unwrap();
        assert_eq!(partial.trials, 3);
    }

    #[test]
    fn schemes_share_ground_truth() {
        let cfg = small();
        let a = cfg.trial_scenario(1).unwrap();
        let b = cfg.trial_scenario(1).unwrap();
        assert_eq!(a.0, b.0);
        assert_eq!(a.1, b.1);
        assert_ne!(cfg.trial_scenario(0).unwrap().0, a.0);
    }

    #[test]
    fn ledger_counts_follow_schemes() {
        let cfg = small();
        for scheme in Scheme::ALL {
            let o = run_trial(&cfg, scheme, 10.0, 0, None).unwrap();
            let r = &o.record;
            assert!(!r.failed, "{scheme}: {:?}", o.error);
            match scheme {
                Scheme::Ls | Scheme::Lmmse => {
                    assert_eq!(r.dl_symbols, 16);
                    assert_eq!(r.feedback_count, 256);
                }
                _ => {
                    assert_eq!(r.dl_symbols, r.l_hat);
                    assert_eq!(r.feedback_count, r.l_hat);
                }
            }
            if scheme == Scheme::Alternative {
                let counts = o.subarray_counts.unwrap();
                assert_eq!(counts.iter().sum::<usize>(), r.l_hat);
            }
        }
    }

    #[test]
    fn bootstrap_brackets_mean() {
        let v: Vec<f64> = (0..40).map(|i| i as f64).collect();
        let s = bootstrap(&v, 200, 3).unwrap();
        assert!(s.ci_low <= s.mean && s.mean <= s.ci_high);
        assert!(bootstrap(&[], 10, 1).is_none());
    }

    #[test]
    fn summary_excludes_failures() {
        let rec = |t: usize, db: Option<f64>, failed: bool| TrialRecord {
            scheme: Scheme::Proposed,
            snr_db: 0.0,
            trial: t,
            nmse_ul_db: db,
            nmse_dl_db: db,
            se_bps_hz: db.map(|_| 2.0),
            l_hat: 1,
            dl_symbols: 1,
            feedback_count: 1,
            failed,
        };
        let cells = summarize(
            &[rec(0, Some(-10.0), false), rec(1, Some(-20.0), false), rec(2, None, true)],
            None,
            0,
            1,
        );
        assert_eq!(cells.len(), 1);
        assert_eq!(cells[0].failed, 1);
        let want = to_db((0.1 + 0.01) / 2.0);
        assert!((cells[0].nmse_ul_db.unwrap().mean - want).abs() < 1e-12);
    }
}
