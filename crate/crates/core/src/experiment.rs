//! Experiment orchestration: JSON configs, design runs and artifact bundles.
//!
//! A run directory holds
//!
//! | file | contents |
//! |------|----------|
//! | `waveform.bin` | designed block, column-major, interleaved `f32` re/im, little endian |
//! | `waveform.json` | dimensions, solver, seed, costs, convergence flags |
//! | `trace.csv` | per-iteration objective and wall time (the only timing file) |
//! | `beam_pattern.csv` | `angle_deg,gain,gain_db,desired_scaled` |
//! | `autocorr.csv` | `angle_deg,lag,value,value_db` |
//! | `crosscorr.csv` | `angle_a_deg,angle_b_deg,lag,value,value_db` |
//! | `capon.csv` | `angle_deg,range_bin,amplitude_db` |
//! | `pd.csv` | `rcs_dbsm,pd,ci_low,ci_high,trials` |
//! | `margins.csv` | `subpulse,user,side,margin` (omitted for radar-only) |
//! | `manifest.json` | every artifact with its byte size and SHA-256 |

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::ci::{initialize_waveform, CiConstraintSet, InitResult, MarginReport, SectorSide};
use crate::costs::{beam_gain, correlation_profile, distinct_angles, optimal_alpha, CostBreakdown, RadarObjective};
use crate::error::{Error, Result};
use crate::ladmm::{run_ladmm, LadmmParams, LadmmRecord, LadmmStatus};
use crate::mm::{run_mm, IterationRecord, MmOperator, MmParams};
use crate::radar::{capon_image, detection_probability, synthesize_echo, target_sinr, CfarConfig};
use crate::scenario::{
    desired_rect_beam_pattern, uniform_grid, ArrayGeometry, BeamPatternSpec, CommsConfig, RadarObject, RadarScene,
    WaveformBlock, Weights,
};
use crate::C64;

pub const CONFIG_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolverKind {
    Mm,
    Ladmm,
    RadarOnly,
}

impl SolverKind {
    pub fn name(self) -> &'static str {
        match self {
            SolverKind::Mm => "mm",
            SolverKind::Ladmm => "ladmm",
            SolverKind::RadarOnly => "radar_only",
        }
    }
}

impl std::str::FromStr for SolverKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mm" => Ok(SolverKind::Mm),
            "ladmm" => Ok(SolverKind::Ladmm),
            "radar_only" => Ok(SolverKind::RadarOnly),
            _ => Err(Error::Config(format!("unknown solver `{s}` (expected mm, ladmm or radar_only)"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArrayConfig {
    pub n_tx: usize,
    pub n_rx: usize,
    #[serde(default = "half")]
    pub spacing_wavelengths: f64,
}

fn half() -> f64 {
    0.5
}

fn one() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BeamConfig {
    /// Main-lobe directions of the rectangular desired pattern.
    pub targets_deg: Vec<f64>,
    pub width_deg: f64,
    #[serde(default = "grid_start")]
    pub grid_start_deg: f64,
    #[serde(default = "grid_stop")]
    pub grid_stop_deg: f64,
    #[serde(default = "grid_step")]
    pub grid_step_deg: f64,
}

fn grid_start() -> f64 {
    -90.0
}

fn grid_stop() -> f64 {
    90.0
}

fn grid_step() -> f64 {
    0.5
}

impl BeamConfig {
    pub fn grid(&self) -> Vec<f64> {
        uniform_grid(self.grid_start_deg, self.grid_stop_deg, self.grid_step_deg)
    }

    pub fn spec(&self) -> Result<BeamPatternSpec> {
        desired_rect_beam_pattern(&self.targets_deg, self.width_deg, &self.grid())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObjectConfig {
    pub angle_deg: f64,
    pub range_bin: usize,
    /// Amplitude modulus is `10^(rcs_dbsm / 20)`.
    #[serde(default)]
    pub rcs_dbsm: f64,
    #[serde(default)]
    pub phase_deg: f64,
}

impl ObjectConfig {
    pub fn to_object(self) -> RadarObject {
        RadarObject {
            angle_deg: self.angle_deg,
            range_bin: self.range_bin,
            amplitude: C64::from_polar(10f64.powf(self.rcs_dbsm / 20.0), self.phase_deg.to_radians()),
        }
    }
}

/// Objects, lag window and receiver noise. Object 0 is the target of interest
/// and sets the zero-delay reference.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneConfig {
    pub objects: Vec<ObjectConfig>,
    pub max_lag: usize,
    #[serde(default = "one")]
    pub noise_var: f64,
}

impl SceneConfig {
    pub fn to_scene(&self) -> RadarScene {
        RadarScene {
            objects: self.objects.iter().map(|o| o.to_object()).collect(),
            max_lag: self.max_lag,
            noise_var: self.noise_var,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CommsSection {
    pub n_users: usize,
    pub snr_db: f64,
    #[serde(default = "comms_noise")]
    pub noise_var: f64,
    #[serde(default = "qpsk")]
    pub psk_order: usize,
    #[serde(default)]
    pub seed: u64,
}

fn comms_noise() -> f64 {
    0.01
}

fn qpsk() -> usize {
    4
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvaluationConfig {
    pub capon: bool,
    pub capon_realizations: usize,
    /// Capon angle grid; defaults to the beam grid.
    pub capon_angles_deg: Option<Vec<f64>>,
    pub pd: bool,
    pub pd_trials: usize,
    pub rcs_dbsm: Vec<f64>,
    pub cfar: CfarConfig,
}

impl Default for EvaluationConfig {
    fn default() -> Self {
        Self {
            capon: true,
            capon_realizations: 16,
            capon_angles_deg: None,
            pd: true,
            pd_trials: 500,
            rcs_dbsm: (0..=15).map(|i| -40.0 + 2.0 * i as f64).collect(),
            cfar: CfarConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScalingConfig {
    pub block_lens: Vec<usize>,
    pub solvers: Vec<SolverKind>,
    /// Per-cell wall-clock budget; cells that exceed it are censored.
    pub timeout_s: f64,
}

impl Default for ScalingConfig {
    fn default() -> Self {
        Self {
            block_lens: vec![4, 8, 16, 32, 64, 128],
            solvers: vec![SolverKind::Mm, SolverKind::Ladmm],
            timeout_s: 600.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub version: u32,
    pub array: ArrayConfig,
    pub block_len: usize,
    #[serde(default = "one")]
    pub total_power: f64,
    pub beam: BeamConfig,
    pub scene: SceneConfig,
    pub comms: CommsSection,
    pub weights: Weights,
    pub solver: SolverKind,
    #[serde(default)]
    pub mm: MmParams,
    #[serde(default)]
    pub ladmm: LadmmParams,
    #[serde(default)]
    pub evaluation: EvaluationConfig,
    pub output_dir: PathBuf,
    pub seeds: Vec<u64>,
    #[serde(default)]
    pub scaling: ScalingConfig,
}

fn config_err<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Config(msg.into()))
}

impl ExperimentConfig {
    /// Eight-antenna, 32-subpulse setting with targets at -30 and 40 degrees,
    /// two users at 6 dB and weights (1, 4, 4).
    pub fn baseline() -> Self {
        Self {
            version: CONFIG_VERSION,
            array: ArrayConfig {
                n_tx: 8,
                n_rx: 8,
                spacing_wavelengths: 0.5,
            },
            block_len: 32,
            total_power: 1.0,
            beam: BeamConfig {
                targets_deg: vec![-30.0, 40.0],
                width_deg: 20.0,
                grid_start_deg: -90.0,
                grid_stop_deg: 90.0,
                grid_step_deg: 0.5,
            },
            scene: SceneConfig {
                objects: vec![
                    ObjectConfig {
                        angle_deg: 40.0,
                        range_bin: 7,
                        rcs_dbsm: -20.0,
                        phase_deg: 0.0,
                    },
                    ObjectConfig {
                        angle_deg: -30.0,
                        range_bin: 8,
                        rcs_dbsm: -14.0,
                        phase_deg: 0.0,
                    },
                    ObjectConfig {
                        angle_deg: 40.0,
                        range_bin: 5,
                        rcs_dbsm: -14.0,
                        phase_deg: 0.0,
                    },
                ],
                max_lag: 8,
                noise_var: 1.0,
            },
            comms: CommsSection {
                n_users: 2,
                snr_db: 6.0,
                noise_var: 0.01,
                psk_order: 4,
                seed: 0,
            },
            weights: Weights::new(1.0, 4.0, 4.0),
            solver: SolverKind::Mm,
            mm: MmParams::default(),
            ladmm: LadmmParams::default(),
            evaluation: EvaluationConfig::default(),
            output_dir: PathBuf::from("out"),
            seeds: vec![0],
            scaling: ScalingConfig::default(),
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| Error::Config(format!("schema: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn validate(&self) -> Result<()> {
        if self.version != CONFIG_VERSION {
            return config_err(format!(
                "unsupported config version {} (expected {CONFIG_VERSION})",
                self.version
            ));
        }
        let wrap = |r: Result<()>, what: &str| r.map_err(|e| Error::Config(format!("{what}: {e}")));
        wrap(self.geometry().map(|_| ()), "array")?;
        if self.block_len == 0 {
            return config_err("block_len must be positive");
        }
        if !(self.total_power > 0.0 && self.total_power.is_finite()) {
            return config_err("total_power must be positive");
        }
        if !(self.beam.grid_step_deg > 0.0) || self.beam.grid_start_deg >= self.beam.grid_stop_deg {
            return config_err("beam grid must be increasing with a positive step");
        }
        wrap(self.beam.spec().map(|_| ()), "beam")?;
        wrap(self.scene.to_scene().validate(self.block_len), "scene")?;
        if self.scene.objects.is_empty() {
            return config_err("scene: at least one object is required");
        }
        if self.comms.psk_order < 2 {
            return config_err("comms: psk_order must be at least 2");
        }
        if !(self.comms.noise_var > 0.0) {
            return config_err("comms: noise_var must be positive");
        }
        wrap(self.weights.validate(), "weights")?;
        wrap(self.ladmm.validate(), "ladmm")?;
        wrap(self.evaluation.cfar.validate(), "evaluation.cfar")?;
        if self.seeds.is_empty() {
            return config_err("seeds must not be empty");
        }
        if self.scaling.block_lens.is_empty() || !(self.scaling.timeout_s > 0.0) {
            return config_err("scaling: need block lengths and a positive timeout");
        }
        Ok(())
    }

    pub fn geometry(&self) -> Result<ArrayGeometry> {
        ArrayGeometry::new(self.array.n_tx, self.array.n_rx, self.array.spacing_wavelengths)
    }

    /// Evaluation inputs shared with the standalone `evaluate` path.
    pub fn evaluation_scene(&self) -> EvaluationScene {
        EvaluationScene {
            array: self.array,
            beam: self.beam.clone(),
            scene: self.scene.clone(),
            evaluation: self.evaluation.clone(),
        }
    }
}

/// One fully specified design problem.
#[derive(Debug, Clone, PartialEq)]
pub struct DesignProblem {
    pub geometry: ArrayGeometry,
    pub spec: BeamPatternSpec,
    pub scene: RadarScene,
    pub comms: CommsConfig,
    pub weights: Weights,
    pub total_power: f64,
    pub block_len: usize,
}

impl DesignProblem {
    /// Baseline problem with a given user count and SNR threshold.
    pub fn baseline(n_users: usize, snr_db: f64, seed: u64) -> Result<Self> {
        let mut cfg = ExperimentConfig::baseline();
        cfg.comms.n_users = n_users;
        cfg.comms.snr_db = snr_db;
        Self::from_config(&cfg, seed)
    }

    /// Problem for run `seed`: channels and symbols are drawn from
    /// `comms.seed + seed`.
    pub fn from_config(cfg: &ExperimentConfig, seed: u64) -> Result<Self> {
        let geometry = cfg.geometry()?;
        let comms = if cfg.comms.n_users == 0 {
            CommsConfig::none()
        } else {
            CommsConfig::random(
                cfg.comms.n_users,
                cfg.array.n_tx,
                cfg.block_len,
                cfg.comms.psk_order,
                cfg.comms.snr_db,
                cfg.comms.noise_var,
                cfg.comms.seed.wrapping_add(seed),
            )?
        };
        Ok(Self {
            geometry,
            spec: cfg.beam.spec()?,
            scene: cfg.scene.to_scene(),
            comms,
            weights: cfg.weights,
            total_power: cfg.total_power,
            block_len: cfg.block_len,
        })
    }

    pub fn objective(&self) -> Result<RadarObjective> {
        RadarObjective::from_scene(&self.geometry, &self.spec, &self.scene, self.weights, self.block_len)
    }

    pub fn constraints(&self) -> Result<CiConstraintSet> {
        CiConstraintSet::build(&self.comms, self.total_power, self.geometry.n_tx, self.block_len)
    }

    pub fn initialize(&self, seed: u64) -> Result<InitResult> {
        initialize_waveform(&self.constraints()?, self.geometry.n_tx, self.block_len, seed)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum SolverTrace {
    Mm(Vec<IterationRecord>),
    Ladmm(Vec<LadmmRecord>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct DesignOutcome {
    pub solver: SolverKind,
    pub seed: u64,
    pub initial: InitResult,
    pub initial_costs: CostBreakdown,
    /// Unit-modulus designed block.
    pub block: WaveformBlock,
    pub costs: CostBreakdown,
    pub iterations: usize,
    pub converged: bool,
    /// Absent for radar-only designs.
    pub margins: Option<MarginReport>,
    pub slackness: Option<f64>,
    pub trace: SolverTrace,
    pub wall_sec: f64,
}

/// Runs one solver from the CI-feasible initializer. Radar-only starts from
/// the same point and drops the constraints.
pub fn design(
    problem: &DesignProblem,
    solver: SolverKind,
    mm: &MmParams,
    ladmm: &LadmmParams,
    seed: u64,
) -> Result<DesignOutcome> {
    let obj = problem.objective()?;
    let ci = problem.constraints()?;
    let initial = initialize_waveform(&ci, problem.geometry.n_tx, problem.block_len, seed)?;
    let initial_costs = obj.evaluate(initial.block.as_slice());
    let start = Instant::now();
    let (block, iterations, converged, margins, slackness, trace) = match solver {
        SolverKind::Mm | SolverKind::RadarOnly => {
            let active = if solver == SolverKind::Mm {
                ci
            } else {
                CiConstraintSet::empty(problem.geometry.n_tx, problem.block_len)
            };
            let op = MmOperator::new(obj.clone(), mm.majorizer);
            let res = run_mm(&initial.block, &op, &active, mm)?;
            let (margins, slack) = if solver == SolverKind::Mm {
                (Some(res.margins), Some(res.slackness))
            } else {
                (None, None)
            };
            (res.block, res.iterations, res.converged, margins, slack, SolverTrace::Mm(res.state.records))
        }
        SolverKind::Ladmm => {
            let res = run_ladmm(&initial.block, &obj, &ci, ladmm)?;
            let converged = res.status == LadmmStatus::Converged;
            let iterations = res.iterations();
            (res.block, iterations, converged, Some(res.margins), None, SolverTrace::Ladmm(res.trace))
        }
    };
    let wall_sec = start.elapsed().as_secs_f64();
    let costs = obj.evaluate(block.as_slice());
    Ok(DesignOutcome {
        solver,
        seed,
        initial,
        initial_costs,
        block,
        costs,
        iterations,
        converged,
        margins,
        slackness,
        trace,
        wall_sec,
    })
}

/// Inputs of the standalone evaluation path.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvaluationScene {
    pub array: ArrayConfig,
    pub beam: BeamConfig,
    pub scene: SceneConfig,
    #[serde(default)]
    pub evaluation: EvaluationConfig,
}

impl EvaluationScene {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| Error::Config(format!("schema: {e}")))
    }
}

/// Sidecar metadata written next to `waveform.bin`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WaveformMeta {
    pub n_tx: usize,
    pub block_len: usize,
    pub layout: String,
    pub total_power: f64,
    pub solver: SolverKind,
    pub seed: u64,
    pub iterations: usize,
    pub converged: bool,
    pub costs: CostBreakdown,
    pub initial_costs: CostBreakdown,
    pub min_margin: Option<f64>,
    pub slackness: Option<f64>,
    pub target_sinr_db: Option<f64>,
}

const LAYOUT: &str = "column-major complex64 little-endian (re, im as f32)";

pub fn waveform_to_bytes(x: &WaveformBlock) -> Vec<u8> {
    let mut out = Vec::with_capacity(x.as_slice().len() * 8);
    for z in x.as_slice() {
        out.extend_from_slice(&(z.re as f32).to_le_bytes());
        out.extend_from_slice(&(z.im as f32).to_le_bytes());
    }
    out
}

pub fn waveform_from_bytes(bytes: &[u8], n_tx: usize, block_len: usize) -> Result<WaveformBlock> {
    if bytes.len() != n_tx * block_len * 8 {
        return config_err(format!(
            "waveform file holds {} bytes, expected {} for {n_tx} x {block_len}",
            bytes.len(),
            n_tx * block_len * 8
        ));
    }
    let data = bytes
        .chunks_exact(8)
        .map(|c| {
            let re = f32::from_le_bytes([c[0], c[1], c[2], c[3]]);
            let im = f32::from_le_bytes([c[4], c[5], c[6], c[7]]);
            C64::new(re as f64, im as f64)
        })
        .collect();
    WaveformBlock::new(n_tx, block_len, data)
}

/// Reads `waveform.bin` and its `.json` sidecar.
pub fn read_waveform(path: &Path) -> Result<(WaveformBlock, WaveformMeta)> {
    let meta_path = path.with_extension("json");
    let meta_text = fs::read_to_string(&meta_path)
        .map_err(|e| Error::Config(format!("cannot read {}: {e}", meta_path.display())))?;
    let meta: WaveformMeta = serde_json::from_str(&meta_text)?;
    let bytes = fs::read(path)?;
    let x = waveform_from_bytes(&bytes, meta.n_tx, meta.block_len)?;
    Ok((x, meta))
}

fn db(v: f64) -> f64 {
    10.0 * v.max(1e-300).log10()
}

/// Collects artifacts for one run directory and writes the manifest.
#[derive(Debug)]
pub struct ArtifactWriter {
    dir: PathBuf,
    entries: Vec<ManifestEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub file: String,
    pub bytes: usize,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub config_version: u32,
    pub seed: u64,
    pub solver: Option<SolverKind>,
    pub artifacts: Vec<ManifestEntry>,
}

impl ArtifactWriter {
    pub fn new(dir: &Path) -> Result<Self> {
        fs::create_dir_all(dir)?;
        Ok(Self {
            dir: dir.to_path_buf(),
            entries: Vec::new(),
        })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn write(&mut self, name: &str, bytes: &[u8]) -> Result<PathBuf> {
        let path = self.dir.join(name);
        fs::write(&path, bytes)?;
        self.entries.push(ManifestEntry {
            file: name.to_string(),
            bytes: bytes.len(),
            sha256: hex::encode(Sha256::digest(bytes)),
        });
        Ok(path)
    }

    pub fn finish(self, seed: u64, solver: Option<SolverKind>) -> Result<Manifest> {
        let manifest = Manifest {
            config_version: CONFIG_VERSION,
            seed,
            solver,
            artifacts: self.entries,
        };
        fs::write(self.dir.join("manifest.json"), serde_json::to_string_pretty(&manifest)?)?;
        Ok(manifest)
    }
}

pub fn beam_pattern_csv(x: &WaveformBlock, geometry: &ArrayGeometry, spec: &BeamPatternSpec) -> Result<String> {
    let alpha = optimal_alpha(x, geometry, spec)?;
    let mut s = String::from("angle_deg,gain,gain_db,desired_scaled\n");
    for (th, gd) in spec.angle_grid_deg.iter().zip(&spec.desired_gain) {
        let g = beam_gain(x, geometry, *th)?;
        let _ = writeln!(s, "{th},{g},{},{}", db(g), alpha * gd);
    }
    Ok(s)
}

/// Auto-correlation at each angle, normalized to the zero-lag peak in dB.
pub fn autocorr_csv(x: &WaveformBlock, geometry: &ArrayGeometry, angles: &[f64]) -> Result<String> {
    let mut s = String::from("angle_deg,lag,value,value_db\n");
    for &th in angles {
        let p = correlation_profile(x, geometry, th, th)?;
        let peak = p.values[p.values.len() / 2];
        for (lag, v) in p.lags.iter().zip(&p.values) {
            let _ = writeln!(s, "{th},{lag},{v},{}", db(v / peak));
        }
    }
    Ok(s)
}

/// Cross-correlation for every ordered pair of distinct angles, in dB
/// relative to the geometric mean of the two zero-lag auto peaks.
pub fn crosscorr_csv(x: &WaveformBlock, geometry: &ArrayGeometry, angles: &[f64]) -> Result<String> {
    let mut s = String::from("angle_a_deg,angle_b_deg,lag,value,value_db\n");
    let peaks: Vec<f64> = angles
        .iter()
        .map(|&th| {
            let p = correlation_profile(x, geometry, th, th)?;
            Ok(p.values[p.values.len() / 2])
        })
        .collect::<Result<_>>()?;
    for (a, &ta) in angles.iter().enumerate() {
        for (b, &tb) in angles.iter().enumerate() {
            if a == b {
                continue;
            }
            let p = correlation_profile(x, geometry, ta, tb)?;
            let norm = (peaks[a] * peaks[b]).sqrt();
            for (lag, v) in p.lags.iter().zip(&p.values) {
                let _ = writeln!(s, "{ta},{tb},{lag},{v},{}", db(v / norm));
            }
        }
    }
    Ok(s)
}

pub fn margins_csv(ci: &CiConstraintSet, report: &MarginReport) -> String {
    let mut s = String::from("subpulse,user,side,margin\n");
    for (l, row) in report.margins.iter().enumerate() {
        for (m, v) in row.iter().enumerate() {
            let (k, side) = ci.index_map(m);
            let side = match side {
                SectorSide::Lower => "lower",
                SectorSide::Upper => "upper",
            };
            let _ = writeln!(s, "{l},{k},{side},{v}");
        }
    }
    s
}

fn trace_csv(trace: &SolverTrace) -> String {
    let mut s = String::new();
    match trace {
        SolverTrace::Mm(recs) => {
            s.push_str("iteration,bp,ac,cc,sim,total,wall_ms\n");
            for r in recs {
                let c = r.costs;
                let _ = writeln!(s, "{},{},{},{},{},{},{}", r.iteration, c.bp, c.ac, c.cc, c.sim, c.total, r.wall_ms);
            }
        }
        SolverTrace::Ladmm(recs) => {
            s.push_str("iteration,objective,objective_projected,res_xv,res_uv,res_z,wall_ms\n");
            for r in recs {
                let _ = writeln!(
                    s,
                    "{},{},{},{},{},{},{}",
                    r.iteration, r.objective, r.objective_projected, r.res_xv, r.res_uv, r.res_z, r.wall_ms
                );
            }
        }
    }
    s
}

/// Beam pattern, correlation profiles, Capon image and Pd curve for a block.
pub fn write_evaluation(
    writer: &mut ArtifactWriter,
    x: &WaveformBlock,
    ev: &EvaluationScene,
    seed: u64,
) -> Result<()> {
    let geometry = ArrayGeometry::new(ev.array.n_tx, ev.array.n_rx, ev.array.spacing_wavelengths)?;
    let spec = ev.beam.spec()?;
    let scene = ev.scene.to_scene();
    scene.validate(x.block_len())?;
    let angles = distinct_angles(&scene);
    writer.write("beam_pattern.csv", beam_pattern_csv(x, &geometry, &spec)?.as_bytes())?;
    writer.write("autocorr.csv", autocorr_csv(x, &geometry, &angles)?.as_bytes())?;
    writer.write("crosscorr.csv", crosscorr_csv(x, &geometry, &angles)?.as_bytes())?;
    let cfg = &ev.evaluation;
    if cfg.capon && cfg.capon_realizations > 0 {
        let echoes = (0..cfg.capon_realizations)
            .map(|r| synthesize_echo(x, &scene, &geometry, seed.wrapping_mul(1_000_003).wrapping_add(r as u64)))
            .collect::<Result<Vec<_>>>()?;
        let cap_angles = cfg.capon_angles_deg.clone().unwrap_or_else(|| spec.angle_grid_deg.clone());
        let bins: Vec<usize> = (0..x.block_len()).collect();
        let img = capon_image(&echoes, x, &geometry, &cap_angles, &bins, scene.reference_bin())?;
        let mut s = String::from("angle_deg,range_bin,amplitude_db\n");
        for (a, th) in img.angles_deg.iter().enumerate() {
            for (r, bin) in img.range_bins.iter().enumerate() {
                let _ = writeln!(s, "{th},{bin},{}", img.at(a, r));
            }
        }
        writer.write("capon.csv", s.as_bytes())?;
    }
    if cfg.pd && cfg.pd_trials > 0 && !cfg.rcs_dbsm.is_empty() {
        let pts = detection_probability(x, &scene, &geometry, &cfg.rcs_dbsm, &cfg.cfar, cfg.pd_trials, seed)?;
        let mut s = String::from("rcs_dbsm,pd,ci_low,ci_high,trials\n");
        for p in pts {
            let _ = writeln!(s, "{},{},{},{},{}", p.rcs_dbsm, p.pd, p.ci_low, p.ci_high, p.trials);
        }
        writer.write("pd.csv", s.as_bytes())?;
    }
    Ok(())
}

/// Result of one `(config, seed)` run.
#[derive(Debug, Clone)]
pub struct RunSummary {
    pub dir: PathBuf,
    pub outcome: DesignOutcome,
    pub manifest: Manifest,
}

/// Designs, evaluates and writes the bundle for every seed of the config.
/// Each seed gets `output_dir/seed_<s>`.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<Vec<RunSummary>> {
    cfg.validate()?;
    cfg.seeds
        .iter()
        .map(|&seed| run_seed(cfg, seed, &cfg.output_dir.join(format!("seed_{seed}"))))
        .collect()
}

/// One seed into `dir`. Non-convergence is reported through
/// [`DesignOutcome::converged`]; all artifacts are still written.
pub fn run_seed(cfg: &ExperimentConfig, seed: u64, dir: &Path) -> Result<RunSummary> {
    let problem = DesignProblem::from_config(cfg, seed)?;
    let outcome = design(&problem, cfg.solver, &cfg.mm, &cfg.ladmm, seed)?;
    let mut w = ArtifactWriter::new(dir)?;
    w.write("waveform.bin", &waveform_to_bytes(&outcome.block))?;
    let meta = WaveformMeta {
        n_tx: outcome.block.n_tx(),
        block_len: outcome.block.block_len(),
        layout: LAYOUT.to_string(),
        total_power: cfg.total_power,
        solver: cfg.solver,
        seed,
        iterations: outcome.iterations,
        converged: outcome.converged,
        costs: outcome.costs,
        initial_costs: outcome.initial_costs,
        min_margin: outcome.margins.as_ref().map(|m| m.min_margin),
        slackness: outcome.slackness,
        target_sinr_db: target_sinr(&outcome.block, &problem.scene, &problem.geometry).ok(),
    };
    w.write("waveform.json", serde_json::to_string_pretty(&meta)?.as_bytes())?;
    w.write("trace.csv", trace_csv(&outcome.trace).as_bytes())?;
    if let Some(report) = &outcome.margins {
        w.write("margins.csv", margins_csv(&problem.constraints()?, report).as_bytes())?;
    }
    write_evaluation(&mut w, &outcome.block, &cfg.evaluation_scene(), seed)?;
    let manifest = w.finish(seed, Some(cfg.solver))?;
    Ok(RunSummary {
        dir: dir.to_path_buf(),
        outcome,
        manifest,
    })
}

/// Evaluates an existing waveform file against a scene, writing into `dir`.
pub fn run_evaluation(waveform: &Path, ev: &EvaluationScene, seed: u64, dir: &Path) -> Result<Manifest> {
    let (x, meta) = read_waveform(waveform)?;
    if meta.n_tx != ev.array.n_tx {
        return config_err(format!(
            "waveform has {} antennas but the scene array has {}",
            meta.n_tx, ev.array.n_tx
        ));
    }
    let mut w = ArtifactWriter::new(dir)?;
    write_evaluation(&mut w, &x, ev, seed)?;
    w.finish(seed, Some(meta.solver))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalingRow {
    pub size: usize,
    pub block_len: usize,
    pub solver: SolverKind,
    pub seed: u64,
    pub wall_sec: f64,
    pub iterations: usize,
    pub converged: bool,
    pub censored: bool,
    pub objective: f64,
}

/// Wall time and iteration count per `(L, solver)` at the config's array.
/// Lag windows shrink to `min(P, L)`; cells past the timeout are censored.
pub fn run_scaling_study(cfg: &ExperimentConfig) -> Result<Vec<ScalingRow>> {
    cfg.validate()?;
    let seed = cfg.seeds[0];
    let mut lens = cfg.scaling.block_lens.clone();
    lens.sort_unstable();
    lens.dedup();
    let mut rows = Vec::new();
    for &l in &lens {
        if l == 0 {
            return config_err("scaling: block lengths must be positive");
        }
        let mut c = cfg.clone();
        c.block_len = l;
        c.scene.max_lag = cfg.scene.max_lag.min(l);
        for o in &mut c.scene.objects {
            o.range_bin = o.range_bin.min(l - 1);
        }
        let problem = DesignProblem::from_config(&c, seed)?;
        for &solver in &cfg.scaling.solvers {
            let mut mm = c.mm;
            let mut ladmm = c.ladmm;
            mm.time_limit_s = Some(cfg.scaling.timeout_s);
            ladmm.time_limit_s = Some(cfg.scaling.timeout_s);
            let out = design(&problem, solver, &mm, &ladmm, seed)?;
            let censored = out.wall_sec > cfg.scaling.timeout_s;
            rows.push(ScalingRow {
                size: l * cfg.array.n_tx,
                block_len: l,
                solver,
                seed,
                wall_sec: out.wall_sec,
                iterations: out.iterations,
                converged: out.converged,
                censored,
                objective: out.costs.total,
            });
        }
    }
    Ok(rows)
}

pub fn scaling_csv(rows: &[ScalingRow]) -> String {
    let mut s = String::from("size,block_len,solver,seed,wall_sec,iterations,converged,censored,objective\n");
    for r in rows {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{},{},{}",
            r.size,
            r.block_len,
            r.solver.name(),
            r.seed,
            r.wall_sec,
            r.iterations,
            r.converged,
            r.censored,
            r.objective
        );
    }
    s
}
