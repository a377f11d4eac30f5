//! End-to-end orchestration: config, staged execution, manifests and sweeps.
//!
//! Stage order follows the offline workflow: generate, render, filter,
//! compress, detect, embed, associate, mask, transmit, then evaluate and emit
//! query metadata. Every stage is deterministic for a fixed config, so a run
//! is reproducible from its config alone and double runs hash identically.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::associate::{associate, AssocConfig, GlobalIdAssignment};
use crate::codec::{
    analytic_size, encode_stream, stream_size, transmission_report, write_stream, LinkModel, Stage,
    TransmissionReport, BASELINE_BITS_PER_PIXEL, REDUCED_BITS_PER_PIXEL,
};
use crate::eval::{csv_field, mtta, EvalConfig, EvalReport};
use crate::filter::{filter_stream, FilterPolicy, FilterReport, FrameKey};
use crate::percept::{embed_all, simulate_detections, to_jsonl, Detection, PerceptConfig};
use crate::querysvc::{self, MetadataRecord};
use crate::roicover::{
    apply_mask, partition_tiles, select_tiles, CoverMode, LabeledBox, RoiMask, TileGrid,
};
use crate::scenario::{generate_scenario, Frame, ScenarioConfig, WorldScenario};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridConfig {
    pub rows: u32,
    pub cols: u32,
    pub cover_mode: CoverMode,
    /// Trailing number of steps whose boxes constrain the mask; `None` uses
    /// the whole sequence.
    pub window: Option<u32>,
}

impl Default for GridConfig {
    fn default() -> Self {
        Self {
            rows: 4,
            cols: 6,
            cover_mode: CoverMode::Full,
            window: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum CodecModel {
    /// Measure bytes with the lossless run-length codec.
    #[default]
    Toy,
    /// Price frames with the bits-per-pixel model at the link's frame size.
    Analytic,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AnalyticModel {
    pub raw_bits_per_pixel: f64,
    pub compressed_bits_per_pixel: f64,
}

impl Default for AnalyticModel {
    fn default() -> Self {
        Self {
            raw_bits_per_pixel: BASELINE_BITS_PER_PIXEL,
            compressed_bits_per_pixel: REDUCED_BITS_PER_PIXEL,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Toggles {
    pub filter: bool,
    pub compress: bool,
    pub mask: bool,
    pub codec: CodecModel,
    /// Write the first masked frame of every camera as PGM.
    pub export_pgm: bool,
}

impl Default for Toggles {
    fn default() -> Self {
        Self {
            filter: true,
            compress: true,
            mask: true,
            codec: CodecModel::Toy,
            export_pgm: false,
        }
    }
}

/// Everything a run needs. Missing TOML keys fall back to the defaults.
///
/// The run seed drives both world generation and the perception simulator;
/// `percept.seed` is overwritten with it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
#[derive(Default)]
pub struct PipelineConfig {
    pub seed: u64,
    pub scenario: ScenarioConfig,
    pub filter: FilterPolicy,
    pub percept: PerceptConfig,
    pub assoc: AssocConfig,
    pub grid: GridConfig,
    pub link: LinkModel,
    pub eval: EvalConfig,
    pub analytic: AnalyticModel,
    pub toggles: Toggles,
    pub output_dir: Option<PathBuf>,
}

impl PipelineConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let config: PipelineConfig =
            toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::Serde(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        self.scenario.validate()?;
        self.filter.validate()?;
        self.percept.validate()?;
        self.assoc.validate()?;
        self.link.validate()?;
        self.eval.validate()?;
        for cam in &self.scenario.cameras {
            partition_tiles(
                cam.image_width,
                cam.image_height,
                self.grid.rows,
                self.grid.cols,
            )?;
        }
        if self.grid.window == Some(0) {
            return Err(Error::Config(
                "coverage window must be at least 1 step".into(),
            ));
        }
        let a = &self.analytic;
        if !(a.raw_bits_per_pixel > 0.0 && a.compressed_bits_per_pixel > 0.0) {
            return Err(Error::Config(
                "analytic bits per pixel must be positive".into(),
            ));
        }
        Ok(())
    }

    /// SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> Result<String> {
        Ok(sha256_hex(serde_json::to_string(self)?.as_bytes()))
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArtifactEntry {
    /// Relative to the run directory.
    pub path: String,
    pub sha256: String,
    pub bytes: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub mtta_pct: f64,
    pub id_switches: usize,
    pub global_ids: usize,
    pub detections: usize,
    pub total_frames: usize,
    pub kept_frames: usize,
    pub drop_pct: f64,
    pub total_bytes: f64,
    pub bitrate_kbps: f64,
    pub utilization_pct: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FailureRecord {
    pub stage: String,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub config_hash: String,
    pub seed: u64,
    pub artifacts: BTreeMap<String, ArtifactEntry>,
    pub summary: Option<RunSummary>,
    pub failure: Option<FailureRecord>,
    /// Not part of [`RunManifest::content_hash`].
    pub stage_wall_ms: BTreeMap<String, f64>,
}

impl RunManifest {
    /// Hash over everything except wall-clock times.
    pub fn content_hash(&self) -> Result<String> {
        let stripped = RunManifest {
            stage_wall_ms: BTreeMap::new(),
            ..self.clone()
        };
        Ok(sha256_hex(serde_json::to_string(&stripped)?.as_bytes()))
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

/// Products of a run kept in memory.
#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub scenario: WorldScenario,
    pub filter: FilterReport,
    pub detections: Vec<Detection>,
    pub assignment: GlobalIdAssignment,
    pub masks: Vec<RoiMask>,
    pub transmission: TransmissionReport,
    pub eval: EvalReport,
    pub records: Vec<MetadataRecord>,
    pub summary: RunSummary,
    pub manifest: RunManifest,
    /// Artifact contents keyed by relative path.
    pub artifacts: BTreeMap<String, Vec<u8>>,
}

#[derive(Default)]
struct Sink {
    artifacts: BTreeMap<String, Vec<u8>>,
    wall_ms: BTreeMap<String, f64>,
}

impl Sink {
    fn put(&mut self, path: impl Into<String>, bytes: impl Into<Vec<u8>>) {
        self.artifacts.insert(path.into(), bytes.into());
    }

    fn stage<T>(&mut self, name: &str, f: impl FnOnce(&mut Self) -> Result<T>) -> Result<T> {
        let start = Instant::now();
        let out = f(self).map_err(|e| Error::Stage {
            stage: name.to_string(),
            source: Box::new(e),
        });
        self.wall_ms
            .insert(name.to_string(), start.elapsed().as_secs_f64() * 1e3);
        out
    }

    fn entries(&self) -> BTreeMap<String, ArtifactEntry> {
        self.artifacts
            .iter()
            .map(|(path, bytes)| {
                (
                    path.clone(),
                    ArtifactEntry {
                        path: path.clone(),
                        sha256: sha256_hex(bytes),
                        bytes: bytes.len() as u64,
                    },
                )
            })
            .collect()
    }
}

fn json_bytes<T: Serialize>(value: &T) -> Result<Vec<u8>> {
    Ok(serde_json::to_vec_pretty(value)?)
}

/// Per-camera frame streams restricted to kept frames.
fn kept_streams(rendered: &[Vec<Frame>], filter: &FilterReport) -> Vec<Vec<Frame>> {
    rendered
        .iter()
        .map(|stream| {
            stream
                .iter()
                .filter(|f| filter.is_kept(FrameKey::from(*f)))
                .cloned()
                .collect()
        })
        .collect()
}

fn all_kept(rendered: &[Vec<Frame>]) -> FilterReport {
    let mut kept: Vec<FrameKey> = rendered.iter().flatten().map(FrameKey::from).collect();
    kept.sort_unstable();
    FilterReport {
        kept,
        ..Default::default()
    }
}

fn build_masks(
    config: &PipelineConfig,
    scenario: &WorldScenario,
    grids: &BTreeMap<u32, TileGrid>,
    assignment: &GlobalIdAssignment,
) -> Result<Vec<RoiMask>> {
    let start_t = match config.grid.window {
        Some(w) => scenario.duration_steps.saturating_sub(w),
        None => 0,
    };
    grids
        .par_iter()
        .map(|(&cam, grid)| {
            if !config.toggles.mask {
                return Ok(RoiMask::full(cam, *grid));
            }
            let boxes: Vec<LabeledBox> = assignment
                .entries
                .iter()
                .filter(|e| e.camera_id == cam && e.t >= start_t)
                .map(|e| LabeledBox {
                    global_id: e.global_id,
                    camera_id: e.camera_id,
                    t: e.t,
                    bbox: e.bbox,
                })
                .collect();
            let tiles = select_tiles(&boxes, grid, config.grid.cover_mode)?;
            Ok(RoiMask::from_tiles(cam, *grid, &tiles))
        })
        .collect()
}

fn toy_bytes(
    config: &PipelineConfig,
    rendered: &[Vec<Frame>],
    kept: &[Vec<Frame>],
    masks: &[RoiMask],
    sink: &mut Sink,
) -> Result<BTreeMap<Stage, f64>> {
    let pixels =
        |streams: &[Vec<Frame>]| -> f64 { streams.iter().flatten().map(|f| f.len() as f64).sum() };
    let mut stages = BTreeMap::from([(Stage::Raw, pixels(rendered))]);
    if config.toggles.filter {
        stages.insert(Stage::Filtered, pixels(kept));
    }
    if !config.toggles.compress {
        return Ok(stages);
    }
    let encoded: Vec<(u32, Vec<u8>, u64, u64)> = kept
        .par_iter()
        .zip(masks.par_iter())
        .map(|(frames, mask)| {
            let plain = stream_size(&encode_stream(frames)?);
            let masked_frames = frames
                .iter()
                .map(|f| apply_mask(f, mask))
                .collect::<Result<Vec<_>>>()?;
            let masked = encode_stream(&masked_frames)?;
            Ok((
                mask.camera_id,
                write_stream(&masked)?,
                plain,
                stream_size(&masked),
            ))
        })
        .collect::<Result<_>>()?;
    stages.insert(Stage::Compressed, encoded.iter().map(|e| e.2 as f64).sum());
    if config.toggles.mask {
        stages.insert(Stage::Masked, encoded.iter().map(|e| e.3 as f64).sum());
    }
    for (cam, bytes, ..) in encoded {
        sink.put(format!("streams/camera_{cam}.xcrl"), bytes);
    }
    Ok(stages)
}

fn analytic_bytes(
    config: &PipelineConfig,
    rendered: &[Vec<Frame>],
    kept: &[Vec<Frame>],
    masks: &[RoiMask],
) -> Result<BTreeMap<Stage, f64>> {
    let link = &config.link;
    let per_frame = |bpp: f64| analytic_size(link.width, link.height, 1.0, 1.0, bpp);
    let raw_frame = per_frame(config.analytic.raw_bits_per_pixel)?;
    let packed_frame = per_frame(config.analytic.compressed_bits_per_pixel)?;
    let count = |s: &[Vec<Frame>]| s.iter().map(Vec::len).sum::<usize>() as f64;
    let mut stages = BTreeMap::from([(Stage::Raw, raw_frame * count(rendered))]);
    if config.toggles.filter {
        stages.insert(Stage::Filtered, raw_frame * count(kept));
    }
    if config.toggles.compress {
        stages.insert(Stage::Compressed, packed_frame * count(kept));
        if config.toggles.mask {
            let masked: f64 = kept
                .iter()
                .zip(masks)
                .map(|(frames, m)| {
                    let area = f64::from(m.grid.frame_width) * f64::from(m.grid.frame_height);
                    packed_frame * frames.len() as f64 * m.covered_pixels() as f64 / area
                })
                .sum();
            stages.insert(Stage::Masked, masked);
        }
    }
    Ok(stages)
}

fn execute_stages(config: &PipelineConfig, sink: &mut Sink) -> Result<RunOutcome> {
    sink.stage("config", |_| config.validate())?;
    let config_hash = config.hash()?;

    let scenario = sink.stage("generate", |s| {
        let scenario = generate_scenario(&config.scenario, config.seed)?;
        s.put("scenario.json", scenario.to_json()?);
        Ok(scenario)
    })?;

    let mut camera_ids: Vec<u32> = scenario.cameras.iter().map(|c| c.id).collect();
    camera_ids.sort_unstable();
    let rendered: Vec<Vec<Frame>> = sink.stage("render", |_| {
        camera_ids
            .par_iter()
            .map(|&c| scenario.render_camera(c))
            .collect()
    })?;

    let filter = sink.stage("filter", |s| {
        let report = if config.toggles.filter {
            filter_stream(&rendered, &config.filter)?
        } else {
            all_kept(&rendered)
        };
        s.put("filter.csv", report.to_csv());
        Ok(report)
    })?;
    let kept = kept_streams(&rendered, &filter);

    let grids: BTreeMap<u32, TileGrid> = sink.stage("compression", |_| {
        scenario
            .cameras
            .iter()
            .map(|c| {
                let g = partition_tiles(
                    c.image_width,
                    c.image_height,
                    config.grid.rows,
                    config.grid.cols,
                )?;
                Ok((c.id, g))
            })
            .collect()
    })?;

    let percept = PerceptConfig {
        seed: config.seed,
        ..config.percept
    };
    let slots: Vec<_> = scenario
        .frame_slots()
        .into_iter()
        .filter(|s| {
            filter.is_kept(FrameKey {
                camera_id: s.camera_id,
                t: s.t,
            })
        })
        .collect();
    let ground_truth = scenario.ground_truth();
    let detections = sink.stage("detection", |_| {
        simulate_detections(&ground_truth, &slots, &percept)
    })?;
    let embeddings = sink.stage("embedding", |s| {
        let embs = embed_all(&detections, &percept);
        s.put("detections.jsonl", to_jsonl(&detections, &embs)?);
        Ok(embs)
    })?;

    let frame_keys: Vec<(u32, u32)> = filter.kept.iter().map(|k| (k.camera_id, k.t)).collect();
    let assignment = sink.stage("association", |s| {
        let a = associate(&detections, &embeddings, &frame_keys, &config.assoc)?;
        s.put("assignment.jsonl", a.to_jsonl()?);
        Ok(a)
    })?;

    let masks = sink.stage("masking", |s| {
        let masks = build_masks(config, &scenario, &grids, &assignment)?;
        s.put("masks.json", json_bytes(&masks)?);
        if config.toggles.export_pgm {
            for (frames, mask) in kept.iter().zip(&masks) {
                if let Some(f) = frames.first() {
                    let masked = apply_mask(f, mask)?;
                    s.put(
                        format!("frames/camera_{}_t{}_masked.pgm", f.camera_id, f.t),
                        masked.to_pgm(),
                    );
                }
            }
        }
        Ok(masks)
    })?;

    let transmission = sink.stage("transmission", |s| {
        let stages = match config.toggles.codec {
            CodecModel::Toy => toy_bytes(config, &rendered, &kept, &masks, s)?,
            CodecModel::Analytic => analytic_bytes(config, &rendered, &kept, &masks)?,
        };
        let duration_s = f64::from(scenario.duration_steps) / config.link.fps;
        let report = transmission_report(&stages, duration_s, &config.link)?;
        s.put("transmission.json", json_bytes(&report)?);
        Ok(report)
    })?;

    let eval = sink.stage("eval", |s| {
        let gt: Vec<_> = ground_truth
            .iter()
            .filter(|g| {
                filter.is_kept(FrameKey {
                    camera_id: g.camera_id,
                    t: g.t,
                })
            })
            .cloned()
            .collect();
        let report = mtta(&assignment.entries, &gt, &config.eval)?;
        s.put("eval.json", report.to_json()?);
        let knobs = format!("seed={}", config.seed);
        s.put(
            "eval.csv",
            format!(
                "{}\n{}\n",
                EvalReport::CSV_HEADER,
                report.csv_row("pipeline", config.seed, &knobs)
            ),
        );
        Ok(report)
    })?;

    let records = sink.stage("metadata", |s| {
        let records: Vec<MetadataRecord> = assignment
            .entries
            .iter()
            .enumerate()
            .map(|(i, e)| MetadataRecord {
                global_id: e.global_id,
                camera_id: e.camera_id,
                t: e.t,
                bbox: e.bbox,
                embedding_ref: i,
                tile_refs: grids[&e.camera_id].tiles_overlapping(&e.bbox),
            })
            .collect();
        s.put("records.jsonl", querysvc::to_log(&records)?);
        Ok(records)
    })?;

    let summary = RunSummary {
        mtta_pct: eval.mtta_pct,
        id_switches: eval.id_switches,
        global_ids: assignment.global_id_count(),
        detections: detections.len(),
        total_frames: filter.total(),
        kept_frames: filter.kept.len(),
        drop_pct: 100.0 * filter.drop_fraction(),
        total_bytes: transmission.total_bytes,
        bitrate_kbps: transmission.bitrate_kbps,
        utilization_pct: transmission.utilization_pct,
    };
    let manifest = RunManifest {
        config_hash,
        seed: config.seed,
        artifacts: sink.entries(),
        summary: Some(summary.clone()),
        failure: None,
        stage_wall_ms: sink.wall_ms.clone(),
    };
    Ok(RunOutcome {
        scenario,
        filter,
        detections,
        assignment,
        masks,
        transmission,
        eval,
        records,
        summary,
        manifest,
        artifacts: std::mem::take(&mut sink.artifacts),
    })
}

/// Run every stage in memory without touching the filesystem.
pub fn execute(config: &PipelineConfig) -> Result<RunOutcome> {
    execute_stages(config, &mut Sink::default())
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub const MANIFEST_FILE: &str = "manifest.json";

/// Run and write all artifacts plus `manifest.json` under `out_dir`.
///
/// On failure the artifacts produced so far and a manifest carrying the
/// failure record are still written, and the stage error is returned.
pub fn run_pipeline(config: &PipelineConfig, out_dir: &Path) -> Result<RunOutcome> {
    let mut sink = Sink::default();
    match execute_stages(config, &mut sink) {
        Ok(outcome) => {
            for (rel, bytes) in &outcome.artifacts {
                write_file(&out_dir.join(rel), bytes)?;
            }
            write_file(
                &out_dir.join(MANIFEST_FILE),
                outcome.manifest.to_json()?.as_bytes(),
            )?;
            Ok(outcome)
        }
        Err(err) => {
            for (rel, bytes) in &sink.artifacts {
                write_file(&out_dir.join(rel), bytes)?;
            }
            let (stage, message) = match &err {
                Error::Stage { stage, source } => (stage.clone(), source.to_string()),
                other => ("unknown".to_string(), other.to_string()),
            };
            let manifest = RunManifest {
                config_hash: config.hash().unwrap_or_default(),
                seed: config.seed,
                artifacts: sink.entries(),
                summary: None,
                failure: Some(FailureRecord { stage, message }),
                stage_wall_ms: sink.wall_ms,
            };
            write_file(&out_dir.join(MANIFEST_FILE), manifest.to_json()?.as_bytes())?;
            Err(err)
        }
    }
}

/// One swept knob: a dotted path into the config and its values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Knob {
    pub path: String,
    pub values: Vec<serde_json::Value>,
}

impl Knob {
    /// Parse `path=v1,v2,...`; values are read as JSON where possible
    /// (numbers, booleans), otherwise as strings.
    pub fn parse(spec: &str) -> Result<Self> {
        let (path, values) = spec
            .split_once('=')
            .ok_or_else(|| Error::Argument(format!("knob `{spec}` is not path=values")))?;
        let values: Vec<serde_json::Value> = values
            .split(',')
            .map(str::trim)
            .filter(|v| !v.is_empty())
            .map(|v| {
                serde_json::from_str(v).unwrap_or_else(|_| serde_json::Value::String(v.to_string()))
            })
            .collect();
        if values.is_empty() {
            return Err(Error::Argument(format!("knob `{path}` has an empty range")));
        }
        Ok(Self {
            path: path.trim().to_string(),
            values,
        })
    }
}

fn set_path(root: &mut serde_json::Value, path: &str, value: serde_json::Value) -> Result<()> {
    let mut node = root;
    for part in path.split('.') {
        node = node
            .get_mut(part)
            .ok_or_else(|| Error::Config(format!("unknown config key `{path}`")))?;
    }
    *node = value;
    Ok(())
}

/// Config with each `(path, value)` applied.
pub fn with_overrides(
    template: &PipelineConfig,
    overrides: &[(String, serde_json::Value)],
) -> Result<PipelineConfig> {
    let mut value = serde_json::to_value(template)?;
    for (path, v) in overrides {
        set_path(&mut value, path, v.clone())?;
    }
    let config: PipelineConfig =
        serde_json::from_value(value).map_err(|e| Error::Config(e.to_string()))?;
    config.validate()?;
    Ok(config)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub knobs: Vec<(String, serde_json::Value)>,
    pub summary: RunSummary,
    pub manifest_hash: String,
}

/// Cross product of knob values, one in-memory run per cell, rows in
/// lexicographic knob order. Cells run in parallel; each keeps its seed.
pub fn sweep(template: &PipelineConfig, knobs: &[Knob]) -> Result<Vec<SweepRow>> {
    if knobs.is_empty() {
        return Err(Error::Argument("sweep needs at least one knob".into()));
    }
    if let Some(k) = knobs.iter().find(|k| k.values.is_empty()) {
        return Err(Error::Argument(format!(
            "knob `{}` has an empty range",
            k.path
        )));
    }
    let mut cells: Vec<Vec<(String, serde_json::Value)>> = vec![Vec::new()];
    for knob in knobs {
        cells = cells
            .into_iter()
            .flat_map(|cell| {
                knob.values.iter().map(move |v| {
                    let mut c = cell.clone();
                    c.push((knob.path.clone(), v.clone()));
                    c
                })
            })
            .collect();
    }
    let configs = cells
        .iter()
        .map(|c| with_overrides(template, c))
        .collect::<Result<Vec<_>>>()?;
    configs
        .par_iter()
        .zip(cells.into_par_iter())
        .map(|(config, knobs)| {
            let outcome = execute(config)?;
            Ok(SweepRow {
                knobs,
                manifest_hash: outcome.manifest.content_hash()?,
                summary: outcome.summary,
            })
        })
        .collect()
}

pub fn sweep_csv(rows: &[SweepRow]) -> String {
    let mut out = String::new();
    let knob_names: Vec<&str> = rows
        .first()
        .map(|r| r.knobs.iter().map(|(k, _)| k.as_str()).collect())
        .unwrap_or_default();
    for k in &knob_names {
        out.push_str(&csv_field(k));
        out.push(',');
    }
    out.push_str(
        "mtta_pct,drop_pct,bitrate_kbps,utilization_pct,global_ids,total_bytes,id_switches\n",
    );
    for r in rows {
        for (_, v) in &r.knobs {
            let text = match v {
                serde_json::Value::String(s) => s.clone(),
                other => other.to_string(),
            };
            out.push_str(&csv_field(&text));
            out.push(',');
        }
        let s = &r.summary;
        out.push_str(&format!(
            "{:.4},{:.4},{:.4},{:.4},{},{},{}\n",
            s.mtta_pct,
            s.drop_pct,
            s.bitrate_kbps,
            s.utilization_pct,
            s.global_ids,
            s.total_bytes,
            s.id_switches
        ));
    }
    out
}
