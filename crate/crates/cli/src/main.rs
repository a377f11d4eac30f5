//! `xcam`: drive the cross-camera tracking simulator from the command line.
//!
//! Exit codes: 0 success, 1 configuration or usage error, 2 stage failure,
//! 3 infeasible tile cover.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use xcam_core::associate::GlobalIdAssignment;
use xcam_core::eval::{mtta, EvalReport, IdMapping};
use xcam_core::pipeline::{
    run_pipeline, sweep, sweep_csv, Knob, PipelineConfig, RunManifest, MANIFEST_FILE,
};
use xcam_core::querysvc::{EvidenceContext, MetadataStore};
use xcam_core::roicover::RoiMask;
use xcam_core::scenario::{generate_scenario, WorldScenario};
use xcam_core::{Error, Result};

const EXIT_CONFIG: u8 = 1;
const EXIT_STAGE: u8 = 2;
const EXIT_INFEASIBLE: u8 = 3;

#[derive(Debug, Parser)]
#[command(name = "xcam", version, about = "Cross-camera tracking simulator")]
struct Cli {
    /// Pipeline config (TOML); every key is optional.
    #[arg(long, short, global = true)]
    config: Option<PathBuf>,

    /// Override the config seed.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Root directory for run outputs.
    #[arg(long, global = true, env = "XCAM_OUTPUT_ROOT", default_value = "runs")]
    output_root: PathBuf,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a world scenario and write it as JSON.
    Generate {
        /// Output directory; defaults to `<root>/scenario-<seed>`.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Also write every rendered frame as PGM.
        #[arg(long)]
        frames: bool,
    },
    /// Run the full pipeline and write all artifacts plus a manifest.
    Run {
        /// Run directory; defaults to the config `output_dir`, else `<root>/run-<seed>`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the cross product of knob values and emit a CSV.
    Sweep {
        /// `dotted.path=v1,v2,...`, repeatable.
        #[arg(long = "knob", short, required = true)]
        knobs: Vec<String>,
        /// CSV path; defaults to `<root>/sweep-<seed>.csv`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Evaluate an assignment against a scenario's ground truth.
    Eval(EvalArgs),
    /// Answer a metadata query over a run's record log.
    Query {
        /// Run directory holding `records.jsonl`.
        #[arg(long)]
        run: PathBuf,
        #[command(subcommand)]
        query: Query,
    },
    /// Summarize a run manifest.
    Report {
        /// Run directory holding `manifest.json`.
        #[arg(long)]
        run: PathBuf,
    },
}

#[derive(Debug, Args)]
struct EvalArgs {
    /// Run directory holding `assignment.jsonl` and `scenario.json`.
    #[arg(long, required_unless_present_all = ["assignment", "scenario"])]
    run: Option<PathBuf>,
    #[arg(long, conflicts_with = "run", requires = "scenario")]
    assignment: Option<PathBuf>,
    #[arg(long, conflicts_with = "run", requires = "assignment")]
    scenario: Option<PathBuf>,
    /// Override the config IoU threshold.
    #[arg(long)]
    iou_threshold: Option<f64>,
    /// Map ids by first match instead of the optimal bijection.
    #[arg(long)]
    first_match: bool,
    /// Print a CSV row instead of JSON.
    #[arg(long)]
    csv: bool,
}

#[derive(Debug, Subcommand)]
enum Query {
    /// Number of records of a global id, with tile evidence.
    Appearances {
        #[arg(long)]
        id: u32,
        /// Cap on evidence entries.
        #[arg(long)]
        limit: Option<usize>,
        /// Skip re-rendering frames to price evidence.
        #[arg(long)]
        no_evidence: bool,
    },
    /// Distinct global ids with a record in `start..end`.
    DistinctCount {
        #[arg(long, default_value_t = 0)]
        start: u32,
        #[arg(long, default_value_t = u32::MAX)]
        end: u32,
    },
    /// Earliest step and camera of a global id.
    FirstEntry {
        #[arg(long)]
        id: u32,
        #[arg(long)]
        no_evidence: bool,
    },
}

fn exit_code(err: &Error) -> u8 {
    match err.root() {
        Error::Config(_) | Error::Argument(_) => EXIT_CONFIG,
        Error::Infeasible { .. } => EXIT_INFEASIBLE,
        _ => EXIT_STAGE,
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(EXIT_CONFIG)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match dispatch(cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn load_config(cli: &Cli) -> Result<PipelineConfig> {
    let mut config = match &cli.config {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
            PipelineConfig::from_toml(&text)?
        }
        None => PipelineConfig::default(),
    };
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    Ok(config)
}

fn read(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::Lookup(format!("{}: {e}", path.display())))
}

fn write(path: &Path, bytes: &[u8]) -> Result<()> {
    let io = |e| Error::Lookup(format!("{}: {e}", path.display()));
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(io)?;
    }
    std::fs::write(path, bytes).map_err(io)
}

fn print_json<T: serde::Serialize>(value: &T) -> Result<u8> {
    println!("{}", serde_json::to_string_pretty(value)?);
    Ok(0)
}

/// Runs the subcommand; `Ok` carries the exit code.
fn dispatch(cli: Cli) -> Result<u8> {
    let config = load_config(&cli)?;
    let root = &cli.output_root;
    match cli.command {
        Command::Generate { out, frames } => {
            config.validate()?;
            let dir = out.unwrap_or_else(|| root.join(format!("scenario-{}", config.seed)));
            let scenario = generate_scenario(&config.scenario, config.seed)?;
            write(&dir.join("scenario.json"), scenario.to_json()?.as_bytes())?;
            if frames {
                for cam in &scenario.cameras {
                    for frame in scenario.render_camera(cam.id)? {
                        let name = format!("frames/camera_{}_t{:05}.pgm", cam.id, frame.t);
                        write(&dir.join(name), &frame.to_pgm())?;
                    }
                }
            }
            print_json(&serde_json::json!({
                "dir": dir,
                "content_hash": scenario.content_hash()?,
                "ground_truth_records": scenario.ground_truth().len(),
            }))
        }
        Command::Run { out } => {
            let dir = out
                .or_else(|| config.output_dir.as_ref().map(|d| root.join(d)))
                .unwrap_or_else(|| root.join(format!("run-{}", config.seed)));
            let outcome = run_pipeline(&config, &dir)?;
            print_json(&serde_json::json!({
                "dir": dir,
                "manifest_hash": outcome.manifest.content_hash()?,
                "summary": outcome.summary,
            }))
        }
        Command::Sweep { knobs, out } => {
            let knobs = knobs
                .iter()
                .map(|k| Knob::parse(k))
                .collect::<Result<Vec<_>>>()?;
            let rows = sweep(&config, &knobs)?;
            let csv = sweep_csv(&rows);
            let path = out.unwrap_or_else(|| root.join(format!("sweep-{}.csv", config.seed)));
            write(&path, csv.as_bytes())?;
            print!("{csv}");
            Ok(0)
        }
        Command::Eval(args) => {
            let label = args.run.as_ref().and_then(|r| r.file_name()).map_or_else(
                || "scenario".to_string(),
                |n| n.to_string_lossy().into_owned(),
            );
            let (assignment, scenario) = match &args.run {
                Some(run) => (run.join("assignment.jsonl"), run.join("scenario.json")),
                None => (
                    args.assignment.clone().unwrap_or_default(),
                    args.scenario.clone().unwrap_or_default(),
                ),
            };
            let assignment = GlobalIdAssignment::from_jsonl(&read(&assignment)?)?;
            let scenario = WorldScenario::from_json(&read(&scenario)?)?;
            let mut eval = config.eval;
            if let Some(threshold) = args.iou_threshold {
                eval.iou_threshold = threshold;
            }
            if args.first_match {
                eval.id_mapping = IdMapping::FirstMatch;
            }
            let report = mtta(&assignment.entries, &scenario.ground_truth(), &eval)?;
            if args.csv {
                println!("{}", EvalReport::CSV_HEADER);
                println!("{}", report.csv_row(&label, scenario.seed, ""));
                Ok(0)
            } else {
                println!("{}", report.to_json()?);
                Ok(0)
            }
        }
        Command::Query { run, query } => {
            let store = MetadataStore::open(&run.join("records.jsonl"))?;
            let result = match query {
                Query::Appearances {
                    id,
                    limit,
                    no_evidence,
                } => {
                    let ctx = (!no_evidence).then(|| evidence_context(&run)).transpose()?;
                    store.query_appearances(id, ctx.as_ref(), limit)?
                }
                Query::DistinctCount { start, end } => store.query_distinct_count(start, end)?,
                Query::FirstEntry { id, no_evidence } => {
                    let ctx = (!no_evidence).then(|| evidence_context(&run)).transpose()?;
                    store.query_first_entry(id, ctx.as_ref())?
                }
            };
            print_json(&result)
        }
        Command::Report { run } => {
            let manifest: RunManifest = serde_json::from_str(&read(&run.join(MANIFEST_FILE))?)?;
            print!("{}", render_report(&manifest));
            Ok(if manifest.failure.is_some() {
                EXIT_STAGE
            } else {
                0
            })
        }
    }
}

/// Masks and re-rendered frames of a run, for pricing query evidence.
fn evidence_context(run: &Path) -> Result<EvidenceContext> {
    let scenario = WorldScenario::from_json(&read(&run.join("scenario.json"))?)?;
    let masks: Vec<RoiMask> = serde_json::from_str(&read(&run.join("masks.json"))?)?;
    let mut frames = BTreeMap::new();
    for cam in &scenario.cameras {
        for frame in scenario.render_camera(cam.id)? {
            frames.insert((frame.camera_id, frame.t), frame);
        }
    }
    Ok(EvidenceContext {
        masks: masks.into_iter().map(|m| (m.camera_id, m)).collect(),
        frames,
    })
}

fn render_report(m: &RunManifest) -> String {
    let mut out = String::new();
    out.push_str(&format!("config_hash   {}\n", m.config_hash));
    out.push_str(&format!("seed          {}\n", m.seed));
    if let Some(s) = &m.summary {
        out.push_str(&format!("mtta          {:.2}%\n", s.mtta_pct));
        out.push_str(&format!("id_switches   {}\n", s.id_switches));
        out.push_str(&format!("global_ids    {}\n", s.global_ids));
        out.push_str(&format!("detections    {}\n", s.detections));
        out.push_str(&format!(
            "frames        {} kept of {} ({:.2}% dropped)\n",
            s.kept_frames, s.total_frames, s.drop_pct
        ));
        out.push_str(&format!("bytes         {:.0}\n", s.total_bytes));
        out.push_str(&format!(
            "bitrate       {:.1} kbps ({:.2}% of uplink)\n",
            s.bitrate_kbps, s.utilization_pct
        ));
    }
    if let Some(f) = &m.failure {
        out.push_str(&format!(
            "FAILED        stage `{}`: {}\n",
            f.stage, f.message
        ));
    }
    out.push_str("stage wall times (ms)\n");
    for (stage, ms) in &m.stage_wall_ms {
        out.push_str(&format!("  {stage:<12} {ms:>10.2}\n"));
    }
    out.push_str("artifacts\n");
    for a in m.artifacts.values() {
        out.push_str(&format!(
            "  {:<28} {:>10} {}\n",
            a.path,
            a.bytes,
            &a.sha256[..12]
        ));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn staged(inner: Error) -> Error {
        Error::Stage {
            stage: "masking".into(),
            source: Box::new(inner),
        }
    }

    #[test]
    fn exit_codes_follow_the_root_cause() {
        assert_eq!(exit_code(&Error::Config("x".into())), EXIT_CONFIG);
        assert_eq!(exit_code(&staged(Error::Config("x".into()))), EXIT_CONFIG);
        assert_eq!(exit_code(&Error::Argument("x".into())), EXIT_CONFIG);
        let infeasible = Error::Infeasible {
            object: "global_id=1 camera_id=0".into(),
        };
        assert_eq!(exit_code(&staged(infeasible)), EXIT_INFEASIBLE);
        assert_eq!(exit_code(&staged(Error::Numeric("x".into()))), EXIT_STAGE);
        assert_eq!(exit_code(&Error::Lookup("x".into())), EXIT_STAGE);
    }

    #[test]
    fn cli_definition_is_consistent() {
        use clap::CommandFactory;
        Cli::command().debug_assert();
    }
}
