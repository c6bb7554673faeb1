//! firebench: detection evaluation, dataset splitting, edge benchmarking,
//! and comparison-report generation.
//!
//! Exit codes are a stable contract for scripting: 0 success, 1 internal
//! error (e.g. an output could not be written), 2 input or validation
//! error. Every output file is written atomically (temp file + rename) so
//! an interrupted run never leaves a partial report behind.

use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use firebench_core::annotations::{load_dataset, DatasetManifest};
use firebench_core::efficiency::{
    average_power_time_weighted, edp_group, energy, energy_diagnostics, ingest_power_trace,
    RunMetrics, TimingLog,
};
use firebench_core::experiments::{
    kfold_unstratified, render_table, split, split_unstratified, stratified_kfold, stratify,
    ExperimentRecord, FoldAssignment, SplitAssignment, SplitSet, Stratum, TableFormat,
    TableLayout,
};
use firebench_core::metrics::{evaluate, pct1, ApMethod, EvalOptions, ZeroGtPolicy};

/// FPS below this is flagged as not real-time capable.
const REAL_TIME_FPS: f64 = 25.0;

#[derive(Parser)]
#[command(name = "firebench", version, about = "Detection-accuracy and edge-efficiency benchmarking toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Evaluate detections against ground truth (per-class AP and mAP).
    Eval {
        /// Dataset manifest (JSON).
        manifest: PathBuf,
        /// Directory of prediction files named <image_id>.txt; overrides
        /// the manifest's prediction entries where a file exists.
        #[arg(long)]
        predictions: Option<PathBuf>,
        #[arg(long, default_value_t = 0.5)]
        iou_thresh: f64,
        #[arg(long, value_enum, default_value_t = ApMethodArg::Envelope)]
        ap_method: ApMethodArg,
        /// Score classes without ground truth as AP 0 instead of excluding them.
        #[arg(long)]
        score_empty_classes: bool,
        #[command(flatten)]
        output: OutputOpts,
    },
    /// Produce a stratified train/val/test split.
    Split {
        manifest: PathBuf,
        /// Comma-separated train,val,test fractions.
        #[arg(long, default_value = "0.7,0.15,0.15", value_parser = parse_ratios)]
        ratios: [f64; 3],
        #[arg(long, env = "FIREBENCH_SEED", default_value_t = 0)]
        seed: u64,
        /// Shuffle the whole dataset as one group instead of per stratum.
        #[arg(long)]
        no_stratify: bool,
        #[command(flatten)]
        output: OutputOpts,
    },
    /// Produce a stratified k-fold assignment.
    Kfold {
        manifest: PathBuf,
        #[arg(long, default_value_t = 5)]
        k: usize,
        #[arg(long, env = "FIREBENCH_SEED", default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        no_stratify: bool,
        #[command(flatten)]
        output: OutputOpts,
    },
    /// Compute run metrics (FPS, average power, energy) from a timing log
    /// and a power CSV.
    Bench {
        /// Timing log JSON: {run_id, n_images, start_ts, end_ts} or
        /// {run_id, n_images, runtime_s}.
        #[arg(long)]
        timing: PathBuf,
        /// Power CSV: time,power_mw or time,voltage_v,current_ma.
        #[arg(long)]
        power: PathBuf,
        /// Use the trapezoid-weighted mean instead of the plain sample mean.
        #[arg(long)]
        time_weighted_power: bool,
        #[command(flatten)]
        output: OutputOpts,
    },
    /// Form an EDP comparison group from recorded runs.
    Edp {
        /// Directory of experiment-record (or bare run-metrics) JSON files.
        records_dir: PathBuf,
        /// Comma-separated run ids forming the group; default is every run
        /// in the directory.
        #[arg(long, value_delimiter = ',')]
        runs: Option<Vec<String>>,
        #[command(flatten)]
        output: OutputOpts,
    },
    /// Render a comparison table over experiment records.
    Report {
        records_dir: PathBuf,
        #[arg(long, value_enum)]
        layout: LayoutArg,
        #[command(flatten)]
        output: OutputOpts,
    },
}

#[derive(Args)]
struct OutputOpts {
    /// Output directory.
    #[arg(long, default_value = ".")]
    out: PathBuf,
    #[arg(long, value_enum, default_value_t = FormatArg::Md)]
    format: FormatArg,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum ApMethodArg {
    Envelope,
    Coco101,
}

impl From<ApMethodArg> for ApMethod {
    fn from(value: ApMethodArg) -> Self {
        match value {
            ApMethodArg::Envelope => ApMethod::Envelope,
            ApMethodArg::Coco101 => ApMethod::Coco101,
        }
    }
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum FormatArg {
    Md,
    Csv,
    Json,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum LayoutArg {
    Accuracy,
    Cascaded,
    Efficiency,
}

impl From<LayoutArg> for TableLayout {
    fn from(value: LayoutArg) -> Self {
        match value {
            LayoutArg::Accuracy => TableLayout::Accuracy,
            LayoutArg::Cascaded => TableLayout::Cascaded,
            LayoutArg::Efficiency => TableLayout::Efficiency,
        }
    }
}

fn parse_ratios(s: &str) -> Result<[f64; 3], String> {
    let parts: Vec<&str> = s.split(',').collect();
    if parts.len() != 3 {
        return Err(format!("expected three comma-separated fractions, got '{s}'"));
    }
    let mut ratios = [0.0; 3];
    for (slot, part) in ratios.iter_mut().zip(&parts) {
        *slot = part
            .trim()
            .parse()
            .map_err(|_| format!("invalid fraction '{part}'"))?;
    }
    Ok(ratios)
}

struct Failure {
    code: u8,
    message: String,
}

impl From<firebench_core::Error> for Failure {
    fn from(e: firebench_core::Error) -> Self {
        Failure {
            code: 2,
            message: e.to_string(),
        }
    }
}

fn internal(e: impl std::fmt::Display) -> Failure {
    Failure {
        code: 1,
        message: e.to_string(),
    }
}

fn input_err(e: impl std::fmt::Display) -> Failure {
    Failure {
        code: 2,
        message: e.to_string(),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn"))
        .format_timestamp(None)
        .init();
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(failure) => {
            eprintln!("error: {}", failure.message);
            ExitCode::from(failure.code)
        }
    }
}

fn run(command: Command) -> Result<(), Failure> {
    match command {
        Command::Eval {
            manifest,
            predictions,
            iou_thresh,
            ap_method,
            score_empty_classes,
            output,
        } => cmd_eval(
            &manifest,
            predictions.as_deref(),
            iou_thresh,
            ap_method.into(),
            score_empty_classes,
            &output,
        ),
        Command::Split {
            manifest,
            ratios,
            seed,
            no_stratify,
            output,
        } => cmd_split(&manifest, ratios, seed, no_stratify, &output),
        Command::Kfold {
            manifest,
            k,
            seed,
            no_stratify,
            output,
        } => cmd_kfold(&manifest, k, seed, no_stratify, &output),
        Command::Bench {
            timing,
            power,
            time_weighted_power,
            output,
        } => cmd_bench(&timing, &power, time_weighted_power, &output),
        Command::Edp {
            records_dir,
            runs,
            output,
        } => cmd_edp(&records_dir, runs.as_deref(), &output),
        Command::Report {
            records_dir,
            layout,
            output,
        } => cmd_report(&records_dir, layout.into(), &output),
    }
}

/// Writes via a temp file in the target directory plus an atomic rename.
fn write_atomic(path: &Path, contents: &str) -> Result<(), Failure> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty());
    if let Some(dir) = dir {
        fs::create_dir_all(dir).map_err(internal)?;
    }
    let mut tmp = tempfile::NamedTempFile::new_in(dir.unwrap_or(Path::new(".")))
        .map_err(internal)?;
    tmp.write_all(contents.as_bytes()).map_err(internal)?;
    tmp.persist(path).map_err(internal)?;
    Ok(())
}

fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<(), Failure> {
    let mut text = serde_json::to_string_pretty(value).map_err(internal)?;
    text.push('\n');
    write_atomic(path, &text)
}

fn read_input(path: &Path) -> Result<String, Failure> {
    fs::read_to_string(path).map_err(|e| input_err(format!("cannot read {}: {e}", path.display())))
}

fn load_dataset_with_overrides(
    manifest_path: &Path,
    predictions_dir: Option<&Path>,
) -> Result<firebench_core::annotations::Dataset, Failure> {
    let mut manifest = DatasetManifest::from_path(manifest_path)?;
    if let Some(dir) = predictions_dir {
        let dir = fs::canonicalize(dir)
            .map_err(|e| input_err(format!("predictions dir {}: {e}", dir.display())))?;
        for image in &mut manifest.images {
            let candidate = dir.join(format!("{}.txt", image.id));
            if candidate.is_file() {
                image.predictions = Some(candidate);
            }
        }
    }
    let base = manifest_path.parent().unwrap_or(Path::new("."));
    Ok(load_dataset(&manifest, base)?)
}

fn cmd_eval(
    manifest: &Path,
    predictions: Option<&Path>,
    iou_thresh: f64,
    method: ApMethod,
    score_empty_classes: bool,
    output: &OutputOpts,
) -> Result<(), Failure> {
    let dataset = load_dataset_with_overrides(manifest, predictions)?;
    let missing = dataset.images.iter().filter(|i| !i.has_predictions).count();
    if missing > 0 {
        log::warn!("{missing} image(s) have no prediction file; scored with zero detections");
    }
    let options = EvalOptions {
        iou_threshold: iou_thresh,
        method,
        zero_gt_policy: if score_empty_classes {
            ZeroGtPolicy::ScoreZero
        } else {
            ZeroGtPolicy::Exclude
        },
        parallel: true,
    };
    let report = evaluate(&dataset, &options)?;

    write_json(&output.out.join("eval_report.json"), &report)?;
    match output.format {
        FormatArg::Md => write_atomic(&output.out.join("eval_report.md"), &report.text_table())?,
        FormatArg::Csv => write_atomic(&output.out.join("eval_report.csv"), &report.csv_table())?,
        FormatArg::Json => {
            println!("{}", serde_json::to_string_pretty(&report).map_err(internal)?);
        }
    }

    if output.format != FormatArg::Json {
        let per_class: Vec<String> = report
            .per_class
            .iter()
            .map(|a| format!("{}: {}%", a.class.name, pct1(a.ap)))
            .collect();
        println!(
            "mAP@{}: {}%  ({})",
            report.iou_threshold,
            pct1(report.map),
            per_class.join(", ")
        );
    }
    Ok(())
}

fn stratum_summary(
    strata: &std::collections::BTreeMap<Stratum, Vec<String>>,
    classes: &firebench_core::annotations::ClassTable,
    member: impl Fn(&str) -> bool,
) -> String {
    let mut parts = Vec::new();
    for (stratum, ids) in strata {
        let count = ids.iter().filter(|id| member(id)).count();
        parts.push(format!("{}: {count}", stratum.label(classes)));
    }
    parts.join(", ")
}

fn cmd_split(
    manifest: &Path,
    ratios: [f64; 3],
    seed: u64,
    no_stratify: bool,
    output: &OutputOpts,
) -> Result<(), Failure> {
    let dataset = load_dataset_with_overrides(manifest, None)?;
    let assignment: SplitAssignment = if no_stratify {
        split_unstratified(&dataset, ratios, seed)?
    } else {
        split(&dataset, ratios, seed)?
    };

    write_json(&output.out.join("split.json"), &assignment)?;
    let strata = stratify(&dataset);
    for set in SplitSet::ALL {
        let ids = assignment.ids_in(set);
        let list = ids.join("\n") + if ids.is_empty() { "" } else { "\n" };
        write_atomic(&output.out.join(format!("{set}.txt")), &list)?;
        if output.format != FormatArg::Json {
            let detail = stratum_summary(&strata, &dataset.classes, |id| {
                assignment.assignment.get(id) == Some(&set)
            });
            println!("{set}: {}  ({detail})", ids.len());
        }
    }
    if output.format == FormatArg::Json {
        println!("{}", serde_json::to_string_pretty(&assignment).map_err(internal)?);
    }
    Ok(())
}

fn cmd_kfold(
    manifest: &Path,
    k: usize,
    seed: u64,
    no_stratify: bool,
    output: &OutputOpts,
) -> Result<(), Failure> {
    let dataset = load_dataset_with_overrides(manifest, None)?;
    let folds: FoldAssignment = if no_stratify {
        kfold_unstratified(&dataset, k, seed)?
    } else {
        stratified_kfold(&dataset, k, seed)?
    };

    write_json(&output.out.join("folds.json"), &folds)?;
    let strata = stratify(&dataset);
    for fold in 0..folds.k {
        let ids = folds.ids_in_fold(fold);
        let list = ids.join("\n") + if ids.is_empty() { "" } else { "\n" };
        write_atomic(&output.out.join(format!("fold_{fold}.txt")), &list)?;
        if output.format != FormatArg::Json {
            let detail = stratum_summary(&strata, &dataset.classes, |id| {
                folds.assignment.get(id) == Some(&fold)
            });
            println!("fold {fold}: {}  ({detail})", ids.len());
        }
    }
    if output.format == FormatArg::Json {
        println!("{}", serde_json::to_string_pretty(&folds).map_err(internal)?);
    }
    Ok(())
}

fn cmd_bench(
    timing_path: &Path,
    power_path: &Path,
    time_weighted_power: bool,
    output: &OutputOpts,
) -> Result<(), Failure> {
    let timing: TimingLog = serde_json::from_str(&read_input(timing_path)?)
        .map_err(|e| input_err(format!("{}: invalid timing log: {e}", timing_path.display())))?;
    let trace = ingest_power_trace(&read_input(power_path)?, &power_path.display().to_string())
        .map_err(Failure::from)?;

    let metrics = if time_weighted_power {
        RunMetrics::new(
            timing.run_id(),
            timing.n_images(),
            timing.runtime_s()?,
            average_power_time_weighted(&trace)?,
            energy(&trace)?,
        )?
    } else {
        RunMetrics::from_measurements(&timing, &trace)?
    };

    write_json(&output.out.join("run_metrics.json"), &metrics)?;

    let diag = energy_diagnostics(&trace)?;
    if output.format == FormatArg::Json {
        println!("{}", serde_json::to_string_pretty(&metrics).map_err(internal)?);
    } else {
        println!(
            "run '{}': {} images in {:.4} s -> {:.2} fps, avg power {:.2} mW, energy {:.4} J \
             (mean-power estimate {:.4} J)",
            metrics.run_id,
            metrics.n_images,
            metrics.runtime_s,
            metrics.fps,
            metrics.avg_power_mw,
            metrics.energy_j,
            diag.mean_power_j,
        );
    }
    if metrics.fps < REAL_TIME_FPS {
        eprintln!(
            "warning: {:.2} fps is below the {REAL_TIME_FPS} fps real-time bar",
            metrics.fps
        );
    }
    Ok(())
}

/// A record file is either a full experiment record or bare run metrics.
fn load_run_metrics(path: &Path) -> Result<RunMetrics, Failure> {
    let text = read_input(path)?;
    if let Ok(record) = serde_json::from_str::<ExperimentRecord>(&text) {
        record.validate()?;
        if let Some(metrics) = record.run_metrics {
            return Ok(metrics);
        }
        return Err(input_err(format!(
            "{}: record '{}' has no run_metrics",
            path.display(),
            record.run_id
        )));
    }
    let metrics: RunMetrics = serde_json::from_str(&text)
        .map_err(|e| input_err(format!("{}: not a record or run metrics: {e}", path.display())))?;
    metrics.validate()?;
    Ok(metrics)
}

fn record_files(dir: &Path) -> Result<Vec<PathBuf>, Failure> {
    let entries = fs::read_dir(dir)
        .map_err(|e| input_err(format!("cannot read {}: {e}", dir.display())))?;
    let mut files: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|ext| ext == "json"))
        .collect();
    files.sort();
    Ok(files)
}

fn cmd_edp(records_dir: &Path, runs: Option<&[String]>, output: &OutputOpts) -> Result<(), Failure> {
    let mut all = Vec::new();
    for path in record_files(records_dir)? {
        all.push(load_run_metrics(&path)?);
    }
    let selected: Vec<RunMetrics> = match runs {
        Some(ids) => {
            let mut picked = Vec::new();
            for id in ids {
                let found = all
                    .iter()
                    .find(|m| m.run_id == *id)
                    .ok_or_else(|| input_err(format!("run '{id}' not found in records dir")))?;
                picked.push(found.clone());
            }
            picked
        }
        None => all,
    };

    let group = edp_group(&selected)?;
    write_json(&output.out.join("edp_group.json"), &group)?;
    write_atomic(&output.out.join("edp_group.csv"), &group.chart_csv())?;
    if output.format == FormatArg::Json {
        println!("{}", serde_json::to_string_pretty(&group).map_err(internal)?);
    } else {
        for member in &group.members {
            println!(
                "{}: normalized energy {:.4}, normalized runtime {:.4}, EDP {:.4}",
                member.run.run_id, member.normalized_energy, member.normalized_runtime, member.edp
            );
        }
    }
    Ok(())
}

fn cmd_report(records_dir: &Path, layout: TableLayout, output: &OutputOpts) -> Result<(), Failure> {
    let mut records = Vec::new();
    for path in record_files(records_dir)? {
        records.push(ExperimentRecord::from_json_file(&path)?);
    }

    let (format, extension) = match output.format {
        FormatArg::Csv => (TableFormat::Csv, "csv"),
        // json has no table form; md is the default table output
        _ => (TableFormat::Markdown, "md"),
    };
    let table = render_table(&records, layout, format)?;
    let path = output.out.join(format!("report.{extension}"));
    write_atomic(&path, &table)?;
    println!("wrote {} ({} record(s))", path.display(), records.len());
    Ok(())
}
