//! Pipeline driver: `gen` makes a synthetic corpus, `train` fits weights on
//! its train split, `calibrate` picks the decision threshold on the val
//! split, `eval` scores the test split into report files, and `report`
//! pretty-prints a report CSV.
//!
//! Configuration comes from an optional JSON file (sections `preprocess`,
//! `network`, `train`, `synth`, each falling back to its defaults) with
//! command-line flags taking precedence over the file and the `PADPHYS_SEED`
//! environment variable sitting between the two. The crop size always
//! follows the network input size: `preprocess.target_size` is overwritten
//! from `network.input_size` at train time and from the weight file
//! afterwards, so the two can never disagree.
//!
//! Every output is written to a temporary file and renamed into place.
//! Exit codes: 0 success, 2 usage (bad flags or parameter values), 3 data
//! (unreadable or inconsistent inputs), 4 numeric failure (NaN or infinity
//! reached the pipeline).

use clap::{Parser, Subcommand, ValueEnum};
use padphys::dataset::{ClipSampler, DatasetManifest, Split};
use padphys::metrics::{self, Calibration, VideoScore};
use padphys::network::{ModelWeights, NetworkConfig};
use padphys::preprocess::PreprocessConfig;
use padphys::synthdata::{self, SynthConfig};
use padphys::training::{self, LossKind, Regime, TrainConfig};
use padphys::util::atomic_write;
use padphys::{Error, Result};
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "padphys", version, about = "Pulse-based presentation attack detection pipeline")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate a synthetic clip corpus with a manifest and ground truth.
    Gen(GenArgs),
    /// Train weights on the manifest's train split.
    Train(TrainArgs),
    /// Fix the decision threshold at the validation-split equal error rate.
    Calibrate(CalibrateArgs),
    /// Score the test split and write the metric report files.
    Eval(EvalArgs),
    /// Pretty-print a report CSV as an aligned table.
    Report(ReportArgs),
}

#[derive(clap::Args)]
struct GenArgs {
    /// Directory to create; refused if it already exists.
    #[arg(long)]
    out: PathBuf,
    /// JSON run configuration (the `synth` section applies here).
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    n_users: Option<usize>,
    #[arg(long)]
    clips_per_user: Option<usize>,
    #[arg(long)]
    frames_per_clip: Option<usize>,
}

#[derive(clap::Args)]
struct TrainArgs {
    /// Clip manifest; paths inside it resolve relative to its directory.
    #[arg(long)]
    manifest: PathBuf,
    /// JSON run configuration (`preprocess`, `network`, `train` apply here).
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, value_enum)]
    regime: Option<RegimeArg>,
    #[arg(long, value_enum)]
    loss: Option<LossArg>,
    /// Parent weights; required by full_retrain and frozen_transfer,
    /// rejected by scratch.
    #[arg(long)]
    init_weights: Option<PathBuf>,
    /// Weight file to write.
    #[arg(long)]
    out: PathBuf,
    /// Training log CSV; defaults to the weight path with extension
    /// `log.csv`.
    #[arg(long)]
    log: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    patience: Option<usize>,
    /// Cap on pairs drawn from each clip per epoch.
    #[arg(long)]
    pairs_per_clip: Option<usize>,
}

#[derive(clap::Args)]
struct CalibrateArgs {
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    weights: PathBuf,
    /// JSON run configuration (the `preprocess` section applies here).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Calibration JSON to write.
    #[arg(long)]
    out: PathBuf,
}

#[derive(clap::Args)]
struct EvalArgs {
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    weights: PathBuf,
    /// Calibration JSON produced by `calibrate`.
    #[arg(long)]
    calibration: PathBuf,
    /// JSON run configuration (the `preprocess` section applies here).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Directory receiving report.txt, report.csv, roc.csv, and roc.svg.
    #[arg(long)]
    out_dir: PathBuf,
}

#[derive(clap::Args)]
struct ReportArgs {
    /// Report CSV, e.g. the report.csv written by `eval`.
    csv: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum RegimeArg {
    #[value(name = "scratch")]
    Scratch,
    #[value(name = "full_retrain")]
    FullRetrain,
    #[value(name = "frozen_transfer")]
    FrozenTransfer,
}

impl From<RegimeArg> for Regime {
    fn from(r: RegimeArg) -> Regime {
        match r {
            RegimeArg::Scratch => Regime::Scratch,
            RegimeArg::FullRetrain => Regime::FullRetrain,
            RegimeArg::FrozenTransfer => Regime::FrozenTransfer,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum LossArg {
    Mse,
    Bce,
}

impl From<LossArg> for LossKind {
    fn from(l: LossArg) -> LossKind {
        match l {
            LossArg::Mse => LossKind::Mse,
            LossArg::Bce => LossKind::Bce,
        }
    }
}

/// One file configures the whole pipeline; missing sections and fields keep
/// their defaults.
#[derive(Debug, Default, Clone, Serialize, Deserialize)]
#[serde(default)]
struct RunConfig {
    preprocess: PreprocessConfig,
    network: NetworkConfig,
    train: TrainConfig,
    synth: SynthConfig,
}

fn load_config(path: Option<&Path>) -> Result<RunConfig> {
    match path {
        None => Ok(RunConfig::default()),
        Some(p) => {
            let text = std::fs::read_to_string(p)
                .map_err(|e| Error::Data(format!("cannot read config {}: {e}", p.display())))?;
            Ok(serde_json::from_str(&text)?)
        }
    }
}

fn env_seed() -> Result<Option<u64>> {
    match std::env::var("PADPHYS_SEED") {
        Ok(v) => v
            .trim()
            .parse::<u64>()
            .map(Some)
            .map_err(|_| Error::InvalidArgument(format!("PADPHYS_SEED must be an unsigned integer, got {v:?}"))),
        Err(std::env::VarError::NotPresent) => Ok(None),
        Err(e) => Err(Error::InvalidArgument(format!("PADPHYS_SEED: {e}"))),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.cmd) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn exit_code(e: &Error) -> u8 {
    if e.is_numeric() {
        4
    } else if matches!(e, Error::InvalidArgument(_)) {
        2
    } else {
        3
    }
}

fn run(cmd: Cmd) -> Result<()> {
    match cmd {
        Cmd::Gen(a) => cmd_gen(a),
        Cmd::Train(a) => cmd_train(a),
        Cmd::Calibrate(a) => cmd_calibrate(a),
        Cmd::Eval(a) => cmd_eval(a),
        Cmd::Report(a) => cmd_report(a),
    }
}

fn cmd_gen(a: GenArgs) -> Result<()> {
    let mut cfg = load_config(a.config.as_deref())?.synth;
    if let Some(s) = env_seed()? {
        cfg.seed = s;
    }
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    if let Some(n) = a.n_users {
        cfg.n_users = n;
    }
    if let Some(n) = a.clips_per_user {
        cfg.clips_per_user = n;
    }
    if let Some(n) = a.frames_per_clip {
        cfg.frames_per_clip = n;
    }
    let manifest = synthdata::generate(&cfg, &a.out)?;
    println!("wrote {} clips to {}", manifest.entries.len(), a.out.display());
    println!("manifest: {}", a.out.join("manifest.jsonl").display());
    Ok(())
}

fn cmd_train(a: TrainArgs) -> Result<()> {
    let run_cfg = load_config(a.config.as_deref())?;
    let net_cfg = run_cfg.network;
    let mut pre_cfg = run_cfg.preprocess;
    pre_cfg.target_size = net_cfg.input_size;

    let mut cfg = run_cfg.train;
    if let Some(s) = env_seed()? {
        cfg.seed = s;
    }
    if let Some(r) = a.regime {
        cfg.regime = r.into();
    }
    if let Some(l) = a.loss {
        cfg.loss = l.into();
    }
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    if let Some(n) = a.epochs {
        cfg.epochs = n;
    }
    if let Some(x) = a.lr {
        cfg.lr = x;
    }
    if let Some(n) = a.batch_size {
        cfg.batch_size = n;
    }
    if let Some(n) = a.patience {
        cfg.patience = n;
    }
    if let Some(n) = a.pairs_per_clip {
        cfg.pairs_per_clip = Some(n);
    }

    let manifest = DatasetManifest::read(&a.manifest)?;
    let dir = manifest_dir(&a.manifest);
    let init = match &a.init_weights {
        Some(p) => Some(ModelWeights::load(p)?),
        None => None,
    };
    let (weights, log) = training::train(&manifest, dir, &pre_cfg, &net_cfg, &cfg, init.as_ref())?;

    weights.save(&a.out)?;
    let log_path = a.log.clone().unwrap_or_else(|| a.out.with_extension("log.csv"));
    atomic_write(&log_path, log.to_csv().as_bytes())?;

    match log.best_epoch {
        Some(best) => println!(
            "best epoch {best}/{} (val_loss {:.6}){}",
            log.records.len(),
            log.records[best - 1].val_loss,
            if log.stopped_early { ", stopped early" } else { "" }
        ),
        None => println!("no epochs ran; initial weights written"),
    }
    println!("provenance: {}", weights.provenance.join(" -> "));
    println!("weights: {}", a.out.display());
    println!("log: {}", log_path.display());
    Ok(())
}

fn cmd_calibrate(a: CalibrateArgs) -> Result<()> {
    let manifest = DatasetManifest::read(&a.manifest)?;
    let weights = ModelWeights::load(&a.weights)?;
    let pre_cfg = eval_preprocess(a.config.as_deref(), &weights)?;
    let scores = score_split(&manifest, manifest_dir(&a.manifest), &pre_cfg, &weights, Split::Val)?;
    let eer = metrics::eer_threshold(&scores)?;
    let cal = Calibration { threshold: eer.threshold, eer: eer.eer, n_val: scores.len() };
    let mut json = serde_json::to_string_pretty(&cal)?;
    json.push('\n');
    atomic_write(&a.out, json.as_bytes())?;
    println!(
        "threshold {:.6} (eer {:.4}) from {} validation clips",
        cal.threshold, cal.eer, cal.n_val
    );
    println!("calibration: {}", a.out.display());
    Ok(())
}

fn cmd_eval(a: EvalArgs) -> Result<()> {
    let manifest = DatasetManifest::read(&a.manifest)?;
    let weights = ModelWeights::load(&a.weights)?;
    let pre_cfg = eval_preprocess(a.config.as_deref(), &weights)?;
    let text = std::fs::read_to_string(&a.calibration)
        .map_err(|e| Error::Data(format!("cannot read calibration {}: {e}", a.calibration.display())))?;
    let cal: Calibration = serde_json::from_str(&text)?;

    let scores = score_split(&manifest, manifest_dir(&a.manifest), &pre_cfg, &weights, Split::Test)?;
    let report = metrics::classify_and_report(&scores, cal.threshold)?;
    let roc = metrics::roc_report(&scores)?;

    let table = metrics::render_table(&report);
    atomic_write(&a.out_dir.join("report.txt"), table.as_bytes())?;
    atomic_write(&a.out_dir.join("report.csv"), metrics::report_csv(&report).as_bytes())?;
    atomic_write(&a.out_dir.join("roc.csv"), metrics::roc_csv(&roc.aggregate).as_bytes())?;
    atomic_write(&a.out_dir.join("roc.svg"), metrics::render_roc_svg(&roc).as_bytes())?;

    print!("{table}");
    println!("report files in {}", a.out_dir.display());
    Ok(())
}

fn cmd_report(a: ReportArgs) -> Result<()> {
    let text = std::fs::read_to_string(&a.csv)
        .map_err(|e| Error::Data(format!("cannot read report {}: {e}", a.csv.display())))?;
    let rows: Vec<Vec<&str>> = text
        .lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| l.split(',').collect())
        .collect();
    let Some(first) = rows.first() else {
        return Err(Error::Data(format!("{} holds no rows", a.csv.display())));
    };
    if rows.iter().any(|r| r.len() != first.len()) {
        return Err(Error::Data(format!("{} has rows of unequal width", a.csv.display())));
    }
    let mut widths = vec![0usize; first.len()];
    for row in &rows {
        for (i, cell) in row.iter().enumerate() {
            widths[i] = widths[i].max(cell.len());
        }
    }
    for row in &rows {
        let line: Vec<String> = row
            .iter()
            .enumerate()
            .map(|(i, cell)| {
                // First column is a name, the rest are numbers.
                if i == 0 {
                    format!("{cell:<w$}", w = widths[i])
                } else {
                    format!("{cell:>w$}", w = widths[i])
                }
            })
            .collect();
        println!("{}", line.join("  ").trim_end());
    }
    Ok(())
}

fn manifest_dir(path: &Path) -> &Path {
    path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."))
}

/// Preprocessing for scoring an existing model: file-configurable except the
/// crop size, which must match what the weights were trained at.
fn eval_preprocess(config: Option<&Path>, weights: &ModelWeights) -> Result<PreprocessConfig> {
    let mut pre = load_config(config)?.preprocess;
    pre.target_size = weights.config.input_size;
    Ok(pre)
}

/// Video-level scores (mean of eval-mode frame-pair scores) for every clip
/// of one split, in manifest order.
fn score_split(
    manifest: &DatasetManifest,
    dir: &Path,
    pre: &PreprocessConfig,
    weights: &ModelWeights,
    split: Split,
) -> Result<Vec<VideoScore>> {
    let mut out = Vec::new();
    for entry in manifest.split(split) {
        let mut sampler = ClipSampler::open(entry, dir, pre)?;
        let frames = training::score_clip(weights, &mut sampler)?;
        out.push(VideoScore::new(entry.id.clone(), sampler.class, frames)?);
    }
    if out.is_empty() {
        return Err(Error::Data(format!("manifest has no clips in the {} split", split.as_str())));
    }
    Ok(out)
}
