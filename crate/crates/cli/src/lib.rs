//! Command-line front end: one subcommand per pipeline stage, with file handoffs
//! between them, plus `all`, which chains every stage from one config file.
//!
//! Failures print a single line `ERROR:<stage>:<code>: <message>` on stderr and exit
//! with status 1. Files and directories a failing command created are removed.

use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::error::ErrorKind;
use clap::{Args, CommandFactory, FromArgMatches, Parser, Subcommand};
use neurotopo::aae::{evaluate_aae, train_aae, AaeModel};
use neurotopo::cnn::{train_cnn, Cnn, EvalReport};
use neurotopo::config::PipelineConfig;
use neurotopo::dsp::Preprocessor;
use neurotopo::montage::Montage;
use neurotopo::report::emit_report;
use neurotopo::synth::{generate_cohort, SAMPLE_RATE};
use neurotopo::tensor::{checkpoint, gradcheck};
use neurotopo::topomap::dataset::{FullImageSink, MANIFEST_FORMAT};
use neurotopo::topomap::{build_dataset, DatasetManifest, GrayImage, ImageMeta, ImageSet, Split};
use neurotopo::{par, trial_io};

/// A failure attributed to a pipeline stage.
#[derive(Debug)]
pub struct StageError {
    pub stage: &'static str,
    pub code: &'static str,
    pub message: String,
}

impl StageError {
    fn new(stage: &'static str, code: &'static str, message: impl Into<String>) -> Self {
        StageError {
            stage,
            code,
            message: message.into(),
        }
    }

    /// The single-line form printed on stderr.
    pub fn line(&self) -> String {
        let msg = self.message.replace('\n', " ");
        format!("ERROR:{}:{}: {}", self.stage, self.code, msg.trim())
    }
}

type StageResult<T> = std::result::Result<T, StageError>;

trait InStage<T> {
    fn stage(self, stage: &'static str) -> StageResult<T>;
}

impl<T> InStage<T> for neurotopo::Result<T> {
    fn stage(self, stage: &'static str) -> StageResult<T> {
        self.map_err(|e| StageError::new(stage, e.code(), e.to_string()))
    }
}

impl<T> InStage<T> for std::io::Result<T> {
    fn stage(self, stage: &'static str) -> StageResult<T> {
        self.map_err(|e| StageError::new(stage, "io", e.to_string()))
    }
}

#[derive(Parser, Debug)]
#[command(
    name = "neurotopo",
    about = "EEG topogram synthesis, preprocessing and classification"
)]
struct Cli {
    /// Worker threads for data-parallel kernels; outputs are identical for any count.
    #[arg(long, global = true, default_value_t = 1)]
    threads: usize,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic cohort of trial files.
    Synth(SynthArgs),
    /// Notch and band-pass filter every trial file of a directory.
    Preprocess(PreprocessArgs),
    /// Render topograms and write the image dataset with its manifest.
    Dataset(DatasetArgs),
    /// Train the CNN classifier.
    TrainCnn(TrainCnnArgs),
    /// Evaluate a CNN checkpoint on the test split.
    EvalCnn(EvalArgs),
    /// Train and calibrate the adversarial autoencoder.
    TrainAae(TrainAaeArgs),
    /// Evaluate an autoencoder checkpoint on the test split.
    EvalAae(EvalArgs),
    /// Finite-difference check of every differentiable tensor operation.
    Gradcheck(GradcheckArgs),
    /// Run every stage from one config file.
    All(AllArgs),
}

#[derive(Args, Debug)]
struct SynthArgs {
    #[arg(long)]
    subjects: Option<u32>,
    #[arg(long)]
    trials_per_hand: Option<u32>,
    #[arg(long)]
    seed: Option<u64>,
    /// Pipeline config; only its `synth` section is used.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct PreprocessArgs {
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Also write the filter coefficients as CSV.
    #[arg(long)]
    dump_filters: Option<PathBuf>,
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct DatasetArgs {
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct TrainCnnArgs {
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Checkpoint to write.
    #[arg(long)]
    out: PathBuf,
    /// Training report (JSON); the confusion matrix is written beside it.
    #[arg(long)]
    report: Option<PathBuf>,
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct EvalArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct TrainAaeArgs {
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    normal_class: Option<u8>,
    #[arg(long)]
    labeled_fraction: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: PathBuf,
    /// Per-epoch losses and calibration summary (JSON).
    #[arg(long)]
    history: Option<PathBuf>,
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct GradcheckArgs {
    /// Random cases per operation.
    #[arg(long, default_value_t = 20)]
    seeds: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args, Debug)]
struct AllArgs {
    /// Pipeline config; defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

pub fn version_string() -> String {
    format!(
        "{} (formats: {}, PGM P5, {})",
        env!("CARGO_PKG_VERSION"),
        String::from_utf8_lossy(checkpoint::MAGIC),
        MANIFEST_FORMAT
    )
}

/// Parses `args` (including the program name), runs the command and returns the
/// process exit status.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let command = Cli::command().version(version_string());
    let cli = match command
        .try_get_matches_from(args)
        .and_then(|m| Cli::from_arg_matches(&m))
    {
        Ok(cli) => cli,
        Err(e) => return clap_failure(e),
    };
    let mut outputs = Outputs::default();
    let result = par::with_threads(cli.threads, || dispatch(cli.command, &mut outputs));
    match result {
        Ok(()) => 0,
        Err(e) => {
            outputs.remove_all();
            eprintln!("{}", e.line());
            1
        }
    }
}

fn clap_failure(e: clap::Error) -> i32 {
    let (code, message) = match e.kind() {
        ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => {
            let _ = e.print();
            return 0;
        }
        ErrorKind::UnknownArgument => ("badflag", e.to_string()),
        ErrorKind::MissingSubcommand | ErrorKind::DisplayHelpOnMissingArgumentOrSubcommand => {
            ("usage", "a subcommand is required (see --help)".to_string())
        }
        _ => ("usage", e.to_string()),
    };
    let first = message
        .lines()
        .next()
        .unwrap_or("")
        .trim_start_matches("error: ");
    eprintln!("{}", StageError::new("cli", code, first).line());
    1
}

/// Paths created by the running command, removed again if it fails.
#[derive(Default)]
struct Outputs {
    created: Vec<PathBuf>,
}

impl Outputs {
    /// Creates `dir` (and missing parents), remembering the outermost new directory.
    fn dir(&mut self, dir: &Path, stage: &'static str) -> StageResult<()> {
        let mut first_missing = None;
        let mut probe = Some(dir);
        while let Some(p) = probe {
            if p.as_os_str().is_empty() || p.exists() {
                break;
            }
            first_missing = Some(p.to_path_buf());
            probe = p.parent();
        }
        fs::create_dir_all(dir).stage(stage)?;
        if let Some(p) = first_missing {
            self.created.push(p);
        }
        Ok(())
    }

    /// Registers a file about to be written, creating its parent directory.
    fn file(&mut self, path: &Path, stage: &'static str) -> StageResult<()> {
        if let Some(parent) = path.parent() {
            self.dir(parent, stage)?;
        }
        self.created.push(path.to_path_buf());
        Ok(())
    }

    /// Registers a report path and the two confusion files written beside it.
    fn report(&mut self, path: &Path, stage: &'static str) -> StageResult<()> {
        self.file(path, stage)?;
        let stem = path
            .file_stem()
            .and_then(|s| s.to_str())
            .unwrap_or("report");
        for ext in ["confusion.csv", "confusion.pgm"] {
            self.created
                .push(path.with_file_name(format!("{stem}.{ext}")));
        }
        Ok(())
    }

    fn remove_all(&mut self) {
        for p in self.created.drain(..).rev() {
            if p.is_dir() {
                let _ = fs::remove_dir_all(&p);
            } else {
                let _ = fs::remove_file(&p);
            }
        }
    }
}

fn dispatch(command: Command, out: &mut Outputs) -> StageResult<()> {
    match command {
        Command::Synth(a) => synth(a, out),
        Command::Preprocess(a) => preprocess(a, out),
        Command::Dataset(a) => dataset(a, out),
        Command::TrainCnn(a) => train_cnn_cmd(a, out),
        Command::EvalCnn(a) => eval_cnn(a, out),
        Command::TrainAae(a) => train_aae_cmd(a, out),
        Command::EvalAae(a) => eval_aae(a, out),
        Command::Gradcheck(a) => gradcheck_cmd(a),
        Command::All(a) => all(a, out),
    }
}

fn load_config(path: Option<&Path>, stage: &'static str) -> StageResult<PipelineConfig> {
    match path {
        Some(p) => PipelineConfig::load(p).stage(stage),
        None => Ok(PipelineConfig::default()),
    }
}

fn synth(a: SynthArgs, out: &mut Outputs) -> StageResult<()> {
    const STAGE: &str = "synth";
    let mut cfg = load_config(a.config.as_deref(), STAGE)?.synth;
    cfg.n_subjects = a.subjects.unwrap_or(cfg.n_subjects);
    cfg.trials_per_hand = a.trials_per_hand.unwrap_or(cfg.trials_per_hand);
    cfg.seed = a.seed.unwrap_or(cfg.seed);
    let trials = generate_cohort(&cfg).stage(STAGE)?;
    out.dir(&a.out, STAGE)?;
    let montage = Montage::builtin32();
    for t in &trials {
        out.file(
            &a.out.join(trial_io::file_name(t.subject_id, t.trial_id)),
            STAGE,
        )?;
    }
    par::map_slice(&trials, |t| trial_io::save_trial(&a.out, t, &montage))
        .into_iter()
        .collect::<neurotopo::Result<Vec<_>>>()
        .stage(STAGE)?;
    println!(
        "synth: wrote {} trials to {}",
        trials.len(),
        a.out.display()
    );
    Ok(())
}

fn trial_files(dir: &Path, stage: &'static str) -> StageResult<Vec<PathBuf>> {
    let files = trial_io::list_trial_files(dir).stage(stage)?;
    if files.is_empty() {
        return Err(StageError::new(
            stage,
            "domain",
            format!("no trial files in {}", dir.display()),
        ));
    }
    Ok(files)
}

fn preprocess(a: PreprocessArgs, out: &mut Outputs) -> StageResult<()> {
    const STAGE: &str = "preprocess";
    let cfg = load_config(a.config.as_deref(), STAGE)?.dsp;
    let files = trial_files(&a.input, STAGE)?;
    let pre = Preprocessor::new(&cfg, SAMPLE_RATE as f64).stage(STAGE)?;
    if let Some(path) = &a.dump_filters {
        out.file(path, STAGE)?;
        fs::write(path, pre.coefficients_csv()).stage(STAGE)?;
    }
    out.dir(&a.out, STAGE)?;
    let montage = Montage::builtin32();
    for f in &files {
        out.file(
            &a.out.join(f.file_name().expect("listed files have names")),
            STAGE,
        )?;
    }
    par::map_slice(&files, |f| -> neurotopo::Result<()> {
        let trial = trial_io::load_trial(f, &montage)?;
        let filtered = if trial.fs == SAMPLE_RATE {
            pre.trial(&trial)?
        } else {
            Preprocessor::new(&cfg, trial.fs as f64)?.trial(&trial)?
        };
        trial_io::save_trial(&a.out, &filtered, &montage)?;
        Ok(())
    })
    .into_iter()
    .collect::<neurotopo::Result<Vec<_>>>()
    .stage(STAGE)?;
    println!(
        "preprocess: filtered {} trials into {}",
        files.len(),
        a.out.display()
    );
    Ok(())
}

fn dataset(a: DatasetArgs, out: &mut Outputs) -> StageResult<()> {
    const STAGE: &str = "dataset";
    let cfg = load_config(a.config.as_deref(), STAGE)?;
    let seed = a.seed.unwrap_or(cfg.global_seed);
    let montage = Montage::builtin32();
    let files = trial_files(&a.input, STAGE)?;
    let trials = par::map_slice(&files, |f| trial_io::load_trial(f, &montage))
        .into_iter()
        .collect::<neurotopo::Result<Vec<_>>>()
        .stage(STAGE)?;
    out.dir(&a.out, STAGE)?;
    let full_dir = a.out.join("full");
    if cfg.topomap.write_full_images {
        out.dir(&full_dir, STAGE)?;
    }
    let write_full =
        |meta: &ImageMeta, img: &GrayImage| img.save_pgm(&full_dir.join(meta.file_name()));
    let sink: Option<FullImageSink> = cfg.topomap.write_full_images.then_some(&write_full);
    let data = build_dataset(
        &trials,
        &montage,
        &cfg.topomap,
        &cfg.dsp.band_power,
        seed,
        sink,
    )
    .stage(STAGE)?;
    out.dir(&a.out.join("images"), STAGE)?;
    for e in &data.manifest.entries {
        out.file(&a.out.join(&e.path), STAGE)?;
    }
    out.file(
        &a.out.join(neurotopo::topomap::dataset::MANIFEST_FILE),
        STAGE,
    )?;
    out.file(&a.out.join(neurotopo::topomap::dataset::META_FILE), STAGE)?;
    let path = data.write(&a.out).stage(STAGE)?;
    println!(
        "dataset: {} images ({} train, {} test), manifest {}",
        data.images.len(),
        data.manifest.count(Split::Train),
        data.manifest.count(Split::Test),
        path.display()
    );
    Ok(())
}

fn load_split(manifest: &Path, split: Split, stage: &'static str) -> StageResult<ImageSet> {
    let m = DatasetManifest::load(manifest).stage(stage)?;
    ImageSet::load(manifest, &m, split).stage(stage)
}

fn train_cnn_cmd(a: TrainCnnArgs, out: &mut Outputs) -> StageResult<()> {
    const STAGE: &str = "train-cnn";
    let mut cfg = load_config(a.config.as_deref(), STAGE)?.cnn;
    cfg.epochs = a.epochs.unwrap_or(cfg.epochs);
    cfg.seed = a.seed.unwrap_or(cfg.seed);
    let train = load_split(&a.manifest, Split::Train, STAGE)?;
    let test = load_split(&a.manifest, Split::Test, STAGE)?;
    let mut model = Cnn::<f32>::build(&cfg).stage(STAGE)?;
    let report = train_cnn(&mut model, &train, &test, &cfg).stage(STAGE)?;
    out.file(&a.out, STAGE)?;
    model.save(&a.out).stage(STAGE)?;
    if let Some(path) = &a.report {
        out.report(path, STAGE)?;
        emit_report(&report, path).stage(STAGE)?;
    }
    println!(
        "train-cnn: {} epochs, final test accuracy {:.4}, wall time {:.1} s",
        cfg.epochs,
        report.final_test_accuracy(),
        report.wall_time.as_secs_f64()
    );
    Ok(())
}

fn eval_cnn(a: EvalArgs, out: &mut Outputs) -> StageResult<()> {
    const STAGE: &str = "eval-cnn";
    let model = Cnn::load(&a.model).stage(STAGE)?;
    let test = load_split(&a.manifest, Split::Test, STAGE)?;
    let report = EvalReport::new(&model, &test).stage(STAGE)?;
    if let Some(path) = &a.report {
        out.report(path, STAGE)?;
        emit_report(&report, path).stage(STAGE)?;
    }
    println!(
        "eval-cnn: {} test images, accuracy {:.4}",
        report.images, report.accuracy
    );
    Ok(())
}

fn train_aae_cmd(a: TrainAaeArgs, out: &mut Outputs) -> StageResult<()> {
    const STAGE: &str = "train-aae";
    let mut cfg = load_config(a.config.as_deref(), STAGE)?.aae;
    cfg.epochs = a.epochs.unwrap_or(cfg.epochs);
    cfg.normal_class = a.normal_class.unwrap_or(cfg.normal_class);
    cfg.labeled_fraction = a.labeled_fraction.unwrap_or(cfg.labeled_fraction);
    cfg.seed = a.seed.unwrap_or(cfg.seed);
    let train = load_split(&a.manifest, Split::Train, STAGE)?;
    let start = Instant::now();
    let (model, history) = train_aae(&train, &cfg).stage(STAGE)?;
    out.file(&a.out, STAGE)?;
    model.save(&a.out).stage(STAGE)?;
    if let Some(path) = &a.history {
        out.file(path, STAGE)?;
        let json = serde_json::to_string_pretty(&history)
            .map_err(|e| StageError::new(STAGE, "format", e.to_string()))?;
        fs::write(path, json + "\n").stage(STAGE)?;
    }
    println!(
        "train-aae: {} epochs on {} normal images, threshold {:.6}, wall time {:.1} s",
        cfg.epochs,
        history.normal_images,
        history.threshold,
        start.elapsed().as_secs_f64()
    );
    Ok(())
}

fn eval_aae(a: EvalArgs, out: &mut Outputs) -> StageResult<()> {
    const STAGE: &str = "eval-aae";
    let model = AaeModel::load(&a.model).stage(STAGE)?;
    let test = load_split(&a.manifest, Split::Test, STAGE)?;
    let report = evaluate_aae(&model, &test).stage(STAGE)?;
    if let Some(path) = &a.report {
        out.report(path, STAGE)?;
        emit_report(&report, path).stage(STAGE)?;
    }
    let auc = report
        .auc
        .map_or_else(|| "undefined".to_string(), |a| format!("{a:.4}"));
    println!(
        "eval-aae: {} test images, accuracy {:.4}, balanced accuracy {:.4}, AUC {auc}",
        report.test_images, report.accuracy, report.balanced_accuracy
    );
    Ok(())
}

fn gradcheck_cmd(a: GradcheckArgs) -> StageResult<()> {
    const STAGE: &str = "gradcheck";
    if a.seeds == 0 {
        return Err(StageError::new(
            STAGE,
            "domain",
            "--seeds must be at least 1",
        ));
    }
    let reports = gradcheck::run_suite(a.seed, a.seeds).stage(STAGE)?;
    let mut stdout = std::io::stdout().lock();
    let _ = writeln!(
        stdout,
        "{:<18} {:>6} {:>12}  status",
        "op", "cases", "max_rel_err"
    );
    for r in &reports {
        let status = if r.passed() { "ok" } else { "FAIL" };
        let _ = writeln!(
            stdout,
            "{:<18} {:>6} {:>12.3e}  {status}",
            r.op, r.cases, r.max_rel_err
        );
    }
    let failed: Vec<&str> = reports
        .iter()
        .filter(|r| !r.passed())
        .map(|r| r.op)
        .collect();
    if failed.is_empty() {
        Ok(())
    } else {
        Err(StageError::new(
            STAGE,
            "tolerance",
            format!(
                "relative error at or above {:e} for {}",
                gradcheck::TOLERANCE,
                failed.join(", ")
            ),
        ))
    }
}

/// Layout of an `all` run below its `--out` directory.
pub mod layout {
    pub const CONFIG: &str = "config.json";
    pub const TRIALS: &str = "trials";
    pub const FILTERED: &str = "filtered";
    pub const FILTERS_CSV: &str = "filters.csv";
    pub const DATASET: &str = "dataset";
    pub const CNN_MODEL: &str = "cnn/model.ntw";
    pub const CNN_TRAIN_REPORT: &str = "cnn/train_report.json";
    pub const CNN_EVAL_REPORT: &str = "cnn/eval_report.json";
    pub const AAE_MODEL: &str = "aae/model.ntw";
    pub const AAE_HISTORY: &str = "aae/history.json";
    pub const AAE_EVAL_REPORT: &str = "aae/eval_report.json";
}

fn all(a: AllArgs, out: &mut Outputs) -> StageResult<()> {
    const STAGE: &str = "all";
    let cfg = load_config(a.config.as_deref(), STAGE)?;
    let root = &a.out;
    out.dir(root, STAGE)?;
    // Each stage reads the resolved config back, exactly as a standalone run would.
    let config_path = root.join(layout::CONFIG);
    out.file(&config_path, STAGE)?;
    fs::write(&config_path, cfg.to_json()).stage(STAGE)?;
    let config = Some(config_path);
    let manifest = root
        .join(layout::DATASET)
        .join(neurotopo::topomap::dataset::MANIFEST_FILE);

    synth(
        SynthArgs {
            subjects: None,
            trials_per_hand: None,
            seed: None,
            config: config.clone(),
            out: root.join(layout::TRIALS),
        },
        out,
    )?;
    preprocess(
        PreprocessArgs {
            input: root.join(layout::TRIALS),
            out: root.join(layout::FILTERED),
            dump_filters: Some(root.join(layout::FILTERS_CSV)),
            config: config.clone(),
        },
        out,
    )?;
    dataset(
        DatasetArgs {
            input: root.join(layout::FILTERED),
            out: root.join(layout::DATASET),
            seed: None,
            config: config.clone(),
        },
        out,
    )?;
    train_cnn_cmd(
        TrainCnnArgs {
            manifest: manifest.clone(),
            epochs: None,
            seed: None,
            out: root.join(layout::CNN_MODEL),
            report: Some(root.join(layout::CNN_TRAIN_REPORT)),
            config: config.clone(),
        },
        out,
    )?;
    eval_cnn(
        EvalArgs {
            model: root.join(layout::CNN_MODEL),
            manifest: manifest.clone(),
            report: Some(root.join(layout::CNN_EVAL_REPORT)),
        },
        out,
    )?;
    train_aae_cmd(
        TrainAaeArgs {
            manifest: manifest.clone(),
            epochs: None,
            normal_class: None,
            labeled_fraction: None,
            seed: None,
            out: root.join(layout::AAE_MODEL),
            history: Some(root.join(layout::AAE_HISTORY)),
            config,
        },
        out,
    )?;
    eval_aae(
        EvalArgs {
            model: root.join(layout::AAE_MODEL),
            manifest,
            report: Some(root.join(layout::AAE_EVAL_REPORT)),
        },
        out,
    )?;
    println!("all: pipeline complete under {}", root.display());
    Ok(())
}
