//! Command-line front end: `prep`, `train`, `eval`, `sweep` and `verify`.
//!
//! Exit codes: 0 success, 1 usage error, 2 data error, 3 numerical failure
//! (including a failed bound check in `verify`).

use std::ffi::OsString;
use std::fs::{self, File};
use std::io::{self, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::data::{infogain_select, tfidf_transform, IndexMap, LabeledCorpus, TripletSampler};
use crate::diagonal::UpdateMode;
use crate::error::{Error, Result};
use crate::eval::{evaluate, EvalReport};
use crate::learner::{Algo, Learner, LearnerParams, ModelFile};
use crate::linalg::DenseMatrix;
use crate::theory::BoundReport;
use crate::trace::{RunTrace, TraceWriter};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;
pub const EXIT_NUMERICAL: i32 = 3;

#[derive(Debug, Parser)]
#[command(name = "aroma", version, about = "Online bilinear similarity learning")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Weight and select features of a corpus.
    Prep(PrepArgs),
    /// Train a model on triplets sampled from a corpus.
    Train(TrainArgs),
    /// Report precision@k and mAP of a model on a corpus.
    Eval(EvalArgs),
    /// Train and evaluate once per regularizer value.
    Sweep(SweepArgs),
    /// Check mistake bounds against a training trace.
    Verify(VerifyArgs),
}

#[derive(Debug, Args)]
pub struct PrepArgs {
    #[arg(long = "train", value_name = "PATH")]
    pub input: PathBuf,
    #[arg(long, value_name = "PATH")]
    pub out: PathBuf,
    /// Apply tf-idf weighting with ℓ2 normalization.
    #[arg(long)]
    pub tfidf: bool,
    /// Keep the k features with the highest information gain.
    #[arg(long, value_name = "K")]
    pub infogain: Option<usize>,
    /// Reuse an index map written by an earlier prep instead of selecting.
    #[arg(long, value_name = "PATH", conflicts_with = "infogain")]
    pub apply_map: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct LearnerArgs {
    #[arg(long, default_value = "f-aroma")]
    pub algo: String,
    #[arg(long, default_value_t = 1.0)]
    pub r: f64,
    #[arg(long, default_value_t = 1000)]
    pub iters: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long = "update-mode", default_value = "margin")]
    pub update_mode: String,
    /// Aggressiveness cap of the passive-aggressive baseline.
    #[arg(long = "pa-c", default_value_t = 0.1)]
    pub pa_c: f64,
    #[arg(long = "train", value_name = "PATH")]
    pub train: PathBuf,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub learner: LearnerArgs,
    #[arg(long = "model-out", value_name = "PATH")]
    pub model_out: Option<PathBuf>,
    #[arg(long = "trace-out", value_name = "PATH")]
    pub trace_out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long, value_name = "PATH")]
    pub model: PathBuf,
    #[arg(long = "eval", value_name = "PATH")]
    pub eval: PathBuf,
    /// Comma-separated cutoffs; empty for an mAP-only report.
    #[arg(long, default_value = "1,10")]
    pub k: String,
    #[arg(long, value_name = "PATH")]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[command(flatten)]
    pub learner: LearnerArgs,
    #[arg(long = "eval", value_name = "PATH")]
    pub eval: PathBuf,
    #[arg(long, default_value = "1,10")]
    pub k: String,
    #[arg(long = "sweep-r", value_name = "LIST")]
    pub sweep_r: String,
    #[arg(long, value_name = "PATH")]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct VerifyArgs {
    #[arg(long, value_name = "PATH")]
    pub trace: PathBuf,
    /// `zero`, `identity`, or a path to a JSON matrix (nested rows).
    #[arg(long, default_value = "zero")]
    pub comparator: String,
    #[arg(long, value_name = "PATH")]
    pub out: Option<PathBuf>,
}

/// Why a command stopped.
#[derive(Debug)]
pub enum Failure {
    Usage(String),
    Run(Error),
    /// The command ran but a verified bound does not hold.
    CheckFailed,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Run(e)
    }
}

impl Failure {
    pub fn exit_code(&self) -> i32 {
        match self {
            Failure::Usage(_) => EXIT_USAGE,
            Failure::Run(e) if e.is_numerical() => EXIT_NUMERICAL,
            Failure::Run(_) => EXIT_DATA,
            Failure::CheckFailed => EXIT_NUMERICAL,
        }
    }
}

type CmdResult<T = ()> = std::result::Result<T, Failure>;

/// A validated training configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub algo: Algo,
    pub params: LearnerParams,
    pub iterations: usize,
    pub seed: u64,
}

impl RunConfig {
    pub fn new(algo: Algo, r: f64, iterations: usize, seed: u64) -> Self {
        RunConfig { algo, params: LearnerParams { r, ..LearnerParams::default() }, iterations, seed }
    }

    pub fn validate(&self) -> std::result::Result<(), String> {
        let p = &self.params;
        if !(p.r.is_finite() && p.r > 0.0) {
            return Err(format!("--r must be a positive number, got {}", p.r));
        }
        if self.algo == Algo::Pa && !(p.pa_c.is_finite() && p.pa_c > 0.0) {
            return Err(format!("--pa-c must be a positive number, got {}", p.pa_c));
        }
        if p.update_mode == UpdateMode::Mistake && self.algo != Algo::DAroma {
            return Err("--update-mode mistake applies to d-aroma only".into());
        }
        Ok(())
    }

    fn from_args(a: &LearnerArgs) -> CmdResult<Self> {
        let algo: Algo = a.algo.parse().map_err(|e: Error| Failure::Usage(e.to_string()))?;
        let update_mode: UpdateMode = a.update_mode.parse().map_err(|e: Error| Failure::Usage(e.to_string()))?;
        let cfg = RunConfig {
            algo,
            params: LearnerParams { r: a.r, update_mode, pa_c: a.pa_c },
            iterations: a.iters,
            seed: a.seed,
        };
        cfg.validate().map_err(Failure::Usage)?;
        Ok(cfg)
    }
}

/// Trains a fresh learner on triplets sampled from `corpus`, streaming each
/// round to `trace` when given.
pub fn train_on(cfg: &RunConfig, corpus: &LabeledCorpus, trace: Option<&mut dyn Write>) -> Result<Learner> {
    let d = corpus.dim();
    let mut learner = Learner::new(cfg.algo, d, d, cfg.params)?;
    let mut writer = match trace {
        Some(out) => Some(TraceWriter::new(out, &learner.trace_header(Some(cfg.seed)))?),
        None => None,
    };
    if cfg.iterations > 0 {
        let mut sampler = TripletSampler::new(corpus, cfg.seed)?;
        for round in 1..=cfg.iterations {
            let t = sampler.sample().map_err(|e| e.at_round(round))?;
            let record = learner.step(&t).map_err(|e| e.at_round(round))?;
            if let Some(w) = writer.as_mut() {
                w.push(&record)?;
            }
        }
    }
    if let Some(w) = writer {
        w.finish(&learner.final_state())?;
    }
    Ok(learner)
}

/// Evaluates a model file's mean matrix on `corpus`.
pub fn eval_model(model: &ModelFile, corpus: &LabeledCorpus, k_values: &[usize]) -> Result<EvalReport> {
    let (m, n) = model.shape();
    if m != corpus.dim() {
        return Err(Error::dims("model rows vs corpus dim", m, corpus.dim()));
    }
    if n != corpus.dim() {
        return Err(Error::dims("model columns vs corpus dim", n, corpus.dim()));
    }
    evaluate(model.weights(), corpus, k_values)
}

fn parse_list<T: std::str::FromStr>(flag: &str, s: &str) -> CmdResult<Vec<T>> {
    s.split(',')
        .map(str::trim)
        .filter(|x| !x.is_empty())
        .map(|x| x.parse::<T>().map_err(|_| Failure::Usage(format!("{flag}: cannot parse '{x}'"))))
        .collect()
}

fn read_corpus(path: &Path) -> Result<LabeledCorpus> {
    let file = File::open(path).map_err(|e| io_context(e, path))?;
    LabeledCorpus::parse(BufReader::new(file))
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| io_context(e, path))
}

fn io_context(e: io::Error, path: &Path) -> Error {
    Error::Io(io::Error::new(e.kind(), format!("{}: {e}", path.display())))
}

fn write_output(path: Option<&Path>, text: &str, stdout: &mut dyn Write) -> Result<()> {
    match path {
        Some(p) => fs::write(p, text).map_err(|e| io_context(e, p)),
        None => Ok(stdout.write_all(text.as_bytes())?),
    }
}

pub fn cmd_prep(args: &PrepArgs) -> CmdResult {
    if args.infogain == Some(0) {
        return Err(Failure::Usage("--infogain must be at least 1".into()));
    }
    let corpus = read_corpus(&args.input)?;
    let (selected, map) = match (&args.infogain, &args.apply_map) {
        (Some(k), _) => infogain_select(&corpus, *k)?,
        (None, Some(path)) => {
            let map = IndexMap::parse_str(&read_text(path)?)?;
            (map.apply(&corpus)?, map)
        }
        (None, None) => (corpus.clone(), IndexMap::identity(corpus.dim())),
    };
    let out = if args.tfidf { tfidf_transform(&selected) } else { selected };
    fs::write(&args.out, out.to_text()).map_err(|e| io_context(e, &args.out))?;
    let map_path = map_path(&args.out);
    fs::write(&map_path, map.to_text()).map_err(|e| io_context(e, &map_path))?;
    Ok(())
}

/// Sidecar index-map path written next to a prepared corpus.
pub fn map_path(out: &Path) -> PathBuf {
    let mut s = out.as_os_str().to_owned();
    s.push(".map");
    PathBuf::from(s)
}

pub fn cmd_train(args: &TrainArgs) -> CmdResult {
    let cfg = RunConfig::from_args(&args.learner)?;
    let corpus = read_corpus(&args.learner.train)?;
    let learner = match &args.trace_out {
        Some(path) => {
            let file = File::create(path).map_err(|e| io_context(e, path))?;
            let mut out = BufWriter::new(file);
            let learner = train_on(&cfg, &corpus, Some(&mut out))?;
            out.flush().map_err(Error::from)?;
            learner
        }
        None => train_on(&cfg, &corpus, None)?,
    };
    if let Some(path) = &args.model_out {
        fs::write(path, learner.to_model_file().to_json()?).map_err(|e| io_context(e, path))?;
    }
    Ok(())
}

pub fn cmd_eval(args: &EvalArgs, stdout: &mut dyn Write) -> CmdResult {
    let k_values: Vec<usize> = parse_list("--k", &args.k)?;
    let model = ModelFile::from_json(&read_text(&args.model)?)?;
    let corpus = read_corpus(&args.eval)?;
    let report = eval_model(&model, &corpus, &k_values)?;
    write_output(args.out.as_deref(), &report.to_csv(), stdout)?;
    Ok(())
}

pub const SWEEP_HEADER: &str = "r,k,precision,mAP";

/// One row per (r, k). Every r value uses the template's seed, so repeated
/// values replay identically. Failed runs are reported on `stderr` and
/// skipped; the first failure is returned after all runs finish.
pub fn cmd_sweep(args: &SweepArgs, stdout: &mut dyn Write, stderr: &mut dyn Write) -> CmdResult {
    let template = RunConfig::from_args(&args.learner)?;
    let r_values: Vec<f64> = parse_list("--sweep-r", &args.sweep_r)?;
    if r_values.is_empty() {
        return Err(Failure::Usage("--sweep-r needs at least one value".into()));
    }
    let k_values: Vec<usize> = parse_list("--k", &args.k)?;
    for r in &r_values {
        let mut cfg = template.clone();
        cfg.params.r = *r;
        cfg.validate().map_err(Failure::Usage)?;
    }
    let train = read_corpus(&args.learner.train)?;
    let eval = read_corpus(&args.eval)?;

    let mut csv = format!("{SWEEP_HEADER}\n");
    let mut first_failure = None;
    let mut failures = 0;
    for &r in &r_values {
        let mut cfg = template.clone();
        cfg.params.r = r;
        let outcome = train_on(&cfg, &train, None).and_then(|l| eval_model(&l.to_model_file(), &eval, &k_values));
        match outcome {
            Ok(report) => {
                for (k, p) in report.k_values.iter().zip(&report.precision_at_k) {
                    csv.push_str(&format!("{r},{k},{p:.6},{:.6}\n", report.map));
                }
            }
            Err(e) => {
                failures += 1;
                let _ = writeln!(stderr, "r = {r}: {e}");
                first_failure.get_or_insert(e);
            }
        }
    }
    write_output(args.out.as_deref(), &csv, stdout)?;
    match first_failure {
        None => Ok(()),
        Some(e) => {
            let _ = writeln!(stderr, "{failures} of {} runs failed", r_values.len());
            Err(Failure::Run(e))
        }
    }
}

/// Resolves a comparator spec against the trace's dimensions.
pub fn comparator_matrix(spec: &str, m: usize, n: usize) -> Result<DenseMatrix> {
    match spec {
        "zero" => Ok(DenseMatrix::zeros(m, n)),
        "identity" => Ok(DenseMatrix::eye(m, n)),
        path => {
            let v: DenseMatrix = serde_json::from_str(&read_text(Path::new(path))?)?;
            if v.shape() != (m, n) {
                return Err(Error::dims("comparator", m * n, v.rows() * v.cols()));
            }
            Ok(v)
        }
    }
}

pub fn cmd_verify(args: &VerifyArgs, stdout: &mut dyn Write) -> CmdResult {
    let file = File::open(&args.trace).map_err(|e| io_context(e, &args.trace))?;
    let trace = RunTrace::read_from(BufReader::new(file))?;
    let v = comparator_matrix(&args.comparator, trace.header.m, trace.header.n)?;
    let run_id = args.trace.file_stem().map_or_else(|| "run".to_string(), |s| s.to_string_lossy().into_owned());
    let report = BoundReport::evaluate(&run_id, &args.comparator, &v, &trace).map_err(|e| match e {
        Error::InvalidArgument(msg) => Failure::Usage(msg),
        other => Failure::Run(other),
    })?;
    let text = format!("{}\n{}\n", BoundReport::CSV_HEADER, report.to_csv_row());
    write_output(args.out.as_deref(), &text, stdout)?;
    if report.pass {
        Ok(())
    } else {
        Err(Failure::CheckFailed)
    }
}

pub fn dispatch(cli: &Cli, stdout: &mut dyn Write, stderr: &mut dyn Write) -> CmdResult {
    match &cli.command {
        Command::Prep(a) => cmd_prep(a),
        Command::Train(a) => cmd_train(a),
        Command::Eval(a) => cmd_eval(a, stdout),
        Command::Sweep(a) => cmd_sweep(a, stdout, stderr),
        Command::Verify(a) => cmd_verify(a, stdout),
    }
}

/// Parses `args` (including the program name), runs the command and returns
/// the process exit code. Diagnostics go to `stderr`.
pub fn run<I, T>(args: I, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let rendered = e.render().to_string();
            let sink: &mut dyn Write = if e.use_stderr() { stderr } else { stdout };
            let _ = sink.write_all(rendered.as_bytes());
            return code;
        }
    };
    match dispatch(&cli, stdout, stderr) {
        Ok(()) => EXIT_OK,
        Err(failure) => {
            let _ = match &failure {
                Failure::Usage(msg) => writeln!(stderr, "error: {msg}"),
                Failure::Run(e) => writeln!(stderr, "error: {e}"),
                Failure::CheckFailed => writeln!(stderr, "error: bound check failed"),
            };
            failure.exit_code()
        }
    }
}
