//! Command-line front end. Every subcommand writes its artifacts atomically
//! into `--out` together with a `manifest.json` that records the resolved
//! configuration and the digests of all inputs and outputs.

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::baselines::{NotearsConfig, RidgeFit};
use crate::dag::{binarize, is_dag};
use crate::error::{NotmadError, Result};
use crate::eval::{
    archetype_recovery, evaluate_methods, score_networks, ClusteredMethod, EvalConfig, EvalReport, FixedMethod,
    LionessMethod, Method, OracleClusteredMethod, PopulationMethod, Postprocess,
};
use crate::io::{load_contexts, load_dataset, read_json, save_dataset, write_json, write_network, write_training_log, RunManifest};
use crate::mixture::GraphGenerator;
use crate::notmad::{predict_network, train, TrainConfig};
use crate::selfcheck::run_checks;
use crate::synth::{generate, SynthSpec, TruthRecord};

/// Overrides the default worker count when `--threads` is absent.
pub const THREADS_ENV: &str = "NOTMAD_THREADS";

#[derive(Debug, Parser)]
#[command(name = "notmad", version, about = "Context-specific Bayesian networks as mixtures of archetypal DAGs")]
pub struct Cli {
    /// Worker threads; defaults to $NOTMAD_THREADS, else all cores.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Draw a synthetic experiment: train.csv, test.csv and truth.json.
    Generate(GenerateArgs),
    /// Fit the archetype-mixture model: model.json and training_log.csv.
    Train(TrainArgs),
    /// Write one network file per context row.
    Predict(PredictArgs),
    /// Score trained models on a test set: report.json and report.csv.
    Evaluate(EvaluateArgs),
    /// Run the population, clustered, oracle-clustered and LIONESS baselines.
    Baselines(BaselinesArgs),
    /// Run the built-in invariant checks.
    Check(CheckArgs),
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    #[arg(long)]
    pub spec: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub data: PathBuf,
    /// JSON training config; omitted fields take their defaults.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    #[arg(long)]
    pub model: PathBuf,
    /// CSV with c_0..c_{m-1} columns; other columns are ignored.
    #[arg(long)]
    pub contexts: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Project every network onto the DAG set.
    #[arg(long)]
    pub project: bool,
    /// Drop edges with |w| at or below this; defaults to the model's eval_threshold.
    #[arg(long)]
    pub threshold: Option<f64>,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[arg(long = "model", required = true)]
    pub models: Vec<PathBuf>,
    #[arg(long)]
    pub test: PathBuf,
    #[arg(long)]
    pub truth: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 0.05)]
    pub threshold: f64,
    /// Score thresholded networks without projecting them.
    #[arg(long)]
    pub no_project: bool,
}

#[derive(Debug, Args)]
pub struct BaselinesArgs {
    #[arg(long)]
    pub train: PathBuf,
    #[arg(long)]
    pub test: PathBuf,
    #[arg(long)]
    pub truth: Option<PathBuf>,
    /// JSON baselines config; omitted fields take their defaults.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct CheckArgs {
    /// Also write the results as JSON into this directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BaselinesConfig {
    pub notears: NotearsConfig,
    pub ridge: RidgeFit,
    /// Defaults to the number of distinct training groups, else 3.
    pub n_clusters: Option<usize>,
    pub eval: EvalConfig,
}

fn load_or_default<T: Default + serde::de::DeserializeOwned>(path: Option<&Path>) -> Result<T> {
    match path {
        Some(p) => read_json(p),
        None => Ok(T::default()),
    }
}

fn to_value<T: Serialize>(v: &T) -> Result<serde_json::Value> {
    Ok(serde_json::to_value(v)?)
}

fn run_generate(args: &GenerateArgs) -> Result<()> {
    let spec: SynthSpec = read_json(&args.spec)?;
    let truth = generate(&spec)?;
    let train_path = args.out.join("train.csv");
    let test_path = args.out.join("test.csv");
    let truth_path = args.out.join("truth.json");
    save_dataset(&train_path, &truth.train)?;
    save_dataset(&test_path, &truth.test)?;
    truth.save(&truth_path)?;
    let mut manifest = RunManifest::new("generate", Some(spec.seed), to_value(&spec)?);
    manifest.input("spec", &args.spec)?;
    manifest.output("train", &train_path)?;
    manifest.output("test", &test_path)?;
    manifest.output("truth", &truth_path)?;
    manifest.write(&args.out)?;
    Ok(())
}

fn run_train(args: &TrainArgs) -> Result<()> {
    let config: TrainConfig = load_or_default(args.config.as_deref())?;
    let data = load_dataset(&args.data)?;
    let model = train(&data, &config)?;
    let model_path = args.out.join("model.json");
    let log_path = args.out.join("training_log.csv");
    model.save(&model_path)?;
    write_training_log(&log_path, &model.log)?;
    let mut manifest = RunManifest::new("train", Some(config.seed), to_value(&config)?);
    manifest.input("data", &args.data)?;
    if let Some(c) = &args.config {
        manifest.input("config", c)?;
    }
    manifest.output("model", &model_path)?;
    manifest.output("training_log", &log_path)?;
    manifest.write(&args.out)?;
    Ok(())
}

fn run_predict(args: &PredictArgs) -> Result<()> {
    let (gen, config) = GraphGenerator::load(&args.model)?;
    let threshold = args.threshold.unwrap_or_else(|| config.unwrap_or_default().eval_threshold);
    let contexts = load_contexts(&args.contexts)?;
    let resolved = json!({ "project": args.project, "threshold": threshold });
    let mut manifest = RunManifest::new("predict", None, resolved);
    manifest.input("model", &args.model)?;
    manifest.input("contexts", &args.contexts)?;
    for (i, c) in contexts.rows().into_iter().enumerate() {
        let w = predict_network(&gen, c, args.project, threshold)?;
        if args.project && !is_dag(&binarize(&w, 0.0)?) {
            return Err(NotmadError::invalid(format!("projected network {i} is cyclic")));
        }
        let path = args.out.join(format!("network_{i:05}.csv"));
        write_network(&path, &w)?;
        manifest.output(&format!("network_{i:05}"), &path)?;
    }
    manifest.write(&args.out)?;
    Ok(())
}

fn model_name(path: &Path, index: usize) -> String {
    path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| format!("model_{index}"))
}

fn run_evaluate(args: &EvaluateArgs) -> Result<()> {
    let test = load_dataset(&args.test)?;
    let truth = args.truth.as_deref().map(TruthRecord::read).transpose()?;
    let truth_networks = truth.as_ref().map(|t| t.test_networks()).transpose()?;
    let truth_dict = truth.as_ref().map(|t| t.archetype_dictionary()).transpose()?;
    let post = Postprocess { threshold: args.threshold, project: !args.no_project };
    let config = EvalConfig { resamples: 0, seed: 0, postprocess: post };
    let mut report = EvalReport::new(config);
    let mut manifest = RunManifest::new("evaluate", None, to_value(&config)?);
    manifest.input("test", &args.test)?;
    if let Some(t) = &args.truth {
        manifest.input("truth", t)?;
    }
    for (i, path) in args.models.iter().enumerate() {
        let (gen, _) = GraphGenerator::load(path)?;
        let raw = (0..test.n()).map(|r| gen.graph_for(test.c().row(r))).collect::<Result<Vec<_>>>()?;
        let scored: Vec<_> = raw.iter().map(|w| post.apply(w)).collect();
        let name = model_name(path, i);
        let mut m = score_networks(&name, &scored, &raw, &test, truth_networks.as_deref())?;
        if let Some(d) = &truth_dict {
            if gen.k() >= d.k() && gen.p() == d.p() {
                m.archetype_recovery = Some(archetype_recovery(&gen.dictionary, d, args.threshold)?);
            }
        }
        report.methods.push(m);
        manifest.input(&format!("model_{i}"), path)?;
    }
    if let Some(t) = &truth_networks {
        report.methods.push(score_networks("truth", t, t, &test, Some(t))?);
    }
    let (json_path, csv_path) = report.write(&args.out)?;
    manifest.output("report_json", &json_path)?;
    manifest.output("report_csv", &csv_path)?;
    manifest.write(&args.out)?;
    Ok(())
}

fn run_baselines(args: &BaselinesArgs) -> Result<()> {
    let config: BaselinesConfig = load_or_default(args.config.as_deref())?;
    let train_data = load_dataset(&args.train)?;
    let test = load_dataset(&args.test)?;
    let truth_networks = args.truth.as_deref().map(|p| TruthRecord::read(p)?.test_networks()).transpose()?;
    let n_clusters = config.n_clusters.unwrap_or_else(|| match train_data.groups() {
        Some(g) => {
            let mut labels = g.to_vec();
            labels.sort_unstable();
            labels.dedup();
            labels.len()
        }
        None => 3,
    });
    let mut resolved = config.clone();
    resolved.n_clusters = Some(n_clusters);

    let population = PopulationMethod { notears: config.notears.clone() };
    let clustered = ClusteredMethod { n_clusters, notears: config.notears.clone() };
    let oracle = OracleClusteredMethod { notears: config.notears.clone() };
    let lioness = LionessMethod { ridge: config.ridge };
    let mut methods: Vec<&dyn Method> = vec![&population, &clustered];
    if train_data.groups().is_some() && test.groups().is_some() {
        methods.push(&oracle);
    }
    methods.push(&lioness);
    let truth_method = truth_networks
        .clone()
        .map(|networks| FixedMethod { label: "truth".into(), networks, postprocess: false });
    if let Some(t) = &truth_method {
        methods.push(t);
    }
    let report = evaluate_methods(&methods, &train_data, &test, truth_networks.as_deref(), &config.eval)?;

    let mut manifest = RunManifest::new("baselines", Some(config.eval.seed), to_value(&resolved)?);
    manifest.input("train", &args.train)?;
    manifest.input("test", &args.test)?;
    if let Some(t) = &args.truth {
        manifest.input("truth", t)?;
    }
    if let Some(c) = &args.config {
        manifest.input("config", c)?;
    }
    let (json_path, csv_path) = report.write(&args.out)?;
    manifest.output("report_json", &json_path)?;
    manifest.output("report_csv", &csv_path)?;
    manifest.write(&args.out)?;
    Ok(())
}

fn run_check(args: &CheckArgs) -> Result<bool> {
    let outcomes = run_checks()?;
    let mut out = std::io::stdout().lock();
    for o in &outcomes {
        let _ = writeln!(out, "{} {}: {}", if o.passed { "PASS" } else { "FAIL" }, o.name, o.detail);
    }
    if let Some(dir) = &args.out {
        let path = dir.join("check.json");
        write_json(&path, &outcomes)?;
        let mut manifest = RunManifest::new("check", None, serde_json::Value::Null);
        manifest.output("check", &path)?;
        manifest.write(dir)?;
    }
    Ok(outcomes.iter().all(|o| o.passed))
}

fn run(command: &Command) -> Result<bool> {
    match command {
        Command::Generate(a) => run_generate(a).map(|_| true),
        Command::Train(a) => run_train(a).map(|_| true),
        Command::Predict(a) => run_predict(a).map(|_| true),
        Command::Evaluate(a) => run_evaluate(a).map(|_| true),
        Command::Baselines(a) => run_baselines(a).map(|_| true),
        Command::Check(a) => run_check(a),
    }
}

fn thread_count(flag: Option<usize>) -> Result<Option<usize>> {
    if let Some(n) = flag {
        return if n == 0 { Err(NotmadError::invalid("--threads must be >= 1")) } else { Ok(Some(n)) };
    }
    match std::env::var(THREADS_ENV) {
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(n) if n >= 1 => Ok(Some(n)),
            _ => Err(NotmadError::invalid(format!("{THREADS_ENV} must be a positive integer, got {v:?}"))),
        },
        Err(_) => Ok(None),
    }
}

fn report_error(e: &NotmadError) {
    let line = json!({ "error": { "kind": e.kind(), "message": e.to_string() } });
    eprintln!("{line}");
}

/// Parses `argv` (program name first), runs the subcommand and returns the
/// process exit code: 0 on success, 1 on failure, 2 on a usage error.
pub fn cli_dispatch<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let threads = match thread_count(cli.threads) {
        Ok(t) => t,
        Err(e) => {
            report_error(&e);
            return 2;
        }
    };
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = threads {
        builder = builder.num_threads(n);
    }
    let outcome = match builder.build() {
        Ok(pool) => pool.install(|| run(&cli.command)),
        Err(e) => Err(NotmadError::invalid(format!("cannot start thread pool: {e}"))),
    };
    match outcome {
        Ok(true) => 0,
        Ok(false) => {
            report_error(&NotmadError::invalid("one or more checks failed"));
            1
        }
        Err(e) => {
            report_error(&e);
            1
        }
    }
}
