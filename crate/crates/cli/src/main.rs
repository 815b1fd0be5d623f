use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use evrel_core::config::ConfigFile;
use evrel_core::dataset::{
    build_prompt, generate_synthetic, load_dataset, load_dataset_report, shuffle_candidates,
    validate_official_stats, write_dataset, DatasetStats, GenSpec, Sample, TaskKind,
};
use evrel_core::harness::{
    parse_layer_range, render_sweep, run_eval, run_sweep, AnswerProvider, EvalOptions,
    RandomProvider, ReplayProvider, SweepAxis, SweepSpec, ToyProvider,
};
use evrel_core::scoring::{
    load_predictions, predictions_to_jsonl, render_report, score, Averaging, ReportFormat,
    ScoreOptions,
};
use evrel_core::KfpConfig;

/// Usage problems discovered after argument parsing.
#[derive(Debug)]
struct Usage(String);

impl std::fmt::Display for Usage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Usage {}

fn usage(msg: impl Into<String>) -> anyhow::Error {
    Usage(msg.into()).into()
}

#[derive(Parser, Debug)]
#[command(name = "evrel", version, about = "Event-relation hallucination benchmark harness")]
struct Cli {
    /// `key = value` settings file; flags take precedence.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Check a dataset file and print its statistics.
    Validate(ValidateArgs),
    /// Render the prompt for every sample as JSON Lines.
    Prompts(PromptsArgs),
    /// Answer every sample with a provider and write predictions.
    Eval(EvalArgs),
    /// Score a predictions file against a dataset.
    Score(ScoreArgs),
    /// Ablate one intervention hyperparameter on the toy model.
    Sweep(SweepArgs),
    /// Write a synthetic dataset.
    Gen(GenArgs),
}

#[derive(Args, Debug)]
struct DatasetArg {
    #[arg(long, value_name = "PATH")]
    dataset: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct ValidateArgs {
    #[command(flatten)]
    dataset: DatasetArg,
    /// Compare the statistics with the published benchmark counts.
    #[arg(long)]
    check_official: bool,
}

#[derive(Args, Debug)]
struct PromptsArgs {
    #[command(flatten)]
    dataset: DatasetArg,
    /// Shuffle QA/CFQA candidates with this seed.
    #[arg(long, value_name = "SEED")]
    shuffle_candidates: Option<u64>,
    #[arg(long, value_name = "PATH")]
    out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum ProviderKind {
    Toy,
    Random,
    File,
    External,
}

#[derive(Args, Debug)]
struct KfpArgs {
    /// Enable key-frame propagation (toy provider).
    #[arg(long)]
    kfp: bool,
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    m: Option<usize>,
    #[arg(long)]
    sigma: Option<f64>,
    #[arg(long)]
    beta: Option<f64>,
    /// Inclusive layer range.
    #[arg(long, value_name = "LO..HI")]
    layers: Option<String>,
}

#[derive(Args, Debug)]
struct ScoringArgs {
    #[arg(long, value_enum)]
    format: Option<FormatArg>,
    #[arg(long, value_enum)]
    averaging: Option<AveragingArg>,
    /// Also accept the alternate abstention candidate on CFQA.
    #[arg(long)]
    cfqa_accept_any_abstention: bool,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum FormatArg {
    Table,
    Json,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum AveragingArg {
    Macro,
    Weighted,
}

#[derive(Args, Debug)]
struct EvalArgs {
    #[command(flatten)]
    dataset: DatasetArg,
    #[arg(long, value_enum)]
    provider: Option<ProviderKind>,
    /// Answers to replay for the `file` and `external` providers.
    #[arg(long, value_name = "PATH")]
    predictions: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[command(flatten)]
    kfp: KfpArgs,
    #[arg(long, value_name = "SEED")]
    shuffle_candidates: Option<u64>,
    #[arg(long)]
    workers: Option<usize>,
    /// Record per-sample latency (output is then not reproducible).
    #[arg(long)]
    timing: bool,
    #[arg(long)]
    model_name: Option<String>,
    #[arg(long, value_name = "PATH")]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct ScoreArgs {
    #[command(flatten)]
    dataset: DatasetArg,
    #[arg(long, value_name = "PATH")]
    predictions: Option<PathBuf>,
    #[command(flatten)]
    scoring: ScoringArgs,
    #[arg(long, value_name = "PATH")]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct SweepArgs {
    #[command(flatten)]
    dataset: DatasetArg,
    /// m, beta or layers.
    #[arg(long)]
    axis: String,
    /// Comma-separated values; defaults to the standard grid for the axis.
    #[arg(long)]
    values: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    #[command(flatten)]
    kfp: KfpArgs,
    #[arg(long)]
    workers: Option<usize>,
    #[command(flatten)]
    scoring: ScoringArgs,
    #[arg(long, value_name = "PATH")]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct GenArgs {
    /// `official` or a list like `qa-causal=10,rc-temporal-before=4`.
    #[arg(long, default_value = "official")]
    spec: String,
    /// Clip count for custom specs.
    #[arg(long, default_value_t = 574)]
    videos: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, value_name = "PATH")]
    out: PathBuf,
}

fn pick<T: std::str::FromStr>(flag: Option<T>, cfg: &ConfigFile, key: &str) -> Result<Option<T>> {
    match flag {
        Some(v) => Ok(Some(v)),
        None => Ok(cfg.get(key)?),
    }
}

fn pick_path(flag: &Option<PathBuf>, cfg: &ConfigFile, key: &str) -> Option<PathBuf> {
    flag.clone().or_else(|| cfg.raw(key).map(PathBuf::from))
}

fn dataset_path(arg: &DatasetArg, cfg: &ConfigFile) -> Result<PathBuf> {
    pick_path(&arg.dataset, cfg, "dataset").ok_or_else(|| usage("--dataset is required"))
}

fn load(arg: &DatasetArg, cfg: &ConfigFile) -> Result<Vec<Sample>> {
    let path = dataset_path(arg, cfg)?;
    load_dataset(&path).with_context(|| format!("loading {}", path.display()))
}

fn resolve_kfp(args: &KfpArgs, cfg: &ConfigFile) -> Result<KfpConfig> {
    let d = KfpConfig::default();
    let (lo, hi) = match args.layers.as_deref().or(cfg.raw("layers")) {
        Some(text) => parse_layer_range(text)?,
        None => (d.layer_lo, d.layer_hi),
    };
    let kfp = KfpConfig {
        k: pick(args.k, cfg, "k")?.unwrap_or(d.k),
        m: pick(args.m, cfg, "m")?.unwrap_or(d.m),
        sigma: pick(args.sigma, cfg, "sigma")?.unwrap_or(d.sigma),
        beta: pick(args.beta, cfg, "beta")?.unwrap_or(d.beta),
        ..d
    }
    .with_layers(lo, hi);
    kfp.validate()?;
    Ok(kfp)
}

fn kfp_enabled(args: &KfpArgs, cfg: &ConfigFile) -> Result<bool> {
    Ok(args.kfp || cfg.get_bool("kfp")?.unwrap_or(false))
}

fn score_options(args: &ScoringArgs, cfg: &ConfigFile) -> Result<ScoreOptions> {
    let averaging = match args.averaging {
        Some(AveragingArg::Macro) => Averaging::Macro,
        Some(AveragingArg::Weighted) => Averaging::Weighted,
        None => cfg.get("averaging")?.unwrap_or_default(),
    };
    let any = args.cfqa_accept_any_abstention
        || cfg.get_bool("cfqa_accept_any_abstention")?.unwrap_or(false);
    Ok(ScoreOptions {
        averaging,
        cfqa_accept_any_abstention: any,
    })
}

fn report_format(args: &ScoringArgs, cfg: &ConfigFile) -> Result<ReportFormat> {
    Ok(match args.format {
        Some(FormatArg::Table) => ReportFormat::Table,
        Some(FormatArg::Json) => ReportFormat::Json,
        None => cfg.get("format")?.unwrap_or(ReportFormat::Table),
    })
}

fn emit(out: Option<&Path>, text: &str) -> Result<()> {
    match out {
        Some(path) => fs::write(path, text).with_context(|| format!("writing {}", path.display())),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn cmd_validate(args: &ValidateArgs, cfg: &ConfigFile) -> Result<ExitCode> {
    let path = dataset_path(&args.dataset, cfg)?;
    let report = load_dataset_report(&path)?;
    for diag in &report.diagnostics {
        eprintln!("{}: {diag}", path.display());
    }
    let stats = DatasetStats::compute(&report.samples);
    print!("{stats}");
    let mut ok = report.is_clean();
    if args.check_official {
        let official = validate_official_stats(&stats);
        print!("{official}");
        ok &= official.passed();
    }
    if !report.is_clean() {
        eprintln!("{} invalid record(s)", report.diagnostics.len());
    }
    Ok(if ok { ExitCode::SUCCESS } else { ExitCode::from(1) })
}

fn cmd_prompts(args: &PromptsArgs, cfg: &ConfigFile) -> Result<ExitCode> {
    let samples = load(&args.dataset, cfg)?;
    let shuffle = pick(args.shuffle_candidates, cfg, "shuffle_candidates")?;
    let mut out = String::new();
    for sample in &samples {
        let view = match shuffle {
            Some(seed) if sample.task != TaskKind::Rc => shuffle_candidates(sample, seed)?,
            _ => sample.clone(),
        };
        let line = serde_json::json!({ "sample_id": sample.id, "prompt": build_prompt(&view)? });
        out.push_str(&line.to_string());
        out.push('\n');
    }
    emit(args.out.as_deref(), &out)?;
    Ok(ExitCode::SUCCESS)
}

fn cmd_eval(args: &EvalArgs, cfg: &ConfigFile) -> Result<ExitCode> {
    let samples = load(&args.dataset, cfg)?;
    let seed = pick(args.seed, cfg, "seed")?.unwrap_or(0);
    let kind = match args.provider {
        Some(p) => p,
        None => match cfg.raw("provider") {
            Some(s) => ProviderKind::from_str(s, true).map_err(|_| usage(format!("unknown provider `{s}`")))?,
            None => ProviderKind::Toy,
        },
    };
    let replay_path = || {
        pick_path(&args.predictions, cfg, "predictions")
            .ok_or_else(|| usage("--predictions is required for the file and external providers"))
    };
    let provider: Box<dyn AnswerProvider> = match kind {
        ProviderKind::Toy => {
            let kfp = if kfp_enabled(&args.kfp, cfg)? {
                Some(resolve_kfp(&args.kfp, cfg)?)
            } else {
                None
            };
            Box::new(ToyProvider::with_seed(seed, kfp)?)
        }
        ProviderKind::Random => Box::new(RandomProvider::new(seed)),
        ProviderKind::File => Box::new(ReplayProvider::from_file(replay_path()?)?),
        ProviderKind::External => Box::new(ReplayProvider::from_bridge_output(replay_path()?)?),
    };
    let opts = EvalOptions {
        shuffle_seed: pick(args.shuffle_candidates, cfg, "shuffle_candidates")?,
        workers: pick(args.workers, cfg, "workers")?.unwrap_or(1),
        record_timing: args.timing,
        model_name: args.model_name.clone().or_else(|| cfg.raw("model_name").map(String::from)),
    };
    let run = run_eval(&samples, provider.as_ref(), &opts)?;
    emit(args.out.as_deref(), &predictions_to_jsonl(&run.predictions)?)?;
    eprintln!(
        "{}: {} samples in {:.2}s ({:.1} samples/s), {} provider failure(s)",
        provider.name(),
        run.predictions.len(),
        run.elapsed_secs,
        run.samples_per_sec(),
        run.failures.len()
    );
    Ok(ExitCode::SUCCESS)
}

fn cmd_score(args: &ScoreArgs, cfg: &ConfigFile) -> Result<ExitCode> {
    let samples = load(&args.dataset, cfg)?;
    let pred_path = pick_path(&args.predictions, cfg, "predictions")
        .ok_or_else(|| usage("--predictions is required"))?;
    let preds = load_predictions(&pred_path)
        .with_context(|| format!("loading {}", pred_path.display()))?;
    let report = score(&samples, &preds, &score_options(&args.scoring, cfg)?)?;
    emit(args.out.as_deref(), &render_report(&report, report_format(&args.scoring, cfg)?)?)?;
    Ok(ExitCode::SUCCESS)
}

fn cmd_sweep(args: &SweepArgs, cfg: &ConfigFile) -> Result<ExitCode> {
    let axis: SweepAxis = args.axis.parse()?;
    let samples = load(&args.dataset, cfg)?;
    let seed = pick(args.seed, cfg, "seed")?.unwrap_or(0);
    let fixed = resolve_kfp(&args.kfp, cfg)?;
    let values = match &args.values {
        Some(text) => axis.parse_values(text)?,
        None => axis.default_values(),
    };
    let spec = SweepSpec { axis, values, fixed };
    let eval_opts = EvalOptions {
        workers: pick(args.workers, cfg, "workers")?.unwrap_or(1),
        ..Default::default()
    };
    let toy = ToyProvider::with_seed(seed, None)?;
    let report = run_sweep(&samples, &toy, &spec, &eval_opts, &score_options(&args.scoring, cfg)?)?;
    emit(args.out.as_deref(), &render_sweep(&report, report_format(&args.scoring, cfg)?)?)?;
    Ok(ExitCode::SUCCESS)
}

fn cmd_gen(args: &GenArgs) -> Result<ExitCode> {
    let spec = if args.spec == "official" {
        GenSpec::official()
    } else {
        GenSpec::parse(&args.spec, args.videos)?
    };
    let samples = generate_synthetic(&spec, args.seed);
    write_dataset(&args.out, &samples)?;
    eprint!("{}", DatasetStats::compute(&samples));
    Ok(ExitCode::SUCCESS)
}

fn run(cli: Cli) -> Result<ExitCode> {
    let cfg = match &cli.config {
        Some(path) => ConfigFile::load(path).map_err(|e| usage(format!("{}: {e}", path.display())))?,
        None => ConfigFile::default(),
    };
    match &cli.command {
        Command::Validate(a) => cmd_validate(a, &cfg),
        Command::Prompts(a) => cmd_prompts(a, &cfg),
        Command::Eval(a) => cmd_eval(a, &cfg),
        Command::Score(a) => cmd_score(a, &cfg),
        Command::Sweep(a) => cmd_sweep(a, &cfg),
        Command::Gen(a) => cmd_gen(a),
    }
}

fn exit_code(err: &anyhow::Error) -> u8 {
    let config_error = matches!(
        err.downcast_ref::<evrel_core::Error>(),
        Some(evrel_core::Error::InvalidConfig(_))
    );
    if err.downcast_ref::<Usage>().is_some() || config_error {
        2
    } else {
        1
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(exit_code(&err))
        }
    }
}
