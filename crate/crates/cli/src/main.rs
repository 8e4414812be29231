use std::fs::{self, File};
use std::io::{BufReader, Write as _};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use fmim_core::checkpoint::{Checkpoint, TrainedModel};
use fmim_core::data::{generate_synthetic, parse_conll, write_conll, Corpus, DataError, SynthConfig};
use fmim_core::eval::{diagnostics_table, Mode};
use fmim_core::kv::KvMap;
use fmim_core::tagging::TagScheme;
use fmim_core::train::{self, RunConfig, SweepParam};

#[derive(Parser)]
#[command(name = "fmim", version, about = "Cross-domain sequence labeling with mutual information maximization")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train on labeled source and unlabeled target text.
    Train(TrainArgs),
    /// Score a checkpoint on a labeled test file.
    Evaluate(EvaluateArgs),
    /// Per-sentence entropy diagnostics.
    Diagnose(DiagnoseArgs),
    /// Generate the synthetic cross-domain corpora.
    Synth(SynthArgs),
    /// Train and evaluate once per value of alpha or rho.
    Sweep(SweepArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum Preset {
    /// Encoder and optimizer defaults for real corpora.
    Default,
    /// Small encoder tuned for the synthetic benchmark.
    Synthetic,
}

#[derive(Args)]
struct RunArgs {
    /// `key = value` file; flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "default")]
    preset: Preset,
    /// ABSA, ATE or NER.
    #[arg(long)]
    task: Option<String>,
    #[arg(long)]
    source_train: Option<PathBuf>,
    #[arg(long)]
    target_unlabeled: Option<PathBuf>,
    #[arg(long)]
    target_test: Option<PathBuf>,
    #[arg(long)]
    embed_dim: Option<usize>,
    #[arg(long)]
    context_window: Option<usize>,
    #[arg(long)]
    hidden_dim: Option<usize>,
    #[arg(long)]
    max_len: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    weight_decay: Option<f64>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    rho: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    min_count: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Any other config key, as `key=value`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    extra: Vec<String>,
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    run: RunArgs,
    #[arg(long)]
    output_dir: Option<PathBuf>,
}

#[derive(Args)]
struct EvaluateArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    test: PathBuf,
    /// ABSA, ATE or NER; defaults to the checkpoint's labeled mode.
    #[arg(long)]
    mode: Option<Mode>,
}

#[derive(Args)]
struct DiagnoseArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    input: PathBuf,
    /// Print JSON lines instead of the table.
    #[arg(long)]
    json: bool,
    #[arg(long, default_value_t = fmim_core::mi_loss::DEFAULT_EPSILON)]
    epsilon: f64,
}

#[derive(Args)]
struct SynthArgs {
    /// `key = value` generator settings.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out_dir: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    run: RunArgs,
    /// alpha or rho.
    #[arg(long)]
    param: SweepParam,
    /// Comma-separated values.
    #[arg(long, value_delimiter = ',', required = true)]
    values: Vec<f64>,
    /// Write the CSV here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

impl RunArgs {
    fn resolve(&self, output_dir: Option<&Path>) -> Result<RunConfig> {
        let mut cfg = match self.preset {
            Preset::Default => RunConfig::new(Mode::Absa),
            Preset::Synthetic => RunConfig::synthetic_benchmark(),
        };
        if let Some(path) = &self.config {
            let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            cfg.apply_kv(&KvMap::parse(&text)?)
                .with_context(|| format!("in {}", path.display()))?;
        }
        let mut kv = KvMap::default();
        macro_rules! flag {
            ($($name:ident),*) => {$(
                if let Some(v) = &self.$name {
                    kv.set(stringify!($name), v);
                }
            )*};
        }
        flag!(task, embed_dim, context_window, hidden_dim, max_len, lr, weight_decay);
        flag!(alpha, rho, batch_size, epochs, min_count, seed);
        for (key, v) in [
            ("source_train", &self.source_train),
            ("target_unlabeled", &self.target_unlabeled),
            ("target_test", &self.target_test),
        ] {
            if let Some(v) = v {
                kv.set(key, v.display());
            }
        }
        if let Some(dir) = output_dir {
            kv.set("output_dir", dir.display());
        }
        for item in &self.extra {
            let Some((k, v)) = item.split_once('=') else {
                bail!("--set expects KEY=VALUE, got {item:?}");
            };
            kv.set(k.trim(), v.trim());
        }
        cfg.apply_kv(&kv)?;
        cfg.validate()?;
        Ok(cfg)
    }
}

fn open(path: &Path) -> Result<BufReader<File>> {
    let f = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    Ok(BufReader::new(f))
}

fn load_labeled(path: &Path, scheme: &TagScheme) -> Result<Corpus> {
    parse_conll(open(path)?, scheme, true).with_context(|| format!("reading {}", path.display()))
}

/// Bare tokens, or a labeled file whose labels are then dropped.
fn load_any(path: &Path, scheme: &TagScheme) -> Result<Corpus> {
    match parse_conll(open(path)?, scheme, false) {
        Err(DataError::Format { found: 2, .. }) => Ok(load_labeled(path, scheme)?.unlabeled()),
        other => other.with_context(|| format!("reading {}", path.display())),
    }
}

fn required<'a>(path: &'a Option<PathBuf>, what: &str) -> Result<&'a Path> {
    path.as_deref()
        .with_context(|| format!("no {what} given (set it in the config or pass --{})", what.replace('_', "-")))
}

fn load_model(path: &Path) -> Result<TrainedModel> {
    let ck = Checkpoint::load(path).with_context(|| format!("loading checkpoint {}", path.display()))?;
    Ok(ck.into_model()?)
}

/// The labeled matching mode that goes with a scheme.
fn labeled_mode(scheme: &TagScheme) -> Mode {
    match scheme.kind() {
        fmim_core::tagging::SchemeKind::UnifiedSentiment => Mode::Absa,
        fmim_core::tagging::SchemeKind::Bio => Mode::Ner,
    }
}

fn cmd_train(args: TrainArgs) -> Result<()> {
    let cfg = args.run.resolve(args.output_dir.as_deref())?;
    let out_dir = required(&cfg.output_dir, "output_dir")?;
    let scheme = cfg.scheme();
    let source = load_labeled(required(&cfg.source_train, "source_train")?, &scheme)?;
    let target = load_any(required(&cfg.target_unlabeled, "target_unlabeled")?, &scheme)?;
    if !source.is_labeled() {
        bail!("source corpus has unlabeled sentences");
    }
    let test = cfg
        .target_test
        .as_deref()
        .map(|p| load_labeled(p, &scheme))
        .transpose()?;

    log::info!(
        "training {} on {} source / {} target sentences",
        cfg.task,
        source.len(),
        target.len()
    );
    let outcome = train::train(&cfg, &source, &target)?;

    fs::create_dir_all(out_dir).with_context(|| format!("creating {}", out_dir.display()))?;
    fs::write(out_dir.join("config.txt"), cfg.to_kv().render())?;
    fs::write(out_dir.join("metrics.jsonl"), outcome.log_jsonl())?;
    Checkpoint::new(&outcome.model, Some(outcome.optim.clone())).save(&out_dir.join("checkpoint.json"))?;

    if let Some(test) = test {
        let modes = match cfg.task {
            Mode::Ner => vec![Mode::Ner],
            Mode::Absa => vec![Mode::Absa, Mode::Ate],
            Mode::Ate => vec![Mode::Ate],
        };
        let reports = train::evaluate_modes(&outcome.model, &test, &modes)?;
        let mut lines = String::new();
        for r in &reports {
            lines.push_str(&serde_json::to_string(r)?);
            lines.push('\n');
        }
        fs::write(out_dir.join("report.jsonl"), &lines)?;
        print!("{lines}");
    }
    eprintln!("wrote checkpoint and metrics to {}", out_dir.display());
    Ok(())
}

fn cmd_evaluate(args: EvaluateArgs) -> Result<()> {
    let model = load_model(&args.checkpoint)?;
    let test = load_labeled(&args.test, &model.scheme)?;
    let mode = args.mode.unwrap_or_else(|| labeled_mode(&model.scheme));
    let report = train::evaluate(&model, &test, mode)?;
    println!("{}", serde_json::to_string(&report)?);
    Ok(())
}

fn cmd_diagnose(args: DiagnoseArgs) -> Result<()> {
    let model = load_model(&args.checkpoint)?;
    let input = load_any(&args.input, &model.scheme)?;
    let rows = train::diagnose(&model, &input, args.epsilon)?;
    let mut out = std::io::stdout().lock();
    if args.json {
        for (tokens, d) in &rows {
            #[derive(serde::Serialize)]
            struct Line<'a> {
                tokens: &'a [String],
                #[serde(flatten)]
                diagnostics: &'a fmim_core::eval::SentenceDiagnostics,
            }
            writeln!(out, "{}", serde_json::to_string(&Line { tokens, diagnostics: d })?)?;
        }
    } else {
        write!(out, "{}", diagnostics_table(&rows))?;
    }
    Ok(())
}

fn cmd_synth(args: SynthArgs) -> Result<()> {
    let mut cfg = match &args.config {
        Some(path) => {
            let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            SynthConfig::from_kv(&KvMap::parse(&text)?)?
        }
        None => SynthConfig::default(),
    };
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    let data = generate_synthetic(&cfg)?;
    fs::create_dir_all(&args.out_dir).with_context(|| format!("creating {}", args.out_dir.display()))?;
    for (name, corpus) in [
        ("source_train.conll", &data.source_train),
        ("target_unlabeled.conll", &data.target_unlabeled),
        ("target_test.conll", &data.target_test),
    ] {
        fs::write(args.out_dir.join(name), write_conll(corpus))?;
    }
    fs::write(args.out_dir.join("synth.txt"), cfg.to_kv().render())?;
    eprintln!(
        "wrote {} / {} / {} sentences to {}",
        data.source_train.len(),
        data.target_unlabeled.len(),
        data.target_test.len(),
        args.out_dir.display()
    );
    Ok(())
}

fn cmd_sweep(args: SweepArgs) -> Result<()> {
    let cfg = args.run.resolve(None)?;
    let scheme = cfg.scheme();
    let source = load_labeled(required(&cfg.source_train, "source_train")?, &scheme)?;
    let target = load_any(required(&cfg.target_unlabeled, "target_unlabeled")?, &scheme)?;
    let test = load_labeled(required(&cfg.target_test, "target_test")?, &scheme)?;
    let rows = train::sweep(&cfg, args.param, &args.values, &source, &target, &test)?;
    let csv = train::sweep_csv(&rows);
    match &args.out {
        Some(path) => fs::write(path, csv).with_context(|| format!("writing {}", path.display()))?,
        None => print!("{csv}"),
    }
    Ok(())
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let result = match Cli::parse().command {
        Command::Train(a) => cmd_train(a),
        Command::Evaluate(a) => cmd_evaluate(a),
        Command::Diagnose(a) => cmd_diagnose(a),
        Command::Synth(a) => cmd_synth(a),
        Command::Sweep(a) => cmd_sweep(a),
    };
    // a closed pipe (e.g. `| head`) is not an error
    match result {
        Err(e) if e
            .downcast_ref::<std::io::Error>()
            .is_some_and(|io| io.kind() == std::io::ErrorKind::BrokenPipe) =>
        {
            Ok(())
        }
        other => other,
    }
}
