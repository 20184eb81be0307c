use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use manilift::harness::{
    self, config_hash, evaluate_model, history_csv, ExperimentConfig, LrChoice, RunConfig, RunRecord,
};
use manilift::nets::{LiftingModel, ModelKind};
use manilift::synthdata::{generate, read_dataset, write_dataset, Scenario, SplitName, SplitSizes};

/// Manifold-constrained multi-hypothesis pose lifting experiments.
#[derive(Parser, Debug)]
#[command(name = "manilift", version)]
struct Cli {
    /// JSON file with default values for the command's options.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic dataset (CSV splits plus a JSON sidecar).
    Generate(GenerateArgs),
    /// Train a model on a scenario and write run records and checkpoints.
    Train(TrainArgs),
    /// Evaluate a checkpoint on a dataset split.
    Eval(EvalArgs),
    /// Reproduce a table or a theory demonstration end to end.
    Reproduce(ReproduceArgs),
}

#[derive(clap::Args, Debug)]
struct GenerateArgs {
    #[arg(long, value_parser = parse_scenario)]
    scenario: Option<Scenario>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    train_size: Option<usize>,
    #[arg(long)]
    val_size: Option<usize>,
    #[arg(long)]
    test_size: Option<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, ValueEnum, Serialize, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "lowercase")]
enum ModelArg {
    Unconstrained,
    Constrained,
    Manipose,
}

#[derive(clap::Args, Debug)]
struct TrainArgs {
    #[arg(long, value_parser = parse_scenario)]
    scenario: Option<Scenario>,
    #[arg(long, value_enum)]
    model: Option<ModelArg>,
    /// Number of hypotheses for ManiPose.
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    beta: Option<f64>,
    /// Learning rate; repeat to search a grid on validation loss.
    #[arg(long = "lr")]
    lr: Vec<f64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    weight_decay: Option<f64>,
    /// Seed; repeat for several runs.
    #[arg(long = "seed")]
    seed: Vec<u64>,
    /// Dataset directory written by `generate`; generated from the seed if absent.
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum ModeArg {
    Aggregated,
    Oracle,
    PerHead,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum SplitArg {
    Train,
    Val,
    Test,
}

#[derive(clap::Args, Debug)]
struct EvalArgs {
    /// Checkpoint manifest (`.json`, with the `.bin` blob next to it).
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Dataset directory; regenerated from `--seed` if absent.
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, value_enum, default_value = "test")]
    split: SplitArg,
    #[arg(long, value_enum, default_value = "aggregated")]
    mode: ModeArg,
    /// File to write the JSON report to (printed to stdout otherwise).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, ValueEnum, PartialEq, Eq)]
enum TableArg {
    Table1,
    Torus,
    Prop2,
    BetaSweep,
    KSweep,
}

#[derive(clap::Args, Debug)]
struct ReproduceArgs {
    #[arg(value_enum)]
    table: TableArg,
    /// Base seed; runs use this seed and the next two.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// table1 only: select learning rates on validation loss instead of the reference values.
    #[arg(long)]
    lr_search: bool,
    /// prop2 only: Monte-Carlo sample count.
    #[arg(long)]
    mc_samples: Option<usize>,
}

/// Values accepted in `--config` files; command-line flags take precedence.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct FileConfig {
    scenario: Option<String>,
    model: Option<ModelArg>,
    k: Option<usize>,
    beta: Option<f64>,
    learning_rates: Option<Vec<f64>>,
    seeds: Option<Vec<u64>>,
    seed: Option<u64>,
    epochs: Option<usize>,
    batch_size: Option<usize>,
    weight_decay: Option<f64>,
    sizes: Option<SplitSizes>,
    data: Option<PathBuf>,
    out: Option<PathBuf>,
    checkpoint: Option<PathBuf>,
    mc_samples: Option<usize>,
    lr_search: Option<bool>,
}

fn parse_scenario(s: &str) -> Result<Scenario, String> {
    Scenario::parse(s).map_err(|_| format!("unknown scenario {s:?} (expected A, B, C or torus)"))
}

/// Usage problems found after argument parsing.
#[derive(Debug)]
struct UsageError(String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

fn env_seed() -> anyhow::Result<Option<u64>> {
    match std::env::var("MANILIFT_SEED") {
        Ok(v) => v
            .trim()
            .parse()
            .map(Some)
            .map_err(|_| usage(format!("MANILIFT_SEED={v:?} is not an unsigned integer"))),
        Err(_) => Ok(None),
    }
}

/// Seed precedence: flag, config file, `MANILIFT_SEED`, then 0.
fn resolve_seed(flag: Option<u64>, file: Option<u64>) -> anyhow::Result<u64> {
    Ok(match flag.or(file) {
        Some(s) => s,
        None => env_seed()?.unwrap_or(0),
    })
}

fn load_file_config(path: Option<&Path>) -> anyhow::Result<FileConfig> {
    let Some(path) = path else {
        return Ok(FileConfig::default());
    };
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).map_err(|e| usage(format!("invalid config {}: {e}", path.display())))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> anyhow::Result<()> {
    std::fs::write(path, serde_json::to_string_pretty(value)? + "\n")
        .with_context(|| format!("writing {}", path.display()))
}

fn cmd_generate(a: GenerateArgs, f: FileConfig) -> anyhow::Result<bool> {
    let scenario = match (a.scenario, f.scenario.as_deref()) {
        (Some(s), _) => s,
        (None, Some(s)) => parse_scenario(s).map_err(usage)?,
        (None, None) => return Err(usage("generate needs --scenario")),
    };
    let seed = resolve_seed(a.seed, f.seed)?;
    let base = f.sizes.unwrap_or_else(|| scenario.default_sizes());
    let sizes = SplitSizes {
        train: a.train_size.unwrap_or(base.train),
        val: a.val_size.unwrap_or(base.val),
        test: a.test_size.unwrap_or(base.test),
    };
    let out = a.out.or(f.out).unwrap_or_else(|| harness::default_out("generate"));
    let ds = generate(scenario, sizes, seed)?;
    write_dataset(&ds, &out)?;
    println!(
        "wrote scenario {} ({}/{}/{} samples, seed {seed}) to {}",
        scenario.name(),
        sizes.train,
        sizes.val,
        sizes.test,
        out.display()
    );
    Ok(true)
}

fn model_kind(model: ModelArg, k: Option<usize>) -> anyhow::Result<ModelKind> {
    Ok(match (model, k) {
        (ModelArg::Unconstrained, None) => ModelKind::Unconstrained,
        (ModelArg::Constrained, None) => ModelKind::Constrained,
        (ModelArg::Manipose, k) => ModelKind::ManiPose { k: k.unwrap_or(2) },
        (_, Some(_)) => return Err(usage("--k only applies to --model manipose")),
    })
}

#[derive(Serialize)]
struct TrainSummary {
    config_hash: String,
    config: ExperimentConfig,
    selected_learning_rate: f64,
    runs: Vec<TrainSummaryRun>,
}

#[derive(Serialize)]
struct TrainSummaryRun {
    name: String,
    learning_rate: f64,
    seed: u64,
    best_epoch: usize,
    best_val_loss: f64,
    test_mpjpe: Option<f64>,
    test_oracle_mpjpe: Option<f64>,
}

fn cmd_train(a: TrainArgs, f: FileConfig) -> anyhow::Result<bool> {
    let scenario = match (a.scenario, f.scenario.as_deref()) {
        (Some(s), _) => s,
        (None, Some(s)) => parse_scenario(s).map_err(usage)?,
        (None, None) => return Err(usage("train needs --scenario")),
    };
    let model = a.model.or(f.model).ok_or_else(|| usage("train needs --model"))?;
    let kind = model_kind(model, a.k.or(f.k))?;
    let learning_rates = if !a.lr.is_empty() {
        a.lr.clone()
    } else if let Some(l) = f.learning_rates.clone() {
        l
    } else {
        vec![harness::reference_learning_rate(scenario, kind).unwrap_or(1e-3)]
    };
    let seeds = if !a.seed.is_empty() {
        a.seed.clone()
    } else if let Some(s) = f.seeds.clone() {
        s
    } else {
        vec![resolve_seed(None, f.seed)?]
    };
    let cfg = ExperimentConfig {
        scenario,
        model: kind,
        beta: a.beta.or(f.beta).unwrap_or(1.0),
        learning_rates,
        seeds,
        sizes: f.sizes,
        max_epochs: a.epochs.or(f.epochs).unwrap_or(50),
        batch_size: a.batch_size.or(f.batch_size).unwrap_or(100),
        weight_decay: a.weight_decay.or(f.weight_decay).unwrap_or(0.0),
    };
    cfg.validate().map_err(|e| usage(e.to_string()))?;
    let data = a.data.or(f.data);
    let out = a.out.or(f.out).unwrap_or_else(|| harness::default_out("train"));
    std::fs::create_dir_all(&out)?;
    let fixed = match &data {
        Some(dir) => {
            let ds = read_dataset(dir).with_context(|| format!("reading dataset {}", dir.display()))?;
            if ds.scenario != scenario {
                bail!("dataset {} is scenario {}, not {}", dir.display(), ds.scenario.name(), scenario.name());
            }
            Some(ds)
        }
        None => None,
    };

    let mut runs = Vec::new();
    let mut val_by_lr: Vec<(f64, f64, usize)> = cfg.learning_rates.iter().map(|&l| (l, 0.0, 0)).collect();
    for &lr in &cfg.learning_rates {
        for &seed in &cfg.seeds {
            let start = std::time::Instant::now();
            let tc = cfg.train_config(lr, seed);
            let ds = match &fixed {
                Some(ds) => ds.clone(),
                None => generate(scenario, cfg.sizes(), seed)?,
            };
            let rc = RunConfig { scenario, model: kind, sizes: ds.sizes(), train: tc.clone() };
            let outcome = manilift::nets::train(scenario, kind, &ds.train, &ds.val, &tc)
                .with_context(|| format!("training {}", rc.name()))?;
            let dir = out.join(rc.name());
            std::fs::create_dir_all(&dir)?;
            write_json(&dir.join("config.json"), &rc)?;
            std::fs::write(dir.join("history.csv"), history_csv(&outcome.history))?;
            outcome.best.save(&dir.join("checkpoint.json"))?;
            outcome.last.save(&dir.join("checkpoint_final.json"))?;
            let test = evaluate_model(&outcome.best, &ds.test)?;
            let result = harness::RunResult {
                config_hash: config_hash(&rc),
                config: rc.clone(),
                best_epoch: outcome.best_epoch,
                best_val_loss: outcome.history[outcome.best_epoch].val_loss,
                final_val_loss: outcome.history.last().map_or(f64::NAN, |h| h.val_loss),
                test_final: evaluate_model(&outcome.last, &ds.test)?,
                test: test.clone(),
                history: outcome.history.clone(),
                model: None,
                predictions_csv: String::new(),
            };
            write_json(&dir.join("report.json"), &result)?;
            let record = RunRecord { result: result.clone(), history: outcome.history, wall_time_s: start.elapsed().as_secs_f64() };
            write_json(&dir.join("record.json"), &record)?;
            let slot = val_by_lr.iter_mut().find(|v| v.0 == lr).expect("lr in grid");
            slot.1 += result.best_val_loss;
            slot.2 += 1;
            println!(
                "{}: best epoch {}, val loss {:.5}, test MPJPE {:.4}",
                rc.name(),
                result.best_epoch,
                result.best_val_loss,
                test.aggregated.mpjpe.unwrap_or(f64::NAN)
            );
            runs.push(TrainSummaryRun {
                name: rc.name(),
                learning_rate: lr,
                seed,
                best_epoch: result.best_epoch,
                best_val_loss: result.best_val_loss,
                test_mpjpe: test.aggregated.mpjpe,
                test_oracle_mpjpe: test.oracle.mpjpe,
            });
        }
    }
    let selected = val_by_lr
        .iter()
        .map(|(l, v, n)| (*l, v / *n as f64))
        .fold((f64::NAN, f64::INFINITY), |best, (l, v)| if v < best.1 { (l, v) } else { best })
        .0;
    let summary = TrainSummary { config_hash: cfg.hash(), config: cfg, selected_learning_rate: selected, runs };
    write_json(&out.join("config.json"), &summary.config)?;
    write_json(&out.join("summary.json"), &summary)?;
    Ok(true)
}

fn cmd_eval(a: EvalArgs, f: FileConfig) -> anyhow::Result<bool> {
    let ckpt = a.checkpoint.or(f.checkpoint).ok_or_else(|| usage("eval needs --checkpoint"))?;
    let model = LiftingModel::load(&ckpt).with_context(|| format!("loading checkpoint {}", ckpt.display()))?;
    let ds = match a.data.or(f.data) {
        Some(dir) => read_dataset(&dir).with_context(|| format!("reading dataset {}", dir.display()))?,
        None => {
            let seed = resolve_seed(a.seed, f.seed)?;
            generate(model.scenario, f.sizes.unwrap_or_else(|| model.scenario.default_sizes()), seed)?
        }
    };
    if ds.scenario != model.scenario {
        bail!(
            "checkpoint is for scenario {} but the dataset is scenario {}",
            model.scenario.name(),
            ds.scenario.name()
        );
    }
    let split = match a.split {
        SplitArg::Train => SplitName::Train,
        SplitArg::Val => SplitName::Val,
        SplitArg::Test => SplitName::Test,
    };
    let report = evaluate_model(&model, ds.split(split))?;
    let json = match a.mode {
        ModeArg::Aggregated => serde_json::to_string_pretty(&report.aggregated)?,
        ModeArg::Oracle => serde_json::to_string_pretty(&report.oracle)?,
        ModeArg::PerHead => serde_json::to_string_pretty(&report.per_head)?,
    };
    match a.out.or(f.out) {
        Some(path) => std::fs::write(&path, json + "\n").with_context(|| format!("writing {}", path.display()))?,
        None => {
            use std::io::Write;
            let _ = writeln!(std::io::stdout(), "{json}");
        }
    }
    Ok(true)
}

fn cmd_reproduce(a: ReproduceArgs, f: FileConfig) -> anyhow::Result<bool> {
    let seed = resolve_seed(a.seed, f.seed)?;
    let name = match a.table {
        TableArg::Table1 => "table1",
        TableArg::Torus => "torus",
        TableArg::Prop2 => "prop2",
        TableArg::BetaSweep => "beta-sweep",
        TableArg::KSweep => "k-sweep",
    };
    let out = a.out.or(f.out).unwrap_or_else(|| harness::default_out(name));
    let (text, pass) = match a.table {
        TableArg::Table1 | TableArg::Torus => {
            let (report, times) = if a.table == TableArg::Torus {
                harness::reproduce_torus(seed)?
            } else {
                let choice = if a.lr_search || f.lr_search.unwrap_or(false) { LrChoice::GridSearch } else { LrChoice::Reference };
                harness::reproduce_table1(seed, choice)?
            };
            harness::write_table(&out, &report, &times)?;
            (harness::render_table(&report), report.pass)
        }
        TableArg::Prop2 => {
            let samples = a.mc_samples.or(f.mc_samples).unwrap_or(200_000_000);
            let (report, curve) = harness::reproduce_prop2(seed, samples)?;
            std::fs::create_dir_all(&out)?;
            write_json(&out.join("report.json"), &report)?;
            std::fs::write(out.join("oracle_curve.csv"), curve)?;
            let text = harness::render_prop2(&report);
            std::fs::write(out.join("table.txt"), &text)?;
            (text, report.pass)
        }
        TableArg::BetaSweep | TableArg::KSweep => {
            let (report, times) = harness::reproduce_sweep(name, seed)?;
            harness::write_sweep(&out, &report, &times)?;
            (harness::render_sweep(&report), report.trend_holds)
        }
    };
    print!("{text}");
    println!("outputs in {}", out.display());
    Ok(pass)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(2) } else { ExitCode::SUCCESS };
        }
    };
    let result = load_file_config(cli.config.as_deref()).and_then(|f| match cli.command {
        Command::Generate(a) => cmd_generate(a, f),
        Command::Train(a) => cmd_train(a, f),
        Command::Eval(a) => cmd_eval(a, f),
        Command::Reproduce(a) => cmd_reproduce(a, f),
    });
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => {
            eprintln!("error: results outside tolerance");
            ExitCode::from(1)
        }
        Err(e) if e.is::<UsageError>() => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
