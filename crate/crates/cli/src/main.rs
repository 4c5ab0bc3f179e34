use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use upcore::coreset::{
    select_complete, select_random, select_upcore, Criterion, Method, SelectionConfig,
};
use upcore::datastore::{load_dataset, write_dataset, Dataset, Role};
use upcore::isoforest::{fit_and_score, scores_to_csv, AnomalyScore, ForestConfig};
use upcore::metrics::{evaluate_checkpoint, References};
use upcore::pipeline::{
    correlate, correlation_csv, prepare, run_prepared, run_sweep_prepared, with_threads, write_run,
    write_sweep, CellFilter, Corpus, Report, RunConfig,
};
use upcore::sandbox::{extract_hidden, run_unlearning, Objective, SandboxModel, TrainConfig};
use upcore::synth::{generate, SynthConfig};

const OUTPUT_ENV: &str = "UPCORE_OUTPUT_DIR";

#[derive(Parser)]
#[command(
    name = "upcore",
    version,
    about = "Coreset selection for machine unlearning"
)]
struct Cli {
    /// Worker threads for cell-level parallelism (0 = all cores).
    #[arg(long, global = true, default_value_t = 0)]
    threads: usize,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic topic corpus.
    Synth {
        /// Defaults to 7.
        #[arg(long)]
        topics: Option<usize>,
        /// Defaults to 50.
        #[arg(long)]
        facts_per_topic: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        /// Full generator config as JSON; the flags above override it.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Anomaly scores for one forget set, as CSV.
    Score {
        #[command(flatten)]
        input: HiddenInput,
        #[command(flatten)]
        forest: ForestArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Select a coreset from one forget set.
    Select {
        #[command(flatten)]
        input: HiddenInput,
        #[command(flatten)]
        forest: ForestArgs,
        #[arg(long, default_value = "upcore")]
        method: Method,
        /// Fraction of points to prune.
        #[arg(long, default_value_t = 0.1, conflicts_with = "size")]
        prune: f64,
        /// Number of points to keep.
        #[arg(long)]
        size: Option<usize>,
        /// Seed for the random baseline.
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Sandbox model operations.
    #[command(subcommand)]
    Sandbox(SandboxCommand),
    /// Every (topic, method, selection) cell of a config; writes report.json.
    Run {
        #[arg(long)]
        config: PathBuf,
    },
    /// One run per prune fraction in the config's sweep list.
    Sweep {
        #[arg(long)]
        config: PathBuf,
    },
    /// Pearson correlation of coreset HSV against AUC and final utility.
    Correlate {
        #[arg(required = true)]
        reports: Vec<PathBuf>,
        #[arg(long)]
        method: Option<Objective>,
        #[arg(long)]
        selection: Option<Method>,
        /// CSV destination; stdout when absent.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Subcommand)]
enum SandboxCommand {
    /// Pretrain on a corpus and dump forget sets with hidden vectors.
    Pretrain {
        #[arg(long)]
        data: PathBuf,
        /// Run config supplying model, pretraining and seed settings.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Unlearn a forget set, evaluating every checkpoint.
    Unlearn {
        #[arg(long)]
        model: PathBuf,
        #[arg(long, default_value = "ga")]
        method: Objective,
        #[arg(long)]
        forget: PathBuf,
        #[arg(long)]
        retain: PathBuf,
        /// Extra evaluation sets as `role=path.jsonl`.
        #[arg(long = "eval", value_parser = parse_eval)]
        evals: Vec<(String, PathBuf)>,
        /// Training settings as JSON.
        #[arg(long)]
        train: Option<PathBuf>,
        #[arg(long, default_value_t = 3)]
        truth_ratio_k: usize,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Args)]
struct HiddenInput {
    /// Forget set in the datastore format.
    #[arg(long = "in")]
    input: PathBuf,
    /// Sandbox model for records without hidden vectors.
    #[arg(long)]
    model: Option<PathBuf>,
}

#[derive(Args)]
struct ForestArgs {
    #[arg(long, default_value_t = 100)]
    n_trees: usize,
    #[arg(long, default_value_t = 256)]
    subsample: usize,
    #[arg(long, default_value_t = 0)]
    forest_seed: u64,
}

impl ForestArgs {
    fn config(&self) -> ForestConfig {
        ForestConfig {
            n_trees: self.n_trees,
            subsample: self.subsample,
            seed: self.forest_seed,
        }
    }
}

fn parse_eval(s: &str) -> std::result::Result<(String, PathBuf), String> {
    let (role, path) = s.split_once('=').ok_or("expected role=path")?;
    if role.is_empty() {
        return Err("empty role name".into());
    }
    Ok((role.to_string(), PathBuf::from(path)))
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).with_context(|| format!("creating {}", parent.display()))?;
    }
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<()> {
    write_text(path, &(serde_json::to_string_pretty(value)? + "\n"))
}

fn load_run_config(path: &Path) -> Result<RunConfig> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let mut cfg =
        RunConfig::from_json(&text).with_context(|| format!("parsing {}", path.display()))?;
    if let Some(dir) = std::env::var_os(OUTPUT_ENV) {
        cfg.output_dir = PathBuf::from(dir);
    }
    Ok(cfg)
}

fn load_hidden(input: &HiddenInput) -> Result<Dataset> {
    let ds = load_dataset(&input.input)?;
    if ds.records().iter().all(|r| r.hidden.is_some()) {
        return Ok(ds);
    }
    let Some(model) = &input.model else {
        bail!(
            "{} has records without hidden vectors; pass --model to extract them",
            input.input.display()
        );
    };
    let model: SandboxModel = read_json(model)?;
    Ok(extract_hidden(&model, &ds)?)
}

fn cmd_synth(
    topics: Option<usize>,
    facts: Option<usize>,
    seed: Option<u64>,
    config: Option<&Path>,
    out: &Path,
) -> Result<()> {
    let mut cfg: SynthConfig = match config {
        Some(p) => read_json(p)?,
        None => SynthConfig::default(),
    };
    cfg.topics = topics.unwrap_or(cfg.topics);
    cfg.facts_per_topic = facts.unwrap_or(cfg.facts_per_topic);
    cfg.seed = seed.unwrap_or(cfg.seed);
    let (corpus, vocab) = generate(&cfg)?;
    let written = corpus.write(&vocab, out)?;
    write_json(&out.join("synth.json"), &cfg)?;
    eprintln!("wrote {} files to {}", written.len() + 1, out.display());
    Ok(())
}

fn cmd_score(input: &HiddenInput, forest: &ForestArgs, out: &Path) -> Result<()> {
    let ds = load_hidden(input)?;
    let (_, scores) = fit_and_score(&ds, &forest.config())?;
    write_text(out, &scores_to_csv(&scores))
}

fn cmd_select(
    input: &HiddenInput,
    forest: &ForestArgs,
    method: Method,
    criterion: Criterion,
    seed: u64,
    out: &Path,
) -> Result<()> {
    let ds = load_hidden(input)?;
    let hidden = ds.hidden_map()?;
    let cfg = SelectionConfig {
        criterion,
        seed,
        lambda: None,
    };
    cfg.validate()?;
    let mut scores: Option<Vec<AnomalyScore>> = None;
    let result = match method {
        Method::Upcore => {
            let (_, s) = fit_and_score(&ds, &forest.config())?;
            let r = select_upcore(&s, &hidden, &cfg)?;
            scores = Some(s);
            r
        }
        Method::Random => {
            let mut r = select_random(&ds.ids(), cfg.keep_count(ds.len())?, seed)?;
            r.fill_hsv(&hidden)?;
            r
        }
        Method::Complete => {
            let mut r = select_complete(&ds.ids());
            r.fill_hsv(&hidden)?;
            r
        }
    };
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    write_json(&out.join("selection.json"), &result)?;
    write_dataset(&ds.subset(&result.coreset_ids), out.join("coreset.jsonl"))?;
    write_dataset(&ds.subset(&result.pruned_ids), out.join("pruned.jsonl"))?;
    if let Some(s) = scores {
        write_text(&out.join("scores.csv"), &scores_to_csv(&s))?;
    }
    let fmt = |v: Option<f64>| v.map_or_else(|| "n/a".to_string(), |v| format!("{v:.4}"));
    eprintln!(
        "kept {} of {}, hsv {} -> {}",
        result.coreset_ids.len(),
        ds.len(),
        fmt(result.hsv_before),
        fmt(result.hsv_after)
    );
    Ok(())
}

fn cmd_pretrain(data: &Path, config: Option<&Path>, out: &Path) -> Result<()> {
    let cfg = match config {
        Some(p) => load_run_config(p)?,
        None => RunConfig::default(),
    };
    let prep = prepare(&cfg, Corpus::load(data)?)?;
    write_json(&out.join("model.json"), &prep.base)?;
    write_json(&out.join("pretrain.json"), &prep.pretrain)?;
    let hidden_dir = out.join("hidden");
    fs::create_dir_all(&hidden_dir)
        .with_context(|| format!("creating {}", hidden_dir.display()))?;
    for ((topic, _), ds) in prep.corpus.topics.iter().zip(&prep.forget) {
        write_dataset(ds, hidden_dir.join(format!("forget_{topic}.jsonl")))?;
    }
    eprintln!(
        "pretrained in {} steps, accuracy {:.4}",
        prep.pretrain.steps, prep.pretrain.accuracy
    );
    Ok(())
}

struct UnlearnArgs<'a> {
    model: &'a Path,
    method: Objective,
    forget: &'a Path,
    retain: &'a Path,
    evals: &'a [(String, PathBuf)],
    train: Option<&'a Path>,
    truth_ratio_k: usize,
    out: &'a Path,
}

fn cmd_unlearn(a: UnlearnArgs<'_>) -> Result<()> {
    let model: SandboxModel = read_json(a.model)?;
    let train: TrainConfig = match a.train {
        Some(p) => read_json(p)?,
        None => TrainConfig::default(),
    };
    let forget = load_dataset(a.forget)?;
    let retain = load_dataset(a.retain)?;

    let mut sets = BTreeMap::new();
    sets.insert(Role::Forget.as_str().to_string(), forget.clone());
    sets.insert(Role::Retain.as_str().to_string(), retain.clone());
    for (role, path) in a.evals {
        sets.insert(role.clone(), load_dataset(path)?);
    }
    let refs = References::from_answer_pools(sets.values(), a.truth_ratio_k);

    let checkpoints = run_unlearning(&model, a.method, &forget, &retain, &train)?;
    let mut lines = String::new();
    for c in &checkpoints {
        let bundle = evaluate_checkpoint(&c.model, c.step, &sets, &refs)?;
        lines.push_str(&serde_json::to_string(&bundle)?);
        lines.push('\n');
    }
    write_text(&a.out.join("metrics.jsonl"), &lines)?;
    let last = checkpoints
        .last()
        .expect("at least the starting checkpoint");
    write_json(&a.out.join("model.json"), &last.model)?;
    eprintln!(
        "{} checkpoints written to {}",
        checkpoints.len(),
        a.out.display()
    );
    Ok(())
}

fn cmd_run(config: &Path) -> Result<usize> {
    let cfg = load_run_config(config)?;
    let prep = prepare(&cfg, Corpus::load(&cfg.data_dir)?)?;
    let out = run_prepared(&prep, &prep.config.selection)?;
    let path = write_run(&out, &cfg.output_dir)?;
    let failed = out.report.failed_cells();
    eprintln!(
        "{} cells, {failed} failed; report at {}",
        out.report.cells.len(),
        path.display()
    );
    Ok(failed)
}

fn cmd_sweep(config: &Path) -> Result<usize> {
    let cfg = load_run_config(config)?;
    let prep = prepare(&cfg, Corpus::load(&cfg.data_dir)?)?;
    let sweep = run_sweep_prepared(&prep)?;
    let path = write_sweep(&sweep, &cfg.output_dir)?;
    let failed = sweep.failed_cells();
    eprintln!(
        "{} fractions, {failed} failed cells; report at {}",
        sweep.fractions.len(),
        path.display()
    );
    Ok(failed)
}

fn cmd_correlate(reports: &[PathBuf], filter: CellFilter, out: Option<&Path>) -> Result<()> {
    let reports: Vec<Report> = reports
        .iter()
        .map(|p| read_json(p))
        .collect::<Result<_>>()?;
    let csv = correlation_csv(&correlate(&reports, &filter)?);
    match out {
        Some(p) => write_text(p, &csv),
        None => {
            print!("{csv}");
            Ok(())
        }
    }
}

fn dispatch(cli: Cli) -> Result<usize> {
    match cli.command {
        Command::Synth {
            topics,
            facts_per_topic,
            seed,
            config,
            out,
        } => cmd_synth(topics, facts_per_topic, seed, config.as_deref(), &out).map(|_| 0),
        Command::Score { input, forest, out } => cmd_score(&input, &forest, &out).map(|_| 0),
        Command::Select {
            input,
            forest,
            method,
            prune,
            size,
            seed,
            out,
        } => {
            let criterion = size.map_or(Criterion::Proportional(prune), Criterion::Size);
            cmd_select(&input, &forest, method, criterion, seed, &out).map(|_| 0)
        }
        Command::Sandbox(SandboxCommand::Pretrain { data, config, out }) => {
            cmd_pretrain(&data, config.as_deref(), &out).map(|_| 0)
        }
        Command::Sandbox(SandboxCommand::Unlearn {
            model,
            method,
            forget,
            retain,
            evals,
            train,
            truth_ratio_k,
            out,
        }) => cmd_unlearn(UnlearnArgs {
            model: &model,
            method,
            forget: &forget,
            retain: &retain,
            evals: &evals,
            train: train.as_deref(),
            truth_ratio_k,
            out: &out,
        })
        .map(|_| 0),
        Command::Run { config } => cmd_run(&config),
        Command::Sweep { config } => cmd_sweep(&config),
        Command::Correlate {
            reports,
            method,
            selection,
            out,
        } => cmd_correlate(&reports, CellFilter { method, selection }, out.as_deref()).map(|_| 0),
    }
}

/// The error chain, skipping causes already spelled out by their parent.
fn describe(e: &anyhow::Error) -> String {
    let mut out = String::new();
    for cause in e.chain() {
        let msg = cause.to_string();
        if !out.contains(&msg) {
            if !out.is_empty() {
                out.push_str(": ");
            }
            out.push_str(&msg);
        }
    }
    out
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let threads = cli.threads;
    let result = with_threads(threads, move || dispatch(cli)).map_err(anyhow::Error::from);
    match result.and_then(|r| r) {
        Ok(0) => ExitCode::SUCCESS,
        Ok(_) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {}", describe(&e));
            ExitCode::from(2)
        }
    }
}
