//! End-to-end runs: pretrain, score, select, unlearn, evaluate, report.
//!
//! A run is a grid of cells, one per (topic, method, selection). Cells share
//! the pretrained base model and the per-topic selections but are otherwise
//! independent; they may run in parallel and are merged in canonical order,
//! so the report bytes never depend on the thread count.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::coreset::{
    select_complete, select_random, select_upcore, Criterion, Method, SelectionConfig,
    SelectionResult,
};
use crate::datastore::{load_dataset, write_dataset, Dataset, Role};
use crate::isoforest::{scores_to_csv, AnomalyScore, ForestConfig, IsoForest};
use crate::metrics::{
    auc, auc_from_points, evaluate_checkpoint, pearson, MetricBundle, References, TradeoffCurve,
    YAxis, METRIC_RULES,
};
use crate::sandbox::{
    extract_hidden, pretrain, run_unlearning, ModelConfig, Objective, PretrainConfig,
    PretrainReport, SandboxModel, TrainConfig, Vocab,
};
use crate::seed::derive_seed;
use crate::synth::{END_WORD, REFUSAL_WORD};
use crate::{Error, Result};

pub const REPORT_FORMAT: &str = "upcore-report/1";
pub const SWEEP_FORMAT: &str = "upcore-sweep/1";

/// Role name under which the UPCORE-pruned points are evaluated.
pub const PRUNED_ROLE: &str = "pruned";

/// Topic forget sets plus the shared evaluation sets.
#[derive(Debug, Clone, PartialEq)]
pub struct Corpus {
    /// `(topic, forget set)`, sorted by topic name.
    pub topics: Vec<(String, Dataset)>,
    /// Shared non-forget sets keyed by role.
    pub roles: BTreeMap<Role, Dataset>,
    pub vocab_size: usize,
    pub end_token: u32,
    pub refusal_tokens: Vec<u32>,
}

impl Corpus {
    /// Read `forget_<topic>.jsonl` files plus `<role>.jsonl` for each
    /// non-forget role that exists. `vocab.txt` is optional; without it the
    /// end token is one past the largest id seen.
    pub fn load(dir: impl AsRef<Path>) -> Result<Corpus> {
        let dir = dir.as_ref();
        let entries = fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
        let mut topics = Vec::new();
        for entry in entries {
            let path = entry.map_err(|e| Error::io(dir, e))?.path();
            let Some(name) = path.file_name().and_then(|n| n.to_str()) else {
                continue;
            };
            if let Some(topic) = name
                .strip_prefix("forget_")
                .and_then(|n| n.strip_suffix(".jsonl"))
            {
                topics.push((topic.to_string(), load_dataset(&path)?));
            }
        }
        if topics.is_empty() {
            return Err(Error::invalid(format!(
                "no forget_<topic>.jsonl files in {}",
                dir.display()
            )));
        }
        topics.sort_by(|a, b| a.0.cmp(&b.0));

        let mut roles = BTreeMap::new();
        for role in Role::ALL {
            if role == Role::Forget {
                continue;
            }
            let path = dir.join(format!("{role}.jsonl"));
            if path.exists() {
                roles.insert(role, load_dataset(&path)?);
            }
        }
        if !roles.contains_key(&Role::Retain) {
            return Err(Error::invalid(format!(
                "{} has no retain.jsonl",
                dir.display()
            )));
        }

        let vocab_path = dir.join("vocab.txt");
        let max_id = topics
            .iter()
            .map(|(_, d)| d)
            .chain(roles.values())
            .flat_map(|d| d.records())
            .flat_map(|r| r.question.iter().chain(&r.answer))
            .copied()
            .max()
            .unwrap_or(0);
        let (vocab_size, end_token, refusal_tokens) = if vocab_path.exists() {
            let text = fs::read_to_string(&vocab_path).map_err(|e| Error::io(&vocab_path, e))?;
            let vocab = Vocab::from_text(&text)?;
            let end = vocab
                .id(END_WORD)
                .ok_or_else(|| Error::invalid(format!("vocab.txt has no {END_WORD} entry")))?;
            if max_id as usize >= vocab.len() {
                return Err(Error::OutOfVocabulary {
                    id: max_id,
                    vocab_size: vocab.len(),
                });
            }
            (
                vocab.len(),
                end,
                vocab.id(REFUSAL_WORD).into_iter().collect(),
            )
        } else {
            (max_id as usize + 2, max_id + 1, Vec::new())
        };
        Ok(Corpus {
            topics,
            roles,
            vocab_size,
            end_token,
            refusal_tokens,
        })
    }

    /// Write the layout [`Corpus::load`] reads. Returns the files written.
    pub fn write(&self, vocab: &Vocab, dir: impl AsRef<Path>) -> Result<Vec<PathBuf>> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let mut written = Vec::new();
        for (topic, ds) in &self.topics {
            let path = dir.join(format!("forget_{topic}.jsonl"));
            write_dataset(ds, &path)?;
            written.push(path);
        }
        for (role, ds) in &self.roles {
            let path = dir.join(format!("{role}.jsonl"));
            write_dataset(ds, &path)?;
            written.push(path);
        }
        let path = dir.join("vocab.txt");
        fs::write(&path, vocab.to_text()).map_err(|e| Error::io(&path, e))?;
        written.push(path);
        Ok(written)
    }

    /// Every fact in the corpus without hidden vectors: the pretraining set.
    pub fn all_facts(&self) -> Result<Dataset> {
        let records = self
            .topics
            .iter()
            .map(|(_, d)| d)
            .chain(self.roles.values())
            .flat_map(|d| d.records())
            .map(|r| {
                let mut r = r.clone();
                r.hidden = None;
                r
            })
            .collect();
        Dataset::new(records, "corpus")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ForestSettings {
    pub n_trees: usize,
    pub subsample: usize,
    /// Defaults to a value derived from the master seed.
    pub seed: Option<u64>,
}

impl Default for ForestSettings {
    fn default() -> Self {
        let d = ForestConfig::default();
        ForestSettings {
            n_trees: d.n_trees,
            subsample: d.subsample,
            seed: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSettings {
    pub embed_dim: usize,
    pub hidden_dim: usize,
}

impl Default for ModelSettings {
    fn default() -> Self {
        ModelSettings {
            embed_dim: 16,
            hidden_dim: 32,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub data_dir: PathBuf,
    pub output_dir: PathBuf,
    pub master_seed: u64,
    pub selection: SelectionConfig,
    pub forest: ForestSettings,
    pub model: ModelSettings,
    pub pretrain: PretrainConfig,
    pub sandbox: TrainConfig,
    pub methods: Vec<Objective>,
    pub selections: Vec<Method>,
    /// Prune fractions for [`run_sweep`].
    pub sweep: Option<Vec<f64>>,
    pub y_axes: Vec<YAxis>,
    /// Perturbed answers per record for the truth ratio.
    pub truth_ratio_k: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            data_dir: PathBuf::from("data"),
            output_dir: PathBuf::from("out"),
            master_seed: 0,
            selection: SelectionConfig::default(),
            forest: ForestSettings::default(),
            model: ModelSettings::default(),
            pretrain: PretrainConfig::default(),
            sandbox: TrainConfig::default(),
            methods: vec![Objective::GradientAscent],
            selections: vec![Method::Upcore, Method::Random, Method::Complete],
            sweep: None,
            y_axes: default_axes(),
            truth_ratio_k: 3,
        }
    }
}

fn default_axes() -> Vec<YAxis> {
    vec![
        YAxis::Rouge(Role::Retain.as_str().to_string()),
        YAxis::Rouge(Role::Neighborhood.as_str().to_string()),
        YAxis::ModelUtility,
    ]
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<RunConfig> {
        let cfg: RunConfig = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.selection.validate()?;
        self.sandbox.validate()?;
        if self.methods.is_empty() || self.selections.is_empty() {
            return Err(Error::invalid("methods and selections must be non-empty"));
        }
        if self.y_axes.is_empty() {
            return Err(Error::invalid("y_axes must be non-empty"));
        }
        if self.model.embed_dim == 0 || self.model.hidden_dim == 0 {
            return Err(Error::invalid("model dimensions must be >= 1"));
        }
        if let Some(sweep) = &self.sweep {
            if let Some(p) = sweep.iter().find(|p| !(0.0..=0.5).contains(*p)) {
                return Err(Error::invalid(format!(
                    "sweep fraction {p} outside [0, 0.5]"
                )));
            }
        }
        Ok(())
    }

    fn forest_config(&self, topic: &str) -> ForestConfig {
        let base = self
            .forest
            .seed
            .unwrap_or_else(|| derive_seed(self.master_seed, &["forest"]));
        ForestConfig {
            n_trees: self.forest.n_trees,
            subsample: self.forest.subsample,
            seed: derive_seed(base, &["topic", topic]),
        }
    }

    /// The config as embedded in reports: resolved, without the output location.
    fn report_view(&self) -> Result<serde_json::Value> {
        let mut v = serde_json::to_value(self)?;
        if let Some(map) = v.as_object_mut() {
            map.remove("output_dir");
        }
        Ok(v)
    }
}

/// Everything shared by the cells of a run.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub config: RunConfig,
    pub corpus: Corpus,
    pub base: SandboxModel,
    pub pretrain: PretrainReport,
    /// Forget sets with hidden vectors, parallel to `corpus.topics`.
    pub forget: Vec<Dataset>,
    /// `"provided"` when every forget record came with a vector, else `"sandbox"`.
    pub hidden_source: String,
}

/// Pretrain the base model and attach hidden vectors to every forget set.
pub fn prepare(config: &RunConfig, corpus: Corpus) -> Result<Prepared> {
    config.validate()?;
    let mut config = config.clone();
    if config.sandbox.refusal_token_ids.is_empty() {
        config.sandbox.refusal_token_ids = corpus.refusal_tokens.clone();
    }
    let init = SandboxModel::new(&ModelConfig {
        vocab_size: corpus.vocab_size,
        embed_dim: config.model.embed_dim,
        hidden_dim: config.model.hidden_dim,
        end_token: corpus.end_token,
        seed: derive_seed(config.master_seed, &["model-init"]),
    })?;
    let (base, pretrain_report) = pretrain(&init, &corpus.all_facts()?, &config.pretrain)?;

    let provided = corpus
        .topics
        .iter()
        .all(|(_, d)| d.records().iter().all(|r| r.hidden.is_some()));
    let forget = corpus
        .topics
        .iter()
        .map(|(_, d)| {
            if provided {
                Ok(d.clone())
            } else {
                extract_hidden(&base, d)
            }
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Prepared {
        config,
        corpus,
        base,
        pretrain: pretrain_report,
        forget,
        hidden_source: if provided { "provided" } else { "sandbox" }.to_string(),
    })
}

/// Anomaly scores and every selection for one topic.
#[derive(Debug, Clone)]
pub struct TopicSelection {
    pub topic: String,
    pub scores: Vec<AnomalyScore>,
    pub selections: BTreeMap<Method, SelectionResult>,
}

/// Score and select one topic. Every selection gets both variance fields.
pub fn select_topic(
    config: &RunConfig,
    selection: &SelectionConfig,
    topic: &str,
    forget: &Dataset,
) -> Result<TopicSelection> {
    let forest_cfg = config.forest_config(topic);
    let points: Vec<Vec<f64>> = forget
        .records()
        .iter()
        .map(|r| {
            r.hidden
                .clone()
                .ok_or_else(|| Error::MissingHidden(r.id.clone()))
        })
        .collect::<Result<_>>()?;
    let forest = IsoForest::fit(&points, &forest_cfg)?;
    let scores = forest.score_all(forget)?;
    let hidden = forget.hidden_map()?;
    let upcore = select_upcore(&scores, &hidden, selection)?;

    let ids = forget.ids();
    let random_seed = derive_seed(config.master_seed, &["random", topic]);
    let mut random = select_random(&ids, upcore.coreset_ids.len(), random_seed)?;
    random.fill_hsv(&hidden)?;
    let mut complete = select_complete(&ids);
    complete.fill_hsv(&hidden)?;

    let mut selections = BTreeMap::new();
    selections.insert(Method::Upcore, upcore);
    selections.insert(Method::Random, random);
    selections.insert(Method::Complete, complete);
    Ok(TopicSelection {
        topic: topic.to_string(),
        scores,
        selections,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CellStatus {
    Ok,
    Error,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PrunedRouge {
    pub base: f64,
    #[serde(rename = "final")]
    pub last: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellReport {
    pub topic: String,
    pub method: Objective,
    pub selection: Method,
    pub status: CellStatus,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub error: Option<String>,
    pub forget_size: usize,
    pub coreset_size: usize,
    pub tau: Option<f64>,
    pub hsv_before: Option<f64>,
    pub hsv_after: Option<f64>,
    /// Trade-off AUC per y-axis name.
    pub auc: BTreeMap<String, f64>,
    pub base_metrics: Option<MetricBundle>,
    pub final_metrics: Option<MetricBundle>,
    /// ROUGE on the UPCORE-pruned points before and after unlearning.
    pub pruned_rouge: Option<PrunedRouge>,
    #[serde(skip)]
    pub bundles: Vec<MetricBundle>,
    #[serde(skip)]
    pub curves: Vec<TradeoffCurve>,
}

impl CellReport {
    pub fn is_ok(&self) -> bool {
        self.status == CellStatus::Ok
    }

    fn key(&self) -> (&str, &str, &str) {
        (&self.topic, self.method.as_str(), self.selection.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TopicReport {
    pub topic: String,
    pub size: usize,
    pub hsv: Option<f64>,
    pub tau: Option<f64>,
    pub pruned_ids: Vec<String>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub error: Option<String>,
}

/// Mean AUC over the topics of one (method, selection, axis) triple, in both
/// averaging orders.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub method: Objective,
    pub selection: Method,
    pub axis: String,
    pub topics: usize,
    /// AUC per topic, then the mean.
    pub auc_then_mean: f64,
    /// Curve points averaged across topics per checkpoint, then one AUC.
    pub mean_then_auc: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub format: String,
    pub metric_rules: String,
    pub config: serde_json::Value,
    pub pretrain: PretrainReport,
    pub hidden_source: String,
    pub topics: Vec<TopicReport>,
    pub cells: Vec<CellReport>,
    pub summary: Vec<SummaryRow>,
}

impl Report {
    pub fn failed_cells(&self) -> usize {
        self.cells.iter().filter(|c| !c.is_ok()).count()
    }

    pub fn to_json(&self) -> Result<String> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        Ok(s)
    }
}

/// A run together with the per-topic selections behind it.
#[derive(Debug, Clone)]
pub struct RunOutput {
    pub report: Report,
    pub selections: Vec<std::result::Result<TopicSelection, String>>,
}

fn for_each_cell<F>(cells: Vec<(usize, Objective, Method)>, f: F) -> Vec<CellReport>
where
    F: Fn(usize, Objective, Method) -> CellReport + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        cells.into_par_iter().map(|(t, m, s)| f(t, m, s)).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        cells.into_iter().map(|(t, m, s)| f(t, m, s)).collect()
    }
}

/// Run every cell for one selection rule.
pub fn run_prepared(prep: &Prepared, selection: &SelectionConfig) -> Result<RunOutput> {
    let cfg = &prep.config;
    let selections: Vec<std::result::Result<TopicSelection, String>> = prep
        .corpus
        .topics
        .iter()
        .zip(&prep.forget)
        .map(|((topic, _), forget)| {
            select_topic(cfg, selection, topic, forget).map_err(|e| e.to_string())
        })
        .collect();

    let mut grid = Vec::new();
    for t in 0..prep.corpus.topics.len() {
        for &m in &cfg.methods {
            for &s in &cfg.selections {
                grid.push((t, m, s));
            }
        }
    }
    let mut cells = for_each_cell(grid, |t, method, sel| {
        let topic = &prep.corpus.topics[t].0;
        match &selections[t] {
            Ok(ts) => run_cell(prep, ts, &prep.forget[t], method, sel),
            Err(e) => failed_cell(topic, method, sel, prep.forget[t].len(), e.clone()),
        }
    });
    cells.sort_by(|a, b| a.key().cmp(&b.key()));
    cells.dedup_by(|a, b| a.key() == b.key());

    let topics = prep
        .corpus
        .topics
        .iter()
        .zip(&selections)
        .map(|((topic, ds), sel)| match sel {
            Ok(ts) => {
                let up = &ts.selections[&Method::Upcore];
                TopicReport {
                    topic: topic.clone(),
                    size: ds.len(),
                    hsv: up.hsv_before,
                    tau: up.tau,
                    pruned_ids: up.pruned_ids.clone(),
                    error: None,
                }
            }
            Err(e) => TopicReport {
                topic: topic.clone(),
                size: ds.len(),
                hsv: None,
                tau: None,
                pruned_ids: Vec::new(),
                error: Some(e.clone()),
            },
        })
        .collect();

    let mut config = cfg.report_view()?;
    if let Some(map) = config.as_object_mut() {
        map.insert("selection".into(), serde_json::to_value(selection)?);
    }
    let summary = summarize(&cells, &cfg.y_axes)?;
    Ok(RunOutput {
        report: Report {
            format: REPORT_FORMAT.to_string(),
            metric_rules: METRIC_RULES.to_string(),
            config,
            pretrain: prep.pretrain.clone(),
            hidden_source: prep.hidden_source.clone(),
            topics,
            cells,
            summary,
        },
        selections,
    })
}

fn failed_cell(
    topic: &str,
    method: Objective,
    selection: Method,
    forget_size: usize,
    error: String,
) -> CellReport {
    CellReport {
        topic: topic.to_string(),
        method,
        selection,
        status: CellStatus::Error,
        error: Some(error),
        forget_size,
        coreset_size: 0,
        tau: None,
        hsv_before: None,
        hsv_after: None,
        auc: BTreeMap::new(),
        base_metrics: None,
        final_metrics: None,
        pruned_rouge: None,
        bundles: Vec::new(),
        curves: Vec::new(),
    }
}

/// Datasets each checkpoint is scored on, keyed by role name.
fn eval_sets(
    prep: &Prepared,
    forget: &Dataset,
    pruned_ids: &[String],
) -> BTreeMap<String, Dataset> {
    let mut sets = BTreeMap::new();
    sets.insert(Role::Forget.as_str().to_string(), forget.clone());
    for (role, ds) in &prep.corpus.roles {
        sets.insert(role.as_str().to_string(), ds.clone());
    }
    if !pruned_ids.is_empty() {
        sets.insert(PRUNED_ROLE.to_string(), forget.subset(pruned_ids));
    }
    sets
}

fn run_cell(
    prep: &Prepared,
    ts: &TopicSelection,
    forget: &Dataset,
    method: Objective,
    sel: Method,
) -> CellReport {
    let chosen = &ts.selections[&sel];
    let mut cell = failed_cell(&ts.topic, method, sel, forget.len(), String::new());
    cell.coreset_size = chosen.coreset_ids.len();
    cell.tau = chosen.tau;
    cell.hsv_before = chosen.hsv_before;
    cell.hsv_after = chosen.hsv_after;
    match unlearn_and_evaluate(prep, ts, forget, method, chosen) {
        Ok((bundles, curves)) => {
            cell.status = CellStatus::Ok;
            cell.error = None;
            cell.auc = curves.iter().map(|c| (c.axis.to_string(), c.auc)).collect();
            cell.base_metrics = bundles.first().cloned();
            cell.final_metrics = bundles.last().cloned();
            cell.pruned_rouge = match (bundles.first(), bundles.last()) {
                (Some(a), Some(b)) => match (a.roles.get(PRUNED_ROLE), b.roles.get(PRUNED_ROLE)) {
                    (Some(x), Some(y)) => Some(PrunedRouge {
                        base: x.rouge,
                        last: y.rouge,
                    }),
                    _ => None,
                },
                _ => None,
            };
            cell.bundles = bundles;
            cell.curves = curves;
        }
        Err(e) => cell.error = Some(e.to_string()),
    }
    cell
}

fn unlearn_and_evaluate(
    prep: &Prepared,
    ts: &TopicSelection,
    forget: &Dataset,
    method: Objective,
    chosen: &SelectionResult,
) -> Result<(Vec<MetricBundle>, Vec<TradeoffCurve>)> {
    let cfg = &prep.config;
    let coreset = forget.subset(&chosen.coreset_ids);
    let retain = prep
        .corpus
        .roles
        .get(&Role::Retain)
        .cloned()
        .unwrap_or_else(|| Dataset::empty("retain"));
    let checkpoints = run_unlearning(&prep.base, method, &coreset, &retain, &cfg.sandbox)?;

    let sets = eval_sets(prep, forget, &ts.selections[&Method::Upcore].pruned_ids);
    let refs = References::from_answer_pools(sets.values(), cfg.truth_ratio_k);
    let bundles = checkpoints
        .iter()
        .map(|c| evaluate_checkpoint(&c.model, c.step, &sets, &refs))
        .collect::<Result<Vec<_>>>()?;
    let curves = cfg
        .y_axes
        .iter()
        .map(|axis| auc(&bundles, axis))
        .collect::<Result<Vec<_>>>()?;
    Ok((bundles, curves))
}

fn summarize(cells: &[CellReport], axes: &[YAxis]) -> Result<Vec<SummaryRow>> {
    let mut groups: BTreeMap<(&str, &str), Vec<&CellReport>> = BTreeMap::new();
    for c in cells.iter().filter(|c| c.is_ok()) {
        groups
            .entry((c.method.as_str(), c.selection.as_str()))
            .or_default()
            .push(c);
    }
    let mut rows = Vec::new();
    for group in groups.values() {
        for axis in axes {
            let name = axis.to_string();
            let curves: Vec<&TradeoffCurve> = group
                .iter()
                .filter_map(|c| c.curves.iter().find(|k| k.axis == *axis))
                .collect();
            if curves.is_empty() {
                continue;
            }
            let n = curves.len() as f64;
            let auc_then_mean = curves.iter().map(|c| c.auc).sum::<f64>() / n;
            let mean_then_auc = auc_from_points(&mean_curve(&curves)?)?;
            rows.push(SummaryRow {
                method: group[0].method,
                selection: group[0].selection,
                axis: name,
                topics: curves.len(),
                auc_then_mean,
                mean_then_auc,
            });
        }
    }
    Ok(rows)
}

/// Pointwise mean of curves that share a checkpoint schedule.
fn mean_curve(curves: &[&TradeoffCurve]) -> Result<Vec<(f64, f64)>> {
    let len = curves[0].points.len();
    if curves.iter().any(|c| c.points.len() != len) {
        return Err(Error::invalid("curves have different checkpoint schedules"));
    }
    let n = curves.len() as f64;
    Ok((0..len)
        .map(|i| {
            let x = curves.iter().map(|c| c.points[i].x).sum::<f64>() / n;
            let y = curves.iter().map(|c| c.points[i].y).sum::<f64>() / n;
            (x, y)
        })
        .collect())
}

/// Prepare and run in memory, using the config's selection rule.
pub fn run(config: &RunConfig, corpus: Corpus) -> Result<RunOutput> {
    let prep = prepare(config, corpus)?;
    run_prepared(&prep, &prep.config.selection.clone())
}

/// Run `f` on a pool of `threads` workers (`0` picks the default).
pub fn with_threads<T: Send>(threads: usize, f: impl FnOnce() -> T + Send) -> Result<T> {
    #[cfg(feature = "parallel")]
    {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .map_err(|e| Error::invalid(format!("thread pool: {e}")))?;
        Ok(pool.install(f))
    }
    #[cfg(not(feature = "parallel"))]
    {
        let _ = threads;
        Ok(f())
    }
}

/// Write `report.json` plus per-topic selections and per-cell bundles and curves.
pub fn write_run(out: &RunOutput, dir: impl AsRef<Path>) -> Result<PathBuf> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for sel in out.selections.iter().flatten() {
        let tdir = dir.join("topics").join(&sel.topic);
        fs::create_dir_all(&tdir).map_err(|e| Error::io(&tdir, e))?;
        write_file(&tdir.join("scores.csv"), &scores_to_csv(&sel.scores))?;
        for (method, result) in &sel.selections {
            let text = serde_json::to_string_pretty(result)? + "\n";
            write_file(
                &tdir.join(format!("selection_{}.json", method.as_str())),
                &text,
            )?;
        }
    }
    for cell in &out.report.cells {
        if cell.bundles.is_empty() {
            continue;
        }
        let cdir = dir.join("cells").join(&cell.topic).join(format!(
            "{}_{}",
            cell.method.as_str(),
            cell.selection.as_str()
        ));
        fs::create_dir_all(&cdir).map_err(|e| Error::io(&cdir, e))?;
        let mut lines = String::new();
        for b in &cell.bundles {
            lines.push_str(&serde_json::to_string(b)?);
            lines.push('\n');
        }
        write_file(&cdir.join("metrics.jsonl"), &lines)?;
        for curve in &cell.curves {
            write_file(
                &cdir.join(format!("curve_{}.csv", curve.axis)),
                &curve.to_csv(),
            )?;
        }
    }
    let path = dir.join("report.json");
    write_file(&path, &out.report.to_json()?)?;
    Ok(path)
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AucAtFraction {
    pub fraction: f64,
    pub method: Objective,
    pub selection: Method,
    pub axis: String,
    pub auc_then_mean: f64,
    pub mean_then_auc: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HsvAtFraction {
    pub fraction: f64,
    pub topic: String,
    pub coreset_size: usize,
    pub hsv_after: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepReport {
    pub format: String,
    pub metric_rules: String,
    pub config: serde_json::Value,
    pub fractions: Vec<f64>,
    pub auc_vs_fraction: Vec<AucAtFraction>,
    pub hsv_vs_fraction: Vec<HsvAtFraction>,
    #[serde(skip)]
    pub runs: Vec<RunOutput>,
}

impl SweepReport {
    pub fn failed_cells(&self) -> usize {
        self.runs.iter().map(|r| r.report.failed_cells()).sum()
    }

    pub fn to_json(&self) -> Result<String> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        Ok(s)
    }
}

/// One full run per prune fraction, sharing the pretrained base model.
pub fn run_sweep_prepared(prep: &Prepared) -> Result<SweepReport> {
    let cfg = &prep.config;
    let fractions = match &cfg.sweep {
        Some(s) if !s.is_empty() => s.clone(),
        _ => return Err(Error::invalid("sweep needs a non-empty fraction list")),
    };
    let mut runs = Vec::with_capacity(fractions.len());
    let mut auc_rows = Vec::new();
    let mut hsv_rows = Vec::new();
    for &p in &fractions {
        let selection = SelectionConfig {
            criterion: Criterion::Proportional(p),
            ..cfg.selection
        };
        let out = run_prepared(prep, &selection)?;
        for row in &out.report.summary {
            auc_rows.push(AucAtFraction {
                fraction: p,
                method: row.method,
                selection: row.selection,
                axis: row.axis.clone(),
                auc_then_mean: row.auc_then_mean,
                mean_then_auc: row.mean_then_auc,
            });
        }
        for ts in out.selections.iter().flatten() {
            let up = &ts.selections[&Method::Upcore];
            hsv_rows.push(HsvAtFraction {
                fraction: p,
                topic: ts.topic.clone(),
                coreset_size: up.coreset_ids.len(),
                hsv_after: up.hsv_after,
            });
        }
        runs.push(out);
    }
    Ok(SweepReport {
        format: SWEEP_FORMAT.to_string(),
        metric_rules: METRIC_RULES.to_string(),
        config: cfg.report_view()?,
        fractions,
        auc_vs_fraction: auc_rows,
        hsv_vs_fraction: hsv_rows,
        runs,
    })
}

pub fn run_sweep(config: &RunConfig, corpus: Corpus) -> Result<SweepReport> {
    run_sweep_prepared(&prepare(config, corpus)?)
}

/// Directory name for one sweep fraction, e.g. `p0.10`.
pub fn fraction_dir(p: f64) -> String {
    format!("p{p:.2}")
}

/// `sweep.json` plus one run directory per fraction.
pub fn write_sweep(sweep: &SweepReport, dir: impl AsRef<Path>) -> Result<PathBuf> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for (p, run) in sweep.fractions.iter().zip(&sweep.runs) {
        write_run(run, dir.join(fraction_dir(*p)))?;
    }
    let path = dir.join("sweep.json");
    write_file(&path, &sweep.to_json()?)?;
    Ok(path)
}

/// Restrict correlation inputs to one method and/or selection.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct CellFilter {
    pub method: Option<Objective>,
    pub selection: Option<Method>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationRow {
    pub column: String,
    pub pearson: f64,
    pub n: usize,
}

/// Column name of the final-checkpoint utility in correlation output.
pub const FINAL_UTILITY_COLUMN: &str = "final_model_utility";

/// Pearson correlation of each successful cell's coreset HSV against every
/// AUC column and the final model utility.
pub fn correlate(reports: &[Report], filter: &CellFilter) -> Result<Vec<CorrelationRow>> {
    let cells: Vec<&CellReport> = reports
        .iter()
        .flat_map(|r| &r.cells)
        .filter(|c| c.is_ok() && c.hsv_after.is_some())
        .filter(|c| filter.method.is_none_or(|m| m == c.method))
        .filter(|c| filter.selection.is_none_or(|s| s == c.selection))
        .collect();
    if cells.len() < 2 {
        return Err(Error::invalid(format!(
            "correlation needs at least 2 cells with HSV and AUC, found {}",
            cells.len()
        )));
    }
    let mut columns: Vec<String> = cells[0].auc.keys().cloned().collect();
    columns.retain(|k| cells.iter().all(|c| c.auc.contains_key(k)));

    let hsv: Vec<f64> = cells.iter().map(|c| c.hsv_after.unwrap_or(0.0)).collect();
    let mut rows = Vec::new();
    for col in &columns {
        let ys: Vec<f64> = cells.iter().map(|c| c.auc[col]).collect();
        rows.push(CorrelationRow {
            column: format!("auc_{col}"),
            pearson: pearson(&hsv, &ys)?,
            n: ys.len(),
        });
    }
    let utility: Option<Vec<f64>> = cells
        .iter()
        .map(|c| c.final_metrics.as_ref().and_then(|m| m.model_utility))
        .collect();
    if let Some(ys) = utility {
        rows.push(CorrelationRow {
            column: FINAL_UTILITY_COLUMN.to_string(),
            pearson: pearson(&hsv, &ys)?,
            n: ys.len(),
        });
    }
    Ok(rows)
}

/// `column,pearson,n` with a header row.
pub fn correlation_csv(rows: &[CorrelationRow]) -> String {
    let mut out = String::from("column,pearson,n\n");
    for r in rows {
        out.push_str(&format!("{},{},{}\n", r.column, r.pearson, r.n));
    }
    out
}

/// Hidden vectors per id across every forget set, for ad-hoc HSV checks.
pub fn forget_hidden(prep: &Prepared) -> Result<HashMap<String, Vec<f64>>> {
    let mut map = HashMap::new();
    for ds in &prep.forget {
        map.extend(ds.hidden_map()?);
    }
    Ok(map)
}
