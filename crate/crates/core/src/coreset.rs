//! Core forget-set selection and hidden-state variance.
//!
//! UPCORE keeps the lowest-scoring points of the forget set and prunes the
//! rest; `random` and `complete` are the size-matched and no-pruning baselines.

use std::collections::{HashMap, HashSet};

use rand::seq::index;
use serde::{Deserialize, Serialize};

use crate::isoforest::AnomalyScore;
use crate::seed::rng_from_seed;
use crate::{Error, Result};

/// Hidden-state variance: mean over dimensions of the population variance
/// (trace of the covariance divided by the dimension). Two-pass.
pub fn hsv<V: AsRef<[f64]>>(vectors: &[V]) -> Result<f64> {
    if vectors.len() < 2 {
        return Err(Error::invalid(format!(
            "hidden-state variance needs at least 2 vectors, got {}",
            vectors.len()
        )));
    }
    let dim = vectors[0].as_ref().len();
    if dim == 0 {
        return Err(Error::invalid("vectors have dimension 0"));
    }
    if let Some(v) = vectors.iter().find(|v| v.as_ref().len() != dim) {
        return Err(Error::VectorDimension {
            expected: dim,
            got: v.as_ref().len(),
        });
    }
    let n = vectors.len() as f64;
    let mut mean = vec![0.0; dim];
    for v in vectors {
        for (m, x) in mean.iter_mut().zip(v.as_ref()) {
            *m += x;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n);

    let mut sq = vec![0.0; dim];
    for v in vectors {
        for ((s, x), m) in sq.iter_mut().zip(v.as_ref()).zip(&mean) {
            let d = x - m;
            *s += d * d;
        }
    }
    Ok(sq.iter().map(|s| s / n).sum::<f64>() / dim as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Criterion {
    /// Keep exactly `k` points.
    Size(usize),
    /// Prune fraction `p` in `[0, 0.5]`.
    Proportional(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SelectionConfig {
    pub criterion: Criterion,
    #[serde(default)]
    pub seed: u64,
    /// Trade-off weight, carried as metadata only; thresholding ignores it.
    #[serde(default)]
    pub lambda: Option<f64>,
}

impl Default for SelectionConfig {
    fn default() -> Self {
        SelectionConfig {
            criterion: Criterion::Proportional(0.1),
            seed: 0,
            lambda: None,
        }
    }
}

impl SelectionConfig {
    pub fn validate(&self) -> Result<()> {
        match self.criterion {
            Criterion::Proportional(p) if !(0.0..=0.5).contains(&p) => Err(Error::invalid(
                format!("prune fraction {p} outside [0, 0.5]"),
            )),
            Criterion::Size(0) => Err(Error::invalid("coreset size must be at least 1")),
            _ => match self.lambda {
                Some(l) if !(l >= 0.0) => Err(Error::invalid(format!("lambda {l} must be >= 0"))),
                _ => Ok(()),
            },
        }
    }

    /// Number of points kept out of `n`.
    pub fn keep_count(&self, n: usize) -> Result<usize> {
        self.validate()?;
        match self.criterion {
            Criterion::Size(k) if k > n => Err(Error::invalid(format!(
                "coreset size {k} exceeds forget-set size {n}"
            ))),
            Criterion::Size(k) => Ok(k),
            Criterion::Proportional(p) => {
                // ceil((1 - p) n) == n - floor(p n); the epsilon absorbs p n landing a ulp below an integer
                let pruned = (p * n as f64 + 1e-9).floor() as usize;
                Ok(n - pruned.min(n))
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Upcore,
    Random,
    Complete,
}

impl Method {
    pub fn as_str(self) -> &'static str {
        match self {
            Method::Upcore => "upcore",
            Method::Random => "random",
            Method::Complete => "complete",
        }
    }
}

impl std::str::FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "upcore" => Ok(Method::Upcore),
            "random" => Ok(Method::Random),
            "complete" => Ok(Method::Complete),
            other => Err(Error::invalid(format!(
                "unknown selection method {other:?}"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionResult {
    pub method: Method,
    pub coreset_ids: Vec<String>,
    pub pruned_ids: Vec<String>,
    /// Largest kept anomaly score; `None` for the baselines.
    pub tau: Option<f64>,
    pub hsv_before: Option<f64>,
    pub hsv_after: Option<f64>,
}

impl SelectionResult {
    /// Fill the variance fields from an id-to-vector map.
    ///
    /// A set with fewer than two members has zero spread.
    pub fn fill_hsv(&mut self, hidden: &HashMap<String, Vec<f64>>) -> Result<()> {
        let all: Vec<&String> = self.coreset_ids.iter().chain(&self.pruned_ids).collect();
        self.hsv_before = Some(set_hsv(&all, hidden)?);
        let kept: Vec<&String> = self.coreset_ids.iter().collect();
        self.hsv_after = Some(set_hsv(&kept, hidden)?);
        Ok(())
    }
}

fn set_hsv(ids: &[&String], hidden: &HashMap<String, Vec<f64>>) -> Result<f64> {
    let vectors: Vec<&[f64]> = ids
        .iter()
        .map(|id| {
            hidden
                .get(*id)
                .map(Vec::as_slice)
                .ok_or_else(|| Error::MissingHidden((*id).clone()))
        })
        .collect::<Result<_>>()?;
    if vectors.len() < 2 {
        return Ok(0.0);
    }
    hsv(&vectors)
}

fn check_unique<'a>(ids: impl IntoIterator<Item = &'a str>) -> Result<()> {
    let mut seen = HashSet::new();
    for id in ids {
        if !seen.insert(id) {
            return Err(Error::invalid(format!("duplicate id {id:?}")));
        }
    }
    Ok(())
}

/// Keep the lowest-scoring points. Ties at the boundary go to the smaller id.
///
/// Both id lists follow the input order of `scores`.
pub fn select_upcore(
    scores: &[AnomalyScore],
    hidden: &HashMap<String, Vec<f64>>,
    cfg: &SelectionConfig,
) -> Result<SelectionResult> {
    if scores.is_empty() {
        return Err(Error::invalid("no anomaly scores to select from"));
    }
    check_unique(scores.iter().map(|s| s.id.as_str()))?;
    let keep = cfg.keep_count(scores.len())?;

    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| {
        scores[a]
            .score
            .total_cmp(&scores[b].score)
            .then_with(|| scores[a].id.cmp(&scores[b].id))
    });
    let mut kept = vec![false; scores.len()];
    for &i in &order[..keep] {
        kept[i] = true;
    }
    let tau = order[..keep].last().map(|&i| scores[i].score);

    let (coreset_ids, pruned_ids) = partition_ids(scores.iter().map(|s| &s.id), &kept);
    let mut result = SelectionResult {
        method: Method::Upcore,
        coreset_ids,
        pruned_ids,
        tau,
        hsv_before: None,
        hsv_after: None,
    };
    result.fill_hsv(hidden)?;
    Ok(result)
}

/// Uniform sample of `size` ids without replacement.
///
/// Membership depends only on the id set and the seed, not on input order.
pub fn select_random<S: AsRef<str>>(ids: &[S], size: usize, seed: u64) -> Result<SelectionResult> {
    check_unique(ids.iter().map(|s| s.as_ref()))?;
    if size > ids.len() {
        return Err(Error::invalid(format!(
            "random coreset size {size} exceeds {} ids",
            ids.len()
        )));
    }
    let mut sorted: Vec<&str> = ids.iter().map(|s| s.as_ref()).collect();
    sorted.sort_unstable();
    let mut rng = rng_from_seed(seed);
    let chosen: HashSet<&str> = index::sample(&mut rng, sorted.len(), size)
        .into_iter()
        .map(|i| sorted[i])
        .collect();
    let kept: Vec<bool> = ids.iter().map(|s| chosen.contains(s.as_ref())).collect();
    let (coreset_ids, pruned_ids) = partition_ids(ids.iter(), &kept);
    Ok(SelectionResult {
        method: Method::Random,
        coreset_ids,
        pruned_ids,
        tau: None,
        hsv_before: None,
        hsv_after: None,
    })
}

pub fn select_complete<S: AsRef<str>>(ids: &[S]) -> SelectionResult {
    SelectionResult {
        method: Method::Complete,
        coreset_ids: ids.iter().map(|s| s.as_ref().to_string()).collect(),
        pruned_ids: Vec::new(),
        tau: None,
        hsv_before: None,
        hsv_after: None,
    }
}

fn partition_ids<S: AsRef<str>>(
    ids: impl Iterator<Item = S>,
    kept: &[bool],
) -> (Vec<String>, Vec<String>) {
    let mut coreset = Vec::new();
    let mut pruned = Vec::new();
    for (id, &k) in ids.zip(kept) {
        if k {
            coreset.push(id.as_ref().to_string());
        } else {
            pruned.push(id.as_ref().to_string());
        }
    }
    (coreset, pruned)
}
