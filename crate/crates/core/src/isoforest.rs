//! Isolation Forest over hidden-state vectors.
//!
//! Trees are stored as flat node arrays (root at index 0) so a fitted forest
//! serializes to plain JSON for audit and replay. The anomaly score of a point
//! `x` with mean path length `h(x)` over the ensemble is `2^(-h(x) / c(n))`,
//! where `n` is the size of the full training set (not the per-tree subsample).

use std::fmt::Write as _;

use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::datastore::Dataset;
use crate::seed::{derive_seed, rng_from_seed};
use crate::{Error, Result};

/// `H(i) = 1 + 1/2 + ... + 1/i`, summed in ascending order.
pub fn harmonic(i: u64) -> Result<f64> {
    if i == 0 {
        return Err(Error::invalid("harmonic number H(0) is undefined"));
    }
    Ok((1..=i).map(|j| 1.0 / j as f64).sum())
}

/// Average unsuccessful-search path length in a random BST of `n` keys:
/// `c(n) = 2 H(n-1) - 2 (n-1) / n`, with `c(0) = c(1) = 0`.
pub fn c_norm(n: u64) -> f64 {
    if n <= 1 {
        return 0.0;
    }
    let nf = n as f64;
    2.0 * harmonic(n - 1).expect("n >= 2") - 2.0 * (nf - 1.0) / nf
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Node {
    Internal {
        split_dim: usize,
        split_value: f64,
        left: usize,
        right: usize,
    },
    External {
        size: usize,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IsoTree {
    pub nodes: Vec<Node>,
    pub height_limit: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ForestConfig {
    pub n_trees: usize,
    /// Per-tree subsample size; clamped to the training size.
    pub subsample: usize,
    pub seed: u64,
}

impl Default for ForestConfig {
    fn default() -> Self {
        ForestConfig {
            n_trees: 100,
            subsample: 256,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IsoForest {
    pub trees: Vec<IsoTree>,
    pub n_trees: usize,
    pub subsample: usize,
    pub train_n: usize,
    pub dim: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnomalyScore {
    pub id: String,
    pub h: f64,
    pub score: f64,
}

/// `ceil(log2(psi))` for `psi >= 1`.
pub fn height_limit(psi: usize) -> usize {
    if psi <= 1 {
        0
    } else {
        (usize::BITS - (psi - 1).leading_zeros()) as usize
    }
}

/// Grow one tree on `points[sample]`, stopping at `height_limit` or at nodes
/// holding at most one point (or only duplicates).
pub fn build_tree<R: Rng + ?Sized>(
    points: &[Vec<f64>],
    sample: Vec<usize>,
    height_limit: usize,
    rng: &mut R,
) -> IsoTree {
    let mut tree = IsoTree {
        nodes: Vec::new(),
        height_limit,
    };
    grow(&mut tree.nodes, points, sample, 0, height_limit, rng);
    tree
}

fn grow<R: Rng + ?Sized>(
    nodes: &mut Vec<Node>,
    points: &[Vec<f64>],
    sample: Vec<usize>,
    depth: usize,
    limit: usize,
    rng: &mut R,
) -> usize {
    let slot = nodes.len();
    nodes.push(Node::External { size: sample.len() });
    if sample.len() <= 1 || depth >= limit {
        return slot;
    }

    let dim = points[sample[0]].len();
    let ranges: Vec<(usize, f64, f64)> = (0..dim)
        .filter_map(|k| {
            let (lo, hi) =
                sample
                    .iter()
                    .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &i| {
                        let v = points[i][k];
                        (lo.min(v), hi.max(v))
                    });
            (hi > lo).then_some((k, lo, hi))
        })
        .collect();
    if ranges.is_empty() {
        return slot;
    }

    let (split_dim, lo, hi) = ranges[rng.random_range(0..ranges.len())];
    // open interval (lo, hi): both children are non-empty
    let split_value = loop {
        let v = rng.random_range(lo..hi);
        if v > lo {
            break v;
        }
    };
    let (left_idx, right_idx): (Vec<usize>, Vec<usize>) = sample
        .into_iter()
        .partition(|&i| points[i][split_dim] < split_value);

    let left = grow(nodes, points, left_idx, depth + 1, limit, rng);
    let right = grow(nodes, points, right_idx, depth + 1, limit, rng);
    nodes[slot] = Node::Internal {
        split_dim,
        split_value,
        left,
        right,
    };
    slot
}

impl IsoTree {
    /// Edges from the root to the reached leaf plus `c(size)` of that leaf.
    pub fn path_length(&self, x: &[f64]) -> f64 {
        let mut at = 0;
        let mut depth = 0usize;
        loop {
            match &self.nodes[at] {
                Node::Internal {
                    split_dim,
                    split_value,
                    left,
                    right,
                } => {
                    at = if x[*split_dim] < *split_value {
                        *left
                    } else {
                        *right
                    };
                    depth += 1;
                }
                Node::External { size } => return depth as f64 + c_norm(*size as u64),
            }
        }
    }

    pub fn leaf_sizes(&self) -> impl Iterator<Item = usize> + '_ {
        self.nodes.iter().filter_map(|n| match n {
            Node::External { size } => Some(*size),
            Node::Internal { .. } => None,
        })
    }
}

fn check_dims(points: &[Vec<f64>]) -> Result<usize> {
    let dim = points[0].len();
    if dim == 0 {
        return Err(Error::invalid("points have dimension 0"));
    }
    if let Some(p) = points.iter().find(|p| p.len() != dim) {
        return Err(Error::VectorDimension {
            expected: dim,
            got: p.len(),
        });
    }
    Ok(dim)
}

impl IsoForest {
    /// Fit on `points`. Tree `t` draws from its own RNG keyed by `(seed, t)`,
    /// so the forest is the same however many threads build it.
    pub fn fit(points: &[Vec<f64>], cfg: &ForestConfig) -> Result<IsoForest> {
        if points.len() < 2 {
            return Err(Error::invalid(format!(
                "isolation forest needs at least 2 points, got {}",
                points.len()
            )));
        }
        if cfg.n_trees == 0 {
            return Err(Error::invalid("n_trees must be at least 1"));
        }
        if cfg.subsample < 2 {
            return Err(Error::invalid("subsample size must be at least 2"));
        }
        let dim = check_dims(points)?;
        let splittable = (0..dim).any(|k| {
            let first = points[0][k];
            points.iter().any(|p| p[k] != first)
        });
        if !splittable {
            return Err(Error::NoSplittableDimension);
        }

        let n = points.len();
        let psi = cfg.subsample.min(n);
        let limit = height_limit(psi);
        let build = |t: usize| {
            let mut rng = rng_from_seed(derive_seed(cfg.seed, &["isoforest-tree", &t.to_string()]));
            let sample = index::sample(&mut rng, n, psi).into_vec();
            build_tree(points, sample, limit, &mut rng)
        };

        #[cfg(feature = "parallel")]
        let trees = {
            use rayon::prelude::*;
            (0..cfg.n_trees).into_par_iter().map(build).collect()
        };
        #[cfg(not(feature = "parallel"))]
        let trees = (0..cfg.n_trees).map(build).collect();

        Ok(IsoForest {
            trees,
            n_trees: cfg.n_trees,
            subsample: psi,
            train_n: n,
            dim,
            seed: cfg.seed,
        })
    }

    /// Mean path length over the ensemble, summed in tree order.
    pub fn mean_path_length(&self, x: &[f64]) -> Result<f64> {
        if x.len() != self.dim {
            return Err(Error::VectorDimension {
                expected: self.dim,
                got: x.len(),
            });
        }
        let total: f64 = self.trees.iter().map(|t| t.path_length(x)).sum();
        Ok(total / self.trees.len() as f64)
    }

    /// `2^(-h / c(train_n))`.
    pub fn score_from_h(&self, h: f64) -> f64 {
        score_from_path_length(h, self.train_n as u64)
    }

    pub fn score(&self, id: &str, x: &[f64]) -> Result<AnomalyScore> {
        let h = self.mean_path_length(x)?;
        Ok(AnomalyScore {
            id: id.to_string(),
            h,
            score: self.score_from_h(h),
        })
    }

    /// One score per record, in dataset order.
    pub fn score_all(&self, ds: &Dataset) -> Result<Vec<AnomalyScore>> {
        let records = ds.records();
        if let Some(r) = records.iter().find(|r| r.hidden.is_none()) {
            return Err(Error::MissingHidden(r.id.clone()));
        }
        let one =
            |r: &crate::datastore::Record| self.score(&r.id, r.hidden.as_deref().expect("checked"));

        #[cfg(feature = "parallel")]
        {
            use rayon::prelude::*;
            records.par_iter().map(one).collect()
        }
        #[cfg(not(feature = "parallel"))]
        {
            records.iter().map(one).collect()
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }
}

/// Anomaly score for mean path length `h` against a training set of size `n`.
pub fn score_from_path_length(h: f64, n: u64) -> f64 {
    let c = c_norm(n);
    if c == 0.0 {
        return 1.0;
    }
    (-h / c).exp2()
}

/// Fit on a dataset's hidden vectors and score every record.
pub fn fit_and_score(ds: &Dataset, cfg: &ForestConfig) -> Result<(IsoForest, Vec<AnomalyScore>)> {
    let points: Vec<Vec<f64>> = ds
        .records()
        .iter()
        .map(|r| {
            r.hidden
                .clone()
                .ok_or_else(|| Error::MissingHidden(r.id.clone()))
        })
        .collect::<Result<_>>()?;
    let forest = IsoForest::fit(&points, cfg)?;
    let scores = forest.score_all(ds)?;
    Ok((forest, scores))
}

/// `id,h,score` with a header row. Ids containing commas or quotes are quoted.
pub fn scores_to_csv(scores: &[AnomalyScore]) -> String {
    let mut out = String::from("id,h,score\n");
    for s in scores {
        let _ = writeln!(out, "{},{},{}", csv_field(&s.id), s.h, s.score);
    }
    out
}

pub(crate) fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n', '\r']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}
