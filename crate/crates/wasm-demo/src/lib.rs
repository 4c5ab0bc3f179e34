//! Browser bindings for three small interactive operations: anomaly scores
//! for a 2-d point cloud, the HSV-vs-prune-fraction sweep, and the trade-off
//! AUC of a hand-drawn curve. Everything crosses the boundary as JSON text.

use std::collections::HashMap;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use upcore::coreset::{hsv, select_random, select_upcore, Criterion, SelectionConfig};
use upcore::datastore::{Dataset, Record, Role};
use upcore::isoforest::{fit_and_score, ForestConfig};
use upcore::metrics::{auc_from_points, frontier_polyline};
use upcore::seed::{derive_seed, rng_from_seed};
use wasm_bindgen::prelude::*;

#[derive(Debug, Serialize, Deserialize)]
pub struct ScoredPoint {
    pub x: f64,
    pub y: f64,
    pub score: f64,
    pub rank: usize,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct SweepRow {
    pub fraction: f64,
    pub kept: usize,
    pub upcore: f64,
    pub random: f64,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct CurveAuc {
    pub auc: f64,
    pub polyline: Vec<(f64, f64)>,
}

fn parse_points(json: &str) -> Result<Vec<(f64, f64)>, String> {
    let pts: Vec<(f64, f64)> =
        serde_json::from_str(json).map_err(|e| format!("bad point list: {e}"))?;
    if pts.iter().any(|(x, y)| !x.is_finite() || !y.is_finite()) {
        return Err("points must be finite".into());
    }
    Ok(pts)
}

fn dataset(points: &[(f64, f64)]) -> Result<Dataset, String> {
    let records = points
        .iter()
        .enumerate()
        .map(|(i, &(x, y))| Record {
            id: format!("p{i:04}"),
            question_text: String::new(),
            answer_text: String::new(),
            question: vec![],
            answer: vec![0],
            role: Role::Forget,
            hidden: Some(vec![x, y]),
        })
        .collect();
    Dataset::new(records, "browser").map_err(|e| e.to_string())
}

/// Gaussian blob plus a few far-off points, as `[[x, y], ...]`.
pub fn sample_cloud(inliers: usize, outliers: usize, seed: u64) -> String {
    let mut rng = rng_from_seed(seed);
    let mut pts: Vec<(f64, f64)> = (0..inliers)
        .map(|_| (rng.sample(StandardNormal), rng.sample(StandardNormal)))
        .collect();
    for _ in 0..outliers {
        let angle = rng.random::<f64>() * std::f64::consts::TAU;
        let r = 4.0 + 2.0 * rng.random::<f64>();
        pts.push((r * angle.cos(), r * angle.sin()));
    }
    serde_json::to_string(&pts).expect("plain numbers serialize")
}

pub fn score(points_json: &str, n_trees: usize, seed: u64) -> Result<String, String> {
    let pts = parse_points(points_json)?;
    let ds = dataset(&pts)?;
    let cfg = ForestConfig {
        n_trees,
        subsample: 256,
        seed,
    };
    let (_, scores) = fit_and_score(&ds, &cfg).map_err(|e| e.to_string())?;
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].score.total_cmp(&scores[a].score).then(a.cmp(&b)));
    let mut rank = vec![0; scores.len()];
    for (r, &i) in order.iter().enumerate() {
        rank[i] = r;
    }
    let out: Vec<ScoredPoint> = pts
        .iter()
        .zip(&scores)
        .zip(rank)
        .map(|((&(x, y), s), rank)| ScoredPoint {
            x,
            y,
            score: s.score,
            rank,
        })
        .collect();
    serde_json::to_string(&out).map_err(|e| e.to_string())
}

/// HSV of the kept points for prune fractions 0, 0.05, ..., 0.5.
pub fn sweep(points_json: &str, n_trees: usize, seed: u64) -> Result<String, String> {
    let pts = parse_points(points_json)?;
    let ds = dataset(&pts)?;
    let cfg = ForestConfig {
        n_trees,
        subsample: 256,
        seed,
    };
    let (_, scores) = fit_and_score(&ds, &cfg).map_err(|e| e.to_string())?;
    let hidden: HashMap<String, Vec<f64>> = ds.hidden_map().map_err(|e| e.to_string())?;
    let ids = ds.ids();
    let mut rows = Vec::new();
    for k in 0..=10 {
        let fraction = k as f64 * 0.05;
        let sel = SelectionConfig {
            criterion: Criterion::Proportional(fraction),
            ..Default::default()
        };
        let up = select_upcore(&scores, &hidden, &sel).map_err(|e| e.to_string())?;
        let random = select_random(
            &ids,
            up.coreset_ids.len(),
            derive_seed(seed, &["random", &k.to_string()]),
        )
        .map_err(|e| e.to_string())?;
        let kept: Vec<&[f64]> = random
            .coreset_ids
            .iter()
            .map(|id| hidden[id].as_slice())
            .collect();
        rows.push(SweepRow {
            fraction,
            kept: up.coreset_ids.len(),
            upcore: up.hsv_after.unwrap_or(0.0),
            random: if kept.len() < 2 {
                0.0
            } else {
                hsv(&kept).map_err(|e| e.to_string())?
            },
        });
    }
    serde_json::to_string(&rows).map_err(|e| e.to_string())
}

/// AUC of `[[forget, utility], ...]` with the closed polyline it integrates.
pub fn curve(points_json: &str) -> Result<String, String> {
    let pts = parse_points(points_json)?;
    let auc = auc_from_points(&pts).map_err(|e| e.to_string())?;
    let polyline = frontier_polyline(&pts).map_err(|e| e.to_string())?;
    serde_json::to_string(&CurveAuc { auc, polyline }).map_err(|e| e.to_string())
}

#[wasm_bindgen(js_name = sampleCloud)]
pub fn sample_cloud_js(inliers: usize, outliers: usize, seed: u32) -> String {
    sample_cloud(inliers, outliers, seed as u64)
}

#[wasm_bindgen(js_name = scorePoints)]
pub fn score_js(points_json: &str, n_trees: usize, seed: u32) -> Result<String, JsValue> {
    score(points_json, n_trees, seed as u64).map_err(|e| JsValue::from_str(&e))
}

#[wasm_bindgen(js_name = pruneSweep)]
pub fn sweep_js(points_json: &str, n_trees: usize, seed: u32) -> Result<String, JsValue> {
    sweep(points_json, n_trees, seed as u64).map_err(|e| JsValue::from_str(&e))
}

#[wasm_bindgen(js_name = curveAuc)]
pub fn curve_js(points_json: &str) -> Result<String, JsValue> {
    curve(points_json).map_err(|e| JsValue::from_str(&e))
}
