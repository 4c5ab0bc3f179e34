//! Evaluation metrics and the forgetting/utility trade-off curve.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::{self, Write as _};
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::datastore::{Dataset, Role};
use crate::sandbox::{sequence_log_probs, SandboxModel, Sequence};
use crate::{Error, Result};

/// Version tag of the curve construction and ROUGE rules, written into reports.
pub const METRIC_RULES: &str = "rouge=rouge-l-recall(casefold,strip-punct); \
auc=v1(collapse duplicate x to max y; sort by x; extend flat to x=0 and x=1; trapezoid)";

/// Length of the longest common subsequence, O(|a| |b|) time and O(|b|) space.
pub fn lcs_len<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    let mut prev = vec![0usize; b.len() + 1];
    let mut cur = vec![0usize; b.len() + 1];
    for x in a {
        for (j, y) in b.iter().enumerate() {
            cur[j + 1] = if x == y {
                prev[j] + 1
            } else {
                cur[j].max(prev[j + 1])
            };
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// ROUGE-L recall: `LCS(reference, candidate) / |reference|`.
pub fn rouge_l<T: PartialEq>(reference: &[T], candidate: &[T]) -> Result<f64> {
    if reference.is_empty() {
        return Err(Error::invalid("ROUGE-L needs a non-empty reference"));
    }
    Ok(lcs_len(reference, candidate) as f64 / reference.len() as f64)
}

/// Lower-case, drop punctuation, split on whitespace.
pub fn normalize_text(text: &str) -> Vec<String> {
    text.to_lowercase()
        .chars()
        .map(|c| if c.is_ascii_punctuation() { ' ' } else { c })
        .collect::<String>()
        .split_whitespace()
        .map(str::to_string)
        .collect()
}

/// ROUGE-L recall over normalized text tokens.
pub fn rouge_l_text(reference: &str, candidate: &str) -> Result<f64> {
    rouge_l(&normalize_text(reference), &normalize_text(candidate))
}

/// `P(a | q)^(1/|a|)` under teacher forcing.
pub fn norm_prob(model: &SandboxModel, question: &[u32], answer: &[u32]) -> Result<f64> {
    Ok(norm_probs(model, &[(question, answer)])?[0])
}

/// Batched [`norm_prob`].
pub fn norm_probs(model: &SandboxModel, pairs: &[(&[u32], &[u32])]) -> Result<Vec<f64>> {
    log_norm_probs(model, pairs)?
        .into_iter()
        .map(|l| {
            let p = l.exp();
            if p > 0.0 {
                Ok(p)
            } else {
                Err(Error::invalid(
                    "answer has zero probability under the model",
                ))
            }
        })
        .collect()
}

/// Per-token mean log-probability, the log of [`norm_prob`]. Finite even
/// where the probability itself underflows.
pub fn log_norm_probs(model: &SandboxModel, pairs: &[(&[u32], &[u32])]) -> Result<Vec<f64>> {
    if pairs.iter().any(|(_, a)| a.is_empty()) {
        return Err(Error::invalid(
            "normalized probability needs a non-empty answer",
        ));
    }
    let seqs: Vec<Sequence> = pairs
        .iter()
        .map(|(q, a)| Sequence::new(q.to_vec(), a.to_vec()))
        .collect();
    let lps = sequence_log_probs(model, &seqs)?;
    Ok(lps
        .iter()
        .zip(pairs)
        .map(|(&lp, (_, a))| lp / a.len() as f64)
        .collect())
}

/// Mean normalized probability of the perturbed answers over that of the correct one.
pub fn truth_ratio(
    model: &SandboxModel,
    question: &[u32],
    correct: &[u32],
    perturbed: &[Vec<u32>],
) -> Result<f64> {
    if perturbed.is_empty() {
        return Err(Error::invalid(
            "truth ratio needs at least one perturbed answer",
        ));
    }
    let mut pairs: Vec<(&[u32], &[u32])> = vec![(question, correct)];
    pairs.extend(perturbed.iter().map(|p| (question, p.as_slice())));
    let probs = norm_probs(model, &pairs)?;
    let mean = probs[1..].iter().sum::<f64>() / perturbed.len() as f64;
    Ok(mean / probs[0])
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Utility {
    pub value: f64,
    /// Set when some input was <= 0 and the harmonic mean collapsed to 0.
    pub collapsed: bool,
}

/// Harmonic mean of per-dataset scores.
pub fn model_utility(scores: &[f64]) -> Result<Utility> {
    if scores.is_empty() {
        return Err(Error::invalid(
            "model utility needs at least one dataset score",
        ));
    }
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(Error::invalid("model utility inputs must be finite"));
    }
    if scores.iter().any(|&s| s <= 0.0) {
        return Ok(Utility {
            value: 0.0,
            collapsed: true,
        });
    }
    let inv: f64 = scores.iter().map(|s| 1.0 / s).sum();
    Ok(Utility {
        value: scores.len() as f64 / inv,
        collapsed: false,
    })
}

/// Pearson product-moment correlation.
pub fn pearson(xs: &[f64], ys: &[f64]) -> Result<f64> {
    if xs.len() != ys.len() {
        return Err(Error::invalid(format!(
            "pearson: {} xs vs {} ys",
            xs.len(),
            ys.len()
        )));
    }
    if xs.len() < 2 {
        return Err(Error::invalid("pearson needs at least two pairs"));
    }
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (x, y) in xs.iter().zip(ys) {
        let (dx, dy) = (x - mx, y - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 {
        return Err(Error::ZeroVariance("pearson xs"));
    }
    if syy == 0.0 {
        return Err(Error::ZeroVariance("pearson ys"));
    }
    Ok((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RoleMetrics {
    pub rouge: f64,
    pub norm_prob: f64,
    /// Absent when no record of the role has perturbed answers.
    pub truth_ratio: Option<f64>,
    pub exact_match: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricBundle {
    pub step: usize,
    pub roles: BTreeMap<String, RoleMetrics>,
    /// Harmonic mean of the utility roles' mean normalized probability.
    pub model_utility: Option<f64>,
    #[serde(default)]
    pub utility_collapsed: bool,
}

/// Perturbed (wrong) answers per record id, for the truth ratio.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct References {
    pub perturbed: BTreeMap<String, Vec<Vec<u32>>>,
}

impl References {
    /// For each record, up to `k` distinct answers drawn from other records of
    /// the same dataset, in order of first appearance.
    pub fn from_answer_pools<'a>(
        datasets: impl IntoIterator<Item = &'a Dataset>,
        k: usize,
    ) -> Self {
        let mut perturbed = BTreeMap::new();
        for ds in datasets {
            let mut pool: Vec<&Vec<u32>> = Vec::new();
            let mut seen = BTreeSet::new();
            for r in ds.records() {
                if seen.insert(&r.answer) {
                    pool.push(&r.answer);
                }
            }
            for r in ds.records() {
                let alts: Vec<Vec<u32>> = pool
                    .iter()
                    .filter(|a| ***a != r.answer)
                    .take(k)
                    .map(|a| (*a).clone())
                    .collect();
                if !alts.is_empty() {
                    perturbed.insert(r.id.clone(), alts);
                }
            }
        }
        References { perturbed }
    }
}

fn evaluate_role(model: &SandboxModel, ds: &Dataset, refs: &References) -> Result<RoleMetrics> {
    let records = ds.records();
    let questions: Vec<&[u32]> = records.iter().map(|r| r.question.as_slice()).collect();
    let decoded = model.decode_batch(&questions)?;

    let mut rouge = 0.0;
    let mut exact = 0usize;
    for (r, d) in records.iter().zip(&decoded) {
        rouge += rouge_l(&r.answer, d)?;
        if *d == r.answer {
            exact += 1;
        }
    }

    // correct answers first, then every perturbed answer, in one batch
    let mut pairs: Vec<(&[u32], &[u32])> = records
        .iter()
        .map(|r| (r.question.as_slice(), r.answer.as_slice()))
        .collect();
    let mut spans = Vec::with_capacity(records.len());
    for r in records {
        let start = pairs.len();
        if let Some(alts) = refs.perturbed.get(&r.id) {
            pairs.extend(alts.iter().map(|a| (r.question.as_slice(), a.as_slice())));
        }
        spans.push(start..pairs.len());
    }
    let logs = log_norm_probs(model, &pairs)?;

    // an underflowed probability counts as 0 in the mean and saturates the ratio
    let n = records.len() as f64;
    let norm_prob = logs[..records.len()].iter().map(|l| l.exp()).sum::<f64>() / n;
    let ratios: Vec<f64> = spans
        .iter()
        .enumerate()
        .filter(|(_, s)| !s.is_empty())
        .map(|(i, s)| {
            let r = logs[s.clone()]
                .iter()
                .map(|l| (l - logs[i]).exp())
                .sum::<f64>()
                / s.len() as f64;
            r.min(f64::MAX)
        })
        .collect();
    let truth_ratio = (!ratios.is_empty())
        .then(|| (ratios.iter().sum::<f64>() / ratios.len() as f64).min(f64::MAX));

    Ok(RoleMetrics {
        rouge: rouge / n,
        norm_prob,
        truth_ratio,
        exact_match: exact as f64 / n,
    })
}

/// Score `model` on every non-empty role dataset.
///
/// Role names that match a utility role (`retain`, `neighborhood`,
/// `real_world`, `real_authors`) feed model utility; anything else (such as
/// `forget` or `pruned`) is reported but not aggregated.
pub fn evaluate_checkpoint(
    model: &SandboxModel,
    step: usize,
    datasets: &BTreeMap<String, Dataset>,
    refs: &References,
) -> Result<MetricBundle> {
    let mut roles = BTreeMap::new();
    for (name, ds) in datasets {
        if ds.is_empty() {
            continue;
        }
        roles.insert(name.clone(), evaluate_role(model, ds, refs)?);
    }
    let utility_scores: Vec<f64> = Role::UTILITY
        .iter()
        .filter_map(|r| roles.get(r.as_str()).map(|m: &RoleMetrics| m.norm_prob))
        .collect();
    let (model_utility, utility_collapsed) = if utility_scores.is_empty() {
        (None, false)
    } else {
        let u = model_utility(&utility_scores)?;
        (Some(u.value), u.collapsed)
    };
    Ok(MetricBundle {
        step,
        roles,
        model_utility,
        utility_collapsed,
    })
}

/// Which metric goes on the curve's y-axis.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum YAxis {
    /// ROUGE on the named role.
    Rouge(String),
    ModelUtility,
}

impl YAxis {
    pub fn value(&self, bundle: &MetricBundle) -> Result<f64> {
        match self {
            YAxis::Rouge(role) => bundle.roles.get(role).map(|m| m.rouge).ok_or_else(|| {
                Error::invalid(format!("step {} has no {role:?} metrics", bundle.step))
            }),
            YAxis::ModelUtility => bundle.model_utility.ok_or_else(|| {
                Error::invalid(format!("step {} has no model utility", bundle.step))
            }),
        }
    }
}

impl fmt::Display for YAxis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            YAxis::Rouge(role) => f.write_str(role),
            YAxis::ModelUtility => f.write_str("model_utility"),
        }
    }
}

impl FromStr for YAxis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "" => Err(Error::invalid("empty y-axis name")),
            "model_utility" => Ok(YAxis::ModelUtility),
            role => Ok(YAxis::Rouge(role.to_string())),
        }
    }
}

impl Serialize for YAxis {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for YAxis {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub step: usize,
    pub x: f64,
    pub y: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TradeoffCurve {
    pub axis: YAxis,
    /// One point per checkpoint, step-ascending.
    pub points: Vec<CurvePoint>,
    pub auc: f64,
}

impl TradeoffCurve {
    /// `step,x,y` with a header row.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("step,x,y\n");
        for p in &self.points {
            let _ = writeln!(out, "{},{},{}", p.step, p.x, p.y);
        }
        out
    }
}

/// Area under the curve through `(x, y)` points in `[0, 1]^2`.
///
/// Duplicate x values keep the largest y, points are sorted by x, the curve
/// is extended flat to `x = 0` and `x = 1`, and the trapezoid rule integrates
/// the result. Input order does not matter.
pub fn auc_from_points(points: &[(f64, f64)]) -> Result<f64> {
    Ok(trapezoid(&frontier_polyline(points)?))
}

/// The extended polyline [`auc_from_points`] integrates, from `x = 0` to `x = 1`.
pub fn frontier_polyline(points: &[(f64, f64)]) -> Result<Vec<(f64, f64)>> {
    if points.len() < 2 {
        return Err(Error::invalid("trade-off curve needs at least 2 points"));
    }
    for &(x, y) in points {
        if !(0.0..=1.0).contains(&x) || !(0.0..=1.0).contains(&y) {
            return Err(Error::invalid(format!(
                "curve point ({x}, {y}) outside [0, 1]"
            )));
        }
    }
    let mut sorted = points.to_vec();
    sorted.sort_by(|a, b| a.0.total_cmp(&b.0).then(b.1.total_cmp(&a.1)));
    // after the sort the first point of each x-run carries the max y
    sorted.dedup_by(|later, earlier| later.0 == earlier.0);

    let mut poly = Vec::with_capacity(sorted.len() + 2);
    let first = sorted[0];
    let last = *sorted.last().expect("non-empty");
    if first.0 > 0.0 {
        poly.push((0.0, first.1));
    }
    poly.extend_from_slice(&sorted);
    if last.0 < 1.0 {
        poly.push((1.0, last.1));
    }
    Ok(poly)
}

fn trapezoid(poly: &[(f64, f64)]) -> f64 {
    poly.windows(2)
        .map(|w| (w[1].0 - w[0].0) * (w[0].1 + w[1].1) / 2.0)
        .sum::<f64>()
        .clamp(0.0, 1.0)
}

/// Trade-off curve over checkpoints: `x = 1 - ROUGE(forget)`, `y` per `axis`.
pub fn auc(checkpoints: &[MetricBundle], axis: &YAxis) -> Result<TradeoffCurve> {
    auc_with_forget_role(checkpoints, axis, Role::Forget.as_str())
}

pub fn auc_with_forget_role(
    checkpoints: &[MetricBundle],
    axis: &YAxis,
    forget_role: &str,
) -> Result<TradeoffCurve> {
    if checkpoints.len() < 2 {
        return Err(Error::invalid("AUC needs at least 2 checkpoints"));
    }
    let mut ordered: Vec<&MetricBundle> = checkpoints.iter().collect();
    ordered.sort_by_key(|b| b.step);
    let points = ordered
        .iter()
        .map(|b| {
            let forget = b.roles.get(forget_role).ok_or_else(|| {
                Error::invalid(format!("step {} has no {forget_role:?} metrics", b.step))
            })?;
            Ok(CurvePoint {
                step: b.step,
                x: 1.0 - forget.rouge,
                y: axis.value(b)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let xy: Vec<(f64, f64)> = points.iter().map(|p| (p.x, p.y)).collect();
    Ok(TradeoffCurve {
        axis: axis.clone(),
        points,
        auc: auc_from_points(&xy)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sandbox::ModelConfig;

    fn toks(s: &str) -> Vec<&str> {
        s.split_whitespace().collect()
    }

    #[test]
    fn rouge_examples() {
        assert_eq!(rouge_l(&toks("paris"), &toks("paris")).unwrap(), 1.0);
        assert_eq!(
            rouge_l(&toks("paul newman"), &toks("joanne woodward")).unwrap(),
            0.0
        );
        assert_eq!(
            rouge_l(&toks("the capital is paris"), &toks("capital paris")).unwrap(),
            0.5
        );
        assert!(rouge_l::<u32>(&[], &[1]).is_err());
    }

    #[test]
    fn rouge_text_normalizes() {
        assert_eq!(rouge_l_text("Paris.", "paris").unwrap(), 1.0);
        assert_eq!(
            rouge_l_text("The Capital, is PARIS!", "capital paris").unwrap(),
            0.5
        );
    }

    fn uniform(v: usize) -> SandboxModel {
        SandboxModel::zeros(&ModelConfig {
            vocab_size: v,
            embed_dim: 2,
            hidden_dim: 2,
            end_token: 0,
            seed: 0,
        })
        .unwrap()
    }

    #[test]
    fn norm_prob_under_uniform_model() {
        let m = uniform(64);
        assert!((norm_prob(&m, &[1, 2], &[7]).unwrap() - 1.0 / 64.0).abs() < 1e-15);
        assert!(norm_prob(&m, &[1], &[]).is_err());
    }

    #[test]
    fn norm_prob_geometric_mean() {
        // token probs 0.5 then 0.125: hand-built so the second step sees a different context
        let mut m = uniform(8);
        // first position: context [1] -> q = E[1]; second: [1, 2] -> q = (E[1] + E[2]) / 2
        m.embed[[2, 0]] = 2.0;
        m.w1[[0, 0]] = 1.0;
        let h2 = (1.0f64).tanh();
        // logits = b2 + W2[:, 0] * h0; choose b2 and W2 so p(2 | [1]) = 0.5, p(3 | [1, 2]) = 0.125
        let ln = f64::ln;
        // step 1: h0 = 0, logits = b2; put b2[2] = ln 7 and others 0 -> p = 7/14 = 0.5
        m.b2[2] = ln(7.0);
        // step 2: logits = b2 + w * h2 on token 3 only; need e^{w h2} / (7 + 6 + e^{w h2}) ... = 0.125
        // e^{w h2} = 0.125 * (13 + e^{w h2}) -> e^{w h2} = 13 / 7
        m.w2[[3, 0]] = ln(13.0 / 7.0) / h2;
        let p = norm_prob(&m, &[1], &[2, 3]).unwrap();
        assert!((p - 0.25).abs() < 1e-12, "{p}");
    }

    #[test]
    fn truth_ratio_examples() {
        let m = uniform(8);
        assert!((truth_ratio(&m, &[1], &[2], &[vec![2]]).unwrap() - 1.0).abs() < 1e-15);
        assert!(truth_ratio(&m, &[1], &[2], &[]).is_err());

        let mut m = uniform(3);
        // p(1) = 0.5, p(2) = 0.25, p(0) = 0.25
        m.b2[1] = f64::ln(2.0);
        let r = truth_ratio(&m, &[0], &[1], &[vec![2]]).unwrap();
        assert!((r - 0.5).abs() < 1e-12);
    }

    #[test]
    fn utility_examples() {
        assert_eq!(model_utility(&[0.3, 0.3, 0.3]).unwrap().value, 0.3);
        assert!((model_utility(&[1.0, 0.5]).unwrap().value - 2.0 / 3.0).abs() < 1e-15);
        let tiny = model_utility(&[1.0, 1e-300]).unwrap();
        assert!(tiny.value < 1e-299);
        let collapsed = model_utility(&[1.0, 0.0]).unwrap();
        assert_eq!(
            collapsed,
            Utility {
                value: 0.0,
                collapsed: true
            }
        );
        assert!(model_utility(&[]).is_err());
    }

    #[test]
    fn pearson_examples() {
        let xs = [1.0, 2.0, 3.0, 4.5];
        let ys: Vec<f64> = xs.iter().map(|x| 2.0 * x + 1.0).collect();
        assert!((pearson(&xs, &ys).unwrap() - 1.0).abs() < 1e-12);
        let neg: Vec<f64> = xs.iter().map(|x| -x).collect();
        assert!((pearson(&xs, &neg).unwrap() + 1.0).abs() < 1e-12);
        assert!((pearson(&[1.0, 2.0, 3.0], &[1.0, 3.0, 2.0]).unwrap() - 0.5).abs() < 1e-12);
        assert!(matches!(
            pearson(&[1.0, 1.0], &[1.0, 2.0]),
            Err(Error::ZeroVariance(_))
        ));
        assert!(pearson(&[1.0], &[1.0]).is_err());
    }

    #[test]
    fn auc_examples() {
        assert_eq!(auc_from_points(&[(0.0, 1.0), (1.0, 1.0)]).unwrap(), 1.0);
        assert_eq!(auc_from_points(&[(0.0, 1.0), (1.0, 0.0)]).unwrap(), 0.5);
        let a = auc_from_points(&[(0.0, 1.0), (0.5, 0.8), (1.0, 0.2)]).unwrap();
        assert!((a - 0.70).abs() < 1e-15);
    }

    #[test]
    fn auc_collapses_and_extends() {
        // duplicate x keeps the larger y; flat extension on both sides
        let a = auc_from_points(&[(0.5, 0.2), (0.25, 0.6), (0.5, 0.4)]).unwrap();
        let expected = 0.25 * 0.6 + 0.25 * (0.6 + 0.4) / 2.0 + 0.5 * 0.4;
        assert!((a - expected).abs() < 1e-15);
        assert!(auc_from_points(&[(0.1, 0.2)]).is_err());
        assert!(auc_from_points(&[(0.1, 0.2), (1.2, 0.3)]).is_err());
        assert!(auc_from_points(&[(0.1, f64::NAN), (0.2, 0.3)]).is_err());
    }

    fn bundle(step: usize, forget: f64, retain: f64) -> MetricBundle {
        let m = |rouge| RoleMetrics {
            rouge,
            norm_prob: 0.5,
            truth_ratio: None,
            exact_match: rouge,
        };
        MetricBundle {
            step,
            roles: [
                ("forget".to_string(), m(forget)),
                ("retain".to_string(), m(retain)),
            ]
            .into_iter()
            .collect(),
            model_utility: Some(0.5),
            utility_collapsed: false,
        }
    }

    #[test]
    fn auc_over_bundles() {
        let bundles = vec![
            bundle(10, 0.0, 0.2),
            bundle(0, 1.0, 1.0),
            bundle(5, 0.5, 0.8),
        ];
        let curve = auc(&bundles, &YAxis::Rouge("retain".into())).unwrap();
        assert_eq!(
            curve.points.iter().map(|p| p.step).collect::<Vec<_>>(),
            vec![0, 5, 10]
        );
        assert!((curve.auc - 0.70).abs() < 1e-15);
        assert!(curve.to_csv().starts_with("step,x,y\n0,0,1\n"));
        assert!(auc(&bundles[..1], &YAxis::ModelUtility).is_err());
        assert!(auc(&bundles, &YAxis::Rouge("neighborhood".into())).is_err());
    }

    #[test]
    fn y_axis_round_trips_as_string() {
        for name in ["retain", "model_utility", "neighborhood"] {
            let axis: YAxis = name.parse().unwrap();
            assert_eq!(serde_json::to_string(&axis).unwrap(), format!("\"{name}\""));
        }
    }

    #[test]
    fn references_skip_own_answer() {
        use crate::datastore::{Record, Role};
        let rec = |id: &str, a: u32| Record {
            id: id.into(),
            question_text: String::new(),
            answer_text: String::new(),
            question: vec![1],
            answer: vec![a],
            role: Role::Retain,
            hidden: None,
        };
        let ds = Dataset::new(
            vec![rec("a", 5), rec("b", 6), rec("c", 5), rec("d", 7)],
            "t",
        )
        .unwrap();
        let refs = References::from_answer_pools([&ds], 3);
        assert_eq!(refs.perturbed["a"], vec![vec![6], vec![7]]);
        assert_eq!(refs.perturbed["b"], vec![vec![5], vec![7]]);
    }
}
