use std::collections::{BTreeSet, HashMap};

use proptest::prelude::*;
use upcore::coreset::{select_complete, select_random, select_upcore, Criterion, SelectionConfig};
use upcore::datastore::{read_dataset, split_by_role, write_records, Dataset, Record, Role};
use upcore::isoforest::{build_tree, c_norm, score_from_path_length, AnomalyScore, IsoTree, Node};
use upcore::metrics::{
    auc_from_points, frontier_polyline, lcs_len, model_utility, pearson, rouge_l,
};
use upcore::seed::rng_from_seed;

/// Longest common subsequence by enumerating every subsequence of `a`.
fn brute_lcs(a: &[u8], b: &[u8]) -> usize {
    fn is_subseq(sub: &[u8], of: &[u8]) -> bool {
        let mut it = of.iter();
        sub.iter().all(|x| it.any(|y| y == x))
    }
    let mut best = 0;
    for mask in 0u32..(1 << a.len()) {
        let sub: Vec<u8> = (0..a.len())
            .filter(|i| mask >> i & 1 == 1)
            .map(|i| a[i])
            .collect();
        if sub.len() > best && is_subseq(&sub, b) {
            best = sub.len();
        }
    }
    best
}

fn riemann(poly: &[(f64, f64)], steps: usize) -> f64 {
    // midpoint rule on the piecewise-linear interpolant
    let mut total = 0.0;
    let mut seg = 0;
    let dx = 1.0 / steps as f64;
    for k in 0..steps {
        let x = (k as f64 + 0.5) * dx;
        while seg + 1 < poly.len() - 1 && poly[seg + 1].0 <= x {
            seg += 1;
        }
        let (x0, y0) = poly[seg];
        let (x1, y1) = poly[seg + 1];
        let y = if x1 > x0 {
            y0 + (y1 - y0) * (x - x0) / (x1 - x0)
        } else {
            y1
        };
        total += y * dx;
    }
    total
}

fn curve() -> impl Strategy<Value = Vec<(f64, f64)>> {
    prop::collection::vec((0.0..=1.0f64, 0.0..=1.0f64), 2..12)
}

fn quantized_curve() -> impl Strategy<Value = Vec<(f64, f64)>> {
    // coarse grid so duplicate x values actually occur
    prop::collection::vec((0u8..=8, 0u8..=8), 2..12).prop_map(|v| {
        v.into_iter()
            .map(|(x, y)| (x as f64 / 8.0, y as f64 / 8.0))
            .collect()
    })
}

fn scores_strategy() -> impl Strategy<Value = Vec<AnomalyScore>> {
    // few distinct score values to exercise the tie-break
    prop::collection::vec(0u8..6, 1..40).prop_map(|v| {
        v.into_iter()
            .enumerate()
            .map(|(i, s)| AnomalyScore {
                id: format!("p{:02}", (i * 7) % 41),
                h: 0.0,
                score: 0.3 + s as f64 * 0.1,
            })
            .collect::<Vec<_>>()
    })
}

fn dedup_ids(mut scores: Vec<AnomalyScore>) -> Vec<AnomalyScore> {
    let mut seen = BTreeSet::new();
    scores.retain(|s| seen.insert(s.id.clone()));
    scores
}

fn hidden_for(scores: &[AnomalyScore]) -> HashMap<String, Vec<f64>> {
    scores
        .iter()
        .enumerate()
        .map(|(i, s)| (s.id.clone(), vec![i as f64, s.score]))
        .collect()
}

fn record_strategy() -> impl Strategy<Value = Record> {
    (
        "[a-z0-9_-]{1,8}",
        "\\PC{0,12}",
        prop::collection::vec(0u32..1000, 0..6),
        prop::collection::vec(0u32..1000, 1..4),
        0usize..7,
        prop::collection::vec(-1e6..1e6f64, 3),
    )
        .prop_map(|(id, text, question, answer, role, hidden)| Record {
            id,
            question_text: text.clone(),
            answer_text: text,
            question,
            answer,
            role: Role::ALL[role],
            hidden: Some(hidden),
        })
}

fn dataset_strategy() -> impl Strategy<Value = Dataset> {
    prop::collection::vec(record_strategy(), 0..10).prop_map(|records| {
        let mut seen = BTreeSet::new();
        let records = records
            .into_iter()
            .filter(|r| seen.insert(r.id.clone()))
            .collect();
        Dataset::new(records, "generated").unwrap()
    })
}

/// Depth plus leaf correction for `x`, recomputed by routing the training
/// sample through the recorded splits from scratch.
fn rewalk(tree: &IsoTree, points: &[Vec<f64>], sample: &[usize], x: &[f64]) -> f64 {
    fn go(
        tree: &IsoTree,
        at: usize,
        points: &[Vec<f64>],
        here: Vec<usize>,
        x: &[f64],
        depth: usize,
    ) -> f64 {
        match &tree.nodes[at] {
            Node::External { size } => {
                assert_eq!(*size, here.len());
                depth as f64 + c_norm(here.len() as u64)
            }
            Node::Internal {
                split_dim,
                split_value,
                left,
                right,
            } => {
                let (l, r): (Vec<usize>, Vec<usize>) = here
                    .into_iter()
                    .partition(|&i| points[i][*split_dim] < *split_value);
                assert!(!l.is_empty() && !r.is_empty(), "split outside routed range");
                if x[*split_dim] < *split_value {
                    go(tree, *left, points, l, x, depth + 1)
                } else {
                    go(tree, *right, points, r, x, depth + 1)
                }
            }
        }
    }
    go(tree, 0, points, sample.to_vec(), x, 0)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn rouge_matches_brute_force_lcs(
        a in prop::collection::vec(0u8..4, 1..11),
        b in prop::collection::vec(0u8..4, 0..11),
    ) {
        prop_assert_eq!(lcs_len(&a, &b), brute_lcs(&a, &b));
        let r = rouge_l(&a, &b).unwrap();
        prop_assert!((0.0..=1.0).contains(&r));
        prop_assert_eq!(rouge_l(&a, &a).unwrap(), 1.0);
    }

    #[test]
    fn rouge_recall_cannot_rise_when_reference_grows_with_absent_tokens(
        a in prop::collection::vec(0u8..3, 1..10),
        b in prop::collection::vec(0u8..3, 0..10),
        extra in 1usize..4,
    ) {
        let mut longer = a.clone();
        longer.extend(std::iter::repeat_n(9u8, extra));
        prop_assert!(rouge_l(&longer, &b).unwrap() <= rouge_l(&a, &b).unwrap());
    }

    #[test]
    fn auc_is_bounded_and_order_free(points in curve(), seed in any::<u64>()) {
        let a = auc_from_points(&points).unwrap();
        prop_assert!((0.0..=1.0).contains(&a));
        let mut shuffled = points.clone();
        use rand::seq::SliceRandom;
        shuffled.shuffle(&mut rng_from_seed(seed));
        prop_assert_eq!(a, auc_from_points(&shuffled).unwrap());
    }

    #[test]
    fn raising_a_point_never_lowers_auc(points in quantized_curve(), which in any::<prop::sample::Index>(), bump in 0.0..=1.0f64) {
        let i = which.index(points.len());
        let mut raised = points.clone();
        raised[i].1 = (raised[i].1 + bump).min(1.0);
        prop_assert!(auc_from_points(&raised).unwrap() + 1e-15 >= auc_from_points(&points).unwrap());
    }

    #[test]
    fn auc_matches_riemann_sum(points in quantized_curve()) {
        let poly = frontier_polyline(&points).unwrap();
        prop_assert_eq!(poly.first().unwrap().0, 0.0);
        prop_assert_eq!(poly.last().unwrap().0, 1.0);
        let a = auc_from_points(&points).unwrap();
        prop_assert!((a - riemann(&poly, 100_000)).abs() < 1e-8);
    }

    #[test]
    fn pearson_is_affine_invariant(
        xy in prop::collection::vec((-100.0..100.0f64, -100.0..100.0f64), 3..20),
        scale in 0.1..10.0f64,
        shift in -50.0..50.0f64,
    ) {
        let (xs, ys): (Vec<f64>, Vec<f64>) = xy.into_iter().unzip();
        let Ok(r) = pearson(&xs, &ys) else { return Ok(()) };
        let moved: Vec<f64> = xs.iter().map(|x| scale * x + shift).collect();
        let negated: Vec<f64> = ys.iter().map(|y| -y).collect();
        prop_assert!((pearson(&moved, &ys).unwrap() - r).abs() < 1e-9);
        prop_assert!((pearson(&xs, &negated).unwrap() + r).abs() < 1e-9);
        prop_assert!((-1.0..=1.0).contains(&r));
    }

    #[test]
    fn harmonic_mean_is_at_most_arithmetic_mean(xs in prop::collection::vec(0.01..1.0f64, 1..8)) {
        let u = model_utility(&xs).unwrap();
        let mean = xs.iter().sum::<f64>() / xs.len() as f64;
        prop_assert!(!u.collapsed);
        prop_assert!(u.value <= mean + 1e-12);
        let same = model_utility(&vec![xs[0]; xs.len()]).unwrap();
        prop_assert!((same.value - xs[0]).abs() < 1e-12);
    }

    #[test]
    fn upcore_partitions_and_respects_threshold(scores in scores_strategy(), p in 0.0..=0.5f64) {
        let scores = dedup_ids(scores);
        let cfg = SelectionConfig { criterion: Criterion::Proportional(p), ..Default::default() };
        let sel = select_upcore(&scores, &hidden_for(&scores), &cfg).unwrap();

        let all: BTreeSet<&String> = scores.iter().map(|s| &s.id).collect();
        let kept: BTreeSet<&String> = sel.coreset_ids.iter().collect();
        let pruned: BTreeSet<&String> = sel.pruned_ids.iter().collect();
        prop_assert_eq!(kept.len() + pruned.len(), scores.len());
        prop_assert!(kept.is_disjoint(&pruned));
        prop_assert_eq!(kept.union(&pruned).copied().collect::<BTreeSet<_>>(), all);
        prop_assert_eq!(sel.coreset_ids.len(), cfg.keep_count(scores.len()).unwrap());

        let by_id: HashMap<&String, f64> = scores.iter().map(|s| (&s.id, s.score)).collect();
        let tau = sel.tau.unwrap();
        for k in &kept {
            prop_assert!(by_id[k] <= tau);
            for q in &pruned {
                prop_assert!((by_id[k], *k) < (by_id[q], *q), "kept {} vs pruned {}", k, q);
            }
        }
    }

    #[test]
    fn baselines_partition(ids in prop::collection::btree_set("[a-z]{1,4}", 1..30), frac in 0.0..=1.0f64, seed in any::<u64>()) {
        let ids: Vec<String> = ids.into_iter().collect();
        let size = ((ids.len() as f64) * frac) as usize;
        let r = select_random(&ids, size, seed).unwrap();
        prop_assert_eq!(r.coreset_ids.len(), size);
        let mut both: Vec<&String> = r.coreset_ids.iter().chain(&r.pruned_ids).collect();
        both.sort();
        prop_assert_eq!(both, ids.iter().collect::<Vec<_>>());

        let mut reversed = ids.clone();
        reversed.reverse();
        let again = select_random(&reversed, size, seed).unwrap();
        let a: BTreeSet<_> = r.coreset_ids.iter().collect();
        let b: BTreeSet<_> = again.coreset_ids.iter().collect();
        prop_assert_eq!(a, b);

        let c = select_complete(&ids);
        prop_assert_eq!(c.coreset_ids, ids);
        prop_assert!(c.pruned_ids.is_empty());
    }

    #[test]
    fn dataset_round_trips(ds in dataset_strategy()) {
        let mut buf = Vec::new();
        write_records(&ds, &mut buf).unwrap();
        let back = read_dataset(buf.as_slice(), "buffer").unwrap();
        prop_assert_eq!(&back, &ds);
        for (a, b) in back.records().iter().zip(ds.records()) {
            let (ha, hb) = (a.hidden.as_ref().unwrap(), b.hidden.as_ref().unwrap());
            prop_assert!(ha.iter().zip(hb).all(|(x, y)| x.to_bits() == y.to_bits()));
        }
    }

    #[test]
    fn role_split_is_a_partition(ds in dataset_strategy()) {
        let parts = split_by_role(&ds);
        let mut ids: Vec<String> = Vec::new();
        for (role, part) in &parts {
            prop_assert!(part.records().iter().all(|r| r.role == *role));
            ids.extend(part.ids());
        }
        ids.sort();
        let mut expected = ds.ids();
        expected.sort();
        prop_assert_eq!(ids, expected);
    }

    #[test]
    fn score_is_strictly_decreasing_in_path_length(h1 in 0.0..50.0f64, dh in 1e-6..50.0f64, n in 2u64..5000) {
        let (a, b) = (score_from_path_length(h1, n), score_from_path_length(h1 + dh, n));
        prop_assert!(a > b);
        prop_assert!(b > 0.0 && a <= 1.0);
        prop_assert_eq!(score_from_path_length(0.0, n), 1.0);
    }

    #[test]
    fn path_length_matches_rewalk(
        points in prop::collection::vec(prop::collection::vec(-3i8..4, 2), 1..9),
        seed in any::<u64>(),
        probe in prop::collection::vec(-4.0..5.0f64, 2),
    ) {
        let points: Vec<Vec<f64>> = points.into_iter().map(|p| p.into_iter().map(f64::from).collect()).collect();
        let sample: Vec<usize> = (0..points.len()).collect();
        let tree = build_tree(&points, sample.clone(), usize::MAX, &mut rng_from_seed(seed));
        for x in points.iter().chain(std::iter::once(&probe)) {
            prop_assert_eq!(tree.path_length(x), rewalk(&tree, &points, &sample, x));
        }
        // with no depth cap every leaf is a single point or a run of duplicates
        for leaf in leaves(&tree, &points, &sample) {
            prop_assert!(leaf.iter().all(|&i| points[i] == points[leaf[0]]));
        }
    }

    #[test]
    fn appending_a_duplicate_keeps_other_orderings(
        points in prop::collection::vec(prop::collection::vec(-5.0..5.0f64, 3), 3..20),
        dup in any::<prop::sample::Index>(),
        seed in any::<u64>(),
    ) {
        let n = points.len();
        let mut with_dup = points.clone();
        with_dup.push(points[dup.index(n)].clone());
        let sample: Vec<usize> = (0..n).collect();
        let score = |pts: &[Vec<f64>]| -> Vec<f64> {
            let trees: Vec<IsoTree> = (0..20)
                .map(|t| build_tree(pts, sample.clone(), 8, &mut rng_from_seed(seed ^ t)))
                .collect();
            points
                .iter()
                .map(|x| {
                    let h = trees.iter().map(|t| t.path_length(x)).sum::<f64>() / trees.len() as f64;
                    score_from_path_length(h, pts.len() as u64)
                })
                .collect()
        };
        let (a, b) = (score(&points), score(&with_dup));
        for i in 0..n {
            for j in 0..n {
                prop_assert_eq!(a[i] < a[j], b[i] < b[j]);
            }
        }
    }
}

fn leaves(tree: &IsoTree, points: &[Vec<f64>], sample: &[usize]) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    let mut stack = vec![(0usize, sample.to_vec())];
    while let Some((at, here)) = stack.pop() {
        match &tree.nodes[at] {
            Node::External { .. } => out.push(here),
            Node::Internal {
                split_dim,
                split_value,
                left,
                right,
            } => {
                let (l, r): (Vec<usize>, Vec<usize>) = here
                    .into_iter()
                    .partition(|&i| points[i][*split_dim] < *split_value);
                stack.push((*left, l));
                stack.push((*right, r));
            }
        }
    }
    out
}
