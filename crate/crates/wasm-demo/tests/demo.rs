use upcore_wasm_demo::{curve, sample_cloud, score, sweep, CurveAuc, ScoredPoint, SweepRow};

#[test]
fn planted_points_rank_first() {
    let cloud = sample_cloud(100, 5, 3);
    let scored: Vec<ScoredPoint> = serde_json::from_str(&score(&cloud, 100, 1).unwrap()).unwrap();
    assert_eq!(scored.len(), 105);
    let mut ranks: Vec<usize> = scored.iter().map(|p| p.rank).collect();
    ranks.sort_unstable();
    assert_eq!(ranks, (0..105).collect::<Vec<_>>());
    // outliers are appended last and sit well outside the blob
    let hits = scored[100..].iter().filter(|p| p.rank < 5).count();
    assert!(hits >= 4, "{hits}");
}

#[test]
fn sweep_starts_equal_and_score_pruning_wins_at_the_end() {
    let cloud = sample_cloud(80, 6, 9);
    let rows: Vec<SweepRow> = serde_json::from_str(&sweep(&cloud, 100, 2).unwrap()).unwrap();
    assert_eq!(rows.len(), 11);
    assert_eq!(rows[0].upcore, rows[0].random);
    assert_eq!(rows[0].kept, 86);
    assert!(rows.windows(2).all(|w| w[1].upcore <= w[0].upcore));
    assert!(rows[10].upcore < rows[10].random);
}

#[test]
fn curve_is_extended_flat() {
    let res: CurveAuc = serde_json::from_str(&curve("[[0.5, 0.6], [0.25, 0.8]]").unwrap()).unwrap();
    assert_eq!(
        res.polyline,
        vec![(0.0, 0.8), (0.25, 0.8), (0.5, 0.6), (1.0, 0.6)]
    );
    assert!((res.auc - (0.2 + 0.175 + 0.3)).abs() < 1e-12);
}

#[test]
fn bad_input_is_an_error() {
    assert!(score("not json", 10, 0).is_err());
    assert!(curve("[[0.5, 2.0], [0.1, 0.1]]").is_err());
    assert!(curve("[[0.5, 0.5]]").is_err());
    assert!(sweep("[]", 10, 0).is_err());
}
