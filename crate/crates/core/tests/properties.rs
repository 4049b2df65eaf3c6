use actress_core::attribution::{faithfulness, AttributionMap};
use actress_core::curation::{
    confidence, fuse, fuse_subset, minmax_normalize, sample_top, selection_budget, ConfidenceCombine, MetricSet,
    PseudoLabel, ScoreTriple,
};
use actress_core::geometry::{
    dequantize, dequantize_value, giou, iou, quantize, quantize_value, Box, CornerBox, QuantizedBox,
};
use actress_core::synthdata::{generate_dataset, generate_sample, labeled_count, split, GenSpec, SplitSpec};
use proptest::prelude::*;

fn corner() -> impl Strategy<Value = CornerBox> {
    (0.0..1.0f64, 0.0..1.0f64, 0.0..1.0f64, 0.0..1.0f64)
        .prop_map(|(a, b, c, d)| CornerBox::new(a.min(b), c.min(d), a.max(b), c.max(d)))
}

fn triple() -> impl Strategy<Value = ScoreTriple> {
    (0.0..=1.0f64, -0.99..=1.0f64, 0.001..=1.0f64).prop_map(|(faith, robust, conf)| ScoreTriple { faith, robust, conf })
}

fn label(id: u64, i_act: f64) -> PseudoLabel {
    PseudoLabel {
        sample_id: id,
        pred_box: Box::new(0.5, 0.5, 0.2, 0.2),
        qbox: QuantizedBox::from_array([0, 0, 0, 0]),
        scores: ScoreTriple { faith: 0.0, robust: 0.0, conf: 0.0 },
        i_act,
        faith_degenerate: false,
    }
}

proptest! {
    #[test]
    fn giou_bounded_by_iou(a in corner(), b in corner()) {
        let (io, gi) = (iou(&a, &b), giou(&a, &b));
        prop_assert!(gi <= io + 1e-12);
        prop_assert!(gi > -1.0 && gi <= 1.0);
        prop_assert!((0.0..=1.0).contains(&io));
    }

    #[test]
    fn overlap_measures_are_symmetric(a in corner(), b in corner()) {
        prop_assert!((iou(&a, &b) - iou(&b, &a)).abs() < 1e-12);
        prop_assert!((giou(&a, &b) - giou(&b, &a)).abs() < 1e-12);
    }

    #[test]
    fn giou_of_a_box_with_itself_is_one(a in corner()) {
        prop_assume!(a.area() > 1e-9);
        prop_assert!((giou(&a, &a) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn center_corner_round_trip(cx in 0.05..0.95f64, cy in 0.05..0.95f64, w in 0.01..0.1f64, h in 0.01..0.1f64) {
        let b = Box::new(cx, cy, w, h);
        let back = b.to_corners().to_center();
        for (x, y) in b.to_array().iter().zip(back.to_array()) {
            prop_assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn quantization_error_is_half_a_bin(v in 0.0..=1.0f64, bins in 2u32..=512) {
        let q = quantize_value(v, bins);
        prop_assert!(q < bins);
        prop_assert!((dequantize_value(q, bins) - v).abs() <= 0.5 / bins as f64 + 1e-15);
    }

    #[test]
    fn quantize_is_idempotent_on_bin_centers(q in prop::array::uniform4(0u32..32)) {
        let qb = QuantizedBox::from_array(q);
        let b = dequantize(&qb, 32).unwrap();
        prop_assert_eq!(quantize(&b, 32).unwrap(), qb);
    }

    #[test]
    fn fused_scores_lie_in_unit_interval(ts in prop::collection::vec(triple(), 1..40)) {
        for f in fuse(&ts).unwrap() {
            prop_assert!((0.0..=1.0).contains(&f));
        }
    }

    #[test]
    fn fusion_is_invariant_to_positive_affine_rescaling(
        ts in prop::collection::vec(triple(), 2..30),
        scale in 0.1..10.0f64,
        shift in -1.0..1.0f64,
    ) {
        let moved: Vec<ScoreTriple> = ts
            .iter()
            .map(|t| ScoreTriple { faith: t.faith * scale + shift, robust: t.robust * scale + shift, conf: t.conf * scale + shift })
            .collect();
        for (a, b) in fuse(&ts).unwrap().iter().zip(fuse(&moved).unwrap()) {
            prop_assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn fusion_is_permutation_equivariant(ts in prop::collection::vec(triple(), 1..30), rot in 0usize..30) {
        let rot = rot % ts.len();
        let mut moved = ts.clone();
        moved.rotate_left(rot);
        let mut expect = fuse(&ts).unwrap();
        expect.rotate_left(rot);
        prop_assert_eq!(fuse(&moved).unwrap(), expect);
    }

    #[test]
    fn single_metric_fusion_is_its_normalized_score(ts in prop::collection::vec(triple(), 1..30)) {
        let faith: Vec<f64> = ts.iter().map(|t| t.faith).collect();
        prop_assert_eq!(fuse_subset(&ts, MetricSet::FAITH).unwrap(), minmax_normalize(&faith).unwrap());
        prop_assert!(fuse_subset(&ts, MetricSet::NONE).unwrap().iter().all(|&v| v == 1.0));
    }

    #[test]
    fn sample_top_matches_a_sort(scores in prop::collection::vec(0u8..8, 1..60), pct in 1.0..=100.0f64) {
        let pool: Vec<PseudoLabel> =
            scores.iter().enumerate().map(|(i, &s)| label(1000 - i as u64, s as f64 / 7.0)).collect();
        let mut oracle = pool.clone();
        oracle.sort_by(|a, b| b.i_act.partial_cmp(&a.i_act).unwrap().then(a.sample_id.cmp(&b.sample_id)));
        oracle.truncate(selection_budget(pct, pool.len()).unwrap());
        prop_assert_eq!(sample_top(&pool, pct, pool.len()).unwrap(), oracle);
    }

    #[test]
    fn confidence_grows_with_the_top_logit(row in prop::collection::vec(-3.0..3.0f64, 8), bump in 0.01..2.0f64) {
        let bins = 2;
        let logits: Vec<f64> = row.clone();
        let top = (0..bins).max_by(|&a, &b| row[a].partial_cmp(&row[b]).unwrap()).unwrap();
        let mut raised = logits.clone();
        raised[top] += bump;
        for combine in [ConfidenceCombine::Product, ConfidenceCombine::Mean] {
            let (c0, c1) = (confidence(&logits, bins, combine), confidence(&raised, bins, combine));
            prop_assert!(c1 > c0);
            prop_assert!(c0 > 0.0 && c1 <= 1.0);
        }
    }

    #[test]
    fn faithfulness_matches_supersampling(
        values in prop::collection::vec(0.0..1.0f64, 16),
        cx in 0.1..0.9f64, cy in 0.1..0.9f64, w in 0.05..0.6f64, h in 0.05..0.6f64,
    ) {
        let map = AttributionMap { grid: 4, values: values.clone(), degenerate: false };
        let b = Box::new(cx, cy, w, h);
        let c = b.to_corners();
        // each cell sampled on a 64 x 64 sub-grid
        let sub = 64;
        let n = 4 * sub;
        let mut inside = 0.0;
        for row in 0..n {
            for col in 0..n {
                let (x, y) = ((col as f64 + 0.5) / n as f64, (row as f64 + 0.5) / n as f64);
                if x >= c.x1 && x < c.x2 && y >= c.y1 && y < c.y2 {
                    inside += values[(row / sub) * 4 + col / sub] / (sub * sub) as f64;
                }
            }
        }
        let oracle = inside / values.iter().sum::<f64>();
        prop_assert!((faithfulness(&map, &b).score - oracle).abs() < 0.02);
    }
}

#[test]
fn dataset_is_deterministic_and_indexable() {
    let spec = GenSpec { n: 40, grid: 8, seed: 11 };
    let a = generate_dataset(&spec).unwrap();
    assert_eq!(a, generate_dataset(&spec).unwrap());
    assert_eq!(a[17], generate_sample(&spec, 17).unwrap());
    let other = generate_dataset(&GenSpec { seed: 12, ..spec }).unwrap();
    assert_ne!(a, other);
}

#[test]
fn split_partitions_and_strips_gold() {
    let data = generate_dataset(&GenSpec { n: 100, grid: 8, seed: 3 }).unwrap();
    let s = split(&data, &SplitSpec { label_fraction: 0.1, seed: 3 }).unwrap();
    assert_eq!(s.labeled.len(), labeled_count(100, 0.1));
    assert_eq!(s.labeled.len() + s.unlabeled.len(), 100);
    assert!(s.labeled.iter().all(|x| x.gold.is_some()));
    assert!(s.unlabeled.iter().all(|x| x.gold.is_none() && x.query.target_index.is_none()));
    let mut ids: Vec<u64> = s.labeled.iter().chain(&s.unlabeled).map(|x| x.id).collect();
    ids.sort_unstable();
    ids.dedup();
    assert_eq!(ids.len(), 100);
}
