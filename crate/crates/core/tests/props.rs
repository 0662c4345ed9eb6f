//! Property tests for the scoring and schema invariants.

use proptest::prelude::*;

use lavid_core::dataset::GroundTruth;
use lavid_core::lvlm::schema::{parse_class_fields, SchemaField, StructuredSchema, VERDICT_FIELD};
use lavid_core::selection::{weighted_f1, PredictionRecord};

/// Independent reference: direct summation with the alternate closed form
/// `F1 = 2TP / (2TP + FP + FN)`.
fn reference_f1(records: &[PredictionRecord]) -> (f64, f64, f64) {
    let sum = |pred: fn(&PredictionRecord) -> bool| -> f64 {
        records.iter().filter(|r| pred(r)).map(|r| r.confidence).sum()
    };
    let tp = sum(|r| r.truth == GroundTruth::Real && r.predicted == GroundTruth::Real);
    let fp = sum(|r| r.truth == GroundTruth::Ai && r.predicted == GroundTruth::Real);
    let fn_ = sum(|r| r.truth == GroundTruth::Real && r.predicted == GroundTruth::Ai);
    let p = if tp + fp == 0.0 { 0.0 } else { tp / (tp + fp) };
    let r = if tp + fn_ == 0.0 { 0.0 } else { tp / (tp + fn_) };
    let f1 = if 2.0 * tp + fp + fn_ == 0.0 { 0.0 } else { 2.0 * tp / (2.0 * tp + fp + fn_) };
    (p, r, f1)
}

fn label_strategy() -> impl Strategy<Value = GroundTruth> {
    prop_oneof![Just(GroundTruth::Real), Just(GroundTruth::Ai)]
}

fn record_strategy() -> impl Strategy<Value = PredictionRecord> {
    (label_strategy(), label_strategy(), 0u32..=10).prop_map(|(truth, predicted, c)| {
        PredictionRecord {
            sample_id: "s".into(),
            truth,
            predicted,
            confidence: c as f64 / 10.0,
        }
    })
}

proptest! {
    #[test]
    fn weighted_f1_matches_brute_force_reference(
        records in prop::collection::vec(record_strategy(), 1..=10)
    ) {
        let (p, r, f1) = weighted_f1(&records).unwrap();
        let (ep, er, ef1) = reference_f1(&records);
        prop_assert!((p - ep).abs() < 1e-9);
        prop_assert!((r - er).abs() < 1e-9);
        prop_assert!((f1 - ef1).abs() < 1e-9);
        prop_assert!((0.0..=1.0).contains(&f1));
    }

    #[test]
    fn confidence_scaling_cancels(
        records in prop::collection::vec(record_strategy(), 1..=10),
        k in prop_oneof![Just(0.1f64), Just(0.5), Just(1.0)],
    ) {
        let (p, r, f1) = weighted_f1(&records).unwrap();
        let scaled: Vec<PredictionRecord> = records
            .iter()
            .map(|x| PredictionRecord { confidence: x.confidence * k, ..x.clone() })
            .collect();
        let (sp, sr, sf1) = weighted_f1(&scaled).unwrap();
        prop_assert!((p - sp).abs() < 1e-12, "P {p} vs {sp}");
        prop_assert!((r - sr).abs() < 1e-12, "R {r} vs {sr}");
        prop_assert!((f1 - sf1).abs() < 1e-12, "F1 {f1} vs {sf1}");
    }

    #[test]
    fn unit_confidence_equals_unweighted_counts(
        records in prop::collection::vec(
            (label_strategy(), label_strategy()).prop_map(|(truth, predicted)| PredictionRecord {
                sample_id: "s".into(),
                truth,
                predicted,
                confidence: 1.0,
            }),
            1..=10,
        )
    ) {
        // Independent confusion-matrix oracle over integer counts.
        let tp = records.iter().filter(|r| r.truth == GroundTruth::Real && r.predicted == GroundTruth::Real).count() as f64;
        let fp = records.iter().filter(|r| r.truth == GroundTruth::Ai && r.predicted == GroundTruth::Real).count() as f64;
        let fn_ = records.iter().filter(|r| r.truth == GroundTruth::Real && r.predicted == GroundTruth::Ai).count() as f64;
        let expect = if 2.0 * tp + fp + fn_ == 0.0 { 0.0 } else { 2.0 * tp / (2.0 * tp + fp + fn_) };
        let (_, _, f1) = weighted_f1(&records).unwrap();
        prop_assert!((f1 - expect).abs() < 1e-12);
    }

    #[test]
    fn schema_class_render_parse_round_trips(
        extra in prop::collection::btree_set("[a-z][a-z0-9_]{0,14}", 0..=4)
    ) {
        let mut fields = vec![SchemaField::bool_field(VERDICT_FIELD)];
        for name in extra {
            if name != VERDICT_FIELD {
                fields.push(SchemaField::str_field(&name));
            }
        }
        let schema = StructuredSchema::new(fields).unwrap();
        let parsed = parse_class_fields(&schema.render_class_text());
        prop_assert_eq!(parsed, schema.fields());
    }
}
