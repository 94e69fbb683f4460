//! Metric oracles, report aggregation and exported artifacts.

mod common;

use common::{rng, stage_of};
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::Rng;
use somnoflow::data::{PreparedRecord, Stage};
use somnoflow::eval::{
    confusion, evaluate_prepared, export_hypnogram, extract_attention, load_hypnogram, metrics, predict_prepared,
    predicted_stages, ConfusionCounts, MetricsReport,
};
use somnoflow::model::{Model, ModelConfig};

fn random_stages(r: &mut impl Rng, n: usize, p_wake: f64) -> Vec<Stage> {
    (0..n).map(|_| stage_of(r.random_bool(p_wake) as usize)).collect()
}

fn close(a: Option<f64>, b: Option<f64>) -> bool {
    match (a, b) {
        (Some(x), Some(y)) => (x - y).abs() <= 1e-12,
        (None, None) => true,
        _ => false,
    }
}

/// Every metric recomputed by scanning the epoch pairs directly.
#[test]
fn metrics_match_direct_counting() {
    let mut r = rng(6);
    for case in 0..1000 {
        let n = r.random_range(1..=60);
        let p_wake = r.random_range(0.0..1.0);
        let truth = random_stages(&mut r, n, p_wake);
        let p_pred = r.random_range(0.0..1.0);
        let pred = random_stages(&mut r, n, p_pred);
        let m = metrics(&confusion(&pred, &truth, None).unwrap()).unwrap();

        let count = |f: &dyn Fn(Stage, Stage) -> bool| pred.iter().zip(&truth).filter(|(&p, &t)| f(p, t)).count() as f64;
        let ratio = |num: f64, den: f64| (den > 0.0).then(|| num / den);
        let agree = count(&|p, t| p == t);
        let truth_wake = count(&|_, t| t == Stage::Wake);
        let pred_wake = count(&|p, _| p == Stage::Wake);
        let nf = n as f64;
        let p_o = agree / nf;
        let p_e = (pred_wake / nf) * (truth_wake / nf) + (1.0 - pred_wake / nf) * (1.0 - truth_wake / nf);

        assert!(close(m.acc, Some(p_o)), "case {case}");
        assert!(close(m.se, ratio(count(&|p, t| p == t && t == Stage::Wake), truth_wake)), "case {case}");
        assert!(close(m.sp, ratio(count(&|p, t| p == t && t == Stage::Sleep), nf - truth_wake)), "case {case}");
        assert!(close(m.ppv, ratio(count(&|p, t| p == t && p == Stage::Wake), pred_wake)), "case {case}");
        assert!(close(m.npv, ratio(count(&|p, t| p == t && p == Stage::Sleep), nf - pred_wake)), "case {case}");
        assert!(close(m.kappa, ratio(p_o - p_e, 1.0 - p_e)), "case {case}");
    }
}

#[test]
fn masked_epochs_are_not_counted() {
    let pred = [Stage::Wake, Stage::Sleep, Stage::Wake];
    let truth = [Stage::Wake, Stage::Wake, Stage::Sleep];
    let c = confusion(&pred, &truth, Some(&[true, false, true])).unwrap();
    assert_eq!(c, ConfusionCounts { tp: 1, fn_: 0, fp: 1, tn: 0 });
}

fn counts() -> impl Strategy<Value = ConfusionCounts> {
    (0u64..50, 0u64..50, 0u64..50, 0u64..50)
        .prop_filter("non-empty", |c| c.0 + c.1 + c.2 + c.3 > 0)
        .prop_map(|(tp, fn_, fp, tn)| ConfusionCounts { tp, fn_, fp, tn })
}

proptest! {
    #[test]
    fn metrics_ignore_epoch_order(seed in any::<u64>(), n in 1usize..80) {
        let mut r = rng(seed);
        let truth = random_stages(&mut r, n, 0.4);
        let pred = random_stages(&mut r, n, 0.4);
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut r);
        let pt: Vec<Stage> = order.iter().map(|&i| pred[i]).collect();
        let tt: Vec<Stage> = order.iter().map(|&i| truth[i]).collect();
        prop_assert_eq!(confusion(&pred, &truth, None).unwrap(), confusion(&pt, &tt, None).unwrap());
    }

    #[test]
    fn kappa_is_symmetric_in_the_positive_class(c in counts()) {
        let swapped = ConfusionCounts { tp: c.tn, fn_: c.fp, fp: c.fn_, tn: c.tp };
        let (a, b) = (metrics(&c).unwrap(), metrics(&swapped).unwrap());
        prop_assert!(close(a.kappa, b.kappa));
        prop_assert!(close(a.se, b.sp) && close(a.ppv, b.npv));
    }

    #[test]
    fn kappa_one_exactly_without_errors(c in counts()) {
        let k = metrics(&c).unwrap().kappa;
        if c.fp == 0 && c.fn_ == 0 {
            // undefined only when a single class fills both margins
            prop_assert!(k == Some(1.0) || (k.is_none() && (c.tp == 0 || c.tn == 0)));
        } else {
            prop_assert!(k.is_none_or(|k| k < 1.0));
        }
    }

    #[test]
    fn identical_patients_pool_to_their_average(c in counts(), patients in 1usize..6) {
        let rows = (0..patients).map(|i| (format!("p{i}"), c)).collect();
        let report = MetricsReport::from_counts(rows).unwrap();
        let a = report.average;
        let p = report.pooled;
        for (x, y) in [(a.acc, p.acc), (a.se, p.se), (a.sp, p.sp), (a.ppv, p.ppv), (a.npv, p.npv), (a.kappa, p.kappa)] {
            prop_assert!(close(x, y));
        }
    }
}

#[test]
fn kappa_average_of_perfect_and_chance() {
    let perfect = ConfusionCounts { tp: 5, fn_: 0, fp: 0, tn: 5 };
    let chance = ConfusionCounts { tp: 0, fn_: 5, fp: 0, tn: 5 };
    let report = MetricsReport::from_counts(vec![("a".into(), perfect), ("b".into(), chance)]).unwrap();
    assert_eq!(report.patients[0].metrics.kappa, Some(1.0));
    assert_eq!(report.patients[1].metrics.kappa, Some(0.0));
    assert_eq!(report.average.kappa, Some(0.5));
    assert_eq!(report.pooled_counts, ConfusionCounts { tp: 5, fn_: 5, fp: 0, tn: 10 });
}

#[test]
fn single_patient_average_is_its_row() {
    let c = ConfusionCounts { tp: 7, fn_: 2, fp: 3, tn: 20 };
    let report = MetricsReport::from_counts(vec![("only".into(), c)]).unwrap();
    assert_eq!(report.average, report.patients[0].metrics);
}

#[test]
fn report_json_round_trip() {
    let report = MetricsReport::from_counts(vec![
        ("a".into(), ConfusionCounts { tp: 0, fn_: 0, fp: 2, tn: 9 }),
        ("b".into(), ConfusionCounts { tp: 4, fn_: 1, fp: 1, tn: 6 }),
    ])
    .unwrap();
    let json = report.to_json().unwrap();
    assert_eq!(MetricsReport::from_json(&json).unwrap(), report);
    let v: serde_json::Value = serde_json::from_str(&json).unwrap();
    // the undefined sensitivity of patient a is an explicit null
    assert!(v["patients"][0]["metrics"]["se"].is_null());
    for key in ["tp", "fn", "fp", "tn"] {
        assert!(v["pooled_counts"][key].is_u64(), "{key}");
    }
}

fn record(id: &str, epochs: usize, seed: u64) -> PreparedRecord {
    let mut r = rng(seed);
    PreparedRecord {
        subject_id: id.into(),
        signal: (0..epochs * 30).map(|_| r.random_range(-2.0..2.0)).collect(),
        labels: random_stages(&mut r, epochs, 0.4),
    }
}

#[test]
fn attention_maps_are_row_stochastic() {
    let model = Model::new(ModelConfig::tiny(), 1).unwrap();
    let mut two_layers = ModelConfig::tiny();
    two_layers.encoder_layers = 2;
    let deep = Model::new(two_layers, 1).unwrap();
    for (m, layers) in [(&model, 1), (&deep, 2)] {
        let maps = extract_attention(m, &record("x", 12, 2)).unwrap();
        assert_eq!(maps.len(), layers);
        for map in &maps {
            assert_eq!(map.matrix.shape(), &[12, 12]);
            for row in map.matrix.data().chunks(12) {
                assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-6);
                assert!(row.iter().all(|v| (0.0..=1.0).contains(v)));
            }
        }
    }
    let single = extract_attention(&model, &record("one", 1, 3)).unwrap();
    assert_eq!(single[0].matrix.data(), &[1.0]);
}

#[test]
fn hypnogram_file_format() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("h.csv");
    let mut r = rng(4);
    let pred = random_stages(&mut r, 25, 0.5);
    let truth = random_stages(&mut r, 25, 0.5);
    export_hypnogram(&pred, Some(&truth), &path).unwrap();
    let text = std::fs::read_to_string(&path).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("epoch,pred,truth"));
    for (i, line) in lines.enumerate() {
        let f: Vec<&str> = line.split(',').collect();
        assert_eq!(f[0], i.to_string());
        assert!(f[1..].iter().all(|s| *s == "W" || *s == "S"), "{line}");
    }
    assert_eq!(load_hypnogram(&path).unwrap(), (pred, Some(truth)));
}

#[test]
fn batched_prediction_matches_single_records() {
    let model = Model::new(ModelConfig::tiny(), 5).unwrap();
    let records: Vec<PreparedRecord> = [4, 9, 2, 9, 6].iter().enumerate().map(|(i, &e)| record(&format!("r{i}"), e, i as u64)).collect();
    let batched = predict_prepared(&model, &records, 2).unwrap();
    for (rec, p) in records.iter().zip(&batched) {
        let alone = model.predict(&rec.signal).unwrap();
        assert_eq!(p.shape(), alone.shape());
        assert!(p.data().iter().zip(alone.data()).all(|(a, b)| (a - b).abs() < 1e-12));
    }
    let report = evaluate_prepared(&model, &records, 2).unwrap();
    for (row, (rec, p)) in report.patients.iter().zip(records.iter().zip(&batched)) {
        assert_eq!(row.subject_id, rec.subject_id);
        assert_eq!(row.counts, confusion(&predicted_stages(p), &rec.labels, None).unwrap());
        assert_eq!(row.counts.total() as usize, rec.labels.len());
    }
}
