mod common;

use std::fs;

use common::quick_experiment;
use outage_detect::eval::{
    auc, choose_threshold, compute_metrics, export_plot_data, histogram, run_experiment, run_experiment_in_memory,
    write_artifacts, Artifact, ConfusionCounts, EvalError, ExperimentConfig, ExportRequest, Metrics, DELTA_ZETA_FORMAT,
    HISTOGRAM_FORMAT, METRICS_FORMAT,
};
use outage_detect::gan::Calibration;
use outage_detect::par::Exec;
use proptest::prelude::*;

/// Fraction of positive/negative pairs where the positive scores higher,
/// ties counting one half.
fn pairwise_auc(labels: &[bool], scores: &[f64]) -> f64 {
    let (mut wins, mut pairs) = (0.0, 0.0);
    for (i, &yi) in labels.iter().enumerate() {
        for (j, &yj) in labels.iter().enumerate() {
            if yi && !yj {
                pairs += 1.0;
                if scores[i] > scores[j] {
                    wins += 1.0;
                } else if scores[i] == scores[j] {
                    wins += 0.5;
                }
            }
        }
    }
    wins / pairs
}

#[test]
fn perfect_scorer_scores_one() {
    let labels = [false, false, true, true, false, true];
    let scores = [0.1, 0.2, 0.9, 0.8, 0.3, 0.7];
    let m = compute_metrics(&labels, &scores, 0.5).unwrap();
    assert_eq!(m.values(), [1.0; 5]);
    assert_eq!(
        m.counts,
        ConfusionCounts {
            tp: 3,
            fp: 0,
            tn: 3,
            fn_: 0
        }
    );
}

#[test]
fn inverted_labels_score_zero_auc() {
    let labels = [true, true, false, false, true, false];
    let scores = [0.1, 0.2, 0.9, 0.8, 0.3, 0.7];
    assert_eq!(auc(&labels, &scores).unwrap(), 0.0);
}

#[test]
fn one_misranked_pair() {
    let labels = [false, false, false, true, true, true];
    let scores = [0.1, 0.2, 0.6, 0.5, 0.8, 0.9];
    let a = auc(&labels, &scores).unwrap();
    assert_eq!(a, pairwise_auc(&labels, &scores));
    assert_eq!(a, 8.0 / 9.0);
}

#[test]
fn auc_input_errors() {
    assert!(matches!(
        auc(&[true, true], &[0.1, 0.2]),
        Err(EvalError::SingleClassAuc)
    ));
    assert!(matches!(
        auc(&[true, false], &[0.1]),
        Err(EvalError::LengthMismatch { labels: 2, scores: 1 })
    ));
    assert!(EvalError::SingleClassAuc.is_validation());
}

#[test]
fn threshold_meets_target_rate() {
    let scores: Vec<f64> = (0..200).map(|i| i as f64 / 100.0).collect();
    let cal = Calibration {
        mean: 1.0,
        std: 0.5,
        count: 200,
    };
    let h = choose_threshold(&scores, &cal, 0.0, 0.01);
    let above = scores.iter().filter(|&&s| s > cal.mean + h * cal.std).count();
    assert!(above <= 2);
    // Any smaller factor lets more through.
    let looser = scores.iter().filter(|&&s| s > cal.mean + (h - 1e-6) * cal.std).count();
    assert!(looser > 2);
    assert_eq!(choose_threshold(&scores, &cal, 5.0, 0.01), 5.0);
}

#[test]
fn histogram_bins_cover_range() {
    let normal = [0.3, 0.5, 0.5, 0.9];
    let outage = [1.5, 2.0];
    let rows = histogram(&normal, &outage, 7);
    assert_eq!(rows.len(), 7);
    assert_eq!(rows[0].0, 0.3);
    assert_eq!(rows[6].1, 2.0);
    assert_eq!(rows.iter().map(|r| r.2).sum::<usize>(), 4);
    assert_eq!(rows.iter().map(|r| r.3).sum::<usize>(), 2);
    for w in rows.windows(2) {
        assert_eq!(w[0].1, w[1].0);
    }
    assert!(histogram(&[], &[], 5).is_empty());
}

#[test]
fn config_errors_are_validation_errors() {
    let e = ExperimentConfig::from_toml("nonsense = 1").unwrap_err();
    assert!(e.is_validation());
    let bad = ExperimentConfig {
        split: [0.5, 0.5, 0.5],
        ..ExperimentConfig::default()
    };
    assert!(bad.validate().unwrap_err().is_validation());
    let cfg = ExperimentConfig::from_toml("seed = 3\n[gan]\nlearning_rate = 0.02\n[inversion]\nnorm = \"l1\"").unwrap();
    assert_eq!(cfg.seed, 3);
    assert_eq!(cfg.gan.learning_rate, 0.02);
    assert_eq!(cfg.window, 6);
}

#[test]
fn missing_artifacts_are_reported() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("x.csv");
    for a in ["histogram", "losscurve", "delta-zeta"] {
        let req = ExportRequest::new(a.parse().unwrap());
        assert!(matches!(
            export_plot_data(dir.path(), &req, &out),
            Err(EvalError::MissingArtifact(_))
        ));
    }
    assert!("scatter".parse::<Artifact>().is_err());
}

fn parse_csv(text: &str, header: &str) -> Vec<Vec<String>> {
    let mut lines = text.lines();
    assert!(lines.next().unwrap().starts_with(header));
    lines
        .skip(1)
        .map(|l| l.split(',').map(str::to_string).collect())
        .collect()
}

#[test]
fn experiment_artifacts_are_consistent_and_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = quick_experiment();
    let cfg_path = dir.path().join("exp.toml");
    fs::write(&cfg_path, toml::to_string(&cfg).unwrap()).unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    let out = run_experiment(&cfg_path, &a, Exec::Sequential).unwrap();
    let again = run_experiment_in_memory(&cfg, dir.path(), Exec::default()).unwrap();
    write_artifacts(&again, &b).unwrap();

    for f in [
        "metrics.csv",
        "reports-medium.jsonl",
        "scores-large.csv",
        "delta-zeta.csv",
        "zones.json",
    ] {
        assert_eq!(
            fs::read(a.join(f)).unwrap(),
            fs::read(b.join(f)).unwrap(),
            "{f} differs"
        );
    }
    for i in 0..out.zones.len() {
        assert!(a.join(format!("models/zone{i}-summer.json")).exists());
    }

    // Metrics recomputed from exported counts equal the emitted values.
    let metrics = fs::read_to_string(a.join("metrics.csv")).unwrap();
    assert!(metrics
        .lines()
        .nth(1)
        .unwrap()
        .starts_with("case,branch,lost_kw,zone,tp,fp,tn,fn,accuracy"));
    let rows = parse_csv(&metrics, METRICS_FORMAT);
    assert_eq!(rows.len(), out.metrics.len());
    for r in &rows {
        let n = |i: usize| r[i].parse::<usize>().unwrap();
        let counts = ConfusionCounts {
            tp: n(4),
            fp: n(5),
            tn: n(6),
            fn_: n(7),
        };
        let emitted: Vec<f64> = r[8..13].iter().map(|v| v.parse().unwrap()).collect();
        let m = Metrics::from_counts(counts, emitted[4]);
        assert_eq!(m.values().to_vec(), emitted);
        assert!(emitted.iter().all(|v| (0.0..=1.0).contains(v)));
        assert_eq!(counts.total(), out.case(&r[0]).unwrap().rows.len());
    }

    // Exports.
    let lc = dir.path().join("lc.csv");
    export_plot_data(&a, &ExportRequest::new(Artifact::LossCurve), &lc).unwrap();
    let text = fs::read_to_string(&lc).unwrap();
    assert_eq!(text.lines().nth(1), Some("iteration,delta_D,delta_G"));
    assert_eq!(text.lines().count(), 2 + out.logs[0].records.len());

    let hist = dir.path().join("h.csv");
    let mut req = ExportRequest::new(Artifact::Histogram);
    req.zone = 1;
    req.bins = 12;
    export_plot_data(&a, &req, &hist).unwrap();
    let rows = parse_csv(&fs::read_to_string(&hist).unwrap(), HISTOGRAM_FORMAT);
    assert_eq!(rows.len(), 12);
    let case = out.case("medium").unwrap();
    let totals: Vec<f64> = case.rows.iter().map(|r| r[1].score.total).collect();
    let lo = totals.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = totals.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    assert!(rows[0][0].parse::<f64>().unwrap() <= lo);
    assert!(rows[11][1].parse::<f64>().unwrap() >= hi);
    let counted: usize = rows
        .iter()
        .map(|r| r[2].parse::<usize>().unwrap() + r[3].parse::<usize>().unwrap())
        .sum();
    assert_eq!(counted, totals.len());

    let dz = dir.path().join("dz.csv");
    export_plot_data(&a, &ExportRequest::new(Artifact::DeltaZeta), &dz).unwrap();
    let rows = parse_csv(&fs::read_to_string(&dz).unwrap(), DELTA_ZETA_FORMAT);
    let outside = out.outside.as_ref().unwrap();
    assert_eq!(rows.len(), outside.deltas.len());
    for s in &outside.zones {
        assert!(s.mean_delta.abs() <= 0.5 * s.normal_sigma, "{s:?}");
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn rank_auc_matches_pairwise_oracle(
        data in prop::collection::vec((any::<bool>(), 0u8..20), 2..300)
    ) {
        let labels: Vec<bool> = data.iter().map(|d| d.0).collect();
        let scores: Vec<f64> = data.iter().map(|d| d.1 as f64 / 4.0).collect();
        prop_assume!(labels.iter().any(|&y| y) && labels.iter().any(|&y| !y));
        let a = auc(&labels, &scores).unwrap();
        prop_assert!((a - pairwise_auc(&labels, &scores)).abs() < 1e-12);
    }

    #[test]
    fn counts_partition_the_windows(
        data in prop::collection::vec((any::<bool>(), -5.0f64..5.0), 2..200),
        threshold in -5.0f64..5.0,
    ) {
        let labels: Vec<bool> = data.iter().map(|d| d.0).collect();
        let scores: Vec<f64> = data.iter().map(|d| d.1).collect();
        prop_assume!(labels.iter().any(|&y| y) && labels.iter().any(|&y| !y));
        let m = compute_metrics(&labels, &scores, threshold).unwrap();
        prop_assert_eq!(m.counts.total(), labels.len());
        prop_assert!(m.values().iter().all(|v| (0.0..=1.0).contains(v)));
        if m.precision > 0.0 && m.recall > 0.0 {
            let h = 2.0 / (1.0 / m.precision + 1.0 / m.recall);
            prop_assert!((m.f1 - h).abs() < 1e-12);
        }
    }
}
