mod common;

use std::collections::{BTreeMap, BTreeSet};

use common::{chain, feeder, gaussian_windows};
use outage_detect::coordinator::{
    bad_data_gate, bad_data_monte_carlo, candidate_branches, coordinate, coordinate_all, run_stream, write_reports,
    CoordError, GateConfig, ReportRecord, StreamConfig, ZoneVerdict, REPORT_FORMAT,
};
use outage_detect::feeder::{random_feeder, BranchId, FeederGraph, NodeId};
use outage_detect::gan::{train_uncalibrated, Calibration, GanHyper, GanModel};
use outage_detect::par::Exec;
use outage_detect::sim::Season;
use outage_detect::zones::{select_zones, Zone, ZoneSet};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn verdicts(abnormal: &[bool]) -> Vec<ZoneVerdict> {
    abnormal
        .iter()
        .enumerate()
        .map(|(zone, &abnormal)| ZoneVerdict {
            zone,
            score: outage_detect::gan::AnomalyScore {
                residual: 0.0,
                discr: 0.0,
                total: 0.0,
                z_star: vec![],
            },
            abnormal,
            timestamp: 42,
        })
        .collect()
}

fn zones(g: &FeederGraph, pairs: &[(u32, u32)]) -> ZoneSet {
    ZoneSet::from_zones(
        pairs
            .iter()
            .enumerate()
            .map(|(i, &(u, d))| Zone::new(g, i, NodeId(u), NodeId(d)).unwrap())
            .collect(),
    )
}

/// Three nested zones on `0 - 1 - ... - 6`, metered at 2, 4 and 6.
fn three_zone_chain() -> (FeederGraph, ZoneSet) {
    let g = chain(6, &[2, 4, 6]);
    let zs = zones(&g, &[(0, 2), (2, 4), (4, 6)]);
    (g, zs)
}

/// Brute-force set difference: branches of `a` checked one by one against
/// every later zone.
fn oracle(zs: &ZoneSet, a: usize) -> BTreeSet<BranchId> {
    let mut out = BTreeSet::new();
    for &b in &zs.zones()[a].branches {
        let mut later = false;
        for j in a + 1..zs.len() {
            for &c in &zs.zones()[j].branches {
                if c == b {
                    later = true;
                }
            }
        }
        if !later {
            out.insert(b);
        }
    }
    out
}

#[test]
fn all_normal_gives_empty_report() {
    let (_, zs) = three_zone_chain();
    let r = coordinate(&zs, &verdicts(&[false, false, false])).unwrap();
    assert_eq!(r.selected_zone, None);
    assert!(r.candidate_branches.is_empty());
    assert!(!r.is_detection());
    assert_eq!(r.timestamp, 42);
}

#[test]
fn chain_pattern_matches_set_difference_oracle() {
    let (_, zs) = three_zone_chain();
    let r = coordinate(&zs, &verdicts(&[true, true, false])).unwrap();
    assert_eq!(r.selected_zone, Some(1));
    assert_eq!(r.candidate_branches, oracle(&zs, 1));
    let expected: BTreeSet<BranchId> = [BranchId(3), BranchId(4)].into();
    assert_eq!(r.candidate_branches, expected);
    for a in 0..zs.len() {
        assert_eq!(candidate_branches(&zs, a), oracle(&zs, a));
    }
}

#[test]
fn deepest_ancestor_zone_is_selected() {
    // Main line 0..=12 metered every other node, plus a lateral off node 1
    // carrying a seventh zone ordered last.
    let mut edges: Vec<(u32, u32)> = (1..=12).map(|c| (c - 1, c)).collect();
    edges.extend([(1, 13), (13, 14)]);
    let g = feeder(&edges, &[2, 4, 6, 8, 10, 12, 13, 14]);
    let zs = zones(&g, &[(0, 2), (2, 4), (4, 6), (6, 8), (8, 10), (10, 12), (13, 14)]);
    let mut pattern = vec![true; 6];
    pattern.push(false);
    let r = coordinate(&zs, &verdicts(&pattern)).unwrap();
    assert_eq!(r.selected_zone, Some(5));
    assert_eq!(r.candidate_branches, zs.zones()[5].branches);
}

#[test]
fn verdict_count_must_match() {
    let (_, zs) = three_zone_chain();
    assert!(matches!(
        coordinate(&zs, &verdicts(&[true, false])),
        Err(CoordError::VerdictCountMismatch { expected: 3, found: 2 })
    ));
    let mut v = verdicts(&[true, false, false]);
    v.swap(0, 1);
    assert!(matches!(
        coordinate(&zs, &v),
        Err(CoordError::VerdictOrder { position: 0, .. })
    ));
}

#[test]
fn disjoint_chains_get_one_report_each() {
    // Two laterals off the root, each with one zone, plus the root zone.
    let g = feeder(&[(0, 1), (1, 2), (0, 3), (3, 4)], &[1, 2, 3, 4]);
    let zs = zones(&g, &[(0, 2), (1, 2), (3, 4)]);
    let reports = coordinate_all(&zs, &verdicts(&[true, true, true])).unwrap();
    let selected: Vec<_> = reports.iter().map(|r| r.selected_zone).collect();
    assert_eq!(selected, vec![Some(2), Some(1)]);
    assert_eq!(reports[0], coordinate(&zs, &verdicts(&[true, true, true])).unwrap());
    let none = coordinate_all(&zs, &verdicts(&[false; 3])).unwrap();
    assert_eq!(none.len(), 1);
    assert_eq!(none[0].selected_zone, None);
}

#[test]
fn gate_keeps_corroborated_detection() {
    let (_, zs) = three_zone_chain();
    let v = verdicts(&[true, true, true]);
    let r = bad_data_gate(&zs, coordinate(&zs, &v).unwrap(), &v, GateConfig::default());
    assert!(!r.dismissed_as_bad_data);
    assert!(r.is_detection());
    assert_eq!(r.redundancy_used, vec![1, 0]);
    assert_eq!(r.candidate_branches, zs.zones()[2].branches);
}

#[test]
fn gate_dismisses_when_enclosing_zone_is_normal() {
    let (_, zs) = three_zone_chain();
    let v = verdicts(&[true, false, true]);
    let r = bad_data_gate(&zs, coordinate(&zs, &v).unwrap(), &v, GateConfig::default());
    assert!(r.dismissed_as_bad_data);
    assert!(r.candidate_branches.is_empty());
    assert_eq!(r.selected_zone, Some(2));
    assert!(!r.is_detection());
}

#[test]
fn gate_cap_limits_consulted_zones() {
    let (_, zs) = three_zone_chain();
    let v = verdicts(&[false, true, true]);
    let capped = GateConfig {
        max_redundancy: Some(1),
    };
    let r = bad_data_gate(&zs, coordinate(&zs, &v).unwrap(), &v, capped);
    assert!(!r.dismissed_as_bad_data);
    assert_eq!(r.redundancy_used, vec![1]);
    let r = bad_data_gate(&zs, coordinate(&zs, &v).unwrap(), &v, GateConfig::default());
    assert!(r.dismissed_as_bad_data);
}

#[test]
fn outermost_zone_skips_gate() {
    let (_, zs) = three_zone_chain();
    let v = verdicts(&[true, false, false]);
    let r = bad_data_gate(&zs, coordinate(&zs, &v).unwrap(), &v, GateConfig::default());
    assert!(r.gate_skipped);
    assert!(r.is_detection());
    assert!(r.redundancy_used.is_empty());
}

#[test]
fn monte_carlo_rate_matches_eta_squared() {
    let (_, zs) = three_zone_chain();
    let (eta, trials) = (0.05, 40_000);
    let out = bad_data_monte_carlo(&zs, 2, eta, trials, GateConfig::default(), 17, Exec::Sequential).unwrap();
    let p = eta * eta;
    let se = (p * (1.0 - p) / trials as f64).sqrt();
    assert!(
        (out.rate() - p).abs() <= 3.0 * se,
        "rate {} vs {p} (se {se})",
        out.rate()
    );
    let again = bad_data_monte_carlo(&zs, 2, eta, trials, GateConfig::default(), 17, Exec::default()).unwrap();
    assert_eq!(out, again);
    assert!(bad_data_monte_carlo(&zs, 3, eta, 10, GateConfig::default(), 0, Exec::Sequential).is_err());
}

fn toy_model(zone: usize, season: Season) -> GanModel {
    let mut windows = gaussian_windows(160, &[1.0, 2.0, 3.0], 0.1, zone as u64);
    for w in &mut windows {
        w.zone = zone;
        w.season = season;
    }
    let hyper = GanHyper {
        latent_dim: 2,
        generator_hidden: vec![4],
        discriminator_hidden: vec![4],
        batch_size: 16,
        max_iterations: 0,
        ..GanHyper::default()
    };
    let mut m = train_uncalibrated(&windows, &hyper, &mut ChaCha8Rng::seed_from_u64(0))
        .unwrap()
        .0;
    m.calibration = Some(Calibration {
        mean: 0.0,
        std: 1.0,
        count: 160,
    });
    m
}

#[test]
fn run_stream_checks_models() {
    let (_, zs) = three_zone_chain();
    let stream: Vec<_> = (0..3)
        .map(|z| {
            let mut w = gaussian_windows(4, &[1.0, 2.0, 3.0], 0.1, 5);
            w.iter_mut().for_each(|w| w.zone = z);
            w
        })
        .collect();
    let cfg = StreamConfig {
        inversion: outage_detect::gan::InversionConfig {
            steps: 5,
            restarts: 1,
            ..Default::default()
        },
        ..StreamConfig::default()
    };
    let mut models: BTreeMap<usize, GanModel> = (0..3).map(|z| (z, toy_model(z, Season::Summer))).collect();
    let reports = run_stream(&zs, &models, &stream, &cfg, Exec::Sequential).unwrap();
    assert_eq!(reports.len(), 4);
    assert!(reports.iter().all(|r| r.verdicts.len() == 3));

    models.insert(1, toy_model(1, Season::Winter));
    assert!(matches!(
        run_stream(&zs, &models, &stream, &cfg, Exec::Sequential),
        Err(CoordError::SeasonMismatch { zone: 1, .. })
    ));
    models.remove(&1);
    assert!(matches!(
        run_stream(&zs, &models, &stream, &cfg, Exec::Sequential),
        Err(CoordError::MissingModel { zone: 1 })
    ));
}

#[test]
fn report_stream_is_self_describing() {
    let (_, zs) = three_zone_chain();
    let v = verdicts(&[true, true, false]);
    let r = bad_data_gate(&zs, coordinate(&zs, &v).unwrap(), &v, GateConfig::default());
    let mut buf = Vec::new();
    write_reports(std::slice::from_ref(&r), &mut buf).unwrap();
    let text = String::from_utf8(buf).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some(REPORT_FORMAT));
    let rec: ReportRecord = serde_json::from_str(lines.next().unwrap()).unwrap();
    assert_eq!(rec, ReportRecord::from(&r));
    assert_eq!(rec.candidate_branches, vec![3, 4]);
    assert_eq!(rec.scores.len(), 3);
}

fn random_setup(seed: u64) -> (FeederGraph, ZoneSet) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let g = random_feeder(&mut rng, 25, 6);
    let zs = select_zones(&g, &mut rng).unwrap();
    (g, zs)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn candidate_set_identity_holds(seed in 0u64..500, mask in any::<u16>()) {
        let (_, zs) = random_setup(seed);
        let pattern: Vec<bool> = (0..zs.len()).map(|i| mask >> i & 1 == 1).collect();
        let v = verdicts(&pattern);
        let r = coordinate(&zs, &v).unwrap();
        prop_assert_eq!(&r, &coordinate(&zs, &v).unwrap());
        match r.selected_zone {
            None => {
                prop_assert!(pattern.iter().all(|a| !a));
                prop_assert!(r.candidate_branches.is_empty());
            }
            Some(a) => {
                prop_assert!(pattern[a] && pattern[a + 1..].iter().all(|x| !x));
                prop_assert!(r.candidate_branches.is_subset(&zs.zones()[a].branches));
                for later in &zs.zones()[a + 1..] {
                    prop_assert!(r.candidate_branches.is_disjoint(&later.branches));
                }
                prop_assert_eq!(&r.candidate_branches, &oracle(&zs, a));
                let gated = bad_data_gate(&zs, r.clone(), &v, GateConfig::default());
                let enclosing = zs.enclosing(a);
                let dismiss = enclosing.iter().any(|&e| !pattern[e]);
                prop_assert_eq!(gated.dismissed_as_bad_data, dismiss);
                prop_assert_eq!(gated.candidate_branches.is_empty(), dismiss || r.candidate_branches.is_empty());
                prop_assert_eq!(gated.gate_skipped, enclosing.is_empty());
            }
        }
    }

    #[test]
    fn fault_lies_in_every_covering_zone(seed in 0u64..500, pick in any::<prop::sample::Index>()) {
        let (g, zs) = random_setup(seed);
        let branches: Vec<BranchId> = g.branch_ids().into_iter().collect();
        let b = *pick.get(&branches);
        let covering = zs.covering(b);
        for w in covering.windows(2) {
            prop_assert!(zs.zones()[w[0]].encloses(&zs.zones()[w[1]]));
        }
        if let Some(&a) = covering.last() {
            let pattern: Vec<bool> = (0..zs.len()).map(|i| covering.contains(&i)).collect();
            let r = bad_data_gate(&zs, coordinate(&zs, &verdicts(&pattern)).unwrap(), &verdicts(&pattern), GateConfig::default());
            prop_assert_eq!(r.selected_zone, Some(a));
            prop_assert!(r.is_detection());
            prop_assert!(r.candidate_branches.contains(&b));
        }
    }
}
