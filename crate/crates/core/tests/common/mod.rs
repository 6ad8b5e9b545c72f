#![allow(dead_code)]

use ndarray::Array2;
use outage_detect::gan::{discriminator_loss, generator_loss, Activation, DenseNet};
use outage_detect::sim::{Label, Season};
use outage_detect::window::MeasurementWindow;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

/// `||a - b|| / max(||a|| + ||b||, tiny)`.
pub fn relative_error(a: &[f64], b: &[f64]) -> f64 {
    let diff = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let scale = a.iter().map(|x| x * x).sum::<f64>().sqrt() + b.iter().map(|x| x * x).sum::<f64>().sqrt();
    diff / scale.max(1e-300)
}

fn central_difference(params: &[f64], mut f: impl FnMut(&[f64]) -> f64) -> Vec<f64> {
    let h = 1e-5;
    let mut p = params.to_vec();
    (0..p.len())
        .map(|i| {
            let orig = p[i];
            p[i] = orig + h;
            let up = f(&p);
            p[i] = orig - h;
            let down = f(&p);
            p[i] = orig;
            (up - down) / (2.0 * h)
        })
        .collect()
}

/// Backprop vs finite-difference relative errors for the discriminator and
/// generator losses on one random small network pair.
pub fn gradient_check(seed: u64) -> (f64, f64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let latent = rng.random_range(2..5);
    let dim = 3 * rng.random_range(1..3);
    let hidden = rng.random_range(3..7);
    let batch = rng.random_range(2..6);
    let mut g = DenseNet::new(&[latent, hidden, dim], Activation::Relu, Activation::Tanh, &mut rng);
    let mut d = DenseNet::new(
        &[dim, hidden, hidden, 1],
        Activation::Relu,
        Activation::Sigmoid,
        &mut rng,
    );
    // Nonzero biases keep pre-activations off the ReLU kink.
    for net in [&mut g, &mut d] {
        let p: Vec<f64> = (0..net.param_count()).map(|_| rng.random_range(-1.0..1.0)).collect();
        net.set_params(&p);
    }
    let real = Array2::from_shape_fn((batch, dim), |_| rng.random_range(-1.0..1.0));
    let z = Array2::from_shape_fn((batch, latent), |_| rng.random_range(-1.0..1.0));
    let fake = g.forward(z.view());

    let (_, dg) = discriminator_loss(&d, &real, &fake);
    let numeric_d = central_difference(&d.params(), |p| {
        let mut net = d.clone();
        net.set_params(p);
        discriminator_loss(&net, &real, &fake).0
    });
    let (_, gg) = generator_loss(&g, &d, &z);
    let numeric_g = central_difference(&g.params(), |p| {
        let mut net = g.clone();
        net.set_params(p);
        generator_loss(&net, &d, &z).0
    });
    (
        relative_error(&dg.flatten(), &numeric_d),
        relative_error(&gg.flatten(), &numeric_g),
    )
}

/// Normal windows whose features are independent Gaussians with the given
/// per-feature means and a common standard deviation.
pub fn gaussian_windows(n: usize, means: &[f64], std: f64, seed: u64) -> Vec<MeasurementWindow> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, std).unwrap();
    (0..n)
        .map(|t| MeasurementWindow {
            values: means.iter().map(|m| m + noise.sample(&mut rng)).collect(),
            zone: 0,
            season: Season::Summer,
            timestamp: t,
            label: Label::Normal,
        })
        .collect()
}

/// Feeder rooted at node 0 from `(parent, child)` edges; `observable` lists
/// the non-root metered nodes.
pub fn feeder(edges: &[(u32, u32)], observable: &[u32]) -> outage_detect::feeder::FeederGraph {
    use outage_detect::feeder::{BranchRecord, FeederGraph, NodeRecord, Phase, TopologyDocument};
    let n = edges.len() as u32 + 1;
    let doc = TopologyDocument {
        name: None,
        root: 0,
        nodes: (0..n)
            .map(|id| NodeRecord {
                id,
                observable: id == 0 || observable.contains(&id),
                mean_demand_kw: if id == 0 { 0.0 } else { 2.0 + (id % 3) as f64 },
                power_factor: 0.95,
                phase: Phase::A,
            })
            .collect(),
        branches: edges
            .iter()
            .map(|&(parent, child)| BranchRecord {
                parent,
                child,
                drop_factor: None,
                length_miles: None,
                k_l: Some(0.002 * (1 + child % 4) as f64),
            })
            .collect(),
    };
    FeederGraph::from_document(&doc).unwrap()
}

/// Chain `0 - 1 - ... - n`.
pub fn chain(n: u32, observable: &[u32]) -> outage_detect::feeder::FeederGraph {
    let edges: Vec<(u32, u32)> = (1..=n).map(|c| (c - 1, c)).collect();
    feeder(&edges, observable)
}

/// A reduced experiment on the bundled feeder that finishes in seconds.
pub fn quick_experiment() -> outage_detect::eval::ExperimentConfig {
    use outage_detect::eval::ExperimentConfig;
    use outage_detect::gan::{GanHyper, InversionConfig};
    ExperimentConfig {
        history_days: 40,
        test_days: 2,
        gan: GanHyper {
            max_iterations: 300,
            min_iterations: 0,
            ..GanHyper::default()
        },
        inversion: InversionConfig {
            steps: 20,
            restarts: 2,
            ..InversionConfig::default()
        },
        ..ExperimentConfig::default()
    }
}

/// Random feeder with at most 30 nodes and at most 6 observable nodes,
/// counting the root.
pub fn small_random_feeder(seed: u64) -> outage_detect::feeder::FeederGraph {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let nodes = rng.random_range(6..=30);
    let observables = rng.random_range(1..=5);
    outage_detect::feeder::random_feeder(&mut rng, nodes, observables)
}

/// Entropy of the selected zones and the exhaustive optimum on one feeder.
pub fn selected_vs_optimal(seed: u64) -> (f64, f64) {
    use outage_detect::par::Exec;
    use outage_detect::zones::{
        brute_force_optimal_entropy, entropy, select_zones, undetectable_partition, DEFAULT_SEARCH_CAP,
    };
    let g = small_random_feeder(seed);
    let zs = select_zones(&g, &mut ChaCha8Rng::seed_from_u64(seed ^ 0x5eed)).unwrap();
    let h = entropy(&undetectable_partition(&g, &zs).unwrap(), g.branch_count()).unwrap();
    let opt = brute_force_optimal_entropy(&g, DEFAULT_SEARCH_CAP, Exec::Sequential).unwrap();
    (h, opt.max_entropy)
}

#[derive(Debug, Default)]
pub struct RemovalCheck {
    /// Zone sets (full or with one zone removed) whose entropy left `[0, ln M]`.
    pub out_of_bounds: usize,
    /// Removals that raised the entropy.
    pub increases: usize,
    /// Removals that merged exactly two classes.
    pub two_class_merges: usize,
    /// Largest gap between the observed drop and the closed form.
    pub max_merge_error: f64,
}

/// Bounds, single-removal monotonicity and the two-class merge formula on
/// the selected zones of one feeder. Branches left uncovered by a removal
/// form their own class.
pub fn removal_check(seed: u64) -> RemovalCheck {
    use outage_detect::zones::{entropy, merge_entropy_loss, partition_allowing_uncovered, select_zones};
    let g = small_random_feeder(seed);
    let m = g.branch_count();
    let zs = select_zones(&g, &mut ChaCha8Rng::seed_from_u64(seed ^ 0x5eed)).unwrap();
    let full = partition_allowing_uncovered(&g, &zs);
    let h = entropy(&full, m).unwrap();
    let in_bounds = |x: f64| (0.0..=(m as f64).ln() + 1e-12).contains(&x);
    let mut out = RemovalCheck::default();
    out.out_of_bounds += usize::from(!in_bounds(h));
    for i in 0..zs.len() {
        let reduced = partition_allowing_uncovered(&g, &zs.without(i));
        let hr = entropy(&reduced, m).unwrap();
        out.out_of_bounds += usize::from(!in_bounds(hr));
        if hr > h + 1e-12 {
            out.increases += 1;
        }
        // Classes of the reduced partition that are not classes of the full one.
        let merged: Vec<_> = reduced.classes.iter().filter(|c| !full.classes.contains(c)).collect();
        if reduced.len() + 1 == full.len() && merged.len() == 1 {
            let parts: Vec<usize> = full
                .classes
                .iter()
                .filter(|c| c.is_subset(merged[0]))
                .map(|c| c.len())
                .collect();
            if parts.len() == 2 {
                out.two_class_merges += 1;
                let err = ((h - hr) - merge_entropy_loss(parts[0], parts[1], m)).abs();
                out.max_merge_error = out.max_merge_error.max(err);
            }
        }
    }
    out
}
