use std::collections::VecDeque;
use std::io::Write;

use ndarray::{Array2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::model::{Calibration, GanModel, InversionConfig, Normalization, TrainingMeta};
use super::net::{sigmoid, softplus, Activation, DenseNet, Gradients};
use super::GanError;
use crate::par::Exec;
use crate::sim::Label;
use crate::window::MeasurementWindow;

/// Equilibrium value of the discriminator loss, `2 ln 2`.
pub const D_EQUILIBRIUM: f64 = 2.0 * std::f64::consts::LN_2;
/// Equilibrium value of the generator loss, `ln 2`.
pub const G_EQUILIBRIUM: f64 = std::f64::consts::LN_2;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase", tag = "kind")]
pub enum Optimizer {
    #[default]
    Sgd,
    Adam {
        beta1: f64,
        beta2: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GanHyper {
    pub latent_dim: usize,
    pub generator_hidden: Vec<usize>,
    pub discriminator_hidden: Vec<usize>,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub n_d: usize,
    pub max_iterations: usize,
    /// Early stopping is not considered before this many iterations.
    pub min_iterations: usize,
    /// Consecutive in-band iterations required to stop.
    pub patience: usize,
    /// Half-width of the equilibrium band.
    pub tolerance: f64,
    /// Length of the moving average the band test is applied to.
    pub smoothing: usize,
    pub optimizer: Optimizer,
    pub lambda: f64,
    pub normalization_scale: f64,
    pub seed: u64,
}

impl Default for GanHyper {
    fn default() -> Self {
        GanHyper {
            latent_dim: 16,
            generator_hidden: vec![64, 64],
            discriminator_hidden: vec![64, 32],
            learning_rate: 0.01,
            batch_size: 64,
            n_d: 1,
            max_iterations: 20_000,
            min_iterations: 10_000,
            patience: 500,
            tolerance: 0.15,
            smoothing: 50,
            optimizer: Optimizer::Sgd,
            lambda: 0.1,
            normalization_scale: 3.0,
            seed: 0,
        }
    }
}

impl GanHyper {
    pub fn validate(&self) -> Result<(), GanError> {
        let bad = |m: &str| Err(GanError::InvalidHyper(m.to_string()));
        if self.latent_dim == 0 || self.batch_size == 0 || self.n_d == 0 {
            return bad("latent_dim, batch_size and n_d must be positive");
        }
        if self.generator_hidden.contains(&0) || self.discriminator_hidden.contains(&0) {
            return bad("hidden layer widths must be positive");
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate must be positive");
        }
        if !(0.0..=1.0).contains(&self.lambda) {
            return bad("lambda must lie in [0, 1]");
        }
        if !(self.normalization_scale > 0.0) {
            return bad("normalization_scale must be positive");
        }
        if self.smoothing == 0 {
            return bad("smoothing must be positive");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossRecord {
    pub iteration: usize,
    pub delta_d: f64,
    pub delta_g: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrainingLog {
    pub records: Vec<LossRecord>,
    pub converged: bool,
}

/// First line of every loss-curve file.
pub const LOSS_CURVE_FORMAT: &str = "# outage-losscurve v1";

impl TrainingLog {
    /// Mean of the last `n` losses (fewer if the log is shorter).
    pub fn trailing_mean(&self, n: usize) -> Option<(f64, f64)> {
        let k = n.min(self.records.len());
        if k == 0 {
            return None;
        }
        let tail = &self.records[self.records.len() - k..];
        let d = tail.iter().map(|r| r.delta_d).sum::<f64>() / k as f64;
        let g = tail.iter().map(|r| r.delta_g).sum::<f64>() / k as f64;
        Some((d, g))
    }

    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "{LOSS_CURVE_FORMAT}")?;
        writeln!(out, "iteration,delta_D,delta_G")?;
        for r in &self.records {
            writeln!(out, "{},{},{}", r.iteration, r.delta_d, r.delta_g)?;
        }
        Ok(())
    }
}

struct OptState {
    kind: Optimizer,
    lr: f64,
    m: Gradients,
    v: Gradients,
    t: i32,
}

impl OptState {
    fn new(kind: Optimizer, lr: f64, net: &DenseNet) -> Self {
        OptState {
            kind,
            lr,
            m: Gradients::zeros_like(net),
            v: Gradients::zeros_like(net),
            t: 0,
        }
    }

    fn step(&mut self, net: &mut DenseNet, g: &Gradients) {
        self.t += 1;
        let lr = self.lr;
        match self.kind {
            Optimizer::Sgd => {
                for (i, l) in net.layers_mut().iter_mut().enumerate() {
                    l.weights.scaled_add(-lr, &g.weights[i]);
                    l.bias.scaled_add(-lr, &g.biases[i]);
                }
            }
            Optimizer::Adam { beta1, beta2 } => {
                let (c1, c2) = (1.0 - beta1.powi(self.t), 1.0 - beta2.powi(self.t));
                let upd = |p: &mut f64, g: f64, m: &mut f64, v: &mut f64| {
                    *m = beta1 * *m + (1.0 - beta1) * g;
                    *v = beta2 * *v + (1.0 - beta2) * g * g;
                    *p -= lr * (*m / c1) / ((*v / c2).sqrt() + 1e-8);
                };
                for (i, l) in net.layers_mut().iter_mut().enumerate() {
                    ndarray::Zip::from(&mut l.weights)
                        .and(&g.weights[i])
                        .and(&mut self.m.weights[i])
                        .and(&mut self.v.weights[i])
                        .for_each(|p, &g, m, v| upd(p, g, m, v));
                    ndarray::Zip::from(&mut l.bias)
                        .and(&g.biases[i])
                        .and(&mut self.m.biases[i])
                        .and(&mut self.v.biases[i])
                        .for_each(|p, &g, m, v| upd(p, g, m, v));
                }
            }
        }
    }
}

/// Discriminator loss and parameter gradients for one minibatch.
pub fn discriminator_loss(d: &DenseNet, real: &Array2<f64>, fake: &Array2<f64>) -> (f64, Gradients) {
    let m = real.nrows() as f64;
    let tr = d.forward_trace(real.view());
    let tf = d.forward_trace(fake.view());
    let loss = (tr.logits().iter().map(|&a| softplus(-a)).sum::<f64>()
        + tf.logits().iter().map(|&a| softplus(a)).sum::<f64>())
        / m;
    let (mut gr, _) = d.backward_from_logits(&tr, tr.logits().mapv(|a| (sigmoid(a) - 1.0) / m));
    let (gf, _) = d.backward_from_logits(&tf, tf.logits().mapv(|a| sigmoid(a) / m));
    for (a, b) in gr.weights.iter_mut().zip(&gf.weights) {
        *a += b;
    }
    for (a, b) in gr.biases.iter_mut().zip(&gf.biases) {
        *a += b;
    }
    (loss, gr)
}

/// Non-saturating generator loss `mean[-ln D(G(z))]` and its gradient with
/// respect to the generator parameters.
pub fn generator_loss(g: &DenseNet, d: &DenseNet, z: &Array2<f64>) -> (f64, Gradients) {
    let m = z.nrows() as f64;
    let tg = g.forward_trace(z.view());
    let td = d.forward_trace(tg.output.view());
    let loss = td.logits().iter().map(|&a| softplus(-a)).sum::<f64>() / m;
    let (_, gx) = d.backward_from_logits(&td, td.logits().mapv(|a| (sigmoid(a) - 1.0) / m));
    let (grads, _) = g.backward(&tg, &gx);
    (loss, grads)
}

fn sample_latent<R: Rng + ?Sized>(m: usize, d: usize, rng: &mut R) -> Array2<f64> {
    Array2::from_shape_fn((m, d), |_| rng.random_range(-1.0..=1.0))
}

/// Adversarial training on normal windows followed by score calibration over
/// the same windows.
pub fn train<R: Rng + ?Sized>(
    windows: &[MeasurementWindow],
    hyper: &GanHyper,
    inversion: &InversionConfig,
    rng: &mut R,
    exec: Exec,
) -> Result<(GanModel, TrainingLog), GanError> {
    let (mut model, log) = train_uncalibrated(windows, hyper, rng)?;
    let scores = exec.map(windows, |w| model.score(w, inversion).map(|s| s.total));
    let scores = scores.into_iter().collect::<Result<Vec<_>, _>>()?;
    model.calibration = Some(Calibration::from_scores(&scores));
    Ok((model, log))
}

/// Algorithm-level training loop without the calibration pass.
pub fn train_uncalibrated<R: Rng + ?Sized>(
    windows: &[MeasurementWindow],
    hyper: &GanHyper,
    rng: &mut R,
) -> Result<(GanModel, TrainingLog), GanError> {
    hyper.validate()?;
    if let Some(w) = windows.iter().find(|w| w.label != Label::Normal) {
        return Err(GanError::ContaminatedLabels {
            timestamp: w.timestamp,
            label: w.label.to_string(),
        });
    }
    let needed = 10 * hyper.batch_size;
    if windows.len() < needed {
        return Err(GanError::InsufficientData {
            found: windows.len(),
            needed,
        });
    }
    let dim = windows[0].values.len();
    if dim == 0 || !dim.is_multiple_of(3) {
        return Err(GanError::WindowShape {
            expected: 3 * windows[0].len_steps().max(1),
            found: dim,
        });
    }
    if let Some(w) = windows.iter().find(|w| w.values.len() != dim) {
        return Err(GanError::WindowShape {
            expected: dim,
            found: w.values.len(),
        });
    }
    if windows.iter().any(|w| !w.is_finite()) {
        return Err(GanError::NonFiniteInput);
    }
    let first = &windows[0];
    if windows.iter().any(|w| w.zone != first.zone || w.season != first.season) {
        return Err(GanError::InvalidHyper("training windows mix zones or seasons".into()));
    }

    let normalization = Normalization::fit(windows, hyper.normalization_scale);
    let data = Array2::from_shape_fn((windows.len(), dim), |(i, j)| {
        (windows[i].values[j] - normalization.mean[j]) / (normalization.scale * normalization.std[j])
    });

    let mut g_sizes = vec![hyper.latent_dim];
    g_sizes.extend(&hyper.generator_hidden);
    g_sizes.push(dim);
    let mut d_sizes = vec![dim];
    d_sizes.extend(&hyper.discriminator_hidden);
    d_sizes.push(1);
    let mut gen = DenseNet::new(&g_sizes, Activation::Relu, Activation::Tanh, rng);
    let mut disc = DenseNet::new(&d_sizes, Activation::Relu, Activation::Sigmoid, rng);
    let mut g_opt = OptState::new(hyper.optimizer, hyper.learning_rate, &gen);
    let mut d_opt = OptState::new(hyper.optimizer, hyper.learning_rate, &disc);

    let m = hyper.batch_size;
    let mut log = TrainingLog::default();
    let mut recent: VecDeque<(f64, f64)> = VecDeque::with_capacity(hyper.smoothing);
    let (mut sum_d, mut sum_g) = (0.0, 0.0);
    let mut in_band = 0usize;
    for it in 0..hyper.max_iterations {
        let mut delta_d = 0.0;
        for _ in 0..hyper.n_d {
            let idx: Vec<usize> = (0..m).map(|_| rng.random_range(0..windows.len())).collect();
            let real = data.select(Axis(0), &idx);
            let fake = gen.forward(sample_latent(m, hyper.latent_dim, rng).view());
            let (loss, grads) = discriminator_loss(&disc, &real, &fake);
            if !loss.is_finite() || !grads.is_finite() {
                return Err(GanError::NonFiniteLoss { iteration: it });
            }
            d_opt.step(&mut disc, &grads);
            delta_d = loss;
        }
        let (delta_g, grads) = generator_loss(&gen, &disc, &sample_latent(m, hyper.latent_dim, rng));
        if !delta_g.is_finite() || !grads.is_finite() {
            return Err(GanError::NonFiniteLoss { iteration: it });
        }
        g_opt.step(&mut gen, &grads);
        log.records.push(LossRecord {
            iteration: it,
            delta_d,
            delta_g,
        });

        recent.push_back((delta_d, delta_g));
        sum_d += delta_d;
        sum_g += delta_g;
        if recent.len() > hyper.smoothing {
            let (d, g) = recent.pop_front().expect("non-empty");
            sum_d -= d;
            sum_g -= g;
        }
        let k = recent.len() as f64;
        let band = (sum_d / k - D_EQUILIBRIUM).abs() <= hyper.tolerance
            && (sum_g / k - G_EQUILIBRIUM).abs() <= hyper.tolerance;
        in_band = if band && recent.len() == hyper.smoothing {
            in_band + 1
        } else {
            0
        };
        if in_band >= hyper.patience && it + 1 >= hyper.min_iterations {
            log.converged = true;
            break;
        }
    }
    log::debug!(
        "zone {} {}: {} iterations, converged={}",
        first.zone,
        first.season,
        log.records.len(),
        log.converged
    );

    let model = GanModel {
        zone: first.zone,
        season: first.season,
        window: dim / 3,
        latent_dim: hyper.latent_dim,
        generator: gen,
        discriminator: disc,
        normalization,
        lambda: hyper.lambda,
        calibration: None,
        threshold: None,
        training_meta: TrainingMeta {
            learning_rate: hyper.learning_rate,
            batch_size: m,
            n_d: hyper.n_d,
            iterations: log.records.len(),
            seed: hyper.seed,
            optimizer: hyper.optimizer,
            converged: log.converged,
        },
    };
    Ok((model, log))
}
