use ndarray::{Array1, Array2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::net::{softplus, DenseNet};
use super::{GanError, Optimizer};
use crate::sim::Season;
use crate::window::MeasurementWindow;

/// Per-feature affine map applied to raw windows before they reach either
/// network: `(x - mean) / (scale * std)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Normalization {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
    /// Extra divisor keeping most normal data inside the generator's
    /// `(-1, 1)` output range.
    pub scale: f64,
}

impl Normalization {
    pub fn fit(windows: &[MeasurementWindow], scale: f64) -> Self {
        let d = windows[0].values.len();
        let n = windows.len() as f64;
        let mut mean = vec![0.0; d];
        for w in windows {
            mean.iter_mut().zip(&w.values).for_each(|(m, v)| *m += v / n);
        }
        let mut var = vec![0.0; d];
        for w in windows {
            var.iter_mut()
                .zip(&w.values)
                .zip(&mean)
                .for_each(|((s, v), m)| *s += (v - m).powi(2) / n);
        }
        let std = var
            .into_iter()
            .zip(&mean)
            .map(|(v, m)| {
                let s = v.sqrt();
                if s > 1e-12 * m.abs().max(1.0) {
                    s
                } else {
                    1.0
                }
            })
            .collect();
        Normalization { mean, std, scale }
    }

    pub fn apply(&self, values: &[f64]) -> Vec<f64> {
        values
            .iter()
            .zip(self.mean.iter().zip(&self.std))
            .map(|(v, (m, s))| (v - m) / (self.scale * s))
            .collect()
    }

    pub fn invert(&self, values: &[f64]) -> Vec<f64> {
        values
            .iter()
            .zip(self.mean.iter().zip(&self.std))
            .map(|(v, (m, s))| v * self.scale * s + m)
            .collect()
    }
}

/// Score statistics over the training population.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Calibration {
    pub mean: f64,
    pub std: f64,
    pub count: usize,
}

impl Calibration {
    pub fn from_scores(scores: &[f64]) -> Self {
        let n = scores.len();
        let mean = scores.iter().sum::<f64>() / n as f64;
        let std = if n > 1 {
            (scores.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
        } else {
            0.0
        };
        Calibration { mean, std, count: n }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingMeta {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub n_d: usize,
    pub iterations: usize,
    pub seed: u64,
    pub optimizer: Optimizer,
    pub converged: bool,
}

/// Distance used by the residual loss.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Norm {
    L1,
    #[default]
    L2,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InversionConfig {
    pub steps: usize,
    pub learning_rate: f64,
    pub restarts: usize,
    pub norm: Norm,
    /// Seed for the restart initializations; every window uses the same one.
    pub seed: u64,
}

impl Default for InversionConfig {
    fn default() -> Self {
        InversionConfig {
            steps: 200,
            learning_rate: 0.05,
            restarts: 8,
            norm: Norm::L2,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnomalyScore {
    pub residual: f64,
    pub discr: f64,
    pub total: f64,
    pub z_star: Vec<f64>,
}

/// Generator/discriminator pair for one (zone, season).
#[derive(Debug, Clone, PartialEq)]
pub struct GanModel {
    pub zone: usize,
    pub season: Season,
    /// Window length `T`; inputs have `3T` features.
    pub window: usize,
    pub latent_dim: usize,
    pub generator: DenseNet,
    pub discriminator: DenseNet,
    pub normalization: Normalization,
    pub lambda: f64,
    pub calibration: Option<Calibration>,
    /// Threshold factor `h` chosen on validation data, if any.
    pub threshold: Option<f64>,
    pub training_meta: TrainingMeta,
}

impl GanModel {
    pub fn feature_dim(&self) -> usize {
        3 * self.window
    }

    pub fn score_mean(&self) -> Option<f64> {
        self.calibration.map(|c| c.mean)
    }

    pub fn score_std(&self) -> Option<f64> {
        self.calibration.map(|c| c.std)
    }

    /// Discriminator probability for a normalized input, kept strictly
    /// inside `(0, 1)` even where the sigmoid saturates in floating point.
    pub fn discriminate(&self, x: &[f64]) -> f64 {
        let a = self.discriminator_logit(x);
        a_to_prob(a)
    }

    fn discriminator_logit(&self, x: &[f64]) -> f64 {
        let row = Array2::from_shape_vec((1, x.len()), x.to_vec()).expect("row vector");
        self.discriminator.forward_trace(row.view()).logits()[[0, 0]]
    }

    pub fn generate(&self, z: &[f64]) -> Vec<f64> {
        let row = Array2::from_shape_vec((1, z.len()), z.to_vec()).expect("row vector");
        self.generator.forward(row.view()).row(0).to_vec()
    }

    fn check_window(&self, w: &MeasurementWindow) -> Result<(), GanError> {
        if w.values.len() != self.feature_dim() {
            return Err(GanError::WindowShape {
                expected: self.feature_dim(),
                found: w.values.len(),
            });
        }
        if !w.is_finite() {
            return Err(GanError::NonFiniteInput);
        }
        Ok(())
    }

    pub fn score(&self, w: &MeasurementWindow, cfg: &InversionConfig) -> Result<AnomalyScore, GanError> {
        self.check_window(w)?;
        let x = self.normalization.apply(&w.values);
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let (z_star, residual) = invert_latent(self, &x, cfg, &mut rng)?;
        let g = self.generate(&z_star);
        // -log D(x) - log(1 - D(G(z*))) written on logits.
        let discr = softplus(-self.discriminator_logit(&x)) + softplus(self.discriminator_logit(&g));
        let total = (1.0 - self.lambda) * residual + self.lambda * discr;
        Ok(AnomalyScore {
            residual,
            discr,
            total,
            z_star,
        })
    }

    pub fn is_abnormal(&self, s: &AnomalyScore, h: f64) -> Result<bool, GanError> {
        let c = self.calibration.ok_or(GanError::UncalibratedModel)?;
        Ok(s.total > c.mean + h * c.std)
    }
}

fn a_to_prob(a: f64) -> f64 {
    super::net::sigmoid(a).clamp(f64::MIN_POSITIVE, 1.0 - f64::EPSILON / 2.0)
}

/// Search the latent cube for the generator output closest to `x` (already
/// normalized). All restarts run as one batch of Adam-scaled descent steps
/// with a cosine-decayed learning rate, projected back onto `[-1, 1]`.
/// Returns the best latent point seen and its residual.
pub fn invert_latent<R: Rng + ?Sized>(
    model: &GanModel,
    x: &[f64],
    cfg: &InversionConfig,
    rng: &mut R,
) -> Result<(Vec<f64>, f64), GanError> {
    let k = cfg.restarts.max(1);
    let d = model.latent_dim;
    let target = Array1::from_vec(x.to_vec());
    let mut z = Array2::from_shape_fn((k, d), |_| rng.random_range(-1.0..=1.0));
    let (mut m1, mut m2) = (Array2::<f64>::zeros((k, d)), Array2::<f64>::zeros((k, d)));
    let (b1, b2, eps) = (0.9, 0.999, 1e-8);
    let mut best: Vec<(f64, Vec<f64>)> = vec![(f64::INFINITY, Vec::new()); k];

    let residuals = |out: &Array2<f64>| -> (Array2<f64>, Vec<f64>) {
        let diff = out - &target;
        let r = diff
            .axis_iter(Axis(0))
            .map(|row| match cfg.norm {
                Norm::L1 => row.iter().map(|v| v.abs()).sum(),
                Norm::L2 => row.iter().map(|v| v * v).sum::<f64>().sqrt(),
            })
            .collect();
        (diff, r)
    };

    for step in 0..=cfg.steps {
        let trace = model.generator.forward_trace(z.view());
        let (diff, res) = residuals(&trace.output);
        for (i, r) in res.iter().enumerate() {
            if *r < best[i].0 {
                best[i] = (*r, z.row(i).to_vec());
            }
        }
        if step == cfg.steps {
            break;
        }
        let grad_out = match cfg.norm {
            Norm::L1 => diff.mapv(|v| {
                if v > 0.0 {
                    1.0
                } else if v < 0.0 {
                    -1.0
                } else {
                    0.0
                }
            }),
            Norm::L2 => {
                let mut g = diff.clone();
                for (mut row, r) in g.axis_iter_mut(Axis(0)).zip(&res) {
                    if *r > 0.0 {
                        row /= *r;
                    }
                }
                g
            }
        };
        let (_, gz) = model.generator.backward(&trace, &grad_out);
        if gz.iter().any(|v| !v.is_finite()) {
            return Err(GanError::NonFiniteGradient);
        }
        let t = (step + 1) as i32;
        let lr = 0.5 * cfg.learning_rate * (1.0 + (std::f64::consts::PI * step as f64 / cfg.steps as f64).cos());
        m1 = m1 * b1 + &gz * (1.0 - b1);
        m2 = m2 * b2 + &gz.mapv(|g| g * g) * (1.0 - b2);
        let (c1, c2) = (1.0 - b1.powi(t), 1.0 - b2.powi(t));
        ndarray::Zip::from(&mut z).and(&m1).and(&m2).for_each(|z, &m, &v| {
            *z = (*z - lr * (m / c1) / ((v / c2).sqrt() + eps)).clamp(-1.0, 1.0);
        });
    }
    let (r, z) = best
        .into_iter()
        .min_by(|a, b| a.0.total_cmp(&b.0))
        .expect("at least one restart");
    Ok((z, r))
}
