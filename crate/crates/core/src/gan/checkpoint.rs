use std::fs;
use std::path::Path;

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use super::model::{Calibration, GanModel, Normalization, TrainingMeta};
use super::net::{Activation, DenseNet, Layer};
use super::GanError;
use crate::sim::Season;

pub const CHECKPOINT_FORMAT: &str = "outage-gan-model";
pub const CHECKPOINT_MAJOR: u32 = 1;
pub const CHECKPOINT_MINOR: u32 = 0;

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct LayerDoc {
    inputs: usize,
    outputs: usize,
    activation: Activation,
    /// Row-major `inputs × outputs`.
    weights: Vec<f64>,
    bias: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ModelDoc {
    format: String,
    version: String,
    zone: usize,
    season: Season,
    window: usize,
    latent_dim: usize,
    lambda: f64,
    normalization: Normalization,
    calibration: Option<Calibration>,
    threshold: Option<f64>,
    training_meta: TrainingMeta,
    generator: Vec<LayerDoc>,
    discriminator: Vec<LayerDoc>,
}

#[derive(Deserialize)]
struct Header {
    format: String,
    version: String,
}

fn net_doc(net: &DenseNet) -> Vec<LayerDoc> {
    net.layers()
        .iter()
        .map(|l| LayerDoc {
            inputs: l.inputs(),
            outputs: l.outputs(),
            activation: l.activation,
            weights: l.weights.iter().copied().collect(),
            bias: l.bias.to_vec(),
        })
        .collect()
}

fn net_from_doc(layers: Vec<LayerDoc>) -> Result<DenseNet, GanError> {
    let layers = layers
        .into_iter()
        .map(|l| {
            let weights = Array2::from_shape_vec((l.inputs, l.outputs), l.weights)
                .map_err(|e| GanError::CorruptFile(format!("layer weights: {e}")))?;
            Ok(Layer {
                weights,
                bias: Array1::from_vec(l.bias),
                activation: l.activation,
            })
        })
        .collect::<Result<Vec<_>, GanError>>()?;
    DenseNet::from_layers(layers).map_err(|e| GanError::CorruptFile(e.to_string()))
}

pub fn model_to_json(model: &GanModel) -> String {
    let doc = ModelDoc {
        format: CHECKPOINT_FORMAT.into(),
        version: format!("{CHECKPOINT_MAJOR}.{CHECKPOINT_MINOR}"),
        zone: model.zone,
        season: model.season,
        window: model.window,
        latent_dim: model.latent_dim,
        lambda: model.lambda,
        normalization: model.normalization.clone(),
        calibration: model.calibration,
        threshold: model.threshold,
        training_meta: model.training_meta.clone(),
        generator: net_doc(&model.generator),
        discriminator: net_doc(&model.discriminator),
    };
    serde_json::to_string(&doc).expect("model serializes")
}

pub fn model_from_json(text: &str) -> Result<GanModel, GanError> {
    let header: Header = serde_json::from_str(text).map_err(|e| GanError::CorruptFile(e.to_string()))?;
    if header.format != CHECKPOINT_FORMAT {
        return Err(GanError::CorruptFile(format!("unexpected format {:?}", header.format)));
    }
    let major: u32 = header
        .version
        .split('.')
        .next()
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| GanError::CorruptFile(format!("bad version {:?}", header.version)))?;
    if major != CHECKPOINT_MAJOR {
        return Err(GanError::VersionMismatch {
            found: header.version,
            supported: CHECKPOINT_MAJOR,
        });
    }
    let doc: ModelDoc = serde_json::from_str(text).map_err(|e| GanError::CorruptFile(e.to_string()))?;
    let generator = net_from_doc(doc.generator)?;
    let discriminator = net_from_doc(doc.discriminator)?;
    let dim = 3 * doc.window;
    if generator.input_dim() != doc.latent_dim
        || generator.output_dim() != dim
        || discriminator.input_dim() != dim
        || discriminator.output_dim() != 1
        || doc.normalization.mean.len() != dim
        || doc.normalization.std.len() != dim
    {
        return Err(GanError::CorruptFile(
            "network shapes disagree with window and latent sizes".into(),
        ));
    }
    Ok(GanModel {
        zone: doc.zone,
        season: doc.season,
        window: doc.window,
        latent_dim: doc.latent_dim,
        generator,
        discriminator,
        normalization: doc.normalization,
        lambda: doc.lambda,
        calibration: doc.calibration,
        threshold: doc.threshold,
        training_meta: doc.training_meta,
    })
}

pub fn save_model(model: &GanModel, path: &Path) -> Result<(), GanError> {
    fs::write(path, model_to_json(model))?;
    Ok(())
}

pub fn load_model(path: &Path) -> Result<GanModel, GanError> {
    model_from_json(&fs::read_to_string(path)?)
}
