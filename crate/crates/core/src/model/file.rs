//! JSON model manifests and CSV datasets.
//!
//! Linear weights travel as base64 of little-endian `f64`, row-major, next to
//! explicit `rows`/`cols`. Everything else is plain JSON.

use std::fs;
use std::path::Path;

use base64::engine::general_purpose::STANDARD;
use base64::Engine;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{Decoder, Distortion, Layer, MixtureComponent, ModelError, ModelSpec, Prior};
use crate::linalg::Matrix;
use crate::scalar::Real;

#[derive(Debug, Error)]
pub enum ModelFileError {
    #[error("cannot read {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("malformed JSON: {0}")]
    Json(#[from] serde_json::Error),
    #[error("{path}: {message}")]
    Field { path: String, message: String },
    #[error("invalid model: {0}")]
    Model(#[from] ModelError),
    #[error("dataset line {line}: {message}")]
    Dataset { line: usize, message: String },
}

fn field(path: impl Into<String>, message: impl Into<String>) -> ModelFileError {
    ModelFileError::Field { path: path.into(), message: message.into() }
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ModelFile {
    name: String,
    prior: PriorFile,
    decoder: DecoderFile,
    distortion: DistortionFile,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
enum PriorFile {
    Gaussian { dim: usize },
    Mixture { components: Vec<ComponentFile> },
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ComponentFile {
    weight: f64,
    mean: Vec<f64>,
    scale: f64,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct DecoderFile {
    latent_dim: usize,
    layers: Vec<LayerFile>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
enum LayerFile {
    Linear { rows: usize, cols: usize, weights: String, bias: Vec<f64> },
    Tanh,
    Relu,
    Sigmoid,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
enum DistortionFile {
    Mse,
    GaussianNll { sigma: f64 },
    FeatureMse { feature_map: DecoderFile },
}

pub fn load_model<T: Real>(path: impl AsRef<Path>) -> Result<ModelSpec<T>, ModelFileError> {
    let path = path.as_ref();
    let text = fs::read_to_string(path)
        .map_err(|source| ModelFileError::Io { path: path.display().to_string(), source })?;
    parse_model(&text)
}

pub fn parse_model<T: Real>(text: &str) -> Result<ModelSpec<T>, ModelFileError> {
    let file: ModelFile = serde_json::from_str(text)?;
    let prior = match file.prior {
        PriorFile::Gaussian { dim } => Prior::StandardGaussian { dim },
        PriorFile::Mixture { components } => Prior::Mixture {
            components: components
                .into_iter()
                .enumerate()
                .map(|(i, c)| {
                    let path = format!("prior.components[{i}]");
                    Ok(MixtureComponent {
                        weight: finite(c.weight, &format!("{path}.weight"))?,
                        mean: finite_vec(&c.mean, &format!("{path}.mean"))?,
                        scale: finite(c.scale, &format!("{path}.scale"))?,
                    })
                })
                .collect::<Result<_, ModelFileError>>()?,
        },
    };
    prior.validate().map_err(|e| field("prior", e.to_string()))?;
    let decoder = decode_decoder(file.decoder, "decoder")?;
    let distortion = match file.distortion {
        DistortionFile::Mse => Distortion::Mse,
        DistortionFile::GaussianNll { sigma } => {
            Distortion::GaussianNll { sigma: finite(sigma, "distortion.sigma")? }
        }
        DistortionFile::FeatureMse { feature_map } => Distortion::FeatureMse {
            feature_map: decode_decoder(feature_map, "distortion.feature_map")?,
        },
    };
    Ok(ModelSpec::new(file.name, prior, decoder, distortion)?)
}

fn finite<T: Real>(v: f64, path: &str) -> Result<T, ModelFileError> {
    if v.is_finite() {
        Ok(T::of(v))
    } else {
        Err(field(path, "non-finite value"))
    }
}

fn finite_vec<T: Real>(v: &[f64], path: &str) -> Result<Vec<T>, ModelFileError> {
    v.iter().enumerate().map(|(i, &x)| finite(x, &format!("{path}[{i}]"))).collect()
}

fn decode_decoder<T: Real>(file: DecoderFile, path: &str) -> Result<Decoder<T>, ModelFileError> {
    let mut layers = Vec::with_capacity(file.layers.len());
    for (i, layer) in file.layers.into_iter().enumerate() {
        let lpath = format!("{path}.layers[{i}]");
        layers.push(match layer {
            LayerFile::Linear { rows, cols, weights, bias } => {
                let bytes = STANDARD
                    .decode(weights.as_bytes())
                    .map_err(|e| field(format!("{lpath}.weights"), format!("invalid base64: {e}")))?;
                if bytes.len() != rows * cols * 8 {
                    return Err(field(
                        format!("{lpath}.weights"),
                        format!(
                            "payload has {} bytes, expected {rows}x{cols}x8 = {}",
                            bytes.len(),
                            rows * cols * 8
                        ),
                    ));
                }
                let data: Vec<f64> = bytes
                    .chunks_exact(8)
                    .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
                    .collect();
                let data = finite_vec(&data, &format!("{lpath}.weights"))?;
                let weight = Matrix::from_vec(rows, cols, data)
                    .map_err(|e| field(format!("{lpath}.weights"), e.to_string()))?;
                let bias = finite_vec(&bias, &format!("{lpath}.bias"))?;
                Layer::Linear { weight, bias }
            }
            LayerFile::Tanh => Layer::Tanh,
            LayerFile::Relu => Layer::Relu,
            LayerFile::Sigmoid => Layer::Sigmoid,
        });
    }
    Decoder::new(file.latent_dim, layers).map_err(|e| field(path, e.to_string()))
}

fn encode_decoder<T: Real>(d: &Decoder<T>) -> DecoderFile {
    DecoderFile {
        latent_dim: d.latent_dim(),
        layers: d
            .layers()
            .iter()
            .map(|l| match l {
                Layer::Linear { weight, bias } => {
                    let mut bytes = Vec::with_capacity(weight.data().len() * 8);
                    for v in weight.data() {
                        bytes.extend_from_slice(&v.as_f64().to_le_bytes());
                    }
                    LayerFile::Linear {
                        rows: weight.rows(),
                        cols: weight.cols(),
                        weights: STANDARD.encode(bytes),
                        bias: bias.iter().map(|b| b.as_f64()).collect(),
                    }
                }
                Layer::Tanh => LayerFile::Tanh,
                Layer::Relu => LayerFile::Relu,
                Layer::Sigmoid => LayerFile::Sigmoid,
            })
            .collect(),
    }
}

/// Serializes a model to the manifest format read by [`load_model`].
pub fn to_json<T: Real>(model: &ModelSpec<T>) -> String {
    let prior = match &model.prior {
        Prior::StandardGaussian { dim } => PriorFile::Gaussian { dim: *dim },
        Prior::Mixture { components } => PriorFile::Mixture {
            components: components
                .iter()
                .map(|c| ComponentFile {
                    weight: c.weight.as_f64(),
                    mean: c.mean.iter().map(|m| m.as_f64()).collect(),
                    scale: c.scale.as_f64(),
                })
                .collect(),
        },
    };
    let distortion = match &model.distortion {
        Distortion::Mse => DistortionFile::Mse,
        Distortion::GaussianNll { sigma } => DistortionFile::GaussianNll { sigma: sigma.as_f64() },
        Distortion::FeatureMse { feature_map } => {
            DistortionFile::FeatureMse { feature_map: encode_decoder(feature_map) }
        }
    };
    let file = ModelFile {
        name: model.name.clone(),
        prior,
        decoder: encode_decoder(&model.decoder),
        distortion,
    };
    serde_json::to_string_pretty(&file).expect("model manifest serializes")
}

pub fn load_dataset<T: Real>(
    path: impl AsRef<Path>,
    output_dim: usize,
) -> Result<Vec<Vec<T>>, ModelFileError> {
    let path = path.as_ref();
    let text = fs::read_to_string(path)
        .map_err(|source| ModelFileError::Io { path: path.display().to_string(), source })?;
    parse_dataset(&text, output_dim)
}

/// One data point per line, comma separated; lines starting with `#` and
/// blank lines are skipped.
pub fn parse_dataset<T: Real>(text: &str, output_dim: usize) -> Result<Vec<Vec<T>>, ModelFileError> {
    let mut rows = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let row: Vec<f64> = line
            .split(',')
            .map(|s| s.trim().parse::<f64>())
            .collect::<Result<_, _>>()
            .map_err(|e| ModelFileError::Dataset { line: i + 1, message: e.to_string() })?;
        if row.len() != output_dim {
            return Err(ModelFileError::Dataset {
                line: i + 1,
                message: format!("expected {output_dim} columns, found {}", row.len()),
            });
        }
        if row.iter().any(|v| !v.is_finite()) {
            return Err(ModelFileError::Dataset { line: i + 1, message: "non-finite value".into() });
        }
        rows.push(row.into_iter().map(T::of).collect());
    }
    if rows.is_empty() {
        return Err(ModelFileError::Dataset { line: 0, message: "dataset is empty".into() });
    }
    Ok(rows)
}
