use std::path::Path;

use base64::engine::general_purpose::STANDARD;
use base64::Engine;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::adam::Moments;
use super::encoder::{round_slice_to_f32, Architecture, Dense, Encoder};
use super::TrainConfig;
use crate::embedding::Modality;
use crate::error::{Error, Result};
use crate::io::{read_json_file, write_json_file};
use crate::matrix::Matrix;
use crate::scalar::Scalar;

const FORMAT: &str = "xmodal-checkpoint";
const VERSION: u32 = 1;

/// Hex SHA-256 of the config's JSON form.
pub fn config_hash(config: &TrainConfig) -> String {
    let json = serde_json::to_vec(config).expect("config serializes");
    hex::encode(Sha256::digest(&json))
}

/// Trained encoders plus the optimizer state they were saved with.
///
/// Parameters are held at `f32` precision so that a saved checkpoint loads
/// back bit for bit.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint<T> {
    pub config: TrainConfig,
    pub config_hash: String,
    /// Epoch the snapshot was taken after, counting from 1.
    pub epoch: usize,
    pub best_val_loss: f64,
    pub learning_rate: f64,
    pub image_encoder: Encoder<T>,
    pub text_encoder: Encoder<T>,
    pub image_moments: Vec<Moments<T>>,
    pub text_moments: Vec<Moments<T>>,
}

#[derive(Serialize, Deserialize)]
struct TensorFile {
    name: String,
    shape: [usize; 2],
    data: String,
}

#[derive(Serialize, Deserialize)]
struct MomentsFile {
    step: u64,
    m: String,
    v: String,
}

#[derive(Serialize, Deserialize)]
struct EncoderFile {
    modality: Modality,
    architecture: Architecture,
    tensors: Vec<TensorFile>,
    moments: Vec<MomentsFile>,
}

#[derive(Serialize, Deserialize)]
struct CheckpointFile {
    format: String,
    version: u32,
    config_hash: String,
    epoch: usize,
    best_val_loss: f64,
    learning_rate: f64,
    config: TrainConfig,
    encoders: Vec<EncoderFile>,
}

fn encode_blob<T: Scalar>(values: &[T]) -> String {
    let mut bytes = Vec::with_capacity(values.len() * 4);
    for v in values {
        bytes.extend_from_slice(&v.to_f32().unwrap_or(f32::NAN).to_le_bytes());
    }
    STANDARD.encode(bytes)
}

fn decode_blob<T: Scalar>(blob: &str, len: usize) -> Result<Vec<T>> {
    let bytes = STANDARD
        .decode(blob)
        .map_err(|e| Error::Checkpoint(format!("bad base64: {e}")))?;
    if bytes.len() != 4 * len {
        return Err(Error::Checkpoint(format!("blob holds {} bytes, expected {}", bytes.len(), 4 * len)));
    }
    Ok(bytes
        .chunks_exact(4)
        .map(|c| T::from_f32(f32::from_le_bytes([c[0], c[1], c[2], c[3]])).expect("f32 representable"))
        .collect())
}

fn rounded_moments<T: Scalar>(moments: &[Moments<T>]) -> Vec<Moments<T>> {
    moments
        .iter()
        .map(|mo| {
            let mut mo = mo.clone();
            round_slice_to_f32(&mut mo.m);
            round_slice_to_f32(&mut mo.v);
            mo
        })
        .collect()
}

fn tensor_names(layers: usize) -> Vec<String> {
    (0..layers)
        .flat_map(|i| [format!("layer{i}.weight"), format!("layer{i}.bias")])
        .collect()
}

fn encoder_file<T: Scalar>(enc: &Encoder<T>, moments: &[Moments<T>]) -> EncoderFile {
    let names = tensor_names(enc.layers().len());
    let tensors = enc
        .tensors()
        .iter()
        .zip(enc.shapes())
        .zip(names)
        .map(|((t, (r, c)), name)| TensorFile {
            name,
            shape: [r, c],
            data: encode_blob(t),
        })
        .collect();
    let moments = moments
        .iter()
        .map(|mo| MomentsFile {
            step: mo.step,
            m: encode_blob(&mo.m),
            v: encode_blob(&mo.v),
        })
        .collect();
    EncoderFile {
        modality: enc.modality(),
        architecture: enc.architecture(),
        tensors,
        moments,
    }
}

fn encoder_from_file<T: Scalar>(file: &EncoderFile) -> Result<(Encoder<T>, Vec<Moments<T>>)> {
    if file.tensors.len() % 2 != 0 || file.tensors.is_empty() {
        return Err(Error::Checkpoint(format!("{} tensors do not form layers", file.tensors.len())));
    }
    let mut layers = Vec::new();
    for pair in file.tensors.chunks(2) {
        let [r, c] = pair[0].shape;
        if pair[1].shape != [1, c] {
            return Err(Error::Checkpoint(format!("bias shape {:?} does not match weight {r}×{c}", pair[1].shape)));
        }
        let weight = Matrix::from_vec(r, c, decode_blob(&pair[0].data, r * c)?);
        let bias = decode_blob(&pair[1].data, c)?;
        layers.push(Dense::new(weight, bias)?);
    }
    let enc = Encoder::from_layers(file.modality, file.architecture, layers)?;
    let lens: Vec<usize> = enc.tensors().iter().map(|t| t.len()).collect();
    if file.moments.len() != lens.len() {
        return Err(Error::Checkpoint("moment count does not match tensor count".into()));
    }
    let moments = file
        .moments
        .iter()
        .zip(lens)
        .map(|(mo, len)| {
            Ok(Moments {
                m: decode_blob(&mo.m, len)?,
                v: decode_blob(&mo.v, len)?,
                step: mo.step,
            })
        })
        .collect::<Result<_>>()?;
    Ok((enc, moments))
}

impl<T: Scalar> Checkpoint<T> {
    /// Snapshot of the given state, rounded to `f32`.
    #[allow(clippy::too_many_arguments)]
    pub fn snapshot(
        config: &TrainConfig,
        epoch: usize,
        best_val_loss: f64,
        learning_rate: f64,
        image_encoder: &Encoder<T>,
        text_encoder: &Encoder<T>,
        image_moments: &[Moments<T>],
        text_moments: &[Moments<T>],
    ) -> Self {
        Self {
            config: config.clone(),
            config_hash: config_hash(config),
            epoch,
            best_val_loss,
            learning_rate,
            image_encoder: image_encoder.rounded_to_f32(),
            text_encoder: text_encoder.rounded_to_f32(),
            image_moments: rounded_moments(image_moments),
            text_moments: rounded_moments(text_moments),
        }
    }

    pub fn encoder(&self, modality: Modality) -> &Encoder<T> {
        match modality {
            Modality::Image => &self.image_encoder,
            Modality::Text => &self.text_encoder,
        }
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let file = CheckpointFile {
            format: FORMAT.into(),
            version: VERSION,
            config_hash: self.config_hash.clone(),
            epoch: self.epoch,
            best_val_loss: self.best_val_loss,
            learning_rate: self.learning_rate,
            config: self.config.clone(),
            encoders: vec![
                encoder_file(&self.image_encoder, &self.image_moments),
                encoder_file(&self.text_encoder, &self.text_moments),
            ],
        };
        write_json_file(path, &file)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let file: CheckpointFile = read_json_file(path)?;
        if file.format != FORMAT || file.version != VERSION {
            return Err(Error::Checkpoint(format!("unsupported format {:?} version {}", file.format, file.version)));
        }
        if config_hash(&file.config) != file.config_hash {
            return Err(Error::Checkpoint("config hash does not match the stored config".into()));
        }
        let [img, txt] = &file.encoders[..] else {
            return Err(Error::Checkpoint(format!("expected 2 encoders, found {}", file.encoders.len())));
        };
        if img.modality != Modality::Image || txt.modality != Modality::Text {
            return Err(Error::Checkpoint("encoders must be stored image first, then text".into()));
        }
        let (image_encoder, image_moments) = encoder_from_file(img)?;
        let (text_encoder, text_moments) = encoder_from_file(txt)?;
        Ok(Self {
            config: file.config,
            config_hash: file.config_hash,
            epoch: file.epoch,
            best_val_loss: file.best_val_loss,
            learning_rate: file.learning_rate,
            image_encoder,
            text_encoder,
            image_moments,
            text_moments,
        })
    }
}
