//! JSON model envelope. Tensors are stored as base64 of little-endian IEEE-754
//! doubles in row-major order, so a save/load round trip is bit-exact.

use std::collections::BTreeMap;
use std::io::{Read, Write};

use base64::engine::general_purpose::STANDARD;
use base64::Engine;
use serde::{Deserialize, Serialize};

use super::{Activation, GnnConfig, GnnFamily, GnnParams};
use crate::error::{Error, Result};
use crate::graph::LabelVocab;
use crate::numerics::Tensor;
use crate::predictor::LinearBaseline;

pub const FORMAT_VERSION: u32 = 1;

/// A trained meta-learner, optionally bundled with the baseline that
/// produced its input logits.
#[derive(Clone, Debug, PartialEq)]
pub struct GnnModel {
    pub config: GnnConfig,
    pub vocab: LabelVocab,
    pub params: GnnParams,
    pub base: Option<LinearBaseline>,
}

#[derive(Serialize, Deserialize)]
struct EncodedTensor {
    shape: Vec<usize>,
    data_b64: String,
}

impl EncodedTensor {
    fn encode(t: &Tensor) -> Self {
        let bytes: Vec<u8> = t.data().iter().flat_map(|x| x.to_le_bytes()).collect();
        Self {
            shape: t.shape().to_vec(),
            data_b64: STANDARD.encode(bytes),
        }
    }

    fn decode(&self, name: &str) -> Result<Tensor> {
        let bytes = STANDARD
            .decode(&self.data_b64)
            .map_err(|e| Error::invalid(format!("parameter {name}: bad base64: {e}")))?;
        if bytes.len() % 8 != 0 {
            return Err(Error::invalid(format!(
                "parameter {name}: byte length not a multiple of 8"
            )));
        }
        let data = bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
            .collect();
        Tensor::new(self.shape.clone(), data)
            .map_err(|e| Error::invalid(format!("parameter {name}: {e}")))
    }
}

#[derive(Serialize, Deserialize)]
struct EncodedBaseline {
    weights: EncodedTensor,
    bias: EncodedTensor,
}

#[derive(Serialize, Deserialize)]
struct Envelope {
    format_version: u32,
    family: GnnFamily,
    #[serde(rename = "S")]
    steps: usize,
    #[serde(rename = "K")]
    heads: usize,
    hidden_dim: usize,
    k: usize,
    vocab: LabelVocab,
    params: BTreeMap<String, EncodedTensor>,
    #[serde(default = "relu")]
    activation: Activation,
    #[serde(default)]
    seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    base_predictor: Option<EncodedBaseline>,
}

fn relu() -> Activation {
    Activation::Relu
}

pub fn save_model<W: Write>(writer: W, model: &GnnModel) -> Result<()> {
    let c = &model.config;
    let env = Envelope {
        format_version: FORMAT_VERSION,
        family: c.family,
        steps: c.steps,
        heads: c.heads,
        hidden_dim: c.hidden_dim,
        k: c.num_classes,
        vocab: model.vocab.clone(),
        params: model
            .params
            .iter()
            .map(|(n, t)| (n.clone(), EncodedTensor::encode(t)))
            .collect(),
        activation: c.activation,
        seed: c.seed,
        base_predictor: model.base.as_ref().map(|b| EncodedBaseline {
            weights: EncodedTensor::encode(&b.weights),
            bias: EncodedTensor::encode(&b.bias),
        }),
    };
    serde_json::to_writer(writer, &env)?;
    Ok(())
}

pub fn load_model<R: Read>(reader: R) -> Result<GnnModel> {
    let env: Envelope = serde_json::from_reader(reader)?;
    if env.format_version != FORMAT_VERSION {
        return Err(Error::invalid(format!(
            "unsupported model format_version {} (expected {FORMAT_VERSION})",
            env.format_version
        )));
    }
    if env.vocab.len() != env.k {
        return Err(Error::invalid(format!(
            "model vocabulary has {} names but k = {}",
            env.vocab.len(),
            env.k
        )));
    }
    let config = GnnConfig {
        family: env.family,
        steps: env.steps,
        heads: env.heads,
        hidden_dim: env.hidden_dim,
        num_classes: env.k,
        activation: env.activation,
        seed: env.seed,
    };
    let tensors = env
        .params
        .iter()
        .map(|(n, t)| Ok((n.clone(), t.decode(n)?)))
        .collect::<Result<BTreeMap<_, _>>>()?;
    let params = GnnParams::from_map(&config, tensors)?;
    let base = env
        .base_predictor
        .map(|b| -> Result<LinearBaseline> {
            let weights = b.weights.decode("base.weights")?;
            let bias = b.bias.decode("base.bias")?;
            if weights.shape().len() != 2 || weights.cols() != env.k || bias.numel() != env.k {
                return Err(Error::invalid("base predictor shape disagrees with k"));
            }
            Ok(LinearBaseline { weights, bias })
        })
        .transpose()?;
    Ok(GnnModel {
        config,
        vocab: env.vocab,
        params,
        base,
    })
}
