//! `FUS1` fusion model files.
//!
//! ```text
//! "FUS1"  u8 kind (0 linear, 1 mlp)
//! 3 x scaler (FED, SER, TED): u32 D, D f64 means, D f64 stds
//! u8 has_adapter [u64 length, ADP1 blob]
//! linear: u32 K, u32 d, K*d f64 weights (row-major), K f64 bias
//! mlp:    u32 layers, f64 dropout, per layer u32 out, u32 in, u8 activation,
//!         out*in f64 weights (row-major), out f64 bias
//! u32 length, UTF-8 metadata as key=value lines
//! ```
//! All integers and floats little-endian.

use std::path::Path;

use nalgebra::{DMatrix, DVector};

use super::head::{Activation, ClassifierHead, DenseLayer, LinearSoftmaxHead, MlpHead};
use super::pipeline::{FusionClassifier, FusionModel, ModelMetadata};
use super::scalers::PerModalityScalers;
use crate::adapter::{AdapterModel, FeatureScaler};
use crate::aggregate::{PoolingMode, FUSED_DIM};
use crate::binio::{put_f64s, put_len_u32, put_u64, ByteReader};
use crate::domain::SentimentClass;
use crate::error::{Error, Result};

pub const MODEL_MAGIC: &[u8; 4] = b"FUS1";

const KIND_LINEAR: u8 = 0;
const KIND_MLP: u8 = 1;

fn put_matrix(out: &mut Vec<u8>, m: &DMatrix<f64>) {
    put_f64s(out, m.transpose().iter().copied());
}

fn metadata_text(meta: &ModelMetadata) -> String {
    let classes: Vec<&str> = SentimentClass::ALL.iter().map(|c| c.name()).collect();
    format!(
        "classes={}\nconfig_digest={}\nseed={}\npooling.fed={}\npooling.ser={}\npooling.ted={}\n",
        classes.join(","),
        meta.config_digest,
        meta.seed,
        meta.pooling.fed,
        meta.pooling.ser,
        meta.pooling.ted,
    )
}

fn parse_metadata(text: &str) -> Result<ModelMetadata> {
    let mut meta = ModelMetadata::default();
    for line in text.lines().filter(|l| !l.trim().is_empty()) {
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| Error::domain(format!("metadata line {line:?} has no '='")))?;
        match key {
            "classes" => {
                let want: Vec<&str> = SentimentClass::ALL.iter().map(|c| c.name()).collect();
                if value.split(',').collect::<Vec<_>>() != want {
                    return Err(Error::domain(format!("unexpected class list {value:?}")));
                }
            }
            "config_digest" => meta.config_digest = value.to_string(),
            "seed" => {
                meta.seed = value
                    .parse()
                    .map_err(|_| Error::domain(format!("bad seed {value:?}")))?
            }
            "pooling.fed" => meta.pooling.fed = value.parse::<PoolingMode>()?,
            "pooling.ser" => meta.pooling.ser = value.parse()?,
            "pooling.ted" => meta.pooling.ted = value.parse()?,
            // Unknown keys are informational.
            _ => {}
        }
    }
    Ok(meta)
}

impl FusionModel {
    pub fn encode(&self) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        out.extend_from_slice(MODEL_MAGIC);
        out.push(match self.classifier {
            FusionClassifier::Linear(_) => KIND_LINEAR,
            FusionClassifier::Mlp(_) => KIND_MLP,
        });
        for s in [&self.scalers.fed, &self.scalers.ser, &self.scalers.ted] {
            s.encode(&mut out)?;
        }
        match &self.adapter {
            Some(a) => {
                let blob = a.encode()?;
                out.push(1);
                put_u64(&mut out, blob.len() as u64);
                out.extend_from_slice(&blob);
            }
            None => out.push(0),
        }
        match &self.classifier {
            FusionClassifier::Linear(h) => {
                put_len_u32(&mut out, h.weights.nrows(), "class count")?;
                put_len_u32(&mut out, h.weights.ncols(), "input dimension")?;
                put_matrix(&mut out, &h.weights);
                put_f64s(&mut out, h.bias.iter().copied());
            }
            FusionClassifier::Mlp(h) => {
                put_len_u32(&mut out, h.layers.len(), "layer count")?;
                put_f64s(&mut out, [h.dropout_p]);
                for l in &h.layers {
                    put_len_u32(&mut out, l.weights.nrows(), "layer output width")?;
                    put_len_u32(&mut out, l.weights.ncols(), "layer input width")?;
                    out.push(l.activation.tag());
                    put_matrix(&mut out, &l.weights);
                    put_f64s(&mut out, l.bias.iter().copied());
                }
            }
        }
        let meta = metadata_text(&self.metadata);
        put_len_u32(&mut out, meta.len(), "metadata length")?;
        out.extend_from_slice(meta.as_bytes());
        Ok(out)
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let mut r = ByteReader::new(bytes);
        r.expect_magic(MODEL_MAGIC)?;
        let kind_at = r.offset();
        let kind = r.u8("classifier kind")?;
        if kind != KIND_LINEAR && kind != KIND_MLP {
            return Err(Error::format(kind_at, format!("unknown classifier kind {kind}")));
        }
        let scaler_at = r.offset();
        let fed = FeatureScaler::decode(&mut r)?;
        let ser = FeatureScaler::decode(&mut r)?;
        let ted = FeatureScaler::decode(&mut r)?;
        let scalers = PerModalityScalers::new(fed, ser, ted).map_err(|e| Error::format(scaler_at, e.to_string()))?;

        let flag_at = r.offset();
        let adapter = match r.u8("adapter flag")? {
            0 => None,
            1 => {
                let len = r.u64("adapter length")?;
                let blob_at = r.offset();
                let len = usize::try_from(len).map_err(|_| Error::format(blob_at, "adapter length overflows"))?;
                let blob = r.take(len, "adapter blob")?;
                let mut sub = ByteReader::with_base(blob, blob_at);
                let a = AdapterModel::decode_from(&mut sub)?;
                sub.finish("embedded adapter")?;
                if a.dim() != FUSED_DIM {
                    return Err(Error::format(blob_at, format!("embedded adapter has dimension {}", a.dim())));
                }
                Some(a)
            }
            other => return Err(Error::format(flag_at, format!("adapter flag {other} is not 0 or 1"))),
        };

        let head_at = r.offset();
        let classifier = if kind == KIND_LINEAR {
            let k = r.u32("class count")? as usize;
            let d = r.u32("input dimension")? as usize;
            let n = k.checked_mul(d).ok_or_else(|| Error::format(head_at, "weight shape overflows"))?;
            let w = DMatrix::from_row_slice(k, d, &r.f64_vec(n, "linear weights")?);
            let b = DVector::from_vec(r.f64_vec(k, "linear bias")?);
            FusionClassifier::Linear(LinearSoftmaxHead::new(w, b).map_err(|e| Error::format(head_at, e.to_string()))?)
        } else {
            let n_layers = r.u32("layer count")? as usize;
            let dropout = r.f64("dropout")?;
            let mut layers = Vec::new();
            for i in 0..n_layers {
                let at = r.offset();
                let out_w = r.u32("layer output width")? as usize;
                let in_w = r.u32("layer input width")? as usize;
                let activation = Activation::from_tag(r.u8("activation")?).map_err(|e| Error::format(at, e.to_string()))?;
                let n = out_w
                    .checked_mul(in_w)
                    .ok_or_else(|| Error::format(at, format!("layer {i} shape overflows")))?;
                let weights = DMatrix::from_row_slice(out_w, in_w, &r.f64_vec(n, "layer weights")?);
                let bias = DVector::from_vec(r.f64_vec(out_w, "layer bias")?);
                layers.push(DenseLayer {
                    weights,
                    bias,
                    activation,
                });
            }
            FusionClassifier::Mlp(MlpHead::new(layers, dropout).map_err(|e| Error::format(head_at, e.to_string()))?)
        };
        if classifier.input_dim() != FUSED_DIM || classifier.n_classes() != SentimentClass::COUNT {
            return Err(Error::format(
                head_at,
                format!(
                    "classifier maps {} -> {}, expected {FUSED_DIM} -> {}",
                    classifier.input_dim(),
                    classifier.n_classes(),
                    SentimentClass::COUNT
                ),
            ));
        }

        let meta_len = r.u32("metadata length")? as usize;
        let meta_at = r.offset();
        let text = std::str::from_utf8(r.take(meta_len, "metadata")?)
            .map_err(|_| Error::format(meta_at, "metadata is not UTF-8"))?;
        let metadata = parse_metadata(text).map_err(|e| Error::format(meta_at, e.to_string()))?;
        r.finish("fusion model")?;
        Ok(Self {
            scalers,
            classifier,
            adapter,
            metadata,
        })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.encode()?)?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::decode(&std::fs::read(path)?)
    }
}
