//! Model checkpoints ("MDLC"): magic, u32 version = 1, a JSON architecture
//! header (length-prefixed), the named f32 parameter blobs in store order,
//! and the embedded feature normalizer, so inference on new audio needs only
//! this one file.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::ssm::{MambaConfig, MambaModel};
use super::transformer::{TransformerConfig, TransformerModel};
use super::Model;
use crate::audio::Normalizer;
use crate::binio::{Reader, Writer};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

const MAGIC: &[u8; 4] = b"MDLC";
const VERSION: u32 = 1;

/// Architecture header; `heads`/`position_vocab` only apply to the
/// transformer variant, `state_size`/`expansion` only to mamba.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArchHeader {
    pub variant: String,
    pub layers: usize,
    pub embed_dim: usize,
    pub ff_dim: usize,
    pub dropout: f64,
    pub window: usize,
    pub feature_dim: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub heads: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub position_vocab: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub state_size: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub expansion: Option<usize>,
    /// Optimizer steps completed when the checkpoint was written.
    #[serde(default)]
    pub step: u64,
}

pub(super) fn header_for<S: crate::tensor::Scalar>(model: &Model<S>, step: u64) -> ArchHeader {
    match model {
        Model::Transformer(m) => {
            let c = m.config();
            ArchHeader {
                variant: "transformer".into(),
                layers: c.layers,
                embed_dim: c.embed_dim,
                ff_dim: c.ff_dim,
                dropout: c.dropout,
                window: c.window,
                feature_dim: c.feature_dim,
                heads: Some(c.heads),
                position_vocab: Some(c.position_vocab),
                state_size: None,
                expansion: None,
                step,
            }
        }
        Model::Mamba(m) => {
            let c = m.config();
            ArchHeader {
                variant: "mamba".into(),
                layers: c.blocks,
                embed_dim: c.embed_dim,
                ff_dim: c.ff_dim,
                dropout: c.dropout,
                window: c.window,
                feature_dim: c.feature_dim,
                heads: None,
                position_vocab: None,
                state_size: Some(c.state_size),
                expansion: Some(c.expansion),
                step,
            }
        }
    }
}

impl ArchHeader {
    fn missing(&self, field: &str) -> Error {
        Error::Data(format!(
            "checkpoint header of variant {} is missing {field}",
            self.variant
        ))
    }

    pub fn to_transformer_config(&self) -> Result<TransformerConfig> {
        Ok(TransformerConfig {
            layers: self.layers,
            heads: self.heads.ok_or_else(|| self.missing("heads"))?,
            embed_dim: self.embed_dim,
            ff_dim: self.ff_dim,
            dropout: self.dropout,
            window: self.window,
            position_vocab: self
                .position_vocab
                .ok_or_else(|| self.missing("position_vocab"))?,
            feature_dim: self.feature_dim,
        })
    }

    pub fn to_mamba_config(&self) -> Result<MambaConfig> {
        Ok(MambaConfig {
            blocks: self.layers,
            embed_dim: self.embed_dim,
            ff_dim: self.ff_dim,
            dropout: self.dropout,
            window: self.window,
            state_size: self.state_size.ok_or_else(|| self.missing("state_size"))?,
            expansion: self.expansion.ok_or_else(|| self.missing("expansion"))?,
            feature_dim: self.feature_dim,
        })
    }
}

pub fn save_checkpoint(
    path: &Path,
    model: &Model<f32>,
    normalizer: &Normalizer,
    step: u64,
) -> Result<()> {
    let header = header_for(model, step);
    let json = serde_json::to_vec(&header).expect("header serializes");
    let mut w = Writer::new();
    w.raw(MAGIC);
    w.u32(VERSION);
    w.u32(json.len() as u32);
    w.raw(&json);
    let store = model.store();
    w.u32(store.len() as u32);
    for (name, tensor) in store.iter() {
        w.u32(name.len() as u32);
        w.raw(name.as_bytes());
        w.u32(tensor.shape().len() as u32);
        for &d in tensor.shape() {
            w.u32(d as u32);
        }
        for &v in tensor.data() {
            w.f32(v);
        }
    }
    w.u32(normalizer.dim() as u32);
    for &v in normalizer.min() {
        w.f64(v);
    }
    for &v in normalizer.max() {
        w.f64(v);
    }
    w.save(path)
}

pub fn load_checkpoint(path: &Path) -> Result<(Model<f32>, Normalizer, u64)> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let mut r = Reader::new(&bytes, path);
    r.magic(MAGIC)?;
    let version = r.u32()?;
    if version != VERSION {
        return Err(r.fail(format!("unsupported checkpoint version {version}")));
    }
    let json_len = r.u32()? as usize;
    let json = r.take(json_len)?;
    let header: ArchHeader = serde_json::from_slice(json)
        .map_err(|e| Error::decode(path, r.offset(), format!("bad header JSON: {e}")))?;

    // Architectures are rebuilt deterministically from the header, then every
    // blob overwrites its parameter by name.
    let mut init_rng = crate::tensor::gradcheck::test_rng(0);
    let mut model: Model<f32> = match header.variant.as_str() {
        "transformer" => Model::Transformer(TransformerModel::new(
            header.to_transformer_config()?,
            &mut init_rng,
        )?),
        "mamba" => Model::Mamba(MambaModel::new(header.to_mamba_config()?, &mut init_rng)?),
        other => return Err(r.fail(format!("unknown variant {other:?}"))),
    };

    let count = r.u32()? as usize;
    if count != model.store().len() {
        return Err(r.fail(format!(
            "checkpoint has {count} parameters, architecture expects {}",
            model.store().len()
        )));
    }
    for _ in 0..count {
        let name_len = r.u32()? as usize;
        let name = String::from_utf8(r.take(name_len)?.to_vec())
            .map_err(|_| r.fail("parameter name is not UTF-8"))?;
        let ndim = r.u32()? as usize;
        let mut shape = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            shape.push(r.u32()? as usize);
        }
        let numel: usize = shape.iter().product();
        let data = r.f32_vec(numel)?;
        let tensor = Tensor::new(shape, data);
        model
            .store_mut()
            .set(&name, tensor)
            .ok_or_else(|| r.fail(format!("unexpected parameter {name} in checkpoint")))?;
    }
    let dim = r.u32()? as usize;
    let min = r.f64_vec(dim)?;
    let max = r.f64_vec(dim)?;
    r.expect_eof()?;
    let normalizer = Normalizer::from_bounds(min, max)?;
    Ok((model, normalizer, header.step))
}
