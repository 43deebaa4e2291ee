//! CLIP vision tower loader for the Hugging Face `safetensors` layout
//! (`vision_model.*` plus `visual_projection.weight`).
//!
//! Widths, depth and patch size come from tensor shapes; heads default to
//! `width / 64`, which holds for every released CLIP ViT.

use std::fs;
use std::path::Path;

use safetensors::{Dtype, SafeTensors};

use super::transformer::{Activation, Block, LayerNorm, Linear, Transformer, TransformerConfig, VisionTransformer};
use crate::error::{Error, Result};
use crate::linalg::Matrix;

const HEAD_DIM: usize = 64;
const LN_EPS: f64 = 1e-5;

pub(super) fn load_vision_tower(path: &Path) -> Result<VisionTransformer> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let tensors = SafeTensors::deserialize(&bytes).map_err(|e| Error::Adapter(format!("{}: {e}", path.display())))?;
    let loader = Loader { tensors };

    let (patch_embed, patch_shape) = loader.tensor("vision_model.embeddings.patch_embedding.weight")?;
    let [width, channels, patch, patch_w] = patch_shape[..] else {
        return Err(Error::Adapter("patch embedding must be 4-D".into()));
    };
    if channels != 3 || patch != patch_w {
        return Err(Error::Adapter(format!(
            "unsupported patch embedding shape {patch_shape:?}"
        )));
    }
    let class_embedding = loader.vector("vision_model.embeddings.class_embedding", width)?;
    let (positions, pos_shape) = loader.tensor("vision_model.embeddings.position_embedding.weight")?;
    let tokens = pos_shape[0];
    let grid = ((tokens - 1) as f64).sqrt().round() as usize;
    if grid * grid + 1 != tokens || pos_shape.get(1) != Some(&width) {
        return Err(Error::Adapter(format!(
            "position table {pos_shape:?} is not (k²+1)×{width}"
        )));
    }

    let mut layers = 0;
    while loader.has(&format!("vision_model.encoder.layers.{layers}.layer_norm1.weight")) {
        layers += 1;
    }
    if layers == 0 {
        return Err(Error::Adapter("no encoder layers found".into()));
    }
    let (_, fc1_shape) = loader.tensor("vision_model.encoder.layers.0.mlp.fc1.weight")?;
    let mlp_width = fc1_shape[0];
    let (proj, proj_shape) = loader.tensor("visual_projection.weight")?;
    let out_dim = proj_shape[0];

    let config = TransformerConfig {
        width,
        heads: (width / HEAD_DIM).max(1),
        layers,
        mlp_width,
        out_dim,
        activation: Activation::QuickGelu,
        ln_eps: LN_EPS,
    };
    let mut blocks = Vec::with_capacity(layers);
    for i in 0..layers {
        let p = format!("vision_model.encoder.layers.{i}");
        blocks.push(Block {
            ln_1: loader.layer_norm(&format!("{p}.layer_norm1"), width)?,
            q: loader.linear(&format!("{p}.self_attn.q_proj"), width, width)?,
            k: loader.linear(&format!("{p}.self_attn.k_proj"), width, width)?,
            v: loader.linear(&format!("{p}.self_attn.v_proj"), width, width)?,
            out: loader.linear(&format!("{p}.self_attn.out_proj"), width, width)?,
            ln_2: loader.layer_norm(&format!("{p}.layer_norm2"), width)?,
            fc_1: loader.linear(&format!("{p}.mlp.fc1"), mlp_width, width)?,
            fc_2: loader.linear(&format!("{p}.mlp.fc2"), width, mlp_width)?,
        });
    }
    let transformer = Transformer::new(
        config,
        blocks,
        loader.layer_norm("vision_model.post_layernorm", width)?,
        Matrix::from_vec(out_dim, width, proj),
    )?;
    Ok(VisionTransformer {
        image_size: grid * patch,
        patch_size: patch,
        patch_embed: Matrix::from_vec(width, 3 * patch * patch, patch_embed),
        class_embedding,
        positions: Matrix::from_vec(tokens, width, positions),
        ln_pre: loader.layer_norm("vision_model.pre_layrnorm", width)?,
        transformer,
    })
}

struct Loader<'a> {
    tensors: SafeTensors<'a>,
}

impl Loader<'_> {
    fn has(&self, name: &str) -> bool {
        self.tensors.tensor(name).is_ok()
    }

    fn tensor(&self, name: &str) -> Result<(Vec<f64>, Vec<usize>)> {
        let view = self
            .tensors
            .tensor(name)
            .map_err(|e| Error::Adapter(format!("tensor `{name}`: {e}")))?;
        let data = view.data();
        let values = match view.dtype() {
            Dtype::F32 => data
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
                .collect(),
            Dtype::F16 => data
                .chunks_exact(2)
                .map(|c| f16_to_f64(u16::from_le_bytes([c[0], c[1]])))
                .collect(),
            Dtype::BF16 => data
                .chunks_exact(2)
                .map(|c| f32::from_bits((u16::from_le_bytes([c[0], c[1]]) as u32) << 16) as f64)
                .collect(),
            other => {
                return Err(Error::Adapter(format!(
                    "tensor `{name}` has unsupported dtype {other:?}"
                )))
            }
        };
        Ok((values, view.shape().to_vec()))
    }

    fn vector(&self, name: &str, len: usize) -> Result<Vec<f64>> {
        let (v, shape) = self.tensor(name)?;
        if shape != [len] {
            return Err(Error::Adapter(format!(
                "tensor `{name}` has shape {shape:?}, expected [{len}]"
            )));
        }
        Ok(v)
    }

    fn linear(&self, prefix: &str, out: usize, inp: usize) -> Result<Linear> {
        let (w, shape) = self.tensor(&format!("{prefix}.weight"))?;
        if shape != [out, inp] {
            return Err(Error::Adapter(format!(
                "tensor `{prefix}.weight` has shape {shape:?}, expected [{out}, {inp}]"
            )));
        }
        let bias = self.vector(&format!("{prefix}.bias"), out)?;
        Ok(Linear::new(Matrix::from_vec(out, inp, w), bias))
    }

    fn layer_norm(&self, prefix: &str, width: usize) -> Result<LayerNorm> {
        Ok(LayerNorm {
            gamma: self.vector(&format!("{prefix}.weight"), width)?,
            beta: self.vector(&format!("{prefix}.bias"), width)?,
            eps: LN_EPS,
        })
    }
}

fn f16_to_f64(bits: u16) -> f64 {
    let sign = if bits & 0x8000 != 0 { -1.0 } else { 1.0 };
    let exp = ((bits >> 10) & 0x1f) as i32;
    let frac = (bits & 0x3ff) as f64;
    match exp {
        0 => sign * frac * 2f64.powi(-24),
        31 if frac == 0.0 => sign * f64::INFINITY,
        31 => f64::NAN,
        _ => sign * (1.0 + frac / 1024.0) * 2f64.powi(exp - 15),
    }
}
