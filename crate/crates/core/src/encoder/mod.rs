//! Frozen base encoders and the text-suppressing projection that turns their
//! 512-d output into 256-d visual embeddings.
//!
//! Every encoder sits behind [`BaseEncoder`]. [`VitEncoder`] covers both the
//! seeded mock used in tests and demos and CLIP ViT-B/32 weights loaded from a
//! `safetensors` file; both expose attention capture.

mod clip;
pub mod projection;
pub mod transformer;

use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{load_pixels_with, ChannelNorm, ImageRecord, PixelTensor, DEFAULT_INPUT_SIZE};
use crate::error::{ensure_finite, Error, Result};
pub use projection::{ForgetProjection, Provenance};
use transformer::{Activation, HeadMaps, TransformerConfig, VisionTransformer};

/// Width of the base encoder's embedding.
pub const GENERIC_DIM: usize = 512;
/// Width of the projected visual embedding.
pub const VISUAL_DIM: usize = 256;

/// Static description of a base encoder.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AdapterInfo {
    pub name: String,
    pub input_size: usize,
    pub embed_dim: usize,
    /// Patches per side; the encoder sees `patch_grid² + 1` tokens.
    pub patch_grid: usize,
    pub heads: usize,
    pub supports_attention_capture: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenericEmbedding {
    pub vector: Vec<f64>,
    pub source_id: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VisualEmbedding {
    pub vector: Vec<f64>,
    pub source_id: String,
}

impl VisualEmbedding {
    pub fn new(vector: Vec<f64>, source_id: impl Into<String>) -> Result<Self> {
        if vector.len() != VISUAL_DIM {
            return Err(Error::Argument(format!(
                "visual embedding has length {}, expected {VISUAL_DIM}",
                vector.len()
            )));
        }
        ensure_finite(&vector, "visual embedding")?;
        Ok(Self {
            vector,
            source_id: source_id.into(),
        })
    }
}

/// Which blocks a backward pass should report attention gradients for.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BlockSelection {
    LastOnly,
    All,
}

/// Attention probabilities from one forward pass and, per requested target,
/// their gradients. Blocks are listed first block first.
#[derive(Debug, Clone)]
pub struct AttentionGradients {
    pub output: Vec<f64>,
    pub attention: Vec<HeadMaps>,
    pub grads: Vec<Vec<HeadMaps>>,
    pub patch_grid: usize,
}

/// A frozen image encoder. Implementations take `&self` everywhere, so
/// encoding cannot modify parameters; [`BaseEncoder::checksum`] lets callers
/// verify that.
pub trait BaseEncoder: Send + Sync {
    fn info(&self) -> &AdapterInfo;

    fn channel_norm(&self) -> ChannelNorm {
        ChannelNorm::CLIP
    }

    fn encode(&self, pixels: &PixelTensor) -> Result<Vec<f64>>;

    /// One forward pass, then one backward pass per entry of `output_grads`
    /// (each is `∂target/∂embedding`).
    fn attention_gradients(
        &self,
        _pixels: &PixelTensor,
        _output_grads: &[Vec<f64>],
        _blocks: BlockSelection,
    ) -> Result<AttentionGradients> {
        Err(Error::Capability(self.info().name.clone()))
    }

    /// Digest of every parameter.
    fn checksum(&self) -> String;
}

/// Vision-transformer encoder; thread-safe, no interior mutability.
#[derive(Debug, Clone)]
pub struct VitEncoder {
    info: AdapterInfo,
    model: VisionTransformer,
}

impl VitEncoder {
    pub fn from_model(name: impl Into<String>, model: VisionTransformer) -> Result<Self> {
        let info = AdapterInfo {
            name: name.into(),
            input_size: model.image_size,
            embed_dim: model.transformer.config.out_dim,
            patch_grid: model.grid(),
            heads: model.transformer.config.heads,
            supports_attention_capture: true,
        };
        Ok(Self { info, model })
    }

    /// Deterministic stand-in for CLIP: same input size, patch grid and
    /// output width, small random-weight transformer seeded by `seed`.
    pub fn mock(seed: u64) -> Self {
        let config = TransformerConfig {
            width: 64,
            heads: 4,
            layers: 2,
            mlp_width: 128,
            out_dim: GENERIC_DIM,
            activation: Activation::Gelu,
            ln_eps: 1e-5,
        };
        Self::mock_with(seed, DEFAULT_INPUT_SIZE, 32, config).expect("default mock config is valid")
    }

    pub fn mock_with(seed: u64, image_size: usize, patch_size: usize, config: TransformerConfig) -> Result<Self> {
        let model = VisionTransformer::seeded(image_size, patch_size, config, seed)?;
        Self::from_model(format!("mock-vit:{seed}"), model)
    }

    /// Loads CLIP vision weights in the Hugging Face `safetensors` layout.
    pub fn clip_from_safetensors(path: &std::path::Path) -> Result<Self> {
        let model = clip::load_vision_tower(path)?;
        Self::from_model(format!("clip-vit:{}", path.display()), model)
    }

    pub fn model(&self) -> &VisionTransformer {
        &self.model
    }
}

impl BaseEncoder for VitEncoder {
    fn info(&self) -> &AdapterInfo {
        &self.info
    }

    fn encode(&self, pixels: &PixelTensor) -> Result<Vec<f64>> {
        let out = self.model.forward(pixels)?.output;
        ensure_finite(&out, "base embedding")?;
        Ok(out)
    }

    fn attention_gradients(
        &self,
        pixels: &PixelTensor,
        output_grads: &[Vec<f64>],
        blocks: BlockSelection,
    ) -> Result<AttentionGradients> {
        let trace = self.model.forward(pixels)?;
        let layers = self.model.transformer.config.layers;
        let depth = match blocks {
            BlockSelection::LastOnly => 1,
            BlockSelection::All => layers,
        };
        let mut attention = trace.attention();
        attention.drain(..layers - depth);
        let grads = output_grads
            .iter()
            .map(|g| {
                self.model
                    .transformer
                    .backward(&trace, g, Some(depth))
                    .map(|b| b.attention_grads)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(AttentionGradients {
            output: trace.output,
            attention,
            grads,
            patch_grid: self.model.grid(),
        })
    }

    fn checksum(&self) -> String {
        self.model.checksum()
    }
}

/// Textual encoder reference, `mock:<seed>` or `clip:<weights path>`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum AdapterSpec {
    Mock { seed: u64 },
    Clip { weights: PathBuf },
}

impl AdapterSpec {
    pub fn build(&self) -> Result<VitEncoder> {
        match self {
            AdapterSpec::Mock { seed } => Ok(VitEncoder::mock(*seed)),
            AdapterSpec::Clip { weights } => VitEncoder::clip_from_safetensors(weights),
        }
    }
}

impl fmt::Display for AdapterSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            AdapterSpec::Mock { seed } => write!(f, "mock:{seed}"),
            AdapterSpec::Clip { weights } => write!(f, "clip:{}", weights.display()),
        }
    }
}

impl FromStr for AdapterSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.split_once(':') {
            Some(("mock", seed)) => seed
                .parse()
                .map(|seed| AdapterSpec::Mock { seed })
                .map_err(|_| Error::Argument(format!("bad mock seed in `{s}`"))),
            Some(("clip", path)) if !path.is_empty() => Ok(AdapterSpec::Clip {
                weights: PathBuf::from(path),
            }),
            _ => Err(Error::Argument(format!(
                "adapter must be `mock:<seed>` or `clip:<weights>`, got `{s}`"
            ))),
        }
    }
}

impl TryFrom<String> for AdapterSpec {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<AdapterSpec> for String {
    fn from(s: AdapterSpec) -> String {
        s.to_string()
    }
}

pub fn encode_base(pixels: &PixelTensor, adapter: &dyn BaseEncoder) -> Result<GenericEmbedding> {
    let size = adapter.info().input_size;
    if pixels.size != size {
        return Err(Error::Argument(format!(
            "pixel tensor is {0}×{0}, adapter expects {size}×{size}",
            pixels.size
        )));
    }
    let vector = adapter.encode(pixels)?;
    if vector.len() != adapter.info().embed_dim {
        return Err(Error::Adapter(format!(
            "adapter returned {} values, declared {}",
            vector.len(),
            adapter.info().embed_dim
        )));
    }
    Ok(GenericEmbedding {
        vector,
        source_id: pixels.source_id.clone(),
    })
}

/// Pixels → base embedding → visual embedding for one record.
pub fn encode_visual(
    record: &ImageRecord,
    adapter: &dyn BaseEncoder,
    projection: &ForgetProjection,
) -> Result<VisualEmbedding> {
    let pixels = load_pixels_with(record, adapter.info().input_size, &adapter.channel_norm())?;
    let generic = encode_base(&pixels, adapter)?;
    projection.apply(&generic)
}

/// Order-preserving batch of [`encode_visual`]; a failing record yields an
/// error entry and the rest of the batch still runs.
pub fn encode_visual_batch(
    records: &[ImageRecord],
    adapter: &dyn BaseEncoder,
    projection: &ForgetProjection,
) -> Vec<Result<VisualEmbedding>> {
    records
        .par_iter()
        .map(|r| encode_visual(r, adapter, projection))
        .collect()
}
