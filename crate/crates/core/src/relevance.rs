//! Per-dimension token relevance from attention gradients, upscaled to
//! pixel maps.
//!
//! The target scalar for dimension `d` is the distilled coordinate
//! `v_d = W[d] · F · g`, where `g` is the base embedding, so the gradient
//! handed to the encoder is `Fᵀ · W[d]`.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::artifact;
use crate::dataset::PixelTensor;
use crate::detector::{DetectorModel, DISTILL_DIM};
use crate::encoder::projection::ForgetProjection;
use crate::encoder::transformer::HeadMaps;
use crate::encoder::{BaseEncoder, BlockSelection};
use crate::error::{Error, Result};
use crate::resample;

const ROW_SUM_TOLERANCE: f64 = 1e-4;

/// Attention of one block together with `∂v_dim/∂A` for the same block.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionCapture {
    pub attention: HeadMaps,
    pub grad: HeadMaps,
    /// Patch grid side; tokens = k² + 1 with the class token first.
    pub k: usize,
    /// 1-based distilled dimension.
    pub target_dim: usize,
}

impl AttentionCapture {
    pub fn new(attention: HeadMaps, grad: HeadMaps, k: usize, target_dim: usize) -> Result<Self> {
        check_dim(target_dim)?;
        if !attention.same_shape(&grad) {
            return Err(Error::Argument("attention and gradient shapes differ".into()));
        }
        if attention.tokens != k * k + 1 {
            return Err(Error::Argument(format!(
                "{} tokens do not match a {k}×{k} patch grid plus class token",
                attention.tokens
            )));
        }
        for h in 0..attention.heads {
            for i in 0..attention.tokens {
                let sum: f64 = (0..attention.tokens).map(|j| attention.get(h, i, j)).sum();
                if (sum - 1.0).abs() > ROW_SUM_TOLERANCE {
                    return Err(Error::Argument(format!("attention row {i} of head {h} sums to {sum}")));
                }
            }
        }
        Ok(Self {
            attention,
            grad,
            k,
            target_dim,
        })
    }

    /// `E_h (∇A ⊙ A)⁺` as a `tokens × tokens` matrix; each head is clamped
    /// before the mean.
    pub fn head_mean_relevance(&self) -> Vec<f64> {
        let n = self.attention.tokens;
        let heads = self.attention.heads;
        let mut out = vec![0.0; n * n];
        for h in 0..heads {
            for (o, (a, g)) in out.iter_mut().zip(self.attention.head(h).iter().zip(self.grad.head(h))) {
                *o += (a * g).max(0.0);
            }
        }
        out.iter_mut().for_each(|v| *v /= heads as f64);
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokenRelevanceMap {
    /// `k × k`, row-major, nonnegative.
    pub grid: Vec<f64>,
    pub k: usize,
    pub target_dim: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PixelRelevanceMap {
    /// `height × width`, row-major, in `[0, 1]`.
    pub map: Vec<f64>,
    pub height: usize,
    pub width: usize,
    pub target_dim: usize,
    /// Source grid was constant; `map` is all zeros.
    pub degenerate: bool,
}

impl PixelRelevanceMap {
    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.map[row * self.width + col]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RelevanceStack {
    /// Exactly 16 maps, dimension 1 first.
    pub maps: Vec<PixelRelevanceMap>,
    pub source_id: String,
    pub k: usize,
}

impl RelevanceStack {
    pub fn height(&self) -> usize {
        self.maps[0].height
    }

    pub fn width(&self) -> usize {
        self.maps[0].width
    }

    /// Map for a 1-based dimension.
    pub fn map(&self, dim: usize) -> Result<&PixelRelevanceMap> {
        check_dim(dim)?;
        Ok(&self.maps[dim - 1])
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RelevanceMode {
    /// Last block only.
    #[default]
    LastBlock,
    /// Accumulate `R ← R + Ā·R` over every block, last block first.
    Chain,
}

fn check_dim(dim: usize) -> Result<()> {
    if !(1..=DISTILL_DIM).contains(&dim) {
        return Err(Error::Argument(format!("dimension {dim} is outside 1..={DISTILL_DIM}")));
    }
    Ok(())
}

/// `∂v_dim/∂g = Fᵀ · W[dim]` for a 1-based `dim`.
pub fn target_gradient(detector: &DetectorModel, projection: &ForgetProjection, dim: usize) -> Result<Vec<f64>> {
    check_dim(dim)?;
    Ok(projection.matrix().matvec_t(detector.distiller_row(dim - 1)))
}

fn captures_for(
    pixels: &PixelTensor,
    detector: &DetectorModel,
    projection: &ForgetProjection,
    adapter: &dyn BaseEncoder,
    dims: &[usize],
    blocks: BlockSelection,
) -> Result<Vec<Vec<AttentionCapture>>> {
    let info = adapter.info();
    if !info.supports_attention_capture {
        return Err(Error::Capability(info.name.clone()));
    }
    let targets = dims
        .iter()
        .map(|&d| target_gradient(detector, projection, d))
        .collect::<Result<Vec<_>>>()?;
    let ag = adapter.attention_gradients(pixels, &targets, blocks)?;
    dims.iter()
        .zip(ag.grads)
        .map(|(&dim, grads)| {
            // Reported first block first; captures are kept last block first.
            ag.attention
                .iter()
                .zip(grads)
                .rev()
                .map(|(a, g)| AttentionCapture::new(a.clone(), g, ag.patch_grid, dim))
                .collect()
        })
        .collect()
}

/// One forward pass and one backward pass from `v_dim` (1-based) to the last
/// attention block.
pub fn capture_attention(
    pixels: &PixelTensor,
    detector: &DetectorModel,
    projection: &ForgetProjection,
    adapter: &dyn BaseEncoder,
    dim: usize,
) -> Result<AttentionCapture> {
    check_dim(dim)?;
    let mut caps = captures_for(pixels, detector, projection, adapter, &[dim], BlockSelection::LastOnly)?;
    Ok(caps.remove(0).remove(0))
}

/// Captures for every block, last block first.
pub fn capture_attention_chain(
    pixels: &PixelTensor,
    detector: &DetectorModel,
    projection: &ForgetProjection,
    adapter: &dyn BaseEncoder,
    dim: usize,
) -> Result<Vec<AttentionCapture>> {
    check_dim(dim)?;
    let mut caps = captures_for(pixels, detector, projection, adapter, &[dim], BlockSelection::All)?;
    Ok(caps.remove(0))
}

fn class_row(relevance: &[f64], k: usize, target_dim: usize) -> TokenRelevanceMap {
    TokenRelevanceMap {
        grid: relevance[1..=k * k].to_vec(),
        k,
        target_dim,
    }
}

pub fn token_relevance_last(capture: &AttentionCapture) -> TokenRelevanceMap {
    class_row(&capture.head_mean_relevance(), capture.k, capture.target_dim)
}

/// Starts from the all-ones token matrix and applies `R ← R + Ā_i·R` for
/// each capture in order (last block first).
pub fn propagate_relevance_chain(captures: &[AttentionCapture]) -> Result<TokenRelevanceMap> {
    let first = captures
        .first()
        .ok_or_else(|| Error::Argument("relevance chain needs at least one block".into()))?;
    let n = first.attention.tokens;
    if captures.iter().any(|c| c.attention.tokens != n || c.k != first.k) {
        return Err(Error::Argument("blocks disagree on token count".into()));
    }
    let mut r = vec![1.0; n * n];
    for cap in captures {
        let a = cap.head_mean_relevance();
        let mut next = r.clone();
        for i in 0..n {
            for l in 0..n {
                let ail = a[i * n + l];
                if ail == 0.0 {
                    continue;
                }
                for j in 0..n {
                    next[i * n + j] += ail * r[l * n + j];
                }
            }
        }
        r = next;
    }
    Ok(class_row(&r, first.k, first.target_dim))
}

/// Min-max normalization; `None` for a constant (or empty) input.
pub fn min_max_normalize(values: &[f64]) -> Option<Vec<f64>> {
    let (lo, hi) = values.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
        (lo.min(v), hi.max(v))
    });
    let range = hi - lo;
    if !(range > 0.0) {
        return None;
    }
    Some(values.iter().map(|v| ((v - lo) / range).clamp(0.0, 1.0)).collect())
}

/// Bilinear upscale to `height × width`, then min-max normalization.
pub fn pixel_relevance(grid: &TokenRelevanceMap, height: usize, width: usize) -> Result<PixelRelevanceMap> {
    let k = grid.k;
    if height < k || width < k {
        return Err(Error::Argument(format!(
            "target {height}×{width} is smaller than the {k}×{k} grid"
        )));
    }
    if grid.grid.len() != k * k {
        return Err(Error::Argument(format!(
            "grid has {} entries, expected {}",
            grid.grid.len(),
            k * k
        )));
    }
    let up = resample::bilinear_f64(&grid.grid, k, k, height, width);
    let constant = grid.grid.iter().all(|&v| v == grid.grid[0]);
    let normalized = if constant { None } else { min_max_normalize(&up) };
    let degenerate = normalized.is_none();
    Ok(PixelRelevanceMap {
        map: normalized.unwrap_or_else(|| vec![0.0; height * width]),
        height,
        width,
        target_dim: grid.target_dim,
        degenerate,
    })
}

/// Sixteen maps from one forward pass and sixteen backward passes.
pub fn relevance_stack(
    pixels: &PixelTensor,
    detector: &DetectorModel,
    projection: &ForgetProjection,
    adapter: &dyn BaseEncoder,
    height: usize,
    width: usize,
    mode: RelevanceMode,
) -> Result<RelevanceStack> {
    let dims: Vec<usize> = (1..=DISTILL_DIM).collect();
    let blocks = match mode {
        RelevanceMode::LastBlock => BlockSelection::LastOnly,
        RelevanceMode::Chain => BlockSelection::All,
    };
    let captures = captures_for(pixels, detector, projection, adapter, &dims, blocks)?;
    let k = captures[0][0].k;
    let maps = captures
        .iter()
        .map(|caps| {
            let grid = match mode {
                RelevanceMode::LastBlock => token_relevance_last(&caps[0]),
                RelevanceMode::Chain => propagate_relevance_chain(caps)?,
            };
            pixel_relevance(&grid, height, width)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(RelevanceStack {
        maps,
        source_id: pixels.source_id.clone(),
        k,
    })
}

#[derive(Debug, Serialize, Deserialize)]
#[allow(non_snake_case)]
struct CacheHeader {
    image_id: String,
    k: usize,
    H: usize,
    W: usize,
    dims: usize,
    dtype: String,
}

pub fn save_stack(path: &Path, stack: &RelevanceStack) -> Result<()> {
    let header = CacheHeader {
        image_id: stack.source_id.clone(),
        k: stack.k,
        H: stack.height(),
        W: stack.width(),
        dims: DISTILL_DIM,
        dtype: "f32".into(),
    };
    let payload: Vec<f32> = stack
        .maps
        .iter()
        .flat_map(|m| m.map.iter().map(|&v| v as f32))
        .collect();
    artifact::write_file(path, &header, &payload)
}

pub fn load_stack(path: &Path) -> Result<RelevanceStack> {
    let (h, payload): (CacheHeader, Vec<f32>) = artifact::read_file(path)?;
    if h.dims != DISTILL_DIM || h.dtype != "f32" {
        return Err(Error::Format(format!(
            "unsupported relevance cache: {} dims of {}",
            h.dims, h.dtype
        )));
    }
    let plane = h.H * h.W;
    if payload.len() != plane * DISTILL_DIM || plane == 0 {
        return Err(Error::Format(format!(
            "relevance cache holds {} values, expected {}",
            payload.len(),
            plane * DISTILL_DIM
        )));
    }
    let maps = payload
        .chunks_exact(plane)
        .enumerate()
        .map(|(i, chunk)| {
            let map: Vec<f64> = chunk.iter().map(|&v| f64::from(v)).collect();
            PixelRelevanceMap {
                degenerate: map.iter().all(|&v| v == 0.0),
                map,
                height: h.H,
                width: h.W,
                target_dim: i + 1,
            }
        })
        .collect();
    Ok(RelevanceStack {
        maps,
        source_id: h.image_id,
        k: h.k,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::detector::TrainingMeta;
    use crate::encoder::transformer::{Activation, Transformer, TransformerConfig};
    use crate::encoder::VitEncoder;
    use crate::linalg::{dot, Matrix};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn maps(heads: usize, tokens: usize, data: &[f64]) -> HeadMaps {
        HeadMaps::from_vec(heads, tokens, data.to_vec()).unwrap()
    }

    fn hand_capture() -> AttentionCapture {
        AttentionCapture::new(
            maps(1, 2, &[0.6, 0.4, 0.3, 0.7]),
            maps(1, 2, &[0.2, -0.1, 0.5, 0.1]),
            1,
            1,
        )
        .unwrap()
    }

    #[test]
    fn hand_example_clamps_and_extracts_class_row() {
        let cap = hand_capture();
        let r = cap.head_mean_relevance();
        let expected = [0.12, 0.0, 0.15, 0.07];
        for (a, b) in r.iter().zip(expected) {
            assert!((a - b).abs() < 1e-12, "{r:?}");
        }
        assert_eq!(token_relevance_last(&cap).grid, vec![0.0]);
    }

    #[test]
    fn zero_gradient_gives_zero_grid() {
        let cap = AttentionCapture::new(maps(1, 5, &[0.2; 25]), maps(1, 5, &[0.0; 25]), 2, 3).unwrap();
        assert_eq!(token_relevance_last(&cap).grid, vec![0.0; 4]);
    }

    #[test]
    fn duplicated_heads_match_single_head() {
        let a = [0.6, 0.4, 0.3, 0.7];
        let g = [0.2, 0.9, 0.5, 0.1];
        let one = AttentionCapture::new(maps(1, 2, &a), maps(1, 2, &g), 1, 1).unwrap();
        let two = AttentionCapture::new(maps(2, 2, &[a, a].concat()), maps(2, 2, &[g, g].concat()), 1, 1).unwrap();
        assert_eq!(token_relevance_last(&one), token_relevance_last(&two));
        assert!((token_relevance_last(&two).grid[0] - 0.36).abs() < 1e-12);
    }

    #[test]
    fn clamp_precedes_head_mean() {
        // Head 0 contributes +0.4, head 1 contributes −0.4 at (0, 1).
        let a = [0.5, 0.5, 0.5, 0.5];
        let cap = AttentionCapture::new(
            maps(2, 2, &[a, a].concat()),
            maps(2, 2, &[0.0, 0.8, 0.0, 0.0, 0.0, -0.8, 0.0, 0.0]),
            1,
            1,
        )
        .unwrap();
        assert!((token_relevance_last(&cap).grid[0] - 0.2).abs() < 1e-12);
    }

    #[test]
    fn capture_validation() {
        let a = maps(1, 2, &[0.6, 0.4, 0.3, 0.7]);
        assert!(AttentionCapture::new(a.clone(), a.clone(), 1, 0).is_err());
        assert!(AttentionCapture::new(a.clone(), a.clone(), 1, 17).is_err());
        assert!(AttentionCapture::new(maps(1, 2, &[0.6, 0.5, 0.3, 0.7]), a.clone(), 1, 1).is_err());
        assert!(AttentionCapture::new(a, maps(2, 2, &[0.0; 8]), 1, 1).is_err());
    }

    #[test]
    fn chain_with_zero_updates_is_constant() {
        let a = maps(1, 5, &[0.2; 25]);
        let zero = maps(1, 5, &[0.0; 25]);
        let cap = AttentionCapture::new(a, zero, 2, 1).unwrap();
        let one = propagate_relevance_chain(std::slice::from_ref(&cap)).unwrap();
        assert_eq!(one.grid, vec![1.0; 4]);
        let three = propagate_relevance_chain(&[cap.clone(), cap.clone(), cap]).unwrap();
        assert_eq!(three.grid, vec![1.0; 4]);
        assert!(pixel_relevance(&three, 4, 4).unwrap().degenerate);
        assert!(propagate_relevance_chain(&[]).is_err());
    }

    #[test]
    fn chain_matches_hand_multiplied_products() {
        // Ā₂ (last block) and Ā₁, both single-head.
        let a = [0.5, 0.5, 0.5, 0.5];
        let last = AttentionCapture::new(maps(1, 2, &a), maps(1, 2, &[0.2, 0.4, 0.0, 0.6]), 1, 1).unwrap();
        let first = AttentionCapture::new(maps(1, 2, &a), maps(1, 2, &[0.0, 1.0, 0.2, 0.0]), 1, 1).unwrap();
        // Ā₂ = [[0.1,0.2],[0,0.3]], Ā₁ = [[0,0.5],[0.1,0]].
        // (I+Ā₂)·1 = [[1.3,1.3],[1.3,1.3]]; (I+Ā₁)·that = [[1.95,1.95],[1.43,1.43]].
        let r = propagate_relevance_chain(&[last.clone(), first.clone()]).unwrap();
        assert!((r.grid[0] - 1.95).abs() < 1e-12, "{:?}", r.grid);
        // Reversing the order applies the products the other way round.
        // (I+Ā₁)·1 = [[1.5,1.5],[1.1,1.1]]; (I+Ā₂)·that = [[1.87,1.87],[1.43,1.43]].
        let r = propagate_relevance_chain(&[first, last]).unwrap();
        assert!((r.grid[0] - 1.87).abs() < 1e-12, "{:?}", r.grid);
    }

    #[test]
    fn chain_rejects_mixed_token_counts() {
        let small = hand_capture();
        let big = AttentionCapture::new(maps(1, 5, &[0.2; 25]), maps(1, 5, &[0.0; 25]), 2, 1).unwrap();
        assert!(matches!(
            propagate_relevance_chain(&[small, big]),
            Err(Error::Argument(_))
        ));
    }

    fn grid(k: usize, values: &[f64]) -> TokenRelevanceMap {
        TokenRelevanceMap {
            grid: values.to_vec(),
            k,
            target_dim: 1,
        }
    }

    #[test]
    fn normalization_example() {
        assert_eq!(
            min_max_normalize(&[1.0, 3.0, 2.0, 5.0]).unwrap(),
            vec![0.0, 0.5, 0.25, 1.0]
        );
        // At H = W = k the upscale is the identity.
        let m = pixel_relevance(&grid(2, &[1.0, 3.0, 2.0, 5.0]), 2, 2).unwrap();
        assert_eq!(m.map, vec![0.0, 0.5, 0.25, 1.0]);
        assert!(!m.degenerate);
    }

    #[test]
    fn constant_grid_is_degenerate() {
        let m = pixel_relevance(&grid(2, &[0.3; 4]), 8, 6).unwrap();
        assert!(m.degenerate);
        assert_eq!(m.map, vec![0.0; 48]);
    }

    #[test]
    fn target_smaller_than_grid_is_rejected() {
        assert!(matches!(
            pixel_relevance(&grid(2, &[0.0; 4]), 1, 4),
            Err(Error::Argument(_))
        ));
    }

    #[test]
    fn normalizing_before_or_after_upscale_agree() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..20 {
            let g: Vec<f64> = (0..49).map(|_| rng.random_range(0.0..3.0)).collect();
            let pre = min_max_normalize(&g).unwrap();
            let a = pixel_relevance(&grid(7, &g), 224, 224).unwrap();
            let b = pixel_relevance(&grid(7, &pre), 224, 224).unwrap();
            for (x, y) in a.map.iter().zip(&b.map) {
                assert!((x - y).abs() < 1e-12);
            }
            assert_eq!(a.map.iter().cloned().fold(f64::NAN, f64::min), 0.0);
            assert_eq!(a.map.iter().cloned().fold(f64::NAN, f64::max), 1.0);
        }
        // With extrema on the corners the upscaled map attains them, so the
        // two orders coincide with plain upscaling of the normalized grid.
        let g = [0.0, 0.4, 0.7, 0.2, 0.5, 0.3, 0.6, 0.1, 1.0];
        let a = pixel_relevance(&grid(3, &g), 12, 12).unwrap();
        let up = resample::bilinear_f64(&g, 3, 3, 12, 12);
        for (x, y) in a.map.iter().zip(&up) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    /// One block, one head, three tokens: ∂(g·out)/∂A against central
    /// differences with step 1e-4.
    #[test]
    fn attention_gradient_matches_central_differences() {
        let config = TransformerConfig {
            width: 4,
            heads: 1,
            layers: 1,
            mlp_width: 6,
            out_dim: 3,
            activation: Activation::Gelu,
            ln_eps: 1e-5,
        };
        let t = Transformer::seeded(config, 21).unwrap();
        let x = Matrix::from_vec(
            3,
            4,
            vec![0.5, -1.2, 0.3, 0.9, -0.4, 0.8, 1.1, -0.7, 0.2, 0.1, -0.9, 1.4],
        );
        let g = [0.7, -0.3, 1.1];
        let fwd = t.forward(&x).unwrap();
        let grads = t.backward(&fwd, &g, None).unwrap().attention_grads;
        let a = &fwd.attention()[0];
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let h = 1e-4;
        for _ in 0..10 {
            let idx = rng.random_range(0..9);
            let mut plus = a.clone();
            plus.data[idx] += h;
            let mut minus = a.clone();
            minus.data[idx] -= h;
            let fp = dot(&t.forward_with_attention(&x, 0, &plus).unwrap(), &g);
            let fm = dot(&t.forward_with_attention(&x, 0, &minus).unwrap(), &g);
            let fd = (fp - fm) / (2.0 * h);
            let an = grads[0].data[idx];
            let rel = (an - fd).abs() / an.abs().max(fd.abs()).max(1e-8);
            assert!(rel < 1e-4 || (an - fd).abs() < 1e-10, "idx {idx}: {an} vs {fd}");
        }
    }

    fn setup() -> (VitEncoder, ForgetProjection, DetectorModel, PixelTensor) {
        let adapter = VitEncoder::mock(3);
        let projection = ForgetProjection::random_orthonormal(5);
        let detector = DetectorModel::new(
            crate::linalg::orthonormal_rows(DISTILL_DIM, 256, 6),
            (0..16).map(|i| (i as f64 - 7.5) / 8.0).collect(),
            0.1,
            3.0,
            1.0,
            TrainingMeta {
                seed: 0,
                epochs: None,
                config: None,
            },
        )
        .unwrap();
        let px = PixelTensor::new(
            (0..224 * 224 * 3)
                .map(|i| ((i * 31 % 97) as f32 / 97.0) - 0.5)
                .collect(),
            224,
            "img",
        )
        .unwrap();
        (adapter, projection, detector, px)
    }

    #[test]
    fn stack_equals_single_dimension_runs_and_is_pure() {
        let (adapter, projection, detector, px) = setup();
        let before = adapter.checksum();
        let stack = relevance_stack(
            &px,
            &detector,
            &projection,
            &adapter,
            224,
            224,
            RelevanceMode::LastBlock,
        )
        .unwrap();
        assert_eq!(stack.maps.len(), 16);
        assert_eq!(stack.k, 7);
        for dim in [1, 8, 16] {
            let cap = capture_attention(&px, &detector, &projection, &adapter, dim).unwrap();
            assert_eq!(cap.attention.tokens, 50);
            let single = pixel_relevance(&token_relevance_last(&cap), 224, 224).unwrap();
            assert_eq!(&single, stack.map(dim).unwrap());
        }
        for m in &stack.maps {
            assert!(m.map.iter().all(|v| (0.0..=1.0).contains(v)));
        }
        assert_eq!(adapter.checksum(), before);
        assert!(matches!(
            capture_attention(&px, &detector, &projection, &adapter, 0),
            Err(Error::Argument(_))
        ));
    }

    #[test]
    fn zero_distiller_row_gives_degenerate_map() {
        let (adapter, projection, mut detector, px) = setup();
        detector.distiller.row_mut(4).iter_mut().for_each(|v| *v = 0.0);
        let stack = relevance_stack(
            &px,
            &detector,
            &projection,
            &adapter,
            224,
            224,
            RelevanceMode::LastBlock,
        )
        .unwrap();
        assert!(stack.maps[4].degenerate);
        assert!(!stack.maps[3].degenerate);
    }

    #[test]
    fn chain_mode_produces_sixteen_maps() {
        let (adapter, projection, detector, px) = setup();
        let caps = capture_attention_chain(&px, &detector, &projection, &adapter, 2).unwrap();
        assert_eq!(caps.len(), 2);
        let last = capture_attention(&px, &detector, &projection, &adapter, 2).unwrap();
        assert_eq!(caps[0], last);
        let stack = relevance_stack(&px, &detector, &projection, &adapter, 112, 112, RelevanceMode::Chain).unwrap();
        assert_eq!(stack.maps.len(), 16);
        assert_eq!(stack.height(), 112);
    }

    #[test]
    fn cache_round_trip() {
        let (adapter, projection, detector, px) = setup();
        let stack = relevance_stack(&px, &detector, &projection, &adapter, 32, 48, RelevanceMode::LastBlock).unwrap();
        let dir = tempfile::TempDir::new().unwrap();
        let path = dir.path().join("img.rel");
        save_stack(&path, &stack).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        let nl = bytes.iter().position(|&b| b == b'\n').unwrap();
        assert_eq!(
            std::str::from_utf8(&bytes[..nl]).unwrap(),
            r#"{"image_id":"img","k":7,"H":32,"W":48,"dims":16,"dtype":"f32"}"#
        );
        let back = load_stack(&path).unwrap();
        assert_eq!((back.height(), back.width(), back.k), (32, 48, 7));
        for (a, b) in stack.maps.iter().zip(&back.maps) {
            assert_eq!(a.degenerate, b.degenerate);
            for (x, y) in a.map.iter().zip(&b.map) {
                assert_eq!(*x as f32, *y as f32);
            }
        }
    }
}
