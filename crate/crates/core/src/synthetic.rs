//! Seeded synthetic corpora for tests, demos and benchmarks.

use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::dataset::{ImageRecord, Label};
use crate::encoder::{VisualEmbedding, VISUAL_DIM};
use crate::error::{Error, Result};

/// Embeddings whose coordinate 0 is −1 for real and +1 for fake; the rest
/// is small uniform noise. Labels alternate starting with real.
pub fn separable_embeddings(n: usize, seed: u64) -> Vec<(VisualEmbedding, Label)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| {
            let label = if i % 2 == 0 { Label::Real } else { Label::Fake };
            let mut v: Vec<f64> = (0..VISUAL_DIM).map(|_| rng.random_range(-0.05..0.05)).collect();
            v[0] = if label.is_fake() { 1.0 } else { -1.0 };
            (VisualEmbedding::new(v, format!("sep-{i}")).expect("finite"), label)
        })
        .collect()
}

/// Two unit-covariance Gaussians in 256-d with means `±mean_shift` on the
/// first `shifted_dims` coordinates (fake positive). Labels alternate.
pub fn two_gaussian_embeddings(
    n: usize,
    mean_shift: f64,
    shifted_dims: usize,
    seed: u64,
) -> Vec<(VisualEmbedding, Label)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| {
            let label = if i % 2 == 0 { Label::Real } else { Label::Fake };
            let sign = if label.is_fake() { 1.0 } else { -1.0 };
            let v: Vec<f64> = (0..VISUAL_DIM)
                .map(|d| {
                    let noise: f64 = rng.sample(StandardNormal);
                    if d < shifted_dims {
                        noise + sign * mean_shift
                    } else {
                        noise
                    }
                })
                .collect();
            (VisualEmbedding::new(v, format!("gauss-{i}")).expect("finite"), label)
        })
        .collect()
}

/// Bayes-optimal accuracy for two equiprobable unit-covariance Gaussians
/// whose means are `distance` apart: `Φ(distance / 2)`.
pub fn two_gaussian_bayes_accuracy(distance: f64) -> f64 {
    normal_cdf(distance / 2.0)
}

fn normal_cdf(x: f64) -> f64 {
    0.5 * (1.0 + erf(x / std::f64::consts::SQRT_2))
}

// Abramowitz–Stegun 7.1.26, absolute error below 1.5e-7.
fn erf(x: f64) -> f64 {
    let sign = x.signum();
    let x = x.abs();
    let t = 1.0 / (1.0 + 0.327_591_1 * x);
    let poly =
        t * (0.254_829_592 + t * (-0.284_496_736 + t * (1.421_413_741 + t * (-1.453_152_027 + t * 1.061_405_429))));
    sign * (1.0 - poly * (-x * x).exp())
}

/// Renders a smooth random "photo": a blend of two colour gradients plus a
/// few soft blobs.
fn natural_image(size: u32, rng: &mut ChaCha8Rng) -> image::RgbImage {
    let c0: [f32; 3] = [rng.random(), rng.random(), rng.random()];
    let c1: [f32; 3] = [rng.random(), rng.random(), rng.random()];
    let angle: f32 = rng.random_range(0.0..std::f32::consts::TAU);
    let (dx, dy) = (angle.cos(), angle.sin());
    let blobs: Vec<(f32, f32, f32, [f32; 3])> = (0..3)
        .map(|_| {
            (
                rng.random_range(0.0..1.0),
                rng.random_range(0.0..1.0),
                rng.random_range(0.05..0.2),
                [rng.random(), rng.random(), rng.random()],
            )
        })
        .collect();
    let s = size as f32;
    image::RgbImage::from_fn(size, size, |x, y| {
        let (u, v) = (x as f32 / s, y as f32 / s);
        let t = ((u - 0.5) * dx + (v - 0.5) * dy + 0.5).clamp(0.0, 1.0);
        let mut px = [0f32; 3];
        for c in 0..3 {
            px[c] = c0[c] * (1.0 - t) + c1[c] * t;
        }
        for &(bx, by, r, col) in &blobs {
            let w = (-((u - bx).powi(2) + (v - by).powi(2)) / (2.0 * r * r)).exp();
            for c in 0..3 {
                px[c] = px[c] * (1.0 - w) + col[c] * w;
            }
        }
        image::Rgb(px.map(|p| (p.clamp(0.0, 1.0) * 255.0).round() as u8))
    })
}

/// Stamps a periodic checkerboard into a random square region, a crude
/// stand-in for upsampling artifacts.
fn add_artifact(img: &mut image::RgbImage, rng: &mut ChaCha8Rng) {
    let size = img.width();
    let side = rng.random_range(size / 4..=size / 2);
    let x0 = rng.random_range(0..=size - side);
    let y0 = rng.random_range(0..=size - side);
    let period = rng.random_range(2..=4u32);
    let amp = rng.random_range(40..=70i16);
    for y in y0..y0 + side {
        for x in x0..x0 + side {
            let sign = if ((x / period) + (y / period)) % 2 == 0 { 1 } else { -1 };
            let px = img.get_pixel_mut(x, y);
            for c in px.0.iter_mut() {
                *c = (*c as i16 + sign * amp).clamp(0, 255) as u8;
            }
        }
    }
}

/// Draws block-letter-like bars as a crude text overlay.
fn add_text(img: &mut image::RgbImage, rng: &mut ChaCha8Rng) {
    let size = img.width();
    let lines = rng.random_range(1..=3);
    let glyph = (size / 16).max(2);
    for line in 0..lines {
        let y0 = (size / 5) * (line + 1);
        let mut x = rng.random_range(0..size / 8);
        let colour = if rng.random_bool(0.5) { 0 } else { 255 };
        while x + glyph < size - size / 8 {
            for gy in 0..glyph {
                for gx in 0..glyph {
                    // Thin vertical and horizontal strokes.
                    let stroke = gx < glyph / 3 || gy == 0 || gy == glyph - 1;
                    if stroke && rng.random_bool(0.8) && y0 + gy < size {
                        img.put_pixel(x + gx, y0 + gy, image::Rgb([colour; 3]));
                    }
                }
            }
            x += glyph + glyph / 2;
        }
    }
}

/// Writes `n` PNGs under `dir/real` and `dir/fake` (half each) plus a
/// `manifest.jsonl`, and returns the records.
pub fn write_image_corpus(dir: &Path, n: usize, size: u32, seed: u64) -> Result<Vec<ImageRecord>> {
    if size < 16 {
        return Err(Error::Argument("synthetic images must be at least 16 pixels".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut records = Vec::with_capacity(n);
    for label in [Label::Real, Label::Fake] {
        let sub = dir.join(if label.is_fake() { "fake" } else { "real" });
        fs::create_dir_all(&sub).map_err(|e| Error::io(&sub, e))?;
    }
    for i in 0..n {
        let label = if i % 2 == 0 { Label::Real } else { Label::Fake };
        let mut img = natural_image(size, &mut rng);
        if label.is_fake() {
            add_artifact(&mut img, &mut rng);
        }
        let rel = format!("{}/{i:05}.png", if label.is_fake() { "fake" } else { "real" });
        let path = dir.join(&rel);
        img.save(&path).map_err(|source| Error::Decode {
            path: path.clone(),
            source,
        })?;
        records.push(ImageRecord {
            id: rel,
            path,
            label,
            split: None,
            height: size,
            width: size,
        });
    }
    let manifest: String = records
        .iter()
        .map(|r| {
            format!(
                "{}\n",
                serde_json::json!({"id": r.id, "path": r.id, "label": r.label.as_u8()})
            )
        })
        .collect();
    let path = dir.join("manifest.jsonl");
    fs::write(&path, manifest).map_err(|e| Error::io(&path, e))?;
    Ok(records)
}

/// Writes `per_kind` images into each of `natural/`, `text/` and `overlaid/`.
pub fn write_text_corpus(dir: &Path, per_kind: usize, size: u32, seed: u64) -> Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for kind in ["natural", "text", "overlaid"] {
        let sub = dir.join(kind);
        fs::create_dir_all(&sub).map_err(|e| Error::io(&sub, e))?;
        for i in 0..per_kind {
            let mut img = match kind {
                "text" => image::RgbImage::from_pixel(size, size, image::Rgb([128; 3])),
                _ => natural_image(size, &mut rng),
            };
            if kind != "natural" {
                add_text(&mut img, &mut rng);
            }
            let path = sub.join(format!("{i:04}.png"));
            img.save(&path).map_err(|source| Error::Decode {
                path: path.clone(),
                source,
            })?;
        }
    }
    Ok(())
}
