//! Exact t-SNE with a seeded initialization.
//!
//! Quadratic in the number of points per iteration, which is fine at the
//! corpus sizes the overview serves (a few thousand points).

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{normalize_axes, squared_distance};
use crate::detector::DistilledVector;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProjectedPoint {
    pub image_id: String,
    pub x: f64,
    pub y: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TsneConfig {
    /// `None` uses `min(30, n/4)`, at least 1.
    pub perplexity: Option<f64>,
    pub iterations: usize,
    pub learning_rate: f64,
    pub early_exaggeration: f64,
    pub exaggeration_iterations: usize,
}

impl Default for TsneConfig {
    fn default() -> Self {
        Self {
            perplexity: None,
            iterations: 1000,
            learning_rate: 200.0,
            early_exaggeration: 12.0,
            exaggeration_iterations: 250,
        }
    }
}

pub fn default_perplexity(n: usize) -> f64 {
    (n as f64 / 4.0).clamp(1.0, 30.0)
}

pub fn project_2d(vectors: &[DistilledVector], seed: u64) -> Result<Vec<ProjectedPoint>> {
    project_2d_with(vectors, seed, TsneConfig::default())
}

pub fn project_2d_with(vectors: &[DistilledVector], seed: u64, config: TsneConfig) -> Result<Vec<ProjectedPoint>> {
    let n = vectors.len();
    if n < 2 {
        return Err(Error::Argument(format!("projection needs at least 2 vectors, got {n}")));
    }
    let perplexity = config.perplexity.unwrap_or_else(|| default_perplexity(n));
    let data: Vec<&[f64]> = vectors.iter().map(|v| v.values.as_slice()).collect();
    let p = joint_probabilities(&data, perplexity);
    let mut y = embed(&p, n, seed, &config);
    normalize_axes(&mut y);
    Ok(vectors
        .iter()
        .zip(y)
        .map(|(v, [x, y])| ProjectedPoint {
            image_id: v.source_id.clone(),
            x,
            y,
        })
        .collect())
}

/// Symmetrized affinities `P = (P_{j|i} + P_{i|j}) / 2n`, with each
/// conditional's bandwidth found by bisection on the entropy.
fn joint_probabilities(data: &[&[f64]], perplexity: f64) -> Vec<f64> {
    let n = data.len();
    let mut d2 = vec![0.0; n * n];
    for i in 0..n {
        for j in i + 1..n {
            let d = squared_distance(data[i], data[j]);
            d2[i * n + j] = d;
            d2[j * n + i] = d;
        }
    }
    let target = perplexity.ln();
    let mut cond = vec![0.0; n * n];
    for i in 0..n {
        let row = &d2[i * n..(i + 1) * n];
        let (mut beta, mut lo, mut hi) = (1.0, f64::NEG_INFINITY, f64::INFINITY);
        let mut probs = vec![0.0; n];
        for _ in 0..100 {
            // Shift by the nearest distance so the exponentials never all underflow.
            let min_d = (0..n).filter(|&j| j != i).map(|j| row[j]).fold(f64::INFINITY, f64::min);
            let mut sum = 0.0;
            for j in 0..n {
                probs[j] = if j == i { 0.0 } else { (-(row[j] - min_d) * beta).exp() };
                sum += probs[j];
            }
            let mut entropy = 0.0;
            for pj in probs.iter_mut() {
                *pj /= sum;
            }
            for j in 0..n {
                if j != i && probs[j] > 0.0 {
                    entropy -= probs[j] * probs[j].ln();
                }
            }
            let diff = entropy - target;
            if diff.abs() < 1e-5 {
                break;
            }
            if diff > 0.0 {
                lo = beta;
                beta = if hi.is_finite() { (beta + hi) / 2.0 } else { beta * 2.0 };
            } else {
                hi = beta;
                beta = if lo.is_finite() { (beta + lo) / 2.0 } else { beta / 2.0 };
            }
        }
        cond[i * n..(i + 1) * n].copy_from_slice(&probs);
    }
    let mut p = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            p[i * n + j] = ((cond[i * n + j] + cond[j * n + i]) / (2.0 * n as f64)).max(1e-12);
        }
    }
    p
}

fn embed(p: &[f64], n: usize, seed: u64, config: &TsneConfig) -> Vec<[f64; 2]> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, 1e-4).expect("valid normal");
    let mut y: Vec<[f64; 2]> = (0..n)
        .map(|_| [normal.sample(&mut rng), normal.sample(&mut rng)])
        .collect();
    let mut velocity = vec![[0.0; 2]; n];
    let mut gains = vec![[1.0; 2]; n];
    let mut num = vec![0.0; n * n];
    let mut grad = vec![[0.0; 2]; n];

    for iter in 0..config.iterations {
        let exaggeration = if iter < config.exaggeration_iterations {
            config.early_exaggeration
        } else {
            1.0
        };
        let momentum = if iter < 250 { 0.5 } else { 0.8 };

        let mut z = 0.0;
        for i in 0..n {
            for j in i + 1..n {
                let dx = y[i][0] - y[j][0];
                let dy = y[i][1] - y[j][1];
                let q = 1.0 / (1.0 + dx * dx + dy * dy);
                num[i * n + j] = q;
                num[j * n + i] = q;
                z += 2.0 * q;
            }
        }
        for i in 0..n {
            let mut g = [0.0; 2];
            for j in 0..n {
                if i == j {
                    continue;
                }
                let q = num[i * n + j];
                let mult = (exaggeration * p[i * n + j] - (q / z).max(1e-12)) * q;
                g[0] += 4.0 * mult * (y[i][0] - y[j][0]);
                g[1] += 4.0 * mult * (y[i][1] - y[j][1]);
            }
            grad[i] = g;
        }
        for i in 0..n {
            for d in 0..2 {
                let same_sign = (grad[i][d] > 0.0) == (velocity[i][d] > 0.0);
                gains[i][d] = if same_sign {
                    (gains[i][d] * 0.8f64).max(0.01)
                } else {
                    gains[i][d] + 0.2
                };
                velocity[i][d] = momentum * velocity[i][d] - config.learning_rate * gains[i][d] * grad[i][d];
                y[i][d] += velocity[i][d];
            }
        }
        let mean = y.iter().fold([0.0; 2], |acc, p| [acc[0] + p[0], acc[1] + p[1]]);
        for p in y.iter_mut() {
            p[0] -= mean[0] / n as f64;
            p[1] -= mean[1] / n as f64;
        }
    }
    y
}
