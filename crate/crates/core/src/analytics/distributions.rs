//! Per-dimension value histograms ranked by real/fake divergence, and
//! per-dimension contribution summaries.

use serde::{Deserialize, Serialize};

use super::grid::CellId;
use crate::contribution::ContributionVector;
use crate::dataset::Label;
use crate::detector::{DistilledVector, DISTILL_DIM};

pub const BINS: usize = 32;
pub const SMOOTHING: f64 = 1e-6;
pub const KDE_SAMPLES: usize = 65;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scope {
    Global,
    Cell(CellId),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DimensionDistribution {
    /// 1-based.
    pub dim: usize,
    /// `BINS + 1` edges.
    pub edges: Vec<f64>,
    pub real_hist: Vec<f64>,
    pub fake_hist: Vec<f64>,
    /// `KL(real‖fake) + KL(fake‖real)`; absent unless both classes occur.
    pub kl: Option<f64>,
    /// The dimension is constant over the global range, so every value
    /// falls in bin 0.
    pub degenerate: bool,
    pub scope: Scope,
}

/// Per-dimension `(min, max)` over all vectors.
pub fn global_ranges(vectors: &[DistilledVector]) -> Vec<(f64, f64)> {
    (0..DISTILL_DIM)
        .map(|d| {
            vectors.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| {
                (lo.min(v.values[d]), hi.max(v.values[d]))
            })
        })
        .map(|(lo, hi)| if lo.is_finite() { (lo, hi) } else { (0.0, 0.0) })
        .collect()
}

fn bin_of(v: f64, lo: f64, hi: f64) -> usize {
    let range = hi - lo;
    if !(range > 0.0) {
        return 0;
    }
    (((v - lo) / range * BINS as f64).floor().max(0.0) as usize).min(BINS - 1)
}

/// Smoothed histogram `p_b = (f_b + ε) / (1 + BINS·ε)` with `f` the raw
/// frequencies. An empty sample gives the uniform distribution.
fn smoothed_histogram(values: impl Iterator<Item = f64>, lo: f64, hi: f64) -> Vec<f64> {
    let mut counts = [0usize; BINS];
    let mut n = 0usize;
    for v in values {
        counts[bin_of(v, lo, hi)] += 1;
        n += 1;
    }
    let denom = 1.0 + BINS as f64 * SMOOTHING;
    counts
        .iter()
        .map(|&c| {
            let f = if n > 0 { c as f64 / n as f64 } else { 1.0 / BINS as f64 };
            (f + SMOOTHING) / denom
        })
        .collect()
}

fn kl(p: &[f64], q: &[f64]) -> f64 {
    p.iter().zip(q).map(|(a, b)| a * (a / b).ln()).sum()
}

pub fn symmetric_kl(p: &[f64], q: &[f64]) -> f64 {
    // Clamp tiny negative rounding so the result honours KL ≥ 0.
    (kl(p, q) + kl(q, p)).max(0.0)
}

/// Histograms for each dimension over `samples`, binned on `ranges`
/// (normally [`global_ranges`] of the whole corpus), sorted by ascending
/// divergence; ties and absent divergences keep dimension order, absent last.
pub fn dimension_distributions(
    samples: &[(&DistilledVector, Label)],
    ranges: &[(f64, f64)],
    scope: Scope,
) -> Vec<DimensionDistribution> {
    let has = |l: Label| samples.iter().any(|(_, x)| *x == l);
    let both = has(Label::Real) && has(Label::Fake);
    let mut out: Vec<DimensionDistribution> = (0..DISTILL_DIM)
        .map(|d| {
            let (lo, hi) = ranges[d];
            let class = |label: Label| {
                smoothed_histogram(
                    samples
                        .iter()
                        .filter(move |(_, l)| *l == label)
                        .map(move |(v, _)| v.values[d]),
                    lo,
                    hi,
                )
            };
            let real_hist = class(Label::Real);
            let fake_hist = class(Label::Fake);
            let degenerate = !(hi - lo > 0.0);
            let step = (hi - lo) / BINS as f64;
            DimensionDistribution {
                dim: d + 1,
                edges: (0..=BINS)
                    .map(|b| if b == BINS { hi } else { lo + step * b as f64 })
                    .collect(),
                kl: both.then(|| {
                    if degenerate {
                        0.0
                    } else {
                        symmetric_kl(&real_hist, &fake_hist)
                    }
                }),
                real_hist,
                fake_hist,
                degenerate,
                scope,
            }
        })
        .collect();
    out.sort_by(|a, b| match (a.kl, b.kl) {
        (Some(x), Some(y)) => x.total_cmp(&y),
        (Some(_), None) => std::cmp::Ordering::Less,
        (None, Some(_)) => std::cmp::Ordering::Greater,
        (None, None) => std::cmp::Ordering::Equal,
    });
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ContributionFilter {
    #[default]
    All,
    Correct,
    Incorrect,
}

impl std::str::FromStr for ContributionFilter {
    type Err = crate::Error;

    fn from_str(s: &str) -> crate::Result<Self> {
        match s {
            "all" => Ok(Self::All),
            "correct" => Ok(Self::Correct),
            "incorrect" => Ok(Self::Incorrect),
            other => Err(crate::Error::Argument(format!("unknown filter `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContributionSummary {
    /// 1-based.
    pub dim: usize,
    pub count: usize,
    pub min: f64,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
    pub max: f64,
    pub mean: f64,
    /// Gaussian kernel density sampled at `KDE_SAMPLES` points on `[-1, 1]`,
    /// as `(c, density)`.
    pub kde: Vec<(f64, f64)>,
}

/// Linear-interpolation percentile over sorted data (`q` in `[0, 1]`).
pub fn percentile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

fn kde(values: &[f64]) -> Vec<(f64, f64)> {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let sd = (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
    // Silverman's rule, floored so single points and constants still render.
    let h = (1.06 * sd * n.powf(-0.2)).max(0.02);
    let norm = 1.0 / (n * h * (2.0 * std::f64::consts::PI).sqrt());
    (0..KDE_SAMPLES)
        .map(|i| {
            let x = -1.0 + 2.0 * i as f64 / (KDE_SAMPLES - 1) as f64;
            let density = values.iter().map(|v| (-0.5 * ((x - v) / h).powi(2)).exp()).sum::<f64>() * norm;
            (x, density)
        })
        .collect()
}

/// Summaries of `c_i` per dimension over members passing `filter`; `None`
/// when no member passes.
pub fn contribution_distributions(
    contribs: &[(&ContributionVector, bool)],
    filter: ContributionFilter,
) -> Option<Vec<ContributionSummary>> {
    let kept: Vec<&ContributionVector> = contribs
        .iter()
        .filter(|(_, correct)| match filter {
            ContributionFilter::All => true,
            ContributionFilter::Correct => *correct,
            ContributionFilter::Incorrect => !*correct,
        })
        .map(|(c, _)| *c)
        .collect();
    if kept.is_empty() {
        return None;
    }
    Some(
        (0..DISTILL_DIM)
            .map(|d| {
                let mut values: Vec<f64> = kept.iter().map(|c| c.c[d]).collect();
                values.sort_by(f64::total_cmp);
                ContributionSummary {
                    dim: d + 1,
                    count: values.len(),
                    min: values[0],
                    q1: percentile(&values, 0.25),
                    median: percentile(&values, 0.5),
                    q3: percentile(&values, 0.75),
                    max: values[values.len() - 1],
                    mean: values.iter().sum::<f64>() / values.len() as f64,
                    kde: kde(&values),
                }
            })
            .collect(),
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dv(values: Vec<f64>) -> DistilledVector {
        DistilledVector::new(values, "v").unwrap()
    }

    /// Dimension 3 separates the classes completely; dimension 5 is
    /// identical across classes; the rest differ mildly.
    fn fixture() -> Vec<(DistilledVector, Label)> {
        (0..40)
            .map(|i| {
                let label = if i % 2 == 0 { Label::Real } else { Label::Fake };
                let fake = label.is_fake();
                let mut v: Vec<f64> = (0..16).map(|d| ((i * 7 + d * 3) % 11) as f64 / 10.0).collect();
                v[1] += if fake { 0.05 } else { 0.0 };
                v[2] = if fake { 1.0 } else { 0.0 };
                v[4] = (i / 2 % 5) as f64;
                (dv(v), label)
            })
            .collect()
    }

    #[test]
    fn histograms_are_probability_vectors() {
        let data = fixture();
        let vectors: Vec<_> = data.iter().map(|(v, _)| v.clone()).collect();
        let samples: Vec<_> = data.iter().map(|(v, l)| (v, *l)).collect();
        for d in dimension_distributions(&samples, &global_ranges(&vectors), Scope::Global) {
            assert!((d.real_hist.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            assert!((d.fake_hist.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            assert_eq!(d.edges.len(), BINS + 1);
            assert!(d.kl.unwrap() >= 0.0);
        }
    }

    #[test]
    fn ordering_and_extremes() {
        let data = fixture();
        let vectors: Vec<_> = data.iter().map(|(v, _)| v.clone()).collect();
        let samples: Vec<_> = data.iter().map(|(v, l)| (v, *l)).collect();
        let dists = dimension_distributions(&samples, &global_ranges(&vectors), Scope::Global);
        assert!(dists.windows(2).all(|w| w[0].kl.unwrap() <= w[1].kl.unwrap()));
        assert_eq!(dists[0].dim, 5);
        assert_eq!(dists[0].kl, Some(0.0));
        let last = dists.last().unwrap();
        assert_eq!(last.dim, 3);
        // Closed form for all-real mass in bin 0 and all-fake in bin 31.
        let e = SMOOTHING;
        let expected = 2.0 * ((1.0 + e) / e).ln() / (1.0 + 32.0 * e);
        assert!(
            (last.kl.unwrap() - expected).abs() < 1e-9,
            "{} vs {expected}",
            last.kl.unwrap()
        );
        assert!(dists[dists.len() - 2].kl.unwrap() < last.kl.unwrap());
    }

    #[test]
    fn constant_dimension_and_single_class() {
        let vectors = vec![dv(vec![1.0; 16]), dv(vec![1.0; 16])];
        let ranges = global_ranges(&vectors);
        let samples = vec![(&vectors[0], Label::Real), (&vectors[1], Label::Fake)];
        let dists = dimension_distributions(&samples, &ranges, Scope::Global);
        assert!(dists.iter().all(|d| d.degenerate && d.kl == Some(0.0)));
        assert!(dists[0].real_hist[0] > 0.99);

        let only_real = vec![(&vectors[0], Label::Real)];
        let cell = Scope::Cell(CellId { row: 1, col: 2 });
        let dists = dimension_distributions(&only_real, &ranges, cell);
        assert!(dists.iter().all(|d| d.kl.is_none() && d.scope == cell));
        assert_eq!(
            dists.iter().map(|d| d.dim).collect::<Vec<_>>(),
            (1..=16).collect::<Vec<_>>()
        );
    }

    fn contrib(c0: f64) -> ContributionVector {
        let mut c = vec![0.0; 16];
        c[0] = c0;
        ContributionVector {
            s: c.clone(),
            c,
            source_id: "x".into(),
            low_magnitude: false,
        }
    }

    #[test]
    fn single_member_quartiles() {
        let a = contrib(0.3);
        let s = contribution_distributions(&[(&a, true)], ContributionFilter::All).unwrap();
        assert_eq!(
            (s[0].min, s[0].q1, s[0].median, s[0].q3, s[0].max),
            (0.3, 0.3, 0.3, 0.3, 0.3)
        );
        assert_eq!(s[0].kde.len(), KDE_SAMPLES);
    }

    #[test]
    fn filters() {
        let (a, b) = (contrib(0.1), contrib(-0.5));
        let members = [(&a, false), (&b, false)];
        assert!(contribution_distributions(&members, ContributionFilter::Correct).is_none());
        let s = contribution_distributions(&members, ContributionFilter::Incorrect).unwrap();
        assert_eq!(s[0].count, 2);
        assert!((s[0].mean + 0.2).abs() < 1e-12);
    }

    #[test]
    fn quartiles_match_hand_percentiles() {
        let vals = [0.9, -0.2, 0.4, 0.1, 0.0];
        let cs: Vec<_> = vals.iter().map(|&v| contrib(v)).collect();
        let members: Vec<_> = cs.iter().map(|c| (c, true)).collect();
        let s = &contribution_distributions(&members, ContributionFilter::All).unwrap()[0];
        // Sorted: −0.2, 0, 0.1, 0.4, 0.9; positions 1, 2, 3.
        assert_eq!((s.q1, s.median, s.q3), (0.0, 0.1, 0.4));
    }

    #[test]
    fn kde_integrates_to_about_one() {
        let cs: Vec<_> = [-0.3, -0.1, 0.0, 0.2, 0.25].iter().map(|&v| contrib(v)).collect();
        let members: Vec<_> = cs.iter().map(|c| (c, true)).collect();
        let s = &contribution_distributions(&members, ContributionFilter::All).unwrap()[0];
        let step = 2.0 / (KDE_SAMPLES - 1) as f64;
        let area: f64 = s.kde.iter().map(|(_, d)| d * step).sum();
        assert!((area - 1.0).abs() < 0.05, "{area}");
    }
}
