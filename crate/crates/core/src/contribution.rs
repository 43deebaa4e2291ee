//! Per-dimension contribution scores and linear-head counterfactuals.

use serde::{Deserialize, Serialize};

use crate::dataset::Label;
use crate::detector::{predict, DetectorModel, DistilledVector, Prediction, DISTILL_DIM};
use crate::error::{ensure_finite, Error, Result};
use crate::linalg::{dot, norm};

/// Below this `Σ|s|` the contribution vector is flagged as low magnitude;
/// normalization still applies.
pub const LOW_MAGNITUDE: f64 = 1e-8;
pub const DEFAULT_EPSILON: f64 = 1e-3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContributionVector {
    /// `s_i = v_i · w_i`
    pub s: Vec<f64>,
    /// `c_i = s_i / Σ|s_j|`, or all zeros when every `s_i` is zero.
    pub c: Vec<f64>,
    pub source_id: String,
    pub low_magnitude: bool,
}

impl ContributionVector {
    pub fn is_degenerate(&self) -> bool {
        self.s.iter().all(|&v| v == 0.0)
    }
}

pub fn contribution_scores(v: &DistilledVector, model: &DetectorModel) -> Result<ContributionVector> {
    let s: Vec<f64> = v.values.iter().zip(&model.head_w).map(|(a, b)| a * b).collect();
    ensure_finite(&s, "contribution scores")?;
    let total: f64 = s.iter().map(|x| x.abs()).sum();
    let c = if total > 0.0 {
        s.iter().map(|x| x / total).collect()
    } else {
        vec![0.0; s.len()]
    };
    Ok(ContributionVector {
        s,
        c,
        source_id: v.source_id.clone(),
        low_magnitude: total < LOW_MAGNITUDE,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WaterfallStep {
    /// 1-based.
    pub dim: usize,
    pub c: f64,
    pub cumulative: f64,
}

pub fn waterfall_data(contrib: &ContributionVector) -> Vec<WaterfallStep> {
    let mut running = 0.0;
    contrib
        .c
        .iter()
        .enumerate()
        .map(|(i, &c)| {
            running += c;
            WaterfallStep {
                dim: i + 1,
                c,
                cumulative: running,
            }
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WhatIfMode {
    /// Smallest Euclidean change, along the head weights.
    #[default]
    Joint,
    /// Change a single dimension, the one needing the smallest step.
    AxisAligned,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WhatIfResult {
    pub delta: Vec<f64>,
    pub new_vector: Vec<f64>,
    pub old_prediction: Prediction,
    pub new_prediction: Prediction,
    pub epsilon: f64,
    pub mode: WhatIfMode,
}

/// `delta = −(1+ε)·(logit / ‖w‖²)·w`: the shortest move across the decision
/// boundary, overshooting it by the relative margin `ε`.
pub fn whatif_counterfactual(v: &DistilledVector, model: &DetectorModel, epsilon: f64) -> Result<WhatIfResult> {
    whatif_with_mode(v, model, epsilon, WhatIfMode::Joint)
}

pub fn whatif_with_mode(
    v: &DistilledVector,
    model: &DetectorModel,
    epsilon: f64,
    mode: WhatIfMode,
) -> Result<WhatIfResult> {
    if !(epsilon > 0.0) || !epsilon.is_finite() {
        return Err(Error::Argument(format!("epsilon must be positive, got {epsilon}")));
    }
    let w = &model.head_w;
    let w_sq = dot(w, w);
    if w_sq == 0.0 {
        return Err(Error::DegenerateModel("head weights are all zero".into()));
    }
    let old = predict(v, model)?;
    if old.logit == 0.0 {
        return Err(Error::Argument("vector lies on the decision boundary".into()));
    }
    let delta: Vec<f64> = match mode {
        WhatIfMode::Joint => {
            let scale = -(1.0 + epsilon) * old.logit / w_sq;
            w.iter().map(|wi| scale * wi).collect()
        }
        WhatIfMode::AxisAligned => {
            let (i, wi) = w
                .iter()
                .enumerate()
                .filter(|(_, wi)| **wi != 0.0)
                .max_by(|a, b| a.1.abs().total_cmp(&b.1.abs()))
                .expect("nonzero weight exists");
            let mut d = vec![0.0; DISTILL_DIM];
            d[i] = -(1.0 + epsilon) * old.logit / wi;
            d
        }
    };
    let new_vector: Vec<f64> = v.values.iter().zip(&delta).map(|(a, b)| a + b).collect();
    let moved = DistilledVector::new(new_vector.clone(), v.source_id.clone())?;
    let new = predict(&moved, model)?;
    if new.label == old.label {
        // A logit of exactly zero after the move predicts real; with ε > 0
        // this only happens through rounding at extreme magnitudes.
        return Err(Error::Numeric("counterfactual failed to flip the prediction".into()));
    }
    Ok(WhatIfResult {
        delta,
        new_vector,
        old_prediction: old,
        new_prediction: new,
        epsilon,
        mode,
    })
}

/// `|logit| / ‖w‖`, the distance from `v` to the decision boundary.
pub fn boundary_distance(v: &DistilledVector, model: &DetectorModel) -> Result<f64> {
    let n = norm(&model.head_w);
    if n == 0.0 {
        return Err(Error::DegenerateModel("head weights are all zero".into()));
    }
    Ok(model.logit(v).abs() / n)
}

/// Per-image export record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContributionExport {
    pub image_id: String,
    pub s: Vec<f64>,
    pub c: Vec<f64>,
    pub logit: f64,
    pub label: Label,
}

impl ContributionExport {
    pub fn new(contrib: &ContributionVector, prediction: &Prediction) -> Self {
        Self {
            image_id: contrib.source_id.clone(),
            s: contrib.s.clone(),
            c: contrib.c.clone(),
            logit: prediction.logit,
            label: prediction.label,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::detector::TrainingMeta;
    use crate::linalg::Matrix;

    fn padded(prefix: &[f64]) -> Vec<f64> {
        let mut v = prefix.to_vec();
        v.resize(DISTILL_DIM, 0.0);
        v
    }

    fn model(head: &[f64], bias: f64) -> DetectorModel {
        DetectorModel::new(
            Matrix::identity_rows(16, 256),
            padded(head),
            bias,
            3.0,
            1.0,
            TrainingMeta {
                seed: 0,
                epochs: None,
                config: None,
            },
        )
        .unwrap()
    }

    fn vector(prefix: &[f64]) -> DistilledVector {
        DistilledVector::new(padded(prefix), "x").unwrap()
    }

    fn close(a: &[f64], b: &[f64], tol: f64) -> bool {
        a.len() == b.len() && a.iter().zip(b).all(|(x, y)| (x - y).abs() <= tol)
    }

    #[test]
    fn single_term() {
        let c = contribution_scores(&vector(&[2.0]), &model(&[0.5], 0.0)).unwrap();
        assert_eq!(c.s, padded(&[1.0]));
        assert_eq!(c.c, padded(&[1.0]));
    }

    #[test]
    fn mixed_signs() {
        let c = contribution_scores(&vector(&[2.0, -1.0, 1.0]), &model(&[0.5, 1.0, -0.5], 0.0)).unwrap();
        assert!(close(&c.s, &padded(&[1.0, -1.0, -0.5]), 1e-15));
        assert!(close(&c.c, &padded(&[0.4, -0.4, -0.2]), 1e-15));
        let wf = waterfall_data(&c);
        let cum: Vec<f64> = wf.iter().map(|s| s.cumulative).collect();
        assert!(close(&cum[..4], &[0.4, 0.0, -0.2, -0.2], 1e-15));
        assert!((cum[15] + 0.2).abs() < 1e-15);
        assert_eq!(wf[0].dim, 1);
    }

    #[test]
    fn equal_terms_share_evenly() {
        let c = contribution_scores(&vector(&[1.0; 16]), &model(&[0.3; 16], 0.0)).unwrap();
        assert!(c.c.iter().all(|&x| (x - 1.0 / 16.0).abs() < 1e-15));
    }

    #[test]
    fn zero_scores_are_degenerate_not_errors() {
        let c = contribution_scores(&vector(&[]), &model(&[1.0], 0.0)).unwrap();
        assert!(c.is_degenerate() && c.low_magnitude);
        assert_eq!(c.c, vec![0.0; 16]);
        assert!(waterfall_data(&c).iter().all(|s| s.cumulative == 0.0));
    }

    #[test]
    fn tiny_scores_are_flagged() {
        let c = contribution_scores(&vector(&[1e-10]), &model(&[1.0], 0.0)).unwrap();
        assert!(c.low_magnitude && !c.is_degenerate());
        assert_eq!(c.c[0], 1.0);
    }

    #[test]
    fn joint_whatif_example() {
        let m = model(&[3.0, 4.0], 0.0);
        let r = whatif_counterfactual(&vector(&[1.0, 1.0]), &m, DEFAULT_EPSILON).unwrap();
        assert!(close(&r.delta[..2], &[-0.840_84, -1.121_12], 1e-12));
        assert_eq!(r.old_prediction.label, Label::Fake);
        assert_eq!(r.new_prediction.label, Label::Real);
        assert!((r.new_prediction.logit + 0.007).abs() < 1e-12);
        let d = boundary_distance(&vector(&[1.0, 1.0]), &m).unwrap();
        assert!((norm(&r.delta) - 1.001 * d).abs() < 1e-12);
    }

    #[test]
    fn whatif_twice_returns_to_original_label() {
        let m = model(&[1.0, -2.0, 0.5], 0.3);
        let v = vector(&[0.2, 0.9, -1.0]);
        let once = whatif_counterfactual(&v, &m, DEFAULT_EPSILON).unwrap();
        let back = whatif_counterfactual(
            &DistilledVector::new(once.new_vector, "x").unwrap(),
            &m,
            DEFAULT_EPSILON,
        )
        .unwrap();
        assert_eq!(back.new_prediction.label, once.old_prediction.label);
    }

    #[test]
    fn axis_aligned_moves_one_dimension() {
        let m = model(&[3.0, 4.0], 0.0);
        let r = whatif_with_mode(&vector(&[1.0, 1.0]), &m, DEFAULT_EPSILON, WhatIfMode::AxisAligned).unwrap();
        assert!(close(&r.delta[..2], &[0.0, -7.0 * 1.001 / 4.0], 1e-12));
        assert_eq!(r.new_prediction.label, Label::Real);
    }

    #[test]
    fn whatif_errors() {
        let v = vector(&[1.0]);
        assert!(matches!(
            whatif_counterfactual(&v, &model(&[], 0.5), DEFAULT_EPSILON),
            Err(Error::DegenerateModel(_))
        ));
        assert!(matches!(
            whatif_counterfactual(&vector(&[]), &model(&[1.0], 0.0), DEFAULT_EPSILON),
            Err(Error::Argument(_))
        ));
        assert!(whatif_counterfactual(&v, &model(&[1.0], 0.0), 0.0).is_err());
    }

    #[test]
    fn export_shape() {
        let m = model(&[0.5], 0.0);
        let v = vector(&[2.0]);
        let c = contribution_scores(&v, &m).unwrap();
        let p = predict(&v, &m).unwrap();
        let json = serde_json::to_value(ContributionExport::new(&c, &p)).unwrap();
        assert_eq!(json["image_id"], "x");
        assert_eq!(json["label"], 1);
        assert_eq!(json["c"].as_array().unwrap().len(), 16);
    }
}
