//! Influential segments: the bounding box of the largest bright region in
//! each relevance map, deduplicated across dimensions.

use serde::{Deserialize, Serialize};

use crate::dataset::BoundingBox;
use crate::error::{Error, Result};
use crate::relevance::{PixelRelevanceMap, RelevanceStack};

pub const DEFAULT_TAU: f64 = 0.5;
pub const DEFAULT_IOU_MAX: f64 = 0.5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    pub image_id: String,
    pub bbox: BoundingBox,
    /// 1-based dimension whose map produced the box.
    pub dim: usize,
}

/// Bounding box (half-open) of the largest 4-connected region with values
/// `≥ tau · max`. Ties go to the region met first in raster order.
pub fn largest_component_box(map: &PixelRelevanceMap, tau: f64) -> Option<BoundingBox> {
    if map.degenerate {
        return None;
    }
    let max = map.map.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !(max > 0.0) {
        return None;
    }
    let threshold = tau * max;
    let (h, w) = (map.height, map.width);
    let mut seen = vec![false; h * w];
    let mut best: Option<(usize, BoundingBox)> = None;
    let mut stack = Vec::new();
    for start in 0..h * w {
        if seen[start] || map.map[start] < threshold {
            continue;
        }
        seen[start] = true;
        stack.push(start);
        let (mut size, mut bbox) = (0usize, BoundingBox::new(usize::MAX, usize::MAX, 0, 0));
        while let Some(idx) = stack.pop() {
            let (r, c) = (idx / w, idx % w);
            size += 1;
            bbox.x0 = bbox.x0.min(c);
            bbox.y0 = bbox.y0.min(r);
            bbox.x1 = bbox.x1.max(c + 1);
            bbox.y1 = bbox.y1.max(r + 1);
            let mut visit = |n: usize| {
                if !seen[n] && map.map[n] >= threshold {
                    seen[n] = true;
                    stack.push(n);
                }
            };
            if r > 0 {
                visit(idx - w);
            }
            if r + 1 < h {
                visit(idx + w);
            }
            if c > 0 {
                visit(idx - 1);
            }
            if c + 1 < w {
                visit(idx + 1);
            }
        }
        if best.as_ref().is_none_or(|(s, _)| size > *s) {
            best = Some((size, bbox));
        }
    }
    best.map(|(_, b)| b)
}

/// One candidate box per map, in dimension order; a box is dropped when its
/// IOU with an already kept box exceeds `iou_max`.
pub fn extract_segments(stack: &RelevanceStack, tau: f64, iou_max: f64) -> Result<Vec<Segment>> {
    if !(0.0..=1.0).contains(&tau) || !(0.0..=1.0).contains(&iou_max) {
        return Err(Error::Argument(format!(
            "tau {tau} and iou_max {iou_max} must lie in [0, 1]"
        )));
    }
    let mut kept: Vec<Segment> = Vec::new();
    for map in &stack.maps {
        let Some(bbox) = largest_component_box(map, tau) else {
            continue;
        };
        if kept.iter().all(|s| s.bbox.iou(&bbox) <= iou_max) {
            kept.push(Segment {
                image_id: stack.source_id.clone(),
                bbox,
                dim: map.target_dim,
            });
        }
    }
    Ok(kept)
}
