//! Concept clusters: segment crops encoded through the full pipeline and
//! grouped with k-means.

use serde::{Deserialize, Serialize};

use super::kmeans::kmeans;
use super::segments::Segment;
use crate::dataset::{BoundingBox, PixelTensor};
use crate::detector::{distill, DetectorModel, DistilledVector};
use crate::encoder::projection::ForgetProjection;
use crate::encoder::{encode_base, BaseEncoder};
use crate::error::{Error, Result};

pub const CONCEPT_CLUSTERS: usize = 3;

pub type SegmentRef = Segment;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConceptCluster {
    pub cluster_id: usize,
    pub segments: Vec<SegmentRef>,
    pub centroid: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConceptClustering {
    pub clusters: Vec<ConceptCluster>,
    /// Fewer segments than clusters were available.
    pub insufficient: bool,
}

/// Maps a box from a `map_h × map_w` relevance map onto a `size × size`
/// pixel tensor, keeping it nonempty.
fn rescale(bbox: BoundingBox, map_h: usize, map_w: usize, size: usize) -> BoundingBox {
    if map_h == size && map_w == size {
        return bbox;
    }
    let sx = |v: usize| v * size / map_w;
    let sy = |v: usize| v * size / map_h;
    let up_x = |v: usize| (v * size).div_ceil(map_w).min(size);
    let up_y = |v: usize| (v * size).div_ceil(map_h).min(size);
    let (x0, y0) = (sx(bbox.x0), sy(bbox.y0));
    BoundingBox::new(x0, y0, up_x(bbox.x1).max(x0 + 1), up_y(bbox.y1).max(y0 + 1))
}

/// Crops each segment out of `pixels`, resizes it to the adapter's input
/// size and encodes it through base encoder, projection and distiller.
/// `map_size` is the `(height, width)` of the relevance maps the boxes came
/// from. Failures are reported per segment.
pub fn segment_features(
    pixels: &PixelTensor,
    segments: &[Segment],
    map_size: (usize, usize),
    adapter: &dyn BaseEncoder,
    projection: &ForgetProjection,
    detector: &DetectorModel,
) -> Vec<Result<DistilledVector>> {
    let input = adapter.info().input_size;
    segments
        .iter()
        .map(|s| {
            let bbox = rescale(s.bbox, map_size.0, map_size.1, pixels.size);
            let crop = pixels.crop_resized(bbox, input)?;
            let generic = encode_base(&crop, adapter)?;
            let visual = projection.apply(&generic)?;
            distill(&visual, detector)
        })
        .collect()
}

/// k-means with k = 3 (or fewer when fewer segments exist) over distilled
/// crop features.
pub fn cluster_concepts(features: &[(Segment, DistilledVector)], seed: u64) -> Result<ConceptClustering> {
    if let Some((s, v)) = features.iter().find(|(_, v)| v.values.iter().any(|x| !x.is_finite())) {
        return Err(Error::Numeric(format!(
            "non-finite feature {:?} for {}",
            v.values, s.image_id
        )));
    }
    let points: Vec<Vec<f64>> = features.iter().map(|(_, v)| v.values.clone()).collect();
    let result = kmeans(&points, CONCEPT_CLUSTERS, seed);
    let clusters = result
        .centroids
        .into_iter()
        .enumerate()
        .map(|(id, centroid)| ConceptCluster {
            cluster_id: id,
            segments: features
                .iter()
                .zip(&result.assignment)
                .filter(|(_, &a)| a == id)
                .map(|((s, _), _)| s.clone())
                .collect(),
            centroid,
        })
        .collect();
    Ok(ConceptClustering {
        clusters,
        insufficient: features.len() < CONCEPT_CLUSTERS,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::detector::TrainingMeta;
    use crate::encoder::VitEncoder;
    use crate::linalg::orthonormal_rows;

    fn seg(id: &str, dim: usize) -> Segment {
        Segment {
            image_id: id.into(),
            bbox: BoundingBox::new(0, 0, 10, 10),
            dim,
        }
    }

    fn dv(values: &[f64]) -> DistilledVector {
        let mut v = values.to_vec();
        v.resize(16, 0.0);
        DistilledVector::new(v, "x").unwrap()
    }

    #[test]
    fn three_segments_make_three_singletons() {
        let f = vec![
            (seg("a", 1), dv(&[0.0])),
            (seg("b", 2), dv(&[5.0])),
            (seg("c", 3), dv(&[-5.0])),
        ];
        let c = cluster_concepts(&f, 0).unwrap();
        assert_eq!(c.clusters.len(), 3);
        assert!(c.clusters.iter().all(|c| c.segments.len() == 1));
        assert!(!c.insufficient);
    }

    #[test]
    fn fewer_segments_are_flagged() {
        let f = vec![(seg("a", 1), dv(&[0.0])), (seg("b", 2), dv(&[1.0]))];
        let c = cluster_concepts(&f, 0).unwrap();
        assert!(c.insufficient);
        assert_eq!(c.clusters.len(), 2);
        assert!(cluster_concepts(&[], 0).unwrap().clusters.is_empty());
    }

    #[test]
    fn every_segment_in_exactly_one_cluster() {
        let f: Vec<_> = (0..10)
            .map(|i| (seg(&i.to_string(), 1), dv(&[i as f64, (i * i) as f64])))
            .collect();
        let c = cluster_concepts(&f, 3).unwrap();
        assert_eq!(c.clusters.iter().map(|c| c.segments.len()).sum::<usize>(), 10);
        assert_eq!(c, cluster_concepts(&f, 3).unwrap());
    }

    #[test]
    fn rescaling_boxes() {
        let b = rescale(BoundingBox::new(10, 20, 30, 40), 100, 100, 50);
        assert_eq!(b, BoundingBox::new(5, 10, 15, 20));
        let tiny = rescale(BoundingBox::new(99, 99, 100, 100), 100, 100, 10);
        assert_eq!(tiny, BoundingBox::new(9, 9, 10, 10));
    }

    #[test]
    fn crops_encode_through_the_pipeline() {
        let adapter = VitEncoder::mock(1);
        let projection = ForgetProjection::random_orthonormal(2);
        let detector = DetectorModel::new(
            orthonormal_rows(16, 256, 3),
            vec![0.1; 16],
            0.0,
            3.0,
            1.0,
            TrainingMeta {
                seed: 0,
                epochs: None,
                config: None,
            },
        )
        .unwrap();
        let px = PixelTensor::new((0..224 * 224 * 3).map(|i| (i % 13) as f32 / 13.0).collect(), 224, "p").unwrap();
        let segs = vec![
            seg("p", 1),
            Segment {
                bbox: BoundingBox::new(0, 0, 300, 10),
                ..seg("p", 2)
            },
        ];
        let out = segment_features(&px, &segs, (224, 224), &adapter, &projection, &detector);
        assert_eq!(out[0].as_ref().unwrap().values.len(), 16);
        assert!(out[1].is_err());
    }
}
