//! Corpus-level aggregates: 2-D projection, grid cells, distributions,
//! concept segments and clusters, and in-cell layouts.

pub mod concepts;
pub mod distributions;
pub mod grid;
pub mod kmeans;
pub mod layout;
pub mod segments;
pub mod tsne;

pub use concepts::{cluster_concepts, segment_features, ConceptCluster, ConceptClustering, SegmentRef};
pub use distributions::{
    contribution_distributions, dimension_distributions, global_ranges, ContributionFilter, ContributionSummary,
    DimensionDistribution, Scope,
};
pub use grid::{assign_grid, cell_statistics, CellId, GridCell, SectorConfidence};
pub use layout::{hungarian, isomatch_layout, CellLayout};
pub use segments::{extract_segments, Segment};
pub use tsne::{project_2d, ProjectedPoint, TsneConfig};

/// Per-axis min-max scaling to `[0, 1]`; an axis with zero range maps to 0.
pub(crate) fn normalize_axes(points: &mut [[f64; 2]]) {
    for axis in 0..2 {
        let (lo, hi) = points.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), p| {
            (lo.min(p[axis]), hi.max(p[axis]))
        });
        let range = hi - lo;
        for p in points.iter_mut() {
            p[axis] = if range > 0.0 {
                ((p[axis] - lo) / range).clamp(0.0, 1.0)
            } else {
                0.0
            };
        }
    }
}

pub(crate) fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}
