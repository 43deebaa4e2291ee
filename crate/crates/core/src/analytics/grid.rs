//! m×m overview grid over the normalized projection.

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use super::tsne::ProjectedPoint;
use crate::dataset::Label;
use crate::detector::{ConfusionStats, Prediction};
use crate::error::{Error, Result};

pub const DEFAULT_GRID: usize = 30;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct CellId {
    pub row: usize,
    pub col: usize,
}

impl CellId {
    pub fn of(point: &ProjectedPoint, m: usize) -> Self {
        let index = |v: f64| ((v * m as f64).floor().max(0.0) as usize).min(m - 1);
        Self {
            row: index(point.y),
            col: index(point.x),
        }
    }
}

impl std::fmt::Display for CellId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}_{}", self.row, self.col)
    }
}

impl std::str::FromStr for CellId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let (r, c) = s
            .split_once('_')
            .ok_or_else(|| Error::Argument(format!("cell id `{s}` is not `<row>_<col>`")))?;
        let parse = |v: &str| {
            v.parse()
                .map_err(|_| Error::Argument(format!("cell id `{s}` is not `<row>_<col>`")))
        };
        Ok(Self {
            row: parse(r)?,
            col: parse(c)?,
        })
    }
}

/// Mean confidence of the members in each confusion sector; absent when the
/// sector is empty.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct SectorConfidence {
    pub tp: Option<f64>,
    pub tn: Option<f64>,
    pub fp: Option<f64>,
    #[serde(rename = "fn")]
    pub fn_: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridCell {
    pub cell_id: CellId,
    pub member_ids: Vec<String>,
    pub stats: ConfusionStats,
    pub sector_confidence: SectorConfidence,
    pub annotation: Option<String>,
}

/// Groups points into nonempty cells, ordered by (row, col); members keep
/// input order. Statistics are left empty.
pub fn assign_grid(points: &[ProjectedPoint], m: usize) -> Result<Vec<GridCell>> {
    if m == 0 {
        return Err(Error::Argument("grid size must be at least 1".into()));
    }
    let mut cells: BTreeMap<CellId, Vec<String>> = BTreeMap::new();
    for p in points {
        cells.entry(CellId::of(p, m)).or_default().push(p.image_id.clone());
    }
    Ok(cells
        .into_iter()
        .map(|(cell_id, member_ids)| GridCell {
            cell_id,
            member_ids,
            stats: ConfusionStats::default(),
            sector_confidence: SectorConfidence::default(),
            annotation: None,
        })
        .collect())
}

/// Fills `stats` and `sector_confidence` from per-image predictions and
/// ground truth.
pub fn cell_statistics(cell: &mut GridCell, outcomes: &HashMap<String, (Prediction, Label)>) -> Result<()> {
    let mut tally: [(usize, f64); 4] = [(0, 0.0); 4];
    let mut pairs = Vec::with_capacity(cell.member_ids.len());
    for id in &cell.member_ids {
        let (pred, truth) = outcomes
            .get(id)
            .ok_or_else(|| Error::Validation(format!("no prediction for cell member `{id}`")))?;
        let sector = match (pred.label, *truth) {
            (Label::Fake, Label::Fake) => 0,
            (Label::Real, Label::Real) => 1,
            (Label::Fake, Label::Real) => 2,
            (Label::Real, Label::Fake) => 3,
        };
        tally[sector].0 += 1;
        tally[sector].1 += pred.confidence;
        pairs.push((pred.label, *truth));
    }
    let mean = |(count, sum): (usize, f64)| (count > 0).then(|| sum / count as f64);
    cell.stats = ConfusionStats::from_outcomes(pairs);
    cell.sector_confidence = SectorConfidence {
        tp: mean(tally[0]),
        tn: mean(tally[1]),
        fp: mean(tally[2]),
        fn_: mean(tally[3]),
    };
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pt(id: &str, x: f64, y: f64) -> ProjectedPoint {
        ProjectedPoint {
            image_id: id.into(),
            x,
            y,
        }
    }

    #[test]
    fn boundary_rule() {
        assert_eq!(CellId::of(&pt("a", 0.0, 0.0), 30), CellId { row: 0, col: 0 });
        assert_eq!(CellId::of(&pt("a", 1.0, 1.0), 30), CellId { row: 29, col: 29 });
        assert_eq!(CellId::of(&pt("a", 0.5, 0.1), 30), CellId { row: 3, col: 15 });
        assert_eq!(CellId::of(&pt("a", 0.999, 0.0), 1), CellId { row: 0, col: 0 });
    }

    #[test]
    fn cells_partition_points() {
        let pts: Vec<_> = (0..100)
            .map(|i| pt(&i.to_string(), (i % 10) as f64 / 9.0, (i / 10) as f64 / 9.0))
            .collect();
        let cells = assign_grid(&pts, DEFAULT_GRID).unwrap();
        assert_eq!(cells.iter().map(|c| c.member_ids.len()).sum::<usize>(), 100);
        assert!(cells.windows(2).all(|w| w[0].cell_id < w[1].cell_id));
        assert!(assign_grid(&pts, 0).is_err());
    }

    #[test]
    fn cell_id_text_form() {
        let id = CellId { row: 3, col: 17 };
        assert_eq!(id.to_string(), "3_17");
        assert_eq!("3_17".parse::<CellId>().unwrap(), id);
        assert!("3-17".parse::<CellId>().is_err());
    }

    #[test]
    fn statistics() {
        let mut cell = assign_grid(&(0..4).map(|i| pt(&i.to_string(), 0.0, 0.0)).collect::<Vec<_>>(), 30)
            .unwrap()
            .remove(0);
        let p9 = Prediction::from_logit((0.9f64 / 0.1).ln());
        let outcomes: HashMap<_, _> = (0..4).map(|i| (i.to_string(), (p9, Label::Fake))).collect();
        cell_statistics(&mut cell, &outcomes).unwrap();
        assert_eq!(cell.stats.tp, 4);
        assert!((cell.sector_confidence.tp.unwrap() - 0.9).abs() < 1e-12);
        assert_eq!(cell.sector_confidence.fn_, None);

        let mut mixed = assign_grid(&(0..3).map(|i| pt(&i.to_string(), 0.0, 0.0)).collect::<Vec<_>>(), 30)
            .unwrap()
            .remove(0);
        let mut outcomes = outcomes;
        outcomes.insert("2".into(), (Prediction::from_logit(-1.0), Label::Fake));
        cell_statistics(&mut mixed, &outcomes).unwrap();
        assert_eq!((mixed.stats.tp, mixed.stats.fn_), (2, 1));
        assert!((mixed.stats.sensitivity.unwrap() - 2.0 / 3.0).abs() < 1e-12);

        outcomes.remove("0");
        assert!(cell_statistics(&mut mixed, &outcomes).is_err());
    }
}
