//! In-cell grid layout: points are placed on a ⌈√n⌉×⌈√n⌉ grid by an exact
//! minimum-cost assignment to slot centers.

use serde::{Deserialize, Serialize};

use super::normalize_axes;
use super::tsne::ProjectedPoint;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Placement {
    pub image_id: String,
    pub row: usize,
    pub col: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellLayout {
    pub rows: usize,
    pub cols: usize,
    pub placements: Vec<Placement>,
    /// Σ‖normalized point − normalized slot center‖².
    pub cost: f64,
}

/// Minimum-cost assignment of each of `n` rows to a distinct column of an
/// `n × m` cost matrix (`n ≤ m`), by shortest augmenting paths with
/// potentials. Returns the column of each row.
pub fn hungarian(cost: &[f64], n: usize, m: usize) -> Result<Vec<usize>> {
    if n > m || cost.len() != n * m {
        return Err(Error::Argument(format!("cannot assign {n} rows to {m} columns")));
    }
    if cost.iter().any(|c| !c.is_finite()) {
        return Err(Error::Numeric("assignment costs must be finite".into()));
    }
    // 1-based arrays with a virtual row/column 0.
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; m + 1];
    let mut owner = vec![0usize; m + 1];
    let mut way = vec![0usize; m + 1];
    for i in 1..=n {
        owner[0] = i;
        let mut j0 = 0;
        let mut minv = vec![f64::INFINITY; m + 1];
        let mut used = vec![false; m + 1];
        loop {
            used[j0] = true;
            let i0 = owner[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=m {
                if used[j] {
                    continue;
                }
                let cur = cost[(i0 - 1) * m + (j - 1)] - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=m {
                if used[j] {
                    u[owner[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if owner[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            owner[j0] = owner[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut assignment = vec![0; n];
    for j in 1..=m {
        if owner[j] != 0 {
            assignment[owner[j] - 1] = j - 1;
        }
    }
    Ok(assignment)
}

/// Slot centers of an `r × c` grid scaled to `[0, 1]` per axis, row-major,
/// as `[x, y]`.
fn slot_centers(r: usize, c: usize) -> Vec<[f64; 2]> {
    let mut slots: Vec<[f64; 2]> = (0..r * c)
        .map(|s| [(s % c) as f64 + 0.5, (s / c) as f64 + 0.5])
        .collect();
    normalize_axes(&mut slots);
    slots
}

pub fn isomatch_layout(points: &[ProjectedPoint]) -> Result<CellLayout> {
    let n = points.len();
    if n == 0 {
        return Err(Error::Argument("layout needs at least one point".into()));
    }
    let side = (n as f64).sqrt().ceil() as usize;
    let side = if side * side < n { side + 1 } else { side };
    let slots = slot_centers(side, side);
    let mut pts: Vec<[f64; 2]> = points.iter().map(|p| [p.x, p.y]).collect();
    normalize_axes(&mut pts);
    let m = slots.len();
    let mut cost = vec![0.0; n * m];
    for (i, p) in pts.iter().enumerate() {
        for (j, s) in slots.iter().enumerate() {
            cost[i * m + j] = (p[0] - s[0]).powi(2) + (p[1] - s[1]).powi(2);
        }
    }
    let assignment = hungarian(&cost, n, m)?;
    Ok(CellLayout {
        rows: side,
        cols: side,
        cost: assignment.iter().enumerate().map(|(i, &j)| cost[i * m + j]).sum(),
        placements: points
            .iter()
            .zip(&assignment)
            .map(|(p, &slot)| Placement {
                image_id: p.image_id.clone(),
                row: slot / side,
                col: slot % side,
            })
            .collect(),
    })
}
