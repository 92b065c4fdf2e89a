//! Minimum-cost matching of predictions (rows) to ground truths (columns).

use crate::error::{Error, Result};
use crate::grid::SlotTarget;

/// Dense `rows × cols` matrix of nonnegative, finite costs.
#[derive(Debug, Clone, PartialEq)]
pub struct CostMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl CostMatrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::Cost(format!(
                "{rows}x{cols} matrix needs {} entries, got {}",
                rows * cols,
                data.len()
            )));
        }
        if let Some(v) = data.iter().find(|v| !v.is_finite() || **v < 0.0) {
            return Err(Error::Cost(format!("entries must be finite and >= 0, found {v}")));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::Cost("ragged rows".into()));
        }
        Self::new(rows.len(), cols, rows.concat())
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.data[row * self.cols + col]
    }

    pub fn scaled(&self, factor: f64) -> Result<Self> {
        Self::new(self.rows, self.cols, self.data.iter().map(|v| v * factor).collect())
    }
}

/// `matches[j]` is the prediction row assigned to ground-truth column `j`.
#[derive(Debug, Clone, PartialEq)]
pub struct Assignment {
    pub matches: Vec<usize>,
    pub total_cost: f64,
}

/// Solve the rectangular assignment problem with `rows >= cols`.
///
/// Every column is matched to a distinct row at minimum total cost. This is
/// the shortest-augmenting-path form of Kuhn–Munkres with row/column
/// potentials; unmatched rows act as zero-cost dummy columns. Among equal
/// reduced costs the lowest row index is taken first.
pub fn solve_assignment(c: &CostMatrix) -> Result<Assignment> {
    let (n_rows, n_cols) = (c.rows, c.cols);
    if n_cols == 0 {
        return Ok(Assignment {
            matches: Vec::new(),
            total_cost: 0.0,
        });
    }
    if n_rows < n_cols {
        return Err(Error::Cost(format!(
            "need rows >= cols, got {n_rows}x{n_cols}; pad the prediction side"
        )));
    }

    // Ground truths are the "workers" (1-based, index 0 is the virtual
    // source); predictions are the "jobs".
    let inf = f64::INFINITY;
    let mut u = vec![0.0; n_cols + 1];
    let mut v = vec![0.0; n_rows + 1];
    let mut owner = vec![0usize; n_rows + 1];
    let mut way = vec![0usize; n_rows + 1];
    let mut minv = vec![inf; n_rows + 1];
    let mut used = vec![false; n_rows + 1];

    for worker in 1..=n_cols {
        owner[0] = worker;
        let mut j0 = 0usize;
        minv.fill(inf);
        used.fill(false);
        loop {
            used[j0] = true;
            let i0 = owner[j0];
            let mut delta = inf;
            let mut j1 = 0usize;
            for j in 1..=n_rows {
                if used[j] {
                    continue;
                }
                let cur = c.get(j - 1, i0 - 1) - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=n_rows {
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

    let mut matches = vec![0usize; n_cols];
    for j in 1..=n_rows {
        if owner[j] != 0 {
            matches[owner[j] - 1] = j - 1;
        }
    }
    let total_cost = matches.iter().enumerate().map(|(col, &row)| c.get(row, col)).sum();
    Ok(Assignment { matches, total_cost })
}

/// Euclidean distance matrix between predicted and ground-truth coordinates.
///
/// Rows with four components are boxes; only their centers (first two
/// components) enter the distance.
pub fn build_cost<P, G>(pred_coords: &[P], gt_coords: &[G]) -> Result<CostMatrix>
where
    P: AsRef<[f64]>,
    G: AsRef<[f64]>,
{
    let r = pred_coords
        .first()
        .map(|p| p.as_ref().len())
        .or_else(|| gt_coords.first().map(|g| g.as_ref().len()))
        .unwrap_or(2);
    let consistent =
        pred_coords.iter().all(|p| p.as_ref().len() == r) && gt_coords.iter().all(|g| g.as_ref().len() == r);
    if !consistent {
        return Err(Error::shape(
            "prediction and ground-truth coordinates must share one arity",
        ));
    }
    let dims = if r == 4 { 2 } else { r };
    let mut data = Vec::with_capacity(pred_coords.len() * gt_coords.len());
    for p in pred_coords {
        for g in gt_coords {
            let dist = p.as_ref()[..dims]
                .iter()
                .zip(&g.as_ref()[..dims])
                .fold(0.0f64, |acc, (a, b)| acc.hypot(a - b));
            data.push(dist);
        }
    }
    CostMatrix::new(pred_coords.len(), gt_coords.len(), data)
}

/// Targets of one cell permuted to line up with that cell's predictions.
#[derive(Debug, Clone, PartialEq)]
pub struct CellMatch {
    pub targets: Vec<SlotTarget>,
    pub total_cost: f64,
}

/// Reorder a cell's targets so each present target sits at the index of the
/// prediction slot it is matched to. Unmatched slots receive padding.
///
/// `pred_coords` holds the `k` predicted coordinate rows of the cell.
pub fn match_cell<P: AsRef<[f64]>>(pred_coords: &[P], targets: &[SlotTarget]) -> Result<CellMatch> {
    let k = pred_coords.len();
    if targets.len() != k {
        return Err(Error::shape(format!(
            "cell has {k} predictions but {} target slots",
            targets.len()
        )));
    }
    let present: Vec<&SlotTarget> = targets.iter().filter(|t| t.present).collect();
    let mut out = vec![SlotTarget::PADDING; k];
    if present.is_empty() {
        return Ok(CellMatch {
            targets: out,
            total_cost: 0.0,
        });
    }
    let r = pred_coords[0].as_ref().len();
    let gt: Vec<&[f64]> = present.iter().map(|t| &t.coords[..r]).collect();
    let assignment = solve_assignment(&build_cost(pred_coords, &gt)?)?;
    for (target, &slot) in present.iter().zip(&assignment.matches) {
        out[slot] = **target;
    }
    Ok(CellMatch {
        targets: out,
        total_cost: assignment.total_cost,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn swapped_two_by_two() {
        let c = CostMatrix::from_rows(&[vec![2.0, 1.0], vec![1.0, 2.0]]).unwrap();
        let a = solve_assignment(&c).unwrap();
        assert_eq!(a.matches, vec![1, 0]);
        assert_eq!(a.total_cost, 2.0);
    }

    #[test]
    fn identity_favoring() {
        let c = CostMatrix::from_rows(&[vec![0.0, 9.0], vec![9.0, 0.0]]).unwrap();
        let a = solve_assignment(&c).unwrap();
        assert_eq!(a.matches, vec![0, 1]);
        assert_eq!(a.total_cost, 0.0);
    }

    #[test]
    fn labels_a_b_predicted_as_b_a() {
        let gt = [[10.0, 10.0], [100.0, 40.0]];
        let pred = [[100.0, 40.0], [10.0, 10.0]];
        let a = solve_assignment(&build_cost(&pred, &gt).unwrap()).unwrap();
        assert_eq!(a.matches, vec![1, 0]);
        assert_eq!(a.total_cost, 0.0);
    }

    #[test]
    fn empty_and_invalid() {
        let c = CostMatrix::new(3, 0, vec![]).unwrap();
        assert!(solve_assignment(&c).unwrap().matches.is_empty());
        assert!(CostMatrix::new(1, 1, vec![f64::NAN]).is_err());
        assert!(CostMatrix::new(1, 1, vec![-1.0]).is_err());
        assert!(CostMatrix::new(1, 1, vec![f64::INFINITY]).is_err());
        let wide = CostMatrix::new(1, 2, vec![0.0, 0.0]).unwrap();
        assert!(solve_assignment(&wide).is_err());
    }

    #[test]
    fn cost_is_euclidean() {
        let c = build_cost(&[[0.5, 0.5], [0.0, 0.0]], &[[0.5, 0.5], [3.0, 4.0]]).unwrap();
        assert_eq!(c.get(0, 0), 0.0);
        assert_eq!(c.get(1, 1), 5.0);
        let boxes = build_cost(&[[0.0, 0.0, 9.0, 9.0]], &[[3.0, 4.0, 1.0, 1.0]]).unwrap();
        assert_eq!(boxes.get(0, 0), 5.0);
        assert!(build_cost(&[vec![0.0, 0.0]], &[vec![0.0, 0.0, 1.0, 1.0]]).is_err());
    }

    #[test]
    fn match_cell_empty_is_padding() {
        let m = match_cell(&[[0.1, 0.1], [0.9, 0.9]], &[SlotTarget::PADDING; 2]).unwrap();
        assert_eq!(m.targets, vec![SlotTarget::PADDING; 2]);
    }

    #[test]
    fn match_cell_places_target_at_nearest_slot() {
        let target = SlotTarget {
            present: true,
            coords: [0.8, 0.85, 0.0, 0.0],
            class_id: 2,
        };
        let m = match_cell(&[[0.1, 0.1], [0.9, 0.9]], &[target, SlotTarget::PADDING]).unwrap();
        assert_eq!(m.targets[1], target);
        assert_eq!(m.targets[0], SlotTarget::PADDING);
        let d = ((0.1f64).powi(2) + (0.05f64).powi(2)).sqrt();
        assert!((m.total_cost - d).abs() < 1e-15);
    }
}
