//! Bipartite assignment: optimal (Hungarian) and greedy, plus the set-prediction
//! matching cost.

use thiserror::Error;

use crate::geometry::{giou, BoxRel, GeometryError};
use crate::loss::LossWeights;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AssignError {
    #[error("cost matrix entry ({row}, {col}) is not finite: {value}")]
    NonFinite { row: usize, col: usize, value: f64 },
    #[error("cost matrix data has {got} entries, expected {rows}x{cols}")]
    Shape { rows: usize, cols: usize, got: usize },
    #[error("class probability {0} is outside (0, 1)")]
    Probability(f64),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

/// Dense row-major cost matrix, rows are predictions and columns ground truths.
#[derive(Debug, Clone, PartialEq)]
pub struct CostMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl CostMatrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self, AssignError> {
        if data.len() != rows * cols {
            return Err(AssignError::Shape {
                rows,
                cols,
                got: data.len(),
            });
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(AssignError::NonFinite {
                row: i / cols.max(1),
                col: i % cols.max(1),
                value: data[i],
            });
        }
        Ok(CostMatrix { rows, cols, data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self, AssignError> {
        let cols = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            if r.len() != cols {
                return Err(AssignError::Shape {
                    rows: rows.len(),
                    cols,
                    got: r.len(),
                });
            }
            data.extend_from_slice(r);
        }
        Self::new(rows.len(), cols, data)
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Result<Self, AssignError> {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Self::new(rows, cols, data)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.data[row * self.cols + col]
    }

    pub fn transpose(&self) -> CostMatrix {
        let mut data = Vec::with_capacity(self.data.len());
        for j in 0..self.cols {
            for i in 0..self.rows {
                data.push(self.get(i, j));
            }
        }
        CostMatrix {
            rows: self.cols,
            cols: self.rows,
            data,
        }
    }

    /// Sum of the entries selected by `pairs`, accumulated in the given order.
    pub fn cost_of(&self, pairs: &[(usize, usize)]) -> f64 {
        pairs.iter().map(|&(r, c)| self.get(r, c)).sum()
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Assignment {
    /// `(row, col)` pairs sorted by row.
    pub pairs: Vec<(usize, usize)>,
    pub cost: f64,
}

impl Assignment {
    fn from_pairs(c: &CostMatrix, mut pairs: Vec<(usize, usize)>) -> Self {
        pairs.sort_unstable();
        let cost = c.cost_of(&pairs);
        Assignment { pairs, cost }
    }

    pub fn col_for_row(&self, row: usize) -> Option<usize> {
        self.pairs.iter().find(|p| p.0 == row).map(|p| p.1)
    }

    pub fn row_for_col(&self, col: usize) -> Option<usize> {
        self.pairs.iter().find(|p| p.1 == col).map(|p| p.0)
    }
}

/// Minimum-cost maximum matching of `min(rows, cols)` pairs.
///
/// Shortest augmenting path with row/column potentials, O(n²m). Rows are
/// inserted in index order and the column scan takes the first strictly
/// smaller reduced cost, so ties resolve toward lower indices and the result
/// is fully deterministic. The total is summed in row order.
pub fn hungarian(c: &CostMatrix) -> Assignment {
    if c.rows == 0 || c.cols == 0 {
        return Assignment::default();
    }
    if c.rows > c.cols {
        let t = c.transpose();
        let pairs = solve_wide(&t).into_iter().map(|(r, col)| (col, r)).collect();
        return Assignment::from_pairs(c, pairs);
    }
    Assignment::from_pairs(c, solve_wide(c))
}

// Requires rows <= cols. Indices are 1-based internally; column 0 is a sentinel.
fn solve_wide(c: &CostMatrix) -> Vec<(usize, usize)> {
    let (n, m) = (c.rows, c.cols);
    let mut u = vec![0.0f64; n + 1];
    let mut v = vec![0.0f64; m + 1];
    let mut owner = vec![0usize; m + 1];
    let mut way = vec![0usize; m + 1];

    for i in 1..=n {
        owner[0] = i;
        let mut j0 = 0usize;
        let mut minv = vec![f64::INFINITY; m + 1];
        let mut used = vec![false; m + 1];
        loop {
            used[j0] = true;
            let i0 = owner[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0usize;
            for j in 1..=m {
                if used[j] {
                    continue;
                }
                let cur = c.get(i0 - 1, j - 1) - u[i0] - v[j];
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

    (1..=m)
        .filter(|&j| owner[j] != 0)
        .map(|j| (owner[j] - 1, j - 1))
        .collect()
}

/// Repeatedly takes the globally smallest remaining entry that is `<= gate`.
/// Equal costs resolve to the lower row, then the lower column.
pub fn greedy_match(c: &CostMatrix, gate: f64) -> Assignment {
    let mut entries: Vec<(f64, usize, usize)> = (0..c.rows)
        .flat_map(|i| (0..c.cols).map(move |j| (i, j)))
        .map(|(i, j)| (c.get(i, j), i, j))
        .filter(|e| e.0 <= gate)
        .collect();
    entries.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
    let mut row_used = vec![false; c.rows];
    let mut col_used = vec![false; c.cols];
    let mut pairs = Vec::new();
    for (_, i, j) in entries {
        if !row_used[i] && !col_used[j] {
            row_used[i] = true;
            col_used[j] = true;
            pairs.push((i, j));
        }
    }
    Assignment::from_pairs(c, pairs)
}

/// Positive-class focal matching cost `α(1-p)^γ(-ln p)`.
pub fn focal_pos_cost(p: f64, alpha: f64, gamma: f64) -> f64 {
    alpha * (1.0 - p).powf(gamma) * -p.ln()
}

/// Matching cost between predicted `(box, class probability)` pairs and
/// ground-truth boxes. Behaviors do not enter the matching.
///
/// `cost(i, j) = λ_cls·focal_pos(p_i) + λ_l1·‖b_i − g_j‖₁ + λ_giou·(1 − GIoU(b_i, g_j))`,
/// with GIoU evaluated on the unit-square corner forms.
pub fn detr_cost(preds: &[(BoxRel, f64)], gts: &[BoxRel], w: &LossWeights) -> Result<CostMatrix, AssignError> {
    let mut data = Vec::with_capacity(preds.len() * gts.len());
    for (b, p) in preds {
        if !(*p > 0.0 && *p < 1.0) {
            return Err(AssignError::Probability(*p));
        }
        let cls = w.cls * focal_pos_cost(*p, w.alpha, w.gamma);
        let pb = b.to_unit_corners();
        for g in gts {
            let l1: f64 = b
                .to_array()
                .iter()
                .zip(g.to_array())
                .map(|(x, y)| (x - y).abs())
                .sum();
            let gi = giou(&pb, &g.to_unit_corners())?;
            data.push(cls + w.l1 * l1 + w.giou * (1.0 - gi));
        }
    }
    CostMatrix::new(preds.len(), gts.len(), data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracle;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_xoshiro::Xoshiro256StarStar;

    fn m(rows: &[&[f64]]) -> CostMatrix {
        CostMatrix::from_rows(&rows.iter().map(|r| r.to_vec()).collect::<Vec<_>>()).unwrap()
    }

    #[test]
    fn hungarian_examples() {
        let a = hungarian(&m(&[&[1.0, 2.0], &[2.0, 4.0]]));
        assert_eq!(a.pairs, vec![(0, 1), (1, 0)]);
        assert_eq!(a.cost, 4.0);
        let a = hungarian(&m(&[&[0.0, 9.0], &[9.0, 0.0]]));
        assert_eq!(a.pairs, vec![(0, 0), (1, 1)]);
        assert_eq!(a.cost, 0.0);
    }

    #[test]
    fn hungarian_rectangular_and_empty() {
        let a = hungarian(&m(&[&[5.0], &[1.0], &[3.0]]));
        assert_eq!(a.pairs, vec![(1, 0)]);
        let a = hungarian(&m(&[&[5.0, 1.0, 3.0]]));
        assert_eq!(a.pairs, vec![(0, 1)]);
        let e = CostMatrix::new(0, 3, vec![]).unwrap();
        assert!(hungarian(&e).pairs.is_empty());
    }

    #[test]
    fn hungarian_tie_prefers_low_indices() {
        let a = hungarian(&m(&[&[1.0, 1.0], &[1.0, 1.0]]));
        assert_eq!(a.pairs, vec![(0, 0), (1, 1)]);
    }

    #[test]
    fn non_finite_rejected() {
        let err = CostMatrix::new(1, 2, vec![0.0, f64::NAN]).unwrap_err();
        assert!(matches!(err, AssignError::NonFinite { row: 0, col: 1, .. }));
        assert!(CostMatrix::new(2, 2, vec![0.0; 3]).is_err());
    }

    #[test]
    fn hungarian_matches_brute_force_on_random() {
        let mut rng = Xoshiro256StarStar::seed_from_u64(11);
        for _ in 0..300 {
            let r = rng.random_range(1..=6);
            let c = rng.random_range(1..=6);
            let cm = CostMatrix::from_fn(r, c, |_, _| rng.random_range(-5.0..5.0)).unwrap();
            let (best, _) = oracle::brute_force_assignment(&cm);
            assert_eq!(hungarian(&cm).cost, best);
        }
    }

    #[test]
    fn greedy_examples() {
        let c = m(&[&[0.1, 0.9], &[0.2, 0.15]]);
        assert_eq!(greedy_match(&c, 0.5).pairs, vec![(0, 0), (1, 1)]);
        assert!(greedy_match(&c, 0.05).pairs.is_empty());
        assert_eq!(greedy_match(&m(&[&[0.0]]), 1.0).pairs, vec![(0, 0)]);
    }

    #[test]
    fn detr_cost_examples() {
        let w = LossWeights::default();
        let g = BoxRel::new(0.5, 0.5, 0.2, 0.3).unwrap();
        let c = detr_cost(&[(g, 0.5)], &[g], &w).unwrap();
        assert!((c.get(0, 0) - 2.0 * 0.25 * 0.25 * std::f64::consts::LN_2).abs() < 1e-12);
        assert!((c.get(0, 0) - 0.086643).abs() < 1e-6);

        let other = BoxRel::new(0.2, 0.3, 0.1, 0.1).unwrap();
        let c = detr_cost(&[(g, 0.999)], &[g, other], &w).unwrap();
        let expected = 2.0 * focal_pos_cost(0.999, 0.25, 2.0);
        assert!((c.get(0, 0) - expected).abs() < 1e-15);
        assert!(c.get(0, 0) < c.get(0, 1));
    }

    #[test]
    fn detr_cost_grows_with_translation() {
        let w = LossWeights::default();
        let g = BoxRel::new(0.3, 0.4, 0.2, 0.2).unwrap();
        let mut prev = -1.0;
        for k in 0..40 {
            let p = BoxRel::new(0.3 + 0.015 * k as f64, 0.4, 0.2, 0.2).unwrap();
            let v = detr_cost(&[(p, 0.7)], &[g], &w).unwrap().get(0, 0);
            assert!(v > prev);
            prev = v;
        }
    }

    #[test]
    fn detr_cost_rejects_bad_probability() {
        let g = BoxRel::new(0.5, 0.5, 0.2, 0.3).unwrap();
        for p in [0.0, 1.0, -0.1, f64::NAN] {
            assert!(matches!(
                detr_cost(&[(g, p)], &[g], &LossWeights::default()),
                Err(AssignError::Probability(_))
            ));
        }
    }

    fn arb_matrix() -> impl Strategy<Value = (usize, usize, Vec<f64>)> {
        (1usize..=5, 1usize..=5).prop_flat_map(|(r, c)| {
            (Just(r), Just(c), proptest::collection::vec(0.0..10.0f64, r * c))
        })
    }

    proptest! {
        #[test]
        fn permuting_rows_preserves_cost((r, c, data) in arb_matrix(), seed in any::<u64>()) {
            let cm = CostMatrix::new(r, c, data).unwrap();
            let mut rng = Xoshiro256StarStar::seed_from_u64(seed);
            let mut perm: Vec<usize> = (0..r).collect();
            for i in (1..r).rev() {
                perm.swap(i, rng.random_range(0..=i));
            }
            let pm = CostMatrix::from_fn(r, c, |i, j| cm.get(perm[i], j)).unwrap();
            let a = hungarian(&cm);
            let b = hungarian(&pm);
            prop_assert!((a.cost - b.cost).abs() < 1e-9);
            for &(i, j) in &b.pairs {
                prop_assert_eq!(a.col_for_row(perm[i]), Some(j));
            }
        }

        #[test]
        fn row_offset_keeps_assignment((r, c, data) in arb_matrix(), row in 0usize..5, k in -3.0..3.0f64) {
            let cm = CostMatrix::new(r, c, data).unwrap();
            let row = row % r;
            let shifted = CostMatrix::from_fn(r, c, |i, j| cm.get(i, j) + if i == row { k } else { 0.0 }).unwrap();
            // a row offset only preserves the optimum when that row is always matched
            prop_assume!(r <= c);
            prop_assert_eq!(hungarian(&cm).pairs, hungarian(&shifted).pairs);
        }
    }
}
