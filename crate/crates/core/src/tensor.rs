//! Dense row-major containers indexed by `(node, slot)` and `(from, to, slot)`.
//!
//! Both serialize as nested JSON arrays (`[n][k]` and `[m][n][k]`) so that
//! scenario and report files stay readable by plotting scripts.

use std::ops::{Index, IndexMut};

use serde::{Deserialize, Serialize};

/// An `rows x cols` matrix of reals, stored row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<Vec<f64>>", into = "Vec<Vec<f64>>")]
pub struct Grid {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Grid {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self::filled(rows, cols, 0.0)
    }

    pub fn filled(rows: usize, cols: usize, value: f64) -> Self {
        Grid {
            rows,
            cols,
            data: vec![value; rows * cols],
        }
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for c in 0..cols {
                data.push(f(r, c));
            }
        }
        Grid { rows, cols, data }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn iter(&self) -> impl Iterator<Item = &f64> {
        self.data.iter()
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    /// Sum over rows for a fixed column.
    pub fn col_sum(&self, c: usize) -> f64 {
        (0..self.rows).map(|r| self[(r, c)]).sum()
    }

    pub fn row_sum(&self, r: usize) -> f64 {
        self.row(r).iter().sum()
    }

    /// Columns `start..end` of every row.
    pub fn slice_cols(&self, start: usize, end: usize) -> Grid {
        Grid::from_fn(self.rows, end - start, |r, c| self[(r, start + c)])
    }
}

impl Index<(usize, usize)> for Grid {
    type Output = f64;

    #[inline]
    fn index(&self, (r, c): (usize, usize)) -> &f64 {
        debug_assert!(r < self.rows && c < self.cols);
        &self.data[r * self.cols + c]
    }
}

impl IndexMut<(usize, usize)> for Grid {
    #[inline]
    fn index_mut(&mut self, (r, c): (usize, usize)) -> &mut f64 {
        debug_assert!(r < self.rows && c < self.cols);
        &mut self.data[r * self.cols + c]
    }
}

impl TryFrom<Vec<Vec<f64>>> for Grid {
    type Error = String;

    fn try_from(nested: Vec<Vec<f64>>) -> Result<Self, Self::Error> {
        let rows = nested.len();
        let cols = nested.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(rows * cols);
        for (i, row) in nested.into_iter().enumerate() {
            if row.len() != cols {
                return Err(format!("row {i} has {} entries, expected {cols}", row.len()));
            }
            data.extend(row);
        }
        Ok(Grid { rows, cols, data })
    }
}

impl From<Grid> for Vec<Vec<f64>> {
    fn from(g: Grid) -> Self {
        (0..g.rows).map(|r| g.row(r).to_vec()).collect()
    }
}

/// An `n x n x k` array, used for pairwise donations `r[from][to][slot]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<Vec<Vec<f64>>>", into = "Vec<Vec<Vec<f64>>>")]
pub struct Cube {
    n: usize,
    k: usize,
    data: Vec<f64>,
}

impl Cube {
    pub fn zeros(n: usize, k: usize) -> Self {
        Cube {
            n,
            k,
            data: vec![0.0; n * n * k],
        }
    }

    pub fn nodes(&self) -> usize {
        self.n
    }

    pub fn slots(&self) -> usize {
        self.k
    }

    pub fn iter(&self) -> impl Iterator<Item = &f64> {
        self.data.iter()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    /// The `k`-length lane `r[from][to][..]`.
    pub fn lane(&self, from: usize, to: usize) -> &[f64] {
        let start = (from * self.n + to) * self.k;
        &self.data[start..start + self.k]
    }

    pub fn lane_mut(&mut self, from: usize, to: usize) -> &mut [f64] {
        let start = (from * self.n + to) * self.k;
        &mut self.data[start..start + self.k]
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn slice_slots(&self, start: usize, end: usize) -> Cube {
        let mut out = Cube::zeros(self.n, end - start);
        for m in 0..self.n {
            for n in 0..self.n {
                out.lane_mut(m, n).copy_from_slice(&self.lane(m, n)[start..end]);
            }
        }
        out
    }
}

impl Index<(usize, usize, usize)> for Cube {
    type Output = f64;

    #[inline]
    fn index(&self, (m, n, k): (usize, usize, usize)) -> &f64 {
        debug_assert!(m < self.n && n < self.n && k < self.k);
        &self.data[(m * self.n + n) * self.k + k]
    }
}

impl IndexMut<(usize, usize, usize)> for Cube {
    #[inline]
    fn index_mut(&mut self, (m, n, k): (usize, usize, usize)) -> &mut f64 {
        debug_assert!(m < self.n && n < self.n && k < self.k);
        &mut self.data[(m * self.n + n) * self.k + k]
    }
}

impl TryFrom<Vec<Vec<Vec<f64>>>> for Cube {
    type Error = String;

    fn try_from(nested: Vec<Vec<Vec<f64>>>) -> Result<Self, Self::Error> {
        let n = nested.len();
        let k = nested
            .first()
            .and_then(|plane| plane.first())
            .map_or(0, Vec::len);
        let mut data = Vec::with_capacity(n * n * k);
        for (m, plane) in nested.into_iter().enumerate() {
            if plane.len() != n {
                return Err(format!("plane {m} has {} rows, expected {n}", plane.len()));
            }
            for (i, lane) in plane.into_iter().enumerate() {
                if lane.len() != k {
                    return Err(format!("lane [{m}][{i}] has {} entries, expected {k}", lane.len()));
                }
                data.extend(lane);
            }
        }
        Ok(Cube { n, k, data })
    }
}

impl From<Cube> for Vec<Vec<Vec<f64>>> {
    fn from(c: Cube) -> Self {
        (0..c.n)
            .map(|m| (0..c.n).map(|n| c.lane(m, n).to_vec()).collect())
            .collect()
    }
}
