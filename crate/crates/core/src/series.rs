//! Per-path time series on the departure grid.

/// Values indexed by `(path, cell)`, stored path-major. Used for departure
/// rates, effective delays, tolls and per-vehicle emissions alike.
#[derive(Debug, Clone, PartialEq)]
pub struct PathSeries {
    paths: usize,
    cells: usize,
    values: Vec<f64>,
}

/// Departure rates `h_p(t_k)` in vehicles per hour; left-constant on each cell.
pub type PathFlowProfile = PathSeries;

impl PathSeries {
    pub fn zeros(paths: usize, cells: usize) -> Self {
        Self::filled(paths, cells, 0.0)
    }

    pub fn filled(paths: usize, cells: usize, value: f64) -> Self {
        Self {
            paths,
            cells,
            values: vec![value; paths * cells],
        }
    }

    pub fn from_rows(rows: Vec<Vec<f64>>) -> Self {
        let paths = rows.len();
        let cells = rows.first().map_or(0, Vec::len);
        assert!(rows.iter().all(|r| r.len() == cells), "ragged rows");
        Self {
            paths,
            cells,
            values: rows.into_iter().flatten().collect(),
        }
    }

    pub fn from_flat(paths: usize, cells: usize, values: Vec<f64>) -> Self {
        assert_eq!(values.len(), paths * cells);
        Self {
            paths,
            cells,
            values,
        }
    }

    pub fn paths(&self) -> usize {
        self.paths
    }

    pub fn cells(&self) -> usize {
        self.cells
    }

    pub fn same_shape(&self, other: &Self) -> bool {
        self.paths == other.paths && self.cells == other.cells
    }

    pub fn get(&self, p: usize, k: usize) -> f64 {
        self.values[p * self.cells + k]
    }

    pub fn set(&mut self, p: usize, k: usize, v: f64) {
        self.values[p * self.cells + k] = v;
    }

    pub fn row(&self, p: usize) -> &[f64] {
        &self.values[p * self.cells..(p + 1) * self.cells]
    }

    pub fn row_mut(&mut self, p: usize) -> &mut [f64] {
        &mut self.values[p * self.cells..(p + 1) * self.cells]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.values
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            paths: self.paths,
            cells: self.cells,
            values: self.values.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn zip_map(&self, other: &Self, f: impl Fn(f64, f64) -> f64) -> Self {
        assert!(self.same_shape(other), "shape mismatch");
        Self {
            paths: self.paths,
            cells: self.cells,
            values: self
                .values
                .iter()
                .zip(&other.values)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        }
    }

    /// `sum_p sum_k a_p(t_k) b_p(t_k) dt`
    pub fn inner(&self, other: &Self, dt: f64) -> f64 {
        assert!(self.same_shape(other), "shape mismatch");
        self.values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| a * b)
            .sum::<f64>()
            * dt
    }

    /// L2 norm with cell weight `dt`.
    pub fn norm(&self, dt: f64) -> f64 {
        self.inner(self, dt).sqrt()
    }

    /// Total mass `dt * sum_k v_p(t_k)` of one path.
    pub fn path_mass(&self, p: usize, dt: f64) -> f64 {
        self.row(p).iter().sum::<f64>() * dt
    }

    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        assert!(self.same_shape(other), "shape mismatch");
        self.values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn indexing_and_mass() {
        let mut s = PathSeries::zeros(2, 3);
        s.set(1, 2, 4.0);
        s.row_mut(0)[1] = 2.0;
        assert_eq!(s.get(0, 1), 2.0);
        assert_eq!(s.row(1), &[0.0, 0.0, 4.0]);
        assert!((s.path_mass(1, 0.5) - 2.0).abs() < 1e-15);
        assert!((s.norm(1.0) - 20f64.sqrt()).abs() < 1e-12);
        let r = PathSeries::from_rows(vec![vec![1.0, 2.0], vec![3.0, 4.0]]);
        assert_eq!(r.get(1, 0), 3.0);
        assert!((r.inner(&r, 0.1) - 3.0).abs() < 1e-12);
    }
}
