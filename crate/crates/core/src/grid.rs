use crate::error::{Error, Result};

/// Uniform structured grid over a box in R^n, n in {1,2,3}.
///
/// Cells are addressed by a multi-index `[i, j, k]` (unused trailing axes are
/// fixed to zero) and stored in lexicographic order with the first axis
/// slowest. All per-cell arrays in this crate follow that order, and every
/// reduction over cells runs in that order so results do not depend on the
/// thread count.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid {
    n: usize,
    extents: [(f64, f64); 3],
    cells: [usize; 3],
    h: [f64; 3],
}

impl Grid {
    pub fn new(n: usize, extents: &[(f64, f64)], cells: &[usize]) -> Result<Grid> {
        if !(1..=3).contains(&n) {
            return Err(Error::UnsupportedDimension(n));
        }
        assert_eq!(extents.len(), n, "extents must have one entry per axis");
        assert_eq!(cells.len(), n, "cells must have one entry per axis");
        let mut e = [(0.0, 1.0); 3];
        let mut c = [1usize; 3];
        let mut h = [1.0f64; 3];
        for a in 0..n {
            let (lo, hi) = extents[a];
            if !(hi > lo) || cells[a] == 0 {
                return Err(Error::UnsupportedDimension(n));
            }
            e[a] = (lo, hi);
            c[a] = cells[a];
            h[a] = (hi - lo) / cells[a] as f64;
        }
        Ok(Grid {
            n,
            extents: e,
            cells: c,
            h,
        })
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn cells(&self) -> &[usize; 3] {
        &self.cells
    }

    pub fn extents(&self) -> &[(f64, f64); 3] {
        &self.extents
    }

    pub fn spacing(&self) -> &[f64; 3] {
        &self.h
    }

    pub fn h_max(&self) -> f64 {
        self.h[..self.n].iter().cloned().fold(0.0, f64::max)
    }

    /// Cell volume h_0 * ... * h_{n-1}.
    pub fn cell_volume(&self) -> f64 {
        self.h[..self.n].iter().product()
    }

    pub fn total_cells(&self) -> usize {
        self.cells.iter().product()
    }

    #[inline]
    pub fn linear(&self, idx: [usize; 3]) -> usize {
        (idx[0] * self.cells[1] + idx[1]) * self.cells[2] + idx[2]
    }

    #[inline]
    pub fn multi(&self, lin: usize) -> [usize; 3] {
        let k = lin % self.cells[2];
        let rest = lin / self.cells[2];
        let j = rest % self.cells[1];
        let i = rest / self.cells[1];
        [i, j, k]
    }

    /// Coordinates of the cell center.
    #[inline]
    pub fn center(&self, idx: [usize; 3]) -> [f64; 3] {
        let mut p = [0.0; 3];
        for a in 0..self.n {
            p[a] = self.extents[a].0 + (idx[a] as f64 + 0.5) * self.h[a];
        }
        p
    }

    /// Linear index of the neighbor `idx +- e_axis`, or None at the grid edge.
    #[inline]
    pub fn neighbor(&self, idx: [usize; 3], axis: usize, dir: i32) -> Option<usize> {
        let mut m = idx;
        if dir > 0 {
            if m[axis] + 1 >= self.cells[axis] {
                return None;
            }
            m[axis] += 1;
        } else {
            if m[axis] == 0 {
                return None;
            }
            m[axis] -= 1;
        }
        Some(self.linear(m))
    }

    /// Iterate all cells in lexicographic order as (linear, multi-index).
    pub fn iter_cells(&self) -> impl Iterator<Item = (usize, [usize; 3])> + '_ {
        (0..self.total_cells()).map(move |l| (l, self.multi(l)))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn indexing_round_trip() {
        let g = Grid::new(3, &[(-1.0, 1.0), (-1.0, 1.0), (0.0, 2.0)], &[4, 5, 6]).unwrap();
        for l in 0..g.total_cells() {
            assert_eq!(g.linear(g.multi(l)), l);
        }
        assert_eq!(g.total_cells(), 120);
    }

    #[test]
    fn spacing_and_centers() {
        let g = Grid::new(1, &[(0.0, 1.0)], &[4]).unwrap();
        assert!((g.spacing()[0] - 0.25).abs() < 1e-15);
        assert!((g.center([0, 0, 0])[0] - 0.125).abs() < 1e-15);
        assert!((g.center([3, 0, 0])[0] - 0.875).abs() < 1e-15);
    }

    #[test]
    fn rejects_bad_dimension() {
        assert!(matches!(
            Grid::new(4, &[(0.0, 1.0); 4], &[2; 4]),
            Err(Error::UnsupportedDimension(4))
        ));
    }
}
