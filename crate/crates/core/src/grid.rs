//! Axis-aligned sampling lattices over a [`Region`].

use crate::dynamics::Region;
use crate::scalar::Scalar;
use crate::{Error, Result};

/// Tensor-product lattice. Points are enumerated with the last axis varying fastest.
#[derive(Clone, Debug, PartialEq)]
pub struct Grid<T> {
    axes: Vec<Vec<T>>,
}

/// Lattice coordinates on `[lo, hi]` with spacing `delta`, both endpoints included.
///
/// When `delta` does not divide the extent the final spacing is shorter.
pub fn axis_points<T: Scalar>(lo: T, hi: T, delta: T) -> Result<Vec<T>> {
    if !(delta > T::zero()) || !delta.is_finite() {
        return Err(Error::InvalidInput(format!("grid spacing must be positive, got {delta}")));
    }
    let extent = hi - lo;
    if delta > extent {
        return Err(Error::InvalidInput(format!("grid spacing {delta} exceeds region extent {extent}")));
    }
    let ratio = (extent / delta).to_f64_lossy();
    let steps = ratio.round();
    if (ratio - steps).abs() <= 1e-9 * ratio.max(1.0) {
        let steps = steps as usize;
        let h = extent / T::from_usize_lossy(steps);
        let mut pts: Vec<T> = (0..steps).map(|i| lo + h * T::from_usize_lossy(i)).collect();
        pts.push(hi);
        return Ok(pts);
    }
    let steps = ratio.floor() as usize;
    let mut pts: Vec<T> = (0..=steps).map(|i| lo + delta * T::from_usize_lossy(i)).collect();
    pts.push(hi);
    Ok(pts)
}

impl<T: Scalar> Grid<T> {
    pub fn new(region: &Region<T>, delta: T) -> Result<Self> {
        let axes = region.bounds().iter().map(|&(lo, hi)| axis_points(lo, hi, delta)).collect::<Result<_>>()?;
        Ok(Self { axes })
    }

    pub fn from_axes(axes: Vec<Vec<T>>) -> Result<Self> {
        if axes.is_empty() || axes.iter().any(Vec::is_empty) {
            return Err(Error::InvalidInput("grid axes must be non-empty".into()));
        }
        Ok(Self { axes })
    }

    pub fn dim(&self) -> usize {
        self.axes.len()
    }

    pub fn axes(&self) -> &[Vec<T>] {
        &self.axes
    }

    pub fn shape(&self) -> Vec<usize> {
        self.axes.iter().map(Vec::len).collect()
    }

    pub fn len(&self) -> usize {
        self.axes.iter().map(Vec::len).product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Writes point `index` into `out`.
    pub fn point_into(&self, mut index: usize, out: &mut [T]) {
        for (d, axis) in self.axes.iter().enumerate().rev() {
            out[d] = axis[index % axis.len()];
            index /= axis.len();
        }
    }

    pub fn point(&self, index: usize) -> Vec<T> {
        let mut out = vec![T::zero(); self.dim()];
        self.point_into(index, &mut out);
        out
    }

    /// Points `start..end` as a row-major block.
    pub fn points_range(&self, start: usize, end: usize) -> Vec<T> {
        let n = self.dim();
        let mut out = vec![T::zero(); (end - start) * n];
        for (row, idx) in (start..end).enumerate() {
            self.point_into(idx, &mut out[row * n..(row + 1) * n]);
        }
        out
    }

    /// All points as a row-major `len × dim` block.
    pub fn points(&self) -> Vec<T> {
        self.points_range(0, self.len())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pendulum_learning_grid_count() {
        let region = Region::symmetric(2, 4.0).unwrap();
        let grid = Grid::<f64>::new(&region, 2e-2).unwrap();
        assert_eq!(grid.shape(), vec![401, 401]);
        assert_eq!(grid.len(), 160_801);
        assert_eq!(grid.axes()[0][0], -4.0);
        assert_eq!(grid.axes()[0][400], 4.0);
        assert!((grid.axes()[0][200]).abs() < 1e-15);
    }

    #[test]
    fn unit_interval_with_unit_spacing() {
        let region = Region::new(vec![(0.0, 1.0)]).unwrap();
        assert_eq!(Grid::new(&region, 1.0).unwrap().points(), vec![0.0, 1.0]);
    }

    #[test]
    fn path_following_verification_grid_count() {
        let region = Region::symmetric(2, 0.8).unwrap();
        assert_eq!(Grid::new(&region, 1e-3).unwrap().len(), 1601 * 1601);
    }

    #[test]
    fn uneven_spacing_keeps_upper_endpoint() {
        let pts = axis_points(0.0, 1.0, 0.3).unwrap();
        assert_eq!(pts.len(), 5);
        assert_eq!(*pts.last().unwrap(), 1.0);
    }

    #[test]
    fn spacing_larger_than_region_is_rejected() {
        let region = Region::new(vec![(0.0, 1.0)]).unwrap();
        assert!(Grid::new(&region, 2.0).is_err());
        assert!(Grid::new(&region, 0.0).is_err());
    }

    #[test]
    fn enumeration_runs_last_axis_fastest() {
        let grid = Grid::from_axes(vec![vec![0.0, 1.0], vec![10.0, 20.0, 30.0]]).unwrap();
        assert_eq!(grid.point(1), vec![0.0, 20.0]);
        assert_eq!(grid.point(3), vec![1.0, 10.0]);
        assert_eq!(grid.points_range(4, 6), vec![1.0, 20.0, 1.0, 30.0]);
    }
}
