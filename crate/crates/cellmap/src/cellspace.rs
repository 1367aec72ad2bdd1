//! Uniform cell partition of a state-space box.
//!
//! Each axis is split into equally wide half-open cells `[left, right)`,
//! with the top edge of the box closed so every in-box point belongs to
//! exactly one cell. Everything outside the box is lumped into one absorbing
//! sink cell. Regular cells are addressed either by an integer tuple (one
//! coordinate per axis) or by a row-major flat index with axis 0 most
//! significant.

use crate::{Error, Result};

/// One axis of the partition.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AxisSpec {
    pub lo: f64,
    pub hi: f64,
    pub cells: usize,
}

impl AxisSpec {
    pub fn new(lo: f64, hi: f64, cells: usize) -> Result<Self> {
        if !lo.is_finite() || !hi.is_finite() {
            return Err(Error::NonFinite);
        }
        if lo >= hi {
            return Err(Error::InvalidParameter(format!(
                "axis range [{lo}, {hi}] must have lo < hi"
            )));
        }
        if cells == 0 {
            return Err(Error::InvalidParameter("axis needs at least one cell".into()));
        }
        Ok(Self { lo, hi, cells })
    }

    /// `2^bits` cells, the partition induced by a word length.
    pub fn with_bits(lo: f64, hi: f64, bits: u32) -> Result<Self> {
        if bits == 0 || bits > 32 {
            return Err(Error::InvalidParameter(format!("word length must be 1..=32, got {bits}")));
        }
        Self::new(lo, hi, 1usize << bits)
    }

    pub fn width(&self) -> f64 {
        (self.hi - self.lo) / self.cells as f64
    }
}

/// A regular cell or the sink.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum CellIndex {
    Regular(usize),
    Sink,
}

impl CellIndex {
    pub fn is_sink(&self) -> bool {
        matches!(self, CellIndex::Sink)
    }

    pub fn regular(&self) -> Option<usize> {
        match self {
            CellIndex::Regular(c) => Some(*c),
            CellIndex::Sink => None,
        }
    }
}

/// The full n-dimensional partition.
#[derive(Debug, Clone, PartialEq)]
pub struct CellSpace {
    axes: Vec<AxisSpec>,
    total: usize,
}

impl CellSpace {
    pub fn new(axes: Vec<AxisSpec>) -> Result<Self> {
        if axes.is_empty() {
            return Err(Error::InvalidParameter("cell space needs at least one axis".into()));
        }
        let mut total = 1usize;
        for ax in &axes {
            total = total.checked_mul(ax.cells).ok_or_else(|| {
                Error::InvalidParameter("cell count overflows usize".into())
            })?;
        }
        Ok(Self { axes, total })
    }

    pub fn dim(&self) -> usize {
        self.axes.len()
    }

    pub fn total(&self) -> usize {
        self.total
    }

    pub fn axes(&self) -> &[AxisSpec] {
        &self.axes
    }

    fn check_dim(&self, got: usize) -> Result<()> {
        if got != self.axes.len() {
            return Err(Error::DimensionMismatch { expected: self.axes.len(), got });
        }
        Ok(())
    }

    /// Cell containing a point; anything outside the box is the sink.
    pub fn cell_of(&self, x: &[f64]) -> Result<CellIndex> {
        self.check_dim(x.len())?;
        let mut flat = 0usize;
        for (xi, ax) in x.iter().zip(&self.axes) {
            if !xi.is_finite() {
                return Err(Error::NonFinite);
            }
            if *xi < ax.lo || *xi > ax.hi {
                return Ok(CellIndex::Sink);
            }
            // half-open cells, closed top edge
            let zi = (((xi - ax.lo) / ax.width()).floor() as usize).min(ax.cells - 1);
            flat = flat * ax.cells + zi;
        }
        Ok(CellIndex::Regular(flat))
    }

    /// Center point of a regular cell.
    pub fn center_of(&self, c: CellIndex) -> Result<Vec<f64>> {
        match c {
            CellIndex::Sink => Err(Error::SinkCell),
            CellIndex::Regular(flat) => {
                let tuple = self.tuple_of(flat)?;
                Ok(tuple
                    .iter()
                    .zip(&self.axes)
                    .map(|(&zi, ax)| ax.lo + (zi as f64 + 0.5) * ax.width())
                    .collect())
            }
        }
    }

    /// Center of a flat index known to be valid. Panics on out-of-range input.
    pub fn center_of_flat(&self, flat: usize) -> Vec<f64> {
        self.center_of(CellIndex::Regular(flat)).expect("valid flat index")
    }

    /// Row-major flat index of a coordinate tuple, axis 0 most significant.
    pub fn flat_index(&self, tuple: &[usize]) -> Result<usize> {
        self.check_dim(tuple.len())?;
        let mut flat = 0usize;
        for (&zi, ax) in tuple.iter().zip(&self.axes) {
            if zi >= ax.cells {
                return Err(Error::OutOfRange(format!(
                    "tuple component {zi} exceeds axis cell count {}",
                    ax.cells
                )));
            }
            flat = flat * ax.cells + zi;
        }
        Ok(flat)
    }

    /// Coordinate tuple of a flat index.
    pub fn tuple_of(&self, flat: usize) -> Result<Vec<usize>> {
        if flat >= self.total {
            return Err(Error::OutOfRange(format!(
                "flat index {flat} exceeds total cell count {}",
                self.total
            )));
        }
        let mut tuple = vec![0usize; self.axes.len()];
        let mut rest = flat;
        for (slot, ax) in tuple.iter_mut().zip(&self.axes).rev() {
            *slot = rest % ax.cells;
            rest /= ax.cells;
        }
        Ok(tuple)
    }

    /// Regular cell whose center is nearest the point, per axis, with ties
    /// (point exactly between two centers) resolved toward the lower index.
    /// Points outside the box clamp to the edge cells.
    pub fn nearest_cell(&self, point: &[f64]) -> Result<usize> {
        self.check_dim(point.len())?;
        let mut flat = 0usize;
        for (pi, ax) in point.iter().zip(&self.axes) {
            if !pi.is_finite() {
                return Err(Error::NonFinite);
            }
            // real-valued index of the nearest center, ties rounded down
            let s = (pi - ax.lo) / ax.width() - 0.5;
            let zi = (s - 0.5).ceil().max(0.0) as usize;
            flat = flat * ax.cells + zi.min(ax.cells - 1);
        }
        Ok(flat)
    }

    /// The box scaled about its center, as per-axis `(lo, hi)` pairs. Used
    /// for guard boxes around the analysis region.
    pub fn scaled_box(&self, factor: f64) -> Vec<(f64, f64)> {
        self.axes
            .iter()
            .map(|ax| {
                let mid = 0.5 * (ax.lo + ax.hi);
                let half = 0.5 * (ax.hi - ax.lo) * factor;
                (mid - half, mid + half)
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit_1d(cells: usize) -> CellSpace {
        CellSpace::new(vec![AxisSpec::new(0.0, 1.0, cells).unwrap()]).unwrap()
    }

    #[test]
    fn cell_of_interval_membership() {
        let cs = unit_1d(8);
        assert_eq!(cs.cell_of(&[0.87]).unwrap(), CellIndex::Regular(6));
        assert_eq!(cs.cell_of(&[1.2]).unwrap(), CellIndex::Sink);
        assert_eq!(cs.cell_of(&[-0.001]).unwrap(), CellIndex::Sink);
        // closed top edge belongs to the last cell
        assert_eq!(cs.cell_of(&[1.0]).unwrap(), CellIndex::Regular(7));
        assert!(matches!(cs.cell_of(&[f64::NAN]), Err(Error::NonFinite)));
    }

    #[test]
    fn cell_of_2d_corner() {
        let cs = CellSpace::new(vec![
            AxisSpec::with_bits(-1.0, 1.0, 4).unwrap(),
            AxisSpec::with_bits(-1.0, 1.0, 4).unwrap(),
        ])
        .unwrap();
        assert_eq!(cs.cell_of(&[-1.0, -1.0]).unwrap(), CellIndex::Regular(0));
        // tuple (8, 8) is the cell with centers at +width/2
        assert_eq!(
            cs.center_of(CellIndex::Regular(cs.flat_index(&[8, 8]).unwrap())).unwrap(),
            vec![0.0625, 0.0625]
        );
    }

    #[test]
    fn centers() {
        let cs = unit_1d(8);
        assert_eq!(cs.center_of(CellIndex::Regular(0)).unwrap(), vec![0.0625]);
        assert_eq!(cs.center_of(CellIndex::Regular(7)).unwrap(), vec![0.9375]);
        assert!(matches!(cs.center_of(CellIndex::Sink), Err(Error::SinkCell)));
    }

    #[test]
    fn flat_index_round_trip() {
        let cs = CellSpace::new(vec![
            AxisSpec::new(0.0, 1.0, 16).unwrap(),
            AxisSpec::new(0.0, 1.0, 16).unwrap(),
        ])
        .unwrap();
        assert_eq!(cs.flat_index(&[1, 8]).unwrap(), 24);
        assert_eq!(cs.tuple_of(0).unwrap(), vec![0, 0]);
        for flat in 0..cs.total() {
            assert_eq!(cs.flat_index(&cs.tuple_of(flat).unwrap()).unwrap(), flat);
        }
        assert!(cs.flat_index(&[16, 0]).is_err());
        assert!(cs.tuple_of(256).is_err());
    }

    #[test]
    fn centers_map_back_to_their_cell() {
        let cs = CellSpace::new(vec![
            AxisSpec::new(-1.0, 1.0, 7).unwrap(),
            AxisSpec::new(0.0, 2.5, 5).unwrap(),
        ])
        .unwrap();
        for flat in 0..cs.total() {
            let center = cs.center_of_flat(flat);
            assert_eq!(cs.cell_of(&center).unwrap(), CellIndex::Regular(flat));
        }
    }

    #[test]
    fn nearest_cell_tie_breaks_down() {
        // 32 cells over [-1, 1]: the origin is a shared corner, equidistant
        // from the centers of cells 15 and 16; the tie resolves to 15.
        let cs = CellSpace::new(vec![AxisSpec::with_bits(-1.0, 1.0, 5).unwrap()]).unwrap();
        assert_eq!(cs.nearest_cell(&[0.0]).unwrap(), 15);
        assert_eq!(cs.nearest_cell(&[0.04]).unwrap(), 16);
        assert_eq!(cs.nearest_cell(&[-5.0]).unwrap(), 0);
        assert_eq!(cs.nearest_cell(&[5.0]).unwrap(), 31);
    }

    #[test]
    fn scaled_box() {
        let cs = CellSpace::new(vec![AxisSpec::new(-1.0, 1.0, 4).unwrap()]).unwrap();
        assert_eq!(cs.scaled_box(10.0), vec![(-10.0, 10.0)]);
    }

    #[test]
    fn rejects_bad_axes() {
        assert!(AxisSpec::new(1.0, 0.0, 4).is_err());
        assert!(AxisSpec::new(0.0, 0.0, 4).is_err());
        assert!(AxisSpec::new(0.0, 1.0, 0).is_err());
        assert!(AxisSpec::with_bits(0.0, 1.0, 0).is_err());
        assert!(CellSpace::new(vec![]).is_err());
    }
}
