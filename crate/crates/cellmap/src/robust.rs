//! Trajectory-free robustness measures over parameter sweeps.
//!
//! Two measures of how much a plant perturbation changes the cell-level
//! picture: the number of cells whose transition image moved (against a
//! baseline map), and the number of controllable cells that remain.

use crate::cellspace::CellSpace;
use crate::reach::{build_controlled_table, controllable_regions, ControlSet};
use crate::scm::{build_scm, TransitionMap};
use crate::{Error, Result};

/// Hamming distance between two transition maps of equal length; the sink
/// counts as an ordinary image value.
pub fn modified_cell_count(a: &TransitionMap, b: &TransitionMap) -> Result<usize> {
    if a.len() != b.len() {
        return Err(Error::DimensionMismatch { expected: a.len(), got: b.len() });
    }
    Ok(a.image.iter().zip(&b.image).filter(|(x, y)| x != y).count())
}

/// One sweep sample: the metric at a parameter value, as a raw count and as
/// a percentage of the total cell count.
#[derive(Debug, Clone, PartialEq)]
pub struct CurvePoint {
    pub param: f64,
    pub count: usize,
    pub percent: f64,
}

/// Sweep a parameter and count modified cells against the map at
/// `baseline`. The factory builds the autonomous step function for each
/// parameter value.
pub fn sweep_modified_cells<F, G>(
    values: &[f64],
    baseline: f64,
    factory: F,
    cs: &CellSpace,
) -> Result<Vec<CurvePoint>>
where
    F: Fn(f64) -> G,
    G: Fn(&[f64]) -> Result<Vec<f64>> + Sync,
{
    if values.is_empty() {
        return Err(Error::InvalidParameter("sweep needs at least one value".into()));
    }
    let base_map = build_scm(factory(baseline), cs);
    let total = cs.total() as f64;
    values
        .iter()
        .map(|&v| {
            let map = build_scm(factory(v), cs);
            let count = modified_cell_count(&base_map, &map)?;
            Ok(CurvePoint { param: v, count, percent: 100.0 * count as f64 / total })
        })
        .collect()
}

/// Sweep a parameter and count controllable cells for each perturbed plant
/// under a fixed control set and target.
pub fn sweep_controllable_cells<F, G>(
    values: &[f64],
    factory: F,
    cs: &CellSpace,
    controls: &ControlSet,
    target: &[usize],
) -> Result<Vec<CurvePoint>>
where
    F: Fn(f64) -> G,
    G: Fn(&[f64], &[f64]) -> Result<Vec<f64>> + Sync,
{
    if values.is_empty() {
        return Err(Error::InvalidParameter("sweep needs at least one value".into()));
    }
    let total = cs.total() as f64;
    values
        .iter()
        .map(|&v| {
            let table = build_controlled_table(factory(v), cs, controls);
            let result = controllable_regions(&table, target)?;
            let count = result.controllable_count();
            Ok(CurvePoint { param: v, count, percent: 100.0 * count as f64 / total })
        })
        .collect()
}
