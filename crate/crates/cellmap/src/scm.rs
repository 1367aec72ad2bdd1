//! Simple cell mapping: one image cell per cell.
//!
//! The map is built by stepping each cell's center point once and locating
//! the cell its image falls in. Unraveling then classifies every cell as a
//! member of a periodic group, attracted to one in a known number of steps,
//! or bound for the sink.

use crate::artifacts::CellGrid;
use crate::cellspace::{CellIndex, CellSpace};
use crate::{Error, Result};
use rayon::prelude::*;

/// Single-image transition map over the regular cells.
#[derive(Debug, Clone, PartialEq)]
pub struct TransitionMap {
    pub image: Vec<CellIndex>,
}

impl TransitionMap {
    pub fn len(&self) -> usize {
        self.image.len()
    }

    pub fn is_empty(&self) -> bool {
        self.image.is_empty()
    }
}

/// Build the map by evaluating `step` at every cell center. A step error or
/// non-finite output sends that cell to the sink; it is recorded in the map
/// rather than failing the build.
pub fn build_scm<F>(step: F, cs: &CellSpace) -> TransitionMap
where
    F: Fn(&[f64]) -> Result<Vec<f64>> + Sync,
{
    let image = (0..cs.total())
        .into_par_iter()
        .map(|c| {
            let center = cs.center_of_flat(c);
            match step(&center) {
                Ok(next) => cs.cell_of(&next).unwrap_or(CellIndex::Sink),
                Err(_) => CellIndex::Sink,
            }
        })
        .collect();
    TransitionMap { image }
}

/// A cycle of cells under the map.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PeriodicGroup {
    pub period: usize,
    /// Cells in orbit order.
    pub cells: Vec<usize>,
}

/// Complete classification of the regular cells.
///
/// `group_id[c]` is 0 for sink-bound cells and `g >= 1` for members and
/// attractees of `groups[g - 1]`. `steps_to_group[c]` counts transitions to
/// the first periodic cell (or to the sink itself); it is 0 exactly on
/// periodic cells.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct UnravelResult {
    pub group_id: Vec<usize>,
    pub steps_to_group: Vec<usize>,
    pub groups: Vec<PeriodicGroup>,
}

impl UnravelResult {
    pub fn is_periodic(&self, cell: usize) -> bool {
        self.group_id[cell] != 0 && self.steps_to_group[cell] == 0
    }

    pub fn is_sink_bound(&self, cell: usize) -> bool {
        self.group_id[cell] == 0
    }
}

const UNRESOLVED: usize = usize::MAX;

/// Classify every cell by following orbits once, iteratively.
///
/// Each cell is visited O(1) times: an orbit walk stops as soon as it hits a
/// resolved cell, the sink, or itself (a new periodic group), and the walked
/// path is then resolved in reverse.
pub fn unravel(tm: &TransitionMap) -> UnravelResult {
    let n = tm.image.len();
    let mut group_id = vec![UNRESOLVED; n];
    let mut steps = vec![0usize; n];
    let mut groups: Vec<PeriodicGroup> = Vec::new();
    // position of a cell on the currently walked path, or UNRESOLVED
    let mut path_pos = vec![UNRESOLVED; n];
    let mut path: Vec<usize> = Vec::new();

    for start in 0..n {
        if group_id[start] != UNRESOLVED {
            continue;
        }
        path.clear();
        let mut cur = start;
        // (group, steps at the cell the path ran into)
        let (hit_group, hit_steps, resolve_upto) = loop {
            if group_id[cur] != UNRESOLVED {
                break (group_id[cur], steps[cur], path.len());
            }
            if path_pos[cur] != UNRESOLVED {
                // the path closed on itself: cells from the first occurrence
                // onward form a new periodic group
                let cycle_start = path_pos[cur];
                let cells: Vec<usize> = path[cycle_start..].to_vec();
                let gid = groups.len() + 1;
                for &c in &cells {
                    group_id[c] = gid;
                    steps[c] = 0;
                }
                groups.push(PeriodicGroup { period: cells.len(), cells });
                break (gid, 0, cycle_start);
            }
            path_pos[cur] = path.len();
            path.push(cur);
            match tm.image[cur] {
                CellIndex::Regular(next) => cur = next,
                CellIndex::Sink => break (0, 0, path.len()),
            }
        };
        for (dist, &c) in path[..resolve_upto].iter().rev().enumerate() {
            group_id[c] = hit_group;
            steps[c] = hit_steps + dist + 1;
        }
        for &c in &path {
            path_pos[c] = UNRESOLVED;
        }
    }

    UnravelResult { group_id, steps_to_group: steps, groups }
}

/// Cells attracted to the given periodic group within `r` transitions
/// (including the group itself), sorted.
pub fn domain_of_attraction(ur: &UnravelResult, group: usize, r: usize) -> Result<Vec<usize>> {
    if group == 0 || group > ur.groups.len() {
        return Err(Error::OutOfRange(format!(
            "group {group} does not exist (have {})",
            ur.groups.len()
        )));
    }
    Ok((0..ur.group_id.len())
        .filter(|&c| ur.group_id[c] == group && ur.steps_to_group[c] <= r)
        .collect())
}

/// Per-cell classification grid: `P` for periodic cells, `A<k>` for cells
/// attracted in `k` steps, `S` for sink-bound cells.
pub fn scm_grid_report(ur: &UnravelResult, cs: &CellSpace) -> Result<CellGrid> {
    if ur.group_id.len() != cs.total() {
        return Err(Error::DimensionMismatch { expected: cs.total(), got: ur.group_id.len() });
    }
    let mut labels = Vec::with_capacity(cs.total());
    let mut grays = Vec::with_capacity(cs.total());
    for c in 0..cs.total() {
        if ur.is_sink_bound(c) {
            labels.push("S".to_string());
            grays.push(0u8);
        } else if ur.is_periodic(c) {
            labels.push("P".to_string());
            grays.push(255u8);
        } else {
            labels.push(format!("A{}", ur.steps_to_group[c]));
            grays.push(128u8);
        }
    }
    CellGrid::new(cs, labels, grays)
}
