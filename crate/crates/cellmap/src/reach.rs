//! Controllable-region computation over the quantized state/control lattice.
//!
//! A controlled transition table records the image cell of every (cell,
//! control) pair. Layered backward search from a target set then yields, for
//! every cell, whether some admissible control sequence reaches the target,
//! in how many steps at minimum, and a control witnessing the first step of
//! such a sequence.

use crate::artifacts::CellGrid;
use crate::cellspace::{CellIndex, CellSpace};
use crate::{Error, Result};
use rayon::prelude::*;

/// The finite set of admissible control vectors, typically the D/A lattice.
#[derive(Debug, Clone, PartialEq)]
pub struct ControlSet {
    values: Vec<Vec<f64>>,
    input_dim: usize,
}

impl ControlSet {
    pub fn new(values: Vec<Vec<f64>>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::InvalidParameter("control set must be nonempty".into()));
        }
        let input_dim = values[0].len();
        if input_dim == 0 {
            return Err(Error::InvalidParameter("control vectors must be nonempty".into()));
        }
        for v in &values {
            if v.len() != input_dim {
                return Err(Error::DimensionMismatch { expected: input_dim, got: v.len() });
            }
            if v.iter().any(|c| !c.is_finite()) {
                return Err(Error::NonFinite);
            }
        }
        Ok(Self { values, input_dim })
    }

    /// Scalar control values.
    pub fn scalars(values: &[f64]) -> Result<Self> {
        Self::new(values.iter().map(|&v| vec![v]).collect())
    }

    /// The `2^bits` scalar levels a D/A over `[lo, hi)` can produce:
    /// `lo + j·(hi - lo)/2^bits` for `j = 0 .. 2^bits - 1`.
    pub fn da_lattice(bits: u32, lo: f64, hi: f64) -> Result<Self> {
        if bits == 0 || bits > 24 {
            return Err(Error::InvalidParameter(format!("word length must be 1..=24, got {bits}")));
        }
        if !(lo < hi) || !lo.is_finite() || !hi.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "control range [{lo}, {hi}] must have lo < hi"
            )));
        }
        let n = 1usize << bits;
        let delta = (hi - lo) / n as f64;
        Self::scalars(&(0..n).map(|j| lo + j as f64 * delta).collect::<Vec<_>>())
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn value(&self, index: usize) -> &[f64] {
        &self.values[index]
    }

    pub fn values(&self) -> &[Vec<f64>] {
        &self.values
    }

    /// Index of the control with the smallest norm (lowest index on ties);
    /// the natural hold control once a trajectory parks on its target.
    pub fn nearest_to_zero_index(&self) -> usize {
        let norm = |v: &[f64]| v.iter().map(|c| c * c).sum::<f64>();
        (0..self.values.len())
            .min_by(|&a, &b| norm(&self.values[a]).total_cmp(&norm(&self.values[b])))
            .expect("nonempty")
    }
}

/// Image cell of every (cell, control) pair.
#[derive(Debug, Clone, PartialEq)]
pub struct ControlledTransitionTable {
    image: Vec<CellIndex>,
    n_cells: usize,
    n_controls: usize,
}

impl ControlledTransitionTable {
    pub fn n_cells(&self) -> usize {
        self.n_cells
    }

    pub fn n_controls(&self) -> usize {
        self.n_controls
    }

    pub fn image(&self, cell: usize, control: usize) -> CellIndex {
        self.image[cell * self.n_controls + control]
    }
}

/// Evaluate `step` at every cell center under every control.
pub fn build_controlled_table<F>(
    step: F,
    cs: &CellSpace,
    controls: &ControlSet,
) -> ControlledTransitionTable
where
    F: Fn(&[f64], &[f64]) -> Result<Vec<f64>> + Sync,
{
    let n_controls = controls.len();
    let image: Vec<CellIndex> = (0..cs.total() * n_controls)
        .into_par_iter()
        .map(|slot| {
            let cell = slot / n_controls;
            let u = controls.value(slot % n_controls);
            let center = cs.center_of_flat(cell);
            match step(&center, u) {
                Ok(next) => cs.cell_of(&next).unwrap_or(CellIndex::Sink),
                Err(_) => CellIndex::Sink,
            }
        })
        .collect();
    ControlledTransitionTable { image, n_cells: cs.total(), n_controls }
}

/// Outcome of the layered backward search.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ControllabilityResult {
    /// Fewest transitions to the target set, `None` if unreachable.
    pub min_steps: Vec<Option<usize>>,
    /// For each controllable non-target cell, the lowest-index control
    /// whose image strictly decreases `min_steps`.
    pub witness: Vec<Option<usize>>,
    /// The target set the search ran against, sorted.
    pub target: Vec<usize>,
}

impl ControllabilityResult {
    pub fn is_controllable(&self, cell: usize) -> bool {
        self.min_steps[cell].is_some()
    }

    pub fn controllable_count(&self) -> usize {
        self.min_steps.iter().filter(|s| s.is_some()).count()
    }
}

/// Layered backward search: layer `k+1` holds the cells outside earlier
/// layers that some control maps into them. Terminates when a layer comes
/// up empty.
pub fn controllable_regions(
    table: &ControlledTransitionTable,
    target: &[usize],
) -> Result<ControllabilityResult> {
    if target.is_empty() {
        return Err(Error::EmptyTarget);
    }
    let n = table.n_cells;
    let nu = table.n_controls;
    let mut sorted_target = target.to_vec();
    sorted_target.sort_unstable();
    sorted_target.dedup();
    if let Some(&bad) = sorted_target.iter().find(|&&c| c >= n) {
        return Err(Error::OutOfRange(format!("target cell {bad} exceeds cell count {n}")));
    }

    // reverse adjacency
    let mut preds: Vec<Vec<u32>> = vec![Vec::new(); n];
    for cell in 0..n {
        for j in 0..nu {
            if let CellIndex::Regular(t) = table.image(cell, j) {
                preds[t].push(cell as u32);
            }
        }
    }

    let mut min_steps: Vec<Option<usize>> = vec![None; n];
    let mut witness: Vec<Option<usize>> = vec![None; n];
    let mut found = vec![false; n];
    for &t in &sorted_target {
        min_steps[t] = Some(0);
        found[t] = true;
    }
    let mut frontier = sorted_target.clone();
    let mut layer = 0usize;
    let mut queued = vec![false; n];
    while !frontier.is_empty() {
        layer += 1;
        let mut candidates: Vec<usize> = Vec::new();
        for &t in &frontier {
            for &c in &preds[t] {
                let c = c as usize;
                if !found[c] && !queued[c] {
                    queued[c] = true;
                    candidates.push(c);
                }
            }
        }
        candidates.sort_unstable();
        let mut next = Vec::with_capacity(candidates.len());
        for &c in &candidates {
            queued[c] = false;
            // lowest control index whose image was found in an earlier layer
            let w = (0..nu).find(|&j| {
                table.image(c, j).regular().map_or(false, |t| found[t])
            });
            if let Some(j) = w {
                min_steps[c] = Some(layer);
                witness[c] = Some(j);
                next.push(c);
            }
        }
        for &c in &next {
            found[c] = true;
        }
        frontier = next;
    }

    Ok(ControllabilityResult { min_steps, witness, target: sorted_target })
}

/// Per-cell grid: `T` target, `C` controllable, `U` uncontrollable.
pub fn region_grid_report(result: &ControllabilityResult, cs: &CellSpace) -> Result<CellGrid> {
    if result.min_steps.len() != cs.total() {
        return Err(Error::DimensionMismatch { expected: cs.total(), got: result.min_steps.len() });
    }
    let mut labels = Vec::with_capacity(cs.total());
    let mut grays = Vec::with_capacity(cs.total());
    for c in 0..cs.total() {
        match result.min_steps[c] {
            Some(0) => {
                labels.push("T".to_string());
                grays.push(255u8);
            }
            Some(_) => {
                labels.push("C".to_string());
                grays.push(170u8);
            }
            None => {
                labels.push("U".to_string());
                grays.push(0u8);
            }
        }
    }
    CellGrid::new(cs, labels, grays)
}
