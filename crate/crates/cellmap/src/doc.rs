//! Discrete optimal control tables.
//!
//! Dynamic programming over the (cell × control) graph assigns every
//! controllable cell the control that starts a minimum-cost trajectory to
//! the target set. The search is label-correcting over the reversed graph
//! with a priority queue, which is exact for nonnegative stage costs and
//! visits the finite graph once. Sink transitions are never admissible
//! moves, and cells with no path to the target stay unassigned.

use crate::cellspace::{CellIndex, CellSpace};
use crate::models::{CostSpec, Plant};
use crate::reach::{build_controlled_table, ControlSet, ControlledTransitionTable};
use crate::{Error, Result};
use std::cmp::Reverse;
use std::collections::BinaryHeap;
use std::fmt;

/// Per-cell optimal control, cost-to-target, and step count, with the
/// problem data it was synthesized against.
#[derive(Debug, Clone, PartialEq)]
pub struct DocTable {
    /// Control index into the control set, `None` on target and
    /// uncontrollable cells.
    pub control_index: Vec<Option<usize>>,
    /// Accumulated optimal cost; infinite on uncontrollable cells.
    pub value: Vec<f64>,
    /// Transitions along the optimal trajectory; 0 on target cells and
    /// `usize::MAX` on uncontrollable ones.
    pub steps: Vec<usize>,
    pub cellspace: CellSpace,
    pub controls: ControlSet,
    pub cost: CostSpec,
    pub period: f64,
    /// Sorted target cells.
    pub target: Vec<usize>,
}

impl DocTable {
    pub fn is_controllable(&self, cell: usize) -> bool {
        self.value[cell].is_finite()
    }

    pub fn controllable_count(&self) -> usize {
        self.value.iter().filter(|v| v.is_finite()).count()
    }
}

/// Stage cost of applying control `u` from (the center of) cell `c`.
pub fn stage_cost(
    cs: &CellSpace,
    c: CellIndex,
    u: &[f64],
    spec: &CostSpec,
    period: f64,
) -> Result<f64> {
    let center = cs.center_of(c)?;
    Ok(spec.stage_cost(&center, u, period))
}

#[derive(PartialEq)]
struct HeapEntry {
    cost: f64,
    cell: usize,
}

impl Eq for HeapEntry {}

impl PartialOrd for HeapEntry {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for HeapEntry {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.cost.total_cmp(&other.cost).then(self.cell.cmp(&other.cell))
    }
}

/// Build the controlled transition table for `step` and synthesize the
/// optimal table; see [`synthesize_doc_from_table`].
pub fn synthesize_doc<F>(
    step: F,
    cs: &CellSpace,
    controls: &ControlSet,
    cost: &CostSpec,
    period: f64,
    target: &[usize],
) -> Result<DocTable>
where
    F: Fn(&[f64], &[f64]) -> Result<Vec<f64>> + Sync,
{
    let table = build_controlled_table(step, cs, controls);
    synthesize_doc_from_table(&table, cs, controls, cost, period, target)
}

/// Backward dynamic programming over an existing transition table.
///
/// Control ties at equal cost resolve to the lowest control index.
pub fn synthesize_doc_from_table(
    table: &ControlledTransitionTable,
    cs: &CellSpace,
    controls: &ControlSet,
    cost: &CostSpec,
    period: f64,
    target: &[usize],
) -> Result<DocTable> {
    if target.is_empty() {
        return Err(Error::EmptyTarget);
    }
    let n = table.n_cells();
    let nu = table.n_controls();
    if n != cs.total() {
        return Err(Error::DimensionMismatch { expected: cs.total(), got: n });
    }
    if nu != controls.len() {
        return Err(Error::DimensionMismatch { expected: controls.len(), got: nu });
    }
    let mut sorted_target = target.to_vec();
    sorted_target.sort_unstable();
    sorted_target.dedup();
    if let Some(&bad) = sorted_target.iter().find(|&&c| c >= n) {
        return Err(Error::OutOfRange(format!("target cell {bad} exceeds cell count {n}")));
    }

    // reversed edges, and each source's stage costs per control
    let mut preds: Vec<Vec<(u32, u16)>> = vec![Vec::new(); n];
    for cell in 0..n {
        for j in 0..nu {
            if let CellIndex::Regular(t) = table.image(cell, j) {
                preds[t].push((cell as u32, j as u16));
            }
        }
    }

    let mut value = vec![f64::INFINITY; n];
    let mut control_index: Vec<Option<usize>> = vec![None; n];
    let mut steps = vec![usize::MAX; n];
    let mut heap: BinaryHeap<Reverse<HeapEntry>> = BinaryHeap::new();
    for &t in &sorted_target {
        value[t] = 0.0;
        steps[t] = 0;
        heap.push(Reverse(HeapEntry { cost: 0.0, cell: t }));
    }
    let is_target = {
        let mut mask = vec![false; n];
        for &t in &sorted_target {
            mask[t] = true;
        }
        mask
    };

    while let Some(Reverse(HeapEntry { cost: popped, cell: t })) = heap.pop() {
        if popped > value[t] {
            continue; // stale entry
        }
        for &(c, j) in &preds[t] {
            let (c, j) = (c as usize, j as usize);
            if is_target[c] {
                continue;
            }
            let center = cs.center_of_flat(c);
            let stage = cost.stage_cost(&center, controls.value(j), period);
            let candidate = value[t] + stage;
            if candidate < value[c] {
                value[c] = candidate;
                control_index[c] = Some(j);
                steps[c] = steps[t] + 1;
                heap.push(Reverse(HeapEntry { cost: candidate, cell: c }));
            } else if candidate == value[c] && control_index[c].map_or(false, |cur| j < cur) {
                control_index[c] = Some(j);
                steps[c] = steps[t] + 1;
            }
        }
    }

    Ok(DocTable {
        control_index,
        value,
        steps,
        cellspace: cs.clone(),
        controls: controls.clone(),
        cost: *cost,
        period,
        target: sorted_target,
    })
}

/// Largest Bellman violation over the controllable cells: each stored value
/// must equal the best one-step expansion under the stored successor
/// values, and the stored control must attain it.
pub fn bellman_violation(doc: &DocTable, table: &ControlledTransitionTable) -> f64 {
    let cs = &doc.cellspace;
    let mut worst = 0.0f64;
    let target: std::collections::HashSet<usize> = doc.target.iter().copied().collect();
    for c in 0..table.n_cells() {
        if !doc.is_controllable(c) || target.contains(&c) {
            continue;
        }
        let center = cs.center_of_flat(c);
        let mut best = f64::INFINITY;
        for j in 0..table.n_controls() {
            if let CellIndex::Regular(t) = table.image(c, j) {
                if doc.value[t].is_finite() {
                    let stage = doc.cost.stage_cost(&center, doc.controls.value(j), doc.period);
                    best = best.min(stage + doc.value[t]);
                }
            }
        }
        worst = worst.max((doc.value[c] - best).abs());
        // the stored control must itself attain the stored value
        let j = doc.control_index[c].expect("controllable cells carry a control");
        if let CellIndex::Regular(t) = table.image(c, j) {
            let stage = doc.cost.stage_cost(&center, doc.controls.value(j), doc.period);
            worst = worst.max((doc.value[c] - (stage + doc.value[t])).abs());
        } else {
            worst = f64::INFINITY;
        }
    }
    worst
}

/// A closed-loop run driven by table lookups.
#[derive(Debug, Clone, PartialEq)]
pub struct Playback {
    pub states: Vec<Vec<f64>>,
    pub controls: Vec<Vec<f64>>,
    /// Raw (undiscretized) cost accumulated over the executed transitions.
    pub cost: f64,
    pub reached_target: bool,
}

/// Why a playback stopped early.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum PlaybackStop {
    EnteredSink,
    UncontrollableCell(usize),
}

/// Playback failure carrying the partial trajectory up to the stop.
#[derive(Debug, Clone)]
pub struct PlaybackError {
    pub stop: PlaybackStop,
    pub partial: Playback,
}

impl fmt::Display for PlaybackError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.stop {
            PlaybackStop::EnteredSink => {
                write!(f, "playback entered the sink cell after {} steps", self.partial.controls.len())
            }
            PlaybackStop::UncontrollableCell(c) => write!(
                f,
                "playback entered uncontrollable cell {c} after {} steps",
                self.partial.controls.len()
            ),
        }
    }
}

impl std::error::Error for PlaybackError {}

/// Run the true plant under table lookups from `x0` until the state enters
/// the target set or `max_steps` transitions elapse. The cost is the raw
/// stage cost of the true states, not the cell abstraction.
pub fn playback(
    doc: &DocTable,
    plant: &Plant,
    x0: &[f64],
    max_steps: usize,
) -> std::result::Result<Playback, PlaybackError> {
    let cs = &doc.cellspace;
    let target: std::collections::HashSet<usize> = doc.target.iter().copied().collect();
    let mut states = vec![x0.to_vec()];
    let mut controls: Vec<Vec<f64>> = Vec::new();
    let mut cost = 0.0;
    let mut x = x0.to_vec();
    let fail = |stop, states: Vec<Vec<f64>>, controls: Vec<Vec<f64>>, cost| {
        Err(PlaybackError {
            stop,
            partial: Playback { states, controls, cost, reached_target: false },
        })
    };
    for _ in 0..max_steps {
        let cell = match cs.cell_of(&x) {
            Ok(CellIndex::Regular(c)) => c,
            Ok(CellIndex::Sink) | Err(_) => {
                return fail(PlaybackStop::EnteredSink, states, controls, cost)
            }
        };
        if target.contains(&cell) {
            return Ok(Playback { states, controls, cost, reached_target: true });
        }
        let Some(j) = doc.control_index[cell] else {
            return fail(PlaybackStop::UncontrollableCell(cell), states, controls, cost);
        };
        let u = doc.controls.value(j).to_vec();
        cost += doc.cost.raw_stage_cost(&x, &u, doc.period);
        x = match plant.step(&x, &u) {
            Ok(next) => next,
            Err(_) => return fail(PlaybackStop::EnteredSink, states, controls, cost),
        };
        controls.push(u);
        states.push(x.clone());
    }
    let reached = matches!(cs.cell_of(&x), Ok(CellIndex::Regular(c)) if target.contains(&c));
    Ok(Playback { states, controls, cost, reached_target: reached })
}
