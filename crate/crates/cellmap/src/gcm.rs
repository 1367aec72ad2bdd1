//! Generalized cell mapping: a probability distribution of image cells per
//! source cell.
//!
//! Columns are estimated by sampling each cell (a regular subdivision grid
//! or seeded Monte-Carlo points) and counting where the samples land.
//! Sampled columns store integer counts, so they are column-stochastic
//! exactly, not merely within rounding. The sink is absorbing: its implicit
//! column is the unit vector on itself. Classification splits cells into
//! persistent groups (closed communicating classes of the support graph)
//! and transient cells with absorption probabilities into each destination.

use crate::artifacts::CellGrid;
use crate::cellspace::{CellIndex, CellSpace};
use crate::{Error, Result};
use petgraph::graph::DiGraph;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

/// How a column's samples are generated.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Sampling {
    /// `per_axis^n` points per cell on a cell-centered sub-grid that never
    /// touches cell edges.
    Subdivision { per_axis: usize },
    /// `samples` uniform points per cell; the stream for each cell is
    /// seeded by `(seed, cell)`, so the matrix does not depend on the
    /// evaluation schedule.
    MonteCarlo { samples: usize, seed: u64 },
}

#[derive(Debug, Clone, PartialEq)]
enum Column {
    /// Targets with integer sample counts out of `total`.
    Counts { entries: Vec<(CellIndex, u64)>, total: u64 },
    /// Directly specified probabilities.
    Probabilities { entries: Vec<(CellIndex, f64)> },
}

impl Column {
    fn entries(&self) -> Vec<(CellIndex, f64)> {
        match self {
            Column::Counts { entries, total } => entries
                .iter()
                .map(|&(t, c)| (t, c as f64 / *total as f64))
                .collect(),
            Column::Probabilities { entries } => entries.clone(),
        }
    }

    fn verify(&self, source: usize) -> Result<()> {
        match self {
            Column::Counts { entries, total } => {
                let sum: u64 = entries.iter().map(|&(_, c)| c).sum();
                if sum != *total || *total == 0 {
                    return Err(Error::NotStochastic {
                        source,
                        sum: sum as f64 / (*total).max(1) as f64,
                    });
                }
            }
            Column::Probabilities { entries } => {
                if entries.iter().any(|&(_, p)| !(p >= 0.0) || !p.is_finite()) {
                    return Err(Error::NotStochastic { source, sum: f64::NAN });
                }
                let sum: f64 = entries.iter().map(|&(_, p)| p).sum();
                if (sum - 1.0).abs() > 1e-9 {
                    return Err(Error::NotStochastic { source, sum });
                }
            }
        }
        Ok(())
    }
}

/// Sparse column-stochastic transition matrix over the regular cells plus
/// the absorbing sink.
#[derive(Debug, Clone, PartialEq)]
pub struct TransitionMatrix {
    columns: Vec<Column>,
    sampling: Option<Sampling>,
}

impl TransitionMatrix {
    /// Number of regular cells (the sink is implicit).
    pub fn n_cells(&self) -> usize {
        self.columns.len()
    }

    pub fn sampling(&self) -> Option<Sampling> {
        self.sampling
    }

    /// The column of a source cell as `(target, probability)` pairs, sink
    /// last, regular targets in increasing order.
    pub fn column(&self, source: usize) -> Vec<(CellIndex, f64)> {
        self.columns[source].entries()
    }

    /// Probability of one specific transition.
    pub fn weight(&self, source: usize, target: CellIndex) -> f64 {
        self.columns[source]
            .entries()
            .iter()
            .find(|&&(t, _)| t == target)
            .map(|&(_, p)| p)
            .unwrap_or(0.0)
    }

    /// Check that every column is a probability distribution. Counted
    /// columns are verified exactly in integer arithmetic.
    pub fn verify_stochastic(&self) -> Result<()> {
        for (source, col) in self.columns.iter().enumerate() {
            col.verify(source)?;
        }
        Ok(())
    }

    /// Build a matrix from explicit per-column probabilities.
    pub fn from_probabilities(columns: Vec<Vec<(CellIndex, f64)>>) -> Result<Self> {
        let m = Self {
            columns: columns
                .into_iter()
                .map(|entries| Column::Probabilities { entries })
                .collect(),
            sampling: None,
        };
        m.verify_stochastic()?;
        Ok(m)
    }
}

/// Estimate the matrix by sampling `step` over every cell.
///
/// Non-finite step output and step errors count toward the sink, like
/// out-of-box images.
pub fn build_gcm<F>(step: F, cs: &CellSpace, sampling: Sampling) -> Result<TransitionMatrix>
where
    F: Fn(&[f64]) -> Result<Vec<f64>> + Sync,
{
    match sampling {
        Sampling::Subdivision { per_axis } if per_axis == 0 => {
            return Err(Error::InvalidParameter("subdivision needs at least one point".into()))
        }
        Sampling::MonteCarlo { samples, .. } if samples == 0 => {
            return Err(Error::InvalidParameter("need at least one sample".into()))
        }
        _ => {}
    }
    let dim = cs.dim();
    let columns: Vec<Column> = (0..cs.total())
        .into_par_iter()
        .map(|source| {
            let tuple = cs.tuple_of(source).expect("valid cell");
            let mut hits: Vec<(CellIndex, u64)> = Vec::new();
            let mut record = |target: CellIndex| {
                match hits.iter_mut().find(|(t, _)| *t == target) {
                    Some((_, c)) => *c += 1,
                    None => hits.push((target, 1)),
                }
            };
            let mut point = vec![0.0; dim];
            let total;
            match sampling {
                Sampling::Subdivision { per_axis } => {
                    let n_points = (per_axis as u64).pow(dim as u32);
                    for s in 0..n_points {
                        let mut rest = s;
                        for d in (0..dim).rev() {
                            let j = rest % per_axis as u64;
                            rest /= per_axis as u64;
                            let ax = &cs.axes()[d];
                            let offset = (j as f64 + 0.5) / per_axis as f64;
                            point[d] = ax.lo + (tuple[d] as f64 + offset) * ax.width();
                        }
                        let target = match step(&point) {
                            Ok(next) => cs.cell_of(&next).unwrap_or(CellIndex::Sink),
                            Err(_) => CellIndex::Sink,
                        };
                        record(target);
                    }
                    total = n_points;
                }
                Sampling::MonteCarlo { samples, seed } => {
                    let mut seed_bytes = [0u8; 32];
                    seed_bytes[..8].copy_from_slice(&seed.to_le_bytes());
                    seed_bytes[8..16].copy_from_slice(&(source as u64).to_le_bytes());
                    let mut rng = ChaCha8Rng::from_seed(seed_bytes);
                    for _ in 0..samples {
                        for d in 0..dim {
                            let ax = &cs.axes()[d];
                            let r: f64 = rng.random();
                            point[d] = ax.lo + (tuple[d] as f64 + r) * ax.width();
                        }
                        let target = match step(&point) {
                            Ok(next) => cs.cell_of(&next).unwrap_or(CellIndex::Sink),
                            Err(_) => CellIndex::Sink,
                        };
                        record(target);
                    }
                    total = samples as u64;
                }
            }
            hits.sort_by_key(|&(t, _)| match t {
                CellIndex::Regular(c) => c,
                CellIndex::Sink => usize::MAX,
            });
            Column::Counts { entries: hits, total }
        })
        .collect();
    Ok(TransitionMatrix { columns, sampling: Some(sampling) })
}

/// Persistent/transient structure of a transition matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct GcmClassification {
    /// Closed communicating classes, each sorted; order is deterministic.
    pub persistent_groups: Vec<Vec<usize>>,
    /// Group index per cell, for persistent cells.
    pub group_of: Vec<Option<usize>>,
    /// Cells not in any persistent group, sorted.
    pub transient_cells: Vec<usize>,
    /// Per cell, absorption probabilities into each persistent group plus
    /// the sink in the last slot. Persistent cells hold a unit vector on
    /// their own group.
    pub absorption: Vec<Vec<f64>>,
}

impl GcmClassification {
    /// Absorption probability of `cell` into the sink.
    pub fn sink_absorption(&self, cell: usize) -> f64 {
        *self.absorption[cell].last().expect("sink slot")
    }
}

const ABSORPTION_TOL: f64 = 1e-10;
const ABSORPTION_CAP: usize = 100_000;

/// Classify cells into persistent groups and transients, and solve the
/// absorption probabilities of every transient cell by fixed-point
/// iteration (to a max change below 1e-10).
pub fn classify_gcm(w: &TransitionMatrix) -> Result<GcmClassification> {
    w.verify_stochastic()?;
    let n = w.n_cells();
    let columns: Vec<Vec<(CellIndex, f64)>> = (0..n).map(|c| w.column(c)).collect();

    // support graph over the regular cells
    let mut graph = DiGraph::<(), ()>::with_capacity(n, n);
    let nodes: Vec<_> = (0..n).map(|_| graph.add_node(())).collect();
    let mut to_sink = vec![false; n];
    for (source, col) in columns.iter().enumerate() {
        for &(target, p) in col {
            if p <= 0.0 {
                continue;
            }
            match target {
                CellIndex::Regular(t) => {
                    graph.add_edge(nodes[source], nodes[t], ());
                }
                CellIndex::Sink => to_sink[source] = true,
            }
        }
    }

    // persistent groups are strongly connected components with no edge out
    let sccs = petgraph::algo::tarjan_scc(&graph);
    let mut persistent_groups: Vec<Vec<usize>> = Vec::new();
    for scc in &sccs {
        let members: Vec<usize> = scc.iter().map(|ix| ix.index()).collect();
        let in_scc: std::collections::HashSet<usize> = members.iter().copied().collect();
        let closed = members.iter().all(|&c| {
            !to_sink[c]
                && columns[c].iter().all(|&(t, p)| {
                    p <= 0.0
                        || match t {
                            CellIndex::Regular(tc) => in_scc.contains(&tc),
                            CellIndex::Sink => false,
                        }
                })
        });
        // a singleton without a self-loop is not a communicating class
        let communicating = members.len() > 1
            || columns[members[0]]
                .iter()
                .any(|&(t, p)| p > 0.0 && t == CellIndex::Regular(members[0]));
        if closed && communicating {
            let mut sorted = members;
            sorted.sort_unstable();
            persistent_groups.push(sorted);
        }
    }
    persistent_groups.sort();

    let n_groups = persistent_groups.len();
    let mut group_of = vec![None; n];
    for (g, cells) in persistent_groups.iter().enumerate() {
        for &c in cells {
            group_of[c] = Some(g);
        }
    }
    let transient_cells: Vec<usize> = (0..n).filter(|&c| group_of[c].is_none()).collect();

    // absorption by synchronous fixed-point iteration over transient cells
    let sink_slot = n_groups;
    let mut absorption: Vec<Vec<f64>> = (0..n)
        .map(|c| {
            let mut row = vec![0.0; n_groups + 1];
            if let Some(g) = group_of[c] {
                row[g] = 1.0;
            }
            row
        })
        .collect();
    for _ in 0..ABSORPTION_CAP {
        let mut max_change = 0.0f64;
        let mut next = absorption.clone();
        for &c in &transient_cells {
            let row = &mut next[c];
            row.iter_mut().for_each(|v| *v = 0.0);
            for &(target, p) in &columns[c] {
                if p <= 0.0 {
                    continue;
                }
                match target {
                    CellIndex::Sink => row[sink_slot] += p,
                    CellIndex::Regular(t) => match group_of[t] {
                        Some(g) => row[g] += p,
                        None => {
                            for (slot, v) in absorption[t].iter().enumerate() {
                                row[slot] += p * v;
                            }
                        }
                    },
                }
            }
            for (new, old) in row.iter().zip(&absorption[c]) {
                max_change = max_change.max((new - old).abs());
            }
        }
        absorption = next;
        if max_change < ABSORPTION_TOL {
            break;
        }
    }

    Ok(GcmClassification { persistent_groups, group_of, transient_cells, absorption })
}

/// Absorption destinations counted as present above this threshold.
const DESTINATION_TOL: f64 = 1e-9;

/// Per-cell class grid: `P` persistent, `T` transient into a single group,
/// `S` transient into the sink only, `B` on the mixed boundary (positive
/// absorption into two or more destinations).
pub fn gcm_boundary_report(cls: &GcmClassification, cs: &CellSpace) -> Result<CellGrid> {
    if cls.group_of.len() != cs.total() {
        return Err(Error::DimensionMismatch { expected: cs.total(), got: cls.group_of.len() });
    }
    let mut labels = Vec::with_capacity(cs.total());
    let mut grays = Vec::with_capacity(cs.total());
    let sink_slot = cls.persistent_groups.len();
    for c in 0..cs.total() {
        if cls.group_of[c].is_some() {
            labels.push("P".to_string());
            grays.push(255u8);
            continue;
        }
        let row = &cls.absorption[c];
        let destinations = row.iter().filter(|&&p| p > DESTINATION_TOL).count();
        if destinations >= 2 {
            labels.push("B".to_string());
            grays.push(85u8);
        } else if row[sink_slot] > DESTINATION_TOL {
            labels.push("S".to_string());
            grays.push(0u8);
        } else {
            labels.push("T".to_string());
            grays.push(170u8);
        }
    }
    CellGrid::new(cs, labels, grays)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cellspace::AxisSpec;

    fn unit_1d(cells: usize) -> CellSpace {
        CellSpace::new(vec![AxisSpec::new(0.0, 1.0, cells).unwrap()]).unwrap()
    }

    #[test]
    fn identity_map_is_identity_matrix() {
        let cs = unit_1d(8);
        let w = build_gcm(|x| Ok(x.to_vec()), &cs, Sampling::Subdivision { per_axis: 3 }).unwrap();
        for c in 0..8 {
            assert_eq!(w.column(c), vec![(CellIndex::Regular(c), 1.0)]);
        }
        w.verify_stochastic().unwrap();
    }

    #[test]
    fn contraction_column_from_interval_image() {
        // x -> 0.625x maps cell 2 = [0.25, 0.375) onto [0.15625, 0.234375),
        // entirely inside cell 1
        let cs = unit_1d(8);
        let w = build_gcm(
            |x| Ok(vec![0.625 * x[0]]),
            &cs,
            Sampling::Subdivision { per_axis: 5 },
        )
        .unwrap();
        assert_eq!(w.column(2), vec![(CellIndex::Regular(1), 1.0)]);
    }

    #[test]
    fn shift_map_splits_half_and_half() {
        // x -> x + 0.0625 moves cell 0 halfway into cell 1; with 16
        // cell-centered samples exactly 8 land on each side
        let cs = unit_1d(8);
        let w = build_gcm(
            |x| Ok(vec![x[0] + 0.0625]),
            &cs,
            Sampling::Subdivision { per_axis: 16 },
        )
        .unwrap();
        assert_eq!(
            w.column(0),
            vec![(CellIndex::Regular(0), 0.5), (CellIndex::Regular(1), 0.5)]
        );
    }

    #[test]
    fn out_of_box_samples_count_toward_sink() {
        let cs = unit_1d(4);
        let w = build_gcm(
            |x| Ok(vec![x[0] + 0.9]),
            &cs,
            Sampling::Subdivision { per_axis: 4 },
        )
        .unwrap();
        // source cell 3 = [0.75, 1): all samples leave the box except those
        // landing exactly in [0.75+0.9, 1] = none
        assert_eq!(w.column(3), vec![(CellIndex::Sink, 1.0)]);
        w.verify_stochastic().unwrap();
    }

    #[test]
    fn monte_carlo_is_seed_deterministic() {
        let cs = unit_1d(8);
        let f = |x: &[f64]| Ok(vec![0.7 * x[0] + 0.1]);
        let a = build_gcm(f, &cs, Sampling::MonteCarlo { samples: 64, seed: 9 }).unwrap();
        let b = build_gcm(f, &cs, Sampling::MonteCarlo { samples: 64, seed: 9 }).unwrap();
        assert_eq!(a, b);
        let c = build_gcm(f, &cs, Sampling::MonteCarlo { samples: 64, seed: 10 }).unwrap();
        assert_ne!(a, c);
        a.verify_stochastic().unwrap();
    }

    #[test]
    fn scm_image_in_gcm_support_for_odd_subdivision() {
        // odd per-axis counts include the cell center among the samples
        let cs = unit_1d(8);
        let f = |x: &[f64]| Ok(vec![0.625 * x[0]]);
        let tm = crate::scm::build_scm(f, &cs);
        let w = build_gcm(f, &cs, Sampling::Subdivision { per_axis: 5 }).unwrap();
        for c in 0..8 {
            let img = tm.image[c];
            assert!(w.weight(c, img) > 0.0, "cell {c}");
        }
    }

    #[test]
    fn classify_identity() {
        let cs = unit_1d(4);
        let w = build_gcm(|x| Ok(x.to_vec()), &cs, Sampling::Subdivision { per_axis: 3 }).unwrap();
        let cls = classify_gcm(&w).unwrap();
        assert_eq!(cls.persistent_groups.len(), 4);
        assert!(cls.transient_cells.is_empty());
        for c in 0..4 {
            assert_eq!(cls.group_of[c], Some(c));
        }
    }

    #[test]
    fn classify_contraction_chain() {
        let cs = unit_1d(8);
        let w = build_gcm(
            |x| Ok(vec![0.625 * x[0]]),
            &cs,
            Sampling::Subdivision { per_axis: 5 },
        )
        .unwrap();
        let cls = classify_gcm(&w).unwrap();
        assert_eq!(cls.persistent_groups, vec![vec![0]]);
        assert_eq!(cls.transient_cells, (1..8).collect::<Vec<_>>());
        for &c in &cls.transient_cells {
            assert!((cls.absorption[c][0] - 1.0).abs() < 1e-9, "cell {c}");
            assert!(cls.sink_absorption(c) < 1e-9);
        }
    }

    #[test]
    fn classify_hand_built_split() {
        let w = TransitionMatrix::from_probabilities(vec![
            vec![(CellIndex::Regular(0), 1.0)],
            vec![(CellIndex::Regular(0), 0.3), (CellIndex::Sink, 0.7)],
        ])
        .unwrap();
        let cls = classify_gcm(&w).unwrap();
        assert_eq!(cls.persistent_groups, vec![vec![0]]);
        assert_eq!(cls.transient_cells, vec![1]);
        assert!((cls.absorption[1][0] - 0.3).abs() < 1e-12);
        assert!((cls.sink_absorption(1) - 0.7).abs() < 1e-12);

        let cs = unit_1d(2);
        let grid = gcm_boundary_report(&cls, &cs).unwrap();
        let got: Vec<&str> = grid.labels().iter().map(|l| l.as_str()).collect();
        assert_eq!(got, vec!["P", "B"]);
    }

    #[test]
    fn classify_rejects_bad_columns() {
        assert!(TransitionMatrix::from_probabilities(vec![vec![(CellIndex::Regular(0), 0.9)]])
            .is_err());
        assert!(TransitionMatrix::from_probabilities(vec![vec![
            (CellIndex::Regular(0), 1.5),
            (CellIndex::Sink, -0.5),
        ]])
        .is_err());
    }

    #[test]
    fn absorption_rows_sum_to_one() {
        let cs = unit_1d(8);
        // expanding map: inner cells spread, outer cells leave the box
        let w = build_gcm(
            |x| Ok(vec![1.8 * (x[0] - 0.4)]),
            &cs,
            Sampling::Subdivision { per_axis: 7 },
        )
        .unwrap();
        let cls = classify_gcm(&w).unwrap();
        for c in 0..8 {
            let sum: f64 = cls.absorption[c].iter().sum();
            assert!((sum - 1.0).abs() < 1e-6, "cell {c}: {sum}");
        }
    }

    #[test]
    fn quantized_oscillator_boundary_structure() {
        // sampled harmonic oscillator under its quadratic-cost gain with
        // 4-bit converters on [-1,1]: the D/A dead zone pins the four cells
        // around the origin as period-1 groups, everything else sits on a
        // mixed boundary (frozen regression baseline)
        use crate::models::{
            discretize_zoh, lqr_gain, ControlSource, DiscreteLti, Plant, QuantizedLoop,
        };
        use crate::quantization::{QuantizerSpec, VectorQuantizerSpec};
        use nalgebra::DMatrix;
        let ac = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, -1.0, 0.0]);
        let bc = DMatrix::from_row_slice(2, 1, &[0.0, 1.0]);
        let (ad, bd) = discretize_zoh(&ac, &bc, 0.1).unwrap();
        let q = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 0.0]);
        let r = DMatrix::from_row_slice(1, 1, &[1.0]);
        let k = lqr_gain(&ad, &bd, &q, &r).unwrap();
        let plant = DiscreteLti::new(ad, bd, 0.1).unwrap();
        let four_bit = QuantizerSpec::signed_bits(4, 1.0).unwrap();
        let lp = QuantizedLoop::new(Plant::Lti(plant), ControlSource::Gain(k))
            .unwrap()
            .with_ad(VectorQuantizerSpec::uniform(four_bit, 2).unwrap())
            .unwrap()
            .with_da(four_bit);
        let cs = CellSpace::new(vec![
            AxisSpec::with_bits(-1.0, 1.0, 4).unwrap(),
            AxisSpec::with_bits(-1.0, 1.0, 4).unwrap(),
        ])
        .unwrap();
        let w =
            build_gcm(|x| lp.step(x, None), &cs, Sampling::Subdivision { per_axis: 5 }).unwrap();
        let cls = classify_gcm(&w).unwrap();
        assert_eq!(cls.persistent_groups, vec![vec![119], vec![120], vec![135], vec![136]]);
        for g in &cls.persistent_groups {
            let center = cs.center_of_flat(g[0]);
            assert!(center.iter().all(|c| c.abs() <= 0.125), "group near origin");
        }
        let grid = gcm_boundary_report(&cls, &cs).unwrap();
        let mixed = grid.labels().iter().filter(|l| l.as_str() == "B").count();
        assert_eq!(mixed, 252);
    }

    #[test]
    fn boundary_report_identity_all_persistent() {
        let cs = unit_1d(4);
        let w = build_gcm(|x| Ok(x.to_vec()), &cs, Sampling::Subdivision { per_axis: 3 }).unwrap();
        let cls = classify_gcm(&w).unwrap();
        let grid = gcm_boundary_report(&cls, &cs).unwrap();
        assert!(grid.labels().iter().all(|l| l == "P"));
    }
}
