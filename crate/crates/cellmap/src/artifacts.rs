//! Serialized artifacts: ROM images, the `DOC1` table container, and the
//! CSV/PGM report formats shared by the command-line front-end.
//!
//! All text output is bit-stable: values print with nine significant digits
//! (trailing zeros trimmed), rows come in a deterministic order, and lines
//! end with a bare LF.

use crate::cellspace::{AxisSpec, CellIndex, CellSpace};
use crate::doc::DocTable;
use crate::gcm::TransitionMatrix;
use crate::models::Trace;
use crate::robust::CurvePoint;
use crate::scm::{TransitionMap, UnravelResult};
use crate::{Error, Result};
use std::io::Write;

/// Fixed-decimal formatting with nine significant digits and trailing
/// zeros trimmed, so dyadic values like `0.875` print exactly.
pub fn format_value(x: f64) -> String {
    if x == 0.0 {
        return "0".to_string();
    }
    if !x.is_finite() {
        return if x.is_nan() {
            "nan".to_string()
        } else if x > 0.0 {
            "inf".to_string()
        } else {
            "-inf".to_string()
        };
    }
    // decimal exponent via the formatter, robust at powers of ten
    let sci = format!("{x:e}");
    let exp: i32 = sci.split('e').nth(1).and_then(|e| e.parse().ok()).unwrap_or(0);
    let decimals = (8 - exp).max(0) as usize;
    let mut s = format!("{x:.decimals$}");
    if s.contains('.') {
        while s.ends_with('0') {
            s.pop();
        }
        if s.ends_with('.') {
            s.pop();
        }
    }
    s
}

// ---------------------------------------------------------------------------
// class grids

/// A per-cell classification with short text labels and gray levels, laid
/// out on the cell space it was computed over (one or two axes).
#[derive(Debug, Clone, PartialEq)]
pub struct CellGrid {
    axes_cells: Vec<usize>,
    labels: Vec<String>,
    grays: Vec<u8>,
}

impl CellGrid {
    pub fn new(cs: &CellSpace, labels: Vec<String>, grays: Vec<u8>) -> Result<Self> {
        if labels.len() != cs.total() || grays.len() != cs.total() {
            return Err(Error::DimensionMismatch { expected: cs.total(), got: labels.len() });
        }
        Ok(Self {
            axes_cells: cs.axes().iter().map(|a| a.cells).collect(),
            labels,
            grays,
        })
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn grays(&self) -> &[u8] {
        &self.grays
    }

    fn check_layout(&self) -> Result<(usize, usize)> {
        match self.axes_cells.len() {
            1 => Ok((self.axes_cells[0], 1)),
            2 => Ok((self.axes_cells[0], self.axes_cells[1])),
            n => Err(Error::Format(format!("grid layout supports 1 or 2 axes, got {n}"))),
        }
    }

    /// Flat index of column `i` (axis 0) and row `j` (axis 1).
    fn at(&self, i: usize, j: usize) -> usize {
        if self.axes_cells.len() == 1 {
            i
        } else {
            i * self.axes_cells[1] + j
        }
    }
}

/// CSV grid: one row per axis-1 value from high to low (top row first), one
/// comma-separated label per axis-0 cell. 1-D grids are a single row.
pub fn write_grid_csv<W: Write>(w: &mut W, grid: &CellGrid) -> Result<()> {
    let (nx, ny) = grid.check_layout()?;
    for j in (0..ny).rev() {
        let row: Vec<&str> = (0..nx).map(|i| grid.labels[grid.at(i, j)].as_str()).collect();
        writeln!(w, "{}", row.join(","))?;
    }
    Ok(())
}

/// Binary 8-bit PGM of the gray levels, same orientation as the CSV.
pub fn write_grid_pgm<W: Write>(w: &mut W, grid: &CellGrid) -> Result<()> {
    let (nx, ny) = grid.check_layout()?;
    write!(w, "P5\n{nx} {ny}\n255\n")?;
    for j in (0..ny).rev() {
        for i in 0..nx {
            w.write_all(&[grid.grays[grid.at(i, j)]])?;
        }
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// tabular reports

/// Curve CSV with header `param,count,percent`; the percent column prints
/// with one decimal, matching how coverage fractions are usually reported.
pub fn write_curve<W: Write>(w: &mut W, points: &[CurvePoint]) -> Result<()> {
    writeln!(w, "param,count,percent")?;
    for p in points {
        writeln!(w, "{},{},{:.1}", format_value(p.param), p.count, p.percent)?;
    }
    Ok(())
}

/// Trace CSV with one row per state; control columns are empty on the final
/// row, and the cost column carries the running total.
pub fn write_trace<W: Write>(w: &mut W, trace: &Trace) -> Result<()> {
    let n = trace.states.first().map_or(0, |s| s.len());
    let m = trace.controls.first().map_or(0, |u| u.len());
    let mut header = vec!["step".to_string()];
    header.extend((1..=n).map(|i| format!("x{i}")));
    header.extend((1..=m).map(|i| format!("u{i}")));
    header.push("cost".to_string());
    writeln!(w, "{}", header.join(","))?;
    for (k, state) in trace.states.iter().enumerate() {
        let mut row = vec![k.to_string()];
        row.extend(state.iter().map(|&v| format_value(v)));
        match trace.controls.get(k) {
            Some(u) => row.extend(u.iter().map(|&v| format_value(v))),
            None => row.extend(std::iter::repeat(String::new()).take(m)),
        }
        row.push(format_value(trace.costs.get(k).copied().unwrap_or(0.0)));
        writeln!(w, "{}", row.join(","))?;
    }
    Ok(())
}

/// Transition-map CSV `cell,image` with the sink written as -1.
pub fn write_transition_csv<W: Write>(w: &mut W, tm: &TransitionMap) -> Result<()> {
    writeln!(w, "cell,image")?;
    for (c, img) in tm.image.iter().enumerate() {
        match img {
            CellIndex::Regular(t) => writeln!(w, "{c},{t}")?,
            CellIndex::Sink => writeln!(w, "{c},-1")?,
        }
    }
    Ok(())
}

/// Unravel CSV `cell,group,steps` (group 0 is sink-bound).
pub fn write_unravel_csv<W: Write>(w: &mut W, ur: &UnravelResult) -> Result<()> {
    writeln!(w, "cell,group,steps")?;
    for c in 0..ur.group_id.len() {
        writeln!(w, "{c},{},{}", ur.group_id[c], ur.steps_to_group[c])?;
    }
    Ok(())
}

/// Sparse matrix CSV `source,target,probability` with the sink as -1, one
/// block per source in column order.
pub fn write_matrix_csv<W: Write>(w: &mut W, m: &TransitionMatrix) -> Result<()> {
    writeln!(w, "source,target,probability")?;
    for source in 0..m.n_cells() {
        for (target, p) in m.column(source) {
            match target {
                CellIndex::Regular(t) => {
                    writeln!(w, "{source},{t},{}", format_value(p))?
                }
                CellIndex::Sink => writeln!(w, "{source},-1,{}", format_value(p))?,
            }
        }
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// DOC binary container

const DOC_MAGIC: &[u8; 4] = b"DOC1";

/// Smallest byte width whose all-ones word is distinct from every control
/// index.
fn control_word_bytes(n_controls: usize) -> usize {
    let mut bytes = 1usize;
    while bytes < 8 && (n_controls as u128) >= (1u128 << (8 * bytes)) {
        bytes += 1;
    }
    bytes
}

/// Write a control table to the `DOC1` container: magic, axis count, per
/// axis `lo`/`hi`/`cells`, control count, then per-cell control words at
/// minimal byte width (all-ones for unassigned cells) and per-cell values
/// as little-endian doubles.
pub fn write_doc<W: Write>(w: &mut W, doc: &DocTable) -> Result<()> {
    w.write_all(DOC_MAGIC)?;
    let axes = doc.cellspace.axes();
    w.write_all(&(axes.len() as u32).to_le_bytes())?;
    for ax in axes {
        w.write_all(&ax.lo.to_le_bytes())?;
        w.write_all(&ax.hi.to_le_bytes())?;
        w.write_all(&(ax.cells as u64).to_le_bytes())?;
    }
    w.write_all(&(doc.controls.len() as u64).to_le_bytes())?;
    let width = control_word_bytes(doc.controls.len());
    let none_word = ones(width);
    for entry in &doc.control_index {
        let word = match entry {
            Some(j) => *j as u64,
            None => none_word,
        };
        w.write_all(&word.to_le_bytes()[..width])?;
    }
    for v in &doc.value {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

fn ones(width: usize) -> u64 {
    if width >= 8 {
        u64::MAX
    } else {
        (1u64 << (8 * width)) - 1
    }
}

/// The portable content of a `DOC1` container.
#[derive(Debug, Clone, PartialEq)]
pub struct DocRecord {
    pub axes: Vec<AxisSpec>,
    pub n_controls: usize,
    pub control_index: Vec<Option<usize>>,
    pub value: Vec<f64>,
}

/// Parse a `DOC1` container.
pub fn read_doc(bytes: &[u8]) -> Result<DocRecord> {
    let mut at = 0usize;
    let take = |at: &mut usize, n: usize| -> Result<&[u8]> {
        if *at + n > bytes.len() {
            return Err(Error::Format("container truncated".into()));
        }
        let slice = &bytes[*at..*at + n];
        *at += n;
        Ok(slice)
    };
    if take(&mut at, 4)? != DOC_MAGIC {
        return Err(Error::Format("bad magic, expected DOC1".into()));
    }
    let n_axes = u32::from_le_bytes(take(&mut at, 4)?.try_into().unwrap()) as usize;
    if n_axes == 0 || n_axes > 16 {
        return Err(Error::Format(format!("implausible axis count {n_axes}")));
    }
    let mut axes = Vec::with_capacity(n_axes);
    let mut total = 1usize;
    for _ in 0..n_axes {
        let lo = f64::from_le_bytes(take(&mut at, 8)?.try_into().unwrap());
        let hi = f64::from_le_bytes(take(&mut at, 8)?.try_into().unwrap());
        let cells = u64::from_le_bytes(take(&mut at, 8)?.try_into().unwrap()) as usize;
        let ax = AxisSpec::new(lo, hi, cells).map_err(|e| Error::Format(e.to_string()))?;
        total = total
            .checked_mul(cells)
            .ok_or_else(|| Error::Format("cell count overflow".into()))?;
        axes.push(ax);
    }
    let n_controls = u64::from_le_bytes(take(&mut at, 8)?.try_into().unwrap()) as usize;
    if n_controls == 0 {
        return Err(Error::Format("container has no controls".into()));
    }
    let width = control_word_bytes(n_controls);
    let none_word = ones(width);
    let mut control_index = Vec::with_capacity(total);
    for _ in 0..total {
        let mut word = [0u8; 8];
        word[..width].copy_from_slice(take(&mut at, width)?);
        let word = u64::from_le_bytes(word);
        if word == none_word {
            control_index.push(None);
        } else if (word as usize) < n_controls {
            control_index.push(Some(word as usize));
        } else {
            return Err(Error::Format(format!("control word {word} out of range")));
        }
    }
    let mut value = Vec::with_capacity(total);
    for _ in 0..total {
        value.push(f64::from_le_bytes(take(&mut at, 8)?.try_into().unwrap()));
    }
    if at != bytes.len() {
        return Err(Error::Format(format!("{} trailing bytes", bytes.len() - at)));
    }
    Ok(DocRecord { axes, n_controls, control_index, value })
}

// ---------------------------------------------------------------------------
// ROM images

/// Mapping of state axes onto ROM address bit-fields.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RomLayout {
    /// Axes from most-significant address field to least.
    pub axis_order: Vec<usize>,
    /// Address bits per axis, indexed by axis (not by order).
    pub bits_per_axis: Vec<usize>,
    /// Width of one stored control word.
    pub data_bits: u32,
}

impl RomLayout {
    pub fn new(axis_order: Vec<usize>, bits_per_axis: Vec<usize>, data_bits: u32) -> Result<Self> {
        let n = bits_per_axis.len();
        if axis_order.len() != n {
            return Err(Error::Layout(format!(
                "axis order lists {} axes, layout has {n}",
                axis_order.len()
            )));
        }
        let mut seen = vec![false; n];
        for &a in &axis_order {
            if a >= n || seen[a] {
                return Err(Error::Layout("axis order must be a permutation of the axes".into()));
            }
            seen[a] = true;
        }
        if data_bits == 0 || data_bits > 32 {
            return Err(Error::Layout(format!("data width must be 1..=32 bits, got {data_bits}")));
        }
        // a width of 0 is the degenerate single-cell image
        let address_bits: usize = bits_per_axis.iter().sum();
        if address_bits > 32 {
            return Err(Error::Layout(format!(
                "address width must be at most 32 bits, got {address_bits}"
            )));
        }
        Ok(Self { axis_order, bits_per_axis, data_bits })
    }

    fn bits_for(cs: &CellSpace) -> Result<Vec<usize>> {
        cs.axes()
            .iter()
            .map(|ax| {
                if ax.cells.is_power_of_two() {
                    Ok(ax.cells.trailing_zeros() as usize)
                } else {
                    Err(Error::Layout(format!(
                        "axis with {} cells does not fill a whole address field",
                        ax.cells
                    )))
                }
            })
            .collect()
    }

    /// Software-realization preset: axis 0 (x1) in the most significant
    /// address field.
    pub fn sw_x1_high(cs: &CellSpace, data_bits: u32) -> Result<Self> {
        Self::new((0..cs.dim()).collect(), Self::bits_for(cs)?, data_bits)
    }

    /// Hardware-wiring preset: axis 0 (x1) on the low address lines.
    pub fn hw_x1_low(cs: &CellSpace, data_bits: u32) -> Result<Self> {
        Self::new((0..cs.dim()).rev().collect(), Self::bits_for(cs)?, data_bits)
    }

    pub fn address_bits(&self) -> usize {
        self.bits_per_axis.iter().sum()
    }

    pub fn entry_bytes(&self) -> usize {
        self.data_bits.div_ceil(8) as usize
    }

    /// ROM address of a cell tuple: axis bit-fields concatenated in layout
    /// order, most significant first.
    pub fn address_of(&self, tuple: &[usize]) -> usize {
        let mut addr = 0usize;
        for &axis in &self.axis_order {
            addr = (addr << self.bits_per_axis[axis]) | tuple[axis];
        }
        addr
    }

    fn validate_against(&self, cs: &CellSpace, n_controls: usize, any_none: bool) -> Result<()> {
        if self.bits_per_axis.len() != cs.dim() {
            return Err(Error::Layout(format!(
                "layout has {} axes, cell space has {}",
                self.bits_per_axis.len(),
                cs.dim()
            )));
        }
        for (bits, ax) in self.bits_per_axis.iter().zip(cs.axes()) {
            if 1usize << bits != ax.cells {
                return Err(Error::Layout(format!(
                    "axis field of {bits} bits does not match {} cells",
                    ax.cells
                )));
            }
        }
        let capacity = 1u64 << self.data_bits.min(63);
        if (n_controls as u64) > capacity {
            return Err(Error::Layout(format!(
                "{n_controls} controls do not fit in {} data bits",
                self.data_bits
            )));
        }
        if any_none && n_controls as u64 == capacity {
            return Err(Error::Layout(format!(
                "all-ones word needed for unassigned cells collides with control {}",
                n_controls - 1
            )));
        }
        Ok(())
    }
}

fn data_ones(data_bits: u32) -> u64 {
    if data_bits >= 64 {
        u64::MAX
    } else {
        (1u64 << data_bits) - 1
    }
}

/// Serialize a control table to a raw ROM image: one entry per address,
/// each `entry_bytes` wide (little-endian for multi-byte words), with
/// unassigned cells stored as the all-ones data word.
pub fn export_rom(doc: &DocTable, layout: &RomLayout) -> Result<Vec<u8>> {
    export_rom_indices(&doc.control_index, &doc.cellspace, doc.controls.len(), layout)
}

/// As [`export_rom`], from bare per-cell control indices (what a parsed
/// `DOC1` container provides).
pub fn export_rom_indices(
    control_index: &[Option<usize>],
    cs: &CellSpace,
    n_controls: usize,
    layout: &RomLayout,
) -> Result<Vec<u8>> {
    if control_index.len() != cs.total() {
        return Err(Error::DimensionMismatch { expected: cs.total(), got: control_index.len() });
    }
    let any_none = control_index.iter().any(|c| c.is_none());
    layout.validate_against(cs, n_controls, any_none)?;
    let entry_bytes = layout.entry_bytes();
    let entries = 1usize << layout.address_bits();
    let none_word = data_ones(layout.data_bits);
    let mut image = vec![0u8; entries * entry_bytes];
    for cell in 0..cs.total() {
        let tuple = cs.tuple_of(cell)?;
        let addr = layout.address_of(&tuple);
        let word = match control_index[cell] {
            Some(j) => j as u64,
            None => none_word,
        };
        let bytes = word.to_le_bytes();
        image[addr * entry_bytes..addr * entry_bytes + entry_bytes]
            .copy_from_slice(&bytes[..entry_bytes]);
    }
    Ok(image)
}

/// CRC-32 of an image, the checksum the manifest records.
pub fn image_checksum(image: &[u8]) -> u32 {
    crc32fast::hash(image)
}

/// Parse a ROM image back into per-cell control indices.
pub fn import_rom(
    bytes: &[u8],
    layout: &RomLayout,
    cs: &CellSpace,
    n_controls: usize,
) -> Result<Vec<Option<usize>>> {
    layout.validate_against(cs, n_controls, false)?;
    let entry_bytes = layout.entry_bytes();
    let entries = 1usize << layout.address_bits();
    if bytes.len() != entries * entry_bytes {
        return Err(Error::Format(format!(
            "image is {} bytes, layout requires {}",
            bytes.len(),
            entries * entry_bytes
        )));
    }
    let none_word = data_ones(layout.data_bits);
    let mut control_index = vec![None; cs.total()];
    for (cell, slot) in control_index.iter_mut().enumerate() {
        let tuple = cs.tuple_of(cell)?;
        let addr = layout.address_of(&tuple);
        let mut word = [0u8; 8];
        word[..entry_bytes].copy_from_slice(&bytes[addr * entry_bytes..(addr + 1) * entry_bytes]);
        let word = u64::from_le_bytes(word) & data_ones(layout.data_bits);
        if word == none_word {
            *slot = None;
        } else if (word as usize) < n_controls {
            *slot = Some(word as usize);
        } else {
            return Err(Error::Format(format!(
                "stored word {word} is not a control index (have {n_controls})"
            )));
        }
    }
    Ok(control_index)
}

/// JSON manifest describing a ROM image: address layout, axis ranges, the
/// index-to-control mapping when known, and a CRC-32 of the image bytes.
pub fn rom_manifest(
    axes: &[AxisSpec],
    layout: &RomLayout,
    n_controls: usize,
    control_values: Option<&[Vec<f64>]>,
    image: &[u8],
) -> serde_json::Value {
    serde_json::json!({
        "magic": "ROM1",
        "address_bits": layout.address_bits(),
        "data_bits": layout.data_bits,
        "axis_order": layout.axis_order,
        "axes": axes.iter().map(|ax| serde_json::json!({
            "lo": ax.lo,
            "hi": ax.hi,
            "cells": ax.cells,
        })).collect::<Vec<_>>(),
        "controls": {
            "count": n_controls,
            "values": control_values,
        },
        "checksum_crc32": crc32fast::hash(image),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::CostSpec;
    use crate::reach::ControlSet;
    use crate::robust::CurvePoint;

    fn doc_fixture(nx: usize, ny: usize, n_controls: usize) -> DocTable {
        let cs = CellSpace::new(vec![
            AxisSpec::new(-1.0, 1.0, nx).unwrap(),
            AxisSpec::new(-1.0, 1.0, ny).unwrap(),
        ])
        .unwrap();
        let controls =
            ControlSet::scalars(&(0..n_controls).map(|j| j as f64).collect::<Vec<_>>()).unwrap();
        let total = cs.total();
        DocTable {
            control_index: (0..total)
                .map(|c| if c % 7 == 3 { None } else { Some(c % n_controls) })
                .collect(),
            value: (0..total)
                .map(|c| if c % 7 == 3 { f64::INFINITY } else { c as f64 * 0.25 })
                .collect(),
            steps: (0..total).map(|c| if c % 7 == 3 { usize::MAX } else { c }).collect(),
            cellspace: cs,
            controls,
            cost: CostSpec::minimum_time(),
            period: 0.01,
            target: vec![0],
        }
    }

    #[test]
    fn format_values() {
        assert_eq!(format_value(0.0), "0");
        assert_eq!(format_value(0.875), "0.875");
        assert_eq!(format_value(0.5), "0.5");
        assert_eq!(format_value(224.0), "224");
        assert_eq!(format_value(-0.125), "-0.125");
        assert_eq!(format_value(1e-9), "0.000000001");
        assert_eq!(format_value(123456789.0), "123456789");
        assert_eq!(format_value(0.1), "0.1");
        assert_eq!(format_value(1.0 / 3.0), "0.333333333");
    }

    #[test]
    fn curve_csv_percent_formatting() {
        let points = vec![
            CurvePoint { param: 0.0, count: 224, percent: 224.0 / 256.0 * 100.0 },
            CurvePoint { param: 0.5, count: 159, percent: 159.0 / 256.0 * 100.0 },
        ];
        let mut out = Vec::new();
        write_curve(&mut out, &points).unwrap();
        assert_eq!(
            String::from_utf8(out).unwrap(),
            "param,count,percent\n0,224,87.5\n0.5,159,62.1\n"
        );
    }

    #[test]
    fn grid_csv_layout() {
        let cs = CellSpace::new(vec![
            AxisSpec::new(0.0, 1.0, 2).unwrap(),
            AxisSpec::new(0.0, 1.0, 2).unwrap(),
        ])
        .unwrap();
        let labels = vec!["a".into(), "b".into(), "c".into(), "d".into()];
        let grid = CellGrid::new(&cs, labels, vec![0, 1, 2, 3]).unwrap();
        let mut out = Vec::new();
        write_grid_csv(&mut out, &grid).unwrap();
        // flat order is (x1, x2) = (0,0),(0,1),(1,0),(1,1); top row is x2=1
        assert_eq!(String::from_utf8(out).unwrap(), "b,d\na,c\n");

        let zero = CellGrid::new(&cs, vec!["0".into(); 4], vec![0; 4]).unwrap();
        let mut out = Vec::new();
        write_grid_csv(&mut out, &zero).unwrap();
        assert_eq!(String::from_utf8(out).unwrap(), "0,0\n0,0\n");
    }

    #[test]
    fn grid_pgm_header_and_payload() {
        let cs = CellSpace::new(vec![
            AxisSpec::new(0.0, 1.0, 2).unwrap(),
            AxisSpec::new(0.0, 1.0, 2).unwrap(),
        ])
        .unwrap();
        let grid =
            CellGrid::new(&cs, vec!["".into(); 4], vec![10, 20, 30, 40]).unwrap();
        let mut out = Vec::new();
        write_grid_pgm(&mut out, &grid).unwrap();
        assert_eq!(&out[..9], b"P5\n2 2\n25");
        assert_eq!(&out[out.len() - 4..], &[20, 40, 10, 30]);
    }

    #[test]
    fn trace_csv_rows() {
        let trace = Trace {
            states: vec![vec![0.875], vec![0.5]],
            controls: vec![vec![0.5]],
            costs: vec![0.0, 1.0],
        };
        let mut out = Vec::new();
        write_trace(&mut out, &trace).unwrap();
        assert_eq!(
            String::from_utf8(out).unwrap(),
            "step,x1,u1,cost\n0,0.875,0.5,0\n1,0.5,,1\n"
        );
        // empty trace writes the header only
        let empty = Trace { states: vec![], controls: vec![], costs: vec![] };
        let mut out = Vec::new();
        write_trace(&mut out, &empty).unwrap();
        assert_eq!(String::from_utf8(out).unwrap(), "step,cost\n");
    }

    #[test]
    fn doc_container_round_trip() {
        let doc = doc_fixture(4, 4, 3);
        let mut bytes = Vec::new();
        write_doc(&mut bytes, &doc).unwrap();
        let record = read_doc(&bytes).unwrap();
        assert_eq!(record.axes, doc.cellspace.axes());
        assert_eq!(record.n_controls, 3);
        assert_eq!(record.control_index, doc.control_index);
        let finite_match = record
            .value
            .iter()
            .zip(&doc.value)
            .all(|(a, b)| (a.is_infinite() && b.is_infinite()) || a == b);
        assert!(finite_match);
        // corrupt the magic
        bytes[0] = b'X';
        assert!(read_doc(&bytes).is_err());
    }

    #[test]
    fn doc_container_rejects_truncation() {
        let doc = doc_fixture(4, 4, 3);
        let mut bytes = Vec::new();
        write_doc(&mut bytes, &doc).unwrap();
        assert!(read_doc(&bytes[..bytes.len() - 1]).is_err());
        bytes.push(0);
        assert!(read_doc(&bytes).is_err());
    }

    #[test]
    fn control_word_widths() {
        assert_eq!(control_word_bytes(2), 1);
        assert_eq!(control_word_bytes(255), 1);
        assert_eq!(control_word_bytes(256), 2);
        assert_eq!(control_word_bytes(65536), 3);
    }

    #[test]
    fn rom_addresses_match_bit_fields() {
        // 4+4 bit layout, axis 0 high: tuple (1, 8) lives at 0001_1000
        let cs = CellSpace::new(vec![
            AxisSpec::with_bits(0.0, 1.0, 4).unwrap(),
            AxisSpec::with_bits(0.0, 1.0, 4).unwrap(),
        ])
        .unwrap();
        let layout = RomLayout::sw_x1_high(&cs, 8).unwrap();
        assert_eq!(layout.address_of(&[1, 8]), 0x18);
        let hw = RomLayout::hw_x1_low(&cs, 8).unwrap();
        assert_eq!(hw.address_of(&[1, 8]), 0x81);
        // independent arithmetic on random tuples
        for (t0, t1) in [(0usize, 0usize), (15, 15), (7, 3), (2, 14)] {
            assert_eq!(layout.address_of(&[t0, t1]), t0 * 16 + t1);
            assert_eq!(hw.address_of(&[t0, t1]), t1 * 16 + t0);
        }
    }

    #[test]
    fn rom_golden_4_plus_4() {
        // hand-constructed 256-byte fixture: each cell stores its own
        // (x1 + x2) mod 3 as the control, with cell (2, 2) unassigned
        let cs = CellSpace::new(vec![
            AxisSpec::with_bits(0.0, 1.0, 4).unwrap(),
            AxisSpec::with_bits(0.0, 1.0, 4).unwrap(),
        ])
        .unwrap();
        let controls = ControlSet::scalars(&[0.0, 1.0, 2.0]).unwrap();
        let total = cs.total();
        let mut control_index = Vec::with_capacity(total);
        for c in 0..total {
            let t = cs.tuple_of(c).unwrap();
            control_index.push(if t == [2, 2] { None } else { Some((t[0] + t[1]) % 3) });
        }
        let doc = DocTable {
            control_index: control_index.clone(),
            value: vec![0.0; total],
            steps: vec![0; total],
            cellspace: cs.clone(),
            controls,
            cost: CostSpec::minimum_time(),
            period: 1.0,
            target: vec![0],
        };
        let layout = RomLayout::sw_x1_high(&cs, 8).unwrap();
        let image = export_rom(&doc, &layout).unwrap();
        assert_eq!(image.len(), 256);
        let mut want = vec![0u8; 256];
        for x1 in 0..16usize {
            for x2 in 0..16usize {
                want[x1 * 16 + x2] =
                    if (x1, x2) == (2, 2) { 0xFF } else { ((x1 + x2) % 3) as u8 };
            }
        }
        assert_eq!(image, want);
        let back = import_rom(&image, &layout, &cs, 3).unwrap();
        assert_eq!(back, control_index);
    }

    #[test]
    fn rom_all_none_is_all_ones() {
        let mut doc = doc_fixture(4, 4, 3);
        doc.control_index = vec![None; doc.cellspace.total()];
        let layout = RomLayout::sw_x1_high(&doc.cellspace, 4).unwrap();
        let image = export_rom(&doc, &layout).unwrap();
        assert!(image.iter().all(|&b| b == 0x0F));
    }

    #[test]
    fn rom_single_cell_round_trip() {
        let cs = CellSpace::new(vec![AxisSpec::new(0.0, 1.0, 1).unwrap()]).unwrap();
        let doc = DocTable {
            control_index: vec![Some(1)],
            value: vec![0.0],
            steps: vec![0],
            cellspace: cs.clone(),
            controls: ControlSet::scalars(&[0.0, 1.0]).unwrap(),
            cost: CostSpec::minimum_time(),
            period: 1.0,
            target: vec![0],
        };
        let layout = RomLayout::sw_x1_high(&cs, 8).unwrap();
        let image = export_rom(&doc, &layout).unwrap();
        assert_eq!(image.len(), 1);
        assert_eq!(import_rom(&image, &layout, &cs, 2).unwrap(), doc.control_index);
        // wrong length is a format error
        assert!(import_rom(&[], &layout, &cs, 2).is_err());
    }

    #[test]
    fn rom_rejects_colliding_none_word() {
        let mut doc = doc_fixture(4, 4, 3);
        // with 2 data bits, capacity 4 > 3 controls but all-ones = 3 would
        // work; with exactly 4 controls it must be rejected when NONEs exist
        doc.controls = ControlSet::scalars(&[0.0, 1.0, 2.0, 3.0]).unwrap();
        let layout = RomLayout::sw_x1_high(&doc.cellspace, 2).unwrap();
        assert!(export_rom(&doc, &layout).is_err());
    }

    #[test]
    fn manifest_fields() {
        let doc = doc_fixture(4, 4, 3);
        let layout = RomLayout::hw_x1_low(&doc.cellspace, 8).unwrap();
        let image = export_rom(&doc, &layout).unwrap();
        let manifest = rom_manifest(
            doc.cellspace.axes(),
            &layout,
            doc.controls.len(),
            Some(doc.controls.values()),
            &image,
        );
        assert_eq!(manifest["magic"], "ROM1");
        assert_eq!(manifest["address_bits"], 4);
        assert_eq!(manifest["data_bits"], 8);
        assert_eq!(manifest["axis_order"], serde_json::json!([1, 0]));
        assert_eq!(manifest["controls"]["count"], 3);
        assert_eq!(manifest["checksum_crc32"], crc32fast::hash(&image));
    }
}
