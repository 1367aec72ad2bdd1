//! System definition files: a JSON document describing the plant, the cell
//! partition, interface quantizers, the control source, the cost, and the
//! target set. Unknown keys are rejected, and schema errors report the JSON
//! path they occurred at.

use crate::CliError;
use cellmap::cellspace::{AxisSpec, CellSpace};
use cellmap::models::{
    lqr_gain, ContinuousOde, ControlSource, CostDiscretization, CostKind, CostSpec, DiscreteLti,
    Plant, QuantizedLoop,
};
use cellmap::quantization::{QuantizerSpec, VectorQuantizerSpec};
use cellmap::reach::ControlSet;
use nalgebra::DMatrix;
use serde::Deserialize;

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SystemConfig {
    pub plant: PlantConfig,
    pub cellspace: CellSpaceConfig,
    #[serde(default)]
    pub quantizers: Option<QuantizerConfig>,
    #[serde(default)]
    pub control: Option<ControlConfig>,
    #[serde(default)]
    pub cost: Option<CostConfig>,
    #[serde(default)]
    pub target: Option<TargetConfig>,
}

#[derive(Debug, Deserialize)]
#[serde(tag = "kind", deny_unknown_fields)]
pub enum PlantConfig {
    #[serde(rename = "discrete-lti")]
    DiscreteLti { a: Vec<Vec<f64>>, b: Vec<Vec<f64>>, t: f64 },
    #[serde(rename = "ode")]
    Ode {
        name: String,
        #[serde(default)]
        params: Option<OdeParams>,
        t: f64,
        #[serde(default)]
        substeps: Option<usize>,
    },
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OdeParams {
    #[serde(default)]
    pub tau: Option<f64>,
    #[serde(default)]
    pub k: Option<f64>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CellSpaceConfig {
    pub axes: Vec<AxisConfig>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AxisConfig {
    pub lo: f64,
    pub hi: f64,
    pub bits: u32,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QuantizerConfig {
    #[serde(default)]
    pub ad_bits: Option<u32>,
    /// Per-axis A/D ranges; defaults to the cell-space axis ranges.
    #[serde(default)]
    pub ad_ranges: Option<Vec<[f64; 2]>>,
    #[serde(default)]
    pub da_bits: Option<u32>,
    #[serde(default)]
    pub da_range: Option<[f64; 2]>,
    /// Apply the D/A round-off to the whole input term B·u instead of u.
    #[serde(default)]
    pub da_on_bu: bool,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ControlConfig {
    #[serde(default)]
    pub gain: Option<Vec<Vec<f64>>>,
    #[serde(default)]
    pub control_set: Option<ControlSetConfig>,
    #[serde(default)]
    pub lqr: Option<LqrConfig>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ControlSetConfig {
    #[serde(default)]
    pub values: Option<Vec<f64>>,
    #[serde(default)]
    pub bits: Option<u32>,
    #[serde(default)]
    pub range: Option<[f64; 2]>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LqrConfig {
    pub q: Vec<Vec<f64>>,
    pub r: Vec<Vec<f64>>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CostConfig {
    pub kind: String,
    #[serde(default)]
    pub discretize: Option<DiscretizeConfig>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DiscretizeConfig {
    pub levels: usize,
    pub lo: f64,
    pub hi: f64,
}

#[derive(Debug, Deserialize)]
#[serde(untagged)]
pub enum TargetConfig {
    Named(String),
    Cells { cells: Vec<Vec<usize>> },
}

fn input<T>(e: impl std::fmt::Display) -> Result<T, CliError> {
    Err(CliError::Input(e.to_string()))
}

pub fn load(path: &std::path::Path) -> Result<SystemConfig, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Input(format!("cannot read {}: {e}", path.display())))?;
    let mut de = serde_json::Deserializer::from_str(&text);
    let config: SystemConfig = serde_path_to_error::deserialize(&mut de).map_err(|e| {
        CliError::Input(format!("{} at JSON path `{}`: {}", path.display(), e.path(), e.inner()))
    })?;
    Ok(config)
}

fn matrix(rows: &[Vec<f64>], what: &str) -> Result<DMatrix<f64>, CliError> {
    if rows.is_empty() || rows[0].is_empty() {
        return input(format!("{what} matrix must be nonempty"));
    }
    let cols = rows[0].len();
    if rows.iter().any(|r| r.len() != cols) {
        return input(format!("{what} matrix rows must have equal length"));
    }
    let flat: Vec<f64> = rows.iter().flatten().copied().collect();
    Ok(DMatrix::from_row_slice(rows.len(), cols, &flat))
}

impl SystemConfig {
    pub fn build_cellspace(&self) -> Result<CellSpace, CliError> {
        let axes = self
            .cellspace
            .axes
            .iter()
            .map(|a| AxisSpec::with_bits(a.lo, a.hi, a.bits))
            .collect::<cellmap::Result<Vec<_>>>()
            .or_else(input)?;
        CellSpace::new(axes).or_else(input)
    }

    pub fn build_plant(&self) -> Result<Plant, CliError> {
        match &self.plant {
            PlantConfig::DiscreteLti { a, b, t } => {
                let a = matrix(a, "plant.a")?;
                let b = matrix(b, "plant.b")?;
                Ok(Plant::Lti(DiscreteLti::new(a, b, *t).or_else(input)?))
            }
            PlantConfig::Ode { name, params, t, substeps } => {
                let ode = match name.as_str() {
                    "double-integrator" => ContinuousOde::double_integrator(),
                    "harmonic-oscillator" => ContinuousOde::harmonic_oscillator(),
                    "dc-motor" => {
                        let p = params
                            .as_ref()
                            .ok_or_else(|| {
                                CliError::Input("dc-motor needs params.tau and params.k".into())
                            })?;
                        let (tau, k) = match (p.tau, p.k) {
                            (Some(tau), Some(k)) => (tau, k),
                            _ => {
                                return input("dc-motor needs params.tau and params.k")
                            }
                        };
                        ContinuousOde::dc_motor(tau, k).or_else(input)?
                    }
                    other => return input(format!("unknown ODE `{other}`")),
                };
                let plant = Plant::sampled_ode(ode, *t).or_else(input)?;
                match substeps {
                    Some(s) => plant.with_substeps(*s).or_else(input),
                    None => Ok(plant),
                }
            }
        }
    }

    fn build_scalar_quantizer(bits: u32, lo: f64, hi: f64) -> Result<QuantizerSpec, CliError> {
        if lo == 0.0 {
            QuantizerSpec::unsigned_bits(bits, hi).or_else(input)
        } else if lo == -hi {
            QuantizerSpec::signed_bits(bits, hi).or_else(input)
        } else {
            input(format!(
                "quantizer range [{lo}, {hi}] must be anchored at zero or symmetric about it"
            ))
        }
    }

    fn build_ad(&self, cs: &CellSpace) -> Result<Option<VectorQuantizerSpec>, CliError> {
        let Some(q) = &self.quantizers else { return Ok(None) };
        let Some(bits) = q.ad_bits else { return Ok(None) };
        let ranges: Vec<[f64; 2]> = match &q.ad_ranges {
            Some(r) => {
                if r.len() != cs.dim() {
                    return input(format!(
                        "quantizers.ad_ranges lists {} axes, cell space has {}",
                        r.len(),
                        cs.dim()
                    ));
                }
                r.clone()
            }
            None => cs.axes().iter().map(|a| [a.lo, a.hi]).collect(),
        };
        let components = ranges
            .iter()
            .map(|&[lo, hi]| Self::build_scalar_quantizer(bits, lo, hi))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Some(VectorQuantizerSpec::new(components).or_else(input)?))
    }

    fn build_da(&self) -> Result<Option<QuantizerSpec>, CliError> {
        let Some(q) = &self.quantizers else { return Ok(None) };
        match (q.da_bits, q.da_range) {
            (Some(bits), Some([lo, hi])) => Ok(Some(Self::build_scalar_quantizer(bits, lo, hi)?)),
            (None, None) => Ok(None),
            _ => input("quantizers.da_bits and quantizers.da_range must be given together"),
        }
    }

    /// The loop's own control source (zero when the config only has a
    /// control set for the search commands).
    fn build_control_source(&self, plant: &Plant) -> Result<ControlSource, CliError> {
        let Some(control) = &self.control else { return Ok(ControlSource::Zero) };
        let picks = [control.gain.is_some(), control.lqr.is_some()];
        if picks.iter().filter(|&&p| p).count() > 1 {
            return input("control accepts at most one of `gain` and `lqr`");
        }
        if let Some(gain) = &control.gain {
            return Ok(ControlSource::Gain(matrix(gain, "control.gain")?));
        }
        if let Some(lqr) = &control.lqr {
            let Plant::Lti(m) = plant else {
                return input("control.lqr needs a discrete-lti plant");
            };
            let q = matrix(&lqr.q, "control.lqr.q")?;
            let r = matrix(&lqr.r, "control.lqr.r")?;
            let k = lqr_gain(m.a(), m.b(), &q, &r).or_else(input)?;
            return Ok(ControlSource::Gain(k));
        }
        Ok(ControlSource::Zero)
    }

    /// Assemble the closed loop; `quantized` keeps the configured A/D and
    /// D/A in place, the exact mode strips them.
    pub fn build_loop(&self, cs: &CellSpace, quantized: bool) -> Result<QuantizedLoop, CliError> {
        let plant = self.build_plant()?;
        let control = self.build_control_source(&plant)?;
        let mut lp = QuantizedLoop::new(plant, control).or_else(input)?;
        if quantized {
            if let Some(ad) = self.build_ad(cs)? {
                lp = lp.with_ad(ad).or_else(input)?;
            }
            if let Some(da) = self.build_da()? {
                lp = lp.with_da(da);
            }
            if let Some(q) = &self.quantizers {
                lp = lp.with_da_on_input_term(q.da_on_bu);
            }
        }
        Ok(lp)
    }

    /// Admissible control set for the search commands: an explicit
    /// `control.control_set`, or the D/A lattice when only the quantizer is
    /// configured.
    pub fn build_control_set(&self) -> Result<ControlSet, CliError> {
        if let Some(control) = &self.control {
            if let Some(cs) = &control.control_set {
                return match (&cs.values, cs.bits, cs.range) {
                    (Some(values), None, None) => ControlSet::scalars(values).or_else(input),
                    (None, Some(bits), Some([lo, hi])) => {
                        ControlSet::da_lattice(bits, lo, hi).or_else(input)
                    }
                    _ => input(
                        "control.control_set needs either `values` or `bits` plus `range`",
                    ),
                };
            }
        }
        if let Some(q) = &self.quantizers {
            if let (Some(bits), Some([lo, hi])) = (q.da_bits, q.da_range) {
                return ControlSet::da_lattice(bits, lo, hi).or_else(input);
            }
        }
        input("no control set: give control.control_set or quantizers.da_bits/da_range")
    }

    pub fn build_cost(&self) -> Result<CostSpec, CliError> {
        let Some(cost) = &self.cost else {
            return Ok(CostSpec::quadratic_x1_u());
        };
        let kind = match cost.kind.as_str() {
            "quadratic-x1-u" => CostKind::QuadraticX1U,
            "minimum-time" => CostKind::MinimumTime,
            other => return input(format!("unknown cost kind `{other}`")),
        };
        let mut spec = CostSpec { kind, discretization: None };
        if let Some(d) = &cost.discretize {
            spec = spec.with_discretization(
                CostDiscretization::new(d.levels, d.lo, d.hi).or_else(input)?,
            );
        }
        Ok(spec)
    }

    pub fn build_target(&self, cs: &CellSpace) -> Result<Vec<usize>, CliError> {
        match &self.target {
            None => Ok(vec![cs.nearest_cell(&vec![0.0; cs.dim()]).or_else(input)?]),
            Some(TargetConfig::Named(name)) if name == "origin" => {
                Ok(vec![cs.nearest_cell(&vec![0.0; cs.dim()]).or_else(input)?])
            }
            Some(TargetConfig::Named(other)) => {
                input(format!("unknown target `{other}` (expected \"origin\" or cells)"))
            }
            Some(TargetConfig::Cells { cells }) => {
                if cells.is_empty() {
                    return input("target.cells must be nonempty");
                }
                cells
                    .iter()
                    .map(|tuple| cs.flat_index(tuple).or_else(input))
                    .collect()
            }
        }
    }

    /// Modify one plant matrix entry for a parameter sweep: `aIJ` sets
    /// `A[i][j]`, `daIJ` adds to it.
    pub fn build_swept_lti(&self, param: &SweepParam, value: f64) -> Result<DiscreteLti, CliError> {
        let PlantConfig::DiscreteLti { a, b, t } = &self.plant else {
            return input("parameter sweeps need a discrete-lti plant");
        };
        let mut a = matrix(a, "plant.a")?;
        let b = matrix(b, "plant.b")?;
        if param.row >= a.nrows() || param.col >= a.ncols() {
            return input(format!(
                "sweep entry a[{}][{}] outside the {}x{} plant matrix",
                param.row,
                param.col,
                a.nrows(),
                a.ncols()
            ));
        }
        match param.kind {
            SweepKind::Set => a[(param.row, param.col)] = value,
            SweepKind::Add => a[(param.row, param.col)] += value,
        }
        DiscreteLti::new(a, b, *t).or_else(input)
    }

    /// Baseline parameter value for the modified-cells metric.
    pub fn sweep_baseline(&self, param: &SweepParam) -> Result<f64, CliError> {
        match param.kind {
            SweepKind::Add => Ok(0.0),
            SweepKind::Set => {
                let PlantConfig::DiscreteLti { a, .. } = &self.plant else {
                    return input("parameter sweeps need a discrete-lti plant");
                };
                a.get(param.row)
                    .and_then(|row| row.get(param.col))
                    .copied()
                    .ok_or_else(|| CliError::Input("sweep entry outside plant matrix".into()))
            }
        }
    }
}

/// Which plant entry a sweep varies and how.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepKind {
    /// `aIJ=...`: set the entry to each value.
    Set,
    /// `daIJ=...`: add each value to the entry.
    Add,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SweepParam {
    pub kind: SweepKind,
    pub row: usize,
    pub col: usize,
}

/// A sweep flag `NAME=lo:hi:step` with NAME one of `aIJ` or `daIJ` (single
/// digit indices).
pub fn parse_sweep(spec: &str) -> Result<(SweepParam, Vec<f64>), CliError> {
    let (name, range) = spec
        .split_once('=')
        .ok_or_else(|| CliError::Input(format!("sweep `{spec}` must look like a01=lo:hi:step")))?;
    let (kind, suffix) = if let Some(rest) = name.strip_prefix("da") {
        (SweepKind::Add, rest)
    } else if let Some(rest) = name.strip_prefix('a') {
        (SweepKind::Set, rest)
    } else {
        return Err(CliError::Input(format!("sweep parameter `{name}` must start with a or da")));
    };
    let digits: Vec<u32> = suffix.chars().map(|c| c.to_digit(10)).collect::<Option<_>>().ok_or_else(
        || CliError::Input(format!("sweep parameter `{name}` must name a matrix entry like a01")),
    )?;
    if digits.len() != 2 {
        return Err(CliError::Input(format!(
            "sweep parameter `{name}` must name a matrix entry like a01"
        )));
    }
    let param = SweepParam { kind, row: digits[0] as usize, col: digits[1] as usize };
    let parts: Vec<&str> = range.split(':').collect();
    if parts.len() != 3 {
        return Err(CliError::Input(format!("sweep range `{range}` must be lo:hi:step")));
    }
    let lo: f64 = parts[0]
        .parse()
        .map_err(|_| CliError::Input(format!("bad sweep bound `{}`", parts[0])))?;
    let hi: f64 = parts[1]
        .parse()
        .map_err(|_| CliError::Input(format!("bad sweep bound `{}`", parts[1])))?;
    let step: f64 = parts[2]
        .parse()
        .map_err(|_| CliError::Input(format!("bad sweep step `{}`", parts[2])))?;
    if !(step > 0.0) || !step.is_finite() || hi < lo {
        return Err(CliError::Input(format!("sweep range `{range}` must have lo <= hi, step > 0")));
    }
    let n = ((hi - lo) / step).round() as usize;
    let mut values: Vec<f64> = (0..=n).map(|i| lo + i as f64 * step).collect();
    if let Some(last) = values.last_mut() {
        if (*last - hi).abs() < step * 1e-9 {
            *last = hi;
        }
    }
    values.retain(|v| *v <= hi + step * 1e-9);
    Ok((param, values))
}

/// Comma-separated state vector, as in `--x0 "0.5,0.5"`.
pub fn parse_state(text: &str) -> Result<Vec<f64>, CliError> {
    text.split(',')
        .map(|part| {
            part.trim()
                .parse::<f64>()
                .map_err(|_| CliError::Input(format!("bad state component `{part}`")))
        })
        .collect()
}

