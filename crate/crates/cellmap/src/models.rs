//! Plants, controllers and quantized closed loops.
//!
//! Two plant forms are supported: a discrete LTI map `x(k+1) = A·x(k) +
//! B·u(k)`, and a continuous vector field integrated over one sampling
//! period with a fixed-step classical RK4 scheme under zero-order hold.
//! [`discretize_zoh`] and [`lqr_gain`] provide the standard design baseline,
//! and [`QuantizedLoop`] places A/D and D/A quantizers on the measurement
//! and control paths of a feedback loop. The plant always steps the true
//! state; only the measurement seen by the controller is quantized.

use crate::quantization::{QuantizerSpec, VectorQuantizerSpec};
use crate::{Error, Result};
use nalgebra::DMatrix;
use std::sync::Arc;

/// Discrete-time linear plant `x(k+1) = A·x(k) + B·u(k)`.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteLti {
    a: DMatrix<f64>,
    b: DMatrix<f64>,
    period: f64,
}

impl DiscreteLti {
    /// `period` is the sampling period the map was designed for; it only
    /// enters cost bookkeeping, not the map itself.
    pub fn new(a: DMatrix<f64>, b: DMatrix<f64>, period: f64) -> Result<Self> {
        if a.nrows() != a.ncols() {
            return Err(Error::DimensionMismatch { expected: a.nrows(), got: a.ncols() });
        }
        if b.nrows() != a.nrows() {
            return Err(Error::DimensionMismatch { expected: a.nrows(), got: b.nrows() });
        }
        if a.iter().chain(b.iter()).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite);
        }
        if !(period > 0.0) || !period.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "sampling period must be positive, got {period}"
            )));
        }
        Ok(Self { a, b, period })
    }

    pub fn state_dim(&self) -> usize {
        self.a.nrows()
    }

    pub fn input_dim(&self) -> usize {
        self.b.ncols()
    }

    pub fn a(&self) -> &DMatrix<f64> {
        &self.a
    }

    pub fn b(&self) -> &DMatrix<f64> {
        &self.b
    }

    pub fn period(&self) -> f64 {
        self.period
    }

    /// One map application `A·x + B·u`.
    pub fn step(&self, x: &[f64], u: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.state_dim() {
            return Err(Error::DimensionMismatch { expected: self.state_dim(), got: x.len() });
        }
        if u.len() != self.input_dim() {
            return Err(Error::DimensionMismatch { expected: self.input_dim(), got: u.len() });
        }
        let n = self.state_dim();
        let mut next = vec![0.0; n];
        for i in 0..n {
            let mut acc = 0.0;
            for j in 0..n {
                acc += self.a[(i, j)] * x[j];
            }
            for j in 0..u.len() {
                acc += self.b[(i, j)] * u[j];
            }
            next[i] = acc;
        }
        Ok(next)
    }
}

type VectorField = Arc<dyn Fn(&[f64], &[f64]) -> Vec<f64> + Send + Sync>;

/// Continuous-time plant `ẋ = f(x, u)`.
#[derive(Clone)]
pub struct ContinuousOde {
    field: VectorField,
    state_dim: usize,
    input_dim: usize,
}

impl std::fmt::Debug for ContinuousOde {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ContinuousOde")
            .field("state_dim", &self.state_dim)
            .field("input_dim", &self.input_dim)
            .finish()
    }
}

impl ContinuousOde {
    pub fn new<F>(state_dim: usize, input_dim: usize, field: F) -> Self
    where
        F: Fn(&[f64], &[f64]) -> Vec<f64> + Send + Sync + 'static,
    {
        Self { field: Arc::new(field), state_dim, input_dim }
    }

    /// `ẋ1 = x2, ẋ2 = u`.
    pub fn double_integrator() -> Self {
        Self::new(2, 1, |x, u| vec![x[1], u[0]])
    }

    /// `ẋ1 = x2, ẋ2 = -x1 + u`.
    pub fn harmonic_oscillator() -> Self {
        Self::new(2, 1, |x, u| vec![x[1], -x[0] + u[0]])
    }

    /// DC motor with dominant time constant `tau` and gain `k`:
    /// `ẋ1 = x2, ẋ2 = -x2/tau + (k/tau)·u` (position, velocity).
    pub fn dc_motor(tau: f64, k: f64) -> Result<Self> {
        if !(tau > 0.0) || !tau.is_finite() || !k.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "motor constants must be finite with tau > 0, got tau={tau} k={k}"
            )));
        }
        Ok(Self::new(2, 1, move |x, u| vec![x[1], -x[1] / tau + k / tau * u[0]]))
    }

    pub fn state_dim(&self) -> usize {
        self.state_dim
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn eval(&self, x: &[f64], u: &[f64]) -> Vec<f64> {
        (self.field)(x, u)
    }
}

/// Classical fixed-step RK4 over `[0, t]` with `u` held constant.
pub fn integrate_rk4(
    ode: &ContinuousOde,
    x: &[f64],
    u: &[f64],
    t: f64,
    substeps: usize,
) -> Result<Vec<f64>> {
    if x.len() != ode.state_dim {
        return Err(Error::DimensionMismatch { expected: ode.state_dim, got: x.len() });
    }
    if u.len() != ode.input_dim {
        return Err(Error::DimensionMismatch { expected: ode.input_dim, got: u.len() });
    }
    if !(t > 0.0) || !t.is_finite() {
        return Err(Error::InvalidParameter(format!("integration time must be positive, got {t}")));
    }
    if substeps == 0 {
        return Err(Error::InvalidParameter("need at least one substep".into()));
    }
    let n = x.len();
    let h = t / substeps as f64;
    let mut y = x.to_vec();
    let mut stage = vec![0.0; n];
    for step in 0..substeps {
        let k1 = ode.eval(&y, u);
        for i in 0..n {
            stage[i] = y[i] + 0.5 * h * k1[i];
        }
        let k2 = ode.eval(&stage, u);
        for i in 0..n {
            stage[i] = y[i] + 0.5 * h * k2[i];
        }
        let k3 = ode.eval(&stage, u);
        for i in 0..n {
            stage[i] = y[i] + h * k3[i];
        }
        let k4 = ode.eval(&stage, u);
        for i in 0..n {
            y[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
        }
        if y.iter().any(|v| !v.is_finite()) {
            return Err(Error::Divergence { step });
        }
    }
    Ok(y)
}

/// A plant in either discrete or sampled-continuous form.
#[derive(Debug, Clone)]
pub enum Plant {
    Lti(DiscreteLti),
    Ode { ode: ContinuousOde, period: f64, substeps: usize },
}

impl Plant {
    /// Sampled continuous plant with the default of 4 RK4 substeps per
    /// sampling period.
    pub fn sampled_ode(ode: ContinuousOde, period: f64) -> Result<Self> {
        if !(period > 0.0) || !period.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "sampling period must be positive, got {period}"
            )));
        }
        Ok(Plant::Ode { ode, period, substeps: 4 })
    }

    pub fn with_substeps(self, substeps: usize) -> Result<Self> {
        match self {
            Plant::Ode { ode, period, .. } => {
                if substeps == 0 {
                    return Err(Error::InvalidParameter("need at least one substep".into()));
                }
                Ok(Plant::Ode { ode, period, substeps })
            }
            p @ Plant::Lti(_) => Ok(p),
        }
    }

    pub fn state_dim(&self) -> usize {
        match self {
            Plant::Lti(m) => m.state_dim(),
            Plant::Ode { ode, .. } => ode.state_dim(),
        }
    }

    pub fn input_dim(&self) -> usize {
        match self {
            Plant::Lti(m) => m.input_dim(),
            Plant::Ode { ode, .. } => ode.input_dim(),
        }
    }

    pub fn period(&self) -> f64 {
        match self {
            Plant::Lti(m) => m.period(),
            Plant::Ode { period, .. } => *period,
        }
    }

    /// Advance one sampling period.
    pub fn step(&self, x: &[f64], u: &[f64]) -> Result<Vec<f64>> {
        match self {
            Plant::Lti(m) => m.step(x, u),
            Plant::Ode { ode, period, substeps } => integrate_rk4(ode, x, u, *period, *substeps),
        }
    }
}

/// Zero-order-hold discretization of `ẋ = Ac·x + Bc·u` at period `t`:
/// `Ad = exp(Ac t)`, `Bd = ∫ exp(Ac s) Bc ds`, both obtained from one
/// matrix exponential of the augmented system.
pub fn discretize_zoh(
    ac: &DMatrix<f64>,
    bc: &DMatrix<f64>,
    t: f64,
) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let n = ac.nrows();
    if ac.ncols() != n {
        return Err(Error::DimensionMismatch { expected: n, got: ac.ncols() });
    }
    if bc.nrows() != n {
        return Err(Error::DimensionMismatch { expected: n, got: bc.nrows() });
    }
    if !(t > 0.0) || !t.is_finite() {
        return Err(Error::InvalidParameter(format!("sampling period must be positive, got {t}")));
    }
    let m = bc.ncols();
    let mut aug = DMatrix::<f64>::zeros(n + m, n + m);
    aug.view_mut((0, 0), (n, n)).copy_from(ac);
    aug.view_mut((0, n), (n, m)).copy_from(bc);
    let e = (aug * t).exp();
    let ad = e.view((0, 0), (n, n)).clone_owned();
    let bd = e.view((0, n), (n, m)).clone_owned();
    Ok((ad, bd))
}

/// Steady-state discrete LQR gain for `x(k+1) = Ad·x + Bd·u`,
/// `J = Σ xᵀQx + uᵀRu`, with the convention `u = -K·x`.
///
/// The Riccati fixed point is reached by direct iteration to a max-norm
/// difference below 1e-12.
pub fn lqr_gain(
    ad: &DMatrix<f64>,
    bd: &DMatrix<f64>,
    q: &DMatrix<f64>,
    r: &DMatrix<f64>,
) -> Result<DMatrix<f64>> {
    let n = ad.nrows();
    let m = bd.ncols();
    if ad.ncols() != n || bd.nrows() != n || q.nrows() != n || q.ncols() != n {
        return Err(Error::DimensionMismatch { expected: n, got: ad.ncols().max(bd.nrows()) });
    }
    if r.nrows() != m || r.ncols() != m {
        return Err(Error::DimensionMismatch { expected: m, got: r.nrows() });
    }
    const MAX_ITER: usize = 200_000;
    let mut p = q.clone();
    let mut converged = false;
    for _ in 0..MAX_ITER {
        let btp = bd.transpose() * &p;
        let gain_term = (r + &btp * bd)
            .try_inverse()
            .ok_or_else(|| Error::InvalidParameter("R + BᵀPB is singular".into()))?;
        let pn = q + ad.transpose() * &p * ad - ad.transpose() * &p * bd * &gain_term * &btp * ad;
        let diff = (&pn - &p).abs().max();
        p = pn;
        if diff < 1e-12 {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(Error::NoConvergence { iterations: MAX_ITER });
    }
    let btp = bd.transpose() * &p;
    let gain_term = (r + &btp * bd)
        .try_inverse()
        .ok_or_else(|| Error::InvalidParameter("R + BᵀPB is singular".into()))?;
    Ok(gain_term * btp * ad)
}

/// Where the loop's control comes from.
#[derive(Debug, Clone)]
pub enum ControlSource {
    /// State feedback `u = -K·x` on the measured state.
    Gain(DMatrix<f64>),
    /// The caller supplies `u` at every step.
    External,
    /// `u = 0`; an autonomous plant.
    Zero,
}

/// A feedback loop with optional quantizers on its interfaces.
///
/// The measurement path applies the A/D (quantize then take representative
/// values), the control path applies the D/A. With `da_on_input_term` the
/// D/A round-off instead acts componentwise on the whole input term `B·u`,
/// the nested placement some fixed-point realizations exhibit (discrete LTI
/// plants only).
#[derive(Debug, Clone)]
pub struct QuantizedLoop {
    plant: Plant,
    control: ControlSource,
    ad: Option<VectorQuantizerSpec>,
    da: Option<QuantizerSpec>,
    da_on_input_term: bool,
    guard: Option<Vec<(f64, f64)>>,
}

impl QuantizedLoop {
    pub fn new(plant: Plant, control: ControlSource) -> Result<Self> {
        if let ControlSource::Gain(k) = &control {
            if k.nrows() != plant.input_dim() {
                return Err(Error::DimensionMismatch {
                    expected: plant.input_dim(),
                    got: k.nrows(),
                });
            }
            if k.ncols() != plant.state_dim() {
                return Err(Error::DimensionMismatch {
                    expected: plant.state_dim(),
                    got: k.ncols(),
                });
            }
            if k.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite);
            }
        }
        Ok(Self { plant, control, ad: None, da: None, da_on_input_term: false, guard: None })
    }

    /// A/D quantizer on the measured state.
    pub fn with_ad(mut self, ad: VectorQuantizerSpec) -> Result<Self> {
        if ad.len() != self.plant.state_dim() {
            return Err(Error::DimensionMismatch {
                expected: self.plant.state_dim(),
                got: ad.len(),
            });
        }
        self.ad = Some(ad);
        Ok(self)
    }

    /// D/A quantizer on the control (componentwise for vector controls).
    pub fn with_da(mut self, da: QuantizerSpec) -> Self {
        self.da = Some(da);
        self
    }

    /// Apply the D/A round-off to the input term `B·u` instead of `u`.
    pub fn with_da_on_input_term(mut self, nested: bool) -> Self {
        self.da_on_input_term = nested;
        self
    }

    /// Box that [`simulate`] treats as a divergence limit.
    pub fn with_guard(mut self, guard: Vec<(f64, f64)>) -> Result<Self> {
        if guard.len() != self.plant.state_dim() {
            return Err(Error::DimensionMismatch {
                expected: self.plant.state_dim(),
                got: guard.len(),
            });
        }
        self.guard = Some(guard);
        Ok(self)
    }

    pub fn plant(&self) -> &Plant {
        &self.plant
    }

    pub fn control(&self) -> &ControlSource {
        &self.control
    }

    /// The same loop around a different plant of matching dimensions; how
    /// parameter sweeps perturb the plant without touching the interfaces.
    pub fn with_plant(&self, plant: Plant) -> Result<Self> {
        if plant.state_dim() != self.plant.state_dim()
            || plant.input_dim() != self.plant.input_dim()
        {
            return Err(Error::DimensionMismatch {
                expected: self.plant.state_dim(),
                got: plant.state_dim(),
            });
        }
        Ok(Self { plant, ..self.clone() })
    }

    /// The same loop with both quantizers removed.
    pub fn without_quantizers(&self) -> Self {
        Self { ad: None, da: None, da_on_input_term: false, ..self.clone() }
    }

    /// One closed-loop step. Exactly one control source must be in play:
    /// `u_ext` is required for [`ControlSource::External`] and rejected
    /// otherwise.
    pub fn step(&self, x: &[f64], u_ext: Option<&[f64]>) -> Result<Vec<f64>> {
        Ok(self.step_with_control(x, u_ext)?.0)
    }

    /// As [`Self::step`], also returning the control actually applied to the
    /// plant (after the D/A, when one is configured).
    pub fn step_with_control(&self, x: &[f64], u_ext: Option<&[f64]>) -> Result<(Vec<f64>, Vec<f64>)> {
        if x.len() != self.plant.state_dim() {
            return Err(Error::DimensionMismatch {
                expected: self.plant.state_dim(),
                got: x.len(),
            });
        }
        let measured: Vec<f64> = match &self.ad {
            Some(vq) => vq.roundoff(x)?,
            None => x.to_vec(),
        };
        let u_raw: Vec<f64> = match (&self.control, u_ext) {
            (ControlSource::Gain(k), None) => {
                let mut u = vec![0.0; k.nrows()];
                for (i, ui) in u.iter_mut().enumerate() {
                    let mut acc = 0.0;
                    for j in 0..k.ncols() {
                        acc += k[(i, j)] * measured[j];
                    }
                    *ui = -acc;
                }
                u
            }
            (ControlSource::External, Some(u)) => {
                if u.len() != self.plant.input_dim() {
                    return Err(Error::DimensionMismatch {
                        expected: self.plant.input_dim(),
                        got: u.len(),
                    });
                }
                u.to_vec()
            }
            (ControlSource::Zero, None) => vec![0.0; self.plant.input_dim()],
            (ControlSource::External, None) => {
                return Err(Error::InvalidParameter(
                    "loop expects an external control at every step".into(),
                ))
            }
            (_, Some(_)) => {
                return Err(Error::InvalidParameter(
                    "external control supplied to a loop with its own control source".into(),
                ))
            }
        };

        if self.da_on_input_term {
            let da = self.da.as_ref().ok_or_else(|| {
                Error::InvalidParameter("input-term round-off requires a D/A quantizer".into())
            })?;
            let Plant::Lti(m) = &self.plant else {
                return Err(Error::InvalidParameter(
                    "input-term round-off is only defined for discrete LTI plants".into(),
                ));
            };
            let n = m.state_dim();
            let mut next = vec![0.0; n];
            for i in 0..n {
                let mut bu = 0.0;
                for j in 0..u_raw.len() {
                    bu += m.b()[(i, j)] * u_raw[j];
                }
                let mut acc = da.roundoff(bu)?;
                for j in 0..n {
                    acc += m.a()[(i, j)] * x[j];
                }
                next[i] = acc;
            }
            return Ok((next, u_raw));
        }

        let u_applied: Vec<f64> = match &self.da {
            Some(q) => u_raw.iter().map(|&ui| q.roundoff(ui)).collect::<Result<_>>()?,
            None => u_raw,
        };
        let next = self.plant.step(x, &u_applied)?;
        Ok((next, u_applied))
    }
}

/// Per-step cost kinds.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CostKind {
    /// `x1² + |u|²` per step.
    QuadraticX1U,
    /// One sampling period per step (minimum-time).
    MinimumTime,
}

/// Optional binning of the raw stage cost into `levels` equal bins over
/// `[lo, hi]`; bin `i` is reported as the label `levels + i`, reproducing
/// the relabeled integer costs used by byte-oriented table realizations.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CostDiscretization {
    pub levels: usize,
    pub lo: f64,
    pub hi: f64,
}

impl CostDiscretization {
    pub fn new(levels: usize, lo: f64, hi: f64) -> Result<Self> {
        if levels == 0 {
            return Err(Error::InvalidParameter("need at least one cost bin".into()));
        }
        if !(lo < hi) || !lo.is_finite() || !hi.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "cost range [{lo}, {hi}] must have lo < hi"
            )));
        }
        Ok(Self { levels, lo, hi })
    }

    fn apply(&self, raw: f64) -> f64 {
        let w = (self.hi - self.lo) / self.levels as f64;
        let bin = (((raw - self.lo) / w).floor().max(0.0) as usize).min(self.levels - 1);
        (self.levels + bin) as f64
    }
}

/// Stage cost specification.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CostSpec {
    pub kind: CostKind,
    pub discretization: Option<CostDiscretization>,
}

impl CostSpec {
    pub fn quadratic_x1_u() -> Self {
        Self { kind: CostKind::QuadraticX1U, discretization: None }
    }

    pub fn minimum_time() -> Self {
        Self { kind: CostKind::MinimumTime, discretization: None }
    }

    pub fn with_discretization(mut self, d: CostDiscretization) -> Self {
        self.discretization = Some(d);
        self
    }

    /// Undiscretized stage cost of taking `u` from `state` over one period.
    pub fn raw_stage_cost(&self, state: &[f64], u: &[f64], period: f64) -> f64 {
        match self.kind {
            CostKind::QuadraticX1U => {
                state[0] * state[0] + u.iter().map(|ui| ui * ui).sum::<f64>()
            }
            CostKind::MinimumTime => period,
        }
    }

    /// Stage cost with the configured discretization applied.
    pub fn stage_cost(&self, state: &[f64], u: &[f64], period: f64) -> f64 {
        let raw = self.raw_stage_cost(state, u, period);
        match &self.discretization {
            Some(d) => d.apply(raw),
            None => raw,
        }
    }
}

/// A simulated closed-loop run. `costs[k]` is the cost accumulated over the
/// first `k` steps, so `costs` is one longer than `controls`.
#[derive(Debug, Clone, PartialEq)]
pub struct Trace {
    pub states: Vec<Vec<f64>>,
    pub controls: Vec<Vec<f64>>,
    pub costs: Vec<f64>,
}

impl Trace {
    pub fn total_cost(&self) -> f64 {
        *self.costs.last().unwrap_or(&0.0)
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }
}

/// Run the loop for `steps` steps from `x0`, accumulating the stage cost of
/// each executed transition. Leaving the loop's guard box (when one is
/// configured) is a divergence error.
pub fn simulate(lp: &QuantizedLoop, x0: &[f64], steps: usize, cost: &CostSpec) -> Result<Trace> {
    if matches!(lp.control, ControlSource::External) {
        return Err(Error::InvalidParameter(
            "simulate needs a self-contained control source (gain or zero)".into(),
        ));
    }
    let period = lp.plant.period();
    let mut states = Vec::with_capacity(steps + 1);
    let mut controls = Vec::with_capacity(steps);
    let mut costs = Vec::with_capacity(steps + 1);
    states.push(x0.to_vec());
    costs.push(0.0);
    let mut x = x0.to_vec();
    for step in 0..steps {
        let (next, u) = lp.step_with_control(&x, None)?;
        let stage = cost.stage_cost(&x, &u, period);
        costs.push(costs[step] + stage);
        controls.push(u);
        if next.iter().any(|v| !v.is_finite()) {
            return Err(Error::Divergence { step });
        }
        if let Some(guard) = &lp.guard {
            if next.iter().zip(guard).any(|(v, (lo, hi))| v < lo || v > hi) {
                return Err(Error::Divergence { step });
            }
        }
        states.push(next.clone());
        x = next;
    }
    Ok(Trace { states, controls, costs })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn mat(rows: usize, cols: usize, v: &[f64]) -> DMatrix<f64> {
        DMatrix::from_row_slice(rows, cols, v)
    }

    fn regulator() -> DiscreteLti {
        DiscreteLti::new(mat(2, 2, &[0.0, 1.0, -1.0, 1.0]), mat(2, 1, &[0.0, 1.0]), 1.0).unwrap()
    }

    // 4-decimal sampled harmonic oscillator, as printed in design tables
    fn oscillator_rounded() -> DiscreteLti {
        DiscreteLti::new(
            mat(2, 2, &[0.9950, 0.0998, -0.0998, 0.9950]),
            mat(2, 1, &[0.0050, 0.0998]),
            0.1,
        )
        .unwrap()
    }

    #[test]
    fn lti_step() {
        let m = regulator();
        assert_eq!(m.step(&[1.0, 0.0], &[0.0]).unwrap(), vec![0.0, -1.0]);
        assert_eq!(m.step(&[0.0, 0.0], &[0.0]).unwrap(), vec![0.0, 0.0]);
        // independent arithmetic: 0.9950*0.5 + 0.0998*0.5 and -0.0998*0.5 + 0.9950*0.5
        let next = oscillator_rounded().step(&[0.5, 0.5], &[0.0]).unwrap();
        assert_relative_eq!(next[0], 0.5474, max_relative = 1e-12);
        assert_relative_eq!(next[1], 0.4476, max_relative = 1e-12);
    }

    #[test]
    fn lti_rejects_dimension_mismatch() {
        let m = regulator();
        assert!(m.step(&[1.0], &[0.0]).is_err());
        assert!(m.step(&[1.0, 0.0], &[]).is_err());
        assert!(DiscreteLti::new(mat(2, 2, &[0.0; 4]), mat(1, 1, &[1.0]), 1.0).is_err());
    }

    #[test]
    fn rk4_exact_on_double_integrator() {
        // polynomial flow: RK4 is exact up to rounding
        let ode = ContinuousOde::double_integrator();
        let y = integrate_rk4(&ode, &[0.0, 0.0], &[1.0], 0.05, 1).unwrap();
        assert_relative_eq!(y[0], 0.00125, max_relative = 1e-13);
        assert_relative_eq!(y[1], 0.05, max_relative = 1e-13);
    }

    #[test]
    fn rk4_fixed_point_of_zero_field() {
        let ode = ContinuousOde::new(2, 1, |_, _| vec![0.0, 0.0]);
        let y = integrate_rk4(&ode, &[0.3, -0.7], &[5.0], 1.0, 8).unwrap();
        assert_eq!(y, vec![0.3, -0.7]);
    }

    #[test]
    fn rk4_matches_motor_closed_form() {
        // closed-form step response oracle: with x(0) = 0 and constant u,
        // x2(t) = k·u·(1 - exp(-t/tau)), x1(t) = k·u·(t - tau·(1 - exp(-t/tau)))
        let (tau, k, u, t) = (0.283, 0.906, 25.0, 0.01);
        let ode = ContinuousOde::dc_motor(tau, k).unwrap();
        let y = integrate_rk4(&ode, &[0.0, 0.0], &[u], t, 4).unwrap();
        let decay = 1.0 - (-t / tau).exp();
        assert_relative_eq!(y[1], k * u * decay, max_relative = 1e-10);
        assert_relative_eq!(y[0], k * u * (t - tau * decay), max_relative = 1e-8);
    }

    #[test]
    fn rk4_error_scales_as_fourth_order() {
        // halving the substep must cut the error by at least 8x
        let ode = ContinuousOde::harmonic_oscillator();
        let t = 1.0;
        let exact = [1.0f64.cos(), -(1.0f64.sin())]; // x(0)=(1,0), u=0
        let err = |sub: usize| {
            let y = integrate_rk4(&ode, &[1.0, 0.0], &[0.0], t, sub).unwrap();
            (y[0] - exact[0]).abs().max((y[1] - exact[1]).abs())
        };
        let e2 = err(2);
        let e4 = err(4);
        assert!(e4 * 8.0 <= e2, "e2={e2}, e4={e4}");
    }

    #[test]
    fn zoh_reference_matrices() {
        let ac = mat(2, 2, &[0.0, 1.0, -1.0, 0.0]);
        let bc = mat(2, 1, &[0.0, 1.0]);
        let (ad, bd) = discretize_zoh(&ac, &bc, 0.1).unwrap();
        for (got, want) in ad.iter().zip([0.9950, -0.0998, 0.0998, 0.9950]) {
            assert!((got - want).abs() < 0.5e-4, "{got} vs {want}");
        }
        for (got, want) in bd.iter().zip([0.0050, 0.0998]) {
            assert!((got - want).abs() < 0.5e-4, "{got} vs {want}");
        }
    }

    #[test]
    fn zoh_zero_dynamics_and_double_integrator() {
        let (ad, bd) = discretize_zoh(&mat(1, 1, &[0.0]), &mat(1, 1, &[2.0]), 0.5).unwrap();
        assert_relative_eq!(ad[(0, 0)], 1.0, max_relative = 1e-14);
        assert_relative_eq!(bd[(0, 0)], 1.0, max_relative = 1e-12);
        // closed form for the double integrator at t=1
        let (ad, bd) =
            discretize_zoh(&mat(2, 2, &[0.0, 1.0, 0.0, 0.0]), &mat(2, 1, &[0.0, 1.0]), 1.0).unwrap();
        assert_relative_eq!(ad[(0, 1)], 1.0, max_relative = 1e-12);
        assert_relative_eq!(bd[(0, 0)], 0.5, max_relative = 1e-12);
        assert_relative_eq!(bd[(1, 0)], 1.0, max_relative = 1e-12);
    }

    #[test]
    fn zoh_semigroup_property() {
        let ac = mat(2, 2, &[0.0, 1.0, -1.0, -0.3]);
        let bc = mat(2, 1, &[0.0, 1.0]);
        let (ad_sum, _) = discretize_zoh(&ac, &bc, 0.35).unwrap();
        let (ad1, _) = discretize_zoh(&ac, &bc, 0.15).unwrap();
        let (ad2, _) = discretize_zoh(&ac, &bc, 0.2).unwrap();
        let prod = ad1 * ad2;
        assert!((ad_sum - prod).abs().max() < 1e-9);
    }

    #[test]
    fn lqr_reference_gains() {
        let q = mat(2, 2, &[1.0, 0.0, 0.0, 0.0]);
        let r = mat(1, 1, &[1.0]);
        let ac = mat(2, 2, &[0.0, 1.0, -1.0, 0.0]);
        let bc = mat(2, 1, &[0.0, 1.0]);
        let (ad, bd) = discretize_zoh(&ac, &bc, 0.1).unwrap();
        let k = lqr_gain(&ad, &bd, &q, &r).unwrap();
        assert!((k[(0, 0)] - 0.3513).abs() < 5e-4, "{}", k[(0, 0)]);
        assert!((k[(0, 1)] - 0.8886).abs() < 5e-4, "{}", k[(0, 1)]);

        let m = regulator();
        let k = lqr_gain(m.a(), m.b(), &q, &r).unwrap();
        // u = F·x convention has F = -K
        assert!((-k[(0, 0)] - 0.654).abs() < 1e-3, "{}", -k[(0, 0)]);
        assert!((-k[(0, 1)] - -0.486).abs() < 1e-3, "{}", -k[(0, 1)]);
    }

    #[test]
    fn lqr_scalar_deadbeat() {
        // A = 0: the state dies by itself, so any control is pure cost
        let k = lqr_gain(&mat(1, 1, &[0.0]), &mat(1, 1, &[1.0]), &mat(1, 1, &[1.0]), &mat(1, 1, &[1.0]))
            .unwrap();
        assert_relative_eq!(k[(0, 0)], 0.0, epsilon = 1e-12);
    }

    #[test]
    fn lqr_closed_loops_are_stable() {
        let q = mat(2, 2, &[1.0, 0.0, 0.0, 0.0]);
        let r = mat(1, 1, &[1.0]);
        for m in [regulator(), oscillator_rounded()] {
            let k = lqr_gain(m.a(), m.b(), &q, &r).unwrap();
            let closed = m.a() - m.b() * &k;
            let radius = closed
                .complex_eigenvalues()
                .iter()
                .map(|l| l.norm())
                .fold(0.0f64, f64::max);
            assert!(radius < 1.0, "spectral radius {radius}");
        }
    }

    #[test]
    fn loop_without_quantizers_is_plain_step() {
        let m = regulator();
        let lp = QuantizedLoop::new(Plant::Lti(m.clone()), ControlSource::Zero).unwrap();
        let x = [0.3, -0.4];
        assert_eq!(lp.step(&x, None).unwrap(), m.step(&x, &[0.0]).unwrap());
    }

    #[test]
    fn loop_roundoff_trace_step() {
        // x <- [0.625 x]_R realized as A=0, B=1, u = 0.625·x, D/A round-off
        let lp = roundoff_loop(0.625);
        assert_eq!(lp.step(&[0.875], None).unwrap(), vec![0.5]);
    }

    fn roundoff_loop(a: f64) -> QuantizedLoop {
        let plant =
            DiscreteLti::new(mat(1, 1, &[0.0]), mat(1, 1, &[1.0]), 1.0).unwrap();
        QuantizedLoop::new(Plant::Lti(plant), ControlSource::Gain(mat(1, 1, &[-a])))
            .unwrap()
            .with_da(QuantizerSpec::new(0.125, 7).unwrap())
    }

    #[test]
    fn loop_control_source_exclusivity() {
        let m = regulator();
        let lp = QuantizedLoop::new(Plant::Lti(m.clone()), ControlSource::Zero).unwrap();
        assert!(lp.step(&[0.0, 0.0], Some(&[1.0])).is_err());
        let ext = QuantizedLoop::new(Plant::Lti(m), ControlSource::External).unwrap();
        assert!(ext.step(&[0.0, 0.0], None).is_err());
        assert_eq!(ext.step(&[1.0, 0.0], Some(&[0.0])).unwrap(), vec![0.0, -1.0]);
    }

    #[test]
    fn simulate_limit_cycle_sequence() {
        let lp = roundoff_loop(0.625);
        let q = QuantizerSpec::new(0.125, 7).unwrap();
        let x0 = q.roundoff(0.87).unwrap();
        let trace = simulate(&lp, &[x0], 8, &CostSpec::minimum_time()).unwrap();
        let xs: Vec<f64> = trace.states.iter().map(|s| s[0]).collect();
        assert_eq!(xs, vec![0.875, 0.5, 0.375, 0.25, 0.125, 0.125, 0.125, 0.125, 0.125]);
    }

    #[test]
    fn simulate_zero_steps() {
        let lp = roundoff_loop(0.625);
        let trace = simulate(&lp, &[0.5], 0, &CostSpec::quadratic_x1_u()).unwrap();
        assert_eq!(trace.states.len(), 1);
        assert_eq!(trace.total_cost(), 0.0);
    }

    #[test]
    fn simulate_guard_box_divergence() {
        let plant = DiscreteLti::new(mat(1, 1, &[2.0]), mat(1, 1, &[0.0]), 1.0).unwrap();
        let lp = QuantizedLoop::new(Plant::Lti(plant), ControlSource::Zero)
            .unwrap()
            .with_guard(vec![(-4.0, 4.0)])
            .unwrap();
        assert!(matches!(
            simulate(&lp, &[1.0], 10, &CostSpec::minimum_time()),
            Err(Error::Divergence { step: 2 })
        ));
    }

    #[test]
    fn stage_costs() {
        let quad = CostSpec::quadratic_x1_u();
        assert_eq!(quad.stage_cost(&[0.0, 0.0], &[0.0], 0.1), 0.0);
        assert_eq!(quad.stage_cost(&[1.0, 0.3], &[1.0], 0.1), 2.0);
        let mt = CostSpec::minimum_time();
        assert_eq!(mt.stage_cost(&[0.9, 0.1], &[5.0], 0.01), 0.01);
        // 16 bins over [0, 2] relabeled 16..=31
        let binned = CostSpec::quadratic_x1_u()
            .with_discretization(CostDiscretization::new(16, 0.0, 2.0).unwrap());
        assert_eq!(binned.stage_cost(&[0.0, 0.0], &[0.0], 0.1), 16.0);
        assert_eq!(binned.stage_cost(&[1.0, 0.0], &[1.0], 0.1), 31.0);
        assert_eq!(binned.stage_cost(&[0.5, 0.0], &[0.0], 0.1), 18.0); // 0.25 -> bin 2
    }

    #[test]
    fn quantized_oscillator_loop_step_matches_hand_arithmetic() {
        // scripted arithmetic oracle for one step of the 8-bit A/D, 4-bit
        // D/A loop from (0.5, 0.5)
        let q = mat(2, 2, &[1.0, 0.0, 0.0, 0.0]);
        let r = mat(1, 1, &[1.0]);
        let (ad, bd) = discretize_zoh(
            &mat(2, 2, &[0.0, 1.0, -1.0, 0.0]),
            &mat(2, 1, &[0.0, 1.0]),
            0.1,
        )
        .unwrap();
        let k = lqr_gain(&ad, &bd, &q, &r).unwrap();
        let plant = DiscreteLti::new(ad.clone(), bd.clone(), 0.1).unwrap();
        let ad_q = QuantizerSpec::signed_bits(8, 1.0).unwrap();
        let da_q = QuantizerSpec::signed_bits(4, 1.0).unwrap();
        let lp = QuantizedLoop::new(Plant::Lti(plant), ControlSource::Gain(k.clone()))
            .unwrap()
            .with_ad(VectorQuantizerSpec::uniform(ad_q, 2).unwrap())
            .unwrap()
            .with_da(da_q);

        // measurement: 0.5 / (1/128) = 64 exactly, so 0.5 measures as 0.5
        let measure = |v: f64| (v / 0.0078125 + 0.5).floor().clamp(-128.0, 128.0) * 0.0078125;
        let xm = [measure(0.5), measure(0.5)];
        assert_eq!(xm, [0.5, 0.5]);
        let u_raw = -(k[(0, 0)] * xm[0] + k[(0, 1)] * xm[1]);
        let u = (u_raw / 0.125 + 0.5).floor().clamp(-8.0, 8.0) * 0.125;
        let want = [
            ad[(0, 0)] * 0.5 + ad[(0, 1)] * 0.5 + bd[(0, 0)] * u,
            ad[(1, 0)] * 0.5 + ad[(1, 1)] * 0.5 + bd[(1, 0)] * u,
        ];
        assert_eq!(lp.step(&[0.5, 0.5], None).unwrap(), want);
        // the kick is a whole D/A level here: u_raw ≈ -0.62 rounds to -0.625
        assert_eq!(u, -0.625);
    }

    #[test]
    fn input_term_roundoff_placement() {
        // nested placement quantizes B·u, not u
        let m = oscillator_rounded();
        let k = mat(1, 2, &[0.3513, 0.8886]);
        let da = QuantizerSpec::new(0.125, 8).unwrap();
        let lp = QuantizedLoop::new(Plant::Lti(m.clone()), ControlSource::Gain(k.clone()))
            .unwrap()
            .with_da(da)
            .with_da_on_input_term(true);
        let x = [0.5, 0.5];
        let u = -(0.3513 * 0.5 + 0.8886 * 0.5);
        let bu = [0.0050 * u, 0.0998 * u];
        let want: Vec<f64> = m
            .step(&x, &[0.0])
            .unwrap()
            .iter()
            .zip(bu)
            .map(|(ax, b)| ax + da.roundoff(b).unwrap())
            .collect();
        assert_eq!(lp.step(&x, None).unwrap(), want);
    }
}
