//! Saturating mid-tread quantizers and fixed-point round-off arithmetic.
//!
//! A quantizer with sensitivity `delta` and saturation level `saturation`
//! maps a real input to an integer level in `[-saturation, saturation]`:
//! inputs beyond `±(saturation + 1/2)·delta` clamp to `±saturation`, and
//! inside that band the level is the nearest multiple of `delta`, with exact
//! half-grid ties rounding toward `+∞`. Level `k` represents the value
//! `k·delta`.

use crate::{Error, Result};

/// How values between grid points are mapped to a level.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum RoundingMode {
    /// Round to the nearest level; ties toward `+∞`. The mode used by the
    /// round-off traces this crate reproduces.
    #[default]
    RoundHalfUp,
    /// Drop the fractional part of `x / delta` (round toward zero).
    Truncate,
}

/// A scalar saturating quantizer.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuantizerSpec {
    delta: f64,
    saturation: i64,
    mode: RoundingMode,
}

impl QuantizerSpec {
    /// Round-half-up quantizer with the given sensitivity and saturation.
    pub fn new(delta: f64, saturation: i64) -> Result<Self> {
        Self::with_mode(delta, saturation, RoundingMode::RoundHalfUp)
    }

    pub fn with_mode(delta: f64, saturation: i64, mode: RoundingMode) -> Result<Self> {
        if !delta.is_finite() || delta <= 0.0 {
            return Err(Error::InvalidParameter(format!(
                "quantizer sensitivity must be positive and finite, got {delta}"
            )));
        }
        if saturation < 1 {
            return Err(Error::InvalidParameter(format!(
                "quantizer saturation must be at least 1, got {saturation}"
            )));
        }
        Ok(Self { delta, saturation, mode })
    }

    /// Word-length constructor for a nonnegative range: `2^bits` levels
    /// `0..2^bits - 1` anchored at zero, `delta = hi / 2^bits`.
    ///
    /// Matches the unsigned fixed-point styling where a `bits`-bit word over
    /// `[0, hi]` holds the level directly. The negative half of the level
    /// range exists on the spec but is never produced by in-range inputs.
    pub fn unsigned_bits(bits: u32, hi: f64) -> Result<Self> {
        if bits == 0 || bits > 32 {
            return Err(Error::InvalidParameter(format!("word length must be 1..=32, got {bits}")));
        }
        if !hi.is_finite() || hi <= 0.0 {
            return Err(Error::InvalidParameter(format!("range top must be positive, got {hi}")));
        }
        let levels = 1i64 << bits;
        Self::new(hi / levels as f64, levels - 1)
    }

    /// Word-length constructor for a symmetric range `[-half_range,
    /// half_range]`: level 0 sits at the range midpoint and
    /// `delta = half_range / 2^(bits-1)`, so levels `±2^(bits-1)` land
    /// exactly on the range ends.
    pub fn signed_bits(bits: u32, half_range: f64) -> Result<Self> {
        if bits == 0 || bits > 32 {
            return Err(Error::InvalidParameter(format!("word length must be 1..=32, got {bits}")));
        }
        if !half_range.is_finite() || half_range <= 0.0 {
            return Err(Error::InvalidParameter(format!(
                "half range must be positive, got {half_range}"
            )));
        }
        let m = 1i64 << (bits - 1);
        Self::new(half_range / m as f64, m)
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }

    pub fn saturation(&self) -> i64 {
        self.saturation
    }

    pub fn mode(&self) -> RoundingMode {
        self.mode
    }

    /// Map a real value to its level.
    pub fn quantize(&self, x: f64) -> Result<i64> {
        if !x.is_finite() {
            return Err(Error::NonFinite);
        }
        let m = self.saturation as f64;
        if x > (m + 0.5) * self.delta {
            return Ok(self.saturation);
        }
        if x <= -(m + 0.5) * self.delta {
            return Ok(-self.saturation);
        }
        let level = match self.mode {
            // floor(x/Δ + 1/2): exact .5 ties go up.
            RoundingMode::RoundHalfUp => (x / self.delta + 0.5).floor(),
            RoundingMode::Truncate => (x / self.delta).trunc(),
        };
        Ok((level as i64).clamp(-self.saturation, self.saturation))
    }

    /// Representative value of a level: `level·delta`.
    pub fn dequantize(&self, level: i64) -> Result<f64> {
        if level.abs() > self.saturation {
            return Err(Error::LevelOutOfRange { level, saturation: self.saturation });
        }
        Ok(level as f64 * self.delta)
    }

    /// Quantize then dequantize: the `[·]_R` round-off operation.
    pub fn roundoff(&self, x: f64) -> Result<f64> {
        self.dequantize(self.quantize(x)?)
    }
}

/// Multiply two reals and round the product off on the given grid, as a
/// fixed-point multiplier does.
pub fn fixed_point_multiply(a: f64, b: f64, q: &QuantizerSpec) -> Result<f64> {
    if !a.is_finite() || !b.is_finite() {
        return Err(Error::NonFinite);
    }
    q.roundoff(a * b)
}

/// One quantizer per state axis.
#[derive(Debug, Clone, PartialEq)]
pub struct VectorQuantizerSpec {
    components: Vec<QuantizerSpec>,
}

impl VectorQuantizerSpec {
    pub fn new(components: Vec<QuantizerSpec>) -> Result<Self> {
        if components.is_empty() {
            return Err(Error::InvalidParameter("need at least one component quantizer".into()));
        }
        Ok(Self { components })
    }

    /// The same scalar quantizer replicated over `n` axes.
    pub fn uniform(spec: QuantizerSpec, n: usize) -> Result<Self> {
        Self::new(vec![spec; n.max(1)])
    }

    pub fn len(&self) -> usize {
        self.components.len()
    }

    pub fn is_empty(&self) -> bool {
        self.components.is_empty()
    }

    pub fn components(&self) -> &[QuantizerSpec] {
        &self.components
    }

    fn check_dim(&self, got: usize) -> Result<()> {
        if got != self.components.len() {
            return Err(Error::DimensionMismatch { expected: self.components.len(), got });
        }
        Ok(())
    }

    /// Componentwise quantization.
    pub fn quantize(&self, x: &[f64]) -> Result<Vec<i64>> {
        self.check_dim(x.len())?;
        x.iter().zip(&self.components).map(|(&xi, q)| q.quantize(xi)).collect()
    }

    pub fn dequantize(&self, levels: &[i64]) -> Result<Vec<f64>> {
        self.check_dim(levels.len())?;
        levels.iter().zip(&self.components).map(|(&l, q)| q.dequantize(l)).collect()
    }

    /// Componentwise round-off.
    pub fn roundoff(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_dim(x.len())?;
        x.iter().zip(&self.components).map(|(&xi, q)| q.roundoff(xi)).collect()
    }
}
