//! Time-dependent diffusion coefficients with closed-form antiderivatives.

use std::f64::consts::PI;

use crate::error::{Error, Result};

/// Closed-form families of `p(t)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ProfileKind {
    /// `p(t) = value`
    Constant { value: f64 },
    /// `p(t) = base + slope * t`
    Affine { base: f64, slope: f64 },
    /// `p(t) = base + amplitude * sin(frequency * t)`
    Sinusoidal {
        base: f64,
        amplitude: f64,
        frequency: f64,
    },
}

/// A diffusion coefficient `p(t)` valid on `[0, horizon]`, together with
/// its bounds `p1 <= p(t) <= p2` and `|p'(t)| <= dp_inf` on that window.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DiffusionProfile {
    kind: ProfileKind,
    horizon: f64,
    p1: f64,
    p2: f64,
    dp_inf: f64,
}

impl DiffusionProfile {
    pub fn new(kind: ProfileKind, horizon: f64) -> Result<Self> {
        if !(horizon.is_finite() && horizon > 0.0) {
            return Err(Error::invalid(format!(
                "profile horizon must be positive, got {horizon}"
            )));
        }
        let (p1, p2, dp_inf) = match kind {
            ProfileKind::Constant { value } => (value, value, 0.0),
            ProfileKind::Affine { base, slope } => {
                let end = base + slope * horizon;
                (base.min(end), base.max(end), slope.abs())
            }
            ProfileKind::Sinusoidal {
                base,
                amplitude,
                frequency,
            } => {
                if !(frequency.is_finite() && frequency > 0.0) {
                    return Err(Error::invalid("sinusoidal frequency must be positive"));
                }
                let (lo, hi) = sin_range(frequency, horizon);
                let (a, b) = (base + amplitude * lo, base + amplitude * hi);
                // cos(frequency * t) reaches 1 at t = 0, so the sup of |p'| is attained.
                (a.min(b), a.max(b), amplitude.abs() * frequency)
            }
        };
        if !(p1.is_finite() && p2.is_finite()) || p1 <= 0.0 {
            return Err(Error::invalid(format!(
                "diffusion coefficient must stay positive on [0, {horizon}] (min {p1})"
            )));
        }
        Ok(Self {
            kind,
            horizon,
            p1,
            p2,
            dp_inf,
        })
    }

    pub fn constant(value: f64, horizon: f64) -> Result<Self> {
        Self::new(ProfileKind::Constant { value }, horizon)
    }

    pub fn affine(base: f64, slope: f64, horizon: f64) -> Result<Self> {
        Self::new(ProfileKind::Affine { base, slope }, horizon)
    }

    pub fn sinusoidal(base: f64, amplitude: f64, frequency: f64, horizon: f64) -> Result<Self> {
        Self::new(
            ProfileKind::Sinusoidal {
                base,
                amplitude,
                frequency,
            },
            horizon,
        )
    }

    pub fn kind(&self) -> ProfileKind {
        self.kind
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn p1(&self) -> f64 {
        self.p1
    }

    pub fn p2(&self) -> f64 {
        self.p2
    }

    pub fn dp_inf(&self) -> f64 {
        self.dp_inf
    }

    pub fn is_constant(&self) -> bool {
        self.dp_inf == 0.0
    }

    pub fn value(&self, t: f64) -> f64 {
        match self.kind {
            ProfileKind::Constant { value } => value,
            ProfileKind::Affine { base, slope } => base + slope * t,
            ProfileKind::Sinusoidal {
                base,
                amplitude,
                frequency,
            } => base + amplitude * (frequency * t).sin(),
        }
    }

    /// Antiderivative with `P(0) = 0`.
    fn primitive(&self, t: f64) -> f64 {
        match self.kind {
            ProfileKind::Constant { value } => value * t,
            ProfileKind::Affine { base, slope } => base * t + 0.5 * slope * t * t,
            ProfileKind::Sinusoidal {
                base,
                amplitude,
                frequency,
            } => base * t + amplitude / frequency * (1.0 - (frequency * t).cos()),
        }
    }

    /// Exact `∫_{t0}^{t1} p(s) ds`.
    pub fn integral(&self, t0: f64, t1: f64) -> Result<f64> {
        if !(t0 >= 0.0 && t1 >= t0) {
            return Err(Error::invalid(format!(
                "integration window must satisfy 0 <= t0 <= t1, got ({t0}, {t1})"
            )));
        }
        // tolerate round-off at the window edge
        if t1 > self.horizon * (1.0 + 1e-12) {
            return Err(Error::invalid(format!(
                "t1 = {t1} lies beyond the profile horizon {}",
                self.horizon
            )));
        }
        if t0 == t1 {
            return Ok(0.0);
        }
        match self.kind {
            ProfileKind::Constant { value } => Ok(value * (t1 - t0)),
            ProfileKind::Affine { base, slope } => {
                Ok(base * (t1 - t0) + 0.5 * slope * (t1 - t0) * (t1 + t0))
            }
            ProfileKind::Sinusoidal { .. } => Ok(self.primitive(t1) - self.primitive(t0)),
        }
    }
}

/// Range of `sin(frequency * t)` for `t` in `[0, horizon]`.
fn sin_range(frequency: f64, horizon: f64) -> (f64, f64) {
    let end = frequency * horizon;
    let mut lo = 0.0f64.min(end.sin());
    let mut hi = 0.0f64.max(end.sin());
    // interior critical points at pi/2 + k*pi
    let mut k = 0.0;
    loop {
        let s = PI / 2.0 + k * PI;
        if s > end {
            break;
        }
        let v = s.sin();
        lo = lo.min(v);
        hi = hi.max(v);
        k += 1.0;
        if k > 4.0 {
            // both extremes already visited
            break;
        }
    }
    (lo, hi)
}
