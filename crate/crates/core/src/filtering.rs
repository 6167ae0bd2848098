//! Global backward solver: capped-gain spectral filter, the scalar
//! functions `A(x) = eˣ/(1+2x)` and `B(x) = √x·eˣ` used to pick the cap,
//! and the a-priori error bound.
//!
//! Given data `f̄` with `‖u(·,τ) − f̄‖ ≤ δ` and priors on `‖u₀‖_{L²}` and
//! `‖u₀‖_{H¹₀}`, the reconstruction is
//!
//! ```text
//! g = Σ_i min{exp(λ_i ∫₀^τ p), α} ⟨f̄, e_i⟩ e_i,    α = A(B⁻¹(√(p₂τ)·‖u₀‖_{H¹₀} / δ)),
//! ```
//!
//! or `g = 0` when `δ ≥ ‖u₀‖ exp(−λ₁p₂τ)`.

use crate::error::{Error, Result};
use crate::spectral::{DiffusionProfile, EigenBasis, SpectralField};

/// A-priori knowledge about the unknown initial state.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Priors {
    pub l2: f64,
    pub h01: f64,
}

impl Priors {
    pub fn new(l2: f64, h01: f64) -> Result<Self> {
        if !(l2 > 0.0 && h01 > 0.0 && l2.is_finite() && h01.is_finite()) {
            return Err(Error::invalid(format!(
                "priors must be positive and finite, got l2 = {l2}, h01 = {h01}"
            )));
        }
        Ok(Self { l2, h01 })
    }

    pub fn of(field: &SpectralField, basis: &EigenBasis) -> Result<Self> {
        Self::new(field.l2(), field.h01(basis))
    }
}

/// `A(x) = eˣ/(1+2x)`, minimal (`√e/2`) at `x = 1/2`.
pub fn eval_a(x: f64) -> f64 {
    x.exp() / (1.0 + 2.0 * x)
}

/// `B(x) = √x·eˣ`, a strictly increasing bijection of `(0, ∞)`.
pub fn eval_b(x: f64) -> f64 {
    x.sqrt() * x.exp()
}

/// Inverse of [`eval_b`]: bracketing, then safeguarded Newton on
/// `log B(x) = ½ ln x + x`.
pub fn invert_b(y: f64) -> Result<f64> {
    if !(y > 0.0 && y.is_finite()) {
        return Err(Error::invalid(format!("B⁻¹ needs a positive finite argument, got {y}")));
    }
    let target = y.ln();
    let f = |x: f64| 0.5 * x.ln() + x - target;
    let mut x = if target > 1.0 {
        target - 0.5 * target.ln()
    } else {
        (2.0 * target).exp().min(0.5)
    };
    let (mut lo, mut hi) = (x, x);
    while f(lo) > 0.0 {
        lo *= 0.25;
    }
    while f(hi) < 0.0 {
        hi = 2.0 * hi + 1.0;
    }
    for _ in 0..200 {
        let fx = f(x);
        if fx == 0.0 {
            break;
        }
        if fx < 0.0 {
            lo = x;
        } else {
            hi = x;
        }
        let step = fx / (0.5 / x + 1.0);
        let mut next = x - step;
        if !(next > lo && next < hi) {
            next = 0.5 * (lo + hi);
        }
        if (next - x).abs() <= 1e-16 * x {
            x = next;
            break;
        }
        x = next;
    }
    Ok(x)
}

/// The unique `x ≥ max(lower, 1/2)` with `A(x) = beta`.
pub fn invert_a_increasing(beta: f64, lower: f64) -> Result<f64> {
    if !(lower >= 0.0) {
        return Err(Error::invalid("branch floor must be nonnegative"));
    }
    let floor = lower.max(0.5);
    let a_floor = eval_a(floor);
    if !(beta >= a_floor) || !beta.is_finite() {
        return Err(Error::invalid(format!(
            "β = {beta} is below A({floor}) = {a_floor}; no solution on the increasing branch"
        )));
    }
    if beta == a_floor {
        return Ok(floor);
    }
    let target = beta.ln();
    // convex and increasing on the branch
    let g = |x: f64| x - (1.0 + 2.0 * x).ln() - target;
    let dg = |x: f64| 1.0 - 2.0 / (1.0 + 2.0 * x);
    let mut lo = floor;
    let mut hi = floor + 1.0;
    while g(hi) < 0.0 {
        lo = hi;
        hi = 2.0 * hi + 1.0;
    }
    let mut x = hi;
    for _ in 0..200 {
        let gx = g(x);
        if gx == 0.0 {
            break;
        }
        if gx < 0.0 {
            lo = x;
        } else {
            hi = x;
        }
        let d = dg(x);
        let mut next = if d > 0.0 { x - gx / d } else { f64::NAN };
        if !(next > lo && next < hi) {
            next = 0.5 * (lo + hi);
        }
        if (next - x).abs() <= 1e-16 * x {
            x = next;
            break;
        }
        x = next;
    }
    Ok(x)
}

/// Outcome of the parameter rule.
#[derive(Debug, Clone, PartialEq)]
pub struct FilterSelection {
    /// Filter cap; `None` when the zero reconstruction is returned.
    pub alpha: Option<f64>,
    pub zeta: f64,
    pub gate_zero: bool,
    /// `√((1+ζ)p₂τ)‖u₀‖_{H¹₀} / √(ln(√(2ζλ₁p₂τ)‖u₀‖/δ))`.
    pub bound: f64,
    pub diagnostics: FilterDiagnostics,
}

/// Internal quantities of the parameter rule.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct FilterDiagnostics {
    /// `√(p₂τ)‖u₀‖_{H¹₀}/δ`
    pub b_argument: f64,
    /// `B⁻¹(b_argument)`; equals `λ̄p₂τ`
    pub x_bar: Option<f64>,
    pub lambda_bar: Option<f64>,
    /// `α·exp(−λ̄p₂τ)`
    pub theta: Option<f64>,
    /// `√(p₂τ)‖u₀‖_{H¹₀}/√(x̄)`, the bound before the logarithmic relaxation.
    pub sharp_bound: Option<f64>,
}

/// Default `ζ = 1/(2λ₁p₂τ)`.
pub fn default_zeta(lambda1: f64, profile: &DiffusionProfile, tau: f64) -> f64 {
    1.0 / (2.0 * lambda1 * profile.p2() * tau)
}

/// The logarithmic error bound for a given `ζ`.
pub fn log_bound(
    lambda1: f64,
    profile: &DiffusionProfile,
    tau: f64,
    priors: Priors,
    delta: f64,
    zeta: f64,
) -> Result<f64> {
    if !(zeta > 0.0) {
        return Err(Error::invalid(format!("ζ must be positive, got {zeta}")));
    }
    let p2t = profile.p2() * tau;
    let ln_arg = 0.5 * (2.0 * zeta * lambda1 * p2t).ln() + priors.l2.ln() - delta.ln();
    if !(ln_arg > 0.0) {
        return Err(Error::rejected(format!(
            "logarithm argument √(2ζλ₁p₂τ)‖u₀‖/δ = {} is not > 1 (need ζ > δ²/(2λ₁p₂τ‖u₀‖²) = {})",
            ln_arg.exp(),
            delta * delta / (2.0 * lambda1 * p2t * priors.l2 * priors.l2)
        )));
    }
    Ok(((1.0 + zeta) * p2t).sqrt() * priors.h01 / ln_arg.sqrt())
}

/// Chooses the filter cap (or the zero reconstruction) for noise level
/// `effective_delta` at horizon `tau`. `zeta` defaults to `1/(2λ₁p₂τ)`.
pub fn select_alpha(
    lambda1: f64,
    tau: f64,
    profile: &DiffusionProfile,
    priors: Priors,
    effective_delta: f64,
    zeta: Option<f64>,
) -> Result<FilterSelection> {
    if !(effective_delta > 0.0) || !(tau > 0.0) || !(lambda1 > 0.0) {
        return Err(Error::invalid(format!(
            "need δ > 0, τ > 0, λ₁ > 0 (got δ = {effective_delta}, τ = {tau}, λ₁ = {lambda1})"
        )));
    }
    let zeta = zeta.unwrap_or_else(|| default_zeta(lambda1, profile, tau));
    let p2t = profile.p2() * tau;
    let bound = log_bound(lambda1, profile, tau, priors, effective_delta, zeta)?;
    let b_argument = p2t.sqrt() * priors.h01 / effective_delta;

    if effective_delta >= priors.l2 * (-lambda1 * p2t).exp() {
        return Ok(FilterSelection {
            alpha: None,
            zeta,
            gate_zero: true,
            bound,
            diagnostics: FilterDiagnostics {
                b_argument,
                ..Default::default()
            },
        });
    }

    let x_bar = invert_b(b_argument)?;
    let alpha = eval_a(x_bar);
    let floor = eval_a(lambda1 * p2t);
    if !(alpha > floor) {
        return Err(Error::rejected(format!(
            "cap α = {alpha} does not exceed A(λ₁p₂τ) = {floor}; the filter sup is not interior"
        )));
    }
    let theta = alpha * (-x_bar).exp();
    if !(theta > 0.0 && theta < 1.0) {
        return Err(Error::rejected(format!("convex weight Θ = {theta} outside (0, 1)")));
    }
    let lambda_bar = invert_a_increasing(alpha, lambda1 * p2t)? / p2t;
    Ok(FilterSelection {
        alpha: Some(alpha),
        zeta,
        gate_zero: false,
        bound,
        diagnostics: FilterDiagnostics {
            b_argument,
            x_bar: Some(x_bar),
            lambda_bar: Some(lambda_bar),
            theta: Some(theta),
            sharp_bound: Some(p2t.sqrt() * priors.h01 / x_bar.sqrt()),
        },
    })
}

/// Per-mode gains `min{exp(λ_i ∫₀^τ p), α}`.
pub fn filter_gains(
    basis: &EigenBasis,
    alpha: f64,
    tau: f64,
    profile: &DiffusionProfile,
) -> Result<Vec<f64>> {
    if !(alpha > 0.0) || !(tau > 0.0) {
        return Err(Error::invalid("filter needs α > 0 and τ > 0"));
    }
    let p = profile.integral(0.0, tau)?;
    let ln_alpha = alpha.ln();
    Ok(basis
        .eigenvalues()
        .iter()
        .map(|l| {
            let e = l * p;
            if e >= ln_alpha {
                alpha
            } else {
                e.exp()
            }
        })
        .collect())
}

/// Applies the capped filter to coefficients observed at time `tau`.
pub fn apply_filter(
    observed: &SpectralField,
    basis: &EigenBasis,
    alpha: f64,
    tau: f64,
    profile: &DiffusionProfile,
) -> Result<SpectralField> {
    check_len(observed, basis)?;
    let gains = filter_gains(basis, alpha, tau, profile)?;
    Ok(SpectralField::new(
        observed
            .coeffs
            .iter()
            .zip(&gains)
            .map(|(f, g)| f * g)
            .collect(),
    ))
}

/// Reconstructs `u(·, 0)` from whole-domain data at time `tau`.
pub fn global_backward(
    fbar: &SpectralField,
    basis: &EigenBasis,
    profile: &DiffusionProfile,
    tau: f64,
    delta: f64,
    priors: Priors,
    zeta: Option<f64>,
) -> Result<(SpectralField, FilterSelection)> {
    check_len(fbar, basis)?;
    let selection = select_alpha(basis.lambda1(), tau, profile, priors, delta, zeta)?;
    let g = match selection.alpha {
        Some(alpha) => apply_filter(fbar, basis, alpha, tau, profile)?,
        None => SpectralField::zeros(basis.len()),
    };
    Ok((g, selection))
}

/// `sup_{λ ≥ λ₁} (1 − α e^{−λp₂τ}) / √(λp₂τ)`, the bias factor of the filter.
pub fn filter_sup_factor(alpha: f64, lambda1: f64, p2_tau: f64) -> f64 {
    let f = |x: f64| (1.0 - alpha * (-x).exp()) / x.sqrt();
    let x1 = lambda1 * p2_tau;
    let mut sup = f(x1).max(0.0);
    if let Ok(x) = invert_a_increasing(alpha, x1) {
        sup = sup.max(f(x));
    }
    sup
}

/// Exact inversion on modes `1..=cutoff`, zero above.
pub fn truncation_baseline(
    observed: &SpectralField,
    basis: &EigenBasis,
    cutoff: usize,
    tau: f64,
    profile: &DiffusionProfile,
) -> Result<SpectralField> {
    check_len(observed, basis)?;
    if cutoff == 0 || cutoff > basis.len() {
        return Err(Error::invalid(format!(
            "cutoff must lie in 1..={}, got {cutoff}",
            basis.len()
        )));
    }
    let p = profile.integral(0.0, tau)?;
    Ok(SpectralField::new(
        observed
            .coeffs
            .iter()
            .zip(basis.eigenvalues())
            .enumerate()
            .map(|(i, (f, l))| if i < cutoff { f * (l * p).exp() } else { 0.0 })
            .collect(),
    ))
}

/// A-priori bound for the truncation baseline:
/// `exp(λ_c ∫₀^τ p)·δ + ‖u₀‖_{H¹₀}/√λ_{c+1}`.
pub fn truncation_bound(
    basis: &EigenBasis,
    cutoff: usize,
    tau: f64,
    profile: &DiffusionProfile,
    delta: f64,
    priors: Priors,
) -> Result<f64> {
    if cutoff == 0 || cutoff > basis.len() {
        return Err(Error::invalid("cutoff out of range"));
    }
    let p = profile.integral(0.0, tau)?;
    let l = basis.domain().length();
    let next = ((cutoff + 1) as f64 * std::f64::consts::PI / l).powi(2);
    Ok((basis.eigenvalues()[cutoff - 1] * p).exp() * delta + priors.h01 / next.sqrt())
}

/// Cutoff minimising [`truncation_bound`].
pub fn auto_cutoff(
    basis: &EigenBasis,
    tau: f64,
    profile: &DiffusionProfile,
    delta: f64,
    priors: Priors,
) -> Result<usize> {
    let mut best = (1, f64::INFINITY);
    for c in 1..=basis.len() {
        let b = truncation_bound(basis, c, tau, profile, delta, priors)?;
        if b < best.1 {
            best = (c, b);
        }
    }
    Ok(best.0)
}

fn check_len(field: &SpectralField, basis: &EigenBasis) -> Result<()> {
    if field.len() != basis.len() {
        return Err(Error::invalid(format!(
            "field has {} modes, basis has {}",
            field.len(),
            basis.len()
        )));
    }
    Ok(())
}
