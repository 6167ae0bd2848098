//! Observability constants for `‖v(T)‖_Ω ≤ K e^{K/T} ‖v(T)‖_ω^μ ‖v(0)‖^{1−μ}`
//! on an interval with `ω ⊇ (x₀ − r, x₀ + r)`, the derived chain `c₁…c₄`,
//! and instance-wise checks of the inequalities they feed.
//!
//! Large quantities (`K^{2/μ}` and everything downstream) are carried as
//! logarithms; the plain values saturate to `inf`.

use nalgebra::{DMatrix, SymmetricEigen};

use crate::error::{Error, Result};
use crate::spectral::{
    evolve, sub_norm, synthesize_initial, DiffusionProfile, DomainSpec, EigenBasis, SpectralField,
    Subdomain,
};

/// Values beyond this are reported through their logarithm only.
pub const OVERFLOW_CEILING: f64 = 1e300;

/// `c₁ = max{μK^{2/μ}(1−μ)^{(1−μ)/μ}, 2K/μ}`, `c₂ = (1−μ)/μ`,
/// `c₃ = max{√c₁, c₁/2}`, `c₄ = c₂`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CChain {
    pub ln_c1: f64,
    pub c2: f64,
    pub ln_c3: f64,
    pub c4: f64,
}

impl CChain {
    pub fn c1(&self) -> f64 {
        saturate(self.ln_c1)
    }

    pub fn c3(&self) -> f64 {
        saturate(self.ln_c3)
    }
}

fn saturate(ln_v: f64) -> f64 {
    if ln_v > OVERFLOW_CEILING.ln() {
        f64::INFINITY
    } else {
        ln_v.exp()
    }
}

/// Evaluates the chain for `ln K` and `μ ∈ (0, 1)`.
pub fn derive_c_chain_log(ln_k: f64, mu: f64) -> Result<CChain> {
    if !(mu > 0.0 && mu < 1.0) {
        return Err(Error::rejected(format!("μ must lie in (0, 1), got {mu}")));
    }
    if ln_k.is_nan() {
        return Err(Error::invalid("ln K is NaN"));
    }
    let first = mu.ln() + 2.0 / mu * ln_k + (1.0 - mu) / mu * (1.0 - mu).ln();
    let second = 2f64.ln() + ln_k - mu.ln();
    let ln_c1 = first.max(second);
    let ln_c3 = (0.5 * ln_c1).max(ln_c1 - 2f64.ln());
    let c2 = (1.0 - mu) / mu;
    Ok(CChain {
        ln_c1,
        c2,
        ln_c3,
        c4: c2,
    })
}

pub fn derive_c_chain(k: f64, mu: f64) -> Result<CChain> {
    if !(k > 0.0) {
        return Err(Error::rejected(format!("K must be positive, got {k}")));
    }
    derive_c_chain_log(k.ln(), mu)
}

/// Constants of the convex-domain observability estimate (`n = 1`).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ObservabilityConstants {
    /// `R²|p′|∞/(2p₁²)`
    pub big_c0: f64,
    /// `3|p′|∞/p₁`
    pub big_c1: f64,
    pub xi: f64,
    pub ell: f64,
    pub s_ell: f64,
    pub k: f64,
    pub ln_k: f64,
    pub mu: f64,
    pub chain: CChain,
    pub r: f64,
    pub radius: f64,
}

/// Convex-case constants for a ball of radius `r` around the domain centre.
pub fn constants_convex(
    domain: &DomainSpec,
    r: f64,
    profile: &DiffusionProfile,
    xi: f64,
) -> Result<ObservabilityConstants> {
    let radius = domain.radius();
    if !(r > 0.0 && r < radius) {
        return Err(Error::rejected(format!("need 0 < r < R = {radius}, got r = {r}")));
    }
    if !(xi > 0.0 && xi < 1.0) {
        return Err(Error::rejected(format!("ξ must lie in (0, 1), got {xi}")));
    }
    let (p1, dp) = (profile.p1(), profile.dp_inf());
    if dp > 0.0 && !(radius * radius < 2.0 * p1 * p1 / dp) {
        return Err(Error::rejected(format!(
            "smallness condition R² < 2p₁²/|p′|∞ violated: {} ≥ {}",
            radius * radius,
            2.0 * p1 * p1 / dp
        )));
    }
    let big_c0 = radius * radius * dp / (2.0 * p1 * p1);
    let big_c1 = 3.0 * dp / p1;
    if !(big_c0 < 1.0) {
        return Err(Error::rejected(format!("C0 = {big_c0} must be < 1")));
    }
    let ln15 = 1.5f64.ln();
    let (r2, big_r2) = (r * r, radius * radius);
    let (ell, s_ell) = if big_c0 == 0.0 {
        let base = 2f64.powf(2.0 + xi) * big_r2 * big_c1.exp() / (xi * ln15 * r2);
        let ell = base.powf(1.0 / (1.0 - xi)) - 1.0;
        (ell, big_c1.exp() * (1.0 + ell).ln() / ln15)
    } else {
        let tail = 1.0 - (2.0f64 / 3.0).powf(big_c0);
        let base = 4.0 * big_r2 * big_c1.exp() / (r2 * tail);
        let ell = base.powf(1.0 / (1.0 - big_c0)) - 1.0;
        (ell, big_c1.exp() * (1.0 + ell).powf(big_c0) / tail)
    };
    if !(ell > 1.0 && ell.is_finite()) {
        return Err(Error::rejected(format!("ℓ = {ell} is not a finite value > 1")));
    }
    let one_s = 1.0 + s_ell;
    let ln_ka = ((1.0 + big_c0 * one_s) * 4f64.ln()
        + (1.0 + 2.0 * big_c0 * one_s) * (1.0 + ell).ln()
        + 2.0 * big_c1 * one_s
        + r2 * ell / (4.0 * p1))
        / (2.0 * one_s);
    let kb = r2 * ell / (4.0 * p1 * one_s);
    let ln_k = ln_ka.max(kb.ln());
    let mu = 1.0 / (2.0 * one_s);
    let chain = derive_c_chain_log(ln_k, mu)?;
    Ok(ObservabilityConstants {
        big_c0,
        big_c1,
        xi,
        ell,
        s_ell,
        k: saturate(ln_k),
        ln_k,
        mu,
        chain,
        r,
        radius,
    })
}

/// Radius of the largest ball about the domain centre inside `subdomain`,
/// kept strictly below `R` so that the whole domain is admissible too.
pub fn observation_radius(domain: &DomainSpec, subdomain: &Subdomain) -> Result<f64> {
    let r = subdomain.inner_radius(domain.center())?;
    Ok(r.min((1.0 - 1e-3) * domain.radius()))
}

/// Result of an inequality evaluated on one instance.
#[derive(Debug, Clone, PartialEq)]
pub struct CheckReport {
    pub lhs: f64,
    pub rhs: f64,
    pub holds: bool,
    /// Set when the check could not be evaluated.
    pub skipped: Option<String>,
}

impl CheckReport {
    fn from_logs(ln_lhs: f64, ln_rhs: f64) -> Self {
        Self {
            lhs: ln_lhs.exp(),
            rhs: saturate(ln_rhs),
            holds: ln_lhs <= ln_rhs + 1e-12 * ln_rhs.abs().max(1.0),
            skipped: None,
        }
    }

    fn skipped(reason: String) -> Self {
        Self {
            lhs: f64::NAN,
            rhs: f64::NAN,
            holds: true,
            skipped: Some(reason),
        }
    }
}

/// `‖v(T)‖_Ω ≤ K e^{K/T} ‖v(T)‖_ω^μ ‖v(0)‖^{1−μ}` for the evolution of `u0`.
#[allow(clippy::too_many_arguments)]
pub fn holder_check(
    u0: &SpectralField,
    basis: &EigenBasis,
    profile: &DiffusionProfile,
    t: f64,
    gram: &DMatrix<f64>,
    ln_k: f64,
    mu: f64,
) -> Result<CheckReport> {
    let l0 = u0.l2();
    if l0 == 0.0 {
        return Err(Error::invalid("initial state must be nonzero"));
    }
    let ut = evolve(u0, basis, profile, 0.0, t)?;
    let ln_rhs = ln_k + ln_k.exp() / t + mu * sub_norm(&ut.coeffs, gram).ln() + (1.0 - mu) * l0.ln();
    Ok(CheckReport::from_logs(ut.l2().ln(), ln_rhs))
}

/// `‖u₀‖ ≤ exp(p₂T‖u₀‖²_{H¹₀}/‖u₀‖²)·‖u(T)‖`.
pub fn backward_estimate_check(
    u0: &SpectralField,
    basis: &EigenBasis,
    profile: &DiffusionProfile,
    t: f64,
) -> Result<CheckReport> {
    let l0 = u0.l2();
    if l0 == 0.0 {
        return Err(Error::invalid("initial state must be nonzero"));
    }
    let ratio = (u0.h01(basis) / l0).powi(2);
    let ut = evolve(u0, basis, profile, 0.0, t)?;
    Ok(CheckReport::from_logs(
        l0.ln(),
        profile.p2() * t * ratio + ut.l2().ln(),
    ))
}

/// `C = √max{p₂/μ, K/(μλ₁)}`.
pub fn stability_constant(ln_k: f64, mu: f64, p2: f64, lambda1: f64) -> f64 {
    (p2 / mu).max(saturate(ln_k) / (mu * lambda1)).sqrt()
}

/// `‖u₀‖ ≤ C√(1+T+1/T)‖u₀‖_{H¹₀}/√ln(‖u₀‖/‖u(T)‖_ω)`; skipped when the
/// logarithm is not positive.
#[allow(clippy::too_many_arguments)]
pub fn conditional_stability_check(
    u0: &SpectralField,
    basis: &EigenBasis,
    profile: &DiffusionProfile,
    t: f64,
    gram: &DMatrix<f64>,
    ln_k: f64,
    mu: f64,
) -> Result<CheckReport> {
    let l0 = u0.l2();
    if l0 == 0.0 {
        return Err(Error::invalid("initial state must be nonzero"));
    }
    let ut = evolve(u0, basis, profile, 0.0, t)?;
    let omega = sub_norm(&ut.coeffs, gram);
    let ln_arg = l0.ln() - omega.ln();
    if !(ln_arg > 0.0) {
        return Ok(CheckReport::skipped(format!(
            "‖u(T)‖_ω = {omega} is not below ‖u₀‖ = {l0}"
        )));
    }
    let c = stability_constant(ln_k, mu, profile.p2(), basis.lambda1());
    let rhs = c * (1.0 + t + 1.0 / t).sqrt() * u0.h01(basis) / ln_arg.sqrt();
    Ok(CheckReport::from_logs(l0.ln(), rhs.ln()))
}

/// Fitted `(K, μ)` for which the Hölder inequality holds on every sample.
#[derive(Debug, Clone, PartialEq)]
pub struct EmpiricalConstants {
    pub k: f64,
    pub ln_k: f64,
    pub mu: f64,
    pub chain: CChain,
    pub samples: usize,
}

/// Sample set for the empirical fit: `count` random fields per decay rate,
/// every unit mode, and the backward images `D_T⁻¹q` of the eigenvectors of
/// the Gram matrix restricted to modes with `λ_i∫₀^T p < 30`.
pub fn empirical_samples(
    basis: &EigenBasis,
    profile: &DiffusionProfile,
    t: f64,
    gram: &DMatrix<f64>,
    count: usize,
    seed: u64,
) -> Result<Vec<SpectralField>> {
    let n = basis.len();
    let mut out = Vec::new();
    for (j, decay) in [2.0, 3.0, 4.0].iter().enumerate() {
        for s in 0..count as u64 {
            out.push(synthesize_initial(*decay, n, seed.wrapping_add(1000 * j as u64 + s))?);
        }
    }
    for i in 1..=n {
        out.push(SpectralField::mode(n, i));
    }
    let prop = basis.propagator(profile, 0.0, t)?;
    let active = prop.iter().take_while(|d| -d.ln() < 30.0).count();
    if active > 0 {
        let block = gram.view((0, 0), (active, active)).into_owned();
        let eig = SymmetricEigen::new(block);
        for q in eig.eigenvectors.column_iter() {
            let mut c = vec![0.0; n];
            for i in 0..active {
                c[i] = q[i] / prop[i];
            }
            out.push(SpectralField::new(c));
        }
    }
    Ok(out)
}

/// Fits `(K, μ)` over `samples` so that `ln K + K/T ≥ max_s(b_s − μa_s)`
/// with `b = ln(‖v(T)‖/‖v(0)‖)` and `a = ln(‖v(T)‖_ω/‖v(0)‖)`, then picks
/// the `μ` on a grid that minimises `c₁`.
pub fn fit_empirical(
    basis: &EigenBasis,
    profile: &DiffusionProfile,
    t: f64,
    gram: &DMatrix<f64>,
    samples: &[SpectralField],
) -> Result<EmpiricalConstants> {
    let mut pts = Vec::with_capacity(samples.len());
    for s in samples {
        let l0 = s.l2();
        if l0 == 0.0 {
            continue;
        }
        let ut = evolve(s, basis, profile, 0.0, t)?;
        let (whole, omega) = (ut.l2(), sub_norm(&ut.coeffs, gram));
        if whole == 0.0 || omega == 0.0 {
            continue;
        }
        pts.push(((omega / l0).ln(), (whole / l0).ln()));
    }
    if pts.is_empty() {
        return Err(Error::invalid("no usable samples for the empirical fit"));
    }
    let mut best: Option<(f64, f64, CChain)> = None;
    for j in 1..200 {
        let mu = j as f64 / 200.0;
        let m = pts
            .iter()
            .map(|(a, b)| b - mu * a)
            .fold(f64::NEG_INFINITY, f64::max);
        let ln_k = solve_ln_k(m, t);
        let chain = derive_c_chain_log(ln_k, mu)?;
        if best.as_ref().map_or(true, |b| chain.ln_c1 < b.2.ln_c1) {
            best = Some((ln_k, mu, chain));
        }
    }
    let (ln_k, mu, chain) = best.expect("grid is nonempty");
    Ok(EmpiricalConstants {
        k: ln_k.exp(),
        ln_k,
        mu,
        chain,
        samples: pts.len(),
    })
}

/// Solves `ln K + K/T = m` for `ln K` (Newton in `s = ln K`).
fn solve_ln_k(m: f64, t: f64) -> f64 {
    let mut s = if m > 0.0 { (m * t).ln().min(m) } else { m };
    for _ in 0..100 {
        let e = s.exp();
        let f = s + e / t - m;
        let next = s - f / (1.0 + e / t);
        if (next - s).abs() <= 1e-15 * s.abs().max(1.0) {
            s = next;
            break;
        }
        s = next;
    }
    // guarantee feasibility against round-off
    while s + s.exp() / t < m {
        s += 1e-12 * s.abs().max(1.0);
    }
    s
}
