//! Dirichlet sine eigenbasis on `(0, L)`, spectral fields, projections,
//! subinterval Gram matrices and the exact forward propagator.

mod profile;
mod quadrature;

use std::f64::consts::PI;
use std::fmt::Write as _;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

pub use profile::{DiffusionProfile, ProfileKind};
pub use quadrature::{simpson_weights, UniformGrid};

/// The interval `Ω = (0, L)` with a distinguished centre `x0`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DomainSpec {
    length: f64,
    center: f64,
}

impl DomainSpec {
    pub fn new(length: f64, center: f64) -> Result<Self> {
        if !(length.is_finite() && length > 0.0) {
            return Err(Error::invalid(format!("domain length must be positive, got {length}")));
        }
        if !(center > 0.0 && center < length) {
            return Err(Error::invalid(format!(
                "centre x0 = {center} must lie inside (0, {length})"
            )));
        }
        Ok(Self { length, center })
    }

    /// Domain centred at its midpoint.
    pub fn centered(length: f64) -> Result<Self> {
        Self::new(length, 0.5 * length)
    }

    pub fn length(&self) -> f64 {
        self.length
    }

    pub fn center(&self) -> f64 {
        self.center
    }

    /// `R = max_{x ∈ Ω̄} |x − x0|`.
    pub fn radius(&self) -> f64 {
        self.center.max(self.length - self.center)
    }
}

/// Observation window `ω = (a, b) ⊆ (0, L)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Subdomain {
    pub a: f64,
    pub b: f64,
}

impl Subdomain {
    pub fn new(a: f64, b: f64, domain: &DomainSpec) -> Result<Self> {
        if !(a >= 0.0 && a < b && b <= domain.length()) {
            return Err(Error::invalid(format!(
                "subdomain ({a}, {b}) must satisfy 0 <= a < b <= {}",
                domain.length()
            )));
        }
        Ok(Self { a, b })
    }

    /// The ball `B(x0, r)` as an interval.
    pub fn centered(domain: &DomainSpec, r: f64) -> Result<Self> {
        let x0 = domain.center();
        if !(r > 0.0 && r < domain.radius()) {
            return Err(Error::invalid(format!(
                "radius r = {r} must lie in (0, R = {})",
                domain.radius()
            )));
        }
        Self::new((x0 - r).max(0.0), (x0 + r).min(domain.length()), domain)
    }

    pub fn whole(domain: &DomainSpec) -> Self {
        Self {
            a: 0.0,
            b: domain.length(),
        }
    }

    pub fn width(&self) -> f64 {
        self.b - self.a
    }

    pub fn is_whole(&self, domain: &DomainSpec) -> bool {
        self.a <= 0.0 && self.b >= domain.length()
    }

    /// Radius of the largest ball about `x0` contained in `ω`.
    pub fn inner_radius(&self, x0: f64) -> Result<f64> {
        if !(self.a < x0 && x0 < self.b) {
            return Err(Error::invalid(format!(
                "centre {x0} is not inside the subdomain ({}, {})",
                self.a, self.b
            )));
        }
        Ok((x0 - self.a).min(self.b - x0))
    }
}

/// `λ_i = (iπ/L)²` and `e_i(x) = √(2/L) sin(iπx/L)`.
pub fn eigen_pair(i: usize, domain: &DomainSpec) -> Result<(f64, impl Fn(f64) -> f64)> {
    if i == 0 {
        return Err(Error::invalid("eigen index starts at 1"));
    }
    let l = domain.length();
    let freq = i as f64 * PI / l;
    let scale = (2.0 / l).sqrt();
    Ok((freq * freq, move |x: f64| scale * (freq * x).sin()))
}

/// First `N` Dirichlet eigenpairs on a domain.
#[derive(Debug, Clone, PartialEq)]
pub struct EigenBasis {
    domain: DomainSpec,
    eigenvalues: Vec<f64>,
}

impl EigenBasis {
    pub fn new(domain: DomainSpec, n: usize) -> Result<Self> {
        if n == 0 {
            return Err(Error::invalid("truncation order N must be positive"));
        }
        let l = domain.length();
        let eigenvalues = (1..=n).map(|i| (i as f64 * PI / l).powi(2)).collect();
        Ok(Self {
            domain,
            eigenvalues,
        })
    }

    pub fn len(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn is_empty(&self) -> bool {
        self.eigenvalues.is_empty()
    }

    pub fn domain(&self) -> &DomainSpec {
        &self.domain
    }

    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigenvalues
    }

    pub fn lambda1(&self) -> f64 {
        self.eigenvalues[0]
    }

    /// `e_i(x)` for a 1-based mode index.
    pub fn eval(&self, i: usize, x: f64) -> f64 {
        let l = self.domain.length();
        (2.0 / l).sqrt() * (i as f64 * PI * x / l).sin()
    }

    /// Point values of `Σ a_i e_i` at `x`.
    pub fn synthesize_at(&self, coeffs: &[f64], x: f64) -> f64 {
        let l = self.domain.length();
        let scale = (2.0 / l).sqrt();
        let theta = PI * x / l;
        // sin(iθ) by the Chebyshev recurrence
        let (mut s_prev, mut s) = (0.0, theta.sin());
        let two_cos = 2.0 * theta.cos();
        let mut acc = 0.0;
        for &a in coeffs {
            acc += a * s;
            let next = two_cos * s - s_prev;
            s_prev = s;
            s = next;
        }
        scale * acc
    }

    /// Matrix of `e_j(x_k)`, rows indexed by mode.
    pub fn design(&self, xs: &[f64]) -> DMatrix<f64> {
        DMatrix::from_fn(self.len(), xs.len(), |j, k| self.eval(j + 1, xs[k]))
    }

    /// `exp(−λ_i ∫_{t0}^{t1} p)` for every mode.
    pub fn propagator(&self, profile: &DiffusionProfile, t0: f64, t1: f64) -> Result<Vec<f64>> {
        let p = profile.integral(t0, t1)?;
        Ok(self.eigenvalues.iter().map(|l| (-l * p).exp()).collect())
    }
}

/// A function on Ω stored by its sine coefficients.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralField {
    pub coeffs: Vec<f64>,
}

impl SpectralField {
    pub fn new(coeffs: Vec<f64>) -> Self {
        Self { coeffs }
    }

    pub fn zeros(n: usize) -> Self {
        Self {
            coeffs: vec![0.0; n],
        }
    }

    /// Unit coefficient vector for the 1-based mode `i`.
    pub fn mode(n: usize, i: usize) -> Self {
        let mut coeffs = vec![0.0; n];
        coeffs[i - 1] = 1.0;
        Self { coeffs }
    }

    pub fn len(&self) -> usize {
        self.coeffs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coeffs.is_empty()
    }

    pub fn l2(&self) -> f64 {
        l2_norm(&self.coeffs)
    }

    pub fn h01(&self, basis: &EigenBasis) -> f64 {
        self.coeffs
            .iter()
            .zip(basis.eigenvalues())
            .map(|(a, l)| l * a * a)
            .sum::<f64>()
            .sqrt()
    }

    pub fn sub(&self, other: &Self) -> Self {
        Self::new(
            self.coeffs
                .iter()
                .zip(&other.coeffs)
                .map(|(a, b)| a - b)
                .collect(),
        )
    }

    pub fn add(&self, other: &Self) -> Self {
        Self::new(
            self.coeffs
                .iter()
                .zip(&other.coeffs)
                .map(|(a, b)| a + b)
                .collect(),
        )
    }

    pub fn scale(&self, s: f64) -> Self {
        Self::new(self.coeffs.iter().map(|a| s * a).collect())
    }

    /// Samples on the given abscissae.
    pub fn sample(&self, basis: &EigenBasis, xs: &[f64]) -> Vec<f64> {
        xs.iter()
            .map(|&x| basis.synthesize_at(&self.coeffs, x))
            .collect()
    }

    /// CSV with one row per mode: `i, lambda_i, a_i`.
    pub fn to_csv(&self, basis: &EigenBasis) -> String {
        let mut out = String::from("i,lambda_i,a_i\n");
        for (k, (a, l)) in self.coeffs.iter().zip(basis.eigenvalues()).enumerate() {
            let _ = writeln!(out, "{},{},{}", k + 1, fmt_sci(*l), fmt_sci(*a));
        }
        out
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut coeffs = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || lineno == 0 && line.starts_with('i') {
                continue;
            }
            let cols: Vec<&str> = line.split(',').map(str::trim).collect();
            if cols.len() != 3 {
                return Err(Error::invalid(format!(
                    "field CSV line {}: expected 3 columns",
                    lineno + 1
                )));
            }
            let i: usize = cols[0]
                .parse()
                .map_err(|_| Error::invalid(format!("field CSV line {}: bad index", lineno + 1)))?;
            if i != coeffs.len() + 1 {
                return Err(Error::invalid(format!(
                    "field CSV line {}: modes must be listed in order",
                    lineno + 1
                )));
            }
            let a: f64 = cols[2].parse().map_err(|_| {
                Error::invalid(format!("field CSV line {}: bad coefficient", lineno + 1))
            })?;
            coeffs.push(a);
        }
        Ok(Self::new(coeffs))
    }
}

/// Scientific notation with 17 significant digits.
pub fn fmt_sci(v: f64) -> String {
    format!("{v:.16e}")
}

pub(crate) fn l2_norm(v: &[f64]) -> f64 {
    v.iter().map(|a| a * a).sum::<f64>().sqrt()
}

/// Exact propagation from `t0` to `t1`: `a_i ↦ a_i exp(−λ_i ∫_{t0}^{t1} p)`.
pub fn evolve(
    field: &SpectralField,
    basis: &EigenBasis,
    profile: &DiffusionProfile,
    t0: f64,
    t1: f64,
) -> Result<SpectralField> {
    let d = basis.propagator(profile, t0, t1)?;
    Ok(SpectralField::new(
        field.coeffs.iter().zip(&d).map(|(a, d)| a * d).collect(),
    ))
}

/// Projects point samples on a uniform grid over `[0, L]` onto the first
/// `N` eigenfunctions with composite Simpson quadrature.
pub fn project(xs: &[f64], values: &[f64], basis: &EigenBasis) -> Result<SpectralField> {
    if xs.len() != values.len() {
        return Err(Error::invalid("abscissae and values differ in length"));
    }
    let n = basis.len();
    if xs.len() < 8 * n {
        return Err(Error::invalid(format!(
            "grid too coarse: {} samples for N = {n} modes (need at least {})",
            xs.len(),
            8 * n
        )));
    }
    let grid = UniformGrid::from_abscissae(xs)?;
    let l = basis.domain().length();
    let tol = 1e-9 * l;
    if grid.start.abs() > tol || (grid.end - l).abs() > tol {
        return Err(Error::invalid(format!(
            "projection grid must cover [0, {l}], got [{}, {}]",
            grid.start, grid.end
        )));
    }
    let w = grid.weights();
    let coeffs = (1..=n)
        .map(|i| {
            xs.iter()
                .zip(values)
                .zip(&w)
                .map(|((&x, v), w)| w * v * basis.eval(i, x))
                .sum()
        })
        .collect();
    Ok(SpectralField::new(coeffs))
}

/// `G_ij = ∫_a^b e_i e_j dx` in closed form.
pub fn gram_subdomain(subdomain: &Subdomain, basis: &EigenBasis) -> DMatrix<f64> {
    let n = basis.len();
    let l = basis.domain().length();
    let (a, b) = (subdomain.a, subdomain.b);
    // ∫_a^b cos(kπx/L) dx
    let cos_int = |k: i64| -> f64 {
        if k == 0 {
            b - a
        } else {
            let w = k as f64 * PI / l;
            ((w * b).sin() - (w * a).sin()) / w
        }
    };
    let mut g = DMatrix::zeros(n, n);
    for i in 1..=n as i64 {
        for j in i..=n as i64 {
            let v = (cos_int(i - j) - cos_int(i + j)) / l;
            g[(i as usize - 1, j as usize - 1)] = v;
            g[(j as usize - 1, i as usize - 1)] = v;
        }
    }
    g
}

/// Norms of a field: `(‖·‖_{L²}, ‖·‖_{H¹₀}, ‖·‖_{L²(ω)})`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FieldNorms {
    pub l2: f64,
    pub h01: f64,
    pub l2_sub: Option<f64>,
}

pub fn norms(field: &SpectralField, basis: &EigenBasis, gram: Option<&DMatrix<f64>>) -> FieldNorms {
    FieldNorms {
        l2: field.l2(),
        h01: field.h01(basis),
        l2_sub: gram.map(|g| sub_norm(&field.coeffs, g)),
    }
}

/// `√(aᵀ G a)`, clamped at zero against round-off.
pub fn sub_norm(coeffs: &[f64], gram: &DMatrix<f64>) -> f64 {
    let n = coeffs.len();
    let mut q = 0.0;
    for i in 0..n {
        let mut row = 0.0;
        for j in 0..n {
            row += gram[(i, j)] * coeffs[j];
        }
        q += coeffs[i] * row;
    }
    q.max(0.0).sqrt()
}

/// Seeded test data: `a_i = ±u_i / i^decay` with `u_i` uniform in `(0.5, 1]`.
pub fn synthesize_initial(decay: f64, n: usize, seed: u64) -> Result<SpectralField> {
    if !(decay > 1.0) {
        return Err(Error::invalid(format!("decay must exceed 1, got {decay}")));
    }
    if n == 0 {
        return Err(Error::invalid("N must be positive"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let coeffs = (1..=n)
        .map(|i| {
            let u = 1.0 - 0.5 * rng.gen::<f64>();
            let sign = if rng.gen::<bool>() { 1.0 } else { -1.0 };
            sign * u / (i as f64).powf(decay)
        })
        .collect();
    Ok(SpectralField::new(coeffs))
}

/// Noisy samples of `u(·, time)` on a subdomain.
#[derive(Debug, Clone, PartialEq)]
pub struct Observation {
    pub subdomain: Subdomain,
    pub time: f64,
    pub xs: Vec<f64>,
    pub values: Vec<f64>,
    pub delta: f64,
    pub prior_l2: f64,
    pub prior_h01: f64,
}

impl Observation {
    /// Noise-free samples of `field` on `points` equispaced nodes of `[a, b]`.
    pub fn sample(
        field: &SpectralField,
        basis: &EigenBasis,
        subdomain: Subdomain,
        time: f64,
        points: usize,
    ) -> Result<Self> {
        let grid = UniformGrid::new(subdomain.a, subdomain.b, points)?;
        let xs = grid.nodes();
        let values = field.sample(basis, &xs);
        Ok(Self {
            subdomain,
            time,
            xs,
            values,
            delta: f64::NAN,
            prior_l2: f64::NAN,
            prior_h01: f64::NAN,
        })
    }

    pub fn with_priors(mut self, delta: f64, prior_l2: f64, prior_h01: f64) -> Self {
        self.delta = delta;
        self.prior_l2 = prior_l2;
        self.prior_h01 = prior_h01;
        self
    }

    pub fn grid(&self) -> Result<UniformGrid> {
        UniformGrid::from_abscissae(&self.xs)
    }

    /// Simpson weights on the sample grid.
    pub fn weights(&self) -> Result<Vec<f64>> {
        Ok(self.grid()?.weights())
    }

    /// Quadrature `L²(ω)` norm of sample values on this grid.
    pub fn quadrature_norm(&self, values: &[f64]) -> Result<f64> {
        let w = self.weights()?;
        Ok(w.iter()
            .zip(values)
            .map(|(w, v)| w * v * v)
            .sum::<f64>()
            .sqrt())
    }

    /// Checks the resolution rule: at least 8 samples per wavelength `L/N`.
    pub fn check_resolution(&self, basis: &EigenBasis) -> Result<()> {
        let grid = self.grid()?;
        let wavelength = basis.domain().length() / basis.len() as f64;
        if grid.step() > wavelength / 8.0 * (1.0 + 1e-9) {
            return Err(Error::invalid(format!(
                "observation grid step {} exceeds L/(8N) = {}",
                grid.step(),
                wavelength / 8.0
            )));
        }
        Ok(())
    }

    /// Parses `x, value` rows (optional header).
    pub fn parse_samples(text: &str) -> Result<(Vec<f64>, Vec<f64>)> {
        let mut xs = Vec::new();
        let mut vs = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let cols: Vec<&str> = line.split(',').map(str::trim).collect();
            if cols.len() != 2 {
                return Err(Error::invalid(format!(
                    "observation CSV line {}: expected `x, value`",
                    lineno + 1
                )));
            }
            match (cols[0].parse::<f64>(), cols[1].parse::<f64>()) {
                (Ok(x), Ok(v)) => {
                    xs.push(x);
                    vs.push(v);
                }
                _ if xs.is_empty() => continue, // header
                _ => {
                    return Err(Error::invalid(format!(
                        "observation CSV line {}: unparseable number",
                        lineno + 1
                    )))
                }
            }
        }
        Ok((xs, vs))
    }
}
