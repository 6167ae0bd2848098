//! Impulse approximate controllability at a single time.
//!
//! For `φ⁰` the state is steered by an impulse `h ∈ L²(ω)` applied at time
//! `T` so that `φ(·,2T)` is small. The control comes from the minimiser `c`
//! of
//!
//! ```text
//! J(z) = (k²/2)(D_T z)ᵀG(D_T z) + (ε²/2)zᵀz − φ⁰ᵀD_{2T}z
//! ```
//!
//! with `D_t = diag(exp(−λ_j∫₀ᵗp))` and `G` the Gram matrix of `ω`, and
//! `h = −k²Φ(·,T)`. The certified quantity is `ψ = D_{2T}φ⁰ + D_T b = ε²c`
//! with `b = −k²G D_T c` the `ω`-moments of `h`.
//!
//! `k` is routinely far beyond `f64` range, so the solver works with
//! `y = k²D_T c`, which solves `(G + W)y = D_{T→2T}φ⁰` with
//! `W = diag(ε²e^{2λ_j∫₀ᵀp}/k²)`, and carries `ln k` throughout.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::observability::CChain;
use crate::spectral::{gram_subdomain, DiffusionProfile, EigenBasis, Subdomain};

/// Rows whose diagonal weight exceeds this are solved by back-substitution
/// against the rest.
const PASSIVE_WEIGHT: f64 = 1e30;
const DENSE_LIMIT: usize = 256;

/// Problem data for the control solver on the window `(0, 2T)`.
#[derive(Debug, Clone)]
pub struct ControlSetup {
    basis: EigenBasis,
    profile: DiffusionProfile,
    t: f64,
    subdomain: Subdomain,
    gram: DMatrix<f64>,
    eps: f64,
    ln_k: f64,
    /// `∫₀ᵀ p`
    p_t: f64,
    d_t: Vec<f64>,
    d_t_2t: Vec<f64>,
}

/// `ln k` with `k² = c₁e^{c₁/T}ε^{−2c₂}`.
pub fn control_ln_k(chain: &CChain, t: f64, eps: f64) -> f64 {
    let c1 = chain.c1();
    0.5 * (chain.ln_c1 + c1 / t - 2.0 * chain.c2 * eps.ln())
}

impl ControlSetup {
    pub fn new(
        basis: &EigenBasis,
        profile: &DiffusionProfile,
        t: f64,
        subdomain: Subdomain,
        eps: f64,
        ln_k: f64,
    ) -> Result<Self> {
        if !(t > 0.0) {
            return Err(Error::invalid(format!("impulse time must be positive, got {t}")));
        }
        if !(eps > 0.0 && eps.is_finite()) {
            return Err(Error::invalid(format!("ε must be positive and finite, got {eps}")));
        }
        if ln_k.is_nan() || ln_k == f64::NEG_INFINITY {
            return Err(Error::invalid(format!("ln k must be a number, got {ln_k}")));
        }
        let p_t = profile.integral(0.0, t)?;
        Ok(Self {
            basis: basis.clone(),
            profile: *profile,
            t,
            gram: gram_subdomain(&subdomain, basis),
            subdomain,
            eps,
            ln_k,
            p_t,
            d_t: basis.propagator(profile, 0.0, t)?,
            d_t_2t: basis.propagator(profile, t, 2.0 * t)?,
        })
    }

    pub fn basis(&self) -> &EigenBasis {
        &self.basis
    }

    pub fn profile(&self) -> &DiffusionProfile {
        &self.profile
    }

    pub fn t(&self) -> f64 {
        self.t
    }

    pub fn subdomain(&self) -> &Subdomain {
        &self.subdomain
    }

    pub fn gram(&self) -> &DMatrix<f64> {
        &self.gram
    }

    pub fn eps(&self) -> f64 {
        self.eps
    }

    pub fn ln_k(&self) -> f64 {
        self.ln_k
    }

    /// `k`, or `inf` when it does not fit in `f64`.
    pub fn k(&self) -> f64 {
        self.ln_k.exp()
    }

    pub fn d_t(&self) -> &[f64] {
        &self.d_t
    }

    /// `D_{2T} = D_T·D_{T→2T}`
    pub fn d_2t(&self) -> Vec<f64> {
        self.d_t.iter().zip(&self.d_t_2t).map(|(a, b)| a * b).collect()
    }

    pub fn d_t_2t(&self) -> &[f64] {
        &self.d_t_2t
    }

    fn ln_weight(&self, j: usize) -> f64 {
        2.0 * self.eps.ln() - 2.0 * self.ln_k + 2.0 * self.basis.eigenvalues()[j] * self.p_t
    }

    fn finite_k2(&self) -> Result<f64> {
        let k2 = (2.0 * self.ln_k).exp();
        if !k2.is_finite() || k2 == 0.0 {
            return Err(Error::rejected(format!(
                "k² = exp({}) is not representable; use the scaled solver",
                2.0 * self.ln_k
            )));
        }
        Ok(k2)
    }
}

/// `M = k²D_T G D_T + ε²I` and the right-hand-side multiplier `D_{2T}`
/// (`rhs(φ⁰) = D_{2T}φ⁰`). Needs a representable `k²`.
pub fn assemble_control_system(setup: &ControlSetup) -> Result<(DMatrix<f64>, Vec<f64>)> {
    let k2 = setup.finite_k2()?;
    let n = setup.basis.len();
    let d = &setup.d_t;
    let eps2 = setup.eps * setup.eps;
    let m = DMatrix::from_fn(n, n, |i, j| {
        k2 * d[i] * setup.gram[(i, j)] * d[j] + if i == j { eps2 } else { 0.0 }
    });
    Ok((m, setup.d_2t()))
}

/// `J(z)`; needs a representable `k²`.
pub fn objective(setup: &ControlSetup, phi0: &[f64], z: &[f64]) -> Result<f64> {
    let k2 = setup.finite_k2()?;
    check_len(setup, phi0)?;
    check_len(setup, z)?;
    let dz = DVector::from_iterator(z.len(), z.iter().zip(&setup.d_t).map(|(a, b)| a * b));
    let quad = dz.dot(&(&setup.gram * &dz));
    let d2t = setup.d_2t();
    let lin: f64 = phi0.iter().zip(&d2t).zip(z).map(|((p, d), z)| p * d * z).sum();
    let zz: f64 = z.iter().map(|v| v * v).sum();
    Ok(0.5 * k2 * quad + 0.5 * setup.eps * setup.eps * zz - lin)
}

/// `∇J(z) = Mz − D_{2T}φ⁰`.
pub fn gradient(setup: &ControlSetup, phi0: &[f64], z: &[f64]) -> Result<Vec<f64>> {
    check_len(setup, phi0)?;
    check_len(setup, z)?;
    let (m, d2t) = assemble_control_system(setup)?;
    let mz = &m * DVector::from_column_slice(z);
    Ok((0..z.len()).map(|i| mz[i] - d2t[i] * phi0[i]).collect())
}

/// How the linear system was solved.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct SolveDiagnostics {
    pub active: usize,
    pub passive: usize,
    pub cg_iters: usize,
    pub cg_converged: bool,
    /// Relative difference between the dense and CG solutions of the
    /// active block.
    pub solver_gap: f64,
    /// The dense factorisation failed and the block was solved through a
    /// clamped eigendecomposition.
    pub regularized: bool,
    /// The primary result came from the dense path.
    pub dense: bool,
}

/// One solved control problem.
#[derive(Debug, Clone, PartialEq)]
pub struct ControlSolution {
    /// Minimiser `Φ₀` of `J`.
    pub c: Vec<f64>,
    /// `b_j = ∫_ω h e_j`
    pub b: Vec<f64>,
    /// `D_{2T}φ⁰ + D_T b`
    pub psi: Vec<f64>,
    /// `y = k²D_T c`, so that `h = −Σ y_j e_j` on `ω`.
    pub y: Vec<f64>,
    pub h_norm_omega: f64,
    /// `D_{T→2T}(D_T φ⁰ + b)`
    pub phys_terminal: Vec<f64>,
    pub diagnostics: SolveDiagnostics,
}

impl ControlSolution {
    /// `h(x)`, zero outside `ω`.
    pub fn h_at(&self, basis: &EigenBasis, subdomain: &Subdomain, x: f64) -> f64 {
        if x < subdomain.a || x > subdomain.b {
            0.0
        } else {
            -basis.synthesize_at(&self.y, x)
        }
    }

    pub fn h_samples(&self, basis: &EigenBasis, subdomain: &Subdomain, xs: &[f64]) -> Vec<f64> {
        xs.iter().map(|&x| self.h_at(basis, subdomain, x)).collect()
    }

    pub fn psi_norm(&self) -> f64 {
        norm(&self.psi)
    }
}

enum Factor {
    Cholesky(nalgebra::Cholesky<f64, nalgebra::Dyn>),
    Eigen(SymmetricEigen<f64, nalgebra::Dyn>, f64),
}

/// Factorised control system, reusable across right-hand sides.
pub struct ControlSolver<'a> {
    setup: &'a ControlSetup,
    active: Vec<usize>,
    passive: Vec<usize>,
    weights: Vec<f64>,
    block: DMatrix<f64>,
    factor: Option<Factor>,
}

impl<'a> ControlSolver<'a> {
    pub fn new(setup: &'a ControlSetup) -> Self {
        let n = setup.basis.len();
        let weights: Vec<f64> = (0..n).map(|j| setup.ln_weight(j).exp()).collect();
        let (active, passive): (Vec<usize>, Vec<usize>) =
            (0..n).partition(|&j| weights[j] < PASSIVE_WEIGHT);
        let block = DMatrix::from_fn(active.len(), active.len(), |a, b| {
            let (i, j) = (active[a], active[b]);
            setup.gram[(i, j)] + if a == b { weights[i] } else { 0.0 }
        });
        let factor = if active.is_empty() || active.len() > DENSE_LIMIT {
            None
        } else {
            Some(match block.clone().cholesky() {
                Some(ch) => Factor::Cholesky(ch),
                None => {
                    let eig = SymmetricEigen::new(block.clone());
                    let top = eig.eigenvalues.iter().cloned().fold(0.0, f64::max);
                    Factor::Eigen(eig, top * 1e-15)
                }
            })
        };
        Self {
            setup,
            active,
            passive,
            weights,
            block,
            factor,
        }
    }

    fn dense_solve(&self, rhs: &DVector<f64>) -> Option<DVector<f64>> {
        match self.factor.as_ref()? {
            Factor::Cholesky(ch) => {
                let mut x = ch.solve(rhs);
                // one step of iterative refinement
                let r = rhs - &self.block * &x;
                x += ch.solve(&r);
                Some(x)
            }
            Factor::Eigen(eig, floor) => {
                let qt = eig.eigenvectors.transpose() * rhs;
                let scaled = DVector::from_iterator(
                    qt.len(),
                    qt.iter()
                        .zip(eig.eigenvalues.iter())
                        .map(|(v, l)| v / l.max(*floor)),
                );
                Some(&eig.eigenvectors * scaled)
            }
        }
    }

    /// Jacobi-preconditioned conjugate gradient on the active block.
    fn cg_solve(&self, rhs: &DVector<f64>) -> (DVector<f64>, usize, bool) {
        let n = rhs.len();
        let mut x = DVector::zeros(n);
        let bnorm = rhs.norm();
        if bnorm == 0.0 {
            return (x, 0, true);
        }
        let inv_diag: Vec<f64> = (0..n).map(|i| 1.0 / self.block[(i, i)]).collect();
        let mut r = rhs.clone();
        let mut z = DVector::from_iterator(n, r.iter().zip(&inv_diag).map(|(a, b)| a * b));
        let mut p = z.clone();
        let mut rz = r.dot(&z);
        for it in 1..=10 * n {
            let ap = &self.block * &p;
            let alpha = rz / p.dot(&ap);
            x.axpy(alpha, &p, 1.0);
            r.axpy(-alpha, &ap, 1.0);
            if r.norm() <= 1e-12 * bnorm {
                return (x, it, true);
            }
            z = DVector::from_iterator(n, r.iter().zip(&inv_diag).map(|(a, b)| a * b));
            let rz_new = r.dot(&z);
            p = &z + (rz_new / rz) * &p;
            rz = rz_new;
        }
        (x, 10 * n, false)
    }

    pub fn solve(&self, phi0: &[f64]) -> Result<ControlSolution> {
        let setup = self.setup;
        check_len(setup, phi0)?;
        if phi0.iter().all(|v| *v == 0.0) {
            return Err(Error::invalid("φ⁰ must be nonzero"));
        }
        let n = phi0.len();
        let g = &setup.gram;
        let f: Vec<f64> = phi0.iter().zip(&setup.d_t_2t).map(|(a, b)| a * b).collect();
        let mut y = vec![0.0; n];
        let mut passive_rhs = vec![0.0; n];
        let mut diag = SolveDiagnostics {
            active: self.active.len(),
            passive: self.passive.len(),
            ..Default::default()
        };
        let sweeps = if self.passive.is_empty() { 1 } else { 4 };
        for _ in 0..sweeps {
            if !self.active.is_empty() {
                let rhs = DVector::from_iterator(
                    self.active.len(),
                    self.active.iter().map(|&i| {
                        f[i] - self.passive.iter().map(|&j| g[(i, j)] * y[j]).sum::<f64>()
                    }),
                );
                let (cg, iters, ok) = self.cg_solve(&rhs);
                diag.cg_iters = iters;
                diag.cg_converged = ok;
                let dense = self.dense_solve(&rhs);
                let sol = match &dense {
                    Some(d) => {
                        diag.solver_gap = (d - &cg).norm() / d.norm().max(f64::MIN_POSITIVE);
                        diag.dense = true;
                        diag.regularized = matches!(self.factor, Some(Factor::Eigen(..)));
                        d.clone()
                    }
                    None if ok => cg,
                    None => {
                        // CG stalled on a large block: dense fallback
                        diag.dense = true;
                        match self.block.clone().cholesky() {
                            Some(ch) => ch.solve(&rhs),
                            None => return Err(Error::rejected("control system is not positive definite")),
                        }
                    }
                };
                for (a, &i) in self.active.iter().enumerate() {
                    y[i] = sol[a];
                }
            }
            for &j in &self.passive {
                let coupling: f64 = (0..n).filter(|&k| k != j).map(|k| g[(j, k)] * y[k]).sum();
                passive_rhs[j] = f[j] - coupling;
                let w = self.weights[j];
                y[j] = if w.is_finite() { passive_rhs[j] / (g[(j, j)] + w) } else { 0.0 };
            }
        }

        let gy = g * DVector::from_column_slice(&y);
        let b: Vec<f64> = gy.iter().map(|v| -v).collect();
        let d2t = setup.d_2t();
        let psi: Vec<f64> = (0..n).map(|j| d2t[j] * phi0[j] + setup.d_t[j] * b[j]).collect();
        let eps2 = setup.eps * setup.eps;
        let mut c = vec![0.0; n];
        for &j in &self.active {
            let ln_scale = setup.basis.eigenvalues()[j] * setup.p_t - 2.0 * setup.ln_k;
            c[j] = y[j] * ln_scale.exp();
        }
        for &j in &self.passive {
            let w = self.weights[j];
            c[j] = setup.d_t[j] * passive_rhs[j] / (eps2 * (1.0 + g[(j, j)] / w));
        }
        let h_norm_omega = y
            .iter()
            .zip(gy.iter())
            .map(|(a, b)| a * b)
            .sum::<f64>()
            .max(0.0)
            .sqrt();
        let phys_terminal = physical_terminal(phi0, &b, &setup.d_t, &setup.d_t_2t)?;
        Ok(ControlSolution {
            c,
            b,
            psi,
            y,
            h_norm_omega,
            phys_terminal,
            diagnostics: diag,
        })
    }
}

/// Solves one control problem.
pub fn solve_control(setup: &ControlSetup, phi0: &[f64]) -> Result<ControlSolution> {
    ControlSolver::new(setup).solve(phi0)
}

/// Literal trajectory of the impulse system: evolve to `T`, add `b`,
/// evolve to `2T`.
pub fn physical_terminal(phi0: &[f64], b: &[f64], d_t: &[f64], d_t_2t: &[f64]) -> Result<Vec<f64>> {
    if phi0.len() != b.len() || b.len() != d_t.len() || d_t.len() != d_t_2t.len() {
        return Err(Error::invalid("length mismatch in physical_terminal"));
    }
    Ok((0..b.len())
        .map(|j| d_t_2t[j] * (d_t[j] * phi0[j] + b[j]))
        .collect())
}

/// Certificates attached to one solution.
#[derive(Debug, Clone, PartialEq)]
pub struct ControlReport {
    /// `‖h‖²_ω/k² + ‖ψ‖²/ε²`
    pub s: f64,
    /// `⟨φ⁰, D_{2T}c⟩`
    pub inner: f64,
    /// `None` when the solve was regularised: the identity then holds only
    /// for the exact minimiser, which the computed one is not.
    pub identity_ok: Option<bool>,
    /// `‖ψ − ε²c‖/‖ψ‖`
    pub psi_identity_gap: f64,
    pub cauchy_schwarz_ok: bool,
    /// `‖D_{2T}c‖² ≤ ‖h‖²_ω/k² + ε²‖c‖²`
    pub surrogate_holds: bool,
    pub energy_ok: Option<bool>,
    pub h_bound_ok: Option<bool>,
    pub eps_bound_ok: Option<bool>,
    pub phi_norm: f64,
}

impl ControlReport {
    /// True unless a check that applies has failed.
    pub fn all_ok(&self) -> bool {
        self.cauchy_schwarz_ok
            && [self.identity_ok, self.energy_ok, self.h_bound_ok, self.eps_bound_ok]
                .iter()
                .all(|v| v.unwrap_or(true))
    }
}

pub fn verify_control_bounds(
    solution: &ControlSolution,
    setup: &ControlSetup,
    phi0: &[f64],
) -> Result<ControlReport> {
    check_len(setup, phi0)?;
    let eps = setup.eps;
    let phi_norm = norm(phi0);
    let h_scaled = if solution.h_norm_omega == 0.0 {
        0.0
    } else {
        (2.0 * (solution.h_norm_omega.ln() - setup.ln_k)).exp()
    };
    let psi_norm = solution.psi_norm();
    let s = h_scaled + (psi_norm / eps).powi(2);
    let d2t = setup.d_2t();
    let d2tc: Vec<f64> = d2t.iter().zip(&solution.c).map(|(a, b)| a * b).collect();
    let inner: f64 = phi0.iter().zip(&d2tc).map(|(a, b)| a * b).sum();
    let floor = 1e-30 * phi_norm * phi_norm;
    let identity_ok = (!solution.diagnostics.regularized)
        .then(|| (s - inner).abs() <= 1e-12 * s.abs().max(inner.abs()) + floor);
    let gap: f64 = solution
        .psi
        .iter()
        .zip(&solution.c)
        .map(|(p, c)| (p - eps * eps * c).powi(2))
        .sum::<f64>()
        .sqrt();
    let psi_identity_gap = if psi_norm > 0.0 { gap / psi_norm } else { gap };
    let d2tc_norm = norm(&d2tc);
    let cauchy_schwarz_ok = inner <= phi_norm * d2tc_norm * (1.0 + 1e-12) + floor;
    let c_norm = norm(&solution.c);
    let surrogate_holds =
        d2tc_norm * d2tc_norm <= (h_scaled + eps * eps * c_norm * c_norm) * (1.0 + 1e-12) + floor;
    let slack = 1.0 + 1e-10;
    let (energy_ok, h_bound_ok, eps_bound_ok) = if surrogate_holds {
        let h_ok = solution.h_norm_omega == 0.0
            || solution.h_norm_omega.ln() <= setup.ln_k + phi_norm.ln() + 1e-10;
        (
            Some(s <= phi_norm * phi_norm * slack + floor),
            Some(h_ok),
            Some(psi_norm <= eps * phi_norm * slack + floor.sqrt()),
        )
    } else {
        (None, None, None)
    };
    Ok(ControlReport {
        s,
        inner,
        identity_ok,
        psi_identity_gap,
        cauchy_schwarz_ok,
        surrogate_holds,
        energy_ok,
        h_bound_ok,
        eps_bound_ok,
        phi_norm,
    })
}

/// Controls for `φ⁰ = e_i`, `i = 1..=n_bank`, solved in parallel.
pub fn control_mode_bank(setup: &ControlSetup, n_bank: usize) -> Result<Vec<ControlSolution>> {
    let n = setup.basis.len();
    if n_bank == 0 || n_bank > n {
        return Err(Error::invalid(format!("bank size must lie in 1..={n}, got {n_bank}")));
    }
    let solver = ControlSolver::new(setup);
    (0..n_bank)
        .into_par_iter()
        .map(|i| {
            let mut phi = vec![0.0; n];
            phi[i] = 1.0;
            solver.solve(&phi)
        })
        .collect()
}

fn check_len(setup: &ControlSetup, v: &[f64]) -> Result<()> {
    if v.len() != setup.basis.len() {
        return Err(Error::invalid(format!(
            "vector has {} entries, basis has {}",
            v.len(),
            setup.basis.len()
        )));
    }
    Ok(())
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spectral::DomainSpec;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn setup(n: usize, sub: (f64, f64), eps: f64, ln_k: f64, p: DiffusionProfile) -> ControlSetup {
        let domain = DomainSpec::centered(1.0).unwrap();
        let basis = EigenBasis::new(domain, n).unwrap();
        let sub = Subdomain::new(sub.0, sub.1, &domain).unwrap();
        ControlSetup::new(&basis, &p, 0.05, sub, eps, ln_k).unwrap()
    }

    fn constant() -> DiffusionProfile {
        DiffusionProfile::constant(1.0, 1.0).unwrap()
    }

    fn random_vec(n: usize, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()
    }

    #[test]
    fn whole_domain_system_is_diagonal() {
        let s = setup(6, (0.0, 1.0), 0.1, 2.0, constant());
        let (m, d2t) = assemble_control_system(&s).unwrap();
        let k2 = (4.0f64).exp();
        for i in 0..6 {
            for j in 0..6 {
                if i == j {
                    let expect = k2 * s.d_t()[i].powi(2) + 0.01;
                    assert!((m[(i, i)] - expect).abs() < 1e-12 * expect);
                } else {
                    assert!(m[(i, j)].abs() < 1e-14);
                }
            }
        }
        let phi = random_vec(6, 1);
        let sol = solve_control(&s, &phi).unwrap();
        for j in 0..6 {
            let expect = d2t[j] * phi[j] / m[(j, j)];
            assert!((sol.c[j] - expect).abs() < 1e-12 * expect.abs().max(1e-300));
        }
    }

    #[test]
    fn system_is_spd_with_eps_floor() {
        let s = setup(12, (0.3, 0.7), 0.05, 3.0, constant());
        let (m, _) = assemble_control_system(&s).unwrap();
        assert!((&m - m.transpose()).amax() < 1e-14);
        let min = SymmetricEigen::new(m).eigenvalues.min();
        assert!(min >= 0.05 * 0.05 * (1.0 - 1e-10));
    }

    #[test]
    fn hessian_matches_finite_differences() {
        let s = setup(3, (0.2, 0.6), 0.3, 0.5, constant());
        let (m, _) = assemble_control_system(&s).unwrap();
        let phi = random_vec(3, 2);
        let z = random_vec(3, 3);
        let h = 1e-3;
        for i in 0..3 {
            for j in 0..3 {
                let shift = |di: f64, dj: f64| {
                    let mut w = z.clone();
                    w[i] += di;
                    w[j] += dj;
                    objective(&s, &phi, &w).unwrap()
                };
                let fd = (shift(h, h) - shift(h, -h) - shift(-h, h) + shift(-h, -h)) / (4.0 * h * h);
                let scale = m[(i, i)].abs().max(m[(j, j)].abs());
                assert!((fd - m[(i, j)]).abs() < 1e-8 * scale.max(1.0), "{i},{j}: {fd} vs {}", m[(i, j)]);
            }
        }
    }

    #[test]
    fn optimality_identity_and_gradient_vanish() {
        let s = setup(24, (0.3, 0.7), 0.1, 2.0, constant());
        let phi = random_vec(24, 4);
        let sol = solve_control(&s, &phi).unwrap();
        let rep = verify_control_bounds(&sol, &s, &phi).unwrap();
        assert!(rep.psi_identity_gap < 1e-12, "{}", rep.psi_identity_gap);
        assert!(rep.identity_ok == Some(true) && rep.cauchy_schwarz_ok);
        let g = gradient(&s, &phi, &sol.c).unwrap();
        let rhs_norm = norm(&s.d_2t().iter().zip(&phi).map(|(a, b)| a * b).collect::<Vec<_>>());
        assert!(norm(&g) < 1e-10 * rhs_norm);
    }

    #[test]
    fn minimiser_beats_perturbations() {
        let s = setup(10, (0.3, 0.7), 0.1, 1.0, constant());
        let phi = random_vec(10, 5);
        let sol = solve_control(&s, &phi).unwrap();
        let j0 = objective(&s, &phi, &sol.c).unwrap();
        for t in 0..20 {
            let d = random_vec(10, 100 + t);
            for eta in [-1e-1, -1e-3, 1e-3, 1e-1] {
                let z: Vec<f64> = sol.c.iter().zip(&d).map(|(c, d)| c + eta * d).collect();
                assert!(j0 <= objective(&s, &phi, &z).unwrap());
            }
        }
    }

    #[test]
    fn unit_mode_identity_and_vanishing_k() {
        let s = setup(16, (0.3, 0.7), 0.2, 4.0, constant());
        let mut e1 = vec![0.0; 16];
        e1[0] = 1.0;
        let sol = solve_control(&s, &e1).unwrap();
        let gap = sol
            .psi
            .iter()
            .zip(&sol.c)
            .map(|(p, c)| (p - 0.04 * c).abs())
            .fold(0.0, f64::max);
        assert!(gap < 1e-13);

        let weak = setup(16, (0.3, 0.7), 0.2, -30.0, constant());
        let sol = solve_control(&weak, &e1).unwrap();
        let d2t = weak.d_2t();
        assert!((sol.c[0] - d2t[0] / 0.04).abs() < 1e-10 * d2t[0] / 0.04);
        assert!(norm(&sol.b) < 1e-20);
    }

    #[test]
    fn huge_k_is_handled_in_log_space() {
        let s = setup(32, (0.0, 1.0), 0.01, 1e200, constant());
        assert!(assemble_control_system(&s).is_err());
        let phi = random_vec(32, 6);
        let sol = solve_control(&s, &phi).unwrap();
        let rep = verify_control_bounds(&sol, &s, &phi).unwrap();
        assert!(rep.surrogate_holds && rep.all_ok());
        assert!(sol.psi_norm() <= 0.01 * norm(&phi));
    }

    #[test]
    fn passive_rows_for_high_modes() {
        // ε²e^{2λ_jT}/k² is astronomically large for the top modes
        let s = setup(64, (0.3, 0.7), 0.1, 3.0, constant());
        let phi = random_vec(64, 7);
        let sol = solve_control(&s, &phi).unwrap();
        assert!(sol.diagnostics.passive > 0);
        let rep = verify_control_bounds(&sol, &s, &phi).unwrap();
        assert!(rep.psi_identity_gap < 1e-12, "{}", rep.psi_identity_gap);
        assert_eq!(rep.identity_ok, Some(true));
    }

    #[test]
    fn physical_terminal_matches_psi_only_for_symmetric_profiles() {
        let phi = random_vec(12, 8);
        let s = setup(12, (0.3, 0.7), 0.1, 2.0, constant());
        let sol = solve_control(&s, &phi).unwrap();
        let diff = norm(&sol.psi.iter().zip(&sol.phys_terminal).map(|(a, b)| a - b).collect::<Vec<_>>());
        assert!(diff < 1e-14 * sol.psi_norm().max(1e-300) + 1e-300);

        let affine = DiffusionProfile::affine(1.0, 0.1, 1.0).unwrap();
        let s = setup(12, (0.3, 0.7), 0.1, 2.0, affine);
        let sol = solve_control(&s, &phi).unwrap();
        let diff = norm(&sol.psi.iter().zip(&sol.phys_terminal).map(|(a, b)| a - b).collect::<Vec<_>>());
        assert!(diff > 0.0);

        let zero = vec![0.0; 12];
        let free = physical_terminal(&phi, &zero, s.d_t(), s.d_t_2t()).unwrap();
        let d2t = s.d_2t();
        for j in 0..12 {
            assert!((free[j] - d2t[j] * phi[j]).abs() < 1e-15);
        }
    }

    #[test]
    fn duality_pairing_is_conserved_for_constant_p() {
        let s = setup(12, (0.3, 0.7), 0.1, 2.0, constant());
        let phi = random_vec(12, 9);
        let sol = solve_control(&s, &phi).unwrap();
        let basis = s.basis();
        let p = s.profile();
        let t = s.t();
        let pair = |time: f64| -> f64 {
            // forward state φ(time), adjoint Φ(2T − time) = D_{2T−time}c
            let state: Vec<f64> = if time < t {
                let d = basis.propagator(p, 0.0, time).unwrap();
                d.iter().zip(&phi).map(|(a, b)| a * b).collect()
            } else {
                let d = basis.propagator(p, t, time).unwrap();
                (0..12).map(|j| d[j] * (s.d_t()[j] * phi[j] + sol.b[j])).collect()
            };
            let adj = basis.propagator(p, 0.0, 2.0 * t - time).unwrap();
            state.iter().zip(&adj).zip(&sol.c).map(|((a, b), c)| a * b * c).sum()
        };
        for window in [(0.0, t), (t, 2.0 * t)] {
            let reference = pair(window.0 + 0.01 * t);
            for q in 1..=10 {
                let time = window.0 + (window.1 - window.0) * q as f64 / 11.0;
                let v = pair(time);
                assert!((v - reference).abs() <= 1e-12 * reference.abs().max(1e-300));
            }
        }
    }

    #[test]
    fn mode_bank() {
        let s = setup(32, (0.3, 0.7), 0.1, 3.0, constant());
        let bank = control_mode_bank(&s, 32).unwrap();
        assert_eq!(bank.len(), 32);
        for (i, sol) in bank.iter().enumerate() {
            assert!(sol.c.iter().chain(&sol.b).all(|v| v.is_finite()));
            let mut phi = vec![0.0; 32];
            phi[i] = 1.0;
            let rep = verify_control_bounds(sol, &s, &phi).unwrap();
            assert_eq!(rep.identity_ok, Some(true), "mode {i}");
        }
        let whole = setup(8, (0.0, 1.0), 0.1, 3.0, constant());
        for (i, sol) in control_mode_bank(&whole, 8).unwrap().iter().enumerate() {
            for (j, v) in sol.y.iter().enumerate() {
                if j != i {
                    assert!(v.abs() < 1e-14);
                }
            }
        }
        assert!(control_mode_bank(&s, 33).is_err());
    }

    #[test]
    fn h_evaluator_is_supported_on_omega() {
        let s = setup(8, (0.3, 0.7), 0.1, 2.0, constant());
        let sol = solve_control(&s, &random_vec(8, 10)).unwrap();
        assert_eq!(sol.h_at(s.basis(), s.subdomain(), 0.1), 0.0);
        let inside = sol.h_at(s.basis(), s.subdomain(), 0.5);
        assert_eq!(inside, -s.basis().synthesize_at(&sol.y, 0.5));
    }
}
