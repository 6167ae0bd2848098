//! Reconstruction of `u(·,0)` from a noisy snapshot of `u(·,T)` on `ω`.
//!
//! A bank of impulse controls for `φ⁰ = e_i` turns the snapshot into
//! surrogate whole-domain data at time `3T`,
//!
//! ```text
//! f̄_i = −e^{−λ_i∫_{2T}^{3T}p} ∫_ω h_i f,
//! ```
//!
//! which is then inverted by the global filter with horizon `3T` and the
//! effective noise level `S_w(ε‖u₀‖ + c₃e^{c₃/T}ε^{−c₄}δ)`.

use crate::control::{control_mode_bank, control_ln_k, verify_control_bounds, ControlSetup};
use crate::error::{Error, Result};
use crate::filtering::{global_backward, FilterSelection, Priors};
use crate::observability::CChain;
use crate::spectral::{DiffusionProfile, EigenBasis, Observation, SpectralField};

/// Where `(K, μ)` come from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ConstantsMode {
    Analytic,
    Empirical,
}

/// Choice of `ζ` in the final inversion.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ZetaMode {
    /// Calibrated so that the logarithm becomes `k₁ ln(‖u₀‖/δ)`.
    Matched,
    /// `1/(2λ₁p₂·3T)`
    Default,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    pub t: f64,
    pub n_bank: usize,
    pub chain: CChain,
    pub constants_mode: ConstantsMode,
    pub zeta_mode: ZetaMode,
    pub priors: Priors,
    /// Multiplies the control weight `k`; 1 in normal use.
    pub k_scale: f64,
}

/// `ln ε` with `ε = (c₄c₃e^{c₃/T}δ/‖u₀‖)^{1/(1+c₄)}`.
pub fn ln_select_epsilon(delta: f64, t: f64, ln_c3: f64, c4: f64, l2_prior: f64) -> f64 {
    let c3 = ln_c3.exp();
    (c4.ln() + ln_c3 + c3 / t + delta.ln() - l2_prior.ln()) / (1.0 + c4)
}

/// Minimiser of `ε‖u₀‖ + c₃e^{c₃/T}ε^{−c₄}δ`.
pub fn select_epsilon(delta: f64, t: f64, c3: f64, c4: f64, l2_prior: f64) -> Result<f64> {
    if !(delta > 0.0 && t > 0.0 && c3 > 0.0 && c4 > 0.0 && l2_prior > 0.0) {
        return Err(Error::invalid("select_epsilon needs positive inputs"));
    }
    Ok(ln_select_epsilon(delta, t, c3.ln(), c4, l2_prior).exp())
}

/// Pieces of the noise level at time `3T`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EffectiveNoise {
    /// `(Σ_{i≤N_bank} e^{−2λ_i∫_{2T}^{3T}p})^{1/2}`
    pub s_w: f64,
    /// `ε‖u₀‖`
    pub control_term: f64,
    /// `c₃e^{c₃/T}ε^{−c₄}δ`
    pub noise_term: f64,
    /// `‖u₀‖e^{−λ_{N_bank+1}∫₀^{3T}p}`, the modes the bank leaves out.
    pub tail: f64,
    pub total: f64,
}

/// `S_w(ε‖u₀‖ + c₃e^{c₃/T}ε^{−c₄}δ)` plus the bank truncation tail.
#[allow(clippy::too_many_arguments)]
pub fn effective_delta_3t(
    delta: f64,
    ln_eps: f64,
    t: f64,
    profile: &DiffusionProfile,
    basis: &EigenBasis,
    n_bank: usize,
    chain: &CChain,
    l2_prior: f64,
) -> Result<EffectiveNoise> {
    if n_bank == 0 || n_bank > basis.len() {
        return Err(Error::invalid(format!("bank size must lie in 1..={}", basis.len())));
    }
    let window = profile.integral(2.0 * t, 3.0 * t)?;
    let s_w = basis.eigenvalues()[..n_bank]
        .iter()
        .map(|l| (-2.0 * l * window).exp())
        .sum::<f64>()
        .sqrt();
    let control_term = ln_eps.exp() * l2_prior;
    let noise_term =
        (chain.ln_c3 + chain.c3() / t - chain.c4 * ln_eps + delta.ln()).exp();
    let l = basis.domain().length();
    let next = ((n_bank + 1) as f64 * std::f64::consts::PI / l).powi(2);
    let tail = l2_prior * (-next * profile.integral(0.0, 3.0 * t)?).exp();
    Ok(EffectiveNoise {
        s_w,
        control_term,
        noise_term,
        tail,
        total: s_w * (control_term + noise_term) + tail,
    })
}

/// Moments `m_j = ∫_ω f e_j` by Simpson quadrature on the sample grid.
pub fn observation_moments(obs: &Observation, basis: &EigenBasis) -> Result<Vec<f64>> {
    let w = obs.weights()?;
    let wf: Vec<f64> = w.iter().zip(&obs.values).map(|(a, b)| a * b).collect();
    Ok((1..=basis.len())
        .map(|i| obs.xs.iter().zip(&wf).map(|(&x, v)| basis.eval(i, x) * v).sum())
        .collect())
}

/// Surrogate coefficients at `3T`; modes beyond the bank are zero.
pub fn assemble_fbar(
    bank: &[crate::control::ControlSolution],
    obs: &Observation,
    basis: &EigenBasis,
    profile: &DiffusionProfile,
    t: f64,
) -> Result<SpectralField> {
    if bank.is_empty() || bank.len() > basis.len() {
        return Err(Error::rejected(format!(
            "bank of {} controls does not fit a basis of {} modes",
            bank.len(),
            basis.len()
        )));
    }
    if bank.iter().any(|s| s.y.len() != basis.len()) {
        return Err(Error::rejected("bank and basis disagree on the truncation order"));
    }
    if obs.xs.len() != obs.values.len() || obs.xs.is_empty() {
        return Err(Error::rejected("observation has mismatched or empty samples"));
    }
    let tol = 1e-9 * basis.domain().length();
    if (obs.xs[0] - obs.subdomain.a).abs() > tol
        || (obs.xs[obs.xs.len() - 1] - obs.subdomain.b).abs() > tol
    {
        return Err(Error::rejected("observation grid does not span the subdomain"));
    }
    let m = observation_moments(obs, basis)?;
    let decay = basis.propagator(profile, 2.0 * t, 3.0 * t)?;
    let mut coeffs = vec![0.0; basis.len()];
    for (i, sol) in bank.iter().enumerate() {
        // ∫_ω h_i f = −Σ_j y_j m_j
        let hf: f64 = -sol.y.iter().zip(&m).map(|(a, b)| a * b).sum::<f64>();
        coeffs[i] = -decay[i] * hf;
    }
    Ok(SpectralField::new(coeffs))
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReconstructionReport {
    pub g: SpectralField,
    pub epsilon: f64,
    pub ln_epsilon: f64,
    pub ln_k: f64,
    pub noise: EffectiveNoise,
    pub effective_delta: f64,
    pub alpha: Option<f64>,
    pub gate_zero: bool,
    pub zeta: f64,
    pub reported_bound: f64,
    pub actual_error: Option<f64>,
    /// Every bank solution met `‖ψ_i‖ ≤ ε` and `‖h_i‖_ω ≤ k`; `None` when
    /// no bank was built.
    pub bank_certified: Option<bool>,
    pub selection: Option<FilterSelection>,
}

impl ReconstructionReport {
    pub fn with_truth(mut self, u0: &SpectralField) -> Self {
        self.actual_error = Some(u0.sub(&self.g).l2());
        self
    }

    pub fn bound_ok(&self) -> Option<bool> {
        self.actual_error.map(|e| e <= self.reported_bound)
    }
}

/// Choice of `ζ` that makes `√(2ζλ₁p₂τ)‖u₀‖/δ_eff = (‖u₀‖/δ)^{k₁}`
/// with `k₁ = 1/(1+c₄)`.
fn matched_zeta(delta: f64, effective: f64, l2: f64, c4: f64, lambda1: f64, p2_tau: f64) -> f64 {
    let k1 = 1.0 / (1.0 + c4);
    let ln = 2.0 * (effective.ln() - l2.ln()) + 2.0 * k1 * (l2.ln() - delta.ln());
    ln.exp() / (2.0 * lambda1 * p2_tau)
}

/// Runs the full pipeline on one observation.
pub fn local_reconstruct(
    obs: &Observation,
    basis: &EigenBasis,
    profile: &DiffusionProfile,
    config: &PipelineConfig,
) -> Result<ReconstructionReport> {
    let t = config.t;
    let delta = obs.delta;
    let l2 = config.priors.l2;
    if !(delta > 0.0) {
        return Err(Error::invalid(format!("observation noise level must be positive, got {delta}")));
    }
    if !(delta < l2) {
        return Err(Error::rejected(format!("need δ < ‖u₀‖ (δ = {delta}, prior {l2})")));
    }
    if !(config.k_scale > 0.0) {
        return Err(Error::invalid("k_scale must be positive"));
    }
    if (obs.time - t).abs() > 1e-12 * t {
        return Err(Error::rejected(format!(
            "observation time {} differs from T = {t}",
            obs.time
        )));
    }
    obs.check_resolution(basis)?;
    let tau = 3.0 * t;
    let ln_eps = ln_select_epsilon(delta, t, config.chain.ln_c3, config.chain.c4, l2);
    let noise = effective_delta_3t(delta, ln_eps, t, profile, basis, config.n_bank, &config.chain, l2)?;
    let effective = noise.total;
    let lambda1 = basis.lambda1();
    let p2_tau = profile.p2() * tau;
    let matched = || matched_zeta(delta, effective, l2, config.chain.c4, lambda1, p2_tau);
    let zeta = match config.zeta_mode {
        ZetaMode::Matched => matched(),
        ZetaMode::Default => {
            let z = 1.0 / (2.0 * lambda1 * p2_tau);
            let ln_arg = 0.5 * (2.0 * z * lambda1 * p2_tau).ln() + l2.ln() - effective.ln();
            if ln_arg > 0.0 {
                z
            } else {
                matched()
            }
        }
    };
    let ln_k = control_ln_k(&config.chain, t, ln_eps.exp()) + config.k_scale.ln();
    let gated = !(effective < l2 * (-lambda1 * p2_tau).exp());
    let mut report = ReconstructionReport {
        g: SpectralField::zeros(basis.len()),
        epsilon: ln_eps.exp(),
        ln_epsilon: ln_eps,
        ln_k,
        noise,
        effective_delta: effective,
        alpha: None,
        gate_zero: gated,
        zeta,
        reported_bound: f64::INFINITY,
        actual_error: None,
        bank_certified: None,
        selection: None,
    };
    if !effective.is_finite() || !zeta.is_finite() {
        // constants overflow: only the zero reconstruction is justified
        return Ok(report);
    }
    if gated {
        let sel = crate::filtering::select_alpha(lambda1, tau, profile, config.priors, effective, Some(zeta))?;
        report.reported_bound = sel.bound;
        report.selection = Some(sel);
        return Ok(report);
    }

    let setup = ControlSetup::new(basis, profile, t, obs.subdomain, report.epsilon, ln_k)?;
    let bank = control_mode_bank(&setup, config.n_bank)?;
    let mut certified = true;
    for (i, sol) in bank.iter().enumerate() {
        let mut phi = vec![0.0; basis.len()];
        phi[i] = 1.0;
        let rep = verify_control_bounds(sol, &setup, &phi)?;
        let h_ok = sol.h_norm_omega == 0.0 || sol.h_norm_omega.ln() <= ln_k + 1e-10;
        certified &= sol.psi_norm() <= report.epsilon * (1.0 + 1e-10) && h_ok && rep.identity_ok.unwrap_or(true);
    }
    report.bank_certified = Some(certified);
    let fbar = assemble_fbar(&bank, obs, basis, profile, t)?;
    let (g, sel) = global_backward(&fbar, basis, profile, tau, effective, config.priors, Some(zeta))?;
    report.g = g;
    report.alpha = sel.alpha;
    report.reported_bound = sel.bound;
    report.selection = Some(sel);
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::observability::{derive_c_chain_log, empirical_samples, fit_empirical};
    use crate::spectral::{evolve, gram_subdomain, synthesize_initial, DomainSpec, Subdomain};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn epsilon_example_and_monotonicity() {
        let e = std::f64::consts::E;
        let eps = select_epsilon(1.0 / e, 1.0, 1.0, 1.0, 1.0).unwrap();
        assert!((eps - 1.0).abs() < 1e-15);
        let mut prev = f64::INFINITY;
        for k in 1..10 {
            let eps = select_epsilon(10f64.powi(-k), 0.5, 2.0, 3.0, 1.0).unwrap();
            assert!(eps < prev);
            prev = eps;
        }
    }

    #[test]
    fn epsilon_minimises_the_bracket() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..50 {
            let (delta, t, c3, c4, l2): (f64, f64, f64, f64, f64) = (
                10f64.powf(rng.gen_range(-8.0..-1.0)),
                rng.gen_range(0.05..2.0),
                rng.gen_range(0.5..5.0),
                rng.gen_range(0.2..5.0),
                rng.gen_range(0.5..3.0),
            );
            let obj = |eps: f64| eps * l2 + c3 * (c3 / t).exp() * eps.powf(-c4) * delta;
            let eps = select_epsilon(delta, t, c3, c4, l2).unwrap();
            assert!(obj(eps) <= obj(0.5 * eps) && obj(eps) <= obj(2.0 * eps));
            // first-order condition: ε‖u₀‖ = c₄·c₃e^{c₃/T}ε^{−c₄}δ
            let (a, b) = (eps * l2, c3 * (c3 / t).exp() * eps.powf(-c4) * delta);
            assert!((a - c4 * b).abs() < 1e-10 * a);
        }
    }

    #[test]
    fn window_factor() {
        let domain = DomainSpec::centered(1.0).unwrap();
        let p = DiffusionProfile::constant(1.0, 1.0).unwrap();
        let chain = derive_c_chain_log(0.0, 0.5).unwrap();
        let one = EigenBasis::new(domain, 1).unwrap();
        let n = effective_delta_3t(1e-3, -2.0, 0.1, &p, &one, 1, &chain, 1.0).unwrap();
        let pi2 = std::f64::consts::PI.powi(2);
        assert!((n.s_w - (-pi2 * 0.1).exp()).abs() < 1e-15);
        assert!((n.s_w - 0.3727).abs() < 1e-4);
        let big = EigenBasis::new(domain, 64).unwrap();
        let mut prev = 0.0;
        for nb in 1..=64 {
            let s = effective_delta_3t(1e-3, -2.0, 0.1, &p, &big, nb, &chain, 1.0).unwrap().s_w;
            assert!(s >= prev);
            if nb == 64 {
                assert!((s / prev - 1.0).abs() < 1e-12);
            }
            prev = s;
        }
    }

    struct Instance {
        basis: EigenBasis,
        profile: DiffusionProfile,
        u0: SpectralField,
        sub: Subdomain,
        t: f64,
        chain: CChain,
    }

    fn instance(sub: (f64, f64), n: usize, t: f64) -> Instance {
        let domain = DomainSpec::centered(1.0).unwrap();
        let basis = EigenBasis::new(domain, n).unwrap();
        let profile = DiffusionProfile::constant(1.0, 3.0 * t).unwrap();
        let sub = Subdomain::new(sub.0, sub.1, &domain).unwrap();
        let gram = gram_subdomain(&sub, &basis);
        let samples = empirical_samples(&basis, &profile, t, &gram, 5, 1).unwrap();
        let fit = fit_empirical(&basis, &profile, t, &gram, &samples).unwrap();
        Instance {
            u0: synthesize_initial(3.0, n, 2).unwrap(),
            basis,
            profile,
            sub,
            t,
            chain: fit.chain,
        }
    }

    fn observe(inst: &Instance, rel_delta: f64, seed: u64) -> (Observation, Priors) {
        let ut = evolve(&inst.u0, &inst.basis, &inst.profile, 0.0, inst.t).unwrap();
        let mut obs = Observation::sample(&ut, &inst.basis, inst.sub, inst.t, 1025).unwrap();
        let priors = Priors::of(&inst.u0, &inst.basis).unwrap();
        let delta = rel_delta * priors.l2;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let noise: Vec<f64> = obs.values.iter().map(|_| rng.gen_range(-1.0..1.0)).collect();
        let scale = delta / obs.quadrature_norm(&noise).unwrap();
        for (v, n) in obs.values.iter_mut().zip(&noise) {
            *v += scale * n;
        }
        (obs.with_priors(delta, priors.l2, priors.h01), priors)
    }

    fn config(inst: &Instance, priors: Priors, n_bank: usize) -> PipelineConfig {
        PipelineConfig {
            t: inst.t,
            n_bank,
            chain: inst.chain,
            constants_mode: ConstantsMode::Empirical,
            zeta_mode: ZetaMode::Default,
            priors,
            k_scale: 1.0,
        }
    }

    #[test]
    fn zero_data_gives_zero_surrogate() {
        let inst = instance((0.3, 0.7), 16, 0.05);
        let (mut obs, priors) = observe(&inst, 1e-4, 1);
        obs.values.iter_mut().for_each(|v| *v = 0.0);
        let setup = ControlSetup::new(&inst.basis, &inst.profile, inst.t, inst.sub, 0.1, 2.0).unwrap();
        let bank = control_mode_bank(&setup, 8).unwrap();
        let fbar = assemble_fbar(&bank, &obs, &inst.basis, &inst.profile, inst.t).unwrap();
        assert_eq!(fbar.l2(), 0.0);
        let _ = priors;
        assert!(assemble_fbar(&[], &obs, &inst.basis, &inst.profile, inst.t).is_err());
    }

    #[test]
    fn surrogate_data_error_is_bounded() {
        let inst = instance((0.3, 0.7), 32, 0.05);
        for rel in [1e-3, 1e-5] {
            let (obs, priors) = observe(&inst, rel, 4);
            let ln_eps = ln_select_epsilon(obs.delta, inst.t, inst.chain.ln_c3, inst.chain.c4, priors.l2);
            let ln_k = control_ln_k(&inst.chain, inst.t, ln_eps.exp());
            let setup =
                ControlSetup::new(&inst.basis, &inst.profile, inst.t, inst.sub, ln_eps.exp(), ln_k).unwrap();
            let bank = control_mode_bank(&setup, 32).unwrap();
            let fbar = assemble_fbar(&bank, &obs, &inst.basis, &inst.profile, inst.t).unwrap();
            let u3 = evolve(&inst.u0, &inst.basis, &inst.profile, 0.0, 3.0 * inst.t).unwrap();
            let noise =
                effective_delta_3t(obs.delta, ln_eps, inst.t, &inst.profile, &inst.basis, 32, &inst.chain, priors.l2)
                    .unwrap();
            assert!(u3.sub(&fbar).l2() <= noise.total, "{} > {}", u3.sub(&fbar).l2(), noise.total);
        }
    }

    #[test]
    fn pipeline_bound_holds_and_tightens() {
        let inst = instance((0.3, 0.7), 32, 0.05);
        let mut prev = f64::INFINITY;
        for rel in [1e-2, 1e-3, 1e-4, 1e-5, 1e-6] {
            let (obs, priors) = observe(&inst, rel, 5);
            let rep = local_reconstruct(&obs, &inst.basis, &inst.profile, &config(&inst, priors, 16))
                .unwrap()
                .with_truth(&inst.u0);
            assert!(rep.bound_ok().unwrap(), "δ = {rel}: {:?} > {}", rep.actual_error, rep.reported_bound);
            assert!(rep.reported_bound < prev);
            prev = rep.reported_bound;
        }
    }

    #[test]
    fn pipeline_is_affine_in_the_data() {
        let inst = instance((0.3, 0.7), 16, 0.05);
        let (obs1, priors) = observe(&inst, 1e-4, 6);
        let (mut obs2, _) = observe(&inst, 1e-4, 7);
        obs2.values.iter_mut().for_each(|v| *v *= 0.5);
        let cfg = config(&inst, priors, 16);
        let run = |o: &Observation| local_reconstruct(o, &inst.basis, &inst.profile, &cfg).unwrap();
        let mut sum = obs1.clone();
        sum.values = obs1.values.iter().zip(&obs2.values).map(|(a, b)| a + b).collect();
        let mut zero = obs1.clone();
        zero.values.iter_mut().for_each(|v| *v = 0.0);
        let (g1, g2, g12, g0) = (run(&obs1).g, run(&obs2).g, run(&sum).g, run(&zero).g);
        let lhs = g12.add(&g0);
        let rhs = g1.add(&g2);
        assert!(lhs.sub(&rhs).l2() <= 1e-10 * rhs.l2());
    }

    #[test]
    fn full_observation_tracks_global_solver() {
        let inst = instance((0.0, 1.0), 16, 0.05);
        let (obs, priors) = observe(&inst, 1e-8, 8);
        let rep = local_reconstruct(&obs, &inst.basis, &inst.profile, &config(&inst, priors, 16))
            .unwrap()
            .with_truth(&inst.u0);
        let ut = evolve(&inst.u0, &inst.basis, &inst.profile, 0.0, inst.t).unwrap();
        let (g, _) =
            global_backward(&ut, &inst.basis, &inst.profile, inst.t, obs.delta, priors, None).unwrap();
        let direct = inst.u0.sub(&g).l2();
        assert!(rep.bound_ok().unwrap());
        assert!(rep.actual_error.unwrap() <= 10.0 * direct.max(1e-300) || rep.gate_zero,
            "{:?} vs {direct}", rep.actual_error);
    }

    #[test]
    fn rejects_noise_above_prior() {
        let inst = instance((0.3, 0.7), 16, 0.05);
        let (mut obs, priors) = observe(&inst, 1e-3, 9);
        obs.delta = 2.0 * priors.l2;
        assert!(local_reconstruct(&obs, &inst.basis, &inst.profile, &config(&inst, priors, 8)).is_err());
    }
}
