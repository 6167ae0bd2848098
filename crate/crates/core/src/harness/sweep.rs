//! δ-sweeps over seeds and methods.

use std::time::Instant;

use nalgebra::DMatrix;
use rayon::prelude::*;

use super::config::{ExperimentConfig, Method};
use super::noise::{coefficient_noise, inject_noise};
use crate::error::{Error, Result};
use crate::filtering::{auto_cutoff, global_backward, truncation_baseline, truncation_bound, Priors};
use crate::local_backward::{local_reconstruct, ConstantsMode, PipelineConfig};
use crate::observability::{
    constants_convex, empirical_samples, fit_empirical, observation_radius, CChain, EmpiricalConstants,
    ObservabilityConstants,
};
use crate::spectral::{
    evolve, fmt_sci, gram_subdomain, synthesize_initial, DiffusionProfile, DomainSpec, EigenBasis,
    Observation, Subdomain,
};

pub const SWEEP_HEADER: &str = "delta,method,epsilon,alpha,bound,error,bound_ok,runtime_ms";

/// Origin of the constants behind a chain.
#[derive(Debug, Clone, PartialEq)]
pub enum ConstantsSource {
    Analytic(ObservabilityConstants),
    Empirical(EmpiricalConstants),
}

impl ConstantsSource {
    pub fn chain(&self) -> CChain {
        match self {
            ConstantsSource::Analytic(c) => c.chain,
            ConstantsSource::Empirical(c) => c.chain,
        }
    }

    pub fn ln_k(&self) -> f64 {
        match self {
            ConstantsSource::Analytic(c) => c.ln_k,
            ConstantsSource::Empirical(c) => c.ln_k,
        }
    }

    pub fn mu(&self) -> f64 {
        match self {
            ConstantsSource::Analytic(c) => c.mu,
            ConstantsSource::Empirical(c) => c.mu,
        }
    }
}

/// Everything derived once from a configuration.
pub struct Experiment {
    pub config: ExperimentConfig,
    pub domain: DomainSpec,
    pub basis: EigenBasis,
    pub profile: DiffusionProfile,
    pub subdomain: Subdomain,
    pub gram: DMatrix<f64>,
}

impl Experiment {
    pub fn new(config: &ExperimentConfig) -> Result<Self> {
        let domain = config.domain()?;
        let basis = EigenBasis::new(domain, config.modes)?;
        let subdomain = config.subdomain()?;
        Ok(Self {
            config: config.clone(),
            profile: config.profile()?,
            gram: gram_subdomain(&subdomain, &basis),
            domain,
            basis,
            subdomain,
        })
    }

    /// Constants in the configured mode, at observation time `T`.
    pub fn constants(&self) -> Result<ConstantsSource> {
        match self.config.constants_mode {
            ConstantsMode::Analytic => {
                let r = observation_radius(&self.domain, &self.subdomain)?;
                Ok(ConstantsSource::Analytic(constants_convex(
                    &self.domain,
                    r,
                    &self.profile,
                    self.config.xi,
                )?))
            }
            ConstantsMode::Empirical => {
                let samples = empirical_samples(
                    &self.basis,
                    &self.profile,
                    self.config.t,
                    &self.gram,
                    self.config.empirical_samples,
                    self.config.seed,
                )?;
                Ok(ConstantsSource::Empirical(fit_empirical(
                    &self.basis,
                    &self.profile,
                    self.config.t,
                    &self.gram,
                    &samples,
                )?))
            }
        }
    }

    /// Clean observation of `u(·,T)` on `ω`.
    pub fn observe(&self, u0: &crate::spectral::SpectralField) -> Result<Observation> {
        let ut = evolve(u0, &self.basis, &self.profile, 0.0, self.config.t)?;
        Observation::sample(&ut, &self.basis, self.subdomain, self.config.t, self.config.grid_points)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    /// Noise level relative to `‖u₀‖`.
    pub delta: f64,
    pub method: Method,
    pub seed: u64,
    pub epsilon: Option<f64>,
    pub alpha: Option<f64>,
    pub bound: f64,
    pub error: f64,
    pub bound_ok: bool,
    pub runtime_ms: f64,
}

fn noise_seed(seed: u64, delta_index: usize) -> u64 {
    seed.wrapping_mul(0x9E37_79B9_7F4A_7C15)
        .wrapping_add(delta_index as u64 + 1)
}

fn stage(method: Method, e: Error) -> Error {
    let tag = |m: String| format!("{} stage: {m}", method.name());
    match e {
        Error::InvalidInput(m) => Error::InvalidInput(tag(m)),
        Error::Rejected(m) => Error::Rejected(tag(m)),
        Error::BoundViolation(m) => Error::BoundViolation(tag(m)),
        other => other,
    }
}

fn run_cell(
    exp: &Experiment,
    chain: Option<CChain>,
    delta_index: usize,
    seed: u64,
    method: Method,
) -> Result<SweepRow> {
    let cfg = &exp.config;
    let rel = cfg.delta_list[delta_index];
    let start = Instant::now();
    let u0 = synthesize_initial(cfg.decay, cfg.modes, seed)?;
    let priors = Priors::of(&u0, &exp.basis)?;
    let delta = rel * priors.l2;
    let nseed = noise_seed(seed, delta_index);
    let (epsilon, alpha, bound, g) = match method {
        Method::Global | Method::Baseline => {
            let ut = evolve(&u0, &exp.basis, &exp.profile, 0.0, cfg.t)?;
            let fbar = ut.add(&coefficient_noise(cfg.modes, delta, nseed)?);
            if method == Method::Global {
                let (g, sel) = global_backward(&fbar, &exp.basis, &exp.profile, cfg.t, delta, priors, None)?;
                (None, sel.alpha, sel.bound, g)
            } else {
                let cutoff = match cfg.baseline_cutoff {
                    Some(c) => c,
                    None => auto_cutoff(&exp.basis, cfg.t, &exp.profile, delta, priors)?,
                };
                let g = truncation_baseline(&fbar, &exp.basis, cutoff, cfg.t, &exp.profile)?;
                let b = truncation_bound(&exp.basis, cutoff, cfg.t, &exp.profile, delta, priors)?;
                (None, None, b, g)
            }
        }
        Method::Local => {
            let chain = chain.ok_or_else(|| Error::invalid("local method needs constants"))?;
            let obs = inject_noise(&exp.observe(&u0)?, delta, nseed)?.with_priors(delta, priors.l2, priors.h01);
            let pc = PipelineConfig {
                t: cfg.t,
                n_bank: cfg.bank,
                chain,
                constants_mode: cfg.constants_mode,
                zeta_mode: cfg.zeta_mode,
                priors,
                k_scale: cfg.k_scale,
            };
            let rep = local_reconstruct(&obs, &exp.basis, &exp.profile, &pc)?;
            (Some(rep.epsilon), rep.alpha, rep.reported_bound, rep.g)
        }
    };
    let error = u0.sub(&g).l2();
    let runtime_ms = if cfg.timing {
        start.elapsed().as_secs_f64() * 1e3
    } else {
        0.0
    };
    Ok(SweepRow {
        delta: rel,
        method,
        seed,
        epsilon,
        alpha,
        bound,
        error,
        bound_ok: error <= bound,
        runtime_ms,
    })
}

/// Runs every `(δ, seed, method)` cell in parallel; rows come back ordered
/// by δ, then method, then seed.
pub fn run_sweep(config: &ExperimentConfig) -> Result<Vec<SweepRow>> {
    if config.delta_list.is_empty() {
        return Ok(Vec::new());
    }
    let exp = Experiment::new(config)?;
    let chain = if config.methods.contains(&Method::Local) {
        Some(exp.constants().map_err(|e| stage(Method::Local, e))?.chain())
    } else {
        None
    };
    let mut cells = Vec::new();
    for di in 0..config.delta_list.len() {
        for (mi, &m) in config.methods.iter().enumerate() {
            for s in 0..config.seed_count as u64 {
                cells.push((di, mi, m, config.seed.wrapping_add(s)));
            }
        }
    }
    let mut rows: Vec<((usize, usize, u64), SweepRow)> = cells
        .into_par_iter()
        .map(|(di, mi, m, seed)| {
            run_cell(&exp, chain, di, seed, m)
                .map(|row| ((di, mi, seed), row))
                .map_err(|e| stage(m, e))
        })
        .collect::<Result<_>>()?;
    rows.sort_by_key(|(k, _)| *k);
    Ok(rows.into_iter().map(|(_, r)| r).collect())
}

fn opt(v: Option<f64>) -> String {
    v.map(fmt_sci).unwrap_or_default()
}

pub fn sweep_csv(rows: &[SweepRow]) -> String {
    let mut out = String::from(SWEEP_HEADER);
    out.push('\n');
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{}\n",
            fmt_sci(r.delta),
            r.method.name(),
            opt(r.epsilon),
            opt(r.alpha),
            fmt_sci(r.bound),
            fmt_sci(r.error),
            r.bound_ok,
            fmt_sci(r.runtime_ms)
        ));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::config::parse_config;

    fn small(extra: &str) -> ExperimentConfig {
        parse_config(&format!(
            "domain_length = 1\nT = 0.1\nmodes = 24\nbank = 12\ngrid_points = 513\n{extra}"
        ))
        .unwrap()
    }

    #[test]
    fn empty_delta_list_gives_no_rows() {
        let cfg = small("delta_list =\n");
        assert!(run_sweep(&cfg).unwrap().is_empty());
        assert_eq!(sweep_csv(&[]), format!("{SWEEP_HEADER}\n"));
    }

    #[test]
    fn sweep_grid_shape_and_bounds() {
        let cfg = small("delta_list = 1e-2, 1e-3, 1e-4, 1e-5, 1e-6\nconstants_mode = empirical\n");
        let rows = run_sweep(&cfg).unwrap();
        assert_eq!(rows.len(), 45);
        assert!(rows.iter().all(|r| r.bound_ok), "{rows:#?}");
        assert!(rows.iter().all(|r| r.runtime_ms == 0.0));
    }

    #[test]
    fn sweep_is_deterministic() {
        let cfg = small("delta_list = 1e-3, 1e-5\nconstants_mode = empirical\nseed = 9\n");
        let a = sweep_csv(&run_sweep(&cfg).unwrap());
        let b = sweep_csv(&run_sweep(&cfg).unwrap());
        assert_eq!(a, b);
        assert_eq!(a.lines().count(), 1 + 2 * 3 * 3);
    }

    #[test]
    fn analytic_constants_gate_the_local_method() {
        let cfg = small("delta_list = 1e-4\nmethods = local\nseed_count = 1\n");
        let rows = run_sweep(&cfg).unwrap();
        assert_eq!(rows.len(), 1);
        assert!(rows[0].alpha.is_none() && rows[0].bound_ok);
    }
}
