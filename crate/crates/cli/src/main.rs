use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use heat_inverse::control::{control_mode_bank, control_ln_k, verify_control_bounds, ControlSetup};
use heat_inverse::fd_oracle::{fd_evolve, oracle_gap, FdGrid};
use heat_inverse::filtering::{global_backward, Priors};
use heat_inverse::harness::{
    coefficient_noise, inject_noise, load_config, run_sweep, sweep_csv, ConstantsSource, Experiment,
    ExperimentConfig,
};
use heat_inverse::local_backward::{local_reconstruct, PipelineConfig};
use heat_inverse::spectral::{evolve, fmt_sci, synthesize_initial, Observation, SpectralField};
use heat_inverse::{Error, Result};

/// Backward heat-equation reconstruction from subdomain observations.
///
/// Exit status: 0 on success, 1 on usage or configuration errors, 2 when a
/// proven inequality fails on a computed instance.
#[derive(Parser)]
#[command(name = "heat-inverse", version, arg_required_else_help = true)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// Experiment configuration file (`key = value` lines).
    #[arg(long, value_name = "PATH")]
    config: PathBuf,
    /// Output CSV; stdout when omitted.
    #[arg(long, value_name = "PATH")]
    out: Option<PathBuf>,
    /// Overrides `seed` from the configuration.
    #[arg(long, value_name = "INT")]
    seed: Option<u64>,
    /// Overrides `modes` from the configuration.
    #[arg(long, value_name = "INT")]
    modes: Option<usize>,
    /// Worker threads; all cores when omitted.
    #[arg(long, value_name = "INT")]
    parallel: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Evolves a seeded initial field to time T and writes its coefficients.
    Forward(Common),
    /// Filtered reconstruction from noisy whole-domain data at time T.
    GlobalBackward {
        #[command(flatten)]
        common: Common,
        /// One-row report CSV: delta, alpha, bound, error.
        #[arg(long, value_name = "PATH")]
        report: Option<PathBuf>,
    },
    /// Solves the control problem for each bank mode and checks its bounds.
    Control(Common),
    /// Reconstruction from noisy samples of u(T) on the observation window.
    LocalBackward {
        #[command(flatten)]
        common: Common,
        /// `x, value` samples at time T; a seeded synthetic observation is
        /// used when omitted (then `noise_level`, `prior_l2`, `prior_h01`
        /// are not needed).
        #[arg(long, value_name = "PATH")]
        observation: Option<PathBuf>,
        /// One-row report CSV: delta, epsilon, effective_delta, alpha, bound, error.
        #[arg(long, value_name = "PATH")]
        report: Option<PathBuf>,
    },
    /// Prints the observability constants and the derived chain.
    Constants(Common),
    /// Runs every (delta, seed, method) cell and writes one CSV row each.
    Sweep(Common),
    /// Compares the spectral propagator with the finite-difference solver.
    OracleCheck(Common),
}

enum Outcome {
    Ok,
    Violation(String),
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else if matches!(
                e.kind(),
                clap::error::ErrorKind::DisplayHelpOnMissingArgumentOrSubcommand
            ) {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match run(cli.command) {
        Ok(Outcome::Ok) => ExitCode::SUCCESS,
        Ok(Outcome::Violation(msg)) => {
            eprintln!("bound violation: {msg}");
            ExitCode::from(2)
        }
        Err(Error::BoundViolation(msg)) => {
            eprintln!("bound violation: {msg}");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}

fn setup(common: &Common) -> Result<ExperimentConfig> {
    if let Some(n) = common.parallel {
        if n == 0 {
            return Err(Error::Config {
                line: None,
                message: "--parallel must be positive".into(),
            });
        }
        // fails only if a pool already exists, which cannot happen here
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    let mut cfg = load_config(&common.config)?;
    if let Some(s) = common.seed {
        cfg.seed = s;
    }
    if let Some(m) = common.modes {
        if m == 0 || cfg.bank > m {
            return Err(Error::Config {
                line: None,
                message: format!("--modes must be at least bank = {}", cfg.bank),
            });
        }
        cfg.modes = m;
    }
    Ok(cfg)
}

fn emit(path: Option<&Path>, text: &str) -> Result<()> {
    match path {
        Some(p) => fs::write(p, text).map_err(Error::from),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn first_delta(cfg: &ExperimentConfig) -> Result<f64> {
    cfg.delta_list.first().copied().ok_or_else(|| Error::Config {
        line: None,
        message: "delta_list must not be empty for this subcommand".into(),
    })
}

fn opt(v: Option<f64>) -> String {
    v.map(fmt_sci).unwrap_or_default()
}

fn run(command: Command) -> Result<Outcome> {
    match command {
        Command::Forward(c) => forward(&c),
        Command::GlobalBackward { common, report } => global(&common, report.as_deref()),
        Command::Control(c) => control(&c),
        Command::LocalBackward {
            common,
            observation,
            report,
        } => local(&common, observation.as_deref(), report.as_deref()),
        Command::Constants(c) => constants(&c),
        Command::Sweep(c) => sweep(&c),
        Command::OracleCheck(c) => oracle(&c),
    }
}

fn forward(c: &Common) -> Result<Outcome> {
    let cfg = setup(c)?;
    let exp = Experiment::new(&cfg)?;
    let u0 = synthesize_initial(cfg.decay, cfg.modes, cfg.seed)?;
    let ut = evolve(&u0, &exp.basis, &exp.profile, 0.0, cfg.t)?;
    emit(c.out.as_deref(), &ut.to_csv(&exp.basis))?;
    Ok(Outcome::Ok)
}

fn global(c: &Common, report: Option<&Path>) -> Result<Outcome> {
    let cfg = setup(c)?;
    let exp = Experiment::new(&cfg)?;
    let u0 = synthesize_initial(cfg.decay, cfg.modes, cfg.seed)?;
    let priors = Priors::of(&u0, &exp.basis)?;
    let delta = first_delta(&cfg)? * priors.l2;
    let ut = evolve(&u0, &exp.basis, &exp.profile, 0.0, cfg.t)?;
    let fbar = ut.add(&coefficient_noise(cfg.modes, delta, cfg.seed)?);
    let (g, sel) = global_backward(&fbar, &exp.basis, &exp.profile, cfg.t, delta, priors, None)?;
    let error = u0.sub(&g).l2();
    emit(c.out.as_deref(), &g.to_csv(&exp.basis))?;
    if let Some(p) = report {
        let text = format!(
            "delta,alpha,bound,error\n{},{},{},{}\n",
            fmt_sci(delta),
            opt(sel.alpha),
            fmt_sci(sel.bound),
            fmt_sci(error)
        );
        fs::write(p, text)?;
    }
    if error > sel.bound {
        return Ok(Outcome::Violation(format!("error {error} exceeds bound {}", sel.bound)));
    }
    Ok(Outcome::Ok)
}

fn control(c: &Common) -> Result<Outcome> {
    let cfg = setup(c)?;
    let exp = Experiment::new(&cfg)?;
    let chain = exp.constants()?.chain();
    let ln_k = control_ln_k(&chain, cfg.t, cfg.epsilon) + cfg.k_scale.ln();
    let ctl = ControlSetup::new(
        &exp.basis,
        &exp.profile,
        cfg.t,
        exp.subdomain,
        cfg.epsilon,
        ln_k,
    )?;
    let bank = control_mode_bank(&ctl, cfg.bank)?;
    let mut out = String::from("i,h_norm,psi_norm,eps_bound_ok,h_bound_ok,cg_iters\n");
    let mut failed = Vec::new();
    for (i, sol) in bank.iter().enumerate() {
        let mut phi = vec![0.0; cfg.modes];
        phi[i] = 1.0;
        let rep = verify_control_bounds(sol, &ctl, &phi)?;
        let flag = |v: Option<bool>| v.map(|b| b.to_string()).unwrap_or_default();
        out.push_str(&format!(
            "{},{},{},{},{},{}\n",
            i + 1,
            fmt_sci(sol.h_norm_omega),
            fmt_sci(sol.psi_norm()),
            flag(rep.eps_bound_ok),
            flag(rep.h_bound_ok),
            sol.diagnostics.cg_iters
        ));
        if !rep.all_ok() {
            failed.push(i + 1);
        }
    }
    emit(c.out.as_deref(), &out)?;
    if !failed.is_empty() {
        return Ok(Outcome::Violation(format!("control bounds fail for modes {failed:?}")));
    }
    Ok(Outcome::Ok)
}

fn local(c: &Common, observation: Option<&Path>, report: Option<&Path>) -> Result<Outcome> {
    let cfg = setup(c)?;
    let exp = Experiment::new(&cfg)?;
    let need = |v: Option<f64>, key: &str| {
        v.ok_or_else(|| Error::Config {
            line: None,
            message: format!("`{key}` is required with --observation"),
        })
    };
    let (obs, priors, truth) = match observation {
        Some(path) => {
            let (xs, values) = Observation::parse_samples(&fs::read_to_string(path)?)?;
            let priors = Priors::new(need(cfg.prior_l2, "prior_l2")?, need(cfg.prior_h01, "prior_h01")?)?;
            let mut obs = Observation::sample(
                &SpectralField::zeros(cfg.modes),
                &exp.basis,
                exp.subdomain,
                cfg.t,
                xs.len(),
            )?;
            if xs.iter().zip(&obs.xs).any(|(a, b)| (a - b).abs() > 1e-9 * cfg.domain_length) {
                return Err(Error::InvalidInput(
                    "observation abscissae must be equispaced over the observation window".into(),
                ));
            }
            obs.xs = xs;
            obs.values = values;
            let obs = obs.with_priors(need(cfg.noise_level, "noise_level")?, priors.l2, priors.h01);
            (obs, priors, None)
        }
        None => {
            let u0 = synthesize_initial(cfg.decay, cfg.modes, cfg.seed)?;
            let priors = Priors::of(&u0, &exp.basis)?;
            let delta = first_delta(&cfg)? * priors.l2;
            let obs = inject_noise(&exp.observe(&u0)?, delta, cfg.seed)?
                .with_priors(delta, priors.l2, priors.h01);
            (obs, priors, Some(u0))
        }
    };
    let pc = PipelineConfig {
        t: cfg.t,
        n_bank: cfg.bank,
        chain: exp.constants()?.chain(),
        constants_mode: cfg.constants_mode,
        zeta_mode: cfg.zeta_mode,
        priors,
        k_scale: cfg.k_scale,
    };
    let mut rep = local_reconstruct(&obs, &exp.basis, &exp.profile, &pc)?;
    if let Some(u0) = &truth {
        rep = rep.with_truth(u0);
    }
    emit(c.out.as_deref(), &rep.g.to_csv(&exp.basis))?;
    if let Some(p) = report {
        let text = format!(
            "delta,epsilon,effective_delta,alpha,bound,error\n{},{},{},{},{},{}\n",
            fmt_sci(obs.delta),
            fmt_sci(rep.epsilon),
            fmt_sci(rep.effective_delta),
            opt(rep.alpha),
            fmt_sci(rep.reported_bound),
            opt(rep.actual_error)
        );
        fs::write(p, text)?;
    }
    if rep.bound_ok() == Some(false) {
        return Ok(Outcome::Violation(format!(
            "error {} exceeds bound {}",
            rep.actual_error.unwrap_or(f64::NAN),
            rep.reported_bound
        )));
    }
    Ok(Outcome::Ok)
}

fn constants(c: &Common) -> Result<Outcome> {
    let cfg = setup(c)?;
    let exp = Experiment::new(&cfg)?;
    let src = exp.constants()?;
    let chain = src.chain();
    let mut rows: Vec<(&str, f64)> = Vec::new();
    match &src {
        ConstantsSource::Analytic(k) => {
            rows.extend([
                ("R", k.radius),
                ("r", k.r),
                ("C0", k.big_c0),
                ("C1", k.big_c1),
                ("xi", k.xi),
                ("ell", k.ell),
                ("S_ell", k.s_ell),
            ]);
        }
        ConstantsSource::Empirical(k) => rows.push(("samples", k.samples as f64)),
    }
    rows.extend([
        ("K", src.ln_k().exp()),
        ("ln_K", src.ln_k()),
        ("mu", src.mu()),
        ("c1", chain.c1()),
        ("ln_c1", chain.ln_c1),
        ("c2", chain.c2),
        ("c3", chain.c3()),
        ("ln_c3", chain.ln_c3),
        ("c4", chain.c4),
    ]);
    let width = rows.iter().map(|(k, _)| k.len()).max().unwrap_or(0);
    let mut text = String::new();
    for (k, v) in &rows {
        text.push_str(&format!("{k:<width$}  {}\n", fmt_sci(*v)));
    }
    let mut csv = String::from("key,value\n");
    for (k, v) in &rows {
        csv.push_str(&format!("{k},{}\n", fmt_sci(*v)));
    }
    match &c.out {
        Some(p) => {
            print!("{text}");
            fs::write(p, csv)?;
        }
        None => print!("{text}\n{csv}"),
    }
    Ok(Outcome::Ok)
}

fn sweep(c: &Common) -> Result<Outcome> {
    let cfg = setup(c)?;
    let rows = run_sweep(&cfg)?;
    emit(c.out.as_deref(), &sweep_csv(&rows))?;
    let bad = rows.iter().filter(|r| !r.bound_ok).count();
    if bad > 0 {
        return Ok(Outcome::Violation(format!("{bad} of {} rows exceed their bound", rows.len())));
    }
    Ok(Outcome::Ok)
}

fn oracle(c: &Common) -> Result<Outcome> {
    let cfg = setup(c)?;
    let exp = Experiment::new(&cfg)?;
    let grid = FdGrid::new(cfg.fd_points, cfg.domain_length)?;
    let mut out = String::from("seed,t,gap,relative_gap,ok\n");
    let mut failed = 0;
    for s in 0..cfg.seed_count as u64 {
        let seed = cfg.seed.wrapping_add(s);
        let u0 = synthesize_initial(cfg.decay, cfg.modes, seed)?;
        let start = u0.sample(&exp.basis, &grid.nodes());
        let fd = fd_evolve(&start, &grid, &exp.profile, cfg.t, cfg.fd_steps)?;
        let ut = evolve(&u0, &exp.basis, &exp.profile, 0.0, cfg.t)?;
        let gap = oracle_gap(&ut, &exp.basis, &fd, &grid)?;
        let rel = gap / u0.l2();
        let ok = rel <= 1e-4;
        failed += usize::from(!ok);
        out.push_str(&format!("{seed},{},{},{},{ok}\n", fmt_sci(cfg.t), fmt_sci(gap), fmt_sci(rel)));
    }
    emit(c.out.as_deref(), &out)?;
    if failed > 0 {
        return Ok(Outcome::Violation(format!("{failed} oracle gaps exceed 1e-4·‖u₀‖")));
    }
    Ok(Outcome::Ok)
}
