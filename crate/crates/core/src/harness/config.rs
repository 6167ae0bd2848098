//! Line-oriented `key = value` experiment configuration.
//!
//! `#` starts a comment. Unknown keys are rejected. Required keys are
//! `domain_length`, `T` and `delta_list` (which may be empty).

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::local_backward::{ConstantsMode, ZetaMode};
use crate::spectral::{DiffusionProfile, DomainSpec, ProfileKind, Subdomain};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    Global,
    Local,
    Baseline,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Global => "global",
            Method::Local => "local",
            Method::Baseline => "baseline",
        }
    }

    fn parse(s: &str) -> Option<Self> {
        match s {
            "global" => Some(Method::Global),
            "local" => Some(Method::Local),
            "baseline" => Some(Method::Baseline),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ProfileName {
    Constant,
    Affine,
    Sinusoidal,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub domain_length: f64,
    /// Centre `x₀` of the observation ball; defaults to `L/2`.
    pub center: Option<f64>,
    /// Observation window; defaults to `(0.3L, 0.7L)`.
    pub omega: Option<(f64, f64)>,
    pub profile: ProfileName,
    pub p_base: f64,
    pub p_slope: f64,
    pub p_amp: f64,
    pub p_freq: f64,
    pub t: f64,
    pub modes: usize,
    pub bank: usize,
    pub decay: f64,
    pub seed: u64,
    pub seed_count: usize,
    /// Noise levels relative to `‖u₀‖`.
    pub delta_list: Vec<f64>,
    pub constants_mode: ConstantsMode,
    pub zeta_mode: ZetaMode,
    pub xi: f64,
    pub grid_points: usize,
    /// `None` picks the cutoff minimising the baseline bound.
    pub baseline_cutoff: Option<usize>,
    pub methods: Vec<Method>,
    pub empirical_samples: usize,
    /// `ε` for the `control` subcommand.
    pub epsilon: f64,
    pub k_scale: f64,
    pub timing: bool,
    pub fd_points: usize,
    pub fd_steps: usize,
    /// Absolute noise level and priors for externally supplied observations.
    pub noise_level: Option<f64>,
    pub prior_l2: Option<f64>,
    pub prior_h01: Option<f64>,
}

impl ExperimentConfig {
    /// Defaults around the three required values.
    pub fn new(domain_length: f64, t: f64, delta_list: Vec<f64>) -> Self {
        Self {
            domain_length,
            center: None,
            omega: None,
            profile: ProfileName::Constant,
            p_base: 1.0,
            p_slope: 0.0,
            p_amp: 0.0,
            p_freq: 1.0,
            t,
            modes: 64,
            bank: 32,
            decay: 3.0,
            seed: 0,
            seed_count: 3,
            delta_list,
            constants_mode: ConstantsMode::Analytic,
            zeta_mode: ZetaMode::Default,
            xi: 0.5,
            grid_points: 1025,
            baseline_cutoff: None,
            methods: vec![Method::Global, Method::Local, Method::Baseline],
            empirical_samples: 10,
            epsilon: 1e-2,
            k_scale: 1.0,
            timing: false,
            fd_points: 2000,
            fd_steps: 2000,
            noise_level: None,
            prior_l2: None,
            prior_h01: None,
        }
    }

    pub fn domain(&self) -> Result<DomainSpec> {
        match self.center {
            Some(c) => DomainSpec::new(self.domain_length, c),
            None => DomainSpec::centered(self.domain_length),
        }
    }

    pub fn subdomain(&self) -> Result<Subdomain> {
        let domain = self.domain()?;
        let (a, b) = self
            .omega
            .unwrap_or((0.3 * self.domain_length, 0.7 * self.domain_length));
        Subdomain::new(a, b, &domain)
    }

    /// The profile on `[0, 3T]`, the longest window any method uses.
    pub fn profile(&self) -> Result<DiffusionProfile> {
        let kind = match self.profile {
            ProfileName::Constant => ProfileKind::Constant { value: self.p_base },
            ProfileName::Affine => ProfileKind::Affine {
                base: self.p_base,
                slope: self.p_slope,
            },
            ProfileName::Sinusoidal => ProfileKind::Sinusoidal {
                base: self.p_base,
                amplitude: self.p_amp,
                frequency: self.p_freq,
            },
        };
        DiffusionProfile::new(kind, 3.0 * self.t)
    }

    fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::config(None, m));
        if !(self.domain_length > 0.0) {
            return bad(format!("domain_length must be positive, got {}", self.domain_length));
        }
        if !(self.t > 0.0) {
            return bad(format!("T must be positive, got {}", self.t));
        }
        if !(self.xi > 0.0 && self.xi < 1.0) {
            return bad(format!("xi must lie in (0, 1), got {}", self.xi));
        }
        if self.modes == 0 {
            return bad("modes must be positive".into());
        }
        if self.bank == 0 || self.bank > self.modes {
            return bad(format!("bank must lie in 1..={}, got {}", self.modes, self.bank));
        }
        if !(self.decay > 1.0) {
            return bad(format!("decay must exceed 1, got {}", self.decay));
        }
        if self.seed_count == 0 {
            return bad("seed_count must be positive".into());
        }
        if let Some(d) = self.delta_list.iter().find(|d| !(**d > 0.0 && **d < 1.0)) {
            return bad(format!("delta_list entries must lie in (0, 1), got {d}"));
        }
        if self.grid_points < 3 {
            return bad("grid_points must be at least 3".into());
        }
        if let Some(c) = self.baseline_cutoff {
            if c == 0 || c > self.modes {
                return bad(format!("baseline_cutoff must lie in 1..={}", self.modes));
            }
        }
        if !(self.epsilon > 0.0) || !(self.k_scale > 0.0) {
            return bad("epsilon and k_scale must be positive".into());
        }
        if self.empirical_samples == 0 {
            return bad("empirical_samples must be positive".into());
        }
        if self.fd_points < 64 || self.fd_steps == 0 {
            return bad("fd_points must be at least 64 and fd_steps positive".into());
        }
        if [self.noise_level, self.prior_l2, self.prior_h01]
            .iter()
            .flatten()
            .any(|v| !(*v > 0.0))
        {
            return bad("noise_level, prior_l2 and prior_h01 must be positive".into());
        }
        self.domain().map_err(|e| Error::config(None, e.to_string()))?;
        self.subdomain().map_err(|e| Error::config(None, e.to_string()))?;
        self.profile().map_err(|e| Error::config(None, e.to_string()))?;
        Ok(())
    }

    /// Text form accepted by [`parse_config`].
    pub fn emit(&self) -> String {
        let mut s = String::new();
        let mut kv = |k: &str, v: String| {
            let _ = writeln!(s, "{k} = {v}");
        };
        kv("domain_length", self.domain_length.to_string());
        if let Some(c) = self.center {
            kv("center", c.to_string());
        }
        if let Some((a, b)) = self.omega {
            kv("omega_a", a.to_string());
            kv("omega_b", b.to_string());
        }
        kv(
            "profile",
            match self.profile {
                ProfileName::Constant => "constant",
                ProfileName::Affine => "affine",
                ProfileName::Sinusoidal => "sinusoidal",
            }
            .into(),
        );
        kv("p_base", self.p_base.to_string());
        kv("p_slope", self.p_slope.to_string());
        kv("p_amp", self.p_amp.to_string());
        kv("p_freq", self.p_freq.to_string());
        kv("T", self.t.to_string());
        kv("modes", self.modes.to_string());
        kv("bank", self.bank.to_string());
        kv("decay", self.decay.to_string());
        kv("seed", self.seed.to_string());
        kv("seed_count", self.seed_count.to_string());
        kv(
            "delta_list",
            self.delta_list
                .iter()
                .map(|d| d.to_string())
                .collect::<Vec<_>>()
                .join(", "),
        );
        kv(
            "constants_mode",
            match self.constants_mode {
                ConstantsMode::Analytic => "analytic",
                ConstantsMode::Empirical => "empirical",
            }
            .into(),
        );
        kv(
            "zeta_mode",
            match self.zeta_mode {
                ZetaMode::Matched => "matched",
                ZetaMode::Default => "default",
            }
            .into(),
        );
        kv("xi", self.xi.to_string());
        kv("grid_points", self.grid_points.to_string());
        kv(
            "baseline_cutoff",
            self.baseline_cutoff
                .map_or("auto".into(), |c| c.to_string()),
        );
        kv(
            "methods",
            self.methods
                .iter()
                .map(|m| m.name())
                .collect::<Vec<_>>()
                .join(", "),
        );
        kv("empirical_samples", self.empirical_samples.to_string());
        kv("epsilon", self.epsilon.to_string());
        kv("k_scale", self.k_scale.to_string());
        kv("timing", self.timing.to_string());
        kv("fd_points", self.fd_points.to_string());
        kv("fd_steps", self.fd_steps.to_string());
        for (k, v) in [
            ("noise_level", self.noise_level),
            ("prior_l2", self.prior_l2),
            ("prior_h01", self.prior_h01),
        ] {
            if let Some(v) = v {
                kv(k, v.to_string());
            }
        }
        s
    }
}

pub fn load_config(path: &Path) -> Result<ExperimentConfig> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::config(None, format!("cannot read {}: {e}", path.display())))?;
    parse_config(&text)
}

pub fn parse_config(text: &str) -> Result<ExperimentConfig> {
    let mut cfg = ExperimentConfig::new(f64::NAN, f64::NAN, Vec::new());
    let (mut have_domain, mut have_t, mut have_delta) = (false, false, false);
    let (mut omega_a, mut omega_b) = (None, None);
    let mut seen = std::collections::HashSet::new();
    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| Error::config(Some(line_no), format!("expected `key = value`, got `{line}`")))?;
        let (key, value) = (key.trim(), value.trim());
        if !seen.insert(key.to_string()) {
            return Err(Error::config(Some(line_no), format!("duplicate key `{key}`")));
        }
        let err = |m: String| Error::config(Some(line_no), m);
        let real = || -> Result<f64> {
            value
                .parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| err(format!("`{key}`: expected a number, got `{value}`")))
        };
        let int = || -> Result<usize> {
            value
                .parse::<usize>()
                .map_err(|_| err(format!("`{key}`: expected a nonnegative integer, got `{value}`")))
        };
        match key {
            "domain_length" => {
                cfg.domain_length = real()?;
                have_domain = true;
            }
            "center" => cfg.center = Some(real()?),
            "omega_a" => omega_a = Some(real()?),
            "omega_b" => omega_b = Some(real()?),
            "profile" => {
                cfg.profile = match value {
                    "constant" => ProfileName::Constant,
                    "affine" => ProfileName::Affine,
                    "sinusoidal" => ProfileName::Sinusoidal,
                    _ => return Err(err(format!("unknown profile `{value}`"))),
                }
            }
            "p_base" => cfg.p_base = real()?,
            "p_slope" => cfg.p_slope = real()?,
            "p_amp" => cfg.p_amp = real()?,
            "p_freq" => cfg.p_freq = real()?,
            "T" => {
                cfg.t = real()?;
                have_t = true;
            }
            "modes" => cfg.modes = int()?,
            "bank" => cfg.bank = int()?,
            "decay" => cfg.decay = real()?,
            "seed" => {
                cfg.seed = value
                    .parse()
                    .map_err(|_| err(format!("`seed`: expected an integer, got `{value}`")))?
            }
            "seed_count" => cfg.seed_count = int()?,
            "delta_list" => {
                have_delta = true;
                cfg.delta_list = value
                    .split(',')
                    .map(str::trim)
                    .filter(|s| !s.is_empty())
                    .map(|s| {
                        s.parse::<f64>()
                            .map_err(|_| err(format!("`delta_list`: bad entry `{s}`")))
                    })
                    .collect::<Result<_>>()?;
            }
            "constants_mode" => {
                cfg.constants_mode = match value {
                    "analytic" => ConstantsMode::Analytic,
                    "empirical" => ConstantsMode::Empirical,
                    _ => return Err(err(format!("constants_mode must be analytic or empirical, got `{value}`"))),
                }
            }
            "zeta_mode" => {
                cfg.zeta_mode = match value {
                    "matched" => ZetaMode::Matched,
                    "default" => ZetaMode::Default,
                    _ => return Err(err(format!("zeta_mode must be matched or default, got `{value}`"))),
                }
            }
            "xi" => {
                cfg.xi = real()?;
                if !(cfg.xi > 0.0 && cfg.xi < 1.0) {
                    return Err(err(format!("xi must lie in (0, 1), got {}", cfg.xi)));
                }
            }
            "grid_points" => cfg.grid_points = int()?,
            "baseline_cutoff" => {
                cfg.baseline_cutoff = if value == "auto" { None } else { Some(int()?) }
            }
            "methods" => {
                cfg.methods = value
                    .split(',')
                    .map(str::trim)
                    .filter(|s| !s.is_empty())
                    .map(|s| Method::parse(s).ok_or_else(|| err(format!("unknown method `{s}`"))))
                    .collect::<Result<_>>()?;
            }
            "empirical_samples" => cfg.empirical_samples = int()?,
            "epsilon" => cfg.epsilon = real()?,
            "k_scale" => cfg.k_scale = real()?,
            "timing" => {
                cfg.timing = value
                    .parse()
                    .map_err(|_| err(format!("`timing`: expected true or false, got `{value}`")))?
            }
            "fd_points" => cfg.fd_points = int()?,
            "fd_steps" => cfg.fd_steps = int()?,
            "noise_level" => cfg.noise_level = Some(real()?),
            "prior_l2" => cfg.prior_l2 = Some(real()?),
            "prior_h01" => cfg.prior_h01 = Some(real()?),
            _ => return Err(err(format!("unknown key `{key}`"))),
        }
    }
    for (have, key) in [(have_domain, "domain_length"), (have_t, "T"), (have_delta, "delta_list")] {
        if !have {
            return Err(Error::config(None, format!("missing required key `{key}`")));
        }
    }
    cfg.omega = match (omega_a, omega_b) {
        (Some(a), Some(b)) => Some((a, b)),
        (None, None) => None,
        _ => return Err(Error::config(None, "omega_a and omega_b must be given together")),
    };
    cfg.validate()?;
    Ok(cfg)
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = "domain_length = 1\nT = 0.1\ndelta_list = 1e-3, 1e-4\n";

    #[test]
    fn minimal_config_gets_defaults() {
        let cfg = parse_config(MINIMAL).unwrap();
        assert_eq!(cfg.xi, 0.5);
        assert_eq!(cfg.constants_mode, ConstantsMode::Analytic);
        assert_eq!(cfg.zeta_mode, ZetaMode::Default);
        assert_eq!(cfg.delta_list, vec![1e-3, 1e-4]);
        assert_eq!(cfg.modes, 64);
        let sub = cfg.subdomain().unwrap();
        assert!((sub.a - 0.3).abs() < 1e-15 && (sub.b - 0.7).abs() < 1e-15);
    }

    #[test]
    fn rejects_bad_values_with_line_numbers() {
        let err = parse_config(&format!("{MINIMAL}xi = 1.5\n")).unwrap_err();
        assert_eq!(err, Error::config(Some(4), "xi must lie in (0, 1), got 1.5"));
        let err = parse_config(&format!("{MINIMAL}colour = blue\n")).unwrap_err();
        assert!(matches!(err, Error::Config { line: Some(4), .. }));
        assert!(parse_config("T = 0.1\ndelta_list =\n").is_err());
        assert!(parse_config(&format!("{MINIMAL}modes = many\n")).is_err());
        assert!(parse_config(&format!("{MINIMAL}bank = 100\n")).is_err());
        assert!(parse_config(&format!("{MINIMAL}T = 0.2\n")).is_err());
    }

    #[test]
    fn comments_and_empty_delta_list() {
        let cfg = parse_config("# sweep\ndomain_length = 2 # metres\nT = 0.1\ndelta_list =\n").unwrap();
        assert!(cfg.delta_list.is_empty());
        assert_eq!(cfg.domain_length, 2.0);
    }

    #[test]
    fn emit_then_parse_round_trips() {
        let mut cfg = parse_config(MINIMAL).unwrap();
        cfg.profile = ProfileName::Sinusoidal;
        cfg.p_amp = 0.1;
        cfg.p_freq = 3.0;
        cfg.omega = Some((0.25, 0.65));
        cfg.baseline_cutoff = Some(7);
        cfg.methods = vec![Method::Local];
        cfg.constants_mode = ConstantsMode::Empirical;
        cfg.center = Some(0.45);
        cfg.prior_l2 = Some(1.25);
        cfg.noise_level = Some(1e-4);
        let back = parse_config(&cfg.emit()).unwrap();
        assert_eq!(back, cfg);
    }
}
