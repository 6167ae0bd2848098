//! Crank–Nicolson reference solver for `u_t = p(t) u_xx` with homogeneous
//! Dirichlet ends. It shares no code path with the spectral propagator and
//! serves as its brute-force check.

use crate::error::{Error, Result};
use crate::spectral::{DiffusionProfile, EigenBasis, SpectralField};

/// `m` interior nodes `x_k = k·dx`, `dx = L/(m+1)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FdGrid {
    pub m: usize,
    pub length: f64,
}

impl FdGrid {
    pub fn new(m: usize, length: f64) -> Result<Self> {
        if m < 64 {
            return Err(Error::invalid(format!("FD grid needs M >= 64, got {m}")));
        }
        if !(length > 0.0) {
            return Err(Error::invalid("FD grid length must be positive"));
        }
        Ok(Self { m, length })
    }

    pub fn dx(&self) -> f64 {
        self.length / (self.m + 1) as f64
    }

    pub fn nodes(&self) -> Vec<f64> {
        let dx = self.dx();
        (1..=self.m).map(|k| k as f64 * dx).collect()
    }

    /// Discrete `L²` norm `√(dx Σ v_k²)`.
    pub fn l2(&self, v: &[f64]) -> f64 {
        (self.dx() * v.iter().map(|x| x * x).sum::<f64>()).sqrt()
    }
}

/// Advances interior values from time 0 to `t` in `steps` Crank–Nicolson
/// steps, sampling `p` at step midpoints.
pub fn fd_evolve(
    initial: &[f64],
    grid: &FdGrid,
    profile: &DiffusionProfile,
    t: f64,
    steps: usize,
) -> Result<Vec<f64>> {
    if initial.len() != grid.m {
        return Err(Error::invalid(format!(
            "initial data has {} values for {} interior nodes",
            initial.len(),
            grid.m
        )));
    }
    if steps == 0 {
        return Err(Error::invalid("need at least one time step"));
    }
    if !(t >= 0.0) {
        return Err(Error::invalid("final time must be nonnegative"));
    }
    if t == 0.0 {
        return Ok(initial.to_vec());
    }
    let m = grid.m;
    let dt = t / steps as f64;
    let inv_dx2 = 1.0 / (grid.dx() * grid.dx());
    let mut u = initial.to_vec();
    let mut rhs = vec![0.0; m];
    let mut c_prime = vec![0.0; m];
    for n in 0..steps {
        let p_mid = profile.value((n as f64 + 0.5) * dt);
        let r = 0.5 * dt * p_mid * inv_dx2;
        // rhs = (I − r·T) u with T = tridiag(−1, 2, −1)
        for k in 0..m {
            let left = if k > 0 { u[k - 1] } else { 0.0 };
            let right = if k + 1 < m { u[k + 1] } else { 0.0 };
            rhs[k] = (1.0 - 2.0 * r) * u[k] + r * (left + right);
        }
        // (I + r·T) u_next = rhs, Thomas algorithm with constant bands
        let (diag, off) = (1.0 + 2.0 * r, -r);
        c_prime[0] = off / diag;
        rhs[0] /= diag;
        for k in 1..m {
            let denom = diag - off * c_prime[k - 1];
            c_prime[k] = off / denom;
            rhs[k] = (rhs[k] - off * rhs[k - 1]) / denom;
        }
        u[m - 1] = rhs[m - 1];
        for k in (0..m - 1).rev() {
            u[k] = rhs[k] - c_prime[k] * u[k + 1];
        }
    }
    Ok(u)
}

/// Discrete `L²` distance between a spectral field sampled on the FD grid
/// and FD values.
pub fn oracle_gap(
    spectral: &SpectralField,
    basis: &EigenBasis,
    fd_values: &[f64],
    grid: &FdGrid,
) -> Result<f64> {
    if fd_values.len() != grid.m {
        return Err(Error::invalid("FD values do not match the grid"));
    }
    if (basis.domain().length() - grid.length).abs() > 1e-12 * grid.length {
        return Err(Error::invalid("spectral and FD domains differ"));
    }
    let samples = spectral.sample(basis, &grid.nodes());
    let diff: Vec<f64> = samples.iter().zip(fd_values).map(|(a, b)| a - b).collect();
    Ok(grid.l2(&diff))
}

/// Discrete `L²` distance between two grid functions.
pub fn grid_gap(a: &[f64], b: &[f64], grid: &FdGrid) -> f64 {
    let diff: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    grid.l2(&diff)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spectral::{evolve, synthesize_initial, DomainSpec};
    use std::f64::consts::PI;

    fn setup(n: usize) -> (EigenBasis, FdGrid, DiffusionProfile) {
        let basis = EigenBasis::new(DomainSpec::centered(1.0).unwrap(), n).unwrap();
        let grid = FdGrid::new(2000, 1.0).unwrap();
        let p = DiffusionProfile::constant(1.0, 1.0).unwrap();
        (basis, grid, p)
    }

    #[test]
    fn first_mode_decays_at_the_exact_rate() {
        let (basis, grid, p) = setup(4);
        let e1 = SpectralField::mode(4, 1);
        let u0 = e1.sample(&basis, &grid.nodes());
        let u = fd_evolve(&u0, &grid, &p, 0.1, 2000).unwrap();
        let exact: Vec<f64> = u0.iter().map(|v| v * (-PI * PI * 0.1).exp()).collect();
        assert!(grid_gap(&u, &exact, &grid) < 1e-5);
        let spectral = evolve(&e1, &basis, &p, 0.0, 0.1).unwrap();
        assert!(oracle_gap(&spectral, &basis, &u, &grid).unwrap() < 1e-5);
    }

    #[test]
    fn identity_and_zero_paths() {
        let (basis, grid, p) = setup(4);
        let u0 = SpectralField::mode(4, 2).sample(&basis, &grid.nodes());
        assert_eq!(fd_evolve(&u0, &grid, &p, 0.0, 10).unwrap(), u0);
        let z = fd_evolve(&vec![0.0; grid.m], &grid, &p, 0.3, 50).unwrap();
        assert!(z.iter().all(|v| *v == 0.0));
        assert!(fd_evolve(&u0, &grid, &p, 0.1, 0).is_err());
    }

    #[test]
    fn gap_is_symmetric_and_vanishes_on_identical_input() {
        let (basis, grid, _) = setup(8);
        let f = synthesize_initial(2.0, 8, 5).unwrap();
        let s = f.sample(&basis, &grid.nodes());
        assert_eq!(oracle_gap(&f, &basis, &s, &grid).unwrap(), 0.0);
        let g = synthesize_initial(2.0, 8, 6).unwrap().sample(&basis, &grid.nodes());
        assert_eq!(grid_gap(&s, &g, &grid), grid_gap(&g, &s, &grid));
    }

    #[test]
    fn discrete_energy_decays() {
        let (basis, _, _) = setup(16);
        let grid = FdGrid::new(200, 1.0).unwrap();
        let p = DiffusionProfile::sinusoidal(1.0, 0.2, 3.0, 1.0).unwrap();
        let mut u = synthesize_initial(2.0, 16, 9).unwrap().sample(&basis, &grid.nodes());
        let mut prev = grid.l2(&u);
        for _ in 0..10 {
            u = fd_evolve(&u, &grid, &p, 0.01, 10).unwrap();
            let now = grid.l2(&u);
            assert!(now < prev);
            prev = now;
        }
    }

    #[test]
    fn grid_validation() {
        assert!(FdGrid::new(10, 1.0).is_err());
        let grid = FdGrid::new(64, 1.0).unwrap();
        let p = DiffusionProfile::constant(1.0, 1.0).unwrap();
        assert!(fd_evolve(&[0.0; 10], &grid, &p, 0.1, 1).is_err());
    }
}
