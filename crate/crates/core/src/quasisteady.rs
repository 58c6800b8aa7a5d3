//! Gaussian multi-spike quasi-equilibria.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;

use crate::error::{Error, Result};
use crate::kernels::Kernel;
use crate::pde::{DensityField, Grid};

/// Largest relative spike mass allowed to fall outside the grid.
pub const MAX_TRUNCATED_MASS: f64 = 1e-8;
const NEWTON_MAX_ITER: usize = 100;
const NEWTON_TOL: f64 = 1e-13;

/// Masses, centers and inverse squared widths of an n-spike state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpikeState {
    pub masses: Vec<f64>,
    pub centers: Vec<f64>,
    pub widths_c: Vec<f64>,
    pub eps: f64,
}

impl SpikeState {
    pub fn total_mass(&self) -> f64 {
        self.masses.iter().sum()
    }

    pub fn len(&self) -> usize {
        self.masses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.masses.is_empty()
    }

    pub fn is_admissible(&self) -> bool {
        self.widths_c.iter().all(|&c| c > 0.0)
    }

    /// Returns a copy with every center moved by `dx`.
    pub fn shifted(&self, dx: f64) -> Self {
        let mut s = self.clone();
        s.centers.iter_mut().for_each(|x| *x += dx);
        s
    }

    /// Standard deviation `eps / sqrt(c_j)` of spike `j`.
    pub fn sigma(&self, j: usize) -> f64 {
        self.eps / self.widths_c[j].sqrt()
    }

    /// Density of the Gaussian sum at `x`.
    pub fn density(&self, x: f64) -> f64 {
        (0..self.len())
            .map(|j| gaussian_spike(x, self.masses[j], self.centers[j], self.widths_c[j], self.eps))
            .sum()
    }

    fn check(&self) -> Result<()> {
        let n = self.len();
        if n == 0 || self.centers.len() != n || self.widths_c.len() != n {
            return Err(Error::InvalidArgument(
                "spike state needs matching, nonempty masses/centers/widths".into(),
            ));
        }
        if !(self.eps > 0.0) {
            return Err(Error::InvalidArgument(format!("eps must be positive, got {}", self.eps)));
        }
        if !self.is_admissible() {
            return Err(Error::InadmissibleSpikes {
                centers: self.centers.clone(),
                widths: self.widths_c.clone(),
            });
        }
        Ok(())
    }
}

/// `(M/eps) sqrt(c/2pi) exp(-((x - x0)/eps)^2 c/2)`
pub fn gaussian_spike(x: f64, mass: f64, center: f64, c: f64, eps: f64) -> f64 {
    let y = (x - center) / eps;
    mass / eps * (c / (2.0 * PI)).sqrt() * (-0.5 * c * y * y).exp()
}

/// Bounds `(lo, hi)` on `M1/M2`: `-f'(0)/f'(a) < M1/M2 < -f'(a)/f'(0)`.
pub fn mass_ratio_window(k: &Kernel) -> Result<(f64, f64)> {
    let a = k.require_root()?;
    let (d0, da) = (k.deriv(0.0), k.deriv(a));
    if !(d0 > 0.0 && da < 0.0) {
        return Err(Error::Inadmissible {
            m1: f64::NAN,
            m2: f64::NAN,
            reason: format!("kernel needs f'(0) > 0 > f'(a), got f'(0) = {d0}, f'(a) = {da}"),
        });
    }
    Ok((-d0 / da, -da / d0))
}

/// Open interval of admissible `M1` for total mass `M`.
pub fn admissible_mass_range(total_mass: f64, k: &Kernel) -> Result<(f64, f64)> {
    let (lo, hi) = mass_ratio_window(k)?;
    Ok((total_mass * lo / (1.0 + lo), total_mass * hi / (1.0 + hi)))
}

pub fn admissible(m1: f64, m2: f64, k: &Kernel) -> Result<bool> {
    if !(m1 > 0.0 && m2 > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "spike masses must be positive, got ({m1}, {m2})"
        )));
    }
    let (lo, hi) = mass_ratio_window(k)?;
    let r = m1 / m2;
    Ok(lo < r && r < hi)
}

/// `(c1, c2)` with `c_j = -v'(x_j)`.
pub fn spike_widths(m1: f64, m2: f64, k: &Kernel) -> Result<(f64, f64)> {
    let a = k.require_root()?;
    let (d0, da) = (k.deriv(0.0), k.deriv(a));
    let c1 = -(m1 * d0 + m2 * da);
    let c2 = -(m2 * d0 + m1 * da);
    if !(c1 > 0.0 && c2 > 0.0) {
        return Err(Error::Inadmissible {
            m1,
            m2,
            reason: format!("spike widths must be positive, got c1 = {c1}, c2 = {c2}"),
        });
    }
    Ok((c1, c2))
}

pub fn two_spike_state(m1: f64, m2: f64, x1: f64, k: &Kernel, eps: f64) -> Result<SpikeState> {
    let (c1, c2) = spike_widths(m1, m2, k)?;
    let a = k.require_root()?;
    Ok(SpikeState {
        masses: vec![m1, m2],
        centers: vec![x1, x1 + a],
        widths_c: vec![c1, c2],
        eps,
    })
}

/// Fraction of the state's mass lying outside `grid`.
pub fn truncated_mass_fraction(state: &SpikeState, grid: &Grid) -> f64 {
    let total = state.total_mass();
    (0..state.len())
        .map(|j| {
            let s = state.sigma(j) * std::f64::consts::SQRT_2;
            let left = 0.5 * erfc((state.centers[j] - grid.x_left) / s);
            let right = 0.5 * erfc((grid.x_right - state.centers[j]) / s);
            state.masses[j] / total * (left + right)
        })
        .sum()
}

/// Samples the Gaussian sum at cell centers without renormalizing.
pub fn sample_spikes(state: &SpikeState, grid: &Grid) -> Result<Vec<f64>> {
    state.check()?;
    let truncated = truncated_mass_fraction(state, grid);
    if truncated > MAX_TRUNCATED_MASS {
        return Err(Error::GridTooSmall {
            truncated,
            limit: MAX_TRUNCATED_MASS,
        });
    }
    Ok(grid.centers().map(|x| state.density(x)).collect())
}

/// Samples the state and rescales so the discrete mass equals the total mass.
pub fn build_from_state(state: &SpikeState, grid: &Grid) -> Result<DensityField> {
    let mut values = sample_spikes(state, grid)?;
    let discrete: f64 = values.iter().sum::<f64>() * grid.dx();
    let scale = state.total_mass() / discrete;
    values.iter_mut().for_each(|v| *v *= scale);
    DensityField::new(grid.clone(), values)
}

pub fn build_two_spike(
    m1: f64,
    m2: f64,
    x1: f64,
    k: &Kernel,
    eps: f64,
    grid: &Grid,
) -> Result<DensityField> {
    build_from_state(&two_spike_state(m1, m2, x1, k, eps)?, grid)
}

/// Left spike center that centers `[x1 - 8 sigma1, x2 + 8 sigma2]` in the grid.
pub fn centered_x1(m1: f64, m2: f64, k: &Kernel, eps: f64, grid: &Grid) -> Result<f64> {
    let s = two_spike_state(m1, m2, 0.0, k, eps)?;
    let a = k.require_root()?;
    let (reach_l, reach_r) = (8.0 * s.sigma(0), 8.0 * s.sigma(1));
    let span = reach_l + a + reach_r;
    Ok(grid.x_left + 0.5 * (grid.x_right - grid.x_left - span) + reach_l)
}

fn center_residual(masses: &[f64], x: &[f64], k: &Kernel) -> Vec<f64> {
    (0..x.len())
        .map(|j| {
            (0..x.len())
                .map(|l| masses[l] * k.eval(x[j] - x[l]))
                .sum()
        })
        .collect()
}

fn residual_norm(r: &[f64]) -> f64 {
    r.iter().fold(0.0f64, |m, v| m.max(v.abs()))
}

/// Solves `sum_k M_k f(x_j - x_k) = 0` with `x_1 = 0` by damped Newton and
/// returns the state with `c_j = -sum_k M_k f'(x_j - x_k)`, admissible or not.
pub fn solve_spike_centers(masses: &[f64], k: &Kernel, eps: f64) -> Result<SpikeState> {
    let n = masses.len();
    if n < 2 {
        return Err(Error::InvalidArgument("need at least two spikes".into()));
    }
    if masses.iter().any(|&m| !(m > 0.0)) {
        return Err(Error::InvalidArgument("spike masses must be positive".into()));
    }
    let a = k.require_root()?;
    let mut x: Vec<f64> = (0..n).map(|j| j as f64 * a).collect();
    let mut r = center_residual(masses, &x, k);
    let mut norm = residual_norm(&r);
    let mut iter = 0;
    while norm > NEWTON_TOL {
        if iter == NEWTON_MAX_ITER {
            return Err(Error::NewtonFailed {
                iterations: iter,
                residual: norm,
            });
        }
        iter += 1;
        // Unknowns x_2..x_n, equations j = 2..n (the first is implied by oddness).
        let m = n - 1;
        let jac = DMatrix::from_fn(m, m, |row, col| {
            let j = row + 1;
            let l = col + 1;
            if j == l {
                (0..n)
                    .filter(|&q| q != j)
                    .map(|q| masses[q] * k.deriv(x[j] - x[q]))
                    .sum()
            } else {
                -masses[l] * k.deriv(x[j] - x[l])
            }
        });
        let rhs = DVector::from_iterator(m, r[1..].iter().map(|v| -v));
        let step = jac.lu().solve(&rhs).ok_or(Error::NewtonFailed {
            iterations: iter,
            residual: norm,
        })?;
        let mut lambda = 1.0;
        loop {
            let trial: Vec<f64> = std::iter::once(0.0)
                .chain((1..n).map(|j| x[j] + lambda * step[j - 1]))
                .collect();
            let r_trial = center_residual(masses, &trial, k);
            let n_trial = residual_norm(&r_trial);
            if n_trial < norm || lambda < 1e-6 {
                x = trial;
                r = r_trial;
                norm = n_trial;
                break;
            }
            lambda *= 0.5;
        }
    }
    let widths_c = (0..n)
        .map(|j| -(0..n).map(|q| masses[q] * k.deriv(x[j] - x[q])).sum::<f64>())
        .collect();
    Ok(SpikeState {
        masses: masses.to_vec(),
        centers: x,
        widths_c,
        eps,
    })
}

/// Admissible n-spike quasi-equilibrium; fails if any `c_j <= 0`.
pub fn n_spike_state(masses: &[f64], k: &Kernel, eps: f64) -> Result<SpikeState> {
    let s = solve_spike_centers(masses, k, eps)?;
    if !s.is_admissible() {
        return Err(Error::InadmissibleSpikes {
            centers: s.centers,
            widths: s.widths_c,
        });
    }
    Ok(s)
}

/// Max-norm residual of the center equations for `state`.
pub fn center_equation_residual(state: &SpikeState, k: &Kernel) -> f64 {
    residual_norm(&center_residual(&state.masses, &state.centers, k))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn cubic_window() {
        let (lo, hi) = mass_ratio_window(&Kernel::cubic()).unwrap();
        assert_eq!((lo, hi), (0.5, 2.0));
        let k = Kernel::cubic();
        assert!(admissible(0.5, 0.5, &k).unwrap());
        assert!(admissible(0.35, 0.65, &k).unwrap());
        assert!(!admissible(0.3, 0.7, &k).unwrap());
        assert!(admissible(0.5, 0.5, &Kernel::linear()).is_err());
    }

    #[test]
    fn width_examples() {
        let k = Kernel::cubic();
        let (c1, c2) = spike_widths(0.4, 0.6, &k).unwrap();
        assert_abs_diff_eq!(c1, 0.8, epsilon = 1e-15);
        assert_abs_diff_eq!(c2, 0.2, epsilon = 1e-15);
        assert_eq!(spike_widths(0.5, 0.5, &k).unwrap(), (0.5, 0.5));
        assert_eq!(spike_widths(0.6, 0.4, &k).unwrap(), (c2, c1));
        assert!(matches!(spike_widths(0.3, 0.7, &k), Err(Error::Inadmissible { .. })));
    }

    #[test]
    fn peak_height_and_mass() {
        let k = Kernel::cubic();
        let eps = 0.001f64.sqrt();
        let grid = Grid::new(0.0, 3.0, 600).unwrap();
        let rho = build_two_spike(0.5, 0.5, 1.0, &k, eps, &grid).unwrap();
        assert_abs_diff_eq!(rho.total_mass(), 1.0, epsilon = 1e-14);
        let peak = gaussian_spike(1.0, 0.5, 1.0, 0.5, eps);
        assert_abs_diff_eq!(peak, 4.4603, epsilon = 1e-4);
    }

    #[test]
    fn spike_second_moment() {
        let k = Kernel::cubic();
        let eps = 0.001f64.sqrt();
        let grid = Grid::new(0.0, 3.0, 1200).unwrap();
        let state = two_spike_state(0.4, 0.6, 0.9, &k, eps).unwrap();
        let raw = sample_spikes(&state, &grid).unwrap();
        let dx = grid.dx();
        for (j, (lo, hi)) in [(0.0, 1.4), (1.4, 3.0)].into_iter().enumerate() {
            let (mut m0, mut m2) = (0.0, 0.0);
            for (x, v) in grid.centers().zip(&raw) {
                if x >= lo && x < hi {
                    m0 += v * dx;
                    m2 += v * dx * (x - state.centers[j]).powi(2);
                }
            }
            assert_abs_diff_eq!(m0, state.masses[j], epsilon = 1e-8);
            assert_abs_diff_eq!(m2 / m0, eps * eps / state.widths_c[j], epsilon = 1e-8);
        }
    }

    #[test]
    fn grid_too_small_is_rejected() {
        let k = Kernel::cubic();
        let grid = Grid::new(0.0, 1.2, 240).unwrap();
        let err = build_two_spike(0.4, 0.6, 0.1, &k, 0.05, &grid).unwrap_err();
        assert!(matches!(err, Error::GridTooSmall { .. }));
    }

    #[test]
    fn n_spike_two_reduces_to_pair() {
        let k = Kernel::cubic();
        let s = n_spike_state(&[0.5, 0.5], &k, 0.03).unwrap();
        assert_abs_diff_eq!(s.centers[1], 1.0, epsilon = 1e-13);
        assert_abs_diff_eq!(s.widths_c[0], 0.5, epsilon = 1e-12);
        assert_abs_diff_eq!(s.widths_c[1], 0.5, epsilon = 1e-12);
        for m1 in [0.36, 0.45, 0.6] {
            let s = n_spike_state(&[m1, 1.0 - m1], &k, 0.03).unwrap();
            let (c1, c2) = spike_widths(m1, 1.0 - m1, &k).unwrap();
            assert_abs_diff_eq!(s.widths_c[0], c1, epsilon = 1e-12);
            assert_abs_diff_eq!(s.widths_c[1], c2, epsilon = 1e-12);
        }
    }

    #[test]
    fn three_equal_spikes() {
        let k = Kernel::cubic();
        let m = [1.0 / 3.0; 3];
        let s = solve_spike_centers(&m, &k, 0.03).unwrap();
        assert!(center_equation_residual(&s, &k) <= 1e-12);
        // spacing 1/sqrt(3): the middle spike has c = -1/3 < 0
        assert_abs_diff_eq!(s.centers[1], 1.0 / 3f64.sqrt(), epsilon = 1e-12);
        assert_abs_diff_eq!(s.centers[2], 2.0 / 3f64.sqrt(), epsilon = 1e-12);
        assert!(s.widths_c[1] < 0.0);
        assert!(matches!(
            n_spike_state(&m, &k, 0.03),
            Err(Error::InadmissibleSpikes { .. })
        ));
    }

    #[test]
    fn spike_state_json() {
        let s = two_spike_state(0.4, 0.6, 0.0, &Kernel::cubic(), 0.03).unwrap();
        let js = serde_json::to_string(&s).unwrap();
        let back: SpikeState = serde_json::from_str(&js).unwrap();
        assert_eq!(back, s);
    }
}
