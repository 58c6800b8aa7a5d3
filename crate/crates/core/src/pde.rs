//! Semi-implicit finite-volume solver for `rho_t + (v rho)_x = eps^2 rho_xx`,
//! `v = f * rho`, on a bounded interval with zero-flux ends.
//!
//! The velocity is evaluated explicitly from the current density; the
//! density update is a backward-Euler solve of the resulting linear
//! advection-diffusion operator, which is tridiagonal in flux form. Column
//! sums of that matrix are exactly one, so mass is conserved to roundoff, and
//! it is an M-matrix, so the update preserves positivity for any `dt`.

use std::path::Path;

use log::warn;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernels::Kernel;
use crate::metadyn::{self, fmt, MassTrajectory};
use crate::tridiag::Tridiagonal;

pub const MIN_CELLS: usize = 16;
/// Most negative density tolerated before a run is aborted.
pub const NEGATIVITY_LIMIT: f64 = -1e-13;
const PAR_THRESHOLD: usize = 256;

/// Uniform cell-centered grid on `[x_left, x_right]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Grid {
    pub x_left: f64,
    pub x_right: f64,
    pub n_cells: usize,
}

impl Grid {
    pub fn new(x_left: f64, x_right: f64, n_cells: usize) -> Result<Self> {
        let g = Self { x_left, x_right, n_cells };
        g.validate()?;
        Ok(g)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.x_left.is_finite() && self.x_right.is_finite() && self.x_left < self.x_right) {
            return Err(Error::InvalidArgument(format!(
                "grid needs x_left < x_right, got [{}, {}]",
                self.x_left, self.x_right
            )));
        }
        if self.n_cells < MIN_CELLS {
            return Err(Error::InvalidArgument(format!(
                "grid needs at least {MIN_CELLS} cells, got {}",
                self.n_cells
            )));
        }
        Ok(())
    }

    pub fn dx(&self) -> f64 {
        (self.x_right - self.x_left) / self.n_cells as f64
    }

    pub fn center(&self, i: usize) -> f64 {
        self.x_left + (i as f64 + 0.5) * self.dx()
    }

    /// Index of the cell containing `x`, clamped to the grid.
    pub fn locate(&self, x: f64) -> usize {
        let i = ((x - self.x_left) / self.dx()).floor();
        if i < 0.0 {
            0
        } else {
            (i as usize).min(self.n_cells - 1)
        }
    }

    pub fn centers(&self) -> impl Iterator<Item = f64> + '_ {
        (0..self.n_cells).map(|i| self.center(i))
    }
}

/// Cell averages of the density.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityField {
    pub grid: Grid,
    pub values: Vec<f64>,
    pub time: f64,
}

impl DensityField {
    pub fn new(grid: Grid, values: Vec<f64>) -> Result<Self> {
        grid.validate()?;
        if values.len() != grid.n_cells {
            return Err(Error::InvalidArgument(format!(
                "density has {} values for {} cells",
                values.len(),
                grid.n_cells
            )));
        }
        if let Some((i, v)) = values.iter().enumerate().find(|(_, v)| !(**v >= 0.0) || !v.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "density value {v} in cell {i} is negative or not finite"
            )));
        }
        Ok(Self { grid, values, time: 0.0 })
    }

    /// Samples `profile` at the cell centers.
    pub fn from_fn(grid: Grid, profile: impl Fn(f64) -> f64) -> Result<Self> {
        let values = grid.centers().map(profile).collect();
        Self::new(grid, values)
    }

    pub fn total_mass(&self) -> f64 {
        self.values.iter().sum::<f64>() * self.grid.dx()
    }

    pub fn center_of_mass(&self) -> f64 {
        let dx = self.grid.dx();
        let m1: f64 = self.grid.centers().zip(&self.values).map(|(x, v)| x * v).sum::<f64>() * dx;
        m1 / self.total_mass()
    }

    pub fn variance(&self) -> f64 {
        let c = self.center_of_mass();
        let dx = self.grid.dx();
        self.grid
            .centers()
            .zip(&self.values)
            .map(|(x, v)| (x - c).powi(2) * v)
            .sum::<f64>()
            * dx
            / self.total_mass()
    }

    pub fn min_value(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    /// CSV with header `x,rho`.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["x", "rho"])?;
        for (x, v) in self.grid.centers().zip(&self.values) {
            w.write_record(&[fmt(x), fmt(*v)])?;
        }
        w.flush()?;
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FluxScheme {
    /// First-order upwind advection plus central diffusion.
    Upwind,
    /// Exponentially fitted (Scharfetter-Gummel) flux. Reduces to upwind for
    /// large cell Peclet numbers and reproduces the exact steady profile of
    /// a piecewise-constant drift.
    #[default]
    ExponentialFitting,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PdeConfig {
    pub eps2: f64,
    pub dt: f64,
    pub t_end: f64,
    /// Times at which masses (and optional snapshots) are recorded.
    pub output_times: Vec<f64>,
    pub flux: FluxScheme,
    pub convolution: Convolution,
}

impl PdeConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.eps2 > 0.0 && self.eps2.is_finite()) {
            return Err(Error::InvalidArgument(format!("eps2 must be positive, got {}", self.eps2)));
        }
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(Error::InvalidArgument(format!("dt must be positive, got {}", self.dt)));
        }
        if !(self.t_end >= 0.0 && self.t_end.is_finite()) {
            return Err(Error::InvalidArgument(format!("t_end must be nonnegative, got {}", self.t_end)));
        }
        if self.output_times.windows(2).any(|w| !(w[0] < w[1])) {
            return Err(Error::InvalidArgument("output_times must be strictly increasing".into()));
        }
        Ok(())
    }
}

/// `z / (exp(z) - 1)`
#[inline]
fn bernoulli(z: f64) -> f64 {
    if z.abs() < 1e-6 {
        1.0 - 0.5 * z + z * z / 12.0
    } else {
        z / z.exp_m1()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Convolution {
    /// Midpoint sum against the kernel tabulated on the difference grid.
    #[default]
    Direct,
    /// Power-sum expansion of the polynomial kernel. Same quadrature, `O(N)`.
    Moments,
}

/// Discrete convolution `v_i = dx * sum_j f(x_i - x_j) rho_j`.
#[derive(Debug, Clone)]
pub struct VelocityOperator {
    n: usize,
    dx: f64,
    method: Convolution,
    table: Vec<f64>,
    kernel: Kernel,
    centers: Vec<f64>,
    weights: Vec<f64>,
}

impl VelocityOperator {
    pub fn new(grid: &Grid, k: &Kernel, method: Convolution) -> Self {
        let n = grid.n_cells;
        let dx = grid.dx();
        let table = match method {
            Convolution::Direct => (0..2 * n - 1)
                .map(|m| k.eval((m as f64 - (n - 1) as f64) * dx))
                .collect(),
            Convolution::Moments => Vec::new(),
        };
        Self {
            n,
            dx,
            method,
            table,
            kernel: k.clone(),
            centers: grid.centers().collect(),
            weights: vec![0.0; n],
        }
    }

    pub fn apply(&mut self, rho: &[f64], v: &mut [f64]) {
        let n = self.n;
        match self.method {
            Convolution::Direct => {
                let (table, dx) = (&self.table, self.dx);
                let row = |i: usize| -> f64 {
                    // f(x_i - x_j) = table[i - j + n - 1]
                    let seg = &table[i..i + n];
                    seg.iter().rev().zip(rho).map(|(f, r)| f * r).sum::<f64>() * dx
                };
                if n >= PAR_THRESHOLD {
                    v.par_iter_mut().enumerate().for_each(|(i, vi)| *vi = row(i));
                } else {
                    v.iter_mut().enumerate().for_each(|(i, vi)| *vi = row(i));
                }
            }
            Convolution::Moments => {
                let mass: f64 = rho.iter().sum();
                let first: f64 = self.centers.iter().zip(rho).map(|(x, r)| x * r).sum();
                let c = if mass > 0.0 { first / mass } else { 0.0 };
                for (w, r) in self.weights.iter_mut().zip(rho) {
                    *w = r * self.dx;
                }
                self.kernel.convolve_moments(&self.centers, &self.weights, c, &self.centers, v);
            }
        }
    }
}

pub fn velocity_field(rho: &DensityField, k: &Kernel) -> Vec<f64> {
    velocity_field_with(rho, k, Convolution::Direct)
}

pub fn velocity_field_with(rho: &DensityField, k: &Kernel, method: Convolution) -> Vec<f64> {
    let mut op = VelocityOperator::new(&rho.grid, k, method);
    let mut v = vec![0.0; rho.grid.n_cells];
    op.apply(&rho.values, &mut v);
    v
}

/// Reusable stepping state for one grid and kernel.
#[derive(Debug, Clone)]
pub struct PdeSolver {
    grid: Grid,
    eps2: f64,
    flux: FluxScheme,
    velocity: VelocityOperator,
    v: Vec<f64>,
    // face coefficients: F_{i+1/2} = out[i] rho_i - inw[i] rho_{i+1}
    out: Vec<f64>,
    inw: Vec<f64>,
    matrix: Tridiagonal,
    scratch: Vec<f64>,
}

impl PdeSolver {
    pub fn new(grid: &Grid, k: &Kernel, eps2: f64, flux: FluxScheme, conv: Convolution) -> Result<Self> {
        grid.validate()?;
        if !(eps2 > 0.0) {
            return Err(Error::InvalidArgument(format!("eps2 must be positive, got {eps2}")));
        }
        let n = grid.n_cells;
        Ok(Self {
            grid: grid.clone(),
            eps2,
            flux,
            velocity: VelocityOperator::new(grid, k, conv),
            v: vec![0.0; n],
            out: vec![0.0; n - 1],
            inw: vec![0.0; n - 1],
            matrix: Tridiagonal::zeros(n),
            scratch: Vec::with_capacity(n),
        })
    }

    /// Velocity from the last call to [`PdeSolver::update_fluxes`].
    pub fn velocity(&self) -> &[f64] {
        &self.v
    }

    pub fn max_speed(&self) -> f64 {
        self.v.iter().fold(0.0f64, |m, v| m.max(v.abs()))
    }

    /// Recomputes `v` from `rho` and the face flux coefficients.
    pub fn update_fluxes(&mut self, rho: &[f64]) {
        self.velocity.apply(rho, &mut self.v);
        let dx = self.grid.dx();
        let diff = self.eps2 / dx;
        for f in 0..self.grid.n_cells - 1 {
            let vf = 0.5 * (self.v[f] + self.v[f + 1]);
            match self.flux {
                FluxScheme::Upwind => {
                    self.out[f] = diff + vf.max(0.0);
                    self.inw[f] = diff - vf.min(0.0);
                }
                FluxScheme::ExponentialFitting => {
                    let pe = vf * dx / self.eps2;
                    self.out[f] = diff * bernoulli(-pe);
                    self.inw[f] = diff * bernoulli(pe);
                }
            }
        }
    }

    /// Max-norm of the discrete flux divergence `(v rho - eps^2 rho_x)_x`.
    pub fn steady_residual(&mut self, rho: &[f64]) -> f64 {
        self.update_fluxes(rho);
        let n = self.grid.n_cells;
        let dx = self.grid.dx();
        let flux = |f: usize| self.out[f] * rho[f] - self.inw[f] * rho[f + 1];
        (0..n)
            .map(|i| {
                let right = if i + 1 < n { flux(i) } else { 0.0 };
                let left = if i > 0 { flux(i - 1) } else { 0.0 };
                ((right - left) / dx).abs()
            })
            .fold(0.0, f64::max)
    }

    /// One semi-implicit step of length `dt`, in place.
    pub fn step(&mut self, rho: &mut DensityField, dt: f64) -> Result<()> {
        self.update_fluxes(&rho.values);
        let n = self.grid.n_cells;
        let r = dt / self.grid.dx();
        let m = &mut self.matrix;
        for i in 0..n {
            let mut d = 1.0;
            if i + 1 < n {
                d += r * self.out[i];
                m.upper[i] = -r * self.inw[i];
            }
            if i > 0 {
                d += r * self.inw[i - 1];
                m.lower[i] = -r * self.out[i - 1];
            }
            m.diag[i] = d;
        }
        m.check_diagonally_dominant()?;
        m.solve_in_place(&mut rho.values, &mut self.scratch)?;
        rho.time += dt;
        if let Some((cell, &value)) = rho
            .values
            .iter()
            .enumerate()
            .find(|(_, v)| !(**v >= NEGATIVITY_LIMIT))
        {
            return Err(Error::Negativity { cell, value, time: rho.time });
        }
        Ok(())
    }
}

pub fn semi_implicit_step(rho: &DensityField, k: &Kernel, cfg: &PdeConfig) -> Result<DensityField> {
    cfg.validate()?;
    let mut solver = PdeSolver::new(&rho.grid, k, cfg.eps2, cfg.flux, cfg.convolution)?;
    let mut next = rho.clone();
    solver.update_fluxes(&rho.values);
    warn_if_cfl_violated(&solver, cfg.dt);
    solver.step(&mut next, cfg.dt)?;
    Ok(next)
}

fn warn_if_cfl_violated(solver: &PdeSolver, dt: f64) {
    let vmax = solver.max_speed();
    let limit = solver.grid.dx() / vmax;
    if vmax > 0.0 && dt > limit {
        warn!(
            "dt = {dt} exceeds the advective CFL bound dx/max|v| = {limit:.3e}; advection is implicit, so this limits accuracy, not stability"
        );
    }
}

/// Mass left and right of `xhat`, splitting the cell that contains it.
pub fn mass_split(rho: &DensityField, xhat: f64) -> Result<(f64, f64)> {
    let g = &rho.grid;
    if !(xhat > g.x_left && xhat < g.x_right) {
        return Err(Error::InvalidArgument(format!(
            "split point {xhat} outside ({}, {})",
            g.x_left, g.x_right
        )));
    }
    let dx = g.dx();
    let pos = (xhat - g.x_left) / dx;
    let cell = (pos.floor() as usize).min(g.n_cells - 1);
    let frac = pos - cell as f64;
    let left: f64 = rho.values[..cell].iter().sum::<f64>() * dx + frac * rho.values[cell] * dx;
    let right: f64 =
        rho.values[cell + 1..].iter().sum::<f64>() * dx + (1.0 - frac) * rho.values[cell] * dx;
    Ok((left, right))
}

/// How spike masses are extracted at output times.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum MassTracking {
    #[default]
    None,
    /// Split at a fixed point.
    Fixed { xhat: f64 },
    /// Self-consistent separatrix from the current masses.
    Separatrix,
}

/// Spike masses and separatrix position of a two-spike profile.
pub fn separatrix_masses(rho: &DensityField, k: &Kernel) -> Result<(f64, f64, f64)> {
    let total = rho.total_mass();
    let xc = rho.center_of_mass();
    let g = &rho.grid;
    let (lo, hi) = (g.x_left, g.x_right);
    metadyn::self_consistent_split(total, xc, k, |x| {
        let x = x.clamp(lo + 1e-12 * (hi - lo), hi - 1e-12 * (hi - lo));
        mass_split(rho, x).map(|(l, _)| l).unwrap_or(0.0)
    })
}

#[derive(Debug, Clone)]
pub struct PdeRun {
    pub trajectory: MassTrajectory,
    pub field: DensityField,
    pub initial_mass: f64,
    /// Largest `|mass(t) - mass(0)| / mass(0)` seen at output times.
    pub max_mass_drift: f64,
    pub min_value: f64,
    pub steps: usize,
}

pub fn run_to(
    rho0: &DensityField,
    k: &Kernel,
    cfg: &PdeConfig,
    tracking: MassTracking,
) -> Result<PdeRun> {
    run_to_with(rho0, k, cfg, tracking, |_| Ok(()))
}

/// Like [`run_to`], calling `observe` with the field at every output time.
pub fn run_to_with(
    rho0: &DensityField,
    k: &Kernel,
    cfg: &PdeConfig,
    tracking: MassTracking,
    mut observe: impl FnMut(&DensityField) -> Result<()>,
) -> Result<PdeRun> {
    cfg.validate()?;
    let mut solver = PdeSolver::new(&rho0.grid, k, cfg.eps2, cfg.flux, cfg.convolution)?;
    let mut rho = rho0.clone();
    let t0 = rho.time;
    let initial_mass = rho.total_mass();
    let mut traj = MassTrajectory::default();
    let mut max_drift = 0.0f64;
    let mut min_value = rho.min_value();

    let record = |rho: &DensityField, traj: &mut MassTrajectory, drift: &mut f64| -> Result<()> {
        let mass = rho.total_mass();
        *drift = drift.max((mass - initial_mass).abs() / initial_mass);
        match tracking {
            MassTracking::None => traj.push(rho.time, mass, 0.0),
            MassTracking::Fixed { xhat } => {
                let (l, r) = mass_split(rho, xhat)?;
                traj.push(rho.time, l, r);
            }
            MassTracking::Separatrix => {
                let (m1, m2, _) = separatrix_masses(rho, k)?;
                traj.push(rho.time, m1, m2);
            }
        }
        Ok(())
    };

    record(&rho, &mut traj, &mut max_drift)?;
    let t_end = t0 + cfg.t_end;
    if cfg.t_end == 0.0 {
        return Ok(PdeRun {
            trajectory: traj,
            field: rho,
            initial_mass,
            max_mass_drift: max_drift,
            min_value,
            steps: 0,
        });
    }

    solver.update_fluxes(&rho.values);
    warn_if_cfl_violated(&solver, cfg.dt);

    let mut outputs: Vec<f64> = cfg
        .output_times
        .iter()
        .map(|t| t0 + t)
        .filter(|&t| t > t0 && t < t_end)
        .collect();
    outputs.push(t_end);

    let mut steps = 0usize;
    let snap = 1e-9 * cfg.dt;
    for &t_out in &outputs {
        while rho.time < t_out {
            let remaining = t_out - rho.time;
            let dt = if remaining <= cfg.dt + snap { remaining } else { cfg.dt };
            solver.step(&mut rho, dt)?;
            if dt == remaining {
                rho.time = t_out;
            }
            steps += 1;
        }
        min_value = min_value.min(rho.min_value());
        record(&rho, &mut traj, &mut max_drift)?;
        observe(&rho)?;
    }
    Ok(PdeRun {
        trajectory: traj,
        field: rho,
        initial_mass,
        max_mass_drift: max_drift,
        min_value,
        steps,
    })
}

/// Steps until the flux-divergence residual drops to `tol`, checking every
/// `check_every` steps, or fails at `t_max`.
pub fn run_to_steady(
    rho0: &DensityField,
    k: &Kernel,
    eps2: f64,
    dt: f64,
    flux: FluxScheme,
    tol: f64,
    t_max: f64,
) -> Result<(DensityField, f64)> {
    const CHECK_EVERY: usize = 10;
    let mut solver = PdeSolver::new(&rho0.grid, k, eps2, flux, Convolution::Direct)?;
    let mut rho = rho0.clone();
    let mut residual = solver.steady_residual(&rho.values);
    let mut steps = 0usize;
    while residual > tol {
        if rho.time >= t_max {
            return Err(Error::NotConverged { time: rho.time, residual });
        }
        solver.step(&mut rho, dt)?;
        steps += 1;
        if steps.is_multiple_of(CHECK_EVERY) {
            residual = solver.steady_residual(&rho.values);
        }
    }
    Ok((rho, residual))
}
