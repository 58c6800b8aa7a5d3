//! Interacting particles `dx_j = (1/n) sum_k f(x_j - x_k) dt + sigma dW_j`,
//! advanced with forward Euler / Euler-Maruyama.

use std::path::Path;

use log::warn;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernels::Kernel;
use crate::metadyn::{self, fmt, MassTrajectory};

/// Recorded in run metadata so stochastic output can be reproduced.
pub const PRNG_ID: &str = "ChaCha8Rng(seed_from_u64) + StandardNormal ziggurat (rand_chacha 0.9, rand_distr 0.5)";

pub type ParticleRng = ChaCha8Rng;

pub fn seeded_rng(seed: u64) -> ParticleRng {
    ChaCha8Rng::seed_from_u64(seed)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParticleEnsemble {
    pub positions: Vec<f64>,
    pub time: f64,
}

impl ParticleEnsemble {
    pub fn new(positions: Vec<f64>) -> Result<Self> {
        if positions.is_empty() {
            return Err(Error::InvalidArgument("ensemble needs at least one particle".into()));
        }
        if let Some((index, &value)) = positions.iter().enumerate().find(|(_, x)| !x.is_finite()) {
            return Err(Error::Divergence { index, time: 0.0, value });
        }
        Ok(Self { positions, time: 0.0 })
    }

    /// `count` particles spread evenly over `center +- half_width`.
    pub fn cluster(center: f64, half_width: f64, count: usize) -> Vec<f64> {
        match count {
            0 => Vec::new(),
            1 => vec![center],
            _ => (0..count)
                .map(|i| center - half_width + 2.0 * half_width * i as f64 / (count - 1) as f64)
                .collect(),
        }
    }

    /// Two clusters at `-/+ separation/2`.
    pub fn two_clusters(n_left: usize, n_right: usize, separation: f64, half_width: f64) -> Result<Self> {
        let mut x = Self::cluster(-0.5 * separation, half_width, n_left);
        x.extend(Self::cluster(0.5 * separation, half_width, n_right));
        Self::new(x)
    }

    pub fn n(&self) -> usize {
        self.positions.len()
    }

    pub fn mean(&self) -> f64 {
        self.positions.iter().sum::<f64>() / self.n() as f64
    }

    pub fn variance(&self) -> f64 {
        let m = self.mean();
        self.positions.iter().map(|x| (x - m).powi(2)).sum::<f64>() / self.n() as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ForceMethod {
    /// Pairwise double loop.
    #[default]
    Direct,
    /// Power-sum expansion of the polynomial kernel, `O(n * degree)`.
    Moments,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SdeConfig {
    pub sigma: f64,
    #[serde(default = "default_dt")]
    pub dt: f64,
    pub steps: u64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub force: ForceMethod,
}

fn default_dt() -> f64 {
    1e-3
}

impl SdeConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.sigma >= 0.0 && self.sigma.is_finite()) {
            return Err(Error::InvalidArgument(format!("sigma must be nonnegative, got {}", self.sigma)));
        }
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(Error::InvalidArgument(format!("dt must be positive, got {}", self.dt)));
        }
        if self.steps == 0 {
            return Err(Error::InvalidArgument("steps must be positive".into()));
        }
        Ok(())
    }

    pub fn total_time(&self) -> f64 {
        self.dt * self.steps as f64
    }

    pub fn eps2(&self) -> f64 {
        0.5 * self.sigma * self.sigma
    }
}

/// `drift[j] = (1/n) sum_k f(x_j - x_k)`.
pub fn drift(x: &[f64], k: &Kernel, method: ForceMethod, out: &mut Vec<f64>) {
    match method {
        ForceMethod::Direct => drift_direct(x, k, out),
        ForceMethod::Moments => drift_moments(x, k, out),
    }
}

fn drift_direct(x: &[f64], k: &Kernel, out: &mut Vec<f64>) {
    let n = x.len();
    out.clear();
    out.resize(n, 0.0);
    for j in 0..n {
        let xj = x[j];
        for kk in j + 1..n {
            let f = k.eval(xj - x[kk]);
            out[j] += f;
            out[kk] -= f;
        }
    }
    let inv = 1.0 / n as f64;
    out.iter_mut().for_each(|d| *d *= inv);
}

fn drift_moments(x: &[f64], k: &Kernel, out: &mut Vec<f64>) {
    let n = x.len();
    let w = vec![1.0 / n as f64; n];
    let c = x.iter().sum::<f64>() / n as f64;
    out.clear();
    out.resize(n, 0.0);
    k.convolve_moments(x, &w, c, x, out);
}

/// Largest `|v'(x_j)|` over the ensemble, for the explicit stability bound.
pub fn max_velocity_gradient(ens: &ParticleEnsemble, k: &Kernel) -> f64 {
    let n = ens.n() as f64;
    ens.positions
        .iter()
        .map(|&xj| (ens.positions.iter().map(|&xk| k.deriv(xj - xk)).sum::<f64>() / n).abs())
        .fold(0.0, f64::max)
}

/// Stateful stepper reusing its drift buffer.
#[derive(Debug, Clone)]
pub struct ParticleStepper<'k> {
    kernel: &'k Kernel,
    method: ForceMethod,
    buf: Vec<f64>,
}

impl<'k> ParticleStepper<'k> {
    pub fn new(kernel: &'k Kernel, method: ForceMethod) -> Self {
        Self { kernel, method, buf: Vec::new() }
    }

    pub fn deterministic(&mut self, ens: &mut ParticleEnsemble, dt: f64) -> Result<()> {
        drift(&ens.positions, self.kernel, self.method, &mut self.buf);
        for (x, v) in ens.positions.iter_mut().zip(&self.buf) {
            *x += dt * v;
        }
        ens.time += dt;
        check_finite(ens)
    }

    pub fn stochastic(&mut self, ens: &mut ParticleEnsemble, sigma: f64, dt: f64, rng: &mut ParticleRng) -> Result<()> {
        if sigma == 0.0 {
            return self.deterministic(ens, dt);
        }
        drift(&ens.positions, self.kernel, self.method, &mut self.buf);
        let amp = sigma * dt.sqrt();
        for (x, v) in ens.positions.iter_mut().zip(&self.buf) {
            let z: f64 = rng.sample(StandardNormal);
            *x += dt * v + amp * z;
        }
        ens.time += dt;
        check_finite(ens)
    }
}

fn check_finite(ens: &ParticleEnsemble) -> Result<()> {
    match ens.positions.iter().enumerate().find(|(_, x)| !x.is_finite()) {
        Some((index, &value)) => Err(Error::Divergence { index, time: ens.time, value }),
        None => Ok(()),
    }
}

pub fn step_deterministic(ens: &ParticleEnsemble, k: &Kernel, dt: f64) -> Result<ParticleEnsemble> {
    if !(dt > 0.0) {
        return Err(Error::InvalidArgument(format!("dt must be positive, got {dt}")));
    }
    let mut next = ens.clone();
    ParticleStepper::new(k, ForceMethod::Direct).deterministic(&mut next, dt)?;
    Ok(next)
}

pub fn step_stochastic(
    ens: &ParticleEnsemble,
    k: &Kernel,
    cfg: &SdeConfig,
    rng: &mut ParticleRng,
) -> Result<ParticleEnsemble> {
    cfg.validate()?;
    let mut next = ens.clone();
    ParticleStepper::new(k, cfg.force).stochastic(&mut next, cfg.sigma, cfg.dt, rng)?;
    Ok(next)
}

/// `sum_{j,k} P(|x_j - x_k|)` over ordered pairs.
pub fn energy(ens: &ParticleEnsemble, potential: impl Fn(f64) -> f64) -> f64 {
    let x = &ens.positions;
    x.iter()
        .map(|&xj| x.iter().map(|&xk| potential((xj - xk).abs())).sum::<f64>())
        .sum()
}

/// Warns once if `dt` exceeds the explicit Euler bound `2 / max|v'|`.
pub fn check_stability(ens: &ParticleEnsemble, k: &Kernel, dt: f64) -> bool {
    let g = max_velocity_gradient(ens, k);
    let ok = g == 0.0 || dt < 2.0 / g;
    if !ok {
        warn!("dt = {dt} exceeds the explicit stability bound 2/max|v'| = {:.3e}", 2.0 / g);
    }
    ok
}

/// Runs `cfg.steps` steps, calling `observe(step, ensemble)` after every
/// `every` steps (and once before the first step with step 0).
pub fn simulate(
    ens0: &ParticleEnsemble,
    k: &Kernel,
    cfg: &SdeConfig,
    every: u64,
    mut observe: impl FnMut(u64, &ParticleEnsemble) -> Result<()>,
) -> Result<ParticleEnsemble> {
    cfg.validate()?;
    let every = every.max(1);
    check_stability(ens0, k, cfg.dt);
    let mut rng = seeded_rng(cfg.seed);
    let mut stepper = ParticleStepper::new(k, cfg.force);
    let mut ens = ens0.clone();
    observe(0, &ens)?;
    for step in 1..=cfg.steps {
        stepper.stochastic(&mut ens, cfg.sigma, cfg.dt, &mut rng)?;
        if step % every == 0 {
            observe(step, &ens)?;
        }
    }
    Ok(ens)
}

/// Pooled, mass-normalized histogram.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub bin_edges: Vec<f64>,
    /// Density per bin.
    pub counts: Vec<f64>,
    /// Mass represented by the histogram: `sum(counts * width)`.
    pub normalization: f64,
    /// Fraction of all particle samples that fell inside the window.
    pub captured_fraction: f64,
}

impl Histogram {
    pub fn bin_width(&self, b: usize) -> f64 {
        self.bin_edges[b + 1] - self.bin_edges[b]
    }

    pub fn bin_mass(&self, b: usize) -> f64 {
        self.counts[b] * self.bin_width(b)
    }

    /// CSV with header `bin_left,bin_right,density`.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["bin_left", "bin_right", "density"])?;
        for (b, c) in self.counts.iter().enumerate() {
            w.write_record(&[fmt(self.bin_edges[b]), fmt(self.bin_edges[b + 1]), fmt(*c)])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Histogram of all snapshots pooled, each particle carrying mass `1/n` and
/// each snapshot weighted equally, so the total mass is 1 when nothing falls
/// outside `window`.
pub fn density_estimate(snapshots: &[ParticleEnsemble], bins: usize, window: (f64, f64)) -> Result<Histogram> {
    let (lo, hi) = window;
    if snapshots.is_empty() {
        return Err(Error::InvalidArgument("density estimate needs at least one snapshot".into()));
    }
    if bins == 0 || !(lo < hi) {
        return Err(Error::InvalidArgument(format!("bad histogram layout: {bins} bins on [{lo}, {hi}]")));
    }
    let width = (hi - lo) / bins as f64;
    let mut mass = vec![0.0; bins];
    let mut captured = 0.0;
    let per_snapshot = 1.0 / snapshots.len() as f64;
    for s in snapshots {
        let w = per_snapshot / s.n() as f64;
        for &x in &s.positions {
            if x < lo || x > hi {
                continue;
            }
            let b = (((x - lo) / width) as usize).min(bins - 1);
            mass[b] += w;
            captured += w;
        }
    }
    if captured == 0.0 {
        return Err(Error::EmptyHistogram { lo, hi });
    }
    let bin_edges = (0..=bins).map(|b| lo + b as f64 * width).collect();
    Ok(Histogram {
        bin_edges,
        counts: mass.iter().map(|m| m / width).collect(),
        normalization: captured,
        captured_fraction: captured,
    })
}

/// `(mass below split, mass at or above split)`, each particle carrying
/// `total_mass / n`.
pub fn cluster_masses(ens: &ParticleEnsemble, split_point: f64, total_mass: f64) -> (f64, f64) {
    let left = ens.positions.iter().filter(|&&x| x < split_point).count();
    let n = ens.n();
    let m = total_mass / n as f64;
    (left as f64 * m, (n - left) as f64 * m)
}

/// Cluster masses split at the separatrix of the current masses.
/// Returns `(m1, m2, xhat)`.
pub fn separatrix_masses(ens: &ParticleEnsemble, k: &Kernel, total_mass: f64) -> Result<(f64, f64, f64)> {
    let xc = ens.mean();
    metadyn::self_consistent_split(total_mass, xc, k, |x| cluster_masses(ens, x, total_mass).0)
}

/// CSV with header `t,x_0,...,x_{n-1}`.
pub fn write_positions_csv(snapshots: &[ParticleEnsemble], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let n = snapshots.first().map_or(0, |s| s.n());
    let mut header = vec!["t".to_string()];
    header.extend((0..n).map(|i| format!("x_{i}")));
    w.write_record(&header)?;
    for s in snapshots {
        let mut row = vec![fmt(s.time)];
        row.extend(s.positions.iter().map(|&x| fmt(x)));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

/// CSV with header `t,M1,M2`.
pub fn write_masses_csv(traj: &MassTrajectory, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["t", "M1", "M2"])?;
    for s in &traj.samples {
        w.write_record(&[fmt(s.t), fmt(s.m1), fmt(s.m2)])?;
    }
    w.flush()?;
    Ok(())
}
