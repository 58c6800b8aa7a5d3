use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use statrs::function::erf::erf;

use super::{kernel_meta, positive, write_columns, write_table_csv, ExperimentReport};
use crate::error::{Error, Result};
use crate::kernels::Kernel;
use crate::particles::{self, ForceMethod, ParticleEnsemble, SdeConfig, PRNG_ID};
use crate::pde::{self, DensityField, FluxScheme, Grid};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ParticleSampling {
    pub n: usize,
    pub dt: f64,
    /// Time discarded before the first snapshot.
    pub transient: f64,
    pub snapshots: usize,
    /// Steps between snapshots.
    pub stride_steps: u64,
    pub bins: usize,
    /// Histogram window is `+- window_in_eps * eps` around the ensemble mean.
    pub window_in_eps: f64,
    pub initial_half_width: f64,
    pub force: ForceMethod,
}

impl Default for ParticleSampling {
    fn default() -> Self {
        Self {
            n: 200,
            dt: 1e-3,
            transient: 10.0,
            snapshots: 100,
            stride_steps: 1000,
            bins: 40,
            window_in_eps: 5.0,
            initial_half_width: 0.2,
            force: ForceMethod::Direct,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GaussianConfig {
    pub eps2: f64,
    pub x_left: f64,
    pub x_right: f64,
    pub n_cells: usize,
    pub dt: f64,
    pub flux: FluxScheme,
    pub initial_center: f64,
    /// Standard deviation of the Gaussian bump the PDE starts from.
    pub initial_std: f64,
    pub steady_tol: f64,
    pub t_max: f64,
    pub particles: ParticleSampling,
    pub linf_rel_tol: f64,
    pub l1_tol: f64,
    pub mean_tol: f64,
    pub runtime_limit_s: f64,
}

impl Default for GaussianConfig {
    fn default() -> Self {
        Self {
            eps2: 0.001,
            x_left: -1.5,
            x_right: 1.5,
            n_cells: 600,
            dt: 0.01,
            flux: FluxScheme::ExponentialFitting,
            initial_center: 0.0,
            initial_std: 0.2,
            steady_tol: 1e-8,
            t_max: 100.0,
            particles: ParticleSampling::default(),
            linf_rel_tol: 0.02,
            l1_tol: 0.1,
            mean_tol: 1e-6,
            runtime_limit_s: 30.0,
        }
    }
}

impl GaussianConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.eps2 > 1e-5 && self.eps2 < 1e-1) {
            return Err(Error::ConfigInconsistent(format!(
                "gaussian.eps2 must lie in (1e-5, 1e-1), got {}",
                self.eps2
            )));
        }
        Grid::new(self.x_left, self.x_right, self.n_cells)
            .map_err(|e| Error::ConfigInconsistent(format!("gaussian grid: {e}")))?;
        for (name, v) in [
            ("gaussian.dt", self.dt),
            ("gaussian.initial_std", self.initial_std),
            ("gaussian.steady_tol", self.steady_tol),
            ("gaussian.t_max", self.t_max),
            ("gaussian.linf_rel_tol", self.linf_rel_tol),
            ("gaussian.l1_tol", self.l1_tol),
            ("gaussian.mean_tol", self.mean_tol),
            ("gaussian.runtime_limit_s", self.runtime_limit_s),
            ("gaussian.particles.dt", self.particles.dt),
            ("gaussian.particles.window_in_eps", self.particles.window_in_eps),
        ] {
            positive(name, v)?;
        }
        let p = &self.particles;
        if p.n == 0 || p.snapshots == 0 || p.stride_steps == 0 || p.bins == 0 {
            return Err(Error::ConfigInconsistent(
                "gaussian.particles: n, snapshots, stride_steps and bins must be positive".into(),
            ));
        }
        Ok(())
    }
}

fn std_normal_cdf(z: f64) -> f64 {
    0.5 * (1.0 + erf(z / std::f64::consts::SQRT_2))
}

/// Stationary density of `f = -x`: a Gaussian with variance `eps^2 / M`.
pub fn gaussian_profile(x: f64, center: f64, mass: f64, eps2: f64) -> f64 {
    let var = eps2 / mass;
    mass * (-(x - center).powi(2) / (2.0 * var)).exp() / (2.0 * std::f64::consts::PI * var).sqrt()
}

/// L1 distance between the binned particle mass and the Gaussian, treating
/// everything outside the window as one extra bin.
pub fn histogram_l1(h: &particles::Histogram, center: f64, eps2: f64) -> f64 {
    let s = eps2.sqrt();
    let mut inside_gauss = 0.0;
    let mut l1 = 0.0;
    for b in 0..h.counts.len() {
        let g = std_normal_cdf((h.bin_edges[b + 1] - center) / s) - std_normal_cdf((h.bin_edges[b] - center) / s);
        inside_gauss += g;
        l1 += (h.bin_mass(b) - g).abs();
    }
    l1 + ((1.0 - h.normalization) - (1.0 - inside_gauss)).abs()
}

pub fn gaussian_experiment(cfg: &GaussianConfig, seed: u64, dir: &Path) -> Result<ExperimentReport> {
    cfg.validate()?;
    let k = Kernel::linear();
    let mut report = ExperimentReport::new("gaussian");
    kernel_meta(&mut report, &k);
    report.meta("prng", PRNG_ID);
    report.meta("seed", seed.to_string());
    report.tolerance("linf_rel_tol", cfg.linf_rel_tol);
    report.tolerance("l1_tol", cfg.l1_tol);
    report.tolerance("mean_tol", cfg.mean_tol);
    report.tolerance("steady_tol", cfg.steady_tol);
    report.tolerance("runtime_limit_s", cfg.runtime_limit_s);
    report.metric("eps2", cfg.eps2);
    report.metric("n_cells", cfg.n_cells as f64);

    // PDE to steady state
    let started = Instant::now();
    let grid = Grid::new(cfg.x_left, cfg.x_right, cfg.n_cells)?;
    let rho0 = DensityField::from_fn(grid.clone(), |x| gaussian_profile(x, cfg.initial_center, 1.0, cfg.initial_std.powi(2)))?;
    let mass0 = rho0.total_mass();
    let com0 = rho0.center_of_mass();
    let steady = pde::run_to_steady(&rho0, &k, cfg.eps2, cfg.dt, cfg.flux, cfg.steady_tol, cfg.t_max);
    let runtime = started.elapsed().as_secs_f64();
    let (rho, residual) = match steady {
        Ok(r) => r,
        Err(Error::NotConverged { time, residual }) => {
            report.metric("pde_steady_residual", residual);
            report.metric("pde_time", time);
            report.check("pde_converged", false, format!("residual {residual:.3e} at t = {time}"));
            return finish(report, dir);
        }
        Err(e) => return Err(e),
    };
    let mass = rho.total_mass();
    let com = rho.center_of_mass();
    let exact: Vec<f64> = grid.centers().map(|x| gaussian_profile(x, com0, mass0, cfg.eps2)).collect();
    let peak = exact.iter().copied().fold(0.0, f64::max);
    let linf = rho.values.iter().zip(&exact).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max) / peak;

    report.metric("pde_steady_residual", residual);
    report.metric("pde_time", rho.time);
    report.timing("pde_to_steady_state", runtime);
    report.metric("pde_linf_rel_error", linf);
    report.metric("pde_mean_shift", (com - com0).abs());
    report.metric("pde_mass_drift", (mass - mass0).abs() / mass0);
    report.check("pde_converged", residual <= cfg.steady_tol, format!("residual {residual:.3e} at t = {:.2}", rho.time));
    report.check("pde_linf_rel_error", linf <= cfg.linf_rel_tol, format!("{linf:.4e} <= {}", cfg.linf_rel_tol));
    report.check("pde_mean", (com - com0).abs() <= cfg.mean_tol, format!("|shift| = {:.3e}", (com - com0).abs()));
    report.check("pde_runtime", runtime <= cfg.runtime_limit_s, "wall-clock time to steady state within limit");

    rho.write_csv(&dir.join("pde_profile.csv"))?;
    write_columns(
        &dir.join("pde_profile.dat"),
        &["x", "rho", "gaussian"],
        grid.centers().zip(&rho.values).zip(&exact).map(|((x, r), g)| vec![x, *r, *g]),
    )?;
    report.artifact("pde_profile.csv");
    report.artifact("pde_profile.dat");

    // particles
    let p = &cfg.particles;
    let sigma = (2.0 * cfg.eps2).sqrt();
    let ens0 = ParticleEnsemble::new(ParticleEnsemble::cluster(cfg.initial_center, p.initial_half_width, p.n))?;
    let transient_steps = (p.transient / p.dt).round() as u64;
    let sde = SdeConfig {
        sigma,
        dt: p.dt,
        steps: transient_steps + p.stride_steps * p.snapshots as u64,
        seed,
        force: p.force,
    };
    let mut snapshots = Vec::with_capacity(p.snapshots);
    let mut variance_sum = 0.0;
    particles::simulate(&ens0, &k, &sde, p.stride_steps, |step, ens| {
        if step > transient_steps && (step - transient_steps).is_multiple_of(p.stride_steps) {
            let m = ens.mean();
            variance_sum += ens.variance();
            let mut centered = ens.clone();
            centered.positions.iter_mut().for_each(|x| *x -= m);
            snapshots.push(centered);
        }
        Ok(())
    })?;
    let half = p.window_in_eps * cfg.eps2.sqrt();
    let hist = particles::density_estimate(&snapshots, p.bins, (-half, half))?;
    let l1 = histogram_l1(&hist, 0.0, cfg.eps2);
    let variance = variance_sum / snapshots.len() as f64;
    report.metric("particle_snapshots", snapshots.len() as f64);
    report.metric("particle_hist_l1", l1);
    report.metric("particle_captured_fraction", hist.captured_fraction);
    report.metric("particle_variance_over_eps2", variance / cfg.eps2);
    report.check("particle_hist_l1", l1 <= cfg.l1_tol, format!("{l1:.4e} <= {}", cfg.l1_tol));

    hist.write_csv(&dir.join("particle_histogram.csv"))?;
    write_table_csv(
        &dir.join("particle_vs_gaussian.csv"),
        &["x", "histogram", "gaussian"],
        (0..hist.counts.len()).map(|b| {
            let x = 0.5 * (hist.bin_edges[b] + hist.bin_edges[b + 1]);
            vec![x, hist.counts[b], gaussian_profile(x, 0.0, 1.0, cfg.eps2)]
        }),
    )?;
    write_columns(
        &dir.join("particle_histogram.dat"),
        &["x", "histogram", "gaussian"],
        (0..hist.counts.len()).map(|b| {
            let x = 0.5 * (hist.bin_edges[b] + hist.bin_edges[b + 1]);
            vec![x, hist.counts[b], gaussian_profile(x, 0.0, 1.0, cfg.eps2)]
        }),
    )?;
    for f in ["particle_histogram.csv", "particle_vs_gaussian.csv", "particle_histogram.dat"] {
        report.artifact(f);
    }
    finish(report, dir)
}

fn finish(mut report: ExperimentReport, dir: &Path) -> Result<ExperimentReport> {
    report.write_json(dir)?;
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::particles::Histogram;

    #[test]
    fn exact_bins_have_zero_distance() {
        let edges: Vec<f64> = (0..=20).map(|i| -0.1 + 0.01 * i as f64).collect();
        let s = 0.001f64.sqrt();
        let mass: Vec<f64> = edges
            .windows(2)
            .map(|w| std_normal_cdf(w[1] / s) - std_normal_cdf(w[0] / s))
            .collect();
        let h = Histogram {
            counts: mass.iter().map(|m| m / 0.01).collect(),
            normalization: mass.iter().sum(),
            captured_fraction: mass.iter().sum(),
            bin_edges: edges,
        };
        assert!(histogram_l1(&h, 0.0, 0.001) < 1e-12);
    }

    #[test]
    fn profile_integrates_to_mass() {
        let n = 4000;
        let h = 2.0 / n as f64;
        let total: f64 = (0..n).map(|i| gaussian_profile(-1.0 + (i as f64 + 0.5) * h, 0.1, 0.7, 0.002) * h).sum();
        assert!((total - 0.7).abs() < 1e-12);
    }

    #[test]
    fn eps2_range_is_enforced() {
        let cfg = GaussianConfig { eps2: 0.5, ..Default::default() };
        assert!(cfg.validate().is_err());
    }
}
