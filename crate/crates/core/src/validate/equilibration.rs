use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{kernel_meta, positive, ExperimentReport};
use crate::error::{Error, Result};
use crate::kernels::Kernel;
use crate::metadyn::{self, IntegrateOptions, MassTrajectory};
use crate::particles::{self, ForceMethod, ParticleEnsemble, SdeConfig, PRNG_ID};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EquilibrationConfig {
    pub n_left: usize,
    pub n_right: usize,
    pub separation: f64,
    pub half_width: f64,
    pub sigma: f64,
    pub dt: f64,
    pub t_end: f64,
    pub sample_interval: f64,
    pub transient: f64,
    /// Length of the initial and final averaging windows as a fraction of
    /// the post-transient run.
    pub window_fraction: f64,
    /// Horizon of the noise-free control run.
    pub control_t_end: f64,
    pub force: ForceMethod,
}

impl Default for EquilibrationConfig {
    fn default() -> Self {
        Self {
            n_left: 80,
            n_right: 120,
            separation: 1.0,
            half_width: 0.05,
            sigma: 0.075,
            dt: 1e-3,
            t_end: 1e4,
            sample_interval: 1.0,
            transient: 10.0,
            window_fraction: 0.1,
            control_t_end: 100.0,
            force: ForceMethod::Moments,
        }
    }
}

impl EquilibrationConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("particle_equilibration.separation", self.separation),
            ("particle_equilibration.dt", self.dt),
            ("particle_equilibration.t_end", self.t_end),
            ("particle_equilibration.sample_interval", self.sample_interval),
            ("particle_equilibration.window_fraction", self.window_fraction),
            ("particle_equilibration.control_t_end", self.control_t_end),
        ] {
            positive(name, v)?;
        }
        if self.n_left == 0 || self.n_right == 0 {
            return Err(Error::ConfigInconsistent("particle_equilibration: both clusters need particles".into()));
        }
        if !(self.sigma >= 0.0) || !(self.half_width >= 0.0) || !(self.transient >= 0.0) {
            return Err(Error::ConfigInconsistent(
                "particle_equilibration: sigma, half_width and transient must be nonnegative".into(),
            ));
        }
        if self.window_fraction > 0.5 || self.transient >= self.t_end {
            return Err(Error::ConfigInconsistent(
                "particle_equilibration: windows overlap or transient exceeds t_end".into(),
            ));
        }
        Ok(())
    }

    fn steps_per_sample(&self) -> u64 {
        ((self.sample_interval / self.dt).round() as u64).max(1)
    }
}

/// Mean `|d|` over samples with `t` in `[t0, t1]`.
pub fn window_mean_abs_d(traj: &MassTrajectory, t0: f64, t1: f64) -> f64 {
    let sel: Vec<f64> = traj.samples.iter().filter(|s| s.t >= t0 && s.t <= t1).map(|s| s.d.abs()).collect();
    sel.iter().sum::<f64>() / sel.len() as f64
}

/// Tracks separatrix masses every `sample_interval`.
fn track(ens0: &ParticleEnsemble, k: &Kernel, sde: &SdeConfig, every: u64) -> Result<MassTrajectory> {
    let mut traj = MassTrajectory::default();
    particles::simulate(ens0, k, sde, every, |_, ens| {
        let (m1, m2, _) = particles::separatrix_masses(ens, k, 1.0)?;
        traj.push(ens.time, m1, m2);
        Ok(())
    })?;
    Ok(traj)
}

pub fn particle_equilibration_experiment(cfg: &EquilibrationConfig, seed: u64, dir: &Path) -> Result<ExperimentReport> {
    cfg.validate()?;
    let k = Kernel::cubic();
    let mut report = ExperimentReport::new("particle_equilibration");
    kernel_meta(&mut report, &k);
    report.meta("prng", PRNG_ID);
    report.meta("seed", seed.to_string());
    report.metric("sigma", cfg.sigma);
    report.metric("t_end", cfg.t_end);
    report.metric("window_fraction", cfg.window_fraction);

    let ens0 = ParticleEnsemble::two_clusters(cfg.n_left, cfg.n_right, cfg.separation, cfg.half_width)?;
    let mid = 0.5 * (ens0.positions[cfg.n_left - 1] + ens0.positions[cfg.n_left]);
    let (l0, r0) = particles::cluster_masses(&ens0, mid, 1.0);
    let expected = (cfg.n_left as f64 / (cfg.n_left + cfg.n_right) as f64, cfg.n_right as f64 / (cfg.n_left + cfg.n_right) as f64);
    report.metric("initial_m1", l0);
    report.metric("initial_m2", r0);
    report.check(
        "initial_masses",
        (l0, r0) == expected,
        format!("({l0}, {r0}) split between the clusters"),
    );

    let every = cfg.steps_per_sample();
    let steps = (cfg.t_end / cfg.dt).round() as u64;
    let sde = SdeConfig { sigma: cfg.sigma, dt: cfg.dt, steps, seed, force: cfg.force };
    let traj = track(&ens0, &k, &sde, every)?;

    let span = cfg.t_end - cfg.transient;
    let w = cfg.window_fraction * span;
    let first = window_mean_abs_d(&traj, cfg.transient, cfg.transient + w);
    let last = window_mean_abs_d(&traj, cfg.t_end - w, cfg.t_end);
    report.metric("initial_window_mean_abs_d", first);
    report.metric("final_window_mean_abs_d", last);
    report.check(
        "equilibration",
        last < first,
        format!("final-window mean |d| {last:.4} vs initial-window {first:.4}"),
    );

    // noise-free control
    let control_steps = (cfg.control_t_end / cfg.dt).round() as u64;
    let control = SdeConfig { sigma: 0.0, dt: cfg.dt, steps: control_steps, seed, force: cfg.force };
    let ctraj = track(&ens0, &k, &control, every)?;
    let c0 = ctraj.samples[0];
    let constant = ctraj.samples.iter().all(|s| s.m1 == c0.m1 && s.m2 == c0.m2);
    report.metric("control_m1", c0.m1);
    report.check("sigma_zero_control", constant, format!("masses fixed at ({}, {})", c0.m1, c0.m2));

    // asymptotic overlay
    let eps = cfg.sigma / std::f64::consts::SQRT_2;
    if eps > 0.0 && metadyn::mass_exchange_rhs(expected.0, expected.1, &k, eps).is_ok() {
        let ode = metadyn::integrate_masses(expected.0, 1.0, &k, eps, cfg.t_end, &IntegrateOptions::default())?;
        ode.write_csv(&dir.join("asymptotic_masses.csv"))?;
        ode.write_plot_data(&dir.join("asymptotic_masses.dat"), "mass-exchange ODE")?;
        report.artifact("asymptotic_masses.csv");
        report.artifact("asymptotic_masses.dat");
    }
    particles::write_masses_csv(&traj, &dir.join("particle_masses.csv"))?;
    traj.write_plot_data(&dir.join("particle_masses.dat"), "particles")?;
    particles::write_masses_csv(&ctraj, &dir.join("control_masses.csv"))?;
    for f in ["particle_masses.csv", "particle_masses.dat", "control_masses.csv"] {
        report.artifact(f);
    }
    report.write_json(dir)?;
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn window_means() {
        let mut tr = MassTrajectory::default();
        for i in 0..=10 {
            let d = 0.2 - 0.01 * i as f64;
            tr.push(i as f64, 0.5 - d / 2.0, 0.5 + d / 2.0);
        }
        assert!((window_mean_abs_d(&tr, 0.0, 1.0) - 0.195).abs() < 1e-12);
        assert!((window_mean_abs_d(&tr, 9.0, 10.0) - 0.105).abs() < 1e-12);
    }

    #[test]
    fn short_run_is_reproducible() {
        let cfg = EquilibrationConfig { t_end: 20.0, transient: 2.0, control_t_end: 5.0, ..Default::default() };
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        let ra = particle_equilibration_experiment(&cfg, 11, a.path()).unwrap();
        let rb = particle_equilibration_experiment(&cfg, 11, b.path()).unwrap();
        assert_eq!(ra.metrics, rb.metrics);
        assert_eq!(ra.check_passed("sigma_zero_control"), Some(true));
        assert_eq!(ra.check_passed("initial_masses"), Some(true));
        let fa = std::fs::read(a.path().join("particle_masses.csv")).unwrap();
        let fb = std::fs::read(b.path().join("particle_masses.csv")).unwrap();
        assert_eq!(fa, fb);
    }
}
