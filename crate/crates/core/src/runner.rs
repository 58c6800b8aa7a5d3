//! Executes a [`RunConfig`] and writes its outputs.

use std::path::Path;
use std::time::{SystemTime, UNIX_EPOCH};

use log::info;
use serde_json::json;

use crate::config::{InitialDensity, Mode, RunConfig};
use crate::error::{Error, Result};
use crate::kernels::Kernel;
use crate::metadyn::{self, log_spaced, MassTrajectory};
use crate::particles::{self, ParticleEnsemble, SdeConfig, PRNG_ID};
use crate::pde::{self, DensityField, PdeConfig};
use crate::quasisteady::{build_two_spike, centered_x1};
use crate::validate::{run_experiment, ExperimentReport, EXPERIMENTS};

/// What a run produced.
#[derive(Debug, Clone)]
pub enum RunOutcome {
    Simulation { files: Vec<String> },
    Experiments(Vec<ExperimentReport>),
}

impl RunOutcome {
    pub fn passed(&self) -> bool {
        match self {
            RunOutcome::Simulation { .. } => true,
            RunOutcome::Experiments(r) => r.iter().all(|r| r.passed),
        }
    }
}

/// Writes `run_metadata.json`; the timestamp is alone on its line.
fn write_metadata(cfg: &RunConfig, mode: Mode, dir: &Path) -> Result<()> {
    let body = json!({
        "crate_version": env!("CARGO_PKG_VERSION"),
        "mode": mode.name(),
        "seed": cfg.seed,
        "prng": PRNG_ID,
        "config": cfg,
    });
    let text = serde_json::to_string_pretty(&body)?;
    let rest = text.strip_prefix("{\n").unwrap_or(&text);
    let now = SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs());
    std::fs::write(dir.join("run_metadata.json"), format!("{{\n  \"generated_unix_time\": {now},\n{rest}\n"))?;
    Ok(())
}

pub fn execute(cfg: &RunConfig) -> Result<RunOutcome> {
    let mode = cfg.mode()?;
    cfg.validate()?;
    let dir = cfg.output_dir.as_path();
    std::fs::create_dir_all(dir)?;
    write_metadata(cfg, mode, dir)?;
    let kernel = cfg.kernel.build()?;
    info!("running {} mode into {}", mode.name(), dir.display());
    match mode {
        Mode::Particles => run_particles(cfg, &kernel, dir),
        Mode::Pde => run_pde(cfg, &kernel, dir),
        Mode::Asymptotic => run_asymptotic(cfg, &kernel, dir),
        Mode::Experiment => {
            let e = cfg.experiment.as_ref().expect("mode checked");
            let names: Vec<&str> = if e.name == "all" { EXPERIMENTS.to_vec() } else { vec![e.name.as_str()] };
            run_experiments(&names, &e.suite(), cfg.seed, dir).map(RunOutcome::Experiments)
        }
    }
}

pub fn run_experiments(
    names: &[&str],
    suite: &crate::validate::ExperimentSuiteConfig,
    seed: u64,
    dir: &Path,
) -> Result<Vec<ExperimentReport>> {
    suite.validate()?;
    names.iter().map(|n| run_experiment(n, suite, seed, dir)).collect()
}

fn run_particles(cfg: &RunConfig, k: &Kernel, dir: &Path) -> Result<RunOutcome> {
    let p = cfg.particles.as_ref().expect("mode checked");
    let positions: Vec<f64> = p
        .clusters
        .iter()
        .flat_map(|c| ParticleEnsemble::cluster(c.center, c.half_width, c.count))
        .collect();
    let ens0 = ParticleEnsemble::new(positions)?;
    let sde = SdeConfig { sigma: p.sigma, dt: p.dt, steps: p.steps, seed: cfg.seed, force: p.force };
    let mut snapshots = Vec::new();
    let mut masses = MassTrajectory::default();
    particles::simulate(&ens0, k, &sde, p.record_every, |_, ens| {
        if p.track_masses {
            let (m1, m2, _) = particles::separatrix_masses(ens, k, 1.0)?;
            masses.push(ens.time, m1, m2);
        }
        snapshots.push(ens.clone());
        Ok(())
    })?;
    let mut files = vec!["run_metadata.json".to_string(), "positions.csv".into()];
    particles::write_positions_csv(&snapshots, &dir.join("positions.csv"))?;
    if p.track_masses {
        particles::write_masses_csv(&masses, &dir.join("masses.csv"))?;
        files.push("masses.csv".into());
    }
    match particles::density_estimate(&snapshots, p.histogram_bins, (p.histogram_window[0], p.histogram_window[1])) {
        Ok(h) => {
            h.write_csv(&dir.join("histogram.csv"))?;
            files.push("histogram.csv".into());
        }
        Err(Error::EmptyHistogram { lo, hi }) => log::warn!("no particles in histogram window [{lo}, {hi}]"),
        Err(e) => return Err(e),
    }
    Ok(RunOutcome::Simulation { files })
}

fn run_pde(cfg: &RunConfig, k: &Kernel, dir: &Path) -> Result<RunOutcome> {
    let p = cfg.pde.as_ref().expect("mode checked");
    let grid = p.grid.build()?;
    let eps = p.eps2.sqrt();
    let rho0 = match &p.initial {
        InitialDensity::TwoSpike { m1, m2, x1 } => {
            let x1 = match x1 {
                Some(x) => *x,
                None => centered_x1(*m1, *m2, k, eps, &grid)?,
            };
            build_two_spike(*m1, *m2, x1, k, eps, &grid)?
        }
        InitialDensity::Gaussian { center, std, mass } => DensityField::from_fn(grid.clone(), |x| {
            mass * (-(x - center).powi(2) / (2.0 * std * std)).exp() / (2.0 * std::f64::consts::PI * std * std).sqrt()
        })?,
    };
    let output_times = match &p.output_times {
        Some(t) => t.clone(),
        None if p.t_end > 1.0 => log_spaced(1.0, p.t_end, 100),
        None => Vec::new(),
    };
    let pcfg = PdeConfig {
        eps2: p.eps2,
        dt: p.dt,
        t_end: p.t_end,
        output_times,
        flux: p.flux,
        convolution: p.convolution,
    };
    let run = pde::run_to(&rho0, k, &pcfg, p.tracking)?;
    info!("pde: {} steps, relative mass drift {:.3e}", run.steps, run.max_mass_drift);
    run.trajectory.write_csv(&dir.join("trajectory.csv"))?;
    rho0.write_csv(&dir.join("profile_initial.csv"))?;
    run.field.write_csv(&dir.join("profile_final.csv"))?;
    Ok(RunOutcome::Simulation {
        files: vec![
            "run_metadata.json".into(),
            "trajectory.csv".into(),
            "profile_initial.csv".into(),
            "profile_final.csv".into(),
        ],
    })
}

fn run_asymptotic(cfg: &RunConfig, k: &Kernel, dir: &Path) -> Result<RunOutcome> {
    let a = cfg.asymptotic.as_ref().expect("mode checked");
    let eps = a.eps2.sqrt();
    let traj = metadyn::integrate_masses(a.m1, a.total_mass, k, eps, a.t_end, &a.integrator)?;
    traj.write_csv(&dir.join("trajectory.csv"))?;
    traj.write_plot_data(&dir.join("trajectory.dat"), "mass-exchange ODE")?;
    let mut files = vec!["run_metadata.json".into(), "trajectory.csv".into(), "trajectory.dat".into()];
    // the diagnostic needs a moving d; skip the constant start-up and floor
    let moving = MassTrajectory {
        samples: traj.samples.iter().copied().filter(|s| s.t > 0.0 && s.d.abs() > a.eps2).collect(),
        floor_reached: traj.floor_reached,
    };
    match metadyn::slope_diagnostic(&moving, eps, a.total_mass, a.stencil) {
        Ok(points) => {
            metadyn::write_slope_csv(&points, &dir.join("slope.csv"))?;
            files.push("slope.csv".into());
        }
        Err(e) => log::warn!("slope diagnostic skipped: {e}"),
    }
    Ok(RunOutcome::Simulation { files })
}
