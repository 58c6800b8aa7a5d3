//! Run configuration: a strict JSON document with a kernel, a seed, an
//! output directory and exactly one mode section.

use std::path::{Path, PathBuf};

use log::warn;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernels::KernelSpec;
use crate::metadyn::{IntegrateOptions, SlopeStencil};
use crate::particles::ForceMethod;
use crate::pde::{Convolution, FluxScheme, Grid, MassTracking};
use crate::validate::{
    EquilibrationConfig, ExperimentSuiteConfig, GaussianConfig, MetastabilityConfig, QuasisteadyConfig,
    EXPERIMENTS,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Particles,
    Pde,
    Asymptotic,
    Experiment,
}

impl Mode {
    pub const ALL: [Mode; 4] = [Mode::Particles, Mode::Pde, Mode::Asymptotic, Mode::Experiment];

    pub fn name(self) -> &'static str {
        match self {
            Mode::Particles => "particles",
            Mode::Pde => "pde",
            Mode::Asymptotic => "asymptotic",
            Mode::Experiment => "experiment",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::ConfigSchema(format!("unknown mode `{s}`")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClusterSpec {
    pub center: f64,
    pub half_width: f64,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ParticlesSection {
    pub clusters: Vec<ClusterSpec>,
    pub sigma: f64,
    pub dt: f64,
    pub steps: u64,
    pub force: ForceMethod,
    /// Steps between recorded snapshots.
    pub record_every: u64,
    pub histogram_bins: usize,
    pub histogram_window: [f64; 2],
    /// Track two-cluster masses at the separatrix (needs a kernel root).
    pub track_masses: bool,
}

impl Default for ParticlesSection {
    fn default() -> Self {
        Self {
            clusters: vec![
                ClusterSpec { center: -0.5, half_width: 0.05, count: 80 },
                ClusterSpec { center: 0.5, half_width: 0.05, count: 120 },
            ],
            sigma: 0.075,
            dt: 1e-3,
            steps: 100_000,
            force: ForceMethod::Direct,
            record_every: 1000,
            histogram_bins: 60,
            histogram_window: [-1.5, 1.5],
            track_masses: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    pub x_left: f64,
    pub x_right: f64,
    pub n_cells: usize,
}

impl GridSpec {
    pub fn build(&self) -> Result<Grid> {
        Grid::new(self.x_left, self.x_right, self.n_cells)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, tag = "kind", rename_all = "snake_case")]
pub enum InitialDensity {
    /// Two-spike quasi-steady profile, centered in the grid unless `x1` is given.
    TwoSpike {
        m1: f64,
        m2: f64,
        #[serde(default)]
        x1: Option<f64>,
    },
    Gaussian { center: f64, std: f64, mass: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PdeSection {
    pub eps2: f64,
    pub dt: f64,
    pub t_end: f64,
    pub grid: GridSpec,
    /// Defaults to 100 log-spaced times in `[1, t_end]`.
    pub output_times: Option<Vec<f64>>,
    pub initial: InitialDensity,
    pub flux: FluxScheme,
    pub convolution: Convolution,
    pub tracking: MassTracking,
}

impl Default for PdeSection {
    fn default() -> Self {
        Self {
            eps2: 0.001,
            dt: 0.01,
            t_end: 100.0,
            grid: GridSpec { x_left: 0.0, x_right: 3.0, n_cells: 600 },
            output_times: None,
            initial: InitialDensity::TwoSpike { m1: 0.35, m2: 0.65, x1: None },
            flux: FluxScheme::ExponentialFitting,
            convolution: Convolution::Direct,
            tracking: MassTracking::Separatrix,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AsymptoticSection {
    pub m1: f64,
    pub total_mass: f64,
    pub eps2: f64,
    pub t_end: f64,
    pub integrator: IntegrateOptions,
    pub stencil: SlopeStencil,
}

impl Default for AsymptoticSection {
    fn default() -> Self {
        Self {
            m1: 0.35,
            total_mass: 1.0,
            eps2: 0.001,
            t_end: 1e8,
            integrator: IntegrateOptions::default(),
            stencil: SlopeStencil::Centered3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSection {
    pub name: String,
    #[serde(default)]
    pub gaussian: GaussianConfig,
    #[serde(default)]
    pub quasisteady: QuasisteadyConfig,
    #[serde(default)]
    pub metastability: MetastabilityConfig,
    #[serde(default)]
    pub particle_equilibration: EquilibrationConfig,
}

impl ExperimentSection {
    pub fn suite(&self) -> ExperimentSuiteConfig {
        ExperimentSuiteConfig {
            gaussian: self.gaussian.clone(),
            quasisteady: self.quasisteady.clone(),
            metastability: self.metastability.clone(),
            particle_equilibration: self.particle_equilibration.clone(),
        }
    }
}

impl Default for ExperimentSection {
    fn default() -> Self {
        Self {
            name: EXPERIMENTS[0].into(),
            gaussian: Default::default(),
            quasisteady: Default::default(),
            metastability: Default::default(),
            particle_equilibration: Default::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub kernel: KernelSpec,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub particles: Option<ParticlesSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pde: Option<PdeSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub asymptotic: Option<AsymptoticSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub experiment: Option<ExperimentSection>,
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("output")
}

impl RunConfig {
    /// Config with every default filled in for `mode`.
    pub fn default_for(mode: Mode) -> Self {
        let mut c = Self {
            kernel: KernelSpec::default(),
            seed: 0,
            output_dir: default_output_dir(),
            particles: None,
            pde: None,
            asymptotic: None,
            experiment: None,
        };
        match mode {
            Mode::Particles => c.particles = Some(Default::default()),
            Mode::Pde => c.pde = Some(Default::default()),
            Mode::Asymptotic => c.asymptotic = Some(Default::default()),
            Mode::Experiment => c.experiment = Some(Default::default()),
        }
        c
    }

    pub fn mode(&self) -> Result<Mode> {
        let present: Vec<Mode> = [
            (self.particles.is_some(), Mode::Particles),
            (self.pde.is_some(), Mode::Pde),
            (self.asymptotic.is_some(), Mode::Asymptotic),
            (self.experiment.is_some(), Mode::Experiment),
        ]
        .into_iter()
        .filter_map(|(p, m)| p.then_some(m))
        .collect();
        match present.as_slice() {
            [m] => Ok(*m),
            [] => Err(Error::ConfigSchema(
                "no mode section; expected exactly one of particles, pde, asymptotic, experiment".into(),
            )),
            many => Err(Error::ConfigSchema(format!(
                "exactly one mode section allowed, found {}",
                many.iter().map(|m| m.name()).collect::<Vec<_>>().join(", ")
            ))),
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: RunConfig = serde_json::from_str(text).map_err(|e| Error::ConfigSchema(e.to_string()))?;
        cfg.mode()?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)? + "\n")
    }

    /// Parameter consistency beyond the schema.
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::ConfigInconsistent(m));
        let kernel = self.kernel.build().map_err(|e| Error::ConfigInconsistent(e.to_string()))?;
        if let Some(p) = &self.particles {
            if p.clusters.is_empty() || p.clusters.iter().all(|c| c.count == 0) {
                return bad("particles.clusters must hold at least one particle".into());
            }
            if !(p.sigma >= 0.0) || !(p.dt > 0.0) || p.steps == 0 || p.record_every == 0 || p.histogram_bins == 0 {
                return bad("particles: sigma >= 0, dt > 0 and positive steps, record_every, histogram_bins required".into());
            }
            if !(p.histogram_window[0] < p.histogram_window[1]) {
                return bad("particles.histogram_window must be increasing".into());
            }
            if p.track_masses && kernel.root_a().is_none() {
                return bad("particles.track_masses needs a kernel with a positive root".into());
            }
        }
        if let Some(p) = &self.pde {
            if !(p.eps2 > 0.0) || !(p.dt > 0.0) || !(p.t_end >= 0.0) {
                return bad("pde: eps2 and dt must be positive, t_end nonnegative".into());
            }
            let grid = p.grid.build().map_err(|e| Error::ConfigInconsistent(format!("pde.grid: {e}")))?;
            if grid.dx() > p.eps2.sqrt() / 6.0 {
                warn!(
                    "pde.grid: dx = {:.3e} exceeds eps/6 = {:.3e}; spikes are under-resolved",
                    grid.dx(),
                    p.eps2.sqrt() / 6.0
                );
            }
            if let Some(t) = &p.output_times {
                if t.windows(2).any(|w| !(w[0] < w[1])) {
                    return bad("pde.output_times must be strictly increasing".into());
                }
            }
            let needs_root = matches!(p.initial, InitialDensity::TwoSpike { .. })
                || matches!(p.tracking, MassTracking::Separatrix);
            if needs_root && kernel.root_a().is_none() {
                return bad("pde: two-spike data and separatrix tracking need a kernel with a positive root".into());
            }
        }
        if let Some(a) = &self.asymptotic {
            if !(a.eps2 > 0.0) || !(a.t_end > 0.0) || !(a.total_mass > 0.0) || !(a.m1 > 0.0 && a.m1 < a.total_mass) {
                return bad("asymptotic: need eps2, t_end, total_mass > 0 and 0 < m1 < total_mass".into());
            }
            if kernel.root_a().is_none() {
                return bad("asymptotic mode needs a kernel with a positive root".into());
            }
        }
        if let Some(e) = &self.experiment {
            if e.name != "all" && !EXPERIMENTS.contains(&e.name.as_str()) {
                return Err(Error::UnknownExperiment(e.name.clone()));
            }
            e.suite().validate()?;
        }
        Ok(())
    }
}

/// Reads and validates a config file; each failure kind has its own error.
pub fn parse_config(path: &Path) -> Result<RunConfig> {
    if !path.exists() {
        return Err(Error::ConfigMissing(path.to_path_buf()));
    }
    let text = std::fs::read_to_string(path)?;
    RunConfig::from_json(&text)
}
