use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{kernel_meta, positive, write_columns, ExperimentReport};
use crate::error::{Error, Result};
use crate::kernels::Kernel;
use crate::pde::{self, Convolution, DensityField, FluxScheme, Grid, MassTracking, PdeConfig};
use crate::quasisteady::{build_two_spike, centered_x1, two_spike_state};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct QuasisteadyConfig {
    pub eps2: f64,
    pub m1: f64,
    pub m2: f64,
    pub x_left: f64,
    pub x_right: f64,
    pub n_cells: usize,
    pub dt: f64,
    pub t_end: f64,
    pub flux: FluxScheme,
    pub convolution: Convolution,
    pub peak_rel_tol: f64,
    pub peak_symmetry_tol: f64,
    pub half_mass_tol: f64,
}

impl Default for QuasisteadyConfig {
    fn default() -> Self {
        Self {
            eps2: 0.001,
            m1: 0.5,
            m2: 0.5,
            x_left: 0.0,
            x_right: 3.0,
            n_cells: 600,
            dt: 0.01,
            t_end: 500.0,
            flux: FluxScheme::ExponentialFitting,
            convolution: Convolution::Direct,
            peak_rel_tol: 0.05,
            peak_symmetry_tol: 1e-6,
            half_mass_tol: 1e-8,
        }
    }
}

impl QuasisteadyConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("quasisteady.eps2", self.eps2),
            ("quasisteady.m1", self.m1),
            ("quasisteady.m2", self.m2),
            ("quasisteady.dt", self.dt),
            ("quasisteady.t_end", self.t_end),
            ("quasisteady.peak_rel_tol", self.peak_rel_tol),
            ("quasisteady.peak_symmetry_tol", self.peak_symmetry_tol),
            ("quasisteady.half_mass_tol", self.half_mass_tol),
        ] {
            positive(name, v)?;
        }
        Grid::new(self.x_left, self.x_right, self.n_cells)
            .map_err(|e| Error::ConfigInconsistent(format!("quasisteady grid: {e}")))?;
        Ok(())
    }
}

/// Local maximum of `values` over cells `range`, refined by a parabola
/// through the top cell and its neighbours. Returns `(x, height)`.
pub fn interpolated_peak(rho: &DensityField, range: std::ops::Range<usize>) -> (f64, f64) {
    let v = &rho.values;
    let i = range
        .clone()
        .max_by(|&a, &b| v[a].total_cmp(&v[b]))
        .expect("nonempty peak search range");
    if i == 0 || i + 1 >= v.len() {
        return (rho.grid.center(i), v[i]);
    }
    let (y0, y1, y2) = (v[i - 1], v[i], v[i + 1]);
    let curv = y0 - 2.0 * y1 + y2;
    if curv >= 0.0 {
        return (rho.grid.center(i), y1);
    }
    let shift = 0.5 * (y0 - y2) / curv;
    (rho.grid.center(i) + shift * rho.grid.dx(), y1 - 0.125 * (y0 - y2).powi(2) / curv)
}

pub fn quasisteady_experiment(cfg: &QuasisteadyConfig, dir: &Path) -> Result<ExperimentReport> {
    cfg.validate()?;
    let k = Kernel::cubic();
    let a = k.require_root()?;
    let eps = cfg.eps2.sqrt();
    let mut report = ExperimentReport::new("quasisteady");
    kernel_meta(&mut report, &k);
    report.tolerance("peak_rel_tol", cfg.peak_rel_tol);
    report.tolerance("peak_symmetry_tol", cfg.peak_symmetry_tol);
    report.tolerance("half_mass_tol", cfg.half_mass_tol);
    report.metric("eps2", cfg.eps2);

    let grid = Grid::new(cfg.x_left, cfg.x_right, cfg.n_cells)?;
    let x1 = centered_x1(cfg.m1, cfg.m2, &k, eps, &grid)?;
    let rho0 = build_two_spike(cfg.m1, cfg.m2, x1, &k, eps, &grid)?;
    let total = rho0.total_mass();
    let state = two_spike_state(cfg.m1, cfg.m2, x1, &k, eps)?;
    let mid = x1 + 0.5 * a;

    let pcfg = PdeConfig {
        eps2: cfg.eps2,
        dt: cfg.dt,
        t_end: cfg.t_end,
        output_times: vec![],
        flux: cfg.flux,
        convolution: cfg.convolution,
    };
    let run = pde::run_to(&rho0, &k, &pcfg, MassTracking::Fixed { xhat: mid })?;
    let rho = &run.field;

    let split = rho.grid.locate(mid);
    let (px1, h1) = interpolated_peak(rho, 0..split);
    let (px2, h2) = interpolated_peak(rho, split..rho.grid.n_cells);
    let predicted = [
        state.masses[0] / eps * (state.widths_c[0] / (2.0 * std::f64::consts::PI)).sqrt(),
        state.masses[1] / eps * (state.widths_c[1] / (2.0 * std::f64::consts::PI)).sqrt(),
    ];
    let err1 = (h1 - predicted[0]).abs() / predicted[0];
    let err2 = (h2 - predicted[1]).abs() / predicted[1];
    let peak_err = err1.max(err2);
    let (left, right) = pde::mass_split(rho, mid)?;
    let half_err = (left - 0.5 * total).abs().max((right - 0.5 * total).abs());
    let ansatz: Vec<f64> = rho.grid.centers().map(|x| state.density(x)).collect();
    let l1: f64 = rho.values.iter().zip(&ansatz).map(|(r, s)| (r - s).abs()).sum::<f64>() * rho.grid.dx();

    report.metric("peak_height_left", h1);
    report.metric("peak_height_right", h2);
    report.metric("peak_height_predicted_left", predicted[0]);
    report.metric("peak_height_predicted_right", predicted[1]);
    report.metric("peak_position_left", px1);
    report.metric("peak_position_right", px2);
    report.metric("peak_rel_error", peak_err);
    report.metric("peak_asymmetry", (h1 - h2).abs());
    report.metric("half_mass_error", half_err);
    report.metric("profile_l1_error", l1);
    report.metric("mass_drift", run.max_mass_drift);
    report.check("peak_rel_error", peak_err <= cfg.peak_rel_tol, format!("{peak_err:.4e} <= {}", cfg.peak_rel_tol));
    if cfg.m1 == cfg.m2 {
        report.check(
            "peak_symmetry",
            (h1 - h2).abs() <= cfg.peak_symmetry_tol,
            format!("|h1 - h2| = {:.3e}", (h1 - h2).abs()),
        );
        report.check("half_masses", half_err <= cfg.half_mass_tol, format!("max |M_j - M/2| = {half_err:.3e}"));
    }

    rho.write_csv(&dir.join("profile.csv"))?;
    write_columns(
        &dir.join("profile.dat"),
        &["x", "rho", "ansatz", "rho_initial"],
        rho.grid
            .centers()
            .enumerate()
            .map(|(i, x)| vec![x, rho.values[i], ansatz[i], rho0.values[i]]),
    )?;
    report.artifact("profile.csv");
    report.artifact("profile.dat");
    report.write_json(dir)?;
    Ok(report)
}
