use std::path::Path;
use std::time::Instant;

use log::info;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{fmt_opt, kernel_meta, minimize_scalar, positive, write_columns, write_table_csv, ExperimentReport};
use crate::error::{Error, Result};
use crate::kernels::Kernel;
use crate::metadyn::{self, log_spaced, MassTrajectory, SlopePoint, SlopeStencil};
use crate::pde::{self, Convolution, FluxScheme, Grid, MassTracking, PdeConfig};
use crate::quasisteady::{build_two_spike, centered_x1};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MetastabilityConfig {
    pub eps2_list: Vec<f64>,
    pub m1: f64,
    pub m2: f64,
    pub x_left: f64,
    pub x_right: f64,
    /// Cells at `reference_eps2`; other values scale as `1/eps`.
    pub base_cells: usize,
    pub reference_eps2: f64,
    /// Fixed cell count for every eps (overrides `base_cells`).
    pub n_cells: Option<usize>,
    /// Required resolution `dx <= eps / resolution_factor`.
    pub resolution_factor: f64,
    pub dt: f64,
    pub t_wait: f64,
    pub t_end: f64,
    pub first_output: f64,
    pub outputs: usize,
    pub flux: FluxScheme,
    pub convolution: Convolution,
    pub stencil: SlopeStencil,
    /// `d` window over which the slope law is checked.
    pub slope_d_window: [f64; 2],
    /// Slope deviation bound in units of `eps^2`.
    pub slope_tol_eps2: f64,
    pub ratio_range: [f64; 2],
    /// Bound on the fitted additive constant inside the log-time logarithm.
    pub max_log_offset: f64,
    pub mass_drift_tol: f64,
}

impl Default for MetastabilityConfig {
    fn default() -> Self {
        Self {
            eps2_list: vec![0.002, 0.001, 0.0008],
            m1: 0.35,
            m2: 0.65,
            x_left: 0.0,
            x_right: 3.0,
            base_cells: 600,
            reference_eps2: 0.001,
            n_cells: None,
            resolution_factor: 6.0,
            dt: 0.01,
            t_wait: 10.0,
            t_end: 3000.0,
            first_output: 1.0,
            outputs: 400,
            flux: FluxScheme::ExponentialFitting,
            convolution: Convolution::Moments,
            stencil: SlopeStencil::Centered3,
            slope_d_window: [0.1, 0.25],
            slope_tol_eps2: 5.0,
            ratio_range: [1.5, 2.7],
            max_log_offset: 5.0,
            mass_drift_tol: 1e-10,
        }
    }
}

/// `ceil(base * sqrt(reference / eps2))`, so `dx` scales with `eps`.
pub fn cells_for_eps2(base_cells: usize, reference_eps2: f64, eps2: f64) -> usize {
    (base_cells as f64 * (reference_eps2 / eps2).sqrt()).ceil() as usize
}

impl MetastabilityConfig {
    pub fn cells(&self, eps2: f64) -> usize {
        self.n_cells
            .unwrap_or_else(|| cells_for_eps2(self.base_cells, self.reference_eps2, eps2))
    }

    pub fn validate(&self) -> Result<()> {
        if self.eps2_list.is_empty() {
            return Err(Error::ConfigInconsistent("metastability.eps2_list is empty".into()));
        }
        for (name, v) in [
            ("metastability.m1", self.m1),
            ("metastability.m2", self.m2),
            ("metastability.reference_eps2", self.reference_eps2),
            ("metastability.resolution_factor", self.resolution_factor),
            ("metastability.dt", self.dt),
            ("metastability.t_wait", self.t_wait),
            ("metastability.t_end", self.t_end),
            ("metastability.first_output", self.first_output),
            ("metastability.slope_tol_eps2", self.slope_tol_eps2),
            ("metastability.max_log_offset", self.max_log_offset),
            ("metastability.mass_drift_tol", self.mass_drift_tol),
        ] {
            positive(name, v)?;
        }
        if self.t_wait >= self.t_end || self.first_output >= self.t_end {
            return Err(Error::ConfigInconsistent(
                "metastability: t_wait and first_output must precede t_end".into(),
            ));
        }
        if self.outputs < 5 {
            return Err(Error::ConfigInconsistent("metastability.outputs must be at least 5".into()));
        }
        let [lo, hi] = self.slope_d_window;
        let [rlo, rhi] = self.ratio_range;
        if !(lo < hi) || !(rlo > 0.0 && rlo < rhi) {
            return Err(Error::ConfigInconsistent("metastability: empty slope window or ratio range".into()));
        }
        for &e2 in &self.eps2_list {
            positive("metastability.eps2_list entry", e2)?;
            let n = self.cells(e2);
            let grid = Grid::new(self.x_left, self.x_right, n)
                .map_err(|e| Error::ConfigInconsistent(format!("metastability grid: {e}")))?;
            let limit = e2.sqrt() / self.resolution_factor;
            if grid.dx() > limit {
                return Err(Error::ConfigInconsistent(format!(
                    "metastability: dx = {:.4e} with {n} cells exceeds eps/{} = {limit:.4e} at eps2 = {e2}",
                    grid.dx(),
                    self.resolution_factor
                )));
            }
        }
        Ok(())
    }
}

/// One PDE run and its diagnostics.
#[derive(Debug, Clone)]
pub struct EpsRun {
    pub eps2: f64,
    pub n_cells: usize,
    pub trajectory: MassTrajectory,
    pub slope: Vec<SlopePoint>,
    pub mass_drift: f64,
    pub min_value: f64,
    pub runtime_s: f64,
}

fn run_one(cfg: &MetastabilityConfig, k: &Kernel, eps2: f64) -> Result<EpsRun> {
    let started = Instant::now();
    let eps = eps2.sqrt();
    let n_cells = cfg.cells(eps2);
    let grid = Grid::new(cfg.x_left, cfg.x_right, n_cells)?;
    let x1 = centered_x1(cfg.m1, cfg.m2, k, eps, &grid)?;
    let rho0 = build_two_spike(cfg.m1, cfg.m2, x1, k, eps, &grid)?;
    let pcfg = PdeConfig {
        eps2,
        dt: cfg.dt,
        t_end: cfg.t_end,
        output_times: log_spaced(cfg.first_output, cfg.t_end, cfg.outputs),
        flux: cfg.flux,
        convolution: cfg.convolution,
    };
    info!("metastability: eps2 = {eps2}, {n_cells} cells, t_end = {}", cfg.t_end);
    let run = pde::run_to(&rho0, k, &pcfg, MassTracking::Separatrix)?;
    let slope = metadyn::slope_diagnostic(&run.trajectory, eps, run.initial_mass, cfg.stencil)?;
    Ok(EpsRun {
        eps2,
        n_cells,
        trajectory: run.trajectory,
        slope,
        mass_drift: run.max_mass_drift,
        min_value: run.min_value,
        runtime_s: started.elapsed().as_secs_f64(),
    })
}

/// Largest `|lhs - rhs|` over post-wait points with `d` in `[lo, hi]`;
/// `NaN` when the window holds no point.
pub fn slope_max_deviation(points: &[SlopePoint], t_wait: f64, lo: f64, hi: f64) -> (f64, usize) {
    let sel: Vec<f64> = points
        .iter()
        .filter(|p| p.t >= t_wait && p.d >= lo && p.d <= hi)
        .map(|p| p.deviation().abs())
        .collect();
    if sel.is_empty() {
        (f64::NAN, 0)
    } else {
        (sel.iter().copied().fold(0.0, f64::max), sel.len())
    }
}

/// `d` predicted by the log-time law with an additive constant `offset`
/// inside the logarithm; clamped to `[0, M/3]` outside the law's range.
pub fn log_time_prediction(t: f64, total_mass: f64, eps2: f64, offset: f64) -> f64 {
    let scale = 64.0 * total_mass.powi(3) * eps2;
    let x = scale * ((t / scale).ln() + offset);
    if x <= 0.0 {
        total_mass / 3.0
    } else if x >= total_mass.powi(4) {
        0.0
    } else {
        metadyn::invert_log_time_profile(x, total_mass).unwrap_or(f64::NAN)
    }
}

/// Max vertical distance to the log-time curve over post-wait samples with
/// `|d| > eps^2`.
pub fn log_time_deviation(traj: &MassTrajectory, eps2: f64, total_mass: f64, t_wait: f64, offset: f64) -> f64 {
    traj.samples
        .iter()
        .filter(|s| s.t >= t_wait && s.d.abs() > eps2)
        .map(|s| (s.d - log_time_prediction(s.t, total_mass, eps2, offset)).abs())
        .fold(f64::NAN, f64::max)
}

fn strictly_decreasing_after(traj: &MassTrajectory, t_wait: f64) -> bool {
    let post: Vec<f64> = traj.samples.iter().filter(|s| s.t >= t_wait).map(|s| s.d).collect();
    post.windows(2).all(|w| w[1] < w[0])
}

pub fn metastability_experiment(cfg: &MetastabilityConfig, dir: &Path) -> Result<ExperimentReport> {
    cfg.validate()?;
    let k = Kernel::cubic();
    let mut report = ExperimentReport::new("metastability");
    kernel_meta(&mut report, &k);
    report.meta("flux", format!("{:?}", cfg.flux));
    report.meta("convolution", format!("{:?}", cfg.convolution));
    report.tolerance("slope_tol_eps2", cfg.slope_tol_eps2);
    report.tolerance("ratio_min", cfg.ratio_range[0]);
    report.tolerance("ratio_max", cfg.ratio_range[1]);
    report.tolerance("mass_drift_tol", cfg.mass_drift_tol);
    report.tolerance("max_log_offset", cfg.max_log_offset);
    report.metric("t_wait", cfg.t_wait);
    report.metric("t_end", cfg.t_end);

    let mut runs: Vec<EpsRun> = cfg
        .eps2_list
        .par_iter()
        .map(|&e2| run_one(cfg, &k, e2))
        .collect::<Result<_>>()?;
    runs.sort_by(|a, b| b.eps2.total_cmp(&a.eps2));
    let total = cfg.m1 + cfg.m2;
    let [lo, hi] = cfg.slope_d_window;

    let mut slope_dev = Vec::new();
    let mut passing = 0usize;
    let mut summary_rows = Vec::new();
    for r in &runs {
        let tag = format!("eps2_{}", r.eps2);
        let (dev, count) = slope_max_deviation(&r.slope, cfg.t_wait, lo, hi);
        let post_wait: Vec<f64> = r
            .slope
            .iter()
            .filter(|p| p.t >= cfg.t_wait)
            .map(|p| p.deviation() / r.eps2)
            .collect();
        let post_max = post_wait.iter().map(|v| v.abs()).fold(f64::NAN, f64::max);
        let d_wait = r
            .trajectory
            .samples
            .iter()
            .find(|s| s.t >= cfg.t_wait)
            .map_or(f64::NAN, |s| s.d);
        let d_end = r.trajectory.last().map_or(f64::NAN, |s| s.d);
        report.metric(format!("{tag}.n_cells"), r.n_cells as f64);
        report.metric(format!("{tag}.slope_max_dev"), dev);
        report.metric(format!("{tag}.slope_max_dev_over_eps2"), dev / r.eps2);
        report.metric(format!("{tag}.slope_window_samples"), count as f64);
        report.metric(format!("{tag}.slope_post_wait_max_dev_over_eps2"), post_max);
        report.metric(format!("{tag}.d_at_wait"), d_wait);
        report.metric(format!("{tag}.d_final"), d_end);
        report.metric(format!("{tag}.mass_drift"), r.mass_drift);
        report.metric(format!("{tag}.min_density"), r.min_value);
        report.timing(format!("{tag}.run"), r.runtime_s);

        let slope_ok = count > 0 && dev <= cfg.slope_tol_eps2 * r.eps2;
        let detail = if count == 0 {
            format!("no post-wait sample with d in [{lo}, {hi}] (d at t_wait = {})", fmt_opt(d_wait))
        } else {
            format!("max dev {} = {:.3} eps^2 over {count} samples", fmt_opt(dev), dev / r.eps2)
        };
        report.check(format!("{tag}.slope_law"), slope_ok, detail);
        let mono = strictly_decreasing_after(&r.trajectory, cfg.t_wait);
        report.check(format!("{tag}.d_decreasing"), mono, "d(t) after the wait");
        let drift_ok = r.mass_drift <= cfg.mass_drift_tol;
        report.check(format!("{tag}.mass_conservation"), drift_ok, format!("relative drift {:.3e}", r.mass_drift));
        if slope_ok && mono && drift_ok {
            passing += 1;
        }
        slope_dev.push(dev);
        summary_rows.push(vec![r.eps2, r.n_cells as f64, dev, dev / r.eps2, count as f64, post_max, d_wait, d_end, r.mass_drift]);

        r.trajectory.write_csv(&dir.join(format!("trajectory_{tag}.csv")))?;
        r.trajectory.write_plot_data(&dir.join(format!("trajectory_{tag}.dat")), &format!("eps2 = {}", r.eps2))?;
        metadyn::write_slope_csv(&r.slope, &dir.join(format!("slope_{tag}.csv")))?;
        write_columns(
            &dir.join(format!("slope_{tag}.dat")),
            &["t", "d", "lhs", "rhs"],
            r.slope.iter().map(|p| vec![p.t, p.d, p.lhs, p.rhs]),
        )?;
        for f in ["trajectory", "slope"] {
            report.artifact(format!("{f}_{tag}.csv"));
            report.artifact(format!("{f}_{tag}.dat"));
        }
    }

    // log-time collapse with one pooled offset
    let scaled_max = |c: f64| -> f64 {
        runs.iter()
            .map(|r| log_time_deviation(&r.trajectory, r.eps2, total, cfg.t_wait, c) / r.eps2)
            .fold(0.0, f64::max)
    };
    let (offset, _) = minimize_scalar(scaled_max, -cfg.max_log_offset, cfg.max_log_offset);
    report.metric("log_time_offset", offset);
    let mut logt_dev = Vec::new();
    for r in &runs {
        let tag = format!("eps2_{}", r.eps2);
        let dev = log_time_deviation(&r.trajectory, r.eps2, total, cfg.t_wait, offset);
        report.metric(format!("{tag}.log_time_max_dev"), dev);
        report.metric(format!("{tag}.log_time_max_dev_over_eps2"), dev / r.eps2);
        logt_dev.push(dev);
        let scale = 64.0 * total.powi(3) * r.eps2;
        write_columns(
            &dir.join(format!("logtime_{tag}.dat")),
            &["axis", "d", "d_predicted"],
            r.trajectory.samples.iter().filter(|s| s.t >= cfg.t_wait).map(|s| {
                vec![
                    scale * ((s.t / scale).ln() + offset),
                    s.d,
                    log_time_prediction(s.t, total, r.eps2, offset),
                ]
            }),
        )?;
        report.artifact(format!("logtime_{tag}.dat"));
    }

    write_table_csv(
        &dir.join("summary.csv"),
        &[
            "eps2",
            "n_cells",
            "slope_max_dev",
            "slope_max_dev_over_eps2",
            "slope_window_samples",
            "slope_post_wait_max_dev_over_eps2",
            "d_at_wait",
            "d_final",
            "mass_drift",
        ],
        summary_rows,
    )?;
    report.artifact("summary.csv");

    // scaling across the two largest eps2
    let [rlo, rhi] = cfg.ratio_range;
    if runs.len() >= 2 {
        let tag = format!("{}_over_{}", runs[0].eps2, runs[1].eps2);
        let slope_ratio = slope_dev[0] / slope_dev[1];
        let logt_ratio = logt_dev[0] / logt_dev[1];
        report.metric(format!("slope_ratio_{tag}"), slope_ratio);
        report.metric(format!("log_time_ratio_{tag}"), logt_ratio);
        let post = |r: &EpsRun| {
            r.slope
                .iter()
                .filter(|p| p.t >= cfg.t_wait)
                .map(|p| p.deviation().abs())
                .fold(f64::NAN, f64::max)
        };
        report.metric(format!("slope_post_wait_ratio_{tag}"), post(&runs[0]) / post(&runs[1]));
        let in_range = |x: f64| x >= rlo && x <= rhi;
        if passing >= 2 {
            let detail = if slope_ratio.is_nan() {
                format!("ratio {tag} undefined: a slope window is empty")
            } else {
                format!("ratio {tag} = {slope_ratio:.4} in [{rlo}, {rhi}]?")
            };
            report.check("slope_scaling", in_range(slope_ratio), detail);
        } else {
            report.check(
                "slope_scaling",
                false,
                format!("not attempted: {passing} eps2 value(s) passed the per-eps checks, 2 required"),
            );
        }
        report.check("log_time_scaling", in_range(logt_ratio), format!("ratio {}", fmt_opt(logt_ratio)));
    } else {
        report.check("slope_scaling", false, "needs at least two eps2 values");
        report.check("log_time_scaling", false, "needs at least two eps2 values");
    }
    report.write_json(dir)?;
    Ok(report)
}
