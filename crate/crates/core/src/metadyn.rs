//! Exponentially slow mass exchange between two quasi-steady spikes.
//!
//! With spikes at `x1 = 0` and `x2 = a`, the leading-order velocity is
//! `v(x) = M1 f(x) + M2 f(x - a)`. Its interior ascending zero `xhat`
//! separates the mass owned by each spike, and the action integrals
//! `I_j = int_{xhat}^{x_j} v ds` set the exponential rates of the exchange
//!
//! ```text
//! dM1/dt = (M2/2) sqrt(c2 v'(xhat)) / pi * exp(-I2/eps^2)
//!        - (M1/2) sqrt(c1 v'(xhat)) / pi * exp(-I1/eps^2),   dM2/dt = -dM1/dt.
//! ```

use std::f64::consts::PI;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernels::{bisect, Kernel};
use crate::quadrature;
use crate::quasisteady::{admissible_mass_range, spike_widths};

const XHAT_SCAN_INTERVALS: usize = 1000;
const XHAT_TOL: f64 = 1e-14;
const ACTION_TOL: f64 = 1e-14;

/// Interior zero of the two-spike velocity.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Separatrix {
    pub xhat: f64,
    pub vprime_at_xhat: f64,
    pub unique: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ActionIntegrals {
    pub i1: f64,
    pub i2: f64,
}

/// `v(x) = M1 f(x) + M2 f(x - a)` for spikes at `0` and `a`.
pub fn two_spike_velocity(m1: f64, m2: f64, k: &Kernel, a: f64) -> impl Fn(f64) -> f64 + '_ {
    move |x| m1 * k.eval(x) + m2 * k.eval(x - a)
}

fn check_masses(m1: f64, m2: f64) -> Result<()> {
    if !(m1 > 0.0 && m2 > 0.0 && m1.is_finite() && m2.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "spike masses must be positive and finite, got ({m1}, {m2})"
        )));
    }
    Ok(())
}

pub fn find_xhat(m1: f64, m2: f64, k: &Kernel) -> Result<Separatrix> {
    check_masses(m1, m2)?;
    let a = k.require_root()?;
    let v = two_spike_velocity(m1, m2, k, a);
    let h = a / XHAT_SCAN_INTERVALS as f64;
    let mut first: Option<(f64, f64)> = None;
    let mut ascending = 0usize;
    // Sample strictly inside (0, a); v vanishes at both spike centers.
    let mut x_prev = 0.5 * h;
    let mut v_prev = v(x_prev);
    for i in 1..XHAT_SCAN_INTERVALS {
        let x = (i as f64 + 0.5) * h;
        let vx = v(x);
        if v_prev < 0.0 && vx >= 0.0 {
            ascending += 1;
            if first.is_none() {
                first = Some((x_prev, x));
            }
        }
        x_prev = x;
        v_prev = vx;
    }
    let (lo, hi) = first.ok_or_else(|| Error::Inadmissible {
        m1,
        m2,
        reason: "velocity has no ascending interior zero between the spikes".into(),
    })?;
    let xhat = if v(hi) == 0.0 { hi } else { bisect(&v, lo, hi, XHAT_TOL) };
    let vprime_at_xhat = m1 * k.deriv(xhat) + m2 * k.deriv(xhat - a);
    Ok(Separatrix {
        xhat,
        vprime_at_xhat,
        unique: ascending == 1,
    })
}

pub fn action_integrals(m1: f64, m2: f64, k: &Kernel, sep: &Separatrix) -> Result<ActionIntegrals> {
    check_masses(m1, m2)?;
    let a = k.require_root()?;
    let v = two_spike_velocity(m1, m2, k, a);
    Ok(ActionIntegrals {
        i1: quadrature::integrate(&v, sep.xhat, 0.0, ACTION_TOL),
        i2: quadrature::integrate(&v, sep.xhat, a, ACTION_TOL),
    })
}

/// The two exchange fluxes `(into spike 1, out of spike 1)`.
fn exchange_terms(m1: f64, m2: f64, k: &Kernel, eps: f64) -> Result<(f64, f64)> {
    let (c1, c2) = spike_widths(m1, m2, k)?;
    let sep = find_xhat(m1, m2, k)?;
    let act = action_integrals(m1, m2, k, &sep)?;
    let e2 = eps * eps;
    let into1 = 0.5 * m2 * (c2 * sep.vprime_at_xhat).sqrt() / PI * (-act.i2 / e2).exp();
    let out1 = 0.5 * m1 * (c1 * sep.vprime_at_xhat).sqrt() / PI * (-act.i1 / e2).exp();
    Ok((into1, out1))
}

/// `dM1/dt` of the slow exchange. Exactly antisymmetric under mass swap.
pub fn mass_exchange_rhs(m1: f64, m2: f64, k: &Kernel, eps: f64) -> Result<f64> {
    check_masses(m1, m2)?;
    if !(eps > 0.0) {
        return Err(Error::InvalidArgument(format!("eps must be positive, got {eps}")));
    }
    if m1 == m2 {
        return Ok(0.0);
    }
    // Evaluate in a canonical orientation so that swapping the masses negates
    // the result bit for bit.
    if m1 > m2 {
        let (into, out) = exchange_terms(m2, m1, k, eps)?;
        return Ok(out - into);
    }
    let (into, out) = exchange_terms(m1, m2, k, eps)?;
    Ok(into - out)
}

/// Closed forms for `f(x) = x - x^3` (`a = 1`, spikes at `0` and `1`).
pub mod cubic {
    use std::f64::consts::PI;

    pub fn xhat(m1: f64, m2: f64) -> f64 {
        (2.0 * m2 - m1) / (m1 + m2)
    }

    pub fn vprime_at_xhat(m1: f64, m2: f64) -> f64 {
        (2.0 * m2 - m1) * (2.0 * m1 - m2) / (m1 + m2)
    }

    /// `(I1, I2)`.
    pub fn action_integrals(m1: f64, m2: f64) -> (f64, f64) {
        let m3 = (m1 + m2).powi(3);
        (
            m1 * (2.0 * m2 - m1).powi(3) / (4.0 * m3),
            m2 * (2.0 * m1 - m2).powi(3) / (4.0 * m3),
        )
    }

    /// Flux into spike 1: `F(M1, M2)`.
    pub fn flux(m1: f64, m2: f64, eps: f64) -> f64 {
        let m = m1 + m2;
        m2 / (2.0 * PI)
            * ((2.0 * m2 - m1) / m).sqrt()
            * (2.0 * m1 - m2)
            * (-m2 * (2.0 * m1 - m2).powi(3) / (4.0 * m.powi(3) * eps * eps)).exp()
    }

    /// `dM1/dt = F(M1, M2) - F(M2, M1)`.
    pub fn mass_exchange_rhs(m1: f64, m2: f64, eps: f64) -> f64 {
        flux(m1, m2, eps) - flux(m2, m1, eps)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MassSample {
    pub t: f64,
    pub m1: f64,
    pub m2: f64,
    pub d: f64,
}

/// Time series of the two spike masses.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MassTrajectory {
    pub samples: Vec<MassSample>,
    /// Set when integration stopped because `|d|` fell below `eps^2`.
    pub floor_reached: bool,
}

impl MassTrajectory {
    pub fn push(&mut self, t: f64, m1: f64, m2: f64) {
        self.samples.push(MassSample { t, m1, m2, d: m2 - m1 });
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn last(&self) -> Option<&MassSample> {
        self.samples.last()
    }

    /// Samples with `t >= t_min`.
    pub fn after(&self, t_min: f64) -> MassTrajectory {
        MassTrajectory {
            samples: self.samples.iter().copied().filter(|s| s.t >= t_min).collect(),
            floor_reached: self.floor_reached,
        }
    }

    /// CSV with header `t,M1,M2,d`.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["t", "M1", "M2", "d"])?;
        for s in &self.samples {
            w.write_record(&[fmt(s.t), fmt(s.m1), fmt(s.m2), fmt(s.d)])?;
        }
        w.flush()?;
        Ok(())
    }

    /// Whitespace-separated columns for gnuplot.
    pub fn write_plot_data(&self, path: &Path, label: &str) -> Result<()> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        writeln!(f, "# {label}")?;
        writeln!(f, "# t M1 M2 d")?;
        for s in &self.samples {
            writeln!(f, "{} {} {} {}", fmt(s.t), fmt(s.m1), fmt(s.m2), fmt(s.d))?;
        }
        Ok(())
    }
}

pub(crate) fn fmt(x: f64) -> String {
    format!("{x:.12e}")
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct IntegrateOptions {
    /// Largest relative change of `d` allowed in a single step.
    pub max_rel_change: f64,
    /// Number of log-spaced output times in `[first_output, t_end]`.
    pub outputs: usize,
    pub first_output: f64,
}

impl Default for IntegrateOptions {
    fn default() -> Self {
        Self {
            max_rel_change: 0.01,
            outputs: 200,
            first_output: 1e-2,
        }
    }
}

/// Log-spaced times in `[first, last]`, both ends included.
pub fn log_spaced(first: f64, last: f64, count: usize) -> Vec<f64> {
    match count {
        0 => Vec::new(),
        1 => vec![last],
        _ => {
            let (l0, l1) = (first.ln(), last.ln());
            (0..count)
                .map(|i| {
                    if i + 1 == count {
                        last
                    } else {
                        (l0 + (l1 - l0) * i as f64 / (count - 1) as f64).exp()
                    }
                })
                .collect()
        }
    }
}

/// Integrates the slow exchange ODE with RK4 under relative step control on `d`.
///
/// Integration stops at `t_end`, or earlier once `|d| < eps^2` where the
/// one-sided asymptotics no longer apply (flagged in the trajectory).
pub fn integrate_masses(
    m1_0: f64,
    total_mass: f64,
    k: &Kernel,
    eps: f64,
    t_end: f64,
    opts: &IntegrateOptions,
) -> Result<MassTrajectory> {
    let m2_0 = total_mass - m1_0;
    check_masses(m1_0, m2_0)?;
    if !(t_end > 0.0) {
        return Err(Error::InvalidArgument(format!("t_end must be positive, got {t_end}")));
    }
    let (lo, hi) = admissible_mass_range(total_mass, k)?;
    if !(m1_0 > lo && m1_0 < hi) {
        return Err(Error::Inadmissible {
            m1: m1_0,
            m2: m2_0,
            reason: "initial masses violate the mass-ratio window".into(),
        });
    }
    let rhs = |m1: f64| mass_exchange_rhs(m1, total_mass - m1, k, eps);
    let floor = eps * eps;
    let outputs = log_spaced(opts.first_output.min(t_end), t_end, opts.outputs);

    let mut traj = MassTrajectory::default();
    let mut t = 0.0;
    let mut m1 = m1_0;
    traj.push(t, m1, total_mass - m1);

    if rhs(m1)? == 0.0 {
        for &to in &outputs {
            traj.push(to, m1, total_mass - m1);
        }
        return Ok(traj);
    }

    for &t_out in &outputs {
        while t < t_out {
            let d = total_mass - 2.0 * m1;
            if d.abs() < floor {
                traj.floor_reached = true;
                traj.push(t, m1, total_mass - m1);
                return Ok(traj);
            }
            let k1 = rhs(m1)?;
            let rate = 2.0 * k1.abs();
            let dt_ctrl = if rate > 0.0 {
                opts.max_rel_change * d.abs() / rate
            } else {
                f64::INFINITY
            };
            if dt_ctrl <= f64::EPSILON * t.max(1.0) {
                return Err(Error::StepUnderflow { time: t, d, dt: dt_ctrl });
            }
            let dt = dt_ctrl.min(t_out - t);
            let k2 = rhs(m1 + 0.5 * dt * k1)?;
            let k3 = rhs(m1 + 0.5 * dt * k2)?;
            let k4 = rhs(m1 + dt * k3)?;
            m1 += dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
            t = if t_out - t <= dt { t_out } else { t + dt };
        }
        traj.push(t, m1, total_mass - m1);
    }
    Ok(traj)
}

/// `(M + d)(M - 3d)^3`, strictly decreasing on `[0, M/3]`.
pub fn log_time_profile(d: f64, total_mass: f64) -> f64 {
    (total_mass + d) * (total_mass - 3.0 * d).powi(3)
}

/// `64 M^3 eps^2 log(t / (64 M^3 eps^2))`, the horizontal axis of the log-time law.
pub fn log_time_axis(t: f64, total_mass: f64, eps: f64) -> f64 {
    let scale = 64.0 * total_mass.powi(3) * eps * eps;
    scale * (t / scale).ln()
}

/// Inverts `(M + d)(M - 3d)^3 = value` for `d` in `[0, M/3)`.
pub fn invert_log_time_profile(value: f64, total_mass: f64) -> Result<f64> {
    let m4 = total_mass.powi(4);
    if !(value > 0.0 && value <= m4) {
        return Err(Error::OutOfRange(format!(
            "log-time value {value} outside (0, M^4 = {m4}]"
        )));
    }
    if value == m4 {
        return Ok(0.0);
    }
    let g = |d: f64| log_time_profile(d, total_mass) - value;
    Ok(bisect(g, 0.0, total_mass / 3.0, 1e-15 * total_mass))
}

/// Mass difference predicted by the log-time law at time `t`.
pub fn d_of_logt(t: f64, total_mass: f64, eps: f64) -> Result<f64> {
    if !(t > 0.0) {
        return Err(Error::OutOfRange(format!("t must be positive, got {t}")));
    }
    invert_log_time_profile(log_time_axis(t, total_mass, eps), total_mass)
        .map_err(|_| Error::OutOfRange(format!("t = {t} is outside the asymptotic range")))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SlopeStencil {
    #[default]
    Centered3,
    LeastSquares5,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SlopePoint {
    pub t: f64,
    pub d: f64,
    /// `eps^2 log|d'(t)|`
    pub lhs: f64,
    /// `-(M + d)(M - 3d)^3 / (64 M^3)`
    pub rhs: f64,
}

impl SlopePoint {
    pub fn deviation(&self) -> f64 {
        self.lhs - self.rhs
    }
}

/// Compares `eps^2 log|d'|` along a trajectory with the leading-order exponent.
pub fn slope_diagnostic(
    traj: &MassTrajectory,
    eps: f64,
    total_mass: f64,
    stencil: SlopeStencil,
) -> Result<Vec<SlopePoint>> {
    let pts: Vec<(f64, f64)> = traj
        .samples
        .iter()
        .filter(|s| s.t > 0.0)
        .map(|s| (s.t.ln(), s.d))
        .collect();
    let half = match stencil {
        SlopeStencil::Centered3 => 1,
        SlopeStencil::LeastSquares5 => 2,
    };
    if pts.len() < 2 * half + 1 {
        return Err(Error::InvalidArgument(format!(
            "slope diagnostic needs at least {} samples with t > 0, got {}",
            2 * half + 1,
            pts.len()
        )));
    }
    let e2 = eps * eps;
    let m3 = total_mass.powi(3);
    let mut out = Vec::with_capacity(pts.len() - 2 * half);
    for i in half..pts.len() - half {
        let dd_dlogt = match stencil {
            SlopeStencil::Centered3 => (pts[i + 1].1 - pts[i - 1].1) / (pts[i + 1].0 - pts[i - 1].0),
            SlopeStencil::LeastSquares5 => {
                let w = &pts[i - 2..=i + 2];
                let mx = w.iter().map(|p| p.0).sum::<f64>() / 5.0;
                let my = w.iter().map(|p| p.1).sum::<f64>() / 5.0;
                let sxy: f64 = w.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
                let sxx: f64 = w.iter().map(|p| (p.0 - mx).powi(2)).sum();
                sxy / sxx
            }
        };
        let t = pts[i].0.exp();
        let dprime = dd_dlogt / t;
        if dprime == 0.0 || !dprime.is_finite() {
            return Err(Error::OutOfRange(format!(
                "d'(t) = {dprime} at t = {t}; log|d'| is undefined"
            )));
        }
        let d = pts[i].1;
        out.push(SlopePoint {
            t,
            d,
            lhs: e2 * dprime.abs().ln(),
            rhs: -log_time_profile(d, total_mass) / (64.0 * m3),
        });
    }
    Ok(out)
}

/// CSV with header `d,lhs,rhs`.
pub fn write_slope_csv(points: &[SlopePoint], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["d", "lhs", "rhs"])?;
    for p in points {
        w.write_record(&[fmt(p.d), fmt(p.lhs), fmt(p.rhs)])?;
    }
    w.flush()?;
    Ok(())
}

/// Solves `m1 = left_mass(xhat(m1))` for a two-spike profile with conserved
/// total mass and center of mass.
///
/// The spike centers follow from the center of mass, `x1 = xc - M2 a / M`,
/// and `xhat` is measured from `x1`. The residual is increasing in `m1`, so
/// bisection over the admissible window brackets the unique solution.
/// Returns `(m1, m2, xhat)` with `xhat` in absolute coordinates.
pub fn self_consistent_split(
    total_mass: f64,
    center_of_mass: f64,
    k: &Kernel,
    left_mass: impl Fn(f64) -> f64,
) -> Result<(f64, f64, f64)> {
    let a = k.require_root()?;
    let (lo, hi) = admissible_mass_range(total_mass, k)?;
    // the separatrix merges with a spike at the window edges
    let margin = 1e-3 * (hi - lo);
    let xhat_abs = |m1: f64| -> Result<f64> {
        let m2 = total_mass - m1;
        let sep = find_xhat(m1, m2, k)?;
        Ok(center_of_mass - m2 * a / total_mass + sep.xhat)
    };
    let resid = |m1: f64| -> Result<f64> { Ok(m1 - left_mass(xhat_abs(m1)?)) };
    let (mut l, mut h) = (lo + margin, hi - margin);
    let r_l = resid(l)?;
    let r_h = resid(h)?;
    if r_l > 0.0 || r_h < 0.0 {
        return Err(Error::Inadmissible {
            m1: left_mass(center_of_mass),
            m2: total_mass - left_mass(center_of_mass),
            reason: "no self-consistent separatrix split inside the mass-ratio window".into(),
        });
    }
    while h - l > 1e-15 * total_mass {
        let mid = 0.5 * (l + h);
        if mid <= l || mid >= h {
            break;
        }
        if resid(mid)? < 0.0 {
            l = mid;
        } else {
            h = mid;
        }
    }
    let m1_guess = 0.5 * (l + h);
    let xhat = xhat_abs(m1_guess)?;
    let m1 = left_mass(xhat);
    Ok((m1, total_mass - m1, xhat))
}
