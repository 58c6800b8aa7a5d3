//! Odd pairwise interaction forces.
//!
//! Every kernel is an odd polynomial `f(x) = sum_k c_k x^(2k+1)`, so oddness
//! holds by construction and all derivatives are analytic. The two named
//! kernels are the purely attractive `f(x) = -x` and the double-well force
//! `f(x) = x - x^3`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Upper end of the bracket scan for the smallest positive root.
pub const ROOT_SCAN_MAX: f64 = 10.0;
const ROOT_SCAN_STEPS: usize = 10_000;
const ROOT_TOL: f64 = 1e-14;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KernelKind {
    LinearAttraction,
    CubicDoubleWell,
    OddPolynomial,
}

/// Kernel description as it appears in a run configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KernelSpec {
    pub kind: KernelKind,
    /// Coefficients of `x, x^3, x^5, ...` (only read for `odd_polynomial`).
    #[serde(default)]
    pub coefficients: Vec<f64>,
}

impl Default for KernelSpec {
    fn default() -> Self {
        Self {
            kind: KernelKind::CubicDoubleWell,
            coefficients: Vec::new(),
        }
    }
}

impl KernelSpec {
    pub fn build(&self) -> Result<Kernel> {
        match self.kind {
            KernelKind::LinearAttraction => Ok(Kernel::linear()),
            KernelKind::CubicDoubleWell => Ok(Kernel::cubic()),
            KernelKind::OddPolynomial => {
                if self.coefficients.iter().any(|c| !c.is_finite()) {
                    return Err(Error::InvalidArgument(
                        "kernel coefficients must be finite".into(),
                    ));
                }
                Ok(Kernel::odd_polynomial(self.coefficients.clone()))
            }
        }
    }
}

/// An odd force `f` with its derivatives and smallest positive root.
#[derive(Debug, Clone, PartialEq)]
pub struct Kernel {
    label: String,
    odd_coeffs: Vec<f64>,
    root_a: Option<f64>,
}

impl Kernel {
    /// `f(x) = -x`: purely attractive, no positive root.
    pub fn linear() -> Self {
        Self {
            label: "linear_attraction".into(),
            odd_coeffs: vec![-1.0],
            root_a: None,
        }
    }

    /// `f(x) = x - x^3` with root `a = 1`.
    pub fn cubic() -> Self {
        Self {
            label: "cubic_double_well".into(),
            odd_coeffs: vec![1.0, -1.0],
            root_a: Some(1.0),
        }
    }

    pub fn odd_polynomial(odd_coeffs: Vec<f64>) -> Self {
        let mut k = Self {
            label: "odd_polynomial".into(),
            odd_coeffs,
            root_a: None,
        };
        k.root_a = k.find_smallest_positive_root();
        k
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn odd_coefficients(&self) -> &[f64] {
        &self.odd_coeffs
    }

    #[inline]
    pub fn eval(&self, x: f64) -> f64 {
        let x2 = x * x;
        let mut acc = 0.0;
        for &c in self.odd_coeffs.iter().rev() {
            acc = acc * x2 + c;
        }
        acc * x
    }

    #[inline]
    pub fn deriv(&self, x: f64) -> f64 {
        let x2 = x * x;
        let mut acc = 0.0;
        for (k, &c) in self.odd_coeffs.iter().enumerate().rev() {
            acc = acc * x2 + (2 * k + 1) as f64 * c;
        }
        acc
    }

    /// Analytic `f'''(x)`.
    pub fn third_deriv(&self, x: f64) -> f64 {
        let x2 = x * x;
        let mut acc = 0.0;
        for (k, &c) in self.odd_coeffs.iter().enumerate().skip(1).rev() {
            let p = (2 * k + 1) as f64;
            acc = acc * x2 + p * (p - 1.0) * (p - 2.0) * c;
        }
        acc
    }

    /// Radial potential with `-P'(r) = f(r)` and `P(0) = 0`.
    pub fn potential(&self, r: f64) -> f64 {
        let r = r.abs();
        let r2 = r * r;
        let mut acc = 0.0;
        for (k, &c) in self.odd_coeffs.iter().enumerate().rev() {
            acc = acc * r2 - c / (2 * k + 2) as f64;
        }
        acc * r2
    }

    /// Smallest positive root of `f`, if any.
    pub fn root_a(&self) -> Option<f64> {
        self.root_a
    }

    pub fn require_root(&self) -> Result<f64> {
        self.root_a.ok_or_else(|| Error::NoPositiveRoot {
            label: self.label.clone(),
            x_max: ROOT_SCAN_MAX,
        })
    }

    /// Purely attractive kernels have no positive root.
    pub fn is_purely_attractive(&self) -> bool {
        self.root_a.is_none()
    }

    /// `out[i] = sum_j w[j] f(t[i] - s[j])` by expanding `f` in power sums of
    /// the sources about `center`; `O((sources + targets) * degree)`.
    pub fn convolve_moments(&self, sources: &[f64], weights: &[f64], center: f64, targets: &[f64], out: &mut [f64]) {
        let degree = 2 * self.odd_coeffs.len() - 1;
        let mut s = vec![0.0; degree + 1];
        for (&x, &w) in sources.iter().zip(weights) {
            let y = x - center;
            let mut p = w;
            for sm in s.iter_mut() {
                *sm += p;
                p *= y;
            }
        }
        // sum_j w_j (y - y_j)^m = sum_q binom(m, q) y^q (-1)^(m-q) S_(m-q)
        let mut a = vec![0.0; degree + 1];
        for (pi, &cp) in self.odd_coeffs.iter().enumerate() {
            let m = 2 * pi + 1;
            let mut binom = 1.0;
            for q in 0..=m {
                let sign = if (m - q) % 2 == 0 { 1.0 } else { -1.0 };
                a[q] += cp * binom * sign * s[m - q];
                binom = binom * (m - q) as f64 / (q + 1) as f64;
            }
        }
        for (o, &t) in out.iter_mut().zip(targets) {
            let y = t - center;
            *o = a.iter().rev().fold(0.0, |acc, &aq| acc * y + aq);
        }
    }

    fn find_smallest_positive_root(&self) -> Option<f64> {
        let h = ROOT_SCAN_MAX / ROOT_SCAN_STEPS as f64;
        let mut lo = h;
        let mut f_lo = self.eval(lo);
        if f_lo == 0.0 {
            return Some(lo);
        }
        for i in 2..=ROOT_SCAN_STEPS {
            let hi = h * i as f64;
            let f_hi = self.eval(hi);
            if f_hi == 0.0 {
                return Some(hi);
            }
            if f_lo.signum() != f_hi.signum() {
                return Some(bisect(|x| self.eval(x), lo, hi, ROOT_TOL));
            }
            lo = hi;
            f_lo = f_hi;
        }
        None
    }
}

/// Bisection on a sign-changing bracket down to width `tol`.
pub(crate) fn bisect(f: impl Fn(f64) -> f64, mut lo: f64, mut hi: f64, tol: f64) -> f64 {
    let mut f_lo = f(lo);
    while hi - lo > tol {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        let f_mid = f(mid);
        if f_mid == 0.0 {
            return mid;
        }
        if f_mid.signum() == f_lo.signum() {
            lo = mid;
            f_lo = f_mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Structural conditions on `f`, each reported independently.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConditionReport {
    pub is_odd: bool,
    pub has_positive_root: bool,
    pub deriv0_positive: bool,
    pub deriv_a_negative: bool,
    pub fppp_negative_on_0a: bool,
}

impl ConditionReport {
    pub fn all_hold(&self) -> bool {
        self.is_odd
            && self.has_positive_root
            && self.deriv0_positive
            && self.deriv_a_negative
            && self.fppp_negative_on_0a
    }
}

pub fn check_conditions(k: &Kernel) -> ConditionReport {
    const SAMPLES: usize = 1000;
    let is_odd = (0..=SAMPLES).all(|i| {
        let x = -3.0 + 6.0 * i as f64 / SAMPLES as f64;
        let s = k.eval(x) + k.eval(-x);
        s.abs() <= 1e-12 * (1.0 + k.eval(x).abs())
    });
    let root = k.root_a();
    let fppp_negative_on_0a = match root {
        Some(a) => (1..SAMPLES).all(|i| k.third_deriv(a * i as f64 / SAMPLES as f64) < 0.0),
        None => false,
    };
    ConditionReport {
        is_odd,
        has_positive_root: root.is_some(),
        deriv0_positive: k.deriv(0.0) > 0.0,
        deriv_a_negative: root.is_some_and(|a| k.deriv(a) < 0.0),
        fppp_negative_on_0a,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn linear_values() {
        let k = Kernel::linear();
        assert_eq!(k.eval(0.0), 0.0);
        assert_eq!(k.eval(2.0), -2.0);
        assert_eq!(k.deriv(1.0), -1.0);
        assert!(k.root_a().is_none());
        assert!(k.is_purely_attractive());
        assert!(k.require_root().is_err());
    }

    #[test]
    fn cubic_values() {
        let k = Kernel::cubic();
        assert_eq!(k.eval(1.0), 0.0);
        assert_eq!(k.deriv(0.0), 1.0);
        assert_eq!(k.deriv(1.0), -2.0);
        assert_abs_diff_eq!(k.eval(-0.5), -0.375, epsilon = 1e-15);
        assert_eq!(k.third_deriv(0.3), -6.0);
        assert_eq!(k.root_a(), Some(1.0));
    }

    #[test]
    fn cubic_potential() {
        let k = Kernel::cubic();
        assert_abs_diff_eq!(k.potential(1.0), -0.25, epsilon = 1e-15);
        assert_abs_diff_eq!(k.potential(-2.0), -2.0 + 4.0, epsilon = 1e-14);
        // -P'(r) = f(r)
        let h = 1e-6;
        for r in [0.2, 0.7, 1.3] {
            let dp = (k.potential(r + h) - k.potential(r - h)) / (2.0 * h);
            assert_abs_diff_eq!(-dp, k.eval(r), epsilon = 1e-8);
        }
    }

    #[test]
    fn polynomial_root_scan_matches_cubic() {
        let k = Kernel::odd_polynomial(vec![1.0, -1.0]);
        let a = k.root_a().unwrap();
        assert_abs_diff_eq!(a, 1.0, epsilon = 1e-13);
        assert!(k.eval(a).abs() <= 1e-12);
    }

    #[test]
    fn polynomial_smallest_root_is_taken() {
        // f = x (1 - x^2)(4 - x^2) = 4x - 5x^3 + x^5, roots at 1 and 2
        let k = Kernel::odd_polynomial(vec![4.0, -5.0, 1.0]);
        assert_abs_diff_eq!(k.root_a().unwrap(), 1.0, epsilon = 1e-13);
    }

    #[test]
    fn moment_convolution_matches_direct_sum() {
        let k = Kernel::odd_polynomial(vec![4.0, -5.0, 1.0]);
        let src = [0.1, 0.4, 0.45, 1.2];
        let w = [0.3, 0.1, 0.2, 0.4];
        let tgt = [-0.2, 0.5, 1.0];
        let mut out = [0.0; 3];
        k.convolve_moments(&src, &w, 0.6, &tgt, &mut out);
        for (o, &t) in out.iter().zip(&tgt) {
            let direct: f64 = src.iter().zip(&w).map(|(&s, &w)| w * k.eval(t - s)).sum();
            assert_abs_diff_eq!(*o, direct, epsilon = 1e-13);
        }
    }

    #[test]
    fn conditions_for_builtin_kernels() {
        let r = check_conditions(&Kernel::cubic());
        assert!(r.all_hold(), "{r:?}");

        let r = check_conditions(&Kernel::linear());
        assert!(r.is_odd);
        assert!(!r.has_positive_root);
        assert!(!r.deriv0_positive);

        let r = check_conditions(&Kernel::odd_polynomial(vec![1.0, 1.0]));
        assert!(r.is_odd && r.deriv0_positive);
        assert!(!r.has_positive_root);
        assert!(!r.deriv_a_negative);
        assert!(!r.all_hold());
    }

    #[test]
    fn spec_parsing_builds_kernels() {
        let spec: KernelSpec =
            serde_json::from_str(r#"{"kind":"odd_polynomial","coefficients":[2.0,-2.0]}"#)
                .unwrap();
        let k = spec.build().unwrap();
        assert_abs_diff_eq!(k.root_a().unwrap(), 1.0, epsilon = 1e-13);
        assert!(serde_json::from_str::<KernelSpec>(r#"{"kind":"cubic_double_well","x":1}"#)
            .is_err());
    }
}
