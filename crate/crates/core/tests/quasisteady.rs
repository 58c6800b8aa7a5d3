use metaswarm::kernels::Kernel;
use metaswarm::pde::{run_to, Convolution, FluxScheme, Grid, MassTracking, PdeConfig};
use metaswarm::quasisteady::{
    admissible, build_two_spike, center_equation_residual, centered_x1, n_spike_state, solve_spike_centers,
    spike_widths, two_spike_state,
};
use proptest::prelude::*;

proptest! {
    #[test]
    fn widths_scale_linearly(m1 in 0.35f64..0.65, alpha in 0.1f64..10.0) {
        let k = Kernel::cubic();
        let m2 = 1.0 - m1;
        let (c1, c2) = spike_widths(m1, m2, &k).unwrap();
        let (s1, s2) = spike_widths(alpha * m1, alpha * m2, &k).unwrap();
        prop_assert!((s1 - alpha * c1).abs() <= 1e-12 * s1.abs().max(1.0));
        prop_assert!((s2 - alpha * c2).abs() <= 1e-12 * s2.abs().max(1.0));
    }

    #[test]
    fn swapping_masses_swaps_widths(m1 in 0.35f64..0.65) {
        let k = Kernel::cubic();
        let (c1, c2) = spike_widths(m1, 1.0 - m1, &k).unwrap();
        let (d1, d2) = spike_widths(1.0 - m1, m1, &k).unwrap();
        prop_assert_eq!((c1, c2), (d2, d1));
    }

    #[test]
    fn admissibility_is_swap_symmetric(m1 in 0.01f64..5.0, m2 in 0.01f64..5.0) {
        let k = Kernel::cubic();
        prop_assert_eq!(admissible(m1, m2, &k).unwrap(), admissible(m2, m1, &k).unwrap());
    }

    #[test]
    fn n2_newton_agrees_with_closed_widths(m1 in 0.35f64..0.65) {
        let k = Kernel::cubic();
        let s = n_spike_state(&[m1, 1.0 - m1], &k, 0.03).unwrap();
        let (c1, c2) = spike_widths(m1, 1.0 - m1, &k).unwrap();
        prop_assert!(s.centers[0] == 0.0 && (s.centers[1] - 1.0).abs() <= 1e-12);
        prop_assert!((s.widths_c[0] - c1).abs() <= 1e-12 && (s.widths_c[1] - c2).abs() <= 1e-12);
    }
}

#[test]
fn cubic_examples() {
    let k = Kernel::cubic();
    let (c1, c2) = spike_widths(0.4, 0.6, &k).unwrap();
    assert!((c1 - 0.8).abs() < 1e-15 && (c2 - 0.2).abs() < 1e-15);
    assert_eq!(spike_widths(0.5, 0.5, &k).unwrap(), (0.5, 0.5));
    assert!(admissible(0.35, 0.65, &k).unwrap());
    assert!(admissible(0.5, 0.5, &k).unwrap());
    assert!(!admissible(0.3, 0.7, &k).unwrap());
    assert!(admissible(1.0, 1.0, &Kernel::linear()).is_err());
}

#[test]
fn peak_height_and_spike_variance() {
    let k = Kernel::cubic();
    let eps = 0.001f64.sqrt();
    let state = two_spike_state(0.5, 0.5, 0.0, &k, eps).unwrap();
    assert!((state.density(0.0) - 4.4603).abs() < 1e-4, "{}", state.density(0.0));

    let grid = Grid::new(0.0, 3.0, 3000).unwrap();
    let x1 = centered_x1(0.4, 0.6, &k, eps, &grid).unwrap();
    let rho = build_two_spike(0.4, 0.6, x1, &k, eps, &grid).unwrap();
    assert!((rho.total_mass() - 1.0).abs() <= 1e-14);
    let dx = grid.dx();
    let (c1, c2) = spike_widths(0.4, 0.6, &k).unwrap();
    let split = x1 + 0.5;
    let mut left = (0.0, 0.0);
    let mut right = (0.0, 0.0);
    for (x, r) in grid.centers().zip(&rho.values) {
        if x < split {
            left.0 += r * dx;
            left.1 += r * dx * (x - x1).powi(2);
        } else {
            right.0 += r * dx;
            right.1 += r * dx * (x - x1 - 1.0).powi(2);
        }
    }
    assert!((left.0 - 0.4).abs() <= 1e-8 && (right.0 - 0.6).abs() <= 1e-8);
    assert!((left.1 / left.0 - 0.001 / c1).abs() <= 1e-3 * 0.001 / c1);
    assert!((right.1 / right.0 - 0.001 / c2).abs() <= 1e-3 * 0.001 / c2);
}

#[test]
fn truncated_grid_is_rejected() {
    let k = Kernel::cubic();
    let grid = Grid::new(0.0, 1.05, 200).unwrap();
    assert!(matches!(
        build_two_spike(0.4, 0.6, 0.0, &k, 0.05, &grid),
        Err(metaswarm::Error::GridTooSmall { .. })
    ));
}

#[test]
fn three_equal_spikes() {
    let k = Kernel::cubic();
    let s = solve_spike_centers(&[1.0 / 3.0; 3], &k, 0.03).unwrap();
    assert!(center_equation_residual(&s, &k) <= 1e-12);
    assert_eq!(s.centers[0], 0.0);
    // the middle spike sits halfway by symmetry
    assert!((s.centers[1] - 0.5 * s.centers[2]).abs() < 1e-12);
    assert_eq!(s.is_admissible(), n_spike_state(&[1.0 / 3.0; 3], &k, 0.03).is_ok());
}

#[test]
fn two_spike_state_is_quasi_steady() {
    let k = Kernel::cubic();
    let eps2: f64 = 0.001;
    let grid = Grid::new(0.0, 3.0, 600).unwrap();
    // near the edge of the admissible window the exchange is O(1) fast, so
    // quasi-steadiness over 10 time units needs nearly equal masses
    let x1 = centered_x1(0.48, 0.52, &k, eps2.sqrt(), &grid).unwrap();
    let rho = build_two_spike(0.48, 0.52, x1, &k, eps2.sqrt(), &grid).unwrap();
    let cfg = PdeConfig {
        eps2,
        dt: 0.01,
        t_end: 10.0,
        output_times: vec![],
        flux: FluxScheme::ExponentialFitting,
        convolution: Convolution::Direct,
    };
    let run = run_to(&rho, &k, &cfg, MassTracking::Separatrix).unwrap();
    let first = run.trajectory.samples[0];
    let last = *run.trajectory.last().unwrap();
    assert!((last.m1 - first.m1).abs() < 1e-3, "{} -> {}", first.m1, last.m1);
    assert!((last.m2 - first.m2).abs() < 1e-3);
}
