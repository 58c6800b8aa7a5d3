use metaswarm::kernels::Kernel;
use metaswarm::metadyn::find_xhat;
use metaswarm::particles::{
    self, cluster_masses, density_estimate, energy, seeded_rng, step_deterministic, step_stochastic, ForceMethod,
    ParticleEnsemble, ParticleStepper, SdeConfig,
};
use proptest::prelude::*;

fn fig2_start() -> ParticleEnsemble {
    ParticleEnsemble::two_clusters(80, 120, 1.0, 0.05).unwrap()
}

#[test]
fn center_of_mass_is_conserved() {
    let k = Kernel::cubic();
    let mut ens = fig2_start();
    let c0 = ens.mean();
    let mut stepper = ParticleStepper::new(&k, ForceMethod::Direct);
    for _ in 0..10_000 {
        stepper.deterministic(&mut ens, 1e-3).unwrap();
        assert!((ens.mean() - c0).abs() <= 1e-10);
    }
    assert_eq!(ens.n(), 200);
}

#[test]
fn zero_noise_matches_deterministic_bitwise() {
    let k = Kernel::cubic();
    let mut ens = fig2_start();
    let cfg = SdeConfig { sigma: 0.0, dt: 1e-3, steps: 1, seed: 3, force: ForceMethod::Direct };
    let mut rng = seeded_rng(cfg.seed);
    for _ in 0..500 {
        let a = step_deterministic(&ens, &k, cfg.dt).unwrap();
        let b = step_stochastic(&ens, &k, &cfg, &mut rng).unwrap();
        assert_eq!(a.positions, b.positions);
        assert_eq!(a.time, b.time);
        ens = a;
    }
}

#[test]
fn seeded_runs_repeat_exactly() {
    let k = Kernel::cubic();
    let cfg = SdeConfig { sigma: 0.075, dt: 1e-3, steps: 2000, seed: 42, force: ForceMethod::Direct };
    let run = || {
        let mut snaps = Vec::new();
        let last = particles::simulate(&fig2_start(), &k, &cfg, 100, |_, e| {
            snaps.push(e.positions.clone());
            Ok(())
        })
        .unwrap();
        (snaps, last)
    };
    let (a, la) = run();
    let (b, lb) = run();
    assert_eq!(a, b);
    assert_eq!(la, lb);
    assert_eq!(la.n(), 200);
    let other = SdeConfig { seed: 43, ..cfg.clone() };
    let lc = particles::simulate(&fig2_start(), &k, &other, 100, |_, _| Ok(())).unwrap();
    assert_ne!(la.positions, lc.positions);
}

#[test]
fn moment_forces_match_pair_sums() {
    let k = Kernel::cubic();
    let ens = fig2_start();
    let mut a = Vec::new();
    let mut b = Vec::new();
    particles::drift(&ens.positions, &k, ForceMethod::Direct, &mut a);
    particles::drift(&ens.positions, &k, ForceMethod::Moments, &mut b);
    for (x, y) in a.iter().zip(&b) {
        assert!((x - y).abs() < 1e-12);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn energy_does_not_increase(xs in prop::collection::vec(-1.0f64..1.0, 10..40)) {
        let k = Kernel::cubic();
        let p = |r: f64| k.potential(r);
        let mut ens = ParticleEnsemble::new(xs).unwrap();
        let mut stepper = ParticleStepper::new(&k, ForceMethod::Direct);
        let mut e_prev = energy(&ens, p);
        for _ in 0..3000 {
            stepper.deterministic(&mut ens, 1e-3).unwrap();
            let e = energy(&ens, p);
            if (e_prev - e).abs() < 1e-8 {
                break;
            }
            prop_assert!(e <= e_prev, "energy rose from {e_prev} to {e}");
            e_prev = e;
        }
    }
}

#[test]
fn linear_kernel_ensemble_variance_is_eps2() {
    let k = Kernel::linear();
    let sigma = 0.1;
    let eps2 = sigma * sigma / 2.0;
    let n = 200;
    let ens0 = ParticleEnsemble::new(ParticleEnsemble::cluster(0.0, 0.2, n)).unwrap();
    let relax = 10_000u64;
    let cfg = SdeConfig { sigma, dt: 1e-3, steps: relax + 5000, seed: 7, force: ForceMethod::Direct };
    let mut acc = 0.0;
    let mut count = 0usize;
    particles::simulate(&ens0, &k, &cfg, 1, |step, e| {
        if step > relax {
            acc += e.variance();
            count += 1;
        }
        Ok(())
    })
    .unwrap();
    let var = acc / count as f64;
    assert!(count >= 1000);
    assert!((var - eps2).abs() <= 0.1 * eps2, "variance {var} vs eps^2 {eps2}");
}

#[test]
fn hand_checked_steps_and_energies() {
    let lin = Kernel::linear();
    let cub = Kernel::cubic();
    let s = step_deterministic(&ParticleEnsemble::new(vec![-0.5, 0.5]).unwrap(), &lin, 0.1).unwrap();
    assert!((s.positions[0] + 0.45).abs() < 1e-15 && (s.positions[1] - 0.45).abs() < 1e-15);
    let same = ParticleEnsemble::new(vec![0.3; 5]).unwrap();
    assert_eq!(step_deterministic(&same, &cub, 0.5).unwrap().positions, same.positions);
    let rest = ParticleEnsemble::new(vec![0.0, 1.0]).unwrap();
    assert_eq!(step_deterministic(&rest, &cub, 0.7).unwrap().positions, rest.positions);
    assert_eq!(energy(&same, |r| cub.potential(r)), 0.0);
    assert!((energy(&rest, |r| cub.potential(r)) + 0.5).abs() < 1e-15);
}

#[test]
fn uniform_histogram_and_cluster_masses() {
    let x: Vec<f64> = (0..200).map(|i| (i as f64 + 0.5) / 200.0).collect();
    let ens = ParticleEnsemble::new(x).unwrap();
    let h = density_estimate(std::slice::from_ref(&ens), 10, (0.0, 1.0)).unwrap();
    for b in 0..10 {
        assert!((h.bin_mass(b) - 0.1).abs() < 1e-12);
    }
    assert!((h.normalization - 1.0).abs() < 1e-12);
    let one = ParticleEnsemble::new(vec![0.55; 7]).unwrap();
    let h1 = density_estimate(&[one], 10, (0.0, 1.0)).unwrap();
    assert!((h1.bin_mass(5) - 1.0).abs() < 1e-12);
    assert!(matches!(
        density_estimate(std::slice::from_ref(&ens), 10, (2.0, 3.0)),
        Err(metaswarm::Error::EmptyHistogram { .. })
    ));
    assert_eq!(cluster_masses(&ens, 2.0, 1.0), (1.0, 0.0));
}

#[test]
fn separatrix_split_is_self_consistent() {
    let k = Kernel::cubic();
    let ens = fig2_start();
    let (m1, m2) = cluster_masses(&ens, 0.0, 1.0);
    assert_eq!((m1, m2), (0.4, 0.6));
    // spikes sit at xc - M2 a / M and one root further right
    let x1 = ens.mean() - m2;
    let xhat = x1 + find_xhat(m1, m2, &k).unwrap().xhat;
    assert_eq!(cluster_masses(&ens, xhat, 1.0), (m1, m2));
    let (s1, s2, _) = particles::separatrix_masses(&ens, &k, 1.0).unwrap();
    assert_eq!((s1, s2), (0.4, 0.6));
}
