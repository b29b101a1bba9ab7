use proptest::prelude::*;
use sepam::exclusion::*;
use sepam::lattice::{srw_kernel, torus_transition, Torus};
use sepam::montecarlo::mean_occupation;
use sepam::rng::stream;

fn t1(l: usize) -> Torus {
    Torus::new(1, l).unwrap()
}

#[test]
fn sample_initial_rejects_degenerate_density() {
    assert!(sample_initial(t1(8), 0.0, 1).is_err());
    assert!(sample_initial(t1(8), 1.0, 1).is_err());
    assert!(sample_initial(t1(8), f64::NAN, 1).is_err());
}

#[test]
fn sample_initial_is_deterministic() {
    let a = sample_initial(Torus::new(2, 8).unwrap(), 0.4, 77).unwrap();
    let b = sample_initial(Torus::new(2, 8).unwrap(), 0.4, 77).unwrap();
    assert_eq!(a, b);
    assert_ne!(
        a,
        sample_initial(Torus::new(2, 8).unwrap(), 0.4, 78).unwrap()
    );
}

#[test]
fn sample_initial_density() {
    let n = 10_000;
    let ones: usize = (0..n)
        .map(|s| sample_initial(t1(16), 0.5, s).unwrap().count())
        .sum();
    let total = (16 * n) as f64;
    let mean = ones as f64 / total;
    let sd = (0.25 / total).sqrt();
    assert!((mean - 0.5).abs() <= 4.0 * sd, "{mean}");
}

#[test]
fn empty_schedule_at_zero_horizon() {
    let s = build_schedule(&t1(8), &srw_kernel(1, 1.0).unwrap(), 0.0, 1).unwrap();
    assert!(s.events.is_empty());
    assert!(build_schedule(&t1(8), &srw_kernel(1, 1.0).unwrap(), -1.0, 1).is_err());
}

#[test]
fn bond_rates_follow_kernel() {
    let torus = Torus::new(2, 4).unwrap();
    let bonds = torus_bonds(&torus, &srw_kernel(2, 4.0).unwrap()).unwrap();
    assert_eq!(bonds.len(), 2 * 16);
    assert!(bonds.iter().all(|b| (b.rate - 1.0).abs() < 1e-15));
    // L = 2: the ±e offsets land on the same neighbour, so the bond carries both
    let b2 = torus_bonds(&t1(2), &srw_kernel(1, 1.0).unwrap()).unwrap();
    assert_eq!(b2.len(), 1);
    assert!((b2[0].rate - 1.0).abs() < 1e-15);
}

#[test]
fn poisson_link_statistics() {
    let torus = t1(8);
    let kernel = srw_kernel(1, 1.0).unwrap();
    let horizon = 10.0;
    let runs = 500;
    let mut counts = 0usize;
    let mut bins = [0usize; 10];
    for seed in 0..runs {
        let s = build_schedule(&torus, &kernel, horizon, seed).unwrap();
        counts += s.events.len();
        for e in &s.events {
            bins[((e.time / horizon * 10.0) as usize).min(9)] += 1;
        }
        assert!(s.events.windows(2).all(|w| w[0].time < w[1].time));
    }
    // each of the 8 bonds has rate 1/2
    let per_bond = counts as f64 / (runs as f64 * 8.0);
    let sd = (5.0 / (runs as f64 * 8.0)).sqrt();
    assert!((per_bond - 5.0).abs() <= 4.0 * sd, "{per_bond}");
    // total ≈ horizon · L · (rate/2) · Σ weights
    let per_run = counts as f64 / runs as f64;
    assert!((per_run - 40.0).abs() <= 4.0 * (40.0 / runs as f64).sqrt());
    let expected = counts as f64 / 10.0;
    let chi2: f64 = bins
        .iter()
        .map(|b| (*b as f64 - expected).powi(2) / expected)
        .sum();
    assert!(chi2 < 21.67, "χ² = {chi2}");
}

fn single_event(a: usize, b: usize, time: f64, horizon: f64) -> LinkSchedule {
    LinkSchedule {
        horizon,
        bonds: vec![Bond { a, b, rate: 1.0 }],
        events: vec![LinkEvent { time, bond: 0 }],
    }
}

#[test]
fn evolve_applies_swaps() {
    let torus = t1(4);
    let eta = Configuration::new(torus, vec![1, 0, 0, 0]).unwrap();
    let traj = Trajectory::new(eta.clone(), single_event(0, 1, 0.5, 1.0));
    assert_eq!(evolve(&traj, 0.4).unwrap(), eta);
    assert_eq!(evolve(&traj, 0.5).unwrap().bits, vec![0, 1, 0, 0]);
    assert_eq!(evolve(&traj, 1.0).unwrap().bits, vec![0, 1, 0, 0]);
    assert!(evolve(&traj, 1.5).is_err());
    let t = traj.clone().with_checkpoints(&[0.25, 0.75]).unwrap();
    assert_eq!(
        t.checkpoint_records(),
        "time\tstate\n0.25\t1000\n0.75\t0100\n"
    );
    assert!((occupation_time(&traj, 0, 1.0).unwrap() - 0.5).abs() < 1e-15);
    assert!((occupation_time(&traj, 1, 1.0).unwrap() - 0.5).abs() < 1e-15);
}

#[test]
fn constant_configurations() {
    let torus = t1(6);
    let kernel = srw_kernel(1, 1.0).unwrap();
    let s = build_schedule(&torus, &kernel, 7.0, 3).unwrap();
    assert!(!s.events.is_empty());
    let full = Trajectory::new(Configuration::filled(torus, 1), s.clone());
    let empty = Trajectory::new(Configuration::filled(torus, 0), s);
    for t in [0.0, 2.5, 7.0] {
        assert_eq!(full.evolve(t).unwrap(), Configuration::filled(torus, 1));
        assert!((full.occupation_time(2, t).unwrap() - t).abs() < 1e-12);
        assert_eq!(empty.occupation_time(2, t).unwrap(), 0.0);
    }
}

#[test]
fn occupation_fraction_is_rho() {
    let torus = t1(6);
    let kernel = srw_kernel(1, 1.0).unwrap();
    let n = 10_000;
    let x: Vec<f64> = (0..n)
        .map(|i| {
            let mut rng = stream(21, i);
            let eta = sample_initial_with(torus, 0.5, &mut rng);
            let s = build_schedule(&torus, &kernel, 5.0, 1000 + i).unwrap();
            Trajectory::new(eta, s).occupation_time(0, 5.0).unwrap() / 5.0
        })
        .collect();
    let m = x.iter().sum::<f64>() / n as f64;
    let sd = (x.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (n as f64 - 1.0) / n as f64).sqrt();
    assert!((m - 0.5).abs() <= 4.0 * sd, "{m} ± {sd}");
}

#[test]
fn stationarity_and_exchangeability() {
    let torus = t1(8);
    let kernel = srw_kernel(1, 1.0).unwrap();
    let n = 20_000u64;
    let (mut ones, mut up, mut down) = (0usize, 0usize, 0usize);
    for i in 0..n {
        let mut rng = stream(22, i);
        let eta = sample_initial_with(torus, 0.3, &mut rng);
        let traj = Trajectory::new(
            eta.clone(),
            build_schedule(&torus, &kernel, 1.5, 5000 + i).unwrap(),
        );
        let end = traj.evolve(1.5).unwrap();
        ones += end.get(3) as usize;
        match (eta.get(3), end.get(3)) {
            (1, 0) => down += 1,
            (0, 1) => up += 1,
            _ => {}
        }
    }
    let p = ones as f64 / n as f64;
    assert!((p - 0.3).abs() <= 4.0 * (0.21 / n as f64).sqrt());
    let diff = up as f64 - down as f64;
    assert!(
        diff.abs() <= 4.0 * ((up + down) as f64).sqrt(),
        "{up} vs {down}"
    );
}

#[test]
fn graphical_mean_field_identity() {
    let torus = t1(10);
    let kernel = srw_kernel(1, 1.0).unwrap();
    let eta = Configuration::new(torus, vec![1, 1, 0, 0, 1, 0, 0, 0, 1, 0]).unwrap();
    let n = 20_000u64;
    for (y, t) in [(2usize, 0.7), (6, 2.0)] {
        let exact: f64 = (0..10)
            .map(|x| {
                eta.get(x) as f64 * torus_transition(&kernel, &torus, t, &[y as i64 - x as i64])
            })
            .sum();
        // forward oracle: evolve independent schedules
        let xs: Vec<f64> = (0..n)
            .map(|i| {
                let traj = Trajectory::new(
                    eta.clone(),
                    build_schedule(&torus, &kernel, t, 9000 + i).unwrap(),
                );
                traj.evolve(t).unwrap().get(y) as f64
            })
            .collect();
        let m = xs.iter().sum::<f64>() / n as f64;
        let sd = (m * (1.0 - m) / n as f64).sqrt();
        assert!((m - exact).abs() <= 4.0 * sd, "forward {m} vs {exact}");
        let dual = mean_occupation(&torus, &kernel, &eta, y, t, 20_000, 4).unwrap();
        assert!(
            (dual.mean - exact).abs() <= 4.0 * dual.stderr,
            "dual {} vs {exact}",
            dual.mean
        );
    }
}

proptest! {
    #[test]
    fn particle_count_conserved(seed in 0u64..1000, rho in 0.1f64..0.9, horizon in 0.0f64..6.0) {
        let torus = Torus::new(2, 4).unwrap();
        let kernel = srw_kernel(2, 1.0).unwrap();
        let eta = sample_initial(torus, rho, seed).unwrap();
        let traj = Trajectory::new(eta.clone(), build_schedule(&torus, &kernel, horizon, seed).unwrap());
        for k in 0..=4 {
            let t = horizon * k as f64 / 4.0;
            prop_assert_eq!(traj.evolve(t).unwrap().count(), eta.count());
        }
        let total: f64 = (0..16).map(|s| traj.occupation_time(s, horizon).unwrap()).sum();
        prop_assert!((total - eta.count() as f64 * horizon).abs() < 1e-9);
    }
}
