use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use sepam::exclusion::{sample_initial, Configuration};
use sepam::fields::*;
use sepam::lattice::{green_srw, srw_kernel, torus_transition, Torus};

fn simpson(f: impl Fn(f64) -> f64, lo: f64, hi: f64, n: usize) -> f64 {
    let n = n + n % 2;
    let h = (hi - lo) / n as f64;
    let mut s = f(lo) + f(hi);
    for i in 1..n {
        s += if i % 2 == 1 { 4.0 } else { 2.0 } * f(lo + i as f64 * h);
    }
    s * h / 3.0
}

fn one_kappa(d: usize, kappa: f64) -> f64 {
    1.0 + 1.0 / (2.0 * d as f64 * kappa)
}

/// ψ(η,x) = ∫₀ᵀ Σ_z p_{2du·1[κ]}(z,x)(η(z) − ρ) du by Simpson in u.
fn psi_oracle(eta: &Configuration, kappa: f64, t: f64, rho: f64, x: usize) -> f64 {
    let torus = eta.torus;
    let d = torus.d;
    let unit = srw_kernel(d, 1.0).unwrap();
    let ok = one_kappa(d, kappa);
    simpson(
        |u| {
            (0..torus.sites())
                .map(|z| {
                    let dz: Vec<i64> = torus
                        .coords(z)
                        .iter()
                        .zip(torus.coords(x))
                        .map(|(a, b)| a - b)
                        .collect();
                    torus_transition(&unit, &torus, 2.0 * d as f64 * u * ok, &dz)
                        * (eta.get(z) as f64 - rho)
                })
                .sum()
        },
        0.0,
        t,
        800,
    )
}

#[test]
fn psi_matches_quadrature_on_torus() {
    let torus = Torus::new(1, 8).unwrap();
    let eta = Configuration::new(torus, vec![1, 1, 0, 1, 0, 0, 0, 1]).unwrap();
    let spec = PsiSpec::new(1, 0.7, 2.0, 0.4, PsiGeometry::Torus(torus)).unwrap();
    let ev = PsiEvaluator::new(&spec);
    for x in [0usize, 3, 6] {
        let a = ev.psi(&eta, &torus.coords(x));
        let b = psi_oracle(&eta, 0.7, 2.0, 0.4, x);
        assert!((a - b).abs() < 1e-9, "x={x}: {a} vs {b}");
    }
}

#[test]
fn lattice_window_agrees_with_torus() {
    // a torus wider than the window sees no wrap-around
    let d = 2;
    let (kappa, t) = (1.0, 1.0);
    let r = PsiSpec::default_radius(d, t, kappa);
    let torus = Torus::new(d, 2 * r + 4).unwrap();
    let eta = sample_initial(torus, 0.5, 9).unwrap();
    let lat = PsiEvaluator::new(
        &PsiSpec::new(d, kappa, t, 0.5, PsiGeometry::Lattice { radius: r }).unwrap(),
    );
    let tor =
        PsiEvaluator::new(&PsiSpec::new(d, kappa, t, 0.5, PsiGeometry::Torus(torus)).unwrap());
    assert!(lat.window_ok(&eta));
    for x in [vec![0, 0], vec![3, 5]] {
        assert!((lat.psi(&eta, &x) - tor.psi(&eta, &x)).abs() < 1e-8);
    }
}

#[test]
fn psi_constant_configurations() {
    let torus = Torus::new(2, 6).unwrap();
    for (fill, expect) in [(1u8, 0.7 * 1.5), (0u8, -0.3 * 1.5)] {
        let eta = Configuration::filled(torus, fill);
        let spec = PsiSpec::new(2, 2.0, 1.5, 0.3, PsiGeometry::Torus(torus)).unwrap();
        let v = psi_field(&eta, &spec, &[vec![0, 0], vec![2, 3]]).unwrap();
        for x in v.values {
            assert!((x - expect).abs() < 1e-12, "{x} vs {expect}");
        }
    }
    let spec0 = PsiSpec::new(2, 2.0, 0.0, 0.3, PsiGeometry::Torus(torus)).unwrap();
    let eta = sample_initial(torus, 0.3, 4).unwrap();
    assert_eq!(
        psi_field(&eta, &spec0, &[vec![1, 1]]).unwrap().values[0],
        0.0
    );
}

#[test]
fn swap_delta_is_difference() {
    let torus = Torus::new(1, 10).unwrap();
    let spec = PsiSpec::new(1, 1.0, 2.0, 0.5, PsiGeometry::Torus(torus)).unwrap();
    let ev = PsiEvaluator::new(&spec);
    let eta = Configuration::new(torus, vec![1, 0, 0, 1, 1, 0, 1, 0, 0, 0]).unwrap();
    for (a, b) in [(0usize, 1usize), (3, 4), (6, 7)] {
        let mut swapped = eta.clone();
        swapped.swap(a, b);
        let x = [2i64];
        let direct = ev.psi(&swapped, &x) - ev.psi(&eta, &x);
        let delta = ev.swap_delta(&eta, &[a as i64], &[b as i64], &x);
        assert!((direct - delta).abs() < 1e-12);
    }
    assert_eq!(ev.swap_delta(&eta, &[3], &[4], &[0]), 0.0);
}

#[test]
fn psi_bounds_hold() {
    let d = 3;
    let (kappa, t) = (2.0, 2.0);
    let r = PsiSpec::default_radius(d, t, kappa);
    let spec = PsiSpec::new(d, kappa, t, 0.5, PsiGeometry::Lattice { radius: r }).unwrap();
    let torus = Torus::new(d, 2 * r + 2).unwrap();
    let etas: Vec<Configuration> = (0..3)
        .map(|s| sample_initial(torus, 0.5, s).unwrap())
        .collect();
    let pairs = vec![
        (vec![0, 0, 0], vec![1, 0, 0]),
        (vec![0, 0, 0], vec![3, 2, 1]),
    ];
    let rep = psi_bounds_check(&spec, &etas, &pairs, &[vec![0, 0, 0]], 1e-10).unwrap();
    assert!(rep.pass, "{rep:?}");
    assert!((rep.bound_swap_difference - 2.0 * green_srw(3).unwrap()).abs() < 1e-15);
}

#[test]
fn chi_profile_mass_and_torus() {
    let prof = chi_profile(1, 1.0, 2.0, 40);
    let total: f64 = prof.values.iter().sum();
    assert!((total + prof.tail_mass - 2.0).abs() < 1e-12);
    assert!(prof.tail_mass < 1e-12);
    let torus = Torus::new(1, 6).unwrap();
    let ct = chi_torus(&torus, 1.0, 2.0);
    assert!((ct.iter().sum::<f64>() - 2.0).abs() < 1e-12);
    // symmetric in z
    assert!((ct[1] - ct[5]).abs() < 1e-14);
}

#[test]
fn k_diag_limits() {
    let t = 1.5;
    let big = k_diag_closed_form(3, 1e6, t);
    let lim = k_diag_large_kappa_limit(3, t);
    assert!((big - lim).abs() < 1e-4 * lim);
    // Σ_z K_diag(z) equals its closed form
    let kk = k_kernels(3, 1.0, t, PsiSpec::default_radius(3, t, 1.0));
    assert!(kk.window_ok);
    let closed = k_diag_closed_form(3, 1.0, t);
    assert!((kk.k_diag_norm1() - closed).abs() < 1e-6 * closed);
    // K_diag(0) from χ by Simpson in u
    let unit = srw_kernel(3, 1.0).unwrap();
    let ok = one_kappa(3, 1.0);
    let chi = |z: &[i64]| {
        simpson(
            |u| sepam::lattice::transition_prob(&unit, 6.0 * u * ok, z).unwrap(),
            0.0,
            t,
            600,
        )
    };
    let oracle = 6.0 * (chi(&[1, 0, 0]) - chi(&[0, 0, 0])).powi(2);
    let at0 = kk.k_diag.values[kk
        .k_diag
        .sites
        .iter()
        .position(|z| z == &[0, 0, 0])
        .unwrap()];
    assert!((at0 - oracle).abs() < 1e-8 * oracle, "{at0} vs {oracle}");
}

fn dense_solution(domain: &Domain, c: &[f64], t: f64) -> DVector<f64> {
    let graph = SiteGraph::new(domain, &srw_kernel(domain.d(), 1.0).unwrap()).unwrap();
    let q = graph.generator.to_dense();
    let n = c.len();
    let a = q + DMatrix::from_diagonal(&DVector::from_column_slice(c));
    (a * t).exp() * DVector::from_element(n, 1.0)
}

#[test]
fn cauchy_matches_dense_exponential() {
    let domain = Domain::Box {
        lo: vec![-3, -3],
        hi: vec![3, 3],
    };
    let c = CauchyProblem::indicator(&domain, &[vec![0, 0], vec![1, 0]], 0.6).unwrap();
    let problem = CauchyProblem::new(
        domain.clone(),
        srw_kernel(2, 1.0).unwrap(),
        Source::Static(c.clone()),
        2.0,
    )
    .unwrap();
    let oracle = dense_solution(&domain, &c, 2.0);
    for mode in [
        CauchyMode::Series { tol: 1e-13 },
        CauchyMode::Stepping { tol: 1e-11 },
    ] {
        let sol = solve_cauchy(&problem, &[], &[2.0], &mode).unwrap();
        let v = &sol.full_v.unwrap()[0];
        let err = v
            .iter()
            .zip(oracle.iter())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        assert!(err < 1e-9, "{mode:?}: {err}");
    }
}

#[test]
fn cauchy_trivial_cases() {
    let torus = Torus::new(2, 4).unwrap();
    let domain = Domain::Torus(torus);
    let zero = CauchyProblem::new(
        domain.clone(),
        srw_kernel(2, 1.0).unwrap(),
        Source::Static(vec![0.0; 16]),
        3.0,
    )
    .unwrap();
    let sol = solve_cauchy(
        &zero,
        &[0, 5],
        &[0.0, 1.0, 3.0],
        &CauchyMode::Series { tol: 1e-14 },
    )
    .unwrap();
    assert!(sol.v.iter().flatten().all(|x| (x - 1.0).abs() < 1e-14));
    // constant source on a torus: v = e^{ct}
    let flat = CauchyProblem::new(
        domain,
        srw_kernel(2, 1.0).unwrap(),
        Source::Static(vec![0.3; 16]),
        3.0,
    )
    .unwrap();
    let sol = solve_cauchy(&flat, &[7], &[1.0, 3.0], &CauchyMode::Series { tol: 1e-14 }).unwrap();
    assert!((sol.v[0][0] - 0.3f64.exp()).abs() < 1e-12);
    assert!((sol.v[1][0] - 0.9f64.exp()).abs() < 1e-12);
    assert!(sol.mass_residuals().unwrap().iter().all(|r| r.abs() < 1e-9));
    assert!(solve_cauchy(&flat, &[16], &[1.0], &CauchyMode::Series { tol: 1e-14 }).is_err());
    assert!(solve_cauchy(&flat, &[0], &[4.0], &CauchyMode::Series { tol: 1e-14 }).is_err());
    assert!(solve_cauchy(&flat, &[0], &[2.0, 1.0], &CauchyMode::Series { tol: 1e-14 }).is_err());
}

#[test]
fn positive_source_monotone_in_time() {
    let domain = Domain::Box {
        lo: vec![-5],
        hi: vec![5],
    };
    let c = CauchyProblem::indicator(&domain, &[vec![0]], 0.4).unwrap();
    let problem =
        CauchyProblem::new(domain, srw_kernel(1, 1.0).unwrap(), Source::Static(c), 4.0).unwrap();
    let times = [0.5, 1.0, 2.0, 4.0];
    let sol = solve_cauchy(&problem, &[5], &times, &CauchyMode::Series { tol: 1e-14 }).unwrap();
    assert!(sol.v.windows(2).all(|w| w[1][0] > w[0][0]));
    let mc = solve_cauchy(
        &problem,
        &[5],
        &[2.0],
        &CauchyMode::MonteCarlo { n: 20_000, seed: 3 },
    )
    .unwrap();
    assert!((mc.v[0][0] - sol.v[2][0]).abs() <= 4.0 * mc.stderr[0][0]);
}

#[test]
fn moving_source_pieces() {
    let domain = Domain::Box {
        lo: vec![-4],
        hi: vec![4],
    };
    let src =
        moving_point_source(&domain, &[(0.0, vec![0]), (1.0, vec![1])], 2.0, 0.5, 0.3).unwrap();
    match &src {
        Source::Piecewise { starts, values } => {
            assert_eq!(starts, &vec![0.0, 1.0]);
            // s ∈ [0,1) sees the path position at X-time ∈ (1, 2]: site 1
            let i1 = domain.index(&[1]).unwrap();
            let i0 = domain.index(&[0]).unwrap();
            assert!(values[0][i1] > values[0][i0]);
            assert!(values[1][i0] > values[1][i1]);
        }
        _ => panic!("expected a piecewise source"),
    }
    assert!(source_sign_uniform(&src));
    assert!(source_sup(&src) <= 0.5);
    assert!(moving_point_source(&domain, &[(0.5, vec![0])], 2.0, 0.5, 0.3).is_err());
}

#[test]
fn green_contraction_cases() {
    let domain = Domain::Box {
        lo: vec![-3, -3, -3],
        hi: vec![3, 3, 3],
    };
    let kernel = srw_kernel(3, 1.0).unwrap();
    let zero = CauchyProblem::new(
        domain.clone(),
        kernel.clone(),
        Source::Static(vec![0.0; domain.len()]),
        1.0,
    )
    .unwrap();
    assert_eq!(green_contraction(&zero).unwrap().norm, 0.0);
    let beta = 0.2;
    let point = CauchyProblem::indicator(&domain, &[vec![0, 0, 0]], beta).unwrap();
    let p = CauchyProblem::new(domain.clone(), kernel.clone(), Source::Static(point), 1.0).unwrap();
    let c = green_contraction(&p).unwrap();
    assert!(
        (c.norm - beta * green_srw(3).unwrap()).abs() < 1e-10,
        "{}",
        c.norm
    );
    assert_eq!(c.argmax, vec![0, 0, 0]);
    assert!(c.certificate.is_some());
    // fixed total mass spread over growing cubes lowers the sup
    let mut prev = c.norm;
    for r in 1..=2i64 {
        let cube: Vec<Vec<i64>> = (-r..=r)
            .flat_map(|a| (-r..=r).flat_map(move |b| (-r..=r).map(move |c| vec![a, b, c])))
            .collect();
        let amp = beta / cube.len() as f64;
        let src = CauchyProblem::indicator(&domain, &cube, amp).unwrap();
        let pr =
            CauchyProblem::new(domain.clone(), kernel.clone(), Source::Static(src), 1.0).unwrap();
        let n = green_contraction(&pr).unwrap().norm;
        assert!(n < prev);
        prev = n;
    }
    let torus = CauchyProblem::new(
        Domain::Torus(Torus::new(3, 4).unwrap()),
        kernel,
        Source::Static(vec![0.1; 64]),
        1.0,
    )
    .unwrap();
    assert!(green_contraction(&torus).is_err());
}

#[test]
fn halfspace_domain_validation() {
    assert!(CauchyProblem::new(
        Domain::HalfSpace {
            lo: vec![0, -2],
            hi: vec![4, 2]
        },
        srw_kernel(2, 1.0).unwrap(),
        Source::Static(vec![0.0; 25]),
        1.0
    )
    .is_err());
    let ok = Domain::HalfSpace {
        lo: vec![1, -2],
        hi: vec![4, 2],
    };
    assert_eq!(ok.len(), 20);
    assert_eq!(ok.index(&ok.coords(13)), Some(13));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn psi_range(seed in 0u64..1000, t in 0.1f64..3.0, rho in 0.1f64..0.9) {
        let torus = Torus::new(1, 12).unwrap();
        let eta = sample_initial(torus, rho, seed).unwrap();
        let spec = PsiSpec::new(1, 1.0, t, rho, PsiGeometry::Torus(torus)).unwrap();
        let ev = PsiEvaluator::new(&spec);
        for x in 0..12i64 {
            let v = ev.psi(&eta, &[x]);
            prop_assert!(v >= -rho * t - 1e-12 && v <= (1.0 - rho) * t + 1e-12);
        }
    }
}
