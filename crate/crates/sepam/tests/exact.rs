use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use sepam::exact::*;
use sepam::exclusion::Configuration;
use sepam::fields::{PsiEvaluator, PsiGeometry, PsiSpec};
use sepam::lattice::{srw_kernel, Torus};
use sepam::montecarlo::estimate_moment;
use sepam::Error;

fn t1(l: usize) -> Torus {
    Torus::new(1, l).unwrap()
}

/// Exclusion generator from oriented jumps: a particle at x jumps to x+e at
/// rate p(e) when x+e is empty.
fn oriented_se(torus: Torus) -> DMatrix<f64> {
    let n = torus.sites();
    let kernel = srw_kernel(torus.d, 1.0).unwrap();
    let dim = 1usize << n;
    let mut g = DMatrix::zeros(dim, dim);
    for mask in 0..dim {
        for x in 0..n {
            if mask >> x & 1 == 0 {
                continue;
            }
            for (e, w) in &kernel.offsets {
                let y = torus.shift(x, e);
                if mask >> y & 1 == 1 {
                    continue;
                }
                let to = mask & !(1 << x) | (1 << y);
                g[(mask, to)] += w * kernel.rate;
                g[(mask, mask)] -= w * kernel.rate;
            }
        }
    }
    g
}

/// E_{ν_ρ ⊗ δ_0} exp(∫ γΣ_q η(x_q)) by a dense generator on (η, x_1..x_p)
/// built here and nalgebra's matrix exponential.
fn dense_moment(torus: Torus, kappa: f64, p: usize, rho: f64, gamma: f64, t: f64) -> f64 {
    let n = torus.sites();
    let se = oriented_se(torus);
    let walkers = n.pow(p as u32);
    let dim = (1 << n) * walkers;
    let tuple = |w: usize| -> Vec<usize> { (0..p).map(|q| w / n.pow(q as u32) % n).collect() };
    let mut g = DMatrix::zeros(dim, dim);
    for w in 0..walkers {
        let xs = tuple(w);
        for a in 0..(1 << n) {
            let i = w * (1 << n) + a;
            for b in 0..(1 << n) {
                g[(i, w * (1 << n) + b)] += se[(a, b)];
            }
            g[(i, i)] += gamma * xs.iter().map(|x| (a >> x & 1) as f64).sum::<f64>();
            for q in 0..p {
                for s in [-1i64, 1] {
                    let mut ys = xs.clone();
                    ys[q] = torus.shift(xs[q], &[s]);
                    let wy: usize = ys
                        .iter()
                        .enumerate()
                        .map(|(k, y)| y * n.pow(k as u32))
                        .sum();
                    g[(i, wy * (1 << n) + a)] += kappa;
                    g[(i, i)] -= kappa;
                }
            }
        }
    }
    let e = (g * t).exp();
    let ones = DVector::from_element(dim, 1.0);
    let v = e * ones;
    (0..(1usize << n))
        .map(|a| {
            let k = a.count_ones() as i32;
            rho.powi(k) * (1.0 - rho).powi(n as i32 - k) * v[a]
        })
        .sum()
}

#[test]
fn one_bond_generator() {
    let g = build_se_generator(&t1(2), &srw_kernel(1, 1.0).unwrap())
        .unwrap()
        .to_dense();
    // masks 01 and 10 swap at the bond rate; 00 and 11 are absorbing
    assert_eq!(g[(1, 2)], 1.0);
    assert_eq!(g[(2, 1)], 1.0);
    assert_eq!(g[(1, 1)], -1.0);
    assert!(g.row(0).iter().all(|x| *x == 0.0));
    assert!(g.row(3).iter().all(|x| *x == 0.0));
    assert!(Torus::new(1, 1).is_err());
}

#[test]
fn se_generator_matches_oriented_form() {
    for torus in [t1(4), t1(6), Torus::new(2, 2).unwrap()] {
        let kernel = srw_kernel(torus.d, 1.0).unwrap();
        let a = build_se_generator(&torus, &kernel).unwrap().to_dense();
        let b = oriented_se(torus);
        assert!((&a - &b).abs().max() < 1e-14);
        let c = build_se_generator_oriented(&torus, &kernel)
            .unwrap()
            .to_dense();
        assert!((&a - &c).abs().max() < 1e-14);
    }
}

#[test]
fn kappa_zero_keeps_origin_walker() {
    let spec = OperatorSpec::new(t1(6), 0.0, 2, 0.5).unwrap();
    let op = build_joint_generator(&spec).unwrap();
    assert_eq!(op.dim(), 64);
    for i in 0..op.dim() {
        assert_eq!(op.state(i).1, vec![0, 0]);
    }
    // only the catalyst moves: off-diagonal entries equal the SE generator's
    let se = build_se_generator(&spec.torus, &spec.kernel).unwrap();
    for (i, j, v) in op.matrix.triplets() {
        if i != j {
            assert_eq!(v, se.get(i, j));
        }
    }
}

#[test]
fn zero_potential_is_markov() {
    let spec = OperatorSpec::new(t1(4), 0.8, 2, 0.3)
        .unwrap()
        .with_gamma(0.0);
    let op = build_joint_generator(&spec).unwrap();
    assert!(op.matrix.row_sums().iter().all(|s| s.abs() < 1e-12));
    assert!((exact_moment(&spec, 3.0).unwrap() - 1.0).abs() < 1e-12);
}

#[test]
fn weighted_symmetry() {
    let spec = OperatorSpec::new(t1(4), 0.7, 1, 0.5).unwrap();
    let op = build_joint_generator(&spec).unwrap();
    assert!(op.weighted_asymmetry() < 1e-12);
    let nu = op.nu_weights();
    let g = op.matrix.to_dense();
    let dg = DMatrix::from_diagonal(&DVector::from_vec(nu)) * g;
    assert!((&dg - dg.transpose()).abs().max() < 1e-12);
    let spec3 = OperatorSpec::new(t1(4), 0.7, 1, 0.3).unwrap();
    assert!(build_joint_generator(&spec3).unwrap().weighted_asymmetry() < 1e-12);
}

#[test]
fn basis_round_trip() {
    let spec = OperatorSpec::new(t1(4), 1.0, 2, 0.5).unwrap();
    let op = build_joint_generator(&spec).unwrap();
    for i in (0..op.dim()).step_by(7) {
        let (mask, w) = op.state(i);
        assert_eq!(op.index(mask, &w), Some(i));
    }
    let text = op.to_triplet_text();
    assert!(text.lines().count() >= op.matrix.nnz());
}

#[test]
fn moment_matches_dense_oracle() {
    for (l, kappa, p, rho, t) in [
        (4usize, 0.7, 1usize, 0.5, 1.3),
        (4, 0.0, 1, 0.3, 2.0),
        (4, 0.4, 2, 0.6, 0.9),
    ] {
        let spec = OperatorSpec::new(t1(l), kappa, p, rho).unwrap();
        let a = exact_moment(&spec, t).unwrap();
        let b = dense_moment(t1(l), kappa, p, rho, 1.0, t);
        assert!((a - b).abs() / b < 1e-10, "{a} vs {b}");
    }
}

#[test]
fn krylov_path_matches_dense_path() {
    // dim 64·36 > DENSE_LIMIT uses Krylov; compare with the dense oracle at p = 2
    let spec = OperatorSpec::new(t1(6), 0.5, 2, 0.5).unwrap();
    assert!(build_joint_generator(&spec).unwrap().dim() > DENSE_LIMIT);
    let a = exact_moment(&spec, 1.0).unwrap();
    let b = dense_moment(t1(6), 0.5, 2, 0.5, 1.0, 1.0);
    assert!((a - b).abs() / b < 1e-9, "{a} vs {b}");
}

#[test]
fn time_zero_and_constant_catalyst() {
    let spec = OperatorSpec::new(t1(4), 0.5, 2, 0.5).unwrap();
    let m0 = exact_moment(&spec, 0.0).unwrap();
    assert!((m0 - 1.0).abs() < 256.0 * f64::EPSILON, "{m0:e}");
    assert_eq!(exact_lambda_profile(&spec, &[0.0]).unwrap(), vec![None]);
    // full sector: η ≡ 1, moment e^{pγt}
    let full = spec.clone().with_sector(4).unwrap();
    assert!((exact_moment(&full, 1.5).unwrap() - (3.0f64).exp()).abs() < 1e-10);
}

#[test]
fn lambda_between_rho_and_one() {
    let grid = [0.5, 1.0, 2.0, 4.0, 8.0];
    for kappa in [0.0, 0.3, 1.0] {
        for p in 1..=2 {
            let spec = OperatorSpec::new(t1(6), kappa, p, 0.4).unwrap();
            for v in exact_lambda_profile(&spec, &grid).unwrap() {
                let v = v.unwrap();
                assert!(
                    (0.4 - 1e-12..=1.0 + 1e-12).contains(&v),
                    "κ={kappa} p={p}: {v}"
                );
            }
        }
    }
}

#[test]
fn moment_matches_monte_carlo() {
    let spec = OperatorSpec::new(t1(6), 0.5, 1, 0.5).unwrap();
    let ex = exact_moment(&spec, 2.0).unwrap();
    let mc = estimate_moment(&spec, 2.0, 40_000, 17).unwrap();
    assert!(
        (mc.mean - ex).abs() <= 3.0 * mc.stderr,
        "{ex} vs {} ± {}",
        mc.mean,
        mc.stderr
    );
}

#[test]
fn top_eigenvalue_is_slope() {
    let spec = OperatorSpec::new(t1(6), 0.5, 1, 0.5)
        .unwrap()
        .with_sector(3)
        .unwrap();
    let sys = ExactSystem::new(&spec).unwrap();
    let mu = sys.top_eigenvalue();
    assert!((sys.log_moment_slope(300.0).unwrap() - mu).abs() < 1e-6 * (1.0 + mu.abs()));
    let big_t = 300.0;
    let l = sys.lambda(big_t).unwrap().unwrap();
    assert!(l < mu + 1e-12 && l > mu - 0.05);
}

#[test]
fn cap_and_site_limits() {
    let spec = OperatorSpec::new(t1(10), 1.0, 3, 0.5).unwrap();
    assert!(matches!(
        build_joint_generator(&spec),
        Err(Error::CapExceeded { .. })
    ));
    let big = Torus::new(1, 64).unwrap();
    assert!(OperatorSpec::new(big, 1.0, 1, 0.5).is_err());
    assert!(OperatorSpec::new(t1(4), -1.0, 1, 0.5).is_err());
    assert!(OperatorSpec::new(t1(4), 1.0, 1, 1.0).is_err());
}

#[test]
fn sector_weights() {
    let spec = OperatorSpec::new(t1(6), 0.5, 1, 0.5)
        .unwrap()
        .with_sector(2)
        .unwrap();
    let op = build_joint_generator(&spec).unwrap();
    let total: f64 = op.start_vector().iter().sum();
    assert!((total - 1.0).abs() < 1e-14);
    assert!(spec.in_sector(0b11) && !spec.in_sector(0b111));
    assert!(OperatorSpec::new(t1(6), 0.5, 1, 0.5)
        .unwrap()
        .with_sector(7)
        .is_err());
}

#[test]
fn se_functional_against_brute_force() {
    let torus = t1(4);
    let kernel = srw_kernel(1, 1.0).unwrap();
    let k1 = vec![0.5, 0.0, -0.2, 0.0];
    let k2 = vec![0.0, 0.3, 0.0, 0.0];
    let pieces = vec![(0.7, k1.clone()), (0.4, k2.clone())];
    let all = se_exp_functional_all(&torus, &kernel, &pieces).unwrap();
    let se = oriented_se(torus);
    let diag = |k: &[f64]| {
        DMatrix::from_fn(16, 16, |i, j| {
            if i == j {
                (0..4).map(|x| k[x] * (i >> x & 1) as f64).sum()
            } else {
                0.0
            }
        })
    };
    let prop = (&se + diag(&k1)).scale(0.7).exp() * (&se + diag(&k2)).scale(0.4).exp();
    let v = prop * DVector::from_element(16, 1.0);
    for mask in 0..16 {
        assert!((all[mask] - v[mask]).abs() < 1e-12);
        let eta = Configuration::from_mask(torus, mask as u64);
        assert_eq!(se_value_at(&all, &eta), all[mask]);
    }
    let rho: f64 = 0.3;
    let avg: f64 = (0..16)
        .map(|m: usize| {
            rho.powi(m.count_ones() as i32) * (1.0 - rho).powi(4 - m.count_ones() as i32) * v[m]
        })
        .sum();
    assert!((se_exp_functional(&torus, &kernel, rho, &pieces).unwrap() - avg).abs() < 1e-12);
}

fn torus_psi(spec: &OperatorSpec, op: &SparseOperator, big_t: f64) -> Vec<f64> {
    let torus = spec.torus;
    let ps = PsiSpec::new(1, spec.kappa, big_t, spec.rho, PsiGeometry::Torus(torus)).unwrap();
    let ev = PsiEvaluator::new(&ps);
    joint_field(op, |eta, x| ev.psi(eta, &torus.coords(x)))
}

#[test]
fn martingale_identity() {
    let spec = OperatorSpec::new(t1(4), 1.0, 1, 0.5).unwrap();
    let op = build_joint_generator(&spec).unwrap();
    let psi = torus_psi(&spec, &op, 1.0);
    let rep = martingale_check(&spec, &psi, 0.5, 1.0).unwrap();
    assert!(rep.deviation <= 1e-8);
    assert!((rep.mean - 1.0).abs() <= 1e-8);
    let zero = martingale_check(&spec, &psi, 0.0, 1.0).unwrap();
    assert!(zero.deviation <= 1e-14);
    let constant = vec![0.7; op.dim()];
    assert!(
        martingale_check(&spec, &constant, 2.0, 1.0)
            .unwrap()
            .deviation
            <= 1e-12
    );
    assert!(martingale_check(&spec, &psi[1..], 1.0, 1.0).is_err());
    let p2 = OperatorSpec::new(t1(4), 1.0, 2, 0.5).unwrap();
    assert!(martingale_check(&p2, &psi, 1.0, 1.0).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn holder_monotone(t in 0.2f64..6.0, kappa in 0.0f64..2.0, rho in 0.1f64..0.9) {
        let torus = t1(4);
        let mut prev = f64::NEG_INFINITY;
        for p in 1..=3 {
            let spec = OperatorSpec::new(torus, kappa, p, rho).unwrap();
            let v = exact_lambda_profile(&spec, &[t]).unwrap()[0].unwrap();
            prop_assert!(v >= prev - 1e-10);
            prev = v;
        }
    }

    #[test]
    fn martingale_mean_one(r in -2.0f64..2.0, big_t in 0.1f64..3.0, t in 0.1f64..2.0) {
        let spec = OperatorSpec::new(t1(4), 1.0, 1, 0.5).unwrap();
        let op = build_joint_generator(&spec).unwrap();
        let psi = torus_psi(&spec, &op, big_t);
        prop_assert!(martingale_check(&spec, &psi, r, t).unwrap().deviation <= 1e-8);
    }
}
