use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use sepam::exclusion::Configuration;
use sepam::irw::*;
use sepam::lattice::{srw_kernel, torus_transition, Kernel, Torus};
use sepam::rng::stream;

fn t1(l: usize) -> Torus {
    Torus::new(1, l).unwrap()
}

/// E_η exp ∫ Σ_i K(Y_i(s), s) ds on the joint chain of the particles of η,
/// built as an n^k-state generator and stepped through the pieces of K.
fn product_chain(eta: &Configuration, kernel: &Kernel, k: &WeightFunction, t: f64) -> f64 {
    let torus = eta.torus;
    let n = torus.sites();
    let starts: Vec<usize> = (0..n).filter(|x| eta.get(*x) == 1).collect();
    let m = starts.len();
    let dim = n.pow(m as u32);
    let digits = |s: usize| -> Vec<usize> { (0..m).map(|i| s / n.pow(i as u32) % n).collect() };
    let encode = |xs: &[usize]| -> usize {
        xs.iter()
            .enumerate()
            .map(|(i, x)| x * n.pow(i as u32))
            .sum()
    };
    let mut q = DMatrix::<f64>::zeros(dim, dim);
    for s in 0..dim {
        let xs = digits(s);
        for i in 0..m {
            for (e, w) in &kernel.offsets {
                let mut ys = xs.clone();
                ys[i] = torus.shift(xs[i], e);
                q[(s, encode(&ys))] += kernel.rate * w;
                q[(s, s)] -= kernel.rate * w;
            }
        }
    }
    // forward pieces: E exp ∫ = (e^{(Q+V_1)τ_1} e^{(Q+V_2)τ_2} ⋯ 1)(start)
    let mut v = DVector::from_element(dim, 1.0);
    for (dur, kv) in k.pieces(t).iter().rev() {
        let diag = DMatrix::from_fn(dim, dim, |i, j| {
            if i == j {
                digits(i).iter().map(|x| kv[*x]).sum()
            } else {
                0.0
            }
        });
        v = ((&q + diag) * *dur).exp() * v;
    }
    v[encode(&starts)]
}

#[test]
fn product_formula_matches_joint_chain() {
    let torus = t1(6);
    let kernel = srw_kernel(1, 1.0).unwrap();
    let mut k = WeightFunction::indicator(torus, &[0, 2], 0.0, 0.6, 0.8).unwrap();
    k.cells.push((3, 0.3, 1.2, 0.5));
    for bits in [
        vec![1, 0, 0, 0, 0, 0],
        vec![1, 1, 0, 0, 0, 0],
        vec![1, 0, 1, 1, 0, 0],
    ] {
        let eta = Configuration::new(torus, bits).unwrap();
        let a = irw_exp_functional_fixed(&eta, &k, 1.5, &kernel).unwrap();
        let b = product_chain(&eta, &kernel, &k, 1.5);
        assert!((a - b).abs() / b < 1e-8, "{a} vs {b}");
    }
}

#[test]
fn annealed_average_of_product() {
    let torus = t1(4);
    let kernel = srw_kernel(1, 1.0).unwrap();
    let k = WeightFunction::indicator(torus, &[1], 0.0, 2.0, -0.7).unwrap();
    let rho: f64 = 0.35;
    let avg: f64 = (0..16u64)
        .map(|m| {
            let eta = Configuration::from_mask(torus, m);
            let c = m.count_ones() as i32;
            rho.powi(c) * (1.0 - rho).powi(4 - c) * product_chain(&eta, &kernel, &k, 2.0)
        })
        .sum();
    let a = irw_exp_functional(rho, &k, 2.0, &torus, &kernel).unwrap();
    assert!((a - avg).abs() / avg < 1e-8);
}

#[test]
fn zero_weight_gives_one() {
    let torus = Torus::new(2, 4).unwrap();
    let kernel = srw_kernel(2, 1.0).unwrap();
    let k = WeightFunction::zero(torus);
    assert!((irw_exp_functional(0.4, &k, 3.0, &torus, &kernel).unwrap() - 1.0).abs() < 1e-13);
    assert_eq!(k.l1_norm(), 0.0);
    assert!(k.pieces(3.0).len() == 1);
}

#[test]
fn rejects_mixed_signs_and_bad_cells() {
    let torus = t1(6);
    let kernel = srw_kernel(1, 1.0).unwrap();
    let mut k = WeightFunction::indicator(torus, &[0], 0.0, 1.0, 1.0).unwrap();
    k.cells.push((1, 0.0, 1.0, -1.0));
    assert!(!k.sign_uniform());
    assert!(irw_exp_functional(0.5, &k, 1.0, &torus, &kernel).is_err());
    assert!(WeightFunction::indicator(torus, &[6], 0.0, 1.0, 1.0).is_err());
    assert!(WeightFunction::indicator(torus, &[0], 1.0, 0.5, 1.0).is_err());
    let ok = WeightFunction::indicator(torus, &[0], 0.0, 1.0, 1.0).unwrap();
    assert!(irw_exp_functional(1.5, &ok, 1.0, &torus, &kernel).is_err());
}

#[test]
fn weight_pieces_partition_time() {
    let torus = t1(4);
    let mut k = WeightFunction::indicator(torus, &[0], 0.5, 1.5, 2.0).unwrap();
    k.cells.push((1, 1.0, 4.0, 1.0));
    let pieces = k.pieces(3.0);
    let total: f64 = pieces.iter().map(|p| p.0).sum();
    assert!((total - 3.0).abs() < 1e-15);
    assert_eq!(pieces.len(), 4);
    assert_eq!(pieces[1].1, vec![2.0, 0.0, 0.0, 0.0]);
    assert_eq!(pieces[2].1, vec![2.0, 1.0, 0.0, 0.0]);
    assert!((k.l1_norm() - 5.0).abs() < 1e-15);
}

#[test]
fn ensemble_basics() {
    let torus = t1(8);
    let kernel = srw_kernel(1, 1.0).unwrap();
    let mut rng = stream(3, 0);
    let ens = WalkEnsemble::sample(torus, kernel.clone(), vec![0, 0, 5], 4.0, &mut rng).unwrap();
    let c0 = evolve_irw(&ens, 0.0).unwrap();
    assert_eq!(c0[0], 2);
    assert_eq!(c0[5], 1);
    for t in [1.0, 2.5, 4.0] {
        assert_eq!(evolve_irw(&ens, t).unwrap().iter().sum::<u32>(), 3);
    }
    assert!(evolve_irw(&ens, 4.5).is_err());
    assert!(WalkEnsemble::sample(torus, kernel.clone(), vec![8], 1.0, &mut rng).is_err());
    assert!(
        WalkEnsemble::sample(torus, srw_kernel(2, 1.0).unwrap(), vec![0], 1.0, &mut rng).is_err()
    );
}

#[test]
fn walker_marginal_is_heat_kernel() {
    let torus = t1(6);
    let kernel = srw_kernel(1, 1.0).unwrap();
    let n = 20_000u64;
    let t = 1.3;
    let mut hist = [0usize; 6];
    for i in 0..n {
        let mut rng = stream(11, i);
        let ens = WalkEnsemble::sample(torus, kernel.clone(), vec![0], t, &mut rng).unwrap();
        hist[ens.position(0, t)] += 1;
    }
    let mut chi2 = 0.0;
    for (x, h) in hist.iter().enumerate() {
        let p = torus_transition(&kernel, &torus, t, &[x as i64]);
        let e = p * n as f64;
        chi2 += (*h as f64 - e).powi(2) / e;
    }
    // 5 degrees of freedom, 0.1% tail
    assert!(chi2 < 20.52, "χ² = {chi2}");
}

#[test]
fn comparison_margin_nonnegative() {
    let torus = t1(6);
    let kernel = srw_kernel(1, 1.0).unwrap();
    let k = WeightFunction::indicator(torus, &[0, 1], 0.0, 1.0, 0.9).unwrap();
    let rep = compare_se_irw(&torus, &kernel, 0.5, &k, 1.0, 1e-10, None).unwrap();
    assert_eq!(rep.se_method, "exact");
    assert!(!rep.violation);
    assert!(rep.margin >= -1e-10);
    assert!(rep.min_fixed_margin.unwrap() >= -1e-10);
    // one particle: SE and IRW coincide
    let one = Configuration::new(torus, vec![0, 0, 1, 0, 0, 0]).unwrap();
    let (se, irw) = point_functional_se_irw(&one, &kernel, &[(2, 0.3), (3, 1.0)], 0.8).unwrap();
    assert!((se - irw).abs() < 1e-12);
    // large torus without Monte Carlo budget is refused
    let big = t1(16);
    let kb = WeightFunction::indicator(big, &[0], 0.0, 1.0, 0.5).unwrap();
    assert!(compare_se_irw(&big, &kernel, 0.5, &kb, 1.0, 1e-10, None).is_err());
}

#[test]
fn point_functional_zero_tilt() {
    let torus = t1(4);
    let kernel = srw_kernel(1, 1.0).unwrap();
    let eta = Configuration::new(torus, vec![1, 1, 0, 0]).unwrap();
    let (se, irw) = point_functional_se_irw(&eta, &kernel, &[(0, 0.5), (1, 1.5)], 0.0).unwrap();
    assert!((se - 1.0).abs() < 1e-12 && (irw - 1.0).abs() < 1e-12);
    assert!(point_functional_se_irw(&eta, &kernel, &[(4, 0.5)], 1.0).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn irw_dominates_se(rho in 0.1f64..0.9, a in 0.0f64..1.5, t in 0.2f64..2.0, site in 0usize..6) {
        let torus = t1(6);
        let kernel = srw_kernel(1, 1.0).unwrap();
        let k = WeightFunction::indicator(torus, &[site, (site + 2) % 6], 0.0, t, a).unwrap();
        let rep = compare_se_irw(&torus, &kernel, rho, &k, t, 1e-10, None).unwrap();
        prop_assert!(!rep.violation, "margin {}", rep.margin);
    }
}
