//! Symmetric Lanczos: matrix-exponential action with step control and the top
//! eigenpair.

use crate::error::{Error, Result};
use nalgebra::{DMatrix, SymmetricEigen};

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Lanczos basis and tridiagonal coefficients for `op` started at `v`.
struct Lanczos {
    basis: Vec<Vec<f64>>,
    alpha: Vec<f64>,
    beta: Vec<f64>,
    /// Residual coupling β_m after the last vector (0 on breakdown).
    beta_last: f64,
}

fn lanczos(op: &dyn Fn(&[f64], &mut [f64]), v: &[f64], m: usize) -> Lanczos {
    let n = v.len();
    let b0 = norm(v);
    let mut basis = vec![v.iter().map(|x| x / b0).collect::<Vec<_>>()];
    let mut alpha = Vec::new();
    let mut beta = Vec::new();
    let mut w = vec![0.0; n];
    let mut beta_last = 0.0;
    for j in 0..m.min(n) {
        op(&basis[j], &mut w);
        let a = dot(&basis[j], &w);
        alpha.push(a);
        for q in basis.iter() {
            let c = dot(q, &w);
            for (wi, qi) in w.iter_mut().zip(q) {
                *wi -= c * qi;
            }
        }
        for q in basis.iter() {
            let c = dot(q, &w);
            for (wi, qi) in w.iter_mut().zip(q) {
                *wi -= c * qi;
            }
        }
        let b = norm(&w);
        let scale = alpha.iter().map(|x| x.abs()).fold(1e-300, f64::max);
        if b <= 1e-13 * scale || j + 1 == n {
            beta_last = 0.0;
            break;
        }
        if j + 1 == m {
            beta_last = b;
            break;
        }
        beta.push(b);
        basis.push(w.iter().map(|x| x / b).collect());
    }
    Lanczos {
        basis,
        alpha,
        beta,
        beta_last,
    }
}

fn tridiag_eigen(alpha: &[f64], beta: &[f64]) -> SymmetricEigen<f64, nalgebra::Dyn> {
    let k = alpha.len();
    let mut t = DMatrix::zeros(k, k);
    for i in 0..k {
        t[(i, i)] = alpha[i];
        if i + 1 < k {
            t[(i, i + 1)] = beta[i];
            t[(i + 1, i)] = beta[i];
        }
    }
    SymmetricEigen::new(t)
}

/// One Lanczos step: returns (e^{τA}v, ∫₀^τ e^{sA}v ds, error estimate).
fn lanczos_step(
    op: &dyn Fn(&[f64], &mut [f64]),
    v: &[f64],
    tau: f64,
    m: usize,
) -> (Vec<f64>, Vec<f64>, f64) {
    let n = v.len();
    let b0 = norm(v);
    if b0 == 0.0 {
        return (vec![0.0; n], vec![0.0; n], 0.0);
    }
    let lz = lanczos(op, v, m);
    let k = lz.alpha.len();
    let eig = tridiag_eigen(&lz.alpha, &lz.beta);
    let s = &eig.eigenvectors;
    let mut ce = vec![0.0; k];
    let mut cp = vec![0.0; k];
    for i in 0..k {
        let th = eig.eigenvalues[i];
        let s0 = s[(0, i)];
        let phi = if (th * tau).abs() < 1e-12 {
            tau * (1.0 + 0.5 * th * tau)
        } else {
            (th * tau).exp_m1() / th
        };
        for r in 0..k {
            ce[r] += s[(r, i)] * (th * tau).exp() * s0;
            cp[r] += s[(r, i)] * phi * s0;
        }
    }
    let mut e = vec![0.0; n];
    let mut p = vec![0.0; n];
    for (r, q) in lz.basis.iter().enumerate().take(k) {
        for j in 0..n {
            e[j] += b0 * ce[r] * q[j];
            p[j] += b0 * cp[r] * q[j];
        }
    }
    let err = b0 * lz.beta_last * cp[k - 1].abs();
    (e, p, err)
}

/// Result of a step-controlled exponential action.
#[derive(Debug, Clone)]
pub struct ExpvResult {
    /// e^{tA}v divided by e^{log_scale}.
    pub w: Vec<f64>,
    pub log_scale: f64,
    pub steps: usize,
}

/// e^{tA}v for symmetric A given through `op`, renormalizing after each step.
pub fn expv_sym(
    op: &dyn Fn(&[f64], &mut [f64]),
    v: &[f64],
    t: f64,
    tol: f64,
    m: usize,
) -> Result<ExpvResult> {
    let mut w = v.to_vec();
    let mut log_scale = 0.0;
    let n0 = norm(&w);
    if n0 == 0.0 || t == 0.0 {
        return Ok(ExpvResult {
            w,
            log_scale,
            steps: 0,
        });
    }
    for x in w.iter_mut() {
        *x /= n0;
    }
    log_scale += n0.ln();
    let mut done = 0.0;
    let mut tau = t;
    let mut steps = 0;
    while done < t {
        let step = tau.min(t - done);
        let (e, _, err) = lanczos_step(op, &w, step, m);
        let ne = norm(&e);
        if err > tol * ne {
            tau = step * 0.5;
            if tau < t * 1e-14 {
                return Err(Error::NoConvergence("Krylov step size underflow".into()));
            }
            continue;
        }
        w = e.iter().map(|x| x / ne).collect();
        log_scale += ne.ln();
        done += step;
        steps += 1;
        if err < 0.01 * tol * ne {
            tau = step * 1.5;
        }
    }
    Ok(ExpvResult {
        w,
        log_scale,
        steps,
    })
}

/// e^{τA}v and ∫₀^τ e^{sA}v ds (no rescaling) with step control.
pub fn expv_phi_sym(
    op: &dyn Fn(&[f64], &mut [f64]),
    v: &[f64],
    t: f64,
    tol: f64,
    m: usize,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let n = v.len();
    let mut w = v.to_vec();
    let mut integral = vec![0.0; n];
    let mut done = 0.0;
    let mut tau = t;
    while done < t {
        let step = tau.min(t - done);
        let (e, p, err) = lanczos_step(op, &w, step, m);
        let ne = norm(&e).max(1e-300);
        if err > tol * ne {
            tau = step * 0.5;
            if tau < t * 1e-14 {
                return Err(Error::NoConvergence("Krylov step size underflow".into()));
            }
            continue;
        }
        for (a, b) in integral.iter_mut().zip(&p) {
            *a += b;
        }
        w = e;
        done += step;
        if err < 0.01 * tol * ne {
            tau = step * 1.5;
        }
    }
    Ok((w, integral))
}

/// Top eigenpair of a symmetric operator.
#[derive(Debug, Clone)]
pub struct TopEigen {
    pub value: f64,
    pub vector: Vec<f64>,
    pub residual: f64,
    pub converged: bool,
    pub restarts: usize,
}

/// Largest eigenvalue by restarted Lanczos with full reorthogonalization.
pub fn lanczos_top(
    op: &dyn Fn(&[f64], &mut [f64]),
    v0: &[f64],
    tol: f64,
    m: usize,
    max_restarts: usize,
) -> TopEigen {
    let n = v0.len();
    let mut v = v0.to_vec();
    let mut best = TopEigen {
        value: f64::NAN,
        vector: v.clone(),
        residual: f64::INFINITY,
        converged: false,
        restarts: 0,
    };
    let mut ax = vec![0.0; n];
    for restart in 0..=max_restarts {
        let lz = lanczos(op, &v, m);
        let k = lz.alpha.len();
        let eig = tridiag_eigen(&lz.alpha, &lz.beta);
        let (imax, &theta) = eig
            .eigenvalues
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(b.1))
            .unwrap();
        let mut x = vec![0.0; n];
        for (r, q) in lz.basis.iter().enumerate().take(k) {
            let c = eig.eigenvectors[(r, imax)];
            for j in 0..n {
                x[j] += c * q[j];
            }
        }
        let nx = norm(&x);
        for xi in x.iter_mut() {
            *xi /= nx;
        }
        op(&x, &mut ax);
        let res = ax
            .iter()
            .zip(&x)
            .map(|(a, b)| (a - theta * b).powi(2))
            .sum::<f64>()
            .sqrt();
        best = TopEigen {
            value: theta,
            vector: x.clone(),
            residual: res,
            converged: res <= tol,
            restarts: restart,
        };
        if res <= tol {
            break;
        }
        v = x;
    }
    best
}
