//! Dense matrix exponential by Padé scaling and squaring, and symmetric helpers.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

const PADE13: [f64; 14] = [
    64764752532480000.0,
    32382376266240000.0,
    7771770303897600.0,
    1187353796428800.0,
    129060195264000.0,
    10559470521600.0,
    670442572800.0,
    33522128640.0,
    1323241920.0,
    40840800.0,
    960960.0,
    16380.0,
    182.0,
    1.0,
];

/// e^{A} by the degree-13 Padé approximant with scaling and squaring.
pub fn expm(a: &DMatrix<f64>) -> DMatrix<f64> {
    let n = a.nrows();
    let norm1 = (0..n)
        .map(|j| a.column(j).iter().map(|x| x.abs()).sum::<f64>())
        .fold(0.0, f64::max);
    let theta13 = 5.371920351148152;
    let s = if norm1 > theta13 {
        (norm1 / theta13).log2().ceil() as i32
    } else {
        0
    };
    let a = a / 2f64.powi(s);
    let id = DMatrix::<f64>::identity(n, n);
    let a2 = &a * &a;
    let a4 = &a2 * &a2;
    let a6 = &a4 * &a2;
    let b = &PADE13;
    let u_inner = &a6 * (&a6 * b[13] + &a4 * b[11] + &a2 * b[9])
        + &a6 * b[7]
        + &a4 * b[5]
        + &a2 * b[3]
        + &id * b[1];
    let u = &a * u_inner;
    let v = &a6 * (&a6 * b[12] + &a4 * b[10] + &a2 * b[8])
        + &a6 * b[6]
        + &a4 * b[4]
        + &a2 * b[2]
        + &id * b[0];
    let p = &v + &u;
    let q = &v - &u;
    let mut r = q.lu().solve(&p).expect("Padé denominator singular");
    for _ in 0..s {
        r = &r * &r;
    }
    r
}

/// Eigendecomposition of a symmetric matrix with eigenvalues sorted descending.
pub fn sym_eigen(a: &DMatrix<f64>) -> (Vec<f64>, DMatrix<f64>) {
    let n = a.nrows();
    let sym = (a + a.transpose()) * 0.5;
    let eig = SymmetricEigen::new(sym);
    let mut idx: Vec<usize> = (0..n).collect();
    idx.sort_by(|&i, &j| eig.eigenvalues[j].total_cmp(&eig.eigenvalues[i]));
    let vals = idx.iter().map(|&i| eig.eigenvalues[i]).collect();
    let mut vecs = DMatrix::zeros(n, n);
    for (k, &i) in idx.iter().enumerate() {
        vecs.set_column(k, &eig.eigenvectors.column(i));
    }
    (vals, vecs)
}

/// log⟨u, e^{tA} w⟩ for symmetric A given its eigendecomposition; None if the
/// inner product is not positive.
pub fn log_bilinear_exp(
    vals: &[f64],
    vecs: &DMatrix<f64>,
    u: &[f64],
    w: &[f64],
    t: f64,
) -> Option<f64> {
    let u = DVector::from_column_slice(u);
    let w = DVector::from_column_slice(w);
    let cu = vecs.transpose() * u;
    let cw = vecs.transpose() * w;
    let mut pos = Vec::new();
    let mut neg = Vec::new();
    for (v, (a, b)) in vals.iter().zip(cu.iter().zip(cw.iter())) {
        let c = a * b;
        if c > 0.0 {
            pos.push(c.ln() + v * t);
        } else if c < 0.0 {
            neg.push((-c).ln() + v * t);
        }
    }
    let lp = log_sum_exp(&pos)?;
    match log_sum_exp(&neg) {
        None => Some(lp),
        Some(ln) if ln < lp => Some(lp + (-(ln - lp).exp()).ln_1p()),
        Some(_) => None,
    }
}

/// log Σ exp(x_i); None for an empty slice.
pub fn log_sum_exp(x: &[f64]) -> Option<f64> {
    let m = x.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return None;
    }
    Some(m + x.iter().map(|v| (v - m).exp()).sum::<f64>().ln())
}
