#![allow(dead_code)]

use mrhs::sparse::CsrMatrix;
use mrhs::MultiVector;
use rand::{Rng, SeedableRng};

/// Gaussian elimination with partial pivoting on a dense copy of `a`,
/// one right-hand side at a time.
pub fn dense_solve(a: &CsrMatrix, b: &MultiVector) -> MultiVector {
    let n = a.n_rows();
    let mut out = MultiVector::zeros(n, b.n_cols());
    for c in 0..b.n_cols() {
        let mut m = a.to_dense();
        let mut rhs = b.column(c);
        for k in 0..n {
            let piv = (k..n)
                .max_by(|&i, &j| m[i][k].abs().total_cmp(&m[j][k].abs()))
                .unwrap();
            m.swap(k, piv);
            rhs.swap(k, piv);
            for i in k + 1..n {
                let f = m[i][k] / m[k][k];
                if f != 0.0 {
                    for j in k..n {
                        m[i][j] -= f * m[k][j];
                    }
                    rhs[i] -= f * rhs[k];
                }
            }
        }
        for k in (0..n).rev() {
            let mut s = rhs[k];
            for j in k + 1..n {
                s -= m[k][j] * out.get(j, c);
            }
            out.set(k, c, s / m[k][k]);
        }
    }
    out
}

pub fn random_rhs(n: usize, m: usize, seed: u64) -> MultiVector {
    let mut rng = rand::rngs::StdRng::seed_from_u64(seed);
    MultiVector::from_fn(n, m, |_, _| rng.gen_range(-1.0..1.0))
}
