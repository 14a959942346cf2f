//! Reference computations on plain nested vectors, written without touching
//! the library's linear algebra, plus seeded random instance generators.
#![allow(dead_code, clippy::needless_range_loop)]

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand::SeedableRng;
use switchid::{Matrix, SwitchedSystem, SwitchingSignal};

pub type Dense = Vec<Vec<f64>>;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn dense(m: &Matrix<f64>) -> Dense {
    (0..m.rows()).map(|i| (0..m.cols()).map(|j| m.get(i, j)).collect()).collect()
}

pub fn eye(n: usize) -> Dense {
    (0..n).map(|i| (0..n).map(|j| if i == j { 1.0 } else { 0.0 }).collect()).collect()
}

pub fn mul(a: &Dense, b: &Dense) -> Dense {
    let (r, k, c) = (a.len(), b.len(), b[0].len());
    let mut out = vec![vec![0.0; c]; r];
    for i in 0..r {
        for j in 0..c {
            let mut s = 0.0;
            for l in 0..k {
                s += a[i][l] * b[l][j];
            }
            out[i][j] = s;
        }
    }
    out
}

pub fn transpose(a: &Dense) -> Dense {
    (0..a[0].len()).map(|j| a.iter().map(|row| row[j]).collect()).collect()
}

pub fn sub(a: &Dense, b: &Dense) -> Dense {
    a.iter().zip(b).map(|(x, y)| x.iter().zip(y).map(|(p, q)| p - q).collect()).collect()
}

pub fn max_abs(a: &Dense) -> f64 {
    a.iter().flatten().fold(0.0, |m, v| m.max(v.abs()))
}

/// `Gamma_T = sum_{i=0}^{T-1} P_i P_i^T`, each `P_i = A_(w_{T-1}) ... A_(w_{T-i})`
/// rebuilt from scratch.
pub fn direct_gramian(modes: &[Dense], signal: &[usize], t: usize) -> Dense {
    let n = modes[0].len();
    let mut g = vec![vec![0.0; n]; n];
    for i in 0..t {
        let mut p = eye(n);
        for step in (t - i)..t {
            p = mul(&modes[signal[step]], &p);
        }
        let pp = mul(&p, &transpose(&p));
        for r in 0..n {
            for c in 0..n {
                g[r][c] += pp[r][c];
            }
        }
    }
    g
}

/// Eigenvalues of a symmetric matrix by cyclic Jacobi rotations, ascending.
pub fn sym_eigs(a: &Dense) -> Vec<f64> {
    let n = a.len();
    let mut m = a.clone();
    for _ in 0..100 {
        let off: f64 = (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| m[i][j] * m[i][j])
            .sum();
        let scale: f64 = m.iter().flatten().map(|v| v * v).sum();
        if off <= 1e-30 * scale.max(1e-300) {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                if m[p][q] == 0.0 {
                    continue;
                }
                let theta = (m[q][q] - m[p][p]) / (2.0 * m[p][q]);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let (mkp, mkq) = (m[k][p], m[k][q]);
                    m[k][p] = c * mkp - s * mkq;
                    m[k][q] = s * mkp + c * mkq;
                }
                for k in 0..n {
                    let (mpk, mqk) = (m[p][k], m[q][k]);
                    m[p][k] = c * mpk - s * mqk;
                    m[q][k] = s * mpk + c * mqk;
                }
            }
        }
    }
    let mut d: Vec<f64> = (0..n).map(|i| m[i][i]).collect();
    d.sort_by(|x, y| x.partial_cmp(y).unwrap());
    d
}

pub fn spectral_norm(a: &Dense) -> f64 {
    sym_eigs(&mul(&transpose(a), a)).last().unwrap().max(0.0).sqrt()
}

pub fn power(a: &Dense, k: usize) -> Dense {
    let mut p = eye(a.len());
    for _ in 0..k {
        p = mul(a, &p);
    }
    p
}

/// Gauss-Jordan inverse with partial pivoting.
pub fn inverse(a: &Dense) -> Option<Dense> {
    let n = a.len();
    let mut m: Dense = a
        .iter()
        .enumerate()
        .map(|(i, row)| {
            let mut r = row.clone();
            r.extend((0..n).map(|j| if i == j { 1.0 } else { 0.0 }));
            r
        })
        .collect();
    for col in 0..n {
        let piv = (col..n).max_by(|&x, &y| m[x][col].abs().partial_cmp(&m[y][col].abs()).unwrap())?;
        if m[piv][col].abs() < 1e-300 {
            return None;
        }
        m.swap(col, piv);
        let d = m[col][col];
        for v in m[col].iter_mut() {
            *v /= d;
        }
        for r in 0..n {
            if r != col {
                let f = m[r][col];
                if f != 0.0 {
                    for c in 0..2 * n {
                        m[r][c] -= f * m[col][c];
                    }
                }
            }
        }
    }
    Some(m.into_iter().map(|r| r[n..].to_vec()).collect())
}

pub fn random_dense(rng: &mut ChaCha8Rng, n: usize) -> Dense {
    (0..n).map(|_| (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).collect()
}

pub fn scaled(a: &Dense, k: f64) -> Dense {
    a.iter().map(|r| r.iter().map(|v| v * k).collect()).collect()
}

pub fn to_matrix(a: &Dense) -> Matrix<f64> {
    Matrix::from_rows(a).unwrap()
}

pub fn system_of(modes: &[Dense]) -> SwitchedSystem<f64> {
    SwitchedSystem::new(modes.iter().map(to_matrix).collect()).unwrap()
}

/// Uniformly random signal over `s` modes.
pub fn random_signal(rng: &mut ChaCha8Rng, s: usize, len: usize) -> SwitchingSignal {
    SwitchingSignal::new((0..len).map(|_| rng.random_range(0..s)).collect(), s).unwrap()
}
