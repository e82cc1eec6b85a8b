//! Matrix exponentials: dense Padé scaling-and-squaring for small generators
//! and an Arnoldi/Krylov action for sparse Liouvillians.

use ndarray::Array2;
use ndarray_linalg::Inverse;
use num_complex::Complex64 as C64;
use thiserror::Error;

use crate::sparse::Csr;

#[derive(Debug, Error)]
pub enum ExpmError {
    #[error("linear solve failed in Pade evaluation: {0}")]
    Solve(String),
    #[error("Krylov exp(L dt) v did not converge: residual {residual:.3e} after {dim} iterations (tol {tol:.1e})")]
    KrylovNotConverged { residual: f64, dim: usize, tol: f64 },
}

/// Pin OpenBLAS to one thread. The threaded kernels spill large buffers onto
/// the calling thread's stack (fatal on 2 MiB test threads) and are slower
/// than the serial ones at the matrix sizes used here; sweep-level parallelism
/// happens across runs instead.
pub fn single_threaded_blas() {
    static ONCE: std::sync::Once = std::sync::Once::new();
    ONCE.call_once(|| {
        extern "C" {
            fn openblas_set_num_threads(n: core::ffi::c_int);
        }
        unsafe { openblas_set_num_threads(1) };
    });
}

fn norm1(a: &Array2<C64>) -> f64 {
    let (n, m) = a.dim();
    (0..m)
        .map(|j| (0..n).map(|i| a[[i, j]].norm()).sum::<f64>())
        .fold(0.0, f64::max)
}

/// Dense exp(A) by the order-13 Pade approximant with scaling and squaring.
pub fn expm_dense(a: &Array2<C64>) -> Result<Array2<C64>, ExpmError> {
    single_threaded_blas();
    const B: [f64; 14] = [
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
    const THETA13: f64 = 5.371920351148152;
    let n = a.nrows();
    assert_eq!(n, a.ncols(), "expm needs a square matrix");
    let nrm = norm1(a);
    let s = if nrm > THETA13 {
        (nrm / THETA13).log2().ceil() as u32
    } else {
        0
    };
    let a = a.mapv(|z| z / 2f64.powi(s as i32));
    let eye = Array2::<C64>::eye(n);
    let a2 = a.dot(&a);
    let a4 = a2.dot(&a2);
    let a6 = a2.dot(&a4);
    let u_inner = a6.mapv(|z| z * B[13]) + a4.mapv(|z| z * B[11]) + a2.mapv(|z| z * B[9]);
    let u = a.dot(
        &(a6.dot(&u_inner)
            + a6.mapv(|z| z * B[7])
            + a4.mapv(|z| z * B[5])
            + a2.mapv(|z| z * B[3])
            + eye.mapv(|z| z * B[1])),
    );
    let v_inner = a6.mapv(|z| z * B[12]) + a4.mapv(|z| z * B[10]) + a2.mapv(|z| z * B[8]);
    let v = a6.dot(&v_inner)
        + a6.mapv(|z| z * B[6])
        + a4.mapv(|z| z * B[4])
        + a2.mapv(|z| z * B[2])
        + eye.mapv(|z| z * B[0]);
    let lhs = &v - &u;
    let rhs = &v + &u;
    let lhs_inv = lhs
        .inv()
        .map_err(|e| ExpmError::Solve(format!("{e}")))?;
    let mut x = lhs_inv.dot(&rhs);
    for _ in 0..s {
        x = x.dot(&x);
    }
    Ok(x)
}

/// Arnoldi evaluation of `exp(dt L) v` for sparse `L`.
#[derive(Debug, Clone)]
pub struct KrylovExp {
    pub max_dim: usize,
    pub tol: f64,
}

impl Default for KrylovExp {
    fn default() -> Self {
        KrylovExp {
            max_dim: 40,
            tol: 1e-13,
        }
    }
}

impl KrylovExp {
    pub fn apply(&self, l: &Csr, dt: f64, v: &[C64]) -> Result<Vec<C64>, ExpmError> {
        self.apply_depth(l, dt, v, 0)
    }

    fn apply_depth(&self, l: &Csr, dt: f64, v: &[C64], depth: usize) -> Result<Vec<C64>, ExpmError> {
        let n = v.len();
        let beta = v.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
        if beta == 0.0 {
            return Ok(v.to_vec());
        }
        let m_max = self.max_dim.min(n);
        let mut q: Vec<Vec<C64>> = Vec::with_capacity(m_max + 1);
        q.push(v.iter().map(|z| z / beta).collect());
        let mut h = Array2::<C64>::zeros((m_max + 1, m_max));
        let mut w = vec![C64::new(0.0, 0.0); n];
        let mut last_residual = f64::INFINITY;
        for m in 1..=m_max {
            l.matvec(&q[m - 1], &mut w);
            for z in w.iter_mut() {
                *z *= dt;
            }
            // modified Gram-Schmidt with one re-orthogonalization pass
            for _ in 0..2 {
                for (i, qi) in q.iter().enumerate().take(m) {
                    let c: C64 = qi.iter().zip(w.iter()).map(|(a, b)| a.conj() * b).sum();
                    h[[i, m - 1]] += c;
                    for (wk, qk) in w.iter_mut().zip(qi.iter()) {
                        *wk -= c * qk;
                    }
                }
            }
            let hnext = w.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
            h[[m, m - 1]] = C64::new(hnext, 0.0);
            let happy = hnext < 1e-14;
            if happy || m >= 3 || m == m_max {
                let hm = h.slice(ndarray::s![..m, ..m]).to_owned();
                let e = expm_dense(&hm)?;
                let residual = if happy {
                    0.0
                } else {
                    beta * hnext * e[[m - 1, 0]].norm()
                };
                last_residual = residual;
                if happy || residual <= self.tol * beta.max(1.0) {
                    let mut out = vec![C64::new(0.0, 0.0); n];
                    for (i, qi) in q.iter().enumerate().take(m) {
                        let c = beta * e[[i, 0]];
                        for (o, qk) in out.iter_mut().zip(qi.iter()) {
                            *o += c * qk;
                        }
                    }
                    return Ok(out);
                }
            }
            if m < m_max {
                q.push(w.iter().map(|z| z / hnext).collect());
            }
        }
        // halve the step and recurse
        if depth < 20 {
            let half = self.apply_depth(l, dt * 0.5, v, depth + 1)?;
            return self.apply_depth(l, dt * 0.5, &half, depth + 1);
        }
        Err(ExpmError::KrylovNotConverged {
            residual: last_residual,
            dim: m_max,
            tol: self.tol,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn expm_of_zero_is_identity() {
        let a = Array2::<C64>::zeros((5, 5));
        let e = expm_dense(&a).unwrap();
        for i in 0..5 {
            for j in 0..5 {
                let want = if i == j { 1.0 } else { 0.0 };
                assert!((e[[i, j]] - C64::new(want, 0.0)).norm() < 1e-15);
            }
        }
    }

    #[test]
    fn expm_antihermitian_rotation() {
        // exp(-i theta sigma_y/ i...) against the closed form for sigma_x generator
        let th = 0.73;
        let a = array![
            [C64::new(0.0, 0.0), C64::new(0.0, -th)],
            [C64::new(0.0, -th), C64::new(0.0, 0.0)]
        ];
        let e = expm_dense(&a).unwrap();
        assert!((e[[0, 0]].re - th.cos()).abs() < 1e-13);
        assert!((e[[0, 1]].im + th.sin()).abs() < 1e-13);
    }

    #[test]
    fn krylov_matches_dense() {
        // pseudo-random sparse matrix
        let n = 24;
        let mut t = Vec::new();
        let mut state = 88172645463325252u64;
        let mut rng = || {
            state ^= state << 13;
            state ^= state >> 7;
            state ^= state << 17;
            (state as f64 / u64::MAX as f64) - 0.5
        };
        for i in 0..n {
            for j in 0..n {
                if (i + 3 * j) % 5 == 0 {
                    t.push((i as u32, j as u32, C64::new(rng(), rng())));
                }
            }
        }
        let l = Csr::from_triplets(n, n, t);
        let v: Vec<C64> = (0..n).map(|_| C64::new(rng(), rng())).collect();
        let dt = 0.7;
        let dense = expm_dense(&l.to_dense().mapv(|z| z * dt)).unwrap();
        let mut want = vec![C64::new(0.0, 0.0); n];
        for i in 0..n {
            for j in 0..n {
                want[i] += dense[[i, j]] * v[j];
            }
        }
        let got = KrylovExp::default().apply(&l, dt, &v).unwrap();
        let err: f64 = want
            .iter()
            .zip(got.iter())
            .map(|(a, b)| (a - b).norm())
            .sum();
        assert!(err < 1e-10, "krylov/: dense mismatch {err}");
    }
}
