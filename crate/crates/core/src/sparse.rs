//! Minimal sparse complex matrices: COO for operator assembly, CSR for
//! repeated matrix-vector products in Liouville space.

use ndarray::Array2;
use num_complex::Complex64 as C64;

/// Compressed sparse row matrix over `C64`.
#[derive(Debug, Clone)]
pub struct Csr {
    pub n_rows: usize,
    pub n_cols: usize,
    pub row_ptr: Vec<usize>,
    pub cols: Vec<u32>,
    pub vals: Vec<C64>,
}

impl Csr {
    /// Build from triplets, summing duplicates.
    pub fn from_triplets(n_rows: usize, n_cols: usize, mut t: Vec<(u32, u32, C64)>) -> Self {
        t.sort_unstable_by(|a, b| (a.0, a.1).cmp(&(b.0, b.1)));
        let mut cols = Vec::with_capacity(t.len());
        let mut vals: Vec<C64> = Vec::with_capacity(t.len());
        let mut rows: Vec<u32> = Vec::with_capacity(t.len());
        for (r, c, v) in t {
            debug_assert!((r as usize) < n_rows && (c as usize) < n_cols);
            if rows.last() == Some(&r) && cols.last() == Some(&c) {
                *vals.last_mut().unwrap() += v;
            } else {
                rows.push(r);
                cols.push(c);
                vals.push(v);
            }
        }
        let mut row_ptr = vec![0usize; n_rows + 1];
        for &r in &rows {
            row_ptr[r as usize + 1] += 1;
        }
        for i in 0..n_rows {
            row_ptr[i + 1] += row_ptr[i];
        }
        Csr {
            n_rows,
            n_cols,
            row_ptr,
            cols,
            vals,
        }
    }

    pub fn nnz(&self) -> usize {
        self.vals.len()
    }

    /// y = A x
    pub fn matvec(&self, x: &[C64], y: &mut [C64]) {
        debug_assert_eq!(x.len(), self.n_cols);
        debug_assert_eq!(y.len(), self.n_rows);
        for r in 0..self.n_rows {
            let mut acc = C64::new(0.0, 0.0);
            for k in self.row_ptr[r]..self.row_ptr[r + 1] {
                acc += self.vals[k] * x[self.cols[k] as usize];
            }
            y[r] = acc;
        }
    }

    pub fn to_dense(&self) -> Array2<C64> {
        let mut a = Array2::zeros((self.n_rows, self.n_cols));
        for r in 0..self.n_rows {
            for k in self.row_ptr[r]..self.row_ptr[r + 1] {
                a[[r, self.cols[k] as usize]] += self.vals[k];
            }
        }
        a
    }

    /// Row-sum infinity norm.
    pub fn norm_inf(&self) -> f64 {
        (0..self.n_rows)
            .map(|r| {
                self.vals[self.row_ptr[r]..self.row_ptr[r + 1]]
                    .iter()
                    .map(|v| v.norm())
                    .sum::<f64>()
            })
            .fold(0.0, f64::max)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csr_matvec_matches_dense() {
        let t = vec![
            (0u32, 1u32, C64::new(2.0, 0.0)),
            (0, 1, C64::new(0.0, 1.0)), // duplicate accumulates
            (2, 0, C64::new(-1.0, 0.0)),
            (3, 3, C64::new(0.5, 0.5)),
        ];
        let a = Csr::from_triplets(4, 4, t);
        assert_eq!(a.nnz(), 3);
        let x = vec![
            C64::new(1.0, 0.0),
            C64::new(0.0, 1.0),
            C64::new(2.0, 0.0),
            C64::new(1.0, -1.0),
        ];
        let mut y = vec![C64::new(0.0, 0.0); 4];
        a.matvec(&x, &mut y);
        let d = a.to_dense();
        for r in 0..4 {
            let mut acc = C64::new(0.0, 0.0);
            for c in 0..4 {
                acc += d[[r, c]] * x[c];
            }
            assert!((acc - y[r]).norm() < 1e-14);
        }
    }

    #[test]
    fn empty_rows_are_handled() {
        let a = Csr::from_triplets(3, 3, vec![(2, 2, C64::new(1.0, 0.0))]);
        let x = vec![C64::new(1.0, 0.0); 3];
        let mut y = vec![C64::new(9.0, 9.0); 3];
        a.matvec(&x, &mut y);
        assert_eq!(y[0], C64::new(0.0, 0.0));
        assert_eq!(y[2], C64::new(1.0, 0.0));
    }
}
