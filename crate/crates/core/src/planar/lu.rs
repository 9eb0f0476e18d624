//! Dense complex LU factorization with partial pivoting.

use num_complex::Complex64;

use crate::error::{Error, Result};

/// Row-major `n × n` factorization `P A = L U`, stored in place.
pub struct ComplexLu {
    n: usize,
    lu: Vec<Complex64>,
    piv: Vec<usize>,
    /// `log |det A|`.
    pub log_abs_det: f64,
    /// `arg det A`, wrapped into `(-pi, pi]`.
    pub arg_det: f64,
    /// Smallest and largest `|U_ii|`, for diagnostics.
    pub pivot_range: (f64, f64),
}

impl ComplexLu {
    pub fn factor(mut a: Vec<Complex64>, n: usize) -> Result<Self> {
        debug_assert_eq!(a.len(), n * n);
        let mut piv: Vec<usize> = (0..n).collect();
        let mut log_abs = 0.0;
        let mut arg = 0.0;
        let mut pmin = f64::INFINITY;
        let mut pmax: f64 = 0.0;
        for k in 0..n {
            let (p, best) = (k..n)
                .map(|r| (r, a[r * n + k].norm()))
                .fold((k, -1.0), |acc, x| if x.1 > acc.1 { x } else { acc });
            if best == 0.0 || !best.is_finite() {
                return Err(Error::Numerical(format!(
                    "singular Kac-Ward matrix at column {k} of {n} (pivot magnitude {best})"
                )));
            }
            if p != k {
                for c in 0..n {
                    a.swap(k * n + c, p * n + c);
                }
                piv.swap(k, p);
                arg += std::f64::consts::PI;
            }
            let pivot = a[k * n + k];
            log_abs += best.ln();
            arg += pivot.arg();
            pmin = pmin.min(best);
            pmax = pmax.max(best);
            let inv = pivot.inv();
            let (top, rest) = a.split_at_mut((k + 1) * n);
            let row_k = &top[k * n..k * n + n];
            for r in 0..n - k - 1 {
                let row = &mut rest[r * n..r * n + n];
                let f = row[k] * inv;
                row[k] = f;
                if f == Complex64::new(0.0, 0.0) {
                    continue;
                }
                for c in k + 1..n {
                    row[c] -= f * row_k[c];
                }
            }
        }
        Ok(Self {
            n,
            lu: a,
            piv,
            log_abs_det: log_abs,
            arg_det: super::embedding::wrap_angle(arg),
            pivot_range: (pmin, pmax),
        })
    }

    /// Dense inverse, row-major.
    pub fn inverse(&self) -> Vec<Complex64> {
        let n = self.n;
        let mut inv = vec![Complex64::new(0.0, 0.0); n * n];
        let mut col = vec![Complex64::new(0.0, 0.0); n];
        for j in 0..n {
            for (i, c) in col.iter_mut().enumerate() {
                *c = if self.piv[i] == j {
                    Complex64::new(1.0, 0.0)
                } else {
                    Complex64::new(0.0, 0.0)
                };
            }
            self.solve_in_place(&mut col);
            for i in 0..n {
                inv[i * n + j] = col[i];
            }
        }
        inv
    }

    /// Solves `A x = P^T b` given `b` already permuted.
    fn solve_in_place(&self, x: &mut [Complex64]) {
        let n = self.n;
        for i in 0..n {
            let row = &self.lu[i * n..i * n + n];
            let mut s = x[i];
            for k in 0..i {
                s -= row[k] * x[k];
            }
            x[i] = s;
        }
        for i in (0..n).rev() {
            let row = &self.lu[i * n..i * n + n];
            let mut s = x[i];
            for k in i + 1..n {
                s -= row[k] * x[k];
            }
            x[i] = s / row[i];
        }
    }
}
