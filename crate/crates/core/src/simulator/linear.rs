//! Sparse symmetric positive-definite solvers for the pressure equation.

use crate::error::{Error, Result};

/// Symmetric sparse matrix in CSR form with a fixed pattern.
#[derive(Debug, Clone)]
pub struct SparseSym {
    pub n: usize,
    pub row_ptr: Vec<usize>,
    pub col_idx: Vec<usize>,
    pub values: Vec<f64>,
    pub diag_pos: Vec<usize>,
}

impl SparseSym {
    /// Builds the pattern from the diagonal plus the given symmetric couplings.
    pub fn from_pattern(n: usize, pairs: &[(usize, usize)]) -> Self {
        let mut rows: Vec<Vec<usize>> = (0..n).map(|i| vec![i]).collect();
        for &(a, b) in pairs {
            rows[a].push(b);
            rows[b].push(a);
        }
        let mut row_ptr = vec![0];
        let mut col_idx = Vec::new();
        let mut diag_pos = vec![0; n];
        for (i, r) in rows.iter_mut().enumerate() {
            r.sort_unstable();
            r.dedup();
            for &c in r.iter() {
                if c == i {
                    diag_pos[i] = col_idx.len();
                }
                col_idx.push(c);
            }
            row_ptr.push(col_idx.len());
        }
        let nnz = col_idx.len();
        Self {
            n,
            row_ptr,
            col_idx,
            values: vec![0.0; nnz],
            diag_pos,
        }
    }

    pub fn position(&self, row: usize, col: usize) -> usize {
        let s = &self.col_idx[self.row_ptr[row]..self.row_ptr[row + 1]];
        self.row_ptr[row]
            + s.binary_search(&col)
                .expect("entry outside sparsity pattern")
    }

    pub fn matvec(&self, x: &[f64], y: &mut [f64]) {
        for (i, yi) in y.iter_mut().enumerate() {
            let mut s = 0.0;
            for p in self.row_ptr[i]..self.row_ptr[i + 1] {
                s += self.values[p] * x[self.col_idx[p]];
            }
            *yi = s;
        }
    }

    /// Largest |i - j| over stored entries.
    pub fn bandwidth(&self) -> usize {
        (0..self.n)
            .flat_map(|i| {
                self.col_idx[self.row_ptr[i]..self.row_ptr[i + 1]]
                    .iter()
                    .map(move |&j| i.abs_diff(j))
            })
            .max()
            .unwrap_or(0)
    }
}

/// Jacobi-preconditioned conjugate gradients. Returns the iteration count.
pub fn pcg(
    a: &SparseSym,
    b: &[f64],
    x: &mut [f64],
    rel_tol: f64,
    max_iter: usize,
) -> Result<usize> {
    let n = a.n;
    let inv_diag: Vec<f64> = a.diag_pos.iter().map(|&p| 1.0 / a.values[p]).collect();
    let bnorm = b.iter().map(|v| v * v).sum::<f64>().sqrt();
    if bnorm == 0.0 {
        x.iter_mut().for_each(|v| *v = 0.0);
        return Ok(0);
    }
    let mut r = vec![0.0; n];
    a.matvec(x, &mut r);
    for i in 0..n {
        r[i] = b[i] - r[i];
    }
    let mut z: Vec<f64> = r.iter().zip(&inv_diag).map(|(a, b)| a * b).collect();
    let mut p = z.clone();
    let mut q = vec![0.0; n];
    let mut rz: f64 = r.iter().zip(&z).map(|(a, b)| a * b).sum();
    for it in 0..max_iter {
        let rnorm = r.iter().map(|v| v * v).sum::<f64>().sqrt();
        if rnorm <= rel_tol * bnorm {
            return Ok(it);
        }
        a.matvec(&p, &mut q);
        let pq: f64 = p.iter().zip(&q).map(|(a, b)| a * b).sum();
        if !(pq > 0.0) {
            return Err(Error::Simulation {
                time: f64::NAN,
                message: format!("CG breakdown at iteration {it} (pᵀAp = {pq:e})"),
            });
        }
        let alpha = rz / pq;
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * q[i];
            z[i] = r[i] * inv_diag[i];
        }
        let rz_new: f64 = r.iter().zip(&z).map(|(a, b)| a * b).sum();
        let beta = rz_new / rz;
        rz = rz_new;
        for i in 0..n {
            p[i] = z[i] + beta * p[i];
        }
    }
    let rnorm = r.iter().map(|v| v * v).sum::<f64>().sqrt();
    Err(Error::Simulation {
        time: f64::NAN,
        message: format!(
            "CG did not converge in {max_iter} iterations (relative residual {:e})",
            rnorm / bnorm
        ),
    })
}

/// Banded Cholesky factor (lower band, row-major, `bw + 1` entries per row).
#[derive(Debug, Clone)]
pub struct BandCholesky {
    n: usize,
    bw: usize,
    l: Vec<f64>,
}

impl BandCholesky {
    pub fn factor(a: &SparseSym, bw: usize) -> Result<Self> {
        let n = a.n;
        let w = bw + 1;
        let mut l = vec![0.0; n * w];
        for i in 0..n {
            for p in a.row_ptr[i]..a.row_ptr[i + 1] {
                let j = a.col_idx[p];
                if j <= i {
                    l[i * w + (j + bw - i)] = a.values[p];
                }
            }
        }
        for i in 0..n {
            let j0 = i.saturating_sub(bw);
            for j in j0..=i {
                let k0 = j0.max(j.saturating_sub(bw));
                let mut s = l[i * w + (j + bw - i)];
                let ri = &l[i * w + (k0 + bw - i)..i * w + (j + bw - i)];
                let rj = &l[j * w + (k0 + bw - j)..j * w + bw];
                s -= ri.iter().zip(rj).map(|(a, b)| a * b).sum::<f64>();
                if i == j {
                    if !(s > 0.0) {
                        return Err(Error::Simulation {
                            time: f64::NAN,
                            message: format!("pressure matrix not positive definite at row {i}"),
                        });
                    }
                    l[i * w + bw] = s.sqrt();
                } else {
                    l[i * w + (j + bw - i)] = s / l[j * w + bw];
                }
            }
        }
        Ok(Self { n, bw, l })
    }

    pub fn solve(&self, b: &mut [f64]) {
        let (n, bw, w) = (self.n, self.bw, self.bw + 1);
        for i in 0..n {
            let k0 = i.saturating_sub(bw);
            let row = &self.l[i * w + (k0 + bw - i)..i * w + bw];
            let s: f64 = row.iter().zip(&b[k0..i]).map(|(a, x)| a * x).sum();
            b[i] = (b[i] - s) / self.l[i * w + bw];
        }
        for i in (0..n).rev() {
            let bi = b[i] / self.l[i * w + bw];
            b[i] = bi;
            let k0 = i.saturating_sub(bw);
            for k in k0..i {
                b[k] -= self.l[i * w + (k + bw - i)] * bi;
            }
        }
    }
}
