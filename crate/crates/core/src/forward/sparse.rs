//! Compressed-row matrices, a Jacobi-preconditioned conjugate-gradient
//! solver and a banded Cholesky factorization.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq)]
pub struct CsrMatrix {
    n: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    values: Vec<f64>,
}

impl CsrMatrix {
    /// Zero matrix with the 9-point stencil pattern of an `nx × nz` node grid
    /// numbered `iz * nx + ix`.
    pub fn nine_point(nx: usize, nz: usize) -> Self {
        let n = nx * nz;
        let mut row_ptr = Vec::with_capacity(n + 1);
        let mut col_idx = Vec::with_capacity(9 * n);
        row_ptr.push(0);
        for iz in 0..nz {
            for ix in 0..nx {
                for dz in -1i64..=1 {
                    for dx in -1i64..=1 {
                        let (jx, jz) = (ix as i64 + dx, iz as i64 + dz);
                        if jx >= 0 && jz >= 0 && (jx as usize) < nx && (jz as usize) < nz {
                            col_idx.push(jz as usize * nx + jx as usize);
                        }
                    }
                }
                row_ptr.push(col_idx.len());
            }
        }
        let values = vec![0.0; col_idx.len()];
        Self {
            n,
            row_ptr,
            col_idx,
            values,
        }
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    fn slot(&self, row: usize, col: usize) -> Option<usize> {
        let (lo, hi) = (self.row_ptr[row], self.row_ptr[row + 1]);
        self.col_idx[lo..hi]
            .binary_search(&col)
            .ok()
            .map(|k| lo + k)
    }

    /// Adds `v` to entry `(row, col)`; panics outside the pattern.
    pub fn add(&mut self, row: usize, col: usize, v: f64) {
        let k = self
            .slot(row, col)
            .unwrap_or_else(|| panic!("entry ({row}, {col}) outside sparsity pattern"));
        self.values[k] += v;
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.slot(row, col).map_or(0.0, |k| self.values[k])
    }

    pub fn row(&self, row: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let (lo, hi) = (self.row_ptr[row], self.row_ptr[row + 1]);
        self.col_idx[lo..hi]
            .iter()
            .copied()
            .zip(self.values[lo..hi].iter().copied())
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.n).map(|i| self.get(i, i)).collect()
    }

    pub fn mul_vec_into(&self, x: &[f64], y: &mut [f64]) {
        for (i, yi) in y.iter_mut().enumerate() {
            let (lo, hi) = (self.row_ptr[i], self.row_ptr[i + 1]);
            let mut s = 0.0;
            for k in lo..hi {
                s += self.values[k] * x[self.col_idx[k]];
            }
            *yi = s;
        }
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.n];
        self.mul_vec_into(x, &mut y);
        y
    }

    /// Largest `|a_ij - a_ji|`.
    pub fn asymmetry(&self) -> f64 {
        let mut worst = 0.0f64;
        for i in 0..self.n {
            for (j, v) in self.row(i) {
                worst = worst.max((v - self.get(j, i)).abs());
            }
        }
        worst
    }

    /// Dense copy, row-major. Intended for small test systems.
    pub fn to_dense(&self) -> Vec<Vec<f64>> {
        let mut d = vec![vec![0.0; self.n]; self.n];
        for (i, row) in d.iter_mut().enumerate() {
            for (j, v) in self.row(i) {
                row[j] = v;
            }
        }
        d
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CgSettings {
    /// Stop when `‖r‖ ≤ tolerance · ‖b‖`.
    pub tolerance: f64,
    /// Iteration cap as a multiple of the system dimension.
    pub max_iter_factor: usize,
}

impl Default for CgSettings {
    fn default() -> Self {
        Self {
            tolerance: 1e-10,
            max_iter_factor: 10,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CgStats {
    pub iterations: usize,
    pub relative_residual: f64,
}

#[derive(Debug, thiserror::Error, PartialEq)]
#[error("conjugate gradient did not converge in {iterations} iterations (relative residual {relative_residual:.3e})")]
pub struct CgDivergence {
    pub iterations: usize,
    pub relative_residual: f64,
}

/// Solves `A x = b` for symmetric positive-definite `A`, starting from zero.
pub fn conjugate_gradient(
    a: &CsrMatrix,
    b: &[f64],
    settings: CgSettings,
) -> Result<(Vec<f64>, CgStats), CgDivergence> {
    let n = a.dim();
    let mut x = vec![0.0; n];
    let b_norm = norm(b);
    if b_norm == 0.0 {
        return Ok((
            x,
            CgStats {
                iterations: 0,
                relative_residual: 0.0,
            },
        ));
    }
    let inv_diag: Vec<f64> = a
        .diagonal()
        .into_iter()
        .map(|d| if d > 0.0 { 1.0 / d } else { 1.0 })
        .collect();
    let mut r = b.to_vec();
    let mut z: Vec<f64> = r.iter().zip(&inv_diag).map(|(ri, di)| ri * di).collect();
    let mut p = z.clone();
    let mut ap = vec![0.0; n];
    let mut rz = dot(&r, &z);
    let target = settings.tolerance * b_norm;
    let cap = settings.max_iter_factor * n;
    let mut res = b_norm;
    for it in 0..cap {
        a.mul_vec_into(&p, &mut ap);
        let pap = dot(&p, &ap);
        if pap <= 0.0 {
            return Err(CgDivergence {
                iterations: it,
                relative_residual: res / b_norm,
            });
        }
        let alpha = rz / pap;
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        res = norm(&r);
        if res <= target {
            return Ok((
                x,
                CgStats {
                    iterations: it + 1,
                    relative_residual: res / b_norm,
                },
            ));
        }
        for i in 0..n {
            z[i] = r[i] * inv_diag[i];
        }
        let rz_new = dot(&r, &z);
        let beta = rz_new / rz;
        rz = rz_new;
        for i in 0..n {
            p[i] = z[i] + beta * p[i];
        }
    }
    Err(CgDivergence {
        iterations: cap,
        relative_residual: res / b_norm,
    })
}

#[derive(Debug, thiserror::Error, PartialEq)]
#[error("matrix is not positive definite (pivot {pivot} at row {row})")]
pub struct NotPositiveDefinite {
    pub row: usize,
    pub pivot: f64,
}

/// Cholesky factor of a symmetric positive-definite matrix stored as a band
/// under a symmetric permutation.
#[derive(Debug, Clone)]
pub struct BandCholesky {
    n: usize,
    bandwidth: usize,
    /// `order[new] = old`.
    order: Vec<usize>,
    /// Row `i` holds `L[i][i-b..=i]` at offsets `0..=b`.
    lower: Vec<f64>,
}

impl BandCholesky {
    /// Factors `P A Pᵀ`, where row `i` of the permuted matrix is row
    /// `order[i]` of `a`.
    pub fn factor(a: &CsrMatrix, order: &[usize]) -> Result<Self, NotPositiveDefinite> {
        let n = a.dim();
        assert_eq!(order.len(), n, "permutation length");
        let mut position = vec![usize::MAX; n];
        for (new, &old) in order.iter().enumerate() {
            position[old] = new;
        }
        let mut bandwidth = 0;
        for old in 0..n {
            for (j, _) in a.row(old) {
                bandwidth = bandwidth.max(position[old].abs_diff(position[j]));
            }
        }
        let w = bandwidth + 1;
        let mut lower = vec![0.0; n * w];
        for (new, &old) in order.iter().enumerate() {
            for (j, v) in a.row(old) {
                let col = position[j];
                if col <= new {
                    lower[new * w + col + bandwidth - new] = v;
                }
            }
        }
        for i in 0..n {
            let lo = i.saturating_sub(bandwidth);
            for j in lo..=i {
                let k0 = lo.max(j.saturating_sub(bandwidth));
                let len = j - k0;
                let ri = i * w + k0 + bandwidth - i;
                let rj = j * w + k0 + bandwidth - j;
                let mut s = lower[i * w + j + bandwidth - i];
                s -= dot(&lower[ri..ri + len], &lower[rj..rj + len]);
                if i == j {
                    if !(s > 0.0) {
                        return Err(NotPositiveDefinite {
                            row: order[i],
                            pivot: s,
                        });
                    }
                    lower[i * w + bandwidth] = s.sqrt();
                } else {
                    lower[i * w + j + bandwidth - i] = s / lower[j * w + bandwidth];
                }
            }
        }
        Ok(Self {
            n,
            bandwidth,
            order: order.to_vec(),
            lower,
        })
    }

    pub fn bandwidth(&self) -> usize {
        self.bandwidth
    }

    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let (n, bw, w) = (self.n, self.bandwidth, self.bandwidth + 1);
        let mut y: Vec<f64> = self.order.iter().map(|&old| b[old]).collect();
        for i in 0..n {
            let lo = i.saturating_sub(bw);
            let r = i * w + lo + bw - i;
            let s = dot(&self.lower[r..r + (i - lo)], &y[lo..i]);
            y[i] = (y[i] - s) / self.lower[i * w + bw];
        }
        for i in (0..n).rev() {
            y[i] /= self.lower[i * w + bw];
            let lo = i.saturating_sub(bw);
            let xi = y[i];
            for k in lo..i {
                y[k] -= self.lower[i * w + k + bw - i] * xi;
            }
        }
        let mut x = vec![0.0; n];
        for (new, &old) in self.order.iter().enumerate() {
            x[old] = y[new];
        }
        x
    }
}

/// `‖b − A x‖ / ‖b‖` (0 when `b = 0`).
pub fn relative_residual(a: &CsrMatrix, x: &[f64], b: &[f64]) -> f64 {
    let bn = norm(b);
    if bn == 0.0 {
        return norm(x);
    }
    let r: Vec<f64> = a.mul_vec(x).iter().zip(b).map(|(ax, bi)| bi - ax).collect();
    norm(&r) / bn
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn laplacian_plus_identity(nx: usize, nz: usize) -> CsrMatrix {
        let mut m = CsrMatrix::nine_point(nx, nz);
        for iz in 0..nz {
            for ix in 0..nx {
                let i = iz * nx + ix;
                m.add(i, i, 1.0);
                for (jx, jz) in [(ix + 1, iz), (ix, iz + 1)] {
                    if jx < nx && jz < nz {
                        let j = jz * nx + jx;
                        m.add(i, i, 1.0);
                        m.add(j, j, 1.0);
                        m.add(i, j, -1.0);
                        m.add(j, i, -1.0);
                    }
                }
            }
        }
        m
    }

    #[test]
    fn pattern_sizes() {
        let m = CsrMatrix::nine_point(3, 3);
        assert_eq!(m.dim(), 9);
        // 4 corners × 4 + 4 edges × 6 + 1 center × 9.
        assert_eq!(m.nnz(), 16 + 24 + 9);
    }

    #[test]
    fn cg_meets_residual_tolerance() {
        let a = laplacian_plus_identity(12, 9);
        let b: Vec<f64> = (0..a.dim()).map(|i| ((i * 7) % 5) as f64 - 2.0).collect();
        let (x, stats) = conjugate_gradient(&a, &b, CgSettings::default()).unwrap();
        let r: Vec<f64> = a
            .mul_vec(&x)
            .iter()
            .zip(&b)
            .map(|(ax, bi)| bi - ax)
            .collect();
        assert!(norm(&r) <= 1e-10 * norm(&b));
        assert!(stats.iterations > 0);
    }

    #[test]
    fn zero_rhs_gives_zero_solution() {
        let a = laplacian_plus_identity(4, 4);
        let (x, stats) = conjugate_gradient(&a, &[0.0; 16], CgSettings::default()).unwrap();
        assert!(x.iter().all(|&v| v == 0.0));
        assert_eq!(stats.iterations, 0);
    }

    #[test]
    fn iteration_cap_reports_divergence() {
        let a = laplacian_plus_identity(10, 10);
        let b = vec![1.0; 100];
        let err = conjugate_gradient(
            &a,
            &b,
            CgSettings {
                tolerance: 1e-14,
                max_iter_factor: 0,
            },
        )
        .unwrap_err();
        assert_eq!(err.iterations, 0);
    }

    #[test]
    fn band_cholesky_matches_cg_under_permutation() {
        let (nx, nz) = (11, 6);
        let a = laplacian_plus_identity(nx, nz);
        let order: Vec<usize> = (0..nx)
            .flat_map(|ix| (0..nz).map(move |iz| iz * nx + ix))
            .collect();
        let chol = BandCholesky::factor(&a, &order).unwrap();
        assert_eq!(chol.bandwidth(), nz + 1);
        let b: Vec<f64> = (0..a.dim()).map(|i| (i as f64 * 0.37).sin()).collect();
        let x = chol.solve(&b);
        assert!(relative_residual(&a, &x, &b) < 1e-13);
        let (xc, _) = conjugate_gradient(&a, &b, CgSettings::default()).unwrap();
        for (u, v) in x.iter().zip(&xc) {
            assert!((u - v).abs() < 1e-8);
        }
    }

    #[test]
    fn band_cholesky_rejects_indefinite_matrix() {
        let mut a = CsrMatrix::nine_point(2, 1);
        a.add(0, 0, 1.0);
        a.add(1, 1, 1.0);
        a.add(0, 1, 2.0);
        a.add(1, 0, 2.0);
        let err = BandCholesky::factor(&a, &[0, 1]).unwrap_err();
        assert_eq!(err.row, 1);
    }
}
