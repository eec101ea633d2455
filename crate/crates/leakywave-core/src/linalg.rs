//! Dense complex matrices and an LU direct solver.
//!
//! The Nyström systems here are desk-scale (a few thousand unknowns), so a
//! straightforward partial-pivoted LU is the right tool. Row updates for a
//! fixed pivot are parallelized; the pivot sequence, and hence the bitwise
//! result, does not depend on the thread count.

use num_complex::Complex64 as C64;
use rayon::prelude::*;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum LinalgError {
    #[error("matrix is numerically singular at pivot {0}")]
    Singular(usize),
    #[error("dimension mismatch: {0}")]
    Shape(String),
}

/// Row-major dense complex matrix.
#[derive(Debug, Clone)]
pub struct CMat {
    pub nrows: usize,
    pub ncols: usize,
    pub data: Vec<C64>,
}

impl CMat {
    pub fn zeros(nrows: usize, ncols: usize) -> Self {
        CMat {
            nrows,
            ncols,
            data: vec![C64::new(0.0, 0.0); nrows * ncols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = CMat::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = C64::new(1.0, 0.0);
        }
        m
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[C64] {
        &self.data[i * self.ncols..(i + 1) * self.ncols]
    }

    #[inline]
    pub fn row_mut(&mut self, i: usize) -> &mut [C64] {
        &mut self.data[i * self.ncols..(i + 1) * self.ncols]
    }

    pub fn matvec(&self, x: &[C64]) -> Vec<C64> {
        assert_eq!(x.len(), self.ncols);
        (0..self.nrows)
            .into_par_iter()
            .map(|i| {
                let mut acc = C64::new(0.0, 0.0);
                for (a, b) in self.row(i).iter().zip(x.iter()) {
                    acc += a * b;
                }
                acc
            })
            .collect()
    }

    /// Induced 1-norm (max absolute column sum).
    pub fn norm_one(&self) -> f64 {
        let mut sums = vec![0.0; self.ncols];
        for i in 0..self.nrows {
            for (s, a) in sums.iter_mut().zip(self.row(i)) {
                *s += a.norm();
            }
        }
        sums.into_iter().fold(0.0, f64::max)
    }
}

impl std::ops::Index<(usize, usize)> for CMat {
    type Output = C64;
    #[inline]
    fn index(&self, (i, j): (usize, usize)) -> &C64 {
        &self.data[i * self.ncols + j]
    }
}

impl std::ops::IndexMut<(usize, usize)> for CMat {
    #[inline]
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut C64 {
        &mut self.data[i * self.ncols + j]
    }
}

/// Packed LU factors with the pivot permutation.
pub struct LuFactors {
    lu: CMat,
    piv: Vec<usize>,
}

/// Factor a square matrix (consumed) with partial pivoting.
pub fn lu_factor(mut a: CMat) -> Result<LuFactors, LinalgError> {
    let n = a.nrows;
    if a.ncols != n {
        return Err(LinalgError::Shape(format!("{}x{} not square", a.nrows, a.ncols)));
    }
    let mut piv = Vec::with_capacity(n);
    for k in 0..n {
        let mut pk = k;
        let mut best = a[(k, k)].norm();
        for i in k + 1..n {
            let v = a[(i, k)].norm();
            if v > best {
                best = v;
                pk = i;
            }
        }
        if best == 0.0 {
            return Err(LinalgError::Singular(k));
        }
        piv.push(pk);
        if pk != k {
            let (lo, hi) = a.data.split_at_mut(pk * n);
            lo[k * n..(k + 1) * n].swap_with_slice(&mut hi[..n]);
        }
        let pivot = a[(k, k)];
        for i in k + 1..n {
            let m = a[(i, k)] / pivot;
            a[(i, k)] = m;
        }
        // Rank-1 trailing update, parallel over rows.
        let (head, tail) = a.data.split_at_mut((k + 1) * n);
        let urow = &head[k * n..(k + 1) * n];
        tail.par_chunks_mut(n).for_each(|row| {
            let m = row[k];
            if m.norm_sqr() != 0.0 {
                for j in k + 1..n {
                    row[j] -= m * urow[j];
                }
            }
        });
    }
    Ok(LuFactors { lu: a, piv })
}

impl LuFactors {
    pub fn n(&self) -> usize {
        self.lu.nrows
    }

    /// Solve A x = b.
    pub fn solve(&self, b: &[C64]) -> Vec<C64> {
        let n = self.n();
        assert_eq!(b.len(), n);
        let mut x = b.to_vec();
        for k in 0..n {
            x.swap(k, self.piv[k]);
        }
        // L (unit lower) forward solve
        for i in 1..n {
            let row = self.lu.row(i);
            let mut acc = x[i];
            for j in 0..i {
                acc -= row[j] * x[j];
            }
            x[i] = acc;
        }
        // U back solve
        for i in (0..n).rev() {
            let row = self.lu.row(i);
            let mut acc = x[i];
            for j in i + 1..n {
                acc -= row[j] * x[j];
            }
            x[i] = acc / row[i];
        }
        x
    }

    /// Solve Aᵀ x = b (needed by the 1-norm condition estimator).
    pub fn solve_transpose(&self, b: &[C64]) -> Vec<C64> {
        let n = self.n();
        assert_eq!(b.len(), n);
        let mut x = b.to_vec();
        // Uᵀ forward solve
        for i in 0..n {
            let mut acc = x[i];
            for j in 0..i {
                acc -= self.lu[(j, i)] * x[j];
            }
            x[i] = acc / self.lu[(i, i)];
        }
        // Lᵀ back solve (unit diagonal)
        for i in (0..n).rev() {
            let mut acc = x[i];
            for j in i + 1..n {
                acc -= self.lu[(j, i)] * x[j];
            }
            x[i] = acc;
        }
        for k in (0..n).rev() {
            x.swap(k, self.piv[k]);
        }
        x
    }

    /// Hager-style estimate of ‖A⁻¹‖₁ from the factors.
    pub fn inv_norm_one_estimate(&self) -> f64 {
        let n = self.n();
        let mut x: Vec<C64> = vec![C64::new(1.0 / n as f64, 0.0); n];
        let mut est: f64 = 0.0;
        for _ in 0..5 {
            let y = self.solve(&x);
            let ynorm: f64 = y.iter().map(|v| v.norm()).sum();
            est = est.max(ynorm);
            let xi: Vec<C64> = y
                .iter()
                .map(|v| {
                    if v.norm() == 0.0 {
                        C64::new(1.0, 0.0)
                    } else {
                        v / v.norm()
                    }
                })
                .collect();
            let z = self.solve_transpose(&xi);
            let (mut jmax, mut zmax) = (0usize, 0.0);
            for (j, v) in z.iter().enumerate() {
                if v.norm() > zmax {
                    zmax = v.norm();
                    jmax = j;
                }
            }
            let zx: f64 = z.iter().zip(x.iter()).map(|(a, b)| (a.conj() * b).re).sum();
            if zmax <= zx.abs() + 1e-300 {
                break;
            }
            x = vec![C64::new(0.0, 0.0); n];
            x[jmax] = C64::new(1.0, 0.0);
        }
        est
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn det3_system() -> (CMat, Vec<C64>) {
        let mut a = CMat::zeros(3, 3);
        let vals = [
            (2.0, 1.0),
            (-1.0, 0.5),
            (0.3, -0.2),
            (0.0, 1.0),
            (3.0, 0.0),
            (1.0, 1.0),
            (1.0, -1.0),
            (0.5, 0.0),
            (-2.0, 0.7),
        ];
        for (idx, &(re, im)) in vals.iter().enumerate() {
            a.data[idx] = C64::new(re, im);
        }
        let x_true = vec![C64::new(1.0, 2.0), C64::new(-0.5, 0.3), C64::new(0.0, -1.0)];
        let b = a.matvec(&x_true);
        (a, b)
    }

    #[test]
    fn lu_solves_small_system() {
        let (a, b) = det3_system();
        let f = lu_factor(a).unwrap();
        let x = f.solve(&b);
        let x_true = [C64::new(1.0, 2.0), C64::new(-0.5, 0.3), C64::new(0.0, -1.0)];
        for (xi, ti) in x.iter().zip(x_true.iter()) {
            assert!((xi - ti).norm() < 1e-12);
        }
    }

    #[test]
    fn transpose_solve_consistent() {
        let (a, _) = det3_system();
        let at_b: Vec<C64> = (0..3)
            .map(|j| (0..3).map(|i| a[(i, j)] * C64::new(i as f64 + 1.0, -0.3)).sum())
            .collect();
        let f = lu_factor(a).unwrap();
        let x = f.solve_transpose(&at_b);
        for (i, xi) in x.iter().enumerate() {
            assert!((xi - C64::new(i as f64 + 1.0, -0.3)).norm() < 1e-12);
        }
    }

    #[test]
    fn identity_condition_is_one() {
        let f = lu_factor(CMat::identity(40)).unwrap();
        let est = f.inv_norm_one_estimate();
        assert!((est - 1.0).abs() < 1e-12);
    }

    #[test]
    fn random_moderate_system_residual() {
        // Deterministic pseudo-random fill.
        let n = 120;
        let mut a = CMat::zeros(n, n);
        let mut s = 0x1234_5678_u64;
        let mut rng = || {
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            ((s >> 11) as f64 / (1u64 << 53) as f64) - 0.5
        };
        for i in 0..n {
            for j in 0..n {
                a[(i, j)] = C64::new(rng(), rng());
            }
            a[(i, i)] += C64::new(6.0, 0.0);
        }
        let x_true: Vec<C64> = (0..n).map(|i| C64::new(rng() + i as f64 * 0.01, rng())).collect();
        let b = a.matvec(&x_true);
        let f = lu_factor(a.clone()).unwrap();
        let x = f.solve(&b);
        let r = a.matvec(&x);
        let mut err: f64 = 0.0;
        let mut scale: f64 = 0.0;
        for (ri, bi) in r.iter().zip(b.iter()) {
            err = err.max((ri - bi).norm());
            scale = scale.max(bi.norm());
        }
        assert!(err < 1e-11 * scale);
    }
}
