//! Cholesky factorization of symmetric positive-definite band matrices.

use nalgebra::{DMatrix, DVector};

use crate::error::{DekiError, Result};

/// Lower band of an `n x n` SPD matrix with half bandwidth `bw`.
/// Row `i` stores entries `(i, i - bw) ..= (i, i)`; slots left of column 0
/// are unused.
#[derive(Debug, Clone)]
pub struct BandMatrix {
    n: usize,
    bw: usize,
    data: Vec<f64>,
}

impl BandMatrix {
    pub fn zeros(n: usize, bw: usize) -> Self {
        Self {
            n,
            bw,
            data: vec![0.0; n * (bw + 1)],
        }
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn bandwidth(&self) -> usize {
        self.bw
    }

    fn slot(&self, i: usize, j: usize) -> usize {
        debug_assert!(j <= i && i - j <= self.bw);
        i * (self.bw + 1) + (self.bw + j - i)
    }

    /// Entry `(i, j)` of the full symmetric matrix.
    pub fn get(&self, i: usize, j: usize) -> f64 {
        let (hi, lo) = if i >= j { (i, j) } else { (j, i) };
        if hi - lo > self.bw {
            0.0
        } else {
            self.data[self.slot(hi, lo)]
        }
    }

    /// Sets `(i, j)` and, implicitly, `(j, i)`.
    pub fn set(&mut self, i: usize, j: usize, value: f64) {
        let (hi, lo) = if i >= j { (i, j) } else { (j, i) };
        assert!(hi - lo <= self.bw, "entry ({i}, {j}) outside the band");
        let s = self.slot(hi, lo);
        self.data[s] = value;
    }

    pub fn mul_vec(&self, x: &DVector<f64>) -> DVector<f64> {
        let mut y = DVector::zeros(self.n);
        for i in 0..self.n {
            let lo = i.saturating_sub(self.bw);
            for j in lo..i {
                let v = self.data[self.slot(i, j)];
                y[i] += v * x[j];
                y[j] += v * x[i];
            }
            y[i] += self.data[self.slot(i, i)] * x[i];
        }
        y
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        DMatrix::from_fn(self.n, self.n, |i, j| self.get(i, j))
    }

    pub fn cholesky(&self) -> Result<BandCholesky> {
        let (n, bw) = (self.n, self.bw);
        let mut l = self.clone();
        for i in 0..n {
            let lo = i.saturating_sub(bw);
            for j in lo..=i {
                let kmin = lo.max(j.saturating_sub(bw));
                let mut sum = l.data[l.slot(i, j)];
                for k in kmin..j {
                    sum -= l.data[l.slot(i, k)] * l.data[l.slot(j, k)];
                }
                let s = l.slot(i, j);
                if i == j {
                    if !(sum > 0.0) {
                        return Err(DekiError::NotPositiveDefinite(format!(
                            "band matrix pivot {i} is {sum}"
                        )));
                    }
                    l.data[s] = sum.sqrt();
                } else {
                    l.data[s] = sum / l.data[l.slot(j, j)];
                }
            }
        }
        Ok(BandCholesky { factor: l })
    }
}

/// `M = L L^T` with `L` banded lower triangular.
#[derive(Debug, Clone)]
pub struct BandCholesky {
    factor: BandMatrix,
}

impl BandCholesky {
    pub fn dim(&self) -> usize {
        self.factor.n
    }

    pub fn solve_in_place(&self, b: &mut [f64]) {
        let l = &self.factor;
        let (n, bw) = (l.n, l.bw);
        assert_eq!(b.len(), n);
        for i in 0..n {
            let mut s = b[i];
            for k in i.saturating_sub(bw)..i {
                s -= l.data[l.slot(i, k)] * b[k];
            }
            b[i] = s / l.data[l.slot(i, i)];
        }
        for i in (0..n).rev() {
            let mut s = b[i];
            for k in (i + 1)..n.min(i + bw + 1) {
                s -= l.data[l.slot(k, i)] * b[k];
            }
            b[i] = s / l.data[l.slot(i, i)];
        }
    }

    pub fn solve(&self, rhs: &DVector<f64>) -> DVector<f64> {
        let mut x = rhs.clone();
        self.solve_in_place(x.as_mut_slice());
        x
    }

    /// Dense `M^{-1}`, one column per unit vector.
    pub fn inverse(&self) -> DMatrix<f64> {
        let n = self.dim();
        let mut inv = DMatrix::identity(n, n);
        for mut col in inv.column_iter_mut() {
            self.solve_in_place(col.as_mut_slice());
        }
        // symmetrize away rounding so row and column reads agree
        (&inv + inv.transpose()) * 0.5
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;
    use rand::Rng;

    fn random_spd_band(n: usize, bw: usize, seed: u64) -> BandMatrix {
        let mut rng = seeded(seed);
        let mut m = BandMatrix::zeros(n, bw);
        for i in 0..n {
            let mut off = 0.0;
            for j in i.saturating_sub(bw)..i {
                let v: f64 = rng.random_range(-1.0..1.0);
                m.set(i, j, v);
                off += v.abs();
            }
            m.set(i, i, 2.0 * bw as f64 + 1.0 + off);
        }
        m
    }

    #[test]
    fn solve_matches_dense_cholesky() {
        for (n, bw) in [(1, 0), (5, 1), (12, 3), (30, 7)] {
            let m = random_spd_band(n, bw, n as u64);
            let rhs = DVector::from_fn(n, |i, _| (i as f64 * 0.7).sin());
            let x = m.cholesky().unwrap().solve(&rhs);
            let dense = m.to_dense().cholesky().unwrap().solve(&rhs);
            assert!((x - dense).norm() < 1e-12, "n={n}");
        }
    }

    #[test]
    fn mul_vec_matches_dense() {
        let m = random_spd_band(9, 2, 4);
        let x = DVector::from_fn(9, |i, _| i as f64 - 3.0);
        assert!((m.mul_vec(&x) - m.to_dense() * &x).norm() < 1e-12);
    }

    #[test]
    fn inverse_times_matrix_is_identity() {
        let m = random_spd_band(15, 4, 8);
        let inv = m.cholesky().unwrap().inverse();
        assert!((m.to_dense() * inv - DMatrix::identity(15, 15)).amax() < 1e-12);
    }

    #[test]
    fn indefinite_matrix_is_rejected() {
        let mut m = BandMatrix::zeros(2, 1);
        m.set(0, 0, 1.0);
        m.set(1, 1, 1.0);
        m.set(1, 0, 2.0);
        assert!(matches!(
            m.cholesky(),
            Err(DekiError::NotPositiveDefinite(_))
        ));
    }
}
