//! Small dense real solvers used by the filter fits.

use ndarray::{Array1, Array2};

use crate::error::{Error, Result};
use crate::scalar::Real;

/// LU factorization with partial pivoting of a square matrix.
#[derive(Debug, Clone)]
pub struct Lu<T> {
    lu: Array2<T>,
    perm: Vec<usize>,
}

impl<T: Real> Lu<T> {
    /// Factorizes `a`. A pivot below `n * eps * max|a|` is reported as
    /// [`Error::Singular`].
    pub fn new(a: &Array2<T>) -> Result<Self> {
        let n = a.nrows();
        if a.ncols() != n {
            return Err(Error::ShapeMismatch(format!(
                "LU needs a square matrix, got {}x{}",
                n,
                a.ncols()
            )));
        }
        let mut lu = a.clone();
        let scale = lu.iter().fold(T::zero(), |m, v| m.max(v.abs()));
        if !scale.is_finite() {
            return Err(Error::NonFinite("matrix"));
        }
        let tol = T::of(n.max(1) as f64) * T::epsilon() * scale;
        let mut perm: Vec<usize> = (0..n).collect();
        for k in 0..n {
            let (piv, pmax) = (k..n)
                .map(|i| (i, lu[[i, k]].abs()))
                .fold((k, -T::one()), |acc, c| if c.1 > acc.1 { c } else { acc });
            if pmax <= tol || scale == T::zero() {
                return Err(Error::Singular);
            }
            if piv != k {
                for j in 0..n {
                    lu.swap([k, j], [piv, j]);
                }
                perm.swap(k, piv);
            }
            let d = lu[[k, k]];
            for i in k + 1..n {
                let f = lu[[i, k]] / d;
                lu[[i, k]] = f;
                if f != T::zero() {
                    for j in k + 1..n {
                        let v = lu[[k, j]];
                        lu[[i, j]] -= f * v;
                    }
                }
            }
        }
        Ok(Self { lu, perm })
    }

    pub fn solve(&self, b: &Array1<T>) -> Array1<T> {
        let n = self.lu.nrows();
        let mut x: Array1<T> = self.perm.iter().map(|&p| b[p]).collect();
        for i in 0..n {
            let mut s = x[i];
            for j in 0..i {
                s -= self.lu[[i, j]] * x[j];
            }
            x[i] = s;
        }
        for i in (0..n).rev() {
            let mut s = x[i];
            for j in i + 1..n {
                s -= self.lu[[i, j]] * x[j];
            }
            x[i] = s / self.lu[[i, i]];
        }
        x
    }

    pub fn inverse(&self) -> Array2<T> {
        let n = self.lu.nrows();
        let mut inv = Array2::zeros((n, n));
        for j in 0..n {
            let mut e = Array1::zeros(n);
            e[j] = T::one();
            inv.column_mut(j).assign(&self.solve(&e));
        }
        inv
    }
}

pub fn solve<T: Real>(a: &Array2<T>, b: &Array1<T>) -> Result<Array1<T>> {
    Ok(Lu::new(a)?.solve(b))
}

pub fn inverse<T: Real>(a: &Array2<T>) -> Result<Array2<T>> {
    Ok(Lu::new(a)?.inverse())
}
