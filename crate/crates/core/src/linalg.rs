//! Dense symmetric positive-definite solves for the small systems that
//! appear here (normal equations, Newton steps, sandwich covariance).

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Lower-triangular Cholesky factor `L` with `A = L Lᵀ`.
#[derive(Debug, Clone)]
pub struct Cholesky<F> {
    l: Array2<F>,
}

/// Pivots below this fraction of the largest diagonal entry count as zero.
const RELATIVE_PIVOT_TOL: f64 = 1e-12;

impl<F: Scalar> Cholesky<F> {
    pub fn factor(a: ArrayView2<F>, what: &'static str) -> Result<Self> {
        let p = a.nrows();
        if a.ncols() != p {
            return Err(Error::DimensionMismatch { expected: p, got: a.ncols() });
        }
        let scale = a.diag().iter().fold(F::zero(), |m, &v| m.max(v.abs()));
        let tol = F::of(RELATIVE_PIVOT_TOL) * scale;
        let mut l = Array2::<F>::zeros((p, p));
        for j in 0..p {
            let mut diag = a[[j, j]];
            for k in 0..j {
                diag -= l[[j, k]] * l[[j, k]];
            }
            if !(diag > tol) || scale == F::zero() {
                return Err(Error::Singular(what));
            }
            let ljj = diag.sqrt();
            l[[j, j]] = ljj;
            for i in (j + 1)..p {
                let mut s = a[[i, j]];
                for k in 0..j {
                    s -= l[[i, k]] * l[[j, k]];
                }
                l[[i, j]] = s / ljj;
            }
        }
        Ok(Self { l })
    }

    pub fn solve(&self, b: ArrayView1<F>) -> Array1<F> {
        let p = self.l.nrows();
        let mut z = b.to_owned();
        for i in 0..p {
            let mut s = z[i];
            for k in 0..i {
                s -= self.l[[i, k]] * z[k];
            }
            z[i] = s / self.l[[i, i]];
        }
        for i in (0..p).rev() {
            let mut s = z[i];
            for k in (i + 1)..p {
                s -= self.l[[k, i]] * z[k];
            }
            z[i] = s / self.l[[i, i]];
        }
        z
    }

    pub fn inverse(&self) -> Array2<F> {
        let p = self.l.nrows();
        let mut inv = Array2::<F>::zeros((p, p));
        let mut e = Array1::<F>::zeros(p);
        for j in 0..p {
            e.fill(F::zero());
            e[j] = F::one();
            let col = self.solve(e.view());
            inv.column_mut(j).assign(&col);
        }
        // Symmetrize away rounding asymmetry.
        for i in 0..p {
            for j in (i + 1)..p {
                let v = (inv[[i, j]] + inv[[j, i]]) * F::of(0.5);
                inv[[i, j]] = v;
                inv[[j, i]] = v;
            }
        }
        inv
    }
}

/// `XᵀX` accumulated row by row in index order.
pub fn gram<F: Scalar>(x: ArrayView2<F>) -> Array2<F> {
    let p = x.ncols();
    let mut g = Array2::<F>::zeros((p, p));
    for row in x.rows() {
        for i in 0..p {
            let ri = row[i];
            if ri == F::zero() {
                continue;
            }
            for j in i..p {
                g[[i, j]] += ri * row[j];
            }
        }
    }
    for i in 0..p {
        for j in 0..i {
            g[[i, j]] = g[[j, i]];
        }
    }
    g
}

/// `Xᵀv` accumulated row by row in index order.
pub fn xt_vec<F: Scalar>(x: ArrayView2<F>, v: ArrayView1<F>) -> Array1<F> {
    let mut out = Array1::<F>::zeros(x.ncols());
    for (row, &vi) in x.rows().into_iter().zip(v.iter()) {
        for (o, &r) in out.iter_mut().zip(row.iter()) {
            *o += r * vi;
        }
    }
    out
}

/// Quadratic form `aᵀ M a`.
pub fn quad_form<F: Scalar>(m: ArrayView2<F>, a: ArrayView1<F>) -> F {
    let mut s = F::zero();
    for i in 0..a.len() {
        for j in 0..a.len() {
            s += a[i] * m[[i, j]] * a[j];
        }
    }
    s
}
