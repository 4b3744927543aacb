//! Ridge regression and L2-penalized logistic regression.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};

use crate::error::{Error, Result};
use crate::linalg::{gram, xt_vec, Cholesky};
use crate::scalar::Scalar;

/// Stopping tolerance on the Euclidean norm of the logistic gradient.
pub const LOGISTIC_GRAD_TOL: f64 = 1e-8;
/// Maximum number of step halvings per Newton iteration.
pub const MAX_HALVINGS: usize = 30;

/// Solves `(XcᵀXc + λI)β = Xcᵀyc` on centered data and recovers the
/// intercept, i.e. ridge with an unpenalized intercept. Returns
/// `(intercept, coefficients)`.
pub fn fit_ridge<F: Scalar>(x: ArrayView2<F>, y: ArrayView1<F>, lambda: F) -> Result<(F, Array1<F>)> {
    let n = F::of(x.nrows() as f64);
    let x_mean = x.sum_axis(Axis(0)) / n;
    let y_mean = y.iter().copied().sum::<F>() / n;
    if x.ncols() == 0 {
        return Ok((y_mean, Array1::zeros(0)));
    }
    let xc = &x - &x_mean.view().insert_axis(Axis(0));
    let yc = y.mapv(|v| v - y_mean);
    let mut g = gram(xc.view());
    for j in 0..g.nrows() {
        g[[j, j]] += lambda;
    }
    let rhs = xt_vec(xc.view(), yc.view());
    let beta = Cholesky::factor(g.view(), "ridge normal equations")?.solve(rhs.view());
    let intercept = y_mean - x_mean.dot(&beta);
    Ok((intercept, beta))
}

/// `[1, x]` design rows.
fn augmented<F: Scalar>(x: ArrayView2<F>) -> Array2<F> {
    let mut a = Array2::<F>::ones((x.nrows(), x.ncols() + 1));
    a.slice_mut(ndarray::s![.., 1..]).assign(&x);
    a
}

#[inline]
fn softplus<F: Scalar>(s: F) -> F {
    if s > F::zero() {
        s + (-s).exp().ln_1p()
    } else {
        s.exp().ln_1p()
    }
}

/// Penalized negative log-likelihood
/// `Σ_i [log(1 + e^{s_i}) − t_i s_i] + (l2/2)‖b‖²` with `s_i = b₀ + wᵀx_i`
/// and `b = [b₀, w]`. The intercept is penalized too, which keeps the
/// optimum finite for constant or separable labels.
pub fn logistic_objective<F: Scalar>(x: ArrayView2<F>, t: ArrayView1<F>, b: ArrayView1<F>, l2: F) -> F {
    let mut total = F::zero();
    for (row, &ti) in x.rows().into_iter().zip(t.iter()) {
        let s = b[0] + row.dot(&b.slice(ndarray::s![1..]));
        total += softplus(s) - ti * s;
    }
    total + F::of(0.5) * l2 * b.dot(&b)
}

/// Gradient of [`logistic_objective`] with respect to `b`.
pub fn logistic_gradient<F: Scalar>(x: ArrayView2<F>, t: ArrayView1<F>, b: ArrayView1<F>, l2: F) -> Array1<F> {
    let a = augmented(x);
    let p = a.dot(&b).mapv(Scalar::expit);
    let resid = &p - &t;
    xt_vec(a.view(), resid.view()) + &b.mapv(|v| v * l2)
}

/// Damped Newton iterations on [`logistic_objective`]. Stops when the
/// gradient norm reaches [`LOGISTIC_GRAD_TOL`], after `max_iter` iterations,
/// or when no step length among `MAX_HALVINGS` halvings decreases the
/// objective. Returns `(intercept, coefficients, iterations)`.
pub fn fit_logistic<F: Scalar>(
    x: ArrayView2<F>,
    t: ArrayView1<F>,
    l2: F,
    max_iter: usize,
) -> Result<(F, Array1<F>, usize)> {
    let a = augmented(x);
    let p_dim = a.ncols();
    let mut b = Array1::<F>::zeros(p_dim);
    let mut objective = logistic_objective(x, t, b.view(), l2);
    let mut iters = 0;
    while iters < max_iter {
        let probs = a.dot(&b).mapv(Scalar::expit);
        let resid = &probs - &t;
        let grad = xt_vec(a.view(), resid.view()) + &b.mapv(|v| v * l2);
        if grad.dot(&grad).sqrt() <= F::of(LOGISTIC_GRAD_TOL) {
            break;
        }
        iters += 1;
        let mut hess = Array2::<F>::zeros((p_dim, p_dim));
        for (row, &pi) in a.rows().into_iter().zip(probs.iter()) {
            let w = pi * (F::one() - pi);
            if w == F::zero() {
                continue;
            }
            for i in 0..p_dim {
                let wi = w * row[i];
                for j in i..p_dim {
                    hess[[i, j]] += wi * row[j];
                }
            }
        }
        for i in 0..p_dim {
            hess[[i, i]] += l2;
            for j in 0..i {
                hess[[i, j]] = hess[[j, i]];
            }
        }
        let step = Cholesky::factor(hess.view(), "logistic Newton step")?.solve(grad.view());
        let grad_norm = grad.dot(&grad).sqrt();
        // near the optimum the decrease drops below rounding; fall back to
        // requiring a smaller gradient at no higher objective
        let flat = F::of(64.0) * F::epsilon() * objective.abs().max(F::one());
        let mut scale = F::one();
        let mut accepted = false;
        for _ in 0..=MAX_HALVINGS {
            let cand = &b - &step.mapv(|v| v * scale);
            let obj = logistic_objective(x, t, cand.view(), l2);
            let improves = obj < objective
                || (obj <= objective + flat && {
                    let g = logistic_gradient(x, t, cand.view(), l2);
                    g.dot(&g).sqrt() < grad_norm
                });
            if improves {
                b = cand;
                objective = obj;
                accepted = true;
                break;
            }
            scale *= F::of(0.5);
        }
        if !accepted {
            break;
        }
    }
    if b.iter().any(|v| !v.is_finite()) {
        return Err(Error::Singular("logistic regression"));
    }
    let intercept = b[0];
    Ok((intercept, b.slice(ndarray::s![1..]).to_owned(), iters))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::{Rng, SeedableRng};

    #[test]
    fn ridge_exact_line() {
        let x = array![[1.0f64], [2.0], [3.0]];
        let y = array![2.0, 4.0, 6.0];
        let (b0, b) = fit_ridge(x.view(), y.view(), 0.0).unwrap();
        assert!(b0.abs() < 1e-12);
        assert!((b[0] - 2.0).abs() < 1e-12);
    }

    #[test]
    fn ridge_collinear_without_penalty_is_singular() {
        let x = array![[1.0, 2.0], [2.0, 4.0], [3.0, 6.0]];
        let y = array![1.0, 2.0, 3.0];
        assert!(fit_ridge(x.view(), y.view(), 0.0).is_err());
        assert!(fit_ridge(x.view(), y.view(), 0.1).is_ok());
    }

    #[test]
    fn ridge_perturbation_increases_objective() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let x = Array2::from_shape_fn((40, 3), |_| rng.random::<f64>() - 0.5);
        let y = Array1::from_shape_fn(40, |i| x[[i, 0]] - 2.0 * x[[i, 2]] + rng.random::<f64>());
        let lambda = 0.7;
        let (b0, b) = fit_ridge(x.view(), y.view(), lambda).unwrap();
        let objective = |b0: f64, b: &Array1<f64>| {
            let r = &y - &(x.dot(b) + b0);
            r.dot(&r) + lambda * b.dot(b)
        };
        let base = objective(b0, &b);
        for _ in 0..50 {
            let delta = Array1::from_shape_fn(3, |_| (rng.random::<f64>() - 0.5) * 1e-3);
            let d0 = (rng.random::<f64>() - 0.5) * 1e-3;
            assert!(objective(b0 + d0, &(&b + &delta)) > base);
        }
    }

    #[test]
    fn logistic_symmetric_zero_design() {
        let x = Array2::<f64>::zeros((6, 2));
        let t = array![0.0, 1.0, 0.0, 1.0, 1.0, 0.0];
        let (b0, w, _) = fit_logistic(x.view(), t.view(), 1e-3, 100).unwrap();
        assert!(b0.abs() < 1e-12);
        assert!(w.iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn logistic_constant_labels_stay_finite() {
        let x = array![[0.1f64], [0.4], [-0.3], [1.2]];
        let t = array![1.0, 1.0, 1.0, 1.0];
        let (b0, w, _) = fit_logistic(x.view(), t.view(), 1e-3, 200).unwrap();
        assert!(b0.is_finite() && b0 > 3.0);
        assert!(w[0].is_finite());
    }

    #[test]
    fn logistic_reaches_gradient_tolerance() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        let x = Array2::from_shape_fn((300, 2), |_| rng.random::<f64>() * 2.0 - 1.0);
        let t = Array1::from_shape_fn(300, |i| {
            let p = Scalar::expit(0.3 + 1.5 * x[[i, 0]] - x[[i, 1]]);
            if rng.random::<f64>() < p {
                1.0
            } else {
                0.0
            }
        });
        let (b0, w, iters) = fit_logistic(x.view(), t.view(), 1e-3, 100).unwrap();
        assert!(iters < 100);
        let b = array![b0, w[0], w[1]];
        let g = logistic_gradient(x.view(), t.view(), b.view(), 1e-3);
        assert!(g.dot(&g).sqrt() <= LOGISTIC_GRAD_TOL);
    }
}
