//! Regularized linear baselines: ridge regression (closed form) and
//! L2-regularized logistic regression (damped Newton). The intercept is
//! never penalized.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::learners::{FeatureMatrix, LearnerConfig};
use crate::metrics::Predictions;
use crate::table::Task;

const MAX_ITER: usize = 1000;
const REL_GRAD_TOL: f64 = 1e-8;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LinearModel {
    pub task: Task,
    pub n_features: usize,
    pub n_classes: usize,
    /// (p+1) coefficients per output (intercept last); multiclass stores one
    /// block per class, row-major.
    pub weights: Vec<f64>,
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// ln(1 + e^z) without overflow.
fn log1p_exp(z: f64) -> f64 {
    z.max(0.0) + (-z.abs()).exp().ln_1p()
}

/// Design matrix [X | 1]; missing cells imputed with 0 (with a warning —
/// pipelines are expected to impute upstream).
fn design(x: &FeatureMatrix) -> Result<DMatrix<f64>> {
    let x = if x.has_missing() {
        log::warn!("linear learner imputing missing feature values with 0");
        x.fill_missing(0.0)
    } else {
        x.clone()
    };
    if x.columns.iter().any(|c| c.iter().any(|v| !v.is_finite())) {
        return Err(Error::NonFiniteInput);
    }
    let p = x.n_features();
    Ok(DMatrix::from_fn(x.n_rows, p + 1, |r, c| {
        if c == p {
            1.0
        } else {
            x.columns[c][r]
        }
    }))
}

fn solve_spd(a: &DMatrix<f64>, b: &DVector<f64>) -> Result<DVector<f64>> {
    if let Some(chol) = a.clone().cholesky() {
        return Ok(chol.solve(b));
    }
    a.clone()
        .lu()
        .solve(b)
        .ok_or(Error::NonFiniteInput)
}

/// Penalty matrix diag(α,…,α,0): the intercept column stays free.
fn penalty(dim: usize, alpha: f64) -> DMatrix<f64> {
    let mut p = DMatrix::zeros(dim, dim);
    for i in 0..dim - 1 {
        p[(i, i)] = alpha;
    }
    // tiny jitter keeps the system solvable at alpha = 0
    for i in 0..dim {
        p[(i, i)] += 1e-12;
    }
    p
}

pub fn fit(
    cfg: &LearnerConfig,
    task: Task,
    x: &FeatureMatrix,
    y: &[f64],
) -> Result<LinearModel> {
    let alpha = cfg.f64_param("alpha", 1.0)?;
    let z = design(x)?;
    let dim = z.ncols();
    let weights = match task {
        Task::Regression => {
            let yv = DVector::from_column_slice(y);
            let a = z.transpose() * &z + penalty(dim, alpha);
            let b = z.transpose() * yv;
            solve_spd(&a, &b)?.as_slice().to_vec()
        }
        Task::Binary => fit_logistic_binary(&z, y, alpha)?,
        Task::Multiclass(k) => fit_logistic_multi(&z, y, k, alpha)?,
    };
    Ok(LinearModel {
        task,
        n_features: x.n_features(),
        n_classes: task.n_classes(),
        weights,
    })
}

fn binary_loss(z: &DMatrix<f64>, y: &[f64], theta: &DVector<f64>, alpha: f64) -> f64 {
    let f = z * theta;
    let data: f64 = f
        .iter()
        .zip(y)
        .map(|(&fi, &yi)| log1p_exp(fi) - yi * fi)
        .sum();
    let w2: f64 = theta.iter().take(theta.len() - 1).map(|w| w * w).sum();
    data + 0.5 * alpha * w2
}

fn fit_logistic_binary(z: &DMatrix<f64>, y: &[f64], alpha: f64) -> Result<Vec<f64>> {
    let dim = z.ncols();
    let n = z.nrows();
    let mut theta = DVector::zeros(dim);
    let pen = penalty(dim, alpha);
    let mut g0_norm = None;
    for _ in 0..MAX_ITER {
        let f = z * &theta;
        let p: Vec<f64> = f.iter().map(|&v| sigmoid(v)).collect();
        let resid = DVector::from_iterator(n, p.iter().zip(y).map(|(&pi, &yi)| pi - yi));
        let mut grad = z.transpose() * resid;
        for i in 0..dim - 1 {
            grad[i] += alpha * theta[i];
        }
        let gnorm = grad.norm();
        let g0 = *g0_norm.get_or_insert(gnorm.max(1.0));
        if gnorm <= REL_GRAD_TOL * g0 {
            break;
        }
        // X' diag(p(1-p)) X + penalty
        let mut h = pen.clone();
        for r in 0..n {
            let w = (p[r] * (1.0 - p[r])).max(1e-12);
            for i in 0..dim {
                let zi = z[(r, i)] * w;
                for j in i..dim {
                    h[(i, j)] += zi * z[(r, j)];
                }
            }
        }
        for i in 0..dim {
            for j in 0..i {
                h[(i, j)] = h[(j, i)];
            }
        }
        let step = solve_spd(&h, &grad)?;
        // damped Newton: halve until the loss decreases
        let base = binary_loss(z, y, &theta, alpha);
        let mut t = 1.0;
        let mut cand = &theta - &step * t;
        while binary_loss(z, y, &cand, alpha) > base && t > 1e-10 {
            t *= 0.5;
            cand = &theta - &step * t;
        }
        theta = cand;
    }
    if theta.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFiniteInput);
    }
    Ok(theta.as_slice().to_vec())
}

fn softmax_rows(f: &DMatrix<f64>) -> DMatrix<f64> {
    let mut p = f.clone();
    for mut row in p.row_iter_mut() {
        let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut s = 0.0;
        for v in row.iter_mut() {
            *v = (*v - m).exp();
            s += *v;
        }
        for v in row.iter_mut() {
            *v /= s;
        }
    }
    p
}

fn multi_loss(
    z: &DMatrix<f64>,
    y: &[f64],
    theta: &DMatrix<f64>, // dim × k
    alpha: f64,
) -> f64 {
    let f = z * theta;
    let p = softmax_rows(&f);
    let data: f64 = y
        .iter()
        .enumerate()
        .map(|(r, &yr)| -p[(r, yr as usize)].max(1e-300).ln())
        .sum();
    let dim = theta.nrows();
    let w2: f64 = (0..dim - 1)
        .map(|i| theta.row(i).iter().map(|w| w * w).sum::<f64>())
        .sum();
    data + 0.5 * alpha * w2
}

/// Softmax regression: full Newton on the flattened parameter vector while
/// the system stays small, gradient descent with backtracking otherwise.
fn fit_logistic_multi(
    z: &DMatrix<f64>,
    y: &[f64],
    k: usize,
    alpha: f64,
) -> Result<Vec<f64>> {
    let dim = z.ncols();
    let n = z.nrows();
    let flat = dim * k;
    let use_newton = flat <= 2000;
    let mut theta = DMatrix::<f64>::zeros(dim, k);
    let mut g0_norm: Option<f64> = None;
    for _ in 0..MAX_ITER {
        let p = softmax_rows(&(z * &theta));
        // gradient: Z'(P − Y) + α·θ (intercept row free)
        let mut grad: DMatrix<f64> = DMatrix::zeros(dim, k);
        for r in 0..n {
            let yr = y[r] as usize;
            for c in 0..k {
                let e = p[(r, c)] - if c == yr { 1.0 } else { 0.0 };
                for i in 0..dim {
                    grad[(i, c)] += z[(r, i)] * e;
                }
            }
        }
        for i in 0..dim - 1 {
            for c in 0..k {
                grad[(i, c)] += alpha * theta[(i, c)];
            }
        }
        let gnorm = grad.norm();
        let g0 = *g0_norm.get_or_insert(gnorm.max(1.0));
        if gnorm <= REL_GRAD_TOL * g0 {
            break;
        }
        let step = if use_newton {
            // H[(i,c),(j,d)] = Σ_r z_ri z_rj p_rc (δ_cd − p_rd) + penalty
            let mut h = DMatrix::zeros(flat, flat);
            for r in 0..n {
                for c in 0..k {
                    for d in 0..k {
                        let w = p[(r, c)] * ((c == d) as u8 as f64 - p[(r, d)]);
                        if w == 0.0 {
                            continue;
                        }
                        for i in 0..dim {
                            let zi = z[(r, i)] * w;
                            for j in 0..dim {
                                h[(c * dim + i, d * dim + j)] += zi * z[(r, j)];
                            }
                        }
                    }
                }
            }
            for c in 0..k {
                for i in 0..dim {
                    h[(c * dim + i, c * dim + i)] +=
                        if i == dim - 1 { 1e-9 } else { alpha + 1e-9 };
                }
            }
            let gflat = DVector::from_iterator(
                flat,
                (0..k).flat_map(|c| (0..dim).map(move |i| (i, c))).map(|(i, c)| grad[(i, c)]),
            );
            let s = solve_spd(&h, &gflat)?;
            DMatrix::from_fn(dim, k, |i, c| s[c * dim + i])
        } else {
            // scaled gradient step
            &grad / (gnorm.max(1.0) / (n as f64).sqrt())
        };
        let base = multi_loss(z, y, &theta, alpha);
        let mut t = 1.0;
        let mut cand = &theta - &step * t;
        while multi_loss(z, y, &cand, alpha) > base && t > 1e-10 {
            t *= 0.5;
            cand = &theta - &step * t;
        }
        theta = cand;
    }
    if theta.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFiniteInput);
    }
    // flatten class-major: class c block = coefficients + intercept
    let mut w = Vec::with_capacity(flat);
    for c in 0..k {
        for i in 0..dim {
            w.push(theta[(i, c)]);
        }
    }
    Ok(w)
}

pub fn predict(m: &LinearModel, x: &FeatureMatrix) -> Result<Predictions> {
    let z = design(x)?;
    let dim = m.n_features + 1;
    match m.task {
        Task::Regression => {
            let theta = DVector::from_column_slice(&m.weights);
            Ok(Predictions::single((z * theta).as_slice().to_vec()))
        }
        Task::Binary => {
            let theta = DVector::from_column_slice(&m.weights);
            let f = z * theta;
            Ok(Predictions::single(f.iter().map(|&v| sigmoid(v)).collect()))
        }
        Task::Multiclass(k) => {
            let theta = DMatrix::from_fn(dim, k, |i, c| m.weights[c * dim + i]);
            let p = softmax_rows(&(z * theta));
            let mut values = Vec::with_capacity(x.n_rows * k);
            for r in 0..x.n_rows {
                for c in 0..k {
                    values.push(p[(r, c)]);
                }
            }
            Predictions::new(values, k)
        }
    }
}
