//! Test-only reference solvers and instance generators.
//!
//! The oracles here share nothing with the library's solver: they evaluate the
//! penalized Huber objective from scratch and minimize it with accelerated
//! full-gradient proximal steps.

#![allow(dead_code)]

use ndarray::{Array1, Array2};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use robust_transfer::Dataset;

pub struct OracleSolution {
    pub intercept: f64,
    pub slopes: Vec<f64>,
    pub objective: f64,
}

fn huber(t: f64, gamma: f64) -> f64 {
    if t.abs() <= gamma {
        t * t / (2.0 * gamma)
    } else {
        t.abs() - gamma / 2.0
    }
}

fn huber_grad(t: f64, gamma: f64) -> f64 {
    if t > gamma {
        1.0
    } else if t < -gamma {
        -1.0
    } else {
        t / gamma
    }
}

/// Penalized objective with the loss supplied as a closure; the intercept is
/// never penalized.
pub fn objective_with(
    x: &Array2<f64>,
    y: &Array1<f64>,
    b0: f64,
    b: &[f64],
    alpha: f64,
    lambda: f64,
    loss: impl Fn(f64) -> f64,
) -> f64 {
    let n = y.len();
    let mut total = 0.0;
    for i in 0..n {
        let mut fit = b0;
        for j in 0..b.len() {
            fit += x[[i, j]] * b[j];
        }
        total += loss(y[i] - fit);
    }
    let l1: f64 = b.iter().map(|v| v.abs()).sum();
    let l2: f64 = b.iter().map(|v| v * v).sum();
    total / n as f64 + lambda * (alpha * l1 + 0.5 * (1.0 - alpha) * l2)
}

pub fn huber_objective(
    x: &Array2<f64>,
    y: &Array1<f64>,
    b0: f64,
    b: &[f64],
    gamma: f64,
    alpha: f64,
    lambda: f64,
) -> f64 {
    objective_with(x, y, b0, b, alpha, lambda, |r| huber(r, gamma))
}

/// Largest eigenvalue of `ZᵀZ` for `Z = [1, X]`, by power iteration.
fn gram_norm(x: &Array2<f64>) -> f64 {
    let (n, p) = x.dim();
    let mut v = vec![1.0; p + 1];
    let mut est = 0.0;
    for _ in 0..500 {
        let mut zv = vec![0.0; n];
        for i in 0..n {
            zv[i] = v[0] + (0..p).map(|j| x[[i, j]] * v[j + 1]).sum::<f64>();
        }
        let mut w = vec![0.0; p + 1];
        for i in 0..n {
            w[0] += zv[i];
            for j in 0..p {
                w[j + 1] += x[[i, j]] * zv[i];
            }
        }
        let norm = w.iter().map(|a| a * a).sum::<f64>().sqrt();
        est = norm;
        v = w.into_iter().map(|a| a / norm).collect();
    }
    est * 1.01
}

/// Accelerated proximal gradient with adaptive restart on a smooth loss with
/// derivative `dloss` and curvature bound `curv`.
fn prox_gradient(
    x: &Array2<f64>,
    y: &Array1<f64>,
    alpha: f64,
    lambda: f64,
    curv: f64,
    dloss: impl Fn(f64) -> f64,
    objective: impl Fn(f64, &[f64]) -> f64,
) -> (f64, Vec<f64>, f64) {
    let (n, p) = x.dim();
    let lip = gram_norm(x) * curv / n as f64 + lambda * (1.0 - alpha);
    let step = 1.0 / lip;
    let mut theta = vec![0.0; p + 1];
    let mut mom = theta.clone();
    let mut t = 1.0f64;
    let mut f_prev = objective(theta[0], &theta[1..]);
    let mut stall = 0;
    for _ in 0..2_000_000 {
        let mut grad = vec![0.0; p + 1];
        for i in 0..n {
            let mut fit = mom[0];
            for j in 0..p {
                fit += x[[i, j]] * mom[j + 1];
            }
            let g = -dloss(y[i] - fit) / n as f64;
            grad[0] += g;
            for j in 0..p {
                grad[j + 1] += g * x[[i, j]];
            }
        }
        let mut next = vec![0.0; p + 1];
        next[0] = mom[0] - step * grad[0];
        for j in 1..=p {
            let z = mom[j] - step * (grad[j] + lambda * (1.0 - alpha) * mom[j]);
            let thr = step * lambda * alpha;
            next[j] = if z > thr {
                z - thr
            } else if z < -thr {
                z + thr
            } else {
                0.0
            };
        }
        let f_next = objective(next[0], &next[1..]);
        let moved = next
            .iter()
            .zip(&theta)
            .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
        if moved < 1e-13 {
            stall += 1;
            if stall > 50 {
                break;
            }
        } else {
            stall = 0;
        }
        if f_next > f_prev {
            if t == 1.0 {
                // a plain proximal step from the iterate no longer decreases
                // the objective: converged to rounding
                break;
            }
            // restart momentum
            t = 1.0;
            mom = theta.clone();
            continue;
        }
        let t_next = 0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt());
        for j in 0..=p {
            mom[j] = next[j] + (t - 1.0) / t_next * (next[j] - theta[j]);
        }
        theta = next;
        t = t_next;
        f_prev = f_next;
    }
    let obj = objective(theta[0], &theta[1..]);
    (theta[0], theta[1..].to_vec(), obj)
}

pub fn huber_oracle(
    x: &Array2<f64>,
    y: &Array1<f64>,
    gamma: f64,
    alpha: f64,
    lambda: f64,
) -> OracleSolution {
    let (intercept, slopes, objective) = prox_gradient(
        x,
        y,
        alpha,
        lambda,
        1.0 / gamma,
        |r| huber_grad(r, gamma),
        |b0, b| huber_objective(x, y, b0, b, gamma, alpha, lambda),
    );
    OracleSolution {
        intercept,
        slopes,
        objective,
    }
}

/// Elastic-net least squares, `(1/2n)‖r‖² + λP_α`.
pub fn least_squares_oracle(
    x: &Array2<f64>,
    y: &Array1<f64>,
    alpha: f64,
    lambda: f64,
) -> OracleSolution {
    let (intercept, slopes, objective) = prox_gradient(
        x,
        y,
        alpha,
        lambda,
        1.0,
        |r| r,
        |b0, b| objective_with(x, y, b0, b, alpha, lambda, |r| 0.5 * r * r),
    );
    OracleSolution {
        intercept,
        slopes,
        objective,
    }
}

/// Gaussian design, sparse truth, Gaussian noise with an occasional gross
/// outlier.
pub fn random_instance(seed: u64, n: usize, p: usize) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut normal = || -> f64 { StandardNormal.sample(&mut rng) };
    let x = Array2::from_shape_fn((n, p), |_| normal());
    let beta: Vec<f64> = (0..p)
        .map(|j| if j % 2 == 0 { 1.5 / (j + 1) as f64 } else { 0.0 })
        .collect();
    let mut y = Array1::zeros(n);
    for i in 0..n {
        y[i] = 0.5 + (0..p).map(|j| x[[i, j]] * beta[j]).sum::<f64>() + 0.5 * normal();
    }
    if n > 10 {
        y[seed as usize % n] += 15.0;
    }
    Dataset::new(y, x, format!("instance-{seed}")).unwrap()
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).fold(0.0f64, |m, (u, v)| m.max((u - v).abs()))
}
