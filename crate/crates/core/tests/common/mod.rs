//! Independent reference implementations used as test oracles. Everything here
//! is written with plain loops over `Vec<f64>` and dense matrices so that it
//! shares no code path with the library.

#![allow(dead_code)]

use bayespcn::gaussian::{HiddenLayerPosterior, TopLayerPosterior};
use bayespcn::model::{ActivationStack, NetworkShape, Particle};
use bayespcn::Activation;
use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn normal(rng: &mut impl Rng) -> f64 {
    StandardNormal.sample(rng)
}

pub fn random_vec(rng: &mut impl Rng, n: usize, scale: f64) -> Array1<f64> {
    Array1::from_shape_simple_fn(n, || scale * normal(rng))
}

pub fn random_mat(rng: &mut impl Rng, r: usize, c: usize, scale: f64) -> Array2<f64> {
    Array2::from_shape_simple_fn((r, c), || scale * normal(rng))
}

/// Random symmetric positive-definite matrix `A A^T / n + jitter I`.
pub fn random_spd(rng: &mut impl Rng, n: usize, jitter: f64) -> Array2<f64> {
    let a = random_mat(rng, n, n, 1.0);
    let mut s = a.dot(&a.t()) / n as f64;
    for i in 0..n {
        s[[i, i]] += jitter;
    }
    s
}

/// Dense matrix inverse by Gauss-Jordan elimination with partial pivoting.
pub fn inverse(m: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let n = m.len();
    let mut a: Vec<Vec<f64>> = m
        .iter()
        .enumerate()
        .map(|(i, row)| {
            let mut r = row.clone();
            r.extend((0..n).map(|j| if i == j { 1.0 } else { 0.0 }));
            r
        })
        .collect();
    for col in 0..n {
        let pivot = (col..n)
            .max_by(|&x, &y| a[x][col].abs().partial_cmp(&a[y][col].abs()).unwrap())
            .unwrap();
        a.swap(col, pivot);
        let p = a[col][col];
        assert!(p.abs() > 1e-300, "singular matrix");
        for v in a[col].iter_mut() {
            *v /= p;
        }
        for r in 0..n {
            if r != col {
                let f = a[r][col];
                if f != 0.0 {
                    for c in 0..2 * n {
                        a[r][c] -= f * a[col][c];
                    }
                }
            }
        }
    }
    a.into_iter().map(|r| r[n..].to_vec()).collect()
}

/// Lower Cholesky factor of a symmetric positive-definite matrix.
pub fn cholesky(m: &Array2<f64>) -> Array2<f64> {
    let n = m.nrows();
    let mut l = Array2::<f64>::zeros((n, n));
    for i in 0..n {
        for j in 0..=i {
            let mut s = m[[i, j]];
            for k in 0..j {
                s -= l[[i, k]] * l[[j, k]];
            }
            if i == j {
                l[[i, i]] = s.max(0.0).sqrt();
            } else {
                l[[i, j]] = s / l[[j, j]];
            }
        }
    }
    l
}

/// Generic linear-Gaussian conditioning: prior `theta ~ N(m, S)`, observation
/// `y = H theta + N(0, noise I)`. Returns the posterior mean and covariance.
pub fn condition(
    m: &[f64],
    s: &[Vec<f64>],
    h: &[Vec<f64>],
    y: &[f64],
    noise: f64,
) -> (Vec<f64>, Vec<Vec<f64>>) {
    let p = m.len();
    let q = y.len();
    // S H^T: p x q
    let sht: Vec<Vec<f64>> = (0..p)
        .map(|i| (0..q).map(|j| (0..p).map(|k| s[i][k] * h[j][k]).sum()).collect())
        .collect();
    // Innovation covariance H S H^T + noise I: q x q
    let inn: Vec<Vec<f64>> = (0..q)
        .map(|i| {
            (0..q)
                .map(|j| (0..p).map(|k| h[i][k] * sht[k][j]).sum::<f64>() + if i == j { noise } else { 0.0 })
                .collect()
        })
        .collect();
    let inv = inverse(&inn);
    // Gain S H^T inv: p x q
    let gain: Vec<Vec<f64>> = (0..p)
        .map(|i| (0..q).map(|j| (0..q).map(|k| sht[i][k] * inv[k][j]).sum()).collect())
        .collect();
    let resid: Vec<f64> = (0..q)
        .map(|j| y[j] - (0..p).map(|k| h[j][k] * m[k]).sum::<f64>())
        .collect();
    let mean = (0..p)
        .map(|i| m[i] + (0..q).map(|j| gain[i][j] * resid[j]).sum::<f64>())
        .collect();
    let cov = (0..p)
        .map(|i| (0..p).map(|j| s[i][j] - (0..q).map(|k| gain[i][k] * sht[j][k]).sum::<f64>()).collect())
        .collect();
    (mean, cov)
}

/// Conditions a matrix-normal layer belief on `x = z W + noise` by flattening
/// `W` (row-major) and using the generic oracle. Returns `(mean, full covariance)`.
pub fn condition_layer(
    post: &HiddenLayerPosterior,
    z: &Array1<f64>,
    x: &Array1<f64>,
    sigma_x2: f64,
) -> (Array2<f64>, Vec<Vec<f64>>) {
    let (d_out, d_in) = post.mean.dim();
    let p = d_out * d_in;
    let idx = |i: usize, j: usize| i * d_in + j;
    let m: Vec<f64> = post.mean.iter().copied().collect();
    let mut s = vec![vec![0.0; p]; p];
    for i in 0..d_out {
        for k in 0..d_out {
            for j in 0..d_in {
                s[idx(i, j)][idx(k, j)] = post.row_cov[[i, k]];
            }
        }
    }
    let mut h = vec![vec![0.0; p]; d_in];
    for j in 0..d_in {
        for i in 0..d_out {
            h[j][idx(i, j)] = z[i];
        }
    }
    let (mean, cov) = condition(&m, &s, &h, x.as_slice().unwrap(), sigma_x2);
    (Array2::from_shape_vec((d_out, d_in), mean).unwrap(), cov)
}

/// Expands a row covariance into the full `vec(W)` covariance `U (x) I`.
pub fn kron_identity(u: &Array2<f64>, d_in: usize) -> Vec<Vec<f64>> {
    let d_out = u.nrows();
    let p = d_out * d_in;
    let mut s = vec![vec![0.0; p]; p];
    for i in 0..d_out {
        for k in 0..d_out {
            for j in 0..d_in {
                s[i * d_in + j][k * d_in + j] = u[[i, k]];
            }
        }
    }
    s
}

pub fn condition_top(post: &TopLayerPosterior, x: &Array1<f64>, sigma_x2: f64) -> (Vec<f64>, Vec<Vec<f64>>) {
    let d = x.len();
    let m: Vec<f64> = post.mean.to_vec();
    let s: Vec<Vec<f64>> = (0..d).map(|i| (0..d).map(|j| if i == j { post.var } else { 0.0 }).collect()).collect();
    let h: Vec<Vec<f64>> = (0..d).map(|i| (0..d).map(|j| if i == j { 1.0 } else { 0.0 }).collect()).collect();
    condition(&m, &s, &h, x.as_slice().unwrap(), sigma_x2)
}

/// Monte-Carlo estimate of `log E_W N(x; z W, sigma_x2 I)` with `W ~ MN(R, U, I)`.
/// Returns `(log estimate, standard error of the estimate on the log scale)`.
pub fn mc_layer_log_density(
    post: &HiddenLayerPosterior,
    z: &Array1<f64>,
    x: &Array1<f64>,
    sigma_x2: f64,
    samples: usize,
    rng: &mut impl Rng,
) -> (f64, f64) {
    let (d_out, d_in) = post.mean.dim();
    let l = cholesky(&post.row_cov);
    let dens: Vec<f64> = (0..samples)
        .map(|_| {
            let eps = random_mat(rng, d_out, d_in, 1.0);
            let w = &post.mean + &l.dot(&eps);
            let pred = z.dot(&w);
            let sq: f64 = x.iter().zip(pred.iter()).map(|(a, b)| (a - b) * (a - b)).sum();
            (-(d_in as f64) / 2.0 * (2.0 * std::f64::consts::PI * sigma_x2).ln() - sq / (2.0 * sigma_x2)).exp()
        })
        .collect();
    mc_summary(&dens)
}

/// Monte-Carlo estimate of `log E_mu N(x; mu, sigma_x2 I)` with `mu ~ N(mean, s I)`.
pub fn mc_top_log_density(
    post: &TopLayerPosterior,
    x: &Array1<f64>,
    sigma_x2: f64,
    samples: usize,
    rng: &mut impl Rng,
) -> (f64, f64) {
    let d = x.len();
    let dens: Vec<f64> = (0..samples)
        .map(|_| {
            let sq: f64 = (0..d)
                .map(|i| {
                    let mu = post.mean[i] + post.var.sqrt() * normal(rng);
                    (x[i] - mu) * (x[i] - mu)
                })
                .sum();
            (-(d as f64) / 2.0 * (2.0 * std::f64::consts::PI * sigma_x2).ln() - sq / (2.0 * sigma_x2)).exp()
        })
        .collect();
    mc_summary(&dens)
}

fn mc_summary(dens: &[f64]) -> (f64, f64) {
    let n = dens.len() as f64;
    let mean = dens.iter().sum::<f64>() / n;
    let var = dens.iter().map(|d| (d - mean) * (d - mean)).sum::<f64>() / (n - 1.0);
    let se = (var / n).sqrt();
    (mean.ln(), se / mean)
}

/// Activation functions written out independently of the library.
pub fn act(kind: Activation, u: f64) -> f64 {
    match kind {
        Activation::Relu => u.max(0.0),
        Activation::Gelu => u * normal_cdf(u),
    }
}

/// Standard normal CDF via Simpson integration of the density from 0.
pub fn normal_cdf(u: f64) -> f64 {
    let n = 2000;
    let h = u / n as f64;
    let phi = |t: f64| (-0.5 * t * t).exp() / (2.0 * std::f64::consts::PI).sqrt();
    let mut s = phi(0.0) + phi(u);
    for i in 1..n {
        s += if i % 2 == 1 { 4.0 } else { 2.0 } * phi(i as f64 * h);
    }
    0.5 + s * h / 3.0
}

/// Predictive-coding energy of activations under point weights:
/// `1/2 |x^L - top|^2 + 1/2 sum_l |x^l - f(x^{l+1}) W^l|^2`.
pub fn energy(kind: Activation, weights: &[Array2<f64>], top: &Array1<f64>, a: &[Array1<f64>]) -> f64 {
    let depth = weights.len();
    let mut e = 0.0;
    for i in 0..top.len() {
        e += 0.5 * (a[depth][i] - top[i]).powi(2);
    }
    for (l, w) in weights.iter().enumerate() {
        let (d_out, d_in) = w.dim();
        for j in 0..d_in {
            let mut pred = 0.0;
            for i in 0..d_out {
                pred += act(kind, a[l + 1][i]) * w[[i, j]];
            }
            e += 0.5 * (a[l][j] - pred).powi(2);
        }
    }
    e
}

/// Naive mixture density `log sum_n exp(log w_n) exp(log p_n)` without
/// log-space stabilization, accumulated in plain `f64`.
pub fn naive_log_mixture(log_w: &[f64], log_p: &[f64]) -> f64 {
    log_w
        .iter()
        .zip(log_p)
        .map(|(w, p)| w.exp() * p.exp())
        .sum::<f64>()
        .ln()
}

/// Compensated (Kahan) mean of squared differences.
pub fn kahan_mse(a: &[f64], b: &[f64]) -> f64 {
    let (mut sum, mut comp) = (0.0f64, 0.0f64);
    for (x, y) in a.iter().zip(b) {
        let term = (x - y) * (x - y) - comp;
        let t = sum + term;
        comp = (t - sum) - term;
        sum = t;
    }
    sum / a.len() as f64
}

/// Central finite differences of `f` over every entry of the stack.
pub fn finite_diff_grad(
    a: &ActivationStack,
    h: f64,
    f: impl Fn(&ActivationStack) -> f64,
) -> ActivationStack {
    let mut g = ActivationStack { x: a.x.iter().map(|v| Array1::zeros(v.len())).collect() };
    for l in 0..a.x.len() {
        for i in 0..a.x[l].len() {
            let mut p = a.clone();
            p.x[l][i] += h;
            let mut m = a.clone();
            m.x[l][i] -= h;
            g.x[l][i] = (f(&p) - f(&m)) / (2.0 * h);
        }
    }
    g
}

/// Random particle with PSD covariances, positive top variance and a given log weight.
pub fn random_particle(rng: &mut impl Rng, shape: &NetworkShape, log_weight: f64) -> Particle {
    let layers = (0..shape.depth())
        .map(|l| HiddenLayerPosterior {
            mean: random_mat(rng, shape.dims[l + 1], shape.dims[l], 0.6),
            row_cov: random_spd(rng, shape.dims[l + 1], 0.05) * 0.3,
        })
        .collect();
    let top = TopLayerPosterior {
        mean: random_vec(rng, shape.top_dim(), 0.8),
        var: rng.random_range(0.05..1.0),
    };
    Particle { layers, top, log_weight }
}

pub fn random_stack(rng: &mut impl Rng, shape: &NetworkShape, scale: f64) -> ActivationStack {
    ActivationStack { x: shape.dims.iter().map(|&d| random_vec(rng, d, scale)).collect() }
}

pub fn max_abs_diff(a: &Array2<f64>, b: &Array2<f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

pub fn mse(a: &Array1<f64>, b: &Array1<f64>) -> f64 {
    kahan_mse(a.as_slice().unwrap(), b.as_slice().unwrap())
}
