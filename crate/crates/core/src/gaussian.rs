//! Closed-form linear-Gaussian machinery for a single layer.
//!
//! Hidden layers carry a matrix-normal belief `MN(W; R, U, I)` over a weight
//! matrix of shape `d_out x d_in`, where `d_out` is the width of the layer
//! above (the side multiplied by `z = f(x^{l+1})`) and `d_in` the width of the
//! predicted layer. The top layer carries an isotropic normal `N(mu, s I)`
//! over its bias vector; both the conjugate update and the diffusion keep the
//! covariance isotropic, so a scalar is exact.

use ndarray::{Array1, Array2, ArrayView1, Zip};

use crate::error::{ensure_finite, MemoryError, Result};

/// Lower bound applied to the predictive variance `z U z^T + sigma_x^2`.
pub const VARIANCE_FLOOR: f64 = 1e-12;

const LN_2PI: f64 = 1.837_877_066_409_345_3;

/// Matrix-normal posterior over a hidden-layer weight matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct HiddenLayerPosterior {
    /// Posterior mean, `d_out x d_in`.
    pub mean: Array2<f64>,
    /// Row covariance, `d_out x d_out`. Column covariance is the identity.
    pub row_cov: Array2<f64>,
}

/// Isotropic normal posterior over the top-layer bias vector.
#[derive(Debug, Clone, PartialEq)]
pub struct TopLayerPosterior {
    pub mean: Array1<f64>,
    /// Scalar variance `s` of `Sigma = s I`. Zero is allowed and encodes a
    /// point mass (used for fixed-weight models).
    pub var: f64,
}

impl HiddenLayerPosterior {
    /// Prior with the given mean and row covariance `sigma_w2 * I`.
    pub fn with_isotropic_cov(mean: Array2<f64>, sigma_w2: f64) -> Self {
        let d_out = mean.nrows();
        Self {
            mean,
            row_cov: Array2::eye(d_out) * sigma_w2,
        }
    }

    /// Point-mass belief: zero covariance around `mean`.
    pub fn point_mass(mean: Array2<f64>) -> Self {
        let d_out = mean.nrows();
        Self {
            mean,
            row_cov: Array2::zeros((d_out, d_out)),
        }
    }

    pub fn d_out(&self) -> usize {
        self.mean.nrows()
    }

    pub fn d_in(&self) -> usize {
        self.mean.ncols()
    }

    /// Predictive variance `sigma_x2 + z U z^T` (not floored).
    pub fn predictive_var(&self, z: ArrayView1<f64>, sigma_x2: f64) -> f64 {
        sigma_x2 + z.dot(&self.row_cov.dot(&z))
    }

    fn check_dims(&self, z: usize, x: usize) -> Result<()> {
        if z != self.d_out() || x != self.d_in() {
            return Err(MemoryError::Shape(format!(
                "layer is {}x{}, got z of length {} and x of length {}",
                self.d_out(),
                self.d_in(),
                z,
                x
            )));
        }
        Ok(())
    }
}

fn check_sigma(sigma_x2: f64) -> Result<()> {
    if !(sigma_x2 > 0.0 && sigma_x2.is_finite()) {
        return Err(MemoryError::InvalidArgument(format!(
            "sigma_x2 must be positive and finite, got {sigma_x2}"
        )));
    }
    Ok(())
}

/// Conjugate update of a hidden layer after observing `x = z W + noise`.
///
/// The update is rank one: with `k = U z^T` and `c = z U z^T + sigma_x2`,
/// `R* = R + k (x - z R) / c` and `U* = U - k k^T / c`.
pub fn update_layer_posterior(
    post: &HiddenLayerPosterior,
    z: ArrayView1<f64>,
    x: ArrayView1<f64>,
    sigma_x2: f64,
) -> Result<HiddenLayerPosterior> {
    check_sigma(sigma_x2)?;
    post.check_dims(z.len(), x.len())?;
    ensure_finite(z.iter(), "update_layer_posterior: z")?;
    ensure_finite(x.iter(), "update_layer_posterior: x")?;

    let k = post.row_cov.dot(&z);
    let c = (z.dot(&k) + sigma_x2).max(VARIANCE_FLOOR);
    let residual = &x - &z.dot(&post.mean);

    let mut mean = post.mean.clone();
    let mut row_cov = post.row_cov.clone();
    for (i, &ki) in k.iter().enumerate() {
        let gain = ki / c;
        mean.row_mut(i).scaled_add(gain, &residual);
        row_cov.row_mut(i).scaled_add(-gain, &k);
    }
    symmetrize(&mut row_cov);

    Ok(HiddenLayerPosterior { mean, row_cov })
}

/// Conjugate normal-normal update of the top-layer bias after observing `x_top`.
pub fn update_top_posterior(
    post: &TopLayerPosterior,
    x_top: ArrayView1<f64>,
    sigma_x2: f64,
) -> Result<TopLayerPosterior> {
    check_sigma(sigma_x2)?;
    if x_top.len() != post.mean.len() {
        return Err(MemoryError::Shape(format!(
            "top layer has width {}, got {}",
            post.mean.len(),
            x_top.len()
        )));
    }
    ensure_finite(x_top.iter(), "update_top_posterior: x")?;

    // Precision form (1/s + 1/sigma_x2)^-1, rewritten so that s = 0 stays exact.
    let s = post.var;
    let denom = s + sigma_x2;
    let var = s * sigma_x2 / denom;
    let mean = Zip::from(&post.mean)
        .and(&x_top)
        .map_collect(|&m, &x| (m * sigma_x2 + x * s) / denom);
    Ok(TopLayerPosterior { mean, var })
}

/// Diffusion toward a prior with forget strength `beta`.
pub trait Diffuse: Sized {
    fn diffuse(&self, prior: &Self, beta: f64) -> Result<Self>;
}

fn check_beta(beta: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&beta) {
        return Err(MemoryError::InvalidArgument(format!(
            "forget strength must lie in [0, 1], got {beta}"
        )));
    }
    Ok(())
}

impl Diffuse for HiddenLayerPosterior {
    fn diffuse(&self, prior: &Self, beta: f64) -> Result<Self> {
        check_beta(beta)?;
        if self.mean.dim() != prior.mean.dim() {
            return Err(MemoryError::Shape("posterior/prior shape mismatch".into()));
        }
        if beta == 0.0 {
            return Ok(self.clone());
        }
        if beta == 1.0 {
            return Ok(prior.clone());
        }
        let a = (1.0 - beta).sqrt();
        let mean = Zip::from(&self.mean)
            .and(&prior.mean)
            .map_collect(|&r, &r0| a * r + (1.0 - a) * r0);
        let row_cov = Zip::from(&self.row_cov)
            .and(&prior.row_cov)
            .map_collect(|&u, &u0| (1.0 - beta) * u + beta * u0);
        Ok(Self { mean, row_cov })
    }
}

impl Diffuse for TopLayerPosterior {
    fn diffuse(&self, prior: &Self, beta: f64) -> Result<Self> {
        check_beta(beta)?;
        if self.mean.len() != prior.mean.len() {
            return Err(MemoryError::Shape("posterior/prior shape mismatch".into()));
        }
        if beta == 0.0 {
            return Ok(self.clone());
        }
        if beta == 1.0 {
            return Ok(prior.clone());
        }
        let a = (1.0 - beta).sqrt();
        let mean = Zip::from(&self.mean)
            .and(&prior.mean)
            .map_collect(|&m, &m0| a * m + (1.0 - a) * m0);
        Ok(Self {
            mean,
            var: (1.0 - beta) * self.var + beta * prior.var,
        })
    }
}

/// `log N(x; mean, var I)` for a `d`-dimensional isotropic normal.
pub fn isotropic_log_density(sq_dist: f64, dim: usize, var: f64) -> f64 {
    -0.5 * dim as f64 * (LN_2PI + var.ln()) - sq_dist / (2.0 * var)
}

/// Posterior-predictive `log p(x | z) = log N(x; z R, (sigma_x2 + z U z^T) I)`.
pub fn layer_predictive_log_density(
    post: &HiddenLayerPosterior,
    z: ArrayView1<f64>,
    x: ArrayView1<f64>,
    sigma_x2: f64,
) -> Result<f64> {
    post.check_dims(z.len(), x.len())?;
    let v = post.predictive_var(z, sigma_x2);
    if !(v > 0.0) {
        return Err(MemoryError::NonFinite(format!(
            "predictive variance {v} is not positive"
        )));
    }
    let pred = z.dot(&post.mean);
    let sq = Zip::from(&x).and(&pred).fold(0.0, |acc, &a, &b| {
        let d = a - b;
        acc + d * d
    });
    Ok(isotropic_log_density(sq, x.len(), v))
}

/// Posterior-predictive `log p(x_top) = log N(x_top; mu, (sigma_x2 + s) I)`.
pub fn top_predictive_log_density(
    post: &TopLayerPosterior,
    x_top: ArrayView1<f64>,
    sigma_x2: f64,
) -> Result<f64> {
    if x_top.len() != post.mean.len() {
        return Err(MemoryError::Shape(format!(
            "top layer has width {}, got {}",
            post.mean.len(),
            x_top.len()
        )));
    }
    let v = sigma_x2 + post.var;
    if !(v > 0.0) {
        return Err(MemoryError::NonFinite(format!(
            "predictive variance {v} is not positive"
        )));
    }
    let sq = Zip::from(&x_top).and(&post.mean).fold(0.0, |acc, &a, &b| {
        let d = a - b;
        acc + d * d
    });
    Ok(isotropic_log_density(sq, x_top.len(), v))
}

/// Numerically stable `log sum exp`. `-inf` entries are ignored.
pub fn log_sum_exp(values: &[f64]) -> Result<f64> {
    if values.is_empty() {
        return Err(MemoryError::InvalidArgument("log_sum_exp of empty list".into()));
    }
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return Ok(f64::NEG_INFINITY);
    }
    if !max.is_finite() {
        return Err(MemoryError::NonFinite("log_sum_exp input".into()));
    }
    if values.len() == 1 {
        return Ok(values[0]);
    }
    let sum: f64 = values.iter().map(|v| (v - max).exp()).sum();
    Ok(max + sum.ln())
}

fn symmetrize(m: &mut Array2<f64>) {
    let n = m.nrows();
    for i in 0..n {
        for j in (i + 1)..n {
            let avg = 0.5 * (m[[i, j]] + m[[j, i]]);
            m[[i, j]] = avg;
            m[[j, i]] = avg;
        }
    }
}
