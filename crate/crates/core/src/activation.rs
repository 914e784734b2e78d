use ndarray::{Array1, ArrayView1};

const INV_SQRT_2: f64 = std::f64::consts::FRAC_1_SQRT_2;
const INV_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Activation {
    Relu,
    /// Exact GELU, `u * Phi(u)` with the standard normal CDF.
    Gelu,
}

impl Activation {
    #[inline]
    pub fn eval(self, u: f64) -> f64 {
        match self {
            Activation::Relu => u.max(0.0),
            Activation::Gelu => u * normal_cdf(u),
        }
    }

    /// Elementwise derivative. ReLU'(0) is taken as 1 so that activations
    /// starting at exactly zero still receive gradient.
    #[inline]
    pub fn derivative(self, u: f64) -> f64 {
        match self {
            Activation::Relu => {
                if u >= 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Gelu => normal_cdf(u) + u * INV_SQRT_2PI * (-0.5 * u * u).exp(),
        }
    }

    pub fn apply(self, v: ArrayView1<f64>) -> Array1<f64> {
        v.mapv(|u| self.eval(u))
    }

    pub fn grad(self, v: ArrayView1<f64>) -> Array1<f64> {
        v.mapv(|u| self.derivative(u))
    }

    pub fn name(self) -> &'static str {
        match self {
            Activation::Relu => "relu",
            Activation::Gelu => "gelu",
        }
    }
}

impl std::str::FromStr for Activation {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "relu" => Ok(Activation::Relu),
            "gelu" => Ok(Activation::Gelu),
            other => Err(format!("unknown activation '{other}'")),
        }
    }
}

#[inline]
fn normal_cdf(u: f64) -> f64 {
    0.5 * libm::erfc(-u * INV_SQRT_2)
}
