use ndarray::Array1;

/// Adam hyperparameters and step budget.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OptimizerConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub steps: usize,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.01,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            steps: 500,
        }
    }
}

impl OptimizerConfig {
    pub fn with_steps(mut self, steps: usize) -> Self {
        self.steps = steps;
        self
    }

    pub fn with_learning_rate(mut self, lr: f64) -> Self {
        self.learning_rate = lr;
        self
    }
}

/// Adam moment estimates over a list of parameter blocks.
///
/// `ascend_step` moves parameters *along* the supplied gradient; use
/// `descend_step` for minimization.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    cfg: OptimizerConfig,
    m: Vec<Array1<f64>>,
    v: Vec<Array1<f64>>,
    t: i32,
}

impl Adam {
    pub fn new(cfg: OptimizerConfig, block_sizes: impl IntoIterator<Item = usize>) -> Self {
        let (m, v) = block_sizes
            .into_iter()
            .map(|d| (Array1::zeros(d), Array1::zeros(d)))
            .unzip();
        Self { cfg, m, v, t: 0 }
    }

    pub fn steps_taken(&self) -> i32 {
        self.t
    }

    pub fn ascend_step(&mut self, params: &mut [Array1<f64>], grads: &[Array1<f64>]) {
        self.step(params, grads, 1.0);
    }

    pub fn descend_step(&mut self, params: &mut [Array1<f64>], grads: &[Array1<f64>]) {
        self.step(params, grads, -1.0);
    }

    fn step(&mut self, params: &mut [Array1<f64>], grads: &[Array1<f64>], sign: f64) {
        let p = params.iter_mut().map(|a| a.as_slice_mut().expect("contiguous parameters"));
        let g = grads.iter().map(|a| a.as_slice().expect("contiguous gradients"));
        self.step_blocks(p, g, sign);
    }

    /// Adam step over arbitrary contiguous blocks, e.g. flattened weight matrices.
    pub fn step_blocks<'a, P, G>(&mut self, params: P, grads: G, sign: f64)
    where
        P: IntoIterator<Item = &'a mut [f64]>,
        G: IntoIterator<Item = &'a [f64]>,
    {
        self.t += 1;
        let OptimizerConfig { learning_rate, beta1, beta2, epsilon, .. } = self.cfg;
        let bc1 = 1.0 - beta1.powi(self.t);
        let bc2 = 1.0 - beta2.powi(self.t);
        let lr = sign * learning_rate;
        let mut blocks = 0;
        for (((p, g), m), v) in params.into_iter().zip(grads).zip(&mut self.m).zip(&mut self.v) {
            blocks += 1;
            assert_eq!(p.len(), m.len(), "parameter block size changed");
            for (((p, &g), m), v) in p.iter_mut().zip(g).zip(m.iter_mut()).zip(v.iter_mut()) {
                *m = beta1 * *m + (1.0 - beta1) * g;
                *v = beta2 * *v + (1.0 - beta2) * g * g;
                let m_hat = *m / bc1;
                let v_hat = *v / bc2;
                *p += lr * m_hat / (v_hat.sqrt() + epsilon);
            }
        }
        assert_eq!(blocks, self.m.len(), "parameter block count changed");
    }
}
