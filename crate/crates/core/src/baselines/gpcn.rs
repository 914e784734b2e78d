//! Point-weight predictive coding network trained by energy descent.
//!
//! Energy: `E = 1/2 |x^L - W^L|^2 + 1/2 sum_l |x^l - f(x^{l+1}) W^l|^2`.
//! Reads reuse the memory engine by wrapping the weights as a single
//! zero-covariance particle.

use ndarray::{Array1, Array2};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{ensure_finite, MemoryError, Result};
use crate::gaussian::{HiddenLayerPosterior, TopLayerPosterior};
use crate::memory::{self, HiddenInit, Query, ReadConfig};
use crate::model::{init_belief, ActivationMask, ActivationStack, Mixture, NetworkShape, Particle};
use crate::optim::{Adam, OptimizerConfig};

pub const DEFAULT_WEIGHT_LR: f64 = 1e-3;
pub const DEFAULT_OFFLINE_ITERS: usize = 4000;

#[derive(Debug, Clone)]
pub struct GpcnModel {
    pub shape: NetworkShape,
    /// `W^l`, `d_{l+1} x d_l`, bottom-up.
    pub weights: Vec<Array2<f64>>,
    /// Top bias `W^L`.
    pub top: Array1<f64>,
    /// Observation variance used when the model is read as a log density.
    pub sigma_x2: f64,
    weight_opt: Option<Adam>,
}

impl PartialEq for GpcnModel {
    fn eq(&self, other: &Self) -> bool {
        self.shape == other.shape
            && self.weights == other.weights
            && self.top == other.top
            && self.sigma_x2 == other.sigma_x2
    }
}

impl GpcnModel {
    /// Kaiming-initialized weights, drawn the same way as memory particle means.
    pub fn new(shape: NetworkShape, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let belief = init_belief(&shape, 1.0, &mut rng);
        Self {
            shape,
            weights: belief.layers.into_iter().map(|l| l.mean).collect(),
            top: belief.top.mean,
            sigma_x2: 1.0,
            weight_opt: None,
        }
    }

    pub fn from_weights(shape: NetworkShape, weights: Vec<Array2<f64>>, top: Array1<f64>) -> Result<Self> {
        if weights.len() != shape.depth()
            || top.len() != shape.top_dim()
            || weights
                .iter()
                .enumerate()
                .any(|(l, w)| w.dim() != (shape.dims[l + 1], shape.dims[l]))
        {
            return Err(MemoryError::Shape("weights do not match network widths".into()));
        }
        Ok(Self { shape, weights, top, sigma_x2: 1.0, weight_opt: None })
    }

    /// Prediction errors `e^l = x^l - f(x^{l+1}) W^l` and `e^L = x^L - W^L`.
    fn errors(&self, a: &ActivationStack) -> Vec<Array1<f64>> {
        let act = self.shape.activation;
        let mut errs: Vec<Array1<f64>> = self
            .weights
            .iter()
            .enumerate()
            .map(|(l, w)| &a.x[l] - &act.apply(a.x[l + 1].view()).dot(w))
            .collect();
        errs.push(&a.x[self.shape.depth()] - &self.top);
        errs
    }

    pub fn energy(&self, a: &ActivationStack) -> f64 {
        0.5 * self.errors(a).iter().map(|e| e.dot(e)).sum::<f64>()
    }

    /// The weights as a zero-covariance particle with log weight zero.
    pub fn as_particle(&self) -> Particle {
        Particle {
            layers: self
                .weights
                .iter()
                .map(|w| HiddenLayerPosterior::point_mass(w.clone()))
                .collect(),
            top: TopLayerPosterior { mean: self.top.clone(), var: 0.0 },
            log_weight: 0.0,
        }
    }

    fn fit(&self, x0: &Array1<f64>, start: Option<ActivationStack>, cfg: &OptimizerConfig) -> Result<ActivationStack> {
        let particle = [self.as_particle()];
        let mix = Mixture::new(&self.shape, &particle, self.sigma_x2);
        match start {
            None => memory::fit_activations(&mix, x0, &vec![false; x0.len()], HiddenInit::Zeros, cfg),
            Some(mut stack) => {
                stack.x[0] = x0.clone();
                let mask = ActivationMask::new(&self.shape, vec![false; x0.len()], true);
                memory::ascend(&mix, &mut stack, &mask, cfg, 0.0)?;
                Ok(stack)
            }
        }
    }

    /// Energy gradient w.r.t. every weight block, summed over `stacks`.
    fn weight_grads(&self, stacks: &[ActivationStack]) -> (Vec<Array2<f64>>, Array1<f64>) {
        let act = self.shape.activation;
        let mut gw: Vec<Array2<f64>> = self.weights.iter().map(|w| Array2::zeros(w.dim())).collect();
        let mut gt = Array1::zeros(self.top.len());
        for a in stacks {
            let errs = self.errors(a);
            for (l, g) in gw.iter_mut().enumerate() {
                let z = act.apply(a.x[l + 1].view());
                let zc = z.view().insert_axis(ndarray::Axis(1));
                let er = errs[l].view().insert_axis(ndarray::Axis(0));
                // dE/dW^l = -z^T e
                g.scaled_add(-1.0, &zc.dot(&er));
            }
            gt.scaled_add(-1.0, &errs[self.shape.depth()]);
        }
        (gw, gt)
    }

    fn weight_step(&mut self, stacks: &[ActivationStack], lr: f64) -> Result<()> {
        if lr == 0.0 {
            return Ok(());
        }
        let (gw, gt) = self.weight_grads(stacks);
        let opt = self.weight_opt.get_or_insert_with(|| {
            let sizes: Vec<usize> = self
                .weights
                .iter()
                .map(|w| w.len())
                .chain(std::iter::once(self.top.len()))
                .collect();
            Adam::new(OptimizerConfig::default().with_learning_rate(lr), sizes)
        });
        let params = self
            .weights
            .iter_mut()
            .map(|w| w.as_slice_mut().expect("contiguous weights"))
            .chain(std::iter::once(self.top.as_slice_mut().expect("contiguous bias")));
        let grads = gw
            .iter()
            .map(|g| g.as_slice().expect("contiguous grads"))
            .chain(std::iter::once(gt.as_slice().expect("contiguous grads")));
        opt.step_blocks(params, grads, -1.0);
        let finite = self.weights.iter().all(|w| w.iter().all(|v| v.is_finite()))
            && self.top.iter().all(|v| v.is_finite());
        if !finite {
            return Err(MemoryError::NonFinite("GPCN weights diverged".into()));
        }
        Ok(())
    }

    /// Offline training: each iteration refits activations for every datapoint
    /// (warm-started from the previous iteration) and takes one weight step on
    /// the summed energy.
    pub fn write_offline(
        &mut self,
        data: &[Array1<f64>],
        activation_cfg: &OptimizerConfig,
        weight_iters: usize,
        weight_lr: f64,
    ) -> Result<()> {
        if data.is_empty() {
            return Err(MemoryError::InvalidArgument("offline write needs data".into()));
        }
        for x in data {
            self.check_input(x)?;
        }
        let mut stacks: Vec<Option<ActivationStack>> = vec![None; data.len()];
        for _ in 0..weight_iters {
            let fitted = data
                .iter()
                .zip(stacks.iter_mut())
                .map(|(x, s)| self.fit(x, s.take(), activation_cfg))
                .collect::<Result<Vec<_>>>()?;
            self.weight_step(&fitted, weight_lr)?;
            stacks = fitted.into_iter().map(Some).collect();
        }
        Ok(())
    }

    /// Online write: one activation fit, then exactly one weight step.
    pub fn write_online(&mut self, x: &Array1<f64>, activation_cfg: &OptimizerConfig, weight_lr: f64) -> Result<()> {
        self.check_input(x)?;
        let stack = self.fit(x, None, activation_cfg)?;
        self.weight_step(std::slice::from_ref(&stack), weight_lr)
    }

    pub fn read(&self, query: &Query, cfg: &ReadConfig) -> Result<Array1<f64>> {
        let particle = [self.as_particle()];
        memory::read(&Mixture::new(&self.shape, &particle, self.sigma_x2), query, cfg)
    }

    /// Activations fitted to `x0` with all sensory entries clamped.
    pub fn fit_activations(&self, x0: &Array1<f64>, cfg: &OptimizerConfig) -> Result<ActivationStack> {
        self.check_input(x0)?;
        self.fit(x0, None, cfg)
    }

    fn check_input(&self, x: &Array1<f64>) -> Result<()> {
        if x.len() != self.shape.sensory_dim() {
            return Err(MemoryError::Shape(format!(
                "datapoint has length {}, model expects {}",
                x.len(),
                self.shape.sensory_dim()
            )));
        }
        ensure_finite(x.iter(), "gpcn input")
    }
}
