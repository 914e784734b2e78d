//! Memory operations: `write`, `read` (auto- and hetero-associative) and `forget`.
//!
//! Reads and writes both hill-climb a log density over neuron activations
//! with Adam. A write fits hidden activations for the new datapoint under each
//! particle, reweights the particle by its predictive density, then applies the
//! closed-form conjugate update layer by layer. A forget diffuses every layer
//! belief toward its prior.

use ndarray::Array1;
use rayon::prelude::*;

use crate::error::{ensure_finite, MemoryError, Result};
use crate::gaussian::{log_sum_exp, update_layer_posterior, update_top_posterior, Diffuse};
use crate::model::{
    particle_log_joint, ActivationMask, ActivationStack, MemoryState, Mixture, Particle,
};
use crate::optim::{Adam, OptimizerConfig};

/// Starting point for hidden activations before ascent.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub enum HiddenInit {
    #[default]
    Zeros,
    /// `x^L` set to the top mean of the heaviest particle, other hidden layers zero.
    TopMean,
    /// Mean top-down rollout of the heaviest particle: `x^L = mu`, then
    /// `x^l = f(x^{l+1}) R^l` for every hidden layer.
    TopDown,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReadConfig {
    pub icm_iterations: usize,
    pub steps_per_phase: usize,
    pub optimizer: OptimizerConfig,
    /// Early stop when the masked gradient norm falls below this. Zero runs the full budget.
    pub convergence_tol: f64,
    pub hidden_init: HiddenInit,
}

impl Default for ReadConfig {
    fn default() -> Self {
        Self {
            icm_iterations: 30,
            steps_per_phase: 500,
            optimizer: OptimizerConfig::default(),
            convergence_tol: 0.0,
            hidden_init: HiddenInit::TopDown,
        }
    }
}

/// A read request. `known_mask` marks key entries for hetero-associative recall.
#[derive(Debug, Clone, PartialEq)]
pub struct Query {
    pub values: Array1<f64>,
    pub known_mask: Option<Vec<bool>>,
}

impl Query {
    pub fn auto(values: Array1<f64>) -> Self {
        Self { values, known_mask: None }
    }

    pub fn hetero(values: Array1<f64>, known_mask: Vec<bool>) -> Self {
        Self { values, known_mask: Some(known_mask) }
    }

    fn validate(&self, dim: usize) -> Result<()> {
        if self.values.len() != dim {
            return Err(MemoryError::Shape(format!(
                "query has length {}, memory expects {dim}",
                self.values.len()
            )));
        }
        if let Some(mask) = &self.known_mask {
            if mask.len() != dim {
                return Err(MemoryError::Shape(format!(
                    "known mask has length {}, memory expects {dim}",
                    mask.len()
                )));
            }
        }
        ensure_finite(self.values.iter(), "query")
    }
}

/// Result of a traced read: the recall plus the log joint at each phase boundary.
#[derive(Debug, Clone)]
pub struct ReadTrace {
    pub recall: Array1<f64>,
    pub stack: ActivationStack,
    pub boundary_log_joints: Vec<f64>,
}

/// Gradient ascent of the mixture log joint over the free entries of `stack`.
pub fn ascend(
    mixture: &Mixture<'_>,
    stack: &mut ActivationStack,
    mask: &ActivationMask,
    cfg: &OptimizerConfig,
    tol: f64,
) -> Result<()> {
    if !mask.any_free() || cfg.steps == 0 {
        return Ok(());
    }
    let mut adam = Adam::new(*cfg, stack.x.iter().map(|v| v.len()));
    ascend_with(mixture, stack, mask, &mut adam, cfg.steps, tol)
}

/// Like [`ascend`], continuing from existing Adam moment estimates. Entries
/// outside `mask` must never have been free for this optimizer.
fn ascend_with(
    mixture: &Mixture<'_>,
    stack: &mut ActivationStack,
    mask: &ActivationMask,
    adam: &mut Adam,
    steps: usize,
    tol: f64,
) -> Result<()> {
    if !mask.any_free() {
        return Ok(());
    }
    for _ in 0..steps {
        let (_, grad) = mixture.log_joint_and_grad(stack, Some(mask))?;
        if tol > 0.0 && grad.norm_sq().sqrt() < tol {
            break;
        }
        adam.ascend_step(&mut stack.x, &grad.x);
        if !stack.is_finite() {
            return Err(MemoryError::NonFinite("activations diverged during ascent".into()));
        }
    }
    Ok(())
}

fn initial_stack(mixture: &Mixture<'_>, x0: &Array1<f64>, init: HiddenInit) -> ActivationStack {
    let mut stack = ActivationStack::with_sensory(mixture.shape, x0);
    let depth = mixture.shape.depth();
    if depth == 0 {
        return stack;
    }
    let p = &mixture.particles[mixture.heaviest()];
    match init {
        HiddenInit::Zeros => {}
        HiddenInit::TopMean => stack.x[depth] = p.top.mean.clone(),
        HiddenInit::TopDown => {
            stack.x[depth] = p.top.mean.clone();
            for l in (1..depth).rev() {
                let z = mixture.shape.activation.apply(stack.x[l + 1].view());
                stack.x[l] = z.dot(&p.layers[l].mean);
            }
        }
    }
    stack
}

/// Fit activations for `x0` by ascending the log joint over the hidden layers
/// and the entries of `x0` flagged in `free_x0`.
pub fn fit_activations(
    mixture: &Mixture<'_>,
    x0: &Array1<f64>,
    free_x0: &[bool],
    init: HiddenInit,
    cfg: &OptimizerConfig,
) -> Result<ActivationStack> {
    if x0.len() != mixture.shape.sensory_dim() || free_x0.len() != x0.len() {
        return Err(MemoryError::Shape(format!(
            "expected sensory vector of length {}",
            mixture.shape.sensory_dim()
        )));
    }
    ensure_finite(x0.iter(), "fit_activations: x0")?;
    let mut stack = initial_stack(mixture, x0, init);
    let mask = ActivationMask::new(mixture.shape, free_x0.to_vec(), true);
    ascend(mixture, &mut stack, &mask, cfg, 0.0)?;
    Ok(stack)
}

/// Auto-associative read by iterated conditional modes, recording the log
/// joint after every phase.
pub fn read_auto_traced(mixture: &Mixture<'_>, query: &Array1<f64>, cfg: &ReadConfig) -> Result<ReadTrace> {
    Query::auto(query.clone()).validate(mixture.shape.sensory_dim())?;
    let shape = mixture.shape;
    let mut stack = initial_stack(mixture, query, cfg.hidden_init);
    let hidden_only = ActivationMask::new(shape, vec![false; shape.sensory_dim()], true);
    let sensory_only = ActivationMask::new(shape, vec![true; shape.sensory_dim()], false);
    let phase = cfg.optimizer.with_steps(cfg.steps_per_phase);

    let mut boundary = Vec::with_capacity(2 * cfg.icm_iterations + 1);
    boundary.push(mixture.log_joint(&stack)?);
    let sizes: Vec<usize> = stack.x.iter().map(|v| v.len()).collect();
    let mut hidden_adam = Adam::new(phase, sizes.iter().copied());
    let mut sensory_adam = Adam::new(phase, sizes);
    for _ in 0..cfg.icm_iterations {
        // Warm-started from the previous iteration's state; each phase keeps its
        // own Adam moments so a restart does not kick converged entries by a
        // full learning-rate step.
        ascend_with(mixture, &mut stack, &hidden_only, &mut hidden_adam, phase.steps, cfg.convergence_tol)?;
        boundary.push(mixture.log_joint(&stack)?);
        ascend_with(mixture, &mut stack, &sensory_only, &mut sensory_adam, phase.steps, cfg.convergence_tol)?;
        boundary.push(mixture.log_joint(&stack)?);
    }
    Ok(ReadTrace {
        recall: stack.x[0].clone(),
        stack,
        boundary_log_joints: boundary,
    })
}

pub fn read_auto(mixture: &Mixture<'_>, query: &Array1<f64>, cfg: &ReadConfig) -> Result<Array1<f64>> {
    read_auto_traced(mixture, query, cfg).map(|t| t.recall)
}

/// Hetero-associative read: joint ascent over the unknown sensory entries and
/// the hidden layers with key entries clamped.
pub fn read_hetero(
    mixture: &Mixture<'_>,
    query: &Array1<f64>,
    known: &[bool],
    cfg: &ReadConfig,
) -> Result<Array1<f64>> {
    Query::hetero(query.clone(), known.to_vec()).validate(mixture.shape.sensory_dim())?;
    let mut stack = initial_stack(mixture, query, cfg.hidden_init);
    let free: Vec<bool> = known.iter().map(|k| !k).collect();
    let mask = ActivationMask::new(mixture.shape, free, true);
    let budget = cfg.optimizer.with_steps(cfg.icm_iterations * cfg.steps_per_phase);
    ascend(mixture, &mut stack, &mask, &budget, cfg.convergence_tol)?;
    let mut out = stack.x.swap_remove(0);
    for (o, (&q, &k)) in out.iter_mut().zip(query.iter().zip(known)) {
        if k {
            *o = q;
        }
    }
    Ok(out)
}

/// Dispatch on the query kind.
pub fn read(mixture: &Mixture<'_>, query: &Query, cfg: &ReadConfig) -> Result<Array1<f64>> {
    match &query.known_mask {
        None => read_auto(mixture, &query.values, cfg),
        Some(mask) => read_hetero(mixture, &query.values, mask, cfg),
    }
}

/// Per-write diagnostics.
#[derive(Debug, Clone, PartialEq)]
pub struct WriteReport {
    /// Indices of particles whose weight became `-inf` on this write.
    pub degenerate: Vec<usize>,
    /// Normalized log weights after the write.
    pub log_weights: Vec<f64>,
}

impl MemoryState {
    pub fn read(&self, query: &Query, cfg: &ReadConfig) -> Result<Array1<f64>> {
        read(&self.mixture(), query, cfg)
    }

    /// One-shot write of a single datapoint.
    pub fn write(&mut self, x0: &Array1<f64>, cfg: &OptimizerConfig) -> Result<WriteReport> {
        if x0.len() != self.shape.sensory_dim() {
            return Err(MemoryError::Shape(format!(
                "datapoint has length {}, memory expects {}",
                x0.len(),
                self.shape.sensory_dim()
            )));
        }
        ensure_finite(x0.iter(), "write: x0")?;
        let fixed = vec![false; x0.len()];
        let stacks = self
            .particles
            .par_iter()
            .map(|p| {
                if p.log_weight == f64::NEG_INFINITY {
                    return None;
                }
                let single = Mixture::new(&self.shape, std::slice::from_ref(p), self.sigma_x2);
                fit_activations(&single, x0, &fixed, HiddenInit::Zeros, cfg).ok()
            })
            .collect::<Vec<_>>();
        self.absorb(&stacks)
    }

    /// Reweight and conjugate-update every particle with externally supplied
    /// activation stacks (one per particle; `None` marks a failed fit).
    pub fn write_with_activations(&mut self, stacks: &[ActivationStack]) -> Result<WriteReport> {
        if stacks.len() != self.particles.len() {
            return Err(MemoryError::Shape(format!(
                "{} activation stacks for {} particles",
                stacks.len(),
                self.particles.len()
            )));
        }
        let opt: Vec<Option<ActivationStack>> = stacks.iter().cloned().map(Some).collect();
        self.absorb(&opt)
    }

    fn absorb(&mut self, stacks: &[Option<ActivationStack>]) -> Result<WriteReport> {
        let shape = &self.shape;
        let sigma_x2 = self.sigma_x2;
        let updated: Vec<Particle> = self
            .particles
            .par_iter()
            .zip(stacks)
            .map(|(p, stack)| {
                let degenerate = || Particle { log_weight: f64::NEG_INFINITY, ..p.clone() };
                let Some(stack) = stack else {
                    return degenerate();
                };
                if p.log_weight == f64::NEG_INFINITY {
                    return degenerate();
                }
                match conjugate_step(shape, p, stack, sigma_x2) {
                    Ok(next) if next.log_weight.is_finite() => next,
                    _ => degenerate(),
                }
            })
            .collect();

        let log_w: Vec<f64> = updated.iter().map(|p| p.log_weight).collect();
        let total = log_sum_exp(&log_w)?;
        if !total.is_finite() {
            return Err(MemoryError::AllParticlesDegenerate);
        }
        let degenerate = log_w
            .iter()
            .enumerate()
            .filter(|(i, w)| **w == f64::NEG_INFINITY && self.particles[*i].log_weight.is_finite())
            .map(|(i, _)| i)
            .collect();
        self.particles = updated;
        for p in &mut self.particles {
            p.log_weight -= total;
        }
        self.write_count += 1;
        Ok(WriteReport {
            degenerate,
            log_weights: self.particles.iter().map(|p| p.log_weight).collect(),
        })
    }

    /// Diffuse every layer of every particle toward its prior. Weights are unchanged.
    pub fn forget(&mut self, beta: f64) -> Result<()> {
        if !(0.0..=1.0).contains(&beta) {
            return Err(MemoryError::InvalidArgument(format!(
                "forget strength must lie in [0, 1], got {beta}"
            )));
        }
        if beta == 0.0 {
            return Ok(());
        }
        let diffused = self
            .particles
            .par_iter()
            .zip(&self.priors)
            .map(|(p, prior)| {
                let layers = p
                    .layers
                    .iter()
                    .zip(&prior.layers)
                    .map(|(l, l0)| l.diffuse(l0, beta))
                    .collect::<Result<Vec<_>>>()?;
                let top = p.top.diffuse(&prior.top, beta)?;
                Ok(Particle { layers, top, log_weight: p.log_weight })
            })
            .collect::<Result<Vec<_>>>()?;
        self.particles = diffused;
        Ok(())
    }
}

/// Importance reweighting with the pre-update predictive density, then the
/// layerwise conjugate update.
fn conjugate_step(
    shape: &crate::model::NetworkShape,
    p: &Particle,
    stack: &ActivationStack,
    sigma_x2: f64,
) -> Result<Particle> {
    let lp = particle_log_joint(shape, p, stack, sigma_x2)?;
    let act = shape.activation;
    let layers = p
        .layers
        .iter()
        .enumerate()
        .map(|(l, layer)| {
            let z = act.apply(stack.x[l + 1].view());
            update_layer_posterior(layer, z.view(), stack.x[l].view(), sigma_x2)
        })
        .collect::<Result<Vec<_>>>()?;
    let top = update_top_posterior(&p.top, stack.x[shape.depth()].view(), sigma_x2)?;
    Ok(Particle {
        layers,
        top,
        log_weight: p.log_weight + lp,
    })
}
