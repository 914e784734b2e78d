mod common;

use bayespcn::baselines::mhn::MhnMemory;
use bayespcn::gaussian::{
    layer_predictive_log_density, top_predictive_log_density, HiddenLayerPosterior, TopLayerPosterior,
};
use bayespcn::model::{
    particle_log_joint, ActivationMask, ActivationStack, Mixture, NetworkShape, Particle,
};
use bayespcn::{Activation, MemoryConfig, MemoryState};
use common::*;
use ndarray::Array1;
use rand::Rng;

fn point_particle(p: &Particle) -> Particle {
    Particle {
        layers: p.layers.iter().map(|l| HiddenLayerPosterior::point_mass(l.mean.clone())).collect(),
        top: TopLayerPosterior { mean: p.top.mean.clone(), var: 0.0 },
        log_weight: 0.0,
    }
}

fn max_rel_err(a: &ActivationStack, b: &ActivationStack, floor: f64) -> f64 {
    a.x.iter()
        .flatten()
        .zip(b.x.iter().flatten())
        .map(|(x, y)| (x - y).abs() / x.abs().max(y.abs()).max(floor))
        .fold(0.0, f64::max)
}

#[test]
fn mixture_gradient_matches_finite_differences() {
    let mut configs = 0;
    for (i, depth) in [0usize, 1, 2, 3].into_iter().enumerate() {
        for act in [Activation::Relu, Activation::Gelu] {
            for n in [1usize, 4] {
                for rep in 0..2 {
                    let mut r = rng((i * 100 + rep) as u64 + if act == Activation::Relu { 0 } else { 50 } + n as u64 * 1000);
                    let dims: Vec<usize> = (0..=depth).map(|_| r.random_range(1..=8)).collect();
                    let shape = NetworkShape::new(dims, act).unwrap();
                    let particles: Vec<Particle> =
                        (0..n).map(|_| random_particle(&mut r, &shape, -(n as f64).ln())).collect();
                    let mix = Mixture::new(&shape, &particles, r.random_range(0.05..1.0));
                    let a = random_stack(&mut r, &shape, 0.8);
                    let g = mix.grad(&a, None).unwrap();
                    let fd = finite_diff_grad(&a, 1e-5, |s| mix.log_joint(s).unwrap());
                    let err = max_rel_err(&g, &fd, 1e-3);
                    assert!(err < 1e-4, "depth {depth} {act:?} N={n}: rel err {err}");
                    configs += 1;
                }
            }
        }
    }
    assert!(configs >= 20);
}

#[test]
fn masked_gradient_entries_are_zero() {
    let mut r = rng(5);
    let shape = NetworkShape::new(vec![4, 3], Activation::Gelu).unwrap();
    let particles = vec![random_particle(&mut r, &shape, 0.0)];
    let mix = Mixture::new(&shape, &particles, 0.3);
    let a = random_stack(&mut r, &shape, 1.0);
    let mask = ActivationMask::new(&shape, vec![true, false, true, false], false);
    let g = mix.grad(&a, Some(&mask)).unwrap();
    let full = mix.grad(&a, None).unwrap();
    assert_eq!(g.x[0][1], 0.0);
    assert_eq!(g.x[0][3], 0.0);
    assert_eq!(g.x[0][0], full.x[0][0]);
    assert!(g.x[1].iter().all(|&v| v == 0.0));
}

#[test]
fn zero_covariance_log_joint_is_negative_energy() {
    for seed in 0..10 {
        let mut r = rng(400 + seed);
        let act = if seed % 2 == 0 { Activation::Gelu } else { Activation::Relu };
        let shape = NetworkShape::new(vec![5, 4, 3, 2], act).unwrap();
        let p = point_particle(&random_particle(&mut r, &shape, 0.0));
        let weights: Vec<_> = p.layers.iter().map(|l| l.mean.clone()).collect();
        let a1 = random_stack(&mut r, &shape, 1.0);
        let a2 = random_stack(&mut r, &shape, 1.0);
        let lj = |a: &ActivationStack| particle_log_joint(&shape, &p, a, 1.0).unwrap();
        let e = |a: &ActivationStack| energy(act, &weights, &p.top.mean, &a.x);
        // log p + E is the same constant at every activation stack.
        assert!(((lj(&a1) + e(&a1)) - (lj(&a2) + e(&a2))).abs() < 1e-8);
        let total: usize = shape.dims.iter().sum();
        let constant = -0.5 * total as f64 * (2.0 * std::f64::consts::PI).ln();
        assert!((lj(&a1) + e(&a1) - constant).abs() < 1e-8);

        // Gradient equals -(1 / sigma_x2) grad E.
        let sigma_x2 = 0.25;
        let mix = Mixture::new(&shape, std::slice::from_ref(&p), sigma_x2);
        let g = mix.grad(&a1, None).unwrap();
        let ge = finite_diff_grad(&a1, 1e-6, e);
        for (x, y) in g.x.iter().flatten().zip(ge.x.iter().flatten()) {
            assert!((x + y / sigma_x2).abs() < 1e-6 * (1.0 + y.abs() / sigma_x2), "{x} vs {}", -y / sigma_x2);
        }
    }
}

#[test]
fn particle_log_joint_matches_monte_carlo() {
    let mut r = rng(77);
    let shape = NetworkShape::new(vec![4, 3, 2], Activation::Gelu).unwrap();
    let p = random_particle(&mut r, &shape, 0.0);
    let a = random_stack(&mut r, &shape, 0.5);
    let sigma_x2 = 0.7;
    let exact = particle_log_joint(&shape, &p, &a, sigma_x2).unwrap();
    let mut est = 0.0;
    let mut var = 0.0;
    for l in 0..shape.depth() {
        let z = a.x[l + 1].mapv(|u| act(Activation::Gelu, u));
        let (e, se) = mc_layer_log_density(&p.layers[l], &z, &a.x[l], sigma_x2, 200_000, &mut r);
        est += e;
        var += se * se;
    }
    let (e, se) = mc_top_log_density(&p.top, &a.x[2], sigma_x2, 200_000, &mut r);
    est += e;
    var += se * se;
    assert!((exact - est).abs() < 3.0 * var.sqrt(), "{exact} vs {est} +- {}", var.sqrt());
}

#[test]
fn depth_zero_joint_is_top_density() {
    let mut r = rng(8);
    let shape = NetworkShape::new(vec![3], Activation::Relu).unwrap();
    let p = random_particle(&mut r, &shape, 0.0);
    let a = random_stack(&mut r, &shape, 1.0);
    let direct = top_predictive_log_density(&p.top, a.x[0].view(), 0.4).unwrap();
    assert_eq!(particle_log_joint(&shape, &p, &a, 0.4).unwrap(), direct);
}

#[test]
fn per_layer_sum_structure() {
    let mut r = rng(9);
    let shape = NetworkShape::new(vec![3, 2, 2], Activation::Gelu).unwrap();
    let p = random_particle(&mut r, &shape, 0.0);
    let a = random_stack(&mut r, &shape, 1.0);
    let mut sum = top_predictive_log_density(&p.top, a.x[2].view(), 0.2).unwrap();
    for l in 0..2 {
        let z = a.x[l + 1].mapv(|u| act(Activation::Gelu, u));
        sum += layer_predictive_log_density(&p.layers[l], z.view(), a.x[l].view(), 0.2).unwrap();
    }
    assert!((particle_log_joint(&shape, &p, &a, 0.2).unwrap() - sum).abs() < 1e-10);
}

#[test]
fn mixture_matches_naive_summation_and_is_dominated() {
    for seed in 0..10 {
        let mut r = rng(500 + seed);
        let shape = NetworkShape::new(vec![3, 2], Activation::Gelu).unwrap();
        let raw: Vec<f64> = (0..3).map(|_| r.random_range(0.1..1.0)).collect();
        let total: f64 = raw.iter().sum();
        let particles: Vec<Particle> =
            raw.iter().map(|w| random_particle(&mut r, &shape, (w / total).ln())).collect();
        let mix = Mixture::new(&shape, &particles, 0.5);
        let a = random_stack(&mut r, &shape, 0.5);
        let lp: Vec<f64> = particles.iter().map(|p| particle_log_joint(&shape, p, &a, 0.5).unwrap()).collect();
        let lw: Vec<f64> = particles.iter().map(|p| p.log_weight).collect();
        let got = mix.log_joint(&a).unwrap();
        let naive = naive_log_mixture(&lw, &lp);
        assert!((got - naive).abs() <= 1e-10 * naive.abs().max(1.0));
        let best = lw.iter().zip(&lp).map(|(w, p)| w + p).fold(f64::NEG_INFINITY, f64::max);
        assert!(got >= best - 1e-12);
        assert!(got <= best + 3f64.ln() + 1e-12);
    }
}

#[test]
fn mhn_gradient_equals_depth_zero_mixture_gradient() {
    for seed in 0..50 {
        let mut r = rng(600 + seed);
        let d = r.random_range(1..=8);
        let n = r.random_range(1..=8);
        let beta = r.random_range(0.5..100.0);
        let mut mhn = MhnMemory::new(d, beta);
        for _ in 0..n {
            mhn.store(&random_vec(&mut r, d, 0.3)).unwrap();
        }
        let q = random_vec(&mut r, d, 0.3);
        let expected = mhn.grad_log_density(&q).unwrap();
        let m = mhn.to_mixture_memory().unwrap();
        let a = ActivationStack { x: vec![q.clone()] };
        let g = m.mixture().grad(&a, None).unwrap();
        for (x, y) in g.x[0].iter().zip(expected.iter()) {
            assert!((x - y).abs() < 1e-8 * (1.0 + y.abs()), "seed {seed}: {x} vs {y}");
        }
        // Independent softmax oracle for the MHN gradient itself.
        let logits: Vec<f64> = mhn.keys().iter().map(|k| beta * q.dot(k)).collect();
        let mx = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let z: f64 = logits.iter().map(|l| (l - mx).exp()).sum();
        let mut oracle = Array1::<f64>::zeros(d);
        for (l, k) in logits.iter().zip(mhn.keys()) {
            oracle.scaled_add((l - mx).exp() / z * beta, &(k - &q));
        }
        for (x, y) in oracle.iter().zip(expected.iter()) {
            assert!((x - y).abs() < 1e-8 * (1.0 + y.abs()));
        }
    }
}

#[test]
fn ancestral_top_sample_mean_matches_mu() {
    let shape = NetworkShape::new(vec![3], Activation::Relu).unwrap();
    let mut r = rng(10);
    let p = random_particle(&mut r, &shape, 0.0);
    let sigma_x2: f64 = 0.25;
    let mix = Mixture::new(&shape, std::slice::from_ref(&p), sigma_x2);
    let n = 100_000;
    let mut mean = Array1::<f64>::zeros(3);
    for _ in 0..n {
        mean += &mix.ancestral_sample(&mut r);
    }
    mean /= n as f64;
    let se = (sigma_x2 / n as f64).sqrt();
    for i in 0..3 {
        assert!((mean[i] - p.top.mean[i]).abs() < 3.0 * se);
    }
}

#[test]
fn fresh_memory_particles_follow_kaiming() {
    let mut cfg = MemoryConfig::new(vec![256, 256], Activation::Relu).unwrap();
    cfg.seed = 3;
    let m = MemoryState::new(&cfg).unwrap();
    let r0 = &m.particles[0].layers[0].mean;
    let n = r0.len() as f64;
    let mean = r0.sum() / n;
    let var = r0.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    assert!((var - 2.0 / 256.0).abs() < 0.1 * 2.0 / 256.0);
    assert!(m.particles[0].layers[0].row_cov.diag().iter().all(|&u| u == 1.0));
    assert_eq!(m.particles[0].top.var, 1.0);
    assert_eq!(m, MemoryState::new(&cfg).unwrap());
}
