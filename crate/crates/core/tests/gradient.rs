use grokxor::config::RunConfig;
use grokxor::datagen;
use grokxor::instrument::preactivations;
use grokxor::network::{init_network, Network};
use grokxor::par::Parallelism;
use grokxor::rng::{substream, trial_stream, Purpose};
use grokxor::trainer::{compute_g, loss_gradient};
use rand_distr::{Distribution, StandardNormal};

const STEP: f64 = 1e-6;

/// Relative finite-difference error on one random instance, or `None` near a kink.
fn fd_error(seed: u64) -> Option<f64> {
    let cfg = RunConfig {
        n: 5,
        m: 4,
        p: 6,
        mu_norm: 1.5,
        omega_init: 1.0,
        seed,
        ..RunConfig::reference()
    };
    let ds = datagen::sample_dataset(&cfg, &mut substream(seed, 0, Purpose::Data));
    let net = init_network(&cfg, &mut substream(seed, 0, Purpose::Init));
    let z = preactivations(&net, &ds, Parallelism::Sequential);
    if z.iter().any(|v| v.abs() < 1e-3) {
        return None;
    }
    let mut r = trial_stream(seed, 0, Purpose::Oracle, 0);
    let delta: Vec<f64> = (0..net.m() * net.p()).map(|_| StandardNormal.sample(&mut r)).collect();
    let grad = loss_gradient(&net, &ds).unwrap();
    let analytic: f64 = grad.iter().zip(&delta).map(|(g, d)| g * d).sum();
    let mut moved: Network = net.clone();
    for (w, d) in moved.w_flat_mut().iter_mut().zip(&delta) {
        *w -= STEP * d;
    }
    let numeric = (compute_g(&net, &ds).risk() - compute_g(&moved, &ds).risk()) / STEP;
    Some((numeric - analytic).abs() / analytic.abs())
}

#[test]
fn finite_differences_match_gradient() {
    let mut checked = 0;
    let mut seed = 0;
    while checked < 50 {
        if let Some(err) = fd_error(seed) {
            assert!(err <= 1e-5, "seed {seed}: relative error {err:e}");
            checked += 1;
        }
        seed += 1;
    }
}

#[test]
fn gradient_step_is_the_update() {
    let cfg = RunConfig {
        n: 7,
        m: 5,
        p: 9,
        mu_norm: 2.0,
        omega_init: 0.5,
        ..RunConfig::reference()
    };
    let ds = datagen::sample_dataset(&cfg, &mut substream(1, 0, Purpose::Data));
    let net = init_network(&cfg, &mut substream(1, 0, Purpose::Init));
    let grad = loss_gradient(&net, &ds).unwrap();
    let next = grokxor::trainer::gd_step(&net, &ds, 0.25).unwrap();
    for ((w1, w0), g) in next.w_flat().iter().zip(net.w_flat()).zip(&grad) {
        assert!((w1 - (w0 - 0.25 * g)).abs() <= 1e-15 * w0.abs().max(1.0));
    }
}
