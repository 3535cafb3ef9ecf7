use grokxor::config::RunConfig;
use grokxor::datagen::{self, ClusterId, SampleOptions};
use grokxor::network::{init_network, Network};
use grokxor::rng::{substream, Purpose};
use grokxor::trainer::{compute_g, gd_step, linearized_first_step, step_residuals, GVector};

fn cfg(n: usize, p: usize, m: usize) -> RunConfig {
    RunConfig {
        n,
        p,
        m,
        mu_norm: 3.0,
        omega_init: 0.2,
        alpha: 0.01,
        ..RunConfig::reference()
    }
}

#[test]
fn linearized_equals_true_step_at_zero_init() {
    let c = RunConfig { omega_init: 0.0, ..cfg(12, 20, 6) };
    let ds = datagen::sample_dataset(&c, &mut substream(1, 0, Purpose::Data));
    let net = init_network(&c, &mut substream(1, 0, Purpose::Init));
    let g = compute_g(&net, &ds);
    assert_eq!(g, GVector::constant_half(ds.n()));
    assert_eq!(g.ratio(), 1.0);
    assert_eq!(g.max_abs_h(), 0.0);
    let a = linearized_first_step(&net, &ds, c.alpha).unwrap();
    let b = gd_step(&net, &ds, c.alpha).unwrap();
    assert_eq!(a.w, b.w);
}

#[test]
fn linearized_step_is_odd_in_a() {
    let c = cfg(15, 25, 9);
    let ds = datagen::sample_dataset(&c, &mut substream(2, 0, Purpose::Data));
    let net = init_network(&c, &mut substream(2, 0, Purpose::Init));
    let flipped = Network::new(net.w.clone(), net.sign.iter().map(|s| -s).collect()).unwrap();
    let a = linearized_first_step(&net, &ds, c.alpha).unwrap();
    let b = linearized_first_step(&flipped, &ds, c.alpha).unwrap();
    let da = &a.w - &net.w;
    let db = &b.w - &net.w;
    // The increments negate exactly; storing w0 + δ rounds at the scale of w0.
    for ((x, y), w) in da.iter().zip(db.iter()).zip(net.w.iter()) {
        assert!((x + y).abs() <= 2.0 * f64::EPSILON * w.abs(), "{x} vs {y}");
        assert!(x.abs() > 0.0 || *y == 0.0);
    }
}

#[test]
fn g_of_unit_margin() {
    let g = GVector::from_margins(vec![1.0]);
    assert!((g.g[0] - 0.268_941_421_369_995_1).abs() < 1e-15);
}

#[test]
fn residuals_finite_at_zero_init() {
    let c = RunConfig { omega_init: 0.0, ..cfg(10, 30, 8) };
    let ds = datagen::sample_dataset(&c, &mut substream(3, 0, Purpose::Data));
    let net = init_network(&c, &mut substream(3, 0, Purpose::Init));
    let next = gd_step(&net, &ds, c.alpha).unwrap();
    let r = step_residuals(&net, &next, &ds, c.alpha, 1.0);
    assert!(r.max_ratio.is_finite() && r.mean_ratio.is_finite() && r.mu_max_ratio.is_finite());
}

/// With every `x_i = μ₁` the cross terms vanish and each residual has the closed form
/// `|(α a_j/n)·s_j·‖μ‖²·Σ h_i y_i − (α a_j/2n)·y_k·s_j·p|`, `s_j = 1[⟨w_j, μ₁⟩ > 0]`.
#[test]
fn residuals_single_cluster_closed_form() {
    let c = RunConfig { eta: 0.2, ..cfg(16, 10, 12) };
    let opts = SampleOptions {
        noiseless: true,
        single_cluster: Some(ClusterId::PlusMu1),
        ..SampleOptions::default()
    };
    let ds = datagen::sample_dataset_with(&c, &mut substream(4, 0, Purpose::Data), &opts);
    let net = init_network(&c, &mut substream(4, 0, Purpose::Init));
    let next = gd_step(&net, &ds, c.alpha).unwrap();
    let r = step_residuals(&net, &next, &ds, c.alpha, 1.0);
    let g = compute_g(&net, &ds);
    let (n, p) = (ds.n() as f64, ds.p() as f64);
    let mu_sq = c.mu_norm * c.mu_norm;
    let hy: f64 = (0..ds.n()).map(|i| g.h[i] * ds.yf(i)).sum();
    let mut expect = 0.0f64;
    for j in 0..net.m() {
        let s = if grokxor::linalg::dot(net.row(j), &ds.mu1) > 0.0 { 1.0 } else { 0.0 };
        let a = net.a(j);
        for k in 0..ds.n() {
            let v = (c.alpha * a / n * s * mu_sq * hy - c.alpha * a / (2.0 * n) * ds.yf(k) * s * p).abs();
            expect = expect.max(v);
        }
    }
    assert!((r.max_residual - expect).abs() <= 1e-12 * expect.max(1e-300), "{} vs {expect}", r.max_residual);
}
