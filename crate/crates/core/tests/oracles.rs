use grokxor::config::RunConfig;
use grokxor::datagen::{self, ClusterCounts, ClusterId};
use grokxor::instrument::{loglog_slope, relu_lln_check, BSpec};
use grokxor::network::{estimate_test_error, Network};
use grokxor::propcheck::{anti_concentration_oracle, anti_concentration_sizes, b4_oracle_rate};
use grokxor::rng::{substream, trial_stream, Purpose};
use ndarray::Array2;
use rand_distr::{Distribution, StandardNormal};
use statrs::distribution::{Binomial, ContinuousCDF, DiscreteCDF, Discrete, Normal};

fn upper_normal(x: f64) -> f64 {
    1.0 - Normal::new(0.0, 1.0).unwrap().cdf(x)
}

#[test]
fn flip_fraction_concentrates() {
    let (n, eta, trials) = (40_000usize, 0.05, 300u64);
    let cfg = RunConfig {
        n,
        p: 1,
        eta,
        ..RunConfig::reference()
    };
    let sigma = (eta * (1.0 - eta) / n as f64).sqrt();
    // Exact probability that a Binomial(n, η) count lands inside the band.
    let b = Binomial::new(eta, n as u64).unwrap();
    let lo = ((eta - 3.0 * sigma) * n as f64).ceil() as u64;
    let hi = ((eta + 3.0 * sigma) * n as f64).floor() as u64;
    let exact = b.cdf(hi) - b.cdf(lo - 1);
    assert!(exact >= 0.99, "{exact}");
    let inside = (0..trials)
        .filter(|&s| {
            let ds = datagen::sample_dataset(&cfg, &mut substream(11, s, Purpose::Data));
            let frac = (0..n).filter(|&i| ds.is_noisy(i)).count() as f64 / n as f64;
            (frac - eta).abs() <= 3.0 * sigma
        })
        .count() as f64
        / trials as f64;
    assert!(inside >= 0.99, "{inside} (exact {exact})");
}

#[test]
fn anti_concentration_symmetric_case() {
    let trials = 40_000;
    let thr = 200f64.sqrt();
    // X − Y + 100 ~ Binomial(200, 1/2) when X, Y ~ Binomial(100, 1/2).
    let b = Binomial::new(0.5, 200).unwrap();
    let exact = b.cdf(85) + (1.0 - b.cdf(114));
    let normal = 2.0 * upper_normal(thr / 50f64.sqrt());
    assert!((normal - 0.0455).abs() < 5e-4, "{normal}");
    assert!((exact - normal).abs() < 0.01, "{exact} vs {normal}");
    let mut r = substream(5, 0, Purpose::Oracle);
    let freq = anti_concentration_sizes(100, 100, thr, trials, &mut r);
    let se = (exact * (1.0 - exact) / trials as f64).sqrt();
    assert!((freq - exact).abs() <= 3.0 * se, "{freq} vs {exact} ± {se}");
}

#[test]
fn anti_concentration_shift_raises_rate() {
    let thr = 200f64.sqrt();
    let mut r = substream(6, 0, Purpose::Oracle);
    let sym = anti_concentration_sizes(100, 100, thr, 20_000, &mut r);
    let asym = anti_concentration_sizes(120, 80, thr, 20_000, &mut r);
    let small_sym = anti_concentration_sizes(50, 50, 10f64.sqrt() * 10f64.sqrt(), 20_000, &mut r);
    let small_asym = anti_concentration_sizes(60, 40, 10.0, 20_000, &mut r);
    assert!(asym > sym, "{asym} vs {sym}");
    assert!(small_asym > small_sym, "{small_asym} vs {small_sym}");
}

#[test]
fn anti_concentration_uses_cluster_sets() {
    let mut counts = ClusterCounts::default();
    counts.clean[ClusterId::PlusMu1.index()] = 0;
    counts.noisy[ClusterId::MinusMu1.index()] = 0;
    counts.clean[ClusterId::MinusMu1.index()] = 0;
    counts.noisy[ClusterId::PlusMu1.index()] = 0;
    counts.clean[ClusterId::PlusMu2.index()] = 100;
    counts.clean[ClusterId::MinusMu2.index()] = 100;
    let mut r = substream(7, 0, Purpose::Oracle);
    assert_eq!(anti_concentration_oracle(&counts, ClusterId::PlusMu1, 1000, &mut r), 0.0);
    let rate = anti_concentration_oracle(&counts, ClusterId::PlusMu2, 20_000, &mut r);
    let b = Binomial::new(0.5, 200).unwrap();
    let exact = b.cdf(85) + (1.0 - b.cdf(114));
    assert!((rate - exact).abs() <= 3.0 * (exact * (1.0 - exact) / 20_000.0).sqrt(), "{rate} vs {exact}");
}

/// Exact probability that one cluster pair passes both B4 checks given `k`
/// samples in the pair, for every `k ≤ n`.
fn pair_pass_by_size(n: usize, eta: f64, root: f64) -> Vec<f64> {
    let w = 2 * n + 1;
    let at = |s: i64, d: i64| ((s + n as i64) as usize) * w + (d + n as i64) as usize;
    let mut prob = vec![0.0; w * w];
    prob[at(0, 0)] = 1.0;
    let mut out = Vec::with_capacity(n + 1);
    let pass = |prob: &[f64], k: i64| {
        let mut q = 0.0;
        for s in -k..=k {
            for d in -k..=k {
                if (s as f64).abs() >= root && (d as f64).abs() >= eta * root {
                    q += prob[at(s, d)];
                }
            }
        }
        q
    };
    out.push(pass(&prob, 0));
    for k in 1..=n as i64 {
        let mut next = vec![0.0; w * w];
        for s in -(k - 1)..k {
            for d in -(k - 1)..k {
                let p = prob[at(s, d)];
                if p == 0.0 {
                    continue;
                }
                next[at(s + 1, d)] += p * 0.5 * (1.0 - eta);
                next[at(s + 1, d + 1)] += p * 0.5 * eta;
                next[at(s - 1, d)] += p * 0.5 * (1.0 - eta);
                next[at(s - 1, d - 1)] += p * 0.5 * eta;
            }
        }
        prob = next;
        out.push(pass(&prob, k));
    }
    out
}

#[test]
fn b4_rate_matches_exact_count_oracle() {
    let cfg = RunConfig::reference();
    let n = cfg.n;
    let root = (n as f64).powf(0.5 - cfg.epsilon);
    let q = pair_pass_by_size(n, cfg.eta, root);
    let split = Binomial::new(0.5, n as u64).unwrap();
    let exact: f64 = (0..=n).map(|k| split.pmf(k as u64) * q[k] * q[n - k]).sum();

    // Normal approximation of a single pair with n/2 samples, with continuity
    // corrections on the size lattice (step 2) and noise lattice (step 1).
    let k = n as f64 / 2.0;
    let size_tail = 2.0 * upper_normal((root.ceil() + (root.ceil() as u64 % 2) as f64 - 1.0) / k.sqrt());
    let noise_tail = 2.0 * upper_normal(0.5 / (k * cfg.eta).sqrt());
    let approx = size_tail * noise_tail;
    assert!((approx - q[n / 2]).abs() < 0.25 * q[n / 2], "{approx} vs {}", q[n / 2]);

    let trials = 20_000;
    let mc = b4_oracle_rate(&cfg, trials, &mut substream(3, 0, Purpose::Oracle));
    let se = (exact * (1.0 - exact) / trials as f64).sqrt();
    assert!((mc - exact).abs() <= 3.0 * se, "{mc} vs {exact} ± {se}");
}

#[test]
fn lln_constant_b_matches_binomial() {
    let m = 10_000;
    let stats = relu_lln_check(&[m], 1000, BSpec::Const(1.0), 17);
    let expect = 1.0 / (2.0 * (m as f64).sqrt());
    assert!((stats[0].std_dev - expect).abs() <= 0.1 * expect, "{} vs {expect}", stats[0].std_dev);
}

#[test]
fn lln_zero_b_is_exact() {
    for s in relu_lln_check(&[1, 10, 1000], 20, BSpec::Const(0.0), 3) {
        assert_eq!(s.mean_abs_dev, 0.0);
        assert_eq!(s.q90, 0.0);
    }
}

#[test]
fn lln_normal_b_slope() {
    let stats = relu_lln_check(&[100, 400, 1600, 6400], 400, BSpec::Normal { mean: 0.0, sd: 1.0 }, 21);
    let slope = loglog_slope(&stats);
    assert!((-0.6..=-0.4).contains(&slope), "{slope}");
}

/// `f(x) = |⟨μ₁,x⟩| − |⟨μ₂,x⟩|` from four neurons.
fn xor_oracle(mu1: &[f64], mu2: &[f64]) -> Network {
    let p = mu1.len();
    let mut w = Array2::zeros((4, p));
    for k in 0..p {
        w[[0, k]] = mu1[k];
        w[[1, k]] = -mu1[k];
        w[[2, k]] = mu2[k];
        w[[3, k]] = -mu2[k];
    }
    Network::new(w, vec![1, 1, -1, -1]).unwrap()
}

#[test]
fn xor_oracle_generalizes() {
    let cfg = RunConfig::reference();
    let ds = datagen::sample_dataset(&RunConfig { n: 4, ..cfg.clone() }, &mut substream(0, 0, Purpose::Data));
    // Brute-force the scalar comparison first: ⟨μ₁,x⟩ ~ N(±‖μ‖², ‖μ‖²) against ⟨μ₂,x⟩ ~ N(0, ‖μ‖²).
    let mu_sq = cfg.mu_sq();
    let mut r = trial_stream(0, 0, Purpose::Oracle, 0);
    let scalar_err = (0..1_000_000)
        .filter(|_| {
            let u: f64 = StandardNormal.sample(&mut r);
            let v: f64 = StandardNormal.sample(&mut r);
            (mu_sq + mu_sq.sqrt() * u).abs() <= (mu_sq.sqrt() * v).abs()
        })
        .count();
    assert_eq!(scalar_err, 0);
    let net = xor_oracle(&ds.mu1, &ds.mu2);
    let err = estimate_test_error(&net, &ds, 10_000, &mut substream(0, 0, Purpose::Fresh));
    assert!(err < 0.01, "{err}");
}

#[test]
fn constant_classifier_is_at_chance() {
    let cfg = RunConfig { p: 50, n: 4, ..RunConfig::reference() };
    let ds = datagen::sample_dataset(&cfg, &mut substream(2, 0, Purpose::Data));
    let net = Network::new(Array2::zeros((3, cfg.p)), vec![1, -1, 1]).unwrap();
    let trials = 20_000;
    let err = estimate_test_error(&net, &ds, trials, &mut substream(2, 0, Purpose::Fresh));
    assert!((err - 0.5).abs() <= 3.0 * (0.25 / trials as f64).sqrt(), "{err}");
}

#[test]
fn reference_norms_and_cossim() {
    let cfg = RunConfig::reference();
    let band = 10.0 * (cfg.p as f64 * (cfg.n as f64).ln()).sqrt();
    let centre = cfg.p as f64 + cfg.mu_sq();
    assert!((band - 4603.6).abs() < 0.1, "{band}");
    let (lo, hi) = (centre - band, centre + band);
    let expected = cfg.mu_sq() / (cfg.p as f64 + cfg.mu_sq());
    assert!((expected - 0.03).abs() < 0.001);
    for seed in 0..3 {
        let ds = datagen::sample_dataset(&cfg, &mut substream(cfg.seed, seed, Purpose::Data));
        let g = ds.gram();
        for i in 0..cfg.n {
            assert!((lo..=hi).contains(&g[[i, i]]), "seed {seed} row {i}: {}", g[[i, i]]);
        }
        let c = datagen::max_abs_cossim_with_gram(&g).unwrap();
        assert!(c > expected && c <= 0.06, "seed {seed}: {c}");
    }
}
