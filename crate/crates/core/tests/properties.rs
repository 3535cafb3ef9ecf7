use grokxor::config::{check_assumptions, t_max, RunConfig};
use grokxor::datagen::{self, cluster_counts, ClusterId, Dataset};
use grokxor::instrument::{self, aligned_sets, linear_comparator};
use grokxor::network::{self, forward, init_network, predict, relu, Network};
use grokxor::propcheck::{evaluate_seed, SuiteId};
use grokxor::rng::{substream, Purpose};
use ndarray::Array2;
use proptest::prelude::*;

fn small(n: usize, p: usize, m: usize, seed: u64) -> RunConfig {
    RunConfig {
        n,
        p,
        m,
        mu_norm: 3.0,
        omega_init: 0.5,
        seed,
        n_test: 50,
        ..RunConfig::reference()
    }
}

fn instance(cfg: &RunConfig) -> (Dataset, Network) {
    let ds = datagen::sample_dataset(cfg, &mut substream(cfg.seed, 0, Purpose::Data));
    let net = init_network(cfg, &mut substream(cfg.seed, 0, Purpose::Init));
    (ds, net)
}

fn close(a: f64, b: f64, rel: f64) -> bool {
    (a - b).abs() <= rel * a.abs().max(b.abs()).max(f64::MIN_POSITIVE)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn assumptions_are_pure(alpha in 1e-16f64..1e-6, c in 0.01f64..10.0) {
        let cfg = RunConfig { alpha, c_const: c, ..RunConfig::reference() };
        prop_assert_eq!(check_assumptions(&cfg), check_assumptions(&cfg));
    }

    #[test]
    fn t_max_scales_inversely(alpha in 1e-15f64..1e-9, k in prop::sample::select(vec![0.5, 2.0, 4.0, 0.25, 8.0])) {
        let a = RunConfig { alpha, ..RunConfig::reference() };
        let b = RunConfig { alpha: alpha * k, ..RunConfig::reference() };
        let lhs = t_max(&b) + 2.0;
        let rhs = (t_max(&a) + 2.0) / k;
        prop_assert!(close(lhs, rhs, 1e-12), "{lhs} vs {rhs}");
    }

    #[test]
    fn dataset_partition_and_labels(n in 0usize..40, p in 2usize..12, eta in 0.0f64..0.49, seed in any::<u64>()) {
        let cfg = RunConfig { eta, ..small(n, p, 4, seed) };
        let (ds, _) = instance(&cfg);
        let counts = cluster_counts(&ds);
        prop_assert_eq!(counts.total(), n);
        let mut seen = [0usize; 4];
        for i in 0..n {
            seen[ds.cluster[i].index()] += 1;
            prop_assert_eq!(ds.cluster[i].clean_label(), ds.y_clean[i]);
            prop_assert_eq!(ds.is_noisy(i), ds.y[i] != ds.y_clean[i]);
        }
        for v in ClusterId::ALL {
            prop_assert_eq!(seen[v.index()], counts.size(v));
        }
    }

    #[test]
    fn dataset_is_deterministic(n in 1usize..20, p in 2usize..10, seed in any::<u64>()) {
        let cfg = small(n, p, 4, seed);
        let a = datagen::sample_dataset(&cfg, &mut substream(seed, 3, Purpose::Data));
        let b = datagen::sample_dataset(&cfg, &mut substream(seed, 3, Purpose::Data));
        prop_assert_eq!(a, b);
    }

    #[test]
    fn negation_preserves_b1_b2(n in 2usize..20, p in 2usize..10, seed in any::<u64>()) {
        let cfg = small(n, p, 4, seed);
        let (ds, _) = instance(&cfg);
        let neg = Dataset::from_parts(
            ds.x.mapv(|v| -v),
            ds.y.clone(),
            ds.cluster.iter().map(|c| c.negate()).collect(),
            ds.mu1.clone(),
            ds.mu2.clone(),
            ds.eta,
        ).unwrap();
        let a = datagen::check_data_conditions(&ds, 2e-4);
        let b = datagen::check_data_conditions(&neg, 2e-4);
        for name in ["B1.proj", "B1.norm", "B2.cross"] {
            let (x, y) = (a.get(name).unwrap().measured, b.get(name).unwrap().measured);
            prop_assert!(close(x, y, 1e-12), "{name}: {x} vs {y}");
        }
    }

    #[test]
    fn positive_homogeneity(lambda in 0.0f64..50.0, seed in any::<u64>()) {
        let cfg = small(4, 7, 9, seed);
        let (ds, net) = instance(&cfg);
        let x = ds.row(0).to_vec();
        let scaled: Vec<f64> = x.iter().map(|v| lambda * v).collect();
        let lhs = forward(&net, &scaled).unwrap();
        let rhs = lambda * forward(&net, &x).unwrap();
        prop_assert!((lhs - rhs).abs() <= 1e-12 * rhs.abs().max(1e-300) || lhs == rhs, "{lhs} vs {rhs}");
    }

    #[test]
    fn predict_is_scale_invariant(lambda in 1e-3f64..1e3, seed in any::<u64>()) {
        let cfg = small(6, 5, 11, seed);
        let (ds, net) = instance(&cfg);
        for i in 0..ds.n() {
            let scaled: Vec<f64> = ds.row(i).iter().map(|v| lambda * v).collect();
            prop_assert_eq!(predict(&net, &scaled).unwrap(), predict(&net, ds.row(i)).unwrap());
        }
    }

    #[test]
    fn neuron_permutation_invariance(perm_seed in any::<u64>(), seed in any::<u64>()) {
        let cfg = small(3, 6, 8, seed);
        let (ds, net) = instance(&cfg);
        let mut order: Vec<usize> = (0..net.m()).collect();
        let mut r = substream(perm_seed, 0, Purpose::Oracle);
        rand::seq::SliceRandom::shuffle(order.as_mut_slice(), &mut r);
        let mut w = Array2::zeros((net.m(), net.p()));
        let mut sign = vec![0i8; net.m()];
        for (k, &j) in order.iter().enumerate() {
            w.row_mut(k).assign(&net.w.row(j));
            sign[k] = net.sign[j];
        }
        let permuted = Network::new(w, sign).unwrap();
        for i in 0..ds.n() {
            let a = forward(&net, ds.row(i)).unwrap();
            let b = forward(&permuted, ds.row(i)).unwrap();
            prop_assert!((a - b).abs() <= 1e-12 * a.abs().max(1e-300), "{a} vs {b}");
        }
    }

    #[test]
    fn relu_decomposition(u in prop::num::f64::NORMAL | prop::num::f64::ZERO | prop::num::f64::SUBNORMAL) {
        prop_assert_eq!(relu(u) - relu(-u), u);
    }

    #[test]
    fn d_antisymmetry_and_count_bounds(n in 1usize..40, m in 1usize..12, seed in any::<u64>()) {
        let cfg = small(n, 6, m, seed);
        let (ds, net) = instance(&cfg);
        let counts = cluster_counts(&ds);
        let stats = instrument::activation_stats(&net, &ds);
        for j in 0..m {
            for v in ClusterId::ALL {
                prop_assert_eq!(stats.big_d(v, j) + stats.big_d(v.negate(), j), 0);
                let active = (stats.c_act(v, j) + stats.n_act(v, j)) as usize;
                prop_assert!(active <= counts.size(v));
                prop_assert!(stats.c_act(v, j) as usize <= counts.c(v));
                prop_assert!(stats.n_act(v, j) as usize <= counts.nn(v));
            }
        }
    }

    #[test]
    fn aligned_sets_grow_with_kappa(k1 in 0.0f64..0.5, dk in 0.0f64..0.5, n in 4usize..60, seed in any::<u64>()) {
        let cfg = small(n, 8, 30, seed);
        let (ds, net) = instance(&cfg);
        let counts = cluster_counts(&ds);
        let stats = instrument::activation_stats(&net, &ds);
        let a = aligned_sets(&stats, &counts, k1, &net.sign, 2e-4);
        let b = aligned_sets(&stats, &counts, k1 + dk, &net.sign, 2e-4);
        for v in ClusterId::ALL {
            for s in instrument::SignClass::ALL {
                let big = b.get(v, s);
                prop_assert!(a.get(v, s).iter().all(|j| big.contains(j)));
            }
        }
    }

    #[test]
    fn comparator_agreement_is_scale_invariant(lambda in 1e-3f64..1e3, seed in any::<u64>()) {
        let cfg = small(10, 6, 7, seed);
        let (ds, net) = instance(&cfg);
        let comp = linear_comparator(&ds);
        let x = ds.x_flat().to_vec();
        let scaled: Vec<f64> = x.iter().map(|v| v * lambda).collect();
        let a = instrument::agreement(&net, &comp, &x, ds.n());
        let b = instrument::agreement(&net, &comp, &scaled, ds.n());
        prop_assert_eq!(a, b);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn suite_evaluation_is_pure(seed in any::<u64>(), index in 0u64..1000) {
        let cfg = small(24, 30, 20, seed);
        let a = evaluate_seed(&cfg, index, &SuiteId::ALL);
        let b = evaluate_seed(&cfg, index, &SuiteId::ALL);
        prop_assert_eq!(a, b);
    }
}

#[test]
fn zero_network_forward_is_zero() {
    let cfg = RunConfig { omega_init: 0.0, ..small(5, 4, 6, 1) };
    let (ds, net) = instance(&cfg);
    for i in 0..ds.n() {
        assert_eq!(forward(&net, ds.row(i)).unwrap(), 0.0);
    }
    assert_eq!(network::train_accuracy(&net, &ds), ds.y.iter().filter(|&&v| v == 1).count() as f64 / 5.0);
}
