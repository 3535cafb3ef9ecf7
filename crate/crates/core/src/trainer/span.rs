use ndarray::{Array2, ArrayView2, Axis};

use super::{point_outputs, Engine, GVector, TrainHook, TrainOptions, TrainTrace};
use crate::config::RunConfig;
use crate::datagen::{self, symmetric_gram, Dataset, SampleOptions};
use crate::error::{Error, Result};
use crate::linalg;
use crate::network::{self, label_of, Network};
use crate::par::{self, Parallelism};
use crate::rng::{self, Purpose, Rng};

/// Step-independent quantities for training in span coordinates.
#[derive(Clone, Debug)]
pub struct SpanModel {
    pub n: usize,
    pub m: usize,
    pub p: usize,
    pub y: Vec<f64>,
    pub sign: Vec<i8>,
    pub scale: f64,
    /// `X Xᵀ`.
    pub gram: Array2<f64>,
    /// `W₀ Xᵀ`, neuron-major.
    pub z0: Array2<f64>,
    pub w0_sq: Vec<f64>,
    /// `⟨w⁽⁰⁾_j, μ_k⟩` for `k = 1, 2`.
    pub w0_proj: [Vec<f64>; 2],
    /// `⟨x_i, μ_k⟩` for `k = 1, 2`.
    pub x_proj: [Vec<f64>; 2],
}

impl SpanModel {
    pub fn new(ds: &Dataset, net0: &Network, mode: Parallelism) -> Self {
        let gram = symmetric_gram(&ds.x);
        let z0 = net0.w.dot(&ds.x.t());
        let m = net0.m();
        let w0_sq = par::map_indexed(m, mode, |j| linalg::norm_sq(net0.row(j)));
        let w0_proj = [
            network::neuron_projections(net0, &ds.mu1, None),
            network::neuron_projections(net0, &ds.mu2, None),
        ];
        let x_proj = [
            (0..ds.n()).map(|i| linalg::dot(ds.row(i), &ds.mu1)).collect(),
            (0..ds.n()).map(|i| linalg::dot(ds.row(i), &ds.mu2)).collect(),
        ];
        SpanModel {
            n: ds.n(),
            m,
            p: ds.p(),
            y: (0..ds.n()).map(|i| ds.yf(i)).collect(),
            sign: net0.sign.clone(),
            scale: net0.scale,
            gram,
            z0,
            w0_sq,
            w0_proj,
            x_proj,
        }
    }

    fn a(&self, j: usize) -> f64 {
        f64::from(self.sign[j]) * self.scale
    }

    /// Adds one step's coefficients to `b` given activations `z` and `g`.
    fn accumulate(&self, b: &mut Array2<f64>, z: &Array2<f64>, g: &[f64], alpha: f64, mode: Parallelism) {
        let n = self.n;
        let nf = n as f64;
        let gy: Vec<f64> = g.iter().zip(&self.y).map(|(g, y)| g * y).collect();
        let zs = z.as_slice().expect("contiguous");
        let bs = b.as_slice_mut().expect("contiguous");
        par::for_each_row(bs, n, mode, |j, row| {
            let s = alpha * self.a(j) / nf;
            for (i, v) in row.iter_mut().enumerate() {
                if zs[j * n + i] > 0.0 {
                    *v += s * gy[i];
                }
            }
        });
    }

    /// `‖W⁽¹⁾ − W_T⁽¹⁾‖_F` for the first step from `W₀` with margins `g`.
    pub fn linearized_gap(&self, g: &GVector, alpha: f64) -> f64 {
        let mut c = Array2::<f64>::zeros((self.m, self.n));
        let h: Vec<f64> = g.g.iter().map(|v| v - 0.5).collect();
        self.accumulate(&mut c, &self.z0, &h, alpha, Parallelism::default());
        let cg = c.dot(&self.gram);
        let total: f64 = (0..self.m)
            .map(|j| linalg::dot(c.row(j).as_slice().unwrap(), cg.row(j).as_slice().unwrap()))
            .sum();
        total.max(0.0).sqrt()
    }
}

/// Fresh clean test points, kept only through their inner products with
/// `W₀` and the training inputs.
#[derive(Clone, Debug)]
pub struct TestSpan {
    /// `X_test W₀ᵀ`, point-major `n_test × m`.
    pub zt0: Array2<f64>,
    /// `X_test Xᵀ`, point-major `n_test × n`.
    pub xxt: Array2<f64>,
    pub y: Vec<i8>,
    /// `Σ_i y_i ⟨x_i, x⟩` per test point.
    pub linear_score: Vec<f64>,
    /// Per-step bound on `|Δf|`, divided by `α`.
    pub lip: Vec<f64>,
}

impl TestSpan {
    pub fn new(model: &SpanModel, ds: &Dataset, net0: &Network, count: usize, rng: &mut Rng) -> Self {
        let mut zt0 = Array2::zeros((0, model.m));
        let mut xxt = Array2::zeros((0, model.n));
        let mut y = Vec::with_capacity(count);
        let mut done = 0;
        while done < count {
            let k = network::TEST_CHUNK.min(count - done);
            let pts = datagen::draw_points(&ds.mu1, &ds.mu2, 0.0, k, rng, &SampleOptions::default());
            zt0.append(Axis(0), pts.x.dot(&net0.w.t()).view()).expect("widths match");
            xxt.append(Axis(0), pts.x.dot(&ds.x.t()).view()).expect("widths match");
            y.extend(pts.y);
            done += k;
        }
        let nf = model.n as f64;
        let linear_score = (0..count)
            .map(|k| {
                let mut s = 0.0;
                for (v, yi) in xxt.row(k).iter().zip(&model.y) {
                    s += yi * v;
                }
                s
            })
            .collect();
        let lip = (0..count).map(|k| xxt.row(k).iter().map(|v| v.abs()).sum::<f64>() / nf).collect();
        TestSpan {
            zt0,
            xxt,
            y,
            linear_score,
            lip,
        }
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    /// Comparator labels `sgn Σ_i y_i⟨x_i, x⟩`.
    pub fn linear_labels(&self) -> Vec<i8> {
        self.linear_score.iter().map(|&s| label_of(s).0).collect()
    }

    /// Exact outputs at coefficients `b` for the listed points.
    pub fn outputs(&self, model: &SpanModel, b: ArrayView2<f64>, idx: &[usize], mode: Parallelism) -> Vec<f64> {
        if idx.is_empty() {
            return Vec::new();
        }
        let xs = self.xxt.select(Axis(0), idx);
        // point-major `|idx| × m`
        let mut zt = xs.dot(&b.t());
        for (r, &k) in idx.iter().enumerate() {
            let mut row = zt.row_mut(r);
            for (v, z0) in row.iter_mut().zip(self.zt0.row(k)) {
                *v += z0;
            }
        }
        point_outputs(zt.as_slice().expect("contiguous"), idx.len(), &model.sign, model.scale, mode)
    }
}

/// Keeps each test point's last exact output and the step up to which its
/// sign is certified unchanged by the per-step Lipschitz bound.
#[derive(Clone, Debug)]
struct TestTracker {
    labels: Vec<i8>,
    ties: Vec<bool>,
    valid_until: Vec<u64>,
    fresh: bool,
}

impl TestTracker {
    fn new(len: usize) -> Self {
        TestTracker {
            labels: vec![1; len],
            ties: vec![false; len],
            valid_until: vec![0; len],
            fresh: true,
        }
    }
}

/// Training in span coordinates: `W⁽ᵗ⁾ = W₀ + B⁽ᵗ⁾ X`.
pub struct SpanEngine<'a> {
    model: &'a SpanModel,
    ds: &'a Dataset,
    net0: &'a Network,
    alpha: f64,
    t: u64,
    b: Array2<f64>,
    bg: Array2<f64>,
    z: Array2<f64>,
    test: Option<(&'a TestSpan, TestTracker)>,
    mode: Parallelism,
}

impl<'a> SpanEngine<'a> {
    pub fn new(
        model: &'a SpanModel,
        ds: &'a Dataset,
        net0: &'a Network,
        alpha: f64,
        test: Option<&'a TestSpan>,
        mode: Parallelism,
    ) -> Self {
        SpanEngine {
            model,
            ds,
            net0,
            alpha,
            t: net0.step_index,
            b: Array2::zeros((model.m, model.n)),
            bg: Array2::zeros((model.m, model.n)),
            z: model.z0.clone(),
            test: test.map(|t| (t, TestTracker::new(t.len()))),
            mode,
        }
    }

    pub fn coefficients(&self) -> &Array2<f64> {
        &self.b
    }

    /// Network outputs on every attached test point at the current step.
    pub fn test_outputs(&self) -> Option<Vec<f64>> {
        let (test, _) = self.test.as_ref()?;
        let idx: Vec<usize> = (0..test.len()).collect();
        Some(test.outputs(self.model, self.b.view(), &idx, self.mode))
    }
}

impl Engine for SpanEngine<'_> {
    fn t(&self) -> u64 {
        self.t
    }

    fn m(&self) -> usize {
        self.model.m
    }

    fn n(&self) -> usize {
        self.model.n
    }

    fn sign(&self) -> &[i8] {
        &self.model.sign
    }

    fn scale(&self) -> f64 {
        self.model.scale
    }

    fn preacts(&self) -> &[f64] {
        self.z.as_slice().expect("contiguous")
    }

    fn apply(&mut self, g: &GVector) -> Result<()> {
        self.model.accumulate(&mut self.b, &self.z, &g.g, self.alpha, self.mode);
        if let Some((j, _)) = self.b.indexed_iter().find(|(_, v)| !v.is_finite()) {
            return Err(Error::NonFinite {
                step: self.t,
                neuron: j.0,
            });
        }
        self.bg = self.b.dot(&self.model.gram);
        self.z = &self.model.z0 + &self.bg;
        self.t += 1;
        Ok(())
    }

    fn w_fro(&self) -> f64 {
        let n = self.model.n;
        let b = self.b.as_slice().unwrap();
        let z0 = self.model.z0.as_slice().unwrap();
        let bg = self.bg.as_slice().unwrap();
        let total: f64 = (0..self.model.m)
            .map(|j| {
                let r = j * n..(j + 1) * n;
                self.model.w0_sq[j] + 2.0 * linalg::dot(&b[r.clone()], &z0[r.clone()]) + linalg::dot(&b[r.clone()], &bg[r])
            })
            .sum();
        total.max(0.0).sqrt()
    }

    fn projections(&self) -> [Vec<f64>; 2] {
        let n = self.model.n;
        let b = self.b.as_slice().unwrap();
        let one = |k: usize| -> Vec<f64> {
            (0..self.model.m)
                .map(|j| self.model.w0_proj[k][j] + linalg::dot(&b[j * n..(j + 1) * n], &self.model.x_proj[k]))
                .collect()
        };
        [one(0), one(1)]
    }

    fn network(&self) -> Network {
        let mut net = self.net0.clone();
        net.w = &self.net0.w + &self.b.dot(&self.ds.x);
        net.step_index = self.t;
        net
    }

    fn test_error(&mut self) -> Option<(f64, u64)> {
        let (test, tracker) = self.test.as_mut()?;
        let t = self.t;
        let stale: Vec<usize> = (0..test.len())
            .filter(|&k| tracker.fresh || t > tracker.valid_until[k])
            .collect();
        tracker.fresh = false;
        let f = test.outputs(self.model, self.b.view(), &stale, self.mode);
        for (&k, &v) in stale.iter().zip(&f) {
            let (l, tie) = label_of(v);
            tracker.labels[k] = l;
            tracker.ties[k] = tie;
            let lip = self.alpha * test.lip[k];
            let window = if tie || lip == 0.0 && v == 0.0 {
                0
            } else if lip == 0.0 {
                u64::MAX - t
            } else {
                (0.5 * v.abs() / lip).floor().min(1e15) as u64
            };
            tracker.valid_until[k] = t.saturating_add(window);
        }
        let wrong = tracker.labels.iter().zip(&test.y).filter(|(a, b)| a != b).count();
        let ties = tracker.ties.iter().filter(|&&v| v).count() as u64;
        Some((wrong as f64 / test.len().max(1) as f64, ties))
    }
}

/// One seed's data, initialization and precomputed span quantities, reused
/// across step sizes.
pub struct Experiment {
    pub cfg: RunConfig,
    pub seed_index: u64,
    pub ds: Dataset,
    pub net0: Network,
    pub model: SpanModel,
    pub test: Option<TestSpan>,
}

impl Experiment {
    pub fn prepare(cfg: &RunConfig, seed_index: u64, with_test: bool, mode: Parallelism) -> Self {
        let ds = datagen::sample_dataset(cfg, &mut rng::substream(cfg.seed, seed_index, Purpose::Data));
        let net0 = network::init_network(cfg, &mut rng::substream(cfg.seed, seed_index, Purpose::Init));
        let model = SpanModel::new(&ds, &net0, mode);
        let test = with_test.then(|| {
            let mut r = rng::substream(cfg.seed, seed_index, Purpose::Test);
            TestSpan::new(&model, &ds, &net0, cfg.n_test, &mut r)
        });
        Experiment {
            cfg: cfg.clone(),
            seed_index,
            ds,
            net0,
            model,
            test,
        }
    }

    pub fn engine(&self, alpha: f64, mode: Parallelism) -> SpanEngine<'_> {
        SpanEngine::new(&self.model, &self.ds, &self.net0, alpha, self.test.as_ref(), mode)
    }

    /// Trains with `alpha` for `steps` steps.
    pub fn train(&self, alpha: f64, steps: u64, hooks: &mut [&mut dyn TrainHook], mode: Parallelism) -> Result<TrainTrace> {
        let mut cfg = self.cfg.clone();
        cfg.alpha = alpha;
        cfg.steps = steps;
        let opts = TrainOptions {
            mode,
            seed_index: self.seed_index,
            with_test: self.test.is_some(),
            ..TrainOptions::default()
        };
        let mut engine = self.engine(alpha, mode);
        super::drive(&cfg, &self.ds, &mut engine, hooks, &opts)
    }
}
