//! Full-batch gradient descent on the logistic loss.
//!
//! Two engines implement the same update. [`DenseEngine`] keeps `W`
//! explicitly and is the literal reference. [`SpanEngine`] uses that every
//! row of `W⁽ᵗ⁾ − W⁽⁰⁾` lies in the span of the training inputs and tracks
//! the `m × n` coefficient matrix instead, which makes a step cost
//! `O(m n²)` rather than `O(m n p)`.

mod dense;
mod monitor;
mod span;

pub use dense::{gd_step, gd_step_in_place, linearized_first_step, loss_gradient, DenseEngine, DenseTest};
pub use monitor::{residuals_from_preacts, step_residuals, PropertyMonitor, ResidualMonitor, ResidualStats, TrajectoryCounts};
pub use span::{Experiment, SpanEngine, SpanModel, TestSpan};

use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::config::{self, RunConfig};
use crate::datagen::{cluster_counts, ClusterCounts, Dataset};
use crate::error::Result;
use crate::instrument::{self, AlignedSets};
use crate::network::{label_of, relu, Network};
use crate::par::{self, Parallelism};

/// Loss derivatives at the current weights.
#[derive(Clone, Debug, PartialEq)]
pub struct GVector {
    pub g: Vec<f64>,
    pub h: Vec<f64>,
    pub z: Vec<f64>,
}

impl GVector {
    pub fn from_margins(z: Vec<f64>) -> Self {
        let g: Vec<f64> = z.iter().map(|&v| 1.0 / (1.0 + v.exp())).collect();
        let h = g.iter().map(|&v| v - 0.5).collect();
        GVector { g, h, z }
    }

    /// `g ≡ 1/2`, the unhinged surrogate.
    pub fn constant_half(n: usize) -> Self {
        GVector {
            g: vec![0.5; n],
            h: vec![0.0; n],
            z: vec![0.0; n],
        }
    }

    pub fn max_abs_h(&self) -> f64 {
        self.h.iter().fold(0.0f64, |a, v| a.max(v.abs()))
    }

    /// `max g / min g`.
    pub fn ratio(&self) -> f64 {
        let hi = self.g.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lo = self.g.iter().copied().fold(f64::INFINITY, f64::min);
        if self.g.is_empty() {
            1.0
        } else {
            hi / lo
        }
    }

    /// Mean logistic loss `log(1 + e^{-z})`.
    pub fn risk(&self) -> f64 {
        if self.z.is_empty() {
            return 0.0;
        }
        let s: f64 = self.z.iter().map(|&v| softplus(-v)).sum();
        s / self.z.len() as f64
    }
}

fn softplus(u: f64) -> f64 {
    if u > 0.0 {
        u + (-u).exp().ln_1p()
    } else {
        u.exp().ln_1p()
    }
}

/// `f(x_i)` from neuron-major pre-activations, summed over ascending `j`.
pub fn outputs_from_preacts(z: &[f64], m: usize, n: usize, sign: &[i8], scale: f64) -> Vec<f64> {
    let mut f = vec![0.0; n];
    for j in 0..m {
        let a = f64::from(sign[j]) * scale;
        for (fi, &v) in f.iter_mut().zip(&z[j * n..(j + 1) * n]) {
            *fi += a * relu(v);
        }
    }
    f
}

pub fn g_from_outputs(f: &[f64], ds: &Dataset) -> GVector {
    GVector::from_margins(f.iter().enumerate().map(|(i, &v)| ds.yf(i) * v).collect())
}

pub fn compute_g(net: &Network, ds: &Dataset) -> GVector {
    let z = instrument::preactivations(net, ds, Parallelism::default());
    let f = outputs_from_preacts(&z, net.m(), ds.n(), &net.sign, net.scale);
    g_from_outputs(&f, ds)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepMetrics {
    pub t: u64,
    pub train_acc: f64,
    pub test_err: f64,
    pub risk: f64,
    pub r: f64,
    pub max_abs_h: f64,
    pub w_fro: f64,
    pub al_p_mu1: usize,
    pub al_p_mu2: usize,
    pub al_n_mu1: usize,
    pub al_n_mu2: usize,
    pub j1_mean_proj: f64,
    pub j2_mean_absproj: f64,
}

pub const TRACE_HEADER: &str =
    "t,train_acc,test_err,risk,r,max_abs_h,w_fro,al_p_mu1,al_p_mu2,al_n_mu1,al_n_mu2,j1_mean_proj,j2_mean_absproj";

/// Numeric trace columns after `t`, in CSV order.
pub const TRACE_COLUMNS: [&str; 12] = [
    "train_acc",
    "test_err",
    "risk",
    "r",
    "max_abs_h",
    "w_fro",
    "al_p_mu1",
    "al_p_mu2",
    "al_n_mu1",
    "al_n_mu2",
    "j1_mean_proj",
    "j2_mean_absproj",
];

impl StepMetrics {
    pub fn values(&self) -> [f64; 12] {
        [
            self.train_acc,
            self.test_err,
            self.risk,
            self.r,
            self.max_abs_h,
            self.w_fro,
            self.al_p_mu1 as f64,
            self.al_p_mu2 as f64,
            self.al_n_mu1 as f64,
            self.al_n_mu2 as f64,
            self.j1_mean_proj,
            self.j2_mean_absproj,
        ]
    }

    pub fn csv_row(&self) -> String {
        let v = self.values();
        let mut s = self.t.to_string();
        for (i, x) in v.iter().enumerate() {
            s.push(',');
            if (6..10).contains(&i) {
                s.push_str(&(*x as usize).to_string());
            } else {
                s.push_str(&format!("{x:?}"));
            }
        }
        s
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainTrace {
    pub steps: Vec<StepMetrics>,
    pub warnings: Vec<String>,
    /// Zero outputs resolved to `+1` while computing train and test labels.
    pub ties: u64,
    pub j1_size: usize,
    pub j2_size: usize,
    pub stopped_early: bool,
}

impl TrainTrace {
    pub fn to_csv(&self) -> String {
        let mut s = String::from(TRACE_HEADER);
        s.push('\n');
        for m in &self.steps {
            s.push_str(&m.csv_row());
            s.push('\n');
        }
        s
    }

    pub fn at(&self, t: u64) -> Option<&StepMetrics> {
        self.steps.iter().find(|m| m.t == t)
    }

    /// First step at which `pred` holds.
    pub fn first(&self, pred: impl Fn(&StepMetrics) -> bool) -> Option<u64> {
        self.steps.iter().find(|m| pred(m)).map(|m| m.t)
    }
}

/// Read-only state handed to hooks after the metrics of step `t` are known.
pub struct StepView<'a> {
    pub t: u64,
    /// Neuron-major `m × n` pre-activations at step `t`.
    pub preacts: &'a [f64],
    pub g: &'a GVector,
    pub metrics: &'a StepMetrics,
    /// Projections of every neuron onto `μ₁` and `μ₂`.
    pub proj: &'a [Vec<f64>; 2],
    pub stats: &'a instrument::AlignStats,
    pub engine: &'a dyn Engine,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum HookAction {
    Continue,
    Stop,
}

pub trait TrainHook {
    fn on_step(&mut self, view: &StepView<'_>) -> Result<HookAction>;
}

/// Writes `snap_t<t>.bin` at the configured steps.
pub struct SnapshotHook {
    pub dir: PathBuf,
    pub steps: Vec<u64>,
    pub written: Vec<PathBuf>,
}

impl SnapshotHook {
    pub fn new(dir: impl Into<PathBuf>, steps: Vec<u64>) -> Self {
        SnapshotHook {
            dir: dir.into(),
            steps,
            written: Vec::new(),
        }
    }
}

impl TrainHook for SnapshotHook {
    fn on_step(&mut self, view: &StepView<'_>) -> Result<HookAction> {
        if self.steps.contains(&view.t) {
            let path = self.dir.join(format!("snap_t{}.bin", view.t));
            crate::io::write_network(&path, &view.engine.network())?;
            self.written.push(path);
        }
        Ok(HookAction::Continue)
    }
}

/// Stops once train accuracy reaches 1 and test error reaches `test_target`.
pub struct StopWhenGrokked {
    pub test_target: f64,
    pub fit_at: Option<u64>,
    pub grok_at: Option<u64>,
}

impl StopWhenGrokked {
    pub fn new(test_target: f64) -> Self {
        StopWhenGrokked {
            test_target,
            fit_at: None,
            grok_at: None,
        }
    }
}

impl TrainHook for StopWhenGrokked {
    fn on_step(&mut self, view: &StepView<'_>) -> Result<HookAction> {
        if self.fit_at.is_none() && view.metrics.train_acc == 1.0 {
            self.fit_at = Some(view.t);
        }
        if self.grok_at.is_none() && view.metrics.test_err <= self.test_target {
            self.grok_at = Some(view.t);
        }
        Ok(if self.fit_at.is_some() && self.grok_at.is_some() {
            HookAction::Stop
        } else {
            HookAction::Continue
        })
    }
}

/// Common interface of the two engines.
pub trait Engine {
    fn t(&self) -> u64;
    fn m(&self) -> usize;
    fn n(&self) -> usize;
    fn sign(&self) -> &[i8];
    fn scale(&self) -> f64;
    /// Neuron-major `m × n` pre-activations at the current step.
    fn preacts(&self) -> &[f64];
    /// One GD step using the current activations and the given `g`.
    fn apply(&mut self, g: &GVector) -> Result<()>;
    fn w_fro(&self) -> f64;
    fn projections(&self) -> [Vec<f64>; 2];
    /// Materialized weights at the current step.
    fn network(&self) -> Network;
    /// Clean test error and tie count, when a test set is attached.
    fn test_error(&mut self) -> Option<(f64, u64)>;
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum EngineKind {
    Dense,
    Span,
}

#[derive(Clone, Debug)]
pub struct TrainOptions {
    pub engine: EngineKind,
    pub mode: Parallelism,
    pub seed_index: u64,
    pub with_test: bool,
    /// κ for the alignment columns; `20ε` when `None`.
    pub kappa: Option<f64>,
}

impl Default for TrainOptions {
    fn default() -> Self {
        TrainOptions {
            engine: EngineKind::Span,
            mode: Parallelism::default(),
            seed_index: 0,
            with_test: true,
            kappa: None,
        }
    }
}

/// Runs `cfg.steps` GD steps from `net0`, recording metrics at every step.
pub fn run_training(cfg: &RunConfig, ds: &Dataset, net0: &Network, hooks: &mut [&mut dyn TrainHook]) -> Result<TrainTrace> {
    run_training_with(cfg, ds, net0, hooks, &TrainOptions::default())
}

pub fn run_training_with(
    cfg: &RunConfig,
    ds: &Dataset,
    net0: &Network,
    hooks: &mut [&mut dyn TrainHook],
    opts: &TrainOptions,
) -> Result<TrainTrace> {
    let test_rng = || crate::rng::substream(cfg.seed, opts.seed_index, crate::rng::Purpose::Test);
    match opts.engine {
        EngineKind::Span => {
            let model = SpanModel::new(ds, net0, opts.mode);
            let test = opts
                .with_test
                .then(|| TestSpan::new(&model, ds, net0, cfg.n_test, &mut test_rng()));
            let mut engine = SpanEngine::new(&model, ds, net0, cfg.alpha, test.as_ref(), opts.mode);
            drive(cfg, ds, &mut engine, hooks, opts)
        }
        EngineKind::Dense => {
            let test = opts.with_test.then(|| DenseTest::sample(ds, cfg.n_test, &mut test_rng()));
            let mut engine = DenseEngine::new(ds, net0.clone(), cfg.alpha, test.as_ref(), opts.mode);
            drive(cfg, ds, &mut engine, hooks, opts)
        }
    }
}

fn mean_of(idx: &[usize], f: impl Fn(usize) -> f64) -> f64 {
    if idx.is_empty() {
        return f64::NAN;
    }
    idx.iter().map(|&j| f(j)).sum::<f64>() / idx.len() as f64
}

/// Step loop shared by both engines.
pub fn drive(
    cfg: &RunConfig,
    ds: &Dataset,
    engine: &mut dyn Engine,
    hooks: &mut [&mut dyn TrainHook],
    opts: &TrainOptions,
) -> Result<TrainTrace> {
    let kappa = opts.kappa.unwrap_or(20.0 * cfg.epsilon);
    let counts: ClusterCounts = cluster_counts(ds);
    let (m, n) = (engine.m(), engine.n());
    let horizon = (n as f64).sqrt().min(config::t_max(cfg));
    let mut trace = TrainTrace::default();
    let mut sets: Option<AlignedSets> = None;
    let (mut j1, mut j2) = (Vec::new(), Vec::new());
    loop {
        let t = engine.t();
        let z = engine.preacts();
        let f = outputs_from_preacts(z, m, n, engine.sign(), engine.scale());
        let g = g_from_outputs(&f, ds);
        let mut hits = 0usize;
        for (i, &v) in f.iter().enumerate() {
            let (label, tie) = label_of(v);
            trace.ties += u64::from(tie);
            hits += usize::from(label == ds.y[i]);
        }
        let stats = instrument::activation_stats_from_preacts(z, m, ds, &counts);
        if sets.is_none() {
            let s = instrument::aligned_sets(&stats, &counts, kappa, engine.sign(), cfg.epsilon);
            j1 = s.j1();
            j2 = s.j2();
            trace.j1_size = j1.len();
            trace.j2_size = j2.len();
            sets = Some(s);
        }
        let al = instrument::alignment_counts(&stats, engine.sign(), n, kappa);
        let proj = engine.projections();
        let test = engine.test_error();
        if let Some((_, ties)) = test {
            trace.ties += ties;
        }
        let metrics = StepMetrics {
            t,
            train_acc: if n == 0 { 0.0 } else { hits as f64 / n as f64 },
            test_err: test.map_or(f64::NAN, |v| v.0),
            risk: g.risk(),
            r: g.ratio(),
            max_abs_h: g.max_abs_h(),
            w_fro: engine.w_fro(),
            al_p_mu1: al[0],
            al_p_mu2: al[1],
            al_n_mu1: al[2],
            al_n_mu2: al[3],
            j1_mean_proj: mean_of(&j1, |j| proj[0][j]),
            j2_mean_absproj: mean_of(&j2, |j| proj[0][j].abs()),
        };
        if t as f64 > horizon && !trace.warnings.iter().any(|w| w.starts_with("horizon")) {
            let msg = format!("horizon: step {t} is past min(sqrt(n), t_max) = {horizon:.3}");
            log::warn!("{msg}");
            trace.warnings.push(msg);
        }
        let mut stop = false;
        {
            let view = StepView {
                t,
                preacts: engine.preacts(),
                g: &g,
                metrics: &metrics,
                proj: &proj,
                stats: &stats,
                engine: &*engine,
            };
            for h in hooks.iter_mut() {
                stop |= h.on_step(&view)? == HookAction::Stop;
            }
        }
        trace.steps.push(metrics);
        if t >= cfg.steps {
            break;
        }
        if stop {
            trace.stopped_early = true;
            break;
        }
        engine.apply(&g)?;
    }
    Ok(trace)
}

/// `f` on every row of a point-major matrix from neuron-major rows of
/// `Z = Z₀ + B·XXtᵀ`; helper shared by the test evaluators.
pub(crate) fn point_outputs(zt: &[f64], rows: usize, sign: &[i8], scale: f64, mode: Parallelism) -> Vec<f64> {
    let m = sign.len();
    par::map_indexed(rows, mode, |k| {
        crate::network::output_from_preacts(zt[k * m..(k + 1) * m].iter().copied(), sign, scale)
    })
}
