//! Two-layer ReLU network with a frozen second layer.

use std::sync::atomic::{AtomicU64, Ordering};

use ndarray::Array2;
use rand::Rng as _;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::datagen::{self, Dataset, SampleOptions};
use crate::error::{Error, Result};
use crate::linalg;
use crate::par::{self, Parallelism};
use crate::rng::Rng;

#[inline]
pub fn relu(u: f64) -> f64 {
    if u > 0.0 {
        u
    } else {
        0.0
    }
}

#[derive(Debug)]
pub struct Network {
    /// `m × p`, row `j` is `w_j`.
    pub w: Array2<f64>,
    /// Second-layer signs, each `+1` or `-1`.
    pub sign: Vec<i8>,
    /// Shared second-layer magnitude `1/sqrt(m)`.
    pub scale: f64,
    pub step_index: u64,
    ties: AtomicU64,
}

impl Clone for Network {
    fn clone(&self) -> Self {
        Network {
            w: self.w.clone(),
            sign: self.sign.clone(),
            scale: self.scale,
            step_index: self.step_index,
            ties: AtomicU64::new(self.ties()),
        }
    }
}

impl PartialEq for Network {
    fn eq(&self, other: &Self) -> bool {
        self.w == other.w && self.sign == other.sign && self.scale == other.scale && self.step_index == other.step_index
    }
}

impl Network {
    pub fn new(w: Array2<f64>, sign: Vec<i8>) -> Result<Self> {
        let m = w.nrows();
        if sign.len() != m {
            return Err(Error::Dimension { expected: m, got: sign.len() });
        }
        if sign.iter().any(|&s| s != 1 && s != -1) {
            return Err(Error::invalid("sign", "entries must be +1 or -1"));
        }
        Ok(Network {
            w: w.as_standard_layout().into_owned(),
            sign,
            scale: 1.0 / (m as f64).sqrt(),
            step_index: 0,
            ties: AtomicU64::new(0),
        })
    }

    pub fn m(&self) -> usize {
        self.w.nrows()
    }

    pub fn p(&self) -> usize {
        self.w.ncols()
    }

    pub fn a(&self, j: usize) -> f64 {
        f64::from(self.sign[j]) * self.scale
    }

    pub fn row(&self, j: usize) -> &[f64] {
        let p = self.p();
        &self.w_flat()[j * p..(j + 1) * p]
    }

    pub fn w_flat(&self) -> &[f64] {
        self.w.as_slice().expect("weights are contiguous")
    }

    pub fn w_flat_mut(&mut self) -> &mut [f64] {
        self.w.as_slice_mut().expect("weights are contiguous")
    }

    /// Number of `f(x) = 0` predictions resolved to `+1` so far.
    pub fn ties(&self) -> u64 {
        self.ties.load(Ordering::Relaxed)
    }

    pub fn positive_count(&self) -> usize {
        self.sign.iter().filter(|&&s| s > 0).count()
    }

    pub fn fro_norm(&self) -> f64 {
        linalg::norm_sq(self.w_flat()).sqrt()
    }

    fn note_ties(&self, k: u64) {
        if k > 0 {
            self.ties.fetch_add(k, Ordering::Relaxed);
        }
    }
}

/// All of `a`, then `W` row-major as `omega * N(0, 1)`.
pub fn init_network(cfg: &RunConfig, rng: &mut Rng) -> Network {
    let sign: Vec<i8> = (0..cfg.m).map(|_| if rng.random::<bool>() { 1 } else { -1 }).collect();
    let mut w = Array2::<f64>::zeros((cfg.m, cfg.p));
    for v in w.iter_mut() {
        let z: f64 = rng.sample(StandardNormal);
        *v = cfg.omega_init * z;
    }
    Network::new(w, sign).expect("shapes match")
}

/// `Σ_j a_j relu(z_j)` summed over ascending `j`.
#[inline]
pub fn output_from_preacts(z: impl Iterator<Item = f64>, sign: &[i8], scale: f64) -> f64 {
    let mut f = 0.0;
    for (zj, &s) in z.zip(sign) {
        f += (f64::from(s) * scale) * relu(zj);
    }
    f
}

pub fn forward(net: &Network, x: &[f64]) -> Result<f64> {
    if x.len() != net.p() {
        return Err(Error::Dimension {
            expected: net.p(),
            got: x.len(),
        });
    }
    let z = (0..net.m()).map(|j| linalg::dot(net.row(j), x));
    Ok(output_from_preacts(z, &net.sign, net.scale))
}

/// Outputs on every row of `x` (`rows × p`); each equals [`forward`] bitwise.
pub fn forward_batch(net: &Network, x: &[f64], rows: usize, mode: Parallelism) -> Vec<f64> {
    let m = net.m();
    let zt = linalg::a_bt(x, net.w_flat(), rows, m, net.p(), mode);
    par::map_indexed(rows, mode, |i| {
        output_from_preacts(zt[i * m..(i + 1) * m].iter().copied(), &net.sign, net.scale)
    })
}

/// `sign(f)`, with `sign(0) = +1`. Returns the label and whether it was a tie.
#[inline]
pub fn label_of(f: f64) -> (i8, bool) {
    if f > 0.0 {
        (1, false)
    } else if f < 0.0 {
        (-1, false)
    } else {
        (1, true)
    }
}

pub fn predict(net: &Network, x: &[f64]) -> Result<i8> {
    let (label, tie) = label_of(forward(net, x)?);
    net.note_ties(u64::from(tie));
    Ok(label)
}

/// Labels for a batch, recording ties on `net`.
pub fn predict_batch(net: &Network, x: &[f64], rows: usize, mode: Parallelism) -> Vec<i8> {
    let f = forward_batch(net, x, rows, mode);
    let mut ties = 0;
    let out = f
        .iter()
        .map(|&v| {
            let (l, t) = label_of(v);
            ties += u64::from(t);
            l
        })
        .collect();
    net.note_ties(ties);
    out
}

pub fn train_accuracy(net: &Network, ds: &Dataset) -> f64 {
    train_accuracy_with(net, ds, Parallelism::default())
}

pub fn train_accuracy_with(net: &Network, ds: &Dataset, mode: Parallelism) -> f64 {
    if ds.n() == 0 {
        return 0.0;
    }
    let pred = predict_batch(net, ds.x_flat(), ds.n(), mode);
    let hits = pred.iter().zip(&ds.y).filter(|(a, b)| a == b).count();
    hits as f64 / ds.n() as f64
}

/// Points per chunk when streaming fresh samples.
pub const TEST_CHUNK: usize = 250;

/// Misclassification rate on `n_test` fresh clean points drawn from `rng`.
pub fn estimate_test_error(net: &Network, ds: &Dataset, n_test: usize, rng: &mut Rng) -> f64 {
    let mut wrong = 0usize;
    let mut done = 0usize;
    while done < n_test {
        let k = TEST_CHUNK.min(n_test - done);
        let pts = datagen::draw_points(&ds.mu1, &ds.mu2, 0.0, k, rng, &SampleOptions::default());
        let flat = pts.x.as_slice().expect("contiguous");
        let pred = predict_batch(net, flat, k, Parallelism::default());
        wrong += pred.iter().zip(&pts.y).filter(|(a, b)| a != b).count();
        done += k;
    }
    wrong as f64 / n_test.max(1) as f64
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridCell {
    pub a: f64,
    pub b: f64,
    pub f: f64,
    pub sign: i8,
}

/// Grid coordinates `-h, …, h` with `resolution` points.
pub fn grid_axis(half_width: f64, resolution: usize) -> Vec<f64> {
    let r = resolution.max(2);
    (0..r)
        .map(|i| -half_width + 2.0 * half_width * i as f64 / (r - 1) as f64)
        .collect()
}

/// Network output on `a·μ₁ + b·μ₂`, from the per-neuron projections
/// `⟨w_j, μ₁⟩` and `⟨w_j, μ₂⟩`. Rows are indexed by `a`, columns by `b`.
pub fn grid_from_projections(
    p1: &[f64],
    p2: &[f64],
    sign: &[i8],
    scale: f64,
    half_width: f64,
    resolution: usize,
) -> Vec<GridCell> {
    let axis = grid_axis(half_width, resolution);
    let mut out = Vec::with_capacity(axis.len() * axis.len());
    for &a in &axis {
        for &b in &axis {
            let z = p1.iter().zip(p2).map(|(u, v)| a * u + b * v);
            let f = output_from_preacts(z, sign, scale);
            out.push(GridCell { a, b, f, sign: label_of(f).0 });
        }
    }
    out
}

/// Projections of every neuron onto `direction`, optionally filtered by sign.
pub fn neuron_projections(net: &Network, direction: &[f64], sign_filter: Option<i8>) -> Vec<f64> {
    (0..net.m())
        .filter(|&j| sign_filter.is_none_or(|s| net.sign[j] == s))
        .map(|j| linalg::dot(net.row(j), direction))
        .collect()
}

pub fn decision_grid(net: &Network, ds: &Dataset, half_width: f64, resolution: usize) -> Vec<GridCell> {
    let p1 = neuron_projections(net, &ds.mu1, None);
    let p2 = neuron_projections(net, &ds.mu2, None);
    grid_from_projections(&p1, &p2, &net.sign, net.scale, half_width, resolution)
}

pub fn grid_csv(cells: &[GridCell]) -> String {
    let mut s = String::from("a,b,f,sign\n");
    for c in cells {
        s.push_str(&format!("{},{},{:e},{}\n", c.a, c.b, c.f, c.sign));
    }
    s
}
