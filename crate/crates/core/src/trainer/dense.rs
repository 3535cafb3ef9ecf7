use ndarray::Array2;

use super::{point_outputs, Engine, GVector};
use crate::datagen::{self, Dataset, SampleOptions};
use crate::error::{Error, Result};
use crate::instrument;
use crate::linalg;
use crate::network::{label_of, Network};
use crate::par::Parallelism;
use crate::rng::Rng;

/// Applies one update with the given `g`, activations taken from `z`
/// (neuron-major `m × n`, computed at the current weights).
fn apply_update(net: &mut Network, ds: &Dataset, z: &[f64], g: &[f64], alpha: f64, mode: Parallelism) -> Result<()> {
    let (m, n, p) = (net.m(), ds.n(), ds.p());
    let mut c = vec![0.0; m * n];
    for j in 0..m {
        for i in 0..n {
            if z[j * n + i] > 0.0 {
                c[j * n + i] = g[i] * ds.yf(i);
            }
        }
    }
    let nf = n as f64;
    let s: Vec<f64> = (0..m).map(|j| alpha * net.a(j) / nf).collect();
    let step = net.step_index;
    linalg::add_combination(net.w_flat_mut(), &c, ds.x_flat(), m, n, p, &s, mode);
    for j in 0..m {
        if net.row(j).iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite { step, neuron: j });
        }
    }
    net.step_index += 1;
    Ok(())
}

/// One GD step in place; returns the `g` used.
pub fn gd_step_in_place(net: &mut Network, ds: &Dataset, alpha: f64, mode: Parallelism) -> Result<GVector> {
    let z = instrument::preactivations(net, ds, mode);
    let f = super::outputs_from_preacts(&z, net.m(), ds.n(), &net.sign, net.scale);
    let g = super::g_from_outputs(&f, ds);
    apply_update(net, ds, &z, &g.g, alpha, mode)?;
    Ok(g)
}

pub fn gd_step(net: &Network, ds: &Dataset, alpha: f64) -> Result<Network> {
    let mut next = net.clone();
    gd_step_in_place(&mut next, ds, alpha, Parallelism::default())?;
    Ok(next)
}

/// Gradient of the empirical logistic risk with respect to `W`, row-major `m × p`.
pub fn loss_gradient(net: &Network, ds: &Dataset) -> Result<Vec<f64>> {
    let z = instrument::preactivations(net, ds, Parallelism::default());
    let f = super::outputs_from_preacts(&z, net.m(), ds.n(), &net.sign, net.scale);
    let g = super::g_from_outputs(&f, ds);
    let mut grad = Network::new(Array2::zeros((net.m(), net.p())), net.sign.clone())?;
    grad.scale = net.scale;
    apply_update(&mut grad, ds, &z, &g.g, -1.0, Parallelism::default())?;
    Ok(grad.w.into_raw_vec_and_offset().0)
}

/// First step with every `g_i` replaced by `1/2`.
pub fn linearized_first_step(net0: &Network, ds: &Dataset, alpha: f64) -> Result<Network> {
    if net0.step_index != 0 {
        return Err(Error::invalid("step_index", "must be 0 for the linearized first step"));
    }
    let mut next = net0.clone();
    let z = instrument::preactivations(net0, ds, Parallelism::default());
    apply_update(&mut next, ds, &z, &vec![0.5; ds.n()], alpha, Parallelism::default())?;
    Ok(next)
}

/// Fresh clean points kept in memory for the dense engine.
#[derive(Clone, Debug)]
pub struct DenseTest {
    pub x: Array2<f64>,
    pub y: Vec<i8>,
}

impl DenseTest {
    pub fn sample(ds: &Dataset, count: usize, rng: &mut Rng) -> Self {
        let mut x = Array2::zeros((0, ds.p()));
        let mut y = Vec::with_capacity(count);
        let mut done = 0;
        while done < count {
            let k = crate::network::TEST_CHUNK.min(count - done);
            let pts = datagen::draw_points(&ds.mu1, &ds.mu2, 0.0, k, rng, &SampleOptions::default());
            x.append(ndarray::Axis(0), pts.x.view()).expect("matching widths");
            y.extend(pts.y);
            done += k;
        }
        DenseTest { x, y }
    }
}

/// Reference engine holding `W` explicitly.
pub struct DenseEngine<'a> {
    ds: &'a Dataset,
    net: Network,
    z: Vec<f64>,
    alpha: f64,
    test: Option<&'a DenseTest>,
    mode: Parallelism,
}

impl<'a> DenseEngine<'a> {
    pub fn new(ds: &'a Dataset, net: Network, alpha: f64, test: Option<&'a DenseTest>, mode: Parallelism) -> Self {
        let z = instrument::preactivations(&net, ds, mode);
        DenseEngine {
            ds,
            net,
            z,
            alpha,
            test,
            mode,
        }
    }

    pub fn net(&self) -> &Network {
        &self.net
    }
}

impl Engine for DenseEngine<'_> {
    fn t(&self) -> u64 {
        self.net.step_index
    }

    fn m(&self) -> usize {
        self.net.m()
    }

    fn n(&self) -> usize {
        self.ds.n()
    }

    fn sign(&self) -> &[i8] {
        &self.net.sign
    }

    fn scale(&self) -> f64 {
        self.net.scale
    }

    fn preacts(&self) -> &[f64] {
        &self.z
    }

    fn apply(&mut self, g: &GVector) -> Result<()> {
        apply_update(&mut self.net, self.ds, &self.z, &g.g, self.alpha, self.mode)?;
        self.z = instrument::preactivations(&self.net, self.ds, self.mode);
        Ok(())
    }

    fn w_fro(&self) -> f64 {
        self.net.fro_norm()
    }

    fn projections(&self) -> [Vec<f64>; 2] {
        [
            crate::network::neuron_projections(&self.net, &self.ds.mu1, None),
            crate::network::neuron_projections(&self.net, &self.ds.mu2, None),
        ]
    }

    fn network(&self) -> Network {
        self.net.clone()
    }

    fn test_error(&mut self) -> Option<(f64, u64)> {
        let test = self.test?;
        let rows = test.y.len();
        let flat = test.x.as_slice().expect("contiguous");
        let m = self.net.m();
        let zt = linalg::a_bt(flat, self.net.w_flat(), rows, m, self.net.p(), self.mode);
        let f = point_outputs(&zt, rows, &self.net.sign, self.net.scale, self.mode);
        let mut wrong = 0;
        let mut ties = 0;
        for (v, &y) in f.iter().zip(&test.y) {
            let (l, t) = label_of(*v);
            ties += u64::from(t);
            wrong += usize::from(l != y);
        }
        Some((wrong as f64 / rows.max(1) as f64, ties))
    }
}
