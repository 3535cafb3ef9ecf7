use serde::{Deserialize, Serialize};

use super::{HookAction, StepView, TrainHook};
use crate::datagen::{cluster_counts, ClusterId, Dataset};
use crate::error::Result;
use crate::instrument::{self, AlignStats};
use crate::network::{self, Network};
use crate::par::Parallelism;

/// Violation counts for the activation-persistence (E1), opposite-sign
/// ceiling (E2) and opposite-sign flip (E3) properties.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryCounts {
    pub e1_violations: u64,
    pub e2_violations: u64,
    pub e3_violations: u64,
    /// E3 violations per transition `t → t+1`, indexed by `t`.
    pub e3_by_step: Vec<u64>,
    /// Largest `⟨w_j, x_k⟩ / (α‖μ‖²/sqrt(m))` over opposite-sign pairs.
    pub e2_max_ratio: f64,
    pub transitions: u64,
}

/// Hook counting E1–E3 violations for every `(j, k)` up to `last_t`.
pub struct PropertyMonitor {
    ceiling: f64,
    last_t: u64,
    y: Vec<i8>,
    prev: Option<Vec<f64>>,
    pub counts: TrajectoryCounts,
}

impl PropertyMonitor {
    pub fn new(ds: &Dataset, alpha: f64, m: usize, last_t: u64) -> Self {
        let mu_sq = ds.mu_norm().powi(2);
        PropertyMonitor {
            ceiling: alpha * mu_sq / (m as f64).sqrt(),
            last_t,
            y: ds.y.clone(),
            prev: None,
            counts: TrajectoryCounts::default(),
        }
    }
}

impl TrainHook for PropertyMonitor {
    fn on_step(&mut self, view: &StepView<'_>) -> Result<HookAction> {
        if view.t > self.last_t {
            return Ok(HookAction::Continue);
        }
        let z = view.preacts;
        let n = self.y.len();
        let sign = view.engine.sign();
        let mut e1 = 0;
        let mut e3 = 0;
        for (j, &s) in sign.iter().enumerate() {
            for k in 0..n {
                let v = z[j * n + k];
                let same = s == self.y[k];
                if !same {
                    if v > self.ceiling {
                        self.counts.e2_violations += 1;
                    }
                    self.counts.e2_max_ratio = self.counts.e2_max_ratio.max(v / self.ceiling);
                }
                if let Some(prev) = &self.prev {
                    if prev[j * n + k] > 0.0 {
                        if same && v <= 0.0 {
                            e1 += 1;
                        }
                        if !same && v >= 0.0 {
                            e3 += 1;
                        }
                    }
                }
            }
        }
        if self.prev.is_some() {
            self.counts.e1_violations += e1;
            self.counts.e3_violations += e3;
            self.counts.e3_by_step.push(e3);
            self.counts.transitions += 1;
        }
        self.prev = Some(z.to_vec());
        Ok(HookAction::Continue)
    }
}

/// Residual of the one-step decomposition against its bound.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ResidualStats {
    pub max_ratio: f64,
    pub mean_ratio: f64,
    pub max_residual: f64,
    pub mu_max_ratio: f64,
    pub mu_mean_ratio: f64,
}

/// Residuals of one step from pre-activations and projections before and after it.
#[allow(clippy::too_many_arguments)]
pub fn residuals_from_preacts(
    z_before: &[f64],
    z_after: &[f64],
    proj_before: &[Vec<f64>; 2],
    proj_after: &[Vec<f64>; 2],
    stats_before: &AlignStats,
    ds: &Dataset,
    sign: &[i8],
    scale: f64,
    alpha: f64,
    c_const: f64,
) -> ResidualStats {
    let n = ds.n();
    let m = sign.len();
    let nf = n as f64;
    let mf = m as f64;
    let p = ds.p() as f64;
    let mu_sq = ds.mu_norm().powi(2);
    let c_n = 10.0 * nf.ln().max(0.0).sqrt();
    let bound_pref = 4.0 * alpha / (nf.powf(2.5) * mf.sqrt());
    let bound_tail = c_n * nf.powf(1.99) * mu_sq / (3.0 * c_const);
    let mu_bound = 5.0 * alpha * mu_sq / (nf.powf(1.5) * mf.sqrt());
    let mut out = ResidualStats::default();
    let mut sum = 0.0;
    let mut mu_sum = 0.0;
    for j in 0..m {
        let a = f64::from(sign[j]) * scale;
        let pre = alpha * a / (2.0 * nf);
        for k in 0..n {
            let idx = j * n + k;
            let act = if z_before[idx] > 0.0 { 1.0 } else { 0.0 };
            let c = ds.cluster[k];
            let d = stats_before.big_d(c, j) as f64;
            let approx = pre * (ds.yf(k) * act * p + f64::from(c.clean_label()) * d * mu_sq);
            let res = ((z_after[idx] - z_before[idx]) - approx).abs();
            let ratio = res / (bound_pref * (act * p + bound_tail));
            out.max_residual = out.max_residual.max(res);
            out.max_ratio = out.max_ratio.max(ratio);
            sum += ratio;
        }
        for v in ClusterId::ALL {
            let axis = usize::from(v.axis() - 1);
            let moved = v.sign() * (proj_after[axis][j] - proj_before[axis][j]);
            let approx = pre * f64::from(v.clean_label()) * stats_before.big_d(v, j) as f64 * mu_sq;
            let ratio = (moved - approx).abs() / mu_bound;
            out.mu_max_ratio = out.mu_max_ratio.max(ratio);
            mu_sum += ratio;
        }
    }
    out.mean_ratio = sum / (m * n).max(1) as f64;
    out.mu_mean_ratio = mu_sum / (4 * m).max(1) as f64;
    out
}

/// Residual statistics for `net_after = gd_step(net_before)`.
pub fn step_residuals(net_before: &Network, net_after: &Network, ds: &Dataset, alpha: f64, c_const: f64) -> ResidualStats {
    let mode = Parallelism::default();
    let zb = instrument::preactivations(net_before, ds, mode);
    let za = instrument::preactivations(net_after, ds, mode);
    let proj = |net: &Network| {
        [
            network::neuron_projections(net, &ds.mu1, None),
            network::neuron_projections(net, &ds.mu2, None),
        ]
    };
    let stats = instrument::activation_stats_from_preacts(&zb, net_before.m(), ds, &cluster_counts(ds));
    residuals_from_preacts(
        &zb,
        &za,
        &proj(net_before),
        &proj(net_after),
        &stats,
        ds,
        &net_before.sign,
        net_before.scale,
        alpha,
        c_const,
    )
}

/// Hook collecting [`ResidualStats`] for each transition up to `last_t`.
pub struct ResidualMonitor<'a> {
    ds: &'a Dataset,
    alpha: f64,
    c_const: f64,
    last_t: u64,
    prev: Option<(Vec<f64>, [Vec<f64>; 2], AlignStats)>,
    pub per_step: Vec<ResidualStats>,
}

impl<'a> ResidualMonitor<'a> {
    pub fn new(ds: &'a Dataset, alpha: f64, c_const: f64, last_t: u64) -> Self {
        ResidualMonitor {
            ds,
            alpha,
            c_const,
            last_t,
            prev: None,
            per_step: Vec::new(),
        }
    }
}

impl TrainHook for ResidualMonitor<'_> {
    fn on_step(&mut self, view: &StepView<'_>) -> Result<HookAction> {
        if view.t > self.last_t + 1 {
            return Ok(HookAction::Continue);
        }
        if let Some((z, proj, stats)) = &self.prev {
            self.per_step.push(residuals_from_preacts(
                z,
                view.preacts,
                proj,
                view.proj,
                stats,
                self.ds,
                view.engine.sign(),
                view.engine.scale(),
                self.alpha,
                self.c_const,
            ));
        }
        self.prev = Some((view.preacts.to_vec(), view.proj.clone(), view.stats.clone()));
        Ok(HookAction::Continue)
    }
}
