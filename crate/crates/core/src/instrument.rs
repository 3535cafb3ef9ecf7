//! Activation sets, alignment statistics, projections and the linear
//! comparator.

use serde::{Deserialize, Serialize};

use crate::datagen::{ClusterCounts, ClusterId, ConditionEntry, ConditionReport, Dataset, Direction};
use crate::linalg;
use crate::network::{self, Network};
use crate::par::{self, Parallelism};
use crate::rng::{self, Purpose};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum SignClass {
    Pos = 0,
    Neg = 1,
}

impl SignClass {
    pub const ALL: [SignClass; 2] = [SignClass::Pos, SignClass::Neg];

    pub fn of(sign: i8) -> Self {
        if sign > 0 {
            SignClass::Pos
        } else {
            SignClass::Neg
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            SignClass::Pos => "pos",
            SignClass::Neg => "neg",
        }
    }
}

/// Per-neuron active clean / noisy counts for each cluster.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AlignStats {
    pub clean_active: Vec<[u32; 4]>,
    pub noisy_active: Vec<[u32; 4]>,
    /// `|n_ν − n_{−ν}| + sqrt(n)` per cluster.
    pub delta: [f64; 4],
}

impl AlignStats {
    pub fn m(&self) -> usize {
        self.clean_active.len()
    }

    pub fn c_act(&self, v: ClusterId, j: usize) -> u32 {
        self.clean_active[j][v.index()]
    }

    pub fn n_act(&self, v: ClusterId, j: usize) -> u32 {
        self.noisy_active[j][v.index()]
    }

    pub fn d(&self, v: ClusterId, j: usize) -> i64 {
        i64::from(self.c_act(v, j)) - i64::from(self.n_act(v, j))
    }

    pub fn big_d(&self, v: ClusterId, j: usize) -> i64 {
        self.d(v, j) - self.d(v.negate(), j)
    }
}

/// Statistics from a neuron-major `m × n` matrix of pre-activations.
pub fn activation_stats_from_preacts(z: &[f64], m: usize, ds: &Dataset, counts: &ClusterCounts) -> AlignStats {
    let n = ds.n();
    assert_eq!(z.len(), m * n);
    let mut clean_active = vec![[0u32; 4]; m];
    let mut noisy_active = vec![[0u32; 4]; m];
    let noisy: Vec<bool> = (0..n).map(|i| ds.is_noisy(i)).collect();
    for j in 0..m {
        let row = &z[j * n..(j + 1) * n];
        for (i, &v) in row.iter().enumerate() {
            if v > 0.0 {
                let c = ds.cluster[i].index();
                if noisy[i] {
                    noisy_active[j][c] += 1;
                } else {
                    clean_active[j][c] += 1;
                }
            }
        }
    }
    let root_n = (n as f64).sqrt();
    let mut delta = [0.0; 4];
    for v in ClusterId::ALL {
        delta[v.index()] = (counts.nn(v) as f64 - counts.nn(v.negate()) as f64).abs() + root_n;
    }
    AlignStats {
        clean_active,
        noisy_active,
        delta,
    }
}

/// Neuron-major pre-activations `⟨w_j, x_i⟩`.
pub fn preactivations(net: &Network, ds: &Dataset, mode: Parallelism) -> Vec<f64> {
    linalg::a_bt(net.w_flat(), ds.x_flat(), net.m(), ds.n(), ds.p(), mode)
}

pub fn activation_stats(net: &Network, ds: &Dataset) -> AlignStats {
    let counts = crate::datagen::cluster_counts(ds);
    let z = preactivations(net, ds, Parallelism::default());
    activation_stats_from_preacts(&z, net.m(), ds, &counts)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AlignedSets {
    pub kappa: f64,
    /// `members[ν][sign]`, ascending neuron indices.
    pub members: [[Vec<usize>; 2]; 4],
    /// `(±ν, 20ε)`-aligned members per axis and sign, used by D3.
    pub measures: ConditionReport,
}

impl AlignedSets {
    pub fn get(&self, v: ClusterId, s: SignClass) -> &[usize] {
        &self.members[v.index()][s as usize]
    }

    /// Positive neurons that are `(+μ₁, κ)`-aligned.
    pub fn j1(&self) -> Vec<usize> {
        self.get(ClusterId::PlusMu1, SignClass::Pos).to_vec()
    }

    /// Negative neurons that are `(±μ₁, κ)`-aligned.
    pub fn j2(&self) -> Vec<usize> {
        union(
            self.get(ClusterId::PlusMu1, SignClass::Neg),
            self.get(ClusterId::MinusMu1, SignClass::Neg),
        )
    }
}

fn union(a: &[usize], b: &[usize]) -> Vec<usize> {
    let mut v: Vec<usize> = a.iter().chain(b).copied().collect();
    v.sort_unstable();
    v.dedup();
    v
}

/// Whether neuron `j` is `(ν, κ)`-aligned given initial statistics.
pub fn is_aligned(stats0: &AlignStats, counts: &ClusterCounts, v: ClusterId, j: usize, kappa: f64) -> bool {
    let n = counts.total() as f64;
    let w = v.negate();
    let lead = stats0.big_d(v, j) as f64 > n.powf(0.5 - kappa);
    let ceiling = counts.c(v).min(counts.c(w)) as f64 - 2.0 * (counts.nn(v) + counts.nn(w)) as f64 - n.sqrt();
    let top = stats0.d(w, j).max(stats0.d(v, j)) as f64;
    lead && top < ceiling
}

/// Aligned sets at `kappa`, with the D2–D4 measurements at `kappa` (D3 at `20ε`).
pub fn aligned_sets(stats0: &AlignStats, counts: &ClusterCounts, kappa: f64, sign: &[i8], eps: f64) -> AlignedSets {
    let m = stats0.m();
    let mut members: [[Vec<usize>; 2]; 4] = Default::default();
    for v in ClusterId::ALL {
        for j in 0..m {
            if is_aligned(stats0, counts, v, j, kappa) {
                members[v.index()][SignClass::of(sign[j]) as usize].push(j);
            }
        }
    }
    let n = counts.total() as f64;
    let class_size = [
        sign.iter().filter(|&&s| s > 0).count(),
        sign.iter().filter(|&&s| s < 0).count(),
    ];
    let mut measures = ConditionReport::default();

    let floor = m as f64 * n.powf(-10.0 * eps);
    let mut smallest = f64::INFINITY;
    for v in ClusterId::ALL {
        for s in SignClass::ALL {
            smallest = smallest.min(members[v.index()][s as usize].len() as f64);
        }
    }
    measures.push(ConditionEntry::new("D2.count", smallest, floor, Direction::AtLeast));

    let k20 = 20.0 * eps;
    let mut d3: Option<ConditionEntry> = None;
    for v in ClusterId::ALL {
        for s in SignClass::ALL {
            let covered = (0..m)
                .filter(|&j| SignClass::of(sign[j]) == s)
                .filter(|&j| is_aligned(stats0, counts, v, j, k20) || is_aligned(stats0, counts, v.negate(), j, k20))
                .count() as f64;
            let threshold = (1.0 - 10.0 * n.powf(-20.0 * eps)) * class_size[s as usize] as f64;
            let e = ConditionEntry::new("D3.coverage", covered, threshold, Direction::AtLeast);
            if d3.as_ref().is_none_or(|w| e.margin() < w.margin()) {
                d3 = Some(e);
            }
        }
    }
    measures.push(d3.expect("four centers"));

    // D4 as the smallest per-member average, so the threshold is n/10.
    let mut slack = f64::INFINITY;
    for v in ClusterId::ALL {
        for s in SignClass::ALL {
            let set = &members[v.index()][s as usize];
            if set.is_empty() {
                continue;
            }
            let sum: f64 = set
                .iter()
                .map(|&j| counts.c(v) as f64 - counts.nn(v) as f64 - stats0.d(v.negate(), j) as f64)
                .sum();
            slack = slack.min(sum / set.len() as f64);
        }
    }
    let d4 = if slack.is_finite() { slack } else { n / 10.0 };
    measures.push(ConditionEntry::new("D4.sum", d4, n / 10.0, Direction::AtLeast));

    AlignedSets { kappa, members, measures }
}

/// D1: every sample activates at least `m/7` neurons of each sign class.
pub fn d1_condition(z0: &[f64], sign: &[i8], n: usize) -> ConditionEntry {
    let m = sign.len();
    let mut pos = vec![0usize; n];
    let mut neg = vec![0usize; n];
    for j in 0..m {
        let tgt = if sign[j] > 0 { &mut pos } else { &mut neg };
        for (i, &v) in z0[j * n..(j + 1) * n].iter().enumerate() {
            if v > 0.0 {
                tgt[i] += 1;
            }
        }
    }
    let least = pos.iter().chain(&neg).copied().min().unwrap_or(0) as f64;
    ConditionEntry::new("D1.active", least, m as f64 / 7.0, Direction::AtLeast)
}

/// Number of neurons per sign class with `|D_{ν,j}| > n^{1/2−κ}` for
/// `ν = μ₁, μ₂`, ordered `[pos μ₁, pos μ₂, neg μ₁, neg μ₂]`.
pub fn alignment_counts(stats: &AlignStats, sign: &[i8], n: usize, kappa: f64) -> [usize; 4] {
    let thr = (n as f64).powf(0.5 - kappa);
    let mut out = [0usize; 4];
    for (j, &s) in sign.iter().enumerate() {
        let base = if s > 0 { 0 } else { 2 };
        if stats.big_d(ClusterId::PlusMu1, j).unsigned_abs() as f64 > thr {
            out[base] += 1;
        }
        if stats.big_d(ClusterId::PlusMu2, j).unsigned_abs() as f64 > thr {
            out[base + 1] += 1;
        }
    }
    out
}

pub fn neuron_projections(net: &Network, direction: &[f64], sign_filter: Option<i8>) -> Vec<f64> {
    network::neuron_projections(net, direction, sign_filter)
}

/// `x ↦ sgn⟨Σ_i y_i x_i, x⟩`.
#[derive(Clone, Debug, PartialEq)]
pub struct LinearComparator {
    pub v: Vec<f64>,
}

impl LinearComparator {
    pub fn score(&self, x: &[f64]) -> f64 {
        linalg::dot(&self.v, x)
    }

    pub fn predict(&self, x: &[f64]) -> i8 {
        network::label_of(self.score(x)).0
    }
}

pub fn linear_comparator(ds: &Dataset) -> LinearComparator {
    let p = ds.p();
    let mut v = vec![0.0; p];
    for i in 0..ds.n() {
        let y = ds.yf(i);
        for (a, b) in v.iter_mut().zip(ds.row(i)) {
            *a += y * b;
        }
    }
    LinearComparator { v }
}

/// Fraction of rows of `x` on which the network and the comparator agree.
pub fn agreement(net: &Network, comp: &LinearComparator, x: &[f64], rows: usize) -> f64 {
    if rows == 0 {
        return 1.0;
    }
    let p = comp.v.len();
    let preds = network::predict_batch(net, x, rows, Parallelism::default());
    let hits = (0..rows)
        .filter(|&i| preds[i] == comp.predict(&x[i * p..(i + 1) * p]))
        .count();
    hits as f64 / rows as f64
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum BSpec {
    Const(f64),
    Normal { mean: f64, sd: f64 },
}

impl BSpec {
    pub fn mean(&self) -> f64 {
        match *self {
            BSpec::Const(b) => b,
            BSpec::Normal { mean, .. } => mean,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LlnStats {
    pub m: usize,
    pub trials: usize,
    pub mean_abs_dev: f64,
    /// Standard deviation of the signed deviation `Σ a_j φ(a_j b_j) − b/2`.
    pub std_dev: f64,
    pub q10: f64,
    pub q50: f64,
    pub q90: f64,
}

/// Monte-Carlo check that `Σ_j a_j φ(a_j b_j) → b/2` with `a_j = ±1/sqrt(m)`.
pub fn relu_lln_check(m_values: &[usize], trials: usize, b_spec: BSpec, master: u64) -> Vec<LlnStats> {
    use rand::Rng as _;
    use rand_distr::StandardNormal;
    m_values
        .iter()
        .enumerate()
        .map(|(idx, &m)| {
            let scale = 1.0 / (m as f64).sqrt();
            let devs = par::map_indexed(trials, Parallelism::default(), |t| {
                let mut r = rng::trial_stream(master, idx as u64, Purpose::Lln, t as u64);
                let mut s = 0.0;
                for _ in 0..m {
                    let a = if r.random::<bool>() { scale } else { -scale };
                    let b = match b_spec {
                        BSpec::Const(b) => b,
                        BSpec::Normal { mean, sd } => mean + sd * r.sample::<f64, _>(StandardNormal),
                    };
                    s += a * network::relu(a * b);
                }
                s - b_spec.mean() / 2.0
            });
            let nt = devs.len().max(1) as f64;
            let mean = devs.iter().sum::<f64>() / nt;
            let var = devs.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / (nt - 1.0).max(1.0);
            let mut abs: Vec<f64> = devs.iter().map(|d| d.abs()).collect();
            abs.sort_by(f64::total_cmp);
            LlnStats {
                m,
                trials,
                mean_abs_dev: abs.iter().sum::<f64>() / nt,
                std_dev: var.sqrt(),
                q10: quantile(&abs, 0.1),
                q50: quantile(&abs, 0.5),
                q90: quantile(&abs, 0.9),
            }
        })
        .collect()
}

/// Least-squares slope of `ln(mean |dev|)` against `ln m`.
pub fn loglog_slope(stats: &[LlnStats]) -> f64 {
    let pts: Vec<(f64, f64)> = stats
        .iter()
        .map(|s| ((s.m as f64).ln(), s.mean_abs_dev.ln()))
        .collect();
    let k = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / k;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / k;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    sxy / sxx
}

/// Linear-interpolated quantile of sorted data.
pub fn quantile(sorted: &[f64], q: f64) -> f64 {
    if sorted.is_empty() {
        return f64::NAN;
    }
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

/// Rows `run,t,j,sign,proj_mu1,proj_mu2` (no header).
pub fn projection_rows(run: usize, t: u64, p1: &[f64], p2: &[f64], sign: &[i8]) -> String {
    let mut s = String::new();
    for j in 0..sign.len() {
        s.push_str(&format!("{run},{t},{j},{},{:e},{:e}\n", sign[j], p1[j], p2[j]));
    }
    s
}

pub const PROJECTION_HEADER: &str = "run,t,j,sign,proj_mu1,proj_mu2\n";

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct AlignedSetExport {
    pub kappa: f64,
    pub sets: Vec<AlignedSetEntry>,
    pub measures: ConditionReport,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct AlignedSetEntry {
    pub center: String,
    pub sign: String,
    pub members: Vec<usize>,
}

impl From<&AlignedSets> for AlignedSetExport {
    fn from(a: &AlignedSets) -> Self {
        let mut sets = Vec::new();
        for v in ClusterId::ALL {
            for s in SignClass::ALL {
                sets.push(AlignedSetEntry {
                    center: v.name().to_string(),
                    sign: s.name().to_string(),
                    members: a.get(v, s).to_vec(),
                });
            }
        }
        AlignedSetExport {
            kappa: a.kappa,
            sets,
            measures: a.measures.clone(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{array, Array2};
    use ClusterId::*;

    fn four_point() -> Dataset {
        let x = array![[1.0, 0.0], [2.0, 0.0], [-1.0, 0.0], [-2.0, 0.0]];
        let cl = vec![PlusMu1, PlusMu1, MinusMu1, MinusMu1];
        let mut y: Vec<i8> = vec![1, 1, 1, 1];
        y[3] = -1;
        Dataset::from_parts(x, y, cl, vec![1.0, 0.0], vec![0.0, 1.0], 0.1).unwrap()
    }

    #[test]
    fn hand_instance() {
        let ds = four_point();
        let counts = crate::datagen::cluster_counts(&ds);
        // the active -mu1 point is clean, so d_{-mu1} = 1 and D_{+mu1} = 0
        let s = activation_stats_from_preacts(&[1.0, -1.0, 1.0, -1.0], 1, &ds, &counts);
        assert_eq!(s.c_act(PlusMu1, 0), 1);
        assert_eq!(s.d(PlusMu1, 0), 1);
        assert_eq!(s.d(MinusMu1, 0), 1);
        assert_eq!(s.big_d(PlusMu1, 0), 0);

        let s = activation_stats_from_preacts(&[1.0, -1.0, -1.0, -1.0], 1, &ds, &counts);
        assert_eq!(s.d(MinusMu1, 0), 0);
        assert_eq!(s.big_d(PlusMu1, 0), 1);
        assert_eq!(s.big_d(MinusMu1, 0), -1);

        let s = activation_stats_from_preacts(&[1.0, -1.0, -1.0, 1.0], 1, &ds, &counts);
        assert_eq!(s.d(MinusMu1, 0), -1);
        assert_eq!(s.big_d(PlusMu1, 0), 2);
    }

    #[test]
    fn zero_weights_have_empty_sets() {
        let ds = four_point();
        let net = Network::new(Array2::zeros((3, 2)), vec![1, -1, 1]).unwrap();
        let s = activation_stats(&net, &ds);
        assert!(s.clean_active.iter().chain(&s.noisy_active).all(|c| c == &[0; 4]));
        let sets = aligned_sets(&s, &crate::datagen::cluster_counts(&ds), 0.004, &net.sign, 2e-4);
        assert!(sets.members.iter().flatten().all(|v| v.is_empty()));
    }

    #[test]
    fn comparator_and_agreement() {
        let ds = four_point();
        let c = linear_comparator(&ds);
        // y = (1,1,1,-1): v = x0 + x1 + x2 - x3 = (4, 0)
        assert_eq!(c.v, vec![4.0, 0.0]);
        assert_eq!(c.predict(&[-1.0, 0.0]), -1);
        let net = Network::new(array![[1.0, 0.0], [-1.0, 0.0]], vec![1, -1]).unwrap();
        let x = [3.0, 1.0, -2.0, 5.0];
        assert_eq!(agreement(&net, &c, &x, 2), 1.0);
    }

    #[test]
    fn lln_constant_cases() {
        let zero = relu_lln_check(&[10, 100], 5, BSpec::Const(0.0), 1);
        assert!(zero.iter().all(|s| s.mean_abs_dev == 0.0));
        let one = relu_lln_check(&[4], 200, BSpec::Const(1.0), 1);
        // deviation is (#pos)/4 - 1/2, a multiple of 1/4
        assert!((one[0].q50 * 4.0).fract().abs() < 1e-12);
    }

    #[test]
    fn quantiles() {
        let v = [0.0, 1.0, 2.0, 3.0, 4.0];
        assert_eq!(quantile(&v, 0.5), 2.0);
        assert_eq!(quantile(&v, 0.1), 0.4);
    }
}
