//! Noisy XOR cluster data and the data-side good-run conditions.

use ndarray::Array2;
use rand::Rng as _;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::linalg;
use crate::rng::Rng;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ClusterId {
    PlusMu1 = 0,
    MinusMu1 = 1,
    PlusMu2 = 2,
    MinusMu2 = 3,
}

impl ClusterId {
    pub const ALL: [ClusterId; 4] = [
        ClusterId::PlusMu1,
        ClusterId::MinusMu1,
        ClusterId::PlusMu2,
        ClusterId::MinusMu2,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }

    pub fn negate(self) -> Self {
        match self {
            ClusterId::PlusMu1 => ClusterId::MinusMu1,
            ClusterId::MinusMu1 => ClusterId::PlusMu1,
            ClusterId::PlusMu2 => ClusterId::MinusMu2,
            ClusterId::MinusMu2 => ClusterId::PlusMu2,
        }
    }

    /// +1 for the ±μ₁ clusters, −1 for ±μ₂.
    pub fn clean_label(self) -> i8 {
        match self {
            ClusterId::PlusMu1 | ClusterId::MinusMu1 => 1,
            _ => -1,
        }
    }

    /// Sign of the center along its axis.
    pub fn sign(self) -> f64 {
        match self {
            ClusterId::PlusMu1 | ClusterId::PlusMu2 => 1.0,
            _ => -1.0,
        }
    }

    /// 1 for ±μ₁, 2 for ±μ₂.
    pub fn axis(self) -> u8 {
        match self {
            ClusterId::PlusMu1 | ClusterId::MinusMu1 => 1,
            _ => 2,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            ClusterId::PlusMu1 => "+mu1",
            ClusterId::MinusMu1 => "-mu1",
            ClusterId::PlusMu2 => "+mu2",
            ClusterId::MinusMu2 => "-mu2",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    /// `n × p`, row `i` is `x_i`.
    pub x: Array2<f64>,
    pub y: Vec<i8>,
    pub y_clean: Vec<i8>,
    pub cluster: Vec<ClusterId>,
    pub mu1: Vec<f64>,
    pub mu2: Vec<f64>,
    pub eta: f64,
}

impl Dataset {
    /// Assembles a dataset from parts, checking shapes and label consistency.
    pub fn from_parts(
        x: Array2<f64>,
        y: Vec<i8>,
        cluster: Vec<ClusterId>,
        mu1: Vec<f64>,
        mu2: Vec<f64>,
        eta: f64,
    ) -> Result<Self> {
        let (n, p) = x.dim();
        for len in [y.len(), cluster.len()] {
            if len != n {
                return Err(Error::Dimension { expected: n, got: len });
            }
        }
        for len in [mu1.len(), mu2.len()] {
            if len != p {
                return Err(Error::Dimension { expected: p, got: len });
            }
        }
        if y.iter().any(|&v| v != 1 && v != -1) {
            return Err(Error::invalid("y", "labels must be +1 or -1"));
        }
        let y_clean = cluster.iter().map(|c| c.clean_label()).collect();
        Ok(Dataset {
            x: x.as_standard_layout().into_owned(),
            y,
            y_clean,
            cluster,
            mu1,
            mu2,
            eta,
        })
    }

    pub fn n(&self) -> usize {
        self.x.nrows()
    }

    pub fn p(&self) -> usize {
        self.x.ncols()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let p = self.p();
        &self.x_flat()[i * p..(i + 1) * p]
    }

    pub fn x_flat(&self) -> &[f64] {
        self.x.as_slice().expect("dataset rows are contiguous")
    }

    pub fn yf(&self, i: usize) -> f64 {
        f64::from(self.y[i])
    }

    pub fn is_noisy(&self, i: usize) -> bool {
        self.y[i] != self.y_clean[i]
    }

    pub fn mu_norm(&self) -> f64 {
        linalg::norm_sq(&self.mu1).sqrt()
    }

    pub fn center(&self, c: ClusterId) -> Vec<f64> {
        let mu = if c.axis() == 1 { &self.mu1 } else { &self.mu2 };
        mu.iter().map(|v| v * c.sign()).collect()
    }

    /// `⟨x̄_i, x̄_k⟩` from the cluster assignment alone.
    pub fn center_inner(&self, a: ClusterId, b: ClusterId) -> f64 {
        let mu_sq = linalg::norm_sq(&self.mu1);
        if a.axis() != b.axis() {
            let cross = linalg::dot(&self.mu1, &self.mu2);
            return a.sign() * b.sign() * cross;
        }
        let own = if a.axis() == 1 { mu_sq } else { linalg::norm_sq(&self.mu2) };
        a.sign() * b.sign() * own
    }

    /// `X Xᵀ`, made exactly symmetric by mirroring the upper triangle.
    pub fn gram(&self) -> Array2<f64> {
        symmetric_gram(&self.x)
    }
}

pub(crate) fn symmetric_gram(x: &Array2<f64>) -> Array2<f64> {
    let mut g = x.dot(&x.t());
    let n = g.nrows();
    for i in 0..n {
        for k in 0..i {
            g[[i, k]] = g[[k, i]];
        }
    }
    g
}

/// Sampling switches used by robustness checks and test fixtures. The
/// default reproduces the standard distribution.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct SampleOptions {
    /// Replace `e₁, e₂` by a seeded random orthonormal pair.
    pub rotate: Option<u64>,
    /// Drop the Gaussian noise (draws are still consumed).
    pub noiseless: bool,
    /// Force every point into one cluster (draws are still consumed).
    pub single_cluster: Option<ClusterId>,
}

/// The two cluster means: `‖μ‖e₁, ‖μ‖e₂`, or a rotated orthonormal pair.
pub fn cluster_means(p: usize, mu_norm: f64, rotate: Option<&mut Rng>) -> (Vec<f64>, Vec<f64>) {
    let mut mu1 = vec![0.0; p];
    let mut mu2 = vec![0.0; p];
    match rotate {
        None => {
            mu1[0] = mu_norm;
            if p > 1 {
                mu2[1] = mu_norm;
            }
        }
        Some(rng) => {
            let u: Vec<f64> = (0..p).map(|_| rng.sample(StandardNormal)).collect();
            let v: Vec<f64> = (0..p).map(|_| rng.sample(StandardNormal)).collect();
            let nu = linalg::norm_sq(&u).sqrt();
            let u: Vec<f64> = u.iter().map(|a| a / nu).collect();
            let c = linalg::dot(&u, &v);
            let v: Vec<f64> = v.iter().zip(&u).map(|(a, b)| a - c * b).collect();
            // second pass removes the residual left by rounding
            let c = linalg::dot(&u, &v);
            let v: Vec<f64> = v.iter().zip(&u).map(|(a, b)| a - c * b).collect();
            let nv = linalg::norm_sq(&v).sqrt();
            for k in 0..p {
                mu1[k] = mu_norm * u[k];
                mu2[k] = mu_norm * v[k] / nv;
            }
        }
    }
    (mu1, mu2)
}

pub(crate) struct RawPoints {
    pub x: Array2<f64>,
    pub y: Vec<i8>,
    pub cluster: Vec<ClusterId>,
}

/// Draws `count` points in the fixed per-sample order
/// (clean label, center coin, noise coordinates, flip coin).
pub(crate) fn draw_points(
    mu1: &[f64],
    mu2: &[f64],
    eta: f64,
    count: usize,
    rng: &mut Rng,
    opts: &SampleOptions,
) -> RawPoints {
    let p = mu1.len();
    let mut x = Array2::<f64>::zeros((count, p));
    let mut y = Vec::with_capacity(count);
    let mut cluster = Vec::with_capacity(count);
    let flat = x.as_slice_mut().expect("fresh array is contiguous");
    for row in flat.chunks_exact_mut(p.max(1)).take(count) {
        let positive: bool = rng.random();
        let plus: bool = rng.random();
        let mut c = match (positive, plus) {
            (true, true) => ClusterId::PlusMu1,
            (true, false) => ClusterId::MinusMu1,
            (false, true) => ClusterId::PlusMu2,
            (false, false) => ClusterId::MinusMu2,
        };
        for v in row.iter_mut() {
            *v = rng.sample(StandardNormal);
        }
        let flip = rng.random::<f64>() < eta;
        if let Some(forced) = opts.single_cluster {
            c = forced;
        }
        if opts.noiseless {
            row.iter_mut().for_each(|v| *v = 0.0);
        }
        let mu = if c.axis() == 1 { mu1 } else { mu2 };
        let s = c.sign();
        for (v, m) in row.iter_mut().zip(mu) {
            *v += s * m;
        }
        let label = if flip { -c.clean_label() } else { c.clean_label() };
        y.push(label);
        cluster.push(c);
    }
    RawPoints { x, y, cluster }
}

/// Samples the training set for `cfg`.
pub fn sample_dataset(cfg: &RunConfig, rng: &mut Rng) -> Dataset {
    sample_dataset_with(cfg, rng, &SampleOptions::default())
}

pub fn sample_dataset_with(cfg: &RunConfig, rng: &mut Rng, opts: &SampleOptions) -> Dataset {
    let (mu1, mu2) = match opts.rotate {
        None => cluster_means(cfg.p, cfg.mu_norm, None),
        Some(seed) => {
            let mut r = crate::rng::substream(seed, 0, crate::rng::Purpose::Rotation);
            cluster_means(cfg.p, cfg.mu_norm, Some(&mut r))
        }
    };
    let raw = draw_points(&mu1, &mu2, cfg.eta, cfg.n, rng, opts);
    Dataset::from_parts(raw.x, raw.y, raw.cluster, mu1, mu2, cfg.eta).expect("sampled shapes are consistent")
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClusterCounts {
    pub clean: [usize; 4],
    pub noisy: [usize; 4],
}

impl ClusterCounts {
    pub fn c(&self, v: ClusterId) -> usize {
        self.clean[v.index()]
    }

    pub fn nn(&self, v: ClusterId) -> usize {
        self.noisy[v.index()]
    }

    pub fn size(&self, v: ClusterId) -> usize {
        self.c(v) + self.nn(v)
    }

    pub fn total(&self) -> usize {
        self.clean.iter().sum::<usize>() + self.noisy.iter().sum::<usize>()
    }
}

pub fn cluster_counts(ds: &Dataset) -> ClusterCounts {
    let mut out = ClusterCounts::default();
    for i in 0..ds.n() {
        let k = ds.cluster[i].index();
        if ds.is_noisy(i) {
            out.noisy[k] += 1;
        } else {
            out.clean[k] += 1;
        }
    }
    out
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Direction {
    AtMost,
    AtLeast,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConditionEntry {
    pub name: String,
    pub measured: f64,
    pub threshold: f64,
    pub direction: Direction,
    pub pass: bool,
}

impl ConditionEntry {
    pub fn new(name: &str, measured: f64, threshold: f64, direction: Direction) -> Self {
        let pass = match direction {
            Direction::AtMost => measured <= threshold,
            Direction::AtLeast => measured >= threshold,
        };
        ConditionEntry {
            name: name.to_string(),
            measured,
            threshold,
            direction,
            pass,
        }
    }

    /// Signed slack in the passing direction, relative to `|threshold|`
    /// (absolute when the threshold is zero). Nonnegative iff the entry passes.
    pub fn margin(&self) -> f64 {
        let slack = match self.direction {
            Direction::AtMost => self.threshold - self.measured,
            Direction::AtLeast => self.measured - self.threshold,
        };
        if self.threshold == 0.0 {
            slack
        } else {
            slack / self.threshold.abs()
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ConditionReport {
    pub entries: Vec<ConditionEntry>,
}

impl ConditionReport {
    pub fn pass(&self) -> bool {
        self.entries.iter().all(|e| e.pass)
    }

    pub fn push(&mut self, e: ConditionEntry) {
        self.entries.push(e);
    }

    pub fn extend(&mut self, other: ConditionReport) {
        self.entries.extend(other.entries);
    }

    pub fn get(&self, name: &str) -> Option<&ConditionEntry> {
        self.entries.iter().find(|e| e.name == name)
    }

    /// Entries whose name starts with `prefix.`.
    pub fn group(&self, prefix: &str) -> ConditionReport {
        let pre = format!("{prefix}.");
        ConditionReport {
            entries: self.entries.iter().filter(|e| e.name.starts_with(&pre)).cloned().collect(),
        }
    }

    pub fn worst_margin(&self) -> f64 {
        self.entries.iter().map(|e| e.margin()).fold(f64::INFINITY, f64::min)
    }
}

/// B1–B4 over a dataset.
pub fn check_data_conditions(ds: &Dataset, eps: f64) -> ConditionReport {
    check_data_conditions_with_gram(ds, eps, &ds.gram())
}

/// As [`check_data_conditions`], reusing a precomputed `X Xᵀ`.
pub fn check_data_conditions_with_gram(ds: &Dataset, eps: f64, gram: &Array2<f64>) -> ConditionReport {
    let n = ds.n();
    let nf = n as f64;
    let p = ds.p() as f64;
    let mu = ds.mu_norm();
    let mu_sq = mu * mu;
    let log_n = nf.ln().max(0.0);
    let mut rep = ConditionReport::default();

    let mut proj = 0.0f64;
    let mut norm_dev = 0.0f64;
    for k in 0..n {
        let row = ds.row(k);
        let center = ds.center(ds.cluster[k]);
        let xi: Vec<f64> = row.iter().zip(&center).map(|(a, b)| a - b).collect();
        proj = proj
            .max(linalg::dot(&xi, &ds.mu1).abs())
            .max(linalg::dot(&xi, &ds.mu2).abs());
        norm_dev = norm_dev.max((gram[[k, k]] - p - mu_sq).abs());
    }
    rep.push(ConditionEntry::new("B1.proj", proj, 10.0 * log_n.sqrt() * mu, Direction::AtMost));
    rep.push(ConditionEntry::new("B1.norm", norm_dev, 10.0 * (p * log_n).sqrt(), Direction::AtMost));

    let mut cross = 0.0f64;
    let mut inner = [[0.0; 4]; 4];
    for a in ClusterId::ALL {
        for b in ClusterId::ALL {
            inner[a.index()][b.index()] = ds.center_inner(a, b);
        }
    }
    for i in 0..n {
        for k in (i + 1)..n {
            let c = inner[ds.cluster[i].index()][ds.cluster[k].index()];
            cross = cross.max((gram[[i, k]] - c).abs());
        }
    }
    rep.push(ConditionEntry::new("B2.cross", cross, 10.0 * (p * log_n).sqrt(), Direction::AtMost));

    rep.entries.extend(count_conditions(&cluster_counts(ds), ds.eta, eps));
    rep
}

/// B3 and B4, which depend on the data only through the cluster counts.
pub fn count_conditions(counts: &ClusterCounts, eta: f64, eps: f64) -> Vec<ConditionEntry> {
    let nf = counts.total() as f64;
    let log_n = nf.ln().max(0.0);
    let mut size_dev = 0.0f64;
    let mut noise_dev = 0.0f64;
    for v in ClusterId::ALL {
        let size = counts.size(v) as f64;
        size_dev = size_dev.max((size - nf / 4.0).abs());
        noise_dev = noise_dev.max((counts.nn(v) as f64 - eta * size).abs());
    }
    let root = nf.powf(0.5 - eps);
    let mut size_gap = f64::INFINITY;
    let mut noise_gap = f64::INFINITY;
    for v in [ClusterId::PlusMu1, ClusterId::PlusMu2] {
        let w = v.negate();
        size_gap = size_gap.min((counts.size(v) as f64 - counts.size(w) as f64).abs());
        noise_gap = noise_gap.min((counts.nn(v) as f64 - counts.nn(w) as f64).abs());
    }
    vec![
        ConditionEntry::new("B3.size", size_dev, (eps * nf * log_n).sqrt(), Direction::AtMost),
        ConditionEntry::new("B3.noise", noise_dev, (eps * eta * nf * log_n).sqrt(), Direction::AtMost),
        ConditionEntry::new("B4.size", size_gap, root, Direction::AtLeast),
        ConditionEntry::new("B4.noise", noise_gap, eta * root, Direction::AtLeast),
    ]
}

/// Largest `|cos|` between two distinct training points.
pub fn max_abs_cossim(ds: &Dataset) -> Result<f64> {
    max_abs_cossim_with_gram(&ds.gram())
}

pub fn max_abs_cossim_with_gram(gram: &Array2<f64>) -> Result<f64> {
    let n = gram.nrows();
    if n < 2 {
        return Err(Error::Dimension { expected: 2, got: n });
    }
    if let Some(i) = (0..n).find(|&i| gram[[i, i]] == 0.0) {
        return Err(Error::ZeroNorm(i));
    }
    let mut best = 0.0f64;
    for i in 0..n {
        for k in (i + 1)..n {
            best = best.max(gram[[i, k]].abs() / (gram[[i, i]] * gram[[k, k]]).sqrt());
        }
    }
    Ok(best)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{substream, Purpose};
    use ndarray::array;

    fn small_cfg() -> RunConfig {
        RunConfig {
            n: 40,
            p: 500,
            mu_norm: 8.0,
            eta: 0.1,
            m: 20,
            ..RunConfig::reference()
        }
    }

    #[test]
    fn cluster_algebra() {
        for c in ClusterId::ALL {
            assert_eq!(c.negate().negate(), c);
            assert_eq!(c.negate().clean_label(), c.clean_label());
        }
        assert_eq!(ClusterId::MinusMu1.clean_label(), 1);
        assert_eq!(ClusterId::PlusMu2.clean_label(), -1);
    }

    #[test]
    fn eta_zero_has_no_noise() {
        let mut cfg = small_cfg();
        cfg.eta = 0.0;
        let ds = sample_dataset(&cfg, &mut substream(1, 0, Purpose::Data));
        assert_eq!(ds.y, ds.y_clean);
    }

    #[test]
    fn sampling_is_deterministic_and_consistent() {
        let cfg = small_cfg();
        let a = sample_dataset(&cfg, &mut substream(5, 2, Purpose::Data));
        let b = sample_dataset(&cfg, &mut substream(5, 2, Purpose::Data));
        assert_eq!(a, b);
        for i in 0..a.n() {
            assert_eq!(a.cluster[i].clean_label(), a.y_clean[i]);
        }
        assert_eq!(cluster_counts(&a).total(), a.n());
        assert_eq!(linalg::dot(&a.mu1, &a.mu2), 0.0);
    }

    #[test]
    fn rotated_means_are_orthonormal_pair() {
        let (u, v) = cluster_means(300, 3.0, Some(&mut substream(9, 0, Purpose::Rotation)));
        assert!(linalg::dot(&u, &v).abs() < 1e-12);
        assert!((linalg::norm_sq(&u) - 9.0).abs() < 1e-12);
        assert!((linalg::norm_sq(&v) - 9.0).abs() < 1e-12);
    }

    #[test]
    fn hand_built_counts() {
        use ClusterId::*;
        let cl = vec![PlusMu1, PlusMu1, MinusMu1, MinusMu1, PlusMu2, PlusMu2, MinusMu2, MinusMu2];
        let mut y: Vec<i8> = cl.iter().map(|c| c.clean_label()).collect();
        y[1] = -1;
        let x = Array2::from_shape_fn((8, 2), |(i, k)| (i + k) as f64 + 1.0);
        let ds = Dataset::from_parts(x, y, cl, vec![1.0, 0.0], vec![0.0, 1.0], 0.1).unwrap();
        let c = cluster_counts(&ds);
        assert_eq!((c.c(PlusMu1), c.nn(PlusMu1)), (1, 1));
        for v in [MinusMu1, PlusMu2, MinusMu2] {
            assert_eq!((c.c(v), c.nn(v)), (2, 0));
        }
    }

    #[test]
    fn empty_counts() {
        let ds = Dataset::from_parts(Array2::zeros((0, 3)), vec![], vec![], vec![0.0; 3], vec![0.0; 3], 0.0).unwrap();
        assert_eq!(cluster_counts(&ds), ClusterCounts::default());
    }

    #[test]
    fn noiseless_conditions_measure_zero() {
        let cfg = small_cfg();
        let opts = SampleOptions {
            noiseless: true,
            ..Default::default()
        };
        let ds = sample_dataset_with(&cfg, &mut substream(3, 0, Purpose::Data), &opts);
        let r = check_data_conditions(&ds, 2e-4);
        assert_eq!(r.get("B1.proj").unwrap().measured, 0.0);
        assert_eq!(r.get("B2.cross").unwrap().measured, 0.0);
        assert!(r.get("B1.proj").unwrap().pass && r.get("B2.cross").unwrap().pass);
    }

    #[test]
    fn single_cluster_fails_b4() {
        let cfg = small_cfg();
        let opts = SampleOptions {
            single_cluster: Some(ClusterId::PlusMu1),
            ..Default::default()
        };
        let ds = sample_dataset_with(&cfg, &mut substream(3, 0, Purpose::Data), &opts);
        let e = ds_b4(&ds);
        assert_eq!(e.measured, 0.0);
        assert!(!e.pass);
    }

    fn ds_b4(ds: &Dataset) -> ConditionEntry {
        check_data_conditions(ds, 2e-4).get("B4.size").unwrap().clone()
    }

    #[test]
    fn cossim_edge_cases() {
        let mk = |x: Array2<f64>| {
            let n = x.nrows();
            Dataset::from_parts(x, vec![1; n], vec![ClusterId::PlusMu1; n], vec![0.0; 2], vec![0.0; 2], 0.0).unwrap()
        };
        assert_eq!(max_abs_cossim(&mk(array![[1.0, 2.0], [1.0, 2.0]])).unwrap(), 1.0);
        assert_eq!(max_abs_cossim(&mk(array![[1.0, 0.0], [0.0, 3.0]])).unwrap(), 0.0);
        assert!(matches!(max_abs_cossim(&mk(array![[1.0, 0.0], [0.0, 0.0]])), Err(Error::ZeroNorm(1))));
    }

    #[test]
    fn margins_have_pass_sign() {
        let e = ConditionEntry::new("x", 3.0, 2.0, Direction::AtMost);
        assert!(!e.pass && e.margin() < 0.0);
        let e = ConditionEntry::new("x", 3.0, 2.0, Direction::AtLeast);
        assert!(e.pass && (e.margin() - 0.5).abs() < 1e-15);
    }
}
