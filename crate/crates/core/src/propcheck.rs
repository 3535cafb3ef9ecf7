//! Multi-seed condition suites, Monte-Carlo oracles and curve aggregation.

use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use rand::Rng as _;
use rand_distr::{Binomial, Distribution};
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::datagen::{self, ClusterCounts, ClusterId, ConditionEntry, ConditionReport, Direction};
use crate::error::{Error, Result};
use crate::instrument::{self, AlignStats};
use crate::linalg;
use crate::par::{self, Parallelism};
use crate::rng::{self, Purpose, Rng};
use crate::trainer::{Experiment, TrainTrace, TRACE_COLUMNS};

/// Pass-rate threshold for gated suites.
pub const GATE: f64 = 0.9;
/// Independent-activation draws per seed for the null-model predictions.
pub const NULL_DRAWS: u64 = 10;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum SuiteId {
    B1,
    B2,
    B3,
    B4,
    C1,
    C2,
    D1,
    D2,
    D3,
    D4,
}

impl SuiteId {
    pub const ALL: [SuiteId; 10] = [
        SuiteId::B1,
        SuiteId::B2,
        SuiteId::B3,
        SuiteId::B4,
        SuiteId::C1,
        SuiteId::C2,
        SuiteId::D1,
        SuiteId::D2,
        SuiteId::D3,
        SuiteId::D4,
    ];

    pub fn gated(self) -> bool {
        !matches!(self, SuiteId::B4 | SuiteId::D2 | SuiteId::D3 | SuiteId::D4)
    }

    pub fn name(self) -> &'static str {
        match self {
            SuiteId::B1 => "B1",
            SuiteId::B2 => "B2",
            SuiteId::B3 => "B3",
            SuiteId::B4 => "B4",
            SuiteId::C1 => "C1",
            SuiteId::C2 => "C2",
            SuiteId::D1 => "D1",
            SuiteId::D2 => "D2",
            SuiteId::D3 => "D3",
            SuiteId::D4 => "D4",
        }
    }

    fn needs_network(self) -> bool {
        matches!(self, SuiteId::C1 | SuiteId::C2) || self.needs_preacts()
    }

    fn needs_preacts(self) -> bool {
        matches!(self, SuiteId::D1 | SuiteId::D2 | SuiteId::D3 | SuiteId::D4)
    }

    fn needs_gram(self) -> bool {
        matches!(self, SuiteId::B1 | SuiteId::B2)
    }
}

impl fmt::Display for SuiteId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for SuiteId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        SuiteId::ALL
            .into_iter()
            .find(|v| v.name().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| Error::invalid("suite", format!("`{}` is not a known suite id", s.trim())))
    }
}

/// Parses `all` or a comma-separated list of suite ids.
pub fn parse_suites(spec: &str) -> Result<Vec<SuiteId>> {
    if spec.trim().eq_ignore_ascii_case("all") {
        return Ok(SuiteId::ALL.to_vec());
    }
    let mut out: Vec<SuiteId> = spec.split(',').filter(|s| !s.trim().is_empty()).map(str::parse).collect::<Result<_>>()?;
    if out.is_empty() {
        return Err(Error::invalid("suite", "list is empty"));
    }
    out.sort();
    out.dedup();
    Ok(out)
}

/// Measured conditions of one seed plus its null-model replicas.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeedEvaluation {
    pub seed_index: u64,
    pub report: ConditionReport,
    /// D2–D4 under independent fair-coin activations, one report per draw.
    pub null_reports: Vec<ConditionReport>,
    pub counts: ClusterCounts,
    /// Fraction of neurons with `|D_{+μ₁,j}| > sqrt(n)` at initialization.
    pub d_exceed_measured: Option<f64>,
}

/// Evaluates the requested suites for one seed.
pub fn evaluate_seed(cfg: &RunConfig, seed_index: u64, suites: &[SuiteId]) -> SeedEvaluation {
    let ds = datagen::sample_dataset(cfg, &mut rng::substream(cfg.seed, seed_index, Purpose::Data));
    let counts = datagen::cluster_counts(&ds);
    let mut report = ConditionReport::default();
    if suites.iter().any(|s| s.needs_gram()) {
        let rep = datagen::check_data_conditions_with_gram(&ds, cfg.epsilon, &ds.gram());
        report.extend(rep);
    } else if suites.iter().any(|s| matches!(s, SuiteId::B3 | SuiteId::B4)) {
        report.entries.extend(datagen::count_conditions(&counts, ds.eta, cfg.epsilon));
    }
    let mut null_reports = Vec::new();
    let mut d_exceed_measured = None;
    if suites.iter().any(|s| s.needs_network()) {
        let net0 = crate::network::init_network(cfg, &mut rng::substream(cfg.seed, seed_index, Purpose::Init));
        let m = net0.m() as f64;
        let fro_sq = linalg::norm_sq(net0.w_flat());
        let omega = cfg.omega_init;
        report.push(ConditionEntry::new("C1.fro", fro_sq, 1.5 * omega * omega * m * cfg.p as f64, Direction::AtMost));
        let pos = net0.positive_count();
        let least = pos.min(net0.m() - pos) as f64;
        report.push(ConditionEntry::new("C2.balance", least, m / 3.0, Direction::AtLeast));
        if suites.iter().any(|s| s.needs_preacts()) {
            let z0 = net0.w.dot(&ds.x.t());
            let z0 = z0.as_slice().expect("standard layout");
            report.push(instrument::d1_condition(z0, &net0.sign, ds.n()));
            let stats = instrument::activation_stats_from_preacts(z0, net0.m(), &ds, &counts);
            let kappa = 20.0 * cfg.epsilon;
            let sets = instrument::aligned_sets(&stats, &counts, kappa, &net0.sign, cfg.epsilon);
            report.extend(sets.measures);
            d_exceed_measured = Some(d_exceedance(&stats, ClusterId::PlusMu1, ds.n()));
            for draw in 0..NULL_DRAWS {
                let mut r = rng::trial_stream(cfg.seed, seed_index, Purpose::Oracle, draw);
                let null = null_stats(&counts, net0.m(), &mut r);
                report_null(&mut null_reports, &null, &counts, kappa, &net0.sign, cfg.epsilon);
            }
        }
    }
    SeedEvaluation {
        seed_index,
        report,
        null_reports,
        counts,
        d_exceed_measured,
    }
}

fn report_null(out: &mut Vec<ConditionReport>, stats: &AlignStats, counts: &ClusterCounts, kappa: f64, sign: &[i8], eps: f64) {
    out.push(instrument::aligned_sets(stats, counts, kappa, sign, eps).measures);
}

/// Active counts drawn as independent fair coins per (neuron, sample).
pub fn null_stats(counts: &ClusterCounts, m: usize, rng: &mut Rng) -> AlignStats {
    let draw = |k: usize, rng: &mut Rng| -> u32 {
        if k == 0 {
            0
        } else {
            Binomial::new(k as u64, 0.5).expect("valid binomial").sample(rng) as u32
        }
    };
    let mut clean_active = vec![[0u32; 4]; m];
    let mut noisy_active = vec![[0u32; 4]; m];
    for j in 0..m {
        for v in ClusterId::ALL {
            clean_active[j][v.index()] = draw(counts.c(v), rng);
            noisy_active[j][v.index()] = draw(counts.nn(v), rng);
        }
    }
    let root_n = (counts.total() as f64).sqrt();
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

/// Fraction of neurons with `|D_{ν,j}| > sqrt(n)`.
pub fn d_exceedance(stats: &AlignStats, v: ClusterId, n: usize) -> f64 {
    let m = stats.m();
    if m == 0 {
        return 0.0;
    }
    let thr = (n as f64).sqrt();
    (0..m).filter(|&j| stats.big_d(v, j).unsigned_abs() as f64 > thr).count() as f64 / m as f64
}

/// Probability that `Binomial(a1, 1/2) − Binomial(a2, 1/2)` exceeds
/// `threshold` in absolute value, estimated from `trials` draws.
pub fn anti_concentration_sizes(a1: usize, a2: usize, threshold: f64, trials: usize, rng: &mut Rng) -> f64 {
    if trials == 0 {
        return f64::NAN;
    }
    let b1 = (a1 > 0).then(|| Binomial::new(a1 as u64, 0.5).expect("valid"));
    let b2 = (a2 > 0).then(|| Binomial::new(a2 as u64, 0.5).expect("valid"));
    let mut hits = 0usize;
    for _ in 0..trials {
        let x = b1.as_ref().map_or(0, |b| b.sample(rng)) as f64;
        let y = b2.as_ref().map_or(0, |b| b.sample(rng)) as f64;
        if (x - y).abs() > threshold {
            hits += 1;
        }
    }
    hits as f64 / trials as f64
}

/// Exceedance probability of `|D_{ν,j}| > sqrt(n)` under independent
/// signs, with `A₁ = C_ν ∪ N_{−ν}` and `A₂ = C_{−ν} ∪ N_ν`.
pub fn anti_concentration_oracle(counts: &ClusterCounts, v: ClusterId, trials: usize, rng: &mut Rng) -> f64 {
    let w = v.negate();
    let a1 = counts.c(v) + counts.nn(w);
    let a2 = counts.c(w) + counts.nn(v);
    anti_concentration_sizes(a1, a2, (counts.total() as f64).sqrt(), trials, rng)
}

/// Cluster counts of a fresh dataset, drawn without the noise vectors.
pub fn simulate_counts(n: usize, eta: f64, rng: &mut Rng) -> ClusterCounts {
    let mut c = ClusterCounts::default();
    for _ in 0..n {
        let positive: bool = rng.random();
        let plus: bool = rng.random();
        let v = match (positive, plus) {
            (true, true) => ClusterId::PlusMu1,
            (true, false) => ClusterId::MinusMu1,
            (false, true) => ClusterId::PlusMu2,
            (false, false) => ClusterId::MinusMu2,
        };
        if rng.random::<f64>() < eta {
            c.noisy[v.index()] += 1;
        } else {
            c.clean[v.index()] += 1;
        }
    }
    c
}

/// Predicted pass rate with its Monte-Carlo standard error.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OracleComparison {
    pub predicted_rate: f64,
    pub predicted_se: f64,
    pub measured_se: f64,
    /// `|measured − predicted| ≤ 3·sqrt(se_m² + se_p²)` with pooled variance.
    pub agree: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SuiteResult {
    pub suite: SuiteId,
    pub seeds: usize,
    pub pass_count: usize,
    pub pass_rate: f64,
    pub worst_margin: f64,
    pub gated: bool,
    pub wall_time: f64,
    pub oracle: Option<OracleComparison>,
}

impl SuiteResult {
    pub fn gate_ok(&self) -> bool {
        !self.gated || self.pass_rate >= GATE
    }
}

/// Two-proportion comparison with the pooled standard error.
pub fn compare(measured: f64, measured_count: usize, predicted: f64, predicted_count: usize) -> OracleComparison {
    let (nm, np) = (measured_count as f64, predicted_count as f64);
    let pooled = if nm + np > 0.0 {
        (measured * nm + predicted * np) / (nm + np)
    } else {
        0.0
    };
    let spread = pooled * (1.0 - pooled);
    let sm = if nm > 0.0 { (spread / nm).sqrt() } else { 0.0 };
    let sp = if np > 0.0 { (spread / np).sqrt() } else { 0.0 };
    let tol = 3.0 * (sm * sm + sp * sp).sqrt();
    OracleComparison {
        predicted_rate: predicted,
        predicted_se: sp,
        measured_se: sm,
        agree: (measured - predicted).abs() <= tol,
    }
}

/// Draws used by the B4 count oracle.
pub const COUNT_ORACLE_TRIALS: u64 = 20_000;

/// Monte-Carlo B4 pass rate from simulated cluster counts.
pub fn b4_oracle_rate(cfg: &RunConfig, trials: u64, rng: &mut Rng) -> f64 {
    if trials == 0 {
        return f64::NAN;
    }
    let hits = (0..trials)
        .filter(|_| {
            let c = simulate_counts(cfg.n, cfg.eta, rng);
            datagen::count_conditions(&c, cfg.eta, cfg.epsilon)
                .iter()
                .filter(|e| e.name.starts_with("B4."))
                .all(|e| e.pass)
        })
        .count();
    hits as f64 / trials as f64
}

/// Runs the suites over `seeds` (seed indices under `cfg.seed`).
pub fn run_condition_suite(cfg: &RunConfig, seeds: &[u64], suites: &[SuiteId], mode: Parallelism) -> Vec<SuiteResult> {
    let start = Instant::now();
    let evals = evaluate_seeds(cfg, seeds, suites, mode);
    let elapsed = start.elapsed().as_secs_f64();
    summarize(cfg, &evals, suites, elapsed)
}

/// Per-seed evaluations in seed-list order.
pub fn evaluate_seeds(cfg: &RunConfig, seeds: &[u64], suites: &[SuiteId], mode: Parallelism) -> Vec<SeedEvaluation> {
    par::map_indexed(seeds.len(), mode, |k| evaluate_seed(cfg, seeds[k], suites))
}

/// Measured and predicted frequency of `|D_{+μ₁,j}| > sqrt(n)` at initialization.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExceedanceDiagnostic {
    pub measured_mean: f64,
    pub oracle_mean: f64,
    pub seeds: usize,
}

/// Compares each seed's measured exceedance frequency with the independent-sign oracle.
pub fn exceedance_diagnostic(cfg: &RunConfig, evals: &[SeedEvaluation], trials: usize) -> Option<ExceedanceDiagnostic> {
    let measured: Vec<(u64, f64, &ClusterCounts)> = evals
        .iter()
        .filter_map(|e| e.d_exceed_measured.map(|v| (e.seed_index, v, &e.counts)))
        .collect();
    if measured.is_empty() {
        return None;
    }
    let k = measured.len() as f64;
    let oracle: f64 = measured
        .iter()
        .map(|(s, _, c)| {
            let mut r = rng::trial_stream(cfg.seed, *s, Purpose::Oracle, NULL_DRAWS);
            anti_concentration_oracle(c, ClusterId::PlusMu1, trials, &mut r)
        })
        .sum();
    Some(ExceedanceDiagnostic {
        measured_mean: measured.iter().map(|v| v.1).sum::<f64>() / k,
        oracle_mean: oracle / k,
        seeds: measured.len(),
    })
}

/// Aggregates per-seed evaluations into suite results.
pub fn summarize(cfg: &RunConfig, evals: &[SeedEvaluation], suites: &[SuiteId], elapsed: f64) -> Vec<SuiteResult> {
    let seeds = evals.len();
    let b4_oracle = suites.contains(&SuiteId::B4).then(|| {
        let mut r = rng::substream(cfg.seed, u64::MAX >> 8, Purpose::Oracle);
        b4_oracle_rate(cfg, COUNT_ORACLE_TRIALS, &mut r)
    });
    suites
        .iter()
        .map(|&suite| {
            let groups: Vec<ConditionReport> = evals.iter().map(|e| e.report.group(suite.name())).collect();
            let pass_count = groups.iter().filter(|g| !g.entries.is_empty() && g.pass()).count();
            let pass_rate = if seeds == 0 { 0.0 } else { pass_count as f64 / seeds as f64 };
            let worst_margin = groups.iter().map(|g| g.worst_margin()).fold(f64::INFINITY, f64::min);
            let oracle = match suite {
                SuiteId::B4 => b4_oracle.map(|p| compare(pass_rate, seeds, p, COUNT_ORACLE_TRIALS as usize)),
                SuiteId::D2 | SuiteId::D3 | SuiteId::D4 => {
                    let nulls: Vec<bool> = evals
                        .iter()
                        .flat_map(|e| e.null_reports.iter().map(|r| r.group(suite.name()).pass()))
                        .collect();
                    (!nulls.is_empty()).then(|| {
                        let p = nulls.iter().filter(|&&v| v).count() as f64 / nulls.len() as f64;
                        compare(pass_rate, seeds, p, nulls.len())
                    })
                }
                _ => None,
            };
            SuiteResult {
                suite,
                seeds,
                pass_count,
                pass_rate,
                worst_margin: if worst_margin.is_finite() { worst_margin } else { 0.0 },
                gated: suite.gated(),
                wall_time: elapsed,
                oracle,
            }
        })
        .collect()
}

/// Suite report rows as written to JSON.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SuiteReportRow {
    pub suite: String,
    pub seeds: usize,
    pub pass_rate: f64,
    pub worst_margin: f64,
    pub gated: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub predicted_rate: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub oracle_agrees: Option<bool>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub wall_time: Option<f64>,
}

pub fn report_rows(results: &[SuiteResult], with_time: bool) -> Vec<SuiteReportRow> {
    results
        .iter()
        .map(|r| SuiteReportRow {
            suite: r.suite.name().to_string(),
            seeds: r.seeds,
            pass_rate: r.pass_rate,
            worst_margin: r.worst_margin,
            gated: r.gated,
            predicted_rate: r.oracle.as_ref().map(|o| o.predicted_rate),
            oracle_agrees: r.oracle.as_ref().map(|o| o.agree),
            wall_time: with_time.then_some(r.wall_time),
        })
        .collect()
}

/// Mean and 10/90% quantiles of every trace column, aligned by step.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct AggregateCurves {
    pub rows: Vec<CurveRow>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurveRow {
    pub t: u64,
    pub col: String,
    pub mean: f64,
    pub q10: f64,
    pub q90: f64,
}

impl AggregateCurves {
    pub fn from_traces(traces: &[TrainTrace]) -> Self {
        let last = traces.iter().flat_map(|t| t.steps.last()).map(|m| m.t).max();
        let mut rows = Vec::new();
        let Some(last) = last else {
            return AggregateCurves { rows };
        };
        for t in 0..=last {
            let at: Vec<[f64; 12]> = traces.iter().filter_map(|tr| tr.at(t)).map(|m| m.values()).collect();
            if at.is_empty() {
                continue;
            }
            for (c, name) in TRACE_COLUMNS.iter().enumerate() {
                let mut v: Vec<f64> = at.iter().map(|r| r[c]).filter(|x| !x.is_nan()).collect();
                v.sort_by(f64::total_cmp);
                let mean = if v.is_empty() {
                    f64::NAN
                } else {
                    v.iter().sum::<f64>() / v.len() as f64
                };
                rows.push(CurveRow {
                    t,
                    col: name.to_string(),
                    mean,
                    q10: instrument::quantile(&v, 0.1),
                    q90: instrument::quantile(&v, 0.9),
                });
            }
        }
        AggregateCurves { rows }
    }

    pub fn get(&self, t: u64, col: &str) -> Option<&CurveRow> {
        self.rows.iter().find(|r| r.t == t && r.col == col)
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("t,col,mean,q10,q90\n");
        for r in &self.rows {
            s.push_str(&format!("{},{},{:?},{:?},{:?}\n", r.t, r.col, r.mean, r.q10, r.q90));
        }
        s
    }
}

/// Trains every seed for `steps` steps and aggregates the traces.
pub fn aggregate_runs(cfg: &RunConfig, seeds: &[u64], steps: u64, mode: Parallelism) -> Result<(AggregateCurves, Vec<TrainTrace>)> {
    let mut traces = Vec::with_capacity(seeds.len());
    for &s in seeds {
        let exp = Experiment::prepare(cfg, s, true, mode);
        traces.push(exp.train(cfg.alpha, steps, &mut [], mode)?);
    }
    Ok((AggregateCurves::from_traces(&traces), traces))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn suite_parsing() {
        assert_eq!(parse_suites("all").unwrap().len(), 10);
        assert_eq!(parse_suites("C2,c1").unwrap(), vec![SuiteId::C1, SuiteId::C2]);
        let e = parse_suites("C1,Z9").unwrap_err();
        assert!(e.to_string().contains("Z9"));
        assert!(parse_suites("").is_err());
    }

    #[test]
    fn empty_oracle_is_zero() {
        let mut r = rng::substream(1, 0, Purpose::Oracle);
        assert_eq!(anti_concentration_sizes(0, 0, 14.14, 100, &mut r), 0.0);
    }

    #[test]
    fn compare_requires_equality_without_spread() {
        assert!(compare(1.0, 100, 1.0, 100).agree);
        assert!(!compare(1.0, 100, 0.0, 100).agree);
    }
}
