use std::collections::BTreeMap;
use std::path::Path;
use std::time::Instant;

use grokxor::config::{check_assumptions, RunConfig};
use grokxor::datagen::{self, cluster_counts, ClusterCounts};
use grokxor::instrument::{self, AlignedSetExport, PROJECTION_HEADER};
use grokxor::network::{grid_csv, grid_from_projections, init_network};
use grokxor::par::Parallelism;
use grokxor::propcheck::{self, parse_suites, AggregateCurves, SuiteResult, GATE};
use grokxor::rng::{substream, Purpose};
use grokxor::trainer::{
    run_training_with, EngineKind, Experiment, HookAction, PropertyMonitor, SnapshotHook, StepView, StopWhenGrokked,
    TrainHook, TrainOptions, TrainTrace, TrajectoryCounts,
};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::args::{CheckArgs, EngineArg, FiguresArgs, RunArgs, SweepArgs, Which};
use crate::error::{CliError, CliResult, EXIT_OK};
use crate::manifest::{sha256_hex, Outputs, MANIFEST_NAME};
use crate::svg::{line_chart, Series};

fn write_json<T: Serialize>(out: &mut Outputs, rel: &str, value: &T) -> CliResult<()> {
    let text = serde_json::to_string_pretty(value)? + "\n";
    out.write(rel, text.as_bytes())?;
    Ok(())
}

/// Summary written next to each trace.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RunSummary {
    pub seed_index: u64,
    pub steps_run: u64,
    pub stopped_early: bool,
    pub assumptions_hold: bool,
    pub ties: u64,
    pub j1_size: usize,
    pub j2_size: usize,
    pub first_fit: Option<u64>,
    pub first_test_below_01: Option<u64>,
    pub warnings: Vec<String>,
    pub properties: TrajectoryCounts,
}

/// Options of a single training run.
#[derive(Clone, Debug)]
pub struct RunOptions {
    pub engine: EngineKind,
    pub seed_index: u64,
    pub snapshots: Vec<u64>,
    pub stop_at_test_error: Option<f64>,
    pub emit_svg: bool,
}

impl Default for RunOptions {
    fn default() -> Self {
        RunOptions {
            engine: EngineKind::Span,
            seed_index: 0,
            snapshots: Vec::new(),
            stop_at_test_error: None,
            emit_svg: false,
        }
    }
}

fn trace_svg(trace: &TrainTrace) -> String {
    let pick = |f: fn(&grokxor::trainer::StepMetrics) -> f64| trace.steps.iter().map(|m| ((m.t + 1) as f64, f(m))).collect();
    line_chart(
        "train accuracy and test error",
        "t + 1",
        &[
            Series {
                name: "train_acc",
                points: pick(|m| m.train_acc),
            },
            Series {
                name: "test_err",
                points: pick(|m| m.test_err),
            },
        ],
    )
}

/// Trains one network into `out`: `trace.csv`, `run_summary.json`, snapshots.
pub fn run_into(cfg: &RunConfig, opts: &RunOptions, out: &mut Outputs) -> CliResult<RunSummary> {
    let ds = datagen::sample_dataset(cfg, &mut substream(cfg.seed, opts.seed_index, Purpose::Data));
    let net0 = init_network(cfg, &mut substream(cfg.seed, opts.seed_index, Purpose::Init));
    let mut monitor = PropertyMonitor::new(&ds, cfg.alpha, cfg.m, cfg.steps);
    let mut snaps = SnapshotHook::new(out.root(), opts.snapshots.clone());
    let mut stop = opts.stop_at_test_error.map(StopWhenGrokked::new);
    let trace = {
        let mut hooks: Vec<&mut dyn TrainHook> = vec![&mut monitor, &mut snaps];
        if let Some(s) = stop.as_mut() {
            hooks.push(s);
        }
        let train = TrainOptions {
            engine: opts.engine,
            seed_index: opts.seed_index,
            ..TrainOptions::default()
        };
        run_training_with(cfg, &ds, &net0, &mut hooks, &train)?
    };
    for path in &snaps.written {
        let rel = path.strip_prefix(out.root()).unwrap_or(path).to_string_lossy().replace('\\', "/");
        out.adopt(&rel)?;
    }
    out.write("trace.csv", trace.to_csv().as_bytes())?;
    if opts.emit_svg {
        out.write("trace.svg", trace_svg(&trace).as_bytes())?;
    }
    let summary = RunSummary {
        seed_index: opts.seed_index,
        steps_run: trace.steps.last().map_or(0, |m| m.t),
        stopped_early: trace.stopped_early,
        assumptions_hold: check_assumptions(cfg).all_satisfied(),
        ties: trace.ties,
        j1_size: trace.j1_size,
        j2_size: trace.j2_size,
        first_fit: trace.first(|m| m.train_acc == 1.0),
        first_test_below_01: trace.first(|m| m.test_err <= 0.1),
        warnings: trace.warnings.clone(),
        properties: monitor.counts,
    };
    write_json(out, "run_summary.json", &summary)?;
    Ok(summary)
}

pub fn cmd_run(args: &RunArgs) -> CliResult<i32> {
    let cfg = args.config.resolve()?;
    let mut out = Outputs::create(&args.output.out, args.output.record_time)?;
    let opts = RunOptions {
        engine: match args.engine {
            EngineArg::Span => EngineKind::Span,
            EngineArg::Dense => EngineKind::Dense,
        },
        seed_index: args.seed_index,
        snapshots: args.snapshots.clone(),
        stop_at_test_error: args.stop_at_test_error,
        emit_svg: args.emit_svg,
    };
    let summary = run_into(&cfg, &opts, &mut out)?;
    out.finish("run", &cfg)?;
    println!(
        "run: {} steps, first fit {:?}, first test error <= 0.1 {:?}",
        summary.steps_run, summary.first_fit, summary.first_test_below_01
    );
    Ok(EXIT_OK)
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CheckDiagnostics {
    pub gate: f64,
    pub seeds: u64,
    pub exceedance: Option<propcheck::ExceedanceDiagnostic>,
    pub wall_time: Option<f64>,
}

/// Runs the suites; the exit code is nonzero iff a gated suite misses its gate.
pub fn check_into(cfg: &RunConfig, suites: &str, seeds: u64, out: &mut Outputs) -> CliResult<(Vec<SuiteResult>, i32)> {
    let ids = parse_suites(suites)?;
    let seed_list: Vec<u64> = (0..seeds).collect();
    let start = Instant::now();
    let evals = propcheck::evaluate_seeds(cfg, &seed_list, &ids, Parallelism::default());
    let elapsed = start.elapsed().as_secs_f64();
    let results = propcheck::summarize(cfg, &evals, &ids, elapsed);
    let rows = propcheck::report_rows(&results, out.record_time());
    write_json(out, "suite_report.json", &rows)?;
    let diag = CheckDiagnostics {
        gate: GATE,
        seeds,
        exceedance: propcheck::exceedance_diagnostic(cfg, &evals, 2000),
        wall_time: out.record_time().then_some(elapsed),
    };
    write_json(out, "suite_diagnostics.json", &diag)?;
    let code = if results.iter().all(SuiteResult::gate_ok) {
        EXIT_OK
    } else {
        crate::error::EXIT_NUMERIC
    };
    Ok((results, code))
}

pub fn cmd_check(args: &CheckArgs) -> CliResult<i32> {
    let cfg = args.config.resolve()?;
    parse_suites(&args.suites)?;
    let mut out = Outputs::create(&args.output.out, args.output.record_time)?;
    let (results, code) = check_into(&cfg, &args.suites, args.seeds, &mut out)?;
    out.finish("check", &cfg)?;
    for r in &results {
        let oracle = r
            .oracle
            .as_ref()
            .map_or(String::new(), |o| format!(" predicted {:.4} agree {}", o.predicted_rate, o.agree));
        println!(
            "{:<3} pass {:>4}/{:<4} rate {:.3} worst margin {:+.3e}{}{}",
            r.suite.name(),
            r.pass_count,
            r.seeds,
            r.pass_rate,
            r.worst_margin,
            if r.gated { " [gated]" } else { "" },
            oracle
        );
    }
    Ok(code)
}

/// Captures projections at chosen steps and the aligned sets at `t = 0`.
struct CaptureHook {
    times: Vec<u64>,
    counts: ClusterCounts,
    kappa: f64,
    eps: f64,
    captured: Vec<(u64, [Vec<f64>; 2])>,
    aligned: Option<AlignedSetExport>,
}

impl TrainHook for CaptureHook {
    fn on_step(&mut self, view: &StepView<'_>) -> grokxor::Result<HookAction> {
        if view.t == 0 {
            let sets = instrument::aligned_sets(view.stats, &self.counts, self.kappa, view.engine.sign(), self.eps);
            self.aligned = Some(AlignedSetExport::from(&sets));
        }
        if self.times.contains(&view.t) {
            self.captured.push((view.t, view.proj.clone()));
        }
        Ok(HookAction::Continue)
    }
}

fn capture(cfg: &RunConfig, seed_index: u64, times: &[u64]) -> CliResult<(CaptureHook, Vec<i8>, f64)> {
    let exp = Experiment::prepare(cfg, seed_index, false, Parallelism::default());
    let mut hook = CaptureHook {
        times: times.to_vec(),
        counts: cluster_counts(&exp.ds),
        kappa: 20.0 * cfg.epsilon,
        eps: cfg.epsilon,
        captured: Vec::new(),
        aligned: None,
    };
    let last = times.iter().copied().max().unwrap_or(0);
    exp.train(cfg.alpha, last, &mut [&mut hook], Parallelism::default())?;
    Ok((hook, exp.net0.sign.clone(), exp.net0.scale))
}

/// Sample skewness; NaN for fewer than three values or zero spread.
pub fn skewness(v: &[f64]) -> f64 {
    let n = v.len() as f64;
    if v.len() < 3 {
        return f64::NAN;
    }
    let mean = v.iter().sum::<f64>() / n;
    let m2 = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    let m3 = v.iter().map(|x| (x - mean).powi(3)).sum::<f64>() / n;
    if m2 == 0.0 {
        return f64::NAN;
    }
    m3 / m2.powf(1.5)
}

fn std_dev(v: &[f64]) -> f64 {
    let n = v.len() as f64;
    if v.is_empty() {
        return f64::NAN;
    }
    let mean = v.iter().sum::<f64>() / n;
    (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n).sqrt()
}

/// Shape statistics of the pooled positive-neuron projections at one step.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct HistogramStats {
    pub t: u64,
    pub count: usize,
    pub skew_mu1: f64,
    pub skew_mu2: f64,
    pub skew_abs_mu1: f64,
    pub skew_abs_mu2: f64,
    /// Spread of `⟨w_j, μ₁⟩` over spread of `⟨w_j, μ₂⟩`.
    pub spread_ratio: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct FiguresMeta {
    pub which: String,
    pub x_axis: String,
    pub seeds: u64,
    pub alpha: f64,
    pub steps: u64,
    pub times: Vec<u64>,
    pub kappa: f64,
    pub half_width: Option<f64>,
    pub resolution: Option<usize>,
    pub histograms: Vec<HistogramStats>,
}

pub fn figures_into(cfg: &RunConfig, args: &FiguresArgs, out: &mut Outputs) -> CliResult<FiguresMeta> {
    let mut meta = FiguresMeta {
        which: format!("{:?}", args.which).to_lowercase(),
        x_axis: "t+1".to_string(),
        seeds: args.seeds,
        alpha: cfg.alpha,
        steps: cfg.steps,
        times: Vec::new(),
        kappa: 20.0 * cfg.epsilon,
        half_width: None,
        resolution: None,
        histograms: Vec::new(),
    };
    let seeds: Vec<u64> = (0..args.seeds).collect();
    match args.which {
        Which::Curves => {
            let (agg, traces): (AggregateCurves, Vec<TrainTrace>) =
                propcheck::aggregate_runs(cfg, &seeds, cfg.steps, Parallelism::default())?;
            out.write("curves.csv", agg.to_csv().as_bytes())?;
            for (k, tr) in traces.iter().enumerate() {
                out.write(&format!("traces/seed_{k}.csv"), tr.to_csv().as_bytes())?;
            }
            if args.emit_svg {
                let col = |name: &str| -> Vec<(f64, f64)> {
                    agg.rows
                        .iter()
                        .filter(|r| r.col == name)
                        .map(|r| ((r.t + 1) as f64, r.mean))
                        .collect()
                };
                let svg = line_chart(
                    "mean over seeds",
                    "t + 1",
                    &[
                        Series {
                            name: "train_acc",
                            points: col("train_acc"),
                        },
                        Series {
                            name: "test_err",
                            points: col("test_err"),
                        },
                    ],
                );
                out.write("curves.svg", svg.as_bytes())?;
            }
        }
        Which::Boundary => {
            meta.times = args.times.clone();
            meta.half_width = Some(args.half_width);
            meta.resolution = Some(args.resolution);
            let (hook, sign, scale) = capture(cfg, 0, &args.times)?;
            for (t, proj) in &hook.captured {
                let cells = grid_from_projections(&proj[0], &proj[1], &sign, scale, args.half_width, args.resolution);
                out.write(&format!("grid_t{t}.csv"), grid_csv(&cells).as_bytes())?;
            }
        }
        Which::Histograms => {
            meta.times = args.times.clone();
            let mut csv = String::from(PROJECTION_HEADER);
            let mut pooled: BTreeMap<u64, [Vec<f64>; 2]> = BTreeMap::new();
            for &s in &seeds {
                let (hook, sign, _) = capture(cfg, s, &args.times)?;
                for (t, proj) in &hook.captured {
                    csv.push_str(&instrument::projection_rows(s as usize, *t, &proj[0], &proj[1], &sign));
                    let slot = pooled.entry(*t).or_default();
                    for j in (0..sign.len()).filter(|&j| sign[j] > 0) {
                        slot[0].push(proj[0][j]);
                        slot[1].push(proj[1][j]);
                    }
                }
                if s == 0 {
                    if let Some(a) = &hook.aligned {
                        write_json(out, "aligned_sets.json", a)?;
                    }
                }
            }
            out.write("projections.csv", csv.as_bytes())?;
            for (t, [p1, p2]) in &pooled {
                let abs = |v: &[f64]| v.iter().map(|x| x.abs()).collect::<Vec<_>>();
                meta.histograms.push(HistogramStats {
                    t: *t,
                    count: p1.len(),
                    skew_mu1: skewness(p1),
                    skew_mu2: skewness(p2),
                    skew_abs_mu1: skewness(&abs(p1)),
                    skew_abs_mu2: skewness(&abs(p2)),
                    spread_ratio: std_dev(p1) / std_dev(p2),
                });
            }
        }
    }
    write_json(out, "figures_meta.json", &meta)?;
    Ok(meta)
}

pub fn cmd_figures(args: &FiguresArgs) -> CliResult<i32> {
    let cfg = args.config.resolve()?;
    let mut out = Outputs::create(&args.output.out, args.output.record_time)?;
    let meta = figures_into(&cfg, args, &mut out)?;
    out.finish("figures", &cfg)?;
    for h in &meta.histograms {
        println!(
            "t={:<3} positive neurons {:>6}  skew(mu1) {:+.3}  skew(|mu1|) {:+.3}  spread mu1/mu2 {:.3}",
            h.t, h.count, h.skew_mu1, h.skew_abs_mu1, h.spread_ratio
        );
    }
    Ok(EXIT_OK)
}

/// One axis of a sweep grid.
#[derive(Clone, Debug, PartialEq)]
pub struct GridAxis {
    pub key: String,
    pub values: Vec<String>,
}

pub fn parse_grid(specs: &[String]) -> CliResult<Vec<GridAxis>> {
    let mut axes = Vec::new();
    for spec in specs {
        let (k, vs) = spec
            .split_once('=')
            .ok_or_else(|| CliError::Config(format!("grid axis must be KEY=V1,V2, got `{spec}`")))?;
        let values: Vec<String> = vs.split(',').map(str::trim).filter(|v| !v.is_empty()).map(String::from).collect();
        if values.is_empty() {
            return Err(CliError::Config(format!("grid axis `{}` has no values", k.trim())));
        }
        axes.push(GridAxis {
            key: k.trim().to_string(),
            values,
        });
    }
    if axes.is_empty() {
        return Err(CliError::Config("sweep grid is empty".to_string()));
    }
    Ok(axes)
}

/// Cross-product of the axes, first axis varying slowest.
pub fn grid_cells(axes: &[GridAxis]) -> Vec<Vec<(String, String)>> {
    let mut cells: Vec<Vec<(String, String)>> = vec![Vec::new()];
    for axis in axes {
        cells = cells
            .into_iter()
            .flat_map(|c| {
                axis.values.iter().map(move |v| {
                    let mut next = c.clone();
                    next.push((axis.key.clone(), v.clone()));
                    next
                })
            })
            .collect();
    }
    cells
}

fn cell_dir(cell: &[(String, String)]) -> String {
    cell.iter()
        .map(|(k, v)| {
            let safe: String = v
                .chars()
                .map(|c| if c.is_ascii_alphanumeric() || matches!(c, '.' | '-' | '+') { c } else { '_' })
                .collect();
            format!("{k}={safe}")
        })
        .collect::<Vec<_>>()
        .join("__")
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SweepCell {
    pub dir: String,
    pub overrides: BTreeMap<String, String>,
    pub exit_code: i32,
    pub error: Option<String>,
    pub manifest_sha256: Option<String>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SweepIndex {
    pub build: String,
    pub cells: Vec<SweepCell>,
}

pub fn cmd_sweep(args: &SweepArgs) -> CliResult<i32> {
    let base = args.config.resolve()?;
    let axes = parse_grid(&args.grid)?;
    let cells = grid_cells(&axes);
    let mut configs = Vec::with_capacity(cells.len());
    for cell in &cells {
        let mut cfg = base.clone();
        for (k, v) in cell {
            cfg.set(k, v)?;
        }
        cfg.validate()?;
        configs.push(cfg);
    }
    std::fs::create_dir_all(&args.output.out)?;
    let root = args.output.out.clone();
    let record_time = args.output.record_time;
    let results: Vec<SweepCell> = cells
        .par_iter()
        .zip(configs.par_iter())
        .map(|(cell, cfg)| {
            let dir = cell_dir(cell);
            let run = || -> CliResult<String> {
                let mut out = Outputs::create(&root.join(&dir), record_time)?;
                run_into(cfg, &RunOptions::default(), &mut out)?;
                out.finish("sweep", cfg)?;
                let bytes = std::fs::read(root.join(&dir).join(MANIFEST_NAME))?;
                Ok(sha256_hex(&bytes))
            };
            let (exit_code, error, manifest_sha256) = match run() {
                Ok(h) => (EXIT_OK, None, Some(h)),
                Err(e) => (e.code(), Some(e.to_string()), None),
            };
            SweepCell {
                dir,
                overrides: cell.iter().cloned().collect(),
                exit_code,
                error,
                manifest_sha256,
            }
        })
        .collect();
    let index = SweepIndex {
        build: crate::manifest::BUILD_ID.to_string(),
        cells: results,
    };
    let text = serde_json::to_string_pretty(&index)? + "\n";
    grokxor::io::write_bytes(&root.join("index.json"), text.as_bytes())?;
    for c in &index.cells {
        println!("{:<40} exit {}", c.dir, c.exit_code);
    }
    Ok(index.cells.iter().map(|c| c.exit_code).find(|&c| c != EXIT_OK).unwrap_or(EXIT_OK))
}

pub fn cmd_dump_config(args: &crate::args::ConfigArgs) -> CliResult<i32> {
    let cfg = args.resolve()?;
    print!("{}", cfg.to_text());
    Ok(EXIT_OK)
}

/// Lists every regular file under `dir` relative to it, `/`-separated and sorted.
pub fn list_files(dir: &Path) -> std::io::Result<Vec<String>> {
    fn walk(base: &Path, dir: &Path, out: &mut Vec<String>) -> std::io::Result<()> {
        for entry in std::fs::read_dir(dir)? {
            let path = entry?.path();
            if path.is_dir() {
                walk(base, &path, out)?;
            } else {
                let rel = path.strip_prefix(base).unwrap_or(&path);
                out.push(rel.to_string_lossy().replace('\\', "/"));
            }
        }
        Ok(())
    }
    let mut out = Vec::new();
    walk(dir, dir, &mut out)?;
    out.sort();
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn axes(specs: &[&str]) -> CliResult<Vec<GridAxis>> {
        parse_grid(&specs.iter().map(|s| s.to_string()).collect::<Vec<_>>())
    }

    #[test]
    fn grid_parsing() {
        let a = axes(&["alpha = 1e-12, 1e-16", "eta=0,"]).unwrap();
        assert_eq!(a[0].key, "alpha");
        assert_eq!(a[0].values, ["1e-12", "1e-16"]);
        assert_eq!(a[1].values, ["0"]);
        assert!(matches!(axes(&[]), Err(CliError::Config(_))));
        assert!(matches!(axes(&["alpha"]), Err(CliError::Config(_))));
        assert!(matches!(axes(&["alpha=,"]), Err(CliError::Config(_))));
    }

    #[test]
    fn cells_vary_last_axis_fastest() {
        let cells = grid_cells(&axes(&["a=1,2", "b=x,y,z"]).unwrap());
        assert_eq!(cells.len(), 6);
        let dirs: Vec<String> = cells.iter().map(|c| cell_dir(c)).collect();
        assert_eq!(dirs[0], "a=1__b=x");
        assert_eq!(dirs[1], "a=1__b=y");
        assert_eq!(dirs[3], "a=2__b=x");
    }

    #[test]
    fn cell_dirs_are_path_safe() {
        let cell = vec![("alpha".to_string(), "1e-12".to_string()), ("x".to_string(), "a/b c".to_string())];
        assert_eq!(cell_dir(&cell), "alpha=1e-12__x=a_b_c");
    }

    #[test]
    fn skewness_of_known_samples() {
        assert_eq!(skewness(&[1.0, 2.0, 3.0]), 0.0);
        assert!(skewness(&[0.0, 0.0, 0.0, 10.0]) > 1.0);
        assert!(skewness(&[0.0, 10.0, 10.0, 10.0]) < -1.0);
        assert!(skewness(&[1.0, 1.0, 1.0]).is_nan());
        assert!(skewness(&[1.0, 2.0]).is_nan());
        let two_point = skewness(&[0.0, 0.0, 0.0, 1.0]);
        assert!((two_point - 2.0 / 3f64.sqrt()).abs() < 1e-12);
    }
}
