//! The full prune-and-retrain comparison grid.
//!
//! For every seed the full dataset is trained once with logging. Each method
//! scores that log, each pruning rate selects a coreset, and the coreset is
//! retrained from scratch and evaluated on the test set. TDDS coresets retrain
//! with the configured importance weighting; baseline coresets retrain
//! unweighted.

use std::fmt::Write as _;
use std::io::Write;
use std::path::{Path, PathBuf};

use rayon::prelude::*;

use crate::baselines::{baseline_scores, BaselineParams};
use crate::error::{Error, Result};
use crate::scoring::{select_top_m, tdds_scores, TddsParams};
use crate::synthdata::Dataset;
use crate::toytrain::{evaluate, train_epochs, weighted_retrain, EvalReport, TrainConfig, Weighting};
use crate::trajlog::{save_coreset, save_scores, Coreset, FileFormat, Method, ScoreTable, TrajectoryLog};

/// Label used for the full-data reference rows.
pub const FULL_DATA_LABEL: &str = "full";

#[derive(Debug, Clone)]
pub struct CompareConfig {
    pub methods: Vec<Method>,
    pub rates: Vec<f64>,
    pub tdds: TddsParams,
    pub baselines: BaselineParams,
    /// Used both for the logged full-data run and for every retrain; the seed
    /// field is replaced per run.
    pub train: TrainConfig,
    pub seeds: Vec<u64>,
    pub jobs: usize,
    pub format: FileFormat,
}

impl CompareConfig {
    pub fn validate(&self) -> Result<()> {
        if self.methods.is_empty() || self.rates.is_empty() || self.seeds.is_empty() {
            return Err(Error::param("need at least one method, rate and seed"));
        }
        if let Some(p) = self.rates.iter().find(|p| !(**p > 0.0 && **p < 1.0)) {
            return Err(Error::param(format!("pruning rate {p} outside (0, 1)")));
        }
        if self.methods.contains(&Method::Tdds) {
            self.tdds.validate()?;
            if self.tdds.epochs > self.train.epochs {
                return Err(Error::param(format!(
                    "scoring needs {} epochs, training runs {}",
                    self.tdds.epochs, self.train.epochs
                )));
            }
        }
        self.train.validate()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunRecord {
    /// A method name, or [`FULL_DATA_LABEL`] for the unpruned reference.
    pub method: String,
    pub rate: f64,
    pub seed: u64,
    pub outcome: std::result::Result<EvalReport, String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CellSummary {
    pub method: String,
    pub rate: f64,
    pub runs: usize,
    pub errors: usize,
    pub mean_accuracy: Option<f64>,
    /// Sample standard deviation (n − 1); absent with fewer than two runs.
    pub std_accuracy: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CompareReport {
    pub runs: Vec<RunRecord>,
    pub cells: Vec<CellSummary>,
}

impl CompareReport {
    pub fn error_count(&self) -> usize {
        self.runs.iter().filter(|r| r.outcome.is_err()).count()
    }

    pub fn cell(&self, method: &str, rate: f64) -> Option<&CellSummary> {
        self.cells.iter().find(|c| c.method == method && c.rate == rate)
    }

    pub fn write_runs_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "method,rate,seed,accuracy,mean_loss,status")?;
        for r in &self.runs {
            match &r.outcome {
                Ok(e) => writeln!(
                    w,
                    "{},{},{},{},{},ok",
                    r.method, r.rate, r.seed, e.accuracy, e.mean_loss
                )?,
                Err(msg) => writeln!(w, "{},{},{},,,error: {}", r.method, r.rate, r.seed, csv_safe(msg))?,
            }
        }
        Ok(())
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "method,rate,runs,errors,mean_accuracy,std_accuracy")?;
        for c in &self.cells {
            writeln!(
                w,
                "{},{},{},{},{},{}",
                c.method,
                c.rate,
                c.runs,
                c.errors,
                opt(c.mean_accuracy),
                opt(c.std_accuracy)
            )?;
        }
        Ok(())
    }

    /// Aligned table: one row per method, one column per pruning rate.
    pub fn to_text(&self) -> String {
        let mut rates: Vec<f64> = Vec::new();
        let mut methods: Vec<&str> = Vec::new();
        for c in &self.cells {
            if c.method != FULL_DATA_LABEL && !rates.contains(&c.rate) {
                rates.push(c.rate);
            }
            if !methods.contains(&c.method.as_str()) {
                methods.push(&c.method);
            }
        }
        let mut header = vec!["method".to_string()];
        header.extend(rates.iter().map(|p| format!("p={p}")));
        let mut rows = vec![header];
        for m in methods {
            let mut row = vec![m.to_string()];
            for &p in &rates {
                let cell = if m == FULL_DATA_LABEL {
                    self.cells.iter().find(|c| c.method == m)
                } else {
                    self.cell(m, p)
                };
                row.push(cell.map_or_else(|| "-".into(), format_cell));
            }
            rows.push(row);
        }
        let widths: Vec<usize> = (0..rows[0].len())
            .map(|j| rows.iter().map(|r| r[j].len()).max().unwrap_or(0))
            .collect();
        let mut out = String::new();
        for row in rows {
            let line: Vec<String> = row
                .iter()
                .zip(&widths)
                .enumerate()
                .map(|(j, (s, w))| if j == 0 { format!("{s:<w$}") } else { format!("{s:>w$}") })
                .collect();
            let _ = writeln!(out, "{}", line.join("  ").trim_end());
        }
        out
    }
}

fn format_cell(c: &CellSummary) -> String {
    let mut s = match (c.mean_accuracy, c.std_accuracy) {
        (Some(m), Some(sd)) => format!("{:.2} ± {:.2}", 100.0 * m, 100.0 * sd),
        (Some(m), None) => format!("{:.2}", 100.0 * m),
        _ => "error".into(),
    };
    if c.errors > 0 && c.mean_accuracy.is_some() {
        s.push_str(&format!(" ({} err)", c.errors));
    }
    s
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(String::new, |x| x.to_string())
}

fn csv_safe(msg: &str) -> String {
    msg.replace([',', '\n', '\r'], ";")
}

/// Output file layout under a comparison directory.
pub struct CompareLayout {
    root: PathBuf,
    ext: (&'static str, &'static str),
}

impl CompareLayout {
    pub fn new(root: impl Into<PathBuf>, format: FileFormat) -> Self {
        let ext = match format {
            FileFormat::Binary => ("tdsc", "tdcs"),
            FileFormat::Csv => ("csv", "csv"),
        };
        CompareLayout { root: root.into(), ext }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn log(&self, seed: u64) -> PathBuf {
        self.root.join("logs").join(format!("seed-{seed}.tdlg"))
    }

    pub fn scores(&self, method: Method, seed: u64) -> PathBuf {
        self.root
            .join("scores")
            .join(format!("{method}-seed-{seed}.{}", self.ext.0))
    }

    pub fn coreset(&self, method: Method, rate: f64, seed: u64) -> PathBuf {
        self.root
            .join("coresets")
            .join(format!("{method}-p{rate}-seed-{seed}.{}", self.ext.1))
    }

    pub fn runs_csv(&self) -> PathBuf {
        self.root.join("runs.csv")
    }

    pub fn table_csv(&self) -> PathBuf {
        self.root.join("table.csv")
    }

    pub fn table_txt(&self) -> PathBuf {
        self.root.join("table.txt")
    }

    fn create_dirs(&self) -> Result<()> {
        for sub in ["logs", "scores", "coresets"] {
            std::fs::create_dir_all(self.root.join(sub))?;
        }
        Ok(())
    }
}

type Stage<T> = std::result::Result<T, String>;

/// Runs the grid. Per-run failures are recorded in the report rather than
/// aborting; only configuration and output errors are returned as `Err`.
pub fn run_compare(
    train: &Dataset,
    test: &Dataset,
    config: &CompareConfig,
    output: Option<&CompareLayout>,
) -> Result<CompareReport> {
    config.validate()?;
    train.validate()?;
    test.validate()?;
    if train.n_features != test.n_features || train.n_classes != test.n_classes {
        return Err(Error::shape("train and test sets differ in dimensions"));
    }
    if let Some(layout) = output {
        layout.create_dirs()?;
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(config.jobs)
        .build()
        .map_err(|e| Error::param(format!("thread pool: {e}")))?;
    pool.install(|| run_grid(train, test, config, output))
}

fn run_grid(
    train: &Dataset,
    test: &Dataset,
    config: &CompareConfig,
    output: Option<&CompareLayout>,
) -> Result<CompareReport> {
    let seeded = |seed: u64| TrainConfig {
        seed,
        ..config.train.clone()
    };

    let full: Vec<Stage<(TrajectoryLog, EvalReport)>> = config
        .seeds
        .par_iter()
        .map(|&seed| {
            log::info!("seed {seed}: training on all {} samples", train.len());
            let (model, log) = train_epochs(train, &seeded(seed), true).map_err(|e| e.to_string())?;
            let eval = evaluate(&model, test).map_err(|e| e.to_string())?;
            Ok((log.expect("logging was requested"), eval))
        })
        .collect();
    if let Some(layout) = output {
        for (seed, run) in config.seeds.iter().zip(&full) {
            if let Ok((log, _)) = run {
                log.save(layout.log(*seed))?;
            }
        }
    }

    let score_jobs: Vec<(Method, usize)> = config
        .methods
        .iter()
        .flat_map(|&m| (0..config.seeds.len()).map(move |s| (m, s)))
        .collect();
    let scores: Vec<Stage<ScoreTable>> = score_jobs
        .par_iter()
        .map(|&(method, s)| {
            let (log, _) = full[s]
                .as_ref()
                .map_err(|e| format!("full-data training failed: {e}"))?;
            score_one(log, method, config, config.seeds[s]).map_err(|e| e.to_string())
        })
        .collect();
    if let Some(layout) = output {
        for (&(method, s), table) in score_jobs.iter().zip(&scores) {
            if let Ok(table) = table {
                save_scores(table, layout.scores(method, config.seeds[s]), config.format)?;
            }
        }
    }

    let n_rates = config.rates.len();
    let n_seeds = config.seeds.len();
    let cells: Vec<(usize, usize, usize)> = (0..config.methods.len())
        .flat_map(|m| (0..n_rates).flat_map(move |r| (0..n_seeds).map(move |s| (m, r, s))))
        .collect();
    let retrained: Vec<(Option<Coreset>, Stage<EvalReport>)> = cells
        .par_iter()
        .map(|&(m, r, s)| {
            let method = config.methods[m];
            let table = match &scores[m * n_seeds + s] {
                Ok(t) => t,
                Err(e) => return (None, Err(e.clone())),
            };
            let coreset = match select_top_m(table, config.rates[r]) {
                Ok(c) => c,
                Err(e) => return (None, Err(e.to_string())),
            };
            let weighting = if method == Method::Tdds {
                config.train.weighting
            } else {
                Weighting::None
            };
            let cfg = TrainConfig {
                weighting,
                ..seeded(config.seeds[s])
            };
            log::debug!(
                "{method} p={} seed {}: retraining on {} samples",
                config.rates[r],
                config.seeds[s],
                coreset.indices.len()
            );
            let eval = weighted_retrain(train, &coreset, &cfg)
                .and_then(|model| evaluate(&model, test))
                .map_err(|e| e.to_string());
            (Some(coreset), eval)
        })
        .collect();
    if let Some(layout) = output {
        for (&(m, r, s), (coreset, _)) in cells.iter().zip(&retrained) {
            if let Some(c) = coreset {
                save_coreset(
                    c,
                    layout.coreset(config.methods[m], config.rates[r], config.seeds[s]),
                    config.format,
                )?;
            }
        }
    }

    let mut runs = Vec::new();
    for (seed, run) in config.seeds.iter().zip(&full) {
        runs.push(RunRecord {
            method: FULL_DATA_LABEL.into(),
            rate: 0.0,
            seed: *seed,
            outcome: run.as_ref().map(|(_, e)| *e).map_err(Clone::clone),
        });
    }
    for (&(m, r, s), (_, eval)) in cells.iter().zip(retrained) {
        if let Err(e) = &eval {
            log::warn!(
                "{} p={} seed {}: {e}",
                config.methods[m],
                config.rates[r],
                config.seeds[s]
            );
        }
        runs.push(RunRecord {
            method: config.methods[m].to_string(),
            rate: config.rates[r],
            seed: config.seeds[s],
            outcome: eval,
        });
    }
    let report = CompareReport {
        cells: summarize(&runs),
        runs,
    };
    if let Some(layout) = output {
        report.write_runs_csv(std::fs::File::create(layout.runs_csv())?)?;
        report.write_csv(std::fs::File::create(layout.table_csv())?)?;
        std::fs::write(layout.table_txt(), report.to_text())?;
    }
    Ok(report)
}

fn score_one(log: &TrajectoryLog, method: Method, config: &CompareConfig, seed: u64) -> Result<ScoreTable> {
    match method {
        Method::Tdds => tdds_scores(log, &config.tdds),
        other => baseline_scores(
            log,
            other,
            &BaselineParams {
                seed,
                ..config.baselines
            },
        ),
    }
}

/// Groups runs by (method, rate) in first-appearance order.
pub fn summarize(runs: &[RunRecord]) -> Vec<CellSummary> {
    let mut keys: Vec<(String, f64)> = Vec::new();
    for r in runs {
        if !keys.iter().any(|(m, p)| *m == r.method && *p == r.rate) {
            keys.push((r.method.clone(), r.rate));
        }
    }
    keys.into_iter()
        .map(|(method, rate)| {
            let group: Vec<&RunRecord> = runs.iter().filter(|r| r.method == method && r.rate == rate).collect();
            let accs: Vec<f64> = group
                .iter()
                .filter_map(|r| r.outcome.as_ref().ok())
                .map(|e| e.accuracy)
                .collect();
            let (mean, std) = mean_std(&accs);
            CellSummary {
                method,
                rate,
                runs: group.len(),
                errors: group.len() - accs.len(),
                mean_accuracy: mean,
                std_accuracy: std,
            }
        })
        .collect()
}

fn mean_std(xs: &[f64]) -> (Option<f64>, Option<f64>) {
    if xs.is_empty() {
        return (None, None);
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (Some(mean), None);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (Some(mean), Some(var.sqrt()))
}
