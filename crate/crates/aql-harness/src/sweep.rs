//! Sweep execution, the completed-run manifest, and per-cell aggregation.
//!
//! Every run is fully determined by (config, listed seed): the run's master
//! seed is hashed from (sweep master seed, cell id, seed), so streams never
//! collide across cells and reruns are byte-identical. The manifest records
//! finished runs; rerunning a finished sweep executes nothing.

use std::collections::BTreeSet;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use aql_core::continuous::train_continuous;
use aql_core::mdp::build_chain_mdp;
use aql_core::seeding::derive_key;
use aql_core::tabular::train_tabular;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::{AggregateSettings, CellWork, SweepConfig};
use crate::stats::{bootstrap_ci, iqm, mean, Statistic};
use crate::HarnessError;

pub const MANIFEST_NAME: &str = "manifest.json";

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq, Eq)]
pub struct RunFailure {
    pub run: String,
    pub error: String,
}

#[derive(Debug, Serialize, Deserialize)]
struct Manifest {
    config_digest: String,
    master_seed: u64,
    aggregate: AggregateSettings,
    completed: Vec<String>,
    failed: Vec<RunFailure>,
}

#[derive(Debug)]
pub struct SweepOutcome {
    pub executed: usize,
    pub skipped: usize,
    pub failures: Vec<RunFailure>,
    pub reports: Vec<AggregateReport>,
}

/// Per-cell summary over seeds: scalar stats of the final logged value of
/// the cell's headline metric, plus per-step aggregated traces.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AggregateReport {
    pub cell: String,
    /// First column after `step` in the run CSVs.
    pub metric: String,
    pub n_seeds: usize,
    pub statistic: Statistic,
    pub level: f64,
    pub final_point: f64,
    pub final_mean: f64,
    pub final_iqm: f64,
    pub final_ci_lower: f64,
    pub final_ci_upper: f64,
    pub steps: Vec<u64>,
    /// Selected statistic across seeds at each logged step.
    pub trace_point: Vec<f64>,
    pub trace_ci_lower: Vec<f64>,
    pub trace_ci_upper: Vec<f64>,
}

fn io_err(path: &Path, source: io::Error) -> HarnessError {
    HarnessError::Io { path: path.display().to_string(), source }
}

pub fn config_digest(text: &str) -> String {
    let mut h = Sha256::new();
    h.update(text.as_bytes());
    let out = h.finalize();
    out.iter().map(|b| format!("{b:02x}")).collect()
}

/// Master seed for one run, hashed so distinct cells can never share the
/// trainer's derived streams even when the listed seed is equal.
pub fn run_seed(master_seed: u64, cell_id: &str, seed: u64) -> u64 {
    let key = derive_key(master_seed, cell_id, seed);
    u64::from_le_bytes(key[..8].try_into().expect("8-byte prefix"))
}

fn run_id(cell: &str, seed: u64) -> String {
    format!("{cell}/seed_{seed}")
}

struct RunTask {
    cell_id: String,
    seed: u64,
    work: CellWork,
}

impl RunTask {
    /// Executes one run and returns the trace CSV.
    fn execute(&self, master_seed: u64) -> Result<String, String> {
        let seed = run_seed(master_seed, &self.cell_id, self.seed);
        match &self.work {
            CellWork::Tabular { chain, rule, noise, run } => {
                let mdp = build_chain_mdp(*chain);
                let mut cfg = *run;
                cfg.seed = seed;
                let (_, trace) = train_tabular(&mdp, rule, *noise, &cfg);
                Ok(trace.to_csv())
            }
            CellWork::Continuous { env, agent } => {
                let mut cfg = agent.clone();
                cfg.seed = seed;
                let out = train_continuous(env, &cfg).map_err(|e| e.to_string())?;
                Ok(out.trace.to_csv())
            }
        }
    }
}

fn load_manifest(dir: &Path) -> Result<Option<Manifest>, HarnessError> {
    let path = dir.join(MANIFEST_NAME);
    if !path.exists() {
        return Ok(None);
    }
    let text = fs::read_to_string(&path).map_err(|e| io_err(&path, e))?;
    let manifest = serde_json::from_str(&text)
        .map_err(|e| HarnessError::Config(format!("corrupt {}: {e}", path.display())))?;
    Ok(Some(manifest))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), HarnessError> {
    let mut text = serde_json::to_string_pretty(value)
        .map_err(|e| HarnessError::Config(format!("serialize {}: {e}", path.display())))?;
    text.push('\n');
    fs::write(path, text).map_err(|e| io_err(path, e))
}

/// Runs every (cell × seed) not yet recorded in the manifest, then refreshes
/// the per-cell aggregates. Failed runs are recorded and skipped over; the
/// caller decides the exit status from `failures`.
pub fn run_sweep(
    config_text: &str,
    out_dir: &Path,
    workers: usize,
    master_seed_override: Option<u64>,
) -> Result<SweepOutcome, HarnessError> {
    let config = SweepConfig::from_toml(config_text)?;
    let master_seed = master_seed_override.unwrap_or(config.master_seed);
    let digest = config_digest(config_text);

    fs::create_dir_all(out_dir).map_err(|e| io_err(out_dir, e))?;
    let mut completed: BTreeSet<String> = BTreeSet::new();
    if let Some(manifest) = load_manifest(out_dir)? {
        if manifest.config_digest != digest {
            return Err(HarnessError::Config(format!(
                "{} holds results for a different config (digest {} vs {}); use a fresh --out",
                out_dir.display(),
                manifest.config_digest,
                digest
            )));
        }
        if manifest.master_seed != master_seed {
            return Err(HarnessError::Config(format!(
                "{} was produced with master seed {}, not {}",
                out_dir.display(),
                manifest.master_seed,
                master_seed
            )));
        }
        completed.extend(manifest.completed);
    }

    let cells = config.cells()?;
    let mut tasks = Vec::new();
    let mut skipped = 0usize;
    for cell in &cells {
        let cell_dir = out_dir.join(&cell.id);
        fs::create_dir_all(&cell_dir).map_err(|e| io_err(&cell_dir, e))?;
        for &seed in &config.seeds {
            if completed.contains(&run_id(&cell.id, seed)) {
                skipped += 1;
            } else {
                tasks.push(RunTask { cell_id: cell.id.clone(), seed, work: cell.work.clone() });
            }
        }
    }

    let run_all = |tasks: &[RunTask]| -> Vec<(String, u64, Result<String, String>)> {
        tasks
            .par_iter()
            .map(|t| (t.cell_id.clone(), t.seed, t.execute(master_seed)))
            .collect()
    };
    let results = if workers == 0 {
        run_all(&tasks)
    } else {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(workers)
            .build()
            .map_err(|e| HarnessError::Config(format!("worker pool: {e}")))?;
        pool.install(|| run_all(&tasks))
    };

    let mut failures = Vec::new();
    for (cell_id, seed, result) in results {
        let id = run_id(&cell_id, seed);
        match result {
            Ok(csv) => {
                let path = out_dir.join(&cell_id).join(format!("seed_{seed}.csv"));
                fs::write(&path, csv).map_err(|e| io_err(&path, e))?;
                completed.insert(id);
            }
            Err(error) => failures.push(RunFailure { run: id, error }),
        }
    }
    failures.sort_by(|a, b| a.run.cmp(&b.run));

    let manifest = Manifest {
        config_digest: digest,
        master_seed,
        aggregate: config.aggregate,
        completed: completed.iter().cloned().collect(),
        failed: failures.clone(),
    };
    write_json(&out_dir.join(MANIFEST_NAME), &manifest)?;

    // Aggregation is a pure post-pass; with zero finished runs there is
    // nothing to summarize and the failure list already tells the story.
    let reports = if completed.is_empty() { Vec::new() } else { aggregate_dir(out_dir)? };
    let executed = tasks.len() - failures.len();
    Ok(SweepOutcome { executed, skipped, failures, reports })
}

/// One parsed run CSV.
pub(crate) struct RunTrace {
    pub seed: u64,
    pub header: Vec<String>,
    pub steps: Vec<u64>,
    /// `columns[k]` holds the column named `header[k + 1]`.
    pub columns: Vec<Vec<f64>>,
}

fn parse_trace_csv(path: &Path, seed: u64) -> Result<RunTrace, HarnessError> {
    let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    let bad = |msg: String| HarnessError::Config(format!("{}: {msg}", path.display()));
    let mut lines = text.lines();
    let header: Vec<String> = lines
        .next()
        .ok_or_else(|| bad("empty file".into()))?
        .split(',')
        .map(str::to_owned)
        .collect();
    if header.first().map(String::as_str) != Some("step") || header.len() < 2 {
        return Err(bad(format!("unexpected header {header:?}")));
    }
    let mut steps = Vec::new();
    let mut columns = vec![Vec::new(); header.len() - 1];
    for (lineno, line) in lines.enumerate() {
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != header.len() {
            return Err(bad(format!("row {} has {} fields", lineno + 2, fields.len())));
        }
        steps.push(
            fields[0].parse::<u64>().map_err(|e| bad(format!("row {}: {e}", lineno + 2)))?,
        );
        for (k, field) in fields[1..].iter().enumerate() {
            columns[k].push(
                field.parse::<f64>().map_err(|e| bad(format!("row {}: {e}", lineno + 2)))?,
            );
        }
    }
    Ok(RunTrace { seed, header, steps, columns })
}

/// Loads a cell's runs sorted by seed, checking that headers and logged
/// steps agree across seeds.
pub(crate) fn load_cell_runs(cell_dir: &Path) -> Result<Vec<RunTrace>, HarnessError> {
    let mut found = Vec::new();
    let entries = fs::read_dir(cell_dir).map_err(|e| io_err(cell_dir, e))?;
    for entry in entries {
        let entry = entry.map_err(|e| io_err(cell_dir, e))?;
        let name = entry.file_name().to_string_lossy().into_owned();
        if let Some(seed) = name
            .strip_prefix("seed_")
            .and_then(|rest| rest.strip_suffix(".csv"))
            .and_then(|digits| digits.parse::<u64>().ok())
        {
            found.push((seed, entry.path()));
        }
    }
    found.sort_by_key(|(seed, _)| *seed);
    let mut runs = Vec::new();
    for (seed, path) in found {
        let run = parse_trace_csv(&path, seed)?;
        if let Some(first) = runs.first() {
            let first: &RunTrace = first;
            if run.header != first.header || run.steps != first.steps {
                return Err(HarnessError::Config(format!(
                    "{} disagrees with seed_{} on header or logged steps",
                    path.display(),
                    first.seed
                )));
            }
        }
        runs.push(run);
    }
    Ok(runs)
}

pub(crate) fn cell_dirs(dir: &Path) -> Result<Vec<(String, PathBuf)>, HarnessError> {
    let mut cells = Vec::new();
    let entries = fs::read_dir(dir).map_err(|e| io_err(dir, e))?;
    for entry in entries {
        let entry = entry.map_err(|e| io_err(dir, e))?;
        let path = entry.path();
        if path.is_dir() {
            cells.push((entry.file_name().to_string_lossy().into_owned(), path));
        }
    }
    cells.sort();
    Ok(cells)
}

/// Effective aggregation settings for a sweep directory: whatever the
/// manifest recorded, or the defaults when aggregating foreign data.
pub(crate) fn dir_settings(dir: &Path) -> Result<(u64, AggregateSettings), HarnessError> {
    Ok(match load_manifest(dir)? {
        Some(m) => (m.master_seed, m.aggregate),
        None => (0, AggregateSettings::default()),
    })
}

fn aggregate_cell(
    cell: &str,
    runs: &[RunTrace],
    settings: &AggregateSettings,
    master_seed: u64,
) -> Result<AggregateReport, HarnessError> {
    let metric = runs[0].header[1].clone();
    let finals: Vec<f64> = runs.iter().map(|r| *r.columns[0].last().expect("nonempty")).collect();
    let ci_seed = |label: &str, index: u64| {
        run_seed(master_seed, &format!("aggregate:{cell}:{label}"), index)
    };
    let (final_ci_lower, final_ci_upper) = bootstrap_ci(
        &finals,
        settings.statistic,
        settings.resamples,
        settings.level,
        ci_seed("final", 0),
    )?;
    let n_steps = runs[0].steps.len();
    let mut trace_point = Vec::with_capacity(n_steps);
    let mut trace_ci_lower = Vec::with_capacity(n_steps);
    let mut trace_ci_upper = Vec::with_capacity(n_steps);
    let mut at_step = vec![0.0; runs.len()];
    for i in 0..n_steps {
        for (j, run) in runs.iter().enumerate() {
            at_step[j] = run.columns[0][i];
        }
        trace_point.push(settings.statistic.apply(&at_step)?);
        let (lo, hi) = bootstrap_ci(
            &at_step,
            settings.statistic,
            settings.resamples,
            settings.level,
            ci_seed("trace", i as u64),
        )?;
        trace_ci_lower.push(lo);
        trace_ci_upper.push(hi);
    }
    Ok(AggregateReport {
        cell: cell.to_owned(),
        metric,
        n_seeds: runs.len(),
        statistic: settings.statistic,
        level: settings.level,
        final_point: settings.statistic.apply(&finals)?,
        final_mean: mean(&finals)?,
        final_iqm: iqm(&finals)?,
        final_ci_lower,
        final_ci_upper,
        steps: runs[0].steps.clone(),
        trace_point,
        trace_ci_lower,
        trace_ci_upper,
    })
}

/// Recomputes and rewrites `aggregate.json` for every cell under `dir`.
pub fn aggregate_dir(dir: &Path) -> Result<Vec<AggregateReport>, HarnessError> {
    let (master_seed, settings) = dir_settings(dir)?;
    let mut reports = Vec::new();
    for (cell, cell_dir) in cell_dirs(dir)? {
        let runs = load_cell_runs(&cell_dir)?;
        if runs.is_empty() {
            continue;
        }
        let report = aggregate_cell(&cell, &runs, &settings, master_seed)?;
        write_json(&cell_dir.join("aggregate.json"), &report)?;
        reports.push(report);
    }
    if reports.is_empty() {
        return Err(HarnessError::Config(format!(
            "no run data under {}",
            dir.display()
        )));
    }
    Ok(reports)
}
