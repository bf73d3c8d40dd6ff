//! Long-format CSV export of sweep traces for external plotting tools.

use std::fmt::Write as _;
use std::path::Path;

use crate::config::AggregateSettings;
use crate::stats::bootstrap_ci;
use crate::sweep::{cell_dirs, dir_settings, load_cell_runs, run_seed, RunTrace};
use crate::HarnessError;

/// What to export: which metric columns, which cells (default all), and
/// whether to collapse seeds into mean-and-CI rows.
#[derive(Debug, Clone)]
pub struct SeriesSpec {
    pub metrics: Vec<String>,
    pub cells: Option<Vec<String>>,
    pub aggregated: bool,
}

fn metric_column<'a>(run: &'a RunTrace, metric: &str) -> Result<&'a [f64], HarnessError> {
    run.header
        .iter()
        .position(|h| h == metric)
        .and_then(|k| k.checked_sub(1))
        .map(|k| run.columns[k].as_slice())
        .ok_or_else(|| {
            HarnessError::Config(format!(
                "metric '{metric}' not in columns {:?}",
                &run.header[1..]
            ))
        })
}

/// Emits tidy rows over the sweep directory, ordered by cell, then metric,
/// then seed, then step; aggregated mode drops the seed axis and adds CI
/// columns. The order is deterministic across reruns.
pub fn emit_plot_data(dir: &Path, spec: &SeriesSpec) -> Result<String, HarnessError> {
    if spec.metrics.is_empty() {
        return Err(HarnessError::Config("no metrics requested".into()));
    }
    let (master_seed, settings) = dir_settings(dir)?;
    let all_cells = cell_dirs(dir)?;
    let selected: Vec<(String, std::path::PathBuf)> = match &spec.cells {
        None => all_cells,
        Some(wanted) => {
            let mut picked = Vec::new();
            for name in wanted {
                let hit = all_cells.iter().find(|(cell, _)| cell == name).cloned();
                picked.push(hit.ok_or_else(|| HarnessError::MissingCell(name.clone()))?);
            }
            picked
        }
    };

    let mut out = String::new();
    if spec.aggregated {
        out.push_str("cell,step,metric,mean,ci_lower,ci_upper\n");
    } else {
        out.push_str("cell,seed,step,metric,value\n");
    }
    let mut any = false;
    for (cell, cell_dir) in &selected {
        let runs = load_cell_runs(cell_dir)?;
        if runs.is_empty() {
            continue;
        }
        any = true;
        for metric in &spec.metrics {
            if spec.aggregated {
                emit_aggregated(&mut out, cell, metric, &runs, &settings, master_seed)?;
            } else {
                for run in &runs {
                    let column = metric_column(run, metric)?;
                    for (i, &step) in run.steps.iter().enumerate() {
                        writeln!(out, "{cell},{},{step},{metric},{}", run.seed, column[i])
                            .expect("string write");
                    }
                }
            }
        }
    }
    if !any {
        return Err(HarnessError::Config(format!("no run data under {}", dir.display())));
    }
    Ok(out)
}

fn emit_aggregated(
    out: &mut String,
    cell: &str,
    metric: &str,
    runs: &[RunTrace],
    settings: &AggregateSettings,
    master_seed: u64,
) -> Result<(), HarnessError> {
    let columns: Vec<&[f64]> =
        runs.iter().map(|r| metric_column(r, metric)).collect::<Result<_, _>>()?;
    let mut at_step = vec![0.0; runs.len()];
    for (i, &step) in runs[0].steps.iter().enumerate() {
        for (j, col) in columns.iter().enumerate() {
            at_step[j] = col[i];
        }
        let m = at_step.iter().sum::<f64>() / at_step.len() as f64;
        let seed = run_seed(master_seed, &format!("plotdata:{cell}:{metric}"), i as u64);
        let (lo, hi) = bootstrap_ci(
            &at_step,
            crate::stats::Statistic::Mean,
            settings.resamples,
            settings.level,
            seed,
        )?;
        writeln!(out, "{cell},{step},{metric},{m},{lo},{hi}").expect("string write");
    }
    Ok(())
}
