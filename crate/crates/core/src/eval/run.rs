use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;
use std::time::Instant;

use rayon::prelude::*;
use serde::Serialize;

use super::config::{FilterKind, RunConfig};
use super::{credible_interval, rmse};
use crate::error::{Error, Result};
use crate::filter::{BsFilter, FilterOutput, ParticleFilter, PlFilter};
use crate::graph::{GeoPoint, RoadGraph};
use crate::search::SearchStats;
use crate::sim::{simulate_seeded, SimRecord};

pub const METRIC_HEADER: [&str; 11] = [
    "seed",
    "step",
    "filter",
    "particles",
    "rmse",
    "pi_g_lo",
    "pi_g_median",
    "pi_g_hi",
    "pi_r_lo",
    "pi_r_median",
    "pi_r_hi",
];

/// Accuracy and learned-parameter summary for one filter at one step.
#[derive(Clone, Debug, PartialEq)]
pub struct MetricRow {
    pub seed: u64,
    pub step: usize,
    pub filter: FilterKind,
    pub particles: usize,
    pub rmse: f64,
    /// `(2.5%, median, 97.5%)` of the particles' `π_g` samples.
    pub pi_g: Option<(f64, f64, f64)>,
    pub pi_r: Option<(f64, f64, f64)>,
}

/// One filter run on one trajectory.
#[derive(Clone, Debug)]
pub struct CellResult {
    pub seed: u64,
    pub filter: FilterKind,
    pub particles: usize,
    pub rows: Vec<MetricRow>,
    pub seconds: f64,
    pub search: Option<SearchStats>,
}

impl CellResult {
    /// Mean over steps of `ln(rmse)`.
    pub fn mean_log_rmse(&self) -> f64 {
        self.rows
            .iter()
            .map(|r| r.rmse.max(f64::MIN_POSITIVE).ln())
            .sum::<f64>()
            / self.rows.len() as f64
    }
}

/// Seed of a filter's random streams, distinct per trajectory, filter and size.
fn filter_seed(seed: u64, kind: FilterKind, particles: usize) -> u64 {
    let tag = match kind {
        FilterKind::Pl => 1,
        FilterKind::Bs => 2,
    };
    seed.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ ((particles as u64) << 8 | tag)
}

/// Runs one filter over a sequence of observations. Returns the output,
/// the elapsed wall-clock seconds and, for PL, path-search cache counters.
pub fn run_filter(
    graph: &RoadGraph,
    cfg: &RunConfig,
    kind: FilterKind,
    particles: usize,
    seed: u64,
    observations: &[GeoPoint],
) -> Result<(FilterOutput, f64, Option<SearchStats>)> {
    let fcfg = cfg.filter_config(particles, filter_seed(seed, kind, particles));
    let started = Instant::now();
    match kind {
        FilterKind::Pl => {
            let mut f = PlFilter::new(graph, fcfg)?;
            let out = f.run(observations)?;
            Ok((out, started.elapsed().as_secs_f64(), Some(f.search_stats())))
        }
        FilterKind::Bs => {
            let mut f = BsFilter::new(graph, fcfg, cfg.truth)?;
            let out = f.run(observations)?;
            Ok((out, started.elapsed().as_secs_f64(), None))
        }
    }
}

fn metric_rows(
    seed: u64,
    kind: FilterKind,
    particles: usize,
    out: &FilterOutput,
    truth: &[SimRecord],
) -> Result<Vec<MetricRow>> {
    out.steps
        .iter()
        .zip(truth)
        .map(|(s, t)| {
            let interval = |f: fn(&crate::transition::TransitionParams) -> f64| -> Result<Option<(f64, f64, f64)>> {
                match s.params.len() {
                    0 => Ok(None),
                    1 => {
                        let v = f(&s.params[0]);
                        Ok(Some((v, v, v)))
                    }
                    _ => credible_interval(&s.params.iter().map(f).collect::<Vec<_>>(), 0.95).map(Some),
                }
            };
            Ok(MetricRow {
                seed,
                step: s.step,
                filter: kind,
                particles,
                rmse: rmse(&s.estimates, &s.weights, &t.ground),
                pi_g: interval(|p| p.pi_g)?,
                pi_r: interval(|p| p.pi_r)?,
            })
        })
        .collect()
}

/// Runs every configured (filter, particle count) on one simulated trajectory.
pub fn evaluate_trajectory(
    graph: &RoadGraph,
    cfg: &RunConfig,
    seed: u64,
    records: &[SimRecord],
) -> Result<Vec<CellResult>> {
    let observations: Vec<GeoPoint> = records.iter().map(|r| r.observation).collect();
    let cells: Vec<(FilterKind, usize)> = cfg
        .filters
        .iter()
        .flat_map(|&k| cfg.particles.iter().map(move |&n| (k, n)))
        .collect();
    let run_cell = |&(kind, particles): &(FilterKind, usize)| -> Result<CellResult> {
        let (out, seconds, search) = run_filter(graph, cfg, kind, particles, seed, &observations)?;
        let rows = metric_rows(seed, kind, particles, &out, records)?;
        Ok(CellResult {
            seed,
            filter: kind,
            particles,
            rows,
            seconds,
            search,
        })
    };
    if cfg.workers == 1 {
        cells.iter().map(run_cell).collect()
    } else {
        cells.par_iter().map(run_cell).collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SummaryCell {
    pub filter: FilterKind,
    pub particles: usize,
    /// Mean over replicates of the per-trajectory mean log-RMSE.
    pub mean_log_rmse: f64,
    pub log_rmse_by_seed: Vec<f64>,
    pub seconds: f64,
    pub cache_hit_rate: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RunSummary {
    pub cells: Vec<SummaryCell>,
}

impl RunSummary {
    pub fn from_cells(cells: &[CellResult]) -> Self {
        let mut grouped: BTreeMap<(FilterKind, usize), Vec<&CellResult>> = BTreeMap::new();
        for c in cells {
            grouped.entry((c.filter, c.particles)).or_default().push(c);
        }
        let cells = grouped
            .into_iter()
            .map(|((filter, particles), group)| {
                let log_rmse_by_seed: Vec<f64> = group.iter().map(|c| c.mean_log_rmse()).collect();
                let search = group.iter().filter_map(|c| c.search).fold(
                    None,
                    |acc: Option<SearchStats>, s| {
                        let a = acc.unwrap_or_default();
                        Some(SearchStats {
                            hits: a.hits + s.hits,
                            misses: a.misses + s.misses,
                        })
                    },
                );
                SummaryCell {
                    filter,
                    particles,
                    mean_log_rmse: log_rmse_by_seed.iter().sum::<f64>()
                        / log_rmse_by_seed.len() as f64,
                    log_rmse_by_seed,
                    seconds: group.iter().map(|c| c.seconds).sum(),
                    cache_hit_rate: search.map(|s| s.hit_rate()),
                }
            })
            .collect();
        Self { cells }
    }

    pub fn cell(&self, filter: FilterKind, particles: usize) -> Option<&SummaryCell> {
        self.cells
            .iter()
            .find(|c| c.filter == filter && c.particles == particles)
    }
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// Per-step metrics as CSV. Contains no timing, so identical inputs give
/// identical bytes.
pub fn write_metrics<W: Write>(cells: &[CellResult], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(METRIC_HEADER)?;
    for row in cells.iter().flat_map(|c| &c.rows) {
        w.write_record([
            row.seed.to_string(),
            row.step.to_string(),
            row.filter.to_string(),
            row.particles.to_string(),
            row.rmse.to_string(),
            opt(row.pi_g.map(|c| c.0)),
            opt(row.pi_g.map(|c| c.1)),
            opt(row.pi_g.map(|c| c.2)),
            opt(row.pi_r.map(|c| c.0)),
            opt(row.pi_r.map(|c| c.1)),
            opt(row.pi_r.map(|c| c.2)),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Wall-clock time per cell as CSV.
pub fn write_timings<W: Write>(cells: &[CellResult], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["seed", "filter", "particles", "seconds", "seconds_per_step"])?;
    for c in cells {
        w.write_record([
            c.seed.to_string(),
            c.filter.to_string(),
            c.particles.to_string(),
            format!("{:.6}", c.seconds),
            format!("{:.6e}", c.seconds / c.rows.len().max(1) as f64),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_summary<W: Write>(summary: &RunSummary, mut writer: W) -> Result<()> {
    serde_json::to_writer_pretty(&mut writer, summary)?;
    writeln!(writer)?;
    Ok(())
}

/// Writes through a temporary file in the same directory, then renames.
fn write_atomically(path: &Path, fill: impl FnOnce(&mut Vec<u8>) -> Result<()>) -> Result<()> {
    let mut buf = Vec::new();
    fill(&mut buf)?;
    let tmp = path.with_extension("tmp");
    std::fs::write(&tmp, &buf)?;
    std::fs::rename(&tmp, path)?;
    Ok(())
}

/// Simulates each replicate, runs every configured filter on it and writes
/// `metrics.csv`, `timing.csv` and `summary.json` to the output directory.
pub fn run(cfg: &RunConfig) -> Result<RunSummary> {
    cfg.validate()?;
    let graph = cfg.graph.load()?;
    let cells = run_cells(&graph, cfg)?;
    let summary = RunSummary::from_cells(&cells);
    std::fs::create_dir_all(&cfg.output)?;
    write_atomically(&cfg.output.join("metrics.csv"), |b| {
        write_metrics(&cells, b)
    })?;
    write_atomically(&cfg.output.join("timing.csv"), |b| write_timings(&cells, b))?;
    write_atomically(&cfg.output.join("summary.json"), |b| {
        write_summary(&summary, b)
    })?;
    Ok(summary)
}

/// All cells of a run, in (replicate, filter, particle count) order.
pub fn run_cells(graph: &RoadGraph, cfg: &RunConfig) -> Result<Vec<CellResult>> {
    let seeds: Vec<u64> = cfg.replicate_seeds().collect();
    let per_seed = |&seed: &u64| -> Result<Vec<CellResult>> {
        let records = simulate_seeded(graph, &cfg.sim_config(seed))?;
        log::info!("simulated trajectory {seed} ({} steps)", records.len());
        evaluate_trajectory(graph, cfg, seed, &records)
    };
    let nested: Vec<Vec<CellResult>> = if cfg.workers == 1 {
        seeds.iter().map(per_seed).collect::<Result<_>>()?
    } else {
        seeds.par_iter().map(per_seed).collect::<Result<_>>()?
    };
    let cells: Vec<CellResult> = nested.into_iter().flatten().collect();
    if cells.is_empty() {
        return Err(Error::Config("run produced no results".into()));
    }
    Ok(cells)
}
