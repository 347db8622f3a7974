//! Parameter sweeps. A sweep file is an ordinary run configuration plus a
//! `[sweep]` section of lists; every combination is one cell:
//!
//! ```toml
//! [sweep]
//! d = [3]
//! m = [1]
//! gamma = [2.0, 2.25, 2.5]   # sets kernel.gamma; kernel.kind defaults to power_tail
//! mass = [0.5]
//!
//! [kernel]
//! scale = 1.0
//!
//! [output]
//! directory = "sweep_out"
//! ```
//!
//! Lists left out fall back to the base `[params]`/`[kernel]` values. Cell `i`
//! writes into `<directory>/cell_<i>` and the aggregated `rates.csv` goes to
//! `<directory>`.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use aggdiff_core::kernels::OperatorCache;
use rayon::prelude::*;
use serde::Deserialize;

use crate::config::{apply_override, parse_fraction, RunConfig};
use crate::error::{AppError, Result};
use crate::output::{rates_csv, write_file, RatesRow};
use crate::runner::run_to_dir;

/// Environment variable with the number of concurrent cells.
pub const WORKERS_ENV: &str = "AGGDIFF_WORKERS";

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct SweepLists {
    #[serde(default)]
    d: Vec<usize>,
    #[serde(default)]
    m: Vec<toml::Value>,
    #[serde(default)]
    gamma: Vec<f64>,
    #[serde(default)]
    mass: Vec<f64>,
}

/// One cell: its overrides and, if they make a valid configuration, the config.
#[derive(Debug, Clone)]
pub struct SweepCell {
    pub index: usize,
    pub d: Option<usize>,
    pub m: Option<f64>,
    pub gamma: Option<f64>,
    pub mass: Option<f64>,
    pub config: std::result::Result<RunConfig, String>,
}

impl SweepCell {
    pub fn directory(root: &Path, index: usize) -> PathBuf {
        root.join(format!("cell_{index:04}"))
    }
}

#[derive(Debug, Clone)]
pub struct SweepPlan {
    pub root: PathBuf,
    pub cells: Vec<SweepCell>,
}

fn axis<T: Copy>(values: &[T]) -> Vec<Option<T>> {
    if values.is_empty() {
        vec![None]
    } else {
        values.iter().copied().map(Some).collect()
    }
}

fn get_f64(table: &toml::Table, section: &str, key: &str) -> Option<f64> {
    let v = table.get(section)?.get(key)?;
    v.as_float().or_else(|| v.as_integer().map(|i| i as f64)).or_else(|| v.as_str().and_then(parse_fraction))
}

impl SweepPlan {
    pub fn parse(text: &str, overrides: &[String]) -> Result<Self> {
        let mut table: toml::Table = text.parse().map_err(|e: toml::de::Error| AppError::config(e.to_string()))?;
        for o in overrides {
            apply_override(&mut table, o)?;
        }
        let lists: SweepLists = match table.remove("sweep") {
            Some(v) => v.try_into().map_err(|e: toml::de::Error| AppError::config(format!("sweep: {e}")))?,
            None => return Err(AppError::config("missing [sweep] section")),
        };
        let ms: Vec<f64> = lists
            .m
            .iter()
            .map(|v| {
                v.as_float()
                    .or_else(|| v.as_integer().map(|i| i as f64))
                    .or_else(|| v.as_str().and_then(parse_fraction))
                    .ok_or_else(|| AppError::config(format!("sweep.m entry {v} is not a number or fraction")))
            })
            .collect::<Result<_>>()?;
        if !lists.gamma.is_empty() {
            let kernel = table.entry("kernel").or_insert_with(|| toml::Value::Table(toml::Table::new()));
            if let Some(k) = kernel.as_table_mut() {
                k.entry("kind").or_insert_with(|| toml::Value::String(String::from("power_tail")));
            }
        }
        let root = table
            .get("output")
            .and_then(|o| o.get("directory"))
            .and_then(|d| d.as_str())
            .map(PathBuf::from)
            .unwrap_or_else(|| PathBuf::from("out"));

        let mut cells = Vec::new();
        for d in axis(&lists.d) {
            for m in axis(&ms) {
                for gamma in axis(&lists.gamma) {
                    for mass in axis(&lists.mass) {
                        let index = cells.len();
                        let mut t = table.clone();
                        let mut set = |key: &str, value: toml::Value| {
                            let (section, name) = key.split_once('.').expect("dotted key");
                            let s = t.entry(section).or_insert_with(|| toml::Value::Table(toml::Table::new()));
                            if let Some(s) = s.as_table_mut() {
                                s.insert(name.to_string(), value);
                            }
                        };
                        if let Some(d) = d {
                            set("params.d", toml::Value::Integer(d as i64));
                        }
                        if let Some(m) = m {
                            set("params.m", toml::Value::Float(m));
                        }
                        if let Some(g) = gamma {
                            set("kernel.gamma", toml::Value::Float(g));
                        }
                        if let Some(x) = mass {
                            set("params.mass", toml::Value::Float(x));
                        }
                        let dir = SweepCell::directory(&root, index);
                        set("output.directory", toml::Value::String(dir.to_string_lossy().into_owned()));
                        let config: std::result::Result<RunConfig, String> =
                            t.clone().try_into().map_err(|e: toml::de::Error| format!("config error: {e}"));
                        cells.push(SweepCell {
                            index,
                            d: d.or_else(|| get_f64(&t, "params", "d").map(|x| x as usize)),
                            m: m.or_else(|| get_f64(&t, "params", "m")),
                            gamma: gamma.or_else(|| get_f64(&t, "kernel", "gamma")),
                            mass: mass.or_else(|| get_f64(&t, "params", "mass")),
                            config,
                        });
                    }
                }
            }
        }
        Ok(SweepPlan { root, cells })
    }

    pub fn load(path: &Path, overrides: &[String]) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| AppError::config(format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text, overrides).map_err(|e| match e {
            AppError::Config(msg) => AppError::config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }
}

/// Worker count: `AGGDIFF_WORKERS` if set and positive, otherwise the number
/// of available cores.
pub fn worker_count() -> Result<usize> {
    match std::env::var(WORKERS_ENV) {
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(n) if n > 0 => Ok(n),
            _ => Err(AppError::config(format!("{WORKERS_ENV}={v:?} is not a positive integer"))),
        },
        Err(_) => Ok(std::thread::available_parallelism().map_or(1, |n| n.get())),
    }
}

fn error_row(cell: &SweepCell, verdict: &str) -> RatesRow {
    RatesRow {
        d: cell.d.unwrap_or(0),
        m: cell.m.unwrap_or(f64::NAN),
        gamma: cell.gamma,
        mass: cell.mass.unwrap_or(f64::NAN),
        predicted: None,
        fitted: None,
        residual: None,
        verdict: verdict.to_string(),
    }
}

/// Runs every cell on `workers` threads and writes `rates.csv`. Failing cells
/// get an `error` row; the sweep itself only fails on IO errors at the root.
pub fn run_sweep(plan: &SweepPlan, workers: usize) -> Result<Vec<RatesRow>> {
    std::fs::create_dir_all(&plan.root).map_err(|e| AppError::io(&plan.root, e))?;
    let cache = Arc::new(OperatorCache::new(64));
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| AppError::config(format!("cannot start {workers} workers: {e}")))?;
    let rows: Vec<RatesRow> = pool.install(|| {
        plan.cells
            .par_iter()
            .map(|cell| {
                let dir = SweepCell::directory(&plan.root, cell.index);
                match &cell.config {
                    Err(msg) => {
                        let _ = std::fs::create_dir_all(&dir);
                        let _ = crate::output::RunSummary::failed(None, &AppError::config(msg.clone()), 0.0).write(&dir);
                        error_row(cell, "error")
                    }
                    Ok(cfg) => match run_to_dir(cfg, &dir, Some(cache.clone())) {
                        Ok(out) => out.rates_row(cfg),
                        Err(_) => error_row(cell, "error"),
                    },
                }
            })
            .collect()
    });
    write_file(&plan.root.join("rates.csv"), &rates_csv(&rows))?;
    Ok(rows)
}
