//! Executing a configured experiment and writing its tables.

use std::fs::File;
use std::io::BufWriter;
use std::path::Path;
use std::time::Instant;

use anyhow::{Context, Result};
use log::{info, warn};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use sce_core::kssce::scf_iterate;
use sce_core::model::{exact_ground_state_with, sector_dimension};

use crate::config::{ExperimentConfig, GridPoint, Method};

/// Column order of the results table.
pub const COLUMNS: [&str; 15] = [
    "method",
    "family",
    "L",
    "N",
    "U",
    "V",
    "energy",
    "e_over_u",
    "diff_vs_ed",
    "wall_time_s",
    "converged",
    "iterations",
    "solver_iterations",
    "v_sce",
    "error",
];

/// One line of the results table. Empty cells mean "not applicable": `V` for
/// chains, `diff_vs_ed` without an ED row, `e_over_u` at `U = 0`, the
/// iteration counts and `v_sce` for ED, and `energy` for failed runs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub method: String,
    pub family: String,
    #[serde(rename = "L")]
    pub l: usize,
    #[serde(rename = "N")]
    pub n: usize,
    #[serde(rename = "U")]
    pub u: f64,
    #[serde(rename = "V")]
    pub v: Option<f64>,
    pub energy: Option<f64>,
    pub e_over_u: Option<f64>,
    pub diff_vs_ed: Option<f64>,
    pub wall_time_s: f64,
    pub converged: bool,
    pub iterations: Option<usize>,
    pub solver_iterations: Option<usize>,
    /// Site potentials joined by `;`.
    pub v_sce: String,
    pub error: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FailurePolicy {
    /// Any method error makes the whole run fail (after writing the tables).
    Strict,
    /// Method errors are recorded in their rows and the sweep carries on.
    Continue,
}

#[derive(Debug, Clone, Serialize)]
pub struct PointSummary {
    #[serde(rename = "L")]
    pub l: usize,
    #[serde(rename = "N")]
    pub n: usize,
    #[serde(rename = "U")]
    pub u: f64,
    #[serde(rename = "V")]
    pub v: Option<f64>,
    pub energies: serde_json::Map<String, serde_json::Value>,
    pub diff_vs_ed: serde_json::Map<String, serde_json::Value>,
    pub wall_time_s: serde_json::Map<String, serde_json::Value>,
    pub converged: serde_json::Map<String, serde_json::Value>,
}

#[derive(Debug, Clone, Serialize)]
pub struct Summary {
    pub family: String,
    pub methods: Vec<String>,
    pub seed: u64,
    pub particle_rule: String,
    pub points: Vec<PointSummary>,
    pub failures: usize,
    pub warnings: Vec<String>,
    pub total_wall_time_s: f64,
}

#[derive(Debug, Clone)]
pub struct Outcome {
    pub rows: Vec<ResultRow>,
    pub summary: Summary,
}

impl Outcome {
    pub fn failures(&self) -> usize {
        self.summary.failures
    }
}

struct MethodRun {
    energy: f64,
    converged: bool,
    iterations: Option<usize>,
    solver_iterations: Option<usize>,
    v_sce: Vec<f64>,
}

fn run_method(cfg: &ExperimentConfig, p: &GridPoint, method: Method) -> sce_core::Result<MethodRun> {
    let h = p.hamiltonian()?;
    match method.backend() {
        None => {
            let r = exact_ground_state_with(&h, p.n, &cfg.ed_options())?;
            Ok(MethodRun { energy: r.energy, converged: true, iterations: None, solver_iterations: None, v_sce: Vec::new() })
        }
        Some(b) => {
            let r = scf_iterate(&h, p.n, &cfg.scf_config(b))?;
            Ok(MethodRun {
                energy: r.total_energy,
                converged: r.converged,
                iterations: Some(r.iterations),
                solver_iterations: Some(r.solver_iterations),
                v_sce: r.v_sce,
            })
        }
    }
}

/// Run every (grid point, method) pair on a pool of `jobs` threads (0 picks
/// the number of cores). Rows come back in grid order, methods in the
/// configured order within each point.
pub fn execute(cfg: &ExperimentConfig, jobs: usize) -> Result<Outcome> {
    let start = Instant::now();
    let points = cfg.grid_points();
    let cap = cfg.ed_cap();
    let mut warnings = Vec::new();
    let mut tasks = Vec::new();
    for (k, p) in points.iter().enumerate() {
        for &m in &cfg.methods {
            if m == Method::ED {
                let dim = sector_dimension(p.sites, p.n);
                if dim > cap as u128 {
                    let msg = format!(
                        "skipping ED at L={} N={} U={}: sector dimension {dim} exceeds the cap {cap}",
                        p.sites, p.n, p.u
                    );
                    warn!("{msg}");
                    warnings.push(msg);
                    continue;
                }
            }
            tasks.push((k, m));
        }
    }

    let pool = rayon::ThreadPoolBuilder::new().num_threads(jobs).build().context("cannot start the worker pool")?;
    let results: Vec<(usize, Method, f64, sce_core::Result<MethodRun>)> = pool.install(|| {
        tasks
            .par_iter()
            .map(|&(k, m)| {
                let t = Instant::now();
                let r = run_method(cfg, &points[k], m);
                (k, m, t.elapsed().as_secs_f64(), r)
            })
            .collect()
    });

    let mut rows = Vec::with_capacity(results.len());
    let mut failures = 0;
    for (k, m, secs, r) in results {
        let p = &points[k];
        let mut row = ResultRow {
            method: m.to_string(),
            family: p.family.to_string(),
            l: p.sites,
            n: p.n,
            u: p.u,
            v: p.v,
            energy: None,
            e_over_u: None,
            diff_vs_ed: None,
            wall_time_s: secs,
            converged: false,
            iterations: None,
            solver_iterations: None,
            v_sce: String::new(),
            error: String::new(),
        };
        match r {
            Ok(run) => {
                row.energy = Some(run.energy);
                row.e_over_u = (p.u != 0.0).then(|| run.energy / p.u);
                row.converged = run.converged;
                row.iterations = run.iterations;
                row.solver_iterations = run.solver_iterations;
                row.v_sce = run.v_sce.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(";");
                if !run.converged {
                    warn!("{m} at L={} N={} U={} did not converge", p.sites, p.n, p.u);
                }
            }
            Err(e) => {
                failures += 1;
                warn!("{m} failed at L={} N={} U={}: {e}", p.sites, p.n, p.u);
                row.error = e.to_string();
            }
        }
        rows.push(row);
    }
    fill_differences(&mut rows);

    let summary = Summary {
        family: cfg.model.family.to_string(),
        methods: cfg.methods.iter().map(Method::to_string).collect(),
        seed: cfg.seed,
        particle_rule: match (cfg.model.n, cfg.model.filling) {
            (Some(n), _) => format!("N = {n}"),
            (None, Some(f)) => format!("N = round({f} * L)"),
            _ => String::new(),
        },
        points: summarize(&rows),
        failures,
        warnings,
        total_wall_time_s: start.elapsed().as_secs_f64(),
    };
    info!("{} rows, {failures} failures, {:.1}s", rows.len(), summary.total_wall_time_s);
    Ok(Outcome { rows, summary })
}

/// `energy − E_ED` for every row sharing a grid point with a successful ED row.
fn fill_differences(rows: &mut [ResultRow]) {
    let key = |r: &ResultRow| (r.l, r.n, r.u.to_bits());
    let ed: Vec<((usize, usize, u64), f64)> = rows
        .iter()
        .filter(|r| r.method == "ED")
        .filter_map(|r| r.energy.map(|e| (key(r), e)))
        .collect();
    for r in rows.iter_mut() {
        if let (Some(e), Some(&(_, e_ed))) = (r.energy, ed.iter().find(|(k, _)| *k == key(r))) {
            r.diff_vs_ed = Some(e - e_ed);
        }
    }
}

fn summarize(rows: &[ResultRow]) -> Vec<PointSummary> {
    let mut out: Vec<PointSummary> = Vec::new();
    for r in rows {
        let same = |p: &PointSummary| p.l == r.l && p.n == r.n && p.u.to_bits() == r.u.to_bits();
        if !out.last().is_some_and(same) {
            out.push(PointSummary {
                l: r.l,
                n: r.n,
                u: r.u,
                v: r.v,
                energies: Default::default(),
                diff_vs_ed: Default::default(),
                wall_time_s: Default::default(),
                converged: Default::default(),
            });
        }
        let p = out.last_mut().expect("pushed above");
        p.energies.insert(r.method.clone(), r.energy.into());
        if let Some(d) = r.diff_vs_ed {
            p.diff_vs_ed.insert(r.method.clone(), d.into());
        }
        p.wall_time_s.insert(r.method.clone(), r.wall_time_s.into());
        p.converged.insert(r.method.clone(), r.converged.into());
    }
    out
}

/// Write `results.csv` and `summary.json` into `dir`, creating it if needed.
pub fn write_outputs(outcome: &Outcome, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).with_context(|| format!("cannot create {}", dir.display()))?;
    let table = dir.join("results.csv");
    let mut w = csv::Writer::from_path(&table).with_context(|| format!("cannot write {}", table.display()))?;
    if outcome.rows.is_empty() {
        w.write_record(COLUMNS)?;
    }
    for r in &outcome.rows {
        w.serialize(r)?;
    }
    w.flush()?;
    let summary = dir.join("summary.json");
    let f = File::create(&summary).with_context(|| format!("cannot write {}", summary.display()))?;
    serde_json::to_writer_pretty(BufWriter::new(f), &outcome.summary)?;
    Ok(())
}

/// Parse a results table written by [`write_outputs`].
pub fn read_table(path: &Path) -> Result<Vec<ResultRow>> {
    let mut r = csv::Reader::from_path(path).with_context(|| format!("cannot read {}", path.display()))?;
    let header: Vec<String> = r.headers()?.iter().map(str::to_owned).collect();
    if header != COLUMNS {
        anyhow::bail!("unexpected header {header:?}");
    }
    r.deserialize().map(|row| row.map_err(Into::into)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(method: &str, u: f64, energy: Option<f64>) -> ResultRow {
        ResultRow {
            method: method.into(),
            family: "spinless_chain".into(),
            l: 4,
            n: 2,
            u,
            v: None,
            energy,
            e_over_u: None,
            diff_vs_ed: None,
            wall_time_s: 0.0,
            converged: energy.is_some(),
            iterations: None,
            solver_iterations: None,
            v_sce: String::new(),
            error: String::new(),
        }
    }

    #[test]
    fn differences_pair_rows_by_grid_point() {
        let mut rows = vec![
            row("ED", 1.0, Some(2.0)),
            row("LP", 1.0, Some(1.5)),
            row("ED", 2.0, None),
            row("LP", 2.0, Some(3.0)),
        ];
        fill_differences(&mut rows);
        assert_eq!(rows[0].diff_vs_ed, Some(0.0));
        assert_eq!(rows[1].diff_vs_ed, Some(-0.5));
        assert_eq!(rows[3].diff_vs_ed, None);
        let s = summarize(&rows);
        assert_eq!(s.len(), 2);
        assert_eq!(s[0].energies.len(), 2);
    }

    #[test]
    fn header_matches_serialized_fields() {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.serialize(row("LP", 1.0, Some(0.5))).unwrap();
        let text = String::from_utf8(w.into_inner().unwrap()).unwrap();
        assert_eq!(text.lines().next().unwrap(), COLUMNS.join(","));
    }
}
