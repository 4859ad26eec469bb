//! Parameter grids: Cartesian cells, seeded replicates, avg/max aggregation.

use rayon::prelude::*;
use serde::Serialize;

use supermann::engine::Status;
use supermann::problems::derive_seed;

use crate::run::{build_all, execute};
use crate::spec::{usage, ProblemArgs, RunSpec, SolverArgs, Variant};

/// One `--grid key=v1,v2,...` axis.
#[derive(Debug, Clone, PartialEq)]
pub struct Axis {
    pub key: String,
    pub values: Vec<String>,
}

impl Axis {
    pub fn parse(s: &str) -> anyhow::Result<Self> {
        let (key, values) = s
            .split_once('=')
            .ok_or_else(|| usage(format!("--grid expects KEY=V1,V2,..., got {s:?}")))?;
        let values: Vec<String> = values.split(',').map(|v| v.trim().to_string()).collect();
        if values.iter().any(|v| v.is_empty()) {
            return Err(usage(format!("--grid {key}: empty value")));
        }
        Ok(Self {
            key: key.trim().to_string(),
            values,
        })
    }
}

/// Cartesian product in row-major order (last axis fastest).
pub fn cells(axes: &[Axis]) -> Vec<Vec<String>> {
    axes.iter().fold(vec![vec![]], |acc, axis| {
        acc.iter()
            .flat_map(|prefix| {
                axis.values.iter().map(move |v| {
                    let mut c = prefix.clone();
                    c.push(v.clone());
                    c
                })
            })
            .collect()
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct CellRow {
    pub cell: usize,
    pub params: String,
    pub variant: String,
    pub runs: usize,
    pub converged: usize,
    pub iterations_avg: f64,
    pub iterations_max: usize,
    #[serde(rename = "T_evals_avg")]
    pub t_evals_avg: f64,
    #[serde(rename = "T_evals_max")]
    pub t_evals_max: u64,
    pub work_kind: String,
    pub work_avg: f64,
    pub work_max: u64,
}

struct Job {
    cell: usize,
    variant: usize,
    spec: RunSpec,
}

/// Resolves every run of the grid; any invalid value fails here, before a
/// single solve starts.
fn plan(
    base: &ProblemArgs,
    solver: &SolverArgs,
    axes: &[Axis],
    variants: &[Variant],
    seeds: usize,
) -> anyhow::Result<Vec<Job>> {
    let base_seed = base.seed.unwrap_or(1);
    let mut jobs = Vec::new();
    for (c, values) in cells(axes).into_iter().enumerate() {
        for rep in 0..seeds {
            let mut problem = base.clone();
            let mut extra = std::collections::BTreeMap::new();
            for (axis, value) in axes.iter().zip(&values) {
                if !problem.set(&axis.key, value)? {
                    extra.insert(axis.key.clone(), value.clone());
                }
            }
            if !axes.iter().any(|a| a.key == "seed") {
                problem.seed = Some(derive_seed(derive_seed(base_seed, c as u64), rep as u64));
            }
            let problem = problem.spec()?;
            for (v, variant) in variants.iter().enumerate() {
                let label = format!("cell{c}-rep{rep}-{}", variant.label());
                let spec = solver.resolve_with(problem.clone(), *variant, Some(label), &extra)?;
                jobs.push(Job {
                    cell: c,
                    variant: v,
                    spec,
                });
            }
        }
    }
    Ok(jobs)
}

pub fn sweep(
    base: &ProblemArgs,
    solver: &SolverArgs,
    axes: &[Axis],
    variants: &[Variant],
    seeds: usize,
) -> anyhow::Result<Vec<CellRow>> {
    if seeds == 0 {
        return Err(usage("--seeds must be positive"));
    }
    let mut seen = std::collections::BTreeSet::new();
    for a in axes {
        if !seen.insert(a.key.as_str()) {
            return Err(usage(format!("--grid {} given twice", a.key)));
        }
    }
    let jobs = plan(base, solver, axes, variants, seeds)?;
    let instances: Vec<_> = jobs
        .par_iter()
        .map(|job| build_all(std::slice::from_ref(&job.spec)).map(|mut v| v.pop().expect("one instance")))
        .collect::<anyhow::Result<_>>()?;
    let results: Vec<_> = jobs
        .par_iter()
        .zip(&instances)
        .map(|(job, inst)| execute(&job.spec, inst).map(|out| (job.cell, job.variant, out)))
        .collect::<anyhow::Result<_>>()?;

    let grid = cells(axes);
    let mut rows = Vec::new();
    for (c, values) in grid.iter().enumerate() {
        let params = axes
            .iter()
            .zip(values)
            .map(|(a, v)| format!("{}={v}", a.key))
            .collect::<Vec<_>>()
            .join(" ");
        for (v, variant) in variants.iter().enumerate() {
            let outs: Vec<_> = results
                .iter()
                .filter(|(cc, vv, _)| *cc == c && *vv == v)
                .map(|(_, _, o)| o)
                .collect();
            let n = outs.len() as f64;
            let avg = |f: &dyn Fn(&crate::run::Outcome) -> f64| outs.iter().map(|o| f(o)).sum::<f64>() / n;
            rows.push(CellRow {
                cell: c,
                params: params.clone(),
                variant: variant.label(),
                runs: outs.len(),
                converged: outs
                    .iter()
                    .filter(|o| o.result.summary.status == Status::Converged)
                    .count(),
                iterations_avg: avg(&|o| o.result.summary.iterations as f64),
                iterations_max: outs.iter().map(|o| o.result.summary.iterations).max().unwrap_or(0),
                t_evals_avg: avg(&|o| o.result.summary.t_evals as f64),
                t_evals_max: outs.iter().map(|o| o.result.summary.t_evals).max().unwrap_or(0),
                work_kind: outs
                    .first()
                    .and_then(|o| o.work)
                    .map(|w| w.0.to_string())
                    .unwrap_or_default(),
                work_avg: avg(&|o| o.work.map_or(0.0, |w| w.1 as f64)),
                work_max: outs.iter().filter_map(|o| o.work.map(|w| w.1)).max().unwrap_or(0),
            });
        }
    }
    Ok(rows)
}
