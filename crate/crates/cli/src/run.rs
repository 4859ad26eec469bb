//! Executing run specs and writing their output files.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::Context;
use serde::Serialize;

use supermann::engine::{km_solve, supermann_solve, SolveResult, StopReason, Summary};
use supermann::problems::{ProblemData, ProblemInstance};

use crate::spec::{usage, Method, RunSpec};

pub struct Outcome {
    pub spec: RunSpec,
    pub result: SolveResult,
    /// Problem-specific work counter, e.g. `("matvecs", 466)`.
    pub work: Option<(&'static str, u64)>,
    pub trajectory: Option<Trajectory>,
}

/// Inputs and resulting states of a control solution, one row per stage.
pub struct Trajectory {
    pub n_u: usize,
    pub n_x: usize,
    pub inputs: Vec<f64>,
    pub states: Vec<f64>,
}

/// Builds the instance of every spec, so that bad parameters surface
/// before any solve starts.
pub fn build_all(specs: &[RunSpec]) -> anyhow::Result<Vec<ProblemInstance>> {
    specs
        .iter()
        .map(|s| match s.problem.build() {
            Ok(inst) => Ok(inst),
            Err(e @ supermann::Error::InvalidParameter { .. }) => Err(usage(format!("{}: {e}", s.label))),
            Err(e) => Err(anyhow::Error::new(e).context(format!("{}: cannot build {}", s.label, s.problem.name()))),
        })
        .collect()
}

pub fn execute(spec: &RunSpec, inst: &ProblemInstance) -> anyhow::Result<Outcome> {
    let cfg = &spec.config;
    let stop = spec.problem_tol.and_then(|tol| inst.termination(tol));
    inst.reset_counters();
    let result = match spec.method {
        Method::Km => {
            let lambda = cfg.lambda_for(inst.operator.alpha());
            km_solve(&inst.operator, &inst.x0, &|_| lambda, cfg, stop.as_deref())?
        }
        Method::Supermann => {
            let mut dirs = spec.direction.build(inst.x0.len(), cfg.memory, cfg.theta_bar)?;
            supermann_solve(&inst.operator, &inst.x0, dirs.as_mut(), cfg, stop.as_deref())?
        }
    };
    let work = inst.work().map(|(kind, n)| (kind.label(), n));
    let trajectory = match &inst.data {
        ProblemData::Control(c) => {
            let u = result.x.rows(0, c.input_dim()).into_owned();
            Some(Trajectory {
                n_u: c.n_u(),
                n_x: c.n_x(),
                states: c.simulate(&u).as_slice().to_vec(),
                inputs: u.as_slice().to_vec(),
            })
        }
        _ => None,
    };
    Ok(Outcome {
        spec: spec.clone(),
        result,
        work,
        trajectory,
    })
}

/// Run metadata written next to the summary.
#[derive(Serialize)]
struct RunRecord<'a> {
    spec: &'a RunSpec,
    stop_reason: StopReason,
    stop_description: &'static str,
    initial_residual: f64,
    relative_residual: f64,
    work_kind: Option<&'static str>,
    work: Option<u64>,
}

pub fn write_trace(path: &Path, result: &SolveResult) -> anyhow::Result<()> {
    let mut w = csv::Writer::from_path(path).with_context(|| format!("cannot create {}", path.display()))?;
    for rec in &result.trace {
        w.serialize(rec)?;
    }
    if result.trace.is_empty() {
        w.write_record(supermann::engine::TRACE_COLUMNS)?;
    }
    w.flush()?;
    Ok(())
}

fn write_trajectory(path: &Path, t: &Trajectory) -> anyhow::Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let mut header = vec!["t".to_string()];
    header.extend((1..=t.n_u).map(|i| format!("u{i}")));
    header.extend((1..=t.n_x).map(|i| format!("x{i}")));
    w.write_record(&header)?;
    let stages = t.inputs.len() / t.n_u;
    for s in 0..stages {
        let mut row = vec![s.to_string()];
        row.extend(t.inputs[s * t.n_u..(s + 1) * t.n_u].iter().map(|v| v.to_string()));
        row.extend(t.states[s * t.n_x..(s + 1) * t.n_x].iter().map(|v| v.to_string()));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> anyhow::Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).with_context(|| format!("cannot write {}", path.display()))
}

/// Writes `<label>.trace.csv`, `<label>.summary.json`, `<label>.run.json`
/// and, for control problems, `<label>.trajectory.csv`.
pub fn write_outcome(dir: &Path, out: &Outcome) -> anyhow::Result<Vec<PathBuf>> {
    fs::create_dir_all(dir).with_context(|| format!("cannot create {}", dir.display()))?;
    let base = dir.join(&out.spec.label);
    let path = |ext: &str| PathBuf::from(format!("{}.{ext}", base.display()));
    let mut written = vec![path("trace.csv"), path("summary.json"), path("run.json")];
    write_trace(&written[0], &out.result)?;
    write_json::<Summary>(&written[1], &out.result.summary)?;
    let r = &out.result;
    write_json(
        &written[2],
        &RunRecord {
            spec: &out.spec,
            stop_reason: r.stop_reason,
            stop_description: r.stop_reason.describe(),
            initial_residual: r.initial_residual,
            relative_residual: relative(r),
            work_kind: out.work.map(|w| w.0),
            work: out.work.map(|w| w.1),
        },
    )?;
    if let Some(t) = &out.trajectory {
        let p = path("trajectory.csv");
        write_trajectory(&p, t)?;
        written.push(p);
    }
    Ok(written)
}

pub fn relative(r: &SolveResult) -> f64 {
    if r.initial_residual > 0.0 {
        r.summary.final_residual / r.initial_residual
    } else {
        0.0
    }
}
