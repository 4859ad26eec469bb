//! `supermann` command-line driver.
//!
//! Exit status: 0 when every solve converged, 2 when some solve stopped
//! without converging, 1 on usage and input errors.

mod run;
mod spec;
mod sweep;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use supermann::directions::DirectionKind;
use supermann::engine::Status;
use supermann::problems::export_instance;

use run::{build_all, execute, relative, write_json, write_outcome, Outcome};
use spec::{usage, ProblemArgs, SolverArgs, SpecEntry, UsageError, Variant};

/// Default output directory when `--out-dir` is not given.
const OUT_DIR_ENV: &str = "SUPERMANN_OUT_DIR";

#[derive(Parser, Debug)]
#[command(
    name = "supermann",
    version,
    about = "KM and SuperMann fixed-point solvers on benchmark problems"
)]
#[command(args_override_self = true)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
struct Common {
    /// Output directory.
    #[arg(long, env = OUT_DIR_ENV, default_value = "supermann-out")]
    out_dir: PathBuf,
    /// JSON file supplying flags by their long names; the command line wins.
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Solve one problem and write its trace and summary.
    Run {
        #[command(flatten)]
        problem: ProblemArgs,
        #[arg(long, default_value = "supermann", value_parser = ["km", "supermann"])]
        method: String,
        #[arg(long, default_value = "rbroyden", value_parser = DirectionKind::NAMES)]
        direction: String,
        /// File name stem for the outputs [default: <problem>-<method>].
        #[arg(long)]
        label: Option<String>,
        #[command(flatten)]
        solver: SolverArgs,
        #[command(flatten)]
        common: Common,
    },
    /// Run several methods and tabulate their costs in compare.csv.
    Compare {
        #[command(flatten)]
        problem: ProblemArgs,
        /// Method to include, `km` or `supermann[:DIRECTION]`. Repeatable
        /// [default: km and supermann].
        #[arg(long = "variant")]
        variants: Vec<String>,
        /// JSON array of run specs, used instead of --problem.
        #[arg(long)]
        specs: Option<PathBuf>,
        #[arg(long, default_value = "rbroyden", value_parser = DirectionKind::NAMES)]
        direction: String,
        #[command(flatten)]
        solver: SolverArgs,
        #[command(flatten)]
        common: Common,
    },
    /// Run a parameter grid and aggregate avg/max costs per cell in sweep.csv.
    Sweep {
        #[command(flatten)]
        problem: ProblemArgs,
        /// Grid axis `KEY=V1,V2,...` over a problem or solver parameter. Repeatable.
        #[arg(long = "grid", value_name = "KEY=VALUES")]
        grid: Vec<String>,
        /// Replicates per cell, each with its own derived seed.
        #[arg(long, default_value_t = 3)]
        seeds: usize,
        #[arg(long = "variant")]
        variants: Vec<String>,
        #[arg(long, default_value = "rbroyden", value_parser = DirectionKind::NAMES)]
        direction: String,
        #[command(flatten)]
        solver: SolverArgs,
        #[command(flatten)]
        common: Common,
    },
    /// Write a problem instance as self-describing JSON.
    ExportInstance {
        #[command(flatten)]
        problem: ProblemArgs,
        /// Output file [default: <out-dir>/<problem>.instance.json].
        #[arg(long)]
        output: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
}

/// Expands `--config FILE` into flags inserted right after the subcommand,
/// so that flags given on the command line override it.
fn expand_config(mut args: Vec<String>) -> anyhow::Result<Vec<String>> {
    let mut path = None;
    for (i, a) in args.iter().enumerate().skip(2) {
        if a == "--config" {
            path = args.get(i + 1).cloned();
        } else if let Some(p) = a.strip_prefix("--config=") {
            path = Some(p.to_string());
        }
    }
    let Some(path) = path else { return Ok(args) };
    let text = std::fs::read_to_string(&path).map_err(|e| usage(format!("cannot read {path}: {e}")))?;
    let value: serde_json::Value = serde_json::from_str(&text).map_err(|e| usage(format!("{path}: {e}")))?;
    let serde_json::Value::Object(map) = value else {
        return Err(usage(format!("{path}: expected a JSON object of flags")));
    };
    let scalar = |v: &serde_json::Value| match v {
        serde_json::Value::String(s) => s.clone(),
        other => other.to_string(),
    };
    let mut extra = Vec::new();
    for (key, v) in map {
        if key == "config" {
            continue;
        }
        let flag = format!("--{}", key.replace('_', "-"));
        match &v {
            serde_json::Value::Bool(true) => extra.push(flag),
            serde_json::Value::Bool(false) | serde_json::Value::Null => {}
            serde_json::Value::Array(items) => {
                for item in items {
                    extra.push(flag.clone());
                    extra.push(scalar(item));
                }
            }
            serde_json::Value::Object(pairs) => {
                for (k, item) in pairs {
                    extra.push(flag.clone());
                    extra.push(format!("{k}={}", scalar(item)));
                }
            }
            other => {
                extra.push(flag);
                extra.push(scalar(other));
            }
        }
    }
    if args.len() >= 2 {
        args.splice(2..2, extra);
    }
    Ok(args)
}

fn exit_for(statuses: impl IntoIterator<Item = Status>) -> ExitCode {
    if statuses.into_iter().all(|s| s == Status::Converged) {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(2)
    }
}

fn variants(list: &[String], direction: &str) -> anyhow::Result<Vec<Variant>> {
    let d: DirectionKind = direction.parse().map_err(|e| usage(format!("{e}")))?;
    if list.is_empty() {
        return Ok(vec![Variant::parse("km", d)?, Variant::parse("supermann", d)?]);
    }
    list.iter().map(|s| Variant::parse(s, d)).collect()
}

fn print_outcome(out: &Outcome) {
    let s = &out.result.summary;
    let work = out.work.map(|(k, n)| format!(", {k} {n}")).unwrap_or_default();
    println!(
        "{}: {} after {} iterations, {} T evals{work}, residual {:.3e} (relative {:.3e}); {}",
        out.spec.label,
        s.status,
        s.iterations,
        s.t_evals,
        s.final_residual,
        relative(&out.result),
        out.result.stop_reason.describe()
    );
}

/// One row of compare.csv.
#[derive(Serialize)]
struct CompareRow<'a> {
    label: &'a str,
    problem: &'a str,
    method: &'a str,
    direction: &'a str,
    preset: &'a str,
    status: &'a str,
    stop_reason: &'a str,
    iterations: usize,
    #[serde(rename = "T_evals")]
    t_evals: u64,
    work_kind: &'a str,
    work: Option<u64>,
    final_residual: f64,
    relative_residual: f64,
}

fn compare_row(o: &Outcome) -> CompareRow<'_> {
    CompareRow {
        label: &o.spec.label,
        problem: o.spec.problem.name(),
        method: o.spec.method.name(),
        direction: match o.spec.method {
            spec::Method::Km => "",
            spec::Method::Supermann => o.spec.direction.name(),
        },
        preset: &o.spec.preset,
        status: o.result.summary.status.name(),
        stop_reason: o.result.stop_reason.describe(),
        iterations: o.result.summary.iterations,
        t_evals: o.result.summary.t_evals,
        work_kind: o.work.map_or("", |w| w.0),
        work: o.work.map(|w| w.1),
        final_residual: o.result.summary.final_residual,
        relative_residual: relative(&o.result),
    }
}

fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> anyhow::Result<()> {
    std::fs::create_dir_all(path.parent().unwrap_or(Path::new(".")))?;
    let mut w = csv::Writer::from_path(path).with_context(|| format!("cannot create {}", path.display()))?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

fn dispatch(cli: Cli) -> anyhow::Result<ExitCode> {
    match cli.command {
        Command::Run {
            problem,
            method,
            direction,
            label,
            solver,
            common,
        } => {
            let variant = Variant::parse(&method, direction.parse().map_err(|e| usage(format!("{e}")))?)?;
            let spec = solver.resolve(problem.spec()?, variant, label)?;
            let inst = build_all(std::slice::from_ref(&spec))?.pop().expect("one instance");
            let out = execute(&spec, &inst)?;
            let files = write_outcome(&common.out_dir, &out)?;
            print_outcome(&out);
            for f in files {
                println!("wrote {}", f.display());
            }
            Ok(exit_for([out.result.summary.status]))
        }
        Command::Compare {
            problem,
            variants: list,
            specs,
            direction,
            solver,
            common,
        } => {
            let d: DirectionKind = direction.parse().map_err(|e| usage(format!("{e}")))?;
            let runs = match specs {
                Some(path) => {
                    if problem.problem.is_some() || !list.is_empty() {
                        return Err(usage("--specs cannot be combined with --problem or --variant"));
                    }
                    let text = std::fs::read_to_string(&path)
                        .map_err(|e| usage(format!("cannot read {}: {e}", path.display())))?;
                    let entries: Vec<SpecEntry> =
                        serde_json::from_str(&text).map_err(|e| usage(format!("{}: {e}", path.display())))?;
                    entries
                        .iter()
                        .map(|e| e.resolve(&solver, d))
                        .collect::<anyhow::Result<Vec<_>>>()?
                }
                None => {
                    let p = problem.spec()?;
                    variants(&list, &direction)?
                        .into_iter()
                        .map(|v| solver.resolve(p.clone(), v, None))
                        .collect::<anyhow::Result<Vec<_>>>()?
                }
            };
            if runs.is_empty() {
                return Err(usage("nothing to compare: the spec list is empty"));
            }
            let mut labels = std::collections::BTreeSet::new();
            for r in &runs {
                if !labels.insert(r.label.as_str()) {
                    return Err(usage(format!("duplicate label {:?}; give each spec a label", r.label)));
                }
            }
            let instances = build_all(&runs)?;
            let outs = runs
                .iter()
                .zip(&instances)
                .map(|(s, i)| execute(s, i))
                .collect::<anyhow::Result<Vec<_>>>()?;
            for o in &outs {
                write_outcome(&common.out_dir, o)?;
                print_outcome(o);
            }
            let path = common.out_dir.join("compare.csv");
            write_csv(&path, &outs.iter().map(compare_row).collect::<Vec<_>>())?;
            println!("wrote {}", path.display());
            Ok(exit_for(outs.iter().map(|o| o.result.summary.status)))
        }
        Command::Sweep {
            problem,
            grid,
            seeds,
            variants: list,
            direction,
            solver,
            common,
        } => {
            let axes = grid
                .iter()
                .map(|g| sweep::Axis::parse(g))
                .collect::<anyhow::Result<Vec<_>>>()?;
            let rows = sweep::sweep(&problem, &solver, &axes, &variants(&list, &direction)?, seeds)?;
            for r in &rows {
                println!(
                    "cell {} [{}] {}: {}/{} converged, iterations avg {:.1} max {}, T evals avg {:.1} max {}{}",
                    r.cell,
                    r.params,
                    r.variant,
                    r.converged,
                    r.runs,
                    r.iterations_avg,
                    r.iterations_max,
                    r.t_evals_avg,
                    r.t_evals_max,
                    if r.work_kind.is_empty() {
                        String::new()
                    } else {
                        format!(", {} avg {:.1} max {}", r.work_kind, r.work_avg, r.work_max)
                    }
                );
            }
            let path = common.out_dir.join("sweep.csv");
            write_csv(&path, &rows)?;
            println!("wrote {}", path.display());
            let all = rows.iter().all(|r| r.converged == r.runs);
            Ok(if all { ExitCode::SUCCESS } else { ExitCode::from(2) })
        }
        Command::ExportInstance {
            problem,
            output,
            common,
        } => {
            let spec = problem.spec()?;
            let inst = spec.build().with_context(|| format!("cannot build {}", spec.name()))?;
            let path = output.unwrap_or_else(|| common.out_dir.join(format!("{}.instance.json", spec.name())));
            if let Some(dir) = path.parent() {
                std::fs::create_dir_all(dir)?;
            }
            write_json(&path, &export_instance(&inst))?;
            println!("wrote {}", path.display());
            Ok(ExitCode::SUCCESS)
        }
    }
}

fn main() -> ExitCode {
    let args = match expand_config(std::env::args().collect()) {
        Ok(a) => a,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(1);
        }
    };
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match dispatch(cli) {
        Ok(code) => code,
        Err(e) => {
            if e.downcast_ref::<UsageError>().is_some() {
                eprintln!("usage error: {e}");
            } else {
                eprintln!("error: {e:#}");
            }
            ExitCode::from(1)
        }
    }
}
