//! Command-line arguments and their resolution into fully specified runs.

use std::collections::BTreeMap;
use std::fmt;
use std::path::PathBuf;

use clap::builder::PossibleValuesParser;
use clap::Args;
use serde::{Deserialize, Serialize};

use supermann::directions::DirectionKind;
use supermann::engine::{Preset, SolverConfig};
use supermann::problems::ProblemSpec;

/// Wall-clock budget per run unless `--time-limit` says otherwise.
pub const DEFAULT_TIME_LIMIT_S: f64 = 300.0;

/// Invalid input from the user; reported with exit status 1.
#[derive(Debug)]
pub struct UsageError(pub String);

impl fmt::Display for UsageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

pub fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

#[derive(Args, Debug, Clone, Default)]
pub struct ProblemArgs {
    /// Problem to build.
    #[arg(long, value_parser = PossibleValuesParser::new(ProblemSpec::NAMES))]
    pub problem: Option<String>,
    /// Rows of A (lasso: 150, cone-program: 50).
    #[arg(long)]
    pub m: Option<usize>,
    /// Columns of A (lasso: 500, cone-program: 30).
    #[arg(long)]
    pub n: Option<usize>,
    /// Lasso regularization weight [default: 1e-2].
    #[arg(long)]
    pub nu: Option<f64>,
    /// Fraction of nonzeros in the cone program's A [default: 0.3].
    #[arg(long)]
    pub density: Option<f64>,
    /// Condition number of the cone program's A [default: 100].
    #[arg(long)]
    pub cond: Option<f64>,
    /// Number of masses [default: 2].
    #[arg(long)]
    pub k: Option<usize>,
    /// Prediction horizon of the control problem [default: 10].
    #[arg(long)]
    pub horizon: Option<usize>,
    /// Instance seed (lasso: 7, others: 1).
    #[arg(long)]
    pub seed: Option<u64>,
}

impl ProblemArgs {
    pub fn spec(&self) -> anyhow::Result<ProblemSpec> {
        let Some(name) = self.problem.as_deref() else {
            return Err(usage(format!(
                "--problem is required; one of {}",
                ProblemSpec::NAMES.join(", ")
            )));
        };
        Ok(match name {
            "cones" => ProblemSpec::Cones,
            "ball-line" => ProblemSpec::BallLine,
            "soc" => ProblemSpec::Soc,
            "lasso" => ProblemSpec::Lasso {
                m: self.m.unwrap_or(150),
                n: self.n.unwrap_or(500),
                nu: self.nu.unwrap_or(1e-2),
                seed: self.seed.unwrap_or(7),
            },
            "cone-program" => ProblemSpec::ConeProgram {
                m: self.m.unwrap_or(50),
                n: self.n.unwrap_or(30),
                density: self.density.unwrap_or(0.3),
                cond: self.cond.unwrap_or(100.0),
                seed: self.seed.unwrap_or(1),
            },
            "masses" => ProblemSpec::Masses {
                k: self.k.unwrap_or(2),
                horizon: self.horizon.unwrap_or(10),
                seed: self.seed.unwrap_or(1),
            },
            other => {
                return Err(usage(format!(
                    "unknown problem {other:?}; one of {}",
                    ProblemSpec::NAMES.join(", ")
                )))
            }
        })
    }

    /// Sets a problem parameter by flag name; `Ok(false)` if `key` is not one.
    pub fn set(&mut self, key: &str, value: &str) -> anyhow::Result<bool> {
        fn parse<T: std::str::FromStr>(key: &str, value: &str) -> anyhow::Result<T> {
            value
                .parse()
                .map_err(|_| usage(format!("{key}: cannot parse {value:?}")))
        }
        match key {
            "m" => self.m = Some(parse(key, value)?),
            "n" => self.n = Some(parse(key, value)?),
            "nu" => self.nu = Some(parse(key, value)?),
            "density" => self.density = Some(parse(key, value)?),
            "cond" => self.cond = Some(parse(key, value)?),
            "k" => self.k = Some(parse(key, value)?),
            "horizon" => self.horizon = Some(parse(key, value)?),
            "seed" => self.seed = Some(parse(key, value)?),
            _ => return Ok(false),
        }
        Ok(true)
    }
}

#[derive(Args, Debug, Clone)]
pub struct SolverArgs {
    /// Preset: mpc, scs, or custom (read from --solver-config)
    /// [default: scs for cone-program, mpc otherwise].
    #[arg(long, value_parser = ["mpc", "scs", "custom"])]
    pub preset: Option<String>,
    /// JSON solver configuration; missing keys take the mpc values.
    #[arg(long)]
    pub solver_config: Option<PathBuf>,
    /// Solver parameter override, e.g. `--set sigma=0.2`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
    /// Stopping tolerance: relative residual, or the primal/dual/gap
    /// tolerance for cone programs.
    #[arg(long)]
    pub tol: Option<f64>,
    /// Wall-clock limit per run in seconds.
    #[arg(long, default_value_t = DEFAULT_TIME_LIMIT_S)]
    pub time_limit: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Km,
    Supermann,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Km => "km",
            Method::Supermann => "supermann",
        }
    }
}

/// `km`, `supermann` or `supermann:<direction>`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Variant {
    pub method: Method,
    pub direction: DirectionKind,
}

impl Variant {
    pub fn parse(s: &str, default_direction: DirectionKind) -> anyhow::Result<Self> {
        let (method, direction) = match s.split_once(':') {
            Some((m, d)) => (m, Some(d)),
            None => (s, None),
        };
        let method = match method {
            "km" => Method::Km,
            "supermann" => Method::Supermann,
            other => return Err(usage(format!("unknown method {other:?}; one of km, supermann"))),
        };
        let direction = match direction {
            Some(d) => d.parse().map_err(|e| usage(format!("{e}")))?,
            None => default_direction,
        };
        if method == Method::Km && s.contains(':') {
            return Err(usage(format!("{s}: km takes no direction")));
        }
        Ok(Self { method, direction })
    }

    pub fn label(self) -> String {
        match self.method {
            Method::Km => "km".into(),
            Method::Supermann => format!("supermann-{}", self.direction),
        }
    }
}

/// Everything needed to reproduce one solve.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSpec {
    pub label: String,
    pub problem: ProblemSpec,
    pub method: Method,
    pub direction: DirectionKind,
    pub preset: String,
    pub overrides: BTreeMap<String, String>,
    /// Cone programs stop on their primal, dual and gap residuals at this
    /// tolerance.
    pub problem_tol: Option<f64>,
    pub config: SolverConfig,
}

fn default_tol(problem: &ProblemSpec) -> f64 {
    match problem {
        ProblemSpec::Cones | ProblemSpec::BallLine | ProblemSpec::Soc => 1e-9,
        ProblemSpec::Lasso { .. } | ProblemSpec::ConeProgram { .. } => 1e-6,
        ProblemSpec::Masses { .. } => 1e-4,
    }
}

fn split_override(kv: &str) -> anyhow::Result<(String, String)> {
    kv.split_once('=')
        .map(|(k, v)| (k.trim().to_string(), v.trim().to_string()))
        .ok_or_else(|| usage(format!("--set expects KEY=VALUE, got {kv:?}")))
}

impl SolverArgs {
    pub fn overrides(&self) -> anyhow::Result<BTreeMap<String, String>> {
        self.overrides.iter().map(|kv| split_override(kv)).collect()
    }

    /// Builds and validates the solver configuration for `problem`.
    pub fn config(
        &self,
        problem: &ProblemSpec,
        extra: &BTreeMap<String, String>,
    ) -> anyhow::Result<(String, SolverConfig, Option<f64>)> {
        let is_cone = matches!(problem, ProblemSpec::ConeProgram { .. });
        let preset = self
            .preset
            .clone()
            .unwrap_or_else(|| if is_cone { "scs" } else { "mpc" }.into());
        let mut cfg = match preset.as_str() {
            "custom" => {
                let Some(path) = &self.solver_config else {
                    return Err(usage("--preset custom needs --solver-config FILE"));
                };
                let text =
                    std::fs::read_to_string(path).map_err(|e| usage(format!("cannot read {}: {e}", path.display())))?;
                serde_json::from_str(&text).map_err(|e| usage(format!("{}: {e}", path.display())))?
            }
            name => {
                if self.solver_config.is_some() {
                    return Err(usage("--solver-config requires --preset custom"));
                }
                SolverConfig::preset(name.parse::<Preset>().map_err(|e| usage(e.to_string()))?)
            }
        };
        cfg.time_limit_s = Some(self.time_limit);
        let tol = self.tol.unwrap_or_else(|| default_tol(problem));
        let problem_tol = if is_cone {
            cfg.tol_rel = 0.0;
            Some(tol)
        } else {
            cfg.tol_rel = tol;
            None
        };
        let mut all = self.overrides()?;
        all.extend(extra.iter().map(|(k, v)| (k.clone(), v.clone())));
        for (k, v) in &all {
            cfg.set(k, v).map_err(|e| usage(e.to_string()))?;
        }
        cfg.validate().map_err(|e| usage(e.to_string()))?;
        Ok((preset, cfg, problem_tol))
    }

    pub fn resolve(&self, problem: ProblemSpec, variant: Variant, label: Option<String>) -> anyhow::Result<RunSpec> {
        self.resolve_with(problem, variant, label, &BTreeMap::new())
    }

    pub fn resolve_with(
        &self,
        problem: ProblemSpec,
        variant: Variant,
        label: Option<String>,
        extra: &BTreeMap<String, String>,
    ) -> anyhow::Result<RunSpec> {
        let (preset, config, problem_tol) = self.config(&problem, extra)?;
        let mut overrides = self.overrides()?;
        overrides.extend(extra.clone());
        Ok(RunSpec {
            label: label.unwrap_or_else(|| format!("{}-{}", problem.name(), variant.label())),
            problem,
            method: variant.method,
            direction: variant.direction,
            preset,
            overrides,
            problem_tol,
            config,
        })
    }
}

/// One member of a `compare --specs` file.
#[derive(Debug, Clone, Deserialize)]
pub struct SpecEntry {
    #[serde(default)]
    pub label: Option<String>,
    #[serde(flatten)]
    pub problem: ProblemSpec,
    pub method: Method,
    #[serde(default)]
    pub direction: Option<DirectionKind>,
    #[serde(default)]
    pub preset: Option<String>,
    #[serde(default)]
    pub set: BTreeMap<String, serde_json::Value>,
    #[serde(default)]
    pub tol: Option<f64>,
}

impl SpecEntry {
    pub fn resolve(&self, base: &SolverArgs, default_direction: DirectionKind) -> anyhow::Result<RunSpec> {
        let solver = SolverArgs {
            preset: self.preset.clone().or_else(|| base.preset.clone()),
            tol: self.tol.or(base.tol),
            ..base.clone()
        };
        let extra = self
            .set
            .iter()
            .map(|(k, v)| {
                let v = match v {
                    serde_json::Value::String(s) => s.clone(),
                    other => other.to_string(),
                };
                (k.clone(), v)
            })
            .collect();
        let variant = Variant {
            method: self.method,
            direction: self.direction.unwrap_or(default_direction),
        };
        solver.resolve_with(self.problem.clone(), variant, self.label.clone(), &extra)
    }
}
