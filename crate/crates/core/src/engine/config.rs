use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::directions::{DEFAULT_MEMORY, DEFAULT_THETA_BAR};
use crate::error::{invalid, Error, Result};

/// Named parameter sets.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Preset {
    /// Blind, educated and safeguard steps with generous acceptance
    /// (`c0 = c1 = q = 0.99`, `sigma = 0.1`).
    Mpc,
    /// Blind steps disabled (`c0 = 0`), `sigma = 1e-3`, `c1 = q = 1 - sigma`.
    Scs,
}

impl Preset {
    pub const NAMES: [&'static str; 2] = ["mpc", "scs"];

    pub fn name(self) -> &'static str {
        match self {
            Preset::Mpc => "mpc",
            Preset::Scs => "scs",
        }
    }
}

impl fmt::Display for Preset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Preset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mpc" => Ok(Preset::Mpc),
            "scs" => Ok(Preset::Scs),
            other => Err(invalid(
                "preset",
                format!("unknown preset {other:?}; expected mpc or scs"),
            )),
        }
    }
}

/// Parameters of the SuperMann iteration and of the KM baseline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverConfig {
    /// Blind-step threshold: accept `x + d` when `|Rx| <= c0 eta`.
    pub c0: f64,
    /// Educated-step threshold: accept `w` when `|Rw| <= c1 |Rx|`.
    pub c1: f64,
    /// Ratio of the summable sequence added to `r_safe`.
    pub q: f64,
    /// Backtracking factor for the step length.
    pub beta: f64,
    /// Safeguard acceptance parameter.
    pub sigma: f64,
    /// Relaxation of the safeguard (and KM) step.
    pub lambda: f64,
    /// Directions are truncated to `|d| <= d_max |Rx|`.
    pub d_max: f64,
    pub memory: usize,
    pub theta_bar: f64,
    pub max_backtracks: usize,
    pub tol_abs: f64,
    pub tol_rel: f64,
    pub max_iters: usize,
    pub max_t_evals: u64,
    /// Multiply `q^k` by `|Rx_0|` in the `r_safe` update.
    pub scale_qk_by_r0: bool,
    /// Wall-clock budget in seconds.
    pub time_limit_s: Option<f64>,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self::preset(Preset::Mpc)
    }
}

impl SolverConfig {
    pub fn preset(p: Preset) -> Self {
        let base = Self {
            c0: 0.99,
            c1: 0.99,
            q: 0.99,
            beta: 0.5,
            sigma: 0.1,
            lambda: 1.0,
            d_max: 1e4,
            memory: DEFAULT_MEMORY,
            theta_bar: DEFAULT_THETA_BAR,
            max_backtracks: 8,
            tol_abs: 0.0,
            tol_rel: 1e-4,
            max_iters: 100_000,
            max_t_evals: 10_000_000,
            scale_qk_by_r0: true,
            time_limit_s: None,
        };
        match p {
            Preset::Mpc => base,
            Preset::Scs => Self {
                c0: 0.0,
                c1: 1.0 - 1e-3,
                q: 1.0 - 1e-3,
                sigma: 1e-3,
                ..base
            },
        }
    }

    pub fn mpc() -> Self {
        Self::preset(Preset::Mpc)
    }

    pub fn scs() -> Self {
        Self::preset(Preset::Scs)
    }

    pub fn validate(&self) -> Result<()> {
        let unit = |name: &'static str, v: f64| {
            if (0.0..1.0).contains(&v) {
                Ok(())
            } else {
                Err(invalid(name, format!("must lie in [0, 1), got {v}")))
            }
        };
        let open = |name: &'static str, v: f64| {
            if v > 0.0 && v < 1.0 {
                Ok(())
            } else {
                Err(invalid(name, format!("must lie in (0, 1), got {v}")))
            }
        };
        unit("c0", self.c0)?;
        unit("c1", self.c1)?;
        unit("q", self.q)?;
        open("beta", self.beta)?;
        open("sigma", self.sigma)?;
        open("theta_bar", self.theta_bar)?;
        if !(self.lambda > 0.0 && self.lambda.is_finite()) {
            return Err(invalid("lambda", format!("must be positive, got {}", self.lambda)));
        }
        if !(self.d_max > 0.0) {
            return Err(invalid("d_max", format!("must be positive, got {}", self.d_max)));
        }
        if self.memory == 0 {
            return Err(invalid("memory", "must be positive"));
        }
        if self.max_backtracks == 0 {
            return Err(invalid("max_backtracks", "must be positive"));
        }
        if !(self.tol_abs >= 0.0 && self.tol_rel >= 0.0) {
            return Err(invalid("tol_abs, tol_rel", "tolerances must be nonnegative"));
        }
        if self.max_iters == 0 || self.max_t_evals == 0 {
            return Err(invalid("max_iters, max_t_evals", "budgets must be positive"));
        }
        if let Some(t) = self.time_limit_s {
            if !(t > 0.0) {
                return Err(invalid("time_limit_s", "must be positive"));
            }
        }
        Ok(())
    }

    /// Relaxation used for an `alpha`-averaged operator. The SuperMann
    /// safeguard needs `lambda < 1/alpha`; out-of-range values are replaced
    /// by `1/(2 alpha)`, which is `0.5` for nonexpansive operators.
    pub fn lambda_for(&self, alpha: f64) -> f64 {
        if self.lambda * alpha >= 1.0 {
            let clamped = 0.5 / alpha;
            log::warn!(
                "lambda = {} is not below 1/alpha = {}; using {clamped}",
                self.lambda,
                1.0 / alpha
            );
            clamped
        } else {
            self.lambda
        }
    }

    /// Applies a `key=value` override.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let num = || {
            value
                .parse::<f64>()
                .map_err(|_| invalid("value", format!("{key}: expected a number, got {value:?}")))
        };
        let int = || {
            value
                .parse::<u64>()
                .map_err(|_| invalid("value", format!("{key}: expected an integer, got {value:?}")))
        };
        match key {
            "c0" => self.c0 = num()?,
            "c1" => self.c1 = num()?,
            "q" => self.q = num()?,
            "beta" => self.beta = num()?,
            "sigma" => self.sigma = num()?,
            "lambda" => self.lambda = num()?,
            "d_max" | "D" => self.d_max = num()?,
            "memory" => self.memory = int()? as usize,
            "theta_bar" => self.theta_bar = num()?,
            "max_backtracks" => self.max_backtracks = int()? as usize,
            "tol_abs" => self.tol_abs = num()?,
            "tol_rel" => self.tol_rel = num()?,
            "max_iters" => self.max_iters = int()? as usize,
            "max_t_evals" => self.max_t_evals = int()?,
            "scale_qk_by_r0" => {
                self.scale_qk_by_r0 = value
                    .parse()
                    .map_err(|_| invalid("value", format!("{key}: expected true or false, got {value:?}")))?
            }
            "time_limit_s" => self.time_limit_s = Some(num()?),
            other => return Err(invalid("key", format!("unknown solver parameter {other:?}"))),
        }
        Ok(())
    }
}
