//! The SuperMann iteration and the relaxed KM baseline.

mod config;

use std::fmt;
use std::time::Instant;

use serde::{Deserialize, Serialize};

pub use config::{Preset, SolverConfig};

use crate::directions::{truncate, DirectionProvider, DirectionRequest};
use crate::error::{check_dim, invalid, Result};
use crate::gkm::{accepts, gkm_update_with_norm, separation_and_norm, FIXED_POINT_GUARD};
use crate::operators::{relax_unchecked, AveragedOperator};
use crate::space::{is_finite, Vector};

/// Problem-specific stopping rule, checked in addition to the residual test.
pub trait Termination: Send + Sync + fmt::Debug {
    fn reached(&self, x: &Vector) -> bool;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Converged,
    NotConverged,
    NonFinite,
}

impl Status {
    pub fn name(self) -> &'static str {
        match self {
            Status::Converged => "converged",
            Status::NotConverged => "not_converged",
            Status::NonFinite => "non_finite",
        }
    }
}

impl fmt::Display for Status {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Why a solve stopped.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    ResidualTolerance,
    ProblemTolerance,
    MaxIterations,
    MaxEvaluations,
    TimeLimit,
    NonFinite,
}

impl StopReason {
    pub fn status(self) -> Status {
        match self {
            StopReason::ResidualTolerance | StopReason::ProblemTolerance => Status::Converged,
            StopReason::NonFinite => Status::NonFinite,
            _ => Status::NotConverged,
        }
    }

    pub fn describe(self) -> &'static str {
        match self {
            StopReason::ResidualTolerance => "residual tolerance reached",
            StopReason::ProblemTolerance => "problem-specific tolerance reached",
            StopReason::MaxIterations => "iteration budget exhausted",
            StopReason::MaxEvaluations => "operator evaluation budget exhausted",
            StopReason::TimeLimit => "time limit reached",
            StopReason::NonFinite => "non-finite value encountered",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum StepKind {
    /// Blind step `x + d`.
    K0,
    /// Educated step `x + tau d` with sufficient residual decrease.
    K1,
    /// Safeguard (generalized KM) step.
    K2,
    /// Plain relaxed step, after failed backtracking or in the KM baseline.
    #[serde(rename = "NOM")]
    Nominal,
    #[serde(rename = "END")]
    Terminated,
}

impl StepKind {
    pub fn label(self) -> &'static str {
        match self {
            StepKind::K0 => "K0",
            StepKind::K1 => "K1",
            StepKind::K2 => "K2",
            StepKind::Nominal => "NOM",
            StepKind::Terminated => "END",
        }
    }
}

/// One trace row. Field order matches the trace CSV columns.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub k: usize,
    pub kind: StepKind,
    pub tau: f64,
    pub backtracks: usize,
    pub rho: Option<f64>,
    #[serde(rename = "norm_Rx")]
    pub norm_rx: f64,
    pub norm_d: f64,
    pub eta: Option<f64>,
    pub r_safe: Option<f64>,
    #[serde(rename = "T_evals")]
    pub t_evals: u64,
}

pub const TRACE_COLUMNS: [&str; 10] = [
    "k",
    "kind",
    "tau",
    "backtracks",
    "rho",
    "norm_Rx",
    "norm_d",
    "eta",
    "r_safe",
    "T_evals",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub status: Status,
    pub iterations: usize,
    #[serde(rename = "T_evals")]
    pub t_evals: u64,
    pub final_residual: f64,
    pub k0_steps: usize,
    pub k1_steps: usize,
    pub k2_steps: usize,
    pub fallback_steps: usize,
    pub wall_time_s: f64,
}

#[derive(Debug, Clone)]
pub struct SolveResult {
    pub x: Vector,
    pub summary: Summary,
    pub stop_reason: StopReason,
    pub trace: Vec<StepRecord>,
    /// `|Rx_0|` in the operator's metric.
    pub initial_residual: f64,
}

/// Solver state between iterations.
#[derive(Debug, Clone)]
pub struct IterateState {
    pub k: usize,
    pub x: Vector,
    pub tx: Vector,
    pub rx: Vector,
    pub norm_rx: f64,
    pub eta: f64,
    pub r_safe: f64,
    /// Direction for the current iteration, before truncation.
    pub d: Vector,
    pub t_evals: u64,
}

struct Evaluator<'a> {
    op: &'a AveragedOperator,
    start: u64,
}

impl Evaluator<'_> {
    fn evaluate(&self, x: &Vector) -> (Vector, Vector) {
        self.op.evaluate(x)
    }

    fn count(&self) -> u64 {
        self.op.evals() - self.start
    }
}

struct Budget<'a> {
    cfg: &'a SolverConfig,
    threshold: f64,
    stop: Option<&'a dyn Termination>,
    started: Instant,
}

impl Budget<'_> {
    fn check(&self, k: usize, t_evals: u64, x: &Vector, rx: &Vector, norm_rx: f64) -> Option<StopReason> {
        if !is_finite(x) || !is_finite(rx) || !norm_rx.is_finite() {
            return Some(StopReason::NonFinite);
        }
        if norm_rx <= self.threshold {
            return Some(StopReason::ResidualTolerance);
        }
        if self.stop.is_some_and(|s| s.reached(x)) {
            return Some(StopReason::ProblemTolerance);
        }
        if k >= self.cfg.max_iters {
            return Some(StopReason::MaxIterations);
        }
        if t_evals >= self.cfg.max_t_evals {
            return Some(StopReason::MaxEvaluations);
        }
        if self
            .cfg
            .time_limit_s
            .is_some_and(|t| self.started.elapsed().as_secs_f64() >= t)
        {
            return Some(StopReason::TimeLimit);
        }
        None
    }
}

fn summarize(
    reason: StopReason,
    k: usize,
    t_evals: u64,
    final_residual: f64,
    trace: &[StepRecord],
    started: Instant,
) -> Summary {
    let count = |kind| trace.iter().filter(|r| r.kind == kind).count();
    Summary {
        status: reason.status(),
        iterations: k,
        t_evals,
        final_residual,
        k0_steps: count(StepKind::K0),
        k1_steps: count(StepKind::K1),
        k2_steps: count(StepKind::K2),
        fallback_steps: count(StepKind::Nominal),
        wall_time_s: started.elapsed().as_secs_f64(),
    }
}

/// Relaxed KM iteration `x+ = (1 - lambda_k) x + lambda_k T x` with the
/// residual stopping rule of `cfg` (`tol_abs`, `tol_rel` and budgets).
pub fn km_solve(
    op: &AveragedOperator,
    x0: &Vector,
    lambdas: &dyn Fn(usize) -> f64,
    cfg: &SolverConfig,
    stop: Option<&dyn Termination>,
) -> Result<SolveResult> {
    km_solve_observed(op, x0, lambdas, cfg, stop, &mut |_| {})
}

/// [`km_solve`] calling `observer` on every iterate, starting with `x0`.
pub fn km_solve_observed(
    op: &AveragedOperator,
    x0: &Vector,
    lambdas: &dyn Fn(usize) -> f64,
    cfg: &SolverConfig,
    stop: Option<&dyn Termination>,
    observer: &mut dyn FnMut(&Vector),
) -> Result<SolveResult> {
    cfg.validate()?;
    check_dim(op.dim(), x0.len())?;
    let started = Instant::now();
    let metric = op.metric();
    let ev = Evaluator { op, start: op.evals() };
    let lambda_max = 1.0 / op.alpha();

    let mut x = x0.clone();
    let (mut tx, mut rx) = ev.evaluate(&x);
    let mut norm_rx = metric.norm(&rx)?;
    let initial = norm_rx;
    let budget = Budget {
        cfg,
        threshold: cfg.tol_abs + cfg.tol_rel * initial,
        stop,
        started,
    };
    let mut trace = Vec::new();
    let mut k = 0;
    observer(&x);
    let reason = loop {
        if let Some(r) = budget.check(k, ev.count(), &x, &rx, norm_rx) {
            break r;
        }
        let lambda = lambdas(k);
        if !(0.0..=lambda_max).contains(&lambda) {
            return Err(invalid("lambda", format!("lambda_{k} = {lambda} outside [0, 1/alpha]")));
        }
        let base = norm_rx;
        x = relax_unchecked(&x, &tx, lambda);
        (tx, rx) = ev.evaluate(&x);
        norm_rx = metric.norm(&rx)?;
        trace.push(StepRecord {
            k,
            kind: StepKind::Nominal,
            tau: 1.0,
            backtracks: 0,
            rho: None,
            norm_rx: base,
            norm_d: 0.0,
            eta: None,
            r_safe: None,
            t_evals: ev.count(),
        });
        k += 1;
        observer(&x);
    };
    trace.push(terminal_record(k, norm_rx, None, None, ev.count()));
    let summary = summarize(reason, k, ev.count(), norm_rx, &trace, started);
    Ok(SolveResult {
        x,
        summary,
        stop_reason: reason,
        trace,
        initial_residual: initial,
    })
}

fn terminal_record(k: usize, norm_rx: f64, eta: Option<f64>, r_safe: Option<f64>, t_evals: u64) -> StepRecord {
    StepRecord {
        k,
        kind: StepKind::Terminated,
        tau: 0.0,
        backtracks: 0,
        rho: None,
        norm_rx,
        norm_d: 0.0,
        eta,
        r_safe,
        t_evals,
    }
}

/// Constants of one SuperMann solve.
#[derive(Debug, Clone, Copy)]
pub struct StepParams {
    pub lambda: f64,
    /// Multiplier of `q^k` in the `r_safe` update.
    pub qk_scale: f64,
}

impl StepParams {
    pub fn new(cfg: &SolverConfig, alpha: f64, initial_residual: f64) -> Self {
        Self {
            lambda: cfg.lambda_for(alpha),
            qk_scale: if cfg.scale_qk_by_r0 { initial_residual } else { 1.0 },
        }
    }
}

/// Starting state: evaluates `T x0` and asks `dirs` for the first direction.
pub fn initial_state(op: &AveragedOperator, x0: &Vector, dirs: &mut dyn DirectionProvider) -> Result<IterateState> {
    check_dim(op.dim(), x0.len())?;
    let start = op.evals();
    let (tx, rx) = op.evaluate(x0);
    let norm_rx = op.metric().norm(&rx)?;
    let d = dirs.first(&rx);
    Ok(IterateState {
        k: 0,
        x: x0.clone(),
        tx,
        rx,
        norm_rx,
        eta: norm_rx,
        r_safe: norm_rx,
        d,
        t_evals: op.evals() - start,
    })
}

/// One SuperMann iteration from `state`; returns the trace row.
pub fn supermann_step(
    state: &mut IterateState,
    op: &AveragedOperator,
    dirs: &mut dyn DirectionProvider,
    cfg: &SolverConfig,
    params: StepParams,
) -> Result<StepRecord> {
    let metric = op.metric();
    let evals_before = op.evals();
    let k = state.k;
    let norm_rx = state.norm_rx;
    if norm_rx == 0.0 {
        return Ok(terminal_record(
            k,
            0.0,
            Some(state.eta),
            Some(state.r_safe),
            state.t_evals,
        ));
    }
    let (d, norm_d) = truncate(std::mem::take(&mut state.d), norm_rx, cfg.d_max, metric)?;
    let zero_d = norm_d == 0.0;
    let trial = |tau: f64| -> (Vector, Vector, Vector) {
        if zero_d {
            (state.x.clone(), state.tx.clone(), state.rx.clone())
        } else {
            let w = &state.x + &d * tau;
            let (tw, rw) = op.evaluate(&w);
            (w, tw, rw)
        }
    };

    let kind;
    let mut tau = 1.0;
    let mut backtracks = 0;
    let mut rho = None;
    // last trial point and the accepted iterate
    let (w, rw);
    let (x_next, tx_next, rx_next, norm_next);

    // a blind step along d = 0 would not move, so go straight to the line search
    if !zero_d && norm_rx <= cfg.c0 * state.eta {
        state.eta = norm_rx;
        let (tw, rwk);
        (w, tw, rwk) = trial(1.0);
        norm_next = metric.norm(&rwk)?;
        x_next = w.clone();
        tx_next = tw;
        rx_next = rwk.clone();
        rw = rwk;
        kind = StepKind::K0;
    } else {
        loop {
            let (wk, twk, rwk) = trial(tau);
            let (rho_k, norm_rw) = if zero_d {
                (norm_rx * norm_rx, norm_rx)
            } else {
                separation_and_norm(&state.x, &wk, &rwk, op.alpha(), metric)?
            };
            if norm_rx <= state.r_safe && norm_rw <= cfg.c1 * norm_rx {
                state.r_safe = norm_rw + cfg.q.powi(k as i32) * params.qk_scale;
                kind = StepKind::K1;
                x_next = wk.clone();
                tx_next = twk;
                rx_next = rwk.clone();
                norm_next = norm_rw;
                w = wk;
                rw = rwk;
                break;
            }
            rho = Some(rho_k);
            if norm_rw < FIXED_POINT_GUARD * norm_rx.max(1.0) {
                kind = StepKind::K2;
                x_next = wk.clone();
                tx_next = twk;
                rx_next = rwk.clone();
                norm_next = norm_rw;
                w = wk;
                rw = rwk;
                break;
            }
            let accepted = accepts(rho_k, norm_rw, norm_rx, cfg.sigma);
            if accepted || backtracks == cfg.max_backtracks {
                let xn = if !accepted || zero_d {
                    relax_unchecked(&state.x, &state.tx, params.lambda)
                } else {
                    gkm_update_with_norm(&state.x, &rwk, rho_k, params.lambda, norm_rw)
                };
                if !accepted {
                    rho = None;
                }
                let (txn, rxn) = op.evaluate(&xn);
                norm_next = metric.norm(&rxn)?;
                kind = if accepted { StepKind::K2 } else { StepKind::Nominal };
                x_next = xn;
                tx_next = txn;
                rx_next = rxn;
                w = wk;
                rw = rwk;
                break;
            }
            tau *= cfg.beta;
            backtracks += 1;
        }
    }

    let s = &w - &state.x;
    let y = &rw - &state.rx;
    let d_next = dirs.next(&DirectionRequest {
        s: &s,
        y: &y,
        rx_next: &rx_next,
        x_norm: state.x.norm(),
    });
    state.x = x_next;
    state.tx = tx_next;
    state.rx = rx_next;
    state.norm_rx = norm_next;
    state.d = d_next;
    state.k += 1;
    state.t_evals += op.evals() - evals_before;
    Ok(StepRecord {
        k,
        kind,
        tau,
        backtracks,
        rho,
        norm_rx,
        norm_d,
        eta: Some(state.eta),
        r_safe: Some(state.r_safe),
        t_evals: state.t_evals,
    })
}

/// Runs SuperMann iterations until `|Rx| <= tol_abs + tol_rel |Rx_0|`, the
/// optional problem-specific rule holds, or a budget runs out.
pub fn supermann_solve(
    op: &AveragedOperator,
    x0: &Vector,
    dirs: &mut dyn DirectionProvider,
    cfg: &SolverConfig,
    stop: Option<&dyn Termination>,
) -> Result<SolveResult> {
    supermann_solve_observed(op, x0, dirs, cfg, stop, &mut |_| {})
}

/// [`supermann_solve`] calling `observer` on the initial state and after every step.
pub fn supermann_solve_observed(
    op: &AveragedOperator,
    x0: &Vector,
    dirs: &mut dyn DirectionProvider,
    cfg: &SolverConfig,
    stop: Option<&dyn Termination>,
    observer: &mut dyn FnMut(&IterateState),
) -> Result<SolveResult> {
    cfg.validate()?;
    let started = Instant::now();
    let mut state = initial_state(op, x0, dirs)?;
    let initial = state.norm_rx;
    let params = StepParams::new(cfg, op.alpha(), initial);
    let budget = Budget {
        cfg,
        threshold: cfg.tol_abs + cfg.tol_rel * initial,
        stop,
        started,
    };
    let mut trace = Vec::new();
    observer(&state);
    let reason = loop {
        if let Some(r) = budget.check(state.k, state.t_evals, &state.x, &state.rx, state.norm_rx) {
            break r;
        }
        let rec = supermann_step(&mut state, op, dirs, cfg, params)?;
        trace.push(rec);
        observer(&state);
    };
    trace.push(terminal_record(
        state.k,
        state.norm_rx,
        Some(state.eta),
        Some(state.r_safe),
        state.t_evals,
    ));
    let summary = summarize(reason, state.k, state.t_evals, state.norm_rx, &trace, started);
    if dirs.degenerate_skips() > 0 {
        log::debug!("{} degenerate direction updates skipped", dirs.degenerate_skips());
    }
    Ok(SolveResult {
        x: state.x,
        summary,
        stop_reason: reason,
        trace,
        initial_residual: initial,
    })
}

#[cfg(test)]
mod tests;
