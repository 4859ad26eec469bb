//! Averaged operators, projections, and the splitting schemes built from them.

mod sets;
mod splitting;

use std::fmt;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use crate::error::{check_dim, invalid, Result};
use crate::space::{Metric, Vector};

pub use sets::{soft_threshold, ConvexSet};
pub use splitting::{
    make_alternating_projections, make_drs, make_fbs, make_vu_condat, power_iteration, vu_condat_alpha, VuCondatMetric,
    POWER_ITERATION_INFLATION,
};

/// Thread-safe event counter.
#[derive(Debug, Default)]
pub struct Counter(AtomicU64);

impl Counter {
    pub fn add(&self, n: u64) {
        self.0.fetch_add(n, Ordering::Relaxed);
    }

    pub fn incr(&self) {
        self.add(1);
    }

    pub fn get(&self) -> u64 {
        self.0.load(Ordering::Relaxed)
    }

    pub fn reset(&self) {
        self.0.store(0, Ordering::Relaxed);
    }
}

/// The expensive primitive behind an operator (linear solves for DRS,
/// calls to `L`/`L^T` for Vu-Condat, matvecs with `A`/`A^T` for FBS).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum WorkKind {
    LinearSolves,
    LinearMapCalls,
    Matvecs,
}

impl WorkKind {
    pub fn label(self) -> &'static str {
        match self {
            WorkKind::LinearSolves => "linear_solves",
            WorkKind::LinearMapCalls => "LLt_calls",
            WorkKind::Matvecs => "matvecs",
        }
    }
}

type Map = dyn Fn(&Vector) -> Vector + Send + Sync;

/// An operator `T` that is `alpha`-averaged in the norm of `metric`.
///
/// `alpha = 1` stands for plain nonexpansiveness, `alpha = 1/2` for firm
/// nonexpansiveness. Every application of `T` bumps [`evals`](Self::evals).
pub struct AveragedOperator {
    name: String,
    dim: usize,
    alpha: f64,
    metric: Metric,
    map: Arc<Map>,
    evals: Counter,
    work: Option<(WorkKind, Arc<Counter>)>,
}

impl fmt::Debug for AveragedOperator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("AveragedOperator")
            .field("name", &self.name)
            .field("dim", &self.dim)
            .field("alpha", &self.alpha)
            .field("metric", &self.metric)
            .field("evals", &self.evals.get())
            .finish()
    }
}

impl AveragedOperator {
    pub fn new<F>(name: impl Into<String>, dim: usize, alpha: f64, metric: Metric, map: F) -> Result<Self>
    where
        F: Fn(&Vector) -> Vector + Send + Sync + 'static,
    {
        if !(alpha > 0.0 && alpha <= 1.0) {
            return Err(invalid(
                "alpha",
                format!("averagedness constant must lie in (0, 1], got {alpha}"),
            ));
        }
        if let Some(n) = metric.dim() {
            check_dim(dim, n)?;
        }
        Ok(Self {
            name: name.into(),
            dim,
            alpha,
            metric,
            map: Arc::new(map),
            evals: Counter::default(),
            work: None,
        })
    }

    pub fn with_work_counter(mut self, kind: WorkKind, counter: Arc<Counter>) -> Self {
        self.work = Some((kind, counter));
        self
    }

    /// Replace the averagedness constant, e.g. to fall back to `alpha = 1`.
    pub fn with_alpha(mut self, alpha: f64) -> Result<Self> {
        if !(alpha > 0.0 && alpha <= 1.0) {
            return Err(invalid(
                "alpha",
                format!("averagedness constant must lie in (0, 1], got {alpha}"),
            ));
        }
        self.alpha = alpha;
        Ok(self)
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn metric(&self) -> &Metric {
        &self.metric
    }

    pub fn evals(&self) -> u64 {
        self.evals.get()
    }

    pub fn work(&self) -> Option<(WorkKind, u64)> {
        self.work.as_ref().map(|(k, c)| (*k, c.get()))
    }

    pub fn reset_counters(&self) {
        self.evals.reset();
        if let Some((_, c)) = &self.work {
            c.reset();
        }
    }

    /// `T x`. Panics if `x` has the wrong dimension.
    pub fn apply(&self, x: &Vector) -> Vector {
        assert_eq!(x.len(), self.dim, "operator `{}` applied to wrong dimension", self.name);
        self.evals.incr();
        (self.map)(x)
    }

    /// `R x = x - T x`.
    pub fn residual(&self, x: &Vector) -> Vector {
        x - self.apply(x)
    }

    /// `(T x, R x)` for a single application of `T`.
    pub fn evaluate(&self, x: &Vector) -> (Vector, Vector) {
        let tx = self.apply(x);
        let rx = x - &tx;
        (tx, rx)
    }

    /// `T_lambda x = (1 - lambda) x + lambda T x`, valid for `lambda` in `[0, 1/alpha]`.
    pub fn relax(&self, x: &Vector, tx: &Vector, lambda: f64) -> Result<Vector> {
        check_dim(self.dim, x.len())?;
        check_dim(self.dim, tx.len())?;
        if !(0.0..=1.0 / self.alpha).contains(&lambda) {
            return Err(invalid(
                "lambda",
                format!("relaxation {lambda} outside [0, {}]", 1.0 / self.alpha),
            ));
        }
        Ok(relax_unchecked(x, tx, lambda))
    }

    /// Relative violations of nonexpansiveness and of firm nonexpansiveness
    /// of `T_{1/(2 alpha)}` on the pair `(x, y)`; both are `<= 0` for an
    /// operator that really is `alpha`-averaged.
    pub fn averagedness_violation(&self, x: &Vector, y: &Vector) -> Result<(f64, f64)> {
        let m = &self.metric;
        let (tx, rx) = self.evaluate(x);
        let (ty, ry) = self.evaluate(y);
        let dist2 = m.norm_squared(&(x - y))?;
        let scale = dist2.max(f64::MIN_POSITIVE);
        let ne = (m.norm_squared(&(&tx - &ty))? - dist2) / scale;
        // S = T_{1/(2 alpha)}: x - Sx = Rx / (2 alpha)
        let h = 1.0 / (2.0 * self.alpha);
        let dr = (&rx - &ry) * h;
        let ds = (x - y) - &dr;
        let fne = (m.norm_squared(&ds)? + m.norm_squared(&dr)? - dist2) / scale;
        Ok((ne, fne))
    }
}

pub(crate) fn relax_unchecked(x: &Vector, tx: &Vector, lambda: f64) -> Vector {
    if lambda == 1.0 {
        tx.clone()
    } else {
        x * (1.0 - lambda) + tx * lambda
    }
}

/// Averagedness constant of the composition of an `a1`- and an `a2`-averaged map.
pub fn composed_alpha(a1: f64, a2: f64) -> f64 {
    let den = 1.0 - a1 * a2;
    if den <= 0.0 {
        1.0
    } else {
        ((a1 + a2 - 2.0 * a1 * a2) / den).min(1.0)
    }
}
