//! Update directions for the SuperMann iteration.
//!
//! A [`DirectionProvider`] hands out `d_0` from the first residual and then,
//! after every iteration, consumes the pair `s = w - x`, `y = Rw - Rx` and
//! returns the next direction for the new residual. The Broyden providers use
//! Euclidean inner products regardless of the operator's metric.

use std::fmt;
use std::str::FromStr;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::space::{Metric, Vector};

pub const DEFAULT_MEMORY: usize = 20;
pub const DEFAULT_THETA_BAR: f64 = 0.2;

/// `|s| <= DEGENERATE_PAIR |x|` (with `|x|` at least 1) skips the update.
pub const DEGENERATE_PAIR: f64 = 1e-14;

/// Data observed during one iteration.
#[derive(Debug, Clone)]
pub struct DirectionRequest<'a> {
    /// `w - x` for the last trial point `w`.
    pub s: &'a Vector,
    /// `Rw - Rx`.
    pub y: &'a Vector,
    /// Residual at the accepted iterate.
    pub rx_next: &'a Vector,
    /// Euclidean norm of the base point `x`, used to detect degenerate pairs.
    pub x_norm: f64,
}

pub trait DirectionProvider: Send + fmt::Debug {
    fn name(&self) -> &'static str;

    /// Direction at the starting point.
    fn first(&mut self, rx: &Vector) -> Vector;

    /// Absorb the pair `(s, y)` and return the direction for `rx_next`.
    fn next(&mut self, req: &DirectionRequest<'_>) -> Vector;

    /// Number of updates skipped because `s` was numerically zero.
    fn degenerate_skips(&self) -> usize {
        0
    }
}

fn is_degenerate(s: &Vector, x_norm: f64) -> bool {
    s.norm() <= DEGENERATE_PAIR * x_norm.max(1.0)
}

/// Powell's safeguard for the Broyden update:
/// `theta = 1` if `|gamma| >= theta_bar`, else
/// `(1 - sign(gamma) theta_bar) / (1 - gamma)` with `sign(0) = 1`.
pub fn powell_theta(gamma: f64, theta_bar: f64) -> f64 {
    if gamma.abs() >= theta_bar {
        1.0
    } else {
        let sign = if gamma >= 0.0 { 1.0 } else { -1.0 };
        (1.0 - sign * theta_bar) / (1.0 - gamma)
    }
}

/// Rescales `d` so that `|d| <= bound * norm_rx` in the given metric.
/// Returns the rescaled direction and its metric norm.
pub fn truncate(d: Vector, norm_rx: f64, bound: f64, metric: &Metric) -> Result<(Vector, f64)> {
    if d.iter().all(|v| *v == 0.0) {
        return Ok((d, 0.0));
    }
    let limit = bound * norm_rx;
    let nd = metric.norm(&d)?;
    if nd <= limit {
        return Ok((d, nd));
    }
    if limit == 0.0 {
        return Ok((Vector::zeros(d.len()), 0.0));
    }
    Ok((d * (limit / nd), limit))
}

/// Always returns zero; SuperMann then reduces to the relaxed KM iteration.
#[derive(Debug, Clone, Default)]
pub struct ZeroDirection;

impl DirectionProvider for ZeroDirection {
    fn name(&self) -> &'static str {
        "zero"
    }

    fn first(&mut self, rx: &Vector) -> Vector {
        Vector::zeros(rx.len())
    }

    fn next(&mut self, req: &DirectionRequest<'_>) -> Vector {
        Vector::zeros(req.rx_next.len())
    }
}

fn check_theta_bar(theta_bar: f64) -> Result<()> {
    if !(theta_bar > 0.0 && theta_bar < 1.0) {
        return Err(invalid("theta_bar", format!("must lie in (0, 1), got {theta_bar}")));
    }
    Ok(())
}

/// Modified Broyden method with a dense inverse-Jacobian estimate `H`, starting at `H = I`.
#[derive(Debug, Clone)]
pub struct BroydenFull {
    h: DMatrix<f64>,
    theta_bar: f64,
    skips: usize,
}

impl BroydenFull {
    pub fn new(dim: usize, theta_bar: f64) -> Result<Self> {
        Self::with_inverse(DMatrix::identity(dim, dim), theta_bar)
    }

    pub fn with_inverse(h: DMatrix<f64>, theta_bar: f64) -> Result<Self> {
        check_theta_bar(theta_bar)?;
        if !h.is_square() {
            return Err(invalid("h", "inverse Jacobian estimate must be square"));
        }
        Ok(Self { h, theta_bar, skips: 0 })
    }

    pub fn inverse(&self) -> &DMatrix<f64> {
        &self.h
    }

    pub fn direction(&self, rx: &Vector) -> Vector {
        -(&self.h * rx)
    }

    /// `H+ = H + (s - H y~)(s' H) / <H y~, s>` with
    /// `H y~ = (1 - theta) s + theta H y`. Returns `false` for a skipped update.
    pub fn update(&mut self, s: &Vector, y: &Vector, x_norm: f64) -> bool {
        if is_degenerate(s, x_norm) {
            self.skips += 1;
            log::debug!("broyden: degenerate pair skipped");
            return false;
        }
        let hy = &self.h * y;
        let ss = s.norm_squared();
        let gamma = hy.dot(s) / ss;
        let theta = powell_theta(gamma, self.theta_bar);
        let hyt = s * (1.0 - theta) + hy * theta;
        let denom = hyt.dot(s);
        let sh = self.h.tr_mul(s).transpose();
        self.h += (s - hyt) * sh / denom;
        true
    }
}

impl DirectionProvider for BroydenFull {
    fn name(&self) -> &'static str {
        "broyden"
    }

    fn first(&mut self, rx: &Vector) -> Vector {
        self.direction(rx)
    }

    fn next(&mut self, req: &DirectionRequest<'_>) -> Vector {
        self.update(req.s, req.y, req.x_norm);
        self.direction(req.rx_next)
    }

    fn degenerate_skips(&self) -> usize {
        self.skips
    }
}

/// Modified Broyden method in product form with `m` stored pairs; the
/// buffers are cleared once they hold `m` pairs.
#[derive(Debug, Clone)]
pub struct BroydenRestarted {
    s: Vec<Vector>,
    s_tilde: Vec<Vector>,
    memory: usize,
    theta_bar: f64,
    skips: usize,
}

impl BroydenRestarted {
    pub fn new(memory: usize, theta_bar: f64) -> Result<Self> {
        check_theta_bar(theta_bar)?;
        if memory == 0 {
            return Err(invalid("memory", "must be positive"));
        }
        Ok(Self {
            s: Vec::with_capacity(memory),
            s_tilde: Vec::with_capacity(memory),
            memory,
            theta_bar,
            skips: 0,
        })
    }

    pub fn len(&self) -> usize {
        self.s.len()
    }

    pub fn is_empty(&self) -> bool {
        self.s.is_empty()
    }

    pub fn memory(&self) -> usize {
        self.memory
    }

    /// Applies the stored factors `(I + s~_i s_i')` in order.
    fn apply_buffers(&self, v: &mut Vector) {
        for (si, sti) in self.s.iter().zip(&self.s_tilde) {
            let c = si.dot(v);
            v.axpy(c, sti, 1.0);
        }
    }

    /// Direction from the current buffers without an update.
    pub fn direction(&self, rx: &Vector) -> Vector {
        let mut d = -rx;
        self.apply_buffers(&mut d);
        d
    }

    /// Absorbs `(s, y)` and returns the direction for `rx`.
    pub fn update_and_direction(&mut self, s: &Vector, y: &Vector, rx: &Vector, x_norm: f64) -> Vector {
        if is_degenerate(s, x_norm) {
            self.skips += 1;
            log::debug!("restarted broyden: degenerate pair skipped");
            return self.direction(rx);
        }
        let mut d = -rx;
        let mut st = y.clone();
        for (si, sti) in self.s.iter().zip(&self.s_tilde) {
            let c = si.dot(&st);
            st.axpy(c, sti, 1.0);
            let c = si.dot(&d);
            d.axpy(c, sti, 1.0);
        }
        let ss = s.norm_squared();
        let gamma = st.dot(s) / ss;
        let theta = powell_theta(gamma, self.theta_bar);
        let st = (s - st) * (theta / ((1.0 - theta + theta * gamma) * ss));
        let c = s.dot(&d);
        d.axpy(c, &st, 1.0);
        if self.s.len() == self.memory {
            self.s.clear();
            self.s_tilde.clear();
        } else {
            self.s.push(s.clone());
            self.s_tilde.push(st);
        }
        d
    }
}

impl DirectionProvider for BroydenRestarted {
    fn name(&self) -> &'static str {
        "rbroyden"
    }

    fn first(&mut self, rx: &Vector) -> Vector {
        self.direction(rx)
    }

    fn next(&mut self, req: &DirectionRequest<'_>) -> Vector {
        self.update_and_direction(req.s, req.y, req.rx_next, req.x_norm)
    }

    fn degenerate_skips(&self) -> usize {
        self.skips
    }
}

/// Named direction providers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DirectionKind {
    Zero,
    Broyden,
    Rbroyden,
}

impl DirectionKind {
    pub const NAMES: [&'static str; 3] = ["zero", "broyden", "rbroyden"];

    pub fn name(self) -> &'static str {
        match self {
            DirectionKind::Zero => "zero",
            DirectionKind::Broyden => "broyden",
            DirectionKind::Rbroyden => "rbroyden",
        }
    }

    pub fn build(self, dim: usize, memory: usize, theta_bar: f64) -> Result<Box<dyn DirectionProvider>> {
        Ok(match self {
            DirectionKind::Zero => Box::new(ZeroDirection),
            DirectionKind::Broyden => Box::new(BroydenFull::new(dim, theta_bar)?),
            DirectionKind::Rbroyden => Box::new(BroydenRestarted::new(memory, theta_bar)?),
        })
    }
}

impl fmt::Display for DirectionKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for DirectionKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "zero" => Ok(DirectionKind::Zero),
            "broyden" => Ok(DirectionKind::Broyden),
            "rbroyden" => Ok(DirectionKind::Rbroyden),
            other => Err(invalid(
                "direction",
                format!(
                    "unknown direction {other:?}; expected one of {}",
                    Self::NAMES.join(", ")
                ),
            )),
        }
    }
}
