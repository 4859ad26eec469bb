//! Box-constrained linear-quadratic optimal control in condensed form.

use std::collections::BTreeMap;
use std::sync::Arc;

use nalgebra::DMatrix;
use rand::Rng;
use serde::{Deserialize, Serialize};
use serde_json::json;

use super::{rng, ProblemData, ProblemInstance, ProblemSpec};
use crate::error::{check_dim, invalid, Error, Result};
use crate::operators::{make_vu_condat, power_iteration, vu_condat_alpha, Counter};
use crate::space::Vector;

const SPRING: f64 = 1.0;
const FRICTION: f64 = 0.1;
const SAMPLE_TIME: f64 = 0.1;
const INPUT_BOUND: f64 = 2.0;
const STATE_BOUND: f64 = 5.0;
const WEIGHT_RANGE: (f64, f64) = (0.1, 10.0);
const MAX_REJECTIONS: usize = 10_000;
const CERTIFICATE_ITERS: usize = 5_000;
const CERTIFICATE_MARGIN: f64 = 0.01;

/// ```text
/// minimize  1/2 sum_{t=1..N} x_t' Q x_t + 1/2 sum_{t=0..N-1} |u_t|^2
/// s.t.      x_{t+1} = A x_t + B u_t,  u_t in U,  x_t in X  (t = 1..N)
/// ```
///
/// Eliminating the states gives `x = L u + b` with `L` the zero-initial-state
/// simulation and `b` the free response from `x0`. Inputs and states are
/// stacked over time.
#[derive(Debug)]
pub struct OptimalControl {
    a: DMatrix<f64>,
    b: DMatrix<f64>,
    horizon: usize,
    x0: Vector,
    weights: Vector,
    input_bounds: (f64, f64),
    state_bounds: (f64, f64),
    free_response: Vector,
    l_norm_sq: f64,
    pub(crate) map_calls: Arc<Counter>,
}

impl OptimalControl {
    /// `q` is the diagonal of the per-stage state weight.
    pub fn new(
        a: DMatrix<f64>,
        b: DMatrix<f64>,
        x0: Vector,
        horizon: usize,
        q: Vector,
        input_bounds: (f64, f64),
        state_bounds: (f64, f64),
    ) -> Result<Self> {
        let nx = a.nrows();
        if nx == 0 || b.ncols() == 0 {
            return Err(invalid("dynamics", "state and input dimensions must be positive"));
        }
        check_dim(nx, a.ncols())?;
        check_dim(nx, b.nrows())?;
        check_dim(nx, x0.len())?;
        check_dim(nx, q.len())?;
        if horizon == 0 {
            return Err(invalid("horizon", "must be positive"));
        }
        if q.iter().any(|v| !(*v >= 0.0 && v.is_finite())) {
            return Err(invalid("q", "state weights must be finite and nonnegative"));
        }
        for (name, (lo, hi)) in [("input_bounds", input_bounds), ("state_bounds", state_bounds)] {
            if !(lo <= hi) {
                return Err(invalid(name, format!("empty interval [{lo}, {hi}]")));
            }
        }
        let free_response = free_response(&a, &x0, horizon);
        let weights = Vector::from_fn(horizon * nx, |i, _| q[i % nx]);
        let mut prob = Self {
            a,
            b,
            horizon,
            x0,
            weights,
            input_bounds,
            state_bounds,
            free_response,
            l_norm_sq: 0.0,
            map_calls: Arc::default(),
        };
        prob.l_norm_sq = power_iteration(prob.input_dim(), |u| prob.lt_uncounted(&prob.l_uncounted(u)));
        Ok(prob)
    }

    /// Same dynamics, weights and bounds from a different initial state.
    pub fn with_initial_state(&self, x0: Vector) -> Result<Self> {
        check_dim(self.n_x(), x0.len())?;
        Ok(Self {
            a: self.a.clone(),
            b: self.b.clone(),
            horizon: self.horizon,
            free_response: free_response(&self.a, &x0, self.horizon),
            x0,
            weights: self.weights.clone(),
            input_bounds: self.input_bounds,
            state_bounds: self.state_bounds,
            l_norm_sq: self.l_norm_sq,
            map_calls: Arc::default(),
        })
    }

    pub fn n_x(&self) -> usize {
        self.a.nrows()
    }

    pub fn n_u(&self) -> usize {
        self.b.ncols()
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    /// Length of the stacked input sequence.
    pub fn input_dim(&self) -> usize {
        self.horizon * self.n_u()
    }

    /// Length of the stacked state sequence `x_1..x_N`.
    pub fn state_dim(&self) -> usize {
        self.horizon * self.n_x()
    }

    pub fn dynamics(&self) -> (&DMatrix<f64>, &DMatrix<f64>) {
        (&self.a, &self.b)
    }

    pub fn initial_state(&self) -> &Vector {
        &self.x0
    }

    pub fn free_response(&self) -> &Vector {
        &self.free_response
    }

    /// Stacked diagonal of the state weights.
    pub fn state_weights(&self) -> &Vector {
        &self.weights
    }

    pub fn input_bounds(&self) -> (f64, f64) {
        self.input_bounds
    }

    pub fn state_bounds(&self) -> (f64, f64) {
        self.state_bounds
    }

    /// Inflated estimate of `|L|^2`.
    pub fn l_norm_squared(&self) -> f64 {
        self.l_norm_sq
    }

    /// Lipschitz constant of the gradient of the condensed cost.
    pub fn gradient_lipschitz(&self) -> f64 {
        self.weights.max() * self.l_norm_sq + 1.0
    }

    pub fn map_calls(&self) -> u64 {
        self.map_calls.get()
    }

    /// `L u`, counted.
    pub fn apply_l(&self, u: &Vector) -> Vector {
        self.map_calls.incr();
        self.l_uncounted(u)
    }

    /// `L^T y`, counted.
    pub fn apply_lt(&self, y: &Vector) -> Vector {
        self.map_calls.incr();
        self.lt_uncounted(y)
    }

    fn l_uncounted(&self, u: &Vector) -> Vector {
        assert_eq!(u.len(), self.input_dim(), "input sequence has the wrong length");
        let (nx, nu) = (self.n_x(), self.n_u());
        let mut out = Vector::zeros(self.state_dim());
        let mut x = Vector::zeros(nx);
        for t in 0..self.horizon {
            x = &self.a * x + &self.b * u.rows(t * nu, nu);
            out.rows_mut(t * nx, nx).copy_from(&x);
        }
        out
    }

    fn lt_uncounted(&self, y: &Vector) -> Vector {
        assert_eq!(y.len(), self.state_dim(), "state sequence has the wrong length");
        let (nx, nu) = (self.n_x(), self.n_u());
        let mut out = Vector::zeros(self.input_dim());
        let mut lam = Vector::zeros(nx);
        for t in (0..self.horizon).rev() {
            lam = self.a.tr_mul(&lam) + y.rows(t * nx, nx);
            out.rows_mut(t * nu, nu).copy_from(&self.b.tr_mul(&lam));
        }
        out
    }

    /// State trajectory `x_1..x_N` driven by `u` from `x0`; not counted.
    pub fn simulate(&self, u: &Vector) -> Vector {
        self.l_uncounted(u) + &self.free_response
    }

    pub fn cost(&self, u: &Vector) -> f64 {
        let x = self.simulate(u);
        0.5 * x.component_mul(&x).dot(&self.weights) + 0.5 * u.norm_squared()
    }

    pub fn project_inputs(&self, u: &Vector) -> Vector {
        let (lo, hi) = self.input_bounds;
        u.map(|v| v.clamp(lo, hi))
    }

    pub fn project_states(&self, x: &Vector) -> Vector {
        let (lo, hi) = self.state_bounds;
        x.map(|v| v.clamp(lo, hi))
    }

    /// `prox_{sigma h*}(v) = v - sigma proj_X(v/sigma + b) + sigma b`, where
    /// `h = ind_X(. + b)` and `b` is the free response.
    pub fn prox_conj_state_indicator(&self, v: &Vector, sigma: f64) -> Vector {
        let shifted = v / sigma + &self.free_response;
        v - (self.project_states(&shifted) - &self.free_response) * sigma
    }

    /// Searches for an input sequence satisfying every bound by projected
    /// gradient on `1/2 dist(L u + b, X_shrunk)^2` over `U`, where `X_shrunk`
    /// is the state box tightened by `margin`. Returns the first iterate whose
    /// trajectory lies in the (untightened) state box. `None` means no
    /// certificate was found within `max_iters`, not that the problem is
    /// infeasible. Uses uncounted applications of `L`.
    pub fn feasible_input(&self, margin: f64, max_iters: usize) -> Option<Vector> {
        let (lo, hi) = self.state_bounds;
        let step = 1.0 / self.l_norm_sq;
        let mut u = Vector::zeros(self.input_dim());
        for _ in 0..max_iters {
            let x = self.simulate(&u);
            if x.iter().all(|v| (lo..=hi).contains(v)) {
                return Some(u);
            }
            let excess = x.map(|v| v - v.clamp(lo + margin, hi - margin));
            u = self.project_inputs(&(&u - self.lt_uncounted(&excess) * step));
        }
        None
    }

    /// Largest violation of the input and state bounds along the trajectory of `u`.
    pub fn constraint_violation(&self, u: &Vector) -> f64 {
        let x = self.simulate(u);
        let du = (u - self.project_inputs(u)).amax();
        let dx = (&x - self.project_states(&x)).amax();
        du.max(dx)
    }
}

fn free_response(a: &DMatrix<f64>, x0: &Vector, horizon: usize) -> Vector {
    let nx = a.nrows();
    let mut out = Vector::zeros(horizon * nx);
    let mut x = x0.clone();
    for t in 0..horizon {
        x = a * x;
        out.rows_mut(t * nx, nx).copy_from(&x);
    }
    out
}

/// Primal and dual step sizes as fractions of their admissible ranges:
/// `tau = tau_fraction * 2 / L_f` and
/// `sigma = sigma_fraction * (1/tau - L_f/2) / |L|^2`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VuCondatSteps {
    pub tau_fraction: f64,
    pub sigma_fraction: f64,
}

impl Default for VuCondatSteps {
    fn default() -> Self {
        Self {
            tau_fraction: 0.5,
            sigma_fraction: 0.9,
        }
    }
}

impl VuCondatSteps {
    pub fn resolve(&self, prob: &OptimalControl) -> Result<(f64, f64)> {
        for (name, f) in [
            ("tau_fraction", self.tau_fraction),
            ("sigma_fraction", self.sigma_fraction),
        ] {
            if !(f > 0.0 && f < 1.0) {
                return Err(invalid(name, format!("must lie in (0, 1), got {f}")));
            }
        }
        let lf = prob.gradient_lipschitz();
        let tau = self.tau_fraction * 2.0 / lf;
        let sigma = self.sigma_fraction * (1.0 / tau - lf / 2.0) / prob.l_norm_squared();
        Ok((tau, sigma))
    }
}

/// Continuous-time dynamics of `2k` unit masses in a row between two walls,
/// joined by unit springs with viscous friction. Actuator `i` pushes masses
/// `2i` and `2i+1` (0-based) apart. State is `(positions, velocities)`.
pub fn oscillating_masses_continuous(k: usize) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    if k == 0 {
        return Err(invalid("k", "number of actuators must be positive"));
    }
    let nm = 2 * k;
    let mut ks = DMatrix::zeros(nm, nm);
    for i in 0..nm {
        ks[(i, i)] = 2.0 * SPRING;
        if i + 1 < nm {
            ks[(i, i + 1)] = -SPRING;
            ks[(i + 1, i)] = -SPRING;
        }
    }
    let mut a = DMatrix::zeros(2 * nm, 2 * nm);
    a.view_mut((0, nm), (nm, nm)).fill_with_identity();
    a.view_mut((nm, 0), (nm, nm)).copy_from(&(-ks));
    a.view_mut((nm, nm), (nm, nm)).fill_diagonal(-FRICTION);
    let mut b = DMatrix::zeros(2 * nm, k);
    for i in 0..k {
        b[(nm + 2 * i, i)] = 1.0;
        b[(nm + 2 * i + 1, i)] = -1.0;
    }
    Ok((a, b))
}

/// Zero-order-hold discretization via the exponential of `[[A, B], [0, 0]] ts`.
pub fn zoh_discretize(a: &DMatrix<f64>, b: &DMatrix<f64>, ts: f64) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let (nx, nu) = (a.nrows(), b.ncols());
    check_dim(nx, a.ncols())?;
    check_dim(nx, b.nrows())?;
    if !(ts > 0.0 && ts.is_finite()) {
        return Err(invalid("ts", "sample time must be positive"));
    }
    let mut aug = DMatrix::zeros(nx + nu, nx + nu);
    aug.view_mut((0, 0), (nx, nx)).copy_from(a);
    aug.view_mut((0, nx), (nx, nu)).copy_from(b);
    let e = (aug * ts).exp();
    Ok((
        e.view((0, 0), (nx, nx)).into_owned(),
        e.view((0, nx), (nx, nu)).into_owned(),
    ))
}

pub fn build_oscillating_masses(k: usize, horizon: usize, seed: u64) -> Result<ProblemInstance> {
    build_oscillating_masses_with(k, horizon, seed, VuCondatSteps::default())
}

/// Oscillating-masses control problem solved by the Vu-Condat map.
///
/// The state weights are drawn uniformly from a fixed range; the initial
/// state is drawn uniformly from the state box and redrawn until
/// [`OptimalControl::feasible_input`] certifies that some admissible input
/// keeps the trajectory within bounds.
pub fn build_oscillating_masses_with(
    k: usize,
    horizon: usize,
    seed: u64,
    steps: VuCondatSteps,
) -> Result<ProblemInstance> {
    let (ac, bc) = oscillating_masses_continuous(k)?;
    if horizon == 0 {
        return Err(invalid("horizon", "must be positive"));
    }
    let (a, b) = zoh_discretize(&ac, &bc, SAMPLE_TIME)?;
    let nx = a.nrows();
    let mut rng = rng(seed);
    let q = Vector::from_fn(nx, |_, _| rng.random_range(WEIGHT_RANGE.0..WEIGHT_RANGE.1));

    let template = OptimalControl::new(
        a,
        b,
        Vector::zeros(nx),
        horizon,
        q,
        (-INPUT_BOUND, INPUT_BOUND),
        (-STATE_BOUND, STATE_BOUND),
    )?;
    let mut prob = None;
    for _ in 0..MAX_REJECTIONS {
        let x0 = Vector::from_fn(nx, |_, _| rng.random_range(-STATE_BOUND..STATE_BOUND));
        let cand = template.with_initial_state(x0)?;
        if cand.feasible_input(CERTIFICATE_MARGIN, CERTIFICATE_ITERS).is_some() {
            prob = Some(cand);
            break;
        }
    }
    let prob = Arc::new(prob.ok_or_else(|| Error::Construction("no feasible initial state found".into()))?);
    let x0 = prob.initial_state().clone();
    let (tau, sigma) = steps.resolve(&prob)?;
    let operator = make_vu_condat(prob.clone(), tau, sigma)?;
    let dim = prob.input_dim() + prob.state_dim();
    let metadata = BTreeMap::from([
        ("tau".into(), json!(tau)),
        ("sigma".into(), json!(sigma)),
        (
            "alpha".into(),
            json!(vu_condat_alpha(
                prob.gradient_lipschitz(),
                prob.l_norm_squared(),
                tau,
                sigma
            )),
        ),
        ("l_norm_squared".into(), json!(prob.l_norm_squared())),
        ("x0".into(), json!(x0.as_slice())),
        ("n_x".into(), json!(nx)),
        ("n_u".into(), json!(k)),
    ]);
    Ok(ProblemInstance {
        spec: ProblemSpec::Masses { k, horizon, seed },
        operator,
        x0: Vector::zeros(dim),
        fixed_points: Vec::new(),
        data: ProblemData::Control(prob),
        metadata,
    })
}
