use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::{composed_alpha, AveragedOperator, ConvexSet, WorkKind};
use crate::error::{check_dim, invalid, Result};
use crate::operators::soft_threshold;
use crate::problems::{ConeProgram, Lasso, OptimalControl};
use crate::space::{Metric, MetricOperator, Vector};

/// Safety factor applied to power-iteration norm estimates.
pub const POWER_ITERATION_INFLATION: f64 = 1.01;

const POWER_ITERATION_MAX: usize = 200;
const POWER_ITERATION_RTOL: f64 = 1e-10;

/// Largest eigenvalue of a symmetric positive semidefinite operator, from a
/// fixed-seed start vector, inflated by [`POWER_ITERATION_INFLATION`].
pub fn power_iteration(dim: usize, apply: impl Fn(&Vector) -> Vector) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
    let mut v = Vector::from_fn(dim, |_, _| StandardNormal.sample(&mut rng));
    v /= v.norm();
    let mut lambda = 0.0f64;
    for _ in 0..POWER_ITERATION_MAX {
        let w = apply(&v);
        let next = w.norm();
        if next == 0.0 {
            return 0.0;
        }
        v = w / next;
        let done = (next - lambda).abs() <= POWER_ITERATION_RTOL * next;
        lambda = next;
        if done {
            break;
        }
    }
    lambda * POWER_ITERATION_INFLATION
}

/// `proj_{C2} o proj_{C1}`; composition of two firmly nonexpansive maps, hence 2/3-averaged.
pub fn make_alternating_projections(c1: ConvexSet, c2: ConvexSet) -> Result<AveragedOperator> {
    check_dim(c1.dim(), c2.dim())?;
    let dim = c1.dim();
    let alpha = composed_alpha(0.5, 0.5);
    AveragedOperator::new(
        "alternating-projections",
        dim,
        alpha,
        Metric::Euclidean,
        move |x: &Vector| {
            let y = c1.project(x).expect("dimension checked at construction");
            c2.project(&y).expect("dimension checked at construction")
        },
    )
}

/// Forward-backward (proximal gradient) map of the lasso problem with step `gamma`.
pub fn make_fbs(prob: Arc<Lasso>, gamma: f64) -> Result<AveragedOperator> {
    let lip = prob.lipschitz();
    if !(gamma > 0.0 && gamma * lip < 2.0) {
        return Err(invalid(
            "gamma",
            format!("step must lie in (0, 2/L) with L = {lip:.6e}, got {gamma}"),
        ));
    }
    let alpha = composed_alpha(gamma * lip / 2.0, 0.5);
    let dim = prob.a.ncols();
    let counter = prob.matvecs.clone();
    let thresh = gamma * prob.nu;
    let op = AveragedOperator::new("forward-backward", dim, alpha, Metric::Euclidean, move |x: &Vector| {
        let resid = prob.apply_a(x) - &prob.b;
        let mut z = x - prob.apply_at(&resid) * gamma;
        z.apply(|v| *v = soft_threshold(*v, thresh));
        z
    })?;
    Ok(op.with_work_counter(WorkKind::Matvecs, counter))
}

/// Douglas-Rachford map `u -> u + w - v` for the self-dual embedding
/// `0 in Q u + N_C(u)`, with `v = (I + Q)^{-1} u` and `w = proj_C(2v - u)`.
pub fn make_drs(prob: Arc<ConeProgram>) -> Result<AveragedOperator> {
    let dim = prob.embedding_dim();
    let cone = prob.embedding_cone()?;
    let counter = prob.linear_solves.clone();
    let op = AveragedOperator::new("douglas-rachford", dim, 0.5, Metric::Euclidean, move |u: &Vector| {
        let v = prob.solve_shifted(u);
        let w = cone.project(&(&v * 2.0 - u)).expect("embedding cone matches dimension");
        u + w - v
    })?;
    Ok(op.with_work_counter(WorkKind::LinearSolves, counter))
}

/// Averagedness constant `1 / (2 - delta)` of the Vu-Condat map in the
/// `P`-metric, with `delta = (L_f / 2) / (1/tau - sigma ||L||^2)`.
pub fn vu_condat_alpha(lf: f64, l_norm_sq: f64, tau: f64, sigma: f64) -> f64 {
    let delta = 0.5 * lf / (1.0 / tau - sigma * l_norm_sq);
    1.0 / (2.0 - delta)
}

/// `P = [[I/tau, -L^T], [-L, I/sigma]]` on stacked primal/dual vectors.
#[derive(Debug)]
pub struct VuCondatMetric {
    prob: Arc<OptimalControl>,
    tau: f64,
    sigma: f64,
}

impl VuCondatMetric {
    pub fn new(prob: Arc<OptimalControl>, tau: f64, sigma: f64) -> Self {
        Self { prob, tau, sigma }
    }

    fn split<'a>(&self, z: &'a Vector) -> (nalgebra::DVectorView<'a, f64>, nalgebra::DVectorView<'a, f64>) {
        let n = self.prob.input_dim();
        (z.rows(0, n), z.rows(n, z.len() - n))
    }
}

impl MetricOperator for VuCondatMetric {
    fn dim(&self) -> usize {
        self.prob.input_dim() + self.prob.state_dim()
    }

    fn apply(&self, z: &Vector) -> Vector {
        let (x, y) = self.split(z);
        let top = x / self.tau - self.prob.apply_lt(&y.into_owned());
        let bottom = y / self.sigma - self.prob.apply_l(&x.into_owned());
        let mut out = Vector::zeros(z.len());
        out.rows_mut(0, top.len()).copy_from(&top);
        out.rows_mut(top.len(), bottom.len()).copy_from(&bottom);
        out
    }

    fn inner(&self, u: &Vector, v: &Vector) -> f64 {
        let (ux, uy) = self.split(u);
        let (vx, vy) = self.split(v);
        let lux = self.prob.apply_l(&ux.into_owned());
        let lvx = self.prob.apply_l(&vx.into_owned());
        ux.dot(&vx) / self.tau + uy.dot(&vy) / self.sigma - uy.dot(&lvx) - vy.dot(&lux)
    }

    fn norm_squared(&self, u: &Vector) -> f64 {
        let (x, y) = self.split(u);
        let lx = self.prob.apply_l(&x.into_owned());
        x.norm_squared() / self.tau + y.norm_squared() / self.sigma - 2.0 * y.dot(&lx)
    }
}

/// Vu-Condat primal-dual map for the box-constrained optimal control
/// problem `min f(u) + ind_U(u) + ind_X(L u + b)`:
///
/// ```text
/// u+ = proj_U(u - tau (grad f(u) + L^T y))
/// y+ = prox_{sigma h*}(y + sigma L (2 u+ - u))
/// ```
///
/// averaged in the metric induced by [`VuCondatMetric`].
pub fn make_vu_condat(prob: Arc<OptimalControl>, tau: f64, sigma: f64) -> Result<AveragedOperator> {
    let lf = prob.gradient_lipschitz();
    let l2 = prob.l_norm_squared();
    if !(tau > 0.0 && tau < 2.0 / lf) {
        return Err(invalid(
            "tau",
            format!("need 0 < tau < 2/L_f = {:.6e}, got {tau}", 2.0 / lf),
        ));
    }
    let sigma_max = (1.0 / tau - lf / 2.0) / l2;
    if !(sigma > 0.0 && sigma < sigma_max) {
        return Err(invalid(
            "sigma",
            format!("need 0 < sigma < (1/tau - L_f/2)/||L||^2 = {sigma_max:.6e}, got {sigma}"),
        ));
    }
    let alpha = vu_condat_alpha(lf, l2, tau, sigma).min(1.0);
    let metric = Metric::induced(VuCondatMetric::new(prob.clone(), tau, sigma));
    let nu = prob.input_dim();
    let nx = prob.state_dim();
    let counter = prob.map_calls.clone();
    let op = AveragedOperator::new("vu-condat", nu + nx, alpha, metric, move |z: &Vector| {
        let u = z.rows(0, nu).into_owned();
        let y = z.rows(nu, nx).into_owned();
        // grad f(u) + L^T y = L^T (Q (L u + b) + y) + u
        let states = prob.apply_l(&u) + prob.free_response();
        let dual_in = prob.state_weights().component_mul(&states) + &y;
        let step = &u - (prob.apply_lt(&dual_in) + &u) * tau;
        let u_next = prob.project_inputs(&step);
        let extrap = &u_next * 2.0 - &u;
        let v = &y + prob.apply_l(&extrap) * sigma;
        let y_next = prob.prox_conj_state_indicator(&v, sigma);
        let mut out = Vector::zeros(nu + nx);
        out.rows_mut(0, nu).copy_from(&u_next);
        out.rows_mut(nu, nx).copy_from(&y_next);
        out
    })?;
    Ok(op.with_work_counter(WorkKind::LinearMapCalls, counter))
}
