use std::collections::BTreeMap;
use std::sync::Arc;

use nalgebra::DMatrix;
use rand::Rng;
use serde_json::json;

use super::{normal, rng, ProblemData, ProblemInstance, ProblemSpec};
use crate::engine::Termination;
use crate::error::{check_dim, invalid, Result};
use crate::operators::{make_fbs, power_iteration, soft_threshold, Counter};
use crate::space::Vector;

/// Fraction of nonzeros in the planted sparse signal.
const PLANTED_SPARSITY: f64 = 0.05;
const NOISE_STD: f64 = 0.01;

/// `minimize 1/2 |A x - b|^2 + nu |x|_1`
#[derive(Debug)]
pub struct Lasso {
    pub a: DMatrix<f64>,
    pub b: Vector,
    pub nu: f64,
    lipschitz: f64,
    pub(crate) matvecs: Arc<Counter>,
}

impl Lasso {
    pub fn new(a: DMatrix<f64>, b: Vector, nu: f64) -> Result<Self> {
        check_dim(a.nrows(), b.len())?;
        if !(nu > 0.0 && nu.is_finite()) {
            return Err(invalid("nu", "regularization weight must be positive"));
        }
        let at = a.transpose();
        let lipschitz = power_iteration(a.ncols(), |x| &at * (&a * x));
        Ok(Self {
            a,
            b,
            nu,
            lipschitz,
            matvecs: Arc::default(),
        })
    }

    /// Inflated estimate of `|A^T A|`.
    pub fn lipschitz(&self) -> f64 {
        self.lipschitz
    }

    pub fn apply_a(&self, x: &Vector) -> Vector {
        self.matvecs.incr();
        &self.a * x
    }

    pub fn apply_at(&self, y: &Vector) -> Vector {
        self.matvecs.incr();
        self.a.tr_mul(y)
    }

    pub fn matvecs(&self) -> u64 {
        self.matvecs.get()
    }

    pub fn objective(&self, x: &Vector) -> f64 {
        0.5 * (&self.a * x - &self.b).norm_squared() + self.nu * x.lp_norm(1)
    }

    /// `A^T (A x - b)`, not counted as work.
    pub fn gradient(&self, x: &Vector) -> Vector {
        self.a.tr_mul(&(&self.a * x - &self.b))
    }

    /// Worst violation of `0 in A^T(Ax - b) + nu d|x|_1`, relative to `nu`.
    /// Coordinates with `|x_i| <= zero_tol` are treated as zero.
    pub fn optimality_violation(&self, x: &Vector, zero_tol: f64) -> f64 {
        let g = self.gradient(x);
        g.iter()
            .zip(x.iter())
            .map(|(gi, xi)| {
                if xi.abs() <= zero_tol {
                    (gi.abs() - self.nu).max(0.0)
                } else {
                    (gi + self.nu * xi.signum()).abs()
                }
            })
            .fold(0.0, f64::max)
            / self.nu
    }

    /// `soft_threshold(x - gamma grad f(x), gamma nu)`, the forward-backward
    /// image of `x`, computed without counting work.
    pub fn prox_gradient_point(&self, x: &Vector, gamma: f64) -> Vector {
        let mut z = x - self.gradient(x) * gamma;
        let t = gamma * self.nu;
        z.apply(|v| *v = soft_threshold(*v, t));
        z
    }
}

/// Stops once the forward-backward image `z` of the iterate satisfies the
/// subgradient optimality conditions to within `tol` relative to `nu`; in
/// particular `|A^T (A z - b)|_inf <= nu (1 + tol)`.
#[derive(Debug, Clone)]
pub struct LassoTermination {
    prob: Arc<Lasso>,
    gamma: f64,
    tol: f64,
}

impl LassoTermination {
    pub fn new(prob: Arc<Lasso>, gamma: f64, tol: f64) -> Self {
        Self { prob, gamma, tol }
    }
}

impl Termination for LassoTermination {
    fn reached(&self, x: &Vector) -> bool {
        let z = self.prob.prox_gradient_point(x, self.gamma);
        self.prob.optimality_violation(&z, 0.0) <= self.tol
    }
}

/// Random lasso instance: `A` with i.i.d. `N(0, 1/m)` entries, `b = A x + noise`
/// for a sparse planted `x`; solved by forward-backward splitting with `gamma = 1/L`.
pub fn build_lasso(m: usize, n: usize, nu: f64, seed: u64) -> Result<ProblemInstance> {
    if m == 0 || n == 0 {
        return Err(invalid("m, n", "lasso dimensions must be positive"));
    }
    let mut rng = rng(seed);
    let scale = 1.0 / (m as f64).sqrt();
    let a = DMatrix::from_fn(m, n, |_, _| scale * normal(&mut rng));
    let planted = Vector::from_fn(n, |_, _| {
        if rng.random::<f64>() < PLANTED_SPARSITY {
            normal(&mut rng)
        } else {
            0.0
        }
    });
    let noise = Vector::from_fn(m, |_, _| NOISE_STD * normal(&mut rng));
    let b = &a * &planted + noise;
    let lasso = Arc::new(Lasso::new(a, b, nu)?);
    let gamma = 1.0 / lasso.lipschitz();
    let operator = make_fbs(lasso.clone(), gamma)?;
    let metadata = BTreeMap::from([
        ("gamma".into(), json!(gamma)),
        ("lipschitz".into(), json!(lasso.lipschitz())),
        (
            "planted_nnz".into(),
            json!(planted.iter().filter(|v| **v != 0.0).count()),
        ),
    ]);
    let at_b_sup = lasso.a.tr_mul(&lasso.b).amax();
    let fixed_points = if nu >= at_b_sup {
        vec![Vector::zeros(n)]
    } else {
        Vec::new()
    };
    Ok(ProblemInstance {
        spec: ProblemSpec::Lasso { m, n, nu, seed },
        operator,
        x0: Vector::zeros(n),
        fixed_points,
        data: ProblemData::Lasso(lasso),
        metadata,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn one_dimensional_prox_gradient_step() {
        let lasso = Arc::new(Lasso::new(DMatrix::from_element(1, 1, 1.0), Vector::from_element(1, 5.0), 1.0).unwrap());
        // gamma = 1 is admissible since L = 1.01 after inflation
        let op = make_fbs(lasso.clone(), 1.0).unwrap();
        let x = Vector::from_element(1, 5.0);
        assert_eq!(op.apply(&x)[0], 4.0);
        assert_eq!(op.residual(&x)[0], 1.0);
        assert_eq!(lasso.matvecs(), 4);
    }

    #[test]
    fn zero_data_has_zero_fixed_point() {
        let lasso = Arc::new(Lasso::new(DMatrix::from_element(3, 2, 0.5), Vector::zeros(3), 0.1).unwrap());
        let op = make_fbs(lasso.clone(), 0.5).unwrap();
        assert_eq!(op.apply(&Vector::zeros(2)), Vector::zeros(2));
    }

    #[test]
    fn step_out_of_range_is_rejected() {
        let lasso = Arc::new(Lasso::new(DMatrix::from_element(1, 1, 1.0), Vector::from_element(1, 5.0), 1.0).unwrap());
        assert!(make_fbs(lasso.clone(), 0.0).is_err());
        assert!(make_fbs(lasso, 2.0).is_err());
    }

    #[test]
    fn large_nu_gives_zero_solution() {
        let p = build_lasso(20, 40, 1e3, 1).unwrap();
        assert_eq!(p.fixed_points.len(), 1);
        assert_eq!(p.operator.residual(&Vector::zeros(40)).norm(), 0.0);
    }

    #[test]
    fn prox_point_matches_operator_without_counting() {
        let p = build_lasso(20, 40, 0.1, 3).unwrap();
        let ProblemData::Lasso(l) = &p.data else { unreachable!() };
        let gamma = 1.0 / l.lipschitz();
        let x = Vector::from_fn(40, |i, _| (i as f64).sin());
        let z = l.prox_gradient_point(&x, gamma);
        assert_eq!(l.matvecs(), 0);
        assert!((z - p.operator.apply(&x)).amax() <= 1e-12);
    }

    #[test]
    fn termination_accepts_known_solution_only() {
        // nu >= |A^T b|_inf makes 0 optimal
        let lasso = Arc::new(Lasso::new(DMatrix::from_element(1, 1, 1.0), Vector::from_element(1, 0.5), 1.0).unwrap());
        let stop = LassoTermination::new(lasso.clone(), 0.5, 1e-6);
        assert!(stop.reached(&Vector::zeros(1)));
        assert!(!stop.reached(&Vector::from_element(1, 3.0)));
        // b = 5, nu = 1: minimizer x = 4 with gradient -1 = -nu sign(x)
        let lasso = Arc::new(Lasso::new(DMatrix::from_element(1, 1, 1.0), Vector::from_element(1, 5.0), 1.0).unwrap());
        let stop = LassoTermination::new(lasso, 0.5, 1e-6);
        assert!(stop.reached(&Vector::from_element(1, 4.0)));
        assert!(!stop.reached(&Vector::from_element(1, 3.9)));
    }

    #[test]
    fn builder_is_deterministic() {
        let a = build_lasso(15, 30, 1e-2, 9).unwrap();
        let b = build_lasso(15, 30, 1e-2, 9).unwrap();
        let (ProblemData::Lasso(a), ProblemData::Lasso(b)) = (&a.data, &b.data) else {
            unreachable!()
        };
        assert_eq!(a.a, b.a);
        assert_eq!(a.b, b.b);
    }
}
