//! Separating halfspaces of the fixed-point set and the generalized KM update.
//!
//! For an `alpha`-averaged `T` with residual `R = id - T`, every trial point
//! `w` defines the halfspace
//!
//! ```text
//! C_w = { z : |Rw|^2 - 2 alpha <Rw, w - z> <= 0 }  which contains fix T.
//! ```
//!
//! The scalar `rho = |Rw|^2 - 2 alpha <Rw, w - x>` is positive exactly when
//! `x` lies outside `C_w`, and the update moves `x` toward `C_w` by a
//! relaxed projection. All inner products use the operator's metric.

use crate::error::Result;
use crate::space::{Metric, Vector};

/// `|Rw|` below this fraction of `max(1, |Rx|)` marks `w` as a fixed point.
pub const FIXED_POINT_GUARD: f64 = 1e-14;

/// `rho = |Rw|^2 - 2 alpha <Rw, w - x>`.
pub fn separation_rho(x: &Vector, w: &Vector, rw: &Vector, alpha: f64, metric: &Metric) -> Result<f64> {
    Ok(metric.norm_squared(rw)? - 2.0 * alpha * metric.inner(rw, &(w - x))?)
}

/// `(rho, |Rw|)` with a single application of the metric operator.
pub fn separation_and_norm(x: &Vector, w: &Vector, rw: &Vector, alpha: f64, metric: &Metric) -> Result<(f64, f64)> {
    let prw = metric.apply(rw)?;
    let n2 = rw.dot(&prw).max(0.0);
    Ok((n2 - 2.0 * alpha * prw.dot(&(w - x)), n2.sqrt()))
}

/// `x+ = x - lambda [rho]_+ / |Rw|^2 Rw`, and `x+ = x` when `Rw = 0`.
pub fn gkm_update(x: &Vector, _w: &Vector, rw: &Vector, rho: f64, lambda: f64, metric: &Metric) -> Result<Vector> {
    Ok(gkm_update_with_norm(x, rw, rho, lambda, metric.norm(rw)?))
}

/// [`gkm_update`] with `|Rw|` already known.
pub fn gkm_update_with_norm(x: &Vector, rw: &Vector, rho: f64, lambda: f64, norm_rw: f64) -> Vector {
    if norm_rw == 0.0 || rho <= 0.0 {
        return x.clone();
    }
    x - rw * (lambda * rho / (norm_rw * norm_rw))
}

/// Line-search acceptance test `rho >= sigma |Rw| |Rx|`.
pub fn accepts(rho: f64, norm_rw: f64, norm_rx: f64, sigma: f64) -> bool {
    rho >= sigma * norm_rw * norm_rx
}

/// A trial point together with the quantities the acceptance test needs.
#[derive(Debug, Clone)]
pub struct GkmCandidate {
    pub x: Vector,
    pub w: Vector,
    pub rw: Vector,
    pub rho: f64,
    pub norm_rw: f64,
    pub norm_rx: f64,
}

impl GkmCandidate {
    pub fn new(x: &Vector, w: Vector, rw: Vector, norm_rx: f64, alpha: f64, metric: &Metric) -> Result<Self> {
        let norm_rw = metric.norm(&rw)?;
        let rho = separation_rho(x, &w, &rw, alpha, metric)?;
        Ok(Self {
            x: x.clone(),
            w,
            rw,
            rho,
            norm_rw,
            norm_rx,
        })
    }

    /// `w` is numerically a fixed point.
    pub fn is_fixed_point(&self) -> bool {
        self.norm_rw < FIXED_POINT_GUARD * self.norm_rx.max(1.0)
    }

    pub fn accepts(&self, sigma: f64) -> bool {
        accepts(self.rho, self.norm_rw, self.norm_rx, sigma)
    }

    /// GKM step from `x`, or `w` itself when `w` is numerically fixed.
    pub fn next_iterate(&self, lambda: f64, metric: &Metric) -> Result<Vector> {
        if self.is_fixed_point() {
            return Ok(self.w.clone());
        }
        gkm_update(&self.x, &self.w, &self.rw, self.rho, lambda, metric)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::operators::{make_alternating_projections, AveragedOperator, ConvexSet};
    use crate::problems::{build_ball_line_example, build_cones_example, build_soc_example, ProblemInstance};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn v(xs: &[f64]) -> Vector {
        Vector::from_column_slice(xs)
    }

    fn axis_projection() -> AveragedOperator {
        // T = projection onto {x1 = 0}
        let c = ConvexSet::hyperplane(v(&[1.0, 0.0]), 0.0).unwrap();
        AveragedOperator::new("proj", 2, 0.5, Metric::Euclidean, move |x: &Vector| {
            c.project(x).unwrap()
        })
        .unwrap()
    }

    #[test]
    fn worked_projection_example() {
        let op = axis_projection();
        let x = v(&[2.0, 0.0]);
        let w = v(&[1.0, 1.0]);
        let rw = op.residual(&w);
        assert_eq!(rw, v(&[1.0, 0.0]));
        let rho = separation_rho(&x, &w, &rw, 0.5, &Metric::Euclidean).unwrap();
        assert_eq!(rho, 2.0);
        let next = gkm_update(&x, &w, &rw, rho, 1.0, &Metric::Euclidean).unwrap();
        assert_eq!(next, v(&[0.0, 0.0]));
        assert!(accepts(rho, 1.0, 1.0, 0.1));
    }

    #[test]
    fn trivial_cases() {
        let op = axis_projection();
        let m = Metric::Euclidean;
        let x = v(&[3.0, -1.0]);
        let rx = op.residual(&x);
        let rho = separation_rho(&x, &x, &rx, 0.5, &m).unwrap();
        assert_eq!(rho, rx.norm_squared());
        assert!(accepts(rho, rx.norm(), rx.norm(), 0.99));
        // fixed-point w
        let w = v(&[0.0, 4.0]);
        let rw = op.residual(&w);
        assert_eq!(separation_rho(&x, &w, &rw, 0.5, &m).unwrap(), 0.0);
        assert_eq!(gkm_update(&x, &w, &rw, 0.0, 1.0, &m).unwrap(), x);
        // nonpositive rho leaves x in place
        assert_eq!(gkm_update(&x, &w, &rx, -1.0, 1.0, &m).unwrap(), x);
        assert!(!accepts(0.0, 1.0, 1.0, 0.1));
        // d = 0 reduces to the relaxed step
        for lambda in [0.5, 1.0, 2.0] {
            let next = gkm_update(&x, &x, &rx, rho, lambda, &m).unwrap();
            let km = op.relax(&x, &op.apply(&x), lambda).unwrap();
            assert!((next - km).amax() <= 1e-15);
        }
    }

    #[test]
    fn candidate_guard_returns_w() {
        let op = axis_projection();
        let x = v(&[3.0, -1.0]);
        let w = v(&[0.0, 4.0]);
        let rx = op.residual(&x);
        let c = GkmCandidate::new(&x, w.clone(), op.residual(&w), rx.norm(), 0.5, &Metric::Euclidean).unwrap();
        assert!(c.is_fixed_point());
        assert_eq!(c.next_iterate(1.0, &Metric::Euclidean).unwrap(), w);
    }

    #[test]
    fn full_projection_onto_halfspace() {
        // with lambda = 1/(2 alpha) the update is the projection onto C_w
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let p = build_cones_example().unwrap();
        let op = &p.operator;
        let alpha = op.alpha();
        let m = Metric::Euclidean;
        let mut checked = 0;
        for _ in 0..500 {
            let x = v(&[rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0)]);
            let w = v(&[rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0)]);
            let rw = op.residual(&w);
            let rho = separation_rho(&x, &w, &rw, alpha, &m).unwrap();
            if rho <= 0.0 || rw.norm() < 1e-8 {
                continue;
            }
            // C_w = { z : <Rw, z> <= <Rw, w> - |Rw|^2 / (2 alpha) }
            let offset = rw.dot(&w) - rw.norm_squared() / (2.0 * alpha);
            let h = ConvexSet::halfspace(rw.clone(), offset).unwrap();
            let next = gkm_update(&x, &w, &rw, rho, 1.0 / (2.0 * alpha), &m).unwrap();
            let proj = h.project(&x).unwrap();
            assert!((next - proj).amax() <= 1e-12 * (1.0 + x.amax()));
            checked += 1;
        }
        assert!(checked > 50);
    }

    fn examples() -> Vec<ProblemInstance> {
        vec![
            build_cones_example().unwrap(),
            build_ball_line_example().unwrap(),
            build_soc_example().unwrap(),
        ]
    }

    #[test]
    fn fixed_points_lie_in_every_halfspace() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        for p in examples() {
            let n = p.x0.len();
            for _ in 0..500 {
                let w = Vector::from_fn(n, |_, _| rng.random_range(-3.0..3.0));
                let rw = p.operator.residual(&w);
                for z in &p.fixed_points {
                    let val = rw.norm_squared() - 2.0 * p.operator.alpha() * rw.dot(&(&w - z));
                    assert!(val <= 1e-10, "{}: {val}", p.name());
                }
            }
        }
    }

    #[test]
    fn fejer_decrease_on_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let m = Metric::Euclidean;
        for p in examples() {
            let n = p.x0.len();
            let alpha = p.operator.alpha();
            for _ in 0..500 {
                let x = Vector::from_fn(n, |_, _| rng.random_range(-3.0..3.0));
                let d = Vector::from_fn(n, |_, _| rng.random_range(-3.0..3.0));
                let tau = rng.random_range(0.0..1.0);
                let lambda = rng.random_range(0.01..0.99) / alpha;
                let w = &x + &d * tau;
                let rw = p.operator.residual(&w);
                let rho = separation_rho(&x, &w, &rw, alpha, &m).unwrap();
                if rho <= 0.0 {
                    continue;
                }
                let next = gkm_update(&x, &w, &rw, rho, lambda, &m).unwrap();
                let decrease = lambda * (1.0 / alpha - lambda) * rho * rho / rw.norm_squared();
                for z in &p.fixed_points {
                    let before = (&x - z).norm_squared();
                    let after = (&next - z).norm_squared();
                    assert!(after <= before - decrease + 1e-10 * before, "{}", p.name());
                }
            }
        }
    }

    fn random_set(rng: &mut ChaCha8Rng, n: usize) -> ConvexSet {
        let c = Vector::from_fn(n, |_, _| rng.random_range(-2.0..2.0));
        match rng.random_range(0..3) {
            0 => ConvexSet::ball(c, rng.random_range(0.1..2.0)).unwrap(),
            1 => ConvexSet::halfspace(c, rng.random_range(-1.0..1.0)).unwrap(),
            _ => {
                let lo: Vec<f64> = c.iter().map(|v| v - 1.0).collect();
                let hi: Vec<f64> = c.iter().map(|v| v + 0.5).collect();
                ConvexSet::boxed(lo, hi).unwrap()
            }
        }
    }

    #[test]
    fn line_search_guarantee() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let m = Metric::Euclidean;
        let mut trials = 0;
        while trials < 1000 {
            let n = rng.random_range(2..6);
            let c1 = random_set(&mut rng, n);
            let c2 = random_set(&mut rng, n);
            let op = make_alternating_projections(c1, c2).unwrap();
            let alpha = op.alpha();
            let x = Vector::from_fn(n, |_, _| rng.random_range(-5.0..5.0));
            let d = Vector::from_fn(n, |_, _| rng.random_range(-5.0..5.0));
            let rx = op.residual(&x);
            if rx.norm() == 0.0 || d.norm() == 0.0 {
                continue;
            }
            let sigma = rng.random_range(0.0..1.0);
            let tau_max = (1.0 - sigma) * rx.norm() / (4.0 * alpha * d.norm());
            let tau = tau_max * rng.random_range(0.0..=1.0);
            let w = &x + &d * tau;
            let cand = GkmCandidate::new(&x, w, op.residual(&(&x + &d * tau)), rx.norm(), alpha, &m).unwrap();
            assert!(cand.accepts(sigma), "tau {tau} rho {}", cand.rho);
            trials += 1;
        }
    }

    proptest! {
        #[test]
        fn rho_recomputes_exactly(
            x in prop::collection::vec(-5.0f64..5.0, 2),
            w in prop::collection::vec(-5.0f64..5.0, 2),
        ) {
            let p = build_ball_line_example().unwrap();
            let x = Vector::from_vec(x);
            let w = Vector::from_vec(w);
            let rw = p.operator.residual(&w);
            let c = GkmCandidate::new(&x, w.clone(), rw.clone(), 1.0, p.operator.alpha(), &Metric::Euclidean).unwrap();
            let direct = rw.norm_squared() - 2.0 * p.operator.alpha() * rw.dot(&(&w - &x));
            prop_assert!((c.rho - direct).abs() <= 1e-14 * (1.0 + direct.abs()));
            let (rho, nrw) = separation_and_norm(&x, &w, &rw, p.operator.alpha(), &Metric::Euclidean).unwrap();
            prop_assert!((rho - direct).abs() <= 1e-14 * (1.0 + direct.abs()));
            prop_assert!((nrw - rw.norm()).abs() <= 1e-14 * (1.0 + nrw));
        }
    }
}
