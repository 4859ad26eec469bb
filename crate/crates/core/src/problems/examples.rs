//! Two- and three-dimensional alternating-projection examples with known
//! fixed-point sets.

use std::collections::BTreeMap;

use serde_json::json;

use super::{ProblemData, ProblemInstance, ProblemSpec};
use crate::error::Result;
use crate::operators::{make_alternating_projections, ConvexSet};
use crate::space::Vector;

fn v(xs: &[f64]) -> Vector {
    Vector::from_column_slice(xs)
}

/// `{x in R^2 : lo x1 <= x2 <= hi x1}` as two halfspaces through the origin.
fn wedge(lo: f64, hi: f64) -> Result<ConvexSet> {
    ConvexSet::polyhedron(vec![(v(&[lo, -1.0]), 0.0), (v(&[-hi, 1.0]), 0.0)])
}

/// Two thin polyhedral cones meeting only at the origin; KM is linear but
/// very slow because of the small angle between them.
pub fn build_cones_example() -> Result<ProblemInstance> {
    let first = wedge(0.1, 0.2)?;
    let second = wedge(0.3, 0.35)?;
    let operator = make_alternating_projections(first.clone(), second.clone())?;
    Ok(ProblemInstance {
        spec: ProblemSpec::Cones,
        operator,
        x0: v(&[1.0, 0.15]),
        fixed_points: vec![Vector::zeros(2)],
        data: ProblemData::Sets { first, second },
        metadata: BTreeMap::from([("fix_set".into(), json!("{0}"))]),
    })
}

/// Unit ball and the tangent line `x1 = 1`; the residual is not metrically
/// subregular at the tangency point `(1, 0)`.
///
/// The point `(0, 1)` also appears in the literature for this example, but
/// with `C2 = {x1 = 1}` only `(1, 0)` lies in both sets.
pub fn build_ball_line_example() -> Result<ProblemInstance> {
    let first = ConvexSet::ball(Vector::zeros(2), 1.0)?;
    let second = ConvexSet::hyperplane(v(&[1.0, 0.0]), 1.0)?;
    let operator = make_alternating_projections(first.clone(), second.clone())?;
    Ok(ProblemInstance {
        spec: ProblemSpec::BallLine,
        operator,
        x0: v(&[1f64.cos(), 1f64.sin()]),
        fixed_points: vec![v(&[1.0, 0.0])],
        data: ProblemData::Sets { first, second },
        metadata: BTreeMap::from([("fix_set".into(), json!("{(1, 0)}"))]),
    })
}

/// Point `(0, t, 0.1 t)` of the ray where the cone `x3 >= 0.1 |(x1, x2)|`
/// touches its tangent plane `x3 = 0.1 x2`.
pub fn soc_example_ray_point(t: f64) -> Vector {
    v(&[0.0, t, 0.1 * t])
}

/// Second-order cone and a tangent plane; every fixed point is nonisolated.
pub fn build_soc_example() -> Result<ProblemInstance> {
    let first = ConvexSet::second_order_cone(3, 0.1)?;
    let second = ConvexSet::hyperplane(v(&[0.0, -0.1, 1.0]), 0.0)?;
    let operator = make_alternating_projections(first.clone(), second.clone())?;
    let fixed_points = [0.0, 0.25, 0.5, 1.0, 2.0, 4.0]
        .iter()
        .map(|&t| soc_example_ray_point(t))
        .collect();
    Ok(ProblemInstance {
        spec: ProblemSpec::Soc,
        operator,
        x0: v(&[1.0, 1.0, 1.0]),
        fixed_points,
        data: ProblemData::Sets { first, second },
        metadata: BTreeMap::from([("fix_set".into(), json!("{(0, t, 0.1 t) : t >= 0}"))]),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cones_fixed_point_and_membership() {
        let p = build_cones_example().unwrap();
        assert_eq!(p.operator.residual(&Vector::zeros(2)), Vector::zeros(2));
        let ProblemData::Sets { first, second } = &p.data else {
            unreachable!()
        };
        let x = v(&[1.0, 0.15]);
        assert_eq!(first.project(&x).unwrap(), x);
        // x lies below C2 = {0.3 x1 <= x2 <= 0.35 x1}; only the lower face is active
        let expected = {
            let a = v(&[0.3, -1.0]);
            &x - &a * (a.dot(&x) / a.norm_squared())
        };
        let p2 = second.project(&x).unwrap();
        assert!((&p2 - &expected).amax() < 1e-15);
        assert!((p.operator.apply(&x) - &p2).amax() < 1e-15);
        assert!(p.operator.residual(&x).norm() > 0.0);
        assert!((p.operator.alpha() - 2.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn cones_projection_matches_least_squares_oracle() {
        let p = build_cones_example().unwrap();
        let ProblemData::Sets { second, .. } = &p.data else {
            unreachable!()
        };
        let x = v(&[1.0, 0.15]);
        // minimise |y - x|^2 over the wedge by scanning its two boundary rays
        // and its interior on a fine polar grid
        let mut best = f64::INFINITY;
        let mut arg = Vector::zeros(2);
        for i in 0..=2000 {
            let slope = 0.3 + 0.05 * i as f64 / 2000.0;
            let u = v(&[1.0, slope]) / (1.0f64 + slope * slope).sqrt();
            let y = &u * x.dot(&u).max(0.0);
            let d = (&x - &y).norm_squared();
            if d < best {
                best = d;
                arg = y;
            }
        }
        assert!((second.project(&x).unwrap() - arg).norm() < 1e-10);
    }

    #[test]
    fn ball_line_examples() {
        let p = build_ball_line_example().unwrap();
        assert_eq!(p.operator.residual(&v(&[1.0, 0.0])), Vector::zeros(2));
        let ProblemData::Sets { first, second } = &p.data else {
            unreachable!()
        };
        assert_eq!(first.project(&Vector::zeros(2)).unwrap(), Vector::zeros(2));
        assert_eq!(second.project(&Vector::zeros(2)).unwrap(), v(&[1.0, 0.0]));
    }

    #[test]
    fn soc_ray_is_fixed() {
        let p = build_soc_example().unwrap();
        assert_eq!(p.operator.residual(&Vector::zeros(3)), Vector::zeros(3));
        for t in [0.1, 1.0, 3.0, 17.5] {
            let z = soc_example_ray_point(t);
            assert!(p.operator.residual(&z).norm() <= 1e-12, "t = {t}");
        }
        // off the ray is not fixed
        assert!(p.operator.residual(&v(&[1.0, 1.0, 0.1])).norm() > 1e-3);
    }
}
