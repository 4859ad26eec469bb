//! Conic programs `min <c, x> s.t. A x + s = b, s in K` through their
//! homogeneous self-dual embedding.

use std::collections::BTreeMap;
use std::sync::Arc;

use nalgebra::{DMatrix, Dyn, LU};
use rand::Rng;
use serde::{Deserialize, Serialize};
use serde_json::json;

use super::{normal, rng, ProblemData, ProblemInstance, ProblemSpec};
use crate::engine::Termination;
use crate::error::{check_dim, invalid, Error, Result};
use crate::operators::{make_drs, ConvexSet, Counter};
use crate::space::Vector;

/// Scale component below which the embedding point is read as a certificate.
const DEGENERATE_SCALE: f64 = 1e-12;
/// Size of each second-order cone block in generated instances.
const SOC_BLOCK: usize = 3;

/// Sizes of the cone blocks, in order: nonnegative orthant then second-order cones.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConeLayout {
    pub orthant: usize,
    pub soc: Vec<usize>,
}

impl ConeLayout {
    pub fn dim(&self) -> usize {
        self.orthant + self.soc.iter().sum::<usize>()
    }

    pub fn to_set(&self) -> Result<ConvexSet> {
        let mut blocks = Vec::new();
        if self.orthant > 0 {
            blocks.push(ConvexSet::NonnegOrthant { dim: self.orthant });
        }
        for &d in &self.soc {
            blocks.push(ConvexSet::second_order_cone(d, 1.0)?);
        }
        ConvexSet::product(blocks)
    }
}

pub struct ConeProgram {
    pub a: DMatrix<f64>,
    pub b: Vector,
    pub c: Vector,
    pub layout: ConeLayout,
    cone: ConvexSet,
    q: DMatrix<f64>,
    shifted: LU<f64, Dyn, Dyn>,
    pub(crate) linear_solves: Arc<Counter>,
}

impl std::fmt::Debug for ConeProgram {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ConeProgram")
            .field("m", &self.a.nrows())
            .field("n", &self.a.ncols())
            .field("layout", &self.layout)
            .finish()
    }
}

/// Normalized primal residual, dual residual and duality gap.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ConeResiduals {
    pub primal: f64,
    pub dual: f64,
    pub gap: f64,
    /// The scale component was (numerically) zero; the numbers are
    /// unnormalized certificate residuals.
    pub degenerate_scale: bool,
}

impl ConeResiduals {
    pub fn max(&self) -> f64 {
        self.primal.max(self.dual).max(self.gap)
    }
}

impl ConeProgram {
    pub fn new(a: DMatrix<f64>, b: Vector, c: Vector, layout: ConeLayout) -> Result<Self> {
        let (m, n) = a.shape();
        check_dim(m, b.len())?;
        check_dim(n, c.len())?;
        check_dim(m, layout.dim())?;
        let cone = layout.to_set()?;
        let q = embedding_matrix(&a, &b, &c);
        let shifted = (DMatrix::identity(n + m + 1, n + m + 1) + &q).lu();
        // I + Q is nonsingular for skew-symmetric Q
        assert!(shifted.is_invertible(), "I + Q must be invertible for skew-symmetric Q");
        Ok(Self {
            a,
            b,
            c,
            layout,
            cone,
            q,
            shifted,
            linear_solves: Arc::default(),
        })
    }

    pub fn m(&self) -> usize {
        self.a.nrows()
    }

    pub fn n(&self) -> usize {
        self.a.ncols()
    }

    pub fn embedding_dim(&self) -> usize {
        self.n() + self.m() + 1
    }

    pub fn embedding_matrix(&self) -> &DMatrix<f64> {
        &self.q
    }

    pub fn cone(&self) -> &ConvexSet {
        &self.cone
    }

    /// `C = R^n x K* x R_+`.
    pub fn embedding_cone(&self) -> Result<ConvexSet> {
        ConvexSet::product(vec![
            ConvexSet::FreeCone { dim: self.n() },
            self.cone.dual_cone()?,
            ConvexSet::NonnegOrthant { dim: 1 },
        ])
    }

    /// `(I + Q)^{-1} u`, counted as one linear solve.
    pub fn solve_shifted(&self, u: &Vector) -> Vector {
        self.linear_solves.incr();
        self.solve_uncounted(u)
    }

    fn solve_uncounted(&self, u: &Vector) -> Vector {
        self.shifted.solve(u).expect("I + Q is invertible")
    }

    pub fn linear_solves(&self) -> u64 {
        self.linear_solves.get()
    }

    /// Point of the embedding cone associated with a Douglas-Rachford
    /// iterate `u`: `w = proj_C(2 (I+Q)^{-1} u - u)`. Not counted as work.
    pub fn solution_estimate(&self, u: &Vector) -> Vector {
        let v = self.solve_uncounted(u);
        self.embedding_cone()
            .and_then(|c| c.project(&(&v * 2.0 - u)))
            .expect("embedding cone matches dimension")
    }

    pub fn residuals_at_iterate(&self, u: &Vector) -> ConeResiduals {
        cone_residuals(self, &self.solution_estimate(u))
    }
}

fn embedding_matrix(a: &DMatrix<f64>, b: &Vector, c: &Vector) -> DMatrix<f64> {
    let (m, n) = a.shape();
    let d = n + m + 1;
    let mut q = DMatrix::zeros(d, d);
    q.view_mut((0, n), (n, m)).copy_from(&a.transpose());
    q.view_mut((0, n + m), (n, 1)).copy_from(c);
    q.view_mut((n, 0), (m, n)).copy_from(&(-a));
    q.view_mut((n, n + m), (m, 1)).copy_from(b);
    q.view_mut((n + m, 0), (1, n)).copy_from(&(-c.transpose()));
    q.view_mut((n + m, n), (1, m)).copy_from(&(-b.transpose()));
    q
}

/// Residuals of an embedding point `(x, y, tau)`: with `x/tau`, `y/tau` and
/// the slack `s = proj_K(b - A x/tau)`,
///
/// ```text
/// primal = |A x + s - b| / (1 + |b|)
/// dual   = |A^T y + c|   / (1 + |c|)
/// gap    = |c'x + b'y|   / (1 + |c'x| + |b'y|)
/// ```
pub fn cone_residuals(prob: &ConeProgram, point: &Vector) -> ConeResiduals {
    let (m, n) = (prob.m(), prob.n());
    assert_eq!(point.len(), n + m + 1, "embedding point has the wrong dimension");
    let tau = point[n + m];
    let degenerate = tau <= DEGENERATE_SCALE;
    let scale = if degenerate { 1.0 } else { tau };
    let x = point.rows(0, n) / scale;
    let y = point.rows(n, m) / scale;

    if degenerate {
        // certificate mode: homogeneous residuals of the unnormalized point
        let ax = &prob.a * &x;
        let s = prob.cone.project(&(-&ax)).expect("cone matches dimension");
        return ConeResiduals {
            primal: (ax + s).norm(),
            dual: prob.a.tr_mul(&y).norm(),
            gap: prob.c.dot(&x) + prob.b.dot(&y),
            degenerate_scale: true,
        };
    }

    let ax = &prob.a * &x;
    let s = prob.cone.project(&(&prob.b - &ax)).expect("cone matches dimension");
    let cx = prob.c.dot(&x);
    let by = prob.b.dot(&y);
    ConeResiduals {
        primal: (ax + s - &prob.b).norm() / (1.0 + prob.b.norm()),
        dual: (prob.a.tr_mul(&y) + &prob.c).norm() / (1.0 + prob.c.norm()),
        gap: (cx + by).abs() / (1.0 + cx.abs() + by.abs()),
        degenerate_scale: false,
    }
}

/// Stops when primal, dual and gap residuals are all below `tol`.
#[derive(Debug)]
pub struct ConeTermination {
    prob: Arc<ConeProgram>,
    tol: f64,
}

impl ConeTermination {
    pub fn new(prob: Arc<ConeProgram>, tol: f64) -> Self {
        Self { prob, tol }
    }
}

impl Termination for ConeTermination {
    fn reached(&self, x: &Vector) -> bool {
        let r = self.prob.residuals_at_iterate(x);
        !r.degenerate_scale && r.max() <= self.tol
    }
}

fn random_orthogonal(dim: usize, rng: &mut impl Rng) -> DMatrix<f64> {
    let g = DMatrix::from_fn(dim, dim, |_, _| normal(rng));
    g.qr().q()
}

/// Random cone program with a planted primal-dual solution.
///
/// `A = U diag(s) V^T` with singular values log-spaced over
/// `[1/sqrt(cond), sqrt(cond)]`,
/// then masked to the requested density; the achieved condition number is
/// stored in the metadata. Roughly 30% of the rows form 3-dimensional
/// second-order cones, the rest a nonnegative orthant. The planted
/// `(x*, s*, y*)` satisfies `s* in K`, `y* in K*`, `<s*, y*> = 0`, and
/// `b = A x* + s*`, `c = -A^T y*`.
pub fn build_cone_program(m: usize, n: usize, density: f64, cond: f64, seed: u64) -> Result<ProblemInstance> {
    if m < SOC_BLOCK || n == 0 {
        return Err(invalid("m, n", format!("need m >= {SOC_BLOCK} and n >= 1")));
    }
    if !(density > 0.0 && density <= 1.0) {
        return Err(invalid("density", "must lie in (0, 1]"));
    }
    if !(cond >= 1.0 && cond.is_finite()) {
        return Err(invalid("cond", "condition number must be >= 1"));
    }
    let mut rng = rng(seed);

    let r = m.min(n);
    let u = random_orthogonal(m, &mut rng);
    let v = random_orthogonal(n, &mut rng);
    let sv: Vec<f64> = (0..r)
        .map(|i| {
            if r == 1 {
                1.0
            } else {
                cond.powf(0.5 - i as f64 / (r - 1) as f64)
            }
        })
        .collect();
    let mut a = DMatrix::zeros(m, n);
    for (i, s) in sv.iter().enumerate() {
        a += u.column(i) * v.column(i).transpose() * *s;
    }
    let mut nnz = 0usize;
    for entry in a.iter_mut() {
        if rng.random::<f64>() < density {
            nnz += 1;
        } else {
            *entry = 0.0;
        }
    }
    let svd = a.clone().svd(false, false);
    let smax = svd.singular_values.max();
    let smin = svd.singular_values.min();
    if !(smin > 1e-10 * smax) {
        return Err(Error::Construction(format!(
            "density {density} leaves A ({m}x{n}) rank deficient; increase the density"
        )));
    }
    let achieved_cond = smax / smin;

    let soc_blocks = ((m * 3) / 10 / SOC_BLOCK).max(1);
    let layout = ConeLayout {
        orthant: m - soc_blocks * SOC_BLOCK,
        soc: vec![SOC_BLOCK; soc_blocks],
    };

    let x_star = Vector::from_fn(n, |_, _| normal(&mut rng));
    let mut s_star = Vector::zeros(m);
    let mut y_star = Vector::zeros(m);
    for i in 0..layout.orthant {
        let val = normal(&mut rng).abs() + 0.1;
        if rng.random::<bool>() {
            s_star[i] = val;
        } else {
            y_star[i] = val;
        }
    }
    let mut start = layout.orthant;
    for &d in &layout.soc {
        let z = Vector::from_fn(d - 1, |_, _| normal(&mut rng));
        let zn = z.norm();
        let mu = normal(&mut rng).abs() + 0.1;
        match rng.random_range(0..3) {
            // s interior, y = 0
            0 => {
                s_star.rows_mut(start, d - 1).copy_from(&z);
                s_star[start + d - 1] = zn + 1.0;
            }
            // s = 0, y interior
            1 => {
                y_star.rows_mut(start, d - 1).copy_from(&z);
                y_star[start + d - 1] = zn + 1.0;
            }
            // both on the boundary, complementary
            _ => {
                s_star.rows_mut(start, d - 1).copy_from(&z);
                s_star[start + d - 1] = zn;
                y_star.rows_mut(start, d - 1).copy_from(&(-&z * mu));
                y_star[start + d - 1] = mu * zn;
            }
        }
        start += d;
    }
    let b = &a * &x_star + &s_star;
    let c = -a.tr_mul(&y_star);

    let prob = Arc::new(ConeProgram::new(a, b, c, layout.clone())?);
    let operator = make_drs(prob.clone())?;

    let mut planted = Vector::zeros(n + m + 1);
    planted.rows_mut(0, n).copy_from(&x_star);
    planted.rows_mut(n, m).copy_from(&y_star);
    planted[n + m] = 1.0;
    let fixed = &planted + prob.embedding_matrix() * &planted;

    let mut x0 = Vector::zeros(n + m + 1);
    x0[n + m] = 1.0;

    let metadata = BTreeMap::from([
        ("achieved_cond".into(), json!(achieved_cond)),
        ("target_cond".into(), json!(cond)),
        ("nnz".into(), json!(nnz)),
        (
            "layout".into(),
            serde_json::to_value(&layout).expect("layout serializes"),
        ),
    ]);
    Ok(ProblemInstance {
        spec: ProblemSpec::ConeProgram {
            m,
            n,
            density,
            cond,
            seed,
        },
        operator,
        x0,
        fixed_points: vec![fixed],
        data: ProblemData::Cone(prob),
        metadata,
    })
}

/// Point `(x, y, tau)` of the embedding whose DRS fixed point is `u`; used by tests.
#[cfg(test)]
pub(crate) fn embedding_point(prob: &ConeProgram, u: &Vector) -> Vector {
    prob.solve_uncounted(u)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problems::ProblemData;
    use proptest::prelude::*;

    fn instance() -> (ProblemInstance, Arc<ConeProgram>) {
        let p = build_cone_program(12, 7, 0.6, 10.0, 3).unwrap();
        let ProblemData::Cone(c) = &p.data else { unreachable!() };
        let c = c.clone();
        (p, c)
    }

    #[test]
    fn embedding_is_skew_symmetric() {
        let (_, c) = instance();
        let q = c.embedding_matrix();
        assert_eq!(q, &(-q.transpose()));
        let u = Vector::from_fn(q.nrows(), |i, _| (i as f64).sin());
        assert!(u.dot(&(q * &u)).abs() <= 1e-10 * u.norm_squared());
    }

    #[test]
    fn planted_solution_is_fixed_and_optimal() {
        let (p, c) = instance();
        let u = &p.fixed_points[0];
        assert!(p.operator.residual(u).norm() <= 1e-8);
        let r = c.residuals_at_iterate(u);
        assert!(!r.degenerate_scale);
        assert!(r.max() <= 1e-8, "{r:?}");
        let z = embedding_point(&c, u);
        assert!(z[z.len() - 1] > 0.99);
    }

    #[test]
    fn zero_point_is_degenerate() {
        let (p, c) = instance();
        let r = cone_residuals(&c, &Vector::zeros(p.x0.len()));
        assert!(r.degenerate_scale);
    }

    #[test]
    fn trivial_embedding_is_identity_map() {
        // Q = 0 (A, b, c all zero) and a free cone: v = u, w = v
        let a = DMatrix::zeros(1, 1);
        let prob = Arc::new(
            ConeProgram::new(
                a,
                Vector::zeros(1),
                Vector::zeros(1),
                ConeLayout {
                    orthant: 1,
                    soc: vec![],
                },
            )
            .unwrap(),
        );
        let op = make_drs(prob).unwrap();
        // the embedding cone is R x R_+ x R_+; take u inside it
        let u = Vector::from_column_slice(&[-3.0, 2.0, 0.5]);
        assert_eq!(op.apply(&u), u);
    }

    #[test]
    fn low_density_is_rejected() {
        assert!(matches!(
            build_cone_program(30, 20, 0.01, 10.0, 1),
            Err(Error::Construction(_))
        ));
    }

    #[test]
    fn deterministic_under_seed() {
        let a = build_cone_program(12, 7, 0.6, 10.0, 5).unwrap();
        let b = build_cone_program(12, 7, 0.6, 10.0, 5).unwrap();
        let (ProblemData::Cone(a), ProblemData::Cone(b)) = (&a.data, &b.data) else {
            unreachable!()
        };
        assert_eq!(a.a, b.a);
        assert_eq!(a.b, b.b);
        assert_eq!(a.c, b.c);
    }

    /// Loop-based re-implementation of the residual formulas.
    fn residuals_by_loops(p: &ConeProgram, point: &Vector) -> (f64, f64, f64) {
        let (m, n) = (p.m(), p.n());
        let tau = point[n + m];
        let x: Vec<f64> = (0..n).map(|j| point[j] / tau).collect();
        let y: Vec<f64> = (0..m).map(|i| point[n + i] / tau).collect();
        let mut ax = vec![0.0; m];
        for i in 0..m {
            for j in 0..n {
                ax[i] += p.a[(i, j)] * x[j];
            }
        }
        // slack: orthant rows clamp, SOC blocks by the closed form
        let mut slack: Vec<f64> = (0..m).map(|i| p.b[i] - ax[i]).collect();
        for v in slack.iter_mut().take(p.layout.orthant) {
            *v = v.max(0.0);
        }
        let mut start = p.layout.orthant;
        for &d in &p.layout.soc {
            let blk = &mut slack[start..start + d];
            let t = blk[d - 1];
            let r = blk[..d - 1].iter().map(|v| v * v).sum::<f64>().sqrt();
            if r <= t {
            } else if r <= -t {
                blk.iter_mut().for_each(|v| *v = 0.0);
            } else {
                let c = (r + t) / 2.0;
                for v in blk[..d - 1].iter_mut() {
                    *v *= c / r;
                }
                blk[d - 1] = c;
            }
            start += d;
        }
        let mut pr = 0.0;
        for i in 0..m {
            pr += (ax[i] + slack[i] - p.b[i]).powi(2);
        }
        let mut du = 0.0;
        for j in 0..n {
            let mut s = p.c[j];
            for i in 0..m {
                s += p.a[(i, j)] * y[i];
            }
            du += s * s;
        }
        let cx: f64 = (0..n).map(|j| p.c[j] * x[j]).sum();
        let by: f64 = (0..m).map(|i| p.b[i] * y[i]).sum();
        (
            pr.sqrt() / (1.0 + p.b.norm()),
            du.sqrt() / (1.0 + p.c.norm()),
            (cx + by).abs() / (1.0 + cx.abs() + by.abs()),
        )
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn residuals_match_loop_implementation(
            xs in prop::collection::vec(-3.0f64..3.0, 20),
            tau in 0.1f64..4.0,
        ) {
            let (_, c) = instance();
            let mut point = Vector::from_vec(xs);
            point[19] = tau;
            let r = cone_residuals(&c, &point);
            let (p, d, g) = residuals_by_loops(&c, &point);
            prop_assert!((r.primal - p).abs() <= 1e-12 * (1.0 + p));
            prop_assert!((r.dual - d).abs() <= 1e-12 * (1.0 + d));
            prop_assert!((r.gap - g).abs() <= 1e-12);
        }
    }
}
