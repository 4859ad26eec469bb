use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, invalid, Error, Result};
use crate::space::Vector;

/// Active-set enumeration is exponential in the number of halfspaces.
const MAX_POLYHEDRON_FACES: usize = 12;

/// Nonempty closed convex set with a closed-form (Euclidean) projection.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ConvexSet {
    Box {
        lower: Vec<f64>,
        upper: Vec<f64>,
    },
    Ball {
        center: Vec<f64>,
        radius: f64,
    },
    /// `{x : <normal, x> <= offset}`
    Halfspace {
        normal: Vec<f64>,
        offset: f64,
    },
    /// `{x : <normal, x> = offset}`
    Hyperplane {
        normal: Vec<f64>,
        offset: f64,
    },
    NonnegOrthant {
        dim: usize,
    },
    /// `{(z, t) : slope * |z| <= t}` with `t` the last coordinate.
    SecondOrderCone {
        dim: usize,
        slope: f64,
    },
    ZeroCone {
        dim: usize,
    },
    FreeCone {
        dim: usize,
    },
    /// Intersection of a few halfspaces `<a_i, x> <= b_i`.
    Polyhedron {
        faces: Vec<(Vec<f64>, f64)>,
    },
    Product {
        blocks: Vec<ConvexSet>,
    },
}

impl ConvexSet {
    pub fn boxed(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        let s = ConvexSet::Box { lower, upper };
        s.validate()?;
        Ok(s)
    }

    pub fn uniform_box(dim: usize, lower: f64, upper: f64) -> Result<Self> {
        Self::boxed(vec![lower; dim], vec![upper; dim])
    }

    pub fn ball(center: Vector, radius: f64) -> Result<Self> {
        let s = ConvexSet::Ball {
            center: center.as_slice().to_vec(),
            radius,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn halfspace(normal: Vector, offset: f64) -> Result<Self> {
        let s = ConvexSet::Halfspace {
            normal: normal.as_slice().to_vec(),
            offset,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn hyperplane(normal: Vector, offset: f64) -> Result<Self> {
        let s = ConvexSet::Hyperplane {
            normal: normal.as_slice().to_vec(),
            offset,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn second_order_cone(dim: usize, slope: f64) -> Result<Self> {
        let s = ConvexSet::SecondOrderCone { dim, slope };
        s.validate()?;
        Ok(s)
    }

    pub fn polyhedron(faces: Vec<(Vector, f64)>) -> Result<Self> {
        let s = ConvexSet::Polyhedron {
            faces: faces.into_iter().map(|(a, b)| (a.as_slice().to_vec(), b)).collect(),
        };
        s.validate()?;
        Ok(s)
    }

    pub fn product(blocks: Vec<ConvexSet>) -> Result<Self> {
        let s = ConvexSet::Product { blocks };
        s.validate()?;
        Ok(s)
    }

    pub fn kind_name(&self) -> &'static str {
        match self {
            ConvexSet::Box { .. } => "box",
            ConvexSet::Ball { .. } => "ball",
            ConvexSet::Halfspace { .. } => "halfspace",
            ConvexSet::Hyperplane { .. } => "hyperplane",
            ConvexSet::NonnegOrthant { .. } => "nonneg_orthant",
            ConvexSet::SecondOrderCone { .. } => "second_order_cone",
            ConvexSet::ZeroCone { .. } => "zero_cone",
            ConvexSet::FreeCone { .. } => "free_cone",
            ConvexSet::Polyhedron { .. } => "polyhedron",
            ConvexSet::Product { .. } => "product",
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            ConvexSet::Box { lower, .. } => lower.len(),
            ConvexSet::Ball { center, .. } => center.len(),
            ConvexSet::Halfspace { normal, .. } | ConvexSet::Hyperplane { normal, .. } => normal.len(),
            ConvexSet::NonnegOrthant { dim }
            | ConvexSet::SecondOrderCone { dim, .. }
            | ConvexSet::ZeroCone { dim }
            | ConvexSet::FreeCone { dim } => *dim,
            ConvexSet::Polyhedron { faces } => faces.first().map_or(0, |f| f.0.len()),
            ConvexSet::Product { blocks } => blocks.iter().map(ConvexSet::dim).sum(),
        }
    }

    /// Checks the construction invariants (nonempty, closed, convex).
    pub fn validate(&self) -> Result<()> {
        let finite = |xs: &[f64]| xs.iter().all(|x| x.is_finite());
        match self {
            ConvexSet::Box { lower, upper } => {
                check_dim(lower.len(), upper.len())?;
                if lower.iter().zip(upper).any(|(l, u)| !(l <= u)) {
                    return Err(invalid("box", "every lower bound must not exceed its upper bound"));
                }
            }
            ConvexSet::Ball { center, radius } => {
                if !(finite(center) && radius.is_finite() && *radius > 0.0) {
                    return Err(invalid("ball", "radius must be positive and the center finite"));
                }
            }
            ConvexSet::Halfspace { normal, offset } | ConvexSet::Hyperplane { normal, offset } => {
                if !finite(normal) || !offset.is_finite() || normal.iter().all(|x| *x == 0.0) {
                    return Err(invalid("normal", "normal vector must be finite and nonzero"));
                }
            }
            ConvexSet::SecondOrderCone { dim, slope } => {
                if *dim == 0 || !(slope.is_finite() && *slope > 0.0) {
                    return Err(invalid("second_order_cone", "needs dim >= 1 and a positive slope"));
                }
            }
            ConvexSet::NonnegOrthant { .. } | ConvexSet::ZeroCone { .. } | ConvexSet::FreeCone { .. } => {}
            ConvexSet::Polyhedron { faces } => {
                if faces.is_empty() {
                    return Err(invalid("polyhedron", "needs at least one halfspace"));
                }
                if faces.len() > MAX_POLYHEDRON_FACES {
                    return Err(Error::UnsupportedSet(format!(
                        "polyhedron with {} faces (at most {MAX_POLYHEDRON_FACES} supported)",
                        faces.len()
                    )));
                }
                let n = faces[0].0.len();
                for (a, b) in faces {
                    check_dim(n, a.len())?;
                    if !finite(a) || !b.is_finite() || a.iter().all(|x| *x == 0.0) {
                        return Err(invalid("polyhedron", "face normals must be finite and nonzero"));
                    }
                }
            }
            ConvexSet::Product { blocks } => {
                if blocks.is_empty() {
                    return Err(invalid("product", "needs at least one block"));
                }
                for b in blocks {
                    b.validate()?;
                }
            }
        }
        Ok(())
    }

    pub fn contains(&self, x: &Vector, tol: f64) -> Result<bool> {
        let p = self.project(x)?;
        Ok((x - p).norm() <= tol)
    }

    /// Euclidean projection onto the set.
    pub fn project(&self, x: &Vector) -> Result<Vector> {
        check_dim(self.dim(), x.len())?;
        let mut out = x.clone();
        self.project_into(x.as_slice(), out.as_mut_slice())?;
        Ok(out)
    }

    fn project_into(&self, x: &[f64], out: &mut [f64]) -> Result<()> {
        match self {
            ConvexSet::Box { lower, upper } => {
                for i in 0..x.len() {
                    out[i] = x[i].clamp(lower[i], upper[i]);
                }
            }
            ConvexSet::Ball { center, radius } => {
                let dist = x.iter().zip(center).map(|(a, c)| (a - c) * (a - c)).sum::<f64>().sqrt();
                let scale = if dist <= *radius { 1.0 } else { radius / dist };
                for i in 0..x.len() {
                    out[i] = center[i] + scale * (x[i] - center[i]);
                }
            }
            ConvexSet::Halfspace { normal, offset } => {
                let (dot, nn) = dot_and_norm2(normal, x);
                let excess = (dot - offset).max(0.0);
                axpy_into(x, -excess / nn, normal, out);
            }
            ConvexSet::Hyperplane { normal, offset } => {
                let (dot, nn) = dot_and_norm2(normal, x);
                axpy_into(x, -(dot - offset) / nn, normal, out);
            }
            ConvexSet::NonnegOrthant { .. } => {
                for i in 0..x.len() {
                    out[i] = x[i].max(0.0);
                }
            }
            ConvexSet::SecondOrderCone { slope, .. } => project_soc(x, *slope, out),
            ConvexSet::ZeroCone { .. } => out.iter_mut().for_each(|o| *o = 0.0),
            ConvexSet::FreeCone { .. } => out.copy_from_slice(x),
            ConvexSet::Polyhedron { faces } => project_polyhedron(faces, x, out)?,
            ConvexSet::Product { blocks } => {
                let mut start = 0;
                for b in blocks {
                    let end = start + b.dim();
                    b.project_into(&x[start..end], &mut out[start..end])?;
                    start = end;
                }
            }
        }
        Ok(())
    }

    /// Dual cone, for the self-dual primitives this crate supports
    /// (zero cone and free cone are dual to each other).
    pub fn dual_cone(&self) -> Result<ConvexSet> {
        Ok(match self {
            ConvexSet::NonnegOrthant { dim } => ConvexSet::NonnegOrthant { dim: *dim },
            ConvexSet::SecondOrderCone { dim, slope } if *slope == 1.0 => {
                ConvexSet::SecondOrderCone { dim: *dim, slope: 1.0 }
            }
            ConvexSet::ZeroCone { dim } => ConvexSet::FreeCone { dim: *dim },
            ConvexSet::FreeCone { dim } => ConvexSet::ZeroCone { dim: *dim },
            ConvexSet::Product { blocks } => ConvexSet::Product {
                blocks: blocks.iter().map(ConvexSet::dual_cone).collect::<Result<_>>()?,
            },
            other => return Err(Error::UnsupportedSet(format!("dual cone of {}", other.kind_name()))),
        })
    }
}

fn dot_and_norm2(a: &[f64], x: &[f64]) -> (f64, f64) {
    a.iter()
        .zip(x)
        .fold((0.0, 0.0), |(d, n), (ai, xi)| (d + ai * xi, n + ai * ai))
}

fn axpy_into(x: &[f64], coef: f64, v: &[f64], out: &mut [f64]) {
    for i in 0..x.len() {
        out[i] = x[i] + coef * v[i];
    }
}

/// Three-case closed form for `{(z, t) : a |z| <= t}`.
fn project_soc(x: &[f64], a: f64, out: &mut [f64]) {
    let n = x.len();
    let t = x[n - 1];
    let z = &x[..n - 1];
    let r = z.iter().map(|v| v * v).sum::<f64>().sqrt();
    if a * r <= t {
        out.copy_from_slice(x);
    } else if r <= -a * t {
        out.iter_mut().for_each(|o| *o = 0.0);
    } else {
        // project (r, t) onto the ray spanned by (1, a)
        let c = (r + a * t) / (1.0 + a * a);
        let s = c / r;
        for i in 0..n - 1 {
            out[i] = s * z[i];
        }
        out[n - 1] = c * a;
    }
}

/// Exact projection onto a small polyhedron by active-set enumeration: the
/// first subset whose equality-constrained projection is feasible with
/// nonnegative multipliers is the KKT point.
fn project_polyhedron(faces: &[(Vec<f64>, f64)], x: &[f64], out: &mut [f64]) -> Result<()> {
    let n = x.len();
    let k = faces.len();
    let xv = DVector::from_column_slice(x);
    let scale = 1.0 + xv.amax() + faces.iter().map(|f| f.1.abs()).fold(0.0, f64::max);
    let tol = 1e-12 * scale;

    let feasible = |y: &DVector<f64>| {
        faces.iter().all(|(a, b)| {
            let an = a.iter().map(|v| v * v).sum::<f64>().sqrt();
            (a.iter().zip(y.iter()).map(|(ai, yi)| ai * yi).sum::<f64>() - b) <= tol * an
        })
    };

    if feasible(&xv) {
        out.copy_from_slice(x);
        return Ok(());
    }

    let mut subsets: Vec<u32> = (1..(1u32 << k)).collect();
    subsets.sort_by_key(|s| s.count_ones());
    for mask in subsets {
        let active: Vec<usize> = (0..k).filter(|i| mask & (1 << i) != 0).collect();
        if active.len() > n {
            continue;
        }
        let a = DMatrix::from_fn(active.len(), n, |r, c| faces[active[r]].0[c]);
        let b = DVector::from_iterator(active.len(), active.iter().map(|&i| faces[i].1));
        let gram = &a * a.transpose();
        let Some(chol) = gram.cholesky() else { continue };
        let mu = chol.solve(&(&a * &xv - b));
        if mu.iter().any(|m| *m < -1e-12 * (1.0 + mu.amax())) {
            continue;
        }
        let y = &xv - a.transpose() * mu;
        if feasible(&y) {
            out.copy_from_slice(y.as_slice());
            return Ok(());
        }
    }
    Err(Error::UnsupportedSet(
        "polyhedron projection found no KKT point (empty or degenerate polyhedron)".into(),
    ))
}

/// `sign(x) max(|x| - t, 0)`.
pub fn soft_threshold(x: f64, t: f64) -> f64 {
    if x > t {
        x - t
    } else if x < -t {
        x + t
    } else {
        0.0
    }
}
