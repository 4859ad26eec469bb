//! Finite-dimensional real inner-product spaces.
//!
//! Vectors are plain `nalgebra` column vectors. A [`Metric`] decides which
//! inner product is used: the Euclidean one, or `<u, P v>` for a symmetric
//! positive definite operator `P` that is only ever applied, never stored.

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::error::{check_dim, invalid, Result};

pub type Vector = DVector<f64>;

/// A symmetric positive definite operator `P` defining `<u, v>_P = <u, P v>_2`.
pub trait MetricOperator: Send + Sync + fmt::Debug {
    fn dim(&self) -> usize;

    fn apply(&self, v: &Vector) -> Vector;

    fn inner(&self, u: &Vector, v: &Vector) -> f64 {
        u.dot(&self.apply(v))
    }

    /// Override when the quadratic form is cheaper than a full application.
    fn norm_squared(&self, u: &Vector) -> f64 {
        self.inner(u, u)
    }
}

#[derive(Clone)]
pub enum Metric {
    Euclidean,
    Induced(Arc<dyn MetricOperator>),
}

impl fmt::Debug for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Metric::Euclidean => write!(f, "Euclidean"),
            Metric::Induced(op) => write!(f, "Induced({:?})", op),
        }
    }
}

impl Default for Metric {
    fn default() -> Self {
        Metric::Euclidean
    }
}

impl Metric {
    pub fn induced(op: impl MetricOperator + 'static) -> Self {
        Metric::Induced(Arc::new(op))
    }

    pub fn diagonal(weights: Vec<f64>) -> Result<Self> {
        Ok(Self::induced(DiagonalMetric::new(weights)?))
    }

    pub fn dense(matrix: DMatrix<f64>) -> Result<Self> {
        Ok(Self::induced(DenseMetric::new(matrix)?))
    }

    /// Dimension the metric is bound to; `None` for the Euclidean metric,
    /// which accepts any dimension.
    pub fn dim(&self) -> Option<usize> {
        match self {
            Metric::Euclidean => None,
            Metric::Induced(op) => Some(op.dim()),
        }
    }

    pub fn is_euclidean(&self) -> bool {
        matches!(self, Metric::Euclidean)
    }

    fn check(&self, u: &Vector, v: &Vector) -> Result<()> {
        check_dim(u.len(), v.len())?;
        if let Some(n) = self.dim() {
            check_dim(n, u.len())?;
        }
        check_finite(u);
        check_finite(v);
        Ok(())
    }

    pub fn inner(&self, u: &Vector, v: &Vector) -> Result<f64> {
        self.check(u, v)?;
        Ok(match self {
            Metric::Euclidean => u.dot(v),
            Metric::Induced(op) => op.inner(u, v),
        })
    }

    pub fn norm_squared(&self, u: &Vector) -> Result<f64> {
        self.check(u, u)?;
        Ok(match self {
            Metric::Euclidean => u.norm_squared(),
            // roundoff in an implicit quadratic form can dip below zero
            Metric::Induced(op) => op.norm_squared(u).max(0.0),
        })
    }

    pub fn norm(&self, u: &Vector) -> Result<f64> {
        self.norm_squared(u).map(f64::sqrt)
    }

    /// `P v`, or `v` itself for the Euclidean metric.
    pub fn apply(&self, v: &Vector) -> Result<Vector> {
        if let Some(n) = self.dim() {
            check_dim(n, v.len())?;
        }
        Ok(match self {
            Metric::Euclidean => v.clone(),
            Metric::Induced(op) => op.apply(v),
        })
    }
}

#[derive(Debug, Clone)]
pub struct DiagonalMetric {
    weights: Vector,
}

impl DiagonalMetric {
    pub fn new(weights: Vec<f64>) -> Result<Self> {
        if weights.iter().any(|w| !(w.is_finite() && *w > 0.0)) {
            return Err(invalid(
                "weights",
                "diagonal metric weights must be finite and positive",
            ));
        }
        Ok(Self {
            weights: Vector::from_vec(weights),
        })
    }
}

impl MetricOperator for DiagonalMetric {
    fn dim(&self) -> usize {
        self.weights.len()
    }

    fn apply(&self, v: &Vector) -> Vector {
        v.component_mul(&self.weights)
    }
}

/// Explicit SPD matrix; mostly useful for tests and small problems.
#[derive(Debug, Clone)]
pub struct DenseMetric {
    matrix: DMatrix<f64>,
}

impl DenseMetric {
    pub fn new(matrix: DMatrix<f64>) -> Result<Self> {
        if !matrix.is_square() {
            return Err(invalid("matrix", "metric matrix must be square"));
        }
        let asym = (&matrix - matrix.transpose()).amax();
        if asym > 1e-12 * matrix.amax().max(1.0) {
            return Err(invalid("matrix", "metric matrix must be symmetric"));
        }
        if matrix.clone().cholesky().is_none() {
            return Err(invalid("matrix", "metric matrix must be positive definite"));
        }
        Ok(Self { matrix })
    }
}

impl MetricOperator for DenseMetric {
    fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    fn apply(&self, v: &Vector) -> Vector {
        &self.matrix * v
    }
}

#[inline]
pub(crate) fn check_finite(_v: &Vector) {
    #[cfg(feature = "finite-checks")]
    assert!(
        _v.iter().all(|x| x.is_finite()),
        "non-finite entry in vector of dimension {}",
        _v.len()
    );
}

pub fn is_finite(v: &Vector) -> bool {
    v.iter().all(|x| x.is_finite())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::error::Error;
    use proptest::prelude::*;

    fn v(xs: &[f64]) -> Vector {
        Vector::from_column_slice(xs)
    }

    #[test]
    fn euclidean_examples() {
        let m = Metric::Euclidean;
        assert_eq!(m.inner(&v(&[1.0, 0.0]), &v(&[0.0, 1.0])).unwrap(), 0.0);
        assert_eq!(m.inner(&v(&[1.0, 2.0]), &v(&[1.0, 2.0])).unwrap(), 5.0);
        assert_eq!(m.norm(&v(&[3.0, 4.0])).unwrap(), 5.0);
        assert_eq!(m.norm(&Vector::zeros(7)).unwrap(), 0.0);
    }

    #[test]
    fn diagonal_examples() {
        let m = Metric::diagonal(vec![3.0, 1.0]).unwrap();
        assert_eq!(m.inner(&v(&[1.0, 0.0]), &v(&[1.0, 0.0])).unwrap(), 3.0);
        assert_eq!(m.norm(&v(&[1.0, 1.0])).unwrap(), 2.0);
        assert_eq!(m.norm(&Vector::zeros(2)).unwrap(), 0.0);
    }

    #[test]
    fn dimension_mismatch_is_an_error() {
        let e = Metric::Euclidean.inner(&v(&[1.0]), &v(&[1.0, 2.0]));
        assert!(matches!(e, Err(Error::DimensionMismatch { .. })));
        let m = Metric::diagonal(vec![1.0, 1.0, 1.0]).unwrap();
        assert!(m.norm(&v(&[1.0, 2.0])).is_err());
    }

    #[test]
    fn rejects_non_spd() {
        assert!(Metric::diagonal(vec![1.0, 0.0]).is_err());
        let indefinite = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]);
        assert!(Metric::dense(indefinite).is_err());
        let asym = DMatrix::from_row_slice(2, 2, &[2.0, 1.0, 0.0, 2.0]);
        assert!(Metric::dense(asym).is_err());
    }

    fn spd_metric() -> Metric {
        // B^T B + I for a fixed B
        let b = DMatrix::from_row_slice(3, 3, &[1.0, 2.0, 0.5, -1.0, 0.3, 2.0, 0.0, 1.5, -0.7]);
        Metric::dense(b.transpose() * &b + DMatrix::identity(3, 3)).unwrap()
    }

    fn vec3() -> impl Strategy<Value = Vector> {
        prop::collection::vec(-100.0f64..100.0, 3).prop_map(Vector::from_vec)
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]

        #[test]
        fn cauchy_schwarz(u in vec3(), w in vec3()) {
            for m in [Metric::Euclidean, spd_metric()] {
                let lhs = m.inner(&u, &w).unwrap().abs();
                let rhs = m.norm(&u).unwrap() * m.norm(&w).unwrap();
                prop_assert!(lhs <= rhs * (1.0 + 1e-12) + 1e-300);
            }
        }

        #[test]
        fn parallelogram(u in vec3(), w in vec3()) {
            for m in [Metric::Euclidean, spd_metric()] {
                let lhs = m.norm_squared(&(&u + &w)).unwrap() + m.norm_squared(&(&u - &w)).unwrap();
                let rhs = 2.0 * m.norm_squared(&u).unwrap() + 2.0 * m.norm_squared(&w).unwrap();
                prop_assert!((lhs - rhs).abs() <= 1e-10 * rhs.max(1e-300));
            }
        }

        #[test]
        fn induced_symmetry(u in vec3(), w in vec3()) {
            let m = spd_metric();
            let a = m.inner(&u, &w).unwrap();
            let b = m.inner(&w, &u).unwrap();
            prop_assert!((a - b).abs() <= 1e-12 * a.abs().max(b.abs()).max(1.0));
        }
    }
}
