//! Vector fields, Jacobians and second-order reduction.
//!
//! A [`VectorField`] is the coefficient map `g: R^N -> R^N` of a dynamical
//! system. It is pure: evaluation holds no state and may be shared across
//! threads. The domain is a ball about the origin, which is the star point
//! of every ray integral in [`crate::forms`].

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::error::FieldError;

type EvalFn = dyn Fn(&DVector<f64>) -> DVector<f64> + Send + Sync;
type JacFn = dyn Fn(&DVector<f64>) -> DMatrix<f64> + Send + Sync;

/// A smooth vector field on a ball about the origin.
#[derive(Clone)]
pub struct VectorField {
    dim: usize,
    eval: Arc<EvalFn>,
    jac: Option<Arc<JacFn>>,
    domain_radius: f64,
}

impl fmt::Debug for VectorField {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("VectorField")
            .field("dim", &self.dim)
            .field("analytic_jacobian", &self.jac.is_some())
            .field("domain_radius", &self.domain_radius)
            .finish()
    }
}

/// How [`VectorField::jacobian`] obtains derivatives.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum JacobianScheme {
    /// Analytic Jacobian when the field has one, central differences otherwise.
    Auto,
    /// Analytic Jacobian only; fails if the field has none.
    Analytic,
    /// Central differences. `None` selects the default per-coordinate step
    /// `cbrt(eps) * max(1, |x_i|)`.
    CentralDifference(Option<f64>),
}

/// Value and Jacobian of a field at a point.
#[derive(Debug, Clone, PartialEq)]
pub struct Jet {
    pub point: DVector<f64>,
    pub value: DVector<f64>,
    /// Row `i`, column `j` holds `d g_i / d x_j`.
    pub jacobian: DMatrix<f64>,
}

impl VectorField {
    /// Field of dimension `dim` with unbounded domain and no analytic Jacobian.
    pub fn new<F>(dim: usize, eval: F) -> Self
    where
        F: Fn(&DVector<f64>) -> DVector<f64> + Send + Sync + 'static,
    {
        assert!(dim > 0, "vector field dimension must be positive");
        Self {
            dim,
            eval: Arc::new(eval),
            jac: None,
            domain_radius: f64::INFINITY,
        }
    }

    pub fn with_jacobian<J>(mut self, jac: J) -> Self
    where
        J: Fn(&DVector<f64>) -> DMatrix<f64> + Send + Sync + 'static,
    {
        self.jac = Some(Arc::new(jac));
        self
    }

    pub fn with_domain_radius(mut self, radius: f64) -> Self {
        assert!(radius > 0.0, "domain radius must be positive");
        self.domain_radius = radius;
        self
    }

    /// Linear field `x -> A x` with exact Jacobian `A`.
    pub fn linear(a: DMatrix<f64>) -> Self {
        assert!(a.is_square(), "linear field needs a square matrix");
        let n = a.nrows();
        let jac = a.clone();
        Self::new(n, move |x| &a * x).with_jacobian(move |_| jac.clone())
    }

    pub fn identity(dim: usize) -> Self {
        Self::linear(DMatrix::identity(dim, dim))
    }

    pub fn zero(dim: usize) -> Self {
        Self::linear(DMatrix::zeros(dim, dim))
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn domain_radius(&self) -> f64 {
        self.domain_radius
    }

    pub fn has_analytic_jacobian(&self) -> bool {
        self.jac.is_some()
    }

    /// Evaluates `g(x)`, checking dimension and finiteness.
    pub fn eval(&self, x: &DVector<f64>) -> Result<DVector<f64>, FieldError> {
        self.check_dim(x)?;
        let value = (self.eval)(x);
        if value.len() != self.dim {
            return Err(FieldError::DimensionMismatch {
                expected: self.dim,
                got: value.len(),
            });
        }
        if value.iter().all(|v| v.is_finite()) {
            Ok(value)
        } else {
            Err(FieldError::NonFinite {
                what: "field value",
                point: x.iter().copied().collect(),
            })
        }
    }

    /// Evaluates without the finiteness check. Hot loops in the integrators
    /// use this and test the state themselves.
    pub(crate) fn eval_unchecked(&self, x: &DVector<f64>) -> DVector<f64> {
        (self.eval)(x)
    }

    /// Jacobian `J[i][j] = d g_i / d x_j` at `x`.
    pub fn jacobian(
        &self,
        x: &DVector<f64>,
        scheme: JacobianScheme,
    ) -> Result<DMatrix<f64>, FieldError> {
        self.check_dim(x)?;
        let jac = match (scheme, &self.jac) {
            (JacobianScheme::Auto | JacobianScheme::Analytic, Some(j)) => j(x),
            (JacobianScheme::Analytic, None) => return Err(FieldError::NoAnalyticJacobian),
            (JacobianScheme::Auto, None) => self.central_difference(x, None)?,
            (JacobianScheme::CentralDifference(h), _) => self.central_difference(x, h)?,
        };
        if jac.nrows() != self.dim || jac.ncols() != self.dim {
            return Err(FieldError::DimensionMismatch {
                expected: self.dim,
                got: jac.nrows(),
            });
        }
        if jac.iter().all(|v| v.is_finite()) {
            Ok(jac)
        } else {
            Err(FieldError::NonFinite {
                what: "Jacobian entry",
                point: x.iter().copied().collect(),
            })
        }
    }

    pub fn jet(&self, x: &DVector<f64>) -> Result<Jet, FieldError> {
        Ok(Jet {
            point: x.clone(),
            value: self.eval(x)?,
            jacobian: self.jacobian(x, JacobianScheme::Auto)?,
        })
    }

    fn central_difference(
        &self,
        x: &DVector<f64>,
        step: Option<f64>,
    ) -> Result<DMatrix<f64>, FieldError> {
        if let Some(h) = step {
            if !(h > 0.0 && h.is_finite()) {
                return Err(FieldError::InvalidStep(h));
            }
        }
        let n = self.dim;
        let mut jac = DMatrix::zeros(n, n);
        let mut probe = x.clone();
        for j in 0..n {
            let h = step.unwrap_or_else(|| default_step(x[j]));
            probe[j] = x[j] + h;
            let plus = self.eval(&probe)?;
            probe[j] = x[j] - h;
            let minus = self.eval(&probe)?;
            probe[j] = x[j];
            let denom = 2.0 * h;
            for i in 0..n {
                jac[(i, j)] = (plus[i] - minus[i]) / denom;
            }
        }
        Ok(jac)
    }

    fn check_dim(&self, x: &DVector<f64>) -> Result<(), FieldError> {
        if x.len() == self.dim {
            Ok(())
        } else {
            Err(FieldError::DimensionMismatch {
                expected: self.dim,
                got: x.len(),
            })
        }
    }
}

/// Default central-difference step for a coordinate of magnitude `xi`.
pub fn default_step(xi: f64) -> f64 {
    f64::EPSILON.cbrt() * xi.abs().max(1.0)
}

/// Free-function form of [`VectorField::eval`].
pub fn eval_field(field: &VectorField, x: &DVector<f64>) -> Result<DVector<f64>, FieldError> {
    field.eval(x)
}

/// Free-function form of [`VectorField::jacobian`].
pub fn jacobian(
    field: &VectorField,
    x: &DVector<f64>,
    scheme: JacobianScheme,
) -> Result<DMatrix<f64>, FieldError> {
    field.jacobian(x, scheme)
}

/// `beta_c[j] * x_j'' + damping[j] * x_j' + g_j(x) = 0`.
#[derive(Debug, Clone)]
pub struct SecondOrderSystem {
    beta_c: Vec<f64>,
    damping: Vec<f64>,
    field: VectorField,
}

impl SecondOrderSystem {
    /// Unit damping on every coordinate.
    pub fn new(beta_c: Vec<f64>, field: VectorField) -> Result<Self, FieldError> {
        let damping = vec![1.0; beta_c.len()];
        Self::with_damping(beta_c, damping, field)
    }

    pub fn with_damping(
        beta_c: Vec<f64>,
        damping: Vec<f64>,
        field: VectorField,
    ) -> Result<Self, FieldError> {
        if beta_c.len() != field.dim() || damping.len() != field.dim() {
            return Err(FieldError::DimensionMismatch {
                expected: field.dim(),
                got: beta_c.len().min(damping.len()),
            });
        }
        if let Some(&b) = beta_c.iter().find(|b| !(**b > 0.0 && b.is_finite())) {
            return Err(FieldError::InvalidParameter {
                name: "beta_c",
                value: b,
            });
        }
        if let Some(&d) = damping.iter().find(|d| !(**d > 0.0 && d.is_finite())) {
            return Err(FieldError::InvalidParameter {
                name: "damping",
                value: d,
            });
        }
        Ok(Self {
            beta_c,
            damping,
            field,
        })
    }

    pub fn beta_c(&self) -> &[f64] {
        &self.beta_c
    }

    pub fn damping(&self) -> &[f64] {
        &self.damping
    }

    pub fn field(&self) -> &VectorField {
        &self.field
    }

    /// Acceleration residual `beta_c x'' + damping x' + g(x)` for a given
    /// position, velocity and acceleration.
    pub fn residual(
        &self,
        x: &DVector<f64>,
        xdot: &DVector<f64>,
        xddot: &DVector<f64>,
    ) -> Result<DVector<f64>, FieldError> {
        let g = self.field.eval(x)?;
        Ok(DVector::from_fn(x.len(), |i, _| {
            self.beta_c[i] * xddot[i] + self.damping[i] * xdot[i] + g[i]
        }))
    }
}

/// First-order form on `(x, xbar)` with `xbar = beta_c * x'`:
///
/// ```text
/// x'    =  xbar / beta_c
/// xbar' = -damping * xbar / beta_c - g(x)
/// ```
pub fn reduce_second_order(sos: &SecondOrderSystem) -> VectorField {
    let n = sos.field.dim();
    let beta = DVector::from_vec(sos.beta_c.clone());
    let damp = DVector::from_vec(sos.damping.clone());
    let g = sos.field.clone();
    let (beta_e, damp_e, g_e) = (beta.clone(), damp.clone(), g.clone());
    let mut reduced = VectorField::new(2 * n, move |s| {
        let x = s.rows(0, n).into_owned();
        let gx = g_e.eval_unchecked(&x);
        DVector::from_fn(2 * n, |k, _| {
            if k < n {
                s[n + k] / beta_e[k]
            } else {
                let i = k - n;
                -damp_e[i] * s[k] / beta_e[i] - gx[i]
            }
        })
    });
    if g.has_analytic_jacobian() {
        reduced = reduced.with_jacobian(move |s| {
            let x = s.rows(0, n).into_owned();
            // Analytic availability was checked when the closure was built.
            let jg = g
                .jacobian(&x, JacobianScheme::Analytic)
                .unwrap_or_else(|_| DMatrix::from_element(n, n, f64::NAN));
            let mut jac = DMatrix::zeros(2 * n, 2 * n);
            for i in 0..n {
                jac[(i, n + i)] = 1.0 / beta[i];
                jac[(n + i, n + i)] = -damp[i] / beta[i];
                for j in 0..n {
                    jac[(n + i, j)] = -jg[(i, j)];
                }
            }
            jac
        });
    }
    if sos.field.domain_radius().is_finite() {
        reduced = reduced.with_domain_radius(sos.field.domain_radius());
    }
    reduced
}
