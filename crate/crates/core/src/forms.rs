//! The canonical one-form `G = sum_j g_j dx_j` of a field and its
//! homotopy-operator decomposition
//!
//! ```text
//! G = d(kG) + k(dG)
//! ```
//!
//! with the star point at the origin. All quantities are computed pointwise
//! along the ray `{t x : t in [0, 1]}`:
//!
//! * potential       `kG(x)        = int_0^1 x . g(tx) dt`
//! * exact part      `d(kG)(x)_j   = int_0^1 [t (J(tx)^T x)_j + g_j(tx)] dt`
//! * antiexact part  `k(dG)(x)_i   = int_0^1 t ((J - J^T)(tx) x)_i dt`
//!
//! The antiexact integrand is an antisymmetric matrix applied to `x`, so the
//! antiexact part is orthogonal to the radial direction.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::error::FormError;
use crate::field::{JacobianScheme, VectorField};
use crate::quadrature::RayQuadrature;

/// `G(x; xi) = g(x) . xi`.
#[derive(Debug, Clone)]
pub struct OneForm {
    field: VectorField,
}

impl OneForm {
    pub fn new(field: VectorField) -> Self {
        Self { field }
    }

    pub fn field(&self) -> &VectorField {
        &self.field
    }

    pub fn dim(&self) -> usize {
        self.field.dim()
    }

    pub fn evaluate(&self, x: &DVector<f64>, xi: &DVector<f64>) -> Result<f64, FormError> {
        Ok(self.field.eval(x)?.dot(xi))
    }
}

impl From<VectorField> for OneForm {
    fn from(field: VectorField) -> Self {
        Self::new(field)
    }
}

/// Exact/antiexact split of the form at one point.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Decomposition {
    pub point: DVector<f64>,
    pub potential: f64,
    pub exact_part: DVector<f64>,
    pub antiexact_part: DVector<f64>,
    /// Max-norm of `g(x) - exact_part - antiexact_part`.
    pub reconstruction_residual: f64,
}

impl Decomposition {
    /// `|antiexact_part . x|`; zero up to rounding.
    pub fn radial_violation(&self) -> f64 {
        self.antiexact_part.dot(&self.point).abs()
    }
}

fn check_domain(form: &OneForm, x: &DVector<f64>) -> Result<(), FormError> {
    let radius = form.field.domain_radius();
    if x.len() != form.dim() {
        return Err(FormError::Field(crate::error::FieldError::DimensionMismatch {
            expected: form.dim(),
            got: x.len(),
        }));
    }
    if x.norm() > radius * (1.0 + 1e-12) {
        return Err(FormError::OutsideDomain {
            point: x.iter().copied().collect(),
            radius,
        });
    }
    Ok(())
}

/// `kG(x)`. Exactly zero at the origin.
pub fn potential(form: &OneForm, x: &DVector<f64>, quad: &dyn RayQuadrature) -> Result<f64, FormError> {
    check_domain(form, x)?;
    if x.iter().all(|v| *v == 0.0) {
        return Ok(0.0);
    }
    let v = quad.integrate(1, &mut |t| {
        let g = form.field.eval(&(x * t))?;
        Ok(DVector::from_element(1, x.dot(&g)))
    })?;
    Ok(v[0])
}

/// Coefficients of the exact part `d(kG)` at `x`.
pub fn exact_part(
    form: &OneForm,
    x: &DVector<f64>,
    quad: &dyn RayQuadrature,
) -> Result<DVector<f64>, FormError> {
    check_domain(form, x)?;
    quad.integrate(form.dim(), &mut |t| {
        let tx = x * t;
        let g = form.field.eval(&tx)?;
        let j = form.field.jacobian(&tx, JacobianScheme::Auto)?;
        Ok(j.tr_mul(x) * t + g)
    })
}

/// Coefficients of the antiexact part `k(dG)` at `x`.
pub fn antiexact_part(
    form: &OneForm,
    x: &DVector<f64>,
    quad: &dyn RayQuadrature,
) -> Result<DVector<f64>, FormError> {
    check_domain(form, x)?;
    quad.integrate(form.dim(), &mut |t| {
        let a = dg_matrix_at(&form.field, &(x * t))?;
        Ok(a * x * t)
    })
}

/// Potential, exact and antiexact parts from a single pass along the ray.
pub fn decompose(
    form: &OneForm,
    x: &DVector<f64>,
    quad: &dyn RayQuadrature,
) -> Result<Decomposition, FormError> {
    check_domain(form, x)?;
    let n = form.dim();
    let stacked = quad.integrate(2 * n + 1, &mut |t| {
        let tx = x * t;
        let g = form.field.eval(&tx)?;
        let j = form.field.jacobian(&tx, JacobianScheme::Auto)?;
        let a = antisymmetric_part(&j);
        let exact = j.tr_mul(x) * t + &g;
        let anti = a * x * t;
        let mut out = DVector::zeros(2 * n + 1);
        out[0] = x.dot(&g);
        out.rows_mut(1, n).copy_from(&exact);
        out.rows_mut(1 + n, n).copy_from(&anti);
        Ok(out)
    })?;
    let potential = if x.iter().all(|v| *v == 0.0) { 0.0 } else { stacked[0] };
    let exact_part = stacked.rows(1, n).into_owned();
    let antiexact_part = stacked.rows(1 + n, n).into_owned();
    let g = form.field.eval(x)?;
    let reconstruction_residual = (&g - &exact_part - &antiexact_part).amax();
    Ok(Decomposition {
        point: x.clone(),
        potential,
        exact_part,
        antiexact_part,
        reconstruction_residual,
    })
}

/// `A = J - J^T`, the coefficient matrix of `dG` at `x`.
pub fn dg_matrix(field: &VectorField, x: &DVector<f64>) -> Result<DMatrix<f64>, FormError> {
    dg_matrix_at(field, x)
}

fn dg_matrix_at(field: &VectorField, x: &DVector<f64>) -> Result<DMatrix<f64>, FormError> {
    let j = field.jacobian(x, JacobianScheme::Auto)?;
    Ok(antisymmetric_part(&j))
}

/// `J - J^T` with the lower triangle written as the exact negation of the
/// upper one.
pub fn antisymmetric_part(j: &DMatrix<f64>) -> DMatrix<f64> {
    let n = j.nrows();
    let mut a = DMatrix::zeros(n, n);
    for r in 0..n {
        for c in (r + 1)..n {
            let v = j[(r, c)] - j[(c, r)];
            a[(r, c)] = v;
            a[(c, r)] = -v;
        }
    }
    a
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quadrature::{AdaptiveQuadrature, QuadratureRule};
    use approx::assert_abs_diff_eq;
    use nalgebra::{dmatrix, dvector};

    fn lorenz() -> VectorField {
        let (s, r, b) = (10.0, 28.0, 8.0 / 3.0);
        VectorField::new(3, move |p| {
            dvector![s * (p[1] - p[0]), r * p[0] - p[1] - p[0] * p[2], -b * p[2] + p[0] * p[1]]
        })
        .with_jacobian(move |p| dmatrix![-s, s, 0.0; r - p[2], -1.0, -p[0]; p[1], p[0], -b])
    }

    fn rotation() -> VectorField {
        VectorField::linear(dmatrix![0.0, -1.0; 1.0, 0.0])
    }

    #[test]
    fn identity_potential() {
        let form = OneForm::new(VectorField::identity(2));
        let q = QuadratureRule::gauss_legendre(32);
        assert_abs_diff_eq!(potential(&form, &dvector![1.0, 1.0], &q).unwrap(), 1.0, epsilon = 1e-14);
        let d = decompose(&form, &dvector![1.0, 1.0], &q).unwrap();
        assert_abs_diff_eq!(d.exact_part, dvector![1.0, 1.0], epsilon = 1e-14);
        assert_abs_diff_eq!(d.antiexact_part, dvector![0.0, 0.0], epsilon = 1e-14);
        assert!(d.reconstruction_residual < 1e-12);
    }

    #[test]
    fn quadratic_potential() {
        let form = OneForm::new(VectorField::linear(dmatrix![2.0, 1.0; 1.0, 3.0]));
        let q = QuadratureRule::gauss_legendre(8);
        assert_abs_diff_eq!(potential(&form, &dvector![1.0, 0.0], &q).unwrap(), 1.0, epsilon = 1e-14);
        let x = dvector![0.3, -0.7];
        assert_abs_diff_eq!(
            exact_part(&form, &x, &q).unwrap(),
            dmatrix![2.0, 1.0; 1.0, 3.0] * &x,
            epsilon = 1e-14
        );
    }

    #[test]
    fn lorenz_decomposition_at_ones() {
        let form = OneForm::new(lorenz());
        let q = QuadratureRule::gauss_legendre(64);
        let x = dvector![1.0, 1.0, 1.0];
        // (rho - 1 - beta) / 2 from the closed-form Lorenz potential.
        let v = potential(&form, &x, &q).unwrap();
        assert_abs_diff_eq!(v, (28.0 - 1.0 - 8.0 / 3.0) / 2.0, epsilon = 1e-12);
        let e = exact_part(&form, &x, &q).unwrap();
        assert_abs_diff_eq!(e, dvector![9.0, 18.0, -8.0 / 3.0], epsilon = 1e-12);
        let a = antiexact_part(&form, &x, &q).unwrap();
        assert_abs_diff_eq!(a, dvector![-9.0, 8.0, 1.0], epsilon = 1e-12);
        let d = decompose(&form, &x, &q).unwrap();
        assert!(d.reconstruction_residual < 1e-8);
        assert_abs_diff_eq!(d.exact_part + d.antiexact_part, dvector![0.0, 26.0, -5.0 / 3.0], epsilon = 1e-12);
    }

    #[test]
    fn rotation_is_entirely_antiexact() {
        let form = OneForm::new(rotation());
        let q = AdaptiveQuadrature::default();
        let a = antiexact_part(&form, &dvector![1.0, 0.0], &q).unwrap();
        assert_abs_diff_eq!(a, dvector![0.0, 1.0], epsilon = 1e-14);
        for x in [dvector![0.3, 0.4], dvector![-1.5, 2.0]] {
            let d = decompose(&form, &x, &q).unwrap();
            assert!(d.potential.abs() < 1e-14);
            assert!(d.exact_part.amax() < 1e-12);
            assert_abs_diff_eq!(d.antiexact_part, rotation().eval(&x).unwrap(), epsilon = 1e-12);
        }
    }

    #[test]
    fn origin_behaviour() {
        let shifted = VectorField::new(2, |p| dvector![1.0 + p[1], -2.0 + p[0] * p[0]]);
        let form = OneForm::new(shifted);
        let q = QuadratureRule::gauss_legendre(16);
        let zero = dvector![0.0, 0.0];
        assert_eq!(potential(&form, &zero, &q).unwrap(), 0.0);
        let d = decompose(&form, &zero, &q).unwrap();
        assert_eq!(d.potential, 0.0);
        assert_abs_diff_eq!(d.exact_part, dvector![1.0, -2.0], epsilon = 1e-14);
        assert_eq!(d.antiexact_part, dvector![0.0, 0.0]);
    }

    #[test]
    fn dg_matrix_examples() {
        let sym = VectorField::linear(dmatrix![1.0, 2.0; 2.0, -1.0]);
        assert_eq!(dg_matrix(&sym, &dvector![0.5, 0.5]).unwrap(), DMatrix::zeros(2, 2));
        let a = dg_matrix(&lorenz(), &dvector![1.0, 1.0, 1.0]).unwrap();
        assert_abs_diff_eq!(a[(0, 1)], -17.0, epsilon = 1e-14);
        assert_abs_diff_eq!(a[(1, 2)], -2.0, epsilon = 1e-14);
        assert_abs_diff_eq!(a[(0, 2)], -1.0, epsilon = 1e-14);
        assert_eq!(a.transpose(), -a.clone());
    }

    #[test]
    fn outside_domain_rejected() {
        let form = OneForm::new(VectorField::identity(2).with_domain_radius(1.0));
        let q = QuadratureRule::gauss_legendre(4);
        assert!(matches!(
            potential(&form, &dvector![1.0, 1.0], &q),
            Err(FormError::OutsideDomain { .. })
        ));
    }

    #[test]
    fn finite_difference_only_field() {
        // Lorenz without an analytic Jacobian still decomposes accurately.
        let f = lorenz();
        let fd_only = VectorField::new(3, move |p| f.eval(p).unwrap());
        let form = OneForm::new(fd_only);
        let d = decompose(&form, &dvector![0.5, -1.0, 1.2], &QuadratureRule::gauss_legendre(32)).unwrap();
        assert!(d.reconstruction_residual < 1e-7, "{}", d.reconstruction_residual);
        assert!(d.radial_violation() < 1e-12);
    }
}
