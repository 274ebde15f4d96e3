//! Closedness, the Frobenius condition `w ^ dw = 0`, and circulation.

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::error::{FormError, IntegrabilityError};
use crate::field::{JacobianScheme, VectorField};
use crate::forms::OneForm;
use crate::linalg::relative_asymmetry;
use crate::quadrature::QuadratureRule;

/// Default closedness tolerance (relative asymmetry).
pub const DEFAULT_TOL: f64 = 1e-8;
/// Parameter panels used by [`loop_integral`] by default.
pub const DEFAULT_LOOP_PANELS: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Verdict {
    /// Symmetric Jacobian at every sample: gradient or gradient-like.
    Closed,
    /// Only asymmetry was measured and it exceeds the tolerance.
    NotClosed,
    /// Not closed, but `w ^ dw = 0` at every sample, so an integrating
    /// factor may exist locally.
    FrobeniusIntegrable,
    NonIntegrable,
}

impl fmt::Display for Verdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Verdict::Closed => "Closed",
            Verdict::NotClosed => "NotClosed",
            Verdict::FrobeniusIntegrable => "FrobeniusIntegrable (local)",
            Verdict::NonIntegrable => "NonIntegrable",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClosednessReport {
    /// Max over samples of `max|J - J^T| / (1 + max|J|)`.
    pub max_asymmetry: f64,
    /// Max over samples of the Frobenius defect divided by
    /// `3 max|f| (1 + max|J|)`; never exceeds the relative asymmetry.
    pub frobenius_defect_max: Option<f64>,
    /// Max over samples of the unnormalized defect.
    pub frobenius_defect_raw_max: Option<f64>,
    pub loop_integrals: Vec<(String, f64)>,
    pub tolerance: f64,
    pub samples: usize,
    pub verdict: Verdict,
}

/// Max relative asymmetry of the Jacobian over `samples`.
pub fn closedness(
    field: &VectorField,
    samples: &[DVector<f64>],
    tol: f64,
) -> Result<ClosednessReport, IntegrabilityError> {
    if samples.is_empty() {
        return Err(IntegrabilityError::EmptySamples);
    }
    let mut max_asymmetry: f64 = 0.0;
    for x in samples {
        let j = field.jacobian(x, JacobianScheme::Auto)?;
        max_asymmetry = max_asymmetry.max(relative_asymmetry(&j));
    }
    Ok(ClosednessReport {
        max_asymmetry,
        frobenius_defect_max: None,
        frobenius_defect_raw_max: None,
        loop_integrals: Vec::new(),
        tolerance: tol,
        samples: samples.len(),
        verdict: if max_asymmetry <= tol {
            Verdict::Closed
        } else {
            Verdict::NotClosed
        },
    })
}

fn frobenius_from_jet(f: &DVector<f64>, j: &DMatrix<f64>) -> f64 {
    let n = f.len();
    let mut worst: f64 = 0.0;
    // d_k f_i = j[(i, k)]
    for l in 0..n {
        for k in (l + 1)..n {
            for i in (k + 1)..n {
                let term = f[l] * (j[(i, k)] - j[(k, i)])
                    + f[k] * (j[(l, i)] - j[(i, l)])
                    + f[i] * (j[(k, l)] - j[(l, k)]);
                worst = worst.max(term.abs());
            }
        }
    }
    worst
}

/// Max over index triples `l < k < i` of the `dx_l ^ dx_k ^ dx_i`
/// coefficient of `w ^ dw`. Zero for `N < 3`; `|f . curl f|` for `N = 3`.
pub fn frobenius_defect(field: &VectorField, x: &DVector<f64>) -> Result<f64, IntegrabilityError> {
    if field.dim() < 3 {
        return Ok(0.0);
    }
    let f = field.eval(x)?;
    let j = field.jacobian(x, JacobianScheme::Auto)?;
    Ok(frobenius_from_jet(&f, &j))
}

fn frobenius_relative(f: &DVector<f64>, j: &DMatrix<f64>) -> (f64, f64) {
    let raw = frobenius_from_jet(f, j);
    let fmax = f.amax();
    let rel = if fmax == 0.0 {
        0.0
    } else {
        raw / (3.0 * fmax * (1.0 + j.amax()))
    };
    (raw, rel)
}

/// Closed, FrobeniusIntegrable or NonIntegrable, in that order of preference.
pub fn classify(
    field: &VectorField,
    samples: &[DVector<f64>],
    tol: f64,
) -> Result<ClosednessReport, IntegrabilityError> {
    if samples.is_empty() {
        return Err(IntegrabilityError::EmptySamples);
    }
    let mut max_asymmetry: f64 = 0.0;
    let mut fro_rel: f64 = 0.0;
    let mut fro_raw: f64 = 0.0;
    for x in samples {
        let f = field.eval(x)?;
        let j = field.jacobian(x, JacobianScheme::Auto)?;
        max_asymmetry = max_asymmetry.max(relative_asymmetry(&j));
        if field.dim() >= 3 {
            let (raw, rel) = frobenius_relative(&f, &j);
            fro_raw = fro_raw.max(raw);
            fro_rel = fro_rel.max(rel);
        }
    }
    let verdict = if max_asymmetry <= tol {
        Verdict::Closed
    } else if fro_rel <= tol {
        Verdict::FrobeniusIntegrable
    } else {
        Verdict::NonIntegrable
    };
    Ok(ClosednessReport {
        max_asymmetry,
        frobenius_defect_max: Some(fro_rel),
        frobenius_defect_raw_max: Some(fro_raw),
        loop_integrals: Vec::new(),
        tolerance: tol,
        samples: samples.len(),
        verdict,
    })
}

type CurveFn = dyn Fn(f64) -> DVector<f64> + Send + Sync;

/// A closed curve `gamma: [0, 1] -> R^N` with optional analytic tangent.
#[derive(Clone)]
pub struct Loop {
    id: String,
    point: Arc<CurveFn>,
    tangent: Option<Arc<CurveFn>>,
}

impl fmt::Debug for Loop {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Loop").field("id", &self.id).finish()
    }
}

impl Loop {
    pub fn new<P>(id: impl Into<String>, point: P) -> Self
    where
        P: Fn(f64) -> DVector<f64> + Send + Sync + 'static,
    {
        Self {
            id: id.into(),
            point: Arc::new(point),
            tangent: None,
        }
    }

    pub fn with_tangent<T>(mut self, tangent: T) -> Self
    where
        T: Fn(f64) -> DVector<f64> + Send + Sync + 'static,
    {
        self.tangent = Some(Arc::new(tangent));
        self
    }

    /// Circle `center + radius (cos 2pi s u + sin 2pi s v)`; `u`, `v`
    /// should be orthonormal.
    pub fn circle(
        id: impl Into<String>,
        center: DVector<f64>,
        u: DVector<f64>,
        v: DVector<f64>,
        radius: f64,
    ) -> Self {
        let tau = std::f64::consts::TAU;
        let (u2, v2) = (u.clone(), v.clone());
        Self::new(id, move |s| {
            let th = tau * s;
            &center + &u * (radius * th.cos()) + &v * (radius * th.sin())
        })
        .with_tangent(move |s| {
            let th = tau * s;
            (&v2 * th.cos() - &u2 * th.sin()) * (radius * tau)
        })
    }

    /// Circle about the origin in the coordinate plane `(a, b)`.
    pub fn coordinate_circle(dim: usize, a: usize, b: usize, radius: f64) -> Self {
        let u = DVector::from_fn(dim, |k, _| if k == a { 1.0 } else { 0.0 });
        let v = DVector::from_fn(dim, |k, _| if k == b { 1.0 } else { 0.0 });
        Self::circle(format!("circle_{a}_{b}"), DVector::zeros(dim), u, v, radius)
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn point(&self, s: f64) -> DVector<f64> {
        (self.point)(s)
    }

    pub fn tangent(&self, s: f64) -> DVector<f64> {
        match &self.tangent {
            Some(t) => t(s),
            None => {
                let h = f64::EPSILON.cbrt();
                ((self.point)(s + h) - (self.point)(s - h)) / (2.0 * h)
            }
        }
    }
}

/// `oint sum_i g_i dx_i` with [`DEFAULT_LOOP_PANELS`] panels.
pub fn loop_integral(form: &OneForm, gamma: &Loop, quad: &QuadratureRule) -> Result<f64, FormError> {
    loop_integral_panels(form, gamma, quad, DEFAULT_LOOP_PANELS)
}

pub fn loop_integral_panels(
    form: &OneForm,
    gamma: &Loop,
    quad: &QuadratureRule,
    panels: usize,
) -> Result<f64, FormError> {
    let start = gamma.point(0.0);
    let gap = (&start - gamma.point(1.0)).amax();
    if gap > 1e-10 * (1.0 + start.amax()) {
        return Err(FormError::OpenCurve { gap });
    }
    let v = quad.integrate_panels(0.0, 1.0, panels, 1, &mut |s| {
        let p = gamma.point(s);
        let g = form.field().eval(&p)?;
        Ok(DVector::from_element(1, g.dot(&gamma.tangent(s))))
    })?;
    Ok(v[0])
}
