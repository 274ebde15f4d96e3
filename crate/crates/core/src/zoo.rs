//! Concrete systems: Lorenz, a single Josephson junction circuit and its
//! linearization, linear test fields, the double well and the
//! Ornstein-Uhlenbeck drift.

use std::collections::BTreeMap;
use std::fmt;
use std::sync::Arc;

use nalgebra::{dmatrix, dvector, DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::ZooError;
use crate::field::VectorField;

fn positive(name: &str, value: f64) -> Result<f64, ZooError> {
    if !value.is_finite() {
        return Err(ZooError::Invalid {
            name: name.to_string(),
            value,
        });
    }
    if value <= 0.0 {
        return Err(ZooError::NonPositive {
            name: name.to_string(),
            value,
        });
    }
    Ok(value)
}

fn finite(name: &str, value: f64) -> Result<f64, ZooError> {
    if value.is_finite() {
        Ok(value)
    } else {
        Err(ZooError::Invalid {
            name: name.to_string(),
            value,
        })
    }
}

/// `(sigma (y - x), rho x - y - x z, -beta z + x y)`.
pub fn lorenz(sigma: f64, rho: f64, beta: f64) -> Result<VectorField, ZooError> {
    let s = positive("sigma", sigma)?;
    let r = positive("rho", rho)?;
    let b = positive("beta", beta)?;
    Ok(VectorField::new(3, move |v| {
        let (x, y, z) = (v[0], v[1], v[2]);
        dvector![s * (y - x), r * x - y - x * z, -b * z + x * y]
    })
    .with_jacobian(move |v| {
        let (x, y, z) = (v[0], v[1], v[2]);
        dmatrix![
            -s, s, 0.0;
            r - z, -1.0, -x;
            y, x, -b
        ]
    }))
}

#[derive(Debug, Clone, Copy)]
struct JjParams {
    i: f64,
    r: f64,
    bc: f64,
    bl: f64,
}

impl JjParams {
    fn new(i: f64, r: f64, beta_c: f64, beta_l: f64) -> Result<Self, ZooError> {
        Ok(Self {
            i: finite("i", i)?,
            r: finite("r", r)?,
            bc: positive("beta_c", beta_c)?,
            bl: positive("beta_L", beta_l)?,
        })
    }

    /// `(g1, g2, g3)` at state `(y, delta, zeta)` with `sin` replaced by `s`.
    fn g(&self, y: f64, s: f64, zeta: f64) -> DVector<f64> {
        dvector![
            y,
            (-self.r * y + self.i - s - zeta) / self.bc,
            (y - zeta) / self.bl
        ]
    }

    /// `d(g1, g2, g3) / d(y, delta, zeta)` with `cos delta = c`.
    fn jac(&self, c: f64) -> DMatrix<f64> {
        dmatrix![
            1.0, 0.0, 0.0;
            -self.r / self.bc, -c / self.bc, -1.0 / self.bc;
            1.0 / self.bl, 0.0, -1.0 / self.bl
        ]
    }
}

/// One-form coefficients of the junction circuit in the state order
/// `(y, delta, zeta)`:
/// `g1 = y`, `g2 = (-r y + i - sin delta - zeta) / beta_c`,
/// `g3 = (y - zeta) / beta_L`.
///
/// `g1` is the rate of `delta` and `g2` the rate of `y`, so this field is
/// the form `g1 dy + g2 ddelta + g3 dzeta`, not the flow; see
/// [`jj_circuit_flow`].
pub fn jj_circuit(i: f64, r: f64, beta_c: f64, beta_l: f64) -> Result<VectorField, ZooError> {
    let p = JjParams::new(i, r, beta_c, beta_l)?;
    Ok(VectorField::new(3, move |v| p.g(v[0], v[1].sin(), v[2])).with_jacobian(move |v| p.jac(v[1].cos())))
}

/// [`jj_circuit`] with `sin delta` replaced by `delta`.
pub fn jj_circuit_linear(i: f64, r: f64, beta_c: f64, beta_l: f64) -> Result<VectorField, ZooError> {
    let p = JjParams::new(i, r, beta_c, beta_l)?;
    Ok(VectorField::new(3, move |v| p.g(v[0], v[1], v[2])).with_jacobian(move |_| p.jac(1.0)))
}

fn jj_flow(p: JjParams, linear: bool) -> VectorField {
    let swap = |g: DVector<f64>| dvector![g[1], g[0], g[2]];
    let swap_rows = |j: DMatrix<f64>| {
        let mut out = j.clone();
        out.set_row(0, &j.row(1));
        out.set_row(1, &j.row(0));
        out
    };
    VectorField::new(3, move |v| {
        let s = if linear { v[1] } else { v[1].sin() };
        swap(p.g(v[0], s, v[2]))
    })
    .with_jacobian(move |v| swap_rows(p.jac(if linear { 1.0 } else { v[1].cos() })))
}

/// Time derivative of `(y, delta, zeta)` for the junction circuit:
/// `(g2, g1, g3)`.
pub fn jj_circuit_flow(i: f64, r: f64, beta_c: f64, beta_l: f64) -> Result<VectorField, ZooError> {
    Ok(jj_flow(JjParams::new(i, r, beta_c, beta_l)?, false))
}

pub fn jj_circuit_linear_flow(i: f64, r: f64, beta_c: f64, beta_l: f64) -> Result<VectorField, ZooError> {
    Ok(jj_flow(JjParams::new(i, r, beta_c, beta_l)?, true))
}

/// `g(x) = Q x`.
pub fn quadratic(q: DMatrix<f64>) -> Result<VectorField, ZooError> {
    if q.nrows() != q.ncols() || q.nrows() == 0 {
        return Err(ZooError::Invalid {
            name: "Q rows".into(),
            value: q.nrows() as f64,
        });
    }
    if let Some(v) = q.iter().find(|v| !v.is_finite()) {
        return Err(ZooError::Invalid {
            name: "Q entry".into(),
            value: *v,
        });
    }
    Ok(VectorField::linear(q))
}

/// `(-x_2, x_1)`.
pub fn rotation() -> VectorField {
    VectorField::linear(dmatrix![0.0, -1.0; 1.0, 0.0])
}

/// `x^4 / 4 - x^2 / 2`.
pub fn double_well_potential(x: f64) -> f64 {
    0.25 * x.powi(4) - 0.5 * x * x
}

/// Gradient flow `x' = -V'(x) = x - x^3` of [`double_well_potential`].
pub fn double_well() -> (VectorField, fn(f64) -> f64) {
    let field = VectorField::new(1, |x| dvector![x[0] - x[0].powi(3)])
        .with_jacobian(|x| dmatrix![1.0 - 3.0 * x[0] * x[0]]);
    (field, double_well_potential)
}

/// `x' = -k x` in `dim` dimensions.
pub fn ou(dim: usize, k: f64) -> Result<VectorField, ZooError> {
    if dim == 0 {
        return Err(ZooError::Invalid {
            name: "dim".into(),
            value: 0.0,
        });
    }
    let k = positive("k", k)?;
    Ok(VectorField::linear(DMatrix::identity(dim, dim) * -k))
}

/// Caller-supplied phase functions and coupling matrix of a junction array.
#[derive(Clone)]
pub struct JjaData {
    /// `Phi_k(y)`, `k = 1..=N+1`.
    pub phi: VectorField,
    pub omega: DMatrix<f64>,
}

impl fmt::Debug for JjaData {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("JjaData")
            .field("phi", &self.phi)
            .field("omega", &self.omega)
            .finish()
    }
}

/// `g(y) = omega Phi(y)` for an array with frustration `M / N` and `N + 1`
/// phase variables. Refuses without caller data.
pub fn jja_interface(data: Option<&JjaData>, m: usize, n: usize) -> Result<VectorField, ZooError> {
    let data = data.ok_or_else(|| {
        ZooError::ExternalDataRequired(format!(
            "array with frustration {m}/{n} needs the phase functions Phi_k and the matrix omega"
        ))
    })?;
    if m == 0 || n == 0 {
        return Err(ZooError::Invalid {
            name: if m == 0 { "M" } else { "N" }.into(),
            value: 0.0,
        });
    }
    let dim = n + 1;
    if data.phi.dim() != dim || data.omega.nrows() != dim || data.omega.ncols() != dim {
        return Err(ZooError::Invalid {
            name: "data dimension".into(),
            value: data.phi.dim() as f64,
        });
    }
    let (phi, omega) = (data.phi.clone(), data.omega.clone());
    let mut field = VectorField::new(dim, move |y| match phi.eval(y) {
        Ok(p) => &omega * p,
        Err(_) => DVector::from_element(y.len(), f64::NAN),
    });
    if data.phi.has_analytic_jacobian() {
        let (phi, omega) = (data.phi.clone(), data.omega.clone());
        field = field.with_jacobian(move |y| match phi.jacobian(y, crate::field::JacobianScheme::Analytic) {
            Ok(j) => &omega * j,
            Err(_) => DMatrix::from_element(y.len(), y.len(), f64::NAN),
        });
    }
    Ok(field)
}

/// `a = D omega / 2`.
pub fn jja_coupling(d: &DMatrix<f64>, omega: &DMatrix<f64>) -> DMatrix<f64> {
    d * omega * 0.5
}

/// A system selected by name with a parameter map.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SystemSpec {
    pub name: String,
    #[serde(default)]
    pub params: BTreeMap<String, f64>,
}

impl SystemSpec {
    pub fn new(name: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            params: BTreeMap::new(),
        }
    }

    pub fn with(mut self, key: impl Into<String>, value: f64) -> Self {
        self.params.insert(key.into(), value);
        self
    }
}

pub type ScalarFn = Arc<dyn Fn(&DVector<f64>) -> f64 + Send + Sync>;

/// A built system.
#[derive(Clone)]
pub struct ZooSystem {
    /// Name plus every parameter, defaults filled in.
    pub spec: SystemSpec,
    pub dim: usize,
    /// Coefficients of the one-form under study.
    pub field: VectorField,
    /// Right-hand side `x' = flow(x)` used for simulation. Equal to `field`
    /// except for the junction circuit.
    pub flow: VectorField,
    /// `V` with `flow = -grad V`, when known in closed form.
    pub potential: Option<ScalarFn>,
}

impl fmt::Debug for ZooSystem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ZooSystem")
            .field("spec", &self.spec)
            .field("dim", &self.dim)
            .field("has_potential", &self.potential.is_some())
            .finish()
    }
}

/// A registry entry for listing.
#[derive(Debug, Clone, Serialize)]
pub struct ZooEntry {
    pub name: &'static str,
    pub description: &'static str,
    pub defaults: BTreeMap<String, f64>,
}

const NAMES: [(&str, &str); 7] = [
    ("lorenz", "Lorenz equations; params sigma, rho, beta"),
    (
        "jj_circuit",
        "Josephson junction circuit, state (y, delta, zeta); params i, r, beta_c, beta_L",
    ),
    ("jj_circuit_linear", "junction circuit with sin(delta) -> delta; params as jj_circuit"),
    ("quadratic", "g(x) = Q x; params dim and q_<row>_<col> (1-based, default identity)"),
    ("rotation", "g = (-x2, x1)"),
    ("double_well", "x' = x - x^3, V = x^4/4 - x^2/2"),
    ("ou", "x' = -k x; params dim, k"),
];

fn defaults(name: &str) -> Option<BTreeMap<String, f64>> {
    let pairs: &[(&str, f64)] = match name {
        "lorenz" => &[("sigma", 10.0), ("rho", 28.0), ("beta", 8.0 / 3.0)],
        "jj_circuit" | "jj_circuit_linear" => &[("i", 0.0), ("r", 1.0), ("beta_c", 1.0), ("beta_L", 1.0)],
        "quadratic" => &[("dim", 2.0)],
        "rotation" | "double_well" => &[],
        "ou" => &[("dim", 1.0), ("k", 1.0)],
        _ => return None,
    };
    Some(pairs.iter().map(|(k, v)| (k.to_string(), *v)).collect())
}

pub fn zoo_list() -> Vec<ZooEntry> {
    NAMES
        .iter()
        .map(|(name, description)| ZooEntry {
            name,
            description,
            defaults: defaults(name).unwrap_or_default(),
        })
        .collect()
}

fn as_dim(name: &str, v: f64) -> Result<usize, ZooError> {
    if v.fract() != 0.0 || !(1.0..=64.0).contains(&v) {
        return Err(ZooError::Invalid {
            name: name.into(),
            value: v,
        });
    }
    Ok(v as usize)
}

fn parse_q_key(key: &str, dim: usize) -> Option<(usize, usize)> {
    let rest = key.strip_prefix("q_")?;
    let (a, b) = rest.split_once('_')?;
    let (i, j): (usize, usize) = (a.parse().ok()?, b.parse().ok()?);
    (1..=dim).contains(&i).then_some(())?;
    (1..=dim).contains(&j).then_some((i - 1, j - 1))
}

/// Builds a named system, rejecting unknown parameters.
pub fn build(spec: &SystemSpec) -> Result<ZooSystem, ZooError> {
    let mut params = defaults(&spec.name).ok_or_else(|| ZooError::UnknownSystem(spec.name.clone()))?;
    let quadratic_dim = if spec.name == "quadratic" {
        Some(as_dim("dim", spec.params.get("dim").copied().unwrap_or(2.0))?)
    } else {
        None
    };
    for (k, v) in &spec.params {
        let known = params.contains_key(k) || quadratic_dim.is_some_and(|d| parse_q_key(k, d).is_some());
        if !known {
            return Err(ZooError::UnknownParameter {
                system: spec.name.clone(),
                param: k.clone(),
            });
        }
        params.insert(k.clone(), *v);
    }
    let p = |k: &str| params[k];
    let (field, flow, potential): (VectorField, VectorField, Option<ScalarFn>) = match spec.name.as_str() {
        "lorenz" => {
            let f = lorenz(p("sigma"), p("rho"), p("beta"))?;
            (f.clone(), f, None)
        }
        "jj_circuit" => (
            jj_circuit(p("i"), p("r"), p("beta_c"), p("beta_L"))?,
            jj_circuit_flow(p("i"), p("r"), p("beta_c"), p("beta_L"))?,
            None,
        ),
        "jj_circuit_linear" => (
            jj_circuit_linear(p("i"), p("r"), p("beta_c"), p("beta_L"))?,
            jj_circuit_linear_flow(p("i"), p("r"), p("beta_c"), p("beta_L"))?,
            None,
        ),
        "quadratic" => {
            let dim = quadratic_dim.expect("set above");
            let mut q = DMatrix::identity(dim, dim);
            for (k, v) in &params {
                if let Some((i, j)) = parse_q_key(k, dim) {
                    q[(i, j)] = *v;
                }
            }
            let symmetric = q == q.transpose();
            let f = quadratic(q.clone())?;
            let pot: Option<ScalarFn> =
                symmetric.then(|| Arc::new(move |x: &DVector<f64>| -0.5 * x.dot(&(&q * x))) as ScalarFn);
            (f.clone(), f, pot)
        }
        "rotation" => {
            let f = rotation();
            (f.clone(), f, None)
        }
        "double_well" => {
            let (f, _) = double_well();
            let pot: ScalarFn = Arc::new(|x: &DVector<f64>| double_well_potential(x[0]));
            (f.clone(), f, Some(pot))
        }
        "ou" => {
            let dim = as_dim("dim", p("dim"))?;
            let k = p("k");
            let f = ou(dim, k)?;
            let pot: ScalarFn = Arc::new(move |x: &DVector<f64>| 0.5 * k * x.norm_squared());
            (f.clone(), f, Some(pot))
        }
        _ => unreachable!("defaults() covers every name"),
    };
    Ok(ZooSystem {
        spec: SystemSpec {
            name: spec.name.clone(),
            params,
        },
        dim: field.dim(),
        field,
        flow,
        potential,
    })
}
