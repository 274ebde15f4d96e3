//! Gauss-Legendre rules on `[0, 1]` for the ray integrals of the homotopy
//! operator, plus a doubling refinement driver.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::FormError;

/// Integrates vector-valued integrands over `t in [0, 1]`.
pub trait RayQuadrature: Sync {
    fn integrate(
        &self,
        len: usize,
        f: &mut dyn FnMut(f64) -> Result<DVector<f64>, FormError>,
    ) -> Result<DVector<f64>, FormError>;
}

/// Fixed nodes and weights on `[0, 1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuadratureRule {
    nodes: Vec<f64>,
    weights: Vec<f64>,
    degree: usize,
}

impl QuadratureRule {
    /// `n`-point Gauss-Legendre rule mapped to `[0, 1]`; exact for
    /// polynomials of degree `2n - 1`.
    pub fn gauss_legendre(n: usize) -> Self {
        assert!(n > 0, "Gauss-Legendre rule needs at least one node");
        let mut nodes = vec![0.0; n];
        let mut weights = vec![0.0; n];
        let m = n.div_ceil(2);
        let nf = n as f64;
        for i in 0..m {
            // Tricomi's initial guess, then Newton on P_n.
            let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (nf + 0.5)).cos();
            let mut dp = 1.0;
            for _ in 0..100 {
                let (p, d) = legendre_with_derivative(n, x);
                dp = d;
                let dx = p / d;
                x -= dx;
                if dx.abs() <= 1e-16 * x.abs().max(1.0) {
                    let (_, d) = legendre_with_derivative(n, x);
                    dp = d;
                    break;
                }
            }
            let w = 2.0 / ((1.0 - x * x) * dp * dp);
            // x > 0 here; store the symmetric pair in ascending order on [0, 1].
            nodes[n - 1 - i] = 0.5 * (1.0 + x);
            nodes[i] = 0.5 * (1.0 - x);
            weights[n - 1 - i] = 0.5 * w;
            weights[i] = 0.5 * w;
        }
        Self {
            nodes,
            weights,
            degree: 2 * n - 1,
        }
    }

    /// Builds a rule from explicit nodes and weights.
    pub fn from_parts(nodes: Vec<f64>, weights: Vec<f64>, degree: usize) -> Result<Self, FormError> {
        if nodes.is_empty() || nodes.len() != weights.len() {
            return Err(FormError::EmptyRule);
        }
        Ok(Self {
            nodes,
            weights,
            degree,
        })
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Highest polynomial degree integrated exactly.
    pub fn degree(&self) -> usize {
        self.degree
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Scalar convenience wrapper.
    pub fn integrate_scalar(&self, mut f: impl FnMut(f64) -> f64) -> f64 {
        self.nodes
            .iter()
            .zip(&self.weights)
            .map(|(&t, &w)| w * f(t))
            .sum()
    }

    /// Integral over `[a, b]` split into `panels` equal panels.
    pub fn integrate_panels(
        &self,
        a: f64,
        b: f64,
        panels: usize,
        len: usize,
        f: &mut dyn FnMut(f64) -> Result<DVector<f64>, FormError>,
    ) -> Result<DVector<f64>, FormError> {
        let panels = panels.max(1);
        let width = (b - a) / panels as f64;
        let mut acc = DVector::zeros(len);
        for p in 0..panels {
            let lo = a + width * p as f64;
            for (&t, &w) in self.nodes.iter().zip(&self.weights) {
                acc.axpy(w * width, &f(lo + width * t)?, 1.0);
            }
        }
        Ok(acc)
    }

    fn integrate_with_scale(
        &self,
        len: usize,
        f: &mut dyn FnMut(f64) -> Result<DVector<f64>, FormError>,
    ) -> Result<(DVector<f64>, f64), FormError> {
        let mut acc = DVector::zeros(len);
        let mut scale = 0.0;
        for (&t, &w) in self.nodes.iter().zip(&self.weights) {
            let v = f(t)?;
            scale += w * v.amax();
            acc.axpy(w, &v, 1.0);
        }
        Ok((acc, scale))
    }
}

impl RayQuadrature for QuadratureRule {
    fn integrate(
        &self,
        len: usize,
        f: &mut dyn FnMut(f64) -> Result<DVector<f64>, FormError>,
    ) -> Result<DVector<f64>, FormError> {
        self.integrate_with_scale(len, f).map(|(v, _)| v)
    }
}

fn legendre_with_derivative(n: usize, x: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = x;
    for k in 2..=n {
        let kf = k as f64;
        let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
        p0 = p1;
        p1 = p2;
    }
    let p = if n == 0 { 1.0 } else { p1 };
    let dp = n as f64 * (x * p - p0) / (x * x - 1.0);
    (p, dp)
}

/// Doubling Gauss-Legendre refinement: `initial`, `2 * initial`, ... nodes
/// until successive results agree to `rel_tol`, capped at `max_nodes`.
#[derive(Debug, Clone)]
pub struct AdaptiveQuadrature {
    rules: Vec<QuadratureRule>,
    rel_tol: f64,
}

impl AdaptiveQuadrature {
    pub fn new(initial: usize, max_nodes: usize, rel_tol: f64) -> Self {
        assert!(initial > 0 && max_nodes >= initial);
        let mut rules = Vec::new();
        let mut n = initial;
        while n <= max_nodes {
            rules.push(QuadratureRule::gauss_legendre(n));
            n *= 2;
        }
        Self { rules, rel_tol }
    }

    pub fn max_nodes(&self) -> usize {
        self.rules.last().map_or(0, QuadratureRule::len)
    }
}

impl Default for AdaptiveQuadrature {
    /// 32 nodes doubling to 256, relative tolerance `1e-10`.
    fn default() -> Self {
        Self::new(32, 256, 1e-10)
    }
}

impl RayQuadrature for AdaptiveQuadrature {
    fn integrate(
        &self,
        len: usize,
        f: &mut dyn FnMut(f64) -> Result<DVector<f64>, FormError>,
    ) -> Result<DVector<f64>, FormError> {
        let mut rules = self.rules.iter();
        let first = rules.next().expect("adaptive quadrature has at least one rule");
        let (mut prev, _) = first.integrate_with_scale(len, f)?;
        for rule in rules {
            let (next, scale) = rule.integrate_with_scale(len, f)?;
            let diff = (&next - &prev).amax();
            prev = next;
            if diff <= self.rel_tol * prev.amax() + 4.0 * f64::EPSILON * scale {
                break;
            }
        }
        Ok(prev)
    }
}

/// Serializable choice of ray quadrature.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum QuadratureSpec {
    Fixed { nodes: usize },
    Adaptive {
        initial: usize,
        max_nodes: usize,
        rel_tol: f64,
    },
}

impl Default for QuadratureSpec {
    fn default() -> Self {
        QuadratureSpec::Adaptive {
            initial: 32,
            max_nodes: 256,
            rel_tol: 1e-10,
        }
    }
}

impl QuadratureSpec {
    pub fn build(&self) -> Box<dyn RayQuadrature + Send> {
        match *self {
            QuadratureSpec::Fixed { nodes } => Box::new(QuadratureRule::gauss_legendre(nodes.max(1))),
            QuadratureSpec::Adaptive {
                initial,
                max_nodes,
                rel_tol,
            } => Box::new(AdaptiveQuadrature::new(
                initial.max(1),
                max_nodes.max(initial.max(1)),
                rel_tol,
            )),
        }
    }
}
