//! Changes of variables that make a field's one-form closed.
//!
//! Constant case: `x = D y` turns `y' = J y` into `x' = D J D^-1 x`.
//! State-dependent case: `x = D(y) y` with `D` drawn from a polynomial
//! [`MatrixFamily`] and fitted by damped least squares on collocation
//! samples.

use std::fmt;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::Serialize;

use crate::error::GradientizeError;
use crate::field::{JacobianScheme, VectorField};
use crate::forms::{potential, OneForm};
use crate::linalg::{det_ratio, nullspace, relative_asymmetry, unvec};
use crate::quadrature::QuadratureRule;

/// Outcome of a gradientization attempt.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum GradientizeVerdict {
    /// An invertible `D` was found and every check passed.
    Gradientized,
    /// The defining equation has an invertible solution but the transformed
    /// form is not closed.
    ConsistencyOnlySolution,
    /// No admissible `D` exists (or none was found).
    Infeasible,
    /// The iterative solver stopped above tolerance.
    NotConverged,
}

impl fmt::Display for GradientizeVerdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            GradientizeVerdict::Gradientized => "gradientized",
            GradientizeVerdict::ConsistencyOnlySolution => "consistency-only solution",
            GradientizeVerdict::Infeasible => "infeasible",
            GradientizeVerdict::NotConverged => "not converged",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ConstantMethod {
    /// Null space of `D -> D - J^T D^T`.
    ConsistencyEquation,
    /// SPD `S` with `S J = J^T S`, then `D^T D = S`.
    Symmetrizer,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConstantOptions {
    /// Relative tolerance for closedness and the necessary condition.
    pub tol: f64,
    /// Singular values below `null_rel_tol * sigma_max` count as zero.
    pub null_rel_tol: f64,
    /// Random combinations tried when searching the null space for an
    /// invertible element.
    pub draws: usize,
    pub seed: u64,
    /// Absolute tolerance on `max |grad V - F|`.
    pub consistency_tol: f64,
    pub consistency_samples: usize,
    /// Minimum eigenvalue (trace-normalized) accepted as positive definite.
    pub spd_margin: f64,
}

impl Default for ConstantOptions {
    fn default() -> Self {
        Self {
            tol: 1e-8,
            null_rel_tol: 1e-10,
            draws: 64,
            seed: 0,
            consistency_tol: 1e-6,
            consistency_samples: 8,
            spd_margin: 1e-9,
        }
    }
}

/// Residuals of a candidate constant `D` for a constant Jacobian `J`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ConstantChecks {
    /// `max |D^T D J - J^T D^T D|`.
    pub necessary_residual: f64,
    /// The same divided by `max|D^T D| * (1 + max|J|)`.
    pub necessary_relative: f64,
    /// Relative asymmetry of `D J D^-1`.
    pub transformed_asymmetry: f64,
    /// `max |grad V - F|` with `V` the homotopy potential of the
    /// transformed field.
    pub consistency_residual: f64,
}

impl ConstantChecks {
    pub fn passes(&self, opts: &ConstantOptions) -> bool {
        self.transformed_asymmetry <= opts.tol
            && self.necessary_relative <= opts.tol
            && self.consistency_residual <= opts.consistency_tol
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ConstantSolveReport {
    pub method: ConstantMethod,
    /// Orthonormal basis of the solution space (matrices `D` for the
    /// consistency equation, symmetric `S` for the symmetrizer).
    pub nullspace_basis: Vec<DMatrix<f64>>,
    /// `J` is symmetric, so `D = I` was taken as the trivial solution.
    pub identity_adjoined: bool,
    /// Selected `D`, scaled to Frobenius norm `sqrt(N)`.
    pub chosen_d: Option<DMatrix<f64>>,
    pub checks: Option<ConstantChecks>,
    /// `max |I - J^T|`: the consistency equation evaluated at `D = I`.
    pub identity_residual: f64,
    pub det_j: f64,
    /// `det J = 1`, the determinant condition implied by `D = I`.
    pub det_j_is_one: bool,
    /// Symmetrizer route: the selected `S = D^T D` (trace 1).
    pub symmetrizer: Option<DMatrix<f64>>,
    pub symmetrizer_min_eigenvalue: Option<f64>,
    pub verdict: GradientizeVerdict,
}

fn validate(m: &DMatrix<f64>) -> Result<usize, GradientizeError> {
    if m.nrows() != m.ncols() || m.nrows() == 0 || m.iter().any(|v| !v.is_finite()) {
        return Err(GradientizeError::BadMatrix);
    }
    Ok(m.nrows())
}

/// `max |D^T D J - J^T D^T D|` (absolute).
pub fn check_necessary_constant(d: &DMatrix<f64>, j: &DMatrix<f64>) -> Result<f64, GradientizeError> {
    let n = validate(j)?;
    if validate(d)? != n {
        return Err(GradientizeError::BadMatrix);
    }
    let s = d.tr_mul(d);
    Ok((&s * j - j.tr_mul(&s)).amax())
}

/// `x' = D g(D^-1 x)`.
pub fn transform_field(field: &VectorField, d: &DMatrix<f64>) -> Result<VectorField, GradientizeError> {
    let n = validate(d)?;
    if n != field.dim() {
        return Err(GradientizeError::BadMatrix);
    }
    let d_inv = invert(d)?;
    let radius = field.domain_radius();
    let (g, dd, di) = (field.clone(), d.clone(), d_inv.clone());
    let mut out = VectorField::new(n, move |x| match g.eval(&(&di * x)) {
        Ok(v) => &dd * v,
        Err(_) => DVector::from_element(x.len(), f64::NAN),
    });
    if field.has_analytic_jacobian() {
        let (g, dd, di) = (field.clone(), d.clone(), d_inv);
        out = out.with_jacobian(move |x| match g.jacobian(&(&di * x), JacobianScheme::Analytic) {
            Ok(jg) => &dd * jg * &di,
            Err(_) => DMatrix::from_element(x.len(), x.len(), f64::NAN),
        });
    }
    if radius.is_finite() {
        let smin = d.clone().svd(false, false).singular_values.min();
        out = out.with_domain_radius(radius * smin);
    }
    Ok(out)
}

fn invert(d: &DMatrix<f64>) -> Result<DMatrix<f64>, GradientizeError> {
    let det = d.determinant();
    if det_ratio(d) < 1e-14 {
        return Err(GradientizeError::Singular { det });
    }
    d.clone().try_inverse().ok_or(GradientizeError::Singular { det })
}

/// Residuals of `d` as a constant gradientizing matrix for `J`.
pub fn evaluate_constant(
    j: &DMatrix<f64>,
    d: &DMatrix<f64>,
    opts: &ConstantOptions,
) -> Result<ConstantChecks, GradientizeError> {
    let n = validate(j)?;
    let necessary_residual = check_necessary_constant(d, j)?;
    let s = d.tr_mul(d);
    let necessary_relative = necessary_residual / (s.amax() * (1.0 + j.amax()));
    let m = d * j * invert(d)?;
    let transformed_asymmetry = relative_asymmetry(&m);
    let tfield = VectorField::linear(m);
    let samples = crate::sampling::halton_ball(opts.consistency_samples.max(1), n, 1.0, opts.seed);
    let consistency_residual = consistency_check(&tfield, &samples, &QuadratureRule::gauss_legendre(4))?;
    Ok(ConstantChecks {
        necessary_residual,
        necessary_relative,
        transformed_asymmetry,
        consistency_residual,
    })
}

fn normalized(d: DMatrix<f64>) -> DMatrix<f64> {
    let n = d.nrows() as f64;
    let norm = d.norm();
    d * (n.sqrt() / norm)
}

/// Solves `D - J^T D^T = 0` for constant `D`.
pub fn solve_consistency_constant(j: &DMatrix<f64>) -> Result<ConstantSolveReport, GradientizeError> {
    solve_consistency_constant_with(j, &ConstantOptions::default())
}

pub fn solve_consistency_constant_with(
    j: &DMatrix<f64>,
    opts: &ConstantOptions,
) -> Result<ConstantSolveReport, GradientizeError> {
    let n = validate(j)?;
    let nn = n * n;
    // Row (i, k) of the map reads D_ik - sum_l J_li D_kl.
    let mut map = DMatrix::zeros(nn, nn);
    for i in 0..n {
        for k in 0..n {
            let row = i * n + k;
            map[(row, row)] += 1.0;
            for l in 0..n {
                map[(row, k * n + l)] -= j[(l, i)];
            }
        }
    }
    let basis: Vec<DMatrix<f64>> = nullspace(&map, opts.null_rel_tol)
        .iter()
        .map(|v| unvec(v, n))
        .collect();

    let identity_adjoined = relative_asymmetry(j) <= opts.tol;
    let chosen = if identity_adjoined {
        Some(DMatrix::identity(n, n))
    } else {
        pick_invertible(&basis, opts).map(normalized)
    };
    let checks = chosen.as_ref().map(|d| evaluate_constant(j, d, opts)).transpose()?;
    let verdict = match &checks {
        None => GradientizeVerdict::Infeasible,
        Some(c) if c.passes(opts) => GradientizeVerdict::Gradientized,
        Some(_) => GradientizeVerdict::ConsistencyOnlySolution,
    };
    let det_j = j.determinant();
    Ok(ConstantSolveReport {
        method: ConstantMethod::ConsistencyEquation,
        nullspace_basis: basis,
        identity_adjoined,
        chosen_d: chosen,
        checks,
        identity_residual: (DMatrix::identity(n, n) - j.transpose()).amax(),
        det_j,
        det_j_is_one: (det_j - 1.0).abs() <= opts.tol * det_j.abs().max(1.0),
        symmetrizer: None,
        symmetrizer_min_eigenvalue: None,
        verdict,
    })
}

/// Best-conditioned element among the basis matrices and seeded random
/// combinations of them, if any is invertible.
fn pick_invertible(basis: &[DMatrix<f64>], opts: &ConstantOptions) -> Option<DMatrix<f64>> {
    if basis.is_empty() {
        return None;
    }
    let mut best: Option<(f64, DMatrix<f64>)> = None;
    let mut consider = |m: DMatrix<f64>| {
        let r = det_ratio(&m);
        if best.as_ref().is_none_or(|(b, _)| r > *b) {
            best = Some((r, m));
        }
    };
    for b in basis {
        consider(b.clone());
    }
    if basis.len() > 1 {
        let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
        for _ in 0..opts.draws {
            let mut m = DMatrix::zeros(basis[0].nrows(), basis[0].ncols());
            for b in basis {
                let c: f64 = StandardNormal.sample(&mut rng);
                m += b * c;
            }
            consider(m);
        }
    }
    best.filter(|(r, _)| *r > 1e-8).map(|(_, m)| m)
}

/// Finds symmetric positive definite `S` with `S J = J^T S`, then
/// `D = L^T` from `S = L L^T`, so that `D J D^-1` is symmetric.
pub fn solve_symmetrizer(j: &DMatrix<f64>) -> Result<ConstantSolveReport, GradientizeError> {
    solve_symmetrizer_with(j, &ConstantOptions::default())
}

pub fn solve_symmetrizer_with(
    j: &DMatrix<f64>,
    opts: &ConstantOptions,
) -> Result<ConstantSolveReport, GradientizeError> {
    let n = validate(j)?;
    let unknowns: Vec<(usize, usize)> = (0..n).flat_map(|p| (p..n).map(move |q| (p, q))).collect();
    let pairs: Vec<(usize, usize)> = (0..n).flat_map(|r| ((r + 1)..n).map(move |c| (r, c))).collect();
    let unit = |(p, q): (usize, usize)| {
        let mut s = DMatrix::zeros(n, n);
        s[(p, q)] = 1.0;
        s[(q, p)] = 1.0;
        s
    };
    let mut map = DMatrix::zeros(pairs.len(), unknowns.len());
    for (col, &u) in unknowns.iter().enumerate() {
        let s = unit(u);
        let r = &s * j - j.tr_mul(&s);
        for (row, &(a, b)) in pairs.iter().enumerate() {
            map[(row, col)] = r[(a, b)];
        }
    }
    let basis: Vec<DMatrix<f64>> = nullspace(&map, opts.null_rel_tol)
        .iter()
        .map(|v| {
            let mut s = DMatrix::zeros(n, n);
            for (k, &(p, q)) in unknowns.iter().enumerate() {
                s[(p, q)] = v[k];
                s[(q, p)] = v[k];
            }
            s
        })
        .collect();

    let det_j = j.determinant();
    let mut report = ConstantSolveReport {
        method: ConstantMethod::Symmetrizer,
        nullspace_basis: basis.clone(),
        identity_adjoined: false,
        chosen_d: None,
        checks: None,
        identity_residual: (DMatrix::identity(n, n) - j.transpose()).amax(),
        det_j,
        det_j_is_one: (det_j - 1.0).abs() <= opts.tol * det_j.abs().max(1.0),
        symmetrizer: None,
        symmetrizer_min_eigenvalue: None,
        verdict: GradientizeVerdict::Infeasible,
    };
    let Some((s, lmin)) = max_min_eigenvalue(&basis) else {
        return Ok(report);
    };
    report.symmetrizer_min_eigenvalue = Some(lmin);
    if lmin <= opts.spd_margin {
        return Ok(report);
    }
    let Some(chol) = s.clone().cholesky() else {
        return Ok(report);
    };
    let d = normalized(chol.l().transpose());
    let checks = evaluate_constant(j, &d, opts)?;
    report.verdict = if checks.passes(opts) {
        GradientizeVerdict::Gradientized
    } else {
        GradientizeVerdict::ConsistencyOnlySolution
    };
    report.symmetrizer = Some(s);
    report.chosen_d = Some(d);
    report.checks = Some(checks);
    Ok(report)
}

/// Maximizes the smallest eigenvalue of `S = sum c_k S_k` over the affine
/// set `tr S = 1`, by gradient ascent on a soft minimum with a decreasing
/// temperature. Returns `None` when every basis element is traceless.
fn max_min_eigenvalue(basis: &[DMatrix<f64>]) -> Option<(DMatrix<f64>, f64)> {
    let m = basis.len();
    if m == 0 {
        return None;
    }
    let n = basis[0].nrows();
    let t = DVector::from_iterator(m, basis.iter().map(|s| s.trace()));
    let tn2 = t.norm_squared();
    if tn2.sqrt() < 1e-12 {
        return None;
    }
    let c0 = &t / tn2;
    let z: Vec<DVector<f64>> = nullspace(&DMatrix::from_row_slice(1, m, t.as_slice()), 1e-12);
    let combine = |w: &DVector<f64>| {
        let mut c = c0.clone();
        for (k, zk) in z.iter().enumerate() {
            c.axpy(w[k], zk, 1.0);
        }
        let mut s = DMatrix::zeros(n, n);
        for (k, sk) in basis.iter().enumerate() {
            s += sk * c[k];
        }
        (s.clone() + s.transpose()) * 0.5
    };
    // Soft minimum and its gradient in w.
    let eval = |w: &DVector<f64>, tau: f64| {
        let s = combine(w);
        let eig = SymmetricEigen::new(s.clone());
        let lmin = eig.eigenvalues.min();
        let weights: Vec<f64> = eig.eigenvalues.iter().map(|l| (-(l - lmin) / tau).exp()).collect();
        let total: f64 = weights.iter().sum();
        let soft = lmin - tau * total.ln();
        let mut grad = DVector::zeros(z.len());
        for (k, zk) in z.iter().enumerate() {
            let mut dir = DMatrix::zeros(n, n);
            for (b, sb) in basis.iter().enumerate() {
                dir += sb * zk[b];
            }
            let mut g = 0.0;
            for (i, wi) in weights.iter().enumerate() {
                let v = eig.eigenvectors.column(i);
                g += wi / total * (v.transpose() * &dir * v)[(0, 0)];
            }
            grad[k] = g;
        }
        (soft, lmin, grad, s)
    };

    let mut w = DVector::zeros(z.len());
    let (_, l0, _, s0) = eval(&w, 1.0);
    let mut best = (s0, l0);
    if z.is_empty() {
        return Some(best);
    }
    let base = 1.0 / n as f64;
    let mut step = 1.0;
    for tau in [1e-1, 3e-2, 1e-2, 3e-3, 1e-3, 3e-4].map(|s| s * base) {
        let (mut f, _, mut g, _) = eval(&w, tau);
        for _ in 0..300 {
            let gn2 = g.norm_squared();
            if gn2.sqrt() < 1e-14 {
                break;
            }
            let mut accepted = false;
            for _ in 0..60 {
                let trial = &w + &g * step;
                let (ft, lt, gt, st) = eval(&trial, tau);
                if ft >= f + 1e-4 * step * gn2 {
                    if lt > best.1 {
                        best = (st, lt);
                    }
                    w = trial;
                    f = ft;
                    g = gt;
                    step *= 2.0;
                    accepted = true;
                    break;
                }
                step *= 0.5;
            }
            if !accepted {
                break;
            }
        }
    }
    Some(best)
}

/// `max |d V / d x_i - F_i|` over `samples`, with `V` the homotopy
/// potential of `field` under the fixed rule `quad` and derivatives by
/// central differences.
pub fn consistency_check(
    field: &VectorField,
    samples: &[DVector<f64>],
    quad: &QuadratureRule,
) -> Result<f64, GradientizeError> {
    if samples.is_empty() {
        return Err(GradientizeError::EmptySamples);
    }
    let form = OneForm::new(field.clone());
    let mut worst: f64 = 0.0;
    for x in samples {
        let f = field.eval(x)?;
        for i in 0..x.len() {
            let h = crate::field::default_step(x[i]);
            let mut xp = x.clone();
            let mut xm = x.clone();
            xp[i] += h;
            xm[i] -= h;
            let dv = (potential(&form, &xp, quad)? - potential(&form, &xm, quad)?) / (xp[i] - xm[i]);
            worst = worst.max((dv - f[i]).abs());
        }
    }
    Ok(worst)
}

/// Potential of the transformed field `D g(D^-1 x)` at `x`; refuses when
/// the transformed Jacobian is not symmetric along the ray to `x`.
pub fn potential_via_transform(
    field: &VectorField,
    d: &DMatrix<f64>,
    x: &DVector<f64>,
    quad: &QuadratureRule,
    tol: f64,
) -> Result<f64, GradientizeError> {
    let tfield = transform_field(field, d)?;
    let mut asymmetry: f64 = 0.0;
    for &t in quad.nodes().iter().chain(std::iter::once(&1.0)) {
        let jt = tfield.jacobian(&(x * t), JacobianScheme::Auto)?;
        asymmetry = asymmetry.max(relative_asymmetry(&jt));
    }
    if asymmetry > tol {
        return Err(GradientizeError::NotClosed { asymmetry, tol });
    }
    Ok(potential(&OneForm::new(tfield), x, quad)?)
}

/// Polynomial matrix family: every entry of `D(y)` is a polynomial in `y`
/// of total degree at most `degree`.
///
/// Parameters are laid out entry-major: `theta[(i * N + j) * M + a]` is the
/// coefficient of monomial `a` in `D_ij`, with monomials in graded order
/// (constant first).
#[derive(Debug, Clone, PartialEq)]
pub struct MatrixFamily {
    dim: usize,
    degree: usize,
    monomials: Vec<Vec<u32>>,
}

impl MatrixFamily {
    pub fn new(dim: usize, degree: usize) -> Self {
        let mut monomials = Vec::new();
        for total in 0..=degree as u32 {
            push_exponents(dim, total, &mut Vec::new(), &mut monomials);
        }
        Self {
            dim,
            degree,
            monomials,
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn degree(&self) -> usize {
        self.degree
    }

    pub fn monomials(&self) -> &[Vec<u32>] {
        &self.monomials
    }

    pub fn param_count(&self) -> usize {
        self.dim * self.dim * self.monomials.len()
    }

    /// Parameters of the constant matrix `d`.
    pub fn constant_params(&self, d: &DMatrix<f64>) -> DVector<f64> {
        let m = self.monomials.len();
        let mut theta = DVector::zeros(self.param_count());
        for i in 0..self.dim {
            for j in 0..self.dim {
                theta[(i * self.dim + j) * m] = d[(i, j)];
            }
        }
        theta
    }

    pub fn identity_params(&self) -> DVector<f64> {
        self.constant_params(&DMatrix::identity(self.dim, self.dim))
    }

    fn check(&self, theta: &DVector<f64>) -> Result<(), GradientizeError> {
        if theta.len() != self.param_count() {
            return Err(GradientizeError::ParameterLength {
                expected: self.param_count(),
                got: theta.len(),
            });
        }
        Ok(())
    }

    pub fn eval(&self, y: &DVector<f64>, theta: &DVector<f64>) -> Result<DMatrix<f64>, GradientizeError> {
        Ok(self.eval_with_derivatives(y, theta)?.0)
    }

    /// `D(y)` and `dD/dy_q` for each `q`.
    pub fn eval_with_derivatives(
        &self,
        y: &DVector<f64>,
        theta: &DVector<f64>,
    ) -> Result<(DMatrix<f64>, Vec<DMatrix<f64>>), GradientizeError> {
        self.check(theta)?;
        let n = self.dim;
        let m = self.monomials.len();
        let mut values = vec![0.0; m];
        let mut grads = vec![vec![0.0; n]; m];
        for (a, e) in self.monomials.iter().enumerate() {
            values[a] = e.iter().zip(y.iter()).map(|(&k, &v)| v.powi(k as i32)).product();
            for q in 0..n {
                if e[q] == 0 {
                    continue;
                }
                grads[a][q] = e
                    .iter()
                    .zip(y.iter())
                    .enumerate()
                    .map(|(r, (&k, &v))| {
                        if r == q {
                            k as f64 * v.powi(k as i32 - 1)
                        } else {
                            v.powi(k as i32)
                        }
                    })
                    .product();
            }
        }
        let mut d = DMatrix::zeros(n, n);
        let mut dd = vec![DMatrix::zeros(n, n); n];
        for i in 0..n {
            for j in 0..n {
                let base = (i * n + j) * m;
                for a in 0..m {
                    let c = theta[base + a];
                    if c == 0.0 {
                        continue;
                    }
                    d[(i, j)] += c * values[a];
                    for q in 0..n {
                        dd[q][(i, j)] += c * grads[a][q];
                    }
                }
            }
        }
        Ok((d, dd))
    }
}

fn push_exponents(dims_left: usize, total: u32, prefix: &mut Vec<u32>, out: &mut Vec<Vec<u32>>) {
    if dims_left == 1 {
        let mut e = prefix.clone();
        e.push(total);
        out.push(e);
        return;
    }
    for k in (0..=total).rev() {
        prefix.push(k);
        push_exponents(dims_left - 1, total - k, prefix, out);
        prefix.pop();
    }
}

/// Transformed state and Jacobian at a collocation sample `y`.
#[derive(Debug, Clone)]
pub struct SampleJet {
    pub x: DVector<f64>,
    pub f: DVector<f64>,
    pub d: DMatrix<f64>,
    /// `d x / d y = D + (dD) y`.
    pub phi_prime: DMatrix<f64>,
    /// `d f / d x = (B + D J_g) (phi')^-1`, `B_iq = sum_j dD_ij/dy_q g_j`.
    pub jacobian: DMatrix<f64>,
}

/// Evaluates the transformed field at `x = D(y) y`.
pub fn sample_jet(
    field: &VectorField,
    family: &MatrixFamily,
    theta: &DVector<f64>,
    y: &DVector<f64>,
) -> Result<SampleJet, GradientizeError> {
    let (d, dd) = family.eval_with_derivatives(y, theta)?;
    let jet = field.jet(y)?;
    let n = family.dim();
    let mut phi_prime = d.clone();
    let mut b = DMatrix::zeros(n, n);
    for q in 0..n {
        phi_prime.column_mut(q).axpy(1.0, &(&dd[q] * y), 1.0);
        b.set_column(q, &(&dd[q] * &jet.value));
    }
    let k = b + &d * &jet.jacobian;
    let det = phi_prime.determinant();
    // J_f phi' = K  <=>  phi'^T J_f^T = K^T
    let jacobian = phi_prime
        .transpose()
        .lu()
        .solve(&k.transpose())
        .ok_or(GradientizeError::Singular { det })?
        .transpose();
    Ok(SampleJet {
        x: &d * y,
        f: &d * &jet.value,
        d,
        phi_prime,
        jacobian,
    })
}

/// Stacked antisymmetric entries `(J_f)_ik - (J_f)_ki`, `i < k`, of the
/// transformed Jacobian at each sample.
pub fn general_residual(
    field: &VectorField,
    family: &MatrixFamily,
    theta: &DVector<f64>,
    samples: &[DVector<f64>],
) -> Result<DVector<f64>, GradientizeError> {
    if samples.is_empty() {
        return Err(GradientizeError::EmptySamples);
    }
    let n = family.dim();
    let per = n * (n - 1) / 2;
    let mut out = DVector::zeros(per * samples.len());
    for (s, y) in samples.iter().enumerate() {
        let jf = sample_jet(field, family, theta, y)?.jacobian;
        let mut row = s * per;
        for i in 0..n {
            for k in (i + 1)..n {
                out[row] = jf[(i, k)] - jf[(k, i)];
                row += 1;
            }
        }
    }
    Ok(out)
}

#[derive(Debug, Clone)]
pub struct GeneralSolveConfig {
    /// Collocation samples in `y` coordinates.
    pub samples: Vec<DVector<f64>>,
    /// Starting parameters; identity when `None`.
    pub initial: Option<DVector<f64>>,
    pub max_iter: usize,
    /// Convergence threshold on the RMS antisymmetric residual.
    pub tol: f64,
    pub lambda0: f64,
    /// Weight `mu` of the barrier rows `sqrt(mu) * ln|det D(y)|`.
    pub barrier_weight: f64,
    /// Steps that bring `det D(y)` (scale-free) below this are rejected.
    pub min_det_ratio: f64,
    pub consistency_samples: usize,
    pub quad_nodes: usize,
}

impl GeneralSolveConfig {
    pub fn new(samples: Vec<DVector<f64>>) -> Self {
        Self {
            samples,
            initial: None,
            max_iter: 200,
            tol: 1e-10,
            lambda0: 1e-3,
            barrier_weight: 1e-4,
            min_det_ratio: 1e-8,
            consistency_samples: 8,
            quad_nodes: 32,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct GeneralSolveReport {
    pub theta: DVector<f64>,
    pub converged: bool,
    pub iterations: usize,
    /// RMS of the antisymmetric residual at `theta`.
    pub residual_norm: f64,
    pub initial_residual_norm: f64,
    /// Smallest scale-free `|det D(y)|` over the samples.
    pub min_det_ratio: f64,
    /// `max |grad V - F|` at the images of the first samples; only computed
    /// on convergence.
    pub consistency_residual: Option<f64>,
    pub verdict: GradientizeVerdict,
}

fn rms(v: &DVector<f64>) -> f64 {
    if v.is_empty() {
        0.0
    } else {
        (v.norm_squared() / v.len() as f64).sqrt()
    }
}

struct Objective<'a> {
    field: &'a VectorField,
    family: &'a MatrixFamily,
    cfg: &'a GeneralSolveConfig,
    det_sign: f64,
}

impl Objective<'_> {
    /// Residual rows followed by barrier rows.
    fn eval(&self, theta: &DVector<f64>) -> Result<(DVector<f64>, f64), GradientizeError> {
        let anti = general_residual(self.field, self.family, theta, &self.cfg.samples)?;
        let w = self.cfg.barrier_weight.sqrt();
        let mut out = DVector::zeros(anti.len() + self.cfg.samples.len());
        out.rows_mut(0, anti.len()).copy_from(&anti);
        for (s, y) in self.cfg.samples.iter().enumerate() {
            let d = self.family.eval(y, theta)?;
            let det = d.determinant();
            if det * self.det_sign <= 0.0 || det_ratio(&d) < self.cfg.min_det_ratio {
                return Err(GradientizeError::Barrier { sample: s });
            }
            out[anti.len() + s] = w * det.abs().ln();
        }
        Ok((out, rms(&anti)))
    }
}

/// Fits `theta` so that the transformed Jacobian is symmetric at every
/// collocation sample, by Levenberg-Marquardt with a finite-difference
/// Jacobian and a log-determinant barrier.
pub fn solve_general(
    field: &VectorField,
    family: &MatrixFamily,
    cfg: &GeneralSolveConfig,
) -> Result<GeneralSolveReport, GradientizeError> {
    if cfg.samples.is_empty() {
        return Err(GradientizeError::EmptySamples);
    }
    if family.dim() != field.dim() {
        return Err(GradientizeError::BadMatrix);
    }
    let mut theta = cfg.initial.clone().unwrap_or_else(|| family.identity_params());
    family.check(&theta)?;
    let det0 = family.eval(&cfg.samples[0], &theta)?.determinant();
    let obj = Objective {
        field,
        family,
        cfg,
        det_sign: if det0 < 0.0 { -1.0 } else { 1.0 },
    };
    let (mut r, mut anti_rms) = obj.eval(&theta)?;
    let initial_residual_norm = anti_rms;
    let mut cost = 0.5 * r.norm_squared();
    let mut lambda = cfg.lambda0;
    let mut nu = 2.0;
    let mut iterations = 0;
    let p = theta.len();

    while iterations < cfg.max_iter && anti_rms > cfg.tol {
        iterations += 1;
        let mut jac = DMatrix::zeros(r.len(), p);
        for k in 0..p {
            let h = 1e-6 * theta[k].abs().max(1.0);
            let mut tp = theta.clone();
            let mut tm = theta.clone();
            tp[k] += h;
            tm[k] -= h;
            let col = match (obj.eval(&tp), obj.eval(&tm)) {
                (Ok((a, _)), Ok((b, _))) => (a - b) / (2.0 * h),
                (Ok((a, _)), Err(_)) => (a - &r) / h,
                (Err(_), Ok((b, _))) => (&r - b) / h,
                (Err(e), Err(_)) => return Err(e),
            };
            jac.set_column(k, &col);
        }
        let a = jac.tr_mul(&jac);
        let g = jac.tr_mul(&r);
        let scale = DVector::from_iterator(p, a.diagonal().iter().map(|v| v.max(1e-12)));
        let mut accepted = false;
        for _ in 0..30 {
            let mut lhs = a.clone();
            for k in 0..p {
                lhs[(k, k)] += lambda * scale[k];
            }
            let Some(delta) = lhs.cholesky().map(|c| c.solve(&(-&g))) else {
                lambda *= nu;
                nu *= 2.0;
                continue;
            };
            let trial = &theta + &delta;
            let predicted = 0.5 * delta.dot(&(delta.component_mul(&scale) * lambda - &g));
            match obj.eval(&trial) {
                Ok((rt, at)) => {
                    let ct = 0.5 * rt.norm_squared();
                    let rho = (cost - ct) / predicted.max(f64::MIN_POSITIVE);
                    if rho > 0.0 {
                        let small = delta.norm() <= 1e-15 * (1.0 + theta.norm());
                        theta = trial;
                        r = rt;
                        anti_rms = at;
                        cost = ct;
                        lambda *= (1.0f64 / 3.0).max(1.0 - (2.0 * rho - 1.0).powi(3));
                        nu = 2.0;
                        accepted = !small;
                        break;
                    }
                }
                Err(GradientizeError::Barrier { .. }) | Err(GradientizeError::Singular { .. }) => {}
                Err(e) => return Err(e),
            }
            lambda *= nu;
            nu *= 2.0;
        }
        if !accepted {
            break;
        }
    }

    let converged = anti_rms <= cfg.tol;
    let min_det = cfg
        .samples
        .iter()
        .map(|y| family.eval(y, &theta).map(|d| det_ratio(&d)))
        .collect::<Result<Vec<_>, _>>()?
        .into_iter()
        .fold(f64::INFINITY, f64::min);
    let consistency_residual = if converged {
        let transform = GeneralTransform::new(field.clone(), family.clone(), theta.clone())?;
        let tfield = transform.transformed_field();
        let xs: Vec<DVector<f64>> = cfg
            .samples
            .iter()
            .take(cfg.consistency_samples.max(1))
            .map(|y| transform.forward(y))
            .collect::<Result<_, _>>()?;
        Some(consistency_check(&tfield, &xs, &QuadratureRule::gauss_legendre(cfg.quad_nodes))?)
    } else {
        None
    };
    let verdict = match (converged, consistency_residual) {
        (false, _) => GradientizeVerdict::NotConverged,
        (true, Some(c)) if c <= 1e-6 => GradientizeVerdict::Gradientized,
        _ => GradientizeVerdict::ConsistencyOnlySolution,
    };
    Ok(GeneralSolveReport {
        theta,
        converged,
        iterations,
        residual_norm: anti_rms,
        initial_residual_norm,
        min_det_ratio: min_det,
        consistency_residual,
        verdict,
    })
}

/// The change of variables `x = D(y) y` for fixed parameters.
#[derive(Debug, Clone)]
pub struct GeneralTransform {
    field: VectorField,
    family: MatrixFamily,
    theta: DVector<f64>,
}

impl GeneralTransform {
    pub fn new(field: VectorField, family: MatrixFamily, theta: DVector<f64>) -> Result<Self, GradientizeError> {
        family.check(&theta)?;
        if family.dim() != field.dim() {
            return Err(GradientizeError::BadMatrix);
        }
        Ok(Self { field, family, theta })
    }

    pub fn forward(&self, y: &DVector<f64>) -> Result<DVector<f64>, GradientizeError> {
        Ok(self.family.eval(y, &self.theta)? * y)
    }

    /// Newton iteration on `D(y) y = x`, started from `D(0)^-1 x`.
    pub fn inverse(&self, x: &DVector<f64>) -> Result<DVector<f64>, GradientizeError> {
        let fail = || GradientizeError::InverseMap {
            point: x.iter().copied().collect(),
        };
        let d0 = self.family.eval(&DVector::zeros(x.len()), &self.theta)?;
        let mut y = d0.lu().solve(x).ok_or_else(fail)?;
        let tol = 1e-14 * (1.0 + x.amax());
        for _ in 0..60 {
            let (d, dd) = self.family.eval_with_derivatives(&y, &self.theta)?;
            let resid = &d * &y - x;
            if resid.amax() <= tol {
                return Ok(y);
            }
            let mut phi_prime = d;
            for (q, dq) in dd.iter().enumerate() {
                phi_prime.column_mut(q).axpy(1.0, &(dq * &y), 1.0);
            }
            let step = phi_prime.lu().solve(&resid).ok_or_else(fail)?;
            y -= step;
            if !y.iter().all(|v| v.is_finite()) {
                return Err(fail());
            }
        }
        let resid = self.family.eval(&y, &self.theta)? * &y - x;
        if resid.amax() <= 1e3 * tol {
            Ok(y)
        } else {
            Err(fail())
        }
    }

    /// `f(x) = D(y) g(y)` with `y` the inverse image of `x`.
    pub fn transformed_field(&self) -> VectorField {
        let n = self.family.dim();
        let this = self.clone();
        let jac_this = self.clone();
        VectorField::new(n, move |x| {
            this.inverse(x)
                .and_then(|y| sample_jet(&this.field, &this.family, &this.theta, &y))
                .map(|s| s.f)
                .unwrap_or_else(|_| DVector::from_element(n, f64::NAN))
        })
        .with_jacobian(move |x| {
            jac_this
                .inverse(x)
                .and_then(|y| sample_jet(&jac_this.field, &jac_this.family, &jac_this.theta, &y))
                .map(|s| s.jacobian)
                .unwrap_or_else(|_| DMatrix::from_element(n, n, f64::NAN))
        })
    }
}
