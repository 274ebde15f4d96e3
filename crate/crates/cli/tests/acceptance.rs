//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! nonzero if any criterion fails.

use std::time::Instant;

use gradiform::dynamics::{
    ensemble, euler_maruyama, forward_euler, graham_estimate, integrate_rk4, stationary_density, Axis, SdeConfig,
};
use gradiform::forms::{decompose, exact_part, potential};
use gradiform::gradientize::{
    check_necessary_constant, solve_consistency_constant, solve_symmetrizer, GradientizeVerdict,
};
use gradiform::integrability::{classify, frobenius_defect, loop_integral, Verdict};
use gradiform::sampling::halton_ball;
use gradiform::zoo::{jj_circuit, jj_circuit_linear, lorenz, rotation};
use gradiform::{JacobianScheme, Loop, OneForm, QuadratureRule, VectorField};
use gradiform_cli::{run, Command, RunConfig};
use nalgebra::{dmatrix, dvector, DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

type Outcome = Result<String, String>;

const SIGMA: f64 = 10.0;
const RHO: f64 = 28.0;
const BETA: f64 = 8.0 / 3.0;

fn lorenz_default() -> VectorField {
    lorenz(SIGMA, RHO, BETA).unwrap()
}

fn check(cond: bool, detail: String) -> Outcome {
    if cond {
        Ok(detail)
    } else {
        Err(detail)
    }
}

/// Random cubic vector field on R^3 with analytic Jacobian.
fn random_polynomial_field(rng: &mut ChaCha8Rng) -> VectorField {
    let mut exps = Vec::new();
    for a in 0..=3i32 {
        for b in 0..=(3 - a) {
            for c in 0..=(3 - a - b) {
                exps.push([a, b, c]);
            }
        }
    }
    let coeffs: Vec<Vec<f64>> = (0..3)
        .map(|_| exps.iter().map(|_| StandardNormal.sample(&mut *rng)).collect())
        .collect();
    let mono = |e: &[i32; 3], x: &DVector<f64>| x[0].powi(e[0]) * x[1].powi(e[1]) * x[2].powi(e[2]);
    let dmono = move |e: &[i32; 3], x: &DVector<f64>, q: usize| {
        if e[q] == 0 {
            return 0.0;
        }
        let mut d = e.to_owned();
        d[q] -= 1;
        e[q] as f64 * mono(&d, x)
    };
    let (e1, c1) = (exps.clone(), coeffs.clone());
    VectorField::new(3, move |x| {
        DVector::from_fn(3, |i, _| e1.iter().zip(&c1[i]).map(|(e, c)| c * mono(e, x)).sum())
    })
    .with_jacobian(move |x| {
        DMatrix::from_fn(3, 3, |i, q| exps.iter().zip(&coeffs[i]).map(|(e, c)| c * dmono(e, x, q)).sum())
    })
}

fn c1_decomposition_identity() -> Outcome {
    let field = lorenz_default();
    let form = OneForm::new(field.clone());
    let quad = QuadratureRule::gauss_legendre(64);
    let points = halton_ball(100, 3, 2.0, 1);
    let start = Instant::now();
    let mut worst = 0.0f64;
    for x in &points {
        let d = decompose(&form, x, &quad).map_err(|e| e.to_string())?;
        let g = field.eval(x).unwrap();
        worst = worst.max((g - &d.exact_part - &d.antiexact_part).amax());
    }
    let secs = start.elapsed().as_secs_f64();
    check(
        worst < 1e-8 && secs < 1.0,
        format!("max |g - exact - antiexact| = {worst:.2e} (< 1e-8), runtime {secs:.3} s (< 1 s)"),
    )
}

fn c2_lorenz_potential() -> Outcome {
    let form = OneForm::new(lorenz_default());
    let quad = QuadratureRule::gauss_legendre(64);
    // Term-by-term: sum x_i g_i(t x) = t [sigma(xy - x^2) + rho xy - y^2 - beta z^2]
    // (the t^2 xyz terms cancel), integrated over t in [0, 1].
    let oracle = |p: &DVector<f64>| {
        let (x, y, z) = (p[0], p[1], p[2]);
        (SIGMA + RHO) * x * y / 2.0 - SIGMA * x * x / 2.0 - y * y / 2.0 - BETA * z * z / 2.0
    };
    let mut worst = 0.0f64;
    for x in halton_ball(100, 3, 2.0, 2) {
        let v = potential(&form, &x, &quad).map_err(|e| e.to_string())?;
        worst = worst.max((v - oracle(&x)).abs());
    }
    check(worst < 1e-9, format!("max |V - closed form| = {worst:.2e} (< 1e-9) at 100 points"))
}

fn c3_radial_annihilation() -> Outcome {
    let quad = QuadratureRule::gauss_legendre(64);
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut fields = vec![
        ("lorenz".to_string(), lorenz_default()),
        ("jj_circuit".to_string(), jj_circuit(0.5, 1.0, 1.0, 1.0).unwrap()),
    ];
    for k in 0..20 {
        fields.push((format!("poly{k}"), random_polynomial_field(&mut rng)));
    }
    let points = halton_ball(50, 3, 2.0, 3);
    let mut worst = 0.0f64;
    for (_, f) in &fields {
        let form = OneForm::new(f.clone());
        for x in &points {
            let d = decompose(&form, x, &quad).map_err(|e| e.to_string())?;
            worst = worst.max(d.antiexact_part.dot(x).abs());
        }
    }
    check(
        worst < 1e-10,
        format!("max |antiexact . x| = {worst:.2e} (< 1e-10) over {} fields x 50 points", fields.len()),
    )
}

fn c4_exact_part_curl_free() -> Outcome {
    let form = OneForm::new(lorenz_default());
    let quad = QuadratureRule::gauss_legendre(64);
    let h = 1e-4;
    let mut worst = 0.0f64;
    for x in halton_ball(20, 3, 2.0, 4) {
        let mut jac = DMatrix::zeros(3, 3);
        for q in 0..3 {
            let mut xp = x.clone();
            let mut xm = x.clone();
            xp[q] += h;
            xm[q] -= h;
            let dp = exact_part(&form, &xp, &quad).map_err(|e| e.to_string())?;
            let dm = exact_part(&form, &xm, &quad).map_err(|e| e.to_string())?;
            jac.set_column(q, &((dp - dm) / (2.0 * h)));
        }
        worst = worst.max((&jac - jac.transpose()).amax());
    }
    check(worst < 1e-6, format!("max asymmetry of FD Jacobian of exact part = {worst:.2e} (< 1e-6)"))
}

fn random_symmetric(rng: &mut ChaCha8Rng, n: usize) -> DMatrix<f64> {
    let a = DMatrix::from_fn(n, n, |_, _| StandardNormal.sample(&mut *rng));
    (a.clone() + a.transpose()) * 0.5
}

fn c5_closed_round_trip() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let quad = QuadratureRule::gauss_legendre(32);
    let loop_rule = QuadratureRule::gauss_legendre(16);
    let (mut grad_err, mut loop_max) = (0.0f64, 0.0f64);
    let mut verdicts_ok = true;
    for k in 0..10 {
        let n = 2 + k % 2;
        let q = random_symmetric(&mut rng, n);
        let field = VectorField::linear(q);
        let form = OneForm::new(field.clone());
        let samples = halton_ball(32, n, 1.0, k as u64 + 1);
        let rep = classify(&field, &samples, 1e-8).map_err(|e| e.to_string())?;
        verdicts_ok &= rep.verdict == Verdict::Closed;
        for x in samples.iter().take(8) {
            let g = field.eval(x).unwrap();
            for i in 0..n {
                let h = 1e-5;
                let mut xp = x.clone();
                let mut xm = x.clone();
                xp[i] += h;
                xm[i] -= h;
                let dv = (potential(&form, &xp, &quad).unwrap() - potential(&form, &xm, &quad).unwrap()) / (2.0 * h);
                grad_err = grad_err.max((dv - g[i]).abs());
            }
        }
        for a in 0..n {
            for b in (a + 1)..n {
                let v = loop_integral(&form, &Loop::coordinate_circle(n, a, b, 1.0), &loop_rule).unwrap();
                loop_max = loop_max.max(v.abs());
            }
        }
    }
    let rot = loop_integral(
        &OneForm::new(rotation()),
        &Loop::coordinate_circle(2, 0, 1, 1.0),
        &loop_rule,
    )
    .unwrap();
    let rot_err = (rot - std::f64::consts::TAU).abs();
    check(
        verdicts_ok && grad_err < 1e-8 && loop_max < 1e-10 && rot_err < 1e-6,
        format!(
            "verdicts Closed: {verdicts_ok}; max |grad V - g| = {grad_err:.2e} (< 1e-8); \
             max |loop| = {loop_max:.2e} (< 1e-10); rotation loop - 2pi = {rot_err:.2e} (< 1e-6)"
        ),
    )
}

fn c6_frobenius() -> Outcome {
    let field = lorenz_default();
    let p = dvector![1.0, 1.0, 1.0];
    let got = frobenius_defect(&field, &p).map_err(|e| e.to_string())?;
    // Oracle: |f . curl f| with curl f = (2x, -y, rho - z - sigma).
    let f = field.eval(&p).unwrap();
    let curl = dvector![2.0 * p[0], -p[1], RHO - p[2] - SIGMA];
    let oracle = f.dot(&curl).abs();
    let want = 163.0 / 3.0;
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut grad_max = 0.0f64;
    // Gradients of V = a xy + b sin z + c x^2 z + d y^3 and symmetric linear fields.
    for _ in 0..10 {
        let (a, b, c, d): (f64, f64, f64, f64) = (rng.random(), rng.random(), rng.random(), rng.random());
        let nonlinear = VectorField::new(3, move |x| {
            dvector![a * x[1] + 2.0 * c * x[0] * x[2], a * x[0] + 3.0 * d * x[1] * x[1], b * x[2].cos() + c * x[0] * x[0]]
        })
        .with_jacobian(move |x| {
            let (xz, xx) = (2.0 * c * x[2], 2.0 * c * x[0]);
            dmatrix![xz, a, xx; a, 6.0 * d * x[1], 0.0; xx, 0.0, -b * x[2].sin()]
        });
        let linear = VectorField::linear(random_symmetric(&mut rng, 3));
        for x in halton_ball(16, 3, 2.0, 6) {
            grad_max = grad_max.max(frobenius_defect(&nonlinear, &x).unwrap());
            grad_max = grad_max.max(frobenius_defect(&linear, &x).unwrap());
        }
    }
    check(
        (got - want).abs() < 1e-9 && (oracle - want).abs() < 1e-12 && grad_max < 1e-12,
        format!(
            "Lorenz defect at (1,1,1) = {got:.12} vs 163/3 (|diff| {:.1e} < 1e-9); gradient fields max defect {grad_max:.1e} (< 1e-12)",
            (got - want).abs()
        ),
    )
}

fn c7_constant_gradientization() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let (mut worst_asym, mut worst_cons) = (0.0f64, 0.0f64);
    let mut gradientized = 0;
    let mut tried = 0;
    while tried < 50 {
        let p: DMatrix<f64> = DMatrix::from_fn(3, 3, |_, _| StandardNormal.sample(&mut rng));
        let Some(p_inv) = p.clone().try_inverse() else { continue };
        if p.norm() * p_inv.norm() > 1e3 {
            continue;
        }
        let mut eig: Vec<f64> = (0..3).map(|_| rng.random_range(-3.0..3.0)).collect();
        eig.sort_by(f64::total_cmp);
        if eig.windows(2).any(|w| w[1] - w[0] < 0.05) {
            continue;
        }
        tried += 1;
        let j = &p * DMatrix::from_diagonal(&DVector::from_vec(eig)) * p_inv;
        let rep = solve_symmetrizer(&j).map_err(|e| e.to_string())?;
        if let Some(c) = rep.checks {
            worst_asym = worst_asym.max(c.transformed_asymmetry);
            worst_cons = worst_cons.max(c.consistency_residual);
        } else {
            worst_asym = f64::INFINITY;
        }
        gradientized += usize::from(rep.verdict == GradientizeVerdict::Gradientized);
    }
    let rot = dmatrix![0.0, 1.0; -1.0, 0.0];
    let rep = solve_consistency_constant(&rot).map_err(|e| e.to_string())?;
    let span_ok = rep.nullspace_basis.len() == 1 && {
        let b = &rep.nullspace_basis[0];
        let want = dmatrix![1.0, -1.0; 1.0, 1.0];
        let scale = b[(0, 0)];
        (b / scale - want).amax() < 1e-12
    };
    let rot_ok = span_ok && rep.verdict != GradientizeVerdict::Gradientized;
    check(
        gradientized == 50 && worst_asym < 1e-8 && worst_cons < 1e-6 && rot_ok,
        format!(
            "{gradientized}/50 gradientized, max transformed asymmetry {worst_asym:.2e} (< 1e-8), \
             max |grad V - F| {worst_cons:.2e} (< 1e-6); rotation nullspace span[[1,-1],[1,1]]: {span_ok}, verdict {}",
            rep.verdict
        ),
    )
}

fn c8_identity_for_symmetric() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut ok = true;
    let mut literal = 0.0f64;
    let mut necessary = 0.0f64;
    for n in [2, 3, 3, 4] {
        let j = random_symmetric(&mut rng, n);
        let rep = solve_consistency_constant(&j).map_err(|e| e.to_string())?;
        ok &= rep.identity_adjoined
            && rep.chosen_d == Some(DMatrix::identity(n, n))
            && rep.verdict == GradientizeVerdict::Gradientized;
        necessary = necessary.max(check_necessary_constant(&DMatrix::identity(n, n), &j).unwrap());
        literal = literal.max(rep.identity_residual);
    }
    check(
        ok && necessary == 0.0,
        format!(
            "D = I in solution set and gradientizes: {ok}; I satisfies D^T D J = J^T D^T D exactly \
             (residual {necessary:.1e}); literal residual |I - J^T| = {literal:.2} (zero only when J = I)"
        ),
    )
}

fn c9_junction_circuit() -> Outcome {
    let mut exact = true;
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let origin = DVector::zeros(3);
    for _ in 0..20 {
        let (i, r, bc, bl): (f64, f64, f64, f64) = (
            rng.random_range(-1.0..1.0),
            rng.random_range(0.1..3.0),
            rng.random_range(0.1..3.0),
            rng.random_range(0.1..3.0),
        );
        let printed = dmatrix![
            1.0, 0.0, 0.0;
            -r / bc, -1.0 / bc, -1.0 / bc;
            1.0 / bl, 0.0, -1.0 / bl
        ];
        let j = jj_circuit_linear(i, r, bc, bl)
            .unwrap()
            .jacobian(&origin, JacobianScheme::Analytic)
            .unwrap();
        exact &= j == printed;
    }
    let j = jj_circuit_linear(0.0, 1.0, 1.0, 1.0)
        .unwrap()
        .jacobian(&origin, JacobianScheme::Analytic)
        .unwrap();
    // Oracle: block triangular; eigenvalue 1 from the first row and a 2x2
    // Jordan-type block [[-1, -1], [0, -1]] for -1. rank(J + I) = 2 means a
    // single eigenvector for the double eigenvalue.
    let char_at = |l: f64| (DMatrix::identity(3, 3) * l - &j).determinant();
    let roots_ok = char_at(1.0).abs() < 1e-14 && char_at(-1.0).abs() < 1e-14;
    let sv = (&j + DMatrix::identity(3, 3)).svd(false, false).singular_values;
    let rank = sv.iter().filter(|s| **s > 1e-12).count();
    let sym = solve_symmetrizer(&j).map_err(|e| e.to_string())?;
    let cons = solve_consistency_constant(&j).map_err(|e| e.to_string())?;
    let infeasible = sym.verdict == GradientizeVerdict::Infeasible && cons.verdict != GradientizeVerdict::Gradientized;
    check(
        exact && roots_ok && rank == 2 && infeasible,
        format!(
            "Jacobian equals printed matrix exactly (20 parameter draws): {exact}; eigenvalues {{1,-1,-1}}: {roots_ok}; \
             rank(J+I) = {rank}; symmetrizer {}, consistency equation {}",
            sym.verdict, cons.verdict
        ),
    )
}

fn c10_graham_ou() -> Outcome {
    let start = Instant::now();
    let field = VectorField::linear(dmatrix![-1.0]);
    let cfg = SdeConfig::new(0.05, 1e-3, 195_313).with_record_every(10);
    let ens = ensemble(&field, &vec![dvector![0.0]; 64], &cfg, 10).map_err(|e| e.to_string())?;
    let axes = [Axis::new(-1.2, 1.2, 48).unwrap()];
    let density = stationary_density(&ens, &axes, None).map_err(|e| e.to_string())?;
    let samples = density.total + density.dropped;
    let est = graham_estimate(&density, 0.05).map_err(|e| e.to_string())?;
    let err = est
        .sup_error(&|c: &[f64]| 0.5 * c[0] * c[0], &|c: &[f64]| c[0].abs() <= 1.0)
        .unwrap_or(f64::INFINITY);
    let secs = start.elapsed().as_secs_f64();
    check(
        err < 0.1 && samples >= 1_000_000 && secs < 30.0,
        format!("sup |-eps ln P - x^2/2| on [-1,1] = {err:.4} (< 0.1), {samples} post-burn-in samples, runtime {secs:.1} s (< 30 s)"),
    )
}

fn c11_integrator_orders() -> Outcome {
    let f = VectorField::linear(dmatrix![-1.0]);
    let exact = (-1f64).exp();
    let err = |dt: f64, n: usize| (integrate_rk4(&f, &dvector![1.0], dt, n).unwrap().last()[0] - exact).abs();
    let ratio = err(0.1, 10) / err(0.05, 20);
    let g = VectorField::new(2, |x| dvector![-x[0] + x[1] * x[1], -2.0 * x[1] + x[0].sin()]);
    let x0 = dvector![0.7, -0.3];
    let em = euler_maruyama(&g, 0.0, &x0, 0.01, 500, 11).unwrap();
    let fe = forward_euler(&g, &x0, 0.01, 500).unwrap();
    let bits = em.states.len() == fe.states.len()
        && em
            .states
            .iter()
            .zip(&fe.states)
            .all(|(a, b)| a.iter().zip(b.iter()).all(|(u, v)| u.to_bits() == v.to_bits()));
    check(
        (12.0..=20.0).contains(&ratio) && bits,
        format!("RK4 error ratio under dt halving = {ratio:.3} (in [12, 20]); EM(eps=0) bit-equals Euler: {bits}"),
    )
}

fn c12_determinism() -> Outcome {
    let mut configs: Vec<(Command, RunConfig)> = Vec::new();
    let base = RunConfig::default();
    configs.push((Command::Classify, base.clone()));
    configs.push((Command::Decompose, base.clone()));
    let mut g = base.clone();
    g.system = gradiform::SystemSpec::new("jj_circuit");
    g.solver.general = true;
    g.solver.max_iter = 5;
    g.solver.samples = 8;
    configs.push((Command::Gradientize, g));
    let mut s = base.clone();
    s.system = gradiform::SystemSpec::new("double_well");
    s.potential_source = Some(gradiform_cli::config::PotentialSource::Analytic);
    configs.push((Command::Simulate, s));
    let mut gr = base.clone();
    gr.system = gradiform::SystemSpec::new("double_well");
    gr.simulation.eps = vec![0.1, 0.2];
    gr.simulation.sde_steps = 5_000;
    gr.simulation.ensemble_size = 8;
    configs.push((Command::Graham, gr));
    configs.push((Command::ZooList, base));
    let mut identical = 0;
    for (cmd, cfg) in &configs {
        let a = run(*cmd, cfg, None).map_err(|e| e.to_string())?;
        let b = run(*cmd, cfg, None).map_err(|e| e.to_string())?;
        let (sa, sb) = (a.body().to_string(), b.body().to_string());
        if sa == sb {
            identical += 1;
        }
    }
    check(
        identical == configs.len(),
        format!("{identical}/{} commands produced byte-identical reports (timings excluded)", configs.len()),
    )
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 12] = [
        ("decomposition identity", c1_decomposition_identity),
        ("Lorenz homotopy potential", c2_lorenz_potential),
        ("radial annihilation", c3_radial_annihilation),
        ("exact part curl-free", c4_exact_part_curl_free),
        ("closed-field round trip", c5_closed_round_trip),
        ("Frobenius defect", c6_frobenius),
        ("constant gradientization", c7_constant_gradientization),
        ("identity for symmetric J", c8_identity_for_symmetric),
        ("junction circuit linearization", c9_junction_circuit),
        ("Graham estimate (OU)", c10_graham_ou),
        ("integrator orders", c11_integrator_orders),
        ("determinism", c12_determinism),
    ];
    let mut failed = 0;
    for (k, (name, f)) in criteria.iter().enumerate() {
        let outcome = std::panic::catch_unwind(f).unwrap_or_else(|_| Err("panicked".into()));
        match outcome {
            Ok(detail) => println!("PASS [{:>2}] {name}: {detail}", k + 1),
            Err(detail) => {
                failed += 1;
                println!("FAIL [{:>2}] {name}: {detail}", k + 1);
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
