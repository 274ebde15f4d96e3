use gradiform::sampling::halton_ball;
use gradiform::zoo::{build, zoo_list, SystemSpec};
use gradiform::JacobianScheme;
use nalgebra::{dvector, DVector};

fn all_systems() -> Vec<SystemSpec> {
    let mut out: Vec<SystemSpec> = zoo_list().into_iter().map(|e| SystemSpec::new(e.name)).collect();
    out.push(
        SystemSpec::new("quadratic")
            .with("dim", 3.0)
            .with("q_1_2", 2.0)
            .with("q_3_1", -0.5),
    );
    out.push(SystemSpec::new("ou").with("dim", 4.0).with("k", 2.5));
    out.push(SystemSpec::new("jj_circuit").with("i", 0.3).with("r", 0.7));
    out
}

#[test]
fn analytic_jacobians_match_finite_differences() {
    for spec in all_systems() {
        let sys = build(&spec).unwrap();
        for f in [&sys.field, &sys.flow] {
            for x in halton_ball(16, sys.dim, 2.0, 11) {
                let a = f.jacobian(&x, JacobianScheme::Analytic).unwrap();
                let n = f.jacobian(&x, JacobianScheme::CentralDifference(Some(1e-5))).unwrap();
                let err = (a - n).amax();
                assert!(err < 1e-6, "{}: {err:e}", spec.name);
            }
        }
    }
}

#[test]
fn lorenz_divergence_is_constant() {
    let sys = build(&SystemSpec::new("lorenz")).unwrap();
    for x in halton_ball(16, 3, 5.0, 2) {
        let tr = sys.field.jacobian(&x, JacobianScheme::Analytic).unwrap().trace();
        assert!((tr + (10.0 + 1.0 + 8.0 / 3.0)).abs() < 1e-12);
    }
}

#[test]
fn junction_linear_agrees_at_zero_phase() {
    let nl = build(&SystemSpec::new("jj_circuit").with("i", 0.2)).unwrap();
    let lin = build(&SystemSpec::new("jj_circuit_linear").with("i", 0.2)).unwrap();
    for (y, z) in [(0.0, 0.0), (1.0, -0.5), (-2.0, 3.0)] {
        let x: DVector<f64> = dvector![y, 0.0, z];
        assert_eq!(nl.field.eval(&x).unwrap(), lin.field.eval(&x).unwrap());
        assert_eq!(nl.flow.eval(&x).unwrap(), lin.flow.eval(&x).unwrap());
        assert_eq!(
            nl.field.jacobian(&x, JacobianScheme::Analytic).unwrap(),
            lin.field.jacobian(&x, JacobianScheme::Analytic).unwrap()
        );
    }
}

#[test]
fn junction_flow_swaps_first_two_components() {
    let sys = build(&SystemSpec::new("jj_circuit")).unwrap();
    let x = dvector![0.4, 1.1, -0.3];
    let g = sys.field.eval(&x).unwrap();
    let v = sys.flow.eval(&x).unwrap();
    assert_eq!((v[0], v[1], v[2]), (g[1], g[0], g[2]));
}

#[test]
fn known_potentials_generate_the_flow() {
    for spec in all_systems() {
        let sys = build(&spec).unwrap();
        let Some(pot) = sys.potential.as_ref() else { continue };
        for x in halton_ball(8, sys.dim, 1.5, 4) {
            let f = sys.flow.eval(&x).unwrap();
            for i in 0..sys.dim {
                let h = 1e-5;
                let mut xp = x.clone();
                let mut xm = x.clone();
                xp[i] += h;
                xm[i] -= h;
                let dv = (pot(&xp) - pot(&xm)) / (2.0 * h);
                assert!((dv + f[i]).abs() < 1e-7, "{} component {i}", spec.name);
            }
        }
    }
}

#[test]
fn unknown_names_and_parameters_are_rejected() {
    assert!(build(&SystemSpec::new("nope")).is_err());
    assert!(build(&SystemSpec::new("lorenz").with("gamma", 1.0)).is_err());
    assert!(build(&SystemSpec::new("quadratic").with("q_3_1", 1.0)).is_err());
    assert!(build(&SystemSpec::new("lorenz").with("sigma", -1.0)).is_err());
}
