use proptest::prelude::*;

use kinv_core::forward::{linear_residual, solve_linear_forward};
use kinv_core::model::QTermConfig;
use kinv_core::nonlinear::solve_nonlinear_forward;
use kinv_core::{AlphaSpec, Geometry, GridFunction3, Mode, ProblemConfig, ProblemSpec};

fn spec(j: &str, nonlinear: bool) -> ProblemSpec {
    let g = Geometry::new(1.0, 1.0, 2.0, 1.5).unwrap();
    let mut c = ProblemConfig::new(g, 12, 4, 12, Mode::Forward);
    c.coefficients.j = Some(j.into());
    if nonlinear {
        c.coefficients.alpha = AlphaSpec::SoftAbs { c: 0.5 };
        c.coefficients.q = vec![QTermConfig {
            q1: "0.3".into(),
            q2: "1 + x".into(),
        }];
    }
    ProblemSpec::from_config(c, ".").unwrap()
}

fn source(s: &ProblemSpec, a: f64, b: f64, w: f64) -> GridFunction3 {
    GridFunction3::sample(s.grid.clone(), |x, v, t| a * (w * x + t).sin() + b * v * x)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn linear_solve_is_linear(a in -2.0..2.0f64, b in -1.0..1.0f64, w in 0.5..4.0f64, s1 in -3.0..3.0f64) {
        let sp = spec("0.3*(1 + x)", false);
        let f1 = source(&sp, a, 0.0, w);
        let f2 = source(&sp, 0.0, b, w);
        let u1 = solve_linear_forward(&sp, &f1).unwrap().u;
        let u2 = solve_linear_forward(&sp, &f2).unwrap().u;
        let u12 = solve_linear_forward(&sp, &f1.scale(s1).add(&f2)).unwrap().u;
        let gap = u12.sub(&u1.scale(s1).add(&u2)).sup_norm();
        prop_assert!(gap <= 1e-12 * (1.0 + u12.sup_norm()), "gap {gap}");
    }

    #[test]
    fn linear_residual_vanishes(a in -2.0..2.0f64, b in -1.0..1.0f64, w in 0.5..4.0f64) {
        let sp = spec("0.2", false);
        let r = solve_linear_forward(&sp, &source(&sp, a, b, w)).unwrap();
        prop_assert!(linear_residual(&sp, &r) <= 1e-10 * (1.0 + r.u.sup_norm()));
    }

    #[test]
    fn solution_is_causal(a in -2.0..2.0f64, w in 0.5..4.0f64, k in 1usize..12, bump in -5.0..5.0f64) {
        // S integrates over all of [0, T], so only the model without it is causal
        let sp = spec("0.2", false);
        let f = source(&sp, a, 0.3, w);
        let g = GridFunction3::from_fn(sp.grid.clone(), |kk, i, j| {
            f.get(kk, i, j) + if kk > k { bump } else { 0.0 }
        });
        let (u, _) = solve_nonlinear_forward(&sp, &f).unwrap();
        let (v, _) = solve_nonlinear_forward(&sp, &g).unwrap();
        for kk in 0..=k {
            prop_assert_eq!(u.level(kk), v.level(kk));
        }
    }

    #[test]
    fn upwind_dependence(a in -2.0..2.0f64, w in 0.5..4.0f64, cell in 1usize..11, bump in -5.0..5.0f64) {
        // without scattering or S, ordinates moving right ignore anything downstream
        let sp = spec("0", false);
        let f = source(&sp, a, 0.3, w);
        let g = GridFunction3::from_fn(sp.grid.clone(), |k, i, j| f.get(k, i, j) + if i >= cell { bump } else { 0.0 });
        let u = solve_linear_forward(&sp, &f).unwrap().u;
        let v = solve_linear_forward(&sp, &g).unwrap().u;
        let nodes = sp.grid.v_nodes();
        for k in 0..=sp.grid.nt() {
            for i in 0..cell {
                for (j, &vj) in nodes.iter().enumerate() {
                    if vj > 0.0 {
                        prop_assert_eq!(u.get(k, i, j), v.get(k, i, j));
                    }
                }
            }
        }
    }
}

#[test]
fn zero_data_gives_zero_state() {
    let sp = spec("0.3", true);
    let (u, rep) = solve_nonlinear_forward(&sp, &sp.source).unwrap();
    assert!(rep.converged);
    assert_eq!(u.sup_norm(), 0.0);
}
