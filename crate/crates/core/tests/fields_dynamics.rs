use gyroreduce::dynamics::{
    gyro_period, hamiltonian_usual, integrate_canonical, integrate_usual, to_canonical, to_usual, CanonicalState,
    StepGuard, UsualState,
};
use gyroreduce::fields::{check_curl_identity, eval_b, FieldModel, FieldSpec, ScalingParams};
use gyroreduce::linalg::Vec3;
use gyroreduce::scenario::registry;
use proptest::prelude::*;

const FD_STEP: f64 = 1e-5;

fn fields() -> Vec<FieldSpec> {
    registry().into_iter().map(|s| s.field).collect()
}

fn point_in(f: &FieldSpec, t: [f64; 3]) -> Vec3 {
    let d = f.domain.inset(2.0 * FD_STEP);
    std::array::from_fn(|i| d.lo[i] + t[i] * (d.hi[i] - d.lo[i]))
}

fn close(a: f64, b: f64) -> bool {
    (a - b).abs() <= 1e-6 * a.abs().max(b.abs()).max(1.0)
}

fn shifted(x: &Vec3, k: usize, h: f64) -> Vec3 {
    let mut y = *x;
    y[k] += h;
    y
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn potential_jacobian_matches_central_differences(which in 0usize..3, t in prop::array::uniform3(0.0f64..1.0)) {
        let f = &fields()[which];
        let x = point_in(f, t);
        let j = f.potential_jacobian(&x);
        for k in 0..3 {
            let ap = f.vector_potential(&shifted(&x, k, FD_STEP));
            let am = f.vector_potential(&shifted(&x, k, -FD_STEP));
            for i in 0..3 {
                prop_assert!(close(j[i][k], (ap[i] - am[i]) / (2.0 * FD_STEP)));
            }
        }
    }

    #[test]
    fn field_is_curl_of_differenced_potential(which in 0usize..3, t in prop::array::uniform3(0.0f64..1.0)) {
        let f = &fields()[which];
        let x = point_in(f, t);
        let d = |i: usize, k: usize| {
            (f.vector_potential(&shifted(&x, k, FD_STEP))[i] - f.vector_potential(&shifted(&x, k, -FD_STEP))[i])
                / (2.0 * FD_STEP)
        };
        let curl = [d(2, 1) - d(1, 2), d(0, 2) - d(2, 0), d(1, 0) - d(0, 1)];
        let b = eval_b(f, &x);
        for i in 0..3 {
            prop_assert!(close(b[i], curl[i]));
        }
    }

    #[test]
    fn potential_gradients_match_central_differences(which in 0usize..3, t in prop::array::uniform3(0.0f64..1.0)) {
        let f = &fields()[which];
        let x = point_in(f, t);
        let (g0, g1) = (f.grad_phi0(&x), f.grad_phi1(&x));
        for k in 0..3 {
            let (xp, xm) = (shifted(&x, k, FD_STEP), shifted(&x, k, -FD_STEP));
            prop_assert!(close(g0[k], (f.phi0(&xp) - f.phi0(&xm)) / (2.0 * FD_STEP)));
            prop_assert!(close(g1[k], (f.phi1(&xp) - f.phi1(&xm)) / (2.0 * FD_STEP)));
        }
    }

    #[test]
    fn curl_identity_holds(which in 0usize..3, t in prop::array::uniform3(0.0f64..1.0), p in prop::array::uniform3(-3.0f64..3.0)) {
        let f = &fields()[which];
        prop_assert!(check_curl_identity(f, &point_in(f, t), &p) <= 1e-10);
    }

    #[test]
    fn non_positive_kappa_rejected(eps in 1e-4f64..1.0, kappa in -2.0f64..=0.0) {
        prop_assert!(ScalingParams::new(eps, kappa).is_err());
    }
}

fn uniform() -> FieldSpec {
    registry().remove(0).field
}

/// Per-step amplification of RK4 on a rotation with angle `z`.
fn rk4_gain(z: f64) -> f64 {
    let re = 1.0 - z * z / 2.0 + z.powi(4) / 24.0;
    let im = z - z.powi(3) / 6.0;
    (re * re + im * im).sqrt()
}

/// Pure gyration in the uniform field: the perpendicular speed decays by the
/// RK4 gain each step, so the relative energy drift is known in closed form.
fn energy_drift(steps_per_period: f64) -> (f64, f64) {
    let f = uniform();
    let s = ScalingParams::new(1e-2, 0.5).unwrap();
    let period = gyro_period(&s, 1.0);
    let dt = period / steps_per_period;
    let s0 = UsualState::new([0.0; 3], [0.0, 0.6, 0.0]);
    let tr = integrate_usual(&f, &s, &s0, 100.0 * period, dt, StepGuard::Unchecked).unwrap();
    let h0 = hamiltonian_usual(&f, &s, &tr.states[0]);
    let h1 = hamiltonian_usual(&f, &s, tr.last());
    let n = tr.len() as f64 - 1.0;
    let oracle = 1.0 - rk4_gain(2.0 * std::f64::consts::PI / steps_per_period).powf(2.0 * n);
    ((h0 - h1).abs() / h0, oracle)
}

#[test]
fn energy_drift_follows_rk4_gain() {
    let (drift, oracle) = energy_drift(64.0);
    assert!((drift - oracle).abs() <= 1e-9 * oracle.max(1e-300) + 1e-13, "{drift} vs {oracle}");
    assert!(drift > 1e-8);
    let (fine, _) = energy_drift(512.0);
    assert!(fine <= 1e-8, "{fine}");
}

#[test]
fn rk4_fourth_order_in_uniform_field() {
    let f = uniform();
    let s = ScalingParams::new(0.05, 0.5).unwrap();
    let s0 = UsualState::new([0.1, -0.2, 0.3], [0.4, 0.5, -0.3]);
    let t_end = 2.0 * gyro_period(&s, 1.0);
    // exact helix: v_perp rotates about x1 at rate b0 / eps
    let w = 1.0 / s.epsilon();
    let (sn, cs) = (w * t_end).sin_cos();
    let v = [0.4, 0.5 * cs + (-0.3) * sn, -0.3 * cs - 0.5 * sn];
    let exact = [0.1 + 0.4 * t_end, -0.2 + (0.5 * sn - (-0.3) * (1.0 - cs)) / w, 0.3 + (-0.3 * sn - 0.5 * (1.0 - cs)) / w];
    let err = |n: f64| {
        let tr = integrate_usual(&f, &s, &s0, t_end, t_end / n, StepGuard::Unchecked).unwrap();
        let e = tr.last();
        (0..3).map(|i| (e[i] - exact[i]).abs().max((e[3 + i] - v[i]).abs())).fold(0.0, f64::max)
    };
    let (a, b) = (err(64.0), err(128.0));
    assert!(a / b >= 14.0, "{a} {b}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn usual_and_canonical_orbits_agree(which in 0usize..3, seed in prop::array::uniform6(0.0f64..1.0)) {
        let sc = &registry()[which];
        let f = sc.field;
        let s = ScalingParams::new(2e-2, 0.5).unwrap();
        let d = f.domain.inset(0.5);
        let x = std::array::from_fn(|i| d.lo[i] + seed[i] * (d.hi[i] - d.lo[i]));
        let v = std::array::from_fn(|i| seed[3 + i] - 0.5);
        let s0 = UsualState::new(x, v);
        let period = gyro_period(&s, f.max_field_strength());
        let dt = period / 64.0;
        let a = integrate_usual(&f, &s, &s0, 3.0 * period, dt, StepGuard::gyro(&f, &s)).unwrap();
        let half = integrate_usual(&f, &s, &s0, 3.0 * period, dt / 2.0, StepGuard::gyro(&f, &s)).unwrap();
        let c0 = to_canonical(&s0, &f, &s).unwrap();
        let b = integrate_canonical(&f, &s, &c0, 3.0 * period, dt, StepGuard::gyro(&f, &s)).unwrap();
        let tol = (0..6).map(|i| (a.last()[i] - half.last()[i]).abs()).fold(0.0, f64::max);
        let back = to_usual(&CanonicalState::from_array(b.last()), &f, &s).unwrap().to_array();
        let diff = (0..6).map(|i| (a.last()[i] - back[i]).abs()).fold(0.0, f64::max);
        prop_assert!(diff <= 10.0 * tol.max(1e-14), "{} vs {}", diff, tol);
    }
}
