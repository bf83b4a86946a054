use std::f64::consts::PI;

use gyroreduce::ad::Real;
use gyroreduce::cylindrical::{to_cyl, PerpFrame};
use gyroreduce::darboux::{
    darboux_brackets, darboux_map, hamiltonian_darboux, k_numeric, k_series, CharacteristicField, DarbouxConfig,
};
use gyroreduce::dynamics::{gyro_period, integrate_usual, StepGuard, UsualState};
use gyroreduce::fields::{FieldSpec, ScalingParams};
use gyroreduce::lie::{
    gyro_average, lie_flow, solve_homological_first_order, theta_residual, AveragedHamiltonian, BlockPoisson,
    LieConfig,
};
use gyroreduce::linalg::State;
use gyroreduce::poisson::{CoordinateMap, PhaseFunction};
use gyroreduce::reduced::convergence_orders;
use gyroreduce::scenario::find;
use proptest::prelude::*;

fn field(name: &str) -> FieldSpec {
    find(name).unwrap().field
}

fn probe(f: &FieldSpec, t: &[f64; 6]) -> State {
    let d = f.domain.inset(0.3);
    [
        d.lo[0] + t[0] * (d.hi[0] - d.lo[0]),
        d.lo[1] + t[1] * (d.hi[1] - d.lo[1]),
        d.lo[2] + t[2] * (d.hi[2] - d.lo[2]),
        2.0 * t[3] - 1.0,
        0.3 + 0.7 * t[4],
        2.0 * PI * t[5],
    ]
}

fn grid_probes(f: &FieldSpec) -> Vec<State> {
    (0..6)
        .map(|i| {
            let a = i as f64 / 6.0;
            probe(f, &[a, 1.0 - a, 0.5 + 0.3 * (a - 0.5), 0.2 + 0.6 * a, 0.9 - 0.7 * a, a + 0.1])
        })
        .collect()
}

#[test]
fn k_is_conserved_along_uniform_orbit() {
    let f = field("uniform");
    let s = ScalingParams::new(1e-2, 0.5).unwrap();
    let cfg = DarbouxConfig::default();
    let cf = CharacteristicField::new(&f, &s, PerpFrame::default());
    let s0 = UsualState::new([0.1, -0.3, 0.2], [0.4, 0.5, -0.2]);
    let period = gyro_period(&s, 1.0);
    let tr = integrate_usual(&f, &s, &s0, 5.0 * period, period / 512.0, StepGuard::Unchecked).unwrap();
    let ks: Vec<f64> = tr
        .states
        .iter()
        .step_by(37)
        .map(|r| {
            let c = to_cyl(&f, PerpFrame::default(), &UsualState::from_array(r)).unwrap().to_array();
            k_series(&cf, &c, &cfg).unwrap()
        })
        .collect();
    let spread = ks.iter().map(|k| (k - ks[0]).abs()).fold(0.0, f64::max);
    assert!(spread <= 1e-9, "{spread}");
}

#[test]
fn k_series_converges_at_truncation_order() {
    let f = field("graded_b");
    let eps = [1e-2, 5e-3, 2.5e-3];
    let probes = grid_probes(&f);
    let reference = DarbouxConfig::default();
    for order in 0..=2 {
        let cfg = DarbouxConfig { order, ..reference };
        let errs: Vec<f64> = eps
            .iter()
            .map(|&e| {
                let s = ScalingParams::new(e, 0.5).unwrap();
                let cf = CharacteristicField::new(&f, &s, PerpFrame::default());
                probes
                    .iter()
                    .map(|c| (k_series(&cf, c, &cfg).unwrap() - k_numeric(&cf, c, &reference).unwrap()).abs())
                    .fold(0.0, f64::max)
            })
            .collect();
        let orders = convergence_orders(&eps, &errs);
        let want = (order + 1) as f64 - 0.2;
        assert!(orders.iter().all(|&o| o >= want), "order {order}: errors {errs:?} orders {orders:?}");
    }
}

#[test]
fn theta_k_bracket_is_inverse_epsilon() {
    let f = field("graded_b");
    for eps in [1e-2, 2.5e-3] {
        let s = ScalingParams::new(eps, 0.5).unwrap();
        let m = darboux_map(&f, &s, PerpFrame::default(), DarbouxConfig::default()).unwrap();
        let rep = darboux_brackets(&m, &grid_probes(&f)).unwrap();
        for v in rep.theta_k_scaled {
            assert!((v + 1.0).abs() <= 10.0 * eps, "{v}");
        }
    }
}

#[test]
fn darboux_rejects_varying_direction() {
    let f = field("tokamak_demo");
    let s = ScalingParams::new(1e-2, 0.5).unwrap();
    assert!(darboux_map(&f, &s, PerpFrame::default(), DarbouxConfig::default()).is_err());
}

#[test]
fn unsupported_order_rejected() {
    let f = field("graded_b");
    let s = ScalingParams::new(1e-2, 0.5).unwrap();
    let cfg = DarbouxConfig { order: 3, ..Default::default() };
    assert!(darboux_map(&f, &s, PerpFrame::default(), cfg).is_err());
}

struct Wave;
impl PhaseFunction for Wave {
    fn eval<T: Real>(&self, w: &[T; 6]) -> T {
        w[0] * w[4] + (w[5] * 2.0).sin() * w[3] + (w[5] + w[1]).cos()
    }
}

struct Averaged;
impl PhaseFunction for Averaged {
    fn eval<T: Real>(&self, w: &[T; 6]) -> T {
        gyroreduce::lie::gyro_average_generic(&Wave, w, 64)
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn gyro_average_is_a_projection(t in prop::array::uniform6(0.0f64..1.0)) {
        let w = probe(&field("uniform"), &t);
        let once = gyro_average(&Wave, &w);
        let twice = gyro_average(&Averaged, &w);
        prop_assert!((once - twice).abs() <= 1e-13);
        prop_assert!((once - w[0] * w[4]).abs() <= 1e-13);
        prop_assert!(theta_residual(&Averaged, &[w], 16) <= 1e-13);
    }

    #[test]
    fn leading_hamiltonian_is_gyrophase_free(t in prop::array::uniform6(0.0f64..1.0)) {
        let f = field("graded_b");
        let s = ScalingParams::new(5e-3, 0.5).unwrap();
        let m = darboux_map(&f, &s, PerpFrame::default(), DarbouxConfig::default()).unwrap();
        let h = hamiltonian_darboux(&f, &s, &m, 1).unwrap();
        let w = probe(&f, &t);
        prop_assert!(h.theta_derivative_leading(&w).abs() <= 1e-12);
    }
}

#[test]
fn lie_flow_round_trip_and_averaged_hamiltonian() {
    let f = field("graded_b");
    let eps = 5e-3;
    let s = ScalingParams::new(eps, 0.5).unwrap();
    let cfg = LieConfig::default();
    let m = darboux_map(&f, &s, PerpFrame::default(), DarbouxConfig::default()).unwrap();
    let h = hamiltonian_darboux(&f, &s, &m, 1).unwrap();
    let gen = solve_homological_first_order(&h, &cfg).unwrap();
    let pbar = BlockPoisson {
        map: &m,
        newton_steps: cfg.newton_steps,
    };
    let zeta = lie_flow(&gen, &pbar, eps, &cfg);
    let avg = AveragedHamiltonian { generator: &gen };
    for c in grid_probes(&f) {
        let w = m.forward(&c);
        let back = zeta.inverse(&zeta.forward(&w));
        let err = (0..6).map(|i| (back[i] - w[i]).abs()).fold(0.0, f64::max);
        assert!(err <= 1e-10, "{err}");
        // the averaged Hamiltonian starts from the leading coefficient
        let d = avg.value(&w) - h.coefficient(0, &w);
        assert!(d.abs() <= eps * 10.0, "{d}");
        assert!(theta_residual(&avg, &[w], 16) <= 1e-12);
    }
}
