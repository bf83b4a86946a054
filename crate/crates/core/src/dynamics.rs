//! Full six-dimensional particle dynamics in usual `(x, v)` and canonical
//! `(q, p)` coordinates, with a fixed-step RK4 integrator.

use std::f64::consts::PI;
use std::fmt;
use std::io::{self, Write};

use serde::{Deserialize, Serialize};

use crate::ad::Real;
use crate::error::{Error, Result};
use crate::fields::{eval_b, eval_e, total_potential, FieldModel, ScalingParams};
use crate::linalg::{axpy, cross, dot, matvec, transpose, State, Vec3};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct UsualState {
    pub x: Vec3,
    pub v: Vec3,
}

impl UsualState {
    pub fn new(x: Vec3, v: Vec3) -> Self {
        UsualState { x, v }
    }

    pub fn to_array(&self) -> State {
        [self.x[0], self.x[1], self.x[2], self.v[0], self.v[1], self.v[2]]
    }

    pub fn from_array(s: &State) -> Self {
        UsualState {
            x: [s[0], s[1], s[2]],
            v: [s[3], s[4], s[5]],
        }
    }

    pub fn is_finite(&self) -> bool {
        self.to_array().iter().all(|c| c.is_finite())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CanonicalState {
    pub q: Vec3,
    pub p: Vec3,
}

impl CanonicalState {
    pub fn to_array(&self) -> State {
        [self.q[0], self.q[1], self.q[2], self.p[0], self.p[1], self.p[2]]
    }

    pub fn from_array(s: &State) -> Self {
        CanonicalState {
            q: [s[0], s[1], s[2]],
            p: [s[3], s[4], s[5]],
        }
    }
}

/// Chart label carried by trajectories.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CoordSystem {
    Usual,
    Canonical,
    Cylindrical,
    Darboux,
    Lie,
    GuidingCenter,
}

impl fmt::Display for CoordSystem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            CoordSystem::Usual => "usual",
            CoordSystem::Canonical => "canonical",
            CoordSystem::Cylindrical => "cylindrical",
            CoordSystem::Darboux => "darboux",
            CoordSystem::Lie => "lie",
            CoordSystem::GuidingCenter => "guiding_center",
        };
        f.write_str(s)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<State>,
    pub system: CoordSystem,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn last(&self) -> &State {
        self.states.last().expect("trajectory holds the initial state")
    }

    /// `t,c1,...,c6,system` with 17 significant digits.
    pub fn write_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        writeln!(w, "t,c1,c2,c3,c4,c5,c6,system")?;
        for (t, s) in self.times.iter().zip(&self.states) {
            write!(w, "{t:.16e}")?;
            for c in s {
                write!(w, ",{c:.16e}")?;
            }
            writeln!(w, ",{}", self.system)?;
        }
        Ok(())
    }
}

/// `(v, E0(x) + E1(x / eta) + v x B(x) / epsilon)`
pub fn rhs_usual<F: FieldModel>(model: &F, scaling: &ScalingParams, s: &UsualState) -> Result<State> {
    model.domain().check(&s.x)?;
    let e = eval_e(model, scaling, &s.x);
    let b = eval_b(model, &s.x);
    let a = axpy(&e, 1.0 / scaling.epsilon(), &cross(&s.v, &b));
    Ok([s.v[0], s.v[1], s.v[2], a[0], a[1], a[2]])
}

/// Hamilton's equations for `1/2 |p - A(q)/eps|^2 + Phi0(q) + eta Phi1(q/eta)`.
pub fn rhs_canonical<F: FieldModel>(
    model: &F,
    scaling: &ScalingParams,
    s: &CanonicalState,
) -> Result<State> {
    model.domain().check(&s.q)?;
    let eps = scaling.epsilon();
    let a = model.vector_potential(&s.q);
    let w: Vec3 = std::array::from_fn(|i| s.p[i] - a[i] / eps);
    let jt_w = matvec(&transpose(&model.potential_jacobian(&s.q)), &w);
    let e = eval_e(model, scaling, &s.q);
    let dp = axpy(&e, 1.0 / eps, &jt_w);
    Ok([w[0], w[1], w[2], dp[0], dp[1], dp[2]])
}

/// `q = x`, `p = v + A(x) / epsilon`.
pub fn to_canonical<F: FieldModel>(
    s: &UsualState,
    model: &F,
    scaling: &ScalingParams,
) -> Result<CanonicalState> {
    model.domain().check(&s.x)?;
    let a = model.vector_potential(&s.x);
    Ok(CanonicalState {
        q: s.x,
        p: axpy(&s.v, 1.0 / scaling.epsilon(), &a),
    })
}

pub fn to_usual<F: FieldModel>(
    c: &CanonicalState,
    model: &F,
    scaling: &ScalingParams,
) -> Result<UsualState> {
    model.domain().check(&c.q)?;
    let a = model.vector_potential(&c.q);
    Ok(UsualState {
        x: c.q,
        v: axpy(&c.p, -1.0 / scaling.epsilon(), &a),
    })
}

/// `1/2 |v|^2 + Phi0(x) + eta Phi1(x / eta)`
pub fn hamiltonian_usual<F: FieldModel, T: Real>(model: &F, scaling: &ScalingParams, r: &[T; 6]) -> T {
    let x = [r[0], r[1], r[2]];
    let v = [r[3], r[4], r[5]];
    dot(&v, &v) * 0.5 + total_potential(model, scaling, &x)
}

pub fn hamiltonian_canonical<F: FieldModel, T: Real>(
    model: &F,
    scaling: &ScalingParams,
    r: &[T; 6],
) -> T {
    let q = [r[0], r[1], r[2]];
    let a = model.vector_potential(&q);
    let inv = 1.0 / scaling.epsilon();
    let w: [T; 3] = std::array::from_fn(|i| r[3 + i] - a[i] * inv);
    dot(&w, &w) * 0.5 + total_potential(model, scaling, &q)
}

/// `(2 pi epsilon / max|B|) / 32`
pub fn gyro_step_limit(scaling: &ScalingParams, max_b: f64) -> f64 {
    2.0 * PI * scaling.epsilon() / max_b / 32.0
}

/// Gyration period `2 pi epsilon / |B|`.
pub fn gyro_period(scaling: &ScalingParams, b: f64) -> f64 {
    2.0 * PI * scaling.epsilon() / b
}

/// Step-size policy for [`integrate`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum StepGuard {
    /// Reject steps above this value.
    MaxStep(f64),
    /// Explicit override: any positive step.
    Unchecked,
}

impl StepGuard {
    pub fn gyro<F: FieldModel>(model: &F, scaling: &ScalingParams) -> Self {
        StepGuard::MaxStep(gyro_step_limit(scaling, model.max_field_strength()))
    }
}

/// One classical Runge–Kutta step.
pub fn rk4_step<T: Real, const N: usize>(
    f: impl Fn(&[T; N]) -> [T; N],
    y: &[T; N],
    h: T,
) -> [T; N] {
    let k1 = f(y);
    let k2 = f(&std::array::from_fn(|i| y[i] + k1[i] * h * 0.5));
    let k3 = f(&std::array::from_fn(|i| y[i] + k2[i] * h * 0.5));
    let k4 = f(&std::array::from_fn(|i| y[i] + k3[i] * h));
    std::array::from_fn(|i| y[i] + (k1[i] + (k2[i] + k3[i]) * 2.0 + k4[i]) * h / 6.0)
}

/// Fixed-step RK4 from `t = 0` to `t_end`. The step is `t_end / n` with the
/// smallest `n` such that it does not exceed `dt`.
pub fn integrate<R>(
    rhs: R,
    s0: State,
    t_end: f64,
    dt: f64,
    guard: StepGuard,
    system: CoordSystem,
) -> Result<Trajectory>
where
    R: Fn(&State) -> Result<State>,
{
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(Error::InvalidArgument(format!("time step must be positive, got {dt}")));
    }
    if !(t_end >= 0.0 && t_end.is_finite()) {
        return Err(Error::InvalidArgument(format!("invalid end time {t_end}")));
    }
    if let StepGuard::MaxStep(limit) = guard {
        if dt > limit * (1.0 + 1e-12) {
            return Err(Error::StepTooLarge { dt, limit });
        }
    }
    let n = ((t_end / dt) * (1.0 - 1e-12)).ceil().max(if t_end > 0.0 { 1.0 } else { 0.0 }) as usize;
    let h = if n > 0 { t_end / n as f64 } else { 0.0 };
    let mut times = Vec::with_capacity(n + 1);
    let mut states = Vec::with_capacity(n + 1);
    times.push(0.0);
    states.push(s0);
    let mut y = s0;
    for step in 0..n {
        let t = step as f64 * h;
        let exit = |e: Error| match e {
            Error::OutOfDomain { point } => Error::DomainExit { time: t, point },
            other => other,
        };
        let k1 = rhs(&y).map_err(exit)?;
        let k2 = rhs(&axpy(&y, 0.5 * h, &k1)).map_err(exit)?;
        let k3 = rhs(&axpy(&y, 0.5 * h, &k2)).map_err(exit)?;
        let k4 = rhs(&axpy(&y, h, &k3)).map_err(exit)?;
        y = std::array::from_fn(|i| y[i] + h / 6.0 * (k1[i] + 2.0 * (k2[i] + k3[i]) + k4[i]));
        times.push(if step + 1 == n { t_end } else { (step + 1) as f64 * h });
        states.push(y);
    }
    Ok(Trajectory {
        times,
        states,
        system,
    })
}

pub fn integrate_usual<F: FieldModel>(
    model: &F,
    scaling: &ScalingParams,
    s0: &UsualState,
    t_end: f64,
    dt: f64,
    guard: StepGuard,
) -> Result<Trajectory> {
    integrate(
        |y| rhs_usual(model, scaling, &UsualState::from_array(y)),
        s0.to_array(),
        t_end,
        dt,
        guard,
        CoordSystem::Usual,
    )
}

pub fn integrate_canonical<F: FieldModel>(
    model: &F,
    scaling: &ScalingParams,
    s0: &CanonicalState,
    t_end: f64,
    dt: f64,
    guard: StepGuard,
) -> Result<Trajectory> {
    integrate(
        |y| rhs_canonical(model, scaling, &CanonicalState::from_array(y)),
        s0.to_array(),
        t_end,
        dt,
        guard,
        CoordSystem::Canonical,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fields::{Domain, FieldSpec, Magnet, Potential};

    fn scaling(eps: f64) -> ScalingParams {
        ScalingParams::new(eps, 0.5).unwrap()
    }

    #[test]
    fn rhs_usual_examples() {
        let s = scaling(0.1);
        let f = FieldSpec::new(Magnet::Uniform { b0: 2.0 }, Domain::cube(5.0));
        let d = rhs_usual(&f, &s, &UsualState::new([0.0; 3], [0.0, 3.0, 0.0])).unwrap();
        // v x B = (0, u, 0) x (b0, 0, 0) = (0, 0, -u b0)
        assert_eq!(d, [0.0, 3.0, 0.0, 0.0, 0.0, -60.0]);

        let rest = rhs_usual(&f, &s, &UsualState::new([1.0, 0.0, 0.0], [0.0; 3])).unwrap();
        assert_eq!(rest, [0.0; 6]);

        let push = FieldSpec::new(Magnet::None, Domain::cube(5.0)).with_potentials(
            Potential::Linear {
                gradient: [1.0, 0.0, 0.0],
            },
            Potential::Zero,
        );
        let d = rhs_usual(&push, &s, &UsualState::new([0.0; 3], [0.0; 3])).unwrap();
        assert_eq!(d, [0.0, 0.0, 0.0, -1.0, 0.0, 0.0]);
    }

    #[test]
    fn rhs_canonical_examples() {
        let free = FieldSpec::new(Magnet::None, Domain::cube(5.0));
        let s = scaling(0.5);
        let c = CanonicalState {
            q: [0.0; 3],
            p: [1.0, 0.0, 0.0],
        };
        assert_eq!(rhs_canonical(&free, &s, &c).unwrap(), [1.0, 0.0, 0.0, 0.0, 0.0, 0.0]);

        // A = (0, 0, x2) vanishes at q = 0, so dq/dt = p for any epsilon
        let g = FieldSpec::new(Magnet::Graded { b0: 1.0, alpha: 0.0 }, Domain::cube(5.0));
        let s = scaling(0.5);
        let c = CanonicalState {
            q: [0.0; 3],
            p: [0.0, 0.0, 1.0],
        };
        let d = rhs_canonical(&g, &s, &c).unwrap();
        assert_eq!(&d[..3], &[0.0, 0.0, 1.0]);
    }

    #[test]
    fn canonical_momentum_example() {
        let g = FieldSpec::new(Magnet::Graded { b0: 1.0, alpha: 0.0 }, Domain::cube(5.0));
        let c = to_canonical(&UsualState::new([0.0, 1.0, 0.0], [0.0; 3]), &g, &scaling(0.5)).unwrap();
        assert_eq!(c.p, [0.0, 0.0, 2.0]);
    }

    #[test]
    fn hamiltonian_examples() {
        let f = FieldSpec::new(Magnet::Uniform { b0: 1.0 }, Domain::cube(5.0));
        let s = scaling(0.1);
        assert_eq!(hamiltonian_usual(&f, &s, &[0.0; 6]), 0.0);
        assert_eq!(hamiltonian_usual(&f, &s, &[0.0, 0.0, 0.0, 1.0, 2.0, 2.0]), 4.5);
    }

    #[test]
    fn constant_rhs_gives_constant_trajectory() {
        let tr = integrate(
            |_| Ok([0.0; 6]),
            [1.0, 2.0, 3.0, 4.0, 5.0, 6.0],
            1.0,
            0.1,
            StepGuard::Unchecked,
            CoordSystem::Usual,
        )
        .unwrap();
        assert_eq!(tr.len(), 11);
        assert!(tr.states.iter().all(|s| *s == [1.0, 2.0, 3.0, 4.0, 5.0, 6.0]));
        assert!(tr.times.windows(2).all(|w| w[1] > w[0]));
    }

    #[test]
    fn step_guard_rejects_coarse_steps() {
        let f = FieldSpec::new(Magnet::Uniform { b0: 1.0 }, Domain::cube(5.0));
        let s = scaling(0.1);
        let guard = StepGuard::gyro(&f, &s);
        let limit = gyro_step_limit(&s, 1.0);
        let err = integrate_usual(&f, &s, &UsualState::new([0.0; 3], [0.0, 1.0, 0.0]), 1.0, 2.0 * limit, guard)
            .unwrap_err();
        assert!(matches!(err, Error::StepTooLarge { .. }));
        assert!(integrate_usual(
            &f,
            &s,
            &UsualState::new([0.0; 3], [0.0, 1.0, 0.0]),
            0.1,
            2.0 * limit,
            StepGuard::Unchecked
        )
        .is_ok());
    }

    #[test]
    fn domain_exit_reports_time() {
        let f = FieldSpec::new(Magnet::None, Domain::cube(1.0));
        let s = scaling(0.1);
        let err = integrate_usual(
            &f,
            &s,
            &UsualState::new([0.0; 3], [1.0, 0.0, 0.0]),
            3.0,
            0.01,
            StepGuard::Unchecked,
        )
        .unwrap_err();
        match err {
            Error::DomainExit { time, point } => {
                assert!(time > 0.95 && time < 1.0, "{time}");
                assert!(point[0] > 1.0);
            }
            e => panic!("unexpected {e:?}"),
        }
    }

    #[test]
    fn csv_layout() {
        let tr = Trajectory {
            times: vec![0.0, 0.5],
            states: vec![[0.1; 6], [1.0 / 3.0; 6]],
            system: CoordSystem::Canonical,
        };
        let mut buf = Vec::new();
        tr.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "t,c1,c2,c3,c4,c5,c6,system");
        let fields: Vec<&str> = lines[2].split(',').collect();
        assert_eq!(fields.len(), 8);
        assert_eq!(fields[1], "3.3333333333333331e-1");
        assert_eq!(fields[7], "canonical");
        assert!(text.ends_with('\n') && !text.contains('\r'));
    }
}
