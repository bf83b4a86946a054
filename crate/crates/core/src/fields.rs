//! Electromagnetic field models in dimensionless variables.
//!
//! A model supplies the slow potential `phi0`, the fast potential `phi1`
//! (evaluated at `x / eta`) and the vector potential `A`. Everything else,
//! `E`, `B` and their derivatives, is derived here. Registry models carry
//! closed-form derivatives; user models fall back to dual-number
//! differentiation through the generic trait methods.

use serde::{Deserialize, Serialize};

use crate::ad::{gradient, jacobian, Real};
use crate::error::{Error, Result};
use crate::linalg::{cross, lift, matvec, norm, scale, sub, transpose, Mat3, Vec3};

/// The small parameters of the problem.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct ScalingParams {
    epsilon: f64,
    kappa: f64,
    eta: f64,
}

impl ScalingParams {
    /// `eta = epsilon^(1 - kappa)`; requires `0 < epsilon < 1` and `kappa > 0`.
    pub fn new(epsilon: f64, kappa: f64) -> Result<Self> {
        if !(epsilon > 0.0 && epsilon < 1.0) {
            return Err(Error::InvalidScaling(format!(
                "epsilon must lie in (0, 1), got {epsilon}"
            )));
        }
        if !(kappa > 0.0 && kappa.is_finite()) {
            return Err(Error::InvalidScaling(format!(
                "kappa must be positive, got {kappa}"
            )));
        }
        let eta = epsilon.powf(1.0 - kappa);
        if eta <= epsilon {
            return Err(Error::InvalidScaling(format!(
                "eta = {eta} does not exceed epsilon = {epsilon}"
            )));
        }
        Ok(ScalingParams {
            epsilon,
            kappa,
            eta,
        })
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn kappa(&self) -> f64 {
        self.kappa
    }

    pub fn eta(&self) -> f64 {
        self.eta
    }

    /// Same `kappa`, different `epsilon`.
    pub fn with_epsilon(&self, epsilon: f64) -> Result<Self> {
        ScalingParams::new(epsilon, self.kappa)
    }
}

/// Axis-aligned box on which a field model may be evaluated.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Domain {
    pub lo: Vec3,
    pub hi: Vec3,
}

impl Domain {
    pub fn new(lo: Vec3, hi: Vec3) -> Result<Self> {
        if (0..3).any(|i| !(lo[i] < hi[i])) {
            return Err(Error::InvalidArgument(format!(
                "empty domain box {lo:?} .. {hi:?}"
            )));
        }
        Ok(Domain { lo, hi })
    }

    pub fn cube(half_width: f64) -> Self {
        Domain {
            lo: [-half_width; 3],
            hi: [half_width; 3],
        }
    }

    pub fn contains(&self, x: &Vec3) -> bool {
        (0..3).all(|i| x[i] >= self.lo[i] && x[i] <= self.hi[i])
    }

    pub fn check(&self, x: &Vec3) -> Result<()> {
        if self.contains(x) {
            Ok(())
        } else {
            Err(Error::OutOfDomain { point: *x })
        }
    }

    /// Shrinks the box by `margin` on every side.
    pub fn inset(&self, margin: f64) -> Domain {
        Domain {
            lo: self.lo.map(|v| v + margin),
            hi: self.hi.map(|v| v - margin),
        }
    }
}

/// `curl A` from the Jacobian `J[i][j] = dA_i/dx_j`.
pub fn curl_from_jacobian<T: Real>(j: &[[T; 3]; 3]) -> [T; 3] {
    [
        j[2][1] - j[1][2],
        j[0][2] - j[2][0],
        j[1][0] - j[0][1],
    ]
}

/// Potentials and vector potential of a static field configuration.
pub trait FieldModel: Sync {
    fn vector_potential<T: Real>(&self, x: &[T; 3]) -> [T; 3];

    fn phi0<T: Real>(&self, x: &[T; 3]) -> T;

    /// Fast potential as a function of the stretched variable `u = x / eta`.
    fn phi1<T: Real>(&self, u: &[T; 3]) -> T;

    fn domain(&self) -> &Domain;

    fn magnetic_field<T: Real>(&self, x: &[T; 3]) -> [T; 3] {
        let (_, j) = jacobian(|z| self.vector_potential(z), x);
        curl_from_jacobian(&j)
    }

    /// `J[i][j] = dA_i/dx_j`.
    fn potential_jacobian(&self, x: &Vec3) -> Mat3 {
        jacobian(|z| self.vector_potential(z), x).1
    }

    fn grad_phi0(&self, x: &Vec3) -> Vec3 {
        gradient(|z| self.phi0(z), x).1
    }

    fn grad_phi1(&self, u: &Vec3) -> Vec3 {
        gradient(|z| self.phi1(z), u).1
    }

    /// Upper bound of `|B|` over the domain, used by the step-size guard.
    fn max_field_strength(&self) -> f64 {
        let d = self.domain();
        let n = 8;
        let mut m = 0.0f64;
        for i in 0..=n {
            for j in 0..=n {
                for k in 0..=n {
                    let t = [i, j, k].map(|q| q as f64 / n as f64);
                    let x: Vec3 = std::array::from_fn(|a| d.lo[a] + t[a] * (d.hi[a] - d.lo[a]));
                    m = m.max(norm(&self.magnetic_field(&x)));
                }
            }
        }
        m
    }
}

/// `Phi0(x) + eta Phi1(x / eta)`.
pub fn total_potential<F: FieldModel, T: Real>(model: &F, scaling: &ScalingParams, x: &[T; 3]) -> T {
    let eta = scaling.eta();
    let u = x.map(|c| c / eta);
    model.phi0(x) + model.phi1(&u) * eta
}

/// `E0(x) + E1(x / eta)` with `E0 = -grad Phi0`, `E1(u) = -grad Phi1(u)`.
pub fn eval_e<F: FieldModel>(model: &F, scaling: &ScalingParams, x: &Vec3) -> Vec3 {
    let u = x.map(|c| c / scaling.eta());
    let g0 = model.grad_phi0(x);
    let g1 = model.grad_phi1(&u);
    std::array::from_fn(|i| -g0[i] - g1[i])
}

/// Unscaled magnetic field `curl A`.
pub fn eval_b<F: FieldModel>(model: &F, x: &Vec3) -> Vec3 {
    model.magnetic_field(x)
}

/// `|B(x)|`
pub fn field_strength<F: FieldModel, T: Real>(model: &F, x: &[T; 3]) -> T {
    norm(&model.magnetic_field(x))
}

/// Norm of `(grad A)^T w - (grad A) w - w x curl A` with `w = p - A(x)`.
pub fn check_curl_identity<F: FieldModel>(model: &F, x: &Vec3, p: &Vec3) -> f64 {
    let a = model.vector_potential(x);
    let j = model.potential_jacobian(x);
    let w = sub(p, &a);
    let jt_w = matvec(&transpose(&j), &w);
    let j_w = matvec(&j, &w);
    let curl = curl_from_jacobian(&j);
    let wxb = cross(&w, &curl);
    let r: Vec3 = std::array::from_fn(|i| jt_w[i] - j_w[i] - wxb[i]);
    norm(&r)
}

/// Magnetic configurations shipped with the crate.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Magnet {
    None,
    /// `A = (0, -b0 x3 / 2, b0 x2 / 2)`, `B = (b0, 0, 0)`.
    Uniform { b0: f64 },
    /// `A = (0, 0, b0 (x2 + alpha x2^2 / 2))`, `B = (b0 (1 + alpha x2), 0, 0)`.
    Graded { b0: f64, alpha: f64 },
    /// Straight field along `x1` with a poloidal twist around the `x1` axis:
    /// `B = (b0, -c x3, c x2)` with `c = b0 * pitch`.
    ScrewPinch { b0: f64, pitch: f64 },
}

impl Magnet {
    /// Direction of `B` when it does not depend on position.
    pub fn constant_direction(&self) -> Option<Vec3> {
        match *self {
            Magnet::Uniform { b0 } | Magnet::Graded { b0, .. } => {
                Some([b0.signum(), 0.0, 0.0])
            }
            _ => None,
        }
    }
}

/// Scalar potentials shipped with the crate.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Potential {
    Zero,
    /// `g . x`
    Linear { gradient: Vec3 },
    /// `amplitude * sin(k . x)`
    Sinusoidal { amplitude: f64, wavevector: Vec3 },
}

impl Potential {
    pub fn eval<T: Real>(&self, x: &[T; 3]) -> T {
        match *self {
            Potential::Zero => T::zero(),
            Potential::Linear { gradient } => {
                x[0] * gradient[0] + x[1] * gradient[1] + x[2] * gradient[2]
            }
            Potential::Sinusoidal {
                amplitude,
                wavevector: k,
            } => (x[0] * k[0] + x[1] * k[1] + x[2] * k[2]).sin() * amplitude,
        }
    }

    pub fn gradient(&self, x: &Vec3) -> Vec3 {
        match *self {
            Potential::Zero => [0.0; 3],
            Potential::Linear { gradient } => gradient,
            Potential::Sinusoidal {
                amplitude,
                wavevector: k,
            } => {
                let ph = k[0] * x[0] + k[1] * x[1] + k[2] * x[2];
                scale(&k, amplitude * ph.cos())
            }
        }
    }

    pub fn is_zero(&self) -> bool {
        matches!(self, Potential::Zero)
    }
}

/// A registry field: magnet, two potentials and a domain box.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FieldSpec {
    pub magnet: Magnet,
    pub phi0: Potential,
    pub phi1: Potential,
    pub domain: Domain,
}

impl FieldSpec {
    pub fn new(magnet: Magnet, domain: Domain) -> Self {
        FieldSpec {
            magnet,
            phi0: Potential::Zero,
            phi1: Potential::Zero,
            domain,
        }
    }

    pub fn with_potentials(mut self, phi0: Potential, phi1: Potential) -> Self {
        self.phi0 = phi0;
        self.phi1 = phi1;
        self
    }

    pub fn constant_direction(&self) -> Option<Vec3> {
        self.magnet.constant_direction()
    }

    /// Checks `|B| > 0` on the corners and centre of the domain.
    pub fn validate(&self) -> Result<()> {
        let d = &self.domain;
        for mask in 0..9u8 {
            let x: Vec3 = if mask == 8 {
                std::array::from_fn(|i| 0.5 * (d.lo[i] + d.hi[i]))
            } else {
                std::array::from_fn(|i| if mask >> i & 1 == 1 { d.hi[i] } else { d.lo[i] })
            };
            if !(field_strength(self, &x) > 0.0) {
                return Err(Error::VanishingField { point: x });
            }
        }
        Ok(())
    }
}

impl FieldModel for FieldSpec {
    fn vector_potential<T: Real>(&self, x: &[T; 3]) -> [T; 3] {
        let z = T::zero();
        match self.magnet {
            Magnet::None => [z; 3],
            Magnet::Uniform { b0 } => [z, x[2] * (-0.5 * b0), x[1] * (0.5 * b0)],
            Magnet::Graded { b0, alpha } => [z, z, (x[1] + x[1] * x[1] * (0.5 * alpha)) * b0],
            Magnet::ScrewPinch { b0, pitch } => {
                let c = b0 * pitch;
                [
                    (x[1] * x[1] + x[2] * x[2]) * (-0.5 * c),
                    x[2] * (-0.5 * b0),
                    x[1] * (0.5 * b0),
                ]
            }
        }
    }

    fn phi0<T: Real>(&self, x: &[T; 3]) -> T {
        self.phi0.eval(x)
    }

    fn phi1<T: Real>(&self, u: &[T; 3]) -> T {
        self.phi1.eval(u)
    }

    fn domain(&self) -> &Domain {
        &self.domain
    }

    fn magnetic_field<T: Real>(&self, x: &[T; 3]) -> [T; 3] {
        let z = T::zero();
        match self.magnet {
            Magnet::None => [z; 3],
            Magnet::Uniform { b0 } => [T::cst(b0), z, z],
            Magnet::Graded { b0, alpha } => [(x[1] * alpha + 1.0) * b0, z, z],
            Magnet::ScrewPinch { b0, pitch } => {
                let c = b0 * pitch;
                [T::cst(b0), x[2] * (-c), x[1] * c]
            }
        }
    }

    fn potential_jacobian(&self, x: &Vec3) -> Mat3 {
        match self.magnet {
            Magnet::None => [[0.0; 3]; 3],
            Magnet::Uniform { b0 } => [[0.0; 3], [0.0, 0.0, -0.5 * b0], [0.0, 0.5 * b0, 0.0]],
            Magnet::Graded { b0, alpha } => {
                [[0.0; 3], [0.0; 3], [0.0, b0 * (1.0 + alpha * x[1]), 0.0]]
            }
            Magnet::ScrewPinch { b0, pitch } => {
                let c = b0 * pitch;
                [
                    [0.0, -c * x[1], -c * x[2]],
                    [0.0, 0.0, -0.5 * b0],
                    [0.0, 0.5 * b0, 0.0],
                ]
            }
        }
    }

    fn grad_phi0(&self, x: &Vec3) -> Vec3 {
        self.phi0.gradient(x)
    }

    fn grad_phi1(&self, u: &Vec3) -> Vec3 {
        self.phi1.gradient(u)
    }

    fn max_field_strength(&self) -> f64 {
        let d = &self.domain;
        match self.magnet {
            Magnet::None => 0.0,
            Magnet::Uniform { b0 } => b0.abs(),
            Magnet::Graded { b0, alpha } => {
                (b0 * (1.0 + alpha * d.lo[1])).abs().max((b0 * (1.0 + alpha * d.hi[1])).abs())
            }
            Magnet::ScrewPinch { b0, pitch } => {
                let r2 = d.lo[1].abs().max(d.hi[1].abs()).powi(2)
                    + d.lo[2].abs().max(d.hi[2].abs()).powi(2);
                b0.abs() * (1.0 + pitch * pitch * r2).sqrt()
            }
        }
    }
}

/// Unit vector along `B`.
pub fn unit_field<F: FieldModel, T: Real>(model: &F, x: &[T; 3]) -> [T; 3] {
    let b = model.magnetic_field(x);
    let n = norm(&b);
    b.map(|c| c / n)
}

/// `|B|` and its spatial gradient at a plain point.
pub fn field_strength_gradient<F: FieldModel>(model: &F, x: &Vec3) -> (f64, Vec3) {
    gradient(|z| field_strength(model, z), x)
}

/// Lifts an `f64` point to a generic scalar type.
pub fn lift3<T: Real>(x: &Vec3) -> [T; 3] {
    lift(x)
}
