//! First-order Lie transform removing the gyrophase from the Darboux-chart
//! Hamiltonian.

use std::f64::consts::PI;
use std::io::{self, Write};

use serde::{Deserialize, Serialize};

use crate::ad::{gradient, jacobian, Dual, Real};
use crate::darboux::{DarbouxHamiltonian, DarbouxMap, SeriesCoefficients};
use crate::error::{Error, Result};
use crate::fields::FieldModel;
use crate::linalg::{congruence, matvec, State};
use crate::poisson::{transform_hamiltonian, CoordinateMap, MapKind, PhaseFunction, PoissonMatrixFn, TransformedHamiltonian};
use crate::quadrature::periodic_nodes;

/// Nodes of the trapezoid rule used by [`gyro_average`].
pub const GYRO_NODES: usize = 64;

/// Smallest admissible `|dH_bar_0 / dk|`.
pub const GYROFREQUENCY_THRESHOLD: f64 = 1e-10;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LieState {
    pub z: [f64; 3],
    pub w_par: f64,
    pub j: f64,
    pub gamma: f64,
}

impl LieState {
    pub fn to_array(&self) -> State {
        [self.z[0], self.z[1], self.z[2], self.w_par, self.j, self.gamma]
    }

    pub fn from_array(r: &State) -> Self {
        LieState {
            z: [r[0], r[1], r[2]],
            w_par: r[3],
            j: r[4],
            gamma: r[5],
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LieConfig {
    /// Angular nodes used to average `H_bar_1` and build the generator.
    pub nodes: usize,
    /// RK4 steps of the flow over `s` in `[0, epsilon]`.
    pub flow_steps: usize,
    /// Newton steps when pulling a Darboux point back to the cylindrical chart.
    pub newton_steps: usize,
}

impl Default for LieConfig {
    fn default() -> Self {
        LieConfig {
            nodes: 32,
            flow_steps: 16,
            newton_steps: 3,
        }
    }
}

fn with_angle<T: Real>(w: &[T; 6], theta: f64) -> [T; 6] {
    [w[0], w[1], w[2], w[3], w[4], T::cst(theta)]
}

/// Mean over the last coordinate, trapezoid rule on `m` nodes.
pub fn gyro_average_generic<P: PhaseFunction, T: Real>(f: &P, w: &[T; 6], m: usize) -> T {
    let mut s = T::zero();
    for th in periodic_nodes(m) {
        s += f.eval(&with_angle(w, th));
    }
    s / m as f64
}

/// `(1 / 2 pi) int f d theta` at the point, on [`GYRO_NODES`] nodes.
pub fn gyro_average<P: PhaseFunction>(f: &P, w: &State) -> f64 {
    gyro_average_generic(f, w, GYRO_NODES)
}

/// Max over probes of `sup_theta |f - <f>|`, sampled on `m` angles.
pub fn theta_residual<P: PhaseFunction>(f: &P, probes: &[State], m: usize) -> f64 {
    let mut worst = 0.0f64;
    for w in probes {
        let vals: Vec<f64> = periodic_nodes(m).map(|th| f.value(&with_angle(w, th))).collect();
        let mean = vals.iter().sum::<f64>() / m as f64;
        for v in vals {
            worst = worst.max((v - mean).abs());
        }
    }
    worst
}

/// Poisson matrix of the Darboux chart in block form: the upper-left 4x4
/// block is `J P~ J^T` at the pulled-back point, the `(k, theta)` pair is
/// `1/epsilon`, and every other entry of the last two rows and columns is 0.
pub struct BlockPoisson<'m, 'a, F> {
    pub map: &'m DarbouxMap<'a, F>,
    pub newton_steps: usize,
}

impl<F: FieldModel> BlockPoisson<'_, '_, F> {
    /// Cylindrical point of a Darboux point: series inverse refined by Newton.
    pub fn cylindrical_point<T: Real>(&self, w: &[T; 6]) -> [T; 6] {
        self.map.refined_inverse(w, self.newton_steps)
    }

    /// The full Darboux-chart matrix before block projection.
    pub fn full_matrix<T: Real>(&self, w: &[T; 6]) -> [[T; 6]; 6] {
        let c = self.cylindrical_point(w);
        let (_, j) = jacobian(|z| self.map.forward(z), &c);
        congruence(&j, &self.map.coeffs.field.poisson.eval(&c))
    }
}

impl<F: FieldModel> PoissonMatrixFn for BlockPoisson<'_, '_, F> {
    fn eval<T: Real>(&self, w: &[T; 6]) -> [[T; 6]; 6] {
        let full = self.full_matrix(w);
        let mut m = [[T::zero(); 6]; 6];
        for i in 0..4 {
            for j in 0..4 {
                m[i][j] = full[i][j];
            }
        }
        let inv = 1.0 / self.map.epsilon();
        m[4][5] = T::cst(inv);
        m[5][4] = T::cst(-inv);
        m
    }
}

/// First-order generator `G = epsilon g0`, where `g0` is the zero-mean
/// angular antiderivative of `(H_bar_1 - <H_bar_1>) / (dH_bar_0 / dk)`.
pub struct Generator<'h, C, F> {
    pub hamiltonian: &'h DarbouxHamiltonian<'h, C, F>,
    pub nodes: usize,
    /// Multiplies `g0`; zero gives the identity flow.
    pub weight: f64,
}

/// Builds the first-order generator; `<H_bar_1>` is the corrected Hamiltonian
/// term, available through [`Generator::mean_h1`].
pub fn solve_homological_first_order<'h, C: SeriesCoefficients, F: FieldModel>(
    hamiltonian: &'h DarbouxHamiltonian<'h, C, F>,
    config: &LieConfig,
) -> Result<Generator<'h, C, F>> {
    if hamiltonian.order < 1 {
        return Err(Error::UnsupportedOrder(hamiltonian.order));
    }
    if config.nodes < 4 {
        return Err(Error::InvalidArgument("at least 4 angular nodes are required".into()));
    }
    Ok(Generator {
        hamiltonian,
        nodes: config.nodes,
        weight: hamiltonian.scaling.epsilon(),
    })
}

impl<C: SeriesCoefficients, F: FieldModel> Generator<'_, C, F> {
    /// `dH_bar_0 / dk`
    pub fn gyrofrequency<T: Real>(&self, w: &[T; 6]) -> T {
        let mut z: [Dual<T>; 6] = w.map(Dual::constant);
        z[4].eps = T::one();
        self.hamiltonian.coefficient(0, &z).eps
    }

    /// Fails when `|dH_bar_0 / dk|` is below [`GYROFREQUENCY_THRESHOLD`].
    pub fn check(&self, w: &State) -> Result<()> {
        let value = self.gyrofrequency(w).abs();
        if !(value >= GYROFREQUENCY_THRESHOLD) {
            return Err(Error::DegenerateGyrofrequency { value });
        }
        Ok(())
    }

    /// `<H_bar_1>` at the point.
    pub fn mean_h1<T: Real>(&self, w: &[T; 6]) -> T {
        let mut s = T::zero();
        for th in periodic_nodes(self.nodes) {
            s += self.hamiltonian.coefficient(1, &with_angle(w, th));
        }
        s / self.nodes as f64
    }

    pub fn g0<T: Real>(&self, w: &[T; 6]) -> T {
        let m = self.nodes;
        let vals: Vec<T> = periodic_nodes(m)
            .map(|th| self.hamiltonian.coefficient(1, &with_angle(w, th)))
            .collect();
        let theta = w[5];
        let mut g = T::zero();
        for q in 1..m.div_ceil(2) {
            let (mut a, mut b) = (T::zero(), T::zero());
            for (j, v) in vals.iter().enumerate() {
                let ang = 2.0 * PI * (q * j) as f64 / m as f64;
                a += *v * ang.cos();
                b += *v * ang.sin();
            }
            let qt = theta * q as f64;
            g += (a * qt.sin() - b * qt.cos()) * (2.0 / (m as f64 * q as f64));
        }
        g / self.gyrofrequency(w)
    }
}

impl<C: SeriesCoefficients, F: FieldModel> PhaseFunction for Generator<'_, C, F> {
    fn eval<T: Real>(&self, w: &[T; 6]) -> T {
        if self.weight == 0.0 {
            return T::zero();
        }
        self.g0(w) * self.weight
    }
}

/// `H_bar_0 + epsilon <H_bar_1>`, the gyrophase-free part of the transformed
/// Hamiltonian.
pub struct AveragedHamiltonian<'g, 'h, C, F> {
    pub generator: &'g Generator<'h, C, F>,
}

impl<C: SeriesCoefficients, F: FieldModel> PhaseFunction for AveragedHamiltonian<'_, '_, C, F> {
    fn eval<T: Real>(&self, w: &[T; 6]) -> T {
        let h = self.generator.hamiltonian;
        h.coefficient(0, w) + self.generator.mean_h1(w) * h.scaling.epsilon()
    }
}

/// Time-`epsilon` flow of `P grad G`, integrated by RK4.
pub struct LieFlow<'g, 'p, G, P> {
    pub generator: &'g G,
    pub poisson: &'p P,
    pub epsilon: f64,
    pub steps: usize,
}

pub fn lie_flow<'g, 'p, G: PhaseFunction, P: PoissonMatrixFn>(
    generator: &'g G,
    poisson: &'p P,
    epsilon: f64,
    config: &LieConfig,
) -> LieFlow<'g, 'p, G, P> {
    LieFlow {
        generator,
        poisson,
        epsilon,
        steps: config.flow_steps.max(1),
    }
}

impl<G: PhaseFunction, P: PoissonMatrixFn> LieFlow<'_, '_, G, P> {
    fn field<T: Real>(&self, w: &[T; 6]) -> [T; 6] {
        let (_, g) = gradient(|z| self.generator.eval(z), w);
        matvec(&self.poisson.eval(w), &g)
    }

    fn integrate<T: Real>(&self, w: &[T; 6], sign: f64) -> [T; 6] {
        let h = T::cst(sign * self.epsilon / self.steps as f64);
        let mut y = *w;
        for _ in 0..self.steps {
            let k1 = self.field(&y);
            let k2 = self.field(&std::array::from_fn(|i| y[i] + k1[i] * h * 0.5));
            let k3 = self.field(&std::array::from_fn(|i| y[i] + k2[i] * h * 0.5));
            let k4 = self.field(&std::array::from_fn(|i| y[i] + k3[i] * h));
            y = std::array::from_fn(|i| y[i] + (k1[i] + (k2[i] + k3[i]) * 2.0 + k4[i]) * h / 6.0);
        }
        y
    }
}

impl<G: PhaseFunction, P: PoissonMatrixFn> CoordinateMap for LieFlow<'_, '_, G, P> {
    fn forward<T: Real>(&self, w: &[T; 6]) -> [T; 6] {
        self.integrate(w, 1.0)
    }

    fn inverse<T: Real>(&self, w: &[T; 6]) -> [T; 6] {
        self.integrate(w, -1.0)
    }

    fn kind(&self) -> MapKind {
        MapKind::Series { order: 1 }
    }

    fn check_forward(&self, w: &State) -> Result<()> {
        if !(w[4] > 0.0) || w.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidState(format!("not a valid chart point: {w:?}")));
        }
        Ok(())
    }

    fn check_inverse(&self, w: &State) -> Result<()> {
        self.check_forward(w)
    }
}

/// `H_hat = H_bar o zeta^-1`.
pub fn hamiltonian_lie<'a, H: PhaseFunction, Z: CoordinateMap>(
    hbar: &'a H,
    flow: &'a Z,
) -> TransformedHamiltonian<'a, H, Z> {
    transform_hamiltonian(hbar, flow)
}

/// One row of the angular-residual sweep.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct ResidualRow {
    pub epsilon: f64,
    /// Angular residual of `H_bar` before the transform.
    pub pre: f64,
    /// Angular residual of `H_hat` after the transform.
    pub post: f64,
    /// `log2(post_prev / post)`; absent on the first row.
    pub order: Option<f64>,
}

/// Fills in measured orders assuming successive rows halve epsilon.
pub fn measured_orders(rows: &mut [ResidualRow]) {
    for i in 1..rows.len() {
        let r = (rows[i - 1].post / rows[i].post).ln() / (rows[i - 1].epsilon / rows[i].epsilon).ln();
        rows[i].order = Some(r);
    }
}

pub fn write_residual_csv<W: Write>(rows: &[ResidualRow], mut w: W) -> io::Result<()> {
    writeln!(w, "epsilon,pre_residual,post_residual,measured_order")?;
    for r in rows {
        let order = r.order.map_or(String::new(), |o| format!("{o:.16e}"));
        writeln!(w, "{:.16e},{:.16e},{:.16e},{order}", r.epsilon, r.pre, r.post)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cylindrical::PerpFrame;
    use crate::darboux::{darboux_map, hamiltonian_darboux, DarbouxConfig};
    use crate::fields::{Domain, FieldSpec, Magnet, ScalingParams};

    struct Trig(f64, f64);
    impl PhaseFunction for Trig {
        fn eval<T: Real>(&self, w: &[T; 6]) -> T {
            let s = w[5].sin();
            s * s * self.1 + self.0 + w[0]
        }
    }

    struct Cos;
    impl PhaseFunction for Cos {
        fn eval<T: Real>(&self, w: &[T; 6]) -> T {
            w[5].cos()
        }
    }

    #[test]
    fn averages() {
        let w = [0.5, 0.0, 0.0, 0.0, 1.0, 0.3];
        assert!(gyro_average(&Cos, &w).abs() < 1e-14);
        assert!((gyro_average(&Trig(2.0, 3.0), &w) - 4.0).abs() < 1e-12);
        assert!(theta_residual(&Cos, &[w], 64) > 0.99);
    }

    #[test]
    fn uniform_field_generator_vanishes() {
        let f = FieldSpec::new(Magnet::Uniform { b0: 1.5 }, Domain::cube(2.0));
        let s = ScalingParams::new(0.01, 0.5).unwrap();
        let m = darboux_map(&f, &s, PerpFrame::default(), DarbouxConfig::default()).unwrap();
        let h = hamiltonian_darboux(&f, &s, &m, 1).unwrap();
        let g = solve_homological_first_order(&h, &LieConfig::default()).unwrap();
        let w = [0.1, 0.2, 0.3, 0.4, 0.8, 1.0];
        assert!(g.g0(&w).abs() < 1e-12);
        assert!((g.gyrofrequency(&w) - 1.5).abs() < 1e-12);
    }

    #[test]
    fn graded_field_generator_matches_closed_form() {
        let (b0, alpha, eps) = (1.0, 0.4, 0.01);
        let f = FieldSpec::new(Magnet::Graded { b0, alpha }, Domain::cube(1.0));
        let s = ScalingParams::new(eps, 0.5).unwrap();
        let m = darboux_map(&f, &s, PerpFrame::default(), DarbouxConfig::default()).unwrap();
        let h = hamiltonian_darboux(&f, &s, &m, 1).unwrap();
        let g = solve_homological_first_order(&h, &LieConfig::default()).unwrap();
        let w = [0.1, 0.3, -0.2, 0.5, 0.6, 0.9];
        let b = b0 * (1.0 + alpha * w[1]);
        let vp = (2.0 * b * w[4] + 1e-8f64).sqrt();
        let h1 = -alpha * b0 * vp.powi(3) * w[5].sin() / (3.0 * b * b);
        assert!((h.coefficient(1, &w) - h1).abs() < 1e-10);
        let g0 = alpha * b0 * vp.powi(3) * w[5].cos() / (3.0 * b.powi(3));
        assert!((g.g0(&w) - g0).abs() < 1e-10);
        assert!(g.mean_h1(&w).abs() < 1e-12);
    }
}
