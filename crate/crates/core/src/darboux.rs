//! Darboux chart `(y, u_par, k, theta)` built from the cylindrical chart by
//! the method of characteristics.

use std::io::{self, Write};

use serde::{Deserialize, Serialize};

use crate::ad::{directional, gradient, hessian, jacobian, Dual, Real};
use crate::cylindrical::{cyl_inverse, hamiltonian_cyl, poisson_matrix_cyl, CylPoisson, PerpFrame, V_PERP_THRESHOLD};
use crate::error::{Error, Result};
use crate::fields::{field_strength, unit_field, FieldModel, ScalingParams};
use crate::linalg::{congruence, cross, dot, solve, State};
use crate::poisson::{CoordinateMap, MapKind, PhaseFunction, PoissonMatrixFn};
use crate::quadrature::GaussLegendre;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DarbouxState {
    pub y: [f64; 3],
    pub u_par: f64,
    pub k: f64,
    pub theta: f64,
}

impl DarbouxState {
    pub fn to_array(&self) -> State {
        [self.y[0], self.y[1], self.y[2], self.u_par, self.k, self.theta]
    }

    pub fn from_array(w: &State) -> Self {
        DarbouxState {
            y: [w[0], w[1], w[2]],
            u_par: w[3],
            k: w[4],
            theta: w[5],
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DarbouxConfig {
    /// Level of `v_perp` where `k` vanishes.
    pub nu: f64,
    /// Series truncation order, at most 2.
    pub order: usize,
    /// Gauss–Legendre nodes for the numeric `k`.
    pub nodes: usize,
    /// Largest RK4 step in `v_perp` along a numeric characteristic.
    pub max_step: f64,
}

impl Default for DarbouxConfig {
    fn default() -> Self {
        DarbouxConfig {
            nu: 1e-4,
            order: 1,
            nodes: 32,
            max_step: 0.05,
        }
    }
}

impl DarbouxConfig {
    pub fn validate(&self) -> Result<()> {
        if self.order > 2 {
            return Err(Error::UnsupportedOrder(self.order));
        }
        if !(self.nu > 0.0 && self.nu.is_finite()) {
            return Err(Error::InvalidArgument(format!("nu must be positive, got {}", self.nu)));
        }
        if self.nodes == 0 || !(self.max_step > 0.0) {
            return Err(Error::InvalidArgument("quadrature nodes and step must be positive".into()));
        }
        Ok(())
    }
}

/// Coefficients of the `k` equation read off row 6 of the cylindrical
/// Poisson matrix: `F_j = -P~[6][j]` for `j <= 4` and `omega = P~[5][6]`.
pub struct CharacteristicField<'a, F> {
    pub poisson: CylPoisson<'a, F>,
}

pub fn extract_characteristic_field<F: FieldModel>(poisson: CylPoisson<'_, F>) -> CharacteristicField<'_, F> {
    CharacteristicField { poisson }
}

impl<'a, F: FieldModel> CharacteristicField<'a, F> {
    pub fn new(model: &'a F, scaling: &ScalingParams, frame: PerpFrame) -> Self {
        CharacteristicField {
            poisson: poisson_matrix_cyl(model, scaling, frame),
        }
    }

    pub fn model(&self) -> &'a F {
        self.poisson.map.model
    }

    pub fn scaling(&self) -> ScalingParams {
        self.poisson.usual.scaling
    }

    pub fn frame(&self) -> PerpFrame {
        self.poisson.map.frame
    }

    /// `(F1, F2, F3, F_par)` and `omega` at a cylindrical point.
    pub fn coefficients<T: Real>(&self, c: &[T; 6]) -> ([T; 4], T) {
        let p = self.poisson.eval(c);
        ([-p[5][0], -p[5][1], -p[5][2], -p[5][3]], p[4][5])
    }

    /// Checked version of [`CharacteristicField::coefficients`].
    pub fn extract(&self, c: &State) -> Result<([f64; 4], f64)> {
        let p = self.poisson.try_matrix(c)?;
        let omega = p[4][5];
        if !(omega > 0.0) {
            return Err(Error::NonPositiveOmega { omega });
        }
        Ok(([-p[5][0], -p[5][1], -p[5][2], -p[5][3]], omega))
    }

    /// `(s / |B(x)|) F(x, v_par, s, theta)`, the characteristic velocity per unit epsilon.
    pub fn scaled<T: Real>(&self, z: &[T; 4], s: T, theta: T) -> [T; 4] {
        let c = [z[0], z[1], z[2], z[3], s, theta];
        let (f, _) = self.coefficients(&c);
        let w = s / field_strength(self.model(), &[z[0], z[1], z[2]]);
        f.map(|fi| fi * w)
    }
}

/// Integrates `dZ/ds = epsilon (s/|B|) F(Z, s, theta)` with `Z(v_perp) = (x, v_par)`
/// from the anchor to each requested `s`. Results follow the order of `targets`.
pub fn solve_characteristics_numeric<F: FieldModel>(
    cf: &CharacteristicField<'_, F>,
    anchor: &State,
    targets: &[f64],
    max_step: f64,
) -> Result<Vec<[f64; 4]>> {
    let eps = cf.scaling().epsilon();
    let theta = anchor[5];
    let domain = cf.model().domain();
    let z0 = [anchor[0], anchor[1], anchor[2], anchor[3]];
    let rate = |z: &[f64; 4], s: f64| -> Result<[f64; 4]> {
        let x = [z[0], z[1], z[2]];
        domain.check(&x)?;
        let (f, _) = cf.extract(&[z[0], z[1], z[2], z[3], s, theta])?;
        let w = eps * s / field_strength(cf.model(), &x);
        Ok(f.map(|fi| fi * w))
    };
    let exit = |s: f64| {
        move |e: Error| match e {
            Error::OutOfDomain { point } => Error::DomainExit { time: s, point },
            other => other,
        }
    };
    let mut out = vec![[0.0; 4]; targets.len()];
    let mut order: Vec<usize> = (0..targets.len()).collect();
    order.sort_by(|&a, &b| (targets[a] - anchor[4]).abs().total_cmp(&(targets[b] - anchor[4]).abs()));
    for side in [-1.0, 1.0] {
        let (mut z, mut s) = (z0, anchor[4]);
        for &i in order.iter().filter(|&&i| (targets[i] - anchor[4]) * side >= 0.0) {
            let span = targets[i] - s;
            let n = (span.abs() / max_step).ceil().max(1.0) as usize;
            let h = span / n as f64;
            for _ in 0..n {
                let k1 = rate(&z, s).map_err(exit(s))?;
                let k2 = rate(&std::array::from_fn(|j| z[j] + 0.5 * h * k1[j]), s + 0.5 * h).map_err(exit(s))?;
                let k3 = rate(&std::array::from_fn(|j| z[j] + 0.5 * h * k2[j]), s + 0.5 * h).map_err(exit(s))?;
                let k4 = rate(&std::array::from_fn(|j| z[j] + h * k3[j]), s + h).map_err(exit(s))?;
                z = std::array::from_fn(|j| z[j] + h / 6.0 * (k1[j] + 2.0 * (k2[j] + k3[j]) + k4[j]));
                s += h;
            }
            s = targets[i];
            out[i] = z;
        }
    }
    Ok(out)
}

fn check_boundary(c: &State, nu: f64) -> Result<()> {
    if c[4] < nu {
        return Err(Error::BelowBoundary { v_perp: c[4], nu });
    }
    Ok(())
}

/// `k = int_nu^v_perp s / |B(X(s))| ds` along the numeric characteristic.
pub fn k_numeric<F: FieldModel>(cf: &CharacteristicField<'_, F>, c: &State, config: &DarbouxConfig) -> Result<f64> {
    config.validate()?;
    check_boundary(c, config.nu)?;
    if c[4] == config.nu {
        return Ok(0.0);
    }
    let nodes = GaussLegendre::new(config.nodes).mapped(config.nu, c[4]);
    let s: Vec<f64> = nodes.iter().map(|&(s, _)| s).collect();
    let z = solve_characteristics_numeric(cf, c, &s, config.max_step)?;
    let mut k = 0.0;
    for (&(si, wi), zi) in nodes.iter().zip(&z) {
        k += wi * si / field_strength(cf.model(), &[zi[0], zi[1], zi[2]]);
    }
    Ok(k)
}

/// Lie-series coefficients of the characteristic through `c`, frozen at the
/// anchor: `X1 = F`, `X2 = (1/2) (DF) F` where `F` is the scaled field.
pub fn characteristic_series<F: FieldModel, T: Real>(
    cf: &CharacteristicField<'_, F>,
    c: &[T; 6],
    order: usize,
) -> Result<Vec<[T; 4]>> {
    if order > 2 {
        return Err(Error::UnsupportedOrder(order));
    }
    Ok(series_terms(cf, c, order))
}

fn series_terms<F: FieldModel, T: Real>(cf: &CharacteristicField<'_, F>, c: &[T; 6], order: usize) -> Vec<[T; 4]> {
    let z = [c[0], c[1], c[2], c[3]];
    let mut out = Vec::with_capacity(order);
    if order == 0 {
        return out;
    }
    let x1 = cf.scaled(&z, c[4], c[5]);
    out.push(x1);
    if order >= 2 {
        let mut zd: [Dual<T>; 4] = z.map(Dual::constant);
        for i in 0..4 {
            zd[i].eps = x1[i];
        }
        let fd = cf.scaled(&zd, Dual::constant(c[4]), Dual::constant(c[5]));
        out.push(fd.map(|f| f.eps * 0.5));
    }
    out
}

/// Coefficients `[k0, k1, k2]` of `k = k0 + epsilon k1 + epsilon^2 k2`;
/// entries above `order` are zero.
pub fn k_series_terms<F: FieldModel, T: Real>(
    cf: &CharacteristicField<'_, F>,
    c: &[T; 6],
    nu: f64,
    order: usize,
) -> [T; 3] {
    let model = cf.model();
    let x = [c[0], c[1], c[2]];
    let v = c[4];
    fn inv_b<F: FieldModel, S: Real>(model: &F, y: &[S; 3]) -> S {
        field_strength(model, y).recip()
    }
    let mut t = [T::zero(); 3];
    t[0] = (v * v - nu * nu) * inv_b(model, &x) * 0.5;
    if order == 0 {
        return t;
    }
    let terms = series_terms(cf, c, order);
    let x1 = terms[0];
    let (_, g1) = gradient(|y: &[Dual<T>; 3]| inv_b(model, y), &x);
    // int_nu^v s (s - v) ds and int_nu^v s (s - v)^2 ds
    let i1 = -(v * v * v) / 6.0 - nu * nu * nu / 3.0 + v * (nu * nu * 0.5);
    t[1] = (g1[0] * x1[0] + g1[1] * x1[1] + g1[2] * x1[2]) * i1;
    if order >= 2 {
        let x2 = terms[1];
        let (_, _, h) = hessian(|y: &[Dual<Dual<T>>; 3]| inv_b(model, y), &x);
        let mut quad = T::zero();
        for a in 0..3 {
            for b in 0..3 {
                quad += x1[a] * h[a][b] * x1[b];
            }
        }
        let i2 = v * v * v * v / 12.0 - (v * v * (nu * nu * 0.5) - v * (2.0 * nu.powi(3) / 3.0) + nu.powi(4) / 4.0);
        t[2] = (g1[0] * x2[0] + g1[1] * x2[1] + g1[2] * x2[2] + quad * 0.5) * i2;
    }
    t
}

/// Truncated series value of `k`.
pub fn k_series<F: FieldModel>(cf: &CharacteristicField<'_, F>, c: &State, config: &DarbouxConfig) -> Result<f64> {
    config.validate()?;
    check_boundary(c, config.nu)?;
    let eps = cf.scaling().epsilon();
    let t = k_series_terms(cf, c, config.nu, config.order);
    Ok(t[0] + eps * t[1] + eps * eps * t[2])
}

/// Coefficient maps of a near-identity series `Upsilon = sum_n epsilon^n Upsilon_n`.
pub trait SeriesCoefficients: Sync {
    fn order(&self) -> usize;

    fn epsilon(&self) -> f64;

    /// `Upsilon_n`; zero for `n > order`.
    fn coefficient<T: Real>(&self, n: usize, r: &[T; 6]) -> [T; 6];

    /// Exact inverse of `Upsilon_0`.
    fn leading_inverse<T: Real>(&self, r: &[T; 6]) -> [T; 6];

    fn check_forward(&self, _r: &State) -> Result<()> {
        Ok(())
    }

    fn check_inverse(&self, _r: &State) -> Result<()> {
        Ok(())
    }
}

/// Truncated series map; the inverse is the truncated series `xi`.
pub struct SeriesMap<C> {
    pub coeffs: C,
}

impl<C: SeriesCoefficients> SeriesMap<C> {
    pub fn order(&self) -> usize {
        self.coeffs.order()
    }

    pub fn epsilon(&self) -> f64 {
        self.coeffs.epsilon()
    }

    /// Series inverse refined by a fixed number of Newton steps; valid for
    /// any scalar type, so it can be differentiated.
    pub fn refined_inverse<T: Real>(&self, w: &[T; 6], steps: usize) -> [T; 6] {
        let mut c = self.inverse(w);
        for _ in 0..steps {
            let (f, j) = jacobian(|z| self.forward(z), &c);
            let r: [T; 6] = std::array::from_fn(|i| f[i] - w[i]);
            match solve(&j, &r) {
                Some(d) => c = std::array::from_fn(|i| c[i] - d[i]),
                None => break,
            }
        }
        c
    }

    /// Solves `Upsilon(c) = w` by Newton iteration from the series inverse.
    pub fn newton_inverse(&self, w: &State, tolerance: f64) -> Result<State> {
        self.check_inverse(w)?;
        let mut c = self.inverse(w);
        let mut res = f64::INFINITY;
        for _ in 0..30 {
            let (f, j) = jacobian(|z| self.forward(z), &c);
            let r: State = std::array::from_fn(|i| f[i] - w[i]);
            res = r.iter().fold(0.0f64, |m, v| m.max(v.abs()));
            if res <= tolerance {
                return Ok(c);
            }
            let d = solve(&j, &r).ok_or(Error::SingularJacobian { point: c.to_vec() })?;
            c = std::array::from_fn(|i| c[i] - d[i]);
        }
        if res <= tolerance {
            Ok(c)
        } else {
            Err(Error::InversionFailed { residual: res })
        }
    }
}

fn series_sum<T: Real>(eps: f64, order: usize, term: impl Fn(usize) -> [T; 6]) -> [T; 6] {
    let mut acc = term(0);
    let mut p = 1.0;
    for n in 1..=order {
        p *= eps;
        let t = term(n);
        for i in 0..6 {
            acc[i] += t[i] * p;
        }
    }
    acc
}

impl<C: SeriesCoefficients> CoordinateMap for SeriesMap<C> {
    fn forward<T: Real>(&self, r: &[T; 6]) -> [T; 6] {
        series_sum(self.epsilon(), self.order(), |n| self.coeffs.coefficient(n, r))
    }

    fn inverse<T: Real>(&self, r: &[T; 6]) -> [T; 6] {
        let inv = InverseCoefficients { inner: &self.coeffs };
        series_sum(self.epsilon(), self.order(), |n| inv.coefficient(n, r))
    }

    fn kind(&self) -> MapKind {
        MapKind::Series { order: self.order() }
    }

    fn check_forward(&self, r: &State) -> Result<()> {
        self.coeffs.check_forward(r)
    }

    fn check_inverse(&self, r: &State) -> Result<()> {
        self.coeffs.check_inverse(r)?;
        let c0 = self.coeffs.leading_inverse(r);
        let (_, j) = jacobian(|z| self.coeffs.coefficient(0, z), &c0);
        if solve(&j, &[1.0; 6]).is_none() {
            return Err(Error::SingularJacobian { point: c0.to_vec() });
        }
        Ok(())
    }
}

/// Coefficients `xi_n` of the inverse series:
/// `xi_1 = -(D Upsilon_0)^-1 Upsilon_1(xi_0)`,
/// `xi_2 = -(D Upsilon_0)^-1 [Upsilon_2(xi_0) + D Upsilon_1 xi_1 + D^2 Upsilon_0 [xi_1, xi_1] / 2]`.
pub struct InverseCoefficients<'a, C> {
    pub inner: &'a C,
}

pub fn invert_series<C: SeriesCoefficients>(m: &SeriesMap<C>) -> SeriesMap<InverseCoefficients<'_, C>> {
    SeriesMap {
        coeffs: InverseCoefficients { inner: &m.coeffs },
    }
}

impl<C: SeriesCoefficients> InverseCoefficients<'_, C> {
    fn leading_jacobian<T: Real>(&self, c0: &[T; 6]) -> [[T; 6]; 6] {
        jacobian(|z| self.inner.coefficient(0, z), c0).1
    }

    /// `(xi_0, xi_1)`
    pub fn first_two<T: Real>(&self, w: &[T; 6]) -> ([T; 6], [T; 6]) {
        let c0 = self.inner.leading_inverse(w);
        if self.inner.order() == 0 {
            return (c0, [T::zero(); 6]);
        }
        let j = self.leading_jacobian(&c0);
        let u1 = self.inner.coefficient(1, &c0);
        let x1 = solve(&j, &u1).map_or([T::cst(f64::NAN); 6], |s| s.map(|v| -v));
        (c0, x1)
    }
}

impl<C: SeriesCoefficients> SeriesCoefficients for InverseCoefficients<'_, C> {
    fn order(&self) -> usize {
        self.inner.order()
    }

    fn epsilon(&self) -> f64 {
        self.inner.epsilon()
    }

    fn coefficient<T: Real>(&self, n: usize, w: &[T; 6]) -> [T; 6] {
        match n {
            0 => self.inner.leading_inverse(w),
            1 if self.order() >= 1 => self.first_two(w).1,
            2 if self.order() >= 2 => {
                let (c0, x1) = self.first_two(w);
                let j = self.leading_jacobian(&c0);
                let u2 = self.inner.coefficient(2, &c0);
                let mut zd: [Dual<T>; 6] = c0.map(Dual::constant);
                for i in 0..6 {
                    zd[i].eps = x1[i];
                }
                let du1 = self.inner.coefficient(1, &zd).map(|d| d.eps);
                let mut zdd: [Dual<Dual<T>>; 6] = zd.map(Dual::constant);
                for i in 0..6 {
                    zdd[i].re.eps = x1[i];
                    zdd[i].eps.re = x1[i];
                }
                let d2u0 = self.inner.coefficient(0, &zdd).map(|d| d.eps.eps);
                let rhs: [T; 6] = std::array::from_fn(|i| u2[i] + du1[i] + d2u0[i] * 0.5);
                solve(&j, &rhs).map_or([T::cst(f64::NAN); 6], |s| s.map(|v| -v))
            }
            _ => [T::zero(); 6],
        }
    }

    fn leading_inverse<T: Real>(&self, r: &[T; 6]) -> [T; 6] {
        self.inner.coefficient(0, r)
    }

    fn check_forward(&self, r: &State) -> Result<()> {
        self.inner.check_inverse(r)
    }

    fn check_inverse(&self, r: &State) -> Result<()> {
        self.inner.check_forward(r)
    }
}

/// Series coefficients of the Darboux map for a field of constant direction:
/// `Upsilon_0 = (x, v_par, k0, theta)`, `Upsilon_1 = (v x B / |B|^2, 0, k1, 0)`,
/// `Upsilon_2 = (0, 0, 0, 0, k2, 0)`.
pub struct DarbouxCoefficients<'a, F> {
    pub field: CharacteristicField<'a, F>,
    pub config: DarbouxConfig,
}

impl<F: FieldModel> SeriesCoefficients for DarbouxCoefficients<'_, F> {
    fn order(&self) -> usize {
        self.config.order
    }

    fn epsilon(&self) -> f64 {
        self.field.scaling().epsilon()
    }

    fn coefficient<T: Real>(&self, n: usize, c: &[T; 6]) -> [T; 6] {
        if n > self.config.order {
            return [T::zero(); 6];
        }
        let k = k_series_terms(&self.field, c, self.config.nu, n);
        match n {
            0 => [c[0], c[1], c[2], c[3], k[0], c[5]],
            1 => {
                let model = self.field.model();
                let r = cyl_inverse(model, self.field.frame(), c);
                let x = [c[0], c[1], c[2]];
                let b = model.magnetic_field(&x);
                let b2 = dot(&b, &b);
                let rho = cross(&[r[3], r[4], r[5]], &b).map(|v| v / b2);
                [rho[0], rho[1], rho[2], T::zero(), k[1], T::zero()]
            }
            _ => [T::zero(), T::zero(), T::zero(), T::zero(), k[2], T::zero()],
        }
    }

    fn leading_inverse<T: Real>(&self, w: &[T; 6]) -> [T; 6] {
        let b = field_strength(self.field.model(), &[w[0], w[1], w[2]]);
        let nu = self.config.nu;
        let vp = (b * w[4] * 2.0 + nu * nu).sqrt();
        [w[0], w[1], w[2], w[3], vp, w[5]]
    }

    fn check_forward(&self, c: &State) -> Result<()> {
        self.field.model().domain().check(&[c[0], c[1], c[2]])?;
        check_boundary(c, self.config.nu)?;
        if c[4] <= V_PERP_THRESHOLD {
            return Err(Error::GyrophaseUndefined {
                v_perp: c[4],
                threshold: V_PERP_THRESHOLD,
            });
        }
        Ok(())
    }

    fn check_inverse(&self, w: &State) -> Result<()> {
        let y = [w[0], w[1], w[2]];
        self.field.model().domain().check(&y)?;
        if !(w[4] > 0.0) {
            return Err(Error::InvalidState(format!("k must be positive, got {}", w[4])));
        }
        if field_strength(self.field.model(), &y) <= 0.0 {
            return Err(Error::VanishingField { point: y });
        }
        Ok(())
    }
}

pub type DarbouxMap<'a, F> = SeriesMap<DarbouxCoefficients<'a, F>>;

/// Largest deviation of `B / |B|` from its value at the domain centre, over a
/// 5x5x5 grid.
pub fn direction_variation<F: FieldModel>(model: &F) -> f64 {
    let d = model.domain();
    let at = |t: [f64; 3]| std::array::from_fn::<f64, 3, _>(|i| d.lo[i] + t[i] * (d.hi[i] - d.lo[i]));
    let b0 = unit_field(model, &at([0.5; 3]));
    let mut worst = 0.0f64;
    for i in 0..5 {
        for j in 0..5 {
            for k in 0..5 {
                let b = unit_field(model, &at([i as f64 / 4.0, j as f64 / 4.0, k as f64 / 4.0]));
                for a in 0..3 {
                    worst = worst.max((b[a] - b0[a]).abs());
                }
            }
        }
    }
    worst
}

/// Builds the Darboux map. Only fields of constant direction are supported.
pub fn darboux_map<'a, F: FieldModel>(
    model: &'a F,
    scaling: &ScalingParams,
    frame: PerpFrame,
    config: DarbouxConfig,
) -> Result<DarbouxMap<'a, F>> {
    config.validate()?;
    let var = direction_variation(model);
    if !(var <= 1e-12) {
        return Err(Error::UnsupportedScenario {
            scenario: format!("field direction varies by {var:e}"),
            stage: "darboux".into(),
        });
    }
    Ok(SeriesMap {
        coeffs: DarbouxCoefficients {
            field: CharacteristicField::new(model, scaling, frame),
            config,
        },
    })
}

pub const COORD_LABELS: [&str; 6] = ["y1", "y2", "y3", "u", "k", "theta"];

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BracketEntry {
    pub pair: String,
    pub max_abs: f64,
}

/// Brackets of the Darboux coordinate functions on the cylindrical chart.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BracketReport {
    pub epsilon: f64,
    pub order: usize,
    pub probes: usize,
    /// Range of `epsilon {theta, k}` over the probes.
    pub theta_k_scaled: [f64; 2],
    /// `{y_i, k}` and `{y_i, theta}` for the first four coordinates.
    pub entries: Vec<BracketEntry>,
    pub max_offblock: f64,
}

impl BracketReport {
    /// Fails with the first offending pair when a bracket exceeds `tolerance`.
    pub fn require(&self, tolerance: f64) -> Result<()> {
        match self.entries.iter().find(|e| !(e.max_abs <= tolerance)) {
            Some(e) => Err(Error::BracketResidual {
                pair: e.pair.clone(),
                residual: e.max_abs,
                tolerance,
            }),
            None => Ok(()),
        }
    }
}

/// Darboux-chart Poisson matrix at a cylindrical point: `J P~ J^T`.
pub fn darboux_matrix_at<F: FieldModel>(map: &DarbouxMap<'_, F>, c: &State) -> Result<[[f64; 6]; 6]> {
    map.check_forward(c)?;
    let p = map.coeffs.field.poisson.try_matrix(c)?;
    let j = map.jacobian(c);
    Ok(congruence(&j, &p))
}

pub fn darboux_brackets<F: FieldModel>(map: &DarbouxMap<'_, F>, probes: &[State]) -> Result<BracketReport> {
    let mut worst = [[0.0f64; 2]; 4];
    let mut tk = [f64::INFINITY, f64::NEG_INFINITY];
    let eps = map.epsilon();
    for c in probes {
        let m = darboux_matrix_at(map, c)?;
        for i in 0..4 {
            worst[i][0] = worst[i][0].max(m[i][4].abs());
            worst[i][1] = worst[i][1].max(m[i][5].abs());
        }
        let v = eps * m[5][4];
        tk = [tk[0].min(v), tk[1].max(v)];
    }
    let mut entries = Vec::with_capacity(8);
    for (i, w) in worst.iter().enumerate() {
        for (j, &m) in w.iter().enumerate() {
            entries.push(BracketEntry {
                pair: format!("{{{},{}}}", COORD_LABELS[i], COORD_LABELS[4 + j]),
                max_abs: m,
            });
        }
    }
    Ok(BracketReport {
        epsilon: eps,
        order: map.order(),
        probes: probes.len(),
        theta_k_scaled: tk,
        max_offblock: entries.iter().map(|e| e.max_abs).fold(0.0, f64::max),
        entries,
    })
}

/// Writes `Upsilon_n` sampled at the given cylindrical points.
pub fn write_series_csv<C: SeriesCoefficients, W: Write>(map: &SeriesMap<C>, points: &[State], mut w: W) -> io::Result<()> {
    writeln!(w, "c1,c2,c3,c4,c5,c6,n,u1,u2,u3,u4,u5,u6")?;
    for p in points {
        for n in 0..=map.order() {
            let u = map.coeffs.coefficient(n, p);
            let cols: Vec<String> = p.iter().map(|v| format!("{v:.16e}")).collect();
            let vals: Vec<String> = u.iter().map(|v| format!("{v:.16e}")).collect();
            writeln!(w, "{},{n},{}", cols.join(","), vals.join(","))?;
        }
    }
    Ok(())
}

/// The cylindrical Hamiltonian pulled back through the Newton-refined inverse
/// of the Darboux map, with no truncation in epsilon.
pub struct PulledBackHamiltonian<'m, C, F> {
    pub map: &'m SeriesMap<C>,
    pub model: &'m F,
    pub scaling: ScalingParams,
    pub newton_steps: usize,
}

impl<C: SeriesCoefficients, F: FieldModel> PhaseFunction for PulledBackHamiltonian<'_, C, F> {
    fn eval<T: Real>(&self, w: &[T; 6]) -> T {
        hamiltonian_cyl(self.model, &self.scaling, &self.map.refined_inverse(w, self.newton_steps))
    }
}

/// `H_bar = sum_n epsilon^n H_bar_n`, the cylindrical Hamiltonian pulled back
/// through the inverse series.
pub struct DarbouxHamiltonian<'a, C, F> {
    pub map: &'a SeriesMap<C>,
    pub model: &'a F,
    pub scaling: ScalingParams,
    pub order: usize,
}

pub fn hamiltonian_darboux<'a, C: SeriesCoefficients, F: FieldModel>(
    model: &'a F,
    scaling: &ScalingParams,
    map: &'a SeriesMap<C>,
    order: usize,
) -> Result<DarbouxHamiltonian<'a, C, F>> {
    if order > 2 || order > map.order() {
        return Err(Error::UnsupportedOrder(order));
    }
    if (scaling.epsilon() - map.epsilon()).abs() > 0.0 {
        return Err(Error::InvalidArgument("map and Hamiltonian use different epsilon".into()));
    }
    Ok(DarbouxHamiltonian {
        map,
        model,
        scaling: *scaling,
        order,
    })
}

impl<C: SeriesCoefficients, F: FieldModel> DarbouxHamiltonian<'_, C, F> {
    fn h_cyl<T: Real>(&self, c: &[T; 6]) -> T {
        hamiltonian_cyl(self.model, &self.scaling, c)
    }

    /// `H_bar_n` at a Darboux point.
    pub fn coefficient<T: Real>(&self, n: usize, w: &[T; 6]) -> T {
        let inv = InverseCoefficients { inner: &self.map.coeffs };
        match n {
            0 => self.h_cyl(&inv.coefficient(0, w)),
            1 => {
                let (c0, x1) = inv.first_two(w);
                directional(|z| self.h_cyl(z), &c0, &x1).1
            }
            2 => {
                let (c0, x1) = inv.first_two(w);
                let x2 = inv.coefficient(2, w);
                let d = directional(|z| self.h_cyl(z), &c0, &x2).1;
                let mut zd: [Dual<Dual<T>>; 6] = c0.map(|v| Dual::constant(Dual::constant(v)));
                for i in 0..6 {
                    zd[i].re.eps = x1[i];
                    zd[i].eps.re = x1[i];
                }
                d + self.h_cyl(&zd).eps.eps * 0.5
            }
            _ => T::zero(),
        }
    }

    /// `dH_bar_0 / dtheta`, zero by construction.
    pub fn theta_derivative_leading(&self, w: &State) -> f64 {
        gradient(|z| self.coefficient(0, z), w).1[5]
    }
}

impl<C: SeriesCoefficients, F: FieldModel> PhaseFunction for DarbouxHamiltonian<'_, C, F> {
    fn eval<T: Real>(&self, w: &[T; 6]) -> T {
        let eps = self.scaling.epsilon();
        let mut acc = self.coefficient(0, w);
        let mut p = 1.0;
        for n in 1..=self.order {
            p *= eps;
            acc += self.coefficient(n, w) * p;
        }
        acc
    }
}
