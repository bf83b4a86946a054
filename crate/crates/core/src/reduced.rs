//! Reduced guiding-center dynamics: drift velocities, the tokamak-coordinates
//! model, the generic reduced system in the Lie chart, and full-orbit
//! comparison.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cylindrical::{to_cyl, PerpFrame};
use crate::darboux::{darboux_map, hamiltonian_darboux, DarbouxConfig};
use crate::dynamics::{gyro_period, integrate, integrate_usual, rk4_step, CoordSystem, StepGuard, UsualState};
use crate::error::{Error, Result};
use crate::fields::{eval_b, field_strength_gradient, FieldModel, ScalingParams};
use crate::lie::{lie_flow, solve_homological_first_order, AveragedHamiltonian, BlockPoisson, LieConfig};
use crate::linalg::{cross, dot, matvec, norm, State, Vec3};
use crate::poisson::{CoordinateMap, PhaseFunction, PoissonMatrixFn};
use crate::quadrature::periodic_nodes;

/// `epsilon B x E / |B|^2`
pub fn drift_ed<F: FieldModel>(model: &F, scaling: &ScalingParams, x: &Vec3, e: &Vec3) -> Vec3 {
    let b = eval_b(model, x);
    let b2 = dot(&b, &b);
    cross(&b, e).map(|c| scaling.epsilon() * c / b2)
}

/// `epsilon B x grad|B| / |B|^3 (w_par^2 + j |B| / epsilon)`
pub fn drift_mcd<F: FieldModel>(model: &F, scaling: &ScalingParams, x: &Vec3, w_par: f64, j: f64) -> Vec3 {
    let b = eval_b(model, x);
    let (bn, gb) = field_strength_gradient(model, x);
    let eps = scaling.epsilon();
    let w = eps / bn.powi(3) * (w_par * w_par + j * bn / eps);
    cross(&b, &gb).map(|c| c * w)
}

/// How the fast electric field is averaged over the gyration.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ElectricAverage {
    /// Circular mean over the Larmor circle of radius `epsilon sqrt(2 j |B|) / |B|`.
    Larmor { nodes: usize },
    /// `E1` evaluated at the guiding center.
    GuidingCenter,
}

/// `E0(x) + <E1>` at a guiding center with invariant `j`.
pub fn gyro_averaged_e<F: FieldModel>(
    model: &F,
    scaling: &ScalingParams,
    x: &Vec3,
    j: f64,
    mode: ElectricAverage,
) -> Vec3 {
    let eta = scaling.eta();
    let e0 = model.grad_phi0(x).map(|c| -c);
    let e1 = |y: &Vec3| model.grad_phi1(&y.map(|c| c / eta)).map(|c| -c);
    let avg = match mode {
        ElectricAverage::GuidingCenter => e1(x),
        ElectricAverage::Larmor { nodes } => {
            let b = norm(&eval_b(model, x));
            let rho = scaling.epsilon() * (2.0 * j * b).max(0.0).sqrt() / b;
            let (_, e1v, e2v) = PerpFrame::default().at(model, x);
            let mut acc = [0.0; 3];
            for th in periodic_nodes(nodes.max(1)) {
                let (s, c) = th.sin_cos();
                let y: Vec3 = std::array::from_fn(|i| x[i] + rho * (c * e1v[i] + s * e2v[i]));
                let e = e1(&y);
                for i in 0..3 {
                    acc[i] += e[i] / nodes.max(1) as f64;
                }
            }
            acc
        }
    };
    std::array::from_fn(|i| e0[i] + avg[i])
}

/// Safety factor profile.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum QProfile {
    Constant { q: f64 },
    /// `q0 + q2 r^2`
    Parabolic { q0: f64, q2: f64 },
}

impl QProfile {
    pub fn eval(&self, r: f64) -> f64 {
        match *self {
            QProfile::Constant { q } => q,
            QProfile::Parabolic { q0, q2 } => q0 + q2 * r * r,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TokamakGeom {
    pub r0: f64,
    pub q: QProfile,
}

impl TokamakGeom {
    /// `R = R0 + r cos psi`
    pub fn major_radius(&self, r: f64, psi: f64) -> f64 {
        self.r0 + r * psi.cos()
    }
}

/// Field strength in tokamak coordinates.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TokamakField {
    Uniform { b0: f64 },
    /// `|B| = b0 R0 / R`
    Toroidal { b0: f64 },
}

/// Guiding-center model in `(r, psi, phi, W_par; J)`. Vectors are expressed
/// in the local orthonormal basis `(e_r, e_psi, e_phi)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TokamakModel {
    pub geom: TokamakGeom,
    pub field: TokamakField,
    /// Gyro-averaged electric field, constant in the local basis.
    pub electric: Vec3,
    /// Include the electric and curvature drifts.
    pub drifts: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GCState {
    pub r: f64,
    pub psi: f64,
    pub phi: f64,
    pub w_par: f64,
    pub j: f64,
}

impl GCState {
    pub fn to_array(&self) -> [f64; 5] {
        [self.r, self.psi, self.phi, self.w_par, self.j]
    }

    pub fn from_array(a: &[f64; 5]) -> Self {
        GCState {
            r: a[0],
            psi: a[1],
            phi: a[2],
            w_par: a[3],
            j: a[4],
        }
    }
}

impl TokamakModel {
    /// Same geometry with every drift and field-gradient term removed.
    pub fn without_drifts(&self) -> Self {
        let b0 = match self.field {
            TokamakField::Uniform { b0 } | TokamakField::Toroidal { b0 } => b0,
        };
        TokamakModel {
            field: TokamakField::Uniform { b0 },
            electric: [0.0; 3],
            drifts: false,
            ..*self
        }
    }

    /// `|B|` and `(d|B|/dr, d|B|/dpsi, d|B|/dphi)`.
    pub fn strength(&self, r: f64, psi: f64) -> (f64, [f64; 3]) {
        match self.field {
            TokamakField::Uniform { b0 } => (b0, [0.0; 3]),
            TokamakField::Toroidal { b0 } => {
                let rr = self.geom.major_radius(r, psi);
                let b = b0 * self.geom.r0 / rr;
                (b, [-b * psi.cos() / rr, b * r * psi.sin() / rr, 0.0])
            }
        }
    }

    /// Field direction `(0, r / (q R), 1)` normalized.
    pub fn unit_field(&self, r: f64, psi: f64) -> Vec3 {
        let t = r / (self.geom.q.eval(r) * self.geom.major_radius(r, psi));
        let n = (1.0 + t * t).sqrt();
        [0.0, t / n, 1.0 / n]
    }
}

/// Right-hand side of the tokamak guiding-center model; `dJ/dt = 0`.
pub fn rhs_gyro(model: &TokamakModel, scaling: &ScalingParams, s: &GCState) -> Result<[f64; 5]> {
    let rr = model.geom.major_radius(s.r, s.psi);
    if !(s.r > 0.0) || !(rr > 0.0) {
        return Err(Error::InvalidState(format!("r = {} and R = {rr} must be positive", s.r)));
    }
    let q = model.geom.q.eval(s.r);
    let eps = scaling.epsilon();
    let (b, d) = model.strength(s.r, s.psi);
    let bh = model.unit_field(s.r, s.psi);
    let bv = bh.map(|c| c * b);
    let grad: Vec3 = [d[0], d[1] / s.r, d[2] / rr];
    let e = model.electric;
    let (ed, mcd) = if model.drifts {
        let ed = cross(&bv, &e).map(|c| eps * c / (b * b));
        let w = eps / b.powi(3) * (s.w_par * s.w_par + s.j * b / eps);
        (ed, cross(&bv, &grad).map(|c| c * w))
    } else {
        ([0.0; 3], [0.0; 3])
    };
    let grad_par = (d[2] + d[1] / q) / rr;
    Ok([
        ed[0] + mcd[0],
        s.w_par / (q * rr) + (ed[1] + mcd[1]) / s.r,
        s.w_par / rr,
        dot(&e, &bh) - s.j / eps * grad_par + s.w_par / b * dot(&ed, &grad),
        0.0,
    ])
}

/// Fixed-step RK4 for the tokamak model; returns `n + 1` states.
pub fn integrate_gyro(
    model: &TokamakModel,
    scaling: &ScalingParams,
    s0: &GCState,
    dt: f64,
    n: usize,
) -> Result<Vec<GCState>> {
    let mut out = Vec::with_capacity(n + 1);
    out.push(*s0);
    let mut y = s0.to_array();
    for _ in 0..n {
        rhs_gyro(model, scaling, &GCState::from_array(&y))?;
        let f = |z: &[f64; 5]| rhs_gyro(model, scaling, &GCState::from_array(z)).unwrap_or([f64::NAN; 5]);
        y = rk4_step(f, &y, dt);
        let s = GCState::from_array(&y);
        if y.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidState("tokamak orbit left the valid region".into()));
        }
        out.push(s);
    }
    Ok(out)
}

/// `P grad H` in the Lie chart.
pub fn rhs_reduced_general<P: PoissonMatrixFn, H: PhaseFunction>(p: &P, h: &H, w: &State) -> State {
    matvec(&p.matrix(w), &h.gradient(w))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CompareOptions {
    pub t_end: f64,
    /// Comparison times, evenly spaced in `(0, t_end]`.
    pub samples: usize,
    /// Full-orbit steps per gyration period.
    pub steps_per_period: usize,
    /// Reduced-system steps per sample interval.
    pub reduced_substeps: usize,
    pub darboux: DarbouxConfig,
    pub lie: LieConfig,
}

impl Default for CompareOptions {
    fn default() -> Self {
        CompareOptions {
            t_end: 1.0,
            samples: 10,
            steps_per_period: 64,
            reduced_substeps: 10,
            darboux: DarbouxConfig::default(),
            lie: LieConfig::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ComparisonReport {
    pub epsilon: f64,
    pub t_end: f64,
    pub times: Vec<f64>,
    /// `max |Z_full - Z_reduced|` over the samples.
    pub position_error: f64,
    /// `max |W_full - W_reduced|` over the samples.
    pub parallel_error: f64,
    /// `max |j(t) - j(0)| / j(0)` along the mapped full orbit.
    pub j_drift: f64,
    /// Largest position difference between full orbits at `dt` and `dt / 2`.
    pub integrator_tolerance: f64,
    pub full: Vec<State>,
    pub reduced: Vec<State>,
}

/// Integrates the full orbit from `s0`, maps sampled states into the Lie chart
/// (cylindrical, Darboux, then the Lie flow), and compares them with the
/// reduced system `P_bar grad (H_bar_0 + epsilon <H_bar_1>)` started from the
/// mapped initial state.
pub fn compare_full_vs_reduced<F: FieldModel>(
    model: &F,
    scaling: &ScalingParams,
    s0: &UsualState,
    opts: &CompareOptions,
) -> Result<ComparisonReport> {
    if opts.samples == 0 || !(opts.t_end > 0.0) {
        return Err(Error::InvalidArgument("need a positive end time and at least one sample".into()));
    }
    let eps = scaling.epsilon();
    let frame = PerpFrame::default();
    let map = darboux_map(model, scaling, frame, opts.darboux)?;
    let hbar = hamiltonian_darboux(model, scaling, &map, 1)?;
    let gen = solve_homological_first_order(&hbar, &opts.lie)?;
    let pbar = BlockPoisson {
        map: &map,
        newton_steps: opts.lie.newton_steps,
    };
    let zeta = lie_flow(&gen, &pbar, eps, &opts.lie);
    let hred = AveragedHamiltonian { generator: &gen };

    let to_lie = |s: &State| -> Result<State> {
        let c = to_cyl(model, frame, &UsualState::from_array(s))?.to_array();
        map.check_forward(&c)?;
        let w = map.forward(&c);
        gen.check(&w)?;
        Ok(zeta.forward(&w))
    };

    let period = gyro_period(scaling, model.max_field_strength());
    let per_sample = ((opts.t_end / opts.samples as f64) / (period / opts.steps_per_period as f64)).ceil() as usize;
    let n_full = per_sample.max(1) * opts.samples;
    let dt = opts.t_end / n_full as f64;
    let coarse = integrate_usual(model, scaling, s0, opts.t_end, dt, StepGuard::Unchecked)?;
    let fine = integrate_usual(model, scaling, s0, opts.t_end, dt / 2.0, StepGuard::Unchecked)?;
    let stride = n_full / opts.samples;
    let mut tol = 0.0f64;
    for i in 0..=opts.samples {
        let a = coarse.states[i * stride];
        let b = fine.states[2 * i * stride];
        for k in 0..3 {
            tol = tol.max((a[k] - b[k]).abs());
        }
    }

    let w0 = to_lie(&s0.to_array())?;
    let n_red = opts.samples * opts.reduced_substeps.max(1);
    let red = integrate(
        |w| Ok(rhs_reduced_general(&pbar, &hred, w)),
        w0,
        opts.t_end,
        opts.t_end / n_red as f64,
        StepGuard::Unchecked,
        CoordSystem::Lie,
    )?;

    let mut times = Vec::with_capacity(opts.samples + 1);
    let mut full = Vec::with_capacity(opts.samples + 1);
    let mut reduced = Vec::with_capacity(opts.samples + 1);
    let (mut pos, mut par, mut jd) = (0.0f64, 0.0f64, 0.0f64);
    for i in 0..=opts.samples {
        let zf = if i == 0 { w0 } else { to_lie(&coarse.states[i * stride])? };
        let zr = red.states[i * opts.reduced_substeps.max(1)];
        times.push(coarse.times[i * stride]);
        let d: Vec3 = std::array::from_fn(|k| zf[k] - zr[k]);
        pos = pos.max(norm(&d));
        par = par.max((zf[3] - zr[3]).abs());
        jd = jd.max((zf[4] - w0[4]).abs() / w0[4]);
        full.push(zf);
        reduced.push(zr);
    }
    Ok(ComparisonReport {
        epsilon: eps,
        t_end: opts.t_end,
        times,
        position_error: pos,
        parallel_error: par,
        j_drift: jd,
        integrator_tolerance: tol,
        full,
        reduced,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SweepRow {
    pub epsilon: f64,
    /// Largest of the position and parallel errors over all initial states.
    pub error: f64,
    pub j_drift: f64,
    pub integrator_tolerance: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SweepReport {
    pub rows: Vec<SweepRow>,
    pub orders: Vec<f64>,
}

/// [`compare_full_vs_reduced`] for every `(epsilon, initial state)` pair, in
/// parallel. Rows follow the order of `epsilons`.
pub fn compare_sweep<F: FieldModel>(
    model: &F,
    kappa: f64,
    epsilons: &[f64],
    states: &[UsualState],
    opts: &CompareOptions,
) -> Result<SweepReport> {
    let jobs: Vec<(usize, usize)> = (0..epsilons.len())
        .flat_map(|i| (0..states.len()).map(move |k| (i, k)))
        .collect();
    let reports = jobs
        .par_iter()
        .map(|&(i, k)| {
            let s = ScalingParams::new(epsilons[i], kappa)?;
            compare_full_vs_reduced(model, &s, &states[k], opts)
        })
        .collect::<Result<Vec<_>>>()?;
    let rows: Vec<SweepRow> = epsilons
        .iter()
        .enumerate()
        .map(|(i, &epsilon)| {
            let mine = reports.iter().zip(&jobs).filter(|(_, j)| j.0 == i).map(|(r, _)| r);
            let mut row = SweepRow {
                epsilon,
                error: 0.0,
                j_drift: 0.0,
                integrator_tolerance: f64::INFINITY,
            };
            for r in mine {
                row.error = row.error.max(r.position_error.max(r.parallel_error));
                row.j_drift = row.j_drift.max(r.j_drift);
                row.integrator_tolerance = row.integrator_tolerance.min(r.integrator_tolerance);
            }
            row
        })
        .collect();
    let orders = convergence_orders(epsilons, &rows.iter().map(|r| r.error).collect::<Vec<_>>());
    Ok(SweepReport { rows, orders })
}

/// `log(e_prev / e) / log(eps_prev / eps)` for consecutive entries.
pub fn convergence_orders(eps: &[f64], err: &[f64]) -> Vec<f64> {
    (1..eps.len())
        .map(|i| (err[i - 1] / err[i]).ln() / (eps[i - 1] / eps[i]).ln())
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ad::Real;
    use crate::fields::{Domain, FieldSpec, Magnet};

    struct AlongZ(f64, Domain);
    impl FieldModel for AlongZ {
        fn vector_potential<T: Real>(&self, x: &[T; 3]) -> [T; 3] {
            [-x[1] * (self.0 / 2.0), x[0] * (self.0 / 2.0), T::zero()]
        }
        fn phi0<T: Real>(&self, _x: &[T; 3]) -> T {
            T::zero()
        }
        fn phi1<T: Real>(&self, _u: &[T; 3]) -> T {
            T::zero()
        }
        fn domain(&self) -> &Domain {
            &self.1
        }
    }

    #[test]
    fn electric_drift_by_hand() {
        let f = AlongZ(2.0, Domain::cube(1.0));
        let s = ScalingParams::new(0.1, 0.5).unwrap();
        let d = drift_ed(&f, &s, &[0.0; 3], &[4.0, 0.0, 0.0]);
        assert!((d[1] - 0.2).abs() < 1e-14 && d[0].abs() < 1e-14 && d[2].abs() < 1e-14);
        assert_eq!(drift_ed(&f, &s, &[0.0; 3], &[0.0; 3]), [0.0; 3]);
    }

    #[test]
    fn curvature_drift_graded_field() {
        let f = FieldSpec::new(Magnet::Graded { b0: 1.0, alpha: 0.1 }, Domain::cube(1.0));
        let s = ScalingParams::new(0.01, 0.5).unwrap();
        let d = drift_mcd(&f, &s, &[0.0; 3], 1.0, 0.5);
        assert!(d[0].abs() < 1e-15 && d[1].abs() < 1e-15);
        assert!((d[2].abs() - 0.051).abs() < 1e-12);
        let u = FieldSpec::new(Magnet::Uniform { b0: 1.0 }, Domain::cube(1.0));
        assert_eq!(drift_mcd(&u, &s, &[0.1, 0.2, 0.3], 1.0, 0.5), [0.0; 3]);
    }

    fn demo() -> TokamakModel {
        TokamakModel {
            geom: TokamakGeom {
                r0: 3.0,
                q: QProfile::Parabolic { q0: 1.1, q2: 2.0 },
            },
            field: TokamakField::Toroidal { b0: 1.0 },
            electric: [0.1, 0.0, 0.0],
            drifts: true,
        }
    }

    #[test]
    fn no_drift_streaming() {
        let m = demo().without_drifts();
        let s = ScalingParams::new(0.01, 0.5).unwrap();
        let st = GCState {
            r: 0.4,
            psi: 0.3,
            phi: 0.0,
            w_par: 0.8,
            j: 0.2,
        };
        let d = rhs_gyro(&m, &s, &st).unwrap();
        let rr = 3.0 + 0.4 * 0.3f64.cos();
        let q = 1.1 + 2.0 * 0.16;
        assert_eq!(d[0], 0.0);
        assert!((d[1] - 0.8 / (q * rr)).abs() < 1e-15);
        assert!((d[2] - 0.8 / rr).abs() < 1e-15);
        assert_eq!((d[3], d[4]), (0.0, 0.0));
        assert!((d[1] / d[2] - 1.0 / q).abs() < 1e-12);
        let still = rhs_gyro(&m, &s, &GCState { w_par: 0.0, ..st }).unwrap();
        assert_eq!(still, [0.0; 5]);
    }

    #[test]
    fn invalid_radius_rejected() {
        let s = ScalingParams::new(0.01, 0.5).unwrap();
        let st = GCState {
            r: -0.1,
            psi: 0.0,
            phi: 0.0,
            w_par: 1.0,
            j: 0.1,
        };
        assert!(rhs_gyro(&demo(), &s, &st).is_err());
    }

    #[test]
    fn tokamak_drifts_are_perpendicular() {
        let m = demo();
        let s = ScalingParams::new(0.01, 0.5).unwrap();
        let (b, d) = m.strength(0.5, 1.0);
        let bh = m.unit_field(0.5, 1.0);
        let bv = bh.map(|c| c * b);
        let grad = [d[0], d[1] / 0.5, 0.0];
        let mcd = cross(&bv, &grad);
        let ed = cross(&bv, &m.electric);
        assert!(dot(&mcd, &bh).abs() < 1e-14 && dot(&ed, &bh).abs() < 1e-14);
        assert!(rhs_gyro(&m, &s, &GCState { r: 0.5, psi: 1.0, phi: 0.0, w_par: 0.5, j: 0.1 }).is_ok());
    }
}
