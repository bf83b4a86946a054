//! Cylindrical coordinates in velocity: `(x, v_par, v_perp, theta)`.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::ad::Real;
use crate::dynamics::UsualState;
use crate::error::{Error, Result};
use crate::fields::{field_strength, field_strength_gradient, total_potential, FieldModel, ScalingParams};
use crate::linalg::{cross, dot, norm, Mat6, State};
use crate::poisson::{
    antisymmetry_residual, transform_poisson, CoordinateMap, PhaseFunction, PoissonMatrixFn, UsualPoissonMatrix,
};

/// Below this perpendicular speed the gyrophase is treated as undefined.
pub const V_PERP_THRESHOLD: f64 = 1e-8;

const TWO_PI: f64 = 2.0 * PI;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CylState {
    pub x: [f64; 3],
    pub v_par: f64,
    pub v_perp: f64,
    pub theta: f64,
}

impl CylState {
    pub fn new(x: [f64; 3], v_par: f64, v_perp: f64, theta: f64) -> Self {
        CylState {
            x,
            v_par,
            v_perp,
            theta: wrap_angle(theta),
        }
    }

    pub fn to_array(&self) -> State {
        [self.x[0], self.x[1], self.x[2], self.v_par, self.v_perp, self.theta]
    }

    pub fn from_array(r: &State) -> Self {
        CylState::new([r[0], r[1], r[2]], r[3], r[4], r[5])
    }
}

/// Maps an angle into `[0, 2 pi)`.
pub fn wrap_angle(theta: f64) -> f64 {
    let t = theta.rem_euclid(TWO_PI);
    if t >= TWO_PI {
        0.0
    } else {
        t
    }
}

/// Choice of the orthonormal pair `(e1, e2)` spanning the plane normal to `B`.
/// Always right-handed: `e1 x e2 = B / |B|`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PerpFrame {
    /// Gram–Schmidt against the coordinate axis on which `B / |B|` has the
    /// smallest component (lowest index on ties), chosen per point.
    #[default]
    SmallestComponent,
    /// Gram–Schmidt against a fixed coordinate axis.
    Axis { index: usize },
}

impl PerpFrame {
    /// `(b_hat, e1, e2)` at `x`.
    pub fn at<F: FieldModel, T: Real>(&self, model: &F, x: &[T; 3]) -> ([T; 3], [T; 3], [T; 3]) {
        let b = model.magnetic_field(x);
        let nb = norm(&b);
        let bh = b.map(|c| c / nb);
        let axis = match *self {
            PerpFrame::Axis { index } => index,
            PerpFrame::SmallestComponent => {
                let mut best = 0;
                for i in 1..3 {
                    if bh[i].value().abs() < bh[best].value().abs() {
                        best = i;
                    }
                }
                best
            }
        };
        let mut a = [T::zero(); 3];
        a[axis] = T::one();
        let ab = dot(&a, &bh);
        let w: [T; 3] = std::array::from_fn(|i| a[i] - bh[i] * ab);
        let nw = norm(&w);
        let e1 = w.map(|c| c / nw);
        let e2 = cross(&bh, &e1);
        (bh, e1, e2)
    }
}

/// Generic forward map `(x, v) -> (x, v_par, v_perp, theta)`.
pub fn cyl_forward<F: FieldModel, T: Real>(model: &F, frame: PerpFrame, r: &[T; 6]) -> [T; 6] {
    let x = [r[0], r[1], r[2]];
    let v = [r[3], r[4], r[5]];
    let (bh, e1, e2) = frame.at(model, &x);
    let vp = dot(&v, &bh);
    let c1 = dot(&v, &e1);
    let c2 = dot(&v, &e2);
    let vperp = (c1 * c1 + c2 * c2).sqrt();
    let mut th = c2.atan2(c1);
    if th.value() < 0.0 {
        th = th + TWO_PI;
    }
    [r[0], r[1], r[2], vp, vperp, th]
}

/// Generic inverse map `v = v_par b_hat + v_perp (cos theta e1 + sin theta e2)`.
pub fn cyl_inverse<F: FieldModel, T: Real>(model: &F, frame: PerpFrame, c: &[T; 6]) -> [T; 6] {
    let x = [c[0], c[1], c[2]];
    let (bh, e1, e2) = frame.at(model, &x);
    let (s, co) = (c[5].sin(), c[5].cos());
    let v: [T; 3] = std::array::from_fn(|i| bh[i] * c[3] + (e1[i] * co + e2[i] * s) * c[4]);
    [c[0], c[1], c[2], v[0], v[1], v[2]]
}

fn check_field<F: FieldModel>(model: &F, x: &[f64; 3]) -> Result<()> {
    model.domain().check(x)?;
    if field_strength(model, x) <= 0.0 {
        return Err(Error::VanishingField { point: *x });
    }
    Ok(())
}

pub fn to_cyl<F: FieldModel>(model: &F, frame: PerpFrame, s: &UsualState) -> Result<CylState> {
    check_field(model, &s.x)?;
    let c = cyl_forward(model, frame, &s.to_array());
    if c[4] <= V_PERP_THRESHOLD {
        return Err(Error::GyrophaseUndefined {
            v_perp: c[4],
            threshold: V_PERP_THRESHOLD,
        });
    }
    Ok(CylState::from_array(&c))
}

pub fn from_cyl<F: FieldModel>(model: &F, frame: PerpFrame, c: &CylState) -> Result<UsualState> {
    if field_strength(model, &c.x) <= 0.0 {
        return Err(Error::VanishingField { point: c.x });
    }
    Ok(UsualState::from_array(&cyl_inverse(model, frame, &c.to_array())))
}

/// `(v_par^2 + v_perp^2) / 2 + Phi0(x) + eta Phi1(x / eta)`
pub fn hamiltonian_cyl<F: FieldModel, T: Real>(model: &F, scaling: &ScalingParams, c: &[T; 6]) -> T {
    (c[3] * c[3] + c[4] * c[4]) * 0.5 + total_potential(model, scaling, &[c[0], c[1], c[2]])
}

/// [`hamiltonian_cyl`] as a phase function.
pub struct CylHamiltonian<'a, F> {
    pub model: &'a F,
    pub scaling: ScalingParams,
}

impl<F: FieldModel> PhaseFunction for CylHamiltonian<'_, F> {
    fn eval<T: Real>(&self, r: &[T; 6]) -> T {
        hamiltonian_cyl(self.model, &self.scaling, r)
    }
}

/// The cylindrical chart as a coordinate map from usual coordinates.
pub struct CylindricalMap<'a, F> {
    pub model: &'a F,
    pub frame: PerpFrame,
}

impl<F: FieldModel> CoordinateMap for CylindricalMap<'_, F> {
    fn forward<T: Real>(&self, r: &[T; 6]) -> [T; 6] {
        cyl_forward(self.model, self.frame, r)
    }

    fn inverse<T: Real>(&self, r: &[T; 6]) -> [T; 6] {
        cyl_inverse(self.model, self.frame, r)
    }

    fn check_forward(&self, r: &State) -> Result<()> {
        to_cyl(self.model, self.frame, &UsualState::from_array(r)).map(|_| ())
    }

    fn check_inverse(&self, r: &State) -> Result<()> {
        check_field(self.model, &[r[0], r[1], r[2]])?;
        if r[4] <= V_PERP_THRESHOLD {
            return Err(Error::GyrophaseUndefined {
                v_perp: r[4],
                threshold: V_PERP_THRESHOLD,
            });
        }
        Ok(())
    }
}

/// Poisson matrix in cylindrical coordinates, obtained by transforming the
/// usual-coordinates matrix through the cylindrical map.
pub struct CylPoisson<'a, F> {
    pub usual: UsualPoissonMatrix<'a, F>,
    pub map: CylindricalMap<'a, F>,
}

pub fn poisson_matrix_cyl<'a, F: FieldModel>(
    model: &'a F,
    scaling: &ScalingParams,
    frame: PerpFrame,
) -> CylPoisson<'a, F> {
    CylPoisson {
        usual: UsualPoissonMatrix {
            model,
            scaling: *scaling,
        },
        map: CylindricalMap { model, frame },
    }
}

impl<F: FieldModel> CylPoisson<'_, F> {
    /// Matrix at a cylindrical point, refusing near `v_perp = 0`.
    pub fn try_matrix(&self, c: &State) -> Result<Mat6> {
        transform_poisson(&self.usual, &self.map).try_matrix(c)
    }

    /// `|B(x)| / (epsilon v_perp)`
    pub fn omega(&self, c: &State) -> f64 {
        field_strength(self.map.model, &[c[0], c[1], c[2]]) / (self.usual.scaling.epsilon() * c[4])
    }
}

impl<F: FieldModel> PoissonMatrixFn for CylPoisson<'_, F> {
    fn eval<T: Real>(&self, c: &[T; 6]) -> [[T; 6]; 6] {
        transform_poisson(&self.usual, &self.map).eval(c)
    }
}

/// Groups of entries of the printed constant-direction matrix.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum EntryClass {
    Zero,
    /// `(1, 4)` and its mirror, printed as `b / epsilon`.
    FieldOverEpsilon,
    /// Position rows 2, 3 against `v_perp`, `theta`.
    Trigonometric,
    /// The `(v_perp, theta)` pair.
    GyroPair,
    /// `(v_par, theta)`, printed as `$`.
    Dollar,
    /// `(v_par, v_perp)`, printed as `$$`.
    DoubleDollar,
}

const CLASSES: [EntryClass; 6] = [
    EntryClass::Zero,
    EntryClass::FieldOverEpsilon,
    EntryClass::Trigonometric,
    EntryClass::GyroPair,
    EntryClass::Dollar,
    EntryClass::DoubleDollar,
];

pub fn entry_class(i: usize, j: usize) -> EntryClass {
    let (a, b) = (i.min(j), i.max(j));
    match (a, b) {
        (0, 3) => EntryClass::FieldOverEpsilon,
        (1, 4) | (1, 5) | (2, 4) | (2, 5) => EntryClass::Trigonometric,
        (4, 5) => EntryClass::GyroPair,
        (3, 5) => EntryClass::Dollar,
        (3, 4) => EntryClass::DoubleDollar,
        _ => EntryClass::Zero,
    }
}

/// The printed matrix for `B = (b(x), 0, 0)`, in the printed angle `theta_p`.
pub fn printed_matrix(b: f64, db2: f64, db3: f64, eps: f64, v_par: f64, v_perp: f64, theta_p: f64) -> Mat6 {
    let (s, c) = theta_p.sin_cos();
    let dollar = v_par / eps * (db2 + db3);
    let ddollar = v_par / (eps * v_perp) * (s * db2 + (1.0 + s * s) / c * db3);
    let mut m = [[0.0; 6]; 6];
    m[0][3] = b / eps;
    m[1][4] = -s;
    m[1][5] = -c / v_perp;
    m[2][4] = -c;
    m[2][5] = s / v_perp;
    m[3][4] = ddollar;
    m[3][5] = dollar;
    m[4][5] = -b / (eps * v_perp);
    for i in 0..6 {
        for j in 0..i {
            m[i][j] = -m[j][i];
        }
    }
    m
}

/// The printed orientation measures the angle as `3 pi / 2 - theta`.
pub fn printed_angle(theta: f64) -> f64 {
    wrap_angle(1.5 * PI - theta)
}

#[derive(Clone, Debug, Serialize)]
pub struct ProbeComparison {
    /// Cylindrical point in this crate's orientation.
    pub point: State,
    pub printed_theta: f64,
    pub residuals: Mat6,
}

#[derive(Clone, Debug, Serialize)]
pub struct ClassVerdict {
    pub class: EntryClass,
    pub max_residual: f64,
    pub agrees: bool,
}

#[derive(Clone, Debug, Serialize)]
pub struct PrintedMatrixReport {
    pub tolerance: f64,
    pub probes: Vec<ProbeComparison>,
    pub classes: Vec<ClassVerdict>,
    pub max_antisymmetry_residual: f64,
}

impl PrintedMatrixReport {
    pub fn max_residual(&self) -> f64 {
        self.classes.iter().map(|c| c.max_residual).fold(0.0, f64::max)
    }

    pub fn verdict(&self, class: EntryClass) -> Option<&ClassVerdict> {
        self.classes.iter().find(|c| c.class == class)
    }
}

/// Entry-by-entry comparison of the transformed matrix with the printed one,
/// for a field `B = (b(x), 0, 0)` and the frame `e1 = (0,1,0)`, `e2 = (0,0,1)`.
pub fn compare_printed_matrix<F: FieldModel>(
    model: &F,
    scaling: &ScalingParams,
    probes: &[State],
    tolerance: f64,
) -> Result<PrintedMatrixReport> {
    let p = poisson_matrix_cyl(model, scaling, PerpFrame::Axis { index: 1 });
    let eps = scaling.epsilon();
    let mut out = Vec::with_capacity(probes.len());
    let mut worst = [0.0f64; 6];
    let mut anti = 0.0f64;
    for c in probes {
        let x = [c[0], c[1], c[2]];
        let bv = model.magnetic_field(&x);
        if bv[0] <= 0.0 || bv[1] != 0.0 || bv[2] != 0.0 {
            return Err(Error::InvalidArgument(format!(
                "field at {x:?} is not of the form (b, 0, 0) with b > 0"
            )));
        }
        let (b, gb) = field_strength_gradient(model, &x);
        let numeric = p.try_matrix(c)?;
        anti = anti.max(antisymmetry_residual(&numeric));
        let tp = printed_angle(c[5]);
        let printed = printed_matrix(b, gb[1], gb[2], eps, c[3], c[4], tp);
        // reorient: theta_p = 3 pi / 2 - theta flips row and column 6
        let mut res = [[0.0; 6]; 6];
        for i in 0..6 {
            for j in 0..6 {
                let sign = if (i == 5) != (j == 5) { -1.0 } else { 1.0 };
                res[i][j] = (sign * numeric[i][j] - printed[i][j]).abs();
                let k = CLASSES.iter().position(|&cl| cl == entry_class(i, j)).unwrap();
                worst[k] = worst[k].max(res[i][j]);
            }
        }
        out.push(ProbeComparison {
            point: *c,
            printed_theta: tp,
            residuals: res,
        });
    }
    Ok(PrintedMatrixReport {
        tolerance,
        probes: out,
        classes: CLASSES
            .iter()
            .zip(worst)
            .map(|(&class, m)| ClassVerdict {
                class,
                max_residual: m,
                agrees: m <= tolerance,
            })
            .collect(),
        max_antisymmetry_residual: anti,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::hamiltonian_usual;
    use crate::fields::{Domain, FieldSpec, Magnet, Potential};
    use crate::poisson::transform_hamiltonian;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn uniform(b0: f64) -> FieldSpec {
        FieldSpec::new(Magnet::Uniform { b0 }, Domain::cube(10.0))
    }

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn projection_examples() {
        let f = uniform(1.0);
        let fr = PerpFrame::Axis { index: 1 };
        let c = to_cyl(&f, fr, &UsualState::new([0.0; 3], [3.0, 2.0, 0.0])).unwrap();
        assert_eq!((c.v_par, c.v_perp, c.theta), (3.0, 2.0, 0.0));
        let c = to_cyl(&f, fr, &UsualState::new([0.0; 3], [0.0, 0.0, 5.0])).unwrap();
        assert!(close(c.v_par, 0.0, 1e-15) && close(c.v_perp, 5.0, 1e-15));
        assert!(close(c.theta, PI / 2.0, 1e-15));
        let v = from_cyl(&f, fr, &CylState::new([0.0; 3], 1.0, 1.0, 0.0)).unwrap().v;
        assert_eq!(v, [1.0, 1.0, 0.0]);
    }

    #[test]
    fn default_frame_for_axial_field() {
        let f = uniform(2.0);
        let (bh, e1, e2) = PerpFrame::default().at(&f, &[0.1, 0.2, 0.3]);
        assert_eq!((bh, e1, e2), ([1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]));
    }

    #[test]
    fn zero_perpendicular_velocity_is_rejected() {
        let f = uniform(1.0);
        let e = to_cyl(&f, PerpFrame::default(), &UsualState::new([0.0; 3], [2.0, 0.0, 0.0]));
        assert!(matches!(e, Err(Error::GyrophaseUndefined { .. })));
    }

    #[test]
    fn round_trip_and_pythagoras() {
        let f = FieldSpec::new(Magnet::ScrewPinch { b0: 1.0, pitch: 0.4 }, Domain::cube(3.0));
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..100 {
            let x = [rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0)];
            let v = [rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0)];
            let s = UsualState::new(x, v);
            let c = to_cyl(&f, PerpFrame::default(), &s).unwrap();
            let back = from_cyl(&f, PerpFrame::default(), &c).unwrap();
            for i in 0..3 {
                assert!(close(back.v[i], v[i], 1e-12));
            }
            assert!(close(dot(&v, &v), c.v_par * c.v_par + c.v_perp * c.v_perp, 1e-12));
            let shifted = from_cyl(&f, PerpFrame::default(), &CylState { theta: c.theta + TWO_PI, ..c }).unwrap();
            for i in 0..3 {
                assert!(close(shifted.v[i], back.v[i], 1e-12));
            }
        }
    }

    #[test]
    fn hamiltonian_matches_usual() {
        let f = FieldSpec::new(Magnet::Graded { b0: 1.0, alpha: 0.3 }, Domain::cube(3.0)).with_potentials(
            Potential::Linear {
                gradient: [0.1, -0.2, 0.3],
            },
            Potential::Sinusoidal {
                amplitude: 0.2,
                wavevector: [0.0, 1.0, 1.0],
            },
        );
        let s = ScalingParams::new(0.1, 0.5).unwrap();
        let map = CylindricalMap {
            model: &f,
            frame: PerpFrame::default(),
        };
        struct Hu<'a>(&'a FieldSpec, ScalingParams);
        impl PhaseFunction for Hu<'_> {
            fn eval<T: Real>(&self, r: &[T; 6]) -> T {
                hamiltonian_usual(self.0, &self.1, r)
            }
        }
        let hu = Hu(&f, s);
        let ht = transform_hamiltonian(&hu, &map);
        let c = [0.2, -0.3, 0.5, 0.7, 1.3, 2.0];
        let h = hamiltonian_cyl(&f, &s, &c);
        assert!(close(ht.value(&c), h, 1e-12));
        let dth = CylHamiltonian { model: &f, scaling: s }.gradient(&c)[5];
        assert!(dth.abs() < 1e-10);
        let zero = FieldSpec::new(Magnet::Uniform { b0: 1.0 }, Domain::cube(1.0));
        assert_eq!(hamiltonian_cyl(&zero, &s, &[0.0, 0.0, 0.0, 3.0, 4.0, 0.3]), 12.5);
    }

    #[test]
    fn gyro_pair_entry() {
        let f = uniform(2.0);
        let s = ScalingParams::new(0.1, 0.5).unwrap();
        let p = poisson_matrix_cyl(&f, &s, PerpFrame::default());
        let c = [0.1, 0.2, 0.3, 1.0, 4.0, 0.7];
        let m = p.try_matrix(&c).unwrap();
        assert!(close(m[4][5], 5.0, 1e-12));
        assert!(close(p.omega(&c), 5.0, 1e-12));
        assert!(antisymmetry_residual(&m) < 1e-10);
    }

    #[test]
    fn position_parallel_velocity_bracket_is_unity() {
        // {x1, v_par} = b_hat_1, not b / epsilon
        let f = FieldSpec::new(Magnet::Graded { b0: 1.5, alpha: 0.2 }, Domain::cube(3.0));
        let s = ScalingParams::new(0.1, 0.5).unwrap();
        let p = poisson_matrix_cyl(&f, &s, PerpFrame::default());
        let m = p.try_matrix(&[0.1, 0.4, -0.3, 1.0, 2.0, 1.1]).unwrap();
        assert!(close(m[0][3], 1.0, 1e-12));
    }

    #[test]
    fn small_perpendicular_speed_refused() {
        let f = uniform(1.0);
        let s = ScalingParams::new(0.1, 0.5).unwrap();
        let p = poisson_matrix_cyl(&f, &s, PerpFrame::default());
        assert!(matches!(
            p.try_matrix(&[0.0, 0.0, 0.0, 1.0, 1e-9, 0.0]),
            Err(Error::GyrophaseUndefined { .. })
        ));
    }

    #[test]
    fn printed_matrix_constant_field_report() {
        let f = uniform(1.7);
        let s = ScalingParams::new(0.05, 0.5).unwrap();
        let probes = [[0.1, 0.2, 0.3, 0.8, 1.2, 0.4], [-1.0, 0.5, 0.2, -0.3, 0.6, 4.0]];
        let r = compare_printed_matrix(&f, &s, &probes, 1e-9).unwrap();
        for cl in [
            EntryClass::Zero,
            EntryClass::Trigonometric,
            EntryClass::GyroPair,
            EntryClass::Dollar,
            EntryClass::DoubleDollar,
        ] {
            assert!(r.verdict(cl).unwrap().agrees, "{cl:?}: {r:?}");
        }
        let fe = r.verdict(EntryClass::FieldOverEpsilon).unwrap();
        assert!(close(fe.max_residual, 1.7 / 0.05 - 1.0, 1e-9));
        assert!(r.max_antisymmetry_residual < 1e-10);
    }

    #[test]
    fn printed_dollar_entries_vanish_in_truth() {
        let f = FieldSpec::new(Magnet::Graded { b0: 1.0, alpha: 0.5 }, Domain::cube(3.0));
        let s = ScalingParams::new(0.1, 0.5).unwrap();
        let p = poisson_matrix_cyl(&f, &s, PerpFrame::Axis { index: 1 });
        let m = p.try_matrix(&[0.0, 0.3, 0.2, 1.5, 0.9, 0.8]).unwrap();
        assert!(m[3][4].abs() < 1e-12 && m[3][5].abs() < 1e-12);
    }
}
