//! Poisson brackets, Hamiltonian vector fields and the change-of-coordinates
//! law for Hamiltonians and Poisson matrices.

use serde::Serialize;

use crate::ad::{directional, gradient, jacobian, Real};
use crate::error::{Error, Result};
use crate::fields::{FieldModel, ScalingParams};
use crate::linalg::{congruence, dot, matvec, solve, Mat6, State};

/// Scalar function on six-dimensional phase space.
pub trait PhaseFunction: Sync {
    fn eval<T: Real>(&self, r: &[T; 6]) -> T;

    fn value(&self, r: &State) -> f64 {
        self.eval(r)
    }

    fn gradient(&self, r: &State) -> State {
        gradient(|z| self.eval(z), r).1
    }
}

/// Antisymmetric 6x6 matrix field.
pub trait PoissonMatrixFn: Sync {
    fn eval<T: Real>(&self, r: &[T; 6]) -> [[T; 6]; 6];

    fn matrix(&self, r: &State) -> Mat6 {
        self.eval(r)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum MapKind {
    Exact,
    Series { order: usize },
}

/// Invertible change of coordinates `r~ = forward(r)`.
pub trait CoordinateMap: Sync {
    fn forward<T: Real>(&self, r: &[T; 6]) -> [T; 6];

    fn inverse<T: Real>(&self, r: &[T; 6]) -> [T; 6];

    fn kind(&self) -> MapKind {
        MapKind::Exact
    }

    /// Precondition check for [`CoordinateMap::forward`].
    fn check_forward(&self, _r: &State) -> Result<()> {
        Ok(())
    }

    /// Precondition check for [`CoordinateMap::inverse`].
    fn check_inverse(&self, _r: &State) -> Result<()> {
        Ok(())
    }

    fn jacobian(&self, r: &State) -> Mat6 {
        jacobian(|z| self.forward(z), r).1
    }
}

/// The coordinate function `r -> r[i]`.
#[derive(Clone, Copy, Debug)]
pub struct Coordinate(pub usize);

impl PhaseFunction for Coordinate {
    fn eval<T: Real>(&self, r: &[T; 6]) -> T {
        r[self.0]
    }
}

#[derive(Clone, Copy, Debug)]
pub struct Constant(pub f64);

impl PhaseFunction for Constant {
    fn eval<T: Real>(&self, _r: &[T; 6]) -> T {
        T::cst(self.0)
    }
}

/// One component of a coordinate map, seen as a phase function.
pub struct MapComponent<'a, M> {
    pub map: &'a M,
    pub index: usize,
}

impl<M: CoordinateMap> PhaseFunction for MapComponent<'_, M> {
    fn eval<T: Real>(&self, r: &[T; 6]) -> T {
        self.map.forward(r)[self.index]
    }
}

/// The constant matrix `[[0, I], [-I, 0]]`.
#[derive(Clone, Copy, Debug, Default)]
pub struct CanonicalMatrix;

impl PoissonMatrixFn for CanonicalMatrix {
    fn eval<T: Real>(&self, _r: &[T; 6]) -> [[T; 6]; 6] {
        canonical_matrix()
    }
}

pub fn canonical_matrix<T: Real>() -> [[T; 6]; 6] {
    let mut s = [[T::zero(); 6]; 6];
    for i in 0..3 {
        s[i][i + 3] = T::one();
        s[i + 3][i] = -T::one();
    }
    s
}

/// Poisson matrix of the usual coordinates `(x, v)`:
/// `[[0, I], [-I, ((grad A)^T - grad A) / epsilon]]`, evaluated through `B`.
pub struct UsualPoissonMatrix<'a, F> {
    pub model: &'a F,
    pub scaling: ScalingParams,
}

impl<F: FieldModel> PoissonMatrixFn for UsualPoissonMatrix<'_, F> {
    fn eval<T: Real>(&self, r: &[T; 6]) -> [[T; 6]; 6] {
        let b = self.model.magnetic_field(&[r[0], r[1], r[2]]);
        let inv = 1.0 / self.scaling.epsilon();
        let mut p = canonical_matrix::<T>();
        p[3][4] = b[2] * inv;
        p[4][3] = -p[3][4];
        p[4][5] = b[0] * inv;
        p[5][4] = -p[4][5];
        p[5][3] = b[1] * inv;
        p[3][5] = -p[5][3];
        p
    }
}

/// The same matrix assembled entry by entry from the potential Jacobian.
pub fn usual_poisson_from_potential<F: FieldModel>(
    model: &F,
    scaling: &ScalingParams,
    x: &[f64; 3],
) -> Mat6 {
    let j = model.potential_jacobian(x);
    let mut p = canonical_matrix::<f64>();
    for a in 0..3 {
        for b in 0..3 {
            p[3 + a][3 + b] = (j[b][a] - j[a][b]) / scaling.epsilon();
        }
    }
    p
}

/// Usual -> canonical coordinates, `(x, v) -> (x, v + A(x) / epsilon)`.
pub struct CanonicalChart<'a, F> {
    pub model: &'a F,
    pub scaling: ScalingParams,
}

impl<F: FieldModel> CoordinateMap for CanonicalChart<'_, F> {
    fn forward<T: Real>(&self, r: &[T; 6]) -> [T; 6] {
        let a = self.model.vector_potential(&[r[0], r[1], r[2]]);
        let inv = 1.0 / self.scaling.epsilon();
        [r[0], r[1], r[2], r[3] + a[0] * inv, r[4] + a[1] * inv, r[5] + a[2] * inv]
    }

    fn inverse<T: Real>(&self, r: &[T; 6]) -> [T; 6] {
        let a = self.model.vector_potential(&[r[0], r[1], r[2]]);
        let inv = 1.0 / self.scaling.epsilon();
        [r[0], r[1], r[2], r[3] - a[0] * inv, r[4] - a[1] * inv, r[5] - a[2] * inv]
    }

    fn check_forward(&self, r: &State) -> Result<()> {
        self.model.domain().check(&[r[0], r[1], r[2]])
    }

    fn check_inverse(&self, r: &State) -> Result<()> {
        self.model.domain().check(&[r[0], r[1], r[2]])
    }
}

#[derive(Clone, Copy, Debug, Default)]
pub struct IdentityMap;

impl CoordinateMap for IdentityMap {
    fn forward<T: Real>(&self, r: &[T; 6]) -> [T; 6] {
        *r
    }

    fn inverse<T: Real>(&self, r: &[T; 6]) -> [T; 6] {
        *r
    }
}

/// Swaps the roles of forward and inverse.
pub struct Inverted<'a, M>(pub &'a M);

impl<M: CoordinateMap> CoordinateMap for Inverted<'_, M> {
    fn forward<T: Real>(&self, r: &[T; 6]) -> [T; 6] {
        self.0.inverse(r)
    }

    fn inverse<T: Real>(&self, r: &[T; 6]) -> [T; 6] {
        self.0.forward(r)
    }

    fn kind(&self) -> MapKind {
        self.0.kind()
    }

    fn check_forward(&self, r: &State) -> Result<()> {
        self.0.check_inverse(r)
    }

    fn check_inverse(&self, r: &State) -> Result<()> {
        self.0.check_forward(r)
    }
}

/// `second . first`
pub struct Composed<'a, A, B> {
    pub first: &'a A,
    pub second: &'a B,
}

impl<A: CoordinateMap, B: CoordinateMap> CoordinateMap for Composed<'_, A, B> {
    fn forward<T: Real>(&self, r: &[T; 6]) -> [T; 6] {
        self.second.forward(&self.first.forward(r))
    }

    fn inverse<T: Real>(&self, r: &[T; 6]) -> [T; 6] {
        self.first.inverse(&self.second.inverse(r))
    }

    fn kind(&self) -> MapKind {
        match (self.first.kind(), self.second.kind()) {
            (MapKind::Exact, MapKind::Exact) => MapKind::Exact,
            (MapKind::Series { order }, MapKind::Exact) | (MapKind::Exact, MapKind::Series { order }) => {
                MapKind::Series { order }
            }
            (MapKind::Series { order: a }, MapKind::Series { order: b }) => MapKind::Series { order: a.min(b) },
        }
    }

    fn check_forward(&self, r: &State) -> Result<()> {
        self.first.check_forward(r)?;
        self.second.check_forward(&self.first.forward(r))
    }

    fn check_inverse(&self, r: &State) -> Result<()> {
        self.second.check_inverse(r)?;
        self.first.check_inverse(&self.second.inverse(r))
    }
}

/// `{f, g}(r) = grad f(r) . P(r) grad g(r)`
pub fn bracket<P, F, G>(p: &P, f: &F, g: &G, r: &State) -> f64
where
    P: PoissonMatrixFn,
    F: PhaseFunction,
    G: PhaseFunction,
{
    let m = p.matrix(r);
    dot(&f.gradient(r), &matvec(&m, &g.gradient(r)))
}

/// `P(r) grad H(r)`
pub fn hamiltonian_vector_field<P, H>(p: &P, h: &H, r: &State) -> State
where
    P: PoissonMatrixFn,
    H: PhaseFunction,
{
    matvec(&p.matrix(r), &h.gradient(r))
}

/// `H~(r~) = H(inverse(r~))`
pub struct TransformedHamiltonian<'a, H, M> {
    pub hamiltonian: &'a H,
    pub map: &'a M,
}

pub fn transform_hamiltonian<'a, H, M>(h: &'a H, map: &'a M) -> TransformedHamiltonian<'a, H, M>
where
    H: PhaseFunction,
    M: CoordinateMap,
{
    TransformedHamiltonian { hamiltonian: h, map }
}

impl<H: PhaseFunction, M: CoordinateMap> PhaseFunction for TransformedHamiltonian<'_, H, M> {
    fn eval<T: Real>(&self, r: &[T; 6]) -> T {
        self.hamiltonian.eval(&self.map.inverse(r))
    }
}

/// How a transformed Poisson matrix is assembled.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TransformMode {
    /// `J P J^T` with one Jacobian evaluation.
    Conjugation,
    /// Entry `(i, j)` as the bracket of coordinate functions `i` and `j`.
    CoordinateBrackets,
}

/// `P~(r~) = (J P J^T)(inverse(r~))` with `J` the Jacobian of `forward`.
pub struct TransformedPoisson<'a, P, M> {
    pub poisson: &'a P,
    pub map: &'a M,
    pub mode: TransformMode,
}

pub fn transform_poisson<'a, P, M>(p: &'a P, map: &'a M) -> TransformedPoisson<'a, P, M>
where
    P: PoissonMatrixFn,
    M: CoordinateMap,
{
    TransformedPoisson {
        poisson: p,
        map,
        mode: TransformMode::Conjugation,
    }
}

impl<P: PoissonMatrixFn, M: CoordinateMap> TransformedPoisson<'_, P, M> {
    pub fn with_mode(mut self, mode: TransformMode) -> Self {
        self.mode = mode;
        self
    }

    /// Evaluates with precondition checks; fails on a singular Jacobian.
    pub fn try_matrix(&self, rt: &State) -> Result<Mat6> {
        self.map.check_inverse(rt)?;
        let r = self.map.inverse(rt);
        self.map.check_forward(&r)?;
        let j = self.map.jacobian(&r);
        if solve(&j, &[1.0; 6]).is_none() {
            return Err(Error::SingularJacobian { point: r.to_vec() });
        }
        Ok(match self.mode {
            TransformMode::Conjugation => self.matrix(rt),
            TransformMode::CoordinateBrackets => {
                let grads: [State; 6] = std::array::from_fn(|i| {
                    MapComponent {
                        map: self.map,
                        index: i,
                    }
                    .gradient(&r)
                });
                let p = self.poisson.matrix(&r);
                std::array::from_fn(|i| std::array::from_fn(|k| dot(&grads[i], &matvec(&p, &grads[k]))))
            }
        })
    }
}

impl<P: PoissonMatrixFn, M: CoordinateMap> PoissonMatrixFn for TransformedPoisson<'_, P, M> {
    fn eval<T: Real>(&self, rt: &[T; 6]) -> [[T; 6]; 6] {
        let r = self.map.inverse(rt);
        let (_, j) = jacobian(|z| self.map.forward(z), &r);
        congruence(&j, &self.poisson.eval(&r))
    }
}

/// Largest `|P + P^T|` entry.
pub fn antisymmetry_residual(m: &Mat6) -> f64 {
    let mut r = 0.0f64;
    for i in 0..6 {
        for j in 0..6 {
            r = r.max((m[i][j] + m[j][i]).abs());
        }
    }
    r
}

/// Maximum violation of one hypothesis or conclusion of the reduction theorem.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ClauseReport {
    pub max_residual: f64,
    pub tolerance: f64,
    pub passed: bool,
}

impl ClauseReport {
    fn new(max_residual: f64, tolerance: f64) -> Self {
        ClauseReport {
            max_residual,
            tolerance,
            passed: max_residual <= tolerance,
        }
    }
}

/// Outcome of [`check_key_theorem`].
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct KeyTheoremReport {
    pub probes: usize,
    /// Scale applied to the matrix before clauses (a) and (d).
    pub matrix_scale: f64,
    /// (a) last two rows and columns vanish outside the (5, 6) pair.
    pub block_form: ClauseReport,
    /// (b) `dH/dr6 = 0`.
    pub hamiltonian_r6_independence: ClauseReport,
    /// (c) the upper-left 4x4 block does not depend on `r5`, `r6`.
    pub block_r56_independence: ClauseReport,
    /// (d) fifth component of `P grad H` vanishes.
    pub frozen_fifth_component: ClauseReport,
}

impl KeyTheoremReport {
    pub fn all_passed(&self) -> bool {
        self.block_form.passed
            && self.hamiltonian_r6_independence.passed
            && self.block_r56_independence.passed
            && self.frozen_fifth_component.passed
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct KeyTheoremOptions {
    /// Multiplies the matrix before clauses (a) and (d). Use `epsilon` when
    /// the (5, 6) pair is `1/epsilon`.
    pub matrix_scale: f64,
    pub tolerance: f64,
}

impl Default for KeyTheoremOptions {
    fn default() -> Self {
        KeyTheoremOptions {
            matrix_scale: 1.0,
            tolerance: 1e-10,
        }
    }
}

/// Evaluates the four clauses of the reduction theorem at every probe.
/// Violations are report content, never errors.
pub fn check_key_theorem<P, H>(p: &P, h: &H, probes: &[State], opts: &KeyTheoremOptions) -> KeyTheoremReport
where
    P: PoissonMatrixFn,
    H: PhaseFunction,
{
    let s = opts.matrix_scale;
    let (mut a, mut b, mut c, mut d) = (0.0f64, 0.0f64, 0.0f64, 0.0f64);
    for r in probes {
        let m = p.matrix(r);
        for i in 4..6 {
            for j in 0..4 {
                a = a.max((s * m[i][j]).abs()).max((s * m[j][i]).abs());
            }
        }
        let g = h.gradient(r);
        b = b.max(g[5].abs());
        for k in [4, 5] {
            let mut e = [0.0; 6];
            e[k] = 1.0;
            for i in 0..4 {
                for j in 0..4 {
                    let (_, dm) = directional(|z| p.eval(z)[i][j], r, &e);
                    c = c.max(dm.abs());
                }
            }
        }
        d = d.max((s * dot(&m[4], &g)).abs());
    }
    let tol = opts.tolerance;
    KeyTheoremReport {
        probes: probes.len(),
        matrix_scale: s,
        block_form: ClauseReport::new(a, tol),
        hamiltonian_r6_independence: ClauseReport::new(b, tol),
        block_r56_independence: ClauseReport::new(c, tol),
        frozen_fifth_component: ClauseReport::new(d, tol),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::{hamiltonian_canonical, hamiltonian_usual, rhs_usual, UsualState};
    use crate::fields::{Domain, FieldSpec, Magnet, Potential};
    use crate::linalg::max_abs_diff;

    struct HalfMomentum;
    impl PhaseFunction for HalfMomentum {
        fn eval<T: Real>(&self, r: &[T; 6]) -> T {
            (r[3] * r[3] + r[4] * r[4] + r[5] * r[5]) * 0.5
        }
    }

    struct Usual<'a>(&'a FieldSpec, ScalingParams);
    impl PhaseFunction for Usual<'_> {
        fn eval<T: Real>(&self, r: &[T; 6]) -> T {
            hamiltonian_usual(self.0, &self.1, r)
        }
    }

    struct Canonical<'a>(&'a FieldSpec, ScalingParams);
    impl PhaseFunction for Canonical<'_> {
        fn eval<T: Real>(&self, r: &[T; 6]) -> T {
            hamiltonian_canonical(self.0, &self.1, r)
        }
    }

    fn graded() -> FieldSpec {
        FieldSpec::new(Magnet::Graded { b0: 1.0, alpha: 0.0 }, Domain::cube(5.0))
    }

    #[test]
    fn canonical_bracket_of_conjugate_pair() {
        let r = [0.1, 0.2, 0.3, 0.4, 0.5, 0.6];
        assert_eq!(bracket(&CanonicalMatrix, &Coordinate(0), &Coordinate(3), &r), 1.0);
        assert_eq!(bracket(&CanonicalMatrix, &Coordinate(3), &Coordinate(0), &r), -1.0);
        assert_eq!(bracket(&CanonicalMatrix, &HalfMomentum, &HalfMomentum, &r), 0.0);
        assert_eq!(bracket(&CanonicalMatrix, &Constant(3.0), &HalfMomentum, &r), 0.0);
    }

    #[test]
    fn free_particle_flow() {
        let r = [0.1, 0.2, 0.3, 0.4, 0.5, 0.6];
        assert_eq!(
            hamiltonian_vector_field(&CanonicalMatrix, &HalfMomentum, &r),
            [0.4, 0.5, 0.6, 0.0, 0.0, 0.0]
        );
        assert_eq!(
            hamiltonian_vector_field(&CanonicalMatrix, &HalfMomentum, &[0.0; 6]),
            [0.0; 6]
        );
    }

    #[test]
    fn usual_matrix_entry_from_canonical_transform() {
        let f = graded();
        let s = ScalingParams::new(0.25, 0.5).unwrap();
        let chart = CanonicalChart { model: &f, scaling: s };
        let back = Inverted(&chart);
        let pt = transform_poisson(&CanonicalMatrix, &back);
        let m = pt.try_matrix(&[0.3, -0.2, 0.1, 1.0, 0.5, -0.4]).unwrap();
        assert!((m[4][5] - 4.0).abs() < 1e-12);
        let direct = UsualPoissonMatrix { model: &f, scaling: s }.matrix(&[0.3, -0.2, 0.1, 1.0, 0.5, -0.4]);
        assert!(max_abs_diff(&m, &direct) < 1e-12);
    }

    #[test]
    fn bracket_mode_agrees_with_conjugation() {
        let f = FieldSpec::new(Magnet::ScrewPinch { b0: 1.5, pitch: 0.3 }, Domain::cube(5.0));
        let s = ScalingParams::new(0.1, 0.5).unwrap();
        let chart = CanonicalChart { model: &f, scaling: s };
        let back = Inverted(&chart);
        let r = [0.5, 1.0, -0.7, 0.2, -0.3, 0.9];
        let a = transform_poisson(&CanonicalMatrix, &back).try_matrix(&r).unwrap();
        let b = transform_poisson(&CanonicalMatrix, &back)
            .with_mode(TransformMode::CoordinateBrackets)
            .try_matrix(&r)
            .unwrap();
        assert!(max_abs_diff(&a, &b) < 1e-12);
        assert!(antisymmetry_residual(&a) < 1e-12);
    }

    #[test]
    fn canonical_hamiltonian_pulls_back_to_usual() {
        let f = graded().with_potentials(
            Potential::Linear {
                gradient: [0.2, 0.0, -0.1],
            },
            Potential::Sinusoidal {
                amplitude: 0.1,
                wavevector: [1.0, 0.0, 0.0],
            },
        );
        let s = ScalingParams::new(0.1, 0.5).unwrap();
        let chart = CanonicalChart { model: &f, scaling: s };
        let back = Inverted(&chart);
        let hc = Canonical(&f, s);
        let hu = transform_hamiltonian(&hc, &back);
        let r = [0.3, 1.2, -0.4, 0.7, -1.1, 0.25];
        assert!((hu.value(&r) - Usual(&f, s).value(&r)).abs() < 1e-12);
    }

    #[test]
    fn usual_vector_field_is_the_equation_of_motion() {
        let f = FieldSpec::new(Magnet::ScrewPinch { b0: 1.0, pitch: 0.2 }, Domain::cube(5.0)).with_potentials(
            Potential::Linear {
                gradient: [0.0, 0.3, 0.0],
            },
            Potential::Zero,
        );
        let s = ScalingParams::new(0.05, 0.5).unwrap();
        let r = [0.4, -0.2, 0.8, 1.0, 0.3, -0.6];
        let x = hamiltonian_vector_field(&UsualPoissonMatrix { model: &f, scaling: s }, &Usual(&f, s), &r);
        let y = rhs_usual(&f, &s, &UsualState::from_array(&r)).unwrap();
        for i in 0..6 {
            assert!((x[i] - y[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn identity_transform_leaves_matrix_unchanged() {
        let f = graded();
        let s = ScalingParams::new(0.1, 0.5).unwrap();
        let p = UsualPoissonMatrix { model: &f, scaling: s };
        let r = [0.1, 0.2, 0.3, 0.4, 0.5, 0.6];
        let t = transform_poisson(&p, &IdentityMap).try_matrix(&r).unwrap();
        assert!(max_abs_diff(&t, &p.matrix(&r)) < 1e-15);
    }

    struct BlockForm;
    impl PoissonMatrixFn for BlockForm {
        fn eval<T: Real>(&self, r: &[T; 6]) -> [[T; 6]; 6] {
            let mut m = [[T::zero(); 6]; 6];
            m[0][1] = r[2] * r[3] + 1.0;
            m[1][0] = -m[0][1];
            m[2][3] = r[0].sin();
            m[3][2] = -m[2][3];
            m[4][5] = T::one();
            m[5][4] = -T::one();
            m
        }
    }

    struct GoodH;
    impl PhaseFunction for GoodH {
        fn eval<T: Real>(&self, r: &[T; 6]) -> T {
            r[0] * r[1] + r[3] * r[3] + r[4] * r[2]
        }
    }

    struct BadH;
    impl PhaseFunction for BadH {
        fn eval<T: Real>(&self, r: &[T; 6]) -> T {
            r[0] + r[5].sin()
        }
    }

    #[test]
    fn key_theorem_checker() {
        let probes = [[0.1, 0.2, 0.3, 0.4, 0.5, 0.6], [1.0, -1.0, 0.5, 0.0, 2.0, -3.0]];
        let ok = check_key_theorem(&BlockForm, &GoodH, &probes, &KeyTheoremOptions::default());
        assert!(ok.all_passed(), "{ok:?}");
        let bad = check_key_theorem(&BlockForm, &BadH, &probes, &KeyTheoremOptions::default());
        assert!(!bad.hamiltonian_r6_independence.passed);
        assert!(bad.frozen_fifth_component.max_residual > 0.1);
        assert!(bad.block_form.passed && bad.block_r56_independence.passed);
    }
}
