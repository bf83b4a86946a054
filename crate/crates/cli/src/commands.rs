use std::f64::consts::PI;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::Path;

use gyroreduce::ad::Real;
use gyroreduce::cylindrical::{from_cyl, poisson_matrix_cyl, CylState, PerpFrame};
use gyroreduce::darboux::{
    darboux_brackets, darboux_map, hamiltonian_darboux, k_numeric, k_series, write_series_csv, CharacteristicField,
    DarbouxConfig, DarbouxMap, PulledBackHamiltonian,
};
use gyroreduce::dynamics::{gyro_period, hamiltonian_usual, integrate_usual, rhs_usual, StepGuard, UsualState};
use gyroreduce::fields::{field_strength, FieldModel, FieldSpec, ScalingParams};
use gyroreduce::lie::{
    hamiltonian_lie, lie_flow, measured_orders, solve_homological_first_order, theta_residual, write_residual_csv,
    BlockPoisson, LieConfig, ResidualRow,
};
use gyroreduce::linalg::{max_abs_diff, State};
use gyroreduce::poisson::{
    check_key_theorem, hamiltonian_vector_field, transform_poisson, usual_poisson_from_potential, CanonicalChart,
    CanonicalMatrix, CoordinateMap, Inverted, KeyTheoremOptions, PhaseFunction, PoissonMatrixFn,
};
use gyroreduce::reduced::{compare_full_vs_reduced, compare_sweep, convergence_orders, CompareOptions};
use gyroreduce::scenario::{registry, Scenario, Stage};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::config::RunConfig;
use crate::report::{csv_row, Bound, Report};
use crate::CliError;

struct Setup {
    cfg: RunConfig,
    scenario: Scenario,
    scaling: ScalingParams,
}

impl Setup {
    fn new(cfg: &RunConfig) -> Result<Self, CliError> {
        Ok(Setup {
            scenario: cfg.scenario()?,
            scaling: cfg.scaling_params()?,
            cfg: cfg.clone(),
        })
    }

    fn field(&self) -> &FieldSpec {
        &self.scenario.field
    }

    fn eps(&self) -> f64 {
        self.scaling.epsilon()
    }

    fn rng(&self, stream: u64) -> ChaCha8Rng {
        let mut r = ChaCha8Rng::seed_from_u64(self.cfg.seed);
        r.set_stream(stream);
        r
    }

    fn report(&self, command: &str) -> Report {
        Report::new(command, &self.scenario.name, self.cfg.hash(), self.cfg.seed)
    }

    /// Cylindrical points with `v_perp` in `[0.3, 1)`, away from the domain walls.
    fn cyl_probes(&self, n: usize, stream: u64) -> Vec<State> {
        let mut r = self.rng(stream);
        let d = self.field().domain;
        let m: [f64; 3] = std::array::from_fn(|i| 0.2 * (d.hi[i] - d.lo[i]).min(1.5));
        (0..n)
            .map(|_| {
                [
                    r.gen_range(d.lo[0] + m[0]..d.hi[0] - m[0]),
                    r.gen_range(d.lo[1] + m[1]..d.hi[1] - m[1]),
                    r.gen_range(d.lo[2] + m[2]..d.hi[2] - m[2]),
                    r.gen_range(-1.0..1.0),
                    r.gen_range(0.3..1.0),
                    r.gen_range(0.0..2.0 * PI),
                ]
            })
            .collect()
    }

    fn initial_state(&self) -> Result<UsualState, CliError> {
        if let Some(s) = self.cfg.initial_state {
            return Ok(UsualState::new(s.x, s.v));
        }
        let mut c = self.cyl_probes(1, 0)[0];
        c[3] *= 0.8;
        c[4] *= 0.8;
        Ok(from_cyl(self.field(), PerpFrame::default(), &CylState::from_array(&c))?)
    }

    fn compare_options(&self) -> CompareOptions {
        let it = &self.cfg.integrator;
        CompareOptions {
            t_end: it.t_end,
            samples: it.samples,
            steps_per_period: it.steps_per_period,
            reduced_substeps: it.reduced_substeps,
            darboux: self.cfg.darboux,
            lie: self.cfg.lie,
        }
    }

    fn out_file(&self, report: &mut Report, name: &str) -> Result<BufWriter<File>, CliError> {
        let dir = &self.cfg.output_dir;
        fs::create_dir_all(dir).map_err(|e| CliError::Io(format!("{}: {e}", dir.display())))?;
        let path = dir.join(name);
        report.artifacts.push(path.display().to_string());
        File::create(&path)
            .map(BufWriter::new)
            .map_err(|e| CliError::Io(format!("{}: {e}", path.display())))
    }
}

fn io_err(e: std::io::Error) -> CliError {
    CliError::Io(e.to_string())
}

struct UsualH<'a>(&'a FieldSpec, ScalingParams);
impl PhaseFunction for UsualH<'_> {
    fn eval<T: Real>(&self, r: &[T; 6]) -> T {
        hamiltonian_usual(self.0, &self.1, r)
    }
}

pub fn orbit(cfg: &RunConfig) -> Result<Report, CliError> {
    let su = Setup::new(cfg)?;
    su.scenario.require(Stage::Orbit)?;
    let f = su.field();
    let s0 = su.initial_state()?;
    let dt = cfg
        .integrator
        .dt
        .unwrap_or_else(|| gyro_period(&su.scaling, f.max_field_strength()) / cfg.integrator.steps_per_period as f64);
    let traj = integrate_usual(f, &su.scaling, &s0, cfg.integrator.t_end, dt, StepGuard::gyro(f, &su.scaling))?;
    let h0 = hamiltonian_usual(f, &su.scaling, &traj.states[0]);
    let drift = traj
        .states
        .iter()
        .map(|s| (hamiltonian_usual(f, &su.scaling, s) - h0).abs() / h0.abs())
        .fold(0.0, f64::max);
    let mut rep = su.report("orbit");
    rep.check("energy_drift_relative", drift, Bound::AtMost(cfg.tolerances.energy_drift));
    rep.set("initial_state", s0.to_array());
    rep.set("final_state", traj.last());
    rep.set("steps", traj.len() - 1);
    rep.set("dt", traj.times.get(1).copied().unwrap_or(0.0));
    let mut w = su.out_file(&mut rep, "trajectory.csv")?;
    traj.write_csv(&mut w).map_err(io_err)?;
    w.flush().map_err(io_err)?;
    Ok(rep)
}

struct Pipeline<'a> {
    map: DarbouxMap<'a, FieldSpec>,
}

fn darboux_for<'a>(su: &'a Setup, scaling: &ScalingParams, darboux: DarbouxConfig) -> Result<Pipeline<'a>, CliError> {
    Ok(Pipeline {
        map: darboux_map(su.field(), scaling, PerpFrame::default(), darboux)?,
    })
}

#[derive(Serialize)]
struct LieMeasurement {
    epsilon: f64,
    pre: f64,
    post: f64,
    symplectic: f64,
    clause_a: f64,
    clause_b: f64,
    clause_c: f64,
    clause_d: f64,
}

/// Angular residuals, symplecticity defect and key-theorem clauses of the
/// first-order pipeline at one epsilon.
fn lie_measure(su: &Setup, eps: f64, probes: &[State], key_probes: usize) -> Result<LieMeasurement, CliError> {
    let s = su.scaling.with_epsilon(eps)?;
    let f = su.field();
    let lie: LieConfig = su.cfg.lie;
    let p = darboux_for(su, &s, DarbouxConfig { order: 1, ..su.cfg.darboux })?;
    let hbar = hamiltonian_darboux(f, &s, &p.map, 1)?;
    let gen = solve_homological_first_order(&hbar, &lie)?;
    for w in probes {
        gen.check(w)?;
    }
    let pbar = BlockPoisson {
        map: &p.map,
        newton_steps: lie.newton_steps,
    };
    let zeta = lie_flow(&gen, &pbar, eps, &lie);
    let full = PulledBackHamiltonian {
        map: &p.map,
        model: f,
        scaling: s,
        newton_steps: lie.newton_steps,
    };
    let hhat = hamiltonian_lie(&full, &zeta);
    let kt = check_key_theorem(
        &pbar,
        &hhat,
        &probes[..key_probes.min(probes.len())],
        &KeyTheoremOptions {
            matrix_scale: eps,
            tolerance: f64::INFINITY,
        },
    );
    let tp = transform_poisson(&pbar, &zeta);
    let symplectic = probes
        .iter()
        .map(|w| {
            let z = zeta.forward(w);
            max_abs_diff(&tp.matrix(&z), &pbar.matrix(&z))
        })
        .fold(0.0, f64::max);
    Ok(LieMeasurement {
        epsilon: eps,
        pre: theta_residual(&full, probes, 16),
        post: theta_residual(&hhat, probes, 16),
        symplectic,
        clause_a: kt.block_form.max_residual,
        clause_b: kt.hamiltonian_r6_independence.max_residual,
        clause_c: kt.block_r56_independence.max_residual,
        clause_d: kt.frozen_fifth_component.max_residual,
    })
}

/// Darboux-chart probes: `(y, u, k, theta)` with `k` in `[0.05, 0.4)`.
fn lie_probes(su: &Setup, n: usize) -> Vec<State> {
    su.cyl_probes(n, 7)
        .into_iter()
        .map(|c| [c[0], c[1], c[2], c[3], 0.05 + 0.5 * (c[4] - 0.3), c[5]])
        .collect()
}

pub fn verify_structure(cfg: &RunConfig) -> Result<Report, CliError> {
    let su = Setup::new(cfg)?;
    su.scenario.require(Stage::Structure)?;
    let f = su.field();
    let s = su.scaling;
    let tol = &cfg.tolerances;
    let mut rep = su.report("verify-structure");
    let mut r = su.rng(1);
    let d = f.domain;
    let (mut mat, mut flow) = (0.0f64, 0.0f64);
    for _ in 0..cfg.probes {
        let x: [f64; 3] = std::array::from_fn(|k| r.gen_range(d.lo[k]..d.hi[k]));
        let v: [f64; 3] = std::array::from_fn(|_| r.gen_range(-1.0..1.0));
        let pt = [x[0], x[1], x[2], v[0], v[1], v[2]];
        let chart = CanonicalChart { model: f, scaling: s };
        let back = Inverted(&chart);
        let tp = transform_poisson(&CanonicalMatrix, &back);
        mat = mat.max(max_abs_diff(&tp.try_matrix(&pt)?, &usual_poisson_from_potential(f, &s, &x)));
        let xh = hamiltonian_vector_field(&tp, &UsualH(f, s), &pt);
        let rhs = rhs_usual(f, &s, &UsualState::new(x, v))?;
        flow = (0..6).map(|k| (xh[k] - rhs[k]).abs()).fold(flow, f64::max);
    }
    rep.check("canonical_to_usual_matrix", mat, Bound::AtMost(tol.transform));
    rep.check("hamiltonian_vector_field_vs_rhs", flow, Bound::AtMost(tol.transform));
    let mut skipped = Vec::new();
    if f.constant_direction().is_some() {
        let p = poisson_matrix_cyl(f, &s, PerpFrame::default());
        let mut worst = 0.0f64;
        for c in su.cyl_probes(cfg.probes, 2) {
            let m = p.try_matrix(&c)?;
            let b = field_strength(f, &[c[0], c[1], c[2]]);
            worst = worst.max((m[4][5].abs() * s.epsilon() * c[4] / b - 1.0).abs());
        }
        rep.check("cylindrical_gyro_pair", worst, Bound::AtMost(tol.cylindrical));
    } else {
        skipped.push("cylindrical_gyro_pair");
    }
    if su.scenario.stages().darboux {
        let p = darboux_for(&su, &s, cfg.darboux)?;
        let b = darboux_brackets(&p.map, &su.cyl_probes(cfg.probes, 3))?;
        let eps = su.eps();
        let [lo, hi] = b.theta_k_scaled;
        rep.check("darboux_offblock_brackets", b.max_offblock, Bound::AtMost(tol.bracket_factor * eps));
        rep.check(
            "darboux_theta_k_scaled_abs",
            if lo.abs() > hi.abs() { lo.abs() } else { hi.abs() },
            Bound::Within([1.0 - tol.theta_k_band * eps, 1.0 + tol.theta_k_band * eps]),
        );
        rep.check("darboux_theta_k_sign_constant", (lo * hi).signum(), Bound::AtLeast(1.0));
        rep.set("darboux_brackets", &b);
        let lm = lie_measure(&su, eps, &lie_probes(&su, 2), 2)?;
        let bound = Bound::AtMost(tol.key_theorem_factor * eps * eps);
        rep.check("key_theorem_block_form", lm.clause_a, bound);
        rep.check("key_theorem_hamiltonian_angle_independence", lm.clause_b, bound);
        rep.check("key_theorem_frozen_fifth_component", lm.clause_d, bound);
        rep.set("key_theorem_block_r56_dependence", lm.clause_c);
    } else {
        skipped.push("darboux_brackets");
        skipped.push("key_theorem");
    }
    rep.set("skipped", skipped);
    rep.set("probes", cfg.probes);
    Ok(rep)
}

pub fn darboux(cfg: &RunConfig) -> Result<Report, CliError> {
    let su = Setup::new(cfg)?;
    su.scenario.require(Stage::Darboux)?;
    let eps = su.eps();
    let tol = &cfg.tolerances;
    let p = darboux_for(&su, &su.scaling, cfg.darboux)?;
    let probes = su.cyl_probes(cfg.probes, 3);
    let b = darboux_brackets(&p.map, &probes)?;
    let mut rep = su.report("darboux");
    let order = cfg.darboux.order as i32;
    rep.check(
        "darboux_offblock_brackets",
        b.max_offblock,
        Bound::AtMost(tol.bracket_factor * eps.powi(order.max(1))),
    );
    let cf = CharacteristicField::new(su.field(), &su.scaling, PerpFrame::default());
    let mut kerr = 0.0f64;
    for c in &probes {
        kerr = kerr.max((k_series(&cf, c, &cfg.darboux)? - k_numeric(&cf, c, &cfg.darboux)?).abs());
    }
    rep.check(
        "k_series_vs_numeric",
        kerr,
        Bound::AtMost(tol.k_series_factor * eps.powi(order + 1)),
    );
    rep.set("brackets", &b);
    let mut w = su.out_file(&mut rep, "darboux_series.csv")?;
    write_series_csv(&p.map, &probes, &mut w).map_err(io_err)?;
    w.flush().map_err(io_err)?;
    Ok(rep)
}

pub fn lie(cfg: &RunConfig) -> Result<Report, CliError> {
    let su = Setup::new(cfg)?;
    su.scenario.require(Stage::Lie)?;
    let eps = su.eps();
    let tol = &cfg.tolerances;
    let lm = lie_measure(&su, eps, &lie_probes(&su, cfg.probes.min(4)), 1)?;
    let mut rep = su.report("lie");
    rep.check("theta_residual_after", lm.post, Bound::AtMost(tol.lie_residual_factor * eps * eps));
    rep.check("symplecticity_defect", lm.symplectic, Bound::AtMost(tol.symplectic_factor * eps * eps));
    rep.set("theta_residual_before", lm.pre);
    rep.set("measurement", &lm);
    let row = ResidualRow {
        epsilon: eps,
        pre: lm.pre,
        post: lm.post,
        order: None,
    };
    let mut w = su.out_file(&mut rep, "lie_residuals.csv")?;
    write_residual_csv(&[row], &mut w).map_err(io_err)?;
    w.flush().map_err(io_err)?;
    Ok(rep)
}

pub fn compare(cfg: &RunConfig) -> Result<Report, CliError> {
    let su = Setup::new(cfg)?;
    su.scenario.require(Stage::Reduced)?;
    let s0 = su.initial_state()?;
    let r = compare_full_vs_reduced(su.field(), &su.scaling, &s0, &su.compare_options())?;
    let mut rep = su.report("compare");
    rep.check(
        "j_drift_relative",
        r.j_drift,
        Bound::AtMost(cfg.tolerances.j_drift_factor * su.eps()),
    );
    rep.set("initial_state", s0.to_array());
    rep.set("position_error", r.position_error);
    rep.set("parallel_error", r.parallel_error);
    rep.set("integrator_tolerance", r.integrator_tolerance);
    let mut w = su.out_file(&mut rep, "compare.csv")?;
    writeln!(w, "t,full1,full2,full3,full4,full5,full6,red1,red2,red3,red4,red5,red6").map_err(io_err)?;
    for ((t, a), b) in r.times.iter().zip(&r.full).zip(&r.reduced) {
        let mut row = vec![*t];
        row.extend_from_slice(a);
        row.extend_from_slice(b);
        writeln!(w, "{}", csv_row(&row)).map_err(io_err)?;
    }
    w.flush().map_err(io_err)?;
    Ok(rep)
}

#[derive(Serialize)]
struct SweepLine {
    epsilon: f64,
    k_error: f64,
    lie_pre: f64,
    lie_post: f64,
    compare_error: f64,
    j_drift: f64,
}

pub fn sweep(cfg: &RunConfig) -> Result<Report, CliError> {
    let su = Setup::new(cfg)?;
    su.scenario.require(Stage::Reduced)?;
    let tol = &cfg.tolerances;
    let eps = &cfg.sweep;
    if eps.len() < 2 {
        return Err(CliError::Config("sweep needs at least two epsilon values".into()));
    }
    let kprobes = su.cyl_probes(cfg.probes, 3);
    let lprobes = lie_probes(&su, cfg.probes.min(3));
    let zero = DarbouxConfig { order: 0, ..cfg.darboux };
    let per_eps = eps
        .par_iter()
        .map(|&e| -> Result<(f64, LieMeasurement), CliError> {
            let s = su.scaling.with_epsilon(e)?;
            let cf = CharacteristicField::new(su.field(), &s, PerpFrame::default());
            let mut kerr = 0.0f64;
            for c in &kprobes {
                kerr = kerr.max((k_series(&cf, c, &zero)? - k_numeric(&cf, c, &cfg.darboux)?).abs());
            }
            Ok((kerr, lie_measure(&su, e, &lprobes, 0)?))
        })
        .collect::<Result<Vec<_>, _>>()?;
    let s0 = su.initial_state()?;
    let cmp = compare_sweep(su.field(), cfg.scaling.kappa, eps, &[s0], &su.compare_options())?;
    let kerr: Vec<f64> = per_eps.iter().map(|p| p.0).collect();
    let mut rows: Vec<ResidualRow> = per_eps
        .iter()
        .map(|(_, l)| ResidualRow {
            epsilon: l.epsilon,
            pre: l.pre,
            post: l.post,
            order: None,
        })
        .collect();
    measured_orders(&mut rows);
    let mut rep = su.report("sweep");
    for (i, o) in convergence_orders(eps, &kerr).iter().enumerate() {
        rep.check(format!("k_series_order_{}", i + 1), *o, Bound::AtLeast(tol.min_order));
    }
    for i in 1..rows.len() {
        rep.check(
            format!("lie_residual_ratio_{i}"),
            rows[i - 1].post / rows[i].post,
            Bound::Within(tol.lie_ratio),
        );
    }
    for (i, o) in cmp.orders.iter().enumerate() {
        rep.check(format!("full_vs_reduced_order_{}", i + 1), *o, Bound::AtLeast(tol.min_order));
    }
    let lines: Vec<SweepLine> = (0..eps.len())
        .map(|i| SweepLine {
            epsilon: eps[i],
            k_error: kerr[i],
            lie_pre: rows[i].pre,
            lie_post: rows[i].post,
            compare_error: cmp.rows[i].error,
            j_drift: cmp.rows[i].j_drift,
        })
        .collect();
    rep.set("table", &lines);
    let mut w = su.out_file(&mut rep, "sweep.csv")?;
    writeln!(w, "epsilon,k_error,lie_pre,lie_post,compare_error,j_drift").map_err(io_err)?;
    for l in &lines {
        writeln!(
            w,
            "{}",
            csv_row(&[l.epsilon, l.k_error, l.lie_pre, l.lie_post, l.compare_error, l.j_drift])
        )
        .map_err(io_err)?;
    }
    w.flush().map_err(io_err)?;
    Ok(rep)
}

#[derive(Serialize)]
pub struct ScenarioEntry {
    pub name: String,
    pub stages: gyroreduce::scenario::Stages,
    /// A complete run configuration selecting this scenario.
    pub config: RunConfig,
}

pub fn list_scenarios(base: &RunConfig) -> Vec<ScenarioEntry> {
    registry()
        .into_iter()
        .map(|s| ScenarioEntry {
            name: s.name.clone(),
            stages: s.stages(),
            config: RunConfig {
                scenario: s.name.clone(),
                field: Some(s.field),
                tokamak: s.tokamak,
                ..base.clone()
            },
        })
        .collect()
}

pub fn describe(entries: &[ScenarioEntry]) -> String {
    let mut out = String::new();
    for e in entries {
        let st = e.stages;
        let flags: Vec<&str> = [
            ("orbit", st.orbit),
            ("structure", st.structure),
            ("darboux", st.darboux),
            ("lie", st.lie),
            ("reduced", st.reduced),
            ("tokamak", st.tokamak),
        ]
        .iter()
        .filter(|f| f.1)
        .map(|f| f.0)
        .collect();
        let f = e.config.field.expect("registry entries carry a field");
        out.push_str(&format!(
            "{}\n  magnet: {:?}\n  phi0: {:?}\n  phi1: {:?}\n  domain: {:?} .. {:?}\n  stages: {}\n",
            e.name,
            f.magnet,
            f.phi0,
            f.phi1,
            f.domain.lo,
            f.domain.hi,
            flags.join(", ")
        ));
        if let Some(t) = e.config.tokamak {
            out.push_str(&format!("  tokamak: {t:?}\n"));
        }
    }
    out
}

pub fn write_report(cfg: &RunConfig, rep: &Report) -> Result<String, CliError> {
    let text = serde_json::to_string_pretty(rep).expect("report serializes");
    let dir: &Path = &cfg.output_dir;
    fs::create_dir_all(dir).map_err(|e| CliError::Io(format!("{}: {e}", dir.display())))?;
    let path = dir.join(format!("{}_report.json", rep.command));
    fs::write(&path, format!("{text}\n")).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
    Ok(text)
}
