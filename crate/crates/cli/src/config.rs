use std::path::{Path, PathBuf};

use gyroreduce::darboux::DarbouxConfig;
use gyroreduce::fields::{FieldSpec, ScalingParams};
use gyroreduce::lie::LieConfig;
use gyroreduce::reduced::TokamakModel;
use gyroreduce::scenario::{find, Scenario};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::CliError;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScalingConfig {
    pub epsilon: f64,
    pub kappa: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct IntegratorConfig {
    /// Full-orbit step; defaults to one gyration period over `steps_per_period`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dt: Option<f64>,
    pub t_end: f64,
    pub steps_per_period: usize,
    /// Comparison samples for `compare` and `sweep`.
    pub samples: usize,
    pub reduced_substeps: usize,
}

impl Default for IntegratorConfig {
    fn default() -> Self {
        IntegratorConfig {
            dt: None,
            t_end: 1.0,
            steps_per_period: 64,
            samples: 10,
            reduced_substeps: 10,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitialState {
    pub x: [f64; 3],
    pub v: [f64; 3],
}

/// Every tolerance a subcommand checks against.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Tolerances {
    /// Relative energy drift of `orbit`.
    pub energy_drift: f64,
    /// Poisson transformation law, entrywise and for `P grad H`.
    pub transform: f64,
    /// `|P56| eps v_perp / |B| - 1` in constant-direction fields.
    pub cylindrical: f64,
    /// Darboux brackets at most `bracket_factor * eps`.
    pub bracket_factor: f64,
    /// `eps {theta, k}` within `1 +- theta_k_band * eps`, up to sign.
    pub theta_k_band: f64,
    /// `|k_series - k_numeric|` at most `k_series_factor * eps^(order + 1)`.
    pub k_series_factor: f64,
    /// Key theorem clauses (a), (b), (d) at most `key_theorem_factor * eps^2`.
    pub key_theorem_factor: f64,
    /// Angular residual after the Lie transform at most `lie_residual_factor * eps^2`.
    pub lie_residual_factor: f64,
    /// Symplecticity defect of the Lie flow at most `symplectic_factor * eps^2`.
    pub symplectic_factor: f64,
    /// Allowed post-residual ratio per halving of epsilon.
    pub lie_ratio: [f64; 2],
    /// Smallest accepted convergence order in `sweep`.
    pub min_order: f64,
    /// Relative `j` drift at most `j_drift_factor * eps`.
    pub j_drift_factor: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Tolerances {
            energy_drift: 1e-4,
            transform: 1e-9,
            cylindrical: 1e-9,
            bracket_factor: 2.0,
            theta_k_band: 10.0,
            k_series_factor: 1.0,
            key_theorem_factor: 1.0,
            lie_residual_factor: 1.0,
            symplectic_factor: 1.0,
            lie_ratio: [3.2, 4.8],
            min_order: 0.8,
            j_drift_factor: 5.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub scenario: String,
    /// Replaces the registry field of the scenario.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub field: Option<FieldSpec>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tokamak: Option<TokamakModel>,
    pub scaling: ScalingConfig,
    pub integrator: IntegratorConfig,
    /// Drawn from the seeded generator when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub initial_state: Option<InitialState>,
    pub darboux: DarbouxConfig,
    pub lie: LieConfig,
    pub sweep: Vec<f64>,
    /// Random probe points per check.
    pub probes: usize,
    pub seed: u64,
    pub output_dir: PathBuf,
    pub tolerances: Tolerances,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            scenario: "uniform".into(),
            field: None,
            tokamak: None,
            scaling: ScalingConfig {
                epsilon: 1e-2,
                kappa: 0.5,
            },
            integrator: IntegratorConfig::default(),
            initial_state: None,
            darboux: DarbouxConfig::default(),
            lie: LieConfig::default(),
            sweep: vec![1e-2, 5e-3, 2.5e-3],
            probes: 8,
            seed: 0,
            output_dir: PathBuf::from("out"),
            tolerances: Tolerances::default(),
        }
    }
}

fn invalid(msg: impl Into<String>) -> CliError {
    CliError::Config(msg.into())
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| invalid(format!("{}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self, CliError> {
        let cfg: RunConfig = serde_json::from_str(text).map_err(|e| invalid(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        self.scaling_params()?;
        self.scenario()?;
        self.darboux.validate().map_err(|e| invalid(e.to_string()))?;
        let it = &self.integrator;
        if let Some(dt) = it.dt {
            if !(dt > 0.0 && dt.is_finite()) {
                return Err(invalid(format!("integrator.dt must be positive, got {dt}")));
            }
        }
        if !(it.t_end > 0.0 && it.t_end.is_finite()) {
            return Err(invalid(format!("integrator.t_end must be positive, got {}", it.t_end)));
        }
        if it.steps_per_period < 32 || it.samples == 0 || it.reduced_substeps == 0 {
            return Err(invalid(
                "integrator needs steps_per_period >= 32 and positive samples and reduced_substeps",
            ));
        }
        if self.lie.nodes == 0 || self.lie.flow_steps == 0 {
            return Err(invalid("lie.nodes and lie.flow_steps must be positive"));
        }
        if self.probes == 0 {
            return Err(invalid("probes must be positive"));
        }
        if self.sweep.iter().any(|e| !(*e > 0.0 && *e <= 1.0)) {
            return Err(invalid("sweep values must lie in (0, 1]"));
        }
        if self.sweep.windows(2).any(|w| !(w[1] < w[0])) {
            return Err(invalid("sweep values must be strictly decreasing"));
        }
        let t = &self.tolerances;
        let all = [
            t.energy_drift,
            t.transform,
            t.cylindrical,
            t.bracket_factor,
            t.theta_k_band,
            t.k_series_factor,
            t.key_theorem_factor,
            t.lie_residual_factor,
            t.symplectic_factor,
            t.j_drift_factor,
        ];
        if all.iter().any(|v| !(*v > 0.0 && v.is_finite())) || !(t.lie_ratio[0] < t.lie_ratio[1]) {
            return Err(invalid("tolerances must be positive and finite"));
        }
        Ok(())
    }

    /// `eta` is always derived from `epsilon` and `kappa`.
    pub fn scaling_params(&self) -> Result<ScalingParams, CliError> {
        ScalingParams::new(self.scaling.epsilon, self.scaling.kappa).map_err(|e| invalid(e.to_string()))
    }

    /// Registry scenario with the configured overrides applied.
    pub fn scenario(&self) -> Result<Scenario, CliError> {
        let mut s = find(&self.scenario).map_err(|e| invalid(e.to_string()))?;
        if let Some(f) = self.field {
            s.field = f;
        }
        if let Some(t) = self.tokamak {
            s.tokamak = Some(t);
        }
        s.field.validate().map_err(|e| invalid(e.to_string()))?;
        Ok(s)
    }

    /// SHA-256 of the canonical JSON encoding.
    pub fn hash(&self) -> String {
        let text = serde_json::to_string(self).expect("config serializes");
        Sha256::digest(text.as_bytes()).iter().map(|b| format!("{b:02x}")).collect()
    }
}
