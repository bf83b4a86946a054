//! Named field configurations and the pipeline stages each one supports.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::dynamics::UsualState;
use crate::error::{Error, Result};
use crate::fields::{Domain, FieldSpec, Magnet, Potential};
use crate::reduced::{QProfile, TokamakField, TokamakGeom, TokamakModel};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Orbit,
    Structure,
    Darboux,
    Lie,
    Reduced,
    Tokamak,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Stages {
    pub orbit: bool,
    pub structure: bool,
    pub darboux: bool,
    pub lie: bool,
    pub reduced: bool,
    pub tokamak: bool,
}

impl Stages {
    pub fn supports(&self, stage: Stage) -> bool {
        match stage {
            Stage::Orbit => self.orbit,
            Stage::Structure => self.structure,
            Stage::Darboux => self.darboux,
            Stage::Lie => self.lie,
            Stage::Reduced => self.reduced,
            Stage::Tokamak => self.tokamak,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub name: String,
    pub field: FieldSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tokamak: Option<TokamakModel>,
}

impl Scenario {
    pub fn stages(&self) -> Stages {
        let pipeline = !matches!(self.field.magnet, Magnet::None) && self.field.constant_direction().is_some();
        Stages {
            orbit: true,
            structure: !matches!(self.field.magnet, Magnet::None),
            darboux: pipeline,
            lie: pipeline,
            reduced: pipeline,
            tokamak: self.tokamak.is_some(),
        }
    }

    pub fn require(&self, stage: Stage) -> Result<()> {
        if self.stages().supports(stage) {
            Ok(())
        } else {
            Err(Error::UnsupportedScenario {
                scenario: self.name.clone(),
                stage: format!("{stage:?}").to_lowercase(),
            })
        }
    }

    /// Random state with position in the domain shrunk by `margin` and
    /// speed at most `vmax`.
    pub fn random_state<R: Rng>(&self, rng: &mut R, margin: f64, vmax: f64) -> UsualState {
        let d = self.field.domain.inset(margin);
        let x = std::array::from_fn(|i| rng.gen_range(d.lo[i]..d.hi[i]));
        let v = loop {
            let v: [f64; 3] = std::array::from_fn(|_| rng.gen_range(-vmax..vmax));
            if v.iter().map(|c| c * c).sum::<f64>() <= vmax * vmax {
                break v;
            }
        };
        UsualState::new(x, v)
    }
}

/// `uniform`, `graded_b` and `tokamak_demo`.
pub fn registry() -> Vec<Scenario> {
    vec![
        Scenario {
            name: "uniform".into(),
            field: FieldSpec::new(Magnet::Uniform { b0: 1.0 }, Domain::cube(2.0)),
            tokamak: None,
        },
        Scenario {
            name: "graded_b".into(),
            field: FieldSpec::new(
                Magnet::Graded { b0: 1.0, alpha: 0.5 },
                Domain {
                    lo: [-5.0, -1.0, -1.0],
                    hi: [5.0, 1.0, 1.0],
                },
            ),
            tokamak: None,
        },
        Scenario {
            name: "tokamak_demo".into(),
            field: FieldSpec::new(Magnet::ScrewPinch { b0: 1.0, pitch: 0.3 }, Domain::cube(1.0)).with_potentials(
                Potential::Linear {
                    gradient: [0.0, 0.05, 0.0],
                },
                Potential::Sinusoidal {
                    amplitude: 0.02,
                    wavevector: [1.0, 2.0, 0.0],
                },
            ),
            tokamak: Some(TokamakModel {
                geom: TokamakGeom {
                    r0: 3.0,
                    q: QProfile::Parabolic { q0: 1.1, q2: 2.0 },
                },
                field: TokamakField::Toroidal { b0: 1.0 },
                electric: [0.05, 0.0, 0.0],
                drifts: true,
            }),
        },
    ]
}

pub fn find(name: &str) -> Result<Scenario> {
    registry()
        .into_iter()
        .find(|s| s.name == name)
        .ok_or_else(|| Error::InvalidArgument(format!("unknown scenario `{name}`")))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn registry_names_and_stages() {
        let r = registry();
        let names: Vec<_> = r.iter().map(|s| s.name.as_str()).collect();
        assert_eq!(names, ["uniform", "graded_b", "tokamak_demo"]);
        assert!(r[0].stages().lie && r[1].stages().reduced);
        let t = &r[2];
        assert!(!t.stages().darboux && t.stages().tokamak);
        assert!(matches!(t.require(Stage::Lie), Err(Error::UnsupportedScenario { .. })));
        for s in &r {
            s.field.validate().unwrap();
        }
    }

    #[test]
    fn unknown_name() {
        assert!(find("stellarator").is_err());
        assert_eq!(find("graded_b").unwrap().name, "graded_b");
    }
}
