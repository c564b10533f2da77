use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::control::{ControllerConfig, PidGains};
use crate::cso::tuning::{default_gain_bounds, TuningScenario};
use crate::cso::{CsoConfig, InitStrategy, LevySampling};
use crate::dynamics::{ArmParams, Plant, Uncertainty};
use crate::error::{Error, Result};
use crate::reach::{ScriptedPolicy, TaskSpec};
use crate::sac::SacConfig;
use crate::sim::StepReference;

/// Where the controller gains come from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum GainSource {
    Explicit(ControllerConfig),
    /// A gains JSON written by `tune`, relative to the config file.
    File(PathBuf),
    /// Run the tuner before anything else.
    Tune,
}

impl Default for GainSource {
    fn default() -> Self {
        Self::Explicit(ControllerConfig::reference_gains())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CsoSection {
    pub eta: usize,
    pub iterations: usize,
    pub pa: f64,
    pub beta: f64,
    pub bounds: Vec<(f64, f64)>,
    pub init: InitStrategy,
    pub levy: LevySampling,
    pub scenario: TuningScenario,
}

impl Default for CsoSection {
    fn default() -> Self {
        let c = CsoConfig::new(default_gain_bounds(), 0);
        Self {
            eta: c.eta,
            iterations: c.iterations,
            pa: c.pa,
            beta: c.beta,
            bounds: c.bounds,
            init: InitStrategy::LogUniform,
            levy: c.levy,
            scenario: TuningScenario::default(),
        }
    }
}

impl CsoSection {
    pub fn to_config(&self, seed: u64) -> CsoConfig {
        CsoConfig {
            eta: self.eta,
            iterations: self.iterations,
            pa: self.pa,
            beta: self.beta,
            bounds: self.bounds.clone(),
            seed,
            init: self.init,
            levy: self.levy,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum PolicySource {
    Scripted,
    Checkpoint(PathBuf),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunSection {
    pub seed: u64,
    pub out_dir: PathBuf,
    pub uncertainty: Uncertainty,
    /// Evaluation episodes of `run`.
    pub episodes: usize,
    pub policy: PolicySource,
    pub scripted: ScriptedPolicy,
    /// Cycle through the preset targets instead of drawing random ones.
    pub preset_targets: bool,
    /// Step scenario of `simulate`.
    pub reference: StepReference,
    /// PID baseline run alongside the adaptive controller in `simulate`.
    pub pid: Option<PidGains>,
}

impl Default for RunSection {
    fn default() -> Self {
        Self {
            seed: 0,
            out_dir: PathBuf::from("out"),
            uncertainty: Uncertainty::FrictionAndLoad,
            episodes: 4,
            policy: PolicySource::Scripted,
            scripted: ScriptedPolicy::default(),
            preset_targets: true,
            reference: StepReference::uniform(&[0.0, 0.0], 0.1, 0.5),
            pid: Some(PidGains::default()),
        }
    }
}

/// The whole experiment description.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub arm: ArmParams,
    pub controller: GainSource,
    pub cso: CsoSection,
    pub sac: SacConfig,
    pub task: TaskSpec,
    pub run: RunSection,
    /// Directory relative paths are resolved against; set by [`load`].
    #[serde(skip)]
    pub base_dir: PathBuf,
}

impl Default for RunConfig {
    /// The obstacle preset with the reference gains and a scripted policy.
    fn default() -> Self {
        Self {
            arm: ArmParams::default(),
            controller: GainSource::default(),
            cso: CsoSection::default(),
            sac: SacConfig::default(),
            task: TaskSpec::obstacle_preset(),
            run: RunSection::default(),
            base_dir: PathBuf::from("."),
        }
    }
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Read and validate a config file.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let mut cfg = Self::from_json(&text)?;
        cfg.base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let wrap = |e: Error| Error::Config(e.to_string());
        self.arm.validate().map_err(wrap)?;
        self.task.validate().map_err(wrap)?;
        self.sac.validate().map_err(wrap)?;
        self.cso.to_config(self.run.seed).validate().map_err(wrap)?;
        self.cso.scenario.validate().map_err(wrap)?;
        self.run.reference.validate().map_err(wrap)?;
        if let GainSource::Explicit(c) = &self.controller {
            c.validate().map_err(wrap)?;
        }
        if self.arm.dof() != self.task.dof() {
            return Err(Error::Config(format!(
                "arm has {} joints but the task describes {}",
                self.arm.dof(),
                self.task.dof()
            )));
        }
        Ok(())
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    pub fn plant(&self) -> Result<Plant> {
        Plant::new(self.arm.clone(), true, self.run.uncertainty)
    }

    /// SAC settings with the run seed applied.
    pub fn sac_config(&self) -> SacConfig {
        SacConfig { seed: self.run.seed, ..self.sac.clone() }
    }
}
