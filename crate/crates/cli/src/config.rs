use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use hamid_core::{AuxConstraints, ExperimentConfig, FitConstraints, ModelKind, PadPolicy, ScalingConfig, Truth};
use serde::{Deserialize, Serialize};

/// Run description read from `--config`. Command-line flags override it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub experiment: Option<ExperimentConfig>,
    /// Generating parameters; absent when only analyzing recorded series.
    #[serde(default)]
    pub truth: Option<Truth>,
    #[serde(default = "default_model")]
    pub model: ModelKind,
    #[serde(default)]
    pub constraints: FitConstraints,
    #[serde(default = "default_outputs")]
    pub outputs: PathBuf,
    /// One replicate per seed. Empty means the experiment's own seed.
    #[serde(default)]
    pub replicate_seeds: Vec<u64>,
    #[serde(default)]
    pub scaling: Option<ScalingConfig>,
    /// Series files to characterize.
    #[serde(default)]
    pub inputs: Vec<PathBuf>,
    #[serde(default)]
    pub noiseless: bool,
    #[serde(default)]
    pub sigma_level: Option<f64>,
    #[serde(default = "default_pad")]
    pub pad: PadPolicy,
}

fn default_model() -> ModelKind {
    ModelKind::Dephasing
}

fn default_outputs() -> PathBuf {
    PathBuf::from(".")
}

fn default_pad() -> PadPolicy {
    PadPolicy::Auto
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            experiment: None,
            truth: None,
            model: default_model(),
            constraints: FitConstraints::default(),
            outputs: default_outputs(),
            replicate_seeds: Vec::new(),
            scaling: None,
            inputs: Vec::new(),
            noiseless: false,
            sigma_level: None,
            pad: default_pad(),
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        serde_json::from_str(&text).with_context(|| format!("parsing config {}", path.display()))
    }

    pub fn experiment(&self) -> anyhow::Result<&ExperimentConfig> {
        let cfg = self.experiment.as_ref().context("config has no `experiment` section")?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn truth(&self) -> anyhow::Result<&Truth> {
        let t = self.truth.as_ref().context("config has no `truth` section")?;
        t.hamiltonian()?;
        t.rates()?;
        Ok(t)
    }

    /// Seeds of the replicates to run, in order.
    pub fn seeds(&self) -> anyhow::Result<Vec<u64>> {
        if self.replicate_seeds.is_empty() {
            Ok(vec![self.experiment()?.seed])
        } else {
            Ok(self.replicate_seeds.clone())
        }
    }
}

/// Constraints file contents: either the output of `hamid aux` or explicit
/// fit constraints.
#[derive(Debug, Deserialize)]
#[serde(untagged)]
enum ConstraintsFile {
    Aux(AuxConstraints),
    Fit(FitConstraints),
}

pub fn load_constraints(path: &Path) -> anyhow::Result<FitConstraints> {
    let text = fs::read_to_string(path).with_context(|| format!("reading constraints {}", path.display()))?;
    let parsed: ConstraintsFile =
        serde_json::from_str(&text).with_context(|| format!("parsing constraints {}", path.display()))?;
    let c = match parsed {
        ConstraintsFile::Aux(aux) => {
            if !(aux.gamma_plus >= 0.0 && aux.gamma_minus >= 0.0 && aux.gamma_sum > 0.0) {
                bail!("auxiliary constraints in {} are not usable rates", path.display());
            }
            FitConstraints::from_aux(&aux)
        }
        ConstraintsFile::Fit(c) => c,
    };
    c.validate()?;
    Ok(c)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_config_uses_defaults() {
        let c: RunConfig = serde_json::from_str(r#"{"experiment": {"dt": 0.015, "n_t": 1000, "n_e": 50}}"#).unwrap();
        assert_eq!(c.model, ModelKind::Dephasing);
        assert_eq!(c.outputs, PathBuf::from("."));
        assert_eq!(c.seeds().unwrap(), vec![0]);
    }

    #[test]
    fn unknown_fields_rejected() {
        assert!(serde_json::from_str::<RunConfig>(r#"{"experimnt": {}}"#).is_err());
    }

    #[test]
    fn constraints_accept_both_shapes() {
        let dir = tempfile::tempdir().unwrap();
        let aux = dir.path().join("aux.json");
        fs::write(&aux, r#"{"gamma_sum": 6.0, "z_inf": -0.6667, "gamma_plus": 1.0, "gamma_minus": 5.0}"#).unwrap();
        let c = load_constraints(&aux).unwrap();
        assert_eq!(c.sum_gamma, Some(6.0));
        assert_eq!(c.ratio_gamma, Some(5.0));

        let fit = dir.path().join("fit.json");
        fs::write(&fit, r#"{"fixed": {"gamma_z": 0.1}}"#).unwrap();
        let c = load_constraints(&fit).unwrap();
        assert_eq!(c.fixed.len(), 1);
    }
}
