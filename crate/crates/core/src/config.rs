//! Run configuration: a TOML file plus command-line overrides.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::analysis::GaugeSpec;
use crate::error::{Error, Result};
use crate::lindblad::DensityMatrix;
use crate::protocol::{MatrixSpec, PathSpec, ProtocolSpec};

/// Environment variable overriding the configured output directory.
pub const OUT_DIR_ENV: &str = "DARKSPACE_OUT_DIR";

/// Below this the adiabatic expansion is not trustworthy; runs go ahead with a warning.
pub const MIN_GAMMA_T: f64 = 10.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Experiment {
    Spin32Purity,
    Sweep,
    GaugeCheck,
    EffectiveVsFull,
    Custom,
}

impl Experiment {
    pub fn name(self) -> &'static str {
        match self {
            Experiment::Spin32Purity => "spin32-purity",
            Experiment::Sweep => "sweep",
            Experiment::GaugeCheck => "gauge-check",
            Experiment::EffectiveVsFull => "effective-vs-full",
            Experiment::Custom => "custom",
        }
    }
}

/// One period or a list of periods.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum GammaT {
    One(f64),
    Many(Vec<f64>),
}

impl GammaT {
    pub fn values(&self) -> Vec<f64> {
        match self {
            GammaT::One(g) => vec![*g],
            GammaT::Many(v) => v.clone(),
        }
    }
}

/// Initial dark state: a Bloch vector (qubit dark spaces) or an explicit
/// density matrix in the dark basis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitialState {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bloch: Option<[f64; 3]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub density: Option<MatrixSpec>,
}

impl Default for InitialState {
    fn default() -> Self {
        Self { bloch: Some([0.0, 0.0, 1.0]), density: None }
    }
}

impl InitialState {
    pub fn to_density(&self) -> Result<DensityMatrix> {
        match (&self.bloch, &self.density) {
            (Some(n), None) => DensityMatrix::from_bloch(*n),
            (None, Some(m)) => DensityMatrix::new(m.to_matrix()?),
            _ => Err(Error::Config("initial state needs exactly one of `bloch` or `density`".into())),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Tolerances {
    pub rtol: f64,
    pub atol: f64,
    pub kernel_tol: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self { rtol: 1e-10, atol: 1e-13, kernel_tol: 1e-13 }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputConfig {
    pub dir: Option<PathBuf>,
    /// File stem of the artifacts; defaults to the experiment name.
    pub stem: Option<String>,
    pub gnuplot: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub experiment: Experiment,
    #[serde(default = "default_protocol")]
    pub protocol: ProtocolSpec,
    #[serde(rename = "gammaT", default = "default_gamma_t")]
    pub gamma_t: GammaT,
    #[serde(default)]
    pub initial: InitialState,
    #[serde(default)]
    pub tolerances: Tolerances,
    #[serde(default)]
    pub output: OutputConfig,
    /// Seeds the random gauge when none is configured.
    #[serde(default)]
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gauge: Option<GaugeSpec>,
    #[serde(default = "default_checkpoints")]
    pub checkpoints: usize,
}

fn default_protocol() -> ProtocolSpec {
    ProtocolSpec::Spin32 { path: PathSpec::simplest() }
}

fn default_gamma_t() -> GammaT {
    GammaT::One(200.0)
}

fn default_checkpoints() -> usize {
    64
}

impl RunConfig {
    /// Defaults for a named experiment.
    pub fn for_experiment(experiment: Experiment) -> Self {
        let gamma_t = match experiment {
            Experiment::Sweep => GammaT::Many(vec![100.0, 200.0, 400.0, 800.0]),
            Experiment::GaugeCheck => GammaT::Many(vec![100.0, 200.0]),
            _ => default_gamma_t(),
        };
        Self {
            experiment,
            protocol: default_protocol(),
            gamma_t,
            initial: InitialState::default(),
            tolerances: Tolerances::default(),
            output: OutputConfig::default(),
            seed: 0,
            gauge: None,
            checkpoints: default_checkpoints(),
        }
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        if text.trim().is_empty() {
            return Err(Error::Config("empty configuration".into()));
        }
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn stem(&self) -> &str {
        self.output.stem.as_deref().unwrap_or(self.experiment.name())
    }

    /// Check everything that can be checked without running; returns warnings.
    pub fn validate(&self) -> Result<Vec<String>> {
        let t = &self.tolerances;
        if ![t.rtol, t.atol, t.kernel_tol].iter().all(|v| *v > 0.0 && v.is_finite()) {
            return Err(Error::Config("tolerances must be positive and finite".into()));
        }
        if self.checkpoints == 0 {
            return Err(Error::Config("checkpoints must be at least 1".into()));
        }
        let stem = self.stem();
        if stem.is_empty() || stem.contains(['/', '\\']) || stem.starts_with('.') {
            return Err(Error::Config(format!("invalid output stem `{stem}`")));
        }
        let values = self.gamma_t.values();
        if values.is_empty() || values.iter().any(|g| !(*g > 0.0 && g.is_finite())) {
            return Err(Error::Config("gammaT values must be positive and finite".into()));
        }
        match self.experiment {
            Experiment::Sweep => {
                if values.len() < 3 {
                    return Err(Error::Config("sweep needs at least three gammaT values".into()));
                }
            }
            Experiment::GaugeCheck => {
                if values.len() != 2 || values[1] <= values[0] {
                    return Err(Error::Config("gauge-check needs two increasing gammaT values".into()));
                }
            }
            _ => {
                if values.len() != 1 {
                    return Err(Error::Config(format!("{} takes a single gammaT", self.experiment.name())));
                }
            }
        }
        if self.experiment == Experiment::Spin32Purity && self.protocol.is_spin32().is_none() {
            return Err(Error::Config("spin32-purity needs the spin32 protocol family; use `custom`".into()));
        }
        self.initial.to_density()?;
        for g in &values {
            self.protocol.build(*g)?;
        }
        Ok(values
            .iter()
            .filter(|g| **g < MIN_GAMMA_T)
            .map(|g| format!("gammaT = {g} is below {MIN_GAMMA_T}: the adiabatic expansion assumes gammaT >> 1"))
            .collect())
    }

    /// Output directory: explicit flag, then the environment, then the config, then `out`.
    pub fn resolve_out_dir(&self, flag: Option<&Path>) -> PathBuf {
        flag.map(Path::to_path_buf)
            .or_else(|| std::env::var_os(OUT_DIR_ENV).filter(|v| !v.is_empty()).map(PathBuf::from))
            .or_else(|| self.output.dir.clone())
            .unwrap_or_else(|| PathBuf::from("out"))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_config_gets_defaults() {
        let c = RunConfig::from_toml("experiment = \"spin32-purity\"").unwrap();
        assert_eq!(c, RunConfig::for_experiment(Experiment::Spin32Purity));
        assert!(c.validate().unwrap().is_empty());
        assert_eq!(c.stem(), "spin32-purity");
    }

    #[test]
    fn full_config_round_trips() {
        let text = r#"
experiment = "sweep"
gammaT = [100, 200, 400]
seed = 7
checkpoints = 16

[protocol]
family = "spin32"
path.theta = { kind = "linear", start = 0.0, winding = 1 }
path.phi = { kind = "linear", start = 0.0, winding = 0 }

[initial]
bloch = [0.0, 1.0, 0.0]

[tolerances]
rtol = 1e-9

[output]
dir = "results"
gnuplot = true
"#;
        let c = RunConfig::from_toml(text).unwrap();
        assert_eq!(c.gamma_t.values(), vec![100.0, 200.0, 400.0]);
        assert_eq!(c.tolerances.atol, 1e-13);
        assert!(c.output.gnuplot);
        assert_eq!(RunConfig::from_toml(&c.to_toml().unwrap()).unwrap(), c);
    }

    #[test]
    fn invalid_configs_are_rejected() {
        assert!(RunConfig::from_toml("").is_err());
        assert!(RunConfig::from_toml("experiment = \"nope\"").is_err());
        assert!(RunConfig::from_toml("experiment = \"sweep\"\nunknown = 1").is_err());
        let mut c = RunConfig::for_experiment(Experiment::Sweep);
        c.gamma_t = GammaT::Many(vec![100.0, 200.0]);
        assert!(c.validate().unwrap_err().is_validation());
        let mut c = RunConfig::for_experiment(Experiment::Spin32Purity);
        c.tolerances.rtol = 0.0;
        assert!(c.validate().is_err());
        let mut c = RunConfig::for_experiment(Experiment::Spin32Purity);
        c.initial.bloch = Some([1.0, 1.0, 0.0]);
        assert!(c.validate().is_err());
        let mut c = RunConfig::for_experiment(Experiment::Spin32Purity);
        c.output.stem = Some("../escape".into());
        assert!(c.validate().is_err());
    }

    #[test]
    fn small_gamma_t_warns() {
        let mut c = RunConfig::for_experiment(Experiment::Spin32Purity);
        c.gamma_t = GammaT::One(5.0);
        assert_eq!(c.validate().unwrap().len(), 1);
    }
}
