//! TOML configuration shared by all commands. Every table rejects unknown
//! keys so a misspelled field fails loudly instead of falling back to a
//! default.

use std::fmt;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::de::{self, Deserializer, Visitor};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    pub seed: Option<u64>,
    pub data: Option<DataConfig>,
    #[serde(default)]
    pub model: ModelConfig,
    #[serde(default)]
    pub cv: CvConfig,
    #[serde(default)]
    pub bootstrap: BootstrapConfig,
    #[serde(default)]
    pub diagnose: DiagnoseConfig,
    #[serde(default)]
    pub select: SelectConfig,
    #[serde(default)]
    pub scenario: ScenarioConfig,
}

impl Config {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("cannot read config {}", path.display()))?;
        toml::from_str(&text).with_context(|| format!("invalid config {}", path.display()))
    }
}

/// Column by 1-based position or by header name.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ColumnSpec {
    Index(usize),
    Name(String),
}

impl Default for ColumnSpec {
    fn default() -> Self {
        Self::Index(1)
    }
}

impl std::str::FromStr for ColumnSpec {
    type Err = std::convert::Infallible;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        Ok(match s.parse::<usize>() {
            Ok(i) => Self::Index(i),
            Err(_) => Self::Name(s.to_string()),
        })
    }
}

impl fmt::Display for ColumnSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Index(i) => write!(f, "{i}"),
            Self::Name(n) => f.write_str(n),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Transform {
    #[default]
    None,
    /// `log|x|`; zeros become missing.
    LogAbsolute,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    pub path: Option<PathBuf>,
    #[serde(default)]
    pub column: ColumnSpec,
    #[serde(default = "default_delimiter")]
    pub delimiter: char,
    /// `None` detects a header from the first row.
    pub header: Option<bool>,
    #[serde(default)]
    pub transform: Transform,
}

fn default_delimiter() -> char {
    ','
}

impl Default for DataConfig {
    fn default() -> Self {
        Self { path: None, column: ColumnSpec::default(), delimiter: ',', header: None, transform: Transform::None }
    }
}

/// Smoothing parameters: fixed values or `"cv"`.
#[derive(Debug, Clone, PartialEq)]
pub enum LambdaSpec {
    Cv,
    Values(Vec<f64>),
}

impl Default for LambdaSpec {
    fn default() -> Self {
        Self::Values(vec![1024.0])
    }
}

impl std::str::FromStr for LambdaSpec {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        if s.trim().eq_ignore_ascii_case("cv") {
            return Ok(Self::Cv);
        }
        s.split(',')
            .map(|v| v.trim().parse::<f64>().map_err(|_| format!("invalid smoothing value `{v}`")))
            .collect::<std::result::Result<Vec<_>, _>>()
            .map(Self::Values)
    }
}

impl<'de> Deserialize<'de> for LambdaSpec {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        struct V;
        impl<'de> Visitor<'de> for V {
            type Value = LambdaSpec;
            fn expecting(&self, f: &mut fmt::Formatter) -> fmt::Result {
                f.write_str("\"cv\", a number or a list of numbers")
            }
            fn visit_str<E: de::Error>(self, v: &str) -> std::result::Result<LambdaSpec, E> {
                if v == "cv" {
                    Ok(LambdaSpec::Cv)
                } else {
                    Err(E::invalid_value(de::Unexpected::Str(v), &self))
                }
            }
            fn visit_f64<E: de::Error>(self, v: f64) -> std::result::Result<LambdaSpec, E> {
                Ok(LambdaSpec::Values(vec![v]))
            }
            fn visit_i64<E: de::Error>(self, v: i64) -> std::result::Result<LambdaSpec, E> {
                Ok(LambdaSpec::Values(vec![v as f64]))
            }
            fn visit_u64<E: de::Error>(self, v: u64) -> std::result::Result<LambdaSpec, E> {
                Ok(LambdaSpec::Values(vec![v as f64]))
            }
            fn visit_seq<A: de::SeqAccess<'de>>(self, mut seq: A) -> std::result::Result<LambdaSpec, A::Error> {
                let mut out = Vec::new();
                while let Some(v) = seq.next_element::<f64>()? {
                    out.push(v);
                }
                Ok(LambdaSpec::Values(out))
            }
        }
        d.deserialize_any(V)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Family {
    #[default]
    Spline,
    Normal,
    NormalMixture,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InitialConfig {
    #[default]
    Stationary,
    Free,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub states: usize,
    pub k: usize,
    pub family: Family,
    pub lambda: LambdaSpec,
    pub penalty_order: usize,
    pub restarts: usize,
    pub initial: InitialConfig,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            states: 2,
            k: 15,
            family: Family::Spline,
            lambda: LambdaSpec::default(),
            penalty_order: 2,
            restarts: 10,
            initial: InitialConfig::Stationary,
        }
    }
}

impl ModelConfig {
    /// One smoothing value per state; a single value is shared.
    pub fn lambda_values(&self) -> Result<Option<Vec<f64>>> {
        match &self.lambda {
            LambdaSpec::Cv => Ok(None),
            LambdaSpec::Values(v) if v.len() == 1 => Ok(Some(vec![v[0]; self.states])),
            LambdaSpec::Values(v) if v.len() == self.states => Ok(Some(v.clone())),
            LambdaSpec::Values(v) => {
                bail!("model.lambda: expected 1 or {} values, got {}", self.states, v.len())
            }
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.states == 0 {
            bail!("model.states: must be at least 1");
        }
        if self.family == Family::Spline && self.k < 2 {
            bail!("model.k: must be at least 2");
        }
        if self.restarts == 0 {
            bail!("model.restarts: must be at least 1");
        }
        if let Some(l) = self.lambda_values()? {
            if l.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
                bail!("model.lambda: values must be finite and non-negative");
            }
        }
        Ok(())
    }
}

/// Where the grid walk starts.
#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(untagged)]
pub enum StartConfig {
    Keyword(String),
    Point(Vec<f64>),
}

impl Default for StartConfig {
    fn default() -> Self {
        Self::Keyword("diagonal".into())
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CvConfig {
    pub partitions: usize,
    pub calibration_fraction: f64,
    /// Candidates shared by every state.
    pub candidates: Vec<f64>,
    /// Per-state candidates; overrides `candidates`.
    pub grid: Option<Vec<Vec<f64>>>,
    pub start: StartConfig,
    pub extend_boundary: bool,
    pub max_extensions: usize,
    pub restarts: usize,
    pub warm_restarts: usize,
    /// Offer the full-data fit as a start to every cell.
    pub anchor: bool,
}

impl Default for CvConfig {
    fn default() -> Self {
        Self {
            partitions: 10,
            calibration_fraction: 0.9,
            candidates: (6..=14).map(|p| f64::powi(2.0, p)).collect(),
            grid: None,
            start: StartConfig::default(),
            extend_boundary: true,
            max_extensions: 8,
            restarts: 1,
            warm_restarts: 0,
            anchor: true,
        }
    }
}

impl CvConfig {
    pub fn validate(&self) -> Result<()> {
        if self.partitions == 0 {
            bail!("cv.partitions: must be at least 1");
        }
        if !(self.calibration_fraction > 0.0 && self.calibration_fraction < 1.0) {
            bail!("cv.calibration_fraction: must lie in (0, 1)");
        }
        if let StartConfig::Keyword(k) = &self.start {
            if k != "diagonal" {
                bail!("cv.start: expected \"diagonal\" or a list of smoothing values, got \"{k}\"");
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BootstrapConfig {
    pub replicates: usize,
    pub level: f64,
    /// Random restarts per replicate in addition to the generating parameters.
    pub restarts: usize,
    pub grid_points: usize,
    /// Series length; defaults to the data length.
    pub length: Option<usize>,
}

impl Default for BootstrapConfig {
    fn default() -> Self {
        Self { replicates: 100, level: 0.95, restarts: 1, grid_points: 512, length: None }
    }
}

impl BootstrapConfig {
    pub fn validate(&self) -> Result<()> {
        if self.replicates < nphmm::inference::MIN_REPLICATES {
            bail!(
                "bootstrap.replicates: must be at least {}, got {}",
                nphmm::inference::MIN_REPLICATES,
                self.replicates
            );
        }
        if !(self.level > 0.0 && self.level < 1.0) {
            bail!("bootstrap.level: must lie in (0, 1), got {}", self.level);
        }
        if self.grid_points < 2 {
            bail!("bootstrap.grid_points: must be at least 2");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DiagnoseConfig {
    pub max_lag: usize,
    pub grid_points: usize,
}

impl Default for DiagnoseConfig {
    fn default() -> Self {
        Self { max_lag: 50, grid_points: 512 }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SelectConfig {
    pub candidates: Vec<usize>,
}

impl Default for SelectConfig {
    fn default() -> Self {
        Self { candidates: vec![1, 2, 3] }
    }
}

/// Simulation study settings. Unset fields take the library defaults.
#[derive(Debug, Clone, PartialEq, Default, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScenarioConfig {
    pub persistence: Option<f64>,
    pub shift: Option<f64>,
    pub length: Option<usize>,
    pub runs: Option<usize>,
    pub k: Option<usize>,
    pub lambda_candidates: Option<Vec<f64>>,
    pub partitions: Option<usize>,
    pub calibration_fraction: Option<f64>,
    pub replicates: Option<usize>,
    pub level: Option<f64>,
    pub competitors: Option<Vec<nphmm::sim::Competitor>>,
    pub state_candidates: Option<Vec<usize>>,
    pub restarts: Option<usize>,
    pub cv_restarts: Option<usize>,
    pub cv_warm_restarts: Option<usize>,
    pub bootstrap_restarts: Option<usize>,
}
