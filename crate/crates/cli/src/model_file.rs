//! Versioned JSON model files.
//!
//! A file stores the spline logits together with the basis range and `K`, so
//! loading rebuilds every density bit for bit without the original data.

use std::path::Path;
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use nphmm::hmm::stationary_distribution;
use nphmm::{HmmModel, NormalDensity, NormalMixtureDensity, SplineBasis, SplineDensity, StateDensity, TransitionMatrix};
use serde::{Deserialize, Serialize};

use crate::config::Transform;

pub const FORMAT: &str = "nphmm-model";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BasisDef {
    pub lower: f64,
    pub upper: f64,
    pub k: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "kebab-case", deny_unknown_fields)]
pub enum EmissionDef {
    Spline {
        /// Logits relative to the centre element; the weights are their softmax.
        logits: Vec<f64>,
        /// Informational copy of the weights.
        weights: Vec<f64>,
    },
    Normal {
        mean: f64,
        sd: f64,
    },
    NormalMixture {
        weight: f64,
        first: [f64; 2],
        second: [f64; 2],
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataSource {
    pub path: String,
    pub column: String,
    pub transform: Transform,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FitInfo {
    pub n_obs: usize,
    pub n_missing: usize,
    pub loglik: f64,
    pub penalized_loglik: f64,
    pub num_params: usize,
    pub aic: Option<f64>,
    pub bic: Option<f64>,
    pub iterations: usize,
    pub restart: usize,
    pub restarts: usize,
    pub converged_restarts: usize,
    pub empty_states: Vec<usize>,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CvCandidate {
    pub lambda: Vec<f64>,
    pub mean: f64,
    pub failed_partitions: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CvInfo {
    pub partitions: usize,
    pub calibration_fraction: f64,
    pub selected: Vec<f64>,
    pub selected_score: f64,
    pub trajectory: Vec<Vec<f64>>,
    pub fits: usize,
    pub cache_hits: usize,
    pub extensions: Vec<String>,
    pub candidates: Vec<CvCandidate>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelFile {
    pub format: String,
    pub version: u32,
    pub states: usize,
    /// `stationary` or `free`.
    pub initial: String,
    pub gamma: Vec<Vec<f64>>,
    pub delta: Vec<f64>,
    pub basis: Option<BasisDef>,
    pub emissions: Vec<EmissionDef>,
    pub penalty_order: Option<usize>,
    pub lambda: Option<Vec<f64>>,
    pub data: Option<DataSource>,
    pub fit: Option<FitInfo>,
    pub cv: Option<CvInfo>,
}

impl ModelFile {
    pub fn from_model(model: &HmmModel) -> Result<Self> {
        let mut basis: Option<BasisDef> = None;
        let mut emissions = Vec::with_capacity(model.n_states());
        for e in model.emissions() {
            emissions.push(match e {
                StateDensity::Spline(s) => {
                    let b = s.basis();
                    let def = BasisDef { lower: b.grid().lower(), upper: b.grid().upper(), k: b.k() };
                    match &basis {
                        Some(prev) if *prev != def => bail!("spline states use different bases"),
                        _ => basis = Some(def),
                    }
                    EmissionDef::Spline { logits: s.logits().to_vec(), weights: s.weights().to_vec() }
                }
                StateDensity::Normal(n) => EmissionDef::Normal { mean: n.mean, sd: n.sd },
                StateDensity::NormalMixture(m) => EmissionDef::NormalMixture {
                    weight: m.weight,
                    first: [m.first.mean, m.first.sd],
                    second: [m.second.mean, m.second.sd],
                },
            });
        }
        Ok(Self {
            format: FORMAT.into(),
            version: VERSION,
            states: model.n_states(),
            initial: if model.is_stationary() { "stationary" } else { "free" }.into(),
            gamma: model.gamma().rows(),
            delta: model.delta().as_slice().to_vec(),
            basis,
            emissions,
            penalty_order: None,
            lambda: None,
            data: None,
            fit: None,
            cv: None,
        })
    }

    pub fn to_model(&self) -> Result<HmmModel> {
        if self.format != FORMAT {
            bail!("not a model file (format `{}`)", self.format);
        }
        if self.version != VERSION {
            bail!("unsupported model file version {}", self.version);
        }
        if self.emissions.len() != self.states || self.gamma.len() != self.states {
            bail!("model file declares {} states but stores {} emissions", self.states, self.emissions.len());
        }
        let basis = match &self.basis {
            Some(b) => Some(Arc::new(SplineBasis::new(b.lower, b.upper, b.k)?)),
            None => None,
        };
        let emissions = self
            .emissions
            .iter()
            .map(|e| {
                Ok(match e {
                    EmissionDef::Spline { logits, .. } => {
                        let b = basis.clone().context("spline emission without a basis")?;
                        StateDensity::Spline(SplineDensity::from_logits(b, logits.clone())?)
                    }
                    EmissionDef::Normal { mean, sd } => StateDensity::Normal(NormalDensity::new(*mean, *sd)?),
                    EmissionDef::NormalMixture { weight, first, second } => {
                        StateDensity::NormalMixture(NormalMixtureDensity::new(
                            NormalDensity::new(first[0], first[1])?,
                            NormalDensity::new(second[0], second[1])?,
                            *weight,
                        )?)
                    }
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let gamma = TransitionMatrix::from_rows(&self.gamma)?;
        match self.initial.as_str() {
            "stationary" => Ok(HmmModel::stationary(gamma, emissions)?),
            "free" => {
                let delta = nphmm::InitialDistribution::new(self.delta.clone())?;
                Ok(HmmModel::new(gamma, delta, emissions)?)
            }
            other => bail!("initial: expected `stationary` or `free`, got `{other}`"),
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("cannot read model file {}", path.display()))?;
        serde_json::from_str(&text).with_context(|| format!("invalid model file {}", path.display()))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        crate::output::write_json(path, self)
    }
}

/// Stationary distribution for reporting; the stored delta for free models.
pub fn reported_stationary(model: &HmmModel) -> Result<Vec<f64>> {
    Ok(stationary_distribution(model.gamma())?.into_vec())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_reproduces_densities() {
        let model = nphmm::sim::dive_model::<f64>().unwrap();
        let file = ModelFile::from_model(&model).unwrap();
        let text = serde_json::to_string_pretty(&file).unwrap();
        let back: ModelFile = serde_json::from_str(&text).unwrap();
        let loaded = back.to_model().unwrap();
        for i in 0..=900 {
            let x = -7.5 + i as f64 * 0.01;
            for (a, b) in model.emissions().iter().zip(loaded.emissions()) {
                assert!((a.pdf(x) - b.pdf(x)).abs() <= 1e-12);
            }
        }
        assert_eq!(loaded, model);
    }

    #[test]
    fn parametric_round_trip() {
        let model = nphmm::sim::truth_model::<f64>(0.9, 3.0).unwrap();
        let file = ModelFile::from_model(&model).unwrap();
        assert!(file.basis.is_none());
        let back: ModelFile = serde_json::from_str(&serde_json::to_string(&file).unwrap()).unwrap();
        assert_eq!(back.to_model().unwrap(), model);
    }

    #[test]
    fn rejects_foreign_files() {
        let model = nphmm::sim::truth_model::<f64>(0.9, 3.0).unwrap();
        let mut file = ModelFile::from_model(&model).unwrap();
        file.version = 99;
        assert!(file.to_model().is_err());
        let text = serde_json::to_string(&ModelFile::from_model(&model).unwrap()).unwrap().replace("\"gamma\"", "\"gama\"");
        assert!(serde_json::from_str::<ModelFile>(&text).is_err());
    }
}
