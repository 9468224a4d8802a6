use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use mfpca_core::experiment::ImagePathway;
use mfpca_core::simgen::{Decay, Sparsity};
use mfpca_core::{BootstrapOptions, ElementMethod, FitConfig, MfpcaConfig, SimulationSpec};

/// The JSON document passed with `--config`.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Directory with `manifest.json`; relative paths resolve against the
    /// config file's directory.
    #[serde(default)]
    pub dataset: Option<PathBuf>,
    #[serde(default)]
    pub simulation: Option<SimulationSpec>,
    /// One method per element.
    #[serde(default)]
    pub univariate: Option<Vec<ElementMethod>>,
    #[serde(default)]
    pub mfpca: Option<MfpcaConfig>,
    #[serde(default)]
    pub bootstrap: Option<BootstrapOptions>,
    #[serde(default)]
    pub experiment: Option<ExperimentBlock>,
    #[serde(default)]
    pub output: Option<PathBuf>,
}

impl ExperimentConfig {
    pub fn fit_config(&self) -> Option<FitConfig> {
        Some(FitConfig { elements: self.univariate.clone()?, mfpca: self.mfpca.clone().unwrap_or_default() })
    }
}

fn default_n() -> usize {
    250
}
fn default_reps() -> usize {
    100
}
fn default_decay() -> Decay {
    Decay::TableExp
}
fn default_image() -> (usize, usize) {
    (100, 50)
}
fn default_curve() -> usize {
    200
}

/// Replicated experiments. `study` and `coverage` use the config's
/// `simulation`, `univariate` and `mfpca` blocks; the others are presets.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ExperimentBlock {
    Study {
        #[serde(default = "default_reps")]
        replicates: usize,
        #[serde(default)]
        components: Option<usize>,
    },
    Setting1 {
        #[serde(default = "default_n")]
        n: usize,
        #[serde(default = "default_decay")]
        decay: Decay,
        #[serde(default)]
        sigma2: f64,
        #[serde(default = "default_reps")]
        replicates: usize,
    },
    Setting2 {
        #[serde(default = "default_n")]
        n: usize,
        #[serde(default = "default_decay")]
        decay: Decay,
        #[serde(default)]
        sigma2: f64,
        #[serde(default)]
        sparsity: Sparsity,
        #[serde(default = "default_reps")]
        replicates: usize,
    },
    Setting3 {
        #[serde(default = "default_n")]
        n: usize,
        #[serde(default = "default_image")]
        image: (usize, usize),
        #[serde(default = "default_curve")]
        curve: usize,
        #[serde(default)]
        sigma2: f64,
        pathway: ImagePathway,
        #[serde(default = "default_reps")]
        replicates: usize,
    },
    /// Setting-1 fits at pve 0.75, 0.90, 0.95, 0.99 and the true M.
    Sensitivity {
        #[serde(default = "default_n")]
        n: usize,
        #[serde(default = "default_reps")]
        replicates: usize,
    },
    /// Bootstrap coverage; needs a `bootstrap` block. Without `simulation`
    /// and `univariate`, the function-plus-image setting on the spline
    /// pathway is used.
    Coverage {
        datasets: usize,
        #[serde(default = "default_n")]
        n: usize,
        #[serde(default = "default_image")]
        image: (usize, usize),
        #[serde(default = "default_curve")]
        curve: usize,
        #[serde(default)]
        sigma2: f64,
    },
}
