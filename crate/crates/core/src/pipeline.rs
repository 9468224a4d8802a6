//! Configurable end-to-end fit: one univariate method per element, then the
//! multivariate step.

use serde::{Deserialize, Serialize};

use crate::basis::{fit_penalized, BasisExpansion, BasisSystem, Lambda};
use crate::error::{Error, Result};
use crate::fundata::MultiFunData;
use crate::mfpca::{estimate_weights, mfpca, MfpcaResult, UnivariateBlock};
use crate::tensorfpca::{tensor_fpca, FcpTpaOptions, TpaComponent};
use crate::ufpca::{dense_fpca, sparse_fpca, CovSmoothing, SparseOptions, Truncation, UfpcaResult};

fn default_degree() -> usize {
    3
}
fn default_order() -> usize {
    2
}
fn default_lambda() -> Lambda {
    Lambda::Gcv
}

/// Univariate representation of one element.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "snake_case", deny_unknown_fields)]
pub enum ElementMethod {
    /// Dense FPCA of the discretized covariance.
    Pca {
        truncation: Truncation,
        #[serde(default)]
        smoothing: Option<CovSmoothing>,
    },
    /// Smoothed-covariance FPCA with conditional-expectation scores.
    SparsePca {
        truncation: Truncation,
        #[serde(default)]
        options: SparseOptions,
    },
    /// FCP-TPA eigenimages for 2D elements.
    TensorPca {
        m: usize,
        #[serde(default)]
        options: FcpTpaOptions,
    },
    /// Penalized B-spline expansion; one `k` per axis.
    Spline {
        k: Vec<usize>,
        #[serde(default = "default_degree")]
        degree: usize,
        #[serde(default = "default_lambda")]
        lambda: Lambda,
        #[serde(default = "default_order")]
        penalty_order: usize,
    },
}

#[derive(Clone, Debug, Default, PartialEq)]
pub enum WeightChoice {
    #[default]
    Unit,
    Estimate,
    Explicit(Vec<f64>),
}

impl Serialize for WeightChoice {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            WeightChoice::Unit => s.serialize_str("unit"),
            WeightChoice::Estimate => s.serialize_str("estimate"),
            WeightChoice::Explicit(w) => w.serialize(s),
        }
    }
}

impl<'de> Deserialize<'de> for WeightChoice {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Name(String),
            Values(Vec<f64>),
        }
        match Raw::deserialize(d)? {
            Raw::Name(n) if n == "unit" => Ok(WeightChoice::Unit),
            Raw::Name(n) if n == "estimate" => Ok(WeightChoice::Estimate),
            Raw::Name(n) => Err(serde::de::Error::custom(format!(
                "unknown weight choice {n:?}; expected \"unit\", \"estimate\" or a list"
            ))),
            Raw::Values(v) => Ok(WeightChoice::Explicit(v)),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MfpcaConfig {
    /// Number of multivariate components (capped at what is available).
    #[serde(default)]
    pub m: Option<usize>,
    /// Alternatively, smallest count reaching this proportion of variance.
    #[serde(default)]
    pub pve: Option<f64>,
    #[serde(default)]
    pub weights: WeightChoice,
}

impl MfpcaConfig {
    pub fn truncation(&self) -> Result<Truncation> {
        match (self.m, self.pve) {
            (Some(_), Some(_)) => Err(Error::InvalidArgument("give either m or pve, not both".into())),
            (Some(m), None) => Ok(Truncation::Count(m)),
            (None, Some(p)) if p > 0.0 && p <= 1.0 => Ok(Truncation::Pve(p)),
            (None, Some(p)) => Err(Error::InvalidArgument(format!("pve {p} outside (0, 1]"))),
            (None, None) => Ok(Truncation::All),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FitConfig {
    pub elements: Vec<ElementMethod>,
    #[serde(default)]
    pub mfpca: MfpcaConfig,
}

/// Fitted univariate representation of one element.
#[derive(Clone, Debug)]
pub enum UnivariateFit {
    Fpca(UfpcaResult),
    Tensor(UfpcaResult, Vec<TpaComponent>),
    Spline(BasisExpansion),
}

impl UnivariateFit {
    pub fn block(&self) -> UnivariateBlock {
        match self {
            UnivariateFit::Fpca(u) | UnivariateFit::Tensor(u, _) => UnivariateBlock::from(u),
            UnivariateFit::Spline(b) => UnivariateBlock::from(b),
        }
    }

    pub fn ufpca(&self) -> Option<&UfpcaResult> {
        match self {
            UnivariateFit::Fpca(u) | UnivariateFit::Tensor(u, _) => Some(u),
            UnivariateFit::Spline(_) => None,
        }
    }
}

#[derive(Clone, Debug)]
pub struct Fitted {
    pub result: MfpcaResult,
    pub univariate: Vec<UnivariateFit>,
}

fn spline_basis(e: &crate::fundata::ElementSample, k: &[usize], degree: usize) -> Result<BasisSystem> {
    let d = e.domain();
    match (d.dim(), k) {
        (1, [k]) => {
            let (a, b) = d.bounds(0);
            BasisSystem::bspline(a, b, *k, degree)
        }
        (2, [k1, k2]) => BasisSystem::tensor_bspline(d, (*k1, *k2), degree),
        (dim, _) => Err(Error::InvalidArgument(format!(
            "{} spline sizes given for a {dim}D element",
            k.len()
        ))),
    }
}

/// Univariate fit of element `j`.
pub fn fit_element(data: &MultiFunData, j: usize, method: &ElementMethod) -> Result<UnivariateFit> {
    let e = data.element(j);
    Ok(match method {
        ElementMethod::Pca { truncation, smoothing } => UnivariateFit::Fpca(dense_fpca(e, *truncation, *smoothing)?),
        ElementMethod::SparsePca { truncation, options } => UnivariateFit::Fpca(sparse_fpca(e, *truncation, *options)?),
        ElementMethod::TensorPca { m, options } => {
            let (u, c) = tensor_fpca(e, *m, options)?;
            UnivariateFit::Tensor(u, c)
        }
        ElementMethod::Spline { k, degree, lambda, penalty_order } => {
            let basis = spline_basis(e, k, *degree)?;
            UnivariateFit::Spline(fit_penalized(e, &basis, *penalty_order, *lambda)?)
        }
    })
}

fn weights_for(data: &MultiFunData, choice: &WeightChoice) -> Result<Vec<f64>> {
    match choice {
        WeightChoice::Unit => Ok(vec![1.0; data.p()]),
        WeightChoice::Estimate => estimate_weights(data),
        WeightChoice::Explicit(w) => {
            if w.len() != data.p() {
                return Err(Error::Shape(format!("{} weights for {} elements", w.len(), data.p())));
            }
            Ok(w.clone())
        }
    }
}

fn combine(data: &MultiFunData, config: &FitConfig, univariate: Vec<UnivariateFit>) -> Result<Fitted> {
    let blocks: Vec<UnivariateBlock> = univariate.iter().map(UnivariateFit::block).collect();
    let weights = weights_for(data, &config.mfpca.weights)?;
    let result = mfpca(&blocks, &weights, config.mfpca.truncation()?)?;
    Ok(Fitted { result, univariate })
}

/// Fit every element and the multivariate decomposition.
pub fn fit(data: &MultiFunData, config: &FitConfig) -> Result<Fitted> {
    if config.elements.len() != data.p() {
        return Err(Error::Shape(format!(
            "{} element methods for {} elements",
            config.elements.len(),
            data.p()
        )));
    }
    let univariate = config
        .elements
        .iter()
        .enumerate()
        .map(|(j, m)| fit_element(data, j, m))
        .collect::<Result<Vec<_>>>()?;
    combine(data, config, univariate)
}

/// Refit on the observations `rows` (with repeats). Spline expansions are a
/// fixed linear map of each curve once the basis and λ are fixed, so their
/// coefficients are reused from `point`; FPCA-type elements and estimated
/// weights are recomputed on the resample.
pub fn refit_resampled(data: &MultiFunData, config: &FitConfig, point: &Fitted, rows: &[usize]) -> Result<Fitted> {
    let sub = data.select_rows(rows);
    let univariate = config
        .elements
        .iter()
        .enumerate()
        .map(|(j, m)| match (&point.univariate[j], m) {
            (UnivariateFit::Spline(b), ElementMethod::Spline { .. }) => Ok(UnivariateFit::Spline(b.resample(rows))),
            _ => fit_element(&sub, j, m),
        })
        .collect::<Result<Vec<_>>>()?;
    combine(&sub, config, univariate)
}
