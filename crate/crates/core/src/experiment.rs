//! Replicated simulation studies: fit quality on the three simulation
//! settings, truncation sensitivity, and bootstrap band coverage.
//!
//! Replicate `r` of a study with seed `s` simulates with
//! [`replicate_seed`]`(s, r)`, so results do not depend on scheduling.

use rand::RngCore;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::basis::Lambda;
use crate::error::{Error, Result};
use crate::evaluation::{band_inclusion, bootstrap_bands, err_eigenfunction, err_eigenvalue, mrse, BootstrapOptions};
use crate::fundata::MultiFunction;
use crate::linalg::median;
use crate::mfpca::MfpcaResult;
use crate::pipeline::{fit, ElementMethod, FitConfig, MfpcaConfig, WeightChoice};
use crate::simgen::{rng_stream, simulate, Decay, SimulatedData, SimulationSpec, Sparsity};
use crate::tensorfpca::FcpTpaOptions;
use crate::ufpca::{CovSmoothing, SparseOptions, Truncation};

const STREAM_REPLICATE: u64 = 1 << 40;

/// Simulation seed of replicate `r`.
pub fn replicate_seed(seed: u64, r: usize) -> u64 {
    rng_stream(seed, STREAM_REPLICATE + r as u64).next_u64()
}

/// A replicated fit-quality study.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Study {
    pub simulation: SimulationSpec,
    pub fit: FitConfig,
    pub replicates: usize,
    /// Leading components scored by `Err(ν̂)`/`Err(ψ̂)`; all fitted by default.
    #[serde(default)]
    pub components: Option<usize>,
}

/// Metrics for one fitted dataset. Errors use the unweighted product, in
/// which the true eigenfunctions are orthonormal.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub m: usize,
    pub mrse: f64,
    pub err_eigenvalue: Vec<f64>,
    pub err_eigenfunction: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Replicate {
    pub replicate: usize,
    pub seed: u64,
    pub metrics: Metrics,
}

/// Compare a fit against the noise-free truth of `sim`. The reconstruction
/// uses every retained component.
pub fn evaluate(sim: &SimulatedData, result: &MfpcaResult, components: Option<usize>) -> Result<Metrics> {
    let unit = vec![1.0; sim.truth.p()];
    let m = result.m();
    let recon = result.reconstruct(m)?;
    let mrse = mrse(&sim.truth, &recon, &unit)?;
    let c = components.unwrap_or(m).min(m).min(sim.basis.m());
    let mut ev = Vec::with_capacity(c);
    let mut ef = Vec::with_capacity(c);
    for k in 0..c {
        ev.push(err_eigenvalue(sim.eigenvalues[k], result.eigenvalues[k])?);
        let truth = MultiFunction {
            domains: sim.basis.domains.clone(),
            values: sim.basis.eigenfunctions.iter().map(|e| e.row(k).transpose()).collect(),
        };
        ef.push(err_eigenfunction(&truth, &result.eigenfunction(k), &unit)?);
    }
    Ok(Metrics { m, mrse, err_eigenvalue: ev, err_eigenfunction: ef })
}

/// Simulate, fit and score every replicate (in parallel).
pub fn run_study(study: &Study, seed: u64) -> Result<Vec<Replicate>> {
    if study.replicates == 0 {
        return Err(Error::InvalidArgument("a study needs at least one replicate".into()));
    }
    (0..study.replicates)
        .into_par_iter()
        .map(|r| {
            let s = replicate_seed(seed, r);
            let spec = SimulationSpec { seed: s, ..study.simulation.clone() };
            let sim = simulate(&spec)?;
            let fitted = fit(&sim.data, &study.fit)?;
            let metrics = evaluate(&sim, &fitted.result, study.components)?;
            Ok(Replicate { replicate: r, seed: s, metrics })
        })
        .collect()
}

/// Medians across replicates.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StudySummary {
    pub replicates: usize,
    pub median_mrse: f64,
    pub mean_mrse: f64,
    /// Per component, over the replicates that fitted it.
    pub median_err_eigenvalue: Vec<f64>,
    pub median_err_eigenfunction: Vec<f64>,
}

pub fn summarize(reps: &[Replicate]) -> StudySummary {
    let mrse: Vec<f64> = reps.iter().map(|r| r.metrics.mrse).collect();
    let c = reps.iter().map(|r| r.metrics.err_eigenvalue.len()).max().unwrap_or(0);
    let column = |k: usize, f: fn(&Metrics) -> &Vec<f64>| -> f64 {
        let v: Vec<f64> = reps.iter().filter_map(|r| f(&r.metrics).get(k).copied()).collect();
        median(&v)
    };
    StudySummary {
        replicates: reps.len(),
        median_mrse: median(&mrse),
        mean_mrse: mrse.iter().sum::<f64>() / mrse.len().max(1) as f64,
        median_err_eigenvalue: (0..c).map(|k| column(k, |m| &m.err_eigenvalue)).collect(),
        median_err_eigenfunction: (0..c).map(|k| column(k, |m| &m.err_eigenfunction)).collect(),
    }
}

fn dense_pca(truncation: Truncation, sigma2: f64) -> ElementMethod {
    let smoothing = (sigma2 > 0.0).then(CovSmoothing::default);
    ElementMethod::Pca { truncation, smoothing }
}

fn unit_mfpca(m: usize) -> MfpcaConfig {
    MfpcaConfig { m: Some(m), pve: None, weights: WeightChoice::Unit }
}

/// Two elements on `[0,1]`, 100 points each, 8 univariate components per
/// element (covariance smoothing under noise), 8 multivariate components.
pub fn setting1_study(n: usize, decay: Decay, sigma2: f64, replicates: usize) -> Study {
    Study {
        simulation: SimulationSpec::setting1(n, 100, decay, sigma2, 0),
        fit: FitConfig {
            elements: vec![dense_pca(Truncation::Count(8), sigma2); 2],
            mfpca: unit_mfpca(8),
        },
        replicates,
        components: None,
    }
}

/// Three elements; dense data use the dense pathway, sparse data the
/// conditional-expectation pathway (3/5/3 components at high sparsity).
pub fn setting2_study(n: usize, decay: Decay, sigma2: f64, sparsity: Sparsity, replicates: usize) -> Study {
    let sparse = |m: usize| ElementMethod::SparsePca { truncation: Truncation::Count(m), options: SparseOptions::default() };
    let elements = match sparsity {
        Sparsity::None => vec![dense_pca(Truncation::Count(8), sigma2); 3],
        Sparsity::Medium => vec![sparse(8), sparse(8), sparse(8)],
        Sparsity::High => vec![sparse(3), sparse(5), sparse(3)],
    };
    Study {
        simulation: SimulationSpec::setting2(n, decay, sigma2, sparsity, 0),
        fit: FitConfig { elements, mfpca: unit_mfpca(8) },
        replicates,
        components: None,
    }
}

/// Univariate representation for the function-plus-image setting.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ImagePathway {
    /// 10x12 tensor B-splines and 15 B-splines (penalized under noise).
    Spline,
    /// 20 FCP-TPA eigenimages and 15 univariate eigenfunctions.
    Tpa,
}

/// Setting-3 fit configuration with 12 multivariate components.
pub fn setting3_fit(pathway: ImagePathway, sigma2: f64) -> FitConfig {
    let lambda = if sigma2 > 0.0 { Lambda::Gcv } else { Lambda::Fixed(0.0) };
    let elements = match pathway {
        ImagePathway::Spline => vec![
            ElementMethod::Spline { k: vec![10, 12], degree: 3, lambda, penalty_order: 2 },
            ElementMethod::Spline { k: vec![15], degree: 3, lambda, penalty_order: 2 },
        ],
        ImagePathway::Tpa => vec![
            ElementMethod::TensorPca { m: 20, options: FcpTpaOptions::default() },
            dense_pca(Truncation::Count(15), sigma2),
        ],
    };
    FitConfig { elements, mfpca: unit_mfpca(12) }
}

pub fn setting3_study(
    n: usize,
    image: (usize, usize),
    curve: usize,
    sigma2: f64,
    pathway: ImagePathway,
    replicates: usize,
) -> Study {
    Study {
        simulation: SimulationSpec::setting3(n, image, curve, sigma2, 0),
        fit: setting3_fit(pathway, sigma2),
        replicates,
        components: None,
    }
}

/// Truncation levels of the sensitivity study; `None` is the true `M`.
pub const SENSITIVITY_PVE: [Option<f64>; 5] = [Some(0.75), Some(0.90), Some(0.95), Some(0.99), None];

/// Setting-1 data (noiseless, table-normalized exponential decay) with
/// `M_j` chosen by `pve` (or `M_j = 8`) and `M = min(M₁ + M₂, 8)`.
pub fn sensitivity_study(n: usize, pve: Option<f64>, replicates: usize) -> Study {
    let truncation = pve.map_or(Truncation::Count(8), Truncation::Pve);
    Study {
        simulation: SimulationSpec::setting1(n, 100, Decay::TableExp, 0.0, 0),
        fit: FitConfig {
            elements: vec![dense_pca(truncation, 0.0); 2],
            mfpca: unit_mfpca(8),
        },
        replicates,
        components: None,
    }
}

/// A bootstrap coverage study.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CoverageStudy {
    pub simulation: SimulationSpec,
    pub fit: FitConfig,
    pub datasets: usize,
    pub bootstrap: BootstrapOptions,
}

/// Coverage indexed `[level][element][component]`, pointwise over the grid
/// and averaged over the grid.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CoverageTable {
    pub levels: Vec<f64>,
    pub datasets: usize,
    pub components: usize,
    pub pointwise: Vec<Vec<Vec<Vec<f64>>>>,
    pub mean: Vec<Vec<Vec<f64>>>,
}

impl CoverageTable {
    /// Coverage of element `j` at level index `l`, averaged over components
    /// and grid points.
    pub fn element_mean(&self, l: usize, j: usize) -> f64 {
        let v = &self.mean[l][j];
        v.iter().sum::<f64>() / v.len() as f64
    }
}

/// Fraction of datasets whose band contains the (sign-aligned) truth, per
/// point. Each dataset is bootstrapped with its own simulation seed.
pub fn coverage_experiment(study: &CoverageStudy, seed: u64) -> Result<CoverageTable> {
    if study.datasets == 0 {
        return Err(Error::InvalidArgument("coverage needs at least one dataset".into()));
    }
    let per_dataset: Vec<Vec<Vec<Vec<Vec<bool>>>>> = (0..study.datasets)
        .into_par_iter()
        .map(|r| {
            let s = replicate_seed(seed, r);
            let sim = simulate(&SimulationSpec { seed: s, ..study.simulation.clone() })?;
            let point = fit(&sim.data, &study.fit)?;
            let opts = BootstrapOptions { seed: s, ..study.bootstrap.clone() };
            let bands = bootstrap_bands(&sim.data, &study.fit, &point, &opts)?;
            let m = bands.components;
            let truth: Vec<_> = sim.basis.eigenfunctions.iter().map(|e| e.rows(0, m).into_owned()).collect();
            let estimate: Vec<_> = point.result.eigenfunctions.iter().map(|e| e.rows(0, m).into_owned()).collect();
            bands
                .bands
                .iter()
                .map(|b| band_inclusion(b, &truth, &estimate, &point.result.domains, &point.result.weights))
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<_>>()?;

    let components = per_dataset.iter().map(|d| d[0][0].len()).min().unwrap_or(0);
    let r = per_dataset.len() as f64;
    let levels = study.bootstrap.levels.clone();
    let p = per_dataset[0][0].len();
    let mut pointwise = Vec::with_capacity(levels.len());
    let mut mean = Vec::with_capacity(levels.len());
    for l in 0..levels.len() {
        let mut pl = Vec::with_capacity(p);
        let mut ml = Vec::with_capacity(p);
        for j in 0..p {
            let g = per_dataset[0][l][j][0].len();
            let mut pj = Vec::with_capacity(components);
            let mut mj = Vec::with_capacity(components);
            for c in 0..components {
                let cov: Vec<f64> = (0..g)
                    .map(|k| per_dataset.iter().filter(|d| d[l][j][c][k]).count() as f64 / r)
                    .collect();
                mj.push(cov.iter().sum::<f64>() / g as f64);
                pj.push(cov);
            }
            pl.push(pj);
            ml.push(mj);
        }
        pointwise.push(pl);
        mean.push(ml);
    }
    Ok(CoverageTable { levels, datasets: study.datasets, components, pointwise, mean })
}

/// Setting-3 coverage study on the spline pathway.
pub fn coverage_study(
    n: usize,
    image: (usize, usize),
    curve: usize,
    sigma2: f64,
    datasets: usize,
    bootstrap: BootstrapOptions,
) -> CoverageStudy {
    CoverageStudy {
        simulation: SimulationSpec::setting3(n, image, curve, sigma2, 0),
        fit: setting3_fit(ImagePathway::Spline, sigma2),
        datasets,
        bootstrap,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn replicate_seeds_are_distinct_and_stable() {
        let a: Vec<u64> = (0..50).map(|r| replicate_seed(3, r)).collect();
        let mut s = a.clone();
        s.sort_unstable();
        s.dedup();
        assert_eq!(s.len(), 50);
        assert_eq!(a, (0..50).map(|r| replicate_seed(3, r)).collect::<Vec<_>>());
        assert_ne!(replicate_seed(3, 0), replicate_seed(4, 0));
    }

    #[test]
    fn study_is_deterministic_and_scores_exact_fit() {
        let study = setting1_study(60, Decay::TableExp, 0.0, 3);
        let a = run_study(&study, 9).unwrap();
        let b = run_study(&study, 9).unwrap();
        assert_eq!(a, b);
        for r in &a {
            assert_eq!(r.metrics.m, 8);
            assert!(r.metrics.mrse < 1e-3, "mrse {}", r.metrics.mrse);
            assert!(r.metrics.err_eigenfunction[0] < 0.1);
        }
        let s = summarize(&a);
        assert_eq!(s.median_err_eigenvalue.len(), 8);
    }

    #[test]
    fn degenerate_level_covers_everything() {
        let study = CoverageStudy {
            simulation: SimulationSpec::setting3(40, (12, 8), 20, 0.0, 0),
            fit: FitConfig {
                elements: vec![
                    ElementMethod::Spline { k: vec![6, 6], degree: 3, lambda: Lambda::Fixed(0.0), penalty_order: 2 },
                    ElementMethod::Spline { k: vec![8], degree: 3, lambda: Lambda::Fixed(0.0), penalty_order: 2 },
                ],
                mfpca: unit_mfpca(3),
            },
            datasets: 2,
            bootstrap: BootstrapOptions::new(10, &[1.0, 0.5], 2, 0),
        };
        let t = coverage_experiment(&study, 1).unwrap();
        assert_eq!(t.components, 2);
        assert_eq!(t.pointwise[0].len(), 2);
        for j in 0..2 {
            assert!(t.element_mean(1, j) <= t.element_mean(0, j));
            assert!(t.mean[0][j].iter().all(|c| (0.0..=1.0).contains(c)));
        }
    }
}
