//! Error measures with sign alignment, pointwise percentile bootstrap bands
//! and band coverage.

use nalgebra::DMatrix;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fundata::{quadrature_weights, scalar_product, Domain, MultiFunData, MultiFunction};
use crate::linalg::quantile_sorted;
use crate::pipeline::{refit_resampled, FitConfig, Fitted};
use crate::simgen::rng_stream;

/// Stream offset for bootstrap resampling, clear of the simulation streams.
const STREAM_BOOTSTRAP: u64 = 1 << 32;

/// `ψ̂` or `−ψ̂`, whichever has nonnegative weighted product with `ψ`.
pub fn align_sign(truth: &MultiFunction, estimate: &MultiFunction, w: &[f64]) -> Result<MultiFunction> {
    let ip = scalar_product(truth, estimate, w)?;
    Ok(if ip < 0.0 { estimate.scaled(-1.0) } else { estimate.clone() })
}

/// `(ν − ν̂)² / ν²`.
pub fn err_eigenvalue(nu: f64, nu_hat: f64) -> Result<f64> {
    if !(nu > 0.0) {
        return Err(Error::InvalidArgument("relative eigenvalue error needs nu > 0".into()));
    }
    Ok(((nu - nu_hat) / nu).powi(2))
}

/// `⦀ψ − ψ̂⦀²` after sign alignment.
pub fn err_eigenfunction(truth: &MultiFunction, estimate: &MultiFunction, w: &[f64]) -> Result<f64> {
    let aligned = align_sign(truth, estimate, w)?;
    let diff = MultiFunction {
        domains: truth.domains.clone(),
        values: truth.values.iter().zip(&aligned.values).map(|(a, b)| a - b).collect(),
    };
    scalar_product(&diff, &diff, w)
}

/// Mean over observations of `⦀x_i − x̂_i⦀² / ⦀x_i⦀²`. Observations with
/// zero norm are skipped.
pub fn mrse(truth: &MultiFunData, fitted: &MultiFunData, w: &[f64]) -> Result<f64> {
    if truth.n() != fitted.n() || truth.p() != fitted.p() {
        return Err(Error::Shape("truth and reconstruction differ in size".into()));
    }
    let quad = truth.quadrature()?;
    let (mut sum, mut used) = (0.0, 0usize);
    for i in 0..truth.n() {
        let (mut num, mut den) = (0.0, 0.0);
        for j in 0..truth.p() {
            let x = truth.element(j).values().row(i);
            let y = fitted.element(j).values().row(i);
            let d: Vec<f64> = x.iter().zip(y.iter()).map(|(a, b)| a - b).collect();
            let xv: Vec<f64> = x.iter().copied().collect();
            num += w[j] * quad[j].inner(&d, &d);
            den += w[j] * quad[j].inner(&xv, &xv);
        }
        if den > 0.0 {
            sum += num / den;
            used += 1;
        } else {
            log::warn!("observation {i} has zero norm; skipped in MRSE");
        }
    }
    if used == 0 {
        return Err(Error::InvalidArgument("every observation has zero norm".into()));
    }
    Ok(sum / used as f64)
}

/// Pointwise bands for one level: per element, `M x G_j` lower and upper.
#[derive(Clone, Debug)]
pub struct Band {
    pub level: f64,
    pub lower: Vec<DMatrix<f64>>,
    pub upper: Vec<DMatrix<f64>>,
}

#[derive(Clone, Debug)]
pub struct BandSet {
    pub replicates: usize,
    pub failed: usize,
    pub components: usize,
    pub bands: Vec<Band>,
}

/// How bootstrap samples are drawn.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Resampling {
    #[default]
    /// N subjects with replacement.
    Subjects,
    /// Every replicate equals the original sample (test stub).
    Identity,
}

fn default_levels() -> Vec<f64> {
    vec![0.95, 0.9]
}

fn default_components() -> usize {
    3
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BootstrapOptions {
    /// Number of replicates `B`.
    pub b: usize,
    #[serde(default = "default_levels")]
    pub levels: Vec<f64>,
    /// Leading eigenfunctions to band.
    #[serde(default = "default_components")]
    pub components: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub resampling: Resampling,
}

impl BootstrapOptions {
    pub fn new(b: usize, levels: &[f64], components: usize, seed: u64) -> Self {
        Self { b, levels: levels.to_vec(), components, seed, resampling: Resampling::Subjects }
    }
}

/// Pointwise percentile bands for the leading `components` eigenfunctions.
/// Each replicate is refitted (see [`refit_resampled`]) and its
/// eigenfunctions sign-aligned to the point estimate. Failed replicates are
/// excluded; more than 10% failures is an error.
pub fn bootstrap_bands(
    data: &MultiFunData,
    config: &FitConfig,
    point: &Fitted,
    opts: &BootstrapOptions,
) -> Result<BandSet> {
    let (b, levels, seed, resampling) = (opts.b, &opts.levels, opts.seed, opts.resampling);
    if b < 2 {
        return Err(Error::InvalidArgument("bootstrap needs B >= 2".into()));
    }
    if let Some(l) = levels.iter().find(|l| !(**l > 0.0 && **l <= 1.0)) {
        return Err(Error::InvalidArgument(format!("band level {l} outside (0, 1]")));
    }
    let m = opts.components.min(point.result.m());
    let n = data.n();
    let w = point.result.weights.clone();
    let quad: Vec<_> = point.result.domains.iter().map(quadrature_weights).collect::<Result<_>>()?;
    let reference = &point.result.eigenfunctions;

    let replicates: Vec<Option<Vec<DMatrix<f64>>>> = (0..b)
        .into_par_iter()
        .map(|r| {
            let rows: Vec<usize> = match resampling {
                Resampling::Identity => (0..n).collect(),
                Resampling::Subjects => {
                    let mut rng = rng_stream(seed, STREAM_BOOTSTRAP + r as u64);
                    (0..n).map(|_| rng.random_range(0..n)).collect()
                }
            };
            let fit = match refit_resampled(data, config, point, &rows) {
                Ok(f) if f.result.m() >= m => f,
                Ok(_) => return None,
                Err(e) => {
                    log::warn!("bootstrap replicate {r} failed: {e}");
                    return None;
                }
            };
            let mut efs: Vec<DMatrix<f64>> = fit.result.eigenfunctions.iter().map(|e| e.rows(0, m).into_owned()).collect();
            for c in 0..m {
                let ip: f64 = (0..efs.len())
                    .map(|j| {
                        let a: Vec<f64> = efs[j].row(c).iter().copied().collect();
                        let b: Vec<f64> = reference[j].row(c).iter().copied().collect();
                        w[j] * quad[j].inner(&a, &b)
                    })
                    .sum();
                if ip < 0.0 {
                    for e in efs.iter_mut() {
                        e.row_mut(c).neg_mut();
                    }
                }
            }
            Some(efs)
        })
        .collect();

    let ok: Vec<&Vec<DMatrix<f64>>> = replicates.iter().flatten().collect();
    let failed = b - ok.len();
    if failed * 10 > b || ok.len() < 2 {
        return Err(Error::BootstrapFailure { failed, total: b });
    }
    let mut bands = Vec::with_capacity(levels.len());
    for &level in levels.iter() {
        let (plo, phi) = ((1.0 - level) / 2.0, (1.0 + level) / 2.0);
        let mut lower = Vec::with_capacity(reference.len());
        let mut upper = Vec::with_capacity(reference.len());
        for j in 0..reference.len() {
            let g = reference[j].ncols();
            let mut lo = DMatrix::zeros(m, g);
            let mut hi = DMatrix::zeros(m, g);
            let mut buf = Vec::with_capacity(ok.len());
            for c in 0..m {
                for k in 0..g {
                    buf.clear();
                    buf.extend(ok.iter().map(|rep| rep[j][(c, k)]));
                    buf.sort_by(|a, b| a.partial_cmp(b).unwrap());
                    lo[(c, k)] = quantile_sorted(&buf, plo);
                    hi[(c, k)] = quantile_sorted(&buf, phi);
                }
            }
            lower.push(lo);
            upper.push(hi);
        }
        bands.push(Band { level, lower, upper });
    }
    Ok(BandSet { replicates: b, failed, components: m, bands })
}

/// Pointwise inclusion of the truth in `band`, as `[element][component][point]`.
/// Each true component is first sign-aligned to the estimate.
pub fn band_inclusion(
    band: &Band,
    truth: &[DMatrix<f64>],
    estimate: &[DMatrix<f64>],
    domains: &[Domain],
    w: &[f64],
) -> Result<Vec<Vec<Vec<bool>>>> {
    let m = band.lower[0].nrows();
    let quad: Vec<_> = domains.iter().map(quadrature_weights).collect::<Result<_>>()?;
    let sign: Vec<f64> = (0..m)
        .map(|c| {
            let ip: f64 = (0..truth.len())
                .map(|j| {
                    let a: Vec<f64> = truth[j].row(c).iter().copied().collect();
                    let b: Vec<f64> = estimate[j].row(c).iter().copied().collect();
                    w[j] * quad[j].inner(&a, &b)
                })
                .sum();
            if ip < 0.0 {
                -1.0
            } else {
                1.0
            }
        })
        .collect();
    Ok((0..truth.len())
        .map(|j| {
            (0..m)
                .map(|c| {
                    (0..truth[j].ncols())
                        .map(|k| {
                            let t = sign[c] * truth[j][(c, k)];
                            band.lower[j][(c, k)] <= t && t <= band.upper[j][(c, k)]
                        })
                        .collect()
                })
                .collect()
        })
        .collect())
}
