//! Univariate FPCA: dense estimation from the discretized covariance
//! operator, and a sparse variant with spline-smoothed mean and covariance
//! and conditional-expectation (BLUP) scores.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::basis::{BSpline, NormalEquations, AxisBasis, GCV_LAMBDA_RANGE, GCV_POINTS};
use crate::error::{Error, Result};
use crate::fundata::{quadrature_weights, Domain, ElementSample};
use crate::linalg::{cholesky_jitter, difference_penalty, log_grid, orient_max_abs, sym_eigen_desc};

/// Relative threshold below which estimated eigenvalues are dropped.
pub const EIGEN_DROP_RATIO: f64 = 1e-10;

/// How many components to keep.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Truncation {
    /// A fixed number of components.
    Count(usize),
    /// Smallest number reaching this cumulative proportion of variance.
    Pve(f64),
    /// Every positive component.
    All,
}

impl Truncation {
    /// Number of components to keep out of the positive `eigenvalues`
    /// (sorted decreasingly). Returns the count and whether it was capped.
    pub fn resolve(&self, eigenvalues: &[f64]) -> (usize, bool) {
        let avail = eigenvalues.len();
        match *self {
            Truncation::Count(m) => (m.min(avail), m > avail),
            Truncation::All => (avail, false),
            Truncation::Pve(target) => {
                let total: f64 = eigenvalues.iter().sum();
                if total <= 0.0 {
                    return (0, target > 0.0);
                }
                let mut cum = 0.0;
                for (i, l) in eigenvalues.iter().enumerate() {
                    cum += l;
                    if cum / total >= target - 1e-12 {
                        return (i + 1, false);
                    }
                }
                (avail, true)
            }
        }
    }
}

/// Result of a univariate FPCA on one element.
#[derive(Clone, Debug)]
pub struct UfpcaResult {
    pub domain: Domain,
    pub mean: DVector<f64>,
    /// Retained eigenvalues, nonincreasing.
    pub eigenvalues: Vec<f64>,
    /// Every positive eigenvalue that survived the drop rule; used for pve.
    pub all_eigenvalues: Vec<f64>,
    /// Retained eigenfunctions, one row per component.
    pub eigenfunctions: DMatrix<f64>,
    /// Scores, `N x M`.
    pub scores: DMatrix<f64>,
    pub sigma2: f64,
    /// Proportion of variance explained per retained component.
    pub pve: Vec<f64>,
    /// True when scores are quadrature projections of the demeaned data.
    pub projection_scores: bool,
    pub warnings: Vec<String>,
}

impl UfpcaResult {
    pub fn m(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn n(&self) -> usize {
        self.scores.nrows()
    }

    pub fn cumulative_pve(&self) -> Vec<f64> {
        let mut acc = 0.0;
        self.pve
            .iter()
            .map(|p| {
                acc += p;
                acc
            })
            .collect()
    }

    /// Keep the leading `m` components.
    pub fn truncated(&self, m: usize) -> Self {
        let m = m.min(self.m());
        Self {
            eigenvalues: self.eigenvalues[..m].to_vec(),
            eigenfunctions: self.eigenfunctions.rows(0, m).into_owned(),
            scores: self.scores.columns(0, m).into_owned(),
            pve: self.pve[..m].to_vec(),
            ..self.clone()
        }
    }

    /// Reconstruction `mean + Σ ξ_m φ_m` of observation `i`.
    pub fn reconstruct(&self, i: usize) -> DVector<f64> {
        let mut out = self.mean.clone();
        for m in 0..self.m() {
            out += self.eigenfunctions.row(m).transpose() * self.scores[(i, m)];
        }
        out
    }
}

/// Covariance smoothing by a penalized tensor B-spline surface.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CovSmoothing {
    /// Cubic B-splines per axis.
    pub k: usize,
    #[serde(default = "default_penalty_order")]
    pub penalty_order: usize,
}

fn default_penalty_order() -> usize {
    2
}

impl Default for CovSmoothing {
    fn default() -> Self {
        Self { k: 15, penalty_order: 2 }
    }
}

/// Eigenanalysis of a covariance matrix under quadrature: `W^{1/2} C W^{1/2}`
/// is decomposed and eigenvectors are mapped back by `W^{-1/2}`.
struct Eigenbasis {
    positive: Vec<f64>,
    functions: DMatrix<f64>,
}

fn quadrature_eigen(cov: &DMatrix<f64>, q: &[f64]) -> Eigenbasis {
    let sq: Vec<f64> = q.iter().map(|w| w.sqrt()).collect();
    let a = crate::linalg::scale_rows_cols(cov, &sq);
    let (vals, vecs) = sym_eigen_desc(&a);
    let lead = vals.first().copied().unwrap_or(0.0);
    let keep = vals
        .iter()
        .take_while(|&&l| l > 0.0 && l >= EIGEN_DROP_RATIO * lead)
        .count();
    let g = cov.nrows();
    let mut functions = DMatrix::zeros(keep, g);
    for m in 0..keep {
        let mut phi: Vec<f64> = (0..g).map(|k| vecs[(k, m)] / sq[k]).collect();
        orient_max_abs(&mut phi);
        for k in 0..g {
            functions[(m, k)] = phi[k];
        }
    }
    Eigenbasis {
        positive: vals[..keep].to_vec(),
        functions,
    }
}

fn assemble(
    domain: &Domain,
    mean: DVector<f64>,
    basis: Eigenbasis,
    truncation: Truncation,
    n: usize,
    sigma2: f64,
    mut warnings: Vec<String>,
) -> (UfpcaResult, usize) {
    let (mut m, capped) = truncation.resolve(&basis.positive);
    if capped {
        warnings.push(format!(
            "requested truncation {truncation:?} exceeds the {} available components; capped",
            basis.positive.len()
        ));
    }
    let limit = (n.saturating_sub(1)).min(domain.len());
    if m > limit {
        warnings.push(format!("truncation capped at {limit} (N - 1 / grid size)"));
        m = limit;
    }
    for w in &warnings {
        log::warn!("{w}");
    }
    let total: f64 = basis.positive.iter().sum();
    let pve = basis.positive[..m]
        .iter()
        .map(|l| if total > 0.0 { l / total } else { 0.0 })
        .collect();
    let result = UfpcaResult {
        domain: domain.clone(),
        mean,
        eigenvalues: basis.positive[..m].to_vec(),
        all_eigenvalues: basis.positive.clone(),
        eigenfunctions: basis.functions.rows(0, m).into_owned(),
        scores: DMatrix::zeros(n, m),
        sigma2,
        pve,
        projection_scores: true,
        warnings,
    };
    (result, m)
}

/// Dense univariate FPCA by eigendecomposition of the discretized sample
/// covariance operator. Optionally the covariance is smoothed first
/// (diagonal excluded); the noise variance is then the mean diagonal excess,
/// floored at zero. Scores are quadrature projections.
pub fn dense_fpca(
    element: &ElementSample,
    truncation: Truncation,
    smoothing: Option<CovSmoothing>,
) -> Result<UfpcaResult> {
    if element.is_sparse() {
        return Err(Error::InvalidArgument("dense_fpca needs an unmasked element".into()));
    }
    let n = element.n();
    if n < 2 {
        return Err(Error::InvalidArgument("dense_fpca needs at least 2 observations".into()));
    }
    let domain = element.domain();
    let q = quadrature_weights(domain)?;
    let mean = element.pointwise_mean(0)?;
    let mut xc = element.values().clone();
    for mut row in xc.row_iter_mut() {
        row -= mean.transpose();
    }
    let mut cov = xc.transpose() * &xc / (n - 1) as f64;
    let mut sigma2 = 0.0;
    if let Some(s) = smoothing {
        if domain.dim() != 1 {
            return Err(Error::InvalidArgument(
                "covariance smoothing is implemented for 1D elements".into(),
            ));
        }
        let g = domain.len();
        let weights = DMatrix::from_fn(g, g, |a, b| if a == b { 0.0 } else { q.0[a] * q.0[b] });
        let smooth = smooth_surface(domain, &cov, &weights, &DMatrix::from_element(g, g, 1.0), s)?;
        let excess: f64 = (0..g).map(|k| cov[(k, k)] - smooth[(k, k)]).sum::<f64>() / g as f64;
        sigma2 = excess.max(0.0);
        cov = smooth;
    }
    let eig = quadrature_eigen(&cov, q.as_slice());
    let (mut result, m) = assemble(domain, mean, eig, truncation, n, sigma2, Vec::new());
    // ξ_im = Σ_k q_k x_ik φ_m(t_k)
    let phi_w = DMatrix::from_fn(domain.len(), m, |k, c| q.0[k] * result.eigenfunctions[(c, k)]);
    result.scores = xc * phi_w;
    Ok(result)
}

/// Options for the sparse (PACE-style) pathway.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SparseOptions {
    /// Cubic B-splines for the mean curve.
    #[serde(default = "default_sparse_mean_k")]
    pub mean_k: usize,
    /// Cubic B-splines per axis for the covariance surface.
    #[serde(default = "default_sparse_cov_k")]
    pub cov_k: usize,
    #[serde(default = "default_penalty_order")]
    pub penalty_order: usize,
}

fn default_sparse_mean_k() -> usize {
    15
}

fn default_sparse_cov_k() -> usize {
    12
}

impl Default for SparseOptions {
    fn default() -> Self {
        Self {
            mean_k: default_sparse_mean_k(),
            cov_k: default_sparse_cov_k(),
            penalty_order: 2,
        }
    }
}

fn axis_bspline(domain: &Domain, k: usize) -> Result<AxisBasis> {
    let (a, b) = domain.bounds(0);
    Ok(AxisBasis::BSpline(BSpline::equispaced(a, b, k, 3)?))
}

/// Penalized tensor-spline fit of a surface given on the product grid of a
/// 1D domain with itself. `weights` are per-cell regression weights, `counts`
/// the number of raw observations each cell stands for (used for GCV).
fn smooth_surface(
    domain: &Domain,
    values: &DMatrix<f64>,
    weights: &DMatrix<f64>,
    counts: &DMatrix<f64>,
    opts: CovSmoothing,
) -> Result<DMatrix<f64>> {
    let basis = axis_bspline(domain, opts.k)?;
    let g = domain.len();
    let rows: Vec<Vec<(usize, f64)>> = domain
        .axis(0)
        .iter()
        .map(|&t| basis.eval_sparse(t))
        .collect::<Result<_>>()?;
    let k = basis.k();
    let mut ne = NormalEquations::new(k * k);
    let mut tensor_row = Vec::with_capacity(16);
    for a in 0..g {
        for b in 0..g {
            let w = weights[(a, b)];
            if w <= 0.0 {
                continue;
            }
            tensor_row.clear();
            for &(i, vi) in &rows[a] {
                for &(j, vj) in &rows[b] {
                    tensor_row.push((i * k + j, vi * vj));
                }
            }
            ne.add(&tensor_row, w, values[(a, b)], counts[(a, b)]);
        }
    }
    let penalty = tensor_penalty(k, opts.penalty_order);
    let candidates = log_grid(GCV_LAMBDA_RANGE.0, GCV_LAMBDA_RANGE.1, GCV_POINTS);
    let (_, theta) = ne.fit(&penalty, &candidates)?;
    let coef = DMatrix::from_row_slice(k, k, theta.as_slice());
    let coef = (&coef + coef.transpose()) * 0.5;
    let mut design = DMatrix::zeros(g, k);
    for (a, row) in rows.iter().enumerate() {
        for &(i, v) in row {
            design[(a, i)] = v;
        }
    }
    Ok(&design * coef * design.transpose())
}

fn tensor_penalty(k: usize, order: usize) -> DMatrix<f64> {
    let p = difference_penalty(k, order);
    let i = DMatrix::identity(k, k);
    p.kronecker(&i) + i.kronecker(&p)
}

/// Sparse FPCA for masked 1D elements.
///
/// The mean is a penalized spline fitted to the pooled observations; the
/// covariance a penalized tensor spline fitted to the pooled off-diagonal
/// raw cross-products. Scores are conditional expectations
/// `Λ Φ_iᵀ (Φ_i Λ Φ_iᵀ + σ² I)⁻¹ (y_i − μ_i)` over each curve's own points.
pub fn sparse_fpca(
    element: &ElementSample,
    truncation: Truncation,
    opts: SparseOptions,
) -> Result<UfpcaResult> {
    let domain = element.domain();
    if domain.dim() != 1 {
        return Err(Error::InvalidArgument("sparse_fpca supports 1D elements".into()));
    }
    let n = element.n();
    if n < 2 {
        return Err(Error::InvalidArgument("sparse_fpca needs at least 2 observations".into()));
    }
    let g = domain.len();
    let q = quadrature_weights(domain)?;
    let values = element.values();
    let observed: Vec<Vec<usize>> = (0..n).map(|i| element.observed(i)).collect();

    // pooled mean
    let mean_basis = axis_bspline(domain, opts.mean_k)?;
    let mean_rows: Vec<Vec<(usize, f64)>> = domain
        .axis(0)
        .iter()
        .map(|&t| mean_basis.eval_sparse(t))
        .collect::<Result<_>>()?;
    let mut ne = NormalEquations::new(mean_basis.k());
    let mut sums = vec![(0.0f64, 0.0f64, 0.0f64); g];
    for (i, obs) in observed.iter().enumerate() {
        for &k in obs {
            let y = values[(i, k)];
            sums[k].0 += 1.0;
            sums[k].1 += y;
            sums[k].2 += y * y;
        }
    }
    for (k, &(c, s, s2)) in sums.iter().enumerate() {
        if c > 0.0 {
            ne.add_aggregated(&mean_rows[k], c, s, s2);
        }
    }
    let candidates = log_grid(GCV_LAMBDA_RANGE.0, GCV_LAMBDA_RANGE.1, GCV_POINTS);
    let (_, mean_theta) = ne.fit(&mean_basis.penalty(opts.penalty_order), &candidates)?;
    let mean = DVector::from_fn(g, |k, _| {
        mean_rows[k].iter().map(|&(i, v)| v * mean_theta[i]).sum()
    });

    // pooled raw cross-products
    let mut cell_sum = DMatrix::<f64>::zeros(g, g);
    let mut cell_count = DMatrix::<f64>::zeros(g, g);
    for (i, obs) in observed.iter().enumerate() {
        for &a in obs {
            let ra = values[(i, a)] - mean[a];
            for &b in obs {
                let rb = values[(i, b)] - mean[b];
                cell_sum[(a, b)] += ra * rb;
                cell_count[(a, b)] += 1.0;
            }
        }
    }
    check_design(domain, &cell_count, opts.cov_k)?;
    let mut cell_mean = DMatrix::<f64>::zeros(g, g);
    let mut weights = DMatrix::zeros(g, g);
    let mut counts = DMatrix::zeros(g, g);
    for a in 0..g {
        for b in 0..g {
            let c = cell_count[(a, b)];
            if a != b && c > 0.0 {
                cell_mean[(a, b)] = cell_sum[(a, b)] / c;
                weights[(a, b)] = c;
                // each pair appears in both (a, b) and (b, a)
                counts[(a, b)] = 0.5 * c;
            }
        }
    }
    let cov = smooth_surface(
        domain,
        &cell_mean,
        &weights,
        &counts,
        CovSmoothing { k: opts.cov_k, penalty_order: opts.penalty_order },
    )?;
    let (mut diag_excess, mut diag_count) = (0.0, 0.0);
    for k in 0..g {
        let c = cell_count[(k, k)];
        if c > 0.0 {
            diag_excess += cell_sum[(k, k)] - c * cov[(k, k)];
            diag_count += c;
        }
    }
    let sigma2 = if diag_count > 0.0 { (diag_excess / diag_count).max(0.0) } else { 0.0 };

    let eig = quadrature_eigen(&cov, q.as_slice());
    let warnings = vec!["sparse scores are conditional expectations, not projections".to_string()];
    let (mut result, m) = assemble(domain, mean.clone(), eig, truncation, n, sigma2, warnings);
    result.projection_scores = false;
    if m == 0 {
        return Ok(result);
    }
    // truncated components act as extra white noise in the BLUP: their
    // variance, spread over the domain
    let lead = result.eigenvalues[0];
    let left_out: f64 = result.all_eigenvalues[m..].iter().sum::<f64>() / domain.measure();
    let noise = (sigma2 + left_out).max(1e-10 * lead);
    for (i, obs) in observed.iter().enumerate() {
        let resid = DVector::from_iterator(obs.len(), obs.iter().map(|&k| values[(i, k)] - mean[k]));
        let xi = blup(&result.eigenfunctions, &result.eigenvalues, obs, &resid, noise)?;
        result.scores.row_mut(i).copy_from(&xi.transpose());
    }
    Ok(result)
}

/// Conditional-expectation scores for one curve observed at `obs`.
pub fn blup(
    eigenfunctions: &DMatrix<f64>,
    eigenvalues: &[f64],
    obs: &[usize],
    resid: &DVector<f64>,
    noise: f64,
) -> Result<DVector<f64>> {
    let m = eigenvalues.len();
    let phi = DMatrix::from_fn(obs.len(), m, |r, c| eigenfunctions[(c, obs[r])]);
    let lambda = DMatrix::from_diagonal(&DVector::from_column_slice(eigenvalues));
    if obs.len() <= m {
        let mut k = &phi * &lambda * phi.transpose();
        for r in 0..obs.len() {
            k[(r, r)] += noise;
        }
        let chol = cholesky_jitter(&k, "BLUP covariance")?;
        Ok(&lambda * phi.transpose() * chol.solve(resid))
    } else {
        // equivalent information form: (ΦᵀΦ + σ² Λ⁻¹)⁻¹ Φᵀ r
        let mut a = phi.transpose() * &phi;
        for c in 0..m {
            a[(c, c)] += noise / eigenvalues[c];
        }
        let chol = cholesky_jitter(&a, "BLUP information matrix")?;
        Ok(chol.solve(&(phi.transpose() * resid)))
    }
}

/// Every knot-interval block of the covariance basis needs at least two
/// pooled off-diagonal products.
fn check_design(domain: &Domain, counts: &DMatrix<f64>, cov_k: usize) -> Result<()> {
    let (lo, hi) = domain.bounds(0);
    let intervals = cov_k.saturating_sub(3).max(1);
    let cell = |t: f64| (((t - lo) / (hi - lo) * intervals as f64) as usize).min(intervals - 1);
    let mut blocks = vec![0.0; intervals * intervals];
    let axis = domain.axis(0);
    for a in 0..axis.len() {
        for b in 0..axis.len() {
            if a != b {
                blocks[cell(axis[a]) * intervals + cell(axis[b])] += counts[(a, b)];
            }
        }
    }
    if let Some(pos) = blocks.iter().position(|&c| c < 2.0) {
        return Err(Error::InsufficientDesign(format!(
            "covariance block ({}, {}) has {} off-diagonal products",
            pos / intervals,
            pos % intervals,
            blocks[pos]
        )));
    }
    Ok(())
}
