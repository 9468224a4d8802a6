//! Multivariate FPCA from univariate basis expansions.
//!
//! Every element contributes a block of coefficients (univariate scores for
//! orthonormal bases, centered spline coefficients otherwise). With
//! `Θ` the `N × K₊` block matrix, `D` the expanded weight diagonal and `B`
//! the block-diagonal Gram matrix, the eigenproblem `B Q_w c = ν c` with
//! `Q_w = DΘᵀΘD / (N−1)` is solved through `B = RRᵀ` as the symmetric problem
//! `RᵀQ_wR c̃ = ν c̃`, `c = R c̃`.

use std::ops::Range;

use nalgebra::{DMatrix, DVector};

use crate::basis::BasisExpansion;
use crate::error::{Error, Result};
use crate::fundata::{check_weights, quadrature_weights, Domain, ElementSample, MultiFunData, MultiFunction};
use crate::linalg::{cholesky_jitter, max_abs_sign, orient_max_abs, sym_eigen_desc};
use crate::ufpca::{Truncation, UfpcaResult, EIGEN_DROP_RATIO};

/// Grid points above which the direct oracle refuses to run.
pub const ORACLE_MAX_POINTS: usize = 4000;

/// Relative eigenvalue gap below which components are flagged as only
/// identified up to their common subspace.
pub const DEGENERACY_GAP: f64 = 1e-8;

/// One element's contribution: coefficients, basis functions on the grid
/// and (for non-orthonormal bases) the Gram matrix.
#[derive(Clone, Debug)]
pub struct UnivariateBlock {
    pub domain: Domain,
    pub mean: DVector<f64>,
    /// `N x K`, centered.
    pub coefficients: DMatrix<f64>,
    /// `K x G`, one basis function per row.
    pub functions: DMatrix<f64>,
    /// `None` means the basis is orthonormal.
    pub gram: Option<DMatrix<f64>>,
    pub projection_scores: bool,
}

impl UnivariateBlock {
    pub fn k(&self) -> usize {
        self.coefficients.ncols()
    }
}

impl From<&UfpcaResult> for UnivariateBlock {
    fn from(u: &UfpcaResult) -> Self {
        Self {
            domain: u.domain.clone(),
            mean: u.mean.clone(),
            coefficients: u.scores.clone(),
            functions: u.eigenfunctions.clone(),
            gram: None,
            projection_scores: u.projection_scores,
        }
    }
}

impl From<&BasisExpansion> for UnivariateBlock {
    fn from(b: &BasisExpansion) -> Self {
        Self {
            domain: b.domain.clone(),
            mean: b.mean.clone(),
            coefficients: b.coefficients.clone(),
            functions: b.design.transpose(),
            gram: Some(b.gram.clone()),
            projection_scores: true,
        }
    }
}

#[derive(Clone, Debug)]
pub struct MfpcaResult {
    /// Retained eigenvalues ν̂, nonincreasing.
    pub eigenvalues: Vec<f64>,
    /// Every eigenvalue above the drop threshold, before truncation.
    pub all_eigenvalues: Vec<f64>,
    /// Eigenvectors ĉ, `K₊ x M`.
    pub eigenvectors: DMatrix<f64>,
    /// Column ranges of each element's block in `Θ`.
    pub blocks: Vec<Range<usize>>,
    /// Per element, `M x G_j`.
    pub eigenfunctions: Vec<DMatrix<f64>>,
    /// `N x M`.
    pub scores: DMatrix<f64>,
    pub means: Vec<DVector<f64>>,
    pub domains: Vec<Domain>,
    pub weights: Vec<f64>,
    /// `Ẑ` (orthonormal, unit weights) or `Q̂_w`.
    pub covariance: DMatrix<f64>,
    pub pve: Vec<f64>,
    /// False when any univariate block used non-projection (BLUP) scores.
    pub projection_scores: bool,
    /// Index pairs `(m, m+1)` whose eigenvalues are numerically tied.
    pub degenerate: Vec<(usize, usize)>,
    pub warnings: Vec<String>,
}

impl MfpcaResult {
    pub fn m(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn n(&self) -> usize {
        self.scores.nrows()
    }

    pub fn p(&self) -> usize {
        self.domains.len()
    }

    /// `ψ̂_m` as a multivariate function.
    pub fn eigenfunction(&self, m: usize) -> MultiFunction {
        MultiFunction {
            domains: self.domains.clone(),
            values: self.eigenfunctions.iter().map(|e| e.row(m).transpose()).collect(),
        }
    }

    /// `mean + Σ_{m<M} ρ̂_{i,m} ψ̂_m` for observation `i`.
    pub fn reconstruct_one(&self, i: usize, m: usize) -> Vec<DVector<f64>> {
        let m = m.min(self.m());
        self.eigenfunctions
            .iter()
            .zip(&self.means)
            .map(|(psi, mu)| {
                let mut out = mu.clone();
                for c in 0..m {
                    out += psi.row(c).transpose() * self.scores[(i, c)];
                }
                out
            })
            .collect()
    }

    /// Truncated Karhunen–Loève reconstruction of every observation.
    pub fn reconstruct(&self, m: usize) -> Result<MultiFunData> {
        if m > self.m() {
            return Err(Error::InvalidArgument(format!(
                "reconstruction with {m} components, only {} retained",
                self.m()
            )));
        }
        let scores = self.scores.columns(0, m);
        let elements = self
            .eigenfunctions
            .iter()
            .zip(&self.means)
            .zip(&self.domains)
            .map(|((psi, mu), d)| {
                let mut vals = scores * psi.rows(0, m);
                for mut row in vals.row_iter_mut() {
                    row += mu.transpose();
                }
                ElementSample::dense(d.clone(), vals)
            })
            .collect::<Result<Vec<_>>>()?;
        MultiFunData::unlabelled(elements)
    }

    /// Keep the leading `m` components.
    pub fn truncated(&self, m: usize) -> Self {
        let m = m.min(self.m());
        Self {
            eigenvalues: self.eigenvalues[..m].to_vec(),
            eigenvectors: self.eigenvectors.columns(0, m).into_owned(),
            eigenfunctions: self.eigenfunctions.iter().map(|e| e.rows(0, m).into_owned()).collect(),
            scores: self.scores.columns(0, m).into_owned(),
            pve: self.pve[..m].to_vec(),
            degenerate: self.degenerate.iter().copied().filter(|&(_, b)| b < m).collect(),
            ..self.clone()
        }
    }
}

/// MFPCA from orthonormal univariate decompositions with unit weights.
pub fn mfpca_from_scores(uni: &[UfpcaResult], truncation: Truncation) -> Result<MfpcaResult> {
    let blocks: Vec<UnivariateBlock> = uni.iter().map(UnivariateBlock::from).collect();
    let weights = vec![1.0; blocks.len()];
    mfpca(&blocks, &weights, truncation)
}

/// MFPCA from general basis expansions with Gram matrices and weights.
pub fn mfpca_general(
    expansions: &[BasisExpansion],
    weights: &[f64],
    truncation: Truncation,
) -> Result<MfpcaResult> {
    let blocks: Vec<UnivariateBlock> = expansions.iter().map(UnivariateBlock::from).collect();
    mfpca(&blocks, weights, truncation)
}

/// MFPCA for any mix of orthonormal and general blocks.
pub fn mfpca(blocks: &[UnivariateBlock], weights: &[f64], truncation: Truncation) -> Result<MfpcaResult> {
    if blocks.is_empty() {
        return Err(Error::InvalidArgument("no univariate blocks".into()));
    }
    check_weights(weights, blocks.len())?;
    let n = blocks[0].coefficients.nrows();
    if let Some(j) = blocks.iter().position(|b| b.coefficients.nrows() != n) {
        return Err(Error::Shape(format!(
            "element {j} has {} observations, expected {n}",
            blocks[j].coefficients.nrows()
        )));
    }
    if n < 2 {
        return Err(Error::InvalidArgument("MFPCA needs at least 2 observations".into()));
    }
    for (j, b) in blocks.iter().enumerate() {
        if b.functions.nrows() != b.k() || b.functions.ncols() != b.domain.len() {
            return Err(Error::Shape(format!("element {j}: basis functions do not match coefficients")));
        }
        if b.coefficients.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("coefficients of element {j}")));
        }
    }

    let mut ranges = Vec::with_capacity(blocks.len());
    let mut start = 0;
    for b in blocks {
        ranges.push(start..start + b.k());
        start += b.k();
    }
    let kp = start;
    let mut warnings = Vec::new();
    if n <= kp {
        warnings.push(format!("N = {n} does not exceed the {kp} pooled coefficients; covariance is rank deficient"));
    }

    // Θ D
    let mut theta_d = DMatrix::zeros(n, kp);
    for (b, (r, &w)) in blocks.iter().zip(ranges.iter().zip(weights)) {
        theta_d.columns_mut(r.start, r.len()).copy_from(&(&b.coefficients * w.sqrt()));
    }
    let q = theta_d.transpose() * &theta_d / (n - 1) as f64;

    // block-diagonal Cholesky factor of B
    let mut rfac = DMatrix::identity(kp, kp);
    let mut general = false;
    for (j, (b, r)) in blocks.iter().zip(&ranges).enumerate() {
        if let Some(g) = &b.gram {
            general = true;
            let chol = cholesky_jitter(g, &format!("Gram matrix of element {j}"))?;
            rfac.view_mut((r.start, r.start), (r.len(), r.len())).copy_from(&chol.l());
        }
    }
    let sym = if general { rfac.transpose() * &q * &rfac } else { q.clone() };
    let (vals, vecs) = sym_eigen_desc(&sym);

    let lead = vals.first().copied().unwrap_or(0.0);
    let positive: Vec<f64> = vals
        .iter()
        .copied()
        .take_while(|&v| v > 0.0 && v >= EIGEN_DROP_RATIO * lead)
        .collect();
    let (mut m, capped) = truncation.resolve(&positive);
    if capped {
        warnings.push(format!("requested {truncation:?} exceeds the {} positive components; capped", positive.len()));
    }
    m = m.min(positive.len());

    let mut c = DMatrix::zeros(kp, m);
    let mut coef = DMatrix::zeros(kp, m);
    for col in 0..m {
        let ct = vecs.column(col).into_owned();
        let full = if general { &rfac * &ct } else { ct.clone() };
        let flip = max_abs_sign(full.as_slice());
        c.set_column(col, &(full * flip));
        // basis coefficients of ψ: B⁻¹c = R⁻ᵀ c̃
        let a = if general {
            rfac.transpose()
                .solve_upper_triangular(&ct)
                .ok_or_else(|| Error::SingularFit("Cholesky factor of B".into()))?
        } else {
            ct
        };
        coef.set_column(col, &(a * flip));
    }

    let eigenfunctions = blocks
        .iter()
        .zip(ranges.iter().zip(weights))
        .map(|(b, (r, &w))| coef.rows(r.start, r.len()).transpose() * &b.functions / w.sqrt())
        .collect();
    let scores = &theta_d * &c;
    let total: f64 = positive.iter().sum();
    let pve = positive[..m].iter().map(|v| v / total).collect();
    let degenerate: Vec<(usize, usize)> = (1..m)
        .filter(|&k| positive[k - 1] - positive[k] < DEGENERACY_GAP * lead)
        .map(|k| (k - 1, k))
        .collect();
    if !degenerate.is_empty() {
        warnings.push(format!(
            "near-degenerate eigenvalues at {degenerate:?}; eigenfunctions are identified only up to their subspace"
        ));
    }
    for w in &warnings {
        log::warn!("{w}");
    }
    Ok(MfpcaResult {
        eigenvalues: positive[..m].to_vec(),
        all_eigenvalues: positive,
        eigenvectors: c,
        blocks: ranges,
        eigenfunctions,
        scores,
        means: blocks.iter().map(|b| b.mean.clone()).collect(),
        domains: blocks.iter().map(|b| b.domain.clone()).collect(),
        weights: weights.to_vec(),
        covariance: q,
        pve,
        projection_scores: blocks.iter().all(|b| b.projection_scores),
        degenerate,
        warnings,
    })
}

/// Univariate decomposition of element `j` implied by a multivariate one.
#[derive(Clone, Debug)]
pub struct ImpliedUnivariate {
    pub eigenvalues: Vec<f64>,
    /// `K x G_j`.
    pub eigenfunctions: DMatrix<f64>,
    /// `K x M`; univariate scores are `ξ_i = S ρ_i`.
    pub score_map: DMatrix<f64>,
}

/// Eigenanalysis of `A_mn = (ν_m ν_n)^{1/2} ⟨ψ_m^(j), ψ_n^(j)⟩` for one
/// element. `psi` is `M x G` on `domain`.
pub fn univariate_from_multivariate(nu: &[f64], psi: &DMatrix<f64>, domain: &Domain) -> Result<ImpliedUnivariate> {
    let m = nu.len();
    if psi.nrows() != m || psi.ncols() != domain.len() {
        return Err(Error::Shape("eigenfunction matrix does not match eigenvalues and grid".into()));
    }
    if let Some(k) = nu.iter().position(|&v| !(v > 0.0)) {
        return Err(Error::InvalidArgument(format!("eigenvalue {k} is not positive")));
    }
    let q = quadrature_weights(domain)?;
    let psi_w = DMatrix::from_fn(domain.len(), m, |g, c| q.0[g] * psi[(c, g)]);
    let gram = psi * psi_w;
    let sq: Vec<f64> = nu.iter().map(|v| v.sqrt()).collect();
    let a = crate::linalg::scale_rows_cols(&gram, &sq);
    let (vals, vecs) = sym_eigen_desc(&a);
    let lead = vals.first().copied().unwrap_or(0.0);
    let keep = vals.iter().take_while(|&&l| l > 0.0 && l >= EIGEN_DROP_RATIO * lead).count();
    let mut eigenfunctions = DMatrix::zeros(keep, domain.len());
    let mut score_map = DMatrix::zeros(keep, m);
    for k in 0..keep {
        let lam = vals[k];
        let mut u: Vec<f64> = vecs.column(k).iter().copied().collect();
        orient_max_abs(&mut u);
        let mut phi = DVector::zeros(domain.len());
        for n in 0..m {
            phi += psi.row(n).transpose() * (sq[n] * u[n]);
            score_map[(k, n)] = lam.sqrt() * u[n] / sq[n];
        }
        eigenfunctions.set_row(k, &(phi / lam.sqrt()).transpose());
    }
    Ok(ImpliedUnivariate {
        eigenvalues: vals[..keep].to_vec(),
        eigenfunctions,
        score_map,
    })
}

/// `w_j = 1 / ∫ Var X^(j)`, by quadrature of the pointwise sample variance.
pub fn estimate_weights(data: &MultiFunData) -> Result<Vec<f64>> {
    if data.n() < 2 {
        return Err(Error::InvalidArgument("weight estimation needs N >= 2".into()));
    }
    data.elements()
        .iter()
        .enumerate()
        .map(|(j, e)| {
            let var = e.pointwise_variance(j)?;
            let q = quadrature_weights(e.domain())?;
            let total = q.integrate(var.as_slice());
            if total > 0.0 && total.is_finite() {
                Ok(1.0 / total)
            } else {
                Err(Error::ZeroVariance(j))
            }
        })
        .collect()
}

/// Per-element truncation by proportion of variance explained, and the
/// multivariate count `M = min(Σ M_j, requested)`.
pub fn select_truncation(uni: &[UfpcaResult], pve: f64, requested: Option<usize>) -> (Vec<usize>, usize) {
    let per: Vec<usize> = uni
        .iter()
        .map(|u| {
            let (m, capped) = Truncation::Pve(pve).resolve(&u.all_eigenvalues);
            if capped {
                log::warn!("pve {pve} unreachable with {} components; capped", u.all_eigenvalues.len());
            }
            m
        })
        .collect();
    let sum: usize = per.iter().sum();
    let m = requested.map_or(sum, |r| r.min(sum));
    (per, m)
}

/// Direct eigenanalysis of the discretized weighted covariance operator of
/// dense data. Verification oracle; refuses more than
/// [`ORACLE_MAX_POINTS`] pooled grid points.
pub fn direct_oracle(data: &MultiFunData, weights: &[f64], truncation: Truncation) -> Result<MfpcaResult> {
    check_weights(weights, data.p())?;
    let sizes: Vec<usize> = data.elements().iter().map(|e| e.grid_len()).collect();
    let total: usize = sizes.iter().sum();
    if total > ORACLE_MAX_POINTS {
        return Err(Error::TooLarge(format!(
            "direct oracle on {total} grid points (limit {ORACLE_MAX_POINTS})"
        )));
    }
    if data.elements().iter().any(|e| e.is_sparse()) {
        return Err(Error::InvalidArgument("direct oracle needs dense data".into()));
    }
    let n = data.n();
    if n < 2 {
        return Err(Error::InvalidArgument("direct oracle needs N >= 2".into()));
    }
    let mut scale = Vec::with_capacity(total);
    let mut means = Vec::with_capacity(data.p());
    let mut z = DMatrix::zeros(n, total);
    let mut off = 0;
    for (j, e) in data.elements().iter().enumerate() {
        let q = quadrature_weights(e.domain())?;
        let mu = e.pointwise_mean(j)?;
        for k in 0..e.grid_len() {
            let s = (weights[j] * q.0[k]).sqrt();
            scale.push(s);
            for i in 0..n {
                z[(i, off + k)] = s * (e.values()[(i, k)] - mu[k]);
            }
        }
        means.push(mu);
        off += e.grid_len();
    }
    let cov = z.transpose() * &z / (n - 1) as f64;
    let (vals, vecs) = sym_eigen_desc(&cov);
    let lead = vals.first().copied().unwrap_or(0.0);
    let positive: Vec<f64> = vals
        .iter()
        .copied()
        .take_while(|&v| v > 0.0 && v >= EIGEN_DROP_RATIO * lead)
        .collect();
    let (m, _) = truncation.resolve(&positive);
    let mut v = DMatrix::zeros(total, m);
    for col in 0..m {
        let mut c: Vec<f64> = vecs.column(col).iter().copied().collect();
        orient_max_abs(&mut c);
        v.set_column(col, &DVector::from_vec(c));
    }
    let scores = &z * &v;
    let mut eigenfunctions = Vec::with_capacity(data.p());
    let mut off = 0;
    for &g in &sizes {
        eigenfunctions.push(DMatrix::from_fn(m, g, |c, k| v[(off + k, c)] / scale[off + k]));
        off += g;
    }
    let sum: f64 = positive.iter().sum();
    Ok(MfpcaResult {
        eigenvalues: positive[..m].to_vec(),
        pve: positive[..m].iter().map(|p| p / sum).collect(),
        all_eigenvalues: positive,
        eigenvectors: v,
        blocks: Vec::new(),
        eigenfunctions,
        scores,
        means,
        domains: data.domains(),
        weights: weights.to_vec(),
        covariance: cov,
        projection_scores: true,
        degenerate: Vec::new(),
        warnings: Vec::new(),
    })
}

/// Flip `ψ̂_m` of `est` (and its scores) so that it has positive weighted
/// inner product with `ψ_m` of `reference`.
pub fn align_signs(est: &mut MfpcaResult, reference: &[DMatrix<f64>], weights: &[f64]) -> Result<()> {
    let m = est.m().min(reference.first().map_or(0, |r| r.nrows()));
    let quad: Vec<_> = est.domains.iter().map(quadrature_weights).collect::<Result<_>>()?;
    for c in 0..m {
        let mut ip = 0.0;
        for j in 0..est.p() {
            let a = est.eigenfunctions[j].row(c).transpose();
            let b = reference[j].row(c).transpose();
            ip += weights[j] * quad[j].inner(a.as_slice(), b.as_slice());
        }
        if ip < 0.0 {
            for e in est.eigenfunctions.iter_mut() {
                e.row_mut(c).neg_mut();
            }
            est.scores.column_mut(c).neg_mut();
            est.eigenvectors.column_mut(c).neg_mut();
        }
    }
    Ok(())
}
