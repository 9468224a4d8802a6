//! Smooth tensor power decomposition of image samples (FCP-TPA) and the
//! resulting eigenimage basis for 2D elements.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::basis::Lambda;
use crate::error::{Error, Result};
use crate::fundata::{quadrature_weights, ElementSample};
use crate::linalg::{difference_penalty, kron_vec, log_grid, orient_max_abs, sym_eigen_desc};
use crate::ufpca::UfpcaResult;

/// GCV search range for the smoothing parameters of each direction.
pub const TPA_LAMBDA_RANGE: (f64, f64) = (1e-5, 1e5);

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FcpTpaOptions {
    #[serde(default = "default_max_iter")]
    pub max_iter: usize,
    #[serde(default = "default_tol")]
    pub tol: f64,
    /// Smoothing parameter, shared form for both directions.
    #[serde(default = "default_lambda")]
    pub lambda: Lambda,
    #[serde(default = "default_order")]
    pub penalty_order: usize,
    #[serde(default = "default_gcv_points")]
    pub gcv_points: usize,
}

fn default_max_iter() -> usize {
    1000
}
fn default_tol() -> f64 {
    1e-8
}
fn default_lambda() -> Lambda {
    Lambda::Gcv
}
fn default_order() -> usize {
    2
}
fn default_gcv_points() -> usize {
    20
}

impl Default for FcpTpaOptions {
    fn default() -> Self {
        Self {
            max_iter: default_max_iter(),
            tol: default_tol(),
            lambda: default_lambda(),
            penalty_order: default_order(),
            gcv_points: default_gcv_points(),
        }
    }
}

/// One rank-one term `d · u ∘ v ∘ w`, factors unit-normalized.
#[derive(Clone, Debug)]
pub struct TpaComponent {
    pub d: f64,
    pub u: DVector<f64>,
    pub v: DVector<f64>,
    pub w: DVector<f64>,
    pub lambda_v: f64,
    pub lambda_w: f64,
    pub iterations: usize,
    pub converged: bool,
}

/// Penalized smoother `(I + λΩ)⁻¹` diagonalized once through `Ω = E Γ Eᵀ`.
struct Smoother {
    e: DMatrix<f64>,
    gamma: Vec<f64>,
    candidates: Vec<f64>,
}

impl Smoother {
    fn new(n: usize, order: usize, lambda: Lambda, points: usize) -> Self {
        let omega = difference_penalty(n, order);
        let (gamma, e) = sym_eigen_desc(&omega);
        let gamma = gamma.into_iter().map(|g| g.max(0.0)).collect();
        let candidates = match lambda {
            Lambda::Fixed(l) => vec![l],
            Lambda::Gcv => log_grid(TPA_LAMBDA_RANGE.0, TPA_LAMBDA_RANGE.1, points),
        };
        Self { e, gamma, candidates }
    }

    /// Choose λ by GCV for smoothing `z`, then return `S⁻¹z / sqrt(zᵀS⁻¹z)`.
    fn update(&self, z: &DVector<f64>) -> (DVector<f64>, f64) {
        let zt = self.e.transpose() * z;
        let n = z.len() as f64;
        let mut best = (f64::INFINITY, self.candidates[0]);
        if self.candidates.len() > 1 {
            for &lam in &self.candidates {
                let mut rss = 0.0;
                let mut tr = 0.0;
                for (k, &g) in self.gamma.iter().enumerate() {
                    let h = 1.0 / (1.0 + lam * g);
                    rss += (zt[k] * (1.0 - h)).powi(2);
                    tr += h;
                }
                let denom = (1.0 - tr / n).powi(2);
                let score = if denom > 1e-14 { rss / n / denom } else { f64::INFINITY };
                if score <= best.0 {
                    best = (score, lam);
                }
            }
        }
        let lam = best.1;
        let st = DVector::from_fn(zt.len(), |k, _| zt[k] / (1.0 + lam * self.gamma[k]));
        let quad = zt.dot(&st);
        let v = &self.e * st;
        if quad > 0.0 {
            (v / quad.sqrt(), lam)
        } else {
            (v, lam)
        }
    }
}

fn leading_eigvec(a: &DMatrix<f64>) -> DVector<f64> {
    let (_, vecs) = sym_eigen_desc(a);
    let mut v: Vec<f64> = vecs.column(0).iter().copied().collect();
    orient_max_abs(&mut v);
    DVector::from_vec(v)
}

/// `Y = reshape(Xᵀu)` as an `s1 x s2` matrix.
fn contract_u(x: &DMatrix<f64>, u: &DVector<f64>, s1: usize, s2: usize) -> DMatrix<f64> {
    let flat = x.transpose() * u;
    DMatrix::from_row_slice(s1, s2, flat.as_slice())
}

/// Decompose `x` (`N x (s1*s2)`, image index `a*s2 + b`) into `m` smooth
/// rank-one terms by alternating penalized power iterations with deflation.
pub fn fcp_tpa(
    x: &DMatrix<f64>,
    s1: usize,
    s2: usize,
    m: usize,
    opts: &FcpTpaOptions,
) -> Result<Vec<TpaComponent>> {
    if x.ncols() != s1 * s2 {
        return Err(Error::Shape(format!("{} columns for a {s1} x {s2} image", x.ncols())));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("FCP-TPA input".into()));
    }
    let sm_v = Smoother::new(s1, opts.penalty_order, opts.lambda, opts.gcv_points);
    let sm_w = Smoother::new(s2, opts.penalty_order, opts.lambda, opts.gcv_points);
    let mut resid = x.clone();
    let mut out = Vec::with_capacity(m);
    for comp in 0..m {
        // initial directions from the leading singular vectors of the
        // stacked mode unfoldings
        let mut a = DMatrix::zeros(s1, s1);
        let mut b = DMatrix::zeros(s2, s2);
        for row in resid.row_iter() {
            let xi = DMatrix::from_row_slice(s1, s2, row.transpose().as_slice());
            a += &xi * xi.transpose();
            b += xi.transpose() * &xi;
        }
        if a.trace() <= 1e-300 {
            log::warn!("FCP-TPA: residual vanished after {comp} components");
            break;
        }
        let mut v = leading_eigvec(&a);
        let mut w = leading_eigvec(&b);
        let mut d_old = f64::NAN;
        let (mut lv, mut lw) = (0.0, 0.0);
        let mut converged = false;
        let mut iterations = 0;
        for it in 1..=opts.max_iter {
            iterations = it;
            let mut u = &resid * kron_vec(&v, &w);
            let un = u.norm();
            if un == 0.0 {
                break;
            }
            u /= un;
            let y = contract_u(&resid, &u, s1, s2);
            let (nv, l1) = sm_v.update(&(&y * &w));
            v = nv;
            lv = l1;
            let (nw, l2) = sm_w.update(&(y.transpose() * &v));
            w = nw;
            lw = l2;
            let d = v.dot(&(&y * &w));
            if d_old.is_finite() && (d - d_old).abs() <= opts.tol * d.abs().max(1e-300) {
                converged = true;
                break;
            }
            d_old = d;
        }
        if !converged {
            log::warn!("FCP-TPA component {} did not converge in {} iterations", comp + 1, opts.max_iter);
        }
        let vn = v.norm();
        let wn = w.norm();
        let (v, w) = (v / vn, w / wn);
        let vw = kron_vec(&v, &w);
        let mut u = &resid * &vw;
        let d = u.norm();
        if d > 0.0 {
            u /= d;
        }
        // deflate with the unit-normalized factors
        resid -= &u * vw.transpose() * d;
        out.push(TpaComponent { d, u, v, w, lambda_v: lv, lambda_w: lw, iterations, converged });
    }
    Ok(out)
}

/// FPCA of a dense 2D element through FCP-TPA. Eigenimages `v ∘ w` are
/// orthonormalized (Gram–Schmidt under quadrature, in extraction order) and
/// scores are quadrature projections of the demeaned images. The reported
/// eigenvalue of component `m` is `d² ‖v∘w‖²/(N − 1)`.
pub fn tensor_fpca(
    element: &ElementSample,
    m: usize,
    opts: &FcpTpaOptions,
) -> Result<(UfpcaResult, Vec<TpaComponent>)> {
    let domain = element.domain();
    if domain.dim() != 2 || element.is_sparse() {
        return Err(Error::InvalidArgument("tensor_fpca needs a dense 2D element".into()));
    }
    let n = element.n();
    if n < 2 {
        return Err(Error::InvalidArgument("tensor_fpca needs at least 2 observations".into()));
    }
    let shape = domain.shape();
    let (s1, s2) = (shape[0], shape[1]);
    let q = quadrature_weights(domain)?;
    let mean = element.pointwise_mean(0)?;
    let mut xc = element.values().clone();
    for mut row in xc.row_iter_mut() {
        row -= mean.transpose();
    }
    let comps = fcp_tpa(&xc, s1, s2, m, opts)?;
    let g = domain.len();
    let mut warnings = Vec::new();
    if comps.len() < m {
        warnings.push(format!("only {} of {m} tensor components could be extracted", comps.len()));
    }
    let mut images: Vec<DVector<f64>> = Vec::with_capacity(comps.len());
    let mut eigenvalues = Vec::with_capacity(comps.len());
    for c in &comps {
        let vw = kron_vec(&c.v, &c.w);
        let nrm2 = q.inner(vw.as_slice(), vw.as_slice());
        eigenvalues.push(c.d * c.d * nrm2 / (n - 1) as f64);
        let mut e = vw;
        for prev in &images {
            let proj = q.inner(e.as_slice(), prev.as_slice());
            e -= prev * proj;
        }
        let en = q.inner(e.as_slice(), e.as_slice()).sqrt();
        if en <= 1e-12 {
            return Err(Error::SingularFit("eigenimages are linearly dependent".into()));
        }
        e /= en;
        let mut tmp: Vec<f64> = e.iter().copied().collect();
        orient_max_abs(&mut tmp);
        images.push(DVector::from_vec(tmp));
    }
    let k = images.len();
    let eigenfunctions = DMatrix::from_fn(k, g, |r, c| images[r][c]);
    let phi_w = DMatrix::from_fn(g, k, |r, c| q.0[r] * images[c][r]);
    let scores = &xc * phi_w;
    let total: f64 = eigenvalues.iter().sum();
    let pve = eigenvalues.iter().map(|l| if total > 0.0 { l / total } else { 0.0 }).collect();
    for w in &warnings {
        log::warn!("{w}");
    }
    let result = UfpcaResult {
        domain: domain.clone(),
        mean,
        all_eigenvalues: eigenvalues.clone(),
        eigenvalues,
        eigenfunctions,
        scores,
        sigma2: 0.0,
        pve,
        projection_scores: true,
        warnings,
    };
    Ok((result, comps))
}
