//! Basis systems (B-spline, tensor product, Fourier, Legendre), Gram matrices
//! and penalized least-squares fitting with GCV smoothing selection.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fundata::{quadrature_weights, Domain, ElementSample};
use crate::linalg::{cholesky_jitter, difference_penalty, gauss_legendre, log_grid};

/// Lower/upper bound of the GCV search grid for `fit_penalized`.
pub const GCV_LAMBDA_RANGE: (f64, f64) = (1e-8, 1e8);
/// Number of log-spaced GCV candidates.
pub const GCV_POINTS: usize = 20;

const GRAM_NODES: usize = 10;

/// Clamped B-spline basis of a given degree.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BSpline {
    degree: usize,
    knots: Vec<f64>,
}

impl BSpline {
    pub fn new(degree: usize, knots: Vec<f64>) -> Result<Self> {
        if knots.len() < degree + 2 {
            return Err(Error::InvalidArgument(format!(
                "degree {degree} needs at least {} knots",
                degree + 2
            )));
        }
        if knots.windows(2).any(|w| w[1] < w[0]) {
            return Err(Error::InvalidArgument("knots must be nondecreasing".into()));
        }
        let s = Self { degree, knots };
        let (a, b) = s.support();
        if b <= a {
            return Err(Error::InvalidArgument("knot span is empty".into()));
        }
        Ok(s)
    }

    /// `k` functions on `[lower, upper]` with equispaced interior knots and
    /// boundary knots repeated `degree + 1` times.
    pub fn equispaced(lower: f64, upper: f64, k: usize, degree: usize) -> Result<Self> {
        if k < degree + 1 {
            return Err(Error::InvalidArgument(format!(
                "{k} B-splines of degree {degree} is too few; need at least {}",
                degree + 1
            )));
        }
        let intervals = k - degree;
        let mut knots = vec![lower; degree];
        for i in 0..=intervals {
            knots.push(if i == intervals {
                upper
            } else {
                lower + (upper - lower) * i as f64 / intervals as f64
            });
        }
        knots.extend(std::iter::repeat_n(upper, degree));
        Self::new(degree, knots)
    }

    pub fn degree(&self) -> usize {
        self.degree
    }

    pub fn knots(&self) -> &[f64] {
        &self.knots
    }

    pub fn k(&self) -> usize {
        self.knots.len() - self.degree - 1
    }

    pub fn support(&self) -> (f64, f64) {
        (self.knots[self.degree], self.knots[self.k()])
    }

    fn span(&self, x: f64) -> Result<usize> {
        let (a, b) = self.support();
        let tol = 1e-12 * (b - a).max(1.0);
        if x < a - tol || x > b + tol {
            return Err(Error::OutsideSupport { value: x, lower: a, upper: b });
        }
        let x = x.clamp(a, b);
        let k = self.k();
        if x >= b {
            // last non-degenerate span
            let mut i = k - 1;
            while self.knots[i] >= self.knots[i + 1] {
                i -= 1;
            }
            return Ok(i);
        }
        let mut i = self.knots.partition_point(|&t| t <= x) - 1;
        i = i.clamp(self.degree, k - 1);
        Ok(i)
    }

    /// Nonzero basis values at `x`: `(first index, values)` with
    /// `degree + 1` entries (Cox–de Boor recursion).
    pub fn eval_nonzero(&self, x: f64) -> Result<(usize, Vec<f64>)> {
        let p = self.degree;
        let i = self.span(x)?;
        let x = x.clamp(self.support().0, self.support().1);
        let t = &self.knots;
        let mut n = vec![0.0; p + 1];
        let mut left = vec![0.0; p + 1];
        let mut right = vec![0.0; p + 1];
        n[0] = 1.0;
        for j in 1..=p {
            left[j] = x - t[i + 1 - j];
            right[j] = t[i + j] - x;
            let mut saved = 0.0;
            for r in 0..j {
                let denom = right[r + 1] + left[j - r];
                let temp = if denom != 0.0 { n[r] / denom } else { 0.0 };
                n[r] = saved + right[r + 1] * temp;
                saved = left[j - r] * temp;
            }
            n[j] = saved;
        }
        Ok((i - p, n))
    }

    fn breakpoints(&self) -> Vec<f64> {
        let (a, b) = self.support();
        let mut pts: Vec<f64> = self
            .knots
            .iter()
            .copied()
            .filter(|&t| t >= a && t <= b)
            .collect();
        pts.dedup();
        pts
    }
}

/// Orthonormal Fourier system on `[lower, upper]`: constant, then sine and
/// cosine pairs of increasing frequency.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Fourier {
    pub m: usize,
    pub lower: f64,
    pub upper: f64,
}

impl Fourier {
    /// Function `index` (0-based) at `x`.
    pub fn eval_one(&self, index: usize, x: f64) -> f64 {
        let len = self.upper - self.lower;
        if index == 0 {
            return 1.0 / len.sqrt();
        }
        let freq = index.div_ceil(2) as f64;
        let arg = 2.0 * PI * freq * (x - self.lower) / len;
        let scale = (2.0 / len).sqrt();
        if index % 2 == 1 {
            scale * arg.sin()
        } else {
            scale * arg.cos()
        }
    }
}

/// Orthonormal Legendre polynomials on `[lower, upper]`; function `n` has
/// degree `n`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Legendre {
    pub m: usize,
    pub lower: f64,
    pub upper: f64,
}

impl Legendre {
    pub fn eval_all(&self, x: f64) -> Vec<f64> {
        let len = self.upper - self.lower;
        let u = (2.0 * x - self.lower - self.upper) / len;
        let mut out = Vec::with_capacity(self.m);
        let (mut p0, mut p1) = (1.0, u);
        for n in 0..self.m {
            let p = match n {
                0 => 1.0,
                1 => u,
                _ => {
                    let p2 = ((2 * n - 1) as f64 * u * p1 - (n - 1) as f64 * p0) / n as f64;
                    p0 = p1;
                    p1 = p2;
                    p2
                }
            };
            out.push(p * ((2 * n + 1) as f64 / len).sqrt());
        }
        out
    }

    pub fn eval_one(&self, degree: usize, x: f64) -> f64 {
        let full = Legendre { m: degree + 1, ..self.clone() };
        full.eval_all(x)[degree]
    }
}

/// A basis on one axis.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum AxisBasis {
    BSpline(BSpline),
    Fourier(Fourier),
    Legendre(Legendre),
}

impl AxisBasis {
    pub fn k(&self) -> usize {
        match self {
            Self::BSpline(b) => b.k(),
            Self::Fourier(f) => f.m,
            Self::Legendre(l) => l.m,
        }
    }

    pub fn bounds(&self) -> (f64, f64) {
        match self {
            Self::BSpline(b) => b.support(),
            Self::Fourier(f) => (f.lower, f.upper),
            Self::Legendre(l) => (l.lower, l.upper),
        }
    }

    fn check(&self, x: f64) -> Result<()> {
        let (a, b) = self.bounds();
        let tol = 1e-12 * (b - a).max(1.0);
        if x < a - tol || x > b + tol {
            return Err(Error::OutsideSupport { value: x, lower: a, upper: b });
        }
        Ok(())
    }

    /// Sparse evaluation: `(index, value)` pairs of the nonzero functions.
    pub fn eval_sparse(&self, x: f64) -> Result<Vec<(usize, f64)>> {
        match self {
            Self::BSpline(b) => {
                let (first, vals) = b.eval_nonzero(x)?;
                Ok(vals.into_iter().enumerate().map(|(r, v)| (first + r, v)).collect())
            }
            Self::Fourier(f) => {
                self.check(x)?;
                Ok((0..f.m).map(|i| (i, f.eval_one(i, x))).collect())
            }
            Self::Legendre(l) => {
                self.check(x)?;
                Ok(l.eval_all(x).into_iter().enumerate().collect())
            }
        }
    }

    pub fn eval(&self, x: f64) -> Result<Vec<f64>> {
        let mut row = vec![0.0; self.k()];
        for (i, v) in self.eval_sparse(x)? {
            row[i] = v;
        }
        Ok(row)
    }

    pub fn design(&self, points: &[f64]) -> Result<DMatrix<f64>> {
        let mut x = DMatrix::zeros(points.len(), self.k());
        for (r, &t) in points.iter().enumerate() {
            for (i, v) in self.eval_sparse(t)? {
                x[(r, i)] = v;
            }
        }
        Ok(x)
    }

    fn quadrature_panels(&self) -> Vec<f64> {
        match self {
            Self::BSpline(b) => b.breakpoints(),
            _ => {
                let (a, b) = self.bounds();
                let panels = self.k().max(10);
                crate::fundata::linspace(a, b, panels + 1)
            }
        }
    }

    /// `⟨b_m, b_n⟩` by composite Gauss–Legendre quadrature with `nodes`
    /// points per panel (knot interval for B-splines).
    pub fn gram_with(&self, nodes: usize, refine: usize) -> Result<DMatrix<f64>> {
        let (gx, gw) = gauss_legendre(nodes);
        let k = self.k();
        let mut g = DMatrix::zeros(k, k);
        let breaks = self.quadrature_panels();
        for w in breaks.windows(2) {
            for r in 0..refine {
                let lo = w[0] + (w[1] - w[0]) * r as f64 / refine as f64;
                let hi = w[0] + (w[1] - w[0]) * (r + 1) as f64 / refine as f64;
                let half = 0.5 * (hi - lo);
                let mid = 0.5 * (hi + lo);
                for (x, wt) in gx.iter().zip(&gw) {
                    let row = self.eval_sparse(mid + half * x)?;
                    for &(i, vi) in &row {
                        for &(j, vj) in &row {
                            g[(i, j)] += half * wt * vi * vj;
                        }
                    }
                }
            }
        }
        Ok((&g + g.transpose()) * 0.5)
    }

    pub fn penalty(&self, order: usize) -> DMatrix<f64> {
        difference_penalty(self.k(), order)
    }
}

/// A univariate or tensor-product basis system.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "dim", rename_all = "snake_case")]
pub enum BasisSystem {
    #[serde(rename = "1")]
    Line { axis: AxisBasis },
    #[serde(rename = "2")]
    Tensor { first: AxisBasis, second: AxisBasis },
}

impl BasisSystem {
    pub fn bspline(lower: f64, upper: f64, k: usize, degree: usize) -> Result<Self> {
        Ok(Self::Line {
            axis: AxisBasis::BSpline(BSpline::equispaced(lower, upper, k, degree)?),
        })
    }

    /// Tensor B-splines over the bounding box of a 2D domain.
    pub fn tensor_bspline(domain: &Domain, k: (usize, usize), degree: usize) -> Result<Self> {
        if domain.dim() != 2 {
            return Err(Error::InvalidArgument("tensor basis needs a 2D domain".into()));
        }
        let (a1, b1) = domain.bounds(0);
        let (a2, b2) = domain.bounds(1);
        Ok(Self::Tensor {
            first: AxisBasis::BSpline(BSpline::equispaced(a1, b1, k.0, degree)?),
            second: AxisBasis::BSpline(BSpline::equispaced(a2, b2, k.1, degree)?),
        })
    }

    pub fn fourier(lower: f64, upper: f64, m: usize) -> Self {
        Self::Line { axis: AxisBasis::Fourier(Fourier { m, lower, upper }) }
    }

    pub fn legendre(lower: f64, upper: f64, m: usize) -> Self {
        Self::Line { axis: AxisBasis::Legendre(Legendre { m, lower, upper }) }
    }

    pub fn dim(&self) -> usize {
        match self {
            Self::Line { .. } => 1,
            Self::Tensor { .. } => 2,
        }
    }

    /// Number of basis functions.
    pub fn k(&self) -> usize {
        match self {
            Self::Line { axis } => axis.k(),
            Self::Tensor { first, second } => first.k() * second.k(),
        }
    }

    /// Sparse row of the design matrix at one (flattened) grid point.
    pub fn eval_sparse(&self, coords: &[f64]) -> Result<Vec<(usize, f64)>> {
        match self {
            Self::Line { axis } => axis.eval_sparse(coords[0]),
            Self::Tensor { first, second } => {
                let r1 = first.eval_sparse(coords[0])?;
                let r2 = second.eval_sparse(coords[1])?;
                let k2 = second.k();
                let mut out = Vec::with_capacity(r1.len() * r2.len());
                for &(a, va) in &r1 {
                    for &(b, vb) in &r2 {
                        out.push((a * k2 + b, va * vb));
                    }
                }
                Ok(out)
            }
        }
    }

    /// Design matrix on a grid: rows follow the row-major grid
    /// flattening, columns the Kronecker ordering `a * K2 + b`.
    pub fn eval_basis(&self, domain: &Domain) -> Result<DMatrix<f64>> {
        if domain.dim() != self.dim() {
            return Err(Error::InvalidArgument(format!(
                "{}D basis on a {}D grid",
                self.dim(),
                domain.dim()
            )));
        }
        match self {
            Self::Line { axis } => axis.design(domain.axis(0)),
            Self::Tensor { first, second } => {
                let x1 = first.design(domain.axis(0))?;
                let x2 = second.design(domain.axis(1))?;
                Ok(x1.kronecker(&x2))
            }
        }
    }

    /// Gram matrix `⟨b_m, b_n⟩` by Gauss–Legendre quadrature with ten nodes
    /// per knot interval (per panel for Fourier and Legendre).
    pub fn gram_matrix(&self) -> Result<DMatrix<f64>> {
        self.gram_refined(1)
    }

    /// Gram matrix with every quadrature panel split into `refine` pieces.
    pub fn gram_refined(&self, refine: usize) -> Result<DMatrix<f64>> {
        match self {
            Self::Line { axis } => axis.gram_with(GRAM_NODES, refine),
            Self::Tensor { first, second } => Ok(first
                .gram_with(GRAM_NODES, refine)?
                .kronecker(&second.gram_with(GRAM_NODES, refine)?)),
        }
    }

    /// One penalty matrix per axis direction, each `K x K`.
    pub fn penalties(&self, order: usize) -> Vec<DMatrix<f64>> {
        match self {
            Self::Line { axis } => vec![axis.penalty(order)],
            Self::Tensor { first, second } => {
                let i1 = DMatrix::identity(first.k(), first.k());
                let i2 = DMatrix::identity(second.k(), second.k());
                vec![
                    first.penalty(order).kronecker(&i2),
                    i1.kronecker(&second.penalty(order)),
                ]
            }
        }
    }
}

/// Smoothing parameter: fixed, or selected by GCV.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Lambda {
    Fixed(f64),
    Gcv,
}

impl Serialize for Lambda {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            Lambda::Fixed(v) => s.serialize_f64(*v),
            Lambda::Gcv => s.serialize_str("gcv"),
        }
    }
}

impl<'de> Deserialize<'de> for Lambda {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Num(f64),
            Str(String),
        }
        match Raw::deserialize(d)? {
            Raw::Num(v) if v >= 0.0 && v.is_finite() => Ok(Lambda::Fixed(v)),
            Raw::Num(v) => Err(serde::de::Error::custom(format!("lambda must be >= 0, got {v}"))),
            Raw::Str(s) if s == "gcv" => Ok(Lambda::Gcv),
            Raw::Str(s) => Err(serde::de::Error::custom(format!(
                "lambda must be a number or \"gcv\", got {s:?}"
            ))),
        }
    }
}

/// An element represented by basis coefficients.
///
/// `coefficients` are centered (column means zero); the sample mean function
/// is kept separately on the grid. `design` holds the basis evaluated on the
/// element's grid, one column per basis function.
#[derive(Clone, Debug)]
pub struct BasisExpansion {
    pub basis: Option<BasisSystem>,
    pub domain: Domain,
    pub design: DMatrix<f64>,
    pub coefficients: DMatrix<f64>,
    pub mean: DVector<f64>,
    pub gram: DMatrix<f64>,
    pub lambda: Option<f64>,
    pub effective_df: Option<f64>,
}

impl BasisExpansion {
    /// Build from raw (uncentered) coefficients.
    pub fn from_raw(
        basis: Option<BasisSystem>,
        domain: Domain,
        design: DMatrix<f64>,
        raw: DMatrix<f64>,
        gram: DMatrix<f64>,
    ) -> Result<Self> {
        let k = design.ncols();
        if raw.ncols() != k || gram.shape() != (k, k) || design.nrows() != domain.len() {
            return Err(Error::Shape("inconsistent basis expansion blocks".into()));
        }
        let n = raw.nrows().max(1);
        let colmean = DVector::from_fn(k, |c, _| raw.column(c).sum() / n as f64);
        let mut coefficients = raw;
        for mut row in coefficients.row_iter_mut() {
            row -= colmean.transpose();
        }
        let mean = &design * &colmean;
        let out = Self {
            basis,
            domain,
            design,
            coefficients,
            mean,
            gram,
            lambda: None,
            effective_df: None,
        };
        out.check_gram()?;
        Ok(out)
    }

    pub fn k(&self) -> usize {
        self.design.ncols()
    }

    pub fn n(&self) -> usize {
        self.coefficients.nrows()
    }

    /// Gram symmetric within 1e-12 and PSD up to `-1e-10 * max` eigenvalue.
    pub fn check_gram(&self) -> Result<()> {
        let g = &self.gram;
        let scale = g.amax().max(1e-300);
        if (g - g.transpose()).amax() > 1e-12 * scale.max(1.0) {
            return Err(Error::NotPositiveDefinite("gram matrix is not symmetric".into()));
        }
        let eig = g.clone().symmetric_eigen();
        let min = eig.eigenvalues.min();
        let max = eig.eigenvalues.max();
        if min < -1e-10 * max.abs().max(1e-300) {
            return Err(Error::NotPositiveDefinite(format!(
                "gram matrix has eigenvalue {min:e} (max {max:e})"
            )));
        }
        Ok(())
    }

    /// Fitted function of observation `i` on the grid (including the mean).
    pub fn fitted(&self, i: usize) -> DVector<f64> {
        &self.design * self.coefficients.row(i).transpose() + &self.mean
    }

    /// Resample observations (with repeats) and re-center the coefficients.
    pub fn resample(&self, rows: &[usize]) -> Self {
        let picked = self.coefficients.select_rows(rows);
        let k = self.k();
        let n = rows.len().max(1);
        let shift = DVector::from_fn(k, |c, _| picked.column(c).sum() / n as f64);
        let mut coefficients = picked;
        for mut row in coefficients.row_iter_mut() {
            row -= shift.transpose();
        }
        Self {
            coefficients,
            mean: &self.mean + &self.design * shift,
            ..self.clone()
        }
    }
}

/// Penalized least-squares solution for several responses sharing one
/// normal-equation matrix.
pub(crate) struct PenalizedSolve {
    pub theta: DMatrix<f64>,
    pub trace: f64,
}

/// Solve `(XᵀWX + λP) θ = XᵀWy`. With `λ = 0` a singular `XᵀWX` is an error.
pub(crate) fn solve_penalized(
    xtwx: &DMatrix<f64>,
    xtwy: &DMatrix<f64>,
    penalty: &DMatrix<f64>,
    lambda: f64,
) -> Result<PenalizedSolve> {
    let a = xtwx + penalty * lambda;
    let chol = if lambda == 0.0 {
        let scale = a.diagonal().amax().max(1e-300);
        let c = a
            .clone()
            .cholesky()
            .ok_or_else(|| Error::SingularFit("rank-deficient design with lambda = 0".into()))?;
        let dmin = c.l_dirty().diagonal().iter().fold(f64::INFINITY, |m, &d| m.min(d * d));
        if dmin < 1e-13 * scale {
            return Err(Error::SingularFit("rank-deficient design with lambda = 0".into()));
        }
        c
    } else {
        cholesky_jitter(&a, "penalized normal equations")?
    };
    let theta = chol.solve(xtwy);
    let trace = chol.solve(xtwx).trace();
    Ok(PenalizedSolve { theta, trace })
}

/// Pick the GCV-minimizing candidate; ties go to the larger λ.
pub(crate) fn gcv_select<T>(
    candidates: &[f64],
    mut eval: impl FnMut(f64) -> Result<(f64, T)>,
) -> Result<(f64, T)> {
    let mut best: Option<(f64, f64, T)> = None;
    let mut last_err = None;
    for &lambda in candidates {
        match eval(lambda) {
            Ok((score, value)) => {
                // an interpolating fit has no residual degrees of freedom;
                // it is still acceptable when it is the only candidate
                let score = if score.is_nan() { f64::INFINITY } else { score };
                let better = best.as_ref().is_none_or(|(_, s, _)| score <= *s);
                if better {
                    best = Some((lambda, score, value));
                }
            }
            Err(e) => last_err = Some(e),
        }
    }
    match best {
        Some((lambda, _, value)) => Ok((lambda, value)),
        None => Err(last_err.unwrap_or_else(|| Error::SingularFit("no candidate lambda could be fitted".into()))),
    }
}

fn gcv_score(n: f64, rss: f64, trace: f64) -> f64 {
    let dof = n - trace;
    if dof <= 1e-9 {
        return f64::INFINITY;
    }
    n * rss / (dof * dof)
}

fn combined_penalty(basis: &BasisSystem, order: usize) -> DMatrix<f64> {
    let ps = basis.penalties(order);
    let mut total = DMatrix::zeros(basis.k(), basis.k());
    for p in ps {
        total += p;
    }
    total
}

/// Fit every observation of `element` by penalized least squares with
/// quadrature-weighted residuals and an order-`penalty_order` difference
/// penalty in each axis direction. With [`Lambda::Gcv`] one λ is chosen for
/// the whole sample from 20 log-spaced values in `[1e-8, 1e8]`, minimizing
/// the summed per-observation GCV score.
pub fn fit_penalized(
    element: &ElementSample,
    basis: &BasisSystem,
    penalty_order: usize,
    lambda: Lambda,
) -> Result<BasisExpansion> {
    if element.n() < 1 {
        return Err(Error::InvalidArgument("no observations to fit".into()));
    }
    let domain = element.domain();
    let x = basis.eval_basis(domain)?;
    let q = quadrature_weights(domain)?;
    let penalty = combined_penalty(basis, penalty_order);
    let k = basis.k();
    let n = element.n();
    let values = element.values();

    let candidates = match lambda {
        Lambda::Fixed(v) => vec![v],
        Lambda::Gcv => log_grid(GCV_LAMBDA_RANGE.0, GCV_LAMBDA_RANGE.1, GCV_POINTS),
    };

    let (chosen, (theta, trace)) = if !element.is_sparse() {
        let xw = DMatrix::from_fn(x.nrows(), k, |r, c| x[(r, c)] * q.0[r]);
        let xtwx = x.transpose() * &xw;
        let xtwy = xw.transpose() * values.transpose();
        let g = x.nrows() as f64;
        gcv_select(&candidates, |lam| {
            let sol = solve_penalized(&xtwx, &xtwy, &penalty, lam)?;
            let fitted = &x * &sol.theta;
            let mut score = 0.0;
            for i in 0..n {
                let rss: f64 = (0..x.nrows())
                    .map(|r| q.0[r] * (values[(i, r)] - fitted[(r, i)]).powi(2))
                    .sum();
                score += gcv_score(g, rss, sol.trace);
            }
            Ok((score, (sol.theta, sol.trace)))
        })?
    } else {
        // per-observation normal equations over the observed points
        let mut systems = Vec::with_capacity(n);
        for i in 0..n {
            let obs = element.observed(i);
            let xo = x.select_rows(&obs);
            let xw = DMatrix::from_fn(obs.len(), k, |r, c| xo[(r, c)] * q.0[obs[r]]);
            let y = DVector::from_iterator(obs.len(), obs.iter().map(|&r| values[(i, r)]));
            let xtwx = xo.transpose() * &xw;
            let xtwy = DMatrix::from_column_slice(k, 1, (xw.transpose() * &y).as_slice());
            systems.push((obs, xo, y, xtwx, xtwy));
        }
        gcv_select(&candidates, |lam| {
            let mut theta = DMatrix::zeros(k, n);
            let mut score = 0.0;
            let mut trace_sum = 0.0;
            for (i, (obs, xo, y, xtwx, xtwy)) in systems.iter().enumerate() {
                let sol = solve_penalized(xtwx, xtwy, &penalty, lam)?;
                let fit = xo * &sol.theta;
                let rss: f64 = (0..obs.len())
                    .map(|r| q.0[obs[r]] * (y[r] - fit[(r, 0)]).powi(2))
                    .sum();
                score += gcv_score(obs.len() as f64, rss, sol.trace);
                trace_sum += sol.trace;
                theta.set_column(i, &sol.theta.column(0));
            }
            Ok((score, (theta, trace_sum / n as f64)))
        })?
    };

    let gram = basis.gram_matrix()?;
    let mut out = BasisExpansion::from_raw(
        Some(basis.clone()),
        domain.clone(),
        x,
        theta.transpose(),
        gram,
    )?;
    out.lambda = Some(chosen);
    out.effective_df = Some(trace);
    Ok(out)
}

/// Accumulated weighted normal equations for a single response surface.
pub(crate) struct NormalEquations {
    pub xtwx: DMatrix<f64>,
    pub xtwy: DVector<f64>,
    pub ytwy: f64,
    pub n_obs: f64,
}

impl NormalEquations {
    pub fn new(k: usize) -> Self {
        Self {
            xtwx: DMatrix::zeros(k, k),
            xtwy: DVector::zeros(k),
            ytwy: 0.0,
            n_obs: 0.0,
        }
    }

    /// Add one data point with design row `row`, weight `w`, response `y`,
    /// standing for `count` raw observations.
    pub fn add(&mut self, row: &[(usize, f64)], w: f64, y: f64, count: f64) {
        for &(i, vi) in row {
            self.xtwy[i] += w * vi * y;
            for &(j, vj) in row {
                self.xtwx[(i, j)] += w * vi * vj;
            }
        }
        self.ytwy += w * y * y;
        self.n_obs += count;
    }

    /// Add `count` raw observations sharing one design row, given the sum and
    /// sum of squares of their responses.
    pub fn add_aggregated(&mut self, row: &[(usize, f64)], count: f64, sum_y: f64, sum_y2: f64) {
        for &(i, vi) in row {
            self.xtwy[i] += vi * sum_y;
            for &(j, vj) in row {
                self.xtwx[(i, j)] += count * vi * vj;
            }
        }
        self.ytwy += sum_y2;
        self.n_obs += count;
    }

    /// Weighted residual sum of squares of `theta`.
    pub fn rss(&self, theta: &DVector<f64>) -> f64 {
        let fit = theta.dot(&(&self.xtwx * theta));
        (self.ytwy - 2.0 * theta.dot(&self.xtwy) + fit).max(0.0)
    }

    /// Penalized fit with λ chosen by GCV (or fixed).
    pub fn fit(&self, penalty: &DMatrix<f64>, candidates: &[f64]) -> Result<(f64, DVector<f64>)> {
        let rhs = DMatrix::from_column_slice(self.xtwy.len(), 1, self.xtwy.as_slice());
        gcv_select(candidates, |lam| {
            let sol = solve_penalized(&self.xtwx, &rhs, penalty, lam)?;
            let theta = DVector::from_column_slice(sol.theta.as_slice());
            let score = gcv_score(self.n_obs, self.rss(&theta), sol.trace);
            Ok((score, theta))
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;
    use rand_distr::{Distribution, Normal};

    fn line(n: usize) -> Domain {
        Domain::interval(0.0, 1.0, n).unwrap()
    }

    #[test]
    fn degree_zero_is_indicator() {
        let b = BSpline::new(0, vec![0.0, 1.0]).unwrap();
        assert_eq!(b.k(), 1);
        for x in [0.0, 0.3, 1.0] {
            assert_eq!(b.eval_nonzero(x).unwrap(), (0, vec![1.0]));
        }
        assert!(matches!(b.eval_nonzero(1.5), Err(Error::OutsideSupport { .. })));
    }

    #[test]
    fn cubic_partition_of_unity() {
        let basis = BasisSystem::bspline(0.0, 1.0, 12, 3).unwrap();
        let x = basis.eval_basis(&line(57)).unwrap();
        for r in 0..x.nrows() {
            assert!((x.row(r).sum() - 1.0).abs() < 1e-12);
        }
        assert!(x.iter().all(|&v| v >= -1e-15));
    }

    #[test]
    fn legendre_value_at_zero() {
        let l = Legendre { m: 3, lower: -1.0, upper: 1.0 };
        let expected = -0.5 * (5.0f64 / 2.0).sqrt();
        assert!((l.eval_one(2, 0.0) - expected).abs() < 1e-14);
    }

    #[test]
    fn fourier_gram_is_identity() {
        let g = BasisSystem::fourier(0.0, 2.0, 9).gram_matrix().unwrap();
        assert!((g - DMatrix::identity(9, 9)).amax() < 1e-8);
        let g = BasisSystem::legendre(-1.0, 1.0, 25).gram_matrix().unwrap();
        assert!((g - DMatrix::identity(25, 25)).amax() < 1e-6);
    }

    #[test]
    fn unit_function_gram() {
        let b = BasisSystem::fourier(0.0, 3.0, 1);
        let g = b.gram_matrix().unwrap();
        assert!((g[(0, 0)] - 1.0).abs() < 1e-14);
    }

    #[test]
    fn bspline_gram_matches_refined_quadrature() {
        let b = BasisSystem::bspline(0.0, 2.0, 15, 3).unwrap();
        let coarse = b.gram_matrix().unwrap();
        let fine = b.gram_refined(10).unwrap();
        assert!((coarse - fine).amax() <= 1e-8);
        let t = BasisSystem::tensor_bspline(
            &Domain::rectangle((0.0, 1.0, 5), (0.0, 0.5, 5)).unwrap(),
            (6, 5),
            3,
        )
        .unwrap();
        assert!((t.gram_matrix().unwrap() - t.gram_refined(10).unwrap()).amax() <= 1e-8);
    }

    #[test]
    fn tensor_design_matches_kronecker_ordering() {
        let d = Domain::rectangle((0.0, 1.0, 4), (0.0, 0.5, 3)).unwrap();
        let b = BasisSystem::tensor_bspline(&d, (5, 4), 3).unwrap();
        let x = b.eval_basis(&d).unwrap();
        for idx in 0..d.len() {
            let p = d.point(idx);
            let row = b.eval_sparse(&p).unwrap();
            for (c, v) in row {
                assert!((x[(idx, c)] - v).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn interpolating_fit_reproduces_data() {
        let d = line(12);
        let basis = BasisSystem::bspline(0.0, 1.0, 12, 3).unwrap();
        let vals = DMatrix::from_fn(2, 12, |i, k| ((k as f64) * 0.7 + i as f64).sin());
        let e = ElementSample::dense(d.clone(), vals.clone()).unwrap();
        let fit = fit_penalized(&e, &basis, 2, Lambda::Fixed(0.0)).unwrap();
        for i in 0..2 {
            let f = fit.fitted(i);
            for k in 0..12 {
                assert!((f[k] - vals[(i, k)]).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn constants_survive_any_lambda() {
        let d = line(30);
        let basis = BasisSystem::bspline(0.0, 1.0, 10, 3).unwrap();
        let vals = DMatrix::from_fn(3, 30, |i, _| 2.5 - i as f64);
        let e = ElementSample::dense(d, vals.clone()).unwrap();
        for lam in [Lambda::Fixed(0.0), Lambda::Fixed(1e3), Lambda::Gcv] {
            let fit = fit_penalized(&e, &basis, 2, lam).unwrap();
            for i in 0..3 {
                assert!(fit.fitted(i).iter().all(|v| (v - vals[(i, 0)]).abs() < 1e-8));
            }
        }
    }

    #[test]
    fn gcv_smooths_noisy_sine() {
        let d = line(100);
        let mut rng = ChaCha20Rng::seed_from_u64(7);
        let noise = Normal::new(0.0, 0.5).unwrap();
        let truth: Vec<f64> = d.axis(0).iter().map(|t| (2.0 * PI * t).sin()).collect();
        let vals = DMatrix::from_fn(1, 100, |_, k| truth[k] + noise.sample(&mut rng));
        let e = ElementSample::dense(d, vals).unwrap();
        let basis = BasisSystem::bspline(0.0, 1.0, 20, 3).unwrap();
        let fit = fit_penalized(&e, &basis, 2, Lambda::Gcv).unwrap();
        let f = fit.fitted(0);
        let rmse = (f.iter().zip(&truth).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / 100.0).sqrt();
        assert!(rmse < 0.5, "rmse {rmse}");
        assert!(fit.lambda.unwrap() > 1e-8);
    }

    #[test]
    fn rank_deficient_unpenalized_fit_is_rejected() {
        let d = line(5);
        let basis = BasisSystem::bspline(0.0, 1.0, 8, 3).unwrap();
        let e = ElementSample::dense(d, DMatrix::from_element(1, 5, 1.0)).unwrap();
        assert!(matches!(
            fit_penalized(&e, &basis, 2, Lambda::Fixed(0.0)),
            Err(Error::SingularFit(_))
        ));
    }

    #[test]
    fn unpenalized_fit_equals_weighted_least_squares() {
        // oracle: normal equations assembled entry by entry, solved by LU
        let d = Domain::new(vec![vec![0.0, 0.05, 0.2, 0.3, 0.45, 0.5, 0.7, 0.8, 0.9, 1.0]]).unwrap();
        let basis = BasisSystem::bspline(0.0, 1.0, 6, 3).unwrap();
        let y: Vec<f64> = d.axis(0).iter().map(|t| (3.0 * t).cos() + t * t).collect();
        let e = ElementSample::dense(d.clone(), DMatrix::from_row_slice(1, 10, &y)).unwrap();
        let fit = fit_penalized(&e, &basis, 2, Lambda::Fixed(0.0)).unwrap();
        let q = quadrature_weights(&d).unwrap();
        let mut a = DMatrix::zeros(6, 6);
        let mut b = DVector::zeros(6);
        for (r, &t) in d.axis(0).iter().enumerate() {
            let row = basis.eval_sparse(&[t]).unwrap();
            let mut full = [0.0; 6];
            for (i, v) in row {
                full[i] = v;
            }
            for i in 0..6 {
                b[i] += q.0[r] * full[i] * y[r];
                for j in 0..6 {
                    a[(i, j)] += q.0[r] * full[i] * full[j];
                }
            }
        }
        let theta = a.lu().solve(&b).unwrap();
        let raw = fit.coefficients.row(0).transpose()
            + fit.design.clone().pseudo_inverse(1e-14).unwrap() * &fit.mean;
        assert!((raw - theta).amax() <= 1e-8);
    }

    #[test]
    fn hat_trace_bounded_and_monotone() {
        let d = line(40);
        let basis = BasisSystem::bspline(0.0, 1.0, 15, 3).unwrap();
        let x = basis.eval_basis(&d).unwrap();
        let q = quadrature_weights(&d).unwrap();
        let xw = DMatrix::from_fn(40, 15, |r, c| x[(r, c)] * q.0[r]);
        let xtwx = x.transpose() * &xw;
        let p = combined_penalty(&basis, 2);
        let rhs = DMatrix::zeros(15, 1);
        let mut prev = f64::INFINITY;
        for lam in [0.0, 1e-6, 1e-3, 1.0, 1e3, 1e6] {
            let t = solve_penalized(&xtwx, &rhs, &p, lam).unwrap().trace;
            assert!(t > 0.0 && t <= 15.0 + 1e-9);
            assert!(t <= prev + 1e-9);
            prev = t;
        }
    }

    #[test]
    fn sparse_fit_uses_observed_points() {
        let d = line(20);
        let basis = BasisSystem::bspline(0.0, 1.0, 6, 3).unwrap();
        let vals = DMatrix::from_fn(2, 20, |_, k| 1.0 + 0.5 * k as f64 / 19.0);
        let mask = DMatrix::from_fn(2, 20, |i, k| (k + i) % 2 == 0);
        let e = ElementSample::new(d, vals, Some(mask)).unwrap();
        let fit = fit_penalized(&e, &basis, 2, Lambda::Gcv).unwrap();
        for i in 0..2 {
            let f = fit.fitted(i);
            for k in 0..20 {
                assert!((f[k] - (1.0 + 0.5 * k as f64 / 19.0)).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn lambda_serde() {
        let l: Lambda = serde_json::from_str("\"gcv\"").unwrap();
        assert_eq!(l, Lambda::Gcv);
        let l: Lambda = serde_json::from_str("0.5").unwrap();
        assert_eq!(l, Lambda::Fixed(0.5));
        assert!(serde_json::from_str::<Lambda>("-1").is_err());
        assert!(serde_json::from_str::<Lambda>("\"auto\"").is_err());
    }
}
