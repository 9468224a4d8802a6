//! Seeded generators for the three simulation settings: split Fourier
//! eigenfunctions on 1D domains, tensor Fourier images paired with Legendre
//! curves, Gaussian scores and noise, and per-curve sparsification.
//!
//! All randomness comes from ChaCha20 with independent streams for the
//! construction, scores, noise and sparsity, so changing e.g. the noise level
//! leaves the scores of a seed untouched.

use nalgebra::DMatrix;
use rand::seq::index::sample as sample_indices;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, Normal, StandardNormal, Uniform};
use serde::{Deserialize, Serialize};

use crate::basis::{Fourier, Legendre};
use crate::error::{Error, Result};
use crate::fundata::{Domain, ElementSample, MultiFunData};

const STREAM_CONSTRUCTION: u64 = 0;
const STREAM_SCORES: u64 = 1;
const STREAM_NOISE: u64 = 2;
const STREAM_SPARSITY: u64 = 3;

/// Generator for `(seed, stream)`.
pub fn rng_stream(seed: u64, stream: u64) -> ChaCha20Rng {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Decay {
    /// `exp(-(m+1)/2)`.
    Exp,
    /// `(M+1-m)/M`.
    Lin,
    /// `exp(-(m-1)/2)`, i.e. `Exp` rescaled to `ν₁ = 1`.
    TableExp,
}

impl Decay {
    pub fn values(&self, m: usize) -> Vec<f64> {
        (1..=m)
            .map(|k| {
                let k = k as f64;
                match self {
                    Decay::Exp => (-(k + 1.0) / 2.0).exp(),
                    Decay::Lin => (m as f64 + 1.0 - k) / m as f64,
                    Decay::TableExp => (-(k - 1.0) / 2.0).exp(),
                }
            })
            .collect()
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Sparsity {
    #[default]
    None,
    /// Keep 30–50% of the points of each curve.
    Medium,
    /// Keep 5–10%.
    High,
}

impl Sparsity {
    /// Inclusive range of kept points on a grid of `s` points.
    pub fn keep_range(&self, s: usize) -> Option<(usize, usize)> {
        let (lo, hi) = match self {
            Sparsity::None => return Some((s, s)),
            Sparsity::Medium => (0.30, 0.50),
            Sparsity::High => (0.05, 0.10),
        };
        let a = ((lo * s as f64).ceil() as usize).max(1);
        let b = (hi * s as f64).floor() as usize;
        (a <= b).then_some((a, b))
    }
}

/// Equidistant grid `[lower, upper]` with `points` points.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Grid {
    pub lower: f64,
    pub upper: f64,
    pub points: usize,
}

impl Grid {
    pub fn new(lower: f64, upper: f64, points: usize) -> Self {
        Self { lower, upper, points }
    }

    fn tuple(&self) -> (f64, f64, usize) {
        (self.lower, self.upper, self.points)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Construction {
    /// The first `m` Fourier functions on `[0, Σ L_j]` cut into consecutive
    /// pieces of the element lengths, shifted onto each element's interval
    /// and multiplied by a sign (random unless given).
    SplitFourier {
        elements: Vec<Grid>,
        m: usize,
        #[serde(default)]
        signs: Option<Vec<f64>>,
    },
    /// `√α` times tensor Fourier products on a rectangle, paired with
    /// `√(1−α)` times orthonormal Legendre polynomials on an interval.
    /// `α = u₁/(u₁+u₂)`, `u ~ U(0.2, 0.8)`, unless given.
    TensorMixed {
        image: [Grid; 2],
        curve: Grid,
        m: usize,
        #[serde(default)]
        alpha: Option<f64>,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulationSpec {
    pub construction: Construction,
    pub decay: Decay,
    pub n: usize,
    #[serde(default)]
    pub sigma2: f64,
    #[serde(default)]
    pub sparsity: Sparsity,
    #[serde(default)]
    pub seed: u64,
}

impl SimulationSpec {
    /// Two elements on `[0, 1]` from 8 split Fourier functions.
    pub fn setting1(n: usize, points: usize, decay: Decay, sigma2: f64, seed: u64) -> Self {
        Self {
            construction: Construction::SplitFourier {
                elements: vec![Grid::new(0.0, 1.0, points); 2],
                m: 8,
                signs: None,
            },
            decay,
            n,
            sigma2,
            sparsity: Sparsity::None,
            seed,
        }
    }

    /// Three elements on `[-1, 0.5]`, `[0, 1]`, `[1.5, 2]`.
    pub fn setting2(n: usize, decay: Decay, sigma2: f64, sparsity: Sparsity, seed: u64) -> Self {
        Self {
            construction: Construction::SplitFourier {
                elements: vec![Grid::new(-1.0, 0.5, 50), Grid::new(0.0, 1.0, 100), Grid::new(1.5, 2.0, 50)],
                m: 8,
                signs: None,
            },
            decay,
            n,
            sigma2,
            sparsity,
            seed,
        }
    }

    /// Image on `[0,1]x[0,0.5]` plus curve on `[-1,1]`, 25 components.
    pub fn setting3(n: usize, image: (usize, usize), curve: usize, sigma2: f64, seed: u64) -> Self {
        Self {
            construction: Construction::TensorMixed {
                image: [Grid::new(0.0, 1.0, image.0), Grid::new(0.0, 0.5, image.1)],
                curve: Grid::new(-1.0, 1.0, curve),
                m: 25,
                alpha: None,
            },
            decay: Decay::TableExp,
            n,
            sigma2,
            sparsity: Sparsity::None,
            seed,
        }
    }

    pub fn m(&self) -> usize {
        match &self.construction {
            Construction::SplitFourier { m, .. } | Construction::TensorMixed { m, .. } => *m,
        }
    }
}

/// Grid-evaluated true eigenfunctions, `M x G_j` per element.
#[derive(Clone, Debug)]
pub struct TrueBasis {
    pub domains: Vec<Domain>,
    pub eigenfunctions: Vec<DMatrix<f64>>,
    pub signs: Option<Vec<f64>>,
    pub alpha: Option<f64>,
}

impl TrueBasis {
    pub fn m(&self) -> usize {
        self.eigenfunctions[0].nrows()
    }
}

/// Split Fourier construction for explicit signs.
pub fn split_fourier_basis(elements: &[Grid], m: usize, signs: &[f64]) -> Result<TrueBasis> {
    if elements.is_empty() || signs.len() != elements.len() {
        return Err(Error::InvalidArgument("one sign per element is required".into()));
    }
    if signs.iter().any(|s| s.abs() != 1.0) {
        return Err(Error::InvalidArgument("signs must be +1 or -1".into()));
    }
    let total: f64 = elements.iter().map(|g| g.upper - g.lower).sum();
    let fourier = Fourier { m, lower: 0.0, upper: total };
    let mut offset = 0.0;
    let mut domains = Vec::with_capacity(elements.len());
    let mut efs = Vec::with_capacity(elements.len());
    for (g, &s) in elements.iter().zip(signs) {
        let d = Domain::interval(g.lower, g.upper, g.points)?;
        let shift = offset - g.lower;
        let e = DMatrix::from_fn(m, d.len(), |k, idx| s * fourier.eval_one(k, d.axis(0)[idx] + shift));
        offset += g.upper - g.lower;
        domains.push(d);
        efs.push(e);
    }
    Ok(TrueBasis {
        domains,
        eigenfunctions: efs,
        signs: Some(signs.to_vec()),
        alpha: None,
    })
}

/// Tensor-Fourier image / Legendre curve construction for a given `α`.
pub fn tensor_mixed_basis(image: &[Grid; 2], curve: &Grid, m: usize, alpha: f64) -> Result<TrueBasis> {
    let root = (m as f64).sqrt().round() as usize;
    if root * root != m {
        return Err(Error::InvalidArgument(format!("M = {m} is not a perfect square")));
    }
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::InvalidArgument(format!("alpha = {alpha} outside (0, 1)")));
    }
    let img = Domain::rectangle(image[0].tuple(), image[1].tuple())?;
    let crv = Domain::interval(curve.lower, curve.upper, curve.points)?;
    let f1 = Fourier { m: root, lower: image[0].lower, upper: image[0].upper };
    let f2 = Fourier { m: root, lower: image[1].lower, upper: image[1].upper };
    let (s1, s2) = (img.shape()[0], img.shape()[1]);
    let a1: Vec<Vec<f64>> = (0..root).map(|k| img.axis(0).iter().map(|&x| f1.eval_one(k, x)).collect()).collect();
    let a2: Vec<Vec<f64>> = (0..root).map(|k| img.axis(1).iter().map(|&x| f2.eval_one(k, x)).collect()).collect();
    let sa = alpha.sqrt();
    let e1 = DMatrix::from_fn(m, s1 * s2, |k, idx| {
        let (k1, k2) = (k / root, k % root);
        sa * a1[k1][idx / s2] * a2[k2][idx % s2]
    });
    let leg = Legendre { m, lower: curve.lower, upper: curve.upper };
    let sb = (1.0 - alpha).sqrt();
    let mut e2 = DMatrix::zeros(m, crv.len());
    for (idx, &t) in crv.axis(0).iter().enumerate() {
        for (k, v) in leg.eval_all(t).into_iter().enumerate() {
            e2[(k, idx)] = sb * v;
        }
    }
    Ok(TrueBasis {
        domains: vec![img, crv],
        eigenfunctions: vec![e1, e2],
        signs: None,
        alpha: Some(alpha),
    })
}

/// Build the true basis of `spec`, drawing signs or `α` when not given.
pub fn true_basis(spec: &SimulationSpec) -> Result<TrueBasis> {
    let mut rng = rng_stream(spec.seed, STREAM_CONSTRUCTION);
    match &spec.construction {
        Construction::SplitFourier { elements, m, signs } => {
            let signs = match signs {
                Some(s) => s.clone(),
                None => (0..elements.len())
                    .map(|_| if rng.random_bool(0.5) { 1.0 } else { -1.0 })
                    .collect(),
            };
            split_fourier_basis(elements, *m, &signs)
        }
        Construction::TensorMixed { image, curve, m, alpha } => {
            let alpha = match alpha {
                Some(a) => *a,
                None => {
                    let u = Uniform::new(0.2, 0.8).expect("valid bounds");
                    let (u1, u2) = (u.sample(&mut rng), u.sample(&mut rng));
                    u1 / (u1 + u2)
                }
            };
            tensor_mixed_basis(image, curve, *m, alpha)
        }
    }
}

/// Draw `x_i = Σ ρ_im ψ_m` with `ρ_im ~ N(0, ν_m)`. Returns the noise-free
/// sample and the scores.
pub fn sample_observations(basis: &TrueBasis, eigenvalues: &[f64], n: usize, rng: &mut ChaCha20Rng) -> Result<(MultiFunData, DMatrix<f64>)> {
    let m = basis.m();
    if eigenvalues.len() != m {
        return Err(Error::Shape(format!("{} eigenvalues for {m} eigenfunctions", eigenvalues.len())));
    }
    let sd: Vec<f64> = eigenvalues.iter().map(|v| v.max(0.0).sqrt()).collect();
    let scores = DMatrix::from_fn(n, m, |_, k| sd[k] * rng.sample::<f64, _>(StandardNormal));
    let elements = basis
        .domains
        .iter()
        .zip(&basis.eigenfunctions)
        .map(|(d, e)| ElementSample::dense(d.clone(), &scores * e))
        .collect::<Result<Vec<_>>>()?;
    Ok((MultiFunData::unlabelled(elements)?, scores))
}

/// Add i.i.d. `N(0, σ²)` noise to every grid value.
pub fn add_noise(data: &MultiFunData, sigma2: f64, rng: &mut ChaCha20Rng) -> Result<MultiFunData> {
    if sigma2 == 0.0 {
        return Ok(data.clone());
    }
    let normal = Normal::new(0.0, sigma2.sqrt()).map_err(|e| Error::InvalidArgument(e.to_string()))?;
    let elements = data
        .elements()
        .iter()
        .map(|e| {
            let vals = e.values().map(|v| v + normal.sample(rng));
            ElementSample::new(e.domain().clone(), vals, e.mask().cloned())
        })
        .collect::<Result<Vec<_>>>()?;
    MultiFunData::new(elements, data.labels().to_vec())
}

/// Per observation and element keep a uniformly drawn number of points from
/// the level's keep-range, at uniformly chosen positions.
pub fn sparsify(data: &MultiFunData, level: Sparsity, rng: &mut ChaCha20Rng) -> Result<MultiFunData> {
    if level == Sparsity::None {
        return Ok(data.clone());
    }
    let mut elements = Vec::with_capacity(data.p());
    for e in data.elements() {
        if e.is_sparse() {
            return Err(Error::InvalidArgument("sparsify expects dense input".into()));
        }
        let g = e.grid_len();
        let (lo, hi) = level
            .keep_range(g)
            .ok_or_else(|| Error::InvalidArgument(format!("grid of {g} points too small for {level:?} sparsity")))?;
        let mut mask = DMatrix::from_element(e.n(), g, false);
        let mut vals = e.values().clone();
        for i in 0..e.n() {
            let count = rng.random_range(lo..=hi);
            for k in sample_indices(rng, g, count) {
                mask[(i, k)] = true;
            }
            for k in 0..g {
                if !mask[(i, k)] {
                    vals[(i, k)] = f64::NAN;
                }
            }
        }
        elements.push(ElementSample::new(e.domain().clone(), vals, Some(mask))?);
    }
    MultiFunData::new(elements, data.labels().to_vec())
}

/// A simulated dataset with its ground truth.
#[derive(Clone, Debug)]
pub struct SimulatedData {
    /// Observed (noisy, possibly sparse) data.
    pub data: MultiFunData,
    /// Noise-free dense curves.
    pub truth: MultiFunData,
    pub eigenvalues: Vec<f64>,
    pub basis: TrueBasis,
    pub scores: DMatrix<f64>,
}

pub fn simulate(spec: &SimulationSpec) -> Result<SimulatedData> {
    if spec.sigma2 < 0.0 || !spec.sigma2.is_finite() {
        return Err(Error::InvalidArgument("sigma2 must be finite and nonnegative".into()));
    }
    let basis = true_basis(spec)?;
    let eigenvalues = spec.decay.values(basis.m());
    let (truth, scores) = sample_observations(&basis, &eigenvalues, spec.n, &mut rng_stream(spec.seed, STREAM_SCORES))?;
    let noisy = add_noise(&truth, spec.sigma2, &mut rng_stream(spec.seed, STREAM_NOISE))?;
    let data = sparsify(&noisy, spec.sparsity, &mut rng_stream(spec.seed, STREAM_SPARSITY))?;
    Ok(SimulatedData { data, truth, eigenvalues, basis, scores })
}

/// Weighted Gram matrix `⟪ψ_m, ψ_n⟫` of grid-valued multivariate functions
/// by trapezoidal quadrature.
pub fn quadrature_gram(domains: &[Domain], eigenfunctions: &[DMatrix<f64>]) -> Result<DMatrix<f64>> {
    let m = eigenfunctions[0].nrows();
    let mut g = DMatrix::zeros(m, m);
    for (d, e) in domains.iter().zip(eigenfunctions) {
        let q = crate::fundata::quadrature_weights(d)?;
        let ew = DMatrix::from_fn(e.ncols(), m, |k, c| q.0[k] * e[(c, k)]);
        g += e * ew;
    }
    Ok(g)
}

/// Scores whose sample covariance is exactly `diag(ν)` (for finite-KL test
/// data): Gaussian draws orthonormalized after centering.
pub fn exact_scores(eigenvalues: &[f64], n: usize, rng: &mut ChaCha20Rng) -> DMatrix<f64> {
    let m = eigenvalues.len();
    let mut z = DMatrix::from_fn(n, m, |_, _| rng.sample::<f64, _>(StandardNormal));
    for c in 0..m {
        let mean = z.column(c).sum() / n as f64;
        z.column_mut(c).add_scalar_mut(-mean);
    }
    let q = z.clone().qr().q();
    let scale = ((n - 1) as f64).sqrt();
    DMatrix::from_fn(n, m, |i, c| q[(i, c)] * scale * eigenvalues[c].sqrt())
}

/// Same domains, masks and labels as `data`, new values.
pub fn with_values(data: &MultiFunData, values: Vec<DMatrix<f64>>) -> Result<MultiFunData> {
    let elements = data
        .elements()
        .iter()
        .zip(values)
        .map(|(e, v)| ElementSample::new(e.domain().clone(), v, e.mask().cloned()))
        .collect::<Result<Vec<_>>>()?;
    MultiFunData::new(elements, data.labels().to_vec())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::gauss_legendre;
    use nalgebra::DVector;

    #[test]
    fn table_decay_matches_reference_values() {
        let v = Decay::TableExp.values(8);
        let expected = [1.000, 0.607, 0.368, 0.223, 0.135, 0.082, 0.050, 0.030];
        for (a, b) in v.iter().zip(expected) {
            assert!((a - b).abs() < 5e-4, "{a} vs {b}");
        }
        let e = Decay::Exp.values(2);
        assert!((e[0] - (-1.0f64).exp()).abs() < 1e-15);
        assert_eq!(Decay::Lin.values(4), vec![1.0, 0.75, 0.5, 0.25]);
    }

    #[test]
    fn setting1_elements_share_unit_interval() {
        let b = true_basis(&SimulationSpec::setting1(1, 100, Decay::TableExp, 0.0, 3)).unwrap();
        for d in &b.domains {
            assert_eq!(d.bounds(0), (0.0, 1.0));
        }
        let g = quadrature_gram(&b.domains, &b.eigenfunctions).unwrap();
        assert!((g - DMatrix::identity(8, 8)).amax() <= 2e-4);
    }

    #[test]
    fn split_refinement_improves_orthonormality() {
        let elements = vec![Grid::new(0.0, 1.0, 1000); 2];
        let b = split_fourier_basis(&elements, 8, &[1.0, -1.0]).unwrap();
        let g = quadrature_gram(&b.domains, &b.eigenfunctions).unwrap();
        assert!((g - DMatrix::identity(8, 8)).amax() <= 1e-6);
    }

    #[test]
    fn unsplit_positive_is_plain_fourier() {
        let b = split_fourier_basis(&[Grid::new(0.0, 2.0, 21)], 5, &[1.0]).unwrap();
        let f = Fourier { m: 5, lower: 0.0, upper: 2.0 };
        for k in 0..5 {
            for (idx, &t) in b.domains[0].axis(0).iter().enumerate() {
                assert!((b.eigenfunctions[0][(k, idx)] - f.eval_one(k, t)).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn setting2_pieces_cover_three_length_units() {
        let b = true_basis(&SimulationSpec::setting2(1, Decay::TableExp, 0.0, Sparsity::None, 1)).unwrap();
        let g = quadrature_gram(&b.domains, &b.eigenfunctions).unwrap();
        assert!((g - DMatrix::identity(8, 8)).amax() <= 2e-3);
    }

    /// Exact orthonormality of the tensor/Legendre construction, checked with
    /// Gauss–Legendre quadrature instead of the grid.
    #[test]
    fn tensor_mixed_exact_orthonormality() {
        let alpha = 0.37;
        let (x, w) = gauss_legendre(40);
        let leg = Legendre { m: 25, lower: -1.0, upper: 1.0 };
        let vals: Vec<Vec<f64>> = x.iter().map(|&t| leg.eval_all(t)).collect();
        let f1 = Fourier { m: 5, lower: 0.0, upper: 1.0 };
        let f2 = Fourier { m: 5, lower: 0.0, upper: 0.5 };
        let gram_f = |f: &Fourier, a: f64, b: f64| {
            DMatrix::<f64>::from_fn(5, 5, |i, j| {
                x.iter()
                    .zip(&w)
                    .map(|(&u, &wt)| {
                        let t = a + (b - a) * (u + 1.0) / 2.0;
                        wt * (b - a) / 2.0 * f.eval_one(i, t) * f.eval_one(j, t)
                    })
                    .sum()
            })
        };
        let g1 = gram_f(&f1, 0.0, 1.0);
        let g2 = gram_f(&f2, 0.0, 0.5);
        for m in 0..25 {
            for n in 0..25 {
                let img = alpha * g1[(m / 5, n / 5)] * g2[(m % 5, n % 5)];
                let crv: f64 = (1.0 - alpha) * vals.iter().zip(&w).map(|(v, wt)| wt * v[m] * v[n]).sum::<f64>();
                let expected = if m == n { 1.0 } else { 0.0 };
                assert!((img + crv - expected).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn tensor_mixed_grid_orthonormality_low_order() {
        let b = tensor_mixed_basis(&[Grid::new(0.0, 1.0, 100), Grid::new(0.0, 0.5, 50)], &Grid::new(-1.0, 1.0, 200), 25, 0.5)
            .unwrap();
        let g = quadrature_gram(&b.domains, &b.eigenfunctions).unwrap();
        // the trapezoid error of the Legendre part grows like degree⁴ (about
        // 0.25 at degree 24 on 200 points), so only degrees ≤ 2 meet the
        // tight tolerance on the grid; exactness is checked above
        for m in 0..3 {
            for n in 0..3 {
                let expected = if m == n { 1.0 } else { 0.0 };
                assert!((g[(m, n)] - expected).abs() <= 2e-4, "({m},{n}) {}", g[(m, n)]);
            }
        }
        // the image part alone is orthogonal to 2e-4 for all components
        let img = quadrature_gram(&b.domains[..1], &b.eigenfunctions[..1]).unwrap();
        for m in 0..25 {
            for n in 0..25 {
                let expected = if m == n { 0.5 } else { 0.0 };
                assert!((img[(m, n)] - expected).abs() <= 2e-4);
            }
        }
    }

    #[test]
    fn alpha_draw_and_norm_split() {
        for seed in 0..20 {
            let b = true_basis(&SimulationSpec::setting3(1, (6, 4), 10, 0.0, seed)).unwrap();
            let a = b.alpha.unwrap();
            assert!(a > 0.2 && a < 0.8);
        }
        let b = tensor_mixed_basis(&[Grid::new(0.0, 1.0, 400), Grid::new(0.0, 0.5, 200)], &Grid::new(-1.0, 1.0, 2000), 4, 0.5)
            .unwrap();
        let q0 = crate::fundata::quadrature_weights(&b.domains[0]).unwrap();
        let q1 = crate::fundata::quadrature_weights(&b.domains[1]).unwrap();
        let r0: Vec<f64> = b.eigenfunctions[0].row(1).iter().copied().collect();
        let r1: Vec<f64> = b.eigenfunctions[1].row(1).iter().copied().collect();
        assert!((q0.inner(&r0, &r0) - 0.5).abs() < 1e-4);
        assert!((q1.inner(&r1, &r1) - 0.5).abs() < 1e-4);
        assert!(tensor_mixed_basis(&[Grid::new(0.0, 1.0, 4), Grid::new(0.0, 0.5, 4)], &Grid::new(-1.0, 1.0, 4), 8, 0.5).is_err());
    }

    #[test]
    fn score_covariance_near_diagonal() {
        let spec = SimulationSpec::setting1(2000, 20, Decay::TableExp, 0.0, 7);
        let s = simulate(&spec).unwrap();
        let n = 2000.0;
        let cov = s.scores.transpose() * &s.scores / n;
        for a in 0..8 {
            for b in 0..8 {
                if a != b {
                    let bound = 0.1 * (s.eigenvalues[a] * s.eigenvalues[b]).sqrt();
                    assert!(cov[(a, b)].abs() <= bound);
                }
            }
        }
    }

    #[test]
    fn single_draw_is_finite() {
        let s = simulate(&SimulationSpec::setting1(1, 30, Decay::Exp, 0.0, 1)).unwrap();
        assert!(s.data.elements().iter().all(|e| e.values().iter().all(|v| v.is_finite())));
    }

    #[test]
    fn generation_is_reproducible() {
        let spec = SimulationSpec::setting2(20, Decay::Lin, 0.25, Sparsity::Medium, 99);
        let a = simulate(&spec).unwrap();
        let b = simulate(&spec).unwrap();
        for j in 0..3 {
            let (ea, eb) = (a.data.element(j), b.data.element(j));
            assert_eq!(ea.mask(), eb.mask());
            assert!(ea.values().iter().zip(eb.values().iter()).all(|(x, y)| x.to_bits() == y.to_bits()));
        }
        let c = simulate(&SimulationSpec { seed: 100, ..spec }).unwrap();
        assert_ne!(a.data.element(1).mask(), c.data.element(1).mask());
    }

    #[test]
    fn high_sparsity_keep_counts() {
        assert_eq!(Sparsity::High.keep_range(100), Some((5, 10)));
        assert_eq!(Sparsity::Medium.keep_range(100), Some((30, 50)));
        assert_eq!(Sparsity::High.keep_range(5), None);
        let spec = SimulationSpec::setting2(50, Decay::TableExp, 0.0, Sparsity::High, 4);
        let s = simulate(&spec).unwrap();
        let e = s.data.element(1);
        for i in 0..50 {
            let kept = e.observed(i).len();
            assert!((5..=10).contains(&kept));
        }
    }

    #[test]
    fn no_sparsity_is_identity() {
        let s = simulate(&SimulationSpec::setting1(5, 10, Decay::Exp, 0.0, 2)).unwrap();
        let same = sparsify(&s.data, Sparsity::None, &mut rng_stream(0, 9)).unwrap();
        assert_eq!(same, s.data);
    }

    #[test]
    fn exact_scores_have_diagonal_covariance() {
        let nu = Decay::TableExp.values(4);
        let s = exact_scores(&nu, 30, &mut rng_stream(1, 0));
        let cov = s.transpose() * &s / 29.0;
        assert!((cov - DMatrix::from_diagonal(&DVector::from_vec(nu))).amax() < 1e-12);
    }
}
