//! Containers for multivariate functional data on rectangular grids, with
//! trapezoidal quadrature, scalar products and centering.
//!
//! Two-dimensional grids are flattened row-major: the first axis varies
//! slowest, so point `(a, b)` of an `S1 x S2` grid has flat index `a * S2 + b`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A rectangular sampling grid in one or two dimensions.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Domain {
    axes: Vec<Vec<f64>>,
}

impl Domain {
    pub fn new(axes: Vec<Vec<f64>>) -> Result<Self> {
        if axes.is_empty() || axes.len() > 2 {
            return Err(Error::InvalidDomain(format!(
                "dimension must be 1 or 2, got {}",
                axes.len()
            )));
        }
        for (k, axis) in axes.iter().enumerate() {
            if axis.len() < 2 {
                return Err(Error::InvalidDomain(format!(
                    "axis {k} has {} points; at least 2 are required",
                    axis.len()
                )));
            }
            if axis.iter().any(|x| !x.is_finite()) {
                return Err(Error::InvalidDomain(format!("axis {k} has non-finite points")));
            }
            if axis.windows(2).any(|w| w[1] <= w[0]) {
                return Err(Error::InvalidDomain(format!(
                    "axis {k} is not strictly increasing"
                )));
            }
        }
        Ok(Self { axes })
    }

    /// Equispaced one-dimensional grid with `n` points on `[a, b]`.
    pub fn interval(a: f64, b: f64, n: usize) -> Result<Self> {
        Self::new(vec![linspace(a, b, n)])
    }

    /// Equispaced two-dimensional grid on `[a1, b1] x [a2, b2]`.
    pub fn rectangle(first: (f64, f64, usize), second: (f64, f64, usize)) -> Result<Self> {
        Self::new(vec![
            linspace(first.0, first.1, first.2),
            linspace(second.0, second.1, second.2),
        ])
    }

    pub fn dim(&self) -> usize {
        self.axes.len()
    }

    pub fn axes(&self) -> &[Vec<f64>] {
        &self.axes
    }

    pub fn axis(&self, k: usize) -> &[f64] {
        &self.axes[k]
    }

    pub fn shape(&self) -> Vec<usize> {
        self.axes.iter().map(Vec::len).collect()
    }

    /// Total number of grid points.
    pub fn len(&self) -> usize {
        self.axes.iter().map(Vec::len).product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Lebesgue measure of the bounding box.
    pub fn measure(&self) -> f64 {
        self.axes
            .iter()
            .map(|a| a[a.len() - 1] - a[0])
            .product()
    }

    /// Bounds `(lower, upper)` of axis `k`.
    pub fn bounds(&self, k: usize) -> (f64, f64) {
        let a = &self.axes[k];
        (a[0], a[a.len() - 1])
    }

    /// Coordinates of the flat grid point `idx`.
    pub fn point(&self, idx: usize) -> Vec<f64> {
        match self.axes.len() {
            1 => vec![self.axes[0][idx]],
            _ => {
                let s2 = self.axes[1].len();
                vec![self.axes[0][idx / s2], self.axes[1][idx % s2]]
            }
        }
    }

    /// Index of the grid point nearest to `coords`, or `None` when some
    /// coordinate is farther than half the local spacing from every point.
    pub fn snap(&self, coords: &[f64]) -> Option<usize> {
        if coords.len() != self.dim() {
            return None;
        }
        let mut flat = 0usize;
        for (k, axis) in self.axes.iter().enumerate() {
            let i = snap_axis(axis, coords[k])?;
            flat = if k == 0 { i } else { flat * axis.len() + i };
        }
        Some(flat)
    }
}

fn snap_axis(axis: &[f64], x: f64) -> Option<usize> {
    let pos = axis.partition_point(|&a| a < x);
    let mut best = None;
    let mut best_d = f64::INFINITY;
    for i in [pos.saturating_sub(1), pos.min(axis.len() - 1)] {
        let d = (axis[i] - x).abs();
        if d < best_d {
            best_d = d;
            best = Some(i);
        }
    }
    let i = best?;
    let left = if i > 0 { axis[i] - axis[i - 1] } else { f64::INFINITY };
    let right = if i + 1 < axis.len() { axis[i + 1] - axis[i] } else { f64::INFINITY };
    let tol = 0.5 * left.min(right) * (1.0 + 1e-9);
    (best_d <= tol).then_some(i)
}

pub fn linspace(a: f64, b: f64, n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![a];
    }
    (0..n)
        .map(|i| {
            if i == n - 1 {
                b
            } else {
                a + (b - a) * i as f64 / (n - 1) as f64
            }
        })
        .collect()
}

/// Nonnegative quadrature weights for the points of one grid.
#[derive(Clone, Debug, PartialEq)]
pub struct QuadratureWeights(pub DVector<f64>);

impl QuadratureWeights {
    pub fn as_slice(&self) -> &[f64] {
        self.0.as_slice()
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// `Σ_k q_k a_k b_k`.
    pub fn inner(&self, a: &[f64], b: &[f64]) -> f64 {
        self.0
            .iter()
            .zip(a.iter().zip(b))
            .map(|(q, (x, y))| q * x * y)
            .sum()
    }

    pub fn integrate(&self, a: &[f64]) -> f64 {
        self.0.iter().zip(a).map(|(q, x)| q * x).sum()
    }
}

fn trapezoid_axis(axis: &[f64]) -> Result<Vec<f64>> {
    let n = axis.len();
    if n < 2 {
        return Err(Error::InvalidDomain(format!(
            "axis has {n} points; at least 2 are required"
        )));
    }
    let mut w = vec![0.0; n];
    for i in 0..n - 1 {
        let h = 0.5 * (axis[i + 1] - axis[i]);
        w[i] += h;
        w[i + 1] += h;
    }
    Ok(w)
}

/// Composite trapezoid weights; the outer product of the axis weights for
/// two-dimensional grids.
pub fn quadrature_weights(domain: &Domain) -> Result<QuadratureWeights> {
    let per_axis = domain
        .axes()
        .iter()
        .map(|a| trapezoid_axis(a))
        .collect::<Result<Vec<_>>>()?;
    let w = match per_axis.as_slice() {
        [w] => w.clone(),
        [w1, w2] => {
            let mut out = Vec::with_capacity(w1.len() * w2.len());
            for a in w1 {
                for b in w2 {
                    out.push(a * b);
                }
            }
            out
        }
        _ => unreachable!("domain dimension is validated on construction"),
    };
    Ok(QuadratureWeights(DVector::from_vec(w)))
}

/// Observations of one element: `N x G` values on a shared grid, optionally
/// with a mask of observed entries. Unobserved entries hold `NaN`.
#[derive(Clone, Debug, PartialEq)]
pub struct ElementSample {
    domain: Domain,
    values: DMatrix<f64>,
    mask: Option<DMatrix<bool>>,
}

impl ElementSample {
    pub fn new(domain: Domain, values: DMatrix<f64>, mask: Option<DMatrix<bool>>) -> Result<Self> {
        if values.ncols() != domain.len() {
            return Err(Error::Shape(format!(
                "values have {} columns but the grid has {} points",
                values.ncols(),
                domain.len()
            )));
        }
        let mut values = values;
        if let Some(m) = &mask {
            if m.shape() != values.shape() {
                return Err(Error::Shape("mask shape differs from values".into()));
            }
            for i in 0..m.nrows() {
                if !m.row(i).iter().any(|&b| b) {
                    return Err(Error::InvalidArgument(format!(
                        "observation {i} has no observed points"
                    )));
                }
                for k in 0..m.ncols() {
                    if !m[(i, k)] {
                        values[(i, k)] = f64::NAN;
                    } else if !values[(i, k)].is_finite() {
                        return Err(Error::NonFinite(format!("observation {i}, point {k}")));
                    }
                }
            }
        } else if values.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite("dense element contains NaN or inf".into()));
        }
        Ok(Self { domain, values, mask })
    }

    pub fn dense(domain: Domain, values: DMatrix<f64>) -> Result<Self> {
        Self::new(domain, values, None)
    }

    pub fn domain(&self) -> &Domain {
        &self.domain
    }

    pub fn values(&self) -> &DMatrix<f64> {
        &self.values
    }

    pub fn mask(&self) -> Option<&DMatrix<bool>> {
        self.mask.as_ref()
    }

    pub fn n(&self) -> usize {
        self.values.nrows()
    }

    pub fn grid_len(&self) -> usize {
        self.values.ncols()
    }

    pub fn is_sparse(&self) -> bool {
        self.mask.is_some()
    }

    pub fn is_observed(&self, i: usize, k: usize) -> bool {
        self.mask.as_ref().is_none_or(|m| m[(i, k)])
    }

    /// Grid indices observed for observation `i`.
    pub fn observed(&self, i: usize) -> Vec<usize> {
        (0..self.grid_len()).filter(|&k| self.is_observed(i, k)).collect()
    }

    pub fn row(&self, i: usize) -> Vec<f64> {
        self.values.row(i).iter().copied().collect()
    }

    /// A new sample containing the listed observations (repeats allowed).
    pub fn select_rows(&self, rows: &[usize]) -> Self {
        let values = self.values.select_rows(rows);
        let mask = self.mask.as_ref().map(|m| m.select_rows(rows));
        Self {
            domain: self.domain.clone(),
            values,
            mask,
        }
    }

    /// Pointwise sample mean over observed entries.
    pub fn pointwise_mean(&self, element: usize) -> Result<DVector<f64>> {
        let g = self.grid_len();
        let mut mean = DVector::zeros(g);
        for k in 0..g {
            let mut s = 0.0;
            let mut c = 0usize;
            for i in 0..self.n() {
                if self.is_observed(i, k) {
                    s += self.values[(i, k)];
                    c += 1;
                }
            }
            if c == 0 {
                return Err(Error::UnobservedPoint { element, point: k });
            }
            mean[k] = s / c as f64;
        }
        Ok(mean)
    }

    /// Pointwise sample variance (denominator `count - 1`) over observed
    /// entries; points with fewer than two observations get 0.
    pub fn pointwise_variance(&self, element: usize) -> Result<DVector<f64>> {
        let mean = self.pointwise_mean(element)?;
        let g = self.grid_len();
        let mut var = DVector::zeros(g);
        for k in 0..g {
            let mut s = 0.0;
            let mut c = 0usize;
            for i in 0..self.n() {
                if self.is_observed(i, k) {
                    s += (self.values[(i, k)] - mean[k]).powi(2);
                    c += 1;
                }
            }
            var[k] = if c > 1 { s / (c - 1) as f64 } else { 0.0 };
        }
        Ok(var)
    }
}

/// A sample of `N` multivariate functional observations with `p` elements.
#[derive(Clone, Debug, PartialEq)]
pub struct MultiFunData {
    elements: Vec<ElementSample>,
    labels: Vec<String>,
}

impl MultiFunData {
    pub fn new(elements: Vec<ElementSample>, labels: Vec<String>) -> Result<Self> {
        if elements.is_empty() {
            return Err(Error::InvalidArgument("at least one element is required".into()));
        }
        if labels.len() != elements.len() {
            return Err(Error::Shape(format!(
                "{} labels for {} elements",
                labels.len(),
                elements.len()
            )));
        }
        let n = elements[0].n();
        if let Some(j) = elements.iter().position(|e| e.n() != n) {
            return Err(Error::Shape(format!(
                "element {j} has {} observations, expected {n}",
                elements[j].n()
            )));
        }
        Ok(Self { elements, labels })
    }

    /// Elements labelled `x1, x2, ...`.
    pub fn unlabelled(elements: Vec<ElementSample>) -> Result<Self> {
        let labels = (1..=elements.len()).map(|j| format!("x{j}")).collect();
        Self::new(elements, labels)
    }

    pub fn n(&self) -> usize {
        self.elements[0].n()
    }

    pub fn p(&self) -> usize {
        self.elements.len()
    }

    pub fn elements(&self) -> &[ElementSample] {
        &self.elements
    }

    pub fn element(&self, j: usize) -> &ElementSample {
        &self.elements[j]
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn domains(&self) -> Vec<Domain> {
        self.elements.iter().map(|e| e.domain().clone()).collect()
    }

    pub fn quadrature(&self) -> Result<Vec<QuadratureWeights>> {
        self.elements
            .iter()
            .map(|e| quadrature_weights(e.domain()))
            .collect()
    }

    pub fn select_rows(&self, rows: &[usize]) -> Self {
        Self {
            elements: self.elements.iter().map(|e| e.select_rows(rows)).collect(),
            labels: self.labels.clone(),
        }
    }

    /// Observation `i` as a multivariate function. Unobserved entries stay `NaN`.
    pub fn observation(&self, i: usize) -> MultiFunction {
        MultiFunction {
            domains: self.domains(),
            values: self
                .elements
                .iter()
                .map(|e| DVector::from_vec(e.row(i)))
                .collect(),
        }
    }
}

/// One multivariate function evaluated on the grids of its elements.
#[derive(Clone, Debug, PartialEq)]
pub struct MultiFunction {
    pub domains: Vec<Domain>,
    pub values: Vec<DVector<f64>>,
}

impl MultiFunction {
    pub fn new(domains: Vec<Domain>, values: Vec<DVector<f64>>) -> Result<Self> {
        if domains.len() != values.len() {
            return Err(Error::Shape("one value vector per domain is required".into()));
        }
        for (j, (d, v)) in domains.iter().zip(&values).enumerate() {
            if d.len() != v.len() {
                return Err(Error::Shape(format!(
                    "element {j}: {} values for {} grid points",
                    v.len(),
                    d.len()
                )));
            }
        }
        Ok(Self { domains, values })
    }

    pub fn p(&self) -> usize {
        self.values.len()
    }

    pub fn scaled(&self, c: f64) -> Self {
        Self {
            domains: self.domains.clone(),
            values: self.values.iter().map(|v| v * c).collect(),
        }
    }
}

pub(crate) fn check_weights(w: &[f64], p: usize) -> Result<()> {
    if w.len() != p {
        return Err(Error::Shape(format!("{} weights for {p} elements", w.len())));
    }
    for (j, &v) in w.iter().enumerate() {
        if !(v > 0.0 && v.is_finite()) {
            return Err(Error::InvalidWeight { element: j, value: v });
        }
    }
    Ok(())
}

/// Weighted scalar product `Σ_j w_j ∫ f^(j) g^(j)` by trapezoidal quadrature.
pub fn scalar_product(f: &MultiFunction, g: &MultiFunction, w: &[f64]) -> Result<f64> {
    if f.p() != g.p() {
        return Err(Error::Shape(format!(
            "functions have {} and {} elements",
            f.p(),
            g.p()
        )));
    }
    check_weights(w, f.p())?;
    let mut total = 0.0;
    for j in 0..f.p() {
        if f.domains[j] != g.domains[j] {
            return Err(Error::DomainMismatch(j));
        }
        let q = quadrature_weights(&f.domains[j])?;
        total += w[j] * q.inner(f.values[j].as_slice(), g.values[j].as_slice());
    }
    Ok(total)
}

pub fn norm(f: &MultiFunction, w: &[f64]) -> Result<f64> {
    Ok(scalar_product(f, f, w)?.max(0.0).sqrt())
}

/// Subtract the pointwise sample mean of every element. Masked entries are
/// excluded from the mean and stay unobserved.
pub fn center(data: &MultiFunData) -> Result<(MultiFunData, Vec<DVector<f64>>)> {
    if data.n() < 2 {
        return Err(Error::InvalidArgument("centering needs at least 2 observations".into()));
    }
    let mut elements = Vec::with_capacity(data.p());
    let mut means = Vec::with_capacity(data.p());
    for (j, e) in data.elements().iter().enumerate() {
        let mean = e.pointwise_mean(j)?;
        let mut values = e.values().clone();
        for i in 0..values.nrows() {
            for k in 0..values.ncols() {
                values[(i, k)] -= mean[k];
            }
        }
        elements.push(ElementSample::new(
            e.domain().clone(),
            values,
            e.mask().cloned(),
        )?);
        means.push(mean);
    }
    Ok((MultiFunData::new(elements, data.labels().to_vec())?, means))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn unit_fn(domain: &Domain, f: impl Fn(&[f64]) -> f64) -> DVector<f64> {
        DVector::from_fn(domain.len(), |k, _| f(&domain.point(k)))
    }

    #[test]
    fn trapezoid_weights_small_grids() {
        let q = quadrature_weights(&Domain::interval(0.0, 1.0, 3).unwrap()).unwrap();
        assert_eq!(q.as_slice(), &[0.25, 0.5, 0.25]);
        let q = quadrature_weights(&Domain::interval(0.0, 2.0, 2).unwrap()).unwrap();
        assert_eq!(q.as_slice(), &[1.0, 1.0]);
        let q = quadrature_weights(&Domain::rectangle((0.0, 1.0, 3), (0.0, 1.0, 2)).unwrap())
            .unwrap();
        let expected = [0.125, 0.125, 0.25, 0.25, 0.125, 0.125];
        for (a, b) in q.as_slice().iter().zip(expected) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn weights_sum_to_measure() {
        let d = Domain::new(vec![vec![0.0, 0.1, 0.35, 1.0], vec![-1.0, 0.0, 2.0]]).unwrap();
        let q = quadrature_weights(&d).unwrap();
        let s: f64 = q.as_slice().iter().sum();
        assert!((s - d.measure()).abs() <= 1e-12 * d.measure());
    }

    #[test]
    fn rejects_bad_axes() {
        assert!(Domain::new(vec![vec![0.0]]).is_err());
        assert!(Domain::new(vec![vec![0.0, 0.0, 1.0]]).is_err());
        assert!(Domain::new(vec![]).is_err());
        assert!(Domain::new(vec![vec![0.0, 1.0]; 3]).is_err());
    }

    #[test]
    fn scalar_product_examples() {
        let d = Domain::interval(0.0, 1.0, 11).unwrap();
        let one = MultiFunction::new(vec![d.clone()], vec![DVector::from_element(11, 1.0)]).unwrap();
        assert!((scalar_product(&one, &one, &[1.0]).unwrap() - 1.0).abs() < 1e-14);
        assert!((norm(&one, &[1.0]).unwrap() - 1.0).abs() < 1e-14);

        // disjoint supports in each element
        let d2 = Domain::interval(0.0, 1.0, 5).unwrap();
        let f = MultiFunction::new(
            vec![d2.clone(), d2.clone()],
            vec![
                DVector::from_vec(vec![1.0, 1.0, 0.0, 0.0, 0.0]),
                DVector::from_vec(vec![0.0, 0.0, 0.0, 2.0, 3.0]),
            ],
        )
        .unwrap();
        let g = MultiFunction::new(
            vec![d2.clone(), d2],
            vec![
                DVector::from_vec(vec![0.0, 0.0, 0.0, 5.0, 5.0]),
                DVector::from_vec(vec![4.0, 4.0, 4.0, 0.0, 0.0]),
            ],
        )
        .unwrap();
        assert_eq!(scalar_product(&f, &g, &[1.0, 2.0]).unwrap(), 0.0);
    }

    #[test]
    fn fourier_orthonormality_on_0_2() {
        // f1 = 1/sqrt(2), f2 = sin(pi t) on [0, 2]
        let d = Domain::interval(0.0, 2.0, 1001).unwrap();
        let f1 = unit_fn(&d, |_| 1.0 / 2f64.sqrt());
        let f2 = unit_fn(&d, |t| (std::f64::consts::PI * t[0]).sin());
        let mf = |v: DVector<f64>| MultiFunction::new(vec![d.clone()], vec![v]).unwrap();
        let (a, b) = (mf(f1), mf(f2));
        assert!((scalar_product(&a, &a, &[1.0]).unwrap() - 1.0).abs() <= 1e-6);
        assert!((scalar_product(&b, &b, &[1.0]).unwrap() - 1.0).abs() <= 1e-6);
        assert!(scalar_product(&a, &b, &[1.0]).unwrap().abs() <= 1e-6);
    }

    #[test]
    fn norm_of_zero_and_constant() {
        let d = Domain::interval(0.0, 2.0, 7).unwrap();
        let z = MultiFunction::new(vec![d.clone()], vec![DVector::zeros(7)]).unwrap();
        assert_eq!(norm(&z, &[1.0]).unwrap(), 0.0);
        let c = MultiFunction::new(vec![d], vec![DVector::from_element(7, -3.0)]).unwrap();
        assert!((norm(&c, &[1.0]).unwrap() - 3.0 * 2f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn weight_and_domain_errors() {
        let d = Domain::interval(0.0, 1.0, 3).unwrap();
        let e = Domain::interval(0.0, 2.0, 3).unwrap();
        let f = MultiFunction::new(vec![d], vec![DVector::zeros(3)]).unwrap();
        let g = MultiFunction::new(vec![e], vec![DVector::zeros(3)]).unwrap();
        assert!(matches!(scalar_product(&f, &f, &[0.0]), Err(Error::InvalidWeight { .. })));
        assert!(matches!(scalar_product(&f, &f, &[-1.0]), Err(Error::InvalidWeight { .. })));
        assert!(matches!(scalar_product(&f, &g, &[1.0]), Err(Error::DomainMismatch(0))));
    }

    #[test]
    fn trapezoid_converges_at_second_order() {
        // ∫_0^1 t^3 dt = 1/4
        let err = |n: usize| {
            let d = Domain::interval(0.0, 1.0, n).unwrap();
            let q = quadrature_weights(&d).unwrap();
            let v: Vec<f64> = d.axis(0).iter().map(|t| t.powi(3)).collect();
            (q.integrate(&v) - 0.25).abs()
        };
        for n in [11, 21, 41] {
            let ratio = err(n) / err(2 * n - 1);
            assert!((ratio - 4.0).abs() < 0.1, "ratio {ratio}");
        }
    }

    #[test]
    fn center_examples() {
        let d = Domain::interval(0.0, 1.0, 3).unwrap();
        let same = DMatrix::from_row_slice(3, 3, &[1.0, 2.0, 3.0, 1.0, 2.0, 3.0, 1.0, 2.0, 3.0]);
        let data = MultiFunData::unlabelled(vec![ElementSample::dense(d.clone(), same).unwrap()])
            .unwrap();
        let (c, _) = center(&data).unwrap();
        assert!(c.element(0).values().iter().all(|&x| x == 0.0));

        let two = DMatrix::from_row_slice(2, 3, &[1.0, 4.0, -2.0, 3.0, 0.0, 2.0]);
        let data = MultiFunData::unlabelled(vec![ElementSample::dense(d.clone(), two).unwrap()])
            .unwrap();
        let (c, means) = center(&data).unwrap();
        assert_eq!(means[0].as_slice(), &[2.0, 2.0, 0.0]);
        assert_eq!(c.element(0).row(0), vec![-1.0, 2.0, -2.0]);
        assert_eq!(c.element(0).row(1), vec![1.0, -2.0, 2.0]);

        // masked mean uses observed rows only
        let vals = DMatrix::from_row_slice(2, 3, &[1.0, 10.0, 2.0, 3.0, 0.0, 4.0]);
        let mask = DMatrix::from_row_slice(2, 3, &[true, true, true, true, false, true]);
        let e = ElementSample::new(d.clone(), vals, Some(mask)).unwrap();
        let data = MultiFunData::unlabelled(vec![e]).unwrap();
        let (_, means) = center(&data).unwrap();
        assert_eq!(means[0].as_slice(), &[2.0, 10.0, 3.0]);

        let vals = DMatrix::from_row_slice(2, 3, &[1.0, 0.0, 2.0, 3.0, 0.0, 4.0]);
        let mask = DMatrix::from_row_slice(2, 3, &[true, false, true, true, false, true]);
        let e = ElementSample::new(d, vals, Some(mask)).unwrap();
        let data = MultiFunData::unlabelled(vec![e]).unwrap();
        assert!(matches!(center(&data), Err(Error::UnobservedPoint { element: 0, point: 1 })));
    }

    #[test]
    fn snapping_respects_half_spacing() {
        let d = Domain::interval(0.0, 1.0, 11).unwrap();
        assert_eq!(d.snap(&[0.31]), Some(3));
        assert_eq!(d.snap(&[1.04]), Some(10));
        assert_eq!(d.snap(&[1.2]), None);
        let r = Domain::rectangle((0.0, 1.0, 3), (0.0, 1.0, 2)).unwrap();
        assert_eq!(r.snap(&[0.5, 1.0]), Some(3));
    }

    proptest! {
        #[test]
        fn scalar_product_symmetric_bilinear(
            a in proptest::collection::vec(-5.0f64..5.0, 9),
            b in proptest::collection::vec(-5.0f64..5.0, 9),
            c in proptest::collection::vec(-5.0f64..5.0, 9),
            s in -3.0f64..3.0,
            w in 0.1f64..4.0,
        ) {
            let d1 = Domain::interval(0.0, 1.0, 5).unwrap();
            let d2 = Domain::rectangle((0.0, 1.0, 2), (0.0, 0.5, 2)).unwrap();
            let mk = |v: &[f64]| MultiFunction::new(
                vec![d1.clone(), d2.clone()],
                vec![DVector::from_column_slice(&v[..5]), DVector::from_column_slice(&v[5..])],
            ).unwrap();
            let (f, g, h) = (mk(&a), mk(&b), mk(&c));
            let ws = [1.0, w];
            let fg = scalar_product(&f, &g, &ws).unwrap();
            let gf = scalar_product(&g, &f, &ws).unwrap();
            prop_assert!((fg - gf).abs() <= 1e-12 * (1.0 + fg.abs()));
            let combo: Vec<f64> = a.iter().zip(&b).map(|(x, y)| s * x + y).collect();
            let lhs = scalar_product(&mk(&combo), &h, &ws).unwrap();
            let rhs = s * scalar_product(&f, &h, &ws).unwrap() + scalar_product(&g, &h, &ws).unwrap();
            prop_assert!((lhs - rhs).abs() <= 1e-10 * (1.0 + lhs.abs()));
            let n = norm(&f, &ws).unwrap();
            prop_assert!((n * n - scalar_product(&f, &f, &ws).unwrap()).abs() <= 1e-12 * (1.0 + n * n));
        }

        #[test]
        fn centered_mean_is_zero(vals in proptest::collection::vec(-100.0f64..100.0, 12)) {
            let d = Domain::interval(0.0, 1.0, 3).unwrap();
            let m = DMatrix::from_row_slice(4, 3, &vals);
            let data = MultiFunData::unlabelled(vec![ElementSample::dense(d, m).unwrap()]).unwrap();
            let (c, _) = center(&data).unwrap();
            let mean = c.element(0).pointwise_mean(0).unwrap();
            prop_assert!(mean.iter().all(|x| x.abs() <= 1e-12));
        }
    }
}
