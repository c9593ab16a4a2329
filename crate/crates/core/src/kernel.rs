//! Covariance kernels: closed forms, truncated series expansions, and sums or
//! products over coordinate selections.
//!
//! Every kernel is immutable once built and evaluation is a pure function of
//! the two points, so Gram construction may be split across threads freely.

use std::fmt;
use std::sync::Arc;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::data::Covariates;
use crate::error::{Error, Result};
use crate::exec::Exec;

/// A basis function `phi_v` acting on a scalar coordinate.
#[derive(Clone, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Feature {
    /// `x^power`
    Monomial(u32),
    #[serde(skip)]
    Custom(CustomFeature),
}

#[derive(Clone)]
pub struct CustomFeature {
    pub name: String,
    pub func: Arc<dyn Fn(f64) -> f64 + Send + Sync>,
}

impl fmt::Debug for Feature {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Feature::Monomial(p) => write!(f, "Monomial({p})"),
            Feature::Custom(c) => write!(f, "Custom({})", c.name),
        }
    }
}

impl Feature {
    pub fn custom(name: impl Into<String>, func: impl Fn(f64) -> f64 + Send + Sync + 'static) -> Self {
        Feature::Custom(CustomFeature { name: name.into(), func: Arc::new(func) })
    }

    #[inline]
    pub fn eval(&self, x: f64) -> f64 {
        match self {
            Feature::Monomial(p) => x.powi(*p as i32),
            Feature::Custom(c) => (c.func)(x),
        }
    }
}

/// `C(s, t) = sum_v w_v phi_v(s) phi_v(t)` on a scalar domain, truncated at a
/// finite number of terms. `weights` holds the squared scales `lambda_v^2`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SeriesKernel {
    weights: Vec<f64>,
    features: Vec<Feature>,
    /// Declared decay exponent of the weights; metadata only.
    decay: Option<f64>,
}

impl SeriesKernel {
    pub fn new(weights: Vec<f64>, features: Vec<Feature>, decay: Option<f64>) -> Result<Self> {
        if weights.is_empty() || weights.len() != features.len() {
            return Err(Error::InvalidArgument(format!(
                "series kernel needs matching non-empty weights and features ({} vs {})",
                weights.len(),
                features.len()
            )));
        }
        if let Some(w) = weights.iter().find(|w| !(w.is_finite() && **w > 0.0)) {
            return Err(Error::InvalidArgument(format!("series weight {w} is not positive")));
        }
        if weights.windows(2).any(|p| p[1] > p[0]) {
            return Err(Error::InvalidArgument("series weights must be non-increasing".into()));
        }
        if let Some(eta) = decay {
            if !(eta > 1.0) {
                return Err(Error::InvalidArgument(format!("decay exponent {eta} must exceed 1")));
            }
        }
        Ok(Self { weights, features, decay })
    }

    /// `sum_{v=1}^{degree} v^{-decay} (s t)^v`.
    pub fn polynomial(degree: u32, decay: f64) -> Result<Self> {
        if degree == 0 {
            return Err(Error::InvalidArgument("polynomial degree must be at least 1".into()));
        }
        let weights = (1..=degree).map(|v| (v as f64).powf(-decay)).collect();
        let features = (1..=degree).map(Feature::Monomial).collect();
        Self::new(weights, features, Some(decay))
    }

    /// `scale * s t` as a one-term series.
    pub fn linear(scale: f64) -> Result<Self> {
        Self::new(vec![scale], vec![Feature::Monomial(1)], None)
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn features(&self) -> &[Feature] {
        &self.features
    }

    pub fn decay(&self) -> Option<f64> {
        self.decay
    }

    /// `lambda_v = sqrt(w_v)` for term `v` (zero based).
    pub fn scale(&self, v: usize) -> f64 {
        self.weights[v].sqrt()
    }

    /// `lambda_v phi_v(x)`, the `v`-th scaled feature (zero based).
    #[inline]
    pub fn scaled_feature(&self, v: usize, x: f64) -> f64 {
        self.scale(v) * self.features[v].eval(x)
    }

    #[inline]
    pub fn eval_scalar(&self, s: f64, t: f64) -> f64 {
        self.weights
            .iter()
            .zip(&self.features)
            .map(|(w, phi)| w * (phi.eval(s) * phi.eval(t)))
            .sum()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ClosedFormKind {
    /// `exp(-|s - t|^2 / (2 a^2))` with lengthscale `a`.
    GaussianRbf { lengthscale: f64 },
    /// `scale * <s, t>`.
    Linear { scale: f64 },
    /// `sum_{v >= 1} w_v <s, t>^v`.
    Polynomial { weights: Vec<f64> },
    /// Covariance of the `order`-fold integrated Brownian motion on `[0, 1]`.
    IntegratedBrownian { order: u32 },
    Constant { value: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClosedFormKernel {
    pub kind: ClosedFormKind,
    /// Optional box constraint applied to every coordinate of both arguments.
    pub domain: Option<(f64, f64)>,
}

impl ClosedFormKernel {
    pub fn new(kind: ClosedFormKind) -> Result<Self> {
        match &kind {
            ClosedFormKind::GaussianRbf { lengthscale } if !(*lengthscale > 0.0) => {
                return Err(Error::InvalidArgument(format!("lengthscale {lengthscale} must be positive")));
            }
            ClosedFormKind::Linear { scale } if !(*scale > 0.0) => {
                return Err(Error::InvalidArgument(format!("linear scale {scale} must be positive")));
            }
            ClosedFormKind::Polynomial { weights } if weights.is_empty() || weights.iter().any(|w| *w < 0.0) => {
                return Err(Error::InvalidArgument("polynomial weights must be non-empty and non-negative".into()));
            }
            ClosedFormKind::IntegratedBrownian { order: 0 } => {
                return Err(Error::InvalidArgument("integrated Brownian order must be at least 1".into()));
            }
            ClosedFormKind::Constant { value } if *value < 0.0 => {
                return Err(Error::InvalidArgument(format!("constant kernel {value} must be non-negative")));
            }
            _ => {}
        }
        let domain = match kind {
            ClosedFormKind::IntegratedBrownian { .. } => Some((0.0, 1.0)),
            _ => None,
        };
        Ok(Self { kind, domain })
    }

    pub fn with_domain(mut self, lo: f64, hi: f64) -> Self {
        self.domain = Some((lo, hi));
        self
    }

    fn eval(&self, s: &[f64], t: &[f64]) -> Result<f64> {
        if let Some((lo, hi)) = self.domain {
            if let Some(v) = s.iter().chain(t).find(|v| !(**v >= lo && **v <= hi)) {
                return Err(Error::Domain(format!("{v} outside [{lo}, {hi}]")));
            }
        }
        Ok(match &self.kind {
            ClosedFormKind::GaussianRbf { lengthscale } => {
                let d2: f64 = s.iter().zip(t).map(|(a, b)| (a - b) * (a - b)).sum();
                (-d2 / (2.0 * lengthscale * lengthscale)).exp()
            }
            ClosedFormKind::Linear { scale } => scale * dot(s, t),
            ClosedFormKind::Polynomial { weights } => {
                let st = dot(s, t);
                let mut power = 1.0;
                let mut acc = 0.0;
                for w in weights {
                    power *= st;
                    acc += w * power;
                }
                acc
            }
            ClosedFormKind::IntegratedBrownian { order } => {
                if s.len() != 1 {
                    return Err(Error::Dimension(format!(
                        "integrated Brownian kernel is scalar, got a {}-vector",
                        s.len()
                    )));
                }
                integrated_brownian_eval(*order, s[0], t[0])?
            }
            ClosedFormKind::Constant { value } => *value,
        })
    }
}

#[inline]
fn dot(s: &[f64], t: &[f64]) -> f64 {
    s.iter().zip(t).map(|(a, b)| a * b).sum()
}

/// Which coordinates of a point a term sees.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Selector {
    All,
    Coords(Vec<usize>),
}

impl Selector {
    pub fn coord(k: usize) -> Self {
        Selector::Coords(vec![k])
    }

    fn required_dim(&self) -> usize {
        match self {
            Selector::All => 0,
            Selector::Coords(c) => c.iter().max().map_or(0, |m| m + 1),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct KernelTerm {
    pub kernel: Kernel,
    pub selector: Selector,
}

/// Sum of kernels, each applied to its own coordinate selection.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct CompositeKernel {
    pub terms: Vec<KernelTerm>,
}

impl CompositeKernel {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_term(mut self, kernel: Kernel, selector: Selector) -> Self {
        self.terms.push(KernelTerm { kernel, selector });
        self
    }

    /// `sum_k base(s^(k), t^(k))` over the listed coordinates.
    pub fn additive(base: Kernel, coords: impl IntoIterator<Item = usize>) -> Self {
        Self {
            terms: coords
                .into_iter()
                .map(|k| KernelTerm { kernel: base.clone(), selector: Selector::coord(k) })
                .collect(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Kernel {
    ClosedForm(ClosedFormKernel),
    /// Series kernels act on scalar points; wrap them in a composite term to
    /// pick a coordinate.
    Series(SeriesKernel),
    Composite(CompositeKernel),
    Product(Vec<Kernel>),
    Scaled { factor: f64, kernel: Box<Kernel> },
}

impl From<ClosedFormKernel> for Kernel {
    fn from(k: ClosedFormKernel) -> Self {
        Kernel::ClosedForm(k)
    }
}

impl From<SeriesKernel> for Kernel {
    fn from(k: SeriesKernel) -> Self {
        Kernel::Series(k)
    }
}

impl From<CompositeKernel> for Kernel {
    fn from(k: CompositeKernel) -> Self {
        Kernel::Composite(k)
    }
}

impl Kernel {
    pub fn gaussian(lengthscale: f64) -> Result<Self> {
        Ok(ClosedFormKernel::new(ClosedFormKind::GaussianRbf { lengthscale })?.into())
    }

    pub fn linear(scale: f64) -> Result<Self> {
        Ok(ClosedFormKernel::new(ClosedFormKind::Linear { scale })?.into())
    }

    pub fn constant(value: f64) -> Result<Self> {
        Ok(ClosedFormKernel::new(ClosedFormKind::Constant { value })?.into())
    }

    pub fn polynomial(weights: Vec<f64>) -> Result<Self> {
        Ok(ClosedFormKernel::new(ClosedFormKind::Polynomial { weights })?.into())
    }

    pub fn integrated_brownian(order: u32) -> Result<Self> {
        Ok(ClosedFormKernel::new(ClosedFormKind::IntegratedBrownian { order })?.into())
    }

    pub fn scaled(self, factor: f64) -> Self {
        Kernel::Scaled { factor, kernel: Box::new(self) }
    }

    pub fn on(self, selector: Selector) -> Self {
        Kernel::Composite(CompositeKernel::new().with_term(self, selector))
    }

    pub fn sum(kernels: impl IntoIterator<Item = Kernel>) -> Self {
        Kernel::Composite(CompositeKernel {
            terms: kernels
                .into_iter()
                .map(|kernel| KernelTerm { kernel, selector: Selector::All })
                .collect(),
        })
    }

    /// Smallest point dimension this kernel can be evaluated on.
    pub fn required_dim(&self) -> usize {
        match self {
            Kernel::ClosedForm(_) => 0,
            Kernel::Series(_) => 1,
            Kernel::Composite(c) => c
                .terms
                .iter()
                .map(|t| match &t.selector {
                    Selector::All => t.kernel.required_dim(),
                    sel => sel.required_dim(),
                })
                .max()
                .unwrap_or(0),
            Kernel::Product(ks) => ks.iter().map(Kernel::required_dim).max().unwrap_or(0),
            Kernel::Scaled { kernel, .. } => kernel.required_dim(),
        }
    }

    /// `C(s, t)`.
    pub fn eval(&self, s: &[f64], t: &[f64]) -> Result<f64> {
        if s.len() != t.len() {
            return Err(Error::Dimension(format!("points of length {} and {}", s.len(), t.len())));
        }
        let need = self.required_dim();
        if s.len() < need {
            return Err(Error::Dimension(format!(
                "kernel selects coordinate {} but points have length {}",
                need - 1,
                s.len()
            )));
        }
        self.eval_inner(s, t)
    }

    fn eval_inner(&self, s: &[f64], t: &[f64]) -> Result<f64> {
        match self {
            Kernel::ClosedForm(k) => k.eval(s, t),
            Kernel::Series(k) => {
                if s.len() != 1 {
                    return Err(Error::Dimension(format!(
                        "series kernel is scalar, got a {}-vector",
                        s.len()
                    )));
                }
                Ok(k.eval_scalar(s[0], t[0]))
            }
            Kernel::Composite(c) => {
                let mut acc = 0.0;
                let mut bs = Vec::new();
                let mut bt = Vec::new();
                for term in &c.terms {
                    acc += match &term.selector {
                        Selector::All => term.kernel.eval_inner(s, t)?,
                        Selector::Coords(idx) if idx.len() == 1 => term
                            .kernel
                            .eval_inner(std::slice::from_ref(&s[idx[0]]), std::slice::from_ref(&t[idx[0]]))?,
                        Selector::Coords(idx) => {
                            bs.clear();
                            bt.clear();
                            bs.extend(idx.iter().map(|&k| s[k]));
                            bt.extend(idx.iter().map(|&k| t[k]));
                            term.kernel.eval_inner(&bs, &bt)?
                        }
                    };
                }
                Ok(acc)
            }
            Kernel::Product(ks) => {
                let mut acc = 1.0;
                for k in ks {
                    acc *= k.eval_inner(s, t)?;
                }
                Ok(acc)
            }
            Kernel::Scaled { factor, kernel } => Ok(factor * kernel.eval_inner(s, t)?),
        }
    }

    /// The additive pieces of this kernel: composite terms (with scalings pushed
    /// inside) or the kernel itself.
    pub fn components(&self) -> Vec<Kernel> {
        match self {
            Kernel::Composite(c) => c
                .terms
                .iter()
                .flat_map(|t| match (&t.selector, &t.kernel) {
                    (Selector::All, k @ (Kernel::Composite(_) | Kernel::Scaled { .. })) => k.components(),
                    _ => vec![Kernel::Composite(CompositeKernel { terms: vec![t.clone()] })],
                })
                .collect(),
            Kernel::Scaled { factor, kernel } => kernel
                .components()
                .into_iter()
                .map(|k| k.scaled(*factor))
                .collect(),
            other => vec![other.clone()],
        }
    }

    /// When this kernel is a single series kernel applied to one coordinate,
    /// returns that coordinate and the series (with any scaling absorbed).
    pub fn as_coordinate_series(&self) -> Option<(usize, SeriesKernel)> {
        match self {
            Kernel::Composite(c) if c.terms.len() == 1 => {
                let term = &c.terms[0];
                let k = match &term.selector {
                    Selector::Coords(idx) if idx.len() == 1 => idx[0],
                    Selector::All => return term.kernel.as_coordinate_series(),
                    _ => return None,
                };
                let series = term.kernel.as_scalar_series()?;
                Some((k, series))
            }
            Kernel::Scaled { factor, kernel } => {
                let (k, s) = kernel.as_coordinate_series()?;
                Some((k, s.rescaled(*factor).ok()?))
            }
            _ => None,
        }
    }

    fn as_scalar_series(&self) -> Option<SeriesKernel> {
        match self {
            Kernel::Series(s) => Some(s.clone()),
            Kernel::ClosedForm(ClosedFormKernel { kind: ClosedFormKind::Linear { scale }, .. }) => {
                SeriesKernel::linear(*scale).ok()
            }
            Kernel::ClosedForm(ClosedFormKernel { kind: ClosedFormKind::Polynomial { weights }, .. }) => {
                let terms: Vec<(f64, Feature)> = weights
                    .iter()
                    .enumerate()
                    .filter(|(_, w)| **w > 0.0)
                    .map(|(v, w)| (*w, Feature::Monomial(v as u32 + 1)))
                    .collect();
                let (w, f) = terms.into_iter().unzip();
                SeriesKernel::new(w, f, None).ok()
            }
            Kernel::Scaled { factor, kernel } => kernel.as_scalar_series()?.rescaled(*factor).ok(),
            _ => None,
        }
    }
}

impl SeriesKernel {
    fn rescaled(&self, factor: f64) -> Result<Self> {
        Self::new(
            self.weights.iter().map(|w| w * factor).collect(),
            self.features.clone(),
            self.decay,
        )
    }
}

/// Null/alternative decomposition `C = C_R0 + C_R1`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NullAltSplit {
    pub r0: Kernel,
    pub r1: Kernel,
}

impl NullAltSplit {
    pub fn full(&self) -> Kernel {
        Kernel::sum([self.r0.clone(), self.r1.clone()])
    }
}

pub fn eval_kernel(kernel: &Kernel, s: &[f64], t: &[f64]) -> Result<f64> {
    kernel.eval(s, t)
}

/// `M[i][j] = C(X_i, X_j)`. Only the upper triangle is evaluated and mirrored,
/// so the result is exactly symmetric.
pub fn gram_matrix(kernel: &Kernel, x: &Covariates) -> Result<DMatrix<f64>> {
    gram_matrix_with(kernel, x, Exec::default())
}

pub fn gram_matrix_with(kernel: &Kernel, x: &Covariates, exec: Exec) -> Result<DMatrix<f64>> {
    let n = x.nrows();
    if n == 0 {
        return Err(Error::InvalidArgument("Gram matrix of an empty sample".into()));
    }
    if x.ncols() < kernel.required_dim() {
        return Err(Error::Dimension(format!(
            "kernel needs {} coordinates, design has {}",
            kernel.required_dim(),
            x.ncols()
        )));
    }
    let rows = exec.map(n, |i| -> Result<Vec<f64>> {
        let xi = x.row(i);
        (i..n).map(|j| kernel.eval_inner(xi, x.row(j))).collect()
    });
    let mut m = DMatrix::zeros(n, n);
    for (i, row) in rows.into_iter().enumerate() {
        for (off, v) in row?.into_iter().enumerate() {
            if !v.is_finite() {
                return Err(Error::NonFinite(format!("C(X_{i}, X_{})", i + off)));
            }
            m[(i, i + off)] = v;
            m[(i + off, i)] = v;
        }
    }
    Ok(m)
}

/// `M[i][j] = C(X_i, Z_j)` for two point sets.
pub fn cross_gram(kernel: &Kernel, x: &Covariates, z: &Covariates) -> Result<DMatrix<f64>> {
    cross_gram_with(kernel, x, z, Exec::default())
}

pub fn cross_gram_with(kernel: &Kernel, x: &Covariates, z: &Covariates, exec: Exec) -> Result<DMatrix<f64>> {
    if x.ncols() != z.ncols() || x.ncols() < kernel.required_dim() {
        return Err(Error::Dimension(format!(
            "cross Gram between {}- and {}-dimensional points",
            x.ncols(),
            z.ncols()
        )));
    }
    let rows = exec.map(x.nrows(), |i| -> Result<Vec<f64>> {
        z.rows().map(|zj| kernel.eval_inner(x.row(i), zj)).collect()
    });
    let mut m = DMatrix::zeros(x.nrows(), z.nrows());
    for (i, row) in rows.into_iter().enumerate() {
        for (j, v) in row?.into_iter().enumerate() {
            if !v.is_finite() {
                return Err(Error::NonFinite(format!("C(X_{i}, Z_{j})")));
            }
            m[(i, j)] = v;
        }
    }
    Ok(m)
}

/// `n x count` matrix with entry `(i, v) = lambda_v phi_v(x_i)`.
pub fn feature_matrix(kernel: &SeriesKernel, points: &[f64], count: usize) -> Result<DMatrix<f64>> {
    if count > kernel.len() {
        return Err(Error::InvalidArgument(format!(
            "{count} features requested from a {}-term series",
            kernel.len()
        )));
    }
    Ok(DMatrix::from_fn(points.len(), count, |i, v| kernel.scaled_feature(v, points[i])))
}

/// `H_V(s, t) = int_0^1 G_V(s, u) G_V(t, u) du` with
/// `G_V(r, u) = max((r - u)^(V-1) / (V-1)!, 0)`.
///
/// Closed forms for `V = 1, 2`; adaptive Simpson quadrature (absolute
/// tolerance 1e-10) otherwise.
pub fn integrated_brownian_eval(order: u32, s: f64, t: f64) -> Result<f64> {
    if order == 0 {
        return Err(Error::InvalidArgument("integrated Brownian order must be at least 1".into()));
    }
    for v in [s, t] {
        if !(0.0..=1.0).contains(&v) {
            return Err(Error::Domain(format!("{v} outside [0, 1]")));
        }
    }
    let (lo, hi) = if s <= t { (s, t) } else { (t, s) };
    Ok(match order {
        1 => lo,
        // int_0^m (lo - u)(hi - u) du with m = lo
        2 => lo * lo * hi / 2.0 - lo * lo * lo / 6.0,
        v => {
            let p = (v - 1) as i32;
            let fact: f64 = (1..=p).map(f64::from).product();
            let g = |u: f64| (lo - u).powi(p) * (hi - u).powi(p) / (fact * fact);
            adaptive_simpson(&g, 0.0, lo, 1e-10)
        }
    })
}

fn adaptive_simpson(f: &dyn Fn(f64) -> f64, a: f64, b: f64, tol: f64) -> f64 {
    if b <= a {
        return 0.0;
    }
    let fa = f(a);
    let fb = f(b);
    let m = 0.5 * (a + b);
    let fm = f(m);
    let whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
    simpson_step(f, a, b, fa, fm, fb, whole, tol, 50)
}

#[allow(clippy::too_many_arguments)]
fn simpson_step(
    f: &dyn Fn(f64) -> f64,
    a: f64,
    b: f64,
    fa: f64,
    fm: f64,
    fb: f64,
    whole: f64,
    tol: f64,
    depth: u32,
) -> f64 {
    let m = 0.5 * (a + b);
    let lm = 0.5 * (a + m);
    let rm = 0.5 * (m + b);
    let flm = f(lm);
    let frm = f(rm);
    let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
    let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
    let delta = left + right - whole;
    if depth == 0 || delta.abs() <= 15.0 * tol {
        return left + right + delta / 15.0;
    }
    simpson_step(f, a, m, fa, flm, fm, left, tol / 2.0, depth - 1)
        + simpson_step(f, m, b, fm, frm, fb, right, tol / 2.0, depth - 1)
}
