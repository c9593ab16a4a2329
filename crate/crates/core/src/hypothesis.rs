//! Specification test of a restricted kernel model against an additive
//! alternative: instruments orthogonalised against the null space, a
//! quadratic-form statistic and a weighted chi-square reference law.

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::data::{Covariates, Dataset};
use crate::error::{Error, Result};
use crate::estimator::{fit, ridge_model, FitConfig, FittedModel, Solver};
use crate::kernel::{cross_gram_with, gram_matrix_with, Kernel, SeriesKernel};
use crate::linalg::{eigenvalues_desc, spd_solve, SymEigen};
use crate::loss::Loss;

pub const SCALING_NOTE: &str = "statistic = (1/R) sum_r (n^-1/2 e0'h_r)^2; the unnormalised sum (1/R) sum_r (e0'h_r)^2 is n times larger";

/// `e0[i] = dL(Y_i, mu(X_i)) / dt`.
pub fn generalized_residuals(model: &FittedModel, data: &Dataset, loss: &dyn Loss) -> Result<DVector<f64>> {
    let fitted = model.predict(&data.x)?;
    residuals_at(&fitted, &data.y, loss)
}

fn residuals_at(fitted: &DVector<f64>, y: &DVector<f64>, loss: &dyn Loss) -> Result<DVector<f64>> {
    let mut e = DVector::zeros(y.len());
    for i in 0..y.len() {
        loss.check_response(y[i])?;
        e[i] = loss.deriv(1, y[i], fitted[i])?;
    }
    Ok(e)
}

/// Weight function of the covariates for the known-weight projection.
pub type WeightFn = dyn Fn(&[f64]) -> f64 + Send + Sync;

#[derive(Clone)]
pub struct KnownWeight(pub Arc<WeightFn>);

impl fmt::Debug for KnownWeight {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("KnownWeight(..)")
    }
}

#[derive(Debug, Clone, Default)]
pub enum WeightSource {
    /// Second derivative of the loss at the restricted fit.
    #[default]
    Estimated,
    Known(KnownWeight),
}

/// Diagonal of `S`.
#[derive(Debug, Clone, PartialEq)]
pub struct ProjectionWeights(pub DVector<f64>);

impl ProjectionWeights {
    pub fn from_loss(loss: &dyn Loss, y: &DVector<f64>, fitted: &DVector<f64>) -> Result<Self> {
        let mut s = DVector::zeros(y.len());
        for i in 0..y.len() {
            s[i] = loss.deriv(2, y[i], fitted[i])?;
        }
        Self::new(s)
    }

    pub fn known(w: &KnownWeight, x: &Covariates) -> Result<Self> {
        Self::new(DVector::from_iterator(x.nrows(), x.rows().map(|r| (w.0)(r))))
    }

    pub fn identity(n: usize) -> Self {
        Self(DVector::from_element(n, 1.0))
    }

    pub fn new(s: DVector<f64>) -> Result<Self> {
        if let Some(v) = s.iter().find(|v| !(**v > 0.0) || !v.is_finite()) {
            return Err(Error::Domain(format!("projection weights must be positive and finite, got {v}")));
        }
        Ok(Self(s))
    }

    /// The common value when all weights are equal.
    fn constant(&self) -> Option<f64> {
        let first = *self.0.iter().next()?;
        self.0.iter().all(|&v| v == first).then_some(first)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InstrumentMode {
    GramColumns,
    KernelSectionsNormalized,
    SeriesFeatures,
}

/// `lambda_v phi_v` of a series kernel on covariate `coord` (`term` is zero based).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FeatureColumn {
    pub coord: usize,
    pub kernel: SeriesKernel,
    pub term: usize,
}

impl FeatureColumn {
    fn eval(&self, x: &Covariates) -> Result<DVector<f64>> {
        if self.coord >= x.ncols() {
            return Err(Error::Dimension(format!(
                "feature on covariate {} but data has {}",
                self.coord,
                x.ncols()
            )));
        }
        if self.term >= self.kernel.len() {
            return Err(Error::InvalidArgument(format!(
                "term {} of a {}-term series",
                self.term,
                self.kernel.len()
            )));
        }
        Ok(DVector::from_iterator(
            x.nrows(),
            (0..x.nrows()).map(|i| self.kernel.scaled_feature(self.term, x.get(i, self.coord))),
        ))
    }
}

/// Columns of the stacked feature matrix.
pub fn feature_columns(columns: &[FeatureColumn], x: &Covariates) -> Result<DMatrix<f64>> {
    let mut m = DMatrix::zeros(x.nrows(), columns.len());
    for (r, c) in columns.iter().enumerate() {
        m.set_column(r, &c.eval(x)?);
    }
    Ok(m)
}

#[derive(Debug, Clone)]
pub enum InstrumentSpec {
    /// `C(X_i, X_j)` for the listed sample indices `j`.
    GramColumns { kernel: Kernel, indices: Vec<usize> },
    /// `C(X_i, z_r) / sqrt(C(z_r, z_r))`.
    KernelSections { kernel: Kernel, anchors: Covariates },
    /// Normalised sections anchored at the first `count` sample points (all
    /// of them when `None`).
    SampleSections { kernel: Kernel, count: Option<usize> },
    SeriesFeatures(Vec<FeatureColumn>),
}

/// Raw instrument matrix `n x R`.
pub fn build_instruments(spec: &InstrumentSpec, x: &Covariates) -> Result<(DMatrix<f64>, InstrumentMode)> {
    let exec = crate::exec::Exec::default();
    let out = match spec {
        InstrumentSpec::GramColumns { kernel, indices } => {
            if let Some(&j) = indices.iter().find(|&&j| j >= x.nrows()) {
                return Err(Error::Dimension(format!("instrument index {j} with {} points", x.nrows())));
            }
            let anchors = Covariates::from_rows(&indices.iter().map(|&j| x.row(j).to_vec()).collect::<Vec<_>>())?;
            (cross_gram_with(kernel, x, &anchors, exec)?, InstrumentMode::GramColumns)
        }
        InstrumentSpec::KernelSections { kernel, anchors } => {
            (normalized_sections(kernel, x, anchors)?, InstrumentMode::KernelSectionsNormalized)
        }
        InstrumentSpec::SampleSections { kernel, count } => {
            let r = count.unwrap_or(x.nrows());
            if r > x.nrows() {
                return Err(Error::InvalidArgument(format!("{r} anchors requested from {} points", x.nrows())));
            }
            (normalized_sections(kernel, x, &x.head(r))?, InstrumentMode::KernelSectionsNormalized)
        }
        InstrumentSpec::SeriesFeatures(cols) => (feature_columns(cols, x)?, InstrumentMode::SeriesFeatures),
    };
    if out.0.ncols() == 0 {
        return Err(Error::InvalidArgument("at least one instrument is required".into()));
    }
    Ok(out)
}

fn normalized_sections(kernel: &Kernel, x: &Covariates, anchors: &Covariates) -> Result<DMatrix<f64>> {
    let mut m = cross_gram_with(kernel, x, anchors, crate::exec::Exec::default())?;
    for r in 0..anchors.nrows() {
        let z = anchors.row(r);
        let d = kernel.eval(z, z)?;
        if !(d > 0.0) {
            return Err(Error::Degenerate(format!("C(z, z) = {d} at anchor {r}")));
        }
        m.column_mut(r).scale_mut(1.0 / d.sqrt());
    }
    Ok(m)
}

#[derive(Debug, Clone)]
pub struct InstrumentSet {
    pub raw: DMatrix<f64>,
    pub projected: DMatrix<f64>,
    pub proj_rho: f64,
    pub mode: InstrumentMode,
}

/// `raw - C0 (C0 + rho S^-1)^-1 raw`; at `rho = 0` the S-weighted least
/// squares residual through the pseudo-inverse.
pub fn project_instruments(c0: &DMatrix<f64>, s: &ProjectionWeights, raw: &DMatrix<f64>, rho: f64) -> Result<DMatrix<f64>> {
    check_projection(c0.nrows(), s, raw, rho)?;
    if !c0.is_square() || c0.nrows() != raw.nrows() {
        return Err(Error::Dimension(format!("{}x{} null Gram for {} rows", c0.nrows(), c0.ncols(), raw.nrows())));
    }
    if let Some(sc) = s.constant() {
        return Ok(project_with_eigen(&SymEigen::new(c0)?, sc, raw, rho));
    }
    if rho > 0.0 {
        let mut a = c0.clone();
        for i in 0..a.nrows() {
            a[(i, i)] += rho / s.0[i];
        }
        return Ok(raw - c0 * spd_solve(&a, raw)?);
    }
    // S^1/2 C0 S^1/2 = Q L Q'; residual = c - S^-1/2 Q 1{L > 0} Q' S^1/2 c
    let sq = s.0.map(f64::sqrt);
    let mut m = c0.clone();
    for i in 0..m.nrows() {
        for j in 0..m.ncols() {
            m[(i, j)] *= sq[i] * sq[j];
        }
    }
    let eig = SymEigen::new(&m)?;
    let keep = eig.values.map(|l| if l > eig.rank_tol { 1.0 } else { 0.0 });
    let mut sc = raw.clone();
    for (mut row, w) in sc.row_iter_mut().zip(sq.iter()) {
        row *= *w;
    }
    let mut p = eig.apply_diag(&keep, &sc);
    for (mut row, w) in p.row_iter_mut().zip(sq.iter()) {
        row /= *w;
    }
    Ok(raw - p)
}

/// Projection through a cached eigendecomposition of `C0` when `S = s I`.
pub fn project_with_eigen(eig: &SymEigen, s: f64, raw: &DMatrix<f64>, rho: f64) -> DMatrix<f64> {
    let shrink = eig.values.map(|k| {
        if rho > 0.0 {
            k / (k + rho / s)
        } else if k > eig.rank_tol {
            1.0
        } else {
            0.0
        }
    });
    raw - eig.apply_diag(&shrink, raw)
}

/// Projection when `C0 = Phi Phi'` for a known `n x p` feature matrix:
/// `raw - Phi (Phi' S Phi + rho I)^-1 Phi' S raw`.
pub fn project_on_features(phi: &DMatrix<f64>, s: &ProjectionWeights, raw: &DMatrix<f64>, rho: f64) -> Result<DMatrix<f64>> {
    check_projection(phi.nrows(), s, raw, rho)?;
    let mut sphi = phi.clone();
    for (mut row, w) in sphi.row_iter_mut().zip(s.0.iter()) {
        row *= *w;
    }
    let mut a = phi.tr_mul(&sphi);
    let b = sphi.tr_mul(raw);
    let coef = if rho > 0.0 {
        for i in 0..a.nrows() {
            a[(i, i)] += rho;
        }
        spd_solve(&a, &b)?
    } else {
        let eig = SymEigen::new(&a)?;
        let inv = eig.values.map(|l| if l > eig.rank_tol { 1.0 / l } else { 0.0 });
        eig.apply_diag(&inv, &b)
    };
    Ok(raw - phi * coef)
}

fn check_projection(n: usize, s: &ProjectionWeights, raw: &DMatrix<f64>, rho: f64) -> Result<()> {
    if !(rho >= 0.0) || !rho.is_finite() {
        return Err(Error::Domain(format!("projection penalty must be finite and non-negative, got {rho}")));
    }
    if s.0.len() != n || raw.nrows() != n {
        return Err(Error::Dimension(format!(
            "projection onto {n} rows with {} weights and {} instrument rows",
            s.0.len(),
            raw.nrows()
        )));
    }
    Ok(())
}

/// `(1/R) sum_r (n^-1/2 e0' h_r)^2`.
pub fn test_statistic(e0: &DVector<f64>, h: &DMatrix<f64>) -> Result<f64> {
    if e0.len() != h.nrows() {
        return Err(Error::Dimension(format!("{} residuals for {} instrument rows", e0.len(), h.nrows())));
    }
    let n = e0.len() as f64;
    let r = h.ncols() as f64;
    Ok(h.tr_mul(e0).norm_squared() / (n * r))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CovarianceVariant {
    /// `n^-1 sum_i S_i h_k(X_i) h_l(X_i)`.
    Pointwise,
    /// `(n^-1 e0'e0)(n^-1 H'H)`.
    #[default]
    ProductForm,
}

#[derive(Debug, Clone)]
pub struct CovarianceEstimate {
    /// `Sigma_n / R`.
    pub scaled: DMatrix<f64>,
    /// Eigenvalues of `Sigma_n / R`, descending and clipped at zero.
    pub spectrum: Vec<f64>,
}

pub fn covariance_estimate(
    e0: &DVector<f64>,
    h: &DMatrix<f64>,
    s: Option<&ProjectionWeights>,
    variant: CovarianceVariant,
) -> Result<CovarianceEstimate> {
    let n = h.nrows();
    if e0.len() != n {
        return Err(Error::Dimension(format!("{} residuals for {} instrument rows", e0.len(), n)));
    }
    let nf = n as f64;
    let r = h.ncols() as f64;
    let scaled = match variant {
        CovarianceVariant::ProductForm => h.tr_mul(h) * (e0.norm_squared() / nf / nf / r),
        CovarianceVariant::Pointwise => {
            let s = s.ok_or_else(|| Error::InvalidArgument("pointwise covariance needs the weights S".into()))?;
            if s.0.len() != n {
                return Err(Error::Dimension(format!("{} weights for {} rows", s.0.len(), n)));
            }
            let mut sh = h.clone();
            for (mut row, w) in sh.row_iter_mut().zip(s.0.iter()) {
                row *= *w;
            }
            h.tr_mul(&sh) / (nf * r)
        }
    };
    let scaled = (&scaled + scaled.transpose()) * 0.5;
    let spectrum = eigenvalues_desc(&scaled).into_iter().map(|v| v.max(0.0)).collect();
    Ok(CovarianceEstimate { scaled, spectrum })
}

/// `draws` samples of `sum_k w_k N_k^2`.
pub fn simulate_null(spectrum: &[f64], draws: usize, seed: u64) -> Result<Vec<f64>> {
    simulate_null_with(spectrum, draws, &mut ChaCha8Rng::seed_from_u64(seed))
}

pub fn simulate_null_with<R: rand::Rng + ?Sized>(spectrum: &[f64], draws: usize, rng: &mut R) -> Result<Vec<f64>> {
    if draws == 0 {
        return Err(Error::InvalidArgument("at least one null draw is required".into()));
    }
    if let Some(w) = spectrum.iter().find(|w| !(**w >= 0.0) || !w.is_finite()) {
        return Err(Error::Domain(format!("spectrum weights must be non-negative, got {w}")));
    }
    Ok((0..draws)
        .map(|_| {
            spectrum
                .iter()
                .map(|w| {
                    let z: f64 = StandardNormal.sample(rng);
                    w * z * z
                })
                .sum()
        })
        .collect())
}

/// `(1 + #{draws >= statistic}) / (M + 1)`.
pub fn p_value(statistic: f64, draws: &[f64]) -> Result<f64> {
    if draws.is_empty() {
        return Err(Error::InvalidArgument("no null draws".into()));
    }
    if statistic.is_nan() {
        return Err(Error::NonFinite("statistic".into()));
    }
    let exceed = draws.iter().filter(|&&d| d >= statistic).count();
    Ok((1 + exceed) as f64 / (draws.len() + 1) as f64)
}

/// What the instruments are orthogonalised against.
#[derive(Debug, Clone)]
pub enum ProjectionTarget {
    /// Columns of the null kernel's Gram matrix.
    NullGram,
    /// Span of explicit feature columns.
    Features(Vec<FeatureColumn>),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProjRho {
    /// `n^exponent`.
    Power(f64),
    Fixed(f64),
}

impl Default for ProjRho {
    fn default() -> Self {
        ProjRho::Power(-0.4)
    }
}

impl ProjRho {
    pub fn resolve(self, n: usize) -> Result<f64> {
        let v = match self {
            ProjRho::Power(e) => (n as f64).powf(e),
            ProjRho::Fixed(v) => v,
        };
        if !(v >= 0.0) || !v.is_finite() {
            return Err(Error::Domain(format!("projection penalty must be non-negative, got {v}")));
        }
        Ok(v)
    }
}

#[derive(Debug, Clone)]
pub struct TestSpec {
    /// `C_R0`.
    pub null_kernel: Kernel,
    pub instruments: InstrumentSpec,
    pub projection: ProjectionTarget,
    pub fit: FitConfig,
    pub proj_rho: ProjRho,
    pub weights: WeightSource,
    pub covariance: CovarianceVariant,
    pub null_draws: usize,
    pub seed: u64,
}

impl TestSpec {
    pub fn new(null_kernel: Kernel, instruments: InstrumentSpec, projection: ProjectionTarget) -> Self {
        Self {
            null_kernel,
            instruments,
            projection,
            fit: FitConfig::default(),
            proj_rho: ProjRho::default(),
            weights: WeightSource::Estimated,
            covariance: CovarianceVariant::ProductForm,
            null_draws: 10_000,
            seed: 0,
        }
    }
}

/// Statistic, spectrum and p-value for one instrument matrix.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Calibrated {
    pub statistic: f64,
    pub spectrum: Vec<f64>,
    pub p_value: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TestResult {
    pub statistic: f64,
    pub spectrum: Vec<f64>,
    #[serde(skip)]
    pub null_draws: Vec<f64>,
    pub p_value: f64,
    pub instruments: usize,
    pub n: usize,
    pub proj_rho: f64,
    pub covariance: CovarianceVariant,
    pub draws: usize,
    pub seed: u64,
    pub scaling_note: String,
    /// Same pipeline with the projection skipped.
    pub naive: Calibrated,
    pub null_norm_hk: f64,
    pub null_ridge_rho: f64,
}

/// Fit the restricted model, build and project the instruments, and calibrate
/// the statistic both with and without the projection.
pub fn run_test(data: &Dataset, loss: &dyn Loss, spec: &TestSpec) -> Result<TestResult> {
    let n = data.n();
    if n == 0 {
        return Err(Error::InvalidArgument("empty dataset".into()));
    }
    let exec = spec.fit.exec;
    let needs_gram = spec.fit.solver == Solver::RidgeClosedForm || matches!(spec.projection, ProjectionTarget::NullGram);
    let gram = if needs_gram { Some(gram_matrix_with(&spec.null_kernel, &data.x, exec)?) } else { None };
    let mut eig = None;
    let model = match spec.fit.solver {
        Solver::RidgeClosedForm => {
            spec.fit.validate()?;
            let g = gram.as_ref().expect("gram computed for ridge");
            let e = SymEigen::new(g)?;
            let m = ridge_model(data, loss, &spec.null_kernel, g, &e, &spec.fit)?;
            eig = Some(e);
            m
        }
        Solver::Greedy => fit(data, loss, &spec.null_kernel, &spec.fit)?,
    };
    let e0 = residuals_at(&model.fitted, &data.y, loss)?;
    let s = match &spec.weights {
        WeightSource::Estimated => ProjectionWeights::from_loss(loss, &data.y, &model.fitted)?,
        WeightSource::Known(w) => ProjectionWeights::known(w, &data.x)?,
    };
    let (raw, _) = build_instruments(&spec.instruments, &data.x)?;
    let rho = spec.proj_rho.resolve(n)?;
    let projected = match &spec.projection {
        ProjectionTarget::NullGram => {
            let g = gram.as_ref().expect("gram computed for projection");
            match (&eig, s.constant()) {
                (Some(e), Some(sc)) => project_with_eigen(e, sc, &raw, rho),
                _ => project_instruments(g, &s, &raw, rho)?,
            }
        }
        ProjectionTarget::Features(cols) => project_on_features(&feature_columns(cols, &data.x)?, &s, &raw, rho)?,
    };

    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let statistic = test_statistic(&e0, &projected)?;
    let cov = covariance_estimate(&e0, &projected, Some(&s), spec.covariance)?;
    let null_draws = simulate_null_with(&cov.spectrum, spec.null_draws, &mut rng)?;
    let p = p_value(statistic, &null_draws)?;

    rng.set_stream(1);
    let naive_stat = test_statistic(&e0, &raw)?;
    let naive_cov = covariance_estimate(&e0, &raw, Some(&s), spec.covariance)?;
    let naive_draws = simulate_null_with(&naive_cov.spectrum, spec.null_draws, &mut rng)?;
    let naive = Calibrated { statistic: naive_stat, p_value: p_value(naive_stat, &naive_draws)?, spectrum: naive_cov.spectrum };

    Ok(TestResult {
        statistic,
        spectrum: cov.spectrum,
        null_draws,
        p_value: p,
        instruments: raw.ncols(),
        n,
        proj_rho: rho,
        covariance: spec.covariance,
        draws: spec.null_draws,
        seed: spec.seed,
        scaling_note: SCALING_NOTE.into(),
        naive,
        null_norm_hk: model.norm_hk,
        null_ridge_rho: model.ridge_rho,
    })
}
