//! Frank-Wolfe greedy fitting over a ball of additive RKHS functions.

use nalgebra::{DMatrix, DVector};

use super::model::{FittedModel, IterationRecord, Representation, RepresenterComponent, SeriesComponent};
use super::{FitConfig, NormKind, StepRule};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::kernel::{feature_matrix, gram_matrix_with, Kernel, SeriesKernel};
use crate::loss::Loss;

/// Relative size below which a gradient/kernel quadratic form counts as zero.
const ZERO_FORM: f64 = 1e-14;

/// Base kernels of an additive model, either as general kernels evaluated
/// through Gram matrices or as coordinate-wise series with explicit features.
#[derive(Debug, Clone)]
pub enum GreedyBasis {
    Gram(Vec<Kernel>),
    Series(Vec<(usize, SeriesKernel)>),
}

impl GreedyBasis {
    /// Splits `kernel` into its additive components and uses the series path
    /// when every component is a series on a single coordinate.
    pub fn from_kernel(kernel: &Kernel, prefer_series: bool) -> Self {
        let comps = kernel.components();
        if prefer_series {
            let series: Option<Vec<_>> = comps.iter().map(Kernel::as_coordinate_series).collect();
            if let Some(s) = series {
                return GreedyBasis::Series(s);
            }
        }
        GreedyBasis::Gram(comps)
    }

    pub fn len(&self) -> usize {
        match self {
            GreedyBasis::Gram(k) => k.len(),
            GreedyBasis::Series(s) => s.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Unit-norm descent direction `f = sum_i alpha_i C(X_i, .)` and its multiplier.
#[derive(Debug, Clone, PartialEq)]
pub struct GramDirection {
    pub coeffs: DVector<f64>,
    pub rho: f64,
}

/// Unit-norm descent direction in series coordinates and its multiplier.
#[derive(Debug, Clone, PartialEq)]
pub struct SeriesDirection {
    pub coeffs: DVector<f64>,
    pub rho: f64,
}

/// Minimiser of `P_n dl f` over the unit ball of the kernel with Gram `gram`.
/// `rho = sqrt(g^T C g) / (2n)` and `alpha = -g / (2 rho n)`; a vanishing
/// quadratic form gives `rho = 1`, `f = 0`.
pub fn greedy_direction(grad: &DVector<f64>, gram: &DMatrix<f64>) -> Result<GramDirection> {
    let cg = gram_times(grad, gram)?;
    Ok(direction_from_form(grad, &cg, gram_scale(gram)))
}

fn gram_times(grad: &DVector<f64>, gram: &DMatrix<f64>) -> Result<DVector<f64>> {
    if gram.nrows() != grad.len() || !gram.is_square() {
        return Err(Error::Dimension(format!(
            "{} gradient entries for a {}x{} Gram",
            grad.len(),
            gram.nrows(),
            gram.ncols()
        )));
    }
    if grad.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("loss gradient".into()));
    }
    Ok(gram * grad)
}

fn gram_scale(gram: &DMatrix<f64>) -> f64 {
    gram.diagonal().iter().fold(0.0f64, |a, v| a.max(v.abs()))
}

fn direction_from_form(grad: &DVector<f64>, cg: &DVector<f64>, scale: f64) -> GramDirection {
    let n = grad.len() as f64;
    let q = grad.dot(cg);
    if q <= ZERO_FORM * grad.norm_squared() * scale {
        return GramDirection { coeffs: DVector::zeros(grad.len()), rho: 1.0 };
    }
    let rho = 0.5 * q.sqrt() / n;
    GramDirection { coeffs: grad * (-1.0 / (2.0 * rho * n)), rho }
}

/// Series version of [`greedy_direction`] with `features[(i, v)] =
/// lambda_v phi_v(X_i)`: `a = Phi^T g / n`, `rho = |a| / 2`, `c = -a / |a|`.
pub fn greedy_direction_series(grad: &DVector<f64>, features: &DMatrix<f64>) -> Result<SeriesDirection> {
    if features.nrows() != grad.len() {
        return Err(Error::Dimension(format!(
            "{} gradient entries for {} feature rows",
            grad.len(),
            features.nrows()
        )));
    }
    if grad.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("loss gradient".into()));
    }
    let n = grad.len() as f64;
    let a = features.tr_mul(grad) / n;
    let scale = features.row_iter().fold(0.0f64, |m, r| m.max(r.norm_squared()));
    let norm = a.norm();
    if norm * norm * n * n <= ZERO_FORM * grad.norm_squared() * scale {
        return Ok(SeriesDirection { coeffs: DVector::zeros(features.ncols()), rho: 1.0 });
    }
    Ok(SeriesDirection { coeffs: a / -norm, rho: 0.5 * norm })
}

fn mean_loss(loss: &dyn Loss, y: &DVector<f64>, f: impl Fn(usize) -> f64) -> f64 {
    y.iter().enumerate().map(|(i, &yi)| loss.value(yi, f(i))).sum::<f64>() / y.len() as f64
}

/// Minimises `tau -> P_n l((1 - tau) F + tau G)` over `[0, 1]` by golden
/// section down to width `tol`, then keeps the better of that point and the
/// two endpoints.
pub fn line_search(
    loss: &dyn Loss,
    y: &DVector<f64>,
    prev: &DVector<f64>,
    candidate: &DVector<f64>,
    tol: f64,
) -> Result<f64> {
    if prev.len() != y.len() || candidate.len() != y.len() {
        return Err(Error::Dimension("line search vectors differ in length".into()));
    }
    if !(tol > 0.0) {
        return Err(Error::Domain(format!("line search tolerance must be positive, got {tol}")));
    }
    let phi = |tau: f64| mean_loss(loss, y, |i| (1.0 - tau) * prev[i] + tau * candidate[i]);
    let g = 0.5 * (5f64.sqrt() - 1.0);
    let (mut a, mut b) = (0.0f64, 1.0f64);
    let mut c = b - g * (b - a);
    let mut d = a + g * (b - a);
    let (mut fc, mut fd) = (phi(c), phi(d));
    while b - a > tol {
        if fc <= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - g * (b - a);
            fc = phi(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + g * (b - a);
            fd = phi(d);
        }
    }
    let mid = 0.5 * (a + b);
    let mut best = (mid, phi(mid));
    for end in [0.0, 1.0] {
        let v = phi(end);
        if v < best.1 {
            best = (end, v);
        }
    }
    Ok(best.0)
}

enum Design {
    Gram(Vec<DMatrix<f64>>),
    Series(Vec<DMatrix<f64>>),
}

/// Frank-Wolfe iterations from `F_0 = 0`.
pub fn greedy_fit(data: &Dataset, loss: &dyn Loss, basis: &GreedyBasis, config: &FitConfig) -> Result<FittedModel> {
    if !loss.smooth() {
        return Err(Error::NonSmooth { loss: loss.name(), order: 2 });
    }
    for &y in data.y.iter() {
        loss.check_response(y)?;
    }
    if basis.is_empty() {
        return Err(Error::InvalidArgument("greedy fit needs at least one base kernel".into()));
    }
    let budget = config.budget.resolve(data)?;
    let n = data.n();
    let k_count = basis.len();

    let design = match basis {
        GreedyBasis::Gram(kernels) => Design::Gram(
            kernels
                .iter()
                .map(|k| gram_matrix_with(k, &data.x, config.exec))
                .collect::<Result<_>>()?,
        ),
        GreedyBasis::Series(series) => Design::Series(
            series
                .iter()
                .map(|(coord, s)| {
                    if *coord >= data.dim() {
                        return Err(Error::Dimension(format!(
                            "series on covariate {coord} but data has {}",
                            data.dim()
                        )));
                    }
                    feature_matrix(s, &data.x.column(*coord), s.len())
                })
                .collect::<Result<_>>()?,
        ),
    };
    // the joint kernel of the HK ball
    let joint = match (&design, config.norm) {
        (Design::Gram(g), NormKind::Hk) => {
            let mut sum = DMatrix::zeros(n, n);
            for gk in g {
                sum += gk;
            }
            Some(sum)
        }
        (Design::Series(p), NormKind::Hk) => {
            let cols: usize = p.iter().map(|m| m.ncols()).sum();
            let mut all = DMatrix::zeros(n, cols);
            let mut at = 0;
            for m in p {
                all.columns_mut(at, m.ncols()).copy_from(m);
                at += m.ncols();
            }
            Some(all)
        }
        _ => None,
    };

    // coefficient state: one block per component (HK on the Gram path keeps a
    // single shared block)
    let mut coeffs: Vec<DVector<f64>> = match (&design, config.norm) {
        (Design::Gram(_), NormKind::Hk) => vec![DVector::zeros(n)],
        (Design::Gram(_), NormKind::Lk) => vec![DVector::zeros(n); k_count],
        (Design::Series(p), NormKind::Hk) => vec![DVector::zeros(p.iter().map(|m| m.ncols()).sum())],
        (Design::Series(p), NormKind::Lk) => p.iter().map(|m| DVector::zeros(m.ncols())).collect(),
    };

    let mut fitted = DVector::zeros(n);
    let mut grad = DVector::zeros(n);
    let mut trace = Vec::with_capacity(config.iterations);
    for m in 1..=config.iterations {
        for i in 0..n {
            grad[i] = loss.deriv(1, data.y[i], fitted[i])?;
        }
        // (component, coefficient direction, values at the data)
        let (sel, dir, values) = match (&design, &joint) {
            (Design::Gram(_), Some(g)) => {
                let cg = gram_times(&grad, g)?;
                let d = direction_from_form(&grad, &cg, gram_scale(g));
                let values = g * &d.coeffs;
                (0, d.coeffs, values)
            }
            (Design::Gram(gs), None) => {
                let mut best: Option<(usize, GramDirection, &DMatrix<f64>)> = None;
                for (k, g) in gs.iter().enumerate() {
                    let cg = gram_times(&grad, g)?;
                    let d = direction_from_form(&grad, &cg, gram_scale(g));
                    if best.as_ref().is_none_or(|b| d.rho > b.1.rho) {
                        best = Some((k, d, g));
                    }
                }
                let (k, d, g) = best.expect("non-empty basis");
                let values = g * &d.coeffs;
                (k, d.coeffs, values)
            }
            (Design::Series(_), Some(phi)) => {
                let d = greedy_direction_series(&grad, phi)?;
                let values = phi * &d.coeffs;
                (0, d.coeffs, values)
            }
            (Design::Series(ps), None) => {
                let mut best: Option<(usize, SeriesDirection)> = None;
                for (k, phi) in ps.iter().enumerate() {
                    let d = greedy_direction_series(&grad, phi)?;
                    if best.as_ref().is_none_or(|b| d.rho > b.1.rho) {
                        best = Some((k, d));
                    }
                }
                let (k, d) = best.expect("non-empty basis");
                let values = &ps[k] * &d.coeffs;
                (k, d.coeffs, values)
            }
        };
        let candidate = values * budget;
        let tau = match config.step {
            StepRule::LineSearch => line_search(loss, &data.y, &fitted, &candidate, config.line_search_tol)?,
            StepRule::TwoOverMPlusTwo => 2.0 / (m as f64 + 2.0),
            StepRule::OneOverM => 1.0 / m as f64,
        };
        fitted = &fitted * (1.0 - tau) + &candidate * tau;
        for c in coeffs.iter_mut() {
            *c *= 1.0 - tau;
        }
        coeffs[sel] += dir * (tau * budget);
        if fitted.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("fitted values at iteration {m}")));
        }
        let risk = mean_loss(loss, &data.y, |i| fitted[i]);
        trace.push(IterationRecord { iteration: m, component: sel, tau, risk });
    }

    // per-component norms |f_k|
    let norms: Vec<f64> = match (&design, config.norm) {
        (Design::Gram(gs), NormKind::Hk) => gs.iter().map(|g| quad(&coeffs[0], g)).collect(),
        (Design::Gram(gs), NormKind::Lk) => gs.iter().zip(&coeffs).map(|(g, a)| quad(a, g)).collect(),
        (Design::Series(ps), NormKind::Hk) => {
            let mut at = 0;
            ps.iter()
                .map(|p| {
                    let v = coeffs[0].rows(at, p.ncols()).norm();
                    at += p.ncols();
                    v
                })
                .collect()
        }
        (Design::Series(_), NormKind::Lk) => coeffs.iter().map(|c| c.norm()).collect(),
    };
    let norm_hk = norms.iter().map(|v| v * v).sum::<f64>().sqrt();
    let norm_lk = norms.iter().sum();

    let representation = match basis {
        GreedyBasis::Gram(kernels) => Representation::Representer {
            anchors: data.x.clone(),
            components: kernels
                .iter()
                .enumerate()
                .map(|(k, kernel)| RepresenterComponent {
                    kernel: kernel.clone(),
                    coeffs: coeffs[if coeffs.len() == 1 { 0 } else { k }].clone(),
                })
                .collect(),
        },
        GreedyBasis::Series(series) => {
            let mut at = 0;
            Representation::Series {
                components: series
                    .iter()
                    .enumerate()
                    .map(|(k, (coord, s))| {
                        let c = if coeffs.len() == 1 {
                            let v = coeffs[0].rows(at, s.len()).iter().copied().collect();
                            at += s.len();
                            v
                        } else {
                            coeffs[k].iter().copied().collect()
                        };
                        SeriesComponent { coord: *coord, kernel: s.clone(), coeffs: c }
                    })
                    .collect(),
            }
        }
    };
    Ok(FittedModel { representation, norm_hk, norm_lk, budget, ridge_rho: 0.0, fitted, trace })
}

fn quad(a: &DVector<f64>, g: &DMatrix<f64>) -> f64 {
    a.dot(&(g * a)).max(0.0).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Covariates;
    use crate::estimator::BudgetRule;
    use crate::kernel::gram_matrix;
    use crate::loss::LossKind;
    use approx::assert_relative_eq;

    #[test]
    fn zero_gradient_gives_unit_multiplier() {
        let g = DMatrix::identity(3, 3);
        let d = greedy_direction(&DVector::zeros(3), &g).unwrap();
        assert_eq!(d.rho, 1.0);
        assert!(d.coeffs.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn cancelling_gradient_under_linear_kernel() {
        let x = Covariates::from_scalars(&[1.0, 1.0]);
        let gram = gram_matrix(&Kernel::linear(1.0).unwrap(), &x).unwrap();
        let d = greedy_direction(&DVector::from_vec(vec![1.0, -1.0]), &gram).unwrap();
        assert_eq!(d.rho, 1.0);
        assert!(d.coeffs.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn multiplier_matches_double_sum() {
        let x = Covariates::from_scalars(&[0.3, -1.2, 0.8]);
        let k = Kernel::gaussian(0.75).unwrap();
        let gram = gram_matrix(&k, &x).unwrap();
        let g = DVector::from_vec(vec![0.4, -0.9, 1.7]);
        let n = 3.0;
        let mut q = 0.0;
        for i in 0..3 {
            for j in 0..3 {
                q += (g[i] / n) * (g[j] / n) * k.eval(x.row(i), x.row(j)).unwrap();
            }
        }
        let d = greedy_direction(&g, &gram).unwrap();
        assert_relative_eq!(d.rho, (0.25 * q).sqrt(), max_relative = 1e-13);
        assert_relative_eq!(d.coeffs.dot(&(&gram * &d.coeffs)), 1.0, max_relative = 1e-10);
    }

    #[test]
    fn single_feature_direction() {
        let phi = DMatrix::from_column_slice(3, 1, &[1.0, 2.0, -0.5]);
        let g = DVector::from_vec(vec![1.0, 1.0, 1.0]);
        let d = greedy_direction_series(&g, &phi).unwrap();
        assert_eq!(d.coeffs[0], -1.0);
        assert_relative_eq!(d.rho, 0.5 * 2.5 / 3.0, max_relative = 1e-15);
    }

    #[test]
    fn all_zero_features() {
        let phi = DMatrix::zeros(4, 3);
        let d = greedy_direction_series(&DVector::from_element(4, 1.0), &phi).unwrap();
        assert_eq!(d.rho, 1.0);
        assert!(d.coeffs.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn line_search_finds_the_quadratic_vertex() {
        // phi(tau) = mean((y - (1 - tau) F - tau G)^2) is quadratic in tau
        let y: DVector<f64> = DVector::from_vec(vec![1.0, 2.0, 0.5]);
        let f: DVector<f64> = DVector::from_vec(vec![0.0, 0.0, 0.0]);
        let g = DVector::from_vec(vec![2.0, 3.0, 1.0]);
        let d = &g - &f;
        let r = &y - &f;
        let vertex: f64 = (r.dot(&d) / d.dot(&d)).clamp(0.0, 1.0);
        let tau = line_search(&LossKind::Square, &y, &f, &g, 1e-9).unwrap();
        assert_relative_eq!(tau, vertex, epsilon = 1e-8);
    }

    #[test]
    fn line_search_clips_to_the_boundary() {
        let y = DVector::from_vec(vec![10.0, 10.0]);
        let f = DVector::zeros(2);
        let g = DVector::from_vec(vec![1.0, 1.0]);
        assert_eq!(line_search(&LossKind::Square, &y, &f, &g, 1e-6).unwrap(), 1.0);
        assert_eq!(line_search(&LossKind::Square, &DVector::zeros(2), &f, &g, 1e-6).unwrap(), 0.0);
    }

    fn toy() -> Dataset {
        let x = Covariates::from_rows(&[vec![0.1, -0.4], vec![0.7, 0.2], vec![-0.5, 0.9], vec![0.3, 0.3]]).unwrap();
        Dataset::new(DVector::from_vec(vec![0.2, 1.1, -0.3, 0.5]), x).unwrap()
    }

    #[test]
    fn first_step_of_the_harmonic_rule_lands_on_the_boundary() {
        let data = toy();
        let base = Kernel::from(SeriesKernel::polynomial(3, 2.2).unwrap());
        let basis = GreedyBasis::Gram(vec![
            base.clone().on(crate::kernel::Selector::coord(0)),
            base.on(crate::kernel::Selector::coord(1)),
        ]);
        let config = FitConfig {
            budget: BudgetRule::Fixed(2.0),
            iterations: 1,
            step: StepRule::OneOverM,
            ..FitConfig::default()
        };
        let model = greedy_fit(&data, &LossKind::Square, &basis, &config).unwrap();
        assert_eq!(model.trace[0].tau, 1.0);
        assert_relative_eq!(model.norm_lk, 2.0, max_relative = 1e-10);
    }

    #[test]
    fn zero_iterations_is_the_zero_function() {
        let data = toy();
        let basis = GreedyBasis::from_kernel(&Kernel::linear(1.0).unwrap(), true);
        let config = FitConfig { budget: BudgetRule::Fixed(1.0), iterations: 0, ..FitConfig::default() };
        let model = greedy_fit(&data, &LossKind::Square, &basis, &config).unwrap();
        assert!(model.fitted.iter().all(|&v| v == 0.0));
        assert_eq!(model.norm_hk, 0.0);
    }

    #[test]
    fn absolute_loss_is_rejected() {
        let data = toy();
        let basis = GreedyBasis::from_kernel(&Kernel::linear(1.0).unwrap(), true);
        assert!(matches!(
            greedy_fit(&data, &LossKind::Absolute, &basis, &FitConfig::default()),
            Err(Error::NonSmooth { .. })
        ));
    }
}
