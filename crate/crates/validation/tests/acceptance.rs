//! Acceptance criteria. Each test prints one `PASS`/`FAIL` line; tolerances
//! and seeds are pinned below.

// the oracle is written index by index on purpose
#![allow(clippy::needless_range_loop)]

use std::io::Write;

use nalgebra::DVector;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use rkhs_spectest::estimator::*;
use rkhs_spectest::hypothesis::*;
use rkhs_spectest::kernel::{feature_matrix, gram_matrix, Selector};
use rkhs_spectest::linalg::SymEigen;
use rkhs_spectest::loss::{loss_deriv, loss_value};
use rkhs_spectest::simulation::*;
use rkhs_spectest::{Dataset, Kernel, LossKind, SeriesKernel};

const SEED: u64 = 20_240_601;

const C1_TOL: f64 = 0.03;
const C2_MIN: f64 = 0.98;
const C2_FALLBACK_MIN: f64 = 0.95;
const C3_NAIVE_MIN: f64 = 0.15;
const C3_PI_TOL: f64 = 0.04;
const C4_PI_MIN: f64 = 0.95;
const C4_NAIVE_MAX: f64 = 0.10;
const C7_TOL: f64 = 1e-10;

// Written to the stdout handle: `println!` is captured for passing tests.
fn report(id: u32, ok: bool, detail: String) {
    let mut out = std::io::stdout().lock();
    let _ = writeln!(out, "criterion {id}: {} | {detail}", if ok { "PASS" } else { "FAIL" });
}

fn table(dgp: DgpSpec, null: Hypothesis, replicates: usize, setup: SetupOptions) -> RejectionRow {
    let mut config = McConfig::new(dgp, null, replicates);
    config.seed = SEED;
    config.setup = setup;
    let t = run_monte_carlo(&config).unwrap();
    assert!(t.failures.is_empty(), "replicate failures: {:?}", t.failures);
    t.rows[0].clone()
}

#[test]
fn criterion_1_lin3_size() {
    let reference = [(0.0, 0.06, 0.03), (0.75, 0.05, 0.02)];
    let mut ok = true;
    let mut detail = Vec::new();
    for (rho, pi, naive) in reference {
        let mut dgp = DgpSpec::new(Design::Lin3, 100, rho, 1.0);
        dgp.correlation = CorrelationShape::Equi;
        let row = table(dgp, Hypothesis::Lin3, 500, SetupOptions::default());
        ok &= (row.freq_pi - pi).abs() <= C1_TOL && (row.freq_no_pi - naive).abs() <= C1_TOL;
        detail.push(format!("rho={rho}: pi {:.3} (ref {pi}), no-pi {:.3} (ref {naive})", row.freq_pi, row.freq_no_pi));
    }
    // the literal instrument set (null covariates only, R = 27), for information
    let literal = SetupOptions { coverage: InstrumentCoverage::NullCovariatesOnly, ..SetupOptions::default() };
    let mut dgp = DgpSpec::new(Design::Lin3, 100, 0.0, 1.0);
    dgp.correlation = CorrelationShape::Equi;
    let row = table(dgp, Hypothesis::Lin3, 500, literal);
    detail.push(format!("[R=27 set, rho=0: pi {:.3}, no-pi {:.3}]", row.freq_pi, row.freq_no_pi));
    report(1, ok, detail.join("; "));
    assert!(ok);
}

#[test]
fn criterion_2_lin3_power() {
    let row = table(DgpSpec::new(Design::LinAll, 1000, 0.0, 1.0), Hypothesis::Lin3, 200, SetupOptions::default());
    let small = table(DgpSpec::new(Design::LinAll, 400, 0.0, 1.0), Hypothesis::Lin3, 200, SetupOptions::default());
    let ok = row.freq_pi >= C2_MIN
        && row.freq_no_pi >= C2_MIN
        && small.freq_pi >= C2_FALLBACK_MIN
        && small.freq_no_pi >= C2_FALLBACK_MIN;
    report(
        2,
        ok,
        format!(
            "n=1000: pi {:.3}, no-pi {:.3} (need >= {C2_MIN}); n=400: pi {:.3}, no-pi {:.3} (need >= {C2_FALLBACK_MIN})",
            row.freq_pi, row.freq_no_pi, small.freq_pi, small.freq_no_pi
        ),
    );
    assert!(ok);
}

#[test]
fn criterion_3_nuisance_distortion() {
    let row = table(DgpSpec::new(Design::LinAll, 1000, 0.0, 1.0), Hypothesis::LinAll, 200, SetupOptions::default());
    let ok = row.freq_no_pi >= C3_NAIVE_MIN && (row.freq_pi - 0.05).abs() <= C3_PI_TOL;
    report(
        3,
        ok,
        format!(
            "no-pi {:.3} (need >= {C3_NAIVE_MIN}, ref 0.23), pi {:.3} (need 0.05 +- {C3_PI_TOL})",
            row.freq_no_pi, row.freq_pi
        ),
    );
    assert!(ok);
}

#[test]
fn criterion_4_bivariate_low_snr() {
    let setup = SetupOptions { sections: Some(200), ..SetupOptions::default() };
    let row = table(DgpSpec::new(Design::Bivariate, 1000, 0.0, 0.2), Hypothesis::BivLinAll, 100, setup);
    let ok = row.freq_pi >= C4_PI_MIN && row.freq_no_pi <= C4_NAIVE_MAX;
    report(
        4,
        ok,
        format!(
            "pi {:.3} (need >= {C4_PI_MIN}), no-pi {:.3} (need <= {C4_NAIVE_MAX})",
            row.freq_pi, row.freq_no_pi
        ),
    );
    assert!(ok);
}

fn poly_additive(k: usize) -> Kernel {
    let base = Kernel::from(SeriesKernel::polynomial(10, 2.2).unwrap());
    Kernel::sum((0..k).map(|c| base.clone().on(Selector::coord(c))))
}

#[test]
fn criterion_5_frank_wolfe_rate() {
    let mut rng = ChaCha8Rng::seed_from_u64(SEED);
    let x = gen_covariates(200, 3, 0.0, CorrelationShape::Geometric, Truncation::Clip, &mut rng).unwrap();
    let y = DVector::from_iterator(
        200,
        x.rows().map(|r| {
            let e: f64 = StandardNormal.sample(&mut rng);
            r[0] + r[1] * r[1] - 0.5 * r[2].powi(3) + e
        }),
    );
    let data = Dataset::new(y, x).unwrap();
    let kernel = poly_additive(3);
    let b = 1.0;

    let gram = gram_matrix(&kernel, &data.x).unwrap();
    let eig = SymEigen::new(&gram).unwrap();
    let oracle = fit_constrained_ridge(&gram, &eig, &data.y, b).unwrap();
    assert!(oracle.rho > 0.0, "budget must bind");
    let risk_at = |f: &DVector<f64>| (&data.y - f).norm_squared() / 200.0;
    let opt = risk_at(&oracle.fitted);
    let h0 = risk_at(&DVector::zeros(200)) - opt;
    let cf = 8.0 * b * b * gram.diagonal().mean();

    let run = |step: StepRule| {
        let config = FitConfig {
            budget: BudgetRule::Fixed(b),
            norm: NormKind::Hk,
            iterations: 500,
            step,
            ..FitConfig::default()
        };
        fit(&data, &LossKind::Square, &kernel, &config).unwrap().trace
    };
    let mut worst_ls = f64::NEG_INFINITY;
    let mut worst_h = f64::NEG_INFINITY;
    let mut min_gap = f64::INFINITY;
    for rec in run(StepRule::LineSearch).iter().filter(|r| r.iteration >= 50) {
        let eps = rec.risk - opt;
        min_gap = min_gap.min(eps);
        worst_ls = worst_ls.max(eps * rec.iteration as f64);
    }
    for rec in run(StepRule::OneOverM).iter().filter(|r| r.iteration >= 50) {
        let m = rec.iteration as f64;
        let eps = rec.risk - opt;
        min_gap = min_gap.min(eps);
        worst_h = worst_h.max(eps * m / (1.0 + m).ln());
    }
    let ok = worst_ls <= 2.0 * cf + h0 && worst_h <= cf && min_gap >= -1e-8;
    report(
        5,
        ok,
        format!(
            "max eps*m {worst_ls:.4} <= {:.4} (line search); max eps*m/ln(1+m) {worst_h:.4} <= {cf:.4} (1/m); min gap {min_gap:.2e}",
            2.0 * cf + h0
        ),
    );
    assert!(ok);
}

fn normals(n: usize, rng: &mut ChaCha8Rng) -> DVector<f64> {
    DVector::from_fn(n, |_, _| StandardNormal.sample(rng))
}

#[test]
fn criterion_6_property_suite() {
    let mut rng = ChaCha8Rng::seed_from_u64(SEED);
    let mut checks: Vec<(&str, bool)> = Vec::new();
    let x = gen_covariates(40, 3, 0.3, CorrelationShape::Geometric, Truncation::Clip, &mut rng).unwrap();
    let y = normals(40, &mut rng);

    let c = gram_matrix(&Kernel::gaussian(0.75).unwrap(), &x).unwrap();
    let a = fit_ridge(&c, &y, 0.1, ZeroPenalty::Strict).unwrap();
    checks.push(("ridge normal equations", (&c * &a + &a * 0.1 - &y).norm() <= 1e-8 * y.norm()));

    let cp = gram_matrix(&poly_additive(3), &x).unwrap();
    let eig = SymEigen::new(&cp).unwrap();
    let free = budget_norm_sq(&eig, &eig.coords(&y), 0.0).sqrt();
    let fit_b = fit_constrained_ridge(&cp, &eig, &y, 0.4 * free).unwrap();
    checks.push(("binding budget", (fit_b.norm - 0.4 * free).abs() <= 1e-6 * 0.4 * free));

    let c0 = gram_matrix(&Kernel::linear(1.0).unwrap(), &x).unwrap();
    let h = project_instruments(&c0, &ProjectionWeights::identity(40), &c, 0.0).unwrap();
    let orth = h.column_iter().all(|col| (c0.transpose() * col).norm() <= 1e-8 * col.norm().max(1e-300));
    checks.push(("orthogonality at rho=0, S=I", orth));

    let raw_min = cp.clone().symmetric_eigen().eigenvalues.min();
    checks.push(("Gram PSD", raw_min >= -1e-10 * eig.max_value()));

    let series = SeriesKernel::polynomial(10, 2.2).unwrap();
    let pts: Vec<f64> = x.column(0)[..20].to_vec();
    let phi = feature_matrix(&series, &pts, 10).unwrap();
    let g1 = gram_matrix(&Kernel::Series(series), &rkhs_spectest::Covariates::from_scalars(&pts)).unwrap();
    let grad = normals(20, &mut rng);
    let da = greedy_direction(&grad, &g1).unwrap();
    let ds = greedy_direction_series(&grad, &phi).unwrap();
    let agree = (da.rho - ds.rho).abs() <= 1e-10 && (&g1 * &da.coeffs - &phi * &ds.coeffs).amax() <= 1e-10;
    checks.push(("series/Gram direction", agree));

    let hstep = 1e-4;
    let fd_ok = [
        (LossKind::Square, 0.5),
        (LossKind::RescaledSquare, 0.5),
        (LossKind::PoissonCount, 2.0),
        (LossKind::Logistic, 1.0),
        (LossKind::DurationHazard, 1.5),
    ]
    .iter()
    .all(|(loss, yv)| {
        [-1.0, 0.0, 0.7].iter().all(|&t| {
            (1..=3u8).all(|order| {
                let lower = |t: f64| {
                    if order == 1 {
                        loss_value(loss, *yv, t).unwrap()
                    } else {
                        loss_deriv(loss, order - 1, *yv, t).unwrap()
                    }
                };
                let fd = (lower(t + hstep) - lower(t - hstep)) / (2.0 * hstep);
                (loss_deriv(loss, order, *yv, t).unwrap() - fd).abs() <= 1e-6
            })
        })
    });
    checks.push(("loss finite differences", fd_ok));

    let mut draws = simulate_null(&[0.5, 0.5], 100_000, SEED).unwrap();
    draws.sort_by(f64::total_cmp);
    let m = draws.len() as f64;
    let ks = draws
        .iter()
        .enumerate()
        .map(|(i, &v)| {
            let f = 1.0 - (-v).exp();
            (f - i as f64 / m).abs().max(((i + 1) as f64 / m - f).abs())
        })
        .fold(0.0, f64::max);
    checks.push(("KS vs chi2_2/2 at 1%", ks * m.sqrt() < 1.628));

    let p_ok = [-1.0, 0.0, 1.0, 1e6].iter().all(|&s| {
        let p = p_value(s, &draws[..1000]).unwrap();
        p > 0.0 && p <= 1.0
    });
    checks.push(("p-value bounds", p_ok));

    let mut config = McConfig::new(DgpSpec::new(Design::Lin3, 60, 0.0, 1.0), Hypothesis::Lin3, 4);
    config.null_draws = 200;
    config.seed = SEED;
    let first = run_monte_carlo(&config).unwrap();
    let second = run_monte_carlo(&config).unwrap();
    checks.push(("determinism", first.outcomes == second.outcomes));

    let ok = checks.iter().all(|(_, c)| *c);
    let failed: Vec<&str> = checks.iter().filter(|(_, c)| !c).map(|(n, _)| *n).collect();
    report(6, ok, format!("{} checks, failed: {failed:?}", checks.len()));
    assert!(ok);
}

/// Gaussian elimination with partial pivoting, one right-hand side per column.
fn lu_solve(a: &[Vec<f64>], b: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let n = a.len();
    let mut m: Vec<Vec<f64>> = a.iter().zip(b).map(|(r, s)| r.iter().chain(s).copied().collect()).collect();
    let w = m[0].len();
    for col in 0..n {
        let piv = (col..n).max_by(|&i, &j| m[i][col].abs().total_cmp(&m[j][col].abs())).unwrap();
        m.swap(col, piv);
        for row in col + 1..n {
            let f = m[row][col] / m[col][col];
            for j in col..w {
                m[row][j] -= f * m[col][j];
            }
        }
    }
    let mut x = vec![vec![0.0; w - n]; n];
    for row in (0..n).rev() {
        for j in 0..w - n {
            let s: f64 = (row + 1..n).map(|k| m[row][k] * x[k][j]).sum();
            x[row][j] = (m[row][n + j] - s) / m[row][row];
        }
    }
    x
}

/// Cyclic Jacobi eigenvalues of a symmetric matrix.
fn jacobi_eigenvalues(mut a: Vec<Vec<f64>>) -> Vec<f64> {
    let n = a.len();
    for _ in 0..100 {
        let off: f64 = (0..n).flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j))).map(|(i, j)| a[i][j] * a[i][j]).sum();
        let total: f64 = a.iter().flatten().map(|v| v * v).sum();
        if off <= 1e-30 * total {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                if a[p][q] == 0.0 {
                    continue;
                }
                let theta = (a[q][q] - a[p][p]) / (2.0 * a[p][q]);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let (akp, akq) = (a[k][p], a[k][q]);
                    a[k][p] = c * akp - s * akq;
                    a[k][q] = s * akp + c * akq;
                }
                for k in 0..n {
                    let (apk, aqk) = (a[p][k], a[q][k]);
                    a[p][k] = c * apk - s * aqk;
                    a[q][k] = s * apk + c * aqk;
                }
            }
        }
    }
    let mut v: Vec<f64> = (0..n).map(|i| a[i][i].max(0.0)).collect();
    v.sort_by(|a, b| b.total_cmp(a));
    v
}

#[test]
fn criterion_7_oracle_equivalence() {
    let n = 50;
    let mut rng = ChaCha8Rng::seed_from_u64(SEED);
    let data = DgpSpec::new(Design::Lin3, n, 0.0, 1.0).generate(&mut rng).unwrap();
    let xs: Vec<Vec<f64>> = data.x.rows().map(|r| r.to_vec()).collect();
    let y: Vec<f64> = data.y.iter().copied().collect();

    // restricted fit on the linear null: fitted X (X'X + rho I)^-1 X'y, norm |beta|
    let xtx: Vec<Vec<f64>> = (0..3).map(|a| (0..3).map(|b| xs.iter().map(|r| r[a] * r[b]).sum()).collect()).collect();
    let xty: Vec<Vec<f64>> = (0..3).map(|a| vec![xs.iter().zip(&y).map(|(r, yi)| r[a] * yi).sum()]).collect();
    let beta_at = |rho: f64| -> Vec<f64> {
        let m: Vec<Vec<f64>> =
            (0..3).map(|a| (0..3).map(|b| xtx[a][b] + if a == b { rho } else { 0.0 }).collect()).collect();
        lu_solve(&m, &xty).into_iter().map(|r| r[0]).collect()
    };
    let norm = |b: &[f64]| b.iter().map(|v| v * v).sum::<f64>().sqrt();
    let budget = 0.5 * norm(&beta_at(0.0));
    let (mut lo, mut hi) = (0.0f64, 1.0f64);
    while norm(&beta_at(hi)) > budget {
        hi *= 2.0;
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if norm(&beta_at(mid)) > budget {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let beta = beta_at(0.5 * (lo + hi));
    let e0: Vec<f64> = xs
        .iter()
        .zip(&y)
        .map(|(r, yi)| -(yi - (0..3).map(|k| r[k] * beta[k]).sum::<f64>()))
        .collect();

    // instruments v^-1.1 x_k^v, v = 2..10 on every covariate
    let raw: Vec<Vec<f64>> = xs
        .iter()
        .map(|r| (0..10).flat_map(|k| (2..=10).map(move |v| (v as f64).powf(-1.1) * r[k].powi(v))).collect())
        .collect();
    let nr = raw[0].len();
    let rho = (n as f64).powf(-0.4);
    let c0: Vec<Vec<f64>> = xs.iter().map(|a| xs.iter().map(|b| (0..3).map(|k| a[k] * b[k]).sum()).collect()).collect();
    let shifted: Vec<Vec<f64>> =
        (0..n).map(|i| (0..n).map(|j| c0[i][j] + if i == j { rho } else { 0.0 }).collect()).collect();
    let bcoef = lu_solve(&shifted, &raw);
    let hproj: Vec<Vec<f64>> = (0..n)
        .map(|i| (0..nr).map(|r| raw[i][r] - (0..n).map(|j| c0[i][j] * bcoef[j][r]).sum::<f64>()).collect())
        .collect();

    let nf = n as f64;
    let stat: f64 = (0..nr)
        .map(|r| {
            let m: f64 = (0..n).map(|i| e0[i] * hproj[i][r]).sum();
            m * m / nf
        })
        .sum::<f64>()
        / nr as f64;
    let s2: f64 = e0.iter().map(|v| v * v).sum::<f64>() / nf;
    let cov: Vec<Vec<f64>> = (0..nr)
        .map(|a| (0..nr).map(|b| s2 * (0..n).map(|i| hproj[i][a] * hproj[i][b]).sum::<f64>() / nf / nr as f64).collect())
        .collect();
    let spectrum = jacobi_eigenvalues(cov);

    let setup = null_kernel_for(Hypothesis::Lin3, 10, &SetupOptions::default()).unwrap();
    let mut spec = TestSpec::new(setup.split.r0, setup.instruments, setup.projection);
    spec.fit = FitConfig::ridge(BudgetRule::Fixed(budget));
    spec.null_draws = 100;
    spec.seed = SEED;
    let res = run_test(&data, &LossKind::RescaledSquare, &spec).unwrap();

    let scale = spectrum[0].max(1.0);
    let stat_err = (res.statistic - stat).abs() / stat.abs().max(1.0);
    let eig_err = res
        .spectrum
        .iter()
        .zip(&spectrum)
        .map(|(a, b)| (a - b).abs() / scale)
        .fold(0.0, f64::max);
    let ok = res.spectrum.len() == spectrum.len() && stat_err <= C7_TOL && eig_err <= C7_TOL;
    report(
        7,
        ok,
        format!("statistic {:.6} vs oracle {stat:.6} (err {stat_err:.1e}); max eigenvalue err {eig_err:.1e}; tol {C7_TOL:e}", res.statistic),
    );
    assert!(ok);
}
