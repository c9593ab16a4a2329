use nalgebra::DVector;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use rkhs_spectest::hypothesis::*;
use rkhs_spectest::simulation::*;
use rkhs_spectest::{Dataset, LossKind};

fn lin3_spec(seed: u64) -> TestSpec {
    let setup = null_kernel_for(Hypothesis::Lin3, 10, &SetupOptions::default()).unwrap();
    let mut spec = TestSpec::new(setup.split.r0, setup.instruments, setup.projection);
    spec.fit = setup.default_fit;
    spec.null_draws = 2000;
    spec.seed = seed;
    spec
}

fn lin3_data(n: usize, seed: u64) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    DgpSpec::new(Design::Lin3, n, 0.0, 1.0).generate(&mut rng).unwrap()
}

#[test]
fn zero_response_gives_zero_statistic_and_unit_p_value() {
    let data = lin3_data(80, 1);
    let data = Dataset::new(DVector::zeros(80), data.x).unwrap();
    let mut spec = lin3_spec(3);
    // the default budget scales with sd(Y), which is zero here
    spec.fit.budget = rkhs_spectest::estimator::BudgetRule::Fixed(1.0);
    let res = run_test(&data, &LossKind::Square, &spec).unwrap();
    assert_eq!(res.statistic, 0.0);
    assert_eq!(res.p_value, 1.0);
    assert_eq!(res.naive.p_value, 1.0);
}

#[test]
fn result_is_reproducible_and_serialisable() {
    let data = lin3_data(100, 2);
    let a = run_test(&data, &LossKind::Square, &lin3_spec(9)).unwrap();
    let b = run_test(&data, &LossKind::Square, &lin3_spec(9)).unwrap();
    assert_eq!(a.statistic, b.statistic);
    assert_eq!(a.p_value, b.p_value);
    assert_eq!(a.instruments, 90);
    assert_eq!(a.n, 100);
    assert!((a.proj_rho - 100f64.powf(-0.4)).abs() < 1e-15);
    let json = serde_json::to_value(&a).unwrap();
    for key in ["statistic", "spectrum", "p_value", "naive", "scaling_note", "seed"] {
        assert!(json.get(key).is_some(), "missing {key}");
    }
    assert!(json.get("null_draws").is_none());
}

#[test]
fn alternative_is_detected() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let data = DgpSpec::new(Design::LinAll, 1000, 0.0, 1.0).generate(&mut rng).unwrap();
    let res = run_test(&data, &LossKind::Square, &lin3_spec(5)).unwrap();
    assert!(res.p_value < 0.01, "p = {}", res.p_value);
}

#[test]
fn literal_instrument_set_has_27_columns() {
    let opts = SetupOptions { coverage: InstrumentCoverage::NullCovariatesOnly, ..SetupOptions::default() };
    let setup = null_kernel_for(Hypothesis::Lin3, 10, &opts).unwrap();
    let mut spec = TestSpec::new(setup.split.r0, setup.instruments, setup.projection);
    spec.fit = setup.default_fit;
    spec.null_draws = 200;
    let res = run_test(&lin3_data(60, 7), &LossKind::Square, &spec).unwrap();
    assert_eq!(res.instruments, 27);
}

#[test]
fn bad_inputs_are_rejected() {
    let data = lin3_data(50, 8);
    let mut spec = lin3_spec(1);
    spec.null_draws = 0;
    assert!(run_test(&data, &LossKind::Square, &spec).is_err());
    let mut spec = lin3_spec(1);
    spec.proj_rho = ProjRho::Fixed(-1.0);
    assert!(run_test(&data, &LossKind::Square, &spec).is_err());
    assert!(run_test(&data, &LossKind::Absolute, &lin3_spec(1)).is_err());
}
