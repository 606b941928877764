use dvqr_core::bicop::Criterion;
use dvqr_core::dvine::{DVineRegModel, FitConfig, Mode};
use dvqr_core::margins::{ColumnKind, PseudoObs};
use dvqr_core::npcop::JitterSpec;
use dvqr_core::simkit::{build_dataset_with_sigma, GFunction, Scenario};

fn dataset(g: GFunction, n: usize, binom_n: u64, seed: u64) -> (Vec<Vec<f64>>, Vec<ColumnKind>, Vec<Vec<f64>>) {
    let mut s = Scenario::new(g, n, binom_n, 2.0);
    s.n_eval = 40;
    let data = build_dataset_with_sigma(&s, 1.5, seed).unwrap();
    let rows = data
        .eval_x
        .iter()
        .map(|x| {
            let mut r = vec![f64::NAN];
            r.extend_from_slice(x);
            r
        })
        .collect();
    (data.train, s.kinds(), rows)
}

fn config(mode: Mode) -> FitConfig {
    FitConfig {
        mode,
        jitter: JitterSpec::new(3, 2).unwrap(),
        ..FitConfig::default()
    }
}

#[test]
fn quantiles_never_cross() {
    let alphas: Vec<f64> = (1..100).map(|k| k as f64 / 100.0).collect();
    for (seed, mode) in [(1, Mode::Parametric), (2, Mode::Nonparametric)] {
        let (train, kinds, rows) = dataset(GFunction::Nonlinear3, 300, 8, seed);
        let model = DVineRegModel::fit(&train, &kinds, 0, &[1, 2, 3], &config(mode)).unwrap();
        for row in &rows {
            let q = model.predict_quantiles(&alphas, row).unwrap();
            assert!(q.windows(2).all(|w| w[0] <= w[1]), "{mode}: {q:?}");
        }
    }
}

#[test]
fn discrete_response_quantiles_lie_on_support() {
    // predict the binomial x1 from the others
    let (train, kinds, rows) = dataset(GFunction::Linear3, 400, 8, 5);
    let model = DVineRegModel::fit(&train, &kinds, 1, &[0, 2, 3], &FitConfig::default()).unwrap();
    let alphas = [0.1, 0.25, 0.5, 0.75, 0.9];
    for row in &rows {
        let mut row = row.clone();
        row[0] = train[0][0];
        let q = model.predict_quantiles(&alphas, &row).unwrap();
        assert!(q.windows(2).all(|w| w[0] <= w[1]));
        assert!(q.iter().all(|v| v.fract() == 0.0 && (0.0..=8.0).contains(v)), "{q:?}");
    }
}

#[test]
fn cond_cdf_is_monotone_in_the_response() {
    let (train, kinds, rows) = dataset(GFunction::Linear3, 400, 2, 7);
    for mode in [Mode::Parametric, Mode::Nonparametric] {
        let model = DVineRegModel::fit(&train, &kinds, 0, &[1, 2, 3], &config(mode)).unwrap();
        for row in rows.iter().take(10) {
            let mut prev = 0.0;
            for k in 1..200 {
                let c = model.cond_cdf(PseudoObs::continuous(k as f64 / 200.0), row).unwrap();
                assert!(c >= prev - 1e-12 && c <= 1.0, "{mode}: {c} after {prev}");
                prev = c;
            }
        }
    }
}

#[test]
fn closed_form_and_bisection_agree() {
    // an all-continuous parametric model takes the closed-form inverse path
    let (mut train, _, rows) = dataset(GFunction::Linear3, 500, 8, 9);
    train.truncate(4);
    train[1] = train[1].iter().zip(&train[3]).map(|(a, b)| a + 0.1 * b).collect();
    let kinds = vec![ColumnKind::Continuous; 4];
    let model = DVineRegModel::fit(&train, &kinds, 0, &[1, 2, 3], &FitConfig::default()).unwrap();
    let alphas = [0.05, 0.5, 0.95];
    for row in rows.iter().take(10) {
        let mut row = row.clone();
        row[1] += 0.1 * row[3];
        let a = model.predict_quantiles(&alphas, &row).unwrap();
        let b = model.predict_quantiles_by_bisection(&alphas, &row).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() < 1e-5 * (1.0 + x.abs()), "{a:?} vs {b:?}");
        }
    }
}

#[test]
fn adding_covariates_never_decreases_cll() {
    let (train, kinds, _) = dataset(GFunction::Nonlinear3, 400, 8, 11);
    let mut prev = f64::NEG_INFINITY;
    for k in 0..=3 {
        let cfg = FitConfig {
            penalty: Criterion::Cll,
            max_covariates: Some(k),
            ..FitConfig::default()
        };
        let model = DVineRegModel::fit(&train, &kinds, 0, &[1, 2, 3], &cfg).unwrap();
        let cll = model.cll(&train).unwrap();
        assert!((cll - model.fitted_cll()).abs() < 1e-8 * (1.0 + cll.abs()));
        assert!(cll >= prev - 1e-9, "k={k}: {cll} < {prev}");
        prev = cll;
    }
}

#[test]
fn selected_model_beats_zero_covariate_model() {
    for (g, binom_n, seed) in [(GFunction::Linear3, 2, 13), (GFunction::Nonlinear3, 8, 14)] {
        let (train, kinds, _) = dataset(g, 300, binom_n, seed);
        let full = DVineRegModel::fit(&train, &kinds, 0, &[1, 2, 3], &FitConfig::default()).unwrap();
        let none_cfg = FitConfig {
            max_covariates: Some(0),
            ..FitConfig::default()
        };
        let none = DVineRegModel::fit(&train, &kinds, 0, &[1, 2, 3], &none_cfg).unwrap();
        assert!(none.no_covariates());
        assert_eq!(none.fitted_penalized_cll(), 0.0);
        assert!(full.fitted_penalized_cll() >= none.fitted_penalized_cll());
        let pen = full.penalized_cll(&train, Criterion::Aic).unwrap();
        assert!((pen - full.fitted_penalized_cll()).abs() < 1e-8 * (1.0 + pen.abs()));
    }
}

#[test]
fn zero_covariate_model_predicts_marginal_quantiles() {
    let (train, kinds, rows) = dataset(GFunction::Linear3, 300, 2, 15);
    let cfg = FitConfig {
        max_covariates: Some(0),
        ..FitConfig::default()
    };
    let model = DVineRegModel::fit(&train, &kinds, 0, &[1, 2, 3], &cfg).unwrap();
    let margin = &model.fits()[0].response_margin;
    let alphas = [0.1, 0.5, 0.9];
    for row in rows.iter().take(5) {
        let q = model.predict_quantiles(&alphas, row).unwrap();
        for (a, v) in alphas.iter().zip(q) {
            assert!((v - margin.quantile(*a)).abs() < 1e-6 * (1.0 + v.abs()));
        }
    }
}

#[test]
fn fitting_is_deterministic_and_round_trips() {
    let (train, kinds, rows) = dataset(GFunction::Nonlinear3, 300, 8, 17);
    for mode in [Mode::Parametric, Mode::Nonparametric] {
        let a = DVineRegModel::fit(&train, &kinds, 0, &[1, 2, 3], &config(mode)).unwrap();
        let b = DVineRegModel::fit(&train, &kinds, 0, &[1, 2, 3], &config(mode)).unwrap();
        let text = a.to_json().unwrap();
        assert_eq!(text, b.to_json().unwrap());
        let back = DVineRegModel::from_json(&text).unwrap();
        assert_eq!(back, a);
        for row in rows.iter().take(5) {
            assert_eq!(
                a.predict_quantiles(&[0.2, 0.8], row).unwrap(),
                back.predict_quantiles(&[0.2, 0.8], row).unwrap()
            );
        }
    }
}

#[test]
fn rejects_bad_inputs() {
    let (train, kinds, _) = dataset(GFunction::Linear3, 300, 2, 19);
    let cfg = FitConfig::default();
    assert!(DVineRegModel::fit(&train, &kinds, 0, &[], &cfg).is_err());
    assert!(DVineRegModel::fit(&train, &kinds, 0, &[0, 1], &cfg).is_err());
    let short: Vec<Vec<f64>> = train.iter().map(|c| c[..20].to_vec()).collect();
    assert!(DVineRegModel::fit(&short, &kinds, 0, &[1, 2, 3], &cfg).is_err());
    let model = DVineRegModel::fit(&train, &kinds, 0, &[1, 2, 3], &cfg).unwrap();
    assert!(model.predict_quantiles(&[0.5, 0.2], &[0.0, 1.0, 1.0, 0.0]).is_err());
    assert!(model.predict_quantiles(&[0.5], &[0.0, 1.0]).is_err());
    let text = model.to_json().unwrap().replace("\"version\": 1,", "\"version\": 99,");
    assert!(DVineRegModel::from_json(&text).is_err());
}
