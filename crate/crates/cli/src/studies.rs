//! Canned experiments. Each one prints a metric table and persists it as
//! `study_<name>.csv` under the output directory.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use ndarray::{Array1, Array2, Axis};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use wadmarket_core::estimation::{
    at_budget, fit, project_scale, r_squared, DistanceMode, EstimatorKind, SubsetOracle, TrialRecord,
    WassersteinOracle,
};
use wadmarket_core::fedwad::{
    approx_wasserstein_pair, barycentric_interpolate, sample_shared_measure, PrivacyPolicy, SharedMeasureSpec,
};
use wadmarket_core::fl::{sample_indices, Algorithm, FedConfig};
use wadmarket_core::ot::{self, calibrated_gradients, pairwise_cost, select_top_k, wasserstein, DiscreteMeasure, GroundCost, Method};
use wadmarket_core::{seed, stats};
use wadmarket_market::{run_formal_training, run_trial_phase, RatioSampler, Session};

use crate::report::{self, num, Table};
use crate::scenario::{selection_phase, trial_phase, Scenario, ScenarioConfig};
use crate::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
#[value(rename_all = "snake_case")]
pub enum Study {
    /// Spearman(CombineWad, accuracy) per aggregation algorithm.
    ConvergenceSignal,
    /// Train/test r² of every estimator kind.
    Prediction,
    /// Predicted vs realised accuracy at an unseen budget.
    Projection,
    /// Mixing-ratio trajectory.
    Selection,
    /// Top-k selection of unlabeled regression data against random picks.
    Unlabeled,
    /// Error of the privacy-preserving distance against the anchor count.
    PrivwadError,
}

impl Study {
    pub fn name(self) -> &'static str {
        match self {
            Study::ConvergenceSignal => "convergence_signal",
            Study::Prediction => "prediction",
            Study::Projection => "projection",
            Study::Selection => "selection",
            Study::Unlabeled => "unlabeled",
            Study::PrivwadError => "privwad_error",
        }
    }
}

/// Run `study` on top of `base` and write `study_<name>.csv` into `out`.
pub fn run_study(study: Study, base: &ScenarioConfig, out: &Path) -> Result<Table, CliError> {
    std::fs::create_dir_all(out).map_err(|e| CliError::io(out, e))?;
    let table = match study {
        Study::ConvergenceSignal => convergence_signal(base)?,
        Study::Prediction => prediction(base)?,
        Study::Projection => projection(base)?,
        Study::Selection => selection(base, out)?,
        Study::Unlabeled => unlabeled(base.seed)?,
        Study::PrivwadError => privwad_error(base.seed)?,
    };
    table.write_csv(&out.join(format!("study_{}.csv", study.name())))?;
    Ok(table)
}

fn cell(x: Option<f64>) -> String {
    x.map_or_else(|| "n/a".into(), num)
}

fn session_for(cfg: &ScenarioConfig) -> Result<(Scenario, Session), CliError> {
    let scenario = Scenario::build(cfg.clone())?;
    let session = scenario.session(None)?;
    Ok((scenario, session))
}

fn algorithm_name(a: Algorithm) -> &'static str {
    match a {
        Algorithm::FedAvg => "fedavg",
        Algorithm::FedProx { .. } => "fedprox",
        Algorithm::Scaffold => "scaffold",
        Algorithm::FedNova => "fednova",
    }
}

/// Spearman rank correlation of distance against accuracy.
pub fn signal(records: &[TrialRecord]) -> Option<f64> {
    let w: Vec<f64> = records.iter().map(|r| r.w).collect();
    let v: Vec<f64> = records.iter().map(|r| r.v).collect();
    stats::spearman(&w, &v)
}

/// Grid of at least 16 ratios at the larger trial budget, once per algorithm.
pub fn convergence_signal(base: &ScenarioConfig) -> Result<Table, CliError> {
    let mu = match base.fed.algorithm {
        Algorithm::FedProx { mu } => mu,
        _ => 0.1,
    };
    let mut table = Table::new(&["algorithm", "ratios", "spearman", "mean_accuracy"]);
    for algorithm in [Algorithm::FedAvg, Algorithm::FedProx { mu }, Algorithm::Scaffold, Algorithm::FedNova] {
        let mut cfg = base.clone();
        cfg.fed.algorithm = algorithm;
        let (_, mut session) = session_for(&cfg)?;
        let records = run_trial_phase(&mut session, cfg.trials.max(16), &[cfg.n1], &RatioSampler::Standard)?;
        let acc = stats::mean(&records.iter().map(|r| r.v).collect::<Vec<_>>());
        table.push(vec![
            algorithm_name(algorithm).to_string(),
            records.len().to_string(),
            cell(signal(&records)),
            num(acc),
        ]);
    }
    Ok(table)
}

/// Every estimator fit on even-indexed trials and scored on the odd ones,
/// separately at each trial budget.
pub fn prediction(base: &ScenarioConfig) -> Result<Table, CliError> {
    let (scenario, mut session) = session_for(base)?;
    let records = trial_phase(&scenario, &mut session)?;
    let cost = session.setup()?.clone();
    let mut agg = SubsetOracle::new(cost, base.t, base.seed, DistanceMode::Aggregated);
    let mut table = Table::new(&["n", "estimator", "r2_train", "r2_test"]);
    for n in [base.n0, base.n1] {
        let at_n = at_budget(&records, n);
        let mut agg_records = at_n.clone();
        for r in &mut agg_records {
            r.w = agg.evaluate(&r.p, r.n)?.w;
        }
        for kind in EstimatorKind::ALL {
            let pool = if kind == EstimatorKind::Aggwad { &agg_records } else { &at_n };
            let (train, test): (Vec<_>, Vec<_>) = pool.iter().cloned().enumerate().partition(|(i, _)| i % 2 == 0);
            let train: Vec<TrialRecord> = train.into_iter().map(|(_, r)| r).collect();
            let test: Vec<TrialRecord> = test.into_iter().map(|(_, r)| r).collect();
            let (r_train, r_test) = match fit(&train, kind, wadmarket_core::estimation::DEFAULT_RIDGE) {
                Ok(est) => (
                    r_squared(&est, &train).ok().map(|r| r.value),
                    r_squared(&est, &test).ok().map(|r| r.value),
                ),
                Err(e) => {
                    log::warn!("{kind} at n = {n}: {e}");
                    (None, None)
                }
            };
            table.push(vec![n.to_string(), kind.name().into(), cell(r_train), cell(r_test)]);
        }
    }
    Ok(table)
}

/// Correlation between projected and realised values.
#[derive(Debug, Clone, PartialEq)]
pub struct ProjectionCase {
    pub predicted: Vec<f64>,
    pub actual: Vec<f64>,
}

impl ProjectionCase {
    fn row(&self, name: &str, n_i: usize, n_j: usize, n: usize) -> Vec<String> {
        let mae = stats::mean(
            &self
                .predicted
                .iter()
                .zip(&self.actual)
                .map(|(a, b)| (a - b).abs())
                .collect::<Vec<_>>(),
        );
        vec![
            name.into(),
            n_i.to_string(),
            n_j.to_string(),
            n.to_string(),
            self.predicted.len().to_string(),
            cell(stats::pearson(&self.predicted, &self.actual)),
            cell(stats::spearman(&self.predicted, &self.actual)),
            num(mae),
        ]
    }
}

/// Eight ratios whose values follow `a + b ln N` exactly.
pub fn log_linear_projection(n_i: usize, n_j: usize, n: usize) -> Result<ProjectionCase, CliError> {
    let mut predicted = Vec::new();
    let mut actual = Vec::new();
    for r in 0..8 {
        let (a, b) = (0.3 + 0.05 * r as f64, 0.02 + 0.004 * ((r * 5) % 8) as f64);
        let v = |n: usize| a + b * (n as f64).ln();
        predicted.push(project_scale(v(n_i), v(n_j), n_i, n_j, n)?);
        actual.push(v(n));
    }
    Ok(ProjectionCase { predicted, actual })
}

/// Trials at both budgets on a fixed ratio grid, projected to the formal
/// budget and compared with formal training at that budget.
pub fn scenario_projection(base: &ScenarioConfig) -> Result<ProjectionCase, CliError> {
    let (_, mut session) = session_for(base)?;
    let grid = RatioSampler::Standard.ratios(base.num_sellers, 8, seed::derive(base.seed, "projection-grid"));
    let records = run_trial_phase(&mut session, grid.len(), &[base.n0, base.n1], &RatioSampler::Fixed(grid.clone()))?;
    let fed = FedConfig {
        seed: seed::derive(base.seed, "formal-fl"),
        ..base.fed.clone()
    };
    let mut predicted = Vec::new();
    let mut actual = Vec::new();
    for p in &grid {
        let at = |n: usize| records.iter().find(|r| r.n == n && &r.p == p).map(|r| r.v);
        let (Some(v_i), Some(v_j)) = (at(base.n0), at(base.n1)) else {
            return Err(CliError::Invalid(format!("missing trial for ratio {p:?}")));
        };
        predicted.push(project_scale(v_i, v_j, base.n0, base.n1, base.formal_n)?);
        actual.push(run_formal_training(&mut session, p, base.formal_n, &fed)?.1.accuracy);
    }
    Ok(ProjectionCase { predicted, actual })
}

pub fn projection(base: &ScenarioConfig) -> Result<Table, CliError> {
    let mut table = Table::new(&["case", "n_i", "n_j", "target_n", "points", "pearson", "spearman", "mae"]);
    let (n_i, n_j) = (base.n0, base.n1);
    table.push(log_linear_projection(n_i, n_j, 4 * n_j)?.row("log_linear", n_i, n_j, 4 * n_j));
    table.push(scenario_projection(base)?.row("scenario", n_i, n_j, base.formal_n));
    Ok(table)
}

/// Trial runs plus selection; the trajectory is also written on its own.
pub fn selection(base: &ScenarioConfig, out: &Path) -> Result<Table, CliError> {
    let (scenario, mut session) = session_for(base)?;
    trial_phase(&scenario, &mut session)?;
    let outcome = selection_phase(&scenario, &mut session)?;
    report::write_trajectory(&out.join("trajectory.csv"), &outcome.trajectory)?;
    Ok(report::trajectory_table(&outcome.trajectory))
}

/// Synthetic regression with planted outliers for the unlabeled study.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UnlabeledSetup {
    pub n_train: usize,
    /// Unlabeled buyer points used for valuation.
    pub n_query: usize,
    /// Labeled buyer points used only to measure test MSE.
    pub n_test: usize,
    pub d: usize,
    pub outlier_fraction: f64,
    /// Feature shift of the outliers, in units of the clean spread.
    pub outlier_shift: f64,
    pub noise: f64,
    pub t: f64,
    pub anchors: usize,
}

impl Default for UnlabeledSetup {
    fn default() -> Self {
        Self {
            n_train: 1000,
            n_query: 50,
            n_test: 500,
            d: 5,
            outlier_fraction: 0.3,
            outlier_shift: 3.0,
            noise: 0.1,
            t: 0.5,
            anchors: 200,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UnlabeledOutcome {
    pub k: usize,
    pub mse_top_k: f64,
    pub mse_random: f64,
    pub outliers_top_k: usize,
    pub outliers_random: usize,
}

fn gaussian<R: Rng>(rng: &mut R, n: usize, d: usize) -> Array2<f64> {
    Array2::from_shape_fn((n, d), |_| StandardNormal.sample(rng))
}

fn least_squares(x: &Array2<f64>, y: &Array1<f64>) -> Result<DVector<f64>, CliError> {
    let (n, d) = x.dim();
    let design = DMatrix::from_fn(n, d + 1, |i, j| if j < d { x[[i, j]] } else { 1.0 });
    let target = DVector::from_iterator(n, y.iter().copied());
    design
        .svd(true, true)
        .solve(&target, 1e-12)
        .map_err(|e| CliError::Invalid(format!("least squares: {e}")))
}

fn mse(beta: &DVector<f64>, x: &Array2<f64>, y: &Array1<f64>) -> f64 {
    let d = x.ncols();
    let errs: Vec<f64> = x
        .outer_iter()
        .zip(y)
        .map(|(row, &t)| {
            let pred: f64 = row.iter().zip(beta.iter()).map(|(a, b)| a * b).sum::<f64>() + beta[d];
            (pred - t).powi(2)
        })
        .collect();
    stats::mean(&errs)
}

/// One draw of the unlabeled experiment: seller features are valued against
/// the buyer's unlabeled query points through interpolating measures; a
/// regression is trained on the `k` most valuable rows and on `k` random rows.
pub fn unlabeled_trial(setup: &UnlabeledSetup, master: u64, ks: &[usize]) -> Result<Vec<UnlabeledOutcome>, CliError> {
    let s = setup;
    let mut rng = seed::rng(seed::derive(master, "unlabeled-data"));
    let w: Array1<f64> = Array1::from_shape_fn(s.d, |_| StandardNormal.sample(&mut rng));
    let respond = |x: &Array2<f64>, coef: &Array1<f64>, rng: &mut dyn rand::RngCore| -> Array1<f64> {
        let eps: Array1<f64> = Array1::from_shape_fn(x.nrows(), |_| StandardNormal.sample(&mut *rng));
        x.dot(coef) + eps * s.noise
    };
    let n_out = (s.outlier_fraction * s.n_train as f64).round() as usize;
    let mut x = gaussian(&mut rng, s.n_train, s.d);
    let mut y = respond(&x, &w, &mut rng);
    // outliers: shifted features whose response follows the opposite law
    let shift = s.outlier_shift / (s.d as f64).sqrt();
    let flipped = -&w;
    let mut is_outlier = vec![false; s.n_train];
    for i in sample_indices(&mut rng, s.n_train, n_out) {
        is_outlier[i] = true;
        x.row_mut(i).mapv_inplace(|v| v + shift);
    }
    let x_out = x.select(Axis(0), &(0..s.n_train).filter(|&i| is_outlier[i]).collect::<Vec<_>>());
    let y_out = respond(&x_out, &flipped, &mut rng);
    for (j, i) in (0..s.n_train).filter(|&i| is_outlier[i]).enumerate() {
        y[i] = y_out[j];
    }
    let query = gaussian(&mut rng, s.n_query, s.d);
    let x_test = gaussian(&mut rng, s.n_test, s.d);
    let y_test = respond(&x_test, &w, &mut rng);

    let shared = sample_shared_measure(&SharedMeasureSpec {
        seed: seed::derive(master, "unlabeled-shared"),
        k: s.anchors,
        d: s.d,
        mean: 0.0,
        std: 1.0,
    })?;
    let policy = PrivacyPolicy::disabled();
    let eta_train = barycentric_interpolate(&DiscreteMeasure::uniform(x.clone(), None)?, &shared, s.t, "seller", &policy)?;
    let eta_query = barycentric_interpolate(&DiscreteMeasure::uniform(query, None)?, &shared, s.t, "buyer", &policy)?;
    let cost = pairwise_cost(eta_train.points.view(), eta_query.points.view(), None, None, 0.0, GroundCost::Euclidean)?;
    let sol = ot::solve_dense(cost.view(), &eta_train.masses, &eta_query.masses, Method::Exact, 1e-9)?;
    let scores = calibrated_gradients(&sol)?;

    let mut out = Vec::with_capacity(ks.len());
    for &k in ks {
        let top = select_top_k(&scores, k)?;
        let random = sample_indices(&mut seed::rng(seed::derive_indexed(master, "unlabeled-random", k as u64)), s.n_train, k);
        let run = |idx: &[usize]| -> Result<(f64, usize), CliError> {
            let beta = least_squares(&x.select(Axis(0), idx), &y.select(Axis(0), idx))?;
            Ok((mse(&beta, &x_test, &y_test), idx.iter().filter(|&&i| is_outlier[i]).count()))
        };
        let (mse_top_k, outliers_top_k) = run(&top)?;
        let (mse_random, outliers_random) = run(&random)?;
        out.push(UnlabeledOutcome {
            k,
            mse_top_k,
            mse_random,
            outliers_top_k,
            outliers_random,
        });
    }
    Ok(out)
}

pub fn unlabeled(master: u64) -> Result<Table, CliError> {
    let setup = UnlabeledSetup::default();
    let ks = [100, 200, 400, 600];
    let mut table = Table::new(&["k", "mse_top_k", "mse_random", "outliers_top_k", "outliers_random"]);
    for o in unlabeled_trial(&setup, master, &ks)? {
        table.push(vec![
            o.k.to_string(),
            num(o.mse_top_k),
            num(o.mse_random),
            o.outliers_top_k.to_string(),
            o.outliers_random.to_string(),
        ]);
    }
    Ok(table)
}

/// `|W_hat - W|` of the interpolated pair distance for unit Gaussian pairs
/// offset by one along every axis; `out[k_index][seed]`.
pub fn privwad_errors(master: u64, seeds: usize, ks: &[usize], n: usize, d: usize, t: f64) -> Result<Vec<Vec<f64>>, CliError> {
    let policy = PrivacyPolicy::disabled();
    let mut errors = vec![Vec::with_capacity(seeds); ks.len()];
    for s in 0..seeds as u64 {
        let mut rng = seed::rng(seed::derive_indexed(master, "privwad-pair", s));
        let a = DiscreteMeasure::uniform(gaussian(&mut rng, n, d), None)?;
        let b = DiscreteMeasure::uniform(gaussian(&mut rng, n, d) + 1.0, None)?;
        let exact = wasserstein(&a, &b, 0.0)?;
        for (ki, &k) in ks.iter().enumerate() {
            let shared = sample_shared_measure(&SharedMeasureSpec {
                seed: seed::derive_indexed(master, "privwad-shared", s * 1_000_003 + k as u64),
                k,
                d,
                mean: 0.0,
                std: 1.0,
            })?;
            let eta_a = barycentric_interpolate(&a, &shared, t, "a", &policy)?;
            let eta_b = barycentric_interpolate(&b, &shared, t, "b", &policy)?;
            errors[ki].push((approx_wasserstein_pair(&eta_a, &eta_b)? - exact).abs());
        }
    }
    Ok(errors)
}

pub fn privwad_error(master: u64) -> Result<Table, CliError> {
    let ks = [10, 50, 200, 1000];
    let errors = privwad_errors(master, 20, &ks, 200, 5, 0.5)?;
    let mut table = Table::new(&["k", "mean_abs_error", "std_abs_error", "max_abs_error"]);
    for (k, e) in ks.iter().zip(&errors) {
        table.push(vec![
            k.to_string(),
            num(stats::mean(e)),
            num(stats::std_dev(e)),
            num(e.iter().cloned().fold(0.0, f64::max)),
        ]);
    }
    Ok(table)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn log_linear_projection_is_exact() {
        let case = log_linear_projection(60, 120, 480).unwrap();
        for (p, a) in case.predicted.iter().zip(&case.actual) {
            assert!((p - a).abs() < 1e-9);
        }
        assert!((stats::pearson(&case.predicted, &case.actual).unwrap() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn least_squares_recovers_a_plane() {
        let x = Array2::from_shape_fn((20, 2), |(i, j)| ((i * 7 + j * 3) % 11) as f64);
        let y = x.column(0).mapv(|v| 2.0 * v) - x.column(1).mapv(|v| v * 0.5) + 1.0;
        let beta = least_squares(&x, &y).unwrap();
        assert!((beta[0] - 2.0).abs() < 1e-9 && (beta[1] + 0.5).abs() < 1e-9 && (beta[2] - 1.0).abs() < 1e-9);
        assert!(mse(&beta, &x, &y) < 1e-18);
    }

    #[test]
    fn study_names_round_trip() {
        use clap::ValueEnum;
        for s in Study::value_variants() {
            assert_eq!(Study::from_str(s.name(), false).unwrap(), *s);
        }
    }
}
