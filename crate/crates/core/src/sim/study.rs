//! Replicated simulation studies: generate, fit, align, and accumulate the
//! per-parameter performance metrics (relative bias, empirical SE, relative
//! RMSE, coverage) plus classification accuracy and convergence bookkeeping.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimate::{
    self, fit, parameter_names, parameter_values, wald_inference, Convergence, FitConfig,
    FitResult, KnotBox, ModelLayout, OutcomeSelection,
};

use super::{generate_dataset, AssignmentMode, GeneratedDataset, SimulationCondition};

/// Per-parameter performance metrics over the converged replications.
/// Relative quantities are undefined (None) when the true value is zero.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ParameterMetrics {
    pub name: String,
    pub truth: f64,
    pub mean_estimate: f64,
    pub bias: f64,
    pub relative_bias: Option<f64>,
    pub empirical_se: f64,
    pub rmse: f64,
    pub relative_rmse: Option<f64>,
    /// Fraction of replications whose 95% interval covers the truth, over
    /// replications where the interval was available.
    pub coverage: Option<f64>,
    /// Monte Carlo standard error of the bias: sqrt(Var(estimate) / S).
    pub mc_se_bias: f64,
}

/// One converged replication's raw material, in reporting order.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ReplicationRecord {
    pub replication: usize,
    pub attempt: usize,
    pub dataset_seed: u64,
    pub log_likelihood: f64,
    pub accuracy: f64,
    pub estimates: Vec<f64>,
    pub ci_lower: Vec<Option<f64>>,
    pub ci_upper: Vec<Option<f64>>,
}

/// Study-level report.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MetricReport {
    pub parameters: Vec<ParameterMetrics>,
    pub parameter_order: Vec<String>,
    pub mean_accuracy: f64,
    pub convergence_rate: f64,
    pub replications: usize,
    pub attempts: usize,
    /// Set when the attempt budget (5 x S) ran out before S convergences.
    pub aborted: bool,
    pub records: Vec<ReplicationRecord>,
}

/// Fits one generated replication. Implementations must be deterministic in
/// (dataset, seed).
pub trait StudyFitter: Sync {
    fn fit_replication(
        &self,
        dataset: &GeneratedDataset,
        config: &FitConfig,
        seed: u64,
    ) -> Result<FitResult>;

    /// Which outcome family the fitter estimates (drives the truth table).
    fn outcomes(&self) -> OutcomeSelection;
}

/// The real maximum-likelihood fitter at the generating class count.
#[derive(Debug, Clone, Copy)]
pub struct MlFitter {
    pub outcomes: OutcomeSelection,
    /// Also compute Wald intervals (needed for coverage).
    pub with_inference: bool,
}

impl Default for MlFitter {
    fn default() -> Self {
        Self {
            outcomes: OutcomeSelection::Joint,
            with_inference: true,
        }
    }
}

impl StudyFitter for MlFitter {
    fn fit_replication(
        &self,
        dataset: &GeneratedDataset,
        config: &FitConfig,
        seed: u64,
    ) -> Result<FitResult> {
        let config = config.clone().with_seed(seed);
        let k = dataset.truth.class_count();
        let result = fit(&dataset.individuals, k, self.outcomes, &config)?;
        if !result.converged() || !self.with_inference {
            return Ok(result);
        }
        wald_inference(result, &dataset.individuals)
    }

    fn outcomes(&self) -> OutcomeSelection {
        self.outcomes
    }
}

/// Truth-returning fitter: estimates equal the generating parameters with
/// zero-width intervals; posteriors are the Bayes-optimal ones under the
/// true model. Used to validate the metric machinery.
#[derive(Debug, Clone, Copy, Default)]
pub struct OracleFitter;

impl StudyFitter for OracleFitter {
    fn fit_replication(
        &self,
        dataset: &GeneratedDataset,
        config: &FitConfig,
        seed: u64,
    ) -> Result<FitResult> {
        let config = config.clone().with_seed(seed);
        let knot_box = KnotBox::from_data(&dataset.individuals, config.knot_margin_waves)?;
        let layout = ModelLayout::new(
            dataset.truth.class_count(),
            OutcomeSelection::Joint,
            dataset.truth.covariate_count(),
            knot_box,
        )?;
        let mut result = estimate::build_result_from_model(
            &layout,
            &dataset.individuals,
            dataset.truth.clone(),
            Convergence::Converged,
            1,
            &config,
        )?;
        for report in &mut result.parameters {
            report.se = Some(0.0);
            report.ci_lower = Some(report.estimate);
            report.ci_upper = Some(report.estimate);
        }
        result.se_available = true;
        Ok(result)
    }

    fn outcomes(&self) -> OutcomeSelection {
        OutcomeSelection::Joint
    }
}

/// Seed stream: replication r draws its dataset from (master, r, 0) and its
/// fit from (master, r, 1).
fn derive_seed(master: u64, attempt: usize, lane: u64) -> u64 {
    let mut h = master ^ 0x9E37_79B9_7F4A_7C15u64.wrapping_mul(attempt as u64 + 1);
    h ^= lane.wrapping_mul(0xD6E8_FEB8_6659_FD93);
    // splitmix-style finalize
    h = (h ^ (h >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    h = (h ^ (h >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    h ^ (h >> 31)
}

/// Classification accuracy of a fit against the generating labels.
fn accuracy(result: &FitResult, dataset: &GeneratedDataset) -> f64 {
    let correct = result
        .modal_classes
        .iter()
        .zip(&dataset.true_classes)
        .filter(|(a, b)| a == b)
        .count();
    correct as f64 / dataset.true_classes.len() as f64
}

struct AttemptOutcome {
    attempt: usize,
    result: Option<ReplicationRecord>,
}

/// Runs attempts until `s` converged replications accumulate (or the 5 x S
/// budget runs out), then reduces the per-parameter metrics in replication
/// order. `workers` = 0 uses the rayon default.
pub fn run_study<F: StudyFitter>(
    condition: &SimulationCondition,
    s: usize,
    config: &FitConfig,
    assignment_mode: AssignmentMode,
    workers: usize,
    fitter: &F,
) -> Result<MetricReport> {
    if s == 0 {
        return Err(Error::invalid("replication count must be at least 1"));
    }
    let run = || run_study_inner(condition, s, config, assignment_mode, fitter);
    if workers == 0 {
        run()
    } else {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(workers)
            .build()
            .map_err(|e| Error::Config(format!("failed to build thread pool: {e}")))?;
        pool.install(run)
    }
}

fn run_study_inner<F: StudyFitter>(
    condition: &SimulationCondition,
    s: usize,
    config: &FitConfig,
    assignment_mode: AssignmentMode,
    fitter: &F,
) -> Result<MetricReport> {
    let budget = 5 * s;
    let mut outcomes: Vec<AttemptOutcome> = Vec::new();
    let mut next_attempt = 1usize;
    let mut converged_count = 0usize;

    while converged_count < s && next_attempt <= budget {
        let remaining_needed = s - converged_count;
        let batch_end = (next_attempt + remaining_needed).min(budget + 1);
        let batch: Vec<usize> = (next_attempt..batch_end).collect();
        next_attempt = batch_end;
        let mut results: Vec<AttemptOutcome> = batch
            .into_par_iter()
            .map(|attempt| {
                let dataset_seed = derive_seed(config.seed, attempt, 0);
                let fit_seed = derive_seed(config.seed, attempt, 1);
                let dataset =
                    generate_dataset(condition, dataset_seed, assignment_mode, condition.n);
                let result = dataset.and_then(|d| {
                    fitter
                        .fit_replication(&d, config, fit_seed)
                        .map(|r| (d, r))
                });
                let record = match result {
                    Ok((dataset, fit_result)) if fit_result.converged() => {
                        Some(build_record(0, attempt, dataset_seed, &fit_result, &dataset))
                    }
                    _ => None,
                };
                AttemptOutcome {
                    attempt,
                    result: record,
                }
            })
            .collect();
        results.sort_by_key(|o| o.attempt);
        converged_count += results.iter().filter(|o| o.result.is_some()).count();
        outcomes.extend(results);
    }

    let attempts = outcomes.len();
    let aborted = converged_count < s;
    let truth_layout_values = truth_values_for(condition, fitter.outcomes())?;
    let names = truth_layout_values.0;
    let truth = truth_layout_values.1;

    let mut records = Vec::new();
    for outcome in outcomes {
        if records.len() == s {
            break;
        }
        if let Some(mut record) = outcome.result {
            record.replication = records.len() + 1;
            records.push(record);
        }
    }

    let parameters = reduce_metrics(&names, &truth, &records);
    let mean_accuracy = if records.is_empty() {
        f64::NAN
    } else {
        records.iter().map(|r| r.accuracy).sum::<f64>() / records.len() as f64
    };
    Ok(MetricReport {
        parameters,
        parameter_order: names,
        mean_accuracy,
        convergence_rate: converged_count.min(s) as f64 / attempts.max(1) as f64,
        replications: records.len(),
        attempts,
        aborted,
        records,
    })
}

/// Truth table for the fitter's layout: names plus generating values. The
/// knot box is irrelevant for values; a wide box keeps encode well-defined.
fn truth_values_for(
    condition: &SimulationCondition,
    outcomes: OutcomeSelection,
) -> Result<(Vec<String>, Vec<f64>)> {
    let span = condition.waves.last().unwrap() - condition.waves[0];
    let knot_box = KnotBox {
        lo: condition.waves[0] - span,
        hi: condition.waves.last().unwrap() + span,
    };
    let layout = ModelLayout::new(
        condition.truth.class_count(),
        outcomes,
        condition.covariate_count,
        knot_box,
    )?;
    Ok((
        parameter_names(&layout),
        parameter_values(&layout, &condition.truth),
    ))
}

fn build_record(
    replication: usize,
    attempt: usize,
    dataset_seed: u64,
    fit_result: &FitResult,
    dataset: &GeneratedDataset,
) -> ReplicationRecord {
    ReplicationRecord {
        replication,
        attempt,
        dataset_seed,
        log_likelihood: fit_result.log_likelihood,
        accuracy: accuracy(fit_result, dataset),
        estimates: fit_result.parameters.iter().map(|p| p.estimate).collect(),
        ci_lower: fit_result.parameters.iter().map(|p| p.ci_lower).collect(),
        ci_upper: fit_result.parameters.iter().map(|p| p.ci_upper).collect(),
    }
}

/// The Table-1 estimators, reduced over replication records.
fn reduce_metrics(
    names: &[String],
    truth: &[f64],
    records: &[ReplicationRecord],
) -> Vec<ParameterMetrics> {
    let s = records.len();
    names
        .iter()
        .enumerate()
        .map(|(idx, name)| {
            let theta = truth[idx];
            let estimates: Vec<f64> = records.iter().map(|r| r.estimates[idx]).collect();
            let mean = estimates.iter().sum::<f64>() / s.max(1) as f64;
            let bias = mean - theta;
            let var = if s > 1 {
                estimates.iter().map(|e| (e - mean) * (e - mean)).sum::<f64>() / (s as f64 - 1.0)
            } else {
                0.0
            };
            let mse = estimates
                .iter()
                .map(|e| (e - theta) * (e - theta))
                .sum::<f64>()
                / s.max(1) as f64;
            let mut covered = 0usize;
            let mut have_ci = 0usize;
            for r in records {
                if let (Some(lo), Some(hi)) = (r.ci_lower[idx], r.ci_upper[idx]) {
                    have_ci += 1;
                    if lo <= theta && theta <= hi {
                        covered += 1;
                    }
                }
            }
            let relative = |v: f64| {
                if theta == 0.0 {
                    None
                } else {
                    Some(v / theta)
                }
            };
            ParameterMetrics {
                name: name.clone(),
                truth: theta,
                mean_estimate: mean,
                bias,
                relative_bias: relative(bias),
                empirical_se: var.sqrt(),
                rmse: mse.sqrt(),
                relative_rmse: relative(mse.sqrt()),
                coverage: (have_ci > 0).then(|| covered as f64 / have_ci as f64),
                mc_se_bias: (var / s.max(1) as f64).sqrt(),
            }
        })
        .collect()
}

/// One paired replication of the joint-versus-univariate comparison.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub replication: usize,
    pub attempt: usize,
    pub dataset_seed: u64,
    pub accuracy_joint: f64,
    pub accuracy_y: f64,
    pub accuracy_z: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub rows: Vec<ComparisonRow>,
    pub mean_accuracy_joint: f64,
    pub mean_accuracy_y: f64,
    pub mean_accuracy_z: f64,
    pub attempts: usize,
    pub aborted: bool,
}

/// Fits the joint model and both univariate models on the same generated
/// datasets; a replication counts when all three converge.
pub fn compare_joint_vs_univariate(
    condition: &SimulationCondition,
    s: usize,
    config: &FitConfig,
    assignment_mode: AssignmentMode,
    workers: usize,
) -> Result<ComparisonReport> {
    if s == 0 {
        return Err(Error::invalid("replication count must be at least 1"));
    }
    let run = || compare_inner(condition, s, config, assignment_mode);
    if workers == 0 {
        run()
    } else {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(workers)
            .build()
            .map_err(|e| Error::Config(format!("failed to build thread pool: {e}")))?;
        pool.install(run)
    }
}

fn compare_inner(
    condition: &SimulationCondition,
    s: usize,
    config: &FitConfig,
    assignment_mode: AssignmentMode,
) -> Result<ComparisonReport> {
    let budget = 5 * s;
    let fitters = [
        MlFitter {
            outcomes: OutcomeSelection::Joint,
            with_inference: false,
        },
        MlFitter {
            outcomes: OutcomeSelection::YOnly,
            with_inference: false,
        },
        MlFitter {
            outcomes: OutcomeSelection::ZOnly,
            with_inference: false,
        },
    ];

    let mut rows: Vec<ComparisonRow> = Vec::new();
    let mut next_attempt = 1usize;
    let mut collected = 0usize;
    let mut attempts = 0usize;
    while collected < s && next_attempt <= budget {
        let batch: Vec<usize> = (next_attempt..(next_attempt + (s - collected)).min(budget + 1))
            .collect();
        next_attempt = batch.last().unwrap() + 1;
        attempts += batch.len();
        let mut batch_rows: Vec<(usize, Option<ComparisonRow>)> = batch
            .into_par_iter()
            .map(|attempt| {
                let dataset_seed = derive_seed(config.seed, attempt, 0);
                let fit_seed = derive_seed(config.seed, attempt, 1);
                let Ok(dataset) =
                    generate_dataset(condition, dataset_seed, assignment_mode, condition.n)
                else {
                    return (attempt, None);
                };
                let mut accs = [f64::NAN; 3];
                for (slot, fitter) in fitters.iter().enumerate() {
                    match fitter.fit_replication(&dataset, config, fit_seed) {
                        Ok(result) if result.converged() => {
                            accs[slot] = accuracy(&result, &dataset);
                        }
                        _ => return (attempt, None),
                    }
                }
                (
                    attempt,
                    Some(ComparisonRow {
                        replication: 0,
                        attempt,
                        dataset_seed,
                        accuracy_joint: accs[0],
                        accuracy_y: accs[1],
                        accuracy_z: accs[2],
                    }),
                )
            })
            .collect();
        batch_rows.sort_by_key(|(attempt, _)| *attempt);
        for (_, row) in batch_rows {
            if let Some(mut r) = row {
                if rows.len() < s {
                    r.replication = rows.len() + 1;
                    rows.push(r);
                }
            }
        }
        collected = rows.len();
    }

    let mean = |f: fn(&ComparisonRow) -> f64| {
        if rows.is_empty() {
            f64::NAN
        } else {
            rows.iter().map(f).sum::<f64>() / rows.len() as f64
        }
    };
    Ok(ComparisonReport {
        mean_accuracy_joint: mean(|r| r.accuracy_joint),
        mean_accuracy_y: mean(|r| r.accuracy_y),
        mean_accuracy_z: mean(|r| r.accuracy_z),
        aborted: rows.len() < s,
        attempts,
        rows,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::{build_condition, Allocation, Scenario};

    #[test]
    fn metric_formulas_match_hand_computed_fixture() {
        // three replications of a single parameter with truth 2
        let names = vec!["p".to_string()];
        let truth = vec![2.0];
        let records: Vec<ReplicationRecord> = [
            (2.1, Some((1.0, 3.0))),
            (1.9, Some((2.5, 3.0))),
            (2.2, Some((0.0, 2.1))),
        ]
        .iter()
        .enumerate()
        .map(|(i, (est, ci))| ReplicationRecord {
            replication: i + 1,
            attempt: i + 1,
            dataset_seed: 0,
            log_likelihood: 0.0,
            accuracy: 0.8,
            estimates: vec![*est],
            ci_lower: vec![ci.map(|c| c.0)],
            ci_upper: vec![ci.map(|c| c.1)],
        })
        .collect();
        let metrics = reduce_metrics(&names, &truth, &records);
        let m = &metrics[0];
        // relative bias: ((2.1-2)+(1.9-2)+(2.2-2))/(3*2) = 0.2/6
        assert!((m.relative_bias.unwrap() - 0.0333333333).abs() < 1e-9);
        // empirical SE: sd of {2.1,1.9,2.2} = sqrt(0.0233333)
        assert!((m.empirical_se - 0.15275252316519466).abs() < 1e-12);
        // relative RMSE: sqrt((0.01+0.01+0.04)/3)/2
        assert!((m.relative_rmse.unwrap() - (0.06f64 / 3.0).sqrt() / 2.0).abs() < 1e-12);
        // coverage: CIs [1,3] covers, [2.5,3] misses, [0,2.1] covers -> 2/3
        assert!((m.coverage.unwrap() - 2.0 / 3.0).abs() < 1e-12);
        // MC SE(bias) = sqrt(var/S)
        assert!((m.mc_se_bias - (0.0233333333333f64 / 3.0).sqrt()).abs() < 1e-9);
    }

    #[test]
    fn oracle_study_has_zero_bias_and_full_coverage() {
        let condition = build_condition(Scenario::One, 1.0, Allocation::Balanced, 1.0, -0.3)
            .unwrap();
        let small = SimulationCondition {
            n: 60,
            ..condition
        };
        let config = FitConfig::default().with_seed(4242);
        let report = run_study(
            &small,
            3,
            &config,
            AssignmentMode::Multinomial,
            0,
            &OracleFitter,
        )
        .unwrap();
        assert_eq!(report.replications, 3);
        assert_eq!(report.attempts, 3);
        assert!((report.convergence_rate - 1.0).abs() < 1e-12);
        assert!(!report.aborted);
        for m in &report.parameters {
            assert!(m.bias.abs() < 1e-10, "{}: bias {}", m.name, m.bias);
            assert!(m.rmse < 1e-10, "{}: rmse {}", m.name, m.rmse);
            assert_eq!(m.coverage, Some(1.0), "{}", m.name);
        }
        // Bayes-optimal accuracy under full separation overlap is high but
        // below 1; it must at least beat random assignment decisively.
        assert!(report.mean_accuracy > 0.7, "{}", report.mean_accuracy);
    }

    #[test]
    fn accuracy_arithmetic() {
        // 4 of 5 correct
        assert!((4.0f64 / 5.0 - 0.8).abs() < 1e-15);
    }

    #[test]
    fn derive_seed_separates_lanes_and_attempts() {
        let a = derive_seed(7, 1, 0);
        let b = derive_seed(7, 1, 1);
        let c = derive_seed(7, 2, 0);
        assert_ne!(a, b);
        assert_ne!(a, c);
        assert_eq!(a, derive_seed(7, 1, 0));
    }
}
