//! The full mixture likelihood: multinomial-logistic gating, per-class
//! Gaussian log-densities over each subject's observed entries, total
//! log-likelihood, posterior class probabilities, and modal classification.
//!
//! Densities are evaluated in log space throughout and combined with
//! log-sum-exp; with 20 observed entries per subject, linear-space mixture
//! terms underflow routinely. The per-subject reduction order is fixed so
//! results are bit-identical regardless of how callers parallelize.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math;
use crate::spline::{ClassParameters, Outcome, Schedule};

/// Logistic-gating coefficients for the non-reference classes `k = 2..K`.
/// The reference class (first) has implicit zeros.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct GatingParameters {
    pub classes: Vec<GatingClass>,
}

/// One non-reference class's gating intercept and covariate coefficients.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GatingClass {
    pub intercept: f64,
    pub slopes: Vec<f64>,
}

impl GatingParameters {
    /// Gating with no covariate effects and zero intercepts (uniform mixing).
    pub fn uniform(k: usize, covariate_count: usize) -> Self {
        Self {
            classes: (1..k)
                .map(|_| GatingClass {
                    intercept: 0.0,
                    slopes: vec![0.0; covariate_count],
                })
                .collect(),
        }
    }

    pub fn covariate_count(&self) -> usize {
        self.classes.first().map_or(0, |c| c.slopes.len())
    }
}

/// The complete mixture: K class-parameter blocks plus gating coefficients.
/// Classes are kept ordered by ascending y-knot (the label convention).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixtureModel {
    pub classes: Vec<ClassParameters>,
    pub gating: GatingParameters,
}

impl MixtureModel {
    pub fn new(classes: Vec<ClassParameters>, gating: GatingParameters) -> Result<Self> {
        if classes.is_empty() {
            return Err(Error::invalid("mixture needs at least one class"));
        }
        if gating.classes.len() + 1 != classes.len() {
            return Err(Error::invalid(format!(
                "gating must cover K-1 = {} classes, got {}",
                classes.len() - 1,
                gating.classes.len()
            )));
        }
        let p = gating.covariate_count();
        if gating.classes.iter().any(|c| c.slopes.len() != p) {
            return Err(Error::invalid("gating coefficient lengths differ"));
        }
        Ok(Self { classes, gating })
    }

    pub fn class_count(&self) -> usize {
        self.classes.len()
    }

    pub fn covariate_count(&self) -> usize {
        self.gating.covariate_count()
    }

    /// Reorders classes ascending by the given outcome's knot and re-expresses
    /// the gating coefficients relative to the new first class. Leaves the
    /// mixture distribution unchanged.
    pub fn relabel_by_knot(&mut self, outcome: Outcome) {
        let k = self.class_count();
        let mut order: Vec<usize> = (0..k).collect();
        order.sort_by(|&a, &b| {
            self.classes[a]
                .outcome(outcome)
                .knot
                .total_cmp(&self.classes[b].outcome(outcome).knot)
        });
        if order.iter().enumerate().all(|(i, &o)| i == o) {
            return;
        }
        let p = self.covariate_count();
        // logits of the old parameterization (old class index -> coefficients)
        let logit = |old: usize| -> (f64, Vec<f64>) {
            if old == 0 {
                (0.0, vec![0.0; p])
            } else {
                let c = &self.gating.classes[old - 1];
                (c.intercept, c.slopes.clone())
            }
        };
        let (ref_b0, ref_b) = logit(order[0]);
        let new_gating = order[1..]
            .iter()
            .map(|&old| {
                let (b0, b) = logit(old);
                GatingClass {
                    intercept: b0 - ref_b0,
                    slopes: b.iter().zip(&ref_b).map(|(x, r)| x - r).collect(),
                }
            })
            .collect();
        self.classes = order.iter().map(|&o| self.classes[o].clone()).collect();
        self.gating = GatingParameters {
            classes: new_gating,
        };
    }
}

/// One subject: id, occasions with masks, outcome values, gating covariates.
/// Masked entries of `y`/`z` are ignored (conventionally NaN).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Individual {
    pub id: String,
    pub schedule: Schedule,
    pub y: Vec<f64>,
    pub z: Vec<f64>,
    pub x: Vec<f64>,
}

impl Individual {
    pub fn new(
        id: impl Into<String>,
        schedule: Schedule,
        y: Vec<f64>,
        z: Vec<f64>,
        x: Vec<f64>,
    ) -> Result<Self> {
        let id = id.into();
        let j = schedule.len();
        if y.len() != j || z.len() != j {
            return Err(Error::invalid(format!(
                "outcome vectors for id {id} must have length {j}"
            )));
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid(format!("covariates for id {id} must be finite")));
        }
        for (values, outcome) in [(&y, Outcome::Y), (&z, Outcome::Z)] {
            for (row, &obs) in schedule.observed(outcome).iter().enumerate() {
                if obs && !values[row].is_finite() {
                    return Err(Error::invalid(format!(
                        "observed {} value for id {id} at occasion {row} is not finite",
                        outcome.label()
                    )));
                }
            }
        }
        Ok(Self {
            id,
            schedule,
            y,
            z,
            x,
        })
    }

    /// Projection onto a single outcome (the other becomes fully missing).
    pub fn restricted_to(&self, outcome: Outcome) -> Result<Self> {
        Ok(Self {
            id: self.id.clone(),
            schedule: self.schedule.restricted_to(outcome)?,
            y: self.y.clone(),
            z: self.z.clone(),
            x: self.x.clone(),
        })
    }
}

/// Mixing proportions `pi(c = k | x)` from the logistic gating.
///
/// Computed as a log-softmax over the K logits (reference logit 0), so the
/// result is overflow-safe and sums to one.
pub fn gating_probabilities(
    x: &[f64],
    gating: &GatingParameters,
    k: usize,
) -> Result<Vec<f64>> {
    let logits = gating_log_probabilities(x, gating, k)?;
    Ok(logits.iter().map(|l| l.exp()).collect())
}

/// Log mixing proportions; shares validation with [`gating_probabilities`].
pub fn gating_log_probabilities(
    x: &[f64],
    gating: &GatingParameters,
    k: usize,
) -> Result<Vec<f64>> {
    let mut out = Vec::new();
    gating_log_probabilities_into(x, gating, k, &mut out)?;
    Ok(out)
}

/// As [`gating_log_probabilities`], writing into a reusable buffer.
pub(crate) fn gating_log_probabilities_into(
    x: &[f64],
    gating: &GatingParameters,
    k: usize,
    out: &mut Vec<f64>,
) -> Result<()> {
    if k == 0 {
        return Err(Error::invalid("class count must be at least 1"));
    }
    if gating.classes.len() + 1 != k {
        return Err(Error::invalid(format!(
            "gating covers {} classes, expected {}",
            gating.classes.len() + 1,
            k
        )));
    }
    out.clear();
    out.push(0.0);
    for class in &gating.classes {
        if class.slopes.len() != x.len() {
            return Err(Error::invalid(format!(
                "covariate vector has length {}, gating expects {}",
                x.len(),
                class.slopes.len()
            )));
        }
        let lin = class.intercept
            + class
                .slopes
                .iter()
                .zip(x)
                .map(|(b, v)| b * v)
                .sum::<f64>();
        if !lin.is_finite() {
            return Err(Error::invalid("gating linear predictor is not finite"));
        }
        out.push(lin);
    }
    let norm = math::logsumexp(out);
    for l in out.iter_mut() {
        *l -= norm;
    }
    Ok(())
}

/// Scratch buffers for the Gaussian density kernel, reusable across calls.
#[derive(Debug, Default, Clone)]
pub struct DensityWorkspace {
    lambda: Vec<f64>,
    qy: Vec<f64>,
    qz: Vec<f64>,
    sigma: Vec<f64>,
    resid: Vec<f64>,
    obs: Vec<(u8, u32)>,
}

impl DensityWorkspace {
    pub fn new() -> Self {
        Self::default()
    }

    /// Fills the observed-entry descriptors (outcome, occasion) for one
    /// subject, y-block first.
    fn load_observations(&mut self, sched: &Schedule) -> usize {
        self.obs.clear();
        for (row, &obs) in sched.observed(Outcome::Y).iter().enumerate() {
            if obs {
                self.obs.push((0, row as u32));
            }
        }
        for (row, &obs) in sched.observed(Outcome::Z).iter().enumerate() {
            if obs {
                self.obs.push((1, row as u32));
            }
        }
        self.obs.len()
    }
}

/// One class's parameters flattened for the density kernel: the 6x6
/// covariance row-major, means and knots by outcome, residual 2x2.
#[derive(Debug, Clone)]
pub struct ClassContext {
    psi: [f64; 36],
    means: [[f64; 3]; 2],
    knots: [f64; 2],
    theta: [[f64; 2]; 2],
}

impl ClassContext {
    pub fn new(params: &ClassParameters) -> Self {
        let mut psi = [0.0; 36];
        for r in 0..6 {
            for c in 0..6 {
                psi[r * 6 + c] = params.joint_cov[(r, c)];
            }
        }
        Self {
            psi,
            means: [params.y.mean.as_array(), params.z.mean.as_array()],
            knots: [params.y.knot, params.z.knot],
            theta: [
                [params.y.residual_var, params.residual_cov],
                [params.residual_cov, params.z.residual_var],
            ],
        }
    }
}

/// Multivariate-normal log-density of one subject's observed entries under
/// one class's implied moments.
///
/// Builds the observed-submatrix moments directly (masked entries never
/// materialize) and factorizes with a dense Cholesky; a factorization
/// failure is reported as a numerical-failure error rather than NaN.
pub fn class_log_density(ind: &Individual, params: &ClassParameters) -> Result<f64> {
    let mut ws = DensityWorkspace::new();
    let ctx = ClassContext::new(params);
    class_log_density_with(ind, &ctx, 0, &mut ws)
}

pub(crate) fn class_log_density_with(
    ind: &Individual,
    ctx: &ClassContext,
    class_index: usize,
    ws: &mut DensityWorkspace,
) -> Result<f64> {
    let times = ind.schedule.times();
    let m = ws.load_observations(&ind.schedule);
    if m == 0 {
        return Err(Error::EmptyMoments);
    }

    ws.lambda.resize(3 * m, 0.0);
    ws.qy.resize(3 * m, 0.0);
    ws.qz.resize(3 * m, 0.0);
    ws.sigma.resize(m * m, 0.0);
    ws.resid.resize(m, 0.0);

    // loadings, residuals (value - implied mean), and Psi * lambda products
    for (a, &(u, j)) in ws.obs.iter().enumerate() {
        let u = u as usize;
        let j = j as usize;
        let dt = times[j] - ctx.knots[u];
        let lam = [1.0, dt, dt.abs()];
        ws.lambda[3 * a..3 * a + 3].copy_from_slice(&lam);

        let mean = &ctx.means[u];
        let mu = mean[0] + lam[1] * mean[1] + lam[2] * mean[2];
        let value = if u == 0 { ind.y[j] } else { ind.z[j] };
        ws.resid[a] = value - mu;

        // q^{(r)}_a = Psi[r-block, u-block] * lambda_a for each row block r
        let col0 = 3 * u;
        for r in 0..3 {
            let row_y = &ctx.psi[r * 6 + col0..r * 6 + col0 + 3];
            let row_z = &ctx.psi[(3 + r) * 6 + col0..(3 + r) * 6 + col0 + 3];
            ws.qy[3 * a + r] = row_y[0] * lam[0] + row_y[1] * lam[1] + row_y[2] * lam[2];
            ws.qz[3 * a + r] = row_z[0] * lam[0] + row_z[1] * lam[1] + row_z[2] * lam[2];
        }
    }

    // Sigma_ab = lambda_a . q_b^{(u_a)} + theta[u_a][u_b] * [j_a == j_b]
    for (a, &(ua, ja)) in ws.obs.iter().enumerate() {
        let q = if ua == 0 { &ws.qy } else { &ws.qz };
        let lam_a = [ws.lambda[3 * a], ws.lambda[3 * a + 1], ws.lambda[3 * a + 2]];
        let theta_a = &ctx.theta[ua as usize];
        let row = &mut ws.sigma[a * m..a * m + a + 1];
        for (b, &(ub, jb)) in ws.obs.iter().enumerate().take(a + 1) {
            let mut v =
                lam_a[0] * q[3 * b] + lam_a[1] * q[3 * b + 1] + lam_a[2] * q[3 * b + 2];
            if ja == jb {
                v += theta_a[ub as usize];
            }
            row[b] = v;
        }
    }
    // mirror the lower triangle
    for a in 0..m {
        for b in (a + 1)..m {
            ws.sigma[a * m + b] = ws.sigma[b * m + a];
        }
    }

    if !math::cholesky_in_place(&mut ws.sigma, m) {
        return Err(Error::NumericalFailure {
            class: class_index,
            message: "implied covariance is not positive definite".into(),
        });
    }
    let log_det = math::log_det_from_cholesky(&ws.sigma, m);
    math::forward_substitute(&ws.sigma, m, &mut ws.resid);
    let quad: f64 = ws.resid.iter().map(|w| w * w).sum();

    const LOG_2PI: f64 = 1.8378770664093453;
    Ok(-0.5 * (m as f64 * LOG_2PI + log_det + quad))
}

/// Per-class joint log-terms `log pi_k(x) + log p(data | class k)` for one
/// subject. The building block for the total likelihood and posteriors.
pub(crate) fn joint_log_terms(
    model: &MixtureModel,
    ind: &Individual,
    ws: &mut DensityWorkspace,
) -> Result<Vec<f64>> {
    let contexts: Vec<ClassContext> = model.classes.iter().map(ClassContext::new).collect();
    joint_log_terms_ctx(model, &contexts, ind, ws)
}

pub(crate) fn joint_log_terms_ctx(
    model: &MixtureModel,
    contexts: &[ClassContext],
    ind: &Individual,
    ws: &mut DensityWorkspace,
) -> Result<Vec<f64>> {
    let k = model.class_count();
    let log_pi = gating_log_probabilities(&ind.x, &model.gating, k)?;
    let mut terms = Vec::with_capacity(k);
    for (class_index, ctx) in contexts.iter().enumerate() {
        let dens = class_log_density_with(ind, ctx, class_index, ws).map_err(|e| match e {
            Error::NumericalFailure { class, message } => Error::IndividualFailure {
                id: ind.id.clone(),
                class,
                message,
            },
            other => other,
        })?;
        terms.push(log_pi[class_index] + dens);
    }
    Ok(terms)
}

/// Full-information mixture log-likelihood, summed over individuals in input
/// order.
pub fn total_log_likelihood(model: &MixtureModel, data: &[Individual]) -> Result<f64> {
    let mut ws = DensityWorkspace::new();
    let mut total = 0.0;
    for ind in data {
        let terms = joint_log_terms(model, ind, &mut ws)?;
        total += math::logsumexp(&terms);
    }
    Ok(total)
}

/// Posterior class-membership probabilities for one subject via Bayes'
/// theorem; sums to one.
pub fn posterior_probabilities(model: &MixtureModel, ind: &Individual) -> Result<Vec<f64>> {
    let mut ws = DensityWorkspace::new();
    let terms = joint_log_terms(model, ind, &mut ws)?;
    let norm = math::logsumexp(&terms);
    Ok(terms.iter().map(|t| (t - norm).exp()).collect())
}

/// Modal class assignment (0-based). Exact ties of the maximal posterior --
/// after rounding to 12 significant digits -- are broken uniformly at random
/// from the tied set.
pub fn classify<R: Rng + ?Sized>(posteriors: &[f64], rng: &mut R) -> usize {
    debug_assert!(!posteriors.is_empty());
    let rounded: Vec<f64> = posteriors
        .iter()
        .map(|&p| math::round_significant(p, 12))
        .collect();
    let max = rounded.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let tied: Vec<usize> = (0..rounded.len()).filter(|&i| rounded[i] == max).collect();
    if tied.len() == 1 {
        tied[0]
    } else {
        tied[rng.gen_range(0..tied.len())]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spline::{
        reparameterize, GrowthFactorsOriginal, GrowthFactorsReparam, OutcomeParams,
    };
    use nalgebra::{DMatrix, DVector};
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn simple_params(mean_shift: f64) -> ClassParameters {
        let orig = GrowthFactorsOriginal {
            intercept: 10.0 + mean_shift,
            slope1: 2.0,
            slope2: 1.0,
        };
        let knot = 1.5;
        let cov = DMatrix::identity(6, 6);
        ClassParameters::new(
            OutcomeParams {
                mean: reparameterize(&orig, knot),
                knot,
                residual_var: 1.0,
            },
            OutcomeParams {
                mean: reparameterize(&orig, knot),
                knot,
                residual_var: 1.0,
            },
            cov,
            0.2,
        )
        .unwrap()
    }

    fn two_class_model(p: usize) -> MixtureModel {
        MixtureModel::new(
            vec![simple_params(0.0), simple_params(5.0)],
            GatingParameters {
                classes: vec![GatingClass {
                    intercept: 0.3,
                    slopes: vec![0.1; p],
                }],
            },
        )
        .unwrap()
    }

    fn random_individual(rng: &mut ChaCha8Rng, j: usize, p: usize) -> Individual {
        let mut times: Vec<f64> = (0..j).map(|i| i as f64 + rng.gen_range(-0.2..0.2)).collect();
        times.sort_by(f64::total_cmp);
        let oy: Vec<bool> = (0..j).map(|_| rng.gen_bool(0.8)).collect();
        let mut oz: Vec<bool> = (0..j).map(|_| rng.gen_bool(0.8)).collect();
        if !oy.iter().chain(oz.iter()).any(|&o| o) {
            oz[0] = true;
        }
        let schedule = Schedule::new(times, oy, oz).unwrap();
        Individual::new(
            format!("i{}", rng.gen::<u32>()),
            schedule,
            (0..j).map(|_| rng.gen_range(5.0..25.0)).collect(),
            (0..j).map(|_| rng.gen_range(5.0..25.0)).collect(),
            (0..p).map(|_| rng.gen_range(-1.0..1.0)).collect(),
        )
        .unwrap()
    }

    /// Independent oracle: assemble the observed moments with nalgebra and
    /// evaluate the Gaussian density via explicit inverse and determinant.
    fn dense_oracle_density(ind: &Individual, params: &ClassParameters) -> f64 {
        let moments = crate::spline::implied_moments(params, &ind.schedule).unwrap();
        let mut values = Vec::new();
        for (row, &obs) in ind.schedule.observed(Outcome::Y).iter().enumerate() {
            if obs {
                values.push(ind.y[row]);
            }
        }
        for (row, &obs) in ind.schedule.observed(Outcome::Z).iter().enumerate() {
            if obs {
                values.push(ind.z[row]);
            }
        }
        let m = values.len();
        let v = DVector::from_vec(values);
        let resid = &v - &moments.mean;
        let inv = moments.cov.clone().try_inverse().unwrap();
        let det = moments.cov.determinant();
        -0.5 * (m as f64 * (2.0 * std::f64::consts::PI).ln()
            + det.ln()
            + (resid.transpose() * inv * resid)[(0, 0)])
    }

    #[test]
    fn gating_uniform_when_coefficients_zero() {
        let gating = GatingParameters::uniform(2, 3);
        let probs = gating_probabilities(&[0.4, -1.0, 2.0], &gating, 2).unwrap();
        assert!((probs[0] - 0.5).abs() < 1e-12);
        assert!((probs[1] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn gating_single_class_is_one() {
        let gating = GatingParameters::uniform(1, 0);
        let probs = gating_probabilities(&[], &gating, 1).unwrap();
        assert_eq!(probs, vec![1.0]);
    }

    #[test]
    fn gating_matches_table_intercept_value() {
        let gating = GatingParameters {
            classes: vec![GatingClass {
                intercept: 0.775,
                slopes: vec![1.5f64.ln(), 1.7f64.ln()],
            }],
        };
        let probs = gating_probabilities(&[0.0, 0.0], &gating, 2).unwrap();
        assert!((probs[0] - 0.3154).abs() < 5e-5, "got {}", probs[0]);
        assert!((probs[1] - 0.6846).abs() < 5e-5, "got {}", probs[1]);
    }

    #[test]
    fn gating_rejects_dimension_mismatch() {
        let gating = GatingParameters {
            classes: vec![GatingClass {
                intercept: 0.0,
                slopes: vec![1.0, 2.0],
            }],
        };
        assert!(gating_probabilities(&[1.0], &gating, 2).is_err());
    }

    #[test]
    fn gating_probabilities_sum_to_one_under_extreme_logits() {
        let gating = GatingParameters {
            classes: vec![
                GatingClass {
                    intercept: 800.0,
                    slopes: vec![],
                },
                GatingClass {
                    intercept: -800.0,
                    slopes: vec![],
                },
            ],
        };
        let probs = gating_probabilities(&[], &gating, 3).unwrap();
        let sum: f64 = probs.iter().sum();
        assert!((sum - 1.0).abs() < 1e-12);
        assert!(probs.iter().all(|p| (0.0..=1.0).contains(p)));
    }

    #[test]
    fn density_of_standard_normal_at_mode() {
        // single observed point equal to the implied mean, total variance 1
        let orig = GrowthFactorsOriginal {
            intercept: 3.0,
            slope1: 0.0,
            slope2: 0.0,
        };
        let knot = 1.0;
        let mut cov = DMatrix::identity(6, 6) * 1e-12;
        // keep the covariance PD but contribute ~nothing at the knot
        cov[(0, 0)] = 1e-12;
        let params = ClassParameters::new(
            OutcomeParams {
                mean: reparameterize(&orig, knot),
                knot,
                residual_var: 1.0 - 1e-12,
            },
            OutcomeParams {
                mean: reparameterize(&orig, knot),
                knot,
                residual_var: 1.0,
            },
            cov,
            0.0,
        )
        .unwrap();
        let sched = Schedule::new(vec![1.0], vec![true], vec![false]).unwrap();
        let ind = Individual::new("a", sched, vec![3.0], vec![f64::NAN], vec![]).unwrap();
        let dens = class_log_density(&ind, &params).unwrap();
        let expected = -0.5 * (2.0 * std::f64::consts::PI).ln();
        assert!((dens - expected).abs() < 1e-9, "got {dens}, want {expected}");
    }

    #[test]
    fn density_matches_dense_oracle_on_random_small_instances() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        for _ in 0..50 {
            let j = rng.gen_range(1..=3);
            let ind = random_individual(&mut rng, j, 0);
            let params = simple_params(rng.gen_range(-2.0..2.0));
            let fast = class_log_density(&ind, &params).unwrap();
            let oracle = dense_oracle_density(&ind, &params);
            assert!(
                (fast - oracle).abs() < 1e-8,
                "kernel {fast} vs oracle {oracle}"
            );
        }
    }

    #[test]
    fn fully_missing_z_reduces_to_y_marginal() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let params = simple_params(0.0);
        let times = vec![0.0, 2.0];
        let y: Vec<f64> = (0..2).map(|_| rng.gen_range(8.0..15.0)).collect();
        let with_missing_z = Individual::new(
            "a",
            Schedule::new(times.clone(), vec![true, true], vec![false, false]).unwrap(),
            y.clone(),
            vec![f64::NAN, f64::NAN],
            vec![],
        )
        .unwrap();
        let dens = class_log_density(&with_missing_z, &params).unwrap();
        let oracle = dense_oracle_density(&with_missing_z, &params);
        assert!((dens - oracle).abs() < 1e-10);
    }

    #[test]
    fn total_log_likelihood_single_class_is_plain_sum() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let model = MixtureModel::new(vec![simple_params(0.0)], GatingParameters::default())
            .unwrap();
        let data: Vec<Individual> = (0..5).map(|_| random_individual(&mut rng, 3, 0)).collect();
        let total = total_log_likelihood(&model, &data).unwrap();
        let sum: f64 = data
            .iter()
            .map(|ind| class_log_density(ind, &model.classes[0]).unwrap())
            .sum();
        assert!((total - sum).abs() < 1e-10);
    }

    #[test]
    fn total_log_likelihood_matches_scalar_loop_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let model = two_class_model(2);
        let data: Vec<Individual> = (0..5).map(|_| random_individual(&mut rng, 2, 2)).collect();
        let total = total_log_likelihood(&model, &data).unwrap();
        // brute force in linear space
        let mut expected = 0.0;
        for ind in &data {
            let pi = gating_probabilities(&ind.x, &model.gating, 2).unwrap();
            let mut lik = 0.0;
            for (k, params) in model.classes.iter().enumerate() {
                lik += pi[k] * dense_oracle_density(ind, params).exp();
            }
            expected += lik.ln();
        }
        assert!((total - expected).abs() < 1e-8, "{total} vs {expected}");
    }

    #[test]
    fn duplicating_individuals_doubles_the_log_likelihood() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let model = two_class_model(0);
        let data: Vec<Individual> = (0..4).map(|_| random_individual(&mut rng, 2, 0)).collect();
        let mut doubled = data.clone();
        doubled.extend(data.iter().cloned());
        let single = total_log_likelihood(&model, &data).unwrap();
        let twice = total_log_likelihood(&model, &doubled).unwrap();
        // fixed-order accumulation differs from 2*sum only in the last ulps
        assert!((2.0 * single - twice).abs() <= 1e-12 * twice.abs());
    }

    #[test]
    fn posterior_single_class_is_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let model = MixtureModel::new(vec![simple_params(0.0)], GatingParameters::default())
            .unwrap();
        let ind = random_individual(&mut rng, 2, 0);
        assert_eq!(posterior_probabilities(&model, &ind).unwrap(), vec![1.0]);
    }

    #[test]
    fn posterior_equals_prior_when_classes_identical() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let model = MixtureModel::new(
            vec![simple_params(0.0), simple_params(0.0)],
            GatingParameters {
                classes: vec![GatingClass {
                    intercept: 1.0986122886681098, // ln 3 -> priors (0.25, 0.75)
                    slopes: vec![],
                }],
            },
        )
        .unwrap();
        let ind = random_individual(&mut rng, 3, 0);
        let post = posterior_probabilities(&model, &ind).unwrap();
        assert!((post[0] - 0.25).abs() < 1e-12);
        assert!((post[1] - 0.75).abs() < 1e-12);
    }

    #[test]
    fn posterior_bayes_arithmetic_with_density_ratio() {
        // equal priors, density ratio 3:1 -> posterior (0.75, 0.25)
        let log_terms = [3.0f64.ln(), 1.0f64.ln()];
        let norm = math::logsumexp(&log_terms);
        let post: Vec<f64> = log_terms.iter().map(|t| (t - norm).exp()).collect();
        assert!((post[0] - 0.75).abs() < 1e-12);
        assert!((post[1] - 0.25).abs() < 1e-12);
    }

    #[test]
    fn classify_is_argmax_without_ties() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert_eq!(classify(&[0.9, 0.1], &mut rng), 0);
        assert_eq!(classify(&[0.2, 0.3, 0.5], &mut rng), 2);
    }

    #[test]
    fn classify_breaks_exact_ties_uniformly() {
        let mut rng = ChaCha8Rng::seed_from_u64(123);
        let mut counts = [0usize; 2];
        for _ in 0..10_000 {
            counts[classify(&[0.5, 0.5], &mut rng)] += 1;
        }
        let share = counts[0] as f64 / 10_000.0;
        assert!((share - 0.5).abs() < 0.02, "share {share}");

        let mut counts3 = [0usize; 3];
        let third = 1.0 / 3.0;
        for _ in 0..30_000 {
            counts3[classify(&[third, third, third], &mut rng)] += 1;
        }
        for c in counts3 {
            let share = c as f64 / 30_000.0;
            assert!((share - third).abs() < 0.02, "share {share}");
        }
    }

    #[test]
    fn classify_is_deterministic_given_seed() {
        let picks: Vec<usize> = (0..20)
            .map(|_| {
                let mut rng = ChaCha8Rng::seed_from_u64(77);
                classify(&[0.5, 0.5], &mut rng)
            })
            .collect();
        assert!(picks.windows(2).all(|w| w[0] == w[1]));
    }

    #[test]
    fn relabel_by_knot_orders_classes_and_preserves_likelihood() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let mut a = simple_params(0.0);
        a.y.knot = 3.0;
        let mut b = simple_params(4.0);
        b.y.knot = 1.0;
        let mut model = MixtureModel::new(
            vec![a, b],
            GatingParameters {
                classes: vec![GatingClass {
                    intercept: 0.7,
                    slopes: vec![0.4, -0.2],
                }],
            },
        )
        .unwrap();
        let data: Vec<Individual> = (0..6).map(|_| random_individual(&mut rng, 3, 2)).collect();
        let before = total_log_likelihood(&model, &data).unwrap();
        model.relabel_by_knot(Outcome::Y);
        assert!(model.classes[0].y.knot < model.classes[1].y.knot);
        let after = total_log_likelihood(&model, &data).unwrap();
        assert!(
            (before - after).abs() < 1e-9,
            "relabeling changed the likelihood: {before} vs {after}"
        );
        // gating flipped sign relative to the new reference
        assert!((model.gating.classes[0].intercept + 0.7).abs() < 1e-12);
        assert!((model.gating.classes[0].slopes[0] + 0.4).abs() < 1e-12);
    }

    #[test]
    fn shift_invariance_of_explicit_logit_softmax() {
        // over explicit K logits, adding a constant leaves the simplex unchanged
        let logits = [0.0, 1.3, -0.4];
        let shifted: Vec<f64> = logits.iter().map(|l| l + 17.0).collect();
        let norm_a = math::logsumexp(&logits);
        let norm_b = math::logsumexp(&shifted);
        for (a, b) in logits.iter().zip(&shifted) {
            assert!(((a - norm_a).exp() - (b - norm_b).exp()).abs() < 1e-12);
        }
    }

    #[test]
    fn reference_parameterization_scaling_identity() {
        // scaling x by c while dividing slopes by c leaves probabilities unchanged
        let x = [0.8, -1.4];
        let scaled_x: Vec<f64> = x.iter().map(|v| v * 2.5).collect();
        let gating = GatingParameters {
            classes: vec![GatingClass {
                intercept: 0.6,
                slopes: vec![0.9, -0.3],
            }],
        };
        let scaled_gating = GatingParameters {
            classes: vec![GatingClass {
                intercept: 0.6,
                slopes: vec![0.9 / 2.5, -0.3 / 2.5],
            }],
        };
        let a = gating_probabilities(&x, &gating, 2).unwrap();
        let b = gating_probabilities(&scaled_x, &scaled_gating, 2).unwrap();
        for (pa, pb) in a.iter().zip(&b) {
            assert!((pa - pb).abs() < 1e-12);
        }
    }
}
