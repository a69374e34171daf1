//! Full-information maximum likelihood estimation of the mixture by
//! quasi-Newton maximization on the unconstrained parameter encoding, with
//! multi-start restarts, Wald inference from the observed information, and
//! back-transformation to the interpretable parameter scale.

mod encode;
mod lbfgs;
mod start;
mod wald;

pub use encode::{KnotBox, ModelLayout, OutcomeSelection};
pub use wald::wald_inference;

use encode::Block;

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math;
use crate::mixture::{self, DensityWorkspace, Individual, MixtureModel};
use crate::spline::Outcome;

/// Estimation settings.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FitConfig {
    /// Maximum optimizer runs with fresh starting values.
    pub max_restarts: usize,
    /// Gradient infinity-norm tolerance on the mean-scale objective.
    pub gradient_tolerance: f64,
    /// Relative objective-change tolerance.
    pub objective_tolerance: f64,
    /// Relative central-difference step for gradients.
    pub fd_step: f64,
    /// Knot box margin in units of the average wave spacing.
    pub knot_margin_waves: f64,
    /// Optimizer iteration cap per start.
    pub max_iterations: usize,
    /// Drives starting values and posterior tie-breaking.
    pub seed: u64,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            max_restarts: 10,
            gradient_tolerance: 1e-5,
            objective_tolerance: 1e-10,
            fd_step: 1e-5,
            knot_margin_waves: 0.5,
            max_iterations: 600,
            seed: 0,
        }
    }
}

impl FitConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_restarts == 0 {
            return Err(Error::Config("max_restarts must be at least 1".into()));
        }
        for (v, name) in [
            (self.gradient_tolerance, "gradient_tolerance"),
            (self.objective_tolerance, "objective_tolerance"),
            (self.fd_step, "fd_step"),
        ] {
            if !(v > 0.0) {
                return Err(Error::Config(format!("{name} must be positive")));
            }
        }
        Ok(())
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }
}

/// Terminal state of a fit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Convergence {
    Converged,
    RestartExhausted,
    NumericalFailure,
}

/// One reporting-scale parameter: estimate, standard error, Wald interval,
/// and (for gating coefficients) the odds-ratio view.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParameterReport {
    pub name: String,
    pub estimate: f64,
    pub se: Option<f64>,
    pub ci_lower: Option<f64>,
    pub ci_upper: Option<f64>,
    /// exp(estimate) with exp-transformed CI endpoints; gating only.
    pub odds_ratio: Option<OddsRatio>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OddsRatio {
    pub estimate: f64,
    pub ci_lower: Option<f64>,
    pub ci_upper: Option<f64>,
}

/// Everything a fit produces. Estimates live in `model` (reparameterized
/// scale) and in `parameters` (original scale with inference); posteriors
/// and modal classes cover the individuals that entered the fit, in input
/// order.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FitResult {
    pub layout: ModelLayout,
    pub model: MixtureModel,
    pub status: Convergence,
    pub restarts_used: usize,
    pub log_likelihood: f64,
    pub n_used: usize,
    pub parameters: Vec<ParameterReport>,
    pub mixing_proportions: Vec<f64>,
    pub posteriors: Vec<Vec<f64>>,
    pub modal_classes: Vec<usize>,
    pub se_available: bool,
    /// Unconstrained vector aligned with the relabeled model; inference
    /// evaluates the observed information here.
    pub parameter_vector: Vec<f64>,
    /// Optimizer iterations of the accepted run.
    pub optimizer_iterations: usize,
    /// Gradient infinity norm at the optimum (mean-scale objective).
    pub gradient_norm: f64,
}

impl FitResult {
    pub fn converged(&self) -> bool {
        self.status == Convergence::Converged
    }

    /// Estimates keyed by name, reporting scale.
    pub fn estimates(&self) -> impl Iterator<Item = (&str, f64)> {
        self.parameters.iter().map(|p| (p.name.as_str(), p.estimate))
    }
}

/// Objective shared by the optimizer and the Hessian: mean negative
/// log-likelihood of the prepared data under the decoded model.
///
/// Finite-difference probes move one parameter block at a time, so the
/// per-individual per-class log-densities of the untouched blocks can be
/// cached and reused; the patched evaluation is arithmetic-identical to a
/// full one (same kernel, same inputs, same reduction order).
pub(crate) struct Objective<'a> {
    pub layout: &'a ModelLayout,
    pub data: &'a [Individual],
}

/// Base-point evaluation: per-individual log gating probabilities and
/// per-class log-densities, flattened as `[individual * K + class]`.
pub(crate) struct LikelihoodCache {
    log_pi: Vec<f64>,
    logdens: Vec<f64>,
}

impl Objective<'_> {
    fn k(&self) -> usize {
        self.layout.k
    }

    /// Mean negative log-likelihood; +inf when any density fails.
    pub fn value(&self, v: &[f64]) -> f64 {
        match self.build_cache(v) {
            Some(cache) => self.value_from_cache(&cache),
            None => f64::INFINITY,
        }
    }

    /// Evaluates every term at `v`. None when a density fails.
    pub fn build_cache(&self, v: &[f64]) -> Option<LikelihoodCache> {
        let k = self.k();
        let n = self.data.len();
        let gating = self.layout.decode_gating(v);
        let contexts: Vec<mixture::ClassContext> = (0..k)
            .map(|c| mixture::ClassContext::new(&self.layout.decode_class(v, c)))
            .collect();
        let mut cache = LikelihoodCache {
            log_pi: vec![0.0; n * k],
            logdens: vec![0.0; n * k],
        };
        let mut ws = DensityWorkspace::new();
        let mut pi_buf = Vec::with_capacity(k);
        for (i, ind) in self.data.iter().enumerate() {
            mixture::gating_log_probabilities_into(&ind.x, &gating, k, &mut pi_buf).ok()?;
            cache.log_pi[i * k..(i + 1) * k].copy_from_slice(&pi_buf);
            for (c, ctx) in contexts.iter().enumerate() {
                cache.logdens[i * k + c] =
                    mixture::class_log_density_with(ind, ctx, c, &mut ws).ok()?;
            }
        }
        Some(cache)
    }

    /// Objective value from cached terms.
    pub fn value_from_cache(&self, cache: &LikelihoodCache) -> f64 {
        let k = self.k();
        let mut terms = vec![0.0; k];
        let mut total = 0.0;
        for i in 0..self.data.len() {
            for c in 0..k {
                terms[c] = cache.log_pi[i * k + c] + cache.logdens[i * k + c];
            }
            total += math::logsumexp(&terms);
        }
        if total.is_finite() {
            -total / self.data.len() as f64
        } else {
            f64::INFINITY
        }
    }

    /// Objective at `probe`, recomputing only the named blocks against the
    /// base cache. Exactly equal to `value(probe)` when the probe differs
    /// from the cached point only inside those blocks.
    pub fn value_patched(
        &self,
        probe: &[f64],
        cache: &LikelihoodCache,
        blocks: &[Block],
    ) -> f64 {
        let k = self.k();
        let n = self.data.len();

        let mut patched_pi: Option<Vec<f64>> = None;
        if blocks.contains(&Block::Gating) {
            let gating = self.layout.decode_gating(probe);
            let mut pi = vec![0.0; n * k];
            let mut buf = Vec::with_capacity(k);
            for (i, ind) in self.data.iter().enumerate() {
                if mixture::gating_log_probabilities_into(&ind.x, &gating, k, &mut buf).is_err() {
                    return f64::INFINITY;
                }
                pi[i * k..(i + 1) * k].copy_from_slice(&buf);
            }
            patched_pi = Some(pi);
        }

        let mut patched_classes: Vec<(usize, Vec<f64>)> = Vec::new();
        let mut ws = DensityWorkspace::new();
        for block in blocks {
            let Block::Class(c) = *block else { continue };
            let ctx = mixture::ClassContext::new(&self.layout.decode_class(probe, c));
            let mut col = vec![0.0; n];
            for (i, ind) in self.data.iter().enumerate() {
                match mixture::class_log_density_with(ind, &ctx, c, &mut ws) {
                    Ok(d) => col[i] = d,
                    Err(_) => return f64::INFINITY,
                }
            }
            patched_classes.push((c, col));
        }

        let log_pi = patched_pi.as_deref().unwrap_or(&cache.log_pi);
        let mut terms = vec![0.0; k];
        let mut total = 0.0;
        for i in 0..n {
            for c in 0..k {
                let mut dens = cache.logdens[i * k + c];
                for (pc, col) in &patched_classes {
                    if *pc == c {
                        dens = col[i];
                    }
                }
                terms[c] = log_pi[i * k + c] + dens;
            }
            total += math::logsumexp(&terms);
        }
        if total.is_finite() {
            -total / n as f64
        } else {
            f64::INFINITY
        }
    }

    /// Sum-scale negative log-likelihood (for observed information).
    pub fn neg_log_likelihood(&self, v: &[f64]) -> f64 {
        self.value(v) * self.data.len() as f64
    }

    /// Central-difference gradient, components in parallel, fixed order.
    /// Each probe re-evaluates only the block its component lives in.
    pub fn gradient(&self, v: &[f64], rel_step: f64) -> Vec<f64> {
        let Some(cache) = self.build_cache(v) else {
            return vec![f64::NAN; v.len()];
        };
        (0..v.len())
            .into_par_iter()
            .map(|i| {
                let blocks = [self.layout.component_block(i)];
                let h = rel_step * v[i].abs().max(1.0);
                let mut vp = v.to_vec();
                let mut vm = v.to_vec();
                vp[i] += h;
                vm[i] -= h;
                (self.value_patched(&vp, &cache, &blocks)
                    - self.value_patched(&vm, &cache, &blocks))
                    / (2.0 * h)
            })
            .collect()
    }
}

/// Restricts data to the modeled outcomes and drops individuals with
/// nothing observed there. Returns (prepared individuals, kept input rows).
fn prepare_data(
    data: &[Individual],
    outcomes: OutcomeSelection,
) -> Result<(Vec<Individual>, Vec<usize>)> {
    let mut kept = Vec::with_capacity(data.len());
    let mut rows = Vec::with_capacity(data.len());
    for (row, ind) in data.iter().enumerate() {
        let projected = match outcomes {
            OutcomeSelection::Joint => Some(ind.clone()),
            OutcomeSelection::YOnly => ind.restricted_to(Outcome::Y).ok(),
            OutcomeSelection::ZOnly => ind.restricted_to(Outcome::Z).ok(),
        };
        if let Some(p) = projected {
            kept.push(p);
            rows.push(row);
        }
    }
    if kept.is_empty() {
        return Err(Error::EstimationFailure(
            "no individuals with observations on the modeled outcomes".into(),
        ));
    }
    let p = kept[0].x.len();
    if kept.iter().any(|ind| ind.x.len() != p) {
        return Err(Error::invalid("covariate vector lengths differ across individuals"));
    }
    Ok((kept, rows))
}

/// Maximum-likelihood fit with up to `config.max_restarts` starts. Returns
/// the first converged solution, or the best non-converged attempt with
/// `RestartExhausted` status. Point estimates only; see [`wald_inference`]
/// for standard errors.
pub fn fit(
    data: &[Individual],
    k: usize,
    outcomes: OutcomeSelection,
    config: &FitConfig,
) -> Result<FitResult> {
    config.validate()?;
    if k == 0 {
        return Err(Error::invalid("class count must be at least 1"));
    }
    let (prepared, _rows) = prepare_data(data, outcomes)?;
    let knot_box = KnotBox::from_data(&prepared, config.knot_margin_waves)?;
    let layout = ModelLayout::new(k, outcomes, prepared[0].x.len(), knot_box)?;
    let objective = Objective {
        layout: &layout,
        data: &prepared,
    };

    let optimizer_cfg = lbfgs::LbfgsConfig {
        memory: 8,
        max_iterations: config.max_iterations,
        gradient_tolerance: config.gradient_tolerance,
        objective_tolerance: config.objective_tolerance,
    };

    let mut best: Option<(lbfgs::Minimum, usize)> = None;
    let mut converged = false;
    let mut any_finite_start = false;
    for restart in 1..=config.max_restarts {
        let start_model = start::starting_model(&prepared, &layout, config.seed, restart)?;
        let v0 = match layout.encode(&start_model) {
            Ok(v) => v,
            Err(_) => continue,
        };
        let minimum = lbfgs::minimize(
            |v| objective.value(v),
            |v| objective.gradient(v, config.fd_step),
            v0,
            &optimizer_cfg,
        );
        if minimum.reason != lbfgs::StopReason::NonFiniteStart {
            any_finite_start = true;
        }
        if !minimum.value.is_finite() {
            continue;
        }
        if minimum.reason == lbfgs::StopReason::Converged {
            best = Some((minimum, restart));
            converged = true;
            break;
        }
        if best
            .as_ref()
            .is_none_or(|(prev, _)| minimum.value < prev.value)
        {
            best = Some((minimum, restart));
        }
    }
    let Some((minimum, restarts_used)) = best else {
        return Err(Error::EstimationFailure(if any_finite_start {
            "no restart produced a finite objective".into()
        } else {
            "objective non-finite at every starting value".into()
        }));
    };

    let status = if converged {
        Convergence::Converged
    } else {
        Convergence::RestartExhausted
    };
    let mut result = build_result(
        &layout,
        &prepared,
        &minimum.x,
        status,
        restarts_used,
        config,
    )?;
    result.optimizer_iterations = minimum.iterations;
    result.gradient_norm = minimum.gradient_norm;
    Ok(result)
}

/// Assembles a FitResult from an optimum: relabels classes by the primary
/// outcome's knot, re-encodes, and computes likelihood, posteriors, modal
/// classes, and the original-scale parameter table (without SEs).
pub(crate) fn build_result(
    layout: &ModelLayout,
    prepared: &[Individual],
    v: &[f64],
    status: Convergence,
    restarts_used: usize,
    config: &FitConfig,
) -> Result<FitResult> {
    build_result_from_model(layout, prepared, layout.decode(v), status, restarts_used, config)
}

/// As [`build_result`], but from an already-decoded model; estimates come
/// from the model verbatim (no box-encoding roundtrip on the knots).
pub(crate) fn build_result_from_model(
    layout: &ModelLayout,
    prepared: &[Individual],
    mut model: MixtureModel,
    status: Convergence,
    restarts_used: usize,
    config: &FitConfig,
) -> Result<FitResult> {
    model.relabel_by_knot(layout.outcomes.primary());
    let v_aligned = layout.encode(&model)?;
    let log_likelihood = mixture::total_log_likelihood(&model, prepared)?;

    let k = layout.k;
    let mut posteriors = Vec::with_capacity(prepared.len());
    for ind in prepared {
        posteriors.push(mixture::posterior_probabilities(&model, ind)?);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed.wrapping_add(0xC1A5_51F1));
    let modal_classes: Vec<usize> = posteriors
        .iter()
        .map(|p| mixture::classify(p, &mut rng))
        .collect();
    let mut mixing = vec![0.0; k];
    for post in &posteriors {
        for (m, p) in mixing.iter_mut().zip(post) {
            *m += p;
        }
    }
    for m in &mut mixing {
        *m /= prepared.len() as f64;
    }

    let parameters = report_table(layout, &model);
    Ok(FitResult {
        layout: layout.clone(),
        model,
        status,
        restarts_used,
        log_likelihood,
        n_used: prepared.len(),
        parameters,
        mixing_proportions: mixing,
        posteriors,
        modal_classes,
        se_available: false,
        parameter_vector: v_aligned,
        optimizer_iterations: 0,
        gradient_norm: f64::NAN,
    })
}

/// Canonical reporting-scale parameter names for one layout, in table order.
pub fn parameter_names(layout: &ModelLayout) -> Vec<String> {
    let mut names = Vec::with_capacity(layout.dim());
    let outcome_labels: &[&str] = match layout.outcomes {
        OutcomeSelection::Joint => &["y", "z"],
        OutcomeSelection::YOnly => &["y"],
        OutcomeSelection::ZOnly => &["z"],
    };
    for c in 1..=layout.k {
        for u in outcome_labels {
            names.push(format!("class{c}.{u}.mean.intercept"));
            names.push(format!("class{c}.{u}.mean.slope1"));
            names.push(format!("class{c}.{u}.mean.slope2"));
            names.push(format!("class{c}.{u}.knot"));
        }
        match layout.outcomes {
            OutcomeSelection::Joint => {
                for (r, c2) in upper_triangle_pairs(3) {
                    names.push(format!("class{c}.psi.y.{r}{c2}"));
                }
                for r in 0..3 {
                    for c2 in 0..3 {
                        names.push(format!("class{c}.psi.yz.{r}{c2}"));
                    }
                }
                for (r, c2) in upper_triangle_pairs(3) {
                    names.push(format!("class{c}.psi.z.{r}{c2}"));
                }
                names.push(format!("class{c}.residual.y"));
                names.push(format!("class{c}.residual.z"));
                names.push(format!("class{c}.residual.yz"));
            }
            _ => {
                let u = outcome_labels[0];
                for (r, c2) in upper_triangle_pairs(3) {
                    names.push(format!("class{c}.psi.{u}.{r}{c2}"));
                }
                names.push(format!("class{c}.residual.{u}"));
            }
        }
    }
    for c in 2..=layout.k {
        names.push(format!("gating.class{c}.intercept"));
        for j in 1..=layout.covariate_count {
            names.push(format!("gating.class{c}.x{j}"));
        }
    }
    names
}

pub(crate) fn upper_triangle_pairs(n: usize) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    for r in 0..n {
        for c in r..n {
            out.push((r, c));
        }
    }
    out
}

/// Reporting-scale estimates for one model, ordered as [`parameter_names`].
pub fn parameter_values(layout: &ModelLayout, model: &MixtureModel) -> Vec<f64> {
    let mut values = Vec::with_capacity(layout.dim());
    for params in &model.classes {
        let (orig_y, orig_z) = params.original_means();
        let cov_orig = params.original_cov();
        match layout.outcomes {
            OutcomeSelection::Joint => {
                values.extend([
                    orig_y.intercept,
                    orig_y.slope1,
                    orig_y.slope2,
                    params.y.knot,
                    orig_z.intercept,
                    orig_z.slope1,
                    orig_z.slope2,
                    params.z.knot,
                ]);
                for (r, c) in upper_triangle_pairs(3) {
                    values.push(cov_orig[(r, c)]);
                }
                for r in 0..3 {
                    for c in 0..3 {
                        values.push(cov_orig[(r, 3 + c)]);
                    }
                }
                for (r, c) in upper_triangle_pairs(3) {
                    values.push(cov_orig[(3 + r, 3 + c)]);
                }
                values.extend([
                    params.y.residual_var,
                    params.z.residual_var,
                    params.residual_cov,
                ]);
            }
            OutcomeSelection::YOnly | OutcomeSelection::ZOnly => {
                let outcome = layout.outcomes.primary();
                let (orig, offset) = match outcome {
                    Outcome::Y => (orig_y, 0),
                    Outcome::Z => (orig_z, 3),
                };
                let p = params.outcome(outcome);
                values.extend([orig.intercept, orig.slope1, orig.slope2, p.knot]);
                for (r, c) in upper_triangle_pairs(3) {
                    values.push(cov_orig[(offset + r, offset + c)]);
                }
                values.push(p.residual_var);
            }
        }
    }
    for class in &model.gating.classes {
        values.push(class.intercept);
        values.extend(class.slopes.iter());
    }
    values
}

/// Original-scale parameter table for one model, without inference columns.
pub fn report_table(layout: &ModelLayout, model: &MixtureModel) -> Vec<ParameterReport> {
    let names = parameter_names(layout);
    let values = parameter_values(layout, model);
    names
        .into_iter()
        .zip(values)
        .map(|(name, estimate)| {
            let odds_ratio = if name.starts_with("gating.") {
                Some(OddsRatio {
                    estimate: estimate.exp(),
                    ci_lower: None,
                    ci_upper: None,
                })
            } else {
                None
            };
            ParameterReport {
                name,
                estimate,
                se: None,
                ci_lower: None,
                ci_upper: None,
                odds_ratio,
            }
        })
        .collect()
}

/// The original-scale table of a fit (means, knots, covariances,
/// associations, residuals, gating with odds ratios).
pub fn report_original_scale(fit: &FitResult) -> Vec<ParameterReport> {
    fit.parameters.clone()
}

#[doc(hidden)]
pub fn debug_starting_objective(
    data: &[Individual],
    k: usize,
    outcomes: OutcomeSelection,
    config: &FitConfig,
) -> std::result::Result<(f64, Vec<f64>), String> {
    let (prepared, _rows) = prepare_data(data, outcomes).map_err(|e| e.to_string())?;
    let knot_box =
        KnotBox::from_data(&prepared, config.knot_margin_waves).map_err(|e| e.to_string())?;
    let layout =
        ModelLayout::new(k, outcomes, prepared[0].x.len(), knot_box).map_err(|e| e.to_string())?;
    let start_model =
        start::starting_model(&prepared, &layout, config.seed, 1).map_err(|e| e.to_string())?;
    let v0 = layout.encode(&start_model).map_err(|e| e.to_string())?;
    let objective = Objective {
        layout: &layout,
        data: &prepared,
    };
    let model = layout.decode(&v0);
    for ind in &prepared {
        let mut ws = DensityWorkspace::new();
        if let Err(e) = mixture::joint_log_terms(&model, ind, &mut ws) {
            return Err(format!("density failure for {}: {e}", ind.id));
        }
    }
    Ok((objective.value(&v0), v0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::{build_condition, generate_dataset, Allocation, AssignmentMode, Scenario};

    fn quick_config(seed: u64) -> FitConfig {
        FitConfig {
            max_restarts: 3,
            max_iterations: 400,
            seed,
            ..Default::default()
        }
    }

    #[test]
    fn single_class_fit_recovers_pooled_parameters() {
        let condition = build_condition(Scenario::One, 1.0, Allocation::Balanced, 1.0, -0.3)
            .unwrap();
        let dataset =
            generate_dataset(&condition, 77, AssignmentMode::Multinomial, 120).unwrap();
        let fit = fit(
            &dataset.individuals,
            1,
            OutcomeSelection::Joint,
            &quick_config(5),
        )
        .unwrap();
        assert!(fit.converged(), "status: {:?}", fit.status);
        assert_eq!(fit.mixing_proportions, vec![1.0]);
        // pooled data mixes the two generating classes; the knot estimate
        // lands between the class knots
        let knot = fit.model.classes[0].y.knot;
        assert!((3.0..5.5).contains(&knot), "pooled knot {knot}");
    }

    #[test]
    fn refit_with_same_seed_is_bit_identical() {
        let condition = build_condition(Scenario::One, 1.0, Allocation::Balanced, 1.0, 0.3)
            .unwrap();
        let dataset =
            generate_dataset(&condition, 3, AssignmentMode::Multinomial, 60).unwrap();
        let cfg = quick_config(9);
        let a = fit(&dataset.individuals, 1, OutcomeSelection::Joint, &cfg).unwrap();
        let b = fit(&dataset.individuals, 1, OutcomeSelection::Joint, &cfg).unwrap();
        assert_eq!(a.parameter_vector, b.parameter_vector);
        assert_eq!(a.log_likelihood, b.log_likelihood);
        assert_eq!(a.modal_classes, b.modal_classes);
    }

    #[test]
    fn univariate_fit_has_univariate_parameter_table() {
        let condition = build_condition(Scenario::One, 1.0, Allocation::Balanced, 1.0, 0.0)
            .unwrap();
        let dataset =
            generate_dataset(&condition, 21, AssignmentMode::Multinomial, 60).unwrap();
        let fit = fit(
            &dataset.individuals,
            1,
            OutcomeSelection::ZOnly,
            &quick_config(1),
        )
        .unwrap();
        assert_eq!(fit.parameters.len(), 11);
        assert!(fit.parameters.iter().all(|p| p.name.contains(".z")));
    }

    #[test]
    fn k1_loglik_matches_direct_density_sum() {
        let condition = build_condition(Scenario::One, 1.0, Allocation::Balanced, 1.0, 0.0)
            .unwrap();
        let dataset =
            generate_dataset(&condition, 8, AssignmentMode::Multinomial, 40).unwrap();
        let fit = fit(
            &dataset.individuals,
            1,
            OutcomeSelection::Joint,
            &quick_config(2),
        )
        .unwrap();
        let direct: f64 = dataset
            .individuals
            .iter()
            .map(|ind| crate::mixture::class_log_density(ind, &fit.model.classes[0]).unwrap())
            .sum();
        assert!((fit.log_likelihood - direct).abs() < 1e-8);
    }
}
