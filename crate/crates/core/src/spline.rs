//! Bilinear-spline trajectory math: factor loadings, the reparameterization
//! between (intercept, slope1, slope2) and (knot measurement, mean slope,
//! half slope difference), and class-specific implied moments for a pair of
//! correlated outcomes measured on a shared occasion grid.
//!
//! Everything here is pure and thread-safe. Growth-factor means and the
//! joint 6x6 covariance inside [`ClassParameters`] live on the
//! reparameterized scale; the transform operations move quantities between
//! the two scales exactly.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math;

/// The two parallel outcomes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Outcome {
    Y,
    Z,
}

impl Outcome {
    pub fn label(self) -> &'static str {
        match self {
            Outcome::Y => "y",
            Outcome::Z => "z",
        }
    }
}

/// One subject's measurement occasions plus per-outcome observation masks.
///
/// Both outcomes share the occasion vector; outcome-specific missingness is
/// carried by the masks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Schedule {
    times: Vec<f64>,
    observed_y: Vec<bool>,
    observed_z: Vec<bool>,
}

impl Schedule {
    pub fn new(times: Vec<f64>, observed_y: Vec<bool>, observed_z: Vec<bool>) -> Result<Self> {
        if times.is_empty() {
            return Err(Error::invalid("schedule needs at least one occasion"));
        }
        if observed_y.len() != times.len() || observed_z.len() != times.len() {
            return Err(Error::invalid(format!(
                "mask lengths ({}, {}) must match occasion count {}",
                observed_y.len(),
                observed_z.len(),
                times.len()
            )));
        }
        if times.iter().any(|t| !t.is_finite()) {
            return Err(Error::invalid("occasion times must be finite"));
        }
        if times.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::invalid("occasion times must be strictly increasing"));
        }
        if !observed_y.iter().chain(observed_z.iter()).any(|&o| o) {
            return Err(Error::invalid("at least one entry must be observed"));
        }
        Ok(Self {
            times,
            observed_y,
            observed_z,
        })
    }

    /// Fully observed schedule on the given occasions.
    pub fn complete(times: Vec<f64>) -> Result<Self> {
        let n = times.len();
        Self::new(times, vec![true; n], vec![true; n])
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn observed(&self, outcome: Outcome) -> &[bool] {
        match outcome {
            Outcome::Y => &self.observed_y,
            Outcome::Z => &self.observed_z,
        }
    }

    /// Count of observed entries across both outcomes.
    pub fn observed_count(&self) -> usize {
        self.observed_y.iter().filter(|&&o| o).count()
            + self.observed_z.iter().filter(|&&o| o).count()
    }

    /// Restrict observation to a single outcome (the other mask goes all
    /// false). Errors if that leaves nothing observed.
    pub fn restricted_to(&self, outcome: Outcome) -> Result<Self> {
        let n = self.len();
        let (oy, oz) = match outcome {
            Outcome::Y => (self.observed_y.clone(), vec![false; n]),
            Outcome::Z => (vec![false; n], self.observed_z.clone()),
        };
        if !oy.iter().chain(oz.iter()).any(|&o| o) {
            return Err(Error::invalid(format!(
                "no observed {} entries to restrict to",
                outcome.label()
            )));
        }
        Ok(Self {
            times: self.times.clone(),
            observed_y: oy,
            observed_z: oz,
        })
    }
}

/// Growth factors on the interpretable scale: intercept, pre-knot slope,
/// post-knot slope.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GrowthFactorsOriginal {
    pub intercept: f64,
    pub slope1: f64,
    pub slope2: f64,
}

/// Growth factors on the estimation scale: measurement at the knot, mean of
/// the two slopes, half the slope difference.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GrowthFactorsReparam {
    pub knot_measurement: f64,
    pub mean_slope: f64,
    pub half_slope_diff: f64,
}

impl GrowthFactorsReparam {
    pub fn as_array(&self) -> [f64; 3] {
        [self.knot_measurement, self.mean_slope, self.half_slope_diff]
    }

    pub fn from_array(a: [f64; 3]) -> Self {
        Self {
            knot_measurement: a[0],
            mean_slope: a[1],
            half_slope_diff: a[2],
        }
    }
}

/// Piecewise evaluation of the trajectory mean at time `t` on the original
/// scale: two linear segments joined at the knot.
pub fn piecewise_mean(gf: &GrowthFactorsOriginal, knot: f64, t: f64) -> f64 {
    if t <= knot {
        gf.intercept + gf.slope1 * t
    } else {
        gf.intercept + gf.slope1 * knot + gf.slope2 * (t - knot)
    }
}

/// Per-outcome block of class parameters: reparameterized mean vector, knot
/// location, residual variance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutcomeParams {
    pub mean: GrowthFactorsReparam,
    pub knot: f64,
    pub residual_var: f64,
}

/// One latent class's full parameter block for the bivariate model.
///
/// `joint_cov` is the 6x6 growth-factor covariance on the reparameterized
/// scale, y-block first. The residual structure is homogeneous over time:
/// occasion-wise 2x2 covariance `[[theta_y, theta_yz], [theta_yz, theta_z]]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassParameters {
    pub y: OutcomeParams,
    pub z: OutcomeParams,
    pub joint_cov: DMatrix<f64>,
    pub residual_cov: f64,
}

impl ClassParameters {
    pub fn new(
        y: OutcomeParams,
        z: OutcomeParams,
        joint_cov: DMatrix<f64>,
        residual_cov: f64,
    ) -> Result<Self> {
        let params = Self {
            y,
            z,
            joint_cov,
            residual_cov,
        };
        params.validate()?;
        Ok(params)
    }

    pub fn validate(&self) -> Result<()> {
        if self.joint_cov.nrows() != 6 || self.joint_cov.ncols() != 6 {
            return Err(Error::invalid("joint covariance must be 6x6"));
        }
        if math::max_asymmetry(&self.joint_cov) > 1e-8 {
            return Err(Error::invalid("joint covariance must be symmetric"));
        }
        // symmetric, so the column-major slice doubles as row-major
        let mut buf: Vec<f64> = self.joint_cov.as_slice().to_vec();
        if !math::cholesky_in_place(&mut buf, 6) {
            return Err(Error::invalid("joint covariance must be positive definite"));
        }
        for (p, label) in [(&self.y, "y"), (&self.z, "z")] {
            if !p.knot.is_finite() {
                return Err(Error::invalid(format!("{label} knot must be finite")));
            }
            if !(p.residual_var > 0.0) {
                return Err(Error::invalid(format!(
                    "{label} residual variance must be positive"
                )));
            }
        }
        let det =
            self.y.residual_var * self.z.residual_var - self.residual_cov * self.residual_cov;
        if !(det > 0.0) {
            return Err(Error::invalid(
                "residual 2x2 matrix must be positive definite",
            ));
        }
        Ok(())
    }

    pub fn outcome(&self, outcome: Outcome) -> &OutcomeParams {
        match outcome {
            Outcome::Y => &self.y,
            Outcome::Z => &self.z,
        }
    }

    /// Growth-factor means on the original scale, per outcome.
    pub fn original_means(&self) -> (GrowthFactorsOriginal, GrowthFactorsOriginal) {
        (
            inverse_transform_mean(&self.y.mean, self.y.knot),
            inverse_transform_mean(&self.z.mean, self.z.knot),
        )
    }

    /// Joint growth-factor covariance on the original scale.
    pub fn original_cov(&self) -> DMatrix<f64> {
        transform_covariance(
            &self.joint_cov,
            self.y.knot,
            self.z.knot,
            TransformDirection::ToOriginal,
        )
        .expect("stored covariance is symmetric")
    }
}

/// Class-specific model-implied moments for one subject, restricted to the
/// observed entries (y-block rows first, then z-block).
#[derive(Debug, Clone, PartialEq)]
pub struct ImpliedMoments {
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
}

/// Direction for [`transform_covariance`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TransformDirection {
    ToReparam,
    ToOriginal,
}

/// Factor-loading matrix for one outcome: row j is `(1, t_j - knot, |t_j - knot|)`.
pub fn factor_loadings(schedule: &Schedule, knot: f64) -> Result<DMatrix<f64>> {
    if !knot.is_finite() {
        return Err(Error::invalid("knot must be finite"));
    }
    let j = schedule.len();
    let mut lambda = DMatrix::zeros(j, 3);
    for (row, &t) in schedule.times().iter().enumerate() {
        let dt = t - knot;
        lambda[(row, 0)] = 1.0;
        lambda[(row, 1)] = dt;
        lambda[(row, 2)] = dt.abs();
    }
    Ok(lambda)
}

/// Maps original growth factors to the reparameterized scale at the given knot.
pub fn reparameterize(gf: &GrowthFactorsOriginal, knot: f64) -> GrowthFactorsReparam {
    GrowthFactorsReparam {
        knot_measurement: gf.intercept + knot * gf.slope1,
        mean_slope: 0.5 * (gf.slope1 + gf.slope2),
        half_slope_diff: 0.5 * (gf.slope2 - gf.slope1),
    }
}

/// Exact inverse of [`reparameterize`].
pub fn inverse_transform_mean(gf: &GrowthFactorsReparam, knot: f64) -> GrowthFactorsOriginal {
    let slope1 = gf.mean_slope - gf.half_slope_diff;
    let slope2 = gf.mean_slope + gf.half_slope_diff;
    GrowthFactorsOriginal {
        intercept: gf.knot_measurement - knot * slope1,
        slope1,
        slope2,
    }
}

/// Per-outcome 3x3 mean-transform matrix `T` with `reparam = T * original`.
fn transform_block(knot: f64, direction: TransformDirection) -> DMatrix<f64> {
    match direction {
        TransformDirection::ToReparam => {
            DMatrix::from_row_slice(3, 3, &[1.0, knot, 0.0, 0.0, 0.5, 0.5, 0.0, -0.5, 0.5])
        }
        TransformDirection::ToOriginal => {
            DMatrix::from_row_slice(3, 3, &[1.0, -knot, knot, 0.0, 1.0, -1.0, 0.0, 1.0, 1.0])
        }
    }
}

/// Transforms a joint 6x6 growth-factor covariance between scales by
/// congruence with the block-diagonal mean transform.
pub fn transform_covariance(
    cov6: &DMatrix<f64>,
    knot_y: f64,
    knot_z: f64,
    direction: TransformDirection,
) -> Result<DMatrix<f64>> {
    if cov6.nrows() != 6 || cov6.ncols() != 6 {
        return Err(Error::invalid("covariance must be 6x6"));
    }
    if math::max_asymmetry(cov6) > 1e-8 {
        return Err(Error::invalid("covariance must be symmetric"));
    }
    if !knot_y.is_finite() || !knot_z.is_finite() {
        return Err(Error::invalid("knots must be finite"));
    }
    let mut b = DMatrix::zeros(6, 6);
    b.view_mut((0, 0), (3, 3))
        .copy_from(&transform_block(knot_y, direction));
    b.view_mut((3, 3), (3, 3))
        .copy_from(&transform_block(knot_z, direction));
    let mut out = &b * cov6 * b.transpose();
    // congruence preserves symmetry; clean up rounding
    for i in 0..6 {
        for j in 0..i {
            let s = 0.5 * (out[(i, j)] + out[(j, i)]);
            out[(i, j)] = s;
            out[(j, i)] = s;
        }
    }
    Ok(out)
}

/// Model-implied mean and covariance of the observed entries for one class.
///
/// The mean stacks `Lambda(knot_y) * mean_y` over `Lambda(knot_z) * mean_z`;
/// the covariance adds the occasion-homogeneous residual blocks; rows and
/// columns of masked entries are dropped.
pub fn implied_moments(params: &ClassParameters, schedule: &Schedule) -> Result<ImpliedMoments> {
    if schedule.observed_count() == 0 {
        return Err(Error::EmptyMoments);
    }
    let j = schedule.len();
    let lambda_y = factor_loadings(schedule, params.y.knot)?;
    let lambda_z = factor_loadings(schedule, params.z.knot)?;

    // full 2J moments, then mask filtering
    let mut full_mean = DVector::zeros(2 * j);
    let mean_y = params.y.mean.as_array();
    let mean_z = params.z.mean.as_array();
    for row in 0..j {
        full_mean[row] = (0..3).map(|c| lambda_y[(row, c)] * mean_y[c]).sum();
        full_mean[j + row] = (0..3).map(|c| lambda_z[(row, c)] * mean_z[c]).sum();
    }

    let mut lambda_blk = DMatrix::zeros(2 * j, 6);
    lambda_blk.view_mut((0, 0), (j, 3)).copy_from(&lambda_y);
    lambda_blk.view_mut((j, 3), (j, 3)).copy_from(&lambda_z);
    let mut full_cov = &lambda_blk * &params.joint_cov * lambda_blk.transpose();
    for row in 0..j {
        full_cov[(row, row)] += params.y.residual_var;
        full_cov[(j + row, j + row)] += params.z.residual_var;
        full_cov[(row, j + row)] += params.residual_cov;
        full_cov[(j + row, row)] += params.residual_cov;
    }

    let keep: Vec<usize> = (0..j)
        .filter(|&row| schedule.observed(Outcome::Y)[row])
        .chain((0..j).filter(|&row| schedule.observed(Outcome::Z)[row]).map(|row| j + row))
        .collect();
    let m = keep.len();
    let mut mean = DVector::zeros(m);
    let mut cov = DMatrix::zeros(m, m);
    for (a, &ia) in keep.iter().enumerate() {
        mean[a] = full_mean[ia];
        for (b, &ib) in keep.iter().enumerate() {
            cov[(a, b)] = full_cov[(ia, ib)];
        }
    }
    Ok(ImpliedMoments { mean, cov })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn schedule(times: &[f64]) -> Schedule {
        Schedule::complete(times.to_vec()).unwrap()
    }

    /// Covariance fixture: intercept variance 25, slope variances 1,
    /// within-outcome correlations 0.3, uniform cross correlation rho.
    fn joint_cov_fixture(rho: f64) -> DMatrix<f64> {
        let sd = [5.0, 1.0, 1.0];
        let mut cov = DMatrix::zeros(6, 6);
        for i in 0..6 {
            for j in 0..6 {
                let (si, sj) = (sd[i % 3], sd[j % 3]);
                let corr = if i == j {
                    1.0
                } else if (i < 3) == (j < 3) {
                    0.3
                } else {
                    rho
                };
                cov[(i, j)] = corr * si * sj;
            }
        }
        cov
    }

    fn params_fixture(rho: f64) -> ClassParameters {
        let orig = GrowthFactorsOriginal {
            intercept: 98.0,
            slope1: 5.0,
            slope2: 2.6,
        };
        let knot = 4.0;
        let mean = reparameterize(&orig, knot);
        let cov_reparam =
            transform_covariance(&joint_cov_fixture(rho), knot, knot, TransformDirection::ToReparam)
                .unwrap();
        ClassParameters::new(
            OutcomeParams {
                mean,
                knot,
                residual_var: 1.0,
            },
            OutcomeParams {
                mean,
                knot,
                residual_var: 1.0,
            },
            cov_reparam,
            0.3,
        )
        .unwrap()
    }

    #[test]
    fn loading_at_the_knot_is_unit_row() {
        let lambda = factor_loadings(&schedule(&[4.0]), 4.0).unwrap();
        assert_eq!(lambda[(0, 0)], 1.0);
        assert_eq!(lambda[(0, 1)], 0.0);
        assert_eq!(lambda[(0, 2)], 0.0);
    }

    #[test]
    fn loading_rows_before_and_after_knot() {
        let lambda = factor_loadings(&schedule(&[1.0, 5.0]), 4.0).unwrap();
        assert_eq!(
            (lambda[(0, 0)], lambda[(0, 1)], lambda[(0, 2)]),
            (1.0, -3.0, 3.0)
        );
        assert_eq!(
            (lambda[(1, 0)], lambda[(1, 1)], lambda[(1, 2)]),
            (1.0, 1.0, 1.0)
        );
    }

    #[test]
    fn loading_rejects_non_finite_knot() {
        assert!(factor_loadings(&schedule(&[1.0]), f64::NAN).is_err());
    }

    #[test]
    fn schedule_rejects_non_monotone_times() {
        assert!(Schedule::complete(vec![1.0, 1.0]).is_err());
        assert!(Schedule::complete(vec![2.0, 1.0]).is_err());
    }

    #[test]
    fn reparameterize_scenario_one_means() {
        let gf = GrowthFactorsOriginal {
            intercept: 98.0,
            slope1: 5.0,
            slope2: 2.6,
        };
        let r = reparameterize(&gf, 4.0);
        assert!((r.knot_measurement - 118.0).abs() < 1e-12);
        assert!((r.mean_slope - 3.8).abs() < 1e-12);
        assert!((r.half_slope_diff + 1.2).abs() < 1e-12);

        let r0 = reparameterize(&gf, 0.0);
        assert!((r0.knot_measurement - 98.0).abs() < 1e-12);
    }

    #[test]
    fn equal_slopes_have_zero_half_difference() {
        let gf = GrowthFactorsOriginal {
            intercept: 7.0,
            slope1: 1.3,
            slope2: 1.3,
        };
        assert_eq!(reparameterize(&gf, 2.5).half_slope_diff, 0.0);
    }

    #[test]
    fn inverse_transform_recovers_scenario_one() {
        let r = GrowthFactorsReparam {
            knot_measurement: 118.0,
            mean_slope: 3.8,
            half_slope_diff: -1.2,
        };
        let gf = inverse_transform_mean(&r, 4.0);
        assert!((gf.intercept - 98.0).abs() < 1e-12);
        assert!((gf.slope1 - 5.0).abs() < 1e-12);
        assert!((gf.slope2 - 2.6).abs() < 1e-12);
    }

    #[test]
    fn flat_trajectory_is_a_fixed_point() {
        let r = GrowthFactorsReparam {
            knot_measurement: 42.0,
            mean_slope: 0.0,
            half_slope_diff: 0.0,
        };
        let gf = inverse_transform_mean(&r, 3.7);
        assert_eq!((gf.intercept, gf.slope1, gf.slope2), (42.0, 0.0, 0.0));
    }

    #[test]
    fn covariance_transform_identity_at_zero_knots() {
        // For gamma = 0 the intercept row is untouched and the slope block mixes
        // with the 1/2 pattern: var(mean slope) = var(half diff) = 1/2, cov = 0
        // for an identity input.
        let eye = DMatrix::identity(6, 6);
        let out =
            transform_covariance(&eye, 0.0, 0.0, TransformDirection::ToReparam).unwrap();
        assert!((out[(0, 0)] - 1.0).abs() < 1e-12);
        assert!((out[(1, 1)] - 0.5).abs() < 1e-12);
        assert!((out[(2, 2)] - 0.5).abs() < 1e-12);
        assert!(out[(1, 2)].abs() < 1e-12);
        assert!(out[(0, 1)].abs() < 1e-12);
    }

    #[test]
    fn covariance_transform_expands_intercept_variance() {
        // diag(25,1,1) per outcome, knot 4, no cross-correlation:
        // var(eta0 + 4*eta1) = 25 + 16.
        let mut cov = DMatrix::zeros(6, 6);
        for (i, v) in [25.0, 1.0, 1.0, 25.0, 1.0, 1.0].iter().enumerate() {
            cov[(i, i)] = *v;
        }
        let out = transform_covariance(&cov, 4.0, 4.0, TransformDirection::ToReparam).unwrap();
        assert!((out[(0, 0)] - 41.0).abs() < 1e-10);
        assert!((out[(3, 3)] - 41.0).abs() < 1e-10);
    }

    #[test]
    fn covariance_transform_rejects_asymmetric_input() {
        let mut cov = DMatrix::identity(6, 6);
        cov[(0, 1)] = 0.5;
        assert!(transform_covariance(&cov, 1.0, 1.0, TransformDirection::ToReparam).is_err());
    }

    #[test]
    fn implied_mean_at_knot_single_occasion() {
        let params = params_fixture(0.0);
        let sched = Schedule::new(vec![4.0], vec![true], vec![false]).unwrap();
        let moments = implied_moments(&params, &sched).unwrap();
        assert_eq!(moments.mean.len(), 1);
        assert!((moments.mean[0] - 118.0).abs() < 1e-12);
        let expected_var = params.joint_cov[(0, 0)] + params.y.residual_var;
        assert!((moments.cov[(0, 0)] - expected_var).abs() < 1e-10);
    }

    #[test]
    fn implied_mean_curve_matches_hand_values() {
        let params = params_fixture(0.0);
        let sched = Schedule::new(
            vec![0.0, 4.0, 9.0],
            vec![true, true, true],
            vec![false, false, false],
        )
        .unwrap();
        let moments = implied_moments(&params, &sched).unwrap();
        let expected = [98.0, 118.0, 131.0];
        for (got, want) in moments.mean.iter().zip(expected) {
            assert!((got - want).abs() < 1e-10, "got {got}, want {want}");
        }
    }

    #[test]
    fn implied_cov_positive_definite_on_ten_wave_grid() {
        for rho in [-0.3, 0.0, 0.3] {
            let params = params_fixture(rho);
            let times: Vec<f64> = (0..10).map(|j| j as f64).collect();
            let moments = implied_moments(&params, &schedule(&times)).unwrap();
            assert!(math::max_asymmetry(&moments.cov) < 1e-10);
            assert!(
                math::min_eigenvalue(&moments.cov) > 0.0,
                "rho {rho} produced non-PD implied covariance"
            );
        }
    }

    #[test]
    fn fully_masked_schedule_is_rejected() {
        assert!(Schedule::new(vec![1.0], vec![false], vec![false]).is_err());
    }

    #[test]
    fn masking_commutes_with_moment_computation() {
        let params = params_fixture(0.3);
        let times = vec![0.0, 1.0, 2.0];
        let full = implied_moments(&params, &schedule(&times)).unwrap();
        let masked = Schedule::new(
            times,
            vec![true, false, true],
            vec![false, true, true],
        )
        .unwrap();
        let sub = implied_moments(&params, &masked).unwrap();
        // observed positions in the full 2J layout: y0, y2, z1, z2
        let keep = [0usize, 2, 4, 5];
        for (a, &ia) in keep.iter().enumerate() {
            assert!((sub.mean[a] - full.mean[ia]).abs() < 1e-14);
            for (b, &ib) in keep.iter().enumerate() {
                assert!((sub.cov[(a, b)] - full.cov[(ia, ib)]).abs() < 1e-14);
            }
        }
    }

    proptest! {
        #[test]
        fn loading_columns_satisfy_absolute_value_identity(
            times in proptest::collection::vec(-50.0..50.0f64, 1..8),
            knot in -20.0..20.0f64,
        ) {
            let mut sorted = times.clone();
            sorted.sort_by(f64::total_cmp);
            sorted.dedup_by(|a, b| (*a - *b).abs() < 1e-9);
            let sched = Schedule::complete(sorted).unwrap();
            let lambda = factor_loadings(&sched, knot).unwrap();
            for row in 0..lambda.nrows() {
                prop_assert!((lambda[(row, 1)].abs() - lambda[(row, 2)]).abs() < 1e-12);
                prop_assert!(lambda[(row, 2)] >= 0.0);
            }
        }

        #[test]
        fn reparameterization_roundtrips(
            intercept in -1e6..1e6f64,
            slope1 in -1e6..1e6f64,
            slope2 in -1e6..1e6f64,
            knot in -100.0..100.0f64,
        ) {
            let gf = GrowthFactorsOriginal { intercept, slope1, slope2 };
            let back = inverse_transform_mean(&reparameterize(&gf, knot), knot);
            let tol = 1e-12 * intercept.abs().max(slope1.abs()).max(slope2.abs()).max(1.0);
            prop_assert!((back.intercept - gf.intercept).abs() <= tol * knot.abs().max(1.0));
            prop_assert!((back.slope1 - gf.slope1).abs() <= tol);
            prop_assert!((back.slope2 - gf.slope2).abs() <= tol);
        }

        #[test]
        fn covariance_transform_roundtrips_and_preserves_pd(
            seed in 0u64..500,
            knot_y in -5.0..5.0f64,
            knot_z in -5.0..5.0f64,
        ) {
            use rand::{Rng as _, SeedableRng as _};
            use rand_chacha::ChaCha8Rng;
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            // random PD matrix: A A^T + I
            let a = DMatrix::from_fn(6, 6, |_, _| rng.gen_range(-1.0..1.0));
            let cov = &a * a.transpose() + DMatrix::identity(6, 6);
            let fwd = transform_covariance(&cov, knot_y, knot_z, TransformDirection::ToReparam).unwrap();
            prop_assert!(math::min_eigenvalue(&fwd) > 0.0);
            let back = transform_covariance(&fwd, knot_y, knot_z, TransformDirection::ToOriginal).unwrap();
            let scale = cov.amax();
            for i in 0..6 {
                for j in 0..6 {
                    prop_assert!((back[(i, j)] - cov[(i, j)]).abs() < 1e-10 * scale.max(1.0));
                }
            }
        }

        #[test]
        fn implied_mean_matches_piecewise_evaluation(
            seed in 0u64..2000,
        ) {
            use rand::{Rng as _, SeedableRng as _};
            use rand_chacha::ChaCha8Rng;
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
            for _ in 0..5 {
                let orig = GrowthFactorsOriginal {
                    intercept: rng.gen_range(-100.0..100.0),
                    slope1: rng.gen_range(-10.0..10.0),
                    slope2: rng.gen_range(-10.0..10.0),
                };
                let knot = rng.gen_range(-5.0..5.0);
                let t = rng.gen_range(-10.0..10.0);
                let mean = reparameterize(&orig, knot);
                let sched = Schedule::new(vec![t], vec![true], vec![false]).unwrap();
                let params = ClassParameters::new(
                    OutcomeParams { mean, knot, residual_var: 1.0 },
                    OutcomeParams {
                        mean: GrowthFactorsReparam::from_array([0.0, 0.0, 0.0]),
                        knot: 0.0,
                        residual_var: 1.0,
                    },
                    DMatrix::identity(6, 6),
                    0.0,
                ).unwrap();
                let moments = implied_moments(&params, &sched).unwrap();
                let direct = piecewise_mean(&orig, knot, t);
                prop_assert!((moments.mean[0] - direct).abs() < 1e-10 * direct.abs().max(1.0));
            }
        }
    }
}
