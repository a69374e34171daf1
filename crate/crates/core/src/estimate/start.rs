//! Starting values for the mixture fit.
//!
//! Each individual gets a quick bilinear-spline least-squares fit per
//! outcome with the knot grid-searched over that individual's interior
//! occasions. The per-individual coefficient vectors are clustered into K
//! groups with a plain centroid method; class parameters come from
//! within-group moments. Restart r > 1 reshuffles the cluster seeding and
//! jitters the class means, deterministically from (seed, r).

use nalgebra::DMatrix;
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::math;
use crate::mixture::{GatingClass, GatingParameters, Individual, MixtureModel};
use crate::spline::{ClassParameters, GrowthFactorsReparam, Outcome, OutcomeParams};

use super::encode::{ModelLayout, OutcomeSelection};

/// Per-individual spline summary for one outcome: reparameterized
/// coefficients, best grid knot, residual variance estimate.
#[derive(Debug, Clone, Copy)]
struct SplineFit {
    coef: [f64; 3],
    knot: f64,
    resid_var: f64,
}

/// Ordinary least squares of the observed values on (1, t-knot, |t-knot|).
/// Returns None when fewer than 4 observations or a singular normal matrix.
fn spline_ols(times: &[f64], values: &[f64], knot: f64) -> Option<([f64; 3], f64)> {
    let n = times.len();
    if n < 4 {
        return None;
    }
    let mut xtx = [0.0f64; 9];
    let mut xty = [0.0f64; 3];
    for (&t, &v) in times.iter().zip(values) {
        let row = [1.0, t - knot, (t - knot).abs()];
        for a in 0..3 {
            for b in 0..3 {
                xtx[a * 3 + b] += row[a] * row[b];
            }
            xty[a] += row[a] * v;
        }
    }
    // mild ridge keeps near-collinear grids (knot at the range edge) solvable
    for d in 0..3 {
        xtx[d * 3 + d] += 1e-8 * xtx[d * 3 + d].max(1.0);
    }
    if !math::cholesky_in_place(&mut xtx, 3) {
        return None;
    }
    let mut beta = xty;
    math::forward_substitute(&xtx, 3, &mut beta);
    math::backward_substitute(&xtx, 3, &mut beta);
    let mut sse = 0.0;
    for (&t, &v) in times.iter().zip(values) {
        let fitted = beta[0] + beta[1] * (t - knot) + beta[2] * (t - knot).abs();
        sse += (v - fitted) * (v - fitted);
    }
    Some((beta, sse))
}

/// Best-knot spline fit for one outcome of one individual.
fn fit_individual(ind: &Individual, outcome: Outcome) -> Option<SplineFit> {
    let mask = ind.schedule.observed(outcome);
    let values_full = match outcome {
        Outcome::Y => &ind.y,
        Outcome::Z => &ind.z,
    };
    let mut times = Vec::new();
    let mut values = Vec::new();
    for (j, (&obs, &t)) in mask.iter().zip(ind.schedule.times()).enumerate() {
        if obs {
            times.push(t);
            values.push(values_full[j]);
        }
    }
    let n = times.len();
    if n < 4 {
        return None;
    }
    let mut best: Option<(f64, [f64; 3], f64)> = None;
    for &knot in &times[1..n - 1] {
        if let Some((coef, sse)) = spline_ols(&times, &values, knot) {
            if best.as_ref().is_none_or(|(_, _, s)| sse < *s) {
                best = Some((knot, coef, sse));
            }
        }
    }
    let (knot, coef, sse) = best?;
    Some(SplineFit {
        coef,
        knot,
        resid_var: (sse / (n as f64 - 3.0)).max(1e-3),
    })
}

/// Lloyd iterations with rng-chosen initial centroids; features are
/// standardized beforehand by the caller.
fn kmeans(features: &[Vec<f64>], k: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let n = features.len();
    let d = features[0].len();
    let mut centroid_ids: Vec<usize> = (0..n).collect();
    centroid_ids.shuffle(rng);
    let mut centroids: Vec<Vec<f64>> =
        centroid_ids[..k].iter().map(|&i| features[i].clone()).collect();
    let mut assignment = vec![0usize; n];
    for _ in 0..50 {
        let mut changed = false;
        for (i, f) in features.iter().enumerate() {
            let mut best = 0usize;
            let mut best_d = f64::INFINITY;
            for (c, centroid) in centroids.iter().enumerate() {
                let dist: f64 = f
                    .iter()
                    .zip(centroid)
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum();
                if dist < best_d {
                    best_d = dist;
                    best = c;
                }
            }
            if assignment[i] != best {
                assignment[i] = best;
                changed = true;
            }
        }
        for (c, centroid) in centroids.iter_mut().enumerate() {
            let members: Vec<&Vec<f64>> = features
                .iter()
                .zip(&assignment)
                .filter(|(_, &a)| a == c)
                .map(|(f, _)| f)
                .collect();
            if members.is_empty() {
                continue;
            }
            for dim in 0..d {
                centroid[dim] =
                    members.iter().map(|f| f[dim]).sum::<f64>() / members.len() as f64;
            }
        }
        if !changed {
            break;
        }
    }
    assignment
}

/// Quantile-split fallback when clustering degenerates: groups by mean
/// observed outcome level.
fn quantile_groups(data: &[Individual], keep: &[usize], k: usize) -> Vec<usize> {
    let mut levels: Vec<(usize, f64)> = keep
        .iter()
        .map(|&i| {
            let ind = &data[i];
            let mut sum = 0.0;
            let mut count = 0usize;
            for (j, &obs) in ind.schedule.observed(Outcome::Y).iter().enumerate() {
                if obs {
                    sum += ind.y[j];
                    count += 1;
                }
            }
            for (j, &obs) in ind.schedule.observed(Outcome::Z).iter().enumerate() {
                if obs {
                    sum += ind.z[j];
                    count += 1;
                }
            }
            (i, sum / count.max(1) as f64)
        })
        .collect();
    levels.sort_by(|a, b| a.1.total_cmp(&b.1));
    let mut assignment = vec![0usize; keep.len()];
    let pos: std::collections::HashMap<usize, usize> =
        keep.iter().enumerate().map(|(slot, &i)| (i, slot)).collect();
    for (rank, (i, _)) in levels.iter().enumerate() {
        assignment[pos[i]] = (rank * k / keep.len()).min(k - 1);
    }
    assignment
}

fn mean_and_cov(rows: &[Vec<f64>]) -> (Vec<f64>, DMatrix<f64>) {
    let n = rows.len();
    let d = rows[0].len();
    let mut mean = vec![0.0; d];
    for row in rows {
        for (m, v) in mean.iter_mut().zip(row) {
            *m += v;
        }
    }
    for m in &mut mean {
        *m /= n as f64;
    }
    let mut cov = DMatrix::zeros(d, d);
    if n > 1 {
        for row in rows {
            for a in 0..d {
                for b in 0..d {
                    cov[(a, b)] += (row[a] - mean[a]) * (row[b] - mean[b]);
                }
            }
        }
        cov /= n as f64 - 1.0;
    }
    (mean, cov)
}

/// Shrinks a sample covariance onto its diagonal until it is comfortably PD.
fn regularize_cov(mut cov: DMatrix<f64>) -> DMatrix<f64> {
    let d = cov.nrows();
    let trace: f64 = (0..d).map(|i| cov[(i, i)]).sum();
    let floor = (trace / d as f64).max(1e-2) * 1e-3;
    for i in 0..d {
        if cov[(i, i)] < floor {
            cov[(i, i)] = floor;
        }
    }
    for shrink in 0..8 {
        let mut buf: Vec<f64> = cov.as_slice().to_vec();
        if math::cholesky_in_place(&mut buf, d) {
            return cov;
        }
        let lambda = 0.1 * (shrink as f64 + 1.0);
        let diag: Vec<f64> = (0..d).map(|i| cov[(i, i)]).collect();
        for a in 0..d {
            for b in 0..d {
                if a != b {
                    cov[(a, b)] *= 1.0 - lambda;
                }
            }
            cov[(a, a)] = diag[a] * (1.0 + 0.01 * lambda);
        }
    }
    let diag: Vec<f64> = (0..d).map(|i| cov[(i, i)].max(1e-2)).collect();
    DMatrix::from_diagonal(&nalgebra::DVector::from_vec(diag))
}

pub(crate) fn starting_model(
    data: &[Individual],
    layout: &ModelLayout,
    seed: u64,
    restart: usize,
) -> Result<MixtureModel> {
    let k = layout.k;
    if data.len() < 10 * k {
        return Err(Error::EstimationFailure(format!(
            "need at least {} individuals for K = {k}, got {}",
            10 * k,
            data.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(
        seed ^ (restart as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15),
    );
    let outcomes: Vec<Outcome> = match layout.outcomes {
        OutcomeSelection::Joint => vec![Outcome::Y, Outcome::Z],
        OutcomeSelection::YOnly => vec![Outcome::Y],
        OutcomeSelection::ZOnly => vec![Outcome::Z],
    };

    // per-individual spline fits; individuals lacking a fit for every
    // relevant outcome drop out of the clustering stage
    let mut keep = Vec::new();
    let mut fits: Vec<Vec<SplineFit>> = Vec::new();
    for (i, ind) in data.iter().enumerate() {
        let per_outcome: Option<Vec<SplineFit>> =
            outcomes.iter().map(|&u| fit_individual(ind, u)).collect();
        if let Some(f) = per_outcome {
            keep.push(i);
            fits.push(f);
        }
    }
    if keep.len() < 6 * k {
        return Err(Error::EstimationFailure(format!(
            "only {} individuals have enough observations for starting values",
            keep.len()
        )));
    }

    // feature = concatenated (coef, knot) per outcome, standardized
    let d = outcomes.len() * 4;
    let features_raw: Vec<Vec<f64>> = fits
        .iter()
        .map(|per| {
            per.iter()
                .flat_map(|f| [f.coef[0], f.coef[1], f.coef[2], f.knot])
                .collect()
        })
        .collect();
    let (f_mean, f_cov) = mean_and_cov(&features_raw);
    let f_sd: Vec<f64> = (0..d).map(|i| f_cov[(i, i)].sqrt().max(1e-9)).collect();
    let features: Vec<Vec<f64>> = features_raw
        .iter()
        .map(|row| {
            row.iter()
                .enumerate()
                .map(|(i, v)| (v - f_mean[i]) / f_sd[i])
                .collect()
        })
        .collect();

    let mut assignment = if k == 1 {
        vec![0usize; keep.len()]
    } else {
        kmeans(&features, k, &mut rng)
    };
    let min_members = assignment.iter().fold(vec![0usize; k], |mut acc, &a| {
        acc[a] += 1;
        acc
    });
    if min_members.iter().any(|&m| m < 6) {
        assignment = quantile_groups(data, &keep, k);
    }

    // between-individual spread drives the restart jitter scale
    let jitter_sd: Vec<f64> = f_sd.iter().map(|s| 0.25 * s).collect();

    let mut classes = Vec::with_capacity(k);
    let mut shares = Vec::with_capacity(k);
    for c in 0..k {
        let member_rows: Vec<usize> = (0..keep.len()).filter(|&r| assignment[r] == c).collect();
        shares.push(member_rows.len().max(1) as f64);
        let coef_rows: Vec<Vec<f64>> = member_rows
            .iter()
            .map(|&r| {
                fits[r]
                    .iter()
                    .flat_map(|f| f.coef.into_iter())
                    .collect::<Vec<f64>>()
            })
            .collect();
        let (mut coef_mean, coef_cov) = mean_and_cov(&coef_rows);
        let mut knots: Vec<f64> = outcomes
            .iter()
            .enumerate()
            .map(|(o, _)| {
                member_rows.iter().map(|&r| fits[r][o].knot).sum::<f64>()
                    / member_rows.len() as f64
            })
            .collect();
        let resid: Vec<f64> = outcomes
            .iter()
            .enumerate()
            .map(|(o, _)| {
                let mut vars: Vec<f64> =
                    member_rows.iter().map(|&r| fits[r][o].resid_var).collect();
                vars.sort_by(f64::total_cmp);
                vars[vars.len() / 2]
            })
            .collect();

        if restart > 1 {
            for (dim, cm) in coef_mean.iter_mut().enumerate() {
                let feature_dim = (dim / 3) * 4 + dim % 3;
                let noise: f64 = rng.sample(StandardNormal);
                *cm += noise * jitter_sd[feature_dim];
            }
            for (o, knot) in knots.iter_mut().enumerate() {
                let noise: f64 = rng.sample(StandardNormal);
                *knot += noise * jitter_sd[o * 4 + 3];
            }
        }
        for knot in &mut knots {
            *knot = layout.knot_box.clamp_inside(*knot);
        }

        let cov = regularize_cov(coef_cov);
        let params = match layout.outcomes {
            OutcomeSelection::Joint => {
                let mut joint = DMatrix::identity(6, 6);
                joint.view_mut((0, 0), (6, 6)).copy_from(&cov);
                ClassParameters {
                    y: OutcomeParams {
                        mean: GrowthFactorsReparam::from_array([
                            coef_mean[0],
                            coef_mean[1],
                            coef_mean[2],
                        ]),
                        knot: knots[0],
                        residual_var: resid[0],
                    },
                    z: OutcomeParams {
                        mean: GrowthFactorsReparam::from_array([
                            coef_mean[3],
                            coef_mean[4],
                            coef_mean[5],
                        ]),
                        knot: knots[1],
                        residual_var: resid[1],
                    },
                    joint_cov: joint,
                    residual_cov: 0.0,
                }
            }
            OutcomeSelection::YOnly | OutcomeSelection::ZOnly => {
                let outcome = outcomes[0];
                let mut joint = DMatrix::identity(6, 6);
                let offset = match outcome {
                    Outcome::Y => 0,
                    Outcome::Z => 3,
                };
                joint.view_mut((offset, offset), (3, 3)).copy_from(&cov);
                let modeled = OutcomeParams {
                    mean: GrowthFactorsReparam::from_array([
                        coef_mean[0],
                        coef_mean[1],
                        coef_mean[2],
                    ]),
                    knot: knots[0],
                    residual_var: resid[0],
                };
                let inert = OutcomeParams {
                    mean: GrowthFactorsReparam::from_array([0.0, 0.0, 0.0]),
                    knot: layout.knot_box.decode(0.0),
                    residual_var: 1.0,
                };
                let (y, z) = match outcome {
                    Outcome::Y => (modeled, inert),
                    Outcome::Z => (inert, modeled),
                };
                ClassParameters {
                    y,
                    z,
                    joint_cov: joint,
                    residual_cov: 0.0,
                }
            }
        };
        classes.push(params);
    }

    let gating = GatingParameters {
        classes: (1..k)
            .map(|c| GatingClass {
                intercept: (shares[c] / shares[0]).ln(),
                slopes: vec![0.0; layout.covariate_count],
            })
            .collect(),
    };
    MixtureModel::new(classes, gating)
}
