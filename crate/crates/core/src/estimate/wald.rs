//! Wald inference: observed-information standard errors from a
//! central-difference Hessian of the negative log-likelihood at the optimum,
//! pushed to the reporting scale with the analytic Jacobian of the
//! decode-and-inverse-transform map.

use nalgebra::DMatrix;
use rayon::prelude::*;

use crate::error::{Error, Result};

use super::encode::{unpack_cholesky_factor, ModelLayout, OutcomeSelection};
use super::{prepare_data, upper_triangle_pairs, FitResult, Objective, OddsRatio};

const HESSIAN_REL_STEP: f64 = 1e-4;
const Z_95: f64 = 1.959963984540054;

/// Augments a converged fit with standard errors and 95% Wald intervals on
/// the reporting scale. A non-invertible Hessian leaves the point estimates
/// intact and the `se_available` flag false.
pub fn wald_inference(mut fit: FitResult, data: &[crate::mixture::Individual]) -> Result<FitResult> {
    if !fit.converged() {
        return Err(Error::EstimationFailure(
            "wald inference requires a converged fit".into(),
        ));
    }
    let (prepared, _) = prepare_data(data, fit.layout.outcomes)?;
    if prepared.len() != fit.n_used {
        return Err(Error::invalid(
            "data passed to wald_inference differs from the fitted data",
        ));
    }
    let objective = Objective {
        layout: &fit.layout,
        data: &prepared,
    };
    let v = fit.parameter_vector.clone();
    let hessian = central_hessian(&objective, &v);

    let Some(cov) = invert_spd(&hessian) else {
        fit.se_available = false;
        return Ok(fit);
    };

    let jac = reporting_jacobian(&fit.layout, &v);
    let dim = v.len();
    for (r, report) in fit.parameters.iter_mut().enumerate() {
        let row = jac.row(r);
        let mut var = 0.0;
        for a in 0..dim {
            for b in 0..dim {
                var += row[a] * cov[(a, b)] * row[b];
            }
        }
        if var.is_finite() && var >= 0.0 {
            let se = var.sqrt();
            report.se = Some(se);
            report.ci_lower = Some(report.estimate - Z_95 * se);
            report.ci_upper = Some(report.estimate + Z_95 * se);
            if let Some(or) = report.odds_ratio.as_mut() {
                *or = OddsRatio {
                    estimate: report.estimate.exp(),
                    ci_lower: Some((report.estimate - Z_95 * se).exp()),
                    ci_upper: Some((report.estimate + Z_95 * se).exp()),
                };
            }
        } else {
            report.se = None;
            report.ci_lower = None;
            report.ci_upper = None;
        }
    }
    fit.se_available = true;
    Ok(fit)
}

/// Symmetric central-difference Hessian of the sum-scale negative
/// log-likelihood. Entries are computed independently (in parallel) and
/// assembled in index order.
pub(crate) fn central_hessian(objective: &Objective<'_>, v: &[f64]) -> DMatrix<f64> {
    let dim = v.len();
    let steps: Vec<f64> = v.iter().map(|x| HESSIAN_REL_STEP * x.abs().max(1.0)).collect();
    let f0 = objective.neg_log_likelihood(v);

    let mut entries: Vec<(usize, usize)> = Vec::with_capacity(dim * (dim + 1) / 2);
    for i in 0..dim {
        for j in 0..=i {
            entries.push((i, j));
        }
    }
    let values: Vec<f64> = entries
        .par_iter()
        .map(|&(i, j)| {
            if i == j {
                let mut vp = v.to_vec();
                let mut vm = v.to_vec();
                vp[i] += steps[i];
                vm[i] -= steps[i];
                (objective.neg_log_likelihood(&vp) - 2.0 * f0 + objective.neg_log_likelihood(&vm))
                    / (steps[i] * steps[i])
            } else {
                let mut vpp = v.to_vec();
                let mut vpm = v.to_vec();
                let mut vmp = v.to_vec();
                let mut vmm = v.to_vec();
                vpp[i] += steps[i];
                vpp[j] += steps[j];
                vpm[i] += steps[i];
                vpm[j] -= steps[j];
                vmp[i] -= steps[i];
                vmp[j] += steps[j];
                vmm[i] -= steps[i];
                vmm[j] -= steps[j];
                (objective.neg_log_likelihood(&vpp) - objective.neg_log_likelihood(&vpm)
                    - objective.neg_log_likelihood(&vmp)
                    + objective.neg_log_likelihood(&vmm))
                    / (4.0 * steps[i] * steps[j])
            }
        })
        .collect();
    let mut h = DMatrix::zeros(dim, dim);
    for (&(i, j), &val) in entries.iter().zip(&values) {
        h[(i, j)] = val;
        h[(j, i)] = val;
    }
    h
}

fn invert_spd(h: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    if h.iter().any(|v| !v.is_finite()) {
        return None;
    }
    h.clone().cholesky().map(|c| c.inverse())
}

/// d(original 3x3 mean transform)/d(knot): only the intercept row reacts.
fn d_inv_transform_d_knot() -> DMatrix<f64> {
    DMatrix::from_row_slice(3, 3, &[0.0, -1.0, 1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0])
}

fn inv_transform_block(knot: f64) -> DMatrix<f64> {
    DMatrix::from_row_slice(3, 3, &[1.0, -knot, knot, 0.0, 1.0, -1.0, 0.0, 1.0, 1.0])
}

/// Analytic Jacobian of the reporting map (rows ordered like
/// `parameter_names`, columns like the unconstrained vector).
pub(crate) fn reporting_jacobian(layout: &ModelLayout, v: &[f64]) -> DMatrix<f64> {
    let dim = layout.dim();
    let mut jac = DMatrix::zeros(dim, dim);
    let class_dim = layout.class_dim();
    for c in 0..layout.k {
        let off = layout.class_offset(c);
        let block = &v[off..off + class_dim];
        match layout.outcomes {
            OutcomeSelection::Joint => {
                joint_class_jacobian(layout, block, &mut jac, c * class_dim, off)
            }
            _ => uni_class_jacobian(layout, block, &mut jac, c * class_dim, off),
        }
    }
    // gating block reports the coefficients themselves
    for g in layout.gating_offset()..dim {
        jac[(g, g)] = 1.0;
    }
    jac
}

/// Fills the 32 reporting rows of one joint-layout class.
fn joint_class_jacobian(
    layout: &ModelLayout,
    block: &[f64],
    jac: &mut DMatrix<f64>,
    row0: usize,
    col0: usize,
) {
    let kb = &layout.knot_box;
    let (kv_y, kv_z) = (block[27], block[28]);
    let (gamma_y, gamma_z) = (kb.decode(kv_y), kb.decode(kv_z));
    let (dgamma_y, dgamma_z) = (kb.derivative(kv_y), kb.derivative(kv_z));

    // means: eta0 = m0 - gamma*(m1 - m2); eta1 = m1 - m2; eta2 = m1 + m2
    for (outcome, mcol, kcol, gamma, dgamma) in [
        (0usize, 0usize, 27usize, gamma_y, dgamma_y),
        (1, 3, 28, gamma_z, dgamma_z),
    ] {
        let r = row0 + 4 * outcome;
        let (m1, m2) = (block[mcol + 1], block[mcol + 2]);
        jac[(r, col0 + mcol)] = 1.0;
        jac[(r, col0 + mcol + 1)] = -gamma;
        jac[(r, col0 + mcol + 2)] = gamma;
        jac[(r, col0 + kcol)] = -(m1 - m2) * dgamma;
        jac[(r + 1, col0 + mcol + 1)] = 1.0;
        jac[(r + 1, col0 + mcol + 2)] = -1.0;
        jac[(r + 2, col0 + mcol + 1)] = 1.0;
        jac[(r + 2, col0 + mcol + 2)] = 1.0;
        jac[(r + 3, col0 + kcol)] = dgamma;
    }

    // covariance rows: Psi_orig = A (L L^T) A^T with A = blockdiag(Ty, Tz)
    let l = unpack_cholesky_factor(&block[6..27], 6);
    let psi = &l * l.transpose();
    let mut a = DMatrix::zeros(6, 6);
    a.view_mut((0, 0), (3, 3))
        .copy_from(&inv_transform_block(gamma_y));
    a.view_mut((3, 3), (3, 3))
        .copy_from(&inv_transform_block(gamma_z));

    // reporting row index for each Psi_orig entry we expose
    let mut psi_rows: Vec<(usize, usize, usize)> = Vec::with_capacity(21);
    let mut r = row0 + 8;
    for (i, j) in upper_triangle_pairs(3) {
        psi_rows.push((r, i, j));
        r += 1;
    }
    for i in 0..3 {
        for j in 0..3 {
            psi_rows.push((r, i, 3 + j));
            r += 1;
        }
    }
    for (i, j) in upper_triangle_pairs(3) {
        psi_rows.push((r, 3 + i, 3 + j));
        r += 1;
    }

    // partials with respect to the 21 packed Cholesky entries
    let mut packed = 0usize;
    for li in 0..6 {
        for lj in 0..=li {
            let scale = if li == lj { l[(li, li)] } else { 1.0 };
            // dPsi = (E L^T + L E^T) * scale; E has a one at (li, lj)
            let mut dpsi = DMatrix::zeros(6, 6);
            for t in 0..6 {
                dpsi[(li, t)] += l[(t, lj)] * scale;
                dpsi[(t, li)] += l[(t, lj)] * scale;
            }
            let dorig = &a * dpsi * a.transpose();
            for &(row, i, j) in &psi_rows {
                jac[(row, col0 + 6 + packed)] = dorig[(i, j)];
            }
            packed += 1;
        }
    }

    // partials with respect to the knots: dA Psi A^T + A Psi dA^T
    for (kcol, dgamma, block_at) in [(27usize, dgamma_y, 0usize), (28, dgamma_z, 3)] {
        let mut da = DMatrix::zeros(6, 6);
        da.view_mut((block_at, block_at), (3, 3))
            .copy_from(&(d_inv_transform_d_knot() * dgamma));
        let b = &da * &psi * a.transpose();
        let dorig = &b + b.transpose();
        for &(row, i, j) in &psi_rows {
            jac[(row, col0 + kcol)] = dorig[(i, j)];
        }
    }

    // residuals: theta_u = exp(lt_u); theta_yz = tanh(rv) sqrt(theta_y theta_z)
    let theta_y = block[29].exp();
    let theta_z = block[30].exp();
    let rho = block[31].tanh();
    let s = (theta_y * theta_z).sqrt();
    let r_theta = row0 + 29;
    jac[(r_theta, col0 + 29)] = theta_y;
    jac[(r_theta + 1, col0 + 30)] = theta_z;
    jac[(r_theta + 2, col0 + 29)] = 0.5 * rho * s;
    jac[(r_theta + 2, col0 + 30)] = 0.5 * rho * s;
    jac[(r_theta + 2, col0 + 31)] = (1.0 - rho * rho) * s;
}

/// Fills the 11 reporting rows of one univariate-layout class.
fn uni_class_jacobian(
    layout: &ModelLayout,
    block: &[f64],
    jac: &mut DMatrix<f64>,
    row0: usize,
    col0: usize,
) {
    let kb = &layout.knot_box;
    let kv = block[9];
    let gamma = kb.decode(kv);
    let dgamma = kb.derivative(kv);
    let (m1, m2) = (block[1], block[2]);

    jac[(row0, col0)] = 1.0;
    jac[(row0, col0 + 1)] = -gamma;
    jac[(row0, col0 + 2)] = gamma;
    jac[(row0, col0 + 9)] = -(m1 - m2) * dgamma;
    jac[(row0 + 1, col0 + 1)] = 1.0;
    jac[(row0 + 1, col0 + 2)] = -1.0;
    jac[(row0 + 2, col0 + 1)] = 1.0;
    jac[(row0 + 2, col0 + 2)] = 1.0;
    jac[(row0 + 3, col0 + 9)] = dgamma;

    let l = unpack_cholesky_factor(&block[3..9], 3);
    let psi = &l * l.transpose();
    let a = inv_transform_block(gamma);
    let psi_rows: Vec<(usize, usize, usize)> = upper_triangle_pairs(3)
        .into_iter()
        .enumerate()
        .map(|(idx, (i, j))| (row0 + 4 + idx, i, j))
        .collect();

    let mut packed = 0usize;
    for li in 0..3 {
        for lj in 0..=li {
            let scale = if li == lj { l[(li, li)] } else { 1.0 };
            let mut dpsi = DMatrix::zeros(3, 3);
            for t in 0..3 {
                dpsi[(li, t)] += l[(t, lj)] * scale;
                dpsi[(t, li)] += l[(t, lj)] * scale;
            }
            let dorig = &a * dpsi * a.transpose();
            for &(row, i, j) in &psi_rows {
                jac[(row, col0 + 3 + packed)] = dorig[(i, j)];
            }
            packed += 1;
        }
    }
    let b = (d_inv_transform_d_knot() * dgamma) * &psi * a.transpose();
    let dorig = &b + b.transpose();
    for &(row, i, j) in &psi_rows {
        jac[(row, col0 + 9)] = dorig[(i, j)];
    }

    jac[(row0 + 10, col0 + 10)] = block[10].exp();
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::estimate::encode::KnotBox;
    use crate::estimate::{parameter_values, ModelLayout, OutcomeSelection};
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn fd_jacobian(layout: &ModelLayout, v: &[f64]) -> DMatrix<f64> {
        let dim = layout.dim();
        let mut jac = DMatrix::zeros(dim, dim);
        for col in 0..dim {
            let h = 1e-6 * v[col].abs().max(1.0);
            let mut vp = v.to_vec();
            let mut vm = v.to_vec();
            vp[col] += h;
            vm[col] -= h;
            let fp = parameter_values(layout, &layout.decode(&vp));
            let fm = parameter_values(layout, &layout.decode(&vm));
            for row in 0..dim {
                jac[(row, col)] = (fp[row] - fm[row]) / (2.0 * h);
            }
        }
        jac
    }

    fn check_layout(layout: ModelLayout, seed: u64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let v: Vec<f64> = (0..layout.dim()).map(|_| rng.gen_range(-1.5..1.5)).collect();
        let analytic = reporting_jacobian(&layout, &v);
        let numeric = fd_jacobian(&layout, &v);
        for r in 0..layout.dim() {
            for c in 0..layout.dim() {
                let a = analytic[(r, c)];
                let n = numeric[(r, c)];
                let tol = 1e-5 * a.abs().max(n.abs()).max(1.0);
                assert!(
                    (a - n).abs() < tol,
                    "jacobian mismatch at ({r},{c}): analytic {a}, numeric {n}"
                );
            }
        }
    }

    #[test]
    fn joint_jacobian_matches_finite_differences() {
        let layout = ModelLayout::new(
            2,
            OutcomeSelection::Joint,
            2,
            KnotBox { lo: 0.5, hi: 8.5 },
        )
        .unwrap();
        check_layout(layout, 31);
    }

    #[test]
    fn univariate_jacobian_matches_finite_differences() {
        let layout = ModelLayout::new(
            3,
            OutcomeSelection::ZOnly,
            0,
            KnotBox { lo: 0.5, hi: 8.5 },
        )
        .unwrap();
        check_layout(layout, 77);
    }
}
