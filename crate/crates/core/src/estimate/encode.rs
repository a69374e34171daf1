//! Flat unconstrained parameter encoding for the optimizer.
//!
//! Per class, the joint layout packs the reparameterized growth-factor means
//! (6), a lower-triangular Cholesky factor of the 6x6 joint covariance with
//! log-encoded diagonal (21), box-encoded knots (2), log-encoded residual
//! variances (2), and the residual correlation through a tanh map (1): 32
//! entries. The univariate layout packs one outcome's block: 11 entries.
//! Gating coefficients follow unencoded, (K-1)*(p+1) of them.
//!
//! Every decode lands in the valid parameter space by construction: the
//! covariance comes back as L*L^T, knots stay inside their box, variances
//! stay positive, and the residual correlation stays in (-1, 1).

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math::{logit, sigmoid};
use crate::mixture::{GatingClass, GatingParameters, Individual, MixtureModel};
use crate::spline::{ClassParameters, GrowthFactorsReparam, Outcome, OutcomeParams};

/// Which outcomes the fitted model covers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum OutcomeSelection {
    Joint,
    YOnly,
    ZOnly,
}

impl OutcomeSelection {
    /// The outcome used for class labeling (ascending knot).
    pub fn primary(self) -> Outcome {
        match self {
            OutcomeSelection::ZOnly => Outcome::Z,
            _ => Outcome::Y,
        }
    }

    pub fn outcome_count(self) -> usize {
        match self {
            OutcomeSelection::Joint => 2,
            _ => 1,
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            OutcomeSelection::Joint => "joint",
            OutcomeSelection::YOnly => "y",
            OutcomeSelection::ZOnly => "z",
        }
    }
}

impl std::str::FromStr for OutcomeSelection {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "joint" | "yz" | "both" => Ok(OutcomeSelection::Joint),
            "y" => Ok(OutcomeSelection::YOnly),
            "z" => Ok(OutcomeSelection::ZOnly),
            other => Err(Error::Config(format!(
                "unknown outcome selection '{other}' (expected joint, y, or z)"
            ))),
        }
    }
}

/// Smooth box constraint for knot locations.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KnotBox {
    pub lo: f64,
    pub hi: f64,
}

impl KnotBox {
    /// Box spanning the pooled observed time range, pulled in by
    /// `margin_waves` times the average wave spacing on each side.
    pub fn from_data(data: &[Individual], margin_waves: f64) -> Result<Self> {
        let mut t_min = f64::INFINITY;
        let mut t_max = f64::NEG_INFINITY;
        let mut max_j = 0usize;
        for ind in data {
            let times = ind.schedule.times();
            t_min = t_min.min(times[0]);
            t_max = t_max.max(times[times.len() - 1]);
            max_j = max_j.max(times.len());
        }
        if !t_min.is_finite() || !t_max.is_finite() {
            return Err(Error::invalid("no observed times for knot box"));
        }
        if max_j < 2 || t_max <= t_min {
            return Ok(Self {
                lo: t_min - 0.5,
                hi: t_max + 0.5,
            });
        }
        let spacing = (t_max - t_min) / (max_j as f64 - 1.0);
        let margin = margin_waves * spacing;
        if 2.0 * margin >= t_max - t_min {
            return Ok(Self { lo: t_min, hi: t_max });
        }
        Ok(Self {
            lo: t_min + margin,
            hi: t_max - margin,
        })
    }

    pub fn width(&self) -> f64 {
        self.hi - self.lo
    }

    pub fn decode(&self, v: f64) -> f64 {
        self.lo + self.width() * sigmoid(v)
    }

    /// d(knot)/dv at the unconstrained value.
    pub fn derivative(&self, v: f64) -> f64 {
        let s = sigmoid(v);
        self.width() * s * (1.0 - s)
    }

    pub fn encode(&self, knot: f64) -> Result<f64> {
        if !(knot > self.lo && knot < self.hi) {
            return Err(Error::invalid(format!(
                "knot {knot} outside the box ({}, {})",
                self.lo, self.hi
            )));
        }
        Ok(logit((knot - self.lo) / self.width()))
    }

    /// Pulls a candidate knot strictly inside the box.
    pub fn clamp_inside(&self, knot: f64) -> f64 {
        let eps = 1e-4 * self.width();
        knot.clamp(self.lo + eps, self.hi - eps)
    }
}

/// Dimensions and packing rules for one model family.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelLayout {
    pub k: usize,
    pub outcomes: OutcomeSelection,
    pub covariate_count: usize,
    pub knot_box: KnotBox,
}

pub(crate) const JOINT_CLASS_DIM: usize = 32;
pub(crate) const UNI_CLASS_DIM: usize = 11;

impl ModelLayout {
    pub fn new(
        k: usize,
        outcomes: OutcomeSelection,
        covariate_count: usize,
        knot_box: KnotBox,
    ) -> Result<Self> {
        if k == 0 {
            return Err(Error::invalid("class count must be at least 1"));
        }
        Ok(Self {
            k,
            outcomes,
            covariate_count,
            knot_box,
        })
    }

    pub fn class_dim(&self) -> usize {
        match self.outcomes {
            OutcomeSelection::Joint => JOINT_CLASS_DIM,
            _ => UNI_CLASS_DIM,
        }
    }

    pub fn gating_dim(&self) -> usize {
        (self.k - 1) * (self.covariate_count + 1)
    }

    pub fn dim(&self) -> usize {
        self.k * self.class_dim() + self.gating_dim()
    }

    pub(crate) fn class_offset(&self, class: usize) -> usize {
        class * self.class_dim()
    }

    pub(crate) fn gating_offset(&self) -> usize {
        self.k * self.class_dim()
    }

    /// Packs a model into the unconstrained vector. Fails if a knot sits
    /// outside the box or a covariance is not positive definite.
    pub fn encode(&self, model: &MixtureModel) -> Result<Vec<f64>> {
        if model.class_count() != self.k {
            return Err(Error::invalid("class count mismatch in encode"));
        }
        // a single-class model has no gating, so no covariate dimension
        if self.k > 1 && model.covariate_count() != self.covariate_count {
            return Err(Error::invalid("covariate count mismatch in encode"));
        }
        let mut v = vec![0.0; self.dim()];
        for (c, params) in model.classes.iter().enumerate() {
            let block = &mut v[self.class_offset(c)..self.class_offset(c) + self.class_dim()];
            match self.outcomes {
                OutcomeSelection::Joint => encode_joint_class(params, &self.knot_box, block)?,
                OutcomeSelection::YOnly => {
                    encode_uni_class(params, Outcome::Y, &self.knot_box, block)?
                }
                OutcomeSelection::ZOnly => {
                    encode_uni_class(params, Outcome::Z, &self.knot_box, block)?
                }
            }
        }
        let mut at = self.gating_offset();
        for class in &model.gating.classes {
            v[at] = class.intercept;
            v[at + 1..at + 1 + self.covariate_count].copy_from_slice(&class.slopes);
            at += self.covariate_count + 1;
        }
        Ok(v)
    }

    /// Unpacks the unconstrained vector into a valid model. For univariate
    /// layouts the unmodeled outcome's block is inert (unit variances, zero
    /// means, mid-box knot) and never touches the likelihood because the
    /// data mask that outcome entirely.
    pub fn decode(&self, v: &[f64]) -> MixtureModel {
        assert_eq!(v.len(), self.dim(), "parameter vector length mismatch");
        let classes = (0..self.k).map(|c| self.decode_class(v, c)).collect();
        MixtureModel {
            classes,
            gating: self.decode_gating(v),
        }
    }

    /// One class's parameters from its block of the vector.
    pub(crate) fn decode_class(&self, v: &[f64], class: usize) -> ClassParameters {
        let block = &v[self.class_offset(class)..self.class_offset(class) + self.class_dim()];
        match self.outcomes {
            OutcomeSelection::Joint => decode_joint_class(block, &self.knot_box),
            OutcomeSelection::YOnly => decode_uni_class(block, Outcome::Y, &self.knot_box),
            OutcomeSelection::ZOnly => decode_uni_class(block, Outcome::Z, &self.knot_box),
        }
    }

    pub(crate) fn decode_gating(&self, v: &[f64]) -> GatingParameters {
        let mut gating = Vec::with_capacity(self.k - 1);
        let mut at = self.gating_offset();
        for _ in 1..self.k {
            gating.push(GatingClass {
                intercept: v[at],
                slopes: v[at + 1..at + 1 + self.covariate_count].to_vec(),
            });
            at += self.covariate_count + 1;
        }
        GatingParameters { classes: gating }
    }

    /// Which block a vector component belongs to.
    pub(crate) fn component_block(&self, index: usize) -> Block {
        if index < self.gating_offset() {
            Block::Class(index / self.class_dim())
        } else {
            Block::Gating
        }
    }
}

/// Parameter-vector block identity, for targeted re-evaluation under
/// finite-difference probes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum Block {
    Class(usize),
    Gating,
}

/// Lower-triangular Cholesky of a symmetric PD matrix given as nalgebra, in
/// row-major packed order with log diagonal.
fn pack_cholesky(cov: &DMatrix<f64>, out: &mut [f64]) -> Result<()> {
    let n = cov.nrows();
    let chol = cov
        .clone()
        .cholesky()
        .ok_or_else(|| Error::invalid("covariance is not positive definite"))?;
    let l = chol.l();
    let mut at = 0;
    for i in 0..n {
        for j in 0..=i {
            out[at] = if i == j { l[(i, i)].ln() } else { l[(i, j)] };
            at += 1;
        }
    }
    Ok(())
}

/// Rebuilds L*L^T from packed entries.
pub(crate) fn unpack_cholesky(packed: &[f64], n: usize) -> DMatrix<f64> {
    let mut l = DMatrix::zeros(n, n);
    let mut at = 0;
    for i in 0..n {
        for j in 0..=i {
            l[(i, j)] = if i == j { packed[at].exp() } else { packed[at] };
            at += 1;
        }
    }
    &l * l.transpose()
}

/// The L factor itself (diagonal decoded), for Jacobian work.
pub(crate) fn unpack_cholesky_factor(packed: &[f64], n: usize) -> DMatrix<f64> {
    let mut l = DMatrix::zeros(n, n);
    let mut at = 0;
    for i in 0..n {
        for j in 0..=i {
            l[(i, j)] = if i == j { packed[at].exp() } else { packed[at] };
            at += 1;
        }
    }
    l
}

fn encode_joint_class(params: &ClassParameters, knot_box: &KnotBox, out: &mut [f64]) -> Result<()> {
    out[0..3].copy_from_slice(&params.y.mean.as_array());
    out[3..6].copy_from_slice(&params.z.mean.as_array());
    pack_cholesky(&params.joint_cov, &mut out[6..27])?;
    out[27] = knot_box.encode(params.y.knot)?;
    out[28] = knot_box.encode(params.z.knot)?;
    out[29] = params.y.residual_var.ln();
    out[30] = params.z.residual_var.ln();
    let rho = params.residual_cov / (params.y.residual_var * params.z.residual_var).sqrt();
    if !(rho > -1.0 && rho < 1.0) {
        return Err(Error::invalid(format!(
            "residual correlation {rho} outside (-1, 1)"
        )));
    }
    out[31] = rho.atanh();
    Ok(())
}

fn decode_joint_class(block: &[f64], knot_box: &KnotBox) -> ClassParameters {
    let joint_cov = unpack_cholesky(&block[6..27], 6);
    let theta_y = block[29].exp();
    let theta_z = block[30].exp();
    let rho = block[31].tanh();
    ClassParameters {
        y: OutcomeParams {
            mean: GrowthFactorsReparam::from_array([block[0], block[1], block[2]]),
            knot: knot_box.decode(block[27]),
            residual_var: theta_y,
        },
        z: OutcomeParams {
            mean: GrowthFactorsReparam::from_array([block[3], block[4], block[5]]),
            knot: knot_box.decode(block[28]),
            residual_var: theta_z,
        },
        joint_cov,
        residual_cov: rho * (theta_y * theta_z).sqrt(),
    }
}

fn encode_uni_class(
    params: &ClassParameters,
    outcome: Outcome,
    knot_box: &KnotBox,
    out: &mut [f64],
) -> Result<()> {
    let p = params.outcome(outcome);
    out[0..3].copy_from_slice(&p.mean.as_array());
    let offset = match outcome {
        Outcome::Y => 0,
        Outcome::Z => 3,
    };
    let sub = params.joint_cov.view((offset, offset), (3, 3)).into_owned();
    pack_cholesky(&sub, &mut out[3..9])?;
    out[9] = knot_box.encode(p.knot)?;
    out[10] = p.residual_var.ln();
    Ok(())
}

fn decode_uni_class(block: &[f64], outcome: Outcome, knot_box: &KnotBox) -> ClassParameters {
    let cov3 = unpack_cholesky(&block[3..9], 3);
    let mut joint_cov = DMatrix::identity(6, 6);
    let offset = match outcome {
        Outcome::Y => 0,
        Outcome::Z => 3,
    };
    joint_cov.view_mut((offset, offset), (3, 3)).copy_from(&cov3);
    let modeled = OutcomeParams {
        mean: GrowthFactorsReparam::from_array([block[0], block[1], block[2]]),
        knot: knot_box.decode(block[9]),
        residual_var: block[10].exp(),
    };
    let inert = OutcomeParams {
        mean: GrowthFactorsReparam::from_array([0.0, 0.0, 0.0]),
        knot: knot_box.decode(0.0),
        residual_var: 1.0,
    };
    let (y, z) = match outcome {
        Outcome::Y => (modeled, inert),
        Outcome::Z => (inert, modeled),
    };
    ClassParameters {
        y,
        z,
        joint_cov,
        residual_cov: 0.0,
    }
}
