//! Cohen's kappa between two classifications, with a large-sample
//! confidence interval.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KappaResult {
    pub kappa: f64,
    pub se: f64,
    pub ci_lower: f64,
    pub ci_upper: f64,
    pub n: usize,
}

/// Cohen's kappa `(p_o - p_e) / (1 - p_e)` over two equal-length label
/// vectors, with the standard large-sample variance
/// `p_o (1 - p_o) / (n (1 - p_e)^2)` for the 95% interval.
pub fn cohen_kappa(labels_a: &[usize], labels_b: &[usize]) -> Result<KappaResult> {
    if labels_a.len() != labels_b.len() {
        return Err(Error::invalid(format!(
            "label vectors differ in length: {} vs {}",
            labels_a.len(),
            labels_b.len()
        )));
    }
    let n = labels_a.len();
    if n < 2 {
        return Err(Error::invalid("kappa needs at least two observations"));
    }
    let categories = labels_a
        .iter()
        .chain(labels_b.iter())
        .cloned()
        .max()
        .unwrap()
        + 1;
    let mut table = vec![vec![0usize; categories]; categories];
    for (&a, &b) in labels_a.iter().zip(labels_b) {
        table[a][b] += 1;
    }
    let nf = n as f64;
    let p_o = (0..categories).map(|c| table[c][c] as f64).sum::<f64>() / nf;
    let row_sums: Vec<f64> = (0..categories)
        .map(|r| table[r].iter().sum::<usize>() as f64 / nf)
        .collect();
    let col_sums: Vec<f64> = (0..categories)
        .map(|c| (0..categories).map(|r| table[r][c]).sum::<usize>() as f64 / nf)
        .collect();
    let p_e: f64 = row_sums.iter().zip(&col_sums).map(|(r, c)| r * c).sum();
    if (1.0 - p_e).abs() < 1e-12 {
        return Err(Error::UndefinedKappa(
            "both classifications use a single category".into(),
        ));
    }
    let kappa = (p_o - p_e) / (1.0 - p_e);
    let se = (p_o * (1.0 - p_o) / (nf * (1.0 - p_e) * (1.0 - p_e))).sqrt();
    const Z: f64 = 1.959963984540054;
    Ok(KappaResult {
        kappa,
        se,
        ci_lower: kappa - Z * se,
        ci_upper: kappa + Z * se,
        n,
    })
}
