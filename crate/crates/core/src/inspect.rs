//! Uniformity diagnostics for fused item features.

use serde::{Deserialize, Serialize};

use crate::diffcore::{Tape, Tensor};
use crate::error::{Error, Result};
use crate::trainer::{Model, ModelInputs};

/// Default number of angular histogram bins.
pub const ANGULAR_BINS: usize = 36;

const NORM_EPS: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UniformityStats {
    pub items: usize,
    /// Mean cosine over all unordered pairs of distinct rows.
    pub mean_cosine: f64,
    /// Shannon entropy (nats) of the angle histogram in the top-2 principal plane.
    pub angular_entropy: f64,
    /// `ln(bins)`, the entropy of a perfectly even histogram.
    pub max_entropy: f64,
    pub bins: usize,
}

/// Graph-enriched fused item features, the item rows of the fused branch, `N x d`.
pub fn fused_item_features(model: &Model, inputs: &ModelInputs) -> Result<Tensor> {
    let mut tape = Tape::new();
    let f = model.forward(&mut tape, inputs)?;
    let c = model.config();
    let items: Vec<usize> = (c.num_users..c.num_users + c.num_items).collect();
    Ok(tape.value(f.fused).gather_rows(&items))
}

fn normalized_rows(x: &Tensor) -> Tensor {
    let mut out = x.clone();
    for r in 0..out.rows() {
        let row = out.row_mut(r);
        let n = row.iter().map(|v| v * v).sum::<f64>().sqrt().max(NORM_EPS);
        row.iter_mut().for_each(|v| *v /= n);
    }
    out
}

/// Mean pairwise cosine similarity of the rows of `x`.
pub fn mean_pairwise_cosine(x: &Tensor) -> Result<f64> {
    let n = x.rows();
    if n < 2 {
        return Err(Error::Input(
            "mean pairwise cosine needs at least two rows".into(),
        ));
    }
    let z = normalized_rows(x);
    // Sum over i < j of z_i . z_j = (|Σ z_i|² - Σ |z_i|²) / 2.
    let mut total = vec![0.0; z.cols()];
    let mut self_sq = 0.0;
    for r in 0..n {
        for (t, v) in total.iter_mut().zip(z.row(r)) {
            *t += v;
            self_sq += v * v;
        }
    }
    let sum_sq: f64 = total.iter().map(|v| v * v).sum();
    Ok((sum_sq - self_sq) / 2.0 / (n * (n - 1) / 2) as f64)
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Leading eigenvector of a symmetric positive semi-definite matrix by power iteration.
fn leading_eigenvector(cov: &[Vec<f64>]) -> Vec<f64> {
    let d = cov.len();
    let starts: Vec<Vec<f64>> =
        std::iter::once((0..d).map(|k| 1.0 + 0.1 * k as f64).collect::<Vec<_>>())
            .chain((0..d).map(|k| (0..d).map(|j| f64::from(u8::from(j == k))).collect()))
            .collect();
    // A start orthogonal to every nonzero eigenvector would stall at zero.
    let mut v = starts
        .into_iter()
        .find(|s| {
            cov.iter()
                .map(|row| dot(row, s))
                .any(|x| x.abs() > NORM_EPS)
        })
        .unwrap_or_else(|| vec![1.0; d]);
    for _ in 0..1000 {
        let mut w: Vec<f64> = cov.iter().map(|row| dot(row, &v)).collect();
        let n = dot(&w, &w).sqrt();
        if n < NORM_EPS {
            break;
        }
        w.iter_mut().for_each(|x| *x /= n);
        let delta: f64 = w.iter().zip(&v).map(|(a, b)| (a - b).abs()).sum();
        v = w;
        if delta < 1e-12 {
            break;
        }
    }
    let n = dot(&v, &v).sqrt().max(NORM_EPS);
    v.iter().map(|x| x / n).collect()
}

/// Entropy of the histogram of angles after projecting normalized, centred rows
/// onto their top two principal directions.
pub fn angular_entropy(x: &Tensor, bins: usize) -> Result<f64> {
    if bins == 0 {
        return Err(Error::Config(
            "angular histogram needs at least one bin".into(),
        ));
    }
    let z = normalized_rows(x);
    let (n, d) = (z.rows(), z.cols());
    if n == 0 {
        return Err(Error::Input("no rows to inspect".into()));
    }
    let mut mean = vec![0.0; d];
    for r in 0..n {
        mean.iter_mut()
            .zip(z.row(r))
            .for_each(|(m, v)| *m += v / n as f64);
    }
    let centred: Vec<Vec<f64>> = (0..n)
        .map(|r| z.row(r).iter().zip(&mean).map(|(v, m)| v - m).collect())
        .collect();
    let mut cov = vec![vec![0.0; d]; d];
    for row in &centred {
        for a in 0..d {
            for b in 0..d {
                cov[a][b] += row[a] * row[b];
            }
        }
    }
    let p1 = leading_eigenvector(&cov);
    let lambda1 = dot(
        &p1,
        &cov.iter().map(|row| dot(row, &p1)).collect::<Vec<_>>(),
    );
    for a in 0..d {
        for b in 0..d {
            cov[a][b] -= lambda1 * p1[a] * p1[b];
        }
    }
    let p2 = leading_eigenvector(&cov);

    let mut hist = vec![0usize; bins];
    for row in &centred {
        let angle = dot(row, &p2).atan2(dot(row, &p1));
        let unit = (angle + std::f64::consts::PI) / std::f64::consts::TAU;
        hist[((unit * bins as f64) as usize).min(bins - 1)] += 1;
    }
    Ok(hist
        .iter()
        .filter(|&&c| c > 0)
        .map(|&c| {
            let p = c as f64 / n as f64;
            -p * p.ln()
        })
        .sum())
}

pub fn uniformity(x: &Tensor, bins: usize) -> Result<UniformityStats> {
    Ok(UniformityStats {
        items: x.rows(),
        mean_cosine: mean_pairwise_cosine(x)?,
        angular_entropy: angular_entropy(x, bins)?,
        max_entropy: (bins as f64).ln(),
        bins,
    })
}
