//! Fixtures and brute-force oracles shared by the integration tests.
//!
//! Everything here works on plain nested vectors and never calls the code it checks.
#![allow(dead_code)]

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use smore::diffcore::Tensor;
use smore::ingest::{Dataset, FeatureMatrix, Modality};
use smore::trainer::{build_inputs, Model, ModelConfig, ModelInputs, TrainConfig};

pub type Mat = Vec<Vec<f64>>;

pub fn to_mat(t: &Tensor) -> Mat {
    (0..t.rows()).map(|r| t.row(r).to_vec()).collect()
}

pub fn rand_mat(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Mat {
    (0..r)
        .map(|_| (0..c).map(|_| rng.random_range(-1.0..1.0)).collect())
        .collect()
}

pub fn to_tensor(m: &Mat) -> Tensor {
    let c = m.first().map_or(0, Vec::len);
    Tensor::matrix(m.len(), c, m.iter().flatten().copied().collect())
}

pub fn max_abs_diff(a: &Mat, b: &Mat) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter()
        .zip(b)
        .flat_map(|(x, y)| {
            assert_eq!(x.len(), y.len());
            x.iter().zip(y).map(|(p, q)| (p - q).abs())
        })
        .fold(0.0, f64::max)
}

/// Direct `X_k = Σ_j x_j e^{-2πi jk/n}` for `k ≤ n/2`.
pub fn dft(x: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let n = x.len();
    let bins = n / 2 + 1;
    let mut re = vec![0.0; bins];
    let mut im = vec![0.0; bins];
    for k in 0..bins {
        for (j, &v) in x.iter().enumerate() {
            let a = -2.0 * PI * (j * k) as f64 / n as f64;
            re[k] += v * a.cos();
            im[k] += v * a.sin();
        }
    }
    (re, im)
}

/// Direct inverse of a half spectrum; imaginary parts of DC and Nyquist are dropped.
pub fn idft(re: &[f64], im: &[f64], n: usize) -> Vec<f64> {
    (0..n)
        .map(|j| {
            let mut s = 0.0;
            for k in 0..re.len() {
                let a = 2.0 * PI * (j * k) as f64 / n as f64;
                let edge = k == 0 || (n.is_multiple_of(2) && k == n / 2);
                let w = if edge { 1.0 } else { 2.0 };
                let imk = if edge { 0.0 } else { im[k] };
                s += w * (re[k] * a.cos() - imk * a.sin());
            }
            s / n as f64
        })
        .collect()
}

/// Circular convolution `(a * b)_j = Σ_k a_k b_{(j-k) mod n}`.
pub fn circular_conv(a: &[f64], b: &[f64]) -> Vec<f64> {
    let n = a.len();
    (0..n)
        .map(|j| (0..n).map(|k| a[k] * b[(j + n - k) % n]).sum())
        .collect()
}

pub fn matmul(a: &Mat, b: &Mat) -> Mat {
    let (n, k, m) = (a.len(), b.len(), b[0].len());
    let mut out = vec![vec![0.0; m]; n];
    for i in 0..n {
        for j in 0..m {
            for t in 0..k {
                out[i][j] += a[i][t] * b[t][j];
            }
        }
    }
    out
}

pub fn transpose(a: &Mat) -> Mat {
    if a.is_empty() {
        return vec![];
    }
    (0..a[0].len())
        .map(|j| a.iter().map(|r| r[j]).collect())
        .collect()
}

/// `x W^T + b`.
pub fn affine(x: &Mat, w: &Mat, b: &[f64]) -> Mat {
    let mut y = matmul(x, &transpose(w));
    for r in y.iter_mut() {
        for (v, bb) in r.iter_mut().zip(b) {
            *v += bb;
        }
    }
    y
}

pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Dense cosine kNN: per row the `k` largest off-diagonal similarities, ties to the smaller column.
pub fn dense_knn(x: &Mat, k: usize) -> Mat {
    let n = x.len();
    let norm: Vec<f64> = x
        .iter()
        .map(|r| r.iter().map(|v| v * v).sum::<f64>().sqrt())
        .collect();
    let sim = |a: usize, b: usize| {
        if norm[a] == 0.0 || norm[b] == 0.0 {
            0.0
        } else {
            x[a].iter().zip(&x[b]).map(|(p, q)| p * q).sum::<f64>() / (norm[a] * norm[b])
        }
    };
    let scores: Mat = (0..n)
        .map(|a| (0..n).map(|b| sim(a, b)).collect())
        .collect();
    dense_topk(&scores, k)
}

/// Keeps the `k` largest off-diagonal entries per row by full sort.
pub fn dense_topk(scores: &Mat, k: usize) -> Mat {
    let n = scores.len();
    let mut out = vec![vec![0.0; n]; n];
    for a in 0..n {
        let mut order: Vec<usize> = (0..n).filter(|&b| b != a).collect();
        order.sort_by(|&p, &q| {
            scores[a][q]
                .partial_cmp(&scores[a][p])
                .unwrap()
                .then(p.cmp(&q))
        });
        for &b in order.iter().take(k) {
            out[a][b] = scores[a][b];
        }
    }
    out
}

/// Mask of which entries a top-k sparsification keeps.
pub fn dense_topk_mask(scores: &Mat, k: usize) -> Vec<Vec<bool>> {
    let n = scores.len();
    let mut out = vec![vec![false; n]; n];
    for a in 0..n {
        let mut order: Vec<usize> = (0..n).filter(|&b| b != a).collect();
        order.sort_by(|&p, &q| {
            scores[a][q]
                .partial_cmp(&scores[a][p])
                .unwrap()
                .then(p.cmp(&q))
        });
        for &b in order.iter().take(k) {
            out[a][b] = true;
        }
    }
    out
}

pub fn dense_sym_normalize(s: &Mat) -> Mat {
    let deg: Vec<f64> = s.iter().map(|r| r.iter().sum()).collect();
    let n = s.len();
    let mut out = vec![vec![0.0; n]; n];
    for a in 0..n {
        for b in 0..n {
            if s[a][b] != 0.0 && deg[a] > 0.0 && deg[b] > 0.0 {
                out[a][b] = s[a][b] / deg[a].sqrt() / deg[b].sqrt();
            }
        }
    }
    out
}

/// Element-wise max where a missing edge counts as 0.
pub fn dense_max(graphs: &[Mat]) -> Mat {
    let n = graphs[0].len();
    (0..n)
        .map(|a| {
            (0..n)
                .map(|b| {
                    graphs
                        .iter()
                        .map(|g| g[a][b])
                        .fold(f64::NEG_INFINITY, f64::max)
                })
                .collect()
        })
        .collect()
}

/// Symmetric-normalised bipartite adjacency of a dense `M x N` interaction matrix.
pub fn dense_bipartite(r: &Mat) -> Mat {
    let (m, n) = (r.len(), r[0].len());
    let ud: Vec<f64> = r.iter().map(|row| row.iter().sum()).collect();
    let id: Vec<f64> = (0..n).map(|i| r.iter().map(|row| row[i]).sum()).collect();
    let mut a = vec![vec![0.0; m + n]; m + n];
    for u in 0..m {
        for i in 0..n {
            if r[u][i] != 0.0 {
                let w = 1.0 / (ud[u] * id[i]).sqrt();
                a[u][m + i] = w;
                a[m + i][u] = w;
            }
        }
    }
    a
}

/// `mean(E, AE, ..., A^L E)` by repeated dense products.
pub fn dense_lightgcn(a: &Mat, e: &Mat, layers: usize) -> Mat {
    let mut cur = e.clone();
    let mut acc = e.clone();
    for _ in 0..layers {
        cur = matmul(a, &cur);
        for (x, y) in acc.iter_mut().zip(&cur) {
            for (p, q) in x.iter_mut().zip(y) {
                *p += q;
            }
        }
    }
    let s = 1.0 / (layers as f64 + 1.0);
    acc.iter()
        .map(|r| r.iter().map(|v| v * s).collect())
        .collect()
}

pub fn brute_recall(ranked: &[usize], relevant: &[usize], k: usize) -> f64 {
    let hits = ranked
        .iter()
        .take(k)
        .filter(|i| relevant.contains(i))
        .count();
    hits as f64 / relevant.len() as f64
}

pub fn brute_ndcg(ranked: &[usize], relevant: &[usize], k: usize) -> f64 {
    let mut dcg = 0.0;
    for (r, i) in ranked.iter().take(k).enumerate() {
        if relevant.contains(i) {
            dcg += 1.0 / ((r + 2) as f64).log2();
        }
    }
    let ideal: f64 = (0..relevant.len().min(k))
        .map(|r| 1.0 / ((r + 2) as f64).log2())
        .sum();
    dcg / ideal
}

/// Four users, six items, eight-dimensional model.
pub struct Tiny {
    pub dataset: Dataset,
    pub features: Vec<FeatureMatrix>,
    pub cfg: TrainConfig,
    pub model: Model,
    pub inputs: ModelInputs,
}

pub fn tiny(seed: u64) -> Tiny {
    let users = (0..4).map(|u| format!("u{u}")).collect();
    let items = (0..6).map(|i| format!("i{i}")).collect();
    let train = vec![
        (0, 0),
        (0, 1),
        (0, 2),
        (1, 1),
        (1, 3),
        (2, 2),
        (2, 4),
        (2, 5),
        (3, 0),
        (3, 5),
    ];
    let val = vec![(0, 3), (1, 4)];
    let test = vec![(2, 0), (3, 1)];
    let dataset = Dataset::from_parts(users, items, train, val, test).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let features = vec![
        FeatureMatrix::new(Modality::Visual, to_tensor(&rand_mat(&mut rng, 6, 5))).unwrap(),
        FeatureMatrix::new(Modality::Text, to_tensor(&rand_mat(&mut rng, 6, 3))).unwrap(),
    ];
    let cfg = TrainConfig {
        dim: 8,
        layers: 2,
        k_visual: 2,
        k_text: 3,
        batch_size: 4,
        ..TrainConfig::default()
    };
    let inputs = build_inputs(&dataset, &features, &cfg, None).unwrap();
    let model = Model::new(ModelConfig::from_train(&cfg, &dataset, &features), seed).unwrap();
    Tiny {
        dataset,
        features,
        cfg,
        model,
        inputs,
    }
}
