//! Item-item similarity graphs, behavioural gating, and graph propagation.
//!
//! Item graphs are kNN graphs over raw modality features, built once and
//! frozen. The user-item view is a LightGCN stack over the training matrix.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use rand::Rng;
use rayon::prelude::*;

use crate::diffcore::{
    matmul_nt, xavier_uniform, Container, ParamId, ParamStore, Payload, SparseMatrix, Tape, Tensor,
    Var,
};
use crate::error::{Error, Result};
use crate::ingest::Modality;

/// Rows per block when scoring item similarities.
const SIMILARITY_BLOCK: usize = 512;

/// Copies `features` with every row scaled to unit L2 norm; zero rows stay zero.
fn unit_rows(features: &Tensor) -> Tensor {
    let mut out = features.clone();
    let mut zero_rows = 0usize;
    for r in 0..out.rows() {
        let row = out.row_mut(r);
        let n = row.iter().map(|v| v * v).sum::<f64>().sqrt();
        if n > 0.0 {
            row.iter_mut().for_each(|v| *v /= n);
        } else {
            zero_rows += 1;
        }
    }
    if zero_rows > 0 {
        log::warn!("{zero_rows} items have all-zero features; their similarities are 0");
    }
    out
}

/// Dense `N x N` cosine similarities. Zero rows score 0 against everything.
pub fn cosine_similarity(features: &Tensor) -> Tensor {
    let u = unit_rows(features);
    matmul_nt(&u, &u).expect("square product")
}

/// The `k` best `(column, score)` pairs of `scores` excluding `skip`, best
/// first, ties to the smaller column.
fn top_k_row(scores: &[f64], skip: usize, k: usize) -> Vec<(usize, f64)> {
    let mut cand: Vec<(usize, f64)> = scores
        .iter()
        .copied()
        .enumerate()
        .filter(|&(c, _)| c != skip)
        .collect();
    let better = |a: &(usize, f64), b: &(usize, f64)| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0));
    if k < cand.len() {
        cand.select_nth_unstable_by(k, better);
        cand.truncate(k);
    }
    cand.sort_unstable_by(better);
    cand
}

fn rows_to_csr(n: usize, mut rows: Vec<Vec<(usize, f64)>>) -> Result<SparseMatrix> {
    let mut indptr = Vec::with_capacity(n + 1);
    let mut indices = Vec::new();
    let mut values = Vec::new();
    indptr.push(0);
    for row in &mut rows {
        row.sort_unstable_by_key(|&(c, _)| c);
        for &(c, v) in row.iter() {
            indices.push(c);
            values.push(v);
        }
        indptr.push(indices.len());
    }
    SparseMatrix::new(n, n, indptr, indices, values)
}

/// Keeps the `k` largest off-diagonal scores of each row (directed graph).
pub fn topk_sparsify(scores: &Tensor, k: usize) -> Result<SparseMatrix> {
    if k == 0 {
        return Err(Error::Config("neighbour count K must be >= 1".into()));
    }
    let n = scores.rows();
    if scores.cols() != n {
        return Err(Error::shape("topk_sparsify", scores.shape(), &[n, n]));
    }
    let rows = (0..n).map(|r| top_k_row(scores.row(r), r, k)).collect();
    rows_to_csr(n, rows)
}

/// Cosine top-`k` graph computed in row blocks so the full `N x N` score
/// matrix is never materialised.
pub fn knn_graph(features: &Tensor, k: usize) -> Result<SparseMatrix> {
    if k == 0 {
        return Err(Error::Config("neighbour count K must be >= 1".into()));
    }
    let n = features.rows();
    let u = unit_rows(features);
    let starts: Vec<usize> = (0..n).step_by(SIMILARITY_BLOCK).collect();
    let blocks: Vec<Vec<Vec<(usize, f64)>>> = starts
        .par_iter()
        .map(|&s| {
            let e = (s + SIMILARITY_BLOCK).min(n);
            let idx: Vec<usize> = (s..e).collect();
            let scores = matmul_nt(&u.gather_rows(&idx), &u).expect("block product");
            (s..e).map(|r| top_k_row(scores.row(r - s), r, k)).collect()
        })
        .collect();
    rows_to_csr(n, blocks.into_iter().flatten().collect())
}

/// `D^{-1/2} S D^{-1/2}` with `D` the row sums; rows with non-positive
/// degree contribute nothing.
pub fn sym_normalize(g: &SparseMatrix) -> SparseMatrix {
    let deg = g.row_sums();
    let bad = deg.iter().filter(|&&d| d <= 0.0).count();
    if bad > 0 && g.nnz() > 0 {
        log::debug!("{bad} graph rows have non-positive degree and are zeroed");
    }
    g.map_values(|r, c, v| {
        if deg[r] > 0.0 && deg[c] > 0.0 {
            v / (deg[r] * deg[c]).sqrt()
        } else {
            0.0
        }
    })
}

/// Element-wise max over the union sparsity pattern; absent entries count as 0.
pub fn max_fuse_graphs(graphs: &[&SparseMatrix]) -> Result<SparseMatrix> {
    let first = graphs
        .first()
        .ok_or_else(|| Error::Input("no graphs to fuse".into()))?;
    let (n, m) = (first.rows(), first.cols());
    for g in graphs {
        if g.shape() != first.shape() {
            return Err(Error::shape("max_fuse_graphs", &first.shape(), &g.shape()));
        }
    }
    let mut indptr = vec![0];
    let mut indices = Vec::new();
    let mut values = Vec::new();
    let mut merged: Vec<(usize, f64)> = Vec::new();
    for r in 0..n {
        merged.clear();
        for g in graphs {
            let (cols, vals) = g.row(r);
            merged.extend(cols.iter().copied().zip(vals.iter().copied()));
        }
        merged.sort_unstable_by_key(|&(c, _)| c);
        let mut k = 0;
        while k < merged.len() {
            let c = merged[k].0;
            let mut present = 0;
            let mut best = f64::NEG_INFINITY;
            while k < merged.len() && merged[k].0 == c {
                best = best.max(merged[k].1);
                present += 1;
                k += 1;
            }
            if present < graphs.len() {
                best = best.max(0.0);
            }
            indices.push(c);
            values.push(best);
        }
        indptr.push(indices.len());
    }
    SparseMatrix::new(n, m, indptr, indices, values)
}

/// Frozen item-item graphs: one per modality plus their max-fusion.
#[derive(Debug, Clone)]
pub struct ItemGraphs {
    pub modalities: Vec<(Modality, Arc<SparseMatrix>)>,
    pub fused: Arc<SparseMatrix>,
}

impl ItemGraphs {
    /// Normalises each raw kNN graph and fuses them.
    pub fn from_raw(raw: Vec<(Modality, SparseMatrix)>) -> Result<Self> {
        let modalities: Vec<_> = raw
            .into_iter()
            .map(|(m, g)| (m, Arc::new(sym_normalize(&g))))
            .collect();
        let refs: Vec<&SparseMatrix> = modalities.iter().map(|(_, g)| g.as_ref()).collect();
        let fused = Arc::new(max_fuse_graphs(&refs)?);
        Ok(Self { modalities, fused })
    }

    pub fn get(&self, m: Modality) -> Option<&Arc<SparseMatrix>> {
        self.modalities
            .iter()
            .find(|(k, _)| *k == m)
            .map(|(_, g)| g)
    }
}

/// Raw kNN graph for one modality, read from or written to `cache_dir` when given.
///
/// The cache file is keyed by `key` (a content hash of dataset and
/// features), the modality, and `k`; `rebuild` ignores an existing entry.
pub fn cached_knn_graph(
    features: &Tensor,
    k: usize,
    modality: Modality,
    key: &str,
    cache_dir: Option<&Path>,
    rebuild: bool,
) -> Result<SparseMatrix> {
    let Some(dir) = cache_dir else {
        return knn_graph(features, k);
    };
    let path = graph_cache_path(dir, key, modality, k);
    if !rebuild && path.exists() {
        match read_graph(&path, key, features.rows()) {
            Ok(g) => {
                log::info!("loaded {} graph from {}", modality.name(), path.display());
                return Ok(g);
            }
            Err(e) => log::warn!("ignoring graph cache {}: {e}", path.display()),
        }
    }
    let g = knn_graph(features, k)?;
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    write_graph(&path, key, &g)?;
    Ok(g)
}

pub fn graph_cache_path(dir: &Path, key: &str, modality: Modality, k: usize) -> PathBuf {
    let short = &key[..key.len().min(16)];
    dir.join(format!("graph_{short}_{}_k{k}.bin", modality.name()))
}

fn write_graph(path: &Path, key: &str, g: &SparseMatrix) -> Result<()> {
    let mut c = Container::new();
    c.push(
        "key",
        vec![key.len()],
        Payload::Bytes(key.as_bytes().to_vec()),
    );
    c.push(
        "shape",
        vec![2],
        Payload::U64(vec![g.rows() as u64, g.cols() as u64]),
    );
    c.push(
        "indptr",
        vec![g.indptr().len()],
        Payload::U64(g.indptr().iter().map(|&v| v as u64).collect()),
    );
    c.push(
        "indices",
        vec![g.nnz()],
        Payload::U64(g.indices().iter().map(|&v| v as u64).collect()),
    );
    c.push("values", vec![g.nnz()], Payload::F64(g.values().to_vec()));
    c.save(path)
}

fn read_graph(path: &Path, key: &str, n: usize) -> Result<SparseMatrix> {
    let c = Container::load(path)?;
    let fail = |m: &str| Error::Format {
        path: path.to_path_buf(),
        message: m.to_string(),
    };
    let u64s = |name: &str| match c.get(name).map(|e| &e.payload) {
        Some(Payload::U64(v)) => Ok(v.iter().map(|&x| x as usize).collect::<Vec<_>>()),
        _ => Err(fail(&format!("missing {name}"))),
    };
    match c.get("key").map(|e| &e.payload) {
        Some(Payload::Bytes(b)) if b == key.as_bytes() => {}
        _ => return Err(fail("cache key mismatch")),
    }
    let shape = u64s("shape")?;
    if shape != [n, n] {
        return Err(fail("cached graph has the wrong size"));
    }
    let values = match c.get("values").map(|e| &e.payload) {
        Some(Payload::F64(v)) => v.clone(),
        _ => return Err(fail("missing values")),
    };
    SparseMatrix::new(n, n, u64s("indptr")?, u64s("indices")?, values)
}

/// Behavioural gate `E_id ⊙ σ(H W^T + b)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GateParams {
    pub weight: ParamId,
    pub bias: ParamId,
}

impl GateParams {
    pub fn init<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        d: usize,
        rng: &mut R,
    ) -> Result<Self> {
        Ok(Self {
            weight: store.add_real(&format!("{name}.weight"), xavier_uniform(&[d, d], rng)?),
            bias: store.add_real(&format!("{name}.bias"), Tensor::zeros(&[1, d])),
        })
    }
}

pub fn behavioral_gate(
    tape: &mut Tape,
    store: &ParamStore,
    id_items: Var,
    h: Var,
    gate: &GateParams,
) -> Result<Var> {
    if tape.shape(id_items) != tape.shape(h) {
        return Err(Error::shape(
            "behavioral_gate",
            tape.shape(id_items),
            tape.shape(h),
        ));
    }
    let w = tape.param(store, gate.weight);
    let b = tape.param(store, gate.bias);
    let z = tape.matmul_nt(h, w)?;
    let z = tape.add(z, b)?;
    let s = tape.sigmoid(z);
    tape.mul(id_items, s)
}

/// One hop `S H`.
pub fn propagate_items(tape: &mut Tape, graph: &Arc<SparseMatrix>, h: Var) -> Result<Var> {
    tape.spmm(graph, h)
}

/// `M x N` matrix with entries `1 / sqrt(|N_u| |N_i|)` on training edges.
pub fn user_aggregation_matrix(train: &SparseMatrix) -> SparseMatrix {
    let udeg = train.row_sums();
    let ideg = train.transpose().row_sums();
    let users_without_items = udeg.iter().filter(|&&d| d == 0.0).count();
    if users_without_items > 0 {
        log::warn!("{users_without_items} users have no training items; their aggregated features are zero");
    }
    train.map_values(|u, i, _| 1.0 / (udeg[u] * ideg[i]).sqrt())
}

/// `h_u = Σ_{i ∈ N_u} h_i / sqrt(|N_u| |N_i|)` via a precomputed aggregation matrix.
pub fn aggregate_users(
    tape: &mut Tape,
    aggregation: &Arc<SparseMatrix>,
    items: Var,
) -> Result<Var> {
    tape.spmm(aggregation, items)
}

/// Symmetric-normalised `(M+N) x (M+N)` user-item adjacency.
#[derive(Debug, Clone)]
pub struct BipartiteGraph {
    pub users: usize,
    pub items: usize,
    pub adjacency: Arc<SparseMatrix>,
}

impl BipartiteGraph {
    pub fn new(train: &SparseMatrix) -> Result<Self> {
        let (m, n) = (train.rows(), train.cols());
        let norm = user_aggregation_matrix(train);
        let mut trip = Vec::with_capacity(2 * norm.nnz());
        for (u, i, w) in norm.iter() {
            trip.push((u, m + i, w));
            trip.push((m + i, u, w));
        }
        Ok(Self {
            users: m,
            items: n,
            adjacency: Arc::new(SparseMatrix::from_triplets(m + n, m + n, &trip)?),
        })
    }
}

/// Mean of `E, A E, ..., A^L E`.
pub fn lightgcn_forward(
    tape: &mut Tape,
    graph: &BipartiteGraph,
    e: Var,
    layers: usize,
) -> Result<Var> {
    let mut cur = e;
    let mut acc = e;
    for _ in 0..layers {
        cur = tape.spmm(&graph.adjacency, cur)?;
        acc = tape.add(acc, cur)?;
    }
    Ok(tape.scale(acc, 1.0 / (layers as f64 + 1.0)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffcore::matmul;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rand_matrix(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Tensor {
        Tensor::matrix(
            r,
            c,
            (0..r * c).map(|_| rng.random_range(-1.0..1.0)).collect(),
        )
    }

    fn dense_normalize(s: &Tensor) -> Tensor {
        let n = s.rows();
        let deg: Vec<f64> = (0..n).map(|r| s.row(r).iter().sum()).collect();
        let di = |d: f64| if d > 0.0 { d.powf(-0.5) } else { 0.0 };
        let mut out = Tensor::zeros(&[n, n]);
        for a in 0..n {
            for b in 0..n {
                out.set(a, b, di(deg[a]) * s.get(a, b) * di(deg[b]));
            }
        }
        out
    }

    #[test]
    fn cosine_examples() {
        let s = cosine_similarity(&Tensor::matrix(
            4,
            2,
            vec![1.0, 0.0, 1.0, 0.0, 0.0, 3.0, 1.0, 1.0],
        ));
        assert!((s.get(0, 1) - 1.0).abs() < 1e-15);
        assert_eq!(s.get(0, 2), 0.0);
        assert!((s.get(0, 3) - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-12);
        let z = cosine_similarity(&Tensor::matrix(2, 2, vec![0.0, 0.0, 1.0, 2.0]));
        assert_eq!(z.row(0), &[0.0, 0.0]);
    }

    #[test]
    fn topk_examples() {
        let scores = Tensor::matrix(3, 3, vec![1.0, 0.9, 0.2, 0.9, 1.0, 0.5, 0.5, 0.5, 1.0]);
        let g = topk_sparsify(&scores, 1).unwrap();
        assert_eq!(g.row(0), (&[1usize][..], &[0.9][..]));
        assert_eq!(g.row(2).0, &[0]);
        let all = topk_sparsify(&scores, 10).unwrap();
        assert_eq!(all.nnz(), 6);
        assert!((0..3).all(|r| all.get(r, r) == 0.0));
        assert!(topk_sparsify(&scores, 0).is_err());
    }

    #[test]
    fn topk_matches_sort_and_slice() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut s = rand_matrix(&mut rng, 8, 8);
        // Force ties so the index rule matters.
        s.set(0, 3, s.get(0, 5));
        s.set(2, 1, s.get(2, 6));
        let g = topk_sparsify(&s, 3).unwrap();
        for r in 0..8 {
            let mut order: Vec<usize> = (0..8).filter(|&c| c != r).collect();
            order.sort_by(|&a, &b| {
                s.get(r, b)
                    .partial_cmp(&s.get(r, a))
                    .unwrap()
                    .then(a.cmp(&b))
            });
            let mut want: Vec<usize> = order[..3].to_vec();
            want.sort();
            assert_eq!(g.row(r).0, want.as_slice());
        }
    }

    #[test]
    fn blockwise_knn_equals_dense_pipeline() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let f = rand_matrix(&mut rng, 40, 6);
        let a = knn_graph(&f, 5).unwrap();
        let b = topk_sparsify(&cosine_similarity(&f), 5).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn normalization_examples() {
        let g = SparseMatrix::from_dense(&Tensor::matrix(2, 2, vec![0.0, 2.0, 2.0, 0.0]));
        assert_eq!(sym_normalize(&g).to_dense().data(), &[0.0, 1.0, 1.0, 0.0]);
        let z = SparseMatrix::empty(3, 3);
        assert_eq!(sym_normalize(&z).nnz(), 0);

        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let f = rand_matrix(&mut rng, 6, 3).map(f64::abs);
        let g = knn_graph(&f, 2).unwrap();
        let want = dense_normalize(&g.to_dense());
        assert!(sym_normalize(&g).to_dense().max_abs_diff(&want) < 1e-12);
    }

    #[test]
    fn max_fusion_examples() {
        let a = SparseMatrix::from_dense(&Tensor::matrix(2, 2, vec![0.0, 0.4, 0.0, 0.0]));
        let b = SparseMatrix::from_dense(&Tensor::matrix(2, 2, vec![0.0, 0.0, 0.7, 0.0]));
        assert_eq!(max_fuse_graphs(&[&a, &a]).unwrap(), a);
        assert_eq!(
            max_fuse_graphs(&[&a, &b]).unwrap().to_dense().data(),
            &[0.0, 0.4, 0.7, 0.0]
        );
        assert!(max_fuse_graphs(&[&a, &SparseMatrix::empty(3, 3)]).is_err());

        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let x = topk_sparsify(&rand_matrix(&mut rng, 5, 5), 2).unwrap();
        let y = topk_sparsify(&rand_matrix(&mut rng, 5, 5), 2).unwrap();
        let (dx, dy) = (x.to_dense(), y.to_dense());
        let fused = max_fuse_graphs(&[&x, &y]).unwrap().to_dense();
        for k in 0..25 {
            assert_eq!(fused.data()[k], dx.data()[k].max(dy.data()[k]));
        }
    }

    fn sparse_strategy(n: usize) -> impl Strategy<Value = SparseMatrix> {
        proptest::collection::vec(proptest::option::of(-1.0f64..1.0), n * n).prop_map(
            move |cells| {
                let trip: Vec<_> = cells
                    .iter()
                    .enumerate()
                    .filter_map(|(k, v)| v.map(|v| (k / n, k % n, v)))
                    .collect();
                SparseMatrix::from_triplets(n, n, &trip).unwrap()
            },
        )
    }

    proptest! {
        #[test]
        fn max_fusion_is_a_semilattice(a in sparse_strategy(4), b in sparse_strategy(4), c in sparse_strategy(4)) {
            let ab = max_fuse_graphs(&[&a, &b]).unwrap();
            let ba = max_fuse_graphs(&[&b, &a]).unwrap();
            prop_assert_eq!(ab.to_dense(), ba.to_dense());
            let left = max_fuse_graphs(&[&ab, &c]).unwrap();
            let bc = max_fuse_graphs(&[&b, &c]).unwrap();
            let right = max_fuse_graphs(&[&a, &bc]).unwrap();
            prop_assert_eq!(left.to_dense(), right.to_dense());
            prop_assert_eq!(max_fuse_graphs(&[&a, &a]).unwrap(), a);
        }

        #[test]
        fn normalization_matches_dense_formula(n in 1usize..24, k in 1usize..6, seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let f = rand_matrix(&mut rng, n, 4);
            let g = knn_graph(&f, k).unwrap();
            for r in 0..n {
                prop_assert!(g.row_nnz(r) <= k);
                prop_assert_eq!(g.get(r, r), 0.0);
                prop_assert!(!g.row(r).0.contains(&r));
            }
            prop_assert!(g.values().iter().all(|v| (-1.0 - 1e-12..=1.0 + 1e-12).contains(v)));
            let want = dense_normalize(&g.to_dense());
            prop_assert!(sym_normalize(&g).to_dense().max_abs_diff(&want) < 1e-12);
        }
    }

    fn naive_gate(e: &Tensor, h: &Tensor, w: &Tensor, b: &[f64]) -> Tensor {
        let mut out = Tensor::zeros(e.shape());
        for i in 0..e.rows() {
            for o in 0..e.cols() {
                let mut z = b[o];
                for k in 0..h.cols() {
                    z += h.get(i, k) * w.get(o, k);
                }
                out.set(i, o, e.get(i, o) / (1.0 + (-z).exp()));
            }
        }
        out
    }

    #[test]
    fn gate_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let e = rand_matrix(&mut rng, 3, 4);
        let h = rand_matrix(&mut rng, 3, 4);
        let run = |w: Tensor, b: Vec<f64>| {
            let mut store = ParamStore::new();
            let gate = GateParams {
                weight: store.add_real("w", w),
                bias: store.add_real("b", Tensor::row_vector(b)),
            };
            let mut t = Tape::new();
            let (ev, hv) = (t.constant(e.clone()), t.constant(h.clone()));
            let out = behavioral_gate(&mut t, &store, ev, hv, &gate).unwrap();
            t.value(out).clone()
        };
        assert_eq!(
            run(Tensor::zeros(&[4, 4]), vec![0.0; 4]),
            e.map(|v| 0.5 * v)
        );
        assert!(run(Tensor::zeros(&[4, 4]), vec![50.0; 4]).max_abs_diff(&e) < 1e-9);
        let w = rand_matrix(&mut rng, 4, 4);
        let b: Vec<f64> = (0..4).map(|_| rng.random_range(-1.0..1.0)).collect();
        assert!(run(w.clone(), b.clone()).max_abs_diff(&naive_gate(&e, &h, &w, &b)) < 1e-12);
    }

    #[test]
    fn propagation_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let h = rand_matrix(&mut rng, 4, 3);
        let mut t = Tape::new();
        let hv = t.constant(h.clone());
        let id = Arc::new(SparseMatrix::identity(4));
        let out = propagate_items(&mut t, &id, hv).unwrap();
        assert_eq!(t.value(out), &h);
        let zero = Arc::new(SparseMatrix::empty(4, 4));
        let out = propagate_items(&mut t, &zero, hv).unwrap();
        assert!(t.value(out).data().iter().all(|&v| v == 0.0));
        let path = Tensor::matrix(
            4,
            4,
            vec![
                0.0, 0.5, 0.0, 0.0, 0.5, 0.0, 0.3, 0.0, 0.0, 0.3, 0.0, 0.8, 0.0, 0.0, 0.8, 0.0,
            ],
        );
        let g = Arc::new(SparseMatrix::from_dense(&path));
        let out = propagate_items(&mut t, &g, hv).unwrap();
        assert!(t.value(out).max_abs_diff(&matmul(&path, &h).unwrap()) < 1e-15);
    }

    fn train_matrix(m: usize, n: usize, pairs: &[(usize, usize)]) -> SparseMatrix {
        let trip: Vec<_> = pairs.iter().map(|&(u, i)| (u, i, 1.0)).collect();
        SparseMatrix::from_triplets(m, n, &trip).unwrap()
    }

    #[test]
    fn user_aggregation_examples() {
        let mut t = Tape::new();
        let single = Arc::new(user_aggregation_matrix(&train_matrix(1, 1, &[(0, 0)])));
        let h = t.constant(Tensor::row_vector(vec![0.3, -0.7]));
        let out = aggregate_users(&mut t, &single, h).unwrap();
        assert_eq!(t.value(out).data(), &[0.3, -0.7]);

        let x = [1.0, 2.0, -1.0];
        let four = Arc::new(user_aggregation_matrix(&train_matrix(
            1,
            4,
            &[(0, 0), (0, 1), (0, 2), (0, 3)],
        )));
        let h = t.constant(Tensor::matrix(4, 3, x.repeat(4)));
        let out = aggregate_users(&mut t, &four, h).unwrap();
        let got = t.value(out).row(0).to_vec();
        let ratio = got[0] / x[0];
        assert!(got
            .iter()
            .zip(&x)
            .all(|(g, v)| (g - ratio * v).abs() < 1e-12));

        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let pairs = [(0, 0), (0, 2), (1, 1), (1, 2), (1, 3), (2, 3)];
        let y = train_matrix(3, 4, &pairs);
        let h = rand_matrix(&mut rng, 4, 2);
        let agg = Arc::new(user_aggregation_matrix(&y));
        let hv = t.constant(h.clone());
        let out = aggregate_users(&mut t, &agg, hv).unwrap();
        let udeg = |u: usize| pairs.iter().filter(|p| p.0 == u).count() as f64;
        let ideg = |i: usize| pairs.iter().filter(|p| p.1 == i).count() as f64;
        for u in 0..3 {
            for c in 0..2 {
                let mut want = 0.0;
                for i in 0..4 {
                    if pairs.contains(&(u, i)) {
                        want += h.get(i, c) / (udeg(u) * ideg(i)).sqrt();
                    }
                }
                assert!((t.value(out).get(u, c) - want).abs() < 1e-12);
            }
        }

        // Same normalisation as the user block of one LightGCN hop.
        let bg = BipartiteGraph::new(&y).unwrap();
        let e = t.constant(Tensor::matrix(
            7,
            2,
            [vec![0.0; 6], h.data().to_vec()].concat(),
        ));
        let hop = t.spmm(&bg.adjacency, e).unwrap();
        for u in 0..3 {
            for c in 0..2 {
                assert!((t.value(hop).get(u, c) - t.value(out).get(u, c)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn lightgcn_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let e = rand_matrix(&mut rng, 4, 3);
        let mut t = Tape::new();
        let ev = t.constant(e.clone());
        let full =
            BipartiteGraph::new(&train_matrix(2, 2, &[(0, 0), (0, 1), (1, 0), (1, 1)])).unwrap();
        let out = lightgcn_forward(&mut t, &full, ev, 0).unwrap();
        assert_eq!(t.value(out), &e);

        let empty = BipartiteGraph {
            users: 2,
            items: 2,
            adjacency: Arc::new(SparseMatrix::empty(4, 4)),
        };
        let out = lightgcn_forward(&mut t, &empty, ev, 2).unwrap();
        assert!(t.value(out).max_abs_diff(&e.map(|v| v / 3.0)) < 1e-15);

        // Complete 2x2 bipartite: every edge weight is 1/2.
        let a = Tensor::matrix(
            4,
            4,
            vec![
                0.0, 0.0, 0.5, 0.5, 0.0, 0.0, 0.5, 0.5, 0.5, 0.5, 0.0, 0.0, 0.5, 0.5, 0.0, 0.0,
            ],
        );
        assert_eq!(full.adjacency.to_dense(), a);
        let out = lightgcn_forward(&mut t, &full, ev, 1).unwrap();
        let mut want = matmul(&a, &e).unwrap();
        want.add_assign(&e);
        assert!(t.value(out).max_abs_diff(&want.map(|v| v / 2.0)) < 1e-12);
    }

    proptest! {
        #[test]
        fn lightgcn_matches_matrix_powers(m in 1usize..6, n in 1usize..6, layers in 0usize..4, seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut pairs: Vec<(usize, usize)> = (0..m).map(|u| (u, rng.random_range(0..n))).collect();
            for u in 0..m {
                for i in 0..n {
                    if rng.random_bool(0.4) {
                        pairs.push((u, i));
                    }
                }
            }
            pairs.sort();
            pairs.dedup();
            let g = BipartiteGraph::new(&train_matrix(m, n, &pairs)).unwrap();
            let e = rand_matrix(&mut rng, m + n, 3);
            let a = g.adjacency.to_dense();
            let mut cur = e.clone();
            let mut acc = e.clone();
            for _ in 0..layers {
                cur = matmul(&a, &cur).unwrap();
                acc.add_assign(&cur);
            }
            let want = acc.map(|v| v / (layers as f64 + 1.0));
            let mut t = Tape::new();
            let ev = t.constant(e);
            let out = lightgcn_forward(&mut t, &g, ev, layers).unwrap();
            prop_assert!(t.value(out).max_abs_diff(&want) < 1e-10);
        }
    }

    #[test]
    fn graph_cache_round_trips_and_checks_key() {
        let dir = tempfile::tempdir().unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let f = rand_matrix(&mut rng, 12, 4);
        let a = cached_knn_graph(
            &f,
            3,
            Modality::Visual,
            "abcdef0123456789ff",
            Some(dir.path()),
            false,
        )
        .unwrap();
        let path = graph_cache_path(dir.path(), "abcdef0123456789ff", Modality::Visual, 3);
        assert!(path.exists());
        assert_eq!(read_graph(&path, "abcdef0123456789ff", 12).unwrap(), a);
        assert!(read_graph(&path, "other", 12).is_err());
        let b = cached_knn_graph(
            &f,
            3,
            Modality::Visual,
            "abcdef0123456789ff",
            Some(dir.path()),
            true,
        )
        .unwrap();
        assert_eq!(a, b);
    }
}
