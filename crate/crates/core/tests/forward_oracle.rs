mod common;

use common::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use smore::diffcore::{ParamStore, ParamValue, Tape};
use smore::preference::AttentionMode;

fn real(store: &ParamStore, name: &str) -> Mat {
    let p = store
        .by_name(name)
        .unwrap_or_else(|| panic!("no parameter {name}"));
    match &p.value {
        ParamValue::Real(t) => to_mat(t),
        ParamValue::Complex(_) => panic!("{name} is complex"),
    }
}

fn vector(store: &ParamStore, name: &str) -> Vec<f64> {
    real(store, name).remove(0)
}

fn filter(store: &ParamStore, name: &str) -> (Vec<f64>, Vec<f64>) {
    let id = store.id(name).unwrap();
    let c = store.complex(id);
    (0..c.len()).map(|k| c.get(k)).unzip()
}

fn randomize(store: &mut ParamStore, seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let ids: Vec<_> = store.ids().collect();
    for id in ids {
        for v in store.get_mut(id).value.flat_mut() {
            *v = rng.random_range(-0.6..0.6);
        }
    }
}

fn spectral_row(h: &[f64], filters: &[&(Vec<f64>, Vec<f64>)]) -> (Vec<f64>, Vec<f64>) {
    let (mut re, mut im) = dft(h);
    for (fr, fi) in filters {
        for k in 0..re.len() {
            let (a, b) = (re[k], im[k]);
            re[k] = a * fr[k] - b * fi[k];
            im[k] = a * fi[k] + b * fr[k];
        }
    }
    (re, im)
}

fn hadamard(a: &Mat, b: &Mat) -> Mat {
    a.iter()
        .zip(b)
        .map(|(x, y)| x.iter().zip(y).map(|(p, q)| p * q).collect())
        .collect()
}

/// Straight-line reimplementation of the whole forward pass.
fn scripted_forward(t: &Tiny, store: &ParamStore, mode: AttentionMode) -> Mat {
    let (m, n, d) = (4, 6, 8);
    let mods = ["visual", "text"];
    let raw: Vec<Mat> = t.features.iter().map(|f| to_mat(&f.values)).collect();
    let id = real(store, "id_embedding");
    let id_items: Mat = id[m..].to_vec();

    // Projection and spectra.
    let proj: Vec<Mat> = (0..2)
        .map(|k| {
            let name = mods[k];
            affine(
                &raw[k],
                &real(store, &format!("spectral.{name}.weight")),
                &vector(store, &format!("spectral.{name}.bias")),
            )
        })
        .collect();
    let filters: Vec<(Vec<f64>, Vec<f64>)> = mods
        .iter()
        .map(|name| filter(store, &format!("spectral.{name}.filter")))
        .collect();
    let wf = filter(store, "spectral.fusion.filter");
    let unimodal: Vec<Mat> = (0..2)
        .map(|k| {
            proj[k]
                .iter()
                .map(|h| {
                    let (re, im) = spectral_row(h, &[&filters[k]]);
                    idft(&re, &im, d)
                })
                .collect()
        })
        .collect();
    let fused: Mat = (0..n)
        .map(|i| {
            let (vr, vi) = dft(&proj[0][i]);
            let (tr, ti) = dft(&proj[1][i]);
            let bins = vr.len();
            let mut re = vec![0.0; bins];
            let mut im = vec![0.0; bins];
            for k in 0..bins {
                let (pr, pi) = (vr[k] * tr[k] - vi[k] * ti[k], vr[k] * ti[k] + vi[k] * tr[k]);
                re[k] = pr * wf.0[k] - pi * wf.1[k];
                im[k] = pr * wf.1[k] + pi * wf.0[k];
            }
            idft(&re, &im, d)
        })
        .collect();

    // Item graphs.
    let ks = [t.cfg.k_visual, t.cfg.k_text];
    let graphs: Vec<Mat> = (0..2)
        .map(|k| dense_sym_normalize(&dense_knn(&raw[k], ks[k])))
        .collect();
    let fused_graph = dense_max(&graphs);

    // User aggregation weights.
    let mut r = vec![vec![0.0; n]; m];
    for &(u, i) in &t.dataset.train {
        r[u][i] = 1.0;
    }
    let ud: Vec<f64> = r.iter().map(|row| row.iter().sum()).collect();
    let idg: Vec<f64> = (0..n).map(|i| r.iter().map(|row| row[i]).sum()).collect();
    let agg: Mat = (0..m)
        .map(|u| {
            (0..n)
                .map(|i| {
                    if r[u][i] != 0.0 {
                        1.0 / (ud[u] * idg[i]).sqrt()
                    } else {
                        0.0
                    }
                })
                .collect()
        })
        .collect();

    let enrich = |graph: &Mat, h: &Mat, gate: &str| -> Mat {
        let z = affine(
            h,
            &real(store, &format!("{gate}.weight")),
            &vector(store, &format!("{gate}.bias")),
        );
        let s: Mat = z
            .iter()
            .map(|row| row.iter().map(|&v| sigmoid(v)).collect())
            .collect();
        let gated = hadamard(&id_items, &s);
        let items = matmul(graph, &gated);
        let users = matmul(&agg, &items);
        users.into_iter().chain(items).collect()
    };
    let enriched: Vec<Mat> = (0..2)
        .map(|k| enrich(&graphs[k], &unimodal[k], &format!("gate.{}", mods[k])))
        .collect();
    let fused_all = enrich(&fused_graph, &fused, "gate.fusion");

    let behavioral = dense_lightgcn(&dense_bipartite(&r), &id, t.cfg.layers);

    // Attention over modalities from the fused features.
    let scores: Mat = (0..m + n)
        .map(|e| {
            (0..2)
                .map(|k| {
                    let name = mods[k];
                    let z = affine(
                        &vec![fused_all[e].clone()],
                        &real(store, &format!("attention.{name}.weight")),
                        &vector(store, &format!("attention.{name}.bias")),
                    );
                    let q = vector(store, &format!("attention.{name}.query"));
                    z[0].iter().zip(&q).map(|(a, b)| a.tanh() * b).sum()
                })
                .collect()
        })
        .collect();
    let softmax = |s: &[f64]| {
        let mx = s.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let e: Vec<f64> = s.iter().map(|v| (v - mx).exp()).collect();
        let z: f64 = e.iter().sum();
        e.into_iter().map(|v| v / z).collect::<Vec<_>>()
    };
    let alpha: Mat = match mode {
        AttentionMode::PerEntity => scores.iter().map(|s| softmax(s)).collect(),
        AttentionMode::Global => {
            let mean: Vec<f64> = (0..2)
                .map(|k| scores.iter().map(|s| s[k]).sum::<f64>() / (m + n) as f64)
                .collect();
            vec![softmax(&mean); m + n]
        }
    };

    let gate = |name: &str| -> Mat {
        let z = affine(
            &behavioral,
            &real(store, &format!("{name}.weight")),
            &vector(store, &format!("{name}.bias")),
        );
        z.iter()
            .map(|row| row.iter().map(|&v| sigmoid(v)).collect())
            .collect()
    };
    let q: Vec<Mat> = mods
        .iter()
        .map(|name| gate(&format!("preference.{name}")))
        .collect();
    let qf = gate("preference.fusion");

    (0..m + n)
        .map(|e| {
            (0..d)
                .map(|c| {
                    let uni: f64 = (0..2)
                        .map(|k| alpha[e][k] * enriched[k][e][c] * q[k][e][c])
                        .sum::<f64>()
                        / 2.0;
                    behavioral[e][c] + uni + fused_all[e][c] * qf[e][c]
                })
                .collect()
        })
        .collect()
}

#[test]
fn forward_matches_scripted_oracle() {
    for mode in [AttentionMode::PerEntity, AttentionMode::Global] {
        let mut t = tiny(11);
        t.model.params.config.attention = mode;
        randomize(&mut t.model.store, 5);
        let mut tape = Tape::new();
        let f = t.model.forward(&mut tape, &t.inputs).unwrap();
        let got = to_mat(tape.value(f.final_emb));
        let want = scripted_forward(&t, &t.model.store, mode);
        let err = max_abs_diff(&got, &want);
        assert!(err < 1e-10, "{mode:?}: {err}");
    }
}

#[test]
fn zero_layers_keeps_raw_id_embeddings() {
    let mut t = tiny(12);
    t.cfg.layers = 0;
    t.model.params.config.layers = 0;
    randomize(&mut t.model.store, 6);
    let mut tape = Tape::new();
    let f = t.model.forward(&mut tape, &t.inputs).unwrap();
    assert_eq!(tape.value(f.behavioral), tape.value(f.id));
    let want = scripted_forward(&t, &t.model.store, AttentionMode::PerEntity);
    assert!(max_abs_diff(&to_mat(tape.value(f.final_emb)), &want) < 1e-10);
}
