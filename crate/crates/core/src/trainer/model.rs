use std::path::Path;
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::diffcore::{
    xavier_uniform, ComplexTensor, Container, ParamId, ParamStore, Payload, RealFft, SparseMatrix,
    Tape, Tensor, Var,
};
use crate::error::{Error, Result};
use crate::graphs::{
    aggregate_users, behavioral_gate, lightgcn_forward, propagate_items, user_aggregation_matrix,
    BipartiteGraph, GateParams, ItemGraphs,
};
use crate::ingest::{Dataset, FeatureMatrix, Modality};
use crate::preference::{
    info_nce_loss, modality_attention, preference_gates, side_features, weight_unimodal,
    AttentionMode, Negatives, PreferenceParams,
};
use crate::spectral::{num_bins, spectral_fusion_forward, SpectralParams};

/// Architecture settings stored alongside trained parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub num_users: usize,
    pub num_items: usize,
    pub dim: usize,
    pub layers: usize,
    pub attention: AttentionMode,
    pub ablate_fusion: bool,
    pub identity_filters: bool,
    /// Modality and raw feature width, in input order.
    pub modalities: Vec<(Modality, usize)>,
    pub k_visual: usize,
    pub k_text: usize,
}

/// Parameter handles for every trainable tensor of the model.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub config: ModelConfig,
    /// `(M + N) x d`, users first.
    pub id_embedding: ParamId,
    pub spectral: SpectralParams,
    /// Behavioural gates on the per-modality item features.
    pub item_gates: Vec<GateParams>,
    pub fusion_item_gate: GateParams,
    pub preference: PreferenceParams,
}

/// Frozen, precomputed inputs shared by every forward pass.
#[derive(Debug, Clone)]
pub struct ModelInputs {
    /// Raw features in `ModelConfig::modalities` order.
    pub features: Vec<Arc<Tensor>>,
    pub item_graphs: ItemGraphs,
    /// `M x N` with `1 / sqrt(|N_u| |N_i|)` on training edges.
    pub user_aggregation: Arc<SparseMatrix>,
    pub bipartite: BipartiteGraph,
    pub plan: Arc<RealFft>,
}

impl ModelInputs {
    pub fn new(
        dataset: &Dataset,
        features: &[FeatureMatrix],
        item_graphs: ItemGraphs,
        dim: usize,
    ) -> Result<Self> {
        for f in features {
            if f.num_items() != dataset.num_items() {
                return Err(Error::Input(format!(
                    "{} features have {} rows for {} items",
                    f.modality.name(),
                    f.num_items(),
                    dataset.num_items()
                )));
            }
            if item_graphs.get(f.modality).is_none() {
                return Err(Error::Input(format!(
                    "no item graph for {}",
                    f.modality.name()
                )));
            }
        }
        Ok(Self {
            features: features
                .iter()
                .map(|f| Arc::new(f.values.clone()))
                .collect(),
            item_graphs,
            user_aggregation: Arc::new(user_aggregation_matrix(&dataset.train_csr)),
            bipartite: BipartiteGraph::new(&dataset.train_csr)?,
            plan: Arc::new(RealFft::new(dim)),
        })
    }
}

/// Tape handles produced by one forward pass.
#[derive(Debug, Clone, Copy)]
pub struct Forward {
    /// Raw ID embeddings, `(M + N) x d`.
    pub id: Var,
    /// LightGCN output.
    pub behavioral: Var,
    /// Graph-enriched fused features for users and items.
    pub fused: Var,
    /// Fused item features straight out of the spectral block, `N x d`.
    pub fused_items: Var,
    pub side: Var,
    /// `behavioral + side`; rows are the scoring embeddings.
    pub final_emb: Var,
}

#[derive(Debug, Clone)]
pub struct Model {
    pub params: ModelParams,
    pub store: ParamStore,
}

impl ModelParams {
    pub fn init(config: ModelConfig, store: &mut ParamStore, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = config.dim;
        let entities = config.num_users + config.num_items;
        let id_embedding =
            store.add_real("id_embedding", xavier_uniform(&[entities, d], &mut rng)?);
        let spectral = SpectralParams::init(store, &config.modalities, d, &mut rng)?;
        let mut item_gates = Vec::new();
        for (m, _) in &config.modalities {
            item_gates.push(GateParams::init(
                store,
                &format!("gate.{}", m.name()),
                d,
                &mut rng,
            )?);
        }
        let fusion_item_gate = GateParams::init(store, "gate.fusion", d, &mut rng)?;
        let names: Vec<&str> = config.modalities.iter().map(|(m, _)| m.name()).collect();
        let preference = PreferenceParams::init(store, &names, d, &mut rng)?;
        if config.identity_filters {
            let bins = num_bins(d);
            let one = ComplexTensor::from_parts(
                &Tensor::full(&[1, bins], 1.0),
                &Tensor::zeros(&[1, bins]),
            )?;
            for id in spectral.filter_ids() {
                store.get_mut(id).value = crate::diffcore::ParamValue::Complex(one.clone());
                store.set_frozen(id, true);
            }
        }
        Ok(Self {
            config,
            id_embedding,
            spectral,
            item_gates,
            fusion_item_gate,
            preference,
        })
    }

    /// Full forward pass from raw features and ID embeddings to final embeddings.
    pub fn forward(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        inputs: &ModelInputs,
    ) -> Result<Forward> {
        let c = &self.config;
        let (m, n) = (c.num_users, c.num_items);
        let feats: Vec<Var> = inputs
            .features
            .iter()
            .map(|f| tape.constant_shared(Arc::clone(f)))
            .collect();
        let spec = spectral_fusion_forward(tape, store, &self.spectral, &feats, &inputs.plan)?;

        let id = tape.param(store, self.id_embedding);
        let id_items = tape.slice_rows(id, m, n)?;

        let mut enriched = Vec::with_capacity(c.modalities.len());
        for (k, (modality, _)) in c.modalities.iter().enumerate() {
            let graph = inputs
                .item_graphs
                .get(*modality)
                .ok_or_else(|| Error::Input(format!("no item graph for {}", modality.name())))?;
            let gated =
                behavioral_gate(tape, store, id_items, spec.unimodal[k], &self.item_gates[k])?;
            enriched.push(self.enrich(tape, graph, &inputs.user_aggregation, gated)?);
        }
        let fused = if c.ablate_fusion {
            tape.constant(Tensor::zeros(&[m + n, c.dim]))
        } else {
            let gated = behavioral_gate(tape, store, id_items, spec.fused, &self.fusion_item_gate)?;
            self.enrich(
                tape,
                &inputs.item_graphs.fused,
                &inputs.user_aggregation,
                gated,
            )?
        };

        let behavioral = lightgcn_forward(tape, &inputs.bipartite, id, c.layers)?;
        let alpha =
            modality_attention(tape, store, fused, &self.preference.attention, c.attention)?;
        let weighted = weight_unimodal(tape, &enriched, alpha)?;
        let (qs, qf) = preference_gates(tape, store, behavioral, &self.preference)?;
        let side = side_features(tape, &weighted, fused, &qs, qf)?;
        let final_emb = tape.add(behavioral, side)?;
        Ok(Forward {
            id,
            behavioral,
            fused,
            fused_items: spec.fused,
            side,
            final_emb,
        })
    }

    /// One item-graph hop, user aggregation, and `[users; items]` stacking.
    fn enrich(
        &self,
        tape: &mut Tape,
        graph: &Arc<SparseMatrix>,
        agg: &Arc<SparseMatrix>,
        gated: Var,
    ) -> Result<Var> {
        let items = propagate_items(tape, graph, gated)?;
        let users = aggregate_users(tape, agg, items)?;
        tape.concat_rows(&[users, items])
    }
}

/// BPR triplets: `users[k]` observed `pos[k]` and did not observe `neg[k]`.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct TripletBatch {
    pub users: Vec<usize>,
    pub pos: Vec<usize>,
    pub neg: Vec<usize>,
}

impl TripletBatch {
    pub fn len(&self) -> usize {
        self.users.len()
    }

    pub fn is_empty(&self) -> bool {
        self.users.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossConfig {
    pub lambda_cl: f64,
    pub lambda_reg: f64,
    pub temperature: f64,
    pub full_denominator: bool,
}

#[derive(Debug, Clone, Copy)]
pub struct LossVars {
    pub bpr: Var,
    pub cl: Var,
    pub reg: Var,
    pub total: Var,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossTerms {
    pub bpr: f64,
    pub cl: f64,
    pub reg: f64,
    pub total: f64,
}

/// `ŷ = e_u · e_i`.
pub fn score(user: &[f64], item: &[f64]) -> f64 {
    user.iter().zip(item).map(|(a, b)| a * b).sum()
}

/// `Σ -ln σ(pos - neg)` over column vectors of scores.
pub fn bpr_loss(tape: &mut Tape, pos_scores: Var, neg_scores: Var) -> Result<Var> {
    let margin = tape.sub(pos_scores, neg_scores)?;
    let ls = tape.log_sigmoid(margin);
    let s = tape.sum(ls);
    Ok(tape.scale(s, -1.0))
}

/// `bpr + λ1 cl + λ2 reg`.
pub fn total_loss(
    tape: &mut Tape,
    bpr: Var,
    cl: Var,
    reg: Var,
    lambda_cl: f64,
    lambda_reg: f64,
) -> Result<Var> {
    let a = tape.scale(cl, lambda_cl);
    let b = tape.scale(reg, lambda_reg);
    let t = tape.add(bpr, a)?;
    tape.add(t, b)
}

/// Sum of squares of the given rows.
fn squared_rows(tape: &mut Tape, x: Var, rows: Arc<Vec<usize>>) -> Result<Var> {
    let g = tape.gather_rows(x, rows)?;
    let sq = tape.mul(g, g)?;
    Ok(tape.sum(sq))
}

impl ModelParams {
    /// Joint loss of one triplet batch.
    pub fn loss(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        inputs: &ModelInputs,
        batch: &TripletBatch,
        cfg: &LossConfig,
    ) -> Result<(Forward, LossVars)> {
        if batch.is_empty() {
            return Err(Error::Input("empty triplet batch".into()));
        }
        let fwd = self.forward(tape, store, inputs)?;
        let m = self.config.num_users;
        let users = Arc::new(batch.users.clone());
        let pos = Arc::new(batch.pos.iter().map(|i| m + i).collect::<Vec<_>>());
        let neg = Arc::new(batch.neg.iter().map(|j| m + j).collect::<Vec<_>>());

        let eu = tape.gather_rows(fwd.final_emb, Arc::clone(&users))?;
        let ei = tape.gather_rows(fwd.final_emb, Arc::clone(&pos))?;
        let ej = tape.gather_rows(fwd.final_emb, Arc::clone(&neg))?;
        let ui = tape.mul(eu, ei)?;
        let uj = tape.mul(eu, ej)?;
        let si = tape.sum_cols(ui);
        let sj = tape.sum_cols(uj);
        let bpr = bpr_loss(tape, si, sj)?;

        let (user_neg, item_neg) = if cfg.full_denominator {
            let n = self.config.num_items;
            (
                Negatives::Candidates(Arc::new((0..m).collect())),
                Negatives::Candidates(Arc::new((m..m + n).collect())),
            )
        } else {
            (Negatives::InBatch, Negatives::InBatch)
        };
        let clu = info_nce_loss(
            tape,
            fwd.behavioral,
            fwd.side,
            Arc::clone(&users),
            &user_neg,
            cfg.temperature,
        )?;
        let cli = info_nce_loss(
            tape,
            fwd.behavioral,
            fwd.side,
            Arc::clone(&pos),
            &item_neg,
            cfg.temperature,
        )?;
        let cl = tape.add(clu, cli)?;

        let ru = squared_rows(tape, fwd.id, users)?;
        let ri = squared_rows(tape, fwd.id, pos)?;
        let rj = squared_rows(tape, fwd.id, neg)?;
        let reg = tape.add(ru, ri)?;
        let reg = tape.add(reg, rj)?;

        let total = total_loss(tape, bpr, cl, reg, cfg.lambda_cl, cfg.lambda_reg)?;
        Ok((
            fwd,
            LossVars {
                bpr,
                cl,
                reg,
                total,
            },
        ))
    }
}

impl LossVars {
    pub fn values(&self, tape: &Tape) -> LossTerms {
        LossTerms {
            bpr: tape.value(self.bpr).item(),
            cl: tape.value(self.cl).item(),
            reg: tape.value(self.reg).item(),
            total: tape.value(self.total).item(),
        }
    }
}

impl Model {
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        let mut store = ParamStore::new();
        let params = ModelParams::init(config, &mut store, seed)?;
        Ok(Self { params, store })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.params.config
    }

    pub fn forward(&self, tape: &mut Tape, inputs: &ModelInputs) -> Result<Forward> {
        self.params.forward(tape, &self.store, inputs)
    }

    /// Final user and item embeddings, `M x d` and `N x d`.
    pub fn embeddings(&self, inputs: &ModelInputs) -> Result<(Tensor, Tensor)> {
        let mut tape = Tape::new();
        let f = self.forward(&mut tape, inputs)?;
        let all = tape.value(f.final_emb);
        let m = self.config().num_users;
        let users: Vec<usize> = (0..m).collect();
        let items: Vec<usize> = (m..all.rows()).collect();
        Ok((all.gather_rows(&users), all.gather_rows(&items)))
    }

    pub fn to_container(&self) -> Container {
        let mut c = Container::new();
        let cfg = serde_json::to_vec(self.config()).expect("config serialises");
        c.push("model_config", vec![cfg.len()], Payload::Bytes(cfg));
        self.store.write_to(&mut c);
        c
    }

    pub fn from_container(c: &Container, origin: &Path) -> Result<Self> {
        let cfg = match c.get("model_config").map(|e| &e.payload) {
            Some(Payload::Bytes(b)) => {
                serde_json::from_slice::<ModelConfig>(b).map_err(|e| Error::Format {
                    path: origin.to_path_buf(),
                    message: format!("bad model config: {e}"),
                })?
            }
            _ => {
                return Err(Error::Format {
                    path: origin.to_path_buf(),
                    message: "checkpoint lacks model_config".into(),
                })
            }
        };
        let mut model = Self::new(cfg, 0)?;
        model.store.read_from(c)?;
        Ok(model)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.to_container().save(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_container(&Container::load(path)?, path)
    }
}
