//! Modality attention, preference gating, side-feature assembly, and the
//! contrastive alignment loss between ID embeddings and side features.

use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::diffcore::{xavier_uniform, ParamId, ParamStore, Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::graphs::GateParams;

/// Guards row normalisation against zero vectors.
const NORM_EPS: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttentionMode {
    /// Softmax across modalities separately for every user/item row.
    #[default]
    PerEntity,
    /// Scores averaged over entities first; one weight per modality.
    Global,
}

impl std::str::FromStr for AttentionMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "per_entity" => Ok(Self::PerEntity),
            "global" => Ok(Self::Global),
            other => Err(Error::Config(format!("unknown attention mode '{other}'"))),
        }
    }
}

/// `p^T tanh(H W^T + b)` scorer for one modality.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AttentionParams {
    /// `1 x d`.
    pub query: ParamId,
    pub weight: ParamId,
    pub bias: ParamId,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PreferenceParams {
    pub attention: Vec<AttentionParams>,
    pub unimodal_gates: Vec<GateParams>,
    pub fusion_gate: GateParams,
}

impl PreferenceParams {
    pub fn init<R: Rng + ?Sized>(
        store: &mut ParamStore,
        names: &[&str],
        d: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let mut attention = Vec::new();
        let mut unimodal_gates = Vec::new();
        for name in names {
            attention.push(AttentionParams {
                query: store.add_real(
                    &format!("attention.{name}.query"),
                    xavier_uniform(&[1, d], rng)?,
                ),
                weight: store.add_real(
                    &format!("attention.{name}.weight"),
                    xavier_uniform(&[d, d], rng)?,
                ),
                bias: store.add_real(&format!("attention.{name}.bias"), Tensor::zeros(&[1, d])),
            });
            unimodal_gates.push(GateParams::init(
                store,
                &format!("preference.{name}"),
                d,
                rng,
            )?);
        }
        let fusion_gate = GateParams::init(store, "preference.fusion", d, rng)?;
        Ok(Self {
            attention,
            unimodal_gates,
            fusion_gate,
        })
    }
}

/// Attention logits, `rows x |M|`.
pub fn attention_scores(
    tape: &mut Tape,
    store: &ParamStore,
    fused: Var,
    params: &[AttentionParams],
) -> Result<Var> {
    let mut cols = Vec::with_capacity(params.len());
    for p in params {
        let w = tape.param(store, p.weight);
        let b = tape.param(store, p.bias);
        let q = tape.param(store, p.query);
        let z = tape.matmul_nt(fused, w)?;
        let z = tape.add(z, b)?;
        let z = tape.tanh(z);
        cols.push(tape.matmul_nt(z, q)?);
    }
    tape.concat_cols(&cols)
}

/// Modality weights: `rows x |M|` per entity, or `1 x |M|` in global mode.
pub fn modality_attention(
    tape: &mut Tape,
    store: &ParamStore,
    fused: Var,
    params: &[AttentionParams],
    mode: AttentionMode,
) -> Result<Var> {
    if params.len() < 2 {
        return Err(Error::Input(
            "attention needs at least two modalities".into(),
        ));
    }
    let scores = attention_scores(tape, store, fused, params)?;
    let logits = match mode {
        AttentionMode::PerEntity => scores,
        AttentionMode::Global => tape.mean_rows(scores),
    };
    Ok(tape.softmax_rows(logits))
}

/// `α_m ⊙ H_m` for each modality; `alpha` broadcasts if it has one row.
pub fn weight_unimodal(tape: &mut Tape, features: &[Var], alpha: Var) -> Result<Vec<Var>> {
    if tape.shape(alpha)[1] != features.len() {
        return Err(Error::shape(
            "weight_unimodal",
            tape.shape(alpha),
            &[features.len()],
        ));
    }
    features
        .iter()
        .enumerate()
        .map(|(m, &h)| {
            let a = tape.column(alpha, m)?;
            tape.mul(h, a)
        })
        .collect()
}

/// `Σ_m α_m ⊙ H_m`.
pub fn aggregate_unimodal(tape: &mut Tape, features: &[Var], alpha: Var) -> Result<Var> {
    let weighted = weight_unimodal(tape, features, alpha)?;
    let mut acc = weighted[0];
    for &w in &weighted[1..] {
        acc = tape.add(acc, w)?;
    }
    Ok(acc)
}

/// `σ(E W^T + b)`.
pub fn preference_gate(
    tape: &mut Tape,
    store: &ParamStore,
    e: Var,
    gate: &GateParams,
) -> Result<Var> {
    let w = tape.param(store, gate.weight);
    let b = tape.param(store, gate.bias);
    let z = tape.matmul_nt(e, w)?;
    let z = tape.add(z, b)?;
    Ok(tape.sigmoid(z))
}

/// Per-modality gates followed by the fusion gate.
pub fn preference_gates(
    tape: &mut Tape,
    store: &ParamStore,
    e: Var,
    params: &PreferenceParams,
) -> Result<(Vec<Var>, Var)> {
    let q: Result<Vec<Var>> = params
        .unimodal_gates
        .iter()
        .map(|g| preference_gate(tape, store, e, g))
        .collect();
    Ok((q?, preference_gate(tape, store, e, &params.fusion_gate)?))
}

/// `(1/|M|) Σ_m H*_m ⊙ Q_m + H_f ⊙ Q_f`.
pub fn side_features(
    tape: &mut Tape,
    weighted: &[Var],
    fused: Var,
    gates: &[Var],
    fusion_gate: Var,
) -> Result<Var> {
    if weighted.is_empty() || weighted.len() != gates.len() {
        return Err(Error::Input(format!(
            "side features need one gate per modality, got {} features and {} gates",
            weighted.len(),
            gates.len()
        )));
    }
    let mut acc = tape.mul(weighted[0], gates[0])?;
    for (&h, &q) in weighted.iter().zip(gates).skip(1) {
        let t = tape.mul(h, q)?;
        acc = tape.add(acc, t)?;
    }
    let acc = tape.scale(acc, 1.0 / weighted.len() as f64);
    let f = tape.mul(fused, fusion_gate)?;
    tape.add(acc, f)
}

/// Which entities appear in the InfoNCE denominator.
#[derive(Debug, Clone)]
pub enum Negatives {
    /// The batch itself (duplicates kept).
    InBatch,
    /// An explicit candidate set, e.g. every user.
    Candidates(Arc<Vec<usize>>),
}

/// `Σ_b -log( exp(ê_b·ĥ_b/τ) / Σ_v exp(ê_b·ĥ_v/τ) )` with L2-normalised rows.
///
/// `anchors` and `positives` are indexed by `batch` rows of the full tables.
pub fn info_nce_loss(
    tape: &mut Tape,
    anchors: Var,
    positives: Var,
    batch: Arc<Vec<usize>>,
    negatives: &Negatives,
    tau: f64,
) -> Result<Var> {
    if !(tau > 0.0) || !tau.is_finite() {
        return Err(Error::Config(format!(
            "temperature must be positive, got {tau}"
        )));
    }
    if batch.is_empty() {
        return Err(Error::Input("contrastive batch is empty".into()));
    }
    let a = tape.gather_rows(anchors, Arc::clone(&batch))?;
    let a = tape.l2_normalize_rows(a, NORM_EPS);
    let p = tape.gather_rows(positives, Arc::clone(&batch))?;
    let p = tape.l2_normalize_rows(p, NORM_EPS);
    let cand = match negatives {
        Negatives::InBatch => p,
        Negatives::Candidates(idx) => {
            let c = tape.gather_rows(positives, Arc::clone(idx))?;
            tape.l2_normalize_rows(c, NORM_EPS)
        }
    };
    let sims = tape.matmul_nt(a, cand)?;
    let sims = tape.scale(sims, 1.0 / tau);
    let lse = tape.logsumexp_rows(sims);
    let lse = tape.sum(lse);
    let pos = tape.mul(a, p)?;
    let pos = tape.sum(pos);
    let pos = tape.scale(pos, 1.0 / tau);
    tape.sub(lse, pos)
}
