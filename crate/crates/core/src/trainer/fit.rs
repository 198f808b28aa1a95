use std::path::Path;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::diffcore::{Adam, Tape};
use crate::error::{Error, Result};
use crate::eval::evaluate_embeddings;
use crate::graphs::{cached_knn_graph, ItemGraphs};
use crate::ingest::{Dataset, FeatureMatrix, Modality, Split};
use crate::trainer::config::{TrainConfig, VALIDATION_K};
use crate::trainer::model::{LossConfig, Model, ModelConfig, ModelInputs};
use crate::trainer::sampler::TripletSampler;

/// Offset mixed into the seed for triplet sampling so it does not share a
/// stream with parameter initialisation.
const SAMPLER_STREAM: u64 = 0x9E37_79B9_7F4A_7C15;

/// One line of the training log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    /// Per-triplet averages over the epoch.
    pub loss: f64,
    pub bpr: f64,
    pub cl: f64,
    pub reg: f64,
    #[serde(rename = "val_recall@20")]
    pub val_recall: f64,
    #[serde(rename = "val_ndcg@20")]
    pub val_ndcg: f64,
    pub elapsed_secs: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitOutcome {
    pub history: Vec<EpochLog>,
    /// 1-based epoch whose parameters were kept: the last one reaching the best validation recall.
    pub best_epoch: usize,
    pub best_val_recall: f64,
    pub stopped_early: bool,
}

impl ModelConfig {
    pub fn from_train(cfg: &TrainConfig, dataset: &Dataset, features: &[FeatureMatrix]) -> Self {
        Self {
            num_users: dataset.num_users(),
            num_items: dataset.num_items(),
            dim: cfg.dim,
            layers: cfg.layers,
            attention: cfg.attention,
            ablate_fusion: cfg.ablate_fusion,
            identity_filters: cfg.identity_filters,
            modalities: features.iter().map(|f| (f.modality, f.dim())).collect(),
            k_visual: cfg.k_visual,
            k_text: cfg.k_text,
        }
    }

    /// Settings that rebuild the frozen inputs this model was trained with.
    pub fn input_config(&self) -> TrainConfig {
        TrainConfig {
            dim: self.dim,
            layers: self.layers,
            k_visual: self.k_visual,
            k_text: self.k_text,
            attention: self.attention,
            ablate_fusion: self.ablate_fusion,
            identity_filters: self.identity_filters,
            ..TrainConfig::default()
        }
    }
}

impl TrainConfig {
    pub fn loss_config(&self) -> LossConfig {
        LossConfig {
            lambda_cl: self.lambda_cl,
            lambda_reg: self.lambda_reg,
            temperature: self.temperature,
            full_denominator: self.cl_full_denominator,
        }
    }

    pub fn neighbours(&self, m: Modality) -> usize {
        match m {
            Modality::Visual => self.k_visual,
            Modality::Text => self.k_text,
        }
    }
}

/// Where kNN graphs are cached, and under which content key.
#[derive(Debug, Clone, Copy)]
pub struct GraphCache<'a> {
    pub dir: &'a Path,
    pub key: &'a str,
    pub rebuild: bool,
}

/// Builds frozen item graphs and propagation matrices for `dataset`.
pub fn build_inputs(
    dataset: &Dataset,
    features: &[FeatureMatrix],
    cfg: &TrainConfig,
    cache: Option<GraphCache<'_>>,
) -> Result<ModelInputs> {
    let mut raw = Vec::with_capacity(features.len());
    for f in features {
        let k = cfg.neighbours(f.modality);
        let g = match cache {
            Some(c) => cached_knn_graph(&f.values, k, f.modality, c.key, Some(c.dir), c.rebuild)?,
            None => cached_knn_graph(&f.values, k, f.modality, "", None, false)?,
        };
        raw.push((f.modality, g));
    }
    let graphs = ItemGraphs::from_raw(raw)?;
    ModelInputs::new(dataset, features, graphs, cfg.dim)
}

/// Trains `model` in place, keeping the parameters with the best validation Recall@20.
///
/// `on_epoch` sees every log line as it is produced. On a non-finite loss or
/// gradient the best parameters so far are restored before the error is returned.
pub fn fit(
    model: &mut Model,
    inputs: &ModelInputs,
    dataset: &Dataset,
    cfg: &TrainConfig,
    on_epoch: &mut dyn FnMut(&EpochLog) -> Result<()>,
) -> Result<FitOutcome> {
    cfg.validate()?;
    let sampler = TripletSampler::new(dataset)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ SAMPLER_STREAM);
    let mut adam = Adam::new(&model.store, cfg.lr);
    let loss_cfg = cfg.loss_config();
    let batches = dataset.train.len().div_ceil(cfg.batch_size);
    let start = Instant::now();

    let mut best = model.store.clone();
    let mut best_recall = f64::NEG_INFINITY;
    let mut best_epoch = 0;
    let mut stale = 0;
    let mut history = Vec::new();
    let mut stopped_early = false;

    for epoch in 1..=cfg.max_epochs {
        let (mut bpr, mut cl, mut reg, mut total) = (0.0, 0.0, 0.0, 0.0);
        let mut triplets = 0usize;
        for _ in 0..batches {
            let batch = sampler.sample(cfg.batch_size, &mut rng);
            let mut tape = Tape::new();
            let (_, vars) =
                model
                    .params
                    .loss(&mut tape, &model.store, inputs, &batch, &loss_cfg)?;
            let terms = vars.values(&tape);
            let step = if terms.total.is_finite() {
                tape.backward(vars.total, &mut model.store)
                    .and_then(|_| adam.step(&mut model.store))
            } else {
                Err(Error::NonFinite(format!("loss at epoch {epoch}")))
            };
            if let Err(e) = step {
                model.store.copy_values_from(&best)?;
                model.store.zero_grad();
                return Err(e);
            }
            bpr += terms.bpr;
            cl += terms.cl;
            reg += terms.reg;
            total += terms.total;
            triplets += batch.len();
        }
        let (users, items) = model.embeddings(inputs)?;
        let val = evaluate_embeddings(&users, &items, dataset, Split::Val, &[VALIDATION_K])?;
        let t = triplets as f64;
        let line = EpochLog {
            epoch,
            loss: total / t,
            bpr: bpr / t,
            cl: cl / t,
            reg: reg / t,
            val_recall: val.recall_at(VALIDATION_K),
            val_ndcg: val.ndcg_at(VALIDATION_K),
            elapsed_secs: start.elapsed().as_secs_f64(),
        };
        on_epoch(&line)?;
        let recall = line.val_recall;
        history.push(line);
        // Ties move the checkpoint forward but do not reset patience.
        if recall >= best_recall {
            best_epoch = epoch;
            best = model.store.clone();
        }
        if recall > best_recall {
            best_recall = recall;
            stale = 0;
        } else {
            stale += 1;
            if stale >= cfg.patience {
                stopped_early = true;
                break;
            }
        }
    }
    model.store.copy_values_from(&best)?;
    Ok(FitOutcome {
        history,
        best_epoch,
        best_val_recall: best_recall,
        stopped_early,
    })
}
