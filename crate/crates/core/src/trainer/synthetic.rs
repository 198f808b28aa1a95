//! Planted-block synthetic data for end-to-end checks.

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::diffcore::Tensor;
use crate::error::{Error, Result};
use crate::ingest::{
    split, Dataset, FeatureMatrix, Modality, RawInteractions, SplitMode, SplitRatios,
};
use crate::trainer::config::TrainConfig;

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSpec {
    pub users: usize,
    pub items: usize,
    /// Users and items are cut into this many contiguous, aligned groups.
    pub groups: usize,
    pub interactions_per_user: usize,
    /// Probability that an interaction lands outside the user's group.
    pub off_group_rate: f64,
    pub visual_dim: usize,
    pub text_dim: usize,
    /// Noise power relative to the group prototype power.
    pub feature_noise: f64,
    /// Extra noise at 0 dB SNR added to this modality.
    pub corrupt: Option<Modality>,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            users: 20,
            items: 30,
            groups: 2,
            interactions_per_user: 6,
            off_group_rate: 0.0,
            visual_dim: 16,
            text_dim: 12,
            feature_noise: 0.2,
            corrupt: None,
            seed: 0,
        }
    }
}

/// Training settings sized for the planted-block data.
pub fn fixture_config(seed: u64) -> TrainConfig {
    TrainConfig {
        dim: 16,
        k_visual: 5,
        k_text: 5,
        lr: 0.01,
        batch_size: 64,
        max_epochs: 100,
        patience: 20,
        seed,
        ..TrainConfig::default()
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticData {
    pub dataset: Dataset,
    /// Visual then text.
    pub features: Vec<FeatureMatrix>,
    pub user_group: Vec<usize>,
    pub item_group: Vec<usize>,
}

fn group_of(idx: usize, count: usize, groups: usize) -> usize {
    idx * groups / count
}

fn gaussian(rng: &mut ChaCha8Rng) -> f64 {
    rng.sample(StandardNormal)
}

fn modality_features(
    rng: &mut ChaCha8Rng,
    item_group: &[usize],
    groups: usize,
    dim: usize,
    noise: f64,
) -> Vec<f64> {
    let protos: Vec<Vec<f64>> = (0..groups)
        .map(|_| (0..dim).map(|_| gaussian(rng)).collect())
        .collect();
    let power = protos.iter().flatten().map(|v| v * v).sum::<f64>() / (groups * dim) as f64;
    let sd = (noise * power).sqrt();
    let mut out = Vec::with_capacity(item_group.len() * dim);
    for &g in item_group {
        out.extend(protos[g].iter().map(|&p| p + sd * gaussian(rng)));
    }
    out
}

/// Adds white noise whose power equals the mean signal power (0 dB SNR).
pub fn corrupt_at_zero_db(values: &Tensor, rng: &mut ChaCha8Rng) -> Tensor {
    let power = values.data().iter().map(|v| v * v).sum::<f64>() / values.len().max(1) as f64;
    let sd = power.sqrt();
    let mut out = values.clone();
    out.data_mut()
        .iter_mut()
        .for_each(|v| *v += sd * gaussian(rng));
    out
}

pub fn planted_blocks(spec: &SyntheticSpec) -> Result<SyntheticData> {
    if spec.groups == 0 || spec.groups > spec.users.min(spec.items) {
        return Err(Error::Config(
            "groups must be between 1 and min(users, items)".into(),
        ));
    }
    let per_group_items = spec.items / spec.groups;
    if spec.interactions_per_user == 0 || spec.interactions_per_user > per_group_items {
        return Err(Error::Config(
            "interactions_per_user must fit inside one item group".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let user_group: Vec<usize> = (0..spec.users)
        .map(|u| group_of(u, spec.users, spec.groups))
        .collect();
    let item_group: Vec<usize> = (0..spec.items)
        .map(|i| group_of(i, spec.items, spec.groups))
        .collect();
    let members: Vec<Vec<usize>> = (0..spec.groups)
        .map(|g| (0..spec.items).filter(|&i| item_group[i] == g).collect())
        .collect();

    let mut pairs = Vec::new();
    for u in 0..spec.users {
        let g = user_group[u];
        let mut chosen: Vec<usize> = sample(&mut rng, members[g].len(), spec.interactions_per_user)
            .into_iter()
            .map(|k| members[g][k])
            .collect();
        for slot in chosen.iter_mut() {
            if spec.groups > 1 && rng.random_bool(spec.off_group_rate) {
                let other = (g + rng.random_range(1..spec.groups)) % spec.groups;
                *slot = members[other][rng.random_range(0..members[other].len())];
            }
        }
        chosen.sort_unstable();
        chosen.dedup();
        for i in chosen {
            pairs.push((format!("u{u:03}"), format!("i{i:03}")));
        }
    }
    // Every item must appear so ids map one-to-one onto feature rows.
    for i in 0..spec.items {
        let key = format!("i{i:03}");
        if !pairs.iter().any(|(_, it)| *it == key) {
            let candidates: Vec<usize> = (0..spec.users)
                .filter(|&u| user_group[u] == item_group[i])
                .collect();
            let u = candidates[rng.random_range(0..candidates.len())];
            pairs.push((format!("u{u:03}"), key));
        }
    }
    let raw = RawInteractions::from_pairs(pairs);
    let dataset = split(&raw, SplitRatios::default(), spec.seed, SplitMode::PerUser)?;

    // Dataset ids are sorted and zero-padded, so index order equals generation order.
    let mut visual = Tensor::matrix(
        spec.items,
        spec.visual_dim,
        modality_features(
            &mut rng,
            &item_group,
            spec.groups,
            spec.visual_dim,
            spec.feature_noise,
        ),
    );
    let mut text = Tensor::matrix(
        spec.items,
        spec.text_dim,
        modality_features(
            &mut rng,
            &item_group,
            spec.groups,
            spec.text_dim,
            spec.feature_noise,
        ),
    );
    // Separate stream so the clean data is identical with and without corruption.
    let mut noise_rng = ChaCha8Rng::seed_from_u64(spec.seed ^ 0x5EED_0DB0);
    match spec.corrupt {
        Some(Modality::Visual) => visual = corrupt_at_zero_db(&visual, &mut noise_rng),
        Some(Modality::Text) => text = corrupt_at_zero_db(&text, &mut noise_rng),
        None => {}
    }
    Ok(SyntheticData {
        dataset,
        features: vec![
            FeatureMatrix::new(Modality::Visual, visual)?,
            FeatureMatrix::new(Modality::Text, text)?,
        ],
        user_group,
        item_group,
    })
}
