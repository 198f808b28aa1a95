use rand::Rng;

use crate::error::{Error, Result};
use crate::ingest::{Dataset, Split};
use crate::trainer::model::TripletBatch;

/// Uniform BPR triplet sampler over the training split.
#[derive(Debug, Clone)]
pub struct TripletSampler {
    pairs: Vec<(usize, usize)>,
    /// Sorted training items per user.
    observed: Vec<Vec<usize>>,
    num_items: usize,
}

impl TripletSampler {
    /// Fails if the training split is empty or some user has observed every item.
    pub fn new(dataset: &Dataset) -> Result<Self> {
        if dataset.train.is_empty() {
            return Err(Error::Input("training split is empty".into()));
        }
        let observed = dataset.items_by_user(Split::Train);
        if let Some(u) = observed.iter().position(|v| v.len() >= dataset.num_items()) {
            return Err(Error::Input(format!(
                "user '{}' has observed every item; no negatives can be sampled",
                dataset.user_ids[u]
            )));
        }
        Ok(Self {
            pairs: dataset.train.clone(),
            observed,
            num_items: dataset.num_items(),
        })
    }

    /// Positives uniform over training pairs; each negative uniform over
    /// items, redrawn until unobserved by the user.
    pub fn sample<R: Rng + ?Sized>(&self, batch_size: usize, rng: &mut R) -> TripletBatch {
        let mut b = TripletBatch {
            users: Vec::with_capacity(batch_size),
            pos: Vec::with_capacity(batch_size),
            neg: Vec::with_capacity(batch_size),
        };
        for _ in 0..batch_size {
            let (u, i) = self.pairs[rng.random_range(0..self.pairs.len())];
            let seen = &self.observed[u];
            let j = loop {
                let j = rng.random_range(0..self.num_items);
                if seen.binary_search(&j).is_err() {
                    break j;
                }
            };
            b.users.push(u);
            b.pos.push(i);
            b.neg.push(j);
        }
        b
    }
}

pub fn sample_triplets<R: Rng + ?Sized>(
    dataset: &Dataset,
    batch_size: usize,
    rng: &mut R,
) -> Result<TripletBatch> {
    Ok(TripletSampler::new(dataset)?.sample(batch_size, rng))
}
