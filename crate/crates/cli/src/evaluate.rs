use std::path::PathBuf;

use smore::eval::evaluate_embeddings;
use smore::ingest::Split;
use smore::trainer::Model;
use smore::{Error, Result};

use crate::data::Prepared;

#[derive(Debug, clap::Args)]
pub struct Args {
    /// Checkpoint written by `train`.
    #[arg(long)]
    checkpoint: PathBuf,
    /// Dataset directory the checkpoint was trained on.
    #[arg(long)]
    data: PathBuf,
    /// `val` or `test`.
    #[arg(long, default_value = "test")]
    split: Split,
    /// Cutoffs for Recall@K and NDCG@K.
    #[arg(long, default_value = "10,20", value_delimiter = ',')]
    k: Vec<usize>,
    /// Also write the report here.
    #[arg(long)]
    out: Option<PathBuf>,
}

pub fn run(args: &Args) -> Result<()> {
    if args.split == Split::Train {
        return Err(Error::Config(
            "evaluate scores the val or test split".into(),
        ));
    }
    let model = Model::load(&args.checkpoint)?;
    let prepared = Prepared::load(&args.data)?;
    let cfg = model.config();
    if (cfg.num_users, cfg.num_items)
        != (prepared.dataset.num_users(), prepared.dataset.num_items())
    {
        return Err(Error::Input(format!(
            "checkpoint expects {} users and {} items, data has {} and {}",
            cfg.num_users,
            cfg.num_items,
            prepared.dataset.num_users(),
            prepared.dataset.num_items()
        )));
    }
    let inputs = prepared.inputs(&cfg.input_config(), false)?;
    let (users, items) = model.embeddings(&inputs)?;
    let report = evaluate_embeddings(&users, &items, &prepared.dataset, args.split, &args.k)?;
    if let Some(out) = &args.out {
        report.write_json(out)?;
    }
    println!("{}", serde_json::to_string(&report).expect("serialisable"));
    Ok(())
}
