use std::path::PathBuf;

use smore::inspect::{fused_item_features, uniformity, ANGULAR_BINS};
use smore::trainer::Model;
use smore::Result;

use crate::data::{write_json, Prepared};

#[derive(Debug, clap::Args)]
pub struct Args {
    /// Checkpoint written by `train`.
    #[arg(long)]
    checkpoint: PathBuf,
    /// Dataset directory the checkpoint was trained on.
    #[arg(long)]
    data: PathBuf,
    /// Histogram bins for the angular entropy.
    #[arg(long, default_value_t = ANGULAR_BINS)]
    bins: usize,
    /// Also write the statistics here.
    #[arg(long)]
    out: Option<PathBuf>,
}

pub fn run(args: &Args) -> Result<()> {
    let model = Model::load(&args.checkpoint)?;
    let prepared = Prepared::load(&args.data)?;
    let inputs = prepared.inputs(&model.config().input_config(), false)?;
    let stats = uniformity(&fused_item_features(&model, &inputs)?, args.bins)?;
    if let Some(out) = &args.out {
        write_json(out, &stats)?;
    }
    println!("{}", serde_json::to_string(&stats).expect("serialisable"));
    Ok(())
}
