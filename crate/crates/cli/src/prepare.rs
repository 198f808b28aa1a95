use std::collections::HashSet;
use std::path::PathBuf;

use clap::ValueEnum;
use serde::Serialize;
use smore::ingest::{
    kcore_filter, load_features_ignoring, load_interactions, split, write_features, Column,
    DatasetStats, InteractionFormat, Modality, SplitMode, SplitRatios,
};
use smore::trainer::{planted_blocks, SyntheticSpec};
use smore::{Error, Result};

use crate::data::{feature_path, require_feature_file, write_json, MODALITIES, STATS_FILE};

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum Mode {
    PerUser,
    Global,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum CorruptArg {
    Visual,
    Text,
}

#[derive(Debug, clap::Args)]
pub struct Args {
    /// Delimited user/item interaction file.
    #[arg(long, required_unless_present = "synthetic")]
    interactions: Option<PathBuf>,
    /// Visual features: `MMFEAT01` binary (with optional `.ids` sidecar) or text rows led by the item id.
    #[arg(long, required_unless_present = "synthetic")]
    visual: Option<PathBuf>,
    /// Text features, in the same formats as `--visual`.
    #[arg(long, required_unless_present = "synthetic")]
    text: Option<PathBuf>,
    /// Output dataset directory.
    #[arg(long)]
    out: PathBuf,
    /// Minimum interactions per user and per item.
    #[arg(long, default_value_t = 5)]
    k_core: usize,
    /// train,val,test fractions.
    #[arg(
        long,
        default_value = "0.8,0.1,0.1",
        value_delimiter = ',',
        num_args = 3
    )]
    ratios: Vec<f64>,
    /// Split each user's history, or shuffle all interactions.
    #[arg(long, value_enum, default_value_t = Mode::PerUser)]
    split_mode: Mode,
    /// User column, by index or header name.
    #[arg(long, default_value = "0")]
    user_column: String,
    /// Item column, by index or header name.
    #[arg(long, default_value = "1")]
    item_column: String,
    /// Single-byte field delimiter; sniffed from the first line when omitted.
    #[arg(long)]
    delimiter: Option<char>,
    /// Generate a planted-block dataset instead of reading files.
    #[arg(long, conflicts_with_all = ["interactions", "visual", "text"])]
    synthetic: bool,
    /// Add 0 dB noise to one synthetic modality.
    #[arg(long, value_enum, requires = "synthetic")]
    corrupt: Option<CorruptArg>,
}

#[derive(Debug, Serialize)]
struct Stats {
    #[serde(flatten)]
    counts: DatasetStats,
    dataset_hash: String,
    seed: u64,
    k_core: Option<usize>,
    feature_dims: Vec<(Modality, usize)>,
}

fn column(spec: &str) -> Column {
    spec.parse()
        .map(Column::Index)
        .unwrap_or_else(|_| Column::Name(spec.to_string()))
}

pub fn run(args: &Args, seed: u64) -> Result<()> {
    let (dataset, features, k_core) = if args.synthetic {
        let spec = SyntheticSpec {
            seed,
            corrupt: args.corrupt.map(|c| match c {
                CorruptArg::Visual => Modality::Visual,
                CorruptArg::Text => Modality::Text,
            }),
            ..SyntheticSpec::default()
        };
        let data = planted_blocks(&spec)?;
        (data.dataset, data.features, None)
    } else {
        let interactions = args.interactions.as_ref().expect("required by clap");
        let paths =
            [args.visual.as_ref(), args.text.as_ref()].map(|p| p.expect("required by clap"));
        for (m, p) in MODALITIES.iter().zip(paths) {
            require_feature_file(p, *m)?;
        }
        if !interactions.is_file() {
            return Err(Error::Input(format!(
                "interaction file not found: {}",
                interactions.display()
            )));
        }
        let delimiter = match args.delimiter {
            Some(c) if c.is_ascii() => Some(c as u8),
            Some(c) => {
                return Err(Error::Config(format!(
                    "delimiter must be a single ASCII byte, got {c:?}"
                )))
            }
            None => None,
        };
        let format = InteractionFormat {
            delimiter,
            header: None,
            user_column: column(&args.user_column),
            item_column: column(&args.item_column),
        };
        let raw = load_interactions(interactions, &format)?;
        let filtered = kcore_filter(&raw, args.k_core)?;
        log::info!(
            "{}-core filter kept {} of {} interactions",
            args.k_core,
            filtered.len(),
            raw.len()
        );
        let ratios = SplitRatios {
            train: args.ratios[0],
            val: args.ratios[1],
            test: args.ratios[2],
        };
        let mode = match args.split_mode {
            Mode::PerUser => SplitMode::PerUser,
            Mode::Global => SplitMode::Global,
        };
        let dataset = split(&filtered, ratios, seed, mode)?;
        let kept: HashSet<&str> = filtered.items().into_iter().collect();
        let dropped: HashSet<String> = raw
            .items()
            .into_iter()
            .filter(|i| !kept.contains(i))
            .map(str::to_string)
            .collect();
        let mut features = Vec::new();
        for (m, p) in MODALITIES.iter().zip(paths) {
            features.push(load_features_ignoring(p, *m, &dataset, &dropped)?);
        }
        (dataset, features, Some(args.k_core))
    };

    std::fs::create_dir_all(&args.out).map_err(|e| Error::Io {
        path: args.out.clone(),
        source: e,
    })?;
    dataset.save_dir(&args.out)?;
    for f in &features {
        write_features(
            &feature_path(&args.out, f.modality),
            &f.values,
            Some(&dataset.item_ids),
        )?;
    }
    let stats = Stats {
        counts: dataset.stats(),
        dataset_hash: dataset.content_hash(),
        seed,
        k_core,
        feature_dims: features.iter().map(|f| (f.modality, f.dim())).collect(),
    };
    write_json(&args.out.join(STATS_FILE), &stats)?;
    println!("{}", serde_json::to_string(&stats).expect("serialisable"));
    Ok(())
}
