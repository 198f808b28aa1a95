use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::Serialize;
use smore::diffcore::Tape;
use smore::eval::evaluate_embeddings;
use smore::ingest::{file_hash, Split};
use smore::spectral::{magnitude_spectrum, spectral_fusion_forward, write_spectrum_csv};
use smore::trainer::{fit, Model, ModelConfig, ModelInputs, TrainConfig};
use smore::{Error, Result};

use crate::data::{write_json, Prepared};

#[derive(Debug, clap::Args)]
pub struct Args {
    /// Directory written by `prepare`.
    #[arg(long)]
    data: PathBuf,
    /// TOML training config; unknown keys are rejected.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Parent of the run directory.
    #[arg(long, default_value = "runs")]
    out: PathBuf,
    /// Validate the config and build graphs, then exit without training.
    #[arg(long)]
    dry_run: bool,
    /// Ignore cached item graphs.
    #[arg(long)]
    rebuild_graphs: bool,
    /// Write per-modality magnitude spectra of the trained filters' outputs as CSV here.
    #[arg(long)]
    dump_spectrum: Option<PathBuf>,
}

pub const MANIFEST: &str = "manifest.json";
pub const TRAIN_LOG: &str = "train_log.jsonl";
pub const CHECKPOINT: &str = "checkpoint.bin";
pub const METRICS: &str = "metrics.json";

#[derive(Debug, Serialize)]
struct Manifest<'a> {
    started_at: String,
    seed: u64,
    config: &'a TrainConfig,
    config_file: Option<String>,
    config_hash: Option<String>,
    data_dir: String,
    dataset_hash: String,
    input_hashes: BTreeMap<String, String>,
    versions: BTreeMap<&'static str, &'static str>,
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> Error + '_ {
    move |e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    }
}

fn create_run_dir(parent: &Path, stamp: &str, seed: u64) -> Result<PathBuf> {
    std::fs::create_dir_all(parent).map_err(io_err(parent))?;
    let base = format!("run_{stamp}_seed{seed}");
    for n in 0.. {
        let name = if n == 0 {
            base.clone()
        } else {
            format!("{base}_{n}")
        };
        let dir = parent.join(name);
        match std::fs::create_dir(&dir) {
            Ok(()) => return Ok(dir),
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => continue,
            Err(e) => return Err(io_err(&dir)(e)),
        }
    }
    unreachable!()
}

fn dump_spectra(
    dir: &Path,
    model: &Model,
    inputs: &ModelInputs,
    prepared: &Prepared,
) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(io_err(dir))?;
    let mut tape = Tape::new();
    let feats: Vec<_> = inputs
        .features
        .iter()
        .map(|f| tape.constant_shared(Arc::clone(f)))
        .collect();
    let out = spectral_fusion_forward(
        &mut tape,
        &model.store,
        &model.params.spectral,
        &feats,
        &inputs.plan,
    )?;
    let ids = &prepared.dataset.item_ids;
    for ((m, _), var) in model.config().modalities.iter().zip(&out.unimodal) {
        let mags = magnitude_spectrum(tape.value(*var), &inputs.plan);
        write_spectrum_csv(&dir.join(format!("spectrum_{}.csv", m.name())), &mags, ids)?;
    }
    let mags = magnitude_spectrum(tape.value(out.fused), &inputs.plan);
    write_spectrum_csv(&dir.join("spectrum_fusion.csv"), &mags, ids)
}

pub fn run(args: &Args, cfg: TrainConfig, config_file: Option<&Path>) -> Result<()> {
    let prepared = Prepared::load(&args.data)?;
    let inputs = prepared.inputs(&cfg, args.rebuild_graphs)?;
    let model_cfg = ModelConfig::from_train(&cfg, &prepared.dataset, &prepared.features);
    let mut model = Model::new(model_cfg, cfg.seed)?;
    if args.dry_run {
        model.embeddings(&inputs)?;
        let summary = serde_json::json!({
            "dry_run": true,
            "users": prepared.dataset.num_users(),
            "items": prepared.dataset.num_items(),
            "graph_edges": inputs.item_graphs.modalities.iter()
                .map(|(m, g)| (m.name(), g.nnz()))
                .collect::<BTreeMap<_, _>>(),
            "fused_graph_edges": inputs.item_graphs.fused.nnz(),
            "parameters": model.store.num_scalars(),
        });
        println!("{summary}");
        return Ok(());
    }

    let now = chrono::Utc::now();
    let run_dir = create_run_dir(
        &args.out,
        &now.format("%Y%m%dT%H%M%SZ").to_string(),
        cfg.seed,
    )?;
    log::info!("run directory {}", run_dir.display());
    let manifest = Manifest {
        started_at: now.to_rfc3339(),
        seed: cfg.seed,
        config: &cfg,
        config_file: config_file.map(|p| p.display().to_string()),
        config_hash: config_file.map(file_hash).transpose()?,
        data_dir: args.data.display().to_string(),
        dataset_hash: prepared.dataset.content_hash(),
        input_hashes: prepared.input_hashes()?,
        versions: BTreeMap::from([
            ("smore", smore::VERSION),
            ("smore-cli", env!("CARGO_PKG_VERSION")),
        ]),
    };
    write_json(&run_dir.join(MANIFEST), &manifest)?;

    let log_path = run_dir.join(TRAIN_LOG);
    let mut log_file = BufWriter::new(File::create(&log_path).map_err(io_err(&log_path))?);
    let stdout = std::io::stdout();
    let mut on_epoch = |line: &smore::trainer::EpochLog| -> Result<()> {
        let json = serde_json::to_string(line).expect("serialisable");
        writeln!(log_file, "{json}")
            .and_then(|_| log_file.flush())
            .map_err(io_err(&log_path))?;
        writeln!(stdout.lock(), "{json}").map_err(io_err(Path::new("<stdout>")))?;
        Ok(())
    };
    let outcome = fit(&mut model, &inputs, &prepared.dataset, &cfg, &mut on_epoch);
    let checkpoint = run_dir.join(CHECKPOINT);
    model.save(&checkpoint)?;
    let outcome = outcome?;
    log::info!(
        "best epoch {} with val recall@20 {:.4}{}",
        outcome.best_epoch,
        outcome.best_val_recall,
        if outcome.stopped_early {
            " (early stop)"
        } else {
            ""
        }
    );

    let (users, items) = model.embeddings(&inputs)?;
    let report = evaluate_embeddings(&users, &items, &prepared.dataset, Split::Test, &cfg.eval_ks)?;
    report.write_json(&run_dir.join(METRICS))?;
    for &k in &report.ks {
        log::info!(
            "test recall@{k} {:.4} ndcg@{k} {:.4}",
            report.recall_at(k),
            report.ndcg_at(k)
        );
    }
    if let Some(dir) = &args.dump_spectrum {
        dump_spectra(dir, &model, &inputs, &prepared)?;
    }
    Ok(())
}
