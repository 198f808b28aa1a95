//! Layout of a prepared dataset directory.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use smore::ingest::{file_hash, load_features, Dataset, FeatureMatrix, Modality};
use smore::trainer::{build_inputs, GraphCache, ModelInputs, TrainConfig};
use smore::{Error, Result};

pub const MODALITIES: [Modality; 2] = [Modality::Visual, Modality::Text];
pub const STATS_FILE: &str = "stats.json";
pub const GRAPH_CACHE_DIR: &str = "graph_cache";
const SPLIT_FILES: [&str; 5] = ["users.txt", "items.txt", "train.tsv", "val.tsv", "test.tsv"];

pub fn feature_path(dir: &Path, m: Modality) -> PathBuf {
    dir.join(format!("{}.mmfeat", m.name()))
}

/// Fails with an input error naming the modality when its file is absent.
pub fn require_feature_file(path: &Path, m: Modality) -> Result<()> {
    if path.is_file() {
        Ok(())
    } else {
        Err(Error::Input(format!(
            "{} feature file not found: {}",
            m.name(),
            path.display()
        )))
    }
}

pub struct Prepared {
    pub dir: PathBuf,
    pub dataset: Dataset,
    pub features: Vec<FeatureMatrix>,
}

impl Prepared {
    pub fn load(dir: &Path) -> Result<Self> {
        if !dir.is_dir() {
            return Err(Error::Input(format!(
                "data directory not found: {}",
                dir.display()
            )));
        }
        let dataset = Dataset::load_dir(dir)?;
        let mut features = Vec::new();
        for m in MODALITIES {
            let path = feature_path(dir, m);
            require_feature_file(&path, m)?;
            features.push(load_features(&path, m, &dataset)?);
        }
        Ok(Self {
            dir: dir.to_path_buf(),
            dataset,
            features,
        })
    }

    /// sha256 of every file the model reads, keyed by file name.
    pub fn input_hashes(&self) -> Result<BTreeMap<String, String>> {
        let mut out = BTreeMap::new();
        let names = SPLIT_FILES
            .iter()
            .map(|s| s.to_string())
            .chain(MODALITIES.iter().map(|m| format!("{}.mmfeat", m.name())));
        for name in names {
            let h = file_hash(&self.dir.join(&name))?;
            out.insert(name, h);
        }
        Ok(out)
    }

    /// Dataset hash prefix plus feature hash prefixes, so new features invalidate cached graphs.
    pub fn graph_key(&self) -> Result<String> {
        let mut key = self.dataset.content_hash()[..8].to_string();
        for m in MODALITIES {
            key.push_str(&file_hash(&feature_path(&self.dir, m))?[..4]);
        }
        Ok(key)
    }

    pub fn inputs(&self, cfg: &TrainConfig, rebuild_graphs: bool) -> Result<ModelInputs> {
        let key = self.graph_key()?;
        let dir = self.dir.join(GRAPH_CACHE_DIR);
        std::fs::create_dir_all(&dir).map_err(|e| Error::Io {
            path: dir.clone(),
            source: e,
        })?;
        let cache = GraphCache {
            dir: &dir,
            key: &key,
            rebuild: rebuild_graphs,
        };
        build_inputs(&self.dataset, &self.features, cfg, Some(cache))
    }
}

pub fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).expect("serialisable");
    text.push('\n');
    std::fs::write(path, text).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })
}
