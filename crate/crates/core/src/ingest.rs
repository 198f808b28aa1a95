//! Interaction and modality-feature loading, k-core filtering, and splitting.

use std::collections::{BTreeSet, HashMap, HashSet};
use std::fs;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::diffcore::{SparseMatrix, Tensor};
use crate::error::{Error, Result};

pub const FEATURE_MAGIC: &[u8; 8] = b"MMFEAT01";

/// Deduplicated implicit-feedback events keyed by external ids.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct RawInteractions {
    pub pairs: Vec<(String, String)>,
}

impl RawInteractions {
    /// Builds from pairs, keeping the first occurrence of each `(user, item)`.
    pub fn from_pairs<I, U, T>(pairs: I) -> Self
    where
        I: IntoIterator<Item = (U, T)>,
        U: Into<String>,
        T: Into<String>,
    {
        let mut seen = HashSet::new();
        let mut out = Vec::new();
        for (u, i) in pairs {
            let key = (u.into(), i.into());
            if seen.insert(key.clone()) {
                out.push(key);
            }
        }
        Self { pairs: out }
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn users(&self) -> BTreeSet<&str> {
        self.pairs.iter().map(|(u, _)| u.as_str()).collect()
    }

    pub fn items(&self) -> BTreeSet<&str> {
        self.pairs.iter().map(|(_, i)| i.as_str()).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Column {
    Index(usize),
    Name(String),
}

/// How to read a delimited interaction file.
#[derive(Debug, Clone)]
pub struct InteractionFormat {
    /// `None` sniffs tab vs comma from the first line.
    pub delimiter: Option<u8>,
    /// `None` means "header present iff a column is selected by name".
    pub header: Option<bool>,
    pub user_column: Column,
    pub item_column: Column,
}

impl Default for InteractionFormat {
    fn default() -> Self {
        Self {
            delimiter: None,
            header: None,
            user_column: Column::Index(0),
            item_column: Column::Index(1),
        }
    }
}

fn column_label(c: &Column) -> String {
    match c {
        Column::Index(i) => format!("column {i}"),
        Column::Name(n) => format!("column '{n}'"),
    }
}

pub fn load_interactions(path: &Path, format: &InteractionFormat) -> Result<RawInteractions> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_interactions(&text, path, format)
}

pub fn parse_interactions(
    text: &str,
    origin: &Path,
    format: &InteractionFormat,
) -> Result<RawInteractions> {
    let perr = |line: u64, message: String| Error::Parse {
        path: origin.to_path_buf(),
        line,
        message,
    };
    let first = text.lines().find(|l| !l.trim().is_empty());
    let Some(first) = first else {
        return Err(perr(1, "empty interaction file".into()));
    };
    let delimiter = format
        .delimiter
        .unwrap_or(if first.contains('\t') { b'\t' } else { b',' });
    let by_name = matches!(format.user_column, Column::Name(_))
        || matches!(format.item_column, Column::Name(_));
    let header = format.header.unwrap_or(by_name);
    if by_name && !header {
        return Err(Error::Config(
            "columns selected by name require a header".into(),
        ));
    }

    let mut reader = csv::ReaderBuilder::new()
        .delimiter(delimiter)
        .has_headers(header)
        .flexible(true)
        .trim(csv::Trim::All)
        .comment(Some(b'#'))
        .from_reader(text.as_bytes());

    let resolve = |col: &Column, headers: Option<&csv::StringRecord>| -> Result<usize> {
        match col {
            Column::Index(i) => Ok(*i),
            Column::Name(name) => headers
                .and_then(|h| h.iter().position(|f| f == name))
                .ok_or_else(|| perr(1, format!("missing column '{name}' in header"))),
        }
    };
    let headers = if header {
        Some(
            reader
                .headers()
                .map_err(|e| perr(1, e.to_string()))?
                .clone(),
        )
    } else {
        None
    };
    let ucol = resolve(&format.user_column, headers.as_ref())?;
    let icol = resolve(&format.item_column, headers.as_ref())?;

    let mut pairs = Vec::new();
    for rec in reader.records() {
        let rec = rec.map_err(|e| {
            let line = e.position().map(|p| p.line()).unwrap_or(0);
            perr(line, e.to_string())
        })?;
        let line = rec.position().map(|p| p.line()).unwrap_or(0);
        if rec.iter().all(|f| f.is_empty()) {
            continue;
        }
        let get = |idx: usize, col: &Column| -> Result<String> {
            match rec.get(idx) {
                Some(v) if !v.is_empty() => Ok(v.to_string()),
                _ => Err(perr(line, format!("missing {}", column_label(col)))),
            }
        };
        pairs.push((
            get(ucol, &format.user_column)?,
            get(icol, &format.item_column)?,
        ));
    }
    if pairs.is_empty() {
        return Err(perr(1, "no interactions found".into()));
    }
    Ok(RawInteractions::from_pairs(pairs))
}

/// Repeatedly drops users and items with fewer than `k` interactions until
/// every remaining user and item has at least `k`.
pub fn kcore_filter(raw: &RawInteractions, k: usize) -> Result<RawInteractions> {
    if k == 0 {
        return Err(Error::Config("k-core requires k >= 1".into()));
    }
    let mut pairs = raw.pairs.clone();
    loop {
        let mut udeg: HashMap<&str, usize> = HashMap::new();
        let mut ideg: HashMap<&str, usize> = HashMap::new();
        for (u, i) in &pairs {
            *udeg.entry(u.as_str()).or_default() += 1;
            *ideg.entry(i.as_str()).or_default() += 1;
        }
        let keep: Vec<bool> = pairs
            .iter()
            .map(|(u, i)| udeg[u.as_str()] >= k && ideg[i.as_str()] >= k)
            .collect();
        if keep.iter().all(|&b| b) {
            break;
        }
        let mut it = keep.into_iter();
        pairs.retain(|_| it.next().unwrap());
    }
    if pairs.is_empty() {
        return Err(Error::Input(format!(
            "{k}-core filtering removed every interaction; try a smaller k"
        )));
    }
    Ok(RawInteractions { pairs })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitRatios {
    pub train: f64,
    pub val: f64,
    pub test: f64,
}

impl Default for SplitRatios {
    fn default() -> Self {
        Self {
            train: 0.8,
            val: 0.1,
            test: 0.1,
        }
    }
}

impl SplitRatios {
    fn validate(&self) -> Result<()> {
        let s = self.train + self.val + self.test;
        if (s - 1.0).abs() > 1e-9 || self.train <= 0.0 || self.val < 0.0 || self.test < 0.0 {
            return Err(Error::Config(format!(
                "split ratios must be non-negative and sum to 1, got {} + {} + {}",
                self.train, self.val, self.test
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitMode {
    /// Each user's interactions are shuffled and cut at the ratios.
    #[default]
    PerUser,
    /// One global shuffle; users left without training data borrow one event back.
    Global,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

impl std::str::FromStr for Split {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "val" | "valid" | "validation" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            other => Err(Error::Config(format!("unknown split '{other}'"))),
        }
    }
}

/// Indexed users/items with disjoint train/val/test interaction lists.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub user_ids: Vec<String>,
    pub item_ids: Vec<String>,
    pub user_index: HashMap<String, usize>,
    pub item_index: HashMap<String, usize>,
    pub train: Vec<(usize, usize)>,
    pub val: Vec<(usize, usize)>,
    pub test: Vec<(usize, usize)>,
    /// `num_users x num_items` binary training matrix.
    pub train_csr: SparseMatrix,
}

/// Per-user counts for the per-user split.
fn split_counts(n: usize, r: &SplitRatios) -> (usize, usize, usize) {
    match n {
        0 => (0, 0, 0),
        1 => (1, 0, 0),
        2 if r.test > 0.0 => (1, 0, 1),
        2 => (1, 1, 0),
        _ => {
            let part = |ratio: f64| {
                if ratio > 0.0 {
                    ((n as f64 * ratio).round() as usize).max(1)
                } else {
                    0
                }
            };
            let (mut val, mut test) = (part(r.val), part(r.test));
            while val + test >= n {
                if val >= test && val > 0 {
                    val -= 1;
                } else {
                    test -= 1;
                }
            }
            (n - val - test, val, test)
        }
    }
}

pub fn split(
    raw: &RawInteractions,
    ratios: SplitRatios,
    seed: u64,
    mode: SplitMode,
) -> Result<Dataset> {
    ratios.validate()?;
    if raw.is_empty() {
        return Err(Error::Input("cannot split an empty interaction set".into()));
    }
    let user_ids: Vec<String> = raw.users().into_iter().map(String::from).collect();
    let item_ids: Vec<String> = raw.items().into_iter().map(String::from).collect();
    let user_index: HashMap<String, usize> = user_ids
        .iter()
        .cloned()
        .enumerate()
        .map(|(i, u)| (u, i))
        .collect();
    let item_index: HashMap<String, usize> = item_ids
        .iter()
        .cloned()
        .enumerate()
        .map(|(i, u)| (u, i))
        .collect();

    let mut by_user: Vec<Vec<usize>> = vec![Vec::new(); user_ids.len()];
    for (u, i) in &raw.pairs {
        by_user[user_index[u]].push(item_index[i]);
    }
    for items in &mut by_user {
        items.sort_unstable();
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut train, mut val, mut test) = (Vec::new(), Vec::new(), Vec::new());
    match mode {
        SplitMode::PerUser => {
            for (u, items) in by_user.iter_mut().enumerate() {
                items.shuffle(&mut rng);
                let (nt, nv, _) = split_counts(items.len(), &ratios);
                for (k, &i) in items.iter().enumerate() {
                    let dst = if k < nt {
                        &mut train
                    } else if k < nt + nv {
                        &mut val
                    } else {
                        &mut test
                    };
                    dst.push((u, i));
                }
            }
        }
        SplitMode::Global => {
            let mut all: Vec<(usize, usize)> = by_user
                .iter()
                .enumerate()
                .flat_map(|(u, items)| items.iter().map(move |&i| (u, i)))
                .collect();
            all.shuffle(&mut rng);
            let n = all.len();
            let nt = (n as f64 * ratios.train).round() as usize;
            let nv = (n as f64 * ratios.val).round() as usize;
            train.extend_from_slice(&all[..nt.min(n)]);
            val.extend_from_slice(&all[nt.min(n)..(nt + nv).min(n)]);
            test.extend_from_slice(&all[(nt + nv).min(n)..]);
            let mut has_train = vec![false; user_ids.len()];
            for &(u, _) in &train {
                has_train[u] = true;
            }
            for held in [&mut val, &mut test] {
                let mut k = 0;
                while k < held.len() {
                    let (u, i) = held[k];
                    if !has_train[u] {
                        has_train[u] = true;
                        train.push((u, i));
                        held.remove(k);
                    } else {
                        k += 1;
                    }
                }
            }
        }
    }
    train.sort_unstable();
    val.sort_unstable();
    test.sort_unstable();
    Dataset::from_parts(user_ids, item_ids, train, val, test)
}

impl Dataset {
    /// Assembles and validates a dataset from indexed splits.
    pub fn from_parts(
        user_ids: Vec<String>,
        item_ids: Vec<String>,
        train: Vec<(usize, usize)>,
        val: Vec<(usize, usize)>,
        test: Vec<(usize, usize)>,
    ) -> Result<Self> {
        let (m, n) = (user_ids.len(), item_ids.len());
        let mut seen = HashSet::new();
        for (name, list) in [("train", &train), ("val", &val), ("test", &test)] {
            for &(u, i) in list {
                if u >= m || i >= n {
                    return Err(Error::Input(format!("{name} pair ({u}, {i}) out of range")));
                }
                if !seen.insert((u, i)) {
                    return Err(Error::Input(format!(
                        "interaction ({u}, {i}) appears more than once across splits"
                    )));
                }
            }
        }
        let mut has_train = vec![false; m];
        for &(u, _) in &train {
            has_train[u] = true;
        }
        if let Some(u) = has_train.iter().position(|&b| !b) {
            return Err(Error::Input(format!(
                "user '{}' has no training interactions",
                user_ids[u]
            )));
        }
        let trip: Vec<_> = train.iter().map(|&(u, i)| (u, i, 1.0)).collect();
        let train_csr = SparseMatrix::from_triplets(m, n, &trip)?;
        let user_index = user_ids
            .iter()
            .cloned()
            .enumerate()
            .map(|(i, u)| (u, i))
            .collect();
        let item_index = item_ids
            .iter()
            .cloned()
            .enumerate()
            .map(|(i, u)| (u, i))
            .collect();
        Ok(Self {
            user_ids,
            item_ids,
            user_index,
            item_index,
            train,
            val,
            test,
            train_csr,
        })
    }

    pub fn num_users(&self) -> usize {
        self.user_ids.len()
    }

    pub fn num_items(&self) -> usize {
        self.item_ids.len()
    }

    pub fn num_interactions(&self) -> usize {
        self.train.len() + self.val.len() + self.test.len()
    }

    pub fn pairs(&self, split: Split) -> &[(usize, usize)] {
        match split {
            Split::Train => &self.train,
            Split::Val => &self.val,
            Split::Test => &self.test,
        }
    }

    /// Item lists per user for one split, each sorted ascending.
    pub fn items_by_user(&self, split: Split) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.num_users()];
        for &(u, i) in self.pairs(split) {
            out[u].push(i);
        }
        out.iter_mut().for_each(|v| v.sort_unstable());
        out
    }

    /// SHA-256 over ids and splits; identifies a prepared dataset.
    pub fn content_hash(&self) -> String {
        let mut h = Sha256::new();
        for id in &self.user_ids {
            h.update(id.as_bytes());
            h.update([0u8]);
        }
        h.update([1u8]);
        for id in &self.item_ids {
            h.update(id.as_bytes());
            h.update([0u8]);
        }
        for list in [&self.train, &self.val, &self.test] {
            h.update([2u8]);
            for &(u, i) in list {
                h.update((u as u64).to_le_bytes());
                h.update((i as u64).to_le_bytes());
            }
        }
        hex_digest(&h.finalize())
    }

    pub fn stats(&self) -> DatasetStats {
        let (m, n) = (self.num_users(), self.num_items());
        let e = self.num_interactions();
        DatasetStats {
            users: m,
            items: n,
            interactions: e,
            density: e as f64 / (m as f64 * n as f64),
            train: self.train.len(),
            val: self.val.len(),
            test: self.test.len(),
        }
    }

    /// Writes `users.txt`, `items.txt` and one TSV of index pairs per split.
    pub fn save_dir(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        write_lines(&dir.join("users.txt"), self.user_ids.iter())?;
        write_lines(&dir.join("items.txt"), self.item_ids.iter())?;
        for split in [Split::Train, Split::Val, Split::Test] {
            let rows = self.pairs(split).iter().map(|(u, i)| format!("{u}\t{i}"));
            write_lines(&dir.join(format!("{}.tsv", split.name())), rows)?;
        }
        Ok(())
    }

    pub fn load_dir(dir: &Path) -> Result<Self> {
        let users = read_lines(&dir.join("users.txt"))?;
        let items = read_lines(&dir.join("items.txt"))?;
        let mut splits = Vec::new();
        for split in [Split::Train, Split::Val, Split::Test] {
            let path = dir.join(format!("{}.tsv", split.name()));
            let mut pairs = Vec::new();
            for (ln, line) in read_lines(&path)?.iter().enumerate() {
                let mut it = line.split('\t').map(str::parse::<usize>);
                match (it.next(), it.next()) {
                    (Some(Ok(u)), Some(Ok(i))) => pairs.push((u, i)),
                    _ => {
                        return Err(Error::Parse {
                            path: path.clone(),
                            line: ln as u64 + 1,
                            message: "expected '<user>\\t<item>' indices".into(),
                        })
                    }
                }
            }
            splits.push(pairs);
        }
        let test = splits.pop().unwrap();
        let val = splits.pop().unwrap();
        let train = splits.pop().unwrap();
        Self::from_parts(users, items, train, val, test)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetStats {
    pub users: usize,
    pub items: usize,
    pub interactions: usize,
    pub density: f64,
    pub train: usize,
    pub val: usize,
    pub test: usize,
}

pub(crate) fn hex_digest(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// SHA-256 of a file's contents.
pub fn file_hash(path: &Path) -> Result<String> {
    let mut f = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut h = Sha256::new();
    let mut buf = vec![0u8; 1 << 16];
    loop {
        let n = f.read(&mut buf).map_err(|e| Error::io(path, e))?;
        if n == 0 {
            break;
        }
        h.update(&buf[..n]);
    }
    Ok(hex_digest(&h.finalize()))
}

fn write_lines<I, S>(path: &Path, lines: I) -> Result<()>
where
    I: IntoIterator<Item = S>,
    S: AsRef<str>,
{
    let mut out = String::new();
    for l in lines {
        out.push_str(l.as_ref());
        out.push('\n');
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

fn read_lines(path: &Path) -> Result<Vec<String>> {
    let f = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for line in BufReader::new(f).lines() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if !line.is_empty() {
            out.push(line);
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Modality {
    Visual,
    Text,
}

impl Modality {
    pub fn name(self) -> &'static str {
        match self {
            Modality::Visual => "visual",
            Modality::Text => "text",
        }
    }
}

/// Raw per-item features of one modality, rows in dataset item order.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    pub modality: Modality,
    pub values: Tensor,
}

impl FeatureMatrix {
    pub fn new(modality: Modality, values: Tensor) -> Result<Self> {
        if !values.is_finite() {
            return Err(Error::Input(format!(
                "{} features contain non-finite values",
                modality.name()
            )));
        }
        Ok(Self { modality, values })
    }

    pub fn num_items(&self) -> usize {
        self.values.rows()
    }

    pub fn dim(&self) -> usize {
        self.values.cols()
    }
}

/// Rows read from a feature file, optionally keyed by external item id.
struct FeatureRows {
    ids: Option<Vec<String>>,
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

fn sidecar_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".ids");
    PathBuf::from(s)
}

fn read_feature_rows(path: &Path) -> Result<FeatureRows> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.starts_with(FEATURE_MAGIC) {
        let fail = |m: &str| Error::Format {
            path: path.to_path_buf(),
            message: m.to_string(),
        };
        if bytes.len() < 17 {
            return Err(fail("truncated header"));
        }
        let rows = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
        let cols = u32::from_le_bytes(bytes[12..16].try_into().unwrap()) as usize;
        let width = match bytes[16] {
            0 => 4,
            1 => 8,
            other => return Err(fail(&format!("unsupported dtype code {other}"))),
        };
        let payload = &bytes[17..];
        if payload.len() != rows * cols * width {
            return Err(fail(&format!(
                "payload has {} bytes, expected {rows} x {cols} x {width}",
                payload.len()
            )));
        }
        let data: Vec<f64> = if width == 4 {
            payload
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
                .collect()
        } else {
            payload
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                .collect()
        };
        let side = sidecar_path(path);
        let ids = if side.exists() {
            let ids = read_lines(&side)?;
            if ids.len() != rows {
                return Err(fail(&format!(
                    "sidecar has {} ids for {rows} rows",
                    ids.len()
                )));
            }
            Some(ids)
        } else {
            None
        };
        return Ok(FeatureRows {
            ids,
            rows,
            cols,
            data,
        });
    }

    // Delimited text: `<item id><sep><v1><sep><v2>...`, separators comma, tab or spaces.
    let text = String::from_utf8(bytes).map_err(|_| Error::Format {
        path: path.to_path_buf(),
        message: "neither a binary feature file nor utf-8 text".into(),
    })?;
    let mut ids = Vec::new();
    let mut data = Vec::new();
    let mut cols = None;
    for (ln, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let mut fields = line.split([',', '\t', ' ']).filter(|f| !f.is_empty());
        let id = fields.next().unwrap().to_string();
        let mut width = 0;
        for f in fields {
            let v: f64 = f.parse().map_err(|_| Error::Parse {
                path: path.to_path_buf(),
                line: ln as u64 + 1,
                message: format!("bad feature value '{f}' for item '{id}'"),
            })?;
            data.push(v);
            width += 1;
        }
        match cols {
            None => cols = Some(width),
            Some(c) if c != width => {
                return Err(Error::Parse {
                    path: path.to_path_buf(),
                    line: ln as u64 + 1,
                    message: format!("item '{id}' has {width} features, expected {c}"),
                })
            }
            _ => {}
        }
        ids.push(id);
    }
    let cols = cols.ok_or_else(|| Error::Format {
        path: path.to_path_buf(),
        message: "empty feature file".into(),
    })?;
    Ok(FeatureRows {
        rows: ids.len(),
        ids: Some(ids),
        cols,
        data,
    })
}

/// Loads a feature file and aligns its rows to the dataset's item order.
///
/// Rows keyed by ids in `ignore` (items dropped during filtering) are skipped;
/// any other unknown id, a missing item, or a non-finite row is an error.
pub fn load_features_ignoring(
    path: &Path,
    modality: Modality,
    dataset: &Dataset,
    ignore: &HashSet<String>,
) -> Result<FeatureMatrix> {
    let rows = read_feature_rows(path)?;
    let n = dataset.num_items();
    let d = rows.cols;
    if d == 0 {
        return Err(Error::Input(format!(
            "{} features have zero columns",
            modality.name()
        )));
    }
    let row_of = |r: usize| &rows.data[r * d..(r + 1) * d];
    let mut out = vec![0.0; n * d];
    match &rows.ids {
        None => {
            if rows.rows != n {
                return Err(Error::Input(format!(
                    "{} features have {} rows but the dataset has {n} items (no id sidecar)",
                    modality.name(),
                    rows.rows
                )));
            }
            out.copy_from_slice(&rows.data);
        }
        Some(ids) => {
            let mut filled = vec![false; n];
            for (r, id) in ids.iter().enumerate() {
                match dataset.item_index.get(id) {
                    Some(&i) => {
                        out[i * d..(i + 1) * d].copy_from_slice(row_of(r));
                        filled[i] = true;
                    }
                    None if ignore.contains(id) => {}
                    None => {
                        return Err(Error::Input(format!(
                            "{} features contain unknown item id '{id}'",
                            modality.name()
                        )))
                    }
                }
            }
            if let Some(i) = filled.iter().position(|&f| !f) {
                return Err(Error::Input(format!(
                    "item '{}' has no {} features",
                    dataset.item_ids[i],
                    modality.name()
                )));
            }
        }
    }
    for i in 0..n {
        if out[i * d..(i + 1) * d].iter().any(|v| !v.is_finite()) {
            return Err(Error::Input(format!(
                "non-finite {} features for item '{}'",
                modality.name(),
                dataset.item_ids[i]
            )));
        }
    }
    FeatureMatrix::new(modality, Tensor::matrix(n, d, out))
}

pub fn load_features(path: &Path, modality: Modality, dataset: &Dataset) -> Result<FeatureMatrix> {
    load_features_ignoring(path, modality, dataset, &HashSet::new())
}

/// Writes the `MMFEAT01` binary format (float32 payload), plus an id sidecar when given.
pub fn write_features(path: &Path, values: &Tensor, ids: Option<&[String]>) -> Result<()> {
    let mut buf = Vec::with_capacity(17 + values.len() * 4);
    buf.extend_from_slice(FEATURE_MAGIC);
    buf.extend_from_slice(&(values.rows() as u32).to_le_bytes());
    buf.extend_from_slice(&(values.cols() as u32).to_le_bytes());
    buf.push(0);
    for &v in values.data() {
        buf.extend_from_slice(&(v as f32).to_le_bytes());
    }
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&buf).map_err(|e| Error::io(path, e))?;
    if let Some(ids) = ids {
        write_lines(&sidecar_path(path), ids.iter())?;
    }
    Ok(())
}
