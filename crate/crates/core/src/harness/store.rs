//! Result store: a directory holding `store.json`, one JSONL shard per
//! finished pipeline under `shards/`, and `index.jsonl`.
//!
//! A pipeline is committed by renaming its complete shard into place and then
//! appending one index line, so readers that go through the index only ever
//! see whole shards. `finalize` rewrites the index in canonical order, which
//! makes the final store independent of the order pipelines finished in.

use std::collections::BTreeSet;
use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use super::sweep::Selection;
use super::{DifficultyResult, PipelineConfig, PipelineOutput};
use crate::attacks::AttackRecord;
use crate::targets::TargetModel;
use crate::{Error, Result};

pub const STORE_FORMAT_VERSION: u32 = 1;
const META_FILE: &str = "store.json";
const INDEX_FILE: &str = "index.jsonl";
const SHARD_DIR: &str = "shards";

/// Settings a store was created with; resuming requires an exact match.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StoreMeta {
    pub version: u32,
    /// Directory the swept datasets were read from.
    pub datasets: String,
    pub pipeline: PipelineConfig,
    pub selection: Selection,
}

impl StoreMeta {
    pub fn new(datasets: &Path, pipeline: PipelineConfig, selection: Selection) -> Self {
        let datasets = fs::canonicalize(datasets).unwrap_or_else(|_| datasets.to_path_buf());
        Self { version: STORE_FORMAT_VERSION, datasets: datasets.display().to_string(), pipeline, selection }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ShardLine {
    Target(TargetModel),
    Attack(AttackRecord),
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Shard {
    pub targets: Vec<TargetModel>,
    pub records: Vec<AttackRecord>,
}

impl From<&PipelineOutput> for Shard {
    fn from(out: &PipelineOutput) -> Self {
        Self { targets: out.targets.clone(), records: out.records.clone() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IndexEntry {
    pub dataset: String,
    /// Position of the subpopulation in its dataset's manifest.
    pub ordinal: usize,
    pub subpop: String,
    /// Shard path relative to the store root.
    pub shard: String,
    pub lines: usize,
    pub result: DifficultyResult,
}

pub struct Store {
    root: PathBuf,
    meta: StoreMeta,
    index: Mutex<Vec<IndexEntry>>,
}

fn read_jsonl<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<(Vec<T>, Vec<String>)> {
    let mut ok = Vec::new();
    let mut bad = Vec::new();
    for (i, line) in BufReader::new(File::open(path)?).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        match serde_json::from_str(&line) {
            Ok(v) => ok.push(v),
            Err(e) => bad.push(format!("{} line {}: {e}", path.display(), i + 1)),
        }
    }
    Ok((ok, bad))
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension("tmp");
    {
        let mut f = File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

fn shard_name(dataset: &str, ordinal: usize) -> String {
    let safe: String = dataset.chars().map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '.' { c } else { '_' }).collect();
    format!("{SHARD_DIR}/{safe}/{ordinal:05}.jsonl")
}

impl Store {
    /// Opens an existing store for reading and checks every committed shard.
    pub fn open(root: &Path) -> Result<Self> {
        let meta_path = root.join(META_FILE);
        if !meta_path.exists() {
            return Err(Error::MissingFile(meta_path));
        }
        let meta: StoreMeta = serde_json::from_str(&fs::read_to_string(&meta_path)?)?;
        if meta.version != STORE_FORMAT_VERSION {
            return Err(Error::CorruptStore(format!("unsupported store version {}", meta.version)));
        }
        let store = Self { root: root.to_path_buf(), meta, index: Mutex::new(Vec::new()) };
        let index = store.load_index()?;
        *store.index.lock().expect("index lock") = index;
        Ok(store)
    }

    /// Creates a store, or reopens one made with the same settings.
    pub fn create_or_resume(root: &Path, meta: StoreMeta) -> Result<Self> {
        if root.join(META_FILE).exists() {
            let store = Self::open(root)?;
            if store.meta != meta {
                return Err(Error::InvalidParam(format!(
                    "{} was created with different settings",
                    root.display()
                )));
            }
            return Ok(store);
        }
        fs::create_dir_all(root.join(SHARD_DIR))?;
        write_atomic(&root.join(META_FILE), serde_json::to_string_pretty(&meta)?.as_bytes())?;
        File::create(root.join(INDEX_FILE))?;
        Ok(Self { root: root.to_path_buf(), meta, index: Mutex::new(Vec::new()) })
    }

    fn load_index(&self) -> Result<Vec<IndexEntry>> {
        let path = self.root.join(INDEX_FILE);
        if !path.exists() {
            return Err(Error::MissingFile(path));
        }
        let (entries, mut bad): (Vec<IndexEntry>, _) = read_jsonl(&path)?;
        let mut seen = BTreeSet::new();
        for e in &entries {
            if !seen.insert((e.dataset.clone(), e.ordinal)) {
                bad.push(format!("duplicate index entry for {} #{}", e.dataset, e.ordinal));
            }
            let shard = self.root.join(&e.shard);
            if !shard.exists() {
                bad.push(format!("{}: shard {} missing", e.subpop, e.shard));
                continue;
            }
            let (lines, shard_bad): (Vec<ShardLine>, _) = read_jsonl(&shard)?;
            bad.extend(shard_bad);
            if lines.len() != e.lines {
                bad.push(format!("{}: shard {} has {} lines, index says {}", e.subpop, e.shard, lines.len(), e.lines));
            }
        }
        if !bad.is_empty() {
            return Err(Error::CorruptStore(bad.join("; ")));
        }
        Ok(entries)
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn meta(&self) -> &StoreMeta {
        &self.meta
    }

    /// Committed index entries in canonical `(dataset, ordinal)` order.
    pub fn entries(&self) -> Vec<IndexEntry> {
        let mut v = self.index.lock().expect("index lock").clone();
        v.sort_by(|a, b| (&a.dataset, a.ordinal).cmp(&(&b.dataset, b.ordinal)));
        v
    }

    pub fn is_done(&self, dataset: &str, ordinal: usize) -> bool {
        self.index.lock().expect("index lock").iter().any(|e| e.dataset == dataset && e.ordinal == ordinal)
    }

    /// Writes the shard, then publishes it through the index.
    pub fn commit(&self, ordinal: usize, output: &PipelineOutput) -> Result<IndexEntry> {
        let result = &output.result;
        let shard = shard_name(&result.dataset, ordinal);
        let path = self.root.join(&shard);
        fs::create_dir_all(path.parent().expect("shard dir"))?;
        let mut buf = Vec::new();
        let mut lines = 0;
        for t in &output.targets {
            serde_json::to_writer(&mut buf, &ShardLine::Target(t.clone()))?;
            buf.push(b'\n');
            lines += 1;
        }
        for r in &output.records {
            serde_json::to_writer(&mut buf, &ShardLine::Attack(r.clone()))?;
            buf.push(b'\n');
            lines += 1;
        }
        write_atomic(&path, &buf)?;
        let entry = IndexEntry {
            dataset: result.dataset.clone(),
            ordinal,
            subpop: result.subpop.clone(),
            shard,
            lines,
            result: result.clone(),
        };
        let mut line = serde_json::to_vec(&entry)?;
        line.push(b'\n');
        let mut index = self.index.lock().expect("index lock");
        let mut f = OpenOptions::new().append(true).open(self.root.join(INDEX_FILE))?;
        f.write_all(&line)?;
        f.sync_data()?;
        index.push(entry.clone());
        Ok(entry)
    }

    /// Rewrites the index in canonical order.
    pub fn finalize(&self) -> Result<()> {
        let mut index = self.index.lock().expect("index lock");
        index.sort_by(|a, b| (&a.dataset, a.ordinal).cmp(&(&b.dataset, b.ordinal)));
        let entries = index.clone();
        let mut buf = BufWriter::new(Vec::new());
        for e in &entries {
            serde_json::to_writer(&mut buf, e)?;
            buf.write_all(b"\n")?;
        }
        let bytes = buf.into_inner().map_err(|e| Error::Io(e.into_error()))?;
        write_atomic(&self.root.join(INDEX_FILE), &bytes)
    }

    pub fn read_shard(&self, entry: &IndexEntry) -> Result<Shard> {
        let (lines, bad): (Vec<ShardLine>, _) = read_jsonl(&self.root.join(&entry.shard))?;
        if !bad.is_empty() {
            return Err(Error::CorruptStore(bad.join("; ")));
        }
        let mut shard = Shard::default();
        for l in lines {
            match l {
                ShardLine::Target(t) => shard.targets.push(t),
                ShardLine::Attack(r) => shard.records.push(r),
            }
        }
        Ok(shard)
    }

    /// Every committed attack record, in canonical order.
    pub fn records(&self) -> Result<Vec<AttackRecord>> {
        let mut out = Vec::new();
        for e in self.entries() {
            out.extend(self.read_shard(&e)?.records);
        }
        Ok(out)
    }
}
