//! On-disk formats: JSON-lines bag files, the run manifest and score CSVs.

use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::bag::{Bag, InstanceRole, InstanceVector, Label, Split};
use crate::error::{Error, Result};
use crate::metrics::ScoreTable;
use crate::milgen::{Dataset, GeneratorConfig};
use crate::nn::TrainConfig;

pub const TRAIN_FILE: &str = "train.jsonl";
pub const TEST_FILE: &str = "test.jsonl";
pub const MANIFEST_FILE: &str = "manifest.json";
pub const SCORES_HEADER: [&str; 2] = ["bag_id", "score"];

/// One line of a bag file. `label` is absent in blind files and `roles` is
/// present only in debug files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BagRecord {
    pub bag_id: u64,
    pub split: Split,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<i8>,
    pub instances: Vec<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub roles: Option<Vec<InstanceRole>>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct WriteOptions {
    /// Drop labels from every record.
    pub blind: bool,
    /// Write ground-truth instance roles.
    pub emit_roles: bool,
}

impl BagRecord {
    pub fn from_bag(bag: &Bag, opts: WriteOptions) -> Self {
        Self {
            bag_id: bag.bag_id(),
            split: bag.split(),
            label: (!opts.blind).then(|| bag.label().sign()),
            instances: bag
                .instances()
                .iter()
                .map(|x| x.as_slice().to_vec())
                .collect(),
            roles: if opts.emit_roles {
                bag.roles().map(<[_]>::to_vec)
            } else {
                None
            },
        }
    }

    /// Fails on blind records, which carry no label to build a bag from.
    pub fn into_bag(self) -> Result<Bag> {
        let label = match self.label {
            Some(sign) => Label::from_sign(sign.into())?,
            None => {
                return Err(Error::Integrity {
                    bag_id: self.bag_id,
                    reason: "record has no label (blind file)".into(),
                })
            }
        };
        let instances = self
            .instances
            .into_iter()
            .map(InstanceVector::new)
            .collect::<Result<Vec<_>>>()?;
        Bag::new(self.bag_id, label, self.split, instances, self.roles)
    }

    /// Canonical single-line JSON. Floats use the shortest decimal that
    /// parses back to the same value.
    pub fn to_line(&self) -> String {
        serde_json::to_string(self).expect("bag records always serialise")
    }
}

pub fn write_records<'a>(
    path: &Path,
    records: impl IntoIterator<Item = &'a BagRecord>,
) -> Result<()> {
    let ctx = || format!("writing {}", path.display());
    let mut w = BufWriter::new(File::create(path).map_err(|e| Error::io(ctx(), e))?);
    for r in records {
        w.write_all(r.to_line().as_bytes())
            .and_then(|_| w.write_all(b"\n"))
            .map_err(|e| Error::io(ctx(), e))?;
    }
    w.flush().map_err(|e| Error::io(ctx(), e))
}

pub fn read_records(path: &Path) -> Result<Vec<BagRecord>> {
    let file = File::open(path).map_err(|e| Error::io(format!("opening {}", path.display()), e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
        if line.trim().is_empty() {
            continue;
        }
        let record: BagRecord = serde_json::from_str(&line).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            reason: e.to_string(),
        })?;
        out.push(record);
    }
    Ok(out)
}

/// Reads labelled bags, checking that each record belongs to `split` and
/// that ids are unique.
pub fn read_bags(path: &Path, split: Split) -> Result<Vec<Bag>> {
    let mut seen = std::collections::BTreeSet::new();
    let mut bags = Vec::new();
    for record in read_records(path)? {
        if record.split != split {
            return Err(Error::Integrity {
                bag_id: record.bag_id,
                reason: format!("{} record in {}", record.split, path.display()),
            });
        }
        if !seen.insert(record.bag_id) {
            return Err(Error::Integrity {
                bag_id: record.bag_id,
                reason: "duplicate bag id".into(),
            });
        }
        bags.push(record.into_bag()?);
    }
    Ok(bags)
}

/// SHA-256 over the canonical lines of both splits in bag-id order, each
/// line framed by its byte length and each split by its record count. Hex
/// encoded. Line order in the files does not affect it.
pub fn dataset_digest(train: &[BagRecord], test: &[BagRecord]) -> String {
    let mut h = Sha256::new();
    for (tag, records) in [(b"train", train), (b"test\0", test)] {
        let mut sorted: Vec<&BagRecord> = records.iter().collect();
        sorted.sort_by_key(|r| r.bag_id);
        h.update(tag);
        h.update((records.len() as u64).to_le_bytes());
        for r in sorted {
            let line = r.to_line();
            h.update((line.len() as u64).to_le_bytes());
            h.update(line.as_bytes());
        }
    }
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool: String,
    pub tool_version: String,
    pub generator: GeneratorConfig,
    pub write_options: WriteOptions,
    pub digest: String,
    /// Model kind or external tag, when the manifest records a run.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub train: Option<TrainConfig>,
    /// Seconds since the Unix epoch, or `SOURCE_DATE_EPOCH` when set.
    pub created_unix: u64,
}

impl RunManifest {
    pub fn new(generator: GeneratorConfig, write_options: WriteOptions, digest: String) -> Self {
        Self {
            tool: env!("CARGO_PKG_NAME").into(),
            tool_version: env!("CARGO_PKG_VERSION").into(),
            generator,
            write_options,
            digest,
            model: None,
            train: None,
            created_unix: timestamp(),
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
        serde_json::from_str(&text).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: e.line(),
            reason: e.to_string(),
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        fs::write(path, text).map_err(|e| Error::io(format!("writing {}", path.display()), e))
    }
}

fn timestamp() -> u64 {
    if let Some(epoch) = std::env::var("SOURCE_DATE_EPOCH")
        .ok()
        .and_then(|v| v.parse().ok())
    {
        return epoch;
    }
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map_or(0, |d| d.as_secs())
}

/// Paths of the files in a dataset directory.
#[derive(Debug, Clone)]
pub struct DatasetDir {
    pub root: PathBuf,
}

impl DatasetDir {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn train(&self) -> PathBuf {
        self.root.join(TRAIN_FILE)
    }

    pub fn test(&self) -> PathBuf {
        self.root.join(TEST_FILE)
    }

    pub fn manifest(&self) -> PathBuf {
        self.root.join(MANIFEST_FILE)
    }

    pub fn file(&self, split: Split) -> PathBuf {
        match split {
            Split::Train => self.train(),
            Split::Test => self.test(),
        }
    }
}

/// Writes both splits and the manifest into `dir`, creating it if needed.
pub fn write_dataset(dataset: &Dataset, dir: &Path, opts: WriteOptions) -> Result<RunManifest> {
    fs::create_dir_all(dir).map_err(|e| Error::io(format!("creating {}", dir.display()), e))?;
    let layout = DatasetDir::new(dir);
    let train: Vec<BagRecord> = dataset
        .train
        .iter()
        .map(|b| BagRecord::from_bag(b, opts))
        .collect();
    let test: Vec<BagRecord> = dataset
        .test
        .iter()
        .map(|b| BagRecord::from_bag(b, opts))
        .collect();
    write_records(&layout.train(), &train)?;
    write_records(&layout.test(), &test)?;
    let manifest = RunManifest::new(dataset.config.clone(), opts, dataset_digest(&train, &test));
    manifest.save(&layout.manifest())?;
    Ok(manifest)
}

/// Recomputes the digest of the bag files in `dir`.
pub fn digest_dir(dir: &Path) -> Result<String> {
    let layout = DatasetDir::new(dir);
    Ok(dataset_digest(
        &read_records(&layout.train())?,
        &read_records(&layout.test())?,
    ))
}

pub fn write_scores(path: &Path, scores: &ScoreTable) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(SCORES_HEADER)?;
    for (id, s) in scores.iter() {
        w.write_record([id.to_string(), s.to_string()])?;
    }
    w.flush()
        .map_err(|e| Error::io(format!("writing {}", path.display()), e))
}

/// Parses a `bag_id,score` CSV. Rows may come in any order.
pub fn read_scores(path: &Path) -> Result<ScoreTable> {
    let parse_err = |line: usize, reason: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        reason,
    };
    let mut r = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)?;
    let header = r.headers()?.clone();
    if header.iter().ne(SCORES_HEADER) {
        return Err(parse_err(
            1,
            format!(
                "expected header `bag_id,score`, found `{}`",
                header.iter().collect::<Vec<_>>().join(",")
            ),
        ));
    }
    let mut table = ScoreTable::new();
    for row in r.records() {
        let row = row?;
        let line = row.position().map_or(0, |p| p.line() as usize);
        if row.len() != 2 {
            return Err(parse_err(
                line,
                format!("expected 2 fields, found {}", row.len()),
            ));
        }
        let id: u64 = row[0]
            .parse()
            .map_err(|_| parse_err(line, format!("bad bag id `{}`", &row[0])))?;
        let score: f64 = row[1]
            .parse()
            .map_err(|_| parse_err(line, format!("bad score `{}`", &row[1])))?;
        table.insert(id, score)?;
    }
    Ok(table)
}
