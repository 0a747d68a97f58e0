//! Dataset manifests and the train/validation/test split.

use std::collections::HashSet;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::seq::SliceRandom;

use crate::error::{Error, Result};
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Split {
    Train,
    Val,
    Test,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        })
    }
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            _ => Err(Error::Manifest(format!("unknown split tag {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PairPaths {
    pub pair_id: String,
    pub lc_path: PathBuf,
    pub hc_path: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ManifestEntry {
    pub pair_id: String,
    pub lc_path: PathBuf,
    pub hc_path: PathBuf,
    pub split: Split,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplitFractions {
    pub train: f64,
    pub val: f64,
    pub test: f64,
}

impl Default for SplitFractions {
    fn default() -> Self {
        Self { train: 0.7, val: 0.2, test: 0.1 }
    }
}

impl SplitFractions {
    pub fn new(train: f64, val: f64, test: f64) -> Self {
        Self { train, val, test }
    }

    pub fn validate(&self) -> Result<()> {
        let Self { train, val, test } = *self;
        if [train, val, test].iter().any(|f| !(0.0..=1.0).contains(f)) || (train + val + test - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidArgument(format!(
                "split fractions ({train}, {val}, {test}) must be non-negative and sum to 1"
            )));
        }
        Ok(())
    }

    /// Pair counts per split: validation and test are rounded down, the
    /// remainder goes to training.
    pub fn counts(&self, n: usize) -> (usize, usize, usize) {
        let floor = |f: f64| ((n as f64) * f + 1e-9).floor() as usize;
        let val = floor(self.val);
        let test = floor(self.test);
        (n - val - test, val, test)
    }
}

/// Ordered list of pairs with their split tags. Pair ids are unique.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct DatasetManifest {
    entries: Vec<ManifestEntry>,
}

impl DatasetManifest {
    pub fn new(entries: Vec<ManifestEntry>) -> Result<Self> {
        let mut seen = HashSet::new();
        for e in &entries {
            if !seen.insert(e.pair_id.as_str()) {
                return Err(Error::Manifest(format!("duplicate pair id {}", e.pair_id)));
            }
        }
        Ok(Self { entries })
    }

    pub fn entries(&self) -> &[ManifestEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn split(&self, split: Split) -> impl Iterator<Item = &ManifestEntry> {
        self.entries.iter().filter(move |e| e.split == split)
    }

    pub fn count(&self, split: Split) -> usize {
        self.split(split).count()
    }

    /// Writes `pair_id,lc_path,hc_path,split`.
    pub fn write_csv<W: std::io::Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["pair_id", "lc_path", "hc_path", "split"])?;
        for e in &self.entries {
            w.write_record([
                e.pair_id.as_str(),
                &e.lc_path.to_string_lossy(),
                &e.hc_path.to_string_lossy(),
                &e.split.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv<R: std::io::Read>(src: R) -> Result<Self> {
        let mut r = csv::Reader::from_reader(src);
        let headers = r.headers()?.clone();
        if headers.iter().collect::<Vec<_>>() != ["pair_id", "lc_path", "hc_path", "split"] {
            return Err(Error::Manifest(format!("unexpected header {headers:?}")));
        }
        let mut entries = Vec::new();
        for rec in r.records() {
            let rec = rec?;
            entries.push(ManifestEntry {
                pair_id: rec[0].to_string(),
                lc_path: PathBuf::from(&rec[1]),
                hc_path: PathBuf::from(&rec[2]),
                split: rec[3].parse()?,
            });
        }
        Self::new(entries)
    }

    pub fn write_file(&self, path: impl AsRef<Path>) -> Result<()> {
        self.write_csv(std::fs::File::create(path)?)
    }

    pub fn read_file(path: impl AsRef<Path>) -> Result<Self> {
        Self::read_csv(std::fs::File::open(path)?)
    }
}

/// Split tag of each of `n` items, assigned by a seeded shuffle.
pub fn split_tags(n: usize, fractions: SplitFractions, seed: u64) -> Result<Vec<Split>> {
    fractions.validate()?;
    let SplitFractions { train, val, test } = fractions;
    if train > 0.0 && val > 0.0 && test > 0.0 && n < 3 {
        return Err(Error::InvalidArgument(format!("{n} pairs cannot fill three splits")));
    }
    let (_, n_val, n_test) = fractions.counts(n);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng::rng(seed));
    let mut tags = vec![Split::Train; n];
    for &i in &order[..n_val] {
        tags[i] = Split::Val;
    }
    for &i in &order[n_val..n_val + n_test] {
        tags[i] = Split::Test;
    }
    Ok(tags)
}

/// Assigns each pair to a split by a seeded shuffle. Entries keep their
/// input order; only the tags depend on the seed.
pub fn split_dataset(pairs: Vec<PairPaths>, fractions: SplitFractions, seed: u64) -> Result<DatasetManifest> {
    let tags = split_tags(pairs.len(), fractions, seed)?;
    let entries = pairs
        .into_iter()
        .zip(tags)
        .map(|(p, split)| ManifestEntry { pair_id: p.pair_id, lc_path: p.lc_path, hc_path: p.hc_path, split })
        .collect();
    DatasetManifest::new(entries)
}
