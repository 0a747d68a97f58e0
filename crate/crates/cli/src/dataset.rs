//! On-disk dataset layout: `manifest.csv` plus `frames/<pair_id>.{lc,hc}.dfrm`,
//! with manifest paths relative to the dataset directory.

use std::path::{Path, PathBuf};

use xrdn_core::io::{read_frame_file, write_frame_file};
use xrdn_core::manifest::{split_dataset, PairPaths};
use xrdn_core::{DatasetManifest, Error, FramePair, Result, Split, SplitFractions};

pub const MANIFEST: &str = "manifest.csv";

pub struct Dataset {
    pub pairs: Vec<FramePair>,
    pub splits: Vec<Split>,
}

impl Dataset {
    pub fn split(&self, split: Split) -> Vec<FramePair> {
        self.pairs.iter().zip(&self.splits).filter(|(_, s)| **s == split).map(|(p, _)| p.clone()).collect()
    }
}

pub fn load(dir: &Path) -> Result<Dataset> {
    let manifest = DatasetManifest::read_file(dir.join(MANIFEST))
        .map_err(|e| Error::Manifest(format!("{}: {e}", dir.join(MANIFEST).display())))?;
    if manifest.is_empty() {
        return Err(Error::Manifest(format!("{} lists no pairs", dir.display())));
    }
    let resolve = |p: &Path| if p.is_absolute() { p.to_path_buf() } else { dir.join(p) };
    let mut pairs = Vec::with_capacity(manifest.len());
    let mut splits = Vec::with_capacity(manifest.len());
    for e in manifest.entries() {
        let lc = read_frame_file(resolve(&e.lc_path))?;
        let hc = read_frame_file(resolve(&e.hc_path))?;
        pairs.push(FramePair::new(lc, hc, e.pair_id.clone())?);
        splits.push(e.split);
    }
    Ok(Dataset { pairs, splits })
}

fn frame_paths(pair_id: &str) -> (PathBuf, PathBuf) {
    let base = PathBuf::from("frames");
    (base.join(format!("{pair_id}.lc.dfrm")), base.join(format!("{pair_id}.hc.dfrm")))
}

/// Writes frames and a manifest. With `splits` the tags are kept, otherwise
/// they are drawn from `fractions` and `seed`.
pub fn write(
    dir: &Path,
    pairs: &[FramePair],
    splits: Option<&[Split]>,
    fractions: SplitFractions,
    seed: u64,
) -> Result<DatasetManifest> {
    std::fs::create_dir_all(dir.join("frames"))?;
    let mut paths = Vec::with_capacity(pairs.len());
    for p in pairs {
        let (lc, hc) = frame_paths(&p.pair_id);
        write_frame_file(&p.lc, dir.join(&lc))?;
        write_frame_file(&p.hc, dir.join(&hc))?;
        paths.push(PairPaths { pair_id: p.pair_id.clone(), lc_path: lc, hc_path: hc });
    }
    let manifest = match splits {
        Some(tags) => DatasetManifest::new(
            paths
                .into_iter()
                .zip(tags)
                .map(|(p, &split)| xrdn_core::ManifestEntry {
                    pair_id: p.pair_id,
                    lc_path: p.lc_path,
                    hc_path: p.hc_path,
                    split,
                })
                .collect(),
        )?,
        None => split_dataset(paths, fractions, seed)?,
    };
    manifest.write_file(dir.join(MANIFEST))?;
    Ok(manifest)
}

/// `pair00003-pois` → `pair00003`.
pub fn base_id(pair_id: &str) -> &str {
    pair_id.split_once('-').map_or(pair_id, |(b, _)| b)
}
