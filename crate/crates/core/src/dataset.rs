//! Generated datasets: deterministic sample synthesis, the hash-based
//! train/test split and the on-disk manifest.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::rng;
use crate::weathersim::{
    compose_weather, gen_scene, read_sample, sample_composition, sample_dir, write_sample, PairedSample,
};

pub const MANIFEST: &str = "manifest.json";
pub const MANIFEST_VERSION: u32 = 1;

/// Percentage of scene ids assigned to the test split.
pub const TEST_PERCENT: u64 = 20;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DataSplit {
    Train,
    Test,
}

impl DataSplit {
    pub fn name(self) -> &'static str {
        match self {
            DataSplit::Train => "train",
            DataSplit::Test => "test",
        }
    }
}

impl std::str::FromStr for DataSplit {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(DataSplit::Train),
            "test" => Ok(DataSplit::Test),
            _ => Err(invalid!("unknown split {s:?}, expected train or test")),
        }
    }
}

/// Split of scene `id`, a pure function of `(seed, id)`.
pub fn split_of(seed: u64, id: u64) -> DataSplit {
    if rng::mix(rng::derive(seed, "split") ^ rng::mix(id)) % 100 < TEST_PERCENT {
        DataSplit::Test
    } else {
        DataSplit::Train
    }
}

/// Scene shape parameters shared by every sample in a dataset.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub height: usize,
    pub width: usize,
    pub class_count: usize,
    /// Scene count used when generating an in-memory benchmark.
    pub train_pairs: usize,
    pub test_pairs: usize,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            height: 64,
            width: 64,
            class_count: 10,
            train_pairs: 64,
            test_pairs: 16,
        }
    }
}

/// Sample for scene `id`: scene, composition and weather all derive from
/// `(seed, id)`.
pub fn generate_sample(cfg: &DataConfig, seed: u64, id: u64) -> Result<PairedSample> {
    let scene = gen_scene(rng::derive(seed, &format!("scene/{id}")), cfg.height, cfg.width, cfg.class_count)?;
    let composition = sample_composition(&mut rng::stream(seed, &format!("composition/{id}")));
    compose_weather(scene, composition, rng::derive(seed, &format!("weather/{id}")))
}

/// An in-memory benchmark split into train and test scenes.
#[derive(Clone, Debug)]
pub struct Benchmark {
    pub train: Vec<(u64, PairedSample)>,
    pub test: Vec<(u64, PairedSample)>,
}

/// Walks scene ids in order, keeping each in its hashed split until both
/// quotas are filled.
pub fn generate_benchmark(cfg: &DataConfig, seed: u64) -> Result<Benchmark> {
    let mut b = Benchmark {
        train: Vec::with_capacity(cfg.train_pairs),
        test: Vec::with_capacity(cfg.test_pairs),
    };
    let mut id = 0;
    while b.train.len() < cfg.train_pairs || b.test.len() < cfg.test_pairs {
        let bucket = match split_of(seed, id) {
            DataSplit::Train if b.train.len() < cfg.train_pairs => Some(&mut b.train),
            DataSplit::Test if b.test.len() < cfg.test_pairs => Some(&mut b.test),
            _ => None,
        };
        if let Some(bucket) = bucket {
            bucket.push((id, generate_sample(cfg, seed, id)?));
        }
        id += 1;
    }
    Ok(b)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestEntry {
    pub id: u64,
    pub dir: String,
    pub split: DataSplit,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub format_version: u32,
    pub seed: u64,
    pub config_hash: String,
    pub data: DataConfig,
    pub entries: Vec<ManifestEntry>,
}

impl Manifest {
    pub fn read(root: &Path) -> Result<Self> {
        let path = root.join(MANIFEST);
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let m: Manifest = serde_json::from_str(&text).map_err(|e| Error::format(&path, e.to_string()))?;
        if m.format_version != MANIFEST_VERSION {
            return Err(Error::format(&path, format!("unsupported manifest version {}", m.format_version)));
        }
        Ok(m)
    }

    pub fn ids(&self, split: DataSplit) -> Vec<u64> {
        self.entries.iter().filter(|e| e.split == split).map(|e| e.id).collect()
    }
}

/// Fails unless `dir` is absent, empty, or `force` is set.
pub fn prepare_out_dir(dir: &Path, force: bool) -> Result<()> {
    if dir.exists() {
        let mut it = fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
        if it.next().is_some() && !force {
            return Err(invalid!("{} exists and is not empty; pass --force to overwrite", dir.display()));
        }
    }
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

/// Writes `count` samples (ids `0..count`) and a manifest to `root`.
pub fn write_dataset(root: &Path, cfg: &DataConfig, seed: u64, count: usize, config_hash: &str) -> Result<Manifest> {
    let mut entries = Vec::with_capacity(count);
    for id in 0..count as u64 {
        let sample = generate_sample(cfg, seed, id)?;
        let dir = sample_dir(root, id as usize);
        write_sample(&sample, &dir)?;
        entries.push(ManifestEntry {
            id,
            dir: dir.file_name().expect("sample dir has a name").to_string_lossy().into_owned(),
            split: split_of(seed, id),
        });
    }
    let manifest = Manifest {
        format_version: MANIFEST_VERSION,
        seed,
        config_hash: config_hash.to_string(),
        data: cfg.clone(),
        entries,
    };
    let path = root.join(MANIFEST);
    let mut text = serde_json::to_string_pretty(&manifest)?;
    text.push('\n');
    fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
    Ok(manifest)
}

/// Loads every sample of `split` listed in the manifest under `root`.
pub fn load_split(root: &Path, split: DataSplit) -> Result<Vec<(u64, PairedSample)>> {
    let manifest = Manifest::read(root)?;
    manifest
        .entries
        .iter()
        .filter(|e| e.split == split)
        .map(|e| Ok((e.id, read_sample(&root.join(&e.dir))?)))
        .collect()
}

pub fn sample_path(root: &Path, entry: &ManifestEntry) -> PathBuf {
    root.join(&entry.dir)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> DataConfig {
        DataConfig {
            height: 32,
            width: 32,
            class_count: 10,
            train_pairs: 6,
            test_pairs: 2,
        }
    }

    #[test]
    fn split_is_stable_and_mixed() {
        let test = (0..1000).filter(|&i| split_of(3, i) == DataSplit::Test).count();
        assert!((120..280).contains(&test), "{test}");
        assert_eq!(split_of(3, 17), split_of(3, 17));
    }

    #[test]
    fn benchmark_quotas() {
        let b = generate_benchmark(&small(), 1).unwrap();
        assert_eq!((b.train.len(), b.test.len()), (6, 2));
        assert!(b.train.iter().all(|(id, _)| split_of(1, *id) == DataSplit::Train));
        assert!(b.test.iter().all(|(id, _)| split_of(1, *id) == DataSplit::Test));
        let again = generate_benchmark(&small(), 1).unwrap();
        assert_eq!(b.train[3].1, again.train[3].1);
    }

    #[test]
    fn disk_roundtrip() {
        let tmp = tempfile::tempdir().unwrap();
        let m = write_dataset(tmp.path(), &small(), 2, 5, "abc").unwrap();
        assert_eq!(m.entries.len(), 5);
        assert_eq!(Manifest::read(tmp.path()).unwrap(), m);
        let train = load_split(tmp.path(), DataSplit::Train).unwrap();
        assert_eq!(train.len(), m.ids(DataSplit::Train).len());
        assert!(prepare_out_dir(tmp.path(), false).is_err());
        assert!(prepare_out_dir(tmp.path(), true).is_ok());
        assert!(prepare_out_dir(&tmp.path().join("new"), false).is_ok());
    }
}
