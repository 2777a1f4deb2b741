//! Manifest ingestion and the train/test split.
//!
//! A manifest is a `path,label` CSV; paths are relative to the manifest's
//! directory.

use std::path::{Path, PathBuf};

use crate::config::TrainConfig;
use crate::error::{Error, Result};
use crate::preprocess::{compute_channel_averages, pipeline_apply, to_tensor, ChannelAverages, Image, PreprocessMode};
use crate::rng::Rng;
use crate::training::{Sample, SPLIT_STREAM};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ManifestEntry {
    pub path: PathBuf,
    pub label: u8,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Manifest {
    root: PathBuf,
    entries: Vec<ManifestEntry>,
}

impl Manifest {
    pub fn new(root: impl Into<PathBuf>, entries: Vec<ManifestEntry>) -> Self {
        Manifest {
            root: root.into(),
            entries,
        }
    }

    /// Reads a manifest. An empty manifest is not an error here; commands
    /// that need data reject it themselves.
    pub fn read(path: &Path) -> Result<Manifest> {
        let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_path(path)?;
        let headers = reader.headers()?.clone();
        if headers.len() != 2 || &headers[0] != "path" || &headers[1] != "label" {
            return Err(Error::param(format!(
                "{}: expected header `path,label`",
                path.display()
            )));
        }
        let mut entries = Vec::new();
        for (i, record) in reader.records().enumerate() {
            let record = record?;
            let line = i + 2;
            let label = match &record[1] {
                "0" => 0,
                "1" => 1,
                other => {
                    return Err(Error::param(format!(
                        "{}:{line}: label must be 0 or 1, got {other:?}",
                        path.display()
                    )))
                }
            };
            entries.push(ManifestEntry {
                path: record[0].into(),
                label,
            });
        }
        let root = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(Manifest { root, entries })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["path", "label"])?;
        for e in &self.entries {
            w.write_record([e.path.to_string_lossy().as_ref(), if e.label == 1 { "1" } else { "0" }])?;
        }
        w.flush()?;
        Ok(())
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

    pub fn resolve(&self, entry: &ManifestEntry) -> PathBuf {
        self.root.join(&entry.path)
    }

    pub fn load(&self) -> Result<Vec<(Image, u8)>> {
        self.entries
            .iter()
            .map(|e| Ok((Image::read(&self.resolve(e))?, e.label)))
            .collect()
    }
}

/// Indices of the held-out and training parts of `0..n`, each in
/// ascending order. The test part has `round(n · test_fraction)` items.
pub fn split_indices(n: usize, test_fraction: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let n_test = ((n as f64 * test_fraction).round() as usize).min(n);
    let mut order: Vec<usize> = (0..n).collect();
    Rng::derive(seed, SPLIT_STREAM).shuffle(&mut order);
    let mut test = order[..n_test].to_vec();
    let mut train = order[n_test..].to_vec();
    test.sort_unstable();
    train.sort_unstable();
    (train, test)
}

/// Preprocessed network inputs for a train/test pair.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub train: Vec<Sample>,
    pub test: Vec<Sample>,
    /// Training-split averages when the mode needs them.
    pub averages: Option<ChannelAverages>,
}

/// Applies `cfg`'s preprocessing and converts to tensors. For the expanded
/// mode the channel averages come from `averages` if given, otherwise from
/// the training images.
pub fn prepare(
    train: &[(Image, u8)],
    test: &[(Image, u8)],
    cfg: &TrainConfig,
    averages: Option<ChannelAverages>,
) -> Result<Prepared> {
    let mut pre = cfg.preprocess_config();
    let averages = match (cfg.preprocess_mode, averages) {
        (PreprocessMode::Expanded, Some(a)) => Some(a),
        (PreprocessMode::Expanded, None) => {
            Some(compute_channel_averages(train.iter().map(|(img, _)| img))?)
        }
        _ => None,
    };
    pre.averages = averages;
    let convert = |set: &[(Image, u8)]| -> Result<Vec<Sample>> {
        set.iter()
            .map(|(img, label)| {
                let img = pipeline_apply(img, &pre, cfg.preprocess_mode)?;
                Ok(Sample {
                    input: to_tensor(&img, cfg.image_size)?,
                    label: *label,
                })
            })
            .collect()
    };
    Ok(Prepared {
        train: convert(train)?,
        test: convert(test)?,
        averages,
    })
}

/// Loads `manifest`, splits it per `cfg.test_fraction` and `cfg.seed`, and
/// preprocesses both parts.
pub fn load_split(manifest: &Manifest, cfg: &TrainConfig) -> Result<Prepared> {
    if manifest.is_empty() {
        return Err(Error::param("manifest lists no images"));
    }
    let images = manifest.load()?;
    let (train_idx, test_idx) = split_indices(images.len(), cfg.test_fraction, cfg.seed);
    let pick = |idx: &[usize]| idx.iter().map(|&i| images[i].clone()).collect::<Vec<_>>();
    prepare(&pick(&train_idx), &pick(&test_idx), cfg, None)
}
