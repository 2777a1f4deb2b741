//! End-to-end runs: split, preprocess, initialise, train, score.
//!
//! [`run_experiment`] repeats a run over the fixed five-row ablation grid
//! (four preprocessing variants on the cnn, then the resnet on the best
//! preprocessing).

use std::fmt;
use std::fmt::Write as _;
use std::thread;

use crate::checkpoint::Checkpoint;
use crate::config::TrainConfig;
use crate::dataset::{prepare, split_indices};
use crate::error::{Error, Result};
use crate::model::{Arch, Model};
use crate::preprocess::{Image, PreprocessMode};
use crate::rng::Rng;
use crate::training::{evaluate, train_with, EpochRecord, Metrics, TrainLog, INIT_STREAM};

#[derive(Debug, Clone)]
pub struct Run {
    pub checkpoint: Checkpoint,
    pub log: TrainLog,
    /// Held-out metrics; `None` when the test split is empty.
    pub test_metrics: Option<Metrics>,
    pub train_n: usize,
    pub test_n: usize,
}

/// Trains on `images` under `cfg`. The split is drawn from `split_seed`;
/// initialisation, shuffling and dropout from `cfg.seed`.
pub fn run_with_split(
    images: &[(Image, u8)],
    cfg: &TrainConfig,
    split_seed: u64,
    on_epoch: impl FnMut(&EpochRecord),
) -> Result<Run> {
    cfg.validate()?;
    if images.is_empty() {
        return Err(Error::param("no images to train on"));
    }
    let (train_idx, test_idx) = split_indices(images.len(), cfg.test_fraction, split_seed);
    if train_idx.is_empty() {
        return Err(Error::param("the training split is empty"));
    }
    let pick = |idx: &[usize]| idx.iter().map(|&i| images[i].clone()).collect::<Vec<_>>();
    let data = prepare(&pick(&train_idx), &pick(&test_idx), cfg, None)?;

    let mut model = Model::build(&cfg.arch_config(), &mut Rng::derive(cfg.seed, INIT_STREAM))?;
    let log = train_with(&mut model, &data.train, &data.test, cfg, on_epoch)?;
    let test_metrics = if data.test.is_empty() {
        None
    } else {
        Some(evaluate(&mut model, &data.test, cfg.threshold)?)
    };
    Ok(Run {
        checkpoint: Checkpoint::new(model, cfg.clone(), data.averages),
        log,
        test_metrics,
        train_n: data.train.len(),
        test_n: data.test.len(),
    })
}

/// [`run_with_split`] with the split drawn from `cfg.seed`.
pub fn run(images: &[(Image, u8)], cfg: &TrainConfig, on_epoch: impl FnMut(&EpochRecord)) -> Result<Run> {
    run_with_split(images, cfg, cfg.seed, on_epoch)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ExperimentRow {
    pub name: &'static str,
    pub arch: Arch,
    pub mode: PreprocessMode,
}

pub const EXPERIMENT_ROWS: [ExperimentRow; 5] = [
    ExperimentRow { name: "cnn-raw", arch: Arch::Cnn, mode: PreprocessMode::Raw },
    ExperimentRow { name: "cnn-expanded", arch: Arch::Cnn, mode: PreprocessMode::Expanded },
    ExperimentRow { name: "cnn-contrast", arch: Arch::Cnn, mode: PreprocessMode::Contrast },
    ExperimentRow { name: "cnn-contrast-light", arch: Arch::Cnn, mode: PreprocessMode::ContrastLight },
    ExperimentRow { name: "resnet-contrast-light", arch: Arch::Resnet, mode: PreprocessMode::ContrastLight },
];

#[derive(Debug, Clone)]
pub struct RowResult {
    pub row: ExperimentRow,
    pub outcome: std::result::Result<Metrics, String>,
    pub epochs: usize,
    pub seed: u64,
    pub train_n: usize,
    pub test_n: usize,
}

#[derive(Debug, Clone)]
pub struct Report {
    pub rows: Vec<RowResult>,
}

impl Report {
    pub const CSV_HEADER: &'static str =
        "name,arch,preprocess_mode,accuracy,precision,recall,f_score,epochs,seed,train_n,test_n,status";

    pub fn all_ok(&self) -> bool {
        self.rows.iter().all(|r| r.outcome.is_ok())
    }

    /// Raw ratios with six decimals; failed rows leave the metric cells
    /// empty and carry the error in `status`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from(Self::CSV_HEADER);
        out.push('\n');
        for r in &self.rows {
            let metrics = match &r.outcome {
                Ok(m) => format!("{:.6},{:.6},{:.6},{:.6}", m.accuracy, m.precision, m.recall, m.f_score),
                Err(_) => ",,,".into(),
            };
            let status = match &r.outcome {
                Ok(_) => "ok".to_string(),
                Err(e) => format!("\"failed: {}\"", e.replace('"', "'")),
            };
            let _ = writeln!(
                out,
                "{},{},{},{metrics},{},{},{},{},{status}",
                r.row.name, r.row.arch, r.row.mode, r.epochs, r.seed, r.train_n, r.test_n
            );
        }
        out
    }
}

impl fmt::Display for Report {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{:<24}{:>10}{:>10}  status", "configuration", "accuracy", "f_score")?;
        for r in &self.rows {
            match &r.outcome {
                Ok(m) => writeln!(
                    f,
                    "{:<24}{:>9.2}%{:>9.2}%  ok",
                    r.row.name,
                    100.0 * m.accuracy,
                    100.0 * m.f_score
                )?,
                Err(e) => writeln!(f, "{:<24}{:>10}{:>10}  failed: {e}", r.row.name, "-", "-")?,
            }
        }
        Ok(())
    }
}

fn run_row(images: &[(Image, u8)], base: &TrainConfig, index: usize, row: ExperimentRow) -> RowResult {
    let mut cfg = base.clone();
    cfg.arch = row.arch;
    cfg.preprocess_mode = row.mode;
    // independent init/shuffle/dropout per row; the split stays shared
    cfg.seed = Rng::derive(base.seed, index as u64).next_u64();
    let outcome = run_with_split(images, &cfg, base.seed, |_| {}).and_then(|r| {
        r.test_metrics
            .ok_or_else(|| Error::param("experiment needs a non-empty test split (test_fraction > 0)"))
    });
    let (train_idx, test_idx) = split_indices(images.len(), base.test_fraction, base.seed);
    RowResult {
        row,
        outcome: outcome.map_err(|e| e.to_string()),
        epochs: cfg.epochs,
        seed: base.seed,
        train_n: train_idx.len(),
        test_n: test_idx.len(),
    }
}

/// Runs the five ablation rows, up to `jobs` at a time. Row order in the
/// report is fixed; a failing row is recorded and the others still run.
pub fn run_experiment(images: &[(Image, u8)], cfg: &TrainConfig, jobs: usize) -> Report {
    let jobs = jobs.max(1);
    let mut rows: Vec<Option<RowResult>> = vec![None; EXPERIMENT_ROWS.len()];
    let indexed: Vec<(usize, ExperimentRow)> = EXPERIMENT_ROWS.iter().copied().enumerate().collect();
    for chunk in indexed.chunks(jobs) {
        thread::scope(|s| {
            let handles: Vec<_> = chunk
                .iter()
                .map(|&(i, row)| (i, s.spawn(move || run_row(images, cfg, i, row))))
                .collect();
            for (i, h) in handles {
                rows[i] = Some(h.join().unwrap_or_else(|_| RowResult {
                    row: EXPERIMENT_ROWS[i],
                    outcome: Err("worker panicked".into()),
                    epochs: cfg.epochs,
                    seed: cfg.seed,
                    train_n: 0,
                    test_n: 0,
                }));
            }
        });
    }
    Report {
        rows: rows.into_iter().map(|r| r.expect("every row ran")).collect(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datagen::{generate_images, SyntheticSpec};

    fn small_cfg() -> TrainConfig {
        TrainConfig {
            epochs: 2,
            batch_size: 8,
            image_size: 16,
            conv_filters: [3, 4, 4],
            hidden_units: 8,
            test_fraction: 0.25,
            ..TrainConfig::default()
        }
    }

    fn corpus(n: usize) -> Vec<(Image, u8)> {
        generate_images(&SyntheticSpec {
            n_images: n,
            image_size: 16,
            ..SyntheticSpec::default()
        })
        .unwrap()
    }

    #[test]
    fn run_reports_split_sizes() {
        let images = corpus(20);
        let r = run(&images, &small_cfg(), |_| {}).unwrap();
        assert_eq!((r.train_n, r.test_n), (15, 5));
        assert_eq!(r.log.epochs.len(), 2);
        assert_eq!(r.test_metrics.unwrap().counts.total(), 5);
    }

    #[test]
    fn experiment_rows_are_fixed_and_parallelism_is_invisible() {
        let images = corpus(16);
        let serial = run_experiment(&images, &small_cfg(), 1);
        let parallel = run_experiment(&images, &small_cfg(), 5);
        assert!(serial.all_ok(), "{serial}");
        assert_eq!(serial.to_csv(), parallel.to_csv());
        let names: Vec<&str> = serial.rows.iter().map(|r| r.row.name).collect();
        assert_eq!(
            names,
            ["cnn-raw", "cnn-expanded", "cnn-contrast", "cnn-contrast-light", "resnet-contrast-light"]
        );
        let csv = serial.to_csv();
        assert_eq!(csv.lines().count(), 6);
        assert!(serial.rows.iter().all(|r| r.seed == 42 && r.test_n == 4));
    }

    #[test]
    fn failing_row_is_recorded() {
        let images = corpus(8);
        let cfg = TrainConfig {
            test_fraction: 0.0,
            ..small_cfg()
        };
        let report = run_experiment(&images, &cfg, 2);
        assert!(!report.all_ok());
        assert_eq!(report.rows.len(), 5);
        assert!(report.to_csv().contains("failed: "));
    }
}
