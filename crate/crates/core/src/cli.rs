//! The `xray` command line.
//!
//! Exit codes: 0 success, 1 partial experiment failure, 2 usage or
//! validation error, 3 numerical divergence.

use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::checkpoint::Checkpoint;
use crate::config::{parse_config, TrainConfig};
use crate::datagen::{generate, SyntheticSpec};
use crate::dataset::{prepare, Manifest};
use crate::error::{Error, Result};
use crate::pipeline::{self, run_experiment};
use crate::preprocess::{compute_channel_averages, pipeline_apply, Image, PreprocessConfig, PreprocessMode};
use crate::training::{evaluate, EpochRecord};

pub const EXIT_OK: i32 = 0;
pub const EXIT_PARTIAL: i32 = 1;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_DIVERGED: i32 = 3;

#[derive(Parser, Debug)]
#[command(name = "xray", version, about = "Pneumonia classifier toolkit: preprocessing, synthetic data, training and evaluation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Transform a directory of PPM/PGM images.
    Preprocess(PreprocessArgs),
    /// Write a synthetic labelled corpus and its manifest.
    Datagen(DatagenArgs),
    /// Train a model and write a checkpoint.
    Train(TrainArgs),
    /// Score a checkpoint on a manifest.
    Eval(EvalArgs),
    /// Run the five-row preprocessing/architecture ablation.
    Experiment(ExperimentArgs),
}

#[derive(Args, Debug)]
struct PreprocessArgs {
    /// Input directory.
    #[arg(long = "in")]
    input: PathBuf,
    /// Output directory (created if missing).
    #[arg(long)]
    out: PathBuf,
    /// raw, expanded, contrast or contrast-light.
    #[arg(long, default_value = "contrast-light")]
    mode: PreprocessMode,
    #[arg(long, default_value_t = 1.5)]
    alpha: f64,
    #[arg(long, default_value_t = 0.0, allow_hyphen_values = true)]
    beta: f64,
    /// Brightness offset for contrast-light.
    #[arg(long, default_value_t = 40.0, allow_hyphen_values = true)]
    delta: f64,
    /// Divisor for the expanded color scheme.
    #[arg(long, default_value_t = 128.0)]
    denom: f64,
}

#[derive(Args, Debug)]
struct DatagenArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 500)]
    n: usize,
    #[arg(long, default_value_t = 32)]
    size: usize,
    #[arg(long, default_value_t = 0.5)]
    positive_fraction: f64,
    #[arg(long, default_value_t = 7)]
    seed: u64,
}

#[derive(Args, Debug)]
struct ConfigArgs {
    /// key = value config file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override one config key, e.g. --set epochs=30. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[arg(long)]
    manifest: PathBuf,
    #[command(flatten)]
    config: ConfigArgs,
    /// Checkpoint path.
    #[arg(long)]
    out: PathBuf,
    /// Also write the epoch log CSV here.
    #[arg(long)]
    log: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct EvalArgs {
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    checkpoint: PathBuf,
    /// Must describe the same architecture as the checkpoint.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    threshold: Option<f64>,
}

#[derive(Args, Debug)]
struct ExperimentArgs {
    #[arg(long)]
    manifest: PathBuf,
    #[command(flatten)]
    config: ConfigArgs,
    /// Report CSV path.
    #[arg(long)]
    out: PathBuf,
    /// Rows trained concurrently.
    #[arg(long, default_value_t = 1)]
    jobs: usize,
}

/// Parses `args` (program name first) and runs the command.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let text = e.render().to_string();
            return if e.use_stderr() {
                let _ = write!(err, "{text}");
                EXIT_USAGE
            } else {
                let _ = write!(out, "{text}");
                EXIT_OK
            };
        }
    };
    let result = match cli.command {
        Command::Preprocess(a) => cmd_preprocess(&a, out),
        Command::Datagen(a) => cmd_datagen(&a, out),
        Command::Train(a) => cmd_train(&a, out, err),
        Command::Eval(a) => cmd_eval(&a, out),
        Command::Experiment(a) => cmd_experiment(&a, out, err),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            exit_code(&e)
        }
    }
}

pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Diverged { .. } => EXIT_DIVERGED,
        _ => EXIT_USAGE,
    }
}

fn io_err(e: std::io::Error) -> Error {
    Error::Io(e)
}

fn load_config(args: &ConfigArgs) -> Result<TrainConfig> {
    let mut cfg = match &args.config {
        Some(path) => {
            let text = fs::read_to_string(path)?;
            parse_config(&text).map_err(|e| match e {
                Error::Config { line, message } => Error::Config {
                    line,
                    message: format!("{}: {message}", path.display()),
                },
                other => other,
            })?
        }
        None => TrainConfig::default(),
    };
    for item in &args.overrides {
        let (key, value) = item
            .split_once('=')
            .ok_or_else(|| Error::param(format!("--set expects KEY=VALUE, got {item:?}")))?;
        cfg.set_value(key.trim(), value.trim())?;
    }
    Ok(cfg)
}

fn is_image(path: &Path) -> bool {
    path.is_file()
        && path
            .extension()
            .and_then(|e| e.to_str())
            .map_or(false, |e| e.eq_ignore_ascii_case("ppm") || e.eq_ignore_ascii_case("pgm"))
}

fn cmd_preprocess(a: &PreprocessArgs, out: &mut dyn Write) -> Result<i32> {
    let mut files: Vec<PathBuf> = fs::read_dir(&a.input)
        .map_err(|e| Error::param(format!("cannot read {}: {e}", a.input.display())))?
        .map(|e| e.map(|e| e.path()))
        .collect::<std::io::Result<_>>()?;
    files.retain(|p| is_image(p));
    files.sort();

    fs::create_dir_all(&a.out)?;
    if fs::canonicalize(&a.out)? == fs::canonicalize(&a.input)? {
        return Err(Error::param("--out must differ from --in; inputs are never overwritten"));
    }
    let images = files
        .iter()
        .map(|p| Image::read(p))
        .collect::<Result<Vec<_>>>()?;

    let mut cfg = PreprocessConfig {
        alpha: a.alpha,
        beta: a.beta,
        brightness_delta: a.delta,
        expansion_denom: a.denom,
        averages: None,
    };
    cfg.validate()?;
    if a.mode == PreprocessMode::Expanded && !images.is_empty() {
        cfg.averages = Some(compute_channel_averages(&images)?);
    }
    for (path, img) in files.iter().zip(&images) {
        let name = path.file_name().expect("listed file has a name");
        if a.mode == PreprocessMode::Raw {
            fs::copy(path, a.out.join(name))?;
        } else {
            let target = a.out.join(Path::new(name).with_extension("ppm"));
            pipeline_apply(img, &cfg, a.mode)?.write_ppm(&target)?;
        }
    }
    writeln!(out, "processed {} images", images.len()).map_err(io_err)?;
    Ok(EXIT_OK)
}

fn cmd_datagen(a: &DatagenArgs, out: &mut dyn Write) -> Result<i32> {
    let spec = SyntheticSpec {
        n_images: a.n,
        image_size: a.size,
        positive_fraction: a.positive_fraction,
        seed: a.seed,
        ..SyntheticSpec::default()
    };
    let manifest = generate(&spec, &a.out)?;
    let positives = manifest.entries().iter().filter(|e| e.label == 1).count();
    writeln!(
        out,
        "wrote {} images ({positives} positive) to {}",
        manifest.len(),
        a.out.join("manifest.csv").display()
    )
    .map_err(io_err)?;
    Ok(EXIT_OK)
}

fn read_manifest_images(path: &Path) -> Result<Vec<(Image, u8)>> {
    let manifest = Manifest::read(path)?;
    if manifest.is_empty() {
        return Err(Error::param(format!("{} lists no images", path.display())));
    }
    manifest.load()
}

fn cmd_train(a: &TrainArgs, out: &mut dyn Write, err: &mut dyn Write) -> Result<i32> {
    let cfg = load_config(&a.config)?;
    let images = read_manifest_images(&a.manifest)?;
    writeln!(out, "{}", EpochRecord::CSV_HEADER).map_err(io_err)?;
    let mut write_failed = None;
    let result = pipeline::run(&images, &cfg, |rec| {
        if let Err(e) = writeln!(out, "{}", rec.csv_line()).and_then(|_| out.flush()) {
            write_failed.get_or_insert(e);
        }
    })?;
    if let Some(e) = write_failed {
        return Err(io_err(e));
    }
    result.checkpoint.save(&a.out)?;
    if let Some(log) = &a.log {
        fs::write(log, result.log.to_csv())?;
    }
    let _ = writeln!(
        err,
        "trained on {} images, held out {}; checkpoint {} ({} parameters)",
        result.train_n,
        result.test_n,
        a.out.display(),
        result.checkpoint.model.parameter_count()
    );
    Ok(EXIT_OK)
}

fn cmd_eval(a: &EvalArgs, out: &mut dyn Write) -> Result<i32> {
    let ck = Checkpoint::load(&a.checkpoint)?;
    let mut cfg = ck.config.clone();
    if let Some(path) = &a.config {
        let given = load_config(&ConfigArgs {
            config: Some(path.clone()),
            overrides: Vec::new(),
        })?;
        if given.arch_config() != ck.config.arch_config() {
            return Err(Error::param(format!(
                "config describes a {} {}px network with filters {:?} and {} hidden units; \
                 checkpoint holds a {} {}px network with filters {:?} and {} hidden units",
                given.arch,
                given.image_size,
                given.conv_filters,
                given.hidden_units,
                ck.config.arch,
                ck.config.image_size,
                ck.config.conv_filters,
                ck.config.hidden_units
            )));
        }
        cfg.threshold = given.threshold;
    }
    if let Some(t) = a.threshold {
        cfg.set_value("threshold", &t.to_string())?;
    }
    let images = read_manifest_images(&a.manifest)?;
    let data = prepare(&images, &[], &cfg, ck.averages)?;
    let mut model = ck.model;
    let metrics = evaluate(&mut model, &data.train, cfg.threshold)?;
    let c = metrics.counts;
    writeln!(out, "evaluated {} images", c.total()).map_err(io_err)?;
    writeln!(out, "{metrics}").map_err(io_err)?;
    writeln!(out, "tp {} fp {} tn {} fn {}", c.tp, c.fp, c.tn, c.fn_).map_err(io_err)?;
    Ok(EXIT_OK)
}

fn cmd_experiment(a: &ExperimentArgs, out: &mut dyn Write, err: &mut dyn Write) -> Result<i32> {
    let cfg = load_config(&a.config)?;
    let images = read_manifest_images(&a.manifest)?;
    let report = run_experiment(&images, &cfg, a.jobs);
    fs::write(&a.out, report.to_csv())?;
    write!(out, "{report}").map_err(io_err)?;
    if report.all_ok() {
        Ok(EXIT_OK)
    } else {
        let _ = writeln!(err, "some configurations failed; see {}", a.out.display());
        Ok(EXIT_PARTIAL)
    }
}
