//! Command-line interface: `gen`, `train`, `score`, `eval` and `verify`.
//!
//! Every command reads a JSON config (`--config`) and accepts `--seed`.
//! Exit codes: 0 on success, 2 on a validation error (bad config, bad file,
//! I/O), 3 on a verification failure.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::checkpoint::{load_checkpoint, load_checkpoint_unchecked};
use crate::error::{Error, Result};
use crate::io::{
    encode_amap, encode_amsk, encode_fgrd, encode_pgm, read_amap, read_amsk, read_fgrd, read_file,
    write_file, FeatureSet, MaskSet,
};
use crate::metrics::{evaluate, EvalReport, Pooling};
use crate::nll::score_images;
use crate::synth::{gen_split, gen_test, SynthConfig};
use crate::train::{train_from_files, TrainConfig, CHECKPOINT_FILE, LOG_FILE};
use crate::verify::{self, VerifyOptions, VerifyReport};

pub const EXIT_OK: i32 = 0;
pub const EXIT_VALIDATION: i32 = 2;
pub const EXIT_VERIFICATION: i32 = 3;

#[derive(Debug, Parser)]
#[command(name = "spatial-ar", version, about = "Autoregressive anomaly scoring on feature grids")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, clap::Args)]
pub struct Common {
    /// JSON config file.
    #[arg(long)]
    pub config: PathBuf,
    /// Overrides the seed in the config.
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate synthetic train/val/test grids and test masks.
    Gen {
        #[command(flatten)]
        common: Common,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a model; writes best.ckpt and train_log.jsonl.
    Train {
        #[command(flatten)]
        common: Common,
    },
    /// Write per-position NLL maps (AMAP) and optional PGM heatmaps.
    Score {
        #[command(flatten)]
        common: Common,
    },
    /// Pixel AUROC/AUPR of AMAP scores against AMSK masks.
    Eval {
        #[command(flatten)]
        common: Common,
        /// Average per-image metrics instead of pooling all pixels.
        #[arg(long)]
        per_image: bool,
    },
    /// Run the self-verification suites.
    Verify {
        #[command(flatten)]
        common: Common,
    },
}

/// Config of `score`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ScoreConfig {
    pub checkpoint: PathBuf,
    pub data: PathBuf,
    pub out: PathBuf,
    /// Directory for `map_XXXX.pgm` heatmaps.
    #[serde(default)]
    pub heatmap_dir: Option<PathBuf>,
}

/// Config of `eval`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EvalConfig {
    pub scores: PathBuf,
    pub masks: PathBuf,
    /// Report path; printed to stdout either way.
    #[serde(default)]
    pub out: Option<PathBuf>,
    #[serde(default)]
    pub pooling: Pooling,
}

/// Config of `verify`.
#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct VerifyConfig {
    /// Checkpoint to check in addition to random models. Loaded without the
    /// mask check so that a corrupted file reaches the suites.
    #[serde(default)]
    pub checkpoint: Option<PathBuf>,
    #[serde(flatten)]
    pub options: VerifyOptions,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub path: PathBuf,
    pub format: String,
    pub n: usize,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Manifest {
    pub seed: u64,
    pub n_train: usize,
    pub n_val: usize,
    pub n_test: usize,
    pub files: Vec<ManifestEntry>,
}

/// Result of a command, printed by [`main_with_args`].
#[derive(Debug)]
pub enum Outcome {
    Generated(Manifest),
    Trained { best_epoch: usize, best_val_nll: f64, out_dir: PathBuf },
    Scored { images: usize, out: PathBuf },
    Evaluated(EvalReport),
    Verified(VerifyReport),
}

impl Outcome {
    pub fn exit_code(&self) -> i32 {
        match self {
            Outcome::Verified(r) if !r.all_passed() => EXIT_VERIFICATION,
            _ => EXIT_OK,
        }
    }
}

pub fn exit_code_for(err: &Error) -> i32 {
    if err.is_validation() {
        EXIT_VALIDATION
    } else {
        EXIT_VERIFICATION
    }
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let bytes = read_file(path)?;
    Ok(serde_json::from_slice(&bytes)?)
}

pub const TRAIN_FILE: &str = "train.fgrd";
pub const VAL_FILE: &str = "val.fgrd";
pub const TEST_FILE: &str = "test.fgrd";
pub const TEST_MASK_FILE: &str = "test.amsk";

pub fn cmd_gen(config: &SynthConfig, out: &Path) -> Result<Manifest> {
    config.validate()?;
    let mut files = Vec::new();
    let mut put_fgrd = |name: &str, grids: &[crate::tensor::Grid4<f32>]| -> Result<()> {
        let set = if grids.is_empty() {
            FeatureSet {
                n: 0,
                h: config.height,
                w: config.width,
                d: config.dim,
                data: Vec::new(),
            }
        } else {
            FeatureSet::from_grids(grids)?
        };
        let path = out.join(name);
        write_file(&path, &encode_fgrd(&set))?;
        files.push(ManifestEntry {
            path,
            format: "fgrd".into(),
            n: set.n,
        });
        Ok(())
    };
    put_fgrd(TRAIN_FILE, &gen_split(config, config.train_indices())?)?;
    put_fgrd(VAL_FILE, &gen_split(config, config.val_indices())?)?;
    if config.n_test > 0 {
        let (test, masks) = gen_test(config)?;
        put_fgrd(TEST_FILE, &test)?;
        let path = out.join(TEST_MASK_FILE);
        let set = MaskSet {
            h: config.height,
            w: config.width,
            masks,
        };
        write_file(&path, &encode_amsk(&set))?;
        files.push(ManifestEntry {
            path,
            format: "amsk".into(),
            n: config.n_test,
        });
    }
    Ok(Manifest {
        seed: config.seed,
        n_train: config.n_train,
        n_val: config.n_val,
        n_test: config.n_test,
        files,
    })
}

pub fn cmd_score(config: &ScoreConfig) -> Result<usize> {
    let model = load_checkpoint(&read_file(&config.checkpoint)?)?;
    let images = read_fgrd(&config.data)?.to_grids();
    let maps = score_images(&model, &images)?;
    write_file(&config.out, &encode_amap(&maps)?)?;
    if let Some(dir) = &config.heatmap_dir {
        for (i, m) in maps.iter().enumerate() {
            write_file(&dir.join(format!("map_{i:04}.pgm")), &encode_pgm(m))?;
        }
    }
    Ok(maps.len())
}

pub fn cmd_eval(config: &EvalConfig) -> Result<EvalReport> {
    let maps = read_amap(&config.scores)?;
    let masks = read_amsk(&config.masks)?;
    let report = evaluate(&maps, &masks.masks, masks.h, masks.w, config.pooling)?;
    if let Some(out) = &config.out {
        write_file(out, &serde_json::to_vec_pretty(&report)?)?;
    }
    Ok(report)
}

pub fn cmd_verify(config: &VerifyConfig) -> Result<VerifyReport> {
    let target = match &config.checkpoint {
        Some(p) => Some(load_checkpoint_unchecked(&read_file(p)?)?),
        None => None,
    };
    Ok(verify::run_all(&config.options, target.as_ref()))
}

/// Executes a parsed command.
pub fn run(cli: Cli) -> Result<Outcome> {
    match cli.command {
        Command::Gen { common, out } => {
            let mut cfg: SynthConfig = read_json(&common.config)?;
            if let Some(s) = common.seed {
                cfg.seed = s;
            }
            Ok(Outcome::Generated(cmd_gen(&cfg, &out)?))
        }
        Command::Train { common } => {
            let mut cfg: TrainConfig = read_json(&common.config)?;
            if let Some(s) = common.seed {
                cfg.seed = s;
            }
            let out = train_from_files(&cfg)?;
            Ok(Outcome::Trained {
                best_epoch: out.best_epoch,
                best_val_nll: out.best_val_nll,
                out_dir: cfg.out_dir.unwrap_or_default(),
            })
        }
        Command::Score { common } => {
            let cfg: ScoreConfig = read_json(&common.config)?;
            let images = cmd_score(&cfg)?;
            Ok(Outcome::Scored {
                images,
                out: cfg.out,
            })
        }
        Command::Eval { common, per_image } => {
            let mut cfg: EvalConfig = read_json(&common.config)?;
            if per_image {
                cfg.pooling = Pooling::PerImage;
            }
            Ok(Outcome::Evaluated(cmd_eval(&cfg)?))
        }
        Command::Verify { common } => {
            let mut cfg: VerifyConfig = read_json(&common.config)?;
            if let Some(s) = common.seed {
                cfg.options.seed = s;
            }
            Ok(Outcome::Verified(cmd_verify(&cfg)?))
        }
    }
}

fn print_outcome(outcome: &Outcome) -> Result<()> {
    match outcome {
        Outcome::Generated(m) => println!("{}", serde_json::to_string_pretty(m)?),
        Outcome::Trained {
            best_epoch,
            best_val_nll,
            out_dir,
        } => println!(
            "best epoch {best_epoch}, val NLL {best_val_nll:.4}; wrote {} and {}",
            out_dir.join(CHECKPOINT_FILE).display(),
            out_dir.join(LOG_FILE).display()
        ),
        Outcome::Scored { images, out } => println!("scored {images} images into {}", out.display()),
        Outcome::Evaluated(r) => println!("{}", serde_json::to_string_pretty(r)?),
        Outcome::Verified(r) => print!("{}", r.table()),
    }
    Ok(())
}

/// Parses `args`, runs the command and returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_VALIDATION } else { EXIT_OK };
        }
    };
    match run(cli).and_then(|o| print_outcome(&o).map(|_| o.exit_code())) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code_for(&e)
        }
    }
}
