//! Mini-batch NLL training on normal grids with best-validation selection.
//!
//! Epoch order comes from a ChaCha8 generator seeded with the run seed on
//! stream 1, shuffled with `rand`'s Fisher–Yates (`SliceRandom::shuffle`).
//! Parameter init uses stream 0 of the same seed. Per-image gradients are
//! computed in parallel and summed in batch order, so runs are bitwise
//! reproducible.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use crate::checkpoint::save_checkpoint;
use crate::error::{Error, Result};
use crate::io::{read_fgrd, write_file};
use crate::model::{ArModel, ModelConfig, ModelGrads, Standardizer};
use crate::nll;
use crate::optim::{AdamW, AdamWConfig};
use crate::tensor::Grid4;

fn default_batch_size() -> usize {
    64
}
fn default_max_epochs() -> usize {
    200
}
fn default_eval_every() -> usize {
    1
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub model: ModelConfig,
    #[serde(default)]
    pub optim: AdamWConfig,
    #[serde(default = "default_batch_size")]
    pub batch_size: usize,
    #[serde(default = "default_max_epochs")]
    pub max_epochs: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_eval_every")]
    pub eval_every: usize,
    /// Fit per-channel mean/std on the training set and store it in the
    /// checkpoint.
    #[serde(default)]
    pub standardize: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub train_data: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub val_data: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out_dir: Option<PathBuf>,
}

impl TrainConfig {
    pub fn new(model: ModelConfig) -> Self {
        Self {
            model,
            optim: AdamWConfig::default(),
            batch_size: default_batch_size(),
            max_epochs: default_max_epochs(),
            seed: 0,
            eval_every: default_eval_every(),
            standardize: false,
            train_data: None,
            val_data: None,
            out_dir: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        if self.batch_size == 0 {
            return Err(Error::InvalidConfig("batch_size must be >= 1".into()));
        }
        if self.max_epochs == 0 {
            return Err(Error::InvalidConfig("max_epochs must be >= 1".into()));
        }
        if self.eval_every == 0 {
            return Err(Error::InvalidConfig("eval_every must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainLogRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_nll: Option<f64>,
    pub wall_ms: u64,
    pub is_best: bool,
}

pub struct TrainOutcome {
    pub model: ArModel<f32>,
    pub best_epoch: usize,
    pub best_val_nll: f64,
    pub log: Vec<TrainLogRecord>,
}

fn check_set(name: &'static str, set: &[Grid4<f32>], channels: usize) -> Result<()> {
    if set.is_empty() {
        return Err(Error::Empty(name));
    }
    for g in set {
        if g.batch() != 1 {
            return Err(Error::dims("training data (batch)", 1, g.batch()));
        }
        if g.channels() != channels {
            return Err(Error::dims("training data (channels)", channels, g.channels()));
        }
    }
    Ok(())
}

/// Mean per-image NLL.
pub fn mean_nll(model: &ArModel<f32>, images: &[Grid4<f32>]) -> Result<f64> {
    if images.is_empty() {
        return Err(Error::Empty("evaluation set"));
    }
    let per: Vec<f64> = images
        .par_iter()
        .map(|f| {
            let mu = model.forward(f)?;
            nll::loss(f, &mu)
        })
        .collect::<Result<_>>()?;
    Ok(per.iter().sum::<f64>() / per.len() as f64)
}

/// Loss and averaged gradients for one mini-batch.
fn batch_step(model: &ArModel<f32>, batch: &[&Grid4<f32>]) -> Result<(f64, ModelGrads<f32>)> {
    let per: Vec<(f64, ModelGrads<f32>)> = batch
        .par_iter()
        .map(|f| {
            let cache = model.forward_cached(f)?;
            let (l, g) = nll::loss_and_grad(f, &cache.output)?;
            Ok((l, model.backward(&cache, &g)?))
        })
        .collect::<Result<_>>()?;
    let mut total = ModelGrads::zeros_like(model);
    let mut loss = 0.0;
    for (l, g) in &per {
        loss += l;
        total.add_assign(g);
    }
    total.scale(1.0 / batch.len() as f64);
    Ok((loss, total))
}

/// Trains on normal grids only. `on_epoch` sees every log record as it is
/// produced; `on_best` sees the model whenever validation NLL improves.
pub fn train_with(
    config: &TrainConfig,
    train: &[Grid4<f32>],
    val: &[Grid4<f32>],
    mut on_epoch: impl FnMut(&TrainLogRecord) -> Result<()>,
    mut on_best: impl FnMut(&ArModel<f32>) -> Result<()>,
) -> Result<TrainOutcome> {
    config.validate()?;
    let channels = config.model.input_channels();
    check_set("training set", train, channels)?;
    check_set("validation set", val, channels)?;

    let standardizer = if config.standardize {
        Some(Standardizer::fit(train)?)
    } else {
        None
    };
    let (train, val): (Vec<Grid4<f32>>, Vec<Grid4<f32>>) = match &standardizer {
        Some(s) => (
            train.iter().map(|g| s.apply(g)).collect::<Result<_>>()?,
            val.iter().map(|g| s.apply(g)).collect::<Result<_>>()?,
        ),
        None => (train.to_vec(), val.to_vec()),
    };

    let mut model = ArModel::<f32>::init(&config.model, config.seed)?;
    model.set_standardizer(standardizer);
    let mut opt = AdamW::new(config.optim);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(1);
    let mut order: Vec<usize> = (0..train.len()).collect();

    let mut log = Vec::with_capacity(config.max_epochs);
    let mut best: Option<(usize, f64, ArModel<f32>)> = None;
    for epoch in 1..=config.max_epochs {
        let started = Instant::now();
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        for chunk in order.chunks(config.batch_size) {
            let batch: Vec<&Grid4<f32>> = chunk.iter().map(|&i| &train[i]).collect();
            let (loss, grads) = batch_step(&model, &batch)?;
            if !loss.is_finite() {
                return Err(Error::NonFinite(format!("training loss at epoch {epoch}")));
            }
            loss_sum += loss;
            opt.step_model(&mut model, &grads)?;
        }
        let evaluate = epoch % config.eval_every == 0 || epoch == config.max_epochs;
        let val_nll = if evaluate {
            Some(mean_nll(&model, &val)?)
        } else {
            None
        };
        let is_best = match (val_nll, &best) {
            (Some(v), Some((_, b, _))) => v < *b,
            (Some(v), None) => v.is_finite(),
            (None, _) => false,
        };
        if is_best {
            let v = val_nll.expect("checked");
            on_best(&model)?;
            best = Some((epoch, v, model.clone()));
        }
        let record = TrainLogRecord {
            epoch,
            train_loss: loss_sum / train.len() as f64,
            val_nll,
            wall_ms: started.elapsed().as_millis() as u64,
            is_best,
        };
        on_epoch(&record)?;
        log.push(record);
    }
    let (best_epoch, best_val_nll, model) =
        best.ok_or_else(|| Error::NonFinite("validation NLL never finite".into()))?;
    Ok(TrainOutcome {
        model,
        best_epoch,
        best_val_nll,
        log,
    })
}

pub fn train(config: &TrainConfig, train: &[Grid4<f32>], val: &[Grid4<f32>]) -> Result<TrainOutcome> {
    train_with(config, train, val, |_| Ok(()), |_| Ok(()))
}

pub const CHECKPOINT_FILE: &str = "best.ckpt";
pub const LOG_FILE: &str = "train_log.jsonl";

/// File-driven training: reads FGRD train/val sets, writes `best.ckpt`
/// (rewritten on every improvement) and `train_log.jsonl` into `out_dir`.
pub fn train_from_files(config: &TrainConfig) -> Result<TrainOutcome> {
    let need = |p: &Option<PathBuf>, what: &str| {
        p.clone()
            .ok_or_else(|| Error::InvalidConfig(format!("missing \"{what}\"")))
    };
    let train_path = need(&config.train_data, "train_data")?;
    let val_path = need(&config.val_data, "val_data")?;
    let out_dir = need(&config.out_dir, "out_dir")?;
    config.validate()?;
    let train = read_fgrd(&train_path)?.to_grids();
    let val = read_fgrd(&val_path)?.to_grids();

    std::fs::create_dir_all(&out_dir).map_err(|e| Error::io(&out_dir, e))?;
    let log_path = out_dir.join(LOG_FILE);
    let mut log_file = std::fs::File::create(&log_path).map_err(|e| Error::io(&log_path, e))?;
    let ckpt_path = out_dir.join(CHECKPOINT_FILE);
    train_with(
        config,
        &train,
        &val,
        |rec| {
            let line = serde_json::to_string(rec)?;
            writeln!(log_file, "{line}").map_err(|e| Error::io(&log_path, e))
        },
        |model| write_file(&ckpt_path, &save_checkpoint(model)),
    )
}

/// Reads a JSONL training log.
pub fn read_log(path: &Path) -> Result<Vec<TrainLogRecord>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).map_err(Error::from))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Variant;

    fn data(n: usize, seed: usize) -> Vec<Grid4<f32>> {
        (0..n)
            .map(|k| {
                Grid4::from_fn((1, 2, 5, 5), |_, c, i, j| {
                    (((k + seed) * 31 + c * 7 + i * 5 + j * 3) % 11) as f32 / 11.0 - 0.5
                })
            })
            .collect()
    }

    fn cfg() -> TrainConfig {
        let mut c = TrainConfig::new(ModelConfig::stack(2, 4, 2, 3, 1, Variant::Causal));
        c.batch_size = 3;
        c.max_epochs = 3;
        c.seed = 11;
        c
    }

    #[test]
    fn single_epoch_selects_epoch_one() {
        let mut c = cfg();
        c.max_epochs = 1;
        let out = train(&c, &data(5, 0), &data(2, 100)).unwrap();
        assert_eq!(out.log.len(), 1);
        assert_eq!(out.best_epoch, 1);
        assert!(out.log[0].is_best);
    }

    #[test]
    fn deterministic_runs() {
        let a = train(&cfg(), &data(7, 0), &data(2, 100)).unwrap();
        let b = train(&cfg(), &data(7, 0), &data(2, 100)).unwrap();
        assert_eq!(a.model, b.model);
        let strip = |l: &[TrainLogRecord]| {
            l.iter()
                .map(|r| (r.epoch, r.train_loss.to_bits(), r.val_nll.map(f64::to_bits), r.is_best))
                .collect::<Vec<_>>()
        };
        assert_eq!(strip(&a.log), strip(&b.log));
    }

    #[test]
    fn eval_every_skips_and_final_epoch_evaluates() {
        let mut c = cfg();
        c.max_epochs = 5;
        c.eval_every = 2;
        let out = train(&c, &data(4, 0), &data(2, 100)).unwrap();
        let present: Vec<bool> = out.log.iter().map(|r| r.val_nll.is_some()).collect();
        assert_eq!(present, vec![false, true, false, true, true]);
    }

    #[test]
    fn rejects_bad_inputs() {
        assert!(matches!(train(&cfg(), &[], &data(1, 0)), Err(Error::Empty(_))));
        assert!(matches!(train(&cfg(), &data(1, 0), &[]), Err(Error::Empty(_))));
        let wrong = vec![Grid4::<f32>::zeros(1, 3, 4, 4)];
        assert!(train(&cfg(), &wrong, &wrong).is_err());
        let mut c = cfg();
        c.batch_size = 0;
        assert!(train(&c, &data(2, 0), &data(2, 0)).is_err());
    }

    #[test]
    fn best_is_min_of_logged() {
        let mut c = cfg();
        c.max_epochs = 6;
        let out = train(&c, &data(6, 0), &data(3, 50)).unwrap();
        let min = out
            .log
            .iter()
            .filter_map(|r| r.val_nll)
            .fold(f64::INFINITY, f64::min);
        assert_eq!(out.best_val_nll, min);
        assert!(out.log[out.best_epoch - 1].is_best);
    }

    #[test]
    fn config_json_defaults() {
        let json = r#"{"model":{"layers":[{"c_in":2,"c_out":2,"k":3,"dilation":4,"mask":"causal_a","activation":"none"}]}}"#;
        let c: TrainConfig = serde_json::from_str(json).unwrap();
        assert_eq!(c.batch_size, 64);
        assert_eq!(c.max_epochs, 200);
        assert_eq!(c.optim.lr, 1e-3);
        assert_eq!(c.eval_every, 1);
        c.validate().unwrap();
    }
}
