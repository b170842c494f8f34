//! Self-verification suites run by `spatial-ar verify` and the test suite.
//!
//! Each suite checks one property against the brute-force routines in
//! [`crate::oracle`] and returns a [`SuiteResult`] row. Suites that accept a
//! target model check it in addition to a batch of random small models.

use std::fmt;
use std::time::Instant;

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::checkpoint::{load_checkpoint_unchecked, save_checkpoint};
use crate::error::{Error, Result};
use crate::mask::{build_mask, MaskKind, RasterOrder};
use crate::metrics;
use crate::model::{ArModel, ModelConfig, ModelGrads, Variant};
use crate::nll;
use crate::optim::{AdamW, AdamWConfig};
use crate::oracle;
use crate::tensor::{Element, Grid4};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Pass,
    Fail,
}

impl fmt::Display for Status {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Status::Pass => "PASS",
            Status::Fail => "FAIL",
        })
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SuiteResult {
    pub name: String,
    pub status: Status,
    pub cases: usize,
    pub detail: String,
    pub elapsed_ms: u64,
}

impl SuiteResult {
    pub fn passed(&self) -> bool {
        self.status == Status::Pass
    }
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct VerifyReport {
    pub suites: Vec<SuiteResult>,
}

impl VerifyReport {
    pub fn all_passed(&self) -> bool {
        self.suites.iter().all(SuiteResult::passed)
    }

    pub fn get(&self, name: &str) -> Option<&SuiteResult> {
        self.suites.iter().find(|s| s.name == name)
    }

    /// Fixed-width pass/fail table.
    pub fn table(&self) -> String {
        let mut out = format!("{:<22} {:<6} {:>6} {:>9}  detail\n", "suite", "status", "cases", "ms");
        for s in &self.suites {
            out.push_str(&format!(
                "{:<22} {:<6} {:>6} {:>9}  {}\n",
                s.name, s.status, s.cases, s.elapsed_ms, s.detail
            ));
        }
        out
    }
}

/// Suite sizes. Defaults match the acceptance thresholds.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct VerifyOptions {
    pub seed: u64,
    pub causality_cases: usize,
    pub oracle_models: usize,
    pub metric_instances: usize,
    pub fixpoint_steps: usize,
    /// Relative error bound of the gradient check.
    pub grad_tolerance: f64,
    /// Absolute bound of the metric comparisons.
    pub metric_tolerance: f64,
}

impl Default for VerifyOptions {
    fn default() -> Self {
        Self {
            seed: 0,
            causality_cases: 100,
            oracle_models: 20,
            metric_instances: 200,
            fixpoint_steps: 1000,
            grad_tolerance: 1e-4,
            metric_tolerance: 1e-12,
        }
    }
}

pub const MASK_GEOMETRY: &str = "mask_geometry";
pub const CAUSALITY: &str = "causality";
pub const SEQUENTIAL_ORACLE: &str = "sequential_oracle";
pub const GRADIENT_CHECK: &str = "gradient_check";
pub const METRIC_ORACLE: &str = "metric_oracle";
pub const MASKED_FIXPOINT: &str = "masked_fixpoint";
pub const CHECKPOINT_ROUNDTRIP: &str = "checkpoint_roundtrip";

/// Runs every suite in a fixed order.
pub fn run_all(options: &VerifyOptions, target: Option<&ArModel<f32>>) -> VerifyReport {
    let s = options.seed;
    VerifyReport {
        suites: vec![
            mask_geometry(),
            causality(options.causality_cases, s, target),
            sequential_oracle(options.oracle_models, s, target),
            gradient_check(s, options.grad_tolerance),
            metric_oracle(options.metric_instances, s, options.metric_tolerance),
            masked_fixpoint(options.fixpoint_steps, s, target),
            checkpoint_roundtrip(s, target),
        ],
    }
}

fn finish(name: &str, start: Instant, cases: usize, outcome: Result<Option<String>>) -> SuiteResult {
    let (status, detail) = match outcome {
        Ok(None) => (Status::Pass, String::new()),
        Ok(Some(reason)) => (Status::Fail, reason),
        Err(e) => (Status::Fail, format!("error: {e}")),
    };
    SuiteResult {
        name: name.to_string(),
        status,
        cases,
        detail,
        elapsed_ms: start.elapsed().as_millis() as u64,
    }
}

fn with_note(mut r: SuiteResult, note: String) -> SuiteResult {
    if r.passed() {
        r.detail = note;
    }
    r
}

fn random_grid(rng: &mut impl Rng, dims: (usize, usize, usize, usize)) -> Grid4<f64> {
    Grid4::from_fn(dims, |_, _, _, _| rng.random_range(-1.0..1.0))
}

/// Every mask kind against the raster-order definition for K = 1..=7.
pub fn mask_geometry() -> SuiteResult {
    let start = Instant::now();
    let mut cases = 0;
    let outcome = (|| -> Result<Option<String>> {
        for k in [1, 3, 5, 7] {
            let r = (k / 2) as isize;
            for kind in MaskKind::ALL {
                cases += 1;
                let mask = build_mask(kind, k)?;
                for u in 0..k {
                    for v in 0..k {
                        let (dy, dx) = (u as isize - r, v as isize - r);
                        let center = dy == 0 && dx == 0;
                        let expected = match kind {
                            MaskKind::CausalA => RasterOrder::offset_precedes(dy, dx),
                            MaskKind::CausalB => RasterOrder::offset_precedes(dy, dx) || center,
                            MaskKind::BidirA => !center,
                            MaskKind::Full => true,
                        };
                        if mask.get(u, v) != expected {
                            return Ok(Some(format!("{kind} K={k} tap ({u},{v})")));
                        }
                    }
                }
            }
            let a = build_mask(MaskKind::CausalA, k)?.ones();
            let b = build_mask(MaskKind::CausalB, k)?.ones();
            if a != (k * k - 1) / 2 || b != a + 1 {
                return Ok(Some(format!("K={k}: causal_a keeps {a}, causal_b keeps {b}")));
            }
        }
        Ok(None)
    })();
    finish(MASK_GEOMETRY, start, cases, outcome)
}

fn causality_probe<T: Element>(
    model: &ArModel<T>,
    f: &Grid4<T>,
    q: (usize, usize),
    delta: f64,
) -> Result<Option<String>> {
    let bad = oracle::causality_violations(model, f, q, delta)?;
    Ok(bad
        .first()
        .map(|p| format!("perturbing {q:?} changed {p:?} ({} positions)", bad.len())))
}

/// Random causal stacks over K ∈ {1,3,5}, d ∈ {1,2,4}, depth 1..=5, plus
/// the target when given. Any change at a non-successor position fails.
pub fn causality(cases: usize, seed: u64, target: Option<&ArModel<f32>>) -> SuiteResult {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(10);
    let mut done = 0;
    let outcome = (|| -> Result<Option<String>> {
        if let Some(t) = target.filter(|t| t.is_causal()) {
            let t64 = t.cast::<f64>();
            let f = random_grid(&mut rng, (1, t.input_channels(), 8, 8));
            for q in [(0, 0), (3, 4), (4, 0), (7, 7), (2, 7)] {
                done += 1;
                if let Some(msg) = causality_probe(&t64, &f, q, 1.5)? {
                    return Ok(Some(format!("target model: {msg}")));
                }
            }
        }
        for i in 0..cases {
            let k = [1, 3, 5][i % 3];
            let d = [1, 2, 4][(i / 3) % 3];
            let depth = 1 + (i / 9) % 5;
            let dim = rng.random_range(1..=3);
            let hidden = rng.random_range(2..=5);
            let cfg = ModelConfig::stack(dim, hidden, depth, k, d, Variant::Causal);
            let mut model = ArModel::<f64>::init(&cfg, rng.random())?;
            for l in model.layers_mut() {
                for b in &mut l.b {
                    *b = rng.random_range(-0.5..0.5);
                }
            }
            let (h, w) = (rng.random_range(3..=9), rng.random_range(3..=9));
            let f = random_grid(&mut rng, (1, dim, h, w));
            let q = (rng.random_range(0..h), rng.random_range(0..w));
            let delta = rng.random_range(0.5..3.0);
            done += 1;
            if let Some(msg) = causality_probe(&model, &f, q, delta)? {
                return Ok(Some(format!("K={k} d={d} depth={depth}: {msg}")));
            }
        }
        Ok(None)
    })();
    if target.is_some_and(|t| !t.is_causal()) && matches!(outcome, Ok(None)) {
        let mut r = finish(CAUSALITY, start, done, outcome);
        r.detail = "target is bidirectional; random models only".into();
        return r;
    }
    finish(CAUSALITY, start, done, outcome)
}

/// Parallel forward against position-by-position evaluation with two
/// sentinels; the difference must be exactly zero in `f64`.
pub fn sequential_oracle(models: usize, seed: u64, target: Option<&ArModel<f32>>) -> SuiteResult {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(11);
    let mut done = 0;
    let check = |model: &ArModel<f64>, f: &Grid4<f64>| -> Result<Option<String>> {
        let seq = oracle::sequential_forward(model, f)?;
        if !seq.sentinels_agree() {
            return Ok(Some("sentinel runs disagree".into()));
        }
        let diff = seq.max_abs_diff(&model.forward(f)?);
        Ok((diff != 0.0).then(|| format!("max abs diff {diff:e}")))
    };
    let outcome = (|| -> Result<Option<String>> {
        if let Some(t) = target.filter(|t| t.is_causal()) {
            let t64 = t.cast::<f64>();
            let f = random_grid(&mut rng, (1, t.input_channels(), 5, 5));
            done += 1;
            if let Some(msg) = check(&t64, &f)? {
                return Ok(Some(format!("target model: {msg}")));
            }
        }
        for i in 0..models {
            let k = [1, 3, 5][i % 3];
            let d = *[1, 2].choose(&mut rng).expect("non-empty");
            let depth = rng.random_range(1..=3);
            let dim = rng.random_range(1..=3);
            let hidden = rng.random_range(2..=4);
            let cfg = ModelConfig::stack(dim, hidden, depth, k, d, Variant::Causal);
            let mut model = ArModel::<f64>::init(&cfg, rng.random())?;
            for l in model.layers_mut() {
                for b in &mut l.b {
                    *b = rng.random_range(-0.5..0.5);
                }
            }
            let (h, w) = (rng.random_range(2..=6), rng.random_range(2..=6));
            let f = random_grid(&mut rng, (1, dim, h, w));
            done += 1;
            if let Some(msg) = check(&model, &f)? {
                return Ok(Some(format!("K={k} d={d} depth={depth} {h}x{w}: {msg}")));
            }
        }
        Ok(None)
    })();
    finish(SEQUENTIAL_ORACLE, start, done, outcome)
}

/// Largest per-parameter relative error between analytic and
/// finite-difference gradients, `|a − n| / max(|a|, |n|, floor)`.
pub fn max_relative_grad_error(analytic: &ModelGrads<f64>, numeric: &ModelGrads<f64>, floor: f64) -> f64 {
    let pairs = analytic
        .weights
        .iter()
        .flatten()
        .zip(numeric.weights.iter().flatten())
        .chain(analytic.biases.iter().flatten().zip(numeric.biases.iter().flatten()));
    pairs
        .map(|(a, n)| (a - n).abs() / a.abs().max(n.abs()).max(floor))
        .fold(0.0, f64::max)
}

/// Analytic gradients of the batch NLL.
pub fn analytic_gradient(model: &ArModel<f64>, f: &Grid4<f64>) -> Result<ModelGrads<f64>> {
    let cache = model.forward_cached(f)?;
    let (_, g) = nll::loss_and_grad(f, &cache.output)?;
    model.backward(&cache, &g)
}

/// Two-layer, 8-channel causal model on a 6×6 grid, checked in `f64`.
pub fn gradient_check(seed: u64, tolerance: f64) -> SuiteResult {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(12);
    let mut params = 0;
    let mut note = String::new();
    let outcome = (|| -> Result<Option<String>> {
        let cfg = ModelConfig::stack(8, 8, 2, 3, 1, Variant::Causal);
        let mut model = ArModel::<f64>::init(&cfg, rng.random())?;
        for l in model.layers_mut() {
            for b in &mut l.b {
                *b = rng.random_range(-0.2..0.2);
            }
        }
        let f = random_grid(&mut rng, (2, 8, 6, 6));
        let analytic = analytic_gradient(&model, &f)?;
        let numeric = oracle::fd_model_gradient(&model, &f, 1e-5)?;
        params = model.param_count();
        let err = max_relative_grad_error(&analytic, &numeric, 1e-6);
        note = format!("max relative error {err:.2e}");
        Ok((err > tolerance).then(|| format!("max relative error {err:e} > {tolerance:e}")))
    })();
    with_note(finish(GRADIENT_CHECK, start, params, outcome), note)
}

/// Random score/label instance with `n ≤ 500`; every third one is drawn from
/// a handful of levels so that ties dominate.
pub fn random_metric_instance(rng: &mut impl Rng) -> (Vec<f64>, Vec<u8>) {
    let n = rng.random_range(2..=500);
    let levels = rng.random_range(2..=6);
    let heavy_ties = rng.random_range(0..3) == 0;
    let scores: Vec<f64> = (0..n)
        .map(|_| {
            if heavy_ties {
                rng.random_range(0..levels) as f64 * 0.25
            } else {
                (rng.random::<f64>() * 1000.0).round() / 1000.0
            }
        })
        .collect();
    let mut labels: Vec<u8> = (0..n).map(|_| rng.random_range(0..2)).collect();
    labels[0] = 0;
    labels[1] = 1;
    (scores, labels)
}

/// Production AUROC/AUPR against the pair-counting and threshold-sweep oracles.
pub fn metric_oracle(instances: usize, seed: u64, tolerance: f64) -> SuiteResult {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(13);
    let mut note = String::new();
    let outcome = (|| -> Result<Option<String>> {
        let mut worst = (0.0f64, 0.0f64);
        for _ in 0..instances {
            let (s, l) = random_metric_instance(&mut rng);
            let d_roc = (metrics::auroc(&s, &l)? - oracle::pairwise_auroc(&s, &l)?).abs();
            let d_ap = (metrics::aupr(&s, &l)? - oracle::stepwise_ap(&s, &l)?).abs();
            worst = (worst.0.max(d_roc), worst.1.max(d_ap));
        }
        note = format!("max diff auroc {:.1e}, aupr {:.1e}", worst.0, worst.1);
        Ok((worst.0 > tolerance || worst.1 > tolerance)
            .then(|| format!("max diff auroc {:e}, aupr {:e}", worst.0, worst.1)))
    })();
    with_note(finish(METRIC_ORACLE, start, instances, outcome), note)
}

fn small_default_model(seed: u64) -> Result<ArModel<f32>> {
    ArModel::init(&ModelConfig::stack(4, 8, 3, 3, 2, Variant::Causal), seed)
}

/// AdamW driven by random gradients, including on masked taps; every masked
/// weight must stay exactly zero after every step.
pub fn masked_fixpoint(steps: usize, seed: u64, target: Option<&ArModel<f32>>) -> SuiteResult {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(14);
    let outcome = (|| -> Result<Option<String>> {
        let mut model = match target {
            Some(t) => {
                if let Err(e) = t.check_masks() {
                    return Ok(Some(format!("target model before training: {e}")));
                }
                t.clone()
            }
            None => small_default_model(seed)?,
        };
        let mut opt = AdamW::new(AdamWConfig::default());
        let mut grads = ModelGrads::zeros_like(&model);
        let n_steps = if target.is_some() { steps.min(50) } else { steps };
        for step in 0..n_steps {
            for g in grads.weights.iter_mut().chain(grads.biases.iter_mut()).flatten() {
                *g = rng.random_range(-1.0..1.0);
            }
            opt.step_model(&mut model, &grads)?;
            if let Err(e) = model.check_masks() {
                return Ok(Some(format!("after step {}: {e}", step + 1)));
            }
        }
        Ok(None)
    })();
    let cases = if target.is_some() { steps.min(50) } else { steps };
    finish(MASKED_FIXPOINT, start, cases, outcome)
}

/// Save, load and save again; bytes and weights must match exactly.
pub fn checkpoint_roundtrip(seed: u64, target: Option<&ArModel<f32>>) -> SuiteResult {
    let start = Instant::now();
    let outcome = (|| -> Result<Option<String>> {
        let model = match target {
            Some(t) => t.clone(),
            None => small_default_model(seed)?,
        };
        let bytes = save_checkpoint(&model);
        let back = load_checkpoint_unchecked(&bytes)?;
        if back != model {
            return Ok(Some("reloaded model differs".into()));
        }
        if save_checkpoint(&back) != bytes {
            return Ok(Some("re-saved bytes differ".into()));
        }
        Ok(None)
    })();
    finish(CHECKPOINT_ROUNDTRIP, start, 1, outcome)
}

/// Positions strictly before `q` whose prediction reacts to a perturbation at
/// `q`. Empty for any causal model.
pub fn future_context_users<T: Element>(
    model: &ArModel<T>,
    f: &Grid4<T>,
    q: (usize, usize),
    delta: f64,
) -> Result<Vec<(usize, usize)>> {
    Ok(oracle::changed_positions(model, f, q, delta)?
        .into_iter()
        .filter(|&p| RasterOrder::precedes(p, q))
        .collect())
}

/// Sets the first masked tap of layer 0 to a nonzero value.
pub fn inject_mask_fault(model: &mut ArModel<f32>, value: f32) -> Result<usize> {
    let tap = model.masks()[0]
        .bits()
        .iter()
        .position(|&keep| !keep)
        .ok_or(Error::InvalidConfig("first layer has no masked taps".into()))?;
    model.layers_mut()[0].w[tap] = value;
    Ok(tap)
}
