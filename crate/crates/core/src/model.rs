//! The autoregressive network: a stack of masked, optionally dilated
//! convolutions mapping a feature grid `F` to the grid of conditional means.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::sync::atomic::{AtomicU64, Ordering};

use crate::error::{Error, Result};
use crate::mask::{build_mask, mask_in_place, KernelMask, MaskKind};
use crate::tensor::{backward_impl, conv2d_forward, ConvWeights, Element, Grid4};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    None,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerSpec {
    pub c_in: usize,
    pub c_out: usize,
    pub k: usize,
    pub dilation: usize,
    pub mask: MaskKind,
    pub activation: Activation,
}

/// Which conditioning set the stack implements.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    /// Raster-scan past only (`causal_a` then `causal_b`).
    Causal,
    /// Every position except the center (`bidir_a` then `full`).
    Bidirectional,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub layers: Vec<LayerSpec>,
}

impl ModelConfig {
    /// `depth` layers mapping `dim` channels through `hidden`-wide layers back
    /// to `dim`, ReLU between layers, same kernel size and dilation throughout.
    pub fn stack(
        dim: usize,
        hidden: usize,
        depth: usize,
        k: usize,
        dilation: usize,
        variant: Variant,
    ) -> Self {
        let (first, rest) = match variant {
            Variant::Causal => (MaskKind::CausalA, MaskKind::CausalB),
            Variant::Bidirectional => (MaskKind::BidirA, MaskKind::Full),
        };
        let layers = (0..depth)
            .map(|l| {
                let last = l + 1 == depth;
                LayerSpec {
                    c_in: if l == 0 { dim } else { hidden },
                    c_out: if last { dim } else { hidden },
                    k,
                    dilation,
                    mask: if l == 0 { first } else { rest },
                    activation: if last {
                        Activation::None
                    } else {
                        Activation::Relu
                    },
                }
            })
            .collect();
        Self { layers }
    }

    /// Five 3×3 layers, 384 hidden channels; dilation 4 when `dilated`.
    pub fn default_for(dim: usize, dilated: bool) -> Self {
        Self::stack(dim, 384, 5, 3, if dilated { 4 } else { 1 }, Variant::Causal)
    }

    pub fn input_channels(&self) -> usize {
        self.layers.first().map_or(0, |l| l.c_in)
    }

    pub fn depth(&self) -> usize {
        self.layers.len()
    }

    /// `Σ (c_out · c_in · K² + c_out)`, masked taps included.
    pub fn param_count(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.c_out * l.c_in * l.k * l.k + l.c_out)
            .sum()
    }

    /// Causal when the first layer hides the center and every later layer
    /// only looks at the past or the center.
    pub fn is_causal(&self) -> bool {
        match self.layers.split_first() {
            Some((first, rest)) => {
                first.mask == MaskKind::CausalA && rest.iter().all(|l| l.mask.is_causal())
            }
            None => false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidConfig(msg));
        let Some(first) = self.layers.first() else {
            return bad("model has no layers".into());
        };
        if !matches!(first.mask, MaskKind::CausalA | MaskKind::BidirA) {
            return bad(format!(
                "first layer mask must be causal_a or bidir_a (got {})",
                first.mask
            ));
        }
        for (idx, l) in self.layers.iter().enumerate() {
            if l.k == 0 || l.k % 2 == 0 {
                return bad(format!("layer {idx}: kernel size {} is not odd", l.k));
            }
            if l.dilation == 0 {
                return bad(format!("layer {idx}: dilation must be >= 1"));
            }
            if l.c_in == 0 || l.c_out == 0 {
                return bad(format!("layer {idx}: channel counts must be positive"));
            }
        }
        for (idx, pair) in self.layers.windows(2).enumerate() {
            if pair[0].c_out != pair[1].c_in {
                return bad(format!(
                    "layer {idx} c_out {} != layer {} c_in {}",
                    pair[0].c_out,
                    idx + 1,
                    pair[1].c_in
                ));
            }
        }
        let last = self.layers.last().expect("non-empty");
        if last.activation != Activation::None {
            return bad("last layer activation must be none".into());
        }
        if last.c_out != first.c_in {
            return bad(format!(
                "last layer c_out {} must equal data dimension {}",
                last.c_out, first.c_in
            ));
        }
        Ok(())
    }
}

/// Per-channel affine standardization fitted on training data.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: Vec<f32>,
    pub std: Vec<f32>,
}

impl Standardizer {
    /// Fits mean and standard deviation per channel over every image and
    /// position.
    pub fn fit<T: Element>(images: &[Grid4<T>]) -> Result<Self> {
        let first = images.first().ok_or(Error::Empty("training set"))?;
        let c = first.channels();
        let mut sum = vec![0.0f64; c];
        let mut sq = vec![0.0f64; c];
        let mut count = 0usize;
        for img in images {
            for n in 0..img.batch() {
                for (ch, (s, q)) in sum.iter_mut().zip(sq.iter_mut()).enumerate() {
                    for v in img.plane(n, ch) {
                        let v = v.to_f64();
                        *s += v;
                        *q += v * v;
                    }
                }
                count += img.height() * img.width();
            }
        }
        let count = count.max(1) as f64;
        let mut mean = Vec::with_capacity(c);
        let mut std = Vec::with_capacity(c);
        for (s, q) in sum.iter().zip(&sq) {
            let m = s / count;
            let var = (q / count - m * m).max(0.0);
            mean.push(m as f32);
            std.push(if var > 0.0 { var.sqrt() as f32 } else { 1.0 });
        }
        Ok(Self { mean, std })
    }

    pub fn apply<T: Element>(&self, grid: &Grid4<T>) -> Result<Grid4<T>> {
        let (n, c, h, w) = grid.dims();
        if c != self.mean.len() {
            return Err(Error::dims("Standardizer::apply", self.mean.len(), c));
        }
        let mut out = grid.clone();
        let hw = h * w;
        for (idx, chunk) in out.data_mut().chunks_mut(hw.max(1)).enumerate().take(n * c) {
            let ch = idx % c;
            let (m, s) = (self.mean[ch] as f64, self.std[ch] as f64);
            for v in chunk {
                *v = T::from_f64((v.to_f64() - m) / s);
            }
        }
        Ok(out)
    }
}

/// Activations kept from a forward pass for backpropagation.
pub struct ForwardCache<T> {
    /// Input of every layer; `inputs[0]` is the feature grid.
    pub inputs: Vec<Grid4<T>>,
    pub output: Grid4<T>,
}

/// Gradients for every layer, masked taps zeroed.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelGrads<T> {
    pub weights: Vec<Vec<T>>,
    pub biases: Vec<Vec<T>>,
}

impl<T: Element> ModelGrads<T> {
    pub fn zeros_like(model: &ArModel<T>) -> Self {
        Self {
            weights: model.layers.iter().map(|l| vec![T::default(); l.w.len()]).collect(),
            biases: model.layers.iter().map(|l| vec![T::default(); l.b.len()]).collect(),
        }
    }

    /// `self += other`, accumulated through `f64`.
    pub fn add_assign(&mut self, other: &Self) {
        let pairs = self
            .weights
            .iter_mut()
            .zip(&other.weights)
            .chain(self.biases.iter_mut().zip(&other.biases));
        for (dst, src) in pairs {
            for (d, s) in dst.iter_mut().zip(src) {
                *d = T::from_f64(d.to_f64() + s.to_f64());
            }
        }
    }

    pub fn scale(&mut self, factor: f64) {
        for v in self.weights.iter_mut().chain(self.biases.iter_mut()).flatten() {
            *v = T::from_f64(v.to_f64() * factor);
        }
    }
}

/// Masked convolution stack `μ = f(F)`.
#[derive(Debug)]
pub struct ArModel<T> {
    config: ModelConfig,
    seed: u64,
    layers: Vec<ConvWeights<T>>,
    masks: Vec<KernelMask>,
    standardizer: Option<Standardizer>,
    forward_calls: AtomicU64,
}

impl<T: Element> Clone for ArModel<T> {
    fn clone(&self) -> Self {
        Self {
            config: self.config.clone(),
            seed: self.seed,
            layers: self.layers.clone(),
            masks: self.masks.clone(),
            standardizer: self.standardizer.clone(),
            forward_calls: AtomicU64::new(0),
        }
    }
}

impl<T: Element> PartialEq for ArModel<T> {
    fn eq(&self, other: &Self) -> bool {
        self.config == other.config
            && self.seed == other.seed
            && self.layers == other.layers
            && self.standardizer == other.standardizer
    }
}

pub(crate) fn masks_for(config: &ModelConfig) -> Result<Vec<KernelMask>> {
    config.layers.iter().map(|l| build_mask(l.mask, l.k)).collect()
}

impl<T: Element> ArModel<T> {
    /// Uniform `±1/√fan_in` weights with `fan_in = c_in · (unmasked taps)`,
    /// zero biases, masked taps zero. Deterministic in `seed` (ChaCha8).
    pub fn init(config: &ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let masks = masks_for(config)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut layers = Vec::with_capacity(config.layers.len());
        for (spec, mask) in config.layers.iter().zip(&masks) {
            let fan_in = spec.c_in * mask.ones();
            let bound = if fan_in > 0 {
                1.0 / (fan_in as f64).sqrt()
            } else {
                0.0
            };
            let kk = spec.k * spec.k;
            let mut w = vec![T::default(); spec.c_out * spec.c_in * kk];
            for (idx, slot) in w.iter_mut().enumerate() {
                if mask.bits()[idx % kk] {
                    *slot = T::from_f64(rng.random_range(-1.0..1.0) * bound);
                }
            }
            layers.push(ConvWeights::new(
                spec.c_out,
                spec.c_in,
                spec.k,
                spec.dilation,
                w,
                vec![T::default(); spec.c_out],
            )?);
        }
        Ok(Self {
            config: config.clone(),
            seed,
            layers,
            masks,
            standardizer: None,
            forward_calls: AtomicU64::new(0),
        })
    }

    /// Assembles a model from stored parameters without checking masked taps.
    pub(crate) fn from_parts(
        config: ModelConfig,
        seed: u64,
        layers: Vec<ConvWeights<T>>,
        standardizer: Option<Standardizer>,
    ) -> Result<Self> {
        config.validate()?;
        let masks = masks_for(&config)?;
        Ok(Self {
            config,
            seed,
            layers,
            masks,
            standardizer,
            forward_calls: AtomicU64::new(0),
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn layers(&self) -> &[ConvWeights<T>] {
        &self.layers
    }

    /// Direct parameter access. Callers that write masked taps break the
    /// causality invariant; [`ArModel::check_masks`] detects that.
    pub fn layers_mut(&mut self) -> &mut [ConvWeights<T>] {
        &mut self.layers
    }

    pub fn masks(&self) -> &[KernelMask] {
        &self.masks
    }

    pub fn standardizer(&self) -> Option<&Standardizer> {
        self.standardizer.as_ref()
    }

    pub fn set_standardizer(&mut self, s: Option<Standardizer>) {
        self.standardizer = s;
    }

    pub fn input_channels(&self) -> usize {
        self.config.input_channels()
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(|l| l.param_count()).sum()
    }

    pub fn is_causal(&self) -> bool {
        self.config.is_causal()
    }

    /// Number of forward passes run since creation or the last reset.
    pub fn forward_count(&self) -> u64 {
        self.forward_calls.load(Ordering::Relaxed)
    }

    pub fn reset_forward_count(&self) {
        self.forward_calls.store(0, Ordering::Relaxed);
    }

    /// Fails with the first masked tap holding a non-zero weight.
    pub fn check_masks(&self) -> Result<()> {
        for (layer, (wts, mask)) in self.layers.iter().zip(&self.masks).enumerate() {
            let kk = wts.kernel() * wts.kernel();
            for (index, v) in wts.w.iter().enumerate() {
                if !mask.bits()[index % kk] && v.to_f64() != 0.0 {
                    return Err(Error::MaskViolation {
                        layer,
                        index,
                        value: v.to_f64() as f32,
                    });
                }
            }
        }
        Ok(())
    }

    /// Re-zeroes every masked tap.
    pub fn enforce_masks(&mut self) {
        for (wts, mask) in self.layers.iter_mut().zip(&self.masks) {
            let k = wts.kernel();
            mask_in_place(&mut wts.w, k, mask).expect("mask matches layer");
        }
    }

    pub fn cast<U: Element>(&self) -> ArModel<U> {
        ArModel {
            config: self.config.clone(),
            seed: self.seed,
            layers: self.layers.iter().map(|l| l.cast()).collect(),
            masks: self.masks.clone(),
            standardizer: self.standardizer.clone(),
            forward_calls: AtomicU64::new(0),
        }
    }

    fn check_input(&self, f: &Grid4<T>) -> Result<()> {
        if f.channels() != self.input_channels() {
            return Err(Error::dims(
                "ArModel::forward (channels)",
                self.input_channels(),
                f.channels(),
            ));
        }
        Ok(())
    }

    /// Conditional means for every position, all positions in one pass.
    pub fn forward(&self, f: &Grid4<T>) -> Result<Grid4<T>> {
        Ok(self.forward_cached(f)?.output)
    }

    /// Forward pass that keeps every layer input for [`ArModel::backward`].
    pub fn forward_cached(&self, f: &Grid4<T>) -> Result<ForwardCache<T>> {
        self.check_input(f)?;
        self.forward_calls.fetch_add(1, Ordering::Relaxed);
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut cur = f.clone();
        for (spec, wts) in self.config.layers.iter().zip(&self.layers) {
            let mut next = conv2d_forward(&cur, wts)?;
            if spec.activation == Activation::Relu {
                for v in next.data_mut() {
                    if *v < T::default() {
                        *v = T::default();
                    }
                }
            }
            inputs.push(std::mem::replace(&mut cur, next));
        }
        Ok(ForwardCache {
            inputs,
            output: cur,
        })
    }

    /// Backpropagates `∂L/∂μ` through the stack. Masked taps get zero gradient.
    pub fn backward(&self, cache: &ForwardCache<T>, grad_output: &Grid4<T>) -> Result<ModelGrads<T>> {
        if grad_output.dims() != cache.output.dims() {
            return Err(Error::dims(
                "ArModel::backward",
                format!("{:?}", cache.output.dims()),
                format!("{:?}", grad_output.dims()),
            ));
        }
        let depth = self.layers.len();
        let mut weights = vec![Vec::new(); depth];
        let mut biases = vec![Vec::new(); depth];
        let mut grad = grad_output.clone();
        for l in (0..depth).rev() {
            if self.config.layers[l].activation == Activation::Relu {
                let act = if l + 1 < depth {
                    &cache.inputs[l + 1]
                } else {
                    &cache.output
                };
                for (g, a) in grad.data_mut().iter_mut().zip(act.data()) {
                    if *a <= T::default() {
                        *g = T::default();
                    }
                }
            }
            let (mut gw, gb, gx) = backward_impl(&cache.inputs[l], &self.layers[l], &grad, l > 0)?;
            mask_in_place(&mut gw, self.layers[l].kernel(), &self.masks[l])?;
            weights[l] = gw;
            biases[l] = gb;
            if let Some(gx) = gx {
                grad = gx;
            }
        }
        Ok(ModelGrads { weights, biases })
    }
}
