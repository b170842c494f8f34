//! Deterministic synthetic feature grids with spatial correlation, and
//! anomaly injection with ground-truth masks.
//!
//! Each grid is a pure function of `(seed, index)`: a ChaCha8 stream seeded
//! from `seed` and selected by `index`. Training, validation and test grids
//! use disjoint index ranges `[0, n_train)`, `[n_train, n_train + n_val)` and
//! the rest.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Grid4;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AnomalyKind {
    /// Fresh iid normals inside the rectangle.
    NoisePatch,
    /// Features copied from a disjoint rectangle of the same grid.
    ShufflePatch,
}

/// Missing JSON fields take their [`SynthConfig::reference`] values.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub height: usize,
    pub width: usize,
    pub dim: usize,
    /// Triangular smoothing radius; 0 disables smoothing.
    pub smoothing: usize,
    pub n_train: usize,
    pub n_val: usize,
    pub n_test: usize,
    pub anomaly: AnomalyKind,
    /// Rectangle side lengths are drawn uniformly from `[rect_min, rect_max]`.
    pub rect_min: usize,
    pub rect_max: usize,
    pub seed: u64,
}

impl SynthConfig {
    /// 64×64 grid, 16 channels, radius 2, 512/64/64 split, 8–16 noise patches.
    pub fn reference() -> Self {
        Self {
            height: 64,
            width: 64,
            dim: 16,
            smoothing: 2,
            n_train: 512,
            n_val: 64,
            n_test: 64,
            anomaly: AnomalyKind::NoisePatch,
            rect_min: 8,
            rect_max: 16,
            seed: 7,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.height == 0 || self.width == 0 || self.dim == 0 {
            return Err(Error::InvalidConfig("grid dimensions must be positive".into()));
        }
        if self.rect_min == 0 || self.rect_min > self.rect_max {
            return Err(Error::InvalidConfig(format!(
                "invalid rectangle range [{}, {}]",
                self.rect_min, self.rect_max
            )));
        }
        if self.rect_max > self.height || self.rect_max > self.width {
            return Err(Error::RectDoesNotFit(format!(
                "side up to {} in a {}x{} grid",
                self.rect_max, self.height, self.width
            )));
        }
        Ok(())
    }

    pub fn train_indices(&self) -> std::ops::Range<u64> {
        0..self.n_train as u64
    }

    pub fn val_indices(&self) -> std::ops::Range<u64> {
        let s = self.n_train as u64;
        s..s + self.n_val as u64
    }

    pub fn test_indices(&self) -> std::ops::Range<u64> {
        let s = (self.n_train + self.n_val) as u64;
        s..s + self.n_test as u64
    }
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self::reference()
    }
}

/// Axis-aligned rectangle `[top, top + h) × [left, left + w)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Rect {
    pub top: usize,
    pub left: usize,
    pub h: usize,
    pub w: usize,
}

impl Rect {
    pub fn area(&self) -> usize {
        self.h * self.w
    }

    pub fn contains(&self, i: usize, j: usize) -> bool {
        i >= self.top && i < self.top + self.h && j >= self.left && j < self.left + self.w
    }

    pub fn overlaps(&self, other: &Rect) -> bool {
        self.top < other.top + other.h
            && other.top < self.top + self.h
            && self.left < other.left + other.w
            && other.left < self.left + self.w
    }
}

fn stream(seed: u64, domain: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ domain);
    rng.set_stream(index);
    rng
}

const NORMAL_DOMAIN: u64 = 0;
const ANOMALY_DOMAIN: u64 = 0x9E37_79B9_7F4A_7C15;

/// Normalized 1D triangular weights `(s + 1 − |k|) / (s + 1)²` for `k ∈ [−s, s]`.
pub fn triangular_kernel(s: usize) -> Vec<f64> {
    let norm = ((s + 1) * (s + 1)) as f64;
    (0..=2 * s)
        .map(|k| (s + 1 - k.abs_diff(s)) as f64 / norm)
        .collect()
}

/// One normal grid (`N = 1`, `C = dim`), unit empirical variance.
pub fn gen_normal(config: &SynthConfig, index: u64) -> Result<Grid4<f32>> {
    config.validate()?;
    let (h, w, s) = (config.height, config.width, config.smoothing);
    let (ph, pw) = (h + 2 * s, w + 2 * s);
    let kernel = triangular_kernel(s);
    let mut rng = stream(config.seed, NORMAL_DOMAIN, index);

    let mut values = Vec::with_capacity(config.dim * h * w);
    let mut raw = vec![0.0f64; ph * pw];
    let mut horiz = vec![0.0f64; ph * w];
    for _ in 0..config.dim {
        for v in raw.iter_mut() {
            *v = rng.sample(StandardNormal);
        }
        for i in 0..ph {
            for j in 0..w {
                horiz[i * w + j] = kernel
                    .iter()
                    .enumerate()
                    .map(|(t, k)| k * raw[i * pw + j + t])
                    .sum();
            }
        }
        for i in 0..h {
            for j in 0..w {
                let v: f64 = kernel
                    .iter()
                    .enumerate()
                    .map(|(t, k)| k * horiz[(i + t) * w + j])
                    .sum();
                values.push(v);
            }
        }
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    let scale = if var > 0.0 { 1.0 / var.sqrt() } else { 1.0 };
    Grid4::from_vec(
        (1, config.dim, h, w),
        values.into_iter().map(|v| (v * scale) as f32).collect(),
    )
}

/// Draws the anomaly rectangle for `index`.
fn sample_rect(config: &SynthConfig, rng: &mut ChaCha8Rng, h: usize, w: usize) -> Result<Rect> {
    if config.rect_min == 0 || config.rect_min > config.rect_max {
        return Err(Error::InvalidConfig(format!(
            "invalid rectangle range [{}, {}]",
            config.rect_min, config.rect_max
        )));
    }
    if config.rect_max > h || config.rect_max > w {
        return Err(Error::RectDoesNotFit(format!(
            "side up to {} in a {h}x{w} grid",
            config.rect_max
        )));
    }
    let rh = rng.random_range(config.rect_min..=config.rect_max);
    let rw = rng.random_range(config.rect_min..=config.rect_max);
    let top = rng.random_range(0..=h - rh);
    let left = rng.random_range(0..=w - rw);
    Ok(Rect {
        top,
        left,
        h: rh,
        w: rw,
    })
}

/// Injects one anomaly into a single-image grid. Returns the modified grid,
/// its `H × W` 0/1 mask, and the rectangle.
pub fn inject_anomaly(
    f: &Grid4<f32>,
    config: &SynthConfig,
    index: u64,
) -> Result<(Grid4<f32>, Vec<u8>, Rect)> {
    let (n, c, h, w) = f.dims();
    if n != 1 {
        return Err(Error::dims("inject_anomaly (batch)", 1, n));
    }
    let mut rng = stream(config.seed, ANOMALY_DOMAIN, index);
    let rect = sample_rect(config, &mut rng, h, w)?;
    let mut out = f.clone();
    match config.anomaly {
        AnomalyKind::NoisePatch => {
            let vals = f.data();
            let cnt = vals.len() as f64;
            let mean = vals.iter().map(|&v| v as f64).sum::<f64>() / cnt;
            let var = vals.iter().map(|&v| (v as f64 - mean).powi(2)).sum::<f64>() / cnt;
            let sd = var.sqrt();
            for ch in 0..c {
                for i in rect.top..rect.top + rect.h {
                    for j in rect.left..rect.left + rect.w {
                        let z: f64 = rng.sample(StandardNormal);
                        out.set(0, ch, i, j, (mean + sd * z) as f32);
                    }
                }
            }
        }
        AnomalyKind::ShufflePatch => {
            let candidates: Vec<(usize, usize)> = (0..=h - rect.h)
                .flat_map(|t| (0..=w - rect.w).map(move |l| (t, l)))
                .filter(|&(t, l)| {
                    !rect.overlaps(&Rect {
                        top: t,
                        left: l,
                        h: rect.h,
                        w: rect.w,
                    })
                })
                .collect();
            if candidates.is_empty() {
                return Err(Error::RectDoesNotFit(format!(
                    "no disjoint {}x{} source in a {h}x{w} grid",
                    rect.h, rect.w
                )));
            }
            let (st, sl) = candidates[rng.random_range(0..candidates.len())];
            for ch in 0..c {
                for di in 0..rect.h {
                    for dj in 0..rect.w {
                        let v = f.get(0, ch, st + di, sl + dj);
                        out.set(0, ch, rect.top + di, rect.left + dj, v);
                    }
                }
            }
        }
    }
    let mask = (0..h * w)
        .map(|p| rect.contains(p / w, p % w) as u8)
        .collect();
    Ok((out, mask, rect))
}

/// Normal grids for an index range.
pub fn gen_split(config: &SynthConfig, indices: std::ops::Range<u64>) -> Result<Vec<Grid4<f32>>> {
    indices.map(|i| gen_normal(config, i)).collect()
}

/// Anomalous test grids and their masks.
pub fn gen_test(config: &SynthConfig) -> Result<(Vec<Grid4<f32>>, Vec<Vec<u8>>)> {
    let mut grids = Vec::with_capacity(config.n_test);
    let mut masks = Vec::with_capacity(config.n_test);
    for i in config.test_indices() {
        let (g, m, _) = inject_anomaly(&gen_normal(config, i)?, config, i)?;
        grids.push(g);
        masks.push(m);
    }
    Ok((grids, masks))
}

/// Spatial autocorrelation of one channel at `lag`, averaging the horizontal
/// and vertical Pearson correlations.
pub fn lag_autocorrelation(f: &Grid4<f32>, channel: usize, lag: usize) -> f64 {
    let (_, _, h, w) = f.dims();
    let p = f.plane(0, channel);
    let n = p.len() as f64;
    let mean = p.iter().map(|&v| v as f64).sum::<f64>() / n;
    let var = p.iter().map(|&v| (v as f64 - mean).powi(2)).sum::<f64>() / n;
    let corr = |pairs: &mut dyn Iterator<Item = (f32, f32)>| {
        let (mut s, mut k) = (0.0, 0usize);
        for (a, b) in pairs {
            s += (a as f64 - mean) * (b as f64 - mean);
            k += 1;
        }
        if k == 0 || var == 0.0 {
            0.0
        } else {
            s / k as f64 / var
        }
    };
    let horiz = corr(&mut (0..h).flat_map(|i| {
        (0..w.saturating_sub(lag)).map(move |j| (p[i * w + j], p[i * w + j + lag]))
    }));
    let vert = corr(&mut (0..h.saturating_sub(lag)).flat_map(|i| {
        (0..w).map(move |j| (p[i * w + j], p[(i + lag) * w + j]))
    }));
    0.5 * (horiz + vert)
}
