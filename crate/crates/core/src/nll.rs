//! Isotropic unit-variance Gaussian conditionals: per-position negative
//! log-likelihood, the training loss, and anomaly maps.
//!
//! For a `D`-dimensional embedding `f` with predicted mean `m`,
//! `-log N(f | m, I) = ½‖f − m‖² + (D/2)·log 2π`.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::model::ArModel;
use crate::tensor::{Element, Grid4};

/// `(D/2)·log 2π` for one position.
pub fn nll_constant(dim: usize) -> f64 {
    0.5 * dim as f64 * (2.0 * std::f64::consts::PI).ln()
}

/// Per-position conditional NLL of one image, row-major `H × W`.
#[derive(Clone, Debug, PartialEq)]
pub struct AnomalyMap {
    height: usize,
    width: usize,
    scores: Vec<f32>,
}

impl AnomalyMap {
    pub fn new(height: usize, width: usize, scores: Vec<f32>) -> Result<Self> {
        if scores.len() != height * width {
            return Err(Error::dims("AnomalyMap::new", height * width, scores.len()));
        }
        Ok(Self {
            height,
            width,
            scores,
        })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn scores(&self) -> &[f32] {
        &self.scores
    }

    pub fn get(&self, i: usize, j: usize) -> f32 {
        self.scores[i * self.width + j]
    }

    pub fn min_max(&self) -> (f32, f32) {
        self.scores
            .iter()
            .fold((f32::INFINITY, f32::NEG_INFINITY), |(lo, hi), &v| {
                (lo.min(v), hi.max(v))
            })
    }

    /// Mean score over positions where `select` is true.
    pub fn masked_mean(&self, select: &[bool]) -> Option<f64> {
        let (sum, n) = self
            .scores
            .iter()
            .zip(select)
            .filter(|(_, &s)| s)
            .fold((0.0f64, 0usize), |(s, n), (&v, _)| (s + v as f64, n + 1));
        (n > 0).then(|| sum / n as f64)
    }
}

fn check_same<T: Element>(op: &'static str, f: &Grid4<T>, mu: &Grid4<T>) -> Result<()> {
    if f.dims() != mu.dims() {
        return Err(Error::dims(op, format!("{:?}", f.dims()), format!("{:?}", mu.dims())));
    }
    Ok(())
}

/// Per-position NLL in `f64`, image-major `(N, H, W)`.
fn position_nll<T: Element>(f: &Grid4<T>, mu: &Grid4<T>) -> Vec<f64> {
    let (n, c, h, w) = f.dims();
    let hw = h * w;
    let konst = nll_constant(c);
    let mut out = vec![0.0f64; n * hw];
    for ni in 0..n {
        let sq = &mut out[ni * hw..(ni + 1) * hw];
        for ch in 0..c {
            for ((s, a), b) in sq.iter_mut().zip(f.plane(ni, ch)).zip(mu.plane(ni, ch)) {
                let r = a.to_f64() - b.to_f64();
                *s += r * r;
            }
        }
        for s in sq.iter_mut() {
            *s = 0.5 * *s + konst;
        }
    }
    out
}

/// Per-position NLL at full precision, image-major `(N, H, W)`.
pub fn nll_values<T: Element>(f: &Grid4<T>, mu: &Grid4<T>) -> Result<Vec<f64>> {
    check_same("nll_values", f, mu)?;
    Ok(position_nll(f, mu))
}

/// One anomaly map per image of the batch.
pub fn nll_map<T: Element>(f: &Grid4<T>, mu: &Grid4<T>) -> Result<Vec<AnomalyMap>> {
    check_same("nll_map", f, mu)?;
    let (n, _, h, w) = f.dims();
    let all = position_nll(f, mu);
    let hw = h * w;
    Ok((0..n)
        .map(|ni| AnomalyMap {
            height: h,
            width: w,
            scores: all[ni * hw..(ni + 1) * hw].iter().map(|&v| v as f32).collect(),
        })
        .collect())
}

/// Mean over images of the summed per-position NLL.
pub fn loss<T: Element>(f: &Grid4<T>, mu: &Grid4<T>) -> Result<f64> {
    check_same("loss", f, mu)?;
    let n = f.batch();
    if n == 0 {
        return Err(Error::Empty("batch"));
    }
    let hw = f.height() * f.width();
    let all = position_nll(f, mu);
    let total: f64 = all.chunks(hw.max(1)).map(|img| img.iter().sum::<f64>()).sum();
    Ok(total / n as f64)
}

/// Loss and its gradient `(μ − F) / N` with respect to `μ`.
pub fn loss_and_grad<T: Element>(f: &Grid4<T>, mu: &Grid4<T>) -> Result<(f64, Grid4<T>)> {
    let value = loss(f, mu)?;
    let inv_n = 1.0 / f.batch() as f64;
    let mut grad = mu.clone();
    for (g, x) in grad.data_mut().iter_mut().zip(f.data()) {
        *g = T::from_f64((g.to_f64() - x.to_f64()) * inv_n);
    }
    Ok((value, grad))
}

/// Scores one image (`N = 1`) with exactly one forward pass.
pub fn score_image<T: Element>(model: &ArModel<T>, f: &Grid4<T>) -> Result<AnomalyMap> {
    if f.batch() != 1 {
        return Err(Error::dims("score_image (batch)", 1, f.batch()));
    }
    let input = match model.standardizer() {
        Some(s) => s.apply(f)?,
        None => f.clone(),
    };
    let mu = model.forward(&input)?;
    Ok(nll_map(&input, &mu)?.pop().expect("one image"))
}

/// Scores every image in parallel; output order follows input order.
pub fn score_images<T: Element>(model: &ArModel<T>, images: &[Grid4<T>]) -> Result<Vec<AnomalyMap>> {
    images.par_iter().map(|f| score_image(model, f)).collect()
}
