//! Slow, independent reference computations for checking the production
//! paths: position-by-position autoregressive evaluation, perturbation
//! probes, central finite differences, pair-counting AUROC and a
//! threshold-sweep average precision.
//!
//! Nothing here is used by training, scoring or evaluation.

use crate::error::{Error, Result};
use crate::mask::RasterOrder;
use crate::model::{ArModel, ModelGrads};
use crate::nll;
use crate::tensor::{Element, Grid4};

/// Sentinels written over the "future" during sequential evaluation.
pub const SENTINELS: [f64; 2] = [0.0, 1e6];

/// Conditional means assembled one position at a time, once per sentinel.
#[derive(Clone, Debug)]
pub struct SequentialOutput<T> {
    pub per_sentinel: Vec<Grid4<T>>,
}

impl<T: Element> SequentialOutput<T> {
    /// Largest absolute difference between any sentinel run and `mu`.
    pub fn max_abs_diff(&self, mu: &Grid4<T>) -> f64 {
        self.per_sentinel
            .iter()
            .flat_map(|g| g.data().iter().zip(mu.data()))
            .map(|(a, b)| (a.to_f64() - b.to_f64()).abs())
            .fold(0.0, f64::max)
    }

    /// Whether all sentinel runs agree exactly with each other.
    pub fn sentinels_agree(&self) -> bool {
        self.per_sentinel
            .windows(2)
            .all(|w| w[0].data().iter().zip(w[1].data()).all(|(a, b)| a == b))
    }
}

/// For every position `p` in raster order, overwrite all positions `⪰ p` with
/// a sentinel, run a full forward, and keep `μ[p]`.
pub fn sequential_forward<T: Element>(model: &ArModel<T>, f: &Grid4<T>) -> Result<SequentialOutput<T>> {
    if !model.is_causal() {
        return Err(Error::OracleUndefined(
            "sequential evaluation needs a causal model",
        ));
    }
    let (n, c, h, w) = f.dims();
    let mut per_sentinel = Vec::with_capacity(SENTINELS.len());
    for &sentinel in &SENTINELS {
        let mut mu = Grid4::zeros(n, c, h, w);
        for ni in 0..n {
            let img = f.image(ni);
            for i in 0..h {
                for j in 0..w {
                    let mut hidden = img.clone();
                    for ch in 0..c {
                        for ii in 0..h {
                            for jj in 0..w {
                                if !RasterOrder::precedes((ii, jj), (i, j)) {
                                    hidden.set(0, ch, ii, jj, T::from_f64(sentinel));
                                }
                            }
                        }
                    }
                    let out = model.forward(&hidden)?;
                    for ch in 0..c {
                        mu.set(ni, ch, i, j, out.get(0, ch, i, j));
                    }
                }
            }
        }
        per_sentinel.push(mu);
    }
    Ok(SequentialOutput { per_sentinel })
}

/// Positions of image 0 whose prediction changes when every channel of `f`
/// at `q` is shifted by `delta`.
pub fn changed_positions<T: Element>(
    model: &ArModel<T>,
    f: &Grid4<T>,
    q: (usize, usize),
    delta: f64,
) -> Result<Vec<(usize, usize)>> {
    let base = model.forward(f)?;
    let mut moved = f.clone();
    for ch in 0..f.channels() {
        let v = moved.get(0, ch, q.0, q.1).to_f64();
        moved.set(0, ch, q.0, q.1, T::from_f64(v + delta));
    }
    let out = model.forward(&moved)?;
    let (_, c, h, w) = f.dims();
    let mut changed = Vec::new();
    for i in 0..h {
        for j in 0..w {
            if (0..c).any(|ch| base.get(0, ch, i, j) != out.get(0, ch, i, j)) {
                changed.push((i, j));
            }
        }
    }
    Ok(changed)
}

/// Positions `p ⪯ q` whose prediction reacts to a perturbation at `q`.
pub fn causality_violations<T: Element>(
    model: &ArModel<T>,
    f: &Grid4<T>,
    q: (usize, usize),
    delta: f64,
) -> Result<Vec<(usize, usize)>> {
    Ok(changed_positions(model, f, q, delta)?
        .into_iter()
        .filter(|&p| !RasterOrder::precedes(q, p))
        .collect())
}

/// Central differences `(f(x + h) − f(x − h)) / 2h` for every coordinate.
pub fn fd_gradient(
    mut loss: impl FnMut(&[f64]) -> f64,
    params: &[f64],
    step: f64,
) -> Result<Vec<f64>> {
    let mut x = params.to_vec();
    let mut grad = Vec::with_capacity(x.len());
    for i in 0..x.len() {
        let orig = x[i];
        x[i] = orig + step;
        let up = loss(&x);
        x[i] = orig - step;
        let down = loss(&x);
        x[i] = orig;
        if !up.is_finite() || !down.is_finite() {
            return Err(Error::NonFinite(format!("loss at coordinate {i}")));
        }
        grad.push((up - down) / (2.0 * step));
    }
    Ok(grad)
}

/// Finite-difference gradient of the batch NLL loss over every unmasked
/// weight and every bias. Masked taps are reported as zero.
pub fn fd_model_gradient(model: &ArModel<f64>, f: &Grid4<f64>, step: f64) -> Result<ModelGrads<f64>> {
    let mut grads = ModelGrads::zeros_like(model);
    let mut probe = model.clone();
    let eval = |m: &ArModel<f64>| -> Result<f64> {
        let mu = m.forward(f)?;
        nll::loss(f, &mu)
    };
    for l in 0..model.layers().len() {
        let kk = model.layers()[l].kernel().pow(2);
        let keep = model.masks()[l].bits().to_vec();
        for idx in 0..model.layers()[l].w.len() {
            if !keep[idx % kk] {
                continue;
            }
            let orig = probe.layers()[l].w[idx];
            probe.layers_mut()[l].w[idx] = orig + step;
            let up = eval(&probe)?;
            probe.layers_mut()[l].w[idx] = orig - step;
            let down = eval(&probe)?;
            probe.layers_mut()[l].w[idx] = orig;
            grads.weights[l][idx] = central(up, down, step, l, idx)?;
        }
        for idx in 0..model.layers()[l].b.len() {
            let orig = probe.layers()[l].b[idx];
            probe.layers_mut()[l].b[idx] = orig + step;
            let up = eval(&probe)?;
            probe.layers_mut()[l].b[idx] = orig - step;
            let down = eval(&probe)?;
            probe.layers_mut()[l].b[idx] = orig;
            grads.biases[l][idx] = central(up, down, step, l, idx)?;
        }
    }
    Ok(grads)
}

fn central(up: f64, down: f64, step: f64, layer: usize, idx: usize) -> Result<f64> {
    if !up.is_finite() || !down.is_finite() {
        return Err(Error::NonFinite(format!("loss at layer {layer} index {idx}")));
    }
    Ok((up - down) / (2.0 * step))
}

fn check_labels(scores: &[f64], labels: &[u8]) -> Result<(usize, usize)> {
    if scores.len() != labels.len() {
        return Err(Error::dims("oracle (scores vs labels)", scores.len(), labels.len()));
    }
    let pos = labels.iter().filter(|&&l| l != 0).count();
    Ok((pos, labels.len() - pos))
}

/// Mann–Whitney pair counting: correct pairs plus half the ties, over all
/// positive/negative pairs.
pub fn pairwise_auroc(scores: &[f64], labels: &[u8]) -> Result<f64> {
    let (pos, neg) = check_labels(scores, labels)?;
    if pos == 0 || neg == 0 {
        return Err(Error::DegenerateLabels("AUROC needs both classes"));
    }
    let mut credit = 0.0f64;
    for (sp, _) in scores.iter().zip(labels).filter(|(_, &l)| l != 0) {
        for (sn, _) in scores.iter().zip(labels).filter(|(_, &l)| l == 0) {
            if sp > sn {
                credit += 1.0;
            } else if sp == sn {
                credit += 0.5;
            }
        }
    }
    Ok(credit / (pos as f64 * neg as f64))
}

/// `Σ_k (R_k − R_{k−1}) · P_k` over descending unique thresholds, each
/// threshold evaluated by a full scan.
pub fn stepwise_ap(scores: &[f64], labels: &[u8]) -> Result<f64> {
    let (pos, _) = check_labels(scores, labels)?;
    if pos == 0 {
        return Err(Error::DegenerateLabels("AP needs a positive"));
    }
    let mut thresholds: Vec<f64> = Vec::new();
    for &s in scores {
        if !thresholds.contains(&s) {
            thresholds.push(s);
        }
    }
    thresholds.sort_by(|a, b| b.partial_cmp(a).expect("finite scores"));
    let mut ap = 0.0;
    let mut prev_recall = 0.0;
    for t in thresholds {
        let tp = scores.iter().zip(labels).filter(|(&s, &l)| s >= t && l != 0).count();
        let fp = scores.iter().zip(labels).filter(|(&s, &l)| s >= t && l == 0).count();
        let recall = tp as f64 / pos as f64;
        ap += (recall - prev_recall) * (tp as f64 / (tp + fp) as f64);
        prev_recall = recall;
    }
    Ok(ap)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{ModelConfig, Variant};

    #[test]
    fn pair_counting_examples() {
        assert_eq!(pairwise_auroc(&[0.1, 0.4, 0.35, 0.8], &[0, 0, 1, 1]).unwrap(), 0.75);
        assert_eq!(pairwise_auroc(&[0.5, 0.5], &[0, 1]).unwrap(), 0.5);
        assert!(pairwise_auroc(&[0.5, 0.5], &[1, 1]).is_err());
    }

    #[test]
    fn stepwise_ap_example() {
        let ap = stepwise_ap(&[0.9, 0.8, 0.7], &[1, 0, 1]).unwrap();
        assert!((ap - (1.0 * 0.5 + (2.0 / 3.0) * 0.5)).abs() < 1e-15);
        assert!(stepwise_ap(&[0.9], &[0]).is_err());
    }

    #[test]
    fn fd_quadratic_and_constant() {
        let g = fd_gradient(|x| x[0] * x[0], &[3.0], 1e-5).unwrap();
        assert!((g[0] - 6.0).abs() < 1e-8);
        let g = fd_gradient(|_| 4.2, &[1.0, -2.0], 1e-5).unwrap();
        assert_eq!(g, vec![0.0, 0.0]);
        assert!(fd_gradient(|x| 1.0 / (x[0] - x[0]), &[1.0], 1e-5).is_err());
    }

    #[test]
    fn sequential_on_single_position_is_bias_path() {
        let cfg = ModelConfig::stack(2, 3, 2, 3, 1, Variant::Causal);
        let mut m = ArModel::<f64>::init(&cfg, 1).unwrap();
        m.layers_mut()[1].b = vec![0.25, -0.5];
        let f = Grid4::from_vec((1, 2, 1, 1), vec![3.0, 4.0]).unwrap();
        let seq = sequential_forward(&m, &f).unwrap();
        assert!(seq.sentinels_agree());
        assert_eq!(seq.per_sentinel[0].data(), &[0.25, -0.5]);
    }

    #[test]
    fn sequential_rejects_bidirectional() {
        let cfg = ModelConfig::stack(2, 3, 2, 3, 1, Variant::Bidirectional);
        let m = ArModel::<f64>::init(&cfg, 1).unwrap();
        assert!(matches!(
            sequential_forward(&m, &Grid4::zeros(1, 2, 3, 3)),
            Err(Error::OracleUndefined(_))
        ));
    }
}
