//! Pixel-level AUROC and average precision, and bilinear upsampling of
//! patch-level maps to label resolution.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nll::AnomalyMap;

/// Bilinear resize with half-pixel centers:
/// `src = (dst + 0.5) · in / out − 0.5`, clamped to `[0, in − 1]`.
pub fn upsample_bilinear(map: &AnomalyMap, out_h: usize, out_w: usize) -> Result<AnomalyMap> {
    if out_h == 0 || out_w == 0 {
        return Err(Error::InvalidConfig(format!(
            "upsample target {out_h}x{out_w} is empty"
        )));
    }
    let (in_h, in_w) = (map.height(), map.width());
    if in_h == 0 || in_w == 0 {
        return Err(Error::Empty("anomaly map"));
    }
    let taps = |out: usize, inp: usize| -> Vec<(usize, usize, f64)> {
        let scale = inp as f64 / out as f64;
        (0..out)
            .map(|x| {
                let src = ((x as f64 + 0.5) * scale - 0.5).clamp(0.0, (inp - 1) as f64);
                let x0 = src.floor() as usize;
                let x1 = (x0 + 1).min(inp - 1);
                (x0, x1, src - x0 as f64)
            })
            .collect()
    };
    let rows = taps(out_h, in_h);
    let cols = taps(out_w, in_w);
    let mut out = Vec::with_capacity(out_h * out_w);
    for &(r0, r1, fy) in &rows {
        for &(c0, c1, fx) in &cols {
            let v00 = map.get(r0, c0) as f64;
            let v01 = map.get(r0, c1) as f64;
            let v10 = map.get(r1, c0) as f64;
            let v11 = map.get(r1, c1) as f64;
            let top = v00 + (v01 - v00) * fx;
            let bottom = v10 + (v11 - v10) * fx;
            out.push((top + (bottom - top) * fy) as f32);
        }
    }
    AnomalyMap::new(out_h, out_w, out)
}

fn counts(labels: &[u8]) -> (usize, usize) {
    let pos = labels.iter().filter(|&&l| l != 0).count();
    (pos, labels.len() - pos)
}

fn check_inputs(scores: &[f64], labels: &[u8]) -> Result<()> {
    if scores.len() != labels.len() {
        return Err(Error::dims("metrics (scores vs labels)", scores.len(), labels.len()));
    }
    if let Some(v) = scores.iter().find(|v| !v.is_finite()) {
        return Err(Error::NonFinite(format!("score {v}")));
    }
    Ok(())
}

/// Indices sorted by score, ascending.
fn argsort(scores: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    idx
}

/// Area under the ROC curve via the rank-sum statistic, ties at average rank.
pub fn auroc(scores: &[f64], labels: &[u8]) -> Result<f64> {
    check_inputs(scores, labels)?;
    let (n_pos, n_neg) = counts(labels);
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::DegenerateLabels("AUROC needs both classes"));
    }
    let order = argsort(scores);
    let mut rank_sum = 0.0f64;
    let mut start = 0;
    while start < order.len() {
        let mut end = start + 1;
        while end < order.len() && scores[order[end]] == scores[order[start]] {
            end += 1;
        }
        // 1-based ranks start+1 ..= end share their mean
        let avg = (start + 1 + end) as f64 / 2.0;
        let pos_in_group = order[start..end].iter().filter(|&&i| labels[i] != 0).count();
        rank_sum += avg * pos_in_group as f64;
        start = end;
    }
    let np = n_pos as f64;
    Ok((rank_sum - np * (np + 1.0) / 2.0) / (np * n_neg as f64))
}

/// Average precision: step integration over descending unique thresholds.
pub fn aupr(scores: &[f64], labels: &[u8]) -> Result<f64> {
    check_inputs(scores, labels)?;
    let (n_pos, _) = counts(labels);
    if n_pos == 0 {
        return Err(Error::DegenerateLabels("AUPR needs at least one positive"));
    }
    let mut order = argsort(scores);
    order.reverse();
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut prev_recall = 0.0f64;
    let mut ap = 0.0f64;
    let mut start = 0;
    while start < order.len() {
        let mut end = start + 1;
        while end < order.len() && scores[order[end]] == scores[order[start]] {
            end += 1;
        }
        for &i in &order[start..end] {
            if labels[i] != 0 {
                tp += 1;
            } else {
                fp += 1;
            }
        }
        let recall = tp as f64 / n_pos as f64;
        let precision = tp as f64 / (tp + fp) as f64;
        ap += (recall - prev_recall) * precision;
        prev_recall = recall;
        start = end;
    }
    Ok(ap)
}

/// How per-pixel results combine across test images.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Pooling {
    /// One curve over every pixel of every image.
    #[default]
    Pooled,
    /// Mean of per-image metrics; images lacking a class are skipped.
    PerImage,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub auroc: f64,
    pub aupr: f64,
    pub n_pos: usize,
    pub n_neg: usize,
    pub n_images: usize,
}

/// Labelled pixel scores for one image; maps are upsampled to label
/// resolution when sizes differ.
pub fn pixel_scores(map: &AnomalyMap, label_h: usize, label_w: usize) -> Result<Vec<f64>> {
    let m = if (map.height(), map.width()) == (label_h, label_w) {
        map.clone()
    } else {
        upsample_bilinear(map, label_h, label_w)?
    };
    Ok(m.scores().iter().map(|&v| v as f64).collect())
}

/// AUROC/AUPR of anomaly maps against `label_h × label_w` binary masks.
pub fn evaluate(
    maps: &[AnomalyMap],
    labels: &[Vec<u8>],
    label_h: usize,
    label_w: usize,
    pooling: Pooling,
) -> Result<EvalReport> {
    if maps.len() != labels.len() {
        return Err(Error::dims("evaluate (image count)", labels.len(), maps.len()));
    }
    if maps.is_empty() {
        return Err(Error::Empty("test set"));
    }
    let mut all_scores = Vec::new();
    let mut all_labels = Vec::new();
    let (mut roc_sum, mut roc_n, mut pr_sum, mut pr_n) = (0.0, 0usize, 0.0, 0usize);
    for (map, lab) in maps.iter().zip(labels) {
        if lab.len() != label_h * label_w {
            return Err(Error::dims("evaluate (mask size)", label_h * label_w, lab.len()));
        }
        let s = pixel_scores(map, label_h, label_w)?;
        if pooling == Pooling::PerImage {
            let (p, n) = counts(lab);
            if p > 0 {
                pr_sum += aupr(&s, lab)?;
                pr_n += 1;
                if n > 0 {
                    roc_sum += auroc(&s, lab)?;
                    roc_n += 1;
                }
            }
        }
        all_scores.extend(s);
        all_labels.extend_from_slice(lab);
    }
    let (n_pos, n_neg) = counts(&all_labels);
    let (auroc_v, aupr_v) = match pooling {
        Pooling::Pooled => (auroc(&all_scores, &all_labels)?, aupr(&all_scores, &all_labels)?),
        Pooling::PerImage => {
            if roc_n == 0 || pr_n == 0 {
                return Err(Error::DegenerateLabels("no image has both classes"));
            }
            (roc_sum / roc_n as f64, pr_sum / pr_n as f64)
        }
    };
    Ok(EvalReport {
        auroc: auroc_v,
        aupr: aupr_v,
        n_pos,
        n_neg,
        n_images: maps.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn upsample_row_example() {
        let m = AnomalyMap::new(1, 2, vec![0.0, 1.0]).unwrap();
        let up = upsample_bilinear(&m, 1, 4).unwrap();
        assert_eq!(up.scores(), &[0.0, 0.25, 0.75, 1.0]);
    }

    #[test]
    fn upsample_constant_and_identity() {
        let c = AnomalyMap::new(2, 3, vec![4.5; 6]).unwrap();
        assert!(upsample_bilinear(&c, 7, 9).unwrap().scores().iter().all(|&v| v == 4.5));
        let m = AnomalyMap::new(2, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(upsample_bilinear(&m, 2, 2).unwrap(), m);
        assert!(upsample_bilinear(&m, 0, 2).is_err());
    }

    #[test]
    fn auroc_cases() {
        assert_eq!(auroc(&[0.1, 0.4, 0.35, 0.8], &[0, 0, 1, 1]).unwrap(), 0.75);
        assert_eq!(auroc(&[0.5, 0.5], &[0, 1]).unwrap(), 0.5);
        assert_eq!(auroc(&[0.1, 0.2, 0.8, 0.9], &[0, 0, 1, 1]).unwrap(), 1.0);
        assert_eq!(auroc(&[1.0; 6], &[0, 1, 0, 1, 1, 0]).unwrap(), 0.5);
        assert!(matches!(auroc(&[0.1, 0.2], &[1, 1]), Err(Error::DegenerateLabels(_))));
        assert!(auroc(&[f64::NAN, 0.2], &[0, 1]).is_err());
    }

    #[test]
    fn aupr_cases() {
        let ap = aupr(&[0.9, 0.8, 0.7], &[1, 0, 1]).unwrap();
        assert!((ap - 5.0 / 6.0).abs() < 1e-15);
        assert_eq!(aupr(&[0.9, 0.8, 0.1, 0.0], &[1, 1, 0, 0]).unwrap(), 1.0);
        assert_eq!(aupr(&[0.9, 0.8, 0.7, 0.1], &[0, 0, 0, 1]).unwrap(), 0.25);
        assert!(matches!(aupr(&[0.3], &[0]), Err(Error::DegenerateLabels(_))));
    }

    #[test]
    fn evaluate_pooled_and_per_image() {
        let maps = vec![
            AnomalyMap::new(1, 2, vec![0.5, 1.0]).unwrap(),
            AnomalyMap::new(1, 2, vec![0.2, 0.1]).unwrap(),
        ];
        let labels = vec![vec![0, 1], vec![1, 0]];
        let r = evaluate(&maps, &labels, 1, 2, Pooling::PerImage).unwrap();
        assert_eq!((r.auroc, r.aupr), (1.0, 1.0));
        let r = evaluate(&maps, &labels, 1, 2, Pooling::Pooled).unwrap();
        assert_eq!((r.n_pos, r.n_neg, r.n_images), (2, 2, 2));
        assert_eq!(r.auroc, 0.75);
    }

    #[test]
    fn evaluate_upsamples_to_label_resolution() {
        let maps = vec![AnomalyMap::new(1, 2, vec![0.0, 1.0]).unwrap()];
        let labels = vec![vec![0, 0, 1, 1]];
        let r = evaluate(&maps, &labels, 1, 4, Pooling::Pooled).unwrap();
        assert_eq!(r.auroc, 1.0);
    }
}
