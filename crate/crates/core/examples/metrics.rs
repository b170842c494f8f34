// Pixel AUROC and average precision, with patch maps upsampled to the
// label resolution.

use spatial_ar::metrics::{aupr, auroc, evaluate, upsample_bilinear, Pooling};
use spatial_ar::oracle::{pairwise_auroc, stepwise_ap};
use spatial_ar::AnomalyMap;

pub fn run_example() -> spatial_ar::Result<()> {
    let scores = [0.1, 0.4, 0.35, 0.8, 0.8];
    let labels = [0, 0, 1, 1, 0];
    println!(
        "auroc {:.4} (pairs {:.4}), ap {:.4} (sweep {:.4})",
        auroc(&scores, &labels)?,
        pairwise_auroc(&scores, &labels)?,
        aupr(&scores, &labels)?,
        stepwise_ap(&scores, &labels)?
    );

    let patch = AnomalyMap::new(2, 2, vec![0.0, 1.0, 0.0, 3.0])?;
    let up = upsample_bilinear(&patch, 4, 4)?;
    for row in up.scores().chunks(4) {
        println!("{row:?}");
    }

    let label = vec![0, 0, 0, 1, 0, 0, 1, 1, 0, 0, 0, 1, 0, 0, 1, 1];
    let report = evaluate(&[patch], &[label], 4, 4, Pooling::Pooled)?;
    println!("{}", serde_json::to_string(&report)?);
    Ok(())
}

#[allow(dead_code)]
fn main() -> spatial_ar::Result<()> {
    run_example()
}
