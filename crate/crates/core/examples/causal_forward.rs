// One parallel forward pass equals position-by-position evaluation, and a
// perturbation only moves predictions that come later in raster order.

use spatial_ar::oracle::{causality_violations, changed_positions, sequential_forward};
use spatial_ar::{ArModel, Grid4, ModelConfig, Variant};

pub fn run_example() -> spatial_ar::Result<()> {
    let config = ModelConfig::stack(3, 8, 3, 3, 2, Variant::Causal);
    let mut model = ArModel::<f64>::init(&config, 42)?;
    for layer in model.layers_mut() {
        layer.b.iter_mut().for_each(|b| *b = 0.1);
    }
    let f = Grid4::from_fn((1, 3, 6, 7), |_, c, i, j| ((c * 13 + i * 7 + j * 3) % 10) as f64 / 10.0 - 0.45);

    let mu = model.forward(&f)?;
    let seq = sequential_forward(&model, &f)?;
    println!(
        "{} parameters; sequential vs parallel max diff {}; sentinels agree: {}",
        model.param_count(),
        seq.max_abs_diff(&mu),
        seq.sentinels_agree()
    );

    let q = (2, 3);
    let moved = changed_positions(&model, &f, q, 1.0)?;
    let bad = causality_violations(&model, &f, q, 1.0)?;
    println!("perturbing {q:?} moves {} later positions, {} earlier ones", moved.len(), bad.len());
    assert!(bad.is_empty());
    Ok(())
}

#[allow(dead_code)]
fn main() -> spatial_ar::Result<()> {
    run_example()
}
