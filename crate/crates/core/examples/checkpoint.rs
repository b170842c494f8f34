// Checkpoint round trip, and rejection of a file whose masked weights were
// tampered with.

use spatial_ar::checkpoint::{load_checkpoint, save_checkpoint, weight_byte_offset};
use spatial_ar::{ArModel, Error, ModelConfig};

pub fn run_example() -> spatial_ar::Result<()> {
    let model = ArModel::<f32>::init(&ModelConfig::default_for(16, true), 5)?;
    let bytes = save_checkpoint(&model);
    let back = load_checkpoint(&bytes)?;
    assert_eq!(back, model);
    println!("{} parameters, {} bytes, round trip exact", model.param_count(), bytes.len());

    // tap (2, 2) of a 3×3 causal_a kernel is masked
    let mut corrupted = bytes.clone();
    let at = weight_byte_offset(&corrupted, 0, 8)?;
    corrupted[at..at + 4].copy_from_slice(&0.5f32.to_le_bytes());
    match load_checkpoint(&corrupted) {
        Err(e @ Error::MaskViolation { .. }) => println!("rejected: {e}"),
        other => panic!("corruption not detected: {other:?}"),
    }
    Ok(())
}

#[allow(dead_code)]
fn main() -> spatial_ar::Result<()> {
    run_example()
}
