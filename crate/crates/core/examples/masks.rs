// Kernel masks and how dilation spreads them over the grid.

use spatial_ar::{build_mask, MaskKind, RasterOrder};

pub fn run_example() -> spatial_ar::Result<()> {
    for kind in MaskKind::ALL {
        println!("{kind} (K=3):\n{}", build_mask(kind, 3)?);
    }
    let a = build_mask(MaskKind::CausalA, 5)?;
    let b = build_mask(MaskKind::CausalB, 5)?;
    println!("K=5: causal_a keeps {} taps, causal_b keeps {}", a.ones(), b.ones());

    // offsets read by a dilated first layer
    let d = 4isize;
    let r = 1isize;
    let mask = build_mask(MaskKind::CausalA, 3)?;
    let mut offsets = Vec::new();
    for u in 0..3 {
        for v in 0..3 {
            if mask.get(u, v) {
                let (dy, dx) = (d * (u as isize - r), d * (v as isize - r));
                assert!(RasterOrder::offset_precedes(dy, dx));
                offsets.push((dy, dx));
            }
        }
    }
    println!("causal_a with d={d} reads offsets {offsets:?}");
    Ok(())
}

#[allow(dead_code)]
fn main() -> spatial_ar::Result<()> {
    run_example()
}
