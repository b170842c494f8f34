// Standard vs dilated stacks, the bidirectional variant and the
// single-channel image-space setting.

use spatial_ar::nll::score_image;
use spatial_ar::synth::{gen_split, gen_test, SynthConfig};
use spatial_ar::train::{train, TrainConfig};
use spatial_ar::verify::future_context_users;
use spatial_ar::{ArModel, Grid4, ModelConfig, Variant};

pub fn run_example() -> spatial_ar::Result<()> {
    let standard = ModelConfig::default_for(384, false);
    let dilated = ModelConfig::default_for(384, true);
    println!(
        "default stacks: d=1 has {} parameters, d=4 has {}",
        standard.param_count(),
        dilated.param_count()
    );

    let f = Grid4::from_fn((1, 2, 6, 6), |_, c, i, j| ((c + 2 * i + 3 * j) % 7) as f64 - 3.0);
    for variant in [Variant::Causal, Variant::Bidirectional] {
        let m = ArModel::<f64>::init(&ModelConfig::stack(2, 4, 2, 3, 1, variant), 9)?;
        let used = future_context_users(&m, &f, (3, 3), 1.0)?;
        println!("{variant:?}: {} earlier predictions depend on (3, 3)", used.len());
    }

    // image-space: one channel per position
    let data = SynthConfig {
        height: 12,
        width: 12,
        dim: 1,
        n_train: 16,
        n_val: 4,
        n_test: 2,
        rect_min: 3,
        rect_max: 4,
        ..SynthConfig::reference()
    };
    let train_set = gen_split(&data, data.train_indices())?;
    let val_set = gen_split(&data, data.val_indices())?;
    for variant in [Variant::Causal, Variant::Bidirectional] {
        let mut cfg = TrainConfig::new(ModelConfig::stack(1, 8, 3, 3, 1, variant));
        cfg.max_epochs = 3;
        cfg.batch_size = 4;
        let out = train(&cfg, &train_set, &val_set)?;
        let (test, _) = gen_test(&data)?;
        let map = score_image(&out.model, &test[0])?;
        println!("D=1 {variant:?}: val NLL {:.2}, map {}x{}", out.best_val_nll, map.height(), map.width());
    }
    Ok(())
}

#[allow(dead_code)]
fn main() -> spatial_ar::Result<()> {
    run_example()
}
