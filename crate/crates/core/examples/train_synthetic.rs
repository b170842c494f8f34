// Trains a small causal model on generated smooth grids.

use spatial_ar::synth::{gen_split, SynthConfig};
use spatial_ar::train::{train_with, TrainConfig};
use spatial_ar::{ModelConfig, Variant};

pub fn run_example() -> spatial_ar::Result<()> {
    let data = SynthConfig {
        height: 16,
        width: 16,
        dim: 4,
        n_train: 32,
        n_val: 8,
        n_test: 0,
        rect_min: 3,
        rect_max: 6,
        ..SynthConfig::reference()
    };
    let train = gen_split(&data, data.train_indices())?;
    let val = gen_split(&data, data.val_indices())?;

    let mut config = TrainConfig::new(ModelConfig::stack(4, 16, 3, 3, 1, Variant::Causal));
    config.batch_size = 8;
    config.max_epochs = 6;
    config.optim.lr = 5e-3;
    config.seed = 1;
    let outcome = train_with(
        &config,
        &train,
        &val,
        |rec| {
            println!(
                "epoch {:>2}  train {:>9.2}  val {:>9.2}{}",
                rec.epoch,
                rec.train_loss,
                rec.val_nll.unwrap_or(f64::NAN),
                if rec.is_best { "  *" } else { "" }
            );
            Ok(())
        },
        |_| Ok(()),
    )?;
    println!("best epoch {} with val NLL {:.2}", outcome.best_epoch, outcome.best_val_nll);
    assert!(outcome.best_val_nll < outcome.log[0].val_nll.unwrap_or(f64::INFINITY) + 1e-9);
    Ok(())
}

#[allow(dead_code)]
fn main() -> spatial_ar::Result<()> {
    run_example()
}
