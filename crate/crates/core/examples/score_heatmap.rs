// Scores anomalous test grids and writes NLL maps plus PGM heatmaps.

use spatial_ar::io::{decode_amap, encode_amap, encode_pgm, write_file};
use spatial_ar::nll::score_images;
use spatial_ar::synth::{gen_split, gen_test, SynthConfig};
use spatial_ar::train::{train, TrainConfig};
use spatial_ar::{ModelConfig, Variant};

pub fn run_example() -> spatial_ar::Result<()> {
    let data = SynthConfig {
        height: 16,
        width: 16,
        dim: 4,
        n_train: 32,
        n_val: 8,
        n_test: 3,
        rect_min: 4,
        rect_max: 6,
        ..SynthConfig::reference()
    };
    let mut config = TrainConfig::new(ModelConfig::stack(4, 16, 3, 3, 1, Variant::Causal));
    config.batch_size = 8;
    config.max_epochs = 8;
    config.optim.lr = 1e-2;
    let model = train(
        &config,
        &gen_split(&data, data.train_indices())?,
        &gen_split(&data, data.val_indices())?,
    )?
    .model;

    let (test, masks) = gen_test(&data)?;
    model.reset_forward_count();
    let maps = score_images(&model, &test)?;
    println!("{} forward passes for {} images", model.forward_count(), test.len());

    let dir = tempfile::tempdir().map_err(|e| spatial_ar::Error::InvalidConfig(e.to_string()))?;
    let amap = dir.path().join("scores.amap");
    write_file(&amap, &encode_amap(&maps)?)?;
    for (i, (map, mask)) in maps.iter().zip(&masks).enumerate() {
        write_file(&dir.path().join(format!("map_{i}.pgm")), &encode_pgm(map))?;
        let inside: Vec<bool> = mask.iter().map(|&m| m != 0).collect();
        let outside: Vec<bool> = inside.iter().map(|b| !b).collect();
        println!(
            "image {i}: mean NLL inside anomaly {:.1}, outside {:.1}",
            map.masked_mean(&inside).unwrap_or(f64::NAN),
            map.masked_mean(&outside).unwrap_or(f64::NAN)
        );
    }
    let back = decode_amap(&std::fs::read(&amap).expect("just written"))?;
    assert_eq!(back, maps);
    Ok(())
}

#[allow(dead_code)]
fn main() -> spatial_ar::Result<()> {
    run_example()
}
