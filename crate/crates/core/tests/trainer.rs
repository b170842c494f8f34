use spatial_ar::nll::nll_constant;
use spatial_ar::train::{read_log, train, train_from_files, TrainConfig, CHECKPOINT_FILE, LOG_FILE};
use spatial_ar::io::{encode_fgrd, write_file, FeatureSet};
use spatial_ar::synth::{gen_split, SynthConfig};
use spatial_ar::{Grid4, ModelConfig, Variant};

#[test]
fn constant_data_drives_loss_to_the_floor() {
    // every image identical: the optimum predicts the data itself
    let img = Grid4::from_fn((1, 2, 5, 5), |_, c, i, j| ((c * 3 + i * 2 + j) % 5) as f32 * 0.4 - 0.8);
    let data = vec![img; 8];
    let mut cfg = TrainConfig::new(ModelConfig::stack(2, 16, 3, 3, 1, Variant::Causal));
    cfg.max_epochs = 300;
    cfg.batch_size = 8;
    cfg.optim.lr = 1e-2;
    cfg.optim.weight_decay = 0.0;
    cfg.seed = 3;
    let out = train(&cfg, &data, &data).unwrap();

    let mut best = f64::INFINITY;
    for rec in &out.log {
        let v = rec.val_nll.unwrap();
        assert_eq!(rec.is_best, v < best);
        best = best.min(v);
    }
    let floor = 25.0 * nll_constant(2);
    let first = out.log[0].val_nll.unwrap();
    let excess = out.best_val_nll - floor;
    assert!(excess < 0.05 * (first - floor), "excess {excess} of {}", first - floor);
}

fn write_splits(dir: &std::path::Path) -> (std::path::PathBuf, std::path::PathBuf) {
    let data = SynthConfig {
        height: 10,
        width: 10,
        dim: 2,
        n_train: 12,
        n_val: 4,
        n_test: 0,
        rect_min: 2,
        rect_max: 3,
        ..SynthConfig::reference()
    };
    let t = dir.join("train.fgrd");
    let v = dir.join("val.fgrd");
    write_file(&t, &encode_fgrd(&FeatureSet::from_grids(&gen_split(&data, data.train_indices()).unwrap()).unwrap())).unwrap();
    write_file(&v, &encode_fgrd(&FeatureSet::from_grids(&gen_split(&data, data.val_indices()).unwrap()).unwrap())).unwrap();
    (t, v)
}

fn strip_wall(path: &std::path::Path) -> Vec<String> {
    read_log(path)
        .unwrap()
        .into_iter()
        .map(|mut r| {
            r.wall_ms = 0;
            serde_json::to_string(&r).unwrap()
        })
        .collect()
}

#[test]
fn file_runs_are_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let (t, v) = write_splits(dir.path());
    let run = |name: &str| {
        let mut cfg = TrainConfig::new(ModelConfig::stack(2, 6, 2, 3, 2, Variant::Causal));
        cfg.max_epochs = 4;
        cfg.batch_size = 5;
        cfg.eval_every = 2;
        cfg.seed = 11;
        cfg.train_data = Some(t.clone());
        cfg.val_data = Some(v.clone());
        cfg.out_dir = Some(dir.path().join(name));
        train_from_files(&cfg).unwrap();
        dir.path().join(name)
    };
    let (a, b) = (run("a"), run("b"));
    assert_eq!(strip_wall(&a.join(LOG_FILE)), strip_wall(&b.join(LOG_FILE)));
    assert_eq!(
        std::fs::read(a.join(CHECKPOINT_FILE)).unwrap(),
        std::fs::read(b.join(CHECKPOINT_FILE)).unwrap()
    );
    let log = read_log(&a.join(LOG_FILE)).unwrap();
    assert_eq!(log.len(), 4);
    assert!(log[0].val_nll.is_none() && log[1].val_nll.is_some() && log[3].val_nll.is_some());
}

#[test]
fn one_epoch_selects_epoch_one() {
    let dir = tempfile::tempdir().unwrap();
    let (t, v) = write_splits(dir.path());
    let mut cfg = TrainConfig::new(ModelConfig::stack(2, 4, 2, 3, 1, Variant::Causal));
    cfg.max_epochs = 1;
    cfg.train_data = Some(t);
    cfg.val_data = Some(v);
    cfg.out_dir = Some(dir.path().join("run"));
    let out = train_from_files(&cfg).unwrap();
    assert_eq!(out.best_epoch, 1);
    let log = read_log(&dir.path().join("run").join(LOG_FILE)).unwrap();
    assert_eq!(log.len(), 1);
    assert!(log[0].is_best);
}
