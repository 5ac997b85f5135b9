use icedual::dataset::PatchTriplet;
use icedual::evaluation::{confusion, metrics};
use icedual::inference::{binarize, predict_whole};
use icedual::model::{build, ModelConfig, ModelKind, Preprocess};
use icedual::nn::ClassWeights;
use icedual::synth::{generate, SynthParams};
use icedual::training::{prepare, train, TrainConfig};
use icedual::Error;

fn scenes(n: usize, ice: f64) -> Vec<PatchTriplet> {
    (0..n)
        .map(|i| {
            let p = SynthParams {
                seed: 100 + i as u64,
                size: 48,
                ice_fraction: ice,
                smoothness: 2,
                origin_x: i as f64 * 10_000.0,
                ..SynthParams::default()
            };
            generate(&p).unwrap().triplet(&format!("s{i}")).unwrap()
        })
        .collect()
}

fn small(kind: ModelKind) -> ModelConfig {
    let mut cfg = ModelConfig::new(kind);
    cfg.patch_s = 48;
    cfg.depth = 2;
    cfg.base_width = 8;
    cfg
}

#[test]
fn single_batch_overfits() {
    let cfg = small(ModelKind::MsiOnly);
    let data = prepare(&cfg, &Preprocess::default(), &scenes(2, 0.5)).unwrap();
    let mut g = build::<f32>(&cfg).unwrap();
    let tc = TrainConfig {
        learning_rate: 1e-2,
        batch_size: 2,
        max_epochs: 200,
        patience: 200,
        augmentation: vec![],
        ..TrainConfig::default()
    };
    let h = train(&mut g, &data, &data, &tc).unwrap();
    let best = h.train_losses().into_iter().fold(f64::INFINITY, f64::min);
    assert!(best < 0.01, "lowest train loss {best}");
}

#[test]
fn same_seed_same_history() {
    let cfg = small(ModelKind::VisualIced);
    let data = prepare(&cfg, &Preprocess::default(), &scenes(6, 0.5)).unwrap();
    let tc = TrainConfig {
        batch_size: 2,
        max_epochs: 3,
        seed: 4,
        ..TrainConfig::default()
    };
    let run = || {
        let mut g = build::<f32>(&cfg).unwrap();
        let h = train(&mut g, &data[..4], &data[4..], &tc).unwrap();
        (h, g.state())
    };
    let (h1, s1) = run();
    let (h2, s2) = run();
    assert!(h1.same_trajectory(&h2));
    assert_eq!(s1, s2);
    let min = h1.val_losses().into_iter().fold(f64::INFINITY, f64::min);
    assert_eq!(h1.best_val_loss, min);
}

#[test]
fn nan_loss_names_the_batch() {
    let cfg = small(ModelKind::MsiOnly);
    let mut data = prepare(&cfg, &Preprocess::default(), &scenes(2, 0.5)).unwrap();
    data[1].input.tensors[0].data_mut()[5] = f32::NAN;
    let mut g = build::<f32>(&cfg).unwrap();
    let tc = TrainConfig {
        batch_size: 1,
        max_epochs: 1,
        augmentation: vec![],
        ..TrainConfig::default()
    };
    let expected = data[1].provenance.clone();
    match train(&mut g, &data, &data, &tc) {
        Err(Error::NonFiniteLoss { provenance: p, .. }) | Err(Error::NonFiniteBatchGradient { provenance: p, .. }) => {
            assert_eq!(p, expected)
        }
        other => panic!("expected a non-finite loss, got {other:?}"),
    }
}

#[test]
fn ice_weight_raises_ice_recall() {
    let cfg = small(ModelKind::SarOnly);
    let triplets = scenes(4, 0.15);
    let pre = Preprocess::default();
    let data = prepare(&cfg, &pre, &triplets).unwrap();
    let recall = |w: ClassWeights| {
        let mut g = build::<f32>(&cfg).unwrap();
        let tc = TrainConfig {
            batch_size: 4,
            max_epochs: 5,
            patience: 5,
            class_weights: w,
            augmentation: vec![],
            seed: 1,
            ..TrainConfig::default()
        };
        train(&mut g, &data, &data, &tc).unwrap();
        let mut c = icedual::evaluation::ConfusionCounts::default();
        for t in &triplets {
            let conf = predict_whole(&g, &pre, &t.sar, &t.msi).unwrap();
            let truth = icedual::raster::resample(&t.label, 80.0, icedual::raster::ResampleMethod::Nearest).unwrap();
            c = c.add(&confusion(&binarize(&conf, 0.5).unwrap(), &truth, None).unwrap());
        }
        metrics(&c).producer_accuracy.unwrap()
    };
    let weighted = recall(ClassWeights::new(1.0, 10.0));
    let plain = recall(ClassWeights::BALANCED);
    assert!(weighted > plain, "ice recall {weighted} vs {plain}");
}
