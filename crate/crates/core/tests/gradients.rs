use icedual::model::{build, ModelConfig, ModelKind, OutputGrid};
use icedual::nn::gradcheck::{check_layer, max_relative_error, numeric_gradient};
use icedual::nn::{weighted_bce, ClassWeights, LayerKind, Mode, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[test]
fn every_layer_kind_matches_finite_differences() {
    for kind in LayerKind::ALL {
        for seed in 0..5 {
            let r = check_layer(kind, seed).unwrap();
            assert!(r.worst() < 1e-4, "{kind:?} seed {seed}: {r:?}");
        }
    }
}

#[test]
fn bce_gradient() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let p: Vec<f64> = (0..50).map(|_| rng.random_range(0.05..0.95)).collect();
    let t: Vec<f64> = (0..50).map(|i| (i % 3 == 0) as u8 as f64).collect();
    let target = Tensor::from_vec([1, 1, 5, 10], t).unwrap();
    let w = ClassWeights::new(0.1, 10.0);
    let pred = Tensor::from_vec([1, 1, 5, 10], p.clone()).unwrap();
    let (_, g) = weighted_bce(&pred, &target, w).unwrap();
    let numeric = numeric_gradient(
        |v| weighted_bce(&Tensor::from_vec([1, 1, 5, 10], v.to_vec()).unwrap(), &target, w).unwrap().0,
        &p,
        1e-6,
    );
    assert!(max_relative_error(g.data(), &numeric, 1e-6) < 1e-5);
}

/// End-to-end wiring check: loss gradients through a whole small network,
/// skip connections included, for a sample of parameters. A step can cross a
/// relu kink somewhere in the network, so a small share of outliers is allowed.
#[test]
fn whole_network_gradients() {
    for kind in ModelKind::ALL {
        let mut cfg = ModelConfig::new(kind);
        cfg.patch_s = 12;
        cfg.depth = 1;
        cfg.base_width = 4;
        cfg.init_seed = 3;
        if kind == ModelKind::VisualIced {
            cfg.output_grid = OutputGrid::Sar80m;
        }
        let mut g = build::<f64>(&cfg).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let xs: Vec<Tensor<f64>> = g
            .inputs()
            .iter()
            .map(|&(_, c, grid)| {
                let s = match grid {
                    icedual::model::InputGrid::Sar => 12,
                    icedual::model::InputGrid::Msi => 4,
                };
                Tensor::from_vec([2, c, s, s], (0..2 * c * s * s).map(|_| rng.random_range(-1.0..1.0)).collect())
                    .unwrap()
            })
            .collect();
        let refs: Vec<&Tensor<f64>> = xs.iter().collect();
        let y = g.forward(&refs, Mode::Train).unwrap();
        let target = Tensor::from_vec(
            y.shape(),
            (0..y.len()).map(|_| rng.random_range(0..2) as f64).collect(),
        )
        .unwrap();
        let w = ClassWeights::new(1.0, 3.0);
        let (_, dy) = weighted_bce(&y, &target, w).unwrap();
        g.zero_grad();
        g.backward(&dy).unwrap();

        let probe = g.clone();
        let loss = |net: &icedual::model::ModelGraph<f64>| {
            let mut net = net.clone();
            let y = net.forward(&refs, Mode::Train).unwrap();
            weighted_bce(&y, &target, w).unwrap().0
        };
        let params = g.params();
        let mut checked = 0;
        let mut bad = 0;
        for (pi, p) in params.iter().enumerate() {
            for idx in [0, p.len() / 2, p.len() - 1] {
                let numeric = numeric_gradient(
                    |v| {
                        let mut net = probe.clone();
                        net.params_mut()[pi].value[idx] = v[0];
                        loss(&net)
                    },
                    &[p.value[idx]],
                    1e-5,
                );
                checked += 1;
                if max_relative_error(&[p.grad[idx]], &numeric, 1e-6) > 1e-4 {
                    bad += 1;
                }
            }
        }
        assert!(bad * 20 <= checked, "{kind}: {bad} of {checked} parameter gradients disagree");
    }
}
