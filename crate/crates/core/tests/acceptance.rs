//! One pass/fail line per acceptance criterion. Run with
//! `cargo test -p icedual --test acceptance`.

use std::collections::BTreeMap;
use std::time::Instant;

use icedual::dataset::split;
use icedual::evaluation::{band_fraction, confusion, mcnemar, metrics, summarize, ConfusionCounts, McNemar};
use icedual::explain::{permute_and_predict, Original};
use icedual::inference::{binarize, predict_tiled, predict_whole, spans, Tiling};
use icedual::model::{build, verify_shapes, ModelConfig, ModelKind, OutputGrid, Preprocess, ShapeReport};
use icedual::nn::gradcheck::check_layer;
use icedual::nn::LayerKind;
use icedual::raster::{resample, GeoTransform, Raster, ResampleMethod};
use icedual::sic::downscale_sic;
use icedual::synth::{corpus_params, generate, scene_id, CorpusRanges, SynthParams, SynthScene};
use icedual::training::{prepare, train, TrainConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

fn report(n: usize, name: &str, start: Instant, o: &Outcome) -> bool {
    println!(
        "[{}] {n:>2} {name}: {} ({:.1}s)",
        if o.pass { "PASS" } else { "FAIL" },
        o.detail,
        start.elapsed().as_secs_f64()
    );
    o.pass
}

// ---------------------------------------------------------------- 1

fn ratio(num: u64, den: u64) -> Option<f64> {
    (den > 0).then(|| num as f64 / den as f64)
}

fn close(a: Option<f64>, b: Option<f64>, tol: f64) -> bool {
    match (a, b) {
        (Some(x), Some(y)) => (x - y).abs() <= tol,
        (None, None) => true,
        _ => false,
    }
}

fn metric_exactness() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut cases: Vec<[u64; 4]> = vec![[9, 0, 1, 0], [50, 50, 0, 0], [0, 7, 0, 3]];
    for _ in 0..20 {
        cases.push([0; 4].map(|_| rng.random_range(0..10_000)));
    }
    let mut worst = 0.0f64;
    let mut bad = Vec::new();
    for &[tp, tn, fp, fn_] in &cases {
        let m = metrics(&ConfusionCounts::new(tp, tn, fp, fn_));
        let ba = ratio(tp + tn, tp + tn + fp + fn_);
        let ua = ratio(tp, tp + fp);
        let pa = ratio(tp, tp + fn_);
        // Harmonic mean of U_A and P_A written as counts; 0/0 when both are 0.
        let f1 = if ua.is_some() && pa.is_some() && tp > 0 {
            ratio(2 * tp, 2 * tp + fp + fn_)
        } else {
            None
        };
        for (got, want) in [(m.binary_accuracy, ba), (m.user_accuracy, ua), (m.producer_accuracy, pa), (m.f1, f1)] {
            if !close(got, want, 1e-12) {
                bad.push(format!("{tp}/{tn}/{fp}/{fn_}: {got:?} vs {want:?}"));
            }
            if let (Some(g), Some(w)) = (got, want) {
                worst = worst.max((g - w).abs());
            }
        }
        if let (Some(u), Some(p), Some(f)) = (m.user_accuracy, m.producer_accuracy, m.f1) {
            if f < u.min(p) - 1e-15 || f > u.max(p) + 1e-15 {
                bad.push(format!("{tp}/{tn}/{fp}/{fn_}: F1 outside [U_A, P_A]"));
            }
        }
        let swapped = metrics(&ConfusionCounts::new(tn, tp, fn_, fp));
        if swapped.binary_accuracy != m.binary_accuracy {
            bad.push(format!("{tp}/{tn}/{fp}/{fn_}: B_A not swap invariant"));
        }
    }
    let first = metrics(&ConfusionCounts::new(9, 0, 1, 0));
    let examples = close(first.f1, Some(18.0 / 19.0), 1e-12)
        && metrics(&ConfusionCounts::new(50, 50, 0, 0)).f1 == Some(1.0)
        && metrics(&ConfusionCounts::new(0, 7, 0, 3)).user_accuracy.is_none();
    if !examples {
        bad.push("listed examples".into());
    }
    outcome(
        bad.is_empty(),
        if bad.is_empty() {
            format!("{} matrices, max abs error {worst:.1e}", cases.len())
        } else {
            bad.join("; ")
        },
    )
}

// ---------------------------------------------------------------- 2

/// Upper tail of chi-square(1) by Simpson integration. With x = u^2 the
/// density becomes sqrt(2/pi) exp(-u^2/2) du, which is smooth at the origin.
fn chi2_1_tail(m: f64) -> f64 {
    let (a, b) = (m.sqrt(), m.sqrt() + 40.0);
    let n = 200_000;
    let h = (b - a) / n as f64;
    let f = |u: f64| (2.0 / std::f64::consts::PI).sqrt() * (-u * u / 2.0).exp();
    let mut s = f(a) + f(b);
    for i in 1..n {
        s += f(a + i as f64 * h) * if i % 2 == 1 { 4.0 } else { 2.0 };
    }
    s * h / 3.0
}

fn mcnemar_oracle() -> Outcome {
    let mut bad = Vec::new();
    let t = McNemar::from_counts(30, 10);
    if t.statistic != Some(10.0) {
        bad.push(format!("M = {:?}", t.statistic));
    }
    let oracle = chi2_1_tail(10.0);
    let err = (t.p_value.unwrap_or(f64::NAN) - oracle).abs();
    if !(err < 1e-6) {
        bad.push(format!("p {:?} vs oracle {oracle}", t.p_value));
    }
    let mut worst = err;
    for (tv, fv) in [(12, 5), (100, 80), (3, 0), (41, 70)] {
        let m = McNemar::from_counts(tv, fv);
        let e = (m.p_value.unwrap() - chi2_1_tail(m.statistic.unwrap())).abs();
        worst = worst.max(e);
        let flipped = McNemar::from_counts(fv, tv);
        if flipped.statistic != m.statistic || flipped.p_value != m.p_value || e >= 1e-6 {
            bad.push(format!("({tv}, {fv})"));
        }
    }
    let even = McNemar::from_counts(20, 20);
    if even.statistic != Some(0.0) || even.p_value != Some(1.0) {
        bad.push("T_v = F_v".into());
    }
    let none = McNemar::from_counts(0, 0);
    if none.statistic.is_some() || none.p_value.is_some() {
        bad.push("no disagreements".into());
    }
    // Only disagreements count: flipping pixels where both predictions agree
    // leaves M unchanged.
    let grid = |v: Vec<f32>| Raster::from_data(v.len(), 1, 1, v, GeoTransform::new(0.0, 0.0, 1.0, "x").unwrap()).unwrap();
    let reference = grid(vec![1., 1., 1., 0., 0., 0., 1., 0.]);
    let a = grid(vec![1., 0., 1., 0., 1., 1., 1., 0.]);
    let b = grid(vec![0., 1., 1., 1., 1., 0., 1., 0.]);
    let a2 = grid(vec![1., 0., 0., 0., 1., 1., 0., 1.]);
    let b2 = grid(vec![0., 1., 0., 1., 1., 0., 0., 1.]);
    match (mcnemar(&a, &b, &reference, None), mcnemar(&a2, &b2, &reference, None)) {
        (Ok(x), Ok(y)) if x.statistic == y.statistic && (x.t_v, x.f_v) == (y.t_v, y.f_v) => {}
        other => bad.push(format!("agreement pixels changed M: {other:?}")),
    }
    outcome(
        bad.is_empty(),
        if bad.is_empty() {
            format!("M = 10, p = {:.7e}, oracle {oracle:.7e}, max p error {worst:.1e}", t.p_value.unwrap())
        } else {
            bad.join("; ")
        },
    )
}

// ---------------------------------------------------------------- 3

fn gradients() -> Outcome {
    let mut worst = 0.0f64;
    let mut bad = Vec::new();
    for kind in LayerKind::ALL {
        for seed in 0..5 {
            match check_layer(kind, seed) {
                Ok(r) => {
                    worst = worst.max(r.worst());
                    if !(r.worst() < 1e-4) {
                        bad.push(format!("{kind:?}/{seed}: {:.2e}", r.worst()));
                    }
                }
                Err(e) => bad.push(format!("{kind:?}/{seed}: {e}")),
            }
        }
    }
    outcome(
        bad.is_empty(),
        if bad.is_empty() {
            format!("{} layer kinds x 5 seeds, worst relative error {worst:.2e}", LayerKind::ALL.len())
        } else {
            bad.join("; ")
        },
    )
}

// ---------------------------------------------------------------- 4

fn shape_contract() -> Outcome {
    let mut bad = Vec::new();
    let default = ModelConfig::new(ModelKind::VisualIced);
    let g = build::<f32>(&default);
    let r720 = g.as_ref().map(|g| verify_shapes(g, &ShapeReport::default_inputs(g)));
    match &r720 {
        Ok(r) if r.ok() && r.output == [1, 240, 240] && r.concat_sites.iter().all(|s| s.ok) => {}
        other => bad.push(format!("S=720: {:?}", other.as_ref().map(|r| r.output))),
    }
    let mut c192 = default.clone();
    c192.patch_s = 192;
    match build::<f32>(&c192).map(|g| verify_shapes(&g, &ShapeReport::default_inputs(&g))) {
        Ok(r) if r.ok() && r.output == [1, 64, 64] => {}
        other => bad.push(format!("S=192: {:?}", other.map(|r| r.output))),
    }
    let mut invalid = default.clone();
    invalid.patch_s = 700;
    if build::<f32>(&invalid).is_ok() {
        bad.push("S=700 accepted".into());
    }
    if let Ok(g) = &g {
        let r = verify_shapes(g, &[[1, 720, 720], [3, 239, 239]]);
        if r.ok() || r.concat_sites.first().is_none_or(|s| s.ok) {
            bad.push("239x239 MSI not flagged at the first concat".into());
        }
    }
    let sites = r720.map(|r| r.concat_sites.len()).unwrap_or(0);
    outcome(
        bad.is_empty(),
        if bad.is_empty() {
            format!("720 -> 240x240 with {sites} equal-dim concat sites, 192 -> 64x64, 700 rejected")
        } else {
            bad.join("; ")
        },
    )
}

// ---------------------------------------------------------------- 5

/// Output-grid coordinates of tile seams along one axis.
fn seams(len: usize, tiling: &Tiling, ratio: usize) -> Vec<usize> {
    let s = spans(len, tiling);
    s.iter().skip(1).map(|sp| sp.write_from / ratio).collect()
}

fn tiling_equivalence() -> Outcome {
    let tiling = Tiling::default();
    let mut cfg = ModelConfig::new(ModelKind::VisualIced);
    cfg.depth = 1;
    cfg.base_width = 8;
    cfg.patch_s = 1440;
    cfg.init_seed = 5;
    let model = match build::<f32>(&cfg) {
        Ok(m) => m,
        Err(e) => return outcome(false, e.to_string()),
    };
    let pre = Preprocess::default();
    let margin = tiling.crop / 3;
    let mut worst = 0.0f32;
    let mut checked = 0usize;
    let mut bad = Vec::new();
    for i in 0..5u64 {
        let p = SynthParams {
            seed: 900 + i,
            size: 1440,
            origin_x: i as f64 * 400_000.0,
            ..SynthParams::default()
        };
        let scene = match generate(&p) {
            Ok(s) => s,
            Err(e) => return outcome(false, e.to_string()),
        };
        let whole = predict_whole(&model, &pre, &scene.sar, &scene.msi);
        let tiled = predict_tiled(&model, &pre, &scene.sar, &scene.msi, &tiling);
        let (whole, tiled) = match (whole, tiled) {
            (Ok(a), Ok(b)) => (a, b),
            (a, b) => return outcome(false, format!("{:?} {:?}", a.err(), b.err())),
        };
        let col_seams = seams(scene.sar.width(), &tiling, 3);
        let row_seams = seams(scene.sar.height(), &tiling, 3);
        let far = |x: usize, s: &[usize]| s.iter().all(|&q| x.abs_diff(q) >= margin);
        for r in 0..whole.height() {
            for c in 0..whole.width() {
                if !(far(r, &row_seams) && far(c, &col_seams)) {
                    continue;
                }
                let d = (whole.get(0, r, c) - tiled.get(0, r, c)).abs();
                if !(d <= 1e-3) {
                    bad.push(format!("scene {i} ({r}, {c}): {d}"));
                }
                worst = worst.max(d);
                checked += 1;
            }
        }
    }
    let t = GeoTransform::new(0.0, 0.0, 80.0, "EPSG:3031").unwrap();
    let sar = Raster::filled(1440, 1440, 1, -12.0, t.clone());
    let msi = Raster::filled(480, 480, 3, 120.0, t.with_pixel_size(240.0));
    let exact = match (
        predict_whole(&model, &pre, &sar, &msi),
        predict_tiled(&model, &pre, &sar, &msi, &tiling),
    ) {
        (Ok(a), Ok(b)) => a.bit_eq(&b),
        _ => false,
    };
    if !exact {
        bad.push("constant scene differs".into());
    }
    bad.truncate(5);
    outcome(
        bad.is_empty(),
        if bad.is_empty() {
            format!("5 scenes, {checked} pixels >= crop from seams, max |diff| {worst:.2e}; constant scene bit-identical")
        } else {
            bad.join("; ")
        },
    )
}

// ---------------------------------------------------------------- 6

fn sic_conservation() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(61);
    let mut bad = Vec::new();
    for k in 0..10 {
        let (w, h) = (rng.random_range(30..90), rng.random_range(30..90));
        let t = GeoTransform::new(0.0, 0.0, 240.0, "EPSG:3031").unwrap();
        let ice_p = rng.random_range(0.1..0.9);
        let mask: Vec<f32> = (0..w * h)
            .map(|_| match rng.random_range(0.0..1.0) {
                x if x < 0.02 => f32::NAN,
                x if x < ice_p => 1.0,
                _ => 0.0,
            })
            .collect();
        // A land block along one edge plus scattered land pixels.
        let edge = rng.random_range(3..10);
        let land: Vec<f32> = (0..w * h)
            .map(|i| ((i % w) < edge || rng.random_range(0.0..1.0) < 0.05) as u8 as f32)
            .collect();
        let mask = Raster::from_data(w, h, 1, mask, t.clone()).unwrap();
        let land = Raster::from_data(w, h, 1, land, t).unwrap();
        let (mut ice, mut ocean) = (0u64, 0u64);
        for (&m, &l) in mask.data().iter().zip(land.data()) {
            if l == 0.0 && !m.is_nan() {
                ocean += 1;
                ice += (m == 1.0) as u64;
            }
        }
        let cell = [6250.0, 2400.0, 1000.0][k % 3];
        match downscale_sic(&mask, Some(&land), cell) {
            Ok(g) => {
                let got = g.ocean_weighted_mean();
                let want = (ocean > 0).then(|| ice as f64 / ocean as f64);
                if got != want || g.ice.iter().sum::<u64>() != ice || g.ocean.iter().sum::<u64>() != ocean {
                    bad.push(format!("mask {k}: {got:?} vs {want:?}"));
                }
            }
            Err(e) => bad.push(format!("mask {k}: {e}")),
        }
    }
    // Coastal contamination: a 6250 m cell of 240 m pixels whose western
    // third is land that the classifier calls ice.
    let t = GeoTransform::new(0.0, 0.0, 240.0, "EPSG:3031").unwrap();
    let n = 26;
    let truth: Vec<f32> = (0..n * n).map(|i| ((i / n) % 4 == 0) as u8 as f32).collect();
    let land: Vec<f32> = (0..n * n).map(|i| (i % n < 9) as u8 as f32).collect();
    let contaminated: Vec<f32> = truth.iter().zip(&land).map(|(&v, &l)| if l == 1.0 { 1.0 } else { v }).collect();
    let r = |v: Vec<f32>| Raster::from_data(n, n, 1, v, t.clone()).unwrap();
    let land_r = r(land);
    let ocean_only = downscale_sic(&r(truth), Some(&land_r), 6250.0).unwrap().raster.data()[0];
    let unmasked = downscale_sic(&r(contaminated.clone()), None, 6250.0).unwrap().raster.data()[0];
    let masked = downscale_sic(&r(contaminated), Some(&land_r), 6250.0).unwrap().raster.data()[0];
    if !(unmasked > ocean_only && masked == ocean_only) {
        bad.push(format!("coast: truth {ocean_only}, unmasked {unmasked}, masked {masked}"));
    }
    outcome(
        bad.is_empty(),
        if bad.is_empty() {
            format!("10 fuzzed masks conserve exactly; coastal cell {ocean_only:.3} -> {unmasked:.3} without land mask, {masked:.3} with")
        } else {
            bad.join("; ")
        },
    )
}

// ---------------------------------------------------------------- 7-10

const CORPUS: usize = 200;
const HELD_OUT: usize = 40;
const CORPUS_SEED: u64 = 7;

struct Experiment {
    f1: BTreeMap<&'static str, f64>,
    band: BTreeMap<&'static str, f64>,
    /// Signed mean differences (cloud, clear) and the counts behind them.
    permute: (f64, f64, u64, u64),
    epochs: BTreeMap<&'static str, (usize, usize)>,
    seconds: BTreeMap<&'static str, f64>,
}

fn fraction(r: &Raster) -> f64 {
    r.data().iter().map(|&v| v as f64).sum::<f64>() / r.data().len() as f64
}

fn experiment() -> icedual::Result<Experiment> {
    let params = corpus_params(CORPUS, &CorpusRanges::default(), CORPUS_SEED);
    let scenes: Vec<SynthScene> = params.iter().map(generate).collect::<icedual::Result<_>>()?;
    let triplets = scenes
        .iter()
        .enumerate()
        .map(|(i, s)| s.triplet(&scene_id(i)))
        .collect::<icedual::Result<Vec<_>>>()?;
    let split_at = CORPUS - HELD_OUT;
    let (train_val, held) = triplets.split_at(split_at);
    let (tr, va) = split(train_val, 0.8, 1)?;
    let pre = Preprocess::default();
    let tc = TrainConfig {
        max_epochs: 15,
        patience: 5,
        seed: 3,
        ..TrainConfig::default()
    };
    let mut out = Experiment {
        f1: BTreeMap::new(),
        band: BTreeMap::new(),
        permute: (0.0, 0.0, 0, 0),
        epochs: BTreeMap::new(),
        seconds: BTreeMap::new(),
    };
    for kind in ModelKind::ALL {
        let start = Instant::now();
        let mut cfg = ModelConfig::new(kind);
        cfg.patch_s = 192;
        cfg.base_width = 8;
        let mut model = build::<f32>(&cfg)?;
        let h = train(&mut model, &prepare(&cfg, &pre, &tr)?, &prepare(&cfg, &pre, &va)?, &tc)?;
        let mut ms = Vec::new();
        let mut bands = Vec::new();
        for t in held {
            let conf = predict_whole(&model, &pre, &t.sar, &t.msi)?;
            bands.push(band_fraction(&conf, None)?.unwrap_or(f64::NAN));
            // Fine-grid output is scored on the label grid after area
            // averaging the confidence.
            let coarse = match cfg.output_grid {
                OutputGrid::Sar80m => resample(&conf, t.label.pixel_size(), ResampleMethod::AreaMean)?,
                OutputGrid::Msi240m => conf,
            };
            ms.push(metrics(&confusion(&binarize(&coarse, 0.5)?, &t.label, None)?));
        }
        let s = summarize(&ms);
        let name = kind.name();
        out.f1.insert(name, s.f1.mean.unwrap_or(f64::NAN));
        out.band.insert(name, bands.iter().sum::<f64>() / bands.len() as f64);
        out.epochs.insert(name, (h.epochs.len(), h.best_epoch));
        if kind == ModelKind::VisualIced {
            // Ice-dominated cloudy scenes as originals, SAR from other
            // held-out scenes as replacements.
            let held_scenes = &scenes[split_at..];
            let ids: Vec<String> = (split_at..CORPUS).map(scene_id).collect();
            let chosen: Vec<usize> = (0..HELD_OUT)
                .filter(|&i| fraction(&held_scenes[i].label) >= 0.5 && fraction(&held_scenes[i].cloud) >= 0.25)
                .take(10)
                .collect();
            let others: Vec<usize> = (0..HELD_OUT).filter(|i| !chosen.contains(i)).take(10).collect();
            let originals: Vec<Original> = chosen
                .iter()
                .map(|&i| Original {
                    id: &ids[i],
                    msi: &held[i].msi,
                    sar: &held[i].sar,
                })
                .collect();
            let permuted: Vec<(&str, &Raster)> = others.iter().map(|&i| (ids[i].as_str(), &held[i].sar)).collect();
            let rep = permute_and_predict(&model, &pre, &originals, &permuted, 1, icedual::labeling::CLOUD_THRESHOLD)?;
            out.permute = (
                rep.cloud.mean().unwrap_or(f64::NAN),
                rep.clear.mean().unwrap_or(f64::NAN),
                rep.cloud.count,
                rep.clear.count,
            );
        }
        out.seconds.insert(name, start.elapsed().as_secs_f64());
    }
    Ok(out)
}

fn ordering(e: &Experiment, wall: f64) -> Outcome {
    let f = |k: &str| e.f1[k];
    let vi = f("visual_iced");
    let pass = vi > f("msi_only") && vi > f("sar_only") && vi >= 0.90 && wall <= 1800.0;
    let row: Vec<String> = ModelKind::ALL
        .iter()
        .map(|k| {
            let (n, b) = e.epochs[k.name()];
            format!("{} {:.4} ({n} ep, best {b}, {:.0}s)", k.name(), f(k.name()), e.seconds[k.name()])
        })
        .collect();
    outcome(pass, format!("held-out F1: {}; total {wall:.0}s", row.join(", ")))
}

fn selectivity(e: &Experiment) -> Outcome {
    let (cloud, clear, nc, nl) = e.permute;
    let pass = nc > 0 && nl > 0 && cloud >= 2.0 * clear && cloud > 0.0;
    let ratio = if clear > 0.0 { format!("{:.1}x", cloud / clear) } else { "clear <= 0".into() };
    outcome(pass, format!("signed mean under cloud {cloud:.4} (n {nc}) vs clear {clear:.4} (n {nl}), ratio {ratio}"))
}

fn band_order(e: &Experiment) -> Outcome {
    let (vi, sar) = (e.band["visual_iced"], e.band["sar_only"]);
    outcome(vi < sar, format!("0.05 < y < 0.95: visual_iced {vi:.4}, sar_only {sar:.4}"))
}

fn identical(a: &Experiment, b: &Experiment) -> Outcome {
    let bits = |m: &BTreeMap<&str, f64>| m.values().map(|v| v.to_bits()).collect::<Vec<_>>();
    let p = |e: &Experiment| (e.permute.0.to_bits(), e.permute.1.to_bits(), e.permute.2, e.permute.3);
    let same = bits(&a.f1) == bits(&b.f1) && bits(&a.band) == bits(&b.band) && p(a) == p(b) && a.epochs == b.epochs;
    outcome(
        same,
        if same {
            "F1, band fractions, permutation means and epoch counts identical bit for bit".to_string()
        } else {
            format!("first {:?} / {:?}, second {:?} / {:?}", a.f1, a.permute, b.f1, b.permute)
        },
    )
}

fn main() {
    if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(1).build_global() {
        eprintln!("thread pool: {e}");
    }
    let mut all = true;
    let quick: [(&str, fn() -> Outcome); 6] = [
        ("metric exactness", metric_exactness),
        ("McNemar oracle", mcnemar_oracle),
        ("gradient verification", gradients),
        ("shape contract", shape_contract),
        ("tiling equivalence", tiling_equivalence),
        ("downscaling conservation", sic_conservation),
    ];
    for (i, (name, f)) in quick.iter().enumerate() {
        let start = Instant::now();
        all &= report(i + 1, name, start, &f());
    }

    let start = Instant::now();
    let first = experiment();
    let wall = start.elapsed().as_secs_f64();
    match &first {
        Ok(e) => {
            all &= report(7, "end-to-end ordering", start, &ordering(e, wall));
            all &= report(8, "modality selectivity", start, &selectivity(e));
            all &= report(9, "confidence-band ordering", start, &band_order(e));
        }
        Err(err) => {
            for (n, name) in [(7, "end-to-end ordering"), (8, "modality selectivity"), (9, "confidence-band ordering")] {
                all &= report(n, name, start, &outcome(false, err.to_string()));
            }
        }
    }
    let start = Instant::now();
    let second = experiment();
    let det = match (&first, &second) {
        (Ok(a), Ok(b)) => identical(a, b),
        (_, Err(e)) | (Err(e), _) => outcome(false, e.to_string()),
    };
    all &= report(10, "determinism", start, &det);
    println!("acceptance: {}", if all { "all criteria pass" } else { "FAILURES" });
    if !all {
        std::process::exit(1);
    }
}
