use std::path::{Path, PathBuf};

use icedual::dataset::{
    augment, build_variant, class_flag, extract_patches, manifest_base, pair_scenes, read_manifest, read_scene_meta,
    split, write_manifest, DatasetKind, Dihedral, ManifestEntry, Modality, PatchTriplet, FLAG_UNVERIFIED,
};
use icedual::evaluation::{
    band_fraction, confusion, grouped_summaries, incidence_mask, mcnemar, metrics, summarize, threshold_sweep,
    write_results_csv, ConfusionCounts, ImageResult, McNemar, default_thresholds,
};
use icedual::explain::{importance_summary, permute_and_predict, write_histogram_csv, Original};
use icedual::inference::{binarize, predict_tiled, Tiling};
use icedual::labeling::{build_reference, cloud_mask, PolygonSet};
use icedual::model::{build, load_checkpoint, save_checkpoint, verify_shapes, ModelConfig, ModelKind, Preprocess, ShapeReport};
use icedual::raster::{read_raster, resample, write_raster, Raster, ResampleMethod};
use icedual::sic::{compare_sic, downscale_sic, sic_time_series, write_series_csv};
use icedual::synth::{generate_corpus, CorpusRanges};
use icedual::training::{hyper_search, prepare, train, write_leaderboard, SearchSpace, SearchStrategy, TrainConfig};
use serde_json::{json, Value};

use crate::run::{create_dir, dir_manifest, file_manifest, io_err, read_json, usage, write_json, CliError, CliResult, Run};
use crate::*;

pub fn dispatch(cmd: Command) -> CliResult<()> {
    match cmd {
        Command::Synth(a) => synth(a),
        Command::Label(a) => label(a),
        Command::Dataset(DatasetCommand::Pair(a)) => dataset_pair(a),
        Command::Dataset(DatasetCommand::Patches(a)) => dataset_patches(a),
        Command::Dataset(DatasetCommand::Variant(a)) => dataset_variant(a),
        Command::Build(a) => build_cmd(a),
        Command::Train(a) => train_cmd(a),
        Command::Sweep(a) => sweep(a),
        Command::Predict(a) => predict(a),
        Command::Eval(a) => eval(a),
        Command::Permute(a) => permute(a),
        Command::Sic(a) => sic(a),
        Command::SicCompare(a) => sic_compare(a),
        Command::Report(a) => crate::report::report(a),
    }
}

fn parse<T: std::str::FromStr<Err = icedual::Error>>(s: &str) -> CliResult<T> {
    s.parse().map_err(|e: icedual::Error| usage(e.to_string()))
}

fn read(run: &mut Run, path: &Path) -> CliResult<Raster> {
    run.input(path)?;
    Ok(read_raster(path)?)
}

fn write(run: &mut Run, r: &Raster, path: &Path) -> CliResult<()> {
    write_raster(r, path)?;
    run.output(path);
    Ok(())
}

fn ensure_parent(path: &Path) -> CliResult<()> {
    match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => create_dir(p),
        _ => Ok(()),
    }
}

/// Overlay the fields of a JSON object onto `base`.
fn merge(base: &mut Value, over: Value) {
    if let (Value::Object(b), Value::Object(o)) = (base, over) {
        for (k, v) in o {
            b.insert(k, v);
        }
    }
}

fn with_file<T: serde::Serialize + serde::de::DeserializeOwned>(
    run: &mut Run,
    defaults: T,
    file: Option<&PathBuf>,
) -> CliResult<T> {
    let mut v = serde_json::to_value(defaults).map_err(|e| usage(e.to_string()))?;
    if let Some(f) = file {
        run.input(f)?;
        merge(&mut v, read_json(f)?);
    }
    serde_json::from_value(v).map_err(|e| usage(format!("config: {e}")))
}

pub fn model_config(run: &mut Run, file: Option<&PathBuf>, o: &ModelOverrides) -> CliResult<ModelConfig> {
    // The kind decides the default output grid, so look it up first.
    let file_value: Option<Value> = match file {
        Some(f) => {
            run.input(f)?;
            Some(read_json(f)?)
        }
        None => None,
    };
    let kind = match (&o.kind, file_value.as_ref().and_then(|v| v.get("kind"))) {
        (Some(k), _) => parse::<ModelKind>(k)?,
        (None, Some(k)) => serde_json::from_value(k.clone()).map_err(|e| usage(format!("model kind: {e}")))?,
        (None, None) => ModelKind::VisualIced,
    };
    let mut v = serde_json::to_value(ModelConfig::new(kind)).map_err(|e| usage(e.to_string()))?;
    if let Some(f) = file_value {
        if o.kind.is_some() && f.get("kind").is_some() {
            // A different kind on the command line resets the grid.
            let mut f = f;
            if let Value::Object(m) = &mut f {
                m.remove("kind");
                m.remove("output_grid");
            }
            merge(&mut v, f);
        } else {
            merge(&mut v, f);
        }
    }
    let mut cfg: ModelConfig = serde_json::from_value(v).map_err(|e| usage(format!("model config: {e}")))?;
    cfg.kind = kind;
    if let Some(w) = o.width {
        cfg.base_width = w;
    }
    if let Some(d) = o.depth {
        cfg.depth = d;
    }
    if let Some(p) = o.patch {
        cfg.patch_s = p;
    }
    if let Some(s) = o.init_seed {
        cfg.init_seed = s;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn train_config(run: &mut Run, o: &TrainOverrides) -> CliResult<TrainConfig> {
    let mut cfg = with_file(run, TrainConfig::default(), o.config.as_ref())?;
    if let Some(v) = o.lr {
        cfg.learning_rate = v;
    }
    if let Some(v) = o.batch {
        cfg.batch_size = v;
    }
    if let Some(v) = o.epochs {
        cfg.max_epochs = v;
    }
    if let Some(v) = o.patience {
        cfg.patience = v;
    }
    if let Some(v) = o.seed {
        cfg.seed = v;
    }
    if let Some(k) = &o.dataset_kind {
        cfg.dataset_kind = parse(k)?;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn absolute(p: &Path) -> CliResult<PathBuf> {
    if p.is_absolute() {
        Ok(p.to_path_buf())
    } else {
        let cwd = std::env::current_dir().map_err(|e| io_err(Path::new("."), e))?;
        Ok(cwd.join(p))
    }
}

/// Rewrite entry paths so they resolve from anywhere.
fn absolutize(entries: &mut [ManifestEntry], base: &Path) -> CliResult<()> {
    let base = absolute(base)?;
    let fix = |p: &mut PathBuf| {
        if p.is_relative() {
            *p = base.join(&*p);
        }
    };
    for e in entries {
        fix(&mut e.sar_path);
        fix(&mut e.msi_path);
        fix(&mut e.label_path);
        if let Some(p) = e.cloud_path.as_mut() {
            fix(p);
        }
        if let Some(p) = e.incidence_path.as_mut() {
            fix(p);
        }
    }
    Ok(())
}

fn load_entries(run: &mut Run, manifest: &Path) -> CliResult<(Vec<ManifestEntry>, PathBuf)> {
    run.input(manifest)?;
    let entries = read_manifest(manifest)?;
    if entries.is_empty() {
        return Err(CliError::Data(format!("{}: manifest is empty", manifest.display())));
    }
    Ok((entries, manifest_base(manifest)))
}

fn load_triplets(entries: &[ManifestEntry], base: &Path) -> CliResult<Vec<PatchTriplet>> {
    entries.iter().map(|e| e.load(base).map_err(CliError::from)).collect()
}

fn synth(a: SynthArgs) -> CliResult<()> {
    let mut run = Run::new("synth", &a);
    let mut ranges = with_file(&mut run, CorpusRanges::default(), a.config.as_ref())?;
    if let Some(s) = a.size {
        ranges.size = s;
    }
    let entries = generate_corpus(a.n, &ranges, a.seed, &a.out)?;
    for f in ["manifest.jsonl", "scenes.csv", "params.json"] {
        run.output(a.out.join(f));
    }
    println!("{} scenes written to {}", entries.len(), a.out.display());
    run.finish(&dir_manifest(&a.out))
}

fn label(a: LabelArgs) -> CliResult<()> {
    let mut run = Run::new("label", &a);
    let msi = read(&mut run, &a.msi)?;
    let polygons = match &a.polygons {
        Some(p) => {
            run.input(p)?;
            PolygonSet::read(p)?
        }
        None => PolygonSet::empty(msi.transform().crs_id.clone()),
    };
    let label = build_reference(&msi, a.vis_band, a.threshold, &polygons)?;
    ensure_parent(&a.out)?;
    write(&mut run, &label, &a.out)?;
    if let Some(c) = &a.cloud_out {
        let cloud = cloud_mask(&msi, a.swir_band, a.cloud_threshold)?;
        ensure_parent(c)?;
        write(&mut run, &cloud, c)?;
    }
    let ice = label.data().iter().filter(|&&v| v == 1.0).count();
    println!("label: {ice} ice of {} pixels", label.data().len());
    run.finish(&file_manifest(&a.out))
}

fn dataset_pair(a: PairArgs) -> CliResult<()> {
    let mut run = Run::new("dataset pair", &a);
    run.input(&a.scenes)?;
    let metas = read_scene_meta(&a.scenes)?;
    let (msi, sar): (Vec<_>, Vec<_>) = metas.into_iter().partition(|m| m.modality == Modality::Msi);
    let pairs = pair_scenes(&msi, &sar, a.max_lag_hours, a.drift_budget_m);
    ensure_parent(&a.out)?;
    let mut w = csv::Writer::from_path(&a.out).map_err(|e| io_err(&a.out, e))?;
    for p in &pairs {
        w.serialize(p).map_err(|e| io_err(&a.out, e))?;
    }
    w.flush().map_err(|e| io_err(&a.out, e))?;
    run.output(&a.out);
    println!("{} pairs, all pending visual verification", pairs.len());
    run.finish(&file_manifest(&a.out))
}

fn augmentation_set(name: &str) -> CliResult<Vec<Dihedral>> {
    match name {
        "none" => Ok(vec![]),
        "five" => Ok(Dihedral::FIVE.to_vec()),
        "all" => Ok(Dihedral::ALL.to_vec()),
        other => Err(usage(format!("unknown augmentation set {other:?} (none, five, all)"))),
    }
}

fn dataset_patches(a: PatchesArgs) -> CliResult<()> {
    let mut run = Run::new("dataset patches", &a);
    let sar = read(&mut run, &a.sar)?;
    let msi = read(&mut run, &a.msi)?;
    let label = read(&mut run, &a.label)?;
    let set = augmentation_set(&a.augment)?;
    let mut triplets = extract_patches(&msi, &sar, &label, a.patch, (&a.msi_id, &a.sar_id))?;
    if !set.is_empty() {
        triplets = triplets
            .iter()
            .map(|t| augment(t, &set))
            .collect::<icedual::Result<Vec<_>>>()?
            .concat();
    }
    create_dir(&a.out)?;
    let mut entries = Vec::with_capacity(triplets.len());
    for (i, t) in triplets.iter().enumerate() {
        let name = format!("patch_{i:05}");
        create_dir(&a.out.join(&name))?;
        let rel = |f: &str| PathBuf::from(&name).join(f);
        write_raster(&t.sar, a.out.join(rel("sar.rgf")))?;
        write_raster(&t.msi, a.out.join(rel("msi.rgf")))?;
        write_raster(&t.label, a.out.join(rel("label.rgf")))?;
        entries.push(ManifestEntry {
            sar_path: rel("sar.rgf"),
            msi_path: rel("msi.rgf"),
            label_path: rel("label.rgf"),
            origin_x: t.provenance.origin_x,
            origin_y: t.provenance.origin_y,
            kind_flags: vec![class_flag(t.class()).into(), FLAG_UNVERIFIED.into()],
            scene_id: Some(t.provenance.to_string()),
            cloud_path: None,
            incidence_path: None,
        });
    }
    let manifest = a.out.join("manifest.jsonl");
    write_manifest(&entries, &manifest)?;
    run.output(&manifest);
    println!("{} patches", entries.len());
    run.finish(&dir_manifest(&a.out))
}

fn dataset_variant(a: VariantArgs) -> CliResult<()> {
    let mut run = Run::new("dataset variant", &a);
    let kind: DatasetKind = parse(&a.kind)?;
    let (mut entries, base) = load_entries(&mut run, &a.manifest)?;
    absolutize(&mut entries, &base)?;
    let variant = build_variant(&entries, kind, a.seed, ManifestEntry::class)?;
    let (tr, va) = split(&variant.items, a.train_fraction, a.seed)?;
    create_dir(&a.out)?;
    for (name, items) in [("train.jsonl", &tr), ("val.jsonl", &va)] {
        let p = a.out.join(name);
        write_manifest(items, &p)?;
        run.output(p);
    }
    println!("{:?}: {} train, {} val", kind, tr.len(), va.len());
    run.finish(&dir_manifest(&a.out))
}

fn build_cmd(a: BuildArgs) -> CliResult<()> {
    let mut run = Run::new("build", &a);
    let file = a.config.as_ref().or(a.overrides.model.as_ref());
    let cfg = model_config(&mut run, file, &a.overrides)?;
    let g = build::<f32>(&cfg)?;
    let report = verify_shapes(&g, &ShapeReport::default_inputs(&g));
    print!("{}", report.render());
    if a.verify && !report.ok() {
        return Err(CliError::Data(format!("shape check failed: {}", report.issues.join("; "))));
    }
    match &a.out {
        Some(out) => {
            ensure_parent(out)?;
            save_checkpoint(&g, &Preprocess::default(), out)?;
            run.output(out);
            run.finish(&file_manifest(out))
        }
        // Report-only runs write nothing, not even a manifest.
        None => Ok(()),
    }
}

/// Training and validation triplets, either from two manifests or by
/// splitting one.
fn train_val(
    run: &mut Run,
    data: &Path,
    val: Option<&PathBuf>,
    val_fraction: f64,
    seed: u64,
) -> CliResult<(Vec<PatchTriplet>, Vec<PatchTriplet>)> {
    let (entries, base) = load_entries(run, data)?;
    let all = load_triplets(&entries, &base)?;
    match val {
        Some(v) => {
            let (ve, vb) = load_entries(run, v)?;
            Ok((all, load_triplets(&ve, &vb)?))
        }
        None => {
            let (tr, va) = split(&all, 1.0 - val_fraction, seed)?;
            if tr.is_empty() || va.is_empty() {
                return Err(usage(format!(
                    "splitting {} patches at validation fraction {val_fraction} leaves an empty side",
                    all.len()
                )));
            }
            Ok((tr, va))
        }
    }
}

fn train_cmd(a: TrainArgs) -> CliResult<()> {
    let mut run = Run::new("train", &a);
    let mcfg = model_config(&mut run, a.model.model.as_ref(), &a.model)?;
    let tcfg = train_config(&mut run, &a.train)?;
    let (tr, va) = train_val(&mut run, &a.data, a.val.as_ref(), a.val_fraction, tcfg.seed)?;
    let tr = build_variant(&tr, tcfg.dataset_kind, tcfg.seed, PatchTriplet::class)?.items;
    let pre = Preprocess::default();
    let train_set = prepare(&mcfg, &pre, &tr)?;
    let val_set = prepare(&mcfg, &pre, &va)?;
    log::info!("{}: {} train / {} val patches", mcfg.kind, train_set.len(), val_set.len());
    let mut g = build::<f32>(&mcfg)?;
    let history = train(&mut g, &train_set, &val_set, &tcfg)?;
    create_dir(&a.out)?;
    let ckpt = a.out.join("best.ckpt");
    save_checkpoint(&g, &pre, &ckpt)?;
    let hist = a.out.join("history.csv");
    history.write_csv(&hist)?;
    let snap = a.out.join("config.json");
    write_json(&snap, &json!({ "model": mcfg, "train": tcfg, "preprocess": pre }))?;
    for p in [ckpt, hist, snap] {
        run.output(p);
    }
    println!(
        "best epoch {} val loss {:.6} ({} epochs{})",
        history.best_epoch,
        history.best_val_loss,
        history.epochs.len(),
        if history.stopped_early { ", stopped early" } else { "" }
    );
    run.finish(&dir_manifest(&a.out))
}

fn sweep(a: SweepArgs) -> CliResult<()> {
    let mut run = Run::new("sweep", &a);
    let mcfg = model_config(&mut run, a.model.model.as_ref(), &a.model)?;
    let base = train_config(&mut run, &a.train)?;
    let space = with_file(&mut run, SearchSpace::default(), a.space.as_ref())?;
    let strategy: SearchStrategy = parse(&a.strategy)?;
    let (tr, va) = train_val(&mut run, &a.data, None, a.val_fraction, base.seed)?;
    let pre = Preprocess::default();
    let train_set = prepare(&mcfg, &pre, &tr)?;
    let val_set = prepare(&mcfg, &pre, &va)?;
    let results = hyper_search(
        &mcfg,
        &train_set,
        &val_set,
        &base,
        &space,
        a.budget,
        strategy,
        a.search_seed,
        a.epoch_cap,
    )?;
    create_dir(&a.out)?;
    let board = a.out.join("leaderboard.csv");
    write_leaderboard(&results, &board)?;
    let trials = a.out.join("trials.json");
    write_json(&trials, &results)?;
    run.output(board);
    run.output(trials);
    if let Some(best) = results.first() {
        println!("best trial {}: val loss {:?}", best.trial, best.best_val_loss);
    }
    run.finish(&dir_manifest(&a.out))
}

fn predict(a: PredictArgs) -> CliResult<()> {
    let mut run = Run::new("predict", &a);
    run.input(&a.ckpt)?;
    let (g, pre) = load_checkpoint(&a.ckpt)?;
    let sar = read(&mut run, &a.sar)?;
    let msi = read(&mut run, &a.msi)?;
    let tiling = Tiling {
        tile: a.tile,
        overlap: a.overlap,
        crop: a.crop,
    };
    let conf = predict_tiled(&g, &pre, &sar, &msi, &tiling)?;
    ensure_parent(&a.out)?;
    write(&mut run, &conf, &a.out)?;
    if let Some(m) = &a.mask {
        ensure_parent(m)?;
        write(&mut run, &binarize(&conf, a.threshold)?, m)?;
    }
    println!("{}x{} confidence written", conf.width(), conf.height());
    run.finish(&file_manifest(&a.out))
}

/// Bring a prediction onto the reference grid: predictions on a finer grid
/// are area-averaged first.
fn onto(pred: &Raster, reference: &Raster) -> CliResult<Raster> {
    if pred.pixel_size() == reference.pixel_size() {
        return Ok(pred.clone());
    }
    let r = resample(pred, reference.pixel_size(), ResampleMethod::AreaMean)?;
    r.require_same_grid(reference, "reference")?;
    Ok(r)
}

fn combine_masks(a: Option<Raster>, b: Option<Raster>) -> CliResult<Option<Raster>> {
    Ok(match (a, b) {
        (Some(a), Some(b)) => {
            a.require_same_grid(&b, "incidence mask")?;
            let d = a
                .data()
                .iter()
                .zip(b.data())
                .map(|(&x, &y)| (x == 1.0 && y == 1.0) as u8 as f32)
                .collect();
            Some(a.like(d)?)
        }
        (a, b) => a.or(b),
    })
}

fn per_image<'a, T>(v: &'a [T], n: usize, what: &str) -> CliResult<Option<&'a [T]>> {
    match v.len() {
        0 => Ok(None),
        l if l == n => Ok(Some(v)),
        l => Err(usage(format!("{l} --{what} values for {n} predictions"))),
    }
}

fn image_name(p: &Path) -> String {
    p.to_string_lossy().into_owned()
}

fn eval(a: EvalArgs) -> CliResult<()> {
    let mut run = Run::new("eval", &a);
    let n = a.pred.len();
    if a.reference.len() != n {
        return Err(usage(format!("{} --ref values for {n} predictions", a.reference.len())));
    }
    if !(a.threshold > 0.0 && a.threshold < 1.0) {
        return Err(usage(format!("threshold {} outside (0, 1)", a.threshold)));
    }
    let masks = per_image(&a.mask, n, "mask")?;
    let incidence = per_image(&a.incidence, n, "incidence")?;
    let groups = per_image(&a.group, n, "group")?;
    let compare = per_image(&a.compare, n, "compare")?;
    let thresholds = default_thresholds();
    let mut rows = Vec::with_capacity(n);
    let mut sweeps = Vec::new();
    let (mut t_v, mut f_v) = (0u64, 0u64);
    let mut pooled = ConfusionCounts::default();
    for i in 0..n {
        let native = read(&mut run, &a.pred[i])?;
        let reference = read(&mut run, &a.reference[i])?;
        let pred = onto(&native, &reference)?;
        let mask = masks.map(|m| read(&mut run, &m[i])).transpose()?;
        let low = match incidence {
            Some(inc) => {
                let r = read(&mut run, &inc[i])?;
                let r = if r.pixel_size() == reference.pixel_size() {
                    r
                } else {
                    resample(&r, reference.pixel_size(), ResampleMethod::AreaMean)?
                };
                Some(incidence_mask(&r, a.max_incidence)?)
            }
            None => None,
        };
        let mask = combine_masks(mask, low)?;
        let bin = binarize(&pred, a.threshold)?;
        let counts = confusion(&bin, &reference, mask.as_ref())?;
        pooled = pooled.add(&counts);
        // Band fraction is a property of the network output, taken on its
        // own grid when no mask restricts it.
        let bf = if native.same_grid(&reference) || mask.is_some() {
            band_fraction(&pred, mask.as_ref())?
        } else {
            band_fraction(&native, None)?
        };
        rows.push(ImageResult {
            image: image_name(&a.pred[i]),
            group: groups.map(|g| g[i].clone()).unwrap_or_else(|| "all".into()),
            threshold: a.threshold,
            counts,
            metrics: metrics(&counts),
            band_fraction: bf,
        });
        if a.sweep {
            sweeps.push((image_name(&a.pred[i]), threshold_sweep(&pred, &reference, &thresholds, mask.as_ref())?));
        }
        if let Some(c) = compare {
            let other = onto(&read(&mut run, &c[i])?, &reference)?;
            let m = mcnemar(&bin, &binarize(&other, a.threshold)?, &reference, mask.as_ref())?;
            t_v += m.t_v;
            f_v += m.f_v;
        }
    }
    create_dir(&a.out)?;
    let results = a.out.join("results.csv");
    write_results_csv(&rows, &results)?;
    run.output(&results);
    if a.sweep {
        let p = a.out.join("sweep.csv");
        write_sweep(&sweeps, &thresholds, &p)?;
        run.output(p);
    }
    let summary = summarize(rows.iter().map(|r| &r.metrics));
    let bands: Vec<f64> = rows.iter().filter_map(|r| r.band_fraction).collect();
    let test = compare.map(|_| McNemar::from_counts(t_v, f_v));
    let doc = json!({
        "kind": "eval",
        "name": a.name.clone().unwrap_or_else(|| "predictions".into()),
        "threshold": a.threshold,
        "summary": summary,
        "groups": grouped_summaries(&rows),
        "pooled_counts": pooled,
        "pooled_metrics": metrics(&pooled),
        "band_fraction_mean": (!bands.is_empty()).then(|| bands.iter().sum::<f64>() / bands.len() as f64),
        "mcnemar": test,
    });
    let sp = a.out.join("summary.json");
    write_json(&sp, &doc)?;
    run.output(&sp);
    let show = |s: &icedual::evaluation::Stat| s.mean.map(|m| format!("{m:.4}")).unwrap_or("-".into());
    println!(
        "{} images: B_A {} U_A {} P_A {} F1 {}",
        summary.images,
        show(&summary.binary_accuracy),
        show(&summary.user_accuracy),
        show(&summary.producer_accuracy),
        show(&summary.f1)
    );
    if let Some(t) = test {
        println!("McNemar T_v {} F_v {} M {:?} p {:?}", t.t_v, t.f_v, t.statistic, t.p_value);
    }
    run.finish(&dir_manifest(&a.out))
}

fn write_sweep(
    sweeps: &[(String, icedual::evaluation::Sweep)],
    thresholds: &[f64],
    path: &Path,
) -> CliResult<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| io_err(path, e))?;
    let mut header = vec!["image".to_string(), "metric".to_string()];
    header.extend(thresholds.iter().map(|t| format!("t{t}")));
    w.write_record(&header).map_err(|e| io_err(path, e))?;
    let cell = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    for (image, s) in sweeps {
        let metrics: [(&str, Box<dyn Fn(&icedual::evaluation::SweepRow) -> String>); 5] = [
            ("binary_accuracy", Box::new(|r| cell(r.metrics.binary_accuracy))),
            ("user_accuracy", Box::new(|r| cell(r.metrics.user_accuracy))),
            ("producer_accuracy", Box::new(|r| cell(r.metrics.producer_accuracy))),
            ("f1", Box::new(|r| cell(r.metrics.f1))),
            ("ice_pixels", Box::new(|r| r.ice_pixels.to_string())),
        ];
        for (name, f) in &metrics {
            let mut rec = vec![image.clone(), name.to_string()];
            rec.extend(s.rows.iter().map(f));
            w.write_record(&rec).map_err(|e| io_err(path, e))?;
        }
    }
    w.flush().map_err(|e| io_err(path, e))
}

fn permute(a: PermuteArgs) -> CliResult<()> {
    let mut run = Run::new("permute", &a);
    run.input(&a.ckpt)?;
    let (g, pre) = load_checkpoint(&a.ckpt)?;
    let (entries, base) = load_entries(&mut run, &a.pairs)?;
    let triplets = load_triplets(&entries, &base)?;
    let ids: Vec<String> = entries
        .iter()
        .enumerate()
        .map(|(i, e)| e.scene_id.clone().unwrap_or_else(|| format!("pair_{i}")))
        .collect();
    run.input(&a.permuted)?;
    let list = std::fs::read_to_string(&a.permuted).map_err(|e| io_err(&a.permuted, e))?;
    let list_base = a.permuted.parent().map(Path::to_path_buf).unwrap_or_default();
    let mut permuted = Vec::new();
    for line in list.lines().map(str::trim).filter(|l| !l.is_empty() && !l.starts_with('#')) {
        let p = PathBuf::from(line);
        let p = if p.is_relative() { list_base.join(p) } else { p };
        permuted.push((line.to_string(), read(&mut run, &p)?));
    }
    if permuted.is_empty() {
        return Err(CliError::Data(format!("{}: no permuted SAR rasters listed", a.permuted.display())));
    }
    let originals: Vec<Original> = triplets
        .iter()
        .zip(&ids)
        .map(|(t, id)| Original {
            id,
            msi: &t.msi,
            sar: &t.sar,
        })
        .collect();
    let refs: Vec<(&str, &Raster)> = permuted.iter().map(|(n, r)| (n.as_str(), r)).collect();
    let report = permute_and_predict(&g, &pre, &originals, &refs, a.swir_band, a.cloud_threshold)?;
    let summary = importance_summary(&report)?;
    create_dir(&a.out)?;
    let stats = a.out.join("stats.json");
    write_json(
        &stats,
        &json!({ "kind": "permute", "network": g.config().kind, "summary": summary, "report": report }),
    )?;
    let hist = a.out.join("histogram.csv");
    write_histogram_csv(&report, &hist)?;
    run.output(stats);
    run.output(hist);
    for r in &summary {
        println!(
            "{:<8} n {:>9} mean {} std {}",
            r.partition,
            r.count,
            r.mean.map(|v| format!("{v:+.4}")).unwrap_or("-".into()),
            r.std.map(|v| format!("{v:.4}")).unwrap_or("-".into())
        );
    }
    run.finish(&dir_manifest(&a.out))
}

fn sic(a: SicArgs) -> CliResult<()> {
    let mut run = Run::new("sic", &a);
    let mask = read(&mut run, &a.mask)?;
    let land = a.land.as_ref().map(|p| read(&mut run, p)).transpose()?;
    let grid = downscale_sic(&mask, land.as_ref(), a.cell)?;
    ensure_parent(&a.out)?;
    write(&mut run, &grid.raster, &a.out)?;
    match grid.ocean_weighted_mean() {
        Some(m) => println!("{}x{} cells, ocean-weighted SIC {m:.4}", grid.raster.width(), grid.raster.height()),
        None => println!("{}x{} cells, no ocean pixels", grid.raster.width(), grid.raster.height()),
    }
    run.finish(&file_manifest(&a.out))
}

#[derive(serde::Deserialize)]
struct SeriesLine {
    date: String,
    a: PathBuf,
    b: PathBuf,
}

fn sic_compare(a: SicCompareArgs) -> CliResult<()> {
    let mut run = Run::new("sic-compare", &a);
    create_dir(&a.out)?;
    if let (Some(pa), Some(pb)) = (&a.a, &a.b) {
        let ga = read(&mut run, pa)?;
        let gb = read(&mut run, pb)?;
        let coast = a.coast.as_ref().map(|p| read(&mut run, p)).transpose()?;
        let c = compare_sic(&ga, &gb, coast.as_ref().map(|d| (d, a.coast_threshold_m)))?;
        // Copies of both grids keep the run directory self-contained for
        // the report.
        write(&mut run, &ga, &a.out.join("a.rgf"))?;
        write(&mut run, &gb, &a.out.join("b.rgf"))?;
        write(&mut run, &c.diff, &a.out.join("diff.rgf"))?;
        let cells = a.out.join("stats.csv");
        c.write_csv(&cells)?;
        run.output(&cells);
        let sp = a.out.join("summary.json");
        write_json(&sp, &json!({ "kind": "sic-compare", "comparison": c }))?;
        run.output(&sp);
        println!(
            "{} cells compared, {} excluded, bias {:?}, MAE {:?}",
            c.compared, c.excluded, c.bias, c.mae
        );
    }
    if let Some(series) = &a.series {
        run.input(series)?;
        let base = series.parent().map(Path::to_path_buf).unwrap_or_default();
        let mut rdr = csv::Reader::from_path(series).map_err(|e| io_err(series, e))?;
        let mut items = Vec::new();
        for line in rdr.deserialize::<SeriesLine>() {
            let l = line.map_err(|e| io_err(series, e))?;
            let fix = |p: PathBuf| if p.is_relative() { base.join(p) } else { p };
            let ra = read(&mut run, &fix(l.a))?;
            let rb = read(&mut run, &fix(l.b))?;
            items.push((l.date, ra, rb));
        }
        let refs: Vec<(String, &Raster, &Raster)> = items.iter().map(|(d, x, y)| (d.clone(), x, y)).collect();
        let rows = sic_time_series(&refs)?;
        let p = a.out.join("series.csv");
        write_series_csv(&rows, &p)?;
        run.output(p);
        println!("{} dates in series", rows.len());
    }
    run.finish(&dir_manifest(&a.out))
}
