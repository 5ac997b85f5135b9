use std::path::{Path, PathBuf};

use icedual::explain::BINS;
use icedual::raster::{read_raster, Raster};
use image::{Rgb, RgbImage};
use serde_json::{json, Value};

use crate::run::{create_dir, dir_manifest, io_err, read_json, write_json, CliResult, Run};
use crate::ReportArgs;

const WHITE: Rgb<u8> = Rgb([255, 255, 255]);
const GRAY: Rgb<u8> = Rgb([150, 150, 150]);
const CLOUD: Rgb<u8> = Rgb([49, 104, 176]);
const CLEAR: Rgb<u8> = Rgb([230, 140, 40]);

enum Found {
    Eval(Value),
    Permute(Value),
    Sic { a: Raster, b: Raster, diff: Raster },
}

fn kind_of(v: &Value) -> Option<&str> {
    v.get("kind").and_then(Value::as_str)
}

/// What a run directory holds, or why it cannot be used.
fn inspect(dir: &Path) -> Result<Found, String> {
    if !dir.is_dir() {
        return Err("not a directory".into());
    }
    if !dir_manifest(dir).is_file() {
        return Err("no run.json (run incomplete)".into());
    }
    let summary = dir.join("summary.json");
    let stats = dir.join("stats.json");
    let load = |p: &Path| read_json::<Value>(p).map_err(|_| format!("{} is unreadable", p.display()));
    if stats.is_file() {
        let v = load(&stats)?;
        if kind_of(&v) == Some("permute") {
            return Ok(Found::Permute(v));
        }
    }
    if summary.is_file() {
        let v = load(&summary)?;
        match kind_of(&v) {
            Some("eval") => return Ok(Found::Eval(v)),
            Some("sic-compare") => {
                let r = |f: &str| read_raster(dir.join(f)).map_err(|e| e.to_string());
                return Ok(Found::Sic {
                    a: r("a.rgf")?,
                    b: r("b.rgf")?,
                    diff: r("diff.rgf")?,
                });
            }
            _ => {}
        }
    }
    Err("no eval, permute or sic-compare outputs".into())
}

fn mean_of(v: &Value, metric: &str) -> String {
    v.pointer(&format!("/summary/{metric}/mean"))
        .and_then(Value::as_f64)
        .map(|x| format!("{x:.4}"))
        .unwrap_or_default()
}

fn run_name(dir: &Path, v: &Value, key: &str) -> String {
    v.get(key)
        .and_then(Value::as_str)
        .map(str::to_string)
        .unwrap_or_else(|| dir.file_name().unwrap_or_default().to_string_lossy().into_owned())
}

pub fn report(a: ReportArgs) -> CliResult<()> {
    let mut run = Run::new("report", &a);
    create_dir(&a.out)?;
    if a.runs.is_empty() {
        log::warn!("no run directories given; writing an empty report");
    }
    let mut metrics_rows = Vec::new();
    let mut permute_rows = Vec::new();
    let mut panels = Vec::new();
    let mut skipped = Vec::new();
    for dir in &a.runs {
        match inspect(dir) {
            Ok(Found::Eval(v)) => {
                run.input(&dir.join("summary.json"))?;
                let images = v.pointer("/summary/images").and_then(Value::as_u64).unwrap_or(0);
                let band = v
                    .get("band_fraction_mean")
                    .and_then(Value::as_f64)
                    .map(|x| format!("{x:.4}"))
                    .unwrap_or_default();
                metrics_rows.push(vec![
                    run_name(dir, &v, "name"),
                    images.to_string(),
                    mean_of(&v, "binary_accuracy"),
                    mean_of(&v, "user_accuracy"),
                    mean_of(&v, "producer_accuracy"),
                    mean_of(&v, "f1"),
                    band,
                ]);
            }
            Ok(Found::Permute(v)) => {
                run.input(&dir.join("stats.json"))?;
                let name = match v.get("network").and_then(Value::as_str) {
                    Some(n) => format!("{n}_{}", permute_rows.len() / 3),
                    None => format!("permute_{}", permute_rows.len() / 3),
                };
                for row in v.get("summary").and_then(Value::as_array).into_iter().flatten() {
                    let f = |k: &str| row.get(k).and_then(Value::as_f64).map(|x| format!("{x:.4}")).unwrap_or_default();
                    permute_rows.push(vec![
                        name.clone(),
                        row.get("partition").and_then(Value::as_str).unwrap_or("").to_string(),
                        row.get("count").and_then(Value::as_u64).unwrap_or(0).to_string(),
                        f("mean"),
                        f("std"),
                    ]);
                }
                let png = a.out.join(format!("permute_{name}.png"));
                histogram_png(&v, &png)?;
                run.output(png);
            }
            Ok(Found::Sic { a, b, diff }) => {
                run.input(&dir.join("diff.rgf"))?;
                panels.push([a, b, diff]);
            }
            Err(why) => {
                log::warn!("skipping {}: {why}", dir.display());
                skipped.push(json!({ "dir": dir, "reason": why }));
            }
        }
    }
    let table = a.out.join("metrics.csv");
    write_csv(
        &table,
        &["network", "images", "B_A", "U_A", "P_A", "F1", "band_fraction"],
        &metrics_rows,
    )?;
    run.output(&table);
    if !permute_rows.is_empty() {
        let p = a.out.join("permutation.csv");
        write_csv(&p, &["run", "partition", "count", "mean", "std"], &permute_rows)?;
        run.output(p);
    }
    if !panels.is_empty() {
        let p = a.out.join("sic_panels.png");
        sic_png(&panels, &p)?;
        run.output(p);
    }
    let listing = a.out.join("report.json");
    let runs: Vec<&PathBuf> = a.runs.iter().collect();
    write_json(&listing, &json!({ "runs": runs, "skipped": skipped }))?;
    run.output(&listing);
    println!(
        "{} eval rows, {} permutation runs, {} SIC panels, {} skipped",
        metrics_rows.len(),
        permute_rows.len() / 3,
        panels.len(),
        skipped.len()
    );
    run.finish(&dir_manifest(&a.out))
}

fn write_csv(path: &Path, header: &[&str], rows: &[Vec<String>]) -> CliResult<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| io_err(path, e))?;
    w.write_record(header).map_err(|e| io_err(path, e))?;
    for r in rows {
        w.write_record(r).map_err(|e| io_err(path, e))?;
    }
    w.flush().map_err(|e| io_err(path, e))
}

fn counts(v: &Value, key: &str) -> Vec<u64> {
    let c: Vec<u64> = v
        .pointer(&format!("/report/{key}/counts"))
        .and_then(Value::as_array)
        .map(|a| a.iter().map(|x| x.as_u64().unwrap_or(0)).collect())
        .unwrap_or_default();
    if c.len() == BINS {
        c
    } else {
        vec![0; BINS]
    }
}

/// Paired bars per bin, cloud and clear, with a line at zero difference.
fn histogram_png(v: &Value, path: &Path) -> CliResult<()> {
    let cloud = counts(v, "cloud_histogram");
    let clear = counts(v, "clear_histogram");
    let (bar, margin, plot_h) = (6u32, 20u32, 220u32);
    let w = BINS as u32 * 2 * bar + 2 * margin;
    let h = plot_h + 2 * margin;
    let mut img = RgbImage::from_pixel(w, h, WHITE);
    // Normalize each partition to its own total so both are visible.
    let frac = |c: &[u64]| -> Vec<f64> {
        let t: u64 = c.iter().sum();
        c.iter().map(|&x| if t == 0 { 0.0 } else { x as f64 / t as f64 }).collect()
    };
    let (fc, fl) = (frac(&cloud), frac(&clear));
    let top = fc.iter().chain(&fl).cloned().fold(0.0, f64::max).max(1e-12);
    for i in 0..BINS {
        for (k, (f, color)) in [(fc[i], CLOUD), (fl[i], CLEAR)].into_iter().enumerate() {
            let height = ((f / top) * plot_h as f64).round() as u32;
            let x0 = margin + (2 * i as u32 + k as u32) * bar;
            for x in x0..x0 + bar - 1 {
                for y in (margin + plot_h - height)..(margin + plot_h) {
                    img.put_pixel(x, y, color);
                }
            }
        }
    }
    for x in margin..w - margin {
        img.put_pixel(x, margin + plot_h, GRAY);
    }
    let zero = margin + BINS as u32 * bar;
    for y in margin..margin + plot_h {
        img.put_pixel(zero, y, GRAY);
    }
    img.save(path).map_err(|e| io_err(path, e))
}

fn ice_color(v: f32) -> Rgb<u8> {
    if v.is_nan() {
        return GRAY;
    }
    let t = v.clamp(0.0, 1.0);
    let lerp = |a: f32, b: f32| (a + (b - a) * t).round() as u8;
    Rgb([lerp(10.0, 255.0), lerp(40.0, 255.0), lerp(110.0, 255.0)])
}

fn diff_color(v: f32) -> Rgb<u8> {
    if v.is_nan() {
        return GRAY;
    }
    let t = v.clamp(-1.0, 1.0);
    let fade = |x: f32| (255.0 * (1.0 - x.abs())).round() as u8;
    if t >= 0.0 {
        Rgb([255, fade(t), fade(t)])
    } else {
        Rgb([fade(t), fade(t), 255])
    }
}

/// One row per comparison: grid a, grid b, and their difference.
fn sic_png(panels: &[[Raster; 3]], path: &Path) -> CliResult<()> {
    let gap = 8u32;
    let side = |r: &Raster| r.width().max(r.height()) as u32;
    let scale = |r: &Raster| (160 / side(r).max(1)).max(1);
    let cell_w = panels
        .iter()
        .flat_map(|p| p.iter())
        .map(|r| r.width() as u32 * scale(r))
        .max()
        .unwrap_or(1);
    let cell_h = panels
        .iter()
        .flat_map(|p| p.iter())
        .map(|r| r.height() as u32 * scale(r))
        .max()
        .unwrap_or(1);
    let w = 3 * cell_w + 4 * gap;
    let h = panels.len() as u32 * (cell_h + gap) + gap;
    let mut img = RgbImage::from_pixel(w, h, WHITE);
    for (row, p) in panels.iter().enumerate() {
        for (col, r) in p.iter().enumerate() {
            let s = scale(r);
            let (x0, y0) = (gap + col as u32 * (cell_w + gap), gap + row as u32 * (cell_h + gap));
            for y in 0..r.height() as u32 * s {
                for x in 0..r.width() as u32 * s {
                    let v = r.get(0, (y / s) as usize, (x / s) as usize);
                    let c = if col == 2 { diff_color(v) } else { ice_color(v) };
                    img.put_pixel(x0 + x, y0 + y, c);
                }
            }
        }
    }
    img.save(path).map_err(|e| io_err(path, e))
}
