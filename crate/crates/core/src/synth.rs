//! Seeded synthetic MSI/SAR scene pairs with known ice, cloud and incidence.
//!
//! Ice and cloud are thresholded smooth random fields on the 240 m grid. The
//! MSI bands see ice and water only where there is no cloud; under cloud the
//! MSI values are drawn independently of the surface. The SAR image sees the
//! surface everywhere but with multiplicative speckle, textured ice and a
//! near-range brightening of water that mimics ice.

use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{
    class_flag, write_manifest, ManifestEntry, Modality, PatchClass, PatchTriplet, Provenance, SceneMeta,
};
use crate::error::{Error, Result};
use crate::raster::{write_raster, GeoTransform, Raster};

pub const SAR_PIXEL_M: f64 = 80.0;
pub const MSI_PIXEL_M: f64 = 240.0;
pub const CRS: &str = "EPSG:3031";

/// Padding of the surface field, MSI pixels. Bounds the usable drift offset.
const DRIFT_MARGIN: usize = 8;
pub const MAX_DRIFT_M: f64 = (DRIFT_MARGIN - 1) as f64 * MSI_PIXEL_M;

/// Band order of synthetic MSI rasters.
pub const MSI_BANDS: [&str; 3] = ["b3_visible", "b6_swir", "b7_swir"];

/// Incidence angle range across the swath, degrees.
pub const INCIDENCE_RANGE: (f32, f32) = (20.0, 45.0);

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthParams {
    pub seed: u64,
    /// Scene side in SAR pixels.
    pub size: usize,
    pub ice_fraction: f64,
    pub cloud_fraction: f64,
    /// Equivalent number of looks of the gamma speckle.
    pub speckle_looks: f64,
    /// Backscatter lift of water at the nearest range, dB.
    pub incidence_gradient: f64,
    /// Share of the scene where wind-roughened water backscatters like ice.
    pub rough_water_fraction: f64,
    /// Share of the scene where thin ice backscatters like calm water.
    pub dark_ice_fraction: f64,
    /// Shift of the SAR surface relative to the MSI surface, meters (east).
    pub drift_offset_m: f64,
    /// Box-blur radius of the random fields, MSI pixels.
    pub smoothness: usize,
    pub origin_x: f64,
    pub origin_y: f64,
}

impl Default for SynthParams {
    fn default() -> Self {
        Self {
            seed: 0,
            size: 192,
            ice_fraction: 0.5,
            cloud_fraction: 0.3,
            speckle_looks: 4.0,
            incidence_gradient: 6.0,
            rough_water_fraction: 0.2,
            dark_ice_fraction: 0.1,
            drift_offset_m: 0.0,
            smoothness: 4,
            origin_x: 0.0,
            origin_y: 0.0,
        }
    }
}

impl SynthParams {
    pub fn validate(&self) -> Result<()> {
        if self.size == 0 || !self.size.is_multiple_of(48) {
            return Err(Error::invalid(format!("scene size {} must be a positive multiple of 48", self.size)));
        }
        for (name, f) in [
            ("ice_fraction", self.ice_fraction),
            ("cloud_fraction", self.cloud_fraction),
            ("rough_water_fraction", self.rough_water_fraction),
            ("dark_ice_fraction", self.dark_ice_fraction),
        ] {
            if !(0.0..=1.0).contains(&f) {
                return Err(Error::invalid(format!("{name} {f} outside [0, 1]")));
            }
        }
        if !(self.speckle_looks >= 1.0 && self.speckle_looks.is_finite()) {
            return Err(Error::invalid("speckle_looks must be at least 1"));
        }
        if !(self.incidence_gradient >= 0.0 && self.incidence_gradient.is_finite()) {
            return Err(Error::invalid("incidence_gradient must be non-negative"));
        }
        if !(self.drift_offset_m.abs() <= MAX_DRIFT_M) {
            return Err(Error::invalid(format!("drift offset beyond {MAX_DRIFT_M} m")));
        }
        if self.smoothness == 0 {
            return Err(Error::invalid("smoothness must be positive"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct SynthScene {
    /// 3 bands (visible, SWIR, SWIR), 8-bit values, 240 m.
    pub msi: Raster,
    /// Backscatter in dB, 80 m.
    pub sar: Raster,
    /// True ice (1) / water (0) on the 240 m grid.
    pub label: Raster,
    /// True cloud (1) / clear (0) on the 240 m grid.
    pub cloud: Raster,
    /// Incidence angle in degrees, 80 m.
    pub incidence: Raster,
    /// Ice geometry as seen by the SAR image, 80 m.
    pub sar_truth: Raster,
}

impl SynthScene {
    /// The whole scene as one training patch.
    pub fn triplet(&self, scene_id: &str) -> Result<PatchTriplet> {
        let t = self.sar.transform();
        PatchTriplet::new(
            self.sar.clone(),
            self.msi.clone(),
            self.label.clone(),
            Provenance {
                msi_scene: format!("{scene_id}_msi"),
                sar_scene: format!("{scene_id}_sar"),
                origin_x: t.origin_x,
                origin_y: t.origin_y,
                augmentation: None,
            },
        )
    }
}

/// Three passes of a clamped-edge box blur, separable.
fn smooth(field: &mut [f64], n: usize, radius: usize) {
    let mut tmp = vec![0.0; n * n];
    for _ in 0..3 {
        for horizontal in [true, false] {
            for a in 0..n {
                let at = |b: usize| if horizontal { a * n + b } else { b * n + a };
                for b in 0..n {
                    let lo = b.saturating_sub(radius);
                    let hi = (b + radius).min(n - 1);
                    let s: f64 = (lo..=hi).map(|k| field[at(k)]).sum();
                    tmp[at(b)] = s / (hi - lo + 1) as f64;
                }
            }
            field.copy_from_slice(&tmp);
        }
    }
}

/// Binary field with exactly `round(fraction * n^2)` ones, the cells with the
/// largest smoothed noise values.
fn threshold_field(rng: &mut ChaCha8Rng, n: usize, radius: usize, fraction: f64) -> Vec<bool> {
    let mut f: Vec<f64> = (0..n * n).map(|_| rng.random::<f64>()).collect();
    smooth(&mut f, n, radius);
    let k = (fraction * (n * n) as f64).round() as usize;
    let mut order: Vec<usize> = (0..n * n).collect();
    order.sort_by(|&a, &b| f[b].total_cmp(&f[a]).then(a.cmp(&b)));
    let mut out = vec![false; n * n];
    for &i in &order[..k] {
        out[i] = true;
    }
    out
}

fn normal(mean: f64, sd: f64) -> Normal<f64> {
    Normal::new(mean, sd).expect("valid normal")
}

fn byte(v: f64) -> f32 {
    v.clamp(0.0, 255.0).round() as f32
}

/// Generate one scene.
pub fn generate(p: &SynthParams) -> Result<SynthScene> {
    p.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(p.seed);
    let s = p.size;
    let m = s / 3;
    let shift = (p.drift_offset_m / SAR_PIXEL_M).round() as isize;
    // The surface field is generated with a margin so drifted SAR pixels
    // still see surface.
    let margin = DRIFT_MARGIN;
    let mm = m + 2 * margin;
    let ice_big = threshold_field(&mut rng, mm, p.smoothness, p.ice_fraction);
    let ice_at = |r: usize, c: usize| ice_big[(r + margin) * mm + c + margin];
    let cloud = threshold_field(&mut rng, m, p.smoothness, p.cloud_fraction);
    // Slowly varying ice backscatter (dB offset).
    let mut texture: Vec<f64> = (0..m * m).map(|_| rng.random::<f64>() - 0.5).collect();
    smooth(&mut texture, m, 2);
    let sd = (texture.iter().map(|v| v * v).sum::<f64>() / (m * m) as f64).sqrt().max(1e-12);
    texture.iter_mut().for_each(|v| *v *= 3.0 / sd);
    let rough = threshold_field(&mut rng, m, p.smoothness, p.rough_water_fraction);
    let dark = threshold_field(&mut rng, m, p.smoothness, p.dark_ice_fraction);

    // Labels cover the interior of the margin-padded field, so the true ice
    // fraction of the scene is close to (not exactly) the target.
    let label: Vec<f32> = (0..m * m).map(|i| ice_at(i / m, i % m) as u8 as f32).collect();
    let cloud_f: Vec<f32> = cloud.iter().map(|&c| c as u8 as f32).collect();

    let ice_vis = normal(200.0, 10.0);
    let ice_sw6 = normal(12.0, 3.0);
    let ice_sw7 = normal(8.0, 2.0);
    let wat_vis = normal(25.0, 6.0);
    let wat_sw6 = normal(4.0, 1.5);
    let wat_sw7 = normal(3.0, 1.0);
    let cld_vis = normal(215.0, 12.0);
    let cld_sw6 = normal(160.0, 20.0);
    let cld_sw7 = normal(120.0, 15.0);
    let mut msi = vec![0.0f32; 3 * m * m];
    for i in 0..m * m {
        let (a, b, c) = if cloud[i] {
            (cld_vis.sample(&mut rng), cld_sw6.sample(&mut rng), cld_sw7.sample(&mut rng))
        } else if label[i] == 1.0 {
            (ice_vis.sample(&mut rng), ice_sw6.sample(&mut rng), ice_sw7.sample(&mut rng))
        } else {
            (wat_vis.sample(&mut rng), wat_sw6.sample(&mut rng), wat_sw7.sample(&mut rng))
        };
        msi[i] = byte(a);
        msi[m * m + i] = byte(b);
        msi[2 * m * m + i] = byte(c);
    }

    // Near range on the left or on the right, chosen per scene.
    let near_left = rng.random::<bool>();
    let (lo, hi) = INCIDENCE_RANGE;
    let incidence: Vec<f32> = (0..s * s)
        .map(|i| {
            let col = i % s;
            let t = (col as f32 + 0.5) / s as f32;
            let t = if near_left { t } else { 1.0 - t };
            lo + (hi - lo) * t
        })
        .collect();
    let speckle = Gamma::new(p.speckle_looks, 1.0 / p.speckle_looks).expect("valid gamma");
    let mut sar = vec![0.0f32; s * s];
    let mut sar_truth = vec![0.0f32; s * s];
    for r in 0..s {
        for c in 0..s {
            let sc = c as isize - shift;
            let (mr, mc) = (r / 3, sc.div_euclid(3));
            let ice = ice_big[(mr + margin) * mm + (mc + margin as isize) as usize];
            sar_truth[r * s + c] = ice as u8 as f32;
            let theta = incidence[r * s + c];
            let k = mr.min(m - 1) * m + mc.clamp(0, m as isize - 1) as usize;
            let db = if (ice && !dark[k]) || (!ice && rough[k]) {
                -10.0 + texture[k]
            } else {
                let near = ((hi - theta) / (hi - lo)) as f64;
                -20.0 + p.incidence_gradient * near * near
            };
            let linear = 10f64.powf(db / 10.0) * speckle.sample(&mut rng);
            sar[r * s + c] = (10.0 * linear.max(1e-6).log10()).clamp(-60.0, 20.0) as f32;
        }
    }

    let t80 = GeoTransform::new(p.origin_x, p.origin_y, SAR_PIXEL_M, CRS)?;
    let t240 = t80.with_pixel_size(MSI_PIXEL_M);
    Ok(SynthScene {
        msi: Raster::from_data(m, m, 3, msi, t240.clone())?
            .with_band_names(MSI_BANDS.iter().map(|s| s.to_string()).collect())?,
        sar: Raster::from_data(s, s, 1, sar, t80.clone())?.with_band_names(vec!["hh_db".into()])?,
        label: Raster::from_data(m, m, 1, label, t240.clone())?,
        cloud: Raster::from_data(m, m, 1, cloud_f, t240)?,
        incidence: Raster::from_data(s, s, 1, incidence, t80.clone())?,
        sar_truth: Raster::from_data(s, s, 1, sar_truth, t80)?,
    })
}

/// Per-scene parameter ranges, sampled uniformly.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CorpusRanges {
    pub size: usize,
    pub ice_fraction: (f64, f64),
    pub cloud_fraction: (f64, f64),
    pub speckle_looks: (f64, f64),
    pub incidence_gradient: (f64, f64),
    pub rough_water_fraction: (f64, f64),
    pub dark_ice_fraction: (f64, f64),
    pub drift_offset_m: (f64, f64),
    pub smoothness: usize,
}

impl Default for CorpusRanges {
    fn default() -> Self {
        Self {
            size: 192,
            ice_fraction: (0.2, 0.8),
            cloud_fraction: (0.1, 0.5),
            speckle_looks: (2.0, 5.0),
            incidence_gradient: (4.0, 9.0),
            rough_water_fraction: (0.1, 0.3),
            dark_ice_fraction: (0.0, 0.2),
            drift_offset_m: (0.0, 0.0),
            smoothness: 4,
        }
    }
}

fn draw(rng: &mut ChaCha8Rng, (a, b): (f64, f64)) -> f64 {
    if b > a {
        rng.random_range(a..b)
    } else {
        a
    }
}

/// Parameters of the `n` corpus scenes. Scenes are laid out on a row of
/// non-overlapping footprints.
pub fn corpus_params(n: usize, ranges: &CorpusRanges, seed: u64) -> Vec<SynthParams> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let stride = 2.0 * ranges.size as f64 * SAR_PIXEL_M;
    (0..n)
        .map(|i| SynthParams {
            seed: rng.random(),
            size: ranges.size,
            ice_fraction: draw(&mut rng, ranges.ice_fraction),
            cloud_fraction: draw(&mut rng, ranges.cloud_fraction),
            speckle_looks: draw(&mut rng, ranges.speckle_looks),
            incidence_gradient: draw(&mut rng, ranges.incidence_gradient),
            rough_water_fraction: draw(&mut rng, ranges.rough_water_fraction),
            dark_ice_fraction: draw(&mut rng, ranges.dark_ice_fraction),
            drift_offset_m: draw(&mut rng, ranges.drift_offset_m),
            smoothness: ranges.smoothness,
            origin_x: i as f64 * stride,
            origin_y: 0.0,
        })
        .collect()
}

pub fn scene_id(i: usize) -> String {
    format!("scene_{i:04}")
}

/// Generate `n` scenes into `out_dir`: one sub-directory of rasters per
/// scene, `manifest.jsonl` (one whole-scene patch per line), `scenes.csv`
/// and `params.json`.
pub fn generate_corpus(n: usize, ranges: &CorpusRanges, seed: u64, out_dir: &Path) -> Result<Vec<ManifestEntry>> {
    if n == 0 {
        return Err(Error::invalid("corpus needs at least one scene"));
    }
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let params = corpus_params(n, ranges, seed);
    let t0 = chrono::DateTime::from_timestamp(1_600_000_000, 0).expect("valid time");
    let per_scene = |(i, p): (usize, &SynthParams)| -> Result<(ManifestEntry, [SceneMeta; 2])> {
        let id = scene_id(i);
        let dir = out_dir.join(&id);
        std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        let sc = generate(p)?;
        let rel = |f: &str| PathBuf::from(&id).join(f);
        write_raster(&sc.sar, dir.join("sar.rgf"))?;
        write_raster(&sc.msi, dir.join("msi.rgf"))?;
        write_raster(&sc.label, dir.join("label.rgf"))?;
        write_raster(&sc.cloud, dir.join("cloud.rgf"))?;
        write_raster(&sc.incidence, dir.join("incidence.rgf"))?;
        let class = if sc.label.data().iter().all(|&v| v == 0.0) {
            PatchClass::PureWater
        } else if sc.label.data().iter().all(|&v| v == 1.0) {
            PatchClass::PureIce
        } else {
            PatchClass::Edge
        };
        let entry = ManifestEntry {
            sar_path: rel("sar.rgf"),
            msi_path: rel("msi.rgf"),
            label_path: rel("label.rgf"),
            origin_x: p.origin_x,
            origin_y: p.origin_y,
            kind_flags: vec![class_flag(class).to_string()],
            scene_id: Some(id.clone()),
            cloud_path: Some(rel("cloud.rgf")),
            incidence_path: Some(rel("incidence.rgf")),
        };
        let (xmin, ymin, xmax, ymax) = sc.sar.bounds();
        let meta = |suffix: &str, modality| SceneMeta {
            scene_id: format!("{id}_{suffix}"),
            modality,
            acquisition_time: t0 + chrono::Duration::days(i as i64),
            xmin,
            ymin,
            xmax,
            ymax,
            drift_velocity: 100.0,
        };
        Ok((entry, [meta("msi", Modality::Msi), meta("sar", Modality::Sar)]))
    };
    let scenes: Vec<(ManifestEntry, [SceneMeta; 2])> =
        params.par_iter().enumerate().map(per_scene).collect::<Result<_>>()?;
    let mut entries = Vec::with_capacity(n);
    let mut metas = Vec::with_capacity(2 * n);
    for (e, m) in scenes {
        entries.push(e);
        metas.extend(m);
    }
    write_manifest(&entries, out_dir.join("manifest.jsonl"))?;
    crate::dataset::write_scene_meta(&metas, out_dir.join("scenes.csv"))?;
    let pj = out_dir.join("params.json");
    let doc = serde_json::json!({ "n": n, "seed": seed, "ranges": ranges, "scenes": params });
    std::fs::write(&pj, serde_json::to_string_pretty(&doc)?).map_err(|e| Error::io(&pj, e))?;
    Ok(entries)
}
