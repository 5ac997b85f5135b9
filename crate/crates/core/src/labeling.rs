//! Reference ice/water labels from MSI thresholds and digitised polygons.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::raster::Raster;

/// Visible-band threshold separating ice (and cloud) from water.
pub const VISIBLE_THRESHOLD: f32 = 70.0;
/// SWIR threshold above which a pixel is cloud.
pub const CLOUD_THRESHOLD: f32 = 20.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PolygonRole {
    WaterUnderCloud,
    Land,
}

/// One polygon: its rings combine under the even-odd rule, so a second ring
/// inside the first is a hole.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Polygon {
    pub role: PolygonRole,
    pub rings: Vec<Vec<[f64; 2]>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PolygonSet {
    pub crs_id: String,
    pub polygons: Vec<Polygon>,
}

impl PolygonSet {
    pub fn empty(crs_id: impl Into<String>) -> Self {
        Self {
            crs_id: crs_id.into(),
            polygons: Vec::new(),
        }
    }

    /// Every ring needs at least three distinct vertices. A ring whose last
    /// vertex differs from its first is treated as implicitly closed.
    pub fn validate(&self) -> Result<()> {
        for p in &self.polygons {
            for ring in &p.rings {
                let open = match (ring.first(), ring.last()) {
                    (Some(a), Some(b)) if ring.len() > 1 && a == b => &ring[..ring.len() - 1],
                    _ => &ring[..],
                };
                if open.len() < 3 {
                    return Err(Error::DegenerateRing(open.len()));
                }
                if open.iter().flatten().any(|v| !v.is_finite()) {
                    return Err(Error::invalid("polygon vertices must be finite"));
                }
            }
        }
        Ok(())
    }

    pub fn with_role(&self, role: PolygonRole) -> PolygonSet {
        PolygonSet {
            crs_id: self.crs_id.clone(),
            polygons: self.polygons.iter().filter(|p| p.role == role).cloned().collect(),
        }
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let set: PolygonSet = serde_json::from_str(&text).map_err(|e| Error::Parse {
            path: path.into(),
            message: e.to_string(),
        })?;
        set.validate()?;
        Ok(set)
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, serde_json::to_string_pretty(self)?).map_err(|e| Error::io(path, e))
    }
}

fn on_segment(p: [f64; 2], a: [f64; 2], b: [f64; 2]) -> bool {
    let cross = (b[0] - a[0]) * (p[1] - a[1]) - (b[1] - a[1]) * (p[0] - a[0]);
    let scale = (b[0] - a[0]).abs().max((b[1] - a[1]).abs()).max(1.0);
    cross.abs() <= 1e-12 * scale * scale
        && p[0] >= a[0].min(b[0])
        && p[0] <= a[0].max(b[0])
        && p[1] >= a[1].min(b[1])
        && p[1] <= a[1].max(b[1])
}

fn edges(ring: &[[f64; 2]]) -> impl Iterator<Item = ([f64; 2], [f64; 2])> + '_ {
    (0..ring.len()).map(move |i| (ring[i], ring[(i + 1) % ring.len()]))
}

impl Polygon {
    /// Even-odd containment over all rings; points on any edge are inside.
    pub fn contains(&self, p: [f64; 2]) -> bool {
        let mut inside = false;
        for ring in &self.rings {
            for (a, b) in edges(ring) {
                if on_segment(p, a, b) {
                    return true;
                }
                if (a[1] > p[1]) != (b[1] > p[1]) {
                    let x = a[0] + (p[1] - a[1]) * (b[0] - a[0]) / (b[1] - a[1]);
                    if p[0] < x {
                        inside = !inside;
                    }
                }
            }
        }
        inside
    }

    fn bbox(&self) -> [f64; 4] {
        let mut bb = [f64::INFINITY, f64::INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY];
        for v in self.rings.iter().flatten() {
            bb = [bb[0].min(v[0]), bb[1].min(v[1]), bb[2].max(v[0]), bb[3].max(v[1])];
        }
        bb
    }
}

fn require_crs(set: &PolygonSet, r: &Raster) -> Result<()> {
    if set.crs_id != r.transform().crs_id {
        return Err(Error::CrsMismatch {
            left: set.crs_id.clone(),
            right: r.transform().crs_id.clone(),
        });
    }
    Ok(())
}

/// 1 where a pixel center lies inside any polygon of the set, else 0.
pub fn rasterize_polygons(set: &PolygonSet, template: &Raster) -> Result<Raster> {
    require_crs(set, template)?;
    set.validate()?;
    let (w, h) = (template.width(), template.height());
    let mut out = vec![0.0f32; w * h];
    let t = template.transform();
    for poly in &set.polygons {
        let bb = poly.bbox();
        // Candidate pixel range from the bounding box.
        let (c0, r0) = t.to_pixel(bb[0], bb[3]);
        let (c1, r1) = t.to_pixel(bb[2], bb[1]);
        let clamp = |v: f64, n: usize| v.max(0.0).min(n as f64) as usize;
        let (c0, c1) = (clamp(c0.floor() - 1.0, w), clamp(c1.ceil() + 1.0, w));
        let (r0, r1) = (clamp(r0.floor() - 1.0, h), clamp(r1.ceil() + 1.0, h));
        for row in r0..r1 {
            for col in c0..c1 {
                let (x, y) = t.pixel_center(col, row);
                if out[row * w + col] == 0.0 && poly.contains([x, y]) {
                    out[row * w + col] = 1.0;
                }
            }
        }
    }
    template.like(out)
}

/// 1 where `band >= t`, else 0; NaN stays NaN.
pub fn threshold_band(r: &Raster, band: usize, t: f32) -> Result<Raster> {
    r.check_band(band)?;
    if !t.is_finite() {
        return Err(Error::invalid("threshold must be finite"));
    }
    let data = r
        .band(band)
        .iter()
        .map(|&v| if v.is_nan() { f32::NAN } else { (v >= t) as u8 as f32 })
        .collect();
    r.like(data)
}

/// Cloud (1) where the SWIR band is at least `t_cloud`.
pub fn cloud_mask(msi: &Raster, swir_band: usize, t_cloud: f32) -> Result<Raster> {
    threshold_band(msi, swir_band, t_cloud)
}

/// Ice where the visible band passes `t_vis` and the pixel center is outside
/// every water polygon. Land polygons in the set are ignored.
pub fn build_reference(msi: &Raster, vis_band: usize, t_vis: f32, water: &PolygonSet) -> Result<Raster> {
    require_crs(water, msi)?;
    let mut label = threshold_band(msi, vis_band, t_vis)?;
    let mask = rasterize_polygons(&water.with_role(PolygonRole::WaterUnderCloud), msi)?;
    for (l, &m) in label.data_mut().iter_mut().zip(mask.data()) {
        if m == 1.0 && !l.is_nan() {
            *l = 0.0;
        }
    }
    Ok(label)
}

/// Check the label convention: every value is 0, 1 or NaN.
pub fn validate_labels(r: &Raster) -> Result<()> {
    match r.data().iter().find(|v| !(v.is_nan() || **v == 0.0 || **v == 1.0)) {
        Some(&v) => Err(Error::InvalidTarget(v as f64)),
        None => Ok(()),
    }
}
