//! Sea-ice concentration on coarse cells from a binary ice mask, and
//! comparison of two concentration grids.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::raster::{GeoTransform, Raster};

pub const DEFAULT_CELL_M: f64 = 6250.0;

/// Concentration per cell together with the integer pixel counts behind it.
#[derive(Clone, Debug)]
pub struct SicGrid {
    /// One band, `ice / ocean` per cell, NaN where a cell holds no ocean.
    pub raster: Raster,
    pub ice: Vec<u64>,
    pub ocean: Vec<u64>,
}

impl SicGrid {
    /// Ice fraction over all ocean pixels, from the counts.
    pub fn ocean_weighted_mean(&self) -> Option<f64> {
        let ocean: u64 = self.ocean.iter().sum();
        (ocean > 0).then(|| self.ice.iter().sum::<u64>() as f64 / ocean as f64)
    }
}

/// Average `mask` (1 ice, 0 water, NaN unknown) over square cells of
/// `cell_m` meters anchored at the raster origin. A pixel belongs to the cell
/// containing its center. Pixels flagged 1 in `land` are left out of both the
/// ice count and the ocean count.
pub fn downscale_sic(mask: &Raster, land: Option<&Raster>, cell_m: f64) -> Result<SicGrid> {
    if mask.bands() != 1 {
        return Err(Error::Shape("ice mask must have one band".into()));
    }
    if let Some(l) = land {
        mask.require_same_grid(l, "land mask")?;
    }
    if !(cell_m > 0.0 && cell_m.is_finite()) || cell_m < mask.pixel_size() {
        return Err(Error::invalid(format!(
            "cell size {cell_m} must be at least the pixel size {}",
            mask.pixel_size()
        )));
    }
    let px = mask.pixel_size();
    let cw = ((mask.width() as f64 * px) / cell_m).ceil() as usize;
    let ch = ((mask.height() as f64 * px) / cell_m).ceil() as usize;
    let cell_of = |i: usize| (((i as f64 + 0.5) * px) / cell_m).floor() as usize;
    let mut ice = vec![0u64; cw * ch];
    let mut ocean = vec![0u64; cw * ch];
    for r in 0..mask.height() {
        let cr = cell_of(r);
        for c in 0..mask.width() {
            let i = r * mask.width() + c;
            let v = mask.data()[i];
            if v.is_nan() || land.is_some_and(|l| l.data()[i] != 0.0) {
                continue;
            }
            let k = cr * cw + cell_of(c);
            ocean[k] += 1;
            if v >= 0.5 {
                ice[k] += 1;
            }
        }
    }
    let data = ice
        .iter()
        .zip(&ocean)
        .map(|(&i, &o)| if o == 0 { f32::NAN } else { (i as f64 / o as f64) as f32 })
        .collect();
    let t = mask.transform();
    let transform = GeoTransform::new(t.origin_x, t.origin_y, cell_m, t.crs_id.clone())?;
    Ok(SicGrid {
        raster: Raster::from_data(cw, ch, 1, data, transform)?,
        ice,
        ocean,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CellRow {
    pub row: usize,
    pub col: usize,
    pub a: f32,
    pub b: f32,
    pub diff: f32,
    pub coastal: Option<bool>,
}

#[derive(Clone, Debug, Serialize)]
pub struct SicComparison {
    /// `a - b` on `a`'s grid, NaN where either side is NaN or `b` has no cell.
    #[serde(skip)]
    pub diff: Raster,
    pub rows: Vec<CellRow>,
    pub bias: Option<f64>,
    pub mae: Option<f64>,
    pub compared: usize,
    pub excluded: usize,
}

/// Compare two concentration rasters cell by cell. `b` is aligned to `a` by
/// the nearest whole-cell shift; grids must share CRS and cell size.
/// `coast` is an optional `(distance raster on a's grid, threshold)` pair
/// that flags cells nearer to the coast than the threshold.
pub fn compare_sic(a: &Raster, b: &Raster, coast: Option<(&Raster, f64)>) -> Result<SicComparison> {
    let (ta, tb) = (a.transform(), b.transform());
    if ta.crs_id != tb.crs_id {
        return Err(Error::CrsMismatch {
            left: ta.crs_id.clone(),
            right: tb.crs_id.clone(),
        });
    }
    let cell = ta.pixel_size;
    if (cell - tb.pixel_size).abs() > 1e-9 * cell {
        return Err(Error::Geometry(format!("cell sizes {} and {} differ", cell, tb.pixel_size)));
    }
    if let Some((d, _)) = coast {
        a.require_same_grid(d, "coast distance")?;
    }
    // Column/row of b that sits on a's (0, 0).
    let dx = ((ta.origin_x - tb.origin_x) / cell).round() as isize;
    let dy = ((tb.origin_y - ta.origin_y) / cell).round() as isize;
    let mut diff = vec![f32::NAN; a.width() * a.height()];
    let mut rows = Vec::new();
    let (mut sum, mut abs, mut n, mut excluded) = (0.0f64, 0.0f64, 0usize, 0usize);
    for r in 0..a.height() {
        for c in 0..a.width() {
            let (br, bc) = (r as isize + dy, c as isize + dx);
            let vb = if br >= 0 && bc >= 0 && (br as usize) < b.height() && (bc as usize) < b.width() {
                b.get(0, br as usize, bc as usize)
            } else {
                f32::NAN
            };
            let va = a.get(0, r, c);
            if va.is_nan() || vb.is_nan() {
                excluded += 1;
                continue;
            }
            let d = va - vb;
            diff[r * a.width() + c] = d;
            sum += d as f64;
            abs += (d as f64).abs();
            n += 1;
            rows.push(CellRow {
                row: r,
                col: c,
                a: va,
                b: vb,
                diff: d,
                coastal: coast.map(|(dist, t)| (dist.get(0, r, c) as f64) < t),
            });
        }
    }
    Ok(SicComparison {
        diff: a.extract_band(0)?.like(diff)?,
        rows,
        bias: (n > 0).then(|| sum / n as f64),
        mae: (n > 0).then(|| abs / n as f64),
        compared: n,
        excluded,
    })
}

impl SicComparison {
    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut w = csv::Writer::from_path(path)?;
        for r in &self.rows {
            w.serialize(r)?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeriesRow {
    pub date: String,
    pub mean_a: Option<f64>,
    pub mean_b: Option<f64>,
    pub bias: Option<f64>,
    pub mae: Option<f64>,
    pub cells: usize,
}

fn nan_mean(r: &Raster) -> Option<f64> {
    let v: Vec<f64> = r.data().iter().filter(|x| !x.is_nan()).map(|&x| x as f64).collect();
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

/// One row per dated pair of grids.
pub fn sic_time_series(items: &[(String, &Raster, &Raster)]) -> Result<Vec<SeriesRow>> {
    items
        .iter()
        .map(|(date, a, b)| {
            let c = compare_sic(a, b, None)?;
            Ok(SeriesRow {
                date: date.clone(),
                mean_a: nan_mean(a),
                mean_b: nan_mean(b),
                bias: c.bias,
                mae: c.mae,
                cells: c.compared,
            })
        })
        .collect()
}

pub fn write_series_csv(rows: &[SeriesRow], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid(w: usize, h: usize, px: f64, v: Vec<f32>) -> Raster {
        Raster::from_data(w, h, 1, v, GeoTransform::new(0.0, 0.0, px, "x").unwrap()).unwrap()
    }

    #[test]
    fn cell_examples() {
        // 4x4 pixels of 1 m, cells of 4 m.
        let full = downscale_sic(&grid(4, 4, 1.0, vec![1.0; 16]), None, 4.0).unwrap();
        assert_eq!(full.raster.data(), &[1.0]);
        let half: Vec<f32> = (0..16).map(|i| (i % 4 < 2) as u8 as f32).collect();
        assert_eq!(downscale_sic(&grid(4, 4, 1.0, half), None, 4.0).unwrap().raster.data(), &[0.5]);
        // three quarters land (with water under it), last quarter ice
        let land: Vec<f32> = (0..16).map(|i| (i >= 4) as u8 as f32).collect();
        let mask: Vec<f32> = (0..16).map(|i| (i < 4) as u8 as f32).collect();
        let s = downscale_sic(&grid(4, 4, 1.0, mask), Some(&grid(4, 4, 1.0, land.clone())), 4.0).unwrap();
        assert_eq!(s.raster.data(), &[1.0]);
        let all_land = downscale_sic(&grid(4, 4, 1.0, vec![0.0; 16]), Some(&grid(4, 4, 1.0, vec![1.0; 16])), 4.0)
            .unwrap();
        assert!(all_land.raster.data()[0].is_nan());
    }

    #[test]
    fn non_integer_cells_use_centers() {
        let s = downscale_sic(&grid(52, 1, 240.0, vec![1.0; 52]), None, 6250.0).unwrap();
        assert_eq!(s.raster.width(), 2);
        assert_eq!(s.ocean, vec![26, 26]);
        let s = downscale_sic(&grid(53, 1, 240.0, vec![1.0; 53]), None, 6250.0).unwrap();
        assert_eq!(s.ocean, vec![26, 26, 1]);
    }

    #[test]
    fn compare_bias() {
        let a = grid(3, 1, 10.0, vec![0.2, 0.5, f32::NAN]);
        let b = grid(3, 1, 10.0, vec![0.3, 0.6, 0.1]);
        let c = compare_sic(&a, &b, None).unwrap();
        assert!((c.bias.unwrap() + 0.1).abs() < 1e-6);
        assert_eq!((c.compared, c.excluded), (2, 1));
        let same = compare_sic(&a, &a, None).unwrap();
        assert_eq!((same.bias, same.mae), (Some(0.0), Some(0.0)));
    }
}
