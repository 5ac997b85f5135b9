//! Scene-scale prediction by overlapping tiles whose borders are cropped.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{ModelGraph, OutputGrid, Preprocess};
use crate::raster::Raster;

/// Tile geometry in SAR pixels.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Tiling {
    pub tile: usize,
    pub overlap: usize,
    pub crop: usize,
}

impl Default for Tiling {
    fn default() -> Self {
        Self {
            tile: 720,
            overlap: 120,
            crop: 60,
        }
    }
}

impl Tiling {
    pub fn validate(&self) -> Result<()> {
        if self.overlap != 2 * self.crop {
            return Err(Error::invalid(format!(
                "overlap {} must be twice the crop {}",
                self.overlap, self.crop
            )));
        }
        if self.tile == 0 || self.overlap >= self.tile {
            return Err(Error::invalid(format!("overlap {} must be smaller than tile {}", self.overlap, self.tile)));
        }
        if !self.tile.is_multiple_of(3) || !self.crop.is_multiple_of(3) {
            return Err(Error::invalid("tile and crop must be multiples of 3 SAR pixels"));
        }
        Ok(())
    }

    pub fn stride(&self) -> usize {
        self.tile - self.overlap
    }
}

/// One tile along an axis: where it starts, how long it is, and the part of
/// the scene its prediction is written to (`[write_from, write_to)`), all in
/// SAR pixels.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Span {
    pub start: usize,
    pub len: usize,
    pub write_from: usize,
    pub write_to: usize,
}

/// Tiles along an axis of length `len`. Tiles sit on a regular stride; the
/// last one is pulled back to end at the scene border. Neighbours split their
/// overlap at its midpoint (rounded down to a multiple of 3), so each scene
/// pixel is written by exactly one tile.
pub fn spans(len: usize, t: &Tiling) -> Vec<Span> {
    if len <= t.tile {
        return vec![Span {
            start: 0,
            len,
            write_from: 0,
            write_to: len,
        }];
    }
    let mut starts = Vec::new();
    let mut s = 0;
    while s + t.tile < len {
        starts.push(s);
        s += t.stride();
    }
    starts.push(len - t.tile);
    let mut out: Vec<Span> = Vec::with_capacity(starts.len());
    for (i, &start) in starts.iter().enumerate() {
        let write_from = if i == 0 { 0 } else { out[i - 1].write_to };
        let write_to = match starts.get(i + 1) {
            Some(&next) => {
                let mid = (next + start + t.tile) / 2;
                mid - mid % 3
            }
            None => len,
        };
        out.push(Span {
            start,
            len: t.tile,
            write_from,
            write_to,
        });
    }
    out
}

/// Run the model on a whole scene at once.
pub fn predict_whole(model: &ModelGraph<f32>, pre: &Preprocess, sar: &Raster, msi: &Raster) -> Result<Raster> {
    let x = pre.model_input(model.config(), sar, msi)?;
    let y = model.infer(&x.refs())?;
    let template = match model.config().output_grid {
        OutputGrid::Msi240m => msi,
        OutputGrid::Sar80m => sar,
    };
    if y.h() != template.height() || y.w() != template.width() {
        return Err(Error::Shape(format!(
            "model produced {}x{}, output grid is {}x{}",
            y.h(),
            y.w(),
            template.height(),
            template.width()
        )));
    }
    Raster::from_data(template.width(), template.height(), 1, y.into_vec(), template.transform().clone())
}

/// Predict a scene tile by tile and mosaic the cropped tile predictions onto
/// the model's output grid.
pub fn predict_tiled(
    model: &ModelGraph<f32>,
    pre: &Preprocess,
    sar: &Raster,
    msi: &Raster,
    tiling: &Tiling,
) -> Result<Raster> {
    tiling.validate()?;
    let (w, h) = (sar.width(), sar.height());
    if w % 3 != 0 || h % 3 != 0 || msi.width() * 3 != w || msi.height() * 3 != h {
        return Err(Error::Geometry(format!(
            "SAR {}x{} and MSI {}x{} are not on nested 3:1 grids",
            w,
            h,
            msi.width(),
            msi.height()
        )));
    }
    let (cols, rows) = (spans(w, tiling), spans(h, tiling));
    if cols.len() == 1 && rows.len() == 1 {
        return predict_whole(model, pre, sar, msi);
    }
    let ratio = match model.config().output_grid {
        OutputGrid::Msi240m => 3,
        OutputGrid::Sar80m => 1,
    };
    let template = if ratio == 3 { msi } else { sar };
    let (ow, oh) = (w / ratio, h / ratio);
    let mut out = Raster::filled(ow, oh, 1, f32::NAN, template.transform().clone());
    for rs in &rows {
        for cs in &cols {
            let sar_t = sar.window(cs.start, rs.start, cs.len, rs.len)?;
            let msi_t = msi.window(cs.start / 3, rs.start / 3, cs.len / 3, rs.len / 3)?;
            let y = predict_whole(model, pre, &sar_t, &msi_t)?;
            let tw = cs.len / ratio;
            for r in rs.write_from / ratio..rs.write_to / ratio {
                let tr = r - rs.start / ratio;
                let c0 = cs.write_from / ratio;
                let c1 = cs.write_to / ratio;
                let src = &y.band(0)[tr * tw + c0 - cs.start / ratio..tr * tw + c1 - cs.start / ratio];
                out.band_mut(0)[r * ow + c0..r * ow + c1].copy_from_slice(src);
            }
        }
    }
    Ok(out)
}

/// `1` where confidence `>= t`, `0` below, NaN kept.
pub fn binarize(conf: &Raster, t: f64) -> Result<Raster> {
    if !(t > 0.0 && t < 1.0) {
        return Err(Error::invalid(format!("threshold {t} outside (0, 1)")));
    }
    let data = conf
        .data()
        .iter()
        .map(|&v| {
            if v.is_nan() {
                f32::NAN
            } else {
                (v as f64 >= t) as u8 as f32
            }
        })
        .collect();
    conf.like(data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::raster::GeoTransform;

    #[test]
    fn two_tiles_seam_at_660() {
        let s = spans(1320, &Tiling::default());
        assert_eq!(s.len(), 2);
        assert_eq!((s[0].start, s[0].write_to), (0, 660));
        assert_eq!((s[1].start, s[1].write_from, s[1].write_to), (600, 660, 1320));
    }

    #[test]
    fn spans_partition_the_axis() {
        let t = Tiling {
            tile: 96,
            overlap: 24,
            crop: 12,
        };
        for len in (96..600).step_by(3) {
            let s = spans(len, &t);
            assert_eq!(s[0].write_from, 0);
            assert_eq!(s.last().unwrap().write_to, len);
            for w in s.windows(2) {
                assert_eq!(w[0].write_to, w[1].write_from);
                assert!(w[1].write_from >= w[1].start && w[0].write_to <= w[0].start + w[0].len);
            }
        }
        assert_eq!(spans(60, &t).len(), 1);
    }

    #[test]
    fn binarize_convention() {
        let t = GeoTransform::new(0.0, 0.0, 1.0, "x").unwrap();
        let c = Raster::from_data(3, 1, 1, vec![0.95, 0.5, f32::NAN], t).unwrap();
        let b = binarize(&c, 0.9).unwrap();
        assert_eq!(&b.data()[..2], &[1.0, 0.0]);
        assert!(b.data()[2].is_nan());
        assert_eq!(binarize(&c, 0.5).unwrap().data()[1], 1.0);
        assert!(binarize(&c, 1.0).is_err());
        assert!(Tiling {
            tile: 720,
            overlap: 100,
            crop: 60
        }
        .validate()
        .is_err());
    }
}
