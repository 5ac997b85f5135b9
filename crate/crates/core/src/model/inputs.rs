use serde::{Deserialize, Serialize};

use super::{ModelConfig, ModelKind, OutputGrid};
use crate::error::{Error, Result};
use crate::nn::Tensor;
use crate::raster::{normalize_in_place, resample, Raster, ResampleMethod};

/// Linear input scaling applied before any network sees a raster. Values are
/// mapped onto [-1, 1] with clamping.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Preprocess {
    /// SAR backscatter range in dB.
    pub sar_range: (f32, f32),
    /// MSI reflectance range (8-bit bands).
    pub msi_range: (f32, f32),
    /// MSI bands (visible, SWIR) stacked with SAR for the fusenet input.
    pub fusenet_bands: [usize; 2],
}

impl Default for Preprocess {
    fn default() -> Self {
        Self {
            sar_range: (-30.0, 0.0),
            msi_range: (0.0, 255.0),
            fusenet_bands: [0, 1],
        }
    }
}

/// The normalized tensors for one scene or patch, in the order the model's
/// inputs are declared.
#[derive(Clone, Debug)]
pub struct ModelInput {
    pub tensors: Vec<Tensor<f32>>,
}

impl ModelInput {
    pub fn refs(&self) -> Vec<&Tensor<f32>> {
        self.tensors.iter().collect()
    }

    pub fn stack(items: &[&ModelInput]) -> Result<ModelInput> {
        let first = items
            .first()
            .ok_or_else(|| Error::Shape("cannot stack zero inputs".into()))?;
        let tensors = (0..first.tensors.len())
            .map(|k| Tensor::stack(&items.iter().map(|m| m.tensors[k].clone()).collect::<Vec<_>>()))
            .collect::<Result<_>>()?;
        Ok(ModelInput { tensors })
    }
}

fn raster_tensor(r: &Raster) -> Tensor<f32> {
    Tensor::from_vec([1, r.bands(), r.height(), r.width()], r.data().to_vec()).expect("raster layout")
}

fn normalized(r: &Raster, (lo, hi): (f32, f32)) -> Raster {
    let mut out = r.clone();
    normalize_in_place(out.data_mut(), lo, hi);
    out
}

/// Stack the SAR image, area-averaged onto the MSI grid, with two MSI bands.
/// Values are stacked as given (no scaling).
pub fn fuse_inputs_for_fusenet(sar: &Raster, msi: &Raster, bands: [usize; 2]) -> Result<Tensor<f32>> {
    for b in bands {
        msi.check_band(b)?;
    }
    let coarse = resample(sar, msi.pixel_size(), ResampleMethod::AreaMean)?;
    if coarse.transform().crs_id != msi.transform().crs_id {
        return Err(Error::CrsMismatch {
            left: coarse.transform().crs_id.clone(),
            right: msi.transform().crs_id.clone(),
        });
    }
    let (a, b) = (coarse.bounds(), msi.bounds());
    let tol = msi.pixel_size() / 2.0;
    let aligned = (a.0 - b.0).abs() <= tol && (a.3 - b.3).abs() <= tol;
    if !aligned || coarse.width() != msi.width() || coarse.height() != msi.height() {
        return Err(Error::Geometry(format!(
            "SAR footprint {a:?} does not match MSI footprint {b:?}"
        )));
    }
    let mut data = Vec::with_capacity(3 * msi.width() * msi.height());
    data.extend_from_slice(coarse.band(0));
    data.extend_from_slice(msi.band(bands[0]));
    data.extend_from_slice(msi.band(bands[1]));
    Tensor::from_vec([1, 3, msi.height(), msi.width()], data)
}

impl Preprocess {
    /// Build the normalized input tensors `config.kind` expects.
    pub fn model_input(&self, config: &ModelConfig, sar: &Raster, msi: &Raster) -> Result<ModelInput> {
        if sar.bands() != config.sar_bands {
            return Err(Error::Shape(format!(
                "model expects {} SAR band(s), raster has {}",
                config.sar_bands,
                sar.bands()
            )));
        }
        if config.kind != ModelKind::SarOnly && msi.bands() != config.msi_bands {
            return Err(Error::Shape(format!(
                "model expects {} MSI band(s), raster has {}",
                config.msi_bands,
                msi.bands()
            )));
        }
        let tensors = match config.kind {
            ModelKind::VisualIced => vec![
                raster_tensor(&normalized(sar, self.sar_range)),
                raster_tensor(&normalized(msi, self.msi_range)),
            ],
            ModelKind::Fusenet => vec![fuse_inputs_for_fusenet(
                &normalized(sar, self.sar_range),
                &normalized(msi, self.msi_range),
                self.fusenet_bands,
            )?],
            ModelKind::MsiOnly => vec![raster_tensor(&normalized(msi, self.msi_range))],
            ModelKind::SarOnly => vec![raster_tensor(&normalized(sar, self.sar_range))],
        };
        Ok(ModelInput { tensors })
    }
}

/// Training target for a label on the MSI grid. For SAR-grid outputs the
/// label is repeated onto the 3x finer grid.
pub fn target_tensor(config: &ModelConfig, label: &Raster) -> Result<Tensor<f32>> {
    let (h, w) = (label.height(), label.width());
    match config.output_grid {
        OutputGrid::Msi240m => Tensor::from_vec([1, 1, h, w], label.band(0).to_vec()),
        OutputGrid::Sar80m => {
            let src = label.band(0);
            let mut data = Vec::with_capacity(9 * h * w);
            for r in 0..3 * h {
                let row = &src[(r / 3) * w..(r / 3 + 1) * w];
                data.extend(row.iter().flat_map(|&v| [v; 3]));
            }
            Tensor::from_vec([1, 1, 3 * h, 3 * w], data)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::raster::GeoTransform;

    fn pair(s: usize) -> (Raster, Raster) {
        let t80 = GeoTransform::new(0.0, 0.0, 80.0, "EPSG:3031").unwrap();
        let t240 = t80.with_pixel_size(240.0);
        let sar = Raster::filled(s, s, 1, 0.25, t80);
        let msi = Raster::from_data(s / 3, s / 3, 3, (0..3 * s * s / 9).map(|v| (v % 7) as f32).collect(), t240)
            .unwrap();
        (sar, msi)
    }

    #[test]
    fn fusenet_stack() {
        let (sar, msi) = pair(720);
        let t = fuse_inputs_for_fusenet(&sar, &msi, [0, 1]).unwrap();
        assert_eq!(t.shape(), [1, 3, 240, 240]);
        assert!(t.sample(0)[..240 * 240].iter().all(|&v| v == 0.25));
        assert_eq!(&t.sample(0)[240 * 240..2 * 240 * 240], msi.band(0));
        assert!(fuse_inputs_for_fusenet(&sar, &msi, [0, 3]).is_err());
    }

    #[test]
    fn fusenet_footprint_mismatch() {
        let (sar, msi) = pair(72);
        let shifted = sar.window(3, 0, 69, 72).unwrap();
        assert!(fuse_inputs_for_fusenet(&shifted, &msi, [0, 1]).is_err());
    }

    #[test]
    fn sar_grid_target() {
        let t = GeoTransform::new(0.0, 0.0, 240.0, "x").unwrap();
        let label = Raster::from_data(2, 1, 1, vec![0.0, 1.0], t).unwrap();
        let mut cfg = ModelConfig::new(ModelKind::SarOnly);
        let y = target_tensor(&cfg, &label).unwrap();
        assert_eq!(y.shape(), [1, 1, 3, 6]);
        assert_eq!(&y.data()[..6], &[0.0, 0.0, 0.0, 1.0, 1.0, 1.0]);
        cfg.output_grid = OutputGrid::Msi240m;
        assert_eq!(target_tensor(&cfg, &label).unwrap().len(), 2);
    }
}
