//! Modality importance by permutation: swap a scene's SAR image for one from
//! elsewhere, predict again, and look at how the output moved under cloud and
//! in clear sky.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::inference::predict_whole;
use crate::labeling::cloud_mask;
use crate::model::{ModelGraph, OutputGrid, Preprocess};
use crate::raster::Raster;

pub const BIN_WIDTH: f64 = 0.05;
pub const BINS: usize = 40;

/// Running count, mean and standard deviation.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Moments {
    pub count: u64,
    pub sum: f64,
    pub sum_sq: f64,
}

impl Moments {
    pub fn push(&mut self, v: f64) {
        self.count += 1;
        self.sum += v;
        self.sum_sq += v * v;
    }

    pub fn merge(&self, o: &Moments) -> Moments {
        Moments {
            count: self.count + o.count,
            sum: self.sum + o.sum,
            sum_sq: self.sum_sq + o.sum_sq,
        }
    }

    pub fn mean(&self) -> Option<f64> {
        (self.count > 0).then(|| self.sum / self.count as f64)
    }

    /// Population standard deviation.
    pub fn std(&self) -> Option<f64> {
        let m = self.mean()?;
        Some((self.sum_sq / self.count as f64 - m * m).max(0.0).sqrt())
    }
}

/// Counts of differences in 40 bins of width 0.05 covering [-1, 1]. The
/// value 1 falls into the last bin.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub counts: Vec<u64>,
}

impl Default for Histogram {
    fn default() -> Self {
        Self { counts: vec![0; BINS] }
    }
}

impl Histogram {
    pub fn bin(v: f64) -> usize {
        (((v + 1.0) / BIN_WIDTH).floor().max(0.0) as usize).min(BINS - 1)
    }

    pub fn push(&mut self, v: f64) {
        self.counts[Self::bin(v)] += 1;
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    /// `(lower, upper)` edges of bin `i`.
    pub fn edges(i: usize) -> (f64, f64) {
        let lo = -1.0 + i as f64 * BIN_WIDTH;
        (lo, lo + BIN_WIDTH)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunStats {
    pub original: String,
    pub permuted: String,
    pub cloud: Moments,
    pub clear: Moments,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PermutationReport {
    pub runs: Vec<RunStats>,
    pub cloud: Moments,
    pub clear: Moments,
    pub histogram: Histogram,
    pub cloud_histogram: Histogram,
    pub clear_histogram: Histogram,
    /// Permutations that could not be fitted, with the reason.
    pub skipped: Vec<String>,
}

impl PermutationReport {
    pub fn overall(&self) -> Moments {
        self.cloud.merge(&self.clear)
    }

    /// Add one difference raster (original minus permuted) partitioned by a
    /// cloud mask on the same grid.
    pub fn add(&mut self, original: &str, permuted: &str, diff: &Raster, cloud: &Raster) -> Result<()> {
        diff.require_same_grid(cloud, "cloud mask")?;
        let mut run = RunStats {
            original: original.into(),
            permuted: permuted.into(),
            cloud: Moments::default(),
            clear: Moments::default(),
        };
        for (&d, &c) in diff.data().iter().zip(cloud.data()) {
            if d.is_nan() || c.is_nan() {
                continue;
            }
            let d = d as f64;
            self.histogram.push(d);
            if c == 1.0 {
                run.cloud.push(d);
                self.cloud_histogram.push(d);
            } else {
                run.clear.push(d);
                self.clear_histogram.push(d);
            }
        }
        self.cloud = self.cloud.merge(&run.cloud);
        self.clear = self.clear.merge(&run.clear);
        self.runs.push(run);
        Ok(())
    }
}

/// Center-crop `sar` onto the grid of `like` (same size, same transform).
/// Fails when `sar` is smaller.
pub fn fit_to(sar: &Raster, like: &Raster) -> Result<Raster> {
    if sar.pixel_size() != like.pixel_size() || sar.bands() != like.bands() {
        return Err(Error::Geometry("permuted SAR has a different resolution or band count".into()));
    }
    if sar.width() < like.width() || sar.height() < like.height() {
        return Err(Error::Geometry(format!(
            "permuted SAR {}x{} is smaller than {}x{}",
            sar.width(),
            sar.height(),
            like.width(),
            like.height()
        )));
    }
    let c0 = (sar.width() - like.width()) / 2;
    let r0 = (sar.height() - like.height()) / 2;
    let w = sar.window(c0, r0, like.width(), like.height())?;
    Raster::from_data(like.width(), like.height(), like.bands(), w.into_data(), like.transform().clone())
}

/// An original scene for [`permute_and_predict`].
pub struct Original<'a> {
    pub id: &'a str,
    pub msi: &'a Raster,
    pub sar: &'a Raster,
}

/// Predict every original with its own SAR and with each permuted SAR, and
/// accumulate signed differences split by the MSI cloud mask.
pub fn permute_and_predict(
    model: &ModelGraph<f32>,
    pre: &Preprocess,
    originals: &[Original<'_>],
    permuted: &[(&str, &Raster)],
    swir_band: usize,
    cloud_t: f32,
) -> Result<PermutationReport> {
    let mut report = PermutationReport::default();
    for o in originals {
        let base = predict_whole(model, pre, o.sar, o.msi)?;
        let mut cloud = cloud_mask(o.msi, swir_band, cloud_t)?;
        if model.config().output_grid == OutputGrid::Sar80m {
            cloud = crate::raster::resample(&cloud, base.pixel_size(), crate::raster::ResampleMethod::Nearest)?;
        }
        for &(pid, p) in permuted {
            let fitted = match fit_to(p, o.sar) {
                Ok(f) => f,
                Err(e) => {
                    log::warn!("skipping {pid} for {}: {e}", o.id);
                    report.skipped.push(format!("{}/{pid}: {e}", o.id));
                    continue;
                }
            };
            let y = predict_whole(model, pre, &fitted, o.msi)?;
            let diff: Vec<f32> = base.data().iter().zip(y.data()).map(|(a, b)| a - b).collect();
            report.add(o.id, pid, &base.like(diff)?, &cloud)?;
        }
    }
    Ok(report)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImportanceRow {
    pub partition: String,
    pub count: u64,
    pub mean: Option<f64>,
    pub std: Option<f64>,
}

/// Overall, cloud and clear statistics. A partition without pixels has
/// `None` for its mean and deviation.
pub fn importance_summary(r: &PermutationReport) -> Result<Vec<ImportanceRow>> {
    if r.runs.is_empty() {
        return Err(Error::invalid("permutation report has no runs"));
    }
    Ok([("overall", r.overall()), ("cloud", r.cloud), ("clear", r.clear)]
        .into_iter()
        .map(|(name, m)| ImportanceRow {
            partition: name.into(),
            count: m.count,
            mean: m.mean(),
            std: m.std(),
        })
        .collect())
}

pub fn write_histogram_csv(r: &PermutationReport, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["bin_lower", "bin_upper", "count", "cloud", "clear"])?;
    for i in 0..BINS {
        let (lo, hi) = Histogram::edges(i);
        w.write_record([
            format!("{lo:.2}"),
            format!("{hi:.2}"),
            r.histogram.counts[i].to_string(),
            r.cloud_histogram.counts[i].to_string(),
            r.clear_histogram.counts[i].to_string(),
        ])?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::raster::GeoTransform;

    fn r(v: Vec<f32>) -> Raster {
        Raster::from_data(v.len(), 1, 1, v, GeoTransform::new(0.0, 0.0, 1.0, "x").unwrap()).unwrap()
    }

    #[test]
    fn constant_differences() {
        let mut rep = PermutationReport::default();
        rep.add("a", "b", &r(vec![0.5; 8]), &r(vec![0.0; 8])).unwrap();
        let s = importance_summary(&rep).unwrap();
        assert_eq!(s[0].mean, Some(0.5));
        assert_eq!(s[0].std, Some(0.0));
        assert_eq!(s[1].count, 0);
        assert_eq!(s[1].mean, None);
        assert_eq!(rep.histogram.total(), 8);
    }

    #[test]
    fn symmetric_and_pooled() {
        let mut rep = PermutationReport::default();
        rep.add("a", "b", &r(vec![0.25, -0.25, 0.75, -0.75]), &r(vec![1.0, 1.0, 0.0, 0.0]))
            .unwrap();
        assert_eq!(rep.overall().mean(), Some(0.0));
        assert_eq!(rep.overall().count, rep.cloud.count + rep.clear.count);
        assert_eq!(Histogram::bin(1.0), BINS - 1);
        assert_eq!(Histogram::bin(-1.0), 0);
        assert_eq!(Histogram::bin(0.0), 20);
    }

    #[test]
    fn fit_rejects_small() {
        let big = Raster::filled(6, 6, 1, 1.0, GeoTransform::new(5.0, 5.0, 1.0, "x").unwrap());
        let small = Raster::filled(4, 4, 1, 0.0, GeoTransform::new(0.0, 0.0, 1.0, "x").unwrap());
        let f = fit_to(&big, &small).unwrap();
        assert!(f.same_grid(&small));
        assert!(fit_to(&small, &big).is_err());
    }
}
