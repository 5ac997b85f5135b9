//! Pixel confusion counts, accuracy scores, threshold sweeps and the McNemar
//! test. Ice (1) is the positive class.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::raster::Raster;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub tp: u64,
    pub tn: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
}

impl ConfusionCounts {
    pub fn new(tp: u64, tn: u64, fp: u64, fn_: u64) -> Self {
        Self { tp, tn, fp, fn_ }
    }

    pub fn total(&self) -> u64 {
        self.tp + self.tn + self.fp + self.fn_
    }

    pub fn add(&self, o: &ConfusionCounts) -> ConfusionCounts {
        ConfusionCounts::new(self.tp + o.tp, self.tn + o.tn, self.fp + o.fp, self.fn_ + o.fn_)
    }
}

fn check_binary(r: &Raster, what: &str) -> Result<()> {
    if r.bands() != 1 {
        return Err(Error::Shape(format!("{what} must have one band, has {}", r.bands())));
    }
    Ok(())
}

/// Count agreement between a binary prediction and a binary reference over
/// pixels where both are defined and `mask` (if any) is 1.
pub fn confusion(pred: &Raster, reference: &Raster, mask: Option<&Raster>) -> Result<ConfusionCounts> {
    check_binary(pred, "prediction")?;
    check_binary(reference, "reference")?;
    pred.require_same_grid(reference, "reference")?;
    if let Some(m) = mask {
        pred.require_same_grid(m, "mask")?;
    }
    let mut c = ConfusionCounts::default();
    for (i, (&p, &r)) in pred.data().iter().zip(reference.data()).enumerate() {
        if p.is_nan() || r.is_nan() || mask.is_some_and(|m| m.data()[i] != 1.0) {
            continue;
        }
        match (p >= 0.5, r >= 0.5) {
            (true, true) => c.tp += 1,
            (false, false) => c.tn += 1,
            (true, false) => c.fp += 1,
            (false, true) => c.fn_ += 1,
        }
    }
    Ok(c)
}

/// Scores derived from one confusion matrix. `None` marks a 0/0 ratio.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub binary_accuracy: Option<f64>,
    pub user_accuracy: Option<f64>,
    pub producer_accuracy: Option<f64>,
    pub f1: Option<f64>,
}

fn ratio(num: u64, den: u64) -> Option<f64> {
    (den > 0).then(|| num as f64 / den as f64)
}

pub fn metrics(c: &ConfusionCounts) -> Metrics {
    let user = ratio(c.tp, c.tp + c.fp);
    let producer = ratio(c.tp, c.tp + c.fn_);
    let f1 = match (user, producer) {
        (Some(u), Some(p)) if u + p > 0.0 => Some(2.0 * u * p / (u + p)),
        _ => None,
    };
    Metrics {
        binary_accuracy: ratio(c.tp + c.tn, c.total()),
        user_accuracy: user,
        producer_accuracy: producer,
        f1,
    }
}

/// Mean and population standard deviation of the defined entries.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Stat {
    pub mean: Option<f64>,
    pub std: Option<f64>,
    pub defined: usize,
    pub undefined: usize,
}

impl Stat {
    pub fn of(values: impl IntoIterator<Item = Option<f64>>) -> Stat {
        let mut vals = Vec::new();
        let mut undefined = 0;
        for v in values {
            match v {
                Some(x) => vals.push(x),
                None => undefined += 1,
            }
        }
        if vals.is_empty() {
            return Stat {
                undefined,
                ..Stat::default()
            };
        }
        let n = vals.len() as f64;
        let mean = vals.iter().sum::<f64>() / n;
        let var = vals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        Stat {
            mean: Some(mean),
            std: Some(var.sqrt()),
            defined: vals.len(),
            undefined,
        }
    }
}

/// Unweighted mean over images of each score.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SetSummary {
    pub images: usize,
    pub binary_accuracy: Stat,
    pub user_accuracy: Stat,
    pub producer_accuracy: Stat,
    pub f1: Stat,
}

pub fn summarize<'a>(ms: impl IntoIterator<Item = &'a Metrics>) -> SetSummary {
    let ms: Vec<&Metrics> = ms.into_iter().collect();
    SetSummary {
        images: ms.len(),
        binary_accuracy: Stat::of(ms.iter().map(|m| m.binary_accuracy)),
        user_accuracy: Stat::of(ms.iter().map(|m| m.user_accuracy)),
        producer_accuracy: Stat::of(ms.iter().map(|m| m.producer_accuracy)),
        f1: Stat::of(ms.iter().map(|m| m.f1)),
    }
}

/// Per-image evaluation row, tagged with a caller-chosen group.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImageResult {
    pub image: String,
    pub group: String,
    pub threshold: f64,
    pub counts: ConfusionCounts,
    pub metrics: Metrics,
    pub band_fraction: Option<f64>,
}

pub fn grouped_summaries(rows: &[ImageResult]) -> BTreeMap<String, SetSummary> {
    let mut groups: BTreeMap<String, Vec<&Metrics>> = BTreeMap::new();
    for r in rows {
        groups.entry(r.group.clone()).or_default().push(&r.metrics);
    }
    groups.into_iter().map(|(g, ms)| (g, summarize(ms))).collect()
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x}")).unwrap_or_default()
}

pub fn write_results_csv(rows: &[ImageResult], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut w = csv::Writer::from_path(path)?;
    w.write_record([
        "image",
        "group",
        "threshold",
        "tp",
        "tn",
        "fp",
        "fn",
        "binary_accuracy",
        "user_accuracy",
        "producer_accuracy",
        "f1",
        "band_fraction",
    ])?;
    for r in rows {
        let c = r.counts;
        let m = r.metrics;
        w.write_record([
            r.image.clone(),
            r.group.clone(),
            format!("{}", r.threshold),
            c.tp.to_string(),
            c.tn.to_string(),
            c.fp.to_string(),
            c.fn_.to_string(),
            opt(m.binary_accuracy),
            opt(m.user_accuracy),
            opt(m.producer_accuracy),
            opt(m.f1),
            opt(r.band_fraction),
        ])?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// The nine thresholds 0.1, 0.2, ..., 0.9.
pub fn default_thresholds() -> Vec<f64> {
    (1..=9).map(|i| i as f64 / 10.0).collect()
}

pub const BAND: (f32, f32) = (0.05, 0.95);

/// Fraction of defined (and masked-in) confidences strictly inside `BAND`.
pub fn band_fraction(conf: &Raster, mask: Option<&Raster>) -> Result<Option<f64>> {
    if let Some(m) = mask {
        conf.require_same_grid(m, "mask")?;
    }
    let (mut inside, mut n) = (0u64, 0u64);
    for (i, &v) in conf.data().iter().enumerate() {
        if v.is_nan() || mask.is_some_and(|m| m.data()[i] != 1.0) {
            continue;
        }
        n += 1;
        if v > BAND.0 && v < BAND.1 {
            inside += 1;
        }
    }
    Ok(ratio(inside, n))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub threshold: f64,
    pub ice_pixels: u64,
    pub counts: ConfusionCounts,
    pub metrics: Metrics,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Sweep {
    pub rows: Vec<SweepRow>,
    pub band_fraction: Option<f64>,
}

/// Binarize `conf` at every threshold (`>= t` is ice) and score it.
pub fn threshold_sweep(conf: &Raster, reference: &Raster, thresholds: &[f64], mask: Option<&Raster>) -> Result<Sweep> {
    check_binary(conf, "confidence")?;
    for &t in thresholds {
        if !(t > 0.0 && t < 1.0) {
            return Err(Error::invalid(format!("threshold {t} outside (0, 1)")));
        }
    }
    let rows = thresholds
        .iter()
        .map(|&t| {
            let bin = crate::inference::binarize(conf, t)?;
            let counts = confusion(&bin, reference, mask)?;
            Ok(SweepRow {
                threshold: t,
                ice_pixels: counts.tp + counts.fp,
                counts,
                metrics: metrics(&counts),
            })
        })
        .collect::<Result<_>>()?;
    Ok(Sweep {
        rows,
        band_fraction: band_fraction(conf, mask)?,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct McNemar {
    /// A correct, B wrong.
    pub t_v: u64,
    /// A wrong, B correct.
    pub f_v: u64,
    /// `None` when the classifiers never disagree.
    pub statistic: Option<f64>,
    pub p_value: Option<f64>,
}

impl McNemar {
    pub fn from_counts(t_v: u64, f_v: u64) -> McNemar {
        let n = t_v + f_v;
        if n == 0 {
            return McNemar {
                t_v,
                f_v,
                statistic: None,
                p_value: None,
            };
        }
        let d = t_v as f64 - f_v as f64;
        let m = d * d / n as f64;
        McNemar {
            t_v,
            f_v,
            statistic: Some(m),
            p_value: Some(libm::erfc((m / 2.0).sqrt())),
        }
    }

    pub fn significant(&self, alpha: f64) -> Option<bool> {
        self.p_value.map(|p| p < alpha)
    }
}

pub fn mcnemar(a: &Raster, b: &Raster, reference: &Raster, mask: Option<&Raster>) -> Result<McNemar> {
    for (r, what) in [(a, "prediction A"), (b, "prediction B"), (reference, "reference")] {
        check_binary(r, what)?;
    }
    a.require_same_grid(b, "prediction B")?;
    a.require_same_grid(reference, "reference")?;
    if let Some(m) = mask {
        a.require_same_grid(m, "mask")?;
    }
    let (mut t_v, mut f_v) = (0, 0);
    for i in 0..a.data().len() {
        let (x, y, r) = (a.data()[i], b.data()[i], reference.data()[i]);
        if x.is_nan() || y.is_nan() || r.is_nan() || mask.is_some_and(|m| m.data()[i] != 1.0) {
            continue;
        }
        let truth = r >= 0.5;
        match ((x >= 0.5) == truth, (y >= 0.5) == truth) {
            (true, false) => t_v += 1,
            (false, true) => f_v += 1,
            _ => {}
        }
    }
    Ok(McNemar::from_counts(t_v, f_v))
}

pub const LOW_INCIDENCE_DEG: f32 = 25.0;

/// 1 where the incidence angle is below `max_deg`, 0 elsewhere, NaN where
/// the angle is unknown.
pub fn incidence_mask(incidence: &Raster, max_deg: f32) -> Result<Raster> {
    check_binary(incidence, "incidence")?;
    let data = incidence
        .data()
        .iter()
        .map(|&v| if v.is_nan() { f32::NAN } else { (v < max_deg) as u8 as f32 })
        .collect();
    incidence.like(data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::raster::GeoTransform;

    fn raster(v: Vec<f32>) -> Raster {
        let n = v.len();
        Raster::from_data(n, 1, 1, v, GeoTransform::new(0.0, 0.0, 1.0, "x").unwrap()).unwrap()
    }

    #[test]
    fn identity_counts() {
        let v: Vec<f32> = (0..100).map(|i| (i < 60) as u8 as f32).collect();
        let r = raster(v);
        assert_eq!(confusion(&r, &r, None).unwrap(), ConfusionCounts::new(60, 40, 0, 0));
        let ice = raster(vec![1.0; 100]);
        let water = raster(vec![0.0; 100]);
        assert_eq!(confusion(&ice, &water, None).unwrap().fp, 100);
    }

    #[test]
    fn hand_metrics() {
        let m = metrics(&ConfusionCounts::new(9, 0, 1, 0));
        assert_eq!(m.binary_accuracy, Some(0.9));
        assert_eq!(m.user_accuracy, Some(0.9));
        assert_eq!(m.producer_accuracy, Some(1.0));
        assert!((m.f1.unwrap() - 18.0 / 19.0).abs() < 1e-15);
        assert_eq!(metrics(&ConfusionCounts::new(0, 5, 0, 5)).user_accuracy, None);
    }

    #[test]
    fn mcnemar_examples() {
        let m = McNemar::from_counts(30, 10);
        assert_eq!(m.statistic, Some(10.0));
        assert!((m.p_value.unwrap() - 1.565_402_6e-3).abs() < 1e-8);
        assert_eq!(McNemar::from_counts(20, 20).p_value, Some(1.0));
        assert_eq!(McNemar::from_counts(0, 0).statistic, None);
    }

    #[test]
    fn sweep_monotone_and_band() {
        let conf = raster((0..50).map(|i| i as f32 / 49.0).collect());
        let reference = raster((0..50).map(|i| (i >= 25) as u8 as f32).collect());
        let s = threshold_sweep(&conf, &reference, &default_thresholds(), None).unwrap();
        assert!(s.rows.windows(2).all(|w| w[1].ice_pixels <= w[0].ice_pixels));
        let half = raster(vec![0.5; 10]);
        assert_eq!(band_fraction(&half, None).unwrap(), Some(1.0));
    }

    #[test]
    fn summary_skips_undefined() {
        let ms = [
            metrics(&ConfusionCounts::new(1, 1, 0, 0)),
            metrics(&ConfusionCounts::new(0, 2, 0, 0)),
        ];
        let s = summarize(&ms);
        assert_eq!(s.f1.defined, 1);
        assert_eq!(s.f1.undefined, 1);
        assert_eq!(s.binary_accuracy.mean, Some(1.0));
    }
}
