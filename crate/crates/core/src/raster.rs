//! Georeferenced float rasters.
//!
//! A [`Raster`] is a band-sequential, row-major `f32` grid with a north-up
//! [`GeoTransform`] (square pixels, origin at the top-left corner). NaN is
//! the nodata value everywhere in this crate: scenes, labels, masks and
//! confidences all travel as rasters.
//!
//! The on-disk format (`.rgf`) is a single JSON header line followed by the
//! little-endian `f32` payload. Writing then reading is bit-exact, NaN
//! payloads included.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const RGF_VERSION: u32 = 1;
pub const RGF_EXTENSION: &str = "rgf";

/// Placement of a raster in a projected CRS.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GeoTransform {
    /// x of the top-left corner, meters.
    pub origin_x: f64,
    /// y of the top-left corner, meters. Rows run southwards.
    pub origin_y: f64,
    /// Side of a (square) pixel, meters.
    pub pixel_size: f64,
    pub crs_id: String,
}

impl GeoTransform {
    pub fn new(origin_x: f64, origin_y: f64, pixel_size: f64, crs_id: impl Into<String>) -> Result<Self> {
        if !(pixel_size > 0.0 && pixel_size.is_finite()) {
            return Err(Error::invalid(format!("pixel size must be positive, got {pixel_size}")));
        }
        if !origin_x.is_finite() || !origin_y.is_finite() {
            return Err(Error::invalid("raster origin must be finite"));
        }
        Ok(Self {
            origin_x,
            origin_y,
            pixel_size,
            crs_id: crs_id.into(),
        })
    }

    /// Center of pixel `(col, row)` in CRS coordinates.
    pub fn pixel_center(&self, col: usize, row: usize) -> (f64, f64) {
        (
            self.origin_x + (col as f64 + 0.5) * self.pixel_size,
            self.origin_y - (row as f64 + 0.5) * self.pixel_size,
        )
    }

    /// Fractional pixel coordinates `(col, row)` of a CRS point, measured from
    /// the top-left corner of the grid.
    pub fn to_pixel(&self, x: f64, y: f64) -> (f64, f64) {
        (
            (x - self.origin_x) / self.pixel_size,
            (self.origin_y - y) / self.pixel_size,
        )
    }

    /// Transform of the sub-grid whose top-left pixel is `(col, row)`.
    pub fn offset(&self, col: usize, row: usize) -> GeoTransform {
        GeoTransform {
            origin_x: self.origin_x + col as f64 * self.pixel_size,
            origin_y: self.origin_y - row as f64 * self.pixel_size,
            pixel_size: self.pixel_size,
            crs_id: self.crs_id.clone(),
        }
    }

    pub fn with_pixel_size(&self, pixel_size: f64) -> GeoTransform {
        GeoTransform {
            pixel_size,
            ..self.clone()
        }
    }
}

#[derive(Clone, Debug)]
pub struct Raster {
    width: usize,
    height: usize,
    bands: usize,
    data: Vec<f32>,
    transform: GeoTransform,
    band_names: Vec<String>,
}

impl Raster {
    /// A raster filled with `fill`.
    pub fn filled(width: usize, height: usize, bands: usize, fill: f32, transform: GeoTransform) -> Self {
        Self {
            width,
            height,
            bands,
            data: vec![fill; width * height * bands],
            transform,
            band_names: default_band_names(bands),
        }
    }

    pub fn from_data(
        width: usize,
        height: usize,
        bands: usize,
        data: Vec<f32>,
        transform: GeoTransform,
    ) -> Result<Self> {
        if data.len() != width * height * bands {
            return Err(Error::Shape(format!(
                "raster {width}x{height}x{bands} needs {} values, got {}",
                width * height * bands,
                data.len()
            )));
        }
        if data.iter().any(|v| v.is_infinite()) {
            return Err(Error::invalid("raster values must be finite or NaN"));
        }
        Ok(Self {
            width,
            height,
            bands,
            data,
            transform,
            band_names: default_band_names(bands),
        })
    }

    pub fn with_band_names(mut self, names: Vec<String>) -> Result<Self> {
        if names.len() != self.bands {
            return Err(Error::invalid(format!(
                "{} band names for {} bands",
                names.len(),
                self.bands
            )));
        }
        self.band_names = names;
        Ok(self)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn bands(&self) -> usize {
        self.bands
    }

    pub fn transform(&self) -> &GeoTransform {
        &self.transform
    }

    pub fn pixel_size(&self) -> f64 {
        self.transform.pixel_size
    }

    pub fn band_names(&self) -> &[String] {
        &self.band_names
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    pub fn band(&self, b: usize) -> &[f32] {
        let n = self.width * self.height;
        &self.data[b * n..(b + 1) * n]
    }

    pub fn band_mut(&mut self, b: usize) -> &mut [f32] {
        let n = self.width * self.height;
        &mut self.data[b * n..(b + 1) * n]
    }

    pub fn check_band(&self, b: usize) -> Result<()> {
        if b >= self.bands {
            return Err(Error::BandOutOfRange {
                band: b,
                bands: self.bands,
            });
        }
        Ok(())
    }

    #[inline]
    pub fn get(&self, band: usize, row: usize, col: usize) -> f32 {
        self.data[(band * self.height + row) * self.width + col]
    }

    #[inline]
    pub fn set(&mut self, band: usize, row: usize, col: usize, v: f32) {
        self.data[(band * self.height + row) * self.width + col] = v;
    }

    /// Single-band raster holding a copy of band `b`.
    pub fn extract_band(&self, b: usize) -> Result<Raster> {
        self.check_band(b)?;
        Ok(Raster {
            width: self.width,
            height: self.height,
            bands: 1,
            data: self.band(b).to_vec(),
            transform: self.transform.clone(),
            band_names: vec![self.band_names[b].clone()],
        })
    }

    /// Same geometry, new single-band payload.
    pub fn like(&self, data: Vec<f32>) -> Result<Raster> {
        Raster::from_data(self.width, self.height, 1, data, self.transform.clone())
    }

    /// Window of `w`x`h` pixels starting at `(col, row)`, all bands.
    pub fn window(&self, col: usize, row: usize, w: usize, h: usize) -> Result<Raster> {
        if col + w > self.width || row + h > self.height {
            return Err(Error::Geometry(format!(
                "window {w}x{h}@({col},{row}) exceeds raster {}x{}",
                self.width, self.height
            )));
        }
        let mut data = Vec::with_capacity(w * h * self.bands);
        for b in 0..self.bands {
            let band = self.band(b);
            for r in row..row + h {
                let start = r * self.width + col;
                data.extend_from_slice(&band[start..start + w]);
            }
        }
        Ok(Raster {
            width: w,
            height: h,
            bands: self.bands,
            data,
            transform: self.transform.offset(col, row),
            band_names: self.band_names.clone(),
        })
    }

    /// `(xmin, ymin, xmax, ymax)` of the raster footprint.
    pub fn bounds(&self) -> (f64, f64, f64, f64) {
        let t = &self.transform;
        (
            t.origin_x,
            t.origin_y - self.height as f64 * t.pixel_size,
            t.origin_x + self.width as f64 * t.pixel_size,
            t.origin_y,
        )
    }

    pub fn has_nan(&self) -> bool {
        self.data.iter().any(|v| v.is_nan())
    }

    pub fn same_grid(&self, other: &Raster) -> bool {
        self.width == other.width && self.height == other.height && self.transform == other.transform
    }

    pub fn require_same_grid(&self, other: &Raster, what: &str) -> Result<()> {
        if self.transform.crs_id != other.transform.crs_id {
            return Err(Error::CrsMismatch {
                left: self.transform.crs_id.clone(),
                right: other.transform.crs_id.clone(),
            });
        }
        if !self.same_grid(other) {
            return Err(Error::Geometry(format!(
                "{what}: {}x{} @ {:?} vs {}x{} @ {:?}",
                self.width, self.height, self.transform, other.width, other.height, other.transform
            )));
        }
        Ok(())
    }

    /// Bitwise payload equality plus identical header fields.
    pub fn bit_eq(&self, other: &Raster) -> bool {
        self.width == other.width
            && self.height == other.height
            && self.bands == other.bands
            && self.transform == other.transform
            && self.band_names == other.band_names
            && self
                .data
                .iter()
                .zip(&other.data)
                .all(|(a, b)| a.to_bits() == b.to_bits())
    }
}

fn default_band_names(bands: usize) -> Vec<String> {
    (0..bands).map(|b| format!("band{b}")).collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ResampleMethod {
    AreaMean,
    Nearest,
    Bilinear,
}

/// Resample every band to `target_pixel_size` keeping the top-left corner.
/// Trailing partial output rows/columns are dropped.
pub fn resample(r: &Raster, target_pixel_size: f64, method: ResampleMethod) -> Result<Raster> {
    if !(target_pixel_size > 0.0 && target_pixel_size.is_finite()) {
        return Err(Error::invalid(format!(
            "target pixel size must be positive, got {target_pixel_size}"
        )));
    }
    let src = r.pixel_size();
    let ratio = target_pixel_size / src;
    match method {
        ResampleMethod::AreaMean => {
            let k = ratio.round();
            if k < 1.0 || (ratio - k).abs() > 1e-9 * k {
                return Err(Error::NonIntegerRatio {
                    source_m: src,
                    target_m: target_pixel_size,
                    ratio,
                });
            }
            Ok(area_mean(r, k as usize, target_pixel_size))
        }
        ResampleMethod::Nearest | ResampleMethod::Bilinear => {
            let out_w = (r.width as f64 / ratio + 1e-9).floor() as usize;
            let out_h = (r.height as f64 / ratio + 1e-9).floor() as usize;
            Ok(point_sample(r, out_w, out_h, ratio, target_pixel_size, method))
        }
    }
}

fn area_mean(r: &Raster, k: usize, target: f64) -> Raster {
    let (ow, oh) = (r.width / k, r.height / k);
    let mut out = Vec::with_capacity(ow * oh * r.bands);
    for b in 0..r.bands {
        let band = r.band(b);
        for orow in 0..oh {
            for ocol in 0..ow {
                let mut sum = 0.0f64;
                let mut n = 0usize;
                for row in orow * k..(orow + 1) * k {
                    for &v in &band[row * r.width + ocol * k..row * r.width + (ocol + 1) * k] {
                        if !v.is_nan() {
                            sum += v as f64;
                            n += 1;
                        }
                    }
                }
                out.push(if n == 0 { f32::NAN } else { (sum / n as f64) as f32 });
            }
        }
    }
    Raster {
        width: ow,
        height: oh,
        bands: r.bands,
        data: out,
        transform: r.transform.with_pixel_size(target),
        band_names: r.band_names.clone(),
    }
}

fn point_sample(
    r: &Raster,
    ow: usize,
    oh: usize,
    ratio: f64,
    target: f64,
    method: ResampleMethod,
) -> Raster {
    // Output pixel centers in source pixel-index space (centers at integers).
    let src_coord = |i: usize| (i as f64 + 0.5) * ratio - 0.5;
    let clamp = |v: isize, n: usize| v.clamp(0, n as isize - 1) as usize;
    let mut out = Vec::with_capacity(ow * oh * r.bands);
    for b in 0..r.bands {
        let band = r.band(b);
        for orow in 0..oh {
            let v = src_coord(orow);
            for ocol in 0..ow {
                let u = src_coord(ocol);
                let value = match method {
                    ResampleMethod::Nearest => {
                        let c = clamp((u + 0.5).floor() as isize, r.width);
                        let rr = clamp((v + 0.5).floor() as isize, r.height);
                        band[rr * r.width + c]
                    }
                    _ => {
                        let (u0, v0) = (u.floor(), v.floor());
                        let (fu, fv) = (u - u0, v - v0);
                        let mut acc = 0.0f64;
                        let mut wsum = 0.0f64;
                        for (dr, wr) in [(0isize, 1.0 - fv), (1, fv)] {
                            for (dc, wc) in [(0isize, 1.0 - fu), (1, fu)] {
                                let w = wr * wc;
                                if w == 0.0 {
                                    continue;
                                }
                                let rr = clamp(v0 as isize + dr, r.height);
                                let c = clamp(u0 as isize + dc, r.width);
                                let x = band[rr * r.width + c];
                                if !x.is_nan() {
                                    acc += w * x as f64;
                                    wsum += w;
                                }
                            }
                        }
                        if wsum == 0.0 {
                            f32::NAN
                        } else {
                            (acc / wsum) as f32
                        }
                    }
                };
                out.push(value);
            }
        }
    }
    Raster {
        width: ow,
        height: oh,
        bands: r.bands,
        data: out,
        transform: r.transform.with_pixel_size(target),
        band_names: r.band_names.clone(),
    }
}

/// Affine map of `[in_lo, in_hi]` onto `[-1, 1]`; values outside the input
/// range are clamped, NaN passes through.
pub fn normalize_linear(r: &Raster, in_lo: f32, in_hi: f32) -> Result<Raster> {
    if !(in_hi > in_lo) {
        return Err(Error::invalid(format!(
            "normalization range must satisfy lo < hi, got [{in_lo}, {in_hi}]"
        )));
    }
    let mut out = r.clone();
    normalize_in_place(&mut out.data, in_lo, in_hi);
    Ok(out)
}

pub(crate) fn normalize_in_place(values: &mut [f32], in_lo: f32, in_hi: f32) {
    let scale = 2.0 / (in_hi as f64 - in_lo as f64);
    for v in values {
        if !v.is_nan() {
            let y = -1.0 + (*v as f64 - in_lo as f64) * scale;
            *v = y.clamp(-1.0, 1.0) as f32;
        }
    }
}

#[derive(Serialize, Deserialize)]
struct RgfHeader {
    version: u32,
    width: usize,
    height: usize,
    bands: usize,
    pixel_size_m: f64,
    origin_x: f64,
    origin_y: f64,
    crs_id: String,
    band_names: Vec<String>,
}

/// Encode to the native `.rgf` byte layout.
pub fn encode_raster(r: &Raster) -> Vec<u8> {
    let header = RgfHeader {
        version: RGF_VERSION,
        width: r.width,
        height: r.height,
        bands: r.bands,
        pixel_size_m: r.transform.pixel_size,
        origin_x: r.transform.origin_x,
        origin_y: r.transform.origin_y,
        crs_id: r.transform.crs_id.clone(),
        band_names: r.band_names.clone(),
    };
    let mut bytes = serde_json::to_vec(&header).expect("header serializes");
    bytes.push(b'\n');
    bytes.reserve(r.data.len() * 4);
    for v in &r.data {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    bytes
}

pub fn decode_raster(bytes: &[u8]) -> Result<Raster> {
    let nl = bytes
        .iter()
        .position(|&b| b == b'\n')
        .ok_or_else(|| Error::MalformedHeader("no header line terminator".into()))?;
    let value: serde_json::Value = serde_json::from_slice(&bytes[..nl])
        .map_err(|e| Error::MalformedHeader(e.to_string()))?;
    // Check the version before the full schema so that a future header with
    // different fields reports the version, not a missing field.
    match value.get("version").and_then(|v| v.as_u64()) {
        Some(v) if v == RGF_VERSION as u64 => {}
        Some(v) => return Err(Error::UnsupportedVersion(v as u32)),
        None => return Err(Error::MalformedHeader("missing version".into())),
    }
    let header: RgfHeader =
        serde_json::from_value(value).map_err(|e| Error::MalformedHeader(e.to_string()))?;
    let transform = GeoTransform::new(header.origin_x, header.origin_y, header.pixel_size_m, header.crs_id)
        .map_err(|e| Error::MalformedHeader(e.to_string()))?;
    let band_names = if header.band_names.is_empty() {
        default_band_names(header.bands)
    } else if header.band_names.len() == header.bands {
        header.band_names
    } else {
        return Err(Error::MalformedHeader(format!(
            "{} band names for {} bands",
            header.band_names.len(),
            header.bands
        )));
    };
    let n = header.width * header.height * header.bands;
    let payload = &bytes[nl + 1..];
    if payload.len() != n * 4 {
        return Err(Error::PayloadLength {
            expected: n,
            found_bytes: payload.len(),
        });
    }
    let data: Vec<f32> = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    if data.iter().any(|v| v.is_infinite()) {
        return Err(Error::MalformedHeader("payload contains infinite values".into()));
    }
    Ok(Raster {
        width: header.width,
        height: header.height,
        bands: header.bands,
        data,
        transform,
        band_names,
    })
}

pub fn write_raster(r: &Raster, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&encode_raster(r)).map_err(|e| Error::io(path, e))
}

pub fn read_raster(path: impl AsRef<Path>) -> Result<Raster> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_raster(&bytes).map_err(|e| match e {
        Error::MalformedHeader(m) => Error::MalformedHeader(format!("{}: {m}", path.display())),
        other => other,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn gt(ps: f64) -> GeoTransform {
        GeoTransform::new(1000.0, 5000.0, ps, "EPSG:3031").unwrap()
    }

    #[test]
    fn area_mean_constant_field() {
        let r = Raster::filled(720, 720, 1, 0.5, gt(80.0));
        let out = resample(&r, 240.0, ResampleMethod::AreaMean).unwrap();
        assert_eq!((out.width(), out.height()), (240, 240));
        assert_eq!(out.pixel_size(), 240.0);
        assert!(out.data().iter().all(|&v| v == 0.5));
    }

    #[test]
    fn area_mean_two_by_two() {
        let r = Raster::from_data(2, 2, 1, vec![1.0, 1.0, 0.0, 0.0], gt(1.0)).unwrap();
        let out = resample(&r, 2.0, ResampleMethod::AreaMean).unwrap();
        assert_eq!(out.data(), &[0.5]);
    }

    #[test]
    fn area_mean_ignores_nan() {
        let r = Raster::from_data(2, 2, 1, vec![1.0, f32::NAN, 0.0, 0.0], gt(1.0)).unwrap();
        let out = resample(&r, 2.0, ResampleMethod::AreaMean).unwrap();
        assert!((out.data()[0] - 1.0 / 3.0).abs() < 1e-7);
        let all_nan = Raster::filled(2, 2, 1, f32::NAN, gt(1.0));
        assert!(resample(&all_nan, 2.0, ResampleMethod::AreaMean).unwrap().data()[0].is_nan());
    }

    #[test]
    fn area_mean_rejects_fractional_ratio() {
        let r = Raster::filled(10, 10, 1, 0.0, gt(240.0));
        let err = resample(&r, 6250.0, ResampleMethod::AreaMean).unwrap_err();
        assert!(matches!(err, Error::NonIntegerRatio { .. }), "{err}");
        assert!(err.to_string().contains("integer ratio"));
    }

    #[test]
    fn area_mean_drops_partial_cells() {
        let r = Raster::filled(7, 5, 2, 1.0, gt(1.0));
        let out = resample(&r, 3.0, ResampleMethod::AreaMean).unwrap();
        assert_eq!((out.width(), out.height(), out.bands()), (2, 1, 2));
    }

    #[test]
    fn nearest_upsample_replicates_blocks() {
        let r = Raster::from_data(2, 1, 1, vec![1.0, 2.0], gt(240.0)).unwrap();
        let out = resample(&r, 80.0, ResampleMethod::Nearest).unwrap();
        assert_eq!((out.width(), out.height()), (6, 3));
        assert_eq!(&out.data()[..6], &[1.0, 1.0, 1.0, 2.0, 2.0, 2.0]);
    }

    #[test]
    fn bilinear_midpoint() {
        let r = Raster::from_data(2, 2, 1, vec![0.0, 1.0, 0.0, 1.0], gt(1.0)).unwrap();
        let out = resample(&r, 0.5, ResampleMethod::Bilinear).unwrap();
        assert_eq!(out.width(), 4);
        // Centers at source coords -0.25, 0.25, 0.75, 1.25 (edges clamp).
        let row: Vec<f32> = out.data()[..4].to_vec();
        assert_eq!(row, vec![0.0, 0.25, 0.75, 1.0]);
    }

    #[test]
    fn normalize_examples() {
        let r = Raster::from_data(4, 1, 1, vec![255.0, 127.5, 300.0, f32::NAN], gt(1.0)).unwrap();
        let n = normalize_linear(&r, 0.0, 255.0).unwrap();
        assert_eq!(n.data()[0], 1.0);
        assert_eq!(n.data()[1], 0.0);
        assert_eq!(n.data()[2], 1.0);
        assert!(n.data()[3].is_nan());
        assert!(normalize_linear(&r, 1.0, 1.0).is_err());
        assert!(normalize_linear(&r, 2.0, 1.0).is_err());
    }

    #[test]
    fn rgf_rejects_bad_payload_length() {
        let r = Raster::filled(10, 10, 1, 1.0, gt(1.0));
        let mut bytes = encode_raster(&r);
        bytes.truncate(bytes.len() - 4);
        match decode_raster(&bytes) {
            Err(Error::PayloadLength { expected, found_bytes }) => {
                assert_eq!(expected, 100);
                assert_eq!(found_bytes, 99 * 4);
            }
            other => panic!("expected length mismatch, got {other:?}"),
        }
    }

    #[test]
    fn rgf_distinct_header_errors() {
        assert!(matches!(decode_raster(b"{not json}\n"), Err(Error::MalformedHeader(_))));
        assert!(matches!(decode_raster(b"no newline"), Err(Error::MalformedHeader(_))));
        let v2 = br#"{"version":2,"width":1,"height":1,"bands":1}"#;
        let mut bytes = v2.to_vec();
        bytes.push(b'\n');
        assert!(matches!(decode_raster(&bytes), Err(Error::UnsupportedVersion(2))));
    }

    #[test]
    fn rgf_file_round_trip_keeps_nan() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.rgf");
        let r = Raster::from_data(3, 1, 1, vec![1.5, f32::NAN, -0.0], gt(80.0))
            .unwrap()
            .with_band_names(vec!["hh".into()])
            .unwrap();
        write_raster(&r, &path).unwrap();
        let back = read_raster(&path).unwrap();
        assert!(back.bit_eq(&r));
        assert!(back.data()[1].is_nan());
    }

    fn arb_raster() -> impl Strategy<Value = Raster> {
        (1usize..6, 1usize..6, 1usize..3, any::<u64>()).prop_flat_map(|(w, h, b, _)| {
            let n = w * h * b;
            (
                proptest::collection::vec(
                    prop_oneof![9 => -1e6f32..1e6f32, 1 => Just(f32::NAN)],
                    n,
                ),
                -1e6f64..1e6,
                -1e6f64..1e6,
                0.5f64..1000.0,
            )
                .prop_map(move |(data, ox, oy, ps)| {
                    Raster::from_data(w, h, b, data, GeoTransform::new(ox, oy, ps, "crs").unwrap()).unwrap()
                })
        })
    }

    proptest! {
        #[test]
        fn rgf_round_trip_is_bit_exact(r in arb_raster()) {
            let back = decode_raster(&encode_raster(&r)).unwrap();
            prop_assert!(back.bit_eq(&r));
        }

        #[test]
        fn area_mean_preserves_mean(k in 1usize..5, cw in 1usize..6, ch in 1usize..6,
                                    vals in proptest::collection::vec(-1f32..1f32, 1..900)) {
            let (w, h) = (cw * k, ch * k);
            let data: Vec<f32> = (0..w * h).map(|i| vals[i % vals.len()]).collect();
            let r = Raster::from_data(w, h, 1, data.clone(), gt(1.0)).unwrap();
            let out = resample(&r, k as f64, ResampleMethod::AreaMean).unwrap();
            let m_in = data.iter().map(|&v| v as f64).sum::<f64>() / data.len() as f64;
            let m_out = out.data().iter().map(|&v| v as f64).sum::<f64>() / out.data().len() as f64;
            prop_assert!((m_in - m_out).abs() < 1e-6);
        }

        #[test]
        fn normalize_is_monotone(a in -500f32..500f32, b in -500f32..500f32) {
            let r = Raster::from_data(2, 1, 1, vec![a.min(b), a.max(b)], gt(1.0)).unwrap();
            let n = normalize_linear(&r, 0.0, 255.0).unwrap();
            prop_assert!(n.data()[0] <= n.data()[1]);
        }
    }
}
