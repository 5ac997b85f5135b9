//! Scene pairing, patch extraction, augmentation and dataset variants.

use std::io::{BufRead, Write};
use std::path::{Path, PathBuf};

use chrono::{DateTime, Utc};
use rand::seq::{index, SliceRandom};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::raster::{read_raster, Raster};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Modality {
    #[serde(rename = "MSI", alias = "msi")]
    Msi,
    #[serde(rename = "SAR", alias = "sar")]
    Sar,
}

/// One row of the scene metadata CSV.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneMeta {
    pub scene_id: String,
    pub modality: Modality,
    #[serde(rename = "time_utc")]
    pub acquisition_time: DateTime<Utc>,
    pub xmin: f64,
    pub ymin: f64,
    pub xmax: f64,
    pub ymax: f64,
    /// Regional ice drift speed, m/h.
    #[serde(rename = "drift_velocity_m_per_hr")]
    pub drift_velocity: f64,
}

impl SceneMeta {
    pub fn validate(&self) -> Result<()> {
        if !(self.xmax > self.xmin && self.ymax > self.ymin) {
            return Err(Error::invalid(format!("scene {}: empty bounds", self.scene_id)));
        }
        if !(self.drift_velocity >= 0.0) {
            return Err(Error::invalid(format!("scene {}: negative drift velocity", self.scene_id)));
        }
        Ok(())
    }

    fn overlaps(&self, o: &SceneMeta) -> bool {
        self.xmin < o.xmax && o.xmin < self.xmax && self.ymin < o.ymax && o.ymin < self.ymax
    }
}

pub fn read_scene_meta(path: impl AsRef<Path>) -> Result<Vec<SceneMeta>> {
    let path = path.as_ref();
    let mut rdr = csv::Reader::from_path(path).map_err(|e| Error::Parse {
        path: path.into(),
        message: e.to_string(),
    })?;
    let mut out = Vec::new();
    for row in rdr.deserialize() {
        let meta: SceneMeta = row.map_err(|e| Error::Parse {
            path: path.into(),
            message: e.to_string(),
        })?;
        meta.validate()?;
        out.push(meta);
    }
    Ok(out)
}

pub fn write_scene_meta(metas: &[SceneMeta], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::Parse {
        path: path.into(),
        message: e.to_string(),
    })?;
    for m in metas {
        w.serialize(m)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// A concurrent MSI/SAR acquisition pair.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScenePair {
    pub msi_id: String,
    pub sar_id: String,
    pub lag_hours: f64,
    /// Always false: the visual ice-edge check is not automated.
    pub verified: bool,
}

pub const MAX_LAG_HOURS: f64 = 8.0;
pub const DRIFT_BUDGET_M: f64 = 480.0;

/// Keep overlapping pairs whose time lag is within `max_lag_hours` and within
/// the time the ice needs to drift `drift_budget_m` at the faster of the two
/// scenes' regional velocities.
pub fn pair_scenes(
    msi: &[SceneMeta],
    sar: &[SceneMeta],
    max_lag_hours: f64,
    drift_budget_m: f64,
) -> Vec<ScenePair> {
    let mut out = Vec::new();
    for m in msi {
        for s in sar {
            if !m.overlaps(s) {
                continue;
            }
            let lag = (m.acquisition_time - s.acquisition_time).num_milliseconds().abs() as f64 / 3.6e6;
            let velocity = m.drift_velocity.max(s.drift_velocity).max(1e-9);
            if lag <= max_lag_hours && lag <= drift_budget_m / velocity {
                out.push(ScenePair {
                    msi_id: m.scene_id.clone(),
                    sar_id: s.scene_id.clone(),
                    lag_hours: lag,
                    verified: false,
                });
            }
        }
    }
    out
}

/// Where a patch came from.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub msi_scene: String,
    pub sar_scene: String,
    /// Top-left corner of the patch footprint, CRS meters.
    pub origin_x: f64,
    pub origin_y: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub augmentation: Option<Dihedral>,
}

impl std::fmt::Display for Provenance {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}/{}@({}, {})", self.msi_scene, self.sar_scene, self.origin_x, self.origin_y)?;
        if let Some(a) = self.augmentation {
            write!(f, "[{a:?}]")?;
        }
        Ok(())
    }
}

/// Co-footprint SAR patch (S x S), MSI patch and label (S/3 x S/3).
#[derive(Clone, Debug)]
pub struct PatchTriplet {
    pub sar: Raster,
    pub msi: Raster,
    pub label: Raster,
    pub provenance: Provenance,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PatchClass {
    PureWater,
    PureIce,
    Edge,
}

impl PatchTriplet {
    pub fn new(sar: Raster, msi: Raster, label: Raster, provenance: Provenance) -> Result<Self> {
        let t = Self {
            sar,
            msi,
            label,
            provenance,
        };
        t.validate()?;
        Ok(t)
    }

    /// Sizes, resolution ratio, co-footprint within half an MSI pixel, label
    /// on the MSI grid, no NaN anywhere.
    pub fn validate(&self) -> Result<()> {
        let (s, m) = (&self.sar, &self.msi);
        if s.width() != s.height() || s.width() % 3 != 0 {
            return Err(Error::Geometry(format!("SAR patch must be square with side divisible by 3, got {}x{}", s.width(), s.height())));
        }
        if m.width() * 3 != s.width() || m.height() * 3 != s.height() {
            return Err(Error::Geometry(format!(
                "MSI patch {}x{} does not cover SAR patch {}x{}",
                m.width(),
                m.height(),
                s.width(),
                s.height()
            )));
        }
        footprints_coincide(s, m)?;
        m.require_same_grid(&self.label, "label vs MSI")?;
        crate::labeling::validate_labels(&self.label)?;
        if s.has_nan() || m.has_nan() || self.label.has_nan() {
            return Err(Error::invalid(format!("patch {} contains NaN", self.provenance)));
        }
        Ok(())
    }

    pub fn class(&self) -> PatchClass {
        let d = self.label.data();
        if d.iter().all(|&v| v == 0.0) {
            PatchClass::PureWater
        } else if d.iter().all(|&v| v == 1.0) {
            PatchClass::PureIce
        } else {
            PatchClass::Edge
        }
    }
}

/// SAR and MSI rasters share a CRS and their footprints agree to within half
/// an MSI pixel on every side.
pub fn footprints_coincide(sar: &Raster, msi: &Raster) -> Result<()> {
    if sar.transform().crs_id != msi.transform().crs_id {
        return Err(Error::CrsMismatch {
            left: sar.transform().crs_id.clone(),
            right: msi.transform().crs_id.clone(),
        });
    }
    let (a, b) = (sar.bounds(), msi.bounds());
    let tol = msi.pixel_size() / 2.0;
    let worst = [(a.0 - b.0), (a.1 - b.1), (a.2 - b.2), (a.3 - b.3)]
        .iter()
        .fold(0.0f64, |m, d| m.max(d.abs()));
    if worst > tol + 1e-6 {
        return Err(Error::Geometry(format!(
            "SAR footprint {a:?} and MSI footprint {b:?} differ by {worst} m (tolerance {tol} m)"
        )));
    }
    Ok(())
}

/// Cut a non-overlapping grid of S x S SAR patches, anchored at the SAR
/// origin, and the MSI/label windows covering the same footprint. Patches
/// whose footprint leaves the MSI raster or that contain NaN are dropped.
pub fn extract_patches(
    msi: &Raster,
    sar: &Raster,
    label: &Raster,
    s: usize,
    scene_ids: (&str, &str),
) -> Result<Vec<PatchTriplet>> {
    if s == 0 || !s.is_multiple_of(3) {
        return Err(Error::invalid(format!("patch size {s} must be a positive multiple of 3")));
    }
    if sar.transform().crs_id != msi.transform().crs_id {
        return Err(Error::CrsMismatch {
            left: sar.transform().crs_id.clone(),
            right: msi.transform().crs_id.clone(),
        });
    }
    let ratio = msi.pixel_size() / sar.pixel_size();
    if (ratio - 3.0).abs() > 1e-9 {
        return Err(Error::Geometry(format!(
            "expected MSI pixels 3x the SAR pixel size, got {} m and {} m",
            msi.pixel_size(),
            sar.pixel_size()
        )));
    }
    msi.require_same_grid(label, "label vs MSI")?;
    let m = s / 3;
    let mut out = Vec::new();
    for row in (0..=sar.height().saturating_sub(s)).step_by(s) {
        for col in (0..=sar.width().saturating_sub(s)).step_by(s) {
            if col + s > sar.width() || row + s > sar.height() {
                continue;
            }
            let t = sar.transform().offset(col, row);
            let (mc, mr) = msi.transform().to_pixel(t.origin_x, t.origin_y);
            let (mc, mr) = (mc.round(), mr.round());
            if mc < 0.0 || mr < 0.0 || mc as usize + m > msi.width() || mr as usize + m > msi.height() {
                continue;
            }
            let (mc, mr) = (mc as usize, mr as usize);
            let sp = sar.window(col, row, s, s)?;
            let mp = msi.window(mc, mr, m, m)?;
            let lp = label.window(mc, mr, m, m)?;
            if sp.has_nan() || mp.has_nan() || lp.has_nan() {
                continue;
            }
            let prov = Provenance {
                msi_scene: scene_ids.0.into(),
                sar_scene: scene_ids.1.into(),
                origin_x: t.origin_x,
                origin_y: t.origin_y,
                augmentation: None,
            };
            out.push(PatchTriplet::new(sp, mp, lp, prov)?);
        }
    }
    Ok(out)
}

/// Elements of the symmetry group of the square. `FlipRotK` rotates by K
/// degrees counter-clockwise, then mirrors left-right.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Dihedral {
    Identity,
    Rot90,
    Rot180,
    Rot270,
    Flip,
    FlipRot90,
    FlipRot180,
    FlipRot270,
}

impl Dihedral {
    pub const ALL: [Dihedral; 8] = [
        Dihedral::Identity,
        Dihedral::Rot90,
        Dihedral::Rot180,
        Dihedral::Rot270,
        Dihedral::Flip,
        Dihedral::FlipRot90,
        Dihedral::FlipRot180,
        Dihedral::FlipRot270,
    ];

    /// Identity, left-right flip and the three rotations.
    pub const FIVE: [Dihedral; 5] = [
        Dihedral::Identity,
        Dihedral::Flip,
        Dihedral::Rot90,
        Dihedral::Rot180,
        Dihedral::Rot270,
    ];

    fn parts(self) -> (bool, usize) {
        match self {
            Dihedral::Identity => (false, 0),
            Dihedral::Rot90 => (false, 1),
            Dihedral::Rot180 => (false, 2),
            Dihedral::Rot270 => (false, 3),
            Dihedral::Flip => (true, 0),
            Dihedral::FlipRot90 => (true, 1),
            Dihedral::FlipRot180 => (true, 2),
            Dihedral::FlipRot270 => (true, 3),
        }
    }

    fn from_parts(flip: bool, quarter_turns: usize) -> Self {
        let i = quarter_turns % 4 + if flip { 4 } else { 0 };
        Dihedral::ALL[i]
    }

    /// `self` applied after `first`.
    pub fn compose(self, first: Dihedral) -> Dihedral {
        let (f2, r2) = self.parts();
        let (f1, r1) = first.parts();
        // A mirror reverses the sense of a rotation applied after it.
        let r = if f1 { (4 + r1 - r2 % 4) % 4 } else { r1 + r2 };
        Dihedral::from_parts(f1 ^ f2, r)
    }

    /// Source pixel `(row, col)` for output pixel `(r, c)` of an `n x n` image.
    pub fn source(self, r: usize, c: usize, n: usize) -> (usize, usize) {
        let (flip, turns) = self.parts();
        let (mut r, mut c) = (r, c);
        if flip {
            c = n - 1 - c;
        }
        for _ in 0..turns {
            // undo one counter-clockwise quarter turn
            (r, c) = (c, n - 1 - r);
        }
        (r, c)
    }

    /// Destination `(row, col)` of input pixel `(r, c)`.
    pub fn dest(self, r: usize, c: usize, n: usize) -> (usize, usize) {
        let (flip, turns) = self.parts();
        let (mut r, mut c) = (r, c);
        for _ in 0..turns {
            (r, c) = (n - 1 - c, r);
        }
        if flip {
            c = n - 1 - c;
        }
        (r, c)
    }

    pub fn apply(self, img: &Raster) -> Result<Raster> {
        let n = img.width();
        if img.height() != n {
            return Err(Error::Geometry(format!("augmentation needs a square patch, got {}x{}", n, img.height())));
        }
        let mut out = img.clone();
        for b in 0..img.bands() {
            let src = img.band(b);
            let dst = out.band_mut(b);
            for r in 0..n {
                for c in 0..n {
                    let (sr, sc) = self.source(r, c, n);
                    dst[r * n + c] = src[sr * n + sc];
                }
            }
        }
        Ok(out)
    }
}

/// The transformed copies of a triplet, one per group element in `set`.
pub fn augment(t: &PatchTriplet, set: &[Dihedral]) -> Result<Vec<PatchTriplet>> {
    set.iter()
        .map(|&g| {
            let mut prov = t.provenance.clone();
            prov.augmentation = Some(match prov.augmentation {
                Some(prev) => g.compose(prev),
                None => g,
            });
            Ok(PatchTriplet {
                sar: g.apply(&t.sar)?,
                msi: g.apply(&t.msi)?,
                label: g.apply(&t.label)?,
                provenance: prov,
            })
        })
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DatasetKind {
    All,
    Edge,
    Equal,
}

impl std::str::FromStr for DatasetKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "all" => Ok(DatasetKind::All),
            "edge" => Ok(DatasetKind::Edge),
            "equal" => Ok(DatasetKind::Equal),
            _ => Err(Error::invalid(format!("unknown dataset kind {s:?}"))),
        }
    }
}

#[derive(Clone, Debug)]
pub struct DatasetVariant<T = PatchTriplet> {
    pub kind: DatasetKind,
    pub items: Vec<T>,
    pub seed: u64,
}

/// Select the `all`, `edge` or `equal` subset. `classify` tells pure-water,
/// pure-ice and mixed items apart, so the selection works on triplets and on
/// manifest entries alike.
pub fn build_variant<T: Clone>(
    items: &[T],
    kind: DatasetKind,
    seed: u64,
    classify: impl Fn(&T) -> PatchClass,
) -> Result<DatasetVariant<T>> {
    let classes: Vec<PatchClass> = items.iter().map(&classify).collect();
    let pick = |c: PatchClass| -> Vec<usize> { (0..items.len()).filter(|&i| classes[i] == c).collect() };
    let chosen: Vec<usize> = match kind {
        DatasetKind::All => (0..items.len()).collect(),
        DatasetKind::Edge => pick(PatchClass::Edge),
        DatasetKind::Equal => {
            let edge = pick(PatchClass::Edge);
            let water = pick(PatchClass::PureWater);
            let ice = pick(PatchClass::PureIce);
            let k = edge.len();
            if water.len() < k || ice.len() < k {
                return Err(Error::InsufficientPurePatches {
                    needed: k,
                    water: water.len(),
                    ice: ice.len(),
                });
            }
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut out = edge;
            out.extend(index::sample(&mut rng, water.len(), k).into_iter().map(|i| water[i]));
            out.extend(index::sample(&mut rng, ice.len(), k).into_iter().map(|i| ice[i]));
            out
        }
    };
    Ok(DatasetVariant {
        kind,
        items: chosen.into_iter().map(|i| items[i].clone()).collect(),
        seed,
    })
}

/// Seeded shuffle, then the first `round(train_frac * N)` items train.
pub fn split<T: Clone>(items: &[T], train_frac: f64, seed: u64) -> Result<(Vec<T>, Vec<T>)> {
    if !(0.0..=1.0).contains(&train_frac) {
        return Err(Error::invalid(format!("train fraction {train_frac} outside [0, 1]")));
    }
    let mut order: Vec<usize> = (0..items.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n_train = (train_frac * items.len() as f64).round() as usize;
    let train = order[..n_train].iter().map(|&i| items[i].clone()).collect();
    let val = order[n_train..].iter().map(|&i| items[i].clone()).collect();
    Ok((train, val))
}

/// One line of a dataset manifest. Paths are relative to the manifest file
/// unless absolute.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub sar_path: PathBuf,
    pub msi_path: PathBuf,
    pub label_path: PathBuf,
    pub origin_x: f64,
    pub origin_y: f64,
    #[serde(default)]
    pub kind_flags: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scene_id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cloud_path: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub incidence_path: Option<PathBuf>,
}

pub const FLAG_EDGE: &str = "edge";
pub const FLAG_PURE_ICE: &str = "pure_ice";
pub const FLAG_PURE_WATER: &str = "pure_water";
pub const FLAG_UNVERIFIED: &str = "unverified";

pub fn class_flag(c: PatchClass) -> &'static str {
    match c {
        PatchClass::Edge => FLAG_EDGE,
        PatchClass::PureIce => FLAG_PURE_ICE,
        PatchClass::PureWater => FLAG_PURE_WATER,
    }
}

impl ManifestEntry {
    pub fn has_flag(&self, flag: &str) -> bool {
        self.kind_flags.iter().any(|f| f == flag)
    }

    /// Patch class recorded in the flags (mixed when no class flag is set).
    pub fn class(&self) -> PatchClass {
        if self.has_flag(FLAG_PURE_ICE) {
            PatchClass::PureIce
        } else if self.has_flag(FLAG_PURE_WATER) {
            PatchClass::PureWater
        } else {
            PatchClass::Edge
        }
    }

    fn resolve(base: &Path, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            base.join(p)
        }
    }

    pub fn load(&self, base: &Path) -> Result<PatchTriplet> {
        let sar = read_raster(Self::resolve(base, &self.sar_path))?;
        let msi = read_raster(Self::resolve(base, &self.msi_path))?;
        let label = read_raster(Self::resolve(base, &self.label_path))?;
        let id = self.scene_id.clone().unwrap_or_default();
        PatchTriplet::new(
            sar,
            msi,
            label,
            Provenance {
                msi_scene: id.clone(),
                sar_scene: id,
                origin_x: self.origin_x,
                origin_y: self.origin_y,
                augmentation: None,
            },
        )
    }

    pub fn load_cloud(&self, base: &Path) -> Result<Option<Raster>> {
        self.cloud_path
            .as_ref()
            .map(|p| read_raster(Self::resolve(base, p)))
            .transpose()
    }

    pub fn load_incidence(&self, base: &Path) -> Result<Option<Raster>> {
        self.incidence_path
            .as_ref()
            .map(|p| read_raster(Self::resolve(base, p)))
            .transpose()
    }
}

pub fn read_manifest(path: impl AsRef<Path>) -> Result<Vec<ManifestEntry>> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in std::io::BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| Error::Parse {
            path: path.into(),
            message: format!("line {}: {e}", i + 1),
        })?);
    }
    Ok(out)
}

pub fn write_manifest(entries: &[ManifestEntry], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut buf = Vec::new();
    for e in entries {
        serde_json::to_writer(&mut buf, e)?;
        buf.push(b'\n');
    }
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&buf).map_err(|e| Error::io(path, e))
}

/// Directory that relative manifest paths are resolved against.
pub fn manifest_base(path: &Path) -> PathBuf {
    path.parent().map(Path::to_path_buf).unwrap_or_default()
}
