//! Raster bundles, probability maps and GeoJSON vector inputs.
//!
//! A raster bundle is a directory holding `meta.json` plus one raw
//! little-endian, row-major `f32` file per layer. Probability maps use the
//! same layout with a single payload, optionally quantised to `u8` with a
//! 1-bit nodata mask sidecar.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

use crate::geometry::{self, open_ring, Point, Polygon, Rect};
use crate::temporal;

pub const META_FILE: &str = "meta.json";

/// Backscatter values outside this range (dB) are rejected.
pub const DB_RANGE: (f32, f32) = (-50.0, 10.0);

#[derive(Debug, Error)]
pub enum GeoDataError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: invalid metadata: {source}")]
    Meta {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
    #[error("{context}: {message}")]
    Format { context: String, message: String },
    #[error("invalid GeoJSON: {0}")]
    GeoJson(String),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> GeoDataError + '_ {
    move |source| GeoDataError::Io { path: path.to_path_buf(), source }
}

fn format_err(context: impl Into<String>, message: impl Into<String>) -> GeoDataError {
    GeoDataError::Format { context: context.into(), message: message.into() }
}

/// North-up affine transform. `pixel_h` is negative for north-up grids.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeoTransform {
    pub origin_x: f64,
    pub origin_y: f64,
    pub pixel_w: f64,
    pub pixel_h: f64,
    pub crs: String,
}

impl GeoTransform {
    pub fn validate(&self) -> Result<(), GeoDataError> {
        if !(self.pixel_w > 0.0) || self.pixel_h == 0.0 || !self.pixel_h.is_finite() {
            return Err(format_err("transform", "pixel_w must be > 0 and pixel_h non-zero"));
        }
        Ok(())
    }

    pub fn to_array(&self) -> [f64; 6] {
        [self.origin_x, self.pixel_w, 0.0, self.origin_y, 0.0, self.pixel_h]
    }

    pub fn from_array(a: [f64; 6], crs: String) -> Result<Self, GeoDataError> {
        if a[2] != 0.0 || a[4] != 0.0 {
            return Err(format_err("transform", "rotated transforms are not supported"));
        }
        let t = Self { origin_x: a[0], pixel_w: a[1], origin_y: a[3], pixel_h: a[5], crs };
        t.validate()?;
        Ok(t)
    }

    pub fn pixel_center(&self, col: usize, row: usize) -> Point {
        [
            self.origin_x + (col as f64 + 0.5) * self.pixel_w,
            self.origin_y + (row as f64 + 0.5) * self.pixel_h,
        ]
    }

    /// Fractional pixel coordinates `(col, row)` of a CRS point.
    pub fn crs_to_fractional(&self, x: f64, y: f64) -> (f64, f64) {
        ((x - self.origin_x) / self.pixel_w, (y - self.origin_y) / self.pixel_h)
    }

    pub fn cell_rect(&self, col: usize, row: usize) -> Rect {
        let x0 = self.origin_x + col as f64 * self.pixel_w;
        let y0 = self.origin_y + row as f64 * self.pixel_h;
        Rect::new(x0, y0, x0 + self.pixel_w, y0 + self.pixel_h)
    }

    pub fn is_geographic(&self) -> bool {
        self.crs.eq_ignore_ascii_case("EPSG:4326")
    }
}

/// Dimensions plus transform of a raster grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub width: usize,
    pub height: usize,
    pub transform: GeoTransform,
}

impl GridSpec {
    pub fn len(&self) -> usize {
        self.width * self.height
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn crs_to_pixel(&self, x: f64, y: f64) -> Option<(usize, usize)> {
        let (fc, fr) = self.transform.crs_to_fractional(x, y);
        let (c, r) = (fc.floor(), fr.floor());
        if c < 0.0 || r < 0.0 || c >= self.width as f64 || r >= self.height as f64 {
            return None;
        }
        Some((c as usize, r as usize))
    }

    pub fn extent(&self) -> Rect {
        let t = &self.transform;
        Rect::new(
            t.origin_x,
            t.origin_y,
            t.origin_x + self.width as f64 * t.pixel_w,
            t.origin_y + self.height as f64 * t.pixel_h,
        )
    }

    /// Sub-grid covering columns `col0..col0+width`, rows `row0..row0+height`.
    pub fn window(&self, col0: usize, row0: usize, width: usize, height: usize) -> GridSpec {
        let t = &self.transform;
        GridSpec {
            width,
            height,
            transform: GeoTransform {
                origin_x: t.origin_x + col0 as f64 * t.pixel_w,
                origin_y: t.origin_y + row0 as f64 * t.pixel_h,
                ..t.clone()
            },
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Polarization {
    VV,
    VH,
}

impl Polarization {
    pub const BOTH: [Polarization; 2] = [Polarization::VV, Polarization::VH];

    pub fn parse(s: &str) -> Option<Self> {
        match s.to_ascii_uppercase().as_str() {
            "VV" => Some(Self::VV),
            "VH" => Some(Self::VH),
            _ => None,
        }
    }
}

impl fmt::Display for Polarization {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::VV => "VV",
            Self::VH => "VH",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum OrbitDirection {
    #[serde(rename = "ASC")]
    Ascending,
    #[serde(rename = "DESC")]
    Descending,
}

impl OrbitDirection {
    pub fn parse(s: &str) -> Option<Self> {
        match s.to_ascii_uppercase().as_str() {
            "ASC" | "ASCENDING" => Some(Self::Ascending),
            "DESC" | "DESCENDING" => Some(Self::Descending),
            _ => None,
        }
    }
}

impl fmt::Display for OrbitDirection {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Ascending => "ASC",
            Self::Descending => "DESC",
        })
    }
}

/// One acquisition of one polarization.
#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub values: Vec<f32>,
    pub timestamp: NaiveDate,
    pub orbit: u32,
    pub direction: OrbitDirection,
    pub polarization: Polarization,
}

/// Georeferenced backscatter cube. NaN marks nodata.
#[derive(Debug, Clone, PartialEq)]
pub struct RasterStack {
    pub width: usize,
    pub height: usize,
    pub transform: GeoTransform,
    pub layers: Vec<Layer>,
}

impl RasterStack {
    pub fn grid(&self) -> GridSpec {
        GridSpec { width: self.width, height: self.height, transform: self.transform.clone() }
    }

    pub fn validate(&self) -> Result<(), GeoDataError> {
        self.transform.validate()?;
        let n = self.width * self.height;
        for (i, layer) in self.layers.iter().enumerate() {
            if layer.values.len() != n {
                return Err(format_err(
                    format!("layer {i}"),
                    format!("expected {n} values, found {}", layer.values.len()),
                ));
            }
            if let Some(v) = layer
                .values
                .iter()
                .find(|v| !v.is_nan() && !(DB_RANGE.0..=DB_RANGE.1).contains(*v))
            {
                return Err(format_err(format!("layer {i}"), format!("value {v} dB outside [-50, 10]")));
            }
        }
        Ok(())
    }

    /// Relative orbit ids present, ascending.
    pub fn orbits(&self) -> Vec<u32> {
        let mut o: Vec<u32> = self.layers.iter().map(|l| l.orbit).collect();
        o.sort_unstable();
        o.dedup();
        o
    }

    /// Copy of the pixel window `col0..col0+w`, `row0..row0+h`.
    pub fn crop(&self, col0: usize, row0: usize, w: usize, h: usize) -> RasterStack {
        let grid = self.grid().window(col0, row0, w, h);
        let layers = self
            .layers
            .iter()
            .map(|l| {
                let mut values = Vec::with_capacity(w * h);
                for r in row0..row0 + h {
                    let start = r * self.width + col0;
                    values.extend_from_slice(&l.values[start..start + w]);
                }
                Layer { values, ..l.clone() }
            })
            .collect();
        RasterStack { width: w, height: h, transform: grid.transform, layers }
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct StackMeta {
    width: usize,
    height: usize,
    transform: [f64; 6],
    crs: String,
    layers: Vec<LayerMeta>,
}

#[derive(Debug, Serialize, Deserialize)]
struct LayerMeta {
    file: String,
    timestamp: String,
    orbit: u32,
    direction: String,
    polarization: String,
}

fn read_f32_file(path: &Path, expected: usize, context: &str) -> Result<Vec<f32>, GeoDataError> {
    let bytes = match fs::read(path) {
        Ok(b) => b,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => {
            return Err(format_err(context, format!("missing payload file {}", path.display())))
        }
        Err(e) => return Err(io_err(path)(e)),
    };
    if bytes.len() != expected * 4 {
        return Err(format_err(
            context,
            format!("payload has {} bytes, expected {} ({} f32 values)", bytes.len(), expected * 4, expected),
        ));
    }
    Ok(bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect())
}

fn write_f32_file(path: &Path, values: &[f32]) -> Result<(), GeoDataError> {
    let mut bytes = Vec::with_capacity(values.len() * 4);
    for v in values {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    fs::write(path, bytes).map_err(io_err(path))
}

fn read_meta<T: serde::de::DeserializeOwned>(dir: &Path) -> Result<T, GeoDataError> {
    let path = dir.join(META_FILE);
    let text = fs::read_to_string(&path).map_err(io_err(&path))?;
    serde_json::from_str(&text).map_err(|source| GeoDataError::Meta { path, source })
}

fn write_meta<T: Serialize>(dir: &Path, meta: &T) -> Result<(), GeoDataError> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let path = dir.join(META_FILE);
    let text = serde_json::to_string_pretty(meta).expect("metadata serialises");
    fs::write(&path, text + "\n").map_err(io_err(&path))
}

pub fn read_stack(dir: impl AsRef<Path>) -> Result<RasterStack, GeoDataError> {
    let dir = dir.as_ref();
    let meta: StackMeta = read_meta(dir)?;
    let transform = GeoTransform::from_array(meta.transform, meta.crs)?;
    let n = meta.width * meta.height;
    let mut layers = Vec::with_capacity(meta.layers.len());
    for (i, lm) in meta.layers.iter().enumerate() {
        let ctx = format!("layer {i} ({})", lm.file);
        let polarization = Polarization::parse(&lm.polarization)
            .ok_or_else(|| format_err(&ctx, format!("unsupported polarization '{}'", lm.polarization)))?;
        let direction = OrbitDirection::parse(&lm.direction)
            .ok_or_else(|| format_err(&ctx, format!("unknown orbit direction '{}'", lm.direction)))?;
        let timestamp = temporal::parse_date(&lm.timestamp).map_err(|e| format_err(&ctx, e.to_string()))?;
        let values = read_f32_file(&dir.join(&lm.file), n, &ctx)?;
        layers.push(Layer { values, timestamp, orbit: lm.orbit, direction, polarization });
    }
    let stack = RasterStack { width: meta.width, height: meta.height, transform, layers };
    stack.validate()?;
    Ok(stack)
}

pub fn write_stack(stack: &RasterStack, dir: impl AsRef<Path>) -> Result<(), GeoDataError> {
    let dir = dir.as_ref();
    stack.validate()?;
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let mut metas = Vec::with_capacity(stack.layers.len());
    for (i, layer) in stack.layers.iter().enumerate() {
        let file = format!("layer_{i:04}.f32");
        write_f32_file(&dir.join(&file), &layer.values)?;
        metas.push(LayerMeta {
            file,
            timestamp: temporal::format_date(layer.timestamp),
            orbit: layer.orbit,
            direction: layer.direction.to_string(),
            polarization: layer.polarization.to_string(),
        });
    }
    write_meta(
        dir,
        &StackMeta {
            width: stack.width,
            height: stack.height,
            transform: stack.transform.to_array(),
            crs: stack.transform.crs.clone(),
            layers: metas,
        },
    )
}

/// Per-pixel scores for one assessment period.
///
/// Forest outputs are probabilities in `[0, 1]` ([`ProbabilityMap`]); the
/// t-test baseline stores unbounded `|t|` values in the same container.
#[derive(Debug, Clone, PartialEq)]
pub struct PeriodMap {
    pub width: usize,
    pub height: usize,
    pub transform: GeoTransform,
    pub period_index: u8,
    pub values: Vec<f32>,
}

pub type ProbabilityMap = PeriodMap;

impl PeriodMap {
    pub fn grid(&self) -> GridSpec {
        GridSpec { width: self.width, height: self.height, transform: self.transform.clone() }
    }

    pub fn get(&self, col: usize, row: usize) -> f32 {
        self.values[row * self.width + col]
    }

    pub fn validate_probabilities(&self) -> Result<(), GeoDataError> {
        if self.values.len() != self.width * self.height {
            return Err(format_err("probability map", "value count does not match dimensions"));
        }
        if let Some(v) = self.values.iter().find(|v| !v.is_nan() && !(0.0..=1.0).contains(*v)) {
            return Err(format_err("probability map", format!("value {v} outside [0, 1]")));
        }
        Ok(())
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct MapMeta {
    width: usize,
    height: usize,
    transform: [f64; 6],
    crs: String,
    period_index: u8,
    encoding: String,
    file: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    mask: Option<String>,
}

pub fn write_map(map: &PeriodMap, dir: impl AsRef<Path>) -> Result<(), GeoDataError> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    write_f32_file(&dir.join("values.f32"), &map.values)?;
    write_meta(
        dir,
        &MapMeta {
            width: map.width,
            height: map.height,
            transform: map.transform.to_array(),
            crs: map.transform.crs.clone(),
            period_index: map.period_index,
            encoding: "f32".into(),
            file: "values.f32".into(),
            mask: None,
        },
    )
}

/// Writes the quantised form: `values.u8` plus the `values.mask` sidecar.
pub fn write_map_u8(map: &ProbabilityMap, dir: impl AsRef<Path>) -> Result<(), GeoDataError> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let bytes = export_uint8(map);
    let p = dir.join("values.u8");
    fs::write(&p, &bytes.values).map_err(io_err(&p))?;
    let m = dir.join("values.mask");
    fs::write(&m, &bytes.nodata_mask).map_err(io_err(&m))?;
    write_meta(
        dir,
        &MapMeta {
            width: map.width,
            height: map.height,
            transform: map.transform.to_array(),
            crs: map.transform.crs.clone(),
            period_index: map.period_index,
            encoding: "u8".into(),
            file: "values.u8".into(),
            mask: Some("values.mask".into()),
        },
    )
}

/// Reads an `f32` or `u8` map bundle; quantised maps are decoded.
pub fn read_map(dir: impl AsRef<Path>) -> Result<PeriodMap, GeoDataError> {
    let dir = dir.as_ref();
    let meta: MapMeta = read_meta(dir)?;
    let transform = GeoTransform::from_array(meta.transform, meta.crs)?;
    let n = meta.width * meta.height;
    let ctx = format!("map {}", dir.display());
    let values = match meta.encoding.as_str() {
        "f32" => read_f32_file(&dir.join(&meta.file), n, &ctx)?,
        "u8" => {
            let p = dir.join(&meta.file);
            let raw = fs::read(&p).map_err(io_err(&p))?;
            let mask = match &meta.mask {
                Some(m) => {
                    let mp = dir.join(m);
                    fs::read(&mp).map_err(io_err(&mp))?
                }
                None => vec![0; n.div_ceil(8)],
            };
            if raw.len() != n || mask.len() != n.div_ceil(8) {
                return Err(format_err(&ctx, "u8 payload or mask has the wrong size"));
            }
            ByteRaster { width: meta.width, height: meta.height, values: raw, nodata_mask: mask }.decode()
        }
        other => return Err(format_err(&ctx, format!("unknown encoding '{other}'"))),
    };
    Ok(PeriodMap { width: meta.width, height: meta.height, transform, period_index: meta.period_index, values })
}

/// Directory name used for the map of period `n` inside an output folder.
pub fn period_dir_name(n: u8) -> String {
    format!("T{n:02}")
}

/// Reads every `Tnn` map bundle below `root`, sorted by period.
pub fn read_map_set(root: impl AsRef<Path>) -> Result<Vec<PeriodMap>, GeoDataError> {
    let root = root.as_ref();
    let mut maps = Vec::new();
    for entry in fs::read_dir(root).map_err(io_err(root))? {
        let entry = entry.map_err(io_err(root))?;
        let path = entry.path();
        if path.join(META_FILE).is_file() {
            maps.push(read_map(&path)?);
        }
    }
    maps.sort_by_key(|m| m.period_index);
    Ok(maps)
}

/// Quantised probability raster with a bit-packed nodata mask
/// (row-major, least significant bit first, set bit = nodata).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ByteRaster {
    pub width: usize,
    pub height: usize,
    pub values: Vec<u8>,
    pub nodata_mask: Vec<u8>,
}

impl ByteRaster {
    pub fn is_nodata(&self, i: usize) -> bool {
        self.nodata_mask[i / 8] & (1 << (i % 8)) != 0
    }

    pub fn decode(&self) -> Vec<f32> {
        self.values
            .iter()
            .enumerate()
            .map(|(i, &v)| if self.is_nodata(i) { f32::NAN } else { decode_u8(v) })
            .collect()
    }
}

pub fn encode_probability(p: f32) -> u8 {
    if p.is_nan() {
        return 0;
    }
    (p.clamp(0.0, 1.0) as f64 * 255.0).round() as u8
}

pub fn decode_u8(v: u8) -> f32 {
    v as f32 / 255.0
}

/// `|decode(encode(p)) - p|` evaluated in f64, before f32 storage rounding.
pub fn quantization_error(p: f32) -> f64 {
    (encode_probability(p) as f64 / 255.0 - p as f64).abs()
}

/// Quantises `round(p * 255)`; NaN becomes 0 with its mask bit set.
pub fn export_uint8(map: &ProbabilityMap) -> ByteRaster {
    let n = map.values.len();
    let mut mask = vec![0u8; n.div_ceil(8)];
    let values = map
        .values
        .iter()
        .enumerate()
        .map(|(i, &p)| {
            if p.is_nan() {
                mask[i / 8] |= 1 << (i % 8);
            }
            encode_probability(p)
        })
        .collect();
    ByteRaster { width: map.width, height: map.height, values, nodata_mask: mask }
}

// ---------------------------------------------------------------------------
// Vector inputs

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DamageClass {
    Destroyed,
    SeverelyDamaged,
    ModeratelyDamaged,
    Other,
}

impl DamageClass {
    pub fn parse(s: &str) -> Self {
        let norm = s.trim().to_ascii_lowercase().replace([' ', '-'], "_");
        match norm.as_str() {
            "destroyed" => Self::Destroyed,
            "severely_damaged" | "severe_damage" => Self::SeverelyDamaged,
            "moderately_damaged" | "moderate_damage" => Self::ModeratelyDamaged,
            _ => Self::Other,
        }
    }

    /// Only the two most severe classes are used as damage examples.
    pub fn is_positive(self) -> bool {
        matches!(self, Self::Destroyed | Self::SeverelyDamaged)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Destroyed => "destroyed",
            Self::SeverelyDamaged => "severely_damaged",
            Self::ModeratelyDamaged => "moderately_damaged",
            Self::Other => "other",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelPoint {
    pub id: String,
    pub x: f64,
    pub y: f64,
    pub damage_class: DamageClass,
    pub unosat_date: NaiveDate,
    pub aoi: String,
}

impl LabelPoint {
    pub fn is_positive(&self) -> bool {
        self.damage_class.is_positive()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BuildingFootprint {
    pub id: String,
    pub polygons: Vec<Polygon>,
    pub area_m2: f64,
    pub osm_class: Option<String>,
}

impl BuildingFootprint {
    pub fn centroid(&self) -> Option<Point> {
        geometry::centroid(&self.polygons)
    }

    pub fn bbox(&self) -> Rect {
        let pts: Vec<Point> = self.polygons.iter().flat_map(|p| p.exterior.iter().copied()).collect();
        geometry::bbox_of(&pts)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Region {
    pub id: String,
    pub name: String,
    pub polygons: Vec<Polygon>,
}

impl Region {
    pub fn contains(&self, p: Point) -> bool {
        self.polygons.iter().any(|poly| poly.contains(p))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct FeatureWarning {
    pub index: usize,
    pub id: Option<String>,
    pub message: String,
}

/// Parsed features plus the per-feature problems encountered on the way.
#[derive(Debug, Clone, PartialEq)]
pub struct ReadReport<T> {
    pub items: Vec<T>,
    pub dropped: usize,
    pub warnings: Vec<FeatureWarning>,
}

fn feature_list(text: &str) -> Result<Vec<Value>, GeoDataError> {
    let doc: Value = serde_json::from_str(text).map_err(|e| GeoDataError::GeoJson(e.to_string()))?;
    if doc.get("type").and_then(Value::as_str) != Some("FeatureCollection") {
        return Err(GeoDataError::GeoJson("top-level object is not a FeatureCollection".into()));
    }
    match doc.get("features") {
        Some(Value::Array(a)) => Ok(a.clone()),
        _ => Err(GeoDataError::GeoJson("FeatureCollection has no 'features' array".into())),
    }
}

fn property_string(props: &Value, key: &str) -> Option<String> {
    match props.get(key)? {
        Value::String(s) => Some(s.clone()),
        Value::Number(n) => Some(n.to_string()),
        _ => None,
    }
}

fn parse_position(v: &Value) -> Result<Point, String> {
    let a = v.as_array().ok_or("position is not an array")?;
    if a.len() < 2 {
        return Err("position needs two coordinates".into());
    }
    let x = a[0].as_f64().ok_or("non-numeric coordinate")?;
    let y = a[1].as_f64().ok_or("non-numeric coordinate")?;
    if !x.is_finite() || !y.is_finite() {
        return Err("non-finite coordinate".into());
    }
    Ok([x, y])
}

fn parse_ring(v: &Value) -> Result<Vec<Point>, String> {
    let pts: Vec<Point> = v
        .as_array()
        .ok_or("ring is not an array")?
        .iter()
        .map(parse_position)
        .collect::<Result<_, _>>()?;
    if pts.len() < 4 {
        return Err("ring needs at least four positions".into());
    }
    if pts.first() != pts.last() {
        return Err("ring is not closed".into());
    }
    Ok(open_ring(pts))
}

fn parse_polygon_coords(v: &Value) -> Result<Polygon, String> {
    let rings = v.as_array().ok_or("polygon coordinates are not an array")?;
    let mut it = rings.iter();
    let exterior = parse_ring(it.next().ok_or("polygon has no rings")?)?;
    if geometry::ring_self_intersects(&exterior) {
        return Err("outer ring self-intersects".into());
    }
    let holes = it.map(parse_ring).collect::<Result<_, _>>()?;
    Ok(Polygon { exterior, holes })
}

fn parse_polygonal(geom: &Value) -> Result<Vec<Polygon>, String> {
    let coords = geom.get("coordinates").ok_or("geometry has no coordinates")?;
    match geom.get("type").and_then(Value::as_str) {
        Some("Polygon") => Ok(vec![parse_polygon_coords(coords)?]),
        Some("MultiPolygon") => coords
            .as_array()
            .ok_or("multipolygon coordinates are not an array")?
            .iter()
            .map(parse_polygon_coords)
            .collect(),
        Some(t) => Err(format!("expected Polygon or MultiPolygon, found {t}")),
        None => Err("geometry has no type".into()),
    }
}

pub fn parse_labels(text: &str) -> Result<ReadReport<LabelPoint>, GeoDataError> {
    let mut report = ReadReport { items: Vec::new(), dropped: 0, warnings: Vec::new() };
    for (index, f) in feature_list(text)?.iter().enumerate() {
        let props = f.get("properties").cloned().unwrap_or(Value::Null);
        let id = property_string(&props, "id").or_else(|| f.get("id").and_then(|v| v.as_str().map(String::from)));
        let parsed = (|| -> Result<LabelPoint, String> {
            let geom = f.get("geometry").ok_or("feature has no geometry")?;
            if geom.get("type").and_then(Value::as_str) != Some("Point") {
                return Err("label geometry must be a Point".into());
            }
            let [x, y] = parse_position(geom.get("coordinates").ok_or("point has no coordinates")?)?;
            let class = property_string(&props, "damage_class").ok_or("missing damage_class")?;
            let date = property_string(&props, "unosat_date").ok_or("missing unosat_date")?;
            let unosat_date = temporal::parse_date(&date).map_err(|e| e.to_string())?;
            Ok(LabelPoint {
                id: id.clone().unwrap_or_else(|| format!("label-{index}")),
                x,
                y,
                damage_class: DamageClass::parse(&class),
                unosat_date,
                aoi: property_string(&props, "aoi").unwrap_or_default(),
            })
        })();
        match parsed {
            Ok(l) => report.items.push(l),
            Err(message) => {
                report.dropped += 1;
                report.warnings.push(FeatureWarning { index, id, message });
            }
        }
    }
    Ok(report)
}

pub fn read_labels(path: impl AsRef<Path>) -> Result<ReadReport<LabelPoint>, GeoDataError> {
    let path = path.as_ref();
    parse_labels(&fs::read_to_string(path).map_err(io_err(path))?)
}

/// Parses building footprints and drops those below `min_area_m2`.
///
/// `area_m2` comes from the feature properties when present; otherwise it is
/// computed from the geometry, treating coordinates as metres unless `crs`
/// is EPSG:4326.
pub fn parse_footprints(text: &str, min_area_m2: f64, crs: &str) -> Result<ReadReport<BuildingFootprint>, GeoDataError> {
    let geographic = crs.eq_ignore_ascii_case("EPSG:4326");
    let mut report = ReadReport { items: Vec::new(), dropped: 0, warnings: Vec::new() };
    for (index, f) in feature_list(text)?.iter().enumerate() {
        let props = f.get("properties").cloned().unwrap_or(Value::Null);
        let id = property_string(&props, "id").or_else(|| f.get("id").and_then(|v| v.as_str().map(String::from)));
        let parsed = (|| -> Result<BuildingFootprint, String> {
            let geom = f.get("geometry").ok_or("feature has no geometry")?;
            let polygons = parse_polygonal(geom)?;
            let area_m2 = match props.get("area_m2").and_then(Value::as_f64) {
                Some(a) => a,
                None if geographic => geometry::geographic_area_m2(&polygons),
                None => polygons.iter().map(Polygon::area).sum(),
            };
            if !(area_m2 > 0.0) {
                return Err("footprint area must be positive".into());
            }
            Ok(BuildingFootprint {
                id: id.clone().unwrap_or_else(|| format!("building-{index}")),
                polygons,
                area_m2,
                osm_class: property_string(&props, "osm_class").or_else(|| property_string(&props, "class")),
            })
        })();
        match parsed {
            Ok(b) if b.area_m2 < min_area_m2 => report.dropped += 1,
            Ok(b) => report.items.push(b),
            Err(message) => {
                report.dropped += 1;
                report.warnings.push(FeatureWarning { index, id, message });
            }
        }
    }
    Ok(report)
}

pub fn read_footprints(path: impl AsRef<Path>, min_area_m2: f64, crs: &str) -> Result<ReadReport<BuildingFootprint>, GeoDataError> {
    let path = path.as_ref();
    parse_footprints(&fs::read_to_string(path).map_err(io_err(path))?, min_area_m2, crs)
}

pub fn parse_regions(text: &str) -> Result<ReadReport<Region>, GeoDataError> {
    let mut report = ReadReport { items: Vec::new(), dropped: 0, warnings: Vec::new() };
    for (index, f) in feature_list(text)?.iter().enumerate() {
        let props = f.get("properties").cloned().unwrap_or(Value::Null);
        let id = property_string(&props, "id");
        let parsed = f
            .get("geometry")
            .ok_or_else(|| "feature has no geometry".to_string())
            .and_then(parse_polygonal);
        match parsed {
            Ok(polygons) => {
                let id = id.unwrap_or_else(|| format!("region-{index}"));
                let name = property_string(&props, "name").unwrap_or_else(|| id.clone());
                report.items.push(Region { id, name, polygons });
            }
            Err(message) => {
                report.dropped += 1;
                report.warnings.push(FeatureWarning { index, id, message });
            }
        }
    }
    Ok(report)
}

pub fn read_regions(path: impl AsRef<Path>) -> Result<ReadReport<Region>, GeoDataError> {
    let path = path.as_ref();
    parse_regions(&fs::read_to_string(path).map_err(io_err(path))?)
}

fn closed_ring(ring: &[Point]) -> Value {
    let mut pts: Vec<Value> = ring.iter().map(|p| json!([p[0], p[1]])).collect();
    if let Some(first) = ring.first() {
        pts.push(json!([first[0], first[1]]));
    }
    Value::Array(pts)
}

pub fn polygons_to_geometry(polys: &[Polygon]) -> Value {
    let poly_coords = |p: &Polygon| {
        let mut rings = vec![closed_ring(&p.exterior)];
        rings.extend(p.holes.iter().map(|h| closed_ring(h)));
        Value::Array(rings)
    };
    if polys.len() == 1 {
        json!({"type": "Polygon", "coordinates": poly_coords(&polys[0])})
    } else {
        json!({"type": "MultiPolygon", "coordinates": polys.iter().map(poly_coords).collect::<Vec<_>>()})
    }
}

pub fn feature_collection(features: Vec<Value>) -> Value {
    json!({"type": "FeatureCollection", "features": features})
}

pub fn labels_to_geojson(labels: &[LabelPoint]) -> Value {
    feature_collection(
        labels
            .iter()
            .map(|l| {
                json!({
                    "type": "Feature",
                    "geometry": {"type": "Point", "coordinates": [l.x, l.y]},
                    "properties": {
                        "id": l.id,
                        "damage_class": l.damage_class.as_str(),
                        "unosat_date": temporal::format_date(l.unosat_date),
                        "aoi": l.aoi,
                    }
                })
            })
            .collect(),
    )
}

pub fn footprints_to_geojson(footprints: &[BuildingFootprint]) -> Value {
    feature_collection(
        footprints
            .iter()
            .map(|b| {
                json!({
                    "type": "Feature",
                    "geometry": polygons_to_geometry(&b.polygons),
                    "properties": {"id": b.id, "area_m2": b.area_m2, "osm_class": b.osm_class},
                })
            })
            .collect(),
    )
}

pub fn regions_to_geojson(regions: &[Region]) -> Value {
    feature_collection(
        regions
            .iter()
            .map(|r| {
                json!({
                    "type": "Feature",
                    "geometry": polygons_to_geometry(&r.polygons),
                    "properties": {"id": r.id, "name": r.name},
                })
            })
            .collect(),
    )
}

pub fn write_json(path: impl AsRef<Path>, value: &Value) -> Result<(), GeoDataError> {
    let path = path.as_ref();
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(io_err(parent))?;
    }
    let text = serde_json::to_string_pretty(value).expect("json value serialises");
    fs::write(path, text + "\n").map_err(io_err(path))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn transform() -> GeoTransform {
        GeoTransform { origin_x: 500_000.0, origin_y: 5_600_000.0, pixel_w: 10.0, pixel_h: -10.0, crs: "EPSG:32636".into() }
    }

    fn tiny_stack() -> RasterStack {
        RasterStack {
            width: 2,
            height: 2,
            transform: transform(),
            layers: vec![Layer {
                values: vec![-10.5, f32::NAN, 0.0, 3.25],
                timestamp: temporal::parse_date("2021-03-01").unwrap(),
                orbit: 44,
                direction: OrbitDirection::Descending,
                polarization: Polarization::VV,
            }],
        }
    }

    #[test]
    fn stack_round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let stack = tiny_stack();
        write_stack(&stack, dir.path()).unwrap();
        let back = read_stack(dir.path()).unwrap();
        let bits = |s: &RasterStack| s.layers[0].values.iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&stack), bits(&back));
        assert_eq!(back.layers[0].timestamp, stack.layers[0].timestamp);
        assert_eq!(back.transform, stack.transform);
    }

    #[test]
    fn missing_layer_file_is_named() {
        let dir = tempfile::tempdir().unwrap();
        let mut stack = tiny_stack();
        for _ in 0..2 {
            let mut l = stack.layers[0].clone();
            l.polarization = Polarization::VH;
            stack.layers.push(l);
        }
        write_stack(&stack, dir.path()).unwrap();
        fs::remove_file(dir.path().join("layer_0002.f32")).unwrap();
        let err = read_stack(dir.path()).unwrap_err().to_string();
        assert!(err.contains("layer 2") && err.contains("layer_0002.f32"), "{err}");
    }

    #[test]
    fn unsupported_polarization() {
        let dir = tempfile::tempdir().unwrap();
        write_stack(&tiny_stack(), dir.path()).unwrap();
        let meta = fs::read_to_string(dir.path().join(META_FILE)).unwrap().replace("\"VV\"", "\"HH\"");
        fs::write(dir.path().join(META_FILE), meta).unwrap();
        let err = read_stack(dir.path()).unwrap_err().to_string();
        assert!(err.contains("unsupported polarization 'HH'"), "{err}");
    }

    #[test]
    fn pixel_mapping_is_bijective() {
        let grid = GridSpec { width: 7, height: 5, transform: transform() };
        for r in 0..5 {
            for c in 0..7 {
                let [x, y] = grid.transform.pixel_center(c, r);
                assert_eq!(grid.crs_to_pixel(x, y), Some((c, r)));
            }
        }
        assert_eq!(grid.crs_to_pixel(499_999.0, 5_599_995.0), None);
    }

    #[test]
    fn uint8_examples() {
        assert_eq!(encode_probability(0.0), 0);
        assert_eq!(encode_probability(1.0), 255);
        assert_eq!(encode_probability(0.655), 167);
        let map = PeriodMap { width: 3, height: 1, transform: transform(), period_index: 5, values: vec![0.2, f32::NAN, 1.0] };
        let b = export_uint8(&map);
        assert_eq!(b.values, vec![51, 0, 255]);
        assert_eq!(b.nodata_mask, vec![0b010]);
        let d = b.decode();
        assert!(d[1].is_nan());
        assert!((d[0] - 0.2).abs() <= 1.0 / 510.0);
    }

    #[test]
    fn u8_map_bundle_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let map = PeriodMap { width: 2, height: 2, transform: transform(), period_index: 7, values: vec![0.0, 0.5, f32::NAN, 1.0] };
        write_map_u8(&map, dir.path()).unwrap();
        let back = read_map(dir.path()).unwrap();
        assert_eq!(back.period_index, 7);
        assert!(back.values[2].is_nan());
        assert_eq!(back.values[1], decode_u8(128));
        assert!(quantization_error(0.5) <= 1.0 / 510.0);
    }

    #[test]
    fn footprint_area_filter() {
        let text = r#"{"type":"FeatureCollection","features":[
            {"type":"Feature","properties":{"id":"a","area_m2":49.9},
             "geometry":{"type":"Polygon","coordinates":[[[0,0],[10,0],[10,5],[0,5],[0,0]]]}},
            {"type":"Feature","properties":{"id":"b"},
             "geometry":{"type":"Polygon","coordinates":[[[0,0],[10,0],[10,5],[0,5],[0,0]]]}},
            {"type":"Feature","properties":{"id":"c"},
             "geometry":{"type":"Polygon","coordinates":[[[0,0],[1,1],[1,0],[0,1],[0,0]]]}}
        ]}"#;
        let r = parse_footprints(text, 50.0, "EPSG:32636").unwrap();
        assert_eq!(r.items.len(), 1);
        assert_eq!(r.items[0].id, "b");
        assert_eq!(r.items[0].area_m2, 50.0);
        assert_eq!(r.dropped, 2);
        assert_eq!(r.warnings.len(), 1);
        assert_eq!(r.warnings[0].id.as_deref(), Some("c"));
    }

    #[test]
    fn label_classes() {
        let text = r#"{"type":"FeatureCollection","features":[
            {"type":"Feature","geometry":{"type":"Point","coordinates":[1,2]},
             "properties":{"id":"p1","damage_class":"moderately_damaged","unosat_date":"2022-05-10","aoi":"x"}},
            {"type":"Feature","geometry":{"type":"Point","coordinates":[1,2]},
             "properties":{"id":"p2","damage_class":"Destroyed","unosat_date":"2022-05-10"}},
            {"type":"Feature","geometry":{"type":"Point","coordinates":[1]},
             "properties":{"id":"p3","damage_class":"destroyed","unosat_date":"2022-05-10"}}
        ]}"#;
        let r = parse_labels(text).unwrap();
        assert_eq!(r.items.len(), 2);
        assert!(!r.items[0].is_positive());
        assert!(r.items[1].is_positive());
        assert_eq!(r.warnings.len(), 1);
    }

    #[test]
    fn empty_collection() {
        let r = parse_labels(r#"{"type":"FeatureCollection","features":[]}"#).unwrap();
        assert!(r.items.is_empty() && r.warnings.is_empty());
        let r = parse_footprints(r#"{"type":"FeatureCollection","features":[]}"#, 50.0, "EPSG:4326").unwrap();
        assert!(r.items.is_empty() && r.warnings.is_empty());
    }

    #[test]
    fn geojson_writers_round_trip() {
        let fp = BuildingFootprint {
            id: "b1".into(),
            polygons: vec![Polygon::rect(Rect::new(0.0, 0.0, 10.0, 8.0))],
            area_m2: 80.0,
            osm_class: Some("house".into()),
        };
        let text = footprints_to_geojson(std::slice::from_ref(&fp)).to_string();
        let back = parse_footprints(&text, 50.0, "EPSG:32636").unwrap();
        assert_eq!(back.items, vec![fp]);
    }
}
