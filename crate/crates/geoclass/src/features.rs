//! Location feature extractors.
//!
//! Five features describe the surroundings of a GPS coordinate:
//!
//! - [`gps_encoding`]: one-hot grid-cell indicator.
//! - [`map_patch`]: normalized 17x17 RGB patches from a set of raster maps.
//! - [`acs_feature`]: survey statistics of the nearest zip-code centroid.
//! - [`hashtag_context`]: radius-pooled, dually normalized hashtag counts.
//! - [`visual_context`]: the same pipeline over per-image concept
//!   probabilities, pooled by summing.
//!
//! [`assemble`] bundles the enabled features (plus the precomputed image
//! embedding) for one record.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::geodata::{haversine_m, quantize, GeoPoint, GeoRecord, GridSpec, SpatialIndex};
use crate::{Error, Result};

/// Number of raster maps in the standard configuration.
pub const MAP_COUNT: usize = 10;

/// Side length of the extracted raster patch, in pixels.
pub const MAP_PATCH_SIZE: usize = 17;

/// Ascending pooling radii in meters. Serializes as a plain array.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct RadiiSet {
    radii: Vec<f64>,
}

impl RadiiSet {
    pub fn new(radii: Vec<f64>) -> Result<Self> {
        if radii.len() < 2 {
            return Err(Error::invalid(
                "radii set",
                format!("{} radii (need >= 2)", radii.len()),
            ));
        }
        if !(radii[0] > 0.0) {
            return Err(Error::invalid("radii set", format!("first radius {} not > 0", radii[0])));
        }
        for pair in radii.windows(2) {
            if !(pair[0] < pair[1]) {
                return Err(Error::invalid(
                    "radii set",
                    format!("not strictly increasing: {} then {}", pair[0], pair[1]),
                ));
            }
        }
        Ok(RadiiSet { radii })
    }

    /// {1000, 2000, ..., 10000} meters.
    pub fn paper_default() -> Self {
        RadiiSet {
            radii: (1..=10).map(|i| 1000.0 * i as f64).collect(),
        }
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.radii
    }

    pub fn len(&self) -> usize {
        self.radii.len()
    }

    pub fn is_empty(&self) -> bool {
        self.radii.is_empty()
    }

    pub fn min(&self) -> f64 {
        self.radii[0]
    }

    pub fn max(&self) -> f64 {
        self.radii[self.radii.len() - 1]
    }
}

/// One-hot indicator of the grid cell containing `point`.
pub fn gps_encoding(point: GeoPoint, grid: &GridSpec) -> Result<Vec<f64>> {
    let cell = quantize(point, grid)?;
    let mut v = vec![0.0; grid.cell_count()];
    v[cell.flat] = 1.0;
    Ok(v)
}

/// RGB raster covering a bounding box, row 0 at the northern edge.
#[derive(Debug, Clone, PartialEq)]
pub struct RasterMap {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    pub bbox: crate::geodata::BoundingBox,
    pixels: Vec<u8>,
}

impl RasterMap {
    pub fn new(
        name: String,
        rows: usize,
        cols: usize,
        bbox: crate::geodata::BoundingBox,
        pixels: Vec<u8>,
    ) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(Error::invalid("raster", "zero rows or cols".to_string()));
        }
        if pixels.len() != rows * cols * 3 {
            return Err(Error::DimMismatch {
                context: format!("raster '{name}' pixel buffer"),
                expected: rows * cols * 3,
                actual: pixels.len(),
            });
        }
        Ok(RasterMap {
            name,
            rows,
            cols,
            bbox,
            pixels,
        })
    }

    pub fn pixel(&self, row: usize, col: usize) -> [u8; 3] {
        let base = (row * self.cols + col) * 3;
        [self.pixels[base], self.pixels[base + 1], self.pixels[base + 2]]
    }

    pub fn pixels(&self) -> &[u8] {
        &self.pixels
    }

    /// Pixel containing `point`. Row 0 is the north edge, so latitude is
    /// measured down from `lat_max`.
    pub fn locate(&self, point: GeoPoint) -> Result<(usize, usize)> {
        if !self.bbox.contains(point) {
            return Err(Error::OutOfBounds {
                lon: point.lon,
                lat: point.lat,
                scope: format!("raster map '{}'", self.name),
            });
        }
        let row_f = (self.bbox.lat_max - point.lat) / self.bbox.lat_span() * self.rows as f64;
        let col_f = (point.lon - self.bbox.lon_min) / self.bbox.lon_span() * self.cols as f64;
        Ok((
            (row_f as usize).min(self.rows - 1),
            (col_f as usize).min(self.cols - 1),
        ))
    }

    /// Read the `GEORASTER v1` format: three header lines (magic,
    /// `rows cols`, `lon_min lat_min lon_max lat_max`) followed by
    /// rows*cols*3 raw RGB bytes. The map name is the file stem.
    pub fn read(path: &Path) -> Result<Self> {
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let mut reader = BufReader::new(file);
        let mut line = String::new();

        reader.read_line(&mut line).map_err(|e| Error::io(path, e))?;
        if line.trim_end() != "GEORASTER v1" {
            return Err(Error::format(path, 1, "expected magic 'GEORASTER v1'"));
        }

        line.clear();
        reader.read_line(&mut line).map_err(|e| Error::io(path, e))?;
        let dims: Vec<usize> = line
            .split_whitespace()
            .map(|t| t.parse::<usize>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| Error::format(path, 2, e.to_string()))?;
        if dims.len() != 2 {
            return Err(Error::format(path, 2, "expected 'rows cols'"));
        }

        line.clear();
        reader.read_line(&mut line).map_err(|e| Error::io(path, e))?;
        let nums: Vec<f64> = line
            .split_whitespace()
            .map(|t| t.parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| Error::format(path, 3, e.to_string()))?;
        if nums.len() != 4 {
            return Err(Error::format(path, 3, "expected 'lon_min lat_min lon_max lat_max'"));
        }
        let bbox = crate::geodata::BoundingBox::new(nums[0], nums[1], nums[2], nums[3])?;

        let mut pixels = Vec::new();
        reader
            .read_to_end(&mut pixels)
            .map_err(|e| Error::io(path, e))?;
        let name = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "raster".to_string());
        RasterMap::new(name, dims[0], dims[1], bbox, pixels)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        writeln!(w, "GEORASTER v1").map_err(|e| Error::io(path, e))?;
        writeln!(w, "{} {}", self.rows, self.cols).map_err(|e| Error::io(path, e))?;
        writeln!(
            w,
            "{} {} {} {}",
            self.bbox.lon_min, self.bbox.lat_min, self.bbox.lon_max, self.bbox.lat_max
        )
        .map_err(|e| Error::io(path, e))?;
        w.write_all(&self.pixels).map_err(|e| Error::io(path, e))?;
        w.flush().map_err(|e| Error::io(path, e))
    }
}

/// Row and column indices of a `patch_size` window centered on
/// `center`, clamped so out-of-raster positions replicate the nearest edge
/// pixel. `patch_size` must be odd.
pub fn clamp_patch(
    center: (usize, usize),
    patch_size: usize,
    dims: (usize, usize),
) -> (Vec<usize>, Vec<usize>) {
    debug_assert!(patch_size % 2 == 1, "patch size must be odd");
    let half = (patch_size / 2) as isize;
    let clamp_axis = |c: usize, n: usize| -> Vec<usize> {
        (-half..=half)
            .map(|d| (c as isize + d).clamp(0, n as isize - 1) as usize)
            .collect()
    };
    (clamp_axis(center.0, dims.0), clamp_axis(center.1, dims.1))
}

/// Concatenated normalized RGB patches around `point`, one per map, in map
/// order then row-major then channel. Dimension is `maps.len() * 17*17*3`
/// (8670 for the standard ten maps).
pub fn map_patch(point: GeoPoint, maps: &[RasterMap]) -> Result<Vec<f64>> {
    let mut out = Vec::with_capacity(maps.len() * MAP_PATCH_SIZE * MAP_PATCH_SIZE * 3);
    for map in maps {
        let center = map.locate(point)?;
        let (rows, cols) = clamp_patch(center, MAP_PATCH_SIZE, (map.rows, map.cols));
        for &r in &rows {
            for &c in &cols {
                let px = map.pixel(r, c);
                out.extend(px.iter().map(|&b| b as f64 / 255.0));
            }
        }
    }
    Ok(out)
}

/// One zip-code row: centroid plus survey statistics.
#[derive(Debug, Clone, PartialEq)]
pub struct ZipEntry {
    pub zip: String,
    pub centroid: GeoPoint,
    pub stats: Vec<f64>,
}

/// Zip-code survey table; all stats vectors share one dimension.
#[derive(Debug, Clone, PartialEq)]
pub struct ZipTable {
    entries: Vec<ZipEntry>,
    dim: usize,
}

impl ZipTable {
    pub fn new(entries: Vec<ZipEntry>) -> Result<Self> {
        let dim = match entries.first() {
            Some(e) => e.stats.len(),
            None => return Err(Error::invalid("zip table", "no entries".to_string())),
        };
        for e in &entries {
            if e.stats.len() != dim {
                return Err(Error::DimMismatch {
                    context: format!("zip {} stats", e.zip),
                    expected: dim,
                    actual: e.stats.len(),
                });
            }
        }
        Ok(ZipTable { entries, dim })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[ZipEntry] {
        &self.entries
    }

    /// Read `zip,lon,lat,v1,...,vD` rows (no header).
    pub fn read_csv(path: &Path) -> Result<Self> {
        let mut reader = csv::ReaderBuilder::new()
            .has_headers(false)
            .from_path(path)
            .map_err(|e| Error::format(path, 0, e.to_string()))?;
        let mut entries = Vec::new();
        for (idx, row) in reader.records().enumerate() {
            let row = row.map_err(|e| Error::format(path, idx + 1, e.to_string()))?;
            if row.len() < 4 {
                return Err(Error::format(path, idx + 1, "need zip,lon,lat and at least one stat"));
            }
            let zip = row[0].to_string();
            let lon: f64 = row[1]
                .parse()
                .map_err(|_| Error::format(path, idx + 1, format!("bad lon '{}'", &row[1])))?;
            let lat: f64 = row[2]
                .parse()
                .map_err(|_| Error::format(path, idx + 1, format!("bad lat '{}'", &row[2])))?;
            let stats = row
                .iter()
                .skip(3)
                .map(|t| {
                    t.parse::<f64>()
                        .map_err(|_| Error::format(path, idx + 1, format!("bad stat '{t}'")))
                })
                .collect::<Result<Vec<f64>>>()?;
            entries.push(ZipEntry {
                zip,
                centroid: GeoPoint::new(lon, lat)?,
                stats,
            });
        }
        ZipTable::new(entries)
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        for e in &self.entries {
            write!(w, "{},{},{}", e.zip, e.centroid.lon, e.centroid.lat).map_err(|err| Error::io(path, err))?;
            for s in &e.stats {
                write!(w, ",{s}").map_err(|err| Error::io(path, err))?;
            }
            writeln!(w).map_err(|err| Error::io(path, err))?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }
}

/// Survey statistics of the zip whose centroid is nearest by haversine
/// distance; ties break toward the lexicographically smallest zip.
pub fn acs_feature(point: GeoPoint, table: &ZipTable) -> Result<Vec<f64>> {
    let best = table
        .entries
        .iter()
        .min_by(|a, b| {
            haversine_m(point, a.centroid)
                .total_cmp(&haversine_m(point, b.centroid))
                .then_with(|| a.zip.cmp(&b.zip))
        })
        .ok_or_else(|| Error::invalid("zip table", "no entries".to_string()))?;
    Ok(best.stats.clone())
}

/// Radius-pooled context counts with both normalizations, kept per radius.
///
/// `blocks[r] = (across, within)` where `across[h] = count_h / sum_h'
/// count_h'` within radius `r` (all zeros when the neighborhood is empty)
/// and `within[h] = count_h / global total of h` (zero when `h` never
/// occurs). Flattened radius-major with block (a) before block (b).
#[derive(Debug, Clone, PartialEq)]
pub struct ContextProfile {
    key_count: usize,
    blocks: Vec<(Vec<f64>, Vec<f64>)>,
}

impl ContextProfile {
    pub fn key_count(&self) -> usize {
        self.key_count
    }

    pub fn radius_count(&self) -> usize {
        self.blocks.len()
    }

    pub fn blocks(&self) -> &[(Vec<f64>, Vec<f64>)] {
        &self.blocks
    }

    /// Feature layout: for each radius, the across-normalized block then the
    /// within-normalized block, keys ascending. Dimension 2 * keys * radii.
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(2 * self.key_count * self.blocks.len());
        for (across, within) in &self.blocks {
            out.extend_from_slice(across);
            out.extend_from_slice(within);
        }
        out
    }

    /// Histogram-function value rows: function (n, h) -- normalization `n`
    /// (0 = across, 1 = within) of key `h` -- holds that entry's values over
    /// the radius set. Row index is `n * keys + h`, matching the bank order.
    pub fn fn_values(&self) -> Vec<Vec<f64>> {
        let k = self.key_count;
        let mut rows = vec![Vec::with_capacity(self.blocks.len()); 2 * k];
        for (across, within) in &self.blocks {
            for h in 0..k {
                rows[h].push(across[h]);
                rows[k + h].push(within[h]);
            }
        }
        rows
    }
}

/// Pool the index around `point` at every radius and apply both
/// normalizations. Works for hashtag counts and concept probability sums
/// alike; the index's weights decide which.
pub fn context_profile(
    point: GeoPoint,
    index: &SpatialIndex,
    radii: &RadiiSet,
) -> Result<ContextProfile> {
    let key_count = index.key_space();
    let totals = index.totals();
    let raw = index.radius_profile(point, radii.as_slice())?;
    let mut blocks = Vec::with_capacity(raw.len());
    for counts in raw {
        let neighborhood: f64 = counts.iter().sum();
        let across = if neighborhood > 0.0 {
            counts.iter().map(|c| c / neighborhood).collect()
        } else {
            vec![0.0; key_count]
        };
        let within = counts
            .iter()
            .zip(totals)
            .map(|(c, t)| if *t > 0.0 { c / t } else { 0.0 })
            .collect();
        blocks.push((across, within));
    }
    Ok(ContextProfile { key_count, blocks })
}

/// Dually normalized hashtag histogram feature: dimension 2 * |H| * |R|.
pub fn hashtag_context(point: GeoPoint, index: &SpatialIndex, radii: &RadiiSet) -> Result<Vec<f64>> {
    Ok(context_profile(point, index, radii)?.flatten())
}

/// Dually normalized concept-probability feature: dimension
/// 2 * concepts * |R| (11880 for the standard 594 concepts and ten radii).
pub fn visual_context(point: GeoPoint, index: &SpatialIndex, radii: &RadiiSet) -> Result<Vec<f64>> {
    Ok(context_profile(point, index, radii)?.flatten())
}

/// Feature identities, in the fixed concatenation order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum FeatureKind {
    #[serde(rename = "embedding")]
    Embedding,
    #[serde(rename = "gps")]
    GpsEncoding,
    #[serde(rename = "map")]
    MapPatch,
    #[serde(rename = "acs")]
    Acs,
    #[serde(rename = "hashtag")]
    HashtagContext,
    #[serde(rename = "visual")]
    VisualContext,
}

impl FeatureKind {
    pub const ALL: [FeatureKind; 6] = [
        FeatureKind::Embedding,
        FeatureKind::GpsEncoding,
        FeatureKind::MapPatch,
        FeatureKind::Acs,
        FeatureKind::HashtagContext,
        FeatureKind::VisualContext,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            FeatureKind::Embedding => "embedding",
            FeatureKind::GpsEncoding => "gps",
            FeatureKind::MapPatch => "map",
            FeatureKind::Acs => "acs",
            FeatureKind::HashtagContext => "hashtag",
            FeatureKind::VisualContext => "visual",
        }
    }

    pub fn from_name(name: &str) -> Option<FeatureKind> {
        FeatureKind::ALL.iter().copied().find(|k| k.name() == name)
    }

    /// Context features are the radius-pooled ones eligible for radius
    /// learning.
    pub fn is_context(&self) -> bool {
        matches!(self, FeatureKind::HashtagContext | FeatureKind::VisualContext)
    }
}

/// Named feature vectors for one record, in [`FeatureKind`] order.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureBundle {
    parts: Vec<(FeatureKind, Vec<f64>)>,
}

impl FeatureBundle {
    pub fn new() -> Self {
        FeatureBundle { parts: Vec::new() }
    }

    /// Parts must arrive in `FeatureKind` order with finite entries.
    pub fn push(&mut self, kind: FeatureKind, values: Vec<f64>) -> Result<()> {
        if let Some((last, _)) = self.parts.last() {
            if *last >= kind {
                return Err(Error::invalid(
                    "feature bundle",
                    format!("{} pushed after {}", kind.name(), last.name()),
                ));
            }
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid(
                "feature bundle",
                format!("non-finite entry in {}", kind.name()),
            ));
        }
        self.parts.push((kind, values));
        Ok(())
    }

    pub fn parts(&self) -> &[(FeatureKind, Vec<f64>)] {
        &self.parts
    }

    pub fn get(&self, kind: FeatureKind) -> Option<&[f64]> {
        self.parts
            .iter()
            .find(|(k, _)| *k == kind)
            .map(|(_, v)| v.as_slice())
    }

    pub fn dims(&self) -> Vec<(FeatureKind, usize)> {
        self.parts.iter().map(|(k, v)| (*k, v.len())).collect()
    }
}

impl Default for FeatureBundle {
    fn default() -> Self {
        FeatureBundle::new()
    }
}

/// Which features to extract.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureConfig {
    pub embedding: bool,
    pub gps_grid: Option<GridSpec>,
    pub map: bool,
    pub acs: bool,
    pub hashtag: bool,
    pub visual: bool,
    pub radii: RadiiSet,
}

impl FeatureConfig {
    pub fn embedding_only() -> Self {
        FeatureConfig {
            embedding: true,
            gps_grid: None,
            map: false,
            acs: false,
            hashtag: false,
            visual: false,
            radii: RadiiSet::paper_default(),
        }
    }

    pub fn enabled_kinds(&self) -> Vec<FeatureKind> {
        let mut kinds = Vec::new();
        if self.embedding {
            kinds.push(FeatureKind::Embedding);
        }
        if self.gps_grid.is_some() {
            kinds.push(FeatureKind::GpsEncoding);
        }
        if self.map {
            kinds.push(FeatureKind::MapPatch);
        }
        if self.acs {
            kinds.push(FeatureKind::Acs);
        }
        if self.hashtag {
            kinds.push(FeatureKind::HashtagContext);
        }
        if self.visual {
            kinds.push(FeatureKind::VisualContext);
        }
        kinds
    }
}

/// Loaded extraction resources; only those for enabled features are needed.
#[derive(Debug, Default)]
pub struct Resources {
    pub maps: Vec<RasterMap>,
    pub zip_table: Option<ZipTable>,
    pub hashtag_index: Option<SpatialIndex>,
    pub visual_index: Option<SpatialIndex>,
}

/// Extract every enabled feature for one record. Deterministic: two calls
/// with the same inputs yield identical bundles.
pub fn assemble(record: &GeoRecord, config: &FeatureConfig, resources: &Resources) -> Result<FeatureBundle> {
    let mut bundle = FeatureBundle::new();
    if config.embedding {
        bundle.push(FeatureKind::Embedding, record.embedding.clone())?;
    }
    if let Some(grid) = &config.gps_grid {
        bundle.push(FeatureKind::GpsEncoding, gps_encoding(record.point, grid)?)?;
    }
    if config.map {
        if resources.maps.is_empty() {
            return Err(Error::Config("map feature enabled but no raster maps loaded".to_string()));
        }
        bundle.push(FeatureKind::MapPatch, map_patch(record.point, &resources.maps)?)?;
    }
    if config.acs {
        let table = resources
            .zip_table
            .as_ref()
            .ok_or_else(|| Error::Config("acs feature enabled but no zip table loaded".to_string()))?;
        bundle.push(FeatureKind::Acs, acs_feature(record.point, table)?)?;
    }
    if config.hashtag {
        let index = resources
            .hashtag_index
            .as_ref()
            .ok_or_else(|| Error::Config("hashtag feature enabled but no hashtag index loaded".to_string()))?;
        bundle.push(
            FeatureKind::HashtagContext,
            hashtag_context(record.point, index, &config.radii)?,
        )?;
    }
    if config.visual {
        let index = resources
            .visual_index
            .as_ref()
            .ok_or_else(|| Error::Config("visual feature enabled but no concept index loaded".to_string()))?;
        bundle.push(
            FeatureKind::VisualContext,
            visual_context(record.point, index, &config.radii)?,
        )?;
    }
    Ok(bundle)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geodata::{build_index, BoundingBox, CorpusEntry};
    use rand::Rng;

    fn pt(lon: f64, lat: f64) -> GeoPoint {
        GeoPoint { lon, lat }
    }

    fn us_box() -> BoundingBox {
        BoundingBox::contiguous_us()
    }

    fn flat_raster(name: &str, rows: usize, cols: usize, rgb: [u8; 3]) -> RasterMap {
        let mut pixels = Vec::with_capacity(rows * cols * 3);
        for _ in 0..rows * cols {
            pixels.extend_from_slice(&rgb);
        }
        RasterMap::new(name.to_string(), rows, cols, us_box(), pixels).unwrap()
    }

    #[test]
    fn gps_encoding_one_hot_at_min_corner() {
        let grid = GridSpec::new(10, 20, us_box()).unwrap();
        let v = gps_encoding(pt(-125.0, 24.0), &grid).unwrap();
        assert_eq!(v.len(), 200);
        assert_eq!(v[0], 1.0);
        assert_eq!(v.iter().sum::<f64>(), 1.0);
    }

    #[test]
    fn gps_encoding_paper_grid_dimension() {
        let grid = GridSpec::new(100, 200, us_box()).unwrap();
        let v = gps_encoding(pt(-100.0, 40.0), &grid).unwrap();
        assert_eq!(v.len(), 20_000);
    }

    #[test]
    fn gps_encoding_is_exactly_one_hot() {
        let grid = GridSpec::new(25, 50, us_box()).unwrap();
        let mut rng = crate::rng::stream_rng(71, crate::rng::Stream::Synth);
        for _ in 0..200 {
            let p = pt(
                rng.random_range(-125.0..-66.0),
                rng.random_range(24.0..50.0),
            );
            let v = gps_encoding(p, &grid).unwrap();
            assert_eq!(v.iter().filter(|&&x| x == 1.0).count(), 1);
            assert_eq!(v.iter().filter(|&&x| x == 0.0).count(), v.len() - 1);
        }
    }

    #[test]
    fn gps_encoding_out_of_bbox_errors() {
        let grid = GridSpec::new(10, 20, us_box()).unwrap();
        assert!(gps_encoding(pt(10.0, 40.0), &grid).is_err());
    }

    #[test]
    fn map_patch_black_and_white() {
        let black: Vec<RasterMap> = (0..MAP_COUNT)
            .map(|i| flat_raster(&format!("m{i}"), 40, 60, [0, 0, 0]))
            .collect();
        let v = map_patch(pt(-100.0, 40.0), &black).unwrap();
        assert_eq!(v.len(), 8670);
        assert!(v.iter().all(|&x| x == 0.0));

        let white: Vec<RasterMap> = (0..MAP_COUNT)
            .map(|i| flat_raster(&format!("m{i}"), 40, 60, [255, 255, 255]))
            .collect();
        let v = map_patch(pt(-100.0, 40.0), &white).unwrap();
        assert!(v.iter().all(|&x| x == 1.0));
    }

    #[test]
    fn map_patch_red_pixel_offset() {
        // One map, 100x100; pixel (10, 20) pure red, rest black. A patch
        // centered there sees the red pixel at patch position (8, 8):
        // offset (8*17 + 8)*3 = 432 for the red channel.
        let mut pixels = vec![0u8; 100 * 100 * 3];
        pixels[(10 * 100 + 20) * 3] = 255;
        let map = RasterMap::new("red".to_string(), 100, 100, us_box(), pixels).unwrap();
        // locate() must land on (10, 20): invert the north-down row mapping.
        let lat = us_box().lat_max - (10.5 / 100.0) * us_box().lat_span();
        let lon = us_box().lon_min + (20.5 / 100.0) * us_box().lon_span();
        let p = pt(lon, lat);
        assert_eq!(map.locate(p).unwrap(), (10, 20));
        let v = map_patch(p, std::slice::from_ref(&map)).unwrap();
        assert_eq!(v.len(), 867);
        assert_eq!(v[432], 1.0);
        assert_eq!(v.iter().sum::<f64>(), 1.0);
    }

    #[test]
    fn map_patch_outside_names_map() {
        let maps = vec![flat_raster("elevation", 10, 10, [1, 2, 3])];
        let err = map_patch(pt(10.0, 40.0), &maps).unwrap_err();
        assert!(err.to_string().contains("elevation"));
    }

    #[test]
    fn clamp_patch_corners_and_interior() {
        let (rows, cols) = clamp_patch((0, 0), 17, (100, 100));
        assert_eq!(rows[0..9], [0; 9]);
        assert_eq!(rows[9..17], [1, 2, 3, 4, 5, 6, 7, 8]);
        assert_eq!(cols, rows);

        let (rows, cols) = clamp_patch((50, 60), 17, (100, 100));
        assert_eq!(rows, (42..=58).collect::<Vec<_>>());
        assert_eq!(cols, (52..=68).collect::<Vec<_>>());

        let (rows, _) = clamp_patch((99, 99), 17, (100, 100));
        assert_eq!(rows[0..8], (91..=98).collect::<Vec<_>>()[..]);
        assert_eq!(rows[8..17], [99; 9]);
    }

    #[test]
    fn acs_single_entry_table() {
        let table = ZipTable::new(vec![ZipEntry {
            zip: "94301".to_string(),
            centroid: pt(-122.14, 37.44),
            stats: vec![1.0, 2.0, 3.0],
        }])
        .unwrap();
        assert_eq!(acs_feature(pt(-70.0, 45.0), &table).unwrap(), vec![1.0, 2.0, 3.0]);
    }

    #[test]
    fn acs_exact_centroid_match() {
        let table = ZipTable::new(vec![
            ZipEntry {
                zip: "10001".to_string(),
                centroid: pt(-74.0, 40.75),
                stats: vec![1.0],
            },
            ZipEntry {
                zip: "94301".to_string(),
                centroid: pt(-122.14, 37.44),
                stats: vec![2.0],
            },
        ])
        .unwrap();
        assert_eq!(acs_feature(pt(-122.14, 37.44), &table).unwrap(), vec![2.0]);
    }

    #[test]
    fn acs_matches_brute_force_nearest() {
        let mut rng = crate::rng::stream_rng(81, crate::rng::Stream::Synth);
        let entries: Vec<ZipEntry> = (0..50)
            .map(|i| ZipEntry {
                zip: format!("{:05}", 10000 + i),
                centroid: pt(
                    rng.random_range(-125.0..-66.0),
                    rng.random_range(24.0..50.0),
                ),
                stats: vec![i as f64],
            })
            .collect();
        let table = ZipTable::new(entries.clone()).unwrap();
        for _ in 0..20 {
            let q = pt(
                rng.random_range(-125.0..-66.0),
                rng.random_range(24.0..50.0),
            );
            let got = acs_feature(q, &table).unwrap();
            let mut best = 0usize;
            for i in 1..entries.len() {
                let (di, db) = (
                    haversine_m(q, entries[i].centroid),
                    haversine_m(q, entries[best].centroid),
                );
                if di < db || (di == db && entries[i].zip < entries[best].zip) {
                    best = i;
                }
            }
            assert_eq!(got, entries[best].stats);
        }
    }

    #[test]
    fn acs_tie_breaks_to_smallest_zip() {
        let c = pt(-100.0, 40.0);
        let table = ZipTable::new(vec![
            ZipEntry {
                zip: "20002".to_string(),
                centroid: c,
                stats: vec![2.0],
            },
            ZipEntry {
                zip: "10001".to_string(),
                centroid: c,
                stats: vec![1.0],
            },
        ])
        .unwrap();
        assert_eq!(acs_feature(c, &table).unwrap(), vec![1.0]);
    }

    fn small_grid() -> GridSpec {
        GridSpec::new(2500, 5000, us_box()).unwrap()
    }

    #[test]
    fn context_empty_index_is_zero() {
        let index = build_index(std::iter::empty(), small_grid(), 5).unwrap();
        let radii = RadiiSet::paper_default();
        let v = hashtag_context(pt(-100.0, 40.0), &index, &radii).unwrap();
        assert_eq!(v.len(), 2 * 5 * 10);
        assert!(v.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn context_single_tag_at_center() {
        let p = pt(-100.0, 40.0);
        let index = build_index(
            [CorpusEntry {
                point: p,
                key: 0,
                weight: 1.0,
            }],
            small_grid(),
            3,
        )
        .unwrap();
        let radii = RadiiSet::paper_default();
        let profile = context_profile(p, &index, &radii).unwrap();
        for (across, within) in profile.blocks() {
            assert_eq!(across, &vec![1.0, 0.0, 0.0]);
            assert_eq!(within, &vec![1.0, 0.0, 0.0]);
        }
    }

    #[test]
    fn context_matches_brute_force() {
        let mut rng = crate::rng::stream_rng(91, crate::rng::Stream::Synth);
        // Cluster the corpus so small radii actually catch neighbors.
        let center = pt(-100.0, 40.0);
        let entries: Vec<CorpusEntry> = (0..200)
            .map(|_| CorpusEntry {
                point: pt(
                    center.lon + rng.random_range(-0.2..0.2),
                    center.lat + rng.random_range(-0.2..0.2),
                ),
                key: rng.random_range(0..5),
                weight: 1.0,
            })
            .collect();
        let grid = small_grid();
        let index = build_index(entries.clone(), grid, 5).unwrap();
        let radii = RadiiSet::paper_default();
        let got = hashtag_context(center, &index, &radii).unwrap();
        assert_eq!(got.len(), 2 * 5 * 10);

        // Brute force: re-quantize every corpus point, distance to its cell
        // center, tally and normalize by hand per radius.
        let mut totals = vec![0.0; 5];
        for e in &entries {
            totals[e.key] += e.weight;
        }
        let mut want = Vec::new();
        for &r in radii.as_slice() {
            let mut counts = vec![0.0; 5];
            for e in &entries {
                let cell = quantize(e.point, &grid).unwrap();
                let cc = crate::geodata::cell_center(cell, &grid).unwrap();
                if haversine_m(center, cc) <= r {
                    counts[e.key] += e.weight;
                }
            }
            let total: f64 = counts.iter().sum();
            for &c in &counts {
                want.push(if total > 0.0 { c / total } else { 0.0 });
            }
            for (c, t) in counts.iter().zip(&totals) {
                want.push(if *t > 0.0 { c / t } else { 0.0 });
            }
        }
        assert_eq!(got.len(), want.len());
        for (g, w) in got.iter().zip(&want) {
            assert!((g - w).abs() < 1e-12, "got {g}, want {w}");
        }
    }

    #[test]
    fn context_normalization_invariants() {
        let mut rng = crate::rng::stream_rng(92, crate::rng::Stream::Synth);
        let center = pt(-90.0, 35.0);
        let entries: Vec<CorpusEntry> = (0..300)
            .map(|_| CorpusEntry {
                point: pt(
                    center.lon + rng.random_range(-1.0..1.0),
                    center.lat + rng.random_range(-1.0..1.0),
                ),
                key: rng.random_range(0..4),
                weight: rng.random_range(0.0..1.0),
            })
            .collect();
        let index = build_index(entries, small_grid(), 4).unwrap();
        let radii = RadiiSet::paper_default();
        let profile = context_profile(center, &index, &radii).unwrap();
        for (across, within) in profile.blocks() {
            let sum: f64 = across.iter().sum();
            let all_zero = across.iter().all(|&x| x == 0.0);
            assert!(all_zero || (sum - 1.0).abs() < 1e-9, "across sum {sum}");
            for &w in within {
                assert!((0.0..=1.0).contains(&w));
            }
        }
    }

    #[test]
    fn visual_context_probability_weights() {
        // One image whose concept vector is e_2: across block is e_2 at
        // every radius that sees it.
        let p = pt(-100.0, 40.0);
        let entries = vec![CorpusEntry {
            point: p,
            key: 2,
            weight: 1.0,
        }];
        let index = build_index(entries, small_grid(), 4).unwrap();
        let radii = RadiiSet::paper_default();
        let profile = context_profile(p, &index, &radii).unwrap();
        for (across, _) in profile.blocks() {
            assert_eq!(across, &vec![0.0, 0.0, 1.0, 0.0]);
        }
    }

    #[test]
    fn visual_context_default_dimension() {
        let index = build_index(std::iter::empty(), small_grid(), 594).unwrap();
        let radii = RadiiSet::paper_default();
        let v = visual_context(pt(-100.0, 40.0), &index, &radii).unwrap();
        assert_eq!(v.len(), 11_880);
    }

    #[test]
    fn fn_values_transpose_matches_flatten() {
        let mut rng = crate::rng::stream_rng(93, crate::rng::Stream::Synth);
        let center = pt(-100.0, 40.0);
        let entries: Vec<CorpusEntry> = (0..100)
            .map(|_| CorpusEntry {
                point: pt(
                    center.lon + rng.random_range(-0.5..0.5),
                    center.lat + rng.random_range(-0.5..0.5),
                ),
                key: rng.random_range(0..3),
                weight: 1.0,
            })
            .collect();
        let index = build_index(entries, small_grid(), 3).unwrap();
        let radii = RadiiSet::paper_default();
        let profile = context_profile(center, &index, &radii).unwrap();
        let flat = profile.flatten();
        let rows = profile.fn_values();
        assert_eq!(rows.len(), 2 * 3);
        let keys = 3;
        for (r_idx, _) in radii.as_slice().iter().enumerate() {
            for h in 0..keys {
                assert_eq!(rows[h][r_idx], flat[(r_idx * 2) * keys + h]);
                assert_eq!(rows[keys + h][r_idx], flat[(r_idx * 2 + 1) * keys + h]);
            }
        }
    }

    #[test]
    fn raster_file_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("elevation.geor");
        let mut pixels = Vec::new();
        for i in 0..6 * 9 {
            pixels.extend_from_slice(&[(i % 256) as u8, ((i * 7) % 256) as u8, 255 - (i % 256) as u8]);
        }
        let map = RasterMap::new("elevation".to_string(), 6, 9, us_box(), pixels).unwrap();
        map.write(&path).unwrap();
        let back = RasterMap::read(&path).unwrap();
        assert_eq!(back, map);
    }

    #[test]
    fn ziptable_csv_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("zips.csv");
        let table = ZipTable::new(vec![
            ZipEntry {
                zip: "10001".to_string(),
                centroid: pt(-74.0, 40.75),
                stats: vec![0.5, 1.25],
            },
            ZipEntry {
                zip: "94301".to_string(),
                centroid: pt(-122.14, 37.44),
                stats: vec![2.0, -3.0],
            },
        ])
        .unwrap();
        table.write_csv(&path).unwrap();
        let back = ZipTable::read_csv(&path).unwrap();
        assert_eq!(back, table);
    }

    #[test]
    fn assemble_embedding_only() {
        let record = GeoRecord {
            id: "r0".to_string(),
            point: pt(-100.0, 40.0),
            label: Some(1),
            embedding: vec![0.25, -1.5],
            tags: vec![1],
        };
        let bundle = assemble(&record, &FeatureConfig::embedding_only(), &Resources::default()).unwrap();
        assert_eq!(bundle.parts().len(), 1);
        assert_eq!(bundle.get(FeatureKind::Embedding).unwrap(), &[0.25, -1.5]);
    }

    #[test]
    fn assemble_full_config_dimensions() {
        let record = GeoRecord {
            id: "r0".to_string(),
            point: pt(-100.0, 40.0),
            label: Some(0),
            embedding: vec![0.0; 16],
            tags: vec![0],
        };
        let maps: Vec<RasterMap> = (0..MAP_COUNT)
            .map(|i| flat_raster(&format!("m{i}"), 30, 40, [128, 64, 32]))
            .collect();
        let zip_table = ZipTable::new(vec![ZipEntry {
            zip: "10001".to_string(),
            centroid: pt(-74.0, 40.75),
            stats: vec![1.0; 7],
        }])
        .unwrap();
        let hashtag_index = build_index(std::iter::empty(), small_grid(), 100).unwrap();
        let visual_index = build_index(std::iter::empty(), small_grid(), 594).unwrap();
        let config = FeatureConfig {
            embedding: true,
            gps_grid: Some(GridSpec::new(100, 200, us_box()).unwrap()),
            map: true,
            acs: true,
            hashtag: true,
            visual: true,
            radii: RadiiSet::paper_default(),
        };
        let resources = Resources {
            maps,
            zip_table: Some(zip_table),
            hashtag_index: Some(hashtag_index),
            visual_index: Some(visual_index),
        };
        let bundle = assemble(&record, &config, &resources).unwrap();
        let dims: Vec<usize> = bundle.dims().iter().map(|(_, d)| *d).collect();
        assert_eq!(dims, vec![16, 20_000, 8670, 7, 2000, 11_880]);

        // Determinism: same inputs, same bundle.
        let again = assemble(&record, &config, &resources).unwrap();
        assert_eq!(bundle, again);
    }

    #[test]
    fn assemble_missing_resource_is_config_error() {
        let record = GeoRecord {
            id: "r0".to_string(),
            point: pt(-100.0, 40.0),
            label: None,
            embedding: vec![],
            tags: vec![],
        };
        let config = FeatureConfig {
            embedding: false,
            gps_grid: None,
            map: false,
            acs: true,
            hashtag: false,
            visual: false,
            radii: RadiiSet::paper_default(),
        };
        match assemble(&record, &config, &Resources::default()) {
            Err(Error::Config(_)) => {}
            other => panic!("expected Config error, got {other:?}"),
        }
    }
}
