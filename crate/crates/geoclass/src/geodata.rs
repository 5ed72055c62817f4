//! Coordinates, grid quantization, and exact radius-pooled aggregation.
//!
//! A [`SpatialIndex`] quantizes a geotagged corpus onto a lon/lat grid and
//! answers radius queries: for every key (hashtag id, concept id, class id),
//! the sum of weights of all grid cells whose center lies within `r` meters
//! of a query point. Distances are measured between the query point and
//! cell centers, so cell membership is decided once per cell regardless of
//! how many points it holds.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Mean Earth radius in meters.
pub const EARTH_RADIUS_M: f64 = 6_371_000.0;

/// Longitude/latitude pair in degrees.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeoPoint {
    pub lon: f64,
    pub lat: f64,
}

impl GeoPoint {
    /// Validated constructor: lon in [-180, 180], lat in [-90, 90].
    pub fn new(lon: f64, lat: f64) -> Result<Self> {
        if !lon.is_finite() || !(-180.0..=180.0).contains(&lon) {
            return Err(Error::invalid(
                "longitude",
                format!("{lon} not in [-180, 180]"),
            ));
        }
        if !lat.is_finite() || !(-90.0..=90.0).contains(&lat) {
            return Err(Error::invalid("latitude", format!("{lat} not in [-90, 90]")));
        }
        Ok(GeoPoint { lon, lat })
    }
}

/// Axis-aligned lon/lat rectangle. Serializes as the config form
/// `[lon_min, lat_min, lon_max, lat_max]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundingBox {
    pub lon_min: f64,
    pub lon_max: f64,
    pub lat_min: f64,
    pub lat_max: f64,
}

impl Serialize for BoundingBox {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        [self.lon_min, self.lat_min, self.lon_max, self.lat_max].serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for BoundingBox {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let [lon_min, lat_min, lon_max, lat_max] = <[f64; 4]>::deserialize(deserializer)?;
        BoundingBox::new(lon_min, lat_min, lon_max, lat_max).map_err(serde::de::Error::custom)
    }
}

impl BoundingBox {
    pub fn new(lon_min: f64, lat_min: f64, lon_max: f64, lat_max: f64) -> Result<Self> {
        if !(lon_min < lon_max) || !(lat_min < lat_max) {
            return Err(Error::invalid(
                "bounding box",
                format!("degenerate extent [{lon_min},{lon_max}]x[{lat_min},{lat_max}]"),
            ));
        }
        GeoPoint::new(lon_min, lat_min)?;
        GeoPoint::new(lon_max, lat_max)?;
        Ok(BoundingBox {
            lon_min,
            lon_max,
            lat_min,
            lat_max,
        })
    }

    /// Default study area: the contiguous United States.
    pub fn contiguous_us() -> Self {
        BoundingBox {
            lon_min: -125.0,
            lon_max: -66.0,
            lat_min: 24.0,
            lat_max: 50.0,
        }
    }

    /// Boundary-inclusive containment.
    pub fn contains(&self, p: GeoPoint) -> bool {
        p.lon >= self.lon_min && p.lon <= self.lon_max && p.lat >= self.lat_min && p.lat <= self.lat_max
    }

    pub fn lon_span(&self) -> f64 {
        self.lon_max - self.lon_min
    }

    pub fn lat_span(&self) -> f64 {
        self.lat_max - self.lat_min
    }
}

/// Regular rows x cols grid over a bounding box. Rows divide latitude,
/// columns divide longitude.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub rows: usize,
    pub cols: usize,
    pub bbox: BoundingBox,
}

impl GridSpec {
    pub fn new(rows: usize, cols: usize, bbox: BoundingBox) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(Error::invalid("grid", "rows and cols must be >= 1".to_string()));
        }
        if rows.checked_mul(cols).is_none() {
            return Err(Error::invalid(
                "grid",
                format!("{rows}x{cols} cell count overflows"),
            ));
        }
        Ok(GridSpec { rows, cols, bbox })
    }

    pub fn cell_count(&self) -> usize {
        self.rows * self.cols
    }

    /// Cell height in degrees latitude.
    pub fn cell_height_deg(&self) -> f64 {
        self.bbox.lat_span() / self.rows as f64
    }

    /// Cell width in degrees longitude.
    pub fn cell_width_deg(&self) -> f64 {
        self.bbox.lon_span() / self.cols as f64
    }
}

/// Position of one grid cell; `flat = row * cols + col`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct CellIndex {
    pub row: usize,
    pub col: usize,
    pub flat: usize,
}

impl CellIndex {
    pub fn new(row: usize, col: usize, grid: &GridSpec) -> Result<Self> {
        if row >= grid.rows || col >= grid.cols {
            return Err(Error::invalid(
                "cell index",
                format!(
                    "({row}, {col}) outside {}x{} grid",
                    grid.rows, grid.cols
                ),
            ));
        }
        Ok(CellIndex {
            row,
            col,
            flat: row * grid.cols + col,
        })
    }
}

/// One geotagged sample: image embedding plus coordinate, label, hashtags.
#[derive(Debug, Clone, PartialEq)]
pub struct GeoRecord {
    pub id: String,
    pub point: GeoPoint,
    pub label: Option<usize>,
    pub embedding: Vec<f64>,
    pub tags: Vec<usize>,
}

/// Grid cell containing a point. Points on the max edge clamp into the
/// last row/column; points outside the box are an error naming the
/// offending coordinate.
pub fn quantize(point: GeoPoint, grid: &GridSpec) -> Result<CellIndex> {
    if !grid.bbox.contains(point) {
        return Err(Error::OutOfBounds {
            lon: point.lon,
            lat: point.lat,
            scope: format!(
                "grid bbox [{}, {}] x [{}, {}]",
                grid.bbox.lon_min, grid.bbox.lon_max, grid.bbox.lat_min, grid.bbox.lat_max
            ),
        });
    }
    let row = (((point.lat - grid.bbox.lat_min) / grid.cell_height_deg()) as usize).min(grid.rows - 1);
    let col = (((point.lon - grid.bbox.lon_min) / grid.cell_width_deg()) as usize).min(grid.cols - 1);
    CellIndex::new(row, col, grid)
}

/// Center of a cell's lon/lat rectangle.
pub fn cell_center(cell: CellIndex, grid: &GridSpec) -> Result<GeoPoint> {
    if cell.row >= grid.rows || cell.col >= grid.cols {
        return Err(Error::invalid(
            "cell index",
            format!("({}, {}) outside {}x{} grid", cell.row, cell.col, grid.rows, grid.cols),
        ));
    }
    Ok(GeoPoint {
        lon: grid.bbox.lon_min + (cell.col as f64 + 0.5) * grid.cell_width_deg(),
        lat: grid.bbox.lat_min + (cell.row as f64 + 0.5) * grid.cell_height_deg(),
    })
}

/// Great-circle distance in meters on a spherical Earth.
pub fn haversine_m(a: GeoPoint, b: GeoPoint) -> f64 {
    let phi1 = a.lat.to_radians();
    let phi2 = b.lat.to_radians();
    let dphi = (b.lat - a.lat).to_radians();
    let dlambda = (b.lon - a.lon).to_radians();
    let s = (dphi / 2.0).sin().powi(2) + phi1.cos() * phi2.cos() * (dlambda / 2.0).sin().powi(2);
    2.0 * EARTH_RADIUS_M * s.sqrt().min(1.0).asin()
}

/// One ingested corpus observation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CorpusEntry {
    pub point: GeoPoint,
    pub key: usize,
    pub weight: f64,
}

/// Immutable grid-quantized index over a geotagged corpus.
///
/// Construction canonicalizes the input stream (sorting by cell, key, and
/// weight) before accumulating, so permuting the ingestion order yields a
/// bit-identical index even with floating-point weights.
#[derive(Debug, Clone, PartialEq)]
pub struct SpatialIndex {
    grid: GridSpec,
    key_space: usize,
    // (row, col) -> per-key weight sums, sorted by key. BTreeMap keeps
    // iteration and accumulation order canonical.
    cells: BTreeMap<(u32, u32), Vec<(u32, f64)>>,
    totals: Vec<f64>,
    skipped: u64,
}

impl SpatialIndex {
    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    pub fn key_space(&self) -> usize {
        self.key_space
    }

    /// Whole-index weight sum per key.
    pub fn totals(&self) -> &[f64] {
        &self.totals
    }

    /// Number of ingested entries dropped for falling outside the grid bbox.
    pub fn skipped(&self) -> u64 {
        self.skipped
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }

    pub fn nonempty_cell_count(&self) -> usize {
        self.cells.len()
    }

    /// Nonempty cells in (row, col) order with their per-key aggregates.
    pub fn nonempty_cells(&self) -> impl Iterator<Item = (CellIndex, &[(u32, f64)])> {
        let cols = self.grid.cols;
        self.cells.iter().map(move |(&(r, c), v)| {
            let (row, col) = (r as usize, c as usize);
            (
                CellIndex {
                    row,
                    col,
                    flat: row * cols + col,
                },
                v.as_slice(),
            )
        })
    }

    /// Per-key aggregate over all cells whose center is within `r` meters of
    /// `center` (boundary inclusive). Exactly equals a brute-force scan over
    /// all nonempty cells; only cells inside the bounding rectangle of the
    /// circle are visited.
    pub fn radius_aggregate(&self, center: GeoPoint, r: f64) -> Result<Vec<f64>> {
        let profile = self.radius_profile(center, &[r])?;
        Ok(profile.into_iter().next().unwrap())
    }

    /// Radius aggregates for several ascending radii in one sweep over the
    /// candidate cells of the largest radius. Entry `i` is bit-identical to
    /// `radius_aggregate(center, radii[i])`.
    pub fn radius_profile(&self, center: GeoPoint, radii: &[f64]) -> Result<Vec<Vec<f64>>> {
        for pair in radii.windows(2) {
            if !(pair[0] < pair[1]) {
                return Err(Error::invalid(
                    "radii",
                    format!("not strictly increasing: {} then {}", pair[0], pair[1]),
                ));
            }
        }
        if radii.is_empty() {
            return Ok(Vec::new());
        }
        let r_max = *radii.last().unwrap();
        if !(radii[0] > 0.0) {
            return Err(Error::invalid("radius", format!("{} is not > 0", radii[0])));
        }

        let mut out = vec![vec![0.0; self.key_space]; radii.len()];
        let (row_range, col_range) = self.candidate_rect(center, r_max);
        for row in row_range {
            let lo = (row as u32, *col_range.start() as u32);
            let hi = (row as u32, *col_range.end() as u32);
            for (&(r_idx, c_idx), entries) in self.cells.range(lo..=hi) {
                let cell = CellIndex {
                    row: r_idx as usize,
                    col: c_idx as usize,
                    flat: r_idx as usize * self.grid.cols + c_idx as usize,
                };
                let d = haversine_m(center, cell_center(cell, &self.grid)?);
                // radii are ascending: find the first radius covering d and
                // add the cell into every larger one as well.
                let first = radii.partition_point(|&radius| radius < d);
                for acc in &mut out[first..] {
                    for &(key, w) in entries {
                        acc[key as usize] += w;
                    }
                }
            }
        }
        Ok(out)
    }

    /// Row and column ranges of cells whose center could lie within `r`
    /// meters of `center`. Guaranteed superset: distance is re-checked per
    /// cell, so generosity here costs time, never correctness.
    fn candidate_rect(
        &self,
        center: GeoPoint,
        r: f64,
    ) -> (std::ops::RangeInclusive<usize>, std::ops::RangeInclusive<usize>) {
        let grid = &self.grid;
        if r >= std::f64::consts::PI * EARTH_RADIUS_M {
            // Covers the whole sphere; the half-angle bound below would wrap.
            return (0..=grid.rows - 1, 0..=grid.cols - 1);
        }
        let dlat_deg = (r / EARTH_RADIUS_M).to_degrees();
        let lat_lo = (center.lat - dlat_deg).max(grid.bbox.lat_min);
        let lat_hi = (center.lat + dlat_deg).min(grid.bbox.lat_max);

        let row_of = |lat: f64| -> isize { ((lat - grid.bbox.lat_min) / grid.cell_height_deg()).floor() as isize };
        let row_lo = (row_of(lat_lo) - 1).clamp(0, grid.rows as isize - 1) as usize;
        let row_hi = (row_of(lat_hi) + 1).clamp(0, grid.rows as isize - 1) as usize;

        // Longitude span: a cell center at latitude phi within distance r of
        // the query satisfies cos(phi_c) cos(phi) sin^2(dl/2) <= sin^2(r/2R).
        // Bound cos(phi) below over the latitude window that candidate cell
        // centers can occupy.
        let abs_lat_max = lat_lo.abs().max(lat_hi.abs()).min(90.0);
        let cos_min = abs_lat_max.to_radians().cos();
        let cos_c = center.lat.to_radians().cos();
        let denom = (cos_min * cos_c).max(0.0).sqrt();
        let half = (r / (2.0 * EARTH_RADIUS_M)).sin();
        let full_span = denom <= 1e-12 || half >= denom;
        let (col_lo, col_hi) = if full_span {
            (0usize, grid.cols - 1)
        } else {
            let dlon_deg = (2.0 * (half / denom).asin()).to_degrees();
            let col_of = |lon: f64| -> isize { ((lon - grid.bbox.lon_min) / grid.cell_width_deg()).floor() as isize };
            let lo = (col_of(center.lon - dlon_deg) - 1).clamp(0, grid.cols as isize - 1) as usize;
            let hi = (col_of(center.lon + dlon_deg) + 1).clamp(0, grid.cols as isize - 1) as usize;
            (lo, hi)
        };
        (row_lo..=row_hi, col_lo..=col_hi)
    }
}

/// Build an index from a stream of (point, key, weight) observations.
/// Counts use weight 1. Entries outside the grid bbox are skipped and
/// counted; keys at or beyond `key_space` are an error.
pub fn build_index<I>(entries: I, grid: GridSpec, key_space: usize) -> Result<SpatialIndex>
where
    I: IntoIterator<Item = CorpusEntry>,
{
    if grid.rows > u32::MAX as usize || grid.cols > u32::MAX as usize {
        return Err(Error::invalid("grid", "rows/cols exceed u32 range".to_string()));
    }
    let mut triples: Vec<(u32, u32, u32, f64)> = Vec::new();
    let mut skipped = 0u64;
    for entry in entries {
        if entry.key >= key_space {
            return Err(Error::KeyOutOfRange {
                key: entry.key,
                key_space,
            });
        }
        if !(entry.weight >= 0.0) || !entry.weight.is_finite() {
            return Err(Error::invalid(
                "weight",
                format!("{} for key {} (must be finite and >= 0)", entry.weight, entry.key),
            ));
        }
        match quantize(entry.point, &grid) {
            Ok(cell) => triples.push((cell.row as u32, cell.col as u32, entry.key as u32, entry.weight)),
            Err(Error::OutOfBounds { .. }) => skipped += 1,
            Err(e) => return Err(e),
        }
    }

    // Canonical accumulation order makes the build order-independent even
    // for floating-point weights.
    triples.sort_by(|a, b| {
        (a.0, a.1, a.2)
            .cmp(&(b.0, b.1, b.2))
            .then_with(|| a.3.total_cmp(&b.3))
    });

    let mut cells: BTreeMap<(u32, u32), Vec<(u32, f64)>> = BTreeMap::new();
    for (row, col, key, weight) in triples {
        let entries = cells.entry((row, col)).or_default();
        match entries.last_mut() {
            Some(last) if last.0 == key => last.1 += weight,
            _ => entries.push((key, weight)),
        }
    }

    let mut totals = vec![0.0; key_space];
    for entries in cells.values() {
        for &(key, w) in entries {
            totals[key as usize] += w;
        }
    }

    Ok(SpatialIndex {
        grid,
        key_space,
        cells,
        totals,
        skipped,
    })
}

#[derive(Serialize, Deserialize)]
struct CorpusLine {
    lon: f64,
    lat: f64,
    key: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    weight: Option<f64>,
}

/// Read a `corpus.jsonl` file: one `{"lon":f,"lat":f,"key":int,"weight":f}`
/// object per line, weight defaulting to 1.0.
pub fn read_corpus(path: &Path) -> Result<Vec<CorpusEntry>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (idx, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let parsed: CorpusLine = serde_json::from_str(&line)
            .map_err(|e| Error::format(path, idx + 1, e.to_string()))?;
        let point = GeoPoint::new(parsed.lon, parsed.lat)
            .map_err(|e| Error::format(path, idx + 1, e.to_string()))?;
        out.push(CorpusEntry {
            point,
            key: parsed.key,
            weight: parsed.weight.unwrap_or(1.0),
        });
    }
    Ok(out)
}

/// Write a `corpus.jsonl` file. Unit weights are omitted, matching the
/// reader's default.
pub fn write_corpus(path: &Path, entries: &[CorpusEntry]) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for entry in entries {
        let line = CorpusLine {
            lon: entry.point.lon,
            lat: entry.point.lat,
            key: entry.key,
            weight: if entry.weight == 1.0 { None } else { Some(entry.weight) },
        };
        serde_json::to_writer(&mut w, &line).map_err(|e| Error::format(path, 0, e.to_string()))?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}
