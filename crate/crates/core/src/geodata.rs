//! Spatial data model shared by every stage: the raster geotransform, DEMs in
//! ESRI ASCII grid format, raster tiling, detection georeferencing and the
//! detection / coverage file formats.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};
use crate::geojson::{Feature, FeatureCollection, Geometry};
use crate::geometry::{self, BBox, Point};

/// North-up raster geotransform in projected meters.
///
/// Pixel `(col, row)` has its center at
/// `(origin_x + (col + 0.5) * cell_size, origin_y - (row + 0.5) * cell_size)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GeoTransform {
    /// West edge.
    pub origin_x: f64,
    /// North edge.
    pub origin_y: f64,
    pub cell_size: f64,
    /// Carried verbatim; never used in computations.
    pub epsg_hint: Option<u32>,
}

impl GeoTransform {
    pub fn new(origin_x: f64, origin_y: f64, cell_size: f64) -> Result<Self> {
        if !(cell_size > 0.0 && cell_size.is_finite()) {
            return Err(Error::invalid(format!("cell size must be > 0, got {cell_size}")));
        }
        if !origin_x.is_finite() || !origin_y.is_finite() {
            return Err(Error::invalid("geotransform origin must be finite"));
        }
        Ok(GeoTransform {
            origin_x,
            origin_y,
            cell_size,
            epsg_hint: None,
        })
    }

    /// World coordinate of a continuous pixel position, where pixel edges lie
    /// on integers and `(col + 0.5, row + 0.5)` is a cell center.
    pub fn pixel_to_world(&self, u: f64, v: f64) -> Point {
        Point::new(
            self.origin_x + u * self.cell_size,
            self.origin_y - v * self.cell_size,
        )
    }

    pub fn world_to_pixel(&self, p: Point) -> (f64, f64) {
        (
            (p.x - self.origin_x) / self.cell_size,
            (self.origin_y - p.y) / self.cell_size,
        )
    }

    pub fn cell_center(&self, col: usize, row: usize) -> Point {
        self.pixel_to_world(col as f64 + 0.5, row as f64 + 0.5)
    }

    /// Cell containing `p`, or `None` when outside `rows x cols`.
    pub fn world_to_cell(&self, p: Point, rows: usize, cols: usize) -> Option<(usize, usize)> {
        let (u, v) = self.world_to_pixel(p);
        let (c, r) = (u.floor(), v.floor());
        (c >= 0.0 && r >= 0.0 && (c as usize) < cols && (r as usize) < rows)
            .then(|| (c as usize, r as usize))
    }

    pub fn extent(&self, rows: usize, cols: usize) -> BBox {
        BBox::new(
            self.origin_x,
            self.origin_y - rows as f64 * self.cell_size,
            self.origin_x + cols as f64 * self.cell_size,
            self.origin_y,
        )
    }
}

/// Single-band elevation raster, row-major from the north edge.
#[derive(Clone, Debug, PartialEq)]
pub struct DemGrid {
    pub rows: usize,
    pub cols: usize,
    pub transform: GeoTransform,
    pub nodata: f64,
    pub values: Vec<f64>,
}

impl DemGrid {
    pub fn new(
        rows: usize,
        cols: usize,
        transform: GeoTransform,
        nodata: f64,
        values: Vec<f64>,
    ) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(Error::invalid("DEM must have at least one row and column"));
        }
        if values.len() != rows * cols {
            return Err(Error::invalid(format!(
                "DEM has {} values for {rows}x{cols} cells",
                values.len()
            )));
        }
        if let Some(i) = values.iter().position(|v| *v != nodata && !v.is_finite()) {
            return Err(Error::invalid(format!("non-finite elevation at cell {i}")));
        }
        Ok(DemGrid {
            rows,
            cols,
            transform,
            nodata,
            values,
        })
    }

    #[inline]
    pub fn is_nodata(&self, i: usize) -> bool {
        self.values[i] == self.nodata
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn get(&self, row: usize, col: usize) -> Option<f64> {
        let v = self.values[row * self.cols + col];
        (v != self.nodata).then_some(v)
    }

    pub fn extent(&self) -> BBox {
        self.transform.extent(self.rows, self.cols)
    }

    pub fn valid_count(&self) -> usize {
        (0..self.len()).filter(|&i| !self.is_nodata(i)).count()
    }
}

const DEFAULT_NODATA: f64 = -9999.0;

pub fn read_dem(path: impl AsRef<Path>) -> Result<DemGrid> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_dem(&text)
}

/// Parses an ESRI ASCII grid. Each data row must sit on its own line.
pub fn parse_dem(text: &str) -> Result<DemGrid> {
    let mut ncols = None;
    let mut nrows = None;
    let mut xll: Option<(f64, bool)> = None;
    let mut yll: Option<(f64, bool)> = None;
    let mut cellsize = None;
    let mut nodata = DEFAULT_NODATA;

    let mut lines = text.lines().enumerate().peekable();
    while let Some(&(idx, line)) = lines.peek() {
        let line_no = idx + 1;
        let mut parts = line.split_whitespace();
        let Some(key) = parts.next() else {
            lines.next();
            continue;
        };
        if !key.starts_with(|c: char| c.is_ascii_alphabetic()) {
            break;
        }
        let raw = parts.next().ok_or_else(|| Error::Parse {
            line: line_no,
            msg: format!("header key {key} has no value"),
        })?;
        if parts.next().is_some() {
            return Err(Error::Parse {
                line: line_no,
                msg: format!("header key {key} has more than one value"),
            });
        }
        let num = |raw: &str| -> Result<f64> {
            raw.parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| Error::Parse {
                    line: line_no,
                    msg: format!("header value {raw:?} for {key} is not a finite number"),
                })
        };
        let count = |raw: &str| -> Result<usize> {
            raw.parse::<usize>()
                .ok()
                .filter(|v| *v > 0)
                .ok_or_else(|| Error::Parse {
                    line: line_no,
                    msg: format!("header value {raw:?} for {key} is not a positive integer"),
                })
        };
        match key.to_ascii_lowercase().as_str() {
            "ncols" => ncols = Some(count(raw)?),
            "nrows" => nrows = Some(count(raw)?),
            "xllcorner" => xll = Some((num(raw)?, false)),
            "xllcenter" => xll = Some((num(raw)?, true)),
            "yllcorner" => yll = Some((num(raw)?, false)),
            "yllcenter" => yll = Some((num(raw)?, true)),
            "cellsize" => cellsize = Some(num(raw)?),
            "nodata_value" => nodata = num(raw)?,
            _ => {
                return Err(Error::Parse {
                    line: line_no,
                    msg: format!("unknown header key {key}"),
                })
            }
        }
        lines.next();
    }

    let header_line = lines.peek().map(|(i, _)| i + 1).unwrap_or(1);
    let missing = |what: &str| Error::Parse {
        line: header_line,
        msg: format!("header is missing {what}"),
    };
    let ncols = ncols.ok_or_else(|| missing("ncols"))?;
    let nrows = nrows.ok_or_else(|| missing("nrows"))?;
    let (xll, xcenter) = xll.ok_or_else(|| missing("xllcorner"))?;
    let (yll, ycenter) = yll.ok_or_else(|| missing("yllcorner"))?;
    let cell = cellsize.ok_or_else(|| missing("cellsize"))?;
    if cell <= 0.0 {
        return Err(Error::Parse {
            line: header_line,
            msg: "cellsize must be > 0".into(),
        });
    }
    let origin_x = if xcenter { xll - 0.5 * cell } else { xll };
    let south = if ycenter { yll - 0.5 * cell } else { yll };
    let transform = GeoTransform::new(origin_x, south + nrows as f64 * cell, cell)?;

    let mut values = Vec::with_capacity(nrows * ncols);
    let mut row = 0;
    let mut last_line = header_line;
    for (idx, line) in lines {
        let line_no = idx + 1;
        last_line = line_no;
        if line.trim().is_empty() {
            continue;
        }
        row += 1;
        if row > nrows {
            return Err(Error::Parse {
                line: line_no,
                msg: format!("more than {nrows} data rows"),
            });
        }
        let before = values.len();
        for tok in line.split_whitespace() {
            let v: f64 = tok.parse().map_err(|_| Error::Parse {
                line: line_no,
                msg: format!("row {row}: non-numeric cell {tok:?}"),
            })?;
            if v != nodata && !v.is_finite() {
                return Err(Error::Parse {
                    line: line_no,
                    msg: format!("row {row}: non-finite cell {tok:?}"),
                });
            }
            values.push(v);
        }
        let found = values.len() - before;
        if found != ncols {
            return Err(Error::Parse {
                line: line_no,
                msg: format!("row {row}: expected {ncols} values, found {found}"),
            });
        }
    }
    if row < nrows {
        return Err(Error::Parse {
            line: last_line,
            msg: format!("expected {nrows} data rows, found {row}"),
        });
    }
    DemGrid::new(nrows, ncols, transform, nodata, values)
}

/// Writes any single-band grid in ESRI ASCII format. Values use the shortest
/// representation that parses back to the same number.
pub fn write_ascii_grid<T: std::fmt::Display>(
    path: impl AsRef<Path>,
    rows: usize,
    cols: usize,
    transform: &GeoTransform,
    nodata: T,
    values: &[T],
) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let io = |e| Error::io(path, e);
    write!(
        w,
        "ncols {cols}\nnrows {rows}\nxllcorner {}\nyllcorner {}\ncellsize {}\nNODATA_value {nodata}\n",
        transform.origin_x,
        transform.origin_y - rows as f64 * transform.cell_size,
        transform.cell_size,
    )
    .map_err(io)?;
    for r in 0..rows {
        let row = &values[r * cols..(r + 1) * cols];
        for (c, v) in row.iter().enumerate() {
            if c > 0 {
                w.write_all(b" ").map_err(io)?;
            }
            write!(w, "{v}").map_err(io)?;
        }
        w.write_all(b"\n").map_err(io)?;
    }
    w.flush().map_err(io)
}

pub fn write_dem(path: impl AsRef<Path>, dem: &DemGrid) -> Result<()> {
    write_ascii_grid(path, dem.rows, dem.cols, &dem.transform, dem.nodata, &dem.values)
}

/// A tile of a raster: its true extent plus the virtual padding that brings
/// it up to the nominal tile size.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct TileWindow {
    pub col0: usize,
    pub row0: usize,
    pub width: usize,
    pub height: usize,
    pub pad_right: usize,
    pub pad_bottom: usize,
}

fn tile_starts(len: usize, tile: usize, stride: usize) -> Vec<usize> {
    let mut starts = vec![0];
    let mut s = 0;
    while s + tile < len {
        s += stride;
        starts.push(s);
    }
    starts
}

/// Row-major tile windows covering every pixel of a `rows x cols` raster.
pub fn tile_raster(rows: usize, cols: usize, tile: usize, stride: usize) -> Result<Vec<TileWindow>> {
    if tile == 0 || stride == 0 || stride > tile {
        return Err(Error::invalid(format!(
            "need tile > 0 and 0 < stride <= tile, got tile={tile} stride={stride}"
        )));
    }
    if rows == 0 || cols == 0 {
        return Ok(Vec::new());
    }
    let col_starts = tile_starts(cols, tile, stride);
    let row_starts = tile_starts(rows, tile, stride);
    let mut out = Vec::with_capacity(col_starts.len() * row_starts.len());
    for &row0 in &row_starts {
        let height = tile.min(rows - row0);
        for &col0 in &col_starts {
            let width = tile.min(cols - col0);
            out.push(TileWindow {
                col0,
                row0,
                width,
                height,
                pad_right: tile - width,
                pad_bottom: tile - height,
            });
        }
    }
    Ok(out)
}

/// Axis-aligned detector box in continuous tile pixel coordinates.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PixelBox {
    pub x0: f64,
    pub y0: f64,
    pub x1: f64,
    pub y1: f64,
}

impl PixelBox {
    pub fn new(x0: f64, y0: f64, x1: f64, y1: f64) -> Self {
        PixelBox { x0, y0, x1, y1 }
    }

    pub fn center(&self) -> (f64, f64) {
        (0.5 * (self.x0 + self.x1), 0.5 * (self.y0 + self.y1))
    }

    pub fn area(&self) -> f64 {
        (self.x1 - self.x0) * (self.y1 - self.y0)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Georeferenced {
    pub centroid: Point,
    pub area_m2: f64,
}

impl Georeferenced {
    pub fn into_detection(self, confidence: f64) -> Result<UavDetection> {
        UavDetection::new(self.centroid.x, self.centroid.y, self.area_m2, confidence)
    }
}

/// Maps a box detected in `window` to its world centroid and ground area.
/// The box must lie within the window's true (unpadded) extent.
pub fn georeference_detection(
    bbox: &PixelBox,
    window: &TileWindow,
    transform: &GeoTransform,
) -> Result<Georeferenced> {
    let inside = bbox.x0 >= 0.0
        && bbox.y0 >= 0.0
        && bbox.x1 <= window.width as f64
        && bbox.y1 <= window.height as f64
        && bbox.x1 > bbox.x0
        && bbox.y1 > bbox.y0;
    if !inside {
        return Err(Error::invalid(format!(
            "box {bbox:?} is outside the {}x{} tile",
            window.width, window.height
        )));
    }
    let (cu, cv) = bbox.center();
    let centroid = transform.pixel_to_world(window.col0 as f64 + cu, window.row0 as f64 + cv);
    Ok(Georeferenced {
        centroid,
        area_m2: bbox.area() * transform.cell_size * transform.cell_size,
    })
}

/// A georeferenced UAV waste detection.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct UavDetection {
    #[serde(rename = "x")]
    pub centroid_x: f64,
    #[serde(rename = "y")]
    pub centroid_y: f64,
    pub area_m2: f64,
    pub confidence: f64,
}

impl UavDetection {
    pub fn new(x: f64, y: f64, area_m2: f64, confidence: f64) -> Result<Self> {
        let d = UavDetection {
            centroid_x: x,
            centroid_y: y,
            area_m2,
            confidence,
        };
        d.check().map_err(Error::invalid)?;
        Ok(d)
    }

    fn check(&self) -> std::result::Result<(), String> {
        if !self.centroid_x.is_finite() || !self.centroid_y.is_finite() {
            return Err("non-finite coordinate".into());
        }
        if !(self.area_m2 > 0.0 && self.area_m2.is_finite()) {
            return Err(format!("area_m2 must be > 0, got {}", self.area_m2));
        }
        if !(0.0..=1.0).contains(&self.confidence) {
            return Err(format!("confidence must be in [0,1], got {}", self.confidence));
        }
        Ok(())
    }

    pub fn centroid(&self) -> Point {
        Point::new(self.centroid_x, self.centroid_y)
    }
}

/// A street-view capture location scored by its number of positive patches.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SvObservation {
    pub x: f64,
    pub y: f64,
    pub score: u8,
}

impl SvObservation {
    pub const MAX_SCORE: u8 = 12;

    pub fn new(x: f64, y: f64, score: i64) -> Result<Self> {
        let o = SvObservation::checked(x, y, score).map_err(Error::invalid)?;
        Ok(o)
    }

    fn checked(x: f64, y: f64, score: i64) -> std::result::Result<Self, String> {
        if !x.is_finite() || !y.is_finite() {
            return Err("non-finite coordinate".into());
        }
        if !(0..=Self::MAX_SCORE as i64).contains(&score) {
            return Err(format!("score must be in [0,12], got {score}"));
        }
        Ok(SvObservation {
            x,
            y,
            score: score as u8,
        })
    }

    pub fn point(&self) -> Point {
        Point::new(self.x, self.y)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Detections {
    Uav(Vec<UavDetection>),
    Sv(Vec<SvObservation>),
}

impl Detections {
    pub fn len(&self) -> usize {
        match self {
            Detections::Uav(v) => v.len(),
            Detections::Sv(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Deserialize)]
struct SvRow {
    x: f64,
    y: f64,
    score: f64,
}

fn record(row: usize, msg: impl Into<String>) -> Error {
    Error::Record {
        row,
        msg: msg.into(),
    }
}

fn csv_row_error(row: usize, e: csv::Error) -> Error {
    record(row, e.to_string())
}

fn sv_from_number(row: usize, x: f64, y: f64, score: f64) -> Result<SvObservation> {
    if score.fract() != 0.0 || !score.is_finite() {
        return Err(record(row, format!("score must be an integer, got {score}")));
    }
    SvObservation::checked(x, y, score as i64).map_err(|m| record(row, m))
}

/// Reads detections from CSV (kind chosen by header) or GeoJSON points (kind
/// chosen by properties). Row numbers in errors are 1-based data rows.
pub fn read_detections(path: impl AsRef<Path>) -> Result<Detections> {
    let path = path.as_ref();
    let ext = path
        .extension()
        .and_then(|e| e.to_str())
        .map(str::to_ascii_lowercase);
    if matches!(ext.as_deref(), Some("geojson") | Some("json")) {
        return detections_from_geojson(&FeatureCollection::read(path)?);
    }
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_detections_csv(file)
}

pub fn read_detections_csv(reader: impl std::io::Read) -> Result<Detections> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers: Vec<String> = rdr.headers()?.iter().map(str::to_ascii_lowercase).collect();
    let has = |k: &str| headers.iter().any(|h| h == k);
    if has("x") && has("y") && has("area_m2") && has("confidence") {
        let mut out = Vec::new();
        for (i, rec) in rdr.deserialize::<UavDetection>().enumerate() {
            let d = rec.map_err(|e| csv_row_error(i + 1, e))?;
            d.check().map_err(|m| record(i + 1, m))?;
            out.push(d);
        }
        Ok(Detections::Uav(out))
    } else if has("x") && has("y") && has("score") {
        let mut out = Vec::new();
        for (i, rec) in rdr.deserialize::<SvRow>().enumerate() {
            let r = rec.map_err(|e| csv_row_error(i + 1, e))?;
            out.push(sv_from_number(i + 1, r.x, r.y, r.score)?);
        }
        Ok(Detections::Sv(out))
    } else {
        Err(Error::Parse {
            line: 1,
            msg: "CSV header must be x,y,area_m2,confidence or x,y,score".into(),
        })
    }
}

pub fn detections_from_geojson(fc: &FeatureCollection) -> Result<Detections> {
    let mut uav = Vec::new();
    let mut sv = Vec::new();
    for (i, f) in fc.features.iter().enumerate() {
        let row = i + 1;
        let Geometry::Point(p) = f.geometry else {
            return Err(record(row, "detections must be Point features"));
        };
        if let Some(score) = f.number("score") {
            sv.push(sv_from_number(row, p.x, p.y, score)?);
        } else {
            let area = f
                .number("area_m2")
                .ok_or_else(|| record(row, "missing area_m2 or score property"))?;
            let confidence = f.number("confidence").unwrap_or(1.0);
            let d = UavDetection {
                centroid_x: p.x,
                centroid_y: p.y,
                area_m2: area,
                confidence,
            };
            d.check().map_err(|m| record(row, m))?;
            uav.push(d);
        }
    }
    match (uav.is_empty(), sv.is_empty()) {
        (_, true) => Ok(Detections::Uav(uav)),
        (true, false) => Ok(Detections::Sv(sv)),
        (false, false) => Err(Error::invalid("file mixes UAV and street-view records")),
    }
}

pub fn detections_to_geojson(d: &Detections) -> FeatureCollection {
    let features = match d {
        Detections::Uav(v) => v
            .iter()
            .map(|d| {
                Feature::new(Geometry::Point(d.centroid()))
                    .with("area_m2", d.area_m2)
                    .with("confidence", d.confidence)
            })
            .collect(),
        Detections::Sv(v) => v
            .iter()
            .map(|o| Feature::new(Geometry::Point(o.point())).with("score", o.score))
            .collect(),
    };
    FeatureCollection::new(features)
}

pub fn write_geojson(d: &Detections, path: impl AsRef<Path>) -> Result<()> {
    detections_to_geojson(d).write(path)
}

pub fn write_detections_csv(d: &Detections, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut w = csv::Writer::from_path(path)?;
    match d {
        Detections::Uav(v) => {
            if v.is_empty() {
                w.write_record(["x", "y", "area_m2", "confidence"])?;
            }
            for rec in v {
                w.serialize(rec)?;
            }
        }
        Detections::Sv(v) => {
            if v.is_empty() {
                w.write_record(["x", "y", "score"])?;
            }
            for rec in v {
                w.serialize(rec)?;
            }
        }
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn filter_by_confidence(dets: Vec<UavDetection>, min_confidence: f64) -> Vec<UavDetection> {
    dets.into_iter()
        .filter(|d| d.confidence >= min_confidence)
        .collect()
}

/// UAV imagery footprint: an exterior ring plus optional holes, each closed.
#[derive(Clone, Debug, PartialEq)]
pub struct CoveragePolygon {
    rings: Vec<Vec<Point>>,
    bbox: BBox,
}

impl CoveragePolygon {
    pub fn new(rings: Vec<Vec<Point>>) -> Result<Self> {
        if rings.is_empty() {
            return Err(Error::invalid("polygon has no rings"));
        }
        for (k, ring) in rings.iter().enumerate() {
            if ring.len() < 4 || ring.first() != ring.last() {
                return Err(Error::invalid(format!(
                    "ring {k} must be closed with at least 4 positions"
                )));
            }
            if geometry::ring_self_intersects(geometry::open_ring(ring)) {
                return Err(Error::invalid(format!("ring {k} is self-intersecting")));
            }
        }
        let bbox = BBox::of_points(rings[0].iter());
        Ok(CoveragePolygon { rings, bbox })
    }

    pub fn rings(&self) -> &[Vec<Point>] {
        &self.rings
    }

    pub fn bbox(&self) -> BBox {
        self.bbox
    }

    pub fn area(&self) -> f64 {
        self.rings
            .iter()
            .enumerate()
            .map(|(k, r)| {
                let a = geometry::signed_area(geometry::open_ring(r)).abs();
                if k == 0 {
                    a
                } else {
                    -a
                }
            })
            .sum()
    }

    /// Area of the intersection with a convex counter-clockwise window.
    pub fn intersection_area(&self, window: &[Point]) -> f64 {
        let mut total = 0.0;
        for (k, ring) in self.rings.iter().enumerate() {
            let open = geometry::open_ring(ring);
            let clipped = if geometry::signed_area(open) < 0.0 {
                let ccw: Vec<Point> = open.iter().rev().copied().collect();
                geometry::clip_to_convex(&ccw, window)
            } else {
                geometry::clip_to_convex(open, window)
            };
            let a = geometry::signed_area(&clipped).abs();
            total += if k == 0 { a } else { -a };
        }
        total.max(0.0)
    }

    pub fn contains(&self, p: Point) -> bool {
        let mut it = self.rings.iter();
        let outer = it.next().map(|r| geometry::point_in_ring(p, r)).unwrap_or(false);
        outer && !it.any(|r| geometry::point_in_ring(p, r))
    }
}

/// Reads Polygon and MultiPolygon features as coverage polygons.
pub fn read_coverage(path: impl AsRef<Path>) -> Result<Vec<CoveragePolygon>> {
    coverage_from_geojson(&FeatureCollection::read(path)?)
}

pub fn coverage_from_geojson(fc: &FeatureCollection) -> Result<Vec<CoveragePolygon>> {
    let mut out = Vec::new();
    for (i, f) in fc.features.iter().enumerate() {
        let wrap = |e: Error| record(i + 1, e.to_string());
        match &f.geometry {
            Geometry::Polygon(rings) => out.push(CoveragePolygon::new(rings.clone()).map_err(wrap)?),
            Geometry::MultiPolygon(polys) => {
                for rings in polys {
                    out.push(CoveragePolygon::new(rings.clone()).map_err(wrap)?);
                }
            }
            _ => return Err(record(i + 1, "coverage features must be polygons")),
        }
    }
    Ok(out)
}

pub fn coverage_to_geojson(polys: &[CoveragePolygon]) -> FeatureCollection {
    FeatureCollection::new(
        polys
            .iter()
            .map(|p| Feature::new(Geometry::Polygon(p.rings.clone())))
            .collect(),
    )
}

pub(crate) fn null_or(v: Option<f64>) -> Value {
    v.map(Value::from).unwrap_or(Value::Null)
}
