//! Drainage clogging risk: segment buffers, buffered waste, Strahler
//! snapping, per-segment risk scores and the riverbed concentration ratio.
//!
//! A buffer is kept as the union of per-edge capsules (convex polygons with
//! 16-vertex semicircular caps). Consecutive capsules overlap at the shared
//! vertex, which yields round joins and round caps. Areas are exact for the
//! polygonal capsules: covered or empty regions are settled directly and the
//! rest goes through the slab union.

use std::collections::HashMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rayon::prelude::*;
use serde_json::Value;

use crate::error::{Error, Result};
use crate::geodata::{SvObservation, UavDetection};
use crate::geojson::{Feature, FeatureCollection, Geometry};
use crate::geometry::{self, BBox, Point};
use crate::hexgrid::HexGrid;
use crate::hydro::StreamNetwork;

/// Arc vertices per semicircular cap, endpoints included.
pub const ARC_VERTICES: usize = 16;

const MAX_REFINE_DEPTH: u32 = 5;
const SLAB_PARTS: usize = 6;

#[derive(Clone, Debug)]
pub struct Buffer {
    parts: Vec<Vec<Point>>,
    part_bbox: Vec<BBox>,
    bbox: BBox,
    bin_size: f64,
    nx: usize,
    ny: usize,
    bins: Vec<Vec<u32>>,
}

fn capsule(a: Point, b: Point, radius: f64) -> Vec<Point> {
    let len = a.dist(b);
    let (ux, uy) = ((b.x - a.x) / len, (b.y - a.y) / len);
    let (nx, ny) = (-uy, ux);
    let mut ring = Vec::with_capacity(2 * ARC_VERTICES);
    let step = std::f64::consts::PI / (ARC_VERTICES - 1) as f64;
    for (center, start) in [(b, (-ny).atan2(-nx)), (a, ny.atan2(nx))] {
        for k in 0..ARC_VERTICES {
            let t = start + step * k as f64;
            ring.push(Point::new(center.x + radius * t.cos(), center.y + radius * t.sin()));
        }
    }
    ring
}

impl Buffer {
    pub fn from_parts(parts: Vec<Vec<Point>>) -> Self {
        let part_bbox: Vec<BBox> = parts.iter().map(|p| BBox::of_points(p.iter())).collect();
        let bbox = part_bbox.iter().fold(BBox::empty(), |acc, b| acc.union(b));
        let mut extents: Vec<f64> = part_bbox.iter().map(|b| b.width().max(b.height())).collect();
        let bin_size = median(&mut extents).unwrap_or(1.0).max(1e-9);
        let (nx, ny) = if parts.is_empty() {
            (0, 0)
        } else {
            (
                (bbox.width() / bin_size).floor() as usize + 1,
                (bbox.height() / bin_size).floor() as usize + 1,
            )
        };
        let mut buf = Buffer {
            parts,
            part_bbox,
            bbox,
            bin_size,
            nx,
            ny,
            bins: vec![Vec::new(); nx * ny],
        };
        for k in 0..buf.parts.len() {
            let (x0, y0, x1, y1) = buf.bin_range(&buf.part_bbox[k]);
            for by in y0..=y1 {
                for bx in x0..=x1 {
                    buf.bins[by * nx + bx].push(k as u32);
                }
            }
        }
        buf
    }

    /// Union of several buffers.
    pub fn union<'a>(buffers: impl IntoIterator<Item = &'a Buffer>) -> Self {
        Buffer::from_parts(buffers.into_iter().flat_map(|b| b.parts.iter().cloned()).collect())
    }

    pub fn parts(&self) -> &[Vec<Point>] {
        &self.parts
    }

    pub fn bbox(&self) -> BBox {
        self.bbox
    }

    fn bin_range(&self, b: &BBox) -> (usize, usize, usize, usize) {
        let clamp_x = |v: f64| ((v - self.bbox.min_x) / self.bin_size).floor().clamp(0.0, (self.nx - 1) as f64) as usize;
        let clamp_y = |v: f64| ((v - self.bbox.min_y) / self.bin_size).floor().clamp(0.0, (self.ny - 1) as f64) as usize;
        (clamp_x(b.min_x), clamp_y(b.min_y), clamp_x(b.max_x), clamp_y(b.max_y))
    }

    fn bin_rect(&self, bx: usize, by: usize) -> BBox {
        let x0 = self.bbox.min_x + bx as f64 * self.bin_size;
        let y0 = self.bbox.min_y + by as f64 * self.bin_size;
        BBox::new(x0, y0, x0 + self.bin_size, y0 + self.bin_size)
    }

    pub fn contains(&self, p: Point) -> bool {
        if self.parts.is_empty() || !self.bbox.contains(p) {
            return false;
        }
        let (bx, by, _, _) = self.bin_range(&BBox::new(p.x, p.y, p.x, p.y));
        self.bins[by * self.nx + bx].iter().any(|&k| {
            let k = k as usize;
            self.part_bbox[k].contains(p) && geometry::convex_contains(&self.parts[k], p)
        })
    }

    /// Area of the union, optionally restricted to a convex CCW window.
    fn area_within(&self, window: Option<&[Point]>) -> f64 {
        if self.parts.is_empty() {
            return 0.0;
        }
        let wbox = window.map(|w| BBox::of_points(w.iter()));
        let (x0, y0, x1, y1) = match &wbox {
            Some(wb) if !wb.intersects(&self.bbox) => return 0.0,
            Some(wb) => self.bin_range(wb),
            None => (0, 0, self.nx - 1, self.ny - 1),
        };
        let tiles: Vec<(usize, usize)> = (y0..=y1).flat_map(|by| (x0..=x1).map(move |bx| (bx, by))).collect();
        tiles
            .par_iter()
            .map(|&(bx, by)| {
                let ids = &self.bins[by * self.nx + bx];
                if ids.is_empty() {
                    return 0.0;
                }
                let mut cell = self.bin_rect(bx, by).ring();
                if let Some(w) = window {
                    cell = geometry::clip_to_convex(&cell, w);
                    if cell.len() < 3 {
                        return 0.0;
                    }
                }
                let ids: Vec<usize> = ids.iter().map(|&k| k as usize).collect();
                self.region_area(&cell, &ids, MAX_REFINE_DEPTH)
            })
            .collect::<Vec<f64>>()
            .iter()
            .sum()
    }

    /// Union area inside a convex region. Regions covered by one part or by
    /// none are settled directly; crowded regions are split into quadrants
    /// before falling back to the exact slab union.
    fn region_area(&self, region: &[Point], candidates: &[usize], depth: u32) -> f64 {
        let rb = BBox::of_points(region.iter());
        let ids: Vec<usize> = candidates
            .iter()
            .copied()
            .filter(|&k| self.part_bbox[k].intersects(&rb))
            .collect();
        if ids.is_empty() {
            return 0.0;
        }
        let covered = ids.iter().any(|&k| {
            let pb = &self.part_bbox[k];
            pb.min_x <= rb.min_x
                && pb.min_y <= rb.min_y
                && pb.max_x >= rb.max_x
                && pb.max_y >= rb.max_y
                && region.iter().all(|&p| geometry::convex_contains(&self.parts[k], p))
        });
        if covered {
            return geometry::signed_area(region).abs();
        }
        if ids.len() <= SLAB_PARTS || depth == 0 {
            let pieces: Vec<Vec<Point>> = ids
                .iter()
                .map(|&k| geometry::clip_to_convex(&self.parts[k], region))
                .filter(|p| p.len() >= 3)
                .collect();
            return geometry::union_area_convex(&pieces);
        }
        let (mx, my) = (0.5 * (rb.min_x + rb.max_x), 0.5 * (rb.min_y + rb.max_y));
        [
            BBox::new(rb.min_x, rb.min_y, mx, my),
            BBox::new(mx, rb.min_y, rb.max_x, my),
            BBox::new(rb.min_x, my, mx, rb.max_y),
            BBox::new(mx, my, rb.max_x, rb.max_y),
        ]
        .iter()
        .map(|q| {
            let sub = geometry::clip_to_convex(region, &q.ring());
            if sub.len() < 3 {
                0.0
            } else {
                self.region_area(&sub, &ids, depth - 1)
            }
        })
        .sum()
    }

    pub fn area(&self) -> f64 {
        self.area_within(None)
    }

    /// Area shared with a convex counter-clockwise polygon.
    pub fn intersection_area(&self, window: &[Point]) -> f64 {
        self.area_within(Some(window))
    }
}

/// Drops repeated vertices and interior vertices of straight runs, which
/// raster-traced lines have plenty of.
fn merge_collinear(line: &[Point]) -> Vec<Point> {
    let mut out: Vec<Point> = Vec::with_capacity(line.len());
    for &p in line {
        if out.last() == Some(&p) {
            continue;
        }
        if out.len() >= 2 {
            let (a, b) = (out[out.len() - 2], out[out.len() - 1]);
            let cross = (b.x - a.x) * (p.y - b.y) - (b.y - a.y) * (p.x - b.x);
            let dot = (b.x - a.x) * (p.x - b.x) + (b.y - a.y) * (p.y - b.y);
            if cross == 0.0 && dot > 0.0 {
                *out.last_mut().unwrap() = p;
                continue;
            }
        }
        out.push(p);
    }
    out
}

/// Round-capped, round-joined buffer of a polyline. Straight runs become a
/// single capsule.
pub fn buffer_segment(polyline: &[Point], radius: f64) -> Result<Buffer> {
    if !(radius > 0.0 && radius.is_finite()) {
        return Err(Error::invalid(format!("buffer radius must be > 0, got {radius}")));
    }
    let parts: Vec<Vec<Point>> = merge_collinear(polyline)
        .windows(2)
        .map(|w| capsule(w[0], w[1], radius))
        .collect();
    if parts.is_empty() {
        return Err(Error::invalid("cannot buffer a zero-length polyline"));
    }
    Ok(Buffer::from_parts(parts))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SegmentSource {
    Osm,
    Survey,
    Derived,
}

impl FromStr for SegmentSource {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "osm" => Ok(SegmentSource::Osm),
            "survey" => Ok(SegmentSource::Survey),
            "derived" => Ok(SegmentSource::Derived),
            other => Err(Error::invalid(format!("unknown segment source {other:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DrainageSegment {
    pub id: u64,
    pub polyline: Vec<Point>,
    /// Relative conveyance, > 0.
    pub capacity: f64,
    /// Set when the capacity was missing and filled with the median.
    pub capacity_imputed: bool,
    pub strahler: Option<u32>,
    pub source: SegmentSource,
}

#[derive(Clone, Debug, Default)]
pub struct SegmentIngest {
    pub segments: Vec<DrainageSegment>,
    pub notices: Vec<String>,
}

pub fn read_segments(path: impl AsRef<Path>) -> Result<SegmentIngest> {
    segments_from_geojson(&FeatureCollection::read(path)?)
}

fn median(values: &mut [f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    values.sort_by(f64::total_cmp);
    let m = values.len() / 2;
    Some(if values.len() % 2 == 1 {
        values[m]
    } else {
        0.5 * (values[m - 1] + values[m])
    })
}

/// LineString features with `{id?, capacity?, strahler?, source?}`.
/// Non-positive capacities are rejected; missing ones take the median of the
/// known capacities (1.0 when none is known) and are flagged.
pub fn segments_from_geojson(fc: &FeatureCollection) -> Result<SegmentIngest> {
    let mut raw = Vec::with_capacity(fc.features.len());
    for (i, f) in fc.features.iter().enumerate() {
        let row = i + 1;
        let err = |msg: String| Error::Record { row, msg };
        let Geometry::LineString(line) = &f.geometry else {
            return Err(err("drainage segments must be LineStrings".into()));
        };
        if line.len() < 2 {
            return Err(err("polyline needs at least two vertices".into()));
        }
        if geometry::polyline_length(line) == 0.0 {
            return Err(err("polyline has zero length".into()));
        }
        let id = match f.properties.get("id") {
            None | Some(Value::Null) => i as u64,
            Some(v) => v
                .as_u64()
                .ok_or_else(|| err(format!("id must be a non-negative integer, got {v}")))?,
        };
        let capacity = match f.properties.get("capacity") {
            None | Some(Value::Null) => None,
            Some(v) => {
                let c = v.as_f64().ok_or_else(|| err(format!("capacity {v} is not a number")))?;
                if !(c > 0.0 && c.is_finite()) {
                    return Err(err(format!("capacity must be > 0, got {c}")));
                }
                Some(c)
            }
        };
        let strahler = match f.properties.get("strahler") {
            None | Some(Value::Null) => None,
            Some(v) => match v.as_u64() {
                Some(s) if s >= 1 => Some(s as u32),
                _ => return Err(err(format!("strahler must be an integer >= 1, got {v}"))),
            },
        };
        let source = match f.properties.get("source").and_then(Value::as_str) {
            Some(s) => s.parse().map_err(|e: Error| err(e.to_string()))?,
            None => SegmentSource::Osm,
        };
        raw.push((id, line.clone(), capacity, strahler, source));
    }
    let mut known: Vec<f64> = raw.iter().filter_map(|r| r.2).collect();
    let fill = median(&mut known).unwrap_or(1.0);
    let mut ingest = SegmentIngest::default();
    for (id, polyline, capacity, strahler, source) in raw {
        if capacity.is_none() {
            ingest
                .notices
                .push(format!("segment {id}: capacity missing, using median {fill}"));
        }
        ingest.segments.push(DrainageSegment {
            id,
            polyline,
            capacity: capacity.unwrap_or(fill),
            capacity_imputed: capacity.is_none(),
            strahler,
            source,
        });
    }
    let mut ids: Vec<u64> = ingest.segments.iter().map(|s| s.id).collect();
    ids.sort_unstable();
    if let Some(w) = ids.windows(2).find(|w| w[0] == w[1]) {
        return Err(Error::invalid(format!("duplicate segment id {}", w[0])));
    }
    Ok(ingest)
}

/// Uses derived stream segments as drainage segments with a uniform capacity.
pub fn segments_from_network(net: &StreamNetwork, capacity: f64) -> Vec<DrainageSegment> {
    net.segments
        .iter()
        .filter(|s| geometry::polyline_length(&s.polyline) > 0.0)
        .map(|s| DrainageSegment {
            id: s.id as u64,
            polyline: s.polyline.clone(),
            capacity,
            capacity_imputed: false,
            strahler: Some(s.strahler_order),
            source: SegmentSource::Derived,
        })
        .collect()
}

/// Fills missing Strahler orders from the nearest stream segment within
/// `tol` of the drainage segment's midpoint; unmatched segments get order 1
/// and a warning. Provided orders are kept.
pub fn snap_strahler(
    segments: &mut [DrainageSegment],
    net: &StreamNetwork,
    tol: f64,
) -> Result<Vec<String>> {
    if net.segments.is_empty() {
        return Err(Error::invalid("cannot snap Strahler orders to an empty stream network"));
    }
    let mut warnings = Vec::new();
    for seg in segments.iter_mut().filter(|s| s.strahler.is_none()) {
        let mid = geometry::polyline_midpoint(&seg.polyline).expect("validated polyline");
        let nearest = net
            .segments
            .iter()
            .map(|s| (geometry::point_polyline_distance(mid, &s.polyline), s.strahler_order))
            .min_by(|a, b| a.0.total_cmp(&b.0));
        match nearest {
            Some((d, order)) if d <= tol => seg.strahler = Some(order),
            _ => {
                warnings.push(format!(
                    "segment {}: no stream within {tol} m, defaulting to Strahler order 1",
                    seg.id
                ));
                seg.strahler = Some(1);
            }
        }
    }
    Ok(warnings)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Modality {
    Uav,
    Sv,
    Combined,
}

impl FromStr for Modality {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "uav" => Ok(Modality::Uav),
            "sv" => Ok(Modality::Sv),
            "combined" => Ok(Modality::Combined),
            other => Err(Error::invalid(format!(
                "modality must be uav, sv or combined, got {other:?}"
            ))),
        }
    }
}

impl fmt::Display for Modality {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Modality::Uav => "uav",
            Modality::Sv => "sv",
            Modality::Combined => "combined",
        })
    }
}

fn min_max_rescale(values: &[Option<f64>]) -> Vec<Option<f64>> {
    let (lo, hi) = values
        .iter()
        .flatten()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(*v), hi.max(*v)));
    values
        .iter()
        .map(|v| v.map(|v| if hi > lo { (v - lo) / (hi - lo) } else { 0.0 }))
        .collect()
}

/// Per-cell index for a modality. `Combined` averages the min-max rescaled
/// UAV and SV indices where both exist, else takes whichever is defined.
pub fn cell_values(grid: &HexGrid, modality: Modality) -> Vec<Option<f64>> {
    let uav: Vec<Option<f64>> = grid.cells().iter().map(|c| c.uav_index).collect();
    let sv: Vec<Option<f64>> = grid.cells().iter().map(|c| c.sv_index).collect();
    match modality {
        Modality::Uav => uav,
        Modality::Sv => sv,
        Modality::Combined => min_max_rescale(&uav)
            .into_iter()
            .zip(min_max_rescale(&sv))
            .map(|pair| match pair {
                (Some(a), Some(b)) => Some(0.5 * (a + b)),
                (a, b) => a.or(b),
            })
            .collect(),
    }
}

/// Intersection-area-weighted mean of `values` over cells meeting the buffer.
/// `None` when no data-bearing cell intersects it.
pub fn waste_in_buffer_values(buffer: &Buffer, grid: &HexGrid, values: &[Option<f64>]) -> Option<f64> {
    let mut num = 0.0;
    let mut den = 0.0;
    for idx in grid.cells_in_bbox(&buffer.bbox()) {
        let Some(v) = values[idx] else { continue };
        let a = buffer.intersection_area(&grid.cell_hexagon(idx));
        if a > 0.0 {
            num += a * v;
            den += a;
        }
    }
    (den > 0.0).then(|| num / den)
}

pub fn waste_in_buffer(buffer: &Buffer, grid: &HexGrid, modality: Modality) -> Option<f64> {
    waste_in_buffer_values(buffer, grid, &cell_values(grid, modality))
}

#[derive(Clone, Debug, PartialEq)]
pub struct RiskScore {
    pub segment_id: u64,
    pub waste_norm: f64,
    pub strahler: u32,
    pub capacity: f64,
    pub risk: f64,
    /// Segment midpoint, used as the map symbol location.
    pub node: Point,
}

/// `waste_norm * strahler / capacity`.
pub fn risk_score(waste_norm: f64, strahler: u32, capacity: f64) -> f64 {
    waste_norm * strahler as f64 / capacity
}

#[derive(Clone, Debug, Default)]
pub struct RiskOutcome {
    /// Sorted by descending risk, ties by ascending segment id.
    pub scores: Vec<RiskScore>,
    /// Segments whose buffer met no data-bearing cell.
    pub excluded: Vec<u64>,
}

pub fn clogging_risk(
    segments: &[DrainageSegment],
    grid: &HexGrid,
    radius: f64,
    modality: Modality,
) -> Result<RiskOutcome> {
    let values = cell_values(grid, modality);
    let per_segment: Vec<Result<Option<RiskScore>>> = segments
        .par_iter()
        .map(|seg| {
            let strahler = seg.strahler.ok_or_else(|| {
                Error::invalid(format!("segment {} has no Strahler order", seg.id))
            })?;
            if !(seg.capacity > 0.0) {
                return Err(Error::invalid(format!("segment {} has capacity <= 0", seg.id)));
            }
            let buffer = buffer_segment(&seg.polyline, radius)?;
            Ok(waste_in_buffer_values(&buffer, grid, &values).map(|w| RiskScore {
                segment_id: seg.id,
                waste_norm: w,
                strahler,
                capacity: seg.capacity,
                risk: risk_score(w, strahler, seg.capacity),
                node: geometry::polyline_midpoint(&seg.polyline).expect("validated polyline"),
            }))
        })
        .collect();
    let mut out = RiskOutcome::default();
    for (seg, r) in segments.iter().zip(per_segment) {
        match r? {
            Some(s) => out.scores.push(s),
            None => out.excluded.push(seg.id),
        }
    }
    out.scores
        .sort_by(|a, b| b.risk.total_cmp(&a.risk).then(a.segment_id.cmp(&b.segment_id)));
    Ok(out)
}

pub fn risk_to_geojson(scores: &[RiskScore]) -> FeatureCollection {
    FeatureCollection::new(
        scores
            .iter()
            .map(|s| {
                Feature::new(Geometry::Point(s.node))
                    .with("segment_id", s.segment_id)
                    .with("risk", s.risk)
                    .with("waste_norm", s.waste_norm)
                    .with("strahler", s.strahler)
                    .with("capacity", s.capacity)
            })
            .collect(),
    )
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum DensityRatio {
    Ratio(f64),
    /// Waste inside the buffers but none outside.
    Overflow,
}

impl fmt::Display for DensityRatio {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DensityRatio::Ratio(r) => write!(f, "{r:.4}"),
            DensityRatio::Overflow => f.write_str("overflow (no waste outside buffers)"),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ModalityDensity {
    pub inside: f64,
    pub outside: f64,
    pub ratio: DensityRatio,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ConcentrationReport {
    pub inside_area: f64,
    pub outside_area: f64,
    /// Detection area per m².
    pub uav: ModalityDensity,
    /// Score points per m².
    pub sv: ModalityDensity,
}

fn density(inside_sum: f64, outside_sum: f64, inside_area: f64, outside_area: f64) -> ModalityDensity {
    let inside = inside_sum / inside_area;
    let outside = outside_sum / outside_area;
    let ratio = if outside > 0.0 {
        DensityRatio::Ratio(inside / outside)
    } else if inside > 0.0 {
        DensityRatio::Overflow
    } else {
        // no waste anywhere: no contrast
        DensityRatio::Ratio(1.0)
    };
    ModalityDensity {
        inside,
        outside,
        ratio,
    }
}

/// Waste density inside the buffer union over density in the rest of the
/// extent, per modality. Detections outside the extent are ignored.
pub fn riverbed_concentration_ratio(
    uav: &[UavDetection],
    sv: &[SvObservation],
    buffers: &Buffer,
    extent: BBox,
) -> Result<ConcentrationReport> {
    if extent.is_degenerate() {
        return Err(Error::invalid("degenerate extent"));
    }
    let inside_area = buffers.intersection_area(&extent.ring());
    let outside_area = extent.area() - inside_area;
    if !(inside_area > 0.0) || !(outside_area > 0.0) {
        return Err(Error::invalid(format!(
            "buffer union covers {inside_area} m² of a {} m² extent; need a proper subset",
            extent.area()
        )));
    }
    let split = |pts: Vec<(Point, f64)>| -> (f64, f64) {
        let flags: Vec<Option<bool>> = pts
            .par_iter()
            .map(|(p, _)| extent.contains(*p).then(|| buffers.contains(*p)))
            .collect();
        let (mut i, mut o) = (0.0, 0.0);
        for ((_, w), f) in pts.iter().zip(flags) {
            match f {
                Some(true) => i += w,
                Some(false) => o += w,
                None => {}
            }
        }
        (i, o)
    };
    let (ui, uo) = split(uav.iter().map(|d| (d.centroid(), d.area_m2)).collect());
    let (si, so) = split(sv.iter().map(|o| (o.point(), o.score as f64)).collect());
    Ok(ConcentrationReport {
        inside_area,
        outside_area,
        uav: density(ui, uo, inside_area, outside_area),
        sv: density(si, so, inside_area, outside_area),
    })
}

/// Segment id -> midpoint lookup for reports.
pub fn segment_index(segments: &[DrainageSegment]) -> HashMap<u64, &DrainageSegment> {
    segments.iter().map(|s| (s.id, s)).collect()
}
