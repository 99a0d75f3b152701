//! Flat-top hexagonal tessellation and the two per-cell waste indices.
//!
//! Axial coordinates `(q, r)`: the center of cell `(q, r)` sits at
//! `origin + edge * (1.5 q, sqrt(3) (r + q / 2))`, with `(0, 0)` centered on
//! the extent's minimum corner.

use std::collections::HashMap;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::geodata::{null_or, CoveragePolygon, SvObservation, UavDetection};
use crate::geojson::{Feature, FeatureCollection, Geometry};
use crate::geometry::{self, BBox, Point};

const SQRT3: f64 = 1.732_050_807_568_877_2;

/// Edge length of a regular hexagon with the given area.
pub fn edge_for_area(area: f64) -> f64 {
    (2.0 * area / (3.0 * SQRT3)).sqrt()
}

pub fn hexagon_area(edge: f64) -> f64 {
    1.5 * SQRT3 * edge * edge
}

#[derive(Clone, Debug, PartialEq)]
pub struct HexCell {
    pub q: i32,
    pub r: i32,
    pub center: Point,
    pub uav_waste_area_m2: f64,
    pub uav_coverage_frac: f64,
    pub uav_index: Option<f64>,
    pub sv_score_sum: u64,
    pub sv_point_count: u32,
    pub sv_index: Option<f64>,
}

#[derive(Clone, Debug)]
pub struct HexGrid {
    origin: Point,
    edge_len: f64,
    extent: BBox,
    cells: Vec<HexCell>,
    index: HashMap<(i32, i32), usize>,
}

/// Detections that fell outside every cell of the grid.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Overflow {
    pub count: usize,
    pub area_m2: f64,
}

/// How much of each cell the UAV imagery covers.
#[derive(Clone, Debug)]
pub enum Coverage {
    /// Every cell fully imaged.
    Full,
    Polygons(Vec<CoveragePolygon>),
}

pub const AXIAL_NEIGHBORS: [(i32, i32); 6] = [(1, 0), (1, -1), (0, -1), (-1, 0), (-1, 1), (0, 1)];

/// Cube rounding of fractional axial coordinates.
fn cube_round(qf: f64, rf: f64) -> (i32, i32) {
    let sf = -qf - rf;
    let (mut q, mut r, s) = (qf.round(), rf.round(), sf.round());
    let (dq, dr, ds) = ((q - qf).abs(), (r - rf).abs(), (s - sf).abs());
    if dq > dr && dq > ds {
        q = -r - s;
    } else if dr > ds {
        r = -q - s;
    }
    (q as i32, r as i32)
}

/// Flat-top hexagons of `cell_area_m2` covering `extent`; only cells whose
/// hexagon overlaps the extent with positive area are kept.
pub fn build_hexgrid(extent: BBox, cell_area_m2: f64) -> Result<HexGrid> {
    if extent.is_degenerate() || !extent.min_x.is_finite() || !extent.min_y.is_finite() {
        return Err(Error::invalid(format!("degenerate extent {extent:?}")));
    }
    if !(cell_area_m2 > 0.0 && cell_area_m2.is_finite()) {
        return Err(Error::invalid(format!("cell area must be > 0, got {cell_area_m2}")));
    }
    let edge = edge_for_area(cell_area_m2);
    let mut grid = HexGrid {
        origin: Point::new(extent.min_x, extent.min_y),
        edge_len: edge,
        extent,
        cells: Vec::new(),
        index: HashMap::new(),
    };
    let rect = extent.ring();
    let min_area = 1e-9 * cell_area_m2;
    let half_h = 0.5 * SQRT3 * edge;
    let q_max = ((extent.width() + edge) / (1.5 * edge)).floor() as i32;
    for q in -1..=q_max {
        let r_lo = (-half_h / (SQRT3 * edge) - 0.5 * q as f64).floor() as i32;
        let r_hi = ((extent.height() + half_h) / (SQRT3 * edge) - 0.5 * q as f64).ceil() as i32;
        for r in r_lo..=r_hi {
            let c = grid.axial_to_center(q, r);
            let hb = BBox::new(c.x - edge, c.y - half_h, c.x + edge, c.y + half_h);
            if !hb.intersects(&extent) {
                continue;
            }
            let inside = hb.min_x >= extent.min_x
                && hb.max_x <= extent.max_x
                && hb.min_y >= extent.min_y
                && hb.max_y <= extent.max_y;
            if !inside {
                let hex = grid.hexagon(q, r);
                let a = geometry::signed_area(&geometry::clip_to_convex(&hex, &rect));
                if a <= min_area {
                    continue;
                }
            }
            grid.index.insert((q, r), grid.cells.len());
            grid.cells.push(HexCell {
                q,
                r,
                center: c,
                uav_waste_area_m2: 0.0,
                uav_coverage_frac: 0.0,
                uav_index: None,
                sv_score_sum: 0,
                sv_point_count: 0,
                sv_index: None,
            });
        }
    }
    Ok(grid)
}

impl HexGrid {
    pub fn edge_len(&self) -> f64 {
        self.edge_len
    }

    pub fn cell_area(&self) -> f64 {
        hexagon_area(self.edge_len)
    }

    pub fn origin(&self) -> Point {
        self.origin
    }

    pub fn extent(&self) -> BBox {
        self.extent
    }

    pub fn cells(&self) -> &[HexCell] {
        &self.cells
    }

    pub fn len(&self) -> usize {
        self.cells.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }

    pub fn cell_index(&self, q: i32, r: i32) -> Option<usize> {
        self.index.get(&(q, r)).copied()
    }

    pub fn axial_to_center(&self, q: i32, r: i32) -> Point {
        let (q, r) = (q as f64, r as f64);
        Point::new(
            self.origin.x + self.edge_len * 1.5 * q,
            self.origin.y + self.edge_len * SQRT3 * (r + 0.5 * q),
        )
    }

    /// Cell whose hexagon contains the point; edge points resolve by cube
    /// rounding. The cell may lie outside the built grid.
    pub fn point_to_cell(&self, x: f64, y: f64) -> (i32, i32) {
        let dx = x - self.origin.x;
        let dy = y - self.origin.y;
        let qf = (2.0 / 3.0) * dx / self.edge_len;
        let rf = (-dx / 3.0 + SQRT3 / 3.0 * dy) / self.edge_len;
        cube_round(qf, rf)
    }

    pub fn locate(&self, p: Point) -> Option<usize> {
        let (q, r) = self.point_to_cell(p.x, p.y);
        self.cell_index(q, r)
    }

    /// Counter-clockwise vertices of the hexagon of `(q, r)`.
    pub fn hexagon(&self, q: i32, r: i32) -> Vec<Point> {
        let c = self.axial_to_center(q, r);
        let e = self.edge_len;
        let h = 0.5 * SQRT3 * e;
        vec![
            Point::new(c.x + e, c.y),
            Point::new(c.x + 0.5 * e, c.y + h),
            Point::new(c.x - 0.5 * e, c.y + h),
            Point::new(c.x - e, c.y),
            Point::new(c.x - 0.5 * e, c.y - h),
            Point::new(c.x + 0.5 * e, c.y - h),
        ]
    }

    pub fn cell_hexagon(&self, idx: usize) -> Vec<Point> {
        let c = &self.cells[idx];
        self.hexagon(c.q, c.r)
    }

    /// Indices of grid neighbors sharing an edge with cell `idx`.
    pub fn neighbors(&self, idx: usize) -> impl Iterator<Item = usize> + '_ {
        let c = &self.cells[idx];
        AXIAL_NEIGHBORS
            .iter()
            .filter_map(move |(dq, dr)| self.cell_index(c.q + dq, c.r + dr))
    }

    /// Indices of cells whose hexagon bounding box meets `bbox`.
    pub fn cells_in_bbox(&self, bbox: &BBox) -> Vec<usize> {
        let e = self.edge_len;
        let h = 0.5 * SQRT3 * e;
        let q_lo = ((bbox.min_x - e - self.origin.x) / (1.5 * e)).floor() as i32;
        let q_hi = ((bbox.max_x + e - self.origin.x) / (1.5 * e)).ceil() as i32;
        let mut out = Vec::new();
        for q in q_lo..=q_hi {
            let r_lo = ((bbox.min_y - h - self.origin.y) / (SQRT3 * e) - 0.5 * q as f64).floor() as i32;
            let r_hi = ((bbox.max_y + h - self.origin.y) / (SQRT3 * e) - 0.5 * q as f64).ceil() as i32;
            for r in r_lo..=r_hi {
                if let Some(i) = self.cell_index(q, r) {
                    let c = self.cells[i].center;
                    let hb = BBox::new(c.x - e, c.y - h, c.x + e, c.y + h);
                    if hb.intersects(bbox) {
                        out.push(i);
                    }
                }
            }
        }
        out
    }

    /// Sums detection areas per cell by centroid, computes per-cell imagery
    /// coverage, and normalizes: `uav_index = waste / coverage` when coverage
    /// reaches `min_coverage`, no-data otherwise.
    pub fn aggregate_uav(
        &mut self,
        detections: &[UavDetection],
        coverage: &Coverage,
        min_coverage: f64,
    ) -> Result<Overflow> {
        if !(min_coverage > 0.0 && min_coverage <= 1.0) {
            return Err(Error::invalid(format!(
                "min_coverage must be in (0, 1], got {min_coverage}"
            )));
        }
        let located: Vec<Option<usize>> = detections
            .par_iter()
            .map(|d| self.locate(d.centroid()))
            .collect();
        let mut waste = vec![0.0; self.cells.len()];
        let mut overflow = Overflow::default();
        // input order keeps the sums independent of thread count
        for (d, loc) in detections.iter().zip(&located) {
            match loc {
                Some(i) => waste[*i] += d.area_m2,
                None => {
                    overflow.count += 1;
                    overflow.area_m2 += d.area_m2;
                }
            }
        }
        let fracs: Vec<f64> = match coverage {
            Coverage::Full => vec![1.0; self.cells.len()],
            Coverage::Polygons(polys) => {
                let hex_area = self.cell_area();
                (0..self.cells.len())
                    .into_par_iter()
                    .map(|i| {
                        let hex = self.cell_hexagon(i);
                        let hb = BBox::of_points(hex.iter());
                        let covered: f64 = polys
                            .iter()
                            .filter(|p| p.bbox().intersects(&hb))
                            .map(|p| p.intersection_area(&hex))
                            .sum();
                        (covered / hex_area).clamp(0.0, 1.0)
                    })
                    .collect()
            }
        };
        for ((cell, w), f) in self.cells.iter_mut().zip(waste).zip(fracs) {
            cell.uav_waste_area_m2 = w;
            cell.uav_coverage_frac = f;
            cell.uav_index = (f >= min_coverage).then(|| w / f);
        }
        Ok(overflow)
    }

    /// Mean street-view score per cell; cells without points are no-data.
    pub fn aggregate_sv(&mut self, observations: &[SvObservation]) -> Overflow {
        let located: Vec<Option<usize>> = observations
            .par_iter()
            .map(|o| self.locate(o.point()))
            .collect();
        for cell in &mut self.cells {
            cell.sv_score_sum = 0;
            cell.sv_point_count = 0;
        }
        let mut overflow = Overflow::default();
        for (o, loc) in observations.iter().zip(&located) {
            match loc {
                Some(i) => {
                    self.cells[*i].sv_score_sum += o.score as u64;
                    self.cells[*i].sv_point_count += 1;
                }
                None => overflow.count += 1,
            }
        }
        for cell in &mut self.cells {
            cell.sv_index = (cell.sv_point_count > 0)
                .then(|| cell.sv_score_sum as f64 / cell.sv_point_count as f64);
        }
        overflow
    }

    /// Hexagon polygons with `{q, r, uav_index, sv_index, uav_coverage_frac,
    /// sv_point_count}`; no-data is `null`.
    pub fn to_geojson(&self) -> FeatureCollection {
        FeatureCollection::new(
            (0..self.cells.len())
                .map(|i| {
                    let c = &self.cells[i];
                    let mut ring = self.cell_hexagon(i);
                    ring.push(ring[0]);
                    Feature::new(Geometry::Polygon(vec![ring]))
                        .with("q", c.q)
                        .with("r", c.r)
                        .with("uav_index", null_or(c.uav_index))
                        .with("sv_index", null_or(c.sv_index))
                        .with("uav_coverage_frac", c.uav_coverage_frac)
                        .with("sv_point_count", c.sv_point_count)
                })
                .collect(),
        )
    }
}

/// Area of a coverage polygon inside a hexagon (counter-clockwise vertices).
pub fn polygon_hex_intersection_area(hexagon: &[Point], polygon: &CoveragePolygon) -> f64 {
    let hex_area = geometry::signed_area(hexagon).abs();
    polygon.intersection_area(hexagon).clamp(0.0, hex_area)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn closed(mut ring: Vec<Point>) -> Vec<Point> {
        ring.push(ring[0]);
        ring
    }

    #[test]
    fn edge_length_for_default_cell_area() {
        let e = edge_for_area(308.0);
        assert!((e - 10.888_03).abs() < 1e-5, "{e}");
        assert!((hexagon_area(e) - 308.0).abs() < 1e-6);
        assert!((edge_for_area(1.5 * SQRT3) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn center_maps_to_own_cell() {
        let g = build_hexgrid(BBox::new(0.0, 0.0, 200.0, 150.0), 308.0).unwrap();
        for c in g.cells() {
            assert_eq!(g.point_to_cell(c.center.x, c.center.y), (c.q, c.r));
        }
    }

    #[test]
    fn edge_midpoint_is_stable() {
        let g = build_hexgrid(BBox::new(0.0, 0.0, 100.0, 100.0), 308.0).unwrap();
        let hex = g.hexagon(2, 3);
        let mid = Point::new(0.5 * (hex[0].x + hex[1].x), 0.5 * (hex[0].y + hex[1].y));
        let first = g.point_to_cell(mid.x, mid.y);
        for _ in 0..10 {
            assert_eq!(g.point_to_cell(mid.x, mid.y), first);
        }
        assert!(first == (2, 3) || first == (3, 3), "{first:?}");
    }

    #[test]
    fn degenerate_inputs() {
        assert!(build_hexgrid(BBox::new(0.0, 0.0, 0.0, 10.0), 308.0).is_err());
        assert!(build_hexgrid(BBox::new(0.0, 0.0, 10.0, 10.0), 0.0).is_err());
    }

    fn one_cell_grid() -> (HexGrid, usize) {
        let g = build_hexgrid(BBox::new(0.0, 0.0, 60.0, 60.0), 308.0).unwrap();
        let idx = g.locate(Point::new(30.0, 30.0)).unwrap();
        (g, idx)
    }

    #[test]
    fn uav_normalization_examples() {
        let (mut g, idx) = one_cell_grid();
        let c = g.cells()[idx].center;
        let det = [UavDetection::new(c.x, c.y, 10.0, 0.9).unwrap()];

        g.aggregate_uav(&det, &Coverage::Full, 0.1).unwrap();
        assert_eq!(g.cells()[idx].uav_index, Some(10.0));

        // cover exactly the half of the hexagon with x <= center
        let hex = g.hexagon(g.cells()[idx].q, g.cells()[idx].r);
        let left = closed(vec![
            Point::new(c.x, hex[4].y),
            Point::new(c.x, hex[1].y),
            hex[2],
            hex[3],
            hex[4],
        ]);
        let cov = Coverage::Polygons(vec![CoveragePolygon::new(vec![left]).unwrap()]);
        g.aggregate_uav(&det, &cov, 0.1).unwrap();
        let cell = &g.cells()[idx];
        assert!((cell.uav_coverage_frac - 0.5).abs() < 1e-12);
        assert!((cell.uav_index.unwrap() - 20.0).abs() < 1e-9);

        g.aggregate_uav(&det, &Coverage::Polygons(vec![]), 0.1).unwrap();
        assert_eq!(g.cells()[idx].uav_index, None);
        assert_eq!(g.cells()[idx].uav_waste_area_m2, 10.0);
    }

    #[test]
    fn overflow_is_reported() {
        let (mut g, _) = one_cell_grid();
        let det = [
            UavDetection::new(30.0, 30.0, 2.0, 1.0).unwrap(),
            UavDetection::new(1e6, 1e6, 3.5, 1.0).unwrap(),
        ];
        let o = g.aggregate_uav(&det, &Coverage::Full, 0.1).unwrap();
        assert_eq!(o, Overflow { count: 1, area_m2: 3.5 });
        let total: f64 = g.cells().iter().map(|c| c.uav_waste_area_m2).sum();
        assert_eq!(total + o.area_m2, 5.5);
        assert!(g.aggregate_uav(&det, &Coverage::Full, 0.0).is_err());
    }

    #[test]
    fn sv_mean_score() {
        let (mut g, idx) = one_cell_grid();
        let c = g.cells()[idx].center;
        let obs: Vec<_> = [12, 6, 0]
            .iter()
            .map(|s| SvObservation::new(c.x, c.y, *s).unwrap())
            .collect();
        g.aggregate_sv(&obs);
        assert_eq!(g.cells()[idx].sv_index, Some(6.0));
        g.aggregate_sv(&obs[..1]);
        assert_eq!(g.cells()[idx].sv_index, Some(12.0));
        g.aggregate_sv(&[]);
        assert_eq!(g.cells()[idx].sv_index, None);
    }

    #[test]
    fn intersection_containing_and_disjoint() {
        let (g, idx) = one_cell_grid();
        let hex = g.cell_hexagon(idx);
        let big = CoveragePolygon::new(vec![closed(BBox::new(-100.0, -100.0, 200.0, 200.0).ring())])
            .unwrap();
        assert!((polygon_hex_intersection_area(&hex, &big) - g.cell_area()).abs() < 1e-9);
        let far = CoveragePolygon::new(vec![closed(BBox::new(500.0, 500.0, 600.0, 600.0).ring())])
            .unwrap();
        assert_eq!(polygon_hex_intersection_area(&hex, &far), 0.0);
    }

    #[test]
    fn interior_cell_has_six_neighbors() {
        let g = build_hexgrid(BBox::new(0.0, 0.0, 200.0, 200.0), 308.0).unwrap();
        let idx = g.locate(Point::new(100.0, 100.0)).unwrap();
        assert_eq!(g.neighbors(idx).count(), 6);
        for j in g.neighbors(idx) {
            let d = g.cells()[idx].center.dist(g.cells()[j].center);
            assert!((d - SQRT3 * g.edge_len()).abs() < 1e-9);
        }
    }
}
