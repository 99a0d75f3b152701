//! Reproducible synthetic inputs for tests, benchmarks and demos.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::geodata::{DemGrid, GeoTransform, SvObservation, UavDetection};
use crate::geometry::{BBox, Point};
use crate::hydro::{StreamNetwork, StreamSegment};

pub const NODATA: f64 = -9999.0;

/// Integer elevations in `0..levels` (plenty of flats and ties), with a
/// fraction of nodata cells. Origin (0, 0), unit cells.
pub fn random_dem(rows: usize, cols: usize, levels: u32, nodata_frac: f64, seed: u64) -> DemGrid {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let values = (0..rows * cols)
        .map(|_| {
            if rng.random::<f64>() < nodata_frac {
                NODATA
            } else {
                rng.random_range(0..levels) as f64
            }
        })
        .collect();
    DemGrid::new(rows, cols, GeoTransform::new(0.0, 0.0, 1.0).unwrap(), NODATA, values)
        .expect("consistent synthetic DEM")
}

/// Parameters of the carved-valley landscape.
#[derive(Clone, Copy, Debug)]
pub struct ValleySpec {
    pub rows: usize,
    pub cols: usize,
    pub cell_size: f64,
    /// Down-valley gradient of the trunk, toward the south edge.
    pub trunk_slope: f64,
    /// Gradient of the hillsides toward the trunk.
    pub side_slope: f64,
    /// Gradient of the hillsides toward the nearest tributary axis.
    pub tributary_slope: f64,
    /// Rows between tributary axes.
    pub tributary_spacing: usize,
}

impl Default for ValleySpec {
    fn default() -> Self {
        ValleySpec {
            rows: 200,
            cols: 200,
            cell_size: 5.0,
            trunk_slope: 0.005,
            side_slope: 0.01,
            tributary_slope: 0.04,
            tributary_spacing: 40,
        }
    }
}

/// Tilted plane with a north-south trunk valley in the middle column and
/// tributary notches every `tributary_spacing` rows on both hillsides. The
/// surface is free of interior pits: every cell descends toward the trunk,
/// and the trunk descends to the south edge.
pub fn valley_dem(spec: &ValleySpec) -> DemGrid {
    let cx = (spec.cols / 2) as f64;
    let spacing = spec.tributary_spacing.max(2) as f64;
    let half = 0.5 * spacing;
    let mut values = Vec::with_capacity(spec.rows * spec.cols);
    for row in 0..spec.rows {
        // tributary axes at half-spacing offsets so none sits on the border
        let phase = (row as f64 - half).rem_euclid(spacing);
        let to_axis = phase.min(spacing - phase);
        for col in 0..spec.cols {
            let dc = (col as f64 - cx).abs();
            let taper = (dc / 10.0).min(1.0);
            let z = spec.trunk_slope * (spec.rows - 1 - row) as f64
                + spec.side_slope * dc
                + spec.tributary_slope * to_axis * taper;
            values.push(100.0 + z * spec.cell_size);
        }
    }
    let t = GeoTransform::new(500_000.0, 9_000_000.0, spec.cell_size).unwrap();
    DemGrid::new(spec.rows, spec.cols, t, NODATA, values).expect("consistent synthetic DEM")
}

pub fn random_points(extent: BBox, n: usize, seed: u64) -> Vec<Point> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            Point::new(
                rng.random_range(extent.min_x..extent.max_x),
                rng.random_range(extent.min_y..extent.max_y),
            )
        })
        .collect()
}

/// Uniform points thinned by rejection: points where `inside` holds are
/// always kept, others with probability `1/contrast`. The kept density
/// inside is therefore `contrast` times the density outside.
pub fn scatter_with_contrast(
    extent: BBox,
    n: usize,
    contrast: f64,
    inside: impl Fn(Point) -> bool,
    seed: u64,
) -> Vec<Point> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(n);
    while out.len() < n {
        let p = Point::new(
            rng.random_range(extent.min_x..extent.max_x),
            rng.random_range(extent.min_y..extent.max_y),
        );
        let keep_draw = rng.random::<f64>();
        if inside(p) || keep_draw * contrast < 1.0 {
            out.push(p);
        }
    }
    out
}

/// UAV detections at the given points with areas in [0.5, 1.5) m².
pub fn uav_at(points: &[Point], seed: u64) -> Vec<UavDetection> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    points
        .iter()
        .map(|p| {
            let area = rng.random_range(0.5..1.5);
            let conf = rng.random_range(0.5..1.0);
            UavDetection::new(p.x, p.y, area, conf).expect("valid synthetic detection")
        })
        .collect()
}

/// Street-view observations at the given points with scores in 0..=12.
pub fn sv_at(points: &[Point], seed: u64) -> Vec<SvObservation> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    points
        .iter()
        .map(|p| {
            SvObservation::new(p.x, p.y, rng.random_range(0..=SvObservation::MAX_SCORE as i64))
                .expect("valid synthetic observation")
        })
        .collect()
}

/// Random downstream forest of `n` segments. Ids are shuffled so they carry
/// no topological order; roughly one segment in `n / roots` is an outlet.
pub fn random_stream_forest(n: usize, roots: usize, seed: u64) -> StreamNetwork {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut ids: Vec<usize> = (0..n).collect();
    for i in (1..n).rev() {
        ids.swap(i, rng.random_range(0..=i));
    }
    let roots = roots.clamp(1, n.max(1));
    let segments = (0..n)
        .map(|k| {
            let downstream_id = (k >= roots).then(|| ids[rng.random_range(0..k)]);
            StreamSegment {
                id: ids[k],
                cells: Vec::new(),
                polyline: Vec::new(),
                strahler_order: 0,
                downstream_id,
            }
        })
        .collect();
    StreamNetwork { segments }
}
