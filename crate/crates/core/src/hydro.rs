//! Surface-flow structure from a DEM: priority-flood depression filling, D8
//! flow directions, flow accumulation, stream extraction and Strahler order.
//!
//! D8 codes follow the ESRI convention: 1=E, 2=SE, 4=S, 8=SW, 16=W, 32=NW,
//! 64=N, 128=NE, 0 for pits/outlets and 255 for nodata cells. Nodata cells are
//! impermeable; cells on the raster border or next to nodata drain out of the
//! grid and seed the flood.

use std::cmp::Ordering;
use std::collections::{BinaryHeap, HashMap, VecDeque};
use std::f64::consts::SQRT_2;
use std::path::Path;

use rayon::prelude::*;
use serde_json::Value;

use crate::error::{Error, Result};
use crate::geodata::{write_ascii_grid, DemGrid, GeoTransform};
use crate::geojson::{Feature, FeatureCollection, Geometry};
use crate::geometry::Point;

pub const D8_CODES: [u8; 8] = [1, 2, 4, 8, 16, 32, 64, 128];
/// (row, col) offsets in the same order as [`D8_CODES`].
pub const D8_OFFSETS: [(isize, isize); 8] = [
    (0, 1),
    (1, 1),
    (1, 0),
    (1, -1),
    (0, -1),
    (-1, -1),
    (-1, 0),
    (-1, 1),
];
pub const PIT: u8 = 0;
pub const NODATA_CODE: u8 = 255;

#[inline]
pub fn code_to_slot(code: u8) -> Option<usize> {
    D8_CODES.iter().position(|c| *c == code)
}

#[inline]
fn neighbor(rows: usize, cols: usize, i: usize, slot: usize) -> Option<usize> {
    let (dr, dc) = D8_OFFSETS[slot];
    let r = (i / cols) as isize + dr;
    let c = (i % cols) as isize + dc;
    (r >= 0 && c >= 0 && (r as usize) < rows && (c as usize) < cols)
        .then(|| r as usize * cols + c as usize)
}

#[derive(Clone, Debug, PartialEq)]
pub struct FlowDirGrid {
    pub rows: usize,
    pub cols: usize,
    pub transform: GeoTransform,
    pub codes: Vec<u8>,
}

impl FlowDirGrid {
    /// Validates that every code is a D8 code and never points off-grid or
    /// into nodata.
    pub fn new(rows: usize, cols: usize, transform: GeoTransform, codes: Vec<u8>) -> Result<Self> {
        if codes.len() != rows * cols {
            return Err(Error::invalid("flow-direction grid size mismatch"));
        }
        let fd = FlowDirGrid {
            rows,
            cols,
            transform,
            codes,
        };
        for (i, &code) in fd.codes.iter().enumerate() {
            if code == PIT || code == NODATA_CODE {
                continue;
            }
            let slot = code_to_slot(code)
                .ok_or_else(|| Error::invalid(format!("invalid D8 code {code} at cell {i}")))?;
            match neighbor(rows, cols, i, slot) {
                Some(j) if fd.codes[j] != NODATA_CODE => {}
                _ => {
                    return Err(Error::invalid(format!(
                        "cell {i} points off-grid or into nodata"
                    )))
                }
            }
        }
        Ok(fd)
    }

    /// Receiving cell, if the cell drains to a neighbor.
    #[inline]
    pub fn downstream(&self, i: usize) -> Option<usize> {
        let code = self.codes[i];
        if code == PIT || code == NODATA_CODE {
            return None;
        }
        code_to_slot(code).and_then(|s| neighbor(self.rows, self.cols, i, s))
    }

    pub fn is_valid(&self, i: usize) -> bool {
        self.codes[i] != NODATA_CODE
    }

    pub fn write_asc(&self, path: impl AsRef<Path>) -> Result<()> {
        write_ascii_grid(path, self.rows, self.cols, &self.transform, NODATA_CODE, &self.codes)
    }
}

/// Upstream cell counts (the cell itself excluded). Nodata cells hold `None`.
#[derive(Clone, Debug, PartialEq)]
pub struct AccumGrid {
    pub rows: usize,
    pub cols: usize,
    pub transform: GeoTransform,
    pub counts: Vec<Option<u64>>,
}

impl AccumGrid {
    pub fn get(&self, row: usize, col: usize) -> Option<u64> {
        self.counts[row * self.cols + col]
    }

    pub fn write_asc(&self, path: impl AsRef<Path>) -> Result<()> {
        let values: Vec<i64> = self
            .counts
            .iter()
            .map(|c| c.map(|v| v as i64).unwrap_or(-1))
            .collect();
        write_ascii_grid(path, self.rows, self.cols, &self.transform, -1i64, &values)
    }
}

/// Filled DEM plus, per cell, the D8 code toward the cell that flooded it
/// (0 for flood seeds, 255 for nodata). Following spill codes never ascends
/// and always ends at a seed.
#[derive(Clone, Debug)]
pub struct FilledDem {
    pub dem: DemGrid,
    pub spill: Vec<u8>,
}

struct QueueItem {
    z: f64,
    seq: u64,
    idx: usize,
}

impl PartialEq for QueueItem {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}
impl Eq for QueueItem {}
impl PartialOrd for QueueItem {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for QueueItem {
    // reversed: BinaryHeap pops the lowest elevation, then the earliest push
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .z
            .total_cmp(&self.z)
            .then_with(|| other.seq.cmp(&self.seq))
    }
}

/// True for cells that can drain out of the grid: raster border cells and
/// cells adjacent to nodata.
pub fn is_edge_cell(dem: &DemGrid, i: usize) -> bool {
    (0..8).any(|s| match neighbor(dem.rows, dem.cols, i, s) {
        None => true,
        Some(j) => dem.is_nodata(j),
    })
}

/// Minimal depression filling (priority-flood).
pub fn fill_depressions(dem: &DemGrid) -> Result<DemGrid> {
    Ok(fill_with_spill(dem)?.dem)
}

pub fn fill_with_spill(dem: &DemGrid) -> Result<FilledDem> {
    let n = dem.len();
    if dem.valid_count() == 0 {
        return Err(Error::invalid("DEM contains only nodata cells"));
    }
    let mut filled = dem.values.clone();
    let mut spill = vec![NODATA_CODE; n];
    let mut done = vec![false; n];
    let mut heap = BinaryHeap::new();
    let mut seq = 0u64;
    for i in 0..n {
        if !dem.is_nodata(i) && is_edge_cell(dem, i) {
            done[i] = true;
            spill[i] = PIT;
            heap.push(QueueItem {
                z: filled[i],
                seq,
                idx: i,
            });
            seq += 1;
        }
    }
    while let Some(QueueItem { idx: c, .. }) = heap.pop() {
        for slot in 0..8 {
            let Some(j) = neighbor(dem.rows, dem.cols, c, slot) else {
                continue;
            };
            if done[j] || dem.is_nodata(j) {
                continue;
            }
            done[j] = true;
            filled[j] = filled[j].max(filled[c]);
            // j drains back toward c: the opposite direction of `slot`
            spill[j] = D8_CODES[(slot + 4) % 8];
            heap.push(QueueItem {
                z: filled[j],
                seq,
                idx: j,
            });
            seq += 1;
        }
    }
    Ok(FilledDem {
        dem: DemGrid {
            values: filled,
            ..dem.clone()
        },
        spill,
    })
}

/// Steepest-descent direction of one cell: maximizes drop / distance over
/// strictly lower data neighbors, ties to the smallest code.
#[inline]
fn steepest(dem: &DemGrid, i: usize) -> u8 {
    if dem.is_nodata(i) {
        return NODATA_CODE;
    }
    let z = dem.values[i];
    let cell = dem.transform.cell_size;
    let diag = cell * SQRT_2;
    let mut best = 0.0;
    let mut code = PIT;
    for slot in 0..8 {
        let Some(j) = neighbor(dem.rows, dem.cols, i, slot) else {
            continue;
        };
        if dem.is_nodata(j) {
            continue;
        }
        let dist = if slot % 2 == 0 { cell } else { diag };
        let slope = (z - dem.values[j]) / dist;
        if slope > best {
            best = slope;
            code = D8_CODES[slot];
        }
    }
    code
}

/// D8 flow directions, parallel over rows.
pub fn d8_flow_direction(dem: &DemGrid) -> FlowDirGrid {
    let mut codes = vec![PIT; dem.len()];
    codes
        .par_chunks_mut(dem.cols)
        .enumerate()
        .for_each(|(r, row)| {
            for (c, out) in row.iter_mut().enumerate() {
                *out = steepest(dem, r * dem.cols + c);
            }
        });
    FlowDirGrid {
        rows: dem.rows,
        cols: dem.cols,
        transform: dem.transform,
        codes,
    }
}

/// Routes cells left without a strictly lower neighbor (filled flats) along
/// the spill direction recorded by the flood. Flood seeds stay outlets.
pub fn route_flats(fd: &mut FlowDirGrid, filled: &FilledDem) {
    for (code, &spill) in fd.codes.iter_mut().zip(&filled.spill) {
        if *code == PIT && spill != PIT && spill != NODATA_CODE {
            *code = spill;
        }
    }
}

/// Upstream cell counts by topological (Kahn) order.
pub fn flow_accumulation(fd: &FlowDirGrid) -> Result<AccumGrid> {
    let n = fd.codes.len();
    let mut indeg = vec![0u32; n];
    let mut valid = 0usize;
    for i in 0..n {
        if !fd.is_valid(i) {
            continue;
        }
        valid += 1;
        if let Some(j) = fd.downstream(i) {
            if !fd.is_valid(j) {
                return Err(Error::invalid(format!("cell {i} drains into nodata")));
            }
            indeg[j] += 1;
        }
    }
    let mut counts = vec![0u64; n];
    let mut queue: VecDeque<usize> = (0..n).filter(|&i| fd.is_valid(i) && indeg[i] == 0).collect();
    let mut processed = 0usize;
    while let Some(c) = queue.pop_front() {
        processed += 1;
        if let Some(j) = fd.downstream(c) {
            counts[j] += counts[c] + 1;
            indeg[j] -= 1;
            if indeg[j] == 0 {
                queue.push_back(j);
            }
        }
    }
    if processed != valid {
        return Err(Error::Cycle(format!(
            "{} cells lie on flow-direction cycles (unfilled DEM or corrupted codes)",
            valid - processed
        )));
    }
    Ok(AccumGrid {
        rows: fd.rows,
        cols: fd.cols,
        transform: fd.transform,
        counts: (0..n)
            .map(|i| fd.is_valid(i).then_some(counts[i]))
            .collect(),
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct StreamSegment {
    pub id: usize,
    /// Raster cells owned by this segment, upstream to downstream.
    pub cells: Vec<usize>,
    /// Cell centers of `cells`, extended by the first cell of the downstream
    /// segment so that connected segments share a vertex.
    pub polyline: Vec<Point>,
    pub strahler_order: u32,
    pub downstream_id: Option<usize>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct StreamNetwork {
    pub segments: Vec<StreamSegment>,
}

impl StreamNetwork {
    pub fn max_order(&self) -> u32 {
        self.segments.iter().map(|s| s.strahler_order).max().unwrap_or(0)
    }

    pub fn to_geojson(&self) -> FeatureCollection {
        FeatureCollection::new(
            self.segments
                .iter()
                .map(|s| {
                    let mut line = s.polyline.clone();
                    if line.len() == 1 {
                        line.push(line[0]);
                    }
                    Feature::new(Geometry::LineString(line))
                        .with("id", s.id)
                        .with("strahler_order", s.strahler_order)
                        .with(
                            "downstream_id",
                            s.downstream_id.map(Value::from).unwrap_or(Value::Null),
                        )
                })
                .collect(),
        )
    }
}

/// Default threshold: 0.5% of the data cells, at least 1.
pub fn default_stream_threshold(valid_cells: usize) -> u64 {
    ((valid_cells as f64 * 0.005).ceil() as u64).max(1)
}

/// Stream cells are those with `count >= threshold`; they are traced into
/// segments that break at confluences (cells with two or more stream
/// inflows). Segment ids follow the row-major order of their first cell.
pub fn extract_streams(acc: &AccumGrid, fd: &FlowDirGrid, threshold: u64) -> Result<StreamNetwork> {
    if threshold == 0 {
        return Err(Error::invalid("stream threshold must be >= 1"));
    }
    if acc.counts.len() != fd.codes.len() {
        return Err(Error::invalid("accumulation and flow-direction grids differ in size"));
    }
    let n = fd.codes.len();
    let is_stream: Vec<bool> = acc
        .counts
        .iter()
        .map(|c| matches!(c, Some(v) if *v >= threshold))
        .collect();
    let mut inflows = vec![0u8; n];
    for i in 0..n {
        if is_stream[i] {
            if let Some(j) = fd.downstream(i) {
                if is_stream[j] {
                    inflows[j] += 1;
                }
            }
        }
    }
    let t = &fd.transform;
    let center = |i: usize| t.cell_center(i % fd.cols, i / fd.cols);

    let mut owner = vec![usize::MAX; n];
    let mut segments = Vec::new();
    for head in 0..n {
        if !is_stream[head] || inflows[head] == 1 {
            continue;
        }
        let id = segments.len();
        let mut cells = vec![head];
        owner[head] = id;
        let mut cur = head;
        while let Some(next) = fd.downstream(cur) {
            if !is_stream[next] || inflows[next] != 1 {
                break;
            }
            owner[next] = id;
            cells.push(next);
            cur = next;
        }
        segments.push(StreamSegment {
            id,
            cells,
            polyline: Vec::new(),
            strahler_order: 1,
            downstream_id: None,
        });
    }
    for seg in &mut segments {
        let last = *seg.cells.last().expect("segments own at least one cell");
        seg.polyline = seg.cells.iter().map(|&c| center(c)).collect();
        if let Some(next) = fd.downstream(last).filter(|&j| is_stream[j]) {
            seg.downstream_id = Some(owner[next]);
            seg.polyline.push(center(next));
        }
    }
    Ok(StreamNetwork { segments })
}

/// Assigns Strahler orders: leaves get 1; a segment whose feeders have
/// maximum order k gets k+1 when two or more feeders reach k, else k.
pub fn strahler_order(net: &StreamNetwork) -> Result<StreamNetwork> {
    let n = net.segments.len();
    let mut pos: HashMap<usize, usize> = HashMap::with_capacity(n);
    for (k, s) in net.segments.iter().enumerate() {
        if pos.insert(s.id, k).is_some() {
            return Err(Error::invalid(format!("duplicate segment id {}", s.id)));
        }
    }
    let mut down = vec![None; n];
    let mut pending = vec![0usize; n];
    for (k, s) in net.segments.iter().enumerate() {
        if let Some(d) = s.downstream_id {
            let j = *pos
                .get(&d)
                .ok_or_else(|| Error::invalid(format!("segment {} drains to unknown id {d}", s.id)))?;
            down[k] = Some(j);
            pending[j] += 1;
        }
    }
    // (max feeder order, how many feeders reached it)
    let mut best = vec![(0u32, 0u32); n];
    let mut order = vec![0u32; n];
    let mut queue: VecDeque<usize> = (0..n).filter(|&k| pending[k] == 0).collect();
    let mut seen = 0;
    while let Some(k) = queue.pop_front() {
        seen += 1;
        let (m, cnt) = best[k];
        order[k] = match (m, cnt) {
            (0, _) => 1,
            (m, c) if c >= 2 => m + 1,
            (m, _) => m,
        };
        if let Some(j) = down[k] {
            let b = &mut best[j];
            match order[k].cmp(&b.0) {
                Ordering::Greater => *b = (order[k], 1),
                Ordering::Equal => b.1 += 1,
                Ordering::Less => {}
            }
            pending[j] -= 1;
            if pending[j] == 0 {
                queue.push_back(j);
            }
        }
    }
    if seen != n {
        return Err(Error::Cycle(format!(
            "{} stream segments lie on a cycle",
            n - seen
        )));
    }
    let mut out = net.clone();
    for (s, o) in out.segments.iter_mut().zip(order) {
        s.strahler_order = o;
    }
    Ok(out)
}

/// Everything `hydro` produces for one DEM.
#[derive(Clone, Debug)]
pub struct HydroOutputs {
    pub flowdir: FlowDirGrid,
    pub accum: AccumGrid,
    pub streams: StreamNetwork,
    pub threshold: u64,
}

/// fill (optional) -> D8 -> flat routing -> accumulation -> streams -> Strahler.
pub fn run_hydrology(dem: &DemGrid, fill: bool, threshold: Option<u64>) -> Result<HydroOutputs> {
    let flowdir = if fill {
        let filled = fill_with_spill(dem)?;
        let mut fd = d8_flow_direction(&filled.dem);
        route_flats(&mut fd, &filled);
        fd
    } else {
        if dem.valid_count() == 0 {
            return Err(Error::invalid("DEM contains only nodata cells"));
        }
        d8_flow_direction(dem)
    };
    let accum = flow_accumulation(&flowdir)?;
    let threshold = threshold.unwrap_or_else(|| default_stream_threshold(dem.valid_count()));
    let streams = strahler_order(&extract_streams(&accum, &flowdir, threshold)?)?;
    Ok(HydroOutputs {
        flowdir,
        accum,
        streams,
        threshold,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid(rows: usize, cols: usize, values: Vec<f64>) -> DemGrid {
        DemGrid::new(rows, cols, GeoTransform::new(0.0, rows as f64, 1.0).unwrap(), -9999.0, values)
            .unwrap()
    }

    fn fd(rows: usize, cols: usize, codes: Vec<u8>) -> FlowDirGrid {
        FlowDirGrid::new(rows, cols, GeoTransform::new(0.0, rows as f64, 1.0).unwrap(), codes).unwrap()
    }

    #[test]
    fn single_pit_is_filled() {
        let dem = grid(3, 3, vec![10., 10., 10., 10., 1., 10., 10., 10., 10.]);
        let f = fill_depressions(&dem).unwrap();
        assert_eq!(f.values[4], 10.0);
    }

    #[test]
    fn sloping_plane_unchanged_and_drains_east() {
        let (rows, cols) = (5, 6);
        let values = (0..rows * cols).map(|i| 100.0 - (i % cols) as f64).collect();
        let dem = grid(rows, cols, values);
        assert_eq!(fill_depressions(&dem).unwrap(), dem);
        let fd = d8_flow_direction(&dem);
        for r in 1..rows - 1 {
            for c in 1..cols - 1 {
                assert_eq!(fd.codes[r * cols + c], 1);
            }
        }
    }

    #[test]
    fn pit_center_collects_everything() {
        let dem = grid(3, 3, vec![5., 5., 5., 5., 1., 5., 5., 5., 5.]);
        let fd = d8_flow_direction(&dem);
        assert_eq!(fd.codes, vec![2, 4, 8, 1, 0, 16, 128, 64, 32]);
        let acc = flow_accumulation(&fd).unwrap();
        assert_eq!(acc.get(1, 1), Some(8));
    }

    #[test]
    fn all_nodata_rejected() {
        let dem = grid(2, 2, vec![-9999.0; 4]);
        assert!(fill_depressions(&dem).is_err());
    }

    #[test]
    fn nodata_is_impermeable() {
        // the center cell is lowest but nodata: nobody may drain into it
        let dem = grid(3, 3, vec![5., 5., 5., 5., -9999., 5., 5., 5., 4.]);
        let fd = d8_flow_direction(&dem);
        assert_eq!(fd.codes[4], NODATA_CODE);
        for i in 0..9 {
            assert_ne!(fd.downstream(i), Some(4));
        }
        let acc = flow_accumulation(&fd).unwrap();
        assert_eq!(acc.counts[4], None);
    }

    #[test]
    fn row_accumulates_eastward() {
        let f = fd(1, 5, vec![1, 1, 1, 1, 0]);
        let acc = flow_accumulation(&f).unwrap();
        assert_eq!(acc.counts, vec![Some(0), Some(1), Some(2), Some(3), Some(4)]);
        let net = extract_streams(&acc, &f, 2).unwrap();
        assert_eq!(net.segments.len(), 1);
        assert_eq!(net.segments[0].cells, vec![2, 3, 4]);
    }

    #[test]
    fn cycle_detected() {
        let f = FlowDirGrid {
            rows: 1,
            cols: 2,
            transform: GeoTransform::new(0.0, 1.0, 1.0).unwrap(),
            codes: vec![1, 16],
        };
        assert!(matches!(flow_accumulation(&f), Err(Error::Cycle(_))));
    }

    #[test]
    fn invalid_codes_rejected() {
        let t = GeoTransform::new(0.0, 1.0, 1.0).unwrap();
        assert!(FlowDirGrid::new(1, 2, t, vec![3, 0]).is_err());
        assert!(FlowDirGrid::new(1, 2, t, vec![0, 1]).is_err(), "points off-grid");
        assert!(FlowDirGrid::new(1, 2, t, vec![1, 255]).is_err(), "points into nodata");
    }

    /// Two 3-cell branches meet, then a 3-cell trunk.
    pub(crate) fn y_network() -> (FlowDirGrid, AccumGrid) {
        let (rows, cols) = (7, 5);
        let mut codes = vec![0u8; rows * cols];
        let at = |r: usize, c: usize| r * cols + c;
        for r in 0..3 {
            codes[at(r, 1)] = 4;
            codes[at(r, 3)] = 4;
        }
        codes[at(3, 1)] = 2;
        codes[at(3, 3)] = 8;
        codes[at(4, 2)] = 4;
        codes[at(5, 2)] = 4;
        let f = fd(rows, cols, codes);
        let acc = flow_accumulation(&f).unwrap();
        (f, acc)
    }

    #[test]
    fn y_shape_gives_three_segments() {
        let (f, acc) = y_network();
        let net = strahler_order(&extract_streams(&acc, &f, 1).unwrap()).unwrap();
        assert_eq!(net.segments.len(), 3);
        let trunk = net.segments.iter().find(|s| s.downstream_id.is_none()).unwrap();
        assert_eq!(trunk.cells.len(), 3);
        assert_eq!(trunk.strahler_order, 2);
        let branches: Vec<_> = net.segments.iter().filter(|s| s.downstream_id.is_some()).collect();
        assert_eq!(branches.len(), 2);
        for b in branches {
            assert_eq!(b.cells.len(), 3);
            assert_eq!(b.downstream_id, Some(trunk.id));
            assert_eq!(b.strahler_order, 1);
            // branch polylines end on the confluence cell
            assert_eq!(b.polyline.last(), trunk.polyline.first());
        }
    }

    fn seg(id: usize, down: Option<usize>) -> StreamSegment {
        StreamSegment {
            id,
            cells: vec![],
            polyline: vec![],
            strahler_order: 1,
            downstream_id: down,
        }
    }

    #[test]
    fn strahler_definition_cases() {
        let net = StreamNetwork {
            segments: vec![seg(0, Some(2)), seg(1, Some(2)), seg(2, None)],
        };
        let o = strahler_order(&net).unwrap();
        assert_eq!(o.segments[2].strahler_order, 2);

        // order-2 trunk joined by an order-1 tributary stays 2
        let net = StreamNetwork {
            segments: vec![
                seg(0, Some(2)),
                seg(1, Some(2)),
                seg(2, Some(4)),
                seg(3, Some(4)),
                seg(4, None),
            ],
        };
        let o = strahler_order(&net).unwrap();
        assert_eq!(o.segments[4].strahler_order, 2);
    }

    #[test]
    fn strahler_cycle_and_unknown_id() {
        let net = StreamNetwork {
            segments: vec![seg(0, Some(1)), seg(1, Some(0))],
        };
        assert!(matches!(strahler_order(&net), Err(Error::Cycle(_))));
        let net = StreamNetwork {
            segments: vec![seg(0, Some(7))],
        };
        assert!(strahler_order(&net).is_err());
    }

    #[test]
    fn default_threshold_is_half_percent() {
        assert_eq!(default_stream_threshold(40_000), 200);
        assert_eq!(default_stream_threshold(10), 1);
    }
}
