//! Brute-force reference implementations, written for clarity rather than
//! speed. Shared by the core integration tests and the acceptance suite.
#![allow(dead_code)]

use std::collections::HashMap;

use wastemap_core::geometry::Point;
use wastemap_core::hexgrid::HexGrid;
use wastemap_core::hydro::{D8_CODES, D8_OFFSETS};
use wastemap_core::lisa::SpatialWeights;
use wastemap_core::{DemGrid, StreamNetwork};

fn neighbors(rows: usize, cols: usize, i: usize) -> Vec<(usize, usize)> {
    let (r, c) = ((i / cols) as isize, (i % cols) as isize);
    D8_OFFSETS
        .iter()
        .enumerate()
        .filter_map(|(slot, (dr, dc))| {
            let (rr, cc) = (r + dr, c + dc);
            (rr >= 0 && cc >= 0 && (rr as usize) < rows && (cc as usize) < cols)
                .then(|| (slot, rr as usize * cols + cc as usize))
        })
        .collect()
}

/// Fixed point of `W = max(z, min over data neighbors of W)`, seeded with
/// `W = z` on cells touching the border or nodata.
pub fn fill(dem: &DemGrid) -> Vec<f64> {
    let n = dem.rows * dem.cols;
    let nd = |i: usize| dem.values[i] == dem.nodata;
    let seed = |i: usize| {
        let nb = neighbors(dem.rows, dem.cols, i);
        nb.len() < 8 || nb.iter().any(|&(_, j)| nd(j))
    };
    let mut w: Vec<f64> = (0..n)
        .map(|i| if nd(i) { dem.nodata } else if seed(i) { dem.values[i] } else { f64::INFINITY })
        .collect();
    loop {
        let mut changed = false;
        for i in 0..n {
            if nd(i) || seed(i) {
                continue;
            }
            let m = neighbors(dem.rows, dem.cols, i)
                .into_iter()
                .filter(|&(_, j)| !nd(j))
                .map(|(_, j)| w[j])
                .fold(f64::INFINITY, f64::min);
            let v = dem.values[i].max(m);
            if v < w[i] {
                w[i] = v;
                changed = true;
            }
        }
        if !changed {
            return w;
        }
    }
}

/// Enumerates every data neighbor, ranks by slope (desc) then code (asc).
pub fn d8(dem: &DemGrid) -> Vec<u8> {
    let nd = |i: usize| dem.values[i] == dem.nodata;
    (0..dem.rows * dem.cols)
        .map(|i| {
            if nd(i) {
                return 255;
            }
            let mut cands: Vec<(f64, u8)> = neighbors(dem.rows, dem.cols, i)
                .into_iter()
                .filter(|&(_, j)| !nd(j))
                .map(|(slot, j)| {
                    let dist = if slot % 2 == 0 {
                        dem.transform.cell_size
                    } else {
                        dem.transform.cell_size * std::f64::consts::SQRT_2
                    };
                    ((dem.values[i] - dem.values[j]) / dist, D8_CODES[slot])
                })
                .filter(|(s, _)| *s > 0.0)
                .collect();
            cands.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
            cands.first().map_or(0, |c| c.1)
        })
        .collect()
}

/// Walks every cell's downstream path and credits each cell it passes.
pub fn accumulation(codes: &[u8], rows: usize, cols: usize) -> Vec<Option<u64>> {
    let n = rows * cols;
    let down = |i: usize| -> Option<usize> {
        let slot = D8_CODES.iter().position(|&c| c == codes[i])?;
        neighbors(rows, cols, i).into_iter().find(|&(s, _)| s == slot).map(|(_, j)| j)
    };
    let mut counts = vec![0u64; n];
    for start in 0..n {
        if codes[start] == 255 {
            continue;
        }
        let mut cur = start;
        let mut steps = 0;
        while let Some(j) = down(cur) {
            counts[j] += 1;
            cur = j;
            steps += 1;
            assert!(steps <= n, "cycle in oracle input");
        }
    }
    (0..n).map(|i| (codes[i] != 255).then_some(counts[i])).collect()
}

/// Strahler order straight from the definition, by recursion.
pub fn strahler(net: &StreamNetwork) -> HashMap<usize, u32> {
    let mut upstream: HashMap<usize, Vec<usize>> = HashMap::new();
    for s in &net.segments {
        if let Some(d) = s.downstream_id {
            upstream.entry(d).or_default().push(s.id);
        }
    }
    fn order(id: usize, up: &HashMap<usize, Vec<usize>>, memo: &mut HashMap<usize, u32>) -> u32 {
        if let Some(&o) = memo.get(&id) {
            return o;
        }
        let kids: Vec<u32> = up.get(&id).map_or(vec![], |v| v.iter().map(|&k| order(k, up, memo)).collect());
        let o = match kids.iter().max() {
            None => 1,
            Some(&m) if kids.iter().filter(|&&k| k == m).count() >= 2 => m + 1,
            Some(&m) => m,
        };
        memo.insert(id, o);
        o
    }
    let mut memo = HashMap::new();
    for s in &net.segments {
        order(s.id, &upstream, &mut memo);
    }
    memo
}

/// Index of the cell with the nearest center, scanning all cells.
pub fn nearest_cell(grid: &HexGrid, p: Point) -> (usize, f64, f64) {
    let mut best = (usize::MAX, f64::INFINITY, f64::INFINITY);
    for (i, c) in grid.cells().iter().enumerate() {
        let d = c.center.dist(p);
        if d < best.1 {
            best = (i, d, best.1);
        } else if d < best.2 {
            best.2 = d;
        }
    }
    best
}

/// Dense weight matrix.
pub fn dense_weights(w: &SpatialWeights) -> Vec<Vec<f64>> {
    let n = w.len();
    let mut m = vec![vec![0.0; n]; n];
    for (i, row) in m.iter_mut().enumerate() {
        for (&j, &wij) in w.neighbors(i).iter().zip(w.weights(i)) {
            row[j] = wij;
        }
    }
    m
}

/// `I_i = (z_i / m2) Σ_j w_ij z_j` with `z = x − mean`, `m2 = Σ z² / n`.
pub fn local_moran(x: &[f64], w: &[Vec<f64>]) -> Vec<f64> {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let z: Vec<f64> = x.iter().map(|v| v - mean).collect();
    let m2 = z.iter().map(|v| v * v).sum::<f64>() / n;
    (0..x.len())
        .map(|i| z[i] / m2 * (0..x.len()).map(|j| w[i][j] * z[j]).sum::<f64>())
        .collect()
}

/// `I = (n / S0) Σ_ij w_ij z_i z_j / Σ z²`.
pub fn global_moran(x: &[f64], w: &[Vec<f64>]) -> f64 {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let z: Vec<f64> = x.iter().map(|v| v - mean).collect();
    let s0: f64 = w.iter().flatten().sum();
    let mut num = 0.0;
    for i in 0..x.len() {
        for j in 0..x.len() {
            num += w[i][j] * z[i] * z[j];
        }
    }
    n / s0 * num / z.iter().map(|v| v * v).sum::<f64>()
}
