//! Local indicators of spatial association: row-standardized contiguity
//! weights, univariate and bivariate local Moran's I with conditional
//! permutation inference, and HH / LL / HL / LH cluster labels.
//!
//! Each cell's permutations draw from their own ChaCha stream (seed, stream =
//! cell index), so pseudo p-values do not depend on the worker count.

use std::collections::BTreeSet;
use std::fmt;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hexgrid::HexGrid;

/// Row-standardized spatial weights over `n` observations.
#[derive(Clone, Debug, PartialEq)]
pub struct SpatialWeights {
    neighbors: Vec<Vec<usize>>,
    weights: Vec<Vec<f64>>,
}

impl SpatialWeights {
    /// Builds weights from a symmetric adjacency list. Self-links and
    /// duplicates are dropped; each non-empty row gets weights `1 / degree`.
    pub fn from_adjacency(adjacency: Vec<Vec<usize>>) -> Result<Self> {
        let n = adjacency.len();
        let sets: Vec<BTreeSet<usize>> = adjacency
            .into_iter()
            .enumerate()
            .map(|(i, row)| row.into_iter().filter(|&j| j != i).collect())
            .collect();
        for (i, set) in sets.iter().enumerate() {
            for &j in set {
                if j >= n {
                    return Err(Error::invalid(format!("neighbor {j} of {i} out of range")));
                }
                if !sets[j].contains(&i) {
                    return Err(Error::invalid(format!("adjacency not symmetric: {i}~{j}")));
                }
            }
        }
        let neighbors: Vec<Vec<usize>> = sets.into_iter().map(|s| s.into_iter().collect()).collect();
        let weights = neighbors
            .iter()
            .map(|row| vec![1.0 / row.len() as f64; row.len()])
            .collect();
        Ok(SpatialWeights { neighbors, weights })
    }

    pub fn len(&self) -> usize {
        self.neighbors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.neighbors.is_empty()
    }

    pub fn neighbors(&self, i: usize) -> &[usize] {
        &self.neighbors[i]
    }

    pub fn weights(&self, i: usize) -> &[f64] {
        &self.weights[i]
    }

    pub fn row_sum(&self, i: usize) -> f64 {
        self.weights[i].iter().sum()
    }

    /// Σ_j w_ij v_j
    pub fn lag(&self, i: usize, values: &[f64]) -> f64 {
        self.neighbors[i]
            .iter()
            .zip(&self.weights[i])
            .map(|(&j, w)| w * values[j])
            .sum()
    }
}

/// Edge-sharing contiguity among the grid cells listed in `cells` (grid
/// indices). Observation `k` of the result is grid cell `cells[k]`; cells not
/// listed, e.g. no-data cells, are left out and their links dropped.
pub fn hex_contiguity_weights(grid: &HexGrid, cells: &[usize]) -> SpatialWeights {
    let mut pos = vec![usize::MAX; grid.len()];
    for (k, &c) in cells.iter().enumerate() {
        pos[c] = k;
    }
    let adjacency = cells
        .iter()
        .map(|&c| {
            grid.neighbors(c)
                .filter_map(|j| (pos[j] != usize::MAX).then_some(pos[j]))
                .collect()
        })
        .collect();
    SpatialWeights::from_adjacency(adjacency).expect("hex contiguity is symmetric")
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ClusterLabel {
    HH,
    LL,
    HL,
    LH,
    /// Not significant.
    NS,
    /// No data or no neighbors, or a constant input.
    ND,
}

impl fmt::Display for ClusterLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            ClusterLabel::HH => "HH",
            ClusterLabel::LL => "LL",
            ClusterLabel::HL => "HL",
            ClusterLabel::LH => "LH",
            ClusterLabel::NS => "NS",
            ClusterLabel::ND => "ND",
        };
        f.write_str(s)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LocalStat {
    pub local_i: f64,
    pub pseudo_p: f64,
    pub label: ClusterLabel,
    /// Standardized own value.
    pub z: f64,
    /// Spatial lag of the (second) standardized variable.
    pub lag: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MoranResult {
    pub cells: Vec<LocalStat>,
    pub n_perm: usize,
    /// Zero-variance input: every statistic is 0 and every label ND.
    pub degenerate: bool,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PermutationTest {
    pub n_perm: usize,
    pub seed: u64,
    pub alpha: f64,
}

impl Default for PermutationTest {
    fn default() -> Self {
        PermutationTest {
            n_perm: 999,
            seed: 0,
            alpha: 0.05,
        }
    }
}

impl PermutationTest {
    fn validate(&self) -> Result<()> {
        if self.n_perm < 99 {
            return Err(Error::invalid(format!("n_perm must be >= 99, got {}", self.n_perm)));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::invalid(format!("alpha must be in (0,1), got {}", self.alpha)));
        }
        Ok(())
    }
}

fn check_values(x: &[f64], w: &SpatialWeights) -> Result<()> {
    if x.len() != w.len() {
        return Err(Error::invalid(format!(
            "{} values for {} weight rows",
            x.len(),
            w.len()
        )));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("values must be finite"));
    }
    Ok(())
}

fn mean(x: &[f64]) -> f64 {
    x.iter().sum::<f64>() / x.len() as f64
}

/// Deviations from the mean and the second moment Σz²/n.
fn deviations(x: &[f64]) -> (Vec<f64>, f64) {
    let m = mean(x);
    let z: Vec<f64> = x.iter().map(|v| v - m).collect();
    let m2 = z.iter().map(|v| v * v).sum::<f64>() / x.len() as f64;
    (z, m2)
}

/// Mean 0, unit population variance. `None` for constant input.
pub fn standardize(x: &[f64]) -> Option<Vec<f64>> {
    let (z, m2) = deviations(x);
    (m2 > 0.0).then(|| {
        let sd = m2.sqrt();
        z.iter().map(|v| v / sd).collect()
    })
}

fn degenerate(n: usize, n_perm: usize) -> MoranResult {
    MoranResult {
        cells: vec![
            LocalStat {
                local_i: 0.0,
                pseudo_p: 1.0,
                label: ClusterLabel::ND,
                z: 0.0,
                lag: 0.0,
            };
            n
        ],
        n_perm,
        degenerate: true,
    }
}

/// Draws `k` distinct indices from `0..n` excluding `skip`.
fn draw_distinct(rng: &mut ChaCha8Rng, n: usize, skip: usize, k: usize, out: &mut Vec<usize>, scratch: &mut Vec<usize>) {
    out.clear();
    let pool = n - 1;
    if k * 4 <= pool {
        while out.len() < k {
            let mut j = rng.random_range(0..pool);
            if j >= skip {
                j += 1;
            }
            if !out.contains(&j) {
                out.push(j);
            }
        }
    } else {
        // partial Fisher-Yates
        scratch.clear();
        scratch.extend((0..n).filter(|&j| j != skip));
        for t in 0..k {
            let s = rng.random_range(t..pool);
            scratch.swap(t, s);
            out.push(scratch[t]);
        }
    }
}

/// Shared permutation engine. For cell `i` the statistic is
/// `scale_i * Σ_k w_ik pool[draw_k]`; the observed value uses the real
/// neighbors. Returns the one-tailed pseudo p toward the observed sign.
fn permutation_p(
    i: usize,
    scale: f64,
    observed: f64,
    pool: &[f64],
    w: &SpatialWeights,
    test: &PermutationTest,
) -> f64 {
    let k = w.neighbors(i).len();
    let weights = w.weights(i);
    let mut rng = ChaCha8Rng::seed_from_u64(test.seed);
    rng.set_stream(i as u64);
    let mut draw = Vec::with_capacity(k);
    let mut scratch = Vec::new();
    let mut extreme = 0usize;
    for _ in 0..test.n_perm {
        draw_distinct(&mut rng, pool.len(), i, k, &mut draw, &mut scratch);
        let lag: f64 = draw.iter().zip(weights).map(|(&j, wk)| wk * pool[j]).sum();
        let stat = scale * lag;
        let hit = if observed >= 0.0 { stat >= observed } else { stat <= observed };
        if hit {
            extreme += 1;
        }
    }
    (extreme + 1) as f64 / (test.n_perm + 1) as f64
}

fn run_local(
    focal: &[f64],
    scale: &[f64],
    pool: &[f64],
    w: &SpatialWeights,
    test: &PermutationTest,
) -> Vec<LocalStat> {
    (0..focal.len())
        .into_par_iter()
        .map(|i| {
            if w.neighbors(i).is_empty() {
                return LocalStat {
                    local_i: 0.0,
                    pseudo_p: 1.0,
                    label: ClusterLabel::ND,
                    z: focal[i],
                    lag: 0.0,
                };
            }
            let lag = w.lag(i, pool);
            let local_i = scale[i] * lag;
            let pseudo_p = permutation_p(i, scale[i], local_i, pool, w, test);
            LocalStat {
                local_i,
                pseudo_p,
                label: quadrant_label(focal[i], lag, pseudo_p, test.alpha),
                z: focal[i],
                lag,
            }
        })
        .collect()
}

fn quadrant_label(z: f64, lag: f64, p: f64, alpha: f64) -> ClusterLabel {
    if p > alpha {
        return ClusterLabel::NS;
    }
    match (z.partial_cmp(&0.0), lag.partial_cmp(&0.0)) {
        (Some(std::cmp::Ordering::Greater), Some(std::cmp::Ordering::Greater)) => ClusterLabel::HH,
        (Some(std::cmp::Ordering::Less), Some(std::cmp::Ordering::Less)) => ClusterLabel::LL,
        (Some(std::cmp::Ordering::Greater), Some(std::cmp::Ordering::Less)) => ClusterLabel::HL,
        (Some(std::cmp::Ordering::Less), Some(std::cmp::Ordering::Greater)) => ClusterLabel::LH,
        _ => ClusterLabel::NS,
    }
}

/// Univariate local Moran's I: `I_i = (z_i / m2) Σ_j w_ij z_j` with
/// `z = x - mean(x)` and `m2 = Σ z² / n`.
pub fn local_moran(x: &[f64], w: &SpatialWeights, test: &PermutationTest) -> Result<MoranResult> {
    test.validate()?;
    check_values(x, w)?;
    if x.len() < 2 {
        return Err(Error::invalid("local Moran's I needs at least two observations"));
    }
    let (z, m2) = deviations(x);
    if m2 == 0.0 {
        return Ok(degenerate(x.len(), test.n_perm));
    }
    let scale: Vec<f64> = z.iter().map(|v| v / m2).collect();
    Ok(MoranResult {
        cells: run_local(&z, &scale, &z, w, test),
        n_perm: test.n_perm,
        degenerate: false,
    })
}

/// Bivariate local Moran's I: `I_i = zx_i Σ_j w_ij zy_j` on unit-variance
/// z-scores; permutations shuffle `y` only.
pub fn bivariate_local_moran(
    x: &[f64],
    y: &[f64],
    w: &SpatialWeights,
    test: &PermutationTest,
) -> Result<MoranResult> {
    test.validate()?;
    check_values(x, w)?;
    check_values(y, w)?;
    if x.len() < 2 {
        return Err(Error::invalid("local Moran's I needs at least two observations"));
    }
    let (Some(zx), Some(zy)) = (standardize(x), standardize(y)) else {
        return Ok(degenerate(x.len(), test.n_perm));
    };
    Ok(MoranResult {
        cells: run_local(&zx, &zx, &zy, w, test),
        n_perm: test.n_perm,
        degenerate: false,
    })
}

/// Relabels every cell at significance level `alpha`.
pub fn classify_clusters(result: &mut MoranResult, alpha: f64) {
    if result.degenerate {
        return;
    }
    for c in &mut result.cells {
        if c.label != ClusterLabel::ND {
            c.label = quadrant_label(c.z, c.lag, c.pseudo_p, alpha);
        }
    }
}

/// Benjamini–Hochberg cutoff: the largest p_(k) with p_(k) <= k α / m, or 0
/// when no p-value qualifies. Cells with `p <= cutoff` remain significant.
pub fn fdr_cutoff(pvalues: &[f64], alpha: f64) -> f64 {
    let mut sorted: Vec<f64> = pvalues.to_vec();
    sorted.sort_by(f64::total_cmp);
    let m = sorted.len() as f64;
    sorted
        .iter()
        .enumerate()
        .filter(|(k, p)| **p <= (*k as f64 + 1.0) * alpha / m)
        .map(|(_, p)| *p)
        .next_back()
        .unwrap_or(0.0)
}

/// Relabels using the Benjamini–Hochberg cutoff over the non-ND cells.
pub fn classify_clusters_fdr(result: &mut MoranResult, alpha: f64) {
    let ps: Vec<f64> = result
        .cells
        .iter()
        .filter(|c| c.label != ClusterLabel::ND)
        .map(|c| c.pseudo_p)
        .collect();
    let cutoff = fdr_cutoff(&ps, alpha);
    if cutoff == 0.0 {
        for c in &mut result.cells {
            if c.label != ClusterLabel::ND {
                c.label = ClusterLabel::NS;
            }
        }
    } else {
        classify_clusters(result, cutoff);
    }
}

/// Global Moran's I: `(n / S0) Σ_i z_i Σ_j w_ij z_j / Σ z²`.
pub fn global_moran(x: &[f64], w: &SpatialWeights) -> Result<f64> {
    check_values(x, w)?;
    let (z, m2) = deviations(x);
    if m2 == 0.0 {
        return Ok(0.0);
    }
    let s0: f64 = (0..w.len()).map(|i| w.row_sum(i)).sum();
    let num: f64 = (0..z.len()).map(|i| z[i] * w.lag(i, &z)).sum();
    let den: f64 = z.iter().map(|v| v * v).sum();
    Ok(z.len() as f64 / s0 * num / den)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::BBox;
    use crate::hexgrid::build_hexgrid;

    fn rook_2x2() -> SpatialWeights {
        // 0 1
        // 2 3
        SpatialWeights::from_adjacency(vec![vec![1, 2], vec![0, 3], vec![0, 3], vec![1, 2]]).unwrap()
    }

    #[test]
    fn checkerboard_is_minus_one() {
        let r = local_moran(&[1.0, -1.0, -1.0, 1.0], &rook_2x2(), &PermutationTest::default()).unwrap();
        for c in &r.cells {
            assert!((c.local_i + 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn constant_field_is_degenerate() {
        let r = local_moran(&[3.0; 4], &rook_2x2(), &PermutationTest::default()).unwrap();
        assert!(r.degenerate);
        assert!(r.cells.iter().all(|c| c.local_i == 0.0 && c.label == ClusterLabel::ND));
        let r = bivariate_local_moran(&[1.0, 2.0, 3.0, 4.0], &[2.0; 4], &rook_2x2(), &PermutationTest::default())
            .unwrap();
        assert!(r.degenerate);
    }

    #[test]
    fn rejects_bad_parameters() {
        let w = rook_2x2();
        let t = PermutationTest {
            n_perm: 98,
            ..Default::default()
        };
        assert!(local_moran(&[1.0, 2.0, 3.0, 4.0], &w, &t).is_err());
        assert!(local_moran(&[1.0, 2.0, 3.0], &w, &PermutationTest::default()).is_err());
        assert!(local_moran(&[1.0, f64::NAN, 3.0, 4.0], &w, &PermutationTest::default()).is_err());
        assert!(SpatialWeights::from_adjacency(vec![vec![1], vec![]]).is_err());
    }

    #[test]
    fn hex_weights_rows() {
        let g = build_hexgrid(BBox::new(0.0, 0.0, 150.0, 150.0), 308.0).unwrap();
        let all: Vec<usize> = (0..g.len()).collect();
        let w = hex_contiguity_weights(&g, &all);
        let interior = g.locate(crate::Point::new(75.0, 75.0)).unwrap();
        assert_eq!(w.neighbors(interior).len(), 6);
        assert!(w.weights(interior).iter().all(|v| (*v - 1.0 / 6.0).abs() < 1e-15));
        for i in 0..w.len() {
            let s = w.row_sum(i);
            assert!((s - 1.0).abs() < 1e-12 || s == 0.0);
        }
    }

    #[test]
    fn patch_corner_has_two_neighbors() {
        let g = build_hexgrid(BBox::new(0.0, 0.0, 150.0, 150.0), 308.0).unwrap();
        let a = g.locate(crate::Point::new(75.0, 75.0)).unwrap();
        let nb: Vec<usize> = g.neighbors(a).collect();
        // a, and two of its neighbors that touch each other: every member of
        // the triangle has exactly two neighbors
        let b = nb[0];
        let c = *nb.iter().find(|&&j| g.neighbors(b).any(|k| k == j)).unwrap();
        let w = hex_contiguity_weights(&g, &[a, b, c]);
        for i in 0..3 {
            assert_eq!(w.weights(i), &[0.5, 0.5]);
        }
    }

    #[test]
    fn classify_definition_cases() {
        assert_eq!(quadrant_label(2.0, 1.5, 0.001, 0.05), ClusterLabel::HH);
        assert_eq!(quadrant_label(2.0, -1.5, 0.001, 0.05), ClusterLabel::HL);
        assert_eq!(quadrant_label(-2.0, -1.5, 0.001, 0.05), ClusterLabel::LL);
        assert_eq!(quadrant_label(-2.0, 1.5, 0.001, 0.05), ClusterLabel::LH);
        assert_eq!(quadrant_label(2.0, 1.5, 0.20, 0.05), ClusterLabel::NS);
    }

    #[test]
    fn classify_relabels_by_alpha() {
        let mut r = MoranResult {
            cells: vec![LocalStat {
                local_i: 3.0,
                pseudo_p: 0.03,
                label: ClusterLabel::HH,
                z: 2.0,
                lag: 1.5,
            }],
            n_perm: 999,
            degenerate: false,
        };
        classify_clusters(&mut r, 0.01);
        assert_eq!(r.cells[0].label, ClusterLabel::NS);
        classify_clusters(&mut r, 0.05);
        assert_eq!(r.cells[0].label, ClusterLabel::HH);
    }

    #[test]
    fn fdr_cutoff_matches_hand_computation() {
        // m = 4, alpha = 0.05: thresholds .0125 .025 .0375 .05
        assert_eq!(fdr_cutoff(&[0.01, 0.02, 0.04, 0.5], 0.05), 0.02);
        assert_eq!(fdr_cutoff(&[0.2, 0.3], 0.05), 0.0);
    }

    #[test]
    fn draws_are_distinct_and_skip_focal() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let (mut out, mut scratch) = (Vec::new(), Vec::new());
        for k in [1, 3, 6, 9] {
            for _ in 0..200 {
                draw_distinct(&mut rng, 10, 4, k, &mut out, &mut scratch);
                assert_eq!(out.len(), k);
                assert!(!out.contains(&4));
                let set: BTreeSet<_> = out.iter().collect();
                assert_eq!(set.len(), k);
            }
        }
    }
}
