//! Panorama preprocessing: equirectangular to planar (gnomonic) patches,
//! sky cropping, and the spatial k-means train/val/test split.
//!
//! Angles are radians. Column `x` of a `W`-wide panorama sits at longitude
//! `2π(x+0.5)/W − π` and row `y` of an `H`-high one at latitude
//! `π/2 − π(y+0.5)/H`. Directions are unit vectors `(cosφ sinλ, sinφ, cosφ cosλ)`:
//! +z is forward at λ = 0, +y is up.

use std::f64::consts::{FRAC_PI_2, PI};
use std::fmt;
use std::io::{Read, Write};
use std::path::Path;
use std::str::FromStr;

use image::RgbImage;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::Point;

#[derive(Clone, Debug, PartialEq)]
pub struct EquirectImage {
    img: RgbImage,
}

impl EquirectImage {
    pub fn new(img: RgbImage) -> Result<Self> {
        if img.width() == 0 || img.height() == 0 {
            return Err(Error::invalid("panorama has zero size"));
        }
        Ok(EquirectImage { img })
    }

    pub fn from_fn(width: u32, height: u32, f: impl FnMut(u32, u32) -> image::Rgb<u8>) -> Result<Self> {
        Self::new(RgbImage::from_fn(width, height, f))
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        if !path.exists() {
            return Err(Error::io(path, std::io::Error::from(std::io::ErrorKind::NotFound)));
        }
        Self::new(image::open(path)?.to_rgb8())
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        self.img.save(path.as_ref())?;
        Ok(())
    }

    pub fn width(&self) -> u32 {
        self.img.width()
    }

    pub fn height(&self) -> u32 {
        self.img.height()
    }

    pub fn image(&self) -> &RgbImage {
        &self.img
    }

    pub fn into_image(self) -> RgbImage {
        self.img
    }

    /// A full 360×180° panorama is twice as wide as it is high.
    pub fn is_full_panorama(&self) -> bool {
        self.width() == 2 * self.height()
    }

    /// Bilinear sample at continuous pixel-index coordinates. Columns wrap,
    /// rows clamp.
    pub fn sample(&self, x: f64, y: f64) -> [u8; 3] {
        let (w, h) = (self.width() as i64, self.height() as i64);
        let y = y.clamp(0.0, (h - 1) as f64);
        let (x0, y0) = (x.floor(), y.floor());
        let (fx, fy) = (x - x0, y - y0);
        let cx0 = (x0 as i64).rem_euclid(w) as u32;
        let cx1 = (x0 as i64 + 1).rem_euclid(w) as u32;
        let ry0 = y0 as u32;
        let ry1 = (y0 as i64 + 1).min(h - 1) as u32;
        let p = |cx, ry| self.img.get_pixel(cx, ry).0;
        let (a, b, c, d) = (p(cx0, ry0), p(cx1, ry0), p(cx0, ry1), p(cx1, ry1));
        let mut out = [0u8; 3];
        for k in 0..3 {
            let top = a[k] as f64 * (1.0 - fx) + b[k] as f64 * fx;
            let bottom = c[k] as f64 * (1.0 - fx) + d[k] as f64 * fx;
            out[k] = (top * (1.0 - fy) + bottom * fy).round().clamp(0.0, 255.0) as u8;
        }
        out
    }
}

pub fn pixel_to_lonlat(x: f64, y: f64, width: u32, height: u32) -> (f64, f64) {
    (
        2.0 * PI * (x + 0.5) / width as f64 - PI,
        FRAC_PI_2 - PI * (y + 0.5) / height as f64,
    )
}

/// Inverse of [`pixel_to_lonlat`], in continuous pixel-index coordinates.
pub fn lonlat_to_pixel(lon: f64, lat: f64, width: u32, height: u32) -> (f64, f64) {
    (
        (lon + PI) * width as f64 / (2.0 * PI) - 0.5,
        (FRAC_PI_2 - lat) * height as f64 / PI - 0.5,
    )
}

pub fn lonlat_to_dir(lon: f64, lat: f64) -> [f64; 3] {
    [lat.cos() * lon.sin(), lat.sin(), lat.cos() * lon.cos()]
}

pub fn dir_to_lonlat(d: [f64; 3]) -> (f64, f64) {
    let n = (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt();
    (d[0].atan2(d[2]), (d[1] / n).clamp(-1.0, 1.0).asin())
}

/// Angle between two directions, radians.
pub fn angle_between(a: [f64; 3], b: [f64; 3]) -> f64 {
    let cross = [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ];
    let c = (cross[0] * cross[0] + cross[1] * cross[1] + cross[2] * cross[2]).sqrt();
    c.atan2(a[0] * b[0] + a[1] * b[1] + a[2] * b[2])
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PatchSpec {
    pub yaw: f64,
    pub pitch: f64,
    pub fov: f64,
    pub out_size: u32,
}

impl PatchSpec {
    pub fn new(yaw: f64, pitch: f64, fov: f64, out_size: u32) -> Result<Self> {
        if !(fov > 0.0 && fov < PI) {
            return Err(Error::invalid(format!("fov must be in (0, π), got {fov}")));
        }
        if !(pitch.abs() < FRAC_PI_2) {
            return Err(Error::invalid(format!("|pitch| must be < π/2, got {pitch}")));
        }
        if !yaw.is_finite() {
            return Err(Error::invalid("yaw must be finite"));
        }
        if out_size == 0 {
            return Err(Error::invalid("out_size must be > 0"));
        }
        Ok(PatchSpec {
            yaw,
            pitch,
            fov,
            out_size,
        })
    }

    pub fn from_degrees(yaw: f64, pitch: f64, fov: f64, out_size: u32) -> Result<Self> {
        Self::new(yaw.to_radians(), pitch.to_radians(), fov.to_radians(), out_size)
    }

    /// Pinhole focal length in pixels.
    pub fn focal(&self) -> f64 {
        0.5 * self.out_size as f64 / (0.5 * self.fov).tan()
    }

    fn camera_to_world(&self, c: [f64; 3]) -> [f64; 3] {
        let (sp, cp) = self.pitch.sin_cos();
        let (sy, cy) = self.yaw.sin_cos();
        let (x, y, z) = (c[0], c[1] * cp + c[2] * sp, -c[1] * sp + c[2] * cp);
        [x * cy + z * sy, y, -x * sy + z * cy]
    }

    fn world_to_camera(&self, d: [f64; 3]) -> [f64; 3] {
        let (sp, cp) = self.pitch.sin_cos();
        let (sy, cy) = self.yaw.sin_cos();
        let (x, y, z) = (d[0] * cy - d[2] * sy, d[1], d[0] * sy + d[2] * cy);
        [x, y * cp - z * sp, y * sp + z * cp]
    }

    /// Unit ray through continuous output coordinates `(u, v)`; pixel
    /// `(i, j)` has its center at `(i, j)`.
    pub fn ray(&self, u: f64, v: f64) -> [f64; 3] {
        let half = 0.5 * self.out_size as f64;
        let c = [u + 0.5 - half, half - (v + 0.5), self.focal()];
        let n = (c[0] * c[0] + c[1] * c[1] + c[2] * c[2]).sqrt();
        self.camera_to_world([c[0] / n, c[1] / n, c[2] / n])
    }

    /// Continuous output coordinates of a direction, `None` behind the camera.
    pub fn project(&self, d: [f64; 3]) -> Option<(f64, f64)> {
        let c = self.world_to_camera(d);
        if c[2] <= 0.0 {
            return None;
        }
        let half = 0.5 * self.out_size as f64;
        let f = self.focal();
        Some((c[0] / c[2] * f + half - 0.5, half - c[1] / c[2] * f - 0.5))
    }

    /// Whether the direction lands inside the patch footprint.
    pub fn covers(&self, d: [f64; 3]) -> bool {
        let hi = self.out_size as f64 - 0.5;
        self.project(d)
            .is_some_and(|(u, v)| (-0.5..=hi).contains(&u) && (-0.5..=hi).contains(&v))
    }
}

/// Renders one planar patch with bilinear sampling.
pub fn gnomonic_sample(img: &EquirectImage, spec: &PatchSpec) -> RgbImage {
    let n = spec.out_size;
    let (w, h) = (img.width(), img.height());
    let mut buf = vec![0u8; (n * n * 3) as usize];
    buf.par_chunks_mut((n * 3) as usize).enumerate().for_each(|(v, row)| {
        for u in 0..n as usize {
            let (lon, lat) = dir_to_lonlat(spec.ray(u as f64, v as f64));
            let (x, y) = lonlat_to_pixel(lon, lat, w, h);
            row[u * 3..u * 3 + 3].copy_from_slice(&img.sample(x, y));
        }
    });
    RgbImage::from_raw(n, n, buf).expect("buffer sized for the patch")
}

pub const DEFAULT_PATCH_SIZE: u32 = 512;

/// Six yaws 60° apart at pitch ±30°, 90° field of view.
pub fn default_patch_layout() -> Vec<PatchSpec> {
    let mut out = Vec::with_capacity(12);
    for pitch in [30.0, -30.0] {
        for k in 0..6 {
            out.push(
                PatchSpec::from_degrees(-180.0 + 60.0 * k as f64, pitch, 90.0, DEFAULT_PATCH_SIZE)
                    .expect("valid default spec"),
            );
        }
    }
    out
}

#[derive(Debug, Serialize, Deserialize)]
struct LayoutRow {
    yaw_deg: f64,
    pitch_deg: f64,
    fov_deg: f64,
    out_size: u32,
}

/// Reads a patch layout CSV with columns `yaw_deg,pitch_deg,fov_deg,out_size`.
pub fn read_patch_layout<R: Read>(reader: R) -> Result<Vec<PatchSpec>> {
    let mut rdr = csv::Reader::from_reader(reader);
    let mut out = Vec::new();
    for (i, rec) in rdr.deserialize::<LayoutRow>().enumerate() {
        let row = i + 1;
        let r = rec.map_err(|e| Error::Record { row, msg: e.to_string() })?;
        out.push(
            PatchSpec::from_degrees(r.yaw_deg, r.pitch_deg, r.fov_deg, r.out_size)
                .map_err(|e| Error::Record { row, msg: e.to_string() })?,
        );
    }
    if out.is_empty() {
        return Err(Error::invalid("patch layout is empty"));
    }
    Ok(out)
}

pub fn write_patch_layout<W: Write>(writer: W, specs: &[PatchSpec]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    for s in specs {
        w.serialize(LayoutRow {
            yaw_deg: s.yaw.to_degrees(),
            pitch_deg: s.pitch.to_degrees(),
            fov_deg: s.fov.to_degrees(),
            out_size: s.out_size,
        })?;
    }
    w.flush().map_err(|e| Error::io("<patch layout>", e))
}

#[derive(Debug, Serialize)]
pub struct ManifestRow {
    pub image_id: String,
    pub patch_index: usize,
    pub file: String,
    pub yaw_deg: f64,
    pub pitch_deg: f64,
    pub fov_deg: f64,
    pub out_size: u32,
    pub keep_fraction: f64,
}

pub fn write_manifest<W: Write>(writer: W, rows: &[ManifestRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| Error::io("<manifest>", e))
}

/// Keeps the bottom `round(H·keep_fraction)` rows.
pub fn sky_crop(img: &EquirectImage, keep_fraction: f64) -> Result<EquirectImage> {
    crop_bottom(img.image(), keep_fraction).map(|img| EquirectImage { img })
}

/// Same crop on any RGB image, e.g. a rendered patch.
pub fn crop_bottom(img: &RgbImage, keep_fraction: f64) -> Result<RgbImage> {
    if !(keep_fraction > 0.0 && keep_fraction <= 1.0) {
        return Err(Error::invalid(format!("keep_fraction must be in (0, 1], got {keep_fraction}")));
    }
    let h = img.height();
    let keep = (h as f64 * keep_fraction).round() as u32;
    if keep < 1 {
        return Err(Error::invalid(format!("cropping {h} rows by {keep_fraction} leaves no rows")));
    }
    Ok(image::imageops::crop_imm(img, 0, h - keep, img.width(), keep).to_image())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Val, Split::Test];

    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Split {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            other => Err(Error::invalid(format!("unknown split {other:?}"))),
        }
    }
}

/// Point-count fractions for train, val, test.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SplitFractions(pub [f64; 3]);

impl Default for SplitFractions {
    fn default() -> Self {
        SplitFractions([0.70, 0.15, 0.15])
    }
}

impl SplitFractions {
    pub fn validate(&self) -> Result<()> {
        let s: f64 = self.0.iter().sum();
        if self.0.iter().any(|f| !(*f >= 0.0)) || (s - 1.0).abs() > 1e-9 {
            return Err(Error::invalid(format!("split fractions {:?} must be >= 0 and sum to 1", self.0)));
        }
        Ok(())
    }
}

/// Distinct points with multiplicities, in lexicographic order.
#[derive(Clone, Debug)]
pub struct WeightedPoints {
    pub points: Vec<Point>,
    pub weights: Vec<f64>,
    /// Input index -> distinct index.
    pub index: Vec<usize>,
}

pub fn dedup_points(points: &[Point]) -> WeightedPoints {
    let mut order: Vec<usize> = (0..points.len()).collect();
    let key = |i: usize| (points[i].x, points[i].y);
    order.sort_by(|&a, &b| key(a).0.total_cmp(&key(b).0).then(key(a).1.total_cmp(&key(b).1)));
    let mut out = WeightedPoints {
        points: Vec::new(),
        weights: Vec::new(),
        index: vec![0; points.len()],
    };
    for i in order {
        let p = points[i];
        if out.points.last().is_some_and(|q| q.x.total_cmp(&p.x).is_eq() && q.y.total_cmp(&p.y).is_eq()) {
            *out.weights.last_mut().unwrap() += 1.0;
        } else {
            out.points.push(p);
            out.weights.push(1.0);
        }
        out.index[i] = out.points.len() - 1;
    }
    out
}

fn sq_dist(a: Point, b: Point) -> f64 {
    (a.x - b.x).powi(2) + (a.y - b.y).powi(2)
}

/// Nearest centroid per point, ties to the lower index.
pub fn assign_nearest(points: &[Point], centroids: &[Point]) -> Vec<usize> {
    points
        .iter()
        .map(|&p| {
            let mut best = (f64::INFINITY, 0);
            for (c, &q) in centroids.iter().enumerate() {
                let d = sq_dist(p, q);
                if d < best.0 {
                    best = (d, c);
                }
            }
            best.1
        })
        .collect()
}

/// Weighted sum of squared distances to assigned centroids.
pub fn objective(points: &[Point], weights: &[f64], centroids: &[Point], labels: &[usize]) -> f64 {
    points
        .iter()
        .zip(weights)
        .zip(labels)
        .map(|((&p, w), &l)| w * sq_dist(p, centroids[l]))
        .sum()
}

/// One Lloyd iteration: assign, then move each centroid to the weighted mean
/// of its points. Empty clusters keep their centroid.
pub fn lloyd_step(points: &[Point], weights: &[f64], centroids: &[Point]) -> (Vec<Point>, Vec<usize>) {
    let labels = assign_nearest(points, centroids);
    let k = centroids.len();
    let mut sx = vec![0.0; k];
    let mut sy = vec![0.0; k];
    let mut sw = vec![0.0; k];
    for ((p, w), &l) in points.iter().zip(weights).zip(&labels) {
        sx[l] += w * p.x;
        sy[l] += w * p.y;
        sw[l] += w;
    }
    let next = (0..k)
        .map(|c| {
            if sw[c] > 0.0 {
                Point::new(sx[c] / sw[c], sy[c] / sw[c])
            } else {
                centroids[c]
            }
        })
        .collect();
    (next, labels)
}

/// Weighted k-means++ seeding.
pub fn kmeans_pp_init(points: &[Point], weights: &[f64], k: usize, rng: &mut impl Rng) -> Vec<Point> {
    let total: f64 = weights.iter().sum();
    let pick = |target: f64, mass: &dyn Fn(usize) -> f64| -> usize {
        let mut acc = 0.0;
        for i in 0..points.len() {
            acc += mass(i);
            if acc > target {
                return i;
            }
        }
        // rounding at the top end: last point with positive mass
        (0..points.len()).rev().find(|&i| mass(i) > 0.0).unwrap_or(0)
    };
    let first = pick(rng.random::<f64>() * total, &|i| weights[i]);
    let mut centroids = vec![points[first]];
    let mut d2: Vec<f64> = points.iter().map(|&p| sq_dist(p, points[first])).collect();
    while centroids.len() < k {
        let mass: f64 = d2.iter().zip(weights).map(|(d, w)| d * w).sum();
        let next = pick(rng.random::<f64>() * mass, &|i| d2[i] * weights[i]);
        let c = points[next];
        centroids.push(c);
        for (d, &p) in d2.iter_mut().zip(points) {
            *d = d.min(sq_dist(p, c));
        }
    }
    centroids
}

pub const MAX_LLOYD_ITERATIONS: usize = 300;

#[derive(Clone, Debug)]
pub struct KMeansFit {
    pub centroids: Vec<Point>,
    /// Cluster per distinct point.
    pub labels: Vec<usize>,
    pub iterations: usize,
    /// Objective after each assignment step.
    pub objective_trace: Vec<f64>,
}

pub fn kmeans(wp: &WeightedPoints, k: usize, seed: u64) -> Result<KMeansFit> {
    if k == 0 {
        return Err(Error::invalid("k must be >= 1"));
    }
    if wp.points.len() < k {
        return Err(Error::invalid(format!(
            "{} distinct points cannot form {k} clusters",
            wp.points.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centroids = kmeans_pp_init(&wp.points, &wp.weights, k, &mut rng);
    let mut labels: Vec<usize> = Vec::new();
    let mut trace = Vec::new();
    let mut iterations = 0;
    while iterations < MAX_LLOYD_ITERATIONS {
        let (next, new_labels) = lloyd_step(&wp.points, &wp.weights, &centroids);
        trace.push(objective(&wp.points, &wp.weights, &centroids, &new_labels));
        iterations += 1;
        let converged = new_labels == labels;
        labels = new_labels;
        centroids = next;
        if converged {
            break;
        }
    }
    Ok(KMeansFit {
        centroids,
        labels,
        iterations,
        objective_trace: trace,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct SplitAssignment {
    /// Per input point.
    pub cluster_id: Vec<usize>,
    /// Per input point.
    pub split: Vec<Split>,
    /// Per cluster.
    pub cluster_split: Vec<Split>,
    pub cluster_size: Vec<usize>,
}

impl SplitAssignment {
    /// Achieved point fractions for train, val, test.
    pub fn fractions(&self) -> [f64; 3] {
        let mut counts = [0usize; 3];
        for s in &self.split {
            counts[*s as usize] += 1;
        }
        let n = self.split.len().max(1) as f64;
        counts.map(|c| c as f64 / n)
    }

    /// Share of the largest cluster in the point total.
    pub fn largest_cluster_share(&self) -> f64 {
        let n = self.split.len().max(1) as f64;
        self.cluster_size.iter().copied().max().unwrap_or(0) as f64 / n
    }
}

/// Clusters take splits whole, largest first, each going to the split
/// furthest below its target point count (ties favor train, then val).
pub fn assign_splits(cluster_size: &[usize], fractions: &SplitFractions) -> Vec<Split> {
    let n: usize = cluster_size.iter().sum();
    let mut order: Vec<usize> = (0..cluster_size.len()).collect();
    order.sort_by(|&a, &b| cluster_size[b].cmp(&cluster_size[a]).then(a.cmp(&b)));
    let mut filled = [0usize; 3];
    let mut out = vec![Split::Train; cluster_size.len()];
    for c in order {
        let mut best = 0;
        let mut best_deficit = f64::NEG_INFINITY;
        for s in 0..3 {
            let deficit = fractions.0[s] * n as f64 - filled[s] as f64;
            if deficit > best_deficit {
                best = s;
                best_deficit = deficit;
            }
        }
        filled[best] += cluster_size[c];
        out[c] = Split::ALL[best];
    }
    out
}

pub const DEFAULT_SPLIT_K: usize = 30;

pub fn spatial_kmeans_split(
    points: &[Point],
    k: usize,
    fractions: &SplitFractions,
    seed: u64,
) -> Result<SplitAssignment> {
    fractions.validate()?;
    if k < 3 {
        return Err(Error::invalid(format!("k must be >= 3, got {k}")));
    }
    if k > points.len() {
        return Err(Error::invalid(format!("k = {k} exceeds the {} points", points.len())));
    }
    if points.iter().any(|p| !(p.x.is_finite() && p.y.is_finite())) {
        return Err(Error::invalid("non-finite point coordinate"));
    }
    let wp = dedup_points(points);
    let fit = kmeans(&wp, k, seed)?;
    let cluster_id: Vec<usize> = wp.index.iter().map(|&d| fit.labels[d]).collect();
    let mut cluster_size = vec![0usize; k];
    for &c in &cluster_id {
        cluster_size[c] += 1;
    }
    let cluster_split = assign_splits(&cluster_size, fractions);
    Ok(SplitAssignment {
        split: cluster_id.iter().map(|&c| cluster_split[c]).collect(),
        cluster_id,
        cluster_split,
        cluster_size,
    })
}

#[derive(Debug, Deserialize)]
struct PointRow {
    #[serde(default)]
    image_id: Option<String>,
    x: f64,
    y: f64,
}

/// Image locations from CSV `image_id?,x,y`; missing ids become the row number.
pub fn read_image_points<R: Read>(reader: R) -> Result<(Vec<String>, Vec<Point>)> {
    let mut rdr = csv::Reader::from_reader(reader);
    let mut ids = Vec::new();
    let mut pts = Vec::new();
    for (i, rec) in rdr.deserialize::<PointRow>().enumerate() {
        let row = i + 1;
        let r = rec.map_err(|e| Error::Record { row, msg: e.to_string() })?;
        if !(r.x.is_finite() && r.y.is_finite()) {
            return Err(Error::Record { row, msg: "non-finite coordinate".into() });
        }
        ids.push(r.image_id.filter(|s| !s.is_empty()).unwrap_or_else(|| row.to_string()));
        pts.push(Point::new(r.x, r.y));
    }
    Ok((ids, pts))
}

pub fn write_split_csv<W: Write>(writer: W, ids: &[String], assignment: &SplitAssignment) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["image_id", "cluster_id", "split"])?;
    for ((id, c), s) in ids.iter().zip(&assignment.cluster_id).zip(&assignment.split) {
        w.write_record([id.as_str(), &c.to_string(), s.as_str()])?;
    }
    w.flush().map_err(|e| Error::io("<split>", e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn gradient(w: u32, h: u32) -> EquirectImage {
        EquirectImage::from_fn(w, h, |x, y| image::Rgb([(x % 256) as u8, (y % 256) as u8, 7])).unwrap()
    }

    #[test]
    fn forward_axis_hits_center() {
        let spec = PatchSpec::new(0.0, 0.0, FRAC_PI_2, 65).unwrap();
        let (lon, lat) = dir_to_lonlat(spec.ray(32.0, 32.0));
        let (x, y) = lonlat_to_pixel(lon, lat, 4096, 2048);
        assert!((x - 2047.5).abs() < 1e-6 && (y - 1023.5).abs() < 1e-6);

        let spec = PatchSpec::new(FRAC_PI_2, 0.0, FRAC_PI_2, 65).unwrap();
        let (lon, lat) = dir_to_lonlat(spec.ray(32.0, 32.0));
        let (x, _) = lonlat_to_pixel(lon, lat, 4096, 2048);
        assert!((x - (3.0 * 1024.0 - 0.5)).abs() < 1e-6);
    }

    #[test]
    fn project_inverts_ray() {
        let spec = PatchSpec::from_degrees(40.0, -25.0, 80.0, 100).unwrap();
        for (u, v) in [(0.0, 0.0), (99.0, 0.0), (12.5, 77.25), (50.0, 50.0)] {
            let (pu, pv) = spec.project(spec.ray(u, v)).unwrap();
            assert!((pu - u).abs() < 1e-9 && (pv - v).abs() < 1e-9);
        }
    }

    #[test]
    fn pitch_up_looks_up() {
        let spec = PatchSpec::from_degrees(0.0, 30.0, 90.0, 64).unwrap();
        let (_, lat) = dir_to_lonlat(spec.ray(31.5, 31.5));
        assert!((lat - 30f64.to_radians()).abs() < 1e-12);
        // image top is further up
        let (_, top) = dir_to_lonlat(spec.ray(31.5, 0.0));
        assert!(top > lat);
    }

    #[test]
    fn constant_panorama_gives_constant_patch() {
        let img = EquirectImage::from_fn(64, 32, |_, _| image::Rgb([10, 200, 33])).unwrap();
        for spec in default_patch_layout() {
            let s = PatchSpec { out_size: 24, ..spec };
            assert!(gnomonic_sample(&img, &s).pixels().all(|p| p.0 == [10, 200, 33]));
        }
    }

    #[test]
    fn wrap_shift_matches_yaw() {
        let img = gradient(128, 64);
        let delta = 37u32;
        let shifted = EquirectImage::from_fn(128, 64, |x, y| *img.image().get_pixel((x + 128 - delta) % 128, y)).unwrap();
        let spec = PatchSpec::from_degrees(170.0, 10.0, 90.0, 40).unwrap();
        let moved = PatchSpec { yaw: spec.yaw + 2.0 * PI * delta as f64 / 128.0, ..spec };
        let a = gnomonic_sample(&img, &spec);
        let b = gnomonic_sample(&shifted, &moved);
        for (p, q) in a.pixels().zip(b.pixels()) {
            for k in 0..3 {
                // the column gradient wraps 127 -> 0 across the seam
                let d = (p.0[k] as i32 - q.0[k] as i32).abs();
                assert!(d <= 1 || d >= 254, "{p:?} vs {q:?}");
            }
        }
    }

    #[test]
    fn layout_has_twelve_overlapping_patches() {
        let layout = default_patch_layout();
        assert_eq!(layout.len(), 12);
        for lon in (-180..180).map(|d| (d as f64).to_radians()) {
            let d = lonlat_to_dir(lon, 0.0);
            assert!(layout.iter().filter(|s| s.covers(d)).count() >= 2);
        }
    }

    #[test]
    fn sky_crop_examples() {
        let img = gradient(4, 2048);
        let half = sky_crop(&img, 0.5).unwrap();
        assert_eq!(half.height(), 1024);
        assert_eq!(half.image().get_pixel(0, 0), img.image().get_pixel(0, 1024));
        assert_eq!(sky_crop(&img, 0.25).unwrap().height(), 512);
        assert_eq!(sky_crop(&img, 1.0).unwrap(), img);
        assert!(sky_crop(&img, 0.0).is_err());
        assert!(sky_crop(&gradient(4, 1), 0.1).is_err());
    }

    #[test]
    fn invalid_specs() {
        assert!(PatchSpec::new(0.0, 0.0, PI, 10).is_err());
        assert!(PatchSpec::new(0.0, FRAC_PI_2, 1.0, 10).is_err());
        assert!(PatchSpec::new(0.0, 0.0, 1.0, 0).is_err());
    }

    #[test]
    fn layout_csv_round_trip() {
        let mut buf = Vec::new();
        write_patch_layout(&mut buf, &default_patch_layout()).unwrap();
        let back = read_patch_layout(buf.as_slice()).unwrap();
        for (a, b) in back.iter().zip(default_patch_layout()) {
            assert!((a.yaw - b.yaw).abs() < 1e-12 && (a.pitch - b.pitch).abs() < 1e-12);
        }
    }

    fn blobs(sizes: [usize; 3]) -> Vec<Point> {
        let centers = [Point::new(0.0, 0.0), Point::new(10_000.0, 0.0), Point::new(0.0, 10_000.0)];
        let mut out = Vec::new();
        for (c, n) in centers.iter().zip(sizes) {
            for i in 0..n {
                let t = i as f64 * 2.399;
                let r = (i as f64).sqrt();
                out.push(Point::new(c.x + r * t.cos(), c.y + r * t.sin()));
            }
        }
        out
    }

    #[test]
    fn three_blobs_split_exactly() {
        let pts = blobs([700, 150, 150]);
        let a = spatial_kmeans_split(&pts, 3, &SplitFractions::default(), 1).unwrap();
        assert_eq!(a.fractions(), [0.7, 0.15, 0.15]);
        assert!(a.split[..700].iter().all(|&s| s == Split::Train));
    }

    #[test]
    fn duplication_keeps_assignment() {
        let pts = blobs([40, 30, 20]);
        let doubled: Vec<Point> = pts.iter().chain(&pts).copied().collect();
        let a = spatial_kmeans_split(&pts, 5, &SplitFractions::default(), 9).unwrap();
        let b = spatial_kmeans_split(&doubled, 5, &SplitFractions::default(), 9).unwrap();
        assert_eq!(a.cluster_id, b.cluster_id[..pts.len()]);
        assert_eq!(a.cluster_id, b.cluster_id[pts.len()..]);
    }

    #[test]
    fn split_errors() {
        let pts = vec![Point::new(0.0, 0.0); 10];
        assert!(spatial_kmeans_split(&pts, 3, &SplitFractions::default(), 0).is_err());
        assert!(spatial_kmeans_split(&blobs([5, 5, 5]), 2, &SplitFractions::default(), 0).is_err());
        assert!(spatial_kmeans_split(&blobs([5, 5, 5]), 3, &SplitFractions([0.5, 0.5, 0.5]), 0).is_err());
    }

    #[test]
    fn split_csv_shape() {
        let pts = blobs([7, 2, 1]);
        let a = spatial_kmeans_split(&pts, 3, &SplitFractions::default(), 0).unwrap();
        let ids: Vec<String> = (0..pts.len()).map(|i| format!("img{i}")).collect();
        let mut buf = Vec::new();
        write_split_csv(&mut buf, &ids, &a).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("image_id,cluster_id,split\nimg0,"));
        assert_eq!(text.lines().count(), 11);
    }
}
