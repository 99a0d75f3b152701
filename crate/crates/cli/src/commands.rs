//! Pipeline stages and the subcommands built on them. Each subcommand
//! recomputes its upstream stages, so any one of them can run on its own.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde_json::{json, Value};
use wastemap_core::geodata::{self, filter_by_confidence, read_coverage, read_dem, Detections};
use wastemap_core::geojson::{Feature, FeatureCollection, Geometry};
use wastemap_core::hexgrid::{build_hexgrid, Overflow};
use wastemap_core::hydro::{run_hydrology, HydroOutputs};
use wastemap_core::lisa::{
    bivariate_local_moran, classify_clusters, classify_clusters_fdr, global_moran,
    hex_contiguity_weights, local_moran,
};
use wastemap_core::pano::{
    crop_bottom, default_patch_layout, gnomonic_sample, read_image_points,
    read_patch_layout, spatial_kmeans_split, write_manifest, write_split_csv, EquirectImage,
    ManifestRow,
};
use wastemap_core::risk::{
    self, buffer_segment, clogging_risk, read_segments, riverbed_concentration_ratio,
    segments_from_network, snap_strahler, ConcentrationReport, RiskOutcome,
};
use wastemap_core::{
    BBox, ClusterLabel, Coverage, DemGrid, HexGrid, LocalStat, PermutationTest, SvObservation,
    UavDetection,
};

use crate::config::{LisaMode, PipelineConfig};
use crate::CliError;

/// Files a subcommand wrote plus notes for the user.
#[derive(Debug, Default)]
pub struct Outcome {
    pub written: Vec<PathBuf>,
    pub messages: Vec<String>,
}

impl Outcome {
    fn merge(&mut self, other: Outcome) {
        self.written.extend(other.written);
        self.messages.extend(other.messages);
    }
}

fn output_path(cfg: &PipelineConfig, name: &str) -> Result<PathBuf, CliError> {
    fs::create_dir_all(&cfg.output_dir).map_err(|e| {
        CliError::internal(format!("cannot create {}: {e}", cfg.output_dir.display()))
    })?;
    Ok(cfg.output_dir.join(name))
}

fn write_collection(
    cfg: &PipelineConfig,
    name: &str,
    mut fc: FeatureCollection,
    out: &mut Outcome,
) -> Result<(), CliError> {
    fc.foreign.insert("parameters".into(), Value::Object(cfg.parameters()));
    let path = output_path(cfg, name)?;
    fc.write(&path).map_err(CliError::internal)?;
    out.written.push(path);
    Ok(())
}

fn write_text(cfg: &PipelineConfig, name: &str, text: &str, out: &mut Outcome) -> Result<(), CliError> {
    let path = output_path(cfg, name)?;
    fs::write(&path, text).map_err(|e| CliError::internal(format!("{}: {e}", path.display())))?;
    out.written.push(path);
    Ok(())
}

fn require<'a>(p: &'a Option<PathBuf>, key: &str) -> Result<&'a Path, CliError> {
    p.as_deref()
        .ok_or_else(|| CliError::input(format!("config key `{key}` is required for this command")))
}

pub fn load_dem(cfg: &PipelineConfig) -> Result<DemGrid, CliError> {
    Ok(read_dem(require(&cfg.dem, "dem")?)?)
}

pub fn hydro_stage(cfg: &PipelineConfig, dem: &DemGrid) -> Result<HydroOutputs, CliError> {
    Ok(run_hydrology(dem, cfg.fill_depressions, cfg.stream_threshold)?)
}

pub fn analysis_extent(cfg: &PipelineConfig, dem: Option<&DemGrid>) -> Result<BBox, CliError> {
    if let Some(e) = cfg.extent {
        return Ok(e);
    }
    if let Some(d) = dem {
        return Ok(d.extent());
    }
    if cfg.dem.is_some() {
        return Ok(load_dem(cfg)?.extent());
    }
    Err(CliError::input("set `extent` or `dem` to define the analysis extent"))
}

#[derive(Debug, Default)]
pub struct Inputs {
    pub uav: Vec<UavDetection>,
    pub sv: Vec<SvObservation>,
}

pub fn load_detections(cfg: &PipelineConfig) -> Result<Inputs, CliError> {
    let mut inputs = Inputs::default();
    if let Some(p) = &cfg.uav {
        match geodata::read_detections(p)? {
            Detections::Uav(v) => inputs.uav = filter_by_confidence(v, cfg.min_confidence),
            Detections::Sv(v) if v.is_empty() => {}
            Detections::Sv(_) => {
                return Err(CliError::input(format!("{}: expected UAV detections", p.display())))
            }
        }
    }
    if let Some(p) = &cfg.sv {
        match geodata::read_detections(p)? {
            Detections::Sv(v) => inputs.sv = v,
            Detections::Uav(v) if v.is_empty() => {}
            Detections::Uav(_) => {
                return Err(CliError::input(format!(
                    "{}: expected street-view observations",
                    p.display()
                )))
            }
        }
    }
    Ok(inputs)
}

#[derive(Debug)]
pub struct Aggregated {
    pub grid: HexGrid,
    pub inputs: Inputs,
    pub uav_overflow: Overflow,
    pub sv_overflow: Overflow,
}

/// Hex grid over the extent with both modalities aggregated. Without a
/// coverage file, imagery is assumed to cover the extent whenever any UAV
/// detection exists; with neither, the UAV index is no-data everywhere.
pub fn aggregate_stage(cfg: &PipelineConfig, extent: BBox) -> Result<Aggregated, CliError> {
    let inputs = load_detections(cfg)?;
    let mut grid = build_hexgrid(extent, cfg.cell_area_m2)?;
    let coverage = match &cfg.coverage {
        Some(p) => Some(Coverage::Polygons(read_coverage(p)?)),
        None if !inputs.uav.is_empty() => Some(Coverage::Full),
        None => None,
    };
    let uav_overflow = match coverage {
        Some(c) => grid.aggregate_uav(&inputs.uav, &c, cfg.min_coverage)?,
        None => Overflow::default(),
    };
    let sv_overflow = grid.aggregate_sv(&inputs.sv);
    Ok(Aggregated {
        grid,
        inputs,
        uav_overflow,
        sv_overflow,
    })
}

#[derive(Debug)]
pub struct LisaStage {
    /// Per grid cell; `None` where the mode's inputs are incomplete.
    pub stats: Vec<Option<LocalStat>>,
    pub complete_cells: usize,
    pub global_i: Option<f64>,
}

pub fn lisa_stage(cfg: &PipelineConfig, grid: &HexGrid) -> Result<LisaStage, CliError> {
    let cells = grid.cells();
    let pairs: Vec<(usize, f64, f64)> = cells
        .iter()
        .enumerate()
        .filter_map(|(i, c)| match cfg.lisa_mode {
            LisaMode::Bivariate => Some((i, c.uav_index?, c.sv_index?)),
            LisaMode::Uav => c.uav_index.map(|v| (i, v, v)),
            LisaMode::Sv => c.sv_index.map(|v| (i, v, v)),
        })
        .collect();
    let idx: Vec<usize> = pairs.iter().map(|p| p.0).collect();
    let x: Vec<f64> = pairs.iter().map(|p| p.1).collect();
    let y: Vec<f64> = pairs.iter().map(|p| p.2).collect();
    let mut stats = vec![None; cells.len()];
    if idx.len() < 2 {
        for &i in &idx {
            stats[i] = Some(LocalStat {
                local_i: 0.0,
                pseudo_p: 1.0,
                label: ClusterLabel::ND,
                z: 0.0,
                lag: 0.0,
            });
        }
        return Ok(LisaStage {
            stats,
            complete_cells: idx.len(),
            global_i: None,
        });
    }
    let w = hex_contiguity_weights(grid, &idx);
    let test = PermutationTest {
        n_perm: cfg.n_perm,
        seed: cfg.seed,
        alpha: cfg.alpha,
    };
    let mut result = match cfg.lisa_mode {
        LisaMode::Bivariate => bivariate_local_moran(&x, &y, &w, &test)?,
        _ => local_moran(&x, &w, &test)?,
    };
    if cfg.fdr {
        classify_clusters_fdr(&mut result, cfg.alpha);
    } else {
        classify_clusters(&mut result, cfg.alpha);
    }
    let global_i = match cfg.lisa_mode {
        LisaMode::Bivariate => None,
        _ => Some(global_moran(&x, &w)?),
    };
    for (k, s) in result.cells.into_iter().enumerate() {
        stats[idx[k]] = Some(s);
    }
    Ok(LisaStage {
        stats,
        complete_cells: idx.len(),
        global_i,
    })
}

#[derive(Debug)]
pub struct RiskStage {
    pub outcome: RiskOutcome,
    pub concentration: ConcentrationReport,
    pub notices: Vec<String>,
    pub segment_count: usize,
}

pub fn risk_stage(
    cfg: &PipelineConfig,
    dem: &DemGrid,
    hydro: &HydroOutputs,
    agg: &Aggregated,
) -> Result<RiskStage, CliError> {
    let mut notices = Vec::new();
    let segments = match &cfg.segments {
        Some(p) => {
            let mut ingest = read_segments(p)?;
            notices.append(&mut ingest.notices);
            if ingest.segments.iter().any(|s| s.strahler.is_none()) {
                notices.extend(snap_strahler(&mut ingest.segments, &hydro.streams, cfg.snap_tolerance_m)?);
            }
            ingest.segments
        }
        None => {
            notices.push(format!(
                "no drainage segments given: using {} derived stream segments with capacity {}",
                hydro.streams.segments.len(),
                cfg.derived_capacity
            ));
            segments_from_network(&hydro.streams, cfg.derived_capacity)
        }
    };
    if segments.is_empty() {
        return Err(CliError::input("no drainage segments to score"));
    }
    let outcome = clogging_risk(&segments, &agg.grid, cfg.buffer_radius_m, cfg.modality)?;
    let buffers = segments
        .par_iter()
        .map(|s| buffer_segment(&s.polyline, cfg.buffer_radius_m))
        .collect::<Result<Vec<_>, _>>()?;
    let union = risk::Buffer::union(&buffers);
    let extent = cfg.extent.unwrap_or_else(|| dem.extent());
    let concentration = riverbed_concentration_ratio(&agg.inputs.uav, &agg.inputs.sv, &union, extent)?;
    Ok(RiskStage {
        outcome,
        concentration,
        notices,
        segment_count: segments.len(),
    })
}

pub fn cmd_hydro(cfg: &PipelineConfig) -> Result<Outcome, CliError> {
    let dem = load_dem(cfg)?;
    let hydro = hydro_stage(cfg, &dem)?;
    write_hydro(cfg, &hydro)
}

fn write_hydro(cfg: &PipelineConfig, hydro: &HydroOutputs) -> Result<Outcome, CliError> {
    let mut out = Outcome::default();
    let p = output_path(cfg, "flowdir.asc")?;
    hydro.flowdir.write_asc(&p).map_err(CliError::internal)?;
    out.written.push(p);
    let p = output_path(cfg, "accum.asc")?;
    hydro.accum.write_asc(&p).map_err(CliError::internal)?;
    out.written.push(p);
    let mut fc = hydro.streams.to_geojson();
    fc.foreign.insert("stream_threshold_cells".into(), json!(hydro.threshold));
    write_collection(cfg, "streams.geojson", fc, &mut out)?;
    out.messages.push(format!(
        "{} stream segments (threshold {} cells, max Strahler order {})",
        hydro.streams.segments.len(),
        hydro.threshold,
        hydro.streams.max_order()
    ));
    Ok(out)
}

pub fn cmd_aggregate(cfg: &PipelineConfig) -> Result<Outcome, CliError> {
    let extent = analysis_extent(cfg, None)?;
    let agg = aggregate_stage(cfg, extent)?;
    write_aggregate(cfg, &agg)
}

fn write_aggregate(cfg: &PipelineConfig, agg: &Aggregated) -> Result<Outcome, CliError> {
    let mut out = Outcome::default();
    let mut fc = agg.grid.to_geojson();
    fc.foreign.insert(
        "overflow".into(),
        json!({
            "uav_count": agg.uav_overflow.count,
            "uav_area_m2": agg.uav_overflow.area_m2,
            "sv_count": agg.sv_overflow.count,
        }),
    );
    write_collection(cfg, "hexgrid.geojson", fc, &mut out)?;
    out.messages.push(format!(
        "{} hex cells; {} UAV detections ({} outside the grid), {} SV observations ({} outside)",
        agg.grid.len(),
        agg.inputs.uav.len(),
        agg.uav_overflow.count,
        agg.inputs.sv.len(),
        agg.sv_overflow.count
    ));
    Ok(out)
}

pub fn cmd_lisa(cfg: &PipelineConfig) -> Result<Outcome, CliError> {
    let extent = analysis_extent(cfg, None)?;
    let agg = aggregate_stage(cfg, extent)?;
    let lisa = lisa_stage(cfg, &agg.grid)?;
    write_lisa(cfg, &agg.grid, &lisa)
}

fn write_lisa(cfg: &PipelineConfig, grid: &HexGrid, lisa: &LisaStage) -> Result<Outcome, CliError> {
    let mut out = Outcome::default();
    let num = |v: Option<f64>| v.map_or(Value::Null, Value::from);
    let mut features = Vec::with_capacity(grid.len());
    let mut csv = String::from("q,r,label,local_i,pseudo_p\n");
    for (i, c) in grid.cells().iter().enumerate() {
        let s = lisa.stats[i];
        let label = s.map_or(ClusterLabel::ND, |s| s.label);
        let mut ring = grid.cell_hexagon(i);
        ring.push(ring[0]);
        features.push(
            Feature::new(Geometry::Polygon(vec![ring]))
                .with("q", c.q)
                .with("r", c.r)
                .with("label", label.to_string())
                .with("local_i", num(s.map(|s| s.local_i)))
                .with("pseudo_p", num(s.map(|s| s.pseudo_p))),
        );
        let fmt = |v: Option<f64>| v.map_or(String::new(), |v| v.to_string());
        writeln!(
            csv,
            "{},{},{},{},{}",
            c.q,
            c.r,
            label,
            fmt(s.map(|s| s.local_i)),
            fmt(s.map(|s| s.pseudo_p))
        )
        .unwrap();
    }
    let mut fc = FeatureCollection::new(features);
    fc.foreign.insert("complete_cells".into(), json!(lisa.complete_cells));
    fc.foreign.insert("global_moran_i".into(), num(lisa.global_i));
    write_collection(cfg, "clusters.geojson", fc, &mut out)?;
    write_text(cfg, "clusters.csv", &csv, &mut out)?;
    let count = |l: ClusterLabel| lisa.stats.iter().flatten().filter(|s| s.label == l).count();
    out.messages.push(format!(
        "{} cells with complete data; HH {} LL {} HL {} LH {} NS {}",
        lisa.complete_cells,
        count(ClusterLabel::HH),
        count(ClusterLabel::LL),
        count(ClusterLabel::HL),
        count(ClusterLabel::LH),
        count(ClusterLabel::NS)
    ));
    Ok(out)
}

pub fn cmd_risk(cfg: &PipelineConfig) -> Result<Outcome, CliError> {
    let dem = load_dem(cfg)?;
    let hydro = hydro_stage(cfg, &dem)?;
    let agg = aggregate_stage(cfg, analysis_extent(cfg, Some(&dem))?)?;
    let risk = risk_stage(cfg, &dem, &hydro, &agg)?;
    write_risk(cfg, &risk)
}

fn write_risk(cfg: &PipelineConfig, risk: &RiskStage) -> Result<Outcome, CliError> {
    let mut out = Outcome::default();
    let mut fc = risk::risk_to_geojson(&risk.outcome.scores);
    fc.foreign.insert("excluded_segments".into(), json!(risk.outcome.excluded));
    write_collection(cfg, "risk.geojson", fc, &mut out)?;
    write_text(cfg, "report.txt", &report(cfg, risk), &mut out)?;
    out.messages.extend(risk.notices.iter().cloned());
    out.messages.push(format!(
        "{} segments scored, {} excluded; riverbed ratio UAV {} / SV {}",
        risk.outcome.scores.len(),
        risk.outcome.excluded.len(),
        risk.concentration.uav.ratio,
        risk.concentration.sv.ratio
    ));
    Ok(out)
}

fn report(cfg: &PipelineConfig, risk: &RiskStage) -> String {
    let mut s = String::from("# Clogging risk report\n\n## Parameters\n");
    for (k, v) in cfg.parameters() {
        writeln!(s, "{k} = {v}").unwrap();
    }
    let c = &risk.concentration;
    s.push_str("\n## Riverbed concentration\n");
    writeln!(s, "buffer area inside extent (m2) = {:.3}", c.inside_area).unwrap();
    writeln!(s, "area outside buffers (m2) = {:.3}", c.outside_area).unwrap();
    writeln!(s, "uav density inside = {:.6e} m2/m2", c.uav.inside).unwrap();
    writeln!(s, "uav density outside = {:.6e} m2/m2", c.uav.outside).unwrap();
    writeln!(s, "uav ratio = {}", c.uav.ratio).unwrap();
    writeln!(s, "sv density inside = {:.6e} score/m2", c.sv.inside).unwrap();
    writeln!(s, "sv density outside = {:.6e} score/m2", c.sv.outside).unwrap();
    writeln!(s, "sv ratio = {}", c.sv.ratio).unwrap();
    writeln!(s, "\n## Top {} segments", cfg.top_n).unwrap();
    s.push_str("rank  segment_id  risk  waste_norm  strahler  capacity\n");
    for (rank, r) in risk.outcome.scores.iter().take(cfg.top_n).enumerate() {
        writeln!(
            s,
            "{}  {}  {:.6}  {:.6}  {}  {}",
            rank + 1,
            r.segment_id,
            r.risk,
            r.waste_norm,
            r.strahler,
            r.capacity
        )
        .unwrap();
    }
    writeln!(
        s,
        "\n{} of {} segments scored; excluded (no data in buffer): {:?}",
        risk.outcome.scores.len(),
        risk.segment_count,
        risk.outcome.excluded
    )
    .unwrap();
    if !risk.notices.is_empty() {
        s.push_str("\n## Notices\n");
        for n in &risk.notices {
            writeln!(s, "- {n}").unwrap();
        }
    }
    s
}

/// hydro, aggregate, lisa and risk in one pass, sharing intermediate results.
pub fn cmd_run(cfg: &PipelineConfig) -> Result<Outcome, CliError> {
    let dem = load_dem(cfg)?;
    let hydro = hydro_stage(cfg, &dem)?;
    let mut out = write_hydro(cfg, &hydro)?;
    let agg = aggregate_stage(cfg, analysis_extent(cfg, Some(&dem))?)?;
    out.merge(write_aggregate(cfg, &agg)?);
    let lisa = lisa_stage(cfg, &agg.grid)?;
    out.merge(write_lisa(cfg, &agg.grid, &lisa)?);
    let risk = risk_stage(cfg, &dem, &hydro, &agg)?;
    out.merge(write_risk(cfg, &risk)?);
    Ok(out)
}

fn panorama_files(p: &Path) -> Result<Vec<PathBuf>, CliError> {
    if p.is_file() {
        return Ok(vec![p.to_path_buf()]);
    }
    let entries = fs::read_dir(p).map_err(|e| CliError::input(format!("{}: {e}", p.display())))?;
    let mut files: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|f| f.extension().is_some_and(|x| x.eq_ignore_ascii_case("png")))
        .collect();
    files.sort();
    if files.is_empty() {
        return Err(CliError::input(format!("no .png panoramas in {}", p.display())));
    }
    Ok(files)
}

pub fn cmd_pano(cfg: &PipelineConfig) -> Result<Outcome, CliError> {
    let files = panorama_files(require(&cfg.panoramas, "panoramas")?)?;
    let layout = match &cfg.patch_layout {
        Some(p) => {
            let f = fs::File::open(p).map_err(|e| CliError::input(format!("{}: {e}", p.display())))?;
            read_patch_layout(f)?
        }
        None => default_patch_layout(),
    };
    if !(cfg.keep_fraction > 0.0 && cfg.keep_fraction <= 1.0) {
        return Err(CliError::input(format!("keep_fraction must be in (0, 1], got {}", cfg.keep_fraction)));
    }
    let patch_dir = cfg.output_dir.join("patches");
    fs::create_dir_all(&patch_dir)
        .map_err(|e| CliError::internal(format!("cannot create {}: {e}", patch_dir.display())))?;
    let images = files
        .iter()
        .map(|f| EquirectImage::read(f).map_err(CliError::from))
        .collect::<Result<Vec<_>, _>>()?;
    let mut out = Outcome::default();
    for (f, img) in files.iter().zip(&images) {
        if !img.is_full_panorama() {
            out.messages.push(format!(
                "warning: {} is {}x{}, not a full 2:1 panorama",
                f.display(),
                img.width(),
                img.height()
            ));
        }
    }
    let jobs: Vec<(usize, usize)> = (0..files.len())
        .flat_map(|i| (0..layout.len()).map(move |k| (i, k)))
        .collect();
    let rows = jobs
        .par_iter()
        .map(|&(i, k)| {
            let spec = &layout[k];
            let patch = crop_bottom(&gnomonic_sample(&images[i], spec), cfg.keep_fraction)?;
            let stem = files[i].file_stem().and_then(|s| s.to_str()).unwrap_or("pano").to_string();
            let name = format!("{stem}_{k:02}.png");
            let path = patch_dir.join(&name);
            patch.save(&path).map_err(|e| CliError::internal(format!("{}: {e}", path.display())))?;
            Ok((
                path,
                ManifestRow {
                    image_id: stem,
                    patch_index: k,
                    file: format!("patches/{name}"),
                    yaw_deg: spec.yaw.to_degrees(),
                    pitch_deg: spec.pitch.to_degrees(),
                    fov_deg: spec.fov.to_degrees(),
                    out_size: spec.out_size,
                    keep_fraction: cfg.keep_fraction,
                },
            ))
        })
        .collect::<Result<Vec<_>, CliError>>()?;
    let mut manifest = Vec::with_capacity(rows.len());
    for (p, r) in rows {
        out.written.push(p);
        manifest.push(r);
    }
    let path = output_path(cfg, "manifest.csv")?;
    let f = fs::File::create(&path).map_err(|e| CliError::internal(format!("{}: {e}", path.display())))?;
    write_manifest(f, &manifest).map_err(CliError::internal)?;
    out.written.push(path);
    out.messages.push(format!("{} patches from {} panoramas", manifest.len(), files.len()));
    Ok(out)
}

pub fn cmd_split(cfg: &PipelineConfig) -> Result<Outcome, CliError> {
    let p = require(&cfg.split_points, "split_points")?;
    let f = fs::File::open(p).map_err(|e| CliError::input(format!("{}: {e}", p.display())))?;
    let (ids, points) = read_image_points(f)?;
    let assignment = spatial_kmeans_split(&points, cfg.split_k, &cfg.split_fractions, cfg.seed)?;
    let mut out = Outcome::default();
    let path = output_path(cfg, "split.csv")?;
    let f = fs::File::create(&path).map_err(|e| CliError::internal(format!("{}: {e}", path.display())))?;
    write_split_csv(f, &ids, &assignment).map_err(CliError::internal)?;
    out.written.push(path);
    let fr = assignment.fractions();
    out.messages.push(format!(
        "{} points in {} clusters; train {:.3} val {:.3} test {:.3}",
        points.len(),
        cfg.split_k,
        fr[0],
        fr[1],
        fr[2]
    ));
    Ok(out)
}
