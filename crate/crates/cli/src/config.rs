//! Flat `key = value` pipeline configuration.
//!
//! Blank lines and `#` comments are ignored. Relative paths resolve against
//! the directory of the file they appear in; `--set` overrides resolve
//! against the working directory.

use std::fmt::Display;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde_json::{json, Map, Value};
use wastemap_core::pano::{SplitFractions, DEFAULT_SPLIT_K};
use wastemap_core::{BBox, Modality};

use crate::CliError;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LisaMode {
    /// UAV index against the neighbors' street-view index.
    Bivariate,
    Uav,
    Sv,
}

impl FromStr for LisaMode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "bivariate" => Ok(LisaMode::Bivariate),
            "uav" => Ok(LisaMode::Uav),
            "sv" => Ok(LisaMode::Sv),
            _ => Err(format!("expected bivariate, uav or sv, got {s:?}")),
        }
    }
}

impl LisaMode {
    pub fn as_str(self) -> &'static str {
        match self {
            LisaMode::Bivariate => "bivariate",
            LisaMode::Uav => "uav",
            LisaMode::Sv => "sv",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PipelineConfig {
    pub dem: Option<PathBuf>,
    pub uav: Option<PathBuf>,
    pub sv: Option<PathBuf>,
    pub coverage: Option<PathBuf>,
    pub segments: Option<PathBuf>,
    pub panoramas: Option<PathBuf>,
    pub patch_layout: Option<PathBuf>,
    pub split_points: Option<PathBuf>,
    pub output_dir: PathBuf,

    /// Analysis extent; defaults to the DEM extent.
    pub extent: Option<BBox>,
    pub cell_area_m2: f64,
    pub buffer_radius_m: f64,
    /// `None` derives 0.5% of the valid DEM cells.
    pub stream_threshold: Option<u64>,
    pub fill_depressions: bool,
    pub n_perm: usize,
    pub alpha: f64,
    pub fdr: bool,
    pub seed: u64,
    pub min_coverage: f64,
    pub min_confidence: f64,
    pub modality: Modality,
    pub lisa_mode: LisaMode,
    pub snap_tolerance_m: f64,
    pub derived_capacity: f64,
    pub top_n: usize,
    pub keep_fraction: f64,
    pub split_k: usize,
    pub split_fractions: SplitFractions,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            dem: None,
            uav: None,
            sv: None,
            coverage: None,
            segments: None,
            panoramas: None,
            patch_layout: None,
            split_points: None,
            output_dir: PathBuf::from("out"),
            extent: None,
            cell_area_m2: 308.0,
            buffer_radius_m: 50.0,
            stream_threshold: None,
            fill_depressions: true,
            n_perm: 999,
            alpha: 0.05,
            fdr: false,
            seed: 0,
            min_coverage: 0.1,
            min_confidence: 0.0,
            modality: Modality::Combined,
            lisa_mode: LisaMode::Bivariate,
            snap_tolerance_m: 25.0,
            derived_capacity: 1.0,
            top_n: 10,
            keep_fraction: 0.5,
            split_k: DEFAULT_SPLIT_K,
            split_fractions: SplitFractions::default(),
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T, String>
where
    T::Err: Display,
{
    value
        .parse()
        .map_err(|e| format!("{key}: cannot parse {value:?}: {e}"))
}

fn floats(key: &str, value: &str, n: usize) -> Result<Vec<f64>, String> {
    let v: Vec<f64> = value
        .split(',')
        .map(|s| parse(key, s.trim()))
        .collect::<Result<_, _>>()?;
    if v.len() != n {
        return Err(format!("{key}: expected {n} comma-separated numbers"));
    }
    Ok(v)
}

fn path(base: &Path, value: &str) -> PathBuf {
    let p = PathBuf::from(value);
    if p.is_absolute() {
        p
    } else {
        base.join(p)
    }
}

impl PipelineConfig {
    pub fn load(file: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(file)
            .map_err(|e| CliError::input(format!("{}: {e}", file.display())))?;
        let base = file.parent().unwrap_or(Path::new("."));
        let mut cfg = PipelineConfig {
            output_dir: base.join("out"),
            ..Default::default()
        };
        cfg.apply_text(&text, base)
            .map_err(|e| CliError::input(format!("{}: {e}", file.display())))?;
        Ok(cfg)
    }

    pub fn apply_text(&mut self, text: &str, base: &Path) -> Result<(), String> {
        let mut seen = std::collections::HashSet::new();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| format!("line {}: expected key = value", n + 1))?;
            let k = k.trim();
            if !seen.insert(k.to_string()) {
                return Err(format!("line {}: duplicate key {k}", n + 1));
            }
            self.set(k, v.trim(), base)
                .map_err(|e| format!("line {}: {e}", n + 1))?;
        }
        Ok(())
    }

    /// Applies one `key=value` override.
    pub fn apply_override(&mut self, kv: &str, base: &Path) -> Result<(), CliError> {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| CliError::input(format!("override {kv:?} is not key=value")))?;
        self.set(k.trim(), v.trim(), base).map_err(CliError::input)
    }

    pub fn set(&mut self, key: &str, value: &str, base: &Path) -> Result<(), String> {
        let opt_path = |v: &str| (!v.is_empty()).then(|| path(base, v));
        match key {
            "dem" => self.dem = opt_path(value),
            "uav" => self.uav = opt_path(value),
            "sv" => self.sv = opt_path(value),
            "coverage" => self.coverage = opt_path(value),
            "segments" => self.segments = opt_path(value),
            "panoramas" => self.panoramas = opt_path(value),
            "patch_layout" => self.patch_layout = opt_path(value),
            "split_points" => self.split_points = opt_path(value),
            "output_dir" => self.output_dir = path(base, value),
            "extent" => {
                let v = floats(key, value, 4)?;
                let b = BBox::new(v[0], v[1], v[2], v[3]);
                if !(b.width() > 0.0 && b.height() > 0.0) {
                    return Err("extent must be min_x,min_y,max_x,max_y with positive size".into());
                }
                self.extent = Some(b);
            }
            "cell_area_m2" => self.cell_area_m2 = parse(key, value)?,
            "buffer_radius_m" => self.buffer_radius_m = parse(key, value)?,
            "stream_threshold" => {
                self.stream_threshold = match value {
                    "" | "auto" => None,
                    v => Some(parse(key, v)?),
                }
            }
            "fill_depressions" => self.fill_depressions = parse(key, value)?,
            "n_perm" => self.n_perm = parse(key, value)?,
            "alpha" => self.alpha = parse(key, value)?,
            "fdr" => self.fdr = parse(key, value)?,
            "seed" => self.seed = parse(key, value)?,
            "min_coverage" => self.min_coverage = parse(key, value)?,
            "min_confidence" => self.min_confidence = parse(key, value)?,
            "modality" => self.modality = parse(key, value)?,
            "lisa_mode" => self.lisa_mode = parse(key, value)?,
            "snap_tolerance_m" => self.snap_tolerance_m = parse(key, value)?,
            "derived_capacity" => self.derived_capacity = parse(key, value)?,
            "top_n" => self.top_n = parse(key, value)?,
            "keep_fraction" => self.keep_fraction = parse(key, value)?,
            "split_k" => self.split_k = parse(key, value)?,
            "split_fractions" => {
                let v = floats(key, value, 3)?;
                self.split_fractions = SplitFractions([v[0], v[1], v[2]]);
            }
            other => return Err(format!("unknown key {other:?}")),
        }
        Ok(())
    }

    /// Checks ranges that do not depend on the inputs.
    pub fn validate(&self) -> Result<(), CliError> {
        let bad = |m: String| Err(CliError::input(m));
        if !(self.cell_area_m2 > 0.0 && self.cell_area_m2.is_finite()) {
            return bad(format!("cell_area_m2 must be > 0, got {}", self.cell_area_m2));
        }
        if !(self.buffer_radius_m > 0.0 && self.buffer_radius_m.is_finite()) {
            return bad(format!("buffer_radius_m must be > 0, got {}", self.buffer_radius_m));
        }
        if self.stream_threshold == Some(0) {
            return bad("stream_threshold must be >= 1".into());
        }
        if !(self.derived_capacity > 0.0) {
            return bad("derived_capacity must be > 0".into());
        }
        if !(self.snap_tolerance_m >= 0.0) {
            return bad("snap_tolerance_m must be >= 0".into());
        }
        self.split_fractions
            .validate()
            .map_err(|e| CliError::input(e.to_string()))
    }

    /// Resolved parameters echoed into every output.
    pub fn parameters(&self) -> Map<String, Value> {
        let mut m = Map::new();
        m.insert("cell_area_m2".into(), json!(self.cell_area_m2));
        m.insert("buffer_radius_m".into(), json!(self.buffer_radius_m));
        m.insert("stream_threshold".into(), json!(self.stream_threshold));
        m.insert("fill_depressions".into(), json!(self.fill_depressions));
        m.insert("n_perm".into(), json!(self.n_perm));
        m.insert("alpha".into(), json!(self.alpha));
        m.insert("fdr".into(), json!(self.fdr));
        m.insert("seed".into(), json!(self.seed));
        m.insert("min_coverage".into(), json!(self.min_coverage));
        m.insert("min_confidence".into(), json!(self.min_confidence));
        m.insert("modality".into(), json!(self.modality.to_string()));
        m.insert("lisa_mode".into(), json!(self.lisa_mode.as_str()));
        m.insert("snap_tolerance_m".into(), json!(self.snap_tolerance_m));
        m.insert("derived_capacity".into(), json!(self.derived_capacity));
        m.insert("top_n".into(), json!(self.top_n));
        m.insert("keep_fraction".into(), json!(self.keep_fraction));
        m.insert("split_k".into(), json!(self.split_k));
        m.insert("split_fractions".into(), json!(self.split_fractions.0));
        if let Some(e) = self.extent {
            m.insert("extent".into(), json!([e.min_x, e.min_y, e.max_x, e.max_y]));
        }
        m
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_and_overrides() {
        let mut c = PipelineConfig::default();
        c.apply_text("# demo\ndem = dem.asc\nn_perm=199\nmodality = uav # trailing\n", Path::new("/data"))
            .unwrap();
        assert_eq!(c.dem, Some(PathBuf::from("/data/dem.asc")));
        assert_eq!(c.n_perm, 199);
        assert_eq!(c.modality, Modality::Uav);
        assert_eq!(c.cell_area_m2, 308.0);
        assert_eq!(c.buffer_radius_m, 50.0);
    }

    #[test]
    fn rejects_unknown_and_duplicate_keys() {
        let mut c = PipelineConfig::default();
        assert!(c.apply_text("colour = red", Path::new(".")).unwrap_err().contains("unknown key"));
        assert!(c.apply_text("seed=1\nseed=2", Path::new(".")).unwrap_err().contains("duplicate"));
        assert!(c.apply_text("alpha", Path::new(".")).is_err());
        assert!(c.apply_text("n_perm = many", Path::new(".")).is_err());
    }

    #[test]
    fn validation() {
        let c = PipelineConfig { stream_threshold: Some(0), ..Default::default() };
        assert!(c.validate().is_err());
        let c = PipelineConfig { split_fractions: SplitFractions([0.5, 0.5, 0.5]), ..Default::default() };
        assert!(c.validate().is_err());
        assert!(PipelineConfig::default().validate().is_ok());
    }
}
