//! Algorithms behind the waste-mapping pipeline: DEM hydrology, hexagonal
//! aggregation of detections, local spatial autocorrelation, drainage
//! clogging risk and panorama preprocessing.
//!
//! All geometry is planar, in projected meters.

pub mod error;
pub mod geodata;
pub mod geojson;
pub mod geometry;
pub mod hexgrid;
pub mod hydro;
pub mod lisa;
pub mod pano;
pub mod risk;
pub mod synthetic;

pub use error::{Error, Result};
pub use geodata::{
    CoveragePolygon, DemGrid, GeoTransform, PixelBox, SvObservation, TileWindow, UavDetection,
};
pub use geometry::{BBox, Point};
pub use hexgrid::{Coverage, HexCell, HexGrid};
pub use hydro::{AccumGrid, FlowDirGrid, StreamNetwork, StreamSegment};
pub use lisa::{ClusterLabel, LocalStat, MoranResult, PermutationTest, SpatialWeights};
pub use pano::{EquirectImage, PatchSpec, Split, SplitAssignment};
pub use risk::{Buffer, DrainageSegment, Modality, RiskScore};
