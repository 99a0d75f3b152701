//! Minimal RFC 7946 reader/writer for the geometry kinds the pipeline uses.
//!
//! Properties are kept as `serde_json` maps, which serialize with sorted keys,
//! so writing the same collection twice yields identical bytes.

use std::fs;
use std::path::Path;

use serde_json::{json, Map, Value};

use crate::error::{Error, Result};
use crate::geometry::Point;

#[derive(Clone, Debug, PartialEq)]
pub enum Geometry {
    Point(Point),
    LineString(Vec<Point>),
    /// Closed rings, exterior first.
    Polygon(Vec<Vec<Point>>),
    MultiPolygon(Vec<Vec<Vec<Point>>>),
}

#[derive(Clone, Debug, PartialEq)]
pub struct Feature {
    pub geometry: Geometry,
    pub properties: Map<String, Value>,
}

impl Feature {
    pub fn new(geometry: Geometry) -> Self {
        Feature {
            geometry,
            properties: Map::new(),
        }
    }

    pub fn with(mut self, key: &str, value: impl Into<Value>) -> Self {
        self.properties.insert(key.to_string(), value.into());
        self
    }

    pub fn number(&self, key: &str) -> Option<f64> {
        self.properties.get(key).and_then(Value::as_f64)
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct FeatureCollection {
    pub features: Vec<Feature>,
    /// Extra top-level members, e.g. the parameter echo of a pipeline run.
    pub foreign: Map<String, Value>,
}

fn pos(p: Point) -> Value {
    json!([p.x, p.y])
}

fn ring_value(ring: &[Point]) -> Value {
    Value::Array(ring.iter().map(|p| pos(*p)).collect())
}

fn geometry_value(g: &Geometry) -> Value {
    match g {
        Geometry::Point(p) => json!({"type": "Point", "coordinates": pos(*p)}),
        Geometry::LineString(l) => json!({"type": "LineString", "coordinates": ring_value(l)}),
        Geometry::Polygon(rings) => json!({
            "type": "Polygon",
            "coordinates": rings.iter().map(|r| ring_value(r)).collect::<Vec<_>>(),
        }),
        Geometry::MultiPolygon(polys) => json!({
            "type": "MultiPolygon",
            "coordinates": polys
                .iter()
                .map(|rings| rings.iter().map(|r| ring_value(r)).collect::<Vec<_>>())
                .collect::<Vec<_>>(),
        }),
    }
}

impl FeatureCollection {
    pub fn new(features: Vec<Feature>) -> Self {
        FeatureCollection {
            features,
            foreign: Map::new(),
        }
    }

    pub fn to_value(&self) -> Value {
        let mut root = Map::new();
        root.insert("type".into(), "FeatureCollection".into());
        for (k, v) in &self.foreign {
            root.insert(k.clone(), v.clone());
        }
        let feats = self
            .features
            .iter()
            .map(|f| {
                json!({
                    "type": "Feature",
                    "geometry": geometry_value(&f.geometry),
                    "properties": Value::Object(f.properties.clone()),
                })
            })
            .collect();
        root.insert("features".into(), Value::Array(feats));
        Value::Object(root)
    }

    pub fn to_string(&self) -> String {
        let mut s = serde_json::to_string(&self.to_value()).expect("json values always serialize");
        s.push('\n');
        s
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_string()).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self> {
        let root: Value = serde_json::from_str(text)?;
        let obj = root
            .as_object()
            .ok_or_else(|| Error::invalid("GeoJSON root is not an object"))?;
        match obj.get("type").and_then(Value::as_str) {
            Some("FeatureCollection") => {}
            Some("Feature") => {
                let f = parse_feature(&root, 1)?;
                return Ok(FeatureCollection::new(vec![f]));
            }
            other => {
                return Err(Error::invalid(format!(
                    "unsupported GeoJSON root type {other:?}"
                )))
            }
        }
        let feats = obj
            .get("features")
            .and_then(Value::as_array)
            .ok_or_else(|| Error::invalid("FeatureCollection without a features array"))?;
        let features = feats
            .iter()
            .enumerate()
            .map(|(i, f)| parse_feature(f, i + 1))
            .collect::<Result<Vec<_>>>()?;
        let foreign = obj
            .iter()
            .filter(|(k, _)| k.as_str() != "type" && k.as_str() != "features")
            .map(|(k, v)| (k.clone(), v.clone()))
            .collect();
        Ok(FeatureCollection { features, foreign })
    }
}

fn record_err(row: usize, msg: impl Into<String>) -> Error {
    Error::Record {
        row,
        msg: msg.into(),
    }
}

fn parse_feature(v: &Value, row: usize) -> Result<Feature> {
    let geom = v
        .get("geometry")
        .ok_or_else(|| record_err(row, "feature without geometry"))?;
    let geometry = parse_geometry(geom, row)?;
    let properties = match v.get("properties") {
        Some(Value::Object(m)) => m.clone(),
        Some(Value::Null) | None => Map::new(),
        Some(_) => return Err(record_err(row, "properties is not an object")),
    };
    Ok(Feature {
        geometry,
        properties,
    })
}

fn parse_pos(v: &Value, row: usize) -> Result<Point> {
    let arr = v
        .as_array()
        .filter(|a| a.len() >= 2)
        .ok_or_else(|| record_err(row, "position must be an array of at least two numbers"))?;
    match (arr[0].as_f64(), arr[1].as_f64()) {
        (Some(x), Some(y)) if x.is_finite() && y.is_finite() => Ok(Point::new(x, y)),
        _ => Err(record_err(row, "non-numeric coordinate")),
    }
}

fn parse_line(v: &Value, row: usize) -> Result<Vec<Point>> {
    v.as_array()
        .ok_or_else(|| record_err(row, "expected an array of positions"))?
        .iter()
        .map(|p| parse_pos(p, row))
        .collect()
}

fn parse_rings(v: &Value, row: usize) -> Result<Vec<Vec<Point>>> {
    v.as_array()
        .ok_or_else(|| record_err(row, "expected an array of rings"))?
        .iter()
        .map(|r| parse_line(r, row))
        .collect()
}

fn parse_geometry(v: &Value, row: usize) -> Result<Geometry> {
    let kind = v.get("type").and_then(Value::as_str).unwrap_or("");
    let coords = v
        .get("coordinates")
        .ok_or_else(|| record_err(row, "geometry without coordinates"))?;
    Ok(match kind {
        "Point" => Geometry::Point(parse_pos(coords, row)?),
        "LineString" => Geometry::LineString(parse_line(coords, row)?),
        "Polygon" => Geometry::Polygon(parse_rings(coords, row)?),
        "MultiPolygon" => Geometry::MultiPolygon(
            coords
                .as_array()
                .ok_or_else(|| record_err(row, "expected an array of polygons"))?
                .iter()
                .map(|p| parse_rings(p, row))
                .collect::<Result<_>>()?,
        ),
        other => return Err(record_err(row, format!("unsupported geometry type {other:?}"))),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_with_foreign_members() {
        let mut fc = FeatureCollection::new(vec![
            Feature::new(Geometry::Point(Point::new(1.5, -2.25))).with("score", 7),
            Feature::new(Geometry::LineString(vec![Point::new(0.0, 0.0), Point::new(1.0, 1.0)]))
                .with("id", 3)
                .with("downstream_id", Value::Null),
        ]);
        fc.foreign.insert("parameters".into(), json!({"seed": 1}));
        let back = FeatureCollection::parse(&fc.to_string()).unwrap();
        assert_eq!(back, fc);
    }

    #[test]
    fn bad_geometry_names_feature() {
        let text = r#"{"type":"FeatureCollection","features":[
            {"type":"Feature","geometry":{"type":"Point","coordinates":[1,2]},"properties":{}},
            {"type":"Feature","geometry":{"type":"Point","coordinates":["a",2]},"properties":{}}]}"#;
        match FeatureCollection::parse(text) {
            Err(Error::Record { row, .. }) => assert_eq!(row, 2),
            other => panic!("unexpected {other:?}"),
        }
    }
}
