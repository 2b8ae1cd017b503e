//! Teach graph JSON.
//!
//! Edges carry the top 3×4 of their transform row-major and the 21
//! upper-triangle entries of the covariance, row by row.

use std::path::Path;

use lazynav_core::geometry::{Mat6, Transform, Vec3};
use lazynav_core::gnss_local::UtmPoint;
use lazynav_core::mapgraph::{Edge, EdgeKind, Keyframe, TeachGraph, VertexId};
use serde::{Deserialize, Serialize};

use crate::Error;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IdJson {
    pub run: u32,
    pub seq: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FixJson {
    pub t: f64,
    pub easting: f64,
    pub northing: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VertexJson {
    pub id: IdJson,
    pub time: f64,
    pub arc_length: f64,
    pub gnss: Vec<FixJson>,
    pub landmarks: Vec<[f64; 3]>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EdgeJson {
    pub kind: String,
    pub from: IdJson,
    pub to: IdJson,
    pub transform: Vec<f64>,
    pub covariance: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraphJson {
    pub scenario_hash: String,
    pub vertices: Vec<VertexJson>,
    pub edges: Vec<EdgeJson>,
}

fn id(v: VertexId) -> IdJson {
    IdJson { run: v.run, seq: v.seq }
}

fn kind_name(k: EdgeKind) -> &'static str {
    match k {
        EdgeKind::Privileged => "privileged",
        EdgeKind::Autonomous => "autonomous",
        EdgeKind::Spatial => "spatial",
    }
}

fn upper_triangle(m: &Mat6) -> Vec<f64> {
    (0..6).flat_map(|i| (i..6).map(move |j| (i, j))).map(|(i, j)| m[(i, j)]).collect()
}

fn from_upper_triangle(v: &[f64]) -> Option<Mat6> {
    if v.len() != 21 {
        return None;
    }
    let mut m = Mat6::zeros();
    let mut it = v.iter();
    for i in 0..6 {
        for j in i..6 {
            let x = *it.next()?;
            m[(i, j)] = x;
            m[(j, i)] = x;
        }
    }
    Some(m)
}

pub fn to_json(graph: &TeachGraph, scenario_hash: &str) -> GraphJson {
    let vertices = graph
        .keyframes()
        .iter()
        .map(|k| VertexJson {
            id: id(k.id),
            time: k.timestamp,
            arc_length: graph.arc_length(k.id.seq),
            gnss: k.gnss.iter().map(|p| FixJson { t: p.t, easting: p.easting, northing: p.northing }).collect(),
            landmarks: k.landmarks.iter().map(|l| [l.x, l.y, l.z]).collect(),
        })
        .collect();
    let edges = graph
        .edges()
        .iter()
        .map(|e| EdgeJson {
            kind: kind_name(e.kind).into(),
            from: id(e.from),
            to: id(e.to),
            transform: e.transform.to_row_major().to_vec(),
            covariance: upper_triangle(&e.covariance),
        })
        .collect();
    GraphJson { scenario_hash: scenario_hash.into(), vertices, edges }
}

fn graph_err(reason: impl Into<String>) -> Error {
    Error::Validation { field: "graph".into(), reason: reason.into() }
}

pub fn from_json(doc: &GraphJson) -> Result<TeachGraph, Error> {
    let keyframes = doc
        .vertices
        .iter()
        .map(|v| Keyframe {
            id: VertexId { run: v.id.run, seq: v.id.seq },
            timestamp: v.time,
            gnss: v.gnss.iter().map(|f| UtmPoint::new(f.t, f.easting, f.northing)).collect(),
            landmarks: v.landmarks.iter().map(|l| Vec3::new(l[0], l[1], l[2])).collect(),
        })
        .collect();
    let edges = doc
        .edges
        .iter()
        .enumerate()
        .map(|(i, e)| {
            let kind = match e.kind.as_str() {
                "privileged" => EdgeKind::Privileged,
                "autonomous" => EdgeKind::Autonomous,
                "spatial" => EdgeKind::Spatial,
                other => return Err(graph_err(format!("edge {i}: unknown kind {other:?}"))),
            };
            let m: [f64; 12] = e
                .transform
                .as_slice()
                .try_into()
                .map_err(|_| graph_err(format!("edge {i}: transform needs 12 numbers")))?;
            let transform = Transform::from_row_major(&m).map_err(|err| graph_err(format!("edge {i}: {err}")))?;
            let covariance = from_upper_triangle(&e.covariance)
                .ok_or_else(|| graph_err(format!("edge {i}: covariance needs 21 numbers")))?;
            Ok(Edge {
                kind,
                from: VertexId { run: e.from.run, seq: e.from.seq },
                to: VertexId { run: e.to.run, seq: e.to.seq },
                transform,
                covariance,
            })
        })
        .collect::<Result<Vec<_>, _>>()?;
    TeachGraph::from_parts(keyframes, edges).map_err(|e| graph_err(e.to_string()))
}

pub fn write(path: &Path, graph: &TeachGraph, scenario_hash: &str) -> Result<(), Error> {
    let text = serde_json::to_string(&to_json(graph, scenario_hash)).expect("graph serializes");
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Reads a graph file and returns it with its embedded scenario hash.
pub fn read(path: &Path) -> Result<(TeachGraph, String), Error> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let doc: GraphJson = serde_json::from_str(&text).map_err(|e| graph_err(format!("{}: {e}", path.display())))?;
    Ok((from_json(&doc)?, doc.scenario_hash))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario::straight;
    use crate::sim::run_teach;

    #[test]
    fn json_round_trip_is_exact() {
        let mut sc = straight(5.0);
        sc.vo_sigma_trans = 0.01;
        sc.vo_sigma_rot = 0.002;
        sc.gnss_sigma = 0.02;
        sc.gnss_frame.offset = [623437.1584462079, 4848803.996838923];
        let g = run_teach(&sc).unwrap();
        let text = serde_json::to_string(&to_json(&g, "abc")).unwrap();
        let back = from_json(&serde_json::from_str(&text).unwrap()).unwrap();
        assert_eq!(back.keyframes(), g.keyframes());
        assert_eq!(back.edges(), g.edges());
        assert_eq!(back.arc_lengths(), g.arc_lengths());
    }
}
