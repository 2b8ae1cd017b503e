//! Relative teach graph with lazily attached GNSS observations.
//!
//! Vertices are keyframes. A privileged edge `k-1 → k` stores `T_{k-1,k}`,
//! the pose of keyframe `k` expressed in keyframe `k-1`. GNSS fixes are kept
//! exactly as logged; nothing reconciles them with the VO poses.

use alloc::vec::Vec;

use crate::geometry::{Mat6, Transform, Vec3};
use crate::gnss_local::UtmPoint;

pub const TEACH_RUN: u32 = 0;

/// Search half-width, in vertices, of [`TeachGraph::match_vertex`].
pub const MATCH_WINDOW: usize = 5;

const TIE_TOL: f64 = 1e-12;
const ARC_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct VertexId {
    pub run: u32,
    pub seq: usize,
}

impl VertexId {
    pub const fn teach(seq: usize) -> Self {
        Self { run: TEACH_RUN, seq }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EdgeKind {
    /// Teach-run VO.
    Privileged,
    /// Repeat-run VO.
    Autonomous,
    /// Repeat-to-teach localization.
    Spatial,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Edge {
    pub kind: EdgeKind,
    pub from: VertexId,
    pub to: VertexId,
    pub transform: Transform,
    pub covariance: Mat6,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Keyframe {
    pub id: VertexId,
    pub timestamp: f64,
    pub gnss: Vec<UtmPoint>,
    pub landmarks: Vec<Vec3>,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum GraphError {
    #[error("keyframe timestamp {got} does not follow previous keyframe at {last}")]
    NonMonotonicTimestamp { last: f64, got: f64 },
    #[error("GNSS fix at t={t} lies outside the keyframe interval ({lo}, {hi}]")]
    FixOutsideInterval { t: f64, lo: f64, hi: f64 },
    #[error("edge covariance is not symmetric positive definite")]
    BadCovariance,
    #[error("vertex {0} is not in the graph")]
    UnknownVertex(usize),
    #[error("edge {index} is malformed: {reason}")]
    BadEdge { index: usize, reason: &'static str },
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
}

/// Symmetric within 1e-12 and Cholesky-factorable.
pub fn is_spd(m: &Mat6) -> bool {
    if (m - m.transpose()).abs().max() > 1e-12 {
        return false;
    }
    m.cholesky().is_some()
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TeachGraph {
    keyframes: Vec<Keyframe>,
    edges: Vec<Edge>,
    arc_length: Vec<f64>,
}

impl TeachGraph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.keyframes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.keyframes.is_empty()
    }

    pub fn keyframes(&self) -> &[Keyframe] {
        &self.keyframes
    }

    pub fn keyframe(&self, seq: usize) -> Option<&Keyframe> {
        self.keyframes.get(seq)
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn arc_length(&self, seq: usize) -> f64 {
        self.arc_length[seq]
    }

    pub fn arc_lengths(&self) -> &[f64] {
        &self.arc_length
    }

    pub fn last_id(&self) -> Option<VertexId> {
        self.len().checked_sub(1).map(VertexId::teach)
    }

    /// Appends a keyframe. `vo_delta` is `T_{prev,new}` and is ignored for the
    /// first vertex, which has no incoming edge.
    pub fn add_vertex(
        &mut self,
        vo_delta: Transform,
        vo_cov: Mat6,
        timestamp: f64,
        gnss: Vec<UtmPoint>,
        landmarks: Vec<Vec3>,
    ) -> Result<VertexId, GraphError> {
        if !timestamp.is_finite() {
            return Err(GraphError::NonFinite("timestamp"));
        }
        let prev = self.keyframes.last().map(|k| k.timestamp);
        if let Some(last) = prev {
            if timestamp <= last {
                return Err(GraphError::NonMonotonicTimestamp { last, got: timestamp });
            }
            if !vo_delta.is_finite() {
                return Err(GraphError::NonFinite("vo_delta"));
            }
            if !is_spd(&vo_cov) {
                return Err(GraphError::BadCovariance);
            }
        }
        let lo = prev.unwrap_or(f64::NEG_INFINITY);
        for p in &gnss {
            if !(p.t > lo && p.t <= timestamp) {
                return Err(GraphError::FixOutsideInterval { t: p.t, lo, hi: timestamp });
            }
        }
        if landmarks.iter().any(|l| !l.iter().all(|v| v.is_finite())) {
            return Err(GraphError::NonFinite("landmarks"));
        }

        let seq = self.keyframes.len();
        let id = VertexId::teach(seq);
        let arc = match self.arc_length.last() {
            Some(a) => {
                self.edges.push(Edge {
                    kind: EdgeKind::Privileged,
                    from: VertexId::teach(seq - 1),
                    to: id,
                    transform: vo_delta,
                    covariance: vo_cov,
                });
                a + vo_delta.translation.norm()
            }
            None => 0.0,
        };
        self.arc_length.push(arc);
        self.keyframes.push(Keyframe { id, timestamp, gnss, landmarks });
        Ok(id)
    }

    /// Rebuilds a graph from stored parts, re-checking every invariant.
    pub fn from_parts(keyframes: Vec<Keyframe>, edges: Vec<Edge>) -> Result<Self, GraphError> {
        if !keyframes.is_empty() && edges.len() != keyframes.len() - 1 {
            return Err(GraphError::BadEdge { index: edges.len(), reason: "edge count must be vertex count - 1" });
        }
        let mut g = TeachGraph::new();
        let mut edge_iter = edges.into_iter().enumerate();
        for (i, kf) in keyframes.into_iter().enumerate() {
            if kf.id != VertexId::teach(i) {
                return Err(GraphError::UnknownVertex(kf.id.seq));
            }
            let (delta, cov) = if i == 0 {
                (Transform::identity(), Mat6::identity())
            } else {
                let (index, e) = edge_iter.next().expect("edge count checked");
                if e.kind != EdgeKind::Privileged {
                    return Err(GraphError::BadEdge { index, reason: "teach graph edges must be privileged" });
                }
                if e.from != VertexId::teach(i - 1) || e.to != VertexId::teach(i) {
                    return Err(GraphError::BadEdge { index, reason: "edge must join consecutive teach vertices" });
                }
                (e.transform, e.covariance)
            };
            g.add_vertex(delta, cov, kf.timestamp, kf.gnss, kf.landmarks)?;
        }
        Ok(g)
    }

    /// `T_{from,to}` composed from privileged edges.
    pub fn relative_pose(&self, from: usize, to: usize) -> Transform {
        assert!(from < self.len() && to < self.len(), "vertex out of range");
        if to >= from {
            self.edges[from..to].iter().fold(Transform::identity(), |acc, e| acc * e.transform)
        } else {
            self.relative_pose(to, from).inverse()
        }
    }

    /// Teach GNSS fixes attached to vertices within `±half_width` of arc
    /// length around `center`, in time order. Empty when the map has no GNSS
    /// in that section.
    pub fn recall_window(&self, center: VertexId, half_width: f64) -> Result<Vec<UtmPoint>, GraphError> {
        if center.run != TEACH_RUN || center.seq >= self.len() {
            return Err(GraphError::UnknownVertex(center.seq));
        }
        let s0 = self.arc_length[center.seq];
        let in_window = |i: &usize| (self.arc_length[*i] - s0).abs() <= half_width + ARC_TOL;
        // Arc length is monotone, so the window is a contiguous run of vertices.
        let lo = (0..=center.seq).rev().take_while(|i| in_window(i)).last().unwrap_or(center.seq);
        let hi = (center.seq..self.len()).take_while(|i| in_window(i)).last().unwrap_or(center.seq);
        Ok(self.keyframes[lo..=hi].iter().flat_map(|k| k.gnss.iter().copied()).collect())
    }

    /// Closest teach vertex to `prior_in_last` (the live pose expressed in
    /// `last_match`'s frame), searched within ±[`MATCH_WINDOW`] vertices.
    /// Ties go to the later vertex.
    pub fn match_vertex(&self, prior_in_last: &Transform, last_match: VertexId) -> VertexId {
        let last = last_match.seq.min(self.len().saturating_sub(1));
        let lo = last.saturating_sub(MATCH_WINDOW);
        let hi = (last + MATCH_WINDOW).min(self.len() - 1);
        let target = prior_in_last.translation;
        let mut best = (last, f64::INFINITY);
        for j in lo..=hi {
            let d = (self.relative_pose(last, j).translation - target).norm();
            if d <= best.1 + TIE_TOL {
                best = (j, d.min(best.1));
            }
        }
        VertexId::teach(best.0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fwd(d: f64) -> Transform {
        Transform::from_translation(Vec3::new(d, 0.0, 0.0))
    }

    fn straight_graph(n: usize, spacing: f64, with_gnss: bool) -> TeachGraph {
        let mut g = TeachGraph::new();
        for k in 0..n {
            let t = k as f64;
            let gnss = if with_gnss { vec![UtmPoint::new(t, spacing * k as f64, 0.0)] } else { Vec::new() };
            g.add_vertex(fwd(spacing), Mat6::identity() * 1e-4, t, gnss, Vec::new()).unwrap();
        }
        g
    }

    #[test]
    fn first_vertex_has_zero_arc() {
        let mut g = TeachGraph::new();
        let id = g.add_vertex(fwd(3.0), Mat6::identity(), 0.0, vec![], vec![]).unwrap();
        assert_eq!(id, VertexId::teach(0));
        assert_eq!(g.arc_length(0), 0.0);
        assert!(g.edges().is_empty());
    }

    #[test]
    fn arc_length_accumulates() {
        let g = straight_graph(21, 0.5, false);
        assert_eq!(g.len(), 21);
        assert_eq!(g.edges().len(), 20);
        assert!((g.arc_length(20) - 10.0).abs() < 1e-12);
    }

    #[test]
    fn rejects_non_monotonic_time() {
        let mut g = straight_graph(3, 0.5, false);
        let err = g.add_vertex(fwd(0.5), Mat6::identity(), 2.0, vec![], vec![]).unwrap_err();
        assert!(matches!(err, GraphError::NonMonotonicTimestamp { .. }));
    }

    #[test]
    fn rejects_fix_outside_interval() {
        let mut g = straight_graph(3, 0.5, false);
        let fix = UtmPoint::new(1.5, 0.0, 0.0);
        let err = g.add_vertex(fwd(0.5), Mat6::identity(), 3.0, vec![fix], vec![]).unwrap_err();
        assert!(matches!(err, GraphError::FixOutsideInterval { .. }));
    }

    #[test]
    fn recall_window_three_vertices() {
        let g = straight_graph(11, 0.5, true);
        let w = g.recall_window(VertexId::teach(5), 0.5).unwrap();
        let times: Vec<f64> = w.iter().map(|p| p.t).collect();
        assert_eq!(times, vec![4.0, 5.0, 6.0]);
    }

    #[test]
    fn recall_window_truncates_at_start() {
        let g = straight_graph(11, 0.5, true);
        let w = g.recall_window(VertexId::teach(0), 0.5).unwrap();
        assert_eq!(w.len(), 2);
    }

    #[test]
    fn recall_window_empty_without_gnss() {
        let g = straight_graph(11, 0.5, false);
        assert!(g.recall_window(VertexId::teach(4), 1.0).unwrap().is_empty());
    }

    #[test]
    fn match_exact_vertex() {
        let g = straight_graph(20, 0.5, false);
        let prior = fwd(1.5);
        assert_eq!(g.match_vertex(&prior, VertexId::teach(4)), VertexId::teach(7));
    }

    #[test]
    fn match_midway_prefers_forward() {
        let g = straight_graph(20, 0.5, false);
        assert_eq!(g.match_vertex(&fwd(0.25), VertexId::teach(4)), VertexId::teach(5));
    }

    #[test]
    fn match_clamped_to_window() {
        let g = straight_graph(40, 0.5, false);
        assert_eq!(g.match_vertex(&fwd(5.0), VertexId::teach(4)), VertexId::teach(9));
        assert_eq!(g.match_vertex(&fwd(-50.0), VertexId::teach(3)), VertexId::teach(0));
    }

    #[test]
    fn from_parts_round_trip() {
        let g = straight_graph(6, 0.5, true);
        let rebuilt = TeachGraph::from_parts(g.keyframes().to_vec(), g.edges().to_vec()).unwrap();
        assert_eq!(rebuilt, g);
    }
}
