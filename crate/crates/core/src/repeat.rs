//! Repeat-time localization against a teach graph, and the path-tracking
//! error handed to the controller.
//!
//! Each live keyframe is processed in two phases: [`Localizer::predict`]
//! propagates the previous estimate through the VO delta and picks the map
//! vertex, then [`Localizer::correct`] builds whatever factors are available
//! and solves. With no factors the prediction stands.

use alloc::vec::Vec;

#[cfg(not(feature = "std"))]
use num_traits::Float;

use crate::fusion::{solve, LocalizationFactor, LocalizationResult, RobustKernel, SolverConfig};
use crate::geometry::{se3_log, wrap_angle, Mat3, Mat6, Transform, Vec3, Vec6};
use crate::gnss_local::{gnss_factor, GnssConfig, GnssError, GnssErrorEstimate, UtmPoint};
use crate::mapgraph::{TeachGraph, VertexId};

/// Variance on the unobserved z/roll/pitch directions of the VO noise.
const OFF_PLANE_VARIANCE: f64 = 1e-10;
const ODO_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LocalizerConfig {
    pub gnss: GnssConfig,
    pub kernel: RobustKernel,
    /// Apply the robust kernel to landmark factors too.
    pub robust_landmarks: bool,
    pub solver: SolverConfig,
    /// Assumed landmark observation noise (m, isotropic).
    pub landmark_sigma: f64,
    /// Assumed VO noise, m per m travelled.
    pub vo_sigma_trans: f64,
    /// Assumed VO noise, rad per m travelled.
    pub vo_sigma_rot: f64,
    /// Stop when `sqrt(Σxx + Σyy)` exceeds this, m.
    pub stop_threshold: f64,
    /// Base of the per-keyframe RANSAC seeds.
    pub seed: u64,
}

impl Default for LocalizerConfig {
    fn default() -> Self {
        Self {
            gnss: GnssConfig::default(),
            kernel: RobustKernel::default(),
            robust_landmarks: true,
            solver: SolverConfig::default(),
            landmark_sigma: 0.02,
            vo_sigma_trans: 0.01,
            vo_sigma_rot: 0.002,
            stop_threshold: 1.0,
            seed: 0,
        }
    }
}

/// A map landmark (in the matched vertex frame) and where the live keyframe
/// sees it (in its own frame).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LandmarkObservation {
    pub p_map: Vec3,
    pub p_obs: Vec3,
}

/// Outcome of one live keyframe.
#[derive(Debug, Clone, PartialEq)]
pub struct Localization {
    pub index: usize,
    pub t: f64,
    pub matched: VertexId,
    pub t_qm: Transform,
    pub covariance: Mat6,
    pub used_gnss: bool,
    pub used_vision: bool,
    pub stopped: bool,
    /// GNSS measurement, when the windows admitted one.
    pub gnss: Option<GnssErrorEstimate>,
    pub gnss_error: Option<GnssError>,
    /// Solver output, when at least one factor existed.
    pub solve: Option<LocalizationResult>,
}

impl Localization {
    /// Planar position variance `Σxx + Σyy`.
    pub fn cov_trace(&self) -> f64 {
        self.covariance[(0, 0)] + self.covariance[(1, 1)]
    }

    /// `‖log(T̂_gnss · T⁻¹)‖` at the final estimate.
    pub fn gnss_residual_norm(&self) -> Option<f64> {
        let est = self.gnss.as_ref()?;
        se3_log(&(est.t_qm * self.t_qm.inverse())).ok().map(|e| e.norm())
    }
}

pub struct Localizer<'g> {
    graph: &'g TeachGraph,
    cfg: LocalizerConfig,
    t_qm: Transform,
    covariance: Mat6,
    matched: VertexId,
    t_now: f64,
    index: usize,
    odometer: f64,
    /// `(time, odometer)` of recent live keyframes, oldest first.
    history: Vec<(f64, f64)>,
    fixes: Vec<UtmPoint>,
    stopped: bool,
}

impl<'g> Localizer<'g> {
    /// Starts at `start` with the live frame at `t_qm` relative to it.
    pub fn new(
        graph: &'g TeachGraph,
        cfg: LocalizerConfig,
        start: VertexId,
        t_qm: Transform,
        covariance: Mat6,
        t0: f64,
    ) -> Self {
        assert!(!graph.is_empty(), "teach graph is empty");
        Self {
            graph,
            cfg,
            t_qm,
            covariance,
            matched: start,
            t_now: t0,
            index: 0,
            odometer: 0.0,
            history: alloc::vec![(t0, 0.0)],
            fixes: Vec::new(),
            stopped: false,
        }
    }

    pub fn config(&self) -> &LocalizerConfig {
        &self.cfg
    }

    pub fn graph(&self) -> &'g TeachGraph {
        self.graph
    }

    pub fn estimate(&self) -> &Transform {
        &self.t_qm
    }

    pub fn covariance(&self) -> &Mat6 {
        &self.covariance
    }

    pub fn matched(&self) -> VertexId {
        self.matched
    }

    pub fn stopped(&self) -> bool {
        self.stopped
    }

    /// Logs a live GNSS fix. Fixes must arrive in time order.
    pub fn push_fix(&mut self, p: UtmPoint) {
        debug_assert!(self.fixes.last().map_or(true, |l| l.t < p.t), "fixes out of order");
        self.fixes.push(p);
    }

    /// Propagates through `vo_delta` (`T_{q_prev,q_new}`), matches a vertex
    /// and returns it.
    pub fn predict(&mut self, vo_delta: &Transform, t: f64) -> VertexId {
        let prior_in_last = self.t_qm.inverse() * *vo_delta;
        let m_new = self.graph.match_vertex(&prior_in_last, self.matched);
        let t_mq = self.graph.relative_pose(m_new.seq, self.matched.seq) * prior_in_last;
        self.t_qm = t_mq.inverse();

        let ad = vo_delta.inverse().adjoint();
        self.covariance = ad * self.covariance * ad.transpose() + self.process_noise(vo_delta.translation.norm());
        self.matched = m_new;

        self.odometer += vo_delta.translation.norm();
        self.history.push((t, self.odometer));
        self.t_now = t;
        self.index += 1;
        m_new
    }

    fn process_noise(&self, len: f64) -> Mat6 {
        let st = (self.cfg.vo_sigma_trans * len).powi(2);
        let sr = (self.cfg.vo_sigma_rot * len).powi(2);
        let w = OFF_PLANE_VARIANCE;
        Mat6::from_diagonal(&Vec6::new(st, st, w, w, w, sr))
    }

    /// Live fixes since the keyframe one full window length back.
    fn live_window(&mut self) -> Vec<UtmPoint> {
        let reach = 2.0 * self.cfg.gnss.window.half_width;
        let cutoff = self.odometer - reach + ODO_TOL;
        if let Some(k) = self.history.iter().rposition(|&(_, odo)| odo <= cutoff) {
            let t_start = self.history[k].0;
            self.history.drain(..k);
            self.fixes.retain(|p| p.t > t_start);
        }
        self.fixes.iter().copied().filter(|p| p.t <= self.t_now).collect()
    }

    fn keyframe_seed(&self) -> u64 {
        self.cfg.seed ^ (self.index as u64).wrapping_mul(0xD134_2543_DE82_EF95)
    }

    /// Builds and solves this keyframe's factors.
    pub fn correct(&mut self, landmarks: &[LandmarkObservation]) -> Localization {
        let s2 = self.cfg.landmark_sigma * self.cfg.landmark_sigma;
        let mut factors: Vec<LocalizationFactor> = landmarks
            .iter()
            .map(|o| {
                LocalizationFactor::landmark(o.p_map, o.p_obs, Mat3::identity() * s2)
                    .with_robust(self.cfg.robust_landmarks)
            })
            .collect();

        let window = self.live_window();
        let seed = self.keyframe_seed();
        let (gnss, gnss_error) = match gnss_factor(self.graph, self.matched, &window, self.t_now, &self.cfg.gnss, seed)
        {
            Ok(est) => {
                factors.push(LocalizationFactor::gnss(est));
                (Some(est), None)
            }
            Err(e) => (None, Some(e)),
        };

        let mut used = (false, false);
        let solve = if factors.is_empty() {
            None
        } else {
            factors.push(LocalizationFactor::prior(self.t_qm, self.covariance));
            let r = solve(&factors, &self.t_qm, &self.cfg.kernel, &self.cfg.solver).ok();
            if let Some(r) = r.as_ref().filter(|r| r.converged) {
                self.t_qm = r.t_qm;
                self.covariance = r.covariance;
                used = (r.used_gnss, r.used_vision);
            }
            r
        };

        let planar = (self.covariance[(0, 0)] + self.covariance[(1, 1)]).max(0.0).sqrt();
        if !(planar <= self.cfg.stop_threshold) {
            self.stopped = true;
        }
        Localization {
            index: self.index,
            t: self.t_now,
            matched: self.matched,
            t_qm: self.t_qm,
            covariance: self.covariance,
            used_gnss: used.0,
            used_vision: used.1,
            stopped: self.stopped,
            gnss,
            gnss_error,
            solve,
        }
    }
}

/// Signed deviation from the taught path, measured in the frame of the
/// nearest teach vertex.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrackingError {
    /// Positive when the vehicle is left of the path, m.
    pub lateral: f64,
    /// Vehicle yaw minus path tangent, rad.
    pub heading: f64,
    /// Signed path curvature, positive turning left, 1/m.
    pub curvature: f64,
    pub vertex: usize,
}

/// Below this the reference is treated as a straight line.
const MIN_CURVATURE: f64 = 1e-6;

/// Tracking error of a vehicle at `t_mq` (its pose in vertex `near`'s
/// frame). The reference is the circle through the nearest vertex and its
/// two neighbours, or a line when they are collinear.
pub fn tracking_error(graph: &TeachGraph, near: usize, t_mq: &Transform) -> TrackingError {
    let n = graph.len();
    assert!(near < n, "vertex out of range");
    let lo = near.saturating_sub(1);
    let hi = (near + 2).min(n - 1);
    let pos = t_mq.translation;
    let j = (lo..=hi)
        .map(|j| (j, (graph.relative_pose(near, j).translation - pos).norm()))
        .fold((near, f64::INFINITY), |best, c| if c.1 < best.1 { c } else { best })
        .0;

    let t_jq = graph.relative_pose(j, near) * *t_mq;
    let p = [t_jq.translation.x, t_jq.translation.y];
    let yaw = t_jq.yaw();
    if n < 2 {
        return TrackingError { lateral: p[1], heading: wrap_angle(yaw), curvature: 0.0, vertex: j };
    }
    let (a, c) = if n == 2 {
        (0, 1)
    } else {
        let a = j.saturating_sub(1).min(n - 3);
        (a, a + 2)
    };
    let pt = |i: usize| {
        let t = graph.relative_pose(j, i).translation;
        [t.x, t.y]
    };
    let (p0, p2) = (pt(a), pt(c));
    let p1 = if n == 2 { p0 } else { pt(a + 1) };

    let kappa = menger_curvature(p0, p1, p2);
    if kappa.abs() < MIN_CURVATURE {
        let d = [p2[0] - p0[0], p2[1] - p0[1]];
        let len = (d[0] * d[0] + d[1] * d[1]).sqrt();
        let lateral = (d[0] * (p[1] - p0[1]) - d[1] * (p[0] - p0[0])) / len;
        let heading = wrap_angle(yaw - d[1].atan2(d[0]));
        return TrackingError { lateral, heading, curvature: 0.0, vertex: j };
    }
    let center = circumcenter(p0, p1, p2);
    let r = 1.0 / kappa.abs();
    let v = [p[0] - center[0], p[1] - center[1]];
    let dist = (v[0] * v[0] + v[1] * v[1]).sqrt();
    let sign = kappa.signum();
    let lateral = sign * (r - dist);
    let tangent = [-sign * v[1], sign * v[0]];
    let heading = wrap_angle(yaw - tangent[1].atan2(tangent[0]));
    TrackingError { lateral, heading, curvature: kappa, vertex: j }
}

/// Signed curvature of the circle through three points, positive when
/// `p0 → p1 → p2` turns left.
fn menger_curvature(p0: [f64; 2], p1: [f64; 2], p2: [f64; 2]) -> f64 {
    let a = [p1[0] - p0[0], p1[1] - p0[1]];
    let b = [p2[0] - p1[0], p2[1] - p1[1]];
    let c = [p2[0] - p0[0], p2[1] - p0[1]];
    let cross = a[0] * b[1] - a[1] * b[0];
    let norms = (a[0].hypot(a[1])) * (b[0].hypot(b[1])) * (c[0].hypot(c[1]));
    if norms == 0.0 {
        0.0
    } else {
        2.0 * cross / norms
    }
}

fn circumcenter(p0: [f64; 2], p1: [f64; 2], p2: [f64; 2]) -> [f64; 2] {
    // Relative to p0 for conditioning.
    let (bx, by) = (p1[0] - p0[0], p1[1] - p0[1]);
    let (cx, cy) = (p2[0] - p0[0], p2[1] - p0[1]);
    let d = 2.0 * (bx * cy - by * cx);
    let b2 = bx * bx + by * by;
    let c2 = cx * cx + cy * cy;
    [p0[0] + (cy * b2 - by * c2) / d, p0[1] + (bx * c2 - cx * b2) / d]
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Mat6;

    fn straight(n: usize, step: f64) -> TeachGraph {
        let mut g = TeachGraph::new();
        for i in 0..n {
            let d = Transform::from_translation(Vec3::new(step, 0.0, 0.0));
            g.add_vertex(d, Mat6::identity() * 1e-4, i as f64 * step, Vec::new(), Vec::new()).unwrap();
        }
        g
    }

    fn arc(n: usize, radius: f64, step: f64) -> TeachGraph {
        let dtheta = step / radius;
        let chord = 2.0 * radius * (dtheta / 2.0).sin();
        let mut g = TeachGraph::new();
        for i in 0..n {
            let d = Transform::from_planar_pose(chord * (dtheta / 2.0).cos(), chord * (dtheta / 2.0).sin(), dtheta);
            g.add_vertex(d, Mat6::identity() * 1e-4, i as f64, Vec::new(), Vec::new()).unwrap();
        }
        g
    }

    #[test]
    fn lateral_sign_on_straight() {
        let g = straight(10, 0.5);
        let e = tracking_error(&g, 4, &Transform::from_planar_pose(0.1, 0.2, 0.05));
        assert!((e.lateral - 0.2).abs() < 1e-12);
        assert!((e.heading - 0.05).abs() < 1e-12);
        assert_eq!(e.curvature, 0.0);
        let e = tracking_error(&g, 4, &Transform::from_planar_pose(0.0, -0.3, 0.0));
        assert!((e.lateral + 0.3).abs() < 1e-12);
    }

    #[test]
    fn on_arc_is_zero_error() {
        let g = arc(40, 10.0, 0.5);
        let e = tracking_error(&g, 20, &Transform::identity());
        assert!(e.lateral.abs() < 1e-12 && e.heading.abs() < 1e-12);
        assert!((e.curvature - 0.1).abs() < 1e-9);
        // Inside the turn is left of the path.
        let e = tracking_error(&g, 20, &Transform::from_planar_pose(0.0, 0.1, 0.0));
        assert!((e.lateral - 0.1).abs() < 1e-3);
    }

    #[test]
    fn right_turn_curvature_negative() {
        let mut g = TeachGraph::new();
        for i in 0..10 {
            g.add_vertex(
                Transform::from_planar_pose(0.5, 0.0, -0.05),
                Mat6::identity() * 1e-4,
                i as f64,
                Vec::new(),
                Vec::new(),
            )
            .unwrap();
        }
        let e = tracking_error(&g, 5, &Transform::from_planar_pose(0.0, 0.1, 0.0));
        assert!(e.curvature < 0.0);
        assert!(e.lateral > 0.09);
    }

    #[test]
    fn predict_moves_match_forward() {
        let g = straight(20, 0.5);
        let mut loc = Localizer::new(
            &g,
            LocalizerConfig::default(),
            VertexId::teach(0),
            Transform::identity(),
            Mat6::identity() * 1e-6,
            0.0,
        );
        let d = Transform::from_translation(Vec3::new(0.5, 0.0, 0.0));
        for k in 1..=4 {
            let m = loc.predict(&d, k as f64 * 0.5);
            assert_eq!(m, VertexId::teach(k));
            let out = loc.correct(&[]);
            assert!(!out.used_gnss && !out.used_vision && out.solve.is_none());
            assert!((out.t_qm.translation.norm()) < 1e-12);
        }
        assert!(loc.covariance()[(1, 1)] > 1e-6);
    }

    #[test]
    fn stops_when_uncertain() {
        let g = straight(200, 0.5);
        let cfg = LocalizerConfig { stop_threshold: 0.01, ..LocalizerConfig::default() };
        let mut loc = Localizer::new(&g, cfg, VertexId::teach(0), Transform::identity(), Mat6::identity() * 1e-8, 0.0);
        let d = Transform::from_translation(Vec3::new(0.5, 0.0, 0.0));
        let mut stopped_at = None;
        for k in 1..200 {
            loc.predict(&d, k as f64);
            if loc.correct(&[]).stopped {
                stopped_at = Some(k);
                break;
            }
        }
        assert!(stopped_at.is_some());
    }

    #[test]
    fn landmarks_pull_estimate_to_truth() {
        let mut g = TeachGraph::new();
        let lms: Vec<Vec3> =
            (0..8).map(|i| Vec3::new(3.0 + i as f64, (i as f64 - 4.0) * 0.7, 0.3 * (i % 3) as f64)).collect();
        for i in 0..10 {
            let d = Transform::from_translation(Vec3::new(0.5, 0.0, 0.0));
            g.add_vertex(d, Mat6::identity() * 1e-4, i as f64, Vec::new(), lms.clone()).unwrap();
        }
        let mut loc = Localizer::new(
            &g,
            LocalizerConfig::default(),
            VertexId::teach(0),
            Transform::identity(),
            Mat6::identity() * 1e-2,
            0.0,
        );
        // The live frame is really 0.1 m left of vertex 1; VO says it is on it.
        let m = loc.predict(&Transform::from_translation(Vec3::new(0.5, 0.0, 0.0)), 1.0);
        let truth_qm = Transform::from_planar_pose(0.0, 0.1, 0.0).inverse();
        let obs: Vec<LandmarkObservation> = g
            .keyframe(m.seq)
            .unwrap()
            .landmarks
            .iter()
            .map(|p| LandmarkObservation { p_map: *p, p_obs: truth_qm.apply(p) })
            .collect();
        let out = loc.correct(&obs);
        assert!(out.used_vision && !out.used_gnss);
        // The VO prior still holds a little weight, so the pull is not complete.
        assert!((out.t_qm.translation - truth_qm.translation).norm() < 0.01);
        assert!(out.cov_trace() < 1e-3);
    }
}
