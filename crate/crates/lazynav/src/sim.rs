//! Closed-loop teach-and-repeat simulator.
//!
//! The world is planar. Teach drives the nominal path exactly and logs a
//! noisy VO edge, a landmark set and raw GNSS fixes per keyframe. Repeat
//! drives a unicycle with the path-tracking controller fed by the
//! localizer's estimate, and logs truth against estimate per keyframe.

use std::f64::consts::TAU;

use lazynav_core::geometry::{se3_exp, Mat6, Transform, Twist6, Vec3, Vec6};
use lazynav_core::gnss_local::UtmPoint;
use lazynav_core::mapgraph::{TeachGraph, VertexId};
use lazynav_core::metrics::{LogRow, RepeatLog};
use lazynav_core::repeat::{tracking_error, LandmarkObservation, Localization, Localizer};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::path::Polyline;
use crate::replay::{FixFrame, Phase, ReplayRecord};
use crate::scenario::Scenario;
use crate::Error;

const TEACH_STREAM: u64 = 0x7EAC_0000_0000_0001;
const REPEAT_STREAM: u64 = 0x5E9E_A700_0000_0002;
/// Controller/integration steps per GNSS period.
const STEPS_PER_FIX: u64 = 4;
const OFF_PLANE_VARIANCE: f64 = 1e-10;
const MIN_EDGE_VARIANCE: f64 = 1e-12;
/// Projection search radius around the previous progress, m.
const PROJECT_RADIUS: f64 = 3.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VehicleState {
    pub x: f64,
    pub y: f64,
    /// Wrapped to (−π, π].
    pub theta: f64,
    /// Progress along the nominal path, m.
    pub s: f64,
}

impl VehicleState {
    fn transform(&self) -> Transform {
        Transform::from_planar_pose(self.x, self.y, self.theta)
    }

    /// Exact unicycle motion over `dt` at constant `(v, ω)`.
    pub fn advance(&mut self, v: f64, omega: f64, dt: f64) {
        let th = self.theta;
        // Chord along the mid-step heading; avoids cancelling v/ω terms when ω is tiny.
        let half = 0.5 * omega * dt;
        let sinc = if half.abs() < 1e-4 { 1.0 - half * half / 6.0 } else { half.sin() / half };
        let chord = v * dt * sinc;
        self.x += chord * (th + half).cos();
        self.y += chord * (th + half).sin();
        self.theta = lazynav_core::geometry::wrap_angle(th + omega * dt);
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ControllerGains {
    /// 1/m.
    pub k_lat: f64,
    pub k_head: f64,
}

/// `ω = clamp(−k_lat·e_lat − k_head·e_head, ±max_rate)`.
pub fn step_controller(est_lateral: f64, est_heading: f64, gains: ControllerGains, max_rate: f64) -> f64 {
    (-gains.k_lat * est_lateral - gains.k_head * est_heading).clamp(-max_rate, max_rate)
}

fn true_transform(poly: &Polyline, s: f64) -> Transform {
    let (x, y, h) = poly.pose_at(s);
    Transform::from_planar_pose(x, y, h)
}

/// Planar tangent-space noise `(x, y, yaw)` applied on the right.
fn perturb(rng: &mut ChaCha8Rng, t: Transform, sigma_t: f64, sigma_r: f64) -> Transform {
    let nx: f64 = rng.sample(StandardNormal);
    let ny: f64 = rng.sample(StandardNormal);
    let nr: f64 = rng.sample(StandardNormal);
    let xi = Twist6(Vec6::new(sigma_t * nx, sigma_t * ny, 0.0, 0.0, 0.0, sigma_r * nr));
    t * se3_exp(&xi)
}

/// One GNSS fix at world position `(x, y)`. Always consumes the same number
/// of draws so that bias and frame changes leave the noise stream intact.
fn gnss_fix(sc: &Scenario, rng: &mut ChaCha8Rng, t: f64, x: f64, y: f64) -> UtmPoint {
    let nx: f64 = rng.sample(StandardNormal);
    let ny: f64 = rng.sample(StandardNormal);
    let u: f64 = rng.random();
    let mag: f64 = rng.random_range(1.0..5.0);
    let dir: f64 = rng.random_range(0.0..TAU);
    let (ox, oy) = if u < sc.gnss_outlier_rate { (mag * dir.cos(), mag * dir.sin()) } else { (0.0, 0.0) };
    let wx = x + sc.gnss_bias[0] + sc.gnss_sigma * nx + ox;
    let wy = y + sc.gnss_bias[1] + sc.gnss_sigma * ny + oy;
    let (e, n) = sc.gnss_frame.apply(wx, wy);
    UtmPoint::new(t, e, n)
}

fn edge_covariance(sc: &Scenario, len: f64) -> Mat6 {
    let st = (sc.vo_sigma_trans * len).powi(2).max(MIN_EDGE_VARIANCE);
    let sr = (sc.vo_sigma_rot * len).powi(2).max(MIN_EDGE_VARIANCE);
    let w = OFF_PLANE_VARIANCE;
    Mat6::from_diagonal(&Vec6::new(st, st, w, w, w, sr))
}

/// True teach keyframe poses, one per vertex.
pub fn teach_poses(sc: &Scenario) -> Vec<Transform> {
    let poly = sc.polyline();
    poly.keyframe_arcs(sc.keyframe_spacing).into_iter().map(|s| true_transform(&poly, s)).collect()
}

pub fn run_teach(sc: &Scenario) -> Result<TeachGraph, Error> {
    sc.validate()?;
    let poly = sc.polyline();
    let arcs = poly.keyframe_arcs(sc.keyframe_spacing);
    let mut rng = ChaCha8Rng::seed_from_u64(sc.seed ^ TEACH_STREAM);
    let fix_dt = 1.0 / sc.gnss_rate;
    let mut graph = TeachGraph::new();
    let mut next_fix = 0u64;
    let mut prev: Option<Transform> = None;
    for &s in &arcs {
        let t_k = s / sc.speed;
        let mut fixes = Vec::new();
        loop {
            let t = next_fix as f64 * fix_dt;
            if t > t_k {
                break;
            }
            let s_fix = t * sc.speed;
            if sc.gnss_available(s_fix) {
                let (x, y) = poly.point_at(s_fix);
                fixes.push(gnss_fix(sc, &mut rng, t, x, y));
            }
            next_fix += 1;
        }
        let pose = true_transform(&poly, s);
        let (delta, cov) = match prev {
            Some(p) => {
                let truth = p.inverse() * pose;
                let len = truth.translation.norm();
                let cov = edge_covariance(sc, len);
                (perturb(&mut rng, truth, sc.vo_sigma_trans * len, sc.vo_sigma_rot * len), cov)
            }
            None => (Transform::identity(), Mat6::identity()),
        };
        let landmarks = (0..sc.landmarks_per_keyframe)
            .map(|_| Vec3::new(rng.random_range(2.0..12.0), rng.random_range(-4.0..4.0), rng.random_range(-0.5..2.0)))
            .collect();
        graph.add_vertex(delta, cov, t_k, fixes, landmarks).map_err(|e| Error::Sim(e.to_string()))?;
        prev = Some(pose);
    }
    Ok(graph)
}

/// Everything one repeat run produces.
#[derive(Debug, Clone)]
pub struct RepeatRun {
    pub log: RepeatLog,
    /// Localizer output per keyframe, aligned with `log.rows`.
    pub localizations: Vec<Localization>,
    /// VO deltas and GNSS fixes as the localizer received them.
    pub trace: Vec<ReplayRecord>,
    /// Reached the end of the path without a safety stop.
    pub completed: bool,
}

/// Initial localization covariance at the start vertex.
pub fn initial_covariance() -> Mat6 {
    Mat6::identity() * 1e-6
}

/// Repeat with the scenario's own seed.
pub fn run_repeat(sc: &Scenario, graph: &TeachGraph) -> RepeatRun {
    run_repeat_seeded(sc, graph, sc.seed)
}

pub fn run_repeat_seeded(sc: &Scenario, graph: &TeachGraph, seed: u64) -> RepeatRun {
    let poly = sc.polyline();
    let path_len = poly.length();
    let truth = teach_poses(sc);
    assert_eq!(truth.len(), graph.len(), "graph does not match scenario");
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ REPEAT_STREAM);
    let dt = 1.0 / (STEPS_PER_FIX as f64 * sc.gnss_rate);
    let v = sc.speed;
    let gains = ControllerGains { k_lat: sc.controller.k_lat, k_head: sc.controller.k_head };
    let max_rate = sc.controller.max_rate;
    let last = graph.len() - 1;
    let max_steps = (3.0 * path_len / (v * dt)).ceil() as u64 + 1000;

    let (x0, y0, th0) = poly.pose_at(0.0);
    let mut state = VehicleState { x: x0, y: y0, theta: th0, s: 0.0 };
    let mut loc = Localizer::new(
        graph,
        sc.localizer_config(),
        VertexId::teach(0),
        Transform::identity(),
        initial_covariance(),
        0.0,
    );

    let mut rows = Vec::new();
    let mut localizations = Vec::new();
    let mut trace = Vec::new();
    let mut pending_fixes: Vec<UtmPoint> = Vec::new();
    let mut acc = Transform::identity();
    let mut odo = 0.0;
    let mut completed = false;

    if sc.gnss_available(0.0) {
        let p = gnss_fix(sc, &mut rng, 0.0, state.x, state.y);
        loc.push_fix(p);
        pending_fixes.push(p);
    }
    let mut keyframe = |loc: &mut Localizer,
                        state: &VehicleState,
                        t: f64,
                        delta: Transform,
                        first: bool,
                        rng: &mut ChaCha8Rng,
                        pending: &mut Vec<UtmPoint>| {
        if !first {
            loc.predict(&delta, t);
        }
        let m = loc.matched().seq;
        let pose = state.transform();
        let obs: Vec<LandmarkObservation> = if sc.vision_available(state.s) {
            let t_qm = pose.inverse() * truth[m];
            graph
                .keyframe(m)
                .expect("matched vertex exists")
                .landmarks
                .iter()
                .map(|p| {
                    let n =
                        Vec3::new(rng.sample(StandardNormal), rng.sample(StandardNormal), rng.sample(StandardNormal));
                    LandmarkObservation { p_map: *p, p_obs: t_qm.apply(p) + sc.landmark_sigma * n }
                })
                .collect()
        } else {
            Vec::new()
        };
        let out = loc.correct(&obs);
        let est = tracking_error(graph, m, &out.t_qm.inverse());
        let pr = poly.project(state.x, state.y, state.s, PROJECT_RADIUS);
        rows.push(LogRow {
            t,
            s: state.s,
            e_lat_true: pr.lateral,
            e_head_true: lazynav_core::geometry::wrap_angle(state.theta - pr.tangent),
            e_lat_est: est.lateral,
            e_head_est: est.heading,
            gnss: out.used_gnss,
            vision: out.used_vision,
            cov_trace: out.cov_trace(),
            stopped: out.stopped,
        });
        trace.push(ReplayRecord {
            phase: Phase::Repeat,
            t,
            vo_delta: delta,
            frame: FixFrame::Utm,
            gnss: std::mem::take(pending),
        });
        let stopped = out.stopped;
        localizations.push(out);
        stopped
    };

    let mut stopped = keyframe(&mut loc, &state, 0.0, Transform::identity(), true, &mut rng, &mut pending_fixes);
    let mut step = 0u64;
    while !stopped {
        step += 1;
        if step > max_steps {
            break;
        }
        let t = step as f64 * dt;

        let t_mq = loc.estimate().inverse() * acc;
        let err = tracking_error(graph, loc.matched().seq, &t_mq);
        let ff = if sc.controller.curvature_feedforward { v * err.curvature } else { 0.0 };
        let omega = (ff + step_controller(err.lateral, err.heading, gains, max_rate)).clamp(-max_rate, max_rate);

        let before = state.transform();
        state.advance(v, omega, dt);
        let step_truth = before.inverse() * state.transform();
        let scale = (v * dt * sc.keyframe_spacing).sqrt();
        let step_meas = perturb(&mut rng, step_truth, sc.vo_sigma_trans * scale, sc.vo_sigma_rot * scale);
        acc = acc * step_meas;
        odo += step_meas.translation.norm();
        state.s = poly.project(state.x, state.y, state.s, PROJECT_RADIUS).s;

        if step % STEPS_PER_FIX == 0 && sc.gnss_available(state.s) {
            let p = gnss_fix(sc, &mut rng, t, state.x, state.y);
            loc.push_fix(p);
            pending_fixes.push(p);
        }

        // Round to the nearest step so noisy odometry does not skip a beat.
        if odo + 0.5 * v * dt >= sc.keyframe_spacing {
            stopped = keyframe(&mut loc, &state, t, acc, false, &mut rng, &mut pending_fixes);
            acc = Transform::identity();
            odo = 0.0;
            let ahead = loc.matched().seq == last && loc.estimate().inverse().translation.x >= 0.0;
            if !stopped && (ahead || state.s >= path_len - 1e-9) {
                completed = true;
                break;
            }
        }
    }
    RepeatRun { log: RepeatLog::new(rows), localizations, trace, completed }
}

/// Teach-phase replay records straight from a graph.
pub fn teach_trace(graph: &TeachGraph) -> Vec<ReplayRecord> {
    graph
        .keyframes()
        .iter()
        .enumerate()
        .map(|(i, k)| ReplayRecord {
            phase: Phase::Teach,
            t: k.timestamp,
            vo_delta: if i == 0 { Transform::identity() } else { graph.edges()[i - 1].transform },
            frame: FixFrame::Utm,
            gnss: k.gnss.clone(),
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario::straight;

    #[test]
    fn controller_examples() {
        let g = ControllerGains { k_lat: 1.0, k_head: 1.5 };
        assert_eq!(step_controller(0.0, 0.0, g, 0.8), 0.0);
        assert!(step_controller(0.1, 0.0, g, 0.8) < 0.0);
        assert_eq!(step_controller(5.0, 0.0, g, 0.8), -0.8);
        assert_eq!(step_controller(-5.0, 0.0, g, 0.8), 0.8);
    }

    #[test]
    fn unicycle_arc_is_exact() {
        let mut s = VehicleState { x: 0.0, y: 0.0, theta: 0.0, s: 0.0 };
        for _ in 0..100 {
            s.advance(1.0, 0.1, std::f64::consts::PI / 10.0);
        }
        // Half a turn of radius 10.
        assert!((s.x).abs() < 1e-9 && (s.y - 20.0).abs() < 1e-9);
    }

    #[test]
    fn straight_teach_has_21_vertices() {
        let g = run_teach(&straight(10.0)).unwrap();
        assert_eq!(g.len(), 21);
        assert!((g.arc_length(20) - 10.0).abs() < 1e-9);
    }
}
