//! Planar path-tracking error from local GNSS windows.
//!
//! Each window (teach side and live side) is fit with a constant-velocity
//! line in time. The fits give a position at a chosen time and a heading from
//! the velocity direction. The map-minus-live position difference is rotated
//! into the live frame. A constant bias common to both windows cancels in the
//! difference, so the absolute accuracy of the receiver never matters.

use alloc::vec::Vec;
use core::f64::consts::PI;

#[cfg(not(feature = "std"))]
use num_traits::Float;
use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::geometry::{planar_transform, wrap_angle, Mat6, Rotation3, Transform, Vec3};
use crate::mapgraph::{GraphError, TeachGraph, VertexId};

/// One projected GNSS fix: time in seconds, easting/northing in metres.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UtmPoint {
    pub t: f64,
    pub easting: f64,
    pub northing: f64,
}

impl UtmPoint {
    pub const fn new(t: f64, easting: f64, northing: f64) -> Self {
        Self { t, easting, northing }
    }
}

/// Least-squares constant-velocity fit of one window.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RegressionFit {
    pub t_mean: f64,
    pub x_mean: f64,
    pub y_mean: f64,
    /// Easting rate, m/s.
    pub slope_x: f64,
    /// Northing rate, m/s.
    pub slope_y: f64,
    pub inlier_count: usize,
    pub residual_rms: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WindowConfig {
    /// Map window half-width in teach arc length (m). The live window spans
    /// twice this distance of trailing travel.
    pub half_width: f64,
    pub min_points: usize,
    pub ransac_iters: usize,
    /// Inlier distance for the constant-velocity model (m).
    pub ransac_threshold: f64,
    /// Below this speed (m/s) heading is undefined.
    pub min_speed: f64,
}

impl Default for WindowConfig {
    fn default() -> Self {
        Self { half_width: 0.5, min_points: 5, ransac_iters: 50, ransac_threshold: 0.10, min_speed: 0.05 }
    }
}

/// Diagonal measurement covariance attached to each GNSS estimate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GnssCovariance {
    /// Standard deviation of planar x/y error (m).
    pub sigma_planar: f64,
    /// Standard deviation of yaw error (rad).
    pub sigma_yaw: f64,
    /// Variance on z, roll and pitch. Large: these are not observed.
    pub weak_prior_variance: f64,
}

impl Default for GnssCovariance {
    fn default() -> Self {
        Self { sigma_planar: 0.05, sigma_yaw: 2.0 * PI / 180.0, weak_prior_variance: 1e4 }
    }
}

impl GnssCovariance {
    pub fn matrix(&self) -> Mat6 {
        let p = self.sigma_planar * self.sigma_planar;
        let y = self.sigma_yaw * self.sigma_yaw;
        let w = self.weak_prior_variance;
        Mat6::from_diagonal(&nalgebra::Vector6::new(p, p, w, w, w, y))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct GnssConfig {
    pub window: WindowConfig,
    pub covariance: GnssCovariance,
}

impl WindowConfig {
    pub fn validate(&self) -> Result<(), &'static str> {
        if !(self.half_width > 0.0) {
            return Err("half_width must be positive");
        }
        if self.min_points < 3 {
            return Err("min_points must be at least 3");
        }
        if self.ransac_iters == 0 {
            return Err("ransac_iters must be positive");
        }
        if !(self.ransac_threshold > 0.0) {
            return Err("ransac_threshold must be positive");
        }
        if !(self.min_speed > 0.0) {
            return Err("min_speed must be positive");
        }
        Ok(())
    }
}

/// Estimated `T_qm` with its covariance and the intermediate quantities.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GnssErrorEstimate {
    pub t_qm: Transform,
    pub covariance: Mat6,
    /// Live heading in the GNSS frame.
    pub heading_q: f64,
    /// Map heading in the GNSS frame.
    pub heading_m: f64,
    /// Map position relative to the live position, in the live frame.
    pub r_mq_q: Vec3,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum GnssError {
    #[error("window has {got} points, need {need}")]
    TooFewPoints { got: usize, need: usize },
    #[error("largest consensus has {got} points, need {need}")]
    ConsensusTooSmall { got: usize, need: usize },
    #[error("all timestamps in the window coincide")]
    DegenerateTimestamps,
    #[error("speed {speed} m/s is below the heading threshold")]
    HeadingUndefined { speed: f64 },
    #[error("no teach GNSS in the map window")]
    MapWindowEmpty,
    #[error(transparent)]
    Graph(#[from] GraphError),
}

/// Constant-velocity hypothesis through two fixes.
#[derive(Debug, Clone, Copy)]
struct LineModel {
    t0: f64,
    x0: f64,
    y0: f64,
    vx: f64,
    vy: f64,
}

impl LineModel {
    fn through(a: &UtmPoint, b: &UtmPoint) -> Option<Self> {
        let dt = b.t - a.t;
        if dt == 0.0 {
            return None;
        }
        Some(Self {
            t0: a.t,
            x0: a.easting,
            y0: a.northing,
            vx: (b.easting - a.easting) / dt,
            vy: (b.northing - a.northing) / dt,
        })
    }

    fn distance(&self, p: &UtmPoint) -> f64 {
        let dt = p.t - self.t0;
        let ex = (p.easting - self.x0) - self.vx * dt;
        let ey = (p.northing - self.y0) - self.vy * dt;
        ex.hypot(ey)
    }
}

fn score(model: &LineModel, points: &[UtmPoint], threshold: f64) -> (usize, f64) {
    points.iter().fold((0, 0.0), |(n, sum), p| {
        let d = model.distance(p);
        if d <= threshold {
            (n + 1, sum + d * d)
        } else {
            (n, sum)
        }
    })
}

/// Largest consensus set under a planar constant-velocity model.
///
/// Hypotheses are pairs of fixes. When the number of pairs is at most
/// `ransac_iters` every pair is tried; otherwise `ransac_iters` pairs are
/// drawn from a ChaCha stream seeded with `seed`. Residuals are planar
/// distances between each fix and the model position at the fix time. Ties in
/// consensus size go to the smaller residual sum. Output keeps input order.
pub fn ransac_filter(points: &[UtmPoint], cfg: &WindowConfig, seed: u64) -> Result<Vec<UtmPoint>, GnssError> {
    let n = points.len();
    if n < cfg.min_points {
        return Err(GnssError::TooFewPoints { got: n, need: cfg.min_points });
    }
    let mut best: Option<(LineModel, usize, f64)> = None;
    let mut consider = |i: usize, j: usize| {
        if let Some(m) = LineModel::through(&points[i], &points[j]) {
            let (count, sse) = score(&m, points, cfg.ransac_threshold);
            let better = match best {
                None => true,
                Some((_, bc, bs)) => count > bc || (count == bc && sse < bs),
            };
            if better {
                best = Some((m, count, sse));
            }
        }
    };

    let pairs = n * (n - 1) / 2;
    if pairs <= cfg.ransac_iters {
        for i in 0..n {
            for j in i + 1..n {
                consider(i, j);
            }
        }
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for _ in 0..cfg.ransac_iters {
            let i = (rng.next_u64() % n as u64) as usize;
            let mut j = (rng.next_u64() % (n as u64 - 1)) as usize;
            if j >= i {
                j += 1;
            }
            consider(i.min(j), i.max(j));
        }
    }

    let (model, count, _) = best.ok_or(GnssError::DegenerateTimestamps)?;
    if count < cfg.min_points {
        return Err(GnssError::ConsensusTooSmall { got: count, need: cfg.min_points });
    }
    Ok(points.iter().copied().filter(|p| model.distance(p) <= cfg.ransac_threshold).collect())
}

/// Ordinary least squares of easting and northing against `t - t̄`.
pub fn fit_window(points: &[UtmPoint]) -> Result<RegressionFit, GnssError> {
    let n = points.len();
    if n < 2 {
        return Err(GnssError::TooFewPoints { got: n, need: 2 });
    }
    let nf = n as f64;
    // Centre on the first fix before averaging so that UTM-sized magnitudes
    // do not eat into the precision of the sums.
    let p0 = points[0];
    let (st, sx, sy) = points.iter().fold((0.0, 0.0, 0.0), |(a, b, c), p| {
        (a + (p.t - p0.t), b + (p.easting - p0.easting), c + (p.northing - p0.northing))
    });
    let (dt_mean, dx_mean, dy_mean) = (st / nf, sx / nf, sy / nf);
    let (mut stt, mut stx, mut sty) = (0.0, 0.0, 0.0);
    for p in points {
        let dt = (p.t - p0.t) - dt_mean;
        stt += dt * dt;
        stx += dt * ((p.easting - p0.easting) - dx_mean);
        sty += dt * ((p.northing - p0.northing) - dy_mean);
    }
    if !(stt > 0.0) {
        return Err(GnssError::DegenerateTimestamps);
    }
    let slope_x = stx / stt;
    let slope_y = sty / stt;
    let sse: f64 = points
        .iter()
        .map(|p| {
            let dt = (p.t - p0.t) - dt_mean;
            let ex = (p.easting - p0.easting) - dx_mean - slope_x * dt;
            let ey = (p.northing - p0.northing) - dy_mean - slope_y * dt;
            ex * ex + ey * ey
        })
        .sum();
    Ok(RegressionFit {
        t_mean: p0.t + dt_mean,
        x_mean: p0.easting + dx_mean,
        y_mean: p0.northing + dy_mean,
        slope_x,
        slope_y,
        inlier_count: n,
        residual_rms: (sse / nf).sqrt(),
    })
}

/// Position predicted by the fit at time `t`.
pub fn extrapolate(fit: &RegressionFit, t: f64) -> (f64, f64) {
    let dt = t - fit.t_mean;
    (fit.x_mean + fit.slope_x * dt, fit.y_mean + fit.slope_y * dt)
}

/// Direction of travel in `(-π, π]`.
pub fn heading(fit: &RegressionFit, cfg: &WindowConfig) -> Result<f64, GnssError> {
    let speed = fit.slope_x.hypot(fit.slope_y);
    if !(speed >= cfg.min_speed) {
        return Err(GnssError::HeadingUndefined { speed });
    }
    Ok(wrap_angle(fit.slope_y.atan2(fit.slope_x)))
}

/// Path-tracking error from a map fit evaluated at `t_m` and a live fit
/// evaluated at `t_q`.
pub fn planar_error(
    fit_m: &RegressionFit,
    t_m: f64,
    fit_q: &RegressionFit,
    t_q: f64,
    cfg: &GnssConfig,
) -> Result<GnssErrorEstimate, GnssError> {
    let heading_m = heading(fit_m, &cfg.window)?;
    let heading_q = heading(fit_q, &cfg.window)?;
    // Same as differencing the two extrapolations, but the means are
    // subtracted first so UTM-sized positions are never rounded again.
    let (dt_m, dt_q) = (t_m - fit_m.t_mean, t_q - fit_q.t_mean);
    let dx = (fit_m.x_mean - fit_q.x_mean) + (fit_m.slope_x * dt_m - fit_q.slope_x * dt_q);
    let dy = (fit_m.y_mean - fit_q.y_mean) + (fit_m.slope_y * dt_m - fit_q.slope_y * dt_q);
    // Rotates global vectors into the live frame.
    let c_q0 = Rotation3::about_z(heading_q).transpose();
    let r_mq_q = c_q0.matrix() * Vec3::new(dx, dy, 0.0);
    let theta_qm = wrap_angle(heading_q - heading_m);
    Ok(GnssErrorEstimate {
        t_qm: planar_transform(theta_qm, [r_mq_q.x, r_mq_q.y]),
        covariance: cfg.covariance.matrix(),
        heading_q,
        heading_m,
        r_mq_q,
    })
}

/// Seed for the live-window RANSAC; the map window uses a derived stream.
fn map_seed(seed: u64) -> u64 {
    seed ^ 0x9E37_79B9_7F4A_7C15
}

/// Full GNSS measurement for one live keyframe.
///
/// Recalls the map window around `matched`, filters both windows, fits them,
/// and evaluates the map fit at the matched keyframe's own time and the live
/// fit at `t_now`.
pub fn gnss_factor(
    graph: &TeachGraph,
    matched: VertexId,
    live_points: &[UtmPoint],
    t_now: f64,
    cfg: &GnssConfig,
    seed: u64,
) -> Result<GnssErrorEstimate, GnssError> {
    let map_points = graph.recall_window(matched, cfg.window.half_width)?;
    if map_points.is_empty() {
        return Err(GnssError::MapWindowEmpty);
    }
    let map_inliers = ransac_filter(&map_points, &cfg.window, map_seed(seed))?;
    let live_inliers = ransac_filter(live_points, &cfg.window, seed)?;
    let fit_m = fit_window(&map_inliers)?;
    let fit_q = fit_window(&live_inliers)?;
    let t_m = graph.keyframe(matched.seq).ok_or(GraphError::UnknownVertex(matched.seq))?.timestamp;
    planar_error(&fit_m, t_m, &fit_q, t_now, cfg)
}

#[cfg(test)]
mod tests {
    use super::*;
    use core::f64::consts::FRAC_PI_2;

    fn pts(v: &[(f64, f64, f64)]) -> Vec<UtmPoint> {
        v.iter().map(|&(t, x, y)| UtmPoint::new(t, x, y)).collect()
    }

    fn fit_at(x: f64, y: f64, vx: f64, vy: f64) -> RegressionFit {
        RegressionFit {
            t_mean: 0.0,
            x_mean: x,
            y_mean: y,
            slope_x: vx,
            slope_y: vy,
            inlier_count: 5,
            residual_rms: 0.0,
        }
    }

    #[test]
    fn fit_simple_windows() {
        let f = fit_window(&pts(&[(0.0, 0.0, 0.0), (1.0, 1.0, 0.0), (2.0, 2.0, 0.0)])).unwrap();
        assert_eq!((f.t_mean, f.x_mean, f.y_mean, f.slope_x, f.slope_y), (1.0, 1.0, 0.0, 1.0, 0.0));
        let f = fit_window(&pts(&[(0.0, 0.0, 0.0), (1.0, 0.0, 1.0), (2.0, 0.0, 2.0)])).unwrap();
        assert_eq!((f.slope_x, f.slope_y), (0.0, 1.0));
    }

    #[test]
    fn fit_rejects_equal_times() {
        let err = fit_window(&pts(&[(1.0, 0.0, 0.0), (1.0, 1.0, 0.0), (1.0, 2.0, 0.0)])).unwrap_err();
        assert_eq!(err, GnssError::DegenerateTimestamps);
    }

    #[test]
    fn extrapolate_examples() {
        let f = fit_window(&pts(&[(0.0, 0.0, 0.0), (1.0, 1.0, 0.0), (2.0, 2.0, 0.0)])).unwrap();
        assert_eq!(extrapolate(&f, 3.0), (3.0, 0.0));
        assert_eq!(extrapolate(&f, f.t_mean), (f.x_mean, f.y_mean));
    }

    #[test]
    fn heading_examples() {
        let cfg = WindowConfig::default();
        assert_eq!(heading(&fit_at(0.0, 0.0, 1.0, 0.0), &cfg).unwrap(), 0.0);
        assert_eq!(heading(&fit_at(0.0, 0.0, 0.0, 1.0), &cfg).unwrap(), FRAC_PI_2);
        assert!(matches!(heading(&fit_at(0.0, 0.0, 0.01, 0.0), &cfg), Err(GnssError::HeadingUndefined { .. })));
        assert_eq!(heading(&fit_at(0.0, 0.0, -1.0, -0.0), &cfg).unwrap(), PI);
    }

    #[test]
    fn planar_error_examples() {
        let cfg = GnssConfig::default();
        let e = planar_error(&fit_at(10.0, 5.0, 1.0, 0.0), 0.0, &fit_at(9.0, 5.0, 1.0, 0.0), 0.0, &cfg).unwrap();
        assert_eq!(e.r_mq_q, Vec3::new(1.0, 0.0, 0.0));
        assert_eq!(e.t_qm.translation, Vec3::new(1.0, 0.0, 0.0));
        assert_eq!(e.t_qm.rotation.matrix(), &crate::geometry::Mat3::identity());

        let e = planar_error(&fit_at(1.0, 0.0, 0.0, 1.0), 0.0, &fit_at(0.0, 0.0, 0.0, 1.0), 0.0, &cfg).unwrap();
        assert!((e.r_mq_q - Vec3::new(0.0, -1.0, 0.0)).norm() < 1e-15);
        assert_eq!(wrap_angle(e.heading_q - e.heading_m), 0.0);
    }

    #[test]
    fn ransac_keeps_collinear() {
        let p: Vec<_> = (0..10).map(|i| UtmPoint::new(i as f64 * 0.2, 0.2 * i as f64, 0.1 * i as f64)).collect();
        let out = ransac_filter(&p, &WindowConfig::default(), 7).unwrap();
        assert_eq!(out, p);
    }

    #[test]
    fn ransac_drops_offset_point() {
        let mut p: Vec<_> = (0..10).map(|i| UtmPoint::new(i as f64 * 0.2, 0.2 * i as f64, 0.0)).collect();
        p.insert(4, UtmPoint::new(0.7, 0.14 + 5.0, 0.0));
        let out = ransac_filter(&p, &WindowConfig::default(), 7).unwrap();
        assert_eq!(out.len(), 10);
        assert!(out.iter().all(|q| q.easting < 3.0));
    }

    #[test]
    fn ransac_rejects_short_window() {
        let p: Vec<_> = (0..4).map(|i| UtmPoint::new(i as f64, i as f64, 0.0)).collect();
        assert_eq!(
            ransac_filter(&p, &WindowConfig::default(), 0).unwrap_err(),
            GnssError::TooFewPoints { got: 4, need: 5 }
        );
    }

    #[test]
    fn ransac_rejects_scattered_window() {
        // Every pair explains at most two other points.
        let p = pts(&[
            (0.0, 0.0, 0.0),
            (1.0, 3.0, 0.0),
            (2.0, 0.0, 5.0),
            (3.0, -4.0, 1.0),
            (4.0, 7.0, -7.0),
            (5.0, 0.0, 9.0),
        ]);
        assert!(matches!(ransac_filter(&p, &WindowConfig::default(), 0), Err(GnssError::ConsensusTooSmall { .. })));
    }

    #[test]
    fn ransac_sampled_path_is_seeded() {
        let cfg = WindowConfig { ransac_iters: 10, ..WindowConfig::default() };
        let p: Vec<_> = (0..30)
            .map(|i| {
                let off = if i % 7 == 3 { 2.0 } else { 0.0 };
                UtmPoint::new(i as f64 * 0.1, 0.1 * i as f64 + off, 0.0)
            })
            .collect();
        let a = ransac_filter(&p, &cfg, 42).unwrap();
        let b = ransac_filter(&p, &cfg, 42).unwrap();
        assert_eq!(a, b);
        assert!(a.iter().all(|q| (q.easting - q.t).abs() < 1e-9));
    }
}
