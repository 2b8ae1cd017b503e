//! Nominal path as a planar polyline.

use lazynav_core::geometry::wrap_angle;

const CLOSED_TOL: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct Polyline {
    pts: Vec<(f64, f64)>,
    cum: Vec<f64>,
    headings: Vec<f64>,
}

/// Closest point on the path to a query position.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Projection {
    pub s: f64,
    /// Signed distance, positive left of the direction of travel.
    pub lateral: f64,
    pub tangent: f64,
}

impl Polyline {
    /// Drops repeated waypoints. Fails when nothing of positive length
    /// remains.
    pub fn new(points: Vec<(f64, f64)>) -> Result<Self, &'static str> {
        let mut pts: Vec<(f64, f64)> = Vec::with_capacity(points.len());
        for p in points {
            if pts.last().map_or(true, |q| (p.0 - q.0).hypot(p.1 - q.1) > 0.0) {
                pts.push(p);
            }
        }
        if pts.len() < 2 {
            return Err("path has zero length");
        }
        let mut cum = vec![0.0];
        let mut headings = Vec::with_capacity(pts.len() - 1);
        for w in pts.windows(2) {
            let (dx, dy) = (w[1].0 - w[0].0, w[1].1 - w[0].1);
            cum.push(cum.last().unwrap() + dx.hypot(dy));
            headings.push(dy.atan2(dx));
        }
        Ok(Self { pts, cum, headings })
    }

    pub fn length(&self) -> f64 {
        *self.cum.last().unwrap()
    }

    pub fn is_closed(&self) -> bool {
        let (a, b) = (self.pts[0], *self.pts.last().unwrap());
        (a.0 - b.0).hypot(a.1 - b.1) < CLOSED_TOL
    }

    /// Arc lengths of the teach keyframes: `[0, L)` on a loop (the end
    /// coincides with the start), `[0, L]` otherwise.
    pub fn keyframe_arcs(&self, spacing: f64) -> Vec<f64> {
        let len = self.length();
        let mut out = Vec::new();
        let mut k = 0usize;
        loop {
            let s = k as f64 * spacing;
            let keep = if self.is_closed() { s < len - 1e-9 } else { s <= len + 1e-9 };
            if !keep {
                break;
            }
            out.push(s.min(len));
            k += 1;
        }
        out
    }

    fn segment(&self, s: f64) -> usize {
        let i = self.cum.partition_point(|c| *c <= s);
        i.saturating_sub(1).min(self.headings.len() - 1)
    }

    pub fn point_at(&self, s: f64) -> (f64, f64) {
        let s = s.clamp(0.0, self.length());
        let i = self.segment(s);
        let (a, b) = (self.pts[i], self.pts[i + 1]);
        let len = self.cum[i + 1] - self.cum[i];
        let w = (s - self.cum[i]) / len;
        (a.0 + (b.0 - a.0) * w, a.1 + (b.1 - a.1) * w)
    }

    /// Tangent heading, blended linearly across each waypoint over half the
    /// shorter adjoining segment so that a finely sampled curve has a
    /// continuous tangent.
    pub fn tangent_at(&self, s: f64) -> f64 {
        let s = s.clamp(0.0, self.length());
        let i = self.segment(s);
        let seg_len = |j: usize| self.cum[j + 1] - self.cum[j];
        let blend = |j: usize| {
            // Blend around waypoint j + 1, between segments j and j + 1.
            let d = 0.5 * seg_len(j).min(seg_len(j + 1));
            let v = self.cum[j + 1];
            let w = ((s - (v - d)) / (2.0 * d)).clamp(0.0, 1.0);
            let dh = wrap_angle(self.headings[j + 1] - self.headings[j]);
            wrap_angle(self.headings[j] + w * dh)
        };
        let half = 0.5 * seg_len(i);
        if s - self.cum[i] < half && i > 0 {
            let d = 0.5 * seg_len(i - 1).min(seg_len(i));
            if s - self.cum[i] < d {
                return blend(i - 1);
            }
        } else if i + 1 < self.headings.len() {
            let d = 0.5 * seg_len(i).min(seg_len(i + 1));
            if self.cum[i + 1] - s < d {
                return blend(i);
            }
        }
        self.headings[i]
    }

    /// `(x, y, heading)` at arc length `s`.
    pub fn pose_at(&self, s: f64) -> (f64, f64, f64) {
        let (x, y) = self.point_at(s);
        (x, y, self.tangent_at(s))
    }

    /// Projects onto segments overlapping `[hint - radius, hint + radius]`.
    pub fn project(&self, x: f64, y: f64, hint: f64, radius: f64) -> Projection {
        let lo = self.segment((hint - radius).max(0.0));
        let hi = self.segment((hint + radius).min(self.length()));
        let mut best: Option<(f64, f64)> = None;
        for i in lo..=hi {
            let (a, b) = (self.pts[i], self.pts[i + 1]);
            let (dx, dy) = (b.0 - a.0, b.1 - a.1);
            let len2 = dx * dx + dy * dy;
            let w = (((x - a.0) * dx + (y - a.1) * dy) / len2).clamp(0.0, 1.0);
            let (cx, cy) = (a.0 + dx * w, a.1 + dy * w);
            let d = (x - cx).hypot(y - cy);
            if best.map_or(true, |b| d < b.0) {
                best = Some((d, self.cum[i] + w * len2.sqrt()));
            }
        }
        let (dist, s) = best.expect("at least one segment");
        let tangent = self.tangent_at(s);
        let (cx, cy) = self.point_at(s);
        let cross = tangent.cos() * (y - cy) - tangent.sin() * (x - cx);
        let lateral = if cross >= 0.0 { dist } else { -dist };
        Projection { s, lateral, tangent }
    }

    pub fn waypoints(&self) -> &[(f64, f64)] {
        &self.pts
    }
}

/// Two straights joined by circular arcs, sampled every `step` metres.
/// `arcs` is a list of `(radius, signed turn angle)`.
pub fn arcs_and_straights(first: f64, arcs: &[(f64, f64)], last: f64, step: f64) -> Vec<(f64, f64)> {
    let mut pts = vec![(0.0, 0.0), (first, 0.0)];
    let (mut x, mut y, mut h) = (first, 0.0, 0.0f64);
    for &(r, turn) in arcs {
        let n = ((r * turn.abs()) / step).ceil().max(1.0) as usize;
        let dh = turn / n as f64;
        for _ in 0..n {
            let chord = 2.0 * r * (dh.abs() / 2.0).sin();
            x += chord * (h + dh / 2.0).cos();
            y += chord * (h + dh / 2.0).sin();
            h += dh;
            pts.push((x, y));
        }
    }
    pts.push((x + last * h.cos(), y + last * h.sin()));
    pts
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    #[test]
    fn keyframes_open_and_closed() {
        let open = Polyline::new(vec![(0.0, 0.0), (10.0, 0.0)]).unwrap();
        assert_eq!(open.keyframe_arcs(0.5).len(), 21);
        let square = Polyline::new(vec![(0.0, 0.0), (10.0, 0.0), (10.0, 10.0), (0.0, 10.0), (0.0, 0.0)]).unwrap();
        assert!(square.is_closed());
        assert_eq!(square.keyframe_arcs(0.5).len(), 80);
    }

    #[test]
    fn projection_sign() {
        let p = Polyline::new(vec![(0.0, 0.0), (10.0, 0.0)]).unwrap();
        let pr = p.project(3.0, 0.2, 3.0, 2.0);
        assert!((pr.s - 3.0).abs() < 1e-12 && (pr.lateral - 0.2).abs() < 1e-12);
        assert!((p.project(3.0, -0.2, 3.0, 2.0).lateral + 0.2).abs() < 1e-12);
    }

    #[test]
    fn tangent_blends_at_corner() {
        let p = Polyline::new(vec![(0.0, 0.0), (1.0, 0.0), (1.0, 1.0)]).unwrap();
        assert_eq!(p.tangent_at(0.2), 0.0);
        assert!((p.tangent_at(1.0) - PI / 4.0).abs() < 1e-12);
        assert!((p.tangent_at(1.8) - PI / 2.0).abs() < 1e-12);
    }

    #[test]
    fn duplicate_points_dropped() {
        assert!(Polyline::new(vec![(1.0, 1.0), (1.0, 1.0)]).is_err());
        let p = Polyline::new(vec![(0.0, 0.0), (0.0, 0.0), (2.0, 0.0)]).unwrap();
        assert_eq!(p.length(), 2.0);
    }
}
