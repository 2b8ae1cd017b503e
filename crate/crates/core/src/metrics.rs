//! Evaluation over a repeat log: checkpoint errors, distance-since-localized
//! distributions and estimate jumps at sensor hand-offs.

use alloc::vec::Vec;

#[cfg(not(feature = "std"))]
use num_traits::Float;

/// One row per repeat keyframe.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogRow {
    /// Seconds.
    pub t: f64,
    /// True progress along the path, metres.
    pub s: f64,
    pub e_lat_true: f64,
    pub e_head_true: f64,
    pub e_lat_est: f64,
    pub e_head_est: f64,
    pub gnss: bool,
    pub vision: bool,
    /// `Σxx + Σyy` of the localization covariance, m².
    pub cov_trace: f64,
    pub stopped: bool,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct RepeatLog {
    pub rows: Vec<LogRow>,
}

impl RepeatLog {
    pub fn new(rows: Vec<LogRow>) -> Self {
        Self { rows }
    }

    pub fn stopped(&self) -> bool {
        self.rows.last().is_some_and(|r| r.stopped)
    }

    /// Progress at the last row.
    pub fn final_progress(&self) -> f64 {
        self.rows.last().map_or(0.0, |r| r.s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CheckpointMeasurement {
    pub arc_length: f64,
    pub lateral_error: f64,
    pub heading_error: f64,
}

/// True errors interpolated at each checkpoint. Checkpoints past the last
/// logged row are omitted.
pub fn checkpoint_errors(log: &RepeatLog, checkpoints: &[f64]) -> Vec<CheckpointMeasurement> {
    let rows = &log.rows;
    let Some(last) = rows.last() else {
        return Vec::new();
    };
    let mut out = Vec::with_capacity(checkpoints.len());
    for &c in checkpoints {
        if c > last.s {
            continue;
        }
        let i = rows.partition_point(|r| r.s < c);
        let (lat, head) = if i == 0 {
            (rows[0].e_lat_true, rows[0].e_head_true)
        } else {
            let (a, b) = (&rows[i - 1], &rows[i]);
            let w = if b.s > a.s { (c - a.s) / (b.s - a.s) } else { 1.0 };
            (lerp(a.e_lat_true, b.e_lat_true, w), lerp(a.e_head_true, b.e_head_true, w))
        };
        out.push(CheckpointMeasurement { arc_length: c, lateral_error: lat, heading_error: head });
    }
    out
}

fn lerp(a: f64, b: f64, w: f64) -> f64 {
    a + (b - a) * w
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Sensor {
    Vision,
    Gnss,
    Either,
}

impl Sensor {
    pub const ALL: [Sensor; 3] = [Sensor::Vision, Sensor::Gnss, Sensor::Either];

    pub fn name(self) -> &'static str {
        match self {
            Sensor::Vision => "vision",
            Sensor::Gnss => "gnss",
            Sensor::Either => "either",
        }
    }

    fn used(self, r: &LogRow) -> bool {
        match self {
            Sensor::Vision => r.vision,
            Sensor::Gnss => r.gnss,
            Sensor::Either => r.vision || r.gnss,
        }
    }
}

/// Sampled curve `(x, fraction of keyframes localized within the last x m)`.
#[derive(Debug, Clone, PartialEq)]
pub struct CdfCurve {
    pub sensor: Sensor,
    pub points: Vec<(f64, f64)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LocalizationCdf {
    pub resolution: f64,
    pub curves: Vec<CdfCurve>,
}

impl LocalizationCdf {
    pub fn curve(&self, sensor: Sensor) -> &CdfCurve {
        self.curves.iter().find(|c| c.sensor == sensor).expect("all sensors present")
    }
}

impl CdfCurve {
    /// Fraction at threshold `x` (step function, right-continuous).
    pub fn at(&self, x: f64) -> f64 {
        let i = self.points.partition_point(|p| p.0 <= x + 1e-12);
        if i == 0 {
            0.0
        } else {
            self.points[i - 1].1
        }
    }
}

/// Distance travelled since each sensor last contributed, per row. A sensor
/// never used so far counts from the start of the run.
pub fn distances_since_localization(log: &RepeatLog, sensor: Sensor) -> Vec<f64> {
    let start = log.rows.first().map_or(0.0, |r| r.s);
    let mut last = start;
    log.rows
        .iter()
        .map(|r| {
            if sensor.used(r) {
                last = r.s;
            }
            (r.s - last).max(0.0)
        })
        .collect()
}

/// # Panics
/// If `resolution` is not positive.
pub fn distance_since_localization_cdf(log: &RepeatLog, resolution: f64) -> LocalizationCdf {
    pooled_localization_cdf(core::slice::from_ref(log), resolution)
}

/// One CDF over the keyframes of several runs.
///
/// # Panics
/// If `resolution` is not positive.
pub fn pooled_localization_cdf(logs: &[RepeatLog], resolution: f64) -> LocalizationCdf {
    assert!(resolution > 0.0, "resolution must be positive");
    let per_sensor: Vec<(Sensor, Vec<f64>)> = Sensor::ALL
        .iter()
        .map(|&s| (s, logs.iter().flat_map(|l| distances_since_localization(l, s)).collect()))
        .collect();
    let max_gap = per_sensor.iter().flat_map(|(_, d)| d.iter().copied()).fold(0.0, f64::max);
    let steps = (max_gap / resolution - 1e-9).ceil().max(0.0) as usize;
    let n: usize = logs.iter().map(|l| l.rows.len()).sum();
    let curves = per_sensor
        .into_iter()
        .map(|(sensor, mut d)| {
            d.sort_by(f64::total_cmp);
            let points = (0..=steps)
                .map(|k| {
                    let x = k as f64 * resolution;
                    let count = d.partition_point(|v| *v <= x + 1e-9);
                    (x, if n == 0 { 0.0 } else { count as f64 / n as f64 })
                })
                .collect();
            CdfCurve { sensor, points }
        })
        .collect();
    LocalizationCdf { resolution, curves }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TransitionJump {
    /// Progress at the row where a flag changed.
    pub arc_length: f64,
    /// `|Δ e_lat_est|` against the previous row.
    pub step_change: f64,
    /// Row index in the log.
    pub row: usize,
}

/// Estimate jumps at every row where a sensor-availability flag flips.
pub fn transition_jumps(log: &RepeatLog) -> Vec<TransitionJump> {
    log.rows
        .windows(2)
        .enumerate()
        .filter(|(_, w)| w[0].gnss != w[1].gnss || w[0].vision != w[1].vision)
        .map(|(i, w)| TransitionJump {
            arc_length: w[1].s,
            step_change: (w[1].e_lat_est - w[0].e_lat_est).abs(),
            row: i + 1,
        })
        .collect()
}
