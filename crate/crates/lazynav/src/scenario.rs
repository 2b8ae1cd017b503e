//! Simulation scenario: JSON schema, validation, overrides and hashing.

use std::path::Path;

use lazynav_core::fusion::{RobustKernel, SolverConfig};
use lazynav_core::gnss_local::{GnssConfig, GnssCovariance, WindowConfig};
use lazynav_core::repeat::LocalizerConfig;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::path::Polyline;
use crate::Error;

/// Maps simulated world coordinates into the "UTM" frame GNSS reports in.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct GnssFrame {
    /// Easting/northing of the world origin, m.
    pub offset: [f64; 2],
    /// Rotation of world axes relative to east/north, rad.
    pub rotation: f64,
}

impl GnssFrame {
    pub fn apply(&self, x: f64, y: f64) -> (f64, f64) {
        let (s, c) = self.rotation.sin_cos();
        (self.offset[0] + c * x - s * y, self.offset[1] + s * x + c * y)
    }
}

/// What the localizer assumes. Independent of the noise the simulator
/// actually injects.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LocalizerSettings {
    pub gnss_half_width: f64,
    pub gnss_min_points: usize,
    pub ransac_iters: usize,
    pub ransac_threshold: f64,
    pub min_speed: f64,
    pub gnss_sigma_planar: f64,
    pub gnss_sigma_yaw: f64,
    pub gnss_weak_prior_variance: f64,
    pub kernel_k: f64,
    pub robust_landmarks: bool,
    pub landmark_sigma: f64,
    pub vo_sigma_trans: f64,
    pub vo_sigma_rot: f64,
    pub ransac_seed: u64,
    pub max_iters: usize,
}

impl Default for LocalizerSettings {
    fn default() -> Self {
        let d = LocalizerConfig::default();
        let w = d.gnss.window;
        let c = d.gnss.covariance;
        Self {
            gnss_half_width: w.half_width,
            gnss_min_points: w.min_points,
            ransac_iters: w.ransac_iters,
            ransac_threshold: w.ransac_threshold,
            min_speed: w.min_speed,
            gnss_sigma_planar: c.sigma_planar,
            gnss_sigma_yaw: c.sigma_yaw,
            gnss_weak_prior_variance: c.weak_prior_variance,
            kernel_k: d.kernel.k,
            robust_landmarks: d.robust_landmarks,
            landmark_sigma: d.landmark_sigma,
            vo_sigma_trans: d.vo_sigma_trans,
            vo_sigma_rot: d.vo_sigma_rot,
            ransac_seed: d.seed,
            max_iters: d.solver.max_iters,
        }
    }
}

impl LocalizerSettings {
    pub fn to_config(&self, stop_threshold: f64) -> LocalizerConfig {
        LocalizerConfig {
            gnss: GnssConfig {
                window: WindowConfig {
                    half_width: self.gnss_half_width,
                    min_points: self.gnss_min_points,
                    ransac_iters: self.ransac_iters,
                    ransac_threshold: self.ransac_threshold,
                    min_speed: self.min_speed,
                },
                covariance: GnssCovariance {
                    sigma_planar: self.gnss_sigma_planar,
                    sigma_yaw: self.gnss_sigma_yaw,
                    weak_prior_variance: self.gnss_weak_prior_variance,
                },
            },
            kernel: RobustKernel { k: self.kernel_k },
            robust_landmarks: self.robust_landmarks,
            solver: SolverConfig { max_iters: self.max_iters, ..SolverConfig::default() },
            landmark_sigma: self.landmark_sigma,
            vo_sigma_trans: self.vo_sigma_trans,
            vo_sigma_rot: self.vo_sigma_rot,
            stop_threshold,
            seed: self.ransac_seed,
        }
    }

    fn validate(&self) -> Result<(), Error> {
        let cfg = self.to_config(1.0);
        cfg.gnss.window.validate().map_err(|r| invalid("localizer.gnss_*", r))?;
        positive("localizer.gnss_sigma_planar", self.gnss_sigma_planar)?;
        positive("localizer.gnss_sigma_yaw", self.gnss_sigma_yaw)?;
        positive("localizer.gnss_weak_prior_variance", self.gnss_weak_prior_variance)?;
        positive("localizer.kernel_k", self.kernel_k)?;
        positive("localizer.landmark_sigma", self.landmark_sigma)?;
        non_negative("localizer.vo_sigma_trans", self.vo_sigma_trans)?;
        non_negative("localizer.vo_sigma_rot", self.vo_sigma_rot)?;
        if self.max_iters == 0 {
            return Err(invalid("localizer.max_iters", "must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ControllerSettings {
    /// 1/m.
    pub k_lat: f64,
    pub k_head: f64,
    /// rad/s.
    pub max_rate: f64,
    /// Add `v·κ` of the reference curve to the feedback command.
    pub curvature_feedforward: bool,
}

impl Default for ControllerSettings {
    fn default() -> Self {
        Self { k_lat: 1.0, k_head: 1.5, max_rate: 0.8, curvature_feedforward: true }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    /// Polyline waypoints `[x, y]`, m. A path whose ends coincide is a loop.
    pub path: Vec<[f64; 2]>,
    #[serde(default = "d_spacing")]
    pub keyframe_spacing: f64,
    #[serde(default = "d_speed")]
    pub speed: f64,
    #[serde(default = "d_gnss_rate")]
    pub gnss_rate: f64,
    #[serde(default)]
    pub gnss_sigma: f64,
    #[serde(default)]
    pub gnss_bias: [f64; 2],
    #[serde(default)]
    pub gnss_outlier_rate: f64,
    /// Arc-length intervals with GNSS. Absent: everywhere.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gnss_zones: Option<Vec<[f64; 2]>>,
    /// Arc-length intervals with vision. Absent: everywhere.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub vision_zones: Option<Vec<[f64; 2]>>,
    #[serde(default)]
    pub vo_sigma_trans: f64,
    #[serde(default)]
    pub vo_sigma_rot: f64,
    #[serde(default = "d_landmarks")]
    pub landmarks_per_keyframe: usize,
    #[serde(default)]
    pub landmark_sigma: f64,
    #[serde(default)]
    pub checkpoints: Vec<f64>,
    #[serde(default = "d_threshold")]
    pub uncertainty_stop_threshold: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub gnss_frame: GnssFrame,
    #[serde(default)]
    pub localizer: LocalizerSettings,
    #[serde(default)]
    pub controller: ControllerSettings,
}

/// Slack on zone and checkpoint bounds, m. Sampled arcs come out slightly
/// shorter than their nominal length.
const LENGTH_TOL: f64 = 1e-3;

fn d_spacing() -> f64 {
    0.5
}
fn d_speed() -> f64 {
    1.0
}
fn d_gnss_rate() -> f64 {
    5.0
}
fn d_landmarks() -> usize {
    20
}
fn d_threshold() -> f64 {
    1.0
}

/// The fields that shape a teach graph. Repeat refuses a graph whose hash
/// of these differs. The seed is left out: it picks one noise realization
/// and any realization is a valid map for the same path.
#[derive(Serialize)]
struct TeachKey<'a> {
    path: &'a [[f64; 2]],
    keyframe_spacing: f64,
    speed: f64,
    gnss_rate: f64,
    gnss_sigma: f64,
    gnss_bias: [f64; 2],
    gnss_outlier_rate: f64,
    gnss_zones: &'a Option<Vec<[f64; 2]>>,
    vo_sigma_trans: f64,
    vo_sigma_rot: f64,
    landmarks_per_keyframe: usize,
    gnss_frame: GnssFrame,
}

fn invalid(field: &str, reason: impl Into<String>) -> Error {
    Error::Validation { field: field.to_string(), reason: reason.into() }
}

fn non_negative(field: &str, v: f64) -> Result<(), Error> {
    if v.is_finite() && v >= 0.0 {
        Ok(())
    } else {
        Err(invalid(field, format!("must be finite and >= 0, got {v}")))
    }
}

fn finite(field: &str, v: &[f64]) -> Result<(), Error> {
    if v.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(invalid(field, "must be finite"))
    }
}

fn positive(field: &str, v: f64) -> Result<(), Error> {
    if v.is_finite() && v > 0.0 {
        Ok(())
    } else {
        Err(invalid(field, format!("must be finite and > 0, got {v}")))
    }
}

impl Scenario {
    pub fn from_json(text: &str) -> Result<Self, Error> {
        Self::from_value(serde_json::from_str(text).map_err(|e| invalid("<json>", e.to_string()))?)
    }

    pub fn from_value(v: Value) -> Result<Self, Error> {
        let s: Scenario = serde_json::from_value(v).map_err(|e| invalid("<schema>", e.to_string()))?;
        s.validate()?;
        Ok(s)
    }

    /// Reads a scenario file and applies `key=value` overrides (dot paths).
    pub fn load(path: &Path, overrides: &[String]) -> Result<Self, Error> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut v: Value =
            serde_json::from_str(&text).map_err(|e| invalid("<json>", format!("{}: {e}", path.display())))?;
        for o in overrides {
            apply_override(&mut v, o)?;
        }
        Self::from_value(v)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("scenario serializes")
    }

    pub fn polyline(&self) -> Polyline {
        Polyline::new(self.path.iter().map(|p| (p[0], p[1])).collect()).expect("validated path")
    }

    pub fn path_length(&self) -> f64 {
        self.polyline().length()
    }

    pub fn gnss_available(&self, s: f64) -> bool {
        in_zones(&self.gnss_zones, s)
    }

    pub fn vision_available(&self, s: f64) -> bool {
        in_zones(&self.vision_zones, s)
    }

    pub fn localizer_config(&self) -> LocalizerConfig {
        self.localizer.to_config(self.uncertainty_stop_threshold)
    }

    /// Hex SHA-256 over the teach-shaping fields.
    pub fn teach_hash(&self) -> String {
        let key = TeachKey {
            path: &self.path,
            keyframe_spacing: self.keyframe_spacing,
            speed: self.speed,
            gnss_rate: self.gnss_rate,
            gnss_sigma: self.gnss_sigma,
            gnss_bias: self.gnss_bias,
            gnss_outlier_rate: self.gnss_outlier_rate,
            gnss_zones: &self.gnss_zones,
            vo_sigma_trans: self.vo_sigma_trans,
            vo_sigma_rot: self.vo_sigma_rot,
            landmarks_per_keyframe: self.landmarks_per_keyframe,
            gnss_frame: self.gnss_frame,
        };
        let bytes = serde_json::to_vec(&key).expect("key serializes");
        Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn validate(&self) -> Result<(), Error> {
        if self.path.len() < 2 {
            return Err(invalid("path", "needs at least two waypoints"));
        }
        if self.path.iter().flatten().any(|v| !v.is_finite()) {
            return Err(invalid("path", "waypoints must be finite"));
        }
        let poly = Polyline::new(self.path.iter().map(|p| (p[0], p[1])).collect()).map_err(|r| invalid("path", r))?;
        let len = poly.length();
        positive("keyframe_spacing", self.keyframe_spacing)?;
        positive("speed", self.speed)?;
        positive("gnss_rate", self.gnss_rate)?;
        non_negative("gnss_sigma", self.gnss_sigma)?;
        finite("gnss_bias", &self.gnss_bias)?;
        if !(0.0..=1.0).contains(&self.gnss_outlier_rate) {
            return Err(invalid("gnss_outlier_rate", format!("must be in [0, 1], got {}", self.gnss_outlier_rate)));
        }
        non_negative("vo_sigma_trans", self.vo_sigma_trans)?;
        non_negative("vo_sigma_rot", self.vo_sigma_rot)?;
        non_negative("landmark_sigma", self.landmark_sigma)?;
        positive("uncertainty_stop_threshold", self.uncertainty_stop_threshold)?;
        for (name, zones) in [("gnss_zones", &self.gnss_zones), ("vision_zones", &self.vision_zones)] {
            for (i, z) in zones.iter().flatten().enumerate() {
                let ok =
                    z[0].is_finite() && z[1].is_finite() && 0.0 <= z[0] && z[0] <= z[1] && z[1] <= len + LENGTH_TOL;
                if !ok {
                    return Err(invalid(&format!("{name}[{i}]"), format!("must satisfy 0 <= start <= end <= {len}")));
                }
            }
        }
        for (i, c) in self.checkpoints.iter().enumerate() {
            if !(c.is_finite() && (0.0..=len + LENGTH_TOL).contains(c)) {
                return Err(invalid(&format!("checkpoints[{i}]"), format!("must be within [0, {len}]")));
            }
        }
        if self.checkpoints.windows(2).any(|w| w[1] < w[0]) {
            return Err(invalid("checkpoints", "must be sorted"));
        }
        finite("gnss_frame.offset", &self.gnss_frame.offset)?;
        finite("gnss_frame.rotation", &[self.gnss_frame.rotation])?;
        positive("controller.k_lat", self.controller.k_lat)?;
        positive("controller.k_head", self.controller.k_head)?;
        positive("controller.max_rate", self.controller.max_rate)?;
        self.localizer.validate()
    }
}

fn in_zones(zones: &Option<Vec<[f64; 2]>>, s: f64) -> bool {
    match zones {
        None => true,
        Some(z) => z.iter().any(|z| z[0] <= s && s <= z[1]),
    }
}

/// Sets `a.b.c=value` inside a JSON document. The value is parsed as JSON
/// when possible and taken as a string otherwise.
pub fn apply_override(doc: &mut Value, spec: &str) -> Result<(), Error> {
    let (key, raw) = spec
        .split_once('=')
        .ok_or_else(|| invalid("--config-override", format!("expected key=value, got {spec:?}")))?;
    if key.is_empty() {
        return Err(invalid("--config-override", "empty key"));
    }
    let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    let mut cur = doc;
    let parts: Vec<&str> = key.split('.').collect();
    for (i, part) in parts.iter().enumerate() {
        let last = i + 1 == parts.len();
        cur = match cur {
            Value::Object(map) => {
                if last {
                    map.insert((*part).to_string(), value);
                    return Ok(());
                }
                map.entry((*part).to_string()).or_insert_with(|| Value::Object(Default::default()))
            }
            Value::Array(items) => {
                let idx: usize = part.parse().map_err(|_| invalid(key, format!("{part:?} is not an array index")))?;
                let n = items.len();
                let slot = items.get_mut(idx).ok_or_else(|| invalid(key, format!("index {idx} out of range ({n})")))?;
                if last {
                    *slot = value;
                    return Ok(());
                }
                slot
            }
            _ => return Err(invalid(key, format!("{part:?} does not address an object or array"))),
        };
    }
    Ok(())
}

/// The bundled paper-analog scenario.
pub const PAPER_ANALOG_JSON: &str = include_str!("../scenarios/paper_analog.json");

pub fn paper_analog() -> Scenario {
    Scenario::from_json(PAPER_ANALOG_JSON).expect("bundled scenario is valid")
}

/// Straight line along x, with defaults elsewhere and everything noiseless.
pub fn straight(length: f64) -> Scenario {
    Scenario {
        path: vec![[0.0, 0.0], [length, 0.0]],
        keyframe_spacing: d_spacing(),
        speed: d_speed(),
        gnss_rate: d_gnss_rate(),
        gnss_sigma: 0.0,
        gnss_bias: [0.0, 0.0],
        gnss_outlier_rate: 0.0,
        gnss_zones: None,
        vision_zones: None,
        vo_sigma_trans: 0.0,
        vo_sigma_rot: 0.0,
        landmarks_per_keyframe: d_landmarks(),
        landmark_sigma: 0.0,
        checkpoints: Vec::new(),
        uncertainty_stop_threshold: d_threshold(),
        seed: 0,
        gnss_frame: GnssFrame::default(),
        localizer: LocalizerSettings::default(),
        controller: ControllerSettings::default(),
    }
}

impl Scenario {
    /// Copy with every injected noise source set to zero.
    pub fn noiseless(&self) -> Scenario {
        Scenario {
            gnss_sigma: 0.0,
            gnss_outlier_rate: 0.0,
            vo_sigma_trans: 0.0,
            vo_sigma_rot: 0.0,
            landmark_sigma: 0.0,
            ..self.clone()
        }
    }
}
