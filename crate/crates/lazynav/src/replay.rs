//! Recorded keyframe streams and offline re-estimation.
//!
//! CSV layout, one row per keyframe:
//!
//! ```text
//! phase,t,m00,m01,m02,m03,m10,m11,m12,m13,m20,m21,m22,m23,gnss_frame,gnss
//! teach,0.5,1,0,0,0.5,0,1,0,0,0,0,1,0,utm,0.2:623437.2:4848804;0.4:623437.4:4848804
//! ```
//!
//! `m..` is the top 3×4 of the VO delta from the previous keyframe of the same
//! phase, row-major. `gnss_frame` is `utm` (fields `t:easting:northing`) or
//! `geodetic` (fields `t:latitude_deg:longitude_deg`). `gnss` may be empty.

use std::io::{Read, Write};
use std::path::Path;

use lazynav_core::geodesy::{GeodeticPoint, ZoneLock};
use lazynav_core::geometry::{Mat6, Transform, Vec6};
use lazynav_core::gnss_local::UtmPoint;
use lazynav_core::mapgraph::{TeachGraph, VertexId};
use lazynav_core::repeat::{tracking_error, Localization, Localizer, LocalizerConfig};

use crate::Error;

const HEADER: [&str; 16] = [
    "phase",
    "t",
    "m00",
    "m01",
    "m02",
    "m03",
    "m10",
    "m11",
    "m12",
    "m13",
    "m20",
    "m21",
    "m22",
    "m23",
    "gnss_frame",
    "gnss",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    Teach,
    Repeat,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FixFrame {
    Utm,
    Geodetic,
}

/// Fix coordinates are `(t, easting, northing)` for [`FixFrame::Utm`] and
/// `(t, latitude, longitude)` in degrees for [`FixFrame::Geodetic`].
#[derive(Debug, Clone, PartialEq)]
pub struct ReplayRecord {
    pub phase: Phase,
    pub t: f64,
    pub vo_delta: Transform,
    pub frame: FixFrame,
    pub gnss: Vec<UtmPoint>,
}

pub fn write_records<W: Write>(out: W, records: &[ReplayRecord]) -> Result<(), csv::Error> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(HEADER)?;
    for r in records {
        let mut row: Vec<String> = Vec::with_capacity(HEADER.len());
        row.push(match r.phase {
            Phase::Teach => "teach".into(),
            Phase::Repeat => "repeat".into(),
        });
        row.push(r.t.to_string());
        row.extend(r.vo_delta.to_row_major().iter().map(|v| v.to_string()));
        row.push(match r.frame {
            FixFrame::Utm => "utm".into(),
            FixFrame::Geodetic => "geodetic".into(),
        });
        row.push(r.gnss.iter().map(|p| format!("{}:{}:{}", p.t, p.easting, p.northing)).collect::<Vec<_>>().join(";"));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

fn bad(line: u64, reason: impl Into<String>) -> Error {
    Error::Replay { line, reason: reason.into() }
}

fn num(line: u64, field: &str, s: &str) -> Result<f64, Error> {
    let v: f64 = s.trim().parse().map_err(|_| bad(line, format!("{field}: not a number: {s:?}")))?;
    if v.is_finite() {
        Ok(v)
    } else {
        Err(bad(line, format!("{field}: not finite")))
    }
}

/// Parses a replay CSV. Line numbers in errors are 1-based file lines.
pub fn read_records<R: Read>(input: R) -> Result<Vec<ReplayRecord>, Error> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).flexible(true).from_reader(input);
    let headers = rdr.headers().map_err(|e| bad(1, e.to_string()))?.clone();
    if headers.iter().map(str::trim).ne(HEADER.iter().copied()) {
        return Err(bad(1, format!("expected header {}", HEADER.join(","))));
    }
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| bad(e.position().map_or(0, |p| p.line()), e.to_string()))?;
        let line = rec.position().map_or(0, |p| p.line());
        if rec.len() != HEADER.len() {
            return Err(bad(line, format!("expected {} fields, found {}", HEADER.len(), rec.len())));
        }
        let phase = match rec[0].trim() {
            "teach" => Phase::Teach,
            "repeat" => Phase::Repeat,
            other => return Err(bad(line, format!("phase must be teach or repeat, got {other:?}"))),
        };
        let t = num(line, "t", &rec[1])?;
        let mut m = [0.0; 12];
        for (i, v) in m.iter_mut().enumerate() {
            *v = num(line, HEADER[2 + i], &rec[2 + i])?;
        }
        let vo_delta = Transform::from_row_major(&m).map_err(|e| bad(line, format!("vo delta: {e}")))?;
        let frame = match rec[14].trim() {
            "utm" => FixFrame::Utm,
            "geodetic" => FixFrame::Geodetic,
            other => return Err(bad(line, format!("gnss_frame must be utm or geodetic, got {other:?}"))),
        };
        let mut gnss = Vec::new();
        for item in rec[15].split(';').map(str::trim).filter(|s| !s.is_empty()) {
            let parts: Vec<&str> = item.split(':').collect();
            if parts.len() != 3 {
                return Err(bad(line, format!("gnss entry {item:?} is not t:a:b")));
            }
            gnss.push(UtmPoint::new(
                num(line, "gnss.t", parts[0])?,
                num(line, "gnss", parts[1])?,
                num(line, "gnss", parts[2])?,
            ));
        }
        out.push((line, ReplayRecord { phase, t, vo_delta, frame, gnss }));
    }
    check_times(&out)?;
    Ok(out.into_iter().map(|(_, r)| r).collect())
}

fn check_times(records: &[(u64, ReplayRecord)]) -> Result<(), Error> {
    for phase in [Phase::Teach, Phase::Repeat] {
        let mut last_t = f64::NEG_INFINITY;
        let mut last_fix = f64::NEG_INFINITY;
        for (line, r) in records.iter().filter(|(_, r)| r.phase == phase) {
            if r.t <= last_t {
                return Err(bad(*line, format!("keyframe time {} does not increase (previous {last_t})", r.t)));
            }
            for p in &r.gnss {
                if p.t <= last_fix {
                    return Err(bad(*line, format!("fix time {} does not increase (previous {last_fix})", p.t)));
                }
                if p.t <= last_t || p.t > r.t {
                    return Err(bad(*line, format!("fix time {} outside ({last_t}, {}]", p.t, r.t)));
                }
                last_fix = p.t;
            }
            last_t = r.t;
        }
    }
    Ok(())
}

pub fn read_file(path: &Path) -> Result<Vec<ReplayRecord>, Error> {
    let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_records(std::io::BufReader::new(f)).map_err(|e| match e {
        Error::Replay { line, reason } => Error::Replay { line, reason: format!("{}: {reason}", path.display()) },
        other => other,
    })
}

/// Projects geodetic fixes to UTM. `lock` pins one zone across every file
/// of a dataset. Records are one line each, so record `i` is file line
/// `i + 2`.
pub fn project_fixes(records: &mut [ReplayRecord], lock: &mut ZoneLock) -> Result<(), Error> {
    for (i, r) in records.iter_mut().enumerate() {
        if r.frame != FixFrame::Geodetic {
            continue;
        }
        let line = i as u64 + 2;
        for p in &mut r.gnss {
            let g = GeodeticPoint::new(p.easting, p.northing).map_err(|e| bad(line, e.to_string()))?;
            let c = lock.project(&g).map_err(|e| bad(line, e.to_string()))?;
            *p = UtmPoint::new(p.t, c.easting, c.northing);
        }
        r.frame = FixFrame::Utm;
    }
    Ok(())
}

/// Builds a teach graph from teach records, with edge covariances from the
/// localizer's assumed VO noise.
pub fn graph_from_records(records: &[ReplayRecord], cfg: &LocalizerConfig) -> Result<TeachGraph, Error> {
    let mut g = TeachGraph::new();
    for (i, r) in records.iter().enumerate() {
        let len = r.vo_delta.translation.norm();
        let st = (cfg.vo_sigma_trans * len).powi(2).max(1e-12);
        let sr = (cfg.vo_sigma_rot * len).powi(2).max(1e-12);
        let cov = Mat6::from_diagonal(&Vec6::new(st, st, 1e-10, 1e-10, 1e-10, sr));
        g.add_vertex(r.vo_delta, cov, r.t, r.gnss.clone(), Vec::new()).map_err(|e| bad(i as u64 + 2, e.to_string()))?;
    }
    if g.is_empty() {
        return Err(bad(1, "no teach records"));
    }
    Ok(g)
}

/// Per-keyframe output of a replay: estimated errors only.
#[derive(Debug, Clone, PartialEq)]
pub struct ReplayRow {
    pub t: f64,
    pub vertex: usize,
    pub e_lat_est: f64,
    pub e_head_est: f64,
    pub gnss: bool,
    pub vision: bool,
    pub cov_trace: f64,
    pub stopped: bool,
}

/// Runs the localizer over repeat records. Record 0 is the start keyframe
/// and its delta is ignored.
pub fn replay(
    graph: &TeachGraph,
    repeat: &[ReplayRecord],
    cfg: &LocalizerConfig,
    initial_cov: Mat6,
) -> Vec<(ReplayRow, Localization)> {
    let Some(first) = repeat.first() else {
        return Vec::new();
    };
    let mut loc = Localizer::new(graph, *cfg, VertexId::teach(0), Transform::identity(), initial_cov, first.t);
    let mut out = Vec::with_capacity(repeat.len());
    for (i, r) in repeat.iter().enumerate() {
        for p in &r.gnss {
            loc.push_fix(*p);
        }
        if i > 0 {
            loc.predict(&r.vo_delta, r.t);
        }
        let l = loc.correct(&[]);
        let e = tracking_error(graph, l.matched.seq, &l.t_qm.inverse());
        out.push((
            ReplayRow {
                t: r.t,
                vertex: l.matched.seq,
                e_lat_est: e.lateral,
                e_head_est: e.heading,
                gnss: l.used_gnss,
                vision: l.used_vision,
                cov_trace: l.cov_trace(),
                stopped: l.stopped,
            },
            l,
        ));
        if loc.stopped() {
            break;
        }
    }
    out
}

pub fn write_rows<W: Write>(out: W, rows: &[ReplayRow]) -> Result<(), csv::Error> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["t_s", "vertex", "e_lat_est_m", "e_head_est_rad", "gnss", "vision", "cov_trace_m2", "stopped"])?;
    for r in rows {
        w.write_record([
            r.t.to_string(),
            r.vertex.to_string(),
            r.e_lat_est.to_string(),
            r.e_head_est.to_string(),
            u8::from(r.gnss).to_string(),
            u8::from(r.vision).to_string(),
            r.cov_trace.to_string(),
            u8::from(r.stopped).to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}
