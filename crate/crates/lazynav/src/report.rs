//! CSV output for repeat logs and evaluation reports.

use std::io::{Read, Write};
use std::path::Path;

use lazynav_core::metrics::{
    checkpoint_errors, pooled_localization_cdf, transition_jumps, CheckpointMeasurement, LogRow, RepeatLog,
};

use crate::Error;

/// Column names of a repeat log. Errors are in m and rad, `t` in s, `s` in
/// m, `cov_trace` in m², flags are 0/1.
pub const LOG_HEADER: [&str; 10] =
    ["t", "s", "e_lat_true", "e_head_true", "e_lat_est", "e_head_est", "gnss", "vision", "cov_trace", "stopped"];

fn flag(b: bool) -> &'static str {
    if b {
        "1"
    } else {
        "0"
    }
}

pub fn write_log<W: Write>(out: W, log: &RepeatLog) -> Result<(), csv::Error> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(LOG_HEADER)?;
    for r in &log.rows {
        w.write_record([
            r.t.to_string(),
            r.s.to_string(),
            r.e_lat_true.to_string(),
            r.e_head_true.to_string(),
            r.e_lat_est.to_string(),
            r.e_head_est.to_string(),
            flag(r.gnss).into(),
            flag(r.vision).into(),
            r.cov_trace.to_string(),
            flag(r.stopped).into(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_log<R: Read>(input: R) -> Result<RepeatLog, Error> {
    let bad = |line: u64, reason: String| Error::Replay { line, reason };
    let mut rdr = csv::Reader::from_reader(input);
    let headers = rdr.headers().map_err(|e| bad(1, e.to_string()))?.clone();
    if headers.iter().ne(LOG_HEADER.iter().copied()) {
        return Err(bad(1, format!("expected header {}", LOG_HEADER.join(","))));
    }
    let mut rows = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| bad(e.position().map_or(0, |p| p.line()), e.to_string()))?;
        let line = rec.position().map_or(0, |p| p.line());
        let num = |i: usize| -> Result<f64, Error> {
            rec[i].parse::<f64>().map_err(|_| bad(line, format!("{}: not a number: {:?}", LOG_HEADER[i], &rec[i])))
        };
        let flag = |i: usize| -> Result<bool, Error> {
            match &rec[i] {
                "0" => Ok(false),
                "1" => Ok(true),
                other => Err(bad(line, format!("{}: expected 0 or 1, got {other:?}", LOG_HEADER[i]))),
            }
        };
        rows.push(LogRow {
            t: num(0)?,
            s: num(1)?,
            e_lat_true: num(2)?,
            e_head_true: num(3)?,
            e_lat_est: num(4)?,
            e_head_est: num(5)?,
            gnss: flag(6)?,
            vision: flag(7)?,
            cov_trace: num(8)?,
            stopped: flag(9)?,
        });
    }
    Ok(RepeatLog::new(rows))
}

pub fn read_log_file(path: &Path) -> Result<RepeatLog, Error> {
    let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_log(std::io::BufReader::new(f)).map_err(|e| match e {
        Error::Replay { line, reason } => Error::Replay { line, reason: format!("{}: {reason}", path.display()) },
        other => other,
    })
}

/// Per-run checkpoint errors with a `mean` row per checkpoint over the runs
/// that reached it.
pub fn write_checkpoints<W: Write>(out: W, logs: &[RepeatLog], checkpoints: &[f64]) -> Result<(), csv::Error> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["run", "arc_length_m", "lateral_error_m", "heading_error_deg"])?;
    let per_run: Vec<Vec<CheckpointMeasurement>> = logs.iter().map(|l| checkpoint_errors(l, checkpoints)).collect();
    for (i, ms) in per_run.iter().enumerate() {
        for m in ms {
            w.write_record([
                i.to_string(),
                m.arc_length.to_string(),
                m.lateral_error.to_string(),
                m.heading_error.to_degrees().to_string(),
            ])?;
        }
    }
    for &c in checkpoints {
        let hits: Vec<&CheckpointMeasurement> = per_run.iter().flatten().filter(|m| m.arc_length == c).collect();
        if hits.is_empty() {
            continue;
        }
        let n = hits.len() as f64;
        let lat = hits.iter().map(|m| m.lateral_error.abs()).sum::<f64>() / n;
        let head = hits.iter().map(|m| m.heading_error.abs().to_degrees()).sum::<f64>() / n;
        w.write_record(["mean_abs".to_string(), c.to_string(), lat.to_string(), head.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

/// One CDF pooled over every keyframe of every run.
pub fn write_cdf<W: Write>(out: W, logs: &[RepeatLog], resolution: f64) -> Result<(), csv::Error> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["sensor", "x_m", "fraction"])?;
    let cdf = pooled_localization_cdf(logs, resolution);
    for c in &cdf.curves {
        for &(x, f) in &c.points {
            w.write_record([c.sensor.name().to_string(), x.to_string(), f.to_string()])?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn write_transitions<W: Write>(out: W, logs: &[RepeatLog]) -> Result<(), csv::Error> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["run", "row", "arc_length_m", "step_change_m", "gnss", "vision"])?;
    for (i, log) in logs.iter().enumerate() {
        for j in transition_jumps(log) {
            let r = &log.rows[j.row];
            w.write_record([
                i.to_string(),
                j.row.to_string(),
                j.arc_length.to_string(),
                j.step_change.to_string(),
                flag(r.gnss).into(),
                flag(r.vision).into(),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Writes `checkpoints.csv`, `cdf.csv` and `transitions.csv` into `dir`.
pub fn write_reports(dir: &Path, logs: &[RepeatLog], checkpoints: &[f64], resolution: f64) -> Result<(), Error> {
    let file = |name: &str| {
        let p = dir.join(name);
        std::fs::File::create(&p).map(std::io::BufWriter::new).map_err(|e| Error::io(&p, e))
    };
    let csv_err = |name: &str, e: csv::Error| Error::io(&dir.join(name), e.into());
    write_checkpoints(file("checkpoints.csv")?, logs, checkpoints).map_err(|e| csv_err("checkpoints.csv", e))?;
    write_cdf(file("cdf.csv")?, logs, resolution).map_err(|e| csv_err("cdf.csv", e))?;
    write_transitions(file("transitions.csv")?, logs).map_err(|e| csv_err("transitions.csv", e))?;
    Ok(())
}
