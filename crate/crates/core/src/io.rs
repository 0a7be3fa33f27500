//! CSV and JSON codecs for sensor logs, truth, and filter output.
//!
//! Floats are written with Rust's shortest round-trip formatting; withheld
//! DVL beams appear as `NaN` with a zero validity flag. Angles in truth and
//! output files are degrees.

use std::path::Path;

use nalgebra::{UnitQuaternion, Vector3, Vector4};

use crate::dvl_geometry::DvlSample;
use crate::error::{Error, Result};
use crate::harness::{OutputRecord, UpdateKind};
use crate::sim::ScenarioConfig;
use crate::strapdown::{ImuSample, NavState};

fn parse_f64(field: &str, what: &str) -> Result<f64> {
    field
        .trim()
        .parse::<f64>()
        .map_err(|_| Error::Config(format!("bad {what} value '{field}'")))
}

fn check_header(record: &csv::StringRecord, expected: &[&str], what: &str) -> Result<()> {
    let got: Vec<&str> = record.iter().map(|s| s.trim()).collect();
    if got != expected {
        return Err(Error::Config(format!(
            "{what} header mismatch: expected {expected:?}, got {got:?}"
        )));
    }
    Ok(())
}

pub const IMU_HEADER: [&str; 7] = ["t", "fx", "fy", "fz", "wx", "wy", "wz"];

pub fn write_imu_csv(path: &Path, samples: &[ImuSample]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(IMU_HEADER)?;
    for s in samples {
        let f = s.specific_force_b;
        let g = s.angular_rate_b;
        w.write_record(
            [s.t, f[0], f[1], f[2], g[0], g[1], g[2]].map(|v| v.to_string()),
        )?;
    }
    w.flush().map_err(|e| Error::Io(e))?;
    Ok(())
}

pub fn read_imu_csv(path: &Path) -> Result<Vec<ImuSample>> {
    let mut r = csv::Reader::from_path(path)?;
    check_header(r.headers()?, &IMU_HEADER, "IMU")?;
    let mut out = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        if rec.len() != 7 {
            return Err(Error::Config(format!("IMU row needs 7 fields, got {}", rec.len())));
        }
        let v: Vec<f64> = rec
            .iter()
            .enumerate()
            .map(|(i, f)| parse_f64(f, IMU_HEADER[i]))
            .collect::<Result<_>>()?;
        out.push(ImuSample {
            t: v[0],
            specific_force_b: Vector3::new(v[1], v[2], v[3]),
            angular_rate_b: Vector3::new(v[4], v[5], v[6]),
        });
    }
    Ok(out)
}

pub const DVL_HEADER: [&str; 9] = ["t", "b1", "b2", "b3", "b4", "v1", "v2", "v3", "v4"];

pub fn write_dvl_csv(path: &Path, samples: &[DvlSample]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(DVL_HEADER)?;
    for s in samples {
        let mut fields = vec![s.t.to_string()];
        for i in 0..4 {
            fields.push(s.beams[i].to_string());
        }
        for i in 0..4 {
            fields.push(if s.valid[i] { "1" } else { "0" }.to_string());
        }
        w.write_record(&fields)?;
    }
    w.flush().map_err(|e| Error::Io(e))?;
    Ok(())
}

pub fn read_dvl_csv(path: &Path) -> Result<Vec<DvlSample>> {
    let mut r = csv::Reader::from_path(path)?;
    check_header(r.headers()?, &DVL_HEADER, "DVL")?;
    let mut out = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        if rec.len() != 9 {
            return Err(Error::Config(format!("DVL row needs 9 fields, got {}", rec.len())));
        }
        let t = parse_f64(&rec[0], "t")?;
        let mut beams = Vector4::zeros();
        let mut valid = [false; 4];
        for i in 0..4 {
            beams[i] = parse_f64(&rec[1 + i], DVL_HEADER[1 + i])?;
            valid[i] = match rec[5 + i].trim() {
                "1" => true,
                "0" => false,
                other => {
                    return Err(Error::Config(format!("validity flag must be 0 or 1, got '{other}'")))
                }
            };
            if valid[i] && !beams[i].is_finite() {
                return Err(Error::Config(format!(
                    "beam {} at t = {t} is flagged valid but not finite",
                    i + 1
                )));
            }
        }
        out.push(DvlSample { t, beams, valid });
    }
    Ok(out)
}

pub const TRUTH_HEADER: [&str; 10] =
    ["t", "vN", "vE", "vD", "roll", "pitch", "yaw", "pN", "pE", "pD"];

pub fn write_truth_csv(path: &Path, states: &[NavState]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(TRUTH_HEADER)?;
    for s in states {
        let (roll, pitch, yaw) = s.rpy();
        w.write_record(
            [
                s.t,
                s.vel_n[0],
                s.vel_n[1],
                s.vel_n[2],
                roll.to_degrees(),
                pitch.to_degrees(),
                yaw.to_degrees(),
                s.pos_n[0],
                s.pos_n[1],
                s.pos_n[2],
            ]
            .map(|v| v.to_string()),
        )?;
    }
    w.flush().map_err(|e| Error::Io(e))?;
    Ok(())
}

pub fn read_truth_csv(path: &Path) -> Result<Vec<NavState>> {
    let mut r = csv::Reader::from_path(path)?;
    check_header(r.headers()?, &TRUTH_HEADER, "truth")?;
    let mut out = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        if rec.len() != 10 {
            return Err(Error::Config(format!("truth row needs 10 fields, got {}", rec.len())));
        }
        let v: Vec<f64> = rec
            .iter()
            .enumerate()
            .map(|(i, f)| parse_f64(f, TRUTH_HEADER[i]))
            .collect::<Result<_>>()?;
        out.push(NavState::new(
            v[0],
            Vector3::new(v[7], v[8], v[9]),
            Vector3::new(v[1], v[2], v[3]),
            UnitQuaternion::from_euler_angles(
                v[4].to_radians(),
                v[5].to_radians(),
                v[6].to_radians(),
            ),
        ));
    }
    Ok(out)
}

pub const OUTPUT_HEADER: [&str; 15] = [
    "t", "vN", "vE", "vD", "roll", "pitch", "yaw", "pN", "pE", "pD", "Pv11", "Pv22", "Pv33",
    "nis", "update_kind",
];

pub fn write_output_csv(path: &Path, records: &[OutputRecord]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(OUTPUT_HEADER)?;
    for r in records {
        let (roll, pitch, yaw) = r.rpy;
        let mut fields: Vec<String> = [
            r.t,
            r.vel_n[0],
            r.vel_n[1],
            r.vel_n[2],
            roll.to_degrees(),
            pitch.to_degrees(),
            yaw.to_degrees(),
            r.pos_n[0],
            r.pos_n[1],
            r.pos_n[2],
            r.pv_diag[0],
            r.pv_diag[1],
            r.pv_diag[2],
            r.nis,
        ]
        .map(|v| v.to_string())
        .into();
        fields.push(r.update_kind.as_str().to_string());
        w.write_record(&fields)?;
    }
    w.flush().map_err(|e| Error::Io(e))?;
    Ok(())
}

pub fn read_output_csv(path: &Path) -> Result<Vec<OutputRecord>> {
    let mut r = csv::Reader::from_path(path)?;
    check_header(r.headers()?, &OUTPUT_HEADER, "output")?;
    let mut out = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        if rec.len() != 15 {
            return Err(Error::Config(format!("output row needs 15 fields, got {}", rec.len())));
        }
        let v: Vec<f64> = (0..14)
            .map(|i| parse_f64(&rec[i], OUTPUT_HEADER[i]))
            .collect::<Result<_>>()?;
        out.push(OutputRecord {
            t: v[0],
            vel_n: Vector3::new(v[1], v[2], v[3]),
            rpy: (v[4].to_radians(), v[5].to_radians(), v[6].to_radians()),
            pos_n: Vector3::new(v[7], v[8], v[9]),
            pv_diag: Vector3::new(v[10], v[11], v[12]),
            nis: v[13],
            update_kind: UpdateKind::parse(rec[14].trim())?,
        });
    }
    Ok(out)
}

pub fn read_scenario_json(path: &Path) -> Result<ScenarioConfig> {
    let text = std::fs::read_to_string(path)?;
    let cfg: ScenarioConfig =
        serde_json::from_str(&text).map_err(|e| Error::Config(format!("scenario: {e}")))?;
    cfg.trajectory.validate()?;
    cfg.outage_windows()?;
    Ok(cfg)
}

pub fn write_scenario_json(path: &Path, cfg: &ScenarioConfig) -> Result<()> {
    std::fs::write(path, serde_json::to_string_pretty(cfg)?)?;
    Ok(())
}
