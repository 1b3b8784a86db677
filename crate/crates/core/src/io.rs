//! CSV files exchanged between commands. One header line, SI units,
//! timestamps in seconds; floats are written in shortest round-trip form so
//! reading a file back reproduces the values exactly.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use nalgebra::Vector2;

use crate::error::IoError;
use crate::evaluation::{CalibRow, CalibTrace, TrajectoryLog, TrajectoryRow};
use crate::gps::GpsMeasurement;
use crate::observability::AnalysisState;
use crate::propagation::ImuSample;
use crate::sim::{CameraFrame, MeasurementStream};
use crate::so3::{Mat3, Quaternion, Vec3};
use crate::state::ImuState;

pub const IMU_HEADER: &[&str] = &["t", "wx", "wy", "wz", "ax", "ay", "az"];
pub const GPS_HEADER: &[&str] = &["t", "x", "y", "z", "sxx", "syy", "szz"];
pub const FEATURES_HEADER: &[&str] = &["t", "feature_id", "u", "v"];
pub const FRAMES_HEADER: &[&str] = &["t"];
pub const TRAJ_HEADER: &[&str] = &["t", "x", "y", "z", "qx", "qy", "qz", "qw"];
pub const CALIB_HEADER: &[&str] = &["t", "psi", "sigma_psi", "pevx", "pevy", "pevz", "tg"];
pub const STATE_HEADER: &[&str] = &[
    "t", "qx", "qy", "qz", "qw", "px", "py", "pz", "vx", "vy", "vz", "bgx", "bgy", "bgz", "bax", "bay", "baz",
];

pub const ANALYSIS_HEADER: &[&str] = &[
    "t", "qx", "qy", "qz", "qw", "vx", "vy", "vz", "px", "py", "pz", "fx", "fy", "fz", "psi", "pevx", "pevy", "pevz",
];

pub const IMU_FILE: &str = "imu.csv";
pub const GPS_FILE: &str = "gps.csv";
pub const FEATURES_FILE: &str = "features.csv";
pub const FRAMES_FILE: &str = "frames.csv";
pub const INIT_FILE: &str = "init.csv";

/// Rows of a CSV file as raw fields, with the file path for error messages.
struct Table {
    path: String,
    header: Vec<String>,
    rows: Vec<(usize, Vec<String>)>,
}

impl Table {
    fn read(path: &Path, expected: &[&str]) -> Result<Self, IoError> {
        let name = path.display().to_string();
        let text = fs::read_to_string(path).map_err(|source| IoError::File {
            path: name.clone(),
            source,
        })?;
        let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
        let header: Vec<String> = match lines.next() {
            Some((_, l)) => l.split(',').map(|s| s.trim().to_string()).collect(),
            None => {
                return Err(IoError::Parse {
                    path: name,
                    row: 1,
                    field: "header".into(),
                    reason: "file is empty".into(),
                })
            }
        };
        if header != expected {
            return Err(IoError::Parse {
                path: name,
                row: 1,
                field: "header".into(),
                reason: format!("expected `{}`", expected.join(",")),
            });
        }
        let mut rows = Vec::new();
        for (i, l) in lines {
            let fields: Vec<String> = l.split(',').map(|s| s.trim().to_string()).collect();
            if fields.len() != header.len() {
                return Err(IoError::Parse {
                    path: name,
                    row: i + 1,
                    field: "*".into(),
                    reason: format!("expected {} fields, found {}", header.len(), fields.len()),
                });
            }
            rows.push((i + 1, fields));
        }
        Ok(Self {
            path: name,
            header,
            rows,
        })
    }

    fn error(&self, row: usize, col: usize, reason: &str) -> IoError {
        IoError::Parse {
            path: self.path.clone(),
            row,
            field: self.header[col].clone(),
            reason: reason.into(),
        }
    }

    fn parse<T: std::str::FromStr>(&self, row: usize, fields: &[String], col: usize) -> Result<T, IoError> {
        fields[col]
            .parse()
            .map_err(|_| self.error(row, col, &format!("cannot parse `{}`", fields[col])))
    }

    /// Parses every row as finite floats.
    fn floats(&self) -> Result<Vec<(usize, Vec<f64>)>, IoError> {
        self.rows
            .iter()
            .map(|(row, fields)| {
                let vals = (0..fields.len())
                    .map(|c| {
                        let v: f64 = self.parse(*row, fields, c)?;
                        if v.is_finite() {
                            Ok(v)
                        } else {
                            Err(self.error(*row, c, "not finite"))
                        }
                    })
                    .collect::<Result<Vec<_>, _>>()?;
                Ok((*row, vals))
            })
            .collect()
    }

    /// Errors unless the first column strictly increases.
    fn check_increasing(&self, rows: &[(usize, Vec<f64>)]) -> Result<(), IoError> {
        for w in rows.windows(2) {
            if w[1].1[0] <= w[0].1[0] {
                return Err(self.error(w[1].0, 0, "timestamps must strictly increase"));
            }
        }
        Ok(())
    }
}

fn write_rows(path: &Path, header: &[&str], rows: impl IntoIterator<Item = String>) -> Result<(), IoError> {
    let mut out = header.join(",");
    out.push('\n');
    for r in rows {
        out.push_str(&r);
        out.push('\n');
    }
    fs::write(path, out).map_err(|source| IoError::File {
        path: path.display().to_string(),
        source,
    })
}

fn join(values: &[f64]) -> String {
    let mut s = String::new();
    for (i, v) in values.iter().enumerate() {
        if i > 0 {
            s.push(',');
        }
        write!(s, "{v}").expect("writing to a String");
    }
    s
}

fn v3(r: &[f64], i: usize) -> Vec3 {
    Vec3::new(r[i], r[i + 1], r[i + 2])
}

pub fn write_stream(dir: &Path, stream: &MeasurementStream) -> Result<(), IoError> {
    write_rows(
        &dir.join(IMU_FILE),
        IMU_HEADER,
        stream
            .imu
            .iter()
            .map(|s| join(&[s.t, s.omega.x, s.omega.y, s.omega.z, s.accel.x, s.accel.y, s.accel.z])),
    )?;
    write_gps(&dir.join(GPS_FILE), &stream.gps)?;
    write_rows(
        &dir.join(FRAMES_FILE),
        FRAMES_HEADER,
        stream.frames.iter().map(|f| join(&[f.t])),
    )?;
    write_rows(
        &dir.join(FEATURES_FILE),
        FEATURES_HEADER,
        stream.frames.iter().flat_map(|f| {
            f.features
                .iter()
                .map(move |(id, uv)| format!("{},{id},{},{}", f.t, uv.x, uv.y))
        }),
    )
}

pub fn write_gps(path: &Path, gps: &[GpsMeasurement]) -> Result<(), IoError> {
    write_rows(
        path,
        GPS_HEADER,
        gps.iter().map(|m| {
            join(&[
                m.t,
                m.p_eg.x,
                m.p_eg.y,
                m.p_eg.z,
                m.cov[(0, 0)],
                m.cov[(1, 1)],
                m.cov[(2, 2)],
            ])
        }),
    )
}

pub fn read_gps(path: &Path) -> Result<Vec<GpsMeasurement>, IoError> {
    let table = Table::read(path, GPS_HEADER)?;
    let rows = table.floats()?;
    let mut out = Vec::with_capacity(rows.len());
    for (row, r) in &rows {
        if let Some(c) = (4..7).find(|&c| r[c] < 0.0) {
            return Err(table.error(*row, c, "variance must be non-negative"));
        }
        out.push(GpsMeasurement {
            t: r[0],
            p_eg: v3(r, 1),
            cov: Mat3::from_diagonal(&v3(r, 4)),
        });
    }
    Ok(out)
}

/// Reads the stream files written by [`write_stream`]. Features whose time
/// matches no frame are an error.
pub fn read_stream(dir: &Path) -> Result<MeasurementStream, IoError> {
    let imu_table = Table::read(&dir.join(IMU_FILE), IMU_HEADER)?;
    let imu_rows = imu_table.floats()?;
    imu_table.check_increasing(&imu_rows)?;
    let imu = imu_rows
        .iter()
        .map(|(_, r)| ImuSample {
            t: r[0],
            omega: v3(r, 1),
            accel: v3(r, 4),
        })
        .collect();
    let gps = read_gps(&dir.join(GPS_FILE))?;

    let frame_table = Table::read(&dir.join(FRAMES_FILE), FRAMES_HEADER)?;
    let frame_rows = frame_table.floats()?;
    frame_table.check_increasing(&frame_rows)?;
    let mut frames: Vec<CameraFrame> = frame_rows
        .iter()
        .map(|(_, r)| CameraFrame {
            t: r[0],
            features: Vec::new(),
        })
        .collect();

    let feat = Table::read(&dir.join(FEATURES_FILE), FEATURES_HEADER)?;
    let mut cursor = 0;
    for (row, fields) in &feat.rows {
        let t: f64 = feat.parse(*row, fields, 0)?;
        let id: u64 = feat.parse(*row, fields, 1)?;
        let u: f64 = feat.parse(*row, fields, 2)?;
        let v: f64 = feat.parse(*row, fields, 3)?;
        while cursor < frames.len() && frames[cursor].t < t {
            cursor += 1;
        }
        match frames.get_mut(cursor) {
            Some(f) if f.t == t => f.features.push((id, Vector2::new(u, v))),
            _ => return Err(feat.error(*row, 0, "no frame at this time (rows must be time-ordered)")),
        }
    }
    Ok(MeasurementStream { imu, frames, gps })
}

pub fn write_imu_states(path: &Path, states: &[ImuState]) -> Result<(), IoError> {
    write_rows(
        path,
        STATE_HEADER,
        states.iter().map(|s| {
            let q = s.q_vi;
            join(&[
                s.t, q.x, q.y, q.z, q.w, s.p_vi.x, s.p_vi.y, s.p_vi.z, s.v_vi.x, s.v_vi.y, s.v_vi.z, s.b_g.x, s.b_g.y,
                s.b_g.z, s.b_a.x, s.b_a.y, s.b_a.z,
            ])
        }),
    )
}

pub fn read_imu_states(path: &Path) -> Result<Vec<ImuState>, IoError> {
    let table = Table::read(path, STATE_HEADER)?;
    let rows = table.floats()?;
    table.check_increasing(&rows)?;
    rows.iter()
        .map(|(row, r)| {
            Ok(ImuState {
                t: r[0],
                q_vi: unit_quaternion(&table, *row, r, 1)?,
                p_vi: v3(r, 5),
                v_vi: v3(r, 8),
                b_g: v3(r, 11),
                b_a: v3(r, 14),
            })
        })
        .collect()
}

fn unit_quaternion(table: &Table, row: usize, r: &[f64], i: usize) -> Result<Quaternion, IoError> {
    let q = Quaternion::new(r[i], r[i + 1], r[i + 2], r[i + 3]);
    let n = (q.x * q.x + q.y * q.y + q.z * q.z + q.w * q.w).sqrt();
    if (n - 1.0).abs() > 1e-6 {
        return Err(table.error(row, i + 3, &format!("quaternion norm {n} is not 1")));
    }
    Ok(if (n - 1.0).abs() < 1e-12 { q } else { q.normalize() })
}

pub fn write_trajectory(path: &Path, log: &TrajectoryLog) -> Result<(), IoError> {
    write_rows(
        path,
        TRAJ_HEADER,
        log.rows()
            .iter()
            .map(|r| join(&[r.t, r.p.x, r.p.y, r.p.z, r.q.x, r.q.y, r.q.z, r.q.w])),
    )
}

pub fn read_trajectory(path: &Path) -> Result<TrajectoryLog, IoError> {
    let table = Table::read(path, TRAJ_HEADER)?;
    let rows = table.floats()?;
    table.check_increasing(&rows)?;
    let rows = rows
        .iter()
        .map(|(row, r)| Ok(TrajectoryRow::new(r[0], v3(r, 1), unit_quaternion(&table, *row, r, 4)?)))
        .collect::<Result<Vec<_>, IoError>>()?;
    Ok(TrajectoryLog::new(rows).expect("checked increasing"))
}

/// GPS fixes as a position-only trajectory (identity attitude).
pub fn gps_as_trajectory(gps: &[GpsMeasurement]) -> TrajectoryLog {
    let mut rows: Vec<TrajectoryRow> = gps
        .iter()
        .map(|m| TrajectoryRow::new(m.t, m.p_eg, Quaternion::identity()))
        .collect();
    rows.sort_by(|a, b| a.t.total_cmp(&b.t));
    rows.dedup_by(|a, b| a.t == b.t);
    TrajectoryLog::new(rows).expect("sorted and deduplicated")
}

pub fn write_calib(path: &Path, trace: &CalibTrace) -> Result<(), IoError> {
    write_rows(
        path,
        CALIB_HEADER,
        trace
            .rows()
            .iter()
            .map(|r| join(&[r.t, r.psi, r.sigma_psi, r.p_ev.x, r.p_ev.y, r.p_ev.z, r.t_g])),
    )
}

pub fn read_calib(path: &Path) -> Result<CalibTrace, IoError> {
    let table = Table::read(path, CALIB_HEADER)?;
    let rows = table.floats()?;
    table.check_increasing(&rows)?;
    let mut out = Vec::with_capacity(rows.len());
    for (row, r) in &rows {
        if r[2] < 0.0 {
            return Err(table.error(*row, 2, "standard deviation must be non-negative"));
        }
        out.push(CalibRow {
            t: r[0],
            psi: r[1],
            sigma_psi: r[2],
            p_ev: v3(r, 3),
            t_g: r[6],
        });
    }
    Ok(CalibTrace::new(out).expect("checked increasing"))
}

/// Estimated trajectory or raw GPS fixes, told apart by the header. The
/// flag is false for GPS input, which carries no attitude.
pub fn read_positions(path: &Path) -> Result<(TrajectoryLog, bool), IoError> {
    let first = read_text(path)?.lines().next().unwrap_or("").replace(' ', "");
    if first == GPS_HEADER.join(",") {
        Ok((gps_as_trajectory(&read_gps(path)?), false))
    } else {
        Ok((read_trajectory(path)?, true))
    }
}

/// Time-stamped observability analysis points.
pub fn read_analysis_states(path: &Path) -> Result<Vec<(f64, AnalysisState)>, IoError> {
    let table = Table::read(path, ANALYSIS_HEADER)?;
    let rows = table.floats()?;
    rows.iter()
        .map(|(row, r)| {
            Ok((
                r[0],
                AnalysisState {
                    q_vi: unit_quaternion(&table, *row, r, 1)?,
                    v_vi: v3(r, 5),
                    p_vi: v3(r, 8),
                    p_f: v3(r, 11),
                    psi: r[14],
                    p_ev: v3(r, 15),
                },
            ))
        })
        .collect()
}

pub fn write_analysis_states(path: &Path, states: &[(f64, AnalysisState)]) -> Result<(), IoError> {
    write_rows(
        path,
        ANALYSIS_HEADER,
        states.iter().map(|(t, s)| {
            let q = s.q_vi;
            join(&[
                *t, q.x, q.y, q.z, q.w, s.v_vi.x, s.v_vi.y, s.v_vi.z, s.p_vi.x, s.p_vi.y, s.p_vi.z, s.p_f.x, s.p_f.y,
                s.p_f.z, s.psi, s.p_ev.x, s.p_ev.y, s.p_ev.z,
            ])
        }),
    )
}

/// Writes `text` to `path`, naming the path on failure.
pub fn write_text(path: &Path, text: &str) -> Result<(), IoError> {
    fs::write(path, text).map_err(|source| IoError::File {
        path: path.display().to_string(),
        source,
    })
}

pub fn read_text(path: &Path) -> Result<String, IoError> {
    fs::read_to_string(path).map_err(|source| IoError::File {
        path: path.display().to_string(),
        source,
    })
}

pub fn create_dir(path: &Path) -> Result<(), IoError> {
    fs::create_dir_all(path).map_err(|source| IoError::File {
        path: path.display().to_string(),
        source,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::{generate_streams, SensorConfig, TrajectoryModel};

    #[test]
    fn stream_round_trips_exactly() {
        let dir = tempfile::tempdir().unwrap();
        let sim = generate_streams(&TrajectoryModel::sinusoid(2.0), &SensorConfig::euroc_sim()).unwrap();
        write_stream(dir.path(), &sim.stream).unwrap();
        let back = read_stream(dir.path()).unwrap();
        assert_eq!(back, sim.stream);
    }

    #[test]
    fn states_and_logs_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let sim = generate_streams(&TrajectoryModel::sinusoid(1.0), &SensorConfig::euroc_sim()).unwrap();
        let states: Vec<ImuState> = sim.groundtruth.iter().map(|g| g.imu_state()).collect();
        let p = dir.path().join("gt.csv");
        write_imu_states(&p, &states).unwrap();
        assert_eq!(read_imu_states(&p).unwrap(), states);

        let log = TrajectoryLog::new(states.iter().map(|s| TrajectoryRow::new(s.t, s.p_vi, s.q_vi)).collect()).unwrap();
        let p = dir.path().join("traj.csv");
        write_trajectory(&p, &log).unwrap();
        let back = read_trajectory(&p).unwrap();
        assert_eq!(back.rows().len(), log.rows().len());
        assert_eq!(back.rows()[7].p, log.rows()[7].p);
    }

    #[test]
    fn empty_files_keep_headers() {
        let dir = tempfile::tempdir().unwrap();
        write_stream(dir.path(), &MeasurementStream::default()).unwrap();
        let text = fs::read_to_string(dir.path().join(GPS_FILE)).unwrap();
        assert_eq!(text, "t,x,y,z,sxx,syy,szz\n");
        assert_eq!(read_stream(dir.path()).unwrap(), MeasurementStream::default());
    }

    #[test]
    fn errors_name_path_row_and_field() {
        let dir = tempfile::tempdir().unwrap();
        let missing = dir.path().join("nope.csv");
        let e = read_gps(&missing).unwrap_err();
        assert!(e.to_string().contains("nope.csv"));

        let p = dir.path().join("gps.csv");
        fs::write(&p, "t,x,y,z,sxx,syy,szz\n0,1,2,3,1,1,1\n0.1,1,two,3,1,1,1\n").unwrap();
        let e = read_gps(&p).unwrap_err().to_string();
        assert!(e.contains("row 3") && e.contains("`y`"), "{e}");

        fs::write(&p, "t,x,y\n").unwrap();
        assert!(read_gps(&p).unwrap_err().to_string().contains("header"));
    }
}
