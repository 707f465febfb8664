//! Latency bookkeeping and the scripted-mission evaluator.

use std::io::{Read, Write};
use std::path::Path;

use nalgebra::Vector2;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dynamics::VehicleState;
use crate::protocol::LatencyProbe;
use crate::scan::WorldModel;

pub const CSV_HEADER: [&str; 4] = ["probe_id", "t_tx_ns", "one_way_ms", "mapping_enabled"];

#[derive(Debug, Error)]
pub enum TelemetryError {
    #[error("latency log is empty")]
    EmptyLog,
    #[error("duplicate probe id {0}")]
    DuplicateProbe(u64),
    #[error("mapping interval [{start_ns}, {end_ns}) is empty or overlaps an existing one")]
    BadInterval { start_ns: u64, end_ns: u64 },
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("csv row {row}: {message}")]
    CsvFormat { row: usize, message: String },
    #[error("trajectory is empty")]
    EmptyTrajectory,
    #[error("trajectory gap of {gap_s} s at t = {at_s} s")]
    TrajectoryGap { at_s: f64, gap_s: f64 },
}

/// Probe log plus the periods during which mapping was running.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct LatencyLog {
    probes: Vec<LatencyProbe>,
    /// Half-open `[start_ns, end_ns)` intervals, sorted.
    mapping_intervals: Vec<(u64, u64)>,
}

impl LatencyLog {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn probes(&self) -> &[LatencyProbe] {
        &self.probes
    }

    pub fn mapping_intervals(&self) -> &[(u64, u64)] {
        &self.mapping_intervals
    }

    pub fn len(&self) -> usize {
        self.probes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probes.is_empty()
    }

    /// Inserts a probe, keeping the log ordered by send time.
    pub fn record(&mut self, probe: LatencyProbe) -> Result<(), TelemetryError> {
        if self.probes.iter().any(|p| p.id == probe.id) {
            return Err(TelemetryError::DuplicateProbe(probe.id));
        }
        let at = self.probes.partition_point(|p| p.t_tx_ns <= probe.t_tx_ns);
        self.probes.insert(at, probe);
        Ok(())
    }

    pub fn add_mapping_interval(&mut self, start_ns: u64, end_ns: u64) -> Result<(), TelemetryError> {
        let overlaps = self
            .mapping_intervals
            .iter()
            .any(|&(s, e)| start_ns < e && s < end_ns);
        if start_ns >= end_ns || overlaps {
            return Err(TelemetryError::BadInterval { start_ns, end_ns });
        }
        let at = self.mapping_intervals.partition_point(|&(s, _)| s < start_ns);
        self.mapping_intervals.insert(at, (start_ns, end_ns));
        Ok(())
    }

    pub fn mapping_enabled_at(&self, t_ns: u64) -> bool {
        self.mapping_intervals.iter().any(|&(s, e)| s <= t_ns && t_ns < e)
    }

    /// Rows as written to CSV.
    pub fn rows(&self) -> Vec<LatencyRow> {
        self.probes
            .iter()
            .map(|p| LatencyRow {
                probe_id: p.id,
                t_tx_ns: p.t_tx_ns,
                one_way_ns: p.one_way_ns(),
                mapping_enabled: self.mapping_enabled_at(p.t_tx_ns),
            })
            .collect()
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<(), TelemetryError> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(CSV_HEADER)?;
        for row in self.rows() {
            out.write_record([
                row.probe_id.to_string(),
                row.t_tx_ns.to_string(),
                format_ms(row.one_way_ns),
                u8::from(row.mapping_enabled).to_string(),
            ])?;
        }
        out.flush().map_err(csv::Error::from)?;
        Ok(())
    }

    pub fn export_csv(&self, path: impl AsRef<Path>) -> Result<(), TelemetryError> {
        let file = std::fs::File::create(path).map_err(csv::Error::from)?;
        self.write_csv(file)
    }
}

/// One CSV row. The latency is kept in integer nanoseconds; the file holds it
/// as milliseconds with six decimals, which is exact.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LatencyRow {
    pub probe_id: u64,
    pub t_tx_ns: u64,
    pub one_way_ns: u64,
    pub mapping_enabled: bool,
}

impl LatencyRow {
    pub fn one_way_ms(&self) -> f64 {
        self.one_way_ns as f64 / 1e6
    }
}

fn format_ms(ns: u64) -> String {
    format!("{}.{:06}", ns / 1_000_000, ns % 1_000_000)
}

fn parse_ms(text: &str) -> Option<u64> {
    let (whole, frac) = text.split_once('.').unwrap_or((text, ""));
    if frac.len() > 6 || !frac.bytes().all(|b| b.is_ascii_digit()) {
        return None;
    }
    let whole: u64 = whole.parse().ok()?;
    let frac: u64 = if frac.is_empty() {
        0
    } else {
        format!("{frac:0<6}").parse().ok()?
    };
    whole.checked_mul(1_000_000)?.checked_add(frac)
}

pub fn read_csv<R: Read>(r: R) -> Result<Vec<LatencyRow>, TelemetryError> {
    let mut rdr = csv::Reader::from_reader(r);
    let header = rdr.headers()?.clone();
    if header.iter().ne(CSV_HEADER) {
        return Err(TelemetryError::CsvFormat {
            row: 0,
            message: format!("unexpected header {:?}", header.iter().collect::<Vec<_>>()),
        });
    }
    let mut rows = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let row = i + 1;
        let err = |message: &str| TelemetryError::CsvFormat {
            row,
            message: message.to_owned(),
        };
        rows.push(LatencyRow {
            probe_id: rec[0].parse().map_err(|_| err("bad probe_id"))?,
            t_tx_ns: rec[1].parse().map_err(|_| err("bad t_tx_ns"))?,
            one_way_ns: parse_ms(&rec[2]).ok_or_else(|| err("bad one_way_ms"))?,
            mapping_enabled: match &rec[3] {
                "0" => false,
                "1" => true,
                _ => return Err(err("mapping_enabled must be 0 or 1")),
            },
        });
    }
    Ok(rows)
}

pub fn import_csv(path: impl AsRef<Path>) -> Result<Vec<LatencyRow>, TelemetryError> {
    let file = std::fs::File::open(path).map_err(csv::Error::from)?;
    read_csv(file)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LatencyStats {
    pub count: usize,
    pub mean_ms: f64,
    pub median_ms: f64,
    pub max_ms: f64,
}

/// Mean, exact median and max of one-way latencies given in ns.
pub fn stats_from_ns(one_way_ns: &[u64]) -> Result<LatencyStats, TelemetryError> {
    if one_way_ns.is_empty() {
        return Err(TelemetryError::EmptyLog);
    }
    let mut sorted = one_way_ns.to_vec();
    sorted.sort_unstable();
    let n = sorted.len();
    let sum: u128 = sorted.iter().map(|&v| v as u128).sum();
    let median_ns = if n % 2 == 1 {
        sorted[n / 2] as f64
    } else {
        (sorted[n / 2 - 1] as f64 + sorted[n / 2] as f64) / 2.0
    };
    Ok(LatencyStats {
        count: n,
        mean_ms: sum as f64 / n as f64 / 1e6,
        median_ms: median_ns / 1e6,
        max_ms: sorted[n - 1] as f64 / 1e6,
    })
}

pub fn latency_stats(log: &LatencyLog) -> Result<LatencyStats, TelemetryError> {
    let ns: Vec<u64> = log.probes.iter().map(|p| p.one_way_ns()).collect();
    stats_from_ns(&ns)
}

/// Pass thresholds for the scripted mission.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MissionCriteria {
    /// m
    pub min_clearance: f64,
    /// m
    pub max_return_error: f64,
    /// m/s
    pub max_touchdown_speed: f64,
    /// Largest allowed spacing between trajectory samples, s.
    pub max_gap: f64,
    /// Altitude at or below which the vehicle counts as on the ground, m.
    pub ground_height: f64,
}

impl Default for MissionCriteria {
    fn default() -> Self {
        Self {
            min_clearance: 0.5,
            max_return_error: 0.10,
            max_touchdown_speed: 0.2,
            max_gap: 0.1,
            ground_height: 0.01,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MissionReport {
    pub min_wall_clearance: f64,
    pub return_error: f64,
    pub touchdown_speed: f64,
    /// False if the trajectory ends in the air.
    pub landed: bool,
    pub max_latency_ms: Option<f64>,
    pub mean_latency_ms: Option<f64>,
    pub median_latency_ms: Option<f64>,
    pub passed: bool,
}

impl MissionReport {
    pub fn with_latency(mut self, stats: &LatencyStats) -> Self {
        self.max_latency_ms = Some(stats.max_ms);
        self.mean_latency_ms = Some(stats.mean_ms);
        self.median_latency_ms = Some(stats.median_ms);
        self
    }
}

/// Scores a recorded flight. The touchdown speed is |ż| of the first sample
/// at or below ground height after the last airborne sample; a trajectory
/// that never leaves the ground has touchdown speed 0.
pub fn evaluate_mission(
    trajectory: &[VehicleState],
    world: &WorldModel,
    criteria: &MissionCriteria,
) -> Result<MissionReport, TelemetryError> {
    let first = trajectory.first().ok_or(TelemetryError::EmptyTrajectory)?;
    for w in trajectory.windows(2) {
        let gap = w[1].time - w[0].time;
        if gap > criteria.max_gap {
            return Err(TelemetryError::TrajectoryGap {
                at_s: w[0].time,
                gap_s: gap,
            });
        }
    }

    let min_wall_clearance = trajectory
        .iter()
        .map(|s| world.obstacle_clearance(&s.position))
        .fold(f64::INFINITY, f64::min);

    let last = trajectory.last().expect("non-empty");
    let horizontal = |s: &VehicleState| Vector2::new(s.position[0], s.position[1]);
    let return_error = (horizontal(last) - horizontal(first)).norm();

    let airborne = |s: &VehicleState| s.position[2] > criteria.ground_height;
    let (landed, touchdown_speed) = match trajectory.iter().rposition(airborne) {
        None => (true, 0.0),
        Some(i) => match trajectory.get(i + 1) {
            Some(s) => (true, s.velocity[2].abs()),
            None => (false, last.velocity[2].abs()),
        },
    };

    let passed = landed
        && min_wall_clearance >= criteria.min_clearance
        && return_error <= criteria.max_return_error
        && touchdown_speed <= criteria.max_touchdown_speed;

    Ok(MissionReport {
        min_wall_clearance,
        return_error,
        touchdown_speed,
        landed,
        max_latency_ms: None,
        mean_latency_ms: None,
        median_latency_ms: None,
        passed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::Vector3;

    fn log_of(ms: &[u64]) -> LatencyLog {
        let mut log = LatencyLog::new();
        for (i, &m) in ms.iter().enumerate() {
            let t = i as u64 * 100_000_000;
            log.record(LatencyProbe::new(i as u64, t, t + 2 * m * 1_000_000).unwrap())
                .unwrap();
        }
        log
    }

    #[test]
    fn stats_examples() {
        let s = latency_stats(&log_of(&[10])).unwrap();
        assert_eq!((s.mean_ms, s.median_ms, s.max_ms), (10.0, 10.0, 10.0));

        let s = latency_stats(&log_of(&[10, 20, 100])).unwrap();
        assert!((s.mean_ms - 130.0 / 3.0).abs() < 1e-12);
        assert_eq!(s.median_ms, 20.0);
        assert_eq!(s.max_ms, 100.0);
        assert!(s.mean_ms > s.median_ms);

        let s = latency_stats(&log_of(&[40, 10, 30, 20])).unwrap();
        assert_eq!(s.median_ms, 25.0);

        assert!(matches!(
            latency_stats(&LatencyLog::new()),
            Err(TelemetryError::EmptyLog)
        ));
    }

    #[test]
    fn log_invariants() {
        let mut log = log_of(&[1, 2]);
        assert!(matches!(
            log.record(LatencyProbe::new(0, 5, 6).unwrap()),
            Err(TelemetryError::DuplicateProbe(0))
        ));
        log.add_mapping_interval(100, 200).unwrap();
        assert!(log.add_mapping_interval(150, 250).is_err());
        assert!(log.add_mapping_interval(300, 300).is_err());
        log.add_mapping_interval(0, 100).unwrap();
        assert_eq!(log.mapping_intervals(), &[(0, 100), (100, 200)]);
        assert!(log.mapping_enabled_at(0) && log.mapping_enabled_at(199));
        assert!(!log.mapping_enabled_at(200));
    }

    #[test]
    fn csv_round_trip() {
        let mut log = LatencyLog::new();
        log.record(LatencyProbe::new(7, 1_000, 1_000 + 2 * 1_234_567).unwrap())
            .unwrap();
        log.record(LatencyProbe::new(3, 10, 13).unwrap()).unwrap();
        log.add_mapping_interval(0, 500).unwrap();
        let mut buf = Vec::new();
        log.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert_eq!(
            text,
            "probe_id,t_tx_ns,one_way_ms,mapping_enabled\n3,10,0.000001,1\n7,1000,1.234567,0\n"
        );
        assert_eq!(read_csv(buf.as_slice()).unwrap(), log.rows());
    }

    #[test]
    fn csv_rejects_garbage() {
        assert!(read_csv("a,b\n1,2\n".as_bytes()).is_err());
        assert!(read_csv("probe_id,t_tx_ns,one_way_ms,mapping_enabled\n1,2,0.5,2\n".as_bytes()).is_err());
        assert!(read_csv("probe_id,t_tx_ns,one_way_ms,mapping_enabled\n1,2,1e3,0\n".as_bytes()).is_err());
        assert_eq!(parse_ms("12"), Some(12_000_000));
        assert_eq!(parse_ms("0.5"), Some(500_000));
        assert_eq!(parse_ms("0.1234567"), None);
    }

    fn sample(t: f64, x: f64, z: f64, vz: f64) -> VehicleState {
        let mut s = VehicleState::at_rest(Vector3::new(x, 0.0, z));
        s.velocity[2] = vz;
        s.time = t;
        s
    }

    #[test]
    fn stationary_vehicle() {
        let traj: Vec<_> = (0..20).map(|i| sample(i as f64 * 0.05, 0.0, 0.0, 0.0)).collect();
        let r = evaluate_mission(&traj, &WorldModel::wall(), &MissionCriteria::default()).unwrap();
        assert!((r.min_wall_clearance - 4.8).abs() < 1e-12);
        assert_eq!(r.return_error, 0.0);
        assert!(r.landed && r.passed);
    }

    #[test]
    fn mission_failures() {
        let world = WorldModel::wall();
        let c = MissionCriteria::default();
        let ends_airborne = vec![sample(0.0, 0.0, 0.0, 0.0), sample(0.05, 0.0, 1.0, 0.0)];
        assert!(!evaluate_mission(&ends_airborne, &world, &c).unwrap().passed);

        let hard_landing = vec![
            sample(0.0, 0.0, 0.5, -1.0),
            sample(0.05, 0.0, 0.0, -0.9),
            sample(0.1, 0.0, 0.0, 0.0),
        ];
        let r = evaluate_mission(&hard_landing, &world, &c).unwrap();
        assert_eq!(r.touchdown_speed, 0.9);
        assert!(!r.passed);

        let gap = vec![sample(0.0, 0.0, 0.0, 0.0), sample(0.5, 0.0, 0.0, 0.0)];
        assert!(matches!(
            evaluate_mission(&gap, &world, &c),
            Err(TelemetryError::TrajectoryGap { .. })
        ));
        assert!(matches!(
            evaluate_mission(&[], &world, &c),
            Err(TelemetryError::EmptyTrajectory)
        ));
    }
}
