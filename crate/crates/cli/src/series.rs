//! Plot-ready CSV rows built from simulation metrics.

use fleetgame_core::simulator::{SimMetrics, Stat};
use serde::Serialize;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SeriesKind {
    Cruising,
    ZoneSeries,
}

/// Mean cruising taxi-hours per reporting period, with the standard error
/// over replications.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CruisingRow {
    pub period: usize,
    pub policy: String,
    pub mean_cruising_hours: f64,
    pub stderr: f64,
}

/// Per-zone trips and mean cruising taxis per interval, averaged over
/// replications.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ZoneRow {
    pub zone: String,
    pub interval: usize,
    pub trips: f64,
    pub cruising_taxis: f64,
    pub policy: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricsRow {
    pub policy: String,
    pub replication: usize,
    pub cruising_minutes: f64,
    pub occupied_minutes: f64,
    pub rest_minutes: f64,
    pub trips_served: u64,
    pub arrivals: u64,
    pub mean_wait: f64,
    pub unserved: u64,
}

pub fn metrics_rows(policy: &str, runs: &[SimMetrics]) -> Vec<MetricsRow> {
    runs.iter()
        .map(|m| MetricsRow {
            policy: policy.to_string(),
            replication: m.replication,
            cruising_minutes: m.cruising_minutes,
            occupied_minutes: m.occupied_minutes,
            rest_minutes: m.rest_minutes,
            trips_served: m.trips_served,
            arrivals: m.arrivals,
            mean_wait: m.mean_wait,
            unserved: m.unserved,
        })
        .collect()
}

pub fn cruising_rows(policy: &str, runs: &[SimMetrics]) -> Vec<CruisingRow> {
    let periods = runs.first().map_or(0, |m| m.cruising_by_interval.len());
    (0..periods)
        .map(|i| {
            let hours: Vec<f64> = runs.iter().map(|m| m.cruising_by_interval[i] / 60.0).collect();
            let st = Stat::of(&hours);
            CruisingRow {
                period: i,
                policy: policy.to_string(),
                mean_cruising_hours: st.mean,
                stderr: st.stderr,
            }
        })
        .collect()
}

pub fn zone_rows(policy: &str, runs: &[SimMetrics], zones: &[String]) -> Vec<ZoneRow> {
    let Some(first) = runs.first() else { return Vec::new() };
    let k = runs.len() as f64;
    first
        .zone_series
        .iter()
        .enumerate()
        .map(|(j, z)| ZoneRow {
            zone: zones[z.zone].clone(),
            interval: z.interval,
            trips: runs.iter().map(|m| m.zone_series[j].trips as f64).sum::<f64>() / k,
            cruising_taxis: runs.iter().map(|m| m.zone_series[j].cruising_taxis).sum::<f64>() / k,
            policy: policy.to_string(),
        })
        .collect()
}

/// CSV for one series kind over several policies' runs.
pub fn emit_series(runs: &[(String, Vec<SimMetrics>)], kind: SeriesKind, zones: &[String]) -> Vec<u8> {
    match kind {
        SeriesKind::Cruising => {
            let rows: Vec<CruisingRow> = runs.iter().flat_map(|(p, r)| cruising_rows(p, r)).collect();
            crate::artifacts::csv_bytes(&rows)
        }
        SeriesKind::ZoneSeries => {
            let rows: Vec<ZoneRow> = runs.iter().flat_map(|(p, r)| zone_rows(p, r, zones)).collect();
            crate::artifacts::csv_bytes(&rows)
        }
    }
}
