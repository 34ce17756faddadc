//! Travel-time acquisition: an interval scheduler issuing
//! origin-destination duration queries against a pluggable directions
//! provider. The shipped provider replays durations from a file keyed by
//! (combined site id, query timestamp); live credentialed providers can
//! implement the same one-method trait.

use std::collections::HashMap;
use std::io::{Read, Write};
use std::str::FromStr;

use chrono::{Duration, NaiveDateTime};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::RowError;
use crate::types::{LatLon, SiteKey, SiteMetadata, TravelTimeRecord};

/// One origin-destination pair to query repeatedly.
#[derive(Debug, Clone, PartialEq)]
pub struct OdPair {
    pub site: SiteKey,
    pub origin: LatLon,
    pub destination: LatLon,
}

/// A deterministic query schedule: every site is queried at every fire
/// time, where fire times step from `start` by `interval_s` while strictly
/// before `end`.
#[derive(Debug, Clone)]
pub struct HarvestPlan {
    pub od_pairs: Vec<OdPair>,
    pub interval_s: u32,
    pub start: NaiveDateTime,
    pub end: NaiveDateTime,
}

impl HarvestPlan {
    pub fn fire_times(&self) -> Vec<NaiveDateTime> {
        let mut times = Vec::new();
        let mut t = self.start;
        while t < self.end {
            times.push(t);
            t += Duration::seconds(self.interval_s as i64);
        }
        times
    }

    pub fn query_count(&self) -> usize {
        self.od_pairs.len() * self.fire_times().len()
    }
}

/// Builds a harvest plan covering `[start, end)` at the given interval for
/// every site in the catalog. The interval must divide one hour evenly so
/// that every query maps cleanly onto an hourly pairing bucket.
pub fn plan_requests(
    catalog: &[SiteMetadata],
    interval_s: u32,
    start: NaiveDateTime,
    end: NaiveDateTime,
) -> Result<HarvestPlan> {
    if catalog.is_empty() {
        return Err(Error::EmptyCatalog);
    }
    if interval_s == 0 || 3600 % interval_s != 0 {
        return Err(Error::BadInterval(interval_s as i64));
    }
    if end <= start {
        return Err(Error::BadHorizon {
            start: start.to_string(),
            end: end.to_string(),
        });
    }
    let od_pairs = catalog
        .iter()
        .map(|m| OdPair {
            site: m.site,
            origin: m.origin,
            destination: m.destination,
        })
        .collect();
    Ok(HarvestPlan {
        od_pairs,
        interval_s,
        start,
        end,
    })
}

/// Why a single query produced no duration.
#[derive(Debug, Clone, PartialEq)]
pub enum ProviderError {
    /// The provider has no answer for this query (a gap, not a fault).
    Miss,
    Failure(String),
}

/// The one operation a directions backend must support: duration in
/// seconds for a departure at the given time.
pub trait DirectionsProvider {
    fn duration_s(
        &self,
        origin: LatLon,
        destination: LatLon,
        departure: NaiveDateTime,
    ) -> std::result::Result<f64, ProviderError>;
}

fn coord_key(origin: LatLon, destination: LatLon) -> [u64; 4] {
    [
        origin.lat.to_bits(),
        origin.lon.to_bits(),
        destination.lat.to_bits(),
        destination.lon.to_bits(),
    ]
}

/// Read-only provider backed by a replay file of
/// `(combined_id, timestamp, duration)` rows. Origin/destination pairs are
/// resolved to sites through the same metadata catalog the plan was built
/// from, so coordinates match bit-exactly.
pub struct ReplayProvider {
    site_by_od: HashMap<[u64; 4], SiteKey>,
    duration_by_query: HashMap<(SiteKey, NaiveDateTime), f64>,
}

impl ReplayProvider {
    pub fn new(catalog: &[SiteMetadata], records: &[TravelTimeRecord]) -> Self {
        let site_by_od = catalog
            .iter()
            .map(|m| (coord_key(m.origin, m.destination), m.site))
            .collect();
        let duration_by_query = records
            .iter()
            .map(|r| ((r.site, r.query_timestamp), r.duration_s))
            .collect();
        ReplayProvider {
            site_by_od,
            duration_by_query,
        }
    }
}

impl DirectionsProvider for ReplayProvider {
    fn duration_s(
        &self,
        origin: LatLon,
        destination: LatLon,
        departure: NaiveDateTime,
    ) -> std::result::Result<f64, ProviderError> {
        let site = self
            .site_by_od
            .get(&coord_key(origin, destination))
            .ok_or(ProviderError::Miss)?;
        self.duration_by_query
            .get(&(*site, departure))
            .copied()
            .ok_or(ProviderError::Miss)
    }
}

/// Records harvested by a plan run, plus the queries that produced nothing.
#[derive(Debug, Default)]
pub struct HarvestOutcome {
    /// Ordered by (site, query timestamp).
    pub records: Vec<TravelTimeRecord>,
    pub misses: Vec<(SiteKey, NaiveDateTime)>,
}

/// Runs every planned query against the provider. Misses are data, not
/// errors: they are counted and skipped, with no retries. The output order
/// is (site, timestamp) regardless of schedule order, so results do not
/// depend on how queries were interleaved.
pub fn execute_plan(plan: &HarvestPlan, provider: &dyn DirectionsProvider) -> HarvestOutcome {
    let mut outcome = HarvestOutcome::default();
    let mut pairs: Vec<&OdPair> = plan.od_pairs.iter().collect();
    pairs.sort_by_key(|p| p.site);
    for pair in pairs {
        for fire_time in plan.fire_times() {
            match provider.duration_s(pair.origin, pair.destination, fire_time) {
                Ok(duration_s) => outcome.records.push(TravelTimeRecord {
                    site: pair.site,
                    query_timestamp: fire_time,
                    duration_s,
                }),
                Err(_) => outcome.misses.push((pair.site, fire_time)),
            }
        }
    }
    outcome
}

const RESPONSE_PATH: &str = "routes[0].legs[0].duration_in_traffic.value";

/// Extracts the duration-in-traffic value, in whole seconds, from a
/// provider JSON response document.
pub fn parse_provider_response(raw: &str) -> Result<u32> {
    let doc: serde_json::Value =
        serde_json::from_str(raw).map_err(|e| Error::ProviderResponse {
            path: RESPONSE_PATH.to_string(),
            message: format!("invalid JSON: {e}"),
        })?;
    let value = doc
        .pointer("/routes/0/legs/0/duration_in_traffic/value")
        .ok_or_else(|| Error::ProviderResponse {
            path: RESPONSE_PATH.to_string(),
            message: "field missing".to_string(),
        })?;
    let seconds = value.as_f64().ok_or_else(|| Error::ProviderResponse {
        path: RESPONSE_PATH.to_string(),
        message: format!("expected a number, got {value}"),
    })?;
    if !seconds.is_finite() || seconds <= 0.0 {
        return Err(Error::ProviderResponse {
            path: RESPONSE_PATH.to_string(),
            message: format!("duration must be positive, got {seconds}"),
        });
    }
    Ok(seconds.round() as u32)
}

#[derive(Debug, Deserialize, Serialize)]
struct TravelTimeRow {
    combined_id: String,
    timestamp_iso8601: String,
    duration_s: f64,
}

/// Parses a travel-time/replay CSV
/// (`combined_id,timestamp_iso8601,duration_s`), collecting malformed rows
/// with line numbers like the counter parser does.
pub fn parse_travel_times<R: Read>(reader: R) -> Result<(Vec<TravelTimeRecord>, Vec<RowError>)> {
    let mut csv_reader = csv::Reader::from_reader(reader);
    let mut records = Vec::new();
    let mut errors = Vec::new();
    for row in csv_reader.deserialize::<TravelTimeRow>() {
        let line = records.len() as u64 + errors.len() as u64 + 2;
        match row {
            Ok(raw) => match travel_time_row(&raw) {
                Ok(record) => records.push(record),
                Err(e) => errors.push(RowError {
                    line,
                    message: e.to_string(),
                }),
            },
            Err(e) => errors.push(RowError {
                line: e.position().map(|p| p.line()).unwrap_or(line),
                message: e.to_string(),
            }),
        }
    }
    Ok((records, errors))
}

fn travel_time_row(raw: &TravelTimeRow) -> Result<TravelTimeRecord> {
    let site = SiteKey::from_str(&raw.combined_id)?;
    let query_timestamp = NaiveDateTime::parse_from_str(&raw.timestamp_iso8601, "%Y-%m-%dT%H:%M:%S")
        .map_err(|e| Error::Row {
            line: 0,
            message: format!("bad timestamp '{}': {e}", raw.timestamp_iso8601),
        })?;
    if !(raw.duration_s.is_finite() && raw.duration_s > 0.0) {
        return Err(Error::Row {
            line: 0,
            message: format!("duration must be positive, got {}", raw.duration_s),
        });
    }
    Ok(TravelTimeRecord {
        site,
        query_timestamp,
        duration_s: raw.duration_s,
    })
}

/// Writes travel-time records in the replay CSV format.
pub fn write_travel_time_csv<W: Write>(writer: W, records: &[TravelTimeRecord]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    for record in records {
        w.serialize(TravelTimeRow {
            combined_id: record.site.to_string(),
            timestamp_iso8601: record
                .query_timestamp
                .format("%Y-%m-%dT%H:%M:%S")
                .to_string(),
            duration_s: record.duration_s,
        })?;
    }
    w.flush().map_err(|e| Error::io("<travel time csv>", e))?;
    Ok(())
}
