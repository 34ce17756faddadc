//! Raw data ingestion: counter CSV parsing, hourly aggregation of
//! per-vehicle records, site metadata loading and the (volume, travel time)
//! pairing join.
//!
//! Hour convention: a record belongs to the hour interval it falls in,
//! where hour `h` is the half-open interval ((h-1):00:00, h:00:00]. A
//! timestamp exactly on an hour boundary belongs to the ending interval,
//! and 00:00:00 maps to hour 1.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::str::FromStr;

use chrono::{NaiveDate, NaiveTime, Timelike};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::{
    Direction, HourlyVolume, LatLon, PairedObservation, RoadClass, SiteKey, SiteMetadata,
    TravelTimeRecord, VehicleRecord,
};

/// A malformed input row, reported with its 1-based line number.
#[derive(Debug, Clone, PartialEq)]
pub struct RowError {
    pub line: u64,
    pub message: String,
}

/// Outcome of a lenient parse: valid rows plus per-row errors.
#[derive(Debug, Default)]
pub struct ParsedRecords {
    pub records: Vec<VehicleRecord>,
    pub errors: Vec<RowError>,
}

#[derive(Debug, Deserialize)]
struct CounterRow {
    site: u32,
    direction: String,
    date: String,
    time: String,
    speed: f64,
}

/// Parses the counter CSV (`site,direction,date,time,speed`). Malformed
/// rows are collected with line numbers rather than aborting the parse;
/// empty input yields an empty record set.
pub fn parse_vehicle_records<R: Read>(reader: R) -> Result<ParsedRecords> {
    let mut csv_reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_reader(reader);
    let mut out = ParsedRecords::default();
    for row in csv_reader.deserialize::<CounterRow>() {
        match row {
            Ok(raw) => {
                let line = out.records.len() as u64 + out.errors.len() as u64 + 2;
                match counter_row_to_record(&raw) {
                    Ok(record) => out.records.push(record),
                    Err(e) => out.errors.push(RowError {
                        line,
                        message: e.to_string(),
                    }),
                }
            }
            Err(e) => {
                let line = e
                    .position()
                    .map(|p| p.line())
                    .unwrap_or(out.records.len() as u64 + out.errors.len() as u64 + 2);
                out.errors.push(RowError {
                    line,
                    message: e.to_string(),
                });
            }
        }
    }
    Ok(out)
}

fn counter_row_to_record(row: &CounterRow) -> Result<VehicleRecord> {
    let direction = Direction::from_str(&row.direction)?;
    let date = parse_date(&row.date)?;
    let time = NaiveTime::parse_from_str(&row.time, "%H:%M:%S").map_err(|e| Error::Row {
        line: 0,
        message: format!("bad time '{}': {e}", row.time),
    })?;
    if !(row.speed.is_finite() && row.speed >= 0.0) {
        return Err(Error::Row {
            line: 0,
            message: format!("negative or non-finite speed {}", row.speed),
        });
    }
    Ok(VehicleRecord {
        site_id: row.site,
        direction,
        date,
        time_of_day: time.num_seconds_from_midnight(),
        point_speed: row.speed,
    })
}

pub(crate) fn parse_date(s: &str) -> Result<NaiveDate> {
    NaiveDate::parse_from_str(s, "%Y-%m-%d").map_err(|e| Error::Row {
        line: 0,
        message: format!("bad date '{s}': {e}"),
    })
}

/// Maps seconds since midnight to the 1..=24 hour bucket whose boundary the
/// interval ends at: second 0 maps to hour 1, 32400 (09:00:00) to hour 9,
/// 32401 to hour 10.
pub fn hour_of_second(time_of_day: u32) -> u8 {
    time_of_day.div_ceil(3600).max(1) as u8
}

/// Aggregates per-vehicle records into hourly volumes per (site, date,
/// hour) cell. Cells with no records are absent, not zero-filled: an empty
/// raw feed is indistinguishable from a silent counter. Output is sorted by
/// (site, date, hour).
pub fn aggregate_hourly(records: &[VehicleRecord]) -> Vec<HourlyVolume> {
    let mut cells: BTreeMap<(SiteKey, NaiveDate, u8), u32> = BTreeMap::new();
    for record in records {
        let key = (record.site(), record.date, hour_of_second(record.time_of_day));
        *cells.entry(key).or_insert(0) += 1;
    }
    cells
        .into_iter()
        .map(|((site, date, hour), volume)| HourlyVolume {
            site,
            date,
            hour,
            volume,
        })
        .collect()
}

#[derive(Debug, Deserialize)]
struct MetadataRow {
    combined_id: String,
    road_class: String,
    length_m: f64,
    speed_limit_kmh: f64,
    dmrb_capacity_vph: f64,
    origin_lat: f64,
    origin_lon: f64,
    dest_lat: f64,
    dest_lon: f64,
}

/// Parses the site metadata catalog. Unlike the counter feed this parse is
/// strict: the catalog is small and every field feeds calibration.
pub fn parse_metadata<R: Read>(reader: R) -> Result<Vec<SiteMetadata>> {
    let mut csv_reader = csv::Reader::from_reader(reader);
    let mut out = Vec::new();
    for row in csv_reader.deserialize::<MetadataRow>() {
        let raw = row?;
        let site = SiteKey::from_str(&raw.combined_id)?;
        let road_class = RoadClass::from_str(&raw.road_class)?;
        let meta = SiteMetadata {
            site,
            road_class,
            link_length_m: raw.length_m,
            speed_limit_kmh: raw.speed_limit_kmh,
            dmrb_capacity_vph: raw.dmrb_capacity_vph,
            origin: LatLon {
                lat: raw.origin_lat,
                lon: raw.origin_lon,
            },
            destination: LatLon {
                lat: raw.dest_lat,
                lon: raw.dest_lon,
            },
        };
        meta.validate()?;
        out.push(meta);
    }
    Ok(out)
}

/// Indexes a metadata list by site key.
pub fn metadata_catalog(list: Vec<SiteMetadata>) -> BTreeMap<SiteKey, SiteMetadata> {
    list.into_iter().map(|m| (m.site, m)).collect()
}

/// Result of the pairing join. Unmatched rows on either side are counted,
/// not errors; sites carrying data but missing from the metadata catalog
/// are site-level errors surfaced in `unknown_sites`.
#[derive(Debug, Default)]
pub struct PairingOutcome {
    pub pairs: Vec<PairedObservation>,
    pub unmatched_volumes: usize,
    pub unmatched_times: usize,
    pub unknown_sites: Vec<SiteKey>,
}

/// Inner-joins hourly volumes with travel-time records on (site, date,
/// hour). Travel-time timestamps are bucketed with the same hour-ceiling
/// rule as the counter records; several records falling in one hour are
/// averaged. Output is sorted by (site, date, hour).
pub fn pair_observations(
    volumes: &[HourlyVolume],
    times: &[TravelTimeRecord],
    catalog: &BTreeMap<SiteKey, SiteMetadata>,
) -> PairingOutcome {
    let mut time_cells: BTreeMap<(SiteKey, NaiveDate, u8), Vec<f64>> = BTreeMap::new();
    for record in times {
        let date = record.query_timestamp.date();
        let hour = hour_of_second(record.query_timestamp.time().num_seconds_from_midnight());
        time_cells
            .entry((record.site, date, hour))
            .or_default()
            .push(record.duration_s);
    }

    let mut unknown: BTreeMap<SiteKey, ()> = BTreeMap::new();
    let mut outcome = PairingOutcome::default();
    let mut matched_time_cells = 0usize;

    for volume in volumes {
        if !catalog.contains_key(&volume.site) {
            unknown.insert(volume.site, ());
            continue;
        }
        match time_cells.get(&(volume.site, volume.date, volume.hour)) {
            Some(durations) => {
                matched_time_cells += 1;
                let mean = durations.iter().sum::<f64>() / durations.len() as f64;
                outcome.pairs.push(PairedObservation {
                    site: volume.site,
                    date: volume.date,
                    hour: volume.hour,
                    volume: volume.volume,
                    travel_time_s: mean,
                });
            }
            None => outcome.unmatched_volumes += 1,
        }
    }
    for (site, _, _) in time_cells.keys() {
        if !catalog.contains_key(site) {
            unknown.insert(*site, ());
        }
    }
    outcome.unmatched_times = time_cells.len() - matched_time_cells;
    outcome.unknown_sites = unknown.into_keys().collect();
    outcome
}

/// Groups paired observations by site, preserving (date, hour) order
/// within each site.
pub fn group_by_site(pairs: Vec<PairedObservation>) -> BTreeMap<SiteKey, Vec<PairedObservation>> {
    let mut by_site: BTreeMap<SiteKey, Vec<PairedObservation>> = BTreeMap::new();
    for pair in pairs {
        by_site.entry(pair.site).or_default().push(pair);
    }
    by_site
}

#[derive(Debug, Serialize)]
struct HourlyRow<'a> {
    combined_id: String,
    atc_id: u32,
    direction: &'a str,
    date: String,
    hour: u8,
    volume: u32,
}

/// Writes hourly volumes as CSV with the processed-record column layout:
/// `combined_id,atc_id,direction,date,hour,volume`.
pub fn write_hourly_csv<W: Write>(writer: W, rows: &[HourlyVolume]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    for row in rows {
        w.serialize(HourlyRow {
            combined_id: row.site.to_string(),
            atc_id: row.site.site_id,
            direction: row.site.direction.label(),
            date: row.date.format("%Y-%m-%d").to_string(),
            hour: row.hour,
            volume: row.volume,
        })?;
    }
    w.flush().map_err(|e| Error::io("<hourly csv>", e))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use chrono::NaiveDateTime;
    use proptest::prelude::*;

    fn date(s: &str) -> NaiveDate {
        NaiveDate::parse_from_str(s, "%Y-%m-%d").unwrap()
    }

    fn ts(s: &str) -> NaiveDateTime {
        NaiveDateTime::parse_from_str(s, "%Y-%m-%dT%H:%M:%S").unwrap()
    }

    #[test]
    fn parses_documented_record_layout() {
        let csv = "site,direction,date,time,speed\n11,Northbound,2016-02-27,00:00:28,37\n";
        let parsed = parse_vehicle_records(csv.as_bytes()).unwrap();
        assert!(parsed.errors.is_empty());
        assert_eq!(
            parsed.records,
            vec![VehicleRecord {
                site_id: 11,
                direction: Direction::North,
                date: date("2016-02-27"),
                time_of_day: 28,
                point_speed: 37.0,
            }]
        );
    }

    #[test]
    fn empty_input_is_empty_not_an_error() {
        let parsed = parse_vehicle_records("site,direction,date,time,speed\n".as_bytes()).unwrap();
        assert!(parsed.records.is_empty());
        assert!(parsed.errors.is_empty());

        let parsed = parse_vehicle_records("".as_bytes()).unwrap();
        assert!(parsed.records.is_empty());
    }

    #[test]
    fn malformed_row_is_isolated_with_line_number() {
        let csv = "site,direction,date,time,speed\n\
                   11,Northbound,2016-02-27,00:00:28,37\n\
                   11,Sideways,2016-02-27,00:00:29,30\n";
        let parsed = parse_vehicle_records(csv.as_bytes()).unwrap();
        assert_eq!(parsed.records.len(), 1);
        assert_eq!(parsed.errors.len(), 1);
        assert_eq!(parsed.errors[0].line, 3);
        assert!(parsed.errors[0].message.contains("Sideways"));
    }

    #[test]
    fn hour_ceiling_rule() {
        assert_eq!(hour_of_second(0), 1);
        assert_eq!(hour_of_second(28), 1);
        assert_eq!(hour_of_second(3600), 1);
        assert_eq!(hour_of_second(3601), 2);
        assert_eq!(hour_of_second(32399), 9); // 08:59:59
        assert_eq!(hour_of_second(32400), 9); // 09:00:00
        assert_eq!(hour_of_second(32401), 10); // 09:00:01
        assert_eq!(hour_of_second(86399), 24); // 23:59:59
    }

    #[test]
    fn aggregation_counts_boundary_records_into_ending_hour() {
        let mk = |time_of_day: u32| VehicleRecord {
            site_id: 11,
            direction: Direction::North,
            date: date("2016-03-07"),
            time_of_day,
            point_speed: 30.0,
        };
        let records = vec![mk(32399), mk(32400), mk(32401)];
        let volumes = aggregate_hourly(&records);
        assert_eq!(volumes.len(), 2);
        assert_eq!((volumes[0].hour, volumes[0].volume), (9, 2));
        assert_eq!((volumes[1].hour, volumes[1].volume), (10, 1));
    }

    #[test]
    fn aggregation_reproduces_sample_cell() {
        // 420 records between 06:00:01 and 07:00:00 land in hour 7.
        let records: Vec<VehicleRecord> = (0..420)
            .map(|k| VehicleRecord {
                site_id: 11,
                direction: Direction::North,
                date: date("2016-03-07"),
                time_of_day: 6 * 3600 + 1 + (k * 3599) / 420,
                point_speed: 30.0,
            })
            .collect();
        let volumes = aggregate_hourly(&records);
        assert_eq!(volumes.len(), 1);
        let cell = &volumes[0];
        assert_eq!(cell.site.to_string(), "11N");
        assert_eq!(cell.date, date("2016-03-07"));
        assert_eq!(cell.hour, 7);
        assert_eq!(cell.volume, 420);
    }

    fn meta_for(site: SiteKey) -> SiteMetadata {
        SiteMetadata {
            site,
            road_class: RoadClass::Principal,
            link_length_m: 561.0,
            speed_limit_kmh: 48.0,
            dmrb_capacity_vph: 1800.0,
            origin: LatLon { lat: 51.4, lon: 0.02 },
            destination: LatLon { lat: 51.41, lon: 0.02 },
        }
    }

    #[test]
    fn pairing_joins_on_site_date_hour() {
        let site: SiteKey = "11N".parse().unwrap();
        let volumes = vec![HourlyVolume {
            site,
            date: date("2016-03-07"),
            hour: 7,
            volume: 420,
        }];
        let times = vec![TravelTimeRecord {
            site,
            query_timestamp: ts("2016-03-07T07:00:00"),
            duration_s: 95.0,
        }];
        let catalog = metadata_catalog(vec![meta_for(site)]);
        let outcome = pair_observations(&volumes, &times, &catalog);
        assert_eq!(outcome.pairs.len(), 1);
        let pair = &outcome.pairs[0];
        assert_eq!((pair.hour, pair.volume), (7, 420));
        assert_eq!(pair.travel_time_s, 95.0);
        assert_eq!(outcome.unmatched_volumes, 0);
        assert_eq!(outcome.unmatched_times, 0);
        assert!(outcome.unknown_sites.is_empty());
    }

    #[test]
    fn pairing_averages_multiple_durations_in_one_hour() {
        let site: SiteKey = "11N".parse().unwrap();
        let volumes = vec![HourlyVolume {
            site,
            date: date("2016-03-07"),
            hour: 7,
            volume: 420,
        }];
        let times = vec![
            TravelTimeRecord {
                site,
                query_timestamp: ts("2016-03-07T06:30:00"),
                duration_s: 90.0,
            },
            TravelTimeRecord {
                site,
                query_timestamp: ts("2016-03-07T06:45:00"),
                duration_s: 110.0,
            },
        ];
        let catalog = metadata_catalog(vec![meta_for(site)]);
        let outcome = pair_observations(&volumes, &times, &catalog);
        assert_eq!(outcome.pairs.len(), 1);
        assert_eq!(outcome.pairs[0].travel_time_s, 100.0);
    }

    #[test]
    fn pairing_counts_unmatched_rows_and_unknown_sites() {
        let known: SiteKey = "11N".parse().unwrap();
        let unknown: SiteKey = "99E".parse().unwrap();
        let volumes = vec![
            HourlyVolume {
                site: known,
                date: date("2016-03-07"),
                hour: 7,
                volume: 420,
            },
            HourlyVolume {
                site: known,
                date: date("2016-03-07"),
                hour: 8,
                volume: 694,
            },
            HourlyVolume {
                site: unknown,
                date: date("2016-03-07"),
                hour: 7,
                volume: 10,
            },
        ];
        let times = vec![
            TravelTimeRecord {
                site: known,
                query_timestamp: ts("2016-03-07T07:00:00"),
                duration_s: 95.0,
            },
            TravelTimeRecord {
                site: known,
                query_timestamp: ts("2016-03-07T11:00:00"),
                duration_s: 80.0,
            },
        ];
        let catalog = metadata_catalog(vec![meta_for(known)]);
        let outcome = pair_observations(&volumes, &times, &catalog);
        assert_eq!(outcome.pairs.len(), 1);
        assert_eq!(outcome.unmatched_volumes, 1);
        assert_eq!(outcome.unmatched_times, 1);
        assert_eq!(outcome.unknown_sites, vec![unknown]);
    }

    #[test]
    fn metadata_rejects_non_positive_fields() {
        let csv = "combined_id,road_class,length_m,speed_limit_kmh,dmrb_capacity_vph,origin_lat,origin_lon,dest_lat,dest_lon\n\
                   11N,Principal,0,48,1800,51.4,0.02,51.41,0.02\n";
        assert!(parse_metadata(csv.as_bytes()).is_err());
    }

    proptest! {
        #[test]
        fn aggregation_conserves_record_count(
            seconds in proptest::collection::vec(0u32..86_400, 0..200),
            sites in proptest::collection::vec(1u32..4, 0..200),
        ) {
            let n = seconds.len().min(sites.len());
            let records: Vec<VehicleRecord> = (0..n)
                .map(|i| VehicleRecord {
                    site_id: sites[i],
                    direction: Direction::North,
                    date: date("2016-03-07"),
                    time_of_day: seconds[i],
                    point_speed: 30.0,
                })
                .collect();
            let volumes = aggregate_hourly(&records);
            let total: u32 = volumes.iter().map(|v| v.volume).sum();
            prop_assert_eq!(total as usize, n);

            // Order independence: reversed input yields the identical cells.
            let mut reversed = records.clone();
            reversed.reverse();
            prop_assert_eq!(aggregate_hourly(&reversed), volumes);
        }

        #[test]
        fn pairing_is_an_inner_join(
            volume_hours in proptest::collection::vec((1u8..=24, 0u32..500), 0..40),
            time_hours in proptest::collection::vec((1u8..=24, 40.0f64..200.0), 0..40),
        ) {
            let site: SiteKey = "11N".parse().unwrap();
            let day = date("2016-03-07");
            let volumes: Vec<HourlyVolume> = volume_hours
                .iter()
                .map(|(hour, volume)| HourlyVolume { site, date: day, hour: *hour, volume: *volume })
                .collect();
            // Deduplicate volume cells the way aggregation would.
            let mut seen = std::collections::BTreeSet::new();
            let volumes: Vec<HourlyVolume> =
                volumes.into_iter().filter(|v| seen.insert(v.hour)).collect();
            let times: Vec<TravelTimeRecord> = time_hours
                .iter()
                .map(|(hour, duration)| TravelTimeRecord {
                    site,
                    query_timestamp: day.and_hms_opt(u32::from(*hour) - 1, 30, 0).unwrap(),
                    duration_s: *duration,
                })
                .collect();
            let time_cells = times
                .iter()
                .map(|t| hour_of_second(t.query_timestamp.time().num_seconds_from_midnight()))
                .collect::<std::collections::BTreeSet<u8>>();
            let catalog = metadata_catalog(vec![meta_for(site)]);
            let outcome = pair_observations(&volumes, &times, &catalog);
            prop_assert!(outcome.pairs.len() <= volumes.len().min(time_cells.len()));
            prop_assert_eq!(
                outcome.pairs.len() + outcome.unmatched_volumes,
                volumes.len()
            );
            prop_assert_eq!(
                outcome.pairs.len() + outcome.unmatched_times,
                time_cells.len()
            );
        }
    }
}
