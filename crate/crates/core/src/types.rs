//! Core domain types shared across the pipeline: directional site keys,
//! per-vehicle counter records, hourly aggregates, site metadata and the
//! fused volume/travel-time observations that calibration consumes.

use std::fmt::{self, Display};
use std::str::FromStr;

use chrono::{NaiveDate, NaiveDateTime};
use serde::{Deserialize, Serialize};

use crate::error::Error;

/// Direction of travel past a counter.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Direction {
    North,
    South,
    East,
    West,
}

impl Direction {
    /// Single-letter form used in combined site ids ("11N").
    pub fn initial(&self) -> char {
        match self {
            Direction::North => 'N',
            Direction::South => 'S',
            Direction::East => 'E',
            Direction::West => 'W',
        }
    }

    /// Long form used in raw counter files ("Northbound").
    pub fn label(&self) -> &'static str {
        match self {
            Direction::North => "Northbound",
            Direction::South => "Southbound",
            Direction::East => "Eastbound",
            Direction::West => "Westbound",
        }
    }
}

impl FromStr for Direction {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "n" | "north" | "northbound" => Ok(Direction::North),
            "s" | "south" | "southbound" => Ok(Direction::South),
            "e" | "east" | "eastbound" => Ok(Direction::East),
            "w" | "west" | "westbound" => Ok(Direction::West),
            _ => Err(Error::BadDirection(s.to_string())),
        }
    }
}

impl Display for Direction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.label())
    }
}

/// A directional counter site, e.g. location 11 northbound is "11N".
///
/// The string form round-trips losslessly into (id, direction).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct SiteKey {
    pub site_id: u32,
    pub direction: Direction,
}

impl SiteKey {
    pub fn new(site_id: u32, direction: Direction) -> Self {
        SiteKey { site_id, direction }
    }
}

impl Display for SiteKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}{}", self.site_id, self.direction.initial())
    }
}

impl FromStr for SiteKey {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let s = s.trim();
        if s.len() < 2 {
            return Err(Error::BadSiteKey(s.to_string()));
        }
        let (id_part, dir_part) = s.split_at(s.len() - 1);
        let site_id = id_part
            .parse::<u32>()
            .map_err(|_| Error::BadSiteKey(s.to_string()))?;
        let direction = dir_part
            .parse::<Direction>()
            .map_err(|_| Error::BadSiteKey(s.to_string()))?;
        Ok(SiteKey { site_id, direction })
    }
}

/// DfT road classification of the link a counter sits on.
#[derive(
    Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize,
)]
pub enum RoadClass {
    Trunk,
    Principal,
    B,
    C,
    Unclassified,
}

impl RoadClass {
    pub const ALL: [RoadClass; 5] = [
        RoadClass::Trunk,
        RoadClass::Principal,
        RoadClass::B,
        RoadClass::C,
        RoadClass::Unclassified,
    ];
}

impl FromStr for RoadClass {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "trunk" => Ok(RoadClass::Trunk),
            "principal" => Ok(RoadClass::Principal),
            "b" => Ok(RoadClass::B),
            "c" => Ok(RoadClass::C),
            "unclassified" => Ok(RoadClass::Unclassified),
            _ => Err(Error::BadRoadClass(s.to_string())),
        }
    }
}

impl Display for RoadClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            RoadClass::Trunk => "Trunk",
            RoadClass::Principal => "Principal",
            RoadClass::B => "B",
            RoadClass::C => "C",
            RoadClass::Unclassified => "Unclassified",
        };
        write!(f, "{s}")
    }
}

/// One vehicle crossing a counter, as recorded in the raw feed.
///
/// `point_speed` is carried through in the unit the counter reports;
/// nothing downstream consumes it.
#[derive(Debug, Clone, PartialEq)]
pub struct VehicleRecord {
    pub site_id: u32,
    pub direction: Direction,
    pub date: NaiveDate,
    /// Seconds since midnight, 0..86400.
    pub time_of_day: u32,
    pub point_speed: f64,
}

impl VehicleRecord {
    pub fn site(&self) -> SiteKey {
        SiteKey::new(self.site_id, self.direction)
    }
}

/// Vehicle count for one (site, date, hour) cell.
///
/// `hour` is 1..=24 and names the hour boundary the interval ends at:
/// hour 7 covers 06:00:01 through 07:00:00.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct HourlyVolume {
    pub site: SiteKey,
    pub date: NaiveDate,
    pub hour: u8,
    pub volume: u32,
}

/// Latitude/longitude pair (WGS84).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LatLon {
    pub lat: f64,
    pub lon: f64,
}

/// Static description of one directional site: road class, link geometry,
/// lookup-table capacity and the origin/destination used for travel-time
/// queries along the link.
#[derive(Debug, Clone, PartialEq)]
pub struct SiteMetadata {
    pub site: SiteKey,
    pub road_class: RoadClass,
    pub link_length_m: f64,
    pub speed_limit_kmh: f64,
    pub dmrb_capacity_vph: f64,
    pub origin: LatLon,
    pub destination: LatLon,
}

impl SiteMetadata {
    /// Checks the positivity invariants on the numeric fields.
    pub fn validate(&self) -> Result<(), Error> {
        let check = |field: &'static str, v: f64| {
            if v.is_finite() && v > 0.0 {
                Ok(())
            } else {
                Err(Error::BadMetadata {
                    site: self.site.to_string(),
                    field,
                    message: format!("must be positive, got {v}"),
                })
            }
        };
        check("link_length_m", self.link_length_m)?;
        check("speed_limit_kmh", self.speed_limit_kmh)?;
        check("dmrb_capacity_vph", self.dmrb_capacity_vph)?;
        Ok(())
    }
}

/// One crowd-sourced link traversal duration at a query timestamp.
#[derive(Debug, Clone, PartialEq)]
pub struct TravelTimeRecord {
    pub site: SiteKey,
    pub query_timestamp: NaiveDateTime,
    /// Seconds, strictly positive. Fractional values can appear in replay
    /// files (averaged retries); live provider responses are whole seconds.
    pub duration_s: f64,
}

/// The fused (hourly volume, link travel time) point all calibration
/// consumes.
#[derive(Debug, Clone, PartialEq)]
pub struct PairedObservation {
    pub site: SiteKey,
    pub date: NaiveDate,
    pub hour: u8,
    pub volume: u32,
    pub travel_time_s: f64,
}

impl PairedObservation {
    /// Observed space-mean speed in km/h for a link of the given length.
    pub fn speed_kmh(&self, link_length_m: f64) -> f64 {
        3.6 * link_length_m / self.travel_time_s
    }
}
