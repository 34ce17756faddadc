//! Per-site outlier removal with DBSCAN on normalized volume/time axes,
//! plus rejection of sites whose data cannot support calibration.
//!
//! Both axes are normalized to the site maximum so the plane is [0,1]^2 and
//! one isotropic epsilon is meaningful. Distances are Euclidean and a
//! point's epsilon-neighborhood includes the point itself, the convention
//! under which `min_points = 5` matches common reference implementations.

use std::collections::BTreeMap;
use std::fmt::{self, Display};
use std::io::Write;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::stats;
use crate::types::{PairedObservation, SiteKey};

/// Tunables for outlier removal and site validity.
#[derive(Debug, Clone, PartialEq)]
pub struct CleaningConfig {
    /// Neighborhood radius on the normalized plane.
    pub epsilon: f64,
    /// Minimum neighborhood size (self included) for a core point.
    pub min_points: usize,
    /// Sites never reaching this hourly volume are rejected.
    pub min_peak_volume: u32,
    /// Sites whose travel-time coefficient of variation stays below this
    /// are rejected (no usable delay signal).
    pub min_time_cv: f64,
}

impl Default for CleaningConfig {
    fn default() -> Self {
        CleaningConfig {
            epsilon: 0.1,
            min_points: 5,
            min_peak_volume: 50,
            min_time_cv: 0.02,
        }
    }
}

impl CleaningConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon.is_finite() && self.epsilon > 0.0) {
            return Err(Error::BadSpec {
                field: "epsilon".to_string(),
                message: format!("must be positive, got {}", self.epsilon),
            });
        }
        if self.min_points == 0 {
            return Err(Error::BadSpec {
                field: "min_points".to_string(),
                message: "must be at least 1".to_string(),
            });
        }
        Ok(())
    }
}

/// DBSCAN label for one point.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Label {
    Cluster(u32),
    Noise,
}

impl Label {
    pub fn is_noise(&self) -> bool {
        matches!(self, Label::Noise)
    }
}

/// Scales one site's observations onto the unit square: x is volume over
/// the maximum observed volume, y is travel time over the maximum observed
/// travel time. At least one point lands on x = 1 and one on y = 1.
pub fn normalize_site(observations: &[PairedObservation]) -> Result<Vec<(f64, f64)>> {
    let first = observations
        .first()
        .ok_or(Error::EmptyInput("normalize_site needs at least one observation"))?;
    let max_volume = observations.iter().map(|o| o.volume).max().unwrap_or(0);
    if max_volume == 0 {
        return Err(Error::UnusableSite(first.site));
    }
    let max_time = observations
        .iter()
        .map(|o| o.travel_time_s)
        .fold(f64::MIN, f64::max);
    Ok(observations
        .iter()
        .map(|o| (o.volume as f64 / max_volume as f64, o.travel_time_s / max_time))
        .collect())
}

/// Density-based clustering with noise. Core points have at least
/// `min_points` neighbors within `epsilon` (closed ball, self included);
/// clusters are maximal density-connected sets grown breadth-first; points
/// reachable from no core point are noise. Border points reachable from
/// several clusters keep the first cluster that reaches them, which only
/// affects ids, never the noise partition.
pub fn dbscan(points: &[(f64, f64)], epsilon: f64, min_points: usize) -> Vec<Label> {
    let n = points.len();
    let eps_sq = epsilon * epsilon;
    let neighbors_of = |i: usize| -> Vec<usize> {
        let (xi, yi) = points[i];
        (0..n)
            .filter(|&j| {
                let dx = points[j].0 - xi;
                let dy = points[j].1 - yi;
                dx * dx + dy * dy <= eps_sq
            })
            .collect()
    };

    let mut labels = vec![Label::Noise; n];
    let mut visited = vec![false; n];
    let mut next_cluster = 0u32;

    for start in 0..n {
        if visited[start] {
            continue;
        }
        visited[start] = true;
        let seeds = neighbors_of(start);
        if seeds.len() < min_points {
            continue; // not core; may become a border point later
        }
        let cluster = next_cluster;
        next_cluster += 1;
        labels[start] = Label::Cluster(cluster);

        let mut frontier = seeds;
        while let Some(point) = frontier.pop() {
            if labels[point].is_noise() {
                labels[point] = Label::Cluster(cluster);
            }
            if visited[point] {
                continue;
            }
            visited[point] = true;
            let reach = neighbors_of(point);
            if reach.len() >= min_points {
                frontier.extend(reach);
            }
        }
    }
    labels
}

/// Per-site removal bookkeeping.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct SiteCleanCounts {
    pub total: usize,
    pub kept: usize,
    pub removed: usize,
}

/// Result of outlier removal: kept plus removed partitions the input.
#[derive(Debug, Default)]
pub struct CleaningOutcome {
    pub kept: BTreeMap<SiteKey, Vec<PairedObservation>>,
    pub removed: BTreeMap<SiteKey, Vec<PairedObservation>>,
    pub per_site: BTreeMap<SiteKey, SiteCleanCounts>,
}

impl CleaningOutcome {
    pub fn total_kept(&self) -> usize {
        self.kept.values().map(Vec::len).sum()
    }

    pub fn total_removed(&self) -> usize {
        self.removed.values().map(Vec::len).sum()
    }
}

/// Removes low-density observations per site: each site is normalized and
/// clustered independently (never pooled), and its noise-labeled points
/// move to `removed`. A site with no usable volume axis is passed through
/// untouched; the validity filter is the place that rejects it.
pub fn remove_outliers(
    observations: &BTreeMap<SiteKey, Vec<PairedObservation>>,
    config: &CleaningConfig,
) -> Result<CleaningOutcome> {
    config.validate()?;
    let mut outcome = CleaningOutcome::default();
    for (site, site_obs) in observations {
        if site_obs.is_empty() {
            continue;
        }
        let labels = match normalize_site(site_obs) {
            Ok(points) => dbscan(&points, config.epsilon, config.min_points),
            Err(Error::UnusableSite(_)) => vec![Label::Cluster(0); site_obs.len()],
            Err(e) => return Err(e),
        };
        let mut kept = Vec::new();
        let mut removed = Vec::new();
        for (obs, label) in site_obs.iter().zip(&labels) {
            if label.is_noise() {
                removed.push(obs.clone());
            } else {
                kept.push(obs.clone());
            }
        }
        outcome.per_site.insert(
            *site,
            SiteCleanCounts {
                total: site_obs.len(),
                kept: kept.len(),
                removed: removed.len(),
            },
        );
        if !kept.is_empty() {
            outcome.kept.insert(*site, kept);
        }
        if !removed.is_empty() {
            outcome.removed.insert(*site, removed);
        }
    }
    Ok(outcome)
}

/// Why a site was rejected outright.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum RejectReason {
    LowPeakVolume { peak: u32 },
    LowTimeVariation { cv: f64 },
}

impl Display for RejectReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RejectReason::LowPeakVolume { .. } => write!(f, "low_peak_volume"),
            RejectReason::LowTimeVariation { .. } => write!(f, "low_time_cv"),
        }
    }
}

/// Partition of sites into calibratable and rejected.
#[derive(Debug, Default)]
pub struct SiteFilter {
    pub kept: BTreeMap<SiteKey, Vec<PairedObservation>>,
    pub rejected: BTreeMap<SiteKey, (Vec<PairedObservation>, Vec<RejectReason>)>,
}

/// Rejects sites whose peak hourly volume never reaches
/// `min_peak_volume` or whose travel times barely vary (coefficient of
/// variation below `min_time_cv`); such series carry no delay signal to
/// calibrate against. Every rejection records its reasons.
pub fn filter_valid_sites(
    observations: BTreeMap<SiteKey, Vec<PairedObservation>>,
    config: &CleaningConfig,
) -> SiteFilter {
    let mut filter = SiteFilter::default();
    for (site, site_obs) in observations {
        let mut reasons = Vec::new();
        let peak = site_obs.iter().map(|o| o.volume).max().unwrap_or(0);
        if peak < config.min_peak_volume {
            reasons.push(RejectReason::LowPeakVolume { peak });
        }
        let times: Vec<f64> = site_obs.iter().map(|o| o.travel_time_s).collect();
        let cv = stats::coefficient_of_variation(&times).unwrap_or(0.0);
        if cv < config.min_time_cv {
            reasons.push(RejectReason::LowTimeVariation { cv });
        }
        if reasons.is_empty() {
            filter.kept.insert(site, site_obs);
        } else {
            filter.rejected.insert(site, (site_obs, reasons));
        }
    }
    filter
}

#[derive(Debug, Serialize)]
struct CleaningReportRow {
    combined_id: String,
    total: usize,
    kept: usize,
    removed: usize,
    reject_reason: String,
}

/// Writes the cleaning report CSV
/// (`combined_id,total,kept,removed,reject_reason`): one row per site,
/// rejected sites keeping nothing and carrying their reasons joined by '|'.
pub fn write_cleaning_report<W: Write>(
    writer: W,
    filter: &SiteFilter,
    outcome: &CleaningOutcome,
) -> Result<()> {
    let mut rows: BTreeMap<SiteKey, CleaningReportRow> = BTreeMap::new();
    for (site, counts) in &outcome.per_site {
        rows.insert(
            *site,
            CleaningReportRow {
                combined_id: site.to_string(),
                total: counts.total,
                kept: counts.kept,
                removed: counts.removed,
                reject_reason: String::new(),
            },
        );
    }
    for (site, (obs, reasons)) in &filter.rejected {
        let reason = reasons
            .iter()
            .map(ToString::to_string)
            .collect::<Vec<_>>()
            .join("|");
        rows.insert(
            *site,
            CleaningReportRow {
                combined_id: site.to_string(),
                total: obs.len(),
                kept: 0,
                removed: 0,
                reject_reason: reason,
            },
        );
    }
    let mut w = csv::Writer::from_writer(writer);
    for row in rows.values() {
        w.serialize(row)?;
    }
    w.flush().map_err(|e| Error::io("<cleaning report>", e))?;
    Ok(())
}
