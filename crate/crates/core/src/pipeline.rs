//! End-to-end orchestration: ingest, clean, calibrate, evaluate, report.
//! The pipeline computes no domain math itself; every number in its
//! artifacts comes from a module call, and artifact files are written
//! atomically (temp then rename) so a failed run leaves no truncated
//! output.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::calibrate::{self, SiteCalibration};
use crate::cleaning::{self, CleaningConfig};
use crate::error::{Error, Result};
use crate::evaluate::{self, SiteEvaluation};
use crate::harvester;
use crate::ingest;
use crate::models;
use crate::plot;
use crate::types::{PairedObservation, SiteKey, SiteMetadata};

/// Everything a pipeline run needs.
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub counters: PathBuf,
    pub times: PathBuf,
    pub metadata: PathBuf,
    pub out_dir: PathBuf,
    pub cleaning: CleaningConfig,
    /// Number of intervals in the volume grid used for curve sampling.
    pub grid_points: usize,
}

impl RunConfig {
    pub fn new(counters: PathBuf, times: PathBuf, metadata: PathBuf, out_dir: PathBuf) -> Self {
        RunConfig {
            counters,
            times,
            metadata,
            out_dir,
            cleaning: CleaningConfig::default(),
            grid_points: 100,
        }
    }
}

/// One site-scoped failure that did not abort the run.
#[derive(Debug, Clone, Serialize)]
pub struct SiteError {
    pub site: String,
    pub stage: String,
    pub message: String,
}

/// Machine-readable run summary. The run counts as clean only if there
/// were no malformed input rows and no site-level errors.
#[derive(Debug, Default, Serialize)]
pub struct PipelineSummary {
    pub sites_in_data: usize,
    pub sites_calibrated: usize,
    pub sites_rejected: usize,
    pub observations_paired: usize,
    pub observations_kept: usize,
    pub observations_removed: usize,
    pub unmatched_volumes: usize,
    pub unmatched_times: usize,
    pub counter_row_errors: usize,
    pub time_row_errors: usize,
    pub site_errors: Vec<SiteError>,
    pub report_warnings: Vec<String>,
    pub artifacts: Vec<String>,
}

impl PipelineSummary {
    pub fn is_clean(&self) -> bool {
        self.site_errors.is_empty() && self.counter_row_errors == 0 && self.time_row_errors == 0
    }
}

fn read_file(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

/// Writes bytes to `path` through a temporary sibling and an atomic
/// rename.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    let tmp = path.with_extension("tmp");
    {
        let mut file = fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
        file.write_all(bytes).map_err(|e| Error::io(&tmp, e))?;
        file.sync_all().map_err(|e| Error::io(&tmp, e))?;
    }
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))?;
    Ok(())
}

/// Runs the full pipeline and writes five artifact kinds into the output
/// directory: `hourly_volumes.csv`, `cleaning_report.csv`,
/// `calibration.csv`, `mae_report.csv` and per-site
/// `sites/<id>_curves.csv` plus `sites/<id>.svg`.
pub fn run_pipeline(config: &RunConfig) -> Result<PipelineSummary> {
    config.cleaning.validate()?;
    let mut summary = PipelineSummary::default();

    // Ingest.
    let parsed = ingest::parse_vehicle_records(read_file(&config.counters)?.as_bytes())?;
    summary.counter_row_errors = parsed.errors.len();
    let volumes = ingest::aggregate_hourly(&parsed.records);

    let (time_records, time_errors) =
        harvester::parse_travel_times(read_file(&config.times)?.as_bytes())?;
    summary.time_row_errors = time_errors.len();

    let catalog = ingest::metadata_catalog(ingest::parse_metadata(
        read_file(&config.metadata)?.as_bytes(),
    )?);

    let pairing = ingest::pair_observations(&volumes, &time_records, &catalog);
    summary.observations_paired = pairing.pairs.len();
    summary.unmatched_volumes = pairing.unmatched_volumes;
    summary.unmatched_times = pairing.unmatched_times;
    for site in &pairing.unknown_sites {
        summary.site_errors.push(SiteError {
            site: site.to_string(),
            stage: "pairing".to_string(),
            message: "site carries data but is missing from the metadata catalog".to_string(),
        });
    }
    let by_site = ingest::group_by_site(pairing.pairs);
    summary.sites_in_data = by_site.len();

    // Clean.
    let filter = cleaning::filter_valid_sites(by_site, &config.cleaning);
    summary.sites_rejected = filter.rejected.len();
    let outcome = cleaning::remove_outliers(&filter.kept, &config.cleaning)?;
    summary.observations_kept = outcome.total_kept();
    summary.observations_removed = outcome.total_removed();

    // Calibrate.
    let mut calibrations: BTreeMap<SiteKey, SiteCalibration> = BTreeMap::new();
    for (site, observations) in &outcome.kept {
        let meta = catalog.get(site).expect("pairing only passes known sites");
        match calibrate::calibrate_site(meta, observations) {
            Ok(calibration) => {
                calibrations.insert(*site, calibration);
            }
            Err(e) => summary.site_errors.push(SiteError {
                site: site.to_string(),
                stage: "calibrate".to_string(),
                message: e.to_string(),
            }),
        }
    }
    summary.sites_calibrated = calibrations.len();

    // Evaluate.
    let evaluations: Vec<SiteEvaluation> = calibrations
        .values()
        .map(|cal| {
            let meta = &catalog[&cal.site];
            SiteEvaluation {
                site: cal.site,
                road_class: meta.road_class,
                link_length_m: meta.link_length_m,
                models: [cal.base, cal.dd1, cal.dd2],
                stratify_vc_vph: cal.dd1.vc_vph,
                observations: outcome.kept[&cal.site].clone(),
            }
        })
        .collect();
    let report = evaluate::build_report(&evaluations)?;
    summary.report_warnings = report.warnings.clone();

    // Artifacts.
    let out = &config.out_dir;
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;

    let mut hourly = Vec::new();
    ingest::write_hourly_csv(&mut hourly, &volumes)?;
    write_artifact(&mut summary, out.join("hourly_volumes.csv"), &hourly)?;

    let mut cleaning_report = Vec::new();
    cleaning::write_cleaning_report(&mut cleaning_report, &filter, &outcome)?;
    write_artifact(&mut summary, out.join("cleaning_report.csv"), &cleaning_report)?;

    let calibration_rows: Vec<SiteCalibration> = calibrations.values().cloned().collect();
    let mut calibration_csv = Vec::new();
    calibrate::write_calibration_csv(&mut calibration_csv, &calibration_rows)?;
    write_artifact(&mut summary, out.join("calibration.csv"), &calibration_csv)?;

    let mut mae_csv = Vec::new();
    evaluate::write_mae_csv(&mut mae_csv, &report)?;
    write_artifact(&mut summary, out.join("mae_report.csv"), &mae_csv)?;

    for evaluation in &evaluations {
        let (curve_bytes, svg_bytes) = render_site(evaluation, config.grid_points)?;
        write_artifact(
            &mut summary,
            out.join("sites").join(format!("{}_curves.csv", evaluation.site)),
            &curve_bytes,
        )?;
        write_artifact(
            &mut summary,
            out.join("sites").join(format!("{}.svg", evaluation.site)),
            &svg_bytes,
        )?;
    }

    Ok(summary)
}

fn write_artifact(summary: &mut PipelineSummary, path: PathBuf, bytes: &[u8]) -> Result<()> {
    write_atomic(&path, bytes)?;
    summary.artifacts.push(path.display().to_string());
    Ok(())
}

/// Renders one site's sampled-curve CSV and scatter SVG.
pub fn render_site(evaluation: &SiteEvaluation, grid_points: usize) -> Result<(Vec<u8>, Vec<u8>)> {
    let max_volume = evaluation
        .observations
        .iter()
        .map(|o| o.volume)
        .max()
        .unwrap_or(0)
        .max(1) as f64;
    let samples = models::sample_curves(
        &evaluation.models,
        evaluation.link_length_m,
        max_volume,
        grid_points,
    )?;
    let mut curve_bytes = Vec::new();
    models::write_curve_csv(&mut curve_bytes, &samples)?;

    let curves: Vec<(String, Vec<(f64, f64)>)> = evaluation
        .models
        .iter()
        .map(|params| {
            let points = samples
                .iter()
                .filter(|s| s.model == params.provenance.to_string())
                .map(|s| (s.volume, s.time_s))
                .collect();
            (params.provenance.to_string(), points)
        })
        .collect();
    let svg = plot::scatter_svg(
        &evaluation.site.to_string(),
        &evaluation.observations,
        &curves,
    );
    Ok((curve_bytes, svg.into_bytes()))
}

/// Loads calibrated parameters back from a calibration CSV, keyed by site.
pub fn read_calibration_csv(
    text: &str,
) -> Result<BTreeMap<SiteKey, Vec<models::BprParams>>> {
    let mut reader = csv::Reader::from_reader(text.as_bytes());
    let mut by_site: BTreeMap<SiteKey, Vec<models::BprParams>> = BTreeMap::new();
    for record in reader.records() {
        let record = record?;
        let site: SiteKey = record
            .get(0)
            .unwrap_or_default()
            .parse()
            .map_err(|_| Error::BadSiteKey(record.get(0).unwrap_or_default().to_string()))?;
        let provenance = match record.get(1).unwrap_or_default() {
            "base" => models::Provenance::Base,
            "dd1" => models::Provenance::Dd1,
            "dd2" => models::Provenance::Dd2,
            other => {
                return Err(Error::BadSpec {
                    field: "provenance".to_string(),
                    message: format!("unknown model '{other}'"),
                })
            }
        };
        let number = |index: usize, field: &'static str| -> Result<f64> {
            record
                .get(index)
                .unwrap_or_default()
                .parse::<f64>()
                .map_err(|e| Error::BadSpec {
                    field: field.to_string(),
                    message: e.to_string(),
                })
        };
        let params = models::BprParams::new(
            number(2, "t0_s")?,
            number(3, "vc_vph")?,
            number(4, "alpha")?,
            number(5, "beta")?,
            provenance,
        )?;
        by_site.entry(site).or_default().push(params);
    }
    Ok(by_site)
}

/// Builds the observation set for one site the same way the pipeline does
/// (ingest, pair, filter, outlier removal), for after-the-fact plotting.
pub fn site_observations(
    config: &RunConfig,
    site: SiteKey,
) -> Result<(SiteMetadata, Vec<PairedObservation>)> {
    let parsed = ingest::parse_vehicle_records(read_file(&config.counters)?.as_bytes())?;
    let volumes = ingest::aggregate_hourly(&parsed.records);
    let (time_records, _) = harvester::parse_travel_times(read_file(&config.times)?.as_bytes())?;
    let catalog = ingest::metadata_catalog(ingest::parse_metadata(
        read_file(&config.metadata)?.as_bytes(),
    )?);
    let pairing = ingest::pair_observations(&volumes, &time_records, &catalog);
    let by_site = ingest::group_by_site(pairing.pairs);
    let available = by_site
        .keys()
        .map(ToString::to_string)
        .collect::<Vec<_>>()
        .join(", ");
    if !by_site.contains_key(&site) {
        return Err(Error::UnknownSite {
            site: site.to_string(),
            available,
        });
    }
    let filter = cleaning::filter_valid_sites(by_site, &config.cleaning);
    let Some(observations) = filter.kept.get(&site) else {
        return Err(Error::UnknownSite {
            site: format!("{site} (rejected by the validity filter)"),
            available: filter
                .kept
                .keys()
                .map(ToString::to_string)
                .collect::<Vec<_>>()
                .join(", "),
        });
    };
    let mut single = BTreeMap::new();
    single.insert(site, observations.clone());
    let outcome = cleaning::remove_outliers(&single, &config.cleaning)?;
    let meta = catalog
        .get(&site)
        .cloned()
        .ok_or_else(|| Error::UnknownSite {
            site: site.to_string(),
            available,
        })?;
    Ok((meta, outcome.kept.get(&site).cloned().unwrap_or_default()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn atomic_write_replaces_content_and_leaves_no_temp() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("nested").join("report.csv");
        write_atomic(&path, b"first").unwrap();
        assert_eq!(fs::read(&path).unwrap(), b"first");
        write_atomic(&path, b"second").unwrap();
        assert_eq!(fs::read(&path).unwrap(), b"second");
        assert!(!path.with_extension("tmp").exists());
    }

    #[test]
    fn calibration_csv_round_trips_parameters() {
        let cal_text = "combined_id,provenance,t0_s,vc_vph,alpha,beta,sse,converged,flags\n\
                        11N,base,42.075,1800,1,2,,,\n\
                        11N,dd1,69.87,589.9,1,2,,,\n\
                        11N,dd2,69.87,589.9,1.23,1.68,12.5,true,\n";
        let by_site = read_calibration_csv(cal_text).unwrap();
        let params = &by_site[&"11N".parse().unwrap()];
        assert_eq!(params.len(), 3);
        assert_eq!(params[2].alpha, 1.23);
        assert_eq!(params[2].provenance, models::Provenance::Dd2);
    }
}
