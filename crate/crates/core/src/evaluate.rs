//! Model error quantification: mean absolute error of travel time and
//! speed per model, stratified by volume-to-capacity bin and road class.

use std::collections::BTreeMap;
use std::fmt::{self, Display};
use std::io::Write;

use crate::error::{Error, Result};
use crate::models::{bpr_time, BprParams, Provenance};
use crate::types::{PairedObservation, RoadClass, SiteKey};

/// Volume-to-capacity stratum. The five bins partition [0, inf): boundary
/// values at 25/50/75% go up, a ratio of exactly 1.0 stays in Q4, and Q5
/// holds everything above capacity. Q5 is expected to be populated since
/// capacity is a 95th-percentile statistic.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum VcBin {
    /// [0, 25%)
    Q1,
    /// [25%, 50%)
    Q2,
    /// [50%, 75%)
    Q3,
    /// [75%, 100%]
    Q4,
    /// (100%, inf)
    Q5,
}

impl VcBin {
    pub const ALL: [VcBin; 5] = [VcBin::Q1, VcBin::Q2, VcBin::Q3, VcBin::Q4, VcBin::Q5];

    pub fn of_ratio(ratio: f64) -> VcBin {
        if ratio < 0.25 {
            VcBin::Q1
        } else if ratio < 0.50 {
            VcBin::Q2
        } else if ratio < 0.75 {
            VcBin::Q3
        } else if ratio <= 1.0 {
            VcBin::Q4
        } else {
            VcBin::Q5
        }
    }

    pub fn label(&self) -> &'static str {
        match self {
            VcBin::Q1 => "<25%",
            VcBin::Q2 => "25-50%",
            VcBin::Q3 => "50-75%",
            VcBin::Q4 => "75-100%",
            VcBin::Q5 => ">100%",
        }
    }
}

impl Display for VcBin {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.label())
    }
}

/// Mean absolute travel-time error of a model over observations, seconds.
pub fn mae_time(model: &BprParams, observations: &[PairedObservation]) -> Result<f64> {
    if observations.is_empty() {
        return Err(Error::EmptyInput("MAE needs at least one observation"));
    }
    let total: f64 = observations
        .iter()
        .map(|o| {
            bpr_time(model, o.volume as f64).map(|predicted| (predicted - o.travel_time_s).abs())
        })
        .sum::<Result<f64>>()?;
    Ok(total / observations.len() as f64)
}

/// Mean absolute speed error of a model over observations, km/h. Observed
/// speeds are derived from travel time and link length.
pub fn mae_speed(
    model: &BprParams,
    link_length_m: f64,
    observations: &[PairedObservation],
) -> Result<f64> {
    if observations.is_empty() {
        return Err(Error::EmptyInput("MAE needs at least one observation"));
    }
    if !(link_length_m.is_finite() && link_length_m > 0.0) {
        return Err(Error::BadParameter {
            field: "link_length_m",
            message: format!("must be positive, got {link_length_m}"),
        });
    }
    let total: f64 = observations
        .iter()
        .map(|o| {
            bpr_time(model, o.volume as f64).map(|predicted| {
                let model_speed = 3.6 * link_length_m / predicted;
                (model_speed - o.speed_kmh(link_length_m)).abs()
            })
        })
        .sum::<Result<f64>>()?;
    Ok(total / observations.len() as f64)
}

/// Partitions observations into volume-to-capacity bins. Every observation
/// lands in exactly one bin.
pub fn stratify(
    observations: &[PairedObservation],
    vc_vph: f64,
) -> BTreeMap<VcBin, Vec<PairedObservation>> {
    let mut bins: BTreeMap<VcBin, Vec<PairedObservation>> = BTreeMap::new();
    for o in observations {
        let ratio = o.volume as f64 / vc_vph;
        bins.entry(VcBin::of_ratio(ratio)).or_default().push(o.clone());
    }
    bins
}

/// Per-site input to the report: cleaned observations, the model ladder
/// and the capacity used for stratification (the observed estimate the
/// data-informed models share).
#[derive(Debug, Clone)]
pub struct SiteEvaluation {
    pub site: SiteKey,
    pub road_class: RoadClass,
    pub link_length_m: f64,
    pub models: [BprParams; 3],
    pub stratify_vc_vph: f64,
    pub observations: Vec<PairedObservation>,
}

/// One aggregated cell of the report.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct MaeCell {
    pub n: usize,
    pub mae_time_s: f64,
    pub mae_speed_kmh: f64,
}

/// Errors per road class: observation counts per bin and, per model, MAE
/// cells per bin plus the observation-weighted class total.
#[derive(Debug, Clone, Default)]
pub struct ClassReport {
    pub n_per_bin: BTreeMap<VcBin, usize>,
    pub n_total: usize,
    pub per_model: BTreeMap<Provenance, BTreeMap<VcBin, MaeCell>>,
    pub totals: BTreeMap<Provenance, MaeCell>,
}

impl ClassReport {
    /// Share of the class observations per bin, in percent; sums to 100.
    pub fn bin_percentages(&self) -> BTreeMap<VcBin, f64> {
        self.n_per_bin
            .iter()
            .map(|(bin, n)| (*bin, 100.0 * *n as f64 / self.n_total as f64))
            .collect()
    }
}

/// MAE of time and speed per (road class, model, volume-to-capacity bin).
#[derive(Debug, Clone, Default)]
pub struct MaeReport {
    pub classes: BTreeMap<RoadClass, ClassReport>,
    /// Sites skipped because a model variant was missing or an error
    /// surfaced while scoring them.
    pub warnings: Vec<String>,
}

impl MaeReport {
    /// The class total recomputed as the observation-weighted mean of the
    /// per-bin values; used to cross-check the directly accumulated total.
    pub fn weighted_total(&self, class: RoadClass, model: Provenance) -> Option<MaeCell> {
        let report = self.classes.get(&class)?;
        let bins = report.per_model.get(&model)?;
        let n: usize = bins.values().map(|c| c.n).sum();
        if n == 0 {
            return None;
        }
        let time = bins.values().map(|c| c.mae_time_s * c.n as f64).sum::<f64>() / n as f64;
        let speed = bins.values().map(|c| c.mae_speed_kmh * c.n as f64).sum::<f64>() / n as f64;
        Some(MaeCell {
            n,
            mae_time_s: time,
            mae_speed_kmh: speed,
        })
    }
}

struct CellAccumulator {
    n: usize,
    abs_time: f64,
    abs_speed: f64,
}

/// Builds the stratified report across sites. Sites whose ladder is
/// incomplete are excluded with a warning rather than failing the report.
pub fn build_report(sites: &[SiteEvaluation]) -> Result<MaeReport> {
    let mut accumulators: BTreeMap<(RoadClass, Provenance, VcBin), CellAccumulator> =
        BTreeMap::new();
    let mut counts: BTreeMap<(RoadClass, VcBin), usize> = BTreeMap::new();
    let mut warnings = Vec::new();

    for site in sites {
        let mut provenances: Vec<Provenance> =
            site.models.iter().map(|m| m.provenance).collect();
        provenances.sort();
        provenances.dedup();
        if provenances != vec![Provenance::Base, Provenance::Dd1, Provenance::Dd2] {
            warnings.push(format!(
                "site {} skipped: model ladder incomplete",
                site.site
            ));
            continue;
        }
        if site.observations.is_empty() {
            warnings.push(format!("site {} skipped: no observations", site.site));
            continue;
        }
        let bins = stratify(&site.observations, site.stratify_vc_vph);
        for (bin, bin_obs) in &bins {
            *counts.entry((site.road_class, *bin)).or_insert(0) += bin_obs.len();
            for model in &site.models {
                let entry = accumulators
                    .entry((site.road_class, model.provenance, *bin))
                    .or_insert(CellAccumulator {
                        n: 0,
                        abs_time: 0.0,
                        abs_speed: 0.0,
                    });
                for o in bin_obs {
                    let predicted = bpr_time(model, o.volume as f64)?;
                    entry.abs_time += (predicted - o.travel_time_s).abs();
                    entry.abs_speed += (3.6 * site.link_length_m / predicted
                        - o.speed_kmh(site.link_length_m))
                    .abs();
                }
                entry.n += bin_obs.len();
            }
        }
    }

    let mut report = MaeReport {
        warnings,
        ..MaeReport::default()
    };
    for ((class, bin), n) in &counts {
        let class_report = report.classes.entry(*class).or_default();
        class_report.n_per_bin.insert(*bin, *n);
        class_report.n_total += n;
    }
    let mut total_acc: BTreeMap<(RoadClass, Provenance), CellAccumulator> = BTreeMap::new();
    for ((class, model, bin), acc) in accumulators {
        let class_report = report.classes.entry(class).or_default();
        class_report.per_model.entry(model).or_default().insert(
            bin,
            MaeCell {
                n: acc.n,
                mae_time_s: acc.abs_time / acc.n as f64,
                mae_speed_kmh: acc.abs_speed / acc.n as f64,
            },
        );
        let t = total_acc.entry((class, model)).or_insert(CellAccumulator {
            n: 0,
            abs_time: 0.0,
            abs_speed: 0.0,
        });
        t.n += acc.n;
        t.abs_time += acc.abs_time;
        t.abs_speed += acc.abs_speed;
    }
    for ((class, model), acc) in total_acc {
        report.classes.entry(class).or_default().totals.insert(
            model,
            MaeCell {
                n: acc.n,
                mae_time_s: acc.abs_time / acc.n as f64,
                mae_speed_kmh: acc.abs_speed / acc.n as f64,
            },
        );
    }
    Ok(report)
}

/// Writes the report as CSV with bins pivoted to columns:
/// `road_class,metric,model,bin_lt25,bin_25_50,bin_50_75,bin_75_100,bin_gt100,total,n_total`.
/// Per class there is an observation-count row and a percentage row
/// (model `all`) followed by per-model MAE rows for time (seconds) and
/// speed (km/h). Empty bins leave their column blank.
pub fn write_mae_csv<W: Write>(writer: W, report: &MaeReport) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record([
        "road_class",
        "metric",
        "model",
        "bin_lt25",
        "bin_25_50",
        "bin_50_75",
        "bin_75_100",
        "bin_gt100",
        "total",
        "n_total",
    ])?;
    for (class, class_report) in &report.classes {
        let mut count_row = vec![class.to_string(), "n_obs".to_string(), "all".to_string()];
        for bin in VcBin::ALL {
            count_row.push(
                class_report
                    .n_per_bin
                    .get(&bin)
                    .map(|n| n.to_string())
                    .unwrap_or_default(),
            );
        }
        count_row.push(class_report.n_total.to_string());
        count_row.push(class_report.n_total.to_string());
        w.write_record(&count_row)?;

        let mut pct_row = vec![class.to_string(), "pct_obs".to_string(), "all".to_string()];
        let percentages = class_report.bin_percentages();
        for bin in VcBin::ALL {
            pct_row.push(
                percentages
                    .get(&bin)
                    .map(|p| format!("{p:.2}"))
                    .unwrap_or_default(),
            );
        }
        pct_row.push(format!("{:.2}", percentages.values().sum::<f64>()));
        pct_row.push(class_report.n_total.to_string());
        w.write_record(&pct_row)?;

        for metric in ["mae_time_s", "mae_speed_kmh"] {
            for model in Provenance::ALL {
                let Some(bins) = class_report.per_model.get(&model) else {
                    continue;
                };
                let mut row = vec![class.to_string(), metric.to_string(), model.to_string()];
                for bin in VcBin::ALL {
                    row.push(
                        bins.get(&bin)
                            .map(|cell| {
                                if metric == "mae_time_s" {
                                    format!("{:.4}", cell.mae_time_s)
                                } else {
                                    format!("{:.4}", cell.mae_speed_kmh)
                                }
                            })
                            .unwrap_or_default(),
                    );
                }
                let total = class_report.totals.get(&model);
                row.push(
                    total
                        .map(|cell| {
                            if metric == "mae_time_s" {
                                format!("{:.4}", cell.mae_time_s)
                            } else {
                                format!("{:.4}", cell.mae_speed_kmh)
                            }
                        })
                        .unwrap_or_default(),
                );
                row.push(total.map(|cell| cell.n.to_string()).unwrap_or_default());
                w.write_record(&row)?;
            }
        }
    }
    w.flush().map_err(|e| Error::io("<mae csv>", e))?;
    Ok(())
}
