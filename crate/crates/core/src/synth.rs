//! Synthetic volume-delay corpora generated from known ground-truth
//! parameters, with heteroskedastic multiplicative noise and planted
//! outliers. These corpora drive estimator-recovery tests and end-to-end
//! runs: `generate_corpus` emits the same counter, replay and metadata CSV
//! formats the ingest and harvester modules consume.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use chrono::{Days, NaiveDate};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::models::bpr_travel_time;
use crate::types::{PairedObservation, RoadClass, SiteKey};

/// How hourly volumes are drawn.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VolumeLaw {
    /// Integer volumes uniform over [0, 1.2 * vc].
    Uniform,
    /// A daily profile with morning and evening peaks. The shape constants
    /// are arbitrary: bumps at hours 8 and 18 (sigma 2.0 and 2.6, evening
    /// amplitude 1.015 of capacity after baseline cut), a small baseline
    /// cut that zeroes the deepest night hours, and a mild volume jitter.
    /// The evening peak tops out just above capacity so the half-speed
    /// delay band is populated without flooding the super-capacity range.
    BimodalDaily,
}

/// Recipe for one synthetic site.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    /// Ground-truth free-flow time, seconds.
    pub t0_s: f64,
    /// Ground-truth capacity, vehicles/hour.
    pub vc_vph: f64,
    pub alpha: f64,
    pub beta: f64,
    pub link_length_m: f64,
    /// Number of consecutive hourly observations to generate.
    pub n_obs: usize,
    pub volume_law: VolumeLaw,
    /// Relative noise standard deviation at zero volume.
    pub noise_sigma0: f64,
    /// Extra relative standard deviation per unit of v/vc.
    pub noise_growth: f64,
    /// Extra points planted at >= 3x the curve time.
    pub outlier_count: usize,
    pub seed: u64,
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        let field = |name: &str, ok: bool, message: String| {
            if ok {
                Ok(())
            } else {
                Err(Error::BadSpec {
                    field: name.to_string(),
                    message,
                })
            }
        };
        field("t0_s", self.t0_s > 0.0, format!("must be positive, got {}", self.t0_s))?;
        field("vc_vph", self.vc_vph > 0.0, format!("must be positive, got {}", self.vc_vph))?;
        field("alpha", self.alpha >= 0.0, format!("must be non-negative, got {}", self.alpha))?;
        field("beta", self.beta > 0.0, format!("must be positive, got {}", self.beta))?;
        field(
            "link_length_m",
            self.link_length_m > 0.0,
            format!("must be positive, got {}", self.link_length_m),
        )?;
        field("n_obs", self.n_obs >= 1, "must be at least 1".to_string())?;
        field(
            "noise_sigma0",
            self.noise_sigma0 >= 0.0,
            format!("must be non-negative, got {}", self.noise_sigma0),
        )?;
        field(
            "noise_growth",
            self.noise_growth >= 0.0,
            format!("must be non-negative, got {}", self.noise_growth),
        )?;
        Ok(())
    }
}

/// Ground truth sidecar row for one generated site.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub combined_id: String,
    pub t0_s: f64,
    pub vc_vph: f64,
    pub alpha: f64,
    pub beta: f64,
    pub sigma0: f64,
    pub growth: f64,
    pub seed: u64,
}

/// Observations for one synthetic site plus the truth that produced them.
/// The first `spec.n_obs` observations follow the volume law on a
/// consecutive hourly grid; planted outliers continue the grid after them.
#[derive(Debug, Clone)]
pub struct GeneratedSite {
    pub observations: Vec<PairedObservation>,
    pub truth: GroundTruth,
}

fn bimodal_shape(hour: u8) -> f64 {
    let h = hour as f64;
    let bump = |mu: f64, sigma: f64| (-((h - mu) * (h - mu)) / (2.0 * sigma * sigma)).exp();
    (0.88 * bump(8.0, 2.0) + 1.03 * bump(18.0, 2.6) - 0.015).max(0.0)
}

fn grid_cell(start_date: NaiveDate, index: usize) -> (NaiveDate, u8) {
    let date = start_date + Days::new((index / 24) as u64);
    let hour = (index % 24 + 1) as u8;
    (date, hour)
}

/// Generates one site deterministically from its spec and seed: volumes
/// from the law, times from the truth curve scaled by
/// `1 + eps, eps ~ Normal(0, (sigma0 + growth * v/vc)^2)` truncated at
/// -0.9 so times stay positive, then the planted outliers.
pub fn generate_site(site: SiteKey, start_date: NaiveDate, spec: &SynthSpec) -> Result<GeneratedSite> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut observations = Vec::with_capacity(spec.n_obs + spec.outlier_count);

    for index in 0..spec.n_obs {
        let (date, hour) = grid_cell(start_date, index);
        let volume = match spec.volume_law {
            VolumeLaw::Uniform => {
                let max = (1.2 * spec.vc_vph).floor() as u32;
                rng.gen_range(0..=max)
            }
            VolumeLaw::BimodalDaily => {
                let jitter: f64 = rng.gen_range(-0.10..0.01);
                (spec.vc_vph * bimodal_shape(hour) * (1.0 + jitter)).round() as u32
            }
        };
        let curve = bpr_travel_time(spec.t0_s, spec.vc_vph, spec.alpha, spec.beta, volume as f64);
        let sigma = spec.noise_sigma0 + spec.noise_growth * volume as f64 / spec.vc_vph;
        let eps = if sigma > 0.0 {
            Normal::new(0.0, sigma)
                .expect("sigma is finite and positive")
                .sample(&mut rng)
                .max(-0.9)
        } else {
            0.0
        };
        observations.push(PairedObservation {
            site,
            date,
            hour,
            volume,
            travel_time_s: curve * (1.0 + eps),
        });
    }

    for k in 0..spec.outlier_count {
        let (date, hour) = grid_cell(start_date, spec.n_obs + k);
        let volume = (spec.vc_vph * rng.gen_range(0.25..0.75)).round() as u32;
        let curve = bpr_travel_time(spec.t0_s, spec.vc_vph, spec.alpha, spec.beta, volume as f64);
        let factor: f64 = rng.gen_range(3.0..5.0);
        observations.push(PairedObservation {
            site,
            date,
            hour,
            volume,
            travel_time_s: curve * factor,
        });
    }

    Ok(GeneratedSite {
        observations,
        truth: GroundTruth {
            combined_id: site.to_string(),
            t0_s: spec.t0_s,
            vc_vph: spec.vc_vph,
            alpha: spec.alpha,
            beta: spec.beta,
            sigma0: spec.noise_sigma0,
            growth: spec.noise_growth,
            seed: spec.seed,
        },
    })
}

/// One site of a corpus: metadata fields plus its generation recipe.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusSiteSpec {
    pub combined_id: String,
    pub road_class: String,
    pub speed_limit_kmh: f64,
    pub dmrb_capacity_vph: f64,
    pub origin_lat: f64,
    pub origin_lon: f64,
    pub dest_lat: f64,
    pub dest_lon: f64,
    pub synth: SynthSpec,
}

/// A full corpus recipe, loadable from a TOML file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusSpec {
    /// First calendar date of the grid, `YYYY-MM-DD`.
    pub start_date: String,
    pub sites: Vec<CorpusSiteSpec>,
}

impl CorpusSpec {
    pub fn from_toml(text: &str) -> Result<CorpusSpec> {
        let spec: CorpusSpec = toml::from_str(text).map_err(|e| Error::BadSpec {
            field: "corpus spec".to_string(),
            message: e.to_string(),
        })?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        self.start_date()?;
        if self.sites.is_empty() {
            return Err(Error::BadSpec {
                field: "sites".to_string(),
                message: "at least one site is required".to_string(),
            });
        }
        for site in &self.sites {
            SiteKey::from_str(&site.combined_id)?;
            RoadClass::from_str(&site.road_class)?;
            site.synth.validate()?;
            if site.speed_limit_kmh <= 0.0 || site.dmrb_capacity_vph <= 0.0 {
                return Err(Error::BadSpec {
                    field: format!("site {}", site.combined_id),
                    message: "speed limit and capacity must be positive".to_string(),
                });
            }
        }
        Ok(())
    }

    pub fn start_date(&self) -> Result<NaiveDate> {
        NaiveDate::parse_from_str(&self.start_date, "%Y-%m-%d").map_err(|e| Error::BadSpec {
            field: "start_date".to_string(),
            message: format!("bad date '{}': {e}", self.start_date),
        })
    }

    /// Overrides every per-site seed deterministically from a new master
    /// seed, keeping the structure untouched.
    pub fn reseed(&mut self, master_seed: u64) {
        for (index, site) in self.sites.iter_mut().enumerate() {
            site.synth.seed = master_seed
                .wrapping_mul(0x9e37_79b9_7f4a_7c15)
                .wrapping_add(index as u64);
        }
    }
}

/// Paths of the files one corpus generation emits.
#[derive(Debug, Clone)]
pub struct CorpusFiles {
    pub counters: PathBuf,
    pub times: PathBuf,
    pub metadata: PathBuf,
    pub truth: PathBuf,
}

/// Generates a corpus to disk: a per-vehicle counter CSV whose hourly
/// aggregation reproduces the drawn volumes exactly, a travel-time replay
/// CSV (queries at half past each hour), the metadata catalog and a ground
/// truth sidecar. Byte-identical for identical specs.
pub fn generate_corpus(spec: &CorpusSpec, out_dir: &Path) -> Result<CorpusFiles> {
    spec.validate()?;
    let start_date = spec.start_date()?;
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;

    let files = CorpusFiles {
        counters: out_dir.join("counters.csv"),
        times: out_dir.join("travel_times.csv"),
        metadata: out_dir.join("metadata.csv"),
        truth: out_dir.join("ground_truth.csv"),
    };

    let mut counters = csv_writer(&files.counters)?;
    counters
        .write_record(["site", "direction", "date", "time", "speed"])
        .map_err(Error::from)?;
    let mut times = csv_writer(&files.times)?;
    times
        .write_record(["combined_id", "timestamp_iso8601", "duration_s"])
        .map_err(Error::from)?;
    let mut metadata = csv_writer(&files.metadata)?;
    metadata
        .write_record([
            "combined_id",
            "road_class",
            "length_m",
            "speed_limit_kmh",
            "dmrb_capacity_vph",
            "origin_lat",
            "origin_lon",
            "dest_lat",
            "dest_lon",
        ])
        .map_err(Error::from)?;
    let mut truth = csv_writer(&files.truth)?;

    for site_spec in &spec.sites {
        let site = SiteKey::from_str(&site_spec.combined_id)?;
        let generated = generate_site(site, start_date, &site_spec.synth)?;

        metadata.write_record([
            site_spec.combined_id.clone(),
            site_spec.road_class.clone(),
            site_spec.synth.link_length_m.to_string(),
            site_spec.speed_limit_kmh.to_string(),
            site_spec.dmrb_capacity_vph.to_string(),
            site_spec.origin_lat.to_string(),
            site_spec.origin_lon.to_string(),
            site_spec.dest_lat.to_string(),
            site_spec.dest_lon.to_string(),
        ])?;
        truth.serialize(&generated.truth)?;

        for obs in &generated.observations {
            let date = obs.date.format("%Y-%m-%d").to_string();
            // One query per observed hour, fired at half past.
            let timestamp = format!("{date}T{:02}:30:00", obs.hour - 1);
            times.write_record([
                site_spec.combined_id.clone(),
                timestamp,
                obs.travel_time_s.to_string(),
            ])?;

            // Point speed is plausible filler; nothing downstream uses it.
            let speed = format!(
                "{:.1}",
                3.6 * site_spec.synth.link_length_m / obs.travel_time_s
            );
            let base_second = (obs.hour as u64 - 1) * 3600;
            for k in 0..obs.volume as u64 {
                let offset = 1 + k * 3599 / obs.volume as u64;
                let second = base_second + offset;
                let time = format!(
                    "{:02}:{:02}:{:02}",
                    second / 3600,
                    (second % 3600) / 60,
                    second % 60
                );
                counters.write_record([
                    site.site_id.to_string(),
                    site.direction.label().to_string(),
                    date.clone(),
                    time,
                    speed.clone(),
                ])?;
            }
        }
    }

    for writer in [counters, times, metadata, truth] {
        writer
            .into_inner()
            .map_err(|e| Error::io(out_dir, std::io::Error::other(e)))?
            .flush()
            .map_err(|e| Error::io(out_dir, e))?;
    }
    Ok(files)
}

fn csv_writer(path: &Path) -> Result<csv::Writer<std::io::BufWriter<fs::File>>> {
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    Ok(csv::Writer::from_writer(std::io::BufWriter::new(file)))
}

/// The default bundled corpus: 24 directional sites across the five road
/// classes (4 Trunk, 10 Principal, 2 B, 2 C, 6 Unclassified), nine days of
/// hourly observations each, daily-profile volumes, mild heteroskedastic
/// noise and two planted outliers per site. Site truths are drawn
/// deterministically from the master seed; lookup metadata is skewed the
/// way real tables are (capacity well above observed, speed limit above
/// free-flow speed).
pub fn default_corpus_spec(master_seed: u64) -> CorpusSpec {
    let class_plan: [(RoadClass, u32, usize); 5] = [
        (RoadClass::Trunk, 1, 2),
        (RoadClass::Principal, 3, 5),
        (RoadClass::B, 8, 1),
        (RoadClass::C, 9, 1),
        (RoadClass::Unclassified, 10, 3),
    ];
    let days = 9;
    let mut sites = Vec::new();
    let mut index = 0u64;
    for (class, first_id, locations) in class_plan {
        for location in 0..locations {
            let id = first_id + location as u32;
            for direction in ['N', 'S'] {
                let mut rng =
                    ChaCha8Rng::seed_from_u64(master_seed ^ (0xA5A5_0000 + index * 7919));
                let (length, u0, vc): (f64, f64, f64) = match class {
                    RoadClass::Trunk => (
                        rng.gen_range(1200.0..2200.0),
                        rng.gen_range(48.0..64.0),
                        rng.gen_range(550.0..700.0),
                    ),
                    RoadClass::Principal => (
                        rng.gen_range(500.0..1100.0),
                        rng.gen_range(28.0..42.0),
                        rng.gen_range(280.0..420.0),
                    ),
                    RoadClass::B => (
                        rng.gen_range(400.0..900.0),
                        rng.gen_range(28.0..40.0),
                        rng.gen_range(180.0..260.0),
                    ),
                    RoadClass::C => (
                        rng.gen_range(300.0..700.0),
                        rng.gen_range(24.0..36.0),
                        rng.gen_range(120.0..200.0),
                    ),
                    RoadClass::Unclassified => (
                        rng.gen_range(250.0..500.0),
                        rng.gen_range(20.0..32.0),
                        rng.gen_range(80.0..130.0),
                    ),
                };
                let length = (length / 10.0).round() * 10.0;
                let alpha = rng.gen_range(0.5..1.3);
                let beta = rng.gen_range(1.15..1.85);
                let lat = 51.30 + 0.01 * index as f64;
                let lon = -0.30 + 0.013 * index as f64;
                sites.push(CorpusSiteSpec {
                    combined_id: format!("{id}{direction}"),
                    road_class: class.to_string(),
                    // Observed free-flow speeds run ~20% below posted
                    // limits; observed capacities run well below table
                    // values.
                    speed_limit_kmh: (u0 / 0.8).round(),
                    dmrb_capacity_vph: (vc / 0.34).round(),
                    origin_lat: lat,
                    origin_lon: lon,
                    dest_lat: lat + 0.003,
                    dest_lon: lon + 0.001,
                    synth: SynthSpec {
                        t0_s: 3.6 * length / u0,
                        vc_vph: vc,
                        alpha,
                        beta,
                        link_length_m: length,
                        n_obs: days * 24,
                        volume_law: VolumeLaw::BimodalDaily,
                        noise_sigma0: 0.04,
                        noise_growth: 0.05,
                        outlier_count: 2,
                        seed: master_seed.wrapping_add(index * 104_729),
                    },
                });
                index += 1;
            }
        }
    }
    CorpusSpec {
        start_date: "2016-02-29".to_string(),
        sites,
    }
}
