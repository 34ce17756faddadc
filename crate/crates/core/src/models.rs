//! Volume-delay and speed-flow model evaluation: the BPR curve and the
//! DfT TAG piecewise-linear speed-flow formulas for urban (class 7) and
//! suburban single-carriageway (class 10) roads.

use std::fmt::{self, Display};
use std::io::Write;

use serde::Serialize;

use crate::error::{Error, Result};

/// Which rung of the model ladder a parameter set belongs to.
///
/// Base uses lookup-table free-flow time and capacity with the recommended
/// coefficients; DD1 swaps in observed estimates of t0 and vc; DD2
/// additionally fits alpha and beta by least squares.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Provenance {
    Base,
    Dd1,
    Dd2,
}

impl Provenance {
    pub const ALL: [Provenance; 3] = [Provenance::Base, Provenance::Dd1, Provenance::Dd2];
}

impl Display for Provenance {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Provenance::Base => "base",
            Provenance::Dd1 => "dd1",
            Provenance::Dd2 => "dd2",
        };
        write!(f, "{s}")
    }
}

/// BPR coefficient set for one directional link:
/// `t = t0 * (1 + alpha * (v / vc)^beta)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BprParams {
    /// Free-flow travel time, seconds.
    pub t0_s: f64,
    /// Capacity, vehicles per hour.
    pub vc_vph: f64,
    pub alpha: f64,
    pub beta: f64,
    pub provenance: Provenance,
}

impl BprParams {
    pub fn new(
        t0_s: f64,
        vc_vph: f64,
        alpha: f64,
        beta: f64,
        provenance: Provenance,
    ) -> Result<Self> {
        let positive = |field: &'static str, v: f64| {
            if v.is_finite() && v > 0.0 {
                Ok(())
            } else {
                Err(Error::BadParameter {
                    field,
                    message: format!("must be positive, got {v}"),
                })
            }
        };
        positive("t0_s", t0_s)?;
        positive("vc_vph", vc_vph)?;
        if !(alpha.is_finite() && alpha >= 0.0) {
            return Err(Error::BadParameter {
                field: "alpha",
                message: format!("must be non-negative, got {alpha}"),
            });
        }
        positive("beta", beta)?;
        Ok(BprParams {
            t0_s,
            vc_vph,
            alpha,
            beta,
            provenance,
        })
    }

    /// Free-flow speed in km/h for a link of the given length.
    pub fn free_flow_speed_kmh(&self, link_length_m: f64) -> f64 {
        3.6 * link_length_m / self.t0_s
    }
}

/// The raw BPR travel time with no argument checking. Callers guarantee
/// t0 > 0, vc > 0, alpha >= 0, beta > 0 and volume >= 0.
pub(crate) fn bpr_travel_time(t0_s: f64, vc_vph: f64, alpha: f64, beta: f64, volume: f64) -> f64 {
    t0_s * (1.0 + alpha * (volume / vc_vph).powf(beta))
}

/// Travel time in seconds predicted by the BPR curve at the given hourly
/// volume. At volume 0 this is exactly t0; at volume vc it is (1+alpha)*t0.
pub fn bpr_time(params: &BprParams, volume_vph: f64) -> Result<f64> {
    if !volume_vph.is_finite() || volume_vph < 0.0 {
        return Err(Error::NegativeVolume(volume_vph));
    }
    Ok(bpr_travel_time(
        params.t0_s,
        params.vc_vph,
        params.alpha,
        params.beta,
        volume_vph,
    ))
}

/// Space-mean speed in km/h predicted by the BPR curve:
/// `u = 3.6 * l / t`, equivalently `u0 / (1 + alpha * (v/vc)^beta)`.
pub fn bpr_speed(params: &BprParams, link_length_m: f64, volume_vph: f64) -> Result<f64> {
    if !(link_length_m.is_finite() && link_length_m > 0.0) {
        return Err(Error::BadParameter {
            field: "link_length_m",
            message: format!("must be positive, got {link_length_m}"),
        });
    }
    Ok(3.6 * link_length_m / bpr_time(params, volume_vph)?)
}

/// Parameters for the TAG class 7 (urban non-central) speed-flow formula.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TagClass7Params {
    /// Percentage frontage development, 0..=100.
    pub devel_pct: f64,
}

/// Parameters for the TAG class 10 (suburban single carriageway)
/// speed-flow formula.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TagClass10Params {
    /// Percentage heavy vehicles.
    pub phv_pct: f64,
    /// Major intersections per km.
    pub int_per_km: f64,
    /// Minor intersections per km.
    pub axs_per_km: f64,
}

impl TagClass10Params {
    /// Maximum realistic flow, vehicles/hour: `1500 * (92 - PHV/80)`.
    ///
    /// The published formula is reproduced verbatim even though it yields
    /// implausibly large flows (138,000 veh/h at PHV=0); values above the
    /// flow change point should be treated with caution.
    pub fn q_c(&self) -> f64 {
        1500.0 * (92.0 - self.phv_pct / 80.0)
    }

    /// Flow change point: `0.7 * Q_C`.
    pub fn q_b(&self) -> f64 {
        0.7 * self.q_c()
    }
}

/// Result of a TAG speed-flow evaluation. The linear forms go negative at
/// large volumes, so speeds are floored at 1 km/h and flagged.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TagSpeed {
    pub speed_kmh: f64,
    pub floored: bool,
}

const TAG_SPEED_FLOOR_KMH: f64 = 1.0;

fn floor_speed(speed: f64) -> TagSpeed {
    if speed < TAG_SPEED_FLOOR_KMH {
        TagSpeed {
            speed_kmh: TAG_SPEED_FLOOR_KMH,
            floored: true,
        }
    } else {
        TagSpeed {
            speed_kmh: speed,
            floored: false,
        }
    }
}

/// TAG class 7 speed at the given hourly volume:
/// `v0 = 64.5 - DEVEL/5`, `v = v0 - 30 * volume / 1000`.
pub fn tag_speed_class7(params: &TagClass7Params, volume_vph: f64) -> TagSpeed {
    let v0 = 64.5 - params.devel_pct / 5.0;
    floor_speed(v0 - 30.0 * volume_vph / 1000.0)
}

/// TAG class 10 speed at the given hourly volume. Piecewise linear with a
/// steeper slope between the flow change point Q_B and the maximum
/// realistic flow Q_C; clamped past Q_C where the guidance defines nothing.
pub fn tag_speed_class10(params: &TagClass10Params, volume_vph: f64) -> TagSpeed {
    let v0 = 70.0 - 5.0 * params.int_per_km - 3.0 * params.axs_per_km / 20.0;
    let slope_low = 12.0 + 50.0 * params.int_per_km / 3.0;
    let q_c = params.q_c();
    let q_b = params.q_b();
    let v = if volume_vph < q_b {
        v0 - slope_low * volume_vph / 1000.0
    } else {
        let capped = volume_vph.min(q_c);
        v0 - slope_low * q_b / 1000.0 - 45.0 * (capped - q_b) / 1000.0
    };
    floor_speed(v)
}

/// One row of the curve-sampling output used for plotting.
#[derive(Debug, Clone, Serialize)]
pub struct CurveSample {
    pub volume: f64,
    pub model: String,
    pub time_s: f64,
    pub speed_kmh: f64,
}

/// Samples each parameter set on a uniform volume grid of `grid_points`
/// intervals over [0, max_volume].
pub fn sample_curves(
    params: &[BprParams],
    link_length_m: f64,
    max_volume: f64,
    grid_points: usize,
) -> Result<Vec<CurveSample>> {
    if grid_points == 0 {
        return Err(Error::BadSpec {
            field: "grid".to_string(),
            message: "volume grid resolution must be at least 1".to_string(),
        });
    }
    let mut samples = Vec::with_capacity(params.len() * (grid_points + 1));
    for p in params {
        for step in 0..=grid_points {
            let volume = max_volume * step as f64 / grid_points as f64;
            let time_s = bpr_time(p, volume)?;
            samples.push(CurveSample {
                volume,
                model: p.provenance.to_string(),
                time_s,
                speed_kmh: 3.6 * link_length_m / time_s,
            });
        }
    }
    Ok(samples)
}

/// Writes curve samples as CSV: `volume,model,time_s,speed_kmh`.
pub fn write_curve_csv<W: Write>(writer: W, samples: &[CurveSample]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    for s in samples {
        w.serialize(s)?;
    }
    w.flush().map_err(|e| Error::io("<curve csv>", e))?;
    Ok(())
}
