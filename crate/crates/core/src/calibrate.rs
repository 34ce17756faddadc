//! Per-site curve calibration: free-flow time and capacity estimation from
//! cleaned observations, and least-squares fitting of the BPR coefficients.
//!
//! The three parameter sets per site form a ladder. Base derives everything
//! from lookup metadata (length over speed limit, table capacity,
//! alpha=1, beta=2). DD1 keeps the recommended coefficients but swaps in
//! estimated t0 and vc. DD2 additionally fits (alpha, beta) by damped
//! Gauss-Newton on the time residuals, initialized at (1, 2) with t0 and vc
//! held fixed, so its training SSE can never exceed DD1's.

use std::io::Write;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::models::{bpr_travel_time, BprParams, Provenance};
use crate::stats;
use crate::types::{PairedObservation, SiteKey, SiteMetadata};

/// Minimum observation count below which estimates are flagged.
pub const LOW_CONFIDENCE_THRESHOLD: usize = 20;

/// Delay band used for the capacity estimate, in multiples of t0. The band
/// brackets the half-speed point (travel time = 2 * t0), both ends closed.
pub const CAPACITY_BAND: (f64, f64) = (1.8, 2.2);

/// Free-flow travel time estimate: the 5th percentile (fastest) of the
/// observed travel times.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FreeFlowEstimate {
    pub t0_s: f64,
    /// Set when the site has fewer observations than
    /// [`LOW_CONFIDENCE_THRESHOLD`]; the estimate is still returned.
    pub low_confidence: bool,
}

pub fn estimate_free_flow_time(observations: &[PairedObservation]) -> Result<FreeFlowEstimate> {
    let times: Vec<f64> = observations.iter().map(|o| o.travel_time_s).collect();
    let t0_s = stats::percentile(&times, 5.0)
        .ok_or(Error::EmptyInput("free-flow estimation needs observations"))?;
    Ok(FreeFlowEstimate {
        t0_s,
        low_confidence: observations.len() < LOW_CONFIDENCE_THRESHOLD,
    })
}

/// Capacity estimate: the 95th percentile of hourly volume among
/// observations whose travel time falls inside the delay band.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CapacityEstimate {
    pub vc_vph: f64,
    /// Set when no observation fell inside the band and the maximum
    /// observed volume was used instead.
    pub band_empty: bool,
}

pub fn estimate_capacity(observations: &[PairedObservation], t0_s: f64) -> Result<CapacityEstimate> {
    if observations.is_empty() {
        return Err(Error::EmptyInput("capacity estimation needs observations"));
    }
    if !(t0_s.is_finite() && t0_s > 0.0) {
        return Err(Error::BadParameter {
            field: "t0_s",
            message: format!("must be positive, got {t0_s}"),
        });
    }
    let (lo, hi) = (CAPACITY_BAND.0 * t0_s, CAPACITY_BAND.1 * t0_s);
    let in_band: Vec<f64> = observations
        .iter()
        .filter(|o| o.travel_time_s >= lo && o.travel_time_s <= hi)
        .map(|o| o.volume as f64)
        .collect();
    if in_band.is_empty() {
        let max_volume = observations.iter().map(|o| o.volume).max().unwrap_or(0);
        return Ok(CapacityEstimate {
            vc_vph: max_volume as f64,
            band_empty: true,
        });
    }
    Ok(CapacityEstimate {
        vc_vph: stats::percentile(&in_band, 95.0).expect("band is non-empty"),
        band_empty: false,
    })
}

/// Base parameter set: free-flow time from length over speed limit,
/// capacity from the lookup table, recommended coefficients.
pub fn base_params(meta: &SiteMetadata) -> Result<BprParams> {
    meta.validate()?;
    BprParams::new(
        3.6 * meta.link_length_m / meta.speed_limit_kmh,
        meta.dmrb_capacity_vph,
        1.0,
        2.0,
        Provenance::Base,
    )
}

/// DD1 parameter set: observed t0 and vc with the recommended
/// coefficients.
pub fn dd1_params(t0_obs_s: f64, vc_obs_vph: f64) -> Result<BprParams> {
    BprParams::new(t0_obs_s, vc_obs_vph, 1.0, 2.0, Provenance::Dd1)
}

/// Box bounds on the fitted coefficients. Wide on purpose: real fits live
/// well inside, and reaching an edge is reported as a diagnostic rather
/// than silently truncating the curve family.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FitBounds {
    pub alpha: (f64, f64),
    pub beta: (f64, f64),
}

impl Default for FitBounds {
    fn default() -> Self {
        FitBounds {
            alpha: (0.0, 10.0),
            beta: (0.1, 10.0),
        }
    }
}

const SSE_RELATIVE_TOLERANCE: f64 = 1e-10;
const STEP_TOLERANCE: f64 = 1e-8;
const MAX_ITERATIONS: u32 = 200;

/// Solver trace for one DD2 fit.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FitDiagnostics {
    pub sse: f64,
    pub initial_sse: f64,
    pub iterations: u32,
    pub converged: bool,
    /// The fitted curve is concave (beta < 1); legitimate but worth
    /// flagging since it usually signals hyper-congested observations.
    pub beta_below_one: bool,
    /// A coefficient finished on a bound edge.
    pub hit_bounds: bool,
}

struct FitProblem<'a> {
    t0_s: f64,
    vc_vph: f64,
    observations: &'a [PairedObservation],
}

impl FitProblem<'_> {
    fn sse(&self, alpha: f64, beta: f64) -> f64 {
        self.observations
            .iter()
            .map(|o| {
                let r = bpr_travel_time(self.t0_s, self.vc_vph, alpha, beta, o.volume as f64)
                    - o.travel_time_s;
                r * r
            })
            .sum()
    }

    /// Residuals and the residual Jacobian columns with respect to
    /// (alpha, beta). With x = v/vc and w = x^beta:
    /// dr/dalpha = t0 * w, dr/dbeta = t0 * alpha * w * ln(x), where the
    /// beta column vanishes at zero volume.
    fn residuals_jacobian(&self, alpha: f64, beta: f64) -> (Vec<f64>, Vec<[f64; 2]>) {
        let mut residuals = Vec::with_capacity(self.observations.len());
        let mut jacobian = Vec::with_capacity(self.observations.len());
        for o in self.observations {
            let x = o.volume as f64 / self.vc_vph;
            let w = if x > 0.0 { x.powf(beta) } else { 0.0 };
            residuals.push(self.t0_s * (1.0 + alpha * w) - o.travel_time_s);
            let d_beta = if x > 0.0 {
                self.t0_s * alpha * w * x.ln()
            } else {
                0.0
            };
            jacobian.push([self.t0_s * w, d_beta]);
        }
        (residuals, jacobian)
    }
}

fn clamp(value: f64, (lo, hi): (f64, f64)) -> f64 {
    value.clamp(lo, hi)
}

/// Fits (alpha, beta) by damped Gauss-Newton with Marquardt scaling,
/// holding t0 and vc fixed. Steps are accepted only when they reduce the
/// SSE, so the result never fits worse than the (1, 2) starting point.
/// Convergence: relative SSE change below 1e-10 or step below 1e-8, capped
/// at 200 iterations.
pub fn fit_bpr(
    observations: &[PairedObservation],
    t0_s: f64,
    vc_vph: f64,
    bounds: FitBounds,
) -> Result<(BprParams, FitDiagnostics)> {
    let site = observations
        .first()
        .ok_or(Error::EmptyInput("fitting needs observations"))?
        .site;
    let mut distinct: Vec<u32> = observations.iter().map(|o| o.volume).collect();
    distinct.sort_unstable();
    distinct.dedup();
    if distinct.len() < 2 {
        return Err(Error::DegenerateFit {
            site,
            message: "all observed volumes are equal".to_string(),
        });
    }

    let problem = FitProblem {
        t0_s,
        vc_vph,
        observations,
    };
    let mut alpha = clamp(1.0, bounds.alpha);
    let mut beta = clamp(2.0, bounds.beta);
    let initial_sse = problem.sse(alpha, beta);
    let mut sse = initial_sse;
    let mut lambda = 1e-3;
    let mut converged = false;
    let mut iterations = 0;

    while iterations < MAX_ITERATIONS {
        iterations += 1;
        let (residuals, jacobian) = problem.residuals_jacobian(alpha, beta);
        let mut jtj = [[0.0f64; 2]; 2];
        let mut jtr = [0.0f64; 2];
        for (r, row) in residuals.iter().zip(&jacobian) {
            jtj[0][0] += row[0] * row[0];
            jtj[0][1] += row[0] * row[1];
            jtj[1][1] += row[1] * row[1];
            jtr[0] += row[0] * r;
            jtr[1] += row[1] * r;
        }
        jtj[1][0] = jtj[0][1];

        let mut accepted = false;
        while lambda < 1e14 {
            let a = jtj[0][0] + lambda * jtj[0][0].max(1e-12);
            let d = jtj[1][1] + lambda * jtj[1][1].max(1e-12);
            let b = jtj[0][1];
            let det = a * d - b * b;
            if det.abs() < f64::MIN_POSITIVE {
                lambda *= 10.0;
                continue;
            }
            let step_alpha = (-jtr[0] * d + jtr[1] * b) / det;
            let step_beta = (-jtr[1] * a + jtr[0] * b) / det;
            let next_alpha = clamp(alpha + step_alpha, bounds.alpha);
            let next_beta = clamp(beta + step_beta, bounds.beta);
            let next_sse = problem.sse(next_alpha, next_beta);
            if next_sse < sse {
                let step_norm = ((next_alpha - alpha).powi(2) + (next_beta - beta).powi(2)).sqrt();
                let relative_drop = (sse - next_sse) / sse.max(f64::MIN_POSITIVE);
                alpha = next_alpha;
                beta = next_beta;
                sse = next_sse;
                lambda = (lambda / 3.0).max(1e-12);
                accepted = true;
                if relative_drop < SSE_RELATIVE_TOLERANCE || step_norm < STEP_TOLERANCE {
                    converged = true;
                }
                break;
            }
            lambda *= 10.0;
        }
        if !accepted {
            // No descent direction left at any damping: the current point
            // is a (possibly bound-constrained) minimum.
            converged = true;
        }
        if converged {
            break;
        }
    }

    let edge = |v: f64, (lo, hi): (f64, f64)| v <= lo + 1e-12 || v >= hi - 1e-12;
    let diagnostics = FitDiagnostics {
        sse,
        initial_sse,
        iterations,
        converged,
        beta_below_one: beta < 1.0,
        hit_bounds: edge(alpha, bounds.alpha) || edge(beta, bounds.beta),
    };
    let params = BprParams::new(t0_s, vc_vph, alpha, beta, Provenance::Dd2)?;
    Ok((params, diagnostics))
}

/// Everything calibration produces for one site.
#[derive(Debug, Clone)]
pub struct SiteCalibration {
    pub site: SiteKey,
    pub base: BprParams,
    pub dd1: BprParams,
    pub dd2: BprParams,
    pub diagnostics: FitDiagnostics,
    pub low_confidence: bool,
    pub band_empty: bool,
}

impl SiteCalibration {
    pub fn flags(&self) -> String {
        let mut flags = Vec::new();
        if self.low_confidence {
            flags.push("low_confidence");
        }
        if self.band_empty {
            flags.push("band_empty");
        }
        if self.diagnostics.beta_below_one {
            flags.push("concave_beta");
        }
        if self.diagnostics.hit_bounds {
            flags.push("hit_bounds");
        }
        flags.join("|")
    }
}

/// Runs the full ladder for one site: estimate t0 and vc, then Base, DD1
/// and the DD2 fit.
pub fn calibrate_site(
    meta: &SiteMetadata,
    observations: &[PairedObservation],
) -> Result<SiteCalibration> {
    let free_flow = estimate_free_flow_time(observations)?;
    let capacity = estimate_capacity(observations, free_flow.t0_s)?;
    let base = base_params(meta)?;
    let dd1 = dd1_params(free_flow.t0_s, capacity.vc_vph)?;
    let (dd2, diagnostics) = fit_bpr(
        observations,
        free_flow.t0_s,
        capacity.vc_vph,
        FitBounds::default(),
    )?;
    Ok(SiteCalibration {
        site: meta.site,
        base,
        dd1,
        dd2,
        diagnostics,
        low_confidence: free_flow.low_confidence,
        band_empty: capacity.band_empty,
    })
}

#[derive(Debug, Serialize)]
struct CalibrationRow {
    combined_id: String,
    provenance: String,
    t0_s: f64,
    vc_vph: f64,
    alpha: f64,
    beta: f64,
    sse: String,
    converged: String,
    flags: String,
}

/// Writes the calibration CSV
/// (`combined_id,provenance,t0_s,vc_vph,alpha,beta,sse,converged,flags`),
/// three rows per site. SSE and convergence apply to the DD2 fit only.
pub fn write_calibration_csv<W: Write>(writer: W, sites: &[SiteCalibration]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    for cal in sites {
        for params in [&cal.base, &cal.dd1, &cal.dd2] {
            let is_fit = params.provenance == Provenance::Dd2;
            w.serialize(CalibrationRow {
                combined_id: cal.site.to_string(),
                provenance: params.provenance.to_string(),
                t0_s: params.t0_s,
                vc_vph: params.vc_vph,
                alpha: params.alpha,
                beta: params.beta,
                sse: if is_fit {
                    cal.diagnostics.sse.to_string()
                } else {
                    String::new()
                },
                converged: if is_fit {
                    cal.diagnostics.converged.to_string()
                } else {
                    String::new()
                },
                flags: if is_fit { cal.flags() } else { String::new() },
            })?;
        }
    }
    w.flush().map_err(|e| Error::io("<calibration csv>", e))?;
    Ok(())
}
