//! Estimation of the traffic characteristic vector `{λ, H, h(q), Δh, σ_var}`.
//!
//! Generalized Hurst exponents come from q-order fluctuation functions of the
//! integrated, mean-removed series. The profile is cut into segments of
//! length `s`; each segment's variance around its least-squares line is
//! `F²(v, s)`, and
//!
//! ```text
//! F_q(s) = ( mean_v F²(v, s)^(q/2) )^(1/q)  ~  c(q) · s^h(q)
//! ```
//!
//! so `h(q)` is the slope of `ln F_q(s)` against `ln s` and `ln c(q)` the
//! intercept. Averaging segment variances keeps negative moments finite for
//! Gaussian input, where raw increment moments of order `q <= -1` diverge.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::trace::TrafficTrace;

pub const DEFAULT_Q_GRID: [f64; 10] = [-5.0, -4.0, -3.0, -2.0, -1.0, 1.0, 2.0, 3.0, 4.0, 5.0];
pub const MIN_SIGNATURE_WINDOW: usize = 512;
const MIN_SCALE: usize = 16;
/// Short windows go up to this scale even when it leaves only four segments.
const SHORT_MAX_SCALE: usize = 256;
const MAX_DROPPED_FRACTION: f64 = 0.5;

/// Regression result for one moment order.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QFit {
    pub q: f64,
    pub h: f64,
    /// Intercept `ln c(q)` of the log-log regression.
    pub log_c: f64,
    pub r_squared: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneralizedHurstFit {
    pub fits: Vec<QFit>,
    pub scale_range: (usize, usize),
    /// Fraction of zero-variance segments excluded from negative moments.
    pub dropped_fraction: f64,
}

impl GeneralizedHurstFit {
    pub fn q_grid(&self) -> Vec<f64> {
        self.fits.iter().map(|f| f.q).collect()
    }

    pub fn h(&self, q: f64) -> Option<f64> {
        self.fits.iter().find(|f| f.q == q).map(|f| f.h)
    }

    pub fn from_h_values(pairs: &[(f64, f64)]) -> Self {
        GeneralizedHurstFit {
            fits: pairs
                .iter()
                .map(|&(q, h)| QFit {
                    q,
                    h,
                    log_c: 0.0,
                    r_squared: 1.0,
                })
                .collect(),
            scale_range: (0, 0),
            dropped_fraction: 0.0,
        }
    }
}

/// Powers of two from 16 up to `max(len / 8, min(256, len / 4))`.
pub fn default_scales(len: usize) -> Vec<usize> {
    let top = (len / 8).max(SHORT_MAX_SCALE.min(len / 4));
    let mut scales = Vec::new();
    let mut s = MIN_SCALE;
    while s <= top {
        scales.push(s);
        s *= 2;
    }
    scales
}

fn validate_inputs(len: usize, q_grid: &[f64], scales: &[usize]) -> Result<Vec<usize>> {
    if q_grid.is_empty() {
        return Err(Error::invalid("q_grid", "empty"));
    }
    if q_grid.iter().any(|q| *q == 0.0 || !q.is_finite()) {
        return Err(Error::invalid(
            "q_grid",
            "q = 0 is not a valid moment order",
        ));
    }
    let mut uniq: Vec<usize> = scales.to_vec();
    uniq.sort_unstable();
    uniq.dedup();
    if uniq.len() < 4 {
        return Err(Error::invalid(
            "scales",
            format!("need at least 4 distinct scales, got {}", uniq.len()),
        ));
    }
    if uniq[0] < 3 {
        return Err(Error::invalid(
            "scales",
            "a linear detrend needs segments of at least 3 slots",
        ));
    }
    let max = *uniq.last().unwrap();
    if len < 4 * max {
        return Err(Error::TraceTooShort {
            len,
            required: 4 * max,
        });
    }
    Ok(uniq)
}

/// Detrended segment variances of the profile at scale `s`, forward and,
/// when `s` does not divide the length, also from the end.
fn segment_variances(profile: &[f64], s: usize) -> Vec<f64> {
    let n = profile.len();
    let count = n / s;
    let mut out = Vec::with_capacity(2 * count);
    let t_mean = (s as f64 - 1.0) / 2.0;
    let t_var = (s as f64 * s as f64 - 1.0) / 12.0;
    let mut push = |seg: &[f64]| {
        let y_mean = seg.iter().sum::<f64>() / s as f64;
        let mut syy = 0.0;
        let mut sty = 0.0;
        for (t, y) in seg.iter().enumerate() {
            let dy = y - y_mean;
            syy += dy * dy;
            sty += (t as f64 - t_mean) * dy;
        }
        let var_y = syy / s as f64;
        let cov = sty / s as f64;
        out.push((var_y - cov * cov / t_var).max(0.0));
    };
    for v in 0..count {
        push(&profile[v * s..(v + 1) * s]);
    }
    if !n.is_multiple_of(s) {
        for v in 0..count {
            push(&profile[n - (v + 1) * s..n - v * s]);
        }
    }
    out
}

fn linear_fit(xs: &[f64], ys: &[f64]) -> (f64, f64, f64) {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let syy: f64 = ys.iter().map(|y| (y - my).powi(2)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let r2 = if syy > 0.0 {
        (sxy * sxy / (sxx * syy)).clamp(0.0, 1.0)
    } else {
        1.0
    };
    (slope, intercept, r2)
}

/// Generalized Hurst exponents `h(q)` of `series` over the given moment orders
/// and scales.
pub fn estimate_generalized_hurst(
    series: &[f64],
    q_grid: &[f64],
    scales: &[usize],
) -> Result<GeneralizedHurstFit> {
    let scales = validate_inputs(series.len(), q_grid, scales)?;
    let n = series.len() as f64;
    let mean = series.iter().sum::<f64>() / n;
    let var = series.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    if !(var > 1e-28 * mean * mean) || var == 0.0 {
        return Err(Error::DegenerateInput("series has no variation".into()));
    }

    let mut profile = Vec::with_capacity(series.len());
    let mut acc = 0.0;
    for x in series {
        acc += x - mean;
        profile.push(acc);
    }

    let zero_floor = 1e-20 * var;
    let mut per_scale = Vec::with_capacity(scales.len());
    let (mut dropped, mut total) = (0usize, 0usize);
    for &s in &scales {
        let f2 = segment_variances(&profile, s);
        let logs: Vec<f64> = f2
            .iter()
            .filter(|v| **v > zero_floor)
            .map(|v| v.ln())
            .collect();
        dropped += f2.len() - logs.len();
        total += f2.len();
        if logs.is_empty() {
            return Err(Error::DegenerateInput(format!(
                "all segments at scale {s} have zero variance"
            )));
        }
        per_scale.push((s, logs, f2.len()));
    }
    let dropped_fraction = dropped as f64 / total as f64;
    if dropped_fraction > MAX_DROPPED_FRACTION {
        return Err(Error::DegenerateInput(format!(
            "{:.0}% of segments have zero variance",
            100.0 * dropped_fraction
        )));
    }

    let ln_s: Vec<f64> = scales.iter().map(|s| (*s as f64).ln()).collect();
    let mut fits = Vec::with_capacity(q_grid.len());
    for &q in q_grid {
        let ln_fq: Vec<f64> = per_scale
            .iter()
            .map(|(_, logs, all)| {
                // zero-variance segments contribute 0 to positive moments and are
                // excluded from negative ones
                let count = if q > 0.0 { *all } else { logs.len() };
                let half_q = 0.5 * q;
                let peak = logs.iter().map(|l| half_q * l).fold(f64::MIN, f64::max);
                let sum: f64 = logs.iter().map(|l| (half_q * l - peak).exp()).sum();
                (peak + (sum / count as f64).ln()) / q
            })
            .collect();
        let (h, log_c, r_squared) = linear_fit(&ln_s, &ln_fq);
        fits.push(QFit {
            q,
            h,
            log_c,
            r_squared,
        });
    }

    Ok(GeneralizedHurstFit {
        fits,
        scale_range: (scales[0], *scales.last().unwrap()),
        dropped_fraction,
    })
}

/// `Δh = h(-5) - h(5)`.
pub fn hurst_range(fit: &GeneralizedHurstFit) -> Result<f64> {
    let lo = fit.h(-5.0).ok_or(Error::MissingQ(-5.0))?;
    let hi = fit.h(5.0).ok_or(Error::MissingQ(5.0))?;
    Ok(lo - hi)
}

/// Population standard deviation over mean.
pub fn coefficient_of_variation(series: &[f64]) -> Result<f64> {
    if series.is_empty() {
        return Err(Error::TraceTooShort {
            len: 0,
            required: 1,
        });
    }
    let n = series.len() as f64;
    let mean = series.iter().sum::<f64>() / n;
    if !(mean > 0.0) {
        return Err(Error::DegenerateInput(format!(
            "coefficient of variation needs a positive mean, got {mean}"
        )));
    }
    let var = series.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    Ok(var.sqrt() / mean)
}

/// Characteristic vector of a trace window.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FractalSignature {
    pub intensity_lambda: f64,
    pub hurst_h: f64,
    pub hq_samples: Vec<(f64, f64)>,
    /// `h(q_min) - h(q_max)`, clamped at 0.
    pub delta_h: f64,
    pub delta_h_raw: f64,
    pub sigma_var: f64,
    pub window_len: usize,
}

impl FractalSignature {
    /// Flat `key=value` lines.
    pub fn to_key_values(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!("window_len={}\n", self.window_len));
        out.push_str(&format!("intensity_lambda={:?}\n", self.intensity_lambda));
        out.push_str(&format!("hurst_h={:?}\n", self.hurst_h));
        out.push_str(&format!("delta_h={:?}\n", self.delta_h));
        out.push_str(&format!("sigma_var={:?}\n", self.sigma_var));
        out
    }
}

pub fn signature(trace: &TrafficTrace) -> Result<FractalSignature> {
    signature_of(trace.values())
}

/// Signature over the default q-grid and scales. `series` must have a
/// positive mean.
pub fn signature_of(series: &[f64]) -> Result<FractalSignature> {
    if series.len() < MIN_SIGNATURE_WINDOW {
        return Err(Error::TraceTooShort {
            len: series.len(),
            required: MIN_SIGNATURE_WINDOW,
        });
    }
    let fit = estimate_generalized_hurst(series, &DEFAULT_Q_GRID, &default_scales(series.len()))?;
    let sigma_var = coefficient_of_variation(series)?;
    let hurst_h = fit.h(2.0).ok_or(Error::MissingQ(2.0))?;
    let delta_h_raw = hurst_range(&fit)?;
    Ok(FractalSignature {
        intensity_lambda: series.iter().sum::<f64>() / series.len() as f64,
        hurst_h,
        hq_samples: fit.fits.iter().map(|f| (f.q, f.h)).collect(),
        delta_h: delta_h_raw.max(0.0),
        delta_h_raw,
        sigma_var,
        window_len: series.len(),
    })
}
