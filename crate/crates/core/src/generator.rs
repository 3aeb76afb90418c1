//! Synthetic traffic with prescribed intensity, Hurst exponent and burstiness.
//!
//! Three constructions are provided:
//!
//! * [`generate_fgn`]: exact fractional Gaussian noise via circulant embedding
//!   (Davies–Harte). The spectrum of the embedded autocovariance is computed
//!   with one FFT; a second FFT of complex white noise shaped by the square
//!   root of that spectrum yields a sample with the exact fGn covariance.
//! * [`generate_cascade`]: a conservative binomial cascade. Mass is split at
//!   every level into fractions `w` and `1 - w`, the heavier side picked at
//!   random, so the scaling exponents are known in closed form.
//! * [`compose_traffic`]: a positive traffic flow built from the two, rescaled
//!   to a target mean.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rustfft::{num_complex::Complex64, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::trace::TrafficTrace;

pub const MAX_CASCADE_DEPTH: u32 = 24;

fn default_envelope_cv() -> f64 {
    0.3
}

/// Parameters for [`compose_traffic`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratorSpec {
    pub target_h: f64,
    pub target_intensity: f64,
    /// 0 disables the cascade.
    #[serde(default)]
    pub cascade_depth: u32,
    #[serde(default = "default_weight")]
    pub cascade_weight: f64,
    pub length: usize,
    pub seed: u64,
    /// Coefficient of variation of the lognormal fGn envelope.
    #[serde(default = "default_envelope_cv")]
    pub envelope_cv: f64,
}

fn default_weight() -> f64 {
    0.7
}

impl GeneratorSpec {
    pub fn new(target_h: f64, target_intensity: f64, length: usize, seed: u64) -> Self {
        GeneratorSpec {
            target_h,
            target_intensity,
            cascade_depth: 0,
            cascade_weight: default_weight(),
            length,
            seed,
            envelope_cv: default_envelope_cv(),
        }
    }

    pub fn with_cascade(mut self, depth: u32, weight: f64) -> Self {
        self.cascade_depth = depth;
        self.cascade_weight = weight;
        self
    }

    pub fn with_envelope_cv(mut self, cv: f64) -> Self {
        self.envelope_cv = cv;
        self
    }

    pub fn validate(&self) -> Result<()> {
        check_hurst(self.target_h)?;
        if !(self.target_intensity > 0.0 && self.target_intensity.is_finite()) {
            return Err(Error::invalid(
                "target_intensity",
                format!("must be > 0, got {}", self.target_intensity),
            ));
        }
        if self.length < 2 {
            return Err(Error::invalid("length", "need at least 2 slots"));
        }
        if !(self.envelope_cv >= 0.0 && self.envelope_cv.is_finite()) {
            return Err(Error::invalid(
                "envelope_cv",
                format!("must be >= 0, got {}", self.envelope_cv),
            ));
        }
        if self.cascade_depth > 0 {
            check_weight(self.cascade_weight)?;
            if !self.length.is_power_of_two() {
                return Err(Error::invalid(
                    "length",
                    format!("{} is not a power of two", self.length),
                ));
            }
            if self.cascade_depth > MAX_CASCADE_DEPTH
                || (1usize << self.cascade_depth) > self.length
            {
                return Err(Error::invalid(
                    "cascade_depth",
                    format!(
                        "depth {} does not fit a trace of {} slots",
                        self.cascade_depth, self.length
                    ),
                ));
            }
        }
        Ok(())
    }
}

fn check_hurst(h: f64) -> Result<()> {
    if !(h > 0.0 && h < 1.0) {
        return Err(Error::invalid("H", format!("must lie in (0, 1), got {h}")));
    }
    Ok(())
}

fn check_weight(w: f64) -> Result<()> {
    if !(w > 0.5 && w < 1.0) {
        return Err(Error::invalid(
            "weight",
            format!("must lie in (0.5, 1), got {w}"),
        ));
    }
    Ok(())
}

/// Autocovariance of unit-variance fGn at integer lag `k`.
pub fn fgn_autocovariance(h: f64, k: usize) -> f64 {
    let k = k as f64;
    let two_h = 2.0 * h;
    0.5 * ((k + 1.0).powf(two_h) - 2.0 * k.powf(two_h) + (k - 1.0).abs().powf(two_h))
}

/// `n` increments of fractional Gaussian noise with Hurst exponent `h` and
/// standard deviation `sigma`. Values are raw Gaussian increments and may be
/// negative.
pub fn generate_fgn(h: f64, n: usize, sigma: f64, seed: u64) -> Result<Vec<f64>> {
    check_hurst(h)?;
    if n < 2 {
        return Err(Error::invalid("n", "need at least 2 slots"));
    }
    if !(sigma > 0.0 && sigma.is_finite()) {
        return Err(Error::invalid("sigma", format!("must be > 0, got {sigma}")));
    }

    // First row of the 2n x 2n circulant embedding.
    let m = 2 * n;
    let mut row: Vec<Complex64> = Vec::with_capacity(m);
    for k in 0..=n {
        row.push(Complex64::new(fgn_autocovariance(h, k), 0.0));
    }
    for k in (1..n).rev() {
        row.push(Complex64::new(fgn_autocovariance(h, k), 0.0));
    }

    let mut planner = FftPlanner::<f64>::new();
    let fft = planner.plan_fft_forward(m);
    fft.process(&mut row);

    let max_eig = row.iter().map(|c| c.re).fold(f64::MIN, f64::max);
    let min_eig = row.iter().map(|c| c.re).fold(f64::MAX, f64::min);
    if min_eig < -1e-9 * max_eig.max(1.0) {
        return Err(Error::EmbeddingNotPositive {
            min_eigenvalue: min_eig,
        });
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut spectrum: Vec<Complex64> = row
        .iter()
        .map(|eig| {
            let amp = (eig.re.max(0.0) / m as f64).sqrt();
            let re: f64 = rng.sample(StandardNormal);
            let im: f64 = rng.sample(StandardNormal);
            Complex64::new(amp * re, amp * im)
        })
        .collect();
    fft.process(&mut spectrum);

    Ok(spectrum[..n].iter().map(|c| sigma * c.re).collect())
}

/// Conservative binomial cascade of `2^depth` cells with total mass 1.
pub fn generate_cascade(depth: u32, weight: f64, seed: u64) -> Result<TrafficTrace> {
    if !(1..=MAX_CASCADE_DEPTH).contains(&depth) {
        return Err(Error::invalid(
            "depth",
            format!("must lie in 1..={MAX_CASCADE_DEPTH}, got {depth}"),
        ));
    }
    check_weight(weight)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    TrafficTrace::new(cascade_cells(depth, weight, &mut rng))
}

fn cascade_cells(depth: u32, weight: f64, rng: &mut impl Rng) -> Vec<f64> {
    let mut mass = vec![1.0f64];
    for _ in 0..depth {
        let mut next = Vec::with_capacity(mass.len() * 2);
        for &m in &mass {
            let heavy = m * weight;
            let light = m - heavy;
            if rng.random::<bool>() {
                next.extend_from_slice(&[heavy, light]);
            } else {
                next.extend_from_slice(&[light, heavy]);
            }
        }
        mass = next;
    }
    mass
}

/// Derives an independent sub-seed so the fGn and cascade draws of one spec
/// never share a stream.
fn sub_seed(seed: u64, salt: u64) -> u64 {
    let mut z = seed ^ salt.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Positive traffic: lognormal fGn envelope, times cascade mass when the
/// cascade is enabled, clipped at zero and rescaled to `target_intensity`.
pub fn compose_traffic(spec: &GeneratorSpec) -> Result<TrafficTrace> {
    spec.validate()?;
    let n = spec.length;

    let mut values = if spec.envelope_cv > 0.0 {
        let g = generate_fgn(spec.target_h, n, 1.0, sub_seed(spec.seed, 1))?;
        let s2 = (1.0 + spec.envelope_cv * spec.envelope_cv).ln();
        let s = s2.sqrt();
        g.into_iter()
            .map(|x| (s * x - 0.5 * s2).exp())
            .collect::<Vec<_>>()
    } else {
        vec![1.0; n]
    };

    if spec.cascade_depth > 0 {
        let block = 1usize << spec.cascade_depth;
        let mut rng = ChaCha8Rng::seed_from_u64(sub_seed(spec.seed, 2));
        for chunk in values.chunks_mut(block) {
            let cells = cascade_cells(spec.cascade_depth, spec.cascade_weight, &mut rng);
            for (v, c) in chunk.iter_mut().zip(cells) {
                *v *= c * block as f64;
            }
        }
    }

    for v in values.iter_mut() {
        if *v < 0.0 {
            *v = 0.0;
        }
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    if !(mean > 0.0) {
        return Err(Error::DegenerateInput(
            "composed traffic has zero mass".into(),
        ));
    }
    let scale = spec.target_intensity / mean;
    values.iter_mut().for_each(|v| *v *= scale);
    TrafficTrace::new(values)
}
