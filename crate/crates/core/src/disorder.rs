//! Stationary Gaussian-correlated spatial disorder used as encryption keys.
//!
//! A key is a real Rabi-frequency profile `K(z)` on a cell-centred grid. Random
//! keys are synthesised spectrally: complex white noise is shaped by the square
//! root of the analytic power spectrum of the covariance
//! `C(r) = D^2 exp(-r^2 / sigma^2)` and transformed back with an FFT. The
//! periodic box is padded by at least six correlation lengths so that the
//! wrap-around correlation is below `exp(-36)`.

use std::f64::consts::PI;

use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, StandardNormal};
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::ZGrid;

/// Grid cells required per correlation length.
pub const CELLS_PER_SIGMA: f64 = 10.0;

/// Padding of the periodic synthesis box, in correlation lengths.
const SYNTHESIS_MARGIN: f64 = 6.0;

/// Relative slack allowed when comparing grid spacings and section bounds.
const SPACING_SLACK: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum CorrelationKind {
    #[default]
    Gaussian,
}

/// Second-order statistics of the disorder: `<K(z)K(z')> = D^2 exp(-(z-z')^2/sigma^2)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CorrelationSpec {
    /// `D`, in units of Gamma.
    pub strength: f64,
    /// `sigma`, in units of L.
    pub correlation_length: f64,
    #[serde(default)]
    pub kind: CorrelationKind,
}

impl CorrelationSpec {
    pub fn new(strength: f64, correlation_length: f64) -> Result<Self> {
        let spec = Self {
            strength,
            correlation_length,
            kind: CorrelationKind::Gaussian,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.strength.is_finite() && self.strength > 0.0) {
            return Err(Error::invalid(
                "strength",
                format!("D must be positive, got {}", self.strength),
            ));
        }
        if !(self.correlation_length.is_finite() && self.correlation_length > 0.0) {
            return Err(Error::invalid(
                "correlation_length",
                format!("sigma must be positive, got {}", self.correlation_length),
            ));
        }
        Ok(())
    }

    /// Target covariance at spatial separation `lag`.
    pub fn covariance(&self, lag: f64) -> f64 {
        let r = lag / self.correlation_length;
        self.strength * self.strength * (-r * r).exp()
    }

    /// Continuous power spectrum `S(k) = D^2 sigma sqrt(pi) exp(-k^2 sigma^2 / 4)`.
    pub fn spectral_density(&self, k: f64) -> f64 {
        let s = self.correlation_length;
        self.strength * self.strength * s * PI.sqrt() * (-0.25 * k * k * s * s).exp()
    }

    /// Largest grid spacing that resolves the correlation length.
    pub fn max_spacing(&self) -> f64 {
        self.correlation_length / CELLS_PER_SIGMA
    }
}

/// A spatial Rabi-frequency profile acting as an encryption or decryption key.
///
/// Samples sit at `section_offset + (j + 1/2) * spacing` in master-key
/// coordinates. Keys are secrets: anything written to disk should be protected
/// by the caller.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KeyProfile {
    pub samples: Vec<f64>,
    pub spacing: f64,
    /// Length `alpha` of the master key this profile was cut from.
    pub master_length: f64,
    /// Start of this profile inside the master key.
    pub section_offset: f64,
    /// Seed of the random draw, `None` for deterministic profiles.
    pub seed: Option<u64>,
    pub spec: Option<CorrelationSpec>,
}

impl KeyProfile {
    /// Profile with the same value everywhere, e.g. a uniform control field.
    pub fn uniform(grid: &ZGrid, value: f64) -> Self {
        Self {
            samples: vec![value; grid.cells],
            spacing: grid.spacing(),
            master_length: grid.length,
            section_offset: 0.0,
            seed: None,
            spec: None,
        }
    }

    pub fn zeros(grid: &ZGrid) -> Self {
        Self::uniform(grid, 0.0)
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Span covered by the samples.
    pub fn span(&self) -> f64 {
        self.samples.len() as f64 * self.spacing
    }

    pub fn grid(&self) -> ZGrid {
        ZGrid {
            length: self.span(),
            cells: self.samples.len(),
        }
    }

    /// Local (section) coordinate of sample `j`.
    pub fn position(&self, j: usize) -> f64 {
        (j as f64 + 0.5) * self.spacing
    }

    pub fn fits(&self, grid: &ZGrid) -> bool {
        self.samples.len() == grid.cells && (self.spacing - grid.spacing()).abs() <= SPACING_SLACK * grid.spacing()
    }

    /// Key with every sample negated.
    pub fn inverted(&self) -> Self {
        let mut out = self.clone();
        out.samples.iter_mut().for_each(|v| *v = -*v);
        out
    }

    pub fn max_abs(&self) -> f64 {
        self.samples.iter().fold(0.0_f64, |m, v| m.max(v.abs()))
    }

    pub fn rms(&self) -> f64 {
        if self.samples.is_empty() {
            return 0.0;
        }
        (self.samples.iter().map(|v| v * v).sum::<f64>() / self.samples.len() as f64).sqrt()
    }

    /// Characteristic Rabi-frequency scale: `D` for random keys, RMS otherwise.
    pub fn strength_scale(&self) -> f64 {
        match self.spec {
            Some(spec) => spec.strength,
            None => self.rms(),
        }
    }

    /// Value at local coordinate `z` by four-point Lagrange interpolation.
    ///
    /// Exact on the sample nodes and for polynomial profiles up to cubic order,
    /// including linear extrapolation up to half a cell beyond either end.
    pub fn value_at(&self, z: f64) -> f64 {
        interpolate_cell_centred(&self.samples, self.spacing, z)
    }
}

/// Four-point Lagrange interpolation on cell-centred samples.
pub(crate) fn interpolate_cell_centred(samples: &[f64], spacing: f64, z: f64) -> f64 {
    let n = samples.len();
    match n {
        0 => return 0.0,
        1 => return samples[0],
        _ => {}
    }
    let u = z / spacing - 0.5;
    let nearest = u.round();
    if (u - nearest).abs() <= 1e-9 && nearest >= 0.0 && (nearest as usize) < n {
        return samples[nearest as usize];
    }
    if n < 4 {
        let i = (u.floor().max(0.0) as usize).min(n - 2);
        let f = u - i as f64;
        return samples[i] * (1.0 - f) + samples[i + 1] * f;
    }
    let base = (u.floor() as isize - 1).clamp(0, n as isize - 4) as usize;
    let x = u - base as f64;
    let mut acc = 0.0;
    for a in 0..4 {
        let mut w = 1.0;
        for b in 0..4 {
            if a != b {
                w *= (x - b as f64) / (a as f64 - b as f64);
            }
        }
        acc += w * samples[base + a];
    }
    acc
}

fn is_smooth_fft_size(mut n: usize) -> bool {
    for p in [2, 3, 5, 7] {
        while n % p == 0 {
            n /= p;
        }
    }
    n == 1
}

pub(crate) fn fft_size_at_least(n: usize) -> usize {
    (n.max(1)..).find(|&m| is_smooth_fft_size(m)).expect("unbounded search")
}

/// Draws a zero-mean Gaussian key on `grid` with covariance given by `spec`.
///
/// The profile is a master key of length `grid.length`; sections are cut from
/// it with [`section_key`]. The same `(grid, spec, seed)` always yields the
/// same samples, bit for bit.
pub fn generate_key(grid: &ZGrid, spec: CorrelationSpec, seed: u64) -> Result<KeyProfile> {
    spec.validate()?;
    let h = grid.spacing();
    let sigma = spec.correlation_length;
    if sigma > grid.length * (1.0 + SPACING_SLACK) {
        return Err(Error::CorrelationTooLong {
            sigma,
            span: grid.length,
        });
    }
    if h > spec.max_spacing() * (1.0 + SPACING_SLACK) {
        return Err(Error::GridTooCoarse {
            spacing: h,
            sigma,
            required: spec.max_spacing(),
            min_cells: (grid.length / spec.max_spacing()).ceil() as usize,
        });
    }

    let margin = (SYNTHESIS_MARGIN * sigma / h).ceil() as usize;
    let n = fft_size_at_least(grid.cells + margin);
    let period = n as f64 * h;

    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let mut spectrum: Vec<Complex64> = (0..n)
        .map(|m| {
            let re: f64 = StandardNormal.sample(&mut rng);
            let im: f64 = StandardNormal.sample(&mut rng);
            let freq = if m <= n / 2 { m as f64 } else { m as f64 - n as f64 };
            let k = 2.0 * PI * freq / period;
            let amplitude = (spec.spectral_density(k) / h).sqrt();
            Complex64::new(re, im) * amplitude
        })
        .collect();

    FftPlanner::new().plan_fft_inverse(n).process(&mut spectrum);
    let norm = 1.0 / (n as f64).sqrt();
    let samples = spectrum[..grid.cells].iter().map(|c| c.re * norm).collect();

    Ok(KeyProfile {
        samples,
        spacing: h,
        master_length: grid.length,
        section_offset: 0.0,
        seed: Some(seed),
        spec: Some(spec),
    })
}

/// Linear profile `K(z) = slope (z - L/2)` with zero mean over the grid.
pub fn gradient_key(grid: &ZGrid, slope: f64) -> Result<KeyProfile> {
    if !slope.is_finite() {
        return Err(Error::invalid("slope", format!("must be finite, got {slope}")));
    }
    let centre = 0.5 * grid.length;
    Ok(KeyProfile {
        samples: grid.positions().into_iter().map(|z| slope * (z - centre)).collect(),
        spacing: grid.spacing(),
        master_length: grid.length,
        section_offset: 0.0,
        seed: None,
        spec: None,
    })
}

/// Cuts `[offset, offset + grid.length]` out of `master` and resamples it on
/// the medium grid.
pub fn section_key(master: &KeyProfile, offset: f64, grid: &ZGrid) -> Result<KeyProfile> {
    let span = master.span();
    let end = offset + grid.length;
    let slack = SPACING_SLACK * span.max(1.0);
    if !(offset.is_finite() && offset >= -slack && end <= span + slack) {
        return Err(Error::SectionOutOfRange {
            offset,
            end,
            master: span,
        });
    }
    let samples = (0..grid.cells)
        .map(|j| master.value_at(offset + grid.position(j)))
        .collect();
    Ok(KeyProfile {
        samples,
        spacing: grid.spacing(),
        master_length: master.master_length,
        section_offset: master.section_offset + offset,
        seed: master.seed,
        spec: master.spec,
    })
}

/// Pooled autocovariance estimate over an ensemble of keys.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationEstimate {
    /// Lags in samples.
    pub lags: Vec<usize>,
    /// Lags in units of L.
    pub separations: Vec<f64>,
    pub values: Vec<f64>,
    /// Standard error from the spread of per-key estimates.
    pub std_errors: Vec<f64>,
}

/// Sample autocovariance against lag, averaged over `keys`.
///
/// The ensemble mean (over all keys and positions) is subtracted and each
/// per-key sum is divided by the number of pairs at that lag. Standard errors
/// come from the scatter of the per-key estimates, so at least two keys are
/// required.
pub fn estimate_correlation(keys: &[KeyProfile], lags: &[usize]) -> Result<CorrelationEstimate> {
    if keys.len() < 2 {
        return Err(Error::invalid("keys", "need at least two keys"));
    }
    let first = &keys[0];
    for k in &keys[1..] {
        if k.len() != first.len() || (k.spacing - first.spacing).abs() > SPACING_SLACK * first.spacing {
            return Err(Error::GridMismatch {
                left: format!("{} x {:.6e}", first.len(), first.spacing),
                right: format!("{} x {:.6e}", k.len(), k.spacing),
            });
        }
    }
    let n = first.len();
    if let Some(&bad) = lags.iter().find(|&&l| l >= n) {
        return Err(Error::invalid("lags", format!("lag {bad} exceeds key length {n}")));
    }

    let total: f64 = keys.iter().flat_map(|k| k.samples.iter()).sum();
    let mean = total / (keys.len() * n) as f64;
    let count = keys.len() as f64;

    let mut values = Vec::with_capacity(lags.len());
    let mut std_errors = Vec::with_capacity(lags.len());
    for &lag in lags {
        let per_key: Vec<f64> = keys
            .iter()
            .map(|k| {
                let s = &k.samples;
                let sum: f64 = (0..n - lag).map(|j| (s[j] - mean) * (s[j + lag] - mean)).sum();
                sum / (n - lag) as f64
            })
            .collect();
        let avg = per_key.iter().sum::<f64>() / count;
        let var = per_key.iter().map(|v| (v - avg) * (v - avg)).sum::<f64>() / (count - 1.0);
        values.push(avg);
        std_errors.push((var / count).sqrt());
    }
    Ok(CorrelationEstimate {
        separations: lags.iter().map(|&l| l as f64 * first.spacing).collect(),
        lags: lags.to_vec(),
        values,
        std_errors,
    })
}
