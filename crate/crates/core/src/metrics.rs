//! Figures of merit for retrieved pulses.
//!
//! All integrals use the trapezoid rule on the simulation grid; partial end
//! intervals integrate the piecewise-linear interpolant of `|Omega|^2`, so
//! energies over adjacent windows add up exactly.

use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::disorder::KeyProfile;
use crate::error::{Error, Result};
use crate::grid::TimeGrid;
use crate::propagation::SimResult;
use crate::protocol::ProbeSpec;

/// Fraction of the window at its end whose energy certifies truncation.
pub const TAIL_WINDOW: f64 = 0.05;
/// Largest admissible tail energy, relative to the counted output energy.
pub const TAIL_TOLERANCE: f64 = 1e-3;

/// Overlap fidelity and the delay that maximises it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FidelityReport {
    pub fidelity: f64,
    /// `t_d`, in tau.
    pub delay: f64,
    /// Set when the output carries no energy after `t_i`; `fidelity` is then 0.
    pub zero_output: bool,
}

fn check_lengths(input: &[Complex64], output: &[Complex64], grid: &TimeGrid) -> Result<()> {
    if input.len() != grid.len() || output.len() != grid.len() {
        return Err(Error::GridMismatch {
            left: format!("envelopes of {} and {} samples", input.len(), output.len()),
            right: format!("time grid of {} nodes", grid.len()),
        });
    }
    Ok(())
}

/// Trapezoid weights restricted to `[a, b]`, for integrands that are linear
/// between nodes. Returned as `(first node, weights)`.
fn window_weights(grid: &TimeGrid, a: f64, b: f64) -> (usize, Vec<f64>) {
    let a = a.max(0.0);
    let b = b.min(grid.t_end());
    if b <= a {
        return (0, Vec::new());
    }
    let dt = grid.dt;
    let lo = ((a / dt).floor() as usize).min(grid.steps.saturating_sub(1));
    let hi = ((b / dt).ceil() as usize).clamp(lo + 1, grid.steps);
    let mut w = vec![0.0; hi - lo + 1];
    for n in lo..hi {
        let (t0, t1) = (grid.time(n), grid.time(n + 1));
        let (x0, x1) = (a.max(t0), b.min(t1));
        if x1 <= x0 {
            continue;
        }
        // Exact integral of the linear hat functions over [x0, x1].
        let u0 = (x0 - t0) / dt;
        let u1 = (x1 - t0) / dt;
        let right = 0.5 * (u1 * u1 - u0 * u0) * dt;
        let left = (x1 - x0) - right;
        w[n - lo] += left;
        w[n - lo + 1] += right;
    }
    (lo, w)
}

/// `integral_a^b |f(t)|^2 dt` on the grid.
pub fn window_energy(values: &[Complex64], grid: &TimeGrid, a: f64, b: f64) -> f64 {
    let (lo, w) = window_weights(grid, a, b);
    w.iter().zip(&values[lo..]).map(|(w, v)| w * v.norm_sqr()).sum()
}

fn total_energy(values: &[Complex64], grid: &TimeGrid) -> f64 {
    window_energy(values, grid, 0.0, grid.t_end())
}

/// `integral_{t_i}^T |Omega_out|^2 dt / integral |Omega_in|^2 dt`.
pub fn storage_efficiency(input: &[Complex64], output: &[Complex64], grid: &TimeGrid, t_i: f64) -> Result<f64> {
    check_lengths(input, output, grid)?;
    let e_in = total_energy(input, grid);
    if e_in <= 0.0 {
        return Err(Error::ZeroInputEnergy);
    }
    Ok(window_energy(output, grid, t_i, grid.t_end()) / e_in)
}

/// Four-point Lagrange value of `v` at fractional index `x`; zero outside the
/// record.
fn sample_at(v: &[Complex64], x: f64) -> Complex64 {
    let n = v.len() as isize;
    let base = x.floor() as isize - 1;
    let f = x - (base as f64);
    let mut acc = Complex64::new(0.0, 0.0);
    for a in 0..4isize {
        let idx = base + a;
        if idx < 0 || idx >= n {
            continue;
        }
        let mut w = 1.0;
        for b in 0..4isize {
            if a != b {
                w *= (f - b as f64) / (a - b) as f64;
            }
        }
        acc += v[idx as usize] * w;
    }
    acc
}

struct Overlap<'a> {
    input: &'a [Complex64],
    output: &'a [Complex64],
    lo: usize,
    weights: Vec<f64>,
    norm: f64,
}

impl Overlap<'_> {
    /// `F` at a delay of `lag` grid steps (fractional allowed).
    fn at(&self, lag: f64) -> f64 {
        let mut acc = Complex64::new(0.0, 0.0);
        for (k, w) in self.weights.iter().enumerate() {
            let n = self.lo + k;
            acc += sample_at(self.input, n as f64 - lag).conj() * self.output[n] * *w;
        }
        (acc.norm_sqr() / self.norm).clamp(0.0, 1.0)
    }
}

fn fft_pair(len: usize) -> (Arc<dyn Fft<f64>>, Arc<dyn Fft<f64>>) {
    let mut planner = FftPlanner::new();
    (planner.plan_fft_forward(len), planner.plan_fft_inverse(len))
}

/// Overlap fidelity between the input at z = 0 and the output at z = L,
/// counting only output after `t_i`, at the delay `t_d` that maximises it.
///
/// The delay is first located on the grid from the FFT cross-correlation,
/// then refined continuously by golden-section search with cubic
/// interpolation of the input.
pub fn fidelity(input: &[Complex64], output: &[Complex64], grid: &TimeGrid, t_i: f64) -> Result<FidelityReport> {
    check_lengths(input, output, grid)?;
    let e_in = total_energy(input, grid);
    if e_in <= 0.0 {
        return Err(Error::ZeroInputEnergy);
    }
    let (lo, weights) = window_weights(grid, t_i, grid.t_end());
    let e_out: f64 = weights.iter().zip(&output[lo..]).map(|(w, v)| w * v.norm_sqr()).sum();
    if e_out <= 0.0 {
        return Ok(FidelityReport {
            fidelity: 0.0,
            delay: 0.0,
            zero_output: true,
        });
    }

    // c[d] = sum_n conj(in[n - d]) w_n out[n] for every integer lag d.
    let n = input.len();
    let m = crate::disorder::fft_size_at_least(2 * n);
    let (fwd, inv) = fft_pair(m);
    let mut a = vec![Complex64::new(0.0, 0.0); m];
    let mut b = a.clone();
    a[..n].copy_from_slice(input);
    for (k, w) in weights.iter().enumerate() {
        b[lo + k] = output[lo + k] * *w;
    }
    fwd.process(&mut a);
    fwd.process(&mut b);
    for (x, y) in a.iter_mut().zip(&b) {
        *x = x.conj() * y;
    }
    inv.process(&mut a);
    let best = (0..m)
        .max_by(|&i, &j| a[i].norm_sqr().total_cmp(&a[j].norm_sqr()))
        .expect("non-empty");
    let lag = if best < m / 2 {
        best as f64
    } else {
        best as f64 - m as f64
    };

    let ov = Overlap {
        input,
        output,
        lo,
        weights,
        norm: e_in * e_out,
    };
    let (x, f) = golden_max(|x| ov.at(x), lag - 1.0, lag + 1.0, 1e-6);
    let (x, f) = if f >= ov.at(lag) { (x, f) } else { (lag, ov.at(lag)) };
    Ok(FidelityReport {
        fidelity: f,
        delay: x * grid.dt,
        zero_output: false,
    })
}

fn golden_max(f: impl Fn(f64) -> f64, mut a: f64, mut b: f64, tol: f64) -> (f64, f64) {
    let r = 0.5 * (5f64.sqrt() - 1.0);
    let mut c = b - r * (b - a);
    let mut d = a + r * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    while b - a > tol {
        if fc >= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - r * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + r * (b - a);
            fd = f(d);
        }
    }
    if fc >= fd {
        (c, fc)
    } else {
        (d, fd)
    }
}

/// Energy left at the end of the window, which certifies that cutting the
/// output integrals at `T` loses nothing significant.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TruncationCheck {
    /// Energy in the last [`TAIL_WINDOW`] of the window over the energy after `from`.
    pub tail_fraction: f64,
    pub certified: bool,
}

pub fn truncation_check(output: &[Complex64], grid: &TimeGrid, from: f64) -> TruncationCheck {
    let t_end = grid.t_end();
    let counted = window_energy(output, grid, from, t_end);
    let tail = window_energy(output, grid, t_end * (1.0 - TAIL_WINDOW), t_end);
    let tail_fraction = if counted > 0.0 { tail / counted } else { 0.0 };
    TruncationCheck {
        tail_fraction,
        certified: tail_fraction < TAIL_TOLERANCE,
    }
}

/// `chi = alpha^2 / (sigma L)`.
pub fn confidentiality(alpha: f64, sigma: f64, length: f64) -> Result<f64> {
    for (name, v) in [("alpha", alpha), ("sigma", sigma), ("length", length)] {
        if !(v.is_finite() && v > 0.0) {
            return Err(Error::invalid(name, format!("must be positive, got {v}")));
        }
    }
    Ok(alpha * alpha / (sigma * length))
}

/// Distribution of control Rabi frequencies across the medium.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum KeyDistribution {
    /// Zero-mean normal with standard deviation `strength`.
    Gaussian { strength: f64 },
    /// Equal-width bins: centres, (unnormalised) weights and the bin width.
    /// The density is taken as uniform inside each bin.
    Histogram {
        centres: Vec<f64>,
        weights: Vec<f64>,
        width: f64,
    },
}

impl KeyDistribution {
    /// Pooled histogram of all key samples with `bins` equal bins.
    pub fn from_keys(keys: &[&KeyProfile], bins: usize) -> Result<Self> {
        if bins == 0 {
            return Err(Error::invalid("bins", "need at least one bin"));
        }
        let values: Vec<f64> = keys.iter().flat_map(|k| k.samples.iter().copied()).collect();
        if values.is_empty() {
            return Err(Error::invalid("keys", "no samples"));
        }
        let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let width = (hi - lo) / bins as f64;
        if width == 0.0 {
            return Ok(Self::Histogram {
                centres: vec![lo],
                weights: vec![values.len() as f64],
                width: 0.0,
            });
        }
        let mut weights = vec![0.0; bins];
        for v in values {
            let b = (((v - lo) / width) as usize).min(bins - 1);
            weights[b] += 1.0;
        }
        let centres = (0..bins).map(|b| lo + (b as f64 + 0.5) * width).collect();
        Ok(Self::Histogram {
            centres,
            weights,
            width,
        })
    }

    /// `integral P(W) cos(W x / 2) dW` with `P` normalised.
    pub fn cosine_transform(&self, x: f64) -> f64 {
        match self {
            Self::Gaussian { strength } => (-strength * strength * x * x / 8.0).exp(),
            Self::Histogram {
                centres,
                weights,
                width,
            } => {
                // A uniform bin of width w transforms to cos(c x / 2) sinc(w x / 4).
                let u = width * x / 4.0;
                let box_factor = if u == 0.0 { 1.0 } else { u.sin() / u };
                let total: f64 = weights.iter().sum();
                box_factor
                    * centres
                        .iter()
                        .zip(weights)
                        .map(|(c, w)| w * (c * x / 2.0).cos())
                        .sum::<f64>()
                    / total
            }
        }
    }
}

/// Echo envelope predicted from the distribution of control strengths.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EchoPrediction {
    pub times: Vec<f64>,
    /// Normalised to 1 at the centre.
    pub envelope: Vec<f64>,
    /// False when the envelope keeps ringing far from the centre; the
    /// distribution is then too narrow to dephase the stored coherence.
    pub decays: bool,
}

/// Level above which the far wings of an echo prediction count as ringing.
const RINGING_LEVEL: f64 = 0.1;

/// Cosine-transform prediction of the echo shape, centred on `t_i`.
pub fn echo_oracle(distribution: &KeyDistribution, t_i: f64, times: &[f64]) -> EchoPrediction {
    let envelope: Vec<f64> = times.iter().map(|&t| distribution.cosine_transform(t - t_i)).collect();
    let reach = times.iter().map(|t| (t - t_i).abs()).fold(0.0, f64::max);
    let wings = times
        .iter()
        .zip(&envelope)
        .filter(|(t, _)| (*t - t_i).abs() >= 0.5 * reach)
        .map(|(_, e)| e.abs())
        .fold(0.0, f64::max);
    EchoPrediction {
        times: times.to_vec(),
        envelope,
        decays: reach > 0.0 && wings < RINGING_LEVEL,
    }
}

/// Whether the inhomogeneous absorption profile covers the probe bandwidth.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MatchingReport {
    /// `D kappa`.
    pub ratio: f64,
    /// `D >= 1 / kappa`.
    pub covered: bool,
}

pub fn matching_condition(probe: &ProbeSpec, strength: f64) -> MatchingReport {
    let ratio = strength * probe.duration;
    MatchingReport {
        ratio,
        covered: ratio >= 1.0 - 1e-12,
    }
}

/// Pearson correlation of two equally sampled curves.
pub fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len().min(b.len()) as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma) * (x - ma);
        sbb += (y - mb) * (y - mb);
    }
    if saa == 0.0 || sbb == 0.0 {
        return 0.0;
    }
    sab / (saa * sbb).sqrt()
}

/// `||a - b|| / ||b||` over the samples of two envelopes.
pub fn relative_l2(a: &[Complex64], b: &[Complex64]) -> f64 {
    let diff: f64 = a.iter().zip(b).map(|(x, y)| (x - y).norm_sqr()).sum();
    let base: f64 = b.iter().map(|y| y.norm_sqr()).sum();
    (diff / base).sqrt()
}

/// Mean and standard error of the mean.
pub fn mean_and_se(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// Everything reported for one retrieval.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricsBundle {
    pub fidelity: f64,
    pub best_delay: f64,
    pub storage_efficiency: f64,
    /// `SE / SE_ref` when a reference efficiency is supplied.
    pub normalized_se: Option<f64>,
    pub chi: Option<f64>,
    pub zero_output: bool,
    pub truncation: TruncationCheck,
}

impl MetricsBundle {
    /// Metrics of `result` counting output from `t_i` on.
    pub fn compute(result: &SimResult, t_i: f64, reference_se: Option<f64>, chi: Option<f64>) -> Result<Self> {
        let f = fidelity(&result.input, &result.output, &result.time, t_i)?;
        let se = storage_efficiency(&result.input, &result.output, &result.time, t_i)?;
        Ok(Self {
            fidelity: f.fidelity,
            best_delay: f.delay,
            storage_efficiency: se,
            normalized_se: reference_se.map(|r| if r > 0.0 { se / r } else { f64::NAN }),
            chi,
            zero_output: f.zero_output,
            truncation: truncation_check(&result.output, &result.time, t_i),
        })
    }
}
