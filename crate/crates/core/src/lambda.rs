//! Three-level Lambda system: disordered echo memory.
//!
//! Levels |1>, |2> are ground states, |3> decays at Gamma. The probe drives
//! |1> <-> |3>, the disordered control `Omega_c(t, z)` drives |2> <-> |3>. With
//! `H = -(1/2)(Omega_p |3><1| + Omega_c |3><2| + h.c.)` the weak-probe steady
//! state of a bare two-level medium is `rho_31 = i Omega_p / Gamma`, so
//! `dOmega_p/dz = i eta rho_31` absorbs with intensity `exp(-xi)`.

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::SpaceTimeGrid;
use crate::propagation::{
    i_half, integrate, snapshot_steps, CoherenceSnapshot, March, Scheme, Side, SimResult, SliceDynamics, SliceState,
    SnapshotStates,
};
use crate::protocol::{FieldSchedule, Gate, ProbeSpec};

/// Excited-state decay rate; time is measured in `tau = 1 / Gamma`.
pub const GAMMA: f64 = 1.0;

/// Resolution demanded of the time grid: this many steps per shortest scale.
pub const STEPS_PER_SCALE: f64 = 10.0;

/// Spontaneous emission and dephasing.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DecayModel {
    /// Fraction of |3> decay that lands in |1>; the rest goes to |2>.
    pub branching_to_ground: f64,
    /// Pure dephasing rate of the ground coherence `rho_21`.
    pub ground_dephasing: f64,
}

impl Default for DecayModel {
    fn default() -> Self {
        Self {
            branching_to_ground: 0.5,
            ground_dephasing: 0.0,
        }
    }
}

impl DecayModel {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.branching_to_ground) {
            return Err(Error::invalid("branching_to_ground", "must lie in [0, 1]"));
        }
        if !(self.ground_dephasing.is_finite() && self.ground_dephasing >= 0.0) {
            return Err(Error::invalid("ground_dephasing", "must be non-negative"));
        }
        Ok(())
    }
}

/// Density matrix of one Lambda atom. Only the independent entries are stored;
/// the upper triangle is the conjugate of the lower one.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LambdaState {
    pub rho11: f64,
    pub rho22: f64,
    pub rho33: f64,
    pub rho21: Complex64,
    pub rho31: Complex64,
    pub rho32: Complex64,
}

impl LambdaState {
    /// Full 3x3 matrix, indices 0..3 standing for |1>..|3>.
    pub fn density_matrix(&self) -> [[Complex64; 3]; 3] {
        let r = |x: f64| Complex64::new(x, 0.0);
        [
            [r(self.rho11), self.rho21.conj(), self.rho31.conj()],
            [self.rho21, r(self.rho22), self.rho32.conj()],
            [self.rho31, self.rho32, r(self.rho33)],
        ]
    }
}

impl SliceState for LambdaState {
    fn ground() -> Self {
        Self {
            rho11: 1.0,
            ..Self::default()
        }
    }

    #[inline(always)]
    fn probe_coherence(&self) -> Complex64 {
        self.rho31
    }

    #[inline(always)]
    fn add_scaled(&self, a: f64, d: &Self) -> Self {
        Self {
            rho11: self.rho11 + a * d.rho11,
            rho22: self.rho22 + a * d.rho22,
            rho33: self.rho33 + a * d.rho33,
            rho21: self.rho21 + d.rho21 * a,
            rho31: self.rho31 + d.rho31 * a,
            rho32: self.rho32 + d.rho32 * a,
        }
    }

    fn trace(&self) -> f64 {
        self.rho11 + self.rho22 + self.rho33
    }

    fn population_range(&self) -> (f64, f64) {
        let lo = self.rho11.min(self.rho22).min(self.rho33);
        let hi = self.rho11.max(self.rho22).max(self.rho33);
        (lo, hi)
    }
}

struct LambdaModel<'a> {
    gates: Vec<Gate>,
    keys: Vec<&'a [f64]>,
    decay: DecayModel,
}

impl SliceDynamics for LambdaModel<'_> {
    type State = LambdaState;
    type Drive = Vec<f64>;

    fn drive(&self, t: f64, side: Side) -> Vec<f64> {
        self.gates
            .iter()
            .map(|g| match side {
                Side::Right => g.value(t),
                Side::Left => g.value_left(t),
            })
            .collect()
    }

    #[inline]
    fn derivative(&self, drive: &Vec<f64>, cell: usize, s: &LambdaState, op: Complex64) -> LambdaState {
        let oc: f64 = drive.iter().zip(&self.keys).map(|(g, k)| g * k[cell]).sum();
        let b = self.decay.branching_to_ground;
        let probe_work = (op.conj() * s.rho31).im;
        let control_work = oc * s.rho32.im;
        let emitted = GAMMA * s.rho33;
        LambdaState {
            rho11: -probe_work + b * emitted,
            rho22: -control_work + (1.0 - b) * emitted,
            rho33: probe_work + control_work - emitted,
            rho21: i_half(s.rho31 * oc - op * s.rho32.conj()) - s.rho21 * self.decay.ground_dephasing,
            rho31: i_half(op * (s.rho11 - s.rho33) + s.rho21 * oc) - s.rho31 * (0.5 * GAMMA),
            rho32: i_half(op * s.rho21.conj() + Complex64::new(oc * (s.rho22 - s.rho33), 0.0))
                - s.rho32 * (0.5 * GAMMA),
        }
    }
}

/// Everything needed to run the Lambda-system memory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LambdaConfig {
    /// `xi`; the propagation coupling is `eta = Gamma xi / (2 L)`.
    pub optical_depth: f64,
    pub probe: ProbeSpec,
    /// Control field, summed over schedules.
    pub control: Vec<FieldSchedule>,
    pub grid: SpaceTimeGrid,
    #[serde(default)]
    pub decay: DecayModel,
    #[serde(default)]
    pub snapshot_times: Vec<f64>,
}

impl LambdaConfig {
    pub fn coupling(&self) -> f64 {
        GAMMA * self.optical_depth / (2.0 * self.grid.z.length)
    }

    /// Peak control scale `max D` over all schedules.
    pub fn control_scale(&self) -> f64 {
        self.control.iter().map(|s| s.strength_scale()).fold(0.0, f64::max)
    }

    /// Largest admissible time step: ten steps per `1/D`, `kappa` and `1/Gamma`.
    pub fn max_time_step(&self) -> f64 {
        max_time_step(&[self.control_scale(), GAMMA], self.probe.duration)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.optical_depth.is_finite() && self.optical_depth >= 0.0) {
            return Err(Error::invalid(
                "optical_depth",
                format!("xi must be >= 0, got {}", self.optical_depth),
            ));
        }
        self.probe.validate()?;
        self.decay.validate()?;
        check_keys(&self.control, &self.grid)?;
        check_step(self.grid.t.dt, self.max_time_step(), self.grid.t.t_end())?;
        check_breakpoints(&self.control, &self.grid)?;
        snapshot_steps(&self.grid.t, &self.snapshot_times)?;
        Ok(())
    }
}

pub(crate) fn max_time_step(rates: &[f64], duration: f64) -> f64 {
    let fastest = rates.iter().copied().fold(1.0 / duration, f64::max);
    1.0 / (STEPS_PER_SCALE * fastest)
}

pub(crate) fn check_step(dt: f64, max: f64, t_end: f64) -> Result<()> {
    if dt > max * (1.0 + 1e-9) {
        return Err(Error::StepTooLarge {
            dt,
            max,
            suggested_steps: (t_end / max).ceil() as usize,
        });
    }
    Ok(())
}

pub(crate) fn check_keys(schedules: &[FieldSchedule], grid: &SpaceTimeGrid) -> Result<()> {
    for s in schedules {
        if !s.key.fits(&grid.z) {
            return Err(Error::GridMismatch {
                left: format!("key with {} cells of {:.3e}", s.key.len(), s.key.spacing),
                right: format!("medium with {} cells of {:.3e}", grid.z.cells, grid.z.spacing()),
            });
        }
        if let Some(spec) = s.key.spec {
            if grid.z.spacing() > spec.max_spacing() * (1.0 + 1e-9) {
                return Err(Error::GridTooCoarse {
                    spacing: grid.z.spacing(),
                    sigma: spec.correlation_length,
                    required: spec.max_spacing(),
                    min_cells: (grid.z.length / spec.max_spacing()).ceil() as usize,
                });
            }
        }
        if s.key.samples.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("key", "contains non-finite samples"));
        }
    }
    Ok(())
}

pub(crate) fn check_breakpoints(schedules: &[FieldSchedule], grid: &SpaceTimeGrid) -> Result<()> {
    for s in schedules {
        for t in s.gate.hard_breakpoints() {
            if grid.t.contains(t) && grid.t.node_index(t).is_none() {
                return Err(Error::Misaligned { t, dt: grid.t.dt });
            }
        }
    }
    Ok(())
}

/// Integrates the Lambda-system Maxwell-Bloch equations.
///
/// Every atom starts in |1>. The returned envelopes are sampled on the time
/// grid at z = 0 and z = L; snapshots are taken at the nodes nearest to the
/// requested times.
fn model(config: &LambdaConfig) -> LambdaModel<'_> {
    LambdaModel {
        gates: config.control.iter().map(|s| s.gate).collect(),
        keys: config.control.iter().map(|s| s.key.samples.as_slice()).collect(),
        decay: config.decay,
    }
}

fn finish(config: &LambdaConfig, march: March<LambdaState>) -> SimResult {
    let mut seeds: Vec<u64> = config.control.iter().filter_map(|s| s.key.seed).collect();
    seeds.dedup();
    SimResult {
        scheme: Scheme::Lambda,
        time: config.grid.t,
        input: march.input,
        output: march.output,
        snapshots: march
            .snapshots
            .into_iter()
            .map(|(step, states)| CoherenceSnapshot {
                t: config.grid.t.time(step),
                step,
                states: SnapshotStates::Lambda(states),
            })
            .collect(),
        diagnostics: march.diagnostics,
        seeds,
    }
}

pub fn simulate_dem(config: &LambdaConfig) -> Result<SimResult> {
    config.validate()?;
    let steps = snapshot_steps(&config.grid.t, &config.snapshot_times)?;
    let march = integrate(&model(config), &config.grid, config.coupling(), &config.probe, &steps)?;
    Ok(finish(config, march))
}

/// Runs several configurations that differ only from `branch_time` onwards,
/// integrating the shared early part once. The caller guarantees the control
/// fields coincide before `branch_time`; everything else must match exactly.
pub(crate) fn simulate_dem_branches(configs: &[LambdaConfig], branch_time: f64) -> Result<Vec<SimResult>> {
    let Some(first) = configs.first() else {
        return Ok(Vec::new());
    };
    for c in configs {
        c.validate()?;
        if c.grid != first.grid
            || c.probe != first.probe
            || c.optical_depth != first.optical_depth
            || c.decay != first.decay
            || c.snapshot_times != first.snapshot_times
        {
            return Err(Error::invalid(
                "configs",
                "branched runs must share grid, probe, medium and snapshots",
            ));
        }
    }
    let grid = &first.grid;
    // Stop one step short: the node at `branch_time` may round to either side
    // of a gate edge placed there.
    let branch = grid
        .t
        .node_index(branch_time)
        .ok_or(Error::Misaligned {
            t: branch_time,
            dt: grid.t.dt,
        })?
        .saturating_sub(1);
    let steps = snapshot_steps(&grid.t, &first.snapshot_times)?;
    let eta = first.coupling();

    let mut trunk = March::new(grid, &steps);
    trunk.advance(&model(first), grid, eta, &first.probe, &steps, branch)?;
    configs
        .par_iter()
        .map(|c| {
            let mut march = trunk.clone();
            march.advance(&model(c), grid, eta, &c.probe, &steps, grid.t.steps)?;
            Ok(finish(c, march.finish(grid, eta, &c.probe)?))
        })
        .collect()
}
