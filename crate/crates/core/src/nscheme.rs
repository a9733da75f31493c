//! Four-level N system: EIT storage with switching-field encryption.
//!
//! Levels |1>, |2>, |3> form the EIT Lambda; a switching field `Omega_s`
//! couples |2> <-> |4>. While the uniform control is off, `Omega_s` only
//! rotates the stored coherence between `rho_21` and `rho_41`, so its action
//! is applied exactly as a unitary on the {|2>, |4>} pair in a Strang split
//! around each RK4 step. The RK4 part carries probe, control and decay.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::SpaceTimeGrid;
use crate::lambda::{check_breakpoints, check_keys, check_step, max_time_step, DecayModel, GAMMA};
use crate::propagation::{
    i_half, integrate, snapshot_steps, CoherenceSnapshot, Scheme, Side, SimResult, SliceDynamics, SliceState,
    SnapshotStates,
};
use crate::protocol::{phase_phi, FieldSchedule, Gate, ProbeSpec};

/// Density matrix of one N-system atom (lower triangle).
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct NState {
    pub rho11: f64,
    pub rho22: f64,
    pub rho33: f64,
    pub rho44: f64,
    pub rho21: Complex64,
    pub rho31: Complex64,
    pub rho32: Complex64,
    pub rho41: Complex64,
    pub rho42: Complex64,
    pub rho43: Complex64,
}

impl NState {
    /// Full 4x4 matrix, indices 0..4 standing for |1>..|4>.
    pub fn density_matrix(&self) -> [[Complex64; 4]; 4] {
        let r = |x: f64| Complex64::new(x, 0.0);
        [
            [r(self.rho11), self.rho21.conj(), self.rho31.conj(), self.rho41.conj()],
            [self.rho21, r(self.rho22), self.rho32.conj(), self.rho42.conj()],
            [self.rho31, self.rho32, r(self.rho33), self.rho43.conj()],
            [self.rho41, self.rho42, self.rho43, r(self.rho44)],
        ]
    }

    /// `exp(i phi X) rho exp(-i phi X)` with `X = |2><4| + |4><2|`.
    fn rotate(&mut self, phi: f64) {
        let (s, c) = phi.sin_cos();
        let is = Complex64::new(0.0, s);
        let (p2, p4) = (self.rho22, self.rho44);
        let im42 = self.rho42.im;
        let (r21, r41, r32, r43, r42) = (self.rho21, self.rho41, self.rho32, self.rho43, self.rho42);
        self.rho21 = r21 * c + is * r41;
        self.rho41 = is * r21 + r41 * c;
        self.rho43 = is * r32.conj() + r43 * c;
        self.rho32 = r32 * c - is * r43.conj();
        self.rho22 = c * c * p2 + s * s * p4 - 2.0 * c * s * im42;
        self.rho44 = s * s * p2 + c * c * p4 + 2.0 * c * s * im42;
        self.rho42 = r42 * (c * c) + r42.conj() * (s * s) + Complex64::new(0.0, c * s * (p2 - p4));
    }
}

impl SliceState for NState {
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
            rho44: self.rho44 + a * d.rho44,
            rho21: self.rho21 + d.rho21 * a,
            rho31: self.rho31 + d.rho31 * a,
            rho32: self.rho32 + d.rho32 * a,
            rho41: self.rho41 + d.rho41 * a,
            rho42: self.rho42 + d.rho42 * a,
            rho43: self.rho43 + d.rho43 * a,
        }
    }

    fn trace(&self) -> f64 {
        self.rho11 + self.rho22 + self.rho33 + self.rho44
    }

    fn population_range(&self) -> (f64, f64) {
        let p = [self.rho11, self.rho22, self.rho33, self.rho44];
        (
            p.iter().copied().fold(f64::INFINITY, f64::min),
            p.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        )
    }
}

struct NModel<'a> {
    control_gate: Gate,
    control_key: &'a [f64],
    switch_gates: Vec<Gate>,
    switch_keys: Vec<&'a [f64]>,
    gamma4: f64,
    decay: DecayModel,
}

impl SliceDynamics for NModel<'_> {
    type State = NState;
    type Drive = f64;

    fn drive(&self, t: f64, side: Side) -> f64 {
        match side {
            Side::Right => self.control_gate.value(t),
            Side::Left => self.control_gate.value_left(t),
        }
    }

    #[inline]
    fn derivative(&self, gate: &f64, cell: usize, s: &NState, op: Complex64) -> NState {
        let oc = gate * self.control_key[cell];
        let b = self.decay.branching_to_ground;
        let g4 = self.gamma4;
        let probe_work = (op.conj() * s.rho31).im;
        let control_work = oc * s.rho32.im;
        let emitted = GAMMA * s.rho33;
        let emitted4 = g4 * s.rho44;
        NState {
            rho11: -probe_work + b * emitted + 0.5 * emitted4,
            rho22: -control_work + (1.0 - b) * emitted + 0.5 * emitted4,
            rho33: probe_work + control_work - emitted,
            rho44: -emitted4,
            rho21: i_half(s.rho31 * oc - op * s.rho32.conj()) - s.rho21 * self.decay.ground_dephasing,
            rho31: i_half(op * (s.rho11 - s.rho33) + s.rho21 * oc) - s.rho31 * (0.5 * GAMMA),
            rho32: i_half(op * s.rho21.conj() + Complex64::new(oc * (s.rho22 - s.rho33), 0.0))
                - s.rho32 * (0.5 * GAMMA),
            rho41: i_half(-(op * s.rho43)) - s.rho41 * (0.5 * g4),
            rho42: i_half(-(s.rho43 * oc)) - s.rho42 * (0.5 * g4),
            rho43: i_half(-(op.conj() * s.rho41) - s.rho42 * oc) - s.rho43 * (0.5 * (GAMMA + g4)),
        }
    }

    fn split_step(&self, t0: f64, t1: f64, states: &mut [NState]) {
        let areas: Vec<f64> = self.switch_gates.iter().map(|g| 0.5 * g.integral(t0, t1)).collect();
        if areas.iter().all(|&a| a == 0.0) {
            return;
        }
        for (j, s) in states.iter_mut().enumerate() {
            let phi: f64 = areas.iter().zip(&self.switch_keys).map(|(a, k)| a * k[j]).sum();
            s.rotate(phi);
        }
    }
}

/// Everything needed to run the N-system memory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NConfig {
    pub optical_depth: f64,
    pub probe: ProbeSpec,
    /// Uniform EIT control with its off/on gate.
    pub control: FieldSchedule,
    /// Encrypt and decrypt switching pulses on |2> <-> |4>.
    #[serde(default)]
    pub switches: Vec<FieldSchedule>,
    /// Decay rate of |4>, split equally into |1> and |2>.
    #[serde(default)]
    pub gamma4: f64,
    #[serde(default)]
    pub decay: DecayModel,
    pub grid: SpaceTimeGrid,
    #[serde(default)]
    pub snapshot_times: Vec<f64>,
}

impl NConfig {
    pub fn coupling(&self) -> f64 {
        GAMMA * self.optical_depth / (2.0 * self.grid.z.length)
    }

    /// Ten steps per `1/Omega_c0`, `kappa`, `1/Gamma` and `1/Gamma_4`. The
    /// switching field is integrated exactly and does not limit the step.
    pub fn max_time_step(&self) -> f64 {
        max_time_step(
            &[self.control.strength_scale(), GAMMA, self.gamma4],
            self.probe.duration,
        )
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.optical_depth.is_finite() && self.optical_depth >= 0.0) {
            return Err(Error::invalid(
                "optical_depth",
                format!("xi must be >= 0, got {}", self.optical_depth),
            ));
        }
        self.probe.validate()?;
        if self.probe.duration * GAMMA <= 1.0 {
            return Err(Error::invalid(
                "probe.duration",
                format!(
                    "EIT storage needs a narrowband probe (kappa > 1/Gamma), got kappa = {}",
                    self.probe.duration
                ),
            ));
        }
        if !(self.gamma4.is_finite() && self.gamma4 >= 0.0) {
            return Err(Error::invalid("gamma4", "must be non-negative"));
        }
        self.decay.validate()?;
        let all: Vec<FieldSchedule> = std::iter::once(self.control.clone())
            .chain(self.switches.iter().cloned())
            .collect();
        check_keys(&all, &self.grid)?;
        check_step(self.grid.t.dt, self.max_time_step(), self.grid.t.t_end())?;
        check_breakpoints(&all, &self.grid)?;
        snapshot_steps(&self.grid.t, &self.snapshot_times)?;
        Ok(())
    }
}

/// Integrates the N-system Maxwell-Bloch equations with all atoms in |1>.
pub fn simulate_eit_encrypted(config: &NConfig) -> Result<SimResult> {
    config.validate()?;
    let model = NModel {
        control_gate: config.control.gate,
        control_key: &config.control.key.samples,
        switch_gates: config.switches.iter().map(|s| s.gate).collect(),
        switch_keys: config.switches.iter().map(|s| s.key.samples.as_slice()).collect(),
        gamma4: config.gamma4,
        decay: config.decay,
    };
    let steps = snapshot_steps(&config.grid.t, &config.snapshot_times)?;
    let march = integrate(&model, &config.grid, config.coupling(), &config.probe, &steps)?;
    let mut seeds: Vec<u64> = config.switches.iter().filter_map(|s| s.key.seed).collect();
    seeds.dedup();
    Ok(SimResult {
        scheme: Scheme::N,
        time: config.grid.t,
        input: march.input,
        output: march.output,
        snapshots: march
            .snapshots
            .into_iter()
            .map(|(step, states)| CoherenceSnapshot {
                t: config.grid.t.time(step),
                step,
                states: SnapshotStates::N(states),
            })
            .collect(),
        diagnostics: march.diagnostics,
        seeds,
    })
}

/// How well the switching pulses act as a pure rotation of the spin wave.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RotationResidual {
    /// `max_z | |rho21|^2 + |rho41|^2 - (same at t_ref) |`, relative to the
    /// largest stored norm at `t_ref`.
    pub norm: f64,
    /// `max_z` distance between the simulated `(rho21, rho41)` and the
    /// reference spin wave rotated by `phi(t, z)`, relative to the largest
    /// stored amplitude.
    pub rotation: f64,
    /// Largest stored norm `|rho21|^2 + |rho41|^2` at `t_ref`.
    pub reference_norm: f64,
}

/// Compares the spin wave at `t` with the one at `t_ref`, both of which must
/// have been requested as snapshots.
pub fn spinwave_rotation_check(
    result: &SimResult,
    switches: &[FieldSchedule],
    t_ref: f64,
    t: f64,
) -> Result<RotationResidual> {
    let fetch = |time: f64| -> Result<(Vec<Complex64>, Vec<Complex64>)> {
        let snap = result
            .snapshot_at(time)
            .ok_or_else(|| Error::invalid("t", format!("no snapshot recorded at t = {time}")))?;
        let rho41 = snap
            .rho41()
            .ok_or_else(|| Error::invalid("result", "rotation check needs a four-level run"))?;
        Ok((snap.rho21(), rho41))
    };
    let (a21, a41) = fetch(t_ref)?;
    let (b21, b41) = fetch(t)?;
    let phi = if switches.is_empty() {
        vec![0.0; a21.len()]
    } else {
        phase_phi(switches, &result.time, t_ref, t)?
    };

    let norm = |x: Complex64, y: Complex64| x.norm_sqr() + y.norm_sqr();
    let reference_norm = a21.iter().zip(&a41).map(|(x, y)| norm(*x, *y)).fold(0.0, f64::max);
    if reference_norm == 0.0 {
        return Err(Error::invalid("t_ref", "no spin wave is stored at the reference time"));
    }
    let mut norm_res: f64 = 0.0;
    let mut rot_res: f64 = 0.0;
    for j in 0..a21.len() {
        norm_res = norm_res.max((norm(b21[j], b41[j]) - norm(a21[j], a41[j])).abs());
        let (s, c) = phi[j].sin_cos();
        let is = Complex64::new(0.0, s);
        let p21 = a21[j] * c + is * a41[j];
        let p41 = is * a21[j] + a41[j] * c;
        rot_res = rot_res.max(((b21[j] - p21).norm_sqr() + (b41[j] - p41).norm_sqr()).sqrt());
    }
    Ok(RotationResidual {
        norm: norm_res / reference_norm,
        rotation: rot_res / reference_norm.sqrt(),
        reference_norm,
    })
}
