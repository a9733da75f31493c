//! Shared Maxwell-Bloch kernel.
//!
//! In the retarded frame the probe obeys `dOmega_p/dz = i eta rho_31`, so at
//! any instant the field along the medium is a running sum over the atomic
//! coherences. The atoms therefore form one large ODE system in time whose
//! right-hand side contains a z-march. Each RK4 stage marches once over the
//! cells: atoms sit at cell centres and see the midpoint field
//! `Omega_j + (i eta dz / 2) rho_31`, and the face field advances by
//! `i eta dz rho_31` per cell.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{SpaceTimeGrid, TimeGrid};
use crate::lambda::LambdaState;
use crate::nscheme::NState;
use crate::protocol::ProbeSpec;

/// Which one-sided limit a stage should use for gates with jumps.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum Side {
    Right,
    Left,
}

pub(crate) trait SliceState: Copy + Send + Sync {
    fn ground() -> Self;
    fn probe_coherence(&self) -> Complex64;
    fn add_scaled(&self, a: f64, d: &Self) -> Self;
    fn trace(&self) -> f64;
    fn population_range(&self) -> (f64, f64);
}

pub(crate) trait SliceDynamics: Sync {
    type State: SliceState;
    type Drive;

    fn drive(&self, t: f64, side: Side) -> Self::Drive;

    fn derivative(&self, drive: &Self::Drive, cell: usize, state: &Self::State, probe: Complex64) -> Self::State;

    /// Exactly solvable part of the dynamics, applied over `[t0, t1]` on both
    /// sides of every RK4 step (Strang splitting). Default: nothing.
    fn split_step(&self, _t0: f64, _t1: f64, _states: &mut [Self::State]) {}
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    /// Three-level Lambda system, disordered echo memory.
    Lambda,
    /// Four-level N system, EIT memory with switching-field encryption.
    N,
}

/// Invariant monitors accumulated over a run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverDiagnostics {
    /// `max |Tr rho - 1|` over all cells and steps.
    pub max_trace_error: f64,
    pub min_population: f64,
    pub max_population: f64,
    pub cells: usize,
    pub steps: usize,
}

/// Trace and population bounds a healthy run keeps to.
pub const INVARIANT_TOLERANCE: f64 = 1e-8;

impl SolverDiagnostics {
    /// Trace within `tol` of one and populations inside `[-tol, 1 + tol]`.
    pub fn invariants_hold(&self, tol: f64) -> bool {
        self.max_trace_error <= tol && self.min_population >= -tol && self.max_population <= 1.0 + tol
    }

    pub fn check(&self, tol: f64) -> Result<()> {
        if self.invariants_hold(tol) {
            return Ok(());
        }
        Err(Error::InvariantViolated {
            max_trace_error: self.max_trace_error,
            min_population: self.min_population,
            max_population: self.max_population,
        })
    }
}

/// Per-cell atomic states recorded at one instant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "scheme", content = "cells", rename_all = "snake_case")]
pub enum SnapshotStates {
    Lambda(Vec<LambdaState>),
    N(Vec<NState>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoherenceSnapshot {
    pub t: f64,
    pub step: usize,
    pub states: SnapshotStates,
}

impl CoherenceSnapshot {
    pub fn rho21(&self) -> Vec<Complex64> {
        match &self.states {
            SnapshotStates::Lambda(s) => s.iter().map(|c| c.rho21).collect(),
            SnapshotStates::N(s) => s.iter().map(|c| c.rho21).collect(),
        }
    }

    pub fn rho31(&self) -> Vec<Complex64> {
        match &self.states {
            SnapshotStates::Lambda(s) => s.iter().map(|c| c.rho31).collect(),
            SnapshotStates::N(s) => s.iter().map(|c| c.rho31).collect(),
        }
    }

    /// `rho_41`, only present for the four-level system.
    pub fn rho41(&self) -> Option<Vec<Complex64>> {
        match &self.states {
            SnapshotStates::Lambda(_) => None,
            SnapshotStates::N(s) => Some(s.iter().map(|c| c.rho41).collect()),
        }
    }
}

/// Output of one simulation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimResult {
    pub scheme: Scheme,
    pub time: TimeGrid,
    /// Probe envelope entering at z = 0, on the time grid.
    pub input: Vec<Complex64>,
    /// Probe envelope leaving at z = L, on the time grid.
    pub output: Vec<Complex64>,
    pub snapshots: Vec<CoherenceSnapshot>,
    pub diagnostics: SolverDiagnostics,
    /// Seeds of every random key that entered the run.
    pub seeds: Vec<u64>,
}

impl SimResult {
    pub fn times(&self) -> Vec<f64> {
        self.time.times()
    }

    pub fn snapshot_at(&self, t: f64) -> Option<&CoherenceSnapshot> {
        let step = self.time.nearest_index(t);
        self.snapshots.iter().find(|s| s.step == step)
    }

    /// `(rho_21(z), rho_31(z))` at a recorded snapshot time.
    pub fn coherences_at(&self, t: f64) -> Option<(Vec<Complex64>, Vec<Complex64>)> {
        self.snapshot_at(t).map(|s| (s.rho21(), s.rho31()))
    }
}

/// Integration in progress: the atomic states after `step` steps plus the
/// envelopes recorded so far. Cloning a march checkpoints it.
#[derive(Clone)]
pub(crate) struct March<S> {
    pub input: Vec<Complex64>,
    pub output: Vec<Complex64>,
    pub snapshots: Vec<(usize, Vec<S>)>,
    pub diagnostics: SolverDiagnostics,
    states: Vec<S>,
    step: usize,
}

/// One pass over the medium: fills `k` with the atomic derivatives and returns
/// the field leaving the last cell.
fn sweep<M: SliceDynamics>(
    model: &M,
    drive: &M::Drive,
    states: &[M::State],
    omega_in: Complex64,
    half_step: Complex64,
    k: &mut [M::State],
) -> Complex64 {
    let mut omega = omega_in;
    for (j, (s, out)) in states.iter().zip(k.iter_mut()).enumerate() {
        let kick = half_step * s.probe_coherence();
        let mid = omega + kick;
        *out = model.derivative(drive, j, s, mid);
        omega = mid + kick;
    }
    omega
}

fn transmit<S: SliceState>(states: &[S], omega_in: Complex64, full_step: Complex64) -> Complex64 {
    states
        .iter()
        .fold(omega_in, |omega, s| omega + full_step * s.probe_coherence())
}

impl<S: SliceState> March<S> {
    /// All atoms in the ground state at t = 0.
    pub fn new(grid: &SpaceTimeGrid, snapshot_steps: &[usize]) -> Self {
        let states = vec![S::ground(); grid.z.cells];
        let mut snapshots = Vec::new();
        if snapshot_steps.contains(&0) {
            snapshots.push((0, states.clone()));
        }
        Self {
            input: Vec::with_capacity(grid.t.len()),
            output: Vec::with_capacity(grid.t.len()),
            snapshots,
            diagnostics: SolverDiagnostics {
                max_trace_error: 0.0,
                min_population: 0.0,
                max_population: 1.0,
                cells: grid.z.cells,
                steps: grid.t.steps,
            },
            states,
            step: 0,
        }
    }

    /// Integrates the coupled atom-field system up to step `until`.
    pub fn advance<M: SliceDynamics<State = S>>(
        &mut self,
        model: &M,
        grid: &SpaceTimeGrid,
        eta: f64,
        probe: &ProbeSpec,
        snapshot_steps: &[usize],
        until: usize,
    ) -> Result<()> {
        let dt = grid.t.dt;
        let half_step = Complex64::new(0.0, 0.5 * eta * grid.z.spacing());
        let cells = self.states.len();
        let zero = vec![S::ground(); cells];
        let (mut tmp, mut k1, mut k2, mut k3, mut k4) = (zero.clone(), zero.clone(), zero.clone(), zero.clone(), zero);
        let states = &mut self.states;

        for n in self.step..until.min(grid.t.steps) {
            let t0 = grid.t.time(n);
            let t1 = grid.t.time(n + 1);
            let th = t0 + 0.5 * dt;

            model.split_step(t0, th, states);

            let omega0 = Complex64::new(probe.envelope(t0), 0.0);
            let d = model.drive(t0, Side::Right);
            let out = sweep(model, &d, states, omega0, half_step, &mut k1);
            if !(out.re.is_finite() && out.im.is_finite()) {
                return Err(Error::NonFinite { t: t0, step: n });
            }
            self.input.push(omega0);
            self.output.push(out);

            let omega_h = Complex64::new(probe.envelope(th), 0.0);
            let d = model.drive(th, Side::Right);
            for ((t, s), k) in tmp.iter_mut().zip(states.iter()).zip(&k1) {
                *t = s.add_scaled(0.5 * dt, k);
            }
            sweep(model, &d, &tmp, omega_h, half_step, &mut k2);
            for ((t, s), k) in tmp.iter_mut().zip(states.iter()).zip(&k2) {
                *t = s.add_scaled(0.5 * dt, k);
            }
            sweep(model, &d, &tmp, omega_h, half_step, &mut k3);

            let omega1 = Complex64::new(probe.envelope(t1), 0.0);
            let d = model.drive(t1, Side::Left);
            for ((t, s), k) in tmp.iter_mut().zip(states.iter()).zip(&k3) {
                *t = s.add_scaled(dt, k);
            }
            sweep(model, &d, &tmp, omega1, half_step, &mut k4);

            let w = dt / 6.0;
            for (j, s) in states.iter_mut().enumerate() {
                *s = s
                    .add_scaled(w, &k1[j])
                    .add_scaled(2.0 * w, &k2[j])
                    .add_scaled(2.0 * w, &k3[j])
                    .add_scaled(w, &k4[j]);
            }

            model.split_step(th, t1, states);

            let diag = &mut self.diagnostics;
            for s in states.iter() {
                let (lo, hi) = s.population_range();
                diag.max_trace_error = diag.max_trace_error.max((s.trace() - 1.0).abs());
                diag.min_population = diag.min_population.min(lo);
                diag.max_population = diag.max_population.max(hi);
            }
            if snapshot_steps.contains(&(n + 1)) {
                self.snapshots.push((n + 1, states.clone()));
            }
            self.step = n + 1;
        }
        Ok(())
    }

    /// Records the envelopes at the last node; call once the march has
    /// reached the end of the grid.
    pub fn finish(mut self, grid: &SpaceTimeGrid, eta: f64, probe: &ProbeSpec) -> Result<Self> {
        debug_assert_eq!(self.step, grid.t.steps);
        let t_end = grid.t.t_end();
        let omega_end = Complex64::new(probe.envelope(t_end), 0.0);
        let full_step = Complex64::new(0.0, eta * grid.z.spacing());
        let out = transmit(&self.states, omega_end, full_step);
        if !(out.re.is_finite() && out.im.is_finite()) {
            return Err(Error::NonFinite {
                t: t_end,
                step: grid.t.steps,
            });
        }
        self.input.push(omega_end);
        self.output.push(out);
        Ok(self)
    }
}

/// Integrates the coupled atom-field system over the whole time grid.
pub(crate) fn integrate<M: SliceDynamics>(
    model: &M,
    grid: &SpaceTimeGrid,
    eta: f64,
    probe: &ProbeSpec,
    snapshot_steps: &[usize],
) -> Result<March<M::State>> {
    let mut march = March::new(grid, snapshot_steps);
    march.advance(model, grid, eta, probe, snapshot_steps, grid.t.steps)?;
    march.finish(grid, eta, probe)
}

/// Grid steps for the requested snapshot times; errors if a time is outside
/// the window.
pub(crate) fn snapshot_steps(grid: &TimeGrid, times: &[f64]) -> Result<Vec<usize>> {
    times
        .iter()
        .map(|&t| {
            if grid.contains(t) {
                Ok(grid.nearest_index(t))
            } else {
                Err(Error::OutsideWindow { t, t_end: grid.t_end() })
            }
        })
        .collect()
}

/// `(i/2) x`.
#[inline(always)]
pub(crate) fn i_half(x: Complex64) -> Complex64 {
    Complex64::new(-0.5 * x.im, 0.5 * x.re)
}
