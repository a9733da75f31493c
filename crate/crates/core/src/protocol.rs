//! Field schedules `Omega(t, z) = s(t) K(z)` and the local phases they imprint.

use serde::{Deserialize, Serialize};

use crate::disorder::{section_key, KeyProfile};
use crate::error::{Error, Result};
use crate::grid::{TimeGrid, ZGrid};

/// Flat-top windows place their tanh edges this many ramp widths inside the
/// window boundaries, where the gate is truncated to zero.
pub const WINDOW_EDGE_INSET: f64 = 4.0;

/// Jumps smaller than this (relative to the gate scale) are not treated as
/// discontinuities that need to sit on a grid node.
const HARD_JUMP: f64 = 1e-3;

/// `ln cosh x` without overflow.
fn ln_cosh(x: f64) -> f64 {
    let a = x.abs();
    a + (-2.0 * a).exp().ln_1p() - std::f64::consts::LN_2
}

/// Dimensionless temporal envelope `s(t)` of a field schedule.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "shape", rename_all = "snake_case")]
pub enum Gate {
    Constant {
        value: f64,
    },
    /// `before` for `t < at`, `after` for `t >= at`.
    Step {
        at: f64,
        before: f64,
        after: f64,
    },
    /// 1, ramped down around `off`, ramped back up around `on`.
    OffOn {
        off: f64,
        on: f64,
        ramp: f64,
    },
    /// Flat top of height `amplitude` inside `[start, end)` with tanh edges,
    /// exactly zero outside.
    Window {
        start: f64,
        end: f64,
        ramp: f64,
        amplitude: f64,
    },
}

impl Gate {
    /// Right-continuous value `s(t+)`.
    pub fn value(&self, t: f64) -> f64 {
        match *self {
            Gate::Constant { value } => value,
            Gate::Step { at, before, after } => {
                if t < at {
                    before
                } else {
                    after
                }
            }
            Gate::OffOn { off, on, ramp } => off_on_value(off, on, ramp, t, false),
            Gate::Window {
                start,
                end,
                ramp,
                amplitude,
            } => {
                if t >= start && t < end {
                    amplitude * window_profile(start, end, ramp, t)
                } else {
                    0.0
                }
            }
        }
    }

    /// Left limit `s(t-)`.
    pub fn value_left(&self, t: f64) -> f64 {
        match *self {
            Gate::Constant { value } => value,
            Gate::Step { at, before, after } => {
                if t <= at {
                    before
                } else {
                    after
                }
            }
            Gate::OffOn { off, on, ramp } => off_on_value(off, on, ramp, t, true),
            Gate::Window {
                start,
                end,
                ramp,
                amplitude,
            } => {
                if t > start && t <= end {
                    amplitude * window_profile(start, end, ramp, t)
                } else {
                    0.0
                }
            }
        }
    }

    /// Exact `integral_a^b s(t) dt`.
    pub fn integral(&self, a: f64, b: f64) -> f64 {
        if b < a {
            return -self.integral(b, a);
        }
        match *self {
            Gate::Constant { value } => value * (b - a),
            Gate::Step { at, before, after } => {
                let split = at.clamp(a, b);
                before * (split - a) + after * (b - split)
            }
            Gate::OffOn { off, on, ramp } => {
                if ramp > 0.0 {
                    let f = |t: f64| t - 0.5 * ramp * ln_cosh((t - off) / ramp) + 0.5 * ramp * ln_cosh((t - on) / ramp);
                    f(b) - f(a)
                } else {
                    let dark = (b.min(on) - a.max(off)).max(0.0);
                    (b - a) - dark
                }
            }
            Gate::Window {
                start,
                end,
                ramp,
                amplitude,
            } => {
                let lo = a.max(start);
                let hi = b.min(end);
                if hi <= lo {
                    return 0.0;
                }
                if ramp > 0.0 {
                    let c1 = start + WINDOW_EDGE_INSET * ramp;
                    let c2 = end - WINDOW_EDGE_INSET * ramp;
                    let f = |t: f64| 0.5 * ramp * (ln_cosh((t - c1) / ramp) - ln_cosh((t - c2) / ramp));
                    amplitude * (f(hi) - f(lo))
                } else {
                    amplitude * (hi - lo)
                }
            }
        }
    }

    /// Every time at which the gate is discontinuous, however small the jump.
    pub fn discontinuities(&self) -> Vec<f64> {
        match *self {
            Gate::Constant { .. } => vec![],
            Gate::Step { at, before, after } => {
                if before != after {
                    vec![at]
                } else {
                    vec![]
                }
            }
            Gate::OffOn { off, on, ramp } => {
                if ramp > 0.0 {
                    vec![]
                } else {
                    vec![off, on]
                }
            }
            Gate::Window { start, end, .. } => vec![start, end],
        }
    }

    /// Times at which the gate jumps by an O(1) amount.
    pub fn hard_breakpoints(&self) -> Vec<f64> {
        match *self {
            Gate::Constant { .. } => vec![],
            Gate::Step { at, before, after } => {
                if (before - after).abs() > HARD_JUMP * before.abs().max(after.abs()) {
                    vec![at]
                } else {
                    vec![]
                }
            }
            Gate::OffOn { off, on, ramp } => {
                if ramp > 0.0 {
                    vec![]
                } else {
                    vec![off, on]
                }
            }
            Gate::Window { start, end, ramp, .. } => {
                if ramp > 0.0 && window_profile(start, end, ramp, start) < HARD_JUMP {
                    vec![]
                } else {
                    vec![start, end]
                }
            }
        }
    }

    /// Largest `|s(t)|`.
    pub fn peak(&self) -> f64 {
        match *self {
            Gate::Constant { value } => value.abs(),
            Gate::Step { before, after, .. } => before.abs().max(after.abs()),
            Gate::OffOn { .. } => 1.0,
            Gate::Window { amplitude, .. } => amplitude.abs(),
        }
    }
}

fn off_on_value(off: f64, on: f64, ramp: f64, t: f64, left: bool) -> f64 {
    if ramp > 0.0 {
        1.0 - 0.5 * ((t - off) / ramp).tanh() + 0.5 * ((t - on) / ramp).tanh()
    } else {
        let dark = if left { t > off && t <= on } else { t >= off && t < on };
        if dark {
            0.0
        } else {
            1.0
        }
    }
}

fn window_profile(start: f64, end: f64, ramp: f64, t: f64) -> f64 {
    if ramp > 0.0 {
        let c1 = start + WINDOW_EDGE_INSET * ramp;
        let c2 = end - WINDOW_EDGE_INSET * ramp;
        0.5 * (((t - c1) / ramp).tanh() - ((t - c2) / ramp).tanh())
    } else {
        1.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScheduleLabel {
    DemControl,
    EitControlUniform,
    EitSwitchEncrypt,
    EitSwitchDecrypt,
}

/// One space-time separable field: `Omega(t, z) = gate(t) * key(z)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FieldSchedule {
    pub gate: Gate,
    pub key: KeyProfile,
    pub label: ScheduleLabel,
}

impl FieldSchedule {
    pub fn new(gate: Gate, key: KeyProfile, label: ScheduleLabel) -> Self {
        Self { gate, key, label }
    }

    /// Field at time `t` (right limit) in cell `j`.
    pub fn amplitude(&self, t: f64, j: usize) -> f64 {
        self.gate.value(t) * self.key.samples[j]
    }

    /// Gate sampled on the grid nodes, right limits.
    pub fn gate_samples(&self, grid: &TimeGrid) -> Vec<f64> {
        grid.times().into_iter().map(|t| self.gate.value(t)).collect()
    }

    /// Peak Rabi-frequency scale `max|s| * D`.
    pub fn strength_scale(&self) -> f64 {
        self.gate.peak() * self.key.strength_scale()
    }
}

/// Gaussian probe pulse `Omega_p0 exp(-((t - t_p)/kappa)^2)` entering at z = 0.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProbeSpec {
    /// `t_p`, in tau.
    pub peak_time: f64,
    /// `kappa`, in tau.
    pub duration: f64,
    /// `Omega_p0`, in Gamma.
    pub amplitude: f64,
}

impl ProbeSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.duration.is_finite() && self.duration > 0.0) {
            return Err(Error::invalid(
                "probe.duration",
                format!("kappa must be positive, got {}", self.duration),
            ));
        }
        if !(self.amplitude.is_finite() && self.amplitude > 0.0) {
            return Err(Error::invalid(
                "probe.amplitude",
                format!("peak Rabi frequency must be positive, got {}", self.amplitude),
            ));
        }
        if !self.peak_time.is_finite() {
            return Err(Error::invalid("probe.peak_time", "must be finite"));
        }
        Ok(())
    }

    pub fn envelope(&self, t: f64) -> f64 {
        let x = (t - self.peak_time) / self.duration;
        self.amplitude * (-x * x).exp()
    }

    /// `integral |Omega_p|^2 dt` over the whole real line.
    pub fn energy(&self) -> f64 {
        self.amplitude * self.amplitude * self.duration * (std::f64::consts::PI / 2.0).sqrt()
    }
}

fn check_within(t: f64, t_end: f64) -> Result<()> {
    if !(t.is_finite() && t >= 0.0 && t <= t_end) {
        return Err(Error::OutsideWindow { t, t_end });
    }
    Ok(())
}

/// Echo-memory control: `K(z)` for `t < t_i`, `-K(z)` from `t_i` on.
pub fn build_dem_schedule(key: &KeyProfile, t_i: f64, t_end: f64) -> Result<FieldSchedule> {
    check_within(t_i, t_end)?;
    Ok(FieldSchedule::new(
        Gate::Step {
            at: t_i,
            before: 1.0,
            after: -1.0,
        },
        key.clone(),
        ScheduleLabel::DemControl,
    ))
}

/// Echo-memory control that writes with `encrypt` and reads with an arbitrary
/// `decrypt` profile applied from `t_i` on.
pub fn build_dem_attempt(
    encrypt: &KeyProfile,
    decrypt: &KeyProfile,
    t_i: f64,
    t_end: f64,
) -> Result<Vec<FieldSchedule>> {
    check_within(t_i, t_end)?;
    if encrypt.len() != decrypt.len() {
        return Err(Error::GridMismatch {
            left: format!("{} cells", encrypt.len()),
            right: format!("{} cells", decrypt.len()),
        });
    }
    Ok(vec![
        FieldSchedule::new(
            Gate::Step {
                at: t_i,
                before: 1.0,
                after: 0.0,
            },
            encrypt.clone(),
            ScheduleLabel::DemControl,
        ),
        FieldSchedule::new(
            Gate::Step {
                at: t_i,
                before: 0.0,
                after: 1.0,
            },
            decrypt.clone(),
            ScheduleLabel::DemControl,
        ),
    ])
}

/// Timing of the EIT storage sequence and its switching pulses.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EitTiming {
    /// Uniform control Rabi frequency `Omega_c0`, in Gamma.
    pub control_strength: f64,
    pub t_off: f64,
    pub t_on: f64,
    /// Width of the tanh edges, in tau.
    pub ramp: f64,
    pub encrypt_window: Option<(f64, f64)>,
    pub decrypt_window: Option<(f64, f64)>,
}

impl Default for EitTiming {
    fn default() -> Self {
        Self {
            control_strength: 5.0,
            t_off: 50.0,
            t_on: 120.0,
            ramp: 1.0,
            encrypt_window: Some((60.0, 80.0)),
            decrypt_window: Some((90.0, 110.0)),
        }
    }
}

/// Uniform EIT control plus the encrypt/decrypt switching schedules.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EitSchedules {
    pub control: FieldSchedule,
    pub switches: Vec<FieldSchedule>,
}

/// Builds the EIT control and the switching pulses.
///
/// A switching schedule is emitted for each window that has a key; passing
/// `None` for a key leaves that window dark.
pub fn build_eit_schedules(
    timing: &EitTiming,
    grid: &ZGrid,
    encrypt_key: Option<&KeyProfile>,
    decrypt_key: Option<&KeyProfile>,
) -> Result<EitSchedules> {
    let EitTiming {
        control_strength,
        t_off,
        t_on,
        ramp,
        ..
    } = *timing;
    if !(control_strength.is_finite() && control_strength >= 0.0) {
        return Err(Error::invalid("control_strength", "must be non-negative"));
    }
    if !(ramp.is_finite() && ramp >= 0.0) {
        return Err(Error::invalid("ramp", "must be non-negative"));
    }
    if !(t_off < t_on) {
        return Err(Error::WindowOrdering {
            reason: format!("t_off = {t_off} is not before t_on = {t_on}"),
        });
    }
    let check_window = |name: &str, w: (f64, f64)| -> Result<()> {
        let (a, b) = w;
        if !(a < b) {
            return Err(Error::WindowOrdering {
                reason: format!("{name} window ({a}, {b}) is empty"),
            });
        }
        if a < t_off || b > t_on {
            return Err(Error::WindowOrdering {
                reason: format!("{name} window ({a}, {b}) leaves the storage interval ({t_off}, {t_on})"),
            });
        }
        if b - a <= 2.0 * WINDOW_EDGE_INSET * ramp {
            return Err(Error::WindowOrdering {
                reason: format!("{name} window ({a}, {b}) is too short for ramps of width {ramp}"),
            });
        }
        Ok(())
    };
    if let Some(w) = timing.encrypt_window {
        check_window("encrypt", w)?;
    }
    if let Some(w) = timing.decrypt_window {
        check_window("decrypt", w)?;
    }
    if let (Some(e), Some(d)) = (timing.encrypt_window, timing.decrypt_window) {
        if d.0 < e.1 {
            return Err(Error::WindowOrdering {
                reason: format!("encrypt window {e:?} overlaps or follows decrypt window {d:?}"),
            });
        }
    }

    let control = FieldSchedule::new(
        Gate::OffOn {
            off: t_off,
            on: t_on,
            ramp,
        },
        KeyProfile::uniform(grid, control_strength),
        ScheduleLabel::EitControlUniform,
    );

    let mut switches = Vec::new();
    let mut push = |window: Option<(f64, f64)>, key: Option<&KeyProfile>, label, name: &str| -> Result<()> {
        match (window, key) {
            (Some((start, end)), Some(key)) => {
                if !key.fits(grid) {
                    return Err(Error::GridMismatch {
                        left: format!("{name} key with {} cells", key.len()),
                        right: format!("medium with {} cells", grid.cells),
                    });
                }
                switches.push(FieldSchedule::new(
                    Gate::Window {
                        start,
                        end,
                        ramp,
                        amplitude: 1.0,
                    },
                    key.clone(),
                    label,
                ));
                Ok(())
            }
            (None, Some(_)) => Err(Error::WindowOrdering {
                reason: format!("{name} key supplied without a window"),
            }),
            _ => Ok(()),
        }
    };
    push(
        timing.encrypt_window,
        encrypt_key,
        ScheduleLabel::EitSwitchEncrypt,
        "encrypt",
    )?;
    push(
        timing.decrypt_window,
        decrypt_key,
        ScheduleLabel::EitSwitchDecrypt,
        "decrypt",
    )?;

    Ok(EitSchedules { control, switches })
}

/// Same schedule with the key negated.
pub fn invert_key(schedule: &FieldSchedule) -> FieldSchedule {
    FieldSchedule {
        key: schedule.key.inverted(),
        ..schedule.clone()
    }
}

/// Re-cuts `section` from `master` displaced by `delta`.
pub fn shift_key(master: &KeyProfile, section: &KeyProfile, delta: f64) -> Result<KeyProfile> {
    let local = section.section_offset - master.section_offset;
    section_key(master, local + delta, &section.grid())
}

/// Grid nodes closer than this many steps to a jump are replaced by the jump.
const NODE_SNAP: f64 = 1e-6;

/// Trapezoidal `integral_a^b s(t) dt` on the nodes of `grid`, with every
/// discontinuity of the gate added as a node and one-sided limits on either
/// side of it, so jumps are integrated exactly.
pub fn trapezoid_gate_area(gate: &Gate, grid: &TimeGrid, a: f64, b: f64) -> f64 {
    if b <= a {
        return 0.0;
    }
    // Grid nodes that sit within rounding of a jump are moved onto it.
    let jumps: Vec<f64> = gate.discontinuities().into_iter().filter(|&t| t > a && t < b).collect();
    let snap = NODE_SNAP * grid.dt;
    let mut nodes = vec![a];
    let first = grid.first_index_at_or_after(a);
    for n in first..=grid.steps {
        let t = grid.time(n);
        if t >= b - snap {
            break;
        }
        if t > a + snap && !jumps.iter().any(|j| (j - t).abs() <= snap) {
            nodes.push(t);
        }
    }
    nodes.extend(jumps);
    nodes.push(b);
    nodes.sort_by(f64::total_cmp);
    nodes
        .windows(2)
        .map(|w| 0.5 * (gate.value(w[0]) + gate.value_left(w[1])) * (w[1] - w[0]))
        .sum()
}

fn half_area_profile(schedules: &[FieldSchedule], grid: &TimeGrid, from: f64, to: f64) -> Result<Vec<f64>> {
    let Some(first) = schedules.first() else {
        return Ok(Vec::new());
    };
    let cells = first.key.len();
    if let Some(bad) = schedules.iter().find(|s| s.key.len() != cells) {
        return Err(Error::GridMismatch {
            left: format!("{cells} cells"),
            right: format!("{} cells", bad.key.len()),
        });
    }
    let mut out = vec![0.0; cells];
    for s in schedules {
        let area = 0.5 * trapezoid_gate_area(&s.gate, grid, from, to);
        for (o, k) in out.iter_mut().zip(&s.key.samples) {
            *o += area * k;
        }
    }
    Ok(out)
}

/// `theta(t, z) = 1/2 integral_0^t Omega_c(t', z) dt'` for a (sum of) control
/// schedule(s).
pub fn phase_theta(schedules: &[FieldSchedule], grid: &TimeGrid, t: f64) -> Result<Vec<f64>> {
    check_within(t, grid.t_end())?;
    half_area_profile(schedules, grid, 0.0, t)
}

/// `phi(t, z) = 1/2 integral_{t_off}^t Omega_s(t', z) dt'` for the switching
/// schedules.
pub fn phase_phi(switches: &[FieldSchedule], grid: &TimeGrid, t_off: f64, t: f64) -> Result<Vec<f64>> {
    check_within(t, grid.t_end())?;
    if t < t_off {
        return Err(Error::invalid(
            "t",
            format!("phi is defined for t >= t_off = {t_off}, got {t}"),
        ));
    }
    half_area_profile(switches, grid, t_off, t)
}
