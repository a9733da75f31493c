//! Space and time discretisation in dimensionless units (z in L, t in tau).

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Relative tolerance used when deciding whether a time lies on a grid node.
const NODE_TOLERANCE: f64 = 1e-9;

/// Cell-centred uniform grid over `[0, length]`.
///
/// Atoms (and key samples) sit at the cell centres `(j + 1/2) dz`; the probe
/// field is carried on the cell faces.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ZGrid {
    pub length: f64,
    pub cells: usize,
}

impl ZGrid {
    pub fn new(length: f64, cells: usize) -> Result<Self> {
        if !(length.is_finite() && length > 0.0) {
            return Err(Error::invalid("length", format!("must be positive, got {length}")));
        }
        if cells == 0 {
            return Err(Error::invalid("cells", "must be at least 1"));
        }
        Ok(Self { length, cells })
    }

    /// Grid over `[0, length]` with spacing no larger than `max_spacing`.
    pub fn with_max_spacing(length: f64, max_spacing: f64) -> Result<Self> {
        if !(max_spacing.is_finite() && max_spacing > 0.0) {
            return Err(Error::invalid(
                "max_spacing",
                format!("must be positive, got {max_spacing}"),
            ));
        }
        let cells = (length / max_spacing * (1.0 - 1e-12)).ceil().max(1.0) as usize;
        Self::new(length, cells)
    }

    pub fn spacing(&self) -> f64 {
        self.length / self.cells as f64
    }

    pub fn position(&self, j: usize) -> f64 {
        (j as f64 + 0.5) * self.spacing()
    }

    pub fn positions(&self) -> Vec<f64> {
        (0..self.cells).map(|j| self.position(j)).collect()
    }
}

/// Uniform time grid `t_n = n dt`, `n = 0..=steps`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimeGrid {
    pub dt: f64,
    pub steps: usize,
}

impl TimeGrid {
    pub fn new(dt: f64, steps: usize) -> Result<Self> {
        if !(dt.is_finite() && dt > 0.0) {
            return Err(Error::invalid("dt", format!("must be positive, got {dt}")));
        }
        if steps == 0 {
            return Err(Error::invalid("steps", "must be at least 1"));
        }
        Ok(Self { dt, steps })
    }

    /// Smallest grid covering `[0, t_end]` with `dt <= dt_max`.
    pub fn covering(t_end: f64, dt_max: f64) -> Result<Self> {
        if !(t_end.is_finite() && t_end > 0.0) {
            return Err(Error::invalid("t_end", format!("must be positive, got {t_end}")));
        }
        let steps = (t_end / dt_max * (1.0 - 1e-12)).ceil().max(1.0) as usize;
        Self::new(t_end / steps as f64, steps)
    }

    /// Grid with `dt <= dt_max` that places a node exactly on `anchor` and
    /// extends at least to `t_end`.
    pub fn aligned(t_end: f64, dt_max: f64, anchor: f64) -> Result<Self> {
        if !(anchor.is_finite() && anchor > 0.0) {
            return Self::covering(t_end, dt_max);
        }
        let per_anchor = (anchor / dt_max * (1.0 - 1e-12)).ceil().max(1.0);
        let dt = anchor / per_anchor;
        let steps = (t_end / dt * (1.0 - 1e-12)).ceil().max(1.0) as usize;
        Self::new(dt, steps)
    }

    pub fn t_end(&self) -> f64 {
        self.time(self.steps)
    }

    pub fn len(&self) -> usize {
        self.steps + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn time(&self, n: usize) -> f64 {
        n as f64 * self.dt
    }

    pub fn times(&self) -> Vec<f64> {
        (0..self.len()).map(|n| self.time(n)).collect()
    }

    /// Index of the node at `t`, if `t` sits on one.
    pub fn node_index(&self, t: f64) -> Option<usize> {
        let x = t / self.dt;
        let n = x.round();
        if n < 0.0 || n > self.steps as f64 {
            return None;
        }
        ((x - n).abs() <= NODE_TOLERANCE * x.abs().max(1.0)).then_some(n as usize)
    }

    /// Index of the node nearest to `t`, clamped into the grid.
    pub fn nearest_index(&self, t: f64) -> usize {
        let n = (t / self.dt).round();
        n.clamp(0.0, self.steps as f64) as usize
    }

    /// First node at or after `t`.
    pub fn first_index_at_or_after(&self, t: f64) -> usize {
        if let Some(n) = self.node_index(t) {
            return n;
        }
        ((t / self.dt).ceil().max(0.0) as usize).min(self.steps)
    }

    pub fn contains(&self, t: f64) -> bool {
        t >= -NODE_TOLERANCE * self.dt && t <= self.t_end() * (1.0 + NODE_TOLERANCE)
    }
}

/// Discretisation of the medium and the simulation window.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpaceTimeGrid {
    pub z: ZGrid,
    pub t: TimeGrid,
}

impl SpaceTimeGrid {
    pub fn new(z: ZGrid, t: TimeGrid) -> Self {
        Self { z, t }
    }

    /// Grid with both spacings halved, used for convergence checks.
    pub fn refined(&self) -> Self {
        Self {
            z: ZGrid {
                length: self.z.length,
                cells: self.z.cells * 2,
            },
            t: TimeGrid {
                dt: self.t.dt / 2.0,
                steps: self.t.steps * 2,
            },
        }
    }
}
