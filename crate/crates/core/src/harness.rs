//! Ensembles and attack experiments.
//!
//! Every run inside an experiment draws its keys from a seed derived by
//! hashing the master seed with the run's coordinates, and results are
//! collected in index order, so outputs do not depend on the number of
//! worker threads or on scheduling.

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::disorder::{generate_key, gradient_key, section_key, CorrelationSpec, KeyProfile, CELLS_PER_SIGMA};
use crate::error::{Error, Result};
use crate::grid::{SpaceTimeGrid, TimeGrid, ZGrid};
use crate::lambda::{max_time_step, simulate_dem, simulate_dem_branches, DecayModel, LambdaConfig, GAMMA};
use crate::metrics::{fidelity, mean_and_se, relative_l2, storage_efficiency, window_energy, MetricsBundle};
use crate::nscheme::{simulate_eit_encrypted, NConfig};
use crate::propagation::{Scheme, SimResult, INVARIANT_TOLERANCE};
use crate::protocol::{build_dem_attempt, build_eit_schedules, EitTiming, ProbeSpec, WINDOW_EDGE_INSET};

/// Normalized SE below which an attempt counts as failed.
pub const DEFAULT_FAILURE_THRESHOLD: f64 = 0.05;
/// Normalized SE from which an attack counts as successful.
pub const DEFAULT_SUCCESS_THRESHOLD: f64 = 0.5;
/// Every experiment uses a medium of unit length.
const MEDIUM_LENGTH: f64 = 1.0;

/// Hashes `(master, coordinates, realization)` into a key seed.
pub fn derive_seed(master: u64, coordinates: &[u64], realization: u64) -> u64 {
    let mut h = Sha256::new();
    h.update(b"dmem-seed-v1");
    h.update(master.to_le_bytes());
    h.update((coordinates.len() as u64).to_le_bytes());
    for c in coordinates {
        h.update(c.to_le_bytes());
    }
    h.update(realization.to_le_bytes());
    let digest = h.finalize();
    u64::from_le_bytes(digest[..8].try_into().expect("digest has 32 bytes"))
}

/// How finely a run is discretised.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Resolution {
    /// Cells per correlation length.
    pub cells_per_sigma: f64,
    /// Largest optical depth carried by a single cell.
    pub max_cell_depth: f64,
    /// Multiplies the largest admissible time step (at most 1).
    pub time_step_factor: f64,
}

impl Default for Resolution {
    fn default() -> Self {
        Self {
            cells_per_sigma: CELLS_PER_SIGMA,
            max_cell_depth: 0.3,
            time_step_factor: 1.0,
        }
    }
}

impl Resolution {
    pub fn validate(&self) -> Result<()> {
        if !(self.cells_per_sigma >= CELLS_PER_SIGMA) {
            return Err(Error::invalid(
                "resolution.cells_per_sigma",
                format!("must be at least {CELLS_PER_SIGMA}"),
            ));
        }
        if !(self.max_cell_depth > 0.0) {
            return Err(Error::invalid("resolution.max_cell_depth", "must be positive"));
        }
        if !(self.time_step_factor > 0.0 && self.time_step_factor <= 1.0) {
            return Err(Error::invalid("resolution.time_step_factor", "must lie in (0, 1]"));
        }
        Ok(())
    }

    /// Medium grid resolving both `sigma` and the optical depth.
    pub fn medium(&self, optical_depth: f64, sigma: f64) -> Result<ZGrid> {
        let by_sigma = (self.cells_per_sigma / sigma * (1.0 - 1e-12)).ceil();
        let by_depth = (optical_depth / self.max_cell_depth * (1.0 - 1e-12)).ceil();
        ZGrid::new(MEDIUM_LENGTH, by_sigma.max(by_depth).max(1.0) as usize)
    }
}

/// Correlation lengths beyond the medium length leave nothing to average over.
fn check_correlation_length(sigma: f64) -> Result<()> {
    if sigma > MEDIUM_LENGTH {
        return Err(Error::invalid(
            "correlation_length",
            format!("sigma = {sigma} L exceeds the medium length; the key would be a constant offset"),
        ));
    }
    Ok(())
}

/// Positive, finite depth; zero is allowed and means an empty medium.
fn check_optical_depth(xi: f64) -> Result<()> {
    if !(xi.is_finite() && xi >= 0.0) {
        return Err(Error::invalid(
            "optical_depth",
            format!("xi must be non-negative, got {xi}"),
        ));
    }
    Ok(())
}

/// Parameters of the Lambda-system echo memory.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DemParams {
    pub optical_depth: f64,
    /// `D_c`, in Gamma.
    pub strength: f64,
    /// `sigma`, in L.
    pub correlation_length: f64,
    pub probe: ProbeSpec,
    /// Inversion time `t_i`, in tau.
    pub t_i: f64,
    pub t_end: f64,
    pub decay: DecayModel,
    pub resolution: Resolution,
}

impl Default for DemParams {
    fn default() -> Self {
        Self {
            optical_depth: 600.0,
            strength: 1000.0,
            correlation_length: 0.01,
            probe: ProbeSpec {
                peak_time: 0.05,
                duration: 5e-3,
                amplitude: 0.01,
            },
            t_i: 0.22,
            t_end: 0.5,
            decay: DecayModel::default(),
            resolution: Resolution::default(),
        }
    }
}

impl DemParams {
    pub fn validate(&self) -> Result<()> {
        CorrelationSpec::new(self.strength, self.correlation_length)?;
        check_correlation_length(self.correlation_length)?;
        check_optical_depth(self.optical_depth)?;
        self.probe.validate()?;
        self.resolution.validate()?;
        if !(self.t_i > 0.0 && self.t_i < self.t_end) {
            return Err(Error::invalid("t_i", format!("must lie inside (0, {})", self.t_end)));
        }
        if self.probe.duration * GAMMA >= 1.0 {
            return Err(Error::invalid(
                "probe.duration",
                format!(
                    "the echo memory needs a broadband probe (kappa < 1/Gamma), got {}",
                    self.probe.duration
                ),
            ));
        }
        Ok(())
    }

    pub fn spec(&self) -> Result<CorrelationSpec> {
        CorrelationSpec::new(self.strength, self.correlation_length)
    }

    pub fn medium(&self) -> Result<ZGrid> {
        self.resolution.medium(self.optical_depth, self.correlation_length)
    }

    /// Time grid with a node on `t_i`.
    pub fn time_grid(&self) -> Result<TimeGrid> {
        let dt = max_time_step(&[self.strength, GAMMA], self.probe.duration) * self.resolution.time_step_factor;
        TimeGrid::aligned(self.t_end, dt, self.t_i)
    }

    pub fn grid(&self) -> Result<SpaceTimeGrid> {
        Ok(SpaceTimeGrid::new(self.medium()?, self.time_grid()?))
    }

    /// Writes with `encrypt` and reads with `decrypt` (the inverted key for a
    /// legitimate retrieval).
    pub fn config(&self, grid: SpaceTimeGrid, encrypt: &KeyProfile, decrypt: &KeyProfile) -> Result<LambdaConfig> {
        Ok(LambdaConfig {
            optical_depth: self.optical_depth,
            probe: self.probe,
            control: build_dem_attempt(encrypt, decrypt, self.t_i, grid.t.t_end())?,
            grid,
            decay: self.decay,
            snapshot_times: Vec::new(),
        })
    }

    pub fn run(&self, grid: SpaceTimeGrid, encrypt: &KeyProfile, decrypt: &KeyProfile) -> Result<SimResult> {
        simulate_dem(&self.config(grid, encrypt, decrypt)?)
    }

    /// One write with `encrypt` followed by a read attempt with each key in
    /// `decrypts`. The shared write stage is integrated only once.
    pub fn run_attempts(
        &self,
        grid: SpaceTimeGrid,
        encrypt: &KeyProfile,
        decrypts: &[KeyProfile],
    ) -> Result<Vec<SimResult>> {
        let configs = decrypts
            .iter()
            .map(|d| self.config(grid, encrypt, d))
            .collect::<Result<Vec<_>>>()?;
        simulate_dem_branches(&configs, self.t_i)
    }
}

/// Parameters of the N-system EIT memory.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EitParams {
    pub optical_depth: f64,
    pub timing: EitTiming,
    /// `D_s`, in Gamma.
    pub switch_strength: f64,
    pub correlation_length: f64,
    pub probe: ProbeSpec,
    pub gamma4: f64,
    pub t_end: f64,
    pub decay: DecayModel,
    pub resolution: Resolution,
}

impl Default for EitParams {
    fn default() -> Self {
        let timing = EitTiming::default();
        let optical_depth = 600.0;
        Self {
            optical_depth,
            timing,
            switch_strength: 30.0,
            correlation_length: 0.01,
            probe: ProbeSpec {
                peak_time: default_eit_peak_time(optical_depth, &timing, 10.0),
                duration: 10.0,
                amplitude: 0.01,
            },
            gamma4: 0.0,
            t_end: 200.0,
            decay: DecayModel::default(),
            resolution: Resolution::default(),
        }
    }
}

/// Probe timing that puts the slowed pulse half way through the medium when
/// the control switches off, with the slow-light delay `xi Gamma / Omega_c^2`.
pub fn default_eit_peak_time(optical_depth: f64, timing: &EitTiming, duration: f64) -> f64 {
    let delay = optical_depth * GAMMA / (timing.control_strength * timing.control_strength);
    (timing.t_off - 0.5 * delay).max(2.5 * duration)
}

impl EitParams {
    pub fn validate(&self) -> Result<()> {
        CorrelationSpec::new(self.switch_strength, self.correlation_length)?;
        check_correlation_length(self.correlation_length)?;
        check_optical_depth(self.optical_depth)?;
        self.probe.validate()?;
        self.resolution.validate()?;
        if self.probe.duration * GAMMA <= 1.0 {
            return Err(Error::invalid(
                "probe.duration",
                format!(
                    "EIT storage needs a narrowband probe (kappa > 1/Gamma), got {}",
                    self.probe.duration
                ),
            ));
        }
        if self.t_end <= self.timing.t_on {
            return Err(Error::invalid("t_end", "the window must extend past t_on"));
        }
        Ok(())
    }

    pub fn spec(&self) -> Result<CorrelationSpec> {
        CorrelationSpec::new(self.switch_strength, self.correlation_length)
    }

    pub fn medium(&self) -> Result<ZGrid> {
        self.resolution.medium(self.optical_depth, self.correlation_length)
    }

    pub fn grid(&self) -> Result<SpaceTimeGrid> {
        let rates = [self.timing.control_strength, GAMMA, self.gamma4];
        let dt = max_time_step(&rates, self.probe.duration) * self.resolution.time_step_factor;
        Ok(SpaceTimeGrid::new(self.medium()?, TimeGrid::covering(self.t_end, dt)?))
    }

    /// Start of the retrieval window: the control is still dark until here.
    pub fn retrieval_start(&self) -> f64 {
        self.timing.t_on - WINDOW_EDGE_INSET * self.timing.ramp
    }

    pub fn config(
        &self,
        grid: SpaceTimeGrid,
        encrypt: Option<&KeyProfile>,
        decrypt: Option<&KeyProfile>,
    ) -> Result<NConfig> {
        let timing = EitTiming {
            encrypt_window: encrypt.and(self.timing.encrypt_window),
            decrypt_window: decrypt.and(self.timing.decrypt_window),
            ..self.timing
        };
        let sch = build_eit_schedules(&timing, &grid.z, encrypt, decrypt)?;
        Ok(NConfig {
            optical_depth: self.optical_depth,
            probe: self.probe,
            control: sch.control,
            switches: sch.switches,
            gamma4: self.gamma4,
            decay: self.decay,
            grid,
            snapshot_times: Vec::new(),
        })
    }

    pub fn run(
        &self,
        grid: SpaceTimeGrid,
        encrypt: Option<&KeyProfile>,
        decrypt: Option<&KeyProfile>,
    ) -> Result<SimResult> {
        simulate_eit_encrypted(&self.config(grid, encrypt, decrypt)?)
    }
}

/// Which attack an experiment mounts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum AttackMode {
    None,
    WrongKey,
    GradientKey,
    ShiftSweep,
    BruteForce { n_keys: usize },
}

/// Everything an ensemble experiment needs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentPlan {
    pub scheme: Scheme,
    pub master_seed: u64,
    pub realizations: usize,
    pub dem: DemParams,
    pub eit: EitParams,
    /// Heatmap axes.
    pub optical_depths: Vec<f64>,
    pub strengths: Vec<f64>,
    /// Correlation lengths of the shift sweep, in L.
    pub correlation_lengths: Vec<f64>,
    /// Shifts `delta`, in units of the correlation length of each curve.
    pub shifts: Vec<f64>,
    pub attack: AttackMode,
    pub success_threshold: f64,
    pub failure_threshold: f64,
    /// Worker threads; all cores when unset.
    pub threads: Option<usize>,
}

impl Default for ExperimentPlan {
    fn default() -> Self {
        Self {
            scheme: Scheme::Lambda,
            master_seed: 2024,
            realizations: 1,
            dem: DemParams::default(),
            eit: EitParams::default(),
            optical_depths: vec![600.0],
            strengths: vec![1000.0],
            correlation_lengths: vec![0.01],
            shifts: vec![0.0],
            attack: AttackMode::None,
            success_threshold: DEFAULT_SUCCESS_THRESHOLD,
            failure_threshold: DEFAULT_FAILURE_THRESHOLD,
            threads: None,
        }
    }
}

impl ExperimentPlan {
    pub fn validate(&self) -> Result<()> {
        if self.realizations == 0 {
            return Err(Error::invalid("realizations", "need at least one realization"));
        }
        if self.threads == Some(0) {
            return Err(Error::invalid("threads", "need at least one worker"));
        }
        for (name, v) in [
            ("success_threshold", self.success_threshold),
            ("failure_threshold", self.failure_threshold),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::invalid(name, "must be positive"));
            }
        }
        if self.shifts.iter().any(|d| !(d.is_finite() && *d >= 0.0)) {
            return Err(Error::invalid("shifts", "must be non-negative"));
        }
        for &xi in &self.optical_depths {
            check_optical_depth(xi)?;
        }
        for &d in &self.strengths {
            if !(d.is_finite() && d > 0.0) {
                return Err(Error::invalid("strengths", format!("D must be positive, got {d}")));
            }
        }
        for &sigma in &self.correlation_lengths {
            CorrelationSpec::new(1.0, sigma)?;
            check_correlation_length(sigma)?;
        }
        match self.scheme {
            Scheme::Lambda => self.dem.validate(),
            Scheme::N => self.eit.validate(),
        }
    }

    /// Runs `f` inside a pool with the configured number of workers.
    pub fn in_pool<R: Send>(&self, f: impl FnOnce() -> R + Send) -> Result<R> {
        let mut builder = rayon::ThreadPoolBuilder::new();
        if let Some(n) = self.threads {
            builder = builder.num_threads(n);
        }
        let pool = builder
            .build()
            .map_err(|e| Error::invalid("threads", format!("cannot start worker pool: {e}")))?;
        Ok(pool.install(f))
    }
}

/// Ensemble summary of one `(xi, D)` cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeatmapCell {
    pub optical_depth: f64,
    pub strength: f64,
    /// `D kappa`.
    pub coverage: f64,
    pub mean_fidelity: f64,
    pub fidelity_se: f64,
    pub mean_efficiency: f64,
    pub efficiency_se: f64,
    pub completed: usize,
    pub failures: usize,
    /// Messages of failed runs.
    pub errors: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeatmapTable {
    pub cells: Vec<HeatmapCell>,
    pub seeds: Vec<u64>,
}

impl HeatmapTable {
    pub fn cell(&self, optical_depth: f64, strength: f64) -> Option<&HeatmapCell> {
        self.cells
            .iter()
            .find(|c| c.optical_depth == optical_depth && c.strength == strength)
    }
}

/// Passes `res` on if the solver kept the density matrices physical.
fn healthy(res: &SimResult) -> Result<&SimResult> {
    res.diagnostics.check(INVARIANT_TOLERANCE)?;
    Ok(res)
}

/// Fidelity and efficiency of a legitimate retrieval with one random key.
fn dem_key1_trial(params: &DemParams, seed: u64) -> Result<(f64, f64)> {
    let grid = params.grid()?;
    let key = generate_key(&grid.z, params.spec()?, seed)?;
    let res = params.run(grid, &key, &key.inverted())?;
    healthy(&res)?;
    let f = fidelity(&res.input, &res.output, &res.time, params.t_i)?;
    let se = storage_efficiency(&res.input, &res.output, &res.time, params.t_i)?;
    Ok((f.fidelity, se))
}

/// Mean fidelity over the `(xi, D)` grid of the plan.
pub fn run_heatmap(plan: &ExperimentPlan) -> Result<HeatmapTable> {
    plan.validate()?;
    if plan.scheme != Scheme::Lambda {
        return Err(Error::invalid(
            "scheme",
            "the fidelity heatmap is defined for the lambda scheme",
        ));
    }
    let mut jobs = Vec::new();
    for (a, &xi) in plan.optical_depths.iter().enumerate() {
        for (b, &d) in plan.strengths.iter().enumerate() {
            for r in 0..plan.realizations {
                let seed = derive_seed(plan.master_seed, &[a as u64, b as u64], r as u64);
                jobs.push((xi, d, seed));
            }
        }
    }
    let outcomes: Vec<Result<(f64, f64)>> = plan.in_pool(|| {
        jobs.par_iter()
            .map(|&(xi, d, seed)| {
                let params = DemParams {
                    optical_depth: xi,
                    strength: d,
                    ..plan.dem
                };
                dem_key1_trial(&params, seed)
            })
            .collect()
    })?;

    let mut cells = Vec::new();
    for (k, chunk) in outcomes.chunks(plan.realizations).enumerate() {
        let (xi, d, _) = jobs[k * plan.realizations];
        let ok: Vec<(f64, f64)> = chunk.iter().filter_map(|r| r.as_ref().ok().copied()).collect();
        let errors: Vec<String> = chunk
            .iter()
            .filter_map(|r| r.as_ref().err().map(|e| e.to_string()))
            .collect();
        let fs: Vec<f64> = ok.iter().map(|p| p.0).collect();
        let ses: Vec<f64> = ok.iter().map(|p| p.1).collect();
        let (mf, sf) = mean_and_se(&fs);
        let (me, se) = mean_and_se(&ses);
        cells.push(HeatmapCell {
            optical_depth: xi,
            strength: d,
            coverage: d * plan.dem.probe.duration,
            mean_fidelity: mf,
            fidelity_se: sf,
            mean_efficiency: me,
            efficiency_se: se,
            completed: ok.len(),
            failures: errors.len(),
            errors,
        });
    }
    Ok(HeatmapTable {
        cells,
        seeds: jobs.iter().map(|j| j.2).collect(),
    })
}

/// One point of a shift-sweep curve.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ShiftPoint {
    /// `delta`, in L.
    pub delta: f64,
    pub mean: f64,
    pub std_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShiftCurve {
    pub correlation_length: f64,
    /// Length `alpha` of the master keys.
    pub master_length: f64,
    /// Mean SE at `delta = 0`, the normalisation of the curve.
    pub reference_efficiency: f64,
    pub points: Vec<ShiftPoint>,
    /// `delta` at which the mean normalized SE first falls to one half, by
    /// linear interpolation; `None` if it never does.
    pub window_width: Option<f64>,
    pub peak_at_zero: bool,
    /// Mean normalized SE over shifts of at least five correlation lengths.
    pub large_shift_residual: Option<f64>,
    pub failures: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShiftSweep {
    pub scheme: Scheme,
    pub curves: Vec<ShiftCurve>,
}

fn half_maximum_crossing(points: &[ShiftPoint]) -> Option<f64> {
    points.windows(2).find_map(|w| {
        let (a, b) = (w[0], w[1]);
        if a.mean >= 0.5 && b.mean < 0.5 {
            Some(a.delta + (a.mean - 0.5) / (a.mean - b.mean) * (b.delta - a.delta))
        } else {
            None
        }
    })
}

/// Retrieval against the shift of the decryption section within the master key.
///
/// For every realization a master key of length `alpha = L + max delta + sigma`
/// is drawn; encryption uses the section at offset 0, decryption the
/// (inverted) section at offset `delta`.
pub fn run_shift_sweep(plan: &ExperimentPlan) -> Result<ShiftSweep> {
    plan.validate()?;
    let mut shifts = plan.shifts.clone();
    shifts.sort_by(f64::total_cmp);
    shifts.dedup();
    if shifts.first() != Some(&0.0) {
        shifts.insert(0, 0.0);
    }
    let max_shift = *shifts.last().expect("contains zero");

    let mut jobs = Vec::new();
    for (s, &sigma) in plan.correlation_lengths.iter().enumerate() {
        for r in 0..plan.realizations {
            jobs.push((s, sigma, r));
        }
    }

    // Efficiencies for every shift of one key realization.
    let run = |sigma: f64, seed: u64| -> Result<Vec<Result<f64>>> {
        match plan.scheme {
            Scheme::Lambda => {
                let params = DemParams {
                    correlation_length: sigma,
                    ..plan.dem
                };
                let grid = params.grid()?;
                let master = master_key(&grid.z, params.spec()?, max_shift * sigma, seed)?;
                let enc = section_key(&master, 0.0, &grid.z)?;
                let decs = shifts
                    .iter()
                    .map(|u| Ok(section_key(&master, u * sigma, &grid.z)?.inverted()))
                    .collect::<Result<Vec<_>>>()?;
                let results = params.run_attempts(grid, &enc, &decs)?;
                Ok(results
                    .iter()
                    .map(|res| {
                        let res = healthy(res)?;
                        storage_efficiency(&res.input, &res.output, &res.time, params.t_i)
                    })
                    .collect())
            }
            Scheme::N => {
                let params = EitParams {
                    correlation_length: sigma,
                    ..plan.eit
                };
                let grid = params.grid()?;
                let master = master_key(&grid.z, params.spec()?, max_shift * sigma, seed)?;
                let enc = section_key(&master, 0.0, &grid.z)?;
                Ok(shifts
                    .par_iter()
                    .map(|u| {
                        let dec = section_key(&master, u * sigma, &grid.z)?.inverted();
                        let res = params.run(grid, Some(&enc), Some(&dec))?;
                        healthy(&res)?;
                        storage_efficiency(&res.input, &res.output, &res.time, params.retrieval_start())
                    })
                    .collect())
            }
        }
    };

    let outcomes: Vec<Result<f64>> = plan
        .in_pool(|| {
            jobs.par_iter()
                .map(|&(s, sigma, r)| {
                    let seed = derive_seed(plan.master_seed, &[s as u64], r as u64);
                    run(sigma, seed).unwrap_or_else(|e| {
                        let msg = e.to_string();
                        shifts
                            .iter()
                            .map(|_| Err(Error::invalid("realization", msg.clone())))
                            .collect()
                    })
                })
                .collect::<Vec<_>>()
        })?
        .into_iter()
        .flatten()
        .collect();

    let per_sigma = plan.realizations * shifts.len();
    let mut curves = Vec::new();
    for (s, &sigma) in plan.correlation_lengths.iter().enumerate() {
        let block = &outcomes[s * per_sigma..(s + 1) * per_sigma];
        let failures = block.iter().filter(|r| r.is_err()).count();
        let at = |r: usize, k: usize| block[r * shifts.len() + k].as_ref().ok().copied();
        let refs: Vec<f64> = (0..plan.realizations).filter_map(|r| at(r, 0)).collect();
        let (reference, _) = mean_and_se(&refs);
        if !(reference > 0.0) {
            return Err(Error::invalid(
                "shifts",
                format!("no retrieval at delta = 0 for sigma = {sigma}"),
            ));
        }
        let points: Vec<ShiftPoint> = shifts
            .iter()
            .enumerate()
            .map(|(k, &u)| {
                let vals: Vec<f64> = (0..plan.realizations)
                    .filter_map(|r| at(r, k))
                    .map(|v| v / reference)
                    .collect();
                let (mean, std_error) = mean_and_se(&vals);
                ShiftPoint {
                    delta: u * sigma,
                    mean,
                    std_error,
                }
            })
            .collect();
        let peak_at_zero = points.iter().skip(1).all(|p| p.mean < points[0].mean);
        let far: Vec<f64> = points
            .iter()
            .filter(|p| p.delta >= 5.0 * sigma)
            .map(|p| p.mean)
            .collect();
        curves.push(ShiftCurve {
            correlation_length: sigma,
            master_length: 1.0 + max_shift * sigma + sigma,
            reference_efficiency: reference,
            window_width: half_maximum_crossing(&points),
            peak_at_zero,
            large_shift_residual: (!far.is_empty()).then(|| far.iter().sum::<f64>() / far.len() as f64),
            points,
            failures,
        });
    }
    Ok(ShiftSweep {
        scheme: plan.scheme,
        curves,
    })
}

/// Master key long enough to cut sections shifted by up to `max_shift`, on
/// the spacing of `medium`.
fn master_key(medium: &ZGrid, spec: CorrelationSpec, max_shift: f64, seed: u64) -> Result<KeyProfile> {
    let dz = medium.spacing();
    let alpha = medium.length + max_shift + spec.correlation_length;
    let cells = (alpha / dz).ceil() as usize;
    generate_key(&ZGrid::new(cells as f64 * dz, cells)?, spec, seed)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BruteForceReport {
    pub scheme: Scheme,
    pub n_keys: usize,
    pub success_threshold: f64,
    /// SE of the legitimate retrieval; the normalisation of the report.
    pub correct_efficiency: f64,
    /// Normalized SE of the correct key, the control trial.
    pub control_normalized: f64,
    pub control_success: bool,
    /// Normalized SE of every attack key, in draw order.
    pub normalized: Vec<f64>,
    pub max_normalized: Option<f64>,
    pub mean_normalized: Option<f64>,
    pub successes: usize,
    pub seeds: Vec<u64>,
}

/// Tries `n_keys` fresh random keys against one encrypted memory.
pub fn run_brute_force(plan: &ExperimentPlan, n_keys: usize) -> Result<BruteForceReport> {
    plan.validate()?;
    let enc_seed = derive_seed(plan.master_seed, &[0], 0);
    let seeds: Vec<u64> = (0..n_keys as u64)
        .map(|k| derive_seed(plan.master_seed, &[1], k))
        .collect();

    let (correct, normalized_raw): (f64, Vec<Result<f64>>) = match plan.scheme {
        Scheme::Lambda => {
            let p = plan.dem;
            let grid = p.grid()?;
            let spec = p.spec()?;
            let enc = generate_key(&grid.z, spec, enc_seed)?;
            let mut decs = vec![enc.inverted()];
            for &s in &seeds {
                decs.push(generate_key(&grid.z, spec, s)?);
            }
            let results = plan.in_pool(|| p.run_attempts(grid, &enc, &decs))??;
            let mut se = results
                .iter()
                .map(|res| healthy(res).and_then(|r| storage_efficiency(&r.input, &r.output, &r.time, p.t_i)));
            let correct = se.next().expect("control trial")?;
            (correct, se.collect())
        }
        Scheme::N => {
            let p = plan.eit;
            let grid = p.grid()?;
            let spec = p.spec()?;
            let enc = generate_key(&grid.z, spec, enc_seed)?;
            let se = |dec: &KeyProfile| -> Result<f64> {
                let res = p.run(grid, Some(&enc), Some(dec))?;
                healthy(&res)?;
                storage_efficiency(&res.input, &res.output, &res.time, p.retrieval_start())
            };
            let correct = se(&enc.inverted())?;
            let attacks = plan.in_pool(|| {
                seeds
                    .par_iter()
                    .map(|&s| se(&generate_key(&grid.z, spec, s)?))
                    .collect()
            })?;
            (correct, attacks)
        }
    };
    if !(correct > 0.0) {
        return Err(Error::invalid("plan", "the legitimate key retrieves nothing"));
    }
    let normalized: Vec<f64> = normalized_raw
        .into_iter()
        .map(|r| r.map(|v| v / correct))
        .collect::<Result<_>>()?;
    let successes = normalized.iter().filter(|&&v| v >= plan.success_threshold).count();
    Ok(BruteForceReport {
        scheme: plan.scheme,
        n_keys,
        success_threshold: plan.success_threshold,
        correct_efficiency: correct,
        control_normalized: 1.0,
        control_success: 1.0 >= plan.success_threshold,
        max_normalized: normalized.iter().copied().reduce(f64::max),
        mean_normalized: (!normalized.is_empty()).then(|| normalized.iter().sum::<f64>() / normalized.len() as f64),
        successes,
        normalized,
        seeds,
    })
}

/// One retrieval attempt of a key test.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KeyTrace {
    pub name: String,
    pub output: Vec<Complex64>,
    pub metrics: MetricsBundle,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KeyTestReport {
    pub scheme: Scheme,
    pub time: TimeGrid,
    pub input: Vec<Complex64>,
    /// Where output starts to count as retrieved.
    pub retrieval_start: f64,
    /// Attempt all normalized SEs refer to: key1 for the echo memory, the
    /// unencrypted baseline for EIT.
    pub reference: String,
    pub traces: Vec<KeyTrace>,
    /// `||key1 - baseline|| / ||baseline||` over the retrieval window (EIT).
    pub key1_baseline_l2: Option<f64>,
    pub seeds: Vec<u64>,
}

impl KeyTestReport {
    pub fn trace(&self, name: &str) -> Option<&KeyTrace> {
        self.traces.iter().find(|t| t.name == name)
    }
}

/// One of the named decryption attempts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Trial {
    /// No switching pulses at all; only meaningful for the N scheme.
    Baseline,
    /// The inverse of the encryption key.
    Key1,
    /// An independent disorder with the same statistics.
    Key2,
    /// A linear gradient with the RMS of the disorder.
    Key3,
    EncryptOnly,
    DecryptOnly,
}

impl Trial {
    pub const LAMBDA: [Trial; 3] = [Trial::Key1, Trial::Key2, Trial::Key3];
    pub const N: [Trial; 6] = [
        Trial::Baseline,
        Trial::Key1,
        Trial::Key2,
        Trial::Key3,
        Trial::EncryptOnly,
        Trial::DecryptOnly,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Trial::Baseline => "baseline",
            Trial::Key1 => "key1",
            Trial::Key2 => "key2",
            Trial::Key3 => "key3",
            Trial::EncryptOnly => "encrypt_only",
            Trial::DecryptOnly => "decrypt_only",
        }
    }

    pub fn allowed_for(self, scheme: Scheme) -> bool {
        match scheme {
            Scheme::Lambda => Trial::LAMBDA.contains(&self),
            Scheme::N => true,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrialKeys {
    pub encrypt: Option<KeyProfile>,
    pub decrypt: Option<KeyProfile>,
    pub seeds: Vec<u64>,
}

/// Keys of `trial`. The encryption key and the wrong key are drawn from seeds
/// derived from `master_seed`, so every trial of one seed shares them.
pub fn trial_keys(medium: &ZGrid, spec: CorrelationSpec, master_seed: u64, trial: Trial) -> Result<TrialKeys> {
    let enc_seed = derive_seed(master_seed, &[0], 0);
    let wrong_seed = derive_seed(master_seed, &[1], 0);
    let enc = || generate_key(medium, spec, enc_seed);
    let (encrypt, decrypt, seeds) = match trial {
        Trial::Baseline => (None, None, vec![]),
        Trial::Key1 => {
            let k = enc()?;
            let inv = k.inverted();
            (Some(k), Some(inv), vec![enc_seed])
        }
        Trial::Key2 => (
            Some(enc()?),
            Some(generate_key(medium, spec, wrong_seed)?),
            vec![enc_seed, wrong_seed],
        ),
        Trial::Key3 => (
            Some(enc()?),
            Some(gradient_key(medium, 12f64.sqrt() * spec.strength)?),
            vec![enc_seed],
        ),
        Trial::EncryptOnly => (Some(enc()?), None, vec![enc_seed]),
        Trial::DecryptOnly => (None, Some(enc()?.inverted()), vec![enc_seed]),
    };
    Ok(TrialKeys {
        encrypt,
        decrypt,
        seeds,
    })
}

/// Legitimate key (key1), an independent random key (key2) and a gradient
/// key (key3); for EIT also the unencrypted baseline and single-pulse runs.
///
/// The gradient slope `sqrt(12) D` gives the gradient key the same RMS as the
/// random keys.
pub fn run_keytest_suite(plan: &ExperimentPlan) -> Result<KeyTestReport> {
    plan.validate()?;
    let seeds = vec![
        derive_seed(plan.master_seed, &[0], 0),
        derive_seed(plan.master_seed, &[1], 0),
    ];
    match plan.scheme {
        Scheme::Lambda => {
            let p = plan.dem;
            let grid = p.grid()?;
            let spec = p.spec()?;
            let keys = Trial::LAMBDA
                .iter()
                .map(|&t| trial_keys(&grid.z, spec, plan.master_seed, t))
                .collect::<Result<Vec<_>>>()?;
            let enc = keys[0].encrypt.clone().expect("key1 encrypts");
            let decs: Vec<KeyProfile> = keys
                .into_iter()
                .map(|k| k.decrypt.expect("every Lambda trial decrypts"))
                .collect();
            let results = plan.in_pool(|| p.run_attempts(grid, &enc, &decs))??;
            for res in &results {
                healthy(res)?;
            }
            let reference = storage_efficiency(&results[0].input, &results[0].output, &results[0].time, p.t_i)?;
            let chi = crate::metrics::confidentiality(1.0, p.correlation_length, 1.0).ok();
            let traces = Trial::LAMBDA
                .iter()
                .zip(&results)
                .map(|(trial, res)| {
                    Ok(KeyTrace {
                        name: trial.name().to_string(),
                        output: res.output.clone(),
                        metrics: MetricsBundle::compute(res, p.t_i, Some(reference), chi)?,
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            Ok(KeyTestReport {
                scheme: Scheme::Lambda,
                time: results[0].time,
                input: results[0].input.clone(),
                retrieval_start: p.t_i,
                reference: Trial::Key1.name().into(),
                traces,
                key1_baseline_l2: None,
                seeds,
            })
        }
        Scheme::N => {
            let p = plan.eit;
            let grid = p.grid()?;
            let spec = p.spec()?;
            let keys = Trial::N
                .iter()
                .map(|&t| trial_keys(&grid.z, spec, plan.master_seed, t))
                .collect::<Result<Vec<_>>>()?;
            let results: Vec<Result<SimResult>> = plan.in_pool(|| {
                keys.par_iter()
                    .map(|k| p.run(grid, k.encrypt.as_ref(), k.decrypt.as_ref()))
                    .collect()
            })?;
            let results: Vec<SimResult> = results.into_iter().collect::<Result<_>>()?;
            for res in &results {
                healthy(res)?;
            }
            let start = p.retrieval_start();
            let reference = storage_efficiency(&results[0].input, &results[0].output, &results[0].time, start)?;
            let from = results[0].time.first_index_at_or_after(start);
            let l2 = relative_l2(&results[1].output[from..], &results[0].output[from..]);
            let traces = Trial::N
                .iter()
                .zip(&results)
                .map(|(trial, res)| {
                    Ok(KeyTrace {
                        name: trial.name().to_string(),
                        output: res.output.clone(),
                        metrics: MetricsBundle::compute(res, start, Some(reference), None)?,
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            Ok(KeyTestReport {
                scheme: Scheme::N,
                time: results[0].time,
                input: results[0].input.clone(),
                retrieval_start: start,
                reference: Trial::Baseline.name().into(),
                traces,
                key1_baseline_l2: Some(l2),
                seeds,
            })
        }
    }
}

/// Energy of `output` after `from` relative to the input energy; shared by
/// reports that only keep envelopes.
pub fn retrieved_fraction(input: &[Complex64], output: &[Complex64], grid: &TimeGrid, from: f64) -> f64 {
    let e_in = window_energy(input, grid, 0.0, grid.t_end());
    window_energy(output, grid, from, grid.t_end()) / e_in
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_dem() -> DemParams {
        DemParams {
            optical_depth: 60.0,
            strength: 300.0,
            correlation_length: 0.05,
            probe: ProbeSpec {
                peak_time: 0.04,
                duration: 5e-3,
                amplitude: 0.01,
            },
            t_i: 0.1,
            t_end: 0.2,
            ..DemParams::default()
        }
    }

    #[test]
    fn seeds_depend_on_every_coordinate() {
        let a = derive_seed(1, &[0, 0], 0);
        assert_eq!(a, derive_seed(1, &[0, 0], 0));
        assert_ne!(a, derive_seed(2, &[0, 0], 0));
        assert_ne!(a, derive_seed(1, &[0, 1], 0));
        assert_ne!(a, derive_seed(1, &[0, 0], 1));
        assert_ne!(derive_seed(1, &[0], 0), derive_seed(1, &[0, 0], 0));
    }

    #[test]
    fn medium_resolves_sigma_and_depth() {
        let r = Resolution::default();
        assert_eq!(r.medium(100.0, 0.01).unwrap().cells, 1000);
        assert_eq!(r.medium(600.0, 0.01).unwrap().cells, 2000);
        assert_eq!(r.medium(10.0, 0.1).unwrap().cells, 100);
    }

    #[test]
    fn single_cell_heatmap_equals_direct_run() {
        let plan = ExperimentPlan {
            dem: small_dem(),
            optical_depths: vec![60.0],
            strengths: vec![300.0],
            threads: Some(1),
            ..ExperimentPlan::default()
        };
        let table = run_heatmap(&plan).unwrap();
        let p = small_dem();
        let grid = p.grid().unwrap();
        let key = generate_key(&grid.z, p.spec().unwrap(), table.seeds[0]).unwrap();
        let direct = simulate_dem(&LambdaConfig {
            optical_depth: p.optical_depth,
            probe: p.probe,
            control: vec![crate::protocol::build_dem_schedule(&key, p.t_i, grid.t.t_end()).unwrap()],
            grid,
            decay: p.decay,
            snapshot_times: vec![],
        })
        .unwrap();
        let f = fidelity(&direct.input, &direct.output, &direct.time, p.t_i).unwrap();
        assert_eq!(table.cells[0].mean_fidelity, f.fidelity);
        assert_eq!(table.cells[0].completed, 1);
    }

    #[test]
    fn heatmap_is_thread_count_independent() {
        let base = ExperimentPlan {
            dem: small_dem(),
            optical_depths: vec![30.0, 60.0],
            strengths: vec![300.0],
            realizations: 2,
            ..ExperimentPlan::default()
        };
        let one = run_heatmap(&ExperimentPlan {
            threads: Some(1),
            ..base.clone()
        })
        .unwrap();
        let three = run_heatmap(&ExperimentPlan {
            threads: Some(3),
            ..base
        })
        .unwrap();
        assert_eq!(one, three);
    }

    #[test]
    fn branched_attempts_match_independent_runs() {
        let p = small_dem();
        let grid = p.grid().unwrap();
        let spec = p.spec().unwrap();
        let enc = generate_key(&grid.z, spec, 11).unwrap();
        let decs = vec![enc.inverted(), generate_key(&grid.z, spec, 12).unwrap()];
        let branched = p.run_attempts(grid, &enc, &decs).unwrap();
        for (dec, b) in decs.iter().zip(&branched) {
            let full = p.run(grid, &enc, dec).unwrap();
            assert_eq!(full.output, b.output);
            assert_eq!(full.diagnostics, b.diagnostics);
        }
    }

    #[test]
    fn brute_force_with_no_keys_is_empty() {
        let plan = ExperimentPlan {
            dem: small_dem(),
            threads: Some(1),
            ..ExperimentPlan::default()
        };
        let r = run_brute_force(&plan, 0).unwrap();
        assert!(r.normalized.is_empty());
        assert_eq!(r.successes, 0);
        assert!(r.max_normalized.is_none());
        assert!(r.control_success);
    }

    #[test]
    fn half_maximum_interpolates() {
        let pts = [(0.0, 1.0), (1.0, 0.8), (2.0, 0.2), (3.0, 0.6)].map(|(delta, mean)| ShiftPoint {
            delta,
            mean,
            std_error: 0.0,
        });
        assert!((half_maximum_crossing(&pts).unwrap() - 1.5).abs() < 1e-12);
        assert!(half_maximum_crossing(&pts[..2]).is_none());
    }

    #[test]
    fn rejects_empty_ensembles() {
        let plan = ExperimentPlan {
            realizations: 0,
            ..ExperimentPlan::default()
        };
        assert!(run_heatmap(&plan).is_err());
    }
}
