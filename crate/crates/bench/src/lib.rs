//! Fixtures shared by the benchmarks: scaled-down versions of the desk-scale
//! runs so one iteration takes milliseconds.

use dmem::harness::{default_eit_peak_time, DemParams, EitParams};
use dmem::protocol::ProbeSpec;
use dmem::{generate_key, LambdaConfig, NConfig, Result};

/// Echo memory with correlation length `sigma` at optical depth `xi`.
pub fn dem_config(xi: f64, sigma: f64) -> Result<LambdaConfig> {
    let p = DemParams {
        optical_depth: xi,
        strength: 300.0,
        correlation_length: sigma,
        probe: ProbeSpec {
            peak_time: 0.1,
            duration: 0.01,
            amplitude: 0.01,
        },
        t_i: 0.15,
        t_end: 0.3,
        ..DemParams::default()
    };
    let grid = p.grid()?;
    let key = generate_key(&grid.z, p.spec()?, 1)?;
    p.config(grid, &key, &key.inverted())
}

/// EIT memory with encryption and matched decryption.
pub fn eit_config(xi: f64, sigma: f64) -> Result<NConfig> {
    let d = EitParams::default();
    let p = EitParams {
        optical_depth: xi,
        correlation_length: sigma,
        probe: ProbeSpec {
            peak_time: default_eit_peak_time(xi, &d.timing, d.probe.duration),
            ..d.probe
        },
        ..d
    };
    let grid = p.grid()?;
    let key = generate_key(&grid.z, p.spec()?, 1)?;
    p.config(grid, Some(&key), Some(&key.inverted()))
}
