use dmem::harness::DemParams;
use dmem::metrics::{fidelity, window_energy};
use dmem::protocol::ProbeSpec;
use dmem::{generate_key, simulate_dem, LambdaConfig};

fn small(amplitude: f64) -> (DemParams, LambdaConfig) {
    let p = DemParams {
        optical_depth: 40.0,
        strength: 300.0,
        correlation_length: 0.05,
        probe: ProbeSpec {
            peak_time: 0.1,
            duration: 0.01,
            amplitude,
        },
        t_i: 0.15,
        t_end: 0.3,
        ..DemParams::default()
    };
    let grid = p.grid().unwrap();
    let key = generate_key(&grid.z, p.spec().unwrap(), 5).unwrap();
    let cfg = p.config(grid, &key, &key.inverted()).unwrap();
    (p, cfg)
}

#[test]
fn medium_never_emits_more_than_it_received() {
    let (_, cfg) = small(0.01);
    let res = simulate_dem(&cfg).unwrap();
    let t_end = res.time.t_end();
    let input = window_energy(&res.input, &res.time, 0.0, t_end);
    let output = window_energy(&res.output, &res.time, 0.0, t_end);
    assert!(output > 0.0);
    assert!(output <= input, "output {output} exceeds input {input}");
}

#[test]
fn weak_probe_response_is_linear() {
    let (p, cfg) = small(0.01);
    let base = simulate_dem(&cfg).unwrap();
    let (_, doubled_cfg) = small(0.02);
    let doubled = simulate_dem(&doubled_cfg).unwrap();
    let peak = base.output.iter().map(|c| c.norm()).fold(0.0, f64::max);
    let worst = base
        .output
        .iter()
        .zip(&doubled.output)
        .map(|(a, b)| (b - 2.0 * a).norm())
        .fold(0.0, f64::max);
    assert!(worst < 0.01 * 2.0 * peak, "deviation {worst:e} vs peak {peak:e}");
    let f1 = fidelity(&base.input, &base.output, &base.time, p.t_i).unwrap();
    let f2 = fidelity(&doubled.input, &doubled.output, &doubled.time, p.t_i).unwrap();
    assert!((f1.fidelity - f2.fidelity).abs() < 1e-3);
}

#[test]
fn bare_transparent_medium_conserves_flux() {
    // No atoms: the output is the input exactly.
    let (_, mut cfg) = small(0.01);
    cfg.optical_depth = 0.0;
    let res = simulate_dem(&cfg).unwrap();
    let t_end = res.time.t_end();
    let input = window_energy(&res.input, &res.time, 0.0, t_end);
    let output = window_energy(&res.output, &res.time, 0.0, t_end);
    assert!((output - input).abs() <= 1e-6 * input);
}
