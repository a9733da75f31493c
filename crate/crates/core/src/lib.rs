//! Maxwell-Bloch simulation of optical memories whose control fields carry a
//! spatially disordered key.
//!
//! Two schemes are modelled. In the three-level echo memory ([`lambda`]) a
//! broadband probe is absorbed by atoms whose control Rabi frequency follows
//! a random profile; flipping the sign of that profile rephases the ensemble
//! and releases an echo. In the four-level EIT memory ([`nscheme`]) a
//! narrowband probe is stored as a spin wave and scrambled by disordered
//! switching pulses, which must be undone by the inverse key.
//!
//! Units: time in `tau = 1/Gamma`, rates and Rabi frequencies in `Gamma`,
//! lengths in the medium length `L`.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod disorder;
pub mod error;
pub mod grid;
pub mod harness;
pub mod io;
pub mod lambda;
pub mod metrics;
pub mod nscheme;
pub mod propagation;
pub mod protocol;

pub use config::{load_config, LoadedConfig, RunConfig};
pub use disorder::{generate_key, section_key, CorrelationSpec, KeyProfile};
pub use error::{Error, Result};
pub use grid::{SpaceTimeGrid, TimeGrid, ZGrid};
pub use harness::{DemParams, EitParams, ExperimentPlan, Trial};
pub use io::{write_results, RunManifest};
pub use lambda::{simulate_dem, LambdaConfig};
pub use metrics::{fidelity, storage_efficiency, MetricsBundle};
pub use nscheme::{simulate_eit_encrypted, NConfig};
pub use propagation::{Scheme, SimResult};
pub use protocol::{FieldSchedule, ProbeSpec};
