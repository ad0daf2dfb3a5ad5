//! Exact numerics for a two-atom quantum motor on a driven ring lattice.
//!
//! A charged carrier and a neutral starter hop on an `L`-site ring and
//! interact on site. A biharmonic vector potential threads the ring; its
//! relative phase Θ controls a directed carrier current. The crate builds the
//! Hamiltonian, propagates states, decomposes the one-period propagator into
//! Floquet states per total-quasimomentum block, and evaluates the asymptotic
//! motor velocity, its switch-on-time dispersion and the load characteristic.
//!
//! Everything is generic over [`Real`] (`f32` or `f64`); the aliases below fix
//! `f64`.

pub mod blocks;
pub mod cli;
pub mod dynamics;
pub mod error;
pub mod floquet;
pub mod load;
pub mod model;
pub mod observables;
pub mod scalar;
pub mod scan;
pub mod sparse;

pub use dynamics::{monodromy, propagate, step, Backend, Integrator, Monodromy, PeriodSweep, Propagation, Propagator, Scheme};
pub use error::{Error, Result};
pub use floquet::{
    detect_avoided_crossings, floquet_decompose, floquet_mean_velocity, match_parity_partners, refine_crossing, Crossing,
    CrossingKind, CrossingOptions, CrossingReport, FloquetSpectrum, ParityPairing,
};
pub use load::{load_characteristic, load_spectrum, Commensurate, LoadPoint};
pub use model::{
    build_hamiltonian, carrier_velocity_operator, initial_state, physical_scale, starter_velocity_operator,
    translation_operator, BasisIndex, DriveKind, DriveProtocol, ModelParams, PhysicalScale, StateVector,
};
pub use observables::{
    carrier_velocity, carrier_velocity_commutator, dc_velocity_direct, dc_velocity_floquet, starter_velocity,
    normalized_state, t0_averaged_velocity, t0_dispersion, DcEstimate, DispersionMode, MomentumDistribution, T0Ensemble, VelocityTrace,
};
pub use scalar::{Real, C};

pub type Params = ModelParams<f64>;
pub type Drive = DriveProtocol<f64>;
pub type State = StateVector<f64>;
pub type Spectrum = FloquetSpectrum<f64>;
pub type Propagator64 = Propagator<f64>;
pub type Monodromy64 = Monodromy<f64>;
pub type Trace = VelocityTrace<f64>;
pub type Complex64 = C<f64>;
