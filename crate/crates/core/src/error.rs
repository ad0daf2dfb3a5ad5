use thiserror::Error;

/// Errors raised by the numerical core.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("site {site} outside the ring 1..={l}")]
    SiteOutOfRange { site: usize, l: usize },

    #[error("state is not normalized (norm = {norm})")]
    NotNormalized { norm: f64 },

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("matrix exponential action did not converge (residual {residual:.3e} after {dim} Krylov vectors)")]
    ExponentialDiverged { residual: f64, dim: usize },

    #[error("norm drift {drift:.3e} at t = {time} exceeds tolerance")]
    NormDrift { drift: f64, time: f64 },

    #[error("propagator is not unitary (defect {defect:.3e})")]
    NotUnitary { defect: f64 },

    #[error("quasimomentum blocks leak into each other (max off-block element {leakage:.3e})")]
    BlockLeakage { leakage: f64 },

    #[error("Floquet expansion misses probability {deficit:.3e}")]
    ExpansionDeficit { deficit: f64 },

    #[error("velocity trace spans {periods:.1} periods, at least {required} required")]
    WindowTooShort { periods: f64, required: f64 },

    #[error("bias omega_B = {omega_b} is not omega * {q}/{r} (omega = {omega})")]
    Incommensurate { omega_b: f64, omega: f64, q: i64, r: u64 },

    #[error("no parity pairing found (worst overlap {overlap:.3e}, velocity residual {residual:.3e})")]
    PairingFailed { overlap: f64, residual: f64 },

    #[error("spectra are incompatible: {0}")]
    IncompatibleSpectra(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
