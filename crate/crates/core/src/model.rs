//! Physical model of the motor: parameters, the two-particle site basis,
//! the driven tight-binding Hamiltonian and the vector-potential protocols.
//!
//! Units: `ħ = J_c = d = 1` is the intended convention, so energies are in
//! units of the carrier hopping, times in `ħ/J_c` and velocities in
//! `v₀ = J_c d/ħ`. `j_c` is still a field so that other energy units can be
//! used, but every preset keeps it at one.
//!
//! Basis ordering is fixed once: the flat index of `|l_c⟩ ⊗ |l_s⟩` is
//! `(l_c − 1)·L + (l_s − 1)` with sites counted `1..=L` externally and
//! `0..L` internally.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::{cis, lit, to_f64, wrap_two_pi, Real, C};
use crate::sparse::SparseMatrix;

/// All physical constants of the driven two-atom ring.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelParams<T> {
    /// Number of ring sites.
    pub l: usize,
    /// Carrier hopping.
    pub j_c: T,
    /// Starter hopping.
    pub j_s: T,
    /// On-site carrier/starter interaction.
    pub w: T,
    pub a1: T,
    pub a2: T,
    /// Drive angular frequency.
    pub omega: T,
    /// Phase of the second harmonic.
    pub theta: T,
    /// Bloch bias frequency; zero means no load.
    pub omega_b: T,
    /// Switch-on time of the vector potential.
    pub t0: T,
}

impl<T: Real> ModelParams<T> {
    /// Unit hoppings, no interaction, no drive, `ω = 0.1`.
    pub fn new(l: usize) -> Self {
        Self {
            l,
            j_c: T::one(),
            j_s: T::one(),
            w: T::zero(),
            a1: T::zero(),
            a2: T::zero(),
            omega: lit(0.1),
            theta: T::zero(),
            omega_b: T::zero(),
            t0: T::zero(),
        }
    }

    /// The harmonic-mixing motor used for the idle-running analysis:
    /// `ħω = 0.1 J_c`, `A₁ = 0.5`, `A₂ = 0.25`, `W = 0.2 J_c`, `J_s = J_c`.
    pub fn harmonic_mixing_motor(l: usize, theta: T) -> Self {
        Self {
            w: lit(0.2),
            a1: lit(0.5),
            a2: lit(0.25),
            theta,
            ..Self::new(l)
        }
    }

    /// Slow drive with weak interaction, where sharp velocity resonances
    /// appear: `ħω = 0.05 J_c`, `A₁ = 1`, `A₂ = 0.5`, `W = 0.01 J_c`.
    pub fn resonance_motor(l: usize, theta: T) -> Self {
        Self {
            w: lit(0.01),
            a1: T::one(),
            a2: lit(0.5),
            omega: lit(0.05),
            theta,
            ..Self::new(l)
        }
    }

    pub fn with_theta(mut self, theta: T) -> Self {
        self.theta = theta;
        self
    }

    pub fn with_interaction(mut self, w: T) -> Self {
        self.w = w;
        self
    }

    pub fn with_bias(mut self, omega_b: T) -> Self {
        self.omega_b = omega_b;
        self
    }

    pub fn with_sites(mut self, l: usize) -> Self {
        self.l = l;
        self
    }

    pub fn with_t0(mut self, t0: T) -> Self {
        self.t0 = t0;
        self
    }

    pub fn dim(&self) -> usize {
        self.l * self.l
    }

    /// Drive period `T = 2π/ω`.
    pub fn period(&self) -> T {
        T::two_pi() / self.omega
    }

    pub fn validate(&self) -> Result<()> {
        if self.l < 2 {
            return Err(Error::InvalidParameter {
                name: "l",
                reason: format!("ring needs at least 2 sites, got {}", self.l),
            });
        }
        let fields: [(&'static str, T); 9] = [
            ("j_c", self.j_c),
            ("j_s", self.j_s),
            ("w", self.w),
            ("a1", self.a1),
            ("a2", self.a2),
            ("omega", self.omega),
            ("theta", self.theta),
            ("omega_b", self.omega_b),
            ("t0", self.t0),
        ];
        for (name, value) in fields {
            if !value.is_finite() {
                return Err(Error::InvalidParameter {
                    name,
                    reason: format!("must be finite, got {}", to_f64(value)),
                });
            }
        }
        if self.omega <= T::zero() {
            return Err(Error::InvalidParameter {
                name: "omega",
                reason: format!("must be positive, got {}", to_f64(self.omega)),
            });
        }
        Ok(())
    }
}

/// A site pair `|l_c⟩ ⊗ |l_s⟩` of the product basis (sites are 1-based).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct BasisIndex {
    pub l_c: usize,
    pub l_s: usize,
    pub flat: usize,
}

impl BasisIndex {
    pub fn from_sites(l: usize, l_c: usize, l_s: usize) -> Result<Self> {
        for site in [l_c, l_s] {
            if site == 0 || site > l {
                return Err(Error::SiteOutOfRange { site, l });
            }
        }
        Ok(Self { l_c, l_s, flat: (l_c - 1) * l + (l_s - 1) })
    }

    pub fn from_flat(l: usize, flat: usize) -> Result<Self> {
        if flat >= l * l {
            return Err(Error::DimensionMismatch { expected: l * l, found: flat });
        }
        Ok(Self { l_c: flat / l + 1, l_s: flat % l + 1, flat })
    }

    /// The site one step forward on the ring, with `L + 1 ≡ 1`.
    pub fn wrap_next(l: usize, site: usize) -> usize {
        site % l + 1
    }
}

/// Zero-based flat index.
#[inline]
pub(crate) fn flat0(l: usize, carrier: usize, starter: usize) -> usize {
    carrier * l + starter
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DriveKind {
    /// `A₁ sin ωt + A₂ sin(2ωt + Θ)`.
    UnbiasedHarmonicMixing,
    /// Harmonic mixing plus the load ramp `ω_B t`.
    Biased,
    /// `A ≡ 0` (the bias ramp is ignored as well).
    StaticZero,
}

/// The vector potential `Ã(t; t₀) = χ(t − t₀)·[A(t) + ω_B t]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DriveProtocol<T> {
    pub kind: DriveKind,
    pub a1: T,
    pub a2: T,
    pub omega: T,
    pub theta: T,
    pub omega_b: T,
    pub t0: T,
}

impl<T: Real> DriveProtocol<T> {
    pub fn new(kind: DriveKind, p: &ModelParams<T>) -> Self {
        Self { kind, a1: p.a1, a2: p.a2, omega: p.omega, theta: p.theta, omega_b: p.omega_b, t0: p.t0 }
    }

    /// Biased when the parameters carry a load, harmonic mixing otherwise.
    pub fn from_params(p: &ModelParams<T>) -> Self {
        let kind = if p.omega_b != T::zero() { DriveKind::Biased } else { DriveKind::UnbiasedHarmonicMixing };
        Self::new(kind, p)
    }

    pub fn harmonic_mixing(p: &ModelParams<T>) -> Self {
        Self::new(DriveKind::UnbiasedHarmonicMixing, p)
    }

    pub fn static_zero(p: &ModelParams<T>) -> Self {
        Self::new(DriveKind::StaticZero, p)
    }

    pub fn period(&self) -> T {
        T::two_pi() / self.omega
    }

    /// The drive continued over the whole time axis, ignoring the switch-on.
    pub fn phase(&self, t: T) -> T {
        let two = T::one() + T::one();
        let ac = self.a1 * (self.omega * t).sin() + self.a2 * (two * self.omega * t + self.theta).sin();
        match self.kind {
            DriveKind::StaticZero => T::zero(),
            DriveKind::UnbiasedHarmonicMixing => ac,
            DriveKind::Biased => ac + self.omega_b * t,
        }
    }

    /// `Ã(t; t₀)`: exactly zero before the switch-on time.
    pub fn value(&self, t: T) -> T {
        if t < self.t0 {
            T::zero()
        } else {
            self.phase(t)
        }
    }

    /// The phase reduced mod 2π, which is all the Hamiltonian depends on.
    pub fn reduced_phase(&self, t: T) -> T {
        wrap_two_pi(self.phase(t))
    }

    pub fn with_t0(mut self, t0: T) -> Self {
        self.t0 = t0;
        self
    }
}

/// Free-function form of [`DriveProtocol::value`].
pub fn drive_value<T: Real>(d: &DriveProtocol<T>, t: T) -> T {
    d.value(t)
}

/// A two-particle wave function in the site basis.
#[derive(Debug, Clone, PartialEq)]
pub struct StateVector<T: Real> {
    pub amplitudes: DVector<C<T>>,
    pub time: T,
}

impl<T: Real> StateVector<T> {
    pub fn new(amplitudes: DVector<C<T>>, time: T) -> Self {
        Self { amplitudes, time }
    }

    pub fn norm(&self) -> T {
        self.amplitudes.iter().fold(T::zero(), |acc, z| acc + z.norm_sqr()).sqrt()
    }

    pub fn dim(&self) -> usize {
        self.amplitudes.len()
    }

    /// Errors with [`Error::NotNormalized`] unless `|‖ψ‖ − 1| ≤ tol`.
    pub fn check_normalized(&self, tol: T) -> Result<()> {
        let n = self.norm();
        if (n - T::one()).abs() > tol || !n.is_finite() {
            return Err(Error::NotNormalized { norm: to_f64(n) });
        }
        Ok(())
    }
}

/// Enumerates the nearest-neighbour hops on the ring as
/// `(from, to, displacement)` with zero-based sites, forward and backward.
fn hops(l: usize) -> impl Iterator<Item = (usize, usize, i8)> {
    (0..l).flat_map(move |site| [(site, (site + 1) % l, 1i8), ((site + 1) % l, site, -1i8)])
}

/// `H_tot(A) = H_c(A) + H_s + H_int` in the flat site basis.
///
/// Each forward carrier hop `|l_c+1⟩⟨l_c|` carries `e^{iA}`; the starter
/// hops are real; `W` sits on the `l_c = l_s` diagonal.
pub fn build_hamiltonian<T: Real>(p: &ModelParams<T>, a: T) -> Result<SparseMatrix<T>> {
    p.validate()?;
    if !a.is_finite() {
        return Err(Error::InvalidParameter { name: "A", reason: "vector potential must be finite".into() });
    }
    let l = p.l;
    let half = lit::<T>(0.5);
    let peierls = cis(wrap_two_pi(a));
    let forward_c = peierls * (-half * p.j_c);
    let backward_c = peierls.conj() * (-half * p.j_c);
    let hop_s = C::new(-half * p.j_s, T::zero());

    let mut triplets = Vec::with_capacity(5 * l * l);
    for spectator in 0..l {
        for (from, to, dir) in hops(l) {
            let amp_c = if dir > 0 { forward_c } else { backward_c };
            triplets.push((flat0(l, to, spectator), flat0(l, from, spectator), amp_c));
            triplets.push((flat0(l, spectator, to), flat0(l, spectator, from), hop_s));
        }
    }
    if p.w != T::zero() {
        for site in 0..l {
            let i = flat0(l, site, site);
            triplets.push((i, i, C::new(p.w, T::zero())));
        }
    }
    Ok(SparseMatrix::from_triplets(l * l, triplets))
}

/// Carrier velocity operator `(i/ħ)[H_tot(A), x̂_c]` in units of `v₀`.
///
/// Assembled hop by hop: the commutator turns each hop term `h |to⟩⟨from|`
/// into `−i·h·δ` with `δ = ±1` the hop displacement, which stays well defined
/// across the ring's seam.
pub fn carrier_velocity_operator<T: Real>(p: &ModelParams<T>, a: T) -> Result<SparseMatrix<T>> {
    p.validate()?;
    let l = p.l;
    let half = lit::<T>(0.5);
    let peierls = cis(wrap_two_pi(a));
    let i = C::new(T::zero(), T::one());
    let mut triplets = Vec::with_capacity(2 * l * l);
    for spectator in 0..l {
        for (from, to, dir) in hops(l) {
            let amp = if dir > 0 { peierls * (-half) } else { peierls.conj() * (-half) };
            let delta = if dir > 0 { T::one() } else { -T::one() };
            triplets.push((flat0(l, to, spectator), flat0(l, from, spectator), -(i * amp) * delta));
        }
    }
    Ok(SparseMatrix::from_triplets(l * l, triplets))
}

/// Starter velocity operator `(i/ħ)[H_s, x̂_s]` in units of `J_s d/ħ`.
pub fn starter_velocity_operator<T: Real>(p: &ModelParams<T>) -> Result<SparseMatrix<T>> {
    p.validate()?;
    let l = p.l;
    let i = C::new(T::zero(), T::one());
    let amp = C::new(-lit::<T>(0.5), T::zero());
    let mut triplets = Vec::with_capacity(2 * l * l);
    for spectator in 0..l {
        for (from, to, dir) in hops(l) {
            let delta = if dir > 0 { T::one() } else { -T::one() };
            triplets.push((flat0(l, spectator, to), flat0(l, spectator, from), -(i * amp) * delta));
        }
    }
    Ok(SparseMatrix::from_triplets(l * l, triplets))
}

/// Simultaneous one-site shift of both particles, `|l_c, l_s⟩ → |l_c+1, l_s+1⟩`.
pub fn translation_operator<T: Real>(l: usize) -> SparseMatrix<T> {
    let one = C::new(T::one(), T::zero());
    let triplets = (0..l)
        .flat_map(|c| (0..l).map(move |s| (flat0(l, (c + 1) % l, (s + 1) % l), flat0(l, c, s), one)))
        .collect();
    SparseMatrix::from_triplets(l * l, triplets)
}

/// `|ψ(t₀)⟩ = L^{−1/2} |l_c⟩ ⊗ Σ_{l_s} |l_s⟩`: localized carrier, uniformly
/// smeared starter.
pub fn initial_state<T: Real>(p: &ModelParams<T>, l_c: usize) -> Result<StateVector<T>> {
    p.validate()?;
    if l_c == 0 || l_c > p.l {
        return Err(Error::SiteOutOfRange { site: l_c, l: p.l });
    }
    let amp = T::one() / crate::scalar::count::<T>(p.l).sqrt();
    let mut v = DVector::zeros(p.dim());
    for s in 0..p.l {
        v[flat0(p.l, l_c - 1, s)] = C::new(amp, T::zero());
    }
    Ok(StateVector::new(v, p.t0))
}

/// Reduced Planck constant in J·s.
pub const HBAR: f64 = 1.054_571_817e-34;

/// Laboratory scales for a given carrier mass and lattice constant.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PhysicalScale {
    /// Recoil energy `ħ²π²/(2Md²)` in joules.
    pub e0: f64,
    /// Largest tight-binding hopping, `0.13·E₀`, in joules.
    pub j_max: f64,
    /// Drive angular frequency with `ħω = 0.1·J_max`, in rad/s.
    pub omega_bound_rad_s: f64,
    /// The same bound as an ordinary frequency `ω/2π`, in Hz.
    pub omega_bound: f64,
}

pub fn physical_scale(atom_mass: f64, lattice_const: f64) -> Result<PhysicalScale> {
    if !(atom_mass > 0.0 && atom_mass.is_finite()) {
        return Err(Error::InvalidParameter { name: "atom_mass", reason: format!("must be positive, got {atom_mass}") });
    }
    if !(lattice_const > 0.0 && lattice_const.is_finite()) {
        return Err(Error::InvalidParameter {
            name: "lattice_const",
            reason: format!("must be positive, got {lattice_const}"),
        });
    }
    let e0 = HBAR * HBAR * std::f64::consts::PI.powi(2) / (2.0 * atom_mass * lattice_const * lattice_const);
    let j_max = 0.13 * e0;
    let omega = 0.1 * j_max / HBAR;
    Ok(PhysicalScale { e0, j_max, omega_bound_rad_s: omega, omega_bound: omega / std::f64::consts::TAU })
}

/// Mass of a ⁶Li atom in kg.
pub const LITHIUM6_MASS: f64 = 9.988e-27;
