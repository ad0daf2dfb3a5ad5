//! Transport observables: quasimomentum distributions, instantaneous
//! velocities, dc averages from direct propagation and from the Floquet
//! expansion, and the switch-on-time ensemble.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::blocks::{Blocks, MomentumBasis, MomentumGrid};
use crate::dynamics::{BlockGenerator, Integrator, PeriodSweep, Propagator};
use crate::error::{Error, Result};
use crate::floquet::{floquet_decompose, FloquetSpectrum};
use crate::model::{carrier_velocity_operator, starter_velocity_operator, DriveProtocol, ModelParams, StateVector};
use crate::scalar::{count, lit, to_f64, Real, C};

/// Normalization tolerance for states handed to the observables.
const NORM_TOL: f64 = 1e-8;

/// Quasimomentum occupation of one particle, the other one traced out.
#[derive(Debug, Clone, PartialEq)]
pub struct MomentumDistribution<T> {
    /// `κ_l = 2πl/L`, `l = 0..L`.
    pub kappa_grid: Vec<T>,
    pub rho: Vec<T>,
    pub time: T,
}

impl<T: Real> MomentumDistribution<T> {
    pub fn total(&self) -> T {
        self.rho.iter().fold(T::zero(), |a, &r| a + r)
    }
}

#[derive(Clone, Copy)]
enum Particle {
    Carrier,
    Starter,
}

fn distribution<T: Real>(state: &StateVector<T>, l: usize, who: Particle) -> Result<MomentumDistribution<T>> {
    if state.dim() != l * l {
        return Err(Error::DimensionMismatch { expected: l * l, found: state.dim() });
    }
    state.check_normalized(lit(NORM_TOL))?;
    let grid = MomentumGrid::<T>::new(l);
    let inv_l = T::one() / count::<T>(l);
    let psi = &state.amplitudes;
    let mut rho = vec![T::zero(); l];
    for (m, slot) in rho.iter_mut().enumerate() {
        for spectator in 0..l {
            let mut acc = C::new(T::zero(), T::zero());
            for x in 0..l {
                let flat = match who {
                    Particle::Carrier => x * l + spectator,
                    Particle::Starter => spectator * l + x,
                };
                acc += psi[flat] * grid.twiddle(m * x);
            }
            *slot += acc.norm_sqr() * inv_l;
        }
    }
    let kappa_grid = (0..l).map(|m| crate::blocks::kappa(l, m)).collect();
    Ok(MomentumDistribution { kappa_grid, rho, time: state.time })
}

/// `ρ_κ` of the carrier.
pub fn carrier_distribution<T: Real>(state: &StateVector<T>, l: usize) -> Result<MomentumDistribution<T>> {
    distribution(state, l, Particle::Carrier)
}

/// `ρ_κ` of the starter.
pub fn starter_distribution<T: Real>(state: &StateVector<T>, l: usize) -> Result<MomentumDistribution<T>> {
    distribution(state, l, Particle::Starter)
}

/// `Σ_κ ρ_κ sin(κ − A)` in units of `v₀ = J_c d/ħ`.
pub fn carrier_velocity<T: Real>(state: &StateVector<T>, a: T, p: &ModelParams<T>) -> Result<T> {
    let d = carrier_distribution(state, p.l)?;
    Ok(d.kappa_grid.iter().zip(&d.rho).fold(T::zero(), |acc, (&k, &r)| acc + r * (k - a).sin()))
}

/// `⟨ψ| (i/ħ)[H(A), x̂_c] |ψ⟩ / v₀`, the commutator route.
pub fn carrier_velocity_commutator<T: Real>(state: &StateVector<T>, a: T, p: &ModelParams<T>) -> Result<T> {
    state.check_normalized(lit(NORM_TOL))?;
    Ok(carrier_velocity_operator(p, a)?.expectation(&state.amplitudes).re)
}

/// `Σ_κ ρ_κ sin κ` of the starter in units of `J_s d/ħ`.
pub fn starter_velocity<T: Real>(state: &StateVector<T>, p: &ModelParams<T>) -> Result<T> {
    let d = starter_distribution(state, p.l)?;
    Ok(d.kappa_grid.iter().zip(&d.rho).fold(T::zero(), |acc, (&k, &r)| acc + r * k.sin()))
}

/// Commutator route for the starter velocity.
pub fn starter_velocity_commutator<T: Real>(state: &StateVector<T>, p: &ModelParams<T>) -> Result<T> {
    state.check_normalized(lit(NORM_TOL))?;
    Ok(starter_velocity_operator(p)?.expectation(&state.amplitudes).re)
}

/// Carrier velocity of column `c` of a block.
pub(crate) fn column_velocity<T: Real>(gen: &BlockGenerator<T>, block: &DMatrix<C<T>>, c: usize, a: T) -> T {
    let mut v = vec![T::zero(); block.nrows()];
    gen.carrier_velocity(a, &mut v);
    block.column(c).iter().zip(&v).fold(T::zero(), |acc, (z, &vj)| acc + z.norm_sqr() * vj)
}

/// `(carrier, starter)` velocity of a one-column block state.
pub(crate) fn block_velocities<T: Real>(gen: &BlockGenerator<T>, blocks: &Blocks<T>, a: T) -> (T, T) {
    let l = blocks.l;
    let mut vc = vec![T::zero(); l];
    let mut vs = vec![T::zero(); l];
    gen.carrier_velocity(a, &mut vc);
    let (mut c, mut s) = (T::zero(), T::zero());
    for (k, block) in blocks.data.iter().enumerate() {
        gen.starter_velocity(k, &mut vs);
        for j in 0..l {
            let w = block[(j, 0)].norm_sqr();
            c += w * vc[j];
            s += w * vs[j];
        }
    }
    (c, s)
}

/// Sampled velocities of one propagation.
#[derive(Debug, Clone, PartialEq)]
pub struct VelocityTrace<T> {
    pub times: Vec<T>,
    pub v_c: Vec<T>,
    pub v_s: Vec<T>,
    /// Running time average of `v_c` from the first sample (trapezoid rule).
    pub running_avg: Vec<T>,
    pub t0: T,
    pub period: T,
}

impl<T: Real> VelocityTrace<T> {
    pub fn from_samples(times: Vec<T>, v_c: Vec<T>, v_s: Vec<T>, t0: T, period: T) -> Self {
        let mut running_avg = Vec::with_capacity(times.len());
        let mut integral = T::zero();
        for i in 0..times.len() {
            if i == 0 {
                running_avg.push(v_c[0]);
                continue;
            }
            integral += (times[i] - times[i - 1]) * (v_c[i] + v_c[i - 1]) * lit(0.5);
            running_avg.push(integral / (times[i] - times[0]));
        }
        Self { times, v_c, v_s, running_avg, t0, period }
    }

    /// Window length in drive periods.
    pub fn periods(&self) -> T {
        match (self.times.first(), self.times.last()) {
            (Some(&a), Some(&b)) => (b - a) / self.period,
            _ => T::zero(),
        }
    }

    /// Peak-to-peak spread of the running average over the trailing `span`.
    pub fn band_over(&self, span: T) -> T {
        let Some(&end) = self.times.last() else { return T::zero() };
        spread(self.times.iter().zip(&self.running_avg).filter(|(&t, _)| t >= end - span).map(|(_, &v)| v))
    }
}

fn spread<T: Real>(values: impl Iterator<Item = T>) -> T {
    let (lo, hi) = values.fold((None, None), |(lo, hi): (Option<T>, Option<T>), v| {
        (Some(lo.map_or(v, |x| x.min(v))), Some(hi.map_or(v, |x| x.max(v))))
    });
    match (lo, hi) {
        (Some(lo), Some(hi)) => hi - lo,
        _ => T::zero(),
    }
}

/// A finite-time dc estimate with its convergence diagnostic.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DcEstimate<T> {
    pub value: T,
    /// Peak-to-peak spread of the running average over the last tenth of the window.
    pub band: T,
    pub periods: T,
}

/// Minimum window accepted by [`dc_velocity_direct`], in periods.
pub const MIN_DC_PERIODS: f64 = 100.0;

/// The running average at the end of the trace.
pub fn dc_velocity_direct<T: Real>(trace: &VelocityTrace<T>) -> Result<DcEstimate<T>> {
    let periods = trace.periods();
    if periods < lit(MIN_DC_PERIODS - 1e-9) {
        return Err(Error::WindowTooShort { periods: to_f64(periods), required: MIN_DC_PERIODS });
    }
    let span = (*trace.times.last().unwrap() - trace.times[0]) * lit(0.1);
    Ok(DcEstimate { value: *trace.running_avg.last().unwrap(), band: trace.band_over(span), periods })
}

/// Expansion coefficients `|c_n|²` of a state in the Floquet basis.
pub fn floquet_weights<T: Real>(spectrum: &FloquetSpectrum<T>, psi0: &StateVector<T>) -> Result<Vec<T>> {
    psi0.check_normalized(lit(NORM_TOL))?;
    let blocks = MomentumBasis::<T>::new(spectrum.l).to_blocks(&psi0.amplitudes)?;
    weights_of_blocks(spectrum, &blocks)
}

fn weights_of_blocks<T: Real>(spectrum: &FloquetSpectrum<T>, blocks: &Blocks<T>) -> Result<Vec<T>> {
    let mut w = Vec::with_capacity(spectrum.len());
    for (q, b) in spectrum.states.data.iter().zip(&blocks.data) {
        let c = q.adjoint() * b;
        w.extend(c.iter().map(|z| z.norm_sqr()));
    }
    let deficit = (w.iter().fold(T::zero(), |a, &x| a + x) - T::one()).abs();
    if deficit > lit(1e-8) {
        return Err(Error::ExpansionDeficit { deficit: to_f64(deficit) });
    }
    Ok(w)
}

fn contract<T: Real>(weights: &[T], v: &[T]) -> Result<T> {
    if v.len() != weights.len() {
        return Err(Error::IncompatibleSpectra("spectrum carries no mean velocities".into()));
    }
    Ok(weights.iter().zip(v).fold(T::zero(), |a, (&w, &x)| a + w * x))
}

/// `Σₙ v̄ₙ |cₙ(t₀)|²`: the exact asymptotic dc carrier velocity.
pub fn dc_velocity_floquet<T: Real>(spectrum: &FloquetSpectrum<T>, psi0: &StateVector<T>) -> Result<T> {
    contract(&floquet_weights(spectrum, psi0)?, &spectrum.mean_velocities)
}

/// Asymptotic dc starter velocity, same contraction with the starter averages.
pub fn dc_starter_velocity_floquet<T: Real>(spectrum: &FloquetSpectrum<T>, psi0: &StateVector<T>) -> Result<T> {
    contract(&floquet_weights(spectrum, psi0)?, &spectrum.starter_velocities)
}

/// Velocity averages of one switch-on time.
#[derive(Debug, Clone, PartialEq)]
pub struct EnsembleMember<T> {
    pub t0: T,
    /// Asymptotic carrier velocity from the Floquet expansion.
    pub floquet: T,
    pub floquet_starter: T,
    /// Running carrier average at `t₀ + nT`, `n = 1..=horizon`.
    pub running: Vec<T>,
    pub running_starter: Vec<T>,
    /// Running carrier average at every quadrature node of the last
    /// periods of the horizon; empty unless the sweep kept its nodes.
    pub tail: Vec<T>,
}

impl<T: Real> EnsembleMember<T> {
    /// Running average at the end of the horizon.
    pub fn direct(&self) -> Option<T> {
        self.running.last().copied()
    }

    /// Peak-to-peak spread of the running average over the last `periods`.
    pub fn band(&self, periods: usize) -> T {
        let n = self.running.len();
        spread(self.running[n.saturating_sub(periods)..].iter().copied())
    }
}

/// Switch-on-time ensemble from one period sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct T0Ensemble<T> {
    pub members: Vec<EnsembleMember<T>>,
    /// Propagation period (`T`, or `r·T` under load).
    pub period: T,
}

impl<T: Real> T0Ensemble<T> {
    fn mean_of(&self, f: impl Fn(&EnsembleMember<T>) -> T) -> T {
        self.members.iter().map(f).fold(T::zero(), |a, x| a + x) / count::<T>(self.members.len())
    }

    fn dispersion_of(&self, f: impl Fn(&EnsembleMember<T>) -> T + Copy) -> T {
        let mean = self.mean_of(f);
        let var = self.mean_of(|m| {
            let d = f(m) - mean;
            d * d
        });
        var.max(T::zero()).sqrt()
    }

    pub fn mean_floquet(&self) -> T {
        self.mean_of(|m| m.floquet)
    }

    pub fn mean_floquet_starter(&self) -> T {
        self.mean_of(|m| m.floquet_starter)
    }

    /// t₀-average of the finite-horizon running averages.
    pub fn mean_direct(&self) -> Option<T> {
        if self.members.iter().any(|m| m.running.is_empty()) {
            return None;
        }
        Some(self.mean_of(|m| m.direct().unwrap()))
    }

    /// Ensemble-averaged running average after each period.
    pub fn mean_running(&self) -> Vec<T> {
        let n = self.members.iter().map(|m| m.running.len()).min().unwrap_or(0);
        (0..n).map(|i| self.mean_of(|m| m.running[i])).collect()
    }

    pub fn dispersion_floquet(&self) -> T {
        self.dispersion_of(|m| m.floquet)
    }

    pub fn dispersion_direct(&self) -> Option<T> {
        self.mean_direct()?;
        Some(self.dispersion_of(|m| m.direct().unwrap()))
    }

    /// Peak-to-peak spread of the ensemble-averaged running average over the
    /// last `periods`.
    pub fn band(&self, periods: usize) -> T {
        let r = self.mean_running();
        spread(r[r.len().saturating_sub(periods)..].iter().copied())
    }

    /// Peak-to-peak spread of the ensemble-averaged running average over the
    /// stored tail, resolved within each period. Falls back to
    /// [`T0Ensemble::band`] over `periods` when no tail was kept.
    pub fn continuous_band(&self, periods: usize) -> T {
        let n = self.members.iter().map(|m| m.tail.len()).min().unwrap_or(0);
        if n == 0 {
            return self.band(periods);
        }
        spread((0..n).map(|i| self.mean_of(|m| m.tail[i])))
    }
}

/// Periods at the end of the horizon whose intra-period running average is kept.
pub const TAIL_PERIODS: usize = 20;

/// Sweeps one propagation period and evaluates `n_t0` equally spaced
/// switch-on times in `[0, period)`.
///
/// With `horizon = Some(n)` each member also gets its running carrier
/// average over `n` periods, computed from monodromy powers and the exact
/// intra-period velocity integrals of the sweep.
pub fn t0_ensemble<T: Real>(
    p: &ModelParams<T>,
    drive: &DriveProtocol<T>,
    integrator: Integrator,
    period: T,
    l_c: usize,
    n_t0: usize,
    horizon: Option<usize>,
) -> Result<T0Ensemble<T>> {
    let prop = Propagator::new(p, drive, integrator)?;
    let sweep = PeriodSweep::compute_with_nodes(&prop, T::zero(), period, n_t0, horizon.is_some())?;
    ensemble_from_sweep(&sweep, p, l_c, horizon)
}

/// Evaluates the ensemble of an existing sweep.
pub fn ensemble_from_sweep<T: Real>(sweep: &PeriodSweep<T>, p: &ModelParams<T>, l_c: usize, horizon: Option<usize>) -> Result<T0Ensemble<T>> {
    let psi0 = crate::model::initial_state(p, l_c)?;
    let basis = MomentumBasis::<T>::new(p.l);
    let b0 = basis.to_blocks(&psi0.amplitudes)?;
    let members = (0..sweep.n_t0)
        .map(|j| {
            let m = sweep.monodromy_at(j);
            let spec = floquet_decompose(&m, p)?;
            let weights = weights_of_blocks(&spec, &b0)?;
            let floquet = contract(&weights, &spec.mean_velocities)?;
            let floquet_starter = contract(&weights, &spec.starter_velocities)?;
            let (running, running_starter, tail) = match horizon {
                Some(n) => stroboscopic_running(sweep, j, &b0, n),
                None => (Vec::new(), Vec::new(), Vec::new()),
            };
            Ok(EnsembleMember { t0: sweep.t0(j), floquet, floquet_starter, running, running_starter, tail })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(T0Ensemble { members, period: sweep.period })
}

/// Running averages at `t₀ⱼ + n·period` for `n = 1..=horizon`, plus the
/// node-resolved carrier average over the last [`TAIL_PERIODS`] periods.
///
/// The period sums are rectangle rules, exact up to aliasing for periodic
/// integrands; the running averages get the endpoint correction of the
/// trapezoid rule for the carrier, since the window itself is not periodic.
fn stroboscopic_running<T: Real>(sweep: &PeriodSweep<T>, j: usize, psi0: &Blocks<T>, horizon: usize) -> (Vec<T>, Vec<T>, Vec<T>) {
    let inner_c = sweep.origin_frame_average(j, true);
    let inner_s = sweep.origin_frame_average(j, false);
    let u_p = sweep.one_period();
    let nodes = sweep.nodes();
    // endpoint terms in units of the period: h/2 = period/(2·nodes)
    let half_node = T::one() / (count::<T>(2) * count::<T>(nodes));
    let at_switch = sweep.carrier_instant(j, 0);
    let mut chi = sweep.snapshots[j].adjoint().mul(psi0);
    let v_start = expectation(&at_switch, &chi);
    let (mut sum_c, mut sum_s) = (T::zero(), T::zero());
    let mut out_c = Vec::with_capacity(horizon);
    let mut out_s = Vec::with_capacity(horizon);
    let tail_from = if sweep.has_nodes() { horizon.saturating_sub(TAIL_PERIODS) + 1 } else { horizon + 1 };
    let mut tail = Vec::new();
    let (partials, instants): (Vec<Blocks<T>>, Vec<Blocks<T>>) = if tail_from <= horizon {
        (1..nodes)
            .map(|m| (sweep.partial_carrier_integral(j, m).scale(T::one() / sweep.period), sweep.carrier_instant(j, m)))
            .unzip()
    } else {
        (Vec::new(), Vec::new())
    };
    for n in 1..=horizon {
        if n >= tail_from {
            let done = count::<T>(n - 1);
            for (m, (op, inst)) in partials.iter().zip(&instants).enumerate() {
                let frac = count::<T>(m + 1) / count::<T>(nodes);
                let edge = half_node * (expectation(inst, &chi) - v_start);
                tail.push((sum_c + expectation(op, &chi) + edge) / (done + frac));
            }
        }
        sum_c += expectation(&inner_c, &chi);
        sum_s += expectation(&inner_s, &chi);
        chi = u_p.mul(&chi);
        let edge = half_node * (expectation(&at_switch, &chi) - v_start);
        out_c.push((sum_c + edge) / count::<T>(n));
        out_s.push(sum_s / count::<T>(n));
        if n >= tail_from {
            tail.push(*out_c.last().unwrap());
        }
    }
    (out_c, out_s, tail)
}

fn expectation<T: Real>(op: &Blocks<T>, x: &Blocks<T>) -> T {
    op.data.iter().zip(&x.data).fold(T::zero(), |acc, (o, v)| acc + (v.adjoint() * o * v)[(0, 0)].re)
}

/// `⟨υ_c⟩`: the Floquet dc velocity averaged over `n_t0` switch-on times in `[0, T)`.
pub fn t0_averaged_velocity<T: Real>(p: &ModelParams<T>, l_c: usize, n_t0: usize) -> Result<T> {
    t0_averaged_velocity_with(p, l_c, n_t0, Integrator::default())
}

pub fn t0_averaged_velocity_with<T: Real>(p: &ModelParams<T>, l_c: usize, n_t0: usize, integrator: Integrator) -> Result<T> {
    if n_t0 < 2 {
        return Err(Error::InvalidParameter { name: "n_t0", reason: format!("need at least 2 switch-on times, got {n_t0}") });
    }
    let d = DriveProtocol::from_params(p);
    Ok(t0_ensemble(p, &d, integrator, d.period(), l_c, n_t0, None)?.mean_floquet())
}

/// How the asymptotic velocity of each ensemble member is obtained.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "mode")]
pub enum DispersionMode {
    /// Exact asymptotics from the Floquet contraction.
    Floquet,
    /// Running average after `horizon` periods.
    Direct { horizon: usize },
}

/// Standard deviation of the asymptotic carrier velocity over the ensemble.
pub fn t0_dispersion<T: Real>(p: &ModelParams<T>, l_c: usize, n_t0: usize, mode: DispersionMode, integrator: Integrator) -> Result<T> {
    if n_t0 == 0 {
        return Err(Error::InvalidParameter { name: "n_t0", reason: "empty ensemble".into() });
    }
    let d = DriveProtocol::from_params(p);
    let horizon = match mode {
        DispersionMode::Floquet => None,
        DispersionMode::Direct { horizon } => Some(horizon.max(1)),
    };
    let e = t0_ensemble(p, &d, integrator, d.period(), l_c, n_t0, horizon)?;
    Ok(match mode {
        DispersionMode::Floquet => e.dispersion_floquet(),
        DispersionMode::Direct { .. } => e.dispersion_direct().unwrap_or_else(T::zero),
    })
}

/// Normalizes a vector into a state at `time`.
pub fn normalized_state<T: Real>(v: DVector<C<T>>, time: T) -> StateVector<T> {
    let n = v.norm();
    StateVector::new(v / C::new(n, T::zero()), time)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::propagate;
    use crate::model::initial_state;
    use proptest::prelude::*;
    use std::f64::consts::{FRAC_PI_2, PI};

    fn state_from(parts: &[(f64, f64)]) -> StateVector<f64> {
        normalized_state(DVector::from_iterator(parts.len(), parts.iter().map(|&(a, b)| C::new(a, b))), 0.0)
    }

    fn integ() -> Integrator {
        Integrator::default().with_steps(1 << 10).with_samples(256)
    }

    #[test]
    fn plane_wave_moves_at_full_speed() {
        let l = 8;
        let p = ModelParams::<f64>::new(l);
        let k = FRAC_PI_2;
        let mut v = DVector::zeros(l * l);
        for x in 0..l {
            v[x * l] = C::new((k * x as f64).cos(), (k * x as f64).sin());
        }
        let psi = normalized_state(v, 0.0);
        assert!((carrier_velocity(&psi, 0.0, &p).unwrap() - 1.0).abs() < 1e-14);
        assert!((carrier_velocity_commutator(&psi, 0.0, &p).unwrap() - 1.0).abs() < 1e-14);
        // the vector potential shifts the band: sin(π/2 − π/2) = 0
        assert!(carrier_velocity(&psi, FRAC_PI_2, &p).unwrap().abs() < 1e-14);
        assert!(starter_velocity(&psi, &p).unwrap().abs() < 1e-14);
        let rho = carrier_distribution(&psi, l).unwrap();
        assert!((rho.rho[2] - 1.0).abs() < 1e-14);
    }

    #[test]
    fn localized_start_carries_no_current() {
        let p = ModelParams::<f64>::harmonic_mixing_motor(6, 0.3);
        let psi = initial_state(&p, 2).unwrap();
        for a in [0.0, 0.8, -2.0] {
            assert!(carrier_velocity(&psi, a, &p).unwrap().abs() < 1e-15);
        }
        let rho = carrier_distribution(&psi, 6).unwrap();
        assert!(rho.rho.iter().all(|&r| (r - 1.0 / 6.0).abs() < 1e-14));
        let rho = starter_distribution(&psi, 6).unwrap();
        assert!((rho.rho[0] - 1.0).abs() < 1e-14);
    }

    #[test]
    fn floquet_state_velocity_is_its_mean() {
        let p = ModelParams::<f64>::harmonic_mixing_motor(4, 0.6);
        let d = DriveProtocol::harmonic_mixing(&p);
        let m = Propagator::new(&p, &d, integ()).unwrap().monodromy(0.0, d.period()).unwrap();
        let s = floquet_decompose(&m, &p).unwrap();
        for n in [0, 5, 11, 15] {
            let psi = StateVector::new(s.site_state(n), 0.0);
            let w = floquet_weights(&s, &psi).unwrap();
            assert!((w[n] - 1.0).abs() < 1e-12);
            assert!((dc_velocity_floquet(&s, &psi).unwrap() - s.mean_velocities[n]).abs() < 1e-12);
        }
    }

    #[test]
    fn monodromy_powers_reproduce_direct_running_average() {
        let p = ModelParams::<f64>::harmonic_mixing_motor(4, 1.0);
        let d = DriveProtocol::harmonic_mixing(&p);
        let fine = integ();
        let e = t0_ensemble(&p, &d, fine, d.period(), 1, 1, Some(10)).unwrap();
        let psi = initial_state(&p, 1).unwrap();
        let run = propagate(&p, &psi, &d, fine, 10.0 * d.period(), 10 * 256).unwrap();
        let member = &e.members[0];
        let direct = run.trace.running_avg.last().unwrap();
        assert!((member.direct().unwrap() - direct).abs() < 1e-8, "{} vs {direct}", member.direct().unwrap());
        assert_eq!(member.tail.len(), 10 * 256);
        let worst = member.tail.iter().zip(&run.trace.running_avg[1..]).skip(256).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(worst < 1e-8, "{worst}");
        assert!(e.continuous_band(20) >= e.band(20));
    }

    #[test]
    fn single_switch_on_time_has_no_dispersion() {
        let p = ModelParams::<f64>::harmonic_mixing_motor(4, FRAC_PI_2);
        assert_eq!(t0_dispersion(&p, 1, 1, DispersionMode::Floquet, integ()).unwrap(), 0.0);
        assert!(t0_averaged_velocity_with(&p, 1, 1, integ()).is_err());
        assert!(t0_dispersion(&p, 1, 0, DispersionMode::Floquet, integ()).is_err());
        let e = t0_ensemble(&p, &DriveProtocol::harmonic_mixing(&p), integ(), 2.0 * PI / p.omega, 1, 5, None).unwrap();
        assert!(e.dispersion_floquet() > 0.0);
        assert!(e.mean_direct().is_none());
    }

    #[test]
    fn window_checks() {
        let times: Vec<f64> = (0..=50).map(|i| i as f64).collect();
        let trace = VelocityTrace::from_samples(times.clone(), vec![0.25; 51], vec![0.0; 51], 0.0, 1.0);
        assert!(matches!(dc_velocity_direct(&trace), Err(Error::WindowTooShort { .. })));
        let long: Vec<f64> = (0..=200).map(|i| i as f64).collect();
        let trace = VelocityTrace::from_samples(long, vec![0.25; 201], vec![0.0; 201], 0.0, 1.0);
        let dc = dc_velocity_direct(&trace).unwrap();
        assert!((dc.value - 0.25).abs() < 1e-15 && dc.band < 1e-15);
    }

    fn parts(dim: usize) -> impl Strategy<Value = Vec<(f64, f64)>> {
        prop::collection::vec((-1.0f64..1.0, -1.0f64..1.0), dim)
    }

    proptest! {
        #[test]
        fn distribution_and_commutator_routes_agree(amps in parts(25), a in -7.0f64..7.0, w in -1.0f64..1.0) {
            prop_assume!(amps.iter().any(|&(x, y)| x.abs() + y.abs() > 1e-3));
            let p = ModelParams::<f64>::harmonic_mixing_motor(5, 0.0).with_interaction(w);
            let psi = state_from(&amps);
            let rho = carrier_velocity(&psi, a, &p).unwrap();
            let comm = carrier_velocity_commutator(&psi, a, &p).unwrap();
            prop_assert!((rho - comm).abs() < 1e-12);
            let rho_s = starter_velocity(&psi, &p).unwrap();
            let comm_s = starter_velocity_commutator(&psi, &p).unwrap();
            prop_assert!((rho_s - comm_s).abs() < 1e-12);
            prop_assert!((carrier_distribution(&psi, 5).unwrap().total() - 1.0).abs() < 1e-12);
            prop_assert!(rho.abs() <= 1.0 + 1e-12);
        }
    }
}
