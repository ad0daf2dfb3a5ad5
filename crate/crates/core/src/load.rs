//! The motor under a constant load: a linear ramp `ω_B t` added to the
//! vector potential, commensurate with the drive.

use serde::{Deserialize, Serialize};

use crate::dynamics::{Integrator, PeriodSweep, Propagator};
use crate::error::{Error, Result};
use crate::floquet::{floquet_decompose, FloquetSpectrum};
use crate::model::{DriveProtocol, ModelParams};
use crate::observables::ensemble_from_sweep;
use crate::scalar::{count, lit, to_f64, Real};
use crate::scan::map_points;

/// A bias `ω_B = ω·q/r` in lowest terms.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Commensurate {
    pub q: i64,
    pub r: u64,
}

fn gcd(mut a: u64, mut b: u64) -> u64 {
    while b != 0 {
        (a, b) = (b, a % b);
    }
    a
}

impl Commensurate {
    /// Reduces `q/r` to co-prime form. `q = 0` keeps `r`, so the zero-bias
    /// point is analysed over the same `r·T` window as its neighbours.
    pub fn new(q: i64, r: u64) -> Result<Self> {
        if r == 0 {
            return Err(Error::InvalidParameter { name: "r", reason: "must be positive".into() });
        }
        if q == 0 {
            return Ok(Self { q, r });
        }
        let g = gcd(q.unsigned_abs(), r);
        Ok(Self { q: q / g as i64, r: r / g })
    }

    pub fn omega_b<T: Real>(&self, omega: T) -> T {
        omega * lit::<T>(self.q as f64) / count::<T>(self.r as usize)
    }

    /// `r·T`.
    pub fn common_period<T: Real>(&self, omega: T) -> T {
        T::two_pi() / omega * count::<T>(self.r as usize)
    }

    /// Errors unless `p.omega_b` equals `ω·q/r`.
    pub fn check<T: Real>(&self, p: &ModelParams<T>) -> Result<()> {
        let expected = self.omega_b(p.omega);
        if (p.omega_b - expected).abs() > lit::<T>(1e-12) * p.omega {
            return Err(Error::Incommensurate { omega_b: to_f64(p.omega_b), omega: to_f64(p.omega), q: self.q, r: self.r });
        }
        Ok(())
    }
}

/// Floquet spectrum of the biased drive over the common period `r·T`, at `t₀ = p.t0`.
pub fn load_spectrum<T: Real>(p: &ModelParams<T>, c: Commensurate, integrator: Integrator) -> Result<FloquetSpectrum<T>> {
    c.check(p)?;
    let d = DriveProtocol::from_params(p);
    let prop = Propagator::new(p, &d, integrator)?;
    let sweep = PeriodSweep::compute(&prop, p.t0, c.common_period(p.omega), 1)?;
    floquet_decompose(&sweep.monodromy_at(0), p)
}

/// One row of the load characteristic.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LoadPoint<T> {
    /// The requested numerator and denominator.
    pub q: i64,
    pub r: u64,
    /// After reduction.
    pub reduced: Commensurate,
    pub omega_b: T,
    pub v_range_min: T,
    pub v_range_max: T,
    /// t₀-averaged asymptotic carrier velocity of the standard initial state.
    pub v_c: T,
    pub v_s: T,
}

impl<T: Real> LoadPoint<T> {
    /// Mean motion against the force `−ω_B` of the ramp.
    pub fn is_uphill(&self) -> bool {
        self.v_c * self.omega_b > T::zero()
    }
}

/// Evaluates one bias point: velocity range of the Floquet basis and the
/// t₀-average over `n_t0` switch-on times in `[0, r·T)`.
pub fn load_point<T: Real>(p: &ModelParams<T>, q: i64, r: u64, l_c: usize, n_t0: usize, integrator: Integrator) -> Result<LoadPoint<T>> {
    let c = Commensurate::new(q, r)?;
    let biased = p.with_bias(c.omega_b(p.omega));
    let d = DriveProtocol::from_params(&biased);
    let prop = Propagator::new(&biased, &d, integrator)?;
    let sweep = PeriodSweep::compute(&prop, T::zero(), c.common_period(p.omega), n_t0)?;
    let spectrum = floquet_decompose(&sweep.monodromy_at(0), &biased)?;
    let (v_range_min, v_range_max) = spectrum
        .velocity_range()
        .ok_or_else(|| Error::IncompatibleSpectra("spectrum carries no mean velocities".into()))?;
    let ensemble = ensemble_from_sweep(&sweep, &biased, l_c, None)?;
    Ok(LoadPoint {
        q,
        r,
        reduced: c,
        omega_b: biased.omega_b,
        v_range_min,
        v_range_max,
        v_c: ensemble.mean_floquet(),
        v_s: ensemble.mean_floquet_starter(),
    })
}

/// The load characteristic on the rational grid `ω_B = ω·q/r`, one
/// independent point per `q`; failing points do not affect the others.
pub fn load_characteristic<T: Real>(
    p: &ModelParams<T>,
    q_list: &[i64],
    r: u64,
    l_c: usize,
    n_t0: usize,
    integrator: Integrator,
) -> Vec<Result<LoadPoint<T>>> {
    map_points(q_list, |&q| load_point(p, q, r, l_c, n_t0, integrator))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::observables::t0_averaged_velocity_with;
    use std::f64::consts::FRAC_PI_2;

    fn integ() -> Integrator {
        Integrator::default().with_steps(1 << 9).with_samples(64)
    }

    #[test]
    fn reduction() {
        assert_eq!(Commensurate::new(4, 10).unwrap(), Commensurate { q: 2, r: 5 });
        assert_eq!(Commensurate::new(-6, 9).unwrap(), Commensurate { q: -2, r: 3 });
        assert_eq!(Commensurate::new(0, 10).unwrap(), Commensurate { q: 0, r: 10 });
        assert!(Commensurate::new(1, 0).is_err());
        let c = Commensurate::new(3, 10).unwrap();
        assert!((c.omega_b(0.05f64) - 0.015).abs() < 1e-15);
        let p = ModelParams::<f64>::resonance_motor(4, 0.0);
        assert!(matches!(c.check(&p.with_bias(0.0151)), Err(Error::Incommensurate { .. })));
        c.check(&p.with_bias(0.015)).unwrap();
    }

    #[test]
    fn zero_bias_is_the_free_motor() {
        let p = ModelParams::<f64>::harmonic_mixing_motor(4, FRAC_PI_2);
        let loaded = load_point(&p, 0, 2, 1, 8, integ()).unwrap();
        let free = t0_averaged_velocity_with(&p, 1, 4, integ()).unwrap();
        assert!((loaded.v_c - free).abs() < 1e-9, "{} vs {free}", loaded.v_c);
        assert!(!loaded.is_uphill());
    }

    #[test]
    fn equivalent_fractions_agree() {
        let p = ModelParams::<f64>::harmonic_mixing_motor(3, 0.4);
        let a = load_point(&p, 1, 2, 1, 4, integ()).unwrap();
        let b = load_point(&p, 2, 4, 1, 4, integ()).unwrap();
        assert_eq!(a.reduced, b.reduced);
        assert_eq!((b.q, b.r), (2, 4));
        assert!((a.v_c - b.v_c).abs() < 1e-12);
        assert!((a.v_range_max - b.v_range_max).abs() < 1e-12);
        let s = load_spectrum(&p.with_bias(a.omega_b), a.reduced, integ()).unwrap();
        assert!((s.period - 2.0 * p.period()).abs() < 1e-12);
    }

    #[test]
    fn uphill_sign() {
        let pt = LoadPoint { q: 1, r: 1, reduced: Commensurate { q: 1, r: 1 }, omega_b: 0.1, v_range_min: 0.0, v_range_max: 0.0, v_c: 0.01, v_s: 0.0 };
        assert!(pt.is_uphill());
        assert!(!LoadPoint { v_c: -0.01, ..pt }.is_uphill());
    }
}
