//! Parameter scans over independent points.

use rayon::prelude::*;

use crate::dynamics::{Integrator, PeriodSweep, Propagator};
use crate::error::Result;
use crate::floquet::{floquet_decompose, FloquetSpectrum};
use crate::model::{DriveProtocol, ModelParams};
use crate::observables::{ensemble_from_sweep, T0Ensemble};
use crate::scalar::Real;

/// Evaluates `f` on every point concurrently; results keep the input order.
pub fn map_points<P, R, F>(points: &[P], f: F) -> Vec<R>
where
    P: Sync,
    R: Send,
    F: Fn(&P) -> R + Sync + Send,
{
    points.par_iter().map(f).collect()
}

/// Floquet spectrum at `t₀ = p.t0` over one drive period.
pub fn spectrum_at<T: Real>(p: &ModelParams<T>, integrator: Integrator) -> Result<FloquetSpectrum<T>> {
    let d = DriveProtocol::from_params(p);
    let prop = Propagator::new(p, &d, integrator)?;
    let sweep = PeriodSweep::compute(&prop, p.t0, d.period(), 1)?;
    floquet_decompose(&sweep.monodromy_at(0), p)
}

/// One point of a Θ scan.
#[derive(Debug, Clone, PartialEq)]
pub struct ThetaPoint<T: Real> {
    pub theta: T,
    pub ensemble: T0Ensemble<T>,
    /// Spectrum at `t₀ = 0`.
    pub spectrum: FloquetSpectrum<T>,
}

/// Switch-on ensemble and `t₀ = 0` spectrum at one Θ.
pub fn theta_point<T: Real>(p: &ModelParams<T>, integrator: Integrator, l_c: usize, n_t0: usize, horizon: Option<usize>) -> Result<ThetaPoint<T>> {
    let d = DriveProtocol::from_params(p);
    let prop = Propagator::new(p, &d, integrator)?;
    let sweep = PeriodSweep::compute_with_nodes(&prop, T::zero(), d.period(), n_t0, horizon.is_some())?;
    let spectrum = floquet_decompose(&sweep.monodromy_at(0), p)?;
    let ensemble = ensemble_from_sweep(&sweep, p, l_c, horizon)?;
    Ok(ThetaPoint { theta: p.theta, ensemble, spectrum })
}

/// Θ scan with every point evaluated independently.
pub fn theta_scan<T: Real>(
    p: &ModelParams<T>,
    thetas: &[T],
    integrator: Integrator,
    l_c: usize,
    n_t0: usize,
    horizon: Option<usize>,
) -> Vec<Result<ThetaPoint<T>>> {
    map_points(thetas, |&th| theta_point(&p.with_theta(th), integrator, l_c, n_t0, horizon))
}

/// Indices of local maxima of `|v|` exceeding `factor` times the median `|v|`.
///
/// With `periodic` the grid wraps around, as for Θ over a full circle.
pub fn resonance_peaks<T: Real>(v: &[T], factor: T, periodic: bool) -> Vec<usize> {
    let n = v.len();
    if n < 3 {
        return Vec::new();
    }
    let mut mags: Vec<T> = v.iter().map(|x| x.abs()).collect();
    mags.sort_by(|a, b| a.partial_cmp(b).unwrap_or(std::cmp::Ordering::Equal));
    let median = if n % 2 == 1 { mags[n / 2] } else { (mags[n / 2 - 1] + mags[n / 2]) / (T::one() + T::one()) };
    let cut = median * factor;
    (0..n)
        .filter(|&i| {
            let here = v[i].abs();
            let left = if i > 0 { Some(v[i - 1].abs()) } else if periodic { Some(v[n - 1].abs()) } else { None };
            let right = if i + 1 < n { Some(v[i + 1].abs()) } else if periodic { Some(v[0].abs()) } else { None };
            here > cut && left.is_none_or(|x| here >= x) && right.is_none_or(|x| here >= x)
        })
        .collect()
}

/// Grid distance between two indices, wrapping around when `periodic`.
pub fn grid_distance(a: usize, b: usize, n: usize, periodic: bool) -> usize {
    let d = a.abs_diff(b);
    if periodic {
        d.min(n - d)
    } else {
        d
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn peaks_against_the_median() {
        let v = [0.1, 0.1, 0.9, 0.1, -0.1, 0.1, -0.1, 0.1, 0.1, -0.5];
        assert_eq!(resonance_peaks(&v, 3.0, false), vec![2, 9]);
        // wrapping makes the last point a neighbour of the first
        let w = [0.6, 0.1, 0.1, 0.1, 0.1, 0.1, 0.1, 0.7];
        assert_eq!(resonance_peaks(&w, 3.0, true), vec![7]);
        assert_eq!(resonance_peaks(&w, 3.0, false), vec![0, 7]);
        assert!(resonance_peaks(&[1.0, 2.0], 3.0, true).is_empty());
    }

    #[test]
    fn wrapped_distance() {
        assert_eq!(grid_distance(0, 31, 32, true), 1);
        assert_eq!(grid_distance(0, 31, 32, false), 31);
        assert_eq!(grid_distance(5, 3, 32, true), 2);
    }

    #[test]
    fn scan_keeps_order_and_isolates_failures() {
        let out = map_points(&[3i32, -1, 4], |&x| if x < 0 { Err(x) } else { Ok(x * 2) });
        assert_eq!(out, vec![Ok(6), Err(-1), Ok(8)]);
        let p = crate::model::ModelParams::<f64>::harmonic_mixing_motor(3, 0.0);
        let integ = Integrator::default().with_steps(256).with_samples(32);
        let pts = theta_scan(&p, &[0.5, f64::NAN, 1.0], integ, 1, 2, None);
        assert!(pts[0].is_ok() && pts[1].is_err() && pts[2].is_ok());
        assert_eq!(pts[2].as_ref().unwrap().theta, 1.0);
    }
}
