//! Acceptance criteria, one test and one PASS/FAIL line each.

use std::f64::consts::{FRAC_PI_2, PI};
use std::io::Write;
use std::sync::OnceLock;

use qmotor::floquet::{detect_avoided_crossings, refine_crossing, CrossingKind, CrossingOptions, CrossingReport};
use qmotor::observables::{carrier_velocity, carrier_velocity_commutator, starter_velocity, starter_velocity_commutator};
use qmotor::scan::{grid_distance, map_points, resonance_peaks, spectrum_at, theta_scan, ThetaPoint};
use qmotor::*;
use rand::{rngs::StdRng, Rng, SeedableRng};

/// Writes past the test harness capture so every verdict shows up in the log.
fn report(criterion: &str, pass: bool, detail: String) {
    let verdict = if pass { "PASS" } else { "FAIL" };
    let mut out = std::io::stdout().lock();
    writeln!(out, "criterion {criterion} {verdict}: {detail}").unwrap();
    out.flush().unwrap();
    assert!(pass, "criterion {criterion}: {detail}");
}

const FIG3_POINTS: usize = 32;
const HORIZON: usize = 200;
const BAND_PERIODS: usize = 20;
const N_T0: usize = 20;

fn fig3_thetas() -> Vec<f64> {
    (0..FIG3_POINTS).map(|i| -PI + 2.0 * PI * i as f64 / FIG3_POINTS as f64).collect()
}

/// L = 16 scan shared by the symmetry, cross-validation and magnitude checks.
fn fig3_scan() -> &'static [ThetaPoint<f64>] {
    static SCAN: OnceLock<Vec<ThetaPoint<f64>>> = OnceLock::new();
    SCAN.get_or_init(|| {
        let p = Params::harmonic_mixing_motor(16, 0.0);
        theta_scan(&p, &fig3_thetas(), Integrator::default(), 1, N_T0, Some(HORIZON))
            .into_iter()
            .map(|r| r.expect("scan point"))
            .collect()
    })
}

fn max_abs(values: impl Iterator<Item = f64>) -> f64 {
    values.map(f64::abs).fold(0.0, f64::max)
}

#[test]
fn criterion_1_no_current_without_interaction() {
    let base = Params::harmonic_mixing_motor(8, 0.0).with_interaction(0.0);
    let drives = [
        (base.with_theta(0.0), 1),
        (base.with_theta(FRAC_PI_2), 1),
        (base.with_theta(2.1), 3),
        (Params { a1: 2.0, a2: 1.3, ..base.with_theta(0.7) }, 1),
        (base.with_theta(FRAC_PI_2).with_bias(0.03), 1),
        (base.with_theta(1.0).with_t0(17.0), 5),
    ];
    let mut worst: f64 = 0.0;
    for (p, l_c) in drives {
        let d = Drive::from_params(&p);
        let psi = initial_state(&p, l_c).unwrap();
        let run = propagate(&p, &psi, &d, Integrator::default(), psi.time + 50.0 * d.period(), 50 * 64).unwrap();
        worst = worst.max(max_abs(run.trace.v_c.iter().copied()));
    }
    report("1", worst < 1e-10, format!("max |v_c| over 6 drives x 50T = {worst:.3e} (< 1e-10)"));
}

#[test]
fn criterion_2_symmetries() {
    let p = Params::harmonic_mixing_motor(16, 0.0);
    let integ = Integrator::default();
    let mut k0: f64 = 0.0;
    for theta in [0.0, PI] {
        let s = spectrum_at(&p.with_theta(theta), integ).unwrap();
        k0 = k0.max(max_abs(s.block_indices(0).map(|n| s.mean_velocities[n])));
    }
    let plus = spectrum_at(&p.with_theta(FRAC_PI_2), integ).unwrap();
    let minus = spectrum_at(&p.with_theta(-FRAC_PI_2), integ).unwrap();
    let pairing = match_parity_partners(&plus, &minus).unwrap();

    let v: Vec<f64> = fig3_scan().iter().map(|pt| pt.ensemble.mean_floquet()).collect();
    let n = v.len();
    let shift = max_abs((0..n).map(|i| v[i] + v[(i + n / 2) % n]));
    let mirror = max_abs((0..n).map(|i| v[i] + v[(n - i) % n]));

    let pass = k0 < 1e-7 && pairing.residual < 1e-6 && shift < 1e-6 && mirror < 1e-6;
    report(
        "2",
        pass,
        format!(
            "(a) max |v_k=0| at 0, pi = {k0:.3e} (< 1e-7); (b) pairing residual at pi/2 = {:.3e}, min overlap {:.4} (< 1e-6); \
             (c) max |v(T)+v(T+pi)| = {shift:.3e}, max |v(T)+v(-T)| = {mirror:.3e} on {n} points (< 1e-6)",
            pairing.residual, pairing.min_overlap
        ),
    );
}

/// Whether a narrow avoided crossing (`t_obs` beyond the horizon) lies within one cell of `i`.
fn narrow_near(report: &CrossingReport<f64>, i: usize, n: usize, t_limit: f64) -> bool {
    report
        .avoided()
        .any(|c| c.t_obs > t_limit && grid_distance(c.grid_index, i, n, true) <= 1)
}

#[test]
fn criterion_3_floquet_vs_direct() {
    let scan = fig3_scan();
    let n = scan.len();
    let t_limit = HORIZON as f64 * scan[0].spectrum.period;
    let spectra: Vec<Spectrum> = scan.iter().map(|pt| pt.spectrum.clone()).collect();
    let coarse = detect_avoided_crossings(&spectra, CrossingOptions::default()).unwrap();

    let mut agree = 0;
    let mut unexplained = Vec::new();
    let mut lines = Vec::new();
    for (i, pt) in scan.iter().enumerate() {
        let e = &pt.ensemble;
        let diff = (e.mean_floquet() - e.mean_direct().unwrap()).abs();
        let band = e.continuous_band(BAND_PERIODS);
        if diff <= band {
            agree += 1;
            continue;
        }
        let mut explained = narrow_near(&coarse, i, n, t_limit);
        let mut how = "coarse grid";
        if !explained {
            // look for a crossing hidden between the neighbouring grid points
            let lo = pt.theta - 2.0 * PI / n as f64;
            let fine: Vec<f64> = (0..9).map(|m| lo + 4.0 * PI / n as f64 * m as f64 / 8.0).collect();
            let p = Params::harmonic_mixing_motor(16, 0.0);
            let spectra = map_points(&fine, |&th| spectrum_at(&p.with_theta(th), Integrator::default()))
                .into_iter()
                .collect::<Result<Vec<_>>>()
                .unwrap();
            let refined = detect_avoided_crossings(&spectra, CrossingOptions::default()).unwrap();
            explained = refined.avoided().any(|c| c.t_obs > t_limit);
            how = "refined cell";
        }
        lines.push(format!(
            "theta={:+.4} diff={diff:.3e} band={band:.3e} narrow crossing: {}",
            pt.theta,
            if explained { how } else { "none" }
        ));
        if !explained {
            unexplained.push(i);
        }
    }
    let fraction = agree as f64 / n as f64;
    let pass = fraction >= 0.9 && unexplained.is_empty();
    report(
        "3",
        pass,
        format!(
            "{agree}/{n} points agree within the last-{BAND_PERIODS}-period band ({:.0}%, need >= 90%); \
             disagreements without a narrow avoided crossing (t_obs > {HORIZON}T): {unexplained:?}; {}",
            100.0 * fraction,
            lines.join("; ")
        ),
    );
}

#[test]
fn criterion_4_resonances_sit_on_avoided_crossings() {
    let p = Params::resonance_motor(4, 0.0);
    let integ = Integrator::default();
    let count = 256;
    let thetas: Vec<f64> = (0..count).map(|i| -PI + 2.0 * PI * i as f64 / count as f64).collect();
    let scan: Vec<ThetaPoint<f64>> = theta_scan(&p, &thetas, integ, 1, N_T0, None).into_iter().map(|r| r.unwrap()).collect();
    let v: Vec<f64> = scan.iter().map(|pt| pt.ensemble.mean_floquet()).collect();
    let spectra: Vec<Spectrum> = scan.iter().map(|pt| pt.spectrum.clone()).collect();
    let options = CrossingOptions::default();
    let coarse = detect_avoided_crossings(&spectra, options).unwrap();
    let peaks = resonance_peaks(&v, 3.0, true);
    let orphans: Vec<usize> = peaks
        .iter()
        .copied()
        .filter(|&i| !coarse.avoided().any(|c| grid_distance(c.grid_index, i, count, true) <= 1))
        .collect();

    // refine the avoided crossings closest to the velocity peaks first
    let mut order: Vec<usize> = (0..coarse.crossings.len()).filter(|&k| coarse.crossings[k].kind == CrossingKind::Avoided).collect();
    let dist = |k: usize| peaks.iter().map(|&i| grid_distance(coarse.crossings[k].grid_index, i, count, true)).min().unwrap_or(usize::MAX);
    order.sort_by_key(|&k| dist(k));
    let mut nested = None;
    for &k in order.iter().take(16) {
        let r = refine_crossing(&coarse, k, 33, options, |th| spectrum_at(&p.with_theta(th), integ)).unwrap();
        if let Some(c) = r.nested.first() {
            nested = Some((coarse.crossings[k].theta, c.theta, c.gap));
            break;
        }
    }
    let pass = !peaks.is_empty() && orphans.is_empty() && nested.is_some();
    report(
        "4",
        pass,
        format!(
            "{} peaks above 3x median, {} avoided crossings on {count} points, peaks without a crossing within one cell: {orphans:?}; nested: {}",
            peaks.len(),
            coarse.avoided().count(),
            match nested {
                Some((outer, inner, gap)) => format!("inside theta={outer:+.4} at theta={inner:+.5}, gap {gap:.2e}"),
                None => "none found".into(),
            }
        ),
    );
}

#[test]
fn criterion_5_dispersion_decays_with_size() {
    let sizes = [4usize, 8, 16, 32];
    let sigma: Vec<f64> = sizes
        .iter()
        .map(|&l| {
            let p = Params::harmonic_mixing_motor(l, FRAC_PI_2);
            t0_dispersion(&p, 1, N_T0, DispersionMode::Direct { horizon: HORIZON }, Integrator::default()).unwrap()
        })
        .collect();
    let decreasing = sigma.windows(2).all(|w| w[1] < w[0]);
    let ratio = sigma[3] / sigma[0];
    let table: Vec<String> = sizes.iter().zip(&sigma).map(|(l, s)| format!("L={l}: {s:.4e}")).collect();
    report(
        "5",
        decreasing && ratio < 0.2,
        format!("sigma_v at {HORIZON}T: {}; strictly decreasing: {decreasing}; ratio L32/L4 = {ratio:.3} (< 0.2)", table.join(", ")),
    );
}

#[test]
fn criterion_6_load_characteristic() {
    let p = Params::harmonic_mixing_motor(4, FRAC_PI_2);
    let integ = Integrator::default();
    let qs: Vec<i64> = (-10..=10).collect();
    let coarse: Vec<LoadPoint<f64>> = load_characteristic(&p, &qs, 10, 1, N_T0, integ).into_iter().map(|r| r.unwrap()).collect();
    let at = |q: i64| &coarse[(q + 10) as usize];
    let envelope = max_abs((1..=10).flat_map(|q| [at(q).v_range_min - at(-q).v_range_min, at(q).v_range_max - at(-q).v_range_max]));
    let uphill: Vec<i64> = coarse.iter().filter(|pt| pt.q != 0 && pt.is_uphill()).map(|pt| pt.q).collect();

    let odd: Vec<i64> = (-19..=19).step_by(2).collect();
    let fine: Vec<LoadPoint<f64>> = load_characteristic(&p, &odd, 20, 1, N_T0, integ).into_iter().map(|r| r.unwrap()).collect();
    let tol = 1e-6;
    let jumps: Vec<(i64, f64)> = fine
        .iter()
        .map(|pt| {
            let left = (pt.q - 1) / 2;
            let interp = 0.5 * (at(left).v_c + at(left + 1).v_c);
            (pt.q, (pt.v_c - interp).abs())
        })
        .filter(|&(_, d)| d > tol)
        .collect();
    let largest = jumps.iter().map(|j| j.1).fold(0.0, f64::max);
    let pass = envelope < 1e-6 && !uphill.is_empty() && !jumps.is_empty();
    report(
        "6",
        pass,
        format!(
            "(a) max envelope difference between +q and -q = {envelope:.3e} (< 1e-6); (b) uphill q: {uphill:?}; \
             (c) {} of {} r=20 points off the r=10 interpolation by > {tol:.0e}, largest {largest:.3e}",
            jumps.len(),
            fine.len()
        ),
    );
}

#[test]
fn criterion_7_numerical_hygiene() {
    let integ = Integrator::default();
    let p = Params::harmonic_mixing_motor(16, FRAC_PI_2);
    let d = Drive::harmonic_mixing(&p);
    let prop = Propagator64::new(&p, &d, integ).unwrap();
    let unitarity = prop.monodromy(0.0, d.period()).unwrap().unitarity_defect();

    let small = Params::harmonic_mixing_motor(6, FRAC_PI_2);
    let ds = Drive::harmonic_mixing(&small);
    let site = Propagator64::new(&small, &ds, integ).unwrap().with_backend(Backend::Krylov).monodromy(0.0, ds.period()).unwrap();
    let leakage = site.block_leakage().unwrap();

    let mut rng = StdRng::seed_from_u64(2024);
    let mut route: f64 = 0.0;
    for _ in 0..100 {
        let v = nalgebra::DVector::from_fn(p.dim(), |_, _| Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)));
        let psi = normalized_state(v, 0.0);
        let a = rng.random_range(-PI..PI);
        route = route.max((carrier_velocity(&psi, a, &p).unwrap() - carrier_velocity_commutator(&psi, a, &p).unwrap()).abs());
        route = route.max((starter_velocity(&psi, &p).unwrap() - starter_velocity_commutator(&psi, &p).unwrap()).abs());
    }

    let ladder: Vec<usize> = (8..=13).map(|e| 1usize << e).collect();
    let blocks: Vec<_> = ladder
        .iter()
        .map(|&s| Propagator64::new(&p, &d, integ.with_steps(s)).unwrap().monodromy(0.0, d.period()).unwrap().blocks().unwrap().0)
        .collect();
    let steps: Vec<f64> = blocks.windows(2).map(|w| w[0].max_abs_diff(&w[1])).collect();
    let convergence = steps.iter().copied().fold(0.0, f64::max);
    let ladder_text: Vec<String> = ladder.windows(2).zip(&steps).map(|(w, s)| format!("{}->{}: {s:.2e}", w[0], w[1])).collect();

    let pass = unitarity < 1e-10 && leakage < 1e-10 && route < 1e-10 && convergence < 1e-6;
    report(
        "7",
        pass,
        format!(
            "unitarity defect {unitarity:.2e}; Krylov block leakage {leakage:.2e}; ρ vs commutator on 100 states {route:.2e}; \
             monodromy ladder {} (all < 1e-6 required)",
            ladder_text.join(", ")
        ),
    );
}

#[test]
fn criterion_8_magnitude() {
    let scan = fig3_scan();
    let at = |theta: f64| scan.iter().find(|pt| (pt.theta - theta).abs() < 1e-9).unwrap().ensemble.mean_floquet();
    let (plus, minus) = (at(FRAC_PI_2), at(-FRAC_PI_2));
    let ok = |v: f64| v.abs() > 0.005 && v.abs() < 0.5;
    report("8", ok(plus) && ok(minus), format!("<v_c>(pi/2) = {plus:+.4e}, <v_c>(-pi/2) = {minus:+.4e} (0.005 < |v| < 0.5)"));
}
