//! Floquet spectra of the one-period propagator: quasienergies, Floquet
//! states per total-quasimomentum block, mean Floquet velocities, parity
//! partners and avoided crossings along a parameter scan.

use nalgebra::{DMatrix, DVector, Schur, SymmetricEigen};
use pathfinding::kuhn_munkres::kuhn_munkres;
use pathfinding::matrix::Matrix;

use crate::blocks::{kappa, opposite_block, Blocks, MomentumBasis};
use crate::dynamics::{Integrator, Monodromy, PhaseSource, Propagator};
use crate::error::{Error, Result};
use crate::model::{DriveProtocol, ModelParams};
use crate::observables::column_velocity;
use crate::scalar::{carg, circular_distance, count, lit, to_f64, Real, C};

/// Eigenphase separation below which two Floquet states count as degenerate.
pub const DEGENERACY_TOL: f64 = 1e-9;
/// Largest off-block element tolerated when splitting a propagator into blocks.
pub const LEAKAGE_TOL: f64 = 1e-8;

/// Floquet decomposition of one propagator.
///
/// State `n = K·L + i` is the `i`-th state (ascending quasienergy) of the
/// block with total quasimomentum `k = 2πK/L`; its momentum components are
/// column `i` of `states.data[K]`.
#[derive(Debug, Clone, PartialEq)]
pub struct FloquetSpectrum<T: Real> {
    pub l: usize,
    pub period: T,
    pub t0: T,
    pub theta: T,
    /// Folded into `[−ω_eff/2, ω_eff/2)` with `ω_eff = 2π/period`.
    pub quasienergies: Vec<T>,
    /// Block index `K` of every state.
    pub k_labels: Vec<usize>,
    pub states: Blocks<T>,
    /// Mean carrier velocities `v̄ₙ` (units `v₀`); empty if the propagator
    /// carried no velocity average.
    pub mean_velocities: Vec<T>,
    /// Mean starter velocities (units `J_s d/ħ`); empty likewise.
    pub starter_velocities: Vec<T>,
}

impl<T: Real> FloquetSpectrum<T> {
    pub fn len(&self) -> usize {
        self.quasienergies.len()
    }

    pub fn is_empty(&self) -> bool {
        self.quasienergies.is_empty()
    }

    pub fn omega_eff(&self) -> T {
        T::two_pi() / self.period
    }

    /// Total quasimomentum `k = 2πK/L` of state `n`.
    pub fn k_value(&self, n: usize) -> T {
        kappa(self.l, self.k_labels[n])
    }

    /// Momentum components of state `n` inside its block.
    pub fn block_state(&self, n: usize) -> DVector<C<T>> {
        self.states.data[n / self.l].column(n % self.l).into_owned()
    }

    /// State `n` in the site basis.
    pub fn site_state(&self, n: usize) -> DVector<C<T>> {
        let basis = MomentumBasis::<T>::new(self.l);
        let k = n / self.l;
        let col = self.states.data[k].column(n % self.l);
        let mut out = DVector::zeros(self.l * self.l);
        for j in 0..self.l {
            out += basis.momentum_state(k, j) * col[j];
        }
        out
    }

    /// All Floquet states as columns of a site-basis unitary.
    pub fn states_at_t0(&self) -> DMatrix<C<T>> {
        let mut m = DMatrix::zeros(self.l * self.l, self.len());
        for n in 0..self.len() {
            m.set_column(n, &self.site_state(n));
        }
        m
    }

    pub fn has_velocities(&self) -> bool {
        !self.mean_velocities.is_empty()
    }

    /// `(min, max)` of the mean carrier velocities.
    pub fn velocity_range(&self) -> Option<(T, T)> {
        let mut it = self.mean_velocities.iter().copied();
        let first = it.next()?;
        Some(it.fold((first, first), |(lo, hi), v| (lo.min(v), hi.max(v))))
    }

    /// Indices of the states in block `k_block`.
    pub fn block_indices(&self, k_block: usize) -> std::ops::Range<usize> {
        k_block * self.l..(k_block + 1) * self.l
    }
}

/// Folds a quasienergy into `[−ω/2, ω/2)`.
pub fn fold_quasienergy<T: Real>(e: T, omega_eff: T) -> T {
    let half = omega_eff * lit(0.5);
    let mut x = e - omega_eff * ((e + half) / omega_eff).floor();
    if x >= half {
        x -= omega_eff;
    }
    if x < -half {
        x += omega_eff;
    }
    x
}

fn hermitian_part_real<T: Real>(q: &DMatrix<C<T>>, op: &DMatrix<C<T>>) -> Vec<T> {
    (0..q.ncols())
        .map(|i| {
            let c = q.column(i);
            (c.adjoint() * op * c)[(0, 0)].re
        })
        .collect()
}

/// Groups sorted eigenphases into degenerate clusters on the unit circle.
fn clusters<T: Real>(phases: &[T]) -> Vec<Vec<usize>> {
    let tol = lit::<T>(DEGENERACY_TOL);
    let mut out: Vec<Vec<usize>> = Vec::new();
    for i in 0..phases.len() {
        match out.last_mut() {
            Some(c) if circular_distance(phases[*c.last().unwrap()], phases[i], T::two_pi()) < tol => c.push(i),
            _ => out.push(vec![i]),
        }
    }
    if out.len() > 1 {
        let first = out[0][0];
        let last = *out.last().unwrap().last().unwrap();
        if circular_distance(phases[first], phases[last], T::two_pi()) < tol {
            let tail = out.pop().unwrap();
            let head = std::mem::take(&mut out[0]);
            out[0] = tail.into_iter().chain(head).collect();
        }
    }
    out
}

/// Diagonalizes the propagator block by block.
///
/// Degenerate eigenphases are resolved by diagonalizing the period-averaged
/// carrier velocity on the degenerate subspace, which makes `v̄ₙ` unique.
pub fn floquet_decompose<T: Real>(u: &Monodromy<T>, p: &ModelParams<T>) -> Result<FloquetSpectrum<T>> {
    if u.l != p.l {
        return Err(Error::DimensionMismatch { expected: p.l * p.l, found: u.l * u.l });
    }
    let defect = u.unitarity_defect();
    if defect > lit(LEAKAGE_TOL) {
        return Err(Error::NotUnitary { defect: to_f64(defect) });
    }
    let (blocks, leak) = u.blocks()?;
    if leak > lit(LEAKAGE_TOL) {
        return Err(Error::BlockLeakage { leakage: to_f64(leak) });
    }
    let l = p.l;
    let omega_eff = T::two_pi() / u.period;
    let mut quasienergies = Vec::with_capacity(l * l);
    let mut k_labels = Vec::with_capacity(l * l);
    let mut states = Blocks::zeros(l, l);
    let mut mean_velocities = Vec::new();
    let mut starter_velocities = Vec::new();

    for (k, block) in blocks.data.into_iter().enumerate() {
        let (q, t) = Schur::new(block).unpack();
        let phases: Vec<T> = (0..l).map(|i| carg(t[(i, i)])).collect();
        let eps: Vec<T> = phases.iter().map(|&ph| fold_quasienergy(-ph / u.period, omega_eff)).collect();
        let mut order: Vec<usize> = (0..l).collect();
        order.sort_by(|&a, &b| eps[a].partial_cmp(&eps[b]).unwrap_or(std::cmp::Ordering::Equal));
        let sorted_phases: Vec<T> = order.iter().map(|&i| phases[i]).collect();
        let mut qs = DMatrix::zeros(l, l);
        for (dst, &src) in order.iter().enumerate() {
            qs.set_column(dst, &q.column(src));
        }
        let mut eps_sorted: Vec<T> = order.iter().map(|&i| eps[i]).collect();

        if let Some(avg) = &u.carrier_average {
            let v_block = &avg.data[k];
            for cluster in clusters(&sorted_phases).into_iter().filter(|c| c.len() > 1) {
                let sub = DMatrix::from_fn(l, cluster.len(), |r, c| qs[(r, cluster[c])]);
                let restricted = sub.adjoint() * v_block * &sub;
                let herm = (&restricted + restricted.adjoint()) * C::new(lit(0.5), T::zero());
                let eig = SymmetricEigen::new(herm);
                let mut idx: Vec<usize> = (0..cluster.len()).collect();
                idx.sort_by(|&a, &b| {
                    eig.eigenvalues[a].partial_cmp(&eig.eigenvalues[b]).unwrap_or(std::cmp::Ordering::Equal)
                });
                let mut rotated = DMatrix::zeros(l, cluster.len());
                for (c, &src) in idx.iter().enumerate() {
                    rotated.set_column(c, &(&sub * eig.eigenvectors.column(src)));
                }
                // the eigensolver leaves ~1e-9 non-orthogonality on degenerate subspaces
                let rotated = rotated.qr().q();
                let mean_eps = cluster.iter().fold(T::zero(), |a, &i| a + eps_sorted[i]) / count::<T>(cluster.len());
                for (c, slot) in cluster.iter().enumerate() {
                    qs.set_column(*slot, &rotated.column(c));
                }
                // wrap-around clusters keep their individual folded values
                if cluster.windows(2).all(|w| w[1] == w[0] + 1) {
                    for &slot in &cluster {
                        eps_sorted[slot] = mean_eps;
                    }
                }
            }
            mean_velocities.extend(hermitian_part_real(&qs, v_block));
        }
        if let Some(avg) = &u.starter_average {
            starter_velocities.extend(hermitian_part_real(&qs, &avg.data[k]));
        }
        quasienergies.extend(eps_sorted);
        k_labels.extend(std::iter::repeat_n(k, l));
        states.data[k] = qs;
    }
    Ok(FloquetSpectrum {
        l,
        period: u.period,
        t0: u.t0,
        theta: p.theta,
        quasienergies,
        k_labels,
        states,
        mean_velocities,
        starter_velocities,
    })
}

/// Per-state velocity time series over one period and their averages.
#[derive(Debug, Clone, PartialEq)]
pub struct FloquetVelocities<T> {
    /// Sample times `t₀ + i·period/samples`, `i = 0..samples`.
    pub times: Vec<T>,
    /// `traces[n][i]`: carrier velocity of state `n` at `times[i]`.
    pub traces: Vec<Vec<T>>,
    /// Period averages with all samples.
    pub mean: Vec<T>,
    /// Largest change of any average when only every second sample is used.
    pub richardson_error: T,
}

/// Propagates every Floquet state over one period and averages the carrier
/// velocity of each (periodic trapezoid rule on `samples` nodes).
///
/// An independent route to [`FloquetSpectrum::mean_velocities`].
pub fn floquet_mean_velocity<T: Real>(
    spectrum: &FloquetSpectrum<T>,
    p: &ModelParams<T>,
    d: &DriveProtocol<T>,
    integrator: Integrator,
    samples: usize,
) -> Result<FloquetVelocities<T>> {
    if samples < 32 || samples % 2 != 0 {
        return Err(Error::InvalidParameter { name: "samples", reason: format!("need an even count >= 32, got {samples}") });
    }
    let prop = Propagator::new(p, d, integrator)?;
    let l = spectrum.l;
    let h = spectrum.period / count::<T>(samples);
    let sub = prop.steps_for(h);
    let dt = h / count::<T>(sub);
    let mut psi = spectrum.states.clone();
    let mut traces = vec![Vec::with_capacity(samples); l * l];
    let mut times = Vec::with_capacity(samples);
    for i in 0..samples {
        let t = spectrum.t0 + h * count::<T>(i);
        let a = d.phase(t);
        times.push(t);
        for (k, block) in psi.data.iter().enumerate() {
            for c in 0..l {
                traces[k * l + c].push(column_velocity(prop.generator(), block, c, a));
            }
        }
        prop.advance_blocks(&mut psi, PhaseSource::Continued, t, dt, sub);
    }
    let n_half = count::<T>(samples / 2);
    let n_full = count::<T>(samples);
    let mut error = T::zero();
    let mean = traces
        .iter()
        .map(|tr| {
            let full = tr.iter().fold(T::zero(), |a, &v| a + v) / n_full;
            let half = tr.iter().step_by(2).fold(T::zero(), |a, &v| a + v) / n_half;
            error = error.max((full - half).abs());
            full
        })
        .collect();
    Ok(FloquetVelocities { times, traces, mean, richardson_error: error })
}

/// Result of [`match_parity_partners`].
#[derive(Debug, Clone, PartialEq)]
pub struct ParityPairing<T> {
    /// `(n, m)`: state `n` of the `+Θ` spectrum pairs with state `m` of the `−Θ` one.
    pub pairs: Vec<(usize, usize)>,
    /// Smallest overlap `|⟨φ_m(−Θ)|Kφ_n(Θ)⟩|` among the assigned pairs.
    pub min_overlap: T,
    /// `max |v̄_m(−Θ) + v̄_n(Θ)|`.
    pub residual: T,
}

fn assignment<T: Real>(overlaps: &DMatrix<T>) -> Vec<usize> {
    let scale = 1e12;
    let rows: Vec<Vec<i64>> = (0..overlaps.nrows())
        .map(|r| (0..overlaps.ncols()).map(|c| (to_f64(overlaps[(r, c)]) * scale).round() as i64).collect())
        .collect();
    let weights = Matrix::from_rows(rows).expect("rectangular overlap matrix");
    kuhn_munkres(&weights).1
}

/// Pairs Floquet states at `Θ` with states at `−Θ` through time reversal
/// combined with complex conjugation, which maps block `K` to `−K`.
///
/// The switch-on times must be mirror images, `t₀(+) + t₀(−) ≡ 0` mod period.
pub fn match_parity_partners<T: Real>(plus: &FloquetSpectrum<T>, minus: &FloquetSpectrum<T>) -> Result<ParityPairing<T>> {
    if plus.l != minus.l || (plus.period - minus.period).abs() > lit::<T>(1e-12) * plus.period {
        return Err(Error::IncompatibleSpectra("sizes or periods differ".into()));
    }
    let shift = (plus.t0 + minus.t0) / plus.period;
    if (shift - shift.round()).abs() > lit(1e-9) {
        return Err(Error::IncompatibleSpectra("switch-on times are not mirror images".into()));
    }
    let l = plus.l;
    let basis = MomentumBasis::<T>::new(l);
    let conj = basis.conjugate_block_state(&plus.states);
    let mut pairs = Vec::with_capacity(l * l);
    let mut min_overlap = T::one();
    for k in 0..l {
        let target = opposite_block(l, k);
        // conj.data[target] holds K φ for the states of plus block k
        let o = minus.states.data[target].adjoint() * &conj.data[target];
        let mags = DMatrix::from_fn(l, l, |r, c| o[(c, r)].norm_sqr().sqrt());
        let assign = assignment(&mags);
        for (i, &m) in assign.iter().enumerate() {
            min_overlap = min_overlap.min(mags[(i, m)]);
            pairs.push((k * l + i, target * l + m));
        }
    }
    if min_overlap < lit(0.5) {
        return Err(Error::PairingFailed { overlap: to_f64(min_overlap), residual: f64::NAN });
    }
    let mut residual = T::zero();
    if plus.has_velocities() && minus.has_velocities() {
        for &(n, m) in &pairs {
            residual = residual.max((plus.mean_velocities[n] + minus.mean_velocities[m]).abs());
        }
    }
    Ok(ParityPairing { pairs, min_overlap, residual })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum CrossingKind {
    /// Same quasimomentum block: the levels repel.
    Avoided,
    /// Different blocks: symmetry-protected, the levels cross.
    True,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CrossingOptions {
    /// Gap threshold as a fraction of the mean in-block level spacing `ω_eff/L`.
    pub threshold_fraction: f64,
    /// Also report local gap minima between different blocks.
    pub include_true: bool,
}

impl Default for CrossingOptions {
    fn default() -> Self {
        Self { threshold_fraction: 0.25, include_true: true }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Crossing<T> {
    pub grid_index: usize,
    pub theta: T,
    /// Gap on the quasienergy circle at the grid minimum.
    pub gap: T,
    /// Curve labels (state indices at the first grid point).
    pub curves: (usize, usize),
    pub blocks: (usize, usize),
    pub kind: CrossingKind,
    /// Observation time `ħ/gap` needed to resolve the crossing.
    pub t_obs: T,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Ambiguity {
    /// Between grid points `grid_index` and `grid_index + 1`.
    pub grid_index: usize,
    pub block: usize,
    pub best_overlap: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CrossingReport<T> {
    pub thetas: Vec<T>,
    /// `curves[i][c]`: index into spectrum `i` of curve `c`.
    pub curves: Vec<Vec<usize>>,
    pub crossings: Vec<Crossing<T>>,
    pub ambiguities: Vec<Ambiguity>,
    pub threshold: T,
}

impl<T: Real> CrossingReport<T> {
    pub fn avoided(&self) -> impl Iterator<Item = &Crossing<T>> {
        self.crossings.iter().filter(|c| c.kind == CrossingKind::Avoided)
    }
}

/// Continues the states of one block from one grid point to the next.
fn continue_block<T: Real>(a: &DMatrix<C<T>>, b: &DMatrix<C<T>>) -> (Vec<usize>, f64, bool) {
    let n = a.ncols();
    let o = a.adjoint() * b;
    let mags = DMatrix::from_fn(n, n, |r, c| o[(r, c)].norm_sqr().sqrt());
    let mut greedy = Vec::with_capacity(n);
    let mut clear = true;
    for r in 0..n {
        let mut row: Vec<(usize, T)> = (0..n).map(|c| (c, mags[(r, c)])).collect();
        row.sort_by(|x, y| y.1.partial_cmp(&x.1).unwrap_or(std::cmp::Ordering::Equal));
        greedy.push(row[0].0);
        if n > 1 && row[0].1 - row[1].1 < lit(0.2) {
            clear = false;
        }
    }
    let mut seen = vec![false; n];
    let bijective = greedy.iter().all(|&c| !std::mem::replace(&mut seen[c], true));
    let assign = if clear && bijective { greedy } else { assignment(&mags) };
    let worst = assign.iter().enumerate().fold(1.0f64, |w, (r, &c)| w.min(to_f64(mags[(r, c)])));
    // degenerate overlaps: the assignment is a guess
    let ambiguous = worst < 0.5;
    (assign, worst, ambiguous)
}

/// Tracks quasienergy curves over a parameter grid and reports local
/// minima of pairwise gaps below the threshold.
pub fn detect_avoided_crossings<T: Real>(spectra: &[FloquetSpectrum<T>], options: CrossingOptions) -> Result<CrossingReport<T>> {
    let Some(first) = spectra.first() else {
        return Err(Error::InvalidParameter { name: "spectra", reason: "empty scan".into() });
    };
    let l = first.l;
    if spectra.iter().any(|s| s.l != l || s.len() != l * l) {
        return Err(Error::IncompatibleSpectra("scan mixes system sizes".into()));
    }
    let n = l * l;
    let mut curves: Vec<Vec<usize>> = vec![(0..n).collect()];
    let mut ambiguities = Vec::new();
    for (i, pair) in spectra.windows(2).enumerate() {
        let prev = curves.last().unwrap().clone();
        let mut next = prev.clone();
        for k in 0..l {
            let (assign, worst, ambiguous) = continue_block(&pair[0].states.data[k], &pair[1].states.data[k]);
            if ambiguous {
                ambiguities.push(Ambiguity { grid_index: i, block: k, best_overlap: worst });
            }
            for (c, slot) in next.iter_mut().enumerate().filter(|(c, _)| *c / l == k) {
                let local_prev = prev[c] % l;
                *slot = k * l + assign[local_prev];
            }
        }
        curves.push(next);
    }

    let omega_eff = first.omega_eff();
    let threshold = omega_eff / count::<T>(l) * lit(options.threshold_fraction);
    let energy = |i: usize, c: usize| spectra[i].quasienergies[curves[i][c]];
    let mut crossings = Vec::new();
    let grid = spectra.len();
    for a in 0..n {
        for b in a + 1..n {
            let same = a / l == b / l;
            if !same && !options.include_true {
                continue;
            }
            let gaps: Vec<T> = (0..grid).map(|i| circular_distance(energy(i, a), energy(i, b), omega_eff)).collect();
            for i in 1..grid.saturating_sub(1) {
                if gaps[i] < gaps[i - 1] && gaps[i] <= gaps[i + 1] && gaps[i] < threshold {
                    crossings.push(Crossing {
                        grid_index: i,
                        theta: spectra[i].theta,
                        gap: gaps[i],
                        curves: (a, b),
                        blocks: (a / l, b / l),
                        kind: if same { CrossingKind::Avoided } else { CrossingKind::True },
                        t_obs: T::one() / gaps[i],
                    });
                }
            }
        }
    }
    crossings.sort_by(|x, y| {
        x.grid_index.cmp(&y.grid_index).then(x.curves.cmp(&y.curves))
    });
    Ok(CrossingReport { thetas: spectra.iter().map(|s| s.theta).collect(), curves, crossings, ambiguities, threshold })
}

/// Crossings found by refining the grid around a coarse crossing.
#[derive(Debug, Clone, PartialEq)]
pub struct Refinement<T> {
    pub report: CrossingReport<T>,
    /// Parent pair expressed in the refined scan's curve labels.
    pub parent_curves: (usize, usize),
    /// Avoided crossings of other state pairs hidden inside the parent's cell.
    pub nested: Vec<Crossing<T>>,
}

/// Rescans `[Θ_{i−1}, Θ_{i+1}]` around `coarse.crossings[index]` on `points`
/// grid points with `compute` and reports the crossings found there.
pub fn refine_crossing<T: Real, F>(coarse: &CrossingReport<T>, index: usize, points: usize, options: CrossingOptions, compute: F) -> Result<Refinement<T>>
where
    F: Fn(T) -> Result<FloquetSpectrum<T>> + Sync + Send,
{
    let parent = coarse.crossings.get(index).ok_or(Error::InvalidParameter {
        name: "index",
        reason: format!("no crossing {index}"),
    })?;
    if points < 3 {
        return Err(Error::InvalidParameter { name: "points", reason: "need at least 3 points".into() });
    }
    let i = parent.grid_index;
    let lo = coarse.thetas[i - 1];
    let hi = coarse.thetas[i + 1];
    let thetas: Vec<T> = (0..points).map(|m| lo + (hi - lo) * count::<T>(m) / count::<T>(points - 1)).collect();
    let spectra = crate::scan::map_points(&thetas, |&th| compute(th)).into_iter().collect::<Result<Vec<_>>>()?;
    let report = detect_avoided_crossings(&spectra, options)?;
    let start = &coarse.curves[i - 1];
    let parent_curves = {
        let (a, b) = (start[parent.curves.0], start[parent.curves.1]);
        (a.min(b), a.max(b))
    };
    let nested = report
        .avoided()
        .filter(|c| c.curves != parent_curves)
        .cloned()
        .collect();
    Ok(Refinement { report, parent_curves, nested })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::{Integrator, Propagator};
    use crate::model::{build_hamiltonian, DriveProtocol};
    use proptest::prelude::*;
    use std::f64::consts::{FRAC_PI_2, PI};

    fn coarse() -> Integrator {
        Integrator::default().with_steps(1 << 10).with_samples(256)
    }

    fn spectrum(p: &ModelParams<f64>, drive: &DriveProtocol<f64>) -> FloquetSpectrum<f64> {
        let prop = Propagator::new(p, drive, coarse()).unwrap();
        floquet_decompose(&prop.monodromy(p.t0, drive.period()).unwrap(), p).unwrap()
    }

    /// Every oracle value has a partner within `tol` on the circle of width `w`.
    fn same_multiset(got: &[f64], oracle: &[f64], w: f64, tol: f64) {
        let mut used = vec![false; got.len()];
        for &o in oracle {
            let hit = (0..got.len()).find(|&i| !used[i] && circular_distance(got[i], o, w) < tol);
            let i = hit.unwrap_or_else(|| panic!("no partner for {o}"));
            used[i] = true;
        }
    }

    #[test]
    fn folding_range() {
        let w: f64 = 0.3;
        for &e in &[-10.0f64, -0.15, 0.0, 0.149_999, 0.15, 7.3] {
            let f = fold_quasienergy(e, w);
            assert!((-w / 2.0..w / 2.0).contains(&f), "{e} -> {f}");
            let turns = (e - f) / w;
            assert!((turns - turns.round()).abs() < 1e-9);
        }
    }

    #[test]
    fn static_quasienergies_are_folded_eigenvalues() {
        let p = ModelParams::<f64>::new(4).with_interaction(0.4);
        let d = DriveProtocol::static_zero(&p);
        let s = spectrum(&p, &d);
        let ev = nalgebra::SymmetricEigen::new(build_hamiltonian(&p, 0.0).unwrap().to_dense()).eigenvalues;
        let omega = s.omega_eff();
        let oracle: Vec<f64> = ev.iter().map(|&e| fold_quasienergy(e, omega)).collect();
        same_multiset(&s.quasienergies, &oracle, omega, 1e-9);
        // trace of sin κ over the band vanishes
        let total: f64 = s.mean_velocities.iter().sum();
        assert!(total.abs() < 1e-10, "{total} {:?}", s.mean_velocities);
    }

    #[test]
    fn free_pairs_follow_the_single_particle_drive() {
        let p = ModelParams::<f64>::harmonic_mixing_motor(4, 0.7).with_interaction(0.0);
        let d = DriveProtocol::harmonic_mixing(&p);
        let s = spectrum(&p, &d);
        let omega = s.omega_eff();
        let n = 20_000;
        let h = d.period() / n as f64;
        let (mut eps, mut vel) = (Vec::new(), Vec::new());
        for a in 0..4 {
            let kc = 2.0 * PI * a as f64 / 4.0;
            // midpoint rule on the smooth periodic integrands
            let (mut e_c, mut v_c) = (0.0, 0.0);
            for i in 0..n {
                let phase = d.phase((i as f64 + 0.5) * h);
                e_c -= (kc - phase).cos() * h;
                v_c += (kc - phase).sin() * h;
            }
            for b in 0..4 {
                let ks = 2.0 * PI * b as f64 / 4.0;
                eps.push(fold_quasienergy(e_c / d.period() - ks.cos(), omega));
                vel.push(v_c / d.period());
            }
        }
        same_multiset(&s.quasienergies, &eps, omega, 1e-8);
        let mut got = s.mean_velocities.clone();
        got.sort_by(f64::total_cmp);
        vel.sort_by(f64::total_cmp);
        for (g, o) in got.iter().zip(&vel) {
            assert!((g - o).abs() < 1e-6, "{g} vs {o}");
        }
    }

    #[test]
    fn mean_velocities_agree_with_explicit_averages() {
        let p = ModelParams::<f64>::harmonic_mixing_motor(4, 1.2);
        let d = DriveProtocol::harmonic_mixing(&p);
        let s = spectrum(&p, &d);
        let fv = floquet_mean_velocity(&s, &p, &d, coarse(), 256).unwrap();
        for (a, b) in s.mean_velocities.iter().zip(&fv.mean) {
            assert!((a - b).abs() < 1e-6, "{a} vs {b}");
        }
        assert!(fv.richardson_error < 1e-6);
        assert!(fv.traces.iter().all(|t| t.len() == 256));
        assert!(floquet_mean_velocity(&s, &p, &d, coarse(), 33).is_err());
    }

    #[test]
    fn mirror_images_pair_up() {
        let p = ModelParams::<f64>::harmonic_mixing_motor(4, FRAC_PI_2);
        let d = DriveProtocol::harmonic_mixing(&p);
        let plus = spectrum(&p, &d);
        let pm = p.with_theta(-FRAC_PI_2);
        let minus = spectrum(&pm, &DriveProtocol::harmonic_mixing(&pm));
        let pairing = match_parity_partners(&plus, &minus).unwrap();
        assert_eq!(pairing.pairs.len(), 16);
        assert!(pairing.min_overlap > 0.99);
        assert!(pairing.residual < 1e-6, "{}", pairing.residual);
        // Θ = 0 is its own mirror image and k = 0 carries no current there
        let p0 = p.with_theta(0.0);
        let s0 = spectrum(&p0, &DriveProtocol::harmonic_mixing(&p0));
        assert!(s0.block_indices(0).all(|n| s0.mean_velocities[n].abs() < 1e-7));
        let shifted = ModelParams { t0: 3.0, ..pm };
        let wrong = spectrum(&shifted, &DriveProtocol::harmonic_mixing(&shifted));
        assert!(match_parity_partners(&plus, &wrong).is_err());
    }

    /// Two-block toy scan with a level repulsion of width `g` in block 0.
    fn toy_scan(thetas: &[f64], g: f64) -> Vec<FloquetSpectrum<f64>> {
        thetas
            .iter()
            .map(|&x| {
                let phi = 0.5 * g.atan2(x);
                let e = (x * x + g * g).sqrt();
                let lower = DMatrix::from_row_slice(2, 2, &[
                    C::new(-phi.sin(), 0.0), C::new(phi.cos(), 0.0),
                    C::new(phi.cos(), 0.0), C::new(phi.sin(), 0.0),
                ]);
                FloquetSpectrum {
                    l: 2,
                    period: 1.0,
                    t0: 0.0,
                    theta: x,
                    quasienergies: vec![-e, e, -1.5, 1.5],
                    k_labels: vec![0, 0, 1, 1],
                    states: Blocks { l: 2, data: vec![lower, DMatrix::identity(2, 2)] },
                    mean_velocities: Vec::new(),
                    starter_velocities: Vec::new(),
                }
            })
            .collect()
    }

    #[test]
    fn toy_avoided_crossing_is_found_and_refined() {
        let thetas: Vec<f64> = (0..21).map(|i| -1.0 + 0.1 * i as f64).collect();
        let opts = CrossingOptions { include_true: false, ..CrossingOptions::default() };
        let report = detect_avoided_crossings(&toy_scan(&thetas, 0.05), opts).unwrap();
        assert_eq!(report.crossings.len(), 1);
        let c = &report.crossings[0];
        assert_eq!((c.grid_index, c.curves, c.kind), (10, (0, 1), CrossingKind::Avoided));
        assert!((c.gap - 0.1).abs() < 1e-12 && (c.t_obs - 10.0).abs() < 1e-9);
        assert!(report.ambiguities.is_empty());
        let fine = refine_crossing(&report, 0, 11, opts, |x| Ok(toy_scan(&[x], 0.05).remove(0))).unwrap();
        assert_eq!(fine.parent_curves, (0, 1));
        assert!(fine.nested.is_empty());
        assert_eq!(fine.report.avoided().count(), 1);
    }

    #[test]
    fn wide_gaps_are_not_crossings() {
        let thetas: Vec<f64> = (0..21).map(|i| -1.0 + 0.1 * i as f64).collect();
        let report = detect_avoided_crossings(&toy_scan(&thetas, 0.6), CrossingOptions { include_true: false, ..Default::default() }).unwrap();
        assert!(report.crossings.is_empty());
        assert!(detect_avoided_crossings::<f64>(&[], CrossingOptions::default()).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(12))]

        #[test]
        fn spectrum_is_a_unitary_eigenbasis(theta in -3.2f64..3.2, w in -0.5f64..0.5) {
            let p = ModelParams::<f64>::harmonic_mixing_motor(3, theta).with_interaction(w);
            let d = DriveProtocol::harmonic_mixing(&p);
            let prop = Propagator::new(&p, &d, Integrator::default().with_steps(256).with_samples(32)).unwrap();
            let m = prop.monodromy(0.0, d.period()).unwrap();
            let s = floquet_decompose(&m, &p).unwrap();
            prop_assert_eq!(s.len(), 9);
            let (u, _) = m.blocks().unwrap();
            for k in 0..3 {
                let q = &s.states.data[k];
                let defect = (q.adjoint() * q - DMatrix::identity(3, 3)).iter().map(|z| z.norm()).fold(0.0, f64::max);
                prop_assert!(defect < 1e-10);
                for (c, n) in s.block_indices(k).enumerate() {
                    let e = s.quasienergies[n];
                    let lam = C::new((e * s.period).cos(), -(e * s.period).sin());
                    let r = &u.data[k] * q.column(c) - q.column(c) * lam;
                    prop_assert!(r.norm() < 1e-8);
                    prop_assert!((-s.omega_eff() / 2.0..s.omega_eff() / 2.0).contains(&e));
                }
            }
            let (lo, hi) = s.velocity_range().unwrap();
            prop_assert!(lo >= -1.0 && hi <= 1.0);
        }
    }
}
