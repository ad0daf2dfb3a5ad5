//! Unitary time evolution and one-period propagators.
//!
//! Two independent backends realize the time-ordered exponential:
//!
//! * [`Backend::Blocks`] works in the total-quasimomentum blocks, where each
//!   frozen Hamiltonian is `diag(ε(A)) + (W/L)𝟙𝟙ᵀ` and its exponential action
//!   costs `O(L²)` per block column (scaled Taylor series).
//! * [`Backend::Krylov`] works on the sparse site-basis Hamiltonian with a
//!   Lanczos exponential action and never uses the block structure, so it
//!   serves as the cross-check for quasimomentum conservation.
//!
//! Both use the same time discretization ([`Scheme`]).

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::blocks::{starter_index, Blocks, MomentumBasis, MomentumGrid};
use crate::error::{Error, Result};
use crate::model::{build_hamiltonian, DriveProtocol, ModelParams, StateVector};
use crate::observables::{block_velocities, VelocityTrace};
use crate::scalar::{cis, count, lit, to_f64, Real, C};
use crate::sparse::SparseMatrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Scheme {
    /// `ψ ← exp(−i H(t + dt/2) dt) ψ`; second order.
    MidpointExponential,
    /// Two-exponential commutator-free Magnus scheme on the Gauss nodes; fourth order.
    CommutatorFree4,
}

/// Time discretization shared by every propagation path.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Integrator {
    /// Steps per drive period; a power of two, at least 64.
    pub steps_per_period: usize,
    pub scheme: Scheme,
    /// Norm-drift and unitarity tolerance.
    pub tolerance: f64,
    /// Quadrature nodes per period for period averages.
    #[serde(default = "default_samples")]
    pub samples_per_period: usize,
}

fn default_samples() -> usize {
    128
}

impl Default for Integrator {
    fn default() -> Self {
        Self {
            steps_per_period: 1 << 12,
            scheme: Scheme::CommutatorFree4,
            tolerance: 1e-10,
            samples_per_period: default_samples(),
        }
    }
}

impl Integrator {
    pub fn with_steps(mut self, steps_per_period: usize) -> Self {
        self.steps_per_period = steps_per_period;
        self
    }

    pub fn with_scheme(mut self, scheme: Scheme) -> Self {
        self.scheme = scheme;
        self
    }

    pub fn with_samples(mut self, samples: usize) -> Self {
        self.samples_per_period = samples;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.steps_per_period < 64 || !self.steps_per_period.is_power_of_two() {
            return Err(Error::InvalidParameter {
                name: "steps_per_period",
                reason: format!("must be a power of two >= 64, got {}", self.steps_per_period),
            });
        }
        if self.samples_per_period < 2 {
            return Err(Error::InvalidParameter {
                name: "samples_per_period",
                reason: format!("need at least 2 quadrature nodes, got {}", self.samples_per_period),
            });
        }
        if !(self.tolerance > 0.0 && self.tolerance.is_finite()) {
            return Err(Error::InvalidParameter { name: "tolerance", reason: "must be positive".into() });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Backend {
    #[default]
    Blocks,
    Krylov,
}

const GAUSS_OFFSET: f64 = 0.288_675_134_594_812_9; // √3/6
const CF4_MAJOR: f64 = 0.25 + GAUSS_OFFSET;
const CF4_MINOR: f64 = 0.25 - GAUSS_OFFSET;

/// The frozen block Hamiltonians as functions of the vector potential.
#[derive(Debug, Clone)]
pub(crate) struct BlockGenerator<T> {
    l: usize,
    grid: MomentumGrid<T>,
    j_c: T,
    /// `−J_s cos κ_s` per block and entry.
    starter_energy: Vec<Vec<T>>,
    /// Coefficient of `𝟙𝟙ᵀ`, `W/L`.
    w_over_l: T,
}

impl<T: Real> BlockGenerator<T> {
    pub fn new(p: &ModelParams<T>) -> Self {
        let l = p.l;
        let grid = MomentumGrid::new(l);
        let starter_energy = (0..l)
            .map(|k| (0..l).map(|j| -p.j_s * grid.cos[starter_index(l, k, j)]).collect())
            .collect();
        Self { l, grid, j_c: p.j_c, starter_energy, w_over_l: p.w / count::<T>(l) }
    }

    /// `ε_j(A) = −J_c cos(κ_j − A) − J_s cos κ_s` for block `k`, written into `out`.
    fn diagonal(&self, k: usize, cos_a: T, sin_a: T, scale: T, out: &mut [T]) {
        for j in 0..self.l {
            let carrier = self.grid.cos[j] * cos_a + self.grid.sin[j] * sin_a;
            out[j] += scale * (-self.j_c * carrier + self.starter_energy[k][j]);
        }
    }

    /// Carrier velocity `sin(κ_j − A)` (units of `v₀`).
    pub fn carrier_velocity(&self, a: T, out: &mut [T]) {
        let (s, c) = (a.sin(), a.cos());
        for j in 0..self.l {
            out[j] = self.grid.sin[j] * c - self.grid.cos[j] * s;
        }
    }

    /// Starter velocity `sin κ_s` (units of `J_s d/ħ`) for block `k`.
    pub fn starter_velocity(&self, k: usize, out: &mut [T]) {
        for j in 0..self.l {
            out[j] = self.grid.sin[starter_index(self.l, k, j)];
        }
    }
}

/// `ψ ← exp(−iτ(diag(d) + w𝟙𝟙ᵀ)) ψ` for every column of `psi`.
///
/// Scaled Taylor series around the spectral centre; term count is chosen from
/// the norm bound so the truncation error stays below machine precision.
fn expm_rank_one_apply<T: Real>(psi: &mut DMatrix<C<T>>, diag: &[T], w: T, tau: T, term: &mut Vec<C<T>>) {
    let n = diag.len();
    let (mut lo, mut hi) = (diag[0], diag[0]);
    for &d in diag {
        lo = lo.min(d);
        hi = hi.max(d);
    }
    let wl = w * count::<T>(n);
    let centre = (hi + lo) * lit(0.5) + wl * lit(0.5);
    let radius = (hi - lo) * lit(0.5) + wl.abs() * lit(0.5);
    let half = lit::<T>(0.5);
    let substeps = ((tau.abs() * radius) / half).ceil().to_f64().unwrap_or(1.0).max(1.0) as usize;
    let sub_tau = tau / count::<T>(substeps);
    let beta = (sub_tau * radius).abs();
    let eps = T::default_epsilon() * lit(0.01);
    let mut terms = 0usize;
    let mut bound = T::one();
    while bound > eps && terms < 60 {
        terms += 1;
        bound = bound * beta / count::<T>(terms);
    }
    let global = cis(-sub_tau * centre);
    let shifted: Vec<T> = diag.iter().map(|&d| d - centre).collect();
    term.resize(n, C::new(T::zero(), T::zero()));
    for col in psi.column_iter_mut() {
        let mut col = col;
        for _ in 0..substeps {
            term.copy_from_slice(col.as_slice());
            for m in 1..=terms {
                let sum = term.iter().fold(C::new(T::zero(), T::zero()), |a, z| a + *z);
                let coupling = sum * w;
                // factor −iτ/m
                let factor = C::new(T::zero(), -sub_tau / count::<T>(m));
                for (x, &d) in term.iter_mut().zip(&shifted) {
                    *x = (*x * d + coupling) * factor;
                }
                for (acc, x) in col.iter_mut().zip(term.iter()) {
                    *acc += *x;
                }
            }
            for acc in col.iter_mut() {
                *acc *= global;
            }
        }
    }
}

/// Lanczos approximation of `exp(−iτH) v`.
pub fn krylov_expm_apply<T: Real>(
    h: &SparseMatrix<T>,
    v: &DVector<C<T>>,
    tau: T,
    tol: T,
    max_dim: usize,
) -> Result<DVector<C<T>>> {
    let n = v.len();
    let beta0 = v.norm();
    if beta0 == T::zero() {
        return Ok(v.clone());
    }
    let max_dim = max_dim.min(n).max(1);
    let mut basis: Vec<DVector<C<T>>> = vec![v / C::new(beta0, T::zero())];
    let mut alpha: Vec<T> = Vec::new();
    let mut beta: Vec<T> = Vec::new();
    let mut residual = T::max_value().unwrap_or_else(T::one);
    for m in 1..=max_dim {
        let mut w = h.matvec(&basis[m - 1]);
        let a = basis[m - 1].dotc(&w).re;
        alpha.push(a);
        // full reorthogonalization, twice
        for _ in 0..2 {
            for q in &basis {
                let c = q.dotc(&w);
                w -= q * c;
            }
        }
        let b = w.norm();
        let coeffs = tridiagonal_expm_first_column(&alpha, &beta, tau);
        let exhausted = b <= T::default_epsilon() * lit(100.0) * (T::one() + a.abs());
        residual = b * coeffs[m - 1].norm_sqr().sqrt();
        if exhausted || residual <= tol || m == max_dim {
            if !(exhausted || residual <= tol) {
                return Err(Error::ExponentialDiverged { residual: to_f64(residual), dim: m });
            }
            let mut out = DVector::zeros(n);
            for (q, c) in basis.iter().zip(&coeffs) {
                out += q * (*c * beta0);
            }
            return Ok(out);
        }
        beta.push(b);
        basis.push(w / C::new(b, T::zero()));
    }
    Err(Error::ExponentialDiverged { residual: to_f64(residual), dim: max_dim })
}

/// First column of `exp(−iτ T_m)` for the Lanczos tridiagonal matrix.
fn tridiagonal_expm_first_column<T: Real>(alpha: &[T], beta: &[T], tau: T) -> Vec<C<T>> {
    let m = alpha.len();
    let mut t = DMatrix::<T>::zeros(m, m);
    for i in 0..m {
        t[(i, i)] = alpha[i];
        if i + 1 < m {
            t[(i, i + 1)] = beta[i];
            t[(i + 1, i)] = beta[i];
        }
    }
    let eig = SymmetricEigen::new(t);
    (0..m)
        .map(|i| {
            (0..m).fold(C::new(T::zero(), T::zero()), |acc, k| {
                let q = eig.eigenvectors[(i, k)] * eig.eigenvectors[(0, k)];
                acc + cis(-tau * eig.eigenvalues[k]) * q
            })
        })
        .collect()
}

/// Which vector potential the integrator sees.
#[derive(Debug, Clone, Copy)]
pub(crate) enum PhaseSource {
    /// `Ã(t; t₀)` with the switch-on step.
    Switched,
    /// The drive continued over all times; used for sweeps that start before `t₀`.
    Continued,
}

/// Evolution engine for one parameter point.
#[derive(Debug, Clone)]
pub struct Propagator<T: Real> {
    params: ModelParams<T>,
    drive: DriveProtocol<T>,
    integrator: Integrator,
    backend: Backend,
    generator: BlockGenerator<T>,
    basis: MomentumBasis<T>,
}

/// Result of [`Propagator::propagate`].
#[derive(Debug, Clone)]
pub struct Propagation<T: Real> {
    pub final_state: StateVector<T>,
    pub trace: VelocityTrace<T>,
}

impl<T: Real> Propagator<T> {
    pub fn new(params: &ModelParams<T>, drive: &DriveProtocol<T>, integrator: Integrator) -> Result<Self> {
        params.validate()?;
        integrator.validate()?;
        Ok(Self {
            params: *params,
            drive: *drive,
            integrator,
            backend: Backend::Blocks,
            generator: BlockGenerator::new(params),
            basis: MomentumBasis::new(params.l),
        })
    }

    pub fn with_backend(mut self, backend: Backend) -> Self {
        self.backend = backend;
        self
    }

    pub fn params(&self) -> &ModelParams<T> {
        &self.params
    }

    pub fn drive(&self) -> &DriveProtocol<T> {
        &self.drive
    }

    pub fn integrator(&self) -> &Integrator {
        &self.integrator
    }

    pub fn basis(&self) -> &MomentumBasis<T> {
        &self.basis
    }

    pub(crate) fn generator(&self) -> &BlockGenerator<T> {
        &self.generator
    }

    /// Nominal step length `T / steps_per_period`.
    pub fn nominal_dt(&self) -> T {
        self.drive.period() / count::<T>(self.integrator.steps_per_period)
    }

    fn phase_at(&self, source: PhaseSource, t: T) -> T {
        match source {
            PhaseSource::Switched => self.drive.value(t),
            PhaseSource::Continued => self.drive.phase(t),
        }
    }

    /// The `(weights, time offsets)` of the exponentials in one step, applied in order.
    fn stages(&self) -> &'static [(&'static [(f64, f64)], f64)] {
        // each stage: list of (weight, node offset in units of dt), and the 𝟙𝟙ᵀ weight
        const MID: &[(&[(f64, f64)], f64)] = &[(&[(1.0, 0.5)], 1.0)];
        const CF4: &[(&[(f64, f64)], f64)] = &[
            (&[(CF4_MAJOR, 0.5 - GAUSS_OFFSET), (CF4_MINOR, 0.5 + GAUSS_OFFSET)], 0.5),
            (&[(CF4_MINOR, 0.5 - GAUSS_OFFSET), (CF4_MAJOR, 0.5 + GAUSS_OFFSET)], 0.5),
        ];
        match self.integrator.scheme {
            Scheme::MidpointExponential => MID,
            Scheme::CommutatorFree4 => CF4,
        }
    }

    /// Advances every column of `blocks` by `n` steps of size `dt` from `t`.
    pub(crate) fn advance_blocks(&self, blocks: &mut Blocks<T>, source: PhaseSource, t: T, dt: T, n: usize) {
        let l = self.params.l;
        let mut diag = vec![T::zero(); l];
        let mut work = Vec::with_capacity(l);
        let stages = self.stages();
        let mut trig: Vec<Vec<(T, T, T)>> = stages.iter().map(|(nodes, _)| Vec::with_capacity(nodes.len())).collect();
        for step in 0..n {
            let t_step = t + dt * count::<T>(step);
            for (s, (nodes, _)) in stages.iter().enumerate() {
                trig[s].clear();
                for &(weight, offset) in nodes.iter() {
                    let a = self.phase_at(source, t_step + dt * lit(offset));
                    trig[s].push((a.cos(), a.sin(), lit(weight)));
                }
            }
            for (k, block) in blocks.data.iter_mut().enumerate() {
                for (s, (_, rank_one)) in stages.iter().enumerate() {
                    diag.iter_mut().for_each(|d| *d = T::zero());
                    for &(c, sn, weight) in &trig[s] {
                        self.generator.diagonal(k, c, sn, weight, &mut diag);
                    }
                    let w = self.generator.w_over_l * lit(*rank_one);
                    expm_rank_one_apply(block, &diag, w, dt, &mut work);
                }
            }
        }
    }

    /// Frozen site-basis Hamiltonian of one stage.
    fn stage_hamiltonian(&self, source: PhaseSource, t: T, dt: T, nodes: &[(f64, f64)], rank_one: f64) -> Result<SparseMatrix<T>> {
        let l = self.params.l;
        let free = ModelParams { w: T::zero(), ..self.params };
        let mut triplets = Vec::with_capacity(5 * l * l * nodes.len());
        for &(weight, offset) in nodes {
            let h = build_hamiltonian(&free, self.phase_at(source, t + dt * lit(offset)))?;
            for r in 0..h.dim() {
                triplets.extend(h.row(r).map(|(c, v)| (r, c, v * lit::<T>(weight))));
            }
        }
        let w = self.params.w * lit(rank_one);
        for site in 0..l {
            let i = crate::model::flat0(l, site, site);
            triplets.push((i, i, C::new(w, T::zero())));
        }
        Ok(SparseMatrix::from_triplets(l * l, triplets))
    }

    fn advance_site(&self, psi: &mut DVector<C<T>>, source: PhaseSource, t: T, dt: T, n: usize) -> Result<()> {
        let tol = lit::<T>(self.integrator.tolerance) * lit(1e-3);
        for step in 0..n {
            let t_step = t + dt * count::<T>(step);
            for (nodes, rank_one) in self.stages() {
                let h = self.stage_hamiltonian(source, t_step, dt, nodes, *rank_one)?;
                *psi = krylov_expm_apply(&h, psi, dt, tol, 40)?;
            }
        }
        Ok(())
    }

    /// One integrator step of length `dt` on a site-basis state.
    pub fn step(&self, state: &StateVector<T>, dt: T) -> Result<StateVector<T>> {
        if !(dt > T::zero()) {
            return Err(Error::InvalidParameter { name: "dt", reason: "must be positive".into() });
        }
        let tol = lit::<T>(self.integrator.tolerance);
        state.check_normalized(tol)?;
        let psi = match self.backend {
            Backend::Blocks => {
                let mut blocks = self.basis.to_blocks(&state.amplitudes)?;
                self.advance_blocks(&mut blocks, PhaseSource::Switched, state.time, dt, 1);
                self.basis.from_blocks(&blocks)
            }
            Backend::Krylov => {
                if state.dim() != self.params.dim() {
                    return Err(Error::DimensionMismatch { expected: self.params.dim(), found: state.dim() });
                }
                let mut psi = state.amplitudes.clone();
                self.advance_site(&mut psi, PhaseSource::Switched, state.time, dt, 1)?;
                psi
            }
        };
        Ok(StateVector::new(psi, state.time + dt))
    }

    /// Number of steps of roughly the nominal length covering `span`.
    pub(crate) fn steps_for(&self, span: T) -> usize {
        let n = (span / self.nominal_dt()).ceil().to_f64().unwrap_or(1.0);
        (n.max(1.0)) as usize
    }

    /// Integrates `state` to `t_final`, recording `samples + 1` equally spaced
    /// velocity snapshots (the initial time included).
    pub fn propagate(&self, state: &StateVector<T>, t_final: T, samples: usize) -> Result<Propagation<T>> {
        if !(t_final > state.time) {
            return Err(Error::InvalidParameter { name: "t_final", reason: "must lie after the state's time".into() });
        }
        if samples == 0 {
            return Err(Error::InvalidParameter { name: "samples", reason: "need at least one sample".into() });
        }
        let tol = lit::<T>(self.integrator.tolerance);
        state.check_normalized(tol)?;
        let interval = (t_final - state.time) / count::<T>(samples);
        let sub = self.steps_for(interval);
        let dt = interval / count::<T>(sub);

        let mut times = Vec::with_capacity(samples + 1);
        let mut v_c = Vec::with_capacity(samples + 1);
        let mut v_s = Vec::with_capacity(samples + 1);
        let record = |blocks: &Blocks<T>, t: T, times: &mut Vec<T>, v_c: &mut Vec<T>, v_s: &mut Vec<T>| {
            let (c, s) = block_velocities(&self.generator, blocks, self.drive.value(t));
            times.push(t);
            v_c.push(c);
            v_s.push(s);
        };

        let mut site = state.amplitudes.clone();
        let mut blocks = self.basis.to_blocks(&site)?;
        record(&blocks, state.time, &mut times, &mut v_c, &mut v_s);
        for i in 0..samples {
            let t = state.time + interval * count::<T>(i);
            match self.backend {
                Backend::Blocks => self.advance_blocks(&mut blocks, PhaseSource::Switched, t, dt, sub),
                Backend::Krylov => {
                    self.advance_site(&mut site, PhaseSource::Switched, t, dt, sub)?;
                    blocks = self.basis.to_blocks(&site)?;
                }
            }
            let t_next = state.time + interval * count::<T>(i + 1);
            let drift = (blocks.norm_sqr().sqrt() - T::one()).abs();
            if drift > tol {
                return Err(Error::NormDrift { drift: to_f64(drift), time: to_f64(t_next) });
            }
            record(&blocks, t_next, &mut times, &mut v_c, &mut v_s);
        }
        let final_amps = match self.backend {
            Backend::Blocks => self.basis.from_blocks(&blocks),
            Backend::Krylov => site,
        };
        let trace = VelocityTrace::from_samples(times, v_c, v_s, self.drive.t0, self.drive.period());
        Ok(Propagation { final_state: StateVector::new(final_amps, t_final), trace })
    }

    /// `U(t₀ + period, t₀)` with the period-averaged velocity operators.
    pub fn monodromy(&self, t0: T, period: T) -> Result<Monodromy<T>> {
        match self.backend {
            Backend::Blocks => Ok(PeriodSweep::compute(self, t0, period, 1)?.monodromy_at(0)),
            Backend::Krylov => self.monodromy_site(t0, period),
        }
    }

    fn monodromy_site(&self, t0: T, period: T) -> Result<Monodromy<T>> {
        let dim = self.params.dim();
        let n = self.steps_for(period);
        let dt = period / count::<T>(n);
        let columns: Vec<Result<DVector<C<T>>>> = (0..dim)
            .map(|c| {
                let mut e = DVector::zeros(dim);
                e[c] = C::new(T::one(), T::zero());
                self.advance_site(&mut e, PhaseSource::Continued, t0, dt, n)?;
                Ok(e)
            })
            .collect();
        let mut u = DMatrix::zeros(dim, dim);
        for (c, col) in columns.into_iter().enumerate() {
            u.set_column(c, &col?);
        }
        let m = Monodromy { l: self.params.l, t0, period, repr: Repr::Site(u), carrier_average: None, starter_average: None };
        let defect = m.unitarity_defect();
        if defect > lit(self.integrator.tolerance) {
            return Err(Error::NotUnitary { defect: to_f64(defect) });
        }
        Ok(m)
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Repr<T: Real> {
    Blocks(Blocks<T>),
    Site(DMatrix<C<T>>),
}

/// One-period propagator `U(t₀ + period, t₀)`.
///
/// When produced by the block backend it also carries the period-averaged
/// Heisenberg velocities `V̄ = period⁻¹ ∫ U(t,t₀)† v̂(t) U(t,t₀) dt` for the
/// carrier and the starter, whose Floquet-basis diagonals are the mean
/// Floquet velocities.
#[derive(Debug, Clone, PartialEq)]
pub struct Monodromy<T: Real> {
    pub l: usize,
    pub t0: T,
    pub period: T,
    repr: Repr<T>,
    pub carrier_average: Option<Blocks<T>>,
    pub starter_average: Option<Blocks<T>>,
}

impl<T: Real> Monodromy<T> {
    pub fn from_blocks(l: usize, t0: T, period: T, blocks: Blocks<T>) -> Self {
        Self { l, t0, period, repr: Repr::Blocks(blocks), carrier_average: None, starter_average: None }
    }

    pub fn from_site_matrix(l: usize, t0: T, period: T, matrix: DMatrix<C<T>>) -> Self {
        Self { l, t0, period, repr: Repr::Site(matrix), carrier_average: None, starter_average: None }
    }

    /// Dense site-basis matrix.
    pub fn site_matrix(&self) -> DMatrix<C<T>> {
        match &self.repr {
            Repr::Blocks(b) => MomentumBasis::new(self.l).to_site_matrix(b),
            Repr::Site(m) => m.clone(),
        }
    }

    /// Momentum blocks together with the largest off-block element.
    pub fn blocks(&self) -> Result<(Blocks<T>, T)> {
        match &self.repr {
            Repr::Blocks(b) => Ok((b.clone(), T::zero())),
            Repr::Site(m) => MomentumBasis::new(self.l).from_site_matrix(m),
        }
    }

    pub fn block_leakage(&self) -> Result<T> {
        Ok(self.blocks()?.1)
    }

    pub fn unitarity_defect(&self) -> T {
        match &self.repr {
            Repr::Blocks(b) => b.unitarity_defect(),
            Repr::Site(m) => {
                let g = m.adjoint() * m;
                let mut worst = T::zero();
                for i in 0..g.nrows() {
                    for j in 0..g.ncols() {
                        let target = if i == j { T::one() } else { T::zero() };
                        worst = worst.max((g[(i, j)] - C::new(target, T::zero())).norm_sqr().sqrt());
                    }
                }
                worst
            }
        }
    }

    /// Eigenvalues of the full propagator (block by block).
    pub fn eigenvalues(&self) -> Result<Vec<C<T>>> {
        let (blocks, _) = self.blocks()?;
        Ok(blocks
            .data
            .into_iter()
            .flat_map(|b| b.schur().eigenvalues().map(|v| v.iter().copied().collect::<Vec<_>>()).unwrap_or_default())
            .collect())
    }
}

/// One sweep over a full period from `origin`, keeping the propagators at
/// `n_t0` equally spaced switch-on times and the running velocity integrals.
///
/// For a switch-on time `t₀ⱼ = origin + j·P/n_t0` everything needed for the
/// asymptotic analysis follows from the sweep by periodicity:
/// `U(t₀ⱼ+P, t₀ⱼ) = Uⱼ U_P Uⱼ†` and
/// `P·V̄(t₀ⱼ) = Uⱼ [ (S_P − Sⱼ) + U_P† Sⱼ U_P ] Uⱼ†`, where `Sⱼ` is the
/// quadrature of `U(t,origin)† v̂(t) U(t,origin)` over `[origin, t₀ⱼ)`.
#[derive(Debug, Clone)]
pub struct PeriodSweep<T: Real> {
    pub l: usize,
    pub origin: T,
    pub period: T,
    pub n_t0: usize,
    /// `U(t₀ⱼ, origin)` for `j = 0..=n_t0`; the last entry is `U_P`.
    pub snapshots: Vec<Blocks<T>>,
    carrier_prefix: Vec<Blocks<T>>,
    starter_prefix: Vec<Blocks<T>>,
    /// Quadrature nodes between consecutive switch-on times.
    pub nodes_per_t0: usize,
    /// Carrier prefix at every quadrature node, kept on request.
    carrier_nodes: Vec<Blocks<T>>,
    /// `Uⱼ† v̂_c(t₀ⱼ) Uⱼ` at the switch-on nodes.
    carrier_instant: Vec<Blocks<T>>,
}

impl<T: Real> PeriodSweep<T> {
    /// Sweeps `[origin, origin + period)` with the continued drive.
    ///
    /// The quadrature grid holds `n_t0·⌈M/n_t0⌉` nodes, `M` the configured
    /// samples for the period, so that every switch-on time is a node.
    pub fn compute(prop: &Propagator<T>, origin: T, period: T, n_t0: usize) -> Result<Self> {
        Self::compute_with_nodes(prop, origin, period, n_t0, false)
    }

    /// As [`PeriodSweep::compute`], optionally keeping the carrier integral
    /// at every quadrature node for intra-period running averages.
    pub fn compute_with_nodes(prop: &Propagator<T>, origin: T, period: T, n_t0: usize, keep_nodes: bool) -> Result<Self> {
        if n_t0 == 0 {
            return Err(Error::InvalidParameter { name: "n_t0", reason: "need at least one switch-on time".into() });
        }
        if !(period > T::zero()) {
            return Err(Error::InvalidParameter { name: "period", reason: "must be positive".into() });
        }
        let l = prop.params.l;
        let drive_periods = (period / prop.drive.period()).to_f64().unwrap_or(1.0).max(1e-12);
        let wanted = ((prop.integrator.samples_per_period as f64) * drive_periods).ceil() as usize;
        let per_t0 = wanted.div_ceil(n_t0).max(1);
        let nodes = per_t0 * n_t0;
        let h = period / count::<T>(nodes);
        let sub = prop.steps_for(h);
        let dt = h / count::<T>(sub);

        let mut u = Blocks::identity(l);
        let mut sum_c = Blocks::zeros(l, l);
        let mut sum_s = Blocks::zeros(l, l);
        let mut snapshots = vec![u.clone()];
        let mut carrier_prefix = vec![sum_c.clone()];
        let mut starter_prefix = vec![sum_s.clone()];
        let mut carrier_nodes = if keep_nodes { vec![sum_c.clone()] } else { Vec::new() };
        let mut carrier_instant = Vec::with_capacity(n_t0);

        let mut v = vec![T::zero(); l];
        let mut starter_v: Vec<Vec<T>> = vec![vec![T::zero(); l]; l];
        for (k, row) in starter_v.iter_mut().enumerate() {
            prop.generator.starter_velocity(k, row);
        }
        for i in 0..nodes {
            let t = origin + h * count::<T>(i);
            prop.generator.carrier_velocity(prop.drive.phase(t), &mut v);
            if i % per_t0 == 0 {
                let mut inst = Blocks::zeros(l, l);
                for k in 0..l {
                    accumulate_sandwich(&mut inst.data[k], &u.data[k], &v, T::one());
                }
                carrier_instant.push(inst);
            }
            for k in 0..l {
                accumulate_sandwich(&mut sum_c.data[k], &u.data[k], &v, h);
                accumulate_sandwich(&mut sum_s.data[k], &u.data[k], &starter_v[k], h);
            }
            prop.advance_blocks(&mut u, PhaseSource::Continued, t, dt, sub);
            if keep_nodes {
                carrier_nodes.push(sum_c.clone());
            }
            if (i + 1) % per_t0 == 0 {
                snapshots.push(u.clone());
                carrier_prefix.push(sum_c.clone());
                starter_prefix.push(sum_s.clone());
            }
        }
        let defect = u.unitarity_defect();
        if defect > lit(prop.integrator.tolerance) {
            return Err(Error::NotUnitary { defect: to_f64(defect) });
        }
        Ok(Self { l, origin, period, n_t0, snapshots, carrier_prefix, starter_prefix, nodes_per_t0: per_t0, carrier_nodes, carrier_instant })
    }

    pub fn t0(&self, j: usize) -> T {
        self.origin + self.period * count::<T>(j) / count::<T>(self.n_t0)
    }

    pub fn one_period(&self) -> &Blocks<T> {
        &self.snapshots[self.n_t0]
    }

    /// Heisenberg-picture period average at `t₀ⱼ`, expressed in the frame
    /// of `origin`: `Uⱼ† V̄(t₀ⱼ) Uⱼ`.
    pub(crate) fn origin_frame_average(&self, j: usize, carrier: bool) -> Blocks<T> {
        let prefix = if carrier { &self.carrier_prefix } else { &self.starter_prefix };
        let total = &prefix[self.n_t0];
        let before = &prefix[j];
        let u_p = self.one_period();
        total.sub(before).add(&u_p.sandwich(before)).scale(T::one() / self.period)
    }

    pub fn nodes(&self) -> usize {
        self.nodes_per_t0 * self.n_t0
    }

    pub fn has_nodes(&self) -> bool {
        !self.carrier_nodes.is_empty()
    }

    /// Carrier velocity integral over the first `m` quadrature nodes after
    /// `t₀ⱼ`, in the frame of `origin`; needs the node prefixes.
    pub(crate) fn partial_carrier_integral(&self, j: usize, m: usize) -> Blocks<T> {
        let nodes = self.nodes();
        let s = j * self.nodes_per_t0;
        let sn = &self.carrier_nodes;
        if s + m <= nodes {
            sn[s + m].sub(&sn[s])
        } else {
            sn[nodes].sub(&sn[s]).add(&self.one_period().sandwich(&sn[s + m - nodes]))
        }
    }

    /// Instantaneous carrier velocity operator `m` nodes after `t₀ⱼ`, in the
    /// frame of `origin`. Beyond `m = 0` it needs the node prefixes.
    pub(crate) fn carrier_instant(&self, j: usize, m: usize) -> Blocks<T> {
        if m == 0 {
            return self.carrier_instant[j].clone();
        }
        let nodes = self.nodes();
        let x = j * self.nodes_per_t0 + m;
        let h = self.period / count::<T>(nodes);
        if x < nodes {
            self.carrier_nodes[x + 1].sub(&self.carrier_nodes[x]).scale(T::one() / h)
        } else if x == nodes {
            self.one_period().sandwich(&self.carrier_instant[0])
        } else {
            let inner = self.carrier_nodes[x - nodes + 1].sub(&self.carrier_nodes[x - nodes]).scale(T::one() / h);
            self.one_period().sandwich(&inner)
        }
    }

    /// The monodromy and its velocity averages at `t₀ⱼ`.
    pub fn monodromy_at(&self, j: usize) -> Monodromy<T> {
        let uj = &self.snapshots[j];
        let to_lab = |inner: Blocks<T>| uj.adjoint().sandwich(&inner);
        let u = uj.mul(self.one_period()).mul(&uj.adjoint());
        Monodromy {
            l: self.l,
            t0: self.t0(j),
            period: self.period,
            repr: Repr::Blocks(u),
            carrier_average: Some(to_lab(self.origin_frame_average(j, true))),
            starter_average: Some(to_lab(self.origin_frame_average(j, false))),
        }
    }
}

/// `acc += h · U† diag(v) U`.
fn accumulate_sandwich<T: Real>(acc: &mut DMatrix<C<T>>, u: &DMatrix<C<T>>, v: &[T], h: T) {
    let mut scaled = u.clone();
    for (mut row, &vj) in scaled.row_iter_mut().zip(v) {
        row *= C::new(vj * h, T::zero());
    }
    acc.gemm_ad(C::new(T::one(), T::zero()), u, &scaled, C::new(T::one(), T::zero()));
}

/// Free-function form of [`Propagator::step`] with the default integrator.
pub fn step<T: Real>(p: &ModelParams<T>, state: &StateVector<T>, d: &DriveProtocol<T>, dt: T) -> Result<StateVector<T>> {
    Propagator::new(p, d, Integrator::default())?.step(state, dt)
}

/// Free-function form of [`Propagator::propagate`].
pub fn propagate<T: Real>(
    p: &ModelParams<T>,
    state: &StateVector<T>,
    d: &DriveProtocol<T>,
    integrator: Integrator,
    t_final: T,
    samples: usize,
) -> Result<Propagation<T>> {
    Propagator::new(p, d, integrator)?.propagate(state, t_final, samples)
}

/// Free-function form of [`Propagator::monodromy`].
pub fn monodromy<T: Real>(
    p: &ModelParams<T>,
    d: &DriveProtocol<T>,
    integrator: Integrator,
    t0: T,
    period: T,
) -> Result<Monodromy<T>> {
    Propagator::new(p, d, integrator)?.monodromy(t0, period)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::blocks::kappa;
    use crate::model::initial_state;
    use proptest::prelude::*;
    use rand::{rngs::StdRng, Rng, SeedableRng};

    fn random_state(dim: usize, rng: &mut StdRng) -> StateVector<f64> {
        let v = DVector::from_fn(dim, |_, _| C::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)));
        let n = v.norm();
        StateVector::new(v / C::new(n, 0.0), 0.0)
    }

    fn coarse() -> Integrator {
        Integrator::default().with_steps(1 << 10)
    }

    #[test]
    fn static_plane_wave_picks_up_its_phase() {
        let p = ModelParams::<f64>::new(6);
        let d = DriveProtocol::static_zero(&p);
        let prop = Propagator::new(&p, &d, coarse()).unwrap();
        for (k, j) in [(0, 0), (2, 1), (5, 4)] {
            let psi = StateVector::new(prop.basis().momentum_state(k, j), 0.0);
            let kc: f64 = kappa(6, j);
            let ks: f64 = kappa(6, starter_index(6, k, j));
            let e = -kc.cos() - ks.cos();
            let t = 37.5;
            let out = prop.propagate(&psi, t, 3).unwrap().final_state;
            let overlap = psi.amplitudes.dotc(&out.amplitudes);
            assert!((overlap - C::new((e * t).cos(), -(e * t).sin())).norm() < 1e-11, "{k} {j}");
        }
    }

    #[test]
    fn static_monodromy_matches_dense_exponential() {
        let p = ModelParams::<f64>::new(4).with_interaction(0.7);
        let d = DriveProtocol::static_zero(&p);
        let period = 11.0;
        let h = build_hamiltonian(&p, 0.0).unwrap().to_dense();
        let eig = SymmetricEigen::new(h);
        let phases = DMatrix::from_diagonal(&eig.eigenvalues.map(|e| C::new((e * period).cos(), -(e * period).sin())));
        let oracle = &eig.eigenvectors * phases * eig.eigenvectors.adjoint();
        for backend in [Backend::Blocks, Backend::Krylov] {
            let prop = Propagator::new(&p, &d, coarse()).unwrap().with_backend(backend);
            let u = prop.monodromy(0.0, period).unwrap().site_matrix();
            let err = (&u - &oracle).iter().map(|z| z.norm()).fold(0.0, f64::max);
            assert!(err < 1e-10, "{backend:?}: {err}");
        }
    }

    #[test]
    fn krylov_and_block_steps_agree() {
        let p = ModelParams::<f64>::harmonic_mixing_motor(5, 0.4);
        let d = DriveProtocol::harmonic_mixing(&p);
        let mut rng = StdRng::seed_from_u64(7);
        let blocks = Propagator::new(&p, &d, coarse()).unwrap();
        let krylov = blocks.clone().with_backend(Backend::Krylov);
        for _ in 0..5 {
            let mut psi = random_state(p.dim(), &mut rng);
            psi.time = rng.random_range(0.0..60.0);
            let dt = blocks.nominal_dt();
            let a = blocks.step(&psi, dt).unwrap();
            let b = krylov.step(&psi, dt).unwrap();
            assert!((&a.amplitudes - &b.amplitudes).norm() < 1e-10);
            assert!((a.norm() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn site_monodromy_stays_in_its_blocks() {
        let p = ModelParams::<f64>::harmonic_mixing_motor(4, 1.1);
        let d = DriveProtocol::harmonic_mixing(&p);
        let prop = Propagator::new(&p, &d, coarse().with_steps(256)).unwrap();
        let site = prop.clone().with_backend(Backend::Krylov).monodromy(0.0, d.period()).unwrap();
        assert!(site.block_leakage().unwrap() < 1e-10);
        assert!(site.unitarity_defect() < 1e-10);
        let blocks = prop.monodromy(0.0, d.period()).unwrap();
        let diff = (&site.site_matrix() - &blocks.site_matrix()).iter().map(|z| z.norm()).fold(0.0, f64::max);
        assert!(diff < 1e-9, "{diff}");
    }

    #[test]
    fn sweep_monodromies_are_conjugates() {
        let p = ModelParams::<f64>::harmonic_mixing_motor(4, 0.9);
        let d = DriveProtocol::harmonic_mixing(&p);
        let prop = Propagator::new(&p, &d, coarse().with_samples(64)).unwrap();
        let sweep = PeriodSweep::compute(&prop, 0.0, d.period(), 4).unwrap();
        for j in 0..4 {
            let direct = prop.monodromy(sweep.t0(j), d.period()).unwrap();
            let from_sweep = sweep.monodromy_at(j);
            let (a, _) = direct.blocks().unwrap();
            let (b, _) = from_sweep.blocks().unwrap();
            assert!(a.max_abs_diff(&b) < 1e-10, "t0 index {j}");
            let ca = direct.carrier_average.as_ref().unwrap();
            let cb = from_sweep.carrier_average.as_ref().unwrap();
            assert!(ca.max_abs_diff(cb) < 1e-3, "{}", ca.max_abs_diff(cb));
        }
    }

    #[test]
    fn switched_off_before_t0() {
        let p = ModelParams::<f64>::harmonic_mixing_motor(4, 0.3).with_t0(50.0);
        let d = DriveProtocol::harmonic_mixing(&p);
        let psi = StateVector { time: 0.0, ..initial_state(&p, 1).unwrap() };
        let driven = propagate(&p, &psi, &d, coarse(), 40.0, 4).unwrap();
        let still = propagate(&p, &psi, &DriveProtocol::static_zero(&p), coarse(), 40.0, 4).unwrap();
        assert!((&driven.final_state.amplitudes - &still.final_state.amplitudes).norm() < 1e-12);
    }

    #[test]
    fn rejects_bad_integrators() {
        assert!(Integrator::default().with_steps(100).validate().is_err());
        assert!(Integrator::default().with_steps(32).validate().is_err());
        assert!(Integrator::default().with_samples(0).validate().is_err());
        let p = ModelParams::<f64>::new(4);
        let psi = StateVector::new(DVector::from_element(16, C::new(1.0, 0.0)), 0.0);
        assert!(matches!(step(&p, &psi, &DriveProtocol::static_zero(&p), 0.1), Err(Error::NotNormalized { .. })));
    }

    #[test]
    fn single_precision_propagates() {
        let p = ModelParams::<f32>::harmonic_mixing_motor(4, 0.5);
        let d = DriveProtocol::harmonic_mixing(&p);
        let integ = Integrator { tolerance: 1e-4, ..coarse().with_steps(256) };
        let psi = initial_state(&p, 1).unwrap();
        let out = propagate(&p, &psi, &d, integ, d.period(), 8).unwrap();
        assert!((out.final_state.norm() - 1.0).abs() < 1e-4);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn evolution_is_unitary_and_periodic(theta in -3.2f64..3.2, w in -1.0f64..1.0, seed in 0u64..1000, t0 in 0.0f64..20.0) {
            let p = ModelParams::<f64>::harmonic_mixing_motor(4, theta).with_interaction(w);
            let d = DriveProtocol::harmonic_mixing(&p);
            let prop = Propagator::new(&p, &d, coarse().with_steps(256).with_samples(32)).unwrap();
            let m = prop.monodromy(t0, d.period()).unwrap();
            prop_assert!(m.unitarity_defect() < 1e-12);
            let later = prop.monodromy(t0 + d.period(), d.period()).unwrap();
            prop_assert!(m.blocks().unwrap().0.max_abs_diff(&later.blocks().unwrap().0) < 1e-11);
            let mut rng = StdRng::seed_from_u64(seed);
            let psi = random_state(p.dim(), &mut rng);
            let out = prop.propagate(&psi, 2.0 * d.period(), 4).unwrap();
            prop_assert!((out.final_state.norm() - 1.0).abs() < 1e-12);
        }
    }
}
