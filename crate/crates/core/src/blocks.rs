//! Total-quasimomentum representation.
//!
//! The two-particle shift commutes with `H_tot(t)` at every instant, so the
//! product momentum states `|κ_c, κ_s⟩` with fixed `k = κ_c + κ_s (mod 2π)`
//! span invariant blocks of dimension `L`. Block `K` holds
//! `k = 2πK/L`, and its `j`-th entry is `κ_c = 2πj/L`,
//! `κ_s = 2π(K − j)/L`. The momentum states are normalized
//! `|κ_c, κ_s⟩ = L⁻¹ Σ e^{i(κ_c l_c + κ_s l_s)} |l_c, l_s⟩`, so the shift acts
//! on block `K` as `e^{−ik}`.
//!
//! In this basis the Hamiltonian block is `diag(ε_j(A)) + (W/L)·𝟙𝟙ᵀ` with
//! `ε_j(A) = −J_c cos(κ_c − A) − J_s cos κ_s`.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::model::flat0;
use crate::scalar::{cis, count, Real, C};

/// `2πj/L`.
#[inline]
pub fn kappa<T: Real>(l: usize, j: usize) -> T {
    T::two_pi() * count::<T>(j % l) / count::<T>(l)
}

/// Index of the starter momentum in block `k_block` at carrier momentum `j`.
#[inline]
pub fn starter_index(l: usize, k_block: usize, j: usize) -> usize {
    (k_block + l - j % l) % l
}

/// Index of the block with opposite total quasimomentum.
#[inline]
pub fn opposite_block(l: usize, k_block: usize) -> usize {
    (l - k_block) % l
}

/// Lookup tables of `cos κ`, `sin κ` on the ring's momentum grid.
#[derive(Debug, Clone)]
pub struct MomentumGrid<T> {
    pub l: usize,
    pub cos: Vec<T>,
    pub sin: Vec<T>,
}

impl<T: Real> MomentumGrid<T> {
    pub fn new(l: usize) -> Self {
        let k: Vec<T> = (0..l).map(|j| kappa::<T>(l, j)).collect();
        Self { l, cos: k.iter().map(|x| x.cos()).collect(), sin: k.iter().map(|x| x.sin()).collect() }
    }

    /// `e^{−2πi m/L}` for `m` reduced mod `L`.
    pub fn twiddle(&self, m: usize) -> C<T> {
        let m = m % self.l;
        C::new(self.cos[m], -self.sin[m])
    }
}

/// A block-diagonal collection: one `L × m` matrix per total quasimomentum.
///
/// With `m = L` it stores an operator that commutes with translations; with
/// `m = 1` it stores a state.
#[derive(Debug, Clone, PartialEq)]
pub struct Blocks<T: Real> {
    pub l: usize,
    pub data: Vec<DMatrix<C<T>>>,
}

impl<T: Real> Blocks<T> {
    pub fn identity(l: usize) -> Self {
        Self { l, data: (0..l).map(|_| DMatrix::identity(l, l)).collect() }
    }

    pub fn zeros(l: usize, cols: usize) -> Self {
        Self { l, data: (0..l).map(|_| DMatrix::zeros(l, cols)).collect() }
    }

    pub fn cols(&self) -> usize {
        self.data.first().map_or(0, |b| b.ncols())
    }

    pub fn mul(&self, rhs: &Self) -> Self {
        Self { l: self.l, data: self.data.iter().zip(&rhs.data).map(|(a, b)| a * b).collect() }
    }

    pub fn adjoint(&self) -> Self {
        Self { l: self.l, data: self.data.iter().map(|a| a.adjoint()).collect() }
    }

    /// `A† B A` block by block.
    pub fn sandwich(&self, inner: &Self) -> Self {
        Self {
            l: self.l,
            data: self.data.iter().zip(&inner.data).map(|(a, b)| a.adjoint() * b * a).collect(),
        }
    }

    pub fn scale(&self, s: T) -> Self {
        Self { l: self.l, data: self.data.iter().map(|a| a.map(|z| z * s)).collect() }
    }

    pub fn add(&self, rhs: &Self) -> Self {
        Self { l: self.l, data: self.data.iter().zip(&rhs.data).map(|(a, b)| a + b).collect() }
    }

    pub fn sub(&self, rhs: &Self) -> Self {
        Self { l: self.l, data: self.data.iter().zip(&rhs.data).map(|(a, b)| a - b).collect() }
    }

    pub fn max_abs_diff(&self, rhs: &Self) -> T {
        self.data
            .iter()
            .zip(&rhs.data)
            .flat_map(|(a, b)| a.iter().zip(b.iter()).map(|(x, y)| (*x - *y).norm_sqr().sqrt()))
            .fold(T::zero(), |m, x| m.max(x))
    }

    /// `max |(U†U − 𝟙)_{ij}|` over all blocks.
    pub fn unitarity_defect(&self) -> T {
        let mut worst = T::zero();
        for b in &self.data {
            let g = b.adjoint() * b;
            for i in 0..g.nrows() {
                for j in 0..g.ncols() {
                    let target = if i == j { C::new(T::one(), T::zero()) } else { C::new(T::zero(), T::zero()) };
                    worst = worst.max((g[(i, j)] - target).norm_sqr().sqrt());
                }
            }
        }
        worst
    }

    /// Total squared norm of a block state.
    pub fn norm_sqr(&self) -> T {
        self.data.iter().flat_map(|b| b.iter()).fold(T::zero(), |acc, z| acc + z.norm_sqr())
    }
}

/// Change of basis between the site basis and the momentum blocks.
#[derive(Debug, Clone)]
pub struct MomentumBasis<T> {
    grid: MomentumGrid<T>,
}

impl<T: Real> MomentumBasis<T> {
    pub fn new(l: usize) -> Self {
        Self { grid: MomentumGrid::new(l) }
    }

    pub fn l(&self) -> usize {
        self.grid.l
    }

    pub fn grid(&self) -> &MomentumGrid<T> {
        &self.grid
    }

    /// Two-dimensional transform `ψ̂(a, b) = L⁻¹ Σ e^{−i(κ_a l_c + κ_b l_s)} ψ(l_c, l_s)`.
    fn forward_2d(&self, psi: &[C<T>]) -> Vec<C<T>> {
        let l = self.l();
        let inv_l = T::one() / count::<T>(l);
        let mut tmp = vec![C::new(T::zero(), T::zero()); l * l];
        // over the starter index
        for c in 0..l {
            for b in 0..l {
                let mut acc = C::new(T::zero(), T::zero());
                for s in 0..l {
                    acc += psi[flat0(l, c, s)] * self.grid.twiddle(b * s);
                }
                tmp[flat0(l, c, b)] = acc;
            }
        }
        let mut out = vec![C::new(T::zero(), T::zero()); l * l];
        for a in 0..l {
            for b in 0..l {
                let mut acc = C::new(T::zero(), T::zero());
                for c in 0..l {
                    acc += tmp[flat0(l, c, b)] * self.grid.twiddle(a * c);
                }
                out[flat0(l, a, b)] = acc * inv_l;
            }
        }
        out
    }

    fn inverse_2d(&self, hat: &[C<T>]) -> Vec<C<T>> {
        let l = self.l();
        let inv_l = T::one() / count::<T>(l);
        let mut tmp = vec![C::new(T::zero(), T::zero()); l * l];
        for a in 0..l {
            for s in 0..l {
                let mut acc = C::new(T::zero(), T::zero());
                for b in 0..l {
                    acc += hat[flat0(l, a, b)] * self.grid.twiddle(b * s).conj();
                }
                tmp[flat0(l, a, s)] = acc;
            }
        }
        let mut out = vec![C::new(T::zero(), T::zero()); l * l];
        for c in 0..l {
            for s in 0..l {
                let mut acc = C::new(T::zero(), T::zero());
                for a in 0..l {
                    acc += tmp[flat0(l, a, s)] * self.grid.twiddle(a * c).conj();
                }
                out[flat0(l, c, s)] = acc * inv_l;
            }
        }
        out
    }

    /// Site-basis state → block state (`L` blocks of one column).
    pub fn to_blocks(&self, psi: &DVector<C<T>>) -> Result<Blocks<T>> {
        let l = self.l();
        if psi.len() != l * l {
            return Err(Error::DimensionMismatch { expected: l * l, found: psi.len() });
        }
        let hat = self.forward_2d(psi.as_slice());
        let mut out = Blocks::zeros(l, 1);
        for (k, block) in out.data.iter_mut().enumerate() {
            for j in 0..l {
                block[(j, 0)] = hat[flat0(l, j, starter_index(l, k, j))];
            }
        }
        Ok(out)
    }

    /// Block state → site-basis state.
    pub fn from_blocks(&self, blocks: &Blocks<T>) -> DVector<C<T>> {
        let l = self.l();
        let mut hat = vec![C::new(T::zero(), T::zero()); l * l];
        for (k, block) in blocks.data.iter().enumerate() {
            for j in 0..l {
                hat[flat0(l, j, starter_index(l, k, j))] = block[(j, 0)];
            }
        }
        DVector::from_vec(self.inverse_2d(&hat))
    }

    /// Site-basis column of momentum state `(k_block, j)`.
    pub fn momentum_state(&self, k_block: usize, j: usize) -> DVector<C<T>> {
        let l = self.l();
        let inv_l = T::one() / count::<T>(l);
        let s_idx = starter_index(l, k_block, j);
        DVector::from_fn(l * l, |flat, _| {
            let (c, s) = (flat / l, flat % l);
            self.grid.twiddle(j * c + s_idx * s).conj() * inv_l
        })
    }

    /// Unitary whose column `K·L + j` is the momentum state `(K, j)`.
    pub fn unitary(&self) -> DMatrix<C<T>> {
        let l = self.l();
        let mut f = DMatrix::zeros(l * l, l * l);
        for k in 0..l {
            for j in 0..l {
                f.set_column(k * l + j, &self.momentum_state(k, j));
            }
        }
        f
    }

    /// Dense site-basis matrix of a block-diagonal operator.
    pub fn to_site_matrix(&self, blocks: &Blocks<T>) -> DMatrix<C<T>> {
        let l = self.l();
        let mut dense = DMatrix::zeros(l * l, l * l);
        for (k, b) in blocks.data.iter().enumerate() {
            dense.view_mut((k * l, k * l), (l, l)).copy_from(b);
        }
        let f = self.unitary();
        &f * dense * f.adjoint()
    }

    /// Splits a site-basis operator into momentum blocks and reports the
    /// largest off-block element.
    pub fn from_site_matrix(&self, m: &DMatrix<C<T>>) -> Result<(Blocks<T>, T)> {
        let l = self.l();
        if m.nrows() != l * l || m.ncols() != l * l {
            return Err(Error::DimensionMismatch { expected: l * l, found: m.nrows() });
        }
        let f = self.unitary();
        let rotated = f.adjoint() * m * &f;
        let mut leak = T::zero();
        for r in 0..l * l {
            for c in 0..l * l {
                if r / l != c / l {
                    leak = leak.max(rotated[(r, c)].norm_sqr().sqrt());
                }
            }
        }
        let data = (0..l).map(|k| rotated.view((k * l, k * l), (l, l)).into_owned()).collect();
        Ok((Blocks { l, data }, leak))
    }

    /// Complex conjugation in the site basis, expressed on block states:
    /// `(Kψ)_{K, j} = conj(ψ_{−K, −j})`.
    pub fn conjugate_block_state(&self, blocks: &Blocks<T>) -> Blocks<T> {
        let l = self.l();
        let mut out = Blocks::zeros(l, blocks.cols());
        for k in 0..l {
            let src = &blocks.data[opposite_block(l, k)];
            for j in 0..l {
                for c in 0..blocks.cols() {
                    out.data[k][(j, c)] = src[((l - j) % l, c)].conj();
                }
            }
        }
        out
    }

    /// Phase of the two-particle shift on block `K`, `e^{−2πiK/L}`.
    pub fn shift_eigenvalue(&self, k_block: usize) -> C<T> {
        cis(-kappa::<T>(self.l(), k_block))
    }
}
