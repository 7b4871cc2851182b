//! Cone layout, symmetric vectorization and Nesterov–Todd scaling.
//!
//! Cone vectors are laid out as `[orthant | psd block 0 | psd block 1 | ...]`.
//! PSD blocks use `svec`: the upper triangle, column by column, with the
//! off-diagonal entries multiplied by √2 so that `svec(A)·svec(B) = tr(AB)`.

use crate::linalg::{cholesky_unchecked, sym_eig_unchecked, symmetrize, Matrix, Vector};
use serde::{Deserialize, Serialize};
use std::f64::consts::SQRT_2;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConeSpec {
    pub nonneg_dim: usize,
    pub psd_block_dims: Vec<usize>,
}

impl ConeSpec {
    pub fn new(nonneg_dim: usize, psd_block_dims: Vec<usize>) -> Self {
        Self {
            nonneg_dim,
            psd_block_dims,
        }
    }

    /// Total length of a cone vector.
    pub fn dim(&self) -> usize {
        self.nonneg_dim + self.psd_block_dims.iter().map(|&d| svec_len(d)).sum::<usize>()
    }

    /// Barrier degree: orthant entries plus the side lengths of PSD blocks.
    pub fn degree(&self) -> usize {
        self.nonneg_dim + self.psd_block_dims.iter().sum::<usize>()
    }

    /// `(offset, side)` for every PSD block.
    pub fn psd_blocks(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        let mut offset = self.nonneg_dim;
        self.psd_block_dims.iter().map(move |&d| {
            let out = (offset, d);
            offset += svec_len(d);
            out
        })
    }

    /// The cone identity `e` (ones on the orthant, `I` on every block).
    pub fn identity(&self) -> Vector {
        let mut e = Vector::zeros(self.dim());
        e.rows_mut(0, self.nonneg_dim).fill(1.0);
        for (off, d) in self.psd_blocks() {
            for i in 0..d {
                e[off + diag_index(i)] = 1.0;
            }
        }
        e
    }

    /// Smallest "eigenvalue" of `v` over all cone blocks (+∞ for an empty cone).
    pub fn min_eigenvalue(&self, v: &Vector) -> f64 {
        let mut m = v
            .rows(0, self.nonneg_dim)
            .iter()
            .copied()
            .fold(f64::INFINITY, f64::min);
        for (off, d) in self.psd_blocks() {
            let block = smat(&v.as_slice()[off..off + svec_len(d)], d);
            m = m.min(sym_eig_unchecked(block).min());
        }
        m
    }
}

pub fn svec_len(d: usize) -> usize {
    d * (d + 1) / 2
}

fn diag_index(i: usize) -> usize {
    i * (i + 1) / 2 + i
}

/// Vectorizes the upper triangle of a symmetric matrix (√2-scaled off-diagonals).
pub fn svec(m: &Matrix) -> Vec<f64> {
    let d = m.nrows();
    let mut out = Vec::with_capacity(svec_len(d));
    for j in 0..d {
        for i in 0..=j {
            if i == j {
                out.push(m[(i, j)]);
            } else {
                out.push(0.5 * (m[(i, j)] + m[(j, i)]) * SQRT_2);
            }
        }
    }
    out
}

pub(crate) fn svec_into(m: &Matrix, out: &mut [f64]) {
    let d = m.nrows();
    let mut k = 0;
    for j in 0..d {
        for i in 0..=j {
            out[k] = if i == j {
                m[(i, j)]
            } else {
                0.5 * (m[(i, j)] + m[(j, i)]) * SQRT_2
            };
            k += 1;
        }
    }
}

/// Inverse of [`svec`].
pub fn smat(v: &[f64], d: usize) -> Matrix {
    let mut m = Matrix::zeros(d, d);
    let mut k = 0;
    for j in 0..d {
        for i in 0..=j {
            if i == j {
                m[(i, j)] = v[k];
            } else {
                let x = v[k] / SQRT_2;
                m[(i, j)] = x;
                m[(j, i)] = x;
            }
            k += 1;
        }
    }
    m
}

/// Per-block Nesterov–Todd scaling with `Rᵀ·Z·R = R⁻¹·S·R⁻ᵀ = diag(λ)`.
#[derive(Debug, Clone)]
pub(crate) struct BlockScaling {
    r: Matrix,
    rinv: Matrix,
}

/// Full NT scaling `W` together with the scaled point `λ = W·z = W⁻ᵀ·s`.
#[derive(Debug, Clone)]
pub(crate) struct NtScaling {
    /// Orthant: `sqrt(s/z)`.
    d: Vec<f64>,
    blocks: Vec<BlockScaling>,
    pub lambda: Vector,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum ScalingError {
    NotInterior,
}

impl NtScaling {
    pub fn identity(cone: &ConeSpec) -> Self {
        Self {
            d: vec![1.0; cone.nonneg_dim],
            blocks: cone
                .psd_block_dims
                .iter()
                .map(|&d| BlockScaling {
                    r: Matrix::identity(d, d),
                    rinv: Matrix::identity(d, d),
                })
                .collect(),
            lambda: cone.identity(),
        }
    }

    /// Computes the scaling from strictly interior `s` and `z`.
    pub fn from_pair(cone: &ConeSpec, s: &Vector, z: &Vector) -> Result<Self, ScalingError> {
        let k = cone.nonneg_dim;
        let mut lambda = Vector::zeros(cone.dim());
        let mut d = Vec::with_capacity(k);
        for i in 0..k {
            if !(s[i] > 0.0 && z[i] > 0.0) {
                return Err(ScalingError::NotInterior);
            }
            d.push((s[i] / z[i]).sqrt());
            lambda[i] = (s[i] * z[i]).sqrt();
        }
        let mut blocks = Vec::with_capacity(cone.psd_block_dims.len());
        for (off, dim) in cone.psd_blocks() {
            let n = svec_len(dim);
            let sm = smat(&s.as_slice()[off..off + n], dim);
            let zm = smat(&z.as_slice()[off..off + n], dim);
            let ls = cholesky_unchecked(&sm).ok_or(ScalingError::NotInterior)?;
            let lz = cholesky_unchecked(&zm).ok_or(ScalingError::NotInterior)?;
            let (block, lam) = combine(&ls, &lz.transpose(), &ls, &lz)?;
            for i in 0..dim {
                lambda[off + diag_index(i)] = lam[i];
            }
            blocks.push(block);
        }
        Ok(Self { d, blocks, lambda })
    }

    /// Moves to the new scaled pair `(λ + Δs̃, λ + Δz̃)` given in the current scaled space.
    pub fn update(
        &mut self,
        cone: &ConeSpec,
        s_scaled: &Vector,
        z_scaled: &Vector,
    ) -> Result<(), ScalingError> {
        let k = cone.nonneg_dim;
        for i in 0..k {
            let (ss, zs) = (s_scaled[i], z_scaled[i]);
            if !(ss > 0.0 && zs > 0.0) {
                return Err(ScalingError::NotInterior);
            }
            let s = self.d[i] * ss;
            let z = zs / self.d[i];
            self.d[i] = (s / z).sqrt();
            self.lambda[i] = (s * z).sqrt();
        }
        let offsets: Vec<(usize, usize)> = cone.psd_blocks().collect();
        for (b, (off, dim)) in offsets.into_iter().enumerate() {
            let n = svec_len(dim);
            let st = smat(&s_scaled.as_slice()[off..off + n], dim);
            let zt = smat(&z_scaled.as_slice()[off..off + n], dim);
            let l1 = cholesky_unchecked(&st).ok_or(ScalingError::NotInterior)?;
            let l2 = cholesky_unchecked(&zt).ok_or(ScalingError::NotInterior)?;
            // S = (R·L1)(R·L1)ᵀ and Z = (R⁻ᵀ·L2)(R⁻ᵀ·L2)ᵀ.
            let old = &self.blocks[b];
            let fs = &old.r * &l1;
            let fz_t = l2.transpose() * &old.rinv;
            let (block, lam) = combine(&fs, &fz_t, &l1, &l2)?;
            for i in 0..dim {
                self.lambda[off + diag_index(i)] = lam[i];
            }
            self.blocks[b] = block;
        }
        Ok(())
    }

    /// `W·v`
    #[cfg(test)]
    pub fn apply_w(&self, cone: &ConeSpec, v: &Vector) -> Vector {
        self.apply(cone, v, |d, x| d * x, |b, m| b.r.transpose() * m * &b.r)
    }

    /// `Wᵀ·v`
    pub fn apply_wt(&self, cone: &ConeSpec, v: &Vector) -> Vector {
        self.apply(cone, v, |d, x| d * x, |b, m| &b.r * m * b.r.transpose())
    }

    /// `W⁻¹·v`
    pub fn apply_winv(&self, cone: &ConeSpec, v: &Vector) -> Vector {
        self.apply(cone, v, |d, x| x / d, |b, m| b.rinv.transpose() * m * &b.rinv)
    }

    /// `W⁻ᵀ·v`
    pub fn apply_wit(&self, cone: &ConeSpec, v: &Vector) -> Vector {
        self.apply(cone, v, |d, x| x / d, |b, m| &b.rinv * m * b.rinv.transpose())
    }

    fn apply(
        &self,
        cone: &ConeSpec,
        v: &Vector,
        orthant: impl Fn(f64, f64) -> f64,
        block: impl Fn(&BlockScaling, &Matrix) -> Matrix,
    ) -> Vector {
        let mut out = Vector::zeros(v.len());
        for i in 0..cone.nonneg_dim {
            out[i] = orthant(self.d[i], v[i]);
        }
        for (b, (off, dim)) in cone.psd_blocks().enumerate() {
            let n = svec_len(dim);
            let m = smat(&v.as_slice()[off..off + n], dim);
            let r = block(&self.blocks[b], &m);
            svec_into(&r, &mut out.as_mut_slice()[off..off + n]);
        }
        out
    }
}

/// Builds `R`, `R⁻¹` and `λ` from `S = Fs·Fsᵀ` and `Z = Fz·Fzᵀ` (passed as `Fzᵀ`),
/// where `L2ᵀ·L1 = Fzᵀ·Fs` is the product whose SVD defines the scaling.
fn combine(
    fs: &Matrix,
    fz_t: &Matrix,
    l1: &Matrix,
    l2: &Matrix,
) -> Result<(BlockScaling, Vec<f64>), ScalingError> {
    let prod = l2.transpose() * l1;
    let svd = prod.svd(true, true);
    let u = svd.u.ok_or(ScalingError::NotInterior)?;
    let v_t = svd.v_t.ok_or(ScalingError::NotInterior)?;
    let sv = svd.singular_values;
    if sv.iter().any(|&x| !(x > 0.0) || !x.is_finite()) {
        return Err(ScalingError::NotInterior);
    }
    let inv_sqrt = Matrix::from_diagonal(&sv.map(|x| 1.0 / x.sqrt()));
    let r = fs * v_t.transpose() * &inv_sqrt;
    let rinv = &inv_sqrt * u.transpose() * fz_t;
    Ok((BlockScaling { r, rinv }, sv.iter().copied().collect()))
}

/// Jordan product `a∘b` (scaled space: elementwise / symmetrized matrix product).
pub(crate) fn jordan_product(cone: &ConeSpec, a: &Vector, b: &Vector) -> Vector {
    let mut out = Vector::zeros(a.len());
    for i in 0..cone.nonneg_dim {
        out[i] = a[i] * b[i];
    }
    for (off, d) in cone.psd_blocks() {
        let n = svec_len(d);
        let am = smat(&a.as_slice()[off..off + n], d);
        let bm = smat(&b.as_slice()[off..off + n], d);
        let p = symmetrize(&(&am * &bm));
        svec_into(&p, &mut out.as_mut_slice()[off..off + n]);
    }
    out
}

/// Solves `λ∘x = v` for `x` where `λ` is diagonal on every block.
pub(crate) fn jordan_divide(cone: &ConeSpec, lambda: &Vector, v: &Vector) -> Vector {
    let mut out = Vector::zeros(v.len());
    for i in 0..cone.nonneg_dim {
        out[i] = v[i] / lambda[i];
    }
    for (off, d) in cone.psd_blocks() {
        let mut k = 0;
        for j in 0..d {
            for i in 0..=j {
                let li = lambda[off + diag_index(i)];
                let lj = lambda[off + diag_index(j)];
                out[off + k] = v[off + k] * 2.0 / (li + lj);
                k += 1;
            }
        }
    }
    out
}

/// Largest `α` with `λ + α·Δ` in the cone (`λ` diagonal per block); +∞ if unbounded.
pub(crate) fn max_step_scaled(cone: &ConeSpec, lambda: &Vector, delta: &Vector) -> f64 {
    let mut alpha = f64::INFINITY;
    for i in 0..cone.nonneg_dim {
        if delta[i] < 0.0 {
            alpha = alpha.min(-lambda[i] / delta[i]);
        }
    }
    for (off, d) in cone.psd_blocks() {
        let n = svec_len(d);
        let mut dm = smat(&delta.as_slice()[off..off + n], d);
        for j in 0..d {
            let lj = lambda[off + diag_index(j)];
            for i in 0..d {
                dm[(i, j)] /= (lambda[off + diag_index(i)] * lj).sqrt();
            }
        }
        let min = sym_eig_unchecked(symmetrize(&dm)).min();
        if min < 0.0 {
            alpha = alpha.min(-1.0 / min);
        }
    }
    alpha
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn svec_inner_product_is_trace() {
        let a = Matrix::from_row_slice(3, 3, &[1.0, 2.0, 3.0, 2.0, 4.0, 5.0, 3.0, 5.0, 6.0]);
        let b = Matrix::from_row_slice(3, 3, &[0.5, -1.0, 0.0, -1.0, 2.0, 1.5, 0.0, 1.5, -3.0]);
        let dot: f64 = svec(&a).iter().zip(svec(&b)).map(|(x, y)| x * y).sum();
        assert!((dot - (&a * &b).trace()).abs() < 1e-12);
        assert_eq!(smat(&svec(&a), 3), a);
    }

    #[test]
    fn nt_scaling_maps_s_and_z_to_lambda() {
        let cone = ConeSpec::new(2, vec![3]);
        let s_mat = Matrix::from_row_slice(3, 3, &[4.0, 1.0, 0.5, 1.0, 3.0, 0.2, 0.5, 0.2, 2.0]);
        let z_mat = Matrix::from_row_slice(3, 3, &[1.0, -0.3, 0.1, -0.3, 2.0, 0.4, 0.1, 0.4, 1.5]);
        let mut s = vec![2.0, 0.5];
        s.extend(svec(&s_mat));
        let mut z = vec![0.5, 3.0];
        z.extend(svec(&z_mat));
        let (s, z) = (Vector::from_vec(s), Vector::from_vec(z));
        let w = NtScaling::from_pair(&cone, &s, &z).unwrap();
        let ws = w.apply_wit(&cone, &s);
        let wz = w.apply_w(&cone, &z);
        assert!((&ws - &w.lambda).norm() < 1e-12);
        assert!((&wz - &w.lambda).norm() < 1e-12);
        // Wᵀ and W⁻¹ invert the scaled point back.
        assert!((w.apply_wt(&cone, &w.lambda) - &s).norm() < 1e-12);
        assert!((w.apply_winv(&cone, &w.lambda) - &z).norm() < 1e-12);
        // s·z is invariant under scaling.
        assert!((s.dot(&z) - w.lambda.dot(&w.lambda)).abs() < 1e-12);
    }

    #[test]
    fn max_step_matches_eigenvalue_bound() {
        let cone = ConeSpec::new(1, vec![2]);
        let lambda = Vector::from_vec(vec![1.0, 2.0, 0.0, 0.5]);
        let delta = Vector::from_vec(vec![-0.5, -1.0, 0.0, -1.0]);
        // Orthant: 2; block diag(2, .5) + α·diag(−1, −1): α = 0.5.
        let a = max_step_scaled(&cone, &lambda, &delta);
        assert!((a - 0.5).abs() < 1e-12);
    }
}
