//! Spectral discretization of `L = -Δ + V` with Dirichlet walls.
//!
//! Each axis carries the symmetric tridiagonal operator
//! `-d²/du² + v_a(u)` (second-order central differences); the full operator
//! is the Kronecker sum, so eigenvalues add across axes and eigenvectors are
//! tensor products.  Every operator in the crate is a spectral multiplier
//! `φ(L)` evaluated by a forward transform to the tensor eigenbasis, a
//! coefficient map, and an inverse transform.  Dense (non-separable) mode
//! assembles the full matrix and is capped at a few thousand unknowns.

use nalgebra::{DMatrix, SymmetricEigen};
use rayon::prelude::*;

use crate::grid::{BoxGrid, GridFunction};
use crate::potential::Potential;
use crate::{Error, Result};

/// Eigendecomposition of one axis operator, orthonormal under the
/// `h`-weighted inner product `⟨f,g⟩ = h Σ f g`.
#[derive(Debug, Clone)]
pub struct AxisEigen {
    pub m: usize,
    pub h: f64,
    /// Ascending eigenvalues.
    pub eigenvalues: Vec<f64>,
    /// `vectors[j*m + k]` = j-th eigenvector at node k.
    vectors: Vec<f64>,
    /// Transposed copy, `vectors_t[k*m + j]`, for the inverse transform.
    vectors_t: Vec<f64>,
}

/// Full eigendecomposition of the second-order axis discretization.
pub fn eigensolve_axis(samples: &[f64], h: f64, axis: usize) -> Result<AxisEigen> {
    let m = samples.len();
    if m < 8 {
        return Err(Error::GridTooCoarse { m });
    }
    let inv_h2 = 1.0 / (h * h);
    let mut mat = DMatrix::<f64>::zeros(m, m);
    for k in 0..m {
        mat[(k, k)] = 2.0 * inv_h2 + samples[k];
        if k + 1 < m {
            mat[(k, k + 1)] = -inv_h2;
            mat[(k + 1, k)] = -inv_h2;
        }
    }
    let eig = SymmetricEigen::try_new(mat, 1e-14, 0).ok_or(Error::EigensolveFailed { axis })?;
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].partial_cmp(&eig.eigenvalues[b]).unwrap());
    let mut eigenvalues = Vec::with_capacity(m);
    let mut vectors = vec![0.0; m * m];
    let scale = 1.0 / h.sqrt(); // unit l2 columns -> h-orthonormal
    for (j, &col) in order.iter().enumerate() {
        eigenvalues.push(eig.eigenvalues[col]);
        // fix a sign convention: first nonzero entry positive
        let mut sign = 1.0;
        for k in 0..m {
            let v = eig.eigenvectors[(k, col)];
            if v.abs() > 1e-12 {
                sign = v.signum();
                break;
            }
        }
        for k in 0..m {
            vectors[j * m + k] = sign * scale * eig.eigenvectors[(k, col)];
        }
    }
    let mut vectors_t = vec![0.0; m * m];
    for j in 0..m {
        for k in 0..m {
            vectors_t[k * m + j] = vectors[j * m + k];
        }
    }
    Ok(AxisEigen { m, h, eigenvalues, vectors, vectors_t })
}

impl AxisEigen {
    /// Value of eigenvector `j` at node `k`.
    #[inline]
    pub fn vector(&self, j: usize, k: usize) -> f64 {
        self.vectors[j * self.m + k]
    }

    /// Apply `φ(L_axis)` to a 1D vector (O(m²)).
    pub fn apply_phi_1d(&self, phi: impl Fn(f64) -> f64, input: &[f64]) -> Vec<f64> {
        let m = self.m;
        let mut out = vec![0.0; m];
        for j in 0..m {
            let row = &self.vectors[j * m..(j + 1) * m];
            let c: f64 = row.iter().zip(input).map(|(a, b)| a * b).sum::<f64>() * self.h;
            let cj = c * phi(self.eigenvalues[j]);
            for (o, v) in out.iter_mut().zip(row) {
                *o += cj * v;
            }
        }
        out
    }

    /// Heat kernel slice `Σ_j w(λ_j) e^{-tλ_j} φ_j(ki) φ_j(kj)`.
    #[inline]
    pub fn kernel_sum(&self, t: f64, ki: usize, kj: usize, weight: impl Fn(f64) -> f64) -> f64 {
        let m = self.m;
        let vx = &self.vectors_t[ki * m..(ki + 1) * m];
        let vy = &self.vectors_t[kj * m..(kj + 1) * m];
        let mut s = 0.0;
        for j in 0..m {
            let lam = self.eigenvalues[j];
            if lam * t > 745.0 {
                break; // eigenvalues ascend, the tail underflows to zero
            }
            s += weight(lam) * (-t * lam).exp() * vx[j] * vy[j];
        }
        s
    }

    /// Kernel slice with a precomputed `e^{-tλ_j}` table.
    #[inline]
    pub fn kernel_sum_table(&self, exp_table: &[f64], ki: usize, kj: usize) -> f64 {
        let m = self.m;
        let vx = &self.vectors_t[ki * m..(ki + 1) * m];
        let vy = &self.vectors_t[kj * m..(kj + 1) * m];
        let mut s = 0.0;
        for j in 0..m {
            s += exp_table[j] * vx[j] * vy[j];
        }
        s
    }

    /// Max orthonormality defect under the h-weighted inner product.
    pub fn orthonormality_defect(&self) -> f64 {
        let m = self.m;
        let mut worst = 0.0f64;
        for i in 0..m {
            for j in i..m {
                let dot: f64 = (0..m)
                    .map(|k| self.vectors[i * m + k] * self.vectors[j * m + k])
                    .sum::<f64>()
                    * self.h;
                let target = if i == j { 1.0 } else { 0.0 };
                worst = worst.max((dot - target).abs());
            }
        }
        worst
    }
}

#[derive(Debug, Clone)]
enum ModelData {
    Separable { axes: Vec<AxisEigen> },
    Dense { size: usize, eigenvalues: Vec<f64>, vectors: Vec<f64> },
}

/// The assembled spectral model: grid, potential samples and eigenstructure.
#[derive(Debug, Clone)]
pub struct SpectralModel {
    pub grid: BoxGrid,
    /// `V` sampled on the grid (used by the estimate verifier).
    pub potential_values: GridFunction,
    /// Smoothness budget `2 - n/q` of the potential.
    pub delta0: f64,
    pub lambda_min: f64,
    pub lambda_max: f64,
    data: ModelData,
}

impl SpectralModel {
    pub fn assemble(pot: &Potential) -> Result<Self> {
        let grid = pot.grid;
        let h = grid.h();
        let potential_values = pot.values_on_grid();
        let data = if let Some(factors) = pot.axis_factors() {
            let axes: Vec<AxisEigen> = factors
                .iter()
                .enumerate()
                .map(|(a, f)| eigensolve_axis(f, h, a))
                .collect::<Result<_>>()?;
            ModelData::Separable { axes }
        } else {
            let size = grid.len();
            if size > crate::potential::DENSE_CAP {
                return Err(Error::DenseCapExceeded { unknowns: size, cap: crate::potential::DENSE_CAP });
            }
            let inv_h2 = 1.0 / (h * h);
            let mut mat = DMatrix::<f64>::zeros(size, size);
            let mut mi = [0usize; 6];
            for idx in 0..size {
                grid.multi_index(idx, &mut mi[..grid.n]);
                mat[(idx, idx)] = 2.0 * grid.n as f64 * inv_h2 + potential_values.values[idx];
                for a in 0..grid.n {
                    if mi[a] + 1 < grid.m {
                        let nb = idx + grid.m.pow(a as u32);
                        mat[(idx, nb)] = -inv_h2;
                        mat[(nb, idx)] = -inv_h2;
                    }
                }
            }
            let eig =
                SymmetricEigen::try_new(mat, 1e-14, 0).ok_or(Error::EigensolveFailed { axis: 0 })?;
            let mut order: Vec<usize> = (0..size).collect();
            order.sort_by(|&a, &b| eig.eigenvalues[a].partial_cmp(&eig.eigenvalues[b]).unwrap());
            let scale = 1.0 / grid.cell_volume().sqrt();
            let mut eigenvalues = Vec::with_capacity(size);
            let mut vectors = vec![0.0; size * size];
            for (j, &col) in order.iter().enumerate() {
                eigenvalues.push(eig.eigenvalues[col]);
                for k in 0..size {
                    vectors[j * size + k] = scale * eig.eigenvectors[(k, col)];
                }
            }
            ModelData::Dense { size, eigenvalues, vectors }
        };
        let (lambda_min, lambda_max) = match &data {
            ModelData::Separable { axes } => {
                let lo: f64 = axes.iter().map(|a| a.eigenvalues[0]).sum();
                let hi: f64 = axes.iter().map(|a| *a.eigenvalues.last().unwrap()).sum();
                (lo, hi)
            }
            ModelData::Dense { eigenvalues, .. } => {
                (eigenvalues[0], *eigenvalues.last().unwrap())
            }
        };
        if lambda_min <= 0.0 {
            return Err(Error::InvalidParam(format!(
                "discrete operator must be positive, found λ_min = {lambda_min}"
            )));
        }
        Ok(SpectralModel {
            grid,
            potential_values,
            delta0: pot.delta0(),
            lambda_min,
            lambda_max,
            data,
        })
    }

    pub fn is_separable(&self) -> bool {
        matches!(self.data, ModelData::Separable { .. })
    }

    pub fn axes(&self) -> Option<&[AxisEigen]> {
        match &self.data {
            ModelData::Separable { axes } => Some(axes),
            _ => None,
        }
    }

    /// Eigenvalues of one axis (separable) or of the full operator (dense).
    pub fn spectrum(&self) -> Vec<(usize, usize, f64)> {
        match &self.data {
            ModelData::Separable { axes } => axes
                .iter()
                .enumerate()
                .flat_map(|(a, ax)| {
                    ax.eigenvalues.iter().enumerate().map(move |(j, &l)| (a, j, l))
                })
                .collect(),
            ModelData::Dense { eigenvalues, .. } => {
                eigenvalues.iter().enumerate().map(|(j, &l)| (0, j, l)).collect()
            }
        }
    }

    /// Forward transform to eigenbasis coefficients.
    pub fn forward(&self, values: &[f64]) -> Vec<f64> {
        match &self.data {
            ModelData::Separable { axes } => {
                let mut buf = values.to_vec();
                let mut tmp = vec![0.0; values.len()];
                for ax in axes.iter() {
                    apply_axis0(&buf, &mut tmp, ax.m, &ax.vectors);
                    rotate_left(&tmp, &mut buf, ax.m, axes.len());
                }
                let w = self.grid.cell_volume();
                for v in buf.iter_mut() {
                    *v *= w;
                }
                buf
            }
            ModelData::Dense { size, vectors, .. } => {
                let w = self.grid.cell_volume();
                (0..*size)
                    .map(|j| {
                        let row = &vectors[j * size..(j + 1) * size];
                        row.iter().zip(values).map(|(a, b)| a * b).sum::<f64>() * w
                    })
                    .collect()
            }
        }
    }

    /// Inverse transform from eigenbasis coefficients.
    pub fn inverse(&self, coeffs: &[f64]) -> Vec<f64> {
        match &self.data {
            ModelData::Separable { axes } => {
                let mut buf = coeffs.to_vec();
                let mut tmp = vec![0.0; coeffs.len()];
                for ax in axes.iter() {
                    apply_axis0(&buf, &mut tmp, ax.m, &ax.vectors_t);
                    rotate_left(&tmp, &mut buf, ax.m, axes.len());
                }
                buf
            }
            ModelData::Dense { size, vectors, .. } => {
                let mut out = vec![0.0; *size];
                for j in 0..*size {
                    let c = coeffs[j];
                    if c == 0.0 {
                        continue;
                    }
                    let row = &vectors[j * size..(j + 1) * size];
                    for (o, v) in out.iter_mut().zip(row) {
                        *o += c * v;
                    }
                }
                out
            }
        }
    }

    /// Apply `φ(λ)` to a coefficient vector in place.
    pub fn map_coefficients(&self, coeffs: &mut [f64], phi: &(dyn Fn(f64) -> f64 + Sync)) {
        match &self.data {
            ModelData::Separable { axes } => match axes.len() {
                1 => {
                    for (c, &l) in coeffs.iter_mut().zip(&axes[0].eigenvalues) {
                        *c *= phi(l);
                    }
                }
                2 => {
                    let m = axes[0].m;
                    for (k1, &l1) in axes[1].eigenvalues.iter().enumerate() {
                        let row = &mut coeffs[k1 * m..(k1 + 1) * m];
                        for (c, &l0) in row.iter_mut().zip(&axes[0].eigenvalues) {
                            *c *= phi(l0 + l1);
                        }
                    }
                }
                3 => {
                    let m = axes[0].m;
                    let l0 = &axes[0].eigenvalues;
                    let l1 = &axes[1].eigenvalues;
                    let l2 = &axes[2].eigenvalues;
                    coeffs
                        .par_chunks_mut(m * m)
                        .enumerate()
                        .for_each(|(k2, plane)| {
                            let s2 = l2[k2];
                            for (k1, row) in plane.chunks_mut(m).enumerate() {
                                let s12 = s2 + l1[k1];
                                for (c, &a) in row.iter_mut().zip(l0) {
                                    *c *= phi(s12 + a);
                                }
                            }
                        });
                }
                _ => {
                    let mut mi = [0usize; 6];
                    for (idx, c) in coeffs.iter_mut().enumerate() {
                        self.grid.multi_index(idx, &mut mi[..axes.len()]);
                        let lam: f64 =
                            (0..axes.len()).map(|a| axes[a].eigenvalues[mi[a]]).sum();
                        *c *= phi(lam);
                    }
                }
            },
            ModelData::Dense { eigenvalues, .. } => {
                for (c, &l) in coeffs.iter_mut().zip(eigenvalues) {
                    *c *= phi(l);
                }
            }
        }
    }

    /// Combined eigenvalue of a coefficient index.
    pub fn eigenvalue_of(&self, idx: usize) -> f64 {
        match &self.data {
            ModelData::Separable { axes } => {
                let mut mi = [0usize; 6];
                self.grid.multi_index(idx, &mut mi[..axes.len()]);
                (0..axes.len()).map(|a| axes[a].eigenvalues[mi[a]]).sum()
            }
            ModelData::Dense { eigenvalues, .. } => eigenvalues[idx],
        }
    }

    /// `φ(L) f` through the tensor eigenbasis (exact, no truncation).
    pub fn apply_fn(&self, phi: &(dyn Fn(f64) -> f64 + Sync), f: &GridFunction) -> GridFunction {
        let mut c = self.forward(&f.values);
        self.map_coefficients(&mut c, phi);
        GridFunction::new(self.grid, self.inverse(&c))
    }

    /// `φ(L) f` with an energy cutoff `Λ`: coefficients above the cutoff are
    /// dropped and their contribution is returned as the truncation residual
    /// (relative to ‖f‖₂).  Errors out when the residual exceeds `tol`.
    pub fn apply_fn_cutoff(
        &self,
        phi: &(dyn Fn(f64) -> f64 + Sync),
        f: &GridFunction,
        cutoff: Option<f64>,
        tol: f64,
    ) -> Result<(GridFunction, f64)> {
        let Some(cut) = cutoff else {
            return Ok((self.apply_fn(phi, f), 0.0));
        };
        let mut c = self.forward(&f.values);
        let mut dropped2 = 0.0;
        for (idx, v) in c.iter_mut().enumerate() {
            let lam = self.eigenvalue_of(idx);
            let mapped = phi(lam) * *v;
            if lam > cut {
                dropped2 += mapped * mapped;
                *v = 0.0;
            } else {
                *v = mapped;
            }
        }
        let norm = f.norm_l2().max(f64::MIN_POSITIVE);
        // coefficient l2 relates to the grid l2 through the cell volume
        let residual = (dropped2 / self.grid.cell_volume()).sqrt() / norm;
        if residual > tol {
            return Err(Error::CutoffResidual { residual, required_lambda: self.lambda_max });
        }
        Ok((GridFunction::new(self.grid, self.inverse(&c)), residual))
    }

    /// Heat kernel `W_t(x, y)` between two grid nodes.
    pub fn heat_kernel_at(&self, t: f64, x_idx: usize, y_idx: usize) -> f64 {
        assert!(t > 0.0, "heat kernel needs t > 0");
        match &self.data {
            ModelData::Separable { axes } => {
                let mut mi = [0usize; 6];
                let mut mj = [0usize; 6];
                self.grid.multi_index(x_idx, &mut mi[..axes.len()]);
                self.grid.multi_index(y_idx, &mut mj[..axes.len()]);
                axes.iter()
                    .enumerate()
                    .map(|(a, ax)| ax.kernel_sum(t, mi[a], mj[a], |_| 1.0))
                    .product()
            }
            ModelData::Dense { size, eigenvalues, vectors } => {
                let mut s = 0.0;
                for j in 0..*size {
                    s += (-t * eigenvalues[j]).exp()
                        * vectors[j * size + x_idx]
                        * vectors[j * size + y_idx];
                }
                s
            }
        }
    }

    /// Time derivative `∂_t W_t(x, y)`; in separable mode the product rule
    /// spreads the per-axis generator across the factors.
    pub fn heat_kernel_dt_at(&self, t: f64, x_idx: usize, y_idx: usize) -> f64 {
        match &self.data {
            ModelData::Separable { axes } => {
                let mut mi = [0usize; 6];
                let mut mj = [0usize; 6];
                self.grid.multi_index(x_idx, &mut mi[..axes.len()]);
                self.grid.multi_index(y_idx, &mut mj[..axes.len()]);
                let plain: Vec<f64> = axes
                    .iter()
                    .enumerate()
                    .map(|(a, ax)| ax.kernel_sum(t, mi[a], mj[a], |_| 1.0))
                    .collect();
                let deriv: Vec<f64> = axes
                    .iter()
                    .enumerate()
                    .map(|(a, ax)| ax.kernel_sum(t, mi[a], mj[a], |l| -l))
                    .collect();
                (0..axes.len())
                    .map(|a| {
                        deriv[a]
                            * (0..axes.len())
                                .filter(|&b| b != a)
                                .map(|b| plain[b])
                                .product::<f64>()
                    })
                    .sum()
            }
            ModelData::Dense { size, eigenvalues, vectors } => {
                let mut s = 0.0;
                for j in 0..*size {
                    s += -eigenvalues[j]
                        * (-t * eigenvalues[j]).exp()
                        * vectors[j * size + x_idx]
                        * vectors[j * size + y_idx];
                }
                s
            }
        }
    }

    /// Largest orthonormality defect across axes (or the dense basis).
    pub fn orthonormality_defect(&self) -> f64 {
        match &self.data {
            ModelData::Separable { axes } => axes
                .iter()
                .map(|a| a.orthonormality_defect())
                .fold(0.0, f64::max),
            ModelData::Dense { size, vectors, .. } => {
                let w = self.grid.cell_volume();
                let mut worst = 0.0f64;
                // sample the Gram matrix: full check is O(size³)
                let step = (*size / 64).max(1);
                for i in (0..*size).step_by(step) {
                    for j in (i..*size).step_by(step) {
                        let dot: f64 = (0..*size)
                            .map(|k| vectors[i * size + k] * vectors[j * size + k])
                            .sum::<f64>()
                            * w;
                        let target = if i == j { 1.0 } else { 0.0 };
                        worst = worst.max((dot - target).abs());
                    }
                }
                worst
            }
        }
    }

    /// Tensor eigenvector as a grid function (unit coefficient inverse).
    pub fn eigenfunction(&self, coeff_idx: usize) -> GridFunction {
        let mut c = vec![0.0; self.grid.len()];
        c[coeff_idx] = 1.0;
        GridFunction::new(self.grid, self.inverse(&c))
    }
}

/// Apply an m×m matrix along axis 0 of a tensor (fibers are contiguous).
fn apply_axis0(input: &[f64], out: &mut [f64], m: usize, mat: &[f64]) {
    out.par_chunks_mut(m)
        .zip(input.par_chunks(m))
        .with_min_len(16)
        .for_each(|(of, inf)| {
            for (j, o) in of.iter_mut().enumerate() {
                let row = &mat[j * m..(j + 1) * m];
                *o = row.iter().zip(inf).map(|(a, b)| a * b).sum();
            }
        });
}

/// Cyclic axis rotation: multi-index (i0, i1, ..) moves to (i1, .., i0).
fn rotate_left(src: &[f64], dst: &mut [f64], m: usize, n: usize) {
    if n == 1 {
        dst.copy_from_slice(src);
        return;
    }
    let lead = src.len() / m; // m^{n-1}
    for (flat, &v) in src.iter().enumerate() {
        let i0 = flat % m;
        dst[flat / m + i0 * lead] = v;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::potential::{Potential, PotentialSpec, RhExponent};

    fn model(spec: &PotentialSpec, n: usize, m: usize, l: f64) -> SpectralModel {
        let g = BoxGrid::new(n, m, l, 1.0).unwrap();
        let p = Potential::build(spec, g, RhExponent::Infinite).unwrap();
        SpectralModel::assemble(&p).unwrap()
    }

    #[test]
    fn dirichlet_eigenvalues_free_axis() {
        // v ≡ 0 on [-L, L]: λ_k -> (kπ / 2L)²
        let m = 256;
        let l = 3.0;
        let md = model(&PotentialSpec::Free, 1, m, l);
        let axes = md.axes().unwrap();
        let exact = |k: usize| (k as f64 * std::f64::consts::PI / (2.0 * l)).powi(2);
        for k in 1..=3 {
            let got = axes[0].eigenvalues[k - 1];
            let want = exact(k);
            assert!((got - want).abs() / want < 1e-3, "k={k}: {got} vs {want}");
        }
        let got1 = axes[0].eigenvalues[0];
        assert!((got1 - exact(1)).abs() / exact(1) < 1e-3);
    }

    #[test]
    fn oscillator_spectrum() {
        // v(u) = u² on a wide box: eigenvalues approach 1, 3, 5, 7
        let md = model(&PotentialSpec::SeparablePolynomial { coeffs: vec![0.0, 0.0, 1.0] }, 1, 512, 8.0);
        let axes = md.axes().unwrap();
        for k in 0..4 {
            let want = (2 * k + 1) as f64;
            let got = axes[0].eigenvalues[k];
            assert!(
                (got - want).abs() / want < 1e-3,
                "k={k}: {got} vs {want} (rel {})",
                (got - want).abs() / want
            );
        }
    }

    #[test]
    fn coarse_grid_rejected() {
        let err = eigensolve_axis(&[0.0; 4], 0.1, 0).unwrap_err();
        assert!(matches!(err, Error::GridTooCoarse { m: 4 }));
    }

    #[test]
    fn orthonormality_defect_small() {
        let md = model(&PotentialSpec::Harmonic, 2, 32, 3.0);
        assert!(md.orthonormality_defect() < 1e-10);
    }

    #[test]
    fn identity_calculus() {
        let md = model(&PotentialSpec::Harmonic, 3, 16, 3.0);
        let f = GridFunction::from_fn(md.grid, |p| (p[0] - 0.5 * p[1] + 0.25 * p[2]).sin());
        let g = md.apply_fn(&|_| 1.0, &f);
        let mut diff = g.clone();
        diff.axpy(-1.0, &f);
        assert!(diff.norm_l2() <= 1e-10 * f.norm_l2());
    }

    #[test]
    fn spectral_action_on_eigenfunction() {
        let md = model(&PotentialSpec::Constant { amplitude: 1.0 }, 2, 24, 2.0);
        let idx = 5;
        let lam = md.eigenvalue_of(idx);
        let ef = md.eigenfunction(idx);
        let t = 0.37;
        let out = md.apply_fn(&|l| (-t * l).exp(), &ef);
        let mut diff = out.clone();
        diff.axpy(-(-t * lam).exp(), &ef);
        assert!(diff.norm_l2() < 1e-12 * ef.norm_l2().max(1.0));
    }

    #[test]
    fn inverse_square_root_pair() {
        let md = model(&PotentialSpec::Harmonic, 2, 20, 3.0);
        let f = GridFunction::from_fn(md.grid, |p| (1.3 * p[0]).cos() * (0.7 * p[1]).sin());
        let half = md.apply_fn(&|l| l.powf(-0.5), &f);
        let back = md.apply_fn(&|l| l.powf(0.5), &half);
        let mut diff = back.clone();
        diff.axpy(-1.0, &f);
        assert!(diff.norm_l2() <= 1e-8 * f.norm_l2());
    }

    #[test]
    fn semigroup_law() {
        let md = model(&PotentialSpec::Harmonic, 1, 64, 4.0);
        let f = GridFunction::from_fn(md.grid, |p| (p[0] * 0.9).sin() + 0.2);
        for s in [0.01, 0.1, 1.0] {
            for t in [0.01, 0.1, 1.0] {
                let one = md.apply_fn(&|l| (-t * l).exp(), &f);
                let two = md.apply_fn(&|l| (-s * l).exp(), &one);
                let direct = md.apply_fn(&|l| (-(s + t) * l).exp(), &f);
                let mut diff = two.clone();
                diff.axpy(-1.0, &direct);
                assert!(diff.norm_l2() <= 1e-9 * f.norm_l2());
            }
        }
    }

    #[test]
    fn heat_kernel_symmetry_and_positivity() {
        let md = model(&PotentialSpec::Harmonic, 3, 20, 3.0);
        let g = md.grid;
        let h2 = g.h() * g.h();
        let pairs = [(0usize, 1usize), (100, 2000), (555, 3333), (1234, 4321)];
        for &(i, j) in &pairs {
            for t in [h2, 0.1, 1.0] {
                let a = md.heat_kernel_at(t, i, j);
                let b = md.heat_kernel_at(t, j, i);
                assert!((a - b).abs() <= 1e-12 * a.abs().max(1.0));
                assert!(a >= -1e-12, "negative kernel {a} at t={t}");
            }
        }
    }

    #[test]
    fn constant_potential_factorization() {
        // V ≡ 1 shifts the spectrum: W_t = e^{-t} W⁰_t
        let g = BoxGrid::new(2, 24, 3.0, 1.0).unwrap();
        let p1 = Potential::build(&PotentialSpec::Constant { amplitude: 1.0 }, g, RhExponent::Infinite)
            .unwrap();
        let p0 = Potential::build(&PotentialSpec::Free, g, RhExponent::Infinite).unwrap();
        let m1 = SpectralModel::assemble(&p1).unwrap();
        let m0 = SpectralModel::assemble(&p0).unwrap();
        let t = 0.2;
        for (i, j) in [(10usize, 20usize), (100, 200), (5, 500)] {
            let a = m1.heat_kernel_at(t, i, j);
            let b = (-t_f64(t)).exp() * m0.heat_kernel_at(t, i, j);
            assert!((a - b).abs() < 1e-10 * b.abs().max(1e-10), "{a} vs {b}");
        }
    }

    fn t_f64(t: f64) -> f64 {
        t
    }

    #[test]
    fn free_kernel_matches_gaussian_interior() {
        // V ≡ 0, 1D, wide box, τ = t/h² large enough that the second-order
        // stencil error stays below 1%
        let md = model(&PotentialSpec::Free, 1, 255, 4.0);
        let g = md.grid;
        let h = g.h();
        let center = g.nearest_node(&[0.0]);
        for tau in [48.0, 96.0] {
            let t = tau * h * h;
            for off in [0usize, 2, 5] {
                let j = center + off;
                let r = off as f64 * h;
                let got = md.heat_kernel_at(t, center, j);
                let want = (4.0 * std::f64::consts::PI * t).powf(-0.5) * (-r * r / (4.0 * t)).exp();
                assert!(
                    (got - want).abs() / want < 0.01,
                    "tau={tau} off={off}: {got} vs {want}"
                );
            }
        }
    }

    #[test]
    fn domination_by_free_kernel() {
        let g = BoxGrid::new(2, 20, 3.0, 1.0).unwrap();
        let pv = Potential::build(&PotentialSpec::Harmonic, g, RhExponent::Infinite).unwrap();
        let p0 = Potential::build(&PotentialSpec::Free, g, RhExponent::Infinite).unwrap();
        let mv = SpectralModel::assemble(&pv).unwrap();
        let m0 = SpectralModel::assemble(&p0).unwrap();
        let h2 = g.h() * g.h();
        for t in [h2, 0.1, 0.5] {
            for (i, j) in [(0usize, 0usize), (50, 51), (100, 300), (200, 200)] {
                let v = mv.heat_kernel_at(t, i, j);
                let f = m0.heat_kernel_at(t, i, j);
                assert!(v <= f + 1e-10, "t={t}: {v} > {f}");
            }
        }
    }

    #[test]
    fn cutoff_residual_reported_and_enforced() {
        let md = model(&PotentialSpec::Harmonic, 1, 32, 3.0);
        let f = GridFunction::from_fn(md.grid, |p| if p[0].abs() < 0.5 { 1.0 } else { 0.0 });
        // generous cutoff: residual tiny for a heavily smoothing φ
        let (out, res) = md
            .apply_fn_cutoff(&|l| (-l).exp(), &f, Some(md.lambda_max * 0.9), 1e-8)
            .unwrap();
        assert!(res <= 1e-8);
        assert!(out.norm_l2() > 0.0);
        // harsh cutoff on the identity must fail for a rough f
        let err = md.apply_fn_cutoff(&|_| 1.0, &f, Some(md.lambda_min * 4.0), 1e-8);
        assert!(matches!(err, Err(Error::CutoffResidual { .. })));
    }

    #[test]
    fn dense_mode_matches_separable() {
        let g = BoxGrid::new(2, 10, 2.0, 0.5).unwrap();
        let sep = Potential::build(&PotentialSpec::Harmonic, g, RhExponent::Infinite).unwrap();
        let dense_values = sep.values_on_grid().values;
        let dpot = Potential::build(
            &PotentialSpec::DenseSamples { values: dense_values },
            g,
            RhExponent::Infinite,
        )
        .unwrap();
        let ms = SpectralModel::assemble(&sep).unwrap();
        let md = SpectralModel::assemble(&dpot).unwrap();
        assert!((ms.lambda_min - md.lambda_min).abs() < 1e-8 * ms.lambda_min);
        let f = GridFunction::from_fn(g, |p| (p[0] + p[1]).sin());
        let a = ms.apply_fn(&|l| (-0.1 * l).exp(), &f);
        let b = md.apply_fn(&|l| (-0.1 * l).exp(), &f);
        let mut diff = a.clone();
        diff.axpy(-1.0, &b);
        assert!(diff.norm_l2() < 1e-9 * f.norm_l2());
    }

    #[test]
    fn strong_continuity_monotone() {
        let md = model(&PotentialSpec::Constant { amplitude: 1.0 }, 1, 48, 3.0);
        let f = GridFunction::from_fn(md.grid, |p| (p[0] * std::f64::consts::PI / 6.0).cos());
        let mut last = f64::INFINITY;
        for &t in &[1.0, 0.3, 0.1, 0.03, 0.01, 0.003] {
            let wt = md.apply_fn(&|l| (-t * l).exp(), &f);
            let mut diff = wt.clone();
            diff.axpy(-1.0, &f);
            let err = diff.norm_l2();
            assert!(err <= last + 1e-14);
            last = err;
        }
        assert!(last < 0.05 * f.norm_l2());
    }
}
