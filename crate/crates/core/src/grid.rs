//! Tensor grid on the truncated box `[-Lbox, Lbox]^n` with Dirichlet walls.
//!
//! Nodes are the interior points of a uniform subdivision: `x_i = -L + (i+1)h`
//! with `h = 2L/(m+1)`, so the walls themselves carry the homogeneous
//! boundary condition and every node owns a cell of volume `h^n` centered at
//! it.  Ball integrals over grid functions use cell-center inclusion: a cell
//! contributes iff its center lies in the ball.

use crate::{Error, Result};

/// Box geometry and resolution. Cheap to copy; embedded in every field type.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoxGrid {
    /// Spatial dimension (1, 2 or 3 in practice).
    pub n: usize,
    /// Nodes per axis.
    pub m: usize,
    /// Half-width of the box.
    pub lbox: f64,
    /// Boundary margin excluded from kernel-estimate reporting.
    pub margin: f64,
}

impl BoxGrid {
    pub fn new(n: usize, m: usize, lbox: f64, margin: f64) -> Result<Self> {
        if n == 0 || n > 6 {
            return Err(Error::UnsupportedDimension { n });
        }
        if m < 8 {
            return Err(Error::GridTooCoarse { m });
        }
        if !(lbox > 0.0) || !(margin >= 0.0) {
            return Err(Error::InvalidParam(format!(
                "box half-width {lbox} and margin {margin} must be positive"
            )));
        }
        Ok(BoxGrid { n, m, lbox, margin })
    }

    /// Node spacing.
    #[inline]
    pub fn h(&self) -> f64 {
        2.0 * self.lbox / (self.m as f64 + 1.0)
    }

    /// Quadrature weight of one cell.
    #[inline]
    pub fn cell_volume(&self) -> f64 {
        self.h().powi(self.n as i32)
    }

    /// Coordinate of node `i` along one axis.
    #[inline]
    pub fn coord(&self, i: usize) -> f64 {
        -self.lbox + (i as f64 + 1.0) * self.h()
    }

    /// Total number of nodes.
    #[inline]
    pub fn len(&self) -> usize {
        self.m.pow(self.n as u32)
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        false
    }

    /// Flat index of a multi-index (axis 0 fastest).
    #[inline]
    pub fn index(&self, multi: &[usize]) -> usize {
        let mut idx = 0usize;
        for a in (0..self.n).rev() {
            idx = idx * self.m + multi[a];
        }
        idx
    }

    /// Multi-index of a flat index.
    #[inline]
    pub fn multi_index(&self, mut idx: usize, out: &mut [usize]) {
        for a in 0..self.n {
            out[a] = idx % self.m;
            idx /= self.m;
        }
    }

    /// Coordinates of the node with flat index `idx`.
    pub fn point(&self, idx: usize) -> Vec<f64> {
        let mut mi = [0usize; 6];
        self.multi_index(idx, &mut mi[..self.n]);
        (0..self.n).map(|a| self.coord(mi[a])).collect()
    }

    /// Nearest node index to an arbitrary point (coordinates clamped into the box).
    pub fn nearest_node(&self, p: &[f64]) -> usize {
        let h = self.h();
        let mut mi = [0usize; 6];
        for a in 0..self.n {
            let t = ((p[a] + self.lbox) / h - 1.0).round();
            mi[a] = t.clamp(0.0, (self.m - 1) as f64) as usize;
        }
        self.index(&mi[..self.n])
    }

    /// Distance from `p` to the box boundary (0 outside).
    pub fn boundary_distance(&self, p: &[f64]) -> f64 {
        let mut d = f64::INFINITY;
        for a in 0..self.n {
            d = d.min(self.lbox - p[a]).min(p[a] + self.lbox);
        }
        d.max(0.0)
    }

    /// True if `p` lies strictly inside the box.
    pub fn contains(&self, p: &[f64]) -> bool {
        p.iter().take(self.n).all(|&c| c.abs() < self.lbox)
    }

    /// True if the node is at least `depth` away from every wall.
    pub fn node_margin_ok(&self, idx: usize, depth: f64) -> bool {
        let p = self.point(idx);
        self.boundary_distance(&p) >= depth
    }

    /// Axis index ranges of nodes whose coordinate lies in `[lo, hi]`.
    pub fn axis_range(&self, lo: f64, hi: f64) -> std::ops::Range<usize> {
        let h = self.h();
        let first = (((lo + self.lbox) / h - 1.0).ceil().max(0.0)) as usize;
        let last = (((hi + self.lbox) / h - 1.0).floor()).min((self.m - 1) as f64);
        if last < 0.0 || first as f64 > last {
            return first..first;
        }
        first..(last as usize + 1)
    }

    /// Flat indices of all nodes whose cell center lies in the ball `B(c, r)`.
    pub fn cells_in_ball(&self, center: &[f64], r: f64) -> Vec<usize> {
        let mut out = Vec::new();
        let r2 = r * r;
        match self.n {
            1 => {
                for i in self.axis_range(center[0] - r, center[0] + r) {
                    let dx = self.coord(i) - center[0];
                    if dx * dx <= r2 {
                        out.push(i);
                    }
                }
            }
            2 => {
                for j in self.axis_range(center[1] - r, center[1] + r) {
                    let dy = self.coord(j) - center[1];
                    let rem = r2 - dy * dy;
                    if rem < 0.0 {
                        continue;
                    }
                    for i in self.axis_range(center[0] - r, center[0] + r) {
                        let dx = self.coord(i) - center[0];
                        if dx * dx <= rem {
                            out.push(i + self.m * j);
                        }
                    }
                }
            }
            3 => {
                for k in self.axis_range(center[2] - r, center[2] + r) {
                    let dz = self.coord(k) - center[2];
                    let rem2 = r2 - dz * dz;
                    if rem2 < 0.0 {
                        continue;
                    }
                    for j in self.axis_range(center[1] - r, center[1] + r) {
                        let dy = self.coord(j) - center[1];
                        let rem = rem2 - dy * dy;
                        if rem < 0.0 {
                            continue;
                        }
                        let base = self.m * (j + self.m * k);
                        for i in self.axis_range(center[0] - r, center[0] + r) {
                            let dx = self.coord(i) - center[0];
                            if dx * dx <= rem {
                                out.push(i + base);
                            }
                        }
                    }
                }
            }
            _ => {
                // generic fallback, used only by small dense grids
                for idx in 0..self.len() {
                    let p = self.point(idx);
                    let d2: f64 = p
                        .iter()
                        .zip(center)
                        .map(|(a, b)| (a - b) * (a - b))
                        .sum();
                    if d2 <= r2 {
                        out.push(idx);
                    }
                }
            }
        }
        out
    }
}

/// Real values on the tensor grid together with the box metadata.
#[derive(Debug, Clone)]
pub struct GridFunction {
    pub grid: BoxGrid,
    pub values: Vec<f64>,
}

impl GridFunction {
    pub fn new(grid: BoxGrid, values: Vec<f64>) -> Self {
        debug_assert_eq!(values.len(), grid.len());
        GridFunction { grid, values }
    }

    pub fn zeros(grid: BoxGrid) -> Self {
        GridFunction { grid, values: vec![0.0; grid.len()] }
    }

    pub fn constant(grid: BoxGrid, c: f64) -> Self {
        GridFunction { grid, values: vec![c; grid.len()] }
    }

    /// Sample a pointwise map of the node coordinates.
    pub fn from_fn(grid: BoxGrid, f: impl Fn(&[f64]) -> f64) -> Self {
        let mut values = vec![0.0; grid.len()];
        let mut mi = [0usize; 6];
        for (idx, v) in values.iter_mut().enumerate() {
            grid.multi_index(idx, &mut mi[..grid.n]);
            let p: Vec<f64> = (0..grid.n).map(|a| grid.coord(mi[a])).collect();
            *v = f(&p);
        }
        GridFunction { grid, values }
    }

    /// Discrete `L^p` norm `(h^n Σ |f|^p)^{1/p}`.
    pub fn norm_p(&self, p: f64) -> f64 {
        let w = self.grid.cell_volume();
        if (p - 2.0).abs() < 1e-14 {
            (w * self.values.iter().map(|v| v * v).sum::<f64>()).sqrt()
        } else {
            (w * self.values.iter().map(|v| v.abs().powf(p)).sum::<f64>()).powf(1.0 / p)
        }
    }

    pub fn norm_l2(&self) -> f64 {
        self.norm_p(2.0)
    }

    pub fn norm_sup(&self) -> f64 {
        self.values.iter().fold(0.0f64, |a, v| a.max(v.abs()))
    }

    /// Sup norm restricted to nodes at least `depth` from the walls.
    pub fn norm_sup_interior(&self, depth: f64) -> f64 {
        let mut best = 0.0f64;
        for (idx, v) in self.values.iter().enumerate() {
            if self.grid.node_margin_ok(idx, depth) {
                best = best.max(v.abs());
            }
        }
        best
    }

    /// Cell-center quadrature of `f` over the ball described by `cells`.
    pub fn ball_mean(&self, cells: &[usize]) -> f64 {
        if cells.is_empty() {
            return 0.0;
        }
        let s: f64 = cells.iter().map(|&i| self.values[i]).sum();
        s / cells.len() as f64
    }

    /// Multilinear interpolation at an arbitrary point (clamped at edges).
    pub fn interp_multilinear(&self, p: &[f64]) -> f64 {
        let g = self.grid;
        let h = g.h();
        let mut base = [0usize; 6];
        let mut frac = [0.0f64; 6];
        for a in 0..g.n {
            let s = ((p[a] + g.lbox) / h - 1.0).clamp(0.0, (g.m - 1) as f64);
            let i = (s.floor() as usize).min(g.m - 2);
            base[a] = i;
            frac[a] = (s - i as f64).clamp(0.0, 1.0);
        }
        let corners = 1usize << g.n;
        let mut acc = 0.0;
        let mut mi = [0usize; 6];
        for c in 0..corners {
            let mut w = 1.0;
            for a in 0..g.n {
                let hi = (c >> a) & 1 == 1;
                mi[a] = base[a] + hi as usize;
                w *= if hi { frac[a] } else { 1.0 - frac[a] };
            }
            if w != 0.0 {
                acc += w * self.values[g.index(&mi[..g.n])];
            }
        }
        acc
    }

    pub fn axpy(&mut self, a: f64, other: &GridFunction) {
        for (v, o) in self.values.iter_mut().zip(&other.values) {
            *v += a * o;
        }
    }

    pub fn scale(&mut self, a: f64) {
        for v in self.values.iter_mut() {
            *v *= a;
        }
    }
}
