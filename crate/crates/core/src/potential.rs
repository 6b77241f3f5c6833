//! The nonnegative potential `V`, its reverse Hölder diagnostics, the
//! critical radius field `ρ(x)` and the covering of the box by critical balls.
//!
//! `ρ(x)` is the largest scale at which the mass of `V`, weighted by
//! `r^{2-n}`, stays below one:
//!
//! ```text
//! ρ(x) = sup { r > 0 : r^{2-n} ∫_{B(x,r)} V ≤ 1 }
//! ```
//!
//! The tested quantity need not be monotone in `r`, so the scan takes the
//! supremum over a log-spaced radius grid and then refines by bisection.
//! Separable potentials use exact slice quadrature of a piecewise-quadratic
//! axis reconstruction, which keeps the scanned quantity smooth in `r` and
//! reproduces polynomial closed forms to round-off; dense potentials fall
//! back to cell sums with a linear radial coverage weight.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bmo::BallEnsemble;
use crate::grid::{BoxGrid, GridFunction};
use crate::quad::{ball_axis_integral, AxisProfile};
use crate::report::{Table, VerificationReport};
use crate::{Error, Result};

/// Reverse Hölder exponent: finite `q > n/2`, or the infinite sentinel for
/// potentials (constants, polynomials) that satisfy the inequality for all q.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum RhExponent {
    Finite(f64),
    Infinite,
}

impl RhExponent {
    pub fn delta0(&self, n: usize) -> f64 {
        match self {
            RhExponent::Finite(q) => 2.0 - n as f64 / q,
            RhExponent::Infinite => 2.0,
        }
    }
}

#[derive(Debug, Clone)]
enum PotentialData {
    /// `V(x) = Σ_i v_i(x_i)`, one sample vector per axis.
    Separable { factors: Vec<Vec<f64>>, profiles: Vec<AxisProfile> },
    /// Full tensor samples, small grids only.
    Dense { values: Vec<f64> },
}

/// Maximum number of dense unknowns accepted by `build`.
pub const DENSE_CAP: usize = 4096;

/// The potential `V ≥ 0` on the box, with its reverse Hölder exponent.
#[derive(Debug, Clone)]
pub struct Potential {
    pub grid: BoxGrid,
    pub q: RhExponent,
    data: PotentialData,
}

/// Named presets plus raw-sample construction.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "preset", rename_all = "snake_case", deny_unknown_fields)]
pub enum PotentialSpec {
    /// `V ≡ c`, split evenly across axes.
    Constant { amplitude: f64 },
    /// `V(x) = |x|²`.
    Harmonic,
    /// `v_i(u) = Σ_j coeffs[j] u^j` on every axis.
    SeparablePolynomial { coeffs: Vec<f64> },
    /// Explicit per-axis samples (length m each).
    SeparableSamples { factors: Vec<Vec<f64>> },
    /// Explicit tensor samples (length m^n).
    DenseSamples { values: Vec<f64> },
    /// `V ≡ 0` (free Laplacian; every radius is admissible, ρ is box-capped).
    Free,
}

impl Potential {
    pub fn build(spec: &PotentialSpec, grid: BoxGrid, q: RhExponent) -> Result<Self> {
        if let RhExponent::Finite(qv) = q {
            if qv <= grid.n as f64 / 2.0 {
                return Err(Error::ReverseHolderExponent { q: qv, half_n: grid.n as f64 / 2.0 });
            }
        }
        let axis_samples = |f: &dyn Fn(f64) -> f64| -> Vec<f64> {
            (0..grid.m).map(|k| f(grid.coord(k))).collect()
        };
        let data = match spec {
            PotentialSpec::Constant { amplitude } => {
                if !(*amplitude > 0.0) {
                    return Err(Error::InvalidParam("constant preset needs amplitude > 0".into()));
                }
                let per_axis = amplitude / grid.n as f64;
                let factors = vec![vec![per_axis; grid.m]; grid.n];
                PotentialData::separable(grid, factors)?
            }
            PotentialSpec::Harmonic => {
                let factors = vec![axis_samples(&|u| u * u); grid.n];
                PotentialData::separable(grid, factors)?
            }
            PotentialSpec::SeparablePolynomial { coeffs } => {
                let eval = |u: f64| coeffs.iter().rev().fold(0.0, |acc, c| acc * u + c);
                let factors = vec![axis_samples(&eval); grid.n];
                PotentialData::separable(grid, factors)?
            }
            PotentialSpec::SeparableSamples { factors } => {
                PotentialData::separable(grid, factors.clone())?
            }
            PotentialSpec::DenseSamples { values } => {
                if grid.len() > DENSE_CAP {
                    return Err(Error::DenseCapExceeded { unknowns: grid.len(), cap: DENSE_CAP });
                }
                if values.len() != grid.len() {
                    return Err(Error::InvalidParam(format!(
                        "dense samples: expected {} values, got {}",
                        grid.len(),
                        values.len()
                    )));
                }
                check_nonnegative(values)?;
                PotentialData::Dense { values: values.clone() }
            }
            PotentialSpec::Free => {
                let factors = vec![vec![0.0; grid.m]; grid.n];
                PotentialData::separable(grid, factors)?
            }
        };
        Ok(Potential { grid, q, data })
    }

    /// Smoothness budget `δ0 = 2 - n/q` (2 for the infinite sentinel).
    pub fn delta0(&self) -> f64 {
        self.q.delta0(self.grid.n)
    }

    pub fn is_separable(&self) -> bool {
        matches!(self.data, PotentialData::Separable { .. })
    }

    /// Per-axis sample vectors (separable mode only).
    pub fn axis_factors(&self) -> Option<&[Vec<f64>]> {
        match &self.data {
            PotentialData::Separable { factors, .. } => Some(factors),
            PotentialData::Dense { .. } => None,
        }
    }

    /// `V` sampled on the tensor grid.
    pub fn values_on_grid(&self) -> GridFunction {
        match &self.data {
            PotentialData::Dense { values } => GridFunction::new(self.grid, values.clone()),
            PotentialData::Separable { factors, .. } => {
                let g = self.grid;
                let mut values = vec![0.0; g.len()];
                let mut mi = [0usize; 6];
                for (idx, v) in values.iter_mut().enumerate() {
                    g.multi_index(idx, &mut mi[..g.n]);
                    *v = (0..g.n).map(|a| factors[a][mi[a]]).sum();
                }
                GridFunction::new(g, values)
            }
        }
    }

    /// Point value of `V` (reconstruction for separable, nearest node for dense).
    pub fn value_at(&self, p: &[f64]) -> f64 {
        match &self.data {
            PotentialData::Separable { profiles, .. } => {
                (0..self.grid.n).map(|a| profiles[a].value(p[a])).sum()
            }
            PotentialData::Dense { values } => values[self.grid.nearest_node(p)],
        }
    }

    /// ∫_{B(x,r)} V, the mass entering the critical-radius condition.
    pub fn ball_integral(&self, x: &[f64], r: f64) -> f64 {
        match &self.data {
            PotentialData::Separable { profiles, .. } => profiles
                .iter()
                .enumerate()
                .map(|(a, pr)| ball_axis_integral(pr, self.grid.n, x[a], r))
                .sum(),
            PotentialData::Dense { values } => {
                // linear radial coverage keeps the mass continuous in r
                let h = self.grid.h();
                let mut total = 0.0;
                for idx in self.grid.cells_in_ball(x, r + h) {
                    let p = self.grid.point(idx);
                    let d: f64 = p
                        .iter()
                        .zip(x)
                        .map(|(a, b)| (a - b) * (a - b))
                        .sum::<f64>()
                        .sqrt();
                    let w = ((r - d) / h + 0.5).clamp(0.0, 1.0);
                    total += w * values[idx];
                }
                total * self.grid.cell_volume()
            }
        }
    }

    /// The scanned quantity `F(x, r) = r^{2-n} ∫_{B(x,r)} V`.
    pub fn rho_condition(&self, x: &[f64], r: f64) -> f64 {
        r.powi(2 - self.grid.n as i32) * self.ball_integral(x, r)
    }
}

impl PotentialData {
    fn separable(grid: BoxGrid, factors: Vec<Vec<f64>>) -> Result<Self> {
        if factors.len() != grid.n || factors.iter().any(|f| f.len() != grid.m) {
            return Err(Error::SeparableShape {
                expected: grid.n,
                len: grid.m,
                got: factors.len(),
            });
        }
        for f in &factors {
            check_nonnegative(f)?;
        }
        let nodes: Vec<f64> = (0..grid.m).map(|k| grid.coord(k)).collect();
        let profiles = factors
            .iter()
            .map(|f| AxisProfile::new(nodes.clone(), f))
            .collect();
        Ok(PotentialData::Separable { factors, profiles })
    }
}

fn check_nonnegative(values: &[f64]) -> Result<()> {
    for (index, &value) in values.iter().enumerate() {
        if !(value >= 0.0) {
            return Err(Error::NegativePotential { index, value });
        }
    }
    Ok(())
}

/// Scan parameters for the critical radius.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct RhoScan {
    /// Log-spaced radii per scan.
    pub scan_points: usize,
    /// Bisection refinement steps.
    pub bisection_steps: usize,
    /// Relative tolerance target of the refinement.
    pub rel_tol: f64,
}

impl Default for RhoScan {
    fn default() -> Self {
        RhoScan { scan_points: 64, bisection_steps: 40, rel_tol: 1e-6 }
    }
}

/// One critical-radius evaluation.
#[derive(Debug, Clone, Copy)]
pub struct RhoValue {
    pub rho: f64,
    /// The scan hit the boundary cap with every radius admissible.
    pub capped: bool,
    /// The value lies below the 2h scan floor (separable integrator only).
    pub subgrid: bool,
}

/// `ρ` evaluated at an arbitrary point of the box.
pub fn critical_radius(pot: &Potential, x: &[f64], scan: &RhoScan) -> Result<RhoValue> {
    let grid = pot.grid;
    if !grid.contains(x) {
        return Err(Error::PointOutsideBox { point: x.to_vec() });
    }
    let cap = grid.boundary_distance(x);
    let r_min = (2.0 * grid.h()).min(cap);
    let admissible = |r: f64| pot.rho_condition(x, r) <= 1.0;
    // sup over the scan grid (the condition need not be monotone)
    let points = if cap > r_min { scan.scan_points } else { 1 };
    let ratio = if points > 1 {
        (cap / r_min).powf(1.0 / (points - 1) as f64)
    } else {
        1.0
    };
    let mut last_ok: Option<usize> = None;
    let mut radii = Vec::with_capacity(points);
    for k in 0..points {
        let r = r_min * ratio.powi(k as i32);
        radii.push(r);
        if admissible(r) {
            last_ok = Some(k);
        }
    }
    if let Some(k_ok) = last_ok {
        if k_ok == points - 1 {
            return Ok(RhoValue { rho: cap.min(radii[k_ok]), capped: true, subgrid: false });
        }
        let rho = bisect(&admissible, radii[k_ok], radii[k_ok + 1], scan);
        return Ok(RhoValue { rho, capped: false, subgrid: false });
    }
    // nothing admissible at or above the grid scale; the slice integrator of
    // separable potentials stays continuum-accurate below it, so extend the
    // scan downward and flag the value instead of failing the whole field
    if pot.is_separable() {
        let sub_points = 32;
        let sub_ratio = (1024f64).powf(1.0 / (sub_points - 1) as f64);
        let mut sub_last: Option<f64> = None;
        let mut next_up = r_min;
        let mut sub_radii = Vec::with_capacity(sub_points);
        for k in 0..sub_points {
            let r = r_min / 1024.0 * sub_ratio.powi(k as i32);
            sub_radii.push(r);
        }
        for (i, &r) in sub_radii.iter().enumerate() {
            if admissible(r) {
                sub_last = Some(r);
                next_up = if i + 1 < sub_points { sub_radii[i + 1] } else { r_min };
            }
        }
        if let Some(lo) = sub_last {
            let rho = bisect(&admissible, lo, next_up, scan);
            return Ok(RhoValue { rho, capped: false, subgrid: true });
        }
    }
    Err(Error::RhoBelowResolution { point: x.to_vec(), r_min })
}

fn bisect(admissible: &impl Fn(f64) -> bool, mut lo: f64, mut hi: f64, scan: &RhoScan) -> f64 {
    for _ in 0..scan.bisection_steps {
        if (hi - lo) <= scan.rel_tol * lo {
            break;
        }
        let mid = 0.5 * (lo + hi);
        if admissible(mid) {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    lo
}

/// The critical radius at every grid node.
#[derive(Debug, Clone)]
pub struct RhoField {
    pub grid: BoxGrid,
    pub values: Vec<f64>,
    pub capped: Vec<bool>,
    pub subgrid: Vec<bool>,
    pub scan: RhoScan,
}

impl RhoField {
    pub fn compute(pot: &Potential, scan: &RhoScan) -> Result<Self> {
        let grid = pot.grid;
        let results: Vec<Result<RhoValue>> = (0..grid.len())
            .into_par_iter()
            .map(|idx| {
                let p = grid.point(idx);
                critical_radius(pot, &p, scan)
            })
            .collect();
        let mut values = Vec::with_capacity(grid.len());
        let mut capped = Vec::with_capacity(grid.len());
        let mut subgrid = Vec::with_capacity(grid.len());
        for r in results {
            let r = r?;
            values.push(r.rho);
            capped.push(r.capped);
            subgrid.push(r.subgrid);
        }
        Ok(RhoField { grid, values, capped, subgrid, scan: *scan })
    }

    #[inline]
    pub fn at(&self, idx: usize) -> f64 {
        self.values[idx]
    }

    pub fn min(&self) -> f64 {
        self.values.iter().cloned().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.values.iter().cloned().fold(0.0, f64::max)
    }

    /// CSV export: coordinates, ρ, capped flag and covering membership.
    pub fn to_table(&self, covering: Option<&CriticalCovering>) -> Table {
        let mut cols: Vec<String> = (0..self.grid.n).map(|a| format!("x{a}")).collect();
        cols.push("rho".into());
        cols.push("capped".into());
        cols.push("subgrid".into());
        cols.push("covering_center".into());
        let mut t = Table { columns: cols, rows: Vec::new() };
        let center_set: std::collections::HashSet<usize> = covering
            .map(|c| c.center_nodes.iter().cloned().collect())
            .unwrap_or_default();
        for idx in 0..self.grid.len() {
            let mut row = self.grid.point(idx);
            row.push(self.values[idx]);
            row.push(if self.capped[idx] { 1.0 } else { 0.0 });
            row.push(if self.subgrid[idx] { 1.0 } else { 0.0 });
            row.push(if center_set.contains(&idx) { 1.0 } else { 0.0 });
            t.push(row);
        }
        t
    }
}

/// Empirical reverse Hölder constant of `V` over a ball ensemble:
/// the supremum of `L^q`-mean / `L^1`-mean of V per ball.
pub fn reverse_holder_constant(
    pot: &Potential,
    q: f64,
    ensemble: &BallEnsemble,
) -> Result<VerificationReport> {
    if !(q > 1.0) || !q.is_finite() {
        return Err(Error::InvalidParam(format!("reverse Hölder check needs finite q > 1, got {q}")));
    }
    let v = pot.values_on_grid();
    let mut report = VerificationReport::new("reverse_holder_constant");
    report.table = Table::new(&["x0", "x1", "x2", "radius", "mean", "q_mean", "ratio"]);
    let mut best = 0.0f64;
    let mut degenerate = 0usize;
    for ball in &ensemble.balls {
        let cells = pot.grid.cells_in_ball(&ball.center, ball.radius);
        if cells.is_empty() {
            degenerate += 1;
            continue;
        }
        let mean: f64 = cells.iter().map(|&i| v.values[i]).sum::<f64>() / cells.len() as f64;
        if mean <= 0.0 {
            degenerate += 1;
            continue;
        }
        let q_mean = (cells.iter().map(|&i| v.values[i].powf(q)).sum::<f64>()
            / cells.len() as f64)
            .powf(1.0 / q);
        let ratio = q_mean / mean;
        let mut row = [0.0; 3];
        for (a, c) in ball.center.iter().take(3).enumerate() {
            row[a] = *c;
        }
        report.table.push(vec![row[0], row[1], row[2], ball.radius, mean, q_mean, ratio]);
        if ratio > best {
            best = ratio;
            report.attaining = Some(format!(
                "ball center {:?} radius {:.4}",
                ball.center, ball.radius
            ));
        }
        report.used += 1;
    }
    report.excluded = degenerate;
    if degenerate > 0 {
        report.flag("degenerate-balls");
    }
    report.constant = best;
    Ok(report)
}

/// Point pair for the ρ-equivalence diagnostics.
pub type PointPair = (Vec<f64>, Vec<f64>);

/// Fits the smallest `(c, k0)` for which the two-sided comparison
/// `c^{-1} ρ(x) (1 + |x-y|/ρ(x))^{-k0} ≤ ρ(y) ≤ c ρ(x) (1 + |x-y|/ρ(x))^{k0/(k0+1)}`
/// holds over the sampled pairs, and the largest `C1 < 1` for the
/// specialization to `|x-y| ≤ ρ(x)`.
pub fn rho_equivalence_check(
    pot: &Potential,
    pairs: &[PointPair],
    scan: &RhoScan,
) -> Result<VerificationReport> {
    let mut report = VerificationReport::new("rho_equivalence");
    report.table = Table::new(&["dist", "rho_x", "rho_y", "upper_ratio", "lower_ratio"]);
    let mut samples = Vec::new();
    for (x, y) in pairs {
        let rx = critical_radius(pot, x, scan)?;
        let ry = critical_radius(pot, y, scan)?;
        if rx.capped || ry.capped {
            report.excluded += 1;
            continue;
        }
        let dist: f64 = x
            .iter()
            .zip(y)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt();
        let u = 1.0 + dist / rx.rho;
        report.table.push(vec![dist, rx.rho, ry.rho, ry.rho / rx.rho, rx.rho / ry.rho]);
        samples.push((dist, rx.rho, ry.rho, u));
        report.used += 1;
    }
    if report.excluded > 0 {
        report.flag("capped-pairs-excluded");
    }
    if samples.is_empty() {
        report.constant = 1.0;
        return Ok(report);
    }
    // scan k0 and take the smallest admissible c
    let mut best = (f64::INFINITY, 1.0);
    for step in 0..31 {
        let k0 = 1.0 + 0.25 * step as f64;
        let mut c_needed = 1.0f64;
        for &(_, rx, ry, u) in &samples {
            let upper = ry / (rx * u.powf(k0 / (k0 + 1.0)));
            let lower = rx / (ry * u.powf(k0));
            c_needed = c_needed.max(upper).max(lower);
        }
        if c_needed < best.0 {
            best = (c_needed, k0);
        }
    }
    report.constant = best.0;
    report.attaining = Some(format!("k0 = {}", best.1));
    // specialization: |x-y| ≤ ρ(x) forces ρ(y)/ρ(x) into (C1, 1/C1)
    let mut c1 = 1.0f64;
    for &(dist, rx, ry, _) in &samples {
        if dist <= rx {
            c1 = c1.min(ry / rx).min(rx / ry);
        }
    }
    report.flags.push(format!("C1={}", crate::report::format_float(c1)));
    Ok(report)
}

/// Covering of the grid by critical balls `Q_k = B(x_k, ρ(x_k))`.
#[derive(Debug, Clone)]
pub struct CriticalCovering {
    pub grid: BoxGrid,
    /// Node indices of the centers, in selection order.
    pub center_nodes: Vec<usize>,
    pub radii: Vec<f64>,
    /// Max over grid nodes of the number of doubly-dilated balls containing it.
    pub overlap: usize,
}

/// Greedy construction: repeatedly take the uncovered node with largest ρ.
pub fn critical_covering(rho: &RhoField) -> CriticalCovering {
    let grid = rho.grid;
    let len = grid.len();
    let mut covered = vec![false; len];
    let mut center_nodes = Vec::new();
    let mut radii = Vec::new();
    // order nodes by descending rho once; the greedy scan walks this order
    let mut order: Vec<usize> = (0..len).collect();
    order.sort_by(|&a, &b| {
        rho.values[b]
            .partial_cmp(&rho.values[a])
            .unwrap()
            .then(a.cmp(&b))
    });
    let mut cursor = 0usize;
    let mut remaining = len;
    while remaining > 0 {
        while covered[order[cursor]] {
            cursor += 1;
        }
        let k = order[cursor];
        let r = rho.values[k];
        let center = grid.point(k);
        center_nodes.push(k);
        radii.push(r);
        for idx in grid.cells_in_ball(&center, r) {
            if !covered[idx] {
                covered[idx] = true;
                remaining -= 1;
            }
        }
        debug_assert!(covered[k]);
    }
    // pointwise overlap of the doubly-dilated balls Q** = B(x_k, 4 ρ(x_k))
    let mut counts = vec![0u32; len];
    for (ci, &k) in center_nodes.iter().enumerate() {
        let center = grid.point(k);
        for idx in grid.cells_in_ball(&center, 4.0 * radii[ci]) {
            counts[idx] += 1;
        }
    }
    let overlap = counts.iter().cloned().max().unwrap_or(0) as usize;
    CriticalCovering { grid, center_nodes, radii, overlap }
}

impl CriticalCovering {
    /// Exhaustive postcondition check: every node lies in some `Q_k`.
    pub fn covers_all(&self) -> bool {
        let mut covered = vec![false; self.grid.len()];
        for (ci, &k) in self.center_nodes.iter().enumerate() {
            let center = self.grid.point(k);
            for idx in self.grid.cells_in_ball(&center, self.radii[ci]) {
                covered[idx] = true;
            }
        }
        covered.iter().all(|&c| c)
    }

    /// Independent recount of the overlap number.
    pub fn recount_overlap(&self) -> usize {
        let mut best = 0usize;
        for idx in 0..self.grid.len() {
            let p = self.grid.point(idx);
            let mut count = 0usize;
            for (ci, &k) in self.center_nodes.iter().enumerate() {
                let c = self.grid.point(k);
                let d2: f64 = p.iter().zip(&c).map(|(a, b)| (a - b) * (a - b)).sum();
                if d2 <= (4.0 * self.radii[ci]).powi(2) {
                    count += 1;
                }
            }
            best = best.max(count);
        }
        best
    }

    pub fn to_table(&self) -> Table {
        let mut cols: Vec<String> = (0..self.grid.n).map(|a| format!("x{a}")).collect();
        cols.push("rho".into());
        let mut t = Table { columns: cols, rows: Vec::new() };
        for (ci, &k) in self.center_nodes.iter().enumerate() {
            let mut row = self.grid.point(k);
            row.push(self.radii[ci]);
            t.push(row);
        }
        t
    }
}
