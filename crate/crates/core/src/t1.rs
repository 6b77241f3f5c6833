//! The T1 machinery: apply an operator to the constant function on the box,
//! then test boundedness through weighted mean oscillation over sub-critical
//! balls.
//!
//! For scalar operators the criterion quantity on a ball `B(x, s)` with
//! `s ≤ ρ(x)/2` is
//!
//! ```text
//! weight(ρ(x)/s) · |B|^{-(1+γ/n)} ∫_B |T1 - (T1)_B|
//! ```
//!
//! with weight `(ρ/s)^α` (power criterion) or `log(ρ/s)` (log criterion).
//! Vector-valued operators (maximal, square functions) store their per-time
//! slices and replace the absolute values by the Banach norm of the slice
//! family: sup over the time grid, or the square-function quadrature.
//! The exterior of the box is dropped from `T1`; the induced truncation
//! error is probed by recomputing on a box shrunk by one margin and
//! reporting the largest relative change.

use rayon::prelude::*;

use crate::bmo::{
    bmo_alpha_norm, log_test_function, plateau_test_function, BallClass, BallEnsemble, NormOptions,
};
use crate::grid::{BoxGrid, GridFunction};
use crate::operators::{
    apply_descriptor, slice_multiplier, OperatorDescriptor, OperatorKind, Reduction, TGrid,
};
use crate::potential::{Potential, RhoField, RhoScan};
use crate::report::{Table, VerificationReport};
use crate::spectral::SpectralModel;
use crate::{Error, Result};

/// Options for T1 field construction.
#[derive(Debug, Clone, Copy)]
pub struct T1Options {
    /// Points of the maximal time grid.
    pub maximal_points: usize,
    /// Flag threshold for the margin-sensitivity probe.
    pub sensitivity_threshold: f64,
}

impl Default for T1Options {
    fn default() -> Self {
        T1Options { maximal_points: 64, sensitivity_threshold: 0.05 }
    }
}

/// The function `T1` on the grid, with per-time slices for vector kinds.
#[derive(Debug, Clone)]
pub struct T1Field {
    pub grid: BoxGrid,
    pub kind_name: String,
    /// Scalar `T1`, or the Banach-norm reduction of the slice family.
    pub reduced: GridFunction,
    /// Per-time slices (vector kinds only).
    pub slices: Option<Vec<Vec<f64>>>,
    pub tgrid: Option<TGrid>,
    pub reduction: Option<Reduction>,
    /// Max relative change of the reduced field under box shrinking, when probed.
    pub margin_sensitivity: Option<f64>,
    /// Set when the margin sensitivity exceeded its threshold.
    pub truncation_dominated: bool,
}

/// Heat-semigroup slices of the constant function factorize across axes;
/// this fast path avoids full tensor transforms.
pub(crate) fn heat_slice_on_ones(model: &SpectralModel, t: f64, derivative: bool) -> Option<Vec<f64>> {
    let axes = model.axes()?;
    let grid = model.grid;
    let ones = vec![1.0; grid.m];
    let u: Vec<Vec<f64>> = axes
        .iter()
        .map(|ax| ax.apply_phi_1d(|l| (-t * l).exp(), &ones))
        .collect();
    let out = if !derivative {
        tensor_product(&grid, &u)
    } else {
        let d: Vec<Vec<f64>> = axes
            .iter()
            .map(|ax| ax.apply_phi_1d(|l| -t * l * (-t * l).exp(), &ones))
            .collect();
        let mut total = vec![0.0; grid.len()];
        for a in 0..grid.n {
            let factors: Vec<&[f64]> = (0..grid.n)
                .map(|b| if a == b { d[b].as_slice() } else { u[b].as_slice() })
                .collect();
            let term = tensor_product_refs(&grid, &factors);
            for (acc, v) in total.iter_mut().zip(&term) {
                *acc += v;
            }
        }
        total
    };
    Some(out)
}

fn tensor_product(grid: &BoxGrid, factors: &[Vec<f64>]) -> Vec<f64> {
    let refs: Vec<&[f64]> = factors.iter().map(|f| f.as_slice()).collect();
    tensor_product_refs(grid, &refs)
}

fn tensor_product_refs(grid: &BoxGrid, factors: &[&[f64]]) -> Vec<f64> {
    let mut out = vec![0.0; grid.len()];
    let mut mi = [0usize; 6];
    for (idx, v) in out.iter_mut().enumerate() {
        grid.multi_index(idx, &mut mi[..grid.n]);
        *v = (0..grid.n).map(|a| factors[a][mi[a]]).product();
    }
    out
}

/// Per-time slices of a vector-valued kind applied to the constant function.
fn vector_stack(
    descr: &OperatorDescriptor,
    model: &SpectralModel,
    tgrid: &TGrid,
) -> Result<Vec<Vec<f64>>> {
    // heat-based slices of the constant factorize; Poisson-based need transforms
    let fast = matches!(descr.kind, OperatorKind::HeatMaximal | OperatorKind::GHeat)
        && model.is_separable();
    if fast {
        let derivative = matches!(descr.kind, OperatorKind::GHeat);
        return Ok(tgrid
            .times
            .par_iter()
            .map(|&t| heat_slice_on_ones(model, t, derivative).unwrap())
            .collect());
    }
    let ones = GridFunction::constant(model.grid, 1.0);
    let coeffs = model.forward(&ones.values);
    tgrid
        .times
        .par_iter()
        .map(|&t| {
            let phi = slice_multiplier(&descr.kind, t, model.lambda_min, model.lambda_max)?
                .expect("vector kind");
            let mut c = coeffs.clone();
            model.map_coefficients(&mut c, &*phi);
            Ok(model.inverse(&c))
        })
        .collect()
}

fn reduce_stack(
    grid: BoxGrid,
    stack: &[Vec<f64>],
    tgrid: &TGrid,
    reduction: Reduction,
) -> GridFunction {
    let mut out = vec![0.0f64; grid.len()];
    match reduction {
        Reduction::SupOverT => {
            for slice in stack {
                for (o, v) in out.iter_mut().zip(slice) {
                    *o = o.max(v.abs());
                }
            }
        }
        Reduction::SquareQuadrature => {
            for (slice, &w) in stack.iter().zip(&tgrid.weights) {
                for (o, v) in out.iter_mut().zip(slice) {
                    *o += w * v * v;
                }
            }
            for o in out.iter_mut() {
                *o = o.sqrt();
            }
        }
    }
    GridFunction::new(grid, out)
}

/// `T1` for any descriptor: the operator applied to the constant indicator
/// of the box, with per-time slices retained for vector kinds.
pub fn t1_field(
    descr: &OperatorDescriptor,
    model: &SpectralModel,
    opts: &T1Options,
) -> Result<T1Field> {
    descr.validate(model.grid.n)?;
    let grid = model.grid;
    let kind_name = descr.kind.name();
    if let Some(reduction) = descr.reduction() {
        let tgrid = descr.tgrid_for(model, opts.maximal_points).unwrap();
        let stack = vector_stack(descr, model, &tgrid)?;
        let reduced = reduce_stack(grid, &stack, &tgrid, reduction);
        return Ok(T1Field {
            grid,
            kind_name,
            reduced,
            slices: Some(stack),
            tgrid: Some(tgrid),
            reduction: Some(reduction),
            margin_sensitivity: None,
            truncation_dominated: false,
        });
    }
    let ones = GridFunction::constant(grid, 1.0);
    let reduced = match &descr.kind {
        // the identity keeps the constant exactly
        OperatorKind::Identity => ones,
        OperatorKind::HeatAtT { t } if model.is_separable() => {
            GridFunction::new(grid, heat_slice_on_ones(model, *t, false).unwrap())
        }
        _ => apply_descriptor(descr, model, &ones, opts.maximal_points)?,
    };
    Ok(T1Field {
        grid,
        kind_name,
        reduced,
        slices: None,
        tgrid: None,
        reduction: None,
        margin_sensitivity: None,
        truncation_dominated: false,
    })
}

/// Recompute `T1` on a box shrunk by one margin and report the largest
/// relative change of the reduced field over the common deep-interior
/// region.  Quantifies how much of `T1` is owed to the truncation.
pub fn t1_margin_sensitivity(
    descr: &OperatorDescriptor,
    pot: &Potential,
    spec: &crate::potential::PotentialSpec,
    q: crate::potential::RhExponent,
    opts: &T1Options,
) -> Result<f64> {
    let grid = pot.grid;
    let model = SpectralModel::assemble(pot)?;
    let base = t1_field(descr, &model, opts)?;
    let shrunk_grid = BoxGrid::new(grid.n, grid.m, grid.lbox - grid.margin, grid.margin)?;
    let shrunk_pot = Potential::build(spec, shrunk_grid, q)?;
    let shrunk_model = SpectralModel::assemble(&shrunk_pot)?;
    let shrunk = t1_field(descr, &shrunk_model, opts)?;
    // compare deep inside both boxes, clear of either boundary layer
    let depth = 2.0 * shrunk_grid.margin;
    let scale = base.reduced.norm_sup_interior(grid.margin).max(1e-300);
    let mut worst = 0.0f64;
    for idx in 0..shrunk_grid.len() {
        let p = shrunk_grid.point(idx);
        if shrunk_grid.boundary_distance(&p) < depth {
            continue;
        }
        let a = shrunk.reduced.values[idx];
        let b = base.reduced.interp_multilinear(&p);
        worst = worst.max((a - b).abs() / scale);
    }
    Ok(worst)
}

/// Attach a margin-sensitivity probe to an existing field.
pub fn with_margin_sensitivity(mut field: T1Field, sensitivity: f64, threshold: f64) -> T1Field {
    field.margin_sensitivity = Some(sensitivity);
    field.truncation_dominated = sensitivity > threshold;
    field
}

/// Weight entering the criterion quantity.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum CriterionWeight {
    Power { alpha: f64 },
    Log,
}

impl CriterionWeight {
    fn apply(&self, rho_over_s: f64) -> f64 {
        match self {
            CriterionWeight::Power { alpha } => rho_over_s.powf(*alpha),
            CriterionWeight::Log => rho_over_s.ln(),
        }
    }

    fn name(&self) -> String {
        match self {
            CriterionWeight::Power { alpha } => format!("power_alpha_{alpha}"),
            CriterionWeight::Log => "log".into(),
        }
    }
}

/// Outcome of a criterion sweep over the sub-critical ensemble.
#[derive(Debug, Clone)]
pub struct CriterionReport {
    pub kind_name: String,
    pub weight_name: String,
    pub gamma: f64,
    pub supremum: f64,
    pub balls_used: usize,
    pub excluded: usize,
    pub stability_delta: Option<f64>,
    /// center.., s, rho, weight, oscillation, quantity
    pub table: Table,
}

fn ball_deviation_integral(t1: &T1Field, cells: &[usize]) -> f64 {
    match (&t1.slices, t1.reduction) {
        (Some(stack), Some(reduction)) => {
            let inv = 1.0 / cells.len() as f64;
            let means: Vec<f64> = stack
                .iter()
                .map(|slice| cells.iter().map(|&i| slice[i]).sum::<f64>() * inv)
                .collect();
            let tgrid = t1.tgrid.as_ref().unwrap();
            let mut acc = 0.0;
            for &i in cells {
                let norm = match reduction {
                    Reduction::SupOverT => stack
                        .iter()
                        .zip(&means)
                        .map(|(slice, m)| (slice[i] - m).abs())
                        .fold(0.0f64, f64::max),
                    Reduction::SquareQuadrature => stack
                        .iter()
                        .zip(&means)
                        .zip(&tgrid.weights)
                        .map(|((slice, m), w)| w * (slice[i] - m) * (slice[i] - m))
                        .sum::<f64>()
                        .sqrt(),
                };
                acc += norm;
            }
            acc * inv
        }
        _ => {
            let f = &t1.reduced;
            let mean = f.ball_mean(cells);
            cells.iter().map(|&i| (f.values[i] - mean).abs()).sum::<f64>() / cells.len() as f64
        }
    }
}

fn criterion_sweep(
    t1: &T1Field,
    weight: CriterionWeight,
    gamma: f64,
    ensemble: &BallEnsemble,
) -> Result<CriterionReport> {
    let grid = t1.grid;
    let n = grid.n as f64;
    let mut cols: Vec<String> = (0..grid.n).map(|a| format!("x{a}")).collect();
    cols.extend(["s", "rho", "weight", "oscillation", "quantity"].iter().map(|s| s.to_string()));
    let mut table = Table { columns: cols, rows: Vec::new() };
    let mut excluded = 0usize;
    let qualifying: Vec<&crate::bmo::BallSpec> = ensemble
        .balls
        .iter()
        .filter(|b| {
            let ok = b.margin_ok && b.class == BallClass::SubCritical;
            if !ok {
                excluded += 1;
            }
            ok
        })
        .collect();
    if qualifying.is_empty() {
        return Err(Error::EmptySubcritical);
    }
    let rows: Vec<Option<Vec<f64>>> = qualifying
        .par_iter()
        .map(|ball| {
            let cells = grid.cells_in_ball(&ball.center, ball.radius);
            if cells.len() < 8 {
                return None;
            }
            let measure = cells.len() as f64 * grid.cell_volume();
            // |B|^{-(1+γ/n)} ∫_B ... = measure^{-γ/n} × ball average
            let osc = ball_deviation_integral(t1, &cells) * measure.powf(-gamma / n);
            let w = weight.apply(ball.rho_at_center / ball.radius);
            let quantity = w * osc;
            let mut row = ball.center.clone();
            row.extend([ball.radius, ball.rho_at_center, w, osc, quantity]);
            Some(row)
        })
        .collect();
    let mut sup = 0.0f64;
    let mut used = 0usize;
    for row in rows.into_iter() {
        match row {
            Some(row) => {
                sup = sup.max(row[row.len() - 1]);
                table.push(row);
                used += 1;
            }
            None => excluded += 1,
        }
    }
    Ok(CriterionReport {
        kind_name: t1.kind_name.clone(),
        weight_name: weight.name(),
        gamma,
        supremum: sup,
        balls_used: used,
        excluded,
        stability_delta: None,
        table,
    })
}

/// Power-weighted criterion: `(ρ/s)^α |B|^{-(1+γ/n)} ∫_B |T1 - (T1)_B|`
/// over sub-critical balls; requires `α + γ < 1`.
pub fn criterion_alpha(
    t1: &T1Field,
    alpha: f64,
    gamma: f64,
    ensemble: &BallEnsemble,
) -> Result<CriterionReport> {
    if !(alpha >= 0.0) || alpha + gamma >= 1.0 {
        return Err(Error::InvalidParam(format!(
            "power criterion needs α ≥ 0 with α + γ < 1, got α = {alpha}, γ = {gamma}"
        )));
    }
    criterion_sweep(t1, CriterionWeight::Power { alpha }, gamma, ensemble)
}

/// Log-weighted criterion: `log(ρ/s) |B|^{-(1+γ/n)} ∫_B |T1 - (T1)_B|`
/// over sub-critical balls; requires `γ < 1`.
pub fn criterion_log(t1: &T1Field, gamma: f64, ensemble: &BallEnsemble) -> Result<CriterionReport> {
    if gamma >= 1.0 {
        return Err(Error::InvalidParam(format!("log criterion needs γ < 1, got {gamma}")));
    }
    criterion_sweep(t1, CriterionWeight::Log, gamma, ensemble)
}

/// Mean size of `T1` over critical balls `B(x, ρ(x))`:
/// `|B|^{-(1+γ/n)} ∫_B |T1|`, supremum over margin-ok centers.
pub fn mean_bound_gamma_check(
    t1: &T1Field,
    gamma: f64,
    rho: &RhoField,
    centers: &[usize],
) -> Result<VerificationReport> {
    let grid = t1.grid;
    let n = grid.n as f64;
    let mut report = VerificationReport::new("mean_bound_gamma");
    report.table = Table::new(&["rho", "quantity"]);
    let mut sup = 0.0f64;
    for &node in centers {
        let center = grid.point(node);
        let r = rho.at(node);
        if grid.boundary_distance(&center) < r + grid.margin {
            report.excluded += 1;
            continue;
        }
        let cells = grid.cells_in_ball(&center, r);
        if cells.len() < 8 {
            report.excluded += 1;
            continue;
        }
        let measure = cells.len() as f64 * grid.cell_volume();
        let mean_abs =
            cells.iter().map(|&i| t1.reduced.values[i].abs()).sum::<f64>() / cells.len() as f64;
        let quantity = mean_abs * measure.powf(-gamma / n);
        report.table.push(vec![r, quantity]);
        if quantity > sup {
            sup = quantity;
            report.attaining = Some(format!("center {center:?} rho {r:.4}"));
        }
        report.used += 1;
    }
    report.constant = sup;
    Ok(report)
}

/// Pointwise-multiplier diagnostics for `f ↦ ψ f`.
#[derive(Debug, Clone)]
pub struct MultiplierReport {
    /// Sup norm of ψ over the margin-deep region.
    pub sup_norm: f64,
    /// Weighted oscillation supremum over sub-critical balls.
    pub weighted_oscillation_sup: f64,
    /// Empirical norm of `f ↦ ψ f` over a test-function battery.
    pub empirical_norm: f64,
    pub battery_used: usize,
    pub battery_skipped: usize,
    pub table: Table,
}

/// Both sides of the multiplier characterization: the weighted oscillation
/// of ψ over sub-critical balls, and a directly measured operator norm of
/// multiplication by ψ on a battery of extremal test functions.
pub fn multiplier_criterion(
    psi: &GridFunction,
    alpha: f64,
    ensemble: &BallEnsemble,
    rho: &RhoField,
    battery_seed: u64,
) -> Result<MultiplierReport> {
    if !(0.0..1.0).contains(&alpha) {
        return Err(Error::AlphaOutOfRange { alpha });
    }
    let grid = psi.grid;
    let weight =
        if alpha == 0.0 { CriterionWeight::Log } else { CriterionWeight::Power { alpha } };
    let mut table = Table::new(&["s", "rho", "weighted_oscillation"]);
    let mut osc_sup = 0.0f64;
    for ball in &ensemble.balls {
        if !ball.margin_ok || ball.class != BallClass::SubCritical {
            continue;
        }
        let cells = grid.cells_in_ball(&ball.center, ball.radius);
        if cells.len() < 8 {
            continue;
        }
        let mean = psi.ball_mean(&cells);
        let osc =
            cells.iter().map(|&i| (psi.values[i] - mean).abs()).sum::<f64>() / cells.len() as f64;
        let q = weight.apply(ball.rho_at_center / ball.radius) * osc;
        table.push(vec![ball.radius, ball.rho_at_center, q]);
        osc_sup = osc_sup.max(q);
    }
    let mut sup_norm = 0.0f64;
    for idx in 0..grid.len() {
        if grid.node_margin_ok(idx, grid.margin) {
            sup_norm = sup_norm.max(psi.values[idx].abs());
        }
    }
    // direct operator norm over extremal test functions
    let battery =
        test_function_battery(grid, rho, alpha, &BatterySpec::default_with_seed(battery_seed))?;
    let opts = NormOptions::default();
    let mut best = 0.0f64;
    let mut used = 0usize;
    let mut skipped = 0usize;
    for (_, f) in &battery {
        let denom = bmo_alpha_norm(f, alpha, ensemble, 1.0, &opts)?.norm;
        if denom < 1e-12 {
            skipped += 1;
            continue;
        }
        let mut pf = f.clone();
        for (v, p) in pf.values.iter_mut().zip(&psi.values) {
            *v *= p;
        }
        let num = bmo_alpha_norm(&pf, alpha, ensemble, 1.0, &opts)?.norm;
        best = best.max(num / denom);
        used += 1;
    }
    Ok(MultiplierReport {
        sup_norm,
        weighted_oscillation_sup: osc_sup,
        empirical_norm: best,
        battery_used: used,
        battery_skipped: skipped,
        table,
    })
}

/// Battery generation policy for operator-norm probes.
#[derive(Debug, Clone)]
pub struct BatterySpec {
    pub centers: usize,
    pub s_fractions: Vec<f64>,
    pub eigenfunctions: usize,
    pub random_fields: usize,
    pub seed: u64,
}

impl BatterySpec {
    pub fn default_with_seed(seed: u64) -> Self {
        BatterySpec {
            centers: 3,
            s_fractions: vec![0.03, 0.1, 0.3, 0.8],
            eigenfunctions: 4,
            random_fields: 4,
            seed,
        }
    }

    pub fn doubled(&self) -> Self {
        let mut f = self.s_fractions.clone();
        for w in self.s_fractions.windows(2) {
            f.push((w[0] * w[1]).sqrt());
        }
        f.sort_by(|a, b| a.partial_cmp(b).unwrap());
        BatterySpec {
            centers: self.centers + 2,
            s_fractions: f,
            eigenfunctions: self.eigenfunctions * 2,
            random_fields: self.random_fields * 2,
            seed: self.seed,
        }
    }
}

/// Extremal-profile battery: log or plateau test functions across centers
/// and plateau widths (depending on α), plus smooth random fields.
pub fn test_function_battery(
    grid: BoxGrid,
    rho: &RhoField,
    alpha: f64,
    spec: &BatterySpec,
) -> Result<Vec<(String, GridFunction)>> {
    use rand::{Rng, SeedableRng};
    let mut battery = Vec::new();
    // deterministic margin-deep centers along the main diagonal
    let lo = grid.m / 4;
    let hi = 3 * grid.m / 4;
    for ci in 0..spec.centers {
        let k = lo + (hi - lo) * ci / spec.centers.max(1);
        let node = grid.index(&vec![k; grid.n]);
        let x0 = grid.point(node);
        let r = rho.at(node).min(grid.boundary_distance(&x0) - grid.margin);
        if r <= 0.0 {
            continue;
        }
        for &frac in &spec.s_fractions {
            let s = frac * r;
            if alpha == 0.0 {
                battery.push((format!("log_c{ci}_f{frac}"), log_test_function(grid, &x0, s, r)?));
            } else {
                battery.push((
                    format!("plateau_c{ci}_f{frac}"),
                    plateau_test_function(grid, &x0, s, alpha, r)?,
                ));
            }
        }
    }
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(spec.seed ^ 0x_ba77_e57);
    for k in 0..spec.random_fields {
        let freq: Vec<f64> = (0..grid.n).map(|_| rng.gen_range(0.3..1.8)).collect();
        let phase: Vec<f64> = (0..grid.n).map(|_| rng.gen_range(0.0..3.14)).collect();
        battery.push((
            format!("smooth_{k}"),
            GridFunction::from_fn(grid, |p| {
                (0..grid.n).map(|a| (freq[a] * p[a] + phase[a]).sin()).sum::<f64>()
            }),
        ));
    }
    Ok(battery)
}

/// Outcome of the empirical operator-norm sweep.
#[derive(Debug, Clone)]
pub struct OperatorNormReport {
    pub kind_name: String,
    pub alpha: f64,
    pub gamma: f64,
    pub max_ratio: f64,
    pub used: usize,
    pub skipped: usize,
    /// member, input norm, output norm, ratio
    pub table: Table,
}

/// Max of `‖Tf‖_{α+γ} / ‖f‖_α` over the battery, both sides measured by the
/// ensemble norm estimate.  Vector-valued kinds are measured through their
/// scalar reductions (the maximal function or the square function itself).
#[allow(clippy::too_many_arguments)]
pub fn empirical_operator_norm(
    descr: &OperatorDescriptor,
    model: &SpectralModel,
    alpha: f64,
    ensemble: &BallEnsemble,
    rho: &RhoField,
    spec: &BatterySpec,
    eigenfunction_source: bool,
    maximal_points: usize,
) -> Result<OperatorNormReport> {
    let gamma = descr.gamma();
    if alpha + gamma > 1.0 {
        return Err(Error::InvalidParam(format!(
            "operator norm probe needs α + γ ≤ 1, got {alpha} + {gamma}"
        )));
    }
    let mut battery = test_function_battery(model.grid, rho, alpha, spec)?;
    if eigenfunction_source {
        for j in 0..spec.eigenfunctions {
            battery.push((format!("eigen_{j}"), model.eigenfunction(j)));
        }
    }
    let opts = NormOptions::default();
    let mut table = Table::new(&["member", "input_norm", "output_norm", "ratio"]);
    let mut best = 0.0f64;
    let mut used = 0usize;
    let mut skipped = 0usize;
    for (mi, (_, f)) in battery.iter().enumerate() {
        let denom = bmo_alpha_norm(f, alpha, ensemble, 1.0, &opts)?.norm;
        if denom < 1e-12 {
            skipped += 1;
            continue;
        }
        let tf = apply_descriptor(descr, model, f, maximal_points)?;
        let num = bmo_alpha_norm(&tf, alpha + gamma, ensemble, 1.0, &opts)?.norm;
        let ratio = num / denom;
        table.push(vec![mi as f64, denom, num, ratio]);
        best = best.max(ratio);
        used += 1;
    }
    Ok(OperatorNormReport {
        kind_name: descr.kind.name(),
        alpha,
        gamma,
        max_ratio: best,
        used,
        skipped,
        table,
    })
}

/// Convenience: assemble the model for a potential and build the rho field.
pub fn assemble_with_rho(pot: &Potential, scan: &RhoScan) -> Result<(SpectralModel, RhoField)> {
    let model = SpectralModel::assemble(pot)?;
    let rho = RhoField::compute(pot, scan)?;
    Ok((model, rho))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bmo::EnsemblePolicy;
    use crate::operators::LaplaceSymbol;
    use crate::potential::{Potential, PotentialSpec, RhExponent};

    fn setup_3d() -> (Potential, SpectralModel, RhoField, BallEnsemble) {
        let g = BoxGrid::new(3, 40, 4.0, 1.0).unwrap();
        let pot = Potential::build(
            &PotentialSpec::Constant { amplitude: 0.2 },
            g,
            RhExponent::Infinite,
        )
        .unwrap();
        let (model, rho) = assemble_with_rho(&pot, &RhoScan::default()).unwrap();
        let ens = BallEnsemble::generate(&EnsemblePolicy::default(), &rho).unwrap();
        (pot, model, rho, ens)
    }

    #[test]
    fn identity_t1_is_one_and_criteria_vanish() {
        let (_, model, _rho, ens) = setup_3d();
        let d = OperatorDescriptor::new(OperatorKind::Identity);
        let t1 = t1_field(&d, &model, &T1Options::default()).unwrap();
        assert!(t1.reduced.values.iter().all(|&v| v == 1.0));
        let ca = criterion_alpha(&t1, 0.25, 0.0, &ens).unwrap();
        assert_eq!(ca.supremum, 0.0);
        let cl = criterion_log(&t1, 0.0, &ens).unwrap();
        assert_eq!(cl.supremum, 0.0);
    }

    #[test]
    fn constant_multiplier_criteria_vanish_exactly() {
        let (_, model, _rho, ens) = setup_3d();
        let d = OperatorDescriptor::new(OperatorKind::LaplaceMultiplier {
            symbol: LaplaceSymbol::Constant { value: 1.0 },
        });
        let t1 = t1_field(&d, &model, &T1Options::default()).unwrap();
        let ca = criterion_alpha(&t1, 0.25, 0.0, &ens).unwrap();
        assert_eq!(ca.supremum, 0.0);
        let cl = criterion_log(&t1, 0.0, &ens).unwrap();
        assert_eq!(cl.supremum, 0.0);
    }

    #[test]
    fn criteria_shift_invariant_and_homogeneous() {
        let (_, model, _rho, ens) = setup_3d();
        let d = OperatorDescriptor::new(OperatorKind::HeatAtT { t: 0.2 });
        let t1 = t1_field(&d, &model, &T1Options::default()).unwrap();
        let base = criterion_log(&t1, 0.0, &ens).unwrap();
        let mut shifted = t1.clone();
        for v in shifted.reduced.values.iter_mut() {
            *v += 5.0;
        }
        let after = criterion_log(&shifted, 0.0, &ens).unwrap();
        // invariant up to the round-off of forming the shifted means
        assert!(
            (base.supremum - after.supremum).abs() <= 1e-10 * base.supremum.max(1e-300),
            "{} vs {}",
            base.supremum,
            after.supremum
        );
        let mut scaled = t1.clone();
        scaled.reduced.scale(3.0);
        let tripled = criterion_log(&scaled, 0.0, &ens).unwrap();
        assert!(
            (tripled.supremum - 3.0 * base.supremum).abs() <= 1e-12 * base.supremum.max(1e-300)
        );
    }

    #[test]
    fn log_weight_value_matches_at_half_rho() {
        // the log weight at s = ρ/2 is exactly log 2
        assert!((CriterionWeight::Log.apply(2.0) - 2.0f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn heat_t1_interior_plateau_and_margin_sensitivity() {
        let g = BoxGrid::new(1, 192, 4.0, 1.0).unwrap();
        let spec = PotentialSpec::Constant { amplitude: 1.0 };
        let pot = Potential::build(&spec, g, RhExponent::Infinite).unwrap();
        let model = SpectralModel::assemble(&pot).unwrap();
        let d = OperatorDescriptor::new(OperatorKind::HeatAtT { t: 0.1 });
        let t1 = t1_field(&d, &model, &T1Options::default()).unwrap();
        // deep interior: W_t 1 ≈ e^{-t}
        let want = (-0.1f64).exp();
        for idx in 0..g.len() {
            if g.node_margin_ok(idx, 1.6) {
                assert!(
                    (t1.reduced.values[idx] - want).abs() < 1e-3,
                    "{} vs {want}",
                    t1.reduced.values[idx]
                );
            }
        }
        let sens =
            t1_margin_sensitivity(&d, &pot, &spec, RhExponent::Infinite, &T1Options::default())
                .unwrap();
        assert!(sens < 0.01, "margin sensitivity {sens}");
    }

    #[test]
    fn heat_maximal_t1_e_reduction_near_one() {
        let (_, model, rho, _) = setup_3d();
        let d = OperatorDescriptor::new(OperatorKind::HeatMaximal);
        let t1 = t1_field(&d, &model, &T1Options::default()).unwrap();
        assert!(t1.slices.is_some());
        // sub-Markov: the E-reduction stays within [0, 1] and is ≈ 1 interior
        let centers: Vec<usize> = (0..model.grid.len())
            .filter(|&i| model.grid.node_margin_ok(i, model.grid.margin))
            .step_by(997)
            .collect();
        let rep = mean_bound_gamma_check(&t1, 0.0, &rho, &centers).unwrap();
        assert!(rep.constant <= 1.0 + 1e-6, "{}", rep.constant);
        assert!(rep.constant > 0.5);
    }

    #[test]
    fn mean_bound_identity_is_one() {
        let (_, model, rho, _) = setup_3d();
        let d = OperatorDescriptor::new(OperatorKind::Identity);
        let t1 = t1_field(&d, &model, &T1Options::default()).unwrap();
        let centers: Vec<usize> = (0..model.grid.len()).step_by(1777).collect();
        let rep = mean_bound_gamma_check(&t1, 0.0, &rho, &centers).unwrap();
        assert!((rep.constant - 1.0).abs() < 1e-12);
    }

    #[test]
    fn vector_criterion_finite_for_g_heat() {
        let (_, model, _rho, ens) = setup_3d();
        let d = OperatorDescriptor::new(OperatorKind::GHeat);
        let t1 = t1_field(&d, &model, &T1Options::default()).unwrap();
        let rep = criterion_log(&t1, 0.0, &ens).unwrap();
        assert!(rep.supremum.is_finite());
        assert!(rep.balls_used > 0);
    }

    #[test]
    fn heat_fast_path_matches_transform_route() {
        let (_, model, _, _) = setup_3d();
        let t = 0.37;
        let fast = heat_slice_on_ones(&model, t, false).unwrap();
        let ones = GridFunction::constant(model.grid, 1.0);
        let slow = model.apply_fn(&|l| (-t * l).exp(), &ones);
        let worst = fast
            .iter()
            .zip(&slow.values)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0f64, f64::max);
        assert!(worst < 1e-11, "{worst}");
        let fast_d = heat_slice_on_ones(&model, t, true).unwrap();
        let slow_d = model.apply_fn(&|l| -t * l * (-t * l).exp(), &ones);
        let worst_d = fast_d
            .iter()
            .zip(&slow_d.values)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0f64, f64::max);
        assert!(worst_d < 1e-11, "{worst_d}");
    }

    #[test]
    fn multiplier_constant_psi() {
        let (_, model, rho, ens) = setup_3d();
        let psi = GridFunction::constant(model.grid, 1.0);
        let rep = multiplier_criterion(&psi, 0.0, &ens, &rho, 3).unwrap();
        assert!((rep.sup_norm - 1.0).abs() < 1e-15);
        assert_eq!(rep.weighted_oscillation_sup, 0.0);
        assert!((rep.empirical_norm - 1.0).abs() < 1e-9);
    }

    #[test]
    fn multiplier_smooth_psi_finite() {
        let (_, model, rho, ens) = setup_3d();
        let psi = GridFunction::from_fn(model.grid, |p| (p[0]).sin());
        for alpha in [0.0, 0.5] {
            let rep = multiplier_criterion(&psi, alpha, &ens, &rho, 3).unwrap();
            assert!(rep.weighted_oscillation_sup.is_finite());
            assert!(rep.empirical_norm.is_finite());
            assert!(rep.sup_norm <= 1.0 + 1e-12);
        }
    }

    #[test]
    fn operator_norm_identity_is_one() {
        let (_, model, rho, ens) = setup_3d();
        let d = OperatorDescriptor::new(OperatorKind::Identity);
        let rep = empirical_operator_norm(
            &d,
            &model,
            0.25,
            &ens,
            &rho,
            &BatterySpec::default_with_seed(9),
            false,
            32,
        )
        .unwrap();
        assert!(rep.used > 0);
        assert!((rep.max_ratio - 1.0).abs() < 1e-9, "{}", rep.max_ratio);
    }

    #[test]
    fn operator_norm_negative_power_finite() {
        let (_, model, rho, ens) = setup_3d();
        let d = OperatorDescriptor::new(OperatorKind::NegativePower { gamma: 0.5 });
        let rep = empirical_operator_norm(
            &d,
            &model,
            0.25,
            &ens,
            &rho,
            &BatterySpec::default_with_seed(9),
            true,
            32,
        )
        .unwrap();
        assert!(rep.max_ratio.is_finite());
        assert!(rep.max_ratio > 0.0);
    }
}
