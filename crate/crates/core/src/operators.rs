//! The operator suite attached to `L`: heat and generalized Poisson
//! semigroups with their maximal operators, Littlewood-Paley square
//! functions, Laplace-transform-type multipliers, Riesz transforms and
//! negative powers.
//!
//! Vector-valued operators (maximal and square functions) are realized on a
//! finite log-spaced time grid: the sup norm over the grid stands in for
//! `L^∞((0,∞))` and a trapezoid rule in `log t` for `L²((0,∞), dt/t)`.  The
//! square-function quadrature carries an analytic residual bound derived
//! from the spectral range, so an under-resolved grid is an error rather
//! than a silent bias.

use serde::{Deserialize, Serialize};
use statrs::function::gamma::gamma;

use crate::grid::{BoxGrid, GridFunction};
use crate::spectral::SpectralModel;
use crate::{Error, Result};

/// Role of a time grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TGridRole {
    /// Pointwise sup over the grid (maximal operators).
    MaximalSup,
    /// Trapezoid quadrature of `∫ · dt/t` (square functions).
    QuadratureDtOverT,
}

/// Log-spaced time grid with optional `dt/t` weights.
#[derive(Debug, Clone)]
pub struct TGrid {
    pub role: TGridRole,
    pub times: Vec<f64>,
    /// Quadrature weights (empty for the maximal role).
    pub weights: Vec<f64>,
}

impl TGrid {
    /// Maximal grid spanning `[h²/4, 4(2L)²]`.
    pub fn maximal(grid: &BoxGrid, points: usize) -> TGrid {
        let points = points.max(32);
        let t_lo = grid.h() * grid.h() / 4.0;
        let t_hi = 4.0 * (2.0 * grid.lbox) * (2.0 * grid.lbox);
        let ratio = (t_hi / t_lo).powf(1.0 / (points - 1) as f64);
        let times: Vec<f64> = (0..points).map(|k| t_lo * ratio.powi(k as i32)).collect();
        TGrid { role: TGridRole::MaximalSup, times, weights: Vec::new() }
    }

    /// Quadrature grid resolving slice bumps located at `t·scale ≈ 1` for
    /// `scale ∈ [scale_lo, scale_hi]` (the spectral range, or its square
    /// root for Poisson-type slices).
    pub fn quadrature(scale_lo: f64, scale_hi: f64, lbox: f64) -> TGrid {
        let t_lo = 3.5e-4 / scale_hi;
        let t_hi = (12.0 / scale_lo).max((2.0 * lbox) * (2.0 * lbox));
        let du = 0.3;
        let points = (((t_hi / t_lo).ln() / du).ceil() as usize + 1).max(32);
        let grid = crate::quad::log_trapezoid(t_lo, t_hi, points);
        TGrid {
            role: TGridRole::QuadratureDtOverT,
            times: grid.iter().map(|g| g.0).collect(),
            weights: grid.iter().map(|g| g.1).collect(),
        }
    }

    /// Relative mass of `∫ (u e^{-u})² du/u` missed outside the grid, with
    /// `u = t·scale`; the trapezoid error itself is spectrally small at the
    /// grid's log-step.
    pub fn square_function_residual(&self, scale_lo: f64, scale_hi: f64) -> f64 {
        let t_lo = self.times[0] * scale_hi;
        let t_hi = self.times[self.times.len() - 1] * scale_lo;
        2.0 * t_lo * t_lo + (-2.0 * t_hi).exp() * (2.0 * t_hi + 1.0)
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }
}

/// Bounded symbol `a(t)` of a Laplace-transform-type multiplier
/// `m(λ) = λ ∫ a(t) e^{-tλ} dt`.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum LaplaceSymbol {
    /// `a ≡ value`, `m ≡ value`.
    Constant { value: f64 },
    /// `a(t) = e^{-rate t}`, `m(λ) = λ/(λ + rate)`.
    ExpDecay { rate: f64 },
    /// `a = χ_[0, t_end]`, `m(λ) = 1 - e^{-t_end λ}`.
    Window { t_end: f64 },
    /// Piecewise-linear samples; the product with `e^{-tλ}` is integrated
    /// exactly per interval, which preserves `|m| ≤ sup|a|`.
    Sampled { times: Vec<f64>, values: Vec<f64> },
}

impl LaplaceSymbol {
    pub fn sup_bound(&self) -> f64 {
        match self {
            LaplaceSymbol::Constant { value } => value.abs(),
            LaplaceSymbol::ExpDecay { .. } => 1.0,
            LaplaceSymbol::Window { .. } => 1.0,
            LaplaceSymbol::Sampled { values, .. } => {
                values.iter().fold(0.0f64, |a, v| a.max(v.abs()))
            }
        }
    }

    /// `m(λ)` in closed form (exact per-interval integrals for samples).
    pub fn multiplier(&self, lam: f64) -> f64 {
        match self {
            LaplaceSymbol::Constant { value } => *value,
            LaplaceSymbol::ExpDecay { rate } => lam / (lam + rate),
            LaplaceSymbol::Window { t_end } => 1.0 - (-t_end * lam).exp(),
            LaplaceSymbol::Sampled { times, values } => {
                let mut m = 0.0;
                // constant head on [0, t_0]
                if times[0] > 0.0 {
                    m += values[0] * (1.0 - (-lam * times[0]).exp());
                }
                for k in 0..times.len() - 1 {
                    let (u, v) = (times[k], times[k + 1]);
                    if v <= u {
                        continue;
                    }
                    let beta = (values[k + 1] - values[k]) / (v - u);
                    let alpha = values[k] - beta * u;
                    let eu = (-lam * u).exp();
                    let ev = (-lam * v).exp();
                    // λ ∫_u^v (α + βt) e^{-λt} dt
                    m += (alpha + beta * u) * eu - (alpha + beta * v) * ev
                        + beta / lam * (eu - ev);
                }
                m
            }
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            LaplaceSymbol::ExpDecay { rate } if !(*rate > 0.0) => {
                Err(Error::InvalidParam("exp_decay symbol needs rate > 0".into()))
            }
            LaplaceSymbol::Window { t_end } if !(*t_end > 0.0) => {
                Err(Error::InvalidParam("window symbol needs t_end > 0".into()))
            }
            LaplaceSymbol::Sampled { times, values } => {
                if times.len() < 2 || times.len() != values.len() {
                    return Err(Error::InvalidParam("sampled symbol needs matching times/values".into()));
                }
                if times.windows(2).any(|w| w[1] <= w[0]) || times[0] < 0.0 {
                    return Err(Error::InvalidParam("sampled symbol times must ascend from ≥ 0".into()));
                }
                Ok(())
            }
            _ => Ok(()),
        }
    }
}

/// The operator kinds of the suite.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum OperatorKind {
    Identity,
    HeatAtT { t: f64 },
    HeatMaximal,
    PoissonSigmaAtT { sigma: f64, t: f64 },
    PoissonMaximal { sigma: f64 },
    GHeat,
    GPoisson,
    LaplaceMultiplier { symbol: LaplaceSymbol },
    RieszComponent { axis: usize },
    NegativePower { gamma: f64 },
}

impl OperatorKind {
    pub fn name(&self) -> String {
        match self {
            OperatorKind::Identity => "identity".into(),
            OperatorKind::HeatAtT { t } => format!("heat_t{t}"),
            OperatorKind::HeatMaximal => "heat_maximal".into(),
            OperatorKind::PoissonSigmaAtT { sigma, t } => format!("poisson_s{sigma}_t{t}"),
            OperatorKind::PoissonMaximal { sigma } => format!("poisson_maximal_s{sigma}"),
            OperatorKind::GHeat => "g_heat".into(),
            OperatorKind::GPoisson => "g_poisson".into(),
            OperatorKind::LaplaceMultiplier { .. } => "laplace_multiplier".into(),
            OperatorKind::RieszComponent { axis } => format!("riesz_{axis}"),
            OperatorKind::NegativePower { gamma } => format!("negative_power_g{gamma}"),
        }
    }
}

/// Banach-norm reduction of a vector-valued operator.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Reduction {
    /// Pointwise sup over the time grid.
    SupOverT,
    /// Quadrature in `dt/t`, square-rooted.
    SquareQuadrature,
}

/// An operator descriptor: the kind plus its Lebesgue and smoothness data.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OperatorDescriptor {
    #[serde(flatten)]
    pub kind: OperatorKind,
    /// Source Lebesgue exponent of the boundedness hypothesis.
    #[serde(default = "default_p")]
    pub p: f64,
    /// Smoothness exponent in use (must stay below `min(1, δ0)`).
    #[serde(default)]
    pub delta: Option<f64>,
}

fn default_p() -> f64 {
    2.0
}

impl OperatorDescriptor {
    pub fn new(kind: OperatorKind) -> Self {
        OperatorDescriptor { kind, p: 2.0, delta: None }
    }

    pub fn validate(&self, n: usize) -> Result<()> {
        match &self.kind {
            OperatorKind::PoissonSigmaAtT { sigma, t } => {
                if !(*sigma > 0.0 && *sigma < 1.0) {
                    return Err(Error::InvalidParam(format!("sigma = {sigma} outside (0,1)")));
                }
                if !(*t > 0.0) {
                    return Err(Error::InvalidParam("poisson time must be positive".into()));
                }
            }
            OperatorKind::PoissonMaximal { sigma } => {
                if !(*sigma > 0.0 && *sigma < 1.0) {
                    return Err(Error::InvalidParam(format!("sigma = {sigma} outside (0,1)")));
                }
            }
            OperatorKind::HeatAtT { t } => {
                if !(*t > 0.0) {
                    return Err(Error::InvalidParam("heat time must be positive".into()));
                }
            }
            OperatorKind::RieszComponent { axis } => {
                if *axis >= n {
                    return Err(Error::InvalidParam(format!("riesz axis {axis} out of range")));
                }
            }
            OperatorKind::NegativePower { gamma } => {
                if !(*gamma > 0.0) || *gamma >= n as f64 {
                    return Err(Error::InvalidParam(format!("negative power needs 0 < γ < n, got {gamma}")));
                }
            }
            OperatorKind::LaplaceMultiplier { symbol } => symbol.validate()?,
            _ => {}
        }
        Ok(())
    }

    /// Order `γ` of the operator (0 for everything except negative powers).
    pub fn gamma(&self) -> f64 {
        match &self.kind {
            OperatorKind::NegativePower { gamma } => *gamma,
            _ => 0.0,
        }
    }

    /// Target Lebesgue exponent from `1/q = 1/p - γ/n`.
    pub fn q_lebesgue(&self, n: usize) -> f64 {
        let inv = 1.0 / self.p - self.gamma() / n as f64;
        if inv <= 0.0 {
            f64::INFINITY
        } else {
            1.0 / inv
        }
    }

    /// Smoothness exponent in use: configured, or 90% of `min(1, δ0)`.
    pub fn delta_in_use(&self, delta0: f64) -> f64 {
        self.delta.unwrap_or(0.9 * delta0.min(1.0))
    }

    pub fn reduction(&self) -> Option<Reduction> {
        match &self.kind {
            OperatorKind::HeatMaximal | OperatorKind::PoissonMaximal { .. } => {
                Some(Reduction::SupOverT)
            }
            OperatorKind::GHeat | OperatorKind::GPoisson => Some(Reduction::SquareQuadrature),
            _ => None,
        }
    }

    pub fn is_vector_valued(&self) -> bool {
        self.reduction().is_some()
    }

    /// The time grid this descriptor needs on a given model.
    pub fn tgrid_for(&self, model: &SpectralModel, maximal_points: usize) -> Option<TGrid> {
        match &self.kind {
            OperatorKind::HeatMaximal | OperatorKind::PoissonMaximal { .. } => {
                Some(TGrid::maximal(&model.grid, maximal_points))
            }
            OperatorKind::GHeat => Some(TGrid::quadrature(
                model.lambda_min,
                model.lambda_max,
                model.grid.lbox,
            )),
            OperatorKind::GPoisson => Some(TGrid::quadrature(
                model.lambda_min.sqrt(),
                model.lambda_max.sqrt(),
                model.grid.lbox,
            )),
            _ => None,
        }
    }
}

// ---------------------------------------------------------------------------
// generalized Poisson subordination
// ---------------------------------------------------------------------------

/// Discretized subordination average: `φ(λ) = Σ_j base_j e^{-λ decay_j}`,
/// the trapezoid rule in `u = log r` of
/// `(1/Γ(σ)) ∫ e^{-r} e^{-(t²/4r)λ} dr/r^{1-σ}`.
pub struct SubordinationRule {
    pub base: Vec<f64>,
    pub decay: Vec<f64>,
}

impl SubordinationRule {
    pub fn phi(&self, lam: f64) -> f64 {
        self.base
            .iter()
            .zip(&self.decay)
            .map(|(b, d)| b * (-lam * d).exp())
            .sum()
    }
}

fn subordination_nodes(sigma: f64, t: f64, w_min: f64, w_max: f64, du: f64) -> SubordinationRule {
    // at large w = t²λ/4 the integrand is a saddle of width (2√w)^{-1/2}
    // around u = ln(√w); the step must resolve it
    let kappa = (2.0 * w_max.sqrt()).max(1.0);
    let du = du.min(1.0 / (3.0 * kappa.sqrt()));
    let mut u_lo = -44.0 / sigma;
    if w_min > 1e-280 {
        u_lo = u_lo.max(w_min.ln() - 6.0);
    }
    let u_hi = if w_max > 1.0 { (0.5 * w_max.ln() + 6.0).max(4.2) } else { 4.2 };
    let count = ((u_hi - u_lo) / du).ceil() as usize + 1;
    let inv_gamma = 1.0 / gamma(sigma);
    let mut base = Vec::with_capacity(count);
    let mut decay = Vec::with_capacity(count);
    for k in 0..count {
        let u = u_lo + k as f64 * du;
        let w = if k == 0 || k == count - 1 { 0.5 * du } else { du };
        let r = u.exp();
        base.push(w * inv_gamma * (-r + sigma * u).exp());
        decay.push(t * t / (4.0 * r));
    }
    SubordinationRule { base, decay }
}

/// Builds the subordination quadrature for `P^σ_t` valid on `[λ_lo, λ_hi]`,
/// verified against a halved step to the requested relative tolerance.
pub fn subordination_rule(
    sigma: f64,
    t: f64,
    lambda_lo: f64,
    lambda_hi: f64,
    rel_tol: f64,
) -> Result<SubordinationRule> {
    if !(sigma > 0.0 && sigma < 1.0) || !(t > 0.0) {
        return Err(Error::InvalidParam(format!("subordination needs σ ∈ (0,1), t > 0; got σ={sigma}, t={t}")));
    }
    let w_min = t * t * lambda_lo / 4.0;
    let w_max = t * t * lambda_hi / 4.0;
    let coarse = subordination_nodes(sigma, t, w_min, w_max, 0.2);
    let fine = subordination_nodes(sigma, t, w_min, w_max, 0.1);
    let mut achieved = 0.0f64;
    let probes = [
        lambda_lo,
        (lambda_lo * lambda_hi).sqrt(),
        lambda_hi,
        lambda_lo * (lambda_hi / lambda_lo).powf(0.25),
        lambda_lo * (lambda_hi / lambda_lo).powf(0.75),
    ];
    // the multiplier acts on unit-scale coefficients, so errors are
    // normalized against the largest probe value rather than pointwise
    let peak = probes
        .iter()
        .map(|&lam| fine.phi(lam).abs())
        .fold(0.0f64, f64::max)
        .max(1e-300);
    for &lam in &probes {
        let a = coarse.phi(lam);
        let b = fine.phi(lam);
        achieved = achieved.max((a - b).abs() / peak);
    }
    if achieved > rel_tol {
        return Err(Error::QuadratureTolerance { achieved, requested: rel_tol });
    }
    Ok(fine)
}

/// Scalar multiplier of the generalized Poisson operator at (σ, t).
pub fn poisson_multiplier(sigma: f64, t: f64, lambda_lo: f64, lambda_hi: f64) -> Result<Box<dyn Fn(f64) -> f64 + Sync>> {
    if (sigma - 0.5).abs() < 1e-12 {
        return Ok(Box::new(move |lam: f64| (-t * lam.sqrt()).exp()));
    }
    let rule = subordination_rule(sigma, t, lambda_lo, lambda_hi, 1e-9)?;
    Ok(Box::new(move |lam: f64| rule.phi(lam)))
}

// ---------------------------------------------------------------------------
// pointwise applications
// ---------------------------------------------------------------------------

/// `e^{-tL} f`.
pub fn heat_apply(model: &SpectralModel, t: f64, f: &GridFunction) -> GridFunction {
    assert!(t > 0.0);
    model.apply_fn(&move |l| (-t * l).exp(), f)
}

/// `P^σ_t f` (closed form at σ = 1/2, checked quadrature otherwise).
pub fn poisson_sigma_apply(
    model: &SpectralModel,
    sigma: f64,
    t: f64,
    f: &GridFunction,
) -> Result<GridFunction> {
    let phi = poisson_multiplier(sigma, t, model.lambda_min, model.lambda_max)?;
    Ok(model.apply_fn(&*phi, f))
}

/// Pointwise max of `|slice_t f|` over the grid times.
fn maximal_reduce(
    model: &SpectralModel,
    tgrid: &TGrid,
    f: &GridFunction,
    slice: impl Fn(f64) -> Result<Box<dyn Fn(f64) -> f64 + Sync>>,
) -> Result<GridFunction> {
    let coeffs = model.forward(&f.values);
    let mut out = vec![0.0f64; f.values.len()];
    for &t in &tgrid.times {
        let phi = slice(t)?;
        let mut c = coeffs.clone();
        model.map_coefficients(&mut c, &*phi);
        let s = model.inverse(&c);
        for (o, v) in out.iter_mut().zip(&s) {
            *o = o.max(v.abs());
        }
    }
    Ok(GridFunction::new(model.grid, out))
}

/// `sup_t |e^{-tL} f|` over the maximal grid.
pub fn heat_maximal(model: &SpectralModel, f: &GridFunction, tgrid: &TGrid) -> Result<GridFunction> {
    if tgrid.role != TGridRole::MaximalSup {
        return Err(Error::InvalidParam("heat_maximal needs a maximal-sup grid".into()));
    }
    maximal_reduce(model, tgrid, f, |t| Ok(Box::new(move |l: f64| (-t * l).exp())))
}

/// `sup_t |P^σ_t f|` over the maximal grid.
pub fn poisson_maximal(
    model: &SpectralModel,
    sigma: f64,
    f: &GridFunction,
    tgrid: &TGrid,
) -> Result<GridFunction> {
    if tgrid.role != TGridRole::MaximalSup {
        return Err(Error::InvalidParam("poisson_maximal needs a maximal-sup grid".into()));
    }
    let (lo, hi) = (model.lambda_min, model.lambda_max);
    maximal_reduce(model, tgrid, f, |t| poisson_multiplier(sigma, t, lo, hi))
}

fn square_function(
    model: &SpectralModel,
    tgrid: &TGrid,
    f: &GridFunction,
    scale_lo: f64,
    scale_hi: f64,
    slice: impl Fn(f64) -> Box<dyn Fn(f64) -> f64 + Sync>,
) -> Result<GridFunction> {
    if tgrid.role != TGridRole::QuadratureDtOverT {
        return Err(Error::InvalidParam("square function needs a quadrature grid".into()));
    }
    let residual = tgrid.square_function_residual(scale_lo, scale_hi);
    if residual > 1e-6 {
        return Err(Error::QuadratureTolerance { achieved: residual, requested: 1e-6 });
    }
    let coeffs = model.forward(&f.values);
    let mut acc = vec![0.0f64; f.values.len()];
    for (&t, &w) in tgrid.times.iter().zip(&tgrid.weights) {
        let phi = slice(t);
        let mut c = coeffs.clone();
        model.map_coefficients(&mut c, &*phi);
        let s = model.inverse(&c);
        for (a, v) in acc.iter_mut().zip(&s) {
            *a += w * v * v;
        }
    }
    Ok(GridFunction::new(model.grid, acc.iter().map(|a| a.sqrt()).collect()))
}

/// Square function of the heat semigroup, slices `t ∂_t W_t f`.
pub fn g_heat(model: &SpectralModel, f: &GridFunction, tgrid: &TGrid) -> Result<GridFunction> {
    square_function(model, tgrid, f, model.lambda_min, model.lambda_max, |t| {
        Box::new(move |l: f64| -t * l * (-t * l).exp())
    })
}

/// Square function of the Poisson semigroup (σ = 1/2), slices `t ∂_t P_t f`.
pub fn g_poisson(model: &SpectralModel, f: &GridFunction, tgrid: &TGrid) -> Result<GridFunction> {
    square_function(
        model,
        tgrid,
        f,
        model.lambda_min.sqrt(),
        model.lambda_max.sqrt(),
        |t| Box::new(move |l: f64| -t * l.sqrt() * (-t * l.sqrt()).exp()),
    )
}

/// Laplace-transform-type multiplier `m(L) f`.
pub fn laplace_multiplier(
    model: &SpectralModel,
    symbol: &LaplaceSymbol,
    f: &GridFunction,
) -> Result<GridFunction> {
    symbol.validate()?;
    let bound = symbol.sup_bound();
    // sanity sweep of |m| ≤ sup|a| across the spectral range
    let probes = 512;
    for k in 0..=probes {
        let lam = model.lambda_min
            * (model.lambda_max / model.lambda_min).powf(k as f64 / probes as f64);
        let m = symbol.multiplier(lam);
        if m.abs() > bound * (1.0 + 1e-8) {
            return Err(Error::MultiplierBound { value: m.abs(), bound });
        }
    }
    if let LaplaceSymbol::Constant { value } = symbol {
        // m ≡ value: the operator is exactly a scalar multiple of the identity
        let mut out = f.clone();
        out.scale(*value);
        return Ok(out);
    }
    Ok(model.apply_fn(&|l| symbol.multiplier(l), f))
}

/// Fourth-order first derivative along `axis` (one-sided at the two nodes
/// nearest each wall).
pub fn fd_derivative_axis(grid: &BoxGrid, values: &[f64], axis: usize) -> Vec<f64> {
    let m = grid.m;
    let h = grid.h();
    let stride = grid.m.pow(axis as u32);
    let len = grid.len();
    let mut out = vec![0.0; len];
    let mut fiber = vec![0.0; m];
    let mut dfiber = vec![0.0; m];
    let outer = len / m;
    for block in 0..outer {
        // fiber base: decompose block into (inner, rest) around the axis
        let inner = block % stride;
        let rest = block / stride;
        let base = inner + rest * stride * m;
        for k in 0..m {
            fiber[k] = values[base + k * stride];
        }
        differentiate_fiber(&fiber, &mut dfiber, h);
        for k in 0..m {
            out[base + k * stride] = dfiber[k];
        }
    }
    out
}

fn differentiate_fiber(u: &[f64], out: &mut [f64], h: f64) {
    let m = u.len();
    let c = 1.0 / (12.0 * h);
    out[0] = c * (-25.0 * u[0] + 48.0 * u[1] - 36.0 * u[2] + 16.0 * u[3] - 3.0 * u[4]);
    out[1] = c * (-3.0 * u[0] - 10.0 * u[1] + 18.0 * u[2] - 6.0 * u[3] + u[4]);
    for k in 2..m - 2 {
        out[k] = c * (u[k - 2] - 8.0 * u[k - 1] + 8.0 * u[k + 1] - u[k + 2]);
    }
    out[m - 2] = c * (3.0 * u[m - 1] + 10.0 * u[m - 2] - 18.0 * u[m - 3] + 6.0 * u[m - 4] - u[m - 5]);
    out[m - 1] =
        c * (25.0 * u[m - 1] - 48.0 * u[m - 2] + 36.0 * u[m - 3] - 16.0 * u[m - 4] + 3.0 * u[m - 5]);
}

/// Riesz transform component `∂_{x_i} L^{-1/2} f`.
pub fn riesz_apply(model: &SpectralModel, axis: usize, f: &GridFunction) -> Result<GridFunction> {
    if axis >= model.grid.n {
        return Err(Error::InvalidParam(format!("riesz axis {axis} out of range")));
    }
    let half = model.apply_fn(&|l| l.powf(-0.5), f);
    Ok(GridFunction::new(
        model.grid,
        fd_derivative_axis(&model.grid, &half.values, axis),
    ))
}

/// `L^{-γ/2} f` through the spectral route.
pub fn negative_power(model: &SpectralModel, gamma_ord: f64, f: &GridFunction) -> Result<GridFunction> {
    if !(gamma_ord > 0.0) {
        return Err(Error::InvalidParam("negative power needs γ > 0".into()));
    }
    Ok(model.apply_fn(&move |l| l.powf(-gamma_ord / 2.0), f))
}

/// `L^{-γ/2} f` through time quadrature of the heat semigroup, with the
/// short-time tail restored by a two-term series; kept as an independent
/// route for cross-validation.
pub fn negative_power_quadrature(
    model: &SpectralModel,
    gamma_ord: f64,
    f: &GridFunction,
) -> Result<GridFunction> {
    if !(gamma_ord > 0.0) {
        return Err(Error::InvalidParam("negative power needs γ > 0".into()));
    }
    let g2 = gamma_ord / 2.0;
    // deep lower endpoint: the integrand decays only like t^{γ/2} there, so
    // the trapezoid boundary bias must be pushed below the target accuracy
    let t_lo = 1e-8 / model.lambda_max;
    let t_hi = 45.0 / model.lambda_min;
    let points = (((t_hi / t_lo).ln() / 0.25).ceil() as usize + 1).max(48);
    let rule = crate::quad::log_trapezoid(t_lo, t_hi, points);
    let inv_gamma = 1.0 / gamma(g2);
    let mut out = GridFunction::zeros(model.grid);
    for (t, w) in rule {
        let slice = heat_apply(model, t, f);
        out.axpy(w * t.powf(g2) * inv_gamma, &slice);
    }
    // ∫_0^ε e^{-tλ} t^{γ/2 - 1} dt ≈ ε^{γ/2} (1/(γ/2) - λ ε/(γ/2 + 1))
    let eps = t_lo;
    let head = eps.powf(g2) * inv_gamma;
    out.axpy(head / g2, f);
    let lf = model.apply_fn(&|l| l, f);
    out.axpy(-head * eps / (g2 + 1.0), &lf);
    Ok(out)
}

/// Apply any descriptor to a grid function.
pub fn apply_descriptor(
    descr: &OperatorDescriptor,
    model: &SpectralModel,
    f: &GridFunction,
    maximal_points: usize,
) -> Result<GridFunction> {
    descr.validate(model.grid.n)?;
    match &descr.kind {
        OperatorKind::Identity => Ok(f.clone()),
        OperatorKind::HeatAtT { t } => Ok(heat_apply(model, *t, f)),
        OperatorKind::HeatMaximal => {
            let tg = descr.tgrid_for(model, maximal_points).unwrap();
            heat_maximal(model, f, &tg)
        }
        OperatorKind::PoissonSigmaAtT { sigma, t } => poisson_sigma_apply(model, *sigma, *t, f),
        OperatorKind::PoissonMaximal { sigma } => {
            let tg = descr.tgrid_for(model, maximal_points).unwrap();
            poisson_maximal(model, *sigma, f, &tg)
        }
        OperatorKind::GHeat => {
            let tg = descr.tgrid_for(model, maximal_points).unwrap();
            g_heat(model, f, &tg)
        }
        OperatorKind::GPoisson => {
            let tg = descr.tgrid_for(model, maximal_points).unwrap();
            g_poisson(model, f, &tg)
        }
        OperatorKind::LaplaceMultiplier { symbol } => laplace_multiplier(model, symbol, f),
        OperatorKind::RieszComponent { axis } => riesz_apply(model, *axis, f),
        OperatorKind::NegativePower { gamma } => negative_power(model, *gamma, f),
    }
}

/// Coefficient multiplier of one vector slice at time `t`, if the kind is
/// vector-valued.
pub fn slice_multiplier(
    kind: &OperatorKind,
    t: f64,
    lambda_lo: f64,
    lambda_hi: f64,
) -> Result<Option<Box<dyn Fn(f64) -> f64 + Sync>>> {
    Ok(match kind {
        OperatorKind::HeatMaximal => Some(Box::new(move |l: f64| (-t * l).exp())),
        OperatorKind::PoissonMaximal { sigma } => {
            Some(poisson_multiplier(*sigma, t, lambda_lo, lambda_hi)?)
        }
        OperatorKind::GHeat => Some(Box::new(move |l: f64| -t * l * (-t * l).exp())),
        OperatorKind::GPoisson => {
            Some(Box::new(move |l: f64| -t * l.sqrt() * (-t * l.sqrt()).exp()))
        }
        _ => None,
    })
}

// ---------------------------------------------------------------------------
// kernel sampling
// ---------------------------------------------------------------------------

/// A sampled kernel value: scalar, or a t-indexed family with its reductions.
#[derive(Debug, Clone)]
pub enum KernelSample {
    Scalar(f64),
    Vector { values: Vec<f64>, e_norm: f64, f_norm: f64 },
}

impl KernelSample {
    pub fn scalar(&self) -> f64 {
        match self {
            KernelSample::Scalar(v) => *v,
            KernelSample::Vector { e_norm, .. } => *e_norm,
        }
    }
}

/// Shared time-quadrature tables for kernel sampling: one log grid covering
/// the whole spectral range, with per-axis `e^{-t λ}` tables so repeated
/// kernel evaluations avoid transcendental calls.
pub struct KernelQuadCache {
    times: Vec<f64>,
    /// dt/t trapezoid weights.
    weights: Vec<f64>,
    /// `tables[t_idx][axis * m + j] = e^{-t λ^{(axis)}_j}`.
    tables: Vec<Vec<f64>>,
}

impl KernelQuadCache {
    pub fn new(model: &SpectralModel) -> Option<Self> {
        let axes = model.axes()?;
        let t_lo = 1e-8 / model.lambda_max;
        let t_hi = 45.0 / model.lambda_min;
        let points = (((t_hi / t_lo).ln() / 0.25).ceil() as usize + 1).max(48);
        let rule = crate::quad::log_trapezoid(t_lo, t_hi, points);
        let m = model.grid.m;
        let mut times = Vec::with_capacity(points);
        let mut weights = Vec::with_capacity(points);
        let mut tables = Vec::with_capacity(points);
        for (t, w) in rule {
            let mut table = vec![0.0; axes.len() * m];
            for (a, ax) in axes.iter().enumerate() {
                for (j, &lam) in ax.eigenvalues.iter().enumerate() {
                    table[a * m + j] = (-t * lam).exp();
                }
            }
            times.push(t);
            weights.push(w);
            tables.push(table);
        }
        Some(KernelQuadCache { times, weights, tables })
    }

    /// Heat kernel at grid nodes through the cached exponential tables.
    fn heat_kernel(&self, model: &SpectralModel, t_idx: usize, x: usize, y: usize) -> f64 {
        let axes = model.axes().expect("cache is separable-only");
        let grid = model.grid;
        let m = grid.m;
        let mut mi = [0usize; 6];
        let mut mj = [0usize; 6];
        grid.multi_index(x, &mut mi[..grid.n]);
        grid.multi_index(y, &mut mj[..grid.n]);
        let table = &self.tables[t_idx];
        let mut prod = 1.0;
        for (a, ax) in axes.iter().enumerate() {
            prod *= ax.kernel_sum_table(&table[a * m..(a + 1) * m], mi[a], mj[a]);
        }
        prod
    }

    /// `K_γ(x, y)` by the cached quadrature.
    pub fn negative_power(&self, model: &SpectralModel, gamma_ord: f64, x: usize, y: usize) -> Result<f64> {
        if x == y {
            return Err(Error::OnDiagonalSample);
        }
        let g2 = gamma_ord / 2.0;
        let inv_gamma = 1.0 / gamma(g2);
        let mut acc = 0.0;
        for t_idx in 0..self.times.len() {
            let t = self.times[t_idx];
            acc += self.weights[t_idx] * t.powf(g2) * self.heat_kernel(model, t_idx, x, y);
        }
        Ok(acc * inv_gamma)
    }

    /// Riesz kernel vector by the same stencil route as the uncached path.
    pub fn riesz_vector(&self, model: &SpectralModel, x: usize, y: usize) -> Result<Vec<f64>> {
        if x == y {
            return Err(Error::OnDiagonalSample);
        }
        riesz_gradient_of(model, x, y, &|xx, yy| self.negative_power(model, 1.0, xx, yy))
    }
}

/// Kernel of `L^{-γ/2}` between two nodes, by heat-kernel time quadrature.
pub fn negative_power_kernel(model: &SpectralModel, gamma_ord: f64, x: usize, y: usize) -> Result<f64> {
    if x == y {
        return Err(Error::OnDiagonalSample);
    }
    let g2 = gamma_ord / 2.0;
    let r2 = node_distance2(model, x, y);
    let t_lo = (r2 / 120.0).min(1e-3 / model.lambda_max).max(1e-300);
    let t_hi = 45.0 / model.lambda_min;
    let points = (((t_hi / t_lo).ln() / 0.25).ceil() as usize + 1).max(48);
    let rule = crate::quad::log_trapezoid(t_lo, t_hi, points);
    let inv_gamma = 1.0 / gamma(g2);
    let mut acc = 0.0;
    for (t, w) in rule {
        acc += w * t.powf(g2) * model.heat_kernel_at(t, x, y) * inv_gamma;
    }
    Ok(acc)
}

/// Riesz kernel vector `∂_x K_1(x, y)`: the same fourth-order stencil as the
/// apply route, acting on the `L^{-1/2}` kernel evaluated near `x`.
pub fn riesz_kernel_vector(model: &SpectralModel, x: usize, y: usize) -> Result<Vec<f64>> {
    if x == y {
        return Err(Error::OnDiagonalSample);
    }
    riesz_gradient_of(model, x, y, &|xx, yy| negative_power_kernel(model, 1.0, xx, yy))
}

/// Fourth-order gradient stencil in the first kernel argument, shared by the
/// cached and uncached Riesz kernel routes.
fn riesz_gradient_of(
    model: &SpectralModel,
    x: usize,
    y: usize,
    k1: &dyn Fn(usize, usize) -> Result<f64>,
) -> Result<Vec<f64>> {
    let grid = model.grid;
    let m = grid.m;
    let h = grid.h();
    let mut mi = [0usize; 6];
    grid.multi_index(x, &mut mi[..grid.n]);
    let mut out = Vec::with_capacity(grid.n);
    for axis in 0..grid.n {
        let stride = m.pow(axis as u32);
        let k = mi[axis];
        // sample K1 along the axis stencil (one-sided at the walls)
        let val = |kk: usize| -> Result<f64> {
            let idx = x - k * stride + kk * stride;
            k1(idx, y)
        };
        let c = 1.0 / (12.0 * h);
        let d = if k >= 2 && k + 2 < m {
            c * (val(k - 2)? - 8.0 * val(k - 1)? + 8.0 * val(k + 1)? - val(k + 2)?)
        } else if k < 2 {
            let u: Vec<f64> = (0..5).map(val).collect::<Result<_>>()?;
            if k == 0 {
                c * (-25.0 * u[0] + 48.0 * u[1] - 36.0 * u[2] + 16.0 * u[3] - 3.0 * u[4])
            } else {
                c * (-3.0 * u[0] - 10.0 * u[1] + 18.0 * u[2] - 6.0 * u[3] + u[4])
            }
        } else {
            let base = m - 5;
            let u: Vec<f64> = (0..5).map(|j| val(base + j)).collect::<Result<_>>()?;
            if k == m - 1 {
                c * (25.0 * u[4] - 48.0 * u[3] + 36.0 * u[2] - 16.0 * u[1] + 3.0 * u[0])
            } else {
                c * (3.0 * u[4] + 10.0 * u[3] - 18.0 * u[2] + 6.0 * u[1] - u[0])
            }
        };
        out.push(d);
    }
    Ok(out)
}

/// `t ∂_t P_t(x, y)` at σ = 1/2 via the subordinated derivative formula.
pub fn poisson_dt_kernel(model: &SpectralModel, t: f64, x: usize, y: usize) -> f64 {
    // t ∂_t P_t = (t/√π) ∫ e^{-t²/4v} (v ∂_v W_v) dv / v^{3/2}
    let v_lo = (t * t / 160.0).min(1e-3 / model.lambda_max);
    let v_hi = 45.0 / model.lambda_min;
    let points = (((v_hi / v_lo).ln() / 0.25).ceil() as usize + 1).max(48);
    let rule = crate::quad::log_trapezoid(v_lo, v_hi, points);
    let c = t / std::f64::consts::PI.sqrt();
    let mut acc = 0.0;
    for (v, w) in rule {
        let dv = v * model.heat_kernel_dt_at(v, x, y);
        acc += w * c * (-t * t / (4.0 * v)).exp() * dv / v.sqrt();
    }
    acc
}

/// Kernel of a Laplace-type multiplier between distinct nodes.
pub fn laplace_kernel(model: &SpectralModel, symbol: &LaplaceSymbol, x: usize, y: usize) -> Result<f64> {
    if x == y {
        return Err(Error::OnDiagonalSample);
    }
    match symbol {
        // m ≡ c is c·Identity: zero off-diagonal kernel
        LaplaceSymbol::Constant { .. } => Ok(0.0),
        // window symbol telescopes to the heat kernel at the window end
        LaplaceSymbol::Window { t_end } => Ok(model.heat_kernel_at(*t_end, x, y)),
        _ => {
            let r2 = node_distance2(model, x, y);
            let t_lo = (r2 / 120.0).min(1e-3 / model.lambda_max).max(1e-300);
            let t_hi = 45.0 / model.lambda_min;
            let points = (((t_hi / t_lo).ln() / 0.2).ceil() as usize + 1).max(48);
            let rule = crate::quad::log_trapezoid(t_lo, t_hi, points);
            let mut acc = 0.0;
            for (t, w) in rule {
                let a = match symbol {
                    LaplaceSymbol::ExpDecay { rate } => (-rate * t).exp(),
                    LaplaceSymbol::Sampled { times, values } => sampled_value(times, values, t),
                    _ => unreachable!(),
                };
                // the measure here is dt, not dt/t: multiply the dt/t weight by t
                acc += w * t * a * model.heat_kernel_dt_at(t, x, y);
            }
            Ok(acc)
        }
    }
}

fn sampled_value(times: &[f64], values: &[f64], t: f64) -> f64 {
    if t <= times[0] {
        return values[0];
    }
    if t >= *times.last().unwrap() {
        return 0.0;
    }
    let k = times.partition_point(|&u| u <= t) - 1;
    let (u, v) = (times[k], times[k + 1]);
    let w = (t - u) / (v - u);
    values[k] * (1.0 - w) + values[k + 1] * w
}

fn node_distance2(model: &SpectralModel, x: usize, y: usize) -> f64 {
    let px = model.grid.point(x);
    let py = model.grid.point(y);
    px.iter().zip(&py).map(|(a, b)| (a - b) * (a - b)).sum()
}

/// Sample the kernel of a descriptor at a pair of nodes.
pub fn kernel_of(
    descr: &OperatorDescriptor,
    model: &SpectralModel,
    x: usize,
    y: usize,
    maximal_points: usize,
) -> Result<KernelSample> {
    descr.validate(model.grid.n)?;
    match &descr.kind {
        OperatorKind::Identity => {
            if x == y {
                Err(Error::OnDiagonalSample)
            } else {
                Ok(KernelSample::Scalar(0.0))
            }
        }
        OperatorKind::HeatAtT { t } => Ok(KernelSample::Scalar(model.heat_kernel_at(*t, x, y))),
        OperatorKind::PoissonSigmaAtT { sigma, t } => {
            let rule = subordination_rule(*sigma, *t, model.lambda_min, model.lambda_max, 1e-9)?;
            let mut acc = 0.0;
            for (b, d) in rule.base.iter().zip(&rule.decay) {
                if *d > 1e-300 {
                    acc += b * model.heat_kernel_at(*d, x, y);
                }
            }
            Ok(KernelSample::Scalar(acc))
        }
        OperatorKind::HeatMaximal => {
            let tg = descr.tgrid_for(model, maximal_points).unwrap();
            let values: Vec<f64> = tg.times.iter().map(|&t| model.heat_kernel_at(t, x, y)).collect();
            let e_norm = values.iter().fold(0.0f64, |a, v| a.max(v.abs()));
            Ok(KernelSample::Vector { values, e_norm, f_norm: 0.0 })
        }
        OperatorKind::PoissonMaximal { sigma } => {
            let tg = descr.tgrid_for(model, maximal_points).unwrap();
            let mut values = Vec::with_capacity(tg.len());
            for &t in &tg.times {
                let rule = subordination_rule(*sigma, t, model.lambda_min, model.lambda_max, 1e-9)?;
                let mut acc = 0.0;
                for (b, d) in rule.base.iter().zip(&rule.decay) {
                    if *d > 1e-300 {
                        acc += b * model.heat_kernel_at(*d, x, y);
                    }
                }
                values.push(acc);
            }
            let e_norm = values.iter().fold(0.0f64, |a, v| a.max(v.abs()));
            Ok(KernelSample::Vector { values, e_norm, f_norm: 0.0 })
        }
        OperatorKind::GHeat => {
            let tg = descr.tgrid_for(model, maximal_points).unwrap();
            let values: Vec<f64> = tg
                .times
                .iter()
                .map(|&t| t * model.heat_kernel_dt_at(t, x, y))
                .collect();
            let f_norm = values
                .iter()
                .zip(&tg.weights)
                .map(|(v, w)| w * v * v)
                .sum::<f64>()
                .sqrt();
            let e_norm = values.iter().fold(0.0f64, |a, v| a.max(v.abs()));
            Ok(KernelSample::Vector { values, e_norm, f_norm })
        }
        OperatorKind::GPoisson => {
            let tg = descr.tgrid_for(model, maximal_points).unwrap();
            let values: Vec<f64> = tg
                .times
                .iter()
                .map(|&t| poisson_dt_kernel(model, t, x, y))
                .collect();
            let f_norm = values
                .iter()
                .zip(&tg.weights)
                .map(|(v, w)| w * v * v)
                .sum::<f64>()
                .sqrt();
            let e_norm = values.iter().fold(0.0f64, |a, v| a.max(v.abs()));
            Ok(KernelSample::Vector { values, e_norm, f_norm })
        }
        OperatorKind::LaplaceMultiplier { symbol } => {
            Ok(KernelSample::Scalar(laplace_kernel(model, symbol, x, y)?))
        }
        OperatorKind::RieszComponent { axis } => {
            Ok(KernelSample::Scalar(riesz_kernel_vector(model, x, y)?[*axis]))
        }
        OperatorKind::NegativePower { gamma } => {
            Ok(KernelSample::Scalar(negative_power_kernel(model, *gamma, x, y)?))
        }
    }
}

/// Empirical `L^p → L^q` operator norm over a family of random fields,
/// the computable face of the boundedness hypothesis.
pub fn empirical_lebesgue_norm(
    descr: &OperatorDescriptor,
    model: &SpectralModel,
    draws: usize,
    seed: u64,
    smoothing_time: f64,
    maximal_points: usize,
) -> Result<f64> {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed ^ 0x_0b5e_7a7e);
    let q = descr.q_lebesgue(model.grid.n);
    let mut best = 0.0f64;
    for _ in 0..draws {
        let raw = GridFunction::new(
            model.grid,
            (0..model.grid.len()).map(|_| rng.gen_range(-1.0..1.0)).collect(),
        );
        // a fixed physical smoothing keeps the family comparable across grids
        let f = heat_apply(model, smoothing_time, &raw);
        let nf = f.norm_p(descr.p);
        if nf < 1e-14 {
            continue;
        }
        let tf = apply_descriptor(descr, model, &f, maximal_points)?;
        let nt = if q.is_finite() { tf.norm_p(q) } else { tf.norm_sup() };
        best = best.max(nt / nf);
    }
    Ok(best)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::BoxGrid;
    use crate::potential::{Potential, PotentialSpec, RhExponent};
    use statrs::function::gamma::gamma as gamma_fn;

    fn model_1d(m: usize, l: f64, spec: &PotentialSpec) -> SpectralModel {
        let g = BoxGrid::new(1, m, l, 1.0).unwrap();
        let p = Potential::build(spec, g, RhExponent::Infinite).unwrap();
        SpectralModel::assemble(&p).unwrap()
    }

    fn harmonic_1d() -> SpectralModel {
        model_1d(96, 6.0, &PotentialSpec::SeparablePolynomial { coeffs: vec![0.0, 0.0, 1.0] })
    }

    /// Modified Bessel K_ν by the cosh-integral representation (test oracle,
    /// independent of the subordination quadrature).
    fn bessel_k(nu: f64, x: f64) -> f64 {
        let s_max = (750.0 / x).max(2.0).ln() + (2.0f64).ln() + 2.0;
        let steps = 4000usize;
        let ds = s_max / steps as f64;
        let mut acc = 0.0;
        for k in 0..=steps {
            let s = k as f64 * ds;
            let w = if k == 0 || k == steps { 0.5 } else { 1.0 };
            acc += w * (-x * s.cosh()).exp() * (nu * s).cosh();
        }
        acc * ds
    }

    #[test]
    fn subordination_matches_closed_form_at_half() {
        let md = harmonic_1d();
        let spectrum: Vec<f64> = md.axes().unwrap()[0].eigenvalues.clone();
        for &t in &[0.01, 0.1, 1.0] {
            let rule = subordination_rule(0.5, t, md.lambda_min, md.lambda_max, 1e-9).unwrap();
            for &lam in spectrum.iter().step_by(7) {
                let got = rule.phi(lam);
                let want = (-t * lam.sqrt()).exp();
                assert!(
                    (got - want).abs() <= 1e-8,
                    "t={t} λ={lam}: {got} vs {want}"
                );
            }
        }
    }

    #[test]
    fn subordination_matches_bessel_closed_form() {
        let md = harmonic_1d();
        for &sigma in &[0.25, 0.75] {
            for &(t, lam) in &[(0.1, 2.0), (0.5, 7.0), (1.0, 1.0), (0.2, 40.0)] {
                let rule = subordination_rule(sigma, t, md.lambda_min, md.lambda_max, 1e-9).unwrap();
                let got = rule.phi(lam);
                let z: f64 = t * lam.sqrt();
                let want = 2.0 / gamma_fn(sigma) * (z / 2.0f64).powf(sigma) * bessel_k(sigma, z);
                assert!(
                    (got - want).abs() <= 1e-7 * want.abs().max(1e-12),
                    "σ={sigma} t={t} λ={lam}: {got} vs {want}"
                );
            }
        }
    }

    #[test]
    fn poisson_boundary_datum() {
        let md = harmonic_1d();
        let f = GridFunction::from_fn(md.grid, |p| (0.8 * p[0]).cos());
        let mut last = f64::INFINITY;
        for &t in &[0.3, 0.1, 0.03, 0.01] {
            let pt = poisson_sigma_apply(&md, 0.25, t, &f).unwrap();
            let mut diff = pt.clone();
            diff.axpy(-1.0, &f);
            let e = diff.norm_l2();
            assert!(e < last + 1e-12);
            last = e;
        }
        // σ = 1/4 approaches its boundary datum at the slow rate t^{1/2}
        assert!(last < 0.2 * f.norm_l2());
    }

    #[test]
    fn poisson_maximal_dominated_by_enriched_heat_sup() {
        let md = model_1d(64, 4.0, &PotentialSpec::Constant { amplitude: 1.0 });
        let f = GridFunction::from_fn(md.grid, |p| (1.0 - p[0] * p[0] / 16.0).max(0.0));
        let tg = TGrid::maximal(&md.grid, 32);
        let pm = poisson_maximal(&md, 0.5, &f, &tg).unwrap();
        // oracle: P^σ_t f is an average of heat slices, so it is dominated by
        // the sup of W_s f over the subordination s-nodes
        let mut sup = GridFunction::zeros(md.grid);
        for &t in &tg.times {
            let rule = subordination_rule(0.5, t, md.lambda_min, md.lambda_max, 1e-9).unwrap();
            for &s in rule.decay.iter().filter(|d| **d > 1e-14) {
                let w = heat_apply(&md, s, &f);
                for (a, b) in sup.values.iter_mut().zip(&w.values) {
                    *a = a.max(*b);
                }
            }
        }
        for (p, s) in pm.values.iter().zip(&sup.values) {
            assert!(*p <= s + 1e-9, "{p} > {s}");
        }
    }

    #[test]
    fn g_heat_eigenfunction_constant() {
        let md = harmonic_1d();
        let tg = TGrid::quadrature(md.lambda_min, md.lambda_max, md.grid.lbox);
        let ef = md.eigenfunction(3);
        let g = g_heat(&md, &ef, &tg).unwrap();
        // g(φ_k) = |φ_k| / 2 pointwise
        for (gv, ev) in g.values.iter().zip(&ef.values) {
            assert!((gv - 0.5 * ev.abs()).abs() <= 1e-6 * ev.abs().max(1e-3));
        }
    }

    #[test]
    fn g_functions_are_half_isometries() {
        use rand::{Rng, SeedableRng};
        let md = harmonic_1d();
        let tg_h = TGrid::quadrature(md.lambda_min, md.lambda_max, md.grid.lbox);
        let tg_p = TGrid::quadrature(md.lambda_min.sqrt(), md.lambda_max.sqrt(), md.grid.lbox);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        for _ in 0..5 {
            let f = GridFunction::new(
                md.grid,
                (0..md.grid.len()).map(|_| rng.gen_range(-1.0..1.0)).collect(),
            );
            let nf = f.norm_l2();
            let gh = g_heat(&md, &f, &tg_h).unwrap();
            assert!((gh.norm_l2() - 0.5 * nf).abs() <= 1e-6 * nf, "heat");
            let gp = g_poisson(&md, &f, &tg_p).unwrap();
            assert!((gp.norm_l2() - 0.5 * nf).abs() <= 1e-6 * nf, "poisson");
        }
    }

    #[test]
    fn g_zero_is_zero() {
        let md = harmonic_1d();
        let tg = TGrid::quadrature(md.lambda_min, md.lambda_max, md.grid.lbox);
        let z = GridFunction::zeros(md.grid);
        assert_eq!(g_heat(&md, &z, &tg).unwrap().norm_sup(), 0.0);
    }

    #[test]
    fn g_rejects_coarse_grid() {
        let md = harmonic_1d();
        let mut tg = TGrid::quadrature(md.lambda_min, md.lambda_max, md.grid.lbox);
        // truncate the grid from below: the analytic residual must flag it
        tg.times.drain(0..tg.times.len() / 2);
        tg.weights.drain(0..tg.weights.len() / 2);
        let f = GridFunction::from_fn(md.grid, |p| p[0]);
        assert!(matches!(
            g_heat(&md, &f, &tg),
            Err(Error::QuadratureTolerance { .. })
        ));
    }

    #[test]
    fn poisson_derivative_two_routes() {
        // scalar identity: -t√λ e^{-t√λ} equals the subordinated derivative quadrature
        for &(t, lam) in &[(0.3f64, 4.0f64), (1.0, 1.5), (0.05, 30.0)] {
            let v_lo: f64 = (t * t / 160.0).min(1e-4 / lam);
            let v_hi: f64 = 45.0 / lam * 10.0;
            let points = (((v_hi / v_lo).ln() / 0.15).ceil() as usize + 1).max(64);
            let rule = crate::quad::log_trapezoid(v_lo, v_hi, points);
            let mut acc = 0.0;
            for (v, w) in rule {
                let dv = -lam * v * (-v * lam).exp();
                acc += w * t / std::f64::consts::PI.sqrt() * (-t * t / (4.0 * v)).exp() * dv
                    / v.sqrt();
            }
            let wantv: f64 = -t * lam.sqrt() * (-t * lam.sqrt()).exp();
            assert!(
                (acc - wantv).abs() <= 1e-7 * wantv.abs().max(1e-9),
                "t={t} λ={lam}: {acc} vs {wantv}"
            );
        }
    }

    #[test]
    fn multiplier_constant_symbol_is_identity() {
        let md = harmonic_1d();
        let f = GridFunction::from_fn(md.grid, |p| (p[0] * 0.4).sin());
        let out = laplace_multiplier(&md, &LaplaceSymbol::Constant { value: 1.0 }, &f).unwrap();
        let mut diff = out.clone();
        diff.axpy(-1.0, &f);
        assert!(diff.norm_l2() <= 1e-10 * f.norm_l2());
    }

    #[test]
    fn multiplier_exp_decay_matches_resolvent_composition() {
        let md = harmonic_1d();
        let f = GridFunction::from_fn(md.grid, |p| (0.9 * p[0]).cos());
        let direct = laplace_multiplier(&md, &LaplaceSymbol::ExpDecay { rate: 1.0 }, &f).unwrap();
        let resolvent = md.apply_fn(&|l| 1.0 / (1.0 + l), &f);
        let composed = md.apply_fn(&|l| l, &resolvent);
        let mut diff = direct.clone();
        diff.axpy(-1.0, &composed);
        assert!(diff.norm_l2() <= 1e-9 * f.norm_l2());
    }

    #[test]
    fn multiplier_window_matches_heat_difference() {
        let md = harmonic_1d();
        let f = GridFunction::from_fn(md.grid, |p| 1.0 / (1.0 + p[0] * p[0]));
        let t_end = 0.7;
        let direct = laplace_multiplier(&md, &LaplaceSymbol::Window { t_end }, &f).unwrap();
        let mut want = f.clone();
        want.axpy(-1.0, &heat_apply(&md, t_end, &f));
        let mut diff = direct.clone();
        diff.axpy(-1.0, &want);
        assert!(diff.norm_l2() <= 1e-9 * f.norm_l2());
    }

    #[test]
    fn sampled_symbol_respects_sup_bound() {
        let md = harmonic_1d();
        let f = GridFunction::from_fn(md.grid, |p| (p[0]).sin());
        let times: Vec<f64> = (0..24).map(|k| 0.05 * k as f64).collect();
        let values: Vec<f64> = times.iter().map(|&t| (1.5 * t).sin()).collect();
        let sym = LaplaceSymbol::Sampled { times, values };
        // the exact per-interval integration keeps |m| under the sup bound
        let out = laplace_multiplier(&md, &sym, &f).unwrap();
        assert!(out.norm_l2().is_finite());
    }

    #[test]
    fn riesz_l2_contraction_for_smooth_fields() {
        use rand::{Rng, SeedableRng};
        let md = model_1d(128, 4.0, &PotentialSpec::Constant { amplitude: 1.0 });
        let h2 = md.grid.h() * md.grid.h();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(21);
        for _ in 0..20 {
            let raw = GridFunction::new(
                md.grid,
                (0..md.grid.len()).map(|_| rng.gen_range(-1.0..1.0)).collect(),
            );
            let f = heat_apply(&md, 100.0 * h2, &raw);
            let nf = f.norm_l2();
            if nf < 1e-12 {
                continue;
            }
            let rf = riesz_apply(&md, 0, &f).unwrap();
            assert!(rf.norm_l2() <= (1.0 + 1e-3) * nf, "{} vs {nf}", rf.norm_l2());
        }
    }

    #[test]
    fn riesz_parity() {
        let md = model_1d(96, 4.0, &PotentialSpec::Constant { amplitude: 1.0 });
        let g = md.grid;
        let f = GridFunction::from_fn(g, |p| (-p[0] * p[0]).exp());
        let rf = riesz_apply(&md, 0, &f).unwrap();
        // even input → odd output, away from the one-sided stencil zone
        for k in 4..g.m / 2 {
            let a = rf.values[k];
            let b = rf.values[g.m - 1 - k];
            assert!((a + b).abs() < 1e-8 * a.abs().max(1e-6), "k={k}: {a} {b}");
        }
    }

    #[test]
    fn negative_power_composition_and_limits() {
        let md = harmonic_1d();
        let f = GridFunction::from_fn(md.grid, |p| (0.5 * p[0]).sin() + 0.1);
        let one = negative_power(&md, 0.7, &f).unwrap();
        let two = negative_power(&md, 0.9, &one).unwrap();
        let direct = negative_power(&md, 1.6, &f).unwrap();
        let mut diff = two.clone();
        diff.axpy(-1.0, &direct);
        assert!(diff.norm_l2() <= 1e-9 * f.norm_l2());
        // γ → 0 recovers f
        let tiny = negative_power(&md, 1e-9, &f).unwrap();
        let mut d2 = tiny.clone();
        d2.axpy(-1.0, &f);
        assert!(d2.norm_l2() <= 1e-6 * f.norm_l2());
    }

    #[test]
    fn negative_power_two_routes_agree() {
        let md = harmonic_1d();
        let f = GridFunction::from_fn(md.grid, |p| (0.4 * p[0]).cos());
        let spectral = negative_power(&md, 1.0, &f).unwrap();
        let quadrature = negative_power_quadrature(&md, 1.0, &f).unwrap();
        let mut diff = spectral.clone();
        diff.axpy(-1.0, &quadrature);
        assert!(
            diff.norm_l2() <= 1e-7 * spectral.norm_l2(),
            "{} vs {}",
            diff.norm_l2(),
            spectral.norm_l2()
        );
    }

    #[test]
    fn heat_maximal_dominates_slices_and_tracks_ground_state() {
        let md = harmonic_1d();
        let tg = TGrid::maximal(&md.grid, 32);
        let f = GridFunction::from_fn(md.grid, |p| (-(p[0] * p[0])).exp());
        let hm = heat_maximal(&md, &f, &tg).unwrap();
        let w1 = heat_apply(&md, tg.times[0], &f);
        for (m, s) in hm.values.iter().zip(&w1.values) {
            assert!(*m >= s.abs() - 1e-14);
        }
        // ground state: the sup is the smallest-time slice
        let ef = md.eigenfunction(0);
        let hme = heat_maximal(&md, &ef, &tg).unwrap();
        let want = (-tg.times[0] * md.lambda_min).exp();
        let scale = ef.norm_sup();
        for (m, e) in hme.values.iter().zip(&ef.values) {
            assert!((m - want * e.abs()).abs() <= 1e-11 * scale);
        }
    }

    #[test]
    fn maximal_grid_refinement_stable() {
        let md = harmonic_1d();
        let f = GridFunction::from_fn(md.grid, |p| 1.0 / (1.0 + p[0] * p[0]));
        let a = heat_maximal(&md, &f, &TGrid::maximal(&md.grid, 32)).unwrap();
        let b = heat_maximal(&md, &f, &TGrid::maximal(&md.grid, 64)).unwrap();
        let mut diff = a.clone();
        diff.axpy(-1.0, &b);
        assert!(diff.norm_sup() <= 0.005 * b.norm_sup(), "{}", diff.norm_sup() / b.norm_sup());
    }

    #[test]
    fn linearity_of_applies() {
        let md = harmonic_1d();
        let f = GridFunction::from_fn(md.grid, |p| (p[0]).sin());
        let g = GridFunction::from_fn(md.grid, |p| (0.3 * p[0]).cos());
        let descrs = [
            OperatorDescriptor::new(OperatorKind::HeatAtT { t: 0.2 }),
            OperatorDescriptor::new(OperatorKind::NegativePower { gamma: 0.5 }),
            OperatorDescriptor::new(OperatorKind::RieszComponent { axis: 0 }),
            OperatorDescriptor::new(OperatorKind::LaplaceMultiplier {
                symbol: LaplaceSymbol::ExpDecay { rate: 2.0 },
            }),
        ];
        for d in &descrs {
            let mut combo = f.clone();
            combo.scale(2.0);
            combo.axpy(-3.0, &g);
            let lhs = apply_descriptor(d, &md, &combo, 32).unwrap();
            let tf = apply_descriptor(d, &md, &f, 32).unwrap();
            let tg2 = apply_descriptor(d, &md, &g, 32).unwrap();
            let mut rhs = tf.clone();
            rhs.scale(2.0);
            rhs.axpy(-3.0, &tg2);
            let mut diff = lhs.clone();
            diff.axpy(-1.0, &rhs);
            assert!(diff.norm_l2() <= 1e-10 * rhs.norm_l2().max(1.0), "{}", d.kind.name());
        }
    }

    #[test]
    fn kernel_symmetry_of_scalar_kinds() {
        let md = model_1d(48, 3.0, &PotentialSpec::Constant { amplitude: 1.0 });
        let pairs = [(5usize, 30usize), (10, 40), (20, 25)];
        let kinds = [
            OperatorKind::HeatAtT { t: 0.3 },
            OperatorKind::NegativePower { gamma: 0.5 },
            OperatorKind::LaplaceMultiplier { symbol: LaplaceSymbol::ExpDecay { rate: 1.0 } },
        ];
        for kind in &kinds {
            let d = OperatorDescriptor::new(kind.clone());
            for &(i, j) in &pairs {
                let a = kernel_of(&d, &md, i, j, 32).unwrap().scalar();
                let b = kernel_of(&d, &md, j, i, 32).unwrap().scalar();
                assert!((a - b).abs() <= 1e-10 * a.abs().max(1e-12), "{}", kind.name());
            }
        }
    }

    #[test]
    fn heat_kernel_kind_matches_model_route() {
        let md = model_1d(48, 3.0, &PotentialSpec::Constant { amplitude: 1.0 });
        let d = OperatorDescriptor::new(OperatorKind::HeatAtT { t: 0.15 });
        let got = kernel_of(&d, &md, 7, 31, 32).unwrap().scalar();
        let want = md.heat_kernel_at(0.15, 7, 31);
        assert!((got - want).abs() <= 1e-12 * want.abs().max(1e-300));
    }

    #[test]
    fn lebesgue_norm_finite_and_stable() {
        let kinds = [
            OperatorKind::HeatAtT { t: 0.1 },
            OperatorKind::NegativePower { gamma: 0.5 },
            OperatorKind::GHeat,
        ];
        for kind in &kinds {
            let d = OperatorDescriptor::new(kind.clone());
            let m1 = model_1d(64, 4.0, &PotentialSpec::Constant { amplitude: 1.0 });
            let m2 = model_1d(128, 4.0, &PotentialSpec::Constant { amplitude: 1.0 });
            let n1 = empirical_lebesgue_norm(&d, &m1, 24, 5, 0.02, 32).unwrap();
            let n2 = empirical_lebesgue_norm(&d, &m2, 24, 5, 0.02, 32).unwrap();
            assert!(n1.is_finite() && n2.is_finite());
            let rel = (n1 - n2).abs() / n2.max(1e-12);
            assert!(rel <= 0.10, "{}: {n1} vs {n2} (rel {rel})", kind.name());
        }
    }
}
