//! Deterministic quadrature helpers.
//!
//! `AxisProfile` reconstructs a sampled axis factor `v(u)` as a piecewise
//! quadratic (the parabola through three consecutive nodes on each cell,
//! constant-extended beyond the sampled range) and precomputes exact prefix
//! integrals of `v`, `u·v` and `u²·v` at the cell boundaries.  Ball integrals
//! of separable potentials then cost O(1) per axis: the slice volume of an
//! `n`-ball is polynomial in the slice coordinate for odd `n`, and a fixed
//! Gauss-Legendre rule handles even `n`.

/// Polynomial `a + b u + c u²` on one cell.
#[derive(Debug, Clone, Copy)]
struct CellPoly {
    a: f64,
    b: f64,
    c: f64,
}

impl CellPoly {
    /// Antiderivative of `u^p (a + b u + c u²)` evaluated at `u`.
    #[inline]
    fn moment_antiderivative(&self, p: usize, u: f64) -> f64 {
        let (a, b, c) = (self.a, self.b, self.c);
        let p = p as f64;
        let u1 = u.powf(p + 1.0);
        a * u1 / (p + 1.0) + b * u1 * u / (p + 2.0) + c * u1 * u * u / (p + 3.0)
    }
}

/// Maximum moment order kept in the prefix tables (covers n ≤ 5 odd slices).
pub const MAX_MOMENT: usize = 4;

/// Piecewise-quadratic reconstruction of one axis factor with moment prefix sums.
#[derive(Debug, Clone)]
pub struct AxisProfile {
    /// Node coordinates (uniform, ascending).
    nodes: Vec<f64>,
    /// Per-cell polynomial on `[nodes[k], nodes[k+1]]`.
    cells: Vec<CellPoly>,
    /// `prefix[p][k]` = ∫_{nodes[0]}^{nodes[k]} u^p v(u) du.
    prefix: Vec<Vec<f64>>,
    /// Constant extension values beyond the node range.
    left_value: f64,
    right_value: f64,
}

impl AxisProfile {
    /// Build from uniform samples `values[k] = v(nodes[k])`.
    pub fn new(nodes: Vec<f64>, values: &[f64]) -> Self {
        let m = nodes.len();
        assert!(m >= 3, "axis profile needs at least 3 nodes");
        assert_eq!(values.len(), m);
        let mut cells = Vec::with_capacity(m - 1);
        for k in 0..m - 1 {
            // Simpson pairing: both cells of [x_{2j}, x_{2j+2}] share the
            // parabola through their three nodes (O(h^4) global error)
            let base = (k - (k % 2)).min(m - 3);
            let (x0, x1, x2) = (nodes[base], nodes[base + 1], nodes[base + 2]);
            let (y0, y1, y2) = (values[base], values[base + 1], values[base + 2]);
            // Lagrange coefficients of a + b u + c u^2
            let d0 = (x0 - x1) * (x0 - x2);
            let d1 = (x1 - x0) * (x1 - x2);
            let d2 = (x2 - x0) * (x2 - x1);
            let c = y0 / d0 + y1 / d1 + y2 / d2;
            let b = -(y0 * (x1 + x2) / d0 + y1 * (x0 + x2) / d1 + y2 * (x0 + x1) / d2);
            let a = y0 * x1 * x2 / d0 + y1 * x0 * x2 / d1 + y2 * x0 * x1 / d2;
            cells.push(CellPoly { a, b, c });
        }
        let mut prefix = vec![vec![0.0; m]; MAX_MOMENT + 1];
        for p in 0..=MAX_MOMENT {
            for k in 0..m - 1 {
                let cell = &cells[k];
                let inc = cell.moment_antiderivative(p, nodes[k + 1])
                    - cell.moment_antiderivative(p, nodes[k]);
                prefix[p][k + 1] = prefix[p][k] + inc;
            }
        }
        AxisProfile {
            nodes,
            cells,
            prefix,
            left_value: values[0],
            right_value: values[m - 1],
        }
    }

    #[inline]
    fn first(&self) -> f64 {
        self.nodes[0]
    }

    #[inline]
    fn last(&self) -> f64 {
        *self.nodes.last().unwrap()
    }

    /// Point value of the reconstruction.
    pub fn value(&self, u: f64) -> f64 {
        if u <= self.first() {
            return self.left_value;
        }
        if u >= self.last() {
            return self.right_value;
        }
        let k = self.cell_of(u);
        let cp = &self.cells[k];
        cp.a + cp.b * u + cp.c * u * u
    }

    #[inline]
    fn cell_of(&self, u: f64) -> usize {
        let h = self.nodes[1] - self.nodes[0];
        (((u - self.first()) / h) as usize).min(self.cells.len() - 1)
    }

    /// ∫_lo^hi u^p v(u) du with the constant extension outside the node range.
    pub fn moment(&self, p: usize, lo: f64, hi: f64) -> f64 {
        debug_assert!(p <= MAX_MOMENT);
        if hi <= lo {
            return 0.0;
        }
        let mut total = 0.0;
        // constant extension pieces
        let pw = |v: f64, a: f64, b: f64| -> f64 {
            let q = p as f64 + 1.0;
            v * (b.powf(q) - a.powf(q)) / q
        };
        let lo_in = lo.max(self.first());
        let hi_in = hi.min(self.last());
        if lo < self.first() {
            total += pw(self.left_value, lo, self.first().min(hi));
        }
        if hi > self.last() {
            total += pw(self.right_value, self.last().max(lo), hi);
        }
        if hi_in > lo_in {
            let ka = self.cell_of(lo_in);
            let kb = self.cell_of(hi_in);
            if ka == kb {
                let cp = &self.cells[ka];
                total += cp.moment_antiderivative(p, hi_in) - cp.moment_antiderivative(p, lo_in);
            } else {
                let cpa = &self.cells[ka];
                total += cpa.moment_antiderivative(p, self.nodes[ka + 1])
                    - cpa.moment_antiderivative(p, lo_in);
                total += self.prefix[p][kb] - self.prefix[p][ka + 1];
                let cpb = &self.cells[kb];
                total += cpb.moment_antiderivative(p, hi_in)
                    - cpb.moment_antiderivative(p, self.nodes[kb]);
            }
        }
        total
    }
}

/// Volume of the unit ball in dimension `d` (d = 0 gives 1).
pub fn unit_ball_volume(d: usize) -> f64 {
    let d = d as f64;
    std::f64::consts::PI.powf(d / 2.0) / statrs::function::gamma::gamma(d / 2.0 + 1.0)
}

/// Binomial coefficient for the slice-expansion (small arguments only).
fn binomial(n: usize, k: usize) -> f64 {
    let mut r = 1.0;
    for i in 0..k {
        r = r * (n - i) as f64 / (i + 1) as f64;
    }
    r
}

/// ∫_{B(x, r)} v(u_axis) du over the n-ball, for one separable axis factor:
/// the axis integral of `v(u) · vol_{n-1}(slice at u)`.
///
/// Odd `n` expands the slice volume `(r² - s²)^{(n-1)/2}` into moments of the
/// axis profile; even `n` uses a fixed 32-point Gauss-Legendre rule in the
/// angle variable.
pub fn ball_axis_integral(profile: &AxisProfile, n: usize, x: f64, r: f64) -> f64 {
    let c = unit_ball_volume(n - 1);
    if n % 2 == 1 {
        let k = (n - 1) / 2; // slice volume is c (r² - s²)^k, s = u - x
        // expand (r² - (u-x)²)^k = Σ_j C(k,j) r^{2(k-j)} (-1)^j (u-x)^{2j}
        // and (u-x)^{2j} into moments of u via the binomial theorem.
        let mut total = 0.0;
        for j in 0..=k {
            let coef = binomial(k, j) * r.powi(2 * (k - j) as i32) * (-1.0f64).powi(j as i32);
            // (u-x)^{2j} = Σ_i C(2j,i) u^i (-x)^{2j-i}
            for i in 0..=2 * j {
                let w = binomial(2 * j, i) * (-x).powi((2 * j - i) as i32);
                total += coef * w * profile.moment(i, x - r, x + r);
            }
        }
        c * total
    } else {
        // substitute u = x + r sin θ: slice = c (r cos θ)^{n-1}, du = r cos θ dθ
        let mut total = 0.0;
        for (node, weight) in gauss_legendre_32() {
            let theta = node * std::f64::consts::FRAC_PI_2;
            let u = x + r * theta.sin();
            let f = profile.value(u) * (r * theta.cos()).powi((n - 1) as i32) * r * theta.cos();
            total += weight * f * std::f64::consts::FRAC_PI_2;
        }
        c * total
    }
}

/// 32-point Gauss-Legendre nodes and weights on [-1, 1], computed by Newton
/// iteration on the Legendre recurrence (deterministic, no tables).
pub fn gauss_legendre_32() -> Vec<(f64, f64)> {
    gauss_legendre(32)
}

pub fn gauss_legendre(n: usize) -> Vec<(f64, f64)> {
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        // Chebyshev initial guess
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        for _ in 0..100 {
            let (p, dp) = legendre_with_derivative(n, x);
            let dx = p / dp;
            x -= dx;
            if dx.abs() < 1e-15 {
                break;
            }
        }
        let (_, dp) = legendre_with_derivative(n, x);
        out.push((x, 2.0 / ((1.0 - x * x) * dp * dp)));
    }
    out.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
    out
}

fn legendre_with_derivative(n: usize, x: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = x;
    for k in 2..=n {
        let k = k as f64;
        let p2 = ((2.0 * k - 1.0) * x * p1 - (k - 1.0) * p0) / k;
        p0 = p1;
        p1 = p2;
    }
    let dp = n as f64 * (x * p1 - p0) / (x * x - 1.0);
    (p1, dp)
}

/// Log-spaced trapezoid grid for ∫ F(t) dt/t over `[t_lo, t_hi]`.
///
/// Returns `(t_k, w_k)` with Σ w_k F(t_k) ≈ ∫ F dt/t; the rule is the
/// trapezoid in `u = ln t`, spectrally accurate for integrands analytic in a
/// strip around the real `u`-axis.
pub fn log_trapezoid(t_lo: f64, t_hi: f64, points: usize) -> Vec<(f64, f64)> {
    assert!(points >= 2 && t_hi > t_lo && t_lo > 0.0);
    let u_lo = t_lo.ln();
    let du = (t_hi.ln() - u_lo) / (points - 1) as f64;
    (0..points)
        .map(|k| {
            let w = if k == 0 || k == points - 1 { 0.5 * du } else { du };
            ((u_lo + k as f64 * du).exp(), w)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn profile_of(f: impl Fn(f64) -> f64, lo: f64, hi: f64, m: usize) -> AxisProfile {
        let nodes: Vec<f64> = (0..m)
            .map(|k| lo + (hi - lo) * k as f64 / (m - 1) as f64)
            .collect();
        let values: Vec<f64> = nodes.iter().map(|&u| f(u)).collect();
        AxisProfile::new(nodes, &values)
    }

    #[test]
    fn quadratic_moments_are_exact() {
        let p = profile_of(|u| u * u, -4.0, 4.0, 33);
        // ∫_{-1}^{2} u^2 du = 3, ∫ u·u^2 = (16-1)/4, ∫ u^2·u^2 = (32+1)/5
        assert!((p.moment(0, -1.0, 2.0) - 3.0).abs() < 1e-12);
        assert!((p.moment(1, -1.0, 2.0) - 15.0 / 4.0).abs() < 1e-12);
        assert!((p.moment(2, -1.0, 2.0) - 33.0 / 5.0).abs() < 1e-12);
    }

    #[test]
    fn smooth_moment_error_is_high_order() {
        // ∫_{-1}^{1} u sin u du = 2 (sin 1 - cos 1)
        let exact = 2.0 * (1.0f64.sin() - 1.0f64.cos());
        let coarse = profile_of(f64::sin, -2.0, 2.0, 33).moment(1, -1.0, 1.0);
        let fine = profile_of(f64::sin, -2.0, 2.0, 65).moment(1, -1.0, 1.0);
        assert!((fine - exact).abs() < (coarse - exact).abs().max(1e-13));
        assert!((fine - exact).abs() < 1e-6, "{:e}", (fine - exact).abs());
    }

    #[test]
    fn ball_integral_constant_recovers_volume() {
        for n in [1usize, 2, 3] {
            let p = profile_of(|_| 1.0, -4.0, 4.0, 65);
            let got = ball_axis_integral(&p, n, 0.3, 1.1);
            let exact = unit_ball_volume(n) * 1.1f64.powi(n as i32);
            assert!((got - exact).abs() / exact < 1e-9, "n = {n}: {got} vs {exact}");
        }
    }

    #[test]
    fn ball_integral_of_x_squared_axis() {
        // n = 3: ∫_{B(0,r)} u² du over one axis = 4π r^5 / 15
        let p = profile_of(|u| u * u, -4.0, 4.0, 97);
        let r = 0.8;
        let got = ball_axis_integral(&p, 3, 0.0, r);
        let exact = 4.0 * std::f64::consts::PI * r.powi(5) / 15.0;
        assert!((got - exact).abs() / exact < 1e-12);
    }

    #[test]
    fn gauss_legendre_integrates_polynomials() {
        let rule = gauss_legendre(8);
        let got: f64 = rule.iter().map(|(x, w)| w * x.powi(10)).sum();
        assert!((got - 2.0 / 11.0).abs() < 1e-12);
    }

    #[test]
    fn log_trapezoid_exponential_bump() {
        // ∫_0^∞ (tλ e^{-tλ})² dt/t = 1/4 for any λ
        let lambda = 37.0;
        let grid = log_trapezoid(1e-6 / lambda, 40.0 / lambda, 90);
        let got: f64 = grid
            .iter()
            .map(|(t, w)| {
                let u = t * lambda;
                w * (u * (-u).exp()).powi(2)
            })
            .sum();
        assert!((got - 0.25).abs() < 1e-9, "{got}");
    }
}
