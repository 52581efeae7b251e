//! Exponent bookkeeping and numerical checks of the functional inequalities
//! used by the regularity argument.
//!
//! Inequalities with explicit constants report the worst ratio `LHS / RHS`.
//! Inequalities whose constants only exist abstractly report a fitted
//! constant over the supplied densities instead.

use std::collections::BTreeMap;
use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::collision::bregman_dissipation_with;
use crate::error::{invalid, Error, Result};
use crate::grid::{japanese_bracket, mass_momentum_energy, Density, VelocityGrid};
use crate::kernel::{cancellation_constants, CancellationDensity, KernelMatrix, KernelParams, PlaneQuadrature};
use crate::quad;
use crate::truncation::{Profile, TruncationFunctional};

/// Default interpolation slack `ε`.
pub const DEFAULT_EPS_INTERP: f64 = 0.01;

/// Ratio tolerance for inequalities with explicit constants.
pub const EXPLICIT_TOLERANCE: f64 = 1e-6;

/// Every exponent derived from `(d, γ, s, p, ε)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExponentSet {
    pub dim: usize,
    pub gamma: f64,
    pub s: f64,
    pub p: f64,
    pub eps_interp: f64,
    /// `1/p₀ = 1 − 2s/d`.
    pub p0: f64,
    /// `k₀ = γ + 2s − 2s/d`.
    pub k0: f64,
    /// `(p+1)/q₁ = 2 + γ/d`.
    pub q1: f64,
    pub beta: f64,
    /// `β` with `p` replaced by `p − ε` in the Hölder split.
    pub beta_eps: f64,
    pub theta_p: f64,
    pub alpha_p: f64,
    pub alpha_p_bar: f64,
    pub iota: f64,
    pub beta_tilde: f64,
    pub beta_bar: f64,
    /// `1/r_p = (1/p)(2 + γ/d − 1/p)`.
    pub r_p: f64,
    pub p_lower: f64,
    pub p_upper: f64,
}

/// Admissible open interval `(d/(d+γ+2s), d/(d+γ))` for `p`.
pub fn admissible_interval(dim: usize, gamma: f64, s: f64) -> (f64, f64) {
    let d = dim as f64;
    (d / (d + gamma + 2.0 * s), d / (d + gamma))
}

/// `|γ + 2s| / (2s)`, the ceiling on the dimension of singular times.
pub fn target_dimension(gamma: f64, s: f64) -> f64 {
    (gamma + 2.0 * s).abs() / (2.0 * s)
}

/// Computes the exponent table, rejecting parameters outside the regime.
pub fn exponents(dim: usize, gamma: f64, s: f64, p: f64, eps_interp: f64) -> Result<ExponentSet> {
    if dim != 2 && dim != 3 {
        return Err(invalid("d", format!("dimension must be 2 or 3, got {dim}")));
    }
    let d = dim as f64;
    if !(s > 0.0 && s < 1.0) {
        return Err(invalid("s", format!("need 0 < s < 1, got {s}")));
    }
    if !(gamma > -d && gamma < 0.0) {
        return Err(invalid("gamma", format!("need −d < γ < 0, got {gamma}")));
    }
    let (p_lower, p_upper) = admissible_interval(dim, gamma, s);
    if !(p > p_lower.max(1.0) && p < p_upper) || !p.is_finite() {
        return Err(Error::InadmissibleExponent {
            p,
            lower: p_lower,
            upper: p_upper,
        });
    }
    if !(eps_interp > 0.0 && eps_interp < p - 1.0) {
        return Err(invalid("eps_interp", format!("need 0 < ε < p − 1, got {eps_interp}")));
    }

    let p0 = 1.0 / (1.0 - 2.0 * s / d);
    let k0 = gamma + 2.0 * s - 2.0 * s / d;
    let q1 = (p + 1.0) / (2.0 + gamma / d);
    let beta = 1.0 + 2.0 * s / (p * (d + gamma + 2.0 * s) - d);
    let p_eps = p - eps_interp;
    let alpha_eps = holder_weight(1.0 / q1, 1.0 / p_eps, 1.0 / (p * p0));
    let beta_eps = 1.0 + 1.0 / (alpha_eps * (p + 1.0) - 1.0);
    let theta_p = (-gamma * p / d) / ((2.0 * s / d + 1.0) * p - 1.0);
    let lead = 1.0 - theta_p / (1.0 - eps_interp) + 2.0 * s / d * theta_p;
    let alpha_p = lead + 1.0 + gamma / d;
    let alpha_p_bar = alpha_p - 1.0 / p;
    let iota = (p - 1.0) * (1.0 - theta_p / (1.0 - eps_interp)) / (1.0 - theta_p);
    let r_p = p / (2.0 + gamma / d - 1.0 / p);

    let es = ExponentSet {
        dim,
        gamma,
        s,
        p,
        eps_interp,
        p0,
        k0,
        q1,
        beta,
        beta_eps,
        theta_p,
        alpha_p,
        alpha_p_bar,
        iota,
        beta_tilde: alpha_p / (1.0 - theta_p),
        beta_bar: alpha_p_bar / (1.0 - theta_p),
        r_p,
        p_lower,
        p_upper,
    };
    es.check_invariants()?;
    Ok(es)
}

/// The `α` with `target = α·a + (1 − α)·b` for reciprocal exponents.
fn holder_weight(target: f64, a: f64, b: f64) -> f64 {
    (target - b) / (a - b)
}

impl ExponentSet {
    fn check_invariants(&self) -> Result<()> {
        let broken = |what: &str| Err(invalid("p", format!("exponent invariant violated: {what}")));
        if !(self.p < self.q1 && self.q1 < self.p * self.p0) {
            return broken("p < q₁ < p·p₀");
        }
        if !(self.theta_p > 0.0 && self.theta_p < 1.0) {
            return broken("0 < θ_p < 1");
        }
        if !(self.beta > 1.0 && self.beta_eps > 1.0) {
            return broken("β > 1");
        }
        if !(self.k0 < 0.0) {
            return broken("k₀ < 0");
        }
        if !(self.iota > 0.0) {
            return broken("ι > 0 (ε too large for θ_p)");
        }
        let alpha_eps = self.weighted_split().alpha;
        if !(alpha_eps > 0.0 && alpha_eps < 1.0 && alpha_eps * (self.p + 1.0) > 1.0) {
            return broken("Hölder weight with p − ε");
        }
        Ok(())
    }

    /// `α₀ = β − 1 = 2s/(p(d+γ+2s) − d)`.
    pub fn alpha0(&self) -> f64 {
        self.beta - 1.0
    }

    /// `1 − 1/(α₀ p)`, the covering exponent at this `p`.
    pub fn covering_exponent(&self) -> f64 {
        1.0 - 1.0 / (self.alpha0() * self.p)
    }

    /// `1 − 1/(α p)` with `α = β_ε − 1`.
    pub fn covering_exponent_eps(&self) -> f64 {
        1.0 - 1.0 / ((self.beta_eps - 1.0) * self.p)
    }

    /// Hölder weight and Young exponents of the unweighted interpolation.
    fn plain_split(&self) -> YoungSplit {
        let alpha = holder_weight(1.0 / self.q1, 1.0 / self.p, 1.0 / (self.p * self.p0));
        YoungSplit::new(alpha, self.p)
    }

    fn weighted_split(&self) -> YoungSplit {
        let p_eps = self.p - self.eps_interp;
        let alpha = holder_weight(1.0 / self.q1, 1.0 / p_eps, 1.0 / (self.p * self.p0));
        YoungSplit::new(alpha, self.p)
    }
}

#[derive(Debug, Clone, Copy)]
struct YoungSplit {
    alpha: f64,
    big_p: f64,
    big_q: f64,
}

impl YoungSplit {
    fn new(alpha: f64, p: f64) -> Self {
        let big_p = p / ((1.0 - alpha) * (p + 1.0));
        Self {
            alpha,
            big_p,
            big_q: big_p / (big_p - 1.0),
        }
    }

    /// Constant in front of the low-integrability term once the other
    /// term carries the coefficient `eps`.
    fn constant(&self, eps: f64) -> f64 {
        let scale = (self.big_p * eps).powf(1.0 / self.big_p);
        scale.powf(-self.big_q) / self.big_q
    }
}

/// How the constant of a report is obtained.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ConstantKind {
    /// Known constant; the report carries `max LHS/RHS`.
    Explicit,
    /// Lower-bound constant fitted as `min LHS/shape`.
    LowerFit,
    /// Upper-bound constant fitted as `max LHS/shape`.
    UpperFit,
}

/// Outcome of one inequality check over one or more samples.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InequalityReport {
    pub inequality_id: String,
    pub kind: ConstantKind,
    pub samples: usize,
    /// Samples whose shape was positive, so that a constant could be fitted.
    pub informative: usize,
    pub worst_ratio: Option<f64>,
    pub fitted_constant: Option<f64>,
    pub tolerance: f64,
    pub pass: bool,
    pub params: ExponentSet,
    pub kappa: Option<f64>,
    pub extras: BTreeMap<String, f64>,
}

impl InequalityReport {
    fn explicit(id: &str, es: &ExponentSet, ratio: f64) -> Self {
        Self {
            inequality_id: id.to_string(),
            kind: ConstantKind::Explicit,
            samples: 1,
            informative: 1,
            worst_ratio: Some(ratio),
            fitted_constant: None,
            tolerance: EXPLICIT_TOLERANCE,
            pass: ratio <= 1.0 + EXPLICIT_TOLERANCE,
            params: *es,
            kappa: None,
            extras: BTreeMap::new(),
        }
    }

    fn fitted(id: &str, kind: ConstantKind, es: &ExponentSet, kappa: f64, value: Option<f64>) -> Self {
        let mut report = Self {
            inequality_id: id.to_string(),
            kind,
            samples: 1,
            informative: usize::from(value.is_some()),
            worst_ratio: None,
            fitted_constant: value,
            tolerance: 0.0,
            pass: false,
            params: *es,
            kappa: Some(kappa),
            extras: BTreeMap::new(),
        };
        report.pass = report.fitted_pass();
        report
    }

    fn fitted_pass(&self) -> bool {
        match (self.kind, self.fitted_constant) {
            (ConstantKind::LowerFit, Some(c)) => c > 0.0 && c.is_finite(),
            (ConstantKind::UpperFit, Some(c)) => c >= 0.0 && c.is_finite(),
            _ => false,
        }
    }

    /// Whether the fitted constant is strictly positive.
    pub fn has_positive_constant(&self) -> bool {
        self.fitted_constant.is_some_and(|c| c > 0.0 && c.is_finite())
    }

    /// Merges per-sample reports of the same inequality. Extras keep the
    /// worst value in the direction of the report's constant.
    pub fn combine(reports: &[InequalityReport]) -> Option<InequalityReport> {
        let (first, rest) = reports.split_first()?;
        let mut out = first.clone();
        for r in rest {
            out.samples += r.samples;
            out.informative += r.informative;
            out.worst_ratio = match (out.worst_ratio, r.worst_ratio) {
                (Some(a), Some(b)) => Some(a.max(b)),
                (a, b) => a.or(b),
            };
            out.fitted_constant = match (out.fitted_constant, r.fitted_constant) {
                (Some(a), Some(b)) if out.kind == ConstantKind::LowerFit => Some(a.min(b)),
                (Some(a), Some(b)) => Some(a.max(b)),
                (a, b) => a.or(b),
            };
            for (key, &value) in &r.extras {
                out.extras
                    .entry(key.clone())
                    .and_modify(|v| {
                        *v = if out.kind == ConstantKind::LowerFit {
                            v.min(value)
                        } else {
                            v.max(value)
                        }
                    })
                    .or_insert(value);
            }
        }
        out.pass = match out.kind {
            ConstantKind::Explicit => reports.iter().all(|r| r.pass),
            _ => out.fitted_pass(),
        };
        Some(out)
    }
}

fn ratio(lhs: f64, rhs: f64) -> f64 {
    if rhs > 0.0 {
        lhs / rhs
    } else if lhs <= 0.0 {
        0.0
    } else {
        f64::INFINITY
    }
}

/// Nodewise `⟨v⟩` and cell volume, reused by all weighted integrals.
struct Weights {
    brackets: Vec<f64>,
    cell: f64,
}

impl Weights {
    fn new(grid: &VelocityGrid) -> Self {
        let d = grid.dim();
        Self {
            brackets: (0..grid.len()).map(|i| japanese_bracket(&grid.node(i)[..d])).collect(),
            cell: grid.cell_volume(),
        }
    }

    /// `∫ f^e ⟨v⟩^w`.
    fn integral(&self, f: &[f64], e: f64, w: f64) -> f64 {
        f.iter()
            .zip(&self.brackets)
            .filter(|(&v, _)| v > 0.0)
            .map(|(&v, &b)| v.powf(e) * if w == 0.0 { 1.0 } else { b.powf(w) })
            .sum::<f64>()
            * self.cell
    }

    /// `‖f‖_{L^q_k} = (∫ f^q ⟨v⟩^{kq})^{1/q}`, also for `q < 1`.
    fn norm(&self, f: &[f64], q: f64, k: f64) -> f64 {
        self.integral(f, q, k * q).powf(1.0 / q)
    }
}

/// `c₀ = ∫_{[-1,1]^d} |t|^γ ∏(1 − |t_a|) dt`, the self-interaction of a
/// cell for the kernel `|·|^γ` in units of `h^γ`.
pub fn cell_self_average(dim: usize, gamma: f64) -> Result<f64> {
    let d = dim as f64;
    if !(gamma > -d) {
        return Err(invalid(
            "gamma",
            format!("|t|^γ is not integrable for γ = {gamma} ≤ −d"),
        ));
    }
    // Radial integral of ρ^{γ+d−1} ∏(1 − ρ u_a) from 0 to 1/max u_a.
    let radial = |u: &[f64]| {
        let reach = 1.0 / u.iter().cloned().fold(0.0, f64::max);
        let mut coeffs = vec![1.0];
        for &ua in u {
            let mut next = vec![0.0; coeffs.len() + 1];
            for (k, &c) in coeffs.iter().enumerate() {
                next[k] += c;
                next[k + 1] -= c * ua;
            }
            coeffs = next;
        }
        coeffs
            .iter()
            .enumerate()
            .map(|(k, &c)| {
                let e = gamma + d + k as f64;
                c * reach.powf(e) / e
            })
            .sum::<f64>()
    };
    let value = if dim == 2 {
        8.0 * quad::composite(0.0, 0.25 * PI, 0.05, 12, |phi| radial(&[phi.cos(), phi.sin()]))
    } else {
        48.0 * quad::composite(0.0, 0.25 * PI, 0.05, 12, |phi| {
            let top = (1.0 / phi.cos()).atan();
            quad::composite(0.0, top, 0.05, 12, |theta| {
                let st = theta.sin();
                radial(&[st * phi.cos(), st * phi.sin(), theta.cos()]) * st
            })
        })
    };
    Ok(value)
}

/// `∫ Λ(u₀ − a) Λ(u₁ − b) w(|u|) du` with the tent `Λ(t) = (1 − |t|)₊`.
fn hat_moment(w: &impl Fn(f64) -> f64, a: i64, b: i64) -> f64 {
    let tent = |t: f64| (1.0 - t.abs()).max(0.0);
    let (a, b) = (a as f64, b as f64);
    if a.abs().max(b.abs()) >= 2.0 {
        let rule = quad::legendre(16);
        let mut total = 0.0;
        for (x0, y0) in [(a - 1.0, b - 1.0), (a, b - 1.0), (a - 1.0, b), (a, b)] {
            for &(sx, wx) in rule {
                let x = x0 + 0.5 * (sx + 1.0);
                for &(sy, wy) in rule {
                    let y = y0 + 0.5 * (sy + 1.0);
                    total += 0.25 * wx * wy * tent(x - a) * tent(y - b) * w(x.hypot(y));
                }
            }
        }
        return total;
    }
    let reach = (a.abs().max(b.abs()) + 1.0) * 2f64.sqrt();
    let rule = quad::legendre(4);
    let panels = (reach / 0.004).ceil() as usize;
    let width = reach / panels as f64;
    let radial: Vec<(f64, f64)> = (0..panels)
        .flat_map(|k| {
            let mid = (k as f64 + 0.5) * width;
            rule.iter()
                .map(move |&(x, wx)| (mid + 0.5 * width * x, 0.5 * width * wx))
        })
        .map(|(rho, weight)| (rho, weight * rho * w(rho)))
        .collect();
    let angles = 2048;
    let mut total = 0.0;
    for k in 0..angles {
        let phi = 2.0 * PI * (k as f64 + 0.5) / angles as f64;
        let (c, s) = (phi.cos(), phi.sin());
        total += radial
            .iter()
            .map(|&(rho, weight)| weight * tent(rho * c - a) * tent(rho * s - b))
            .sum::<f64>();
    }
    total * 2.0 * PI / angles as f64
}

/// Discrete convolution `(f ∗ w)(v_i) = h^d ∑_j f_j w(v_i − v_j)` with a
/// radial kernel tabulated on lattice offsets.
#[derive(Debug, Clone)]
pub struct LatticeConvolution {
    grid: VelocityGrid,
    table: Vec<f64>,
    keys: Vec<usize>,
    centre: usize,
}

impl LatticeConvolution {
    /// `w(z) = |z|^γ`, with the cell average `c₀ h^γ` on the diagonal.
    pub fn power(grid: &VelocityGrid, gamma: f64) -> Result<Self> {
        let diagonal = cell_self_average(grid.dim(), gamma)? * grid.spacing().powf(gamma);
        Ok(Self::radial(grid, |r| r.powf(gamma), diagonal))
    }

    /// `w(z) = R_n(|z|)`, vanishing on the diagonal.
    pub fn cancellation(grid: &VelocityGrid, density: &CancellationDensity) -> Self {
        Self::radial(grid, |r| density.value(r), 0.0)
    }

    pub fn radial(grid: &VelocityGrid, profile: impl Fn(f64) -> f64, diagonal: f64) -> Self {
        let h = grid.spacing();
        Self::from_offsets(grid, |offset| {
            let r2: f64 = offset.iter().map(|&o| (o as f64 * h).powi(2)).sum();
            if r2 == 0.0 {
                diagonal
            } else {
                profile(r2.sqrt())
            }
        })
    }

    /// Weights that make `apply` the exact convolution of `w(|z|)` with the
    /// bilinear interpolant of the node values (d = 2). `w` may blow up like
    /// `1/|z|` at the origin.
    pub fn interpolated(grid: &VelocityGrid, profile: impl Fn(f64) -> f64 + Sync) -> Result<Self> {
        if grid.dim() != 2 {
            return Err(invalid(
                "d",
                "interpolated convolution weights are implemented for d = 2",
            ));
        }
        let n = grid.points_per_axis() as i64;
        let h = grid.spacing();
        let w = |u: f64| profile(h * u);
        let canonical: Vec<(i64, i64)> = (0..n).flat_map(|b| (0..=b).map(move |a| (a, b))).collect();
        let values: Vec<f64> = canonical.par_iter().map(|&(a, b)| hat_moment(&w, a, b)).collect();
        let lookup: BTreeMap<(i64, i64), f64> = canonical.into_iter().zip(values).collect();
        Ok(Self::from_offsets(grid, |offset| {
            let (x, y) = (offset[0].abs(), offset[1].abs());
            lookup[&(x.min(y), x.max(y))]
        }))
    }

    fn from_offsets(grid: &VelocityGrid, weight: impl Fn(&[i64]) -> f64) -> Self {
        let d = grid.dim();
        let n = grid.points_per_axis();
        let width = 2 * n - 1;
        let size = width.pow(d as u32);
        let mut offset = vec![0i64; d];
        let table = (0..size)
            .map(|key| {
                let mut rest = key;
                for o in offset.iter_mut() {
                    *o = (rest % width) as i64 - (n - 1) as i64;
                    rest /= width;
                }
                weight(&offset)
            })
            .collect();
        let keys = (0..grid.len())
            .map(|i| {
                let mi = grid.multi_index(i);
                (0..d).rev().fold(0, |acc, a| acc * width + mi[a])
            })
            .collect();
        let centre = (0..d).fold(0, |acc, _| acc * width + (n - 1));
        Self {
            grid: *grid,
            table,
            keys,
            centre,
        }
    }

    pub fn apply(&self, f: &[f64]) -> Vec<f64> {
        let cell = self.grid.cell_volume();
        let support: Vec<(usize, f64)> = self
            .keys
            .iter()
            .zip(f)
            .filter(|(_, &v)| v != 0.0)
            .map(|(&k, &v)| (k, v))
            .collect();
        self.keys
            .par_iter()
            .map(|&ki| {
                support
                    .iter()
                    .map(|&(kj, fj)| fj * self.table[ki + self.centre - kj])
                    .sum::<f64>()
                    * cell
            })
            .collect()
    }
}

/// Sharp-type bound on the Hardy–Littlewood–Sobolev constant for
/// `∫∫ g(x)|x−y|^{−λ}f(y) ≤ C ‖g‖_a ‖f‖_b` with `1/a + 1/b + λ/d = 2`.
pub fn hls_constant(dim: usize, lambda: f64, a: f64, b: f64) -> f64 {
    let n = dim as f64;
    let t = lambda / n;
    let ball = unit_ball_volume(dim);
    n / ((n - lambda) * a * b) * ball.powf(t) * ((t / (1.0 - 1.0 / a)).powf(t) + (t / (1.0 - 1.0 / b)).powf(t))
}

/// The weak-Lebesgue norm `‖|·|^γ‖_{L^{−d/γ,∞}} = ω_d^{−γ/d}`.
pub fn weak_norm_constant(dim: usize, gamma: f64) -> f64 {
    unit_ball_volume(dim).powf(-gamma / dim as f64)
}

fn unit_ball_volume(dim: usize) -> f64 {
    match dim {
        2 => PI,
        3 => 4.0 * PI / 3.0,
        _ => f64::NAN,
    }
}

/// Checks `∫ g (f ∗ |·|^γ) ≤ C ‖g‖_{q₁/p} ‖f‖_{q₁}` with the HLS bound.
/// The ratio against the weak-norm constant alone is kept in the extras.
pub fn verify_convolution(g: &Density, f: &Density, es: &ExponentSet) -> Result<InequalityReport> {
    let conv = LatticeConvolution::power(f.grid(), es.gamma)?;
    verify_convolution_with(&conv, g, f, es)
}

pub fn verify_convolution_with(
    conv: &LatticeConvolution,
    g: &Density,
    f: &Density,
    es: &ExponentSet,
) -> Result<InequalityReport> {
    same_grid(g, f)?;
    let w = Weights::new(f.grid());
    let field = conv.apply(f.values());
    let lhs = g.values().iter().zip(&field).map(|(a, b)| a * b).sum::<f64>() * w.cell;
    let (a, b) = (es.q1 / es.p, es.q1);
    let norms = w.norm(g.values(), a, 0.0) * w.norm(f.values(), b, 0.0);
    let sharp = hls_constant(es.dim, -es.gamma, a, b);
    let mut report = InequalityReport::explicit("convolution", es, ratio(lhs, sharp * norms));
    report.extras.insert("constant".into(), sharp);
    report.extras.insert(
        "weak_norm_ratio".into(),
        ratio(lhs, weak_norm_constant(es.dim, es.gamma) * norms),
    );
    Ok(report)
}

fn same_grid(a: &Density, b: &Density) -> Result<()> {
    if a.grid() != b.grid() {
        return Err(invalid("grid", "densities live on different grids"));
    }
    Ok(())
}

/// Checks the interpolation inequality, plain or weighted.
///
/// Plain: `‖f‖_{q₁}^{p+1} ≤ ε‖f^p‖_{p₀} + C_ε‖f‖_p^{pβ}`.
/// Weighted: `‖f‖_{q₁}^{p+1} ≤ ε‖f^p‖_{L^{p₀}_{k₀}} + C_ε(‖f‖_p^{pβ_ε} + ‖f‖_{L¹_{k_ε}}^{r_ε})`.
pub fn verify_interpolation(f: &Density, es: &ExponentSet, weighted: bool) -> InequalityReport {
    let w = Weights::new(f.grid());
    let v = f.values();
    let (p, eps) = (es.p, es.eps_interp);
    let lhs = w.norm(v, es.q1, 0.0).powf(p + 1.0);
    if !weighted {
        let split = es.plain_split();
        let constant = split.constant(eps);
        let rhs = eps * w.norm(v, p * es.p0, 0.0).powf(p) + constant * w.norm(v, p, 0.0).powf(p * es.beta);
        let mut report = InequalityReport::explicit("interpolation", es, ratio(lhs, rhs));
        report.extras.insert("constant".into(), constant);
        return report;
    }
    let split = es.weighted_split();
    let p_eps = p - eps;
    let k1 = -(1.0 - split.alpha) * es.k0 / (p * split.alpha);
    // 1/p_ε = a + (1 − a)/p splits L^{p_ε}_{k₁} between L¹_{k₁/a} and L^p.
    let a = holder_weight(1.0 / p_eps, 1.0, 1.0 / p);
    let k_eps = k1 / a;
    let r_eps = es.beta_eps * p;
    let constant = split.constant(eps) * a.max(1.0 - a);
    let rhs = eps * w.norm(v, p * es.p0, es.k0 / p).powf(p)
        + constant * (w.norm(v, p, 0.0).powf(r_eps) + w.norm(v, 1.0, k_eps).powf(r_eps));
    let mut report = InequalityReport::explicit("interpolation-weighted", es, ratio(lhs, rhs));
    report.extras.insert("constant".into(), constant);
    report.extras.insert("k_eps".into(), k_eps);
    report.extras.insert("r_eps".into(), r_eps);
    report
}

/// Parameters of one weighted Hölder check: `r` and `k_r` follow from
/// `1/r = α/p + (1−α)/q` and `k_r = α k_p + (1−α) k_q`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HolderTriple {
    pub p: f64,
    pub q: f64,
    pub alpha: f64,
    pub k_p: f64,
    pub k_q: f64,
}

impl HolderTriple {
    pub fn r(&self) -> f64 {
        1.0 / (self.alpha / self.p + (1.0 - self.alpha) / self.q)
    }

    pub fn k_r(&self) -> f64 {
        self.alpha * self.k_p + (1.0 - self.alpha) * self.k_q
    }
}

/// Random triples with `1 < p < q ≤ 6` and weights in `[-2, 2]`.
pub fn random_holder_triples(seed: u64, count: usize) -> Vec<HolderTriple> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| {
            let p = rng.gen_range(1.05..3.0);
            HolderTriple {
                p,
                q: rng.gen_range(p + 0.1..6.0),
                alpha: rng.gen_range(0.02..0.98),
                k_p: rng.gen_range(-2.0..2.0),
                k_q: rng.gen_range(-2.0..2.0),
            }
        })
        .collect()
}

/// Checks `‖f‖_{L^r_{k_r}} ≤ ‖f‖_{L^p_{k_p}}^α ‖f‖_{L^q_{k_q}}^{1−α}` on every triple.
pub fn verify_weighted_holder(f: &Density, es: &ExponentSet, triples: &[HolderTriple]) -> InequalityReport {
    let w = Weights::new(f.grid());
    let v = f.values();
    let worst = triples
        .iter()
        .map(|t| {
            let lhs = w.norm(v, t.r(), t.k_r());
            let rhs = w.norm(v, t.p, t.k_p).powf(t.alpha) * w.norm(v, t.q, t.k_q).powf(1.0 - t.alpha);
            ratio(lhs, rhs)
        })
        .fold(0.0, f64::max);
    let mut report = InequalityReport::explicit("holder-weights", es, worst);
    report.extras.insert("triples".into(), triples.len() as f64);
    report
}

/// Checks `‖F‖_{r_p}^p ≤ C⁰_ε ‖F‖_{L¹_{k_p}} ∫F^{p−1}⟨v⟩^{k_p} + ε‖F^p‖_{L^{p₀}_{k₀}}`.
pub fn verify_interpolation_again(big_f: &Density, es: &ExponentSet) -> InequalityReport {
    let w = Weights::new(big_f.grid());
    let v = big_f.values();
    let (p, eps) = (es.p, es.eps_interp);
    // 1/r_p = α (2/p) + (1 − α)/(p p₀), weight zero on the left.
    let alpha = holder_weight(1.0 / es.r_p, 2.0 / p, 1.0 / (p * es.p0));
    let k_half = -(1.0 - alpha) * es.k0 / (p * alpha);
    let k_p = 0.5 * k_half * p;
    let tau = (eps / (1.0 - alpha)).powf((1.0 - alpha) / alpha);
    let constant = alpha / tau;
    let lhs = w.norm(v, es.r_p, 0.0).powf(p);
    let rhs = constant * w.integral(v, 1.0, k_p) * w.integral(v, p - 1.0, k_p)
        + eps * w.norm(v, p * es.p0, es.k0 / p).powf(p);
    let mut report = InequalityReport::explicit("interpolation-again", es, ratio(lhs, rhs));
    report.extras.insert("constant".into(), constant);
    report.extras.insert("k_p".into(), k_p);
    report
}

fn power_parts(tf: &TruncationFunctional, es: &ExponentSet) -> Result<f64> {
    match tf.profile() {
        Profile::Power { p, kappa } if tf.shift() == 0.0 && (p - es.p).abs() <= 1e-12 * es.p => Ok(kappa),
        _ => Err(invalid(
            "tf",
            "need the unshifted power truncation with the exponent set's p",
        )),
    }
}

/// Settings for the dissipation lower bounds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LowerBoundSettings {
    /// Coefficient `C` of `∫(f∧κ)^p⟨v⟩^γ` subtracted in the first shape.
    pub first_lower_weight: f64,
    /// Threshold `κ₀` above which the second bound is claimed.
    pub kappa0: f64,
}

impl Default for LowerBoundSettings {
    fn default() -> Self {
        Self {
            first_lower_weight: 0.0,
            kappa0: 1.0,
        }
    }
}

/// Dissipation and the two lower-bound shapes for one density.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DissipationShapes {
    pub dissipation: f64,
    pub first: f64,
    pub second: f64,
}

pub fn dissipation_shapes(
    km: &KernelMatrix,
    f: &Density,
    tf: &TruncationFunctional,
    es: &ExponentSet,
    settings: &LowerBoundSettings,
) -> Result<DissipationShapes> {
    let kappa = power_parts(tf, es)?;
    let w = Weights::new(f.grid());
    let p = es.p;
    let d = es.dim as f64;
    let capped: Vec<f64> = f.values().iter().map(|&x| x.min(kappa)).collect();
    let excess: Vec<f64> = f.values().iter().map(|&x| (x - kappa).max(0.0)).collect();
    let first =
        w.norm(&capped, p * es.p0, es.k0 / p).powf(p) - settings.first_lower_weight * w.integral(&capped, p, es.gamma);
    let capped_norm = w.norm(&capped, p, 0.0);
    let tail = w.integral(&excess, 1.0, es.k0);
    let second = if tail > 0.0 && capped_norm > 0.0 {
        let e = 2.0 * es.s * p / d;
        kappa.powf(e) * capped_norm.powf(-e) * kappa.powf(p - 1.0) * tail
    } else {
        0.0
    };
    Ok(DissipationShapes {
        dissipation: bregman_dissipation_with(km, f, tf),
        first,
        second,
    })
}

/// Fitted constants `c₁ = D/N₁` and `c₂ = D/N₂` for one density.
pub fn dissipation_lower_bounds(
    f: &Density,
    kp: &KernelParams,
    tf: &TruncationFunctional,
    es: &ExponentSet,
    settings: &LowerBoundSettings,
) -> Result<[InequalityReport; 2]> {
    let km = KernelMatrix::compute(f, kp, &PlaneQuadrature::default())?;
    let shapes = dissipation_shapes(&km, f, tf, es, settings)?;
    Ok(lower_bound_reports(&shapes, tf, es, settings))
}

fn lower_bound_reports(
    shapes: &DissipationShapes,
    tf: &TruncationFunctional,
    es: &ExponentSet,
    settings: &LowerBoundSettings,
) -> [InequalityReport; 2] {
    let kappa = tf.kappa();
    let fit = |shape: f64| (shape > 0.0).then(|| shapes.dissipation / shape);
    let mut first = InequalityReport::fitted(
        "dissipation-first",
        ConstantKind::LowerFit,
        es,
        kappa,
        fit(shapes.first),
    );
    first
        .extras
        .insert("first_lower_weight".into(), settings.first_lower_weight);
    let mut second = InequalityReport::fitted(
        "dissipation-second",
        ConstantKind::LowerFit,
        es,
        kappa,
        fit(shapes.second),
    );
    second.extras.insert("kappa0".into(), settings.kappa0);
    second
        .extras
        .insert("above_kappa0".into(), if kappa >= settings.kappa0 { 1.0 } else { 0.0 });
    [first, second]
}

/// The pieces of the source-versus-dissipation estimate for one density.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KeyEstimateTerms {
    /// `c_c ∫Φ_κ(f)(f ∗ |·|^γ)`.
    pub source: f64,
    /// `∫Φ_κ(f)(f ∗ R_n)`.
    pub source_truncated: f64,
    pub dissipation: f64,
    /// `∫φ_κ(f)`.
    pub phi_integral: f64,
    pub kappa: f64,
}

impl KeyEstimateTerms {
    pub fn lhs(&self) -> f64 {
        self.source - self.dissipation
    }

    pub fn lhs_truncated(&self) -> f64 {
        self.source_truncated - self.dissipation
    }

    /// `1 + X + X^{β_ε} + κ^{−ι}X^{b}` with `X = ∫φ_κ` and `b` either `β̃` or `β̄`.
    pub fn shape(&self, es: &ExponentSet, bar_variant: bool) -> f64 {
        let x = self.phi_integral;
        let b = if bar_variant { es.beta_bar } else { es.beta_tilde };
        1.0 + x + x.powf(es.beta_eps) + self.kappa_term(es, b)
    }

    fn kappa_term(&self, es: &ExponentSet, b: f64) -> f64 {
        self.kappa.powf(-es.iota) * self.phi_integral.powf(b)
    }

    /// Share of the `κ^{−ι}` term in the shape.
    pub fn kappa_share(&self, es: &ExponentSet) -> f64 {
        self.kappa_term(es, es.beta_tilde) / self.shape(es, false)
    }
}

/// Shared precomputation for [`key_estimate_terms`].
pub struct KeyEstimateContext {
    pub c_c: f64,
    pub power: LatticeConvolution,
    pub truncated: LatticeConvolution,
}

impl KeyEstimateContext {
    pub fn new(grid: &VelocityGrid, kp: &KernelParams, angular_nodes: usize) -> Result<Self> {
        let density = CancellationDensity::new(kp, angular_nodes)?;
        Ok(Self {
            c_c: cancellation_constants(kp)?.c_c,
            power: LatticeConvolution::power(grid, kp.gamma)?,
            truncated: LatticeConvolution::cancellation(grid, &density),
        })
    }
}

pub fn key_estimate_terms(
    ctx: &KeyEstimateContext,
    km: &KernelMatrix,
    f: &Density,
    tf: &TruncationFunctional,
    es: &ExponentSet,
) -> Result<KeyEstimateTerms> {
    let kappa = power_parts(tf, es)?;
    let cell = f.grid().cell_volume();
    let companion: Vec<f64> = f.values().iter().map(|&x| tf.phi_big(x)).collect();
    let pair = |field: Vec<f64>| companion.iter().zip(&field).map(|(a, b)| a * b).sum::<f64>() * cell;
    Ok(KeyEstimateTerms {
        source: ctx.c_c * pair(ctx.power.apply(f.values())),
        source_truncated: pair(ctx.truncated.apply(f.values())),
        dissipation: bregman_dissipation_with(km, f, tf),
        phi_integral: tf.integral(f),
        kappa,
    })
}

/// Smallest admissible `C₃` for one density, in both exponent variants and
/// with the truncated cancellation density.
pub fn key_estimate(
    f: &Density,
    kp: &KernelParams,
    tf: &TruncationFunctional,
    es: &ExponentSet,
) -> Result<InequalityReport> {
    let ctx = KeyEstimateContext::new(f.grid(), kp, 64)?;
    let km = KernelMatrix::compute(f, kp, &PlaneQuadrature::default())?;
    let terms = key_estimate_terms(&ctx, &km, f, tf, es)?;
    Ok(key_estimate_report(&terms, es))
}

pub fn key_estimate_report(terms: &KeyEstimateTerms, es: &ExponentSet) -> InequalityReport {
    let fit = |lhs: f64, bar: bool| lhs.max(0.0) / terms.shape(es, bar);
    let mut report = InequalityReport::fitted(
        "key-estimate",
        ConstantKind::UpperFit,
        es,
        terms.kappa,
        Some(fit(terms.lhs(), false)),
    );
    report
        .extras
        .insert("fitted_constant_bar".into(), fit(terms.lhs(), true));
    report
        .extras
        .insert("fitted_constant_truncated".into(), fit(terms.lhs_truncated(), false));
    report.extras.insert("lhs".into(), terms.lhs());
    report.extras.insert("kappa_share".into(), terms.kappa_share(es));
    report
}

/// One labelled density of the verification ensemble.
#[derive(Debug, Clone)]
pub struct EnsembleMember {
    pub label: String,
    pub density: Density,
}

/// Mass window and energy ceiling of the standard ensemble.
pub const ENSEMBLE_MASS: (f64, f64) = (0.5, 2.0);
pub const ENSEMBLE_ENERGY: f64 = 4.0;

/// Twenty densities: five each of Maxwellians, shifted bimodals, spiked
/// profiles and uniform balls, scaled to mass in `[0.5, 2]` and energy ≤ 4.
pub fn standard_ensemble(grid: &VelocityGrid, seed: u64) -> Result<Vec<EnsembleMember>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let d = grid.dim();
    let mut members = Vec::with_capacity(20);
    let gauss = |v: &[f64], c: &[f64], var: f64| {
        let r2: f64 = v.iter().zip(c).map(|(a, b)| (a - b).powi(2)).sum();
        (-0.5 * r2 / var).exp()
    };
    for family in ["maxwellian", "bimodal", "spiked", "ball"] {
        for k in 0..5 {
            let centre: Vec<f64> = (0..d).map(|_| rng.gen_range(-0.4..0.4)).collect();
            let direction = random_unit(&mut rng, d);
            let mut spikes: Vec<(usize, f64)> = Vec::new();
            let density = match family {
                "maxwellian" => {
                    let var = rng.gen_range(0.3..0.9);
                    Density::from_fn(*grid, |v| gauss(v, &centre, var))?
                }
                "bimodal" => {
                    let sep = rng.gen_range(0.6..1.3);
                    let var = rng.gen_range(0.15..0.45);
                    let weight = rng.gen_range(0.3..0.7);
                    let a: Vec<f64> = direction.iter().map(|e| sep * e).collect();
                    let b: Vec<f64> = direction.iter().map(|e| -sep * e).collect();
                    Density::from_fn(*grid, |v| {
                        weight * gauss(v, &a, var) + (1.0 - weight) * gauss(v, &b, var)
                    })?
                }
                "spiked" => {
                    let var = rng.gen_range(0.3..0.6);
                    let count = rng.gen_range(1..=2);
                    for _ in 0..count {
                        let at: Vec<f64> = (0..d).map(|_| rng.gen_range(-0.8..0.8)).collect();
                        spikes.push((grid.nearest_node(&at), rng.gen_range(2.5..6.0)));
                    }
                    Density::from_fn(*grid, |v| gauss(v, &centre, var))?
                }
                _ => {
                    let radius = rng.gen_range(0.7..1.5);
                    Density::from_fn(*grid, |v| {
                        let r2: f64 = v.iter().zip(&centre).map(|(a, b)| (a - b).powi(2)).sum();
                        if r2 <= radius * radius {
                            1.0
                        } else {
                            0.0
                        }
                    })?
                }
            };
            let hydro = mass_momentum_energy(&density);
            let per_mass = hydro.energy / hydro.mass;
            let top = ENSEMBLE_MASS.1.min(0.99 * ENSEMBLE_ENERGY / per_mass);
            if top <= ENSEMBLE_MASS.0 {
                return Err(invalid("grid", "ensemble member cannot meet the energy ceiling"));
            }
            let target = rng.gen_range(ENSEMBLE_MASS.0..top);
            let density = if spikes.is_empty() {
                density.scaled(target / hydro.mass)?
            } else {
                with_spikes(grid, &density, target, &mut spikes)?
            };
            members.push(EnsembleMember {
                label: format!("{family}-{k}"),
                density,
            });
        }
    }
    Ok(members)
}

/// Node-centred spikes of width below one cell carrying at most 60% of
/// `mass`; the background takes the rest. Keeps only as many spikes as the
/// mass budget allows.
fn with_spikes(
    grid: &VelocityGrid,
    background: &Density,
    mass: f64,
    spikes: &mut Vec<(usize, f64)>,
) -> Result<Density> {
    let d = grid.dim();
    let width2 = 0.15 * grid.spacing().powi(2);
    let shape = |centre: usize| {
        let c = grid.node(centre);
        Density::from_fn(*grid, move |v| {
            let r2: f64 = v.iter().zip(&c[..d]).map(|(a, b)| (a - b).powi(2)).sum();
            (-0.5 * r2 / width2).exp()
        })
    };
    let unit_mass = crate::grid::mass(&shape(spikes[0].0)?);
    let room = (0.6 * mass / (2.0 * unit_mass)).floor().max(1.0) as usize;
    spikes.truncate(room);
    let cap = 0.6 * mass / (spikes.len() as f64 * unit_mass);
    let mut values = background.scaled(1.0 / crate::grid::mass(background))?.into_values();
    let mut spike_mass = 0.0;
    let mut spike_values = vec![0.0; values.len()];
    for (centre, peak) in spikes.iter_mut() {
        *peak = peak.min(cap);
        let s = shape(*centre)?;
        spike_mass += *peak * crate::grid::mass(&s);
        for (acc, v) in spike_values.iter_mut().zip(s.values()) {
            *acc += *peak * v;
        }
    }
    for (v, s) in values.iter_mut().zip(&spike_values) {
        *v = *v * (mass - spike_mass) + s;
    }
    Density::new(*grid, values)
}

fn random_unit(rng: &mut ChaCha8Rng, d: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if n > 0.1 && n <= 1.0 {
            return v.into_iter().map(|x| x / n).collect();
        }
    }
}

/// Everything needed to run the full inequality suite.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SuiteConfig {
    pub kernel: KernelParams,
    pub half_width: f64,
    pub points: usize,
    pub p: f64,
    pub eps_interp: f64,
    pub kappa: f64,
    pub lower_bounds: LowerBoundSettings,
    pub seed: u64,
    pub holder_triples: usize,
    pub angular_nodes: usize,
}

impl SuiteConfig {
    pub fn new(kernel: KernelParams, p: f64) -> Self {
        Self {
            kernel,
            half_width: 5.0,
            points: 24,
            p,
            eps_interp: DEFAULT_EPS_INTERP,
            kappa: 1.0,
            lower_bounds: LowerBoundSettings::default(),
            seed: 2024,
            holder_triples: 50,
            angular_nodes: 64,
        }
    }
}

/// Inequality identifiers in report order.
pub const SUITE_IDS: [&str; 8] = [
    "convolution",
    "interpolation",
    "holder-weights",
    "interpolation-weighted",
    "interpolation-again",
    "dissipation-first",
    "dissipation-second",
    "key-estimate",
];

/// Runs every check over the standard ensemble and returns one combined
/// report per inequality, in the order of [`SUITE_IDS`].
pub fn verify_standard_ensemble(cfg: &SuiteConfig) -> Result<Vec<InequalityReport>> {
    let kp = cfg.kernel;
    let es = exponents(kp.dim, kp.gamma, kp.s, cfg.p, cfg.eps_interp)?;
    let grid = VelocityGrid::new(kp.dim, cfg.half_width, cfg.points)?;
    let tf = TruncationFunctional::power(cfg.p, cfg.kappa)?;
    let members = standard_ensemble(&grid, cfg.seed)?;
    let triples = random_holder_triples(cfg.seed ^ 0x5eed, cfg.holder_triples);
    let ctx = KeyEstimateContext::new(&grid, &kp, cfg.angular_nodes)?;

    let mut per_id: Vec<Vec<InequalityReport>> = vec![Vec::new(); SUITE_IDS.len()];
    for (k, member) in members.iter().enumerate() {
        let f = &member.density;
        let f_p = Density::new(grid, f.values().iter().map(|x| x.powf(cfg.p)).collect())?;
        let partner = &members[(k + 1) % members.len()].density;
        per_id[0].push(verify_convolution_with(&ctx.power, &f_p, f, &es)?);
        per_id[0].push(verify_convolution_with(&ctx.power, partner, f, &es)?);
        per_id[1].push(verify_interpolation(f, &es, false));
        per_id[2].push(verify_weighted_holder(f, &es, &triples));
        per_id[3].push(verify_interpolation(f, &es, true));
        per_id[4].push(verify_interpolation_again(f, &es));

        let km = KernelMatrix::compute(f, &kp, &PlaneQuadrature::default())?;
        let shapes = dissipation_shapes(&km, f, &tf, &es, &cfg.lower_bounds)?;
        let [first, second] = lower_bound_reports(&shapes, &tf, &es, &cfg.lower_bounds);
        per_id[5].push(first);
        per_id[6].push(second);
        let terms = key_estimate_terms(&ctx, &km, f, &tf, &es)?;
        per_id[7].push(key_estimate_report(&terms, &es));
    }
    Ok(per_id
        .iter()
        .filter_map(|reports| InequalityReport::combine(reports))
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use rand::Rng;

    fn reference() -> ExponentSet {
        exponents(2, -1.2, 0.45, 1.5, DEFAULT_EPS_INTERP).unwrap()
    }

    fn maxwellian(grid: VelocityGrid, lambda: f64) -> Density {
        Density::from_fn(grid, |v| lambda * (-v.iter().map(|x| x * x).sum::<f64>()).exp()).unwrap()
    }

    #[test]
    fn exponent_table_matches_hand_substitution() {
        let es = reference();
        assert_relative_eq!(es.p0, 20.0 / 11.0, max_relative = 1e-12);
        assert_relative_eq!(es.k0, -0.75, epsilon = 1e-12);
        assert_relative_eq!(es.beta, 1.0 + 0.9 / 0.55, max_relative = 1e-12);
        assert_relative_eq!(es.theta_p, 0.9 / 1.175, max_relative = 1e-12);
        assert_relative_eq!(es.q1, 2.5 / 1.4, max_relative = 1e-12);
        assert_relative_eq!(es.r_p, 1.5 / (1.4 - 1.0 / 1.5), max_relative = 1e-12);
        assert!(es.beta_eps > es.beta);
    }

    #[test]
    fn admissible_interval_and_rejection() {
        let (lo, hi) = admissible_interval(2, -1.2, 0.45);
        assert_relative_eq!(lo, 2.0 / 1.7, max_relative = 1e-14);
        assert_relative_eq!(hi, 2.5, max_relative = 1e-14);
        for p in [1.1, 2.5, 3.0] {
            match exponents(2, -1.2, 0.45, p, 0.01) {
                Err(Error::InadmissibleExponent { lower, upper, .. }) => {
                    assert_relative_eq!(lower, lo);
                    assert_relative_eq!(upper, hi);
                }
                other => panic!("expected interval error, got {other:?}"),
            }
        }
        assert!(exponents(2, -3.0, 0.45, 1.5, 0.01).is_err());
    }

    #[test]
    fn covering_exponent_approaches_target_dimension() {
        let p0 = 1.0 / (1.0 - 0.45);
        let target = target_dimension(-1.2, 0.45);
        assert_relative_eq!(target, 1.0 / 3.0, max_relative = 1e-14);
        let mut last_gap = f64::INFINITY;
        for k in 2..=6 {
            let p = p0 * (1.0 - 10f64.powi(-k));
            let gap = (exponents(2, -1.2, 0.45, p, 1e-3).unwrap().covering_exponent() - target).abs();
            assert!(gap < last_gap);
            last_gap = gap;
        }
        assert!(last_gap < 1e-5);
        assert_relative_eq!(target_dimension(-3.0, 1.0 - 1e-9), 0.5, epsilon = 1e-8);
    }

    #[test]
    fn cell_self_average_closed_forms() {
        for d in [2, 3] {
            assert_relative_eq!(cell_self_average(d, 0.0).unwrap(), 1.0, epsilon = 1e-12);
            assert_relative_eq!(cell_self_average(d, 2.0).unwrap(), d as f64 / 6.0, epsilon = 1e-12);
        }
        // Midpoint sum on a fine lattice avoiding the origin.
        let m = 1600;
        let h = 2.0 / m as f64;
        let mut brute = 0.0;
        for i in 0..m {
            for j in 0..m {
                let (x, y) = (-1.0 + (i as f64 + 0.5) * h, -1.0 + (j as f64 + 0.5) * h);
                brute += (x * x + y * y).powf(-0.6) * (1.0 - x.abs()) * (1.0 - y.abs());
            }
        }
        brute *= h * h;
        assert_relative_eq!(cell_self_average(2, -1.2).unwrap(), brute, max_relative = 5e-3);
    }

    #[test]
    fn hls_bound_exceeds_weak_norm_constant() {
        let es = reference();
        let c = hls_constant(2, 1.2, es.q1 / es.p, es.q1);
        assert!((c - 7.98).abs() < 0.01, "{c}");
        assert!(c > weak_norm_constant(2, -1.2));
    }

    #[test]
    fn convolution_zero_and_maxwellian_cases() {
        let es = reference();
        let grid = VelocityGrid::new(2, 4.0, 20).unwrap();
        let zero = Density::zeros(grid);
        let f = maxwellian(grid, 1.0);
        for (g, h) in [(&zero, &f), (&f, &zero)] {
            let r = verify_convolution(g, h, &es).unwrap();
            assert_eq!(r.worst_ratio, Some(0.0));
            assert!(r.pass);
        }
        let fp = Density::new(grid, f.values().iter().map(|x| x.powf(1.5)).collect()).unwrap();
        let r = verify_convolution(&fp, &f, &es).unwrap();
        assert!(r.worst_ratio.unwrap() < 1.0 && r.worst_ratio.unwrap() > 0.0);
    }

    #[test]
    fn convolution_random_pairs_respect_bound() {
        let es = reference();
        let grid = VelocityGrid::new(2, 3.0, 12).unwrap();
        let conv = LatticeConvolution::power(&grid, es.gamma).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..50 {
            let mut draw = || {
                Density::new(
                    grid,
                    (0..grid.len()).map(|_| rng.gen_range(0.0f64..1.0).powi(3)).collect(),
                )
                .unwrap()
            };
            let (g, f) = (draw(), draw());
            assert!(verify_convolution_with(&conv, &g, &f, &es).unwrap().pass);
        }
    }

    #[test]
    fn interpolated_weights_integrate_the_tents_exactly() {
        let grid = VelocityGrid::new(2, 2.0, 6).unwrap();
        let h = grid.spacing();
        let f = Density::from_fn(grid, |v| 1.0 + 0.2 * v[0] * v[1]).unwrap();
        let unit = LatticeConvolution::interpolated(&grid, |_| 1.0)
            .unwrap()
            .apply(f.values());
        let mass: f64 = f.values().iter().sum::<f64>() * grid.cell_volume();
        // A tent has variance 1/6 per axis, so ∫Λ(x−a)Λ(y−b)(x²+y²) = a² + b² + 1/3.
        let square = LatticeConvolution::interpolated(&grid, |r| r * r)
            .unwrap()
            .apply(f.values());
        for i in [0, 8, 21, 35] {
            assert_relative_eq!(unit[i], mass, max_relative = 1e-6);
            let vi = grid.node(i);
            let exact: f64 = (0..grid.len())
                .map(|j| {
                    let vj = grid.node(j);
                    let u2 = ((vi[0] - vj[0]).powi(2) + (vi[1] - vj[1]).powi(2)) / (h * h);
                    f.values()[j] * h * h * (u2 + 1.0 / 3.0)
                })
                .sum::<f64>()
                * grid.cell_volume();
            assert_relative_eq!(square[i], exact, max_relative = 1e-6);
        }
        assert!(LatticeConvolution::interpolated(&VelocityGrid::new(3, 1.0, 4).unwrap(), |_| 1.0).is_err());
    }

    #[test]
    fn lattice_convolution_matches_direct_sum() {
        let grid = VelocityGrid::new(2, 2.0, 6).unwrap();
        let conv = LatticeConvolution::power(&grid, -1.2).unwrap();
        let f = Density::from_fn(grid, |v| 1.0 + v[0] - 0.3 * v[1] * v[1] + 4.0).unwrap();
        let out = conv.apply(f.values());
        let diag = cell_self_average(2, -1.2).unwrap() * grid.spacing().powf(-1.2);
        for i in [0, 7, 20, 35] {
            let vi = grid.node(i);
            let direct: f64 = (0..grid.len())
                .map(|j| {
                    let vj = grid.node(j);
                    let r = ((vi[0] - vj[0]).powi(2) + (vi[1] - vj[1]).powi(2)).sqrt();
                    f.values()[j] * if j == i { diag } else { r.powf(-1.2) }
                })
                .sum::<f64>()
                * grid.cell_volume();
            assert_relative_eq!(out[i], direct, max_relative = 1e-12);
        }
    }

    #[test]
    fn interpolation_zero_and_maxwellian_family() {
        let es = reference();
        let grid = VelocityGrid::new(2, 4.0, 24).unwrap();
        for weighted in [false, true] {
            let r = verify_interpolation(&Density::zeros(grid), &es, weighted);
            assert_eq!(r.worst_ratio, Some(0.0));
            for lambda in [0.1, 1.0, 10.0] {
                let r = verify_interpolation(&maxwellian(grid, lambda), &es, weighted);
                let q = r.worst_ratio.unwrap();
                assert!(
                    r.pass && q > 0.0 && q <= 1.0,
                    "λ={lambda} weighted={weighted} ratio={q}"
                );
            }
        }
    }

    #[test]
    fn young_constant_reproduces_the_exponent_beta() {
        let es = reference();
        let split = es.plain_split();
        assert_relative_eq!(
            split.alpha * (es.p + 1.0) * split.big_q,
            es.beta * es.p,
            max_relative = 1e-12
        );
        let split = es.weighted_split();
        assert_relative_eq!(
            split.alpha * (es.p + 1.0) * split.big_q,
            es.beta_eps * es.p,
            max_relative = 1e-12
        );
    }

    #[test]
    fn degenerate_holder_triple_is_an_identity() {
        let es = reference();
        let grid = VelocityGrid::new(2, 3.0, 16).unwrap();
        let f = maxwellian(grid, 2.0);
        for alpha in [0.1, 0.5, 0.9] {
            let t = HolderTriple {
                p: 2.0,
                q: 2.0,
                alpha,
                k_p: 0.7,
                k_q: 0.7,
            };
            let r = verify_weighted_holder(&f, &es, &[t]);
            assert_relative_eq!(r.worst_ratio.unwrap(), 1.0, max_relative = 1e-12);
        }
        let r = verify_weighted_holder(&f, &es, &random_holder_triples(3, 50));
        assert!(r.pass && r.worst_ratio.unwrap() <= 1.0 + 1e-12);
    }

    #[test]
    fn second_interpolation_cases() {
        let es = reference();
        let grid = VelocityGrid::new(2, 4.0, 24).unwrap();
        assert_eq!(
            verify_interpolation_again(&Density::zeros(grid), &es).worst_ratio,
            Some(0.0)
        );
        for lambda in [0.1, 1.0, 10.0] {
            assert!(verify_interpolation_again(&maxwellian(grid, lambda), &es).pass);
        }
        for radius in [0.5, 1.0, 2.0] {
            let ball = Density::from_fn(grid, |v| {
                if v[0] * v[0] + v[1] * v[1] <= radius * radius {
                    1.0
                } else {
                    0.0
                }
            })
            .unwrap();
            let count = ball.values().iter().filter(|&&x| x > 0.0).count() as f64;
            let w = Weights::new(&grid);
            let lhs = w.norm(ball.values(), es.r_p, 0.0).powf(es.p);
            assert_relative_eq!(
                lhs,
                (count * grid.cell_volume()).powf(es.p / es.r_p),
                max_relative = 1e-12
            );
            assert!(verify_interpolation_again(&ball, &es).pass);
        }
    }

    #[test]
    fn ensemble_is_deterministic_and_normalised() {
        let grid = VelocityGrid::new(2, 5.0, 24).unwrap();
        let a = standard_ensemble(&grid, 11).unwrap();
        let b = standard_ensemble(&grid, 11).unwrap();
        assert_eq!(a.len(), 20);
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.density.values(), y.density.values());
            let h = crate::grid::mass_momentum_energy(&x.density);
            assert!(h.mass >= 0.5 - 1e-12 && h.mass <= 2.0 + 1e-12, "{}", x.label);
            assert!(h.energy <= ENSEMBLE_ENERGY, "{}", x.label);
        }
        let spiked = a.iter().filter(|m| m.label.starts_with("spiked"));
        assert!(spiked.clone().count() == 5);
        assert!(spiked.into_iter().all(|m| m.density.max_value() > 1.0));
    }

    #[test]
    fn lower_bounds_vacuous_and_spiked_cases() {
        let kp = KernelParams::new(2, -1.2, 0.45, 0.1, 2.0).unwrap();
        let es = reference();
        let tf = TruncationFunctional::power(1.5, 1.0).unwrap();
        let grid = VelocityGrid::new(2, 3.0, 12).unwrap();
        let flat = Density::from_fn(grid, |_| 0.5).unwrap();
        let settings = LowerBoundSettings {
            first_lower_weight: 10.0,
            kappa0: 1.0,
        };
        let [first, second] = dissipation_lower_bounds(&flat, &kp, &tf, &es, &settings).unwrap();
        assert_eq!(first.fitted_constant, None);
        assert_eq!(second.fitted_constant, None);

        let spiked = Density::from_fn(grid, |v| {
            0.3 * (-(v[0] * v[0] + v[1] * v[1])).exp() + 6.0 * (-8.0 * ((v[0] - 0.5).powi(2) + v[1] * v[1])).exp()
        })
        .unwrap();
        let km = KernelMatrix::compute(&spiked, &kp, &PlaneQuadrature::default()).unwrap();
        let shapes = dissipation_shapes(&km, &spiked, &tf, &es, &LowerBoundSettings::default()).unwrap();
        assert!(shapes.second > 0.0 && shapes.dissipation > 0.0);
        let [first, second] = lower_bound_reports(&shapes, &tf, &es, &LowerBoundSettings::default());
        assert!(first.has_positive_constant() && second.has_positive_constant());
    }

    #[test]
    fn key_estimate_zero_maxwellian_and_kappa_scan() {
        let kp = KernelParams::new(2, -1.2, 0.45, 0.1, 2.0).unwrap();
        let es = reference();
        let grid = VelocityGrid::new(2, 3.0, 12).unwrap();
        let tf = TruncationFunctional::power(1.5, 1.0).unwrap();
        let zero = key_estimate(&Density::zeros(grid), &kp, &tf, &es).unwrap();
        assert_eq!(zero.extras["lhs"], 0.0);
        assert_eq!(zero.fitted_constant, Some(0.0));

        let ctx = KeyEstimateContext::new(&grid, &kp, 64).unwrap();
        let f = Density::from_fn(grid, |v| 3.0 * (-2.0 * (v[0] * v[0] + v[1] * v[1])).exp()).unwrap();
        let km = KernelMatrix::compute(&f, &kp, &PlaneQuadrature::default()).unwrap();
        let mut last = f64::INFINITY;
        for kappa in [1.0, 4.0, 16.0] {
            let tf = TruncationFunctional::power(1.5, kappa).unwrap();
            let terms = key_estimate_terms(&ctx, &km, &f, &tf, &es).unwrap();
            let share = terms.kappa_share(&es);
            assert!(share < last, "κ={kappa}: {share} ≥ {last}");
            last = share;
        }
    }

    #[test]
    fn combine_keeps_the_worst_values() {
        let es = reference();
        let a = InequalityReport::explicit("x", &es, 0.5);
        let b = InequalityReport::explicit("x", &es, 0.9);
        let c = InequalityReport::combine(&[a, b]).unwrap();
        assert_eq!((c.samples, c.worst_ratio, c.pass), (2, Some(0.9), true));
        let l1 = InequalityReport::fitted("y", ConstantKind::LowerFit, &es, 1.0, Some(3.0));
        let l2 = InequalityReport::fitted("y", ConstantKind::LowerFit, &es, 1.0, None);
        let l3 = InequalityReport::fitted("y", ConstantKind::LowerFit, &es, 1.0, Some(2.0));
        let c = InequalityReport::combine(&[l1, l2, l3]).unwrap();
        assert_eq!((c.samples, c.informative, c.fitted_constant), (3, 2, Some(2.0)));
        assert!(c.pass);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn exponent_invariants_hold_inside_the_interval(
            gamma in -1.9f64..-0.2,
            s in 0.05f64..0.95,
            t in 0.02f64..0.98,
        ) {
            let (lo, hi) = admissible_interval(2, gamma, s);
            let lo = lo.max(1.0);
            let p = lo + t * (hi - lo);
            let eps = (1e-3f64).min(0.5 * (p - 1.0));
            if let Ok(es) = exponents(2, gamma, s, p, eps) {
                prop_assert!(es.p < es.q1 && es.q1 < es.p * es.p0);
                prop_assert!(es.theta_p > 0.0 && es.theta_p < 1.0);
                prop_assert!(es.beta > 1.0 && es.k0 < 0.0);
                prop_assert!(es.r_p > es.p / 2.0 && es.r_p < es.p * es.p0);
            }
        }

        #[test]
        fn explicit_interpolations_never_exceed_one(
            values in proptest::collection::vec(0.0f64..5.0, 64),
            scale in 0.01f64..100.0,
        ) {
            let es = reference();
            let grid = VelocityGrid::new(2, 2.0, 8).unwrap();
            let f = Density::new(grid, values.iter().map(|v| v * scale).collect()).unwrap();
            for r in [
                verify_interpolation(&f, &es, false),
                verify_interpolation(&f, &es, true),
                verify_interpolation_again(&f, &es),
            ] {
                prop_assert!(r.worst_ratio.unwrap() <= 1.0 + 1e-12, "{}: {:?}", r.inequality_id, r.worst_ratio);
            }
        }
    }
}
