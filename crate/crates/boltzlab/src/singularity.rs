//! Conditional-boundedness barrier, the Riccati comparison guard, the
//! windowed boundedness criterion and a Vitali-covering dimension estimator.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

/// `a(t) = C_a (1 + t^{−d/(2sp)})`.
pub fn barrier_a(t: f64, c_a: f64, dim: usize, s: f64, p: f64) -> Result<f64> {
    if !(t > 0.0) {
        return Err(invalid("t", format!("barrier needs t > 0, got {t}")));
    }
    Ok(c_a * (1.0 + t.powf(-(dim as f64) / (2.0 * s * p))))
}

/// Constants entering the barrier conditions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BarrierParams {
    pub dim: usize,
    pub gamma: f64,
    pub s: f64,
    pub p: f64,
    /// Fitted coercivity constant `c̄_I`.
    pub c_bar_i: f64,
    /// Constant `C_ε` from the interpolation step.
    pub c_eps: f64,
    /// Constant of the `(f ∧ a)` source term.
    pub c_ii: f64,
}

impl BarrierParams {
    fn gain(&self) -> f64 {
        2.0 * self.s * self.p / self.dim as f64
    }

    /// `δ = 2sp/d − (1 − θ)` with `1 − θ = 1 − p(1 + γ/d)`.
    pub fn delta(&self) -> f64 {
        self.gain() - (1.0 - self.p * (1.0 + self.gamma / self.dim as f64))
    }
}

/// Slack of each barrier condition; admissible when all are nonnegative.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BarrierVerdict {
    pub admissible: bool,
    pub margin: f64,
    pub constant_slack: f64,
    pub delta_slack: f64,
    pub ode_slack: f64,
}

/// Evaluates the three conditions on `C_a`:
/// `c̄_I/4 ≥ 2C_ε C_a^{−1−2sp/d}`, `c̄_I/4 ≥ C_(ii) C_a^{−δ}` and
/// `c̄_I C_a^{2sp/d}/(2p) ≥ d/(2sp)`.
pub fn barrier_admissible(c_a: f64, params: &BarrierParams) -> Result<BarrierVerdict> {
    if !(params.c_bar_i > 0.0) {
        return Err(invalid(
            "c_bar_i",
            format!("coercivity constant must be positive, got {}", params.c_bar_i),
        ));
    }
    if !(params.c_eps >= 0.0 && params.c_ii >= 0.0) {
        return Err(invalid("c_eps", "source constants must be nonnegative"));
    }
    let gain = params.gain();
    let (constant_slack, delta_slack, ode_slack) = if c_a > 0.0 {
        (
            0.25 * params.c_bar_i - 2.0 * params.c_eps * c_a.powf(-1.0 - gain),
            0.25 * params.c_bar_i - params.c_ii * c_a.powf(-params.delta()),
            params.c_bar_i * c_a.powf(gain) / (2.0 * params.p) - 1.0 / gain,
        )
    } else {
        (f64::NEG_INFINITY, f64::NEG_INFINITY, -1.0 / gain)
    };
    let margin = constant_slack.min(delta_slack).min(ode_slack);
    Ok(BarrierVerdict {
        admissible: margin >= 0.0,
        margin,
        constant_slack,
        delta_slack,
        ode_slack,
    })
}

/// Constants of the comparison lemma for `Ẋ ≤ C X^{1+pα} + D κ^{−ι} X^{1+pα+δ}`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RiccatiParams {
    pub c: f64,
    pub d: f64,
    pub p_alpha: f64,
    pub delta: f64,
    pub iota: f64,
    pub kappa: f64,
}

impl RiccatiParams {
    pub fn new(c: f64, d: f64, p_alpha: f64, delta: f64, iota: f64, kappa: f64) -> Result<Self> {
        let rp = Self {
            c,
            d,
            p_alpha,
            delta,
            iota,
            kappa,
        };
        rp.validate()?;
        Ok(rp)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.c >= 0.0 && self.d >= 0.0 && self.c + self.d > 0.0) {
            return Err(invalid("C", "need C, D ≥ 0 with C + D > 0"));
        }
        if !(self.p_alpha > 1.0) || !self.p_alpha.is_finite() {
            return Err(invalid("p_alpha", format!("need pα > 1, got {}", self.p_alpha)));
        }
        if !(self.delta > 0.0 && self.iota > 0.0) {
            return Err(invalid("delta", "need δ > 0 and ι > 0"));
        }
        if !(self.kappa >= 1.0) {
            return Err(invalid("kappa", format!("need κ ≥ 1, got {}", self.kappa)));
        }
        Ok(())
    }

    fn rate(&self) -> f64 {
        2.0 * self.p_alpha * (self.c + self.d)
    }

    /// `c₀ = (2pα(C+D))^{1/(pα)}`.
    pub fn c0(&self) -> f64 {
        self.rate().powf(1.0 / self.p_alpha)
    }

    /// `η = (4c₀)^{−1}`.
    pub fn eta(&self) -> f64 {
        1.0 / (4.0 * self.c0())
    }

    /// `M = (2pα(C+D))^{−1/(pα)} 2^{pα}`.
    pub fn bound(&self) -> f64 {
        self.rate().powf(-1.0 / self.p_alpha) * 2f64.powf(self.p_alpha)
    }

    /// `M₀ = κ^{ι/δ} D^{−1/δ}`, infinite when `D = 0`.
    pub fn cap(&self) -> f64 {
        if self.d == 0.0 {
            f64::INFINITY
        } else {
            self.kappa.powf(self.iota / self.delta) * self.d.powf(-1.0 / self.delta)
        }
    }

    /// Threshold `κ₁ ≥ 1` beyond which `M₀ > M`.
    pub fn kappa1(&self) -> f64 {
        if self.d == 0.0 {
            1.0
        } else {
            (self.bound().powf(self.delta / self.iota) * self.d.powf(1.0 / self.iota)).max(1.0)
        }
    }

    /// `1 − 1/(pα)`.
    pub fn exponent(&self) -> f64 {
        1.0 - 1.0 / self.p_alpha
    }
}

/// Result of [`riccati_guard`] in the normalised frame `T = 1`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GuardVerdict {
    pub premise_met: bool,
    pub conclusion_holds: bool,
    /// `η − ∫₀¹ Y`, nonnegative when the averaged premise holds.
    pub premise_margin: f64,
    /// `M − sup_{(1/3, 1]} Y`.
    pub conclusion_margin: f64,
    pub kappa_ok: bool,
}

fn check_times(times: &[f64], values: &[f64]) -> Result<()> {
    if times.len() != values.len() {
        return Err(Error::LengthMismatch {
            expected: times.len(),
            found: values.len(),
        });
    }
    if times.is_empty() {
        return Err(Error::SeriesTooShort { len: 0 });
    }
    if !(times[0] >= 0.0) {
        return Err(invalid("t", "time stamps must be nonnegative"));
    }
    if let Some(k) = times.windows(2).position(|w| !(w[1] > w[0])) {
        return Err(Error::NonMonotoneTimes(k + 1));
    }
    if let Some(k) = values.iter().position(|x| x.is_nan() || *x < 0.0) {
        return Err(Error::InvalidValue {
            index: k,
            value: values[k],
        });
    }
    Ok(())
}

/// Checks the comparison lemma on samples of `X` over `(0, T]` with
/// `T` the last time stamp. The series is mapped to `Y(s) = T^{1/(pα)}X(Ts)`
/// and the premise `∫₀¹ Y ≤ η` is evaluated by the trapezoid rule, the
/// first sample being held constant back to `t = 0`. Infinite samples make
/// the premise fail.
pub fn riccati_guard(times: &[f64], values: &[f64], rp: &RiccatiParams) -> Result<GuardVerdict> {
    check_times(times, values)?;
    rp.validate()?;
    let horizon = *times.last().unwrap();
    if !(horizon > 0.0) {
        return Err(invalid("t", "the series must end at a positive time"));
    }
    let lift = horizon.powf(1.0 / rp.p_alpha);
    let s: Vec<f64> = times.iter().map(|t| t / horizon).collect();
    let y: Vec<f64> = values.iter().map(|x| lift * x).collect();
    let mut average = s[0] * y[0];
    for k in 1..s.len() {
        average += 0.5 * (s[k] - s[k - 1]) * (y[k] + y[k - 1]);
    }
    let late_sup = s
        .iter()
        .zip(&y)
        .filter(|(&sk, _)| sk > 1.0 / 3.0)
        .map(|(_, &yk)| yk)
        .fold(0.0, f64::max);
    let kappa_ok = rp.kappa >= rp.kappa1();
    let premise_margin = rp.eta() - average;
    let conclusion_margin = rp.bound() - late_sup;
    Ok(GuardVerdict {
        premise_met: premise_margin >= 0.0 && kappa_ok,
        conclusion_holds: conclusion_margin >= 0.0,
        premise_margin,
        conclusion_margin,
        kappa_ok,
    })
}

/// Closed-form solution `X(t) = (X₀^{−pα} − pαCt)^{−1/(pα)}` of `Ẋ = CX^{1+pα}`,
/// infinite from the blow-up time on.
pub fn riccati_solution(x0: f64, c: f64, p_alpha: f64, t: f64) -> f64 {
    let u = x0.powf(-p_alpha) - p_alpha * c * t;
    if u > 0.0 {
        u.powf(-1.0 / p_alpha)
    } else {
        f64::INFINITY
    }
}

/// `∫₀^t X` for [`riccati_solution`], infinite past the blow-up time.
pub fn riccati_solution_integral(x0: f64, c: f64, p_alpha: f64, t: f64) -> f64 {
    let u0 = x0.powf(-p_alpha);
    let u = u0 - p_alpha * c * t;
    if u <= 0.0 {
        return f64::INFINITY;
    }
    if c == 0.0 {
        return x0 * t;
    }
    let e = 1.0 - 1.0 / p_alpha;
    (u0.powf(e) - u.powf(e)) / (c * (p_alpha - 1.0))
}

/// A window `(τ − r, τ]` of the boundedness criterion.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WindowVerdict {
    pub center: f64,
    pub radius: f64,
    /// `∫_{τ−r}^τ X` with `X = (∫φ_κ)^{1/p}`.
    pub integral: f64,
    /// `η r^{1 − 1/(pα)}`.
    pub threshold: f64,
    pub certified: bool,
}

/// Trapezoidal antiderivative with linear interpolation between samples.
struct Antiderivative<'a> {
    times: &'a [f64],
    values: &'a [f64],
    cumulative: Vec<f64>,
}

impl<'a> Antiderivative<'a> {
    fn new(times: &'a [f64], values: &'a [f64]) -> Self {
        let mut cumulative = Vec::with_capacity(times.len());
        let mut acc = 0.0;
        cumulative.push(0.0);
        for k in 1..times.len() {
            acc += 0.5 * (times[k] - times[k - 1]) * (values[k] + values[k - 1]);
            cumulative.push(acc);
        }
        Self {
            times,
            values,
            cumulative,
        }
    }

    /// `∫_{t₀}^t`, for `t` inside the sampled range.
    fn at(&self, t: f64) -> f64 {
        let k = self.times.partition_point(|&s| s <= t).clamp(1, self.times.len() - 1);
        let (a, b) = (self.times[k - 1], self.times[k]);
        let (fa, fb) = (self.values[k - 1], self.values[k]);
        let dt = (t - a).clamp(0.0, b - a);
        let ft = fa + (fb - fa) * dt / (b - a);
        self.cumulative[k - 1] + 0.5 * dt * (fa + ft)
    }
}

/// Slides windows `(τ − r, τ]` over a series of `∫φ_κ(f(t))` and certifies
/// each window whose average of `X = (∫φ_κ)^{1/p}` satisfies
/// `(1/r)∫X ≤ r^{−1/(pα)} η`. Window ends are the first sample plus `r`
/// and every later sample, so that the windows cover `(t₀, T]` whenever the
/// sample spacing does not exceed `r`. Certification also requires
/// `κ ≥ max(κ₀, κ₁)`.
pub fn boundedness_criterion(
    times: &[f64],
    phi_integrals: &[f64],
    p: f64,
    rp: &RiccatiParams,
    kappa0: f64,
    radius: f64,
) -> Result<Vec<WindowVerdict>> {
    check_times(times, phi_integrals)?;
    rp.validate()?;
    if !(radius > 0.0) {
        return Err(invalid("r", format!("window radius must be positive, got {radius}")));
    }
    if !(p >= 1.0) {
        return Err(invalid("p", format!("need p ≥ 1, got {p}")));
    }
    let start = times[0];
    let end = *times.last().unwrap();
    if times.len() < 2 || end - start < radius {
        return Err(Error::SeriesTooShort { len: times.len() });
    }
    let x: Vec<f64> = phi_integrals.iter().map(|v| v.powf(1.0 / p)).collect();
    let anti = Antiderivative::new(times, &x);
    let threshold = rp.eta() * radius.powf(rp.exponent());
    let kappa_ok = rp.kappa >= kappa0.max(rp.kappa1());
    let ends = std::iter::once(start + radius).chain(times.iter().copied().filter(|&t| t > start + radius));
    Ok(ends
        .map(|tau| {
            let integral = anti.at(tau) - anti.at(tau - radius);
            WindowVerdict {
                center: tau,
                radius,
                integral,
                threshold,
                certified: kappa_ok && integral <= threshold,
            }
        })
        .collect())
}

/// An interval `(center − radius, center + radius)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Ball {
    pub center: f64,
    pub radius: f64,
}

impl Ball {
    fn disjoint(&self, other: &Ball) -> bool {
        (self.center - other.center).abs() >= self.radius + other.radius
    }

    fn dilated(&self, factor: f64) -> (f64, f64) {
        (self.center - factor * self.radius, self.center + factor * self.radius)
    }
}

impl From<&WindowVerdict> for Ball {
    fn from(w: &WindowVerdict) -> Self {
        Ball {
            center: w.center,
            radius: w.radius,
        }
    }
}

/// Greedy Vitali selection and covering sum for one radius level.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SingularSetEstimate {
    pub selected: Vec<Ball>,
    /// Merged 5×-dilations of the selected balls.
    pub cover: Vec<(f64, f64)>,
    pub exponent_e: f64,
    /// `∑ r_i^e` over the selected balls.
    pub budget: f64,
    /// `0` for an empty failure set, otherwise `e`.
    pub dimension_estimate: f64,
}

impl SingularSetEstimate {
    pub fn cover_length(&self) -> f64 {
        self.cover.iter().map(|(a, b)| b - a).sum()
    }
}

/// Sorts by radius (largest first), keeps pairwise-disjoint balls and
/// dilates the survivors by five.
pub fn vitali_dimension(failed: &[Ball], exponent_e: f64) -> SingularSetEstimate {
    let mut order: Vec<&Ball> = failed.iter().collect();
    order.sort_by(|a, b| b.radius.total_cmp(&a.radius).then(a.center.total_cmp(&b.center)));
    let mut selected: Vec<Ball> = Vec::new();
    for ball in order {
        if selected.iter().all(|s| s.disjoint(ball)) {
            selected.push(*ball);
        }
    }
    let mut pieces: Vec<(f64, f64)> = selected.iter().map(|b| b.dilated(5.0)).collect();
    pieces.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut cover: Vec<(f64, f64)> = Vec::new();
    for (a, b) in pieces {
        match cover.last_mut() {
            Some(last) if a <= last.1 => last.1 = last.1.max(b),
            _ => cover.push((a, b)),
        }
    }
    let budget = selected.iter().map(|b| b.radius.powf(exponent_e)).sum();
    SingularSetEstimate {
        dimension_estimate: if selected.is_empty() { 0.0 } else { exponent_e },
        selected,
        cover,
        exponent_e,
        budget,
    }
}

/// Summary of one ladder level.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LadderLevel {
    pub radius: f64,
    pub failed: usize,
    pub estimate: SingularSetEstimate,
}

/// Covering sums over `r = r₀ 2^{−j}`, `j = 0..levels`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LadderReport {
    pub exponent_e: f64,
    pub levels: Vec<LadderLevel>,
    /// Least-squares slope of `ln budget` against `ln(1/r)`.
    pub budget_slope: f64,
    pub bound_certified: bool,
    pub certified_dimension_bound: Option<f64>,
    pub verdict: String,
}

/// Largest slope of `ln budget` versus `ln(1/r)` still counted as bounded.
pub const BUDGET_SLOPE_TOLERANCE: f64 = 0.1;

/// Runs [`vitali_dimension`] on every ladder level, with the failed balls
/// of each level supplied by `failed_at(r)`. The bound `dim ≤ e` is
/// certified when the budget does not grow as the radius shrinks and, if a
/// cap is given, never exceeds it.
pub fn ladder_estimate(
    r0: f64,
    levels: usize,
    exponent_e: f64,
    budget_cap: Option<f64>,
    mut failed_at: impl FnMut(f64) -> Result<Vec<Ball>>,
) -> Result<LadderReport> {
    if !(r0 > 0.0) || levels == 0 {
        return Err(invalid("r0", "need r₀ > 0 and at least one ladder level"));
    }
    let mut out = Vec::with_capacity(levels);
    for j in 0..levels {
        let radius = r0 * 0.5f64.powi(j as i32);
        let failed = failed_at(radius)?;
        out.push(LadderLevel {
            radius,
            failed: failed.len(),
            estimate: vitali_dimension(&failed, exponent_e),
        });
    }
    let any_failure = out.iter().any(|l| l.failed > 0);
    let budget_slope = log_slope(&out);
    let capped = budget_cap.map_or(true, |cap| out.iter().all(|l| l.estimate.budget <= cap));
    let bound_certified = capped && (!any_failure || budget_slope <= BUDGET_SLOPE_TOLERANCE);
    Ok(LadderReport {
        exponent_e,
        certified_dimension_bound: bound_certified.then_some(if any_failure { exponent_e } else { 0.0 }),
        verdict: if bound_certified {
            "bound certified"
        } else {
            "bound not certified"
        }
        .to_string(),
        levels: out,
        budget_slope,
        bound_certified,
    })
}

fn log_slope(levels: &[LadderLevel]) -> f64 {
    let points: Vec<(f64, f64)> = levels
        .iter()
        .filter(|l| l.estimate.budget > 0.0)
        .map(|l| (-l.radius.ln(), l.estimate.budget.ln()))
        .collect();
    if points.len() < 2 {
        return 0.0;
    }
    let n = points.len() as f64;
    let mx = points.iter().map(|p| p.0).sum::<f64>() / n;
    let my = points.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = points.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = points.iter().map(|p| (p.0 - mx).powi(2)).sum();
    sxy / sxx
}

/// Failed windows of [`boundedness_criterion`] as balls.
pub fn failed_balls(windows: &[WindowVerdict]) -> Vec<Ball> {
    windows.iter().filter(|w| !w.certified).map(Ball::from).collect()
}

/// Planted singular times with the profile `c (|t − τ|^{−1/(pα)} − w^{−1/(pα)})_+`
/// of cut-off width `w` on top of a constant background.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PowerLawProfile {
    pub singular_times: Vec<f64>,
    pub amplitude: f64,
    pub width: f64,
    pub base: f64,
}

impl PowerLawProfile {
    /// `X(t)`; infinite exactly at a planted time.
    pub fn value(&self, t: f64, p_alpha: f64) -> f64 {
        let floor = self.width.powf(-1.0 / p_alpha);
        self.base
            + self
                .singular_times
                .iter()
                .map(|&tau| self.amplitude * ((t - tau).abs().powf(-1.0 / p_alpha) - floor).max(0.0))
                .sum::<f64>()
    }

    /// Samples of `∫φ_κ = X^p` at `t_k = kT/n`, `k = 0..=n`.
    pub fn series(&self, horizon: f64, samples: usize, p: f64, p_alpha: f64) -> (Vec<f64>, Vec<f64>) {
        let dt = horizon / samples as f64;
        let times: Vec<f64> = (0..=samples).map(|k| k as f64 * dt).collect();
        let values = times.iter().map(|&t| self.value(t, p_alpha).powf(p)).collect();
        (times, values)
    }
}

/// Intervals of the `depth`-th stage of a Smith–Volterra–Cantor set in
/// `[a, b]`: stage `n` removes the middle `4^{−n}` of each remaining piece,
/// relative to the original length.
pub fn fat_cantor_intervals(a: f64, b: f64, depth: usize) -> Vec<(f64, f64)> {
    let length = b - a;
    let mut pieces = vec![(a, b)];
    for n in 1..=depth {
        let gap = length * 0.25f64.powi(n as i32);
        pieces = pieces
            .into_iter()
            .flat_map(|(lo, hi)| {
                let mid = 0.5 * (lo + hi);
                [(lo, mid - 0.5 * gap), (mid + 0.5 * gap, hi)]
            })
            .collect();
    }
    pieces
}

/// Balls of radius `r` centred on the lattice `r ℤ` that meet one of the
/// given intervals.
pub fn lattice_balls_meeting(intervals: &[(f64, f64)], radius: f64) -> Vec<Ball> {
    let mut centres: Vec<i64> = Vec::new();
    for &(lo, hi) in intervals {
        let first = ((lo - radius) / radius).floor() as i64;
        let last = ((hi + radius) / radius).ceil() as i64;
        centres.extend((first..=last).filter(|&k| {
            let c = k as f64 * radius;
            c + radius > lo && c - radius < hi
        }));
    }
    centres.sort_unstable();
    centres.dedup();
    centres
        .into_iter()
        .map(|k| Ball {
            center: k as f64 * radius,
            radius,
        })
        .collect()
}
