//! Collision kernels `B = |z|^γ b(cos θ)`, their bounded truncations `B_n`,
//! the cancellation density `R_n`, and the density-dependent kernel `K(v, v')`.
//!
//! Angles follow the convention `cos θ = σ · z/|z|` with `z = v - w`, so that
//! grazing collisions sit at `θ = 0` and `sin(θ/2) = |v' - v| / |v - w|`.

use std::f64::consts::PI;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::grid::{japanese_bracket, norm, Density};
use crate::quad;

/// Steepness of the logistic ramp; keeps the slope of [`ramp`] below 3.
const RAMP_STEEPNESS: f64 = 0.6;

/// Parameters of the collision kernel and of its truncation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KernelParams {
    pub dim: usize,
    pub gamma: f64,
    pub s: f64,
    pub b0: f64,
    /// Truncation index: relative speeds below `1/(2n)` and deviation angles
    /// with `sin(θ/2) < 1/n` are removed.
    pub n: f64,
    pub main_theorem_mode: bool,
}

impl KernelParams {
    pub fn new(dim: usize, gamma: f64, s: f64, b0: f64, n: f64) -> Result<Self> {
        let kp = Self {
            dim,
            gamma,
            s,
            b0,
            n,
            main_theorem_mode: false,
        };
        kp.validate()?;
        Ok(kp)
    }

    /// Same parameters, additionally restricted to `-4s ≤ γ < -2s`.
    pub fn in_main_theorem_mode(mut self) -> Result<Self> {
        self.main_theorem_mode = true;
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        if self.dim != 2 && self.dim != 3 {
            return Err(invalid("d", format!("dimension must be 2 or 3, got {}", self.dim)));
        }
        let d = self.dim as f64;
        if !(self.gamma > -d) {
            return Err(invalid(
                "gamma",
                format!("γ > −d violated: γ = {}, d = {}", self.gamma, self.dim),
            ));
        }
        if !(self.gamma < 0.0) {
            return Err(invalid("gamma", format!("γ < 0 violated: γ = {}", self.gamma)));
        }
        if !(self.s > 0.0 && self.s < 1.0) {
            return Err(invalid("s", format!("need 0 < s < 1, got {}", self.s)));
        }
        if !(self.b0 > 0.0) || !self.b0.is_finite() {
            return Err(invalid(
                "b0",
                format!("angular constant must be positive, got {}", self.b0),
            ));
        }
        if !(self.n >= 1.0) || !self.n.is_finite() {
            return Err(invalid(
                "n",
                format!("truncation index must be at least 1, got {}", self.n),
            ));
        }
        if self.main_theorem_mode && !(self.gamma >= -4.0 * self.s && self.gamma < -2.0 * self.s) {
            return Err(invalid(
                "gamma",
                format!("−4s ≤ γ < −2s violated: γ = {}, s = {}", self.gamma, self.s),
            ));
        }
        Ok(())
    }

    /// Exponent `(d - 1) + 2s` of the grazing singularity.
    pub fn angular_exponent(&self) -> f64 {
        (self.dim as f64 - 1.0) + 2.0 * self.s
    }

    /// `b(cos θ) = b0 |sin(θ/2)|^{-(d-1)-2s}`; `+∞` at `cos θ = 1`.
    pub fn angular_profile(&self, cos_theta: f64) -> f64 {
        let sin2 = 0.5 * (1.0 - cos_theta);
        if sin2 <= 0.0 {
            return f64::INFINITY;
        }
        self.b0 * sin2.powf(-0.5 * self.angular_exponent())
    }

    /// `b` expressed through `sin(θ/2)` directly.
    pub fn angular_profile_half_sine(&self, half_sine: f64) -> f64 {
        if half_sine <= 0.0 {
            return f64::INFINITY;
        }
        self.b0 * half_sine.abs().powf(-self.angular_exponent())
    }

    /// Smallest deviation angle kept by the truncation, `2 arcsin(1/n)`.
    pub fn grazing_cutoff(&self) -> f64 {
        2.0 * (1.0 / self.n).min(1.0).asin()
    }

    /// Speed factor `X(n r) r^γ` of the truncated kernel.
    pub fn speed_factor(&self, speed: f64) -> f64 {
        let x = ramp(self.n * speed);
        if x == 0.0 {
            0.0
        } else {
            x * speed.powf(self.gamma)
        }
    }

    /// Whether the angular indicator `|sin(θ/2)| ≥ 1/n` keeps this angle.
    pub fn keeps_angle(&self, cos_theta: f64) -> bool {
        0.5 * (1.0 - cos_theta) * self.n * self.n >= 1.0
    }

    /// `B_n` as a function of relative speed and `cos θ`.
    pub fn truncated_kernel(&self, speed: f64, cos_theta: f64) -> f64 {
        if !self.keeps_angle(cos_theta) {
            return 0.0;
        }
        let sf = self.speed_factor(speed);
        if sf == 0.0 {
            return 0.0;
        }
        sf * self.angular_profile(cos_theta)
    }

    /// `B_n(z, σ)` for a relative velocity `z` and a unit vector `σ`.
    pub fn truncated_kernel_at(&self, z: &[f64], sigma: &[f64]) -> f64 {
        let speed = norm(z);
        if speed == 0.0 {
            return 0.0;
        }
        let cos_theta = z.iter().zip(sigma).map(|(a, b)| a * b).sum::<f64>() / speed;
        self.truncated_kernel(speed, cos_theta.clamp(-1.0, 1.0))
    }

    /// `sup_r X(n r) r^γ`, attained where the ramp has not yet saturated.
    pub fn speed_factor_sup(&self) -> f64 {
        let lo = 0.5 / self.n;
        let hi = 1.0 / self.n;
        let samples = 4000;
        let mut best = self.speed_factor(hi);
        let mut arg = hi;
        for k in 1..samples {
            let r = lo + (hi - lo) * k as f64 / samples as f64;
            let value = self.speed_factor(r);
            if value > best {
                best = value;
                arg = r;
            }
        }
        let step = (hi - lo) / samples as f64;
        let (mut a, mut b) = ((arg - step).max(lo), (arg + step).min(hi));
        for _ in 0..80 {
            let m1 = a + (b - a) / 3.0;
            let m2 = b - (b - a) / 3.0;
            if self.speed_factor(m1) < self.speed_factor(m2) {
                a = m1;
            } else {
                b = m2;
            }
        }
        best.max(self.speed_factor(0.5 * (a + b)))
    }

    /// `|S^{d-2}|`, the measure of the circle of directions at fixed `θ`.
    pub(crate) fn polar_measure(&self) -> f64 {
        if self.dim == 2 {
            2.0
        } else {
            2.0 * PI
        }
    }
}

/// Smooth monotone ramp: 0 on `(-∞, 1/2]`, 1 on `[1, ∞)`, slope at most 3.
pub fn ramp(u: f64) -> f64 {
    if u <= 0.5 {
        0.0
    } else if u >= 1.0 {
        1.0
    } else {
        let t = 2.0 * u - 1.0;
        let g = RAMP_STEEPNESS * (1.0 / t - 1.0 / (1.0 - t));
        1.0 / (1.0 + g.exp())
    }
}

fn sinc(x: f64) -> f64 {
    if x.abs() < 1e-4 {
        1.0 - x * x / 6.0
    } else {
        x.sin() / x
    }
}

/// Power substitution `θ = π - U t^k` that removes the `(π - θ)^{-γ-2}`
/// singularity of `cos(θ/2)^{-d-γ}` on the sphere.
#[derive(Debug, Clone, Copy)]
struct Reflected {
    span: f64,
    power: f64,
    dim: f64,
    gamma: f64,
}

impl Reflected {
    fn new(kp: &KernelParams, span: f64, singular_exponent: f64) -> Self {
        Self {
            span,
            power: (1.0 / singular_exponent).max(1.0),
            dim: kp.dim as f64,
            gamma: kp.gamma,
        }
    }

    /// Returns `(u, cos(θ/2), sin(θ/2), w, w0)` where `w` is the Jacobian times
    /// `cos(θ/2)^{-d-γ} sin^{d-2}θ` and `w0` the Jacobian times `sin^{d-2}θ`.
    fn at(&self, t: f64, extra: f64) -> (f64, f64, f64, f64, f64) {
        let (k, span, d, g) = (self.power, self.span, self.dim, self.gamma);
        let u = span * t.powf(k);
        let half_cos = (0.5 * u).sin();
        let half_sin = (0.5 * u).cos();
        let sine_ratio = sinc(u).powf(d - 2.0);
        let lead = -g - 1.0 - extra;
        let w = k
            * span.powf(lead)
            * 2f64.powf(d + g + extra)
            * sinc(0.5 * u).powf(-d - g - extra)
            * sine_ratio
            * t.powf(k * lead - 1.0);
        let w0 = span * k * t.powf(k - 1.0) * u.powf(d - 2.0) * sine_ratio;
        (u, half_cos, half_sin, w, w0)
    }
}

/// Cancellation constants of the untruncated kernel.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CancellationConstants {
    /// `c_c = ∫ (cos(θ/2)^{-d-γ} - 1) b dσ`.
    pub c_c: f64,
    /// `3 ∫ cos(θ/2)^{-d-γ} (1/cos(θ/2) - 1) b dσ`; `+∞` when `γ ≥ -2`.
    pub c_c_bar: f64,
}

/// Evaluates both cancellation constants by double-exponential quadrature.
pub fn cancellation_constants(kp: &KernelParams) -> Result<CancellationConstants> {
    kp.validate()?;
    if kp.gamma >= -1.0 {
        return Err(Error::Divergent(format!(
            "cos(θ/2)^(-d-γ) is not integrable at θ = π for γ = {} ≥ -1",
            kp.gamma
        )));
    }
    let d = kp.dim as f64;
    let g = kp.gamma;
    let polar = kp.polar_measure();
    let near_grazing = |theta: f64| {
        let half = 0.5 * theta;
        let excess = (-(d + g) * 0.5 * (-half.sin().powi(2)).ln_1p()).exp_m1();
        excess * kp.angular_profile_half_sine(half.sin()) * theta.sin().powf(d - 2.0)
    };
    let grazing_part = quad::tanh_sinh_split(near_grazing, 0.0, 0.5 * PI, 4, 1e-10)?;
    let sub = Reflected::new(kp, 0.5 * PI, -g - 1.0);
    let far = |t: f64| {
        let (_, _, half_sin, w, w0) = sub.at(t, 0.0);
        (w - w0) * kp.angular_profile_half_sine(half_sin)
    };
    let far_part = quad::tanh_sinh_split(far, 0.0, 1.0, 4, 1e-10)?;
    let c_c = polar * (grazing_part + far_part);

    let c_c_bar = if g >= -2.0 {
        f64::INFINITY
    } else {
        let bar_near = |theta: f64| {
            let c = (0.5 * theta).cos();
            c.powf(-d - g)
                * (1.0 / c - 1.0)
                * kp.angular_profile_half_sine((0.5 * theta).sin())
                * theta.sin().powf(d - 2.0)
        };
        let near = quad::tanh_sinh_split(bar_near, 0.0, 0.5 * PI, 4, 1e-9)?;
        let sub = Reflected::new(kp, 0.5 * PI, -g - 2.0);
        let bar_far = |t: f64| {
            let (_, _, half_sin, w_extra, _) = sub.at(t, 1.0);
            let w_plain = sub.at(t, 0.0).3;
            (w_extra - w_plain) * kp.angular_profile_half_sine(half_sin)
        };
        let far = quad::tanh_sinh_split(bar_far, 0.0, 1.0, 4, 1e-9)?;
        3.0 * polar * (near + far)
    };
    Ok(CancellationConstants { c_c, c_c_bar })
}

#[derive(Debug, Clone, Copy)]
struct AngularNode {
    half_cos: f64,
    /// Weight of `cos(θ/2)^{-d-γ} X(n r / cos(θ/2)) b`.
    lifted: f64,
    /// Weight of `X(n r) b`.
    plain: f64,
}

/// The truncated cancellation density `R_n(|z|)`, evaluated by a fixed
/// angular rule in the frame of a chosen unit axis.
#[derive(Debug, Clone)]
pub struct CancellationDensity {
    kp: KernelParams,
    axis: Vec<f64>,
    nodes: Vec<AngularNode>,
    directions: Vec<Vec<f64>>,
    constants: CancellationConstants,
}

impl CancellationDensity {
    /// Uses the first basis vector as axis.
    pub fn new(kp: &KernelParams, nodes: usize) -> Result<Self> {
        let mut e = vec![0.0; kp.dim];
        e[0] = 1.0;
        Self::with_axis(kp, nodes, &e)
    }

    pub fn with_axis(kp: &KernelParams, nodes: usize, axis: &[f64]) -> Result<Self> {
        let constants = cancellation_constants(kp)?;
        if nodes == 0 {
            return Err(invalid("M", "need at least one angular node"));
        }
        if axis.len() != kp.dim || (norm(axis) - 1.0).abs() > 1e-12 {
            return Err(invalid("e", "axis must be a unit vector of the kernel dimension"));
        }
        let span = PI - kp.grazing_cutoff();
        let sub = Reflected::new(kp, span, -kp.gamma - 1.0);
        let polar = kp.polar_measure();
        let frame = orthonormal_complement(axis);
        let mut list = Vec::with_capacity(nodes);
        let mut directions = Vec::with_capacity(nodes);
        for j in 0..nodes {
            let t = (j as f64 + 0.5) / nodes as f64;
            let (u, half_cos, half_sin, w, w0) = sub.at(t, 0.0);
            let b = kp.angular_profile_half_sine(half_sin) * polar / nodes as f64;
            list.push(AngularNode {
                half_cos,
                lifted: w * b,
                plain: w0 * b,
            });
            let (cos_theta, sin_theta) = (-u.cos(), u.sin());
            directions.push(
                axis.iter()
                    .zip(&frame)
                    .map(|(a, p)| cos_theta * a + sin_theta * p)
                    .collect(),
            );
        }
        Ok(Self {
            kp: *kp,
            axis: axis.to_vec(),
            nodes: list,
            directions,
            constants,
        })
    }

    pub fn constants(&self) -> CancellationConstants {
        self.constants
    }

    pub fn axis(&self) -> &[f64] {
        &self.axis
    }

    /// Representative sphere direction of each angular node (one per polar angle).
    pub fn directions(&self) -> &[Vec<f64>] {
        &self.directions
    }

    /// Cosine of the polar angle of each node with respect to the axis.
    pub fn node_cosines(&self) -> Vec<f64> {
        self.nodes.iter().map(|n| 2.0 * n.half_cos * n.half_cos - 1.0).collect()
    }

    /// The split `(R_n^1(r), R_n^2(r))`; their sum is `R_n(r)`.
    pub fn split(&self, r: f64) -> (f64, f64) {
        if !(r > 0.0) {
            return (0.0, 0.0);
        }
        let n = self.kp.n;
        let base = ramp(n * r);
        let mut lifted_total = 0.0;
        let mut plain_total = 0.0;
        let mut second = 0.0;
        for node in &self.nodes {
            lifted_total += node.lifted;
            plain_total += node.plain;
            let lifted = ramp(n * r / node.half_cos);
            if lifted != base {
                second += node.lifted * (lifted - base);
            }
        }
        let scale = r.powf(self.kp.gamma);
        (scale * base * (lifted_total - plain_total), scale * second)
    }

    pub fn value(&self, r: f64) -> f64 {
        let (first, second) = self.split(r);
        first + second
    }

    /// The untruncated asymptote `c_c r^γ`.
    pub fn asymptote(&self, r: f64) -> f64 {
        self.constants.c_c * r.powf(self.kp.gamma)
    }
}

/// `R_n(r)` by adaptive double-exponential quadrature, independent of the
/// fixed rule used by [`CancellationDensity`].
pub fn cancellation_density_adaptive(kp: &KernelParams, r: f64, abs_tol: f64) -> Result<f64> {
    if kp.gamma >= -1.0 {
        return Err(Error::Divergent(format!(
            "cos(θ/2)^(-d-γ) is not integrable at θ = π for γ = {} ≥ -1",
            kp.gamma
        )));
    }
    let span = PI - kp.grazing_cutoff();
    let sub = Reflected::new(kp, span, -kp.gamma - 1.0);
    let n = kp.n;
    let base = ramp(n * r);
    let integrand = |t: f64| {
        let (_, half_cos, half_sin, w, w0) = sub.at(t, 0.0);
        let lifted = ramp(n * r / half_cos);
        (w * lifted - w0 * base) * kp.angular_profile_half_sine(half_sin)
    };
    let scale = r.powf(kp.gamma) * kp.polar_measure();
    let value = quad::tanh_sinh_split(integrand, 0.0, 1.0, 32, abs_tol / scale)?;
    Ok(scale * value)
}

fn orthonormal_complement(axis: &[f64]) -> Vec<f64> {
    if axis.len() == 2 {
        return vec![-axis[1], axis[0]];
    }
    let pick = if axis[0].abs() < 0.9 {
        [1.0, 0.0, 0.0]
    } else {
        [0.0, 1.0, 0.0]
    };
    let dot: f64 = pick.iter().zip(axis).map(|(a, b)| a * b).sum();
    let raw: Vec<f64> = pick.iter().zip(axis).map(|(p, a)| p - dot * a).collect();
    let len = norm(&raw);
    raw.into_iter().map(|x| x / len).collect()
}

/// Resolution of the plane integral defining `K`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlaneQuadrature {
    /// Panel width as a fraction of the grid spacing.
    pub panel_fraction: f64,
    /// Gauss-Legendre points per panel.
    pub order: usize,
}

impl Default for PlaneQuadrature {
    fn default() -> Self {
        Self {
            panel_fraction: 0.5,
            order: 3,
        }
    }
}

/// `K(v, v')` for two grid nodes with the default plane quadrature.
pub fn kernel_k(f: &Density, kp: &KernelParams, v: usize, v_prime: usize) -> Result<f64> {
    if v == v_prime {
        return Err(Error::Diagonal);
    }
    let g = f.grid();
    let d = g.dim();
    kernel_k_at(
        f,
        kp,
        &g.node(v)[..d],
        &g.node(v_prime)[..d],
        &PlaneQuadrature::default(),
    )
}

/// `K(v, v') = 2^{d-1} |v'-v|^{-1} ∫_{w ⊥ v'-v} f(v+w) r^{2-d} B_n(r, σ) dw`
/// with `r² = |v'-v|² + |w|²` and `sin(θ/2) = |v'-v|/r`.
pub fn kernel_k_at(f: &Density, kp: &KernelParams, v: &[f64], v_prime: &[f64], pq: &PlaneQuadrature) -> Result<f64> {
    let g = f.grid();
    let d = g.dim();
    if kp.dim != d {
        return Err(invalid("d", "kernel and grid dimensions differ"));
    }
    let e: Vec<f64> = v_prime.iter().zip(v).map(|(a, b)| a - b).collect();
    let rho = norm(&e);
    if rho == 0.0 {
        return Err(Error::Diagonal);
    }
    let n = kp.n;
    let outer = rho * (n * n - 1.0).max(0.0).sqrt();
    let inner = (0.25 / (n * n) - rho * rho).max(0.0).sqrt();
    if outer <= inner {
        return Ok(0.0);
    }
    let exponent = kp.angular_exponent();
    let weight = |r: f64| kp.speed_factor(r) * kp.b0 * (rho / r).powf(-exponent);
    let h = g.spacing();
    let panel = pq.panel_fraction * h;
    let unit: Vec<f64> = e.iter().map(|x| x / rho).collect();
    let frame = orthonormal_complement(&unit);

    if d == 2 {
        let dir = [frame[0], frame[1]];
        let reach = g.half_width() + 0.5 * h;
        let Some((lo, hi)) = slab_interval(v, &dir, reach) else {
            return Ok(0.0);
        };
        let mut total = 0.0;
        for (a, b) in [(-outer, -inner), (inner, outer)] {
            let (a, b) = (a.max(lo), b.min(hi));
            total += quad::composite(a, b, panel, pq.order, |t| {
                let p = [v[0] + t * dir[0], v[1] + t * dir[1]];
                let fv = f.interpolate(&p);
                if fv == 0.0 {
                    return 0.0;
                }
                fv * weight((rho * rho + t * t).sqrt())
            });
        }
        return Ok(2.0 * total / rho);
    }

    let second = cross(&unit, &frame);
    let reach = g.half_width() * 3f64.sqrt() + h;
    let q_max = outer.min(reach + norm(v));
    let rings = ((2.0 * PI * q_max / panel).ceil() as usize).max(16);
    let radial = quad::composite(inner, q_max, panel, pq.order, |q| {
        let r = (rho * rho + q * q).sqrt();
        let w = weight(r) / r * q;
        if w == 0.0 {
            return 0.0;
        }
        let mut ring = 0.0;
        for k in 0..rings {
            let phi = 2.0 * PI * (k as f64 + 0.5) / rings as f64;
            let (c, s) = (phi.cos(), phi.sin());
            let p = [
                v[0] + q * (c * frame[0] + s * second[0]),
                v[1] + q * (c * frame[1] + s * second[1]),
                v[2] + q * (c * frame[2] + s * second[2]),
            ];
            ring += f.interpolate(&p);
        }
        w * ring * 2.0 * PI / rings as f64
    });
    Ok(4.0 * radial / rho)
}

fn cross(a: &[f64], b: &[f64]) -> [f64; 3] {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

/// Parameter interval on which `origin + t dir` stays inside `[-reach, reach]^2`.
fn slab_interval(origin: &[f64], dir: &[f64], reach: f64) -> Option<(f64, f64)> {
    let mut lo = f64::NEG_INFINITY;
    let mut hi = f64::INFINITY;
    for axis in 0..2 {
        let (o, u) = (origin[axis], dir[axis]);
        if u.abs() < 1e-15 {
            if o.abs() >= reach {
                return None;
            }
            continue;
        }
        let (t1, t2) = ((-reach - o) / u, (reach - o) / u);
        lo = lo.max(t1.min(t2));
        hi = hi.min(t1.max(t2));
    }
    (hi > lo).then_some((lo, hi))
}

/// `K(v, v')` for every ordered pair of grid nodes, zero on the diagonal.
#[derive(Debug, Clone)]
pub struct KernelMatrix {
    size: usize,
    values: Vec<f64>,
}

impl KernelMatrix {
    pub fn compute(f: &Density, kp: &KernelParams, pq: &PlaneQuadrature) -> Result<Self> {
        let g = *f.grid();
        let d = g.dim();
        let size = g.len();
        let rows: Result<Vec<Vec<f64>>> = (0..size)
            .into_par_iter()
            .map(|i| {
                let v = g.node(i);
                (0..size)
                    .map(|j| {
                        if i == j {
                            Ok(0.0)
                        } else {
                            kernel_k_at(f, kp, &v[..d], &g.node(j)[..d], pq)
                        }
                    })
                    .collect()
            })
            .collect();
        Ok(Self {
            size,
            values: rows?.concat(),
        })
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn get(&self, v: usize, v_prime: usize) -> f64 {
        self.values[v * self.size + v_prime]
    }

    /// `∑_{v'} (K(v, v') - K(v', v)) h^d` for one node.
    pub fn net_rate(&self, v: usize, cell_volume: f64) -> f64 {
        (0..self.size).map(|j| self.get(v, j) - self.get(j, v)).sum::<f64>() * cell_volume
    }
}

/// Resolution of the whole-space net rate `∫ (K(v, v') - K(v', v)) dv'`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NetRateQuadrature {
    pub plane: PlaneQuadrature,
    /// Line directions through `v` used for the far field.
    pub directions: usize,
}

impl Default for NetRateQuadrature {
    fn default() -> Self {
        Self {
            plane: PlaneQuadrature::default(),
            directions: 256,
        }
    }
}

/// `∫ (K(v, v') - K(v', v)) dv'` over the whole plane for a grid node `v`.
///
/// Pairs with `|v' - v| < 2R` are summed on the lattice `v + hZ²` under a
/// smooth cut-off that starts at `R`, the distance from `v` to the farthest
/// corner of the support of `f`. Beyond `R` the reverse kernel vanishes and
/// the remaining part of `K(v, ·)` is integrated in polar form along lines
/// through `v`.
pub fn whole_space_net_rate(f: &Density, kp: &KernelParams, v: usize, q: &NetRateQuadrature) -> Result<f64> {
    let g = f.grid();
    if g.dim() != 2 || kp.dim != 2 {
        return Err(invalid("d", "the whole-space net rate is implemented for d = 2"));
    }
    if kp.gamma >= -1.0 {
        return Err(Error::Divergent(format!(
            "K(v, ·) has a |v'|^(γ-1) tail that is not integrable for γ = {} ≥ -1",
            kp.gamma
        )));
    }
    if q.directions == 0 {
        return Err(invalid("directions", "need at least one far-field direction"));
    }
    let h = g.spacing();
    let reach = g.half_width() + 0.5 * h;
    let node = g.node(v);
    let center = [node[0], node[1]];
    let corner = (center[0].abs() + reach).hypot(center[1].abs() + reach);
    let radius = corner.max(1.0 / kp.n);
    let cutoff = |rho: f64| ramp(0.5 + 0.5 * (rho - radius) / radius);

    let m = (2.0 * radius / h).ceil() as i64;
    let rows: Result<Vec<f64>> = (-m..=m)
        .into_par_iter()
        .map(|i| {
            let mut row = 0.0;
            for j in -m..=m {
                if i == 0 && j == 0 {
                    continue;
                }
                let rho = h * ((i * i + j * j) as f64).sqrt();
                if rho >= 2.0 * radius {
                    continue;
                }
                let other = [center[0] + h * i as f64, center[1] + h * j as f64];
                let forward = kernel_k_at(f, kp, &center, &other, &q.plane)?;
                let reverse = kernel_k_at(f, kp, &other, &center, &q.plane)?;
                row += (1.0 - cutoff(rho)) * (forward - reverse);
            }
            Ok(row)
        })
        .collect();
    let near = rows?.iter().sum::<f64>() * h * h;

    let (gamma, alpha) = (kp.gamma, kp.angular_exponent());
    let lift = 0.5 * (gamma + alpha);
    let radial = |t: f64| {
        let shell = quad::composite(radius, 2.0 * radius, radius / 64.0, 4, |rho| {
            cutoff(rho) * rho.powf(-alpha) * (rho * rho + t * t).powf(lift)
        });
        let scaled = t / (2.0 * radius);
        let excess = quad::composite(0.0, 1.0, 1.0 / 64.0, 4, |u| {
            u.powf(-gamma - 2.0) * (((scaled * u).powi(2)).ln_1p() * lift).exp_m1()
        });
        shell + (2.0 * radius).powf(1.0 + gamma) * (1.0 / (-gamma - 1.0) + excess)
    };
    let intervals = 4096;
    let table: Vec<f64> = (0..=intervals)
        .map(|k| radial(corner * k as f64 / intervals as f64))
        .collect();
    let profile = |t: f64| {
        let x = (t.abs() / corner * intervals as f64).min(intervals as f64);
        let k = (x.floor() as usize).min(intervals - 1);
        let frac = x - k as f64;
        table[k] * (1.0 - frac) + table[k + 1] * frac
    };
    let panel = q.plane.panel_fraction * h;
    let lines: Vec<f64> = (0..q.directions)
        .into_par_iter()
        .map(|k| {
            let phi = PI * (k as f64 + 0.5) / q.directions as f64;
            let dir = [phi.cos(), phi.sin()];
            let Some((lo, hi)) = slab_interval(&center, &dir, reach) else {
                return 0.0;
            };
            quad::composite(lo, hi, panel, q.plane.order, |t| {
                let fv = f.interpolate(&[center[0] + t * dir[0], center[1] + t * dir[1]]);
                if fv == 0.0 {
                    0.0
                } else {
                    fv * profile(t)
                }
            })
        })
        .collect();
    let far = 4.0 * kp.b0 * PI / q.directions as f64 * lines.iter().sum::<f64>();
    Ok(near + far)
}

/// Measure of the nodes `v` in the ball `B_R(v')` where
/// `K(v, v') ≥ μ0 <v'>^{γ+2s+1} |v' - v|^{-d-2s}`.
pub fn nondegeneracy_measure(f: &Density, kp: &KernelParams, v_prime: usize, radius: f64, mu0: f64) -> Result<f64> {
    if !(radius > 0.0) {
        return Err(invalid("R", format!("radius must be positive, got {radius}")));
    }
    let g = f.grid();
    let d = g.dim();
    let center = g.node(v_prime);
    let weight = japanese_bracket(&center[..d]).powf(kp.gamma + 2.0 * kp.s + 1.0);
    let pq = PlaneQuadrature::default();
    let mut count = 0usize;
    for i in 0..g.len() {
        let v = g.node(i);
        let dist = norm(&v[..d].iter().zip(&center[..d]).map(|(a, b)| a - b).collect::<Vec<_>>());
        if dist > radius {
            continue;
        }
        if i == v_prime {
            if mu0 <= 0.0 {
                count += 1;
            }
            continue;
        }
        let threshold = mu0 * weight * dist.powf(-(d as f64) - 2.0 * kp.s);
        let k = kernel_k_at(f, kp, &v[..d], &center[..d], &pq)?;
        if k >= threshold {
            count += 1;
        }
    }
    Ok(count as f64 * g.cell_volume())
}
