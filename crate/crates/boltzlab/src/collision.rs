//! The truncated collision operator split into gain and loss, its weak form,
//! the entropy dissipation and the Bregman dissipation.
//!
//! Post-collision velocities are `v' = v - z/2 + |z|σ/2` and
//! `w' = v - z/2 - |z|σ/2` with `z = v - w`. For a grid node `v` and a lattice
//! offset `z` these displacements only depend on `z` and `σ`, so the sphere
//! rule is laid out in the frame of `z` and evaluated in index units.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::grid::{norm, Density, VelocityGrid};
use crate::kernel::{KernelMatrix, KernelParams, PlaneQuadrature};
use crate::truncation::TruncationFunctional;

/// `(v', w')` for velocities `v`, `w` and a unit vector `σ`.
pub fn post_collision(v: &[f64], w: &[f64], sigma: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let diff: Vec<f64> = v.iter().zip(w).map(|(a, b)| a - b).collect();
    let half_speed = 0.5 * norm(&diff);
    let mid: Vec<f64> = v.iter().zip(w).map(|(a, b)| 0.5 * (a + b)).collect();
    let vp = mid.iter().zip(sigma).map(|(m, s)| m + half_speed * s).collect();
    let wp = mid.iter().zip(sigma).map(|(m, s)| m - half_speed * s).collect();
    (vp, wp)
}

/// How off-grid values of `f` are reconstructed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum Interpolation {
    /// Multilinear interpolation with zero extension.
    #[default]
    Multilinear,
    /// Cubic Lagrange interpolation of `ln f`, clamped to the enclosing cell
    /// and replaced by multilinear interpolation next to zeros. It reproduces
    /// Gaussians exactly.
    LogCubic,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CollisionConfig {
    /// Number of sphere directions; rounded up to an even count.
    pub angular_nodes: usize,
    pub interpolation: Interpolation,
    /// Cap on `|ln(f'f'_*/(f f_*))|` when exactly one product vanishes.
    pub log_cap: f64,
}

impl Default for CollisionConfig {
    fn default() -> Self {
        Self {
            angular_nodes: 64,
            interpolation: Interpolation::Multilinear,
            log_cap: 1e30f64.ln(),
        }
    }
}

/// One representative of a pair `{σ, -σ}` in the frame of `z`.
#[derive(Debug, Clone, Copy)]
struct PairedDirection {
    /// `v' - v = along·z + across1·Z1 + across2·Z2` in index units.
    along: f64,
    across1: f64,
    across2: f64,
    /// Angular weight of `σ` (including the indicator and the sphere measure).
    weight: f64,
    /// Angular weight of `-σ`.
    partner_weight: f64,
}

#[derive(Debug, Clone, Copy, Default)]
struct OffsetData {
    speed_factor: f64,
    /// `|z|` times the two unit vectors orthogonal to `z`, in index units.
    frame: [[f64; 3]; 2],
}

/// Precomputed sphere rule and per-offset data for one grid and kernel.
#[derive(Debug, Clone)]
pub struct CollisionWorkspace {
    grid: VelocityGrid,
    kp: KernelParams,
    config: CollisionConfig,
    directions: Vec<PairedDirection>,
    angular_total: f64,
    offsets: Vec<OffsetData>,
    /// Integer coordinates of each node.
    coords: Vec<[isize; 3]>,
    /// Linear key with `offset(i, j) = key[i] - key[j] + centre`.
    keys: Vec<isize>,
    centre: isize,
    bound: f64,
}

impl CollisionWorkspace {
    pub fn new(grid: VelocityGrid, kp: KernelParams, config: CollisionConfig) -> Result<Self> {
        kp.validate()?;
        if kp.dim != grid.dim() {
            return Err(invalid("d", "kernel and grid dimensions differ"));
        }
        if config.angular_nodes < 2 {
            return Err(invalid("M", "need at least two angular nodes"));
        }
        if !(config.log_cap > 0.0) {
            return Err(invalid("log_cap", "logarithm cap must be positive"));
        }
        let directions = if grid.dim() == 2 {
            circle_rule(&kp, config.angular_nodes)
        } else {
            sphere_rule(&kp, config.angular_nodes)
        };
        let angular_total = directions.iter().map(|d| d.weight + d.partner_weight).sum();
        let offsets = offset_table(&grid, &kp);
        let bound = kp.speed_factor_sup() * angular_total;
        let n = grid.points_per_axis() as isize;
        let span = 2 * n - 1;
        let coords: Vec<[isize; 3]> = (0..grid.len())
            .map(|i| grid.multi_index(i).map(|c| c as isize))
            .collect();
        let keys = coords
            .iter()
            .map(|c| c.iter().take(grid.dim()).fold(0, |acc, &x| acc * span + x))
            .collect();
        let centre = (0..grid.dim()).fold(0, |acc, _| acc * span + (n - 1));
        Ok(Self {
            grid,
            kp,
            config,
            directions,
            angular_total,
            offsets,
            coords,
            keys,
            centre,
            bound,
        })
    }

    pub fn grid(&self) -> &VelocityGrid {
        &self.grid
    }

    pub fn kernel(&self) -> &KernelParams {
        &self.kp
    }

    pub fn config(&self) -> &CollisionConfig {
        &self.config
    }

    /// Number of sphere directions actually used.
    pub fn angular_nodes(&self) -> usize {
        2 * self.directions.len()
    }

    /// `𝓑 = sup B̄_n`, the bound on the σ-integrated truncated kernel.
    pub fn bound(&self) -> f64 {
        self.bound
    }

    /// `B̄_n(|z|) = ∫ B_n(z, σ) dσ` under the workspace sphere rule.
    pub fn averaged_kernel(&self, speed: f64) -> f64 {
        self.kp.speed_factor(speed) * self.angular_total
    }

    fn offset_index(&self, dz: [isize; 3]) -> usize {
        let n = self.grid.points_per_axis() as isize;
        let span = 2 * n - 1;
        let mut idx = 0isize;
        for &c in dz.iter().take(self.grid.dim()) {
            idx = idx * span + (c + n - 1);
        }
        idx as usize
    }

    /// `(B̄_n * f)(v)` at every node.
    pub fn loss_rate(&self, f: &Density) -> Vec<f64> {
        let g = self.grid;
        let values = f.values();
        let w = g.cell_volume();
        (0..g.len())
            .into_par_iter()
            .map(|i| {
                let mi = g.multi_index(i);
                let mut acc = 0.0;
                for (j, &fw) in values.iter().enumerate() {
                    if fw == 0.0 || j == i {
                        continue;
                    }
                    let dz = lattice_offset(&g, &mi, &g.multi_index(j));
                    acc += fw * self.offsets[self.offset_index(dz)].speed_factor;
                }
                acc * self.angular_total * w
            })
            .collect()
    }

    /// Loss term `f (B̄_n * f)`.
    pub fn q_loss(&self, f: &Density) -> Density {
        let rate = self.loss_rate(f);
        let values = f.values().iter().zip(rate).map(|(a, b)| a * b).collect();
        Density::new(self.grid, values).expect("products of nonnegative values")
    }

    /// Gain term `∬ f(v') f(w') B_n dσ dw`.
    pub fn q_gain(&self, f: &Density) -> Density {
        let values = match self.config.interpolation {
            Interpolation::Multilinear => self.gain_with(&Linear::new(f)),
            Interpolation::LogCubic => self.gain_with(&LogCubic::new(f)),
        };
        Density::new(self.grid, values).expect("gain is a sum of nonnegative terms")
    }

    fn gain_with<S: Sampler>(&self, sampler: &S) -> Vec<f64> {
        let g = self.grid;
        let d = g.dim();
        let cell = g.cell_volume();
        (0..g.len())
            .into_par_iter()
            .map(|i| {
                let node = self.coords[i];
                let mut acc = 0.0;
                for j in 0..g.len() {
                    if j == i {
                        continue;
                    }
                    let od = &self.offsets[(self.keys[i] - self.keys[j] + self.centre) as usize];
                    if od.speed_factor == 0.0 {
                        continue;
                    }
                    let other = self.coords[j];
                    let z = [
                        (node[0] - other[0]) as f64,
                        (node[1] - other[1]) as f64,
                        (node[2] - other[2]) as f64,
                    ];
                    let mut inner = 0.0;
                    for dir in &self.directions {
                        let (p1, p2) = displacements(d, &z, od, dir);
                        let product = sampler.product(node, p1, p2);
                        inner += product * (dir.weight + dir.partner_weight);
                    }
                    acc += od.speed_factor * inner;
                }
                acc * cell
            })
            .collect()
    }

    /// `Q(f, f) = Q⁺ - Q⁻` at every node.
    pub fn q(&self, f: &Density) -> Vec<f64> {
        let gain = self.q_gain(f);
        let loss = self.q_loss(f);
        gain.values().iter().zip(loss.values()).map(|(a, b)| a - b).collect()
    }

    /// Visits every `(v, w, σ-pair)` with `(P, P', ψ-difference data)`.
    fn pair_sweep<S, F>(&self, f: &Density, sampler: &S, visit: F) -> f64
    where
        S: Sampler,
        F: Fn(usize, usize, f64, f64, [f64; 3], [f64; 3], &PairedDirection) -> f64 + Sync,
    {
        let g = self.grid;
        let d = g.dim();
        let values = f.values();
        let cell = g.cell_volume();
        let total: f64 = (0..g.len())
            .into_par_iter()
            .map(|i| {
                let node = self.coords[i];
                let mut acc = 0.0;
                for j in 0..g.len() {
                    if j == i {
                        continue;
                    }
                    let od = &self.offsets[(self.keys[i] - self.keys[j] + self.centre) as usize];
                    if od.speed_factor == 0.0 {
                        continue;
                    }
                    let other = self.coords[j];
                    let z = [
                        (node[0] - other[0]) as f64,
                        (node[1] - other[1]) as f64,
                        (node[2] - other[2]) as f64,
                    ];
                    let before = values[i] * values[j];
                    let mut inner = 0.0;
                    for dir in &self.directions {
                        let (p1, p2) = displacements(d, &z, od, dir);
                        let after = sampler.product(node, p1, p2);
                        inner += visit(i, j, before, after, p1, p2, dir);
                    }
                    acc += od.speed_factor * inner;
                }
                acc
            })
            .collect::<Vec<f64>>()
            .iter()
            .sum();
        total * cell * cell
    }

    fn sweep<F>(&self, f: &Density, visit: F) -> f64
    where
        F: Fn(usize, usize, f64, f64, [f64; 3], [f64; 3], &PairedDirection) -> f64 + Sync,
    {
        match self.config.interpolation {
            Interpolation::Multilinear => self.pair_sweep(f, &Linear::new(f), visit),
            Interpolation::LogCubic => self.pair_sweep(f, &LogCubic::new(f), visit),
        }
    }

    /// `D(f) = ∭ (f'f'_* - f f_*) ln(f'f'_*/(f f_*)) B_n`, restricted to
    /// collisions whose outgoing velocities stay inside the box.
    pub fn entropy_dissipation(&self, f: &Density) -> f64 {
        let cap = self.config.log_cap;
        let g = self.grid;
        self.sweep(f, |i, _, before, after, p1, p2, dir| {
            if !stays_in_box(&g, i, &p1, &p2) {
                return 0.0;
            }
            (after - before) * capped_log_ratio(after, before, cap) * (dir.weight + dir.partner_weight)
        })
    }

    /// `4 ∭ (√(f'f'_*) - √(f f_*))² B_n`, a lower bound for [`Self::entropy_dissipation`].
    pub fn entropy_dissipation_sqrt_form(&self, f: &Density) -> f64 {
        let g = self.grid;
        self.sweep(f, |i, _, before, after, p1, p2, dir| {
            if !stays_in_box(&g, i, &p1, &p2) {
                return 0.0;
            }
            let gap = after.sqrt() - before.sqrt();
            4.0 * gap * gap * (dir.weight + dir.partner_weight)
        })
    }

    /// Symmetrized weak form `¼ ∭ (f'f'_* - f f_*) δψ B_n` with
    /// `δψ = ψ(v) + ψ(w) - ψ(v') - ψ(w')`.
    pub fn weak_form_q<T>(&self, f: &Density, test: T) -> f64
    where
        T: Fn(&[f64]) -> f64 + Sync,
    {
        let g = self.grid;
        let d = g.dim();
        let h = g.spacing();
        let at_nodes: Vec<f64> = g.nodes().map(|v| test(&v[..d])).collect();
        let value = self.sweep(f, |i, j, before, after, p1, p2, dir| {
            let v = g.node(i);
            let mut vp = [0.0; 3];
            let mut wp = [0.0; 3];
            for a in 0..d {
                vp[a] = v[a] + h * p1[a];
                wp[a] = v[a] + h * p2[a];
            }
            let moved = test(&vp[..d]) + test(&wp[..d]);
            (after - before) * (at_nodes[i] + at_nodes[j] - moved) * (dir.weight + dir.partner_weight)
        });
        0.25 * value
    }

    /// `(∑Q h^d, ∑Q v h^d, ∑Q |v|² h^d)` for the uncorrected operator.
    pub fn collision_invariants(&self, f: &Density) -> Invariants {
        moments_of(&self.grid, &self.q(f))
    }
}

/// Mass, momentum and energy moments of a signed grid function.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Invariants {
    pub mass: f64,
    pub momentum: Vec<f64>,
    pub energy: f64,
}

impl Invariants {
    /// Largest absolute residual.
    pub fn max_abs(&self) -> f64 {
        self.momentum
            .iter()
            .fold(self.mass.abs().max(self.energy.abs()), |m, p| m.max(p.abs()))
    }
}

pub fn moments_of(grid: &VelocityGrid, values: &[f64]) -> Invariants {
    let d = grid.dim();
    let w = grid.cell_volume();
    let mut mass = 0.0;
    let mut momentum = vec![0.0; d];
    let mut energy = 0.0;
    for (i, &q) in values.iter().enumerate() {
        let v = grid.node(i);
        mass += q;
        for a in 0..d {
            momentum[a] += q * v[a];
        }
        energy += q * v[..d].iter().map(|x| x * x).sum::<f64>();
    }
    Invariants {
        mass: mass * w,
        momentum: momentum.into_iter().map(|p| p * w).collect(),
        energy: energy * w,
    }
}

/// Rescales the gain by `1 + λ·(1, v, |v|²)` so that gain and loss share
/// mass, momentum and energy. Returns the corrected gain and `λ`.
pub fn conservative_gain(grid: &VelocityGrid, gain: &[f64], loss: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let d = grid.dim();
    let k = d + 2;
    let basis = |i: usize| -> Vec<f64> {
        let v = grid.node(i);
        let mut b = Vec::with_capacity(k);
        b.push(1.0);
        b.extend_from_slice(&v[..d]);
        b.push(v[..d].iter().map(|x| x * x).sum());
        b
    };
    let mut a = DMatrix::<f64>::zeros(k, k);
    let mut rhs = DVector::<f64>::zeros(k);
    for i in 0..grid.len() {
        let b = basis(i);
        for r in 0..k {
            rhs[r] += (loss[i] - gain[i]) * b[r];
            for c in 0..k {
                a[(r, c)] += gain[i] * b[r] * b[c];
            }
        }
    }
    let Some(lambda) = a.clone().lu().solve(&rhs).filter(|x| x.iter().all(|v| v.is_finite())) else {
        return (gain.to_vec(), vec![0.0; k]);
    };
    let corrected = (0..grid.len())
        .map(|i| {
            let b = basis(i);
            let factor = 1.0 + b.iter().zip(lambda.iter()).map(|(x, l)| x * l).sum::<f64>();
            (gain[i] * factor).max(0.0)
        })
        .collect();
    (corrected, lambda.iter().copied().collect())
}

/// `∬ d_φ(f(v), f(v')) K(v, v')` over off-diagonal node pairs.
pub fn bregman_dissipation(f: &Density, kp: &KernelParams, tf: &TruncationFunctional) -> Result<f64> {
    let km = KernelMatrix::compute(f, kp, &PlaneQuadrature::default())?;
    Ok(bregman_dissipation_with(&km, f, tf))
}

/// [`bregman_dissipation`] with a precomputed kernel matrix.
pub fn bregman_dissipation_with(km: &KernelMatrix, f: &Density, tf: &TruncationFunctional) -> f64 {
    let values = f.values();
    let cell = f.grid().cell_volume();
    let total: f64 = (0..values.len())
        .into_par_iter()
        .map(|i| {
            let mut acc = 0.0;
            for (j, &fj) in values.iter().enumerate() {
                if i == j {
                    continue;
                }
                let dist = tf.bregman(values[i], fj);
                if dist != 0.0 {
                    acc += dist * km.get(i, j);
                }
            }
            acc
        })
        .collect::<Vec<f64>>()
        .iter()
        .sum();
    total * cell * cell
}

fn capped_log_ratio(after: f64, before: f64, cap: f64) -> f64 {
    const TINY: f64 = 1e-300;
    match (after > TINY, before > TINY) {
        (true, true) => (after.ln() - before.ln()).clamp(-cap, cap),
        (true, false) => cap,
        (false, true) => -cap,
        (false, false) => 0.0,
    }
}

fn stays_in_box(g: &VelocityGrid, i: usize, p1: &[f64; 3], p2: &[f64; 3]) -> bool {
    let mi = g.multi_index(i);
    let top = g.points_per_axis() as f64 - 0.5;
    (0..g.dim()).all(|a| {
        let base = mi[a] as f64;
        let (x, y) = (base + p1[a], base + p2[a]);
        x >= -0.5 && x <= top && y >= -0.5 && y <= top
    })
}

fn lattice_offset(g: &VelocityGrid, a: &[usize; 3], b: &[usize; 3]) -> [isize; 3] {
    let mut dz = [0isize; 3];
    for axis in 0..g.dim() {
        dz[axis] = a[axis] as isize - b[axis] as isize;
    }
    dz
}

#[inline(always)]
fn displacements(d: usize, z: &[f64; 3], od: &OffsetData, dir: &PairedDirection) -> ([f64; 3], [f64; 3]) {
    let mut p1 = [0.0; 3];
    let mut p2 = [0.0; 3];
    for a in 0..d {
        p1[a] = dir.along * z[a] + dir.across1 * od.frame[0][a] + dir.across2 * od.frame[1][a];
        p2[a] = -z[a] - p1[a];
    }
    (p1, p2)
}

fn offset_table(grid: &VelocityGrid, kp: &KernelParams) -> Vec<OffsetData> {
    let n = grid.points_per_axis() as isize;
    let d = grid.dim();
    let h = grid.spacing();
    let span = (2 * n - 1) as usize;
    let count = span.pow(d as u32);
    (0..count)
        .map(|idx| {
            let mut rest = idx;
            let mut z = [0.0; 3];
            for axis in (0..d).rev() {
                z[axis] = (rest % span) as f64 - (n - 1) as f64;
                rest /= span;
            }
            let len = norm(&z[..d]);
            if len == 0.0 {
                return OffsetData::default();
            }
            let frame = if d == 2 {
                [[-z[1], z[0], 0.0], [0.0; 3]]
            } else {
                let unit = [z[0] / len, z[1] / len, z[2] / len];
                let pick = if unit[0].abs() < 0.9 {
                    [1.0, 0.0, 0.0]
                } else {
                    [0.0, 1.0, 0.0]
                };
                let dot = pick[0] * unit[0] + pick[1] * unit[1] + pick[2] * unit[2];
                let mut a1 = [
                    pick[0] - dot * unit[0],
                    pick[1] - dot * unit[1],
                    pick[2] - dot * unit[2],
                ];
                let l1 = norm(&a1);
                a1.iter_mut().for_each(|x| *x /= l1);
                let a2 = [
                    unit[1] * a1[2] - unit[2] * a1[1],
                    unit[2] * a1[0] - unit[0] * a1[2],
                    unit[0] * a1[1] - unit[1] * a1[0],
                ];
                [a1.map(|x| x * len), a2.map(|x| x * len)]
            };
            OffsetData {
                speed_factor: kp.speed_factor(len * h),
                frame,
            }
        })
        .collect()
}

/// Uniform circle rule `θ_k = -π + (k + 1/2) 2π/M`; node `k` and `k + M/2`
/// are antipodal and share one product.
fn circle_rule(kp: &KernelParams, nodes: usize) -> Vec<PairedDirection> {
    let m = nodes + nodes % 2;
    let dtheta = 2.0 * PI / m as f64;
    let weight_at = |theta: f64| {
        let c = theta.cos();
        if kp.keeps_angle(c) {
            kp.angular_profile(c) * dtheta
        } else {
            0.0
        }
    };
    (0..m / 2)
        .map(|k| {
            let theta = -PI + (k as f64 + 0.5) * dtheta;
            PairedDirection {
                along: 0.5 * (theta.cos() - 1.0),
                across1: 0.5 * theta.sin(),
                across2: 0.0,
                weight: weight_at(theta),
                partner_weight: weight_at(theta + PI),
            }
        })
        .collect()
}

/// Product rule on `S²`: midpoint in the polar angle, uniform in azimuth.
fn sphere_rule(kp: &KernelParams, nodes: usize) -> Vec<PairedDirection> {
    let polar = (((nodes as f64) / 2.0).sqrt().round() as usize).max(1) * 2;
    let azimuth = 2 * polar;
    let dtheta = PI / polar as f64;
    let dphi = 2.0 * PI / azimuth as f64;
    let weight_at = |theta: f64| {
        let c = theta.cos();
        if kp.keeps_angle(c) {
            kp.angular_profile(c) * theta.sin() * dtheta * dphi
        } else {
            0.0
        }
    };
    let mut out = Vec::with_capacity(polar * azimuth / 2);
    for j in 0..polar / 2 {
        let theta = (j as f64 + 0.5) * dtheta;
        for l in 0..azimuth {
            let phi = (l as f64 + 0.5) * dphi;
            out.push(PairedDirection {
                along: 0.5 * (theta.cos() - 1.0),
                across1: 0.5 * theta.sin() * phi.cos(),
                across2: 0.5 * theta.sin() * phi.sin(),
                weight: weight_at(theta),
                partner_weight: weight_at(PI - theta),
            });
        }
    }
    out
}

/// Reconstructs the product `f(v + p1) f(v + p2)` for a node `v` and index-unit
/// displacements.
trait Sampler: Sync {
    fn product(&self, node: [isize; 3], p1: [f64; 3], p2: [f64; 3]) -> f64;
}

struct Linear<'a> {
    values: &'a [f64],
    n: isize,
    d: usize,
}

impl<'a> Linear<'a> {
    fn new(f: &'a Density) -> Self {
        Self {
            values: f.values(),
            n: f.grid().points_per_axis() as isize,
            d: f.grid().dim(),
        }
    }

    #[inline(always)]
    fn sample(&self, node: [isize; 3], p: [f64; 3]) -> f64 {
        multilinear(self.values, self.n, self.d, node, p)
    }
}

impl Sampler for Linear<'_> {
    #[inline(always)]
    fn product(&self, node: [isize; 3], p1: [f64; 3], p2: [f64; 3]) -> f64 {
        let a = self.sample(node, p1);
        if a == 0.0 {
            return 0.0;
        }
        a * self.sample(node, p2)
    }
}

#[inline(always)]
fn multilinear(values: &[f64], n: isize, d: usize, node: [isize; 3], p: [f64; 3]) -> f64 {
    if d == 2 {
        let x = node[0] as f64 + p[0];
        let y = node[1] as f64 + p[1];
        let (fx, fy) = (fast_floor(x), fast_floor(y));
        let (i, j) = (fx as isize, fy as isize);
        let (tx, ty) = (x - fx, y - fy);
        if i >= 0 && j >= 0 && i + 1 < n && j + 1 < n {
            let base = (i * n + j) as usize;
            let nn = n as usize;
            let (a, b, c, e) = (values[base], values[base + 1], values[base + nn], values[base + nn + 1]);
            return (1.0 - tx) * ((1.0 - ty) * a + ty * b) + tx * ((1.0 - ty) * c + ty * e);
        }
        if i < -1 || j < -1 || i >= n || j >= n {
            return 0.0;
        }
        let at = |a: isize, b: isize| {
            if a < 0 || b < 0 || a >= n || b >= n {
                0.0
            } else {
                values[(a * n + b) as usize]
            }
        };
        return (1.0 - tx) * ((1.0 - ty) * at(i, j) + ty * at(i, j + 1))
            + tx * ((1.0 - ty) * at(i + 1, j) + ty * at(i + 1, j + 1));
    }
    let mut base = [0isize; 3];
    let mut frac = [0.0; 3];
    for a in 0..3 {
        let x = node[a] as f64 + p[a];
        let fl = fast_floor(x);
        base[a] = fl as isize;
        frac[a] = x - fl;
        if base[a] < -1 || base[a] >= n {
            return 0.0;
        }
    }
    let mut acc = 0.0;
    for corner in 0..8usize {
        let mut w = 1.0;
        let mut flat = 0isize;
        let mut inside = true;
        for a in 0..3 {
            let bit = ((corner >> a) & 1) as isize;
            let idx = base[a] + bit;
            if idx < 0 || idx >= n {
                inside = false;
                break;
            }
            w *= if bit == 1 { frac[a] } else { 1.0 - frac[a] };
            flat = flat * n + idx;
        }
        if inside {
            acc += w * values[flat as usize];
        }
    }
    acc
}

struct LogCubic<'a> {
    values: &'a [f64],
    logs: Vec<f64>,
    /// Allowed overshoot past the enclosing cell for a base index, NaN when
    /// the surrounding 4^d block is not strictly positive.
    slack: Vec<f64>,
    n: isize,
    d: usize,
}

const LOG_FLOOR: f64 = 1e-300;

impl<'a> LogCubic<'a> {
    fn new(f: &'a Density) -> Self {
        let values = f.values();
        let g = f.grid();
        let n = g.points_per_axis() as isize;
        let d = g.dim();
        let logs: Vec<f64> = values
            .iter()
            .map(|&v| if v > LOG_FLOOR { v.ln() } else { f64::NEG_INFINITY })
            .collect();
        let slack = (0..g.len())
            .map(|i| {
                let mi = g.multi_index(i);
                if (0..d).any(|a| mi[a] < 1 || mi[a] as isize + 2 >= n) {
                    return f64::NAN;
                }
                let corners = 4usize.pow(d as u32);
                let at = |offsets: &[isize; 3]| {
                    let mut flat = 0isize;
                    for a in 0..d {
                        flat = flat * n + mi[a] as isize + offsets[a];
                    }
                    flat as usize
                };
                let mut curvature = [0.0f64; 3];
                for corner in 0..corners {
                    let mut off = [0isize; 3];
                    let mut rest = corner;
                    for o in off.iter_mut().take(d) {
                        *o = (rest % 4) as isize - 1;
                        rest /= 4;
                    }
                    if values[at(&off)] <= LOG_FLOOR {
                        return f64::NAN;
                    }
                    for a in 0..d {
                        if off[a] == 0 || off[a] == 1 {
                            let (mut lo, mut hi) = (off, off);
                            lo[a] -= 1;
                            hi[a] += 1;
                            let second = logs[at(&lo)] - 2.0 * logs[at(&off)] + logs[at(&hi)];
                            curvature[a] = curvature[a].max(second.abs());
                        }
                    }
                }
                curvature.iter().sum::<f64>() / 8.0
            })
            .collect();
        Self {
            values,
            logs,
            slack,
            n,
            d,
        }
    }

    #[inline(always)]
    fn log_sample(&self, node: [isize; 3], p: [f64; 3]) -> f64 {
        let n = self.n;
        if self.d == 2 {
            let x = node[0] as f64 + p[0];
            let y = node[1] as f64 + p[1];
            let (fx, fy) = (fast_floor(x), fast_floor(y));
            let (i, j) = (fx as isize, fy as isize);
            if i >= 1 && j >= 1 && i + 2 < n && j + 2 < n {
                let base = (i * n + j) as usize;
                let slack = self.slack[base];
                if !slack.is_nan() {
                    let wx = lagrange4(x - fx);
                    let wy = lagrange4(y - fy);
                    let nn = n as usize;
                    let start = base - nn - 1;
                    let mut acc = 0.0;
                    for (a, wa) in wx.iter().enumerate() {
                        let row = &self.logs[start + a * nn..start + a * nn + 4];
                        acc += wa * (wy[0] * row[0] + wy[1] * row[1] + wy[2] * row[2] + wy[3] * row[3]);
                    }
                    let cell = [
                        self.logs[base],
                        self.logs[base + 1],
                        self.logs[base + nn],
                        self.logs[base + nn + 1],
                    ];
                    let lo = cell.iter().copied().fold(f64::INFINITY, f64::min);
                    let hi = cell.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                    return acc.clamp(lo - slack, hi + slack);
                }
            }
        } else {
            let mut base = [0isize; 3];
            let mut frac = [0.0; 3];
            let mut inner = true;
            for a in 0..3 {
                let x = node[a] as f64 + p[a];
                let fl = fast_floor(x);
                base[a] = fl as isize;
                frac[a] = x - fl;
                inner &= base[a] >= 1 && base[a] + 2 < n;
            }
            if inner {
                let flat = ((base[0] * n + base[1]) * n + base[2]) as usize;
                let slack = self.slack[flat];
                if !slack.is_nan() {
                    let w = [lagrange4(frac[0]), lagrange4(frac[1]), lagrange4(frac[2])];
                    let mut acc = 0.0;
                    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
                    for a in 0..4 {
                        for b in 0..4 {
                            for c in 0..4 {
                                let idx = (((base[0] - 1 + a) * n + base[1] - 1 + b) * n + base[2] - 1 + c) as usize;
                                let l = self.logs[idx];
                                acc += w[0][a as usize] * w[1][b as usize] * w[2][c as usize] * l;
                                if (1..=2).contains(&a) && (1..=2).contains(&b) && (1..=2).contains(&c) {
                                    lo = lo.min(l);
                                    hi = hi.max(l);
                                }
                            }
                        }
                    }
                    return acc.clamp(lo - slack, hi + slack);
                }
            }
        }
        let v = multilinear(self.values, n, self.d, node, p);
        if v > LOG_FLOOR {
            v.ln()
        } else {
            f64::NEG_INFINITY
        }
    }
}

impl Sampler for LogCubic<'_> {
    #[inline(always)]
    fn product(&self, node: [isize; 3], p1: [f64; 3], p2: [f64; 3]) -> f64 {
        let a = self.log_sample(node, p1);
        if a == f64::NEG_INFINITY {
            return 0.0;
        }
        (a + self.log_sample(node, p2)).exp()
    }
}

/// `floor` for arguments well above `-FLOOR_SHIFT`, without a libm call.
#[inline(always)]
fn fast_floor(x: f64) -> f64 {
    const FLOOR_SHIFT: f64 = 1_048_576.0;
    ((x + FLOOR_SHIFT) as i64) as f64 - FLOOR_SHIFT
}

/// Cubic Lagrange weights for the nodes `-1, 0, 1, 2` at `t ∈ [0, 1)`.
#[inline(always)]
fn lagrange4(t: f64) -> [f64; 4] {
    let (tm1, tm2, tp1) = (t - 1.0, t - 2.0, t + 1.0);
    [
        -t * tm1 * tm2 / 6.0,
        tp1 * tm1 * tm2 / 2.0,
        -tp1 * t * tm2 / 2.0,
        tp1 * t * tm1 / 6.0,
    ]
}
