//! Uniform velocity grids, nonnegative grid densities and the integral
//! functionals evaluated on a single density.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

/// Values below this threshold are treated as zero by the entropy.
pub const ENTROPY_FLOOR: f64 = 1e-300;

/// Cell-centred tensor grid on the box `[-L, L)^d`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VelocityGrid {
    dim: usize,
    half_width: f64,
    points: usize,
}

impl VelocityGrid {
    pub fn new(dim: usize, half_width: f64, points: usize) -> Result<Self> {
        if dim != 2 && dim != 3 {
            return Err(Error::InvalidGrid(format!("dimension must be 2 or 3, got {dim}")));
        }
        if !(half_width > 0.0) || !half_width.is_finite() {
            return Err(Error::InvalidGrid(format!(
                "half-width must be positive, got {half_width}"
            )));
        }
        if points < 4 {
            return Err(Error::InvalidGrid(format!(
                "need at least 4 points per axis, got {points}"
            )));
        }
        Ok(Self {
            dim,
            half_width,
            points,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn half_width(&self) -> f64 {
        self.half_width
    }

    pub fn points_per_axis(&self) -> usize {
        self.points
    }

    pub fn spacing(&self) -> f64 {
        2.0 * self.half_width / self.points as f64
    }

    /// Quadrature weight `h^d` carried by every node.
    pub fn cell_volume(&self) -> f64 {
        self.spacing().powi(self.dim as i32)
    }

    pub fn len(&self) -> usize {
        self.points.pow(self.dim as u32)
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn axis_coord(&self, i: usize) -> f64 {
        -self.half_width + (i as f64 + 0.5) * self.spacing()
    }

    /// Axis indices of a flat node index; the last axis varies fastest.
    pub fn multi_index(&self, index: usize) -> [usize; 3] {
        let n = self.points;
        let mut out = [0; 3];
        let mut rest = index;
        for axis in (0..self.dim).rev() {
            out[axis] = rest % n;
            rest /= n;
        }
        out
    }

    pub fn flat_index(&self, multi: &[usize]) -> usize {
        multi[..self.dim].iter().fold(0, |acc, &i| acc * self.points + i)
    }

    /// Coordinates of a node; components beyond `dim` are zero.
    pub fn node(&self, index: usize) -> [f64; 3] {
        let multi = self.multi_index(index);
        let mut v = [0.0; 3];
        for axis in 0..self.dim {
            v[axis] = self.axis_coord(multi[axis]);
        }
        v
    }

    pub fn nodes(&self) -> impl Iterator<Item = [f64; 3]> + '_ {
        (0..self.len()).map(|i| self.node(i))
    }

    /// Index of the node closest to a point, clamped to the box.
    pub fn nearest_node(&self, point: &[f64]) -> usize {
        let h = self.spacing();
        let mut multi = [0usize; 3];
        for axis in 0..self.dim {
            let u = ((point[axis] + self.half_width) / h - 0.5).round();
            multi[axis] = u.clamp(0.0, (self.points - 1) as f64) as usize;
        }
        self.flat_index(&multi)
    }
}

/// Weight `<v> = (1 + |v|^2)^{1/2}`.
pub fn japanese_bracket(v: &[f64]) -> f64 {
    (1.0 + v.iter().map(|x| x * x).sum::<f64>()).sqrt()
}

pub(crate) fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// A nonnegative function sampled on the nodes of a [`VelocityGrid`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Density {
    grid: VelocityGrid,
    values: Vec<f64>,
}

impl Density {
    pub fn new(grid: VelocityGrid, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::LengthMismatch {
                expected: grid.len(),
                found: values.len(),
            });
        }
        if let Some((index, &value)) = values.iter().enumerate().find(|(_, v)| !(v.is_finite() && **v >= 0.0)) {
            return Err(Error::InvalidValue { index, value });
        }
        Ok(Self { grid, values })
    }

    pub fn zeros(grid: VelocityGrid) -> Self {
        Self {
            values: vec![0.0; grid.len()],
            grid,
        }
    }

    /// Samples `profile` at every node; negative samples are rejected.
    pub fn from_fn(grid: VelocityGrid, profile: impl Fn(&[f64]) -> f64) -> Result<Self> {
        let d = grid.dim();
        let values = grid.nodes().map(|v| profile(&v[..d])).collect();
        Self::new(grid, values)
    }

    /// Samples `m (2πθ)^{-d/2} exp(-|v - u|²/(2θ))`.
    pub fn maxwellian(grid: VelocityGrid, mass: f64, temperature: f64, drift: &[f64]) -> Result<Self> {
        if !(mass >= 0.0 && temperature > 0.0) {
            return Err(invalid("temperature", "need nonnegative mass and positive temperature"));
        }
        if drift.len() != grid.dim() {
            return Err(invalid("drift", "drift must have one component per dimension"));
        }
        let norm = mass * (2.0 * std::f64::consts::PI * temperature).powf(-0.5 * grid.dim() as f64);
        Self::from_fn(grid, |v| {
            let r2: f64 = v.iter().zip(drift).map(|(a, b)| (a - b).powi(2)).sum();
            norm * (-0.5 * r2 / temperature).exp()
        })
    }

    /// Builds a density after clipping negative entries to zero, returning
    /// the clipped mass alongside.
    pub fn from_clipped(grid: VelocityGrid, mut values: Vec<f64>) -> Result<(Self, f64)> {
        let mut clipped = 0.0;
        for v in values.iter_mut() {
            if *v < 0.0 {
                clipped -= *v;
                *v = 0.0;
            }
        }
        let density = Self::new(grid, values)?;
        Ok((density, clipped * grid.cell_volume()))
    }

    pub fn grid(&self) -> &VelocityGrid {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn max_value(&self) -> f64 {
        self.values.iter().copied().fold(0.0, f64::max)
    }

    pub fn scaled(&self, factor: f64) -> Result<Self> {
        Self::new(self.grid, self.values.iter().map(|v| v * factor).collect())
    }

    /// Multilinear interpolation with zero extension past the outer nodes.
    pub fn interpolate(&self, point: &[f64]) -> f64 {
        let g = &self.grid;
        let n = g.points_per_axis() as isize;
        let h = g.spacing();
        let d = g.dim();
        let mut base = [0isize; 3];
        let mut frac = [0.0; 3];
        for axis in 0..d {
            let u = (point[axis] + g.half_width()) / h - 0.5;
            if !(u > -1.0 && u < n as f64) {
                return 0.0;
            }
            let f = u.floor();
            base[axis] = f as isize;
            frac[axis] = u - f;
        }
        let mut acc = 0.0;
        for corner in 0..(1usize << d) {
            let mut weight = 1.0;
            let mut flat = 0isize;
            let mut inside = true;
            for axis in 0..d {
                let bit = ((corner >> axis) & 1) as isize;
                let i = base[axis] + bit;
                if i < 0 || i >= n {
                    inside = false;
                    break;
                }
                weight *= if bit == 1 { frac[axis] } else { 1.0 - frac[axis] };
                flat = flat * n + i;
            }
            if inside && weight != 0.0 {
                acc += weight * self.values[flat as usize];
            }
        }
        acc
    }
}

/// Mass, momentum and energy of a density.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Hydro {
    pub mass: f64,
    pub momentum: Vec<f64>,
    pub energy: f64,
}

pub fn mass_momentum_energy(f: &Density) -> Hydro {
    let g = f.grid();
    let d = g.dim();
    let w = g.cell_volume();
    let mut mass = 0.0;
    let mut momentum = vec![0.0; d];
    let mut energy = 0.0;
    for (i, &value) in f.values().iter().enumerate() {
        if value == 0.0 {
            continue;
        }
        let v = g.node(i);
        mass += value;
        for axis in 0..d {
            momentum[axis] += value * v[axis];
        }
        energy += value * v[..d].iter().map(|x| x * x).sum::<f64>();
    }
    momentum.iter_mut().for_each(|p| *p *= w);
    Hydro {
        mass: mass * w,
        momentum,
        energy: energy * w,
    }
}

pub fn mass(f: &Density) -> f64 {
    f.values().iter().sum::<f64>() * f.grid().cell_volume()
}

/// `∫ f ln f` with `0 ln 0 = 0`.
pub fn entropy(f: &Density) -> f64 {
    f.values()
        .iter()
        .filter(|&&v| v >= ENTROPY_FLOOR)
        .map(|&v| v * v.ln())
        .sum::<f64>()
        * f.grid().cell_volume()
}

/// Weighted norm `(∫ f^p <v>^{kp})^{1/p}`.
pub fn weighted_norm(f: &Density, p: f64, k: f64) -> Result<f64> {
    if !(p >= 1.0) {
        return Err(invalid("p", format!("weighted norm needs p >= 1, got {p}")));
    }
    let g = f.grid();
    let d = g.dim();
    let sum: f64 = f
        .values()
        .iter()
        .enumerate()
        .filter(|(_, &v)| v > 0.0)
        .map(|(i, &v)| {
            let weight = if k == 0.0 {
                1.0
            } else {
                japanese_bracket(&g.node(i)[..d]).powf(k * p)
            };
            v.powf(p) * weight
        })
        .sum();
    Ok((sum * g.cell_volume()).powf(1.0 / p))
}

/// Moment `∫ f |v|^k`.
pub fn moment(f: &Density, k: f64) -> Result<f64> {
    if !(k >= 0.0) {
        return Err(invalid("k", format!("moment order must be nonnegative, got {k}")));
    }
    let g = f.grid();
    let d = g.dim();
    let sum: f64 = f
        .values()
        .iter()
        .enumerate()
        .filter(|(_, &v)| v > 0.0)
        .map(|(i, &v)| {
            let r = norm(&g.node(i)[..d]);
            v * if k == 0.0 { 1.0 } else { r.powf(k) }
        })
        .sum();
    Ok(sum * g.cell_volume())
}

/// Admissible bounds on mass, energy and entropy of initial data.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HydroBounds {
    pub mass_lower: f64,
    pub mass_upper: f64,
    pub energy: f64,
    pub entropy: f64,
}

impl HydroBounds {
    pub fn new(mass_lower: f64, mass_upper: f64, energy: f64, entropy: f64) -> Result<Self> {
        if !(mass_lower > 0.0 && mass_lower <= mass_upper) {
            return Err(invalid("m0", "need 0 < m0 <= M0"));
        }
        if !(energy > 0.0) {
            return Err(invalid("E0", "energy bound must be positive"));
        }
        if !(entropy > 0.0) {
            return Err(invalid("H0", "entropy bound must be positive"));
        }
        Ok(Self {
            mass_lower,
            mass_upper,
            energy,
            entropy,
        })
    }

    pub fn admits(&self, f: &Density) -> bool {
        let h = mass_momentum_energy(f);
        h.mass >= self.mass_lower && h.mass <= self.mass_upper && h.energy <= self.energy && entropy(f) <= self.entropy
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use gauss_quad::legendre::GaussLegendre;

    fn grid(d: usize, l: f64, n: usize) -> VelocityGrid {
        VelocityGrid::new(d, l, n).unwrap()
    }

    #[test]
    fn maxwellian_carries_its_moments() {
        let g = grid(2, 8.0, 48);
        let f = Density::maxwellian(g, 1.3, 0.7, &[0.5, -0.25]).unwrap();
        let h = mass_momentum_energy(&f);
        assert!((h.mass - 1.3).abs() < 1e-10);
        assert!((h.momentum[0] - 0.65).abs() < 1e-10);
        assert!((h.momentum[1] + 0.325).abs() < 1e-10);
        assert!(Density::maxwellian(g, 1.0, 0.0, &[0.0, 0.0]).is_err());
        assert!(Density::maxwellian(g, 1.0, 1.0, &[0.0]).is_err());
    }

    fn normalized_gaussian(g: VelocityGrid) -> Density {
        let raw = Density::from_fn(g, |v| (-v.iter().map(|x| x * x).sum::<f64>()).exp()).unwrap();
        let m = mass(&raw);
        raw.scaled(1.0 / m).unwrap()
    }

    /// `∫_R x^k e^{-x^2} dx / ∫_R e^{-x^2} dx` by Gauss-Legendre on [-12, 12].
    fn gaussian_axis_ratio(k: i32) -> f64 {
        let quad = GaussLegendre::new(200.try_into().unwrap());
        let num = quad.integrate(-12.0, 12.0, |x| x.powi(k) * (-x * x).exp());
        let den = quad.integrate(-12.0, 12.0, |x| (-x * x).exp());
        num / den
    }

    #[test]
    fn grid_geometry() {
        let g = grid(2, 1.0, 8);
        assert_relative_eq!(g.spacing(), 0.25);
        assert_relative_eq!(g.cell_volume() * g.len() as f64, 4.0, epsilon = 1e-14);
        for v in g.nodes() {
            assert!(v[0] >= -1.0 && v[0] < 1.0 && v[1] >= -1.0 && v[1] < 1.0);
        }
        for i in 0..g.len() {
            assert_eq!(g.flat_index(&g.multi_index(i)), i);
        }
        assert!(VelocityGrid::new(2, 1.0, 3).is_err());
        assert!(VelocityGrid::new(4, 1.0, 8).is_err());
        assert!(VelocityGrid::new(2, 0.0, 8).is_err());
    }

    #[test]
    fn density_rejects_negative_and_wrong_length() {
        let g = grid(2, 1.0, 4);
        assert!(Density::new(g, vec![0.0; 15]).is_err());
        let mut v = vec![1.0; 16];
        v[3] = -1e-3;
        assert!(matches!(
            Density::new(g, v.clone()),
            Err(Error::InvalidValue { index: 3, .. })
        ));
        let (f, clipped) = Density::from_clipped(g, v).unwrap();
        assert_eq!(f.values()[3], 0.0);
        assert_relative_eq!(clipped, 1e-3 * g.cell_volume());
    }

    #[test]
    fn zero_density_functionals() {
        let f = Density::zeros(grid(2, 3.0, 16));
        let h = mass_momentum_energy(&f);
        assert_eq!((h.mass, h.energy), (0.0, 0.0));
        assert_eq!(h.momentum, vec![0.0, 0.0]);
        assert_eq!(entropy(&f), 0.0);
        assert_eq!(weighted_norm(&f, 2.0, 1.0).unwrap(), 0.0);
        assert_eq!(moment(&f, 2.0).unwrap(), 0.0);
    }

    #[test]
    fn gaussian_hydrodynamics() {
        let f = normalized_gaussian(grid(2, 6.0, 64));
        let h = mass_momentum_energy(&f);
        assert!((h.mass - 1.0).abs() < 1e-12);
        assert!(h.momentum.iter().all(|p| p.abs() < 1e-12));
        let energy = 2.0 * gaussian_axis_ratio(2);
        assert_relative_eq!(energy, 1.0, epsilon = 1e-12);
        assert!((h.energy - energy).abs() < 1e-6);
        assert!((moment(&f, 2.0).unwrap() - energy).abs() < 1e-6);
        assert!((moment(&f, 0.0).unwrap() - 1.0).abs() < 1e-12);
        // fourth moment: 2<x^4> + 2<x^2>^2 in two dimensions
        let fourth = 2.0 * gaussian_axis_ratio(4) + 2.0 * gaussian_axis_ratio(2).powi(2);
        assert!((moment(&f, 4.0).unwrap() - fourth).abs() < 1e-6);
    }

    #[test]
    fn constant_density_entropy() {
        let g = grid(2, 1.0, 8);
        assert_eq!(entropy(&Density::new(g, vec![1.0; 64]).unwrap()), 0.0);
        let e = std::f64::consts::E;
        let value = entropy(&Density::new(g, vec![e; 64]).unwrap());
        assert_relative_eq!(value, 4.0 * e, epsilon = 1e-12);
        let tiny = entropy(&Density::new(g, vec![1e-310; 64]).unwrap());
        assert_eq!(tiny, 0.0);
    }

    #[test]
    fn plain_norm_of_constant() {
        let g = grid(2, 1.0, 10);
        let f = Density::new(g, vec![1.0; 100]).unwrap();
        for p in [1.0, 1.5, 3.0] {
            assert_relative_eq!(weighted_norm(&f, p, 0.0).unwrap(), 4f64.powf(1.0 / p), epsilon = 1e-12);
        }
        assert!(weighted_norm(&f, 0.5, 0.0).is_err());
        assert!(moment(&f, -1.0).is_err());
    }

    #[test]
    fn delta_weighted_norm() {
        let g = grid(2, 2.0, 16);
        let i = g.nearest_node(&[1.0, 0.0]);
        let mut values = vec![0.0; g.len()];
        values[i] = 1.0 / g.cell_volume();
        let f = Density::new(g, values).unwrap();
        let value = weighted_norm(&f, 1.0, 2.0).unwrap();
        assert!((value - 2.0).abs() < 2.0 * 2.0 * g.spacing());
        let v = g.node(i);
        assert_relative_eq!(value, 1.0 + v[0] * v[0] + v[1] * v[1], epsilon = 1e-12);
    }

    #[test]
    fn interpolation_matches_nodes_and_linear_data() {
        let g = grid(2, 2.0, 8);
        let f = Density::from_fn(g, |v| 3.0 + v[0] - 0.5 * v[1]).unwrap();
        for i in 0..g.len() {
            let v = g.node(i);
            assert_relative_eq!(f.interpolate(&v[..2]), f.values()[i], epsilon = 1e-12);
        }
        assert_relative_eq!(f.interpolate(&[0.1, -0.3]), 3.25, epsilon = 1e-12);
        assert_eq!(f.interpolate(&[2.5, 0.0]), 0.0);
        let edge = g.axis_coord(7) + 0.5 * g.spacing();
        assert_relative_eq!(
            f.interpolate(&[edge, 0.25]),
            0.5 * f.interpolate(&[g.axis_coord(7), 0.25]),
            epsilon = 1e-12
        );
    }

    #[test]
    fn hydro_bounds() {
        assert!(HydroBounds::new(0.0, 1.0, 1.0, 1.0).is_err());
        assert!(HydroBounds::new(2.0, 1.0, 1.0, 1.0).is_err());
        let b = HydroBounds::new(0.5, 2.0, 4.0, 10.0).unwrap();
        assert!(b.admits(&normalized_gaussian(grid(2, 6.0, 32))));
    }
}
