//! Truncated convex functions `φ_κ`, their companions `Φ_κ`, and the
//! associated Bregman distances, in plain and shifted form.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::grid::Density;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Profile {
    /// `(r ∧ κ)^p + p κ^{p-1} (r - κ)_+`
    Power { p: f64, kappa: f64 },
    /// `r ↦ r`, which after the shift becomes `(r - a)_+`.
    HardCut,
}

/// A convex, nondecreasing function `φ(r) = φ_base((r - a)_+)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TruncationFunctional {
    profile: Profile,
    shift: f64,
}

impl TruncationFunctional {
    pub fn new(p: f64, kappa: f64, shift: f64) -> Result<Self> {
        if !(p > 1.0) || !p.is_finite() {
            return Err(invalid("p", format!("need p > 1, got {p}")));
        }
        if !(kappa >= 1.0) || !kappa.is_finite() {
            return Err(invalid("kappa", format!("need kappa >= 1, got {kappa}")));
        }
        check_shift(shift)?;
        Ok(Self {
            profile: Profile::Power { p, kappa },
            shift,
        })
    }

    /// The unshifted power profile.
    pub fn power(p: f64, kappa: f64) -> Result<Self> {
        Self::new(p, kappa, 0.0)
    }

    /// The Kruzhkov-type function `(r - a)_+`.
    pub fn hard_cut(a: f64) -> Result<Self> {
        check_shift(a)?;
        Ok(Self {
            profile: Profile::HardCut,
            shift: a,
        })
    }

    pub fn profile(&self) -> Profile {
        self.profile
    }

    pub fn shift(&self) -> f64 {
        self.shift
    }

    /// Exponent of the power profile, 1 for the hard cut.
    pub fn exponent(&self) -> f64 {
        match self.profile {
            Profile::Power { p, .. } => p,
            Profile::HardCut => 1.0,
        }
    }

    pub fn kappa(&self) -> f64 {
        match self.profile {
            Profile::Power { kappa, .. } => kappa,
            Profile::HardCut => f64::INFINITY,
        }
    }

    fn base(&self, u: f64) -> f64 {
        match self.profile {
            Profile::Power { p, kappa } => {
                if u <= kappa {
                    u.powf(p)
                } else {
                    kappa.powf(p) + p * kappa.powf(p - 1.0) * (u - kappa)
                }
            }
            Profile::HardCut => u,
        }
    }

    /// Left-continuous derivative of the base profile.
    fn base_slope(&self, u: f64) -> f64 {
        match self.profile {
            Profile::Power { p, kappa } => p * u.min(kappa).powf(p - 1.0),
            Profile::HardCut => {
                if u > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }

    fn base_companion(&self, u: f64) -> f64 {
        match self.profile {
            Profile::Power { p, kappa } => (p - 1.0) * u.min(kappa).powf(p),
            Profile::HardCut => 0.0,
        }
    }

    pub fn phi(&self, r: f64) -> f64 {
        self.base((r - self.shift).max(0.0))
    }

    /// Left-continuous derivative `φ'(r)`.
    pub fn phi_prime(&self, r: f64) -> f64 {
        if r <= self.shift {
            0.0
        } else {
            self.base_slope(r - self.shift)
        }
    }

    /// `Φ(r) = r φ'(r) - φ(r)`, evaluated through its closed form.
    pub fn phi_big(&self, r: f64) -> f64 {
        let u = (r - self.shift).max(0.0);
        if u == 0.0 {
            return 0.0;
        }
        self.base_companion(u) + self.shift * self.base_slope(u)
    }

    /// Bregman distance `φ(ρ) - φ(r) - φ'(r)(ρ - r) ≥ 0`.
    pub fn bregman(&self, r: f64, rho: f64) -> f64 {
        if r == rho {
            return 0.0;
        }
        (self.phi(rho) - self.phi(r) - self.phi_prime(r) * (rho - r)).max(0.0)
    }

    /// `∫ φ(f)` over the grid.
    pub fn integral(&self, f: &Density) -> f64 {
        f.values().iter().map(|&v| self.phi(v)).sum::<f64>() * f.grid().cell_volume()
    }
}

fn check_shift(a: f64) -> Result<()> {
    if !(a >= 0.0) || !a.is_finite() {
        return Err(invalid("a", format!("shift must be finite and nonnegative, got {a}")));
    }
    Ok(())
}

/// `C_{1,p} = 2^{-p} - 1 + p/2`, the ratio `d(r, r/2) / r^p` below the threshold.
pub fn half_step_constant(p: f64) -> f64 {
    2f64.powf(-p) - 1.0 + 0.5 * p
}

/// The same minimum as [`threshold_crossing_constant`] without halving the
/// `Γ(1/2)` term. It is not a valid lower bound near `r = κ/2`, `s = κ`.
pub fn threshold_crossing_constant_unhalved(p: f64) -> f64 {
    let second = (p - 1.0) * 2f64.powf(-p) - p * 2f64.powf(1.0 - p) + 1.0;
    (1.0 - 2f64.powf(1.0 - p)).min(second)
}

/// A constant `C` with `d(r, s) ≥ C (φ(s) + κ^p)` for all `r < κ/2` and `s > κ`.
///
/// Writing `s = κ + t`, the distance splits into `κ^p Γ(r/κ)` plus
/// `p t (κ^{p-1} - r^{p-1})`, where `Γ(x) = (p-1)x^p - p x^{p-1} + 1` is
/// decreasing on `(0, 1)`. Comparing each piece with `2κ^p + pκ^{p-1}t`
/// gives the minimum below.
pub fn threshold_crossing_constant(p: f64) -> f64 {
    let gamma_half = (p - 1.0) * 2f64.powf(-p) - p * 2f64.powf(1.0 - p) + 1.0;
    (1.0 - 2f64.powf(1.0 - p)).min(0.5 * gamma_half)
}
