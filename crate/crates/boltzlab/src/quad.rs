//! Small quadrature helpers shared by the kernel and estimate modules.

use std::sync::OnceLock;

use gauss_quad::legendre::GaussLegendre;

use crate::error::{Error, Result};

/// Gauss-Legendre nodes and weights on `[-1, 1]` for a few fixed orders.
pub(crate) fn legendre(order: usize) -> &'static [(f64, f64)] {
    static RULES: OnceLock<Vec<Vec<(f64, f64)>>> = OnceLock::new();
    let rules = RULES.get_or_init(|| {
        (0..=24)
            .map(|k| {
                if k == 0 {
                    Vec::new()
                } else {
                    GaussLegendre::new(k.try_into().unwrap())
                        .into_node_weight_pairs()
                        .to_vec()
                }
            })
            .collect()
    });
    &rules[order.clamp(1, 24)]
}

/// Composite Gauss-Legendre rule on `[a, b]` with panels no wider than `max_panel`.
pub(crate) fn composite<F: FnMut(f64) -> f64>(a: f64, b: f64, max_panel: f64, order: usize, mut f: F) -> f64 {
    if !(b > a) {
        return 0.0;
    }
    let panels = ((b - a) / max_panel).ceil().max(1.0) as usize;
    let width = (b - a) / panels as f64;
    let rule = legendre(order);
    let mut total = 0.0;
    for k in 0..panels {
        let mid = a + (k as f64 + 0.5) * width;
        let half = 0.5 * width;
        let mut panel = 0.0;
        for &(x, w) in rule {
            panel += w * f(mid + half * x);
        }
        total += panel * half;
    }
    total
}

/// Double-exponential quadrature of a bounded integrand, failing when the
/// reported error exceeds `abs_tol`.
pub(crate) fn tanh_sinh<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, abs_tol: f64) -> Result<f64> {
    let out = quadrature::double_exponential::integrate(f, a, b, abs_tol);
    if !out.integral.is_finite() || out.error_estimate > abs_tol {
        return Err(Error::Quadrature {
            achieved: out.error_estimate,
            target: abs_tol,
        });
    }
    Ok(out.integral)
}

/// Splits `[a, b]` into `pieces` equal parts and sums [`tanh_sinh`] over them.
pub(crate) fn tanh_sinh_split<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, pieces: usize, abs_tol: f64) -> Result<f64> {
    let width = (b - a) / pieces as f64;
    let tol = abs_tol / pieces as f64;
    (0..pieces)
        .map(|k| tanh_sinh(&f, a + k as f64 * width, a + (k + 1) as f64 * width, tol))
        .sum()
}
