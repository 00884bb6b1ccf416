//! Quadrature rules: Gauss–Legendre, Gauss–Hermite, and endpoint-graded
//! rules for integrands with algebraic singularities.
//!
//! The parametrix kernel behaves like `(t-u)^{gamma/2-1}` near its time
//! endpoints, so plain Gauss rules stall there. `singular_rule` removes a
//! known `(x-a)^alpha`-type endpoint singularity by the power substitution
//! `x = a + w * xi^p` with `p` chosen so the transformed integrand regains
//! several continuous derivatives, then applies Gauss–Legendre in `xi`.

use crate::math;
use alloc::vec;
use alloc::vec::Vec;

/// Nodes and weights for an integral over `[a, b]`.
#[derive(Clone, Debug)]
pub struct Rule {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

impl Rule {
    pub fn integrate(&self, mut f: impl FnMut(f64) -> f64) -> f64 {
        let mut acc = 0.0;
        for (&x, &w) in self.nodes.iter().zip(&self.weights) {
            acc += w * f(x);
        }
        acc
    }
}

/// Gauss–Legendre nodes and weights on `[-1, 1]` by Newton iteration on the
/// Legendre recurrence.
pub fn gauss_legendre(n: usize) -> Rule {
    assert!(n >= 1);
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    let m = n.div_ceil(2);
    for i in 0..m {
        // Chebyshev initial guess for the i-th positive root.
        let mut z = math::cos(core::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5));
        let mut pp = 0.0;
        for _ in 0..100 {
            let mut p0 = 1.0;
            let mut p1 = 0.0;
            for j in 0..n {
                let p2 = p1;
                p1 = p0;
                p0 = ((2.0 * j as f64 + 1.0) * z * p1 - j as f64 * p2) / (j as f64 + 1.0);
            }
            pp = n as f64 * (z * p0 - p1) / (z * z - 1.0);
            let dz = p0 / pp;
            z -= dz;
            if math::abs(dz) < 1e-15 {
                break;
            }
        }
        nodes[i] = -z;
        nodes[n - 1 - i] = z;
        let w = 2.0 / ((1.0 - z * z) * pp * pp);
        weights[i] = w;
        weights[n - 1 - i] = w;
    }
    Rule { nodes, weights }
}

/// Gauss–Legendre mapped to `[a, b]`.
pub fn gauss_legendre_on(n: usize, a: f64, b: f64) -> Rule {
    let base = gauss_legendre(n);
    let half = 0.5 * (b - a);
    let mid = 0.5 * (a + b);
    Rule {
        nodes: base.nodes.iter().map(|&x| mid + half * x).collect(),
        weights: base.weights.iter().map(|&w| w * half).collect(),
    }
}

/// Gauss–Hermite rule for `int f(x) w(x) dx` with weight `w = exp(-x^2)`.
///
/// Newton iteration on the physicists' Hermite recurrence; weights follow
/// from the derivative relation `H_n' = 2 n H_{n-1}`.
pub fn gauss_hermite(n: usize) -> Rule {
    assert!(n >= 1);
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    let m = (n + 1) / 2;
    let mut z = 0.0;
    for i in 0..m {
        // Standard initial guesses (largest root first).
        z = match i {
            0 => math::sqrt(2.0 * n as f64 + 1.0) - 1.85575 * math::powf(2.0 * n as f64 + 1.0, -1.0 / 6.0),
            1 => z - 1.14 * math::powf(n as f64, 0.426) / z,
            2 => 1.86 * z - 0.86 * nodes[0],
            3 => 1.91 * z - 0.91 * nodes[1],
            _ => 2.0 * z - nodes[i - 2],
        };
        let mut pp = 0.0;
        for _ in 0..200 {
            // Orthonormal Hermite recurrence keeps magnitudes tame.
            let mut p0 = math::powf(core::f64::consts::PI, -0.25);
            let mut p1 = 0.0;
            for j in 0..n {
                let p2 = p1;
                p1 = p0;
                p0 = z * math::sqrt(2.0 / (j as f64 + 1.0)) * p1
                    - math::sqrt(j as f64 / (j as f64 + 1.0)) * p2;
            }
            pp = math::sqrt(2.0 * n as f64) * p1;
            let dz = p0 / pp;
            z -= dz;
            if math::abs(dz) < 1e-14 {
                break;
            }
        }
        nodes[i] = z;
        nodes[n - 1 - i] = -z;
        weights[i] = 2.0 / (pp * pp);
        weights[n - 1 - i] = weights[i];
    }
    // Descending got filled first; flip to ascending for tidiness.
    nodes.reverse();
    weights.reverse();
    Rule { nodes, weights }
}

/// Expected value `E[f(Z)]` for standard normal `Z` using `n` Hermite nodes.
pub fn normal_expectation(n: usize, mut f: impl FnMut(f64) -> f64) -> f64 {
    let rule = gauss_hermite(n);
    let scale = core::f64::consts::SQRT_2;
    let norm = 1.0 / math::sqrt(core::f64::consts::PI);
    let mut acc = 0.0;
    for (&x, &w) in rule.nodes.iter().zip(&rule.weights) {
        acc += w * f(scale * x);
    }
    acc * norm
}

/// Rule for `int_0^span f(tau) dtau` where `f ~ C tau^{alpha}` near 0,
/// `alpha` in `(-1, 0]`. Nodes are the distances from 0, which stay exact
/// down to subnormals, so arbitrarily strong grading never collapses.
pub fn singular_rule_left(span: f64, n: usize, alpha: f64) -> Rule {
    assert!(span > 0.0 && alpha > -1.0 && alpha < 4.0);
    let p = grading_power(alpha);
    let gl = gauss_legendre(n);
    let mut nodes = Vec::with_capacity(n);
    let mut weights = Vec::with_capacity(n);
    for (&t, &gw) in gl.nodes.iter().zip(&gl.weights) {
        let xi = 0.5 * (t + 1.0);
        nodes.push(span * math::powf(xi, p));
        weights.push(gw * 0.5 * p * span * math::powf(xi, p - 1.0));
    }
    Rule { nodes, weights }
}

/// Quadrature for integrands singular at both endpoints, with node positions
/// reported as exact distances to each endpoint.
///
/// Represents `int_0^span f` with `f ~ tau_left^{alpha_left}` near 0 and
/// `~ tau_right^{alpha_right}` near `span`, where `tau_left + tau_right =
/// span`. Keeping both distances avoids the catastrophic cancellation of
/// `endpoint - tiny` that absolute coordinates suffer under strong grading.
#[derive(Clone, Debug)]
pub struct TwoSidedRule {
    pub from_left: Vec<f64>,
    pub from_right: Vec<f64>,
    pub weights: Vec<f64>,
}

impl TwoSidedRule {
    pub fn new(span: f64, n: usize, alpha_left: f64, alpha_right: f64) -> Self {
        assert!(span > 0.0);
        assert!(alpha_left > -1.0 && alpha_right > -1.0);
        let half = 0.5 * span;
        let half_n = (n / 2).max(1);
        let mut from_left = Vec::with_capacity(2 * half_n);
        let mut from_right = Vec::with_capacity(2 * half_n);
        let mut weights = Vec::with_capacity(2 * half_n);
        let left = singular_rule_left(half, half_n, alpha_left);
        for (&tau, &w) in left.nodes.iter().zip(&left.weights) {
            from_left.push(tau);
            from_right.push(span - tau);
            weights.push(w);
        }
        let right = singular_rule_left(half, half_n, alpha_right);
        for (&tau, &w) in right.nodes.iter().zip(&right.weights) {
            from_left.push(span - tau);
            from_right.push(tau);
            weights.push(w);
        }
        Self {
            from_left,
            from_right,
            weights,
        }
    }

    /// Integrates `f(distance_from_0, distance_from_span)`.
    pub fn integrate(&self, mut f: impl FnMut(f64, f64) -> f64) -> f64 {
        let mut acc = 0.0;
        for i in 0..self.weights.len() {
            acc += self.weights[i] * f(self.from_left[i], self.from_right[i]);
        }
        acc
    }

    /// The same rule rescaled to another span (the power substitution is
    /// homogeneous, so nodes and weights scale linearly).
    pub fn scaled(&self, ratio: f64) -> TwoSidedRule {
        TwoSidedRule {
            from_left: self.from_left.iter().map(|v| v * ratio).collect(),
            from_right: self.from_right.iter().map(|v| v * ratio).collect(),
            weights: self.weights.iter().map(|v| v * ratio).collect(),
        }
    }
}

/// Power `p` such that `(xi^p)^alpha * xi^{p-1}` is at least C^3 at 0.
/// Integer `alpha >= 0` needs no grading; fractional exponents (positive or
/// negative) do, since their higher derivatives blow up at 0.
fn grading_power(alpha: f64) -> f64 {
    let is_smooth = alpha >= 0.0 && math::abs(alpha - libm::round(alpha)) < 1e-12;
    if is_smooth {
        1.0
    } else {
        let p = 4.0 / (1.0 + alpha);
        if p < 1.0 {
            1.0
        } else {
            p
        }
    }
}

/// Graded mesh of `n` points on `[0, 1]` clustered at both ends (used as an
/// interpolation grid parameterization, not a quadrature).
pub fn double_graded_mesh(n: usize, power: f64) -> Vec<f64> {
    assert!(n >= 2);
    (0..n)
        .map(|i| {
            let u = i as f64 / (n - 1) as f64;
            // Symmetric power clustering around both endpoints.
            if u <= 0.5 {
                0.5 * math::powf(2.0 * u, power)
            } else {
                1.0 - 0.5 * math::powf(2.0 * (1.0 - u), power)
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn legendre_integrates_polynomials_exactly() {
        let r = gauss_legendre_on(8, 0.0, 2.0);
        // degree 15 is exact for 8 nodes
        let got = r.integrate(|x| 3.0 * x * x * x - x + 1.0);
        let want = 3.0 * 4.0 - 2.0 + 2.0; // int_0^2
        assert!((got - want).abs() < 1e-12);
    }

    #[test]
    fn legendre_smooth_spectral() {
        let r = gauss_legendre_on(24, -1.0, 1.0);
        let got = r.integrate(math::exp);
        let want = math::exp(1.0) - math::exp(-1.0);
        assert!((got - want).abs() < 1e-14);
    }

    #[test]
    fn hermite_moments() {
        for &n in &[8usize, 16, 24, 32] {
            let m2 = normal_expectation(n, |z| z * z);
            let m4 = normal_expectation(n, |z| z * z * z * z);
            assert!((m2 - 1.0).abs() < 1e-12, "n={n} m2={m2}");
            assert!((m4 - 3.0).abs() < 1e-11, "n={n} m4={m4}");
        }
    }

    #[test]
    fn singular_rule_handles_endpoint_power() {
        // int_0^1 x^{-1/2} dx = 2, singular at the left endpoint.
        let r = singular_rule_left(1.0, 48, -0.5);
        let got = r.integrate(|x| 1.0 / math::sqrt(x));
        assert!((got - 2.0).abs() < 1e-9, "got={got}");
        // Both endpoints singular: int_0^1 x^{-1/4} (1-x)^{-3/4} = B(3/4, 1/4).
        let r = TwoSidedRule::new(1.0, 64, -0.25, -0.75);
        let got = r.integrate(|dl, dr| math::powf(dl, -0.25) * math::powf(dr, -0.75));
        let want = math::gamma(0.75) * math::gamma(0.25) / math::gamma(1.0);
        assert!((got - want).abs() < 1e-7, "got={got} want={want}");
        // The parametrix kernel exponent: gamma = 1/2 means alpha = -3/4.
        let r = TwoSidedRule::new(0.5, 64, -0.5, -0.75);
        let got = r.integrate(|dl, dr| math::powf(dl, -0.5) * math::powf(dr, -0.75));
        let want = math::gamma(0.5) * math::gamma(0.25) / math::gamma(0.75)
            * math::powf(0.5, -0.25);
        assert!((got - want).abs() / want < 1e-8, "got={got} want={want}");
    }

    #[test]
    fn graded_mesh_is_monotone_and_symmetric() {
        let m = double_graded_mesh(33, 3.0);
        assert_eq!(m[0], 0.0);
        assert_eq!(*m.last().unwrap(), 1.0);
        for w in m.windows(2) {
            assert!(w[1] > w[0]);
        }
        for i in 0..m.len() {
            assert!((m[i] + m[m.len() - 1 - i] - 1.0).abs() < 1e-12);
        }
    }
}
