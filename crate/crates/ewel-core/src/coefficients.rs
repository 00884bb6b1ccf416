//! SDE coefficient fields and assumption validation.
//!
//! A field carries a drift `b(t,x)` and a diffusion coefficient
//! `sigma(t,x)` together with its declared smoothness regime: genuinely
//! Hölder continuous with exponent `gamma` (built from clipped Weierstrass
//! sums, square-root kinks, ...) or piecewise smooth with discontinuities on
//! a finite union of level-set manifolds.
//!
//! The model zoo is closed-form only: no user-supplied code, so every
//! evaluator can be re-evaluated exactly inside quadratures and across
//! processes. `validate_assumptions` measures the boundedness, uniform
//! ellipticity and Hölder constants on a sample grid and reports violations
//! instead of failing.

use crate::error::{EwelError, Result};
use crate::math;
use crate::rng::{self, CounterRng};
use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

/// Smoothness regime of a coefficient field.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Regime {
    /// Drift and diffusion jointly Hölder: `|s-t|^{gamma/2} + |x-y|^gamma`.
    Holder { gamma: f64 },
    /// Smooth diffusion, drift smooth away from a discontinuity set.
    PiecewiseSmooth,
}

impl Regime {
    /// Hölder exponent used in rate formulas (`1` in the piecewise regime).
    pub fn gamma(&self) -> f64 {
        match self {
            Regime::Holder { gamma } => *gamma,
            Regime::PiecewiseSmooth => 1.0,
        }
    }
}

/// Evaluable drift/diffusion pair.
///
/// Implementations must be pure functions of `(t, x)`; the simulation and
/// quadrature engines share them freely across workers.
pub trait Field: Sync {
    fn dim(&self) -> usize;

    /// Drift vector, `out` has length `dim`.
    fn drift(&self, t: f64, x: &[f64], out: &mut [f64]);

    /// Diffusion coefficient, row-major `dim x dim` in `out`.
    fn sigma(&self, t: f64, x: &[f64], out: &mut [f64]);

    fn time_dependent(&self) -> bool {
        false
    }

    /// Scalar fast path, `dim == 1` only.
    fn drift1(&self, t: f64, x: f64) -> f64 {
        let mut out = [0.0];
        self.drift(t, &[x], &mut out);
        out[0]
    }

    /// Scalar fast path, `dim == 1` only.
    fn sigma1(&self, t: f64, x: f64) -> f64 {
        let mut out = [0.0];
        self.sigma(t, &[x], &mut out);
        out[0]
    }

    /// Batched 1D drift; overridden where vectorization pays.
    fn drift1_slice(&self, t: f64, xs: &[f64], out: &mut [f64]) {
        for (o, &x) in out.iter_mut().zip(xs) {
            *o = self.drift1(t, x);
        }
    }

    /// Batched 1D diffusion coefficient.
    fn sigma1_slice(&self, t: f64, xs: &[f64], out: &mut [f64]) {
        for (o, &x) in out.iter_mut().zip(xs) {
            *o = self.sigma1(t, x);
        }
    }

    /// Diffusion matrix `a = sigma sigma*`, row-major.
    fn diffusion_matrix(&self, t: f64, x: &[f64], out: &mut [f64]) {
        let d = self.dim();
        let mut s = [0.0; crate::MAX_DIM * crate::MAX_DIM];
        let s = &mut s[..d * d];
        self.sigma(t, x, s);
        for i in 0..d {
            for j in 0..d {
                let mut acc = 0.0;
                for k in 0..d {
                    acc += s[i * d + k] * s[j * d + k];
                }
                out[i * d + j] = acc;
            }
        }
    }
}

/// Truncated Weierstrass sum `sum_{k<n} base^{-gamma k} cos(base^k pi x)`.
///
/// With an integer `base >= 2` the sum is genuinely `gamma`-Hölder
/// continuous (and nowhere smoother) down to the resolution `base^{-n}`.
pub fn weierstrass(x: f64, gamma: f64, base: u32, n_terms: u32) -> f64 {
    debug_assert!(base >= 2 && n_terms >= 1);
    let b = base as f64;
    let a = math::powf(b, -gamma);
    let mut amp = 1.0;
    let mut scale = 1.0;
    let mut acc = 0.0;
    for _ in 0..n_terms {
        acc += amp * math::cos_pi(scale * x);
        amp *= a;
        scale *= b;
    }
    acc
}

/// Batched Weierstrass evaluation; the inner loop over `xs` vectorizes.
pub fn weierstrass_slice(xs: &[f64], gamma: f64, base: u32, n_terms: u32, out: &mut [f64]) {
    let b = base as f64;
    let a = math::powf(b, -gamma);
    out.fill(0.0);
    let mut amp = 1.0;
    let mut scale = 1.0;
    for _ in 0..n_terms {
        for (o, &x) in out.iter_mut().zip(xs) {
            *o += amp * math::cos_pi(scale * x);
        }
        amp *= a;
        scale *= b;
    }
}

/// Sign with the limit taken from the positive side at 0.
#[inline(always)]
pub fn psign(x: f64) -> f64 {
    if x >= 0.0 {
        1.0
    } else {
        -1.0
    }
}

// ---------------------------------------------------------------------------
// Discontinuity manifolds
// ---------------------------------------------------------------------------

/// Closed-form level-set manifold with signed distance and projection.
///
/// Sign conventions: spheres are positive inside the bounded region; a
/// hyperplane `{<n,x> = c}` is positive on the side the unit normal points
/// away from (`d_S = c - <n,x>` ... the half-space `<n,x> < c`); a point in
/// 1D uses `d_S(z) = z - p`.
#[derive(Clone, Debug, PartialEq)]
pub enum Manifold {
    Point1D { p: f64 },
    Hyperplane { normal: Vec<f64>, offset: f64 },
    Sphere { center: Vec<f64>, radius: f64 },
}

impl Manifold {
    pub fn point_1d(p: f64) -> Self {
        Manifold::Point1D { p }
    }

    pub fn hyperplane(normal: Vec<f64>, offset: f64) -> Result<Self> {
        let n2: f64 = normal.iter().map(|v| v * v).sum();
        if n2 <= 0.0 || !n2.is_finite() {
            return Err(EwelError::Config(String::from(
                "hyperplane normal must be nonzero",
            )));
        }
        let inv = 1.0 / math::sqrt(n2);
        Ok(Manifold::Hyperplane {
            normal: normal.iter().map(|v| v * inv).collect(),
            offset: offset * inv,
        })
    }

    pub fn sphere(center: Vec<f64>, radius: f64) -> Result<Self> {
        if !(radius > 0.0) {
            return Err(EwelError::Config(String::from(
                "sphere radius must be positive",
            )));
        }
        Ok(Manifold::Sphere { center, radius })
    }

    pub fn dim(&self) -> usize {
        match self {
            Manifold::Point1D { .. } => 1,
            Manifold::Hyperplane { normal, .. } => normal.len(),
            Manifold::Sphere { center, .. } => center.len(),
        }
    }

    /// Signed distance to the zero level set.
    pub fn signed_distance(&self, x: &[f64]) -> f64 {
        match self {
            Manifold::Point1D { p } => x[0] - p,
            Manifold::Hyperplane { normal, offset } => {
                let dot: f64 = normal.iter().zip(x).map(|(n, v)| n * v).sum();
                offset - dot
            }
            Manifold::Sphere { center, radius } => {
                let r: f64 = math::sqrt(
                    center
                        .iter()
                        .zip(x)
                        .map(|(c, v)| (v - c) * (v - c))
                        .sum::<f64>(),
                );
                radius - r
            }
        }
    }

    /// Orthogonal projection onto the manifold.
    pub fn project(&self, x: &[f64], out: &mut [f64]) {
        match self {
            Manifold::Point1D { p } => out[0] = *p,
            Manifold::Hyperplane { normal, offset } => {
                let dot: f64 = normal.iter().zip(x).map(|(n, v)| n * v).sum();
                let shift = dot - offset;
                for (o, (&v, &n)) in out.iter_mut().zip(x.iter().zip(normal)) {
                    *o = v - shift * n;
                }
            }
            Manifold::Sphere { center, radius } => {
                let mut r2 = 0.0;
                for (v, c) in x.iter().zip(center) {
                    r2 += (v - c) * (v - c);
                }
                let r = math::sqrt(r2);
                if r == 0.0 {
                    // Center is equidistant; pick the +e1 representative.
                    out.copy_from_slice(center);
                    out[0] += radius;
                } else {
                    let scale = radius / r;
                    for (o, (&v, &c)) in out.iter_mut().zip(x.iter().zip(center)) {
                        *o = c + (v - c) * scale;
                    }
                }
            }
        }
    }

    /// Closed-form distance between the zero level sets of two manifolds.
    pub fn distance_to(&self, other: &Manifold) -> f64 {
        use Manifold::*;
        match (self, other) {
            (Point1D { p }, Point1D { p: q }) => math::abs(p - q),
            (Point1D { p }, m) | (m, Point1D { p }) => math::abs(m.signed_distance(&[*p])),
            (Sphere { center, radius }, m @ Hyperplane { .. })
            | (m @ Hyperplane { .. }, Sphere { center, radius }) => {
                let d = math::abs(m.signed_distance(center));
                (d - radius).max(0.0)
            }
            (
                Sphere { center: c1, radius: r1 },
                Sphere { center: c2, radius: r2 },
            ) => {
                let d = math::sqrt(
                    c1.iter()
                        .zip(c2)
                        .map(|(a, b)| (a - b) * (a - b))
                        .sum::<f64>(),
                );
                // Surfaces intersect iff |r1 - r2| <= d <= r1 + r2.
                if d >= (r1 - r2).abs() && d <= r1 + r2 {
                    0.0
                } else if d > r1 + r2 {
                    d - r1 - r2
                } else {
                    (r1 - r2).abs() - d
                }
            }
            (Hyperplane { normal: n1, offset: c1 }, Hyperplane { normal: n2, offset: c2 }) => {
                let dot: f64 = n1.iter().zip(n2).map(|(a, b)| a * b).sum();
                if math::abs(math::abs(dot) - 1.0) > 1e-12 {
                    0.0
                } else if dot > 0.0 {
                    math::abs(c1 - c2)
                } else {
                    math::abs(c1 + c2)
                }
            }
        }
    }
}

/// Finite union of pairwise disjoint discontinuity manifolds.
#[derive(Clone, Debug, PartialEq)]
pub struct DiscontinuitySet {
    pub manifolds: Vec<Manifold>,
}

impl DiscontinuitySet {
    pub fn new(manifolds: Vec<Manifold>) -> Result<Self> {
        if manifolds.is_empty() {
            return Err(EwelError::Config(String::from(
                "discontinuity set must contain at least one manifold",
            )));
        }
        let d = manifolds[0].dim();
        if manifolds.iter().any(|m| m.dim() != d) {
            return Err(EwelError::Config(String::from(
                "discontinuity manifolds must share a dimension",
            )));
        }
        Ok(Self { manifolds })
    }

    /// Unsigned distance to the union.
    pub fn distance(&self, x: &[f64]) -> f64 {
        self.manifolds
            .iter()
            .map(|m| math::abs(m.signed_distance(x)))
            .fold(f64::INFINITY, f64::min)
    }

    /// Index and signed distance of the nearest manifold.
    pub fn nearest(&self, x: &[f64]) -> (usize, f64) {
        let mut best = (0, f64::INFINITY);
        for (i, m) in self.manifolds.iter().enumerate() {
            let s = m.signed_distance(x);
            if math::abs(s) < math::abs(best.1) {
                best = (i, s);
            }
        }
        best
    }

    /// Minimum cross-distance between distinct manifolds (infinite for a
    /// single manifold).
    pub fn min_cross_distance(&self) -> f64 {
        let mut best = f64::INFINITY;
        for i in 0..self.manifolds.len() {
            for j in i + 1..self.manifolds.len() {
                best = best.min(self.manifolds[i].distance_to(&self.manifolds[j]));
            }
        }
        best
    }
}

// ---------------------------------------------------------------------------
// Model zoo
// ---------------------------------------------------------------------------

/// Closed-form drift/diffusion models.
#[derive(Clone, Debug, PartialEq)]
pub enum Model {
    /// `b = const`, `sigma = const` (any dim).
    Constant { drift: Vec<f64>, sigma: Vec<f64>, dim: usize },
    /// 1D bounded smooth drift `amp tanh(rate x)`, constant diffusion.
    TanhDrift { amp: f64, rate: f64, sigma: f64 },
    /// 1D Ornstein–Uhlenbeck `b = -rate x`, constant diffusion.
    OrnsteinUhlenbeck { rate: f64, sigma: f64 },
    /// 1D truly `gamma`-Hölder diffusion
    /// `sigma(x) = offset + amp clip(W(x), -clip, clip)`,
    /// drift `drift_amp tanh(x)`.
    WeierstrassSigma {
        gamma: f64,
        base: u32,
        n_terms: u32,
        offset: f64,
        amp: f64,
        clip: f64,
        drift_amp: f64,
    },
    /// 1D CIR-like model `b = a - k x`, `sigma = eta + min(vol sqrt|x|, cap)`.
    CirLike { a: f64, k: f64, vol: f64, eta: f64, cap: f64 },
    /// 1D piecewise drift `amp sign(x)`, constant diffusion.
    SignDrift { amp: f64, sigma: f64 },
    /// Piecewise drift `amp n sign(<n,x> - c)` across a hyperplane.
    HyperplaneDrift { normal: Vec<f64>, offset: f64, amp: f64, sigma: f64 },
    /// Piecewise drift `amp e sign(d_S(x))` across a sphere (constant jump
    /// direction `e = e_1`).
    SphereDrift { center: Vec<f64>, radius: f64, amp: f64, sigma: f64 },
    /// 1D driftless model with `sigma(t) = base + slope t` (C^1 in time).
    TimeLinearSigma { base: f64, slope: f64 },
}

/// A model together with its declared assumption constants.
#[derive(Clone, Debug)]
pub struct CoefficientField {
    pub model: Model,
    pub dim: usize,
    pub regime: Regime,
    /// Declared drift sup bound (over the default validation box).
    pub k1: f64,
    /// Declared diffusion sup bound.
    pub k2: f64,
    /// Declared ellipticity constant: eigenvalues of `sigma sigma*` lie in
    /// `[1/lambda, lambda]`.
    pub lambda: f64,
    pub discontinuities: Option<DiscontinuitySet>,
}

/// Half-width of the default validation box; declared constants cover it.
pub const DEFAULT_BOX: f64 = 5.0;

impl CoefficientField {
    pub fn constant(dim: usize, drift: Vec<f64>, sigma: Vec<f64>) -> Result<Self> {
        if drift.len() != dim || sigma.len() != dim * dim {
            return Err(EwelError::Config(format!(
                "constant model wants drift len {dim} and sigma len {}",
                dim * dim
            )));
        }
        let k1 = math::sqrt(drift.iter().map(|v| v * v).sum::<f64>());
        let k2 = math::sqrt(sigma.iter().map(|v| v * v).sum::<f64>());
        let model = Model::Constant { drift, sigma, dim };
        let mut f = Self {
            model,
            dim,
            regime: Regime::Holder { gamma: 1.0 },
            k1: k1.max(1e-12),
            k2,
            lambda: 1.0,
            discontinuities: None,
        };
        f.lambda = f.measure_lambda();
        Ok(f)
    }

    pub fn tanh_drift(amp: f64, rate: f64, sigma: f64) -> Self {
        Self {
            model: Model::TanhDrift { amp, rate, sigma },
            dim: 1,
            regime: Regime::Holder { gamma: 1.0 },
            k1: math::abs(amp),
            k2: math::abs(sigma),
            lambda: (sigma * sigma).max(1.0 / (sigma * sigma)),
            discontinuities: None,
        }
    }

    pub fn ornstein_uhlenbeck(rate: f64, sigma: f64) -> Self {
        Self {
            model: Model::OrnsteinUhlenbeck { rate, sigma },
            dim: 1,
            regime: Regime::Holder { gamma: 1.0 },
            // Unbounded drift; the declared bound covers the default box.
            k1: rate * 2.0 * DEFAULT_BOX,
            k2: math::abs(sigma),
            lambda: (sigma * sigma).max(1.0 / (sigma * sigma)),
            discontinuities: None,
        }
    }

    pub fn weierstrass_sigma(
        gamma: f64,
        base: u32,
        n_terms: u32,
        offset: f64,
        amp: f64,
        clip: f64,
        drift_amp: f64,
    ) -> Result<Self> {
        if !(gamma > 0.0 && gamma < 1.0) || base < 2 || n_terms < 1 {
            return Err(EwelError::Config(String::from(
                "weierstrass sigma wants gamma in (0,1), base >= 2, n_terms >= 1",
            )));
        }
        let lo = offset - math::abs(amp) * clip;
        let hi = offset + math::abs(amp) * clip;
        if lo <= 0.0 {
            return Err(EwelError::Config(format!(
                "weierstrass sigma loses ellipticity: min sigma = {lo}"
            )));
        }
        Ok(Self {
            model: Model::WeierstrassSigma {
                gamma,
                base,
                n_terms,
                offset,
                amp,
                clip,
                drift_amp,
            },
            dim: 1,
            regime: Regime::Holder { gamma },
            k1: math::abs(drift_amp),
            k2: hi,
            lambda: (hi * hi).max(1.0 / (lo * lo)) * 1.0001,
            discontinuities: None,
        })
    }

    pub fn cir_like(a: f64, k: f64, vol: f64, eta: f64, cap: f64) -> Self {
        let hi = eta + cap;
        let lo = eta;
        Self {
            model: Model::CirLike { a, k, vol, eta, cap },
            dim: 1,
            regime: Regime::Holder { gamma: 0.5 },
            k1: math::abs(a) + math::abs(k) * 2.0 * DEFAULT_BOX,
            k2: hi,
            lambda: if lo > 0.0 {
                (hi * hi).max(1.0 / (lo * lo)) * 1.0001
            } else {
                f64::INFINITY
            },
            discontinuities: None,
        }
    }

    pub fn sign_drift(amp: f64, sigma: f64) -> Self {
        Self {
            model: Model::SignDrift { amp, sigma },
            dim: 1,
            regime: Regime::PiecewiseSmooth,
            k1: math::abs(amp),
            k2: math::abs(sigma),
            lambda: (sigma * sigma).max(1.0 / (sigma * sigma)),
            discontinuities: Some(DiscontinuitySet {
                manifolds: vec![Manifold::point_1d(0.0)],
            }),
        }
    }

    pub fn hyperplane_drift(normal: Vec<f64>, offset: f64, amp: f64, sigma: f64) -> Result<Self> {
        let dim = normal.len();
        let manifold = Manifold::hyperplane(normal, offset)?;
        Ok(Self {
            model: match &manifold {
                Manifold::Hyperplane { normal, offset } => Model::HyperplaneDrift {
                    normal: normal.clone(),
                    offset: *offset,
                    amp,
                    sigma,
                },
                _ => unreachable!(),
            },
            dim,
            regime: Regime::PiecewiseSmooth,
            k1: math::abs(amp),
            k2: math::abs(sigma) * math::sqrt(dim as f64),
            lambda: (sigma * sigma).max(1.0 / (sigma * sigma)),
            discontinuities: Some(DiscontinuitySet {
                manifolds: vec![manifold],
            }),
        })
    }

    pub fn sphere_drift(center: Vec<f64>, radius: f64, amp: f64, sigma: f64) -> Result<Self> {
        let dim = center.len();
        let manifold = Manifold::sphere(center.clone(), radius)?;
        Ok(Self {
            model: Model::SphereDrift { center, radius, amp, sigma },
            dim,
            regime: Regime::PiecewiseSmooth,
            k1: math::abs(amp),
            k2: math::abs(sigma) * math::sqrt(dim as f64),
            lambda: (sigma * sigma).max(1.0 / (sigma * sigma)),
            discontinuities: Some(DiscontinuitySet {
                manifolds: vec![manifold],
            }),
        })
    }

    pub fn time_linear_sigma(base: f64, slope: f64) -> Self {
        let lo = base.min(base + slope);
        let hi = base.max(base + slope);
        Self {
            model: Model::TimeLinearSigma { base, slope },
            dim: 1,
            regime: Regime::Holder { gamma: 1.0 },
            k1: 1e-12,
            k2: hi,
            lambda: (hi * hi).max(1.0 / (lo * lo)) * 1.0001,
            discontinuities: None,
        }
    }

    fn measure_lambda(&self) -> f64 {
        // Constant models: exact eigen range of sigma sigma*.
        let mut a = [0.0; crate::MAX_DIM * crate::MAX_DIM];
        let x = [0.0; crate::MAX_DIM];
        let d = self.dim;
        self.diffusion_matrix(0.0, &x[..d], &mut a[..d * d]);
        let (lo, hi) = sym_eigen_range(&a[..d * d], d);
        (hi.max(1.0 / lo.max(1e-300))).max(1.0) * 1.0001
    }

    /// Anchor points near which the field is least smooth; assumption
    /// validation concentrates pair samples there.
    pub fn roughness_anchors(&self) -> Vec<Vec<f64>> {
        match &self.model {
            Model::CirLike { .. } => vec![vec![0.0]],
            Model::SignDrift { .. } => vec![vec![0.0]],
            Model::HyperplaneDrift { normal, offset, .. } => {
                vec![normal.iter().map(|n| n * offset).collect()]
            }
            Model::SphereDrift { center, radius, .. } => {
                let mut p = center.clone();
                p[0] += radius;
                vec![p]
            }
            _ => Vec::new(),
        }
    }
}

impl Field for CoefficientField {
    fn dim(&self) -> usize {
        self.dim
    }

    fn time_dependent(&self) -> bool {
        matches!(self.model, Model::TimeLinearSigma { .. })
    }

    fn drift(&self, _t: f64, x: &[f64], out: &mut [f64]) {
        match &self.model {
            Model::Constant { drift, .. } => out.copy_from_slice(drift),
            Model::TanhDrift { amp, rate, .. } => out[0] = amp * math::tanh(rate * x[0]),
            Model::OrnsteinUhlenbeck { rate, .. } => out[0] = -rate * x[0],
            Model::WeierstrassSigma { drift_amp, .. } => out[0] = drift_amp * math::tanh(x[0]),
            Model::CirLike { a, k, .. } => out[0] = a - k * x[0],
            Model::SignDrift { amp, .. } => out[0] = amp * psign(x[0]),
            Model::HyperplaneDrift { normal, offset, amp, .. } => {
                let dot: f64 = normal.iter().zip(x).map(|(n, v)| n * v).sum();
                // psign of the signed distance: positive side is <n,x> < c.
                let s = psign(offset - dot);
                for (o, n) in out.iter_mut().zip(normal) {
                    *o = amp * s * n;
                }
            }
            Model::SphereDrift { center, radius, amp, .. } => {
                let r2: f64 = center
                    .iter()
                    .zip(x)
                    .map(|(c, v)| (v - c) * (v - c))
                    .sum();
                let s = psign(radius - math::sqrt(r2));
                out.fill(0.0);
                out[0] = amp * s;
            }
            Model::TimeLinearSigma { .. } => out[0] = 0.0,
        }
    }

    fn sigma(&self, t: f64, x: &[f64], out: &mut [f64]) {
        match &self.model {
            Model::Constant { sigma, .. } => out.copy_from_slice(sigma),
            Model::TanhDrift { sigma, .. }
            | Model::OrnsteinUhlenbeck { sigma, .. }
            | Model::SignDrift { sigma, .. } => out[0] = *sigma,
            Model::WeierstrassSigma { gamma, base, n_terms, offset, amp, clip, .. } => {
                let w = weierstrass(x[0], *gamma, *base, *n_terms);
                out[0] = offset + amp * math::clip(w, -clip, *clip);
            }
            Model::CirLike { vol, eta, cap, .. } => {
                out[0] = eta + (vol * math::sqrt(math::abs(x[0]))).min(*cap);
            }
            Model::HyperplaneDrift { normal, sigma, .. } => {
                let d = normal.len();
                out.fill(0.0);
                for i in 0..d {
                    out[i * d + i] = *sigma;
                }
            }
            Model::SphereDrift { center, sigma, .. } => {
                let d = center.len();
                out.fill(0.0);
                for i in 0..d {
                    out[i * d + i] = *sigma;
                }
            }
            Model::TimeLinearSigma { base, slope } => out[0] = base + slope * t,
        }
    }

    fn drift1(&self, _t: f64, x: f64) -> f64 {
        match &self.model {
            Model::Constant { drift, .. } => drift[0],
            Model::TanhDrift { amp, rate, .. } => amp * math::tanh(rate * x),
            Model::OrnsteinUhlenbeck { rate, .. } => -rate * x,
            Model::WeierstrassSigma { drift_amp, .. } => drift_amp * math::tanh(x),
            Model::CirLike { a, k, .. } => a - k * x,
            Model::SignDrift { amp, .. } => amp * psign(x),
            Model::TimeLinearSigma { .. } => 0.0,
            _ => panic!("drift1 on a multi-dimensional model"),
        }
    }

    fn sigma1(&self, t: f64, x: f64) -> f64 {
        match &self.model {
            Model::Constant { sigma, .. } => sigma[0],
            Model::TanhDrift { sigma, .. }
            | Model::OrnsteinUhlenbeck { sigma, .. }
            | Model::SignDrift { sigma, .. } => *sigma,
            Model::WeierstrassSigma { gamma, base, n_terms, offset, amp, clip, .. } => {
                let w = weierstrass(x, *gamma, *base, *n_terms);
                offset + amp * math::clip(w, -clip, *clip)
            }
            Model::CirLike { vol, eta, cap, .. } => eta + (vol * math::sqrt(math::abs(x))).min(*cap),
            Model::TimeLinearSigma { base, slope } => base + slope * t,
            _ => panic!("sigma1 on a multi-dimensional model"),
        }
    }

    fn sigma1_slice(&self, t: f64, xs: &[f64], out: &mut [f64]) {
        match &self.model {
            Model::WeierstrassSigma { gamma, base, n_terms, offset, amp, clip, .. } => {
                weierstrass_slice(xs, *gamma, *base, *n_terms, out);
                for o in out.iter_mut() {
                    *o = offset + amp * math::clip(*o, -clip, *clip);
                }
            }
            _ => {
                for (o, &x) in out.iter_mut().zip(xs) {
                    *o = self.sigma1(t, x);
                }
            }
        }
    }

    fn drift1_slice(&self, t: f64, xs: &[f64], out: &mut [f64]) {
        match &self.model {
            Model::Constant { drift, .. } => out.fill(drift[0]),
            Model::SignDrift { amp, .. } => {
                for (o, &x) in out.iter_mut().zip(xs) {
                    *o = amp * psign(x);
                }
            }
            _ => {
                for (o, &x) in out.iter_mut().zip(xs) {
                    *o = self.drift1(t, x);
                }
            }
        }
    }
}

/// Eigenvalue range of a symmetric `d x d` matrix, `d <= 3`.
pub fn sym_eigen_range(a: &[f64], d: usize) -> (f64, f64) {
    match d {
        1 => (a[0], a[0]),
        2 => {
            let tr = a[0] + a[3];
            let det = a[0] * a[3] - a[1] * a[2];
            let disc = math::sqrt((tr * tr - 4.0 * det).max(0.0));
            (0.5 * (tr - disc), 0.5 * (tr + disc))
        }
        3 => {
            // Trigonometric closed form for symmetric 3x3.
            let p1 = a[1] * a[1] + a[2] * a[2] + a[5] * a[5];
            let q = (a[0] + a[4] + a[8]) / 3.0;
            let p2 = (a[0] - q) * (a[0] - q)
                + (a[4] - q) * (a[4] - q)
                + (a[8] - q) * (a[8] - q)
                + 2.0 * p1;
            if p2 <= 1e-300 {
                return (q, q);
            }
            let p = math::sqrt(p2 / 6.0);
            let inv_p = 1.0 / p;
            let mut b = [0.0; 9];
            for i in 0..3 {
                for j in 0..3 {
                    let v = a[i * 3 + j] - if i == j { q } else { 0.0 };
                    b[i * 3 + j] = v * inv_p;
                }
            }
            let detb = b[0] * (b[4] * b[8] - b[5] * b[7]) - b[1] * (b[3] * b[8] - b[5] * b[6])
                + b[2] * (b[3] * b[7] - b[4] * b[6]);
            let r = math::clip(detb / 2.0, -1.0, 1.0);
            let phi = libm::acos(r) / 3.0;
            let hi = q + 2.0 * p * math::cos(phi);
            let lo = q + 2.0 * p * math::cos(phi + 2.0 * core::f64::consts::PI / 3.0);
            (lo, hi)
        }
        _ => panic!("sym_eigen_range supports d <= 3"),
    }
}

// ---------------------------------------------------------------------------
// Assumption validation
// ---------------------------------------------------------------------------

/// Sample specification for `validate_assumptions` and the deviation scans.
#[derive(Clone, Debug)]
pub struct SampleGrid {
    pub t_max: f64,
    pub box_halfwidth: f64,
    pub time_samples: usize,
    pub space_samples_per_axis: usize,
    pub pair_samples: usize,
    pub seed: u64,
}

impl SampleGrid {
    pub fn default_for_dim(dim: usize) -> Self {
        let nx = match dim {
            1 => 257,
            2 => 41,
            _ => 13,
        };
        Self {
            t_max: 1.0,
            box_halfwidth: DEFAULT_BOX,
            time_samples: 5,
            space_samples_per_axis: nx,
            pair_samples: 10_000,
            seed: 0x5EED,
        }
    }

    /// Iterates the tensor grid, calling `f(t, x)`.
    pub fn for_each(&self, dim: usize, time_dependent: bool, mut f: impl FnMut(f64, &[f64])) {
        let nt = if time_dependent { self.time_samples } else { 1 };
        let nx = self.space_samples_per_axis;
        let mut x = [0.0; crate::MAX_DIM];
        let total = nx.pow(dim as u32);
        for it in 0..nt {
            let t = if nt == 1 {
                0.0
            } else {
                self.t_max * it as f64 / (nt - 1) as f64
            };
            for flat in 0..total {
                let mut rem = flat;
                for xd in x[..dim].iter_mut() {
                    let i = rem % nx;
                    rem /= nx;
                    *xd = -self.box_halfwidth
                        + 2.0 * self.box_halfwidth * i as f64 / (nx - 1) as f64;
                }
                f(t, &x[..dim]);
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Violation {
    DriftBound { t: f64, x: Vec<f64>, value: f64, declared: f64 },
    SigmaBound { t: f64, x: Vec<f64>, value: f64, declared: f64 },
    Ellipticity { t: f64, x: Vec<f64>, lambda_min: f64, declared: f64 },
    ManifoldOverlap { i: usize, j: usize, distance: f64 },
}

/// Measured assumption constants; violations are entries, not faults.
#[derive(Clone, Debug)]
pub struct ValidationReport {
    pub k1_measured: f64,
    pub k2_measured: f64,
    pub ellipticity_min: f64,
    pub ellipticity_max: f64,
    /// Sup of `|sigma(s,x)-sigma(t,y)| / (|s-t|^{gamma/2} + |x-y|^gamma)`
    /// over sampled pairs (Hölder regime only).
    pub holder_max_quotient: Option<f64>,
    /// Slope of log max-increment against log distance over distance decades.
    pub holder_exponent_estimate: Option<f64>,
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn pass(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Declared assumption constants, decoupled from the concrete field so that
/// mollified fields can be validated against their base constants.
#[derive(Clone, Debug)]
pub struct DeclaredBounds {
    pub k1: f64,
    pub k2: f64,
    pub lambda: f64,
    pub regime: Regime,
    pub anchors: Vec<Vec<f64>>,
    pub discontinuities: Option<DiscontinuitySet>,
}

impl CoefficientField {
    pub fn declared_bounds(&self) -> DeclaredBounds {
        DeclaredBounds {
            k1: self.k1,
            k2: self.k2,
            lambda: self.lambda,
            regime: self.regime,
            anchors: self.roughness_anchors(),
            discontinuities: self.discontinuities.clone(),
        }
    }
}

/// Measures (A1) boundedness, (A2) ellipticity and (H) Hölder quotients on
/// the sample grid, flagging violations against the declared constants.
pub fn validate_assumptions(field: &CoefficientField, grid: &SampleGrid) -> ValidationReport {
    validate_field(field, &field.declared_bounds(), grid)
}

/// Generic validation against explicitly declared constants.
pub fn validate_field<F: Field + ?Sized>(
    field: &F,
    declared: &DeclaredBounds,
    grid: &SampleGrid,
) -> ValidationReport {
    let d = field.dim();
    let mut k1 = 0.0f64;
    let mut k2 = 0.0f64;
    let mut ell = (f64::INFINITY, 0.0f64);
    let mut violations = Vec::new();
    let tol = 1e-9;

    let mut b = [0.0; crate::MAX_DIM];
    let mut s = [0.0; crate::MAX_DIM * crate::MAX_DIM];
    let mut a = [0.0; crate::MAX_DIM * crate::MAX_DIM];
    grid.for_each(d, field.time_dependent(), |t, x| {
        field.drift(t, x, &mut b[..d]);
        field.sigma(t, x, &mut s[..d * d]);
        let nb = math::sqrt(b[..d].iter().map(|v| v * v).sum::<f64>());
        let ns = math::sqrt(s[..d * d].iter().map(|v| v * v).sum::<f64>());
        if nb > k1 {
            k1 = nb;
            if nb > declared.k1 * (1.0 + tol) + tol {
                violations.push(Violation::DriftBound {
                    t,
                    x: x.to_vec(),
                    value: nb,
                    declared: declared.k1,
                });
            }
        }
        if ns > k2 {
            k2 = ns;
            if ns > declared.k2 * (1.0 + tol) + tol {
                violations.push(Violation::SigmaBound {
                    t,
                    x: x.to_vec(),
                    value: ns,
                    declared: declared.k2,
                });
            }
        }
        // a = sigma sigma*
        for i in 0..d {
            for j in 0..d {
                let mut acc = 0.0;
                for k in 0..d {
                    acc += s[i * d + k] * s[j * d + k];
                }
                a[i * d + j] = acc;
            }
        }
        let (lo, hi) = sym_eigen_range(&a[..d * d], d);
        if lo < ell.0 {
            ell.0 = lo;
            if lo <= 0.0 || lo < 1.0 / declared.lambda - tol {
                violations.push(Violation::Ellipticity {
                    t,
                    x: x.to_vec(),
                    lambda_min: lo,
                    declared: declared.lambda,
                });
            }
        }
        ell.1 = ell.1.max(hi);
    });

    if let Some(set) = &declared.discontinuities {
        let dmin = set.min_cross_distance();
        if dmin <= 0.0 {
            // Identify the offending pair for the report.
            'outer: for i in 0..set.manifolds.len() {
                for j in i + 1..set.manifolds.len() {
                    if set.manifolds[i].distance_to(&set.manifolds[j]) <= 0.0 {
                        violations.push(Violation::ManifoldOverlap { i, j, distance: 0.0 });
                        break 'outer;
                    }
                }
            }
        }
    }

    let (holder_max_quotient, holder_exponent_estimate) = match declared.regime {
        Regime::Holder { gamma } => {
            let stats = holder_pair_scan(field, &declared.anchors, grid, gamma);
            (Some(stats.0), stats.1)
        }
        Regime::PiecewiseSmooth => (None, None),
    };

    ValidationReport {
        k1_measured: k1,
        k2_measured: k2,
        ellipticity_min: ell.0,
        ellipticity_max: ell.1,
        holder_max_quotient,
        holder_exponent_estimate,
        violations,
    }
}

/// Random pair sampling with log-uniform pair distances in `[1e-6, 1]`.
///
/// Returns the sup parabolic Hölder quotient and the fitted increment
/// exponent (slope of log max-increment per distance decade).
fn holder_pair_scan<F: Field + ?Sized>(
    field: &F,
    anchors: &[Vec<f64>],
    grid: &SampleGrid,
    gamma: f64,
) -> (f64, Option<f64>) {
    let d = field.dim();
    let mut rng = CounterRng::new(grid.seed, rng::TAG_SAMPLING, 0, 0);
    let n_decades = 6usize;
    let mut bucket_max = vec![0.0f64; n_decades];
    let mut max_quotient = 0.0f64;

    let mut x = [0.0; crate::MAX_DIM];
    let mut y = [0.0; crate::MAX_DIM];
    let mut sx = [0.0; crate::MAX_DIM * crate::MAX_DIM];
    let mut sy = [0.0; crate::MAX_DIM * crate::MAX_DIM];

    for _ in 0..grid.pair_samples {
        // log-uniform distance in [1e-6, 1]
        let u = rng.next_unit();
        let delta = math::powf(10.0, -6.0 * u);
        // Base point: uniform over the box, or concentrated near an anchor.
        let near_anchor = !anchors.is_empty() && rng.next_unit() < 0.5;
        if near_anchor {
            let a = &anchors[(rng.next_u64() as usize) % anchors.len()];
            for (xi, ai) in x[..d].iter_mut().zip(a) {
                *xi = ai + delta * (2.0 * rng.next_unit() - 1.0) * 2.0;
            }
        } else {
            for xi in x[..d].iter_mut() {
                *xi = grid.box_halfwidth * (2.0 * rng.next_unit() - 1.0);
            }
        }
        // Random direction offset of length delta.
        let mut norm = 0.0;
        for yi in y[..d].iter_mut() {
            *yi = 2.0 * rng.next_unit() - 1.0;
            norm += *yi * *yi;
        }
        let norm = math::sqrt(norm).max(1e-300);
        for i in 0..d {
            y[i] = x[i] + y[i] / norm * delta;
        }
        // Time pair for inhomogeneous fields.
        let (t0, t1) = if field.time_dependent() {
            let t = grid.t_max * rng.next_unit();
            (t, (t + delta * delta).min(grid.t_max))
        } else {
            (0.0, 0.0)
        };

        field.sigma(t0, &x[..d], &mut sx[..d * d]);
        field.sigma(t1, &y[..d], &mut sy[..d * d]);
        let mut diff = 0.0;
        for i in 0..d * d {
            diff += (sx[i] - sy[i]) * (sx[i] - sy[i]);
        }
        let diff = math::sqrt(diff);

        let denom = math::powf(math::abs(t1 - t0), gamma / 2.0) + math::powf(delta, gamma);
        if denom > 0.0 {
            max_quotient = max_quotient.max(diff / denom);
        }
        let decade = math::clip(-libm::log10(delta.max(1e-12)), 0.0, (n_decades - 1) as f64);
        let idx = decade as usize;
        if diff > bucket_max[idx] {
            bucket_max[idx] = diff;
        }
    }

    // Fit slope of ln(max increment) vs ln(distance) over populated decades.
    let mut pts: Vec<(f64, f64)> = Vec::new();
    for (i, &m) in bucket_max.iter().enumerate() {
        if m > 0.0 {
            // decade i holds distances ~ 10^{-i - 1/2}
            pts.push((-(i as f64 + 0.5) * core::f64::consts::LN_10, math::ln(m)));
        }
    }
    let exponent = if pts.len() >= 3 {
        let n = pts.len() as f64;
        let sx: f64 = pts.iter().map(|p| p.0).sum();
        let sy: f64 = pts.iter().map(|p| p.1).sum();
        let sxx: f64 = pts.iter().map(|p| p.0 * p.0).sum();
        let sxy: f64 = pts.iter().map(|p| p.0 * p.1).sum();
        let denom = n * sxx - sx * sx;
        if denom.abs() > 1e-12 {
            Some((n * sxy - sx * sy) / denom)
        } else {
            None
        }
    } else {
        None
    };
    (max_quotient, exponent)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn weierstrass_at_zero_is_geometric_sum() {
        // cos(0) = 1 for every term, so the sum is geometric.
        let got = weierstrass(0.0, 0.5, 2, 16);
        let a = 2f64.powf(-0.5);
        let want = (1.0 - a.powi(16)) / (1.0 - a);
        assert!((got - want).abs() < 1e-12, "{got} vs {want}");
        // And the spec form of the same number.
        let want2 = (1.0 - 2f64.powf(-8.0)) / (1.0 - 2f64.powf(-0.5));
        assert!((got - want2).abs() < 1e-12);
    }

    #[test]
    fn weierstrass_single_term_is_cosine() {
        for &x in &[0.0, 0.31, -1.7, 2.4142, 9.99] {
            let got = weierstrass(x, 0.7, 3, 1);
            assert!((got - (core::f64::consts::PI * x).cos()).abs() < 1e-12);
        }
    }

    #[test]
    fn weierstrass_is_even() {
        for i in 0..100 {
            let x = -1.0 + 0.02 * i as f64 + 0.003;
            assert_eq!(
                weierstrass(x, 0.5, 2, 12),
                weierstrass(-x, 0.5, 2, 12),
                "x={x}"
            );
        }
    }

    #[test]
    fn weierstrass_slice_matches_scalar() {
        let xs: Vec<f64> = (0..64).map(|i| -2.0 + 0.07 * i as f64).collect();
        let mut out = vec![0.0; xs.len()];
        weierstrass_slice(&xs, 0.5, 2, 10, &mut out);
        for (&x, &o) in xs.iter().zip(&out) {
            assert_eq!(o, weierstrass(x, 0.5, 2, 10));
        }
    }

    /// Dense-pair oracle: the quotient with the true exponent stays bounded
    /// while an exponent 0.75 quotient blows up at small distances.
    #[test]
    fn weierstrass_holder_exponent_detectable() {
        let mut rng = CounterRng::new(7, rng::TAG_SAMPLING, 1, 0);
        let n_dec = 5;
        let mut q_half = vec![0.0f64; n_dec];
        let mut q_three_quarter = vec![0.0f64; n_dec];
        for i in 0..10_000usize {
            // Round-robin over decades so every bucket gets samples.
            let idx = i % n_dec;
            let delta = math::powf(10.0, -(idx as f64) - 0.5 - 0.5 * rng.next_unit());
            let x = 2.0 * rng.next_unit() - 1.0;
            let y = x + delta;
            let diff = math::abs(weierstrass(x, 0.5, 2, 16) - weierstrass(y, 0.5, 2, 16));
            q_half[idx] = q_half[idx].max(diff / math::powf(delta, 0.5));
            q_three_quarter[idx] =
                q_three_quarter[idx].max(diff / math::powf(delta, 0.75));
        }
        // gamma = 0.5 quotient: bounded across decades.
        let max_half = q_half.iter().cloned().fold(0.0, f64::max);
        let min_half = q_half.iter().cloned().fold(f64::INFINITY, f64::min);
        assert!(max_half / min_half < 6.0, "{q_half:?}");
        // 0.75 quotient grows ~ delta^{-1/4}: factor ~ 10 over 4 decades.
        assert!(
            q_three_quarter[n_dec - 1] / q_three_quarter[0] > 4.0,
            "{q_three_quarter:?}"
        );
    }

    #[test]
    fn signed_distance_sphere() {
        let m = Manifold::sphere(vec![0.0, 0.0], 1.0).unwrap();
        assert!((m.signed_distance(&[0.5, 0.0]) - 0.5).abs() < 1e-15);
        assert!((m.signed_distance(&[2.0, 0.0]) + 1.0).abs() < 1e-15);
    }

    #[test]
    fn signed_distance_point_convention() {
        let m = Manifold::point_1d(0.0);
        assert!((m.signed_distance(&[0.3]) - 0.3).abs() < 1e-15);
        assert!((m.signed_distance(&[-0.4]) + 0.4).abs() < 1e-15);
    }

    #[test]
    fn projection_consistent_with_distance() {
        let manifolds = [
            Manifold::sphere(vec![0.3, -0.2], 1.3).unwrap(),
            Manifold::hyperplane(vec![1.0, 2.0], 0.7).unwrap(),
        ];
        let mut p = [0.0; 2];
        for m in &manifolds {
            for i in 0..50 {
                let x = [-2.0 + 0.08 * i as f64, 1.7 - 0.07 * i as f64];
                m.project(&x, &mut p);
                let dist = math::sqrt(
                    (x[0] - p[0]) * (x[0] - p[0]) + (x[1] - p[1]) * (x[1] - p[1]),
                );
                assert!(
                    (dist - math::abs(m.signed_distance(&x))).abs() < 1e-10,
                    "{m:?} at {x:?}"
                );
                // The projection sits on the zero level set.
                assert!(math::abs(m.signed_distance(&p)) < 1e-10);
            }
        }
    }

    #[test]
    fn constant_field_validates() {
        let f = CoefficientField::constant(1, vec![0.3], vec![1.0]).unwrap();
        let rep = validate_assumptions(&f, &SampleGrid::default_for_dim(1));
        assert!(rep.pass(), "{:?}", rep.violations);
        assert!((rep.k1_measured - 0.3).abs() < 1e-12);
        assert!((rep.ellipticity_min - 1.0).abs() < 1e-12);
        assert!((rep.ellipticity_max - 1.0).abs() < 1e-12);
    }

    #[test]
    fn degenerate_sigma_flags_ellipticity() {
        // eta = 0 makes sigma(0) = 0: ellipticity fails at the origin node.
        let f = CoefficientField::cir_like(0.1, 0.5, 1.0, 0.0, 2.0);
        let rep = validate_assumptions(&f, &SampleGrid::default_for_dim(1));
        assert!(rep
            .violations
            .iter()
            .any(|v| matches!(v, Violation::Ellipticity { .. })));
    }

    #[test]
    fn cir_like_passes_with_measured_half_exponent() {
        let f = CoefficientField::cir_like(0.1, 0.5, 1.0, 0.1, 2.0);
        let rep = validate_assumptions(&f, &SampleGrid::default_for_dim(1));
        assert!(rep.pass(), "{:?}", rep.violations);
        let gamma = rep.holder_exponent_estimate.expect("exponent estimated");
        assert!((gamma - 0.5).abs() < 0.12, "estimate {gamma}");
    }

    #[test]
    fn builtin_zoo_passes_default_validation() {
        let zoo: Vec<CoefficientField> = vec![
            CoefficientField::constant(1, vec![0.3], vec![1.0]).unwrap(),
            CoefficientField::constant(2, vec![0.1, -0.2], vec![1.0, 0.0, 0.0, 0.8]).unwrap(),
            CoefficientField::tanh_drift(0.5, 1.0, 1.0),
            CoefficientField::ornstein_uhlenbeck(1.0, 1.0),
            CoefficientField::weierstrass_sigma(0.5, 2, 12, 1.0, 0.5, 1.0, 0.3).unwrap(),
            CoefficientField::cir_like(0.1, 0.5, 1.0, 0.1, 2.0),
            CoefficientField::sign_drift(0.5, 1.0),
            CoefficientField::hyperplane_drift(vec![1.0, 0.0], 0.0, 0.5, 1.0).unwrap(),
            CoefficientField::sphere_drift(vec![0.0, 0.0], 1.0, 0.5, 1.0).unwrap(),
            CoefficientField::time_linear_sigma(1.0, 0.5),
        ];
        for f in &zoo {
            let rep = validate_assumptions(f, &SampleGrid::default_for_dim(f.dim));
            assert!(rep.pass(), "{:?}: {:?}", f.model, rep.violations);
        }
    }

    #[test]
    fn weierstrass_sigma_estimated_exponent() {
        let f = CoefficientField::weierstrass_sigma(0.5, 2, 14, 1.0, 0.5, 1.0, 0.3).unwrap();
        let rep = validate_assumptions(&f, &SampleGrid::default_for_dim(1));
        let gamma = rep.holder_exponent_estimate.unwrap();
        assert!((gamma - 0.5).abs() < 0.12, "estimate {gamma}");
        assert!(rep.holder_max_quotient.unwrap() > 0.0);
    }

    #[test]
    fn manifold_cross_distances() {
        let s1 = Manifold::sphere(vec![0.0, 0.0], 1.0).unwrap();
        let s2 = Manifold::sphere(vec![3.0, 0.0], 1.0).unwrap();
        assert!((s1.distance_to(&s2) - 1.0).abs() < 1e-12);
        let h = Manifold::hyperplane(vec![1.0, 0.0], -2.0).unwrap();
        assert!((s1.distance_to(&h) - 1.0).abs() < 1e-12);
        let p = Manifold::point_1d(0.5);
        let q = Manifold::point_1d(-0.25);
        assert!((p.distance_to(&q) - 0.75).abs() < 1e-15);
    }

    #[test]
    fn eigen_range_2x2() {
        // diag(2, 1/2) rotated by 30 degrees.
        let (c, s) = (3f64.sqrt() / 2.0, 0.5);
        let (l1, l2) = (2.0, 0.5);
        let a = [
            c * c * l1 + s * s * l2,
            c * s * (l1 - l2),
            c * s * (l1 - l2),
            s * s * l1 + c * c * l2,
        ];
        let (lo, hi) = sym_eigen_range(&a, 2);
        assert!((lo - 0.5).abs() < 1e-12 && (hi - 2.0).abs() < 1e-12);
    }
}
