//! Coefficient mollification and the quantities that drive the error
//! balance.
//!
//! Two procedures, one per smoothness regime:
//!
//! * Hölder fields: spatial convolution with the compact-support bump
//!   `rho_eps(z) = eps^{-d} rho(z/eps)` followed by time convolution with
//!   `zeta_{eps^2}` (parabolic scaling), with even time reflection at both
//!   edges of the horizon. Deviation `sup |b - b_eps| <= C eps^gamma` while
//!   derivatives blow up like `eps^{-|alpha| + gamma}`.
//! * Piecewise-smooth drifts: the drift is kept outside the
//!   `eps`-neighborhood of the discontinuity set and replaced inside by the
//!   two-sided projection bump blend
//!   `b(t, P_1 x) e^{1/4} exp(-1/(4 - d_1^2/eps^2)) + (same for side 2)`,
//!   where `P_j`/`d_j` project onto and measure the signed distance to the
//!   two offset surfaces `{d_S = -eps}`, `{d_S = +eps}`. The boundary
//!   identity `b_eps = b` on both offset surfaces holds exactly. The blend
//!   is not a partition of unity (the interior weights sum to about 1.84 at
//!   the center), so `|b_eps| <= 2 K_1`; the diffusion is left untouched.

use crate::coefficients::{CoefficientField, DeclaredBounds, Field, Manifold, Regime, SampleGrid};
use crate::error::{EwelError, Result};
use crate::math;
use crate::quad;
use crate::rng::{self, CounterRng};
use crate::MAX_DIM;
use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

/// Normalized compact-support bump `c exp(-1/(1-|z|^2))` on the unit ball.
#[derive(Clone, Debug)]
pub struct MollifierKernel {
    pub dim: usize,
    norm_const: f64,
}

/// Unnormalized bump profile as a function of `|z|^2`.
#[inline]
fn bump_r2(r2: f64) -> f64 {
    if r2 < 1.0 {
        math::exp(-1.0 / (1.0 - r2))
    } else {
        0.0
    }
}

impl MollifierKernel {
    pub fn new(dim: usize) -> Self {
        assert!((1..=MAX_DIM).contains(&dim));
        // Radial reduction: the bump is C^inf in r with all derivatives
        // vanishing at r = 1, so Gauss-Legendre is spectral here.
        let gl = quad::gauss_legendre_on(96, 0.0, 1.0);
        let mass = match dim {
            1 => 2.0 * gl.integrate(|r| bump_r2(r * r)),
            2 => 2.0 * core::f64::consts::PI * gl.integrate(|r| r * bump_r2(r * r)),
            _ => 4.0 * core::f64::consts::PI * gl.integrate(|r| r * r * bump_r2(r * r)),
        };
        Self {
            dim,
            norm_const: 1.0 / mass,
        }
    }

    /// Normalized profile value at `z`.
    pub fn profile(&self, z: &[f64]) -> f64 {
        self.norm_const * bump_r2(norm2(z))
    }

    /// `int |z|^gamma rho(z) dz`; grading handles the `|z|^gamma` kink at 0.
    pub fn moment(&self, gamma: f64) -> f64 {
        match self.dim {
            1 => {
                let rule = quad::singular_rule_left(1.0, 64, gamma);
                2.0 * rule.integrate(|z| math::powf(z, gamma) * self.profile(&[z]))
            }
            2 => {
                // polar: 2 pi int_0^1 r^{gamma+1} rho(r) dr
                let rule = quad::singular_rule_left(1.0, 64, gamma + 1.0);
                2.0 * core::f64::consts::PI
                    * rule.integrate(|r| math::powf(r, gamma + 1.0) * self.norm_const * bump_r2(r * r))
            }
            _ => {
                let rule = quad::singular_rule_left(1.0, 64, math::clip(gamma + 2.0, 0.0, 3.9));
                4.0 * core::f64::consts::PI
                    * rule.integrate(|r| {
                        math::powf(r, gamma + 2.0) * self.norm_const * bump_r2(r * r)
                    })
            }
        }
    }

    /// Total mass by an independent fine midpoint rule (should be 1).
    pub fn mass(&self) -> f64 {
        let n = 200_000usize;
        let mut acc = 0.0;
        for i in 0..n {
            let r = (i as f64 + 0.5) / n as f64;
            let v = self.norm_const * bump_r2(r * r);
            acc += match self.dim {
                1 => 2.0 * v,
                2 => 2.0 * core::f64::consts::PI * r * v,
                _ => 4.0 * core::f64::consts::PI * r * r * v,
            } / n as f64;
        }
        acc
    }
}

fn norm2(z: &[f64]) -> f64 {
    z.iter().map(|v| v * v).sum()
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum MollifyMethod {
    HolderConvolution,
    PiecewiseBlend,
}

/// A mollified coefficient field; itself a valid [`Field`].
#[derive(Clone, Debug)]
pub struct MollifiedField {
    pub base: CoefficientField,
    pub epsilon: f64,
    pub method: MollifyMethod,
    /// Nodes per axis of the convolution quadrature.
    pub quad_nodes: usize,
    /// Horizon used by the even time reflection `b(T+s) = b(T-s)`.
    pub t_horizon: f64,
    /// Pruned tensor nodes over the kernel support (flattened, `dim` each).
    conv_offsets: Vec<f64>,
    /// Discretely normalized tensor weights (sum to 1 exactly).
    conv_weights: Vec<f64>,
    /// Time-convolution nodes/weights on [-1, 1], discretely normalized.
    time_nodes: Vec<f64>,
    time_weights: Vec<f64>,
}

/// Minimum convolution nodes per axis.
pub const MIN_QUAD_NODES: usize = 8;

/// Mollifies a Hölder-regime field by spatial and time convolution.
pub fn mollify_holder(
    field: &CoefficientField,
    eps: f64,
    quad_nodes: usize,
    t_horizon: f64,
) -> Result<MollifiedField> {
    if !matches!(field.regime, Regime::Holder { .. }) {
        return Err(EwelError::Argument(String::from(
            "mollify_holder wants a Holder-regime field",
        )));
    }
    if !(eps > 0.0 && eps <= 1.0) {
        return Err(EwelError::Argument(format!("eps must lie in (0,1], got {eps}")));
    }
    if quad_nodes < MIN_QUAD_NODES {
        return Err(EwelError::Config(format!(
            "convolution quadrature wants >= {MIN_QUAD_NODES} nodes per axis, got {quad_nodes}"
        )));
    }
    let d = field.dim;
    let kernel = MollifierKernel::new(d);
    let gl = quad::gauss_legendre_on(quad_nodes, -1.0, 1.0);

    // Pruned, discretely normalized tensor weights: constants mollify to
    // themselves exactly and the kernel stays a probability measure.
    let mut offsets = Vec::new();
    let mut weights = Vec::new();
    let n = gl.nodes.len();
    let total = n.pow(d as u32);
    let mut z = [0.0; MAX_DIM];
    let mut wsum = 0.0;
    for flat in 0..total {
        let mut rem = flat;
        let mut w = 1.0;
        for zk in z[..d].iter_mut() {
            let i = rem % n;
            rem /= n;
            *zk = gl.nodes[i];
            w *= gl.weights[i];
        }
        let val = w * kernel.profile(&z[..d]);
        if val != 0.0 {
            offsets.extend_from_slice(&z[..d]);
            weights.push(val);
            wsum += val;
        }
    }
    for w in weights.iter_mut() {
        *w /= wsum;
    }

    // Time kernel: same bump in one dimension, discretely normalized.
    let (time_nodes, time_weights) = if field.time_dependent() {
        let k1 = MollifierKernel::new(1);
        let gl_t = quad::gauss_legendre_on(quad_nodes, -1.0, 1.0);
        let mut tw: Vec<f64> = gl_t
            .nodes
            .iter()
            .zip(&gl_t.weights)
            .map(|(&u, &w)| w * k1.profile(&[u]))
            .collect();
        let s: f64 = tw.iter().sum();
        for w in tw.iter_mut() {
            *w /= s;
        }
        (gl_t.nodes, tw)
    } else {
        // Time-independent base: the time convolution is the identity.
        (Vec::new(), Vec::new())
    };

    Ok(MollifiedField {
        base: field.clone(),
        epsilon: eps,
        method: MollifyMethod::HolderConvolution,
        quad_nodes,
        t_horizon,
        conv_offsets: offsets,
        conv_weights: weights,
        time_nodes,
        time_weights,
    })
}

/// Mollifies a piecewise-smooth drift by the two-sided projection blend;
/// the diffusion coefficient is left untouched.
pub fn mollify_piecewise(field: &CoefficientField, eps: f64) -> Result<MollifiedField> {
    let set = field.discontinuities.as_ref().ok_or_else(|| {
        EwelError::Argument(String::from(
            "mollify_piecewise wants a field with a discontinuity set",
        ))
    })?;
    if !(eps > 0.0) {
        return Err(EwelError::Argument(format!("eps must be positive, got {eps}")));
    }
    // Neighborhoods of distinct manifolds must stay disjoint.
    for i in 0..set.manifolds.len() {
        for j in i + 1..set.manifolds.len() {
            let dist = set.manifolds[i].distance_to(&set.manifolds[j]);
            if dist <= 2.0 * eps {
                return Err(EwelError::Config(format!(
                    "eps-neighborhoods of manifolds {i} and {j} overlap \
                     (distance {dist}, need > {})",
                    2.0 * eps
                )));
            }
        }
    }
    // Offset surfaces must exist: spheres need eps < radius.
    for (i, m) in set.manifolds.iter().enumerate() {
        if let Manifold::Sphere { radius, .. } = m {
            if eps >= *radius {
                return Err(EwelError::Config(format!(
                    "eps = {eps} >= radius {radius} of sphere manifold {i}"
                )));
            }
        }
    }
    Ok(MollifiedField {
        base: field.clone(),
        epsilon: eps,
        method: MollifyMethod::PiecewiseBlend,
        quad_nodes: 0,
        t_horizon: 1.0,
        conv_offsets: Vec::new(),
        conv_weights: Vec::new(),
        time_nodes: Vec::new(),
        time_weights: Vec::new(),
    })
}

/// Blend weight `e^{1/4} exp(-1/(4 - s))` for `s = d^2/eps^2`, zero at
/// `s >= 4`; equals 1 at `s = 0` so the boundary identity is exact.
#[inline]
fn blend_weight(s: f64) -> f64 {
    if s >= 4.0 {
        0.0
    } else {
        math::exp(0.25) * math::exp(-1.0 / (4.0 - s))
    }
}

impl MollifiedField {
    /// Even reflection of time into `[0, T]` at both edges.
    fn reflect_time(&self, t: f64) -> f64 {
        let t = math::abs(t);
        if t > self.t_horizon {
            (2.0 * self.t_horizon - t).max(0.0)
        } else {
            t
        }
    }

    fn spatial_drift(&self, t: f64, x: &[f64], out: &mut [f64]) {
        let d = self.base.dim;
        let eps = self.epsilon;
        let mut acc = [0.0; MAX_DIM];
        let mut y = [0.0; MAX_DIM];
        let mut b = [0.0; MAX_DIM];
        for (k, w) in self.conv_weights.iter().enumerate() {
            let z = &self.conv_offsets[k * d..(k + 1) * d];
            for i in 0..d {
                y[i] = x[i] - eps * z[i];
            }
            self.base.drift(t, &y[..d], &mut b[..d]);
            for i in 0..d {
                acc[i] += w * b[i];
            }
        }
        out.copy_from_slice(&acc[..d]);
    }

    fn spatial_sigma(&self, t: f64, x: &[f64], out: &mut [f64]) {
        let d = self.base.dim;
        let eps = self.epsilon;
        let mut acc = [0.0; MAX_DIM * MAX_DIM];
        let mut y = [0.0; MAX_DIM];
        let mut s = [0.0; MAX_DIM * MAX_DIM];
        for (k, w) in self.conv_weights.iter().enumerate() {
            let z = &self.conv_offsets[k * d..(k + 1) * d];
            for i in 0..d {
                y[i] = x[i] - eps * z[i];
            }
            self.base.sigma(t, &y[..d], &mut s[..d * d]);
            for i in 0..d * d {
                acc[i] += w * s[i];
            }
        }
        out.copy_from_slice(&acc[..d * d]);
    }

    /// Blend drift for the piecewise method.
    fn blend_drift(&self, t: f64, x: &[f64], out: &mut [f64]) {
        let d = self.base.dim;
        let set = self.base.discontinuities.as_ref().unwrap();
        let (idx, delta) = set.nearest(x);
        if math::abs(delta) > self.epsilon {
            self.base.drift(t, x, out);
            return;
        }
        let eps = self.epsilon;
        let m = &set.manifolds[idx];
        // Signed distances to the offset surfaces {d_S = -eps}, {d_S = +eps}.
        let d1 = delta + eps;
        let d2 = delta - eps;
        let mut p = [0.0; MAX_DIM];
        let mut b = [0.0; MAX_DIM];
        out.fill(0.0);
        let w1 = blend_weight(d1 * d1 / (eps * eps));
        if w1 > 0.0 {
            project_offset(m, x, -eps, &mut p[..d]);
            self.base.drift(t, &p[..d], &mut b[..d]);
            for i in 0..d {
                out[i] += w1 * b[i];
            }
        }
        let w2 = blend_weight(d2 * d2 / (eps * eps));
        if w2 > 0.0 {
            project_offset(m, x, eps, &mut p[..d]);
            self.base.drift(t, &p[..d], &mut b[..d]);
            for i in 0..d {
                out[i] += w2 * b[i];
            }
        }
    }

    /// Declared bounds for validation: the blend can reach `2 K_1`.
    pub fn declared_bounds(&self) -> DeclaredBounds {
        let mut b = self.base.declared_bounds();
        if matches!(self.method, MollifyMethod::PiecewiseBlend) {
            b.k1 *= 2.0;
        }
        b
    }
}

/// Projection onto the offset surface `{d_S = level}` of a manifold with
/// parallel level sets.
fn project_offset(m: &Manifold, x: &[f64], level: f64, out: &mut [f64]) {
    match m {
        Manifold::Point1D { p } => out[0] = p + level,
        Manifold::Hyperplane { normal, offset } => {
            // d_S = offset - <n, x>; {d_S = level} has offset' = offset - level.
            let dot: f64 = normal.iter().zip(x).map(|(n, v)| n * v).sum();
            let shift = dot - (offset - level);
            for (o, (&v, &n)) in out.iter_mut().zip(x.iter().zip(normal)) {
                *o = v - shift * n;
            }
        }
        Manifold::Sphere { center, radius } => {
            // d_S = radius - |x - c|; {d_S = level} is the sphere of radius
            // radius - level.
            let target = radius - level;
            let mut r2 = 0.0;
            for (v, c) in x.iter().zip(center) {
                r2 += (v - c) * (v - c);
            }
            let r = math::sqrt(r2);
            if r == 0.0 {
                out.copy_from_slice(center);
                out[0] += target;
            } else {
                let scale = target / r;
                for (o, (&v, &c)) in out.iter_mut().zip(x.iter().zip(center)) {
                    *o = c + (v - c) * scale;
                }
            }
        }
    }
}

impl Field for MollifiedField {
    fn dim(&self) -> usize {
        self.base.dim
    }

    fn time_dependent(&self) -> bool {
        self.base.time_dependent()
    }

    fn drift(&self, t: f64, x: &[f64], out: &mut [f64]) {
        match self.method {
            MollifyMethod::PiecewiseBlend => self.blend_drift(t, x, out),
            MollifyMethod::HolderConvolution => {
                if self.time_nodes.is_empty() {
                    self.spatial_drift(t, x, out);
                } else {
                    let d = self.base.dim;
                    let e2 = self.epsilon * self.epsilon;
                    let mut acc = [0.0; MAX_DIM];
                    let mut b = [0.0; MAX_DIM];
                    for (&u, &w) in self.time_nodes.iter().zip(&self.time_weights) {
                        let tt = self.reflect_time(t - e2 * u);
                        self.spatial_drift(tt, x, &mut b[..d]);
                        for i in 0..d {
                            acc[i] += w * b[i];
                        }
                    }
                    out.copy_from_slice(&acc[..d]);
                }
            }
        }
    }

    fn sigma(&self, t: f64, x: &[f64], out: &mut [f64]) {
        match self.method {
            MollifyMethod::PiecewiseBlend => self.base.sigma(t, x, out),
            MollifyMethod::HolderConvolution => {
                if self.time_nodes.is_empty() {
                    self.spatial_sigma(t, x, out);
                } else {
                    let d = self.base.dim;
                    let e2 = self.epsilon * self.epsilon;
                    let mut acc = [0.0; MAX_DIM * MAX_DIM];
                    let mut s = [0.0; MAX_DIM * MAX_DIM];
                    for (&u, &w) in self.time_nodes.iter().zip(&self.time_weights) {
                        let tt = self.reflect_time(t - e2 * u);
                        self.spatial_sigma(tt, x, &mut s[..d * d]);
                        for i in 0..d * d {
                            acc[i] += w * s[i];
                        }
                    }
                    out.copy_from_slice(&acc[..d * d]);
                }
            }
        }
    }

    fn sigma1_slice(&self, t: f64, xs: &[f64], out: &mut [f64]) {
        // Vectorized 1D convolution: evaluate the base on the flattened
        // (lane x node) buffer, then reduce with the kernel weights.
        if self.base.dim == 1
            && matches!(self.method, MollifyMethod::HolderConvolution)
            && self.time_nodes.is_empty()
            && self.conv_weights.len() <= 64
            && xs.len() <= 8
        {
            let k = self.conv_weights.len();
            let mut buf = [0.0f64; 64 * 8];
            let mut vals = [0.0f64; 64 * 8];
            for (l, &x) in xs.iter().enumerate() {
                for j in 0..k {
                    buf[l * k + j] = x - self.epsilon * self.conv_offsets[j];
                }
            }
            let n = xs.len() * k;
            self.base.sigma1_slice(t, &buf[..n], &mut vals[..n]);
            for (l, o) in out.iter_mut().enumerate() {
                let mut acc = 0.0;
                for j in 0..k {
                    acc += self.conv_weights[j] * vals[l * k + j];
                }
                *o = acc;
            }
        } else {
            for (o, &x) in out.iter_mut().zip(xs) {
                *o = self.sigma1(t, x);
            }
        }
    }

    fn drift1_slice(&self, t: f64, xs: &[f64], out: &mut [f64]) {
        if self.base.dim == 1
            && matches!(self.method, MollifyMethod::HolderConvolution)
            && self.time_nodes.is_empty()
            && self.conv_weights.len() <= 64
            && xs.len() <= 8
        {
            let k = self.conv_weights.len();
            let mut buf = [0.0f64; 64 * 8];
            let mut vals = [0.0f64; 64 * 8];
            for (l, &x) in xs.iter().enumerate() {
                for j in 0..k {
                    buf[l * k + j] = x - self.epsilon * self.conv_offsets[j];
                }
            }
            let n = xs.len() * k;
            self.base.drift1_slice(t, &buf[..n], &mut vals[..n]);
            for (l, o) in out.iter_mut().enumerate() {
                let mut acc = 0.0;
                for j in 0..k {
                    acc += self.conv_weights[j] * vals[l * k + j];
                }
                *o = acc;
            }
        } else {
            for (o, &x) in out.iter_mut().zip(xs) {
                *o = self.drift1(t, x);
            }
        }
    }
}

// ---------------------------------------------------------------------------
// Deviation measurements
// ---------------------------------------------------------------------------

/// Measured mollification deviations.
#[derive(Clone, Copy, Debug)]
pub struct Deviations {
    /// `sup |b - b_eps|` over the grid.
    pub delta_b: f64,
    /// `sup |sigma - sigma_eps|`.
    pub delta_sigma: f64,
    /// `delta_sigma + eta-Hölder seminorm of (sigma - sigma_eps)`.
    pub delta_sigma_eta: f64,
    pub eta: f64,
}

/// Grid suprema of the coefficient deviations and the `eta`-seminorm of the
/// diffusion deviation measured on sampled pairs.
pub fn sup_deviation(
    base: &CoefficientField,
    mollified: &MollifiedField,
    grid: &SampleGrid,
    eta: f64,
) -> Deviations {
    let d = base.dim;
    let mut delta_b = 0.0f64;
    let mut delta_sigma = 0.0f64;
    let mut b0 = [0.0; MAX_DIM];
    let mut b1 = [0.0; MAX_DIM];
    let mut s0 = [0.0; MAX_DIM * MAX_DIM];
    let mut s1 = [0.0; MAX_DIM * MAX_DIM];
    grid.for_each(d, base.time_dependent(), |t, x| {
        base.drift(t, x, &mut b0[..d]);
        mollified.drift(t, x, &mut b1[..d]);
        base.sigma(t, x, &mut s0[..d * d]);
        mollified.sigma(t, x, &mut s1[..d * d]);
        let db: f64 = b0[..d]
            .iter()
            .zip(&b1[..d])
            .map(|(a, b)| (a - b) * (a - b))
            .sum();
        let ds: f64 = s0[..d * d]
            .iter()
            .zip(&s1[..d * d])
            .map(|(a, b)| (a - b) * (a - b))
            .sum();
        delta_b = delta_b.max(math::sqrt(db));
        delta_sigma = delta_sigma.max(math::sqrt(ds));
    });

    // eta-seminorm of sigma - sigma_eps over random pairs.
    let mut rng = CounterRng::new(grid.seed ^ 0xD5, rng::TAG_SAMPLING, 1, 0);
    let mut semi = 0.0f64;
    let mut x = [0.0; MAX_DIM];
    let mut y = [0.0; MAX_DIM];
    for _ in 0..grid.pair_samples {
        let u = rng.next_unit();
        let delta = math::powf(10.0, -5.0 * u);
        for xi in x[..d].iter_mut() {
            *xi = grid.box_halfwidth * (2.0 * rng.next_unit() - 1.0);
        }
        let mut norm = 0.0;
        for yi in y[..d].iter_mut() {
            *yi = 2.0 * rng.next_unit() - 1.0;
            norm += *yi * *yi;
        }
        let norm = math::sqrt(norm).max(1e-300);
        for i in 0..d {
            y[i] = x[i] + y[i] / norm * delta;
        }
        base.sigma(0.0, &x[..d], &mut s0[..d * d]);
        mollified.sigma(0.0, &x[..d], &mut s1[..d * d]);
        let mut fx = [0.0; MAX_DIM * MAX_DIM];
        for i in 0..d * d {
            fx[i] = s0[i] - s1[i];
        }
        base.sigma(0.0, &y[..d], &mut s0[..d * d]);
        mollified.sigma(0.0, &y[..d], &mut s1[..d * d]);
        let mut diff2 = 0.0;
        for i in 0..d * d {
            let fy = s0[i] - s1[i];
            diff2 += (fx[i] - fy) * (fx[i] - fy);
        }
        semi = semi.max(math::sqrt(diff2) / math::powf(delta, eta));
    }

    Deviations {
        delta_b,
        delta_sigma,
        delta_sigma_eta: delta_sigma + semi,
        eta,
    }
}

/// `(int_0^T int_box |b - b_eps|^q dx dt)^{1/q}`.
///
/// The box defaults to the discontinuity set's bounding box inflated by
/// `3 eps` (the integrand vanishes outside `V_eps`); pass one explicitly for
/// unbounded manifolds. Composite midpoint rule with `resolution` cells per
/// axis, which is robust to the integrand's kinks at the neighborhood
/// boundary.
pub fn lq_deviation(
    base: &CoefficientField,
    mollified: &MollifiedField,
    q: f64,
    t_horizon: f64,
    resolution: usize,
    explicit_box: Option<Vec<(f64, f64)>>,
) -> Result<f64> {
    let d = base.dim;
    if q <= d as f64 {
        return Err(EwelError::Config(format!(
            "L^q deviation wants q > d (got q={q}, d={d})"
        )));
    }
    let boxes = match explicit_box {
        Some(b) => {
            if b.len() != d {
                return Err(EwelError::Argument(format!(
                    "integration box has {} axes, field has {d}",
                    b.len()
                )));
            }
            b
        }
        None => manifold_box(base, mollified.epsilon)?,
    };

    let mut b0 = [0.0; MAX_DIM];
    let mut b1 = [0.0; MAX_DIM];
    let mut x = [0.0; MAX_DIM];
    let total = resolution.pow(d as u32);
    let mut cell = 1.0;
    for (lo, hi) in &boxes {
        cell *= (hi - lo) / resolution as f64;
    }
    // Time-independent drifts integrate to a factor T.
    let time_slices: usize = if base.time_dependent() { 16 } else { 1 };
    let dt = t_horizon / time_slices as f64;
    let mut acc = 0.0;
    for it in 0..time_slices {
        let t = (it as f64 + 0.5) * dt;
        let t = if base.time_dependent() { t } else { 0.0 };
        for flat in 0..total {
            let mut rem = flat;
            for (k, (lo, hi)) in boxes.iter().enumerate() {
                let i = rem % resolution;
                rem /= resolution;
                x[k] = lo + (hi - lo) * (i as f64 + 0.5) / resolution as f64;
            }
            base.drift(t, &x[..d], &mut b0[..d]);
            mollified.drift(t, &x[..d], &mut b1[..d]);
            let diff2: f64 = b0[..d]
                .iter()
                .zip(&b1[..d])
                .map(|(a, b)| (a - b) * (a - b))
                .sum();
            acc += math::powf(math::sqrt(diff2), q) * cell * dt;
        }
    }
    Ok(math::powf(acc, 1.0 / q))
}

fn manifold_box(base: &CoefficientField, eps: f64) -> Result<Vec<(f64, f64)>> {
    let d = base.dim;
    let set = base.discontinuities.as_ref().ok_or_else(|| {
        EwelError::Argument(String::from("L^q deviation wants a piecewise-smooth field"))
    })?;
    let mut lo = vec![f64::INFINITY; d];
    let mut hi = vec![f64::NEG_INFINITY; d];
    for m in &set.manifolds {
        match m {
            Manifold::Point1D { p } => {
                lo[0] = lo[0].min(*p);
                hi[0] = hi[0].max(*p);
            }
            Manifold::Sphere { center, radius } => {
                for k in 0..d {
                    lo[k] = lo[k].min(center[k] - radius);
                    hi[k] = hi[k].max(center[k] + radius);
                }
            }
            Manifold::Hyperplane { .. } => {
                return Err(EwelError::Config(String::from(
                    "hyperplane manifolds are unbounded: pass an explicit integration box",
                )));
            }
        }
    }
    Ok(lo
        .into_iter()
        .zip(hi)
        .map(|(l, h)| (l - 3.0 * eps, h + 3.0 * eps))
        .collect())
}

/// Result of a derivative blow-up scan.
#[derive(Clone, Copy, Debug)]
pub struct DerivativeScan {
    pub max_drift: f64,
    pub max_sigma: f64,
}

/// Max of `|D^alpha b_eps|` and `|D^alpha sigma_eps|` over the grid by
/// central finite differences with the given step.
pub fn derivative_blowup_scan(
    mollified: &MollifiedField,
    alpha: &[usize],
    grid: &SampleGrid,
    fd_step: f64,
) -> Result<DerivativeScan> {
    let d = mollified.dim();
    if alpha.len() != d {
        return Err(EwelError::Argument(format!(
            "multi-index has {} axes, field has {d}",
            alpha.len()
        )));
    }
    let order: usize = alpha.iter().sum();
    if order > 4 {
        return Err(EwelError::Argument(String::from("|alpha| <= 4 supported")));
    }
    if fd_step >= mollified.epsilon / 4.0 {
        return Err(EwelError::Config(format!(
            "finite-difference step {fd_step} does not resolve eps = {} (need < eps/4)",
            mollified.epsilon
        )));
    }

    // Tensor central-difference stencil.
    let mut stencil: Vec<(Vec<f64>, f64)> = vec![(vec![0.0; d], 1.0)];
    for (axis, &k) in alpha.iter().enumerate() {
        if k == 0 {
            continue;
        }
        let axis_stencil = central_stencil(k, fd_step);
        let mut next = Vec::with_capacity(stencil.len() * axis_stencil.len());
        for (off, w) in &stencil {
            for &(shift, sw) in &axis_stencil {
                let mut o = off.clone();
                o[axis] += shift;
                next.push((o, w * sw));
            }
        }
        stencil = next;
    }

    let mut max_drift = 0.0f64;
    let mut max_sigma = 0.0f64;
    let mut b = [0.0; MAX_DIM];
    let mut s = [0.0; MAX_DIM * MAX_DIM];
    let mut y = [0.0; MAX_DIM];
    grid.for_each(d, mollified.time_dependent(), |t, x| {
        let mut db = [0.0; MAX_DIM];
        let mut ds = [0.0; MAX_DIM * MAX_DIM];
        for (off, w) in &stencil {
            for i in 0..d {
                y[i] = x[i] + off[i];
            }
            mollified.drift(t, &y[..d], &mut b[..d]);
            mollified.sigma(t, &y[..d], &mut s[..d * d]);
            for i in 0..d {
                db[i] += w * b[i];
            }
            for i in 0..d * d {
                ds[i] += w * s[i];
            }
        }
        let nb = math::sqrt(db[..d].iter().map(|v| v * v).sum::<f64>());
        let ns = math::sqrt(ds[..d * d].iter().map(|v| v * v).sum::<f64>());
        max_drift = max_drift.max(nb);
        max_sigma = max_sigma.max(ns);
    });

    Ok(DerivativeScan { max_drift, max_sigma })
}

/// Central difference stencil of derivative order `k`, step `h`.
fn central_stencil(k: usize, h: f64) -> Vec<(f64, f64)> {
    match k {
        1 => vec![(-h, -0.5 / h), (h, 0.5 / h)],
        2 => vec![(-h, 1.0 / (h * h)), (0.0, -2.0 / (h * h)), (h, 1.0 / (h * h))],
        3 => {
            let h3 = h * h * h;
            vec![
                (-2.0 * h, -0.5 / h3),
                (-h, 1.0 / h3),
                (h, -1.0 / h3),
                (2.0 * h, 0.5 / h3),
            ]
        }
        4 => {
            let h4 = h * h * h * h;
            vec![
                (-2.0 * h, 1.0 / h4),
                (-h, -4.0 / h4),
                (0.0, 6.0 / h4),
                (h, -4.0 / h4),
                (2.0 * h, 1.0 / h4),
            ]
        }
        _ => panic!("stencil order {k} unsupported"),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coefficients::{validate_field, DiscontinuitySet};

    #[test]
    fn kernel_has_unit_mass() {
        for d in 1..=2 {
            let k = MollifierKernel::new(d);
            assert!((k.mass() - 1.0).abs() < 1e-8, "d={d}: {}", k.mass());
        }
    }

    #[test]
    fn kernel_is_nonnegative_and_supported_on_unit_ball() {
        let k = MollifierKernel::new(1);
        for i in 0..200 {
            let z = -1.5 + 0.015 * i as f64;
            let v = k.profile(&[z]);
            assert!(v >= 0.0);
            if z.abs() >= 1.0 {
                assert_eq!(v, 0.0);
            }
        }
    }

    /// Oracle: second moment of the 1D bump by fine midpoint quadrature.
    fn second_moment_oracle() -> f64 {
        let n = 400_000;
        let mut num = 0.0;
        let mut den = 0.0;
        for i in 0..n {
            let z = -1.0 + 2.0 * (i as f64 + 0.5) / n as f64;
            let w = bump_r2(z * z);
            num += z * z * w;
            den += w;
        }
        num / den
    }

    #[test]
    fn kernel_moment_matches_midpoint_oracle() {
        let k = MollifierKernel::new(1);
        let m2 = k.moment(2.0);
        let want = second_moment_oracle();
        assert!((m2 - want).abs() < 1e-6, "{m2} vs {want}");
    }

    fn quadratic_field() -> CoefficientField {
        // b(x) = x^2 is not in the zoo; emulate with a test-only closure via
        // the OU trick is not possible, so use the linear and constant cases
        // separately plus a direct convolution check against the kernel
        // moment for the quadratic (computed here by hand).
        CoefficientField::constant(1, vec![1.0], vec![1.0]).unwrap()
    }

    #[test]
    fn constant_field_mollifies_to_itself() {
        let f = quadratic_field();
        let m = mollify_holder(&f, 0.2, 24, 1.0).unwrap();
        for i in 0..20 {
            let x = -2.0 + 0.2 * i as f64;
            assert!((m.drift1(0.0, x) - 1.0).abs() < 1e-12);
            assert!((m.sigma1(0.0, x) - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn linear_drift_is_fixed_by_symmetric_kernel() {
        // OU drift b(x) = -x: odd moments of rho vanish, so b_eps = b.
        let f = CoefficientField::ornstein_uhlenbeck(1.0, 1.0);
        let m = mollify_holder(&f, 0.15, 24, 1.0).unwrap();
        for i in 0..30 {
            let x = -1.5 + 0.1 * i as f64;
            assert!((m.drift1(0.0, x) + x).abs() < 1e-8, "x={x}");
        }
    }

    #[test]
    fn quadratic_shift_matches_kernel_second_moment() {
        // For b(x) = x^2, b_eps(x) - b(x) = eps^2 m_2(rho). The zoo has no
        // quadratic drift, but sigma sigma* of the CIR model near its cap is
        // not quadratic either; so check the convolution machinery directly.
        let f = CoefficientField::ornstein_uhlenbeck(1.0, 1.0);
        let m = mollify_holder(&f, 0.1, 24, 1.0).unwrap();
        // integrate x^2 against the discrete kernel by shifting the linear
        // evaluator: (x - eps z)^2 = x^2 - 2 x eps z + eps^2 z^2; the linear
        // term cancels, so sum_j w_j (x0 - eps z_j)^2 - x0^2 = eps^2 m2.
        let x0 = 0.7;
        let mut acc = 0.0;
        for (j, w) in m.conv_weights.iter().enumerate() {
            let y = x0 - m.epsilon * m.conv_offsets[j];
            acc += w * y * y;
        }
        let kernel = MollifierKernel::new(1);
        let want = x0 * x0 + m.epsilon * m.epsilon * kernel.moment(2.0);
        assert!((acc - want).abs() < 1e-8, "{acc} vs {want}");
    }

    #[test]
    fn blend_matches_sign_model_by_hand() {
        // 1D b(x) = sign(x), S = {0}, eps = 0.1.
        let f = CoefficientField::sign_drift(1.0, 1.0);
        let m = mollify_piecewise(&f, 0.1).unwrap();
        // Boundary matching: weights (1, 0) at x = +eps and 0 at the center.
        assert!((m.drift1(0.0, 0.1) - 1.0).abs() < 1e-12);
        assert!((m.drift1(0.0, -0.1) + 1.0).abs() < 1e-12);
        assert!(m.drift1(0.0, 0.0).abs() < 1e-14);
        // Independent scalar evaluation of the blend formula at x = 0.05:
        // distances to the offset surfaces are 0.15 and -0.05.
        let want = -(0.25f64).exp() * (-1.0f64 / (4.0 - 2.25)).exp()
            + (0.25f64).exp() * (-1.0f64 / (4.0 - 0.25)).exp();
        assert!((m.drift1(0.0, 0.05) - want).abs() < 1e-12, "{want}");
        // Outside the neighborhood the drift is untouched.
        assert_eq!(m.drift1(0.0, 0.3), 1.0);
        assert_eq!(m.drift1(0.0, -0.7), -1.0);
        // sigma untouched everywhere.
        assert_eq!(m.sigma1(0.0, 0.03), 1.0);
    }

    #[test]
    fn blend_boundary_identity_exact() {
        let f = CoefficientField::tanh_drift(0.5, 1.0, 1.0);
        // Build a piecewise field on a sphere in 2D to exercise projections.
        let f2 = CoefficientField::sphere_drift(vec![0.0, 0.0], 1.0, 0.5, 1.0).unwrap();
        let eps = 0.15;
        let m2 = mollify_piecewise(&f2, eps).unwrap();
        let mut out = [0.0; 2];
        let mut base = [0.0; 2];
        for i in 0..24 {
            let th = i as f64 * core::f64::consts::PI / 12.0;
            for r in [1.0 - eps, 1.0 + eps] {
                let x = [r * th.cos(), r * th.sin()];
                m2.drift(0.0, &x, &mut out);
                f2.drift(0.0, &x, &mut base);
                assert!(
                    (out[0] - base[0]).abs() < 1e-10 && (out[1] - base[1]).abs() < 1e-10,
                    "theta={th} r={r}"
                );
            }
        }
        drop(f);
    }

    #[test]
    fn holder_mollified_field_validates_and_converges_pointwise() {
        let f = CoefficientField::weierstrass_sigma(0.5, 2, 10, 1.0, 0.5, 1.0, 0.3).unwrap();
        let mut grid = SampleGrid::default_for_dim(1);
        grid.space_samples_per_axis = 129;
        grid.pair_samples = 4000;
        let mut last = f64::INFINITY;
        for eps in [0.2, 0.1, 0.05, 0.025] {
            let m = mollify_holder(&f, eps, 24, 1.0).unwrap();
            let rep = validate_field(&m, &m.declared_bounds(), &grid);
            assert!(rep.pass(), "eps={eps}: {:?}", rep.violations);
            // pointwise convergence on a fixed point set
            let mut dev = 0.0f64;
            for i in 0..9 {
                let x = -2.0 + 0.5 * i as f64;
                dev = dev.max((m.sigma1(0.0, x) - f.sigma1(0.0, x)).abs());
            }
            assert!(dev < last, "eps={eps}: {dev} !< {last}");
            last = dev;
        }
    }

    #[test]
    fn mollified_holder_seminorm_does_not_grow() {
        let f = CoefficientField::weierstrass_sigma(0.5, 2, 10, 1.0, 0.5, 1.0, 0.3).unwrap();
        let grid = SampleGrid::default_for_dim(1);
        let m = mollify_holder(&f, 0.1, 24, 1.0).unwrap();
        let rep_base = validate_field(&f, &f.declared_bounds(), &grid);
        let rep_moll = validate_field(&m, &m.declared_bounds(), &grid);
        let qb = rep_base.holder_max_quotient.unwrap();
        let qm = rep_moll.holder_max_quotient.unwrap();
        assert!(qm <= qb * 1.05, "mollified {qm} vs base {qb}");
    }

    #[test]
    fn sup_deviation_zero_for_constant() {
        let f = CoefficientField::constant(1, vec![0.4], vec![1.2]).unwrap();
        let m = mollify_holder(&f, 0.1, 24, 1.0).unwrap();
        let dev = sup_deviation(&f, &m, &SampleGrid::default_for_dim(1), 0.25);
        assert!(dev.delta_b < 1e-12 && dev.delta_sigma < 1e-12);
        assert!(dev.delta_sigma_eta < 1e-10);
    }

    #[test]
    fn sign_drift_sup_deviation_is_unit() {
        // |b - b_eps| = 1 at x = 0 (the blend vanishes there, b = +1).
        let f = CoefficientField::sign_drift(1.0, 1.0);
        let m = mollify_piecewise(&f, 0.1).unwrap();
        let mut grid = SampleGrid::default_for_dim(1);
        grid.space_samples_per_axis = 2001;
        let dev = sup_deviation(&f, &m, &grid, 0.25);
        assert!((dev.delta_b - 1.0).abs() < 2e-2, "{}", dev.delta_b);
        assert_eq!(dev.delta_sigma, 0.0);
    }

    #[test]
    fn weierstrass_deviation_scales_like_sqrt_eps() {
        let f = CoefficientField::weierstrass_sigma(0.5, 2, 12, 1.0, 0.5, 1.0, 0.3).unwrap();
        let mut grid = SampleGrid::default_for_dim(1);
        grid.space_samples_per_axis = 1024;
        grid.box_halfwidth = 2.0;
        grid.pair_samples = 0;
        let m_big = mollify_holder(&f, 0.2, 24, 1.0).unwrap();
        let m_small = mollify_holder(&f, 0.05, 24, 1.0).unwrap();
        let d_big = sup_deviation(&f, &m_big, &grid, 0.25).delta_sigma;
        let d_small = sup_deviation(&f, &m_small, &grid, 0.25).delta_sigma;
        let ratio = d_big / d_small;
        // eps ratio 4 and exponent 1/2 predict 2; allow the spec's MC slack.
        assert!(ratio >= 1.6 && ratio <= 2.8, "ratio {ratio}");
    }

    #[test]
    fn lq_deviation_zero_when_identical() {
        let f = CoefficientField::constant(1, vec![0.4], vec![1.0]).unwrap();
        let m = mollify_holder(&f, 0.1, 24, 1.0).unwrap();
        let v = lq_deviation(&f, &m, 2.0, 1.0, 256, Some(vec![(-1.0, 1.0)])).unwrap();
        assert!(v < 1e-10, "{v}");
    }

    #[test]
    fn lq_deviation_sign_model_against_midpoint_oracle() {
        let f = CoefficientField::sign_drift(1.0, 1.0);
        let eps = 0.1;
        let m = mollify_piecewise(&f, eps).unwrap();
        let got = lq_deviation(&f, &m, 2.0, 1.0, 512, None).unwrap();
        // Fine midpoint oracle over [-3eps, 3eps] with 20000 cells.
        let n = 20_000;
        let (lo, hi) = (-3.0 * eps, 3.0 * eps);
        let cell = (hi - lo) / n as f64;
        let mut acc = 0.0;
        for i in 0..n {
            let x = lo + (i as f64 + 0.5) * cell;
            let diff = f.drift1(0.0, x) - m.drift1(0.0, x);
            acc += diff * diff * cell;
        }
        let want = acc.sqrt();
        assert!((got - want).abs() / want < 0.01, "{got} vs {want}");
        // And the dominant scale is sqrt(eps).
        assert!(got < 2.0 * eps.sqrt());
    }

    #[test]
    fn lq_rejects_q_at_most_d() {
        let f = CoefficientField::sign_drift(1.0, 1.0);
        let m = mollify_piecewise(&f, 0.1).unwrap();
        assert!(matches!(
            lq_deviation(&f, &m, 1.0, 1.0, 64, None),
            Err(EwelError::Config(_))
        ));
    }

    #[test]
    fn lq_halving_eps_scales_by_two_to_minus_inv_q() {
        let f = CoefficientField::sign_drift(1.0, 1.0);
        let q = 2.0;
        let v1 = lq_deviation(&f, &mollify_piecewise(&f, 0.1).unwrap(), q, 1.0, 1024, None)
            .unwrap();
        let v2 = lq_deviation(&f, &mollify_piecewise(&f, 0.05).unwrap(), q, 1.0, 1024, None)
            .unwrap();
        let ratio = v2 / v1;
        let ideal = 2f64.powf(-1.0 / q);
        assert!((ratio - ideal).abs() / ideal < 0.15, "ratio {ratio} ideal {ideal}");
    }

    #[test]
    fn derivative_scan_constant_is_zero() {
        let f = CoefficientField::constant(1, vec![0.4], vec![1.0]).unwrap();
        let m = mollify_holder(&f, 0.1, 24, 1.0).unwrap();
        let scan = derivative_blowup_scan(&m, &[1], &SampleGrid::default_for_dim(1), 0.001)
            .unwrap();
        assert!(scan.max_drift < 1e-8 && scan.max_sigma < 1e-8);
    }

    #[test]
    fn derivative_scan_rejects_coarse_step() {
        let f = CoefficientField::constant(1, vec![0.4], vec![1.0]).unwrap();
        let m = mollify_holder(&f, 0.1, 24, 1.0).unwrap();
        assert!(matches!(
            derivative_blowup_scan(&m, &[1], &SampleGrid::default_for_dim(1), 0.05),
            Err(EwelError::Config(_))
        ));
    }

    #[test]
    fn weierstrass_first_derivative_blows_up_like_inverse_sqrt_eps() {
        let f = CoefficientField::weierstrass_sigma(0.5, 2, 12, 1.0, 0.5, 1.0, 0.3).unwrap();
        let mut grid = SampleGrid::default_for_dim(1);
        grid.space_samples_per_axis = 257;
        grid.box_halfwidth = 2.0;
        let mut scans = Vec::new();
        for eps in [0.2, 0.1] {
            let m = mollify_holder(&f, eps, 24, 1.0).unwrap();
            let scan = derivative_blowup_scan(&m, &[1], &grid, eps / 32.0).unwrap();
            scans.push(scan.max_sigma);
        }
        let growth = scans[1] / scans[0];
        // eps^{-1/2} law: halving eps grows the max by sqrt(2), 25% slack.
        assert!(growth >= 1.06 && growth <= 1.90, "growth {growth}");
    }

    #[test]
    fn blend_first_derivative_blows_up_like_inverse_eps() {
        let f = CoefficientField::sign_drift(1.0, 1.0);
        let mut grid = SampleGrid::default_for_dim(1);
        grid.space_samples_per_axis = 801;
        grid.box_halfwidth = 1.0;
        let mut scans = Vec::new();
        for eps in [0.2, 0.1] {
            let m = mollify_piecewise(&f, eps).unwrap();
            let scan = derivative_blowup_scan(&m, &[1], &grid, eps / 64.0).unwrap();
            scans.push(scan.max_drift);
        }
        let growth = scans[1] / scans[0];
        assert!(growth >= 1.5 && growth <= 2.5, "growth {growth}");
    }

    #[test]
    fn overlapping_neighborhoods_rejected_with_pair() {
        let f = CoefficientField::hyperplane_drift(vec![1.0], 0.0, 1.0, 1.0);
        drop(f);
        let set = DiscontinuitySet::new(vec![
            Manifold::point_1d(0.0),
            Manifold::point_1d(0.15),
        ])
        .unwrap();
        let mut field = CoefficientField::sign_drift(1.0, 1.0);
        field.discontinuities = Some(set);
        let err = mollify_piecewise(&field, 0.1).unwrap_err();
        match err {
            EwelError::Config(msg) => assert!(msg.contains("0 and 1"), "{msg}"),
            other => panic!("unexpected {other:?}"),
        }
    }
}
