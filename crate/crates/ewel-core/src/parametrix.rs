//! Transition densities through the parametrix series.
//!
//! The density of `dX = b dt + sigma dW` started at `(s, x)` is expanded
//! around the driftless Gaussian proxy frozen at the terminal point `y`:
//!
//! `p(s,t,x,y) = sum_r (ptilde (x) H^{(r)})(s,t,x,y)`,
//!
//! where `ptilde(u,t,z,y)` is the normal density with covariance
//! `int_u^t sigma sigma*(v,y) dv` evaluated at `y - z`, the kernel is
//! `H = (L - Ltilde^y) ptilde` (closed form in the Gaussian derivatives),
//! `H^{(r)}` its r-fold time-space self-convolution, and `(x)` the
//! time-space convolution `int_s^t du int f(s,u,x,z) g(u,t,z,y) dz`.
//!
//! `H` blows up like `(t-u)^{gamma/2 - 1}` at the upper time edge and the
//! iterated kernels like `(t-u)^{r gamma/2 - 1}` at the lower one, so every
//! time integral runs on endpoint-graded nodes parameterized by the exact
//! distance to the singular endpoint ([`quad::TwoSidedRule`]).
//!
//! Iterated kernels are memoized on a fixed product grid in self-similar
//! coordinates `(tau, (y-z)/sqrt(a(y) tau))` with the known singular
//! envelope factored out, then bilinearly interpolated; this keeps the
//! evaluation deterministic and the cost per series level bounded.
//!
//! Dimensions: `d = 1` in general, `d = 2` for diagonal diffusion
//! coefficients (the covariance and the space integrals tensorize).

use crate::coefficients::Field;
use crate::error::{EwelError, Result};
use crate::math;
use crate::quad::{self, TwoSidedRule};
use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

/// Diagonal covariance for `d <= 2` (scalar in 1D).
#[derive(Clone, Copy, Debug)]
pub struct DiagCov {
    pub dim: usize,
    pub var: [f64; 2],
}

impl DiagCov {
    fn det(&self) -> f64 {
        match self.dim {
            1 => self.var[0],
            _ => self.var[0] * self.var[1],
        }
    }

    /// Centered normal density at `diff`.
    pub fn density(&self, diff: &[f64]) -> f64 {
        let mut quad_form = 0.0;
        for k in 0..self.dim {
            quad_form += diff[k] * diff[k] / self.var[k];
        }
        let norm = math::powf(2.0 * core::f64::consts::PI, self.dim as f64 / 2.0)
            * math::sqrt(self.det());
        math::exp(-0.5 * quad_form) / norm
    }
}

/// Quadrature and memoization resolution for the series engine.
#[derive(Clone, Copy, Debug)]
pub struct ConvQuad {
    /// Graded time nodes per convolution.
    pub time_nodes: usize,
    /// Space nodes per axis per convolution.
    pub space_nodes: usize,
    /// Gaussian truncation radius in standard deviations.
    pub trunc_stds: f64,
    /// Memoized kernel grid: time points.
    pub grid_time: usize,
    /// Memoized kernel grid: space points per axis.
    pub grid_space: usize,
    /// Nodes for the covariance time integral (inhomogeneous fields).
    pub cov_nodes: usize,
}

impl Default for ConvQuad {
    fn default() -> Self {
        Self {
            time_nodes: 64,
            space_nodes: 48,
            trunc_stds: 6.0,
            grid_time: 64,
            grid_space: 72,
            cov_nodes: 16,
        }
    }
}

impl ConvQuad {
    /// Lighter resolution for 2D work where space integrals tensorize.
    pub fn light_2d() -> Self {
        Self {
            time_nodes: 32,
            space_nodes: 20,
            trunc_stds: 5.5,
            grid_time: 28,
            grid_space: 28,
            cov_nodes: 8,
        }
    }

    fn check(&self) -> Result<()> {
        // Gaussian mass outside the truncation window must stay below 1e-6.
        let tail = libm::erfc(self.trunc_stds / core::f64::consts::SQRT_2);
        if tail > 1e-6 {
            return Err(EwelError::Config(format!(
                "truncation radius {} stds keeps only 1-{tail:.2e} of the Gaussian mass \
                 (loss must be <= 1e-6)",
                self.trunc_stds
            )));
        }
        if self.time_nodes < 8 || self.space_nodes < 8 {
            return Err(EwelError::Config(String::from(
                "convolution quadrature wants >= 8 nodes per axis",
            )));
        }
        Ok(())
    }
}

/// `a = sigma sigma*` at `(t, x)`, demanding diagonality for d = 2.
fn diag_a<F: Field + ?Sized>(field: &F, t: f64, x: &[f64]) -> Result<DiagCov> {
    let d = field.dim();
    if d > 2 {
        return Err(EwelError::Config(String::from(
            "the parametrix engine supports d in {1, 2}",
        )));
    }
    let mut a = [0.0; crate::MAX_DIM * crate::MAX_DIM];
    field.diffusion_matrix(t, x, &mut a[..d * d]);
    let mut var = [0.0; 2];
    match d {
        1 => var[0] = a[0],
        _ => {
            let scale = math::abs(a[0]).max(math::abs(a[3]));
            if math::abs(a[1]) > 1e-10 * scale {
                return Err(EwelError::Config(String::from(
                    "d = 2 parametrix wants a diagonal diffusion coefficient",
                )));
            }
            var[0] = a[0];
            var[1] = a[3];
        }
    }
    Ok(DiagCov { dim: d, var })
}

/// Covariance integral `Sigma(s, u, y) = int_s^u a(v, y) dv` of the frozen
/// proxy; exact for time-independent fields, Gauss–Legendre otherwise.
pub fn covariance_integral<F: Field + ?Sized>(
    field: &F,
    s: f64,
    u: f64,
    y: &[f64],
    cov_nodes: usize,
) -> Result<DiagCov> {
    let span = u - s;
    if !(span > 0.0) {
        return Err(EwelError::Argument(format!(
            "covariance wants s < u (got s={s}, u={u})"
        )));
    }
    let mut cov = if field.time_dependent() {
        let gl = quad::gauss_legendre_on(cov_nodes, s, u);
        let mut acc = DiagCov { dim: field.dim(), var: [0.0; 2] };
        for (&v, &w) in gl.nodes.iter().zip(&gl.weights) {
            let a = diag_a(field, v, y)?;
            acc.var[0] += w * a.var[0];
            acc.var[1] += w * a.var[1];
        }
        acc
    } else {
        let mut a = diag_a(field, 0.0, y)?;
        a.var[0] *= span;
        a.var[1] *= span;
        a
    };
    cov.dim = field.dim();
    for k in 0..cov.dim {
        if !(cov.var[k] > 0.0) || !cov.var[k].is_finite() {
            return Err(EwelError::NotSpd(format!(
                "covariance axis {k} is {} over [{s}, {u}]",
                cov.var[k]
            )));
        }
    }
    Ok(cov)
}

/// Frozen Gaussian proxy density `ptilde(s,t,x,y)`: coefficients frozen at
/// the terminal point `y`, evaluated at `y - x`.
pub fn proxy_density<F: Field + ?Sized>(
    field: &F,
    s: f64,
    t: f64,
    x: &[f64],
    y: &[f64],
) -> Result<f64> {
    let cov = covariance_integral(field, s, t, y, ConvQuad::default().cov_nodes)?;
    let mut diff = [0.0; 2];
    for k in 0..cov.dim {
        diff[k] = y[k] - x[k];
    }
    Ok(cov.density(&diff[..cov.dim]))
}

/// Parametrix kernel `H(u,t,z,y) = (L_u - Ltilde_u^y) ptilde(u,t,z,y)` in
/// closed form:
/// `<b(u,z), Sigma^{-1}(y-z)> ptilde + 1/2 Tr((a(u,z)-a(u,y))
///  (Sigma^{-1}(y-z)(y-z)* Sigma^{-1} - Sigma^{-1})) ptilde`.
pub fn kernel_h<F: Field + ?Sized>(
    field: &F,
    u: f64,
    t: f64,
    z: &[f64],
    y: &[f64],
) -> Result<f64> {
    let cov = covariance_integral(field, u, t, y, ConvQuad::default().cov_nodes)?;
    Ok(kernel_h_with_cov(field, u, z, y, &cov))
}

/// Kernel with a precomputed covariance (hot path).
fn kernel_h_with_cov<F: Field + ?Sized>(
    field: &F,
    u: f64,
    z: &[f64],
    y: &[f64],
    cov: &DiagCov,
) -> f64 {
    let d = cov.dim;
    let mut b = [0.0; crate::MAX_DIM];
    field.drift(u, z, &mut b[..d]);
    let az = diag_a_unchecked(field, u, z, d);
    let ay = diag_a_unchecked(field, u, y, d);
    let mut diff = [0.0; 2];
    let mut first = 0.0;
    let mut second = 0.0;
    for k in 0..d {
        let m = y[k] - z[k];
        diff[k] = m;
        let inv = 1.0 / cov.var[k];
        first += b[k] * inv * m;
        second += 0.5 * (az[k] - ay[k]) * (inv * inv * m * m - inv);
    }
    (first + second) * cov.density(&diff[..d])
}

/// Diagonal of `sigma sigma*` without the diagonality re-check.
fn diag_a_unchecked<F: Field + ?Sized>(field: &F, t: f64, x: &[f64], d: usize) -> [f64; 2] {
    let mut a = [0.0; crate::MAX_DIM * crate::MAX_DIM];
    field.diffusion_matrix(t, x, &mut a[..d * d]);
    match d {
        1 => [a[0], 0.0],
        _ => [a[0], a[3]],
    }
}

/// The epsilon-free prefactor of the series term bound:
/// `((1 v T^{(1-gamma)/2}) c1)^{r+1} Gamma(gamma/2)^r / Gamma(1 + r gamma/2)
///  * dt^{r gamma/2}`.
pub fn term_bound(r: usize, dt: f64, gamma: f64, c1: f64, t_horizon: f64) -> f64 {
    let a = (1.0f64).max(math::powf(t_horizon, (1.0 - gamma) / 2.0)) * c1;
    let g_half = math::gamma(gamma / 2.0);
    math::powf(a, r as f64 + 1.0) * math::powf(g_half, r as f64)
        / math::gamma(1.0 + r as f64 * gamma / 2.0)
        * math::powf(dt, r as f64 * gamma / 2.0)
}

/// Ratio `term_bound(r+1)/term_bound(r)`; decreasing in `r`.
pub fn term_bound_ratio(r: usize, dt: f64, gamma: f64, c1: f64, t_horizon: f64) -> f64 {
    let a = (1.0f64).max(math::powf(t_horizon, (1.0 - gamma) / 2.0)) * c1;
    a * math::gamma(gamma / 2.0) * math::powf(dt, gamma / 2.0)
        * math::gamma(1.0 + r as f64 * gamma / 2.0)
        / math::gamma(1.0 + (r as f64 + 1.0) * gamma / 2.0)
}

// ---------------------------------------------------------------------------
// Generic time-space convolution
// ---------------------------------------------------------------------------

/// Gaussian envelope description of a kernel factor: width of
/// `f(s, u, x, .)` is `sqrt(base^2 + rate (u - s))` around its center.
#[derive(Clone, Copy, Debug)]
pub struct EnvelopeSpec {
    pub rate_left: f64,
    pub base_left: f64,
    pub rate_right: f64,
    pub base_right: f64,
    /// Integrable endpoint exponents of the time integrand at `u -> s` and
    /// `u -> t`.
    pub sing_left: f64,
    pub sing_right: f64,
}

impl Default for EnvelopeSpec {
    fn default() -> Self {
        Self {
            rate_left: 1.0,
            base_left: 0.0,
            rate_right: 1.0,
            base_right: 0.0,
            sing_left: 0.0,
            sing_right: -0.5,
        }
    }
}

/// Time-space convolution
/// `(f (x) g)(s,t,x,y) = int_s^t du int f(s,u,x,z) g(u,t,z,y) dz`
/// with graded time nodes and Gaussian-envelope-centered space nodes.
///
/// `discrete_steps = Some(n)` evaluates the grid Riemann-sum variant
/// `h sum_{k=0}^{n-1} int f(s,t_k,x,z) g(t_k,t,z,y) dz` with `h = (t-s)/n`
/// instead (the `k = 0` term evaluates `f` at zero time span; the caller's
/// `f` decides what that means).
#[allow(clippy::too_many_arguments)]
pub fn convolve_step(
    f: &dyn Fn(f64, f64, &[f64], &[f64]) -> f64,
    g: &dyn Fn(f64, f64, &[f64], &[f64]) -> f64,
    s: f64,
    t: f64,
    x: &[f64],
    y: &[f64],
    quad_spec: &ConvQuad,
    env: &EnvelopeSpec,
    discrete_steps: Option<usize>,
) -> Result<f64> {
    quad_spec.check()?;
    if !(t > s) {
        return Err(EwelError::Argument(format!("convolution wants s < t, got [{s}, {t}]")));
    }
    let d = x.len();
    let span = t - s;

    let space_integral = |du_left: f64, du_right: f64| -> Result<f64> {
        let u = s + du_left;
        let wf = math::sqrt(env.base_left * env.base_left + env.rate_left * du_left);
        let wg = math::sqrt(env.base_right * env.base_right + env.rate_right * du_right);
        let mut acc = 0.0;
        // Product-Gaussian window per axis.
        let (mut lo, mut hi) = ([0.0; 2], [0.0; 2]);
        for k in 0..d {
            let (mu, width) = product_window(x[k], wf, y[k], wg, quad_spec.trunc_stds);
            lo[k] = mu - width;
            hi[k] = mu + width;
        }
        let rule0 = quad::gauss_legendre_on(quad_spec.space_nodes, lo[0], hi[0]);
        if d == 1 {
            for (&z0, &w0) in rule0.nodes.iter().zip(&rule0.weights) {
                let z = [z0];
                let val = f(s, u, x, &z) * g(u, t, &z, y);
                if !val.is_finite() {
                    return Err(EwelError::NonFiniteIntegrand { time: u, location: z0 });
                }
                acc += w0 * val;
            }
        } else {
            let rule1 = quad::gauss_legendre_on(quad_spec.space_nodes, lo[1], hi[1]);
            for (&z0, &w0) in rule0.nodes.iter().zip(&rule0.weights) {
                for (&z1, &w1) in rule1.nodes.iter().zip(&rule1.weights) {
                    let z = [z0, z1];
                    let val = f(s, u, x, &z) * g(u, t, &z, y);
                    if !val.is_finite() {
                        return Err(EwelError::NonFiniteIntegrand { time: u, location: z0 });
                    }
                    acc += w0 * w1 * val;
                }
            }
        }
        Ok(acc)
    };

    match discrete_steps {
        None => {
            let rule = TwoSidedRule::new(span, quad_spec.time_nodes, env.sing_left, env.sing_right);
            let mut acc = 0.0;
            for i in 0..rule.weights.len() {
                acc += rule.weights[i] * space_integral(rule.from_left[i], rule.from_right[i])?;
            }
            Ok(acc)
        }
        Some(n) => {
            if n == 0 {
                return Err(EwelError::Argument(String::from("discrete mode wants n >= 1")));
            }
            let h = span / n as f64;
            let mut acc = 0.0;
            for k in 0..n {
                let du = k as f64 * h;
                acc += h * space_integral(du, span - du)?;
            }
            Ok(acc)
        }
    }
}

/// Center and half-width of the product of two Gaussian envelopes.
fn product_window(cx: f64, wx: f64, cy: f64, wy: f64, stds: f64) -> (f64, f64) {
    let vx = (wx * wx).max(1e-300);
    let vy = (wy * wy).max(1e-300);
    let mu = (cx * vy + cy * vx) / (vx + vy);
    let width = math::sqrt(vx * vy / (vx + vy));
    // Degenerate factors: fall back to the wider envelope.
    let width = if width > 0.0 { width } else { wx.max(wy) };
    (mu, stds * width.max(1e-12))
}

// ---------------------------------------------------------------------------
// Series engine
// ---------------------------------------------------------------------------

/// Per-order results of a truncated parametrix series evaluation.
#[derive(Clone, Debug)]
pub struct SeriesAccumulator {
    /// `terms[r] = (ptilde (x) H^{(r)})(s,t,x,y)`.
    pub terms: Vec<f64>,
    pub r_max: usize,
    /// Partial sum of the terms.
    pub value: f64,
    /// Tail estimate from the fitted term bound.
    pub tail_estimate: f64,
    /// `c1` fitted from the first two term magnitudes.
    pub c1_fitted: f64,
    pub mode: SeriesMode,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum SeriesMode {
    Continuous,
    /// Outer convolution replaced by the grid Riemann sum with `n` steps.
    Discrete { n_steps: usize },
}

/// Memoized iterated kernel on the self-similar product grid.
struct KernelGrid {
    /// Time parameterization `tau_k = span * xi_k^KAPPA`, ascending.
    taus: Vec<f64>,
    /// Space parameterization per axis: eta in [-L, L].
    etas: Vec<f64>,
    /// Normalized values, indexed `[k * n_eta^d + flat(eta)]`.
    values: Vec<f64>,
    order: usize,
}

const KAPPA: f64 = 3.0;

/// Parametrix series evaluator for a fixed `(s, t, y)`; evaluation at
/// different starting points `x` reuses the memoized kernels.
pub struct SeriesEngine<'a, F: Field + ?Sized> {
    field: &'a F,
    s: f64,
    t: f64,
    y: Vec<f64>,
    gamma: f64,
    quad_spec: ConvQuad,
    /// Frozen diffusion matrix diagonal at `(t, y)` (envelope scale).
    a_bar: DiagCov,
    grids: Vec<KernelGrid>,
    /// Cached Gauss–Legendre base rules (building nodes is O(n^2)).
    space_rule: quad::Rule,
    cov_rule: quad::Rule,
}

impl<'a, F: Field + ?Sized> SeriesEngine<'a, F> {
    pub fn new(
        field: &'a F,
        s: f64,
        t: f64,
        y: &[f64],
        gamma: f64,
        quad_spec: ConvQuad,
    ) -> Result<Self> {
        quad_spec.check()?;
        if !(t > s) {
            return Err(EwelError::Argument(format!("series wants s < t, got [{s}, {t}]")));
        }
        if !(gamma > 0.0 && gamma <= 1.0) {
            return Err(EwelError::Argument(format!("gamma must lie in (0,1], got {gamma}")));
        }
        let a_bar = diag_a(field, t, y)?;
        let space_rule = quad::gauss_legendre(quad_spec.space_nodes);
        let cov_rule = quad::gauss_legendre_on(quad_spec.cov_nodes, 0.0, 1.0);
        Ok(Self {
            field,
            s,
            t,
            y: y.to_vec(),
            gamma,
            quad_spec,
            a_bar,
            grids: Vec::new(),
            space_rule,
            cov_rule,
        })
    }

    /// Envelope width of the iterated kernels at time gap `tau`, per axis.
    #[inline]
    fn env_width(&self, axis: usize, tau: f64) -> f64 {
        math::sqrt(self.a_bar.var[axis] * tau)
    }

    /// Singular envelope factored out of `H^{(r)}(t-tau, t, z, y)`.
    fn envelope(&self, order: usize, tau: f64, z: &[f64]) -> f64 {
        let d = self.a_bar.dim;
        let mut quad_form = 0.0;
        let mut det = 1.0;
        for k in 0..d {
            let var = self.a_bar.var[k] * tau;
            let m = self.y[k] - z[k];
            quad_form += m * m / var;
            det *= var;
        }
        let gauss = math::exp(-0.5 * quad_form)
            / (math::powf(2.0 * core::f64::consts::PI, d as f64 / 2.0) * math::sqrt(det));
        math::powf(tau, order as f64 * self.gamma / 2.0 - 1.0) * gauss
    }

    /// Closed-form `H(t - tau_right ..)` wrapper taking exact time gaps.
    /// `H(u, v, z, w)` with `v - u = gap`; the proxy covariance freezes at
    /// `w`.
    fn kernel_exact(&self, u: f64, gap: f64, z: &[f64], w: &[f64]) -> Result<f64> {
        let d = self.a_bar.dim;
        let cov = if self.field.time_dependent() {
            // Gap-accurate integral: int_u^{u+gap} a(v, w) dv.
            let mut acc = DiagCov { dim: d, var: [0.0; 2] };
            for (&dv, &wq) in self.cov_rule.nodes.iter().zip(&self.cov_rule.weights) {
                let a = diag_a_unchecked(self.field, u + gap * dv, w, d);
                acc.var[0] += gap * wq * a[0];
                acc.var[1] += gap * wq * a[1];
            }
            acc
        } else {
            let a = diag_a_unchecked(self.field, 0.0, w, d);
            DiagCov {
                dim: d,
                var: [a[0] * gap, a[1] * gap],
            }
        };
        for k in 0..d {
            if !(cov.var[k] > 0.0) {
                return Err(EwelError::NotSpd(format!(
                    "kernel covariance axis {k} nonpositive at gap {gap}"
                )));
            }
        }
        Ok(kernel_h_with_cov(self.field, u, z, w, &cov))
    }

    /// `H^{(order)}(t - tau, t, z, y)`: closed form for order 1,
    /// interpolation of the memoized grid beyond.
    fn iterated_kernel(&self, order: usize, tau: f64, z: &[f64]) -> Result<f64> {
        debug_assert!(order >= 1);
        if order == 1 {
            return self.kernel_exact(self.t - tau, tau, z, &self.y);
        }
        let grid = &self.grids[order - 2];
        debug_assert_eq!(grid.order, order);
        Ok(self.interp(grid, tau, z) * self.envelope(order, tau, z))
    }

    /// Bilinear (1D space) / trilinear (2D space) interpolation of the
    /// normalized kernel grid.
    fn interp(&self, grid: &KernelGrid, tau: f64, z: &[f64]) -> f64 {
        let span = self.t - self.s;
        let xi = math::powf((tau / span).clamp(0.0, 1.0), 1.0 / KAPPA);
        let nt = grid.taus.len();
        // Row 0 (tau = 0) holds no data: clamp to the first computed row;
        // the factored envelope supplies the singular limit below it.
        let ft = (xi * (nt - 1) as f64).max(1.0);
        let it = (ft as usize).min(nt - 2).max(1);
        let wt = (ft - it as f64).clamp(0.0, 1.0);

        let d = self.a_bar.dim;
        let ne = grid.etas.len();
        let l = self.quad_spec.trunc_stds;
        let mut idx = [0usize; 2];
        let mut wx = [0.0f64; 2];
        for k in 0..d {
            let eta = (self.y[k] - z[k]) / self.env_width(k, tau).max(1e-300);
            if math::abs(eta) >= l {
                return 0.0;
            }
            let fe = (eta + l) / (2.0 * l) * (ne - 1) as f64;
            let ie = (fe as usize).min(ne - 2);
            idx[k] = ie;
            wx[k] = fe - ie as f64;
        }

        let fetch = |k_t: usize, off: [usize; 2]| -> f64 {
            let mut flat = 0;
            for k in 0..d {
                flat = flat * ne + (idx[k] + off[k]);
            }
            grid.values[k_t * ne.pow(d as u32) + flat]
        };
        let plane = |k_t: usize| -> f64 {
            if d == 1 {
                (1.0 - wx[0]) * fetch(k_t, [0, 0]) + wx[0] * fetch(k_t, [1, 0])
            } else {
                (1.0 - wx[0]) * (1.0 - wx[1]) * fetch(k_t, [0, 0])
                    + wx[0] * (1.0 - wx[1]) * fetch(k_t, [1, 0])
                    + (1.0 - wx[0]) * wx[1] * fetch(k_t, [0, 1])
                    + wx[0] * wx[1] * fetch(k_t, [1, 1])
            }
        };
        (1.0 - wt) * plane(it) + wt * plane(it + 1)
    }

    /// Builds the memoized grid for `H^{(order)}` from order `order - 1`.
    ///
    /// `G_r(t-tau, z) = int_0^tau domega int H(t-tau, t-omega, z, w)
    ///  G_{r-1}(t-omega, w) dw`, with the inner time integral graded for the
    /// `omega -> 0` singularity of `G_{r-1}` and the `omega -> tau`
    /// singularity of `H`.
    fn build_grid(&mut self, order: usize) -> Result<()> {
        debug_assert!(order >= 2);
        let span = self.t - self.s;
        let d = self.a_bar.dim;
        let nt = self.quad_spec.grid_time;
        let ne = self.quad_spec.grid_space;
        let l = self.quad_spec.trunc_stds;

        let taus: Vec<f64> = (0..nt)
            .map(|k| span * math::powf(k as f64 / (nt - 1) as f64, KAPPA))
            .collect();
        let etas: Vec<f64> = (0..ne)
            .map(|k| -l + 2.0 * l * k as f64 / (ne - 1) as f64)
            .collect();

        let alpha_left = (order - 1) as f64 * self.gamma / 2.0 - 1.0;
        let alpha_right = self.gamma / 2.0 - 1.0;

        let n_flat = ne.pow(d as u32);
        let mut values = vec![0.0; nt * n_flat];
        // Unit-span graded rule, rescaled per row (homogeneous grading).
        let rule_unit = TwoSidedRule::new(
            1.0,
            self.quad_spec.time_nodes,
            // from_left = omega (gap to t), from_right = v - u.
            alpha_left.max(-0.999),
            alpha_right.max(-0.999),
        );
        // Row 0 (tau = 0) is never read: interpolation clamps to row 1 and
        // the factored envelope carries the exact singular limit.
        for (k_t, &tau) in taus.iter().enumerate().skip(1) {
            let u = self.t - tau;
            let rule = rule_unit.scaled(tau);
            for flat in 0..n_flat {
                let mut rem = flat;
                let mut z = [0.0; 2];
                for k in (0..d).rev() {
                    let ie = rem % ne;
                    rem /= ne;
                    z[k] = self.y[k] - etas[ie] * self.env_width(k, tau);
                }
                let mut acc = 0.0;
                for i in 0..rule.weights.len() {
                    let omega = rule.from_left[i];
                    let gap_h = rule.from_right[i];
                    if omega <= 0.0 || gap_h <= 0.0 {
                        continue;
                    }
                    let v = self.t - omega;
                    // Space window: H spreads around z with width
                    // sqrt(a gap_h), G_{r-1} around y with width
                    // sqrt(a omega).
                    acc += rule.weights[i]
                        * self.inner_space_integral(order, u, v, gap_h, omega, &z[..d])?;
                }
                let env = self.envelope(order, tau, &z[..d]);
                values[k_t * n_flat + flat] = acc / env;
            }
        }
        self.grids.push(KernelGrid {
            taus,
            etas,
            values,
            order,
        });
        Ok(())
    }

    /// `int H(u, v, z, w) G_{order-1}(v, w) dw` over the product window.
    fn inner_space_integral(
        &self,
        order: usize,
        u: f64,
        v: f64,
        gap_h: f64,
        omega: f64,
        z: &[f64],
    ) -> Result<f64> {
        let d = self.a_bar.dim;
        let stds = self.quad_spec.trunc_stds;
        let rule_base = &self.space_rule;
        let mut windows = [[0.0; 2]; 2];
        for k in 0..d {
            let wf = self.env_width(k, gap_h);
            let wg = self.env_width(k, omega);
            let (mu, width) = product_window(z[k], wf, self.y[k], wg, stds);
            windows[k] = [mu - width, mu + width];
        }
        let mut acc = 0.0;
        if d == 1 {
            let (lo, hi) = (windows[0][0], windows[0][1]);
            let half = 0.5 * (hi - lo);
            let mid = 0.5 * (lo + hi);
            for (&tn, &tw) in rule_base.nodes.iter().zip(&rule_base.weights) {
                let w = [mid + half * tn];
                let hval = self.kernel_exact(u, gap_h, z, &w)?;
                if hval != 0.0 {
                    let gval = self.iterated_kernel(order - 1, omega, &w)?;
                    let val = hval * gval;
                    if !val.is_finite() {
                        return Err(EwelError::NonFiniteIntegrand { time: v, location: w[0] });
                    }
                    acc += tw * half * val;
                }
            }
        } else {
            let (lo0, hi0) = (windows[0][0], windows[0][1]);
            let (lo1, hi1) = (windows[1][0], windows[1][1]);
            let (half0, mid0) = (0.5 * (hi0 - lo0), 0.5 * (lo0 + hi0));
            let (half1, mid1) = (0.5 * (hi1 - lo1), 0.5 * (lo1 + hi1));
            for (&t0, &w0) in rule_base.nodes.iter().zip(&rule_base.weights) {
                for (&t1, &w1) in rule_base.nodes.iter().zip(&rule_base.weights) {
                    let w = [mid0 + half0 * t0, mid1 + half1 * t1];
                    let hval = self.kernel_exact(u, gap_h, z, &w)?;
                    if hval != 0.0 {
                        let gval = self.iterated_kernel(order - 1, omega, &w)?;
                        let val = hval * gval;
                        if !val.is_finite() {
                            return Err(EwelError::NonFiniteIntegrand {
                                time: v,
                                location: w[0],
                            });
                        }
                        acc += w0 * w1 * half0 * half1 * val;
                    }
                }
            }
        }
        Ok(acc)
    }

    /// Proxy density from `(s', x)` to `(u, z)` (covariance frozen at `z`).
    fn proxy(&self, s_from: f64, gap: f64, x: &[f64], z: &[f64]) -> Result<f64> {
        let d = self.a_bar.dim;
        let cov = if self.field.time_dependent() {
            let mut acc = DiagCov { dim: d, var: [0.0; 2] };
            for (&dv, &wq) in self.cov_rule.nodes.iter().zip(&self.cov_rule.weights) {
                let a = diag_a_unchecked(self.field, s_from + gap * dv, z, d);
                acc.var[0] += gap * wq * a[0];
                acc.var[1] += gap * wq * a[1];
            }
            acc
        } else {
            let a = diag_a_unchecked(self.field, 0.0, z, d);
            DiagCov {
                dim: d,
                var: [a[0] * gap, a[1] * gap],
            }
        };
        let mut diff = [0.0; 2];
        for k in 0..d {
            diff[k] = z[k] - x[k];
            if !(cov.var[k] > 0.0) {
                return Err(EwelError::NotSpd(format!(
                    "proxy covariance axis {k} nonpositive at gap {gap}"
                )));
            }
        }
        Ok(cov.density(&diff[..d]))
    }

    /// `int ptilde(s, u, x, z) H^{(order)}(u, t, z, y) dz` at `u = t - tau`.
    fn outer_space_integral(&self, order: usize, tau: f64, gap_proxy: f64, x: &[f64]) -> Result<f64> {
        let d = self.a_bar.dim;
        let stds = self.quad_spec.trunc_stds;
        let rule_base = &self.space_rule;
        let mut windows = [[0.0; 2]; 2];
        for k in 0..d {
            let wf = self.env_width(k, gap_proxy);
            let wg = self.env_width(k, tau);
            let (mu, width) = product_window(x[k], wf, self.y[k], wg, stds);
            windows[k] = [mu - width, mu + width];
        }
        let mut acc = 0.0;
        if d == 1 {
            let (lo, hi) = (windows[0][0], windows[0][1]);
            let (half, mid) = (0.5 * (hi - lo), 0.5 * (lo + hi));
            for (&tn, &tw) in rule_base.nodes.iter().zip(&rule_base.weights) {
                let z = [mid + half * tn];
                let pval = self.proxy(self.s, gap_proxy, x, &z)?;
                if pval != 0.0 {
                    let gval = self.iterated_kernel(order, tau, &z)?;
                    acc += tw * half * pval * gval;
                }
            }
        } else {
            let (half0, mid0) = (
                0.5 * (windows[0][1] - windows[0][0]),
                0.5 * (windows[0][0] + windows[0][1]),
            );
            let (half1, mid1) = (
                0.5 * (windows[1][1] - windows[1][0]),
                0.5 * (windows[1][0] + windows[1][1]),
            );
            for (&t0, &w0) in rule_base.nodes.iter().zip(&rule_base.weights) {
                for (&t1, &w1) in rule_base.nodes.iter().zip(&rule_base.weights) {
                    let z = [mid0 + half0 * t0, mid1 + half1 * t1];
                    let pval = self.proxy(self.s, gap_proxy, x, &z)?;
                    if pval != 0.0 {
                        let gval = self.iterated_kernel(order, tau, &z)?;
                        acc += w0 * w1 * half0 * half1 * pval * gval;
                    }
                }
            }
        }
        Ok(acc)
    }

    /// Ensures memoized grids exist up to `r_max`.
    pub fn prepare(&mut self, r_max: usize) -> Result<()> {
        for order in 2..=r_max {
            if self.grids.iter().all(|g| g.order != order) {
                self.build_grid(order)?;
            }
        }
        Ok(())
    }

    /// Series term of the given order at starting point `x`.
    pub fn term(&self, order: usize, x: &[f64], mode: SeriesMode) -> Result<f64> {
        let span = self.t - self.s;
        if order == 0 {
            return self.proxy(self.s, span, x, &self.y);
        }
        match mode {
            SeriesMode::Continuous => {
                // Outer time integral over tau = t - u: the iterated kernel
                // is tau^{r gamma/2 - 1}-singular at tau -> 0; the proxy side
                // is regular after space integration.
                let alpha_left = (order as f64 * self.gamma / 2.0 - 1.0).max(-0.999);
                let rule = TwoSidedRule::new(span, self.quad_spec.time_nodes, alpha_left, 0.0);
                let mut acc = 0.0;
                for i in 0..rule.weights.len() {
                    let tau = rule.from_left[i];
                    let gap_proxy = rule.from_right[i];
                    if tau <= 0.0 || gap_proxy <= 0.0 {
                        continue;
                    }
                    acc += rule.weights[i]
                        * self.outer_space_integral(order, tau, gap_proxy, x)?;
                }
                Ok(acc)
            }
            SeriesMode::Discrete { n_steps } => {
                let h = span / n_steps as f64;
                // k = 0: ptilde(s,s,x,.) is a Dirac at x.
                let mut acc = h * self.iterated_kernel(order, span, x)?;
                for k in 1..n_steps {
                    let gap_proxy = k as f64 * h;
                    let tau = span - gap_proxy;
                    acc += h * self.outer_space_integral(order, tau, gap_proxy, x)?;
                }
                Ok(acc)
            }
        }
    }

    /// Evaluates the truncated series at `x`.
    pub fn evaluate(&mut self, x: &[f64], r_max: usize, mode: SeriesMode) -> Result<SeriesAccumulator> {
        if r_max > 6 {
            return Err(EwelError::Argument(String::from("r_max <= 6 supported")));
        }
        if let SeriesMode::Discrete { n_steps } = mode {
            if n_steps == 0 {
                return Err(EwelError::Argument(String::from("discrete mode wants n >= 1")));
            }
        }
        self.prepare(r_max)?;
        let mut terms = Vec::with_capacity(r_max + 1);
        for order in 0..=r_max {
            terms.push(self.term(order, x, mode)?);
        }
        let value: f64 = terms.iter().sum();
        let span = self.t - self.s;
        // Fit c1 from the first ratio, then sum the bound tail.
        let (c1, tail) = if terms.len() >= 2 && terms[0] != 0.0 && terms[1] != 0.0 {
            let ratio = math::abs(terms[1] / terms[0]);
            let a_t = (1.0f64).max(math::powf(span, (1.0 - self.gamma) / 2.0));
            let c1 = ratio * math::gamma(1.0 + self.gamma / 2.0)
                / (a_t * math::gamma(self.gamma / 2.0) * math::powf(span, self.gamma / 2.0));
            let mut tail = 0.0;
            let mut mag = math::abs(terms[r_max]);
            for r in r_max..r_max + 40 {
                let ratio_r = term_bound_ratio(r, span, self.gamma, c1, span);
                mag *= ratio_r;
                tail += mag;
            }
            (c1, tail)
        } else {
            (0.0, 0.0)
        };
        Ok(SeriesAccumulator {
            terms,
            r_max,
            value,
            tail_estimate: tail,
            c1_fitted: c1,
            mode,
        })
    }
}

/// One-shot evaluation of the parametrix series (continuous or discrete
/// outer convolution) at a single query point.
#[allow(clippy::too_many_arguments)]
pub fn density_series<F: Field + ?Sized>(
    field: &F,
    s: f64,
    t: f64,
    x: &[f64],
    y: &[f64],
    gamma: f64,
    r_max: usize,
    mode: SeriesMode,
    quad_spec: &ConvQuad,
) -> Result<SeriesAccumulator> {
    let mut engine = SeriesEngine::new(field, s, t, y, gamma, *quad_spec)?;
    engine.evaluate(x, r_max, mode)
}

// ---------------------------------------------------------------------------
// Markov chain (Euler) parametrix kernel
// ---------------------------------------------------------------------------

/// Chain analogue of the parametrix kernel:
/// `H^h(t_i, t_j, z, y) = (L^h - Ltilde^{h,y}) ptilde^h(t_i + h, t_j, ., y)`
/// where `ptilde^h` is the chain proxy (Gaussian with step-summed frozen
/// covariance) and the one-step generators are Gaussian expectations,
/// evaluated by Gauss–Hermite quadrature.
pub fn euler_chain_kernel<F: Field + ?Sized>(
    field: &F,
    i: usize,
    j: usize,
    z: &[f64],
    y: &[f64],
    h: f64,
    hermite_nodes: usize,
) -> Result<f64> {
    if j < i + 2 {
        return Err(EwelError::Argument(format!(
            "chain kernel wants t_j >= t_i + 2h (got i={i}, j={j})"
        )));
    }
    let d = field.dim();
    if d > 2 {
        return Err(EwelError::Config(String::from(
            "the parametrix engine supports d in {1, 2}",
        )));
    }
    let t_i = i as f64 * h;
    // Chain proxy covariance: h * sum_{l=i+1}^{j-1} a(t_l, y).
    let mut cov = DiagCov { dim: d, var: [0.0; 2] };
    for l in i + 1..j {
        let a = diag_a(field, l as f64 * h, y)?;
        cov.var[0] += h * a.var[0];
        cov.var[1] += h * a.var[1];
    }
    let mut b = [0.0; crate::MAX_DIM];
    field.drift(t_i, z, &mut b[..d]);
    let mut sz = [0.0; crate::MAX_DIM * crate::MAX_DIM];
    let mut sy = [0.0; crate::MAX_DIM * crate::MAX_DIM];
    field.sigma(t_i, z, &mut sz[..d * d]);
    field.sigma(t_i, y, &mut sy[..d * d]);
    let sqrt_h = math::sqrt(h);

    let rule = quad::gauss_hermite(hermite_nodes);
    let scale = core::f64::consts::SQRT_2;
    let norm = 1.0 / math::powf(core::f64::consts::PI, d as f64 / 2.0);

    let density_at = |w: &[f64]| -> f64 {
        let mut diff = [0.0; 2];
        for k in 0..d {
            diff[k] = y[k] - w[k];
        }
        cov.density(&diff[..d])
    };

    let mut acc = 0.0;
    if d == 1 {
        for (&xn, &xw) in rule.nodes.iter().zip(&rule.weights) {
            let xi = scale * xn;
            let w_scheme = [z[0] + b[0] * h + sz[0] * sqrt_h * xi];
            let w_frozen = [z[0] + sy[0] * sqrt_h * xi];
            acc += xw * (density_at(&w_scheme) - density_at(&w_frozen));
        }
        acc *= norm;
    } else {
        for (&x0, &w0) in rule.nodes.iter().zip(&rule.weights) {
            for (&x1, &w1) in rule.nodes.iter().zip(&rule.weights) {
                let xi = [scale * x0, scale * x1];
                let w_scheme = [
                    z[0] + b[0] * h + (sz[0] * xi[0] + sz[1] * xi[1]) * sqrt_h,
                    z[1] + b[1] * h + (sz[2] * xi[0] + sz[3] * xi[1]) * sqrt_h,
                ];
                let w_frozen = [
                    z[0] + (sy[0] * xi[0] + sy[1] * xi[1]) * sqrt_h,
                    z[1] + (sy[2] * xi[0] + sy[3] * xi[1]) * sqrt_h,
                ];
                acc += w0 * w1 * (density_at(&w_scheme) - density_at(&w_frozen));
            }
        }
        acc *= norm;
    }
    Ok(acc / h)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coefficients::CoefficientField;
    use crate::math::SQRT_2PI;

    #[test]
    fn proxy_density_standard_normal_values() {
        let f = CoefficientField::constant(1, vec![0.0], vec![1.0]).unwrap();
        let at_mode = proxy_density(&f, 0.0, 1.0, &[0.3], &[0.3]).unwrap();
        assert!((at_mode - 1.0 / SQRT_2PI).abs() < 1e-14);
        let at_one = proxy_density(&f, 0.0, 1.0, &[0.0], &[1.0]).unwrap();
        assert!((at_one - (-0.5f64).exp() / SQRT_2PI).abs() < 1e-14);
    }

    #[test]
    fn proxy_density_time_varying_variance() {
        // sigma(t) = 1 + t/2 frozen at y: variance int_0^1 (1 + v/2)^2 dv.
        let f = CoefficientField::time_linear_sigma(1.0, 0.5);
        let got = proxy_density(&f, 0.0, 1.0, &[0.0], &[0.0]).unwrap();
        // Independent Simpson oracle for the variance integral.
        let n = 2000;
        let mut var = 0.0;
        for i in 0..n {
            let a = i as f64 / n as f64;
            let b = (i + 1) as f64 / n as f64;
            let m = 0.5 * (a + b);
            let f2 = |v: f64| (1.0 + 0.5 * v) * (1.0 + 0.5 * v);
            var += (b - a) / 6.0 * (f2(a) + 4.0 * f2(m) + f2(b));
        }
        assert!((var - 19.0 / 12.0).abs() < 1e-12);
        let want = 1.0 / (2.0 * core::f64::consts::PI * var).sqrt();
        assert!((got - want).abs() < 1e-10, "{got} vs {want}");
    }

    #[test]
    fn kernel_vanishes_for_driftless_constant_sigma() {
        let f = CoefficientField::constant(1, vec![0.0], vec![1.0]).unwrap();
        for (z, y) in [(0.0, 0.0), (1.0, 0.3), (-0.5, 2.0)] {
            let h = kernel_h(&f, 0.0, 1.0, &[z], &[y]).unwrap();
            assert_eq!(h, 0.0);
        }
    }

    #[test]
    fn kernel_vanishes_at_frozen_point_without_drift() {
        // b = 0, sigma(x) varying, z = y: the diffusion difference vanishes.
        let f = CoefficientField::weierstrass_sigma(0.5, 2, 8, 1.0, 0.3, 1.0, 0.0).unwrap();
        for y in [0.0, 0.7, -1.3] {
            let h = kernel_h(&f, 0.0, 0.5, &[y], &[y]).unwrap();
            assert!(h.abs() < 1e-14, "y={y}: {h}");
        }
    }

    #[test]
    fn kernel_ou_hand_value() {
        // OU b(z) = -z, sigma = 1, u=0, t=1, z=1, y=0:
        // H = b(z) d/dz ptilde = (-1)(Sigma^{-1}(y-z)) ptilde = e^{-1/2}/sqrt(2pi).
        let f = CoefficientField::ornstein_uhlenbeck(1.0, 1.0);
        let h = kernel_h(&f, 0.0, 1.0, &[1.0], &[0.0]).unwrap();
        let want = (-0.5f64).exp() / SQRT_2PI;
        assert!((h - want).abs() < 1e-14, "{h} vs {want}");
        // Cross-check the gradient term by finite differences in z.
        let f2 = CoefficientField::tanh_drift(0.4, 1.0, 1.0);
        let (u, t, z, y) = (0.0, 0.7, 0.4, -0.2);
        let hval = kernel_h(&f2, u, t, &[z], &[y]).unwrap();
        let dz = 1e-5;
        let p_plus = proxy_density(&f2, u, t, &[z + dz], &[y]).unwrap();
        let p_minus = proxy_density(&f2, u, t, &[z - dz], &[y]).unwrap();
        let fd = f2.drift1(u, z) * (p_plus - p_minus) / (2.0 * dz);
        assert!((hval - fd).abs() < 1e-8, "{hval} vs fd {fd}");
    }

    #[test]
    fn term_bound_spec_values() {
        // r = 0: empty product.
        let b0 = term_bound(0, 0.37, 0.5, 2.0, 1.0);
        assert!((b0 - 2.0).abs() < 1e-14);
        // T > 1 activates the horizon factor.
        let b0t = term_bound(0, 0.37, 0.5, 2.0, 4.0);
        assert!((b0t - 2.0 * 4f64.powf(0.25)).abs() < 1e-12);
        // gamma = 1, r = 2, dt = 1, c1 = 1, T = 1: Gamma(1/2)^2 / Gamma(2) = pi.
        let b2 = term_bound(2, 1.0, 1.0, 1.0, 1.0);
        assert!((b2 - core::f64::consts::PI).abs() < 1e-12, "{b2}");
        // The bound ratio decreases in r.
        let mut last = f64::INFINITY;
        for r in 0..6 {
            let ratio = term_bound_ratio(r, 0.5, 0.5, 1.0, 1.0);
            assert!(ratio < last, "r={r}");
            assert!(
                (term_bound(r + 1, 0.5, 0.5, 1.0, 1.0) / term_bound(r, 0.5, 0.5, 1.0, 1.0)
                    - ratio)
                    .abs()
                    < 1e-12
            );
            last = ratio;
        }
    }

    #[test]
    fn convolve_zero_kernel_is_zero() {
        let spec = ConvQuad { time_nodes: 16, space_nodes: 16, ..Default::default() };
        let f = |s: f64, u: f64, x: &[f64], z: &[f64]| {
            let _ = (s, u);
            (-(z[0] - x[0]) * (z[0] - x[0])).exp()
        };
        let g = |_: f64, _: f64, _: &[f64], _: &[f64]| 0.0;
        let v = convolve_step(&f, &g, 0.0, 1.0, &[0.0], &[1.0], &spec, &EnvelopeSpec {
            base_left: 0.7,
            rate_left: 0.0,
            ..Default::default()
        }, None)
        .unwrap();
        assert_eq!(v, 0.0);
    }

    #[test]
    fn convolve_chapman_kolmogorov() {
        // Heat kernels reproduce under the space convolution, so the time
        // integral contributes a plain factor (t - s).
        let heat = |s: f64, t: f64, x: &[f64], y: &[f64]| {
            let v = t - s;
            (-(y[0] - x[0]) * (y[0] - x[0]) / (2.0 * v)).exp() / (2.0 * core::f64::consts::PI * v).sqrt()
        };
        let spec = ConvQuad::default();
        let (s, t, x, y) = (0.0, 1.0, 0.2, 1.1);
        let got = convolve_step(
            &heat,
            &heat,
            s,
            t,
            &[x],
            &[y],
            &spec,
            &EnvelopeSpec {
                rate_left: 1.0,
                rate_right: 1.0,
                sing_left: 0.0,
                sing_right: 0.0,
                ..Default::default()
            },
            None,
        )
        .unwrap();
        let want = (t - s) * heat(s, t, &[x], &[y]);
        assert!((got - want).abs() < 1e-8, "{got} vs {want}");
    }

    #[test]
    fn convolve_discrete_single_step() {
        // N = 1 is the single-term Riemann sum h * int f(s,s,x,z) g(s,t,z,y) dz.
        let f = |s: f64, u: f64, x: &[f64], z: &[f64]| {
            (1.0 + u - s) * (-(z[0] - x[0]) * (z[0] - x[0])).exp()
        };
        let heat = |s: f64, t: f64, x: &[f64], y: &[f64]| {
            let v = t - s;
            (-(y[0] - x[0]) * (y[0] - x[0]) / (2.0 * v)).exp() / (2.0 * core::f64::consts::PI * v).sqrt()
        };
        let spec = ConvQuad::default();
        let env = EnvelopeSpec {
            base_left: 0.7,
            rate_left: 0.0,
            rate_right: 1.0,
            sing_left: 0.0,
            sing_right: 0.0,
            ..Default::default()
        };
        let (s, t, x, y) = (0.0, 0.5, 0.1, 0.4);
        let got = convolve_step(&f, &heat, s, t, &[x], &[y], &spec, &env, Some(1)).unwrap();
        // Independent fine Gauss-Legendre oracle.
        let gl = quad::gauss_legendre_on(400, x - 9.0, x + 9.0);
        let want = (t - s) * gl.integrate(|z| f(s, s, &[x], &[z]) * heat(s, t, &[z], &[y]));
        assert!((got - want).abs() / want.abs() < 1e-6, "{got} vs {want}");
    }

    #[test]
    fn series_constant_coefficients_is_pure_gaussian() {
        let f = CoefficientField::constant(1, vec![0.0], vec![1.0]).unwrap();
        let spec = ConvQuad { time_nodes: 24, space_nodes: 24, grid_time: 16, grid_space: 24, ..Default::default() };
        let acc = density_series(&f, 0.0, 1.0, &[0.0], &[0.8], 1.0, 3, SeriesMode::Continuous, &spec)
            .unwrap();
        let want = (-0.32f64).exp() / SQRT_2PI;
        assert!((acc.terms[0] - want).abs() < 1e-14);
        for r in 1..=3 {
            assert!(acc.terms[r].abs() < 1e-12, "r={r}: {}", acc.terms[r]);
        }
        assert!((acc.value - want).abs() < 1e-12);
    }

    #[test]
    fn chain_kernel_zero_for_driftless_constant_sigma() {
        let f = CoefficientField::constant(1, vec![0.0], vec![1.0]).unwrap();
        let v = euler_chain_kernel(&f, 0, 4, &[0.3], &[0.9], 0.125, 24).unwrap();
        assert_eq!(v, 0.0);
        assert!(euler_chain_kernel(&f, 0, 1, &[0.3], &[0.9], 0.125, 24).is_err());
    }

    #[test]
    fn chain_kernel_converges_to_continuous_kernel() {
        // Smooth model: halving h roughly halves the defect vs kernel_H.
        let f = CoefficientField::tanh_drift(0.5, 1.0, 1.0);
        let (z, y) = ([0.6], [0.1]);
        let t_j = 1.0;
        let want = kernel_h(&f, 0.0, t_j, &z, &y).unwrap();
        let mut errs = Vec::new();
        for k in [8usize, 16, 32, 64] {
            let h = t_j / k as f64;
            let got = euler_chain_kernel(&f, 0, k, &z, &y, h, 40).unwrap();
            errs.push((got - want).abs());
        }
        for w in errs.windows(2) {
            let ratio = w[1] / w[0];
            assert!(ratio < 0.5 * 1.3 && ratio > 0.5 * 0.55, "ratios {errs:?}");
        }
    }

    #[test]
    fn chain_kernel_first_order_vanishes_at_frozen_point() {
        // b = 0 with varying sigma (cos(pi x) profile): at z = y the scheme
        // and frozen one-step laws coincide, so the kernel value is exactly
        // zero (trivially O(h)); just off the frozen point the chain kernel
        // is O(h)-close to the continuous kernel.
        let f = CoefficientField::weierstrass_sigma(0.5, 2, 1, 1.0, 0.1, 1.0, 0.0).unwrap();
        let y = [0.4];
        let t_j = 1.0;
        for k in [8usize, 16, 32, 64] {
            let h = t_j / k as f64;
            let v = euler_chain_kernel(&f, 0, k, &y, &y, h, 40).unwrap();
            assert_eq!(v, 0.0, "k={k}");
        }
        let z = [0.9];
        let want = kernel_h(&f, 0.0, t_j, &z, &y).unwrap();
        assert!(want.abs() > 1e-3);
        let mut errs = Vec::new();
        for k in [8usize, 16, 32, 64] {
            let h = t_j / k as f64;
            let got = euler_chain_kernel(&f, 0, k, &z, &y, h, 40).unwrap();
            errs.push((got - want).abs());
        }
        for w in errs.windows(2) {
            assert!(w[1] < 0.75 * w[0], "{errs:?}");
        }
    }
}
