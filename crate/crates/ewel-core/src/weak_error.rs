//! Weak-error measurement and convergence-order analysis.
//!
//! The weak error `E f(X_T^h) - E f(X_T)` is estimated by coupling: the
//! reference is the same scheme on a grid refined by a large factor, driven
//! by Brownian-bridge-refined common noise, so the coupled difference
//! estimator has low variance and its expectation is the difference of the
//! two schemes' laws. Density errors go through Gaussian-kernel density
//! estimates sharing one bandwidth and the same noise.
//!
//! The module also evaluates the rate formulas that the error bounds are
//! made of: the iterated-logarithm correction `psi(h)`, the
//! boundary-distance factor of the indicator bound, the smooth indicator
//! `f_delta` and its gradient, and the sensitivity-constant diagnostics.

use crate::coefficients::Field;
use crate::error::{EwelError, Result};
use crate::euler::{
    coupled_block_1d, refine_path_increments, CoupledScratch, GridSchedule, TrajectoryBatch,
    LANES,
};
use crate::math;
use crate::rng;
use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

/// `psi(h) = log_3(1/h) / log_2(1/h)` (iterated logarithms); requires
/// `h < exp(-e)` so the third logarithm is positive.
pub fn psi(h: f64) -> Result<f64> {
    if !(h > 0.0 && h < math::exp(-core::f64::consts::E)) {
        return Err(EwelError::Argument(format!(
            "psi wants h in (0, e^-e); got {h}"
        )));
    }
    psi_from_log(math::ln(1.0 / h))
}

/// `psi` parameterized by `l1 = ln(1/h)`, for step sizes too small to
/// represent directly (e.g. `h = exp(-exp(e^2))` underflows f64 while its
/// logarithm does not).
pub fn psi_from_log(l1: f64) -> Result<f64> {
    if !(l1 > core::f64::consts::E) {
        return Err(EwelError::Argument(format!(
            "psi wants ln(1/h) > e; got {l1}"
        )));
    }
    let l2 = math::ln(l1);
    let l3 = math::ln(l2);
    Ok(l3 / l2)
}

/// The mollification radius balancing the error split:
/// `eps = (h / dt^{1-gamma})^{1/(2-eta)}` with `eta(h) = 2 psi(h)`.
pub fn epsilon_balance(h: f64, dt: f64, gamma: f64) -> Result<(f64, f64)> {
    let eta = 2.0 * psi(h)?;
    let eps = math::powf(h / math::powf(dt, 1.0 - gamma), 1.0 / (2.0 - eta));
    Ok((eta, eps))
}

// ---------------------------------------------------------------------------
// Test functions
// ---------------------------------------------------------------------------

/// Smooth domain for indicator test functions; signed distance positive
/// inside.
#[derive(Clone, Debug, PartialEq)]
pub enum Domain {
    Ball { center: Vec<f64>, radius: f64 },
    /// `{x : <n, x> <= offset}` for a unit normal `n`.
    HalfSpace { normal: Vec<f64>, offset: f64 },
}

impl Domain {
    pub fn signed_distance(&self, x: &[f64]) -> f64 {
        match self {
            Domain::Ball { center, radius } => {
                let r2: f64 = center
                    .iter()
                    .zip(x)
                    .map(|(c, v)| (v - c) * (v - c))
                    .sum();
                radius - math::sqrt(r2)
            }
            Domain::HalfSpace { normal, offset } => {
                let dot: f64 = normal.iter().zip(x).map(|(n, v)| n * v).sum();
                offset - dot
            }
        }
    }

    /// Gradient of the signed distance (the inner unit normal at the
    /// projection).
    pub fn distance_gradient(&self, x: &[f64], out: &mut [f64]) {
        match self {
            Domain::Ball { center, .. } => {
                let mut r2 = 0.0;
                for (c, v) in center.iter().zip(x) {
                    r2 += (v - c) * (v - c);
                }
                let r = math::sqrt(r2).max(1e-300);
                for (o, (&v, &c)) in out.iter_mut().zip(x.iter().zip(center)) {
                    *o = -(v - c) / r;
                }
            }
            Domain::HalfSpace { normal, .. } => {
                for (o, &n) in out.iter_mut().zip(normal) {
                    *o = -n;
                }
            }
        }
    }

    /// Largest `delta` for which the shell geometry stays valid.
    pub fn reach(&self) -> f64 {
        match self {
            Domain::Ball { radius, .. } => *radius,
            Domain::HalfSpace { .. } => f64::INFINITY,
        }
    }
}

/// Terminal test functions of the weak-error estimators.
#[derive(Clone, Debug, PartialEq)]
pub enum TestFunction {
    /// `f(x) = x_1` (unbounded, Lipschitz; the sub-Gaussian growth smoke
    /// test).
    Identity,
    /// `f(x) = cos(x_1 + ... + x_d)`, bounded and 1-Lipschitz.
    Cos,
    /// `f(x) = |x_1|^beta`, globally `beta`-Hölder.
    HolderPower { beta: f64 },
    Indicator(Domain),
    SmoothIndicator(Domain, f64),
}

impl TestFunction {
    pub fn eval(&self, x: &[f64]) -> f64 {
        match self {
            TestFunction::Identity => x[0],
            TestFunction::Cos => math::cos(x.iter().sum()),
            TestFunction::HolderPower { beta } => math::powf(math::abs(x[0]), *beta),
            TestFunction::Indicator(domain) => {
                if domain.signed_distance(x) >= 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            TestFunction::SmoothIndicator(domain, delta) => {
                smooth_indicator_value(domain.signed_distance(x), *delta)
            }
        }
    }

    /// Hölder exponent the function is declared with.
    pub fn beta(&self) -> f64 {
        match self {
            TestFunction::HolderPower { beta } => *beta,
            _ => 1.0,
        }
    }
}

#[inline]
fn smooth_indicator_value(d_s: f64, delta: f64) -> f64 {
    if d_s >= 0.0 {
        1.0
    } else if d_s <= -delta {
        0.0
    } else {
        let s = d_s * d_s / (delta * delta);
        math::exp(1.0) * math::exp(-1.0 / (1.0 - s))
    }
}

/// Smooth indicator `f_delta` and its closed-form gradient:
/// `grad f = -2 d_S n(Pi(x)) / delta^2 (1 - d_S^2/delta^2)^{-2} f_delta(x)`
/// on the shell, zero elsewhere.
pub fn smooth_indicator(x: &[f64], domain: &Domain, delta: f64) -> Result<(f64, Vec<f64>)> {
    if !(delta > 0.0) || delta >= domain.reach() {
        return Err(EwelError::Config(format!(
            "delta = {delta} must be positive and below the domain reach {}",
            domain.reach()
        )));
    }
    let d_s = domain.signed_distance(x);
    let value = smooth_indicator_value(d_s, delta);
    let mut grad = vec![0.0; x.len()];
    if d_s < 0.0 && d_s > -delta {
        let ratio = d_s * d_s / (delta * delta);
        let factor = -2.0 * d_s / (delta * delta) * math::powf(1.0 - ratio, -2.0) * value;
        domain.distance_gradient(x, &mut grad);
        for g in grad.iter_mut() {
            *g *= factor;
        }
    }
    Ok((value, grad))
}

/// Multiplicative boundary-distance factor of the indicator weak-error
/// bound: `1/(gamma d^gamma)` for `d >= e^{-1/gamma}` (ties included) and
/// `|ln d|` below it, plus 1.
pub fn borel_bound_factor(dist: f64, gamma: f64) -> Result<f64> {
    if !(dist > 0.0) {
        return Err(EwelError::Argument(format!(
            "the bound degenerates at distance {dist}"
        )));
    }
    if !(gamma > 0.0 && gamma <= 1.0) {
        return Err(EwelError::Argument(format!("gamma must lie in (0,1], got {gamma}")));
    }
    let threshold = math::exp(-1.0 / gamma);
    let bracket = if dist >= threshold {
        1.0 / (gamma * math::powf(dist, gamma))
    } else {
        math::abs(math::ln(dist))
    };
    Ok(bracket + 1.0)
}

/// The theorem's hypothesis for indicator test functions:
/// `d(x, boundary) >= sqrt(dt) h^{gamma/2}`.
pub fn indicator_distance_ok(dist: f64, dt: f64, h: f64, gamma: f64) -> bool {
    dist >= math::sqrt(dt) * math::powf(h, gamma / 2.0)
}

/// Sensitivity-constant diagnostics of the density-stability theorem.
#[derive(Clone, Copy, Debug)]
pub struct SensitivityConstant {
    /// `alpha(q) = (1 - d/q)/2`.
    pub alpha_q: f64,
    /// `theta = min(eta/2, alpha(q))`.
    pub theta: f64,
    /// `ln C_{eta,q} = ln C + C (theta^{-1}+1)^{theta^{-1}+1}` (log scale;
    /// the constant itself overflows f64 for small theta).
    pub ln_value: f64,
}

pub fn sensitivity_constant(eta: f64, q: f64, dim: usize, base_c: f64) -> Result<SensitivityConstant> {
    if !(q > dim as f64) {
        return Err(EwelError::Argument(format!(
            "the sensitivity bound wants q > d (got q={q}, d={dim})"
        )));
    }
    if !(eta > 0.0 && eta <= 1.0) {
        return Err(EwelError::Argument(format!("eta must lie in (0,1], got {eta}")));
    }
    let alpha_q = 0.5 * (1.0 - dim as f64 / q);
    let theta = (eta / 2.0).min(alpha_q);
    let inv = 1.0 / theta + 1.0;
    // (inv)^(inv) in logs; saturates to infinity when even the log overflows.
    let ln_pow = inv * math::ln(inv);
    let ln_value = if ln_pow > 700.0 {
        f64::INFINITY
    } else {
        math::ln(base_c) + base_c * math::exp(ln_pow)
    };
    Ok(SensitivityConstant { alpha_q, theta, ln_value })
}

// ---------------------------------------------------------------------------
// Coupled weak-error estimation
// ---------------------------------------------------------------------------

/// A coupled difference estimate with its Monte Carlo standard error.
#[derive(Clone, Copy, Debug)]
pub struct WeakErrorEstimate {
    /// `mean f(X_T^h) - mean f(X_T^{h/factor})` over coupled paths.
    pub error: f64,
    pub stderr: f64,
    pub m_paths: usize,
    pub mean_coarse: f64,
    pub mean_fine: f64,
}

/// Paths per work unit; results are reduced in chunk order, so the output
/// is bit-identical for any worker count.
const CHUNK_PATHS: usize = 4096;

struct ChunkStat {
    sum_d: f64,
    sum_d2: f64,
    sum_c: f64,
    sum_f: f64,
}

fn run_chunks<W>(n_chunks: usize, worker: W) -> Result<Vec<ChunkStat>>
where
    W: Fn(usize) -> Result<ChunkStat> + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        (0..n_chunks)
            .into_par_iter()
            .map(worker)
            .collect::<Result<Vec<_>>>()
    }
    #[cfg(not(feature = "parallel"))]
    {
        (0..n_chunks).map(worker).collect()
    }
}

/// Coupled coarse/fine weak error for a terminal test function, using
/// common Brownian increments refined by `refinement_factor`.
pub fn estimate_weak_error<F: Field + ?Sized>(
    field: &F,
    f: &TestFunction,
    x0: &[f64],
    grid: GridSchedule,
    refinement_factor: usize,
    m: usize,
    seed: u64,
) -> Result<WeakErrorEstimate> {
    if refinement_factor < 2 {
        return Err(EwelError::Argument(
            "refinement factor must be >= 2".into(),
        ));
    }
    if m == 0 {
        return Err(EwelError::Argument("m >= 1 paths required".into()));
    }
    let d = field.dim();
    let n_chunks = m.div_ceil(CHUNK_PATHS);

    let stats = if d == 1 {
        let x0s = x0[0];
        run_chunks(n_chunks, |chunk| {
            let start = chunk * CHUNK_PATHS;
            let count = CHUNK_PATHS.min(m - start);
            let mut scratch = CoupledScratch::new(grid.n_steps, refinement_factor);
            let mut stat = ChunkStat { sum_d: 0.0, sum_d2: 0.0, sum_c: 0.0, sum_f: 0.0 };
            let mut path = start;
            while path < start + count {
                let block =
                    coupled_block_1d(field, x0s, grid, refinement_factor, seed, path, &mut scratch)?;
                let lanes = LANES.min(start + count - path);
                for l in 0..lanes {
                    let fc = f.eval(&[block.coarse[l]]);
                    let ff = f.eval(&[block.fine[l]]);
                    let diff = fc - ff;
                    stat.sum_d += diff;
                    stat.sum_d2 += diff * diff;
                    stat.sum_c += fc;
                    stat.sum_f += ff;
                }
                path += lanes;
            }
            Ok(stat)
        })?
    } else {
        run_chunks(n_chunks, |chunk| {
            let start = chunk * CHUNK_PATHS;
            let count = CHUNK_PATHS.min(m - start);
            let mut stat = ChunkStat { sum_d: 0.0, sum_d2: 0.0, sum_c: 0.0, sum_f: 0.0 };
            let mut coarse_inc = vec![0.0; grid.n_steps * d];
            let mut fine_inc = vec![0.0; grid.n_steps * refinement_factor * d];
            for path in start..start + count {
                let (xc, xf) = coupled_terminals_nd(
                    field,
                    x0,
                    grid,
                    refinement_factor,
                    seed,
                    path,
                    &mut coarse_inc,
                    &mut fine_inc,
                )?;
                let fc = f.eval(&xc[..d]);
                let ff = f.eval(&xf[..d]);
                let diff = fc - ff;
                stat.sum_d += diff;
                stat.sum_d2 += diff * diff;
                stat.sum_c += fc;
                stat.sum_f += ff;
            }
            Ok(stat)
        })?
    };

    let mut sum_d = 0.0;
    let mut sum_d2 = 0.0;
    let mut sum_c = 0.0;
    let mut sum_f = 0.0;
    for s in &stats {
        sum_d += s.sum_d;
        sum_d2 += s.sum_d2;
        sum_c += s.sum_c;
        sum_f += s.sum_f;
    }
    let mf = m as f64;
    let mean = sum_d / mf;
    let var = (sum_d2 / mf - mean * mean).max(0.0);
    Ok(WeakErrorEstimate {
        error: mean,
        stderr: math::sqrt(var / mf),
        m_paths: m,
        mean_coarse: sum_c / mf,
        mean_fine: sum_f / mf,
    })
}

/// Coupled terminal states for one multi-dimensional path.
#[allow(clippy::too_many_arguments)]
fn coupled_terminals_nd<F: Field + ?Sized>(
    field: &F,
    x0: &[f64],
    grid: GridSchedule,
    factor: usize,
    seed: u64,
    path: usize,
    coarse_inc: &mut [f64],
    fine_inc: &mut [f64],
) -> Result<([f64; crate::MAX_DIM], [f64; crate::MAX_DIM])> {
    let d = field.dim();
    let n = grid.n_steps;
    let h = grid.h();
    crate::euler::path_increments(seed, path, n, d, h, coarse_inc);
    refine_path_increments(seed, path, coarse_inc, n, d, h, factor, fine_inc);

    let mut b = [0.0; crate::MAX_DIM];
    let mut s = [0.0; crate::MAX_DIM * crate::MAX_DIM];
    let mut xc = [0.0; crate::MAX_DIM];
    xc[..d].copy_from_slice(x0);
    for i in 0..n {
        let t = grid.time(i);
        field.drift(t, &xc[..d], &mut b[..d]);
        field.sigma(t, &xc[..d], &mut s[..d * d]);
        for k in 0..d {
            let mut diff = 0.0;
            for j in 0..d {
                diff += s[k * d + j] * coarse_inc[i * d + j];
            }
            xc[k] += b[k] * h + diff;
        }
        if xc[..d].iter().any(|v| !v.is_finite()) {
            return Err(EwelError::NonFiniteState { path, step: i });
        }
    }
    let fine = grid.refined(factor)?;
    let hf = fine.h();
    let mut xf = [0.0; crate::MAX_DIM];
    xf[..d].copy_from_slice(x0);
    for i in 0..fine.n_steps {
        let t = fine.time(i);
        field.drift(t, &xf[..d], &mut b[..d]);
        field.sigma(t, &xf[..d], &mut s[..d * d]);
        for k in 0..d {
            let mut diff = 0.0;
            for j in 0..d {
                diff += s[k * d + j] * fine_inc[i * d + j];
            }
            xf[k] += b[k] * hf + diff;
        }
        if xf[..d].iter().any(|v| !v.is_finite()) {
            return Err(EwelError::NonFiniteState { path, step: i });
        }
    }
    Ok((xc, xf))
}

/// Coupled terminal samples (1D): one coarse and one fine value per path.
pub fn coupled_terminal_samples<F: Field + ?Sized>(
    field: &F,
    x0: f64,
    grid: GridSchedule,
    factor: usize,
    m: usize,
    seed: u64,
) -> Result<(Vec<f64>, Vec<f64>)> {
    debug_assert_eq!(field.dim(), 1);
    let mut coarse = vec![0.0; m];
    let mut fine = vec![0.0; m];

    let fill = |chunk: usize, coarse: &mut [f64], fine: &mut [f64]| -> Result<()> {
        let start = chunk * CHUNK_PATHS;
        let count = coarse.len();
        let mut scratch = CoupledScratch::new(grid.n_steps, factor);
        let mut off = 0;
        while off < count {
            let block = coupled_block_1d(field, x0, grid, factor, seed, start + off, &mut scratch)?;
            let lanes = LANES.min(count - off);
            coarse[off..off + lanes].copy_from_slice(&block.coarse[..lanes]);
            fine[off..off + lanes].copy_from_slice(&block.fine[..lanes]);
            off += lanes;
        }
        Ok(())
    };

    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        coarse
            .par_chunks_mut(CHUNK_PATHS)
            .zip(fine.par_chunks_mut(CHUNK_PATHS))
            .enumerate()
            .try_for_each(|(chunk, (c, f))| fill(chunk, c, f))?;
    }
    #[cfg(not(feature = "parallel"))]
    {
        for (chunk, (c, f)) in coarse
            .chunks_mut(CHUNK_PATHS)
            .zip(fine.chunks_mut(CHUNK_PATHS))
            .enumerate()
        {
            fill(chunk, c, f)?;
        }
    }
    Ok((coarse, fine))
}

// ---------------------------------------------------------------------------
// Kernel density estimation
// ---------------------------------------------------------------------------

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum DensityMethod {
    ParametrixContinuous,
    ParametrixDiscrete,
    Kde,
}

/// Density values on an evaluation grid, tagged by the producing method.
#[derive(Clone, Debug)]
pub struct DensityEstimate {
    pub eval_points: Vec<f64>,
    pub values: Vec<f64>,
    pub bandwidth: f64,
    /// Plug-in bias bound `1/2 bw^2 max |curvature estimate|`.
    pub bias_bound: f64,
    pub method: DensityMethod,
}

/// Silverman's rule for 1D samples: `1.06 sigma_hat n^{-1/5}`.
pub fn silverman_bandwidth(samples: &[f64]) -> f64 {
    let n = samples.len() as f64;
    let mean: f64 = samples.iter().sum::<f64>() / n;
    let var: f64 = samples.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    1.06 * math::sqrt(var) * math::powf(n, -0.2)
}

/// Default laboratory bandwidth: Silverman scaled by 0.5 so the smoothing
/// bias sits below the resolved density errors.
pub fn default_bandwidth(samples: &[f64]) -> f64 {
    0.5 * silverman_bandwidth(samples)
}

/// Gaussian-kernel density estimate of 1D samples at the given points.
pub fn kde_density(samples: &[f64], eval_points: &[f64], bandwidth: f64) -> Result<DensityEstimate> {
    if samples.is_empty() {
        return Err(EwelError::Argument("KDE of an empty sample".into()));
    }
    if !(bandwidth > 0.0) {
        return Err(EwelError::Argument(format!(
            "bandwidth must be positive, got {bandwidth}"
        )));
    }
    let inv_bw = 1.0 / bandwidth;
    let norm = 1.0 / (samples.len() as f64 * bandwidth);
    let mut values = Vec::with_capacity(eval_points.len());
    let mut max_curv = 0.0f64;
    for &y in eval_points {
        let (mut acc, mut acc2) = (0.0, 0.0);
        for &x in samples {
            let u = (y - x) * inv_bw;
            let k = math::exp(-0.5 * u * u);
            acc += k;
            acc2 += (u * u - 1.0) * k;
        }
        values.push(norm * acc / math::SQRT_2PI);
        let curv = norm * inv_bw * inv_bw * acc2 / math::SQRT_2PI;
        max_curv = max_curv.max(math::abs(curv));
    }
    Ok(DensityEstimate {
        eval_points: eval_points.to_vec(),
        values,
        bandwidth,
        bias_bound: 0.5 * bandwidth * bandwidth * max_curv,
        method: DensityMethod::Kde,
    })
}

/// KDE of one coordinate of a batch's terminal states.
pub fn kde_terminal_density(
    batch: &TrajectoryBatch,
    coord: usize,
    eval_points: &[f64],
    bandwidth: f64,
) -> Result<DensityEstimate> {
    let samples: Vec<f64> = batch.terminal_coord(coord).collect();
    kde_density(&samples, eval_points, bandwidth)
}

/// Coupled KDE difference at each evaluation point: value, standard error
/// of the per-path kernel difference, and the plug-in bias bound of the
/// difference curvature.
pub fn kde_difference(
    a: &[f64],
    b: &[f64],
    eval_points: &[f64],
    bandwidth: f64,
) -> Result<Vec<(f64, f64, f64)>> {
    if a.len() != b.len() || a.is_empty() {
        return Err(EwelError::Argument(
            "coupled KDE difference wants equal nonempty samples".into(),
        ));
    }
    let m = a.len() as f64;
    let inv_bw = 1.0 / bandwidth;
    let mut out = Vec::with_capacity(eval_points.len());
    for &y in eval_points {
        let (mut sum, mut sum2, mut curv) = (0.0, 0.0, 0.0);
        for (&xa, &xb) in a.iter().zip(b) {
            let ua = (y - xa) * inv_bw;
            let ub = (y - xb) * inv_bw;
            let ka = math::exp(-0.5 * ua * ua);
            let kb = math::exp(-0.5 * ub * ub);
            let d = (ka - kb) * inv_bw / math::SQRT_2PI;
            sum += d;
            sum2 += d * d;
            curv += ((ua * ua - 1.0) * ka - (ub * ub - 1.0) * kb) * inv_bw / math::SQRT_2PI;
        }
        let mean = sum / m;
        let var = (sum2 / m - mean * mean).max(0.0);
        let bias = 0.5 * bandwidth * bandwidth * math::abs(curv / m) * inv_bw * inv_bw;
        out.push((mean, math::sqrt(var / m), bias));
    }
    Ok(out)
}

/// One cell of a density-error sweep.
#[derive(Clone, Copy, Debug)]
pub struct DensityErrorCell {
    pub h: f64,
    pub y: f64,
    pub error: f64,
    pub stderr: f64,
    pub bias_bound: f64,
}

/// `|p^h - p^{h/factor}|(x0, y)` by coupled KDEs with a shared bandwidth.
pub fn density_error_scheme_vs_fine<F: Field + ?Sized>(
    field: &F,
    x0: f64,
    grid: GridSchedule,
    factor: usize,
    m: usize,
    seed: u64,
    y_points: &[f64],
    bandwidth: Option<f64>,
) -> Result<Vec<DensityErrorCell>> {
    let (coarse, fine) = coupled_terminal_samples(field, x0, grid, factor, m, seed)?;
    let bw = bandwidth.unwrap_or_else(|| default_bandwidth(&fine));
    let diffs = kde_difference(&coarse, &fine, y_points, bw)?;
    Ok(y_points
        .iter()
        .zip(diffs)
        .map(|(&y, (mean, se, bias))| DensityErrorCell {
            h: grid.h(),
            y,
            error: math::abs(mean),
            stderr: se,
            bias_bound: bias,
        })
        .collect())
}

/// The three components of the error decomposition at one `(h, y)` cell:
/// `p - p_eps`, `p_eps - p_eps^h`, `p_eps^h - p^h` (in that order), each
/// with its standard error; all four laws share one noise and bandwidth.
#[derive(Clone, Debug)]
pub struct DecompositionCell {
    pub h: f64,
    pub y: f64,
    pub components: [(f64, f64); 3],
    pub bandwidth: f64,
    pub bias_bound: f64,
}

/// Decomposition sweep cell: base and mollified fields simulated on the
/// coarse grid (`n_coarse`) and on a fixed reference grid (`n_ref`,
/// standing in for the exact laws), all driven by the same increments.
#[allow(clippy::too_many_arguments)]
pub fn decomposition_components<F1, F2>(
    base: &F1,
    mollified: &F2,
    x0: f64,
    n_coarse: usize,
    n_ref: usize,
    t_horizon: f64,
    m: usize,
    seed: u64,
    y_points: &[f64],
    bandwidth: Option<f64>,
) -> Result<Vec<DecompositionCell>>
where
    F1: Field + ?Sized,
    F2: Field + ?Sized,
{
    if n_ref % n_coarse != 0 || n_ref == n_coarse {
        return Err(EwelError::Config(format!(
            "reference grid {n_ref} must be a proper multiple of the coarse grid {n_coarse}"
        )));
    }
    let factor = n_ref / n_coarse;
    let grid = GridSchedule::new(t_horizon, n_coarse)?;
    let (coarse_base, fine_base) = coupled_terminal_samples(base, x0, grid, factor, m, seed)?;
    let (coarse_moll, fine_moll) = coupled_terminal_samples(mollified, x0, grid, factor, m, seed)?;
    let bw = bandwidth.unwrap_or_else(|| default_bandwidth(&fine_base));

    // p ~ fine_base, p_eps ~ fine_moll, p_eps^h ~ coarse_moll, p^h ~ coarse_base.
    let c1 = kde_difference(&fine_base, &fine_moll, y_points, bw)?;
    let c2 = kde_difference(&fine_moll, &coarse_moll, y_points, bw)?;
    let c3 = kde_difference(&coarse_moll, &coarse_base, y_points, bw)?;

    Ok(y_points
        .iter()
        .enumerate()
        .map(|(i, &y)| DecompositionCell {
            h: grid.h(),
            y,
            components: [
                (math::abs(c1[i].0), c1[i].1),
                (math::abs(c2[i].0), c2[i].1),
                (math::abs(c3[i].0), c3[i].1),
            ],
            bandwidth: bw,
            bias_bound: c1[i].2.max(c2[i].2).max(c3[i].2),
        })
        .collect())
}

/// Derives the per-cell seed of a sweep from the master seed.
pub fn cell_seed(master: u64, cell_index: usize) -> u64 {
    rng::mix64(master ^ rng::mix64(0x5EED_CE11 ^ cell_index as u64))
}

// ---------------------------------------------------------------------------
// Rate fitting
// ---------------------------------------------------------------------------

/// Weighted log-log regression of error against step size.
#[derive(Clone, Debug)]
pub struct RateFit {
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
    pub slope_stderr: f64,
    /// The points used: `(h, error, stderr)`.
    pub points: Vec<(f64, f64, f64)>,
    /// Count of non-positive errors excluded from the fit.
    pub excluded: usize,
}

impl RateFit {
    pub fn predict(&self, h: f64) -> f64 {
        math::exp(self.intercept + self.slope * math::ln(h))
    }
}

/// Weighted least squares of `ln error` on `ln h` with weights
/// `1/stderr^2` (uniform when any stderr is nonpositive); non-positive
/// errors are excluded, and fewer than 4 surviving points is a fault.
pub fn fit_rate(points: &[(f64, f64, f64)]) -> Result<RateFit> {
    let mut used: Vec<(f64, f64, f64)> = Vec::new();
    let mut excluded = 0;
    for &(h, e, se) in points {
        if e > 0.0 && h > 0.0 {
            used.push((h, e, se));
        } else {
            excluded += 1;
        }
    }
    if used.len() < 4 {
        return Err(EwelError::Argument(format!(
            "rate fit wants >= 4 positive points, has {} ({} excluded)",
            used.len(),
            excluded
        )));
    }
    let uniform = used.iter().any(|&(_, _, se)| !(se > 0.0));
    let mut sw = 0.0;
    let mut sx = 0.0;
    let mut sy = 0.0;
    let mut sxx = 0.0;
    let mut sxy = 0.0;
    for &(h, e, se) in &used {
        let w = if uniform { 1.0 } else { 1.0 / (se * se) };
        let x = math::ln(h);
        let y = math::ln(e);
        sw += w;
        sx += w * x;
        sy += w * y;
        sxx += w * x * x;
        sxy += w * x * y;
    }
    let det = sw * sxx - sx * sx;
    if math::abs(det) < 1e-300 {
        return Err(EwelError::Argument("degenerate rate fit: identical h values".into()));
    }
    let slope = (sw * sxy - sx * sy) / det;
    let intercept = (sxx * sy - sx * sxy) / det;

    let mut ssr = 0.0;
    let mut sst = 0.0;
    let ybar = sy / sw;
    for &(h, e, se) in &used {
        let w = if uniform { 1.0 } else { 1.0 / (se * se) };
        let y = math::ln(e);
        let pred = intercept + slope * math::ln(h);
        ssr += w * (y - pred) * (y - pred);
        sst += w * (y - ybar) * (y - ybar);
    }
    let r_squared = if sst > 0.0 { 1.0 - ssr / sst } else { 1.0 };
    let dof = (used.len() - 2) as f64;
    let sigma2 = if dof > 0.0 { ssr / dof } else { 0.0 };
    let slope_stderr = math::sqrt(sigma2 * sw / det);

    Ok(RateFit {
        slope,
        intercept,
        r_squared,
        slope_stderr,
        points: used,
        excluded,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coefficients::CoefficientField;
    use crate::rng::CounterRng;

    #[test]
    fn psi_closed_form_values() {
        let e = core::f64::consts::E;
        let h1 = math::exp(-math::exp(e));
        assert!((psi(h1).unwrap() - 1.0 / e).abs() < 1e-12);
        // h = exp(-exp(e^2)) underflows f64; its log representation does not.
        assert!((psi_from_log(math::exp(e * e)).unwrap() - 2.0 / (e * e)).abs() < 1e-12);
        assert!(psi(0.1).is_err());
        // psi tends to 0 along h = 2^-k; the decay is monotone once
        // ln(ln(1/h)) > 1, i.e. from k = 23 on (psi still rises before
        // that, its h-derivative changes sign at ln ln (1/h) = 1).
        let mut last = f64::INFINITY;
        for k in 23..=60 {
            let v = psi(2f64.powi(-k)).unwrap();
            assert!(v < last && v > 0.0, "k={k}");
            last = v;
        }
        // The decay toward 0 is only visible far beyond f64 step sizes:
        // check it through the log parameterization.
        assert!(psi_from_log(1e300).unwrap() < 0.01);
    }

    #[test]
    fn borel_factor_branches() {
        assert!((borel_bound_factor(1.0, 1.0).unwrap() - 2.0).abs() < 1e-14);
        let e = core::f64::consts::E;
        assert!((borel_bound_factor(e.powi(-2), 1.0).unwrap() - 3.0).abs() < 1e-12);
        // Boundary d = e^{-1/gamma} goes to the first branch.
        let v = borel_bound_factor(e.powi(-2), 0.5).unwrap();
        assert!((v - (2.0 * e + 1.0)).abs() < 1e-12, "{v}");
        assert!(borel_bound_factor(0.0, 1.0).is_err());
        // Decreasing in d on each branch (the factor jumps up across the
        // branch point, so monotonicity is checked per branch).
        let gamma = 0.7;
        let threshold = (-1.0f64 / gamma).exp();
        let mut last = f64::INFINITY;
        for i in 1..100 {
            let d = threshold * i as f64 / 100.0;
            let v = borel_bound_factor(d, gamma).unwrap();
            assert!(v <= last + 1e-12, "below threshold at d={d}");
            last = v;
        }
        let mut last = f64::INFINITY;
        for i in 0..100 {
            let d = threshold + (3.0 - threshold) * i as f64 / 99.0;
            let v = borel_bound_factor(d, gamma).unwrap();
            assert!(v <= last + 1e-12, "above threshold at d={d}");
            last = v;
        }
    }

    #[test]
    fn smooth_indicator_values_and_gradient() {
        let ball = Domain::Ball { center: vec![0.0], radius: 1.0 };
        let delta = 0.3;
        // Inside: value 1, gradient 0.
        let (v, g) = smooth_indicator(&[0.5], &ball, delta).unwrap();
        assert_eq!(v, 1.0);
        assert_eq!(g[0], 0.0);
        // Outside the shell: 0.
        let (v, _) = smooth_indicator(&[2.0], &ball, delta).unwrap();
        assert_eq!(v, 0.0);
        // d_S = -delta/sqrt(2) gives exp(-1).
        let x = 1.0 + delta / core::f64::consts::SQRT_2;
        let (v, _) = smooth_indicator(&[x], &ball, delta).unwrap();
        assert!((v - (-1.0f64).exp()).abs() < 1e-12, "{v}");
        //

        // Gradient matches central differences at shell points.
        let ball2 = Domain::Ball { center: vec![0.2, -0.1], radius: 0.8 };
        let mut rng = CounterRng::new(3, crate::rng::TAG_SAMPLING, 9, 0);
        let mut checked = 0;
        while checked < 100 {
            let th = 2.0 * core::f64::consts::PI * rng.next_unit();
            let r = 0.8 + 0.25 * rng.next_unit();
            let x = [0.2 + r * math::cos(th), -0.1 + r * math::sin(th)];
            let d_s = ball2.signed_distance(&x);
            if d_s >= -1e-3 || d_s <= -0.25 + 1e-3 {
                continue;
            }
            let (_, g) = smooth_indicator(&x, &ball2, 0.25).unwrap();
            let step = 1e-6;
            for k in 0..2 {
                let mut xp = x;
                xp[k] += step;
                let mut xm = x;
                xm[k] -= step;
                let fd = (smooth_indicator(&xp, &ball2, 0.25).unwrap().0
                    - smooth_indicator(&xm, &ball2, 0.25).unwrap().0)
                    / (2.0 * step);
                assert!((g[k] - fd).abs() < 1e-6, "at {x:?}: {} vs {fd}", g[k]);
            }
            checked += 1;
        }
        // delta above the reach is rejected.
        assert!(smooth_indicator(&[0.0], &ball, 1.5).is_err());
    }

    #[test]
    fn smooth_indicator_monotone_inward() {
        let ball = Domain::Ball { center: vec![0.0], radius: 1.0 };
        let delta = 0.4;
        let mut last = -1.0;
        for i in 0..50 {
            // d_S from -delta to 0 as x moves inward.
            let x = 1.0 + delta - (delta * i as f64 / 49.0);
            let (v, _) = smooth_indicator(&[x], &ball, delta).unwrap();
            assert!(v >= last - 1e-15);
            last = v;
        }
    }

    #[test]
    fn sensitivity_constant_formulas() {
        let d = 1;
        let s = sensitivity_constant(1.0, 2.0 * d as f64, d, 1.0).unwrap();
        assert!((s.alpha_q - 0.25).abs() < 1e-15);
        let s = sensitivity_constant(1.0, f64::INFINITY, d, 1.0).unwrap();
        assert!((s.alpha_q - 0.5).abs() < 1e-15);
        // eta = 0.2, alpha = 0.25: theta = 0.1, ln value = C 11^11 in logs.
        let s = sensitivity_constant(0.2, 2.0 * d as f64 / (1.0 - 2.0 * 0.25), d, 1.0);
        let s = s.unwrap();
        assert!((s.theta - 0.1).abs() < 1e-12);
        assert!((s.ln_value - 11f64.powi(11)).abs() / 11f64.powi(11) < 1e-10);
        assert!(sensitivity_constant(0.5, 1.0, 1, 1.0).is_err());
    }

    #[test]
    fn epsilon_balance_uses_doubled_psi() {
        let h = 2f64.powi(-20);
        let (eta, eps) = epsilon_balance(h, 1.0, 0.5).unwrap();
        assert!((eta - 2.0 * psi(h).unwrap()).abs() < 1e-15);
        let want = math::powf(h, 1.0 / (2.0 - eta));
        assert!((eps - want).abs() < 1e-15);
    }

    #[test]
    fn fit_rate_exact_power_laws() {
        let pts: Vec<(f64, f64, f64)> = (1..=6)
            .map(|k| {
                let h = 2f64.powi(-k);
                (h, 2.0 * h.sqrt(), 0.0)
            })
            .collect();
        let fit = fit_rate(&pts).unwrap();
        assert!((fit.slope - 0.5).abs() < 1e-12);
        assert!((fit.intercept - 2f64.ln()).abs() < 1e-12);
        assert!((fit.r_squared - 1.0).abs() < 1e-12);

        let pts: Vec<(f64, f64, f64)> = (1..=5)
            .map(|k| {
                let h = 3f64.powi(-k);
                (h, h, 0.01 * h)
            })
            .collect();
        let fit = fit_rate(&pts).unwrap();
        assert!((fit.slope - 1.0).abs() < 1e-12);
    }

    #[test]
    fn fit_rate_noisy_quarter_power() {
        let mut rng = CounterRng::new(11, crate::rng::TAG_SAMPLING, 2, 0);
        let pts: Vec<(f64, f64, f64)> = (1..=5)
            .map(|k| {
                let h = 2f64.powi(-k);
                let xi = 2.0 * rng.next_unit() - 1.0;
                let e = h.powf(0.25) * (1.0 + 0.05 * xi);
                (h, e, 0.05 * e)
            })
            .collect();
        let fit = fit_rate(&pts).unwrap();
        assert!(fit.slope > 0.2 && fit.slope < 0.3, "slope {}", fit.slope);
    }

    #[test]
    fn fit_rate_excludes_nonpositive_and_faults_below_four() {
        let pts = vec![
            (0.5, 0.1, 0.01),
            (0.25, -0.05, 0.01),
            (0.125, 0.04, 0.01),
            (0.0625, 0.02, 0.01),
            (0.03125, 0.015, 0.01),
        ];
        let fit = fit_rate(&pts).unwrap();
        assert_eq!(fit.excluded, 1);
        assert_eq!(fit.points.len(), 4);
        assert!(fit_rate(&pts[..4]).is_err());
    }

    #[test]
    fn fit_rate_scale_equivariant() {
        let pts: Vec<(f64, f64, f64)> = (1..=6)
            .map(|k| {
                let h = 2f64.powi(-k);
                (h, h.powf(0.37) * (1.0 + 0.1 * (k as f64).sin()), 0.01)
            })
            .collect();
        let fit1 = fit_rate(&pts).unwrap();
        let scaled: Vec<(f64, f64, f64)> =
            pts.iter().map(|&(h, e, se)| (h, 7.5 * e, se)).collect();
        let fit2 = fit_rate(&scaled).unwrap();
        assert!((fit1.slope - fit2.slope).abs() < 1e-12);
        assert!((fit2.intercept - fit1.intercept - 7.5f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn rate_fit_reproduces_inputs_within_three_residuals() {
        let pts: Vec<(f64, f64, f64)> = (1..=6)
            .map(|k| {
                let h = 2f64.powi(-k);
                (h, h.powf(0.5) * (1.0 + 0.08 * ((3 * k) as f64).cos()), 0.02)
            })
            .collect();
        let fit = fit_rate(&pts).unwrap();
        let rms = {
            let mut acc = 0.0;
            for &(h, e, _) in &fit.points {
                let r = math::ln(e) - math::ln(fit.predict(h));
                acc += r * r;
            }
            (acc / fit.points.len() as f64).sqrt()
        };
        for &(h, e, _) in &fit.points {
            let r = (math::ln(e) - math::ln(fit.predict(h))).abs();
            assert!(r <= 3.0 * rms + 1e-12);
        }
    }

    #[test]
    fn kde_single_sample_at_origin() {
        let est = kde_density(&[0.0], &[0.0], 1.0).unwrap();
        assert!((est.values[0] - 1.0 / math::SQRT_2PI).abs() < 1e-14);
        assert!(kde_density(&[], &[0.0], 1.0).is_err());
    }

    #[test]
    fn kde_of_standard_normal_sample() {
        let mut stream = crate::rng::NormalStream::new(5, crate::rng::TAG_SAMPLING, 3, 0);
        let samples: Vec<f64> = (0..200_000).map(|_| stream.next()).collect();
        let est = kde_density(&samples, &[0.0], 0.05).unwrap();
        let want = 1.0 / math::SQRT_2PI;
        assert!((est.values[0] - want).abs() / want < 0.02, "{}", est.values[0]);
        assert!(est.bias_bound < 0.01 * want);
    }

    #[test]
    fn coupled_estimator_unbiased_on_constant_model() {
        let f = CoefficientField::constant(1, vec![0.3], vec![1.0]).unwrap();
        let grid = GridSchedule::new(1.0, 4).unwrap();
        let suite = [
            TestFunction::Identity,
            TestFunction::Cos,
            TestFunction::HolderPower { beta: 0.5 },
            TestFunction::SmoothIndicator(
                Domain::Ball { center: vec![0.0], radius: 1.0 },
                0.2,
            ),
        ];
        for tf in &suite {
            let est = estimate_weak_error(&f, tf, &[0.0], grid, 8, 40_000, 99).unwrap();
            assert!(
                est.error.abs() <= 3.0 * est.stderr.max(1e-12),
                "{tf:?}: {} vs {}",
                est.error,
                est.stderr
            );
        }
    }

    #[test]
    fn coupled_estimator_matches_ou_euler_bias() {
        // For b = -x the Euler mean is x0 (1-h)^N; the coupled difference
        // estimates the mean gap between the two discretizations.
        let f = CoefficientField::ornstein_uhlenbeck(1.0, 1.0);
        let grid = GridSchedule::new(1.0, 8).unwrap();
        let factor = 16;
        let m = 200_000;
        let est =
            estimate_weak_error(&f, &TestFunction::Identity, &[1.0], grid, factor, m, 7).unwrap();
        let coarse_mean = (1.0 - grid.h()).powi(grid.n_steps as i32);
        let fine_h = grid.h() / factor as f64;
        let fine_mean = (1.0 - fine_h).powi((grid.n_steps * factor) as i32);
        let want = coarse_mean - fine_mean;
        assert!(
            (est.error - want).abs() < 4.0 * est.stderr,
            "{} vs {want} (se {})",
            est.error,
            est.stderr
        );
    }

    #[test]
    fn indicator_distance_hypothesis() {
        assert!(indicator_distance_ok(0.5, 1.0, 0.01, 0.5));
        assert!(!indicator_distance_ok(0.05, 1.0, 0.25, 0.5));
    }

    #[test]
    fn test_functions_have_declared_holder_quotients() {
        let mut rng = CounterRng::new(17, crate::rng::TAG_SAMPLING, 4, 0);
        let fs = [
            TestFunction::Cos,
            TestFunction::HolderPower { beta: 0.5 },
            TestFunction::HolderPower { beta: 0.25 },
        ];
        for tf in &fs {
            let beta = tf.beta();
            let mut max_q = 0.0f64;
            for _ in 0..20_000 {
                let x = 6.0 * rng.next_unit() - 3.0;
                let delta = math::powf(10.0, -5.0 * rng.next_unit());
                let q = (tf.eval(&[x + delta]) - tf.eval(&[x])).abs() / math::powf(delta, beta);
                max_q = max_q.max(q);
            }
            assert!(max_q < 3.0, "{tf:?}: quotient {max_q}");
        }
    }
}
