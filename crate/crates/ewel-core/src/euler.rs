//! Euler scheme simulation with replayable, addressable noise.
//!
//! The scheme freezes coefficients at the last grid time:
//! `X_{t_{i+1}} = X_{t_i} + b(t_i, X_{t_i}) h + sigma(t_i, X_{t_i}) dW_i`.
//!
//! Noise addressing (see [`crate::rng`]) makes every batch a deterministic
//! function of `(seed, field, x0, grid, m)`: path `m`'s Brownian increments
//! come from stream `(seed, TAG_INCREMENTS, m, 0)` consumed in step-major,
//! coordinate-minor order, and bridge refinement noise from
//! `(seed, TAG_REFINE, m, fine_step_count)`. Identical inputs reproduce
//! bit-identical output for any worker count or lane grouping.

use crate::coefficients::Field;
use crate::error::{EwelError, Result};
use crate::math;
use crate::rng::{self, NormalStream};
use crate::MAX_DIM;
use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

/// Uniform time grid `t_i = i T / N` on `[0, T]`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GridSchedule {
    pub t_horizon: f64,
    pub n_steps: usize,
}

impl GridSchedule {
    pub fn new(t_horizon: f64, n_steps: usize) -> Result<Self> {
        if !(t_horizon > 0.0) || n_steps == 0 {
            return Err(EwelError::Config(format!(
                "grid wants T > 0 and N >= 1 (got T={t_horizon}, N={n_steps})"
            )));
        }
        Ok(Self { t_horizon, n_steps })
    }

    #[inline]
    pub fn h(&self) -> f64 {
        self.t_horizon / self.n_steps as f64
    }

    /// `t_i`; the endpoints are exact.
    #[inline]
    pub fn time(&self, i: usize) -> f64 {
        self.t_horizon * (i as f64 / self.n_steps as f64)
    }

    /// Index of the last grid point `<= u` (the paper's `phi`).
    pub fn last_index_before(&self, u: f64) -> usize {
        let i = math::floor(u / self.h()) as usize;
        i.min(self.n_steps - 1)
    }

    pub fn refined(&self, factor: usize) -> Result<GridSchedule> {
        let n = self
            .n_steps
            .checked_mul(factor)
            .filter(|&n| n <= 1 << 24)
            .ok_or_else(|| {
                EwelError::Config(format!(
                    "refined grid too fine: {} * {factor} exceeds 2^24",
                    self.n_steps
                ))
            })?;
        GridSchedule::new(self.t_horizon, n)
    }
}

/// Soft cap on stored-batch memory; larger requests must use the streaming
/// estimators which regenerate noise from counters.
pub const MAX_BATCH_BYTES: usize = 2 << 30;

/// `m` Euler paths plus the Brownian increments that generated them.
#[derive(Clone, Debug)]
pub struct TrajectoryBatch {
    pub grid: GridSchedule,
    pub dim: usize,
    pub m_paths: usize,
    /// Row-major `m x (n+1) x d`.
    pub states: Vec<f64>,
    /// Row-major `m x n x d`.
    pub increments: Vec<f64>,
    pub seed: u64,
}

impl TrajectoryBatch {
    #[inline]
    pub fn state(&self, path: usize, step: usize) -> &[f64] {
        let d = self.dim;
        let idx = (path * (self.grid.n_steps + 1) + step) * d;
        &self.states[idx..idx + d]
    }

    #[inline]
    pub fn increment(&self, path: usize, step: usize) -> &[f64] {
        let d = self.dim;
        let idx = (path * self.grid.n_steps + step) * d;
        &self.increments[idx..idx + d]
    }

    pub fn terminal(&self, path: usize) -> &[f64] {
        self.state(path, self.grid.n_steps)
    }

    /// Iterator over terminal values of one coordinate.
    pub fn terminal_coord(&self, coord: usize) -> impl Iterator<Item = f64> + '_ {
        (0..self.m_paths).map(move |m| self.terminal(m)[coord])
    }
}

/// Fills `out` (`n x d`, step-major) with the base Brownian increments of
/// one path, scaled to variance `h`.
pub fn path_increments(seed: u64, path: usize, n: usize, d: usize, h: f64, out: &mut [f64]) {
    debug_assert_eq!(out.len(), n * d);
    let mut stream = NormalStream::new(seed, rng::TAG_INCREMENTS, path as u64, 0);
    let sqrt_h = math::sqrt(h);
    for z in out.iter_mut() {
        *z = sqrt_h * stream.next();
    }
}

/// One Euler step, all dimensions. The exact expression is part of the
/// replayability contract: `x_k += b_k h + sum_j sigma_{kj} dw_j`.
#[inline(always)]
fn euler_step(d: usize, x: &mut [f64], b: &[f64], s: &[f64], h: f64, dw: &[f64]) {
    for k in 0..d {
        let mut diff = 0.0;
        for j in 0..d {
            diff += s[k * d + j] * dw[j];
        }
        x[k] += b[k] * h + diff;
    }
}

/// Simulates `m` paths from `x0`; deterministic in all arguments.
pub fn simulate_batch<F: Field + ?Sized>(
    field: &F,
    x0: &[f64],
    grid: GridSchedule,
    m: usize,
    seed: u64,
) -> Result<TrajectoryBatch> {
    let d = field.dim();
    if x0.len() != d {
        return Err(EwelError::Argument(format!(
            "x0 has dim {} but the field wants {d}",
            x0.len()
        )));
    }
    if m == 0 {
        return Err(EwelError::Argument("m >= 1 paths required".into()));
    }
    let n = grid.n_steps;
    let bytes = (m * (n + 1) * d + m * n * d) * core::mem::size_of::<f64>();
    if bytes > MAX_BATCH_BYTES {
        return Err(EwelError::Config(format!(
            "batch of {bytes} bytes exceeds the {MAX_BATCH_BYTES}-byte budget; \
             use the streaming estimators"
        )));
    }

    let mut states = vec![0.0; m * (n + 1) * d];
    let mut increments = vec![0.0; m * n * d];
    let h = grid.h();
    let mut b = [0.0; MAX_DIM];
    let mut s = [0.0; MAX_DIM * MAX_DIM];
    let mut x = [0.0; MAX_DIM];

    for path in 0..m {
        let inc = &mut increments[path * n * d..(path + 1) * n * d];
        path_increments(seed, path, n, d, h, inc);
        x[..d].copy_from_slice(x0);
        states[path * (n + 1) * d..path * (n + 1) * d + d].copy_from_slice(x0);
        for i in 0..n {
            let t = grid.time(i);
            field.drift(t, &x[..d], &mut b[..d]);
            field.sigma(t, &x[..d], &mut s[..d * d]);
            euler_step(d, &mut x[..d], &b[..d], &s[..d * d], h, &inc[i * d..(i + 1) * d]);
            if x[..d].iter().any(|v| !v.is_finite()) {
                return Err(EwelError::NonFiniteState { path, step: i });
            }
            let idx = (path * (n + 1) + i + 1) * d;
            states[idx..idx + d].copy_from_slice(&x[..d]);
        }
    }

    Ok(TrajectoryBatch {
        grid,
        dim: d,
        m_paths: m,
        states,
        increments,
        seed,
    })
}

/// Runs the scheme over externally supplied increments (`m x n x d`).
pub fn simulate_with_increments<F: Field + ?Sized>(
    field: &F,
    x0: &[f64],
    grid: GridSchedule,
    m: usize,
    seed: u64,
    increments: &[f64],
) -> Result<TrajectoryBatch> {
    let d = field.dim();
    let n = grid.n_steps;
    if increments.len() != m * n * d {
        return Err(EwelError::Argument(format!(
            "increments length {} != m*n*d = {}",
            increments.len(),
            m * n * d
        )));
    }
    let mut states = vec![0.0; m * (n + 1) * d];
    let h = grid.h();
    let mut b = [0.0; MAX_DIM];
    let mut s = [0.0; MAX_DIM * MAX_DIM];
    let mut x = [0.0; MAX_DIM];
    for path in 0..m {
        x[..d].copy_from_slice(x0);
        states[path * (n + 1) * d..path * (n + 1) * d + d].copy_from_slice(x0);
        for i in 0..n {
            let t = grid.time(i);
            field.drift(t, &x[..d], &mut b[..d]);
            field.sigma(t, &x[..d], &mut s[..d * d]);
            let inc = &increments[(path * n + i) * d..(path * n + i + 1) * d];
            euler_step(d, &mut x[..d], &b[..d], &s[..d * d], h, inc);
            if x[..d].iter().any(|v| !v.is_finite()) {
                return Err(EwelError::NonFiniteState { path, step: i });
            }
            let idx = (path * (n + 1) + i + 1) * d;
            states[idx..idx + d].copy_from_slice(&x[..d]);
        }
    }
    Ok(TrajectoryBatch {
        grid,
        dim: d,
        m_paths: m,
        states,
        increments: increments.to_vec(),
        seed,
    })
}

/// Fine-grid increments whose per-coarse-step sums reproduce a batch.
#[derive(Clone, Debug)]
pub struct RefinedIncrements {
    pub grid: GridSchedule,
    pub factor: usize,
    /// Row-major `m x (n*factor) x d`.
    pub increments: Vec<f64>,
}

/// Refines one path's coarse increments (`n x d`) into `out`
/// (`n*factor x d`) by sequential Brownian-bridge conditioning.
///
/// Within coarse step `i` with remaining sum `R` over `m` fine steps, the
/// next fine increment is `R/m + sqrt(h_f (m-1)/m) xi`; the last one takes
/// the remainder, so fine sums reproduce the coarse increment exactly.
pub fn refine_path_increments(
    seed: u64,
    path: usize,
    coarse: &[f64],
    n: usize,
    d: usize,
    h_coarse: f64,
    factor: usize,
    out: &mut [f64],
) {
    debug_assert_eq!(coarse.len(), n * d);
    debug_assert_eq!(out.len(), n * factor * d);
    let fine_n = (n * factor) as u64;
    let mut stream = NormalStream::new(seed, rng::TAG_REFINE, path as u64, fine_n);
    let h_fine = h_coarse / factor as f64;
    let mut remaining = [0.0; MAX_DIM];
    for i in 0..n {
        remaining[..d].copy_from_slice(&coarse[i * d..(i + 1) * d]);
        for sub in 0..factor {
            let m_left = (factor - sub) as f64;
            let base = (i * factor + sub) * d;
            if sub == factor - 1 {
                out[base..base + d].copy_from_slice(&remaining[..d]);
            } else {
                let sd = math::sqrt(h_fine * (m_left - 1.0) / m_left);
                for k in 0..d {
                    let v = remaining[k] / m_left + sd * stream.next();
                    out[base + k] = v;
                    remaining[k] -= v;
                }
            }
        }
    }
}

/// Generates fine increments consistent with `batch` (common random
/// numbers); deterministic given `batch.seed`.
pub fn refine_common_noise(batch: &TrajectoryBatch, factor: usize) -> Result<RefinedIncrements> {
    if factor < 2 {
        return Err(EwelError::Argument("refinement factor must be >= 2".into()));
    }
    let fine_grid = batch.grid.refined(factor)?;
    let (m, n, d) = (batch.m_paths, batch.grid.n_steps, batch.dim);
    let bytes = m * n * factor * d * core::mem::size_of::<f64>();
    if bytes > MAX_BATCH_BYTES {
        return Err(EwelError::Config(format!(
            "refined increments need {bytes} bytes, over the {MAX_BATCH_BYTES}-byte budget"
        )));
    }
    let mut increments = vec![0.0; m * n * factor * d];
    for path in 0..m {
        let coarse = &batch.increments[path * n * d..(path + 1) * n * d];
        let out = &mut increments[path * n * factor * d..(path + 1) * n * factor * d];
        refine_path_increments(batch.seed, path, coarse, n, d, batch.grid.h(), factor, out);
    }
    Ok(RefinedIncrements {
        grid: fine_grid,
        factor,
        increments,
    })
}

/// States of every path at an off-grid time `s`, by freezing coefficients at
/// `phi(s)` and conditioning the Brownian value inside the step on the
/// stored increment (deterministic given the batch seed and `s`).
pub fn continuous_interpolate<F: Field + ?Sized>(
    batch: &TrajectoryBatch,
    s: f64,
    field: &F,
) -> Result<Vec<f64>> {
    let grid = batch.grid;
    if !(0.0..=grid.t_horizon).contains(&s) {
        return Err(EwelError::Argument(format!(
            "interpolation time {s} outside [0, {}]",
            grid.t_horizon
        )));
    }
    let d = batch.dim;
    let h = grid.h();
    let mut out = vec![0.0; batch.m_paths * d];
    // Exact grid times return the stored states bit-identically.
    let i = grid.last_index_before(s);
    if s == grid.time(i) || s == grid.t_horizon {
        let step = if s == grid.t_horizon { grid.n_steps } else { i };
        for path in 0..batch.m_paths {
            out[path * d..(path + 1) * d].copy_from_slice(batch.state(path, step));
        }
        return Ok(out);
    }
    let t_i = grid.time(i);
    let theta = (s - t_i) / h;
    let cond_sd = math::sqrt(theta * (1.0 - theta) * h);
    let mut b = [0.0; MAX_DIM];
    let mut sig = [0.0; MAX_DIM * MAX_DIM];
    let mut w = [0.0; MAX_DIM];
    for path in 0..batch.m_paths {
        let x = batch.state(path, i);
        let dw = batch.increment(path, i);
        field.drift(t_i, x, &mut b[..d]);
        field.sigma(t_i, x, &mut sig[..d * d]);
        // Bridge draw keyed by (path, step, bits of s).
        let sub = rng::mix64((i as u64) ^ s.to_bits().rotate_left(17));
        for (k, wk) in w[..d].iter_mut().enumerate() {
            let z = rng::normal_at(batch.seed, rng::TAG_INTERP, path as u64, sub, k as u64);
            *wk = theta * dw[k] + cond_sd * z;
        }
        let o = &mut out[path * d..(path + 1) * d];
        o.copy_from_slice(x);
        euler_step(d, o, &b[..d], &sig[..d * d], s - t_i, &w[..d]);
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Streaming coupled engine (1D fast path)
// ---------------------------------------------------------------------------

/// Lane count of the vectorized 1D engine.
pub const LANES: usize = 8;

/// Terminal states of one block of `LANES` coupled coarse/fine paths.
///
/// Produces bit-identical values to `simulate_batch` + `refine_common_noise`
/// + `simulate_with_increments` for the same seed and path indices, without
/// materializing anything: per-block memory is `O(N * factor)`.
pub struct CoupledBlock {
    pub coarse: [f64; LANES],
    pub fine: [f64; LANES],
}

/// Scratch buffers reused across blocks.
pub struct CoupledScratch {
    coarse_inc: Vec<f64>,
    fine_inc: Vec<f64>,
    drift: Vec<f64>,
    sigma: Vec<f64>,
}

impl CoupledScratch {
    pub fn new(n: usize, factor: usize) -> Self {
        Self {
            coarse_inc: vec![0.0; n * LANES],
            fine_inc: vec![0.0; n * factor * LANES],
            drift: vec![0.0; LANES],
            sigma: vec![0.0; LANES],
        }
    }
}

/// Runs `LANES` consecutive paths (starting at `path0`) of the coupled
/// coarse/fine 1D Euler scheme.
#[allow(clippy::too_many_arguments)]
pub fn coupled_block_1d<F: Field + ?Sized>(
    field: &F,
    x0: f64,
    grid: GridSchedule,
    factor: usize,
    seed: u64,
    path0: usize,
    scratch: &mut CoupledScratch,
) -> Result<CoupledBlock> {
    debug_assert_eq!(field.dim(), 1);
    let n = grid.n_steps;
    let h = grid.h();
    let n_fine = n * factor;
    let h_fine = h / factor as f64;
    let sqrt_h = math::sqrt(h);

    // Base increments, lane-interleaved [step][lane].
    for lane in 0..LANES {
        let mut stream = NormalStream::new(seed, rng::TAG_INCREMENTS, (path0 + lane) as u64, 0);
        for i in 0..n {
            scratch.coarse_inc[i * LANES + lane] = sqrt_h * stream.next();
        }
    }
    // Bridge refinement, same conditioning order as the scalar path.
    for lane in 0..LANES {
        let mut stream = NormalStream::new(
            seed,
            rng::TAG_REFINE,
            (path0 + lane) as u64,
            n_fine as u64,
        );
        for i in 0..n {
            let mut remaining = scratch.coarse_inc[i * LANES + lane];
            for sub in 0..factor {
                let m_left = (factor - sub) as f64;
                let idx = (i * factor + sub) * LANES + lane;
                if sub == factor - 1 {
                    scratch.fine_inc[idx] = remaining;
                } else {
                    let sd = math::sqrt(h_fine * (m_left - 1.0) / m_left);
                    let v = remaining / m_left + sd * stream.next();
                    scratch.fine_inc[idx] = v;
                    remaining -= v;
                }
            }
        }
    }

    // Coarse run.
    let mut xc = [x0; LANES];
    for i in 0..n {
        let t = grid.time(i);
        field.drift1_slice(t, &xc, &mut scratch.drift);
        field.sigma1_slice(t, &xc, &mut scratch.sigma);
        let inc = &scratch.coarse_inc[i * LANES..(i + 1) * LANES];
        for l in 0..LANES {
            xc[l] += scratch.drift[l] * h + scratch.sigma[l] * inc[l];
        }
        if xc.iter().any(|v| !v.is_finite()) {
            let lane = xc.iter().position(|v| !v.is_finite()).unwrap();
            return Err(EwelError::NonFiniteState { path: path0 + lane, step: i });
        }
    }
    // Fine run.
    let fine_grid = grid.refined(factor)?;
    let mut xf = [x0; LANES];
    for i in 0..n_fine {
        let t = fine_grid.time(i);
        field.drift1_slice(t, &xf, &mut scratch.drift);
        field.sigma1_slice(t, &xf, &mut scratch.sigma);
        let inc = &scratch.fine_inc[i * LANES..(i + 1) * LANES];
        for l in 0..LANES {
            xf[l] += scratch.drift[l] * h_fine + scratch.sigma[l] * inc[l];
        }
        if xf.iter().any(|v| !v.is_finite()) {
            let lane = xf.iter().position(|v| !v.is_finite()).unwrap();
            return Err(EwelError::NonFiniteState { path: path0 + lane, step: i });
        }
    }
    Ok(CoupledBlock { coarse: xc, fine: xf })
}

/// Terminal states only, single grid (no refinement), `LANES` paths.
pub fn terminal_block_1d<F: Field + ?Sized>(
    field: &F,
    x0: f64,
    grid: GridSchedule,
    seed: u64,
    path0: usize,
    scratch: &mut CoupledScratch,
) -> Result<[f64; LANES]> {
    debug_assert_eq!(field.dim(), 1);
    let n = grid.n_steps;
    let h = grid.h();
    let sqrt_h = math::sqrt(h);
    for lane in 0..LANES {
        let mut stream = NormalStream::new(seed, rng::TAG_INCREMENTS, (path0 + lane) as u64, 0);
        for i in 0..n {
            scratch.coarse_inc[i * LANES + lane] = sqrt_h * stream.next();
        }
    }
    let mut x = [x0; LANES];
    for i in 0..n {
        let t = grid.time(i);
        field.drift1_slice(t, &x, &mut scratch.drift);
        field.sigma1_slice(t, &x, &mut scratch.sigma);
        let inc = &scratch.coarse_inc[i * LANES..(i + 1) * LANES];
        for l in 0..LANES {
            x[l] += scratch.drift[l] * h + scratch.sigma[l] * inc[l];
        }
        if x.iter().any(|v| !v.is_finite()) {
            let lane = x.iter().position(|v| !v.is_finite()).unwrap();
            return Err(EwelError::NonFiniteState { path: path0 + lane, step: i });
        }
    }
    Ok(x)
}
