//! Splittable counter-based random numbers.
//!
//! Every random quantity in the laboratory is addressed, not drawn: a stream
//! is keyed by `(seed, tag, lane, sub)` and position `ctr` along the stream
//! yields `mix64(key + ctr * GOLDEN)` — the SplitMix64 construction, so each
//! stream is a full-strength SplitMix64 sequence and any stream element can
//! be regenerated in O(1). This is what makes path-parallel simulation
//! bit-reproducible for any worker count and lets refinement replay the
//! noise of an existing batch without storing it.
//!
//! Tags partition the namespace so that, e.g., the Brownian increments of
//! path 7 never collide with the bridge-refinement noise of path 7.

use crate::math;

const GOLDEN: u64 = 0x9E3779B97F4A7C15;

/// Brownian increments of the base grid, lane = path index.
pub const TAG_INCREMENTS: u64 = 1;
/// Bridge refinement noise, lane = path index, sub = fine step count.
pub const TAG_REFINE: u64 = 2;
/// Intra-step bridge conditioning for continuous interpolation.
pub const TAG_INTERP: u64 = 3;
/// Pair sampling in assumption validation and deviation scans.
pub const TAG_SAMPLING: u64 = 4;

/// SplitMix64 finalizer: full-avalanche 64-bit mix.
#[inline(always)]
pub fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derives a stream key by absorbing the coordinates one mix at a time.
#[inline]
pub fn stream_key(seed: u64, tag: u64, lane: u64, sub: u64) -> u64 {
    let mut h = mix64(seed ^ 0x243F_6A88_85A3_08D3);
    h = mix64(h.wrapping_add(GOLDEN).wrapping_add(tag));
    h = mix64(h.wrapping_add(GOLDEN).wrapping_add(lane));
    mix64(h.wrapping_add(GOLDEN).wrapping_add(sub))
}

/// A positioned counter stream.
#[derive(Clone, Debug)]
pub struct CounterRng {
    key: u64,
    ctr: u64,
}

impl CounterRng {
    pub fn new(seed: u64, tag: u64, lane: u64, sub: u64) -> Self {
        Self {
            key: stream_key(seed, tag, lane, sub),
            ctr: 0,
        }
    }

    /// The stream value at an absolute position, without moving the cursor.
    #[inline(always)]
    pub fn at(&self, ctr: u64) -> u64 {
        mix64(self.key.wrapping_add(ctr.wrapping_mul(GOLDEN)))
    }

    #[inline(always)]
    pub fn next_u64(&mut self) -> u64 {
        let x = self.at(self.ctr);
        self.ctr += 1;
        x
    }

    /// Uniform on (0, 1]: safe for `ln`.
    #[inline(always)]
    pub fn next_unit_open(&mut self) -> f64 {
        (((self.next_u64() >> 11) + 1) as f64) * (1.0 / 9007199254740992.0)
    }

    /// Uniform on [0, 1).
    #[inline(always)]
    pub fn next_unit(&mut self) -> f64 {
        ((self.next_u64() >> 11) as f64) * (1.0 / 9007199254740992.0)
    }
}

/// Standard normal draws by Box–Muller over a counter stream.
///
/// Consumes exactly two uniforms per pair; the second normal of a pair is
/// cached so sequential consumption costs one `ln`, one `sqrt` and one
/// `sin`/`cos` pair per two draws.
#[derive(Clone, Debug)]
pub struct NormalStream {
    rng: CounterRng,
    cache: Option<f64>,
}

impl NormalStream {
    pub fn new(seed: u64, tag: u64, lane: u64, sub: u64) -> Self {
        Self {
            rng: CounterRng::new(seed, tag, lane, sub),
            cache: None,
        }
    }

    #[inline(always)]
    pub fn next(&mut self) -> f64 {
        if let Some(z) = self.cache.take() {
            return z;
        }
        let (z0, z1) = box_muller(self.rng.next_unit_open(), self.rng.next_unit());
        self.cache = Some(z1);
        z0
    }

    /// Fills `out` with consecutive draws.
    pub fn fill(&mut self, out: &mut [f64]) {
        for z in out.iter_mut() {
            *z = self.next();
        }
    }
}

/// Box–Muller transform; `u1` in (0,1], `u2` in [0,1).
#[inline(always)]
pub fn box_muller(u1: f64, u2: f64) -> (f64, f64) {
    let r = math::sqrt(-2.0 * math::ln(u1));
    (r * math::cos_pi(2.0 * u2), r * math::sin_pi(2.0 * u2))
}

/// One normal draw addressed by `(seed, tag, lane, sub, index)`.
///
/// Indices `2j` and `2j+1` come from the Box–Muller pair at counter `j`.
pub fn normal_at(seed: u64, tag: u64, lane: u64, sub: u64, index: u64) -> f64 {
    let rng = CounterRng::new(seed, tag, lane, sub);
    let j = index / 2;
    let u1 = (((rng.at(2 * j) >> 11) + 1) as f64) * (1.0 / 9007199254740992.0);
    let u2 = ((rng.at(2 * j + 1) >> 11) as f64) * (1.0 / 9007199254740992.0);
    let (z0, z1) = box_muller(u1, u2);
    if index % 2 == 0 {
        z0
    } else {
        z1
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    #[test]
    fn streams_are_reproducible_and_addressable() {
        let mut s = NormalStream::new(42, TAG_INCREMENTS, 7, 0);
        let mut seq = vec![0.0; 64];
        s.fill(&mut seq);
        for (i, &z) in seq.iter().enumerate() {
            assert_eq!(z, normal_at(42, TAG_INCREMENTS, 7, 0, i as u64), "i={i}");
        }
    }

    #[test]
    fn distinct_lanes_decorrelate() {
        let mut a = NormalStream::new(42, TAG_INCREMENTS, 0, 0);
        let mut b = NormalStream::new(42, TAG_INCREMENTS, 1, 0);
        let n = 20_000;
        let (mut dot, mut na, mut nb) = (0.0, 0.0, 0.0);
        for _ in 0..n {
            let (x, y) = (a.next(), b.next());
            dot += x * y;
            na += x * x;
            nb += y * y;
        }
        let corr = dot / (na.sqrt() * nb.sqrt());
        assert!(corr.abs() < 0.03, "corr={corr}");
    }

    #[test]
    fn normal_moments() {
        let mut s = NormalStream::new(1, TAG_INCREMENTS, 0, 0);
        let n = 200_000;
        let (mut m1, mut m2, mut m4) = (0.0, 0.0, 0.0);
        for _ in 0..n {
            let z = s.next();
            m1 += z;
            m2 += z * z;
            m4 += z * z * z * z;
        }
        let nf = n as f64;
        assert!((m1 / nf).abs() < 0.01);
        assert!((m2 / nf - 1.0).abs() < 0.02);
        assert!((m4 / nf - 3.0).abs() < 0.1);
    }
}
