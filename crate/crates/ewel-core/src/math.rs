//! Scalar math shims and fast trigonometric kernels.
//!
//! With the `std` feature the elementary functions route to the platform
//! libm; without it they fall back to the pure-Rust `libm` crate so the
//! crate stays `no_std`-compatible.
//!
//! `cos_pi`/`sin_pi` evaluate `cos(pi x)`/`sin(pi x)` with exact period-2
//! range reduction and a degree-10 even/odd polynomial on the reduced
//! quadrant (truncation error below 2e-17 at the quadrant edge). They are
//! branch-light and autovectorize, which matters: the Weierstrass diffusion
//! coefficient alone costs one of these per series term per Euler step.

macro_rules! fwd {
    ($name:ident, $std:ident, $libm:path) => {
        #[inline(always)]
        pub fn $name(x: f64) -> f64 {
            #[cfg(feature = "std")]
            {
                x.$std()
            }
            #[cfg(not(feature = "std"))]
            {
                $libm(x)
            }
        }
    };
}

fwd!(exp, exp, libm::exp);
fwd!(ln, ln, libm::log);
fwd!(sqrt, sqrt, libm::sqrt);
fwd!(cos, cos, libm::cos);
fwd!(sin, sin, libm::sin);
fwd!(tanh, tanh, libm::tanh);
fwd!(floor, floor, libm::floor);
fwd!(abs, abs, libm::fabs);

#[inline(always)]
pub fn powf(x: f64, y: f64) -> f64 {
    #[cfg(feature = "std")]
    {
        x.powf(y)
    }
    #[cfg(not(feature = "std"))]
    {
        libm::pow(x, y)
    }
}

#[inline(always)]
pub fn powi(x: f64, n: i32) -> f64 {
    #[cfg(feature = "std")]
    {
        x.powi(n)
    }
    #[cfg(not(feature = "std"))]
    {
        libm::pow(x, n as f64)
    }
}

/// Euler Gamma function (always via `libm`; the std library has none).
#[inline]
pub fn gamma(x: f64) -> f64 {
    libm::tgamma(x)
}

#[inline]
pub fn erf(x: f64) -> f64 {
    libm::erf(x)
}

pub const SQRT_2PI: f64 = 2.5066282746310002;

/// Standard normal density.
#[inline(always)]
pub fn std_normal_pdf(z: f64) -> f64 {
    exp(-0.5 * z * z) / SQRT_2PI
}

// Taylor coefficients of cos(pi t) in s = t^2, valid on |t| <= 1/2.
const COS_PI_C: [f64; 11] = [
    1.0,
    -4.934802200544679,
    4.058712126416768,
    -1.3352627688545895,
    0.23533063035889320,
    -0.025806891390014060,
    0.0019295743094039230,
    -1.0463810492484571e-4,
    4.3030695870329470e-6,
    -1.3878952462213772e-7,
    3.6047307974625001e-9,
];

// Taylor coefficients of sin(pi t)/(pi t) in s = t^2, valid on |t| <= 1/2.
const SIN_PI_C: [f64; 11] = [
    1.0,
    -1.6449340668482264,
    0.8117424252833536,
    -0.19075182412208421,
    0.026147847817654800,
    -0.0023460810354558236,
    1.4842879303107100e-4,
    -6.9758736616563805e-6,
    2.5312174041370276e-7,
    -7.3047118222177748e-9,
    1.7165384749821433e-10,
];

#[inline(always)]
fn poly10(s: f64, c: &[f64; 11]) -> f64 {
    let mut acc = c[10];
    let mut k = 10usize;
    while k > 0 {
        k -= 1;
        acc = acc * s + c[k];
    }
    acc
}

#[inline(always)]
fn cos_quadrant(t: f64) -> f64 {
    poly10(t * t, &COS_PI_C)
}

#[inline(always)]
fn sin_quadrant(t: f64) -> f64 {
    core::f64::consts::PI * t * poly10(t * t, &SIN_PI_C)
}

/// `cos(pi x)` with exact modulo-2 reduction. Exactly even in `x`.
#[inline]
pub fn cos_pi(x: f64) -> f64 {
    let x = abs(x);
    // r in [0, 2); the reduction is exact float arithmetic.
    let r = x - 2.0 * floor(0.5 * x);
    // Fold into [0, 1] around the half-period, then split at the quarter.
    let y = if r <= 1.0 { r } else { 2.0 - r };
    if y <= 0.5 {
        cos_quadrant(y)
    } else {
        -cos_quadrant(1.0 - y)
    }
}

/// `sin(pi x)` with exact modulo-2 reduction. Exactly odd in `x`.
#[inline]
pub fn sin_pi(x: f64) -> f64 {
    let parity = if x < 0.0 { -1.0 } else { 1.0 };
    let x = abs(x);
    let r = x - 2.0 * floor(0.5 * x);
    let (y, sign) = if r <= 1.0 { (r, parity) } else { (2.0 - r, -parity) };
    // sin(pi y) on [0,1], symmetric about 1/2.
    if y <= 0.5 {
        sign * sin_quadrant(y)
    } else {
        sign * sin_quadrant(1.0 - y)
    }
}

/// Clamp to `[lo, hi]`.
#[inline(always)]
pub fn clip(x: f64, lo: f64, hi: f64) -> f64 {
    if x < lo {
        lo
    } else if x > hi {
        hi
    } else {
        x
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cos_pi_matches_std() {
        for i in -2000..2000 {
            let x = i as f64 * 0.0137 + 0.0001;
            let want = (core::f64::consts::PI * x).cos();
            assert!(
                (cos_pi(x) - want).abs() < 1e-12,
                "x={x}: {} vs {want}",
                cos_pi(x)
            );
        }
        assert_eq!(cos_pi(0.0), 1.0);
        assert!((cos_pi(1.0) + 1.0).abs() < 1e-15);
        assert!(cos_pi(0.5).abs() < 1e-15);
    }

    #[test]
    fn sin_pi_matches_std() {
        for i in -2000..2000 {
            let x = i as f64 * 0.0173 + 0.0007;
            let want = (core::f64::consts::PI * x).sin();
            assert!(
                (sin_pi(x) - want).abs() < 1e-12,
                "x={x}: {} vs {want}",
                sin_pi(x)
            );
        }
        assert_eq!(sin_pi(0.0), 0.0);
    }

    #[test]
    fn large_argument_reduction_is_stable() {
        // Arguments of size 2^k * x appear in the Weierstrass series.
        for k in 0..14 {
            let x = (1u64 << k) as f64 * 0.7311;
            let want = (core::f64::consts::PI * x).cos();
            assert!((cos_pi(x) - want).abs() < 1e-9, "k={k}");
        }
    }
}
