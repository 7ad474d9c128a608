//! Branch-free `expm1`, `sin` and `cos` that the compiler can vectorise over
//! slices. libm's scalar versions dominated the cost of the elu and Fourier
//! layers.
//!
//! Only plain multiplies and adds are used, never `mul_add`, so the AVX2
//! slice kernels (picked at run time) and the baseline ones give
//! bit-identical results.
//!
//! `expm1`: Cody–Waite reduction `x = k·ln2 + r`, `|r| ≤ ln2/2`, a degree-12
//! Taylor series for `expm1(r)`, reassembled as `2ᵏ·expm1(r) + (2ᵏ − 1)`,
//! which is exact when `k = 0` and so keeps relative accuracy near 0.
//!
//! `sin`/`cos`: three-part reduction by π/2 and the fdlibm kernels on
//! `[−π/4, π/4]`. Arguments beyond [`TRIG_LIMIT`] go to libm.

const LN2_HI: f64 = 6.931_471_803_691_238_2e-1;
const LN2_LO: f64 = 1.908_214_929_270_587_7e-10;
const LOG2E: f64 = std::f64::consts::LOG2_E;
/// Adding and subtracting `1.5·2⁵²` rounds to the nearest integer.
const ROUND: f64 = 6_755_399_441_055_744.0;
const LO: f64 = -708.0;
const HI: f64 = 709.0;

const TWO_OVER_PI: f64 = std::f64::consts::FRAC_2_PI;
// π/2 as two 33-bit pieces, so `k·PIO2_1` and `k·PIO2_2` are exact for
// |k| < 2²⁰, plus a tail.
const PIO2_1: f64 = 1.570_796_326_734_125_6e0;
const PIO2_2: f64 = 6.077_100_506_303_966e-11;
const PIO2_3: f64 = 2.022_266_248_795_950_6e-21; // tail, not split
/// Largest |x| handled by the fast reduction.
pub const TRIG_LIMIT: f64 = 1.0e5;

const S1: f64 = -1.666_666_666_666_663_2e-1;
const S2: f64 = 8.333_333_333_322_489e-3;
const S3: f64 = -1.984_126_982_985_795e-4;
const S4: f64 = 2.755_731_370_707_007e-6;
const S5: f64 = -2.505_076_025_340_686_3e-8;
const S6: f64 = 1.589_690_995_211_55e-10;
const C1: f64 = 4.166_666_666_666_602e-2;
const C2: f64 = -1.388_888_888_887_411e-3;
const C3: f64 = 2.480_158_728_947_673e-5;
const C4: f64 = -2.755_731_435_139_066_3e-7;
const C5: f64 = 2.087_572_321_298_175e-9;
const C6: f64 = -1.135_964_755_778_819_5e-11;

/// `eˣ − 1`, within a few ulp of `f64::exp_m1` on `[−708, 709]`; inputs
/// outside are clamped (the result saturates at −1 or overflows to a large
/// finite value respectively).
#[inline(always)]
pub fn expm1(x: f64) -> f64 {
    let xc = x.clamp(LO, HI);
    let t = xc * LOG2E + ROUND;
    let kf = t - ROUND;
    // `kf·LN2_HI` is exact: LN2_HI has trailing zero bits.
    let r = (xc - kf * LN2_HI) - kf * LN2_LO;
    // expm1(r) = r + r²/2! + … + r¹²/12!
    let mut p = 1.0 / 479_001_600.0;
    p = p * r + 1.0 / 39_916_800.0;
    p = p * r + 1.0 / 3_628_800.0;
    p = p * r + 1.0 / 362_880.0;
    p = p * r + 1.0 / 40_320.0;
    p = p * r + 1.0 / 5_040.0;
    p = p * r + 1.0 / 720.0;
    p = p * r + 1.0 / 120.0;
    p = p * r + 1.0 / 24.0;
    p = p * r + 1.0 / 6.0;
    p = p * r + 0.5;
    let q = p * r * r + r;
    let k = (t.to_bits() as i64).wrapping_sub(ROUND.to_bits() as i64);
    let scale = f64::from_bits(((k + 1023) as u64) << 52);
    // NaN propagates through `q`.
    scale * q + (scale - 1.0)
}

/// Reduced argument and quadrant: `x = k·π/2 + r`, returns `(r, k mod 4)`.
#[inline(always)]
fn reduce(x: f64) -> (f64, u64) {
    let t = x * TWO_OVER_PI + ROUND;
    let kf = t - ROUND;
    let r = ((x - kf * PIO2_1) - kf * PIO2_2) - kf * PIO2_3;
    (r, t.to_bits() & 3)
}

#[inline(always)]
fn kernel_sin(r: f64) -> f64 {
    let z = r * r;
    let p = S2 + z * (S3 + z * (S4 + z * (S5 + z * S6)));
    r + r * z * (S1 + z * p)
}

#[inline(always)]
fn kernel_cos(r: f64) -> f64 {
    let z = r * r;
    let p = z * (C1 + z * (C2 + z * (C3 + z * (C4 + z * (C5 + z * C6)))));
    let hz = 0.5 * z;
    let w = 1.0 - hz;
    w + (((1.0 - w) - hz) + z * p)
}

/// `sin x` for `|x| ≤ TRIG_LIMIT`; within a few ulp of libm there.
#[inline(always)]
pub fn sin_reduced(x: f64) -> f64 {
    let (r, q) = reduce(x);
    let s = kernel_sin(r);
    let c = kernel_cos(r);
    let v = if q & 1 == 0 { s } else { c };
    if q & 2 == 0 {
        v
    } else {
        -v
    }
}

/// `cos x` for `|x| ≤ TRIG_LIMIT`.
#[inline(always)]
pub fn cos_reduced(x: f64) -> f64 {
    let (r, q) = reduce(x);
    let s = kernel_sin(r);
    let c = kernel_cos(r);
    let v = if q & 1 == 0 { c } else { s };
    if (q + 1) & 2 == 0 {
        v
    } else {
        -v
    }
}

pub fn sin(x: f64) -> f64 {
    if x.abs() <= TRIG_LIMIT {
        sin_reduced(x)
    } else {
        x.sin()
    }
}

pub fn cos(x: f64) -> f64 {
    if x.abs() <= TRIG_LIMIT {
        cos_reduced(x)
    } else {
        x.cos()
    }
}

macro_rules! dispatch {
    ($(#[$doc:meta])* $name:ident, $avx:ident, $base:ident, ($($arg:ident: $ty:ty),*), $body:block) => {
        #[inline(always)]
        fn $base($($arg: $ty),*) $body

        #[cfg(target_arch = "x86_64")]
        #[target_feature(enable = "avx2")]
        unsafe fn $avx($($arg: $ty),*) {
            $base($($arg),*)
        }

        $(#[$doc])*
        pub fn $name($($arg: $ty),*) {
            #[cfg(target_arch = "x86_64")]
            if std::is_x86_feature_detected!("avx2") {
                // SAFETY: the feature was detected at run time.
                return unsafe { $avx($($arg),*) };
            }
            $base($($arg),*)
        }
    };
}

dispatch!(
    /// Elu (α = 1) applied in place.
    elu_in_place, elu_avx2, elu_base, (v: &mut [f64]), {
        for x in v {
            let e = expm1(*x);
            *x = if *x > 0.0 { *x } else { e };
        }
    }
);

/// `g ← g · elu′` from elu outputs `y`: 1 where `y > 0`, else `y + 1 = eᶻ`.
pub fn elu_backward_from_output(g: &mut [f64], y: &[f64]) {
    for (g, &y) in g.iter_mut().zip(y) {
        *g *= if y > 0.0 { 1.0 } else { y + 1.0 };
    }
}

dispatch!(
    /// `g ← g · cos(z)` elementwise.
    cos_mul_in_place, cos_mul_avx2, cos_mul_base, (g: &mut [f64], z: &[f64]), {
        for (g, &z) in g.iter_mut().zip(z) {
            *g *= if z.abs() <= TRIG_LIMIT { cos_reduced(z) } else { 1.0 };
        }
        for (g, &z) in g.iter_mut().zip(z) {
            if z.abs() > TRIG_LIMIT {
                *g *= z.cos();
            }
        }
    }
);

dispatch!(
    /// `out[i] = sin(z[i])`.
    sin_from, sin_from_avx2, sin_from_base, (out: &mut [f64], z: &[f64]), {
        for (o, &z) in out.iter_mut().zip(z) {
            *o = sin_reduced(z);
        }
        for (o, &z) in out.iter_mut().zip(z) {
            if z.abs() > TRIG_LIMIT {
                *o = z.sin();
            }
        }
    }
);

dispatch!(
    /// `sin` in place.
    sin_in_place, sin_in_place_avx2, sin_in_place_base, (v: &mut [f64]), {
        if v.iter().all(|x| x.abs() <= TRIG_LIMIT) {
            v.iter_mut().for_each(|x| *x = sin_reduced(*x));
        } else {
            v.iter_mut().for_each(|x| *x = sin(*x));
        }
    }
);

#[cfg(test)]
mod tests {
    use super::*;

    fn ulps(a: f64, b: f64) -> f64 {
        if a == b {
            return 0.0;
        }
        (a - b).abs() / (b.abs() * f64::EPSILON).max(f64::MIN_POSITIVE)
    }

    #[test]
    fn expm1_matches_libm_closely() {
        let mut worst: f64 = 0.0;
        let n = 200_001;
        for i in 0..n {
            let x = -40.0 + 80.0 * i as f64 / (n - 1) as f64;
            worst = worst.max(ulps(expm1(x), x.exp_m1()));
        }
        for e in -300..0 {
            let x = 10f64.powi(e);
            worst = worst.max(ulps(expm1(x), x.exp_m1()));
            worst = worst.max(ulps(expm1(-x), (-x).exp_m1()));
        }
        assert!(worst < 8.0, "worst {worst} ulp");
    }

    #[test]
    fn expm1_edges() {
        assert_eq!(expm1(0.0), 0.0);
        assert_eq!(expm1(-1e4), -1.0);
        assert!(expm1(f64::NAN).is_nan());
        assert!(ulps(expm1(700.0), 700f64.exp_m1()) < 8.0);
        assert_eq!(expm1(f64::NEG_INFINITY), -1.0);
    }

    #[test]
    fn trig_matches_libm_closely() {
        // Absolute error: near the zeros of sin and cos relative error is
        // not meaningful for any reduction that is not exact.
        let mut worst: f64 = 0.0;
        let n = 400_001;
        for i in 0..n {
            let x = -2000.0 + 4000.0 * i as f64 / (n - 1) as f64;
            worst = worst.max((sin(x) - x.sin()).abs()).max((cos(x) - x.cos()).abs());
        }
        for x in [1e-300, 1e-8, 0.5, 1e4, 99_999.0, 1e5, 1e6, 1e300] {
            worst = worst.max((sin(x) - x.sin()).abs()).max((cos(x) - x.cos()).abs());
            worst = worst.max((sin(-x) - (-x).sin()).abs());
        }
        assert!(worst < 4.0 * f64::EPSILON, "worst {worst}");
        assert_eq!(sin(0.0), 0.0);
        assert_eq!(cos(0.0), 1.0);
        assert!(sin(f64::NAN).is_nan() && cos(f64::INFINITY).is_nan());
    }

    #[test]
    fn slice_kernels_match_scalar() {
        let z: Vec<f64> = (0..1003).map(|i| -30.0 + 0.06 * i as f64).chain([2e5, -3e6]).collect();
        let mut v = z.clone();
        elu_in_place(&mut v);
        for (a, &x) in v.iter().zip(&z) {
            assert_eq!(*a, if x > 0.0 { x } else { expm1(x) });
        }
        let mut g = vec![2.0; z.len()];
        elu_backward_from_output(&mut g, &v);
        for (a, &x) in g.iter().zip(&z) {
            assert_eq!(*a, if x > 0.0 { 2.0 } else { 2.0 * (expm1(x) + 1.0) });
        }
        let mut s = vec![0.0; z.len()];
        sin_from(&mut s, &z);
        let mut g = vec![3.0; z.len()];
        cos_mul_in_place(&mut g, &z);
        for i in 0..z.len() {
            assert_eq!(s[i], sin(z[i]));
            assert_eq!(g[i], 3.0 * cos(z[i]));
        }
    }

    #[test]
    fn dispatch_paths_agree() {
        let z: Vec<f64> = (0..517).map(|i| -20.0 + 0.07 * i as f64).collect();
        let (mut a, mut b) = (z.clone(), z.clone());
        elu_base(&mut a);
        elu_in_place(&mut b);
        assert_eq!(a, b);
        let (mut a, mut b) = (vec![0.0; z.len()], vec![0.0; z.len()]);
        sin_from_base(&mut a, &z);
        sin_from(&mut b, &z);
        assert_eq!(a, b);
        let mut c = z.clone();
        sin_in_place(&mut c);
        assert_eq!(a, c);
    }
}
