//! Scalar abstraction shared by the numerical modules, plus the normal
//! distribution special functions they depend on.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FloatConst, FromPrimitive, NumAssign, ToPrimitive};

/// Floating point scalar the pricing and accounting code is generic over.
///
/// Implemented for `f32` and `f64`.
pub trait Real:
    Float
    + FloatConst
    + FromPrimitive
    + ToPrimitive
    + NumAssign
    + Sum
    + Default
    + Debug
    + Display
    + Send
    + Sync
    + 'static
{
    /// Converts an `f64` literal into this scalar.
    #[inline]
    fn lit(x: f64) -> Self {
        Self::from_f64(x).expect("f64 literal representable")
    }

    #[inline]
    fn as_f64(self) -> f64 {
        self.to_f64().expect("scalar converts to f64")
    }
}

impl Real for f32 {}
impl Real for f64 {}

#[inline]
fn poly<F: Real>(coeffs: &[f64], x: F) -> F {
    coeffs
        .iter()
        .rev()
        .fold(F::zero(), |acc, &c| acc * x + F::lit(c))
}

// exp(-y^2) split as exp(-a^2) * exp(-(y-a)(y+a)) with a = trunc(16y)/16,
// which keeps the relative error of the Gaussian factor at machine level.
#[inline]
fn exp_neg_sq<F: Real>(y: F) -> F {
    let sixteen = F::lit(16.0);
    let a = (y * sixteen).trunc() / sixteen;
    let del = (y - a) * (y + a);
    (-a * a).exp() * (-del).exp()
}

/// Complementary error function (Cody's rational Chebyshev approximations).
pub fn erfc<F: Real>(x: F) -> F {
    const A: [f64; 5] = [
        3.161_123_743_870_565_6e0,
        1.138_641_541_510_501_6e2,
        3.774_852_376_853_020_2e2,
        3.209_377_589_138_469_5e3,
        1.857_777_061_846_031_5e-1,
    ];
    const B: [f64; 4] = [
        2.360_129_095_234_412e1,
        2.440_246_379_344_441_7e2,
        1.282_616_526_077_372_3e3,
        2.844_236_833_439_170_6e3,
    ];
    const C: [f64; 9] = [
        5.641_884_969_886_701e-1,
        8.883_149_794_388_376e0,
        6.611_919_063_714_163e1,
        2.986_351_381_974_001_3e2,
        8.819_522_212_417_691e2,
        1.712_047_612_634_070_6e3,
        2.051_078_377_826_071_5e3,
        1.230_339_354_797_997_2e3,
        2.153_115_354_744_038_5e-8,
    ];
    const D: [f64; 8] = [
        1.574_492_611_070_983_5e1,
        1.176_939_508_913_125e2,
        5.371_811_018_620_099e2,
        1.621_389_574_566_690_2e3,
        3.290_799_235_733_459_7e3,
        4.362_619_090_143_247e3,
        3.439_367_674_143_721_6e3,
        1.230_339_354_803_749_4e3,
    ];
    const P: [f64; 6] = [
        3.053_266_349_612_323_4e-1,
        3.603_448_999_498_044_4e-1,
        1.257_817_261_112_292_5e-1,
        1.608_378_514_874_227_7e-2,
        6.587_491_615_298_378e-4,
        1.631_538_713_730_209_8e-2,
    ];
    const Q: [f64; 5] = [
        2.568_520_192_289_822_4e0,
        1.872_952_849_923_467_3e0,
        5.279_051_029_514_284e-1,
        6.051_834_131_244_132e-2,
        2.335_204_976_268_691_8e-3,
    ];

    if x.is_nan() {
        return x;
    }
    let y = x.abs();
    let result = if y <= F::lit(0.46875) {
        let ysq = y * y;
        let mut num = F::lit(A[4]) * ysq;
        let mut den = ysq;
        for i in 0..3 {
            num = (num + F::lit(A[i])) * ysq;
            den = (den + F::lit(B[i])) * ysq;
        }
        let erf = x * (num + F::lit(A[3])) / (den + F::lit(B[3]));
        return F::one() - erf;
    } else if y <= F::lit(4.0) {
        let mut num = F::lit(C[8]) * y;
        let mut den = y;
        for i in 0..7 {
            num = (num + F::lit(C[i])) * y;
            den = (den + F::lit(D[i])) * y;
        }
        (num + F::lit(C[7])) / (den + F::lit(D[7])) * exp_neg_sq(y)
    } else if y >= F::lit(26.7) {
        F::zero()
    } else {
        let ysq = F::one() / (y * y);
        let mut num = F::lit(P[5]) * ysq;
        let mut den = ysq;
        for i in 0..4 {
            num = (num + F::lit(P[i])) * ysq;
            den = (den + F::lit(Q[i])) * ysq;
        }
        let r = ysq * (num + F::lit(P[4])) / (den + F::lit(Q[4]));
        let frac_1_sqrt_pi = F::FRAC_2_SQRT_PI() / F::lit(2.0);
        (frac_1_sqrt_pi - r) / y * exp_neg_sq(y)
    };
    if x < F::zero() {
        F::lit(2.0) - result
    } else {
        result
    }
}

/// Standard normal cumulative distribution function.
#[inline]
pub fn norm_cdf<F: Real>(x: F) -> F {
    F::lit(0.5) * erfc(-x / F::SQRT_2())
}

/// Standard normal density.
#[inline]
pub fn norm_pdf<F: Real>(x: F) -> F {
    let inv_sqrt_2pi = F::lit(0.398_942_280_401_432_7);
    inv_sqrt_2pi * (-F::lit(0.5) * x * x).exp()
}

/// Inverse of the standard normal CDF (Wichura's AS241, PPND16).
///
/// Returns `-inf`/`+inf` at the endpoints and NaN outside `[0, 1]`.
pub fn norm_inv_cdf(p: f64) -> f64 {
    const A: [f64; 8] = [
        3.387_132_872_796_366_5,
        1.331_416_678_917_843_8e2,
        1.971_590_950_306_551_3e3,
        1.373_169_376_550_946e4,
        4.592_195_393_154_987e4,
        6.726_577_092_700_87e4,
        3.343_057_558_358_813e4,
        2.509_080_928_730_122_7e3,
    ];
    const B: [f64; 8] = [
        1.0,
        4.231_333_070_160_091e1,
        6.871_870_074_920_579e2,
        5.394_196_021_424_751e3,
        2.121_379_430_158_659_7e4,
        3.930_789_580_009_271e4,
        2.872_908_573_572_194_3e4,
        5.226_495_278_852_546e3,
    ];
    const C: [f64; 8] = [
        1.423_437_110_749_683_5,
        4.630_337_846_156_545,
        5.769_497_221_460_691,
        3.647_848_324_763_204_5,
        1.270_458_252_452_368_4,
        2.417_807_251_774_506e-1,
        2.272_384_498_926_918_4e-2,
        7.745_450_142_783_414e-4,
    ];
    const D: [f64; 8] = [
        1.0,
        2.053_191_626_637_759,
        1.676_384_830_183_803_8,
        6.897_673_349_851e-1,
        1.481_039_764_274_800_8e-1,
        1.519_866_656_361_645_7e-2,
        5.475_938_084_995_345e-4,
        1.050_750_071_644_416_9e-9,
    ];
    const E: [f64; 8] = [
        6.657_904_643_501_103,
        5.463_784_911_164_114,
        1.784_826_539_917_291_3,
        2.965_605_718_285_049e-1,
        2.653_218_952_657_612_4e-2,
        1.242_660_947_388_078_4e-3,
        2.711_555_568_743_487_6e-5,
        2.010_334_399_292_288_1e-7,
    ];
    const F: [f64; 8] = [
        1.0,
        5.998_322_065_558_88e-1,
        1.369_298_809_227_358e-1,
        1.487_536_129_085_061_5e-2,
        7.868_691_311_456_133e-4,
        1.846_318_317_510_054_8e-5,
        1.421_511_758_316_446e-7,
        2.044_263_103_389_939_7e-15,
    ];

    if p.is_nan() || !(0.0..=1.0).contains(&p) {
        return f64::NAN;
    }
    if p == 0.0 {
        return f64::NEG_INFINITY;
    }
    if p == 1.0 {
        return f64::INFINITY;
    }
    let q = p - 0.5;
    if q.abs() <= 0.425 {
        let r = 0.180625 - q * q;
        return q * poly(&A, r) / poly(&B, r);
    }
    let tail = if q < 0.0 { p } else { 1.0 - p };
    let mut r = (-tail.ln()).sqrt();
    let val = if r <= 5.0 {
        r -= 1.6;
        poly(&C, r) / poly(&D, r)
    } else {
        r -= 5.0;
        poly(&E, r) / poly(&F, r)
    };
    if q < 0.0 {
        -val
    } else {
        val
    }
}
