//! Univariate standard normal CDF, quantile, and density.
//!
//! The quantile function is Wichura's AS 241 (PPND16) rational
//! approximation, accurate to roughly 1e-15 over the full range. Both
//! functions saturate in the extreme tails instead of returning 0/1 or
//! +/-inf so that downstream logs and differences stay finite.

use libm::erfc;

/// Saturation bound for `phi_inv` at p in {0, 1}.
pub const PHI_INV_CLAMP: f64 = 8.0;
/// Tail probability floor used when differencing CDF values.
pub const TAIL_FLOOR: f64 = 1e-15;

const FRAC_1_SQRT_2: f64 = std::f64::consts::FRAC_1_SQRT_2;

/// Standard normal CDF.
#[inline]
pub fn phi(x: f64) -> f64 {
    0.5 * erfc(-x * FRAC_1_SQRT_2)
}

/// Standard normal CDF clamped to [TAIL_FLOOR, 1 - TAIL_FLOOR].
///
/// Evaluations outside +/-8 are saturated so CDF differences over
/// extreme boxes never produce an exact zero.
#[inline]
pub fn phi_clamped(x: f64) -> f64 {
    if x <= -PHI_INV_CLAMP {
        TAIL_FLOOR
    } else if x >= PHI_INV_CLAMP {
        1.0 - TAIL_FLOOR
    } else {
        phi(x).clamp(TAIL_FLOOR, 1.0 - TAIL_FLOOR)
    }
}

/// Standard normal density.
#[inline]
pub fn dnorm(x: f64) -> f64 {
    const INV_SQRT_2PI: f64 = 0.398_942_280_401_432_7;
    INV_SQRT_2PI * (-0.5 * x * x).exp()
}

/// Standard normal quantile (AS 241, PPND16).
///
/// `p` outside (0, 1) saturates at +/-8 rather than erroring.
pub fn phi_inv(p: f64) -> f64 {
    if p <= 0.0 {
        return -PHI_INV_CLAMP;
    }
    if p >= 1.0 {
        return PHI_INV_CLAMP;
    }
    let q = p - 0.5;
    if q.abs() <= 0.425 {
        let r = 0.180625 - q * q;
        return q * poly(&A, r) / poly(&B, r);
    }
    let mut r = if q < 0.0 { p } else { 1.0 - p };
    r = (-r.ln()).sqrt();
    let x = if r <= 5.0 {
        let r = r - 1.6;
        poly(&C, r) / poly(&D, r)
    } else {
        let r = r - 5.0;
        poly(&E, r) / poly(&F, r)
    };
    let x = if q < 0.0 { -x } else { x };
    x.clamp(-PHI_INV_CLAMP, PHI_INV_CLAMP)
}

#[inline]
fn poly(c: &[f64; 8], x: f64) -> f64 {
    // Horner, highest coefficient last in the arrays below.
    c.iter().rev().fold(0.0, |acc, &ci| acc * x + ci)
}

const A: [f64; 8] = [
    3.387_132_872_796_366_608e0,
    1.331_416_678_917_843_774_5e2,
    1.971_590_950_306_551_442_7e3,
    1.373_169_376_550_946_112_5e4,
    4.592_195_393_154_987_145_7e4,
    6.726_577_092_700_870_085_3e4,
    3.343_057_558_358_812_810_5e4,
    2.509_080_928_730_122_672_7e3,
];
const B: [f64; 8] = [
    1.0,
    4.231_333_070_160_091_125_2e1,
    6.871_870_074_920_579_083e2,
    5.394_196_021_424_751_107_7e3,
    2.121_379_430_158_659_586_7e4,
    3.930_789_580_009_271_061e4,
    2.872_908_573_572_194_267_4e4,
    5.226_495_278_852_854_561e3,
];
const C: [f64; 8] = [
    1.423_437_110_749_683_577_34e0,
    4.630_337_846_156_545_295_9e0,
    5.769_497_221_460_691_405_5e0,
    3.647_848_324_763_204_605_04e0,
    1.270_458_252_452_368_382_58e0,
    2.417_807_251_774_506_117_7e-1,
    2.272_384_498_926_918_458_33e-2,
    7.745_450_142_783_414_076_4e-4,
];
const D: [f64; 8] = [
    1.0,
    2.053_191_626_637_758_821_87e0,
    1.676_384_830_183_803_849_4e0,
    6.897_673_349_851_000_045_5e-1,
    1.481_039_764_274_800_745_9e-1,
    1.519_866_656_361_645_719_66e-2,
    5.475_938_084_995_344_946e-4,
    1.050_750_071_644_416_843_24e-9,
];
const E: [f64; 8] = [
    6.657_904_643_501_103_777_2e0,
    5.463_784_911_164_114_369_9e0,
    1.784_826_539_917_291_335_8e0,
    2.965_605_718_285_048_912_3e-1,
    2.653_218_952_657_612_309_3e-2,
    1.242_660_947_388_078_438_6e-3,
    2.711_555_568_743_487_578_15e-5,
    2.010_334_399_292_288_132_65e-7,
];
const F: [f64; 8] = [
    1.0,
    5.998_322_065_558_879_376_9e-1,
    1.369_298_809_227_358_053_1e-1,
    1.487_536_129_085_061_485_25e-2,
    7.868_691_311_456_132_591e-4,
    1.846_318_317_510_054_681_8e-5,
    1.421_511_758_316_445_888_7e-7,
    2.044_263_103_389_939_785_64e-15,
];
