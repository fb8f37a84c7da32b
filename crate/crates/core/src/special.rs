//! Gamma, digamma and trigamma for real arguments.

use std::f64::consts::PI;

use crate::error::{Error, Result};

// Lanczos approximation with g = 7, n = 9.
const LANCZOS_G: f64 = 7.0;
const LANCZOS: [f64; 9] = [
    0.999_999_999_999_809_93,
    676.520_368_121_885_1,
    -1_259.139_216_722_402_8,
    771.323_428_777_653_13,
    -176.615_029_162_140_59,
    12.507_343_278_686_905,
    -0.138_571_095_265_720_12,
    9.984_369_578_019_571_6e-6,
    1.505_632_735_149_311_6e-7,
];

// Positive root of digamma, split into two doubles.
const DIGAMMA_ROOT_HI: f64 = 1.461_632_144_968_362_2;
const DIGAMMA_ROOT_LO: f64 = 9.549_995_429_965_697e-17;
// Taylor coefficients of digamma about its root, psi^(k)(x0) / k!.
const DIGAMMA_ROOT_SERIES: [f64; 12] = [
    0.967_672_245_447_621_2,
    -0.442_763_168_983_592_1,
    0.258_499_760_955_651_,
    -0.163_942_705_442_406_53,
    0.107_824_050_691_262_37,
    -0.072_199_561_256_454_71,
    0.048_804_288_164_143_107,
    -0.033_161_126_474_847_36,
    0.022_597_648_232_218_105,
    -0.015_424_765_904_948_959,
    0.010_538_791_616_612_175,
    -0.007_204_534_386_356_868,
];
const DIGAMMA_ROOT_RADIUS: f64 = 0.03;

/// Shift target for the asymptotic series.
const ASYMPTOTIC_START: f64 = 10.0;

fn is_nonpositive_integer(x: f64) -> bool {
    x <= 0.0 && x == x.floor()
}

pub fn gamma(x: f64) -> Result<f64> {
    if x.is_nan() || is_nonpositive_integer(x) {
        return Err(Error::DomainError(format!("gamma({x}) is undefined")));
    }
    let v = if x < 0.5 {
        PI / ((PI * x).sin() * gamma(1.0 - x)?)
    } else {
        let z = x - 1.0;
        let mut t = LANCZOS[0];
        for (i, c) in LANCZOS.iter().enumerate().skip(1) {
            t += c / (z + i as f64);
        }
        let w = z + LANCZOS_G + 0.5;
        (2.0 * PI).sqrt() * w.powf(0.5 * (z + 0.5)) * (-w).exp() * w.powf(0.5 * (z + 0.5)) * t
    };
    if !v.is_finite() {
        return Err(Error::DomainError(format!("gamma({x}) overflows")));
    }
    Ok(v)
}

pub fn digamma(x: f64) -> Result<f64> {
    if x.is_nan() || is_nonpositive_integer(x) {
        return Err(Error::DomainError(format!("digamma({x}) is undefined")));
    }
    if x < 0.5 {
        // psi(1 - x) - psi(x) = pi cot(pi x)
        return Ok(digamma(1.0 - x)? - PI / (PI * x).tan());
    }
    let h = (x - DIGAMMA_ROOT_HI) - DIGAMMA_ROOT_LO;
    if h.abs() < DIGAMMA_ROOT_RADIUS {
        let mut acc = 0.0;
        for c in DIGAMMA_ROOT_SERIES.iter().rev() {
            acc = acc * h + c;
        }
        return Ok(acc * h);
    }
    let mut z = x;
    let mut shift = 0.0;
    while z < ASYMPTOTIC_START {
        shift += 1.0 / z;
        z += 1.0;
    }
    let r = 1.0 / (z * z);
    let series = r
        * (1.0 / 12.0
            - r * (1.0 / 120.0
                - r * (1.0 / 252.0
                    - r * (1.0 / 240.0 - r * (1.0 / 132.0 - r * (691.0 / 32_760.0 - r / 12.0))))));
    Ok(z.ln() - 0.5 / z - series - shift)
}

pub fn trigamma(x: f64) -> Result<f64> {
    if x.is_nan() || is_nonpositive_integer(x) {
        return Err(Error::DomainError(format!("trigamma({x}) is undefined")));
    }
    if x < 0.5 {
        // psi'(1 - x) + psi'(x) = pi^2 / sin^2(pi x)
        let s = (PI * x).sin();
        return Ok(PI * PI / (s * s) - trigamma(1.0 - x)?);
    }
    let mut z = x;
    let mut shift = 0.0;
    while z < ASYMPTOTIC_START {
        shift += 1.0 / (z * z);
        z += 1.0;
    }
    let r = 1.0 / (z * z);
    let series = 1.0 / z
        + 0.5 * r
        + r / z
            * (1.0 / 6.0
                - r * (1.0 / 30.0
                    - r * (1.0 / 42.0
                        - r * (1.0 / 30.0 - r * (5.0 / 66.0 - r * (691.0 / 2730.0 - r * 7.0 / 6.0))))));
    Ok(series + shift)
}

/// (Gamma(x), digamma(x), trigamma(x)) for x > 0.
pub fn gamma_family(x: f64) -> Result<(f64, f64, f64)> {
    if !(x > 0.0) {
        return Err(Error::DomainError(format!("gamma_family requires x > 0, got {x}")));
    }
    Ok((gamma(x)?, digamma(x)?, trigamma(x)?))
}
