//! Modified Bessel functions of the first kind, orders one and two.

use crate::error::{Error, Result};

const SERIES_LIMIT: f64 = 15.0;
const OVERFLOW_LIMIT: f64 = 700.0;

/// Power series `sum (y/2)^(2k+n) / (k! (k+n)!)`, accurate for moderate `y`.
fn series(order: u32, y: f64) -> f64 {
    let h = 0.5 * y;
    let h2 = h * h;
    let n = order as f64;
    let mut term = h.powi(order as i32) / (1..=order).product::<u32>() as f64;
    let mut sum = term;
    if sum == 0.0 {
        return 0.0;
    }
    let mut k = 0.0;
    loop {
        k += 1.0;
        term *= h2 / (k * (k + n));
        sum += term;
        if term <= sum * 1e-17 {
            break;
        }
    }
    sum
}

/// `I_n(y) e^{-y}` from the large-argument expansion
/// `1/sqrt(2 pi y) * sum_k (-1)^k a_k(n) / y^k`, truncated at its smallest term.
fn scaled_asymptotic(order: u32, y: f64) -> f64 {
    let mu = 4.0 * (order * order) as f64;
    let mut term = 1.0;
    let mut sum = 1.0;
    let mut k = 1.0f64;
    loop {
        let odd = 2.0 * k - 1.0;
        let next = -term * (mu - odd * odd) / (k * 8.0 * y);
        if next.abs() >= term.abs() || k > 60.0 {
            break;
        }
        term = next;
        sum += term;
        if term.abs() < 1e-17 * sum.abs() {
            break;
        }
        k += 1.0;
    }
    sum / (2.0 * std::f64::consts::PI * y).sqrt()
}

fn scaled(order: u32, y: f64) -> Result<f64> {
    if y.is_nan() || y < 0.0 {
        return Err(Error::Domain {
            what: "Bessel argument must be nonnegative",
            point: y,
        });
    }
    if y < SERIES_LIMIT {
        Ok(series(order, y) * (-y).exp())
    } else {
        Ok(scaled_asymptotic(order, y))
    }
}

/// `I1(y) e^{-y}` for `y >= 0`; finite for every argument.
pub fn bessel_i1_scaled(y: f64) -> Result<f64> {
    scaled(1, y)
}

/// `I2(y) e^{-y}` for `y >= 0`.
pub fn bessel_i2_scaled(y: f64) -> Result<f64> {
    scaled(2, y)
}

/// `I1(y)` for `0 <= y <= 700`; larger arguments report overflow.
pub fn bessel_i1(y: f64) -> Result<f64> {
    if y > OVERFLOW_LIMIT {
        return Err(Error::Overflow(y));
    }
    if (0.0..SERIES_LIMIT).contains(&y) {
        return Ok(series(1, y));
    }
    Ok(bessel_i1_scaled(y)? * y.exp())
}

/// `ln Gamma(x)`.
pub fn ln_gamma(x: f64) -> f64 {
    statrs::function::gamma::ln_gamma(x)
}

pub fn erf(x: f64) -> f64 {
    statrs::function::erf::erf(x)
}
