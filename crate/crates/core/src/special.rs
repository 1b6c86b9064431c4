//! Bessel functions of the first and second kind, orders 0 and 1, for real
//! arguments, and the Hankel functions of the first kind built from them.
//!
//! Three regimes are used:
//!
//! * `x < 2`: ascending power series (no cancellation in this range).
//! * `2 <= x < 25`: Miller's backward recurrence for `J_n`, normalized with
//!   `J_0 + 2 sum J_2k = 1`; `Y_0`, `Y_1` follow from Neumann's expansions in
//!   the same `J_n` sequence.
//! * `x >= 25`: Hankel's asymptotic expansion truncated at its smallest term.

use std::f64::consts::{FRAC_2_PI, FRAC_PI_4, PI};

use num_complex::Complex64;

use crate::error::{Error, Result};

const EULER_GAMMA: f64 = 0.577_215_664_901_532_9;
// 2/pi - FRAC_2_PI
const FRAC_2_PI_LO: f64 = -3.935_735_335_036_497_5e-17;
const SERIES_LIMIT: f64 = 2.0;
const ASYMPTOTIC_LIMIT: f64 = 25.0;

/// Order of a Bessel or Hankel function. Only orders 0 and 1 are needed by the
/// Green's operators.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Order {
    Zero,
    One,
}

impl TryFrom<u32> for Order {
    type Error = Error;

    fn try_from(n: u32) -> Result<Self> {
        match n {
            0 => Ok(Order::Zero),
            1 => Ok(Order::One),
            _ => Err(Error::Domain(format!("unsupported Bessel order {n}"))),
        }
    }
}

/// `J_order(x)` for `x >= 0`.
pub fn bessel_j(order: Order, x: f64) -> Result<f64> {
    if !x.is_finite() || x < 0.0 {
        return Err(Error::Domain(format!("bessel_j requires finite x >= 0, got {x}")));
    }
    let (j0, j1) = j01(x);
    Ok(match order {
        Order::Zero => j0,
        Order::One => j1,
    })
}

/// `Y_order(x)` for `x > 0`. The logarithmic singularity at 0 is a domain error.
pub fn bessel_y(order: Order, x: f64) -> Result<f64> {
    check_positive("bessel_y", x)?;
    let (_, _, y0, y1) = jy01(x);
    Ok(match order {
        Order::Zero => y0,
        Order::One => y1,
    })
}

/// `H^(1)_order(x) = J_order(x) + i Y_order(x)` for `x > 0`.
pub fn hankel1(order: Order, x: f64) -> Result<Complex64> {
    check_positive("hankel1", x)?;
    let (j0, j1, y0, y1) = jy01(x);
    Ok(match order {
        Order::Zero => Complex64::new(j0, y0),
        Order::One => Complex64::new(j1, y1),
    })
}

/// Both Hankel functions at once; the operator assembly needs `H0` at many
/// distances and this avoids recomputing the shared recurrence.
pub fn hankel1_both(x: f64) -> Result<(Complex64, Complex64)> {
    check_positive("hankel1", x)?;
    let (j0, j1, y0, y1) = jy01(x);
    Ok((Complex64::new(j0, y0), Complex64::new(j1, y1)))
}

fn check_positive(name: &str, x: f64) -> Result<()> {
    if !x.is_finite() || x <= 0.0 {
        return Err(Error::Domain(format!("{name} requires finite x > 0, got {x}")));
    }
    Ok(())
}

fn j01(x: f64) -> (f64, f64) {
    if x < SERIES_LIMIT {
        (series_j0(x), series_j1(x))
    } else if x < ASYMPTOTIC_LIMIT {
        let seq = MillerSequence::new(x);
        (seq.j[0], seq.j[1])
    } else {
        let (j0, _) = asymptotic(0.0, x);
        let (j1, _) = asymptotic(1.0, x);
        (j0, j1)
    }
}

fn jy01(x: f64) -> (f64, f64, f64, f64) {
    if x < SERIES_LIMIT {
        let j0 = series_j0(x);
        let j1 = series_j1(x);
        (j0, j1, series_y0(x, j0), series_y1(x, j1))
    } else if x < ASYMPTOTIC_LIMIT {
        let seq = MillerSequence::new(x);
        let (y0, y1) = seq.neumann_y01();
        (seq.j[0], seq.j[1], y0, y1)
    } else {
        let (j0, y0) = asymptotic(0.0, x);
        let (j1, y1) = asymptotic(1.0, x);
        (j0, j1, y0, y1)
    }
}

fn series_j0(x: f64) -> f64 {
    let q = -0.25 * x * x;
    let mut term = 1.0;
    let mut sum = 1.0;
    for k in 1..40 {
        term *= q / (k * k) as f64;
        sum += term;
        if term.abs() < 1e-18 * sum.abs() {
            break;
        }
    }
    sum
}

fn series_j1(x: f64) -> f64 {
    let q = -0.25 * x * x;
    let mut term = 0.5 * x;
    let mut sum = term;
    for k in 1..40 {
        term *= q / (k * (k + 1)) as f64;
        sum += term;
        if term.abs() < 1e-18 * sum.abs() {
            break;
        }
    }
    sum
}

// Y0 = (2/pi)(ln(x/2) + gamma) J0 + (2/pi) sum_{k>=1} (-1)^(k+1) H_k (x^2/4)^k / (k!)^2
fn series_y0(x: f64, j0: f64) -> f64 {
    let q = 0.25 * x * x;
    let mut term = 1.0;
    let mut harmonic = 0.0;
    let mut sum = 0.0;
    for k in 1..40 {
        let kf = k as f64;
        term *= -q / (kf * kf);
        harmonic += 1.0 / kf;
        let contrib = -term * harmonic;
        sum += contrib;
        if contrib.abs() < 1e-18 * sum.abs().max(1e-300) {
            break;
        }
    }
    (2.0 / PI) * (((0.5 * x).ln() + EULER_GAMMA) * j0 + sum)
}

// Y1 = -2/(pi x) + (2/pi) ln(x/2) J1
//      - (1/pi) sum_{k>=0} (-1)^k (psi(k+1) + psi(k+2)) (x/2)^(2k+1) / (k! (k+1)!)
fn series_y1(x: f64, j1: f64) -> f64 {
    let half = 0.5 * x;
    let q = -half * half;
    let mut term = half;
    // psi(1) = -gamma, psi(2) = 1 - gamma
    let mut psi_k1 = -EULER_GAMMA;
    let mut psi_k2 = 1.0 - EULER_GAMMA;
    let mut sum = term * (psi_k1 + psi_k2);
    for k in 1..40 {
        let kf = k as f64;
        term *= q / (kf * (kf + 1.0));
        psi_k1 += 1.0 / kf;
        psi_k2 += 1.0 / (kf + 1.0);
        let contrib = term * (psi_k1 + psi_k2);
        sum += contrib;
        if contrib.abs() < 1e-18 * sum.abs() {
            break;
        }
    }
    // 2/(pi x) dominates for tiny x; carry its rounding error separately so
    // the sum stays within half an ulp.
    let lead = FRAC_2_PI / x;
    let remainder = (-lead).mul_add(x, FRAC_2_PI) + FRAC_2_PI_LO;
    ((2.0 / PI) * half.ln() * j1 - sum / PI - remainder / x) - lead
}

/// Normalized `J_0 ..= J_n` from downward recurrence.
struct MillerSequence {
    x: f64,
    j: Vec<f64>,
}

impl MillerSequence {
    fn new(x: f64) -> Self {
        // Start well above x so that the dominant solution has swamped the
        // recessive one by the time the recurrence reaches low orders.
        let mut start = (x + 20.0 + 6.0 * x.sqrt()) as usize;
        start += start % 2;
        let mut j = vec![0.0; start + 2];
        j[start] = 1e-30;
        for k in (1..=start).rev() {
            j[k - 1] = 2.0 * k as f64 / x * j[k] - j[k + 1];
            if j[k - 1].abs() > 1e250 {
                for v in j[k - 1..].iter_mut() {
                    *v *= 1e-250;
                }
            }
        }
        let norm = j[0] + 2.0 * j.iter().skip(2).step_by(2).sum::<f64>();
        for v in j.iter_mut() {
            *v /= norm;
        }
        MillerSequence { x, j }
    }

    // Y0 = (2/pi)[(ln(x/2)+gamma) J0 - 2 sum_{k>=1} (-1)^k J_2k / k]
    // Y1 = -2 J0/(pi x) + (2/pi)[(ln(x/2)+gamma-1) J1 - sum_{k>=1} (-1)^k (2k+1) J_{2k+1} / (k(k+1))]
    fn neumann_y01(&self) -> (f64, f64) {
        let log_term = (0.5 * self.x).ln() + EULER_GAMMA;
        let j = &self.j;
        let mut even = 0.0;
        let mut odd = 0.0;
        let mut k = 1usize;
        while 2 * k + 1 < j.len() {
            let sign = if k % 2 == 0 { 1.0 } else { -1.0 };
            let kf = k as f64;
            even += sign * j[2 * k] / kf;
            odd += sign * (2.0 * kf + 1.0) * j[2 * k + 1] / (kf * (kf + 1.0));
            k += 1;
        }
        let y0 = (2.0 / PI) * (log_term * j[0] - 2.0 * even);
        let y1 = -2.0 * j[0] / (PI * self.x) + (2.0 / PI) * ((log_term - 1.0) * j[1] - odd);
        (y0, y1)
    }
}

/// Hankel asymptotic expansion; returns `(J_nu(x), Y_nu(x))`.
fn asymptotic(nu: f64, x: f64) -> (f64, f64) {
    let mu = 4.0 * nu * nu;
    let eight_x = 8.0 * x;
    let mut p = 1.0;
    let mut q = 0.0;
    // a_k / (8x)^k, built incrementally: term_k = term_{k-1} * (mu - (2k-1)^2) / (k 8x)
    let mut term = 1.0;
    let mut last = f64::INFINITY;
    for k in 1..60 {
        let odd = (2 * k - 1) as f64;
        let next = term * (mu - odd * odd) / (k as f64 * eight_x);
        if next.abs() >= last || next == 0.0 {
            break;
        }
        last = next.abs();
        term = next;
        // k odd -> Q, signs alternate in pairs: Q gets +,-,+..., P gets -,+,...
        match k % 4 {
            1 => q += term,
            2 => p -= term,
            3 => q -= term,
            _ => p += term,
        }
        if last < 1e-17 {
            break;
        }
    }
    let phase = x - (0.5 * nu + 0.5) * PI + FRAC_PI_4;
    let (s, c) = phase.sin_cos();
    let amp = (2.0 / (PI * x)).sqrt();
    (amp * (p * c - q * s), amp * (p * s + q * c))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn values_at_zero() {
        assert_eq!(bessel_j(Order::Zero, 0.0).unwrap(), 1.0);
        assert_eq!(bessel_j(Order::One, 0.0).unwrap(), 0.0);
    }

    #[test]
    fn reference_values_at_one() {
        assert!((bessel_j(Order::Zero, 1.0).unwrap() - 0.7651976865579666).abs() < 1e-15);
        assert!((bessel_y(Order::Zero, 1.0).unwrap() - 0.08825696421567698).abs() < 1e-15);
        assert!((bessel_y(Order::One, 1.0).unwrap() + 0.7812128213002887).abs() < 1e-15);
        let h = hankel1(Order::Zero, 1.0).unwrap();
        assert!((h.re - 0.76519769).abs() < 1e-8);
        assert!((h.im - 0.08825696).abs() < 1e-8);
    }

    #[test]
    fn domain_errors() {
        assert!(bessel_y(Order::Zero, 0.0).is_err());
        assert!(bessel_y(Order::One, -1.0).is_err());
        assert!(hankel1(Order::Zero, 0.0).is_err());
        assert!(bessel_j(Order::Zero, f64::NAN).is_err());
        assert!(bessel_j(Order::One, f64::INFINITY).is_err());
        assert!(Order::try_from(2).is_err());
    }

    #[test]
    fn regimes_agree_at_switch_points() {
        for &x in &[SERIES_LIMIT, ASYMPTOTIC_LIMIT] {
            let below = jy01(x * (1.0 - 1e-15));
            let above = jy01(x);
            assert!((below.0 - above.0).abs() < 1e-12);
            assert!((below.1 - above.1).abs() < 1e-12);
            assert!((below.2 - above.2).abs() < 1e-11);
            assert!((below.3 - above.3).abs() < 1e-11);
        }
    }

    #[test]
    fn hankel_magnitude_matches_asymptotic_envelope() {
        let x = 40.0;
        let mag = hankel1(Order::Zero, x).unwrap().norm();
        let env = (2.0 / (PI * x)).sqrt();
        assert!((mag / env - 1.0).abs() < 0.01);
    }
}
