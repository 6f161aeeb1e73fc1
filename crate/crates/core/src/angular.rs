//! Wigner 3-j symbols and the Clebsch–Gordan coefficients built from them.

use std::fmt;

use crate::error::{Error, Result};

/// Exact half-integer, stored as twice its value.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct HalfInt(i32);

impl HalfInt {
    pub const ZERO: HalfInt = HalfInt(0);

    pub const fn from_twice(twice: i32) -> Self {
        HalfInt(twice)
    }

    pub const fn integer(n: i32) -> Self {
        HalfInt(2 * n)
    }

    pub fn from_f64(x: f64) -> Result<Self> {
        let t = 2.0 * x;
        if !t.is_finite() || t.round() != t || t.abs() > i32::MAX as f64 {
            return Err(Error::MalformedAngularMomentum(format!("{x} is not a half-integer")));
        }
        Ok(HalfInt(t as i32))
    }

    pub const fn twice(self) -> i32 {
        self.0
    }

    pub fn value(self) -> f64 {
        self.0 as f64 / 2.0
    }

    pub fn is_integer(self) -> bool {
        self.0 % 2 == 0
    }
}

impl std::ops::Neg for HalfInt {
    type Output = HalfInt;
    fn neg(self) -> HalfInt {
        HalfInt(-self.0)
    }
}

impl std::ops::Add for HalfInt {
    type Output = HalfInt;
    fn add(self, rhs: HalfInt) -> HalfInt {
        HalfInt(self.0 + rhs.0)
    }
}

impl std::ops::Sub for HalfInt {
    type Output = HalfInt;
    fn sub(self, rhs: HalfInt) -> HalfInt {
        HalfInt(self.0 - rhs.0)
    }
}

impl fmt::Display for HalfInt {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.is_integer() {
            write!(f, "{}", self.0 / 2)
        } else {
            write!(f, "{}/2", self.0)
        }
    }
}

fn factorial(n: i32) -> f64 {
    debug_assert!(n >= 0);
    (2..=n).fold(1.0, |acc, k| acc * k as f64)
}

fn check_pair(j: HalfInt, m: HalfInt) -> Result<()> {
    if j.0 < 0 {
        return Err(Error::MalformedAngularMomentum(format!("negative j = {j}")));
    }
    if m.0.abs() > j.0 {
        return Err(Error::MalformedAngularMomentum(format!("|m| = |{m}| exceeds j = {j}")));
    }
    if (j.0 - m.0) % 2 != 0 {
        return Err(Error::MalformedAngularMomentum(format!(
            "j = {j} and m = {m} differ by a half-integer"
        )));
    }
    Ok(())
}

/// Wigner 3-j symbol by the Racah sum.
///
/// Returns exactly `0.0` when `m1 + m2 + m3 ≠ 0` or the triangle condition fails.
pub fn wigner_3j(
    j1: HalfInt,
    j2: HalfInt,
    j3: HalfInt,
    m1: HalfInt,
    m2: HalfInt,
    m3: HalfInt,
) -> Result<f64> {
    check_pair(j1, m1)?;
    check_pair(j2, m2)?;
    check_pair(j3, m3)?;
    if m1.0 + m2.0 + m3.0 != 0 {
        return Ok(0.0);
    }
    let (a, b, c) = (j1.0, j2.0, j3.0);
    if (a + b + c) % 2 != 0 || c > a + b || c < (a - b).abs() {
        return Ok(0.0);
    }
    // everything below is in units of 1 after halving twice-values
    let h = |x: i32| x / 2;
    let t1 = h(c - b + m1.0);
    let t2 = h(c - a - m2.0);
    let t3 = h(a + b - c);
    let t4 = h(a - m1.0);
    let t5 = h(b + m2.0);
    let k_min = 0.max(-t1).max(-t2);
    let k_max = t3.min(t4).min(t5);
    if k_min > k_max {
        return Ok(0.0);
    }
    let mut sum = 0.0;
    for k in k_min..=k_max {
        let denom = factorial(k)
            * factorial(t1 + k)
            * factorial(t2 + k)
            * factorial(t3 - k)
            * factorial(t4 - k)
            * factorial(t5 - k);
        let sign = if k % 2 == 0 { 1.0 } else { -1.0 };
        sum += sign / denom;
    }
    let triangle = factorial(h(a + b - c)) * factorial(h(a - b + c)) * factorial(h(-a + b + c))
        / factorial(h(a + b + c) + 1);
    let norm = factorial(h(a + m1.0))
        * factorial(h(a - m1.0))
        * factorial(h(b + m2.0))
        * factorial(h(b - m2.0))
        * factorial(h(c + m3.0))
        * factorial(h(c - m3.0));
    let phase_twice = a - b - m3.0;
    let phase = if (phase_twice / 2) % 2 == 0 { 1.0 } else { -1.0 };
    Ok(phase * (triangle * norm).sqrt() * sum)
}

/// Dipole coupling coefficient `C(jU mU, 1 q; jV mV)`:
///
/// `(−1)^(jU − 1 + mV) · √(2jV + 1) · (jU 1 jV; mU q −mV)`.
pub fn clebsch_gordan(j_u: HalfInt, m_u: HalfInt, q: i32, j_v: HalfInt, m_v: HalfInt) -> Result<f64> {
    if !(-1..=1).contains(&q) {
        return Err(Error::MalformedAngularMomentum(format!(
            "dipole component q = {q} is not in {{-1, 0, 1}}"
        )));
    }
    let three_j = wigner_3j(j_u, HalfInt::integer(1), j_v, m_u, HalfInt::integer(q), -m_v)?;
    if three_j == 0.0 {
        return Ok(0.0);
    }
    // non-zero 3j forces jU + mV to be an integer
    let exponent = (j_u.0 - 2 + m_v.0) / 2;
    let phase = if exponent.rem_euclid(2) == 0 { 1.0 } else { -1.0 };
    Ok(phase * ((j_v.0 + 1) as f64).sqrt() * three_j)
}
