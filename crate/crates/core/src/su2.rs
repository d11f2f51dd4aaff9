//! SU(2) angular-momentum algebra: exact half-integers, Clebsch–Gordan
//! coefficients (Condon–Shortley phases), their large-spin limit, and the
//! CG ratios that transport eigenstate correlators between `(m, q)` labels.

use std::fmt;
use std::ops::{Add, Neg, Sub};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::math::{ln_binomial, ln_factorial};

/// Coefficients whose magnitude falls below this are treated as vanishing
/// when they appear in a denominator.
pub const CG_ZERO_TOL: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Su2Error {
    #[error("inconsistent half-integer parity: {0}")]
    Parity(String),
    #[error("reference coefficient <{sp},0|{s},0;{k},0> vanishes")]
    ZeroDenominator { s: HalfInt, sp: HalfInt, k: HalfInt },
    #[error("CG ratio {0} is not positive; its logarithm is undefined")]
    NonPositiveRatio(f64),
}

/// A half-integer stored as twice its value.
#[derive(
    Clone, Copy, Debug, Default, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize,
)]
#[serde(transparent)]
pub struct HalfInt(i32);

impl HalfInt {
    pub const ZERO: HalfInt = HalfInt(0);
    pub const HALF: HalfInt = HalfInt(1);
    pub const ONE: HalfInt = HalfInt(2);

    pub const fn from_twice(twice: i32) -> Self {
        HalfInt(twice)
    }

    pub const fn int(n: i32) -> Self {
        HalfInt(2 * n)
    }

    pub const fn twice(self) -> i32 {
        self.0
    }

    pub fn value(self) -> f64 {
        self.0 as f64 / 2.0
    }

    pub const fn is_integer(self) -> bool {
        self.0 % 2 == 0
    }

    pub const fn abs(self) -> Self {
        HalfInt(self.0.abs())
    }

    /// The integer value, if there is one.
    pub const fn to_int(self) -> Option<i32> {
        if self.is_integer() {
            Some(self.0 / 2)
        } else {
            None
        }
    }

    /// True when `self - other` is an integer.
    pub const fn same_parity(self, other: HalfInt) -> bool {
        (self.0 - other.0) % 2 == 0
    }

    /// `s(s+1)` for a spin quantum number.
    pub fn casimir(self) -> f64 {
        let s = self.value();
        s * (s + 1.0)
    }

    /// Multiplet dimension `2s + 1`.
    pub const fn multiplicity(self) -> i32 {
        self.0 + 1
    }

    /// Iterates `-self, -self + 1, ..., self`.
    pub fn projections(self) -> impl DoubleEndedIterator<Item = HalfInt> {
        (0..=self.0).rev().map(move |i| HalfInt(self.0 - 2 * i))
    }
}

impl Add for HalfInt {
    type Output = HalfInt;
    fn add(self, rhs: HalfInt) -> HalfInt {
        HalfInt(self.0 + rhs.0)
    }
}

impl Sub for HalfInt {
    type Output = HalfInt;
    fn sub(self, rhs: HalfInt) -> HalfInt {
        HalfInt(self.0 - rhs.0)
    }
}

impl Neg for HalfInt {
    type Output = HalfInt;
    fn neg(self) -> HalfInt {
        HalfInt(-self.0)
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

/// Arguments of `<s, m | s1, m1; s2, m2>`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct CgKey {
    pub s1: HalfInt,
    pub m1: HalfInt,
    pub s2: HalfInt,
    pub m2: HalfInt,
    pub s: HalfInt,
    pub m: HalfInt,
}

impl CgKey {
    /// Rejects keys whose spins and projections mix integer and
    /// half-integer character, or whose three spins cannot couple at all.
    pub fn new(
        s1: HalfInt,
        m1: HalfInt,
        s2: HalfInt,
        m2: HalfInt,
        s: HalfInt,
        m: HalfInt,
    ) -> Result<Self, Su2Error> {
        for (name, spin, proj) in [("s1", s1, m1), ("s2", s2, m2), ("s", s, m)] {
            if spin.twice() < 0 {
                return Err(Su2Error::Parity(format!("{name} = {spin} is negative")));
            }
            if !spin.same_parity(proj) {
                return Err(Su2Error::Parity(format!(
                    "{name} = {spin} with projection {proj}"
                )));
            }
        }
        if (s1.twice() + s2.twice() + s.twice()) % 2 != 0 {
            return Err(Su2Error::Parity(format!(
                "{s1} and {s2} cannot couple to {s}"
            )));
        }
        Ok(CgKey {
            s1,
            m1,
            s2,
            m2,
            s,
            m,
        })
    }

    fn selection_rules_hold(&self) -> bool {
        let t = |h: HalfInt| h.twice();
        t(self.m1) + t(self.m2) == t(self.m)
            && t(self.m1).abs() <= t(self.s1)
            && t(self.m2).abs() <= t(self.s2)
            && t(self.m).abs() <= t(self.s)
            && t(self.s) <= t(self.s1) + t(self.s2)
            && t(self.s) >= (t(self.s1) - t(self.s2)).abs()
    }
}

fn half(twice: i32) -> i64 {
    debug_assert!(twice % 2 == 0, "odd sum {twice} in factorial argument");
    (twice / 2) as i64
}

/// Clebsch–Gordan coefficient `<s, m | s1, m1; s2, m2>` (Condon–Shortley).
///
/// Evaluated from the closed-form single-sum expression with log-factorials;
/// the summation index runs over every value that keeps all factorial
/// arguments non-negative.
pub fn cg(key: &CgKey) -> f64 {
    if !key.selection_rules_hold() {
        return 0.0;
    }
    let (s1, m1, s2, m2, s, m) = (
        key.s1.twice(),
        key.m1.twice(),
        key.s2.twice(),
        key.m2.twice(),
        key.s.twice(),
        key.m.twice(),
    );
    // <s,0|s1,0;s2,0> vanishes when s1 + s2 + s is odd.
    if m1 == 0 && m2 == 0 && half(s1 + s2 + s) % 2 != 0 {
        return 0.0;
    }

    let prefactor = ((s + 1) as f64).ln()
        + ln_factorial(half(s1 + s - s2))
        + ln_factorial(half(s2 + s - s1))
        + ln_factorial(half(s1 + s2 - s))
        + ln_factorial(half(s + m))
        + ln_factorial(half(s - m))
        + ln_factorial(half(s1 + m1))
        + ln_factorial(half(s1 - m1))
        + ln_factorial(half(s2 + m2))
        + ln_factorial(half(s2 - m2))
        - ln_factorial(half(s1 + s2 + s) + 1);

    // Factorial arguments in the sum are `base + sign * l`.
    let args: [(i64, i64); 6] = [
        (0, 1),
        (half(s1 + s2 - s), -1),
        (half(s1 - m1), -1),
        (half(s2 + m2), -1),
        (half(s - s2 + m1), 1),
        (half(s - s1 - m2), 1),
    ];
    let upper = args
        .iter()
        .filter(|(_, sign)| *sign < 0)
        .map(|(b, _)| *b)
        .min()
        .unwrap_or(0);

    let mut total = 0.0;
    for l in 0..=upper.max(0) {
        if args.iter().any(|(b, sign)| b + sign * l < 0) {
            continue;
        }
        let ln_den: f64 = args
            .iter()
            .map(|(b, sign)| ln_factorial(b + sign * l))
            .sum();
        let sign = if l % 2 == 0 { 1.0 } else { -1.0 };
        total += sign * (0.5 * prefactor - ln_den).exp();
    }
    total
}

/// Convenience wrapper returning 0 for keys with inconsistent parity.
pub fn clebsch_gordan(
    s1: HalfInt,
    m1: HalfInt,
    s2: HalfInt,
    m2: HalfInt,
    s: HalfInt,
    m: HalfInt,
) -> f64 {
    CgKey::new(s1, m1, s2, m2, s, m)
        .map(|k| cg(&k))
        .unwrap_or(0.0)
}

/// Large-spin limit `c̄(ν; k, q)` of `<s+ν, m+q | s, m; k, q>` at fixed `m, k, q`.
pub fn cg_asymptotic(nu: HalfInt, k: HalfInt, q: HalfInt) -> f64 {
    if nu.abs() > k || q.abs() > k || !k.same_parity(nu) || !k.same_parity(q) {
        return 0.0;
    }
    let (nu, k, q) = (nu.twice(), k.twice(), q.twice());
    let (k_plus_nu, k_minus_nu) = (half(k + nu), half(k - nu));
    let (k_plus_q, k_minus_q) = (half(k + q), half(k - q));
    let ln_norm = 0.5
        * (ln_factorial(k_plus_nu) + ln_factorial(k_minus_nu)
            - ln_factorial(k_plus_q)
            - ln_factorial(k_minus_q));

    let mut total = 0.0;
    for l in 0..=k_plus_q {
        let (Some(a), Some(b)) = (
            ln_binomial(k_plus_q, l),
            ln_binomial(k_minus_q, half(nu - q) + l),
        ) else {
            continue;
        };
        let sign = if l % 2 == 0 { 1.0 } else { -1.0 };
        total += sign * (a + b).exp();
    }
    ln_norm.exp() * total * 0.5f64.powf(k as f64 / 2.0)
}

/// Clebsch–Gordan product
/// `<s, m | s+ν, m+q; k', -q> <s+ν, m+q | s, m; k, q>`.
pub fn cg_product(nu: HalfInt, s: HalfInt, m: HalfInt, k: HalfInt, kp: HalfInt, q: HalfInt) -> f64 {
    let sp = s + nu;
    if sp.twice() < 0 {
        return 0.0;
    }
    clebsch_gordan(sp, m + q, kp, -q, s, m) * clebsch_gordan(s, m, k, q, sp, m + q)
}

/// `M1(s, s', m, k, q) = <s', m+q | s, m; k, q> / <s', 0 | s, 0; k, 0>`.
pub fn m1_ratio(
    s: HalfInt,
    sp: HalfInt,
    m: HalfInt,
    k: HalfInt,
    q: HalfInt,
) -> Result<f64, Su2Error> {
    let reference = clebsch_gordan(s, HalfInt::ZERO, k, HalfInt::ZERO, sp, HalfInt::ZERO);
    if reference.abs() < CG_ZERO_TOL {
        return Err(Su2Error::ZeroDenominator { s, sp, k });
    }
    Ok(clebsch_gordan(s, m, k, q, sp, m + q) / reference)
}

/// `M2(s, Δs, m, k, k', q) = M1(s+Δs, s, m+q, k', -q) · M1(s, s+Δs, m, k, q)`.
pub fn m2_ratio(
    s: HalfInt,
    ds: HalfInt,
    m: HalfInt,
    k: HalfInt,
    kp: HalfInt,
    q: HalfInt,
) -> Result<f64, Su2Error> {
    let sp = s + ds;
    if sp.twice() < 0 {
        return Err(Su2Error::ZeroDenominator { s, sp, k });
    }
    Ok(m1_ratio(sp, s, m + q, kp, -q)? * m1_ratio(s, sp, m, k, q)?)
}

/// `M3 = ln[M2(s, Δs, m, k, k', q) / M2(s, -Δs, m, k', k, -q)]`, the constant
/// offset between the `(m, q)` log-ratio and the `(0, 0)` one.
pub fn m3_shift(
    s: HalfInt,
    ds: HalfInt,
    m: HalfInt,
    k: HalfInt,
    kp: HalfInt,
    q: HalfInt,
) -> Result<f64, Su2Error> {
    let num = m2_ratio(s, ds, m, k, kp, q)?;
    let den = m2_ratio(s, -ds, m, kp, k, -q)?;
    let ratio = num / den;
    if !(ratio > 0.0) || !ratio.is_finite() {
        return Err(Su2Error::NonPositiveRatio(ratio));
    }
    Ok(ratio.ln())
}
