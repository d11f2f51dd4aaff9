//! Small numerical helpers shared by the CG and thermodynamics code.

use std::sync::OnceLock;

const LN_FACTORIAL_TABLE: usize = 4096;

fn ln_factorial_table() -> &'static [f64] {
    static TABLE: OnceLock<Vec<f64>> = OnceLock::new();
    TABLE.get_or_init(|| {
        let mut table = Vec::with_capacity(LN_FACTORIAL_TABLE);
        table.push(0.0);
        let mut acc = 0.0f64;
        for i in 1..LN_FACTORIAL_TABLE {
            acc += (i as f64).ln();
            table.push(acc);
        }
        table
    })
}

/// `ln(n!)`. Panics on negative `n`.
pub fn ln_factorial(n: i64) -> f64 {
    assert!(n >= 0, "ln_factorial of negative argument {n}");
    let n = n as usize;
    match ln_factorial_table().get(n) {
        Some(v) => *v,
        None => libm::lgamma(n as f64 + 1.0),
    }
}

/// `ln C(n, k)`, or `None` when the coefficient vanishes.
pub fn ln_binomial(n: i64, k: i64) -> Option<f64> {
    if k < 0 || k > n || n < 0 {
        return None;
    }
    Some(ln_factorial(n) - ln_factorial(k) - ln_factorial(n - k))
}

/// Exact binomial coefficient, `None` on overflow.
pub fn binomial(n: u64, k: u64) -> Option<u128> {
    if k > n {
        return Some(0);
    }
    let k = k.min(n - k);
    let mut acc: u128 = 1;
    for i in 0..k {
        acc = acc.checked_mul((n - i) as u128)? / (i as u128 + 1);
    }
    Some(acc)
}

/// Neumaier-compensated sum.
#[derive(Debug, Default, Clone, Copy)]
pub struct CompensatedSum {
    sum: f64,
    compensation: f64,
}

impl CompensatedSum {
    pub fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.compensation += (self.sum - t) + x;
        } else {
            self.compensation += (x - t) + self.sum;
        }
        self.sum = t;
    }

    pub fn value(&self) -> f64 {
        self.sum + self.compensation
    }
}

impl FromIterator<f64> for CompensatedSum {
    fn from_iter<I: IntoIterator<Item = f64>>(iter: I) -> Self {
        let mut acc = CompensatedSum::default();
        for x in iter {
            acc.add(x);
        }
        acc
    }
}

/// `ln Σ exp(x_i)` with the maximum shifted out. Returns `-inf` for an empty input.
pub fn log_sum_exp(xs: &[f64]) -> f64 {
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return max;
    }
    let s: CompensatedSum = xs.iter().map(|x| (x - max).exp()).collect();
    max + s.value().ln()
}

pub fn erf(x: f64) -> f64 {
    libm::erf(x)
}

pub fn erfc(x: f64) -> f64 {
    libm::erfc(x)
}
