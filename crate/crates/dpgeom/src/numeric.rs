//! Shared numerically-careful primitives: log-factorials, log-binomials,
//! log-sum-exp, and the small-sum regime helpers used by the accounting
//! formulas.

use std::sync::OnceLock;

const LN_FACT_CACHE: usize = 1025;

fn ln_factorial_table() -> &'static [f64; LN_FACT_CACHE] {
    static TABLE: OnceLock<[f64; LN_FACT_CACHE]> = OnceLock::new();
    TABLE.get_or_init(|| {
        let mut t = [0.0_f64; LN_FACT_CACHE];
        for n in 2..LN_FACT_CACHE {
            t[n] = t[n - 1] + (n as f64).ln();
        }
        t
    })
}

/// ln(n!), cached for all orders the accountant ever sees.
pub fn ln_factorial(n: u64) -> f64 {
    if (n as usize) < LN_FACT_CACHE {
        ln_factorial_table()[n as usize]
    } else {
        libm::lgamma(n as f64 + 1.0)
    }
}

/// ln C(n, k) for integers, exact at the endpoints.
pub fn ln_binomial(n: u64, k: u64) -> f64 {
    if k > n {
        return f64::NEG_INFINITY;
    }
    ln_factorial(n) - ln_factorial(k) - ln_factorial(n - k)
}

/// k * x with the convention 0 * (±inf) = 0, so that vanishing binomial
/// coefficients kill the log of a zero probability instead of producing NaN.
pub fn mul0(k: f64, x: f64) -> f64 {
    if k == 0.0 {
        0.0
    } else {
        k * x
    }
}

/// log(Σ exp(t_i)) over a slice, tolerant of -inf entries.
pub fn log_sum_exp(terms: &[f64]) -> f64 {
    let hi = terms.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if hi == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    if hi.is_infinite() {
        return f64::INFINITY;
    }
    let sum: f64 = terms.iter().map(|&t| (t - hi).exp()).sum();
    hi + sum.ln()
}

/// Streaming log-sum-exp accumulator for grids too large to materialize.
#[derive(Clone, Copy, Debug)]
pub struct LogSumAcc {
    hi: f64,
    sum: f64,
}

impl LogSumAcc {
    pub fn new() -> Self {
        LogSumAcc {
            hi: f64::NEG_INFINITY,
            sum: 0.0,
        }
    }

    pub fn add(&mut self, t: f64) {
        if t == f64::NEG_INFINITY {
            return;
        }
        if t <= self.hi {
            self.sum += (t - self.hi).exp();
        } else {
            self.sum = self.sum * (self.hi - t).exp() + 1.0;
            self.hi = t;
        }
    }

    pub fn merge(&mut self, other: &LogSumAcc) {
        if other.hi == f64::NEG_INFINITY {
            return;
        }
        if other.hi <= self.hi {
            self.sum += other.sum * (other.hi - self.hi).exp();
        } else {
            self.sum = self.sum * (self.hi - other.hi).exp() + other.sum;
            self.hi = other.hi;
        }
    }

    pub fn value(&self) -> f64 {
        if self.hi == f64::NEG_INFINITY {
            f64::NEG_INFINITY
        } else {
            self.hi + self.sum.ln()
        }
    }
}

impl Default for LogSumAcc {
    fn default() -> Self {
        Self::new()
    }
}

/// Relative gap |a - b| / max(|a|, |b|), zero when both vanish.
pub fn rel_diff(a: f64, b: f64) -> f64 {
    let scale = a.abs().max(b.abs());
    if scale == 0.0 {
        0.0
    } else {
        (a - b).abs() / scale
    }
}
