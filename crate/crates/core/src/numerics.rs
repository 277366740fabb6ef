//! Small log-domain helpers shared by the predictors and the simulator.

use std::sync::OnceLock;

const TABLE_LEN: usize = 4096;

fn table() -> &'static [f64; TABLE_LEN] {
    static TABLE: OnceLock<[f64; TABLE_LEN]> = OnceLock::new();
    TABLE.get_or_init(|| {
        let mut t = [0.0f64; TABLE_LEN];
        let mut acc = 0.0f64;
        for (n, slot) in t.iter_mut().enumerate().skip(1) {
            acc += (n as f64).ln();
            *slot = acc;
        }
        t
    })
}

/// `ln(n!)` from a cumulative table, exact summation beyond it.
pub fn ln_factorial(n: u64) -> f64 {
    if (n as usize) < TABLE_LEN {
        table()[n as usize]
    } else {
        let mut acc = table()[TABLE_LEN - 1];
        for k in TABLE_LEN as u64..=n {
            acc += (k as f64).ln();
        }
        acc
    }
}

/// `log(exp(a) + exp(b))` without overflow.
pub fn log_add_exp(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    if b == f64::NEG_INFINITY {
        return a;
    }
    let (hi, lo) = if a >= b { (a, b) } else { (b, a) };
    hi + (lo - hi).exp().ln_1p()
}

/// `log(exp(a) - exp(b))`; `None` when the difference is nonpositive.
pub fn log_sub_exp(a: f64, b: f64) -> Option<f64> {
    if b == f64::NEG_INFINITY {
        return Some(a);
    }
    if b >= a {
        return None;
    }
    Some(a + (-(b - a).exp()).ln_1p())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn factorial_matches_direct_products() {
        assert_eq!(ln_factorial(0), 0.0);
        assert_eq!(ln_factorial(1), 0.0);
        assert_relative_eq!(ln_factorial(5), 120.0f64.ln(), max_relative = 1e-15);
        assert_relative_eq!(ln_factorial(20), 2.43290200817664e18f64.ln(), max_relative = 1e-12);
        // beyond the table
        let mut acc = 0.0;
        for k in 1..=5000u64 {
            acc += (k as f64).ln();
        }
        assert_relative_eq!(ln_factorial(5000), acc, max_relative = 1e-12);
    }

    #[test]
    fn log_space_add_and_sub() {
        let a = 700.0f64; // exp(700) overflows
        let b = 699.0f64;
        assert_relative_eq!(log_add_exp(a, b), a + (1.0 + (-1.0f64).exp()).ln(), max_relative = 1e-14);
        let d = log_sub_exp(a, b).unwrap();
        assert_relative_eq!(d, a + (1.0 - (-1.0f64).exp()).ln(), max_relative = 1e-14);
        assert!(log_sub_exp(b, a).is_none());
        assert_eq!(log_add_exp(f64::NEG_INFINITY, 1.0), 1.0);
    }
}
