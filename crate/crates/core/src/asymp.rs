//! Closed-form asymptotic predictors for the generation means, the envelope
//! bounds for convolution powers of nearly-linear functions, the ladder-walk
//! identity, and the ratio harness that scores every predictor against a
//! table value.
//!
//! Every predictor lives in log-space: `t^j / j!` overflows doubles near
//! `j = 170`, so values are carried as natural logs and only exponentiated
//! by callers that know their range.

use std::collections::BTreeMap;

use serde::Serialize;

use crate::dist::JointStepModel;
use crate::error::{Error, Result};
use crate::numerics::{ln_factorial, log_add_exp, log_sub_exp};
use crate::rng::StreamKey;

/// Which formula produced a prediction.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum PredictionLabel {
    Elementary,
    ExpCorrection,
    SecondOrder,
    ThirdOrder,
    EllPower,
    KeyRenewal,
    Blackwell,
}

impl PredictionLabel {
    pub fn as_str(&self) -> &'static str {
        match self {
            PredictionLabel::Elementary => "elementary",
            PredictionLabel::ExpCorrection => "exp_correction",
            PredictionLabel::SecondOrder => "second_order",
            PredictionLabel::ThirdOrder => "third_order",
            PredictionLabel::EllPower => "ell_power",
            PredictionLabel::KeyRenewal => "key_renewal",
            PredictionLabel::Blackwell => "blackwell",
        }
    }
}

/// An asymptotic predictor value in log-space, tagged with its formula and
/// the inputs that produced it.
#[derive(Clone, Debug, Serialize)]
pub struct Prediction {
    /// Natural log of the predicted value; `-inf` when the predicted value
    /// is nonpositive (possible for the signed second-order sum).
    pub log_value: f64,
    pub label: PredictionLabel,
    pub inputs: BTreeMap<&'static str, f64>,
}

fn inputs_of(pairs: &[(&'static str, f64)]) -> BTreeMap<&'static str, f64> {
    pairs.iter().copied().collect()
}

/// First-order generation mean `t^j / (m^j j!)`.
pub fn predict_elementary(j: u32, t: f64, m: f64) -> Prediction {
    let log_value = j as f64 * (t.ln() - m.ln()) - ln_factorial(j as u64);
    Prediction {
        log_value,
        label: PredictionLabel::Elementary,
        inputs: inputs_of(&[("j", j as f64), ("t", t), ("m", m)]),
    }
}

/// Exponentially corrected mean `t^j / (m^j j!) * exp(gamma0 m j^2 / t)`.
pub fn predict_exp_correction(j: u32, t: f64, m: f64, gamma0: f64) -> Prediction {
    let base = predict_elementary(j, t, m);
    Prediction {
        log_value: base.log_value + gamma0 * m * (j as f64) * (j as f64) / t,
        label: PredictionLabel::ExpCorrection,
        inputs: inputs_of(&[("j", j as f64), ("t", t), ("m", m), ("gamma0", gamma0)]),
    }
}

/// Two-term expansion `t^j/(j! m^j) + gamma0 j t^{j-1} / ((j-1)! m^{j-1})`,
/// evaluated sign-aware in log-space.
pub fn predict_second_order(j: u32, t: f64, m: f64, gamma0: f64) -> Prediction {
    let jf = j as f64;
    let lead = jf * (t.ln() - m.ln()) - ln_factorial(j as u64);
    let log_value = if gamma0 == 0.0 {
        lead
    } else {
        let corr = gamma0.abs().ln() + jf.ln() + (jf - 1.0) * (t.ln() - m.ln())
            - ln_factorial(j as u64 - 1);
        if gamma0 > 0.0 {
            log_add_exp(lead, corr)
        } else {
            log_sub_exp(lead, corr).unwrap_or(f64::NEG_INFINITY)
        }
    };
    Prediction {
        log_value,
        label: PredictionLabel::SecondOrder,
        inputs: inputs_of(&[("j", jf), ("t", t), ("m", m), ("gamma0", gamma0)]),
    }
}

/// Three-term ladder expansion `(a t)^j exp(gamma0 j^2/t + (gamma1/2 -
/// gamma0^2) j^3/t^2)`.
///
/// Predicts `E (a t - S_j)_+^j`, without the `1/j!`; consumers comparing
/// against ladder expectations divide in log-space.
pub fn predict_third_order(j: u32, t: f64, a: f64, gamma0: f64, gamma1: f64) -> Prediction {
    let jf = j as f64;
    let log_value = jf * (a * t).ln() + gamma0 * jf * jf / t
        + (gamma1 / 2.0 - gamma0 * gamma0) * jf * jf * jf / (t * t);
    Prediction {
        log_value,
        label: PredictionLabel::ThirdOrder,
        inputs: inputs_of(&[("j", jf), ("t", t), ("a", a), ("gamma0", gamma0), ("gamma1", gamma1)]),
    }
}

/// Closed form `ell^{*(j)}(t) = (a t + gamma0 j)_+^j / j!` for the shifted
/// linear ramp `ell(t) = (a t + gamma0)_+`.
pub fn ell_conv_power(a: f64, gamma0: f64, j: u32, t: f64) -> f64 {
    let x = a * t + gamma0 * j as f64;
    if x <= 0.0 {
        0.0
    } else {
        (j as f64 * x.ln() - ln_factorial(j as u64)).exp()
    }
}

/// Explicit binomial-sum envelopes around `a^j t^j / j!` for convolution
/// powers of a function within `C (t+1)^alpha` of the line `a t`.
///
/// Index 0 holds the conventional pair `(1, 1)`; the lower envelope is
/// clamped at zero. Evaluated with log-sum-exp so large `j` never overflows
/// intermediate terms.
pub fn wj_envelopes(
    a: f64,
    c_big: f64,
    alpha: f64,
    jmax: u32,
    t: f64,
) -> Result<(Vec<f64>, Vec<f64>)> {
    if c_big < 1.0 {
        return Err(Error::invalid("C", format!("the envelope constant needs C >= 1, got {c_big}")));
    }
    if !(0.0..1.0).contains(&alpha) {
        return Err(Error::invalid("alpha", format!("need alpha in [0, 1), got {alpha}")));
    }
    if t < 0.0 {
        return Err(Error::invalid("t", "envelopes are defined for t >= 0"));
    }
    let mut lower = Vec::with_capacity(jmax as usize + 1);
    let mut upper = Vec::with_capacity(jmax as usize + 1);
    lower.push(1.0);
    upper.push(1.0);
    let log_t1 = (t + 1.0).ln();
    for j in 1..=jmax {
        let jf = j as f64;
        let main = if t > 0.0 {
            jf * (a * t).ln() - ln_factorial(j as u64)
        } else {
            f64::NEG_INFINITY
        };
        // B_j(t) = sum_{i=0}^{j-1} binom(j,i) a^i C^{j-i} (t+1)^{alpha(j-i)+i} / i!
        let mut b = f64::NEG_INFINITY;
        for i in 0..j {
            let fi = i as f64;
            let log_binom =
                ln_factorial(j as u64) - ln_factorial(i as u64) - ln_factorial((j - i) as u64);
            let term = log_binom + fi * a.ln() + (jf - fi) * c_big.ln()
                + (alpha * (jf - fi) + fi) * log_t1
                - ln_factorial(i as u64);
            b = log_add_exp(b, term);
        }
        upper.push(log_add_exp(main, b).exp());
        lower.push(log_sub_exp(main, b).map_or(0.0, f64::exp));
    }
    Ok((lower, upper))
}

/// Monte Carlo estimate of `f^{*(j)}(t) = E (a t - S_j)_+^j / j!` where
/// `S_j` is the ladder walk built from the model's `xi` marginal.
pub fn fj_expectation_mc(
    ladder: &JointStepModel,
    a: f64,
    j: u32,
    t: f64,
    n: u64,
    key: StreamKey,
) -> (f64, f64) {
    let mut rng = key.rng();
    let log_jf = ln_factorial(j as u64);
    let mut mean = 0.0f64;
    let mut m2 = 0.0f64;
    for k in 1..=n {
        let mut s = 0.0;
        for _ in 0..j {
            s += ladder.sample_xi(&mut rng);
        }
        let x = a * t - s;
        let val = if x <= 0.0 { 0.0 } else { (j as f64 * x.ln() - log_jf).exp() };
        let delta = val - mean;
        mean += delta / k as f64;
        m2 += delta * (val - mean);
    }
    let var = if n > 1 { m2 / (n - 1) as f64 } else { 0.0 };
    (mean, (var / n as f64).sqrt())
}

/// Key-renewal right-hand side `(integral_f / m) * V_{j-1}(t)`.
pub fn predict_key_renewal(integral_f: f64, m: f64, v_prev_at_t: f64) -> f64 {
    integral_f / m * v_prev_at_t
}

/// A table value scored against a prediction.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct RatioRecord {
    /// `table / exp(prediction)`.
    pub ratio: f64,
    /// `ln(table) - prediction`; the quantity whose decay every `~` claim
    /// asserts.
    pub log_gap: f64,
}

/// Compares a positive table value with a prediction.
pub fn compare(table_value: f64, prediction: &Prediction) -> Result<RatioRecord> {
    if !(table_value > 0.0) {
        return Err(Error::NonPositiveValue(table_value));
    }
    let log_gap = table_value.ln() - prediction.log_value;
    Ok(RatioRecord { ratio: log_gap.exp(), log_gap })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dist::{Coupling, Family};
    use crate::gridfn::{convolution_powers, GridFunction};
    use approx::assert_relative_eq;

    #[test]
    fn elementary_predictor_closed_forms() {
        // first generation: t/m
        let p = predict_elementary(1, 7.0, 2.0);
        assert_relative_eq!(p.log_value.exp(), 3.5, max_relative = 1e-14);
        // GEM numbers: 10^5 / 120
        let p = predict_elementary(5, 10.0, 1.0);
        assert_relative_eq!(p.log_value.exp(), 100_000.0 / 120.0, max_relative = 1e-13);
        // no overflow far beyond f64 range of t^j
        let p = predict_elementary(50, 300.0, 1.0);
        assert!(p.log_value.is_finite());
    }

    #[test]
    fn exp_correction_reduces_to_elementary_when_gamma0_vanishes() {
        let a = predict_elementary(4, 10.0, 1.0);
        let b = predict_exp_correction(4, 10.0, 1.0, 0.0);
        assert_eq!(a.log_value, b.log_value);
        let c = predict_exp_correction(4, 10.0, 1.0, 0.5);
        assert_relative_eq!(c.log_value - a.log_value, 0.8, max_relative = 1e-14);
    }

    #[test]
    fn second_order_arithmetic() {
        // t^j/(j! m^j) + gamma0 j t^{j-1}/((j-1)! m^{j-1}) = 50 + 0.5*2*10
        let p = predict_second_order(2, 10.0, 1.0, 0.5);
        assert_relative_eq!(p.log_value.exp(), 60.0, max_relative = 1e-12);
        let p = predict_second_order(1, 8.0, 2.0, 0.25);
        assert_relative_eq!(p.log_value.exp(), 4.25, max_relative = 1e-12);
        let p = predict_second_order(3, 10.0, 1.0, 0.0);
        assert_eq!(p.log_value, predict_elementary(3, 10.0, 1.0).log_value);
        // negative gamma0 with dominant correction gives a nonpositive sum
        let p = predict_second_order(1, 1.0, 1.0, -2.0);
        assert_eq!(p.log_value, f64::NEG_INFINITY);
    }

    #[test]
    fn third_order_exponent() {
        let p = predict_third_order(3, 5.0, 2.0, 0.0, 0.0);
        assert_relative_eq!(p.log_value, 3.0 * 10.0f64.ln(), max_relative = 1e-14);
        // deterministic unit ladder: gamma0 = -1, gamma1 = 1
        let p = predict_third_order(3, 30.0, 1.0, -1.0, 1.0);
        let expect = 3.0 * 30.0f64.ln() - 9.0 / 30.0 + (0.5 - 1.0) * 27.0 / 900.0;
        assert_relative_eq!(p.log_value, expect, max_relative = 1e-14);
        // the cubic term washes out as j^3/t^2 -> 0
        let two_term = |j: u32, t: f64| predict_third_order(j, t, 1.0, -1.0, 0.0);
        let full = |j: u32, t: f64| predict_third_order(j, t, 1.0, -1.0, 1.0);
        let gap = (full(2, 1e4).log_value - two_term(2, 1e4).log_value).abs();
        assert!(gap < 1e-6);
    }

    #[test]
    fn ell_power_closed_form_cases() {
        assert_relative_eq!(ell_conv_power(1.0, -1.0, 1, 3.0), 2.0, max_relative = 1e-14);
        assert_eq!(ell_conv_power(1.0, -1.0, 7, 6.5), 0.0); // below the support edge
        assert_relative_eq!(ell_conv_power(1.0, -1.0, 2, 3.0), 0.5, max_relative = 1e-14);
    }

    #[test]
    fn ell_power_oracle_against_grid_convolution() {
        // modest subset of the acceptance sweep: j <= 8, distance >= 8
        let h = 1e-3;
        let (a, g0) = (1.0, -1.0);
        let n = (30.0 / h) as usize + 1;
        let ell = GridFunction::from_fn(h, 0, n, |t| (a * t + g0).max(0.0)).unwrap();
        let powers = convolution_powers(&ell, 8).unwrap();
        for j in 1..=8u32 {
            for t in [20.0f64, 25.0, 30.0] {
                let x = a * t + g0 * j as f64;
                if x < 8.0 {
                    continue;
                }
                let grid = powers[j as usize - 1].value_at(t).unwrap();
                let exact = ell_conv_power(a, g0, j, t);
                assert_relative_eq!(grid, exact, max_relative = 0.01);
            }
        }
    }

    #[test]
    fn envelope_shapes() {
        let (lower, upper) = wj_envelopes(2.0, 3.0, 0.25, 6, 4.0).unwrap();
        assert_eq!((lower[0], upper[0]), (1.0, 1.0));
        // j = 1 upper: C (t+1)^alpha + a t
        assert_relative_eq!(upper[1], 3.0 * 5.0f64.powf(0.25) + 8.0, max_relative = 1e-12);
        for j in 0..=6 {
            assert!(lower[j] <= upper[j]);
            assert!(lower[j] >= 0.0);
        }
        assert!(wj_envelopes(1.0, 0.5, 0.0, 3, 1.0).is_err());
    }

    #[test]
    fn ladder_mc_degenerates_to_ell_power_for_deterministic_steps() {
        let det = JointStepModel::new(Family::DetDet { c_xi: 1.0, c_eta: 1.0 }, Coupling::Independent)
            .unwrap();
        let key = StreamKey::root(5);
        let (est, se) = fj_expectation_mc(&det, 1.0, 4, 10.0, 64, key);
        assert_eq!(se, 0.0);
        assert_relative_eq!(est, ell_conv_power(1.0, -1.0, 4, 10.0), max_relative = 1e-13);
    }

    #[test]
    fn ladder_mc_first_generation_matches_quadrature() {
        // E(t - X)_+ for X ~ Exp(1) is t - 1 + e^{-t}
        let exp = JointStepModel::new(
            Family::ExpExp { rate_xi: 1.0, rate_eta: 1.0 },
            Coupling::Independent,
        )
        .unwrap();
        let (est, se) = fj_expectation_mc(&exp, 1.0, 1, 3.0, 200_000, StreamKey::root(8));
        let exact = 3.0 - 1.0 + (-3.0f64).exp();
        assert!((est - exact).abs() <= 3.0 * se, "est = {est}, exact = {exact}, se = {se}");
    }

    #[test]
    fn key_renewal_predictor_arithmetic() {
        assert_eq!(predict_key_renewal(0.0, 1.0, 123.0), 0.0);
        // GEM j = 3, t = 10 with integral 2: 2 * V_2(10) = 2 * 50
        assert_relative_eq!(predict_key_renewal(2.0, 1.0, 50.0), 100.0, max_relative = 1e-14);
    }

    #[test]
    fn ratio_harness() {
        let p = predict_elementary(2, 4.0, 1.0);
        let r = compare(8.0, &p).unwrap();
        assert_relative_eq!(r.ratio, 1.0, max_relative = 1e-12);
        assert!(r.log_gap.abs() < 1e-12);
        assert!(compare(0.0, &p).is_err());
        assert!(compare(-1.0, &p).is_err());
    }
}
