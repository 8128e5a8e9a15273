//! Small numeric and RNG helpers.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

/// Draws an index with probability proportional to the (unnormalized) `weights`.
pub fn sample_index<R: Rng + ?Sized>(weights: &[f64], rng: &mut R) -> usize {
    let total: f64 = weights.iter().sum();
    debug_assert!(total > 0.0);
    let mut u = rng.random::<f64>() * total;
    let mut last = 0;
    for (i, &w) in weights.iter().enumerate() {
        if w > 0.0 {
            if u < w {
                return i;
            }
            u -= w;
            last = i;
        }
    }
    last
}

/// Draws an index with probability proportional to `exp(log_weights)`.
/// Returns `None` when every weight is zero.
pub fn sample_log_index<R: Rng + ?Sized>(log_weights: &[f64], rng: &mut R) -> Option<usize> {
    let max = log_weights.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return None;
    }
    let w: Vec<f64> = log_weights.iter().map(|l| (l - max).exp()).collect();
    Some(sample_index(&w, rng))
}

pub fn log_sum_exp(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + values.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

/// Independent, reproducible stream `stream` derived from a master seed.
pub fn stream_rng(seed: u64, stream: u64) -> ChaCha20Rng {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Formats with six significant digits, like C's `%g`.
pub fn fmt_g6(x: f64) -> String {
    if x == 0.0 {
        return "0".into();
    }
    if !x.is_finite() {
        return if x.is_nan() { "nan".into() } else if x > 0.0 { "inf".into() } else { "-inf".into() };
    }
    // The exponent is taken after rounding, so 999999.5 becomes 1e+06.
    let sci = format!("{:.5e}", x);
    let (mantissa, e) = sci.split_once('e').expect("scientific format");
    let e: i32 = e.parse().expect("exponent");
    if (-4..6).contains(&e) {
        let decimals = (5 - e).max(0) as usize;
        trim_zeros(format!("{:.*}", decimals, x))
    } else {
        let m = trim_zeros(mantissa.to_string());
        format!("{m}e{}{:02}", if e < 0 { '-' } else { '+' }, e.abs())
    }
}

fn trim_zeros(s: String) -> String {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.').to_string()
    } else {
        s
    }
}

/// Pearson goodness-of-fit statistic of observed `counts` against cell
/// probabilities `probs`. Cells with expected count below 5 are pooled into a
/// single cell. Returns the statistic and its degrees of freedom.
pub fn chi_square_pooled(counts: &[f64], probs: &[f64]) -> (f64, usize) {
    let n: f64 = counts.iter().sum();
    let (mut stat, mut cells) = (0.0, 0usize);
    let (mut pooled_obs, mut pooled_exp) = (0.0, 0.0);
    for (&o, &p) in counts.iter().zip(probs) {
        let e = n * p;
        if e >= 5.0 {
            stat += (o - e) * (o - e) / e;
            cells += 1;
        } else {
            pooled_obs += o;
            pooled_exp += e;
        }
    }
    if pooled_exp > 0.0 {
        stat += (pooled_obs - pooled_exp) * (pooled_obs - pooled_exp) / pooled_exp;
        cells += 1;
    } else if pooled_obs > 0.0 {
        stat = f64::INFINITY;
    }
    (stat, cells.saturating_sub(1))
}

/// Upper-tail probability of a chi-square statistic.
pub fn chi_square_p_value(stat: f64, df: usize) -> f64 {
    use statrs::distribution::{ChiSquared, ContinuousCDF};
    if df == 0 {
        return if stat > 0.0 { 0.0 } else { 1.0 };
    }
    ChiSquared::new(df as f64).map_or(f64::NAN, |d| d.sf(stat))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn chi_square_pooling() {
        let (stat, df) = chi_square_pooled(&[50.0, 50.0, 0.0], &[0.5, 0.5, 0.0]);
        assert_eq!((stat, df), (0.0, 1));
        let (stat, df) = chi_square_pooled(&[60.0, 40.0], &[0.5, 0.5]);
        assert!((stat - 4.0).abs() < 1e-12 && df == 1);
        assert!((chi_square_p_value(3.841458820694124, 1) - 0.05).abs() < 1e-9);
        assert_eq!(chi_square_pooled(&[99.0, 1.0], &[1.0, 0.0]).0, f64::INFINITY);
    }

    #[test]
    fn g6_formatting() {
        assert_eq!(fmt_g6(0.75), "0.75");
        assert_eq!(fmt_g6(1.0), "1");
        assert_eq!(fmt_g6(1.0 / 3.0), "0.333333");
        assert_eq!(fmt_g6(123456.7), "123457");
        assert_eq!(fmt_g6(1234567.0), "1.23457e+06");
        assert_eq!(fmt_g6(0.000012345678), "1.23457e-05");
        assert_eq!(fmt_g6(0.00012345678), "0.000123457");
        assert_eq!(fmt_g6(-2.5), "-2.5");
        assert_eq!(fmt_g6(f64::NAN), "nan");
    }

    #[test]
    fn log_sum_exp_handles_infinities() {
        assert_eq!(log_sum_exp(&[f64::NEG_INFINITY; 3]), f64::NEG_INFINITY);
        assert!((log_sum_exp(&[0.0, 0.0]) - 2f64.ln()).abs() < 1e-15);
        assert!((log_sum_exp(&[-1000.0, -1000.0]) - (-1000.0 + 2f64.ln())).abs() < 1e-12);
    }
}
