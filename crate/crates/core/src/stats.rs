//! Small statistics helpers: percentile with linear interpolation between
//! order statistics, mean and coefficient of variation.

/// Percentile of `values` at `p` (0..=100), interpolating linearly between
/// order statistics: the rank is `h = (n - 1) * p / 100` on the sorted data
/// and the result is `x[floor(h)] + frac(h) * (x[floor(h)+1] - x[floor(h)])`.
///
/// Returns `None` on empty input.
pub fn percentile(values: &[f64], p: f64) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("non-NaN values"));
    let p = p.clamp(0.0, 100.0);
    let h = (sorted.len() - 1) as f64 * p / 100.0;
    let lo = h.floor() as usize;
    let frac = h - lo as f64;
    if frac == 0.0 || lo + 1 >= sorted.len() {
        Some(sorted[lo])
    } else {
        Some(sorted[lo] + frac * (sorted[lo + 1] - sorted[lo]))
    }
}

pub fn mean(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        None
    } else {
        Some(values.iter().sum::<f64>() / values.len() as f64)
    }
}

/// Coefficient of variation: population standard deviation over the mean.
///
/// Returns `None` on empty input or a non-positive mean.
pub fn coefficient_of_variation(values: &[f64]) -> Option<f64> {
    let m = mean(values)?;
    if m <= 0.0 {
        return None;
    }
    let var = values.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / values.len() as f64;
    Some(var.sqrt() / m)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fifth_percentile_of_1_to_100() {
        let values: Vec<f64> = (1..=100).map(f64::from).collect();
        let p5 = percentile(&values, 5.0).unwrap();
        assert!((p5 - 5.95).abs() < 1e-12, "got {p5}");
    }

    #[test]
    fn ninety_fifth_percentile_of_21_steps() {
        // 500, 505, ..., 600: rank (21-1)*0.95 = 19 lands exactly on 595.
        let values: Vec<f64> = (0..21).map(|i| 500.0 + 5.0 * i as f64).collect();
        let p95 = percentile(&values, 95.0).unwrap();
        assert!((p95 - 595.0).abs() < 1e-12, "got {p95}");
    }

    #[test]
    fn single_value_is_every_percentile() {
        assert_eq!(percentile(&[420.0], 5.0), Some(420.0));
        assert_eq!(percentile(&[420.0], 95.0), Some(420.0));
    }

    #[test]
    fn percentile_is_order_independent() {
        let a = [9.0, 1.0, 5.0, 3.0, 7.0];
        let b = [1.0, 3.0, 5.0, 7.0, 9.0];
        assert_eq!(percentile(&a, 40.0), percentile(&b, 40.0));
    }

    #[test]
    fn empty_input_is_none() {
        assert_eq!(percentile(&[], 50.0), None);
        assert_eq!(mean(&[]), None);
        assert_eq!(coefficient_of_variation(&[]), None);
    }

    #[test]
    fn cv_of_constant_data_is_zero() {
        let v = [60.0; 10];
        assert_eq!(coefficient_of_variation(&v), Some(0.0));
    }
}
