use crate::error::{Error, Result};

/// Sum of squared deviations of a window from its own mean. No `1/K` factor.
pub fn window_variance(deltas: &[f64], window: usize) -> Result<f64> {
    if window == 0 || deltas.len() != window {
        return Err(Error::shape(format!(
            "window of {} values, expected {window}",
            deltas.len()
        )));
    }
    Ok(sum_sq_dev(deltas))
}

#[inline]
pub(crate) fn sum_sq_dev(xs: &[f64]) -> f64 {
    let mean = xs.iter().sum::<f64>() / xs.len() as f64;
    xs.iter().map(|x| (x - mean) * (x - mean)).sum()
}

/// One EMA step: `beta * r_window + (1 - beta) * r_prev`.
#[inline]
pub fn ema_update(r_prev: f64, r_window: f64, beta: f64) -> f64 {
    beta * r_window + (1.0 - beta) * r_prev
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;

    #[test]
    fn flat_window_is_zero() {
        assert_eq!(window_variance(&[0.7; 5], 5).unwrap(), 0.0);
    }

    #[test]
    fn one_two_three() {
        assert_eq!(window_variance(&[1.0, 2.0, 3.0], 3).unwrap(), 2.0);
    }

    #[test]
    fn single_point() {
        assert_eq!(window_variance(&[42.0], 1).unwrap(), 0.0);
    }

    #[test]
    fn wrong_length() {
        assert!(matches!(window_variance(&[1.0, 2.0], 3), Err(Error::Shape(_))));
        assert!(window_variance(&[], 0).is_err());
    }

    #[test]
    fn ema_examples() {
        assert_eq!(ema_update(123.0, 4.0, 1.0), 4.0);
        assert!((ema_update(2.0, 4.0, 0.9) - 3.8).abs() < 1e-15);
        assert_eq!(ema_update(1.25, 1.25, 0.5), 1.25);
    }

    proptest! {
        #[test]
        fn translation_and_scale(
            xs in proptest::collection::vec(-10.0f64..10.0, 1..12),
            shift in -5.0f64..5.0,
            scale in -3.0f64..3.0,
        ) {
            let k = xs.len();
            let base = window_variance(&xs, k).unwrap();
            let shifted: Vec<f64> = xs.iter().map(|x| x + shift).collect();
            let scaled: Vec<f64> = xs.iter().map(|x| x * scale).collect();
            let tol = 1e-9 * (1.0 + base);
            prop_assert!((window_variance(&shifted, k).unwrap() - base).abs() < tol);
            prop_assert!(
                (window_variance(&scaled, k).unwrap() - scale * scale * base).abs()
                    < tol * (1.0 + scale * scale)
            );
        }
    }
}
