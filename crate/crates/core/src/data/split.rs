use crate::error::{invalid, Result};

/// Chronological calibration split: the first `ceil(fraction * n)` trials go
/// to calibration, the rest to test. Input must already be in acquisition order.
pub fn split_calibration<T: Clone>(trials: &[T], fraction: f64) -> Result<(Vec<T>, Vec<T>)> {
    let n = trials.len();
    if n < 2 {
        return Err(invalid(format!("need at least 2 trials to split, got {n}")));
    }
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(invalid(format!("calibration fraction {fraction} not in (0, 1)")));
    }
    // round away float noise before the ceiling so 0.3 * 100 stays 30
    let raw = fraction * n as f64;
    let k = ((raw * 1e9).round() / 1e9).ceil() as usize;
    if k == 0 || k >= n {
        return Err(invalid(format!(
            "fraction {fraction} of {n} trials leaves one side empty"
        )));
    }
    Ok((trials[..k].to_vec(), trials[k..].to_vec()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn thirty_percent_of_hundred() {
        let v: Vec<u32> = (0..100).collect();
        let (cal, test) = split_calibration(&v, 0.3).unwrap();
        assert_eq!((cal.len(), test.len()), (30, 70));
        assert_eq!(cal[0], 0);
        assert_eq!(test[0], 30);
    }

    #[test]
    fn ceiling_keeps_calibration_non_empty() {
        let v: Vec<u32> = (0..10).collect();
        let (cal, test) = split_calibration(&v, 0.05).unwrap();
        assert_eq!((cal.len(), test.len()), (1, 9));
    }

    #[test]
    fn degenerate_inputs() {
        assert!(split_calibration(&[1], 0.3).is_err());
        assert!(split_calibration(&[1, 2], 0.99).is_err());
        assert!(split_calibration(&[1, 2, 3], 0.0).is_err());
    }
}
