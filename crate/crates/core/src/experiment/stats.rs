//! Order statistics for benchmark reports.

use serde::Serialize;

/// Quantile with linear interpolation between order statistics
/// (`h = (n - 1) q`). `None` for empty input.
pub fn quantile(values: &[f64], q: f64) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let h = (v.len() - 1) as f64 * q.clamp(0.0, 1.0);
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    Some(v[lo] + (h - lo as f64) * (v[hi] - v[lo]))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Spread {
    pub min: f64,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
    pub max: f64,
}

impl Spread {
    pub fn of(values: &[f64]) -> Option<Spread> {
        Some(Spread {
            min: quantile(values, 0.0)?,
            q1: quantile(values, 0.25)?,
            median: quantile(values, 0.5)?,
            q3: quantile(values, 0.75)?,
            max: quantile(values, 1.0)?,
        })
    }

    pub fn iqr(&self) -> f64 {
        self.q3 - self.q1
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn matches_hand_computed_quartiles() {
        // sorted 1..=8: h = 1.75, 3.5, 5.25
        let s = Spread::of(&[8.0, 1.0, 5.0, 3.0, 2.0, 7.0, 4.0, 6.0]).unwrap();
        assert_eq!((s.q1, s.median, s.q3), (2.75, 4.5, 6.25));
        assert_eq!(s.iqr(), 3.5);
        assert_eq!(Spread::of(&[3.0]).unwrap().iqr(), 0.0);
        assert!(Spread::of(&[]).is_none());
    }

    proptest! {
        #[test]
        fn quantiles_are_ordered_and_bounded(v in prop::collection::vec(-1e3f64..1e3, 1..40)) {
            let s = Spread::of(&v).unwrap();
            prop_assert!(s.min <= s.q1 && s.q1 <= s.median && s.median <= s.q3 && s.q3 <= s.max);
            let lo = v.iter().copied().fold(f64::INFINITY, f64::min);
            prop_assert_eq!(s.min, lo);
        }
    }
}
