//! Deterministic calendar feature encoding.

use chrono::{Datelike, NaiveDate, Weekday};

/// Feature width: 7 day-of-week + 12 month + weekend flag.
pub const CALENDAR_DIM: usize = 20;

/// One-hot day of week (Monday = index 0), one-hot month (January =
/// index 7) and a weekend flag at index 19.
pub fn calendar_features(date: NaiveDate) -> Vec<f64> {
    let mut v = vec![0.0; CALENDAR_DIM];
    let dow = date.weekday().num_days_from_monday() as usize;
    v[dow] = 1.0;
    v[7 + (date.month0() as usize)] = 1.0;
    if matches!(date.weekday(), Weekday::Sat | Weekday::Sun) {
        v[19] = 1.0;
    }
    v
}

#[cfg(test)]
mod tests {
    use super::*;

    fn d(s: &str) -> NaiveDate {
        s.parse().unwrap()
    }

    #[test]
    fn saturday_sets_weekend_flag() {
        let v = calendar_features(d("2024-03-09")); // a Saturday
        assert_eq!(v[19], 1.0);
        assert_eq!(v[5], 1.0); // Saturday one-hot
        let w = calendar_features(d("2024-03-06")); // a Wednesday
        assert_eq!(w[19], 0.0);
    }

    #[test]
    fn january_sets_month_index_zero() {
        let v = calendar_features(d("2024-01-15"));
        assert_eq!(v[7], 1.0);
        assert_eq!(v[8..19].iter().sum::<f64>(), 0.0);
    }

    #[test]
    fn encoding_is_deterministic_and_one_hot() {
        let a = calendar_features(d("2023-11-05"));
        let b = calendar_features(d("2023-11-05"));
        assert_eq!(a, b);
        assert_eq!(a[0..7].iter().sum::<f64>(), 1.0);
        assert_eq!(a[7..19].iter().sum::<f64>(), 1.0);
    }
}
