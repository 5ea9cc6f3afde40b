//! UTC calendar arithmetic and the (year, month, day) ordinal decomposition
//! of Unix timestamps.
//!
//! A timestamp maps to the cumulative number of whole calendar years, months
//! and days elapsed since 1970-01-01T00:00:00Z in the proleptic Gregorian
//! calendar. The epoch itself is `(0, 0, 0)` and 1971-01-01 is `(1, 12, 365)`.

use crate::error::{Error, Result};

pub const SECONDS_PER_DAY: i64 = 86_400;
pub const EPOCH_YEAR: i64 = 1970;

/// Seconds since the Unix epoch, guaranteed non-negative.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct UnixTimestamp(i64);

impl UnixTimestamp {
    pub fn new(seconds: i64) -> Result<Self> {
        if seconds < 0 {
            return Err(Error::PreEpoch(seconds));
        }
        Ok(UnixTimestamp(seconds))
    }

    pub fn seconds(self) -> i64 {
        self.0
    }

    pub fn triplet(self) -> TemporalTriplet {
        let days = self.0.div_euclid(SECONDS_PER_DAY);
        let (year, month, _) = civil_from_days(days);
        let y = year - EPOCH_YEAR;
        TemporalTriplet {
            year: y as u64,
            month: (12 * y + (month as i64 - 1)) as u64,
            day: days as u64,
        }
    }
}

impl TryFrom<i64> for UnixTimestamp {
    type Error = Error;

    fn try_from(seconds: i64) -> Result<Self> {
        UnixTimestamp::new(seconds)
    }
}

/// Cumulative calendar years, months and days since the epoch.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct TemporalTriplet {
    pub year: u64,
    pub month: u64,
    pub day: u64,
}

impl TemporalTriplet {
    pub const ZERO: TemporalTriplet = TemporalTriplet {
        year: 0,
        month: 0,
        day: 0,
    };

    pub fn new(year: u64, month: u64, day: u64) -> Self {
        TemporalTriplet { year, month, day }
    }

    /// Month-of-year index in `0..12`.
    pub fn month_of_year(&self) -> u64 {
        self.month - 12 * self.year
    }
}

/// Decompose a Unix timestamp (seconds) into its temporal triplet.
pub fn decompose_timestamp(seconds: i64) -> Result<TemporalTriplet> {
    Ok(UnixTimestamp::new(seconds)?.triplet())
}

pub fn is_leap_year(year: i64) -> bool {
    (year % 4 == 0 && year % 100 != 0) || year % 400 == 0
}

pub fn days_in_month(year: i64, month: u32) -> u32 {
    match month {
        1 | 3 | 5 | 7 | 8 | 10 | 12 => 31,
        4 | 6 | 9 | 11 => 30,
        2 if is_leap_year(year) => 29,
        2 => 28,
        _ => panic!("month out of range: {month}"),
    }
}

/// Civil date `(year, month, day_of_month)` for a day count since the epoch.
///
/// Hinnant's era-based algorithm: shift to a March-based year so the leap
/// day falls at the end, then split into 400-year eras of 146097 days.
pub fn civil_from_days(days: i64) -> (i64, u32, u32) {
    let z = days + 719_468;
    let era = z.div_euclid(146_097);
    let doe = z.rem_euclid(146_097);
    let yoe = (doe - doe / 1_460 + doe / 36_524 - doe / 146_096) / 365;
    let doy = doe - (365 * yoe + yoe / 4 - yoe / 100);
    let mp = (5 * doy + 2) / 153;
    let d = (doy - (153 * mp + 2) / 5 + 1) as u32;
    let m = if mp < 10 { mp + 3 } else { mp - 9 } as u32;
    let y = yoe + era * 400 + i64::from(m <= 2);
    (y, m, d)
}

/// Inverse of [`civil_from_days`].
pub fn days_from_civil(year: i64, month: u32, day: u32) -> i64 {
    let y = if month <= 2 { year - 1 } else { year };
    let era = y.div_euclid(400);
    let yoe = y.rem_euclid(400);
    let m = i64::from(month);
    let mp = if m > 2 { m - 3 } else { m + 9 };
    let doy = (153 * mp + 2) / 5 + i64::from(day) - 1;
    let doe = yoe * 365 + yoe / 4 - yoe / 100 + doy;
    era * 146_097 + doe - 719_468
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn anchor_triplets() {
        assert_eq!(decompose_timestamp(0).unwrap(), TemporalTriplet::new(0, 0, 0));
        assert_eq!(
            decompose_timestamp(31_536_000).unwrap(),
            TemporalTriplet::new(1, 12, 365)
        );
        assert_eq!(
            decompose_timestamp(946_684_800).unwrap(),
            TemporalTriplet::new(30, 360, 10_957)
        );
    }

    #[test]
    fn last_second_of_a_day_stays_on_that_day() {
        assert_eq!(decompose_timestamp(86_399).unwrap(), TemporalTriplet::ZERO);
        // 1970-01-31T23:59:59 then 1970-02-01T00:00:00
        assert_eq!(
            decompose_timestamp(31 * 86_400 - 1).unwrap(),
            TemporalTriplet::new(0, 0, 30)
        );
        assert_eq!(
            decompose_timestamp(31 * 86_400).unwrap(),
            TemporalTriplet::new(0, 1, 31)
        );
    }

    #[test]
    fn pre_epoch_is_rejected() {
        assert!(matches!(decompose_timestamp(-1), Err(Error::PreEpoch(-1))));
        assert!(UnixTimestamp::try_from(-86_400).is_err());
    }

    #[test]
    fn civil_anchors() {
        assert_eq!(civil_from_days(0), (1970, 1, 1));
        assert_eq!(civil_from_days(365), (1971, 1, 1));
        assert_eq!(civil_from_days(10_957), (2000, 1, 1));
        // 2000-02-29 exists, 1900-02-29 does not
        assert_eq!(civil_from_days(days_from_civil(2000, 2, 29)), (2000, 2, 29));
        assert_eq!(days_from_civil(2000, 3, 1) - days_from_civil(2000, 2, 28), 2);
    }

    #[test]
    fn leap_rules() {
        assert!(is_leap_year(1972));
        assert!(!is_leap_year(1900));
        assert!(is_leap_year(2000));
        assert!(!is_leap_year(2100));
        assert!(!is_leap_year(1971));
    }

    #[test]
    fn round_trip_first_century() {
        for n in 0..=36_525 {
            let (y, m, d) = civil_from_days(n);
            assert_eq!(days_from_civil(y, m, d), n, "day {n}");
        }
    }

    #[test]
    fn month_of_year_in_range() {
        for ts in (0..2_000_000_000i64).step_by(7_777_777) {
            let t = decompose_timestamp(ts).unwrap();
            assert!(t.month_of_year() < 12);
        }
    }
}
