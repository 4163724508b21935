//! Sample index to wall-clock conversion.

use chrono::{DateTime, Duration, SecondsFormat, Utc};

use crate::SAMPLE_RATE_HZ;

/// Default stream epoch for synthetic data.
pub const DEFAULT_EPOCH: &str = "2017-01-01T00:00:00Z";

pub fn parse_epoch(s: &str) -> Option<DateTime<Utc>> {
    DateTime::parse_from_rfc3339(s).ok().map(|t| t.with_timezone(&Utc))
}

pub fn default_epoch() -> DateTime<Utc> {
    parse_epoch(DEFAULT_EPOCH).expect("constant epoch parses")
}

/// ISO-8601 time of sample `k`, rounded to the nanosecond.
pub fn iso_time(epoch: DateTime<Utc>, k: u64) -> String {
    let nanos = (k as f64 * 1e9 / SAMPLE_RATE_HZ).round() as i64;
    (epoch + Duration::nanoseconds(nanos)).to_rfc3339_opts(SecondsFormat::Nanos, true)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn one_second_is_120_samples() {
        let e = default_epoch();
        assert_eq!(iso_time(e, 120), "2017-01-01T00:00:01.000000000Z");
        assert_eq!(iso_time(e, 1), "2017-01-01T00:00:00.008333333Z");
    }
}
