use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Situation fields derived from a timestamp, in column order.
pub const TIME_SITUATION_FIELDS: [(&str, u32); 4] =
    [("hour", 24), ("weekday", 7), ("period", 4), ("weekend", 2)];

const SECONDS_PER_DAY: i64 = 86_400;
// 2100-01-01T00:00:00Z
const MAX_TIMESTAMP: i64 = 4_102_444_800;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TimeSituations {
    pub hour: u32,
    /// Monday is 0.
    pub weekday: u32,
    /// night [0,6), morning [6,12), afternoon [12,18), evening [18,24)
    pub period: u32,
    pub weekend: u32,
}

impl TimeSituations {
    pub fn as_array(&self) -> [u32; 4] {
        [self.hour, self.weekday, self.period, self.weekend]
    }
}

pub fn derive_time_situations(timestamp: i64, tz_offset_minutes: i32) -> Result<TimeSituations> {
    if !(0..MAX_TIMESTAMP).contains(&timestamp) {
        return Err(Error::Data(alloc::format!(
            "timestamp {timestamp} outside 1970..2100"
        )));
    }
    let local = timestamp + i64::from(tz_offset_minutes) * 60;
    let days = local.div_euclid(SECONDS_PER_DAY);
    let secs = local.rem_euclid(SECONDS_PER_DAY);
    let hour = (secs / 3600) as u32;
    // 1970-01-01 was a Thursday.
    let weekday = (days + 3).rem_euclid(7) as u32;
    Ok(TimeSituations {
        hour,
        weekday,
        period: hour / 6,
        weekend: u32::from(weekday >= 5),
    })
}
