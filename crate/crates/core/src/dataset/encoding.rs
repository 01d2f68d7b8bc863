//! Categorical and temporal encodings for road type, left-turn phasing,
//! approach direction and 15-minute interval position.

use std::collections::HashMap;

use chrono::{NaiveDateTime, NaiveTime, Timelike};

use super::schema::Approach;
use super::DatasetError;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RoadType {
    Major,
    Minor,
}

impl RoadType {
    pub fn code(self) -> u8 {
        match self {
            RoadType::Major => 1,
            RoadType::Minor => 2,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            1 => Some(RoadType::Major),
            2 => Some(RoadType::Minor),
            _ => None,
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            RoadType::Major => "major road",
            RoadType::Minor => "minor road",
        }
    }

    fn parse(raw: &str) -> Option<Self> {
        match normalize(raw).as_str() {
            "major" | "major road" => Some(RoadType::Major),
            "minor" | "minor road" => Some(RoadType::Minor),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LeftTurnType {
    PermissiveOnly,
    ProtectedPermissive,
    ProtectedOnly,
}

impl LeftTurnType {
    pub fn code(self) -> u8 {
        match self {
            LeftTurnType::PermissiveOnly => 1,
            LeftTurnType::ProtectedPermissive => 2,
            LeftTurnType::ProtectedOnly => 3,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            1 => Some(LeftTurnType::PermissiveOnly),
            2 => Some(LeftTurnType::ProtectedPermissive),
            3 => Some(LeftTurnType::ProtectedOnly),
            _ => None,
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            LeftTurnType::PermissiveOnly => "permissive-only left-turn",
            LeftTurnType::ProtectedPermissive => "protected-permissive left-turn",
            LeftTurnType::ProtectedOnly => "protected-only left-turn",
        }
    }

    fn parse(raw: &str) -> Option<Self> {
        let s = normalize(raw);
        let s = s.strip_suffix(" left-turn").unwrap_or(&s);
        let s = s.strip_suffix(" left turn").unwrap_or(s);
        match s {
            "permissive-only" | "permissive only" | "permissive" => Some(LeftTurnType::PermissiveOnly),
            "protected-permissive" | "protected permissive" => Some(LeftTurnType::ProtectedPermissive),
            "protected-only" | "protected only" | "protected" => Some(LeftTurnType::ProtectedOnly),
            _ => None,
        }
    }
}

/// Position of a 15-minute interval within the day.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct IntervalCode {
    /// Quarter of the hour, 1..=4.
    pub minute_of_hour: u8,
    /// Hour of day, 0..=23.
    pub hour_of_day: u8,
}

impl IntervalCode {
    pub fn new(minute_of_hour: u8, hour_of_day: u8) -> Result<Self, DatasetError> {
        if !(1..=4).contains(&minute_of_hour) {
            return Err(DatasetError::Encoding {
                field: "quarter".into(),
                reason: format!("quarter must be in 1..=4, got {minute_of_hour}"),
            });
        }
        if hour_of_day > 23 {
            return Err(DatasetError::Encoding {
                field: "hour".into(),
                reason: format!("hour must be in [0, 24), got {hour_of_day}"),
            });
        }
        Ok(Self {
            minute_of_hour,
            hour_of_day,
        })
    }

    pub fn from_time(t: NaiveTime) -> Self {
        Self {
            minute_of_hour: (t.minute() / 15) as u8 + 1,
            hour_of_day: t.hour() as u8,
        }
    }

    /// Start time of the interval.
    pub fn start(self) -> NaiveTime {
        NaiveTime::from_hms_opt(
            u32::from(self.hour_of_day),
            u32::from(self.minute_of_hour - 1) * 15,
            0,
        )
        .expect("validated interval code")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EncodedCategoricals {
    pub road_type: u8,
    pub left_turn_type: u8,
    pub direction: Option<u8>,
    pub interval: IntervalCode,
}

fn normalize(raw: &str) -> String {
    raw.trim().to_ascii_lowercase().replace('_', "-")
}

fn field<'a>(raw: &'a HashMap<String, String>, name: &str) -> Result<&'a str, DatasetError> {
    raw.get(name).map(String::as_str).ok_or_else(|| DatasetError::Encoding {
        field: name.into(),
        reason: "missing field".into(),
    })
}

fn parse_time(raw: &str) -> Option<NaiveTime> {
    let raw = raw.trim();
    for fmt in ["%H:%M", "%H:%M:%S"] {
        if let Ok(t) = NaiveTime::parse_from_str(raw, fmt) {
            return Some(t);
        }
    }
    for fmt in ["%Y-%m-%d %H:%M", "%Y-%m-%d %H:%M:%S", "%Y-%m-%dT%H:%M", "%Y-%m-%dT%H:%M:%S"] {
        if let Ok(dt) = NaiveDateTime::parse_from_str(raw, fmt) {
            return Some(dt.time());
        }
    }
    None
}

/// Encodes a raw record's road type, left-turn type, optional direction and
/// interval timing.
///
/// Recognised keys: `road_type`, `left_turn_type`, `direction` (optional), and
/// either `timestamp` or the pair `quarter` (1..=4) / `hour` (0..=23).
pub fn encode_categoricals(raw: &HashMap<String, String>) -> Result<EncodedCategoricals, DatasetError> {
    let road = field(raw, "road_type")?;
    let road_type = RoadType::parse(road).ok_or_else(|| DatasetError::Encoding {
        field: "road_type".into(),
        reason: format!("unknown category {road:?}"),
    })?;
    let left = field(raw, "left_turn_type")?;
    let left_turn_type = LeftTurnType::parse(left).ok_or_else(|| DatasetError::Encoding {
        field: "left_turn_type".into(),
        reason: format!("unknown category {left:?}"),
    })?;
    let direction = match raw.get("direction") {
        Some(d) => Some(
            d.parse::<Approach>()
                .map_err(|reason| DatasetError::Encoding {
                    field: "direction".into(),
                    reason,
                })?
                .code(),
        ),
        None => None,
    };
    let interval = if let Some(ts) = raw.get("timestamp") {
        let t = parse_time(ts).ok_or_else(|| DatasetError::Encoding {
            field: "timestamp".into(),
            reason: format!("unparseable time {ts:?}"),
        })?;
        IntervalCode::from_time(t)
    } else {
        let quarter = field(raw, "quarter")?;
        let hour = field(raw, "hour")?;
        let quarter: i64 = quarter.trim().parse().map_err(|_| DatasetError::Encoding {
            field: "quarter".into(),
            reason: format!("not an integer: {quarter:?}"),
        })?;
        let hour: i64 = hour.trim().parse().map_err(|_| DatasetError::Encoding {
            field: "hour".into(),
            reason: format!("not an integer: {hour:?}"),
        })?;
        if !(0..24).contains(&hour) {
            return Err(DatasetError::Encoding {
                field: "hour".into(),
                reason: format!("hour must be in [0, 24), got {hour}"),
            });
        }
        if !(1..=4).contains(&quarter) {
            return Err(DatasetError::Encoding {
                field: "quarter".into(),
                reason: format!("quarter must be in 1..=4, got {quarter}"),
            });
        }
        IntervalCode::new(quarter as u8, hour as u8)?
    };
    Ok(EncodedCategoricals {
        road_type: road_type.code(),
        left_turn_type: left_turn_type.code(),
        direction,
        interval,
    })
}
