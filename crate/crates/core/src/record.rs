//! The measurement record posted by agents and stored by the collector.
//!
//! Field names are kept exactly as they appear on the wire. Keys outside the
//! schema are carried in `extra` and serialized back verbatim, after the
//! schema fields.

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use thiserror::Error;

pub const FIELD_DATE: &str = "Date";
pub const FIELD_ISP: &str = "yourIsp";
pub const FIELD_IP: &str = "yourIp";
pub const FIELD_RTT: &str = "candidatePair_RTT";
pub const FIELD_YOUR_ID: &str = "yourID";
pub const FIELD_PEER_ID: &str = "peerID";

/// Extension key: probe octets sent towards the peer during the interval.
pub const EXT_BYTES_SENT: &str = "bytesSent";
/// Extension key: jitter estimate for the peer at report time, ms.
pub const EXT_JITTER_MS: &str = "jitterMs";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeasurementRecord {
    /// Client wall clock, Unix milliseconds.
    #[serde(rename = "Date")]
    pub date: u64,
    #[serde(rename = "yourIsp")]
    pub your_isp: String,
    #[serde(rename = "yourIp")]
    pub your_ip: String,
    /// RTT of the peer connection, ms.
    #[serde(rename = "candidatePair_RTT")]
    pub candidate_pair_rtt: f64,
    #[serde(rename = "yourID")]
    pub your_id: String,
    #[serde(rename = "peerID")]
    pub peer_id: String,
    #[serde(flatten)]
    pub extra: Map<String, Value>,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("schema violation on `{field}`: {reason}")]
pub struct SchemaViolation {
    pub field: String,
    pub reason: String,
}

impl SchemaViolation {
    fn new(field: &str, reason: impl Into<String>) -> Self {
        Self {
            field: field.to_string(),
            reason: reason.into(),
        }
    }
}

impl MeasurementRecord {
    pub fn new(
        date: u64,
        your_id: impl Into<String>,
        peer_id: impl Into<String>,
        rtt_ms: f64,
    ) -> Self {
        Self {
            date,
            your_isp: String::new(),
            your_ip: String::new(),
            candidate_pair_rtt: rtt_ms,
            your_id: your_id.into(),
            peer_id: peer_id.into(),
            extra: Map::new(),
        }
    }

    /// Checks the value-level invariants of an already typed record.
    pub fn validate(&self) -> Result<(), SchemaViolation> {
        if self.date == 0 {
            return Err(SchemaViolation::new(FIELD_DATE, "must be positive"));
        }
        if !self.candidate_pair_rtt.is_finite() || self.candidate_pair_rtt < 0.0 {
            return Err(SchemaViolation::new(
                FIELD_RTT,
                "must be a finite non-negative number",
            ));
        }
        if self.your_id.is_empty() {
            return Err(SchemaViolation::new(FIELD_YOUR_ID, "must be nonempty"));
        }
        if self.peer_id.is_empty() {
            return Err(SchemaViolation::new(FIELD_PEER_ID, "must be nonempty"));
        }
        if self.your_id == self.peer_id {
            return Err(SchemaViolation::new(
                FIELD_PEER_ID,
                "must differ from yourID",
            ));
        }
        Ok(())
    }

    /// Validates an untyped JSON value field by field, naming the first
    /// offending field.
    pub fn from_value(value: Value) -> Result<Self, SchemaViolation> {
        let Value::Object(mut obj) = value else {
            return Err(SchemaViolation::new("$", "record must be a JSON object"));
        };
        let date = match obj.shift_remove(FIELD_DATE) {
            Some(v) => v
                .as_u64()
                .ok_or_else(|| SchemaViolation::new(FIELD_DATE, "must be a positive integer"))?,
            None => return Err(missing(FIELD_DATE)),
        };
        let your_isp = take_string(&mut obj, FIELD_ISP)?;
        let your_ip = take_string(&mut obj, FIELD_IP)?;
        let rtt = match obj.shift_remove(FIELD_RTT) {
            Some(v) => v
                .as_f64()
                .ok_or_else(|| SchemaViolation::new(FIELD_RTT, "must be a number"))?,
            None => return Err(missing(FIELD_RTT)),
        };
        let your_id = take_string(&mut obj, FIELD_YOUR_ID)?;
        let peer_id = take_string(&mut obj, FIELD_PEER_ID)?;
        let record = Self {
            date,
            your_isp,
            your_ip,
            candidate_pair_rtt: rtt,
            your_id,
            peer_id,
            extra: obj,
        };
        record.validate()?;
        Ok(record)
    }

    pub fn to_json_line(&self) -> String {
        serde_json::to_string(self).expect("record serializes")
    }
}

fn missing(field: &str) -> SchemaViolation {
    SchemaViolation::new(field, "missing")
}

fn take_string(obj: &mut Map<String, Value>, field: &str) -> Result<String, SchemaViolation> {
    match obj.shift_remove(field) {
        Some(Value::String(s)) => Ok(s),
        Some(_) => Err(SchemaViolation::new(field, "must be a string")),
        None => Err(missing(field)),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    fn valid() -> Value {
        json!({
            "Date": 1_700_000_000_000u64,
            "yourIsp": "ExampleNet",
            "yourIp": "203.0.113.7",
            "candidatePair_RTT": 12.5,
            "yourID": "a",
            "peerID": "b"
        })
    }

    #[test]
    fn accepts_valid_record() {
        let r = MeasurementRecord::from_value(valid()).unwrap();
        assert_eq!(r.your_id, "a");
        assert_eq!(r.candidate_pair_rtt, 12.5);
    }

    #[test]
    fn missing_peer_id_is_named() {
        let mut v = valid();
        v.as_object_mut().unwrap().remove("peerID");
        let err = MeasurementRecord::from_value(v).unwrap_err();
        assert_eq!(err.field, "peerID");
    }

    #[test]
    fn mistyped_fields_are_named() {
        for (field, bad) in [
            ("Date", json!("yesterday")),
            ("Date", json!(-5)),
            ("candidatePair_RTT", json!("10")),
            ("yourIp", json!(17)),
        ] {
            let mut v = valid();
            v[field] = bad;
            assert_eq!(MeasurementRecord::from_value(v).unwrap_err().field, field);
        }
    }

    #[test]
    fn invariants_are_enforced() {
        let mut v = valid();
        v["peerID"] = json!("a");
        assert_eq!(
            MeasurementRecord::from_value(v).unwrap_err().field,
            "peerID"
        );
        let mut v = valid();
        v["candidatePair_RTT"] = json!(-0.5);
        assert_eq!(
            MeasurementRecord::from_value(v).unwrap_err().field,
            "candidatePair_RTT"
        );
        let mut v = valid();
        v["Date"] = json!(0);
        assert_eq!(MeasurementRecord::from_value(v).unwrap_err().field, "Date");
        let mut v = valid();
        v["yourID"] = json!("");
        assert_eq!(
            MeasurementRecord::from_value(v).unwrap_err().field,
            "yourID"
        );
    }

    #[test]
    fn extra_keys_survive_verbatim() {
        let mut v = valid();
        v["bytesSent"] = json!(100);
        v["zz_custom"] = json!({"nested": [1, 2.5, "x"]});
        let r = MeasurementRecord::from_value(v).unwrap();
        let line = r.to_json_line();
        let back: Value = serde_json::from_str(&line).unwrap();
        assert_eq!(back["zz_custom"], json!({"nested": [1, 2.5, "x"]}));
        assert_eq!(back["bytesSent"], json!(100));
        let again = MeasurementRecord::from_value(back).unwrap();
        assert_eq!(again.to_json_line(), line);
    }

    #[test]
    fn rtt_survives_text_round_trip_bit_for_bit() {
        for i in 0..5000u64 {
            let rtt = i as f64 / 7.0;
            let r = MeasurementRecord::new(1, "a", "b", rtt);
            let back: Value = serde_json::from_str(&r.to_json_line()).unwrap();
            let again = MeasurementRecord::from_value(back).unwrap();
            assert_eq!(again.candidate_pair_rtt.to_bits(), rtt.to_bits(), "{rtt}");
        }
    }
}
