use std::fmt;

use serde::{Deserialize, Serialize};

use super::CanError;
use crate::time::SimTime;

pub const MAX_STD_ID: u16 = 0x7FF;
pub const MAX_DLC: u8 = 8;

/// One CAN 2.0A data or remote frame.
///
/// Construction validates the identifier range and the payload length, so
/// every value of this type is encodable.
#[derive(Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "RawFrame", into = "RawFrame")]
pub struct CanFrame {
    id: u16,
    rtr: bool,
    dlc: u8,
    data: [u8; 8],
    timestamp: Option<SimTime>,
}

impl CanFrame {
    /// Data frame with `payload.len()` as DLC.
    pub fn new(id: u16, payload: &[u8]) -> Result<Self, CanError> {
        check_id(id)?;
        if payload.len() > usize::from(MAX_DLC) {
            return Err(CanError::InvalidFrame(format!(
                "payload of {} bytes exceeds 8",
                payload.len()
            )));
        }
        let mut data = [0u8; 8];
        data[..payload.len()].copy_from_slice(payload);
        Ok(CanFrame {
            id,
            rtr: false,
            dlc: payload.len() as u8,
            data,
            timestamp: None,
        })
    }

    /// Remote frame requesting `dlc` bytes; carries no payload.
    pub fn remote(id: u16, dlc: u8) -> Result<Self, CanError> {
        check_id(id)?;
        if dlc > MAX_DLC {
            return Err(CanError::InvalidFrame(format!("dlc {dlc} exceeds 8")));
        }
        Ok(CanFrame {
            id,
            rtr: true,
            dlc,
            data: [0; 8],
            timestamp: None,
        })
    }

    pub fn id(&self) -> u16 {
        self.id
    }

    pub fn is_remote(&self) -> bool {
        self.rtr
    }

    pub fn dlc(&self) -> u8 {
        self.dlc
    }

    /// Payload bytes; empty for remote frames.
    pub fn payload(&self) -> &[u8] {
        if self.rtr {
            &[]
        } else {
            &self.data[..usize::from(self.dlc)]
        }
    }

    /// Start-of-frame time, set once the frame has been on the bus.
    pub fn timestamp(&self) -> Option<SimTime> {
        self.timestamp
    }

    pub fn with_timestamp(mut self, sof: SimTime) -> Self {
        self.timestamp = Some(sof);
        self
    }

    pub fn without_timestamp(mut self) -> Self {
        self.timestamp = None;
        self
    }
}

fn check_id(id: u16) -> Result<(), CanError> {
    if id > MAX_STD_ID {
        Err(CanError::InvalidFrame(format!(
            "identifier {id:#x} exceeds 11 bits"
        )))
    } else {
        Ok(())
    }
}

impl fmt::Debug for CanFrame {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:03X}", self.id)?;
        if self.rtr {
            write!(f, " RTR dlc={}", self.dlc)?;
        } else {
            write!(f, " [{}]", self.dlc)?;
            for b in self.payload() {
                write!(f, " {b:02X}")?;
            }
        }
        if let Some(t) = self.timestamp {
            write!(f, " @{t}")?;
        }
        Ok(())
    }
}

#[derive(Serialize, Deserialize)]
struct RawFrame {
    id: u16,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    rtr: bool,
    #[serde(default)]
    dlc: Option<u8>,
    #[serde(default)]
    data: Vec<u8>,
}

impl TryFrom<RawFrame> for CanFrame {
    type Error = CanError;
    fn try_from(raw: RawFrame) -> Result<Self, CanError> {
        if raw.rtr {
            if !raw.data.is_empty() {
                return Err(CanError::InvalidFrame("remote frame with payload".into()));
            }
            return CanFrame::remote(raw.id, raw.dlc.unwrap_or(0));
        }
        if let Some(dlc) = raw.dlc {
            if usize::from(dlc) != raw.data.len() {
                return Err(CanError::InvalidFrame(format!(
                    "dlc {dlc} does not match {} payload bytes",
                    raw.data.len()
                )));
            }
        }
        CanFrame::new(raw.id, &raw.data)
    }
}

impl From<CanFrame> for RawFrame {
    fn from(f: CanFrame) -> RawFrame {
        RawFrame {
            id: f.id,
            rtr: f.rtr,
            dlc: Some(f.dlc),
            data: f.payload().to_vec(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_out_of_range_id() {
        assert!(CanFrame::new(0x800, &[]).is_err());
        assert!(CanFrame::new(0x7FF, &[]).is_ok());
    }

    #[test]
    fn rejects_long_payload() {
        assert!(CanFrame::new(1, &[0; 9]).is_err());
        assert!(CanFrame::remote(1, 9).is_err());
    }

    #[test]
    fn remote_frame_has_no_payload() {
        let f = CanFrame::remote(0x10, 4).unwrap();
        assert_eq!(f.dlc(), 4);
        assert!(f.payload().is_empty());
    }

    #[test]
    fn serde_checks_dlc() {
        let ok: CanFrame = serde_json::from_str(r#"{"id":790,"dlc":2,"data":[1,2]}"#).unwrap();
        assert_eq!(ok.payload(), &[1, 2]);
        assert!(serde_json::from_str::<CanFrame>(r#"{"id":790,"dlc":3,"data":[1,2]}"#).is_err());
        assert!(serde_json::from_str::<CanFrame>(r#"{"id":4096,"data":[]}"#).is_err());
    }
}
