use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

/// Traffic category used both as ground-truth label and as IDS output.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum TrafficClass {
    Benign,
    #[serde(rename = "DoS")]
    Dos,
    Fuzzing,
    Spoof,
}

impl TrafficClass {
    pub const ALL: [TrafficClass; 4] = [
        TrafficClass::Benign,
        TrafficClass::Dos,
        TrafficClass::Fuzzing,
        TrafficClass::Spoof,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<TrafficClass> {
        Self::ALL.get(i).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            TrafficClass::Benign => "Benign",
            TrafficClass::Dos => "DoS",
            TrafficClass::Fuzzing => "Fuzzing",
            TrafficClass::Spoof => "Spoof",
        }
    }

    pub fn is_attack(self) -> bool {
        self != TrafficClass::Benign
    }
}

impl fmt::Display for TrafficClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for TrafficClass {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s.trim().to_ascii_lowercase().as_str() {
            "benign" | "normal" | "r" => Ok(TrafficClass::Benign),
            "dos" | "flood" | "dosflood" => Ok(TrafficClass::Dos),
            "fuzz" | "fuzzing" | "fuzzy" => Ok(TrafficClass::Fuzzing),
            "spoof" | "spoofing" | "rpm" | "rpm-spoof" | "gear" | "gear-spoof" => {
                Ok(TrafficClass::Spoof)
            }
            other => Err(format!("unknown traffic class `{other}`")),
        }
    }
}
