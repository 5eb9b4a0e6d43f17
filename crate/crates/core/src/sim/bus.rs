//! Virtual wired-AND bus wire.

use serde::{Deserialize, Serialize};

use crate::can::Level;

/// What one node's transmit line is doing.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Drive {
    Idle,
    Level(Level),
}

impl From<Level> for Drive {
    fn from(l: Level) -> Self {
        Drive::Level(l)
    }
}

/// Resolve the bus level from every node's driver: dominant wins, idle
/// transmitters release the line (recessive).
pub fn resolve_bus(drivers: &[Drive]) -> Level {
    if drivers.contains(&Drive::Level(Level::Dominant)) {
        Level::Dominant
    } else {
        Level::Recessive
    }
}
