use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::can::CanFrame;
use crate::TrafficClass;

/// Bytes contributed by one frame: 2-byte big-endian ID + 8 payload bytes.
pub const FRAME_FEATURE_LEN: usize = 10;
pub const WINDOW_FRAMES: usize = 4;
pub const FEATURE_LEN: usize = FRAME_FEATURE_LEN * WINDOW_FRAMES;

/// Feature bytes of one frame; payload zero-padded to 8 bytes.
pub fn extract_features(frame: &CanFrame) -> [u8; FRAME_FEATURE_LEN] {
    let mut out = [0u8; FRAME_FEATURE_LEN];
    out[..2].copy_from_slice(&frame.id().to_be_bytes());
    let p = frame.payload();
    out[2..2 + p.len()].copy_from_slice(p);
    out
}

/// FIFO of the most recent frames' features, oldest first.
#[derive(Debug, Clone, Default)]
pub struct FeatureWindow {
    slots: VecDeque<[u8; FRAME_FEATURE_LEN]>,
}

impl FeatureWindow {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, frame: &CanFrame) {
        if self.slots.len() == WINDOW_FRAMES {
            self.slots.pop_front();
        }
        self.slots.push_back(extract_features(frame));
    }

    pub fn is_full(&self) -> bool {
        self.slots.len() == WINDOW_FRAMES
    }

    pub fn clear(&mut self) {
        self.slots.clear();
    }

    /// Concatenated window, available once 4 frames have been seen.
    pub fn features(&self) -> Option<[u8; FEATURE_LEN]> {
        if !self.is_full() {
            return None;
        }
        let mut out = [0u8; FEATURE_LEN];
        for (chunk, slot) in out.chunks_exact_mut(FRAME_FEATURE_LEN).zip(&self.slots) {
            chunk.copy_from_slice(slot);
        }
        Some(out)
    }
}

/// A 40-byte window with the label of its newest frame.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabeledWindow {
    #[serde(with = "serde_bytes_array")]
    pub features: [u8; FEATURE_LEN],
    pub label: TrafficClass,
}

/// Slide over a labelled frame sequence; one window per frame after the
/// first three.
pub fn windows_from_trace<'a>(
    frames: impl IntoIterator<Item = (&'a CanFrame, TrafficClass)>,
) -> Vec<LabeledWindow> {
    let mut w = FeatureWindow::new();
    let mut out = Vec::new();
    for (frame, label) in frames {
        w.push(frame);
        if let Some(features) = w.features() {
            out.push(LabeledWindow { features, label });
        }
    }
    out
}

mod serde_bytes_array {
    use super::FEATURE_LEN;
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &[u8; FEATURE_LEN], s: S) -> Result<S::Ok, S::Error> {
        s.collect_seq(v.iter())
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<[u8; FEATURE_LEN], D::Error> {
        let v = Vec::<u8>::deserialize(d)?;
        v.try_into()
            .map_err(|v: Vec<u8>| serde::de::Error::invalid_length(v.len(), &"40 bytes"))
    }
}
