use serde::{Deserialize, Serialize};

use crate::can::{frame_duration, CanFrame};
use crate::time::SimTime;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum KnownTag {
    #[serde(rename = "DoS")]
    Dos,
    Unknown,
}

/// Mark flooding: a frame with `dos_id` whose gap to the previous or next
/// frame with the same identifier is under two frame times.
///
/// `log` is `(start-of-frame, frame)` in bus order.
pub fn tag_known_attacks(log: &[(SimTime, CanFrame)], dos_id: u16) -> Vec<KnownTag> {
    let flood: Vec<usize> = log
        .iter()
        .enumerate()
        .filter(|(_, (_, f))| f.id() == dos_id)
        .map(|(i, _)| i)
        .collect();
    let mut tags = vec![KnownTag::Unknown; log.len()];
    for (k, &i) in flood.iter().enumerate() {
        let (t, f) = &log[i];
        let threshold = 2 * frame_duration(f).ticks();
        let close = |j: usize| {
            let other = log[j].0;
            let gap = if other > *t { other - *t } else { *t - other };
            gap < threshold
        };
        let prev = k.checked_sub(1).map(|p| close(flood[p])).unwrap_or(false);
        let next = flood.get(k + 1).map(|&n| close(n)).unwrap_or(false);
        if prev || next {
            tags[i] = KnownTag::Dos;
        }
    }
    tags
}
