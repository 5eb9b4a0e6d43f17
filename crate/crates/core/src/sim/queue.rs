//! Stable time-ordered event queue.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use thiserror::Error;

use crate::time::SimTime;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("event scheduled at {at} but the clock is already at {now}")]
pub struct PastEvent {
    pub at: SimTime,
    pub now: SimTime,
}

struct Entry<E> {
    at: SimTime,
    class: u8,
    seq: u64,
    event: E,
}

impl<E> Entry<E> {
    fn key(&self) -> (SimTime, u8, u64) {
        (self.at, self.class, self.seq)
    }
}

impl<E> PartialEq for Entry<E> {
    fn eq(&self, other: &Self) -> bool {
        self.key() == other.key()
    }
}
impl<E> Eq for Entry<E> {}
impl<E> PartialOrd for Entry<E> {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl<E> Ord for Entry<E> {
    fn cmp(&self, other: &Self) -> Ordering {
        // BinaryHeap is a max-heap.
        other.key().cmp(&self.key())
    }
}

/// Events ordered by `(time, priority class, insertion sequence)`.
///
/// Lower classes run first within a tick; equal keys cannot occur because
/// every insertion takes a fresh sequence number.
pub struct EventQueue<E> {
    heap: BinaryHeap<Entry<E>>,
    now: SimTime,
    next_seq: u64,
}

impl<E> Default for EventQueue<E> {
    fn default() -> Self {
        Self::new()
    }
}

impl<E> EventQueue<E> {
    pub fn new() -> Self {
        EventQueue {
            heap: BinaryHeap::new(),
            now: SimTime::ZERO,
            next_seq: 0,
        }
    }

    pub fn now(&self) -> SimTime {
        self.now
    }

    pub fn len(&self) -> usize {
        self.heap.len()
    }

    pub fn is_empty(&self) -> bool {
        self.heap.is_empty()
    }

    pub fn schedule(&mut self, at: SimTime, class: u8, event: E) -> Result<(), PastEvent> {
        if at < self.now {
            return Err(PastEvent { at, now: self.now });
        }
        let seq = self.next_seq;
        self.next_seq += 1;
        self.heap.push(Entry { at, class, seq, event });
        Ok(())
    }

    pub fn peek_time(&self) -> Option<SimTime> {
        self.heap.peek().map(|e| e.at)
    }

    /// Pop the next event if it is due at or before `limit`, advancing the
    /// clock to its time.
    pub fn pop_due(&mut self, limit: SimTime) -> Option<(SimTime, E)> {
        if self.heap.peek()?.at > limit {
            return None;
        }
        let e = self.heap.pop()?;
        self.now = e.at;
        Some((e.at, e.event))
    }

    /// Move the clock forward with no event; never moves backwards.
    pub fn advance_to(&mut self, t: SimTime) {
        if t > self.now {
            self.now = t;
        }
    }

    pub fn clear(&mut self) {
        self.heap.clear();
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn earlier_first_then_class_then_insertion() {
        let mut q = EventQueue::new();
        q.schedule(SimTime(5), 1, "late").unwrap();
        q.schedule(SimTime(0), 2, "b").unwrap();
        q.schedule(SimTime(0), 2, "c").unwrap();
        q.schedule(SimTime(0), 0, "a").unwrap();
        let order: Vec<_> = std::iter::from_fn(|| q.pop_due(SimTime(10)).map(|(_, e)| e)).collect();
        assert_eq!(order, ["a", "b", "c", "late"]);
    }

    #[test]
    fn schedule_at_now_runs_before_later() {
        let mut q = EventQueue::new();
        q.schedule(SimTime(3), 0, 2).unwrap();
        q.advance_to(SimTime(2));
        q.schedule(SimTime(2), 9, 1).unwrap();
        assert_eq!(q.pop_due(SimTime(3)), Some((SimTime(2), 1)));
    }

    #[test]
    fn past_event_rejected() {
        let mut q = EventQueue::<()>::new();
        q.advance_to(SimTime(10));
        assert_eq!(
            q.schedule(SimTime(9), 0, ()),
            Err(PastEvent { at: SimTime(9), now: SimTime(10) })
        );
    }

    #[test]
    fn pop_respects_limit() {
        let mut q = EventQueue::new();
        q.schedule(SimTime(7), 0, ()).unwrap();
        assert!(q.pop_due(SimTime(6)).is_none());
        assert_eq!(q.now(), SimTime(0));
        assert!(q.pop_due(SimTime(7)).is_some());
        assert_eq!(q.now(), SimTime(7));
    }
}
