//! Seeded event queue.
//!
//! Events are ordered by logical time. Events with equal time are ordered by
//! a random key drawn from the seeded generator when they are enqueued, so a
//! seed fixes one interleaving and different seeds explore others.

use std::cmp::{Ordering, Reverse};
use std::collections::BinaryHeap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::SimEvent;

#[derive(Debug)]
struct Queued {
    time: u64,
    tiebreak: u64,
    seq: u64,
    event: SimEvent,
}

impl Queued {
    fn key(&self) -> (u64, u64, u64) {
        (self.time, self.tiebreak, self.seq)
    }
}

impl PartialEq for Queued {
    fn eq(&self, other: &Self) -> bool {
        self.key() == other.key()
    }
}

impl Eq for Queued {}

impl PartialOrd for Queued {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Queued {
    fn cmp(&self, other: &Self) -> Ordering {
        self.key().cmp(&other.key())
    }
}

#[derive(Debug)]
pub struct EventQueue {
    heap: BinaryHeap<Reverse<Queued>>,
    rng: ChaCha8Rng,
    seq: u64,
}

impl EventQueue {
    pub fn new(seed: u64) -> Self {
        EventQueue { heap: BinaryHeap::new(), rng: ChaCha8Rng::seed_from_u64(seed), seq: 0 }
    }

    pub fn push(&mut self, event: SimEvent) {
        let tiebreak = self.rng.gen();
        self.seq += 1;
        self.heap.push(Reverse(Queued { time: event.time, tiebreak, seq: self.seq, event }));
    }

    /// The pending event with the smallest time; `None` when empty.
    pub fn next_event(&mut self) -> Option<SimEvent> {
        self.heap.pop().map(|Reverse(q)| q.event)
    }

    pub fn len(&self) -> usize {
        self.heap.len()
    }

    pub fn is_empty(&self) -> bool {
        self.heap.is_empty()
    }
}
