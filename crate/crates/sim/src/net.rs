//! Event queue and link model.

use std::collections::BTreeMap;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::scenario::NetworkSpec;

/// Events ordered by time, ties broken by insertion order.
pub struct EventQueue<E> {
    events: BTreeMap<(u64, u64), E>,
    next_seq: u64,
}

impl<E> Default for EventQueue<E> {
    fn default() -> Self {
        EventQueue {
            events: BTreeMap::new(),
            next_seq: 0,
        }
    }
}

impl<E> EventQueue<E> {
    pub fn push(&mut self, time: u64, event: E) {
        self.events.insert((time, self.next_seq), event);
        self.next_seq += 1;
    }

    pub fn pop(&mut self) -> Option<(u64, E)> {
        self.events.pop_first().map(|((t, _), e)| (t, e))
    }

    pub fn peek_time(&self) -> Option<u64> {
        self.events.keys().next().map(|(t, _)| *t)
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }
}

/// Eventually reliable links: a message may be dropped up to
/// `max_retransmissions` times, each drop costing a retransmit timeout, and
/// is then delivered.
pub struct Links {
    spec: NetworkSpec,
    rng: ChaCha8Rng,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Transit {
    pub delay: u64,
    pub drops: u32,
}

impl Links {
    pub fn new(spec: NetworkSpec, rng: ChaCha8Rng) -> Self {
        Links { spec, rng }
    }

    pub fn transit(&mut self) -> Transit {
        let mut drops = 0;
        while drops < self.spec.max_retransmissions
            && self.spec.drop_probability > 0.0
            && self.rng.gen_bool(self.spec.drop_probability)
        {
            drops += 1;
        }
        let base = self.rng.gen_range(self.spec.min_delay..=self.spec.max_delay);
        Transit {
            delay: base + drops as u64 * self.spec.retransmit_timeout,
            drops,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn ties_pop_in_insertion_order() {
        let mut q = EventQueue::default();
        q.push(5, "b");
        q.push(3, "a");
        q.push(5, "c");
        let order: Vec<_> = std::iter::from_fn(|| q.pop()).collect();
        assert_eq!(order, vec![(3, "a"), (5, "b"), (5, "c")]);
    }

    #[test]
    fn delivery_is_forced_after_the_retransmission_cap() {
        let spec = NetworkSpec {
            drop_probability: 0.99,
            max_retransmissions: 2,
            ..NetworkSpec::default()
        };
        let mut links = Links::new(spec.clone(), ChaCha8Rng::seed_from_u64(1));
        for _ in 0..200 {
            let t = links.transit();
            assert!(t.drops <= 2);
            let base = t.delay - t.drops as u64 * spec.retransmit_timeout;
            assert!((spec.min_delay..=spec.max_delay).contains(&base));
        }
    }
}
