//! Prioritized sequence replay with proportional sampling.
//!
//! Sequences live in a fixed-size ring evicted strictly FIFO. Sampling draws
//! independently with probability `p_i^alpha / sum_j p_j^alpha`; the tree
//! stores the exponentiated masses. Handles are generation-tagged so a
//! priority update that races with eviction of the same slot is detected
//! and skipped instead of corrupting an unrelated sequence.

use super::sum_tree::SumTree;
use crate::error::{Result, SeedError};
use rand::Rng;
use std::sync::Mutex;

/// Stable handle to an inserted sequence; stale after eviction.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct SeqId {
    slot: u32,
    generation: u64,
}

pub struct SampleBatch<T> {
    pub items: Vec<T>,
    pub ids: Vec<SeqId>,
    /// Importance weights `(N * P(i))^(-beta)`, normalized by the batch max.
    pub weights: Vec<f32>,
}

struct State<T> {
    entries: Vec<Option<T>>,
    generations: Vec<u64>,
    tree: SumTree,
    next_slot: usize,
    size: usize,
    /// Highest raw (pre-exponent) priority ever assigned; seeds new inserts.
    max_priority: f64,
}

pub struct PrioritizedBuffer<T> {
    state: Mutex<State<T>>,
    capacity: usize,
    min_size: usize,
    alpha: f64,
    beta: f64,
}

impl<T: Clone> PrioritizedBuffer<T> {
    pub fn new(capacity: usize, min_size: usize, alpha: f64, beta: f64) -> Self {
        assert!(capacity > 0 && min_size <= capacity);
        PrioritizedBuffer {
            state: Mutex::new(State {
                entries: (0..capacity).map(|_| None).collect(),
                generations: vec![0; capacity],
                tree: SumTree::new(capacity),
                next_slot: 0,
                size: 0,
                max_priority: 0.0,
            }),
            capacity,
            min_size,
            alpha,
            beta,
        }
    }

    /// Inserts with the maximum priority seen so far (1.0 before any
    /// priority exists), so fresh data is sampled promptly.
    pub fn insert(&self, item: T) -> SeqId {
        let p = {
            let st = self.state.lock().expect("replay lock");
            if st.max_priority > 0.0 {
                st.max_priority
            } else {
                1.0
            }
        };
        self.insert_with_priority(item, p)
            .expect("max-seen priority is valid")
    }

    /// Inserts with an explicit raw priority, evicting the oldest sequence
    /// when full.
    pub fn insert_with_priority(&self, item: T, priority: f64) -> Result<SeqId> {
        if !(priority >= 0.0 && priority.is_finite()) {
            return Err(SeedError::config("priority must be finite and >= 0"));
        }
        let mut st = self.state.lock().expect("replay lock");
        let slot = st.next_slot;
        st.next_slot = (st.next_slot + 1) % self.capacity;
        if st.entries[slot].is_none() {
            st.size += 1;
        }
        st.entries[slot] = Some(item);
        st.generations[slot] += 1;
        let mass = priority.powf(self.alpha);
        st.tree.set(slot, mass);
        st.max_priority = st.max_priority.max(priority);
        Ok(SeqId {
            slot: slot as u32,
            generation: st.generations[slot],
        })
    }

    pub fn len(&self) -> usize {
        self.state.lock().expect("replay lock").size
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn is_ready(&self) -> bool {
        self.len() >= self.min_size
    }

    /// Draws `batch` sequences i.i.d. proportional to priority mass.
    pub fn sample(&self, batch: usize, rng: &mut impl Rng) -> Result<SampleBatch<T>> {
        let st = self.state.lock().expect("replay lock");
        if st.size < self.min_size {
            return Err(SeedError::NotReady("replay below minimum size"));
        }
        let total = st.tree.total();
        if total <= 0.0 {
            return Err(SeedError::NotReady("replay has no sampling mass"));
        }
        let n = st.size as f64;
        let mut items = Vec::with_capacity(batch);
        let mut ids = Vec::with_capacity(batch);
        let mut weights = Vec::with_capacity(batch);
        for _ in 0..batch {
            let slot = st.tree.find_prefix(rng.gen::<f64>() * total);
            let item = st.entries[slot]
                .as_ref()
                .expect("massed slots are occupied")
                .clone();
            let prob = st.tree.get(slot) / total;
            items.push(item);
            ids.push(SeqId {
                slot: slot as u32,
                generation: st.generations[slot],
            });
            weights.push((n * prob).powf(-self.beta) as f32);
        }
        let max_w = weights.iter().cloned().fold(f32::MIN, f32::max);
        for w in weights.iter_mut() {
            *w /= max_w;
        }
        Ok(SampleBatch {
            items,
            ids,
            weights,
        })
    }

    /// Applies fresh priorities; ids whose sequence was evicted (or
    /// overwritten) since sampling are skipped.
    pub fn update_priorities(&self, ids: &[SeqId], priorities: &[f64]) -> Result<()> {
        if ids.len() != priorities.len() {
            return Err(SeedError::Shape {
                context: "priority updates",
                expected: ids.len(),
                actual: priorities.len(),
            });
        }
        let mut st = self.state.lock().expect("replay lock");
        for (id, &p) in ids.iter().zip(priorities) {
            if !(p >= 0.0 && p.is_finite()) {
                return Err(SeedError::config("priority must be finite and >= 0"));
            }
            let slot = id.slot as usize;
            if st.generations[slot] != id.generation || st.entries[slot].is_none() {
                continue;
            }
            st.tree.set(slot, p.powf(self.alpha));
            st.max_priority = st.max_priority.max(p);
        }
        Ok(())
    }

    /// Root of the priority mass tree (for consistency checks).
    pub fn mass_total(&self) -> f64 {
        self.state.lock().expect("replay lock").tree.total()
    }

    /// Exact sum of `p^alpha` over live entries (oracle for `mass_total`).
    pub fn mass_exact(&self) -> f64 {
        let st = self.state.lock().expect("replay lock");
        (0..self.capacity)
            .filter(|&s| st.entries[s].is_some())
            .map(|s| st.tree.get(s))
            .sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_chacha::rand_core::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn fifo_eviction_at_capacity() {
        let buf = PrioritizedBuffer::new(3, 1, 1.0, 0.5);
        for i in 0..4 {
            buf.insert_with_priority(i, 1.0).unwrap();
        }
        assert_eq!(buf.len(), 3);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let seen: std::collections::HashSet<i32> = (0..200)
            .flat_map(|_| buf.sample(4, &mut rng).unwrap().items)
            .collect();
        assert!(!seen.contains(&0), "evicted item still sampled");
        assert_eq!(seen.len(), 3);
    }

    #[test]
    fn zero_priority_is_never_sampled() {
        let buf = PrioritizedBuffer::new(4, 1, 0.9, 0.6);
        buf.insert_with_priority("never", 0.0).unwrap();
        buf.insert_with_priority("always", 1.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..500 {
            let s = buf.sample(1, &mut rng).unwrap();
            assert_eq!(s.items[0], "always");
        }
    }

    #[test]
    fn proportional_sampling_frequencies() {
        // priorities [1, 16] with alpha 0.9: P(16) = 16^0.9 / (1 + 16^0.9).
        let buf = PrioritizedBuffer::new(2, 2, 0.9, 0.0);
        buf.insert_with_priority(0u8, 1.0).unwrap();
        buf.insert_with_priority(1u8, 16.0).unwrap();
        let expect_hi = 16.0f64.powf(0.9) / (1.0 + 16.0f64.powf(0.9));
        assert!((expect_hi - 0.9238).abs() < 1e-3);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let draws = 100_000;
        let mut hi = 0usize;
        for _ in 0..(draws / 100) {
            let s = buf.sample(100, &mut rng).unwrap();
            hi += s.items.iter().filter(|&&v| v == 1).count();
        }
        let freq = hi as f64 / draws as f64;
        assert!((freq - expect_hi).abs() < 0.02, "freq {freq} vs {expect_hi}");
    }

    #[test]
    fn uniform_priorities_give_unit_weights() {
        let buf = PrioritizedBuffer::new(8, 1, 0.9, 0.6);
        for i in 0..8 {
            buf.insert_with_priority(i, 2.5).unwrap();
        }
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let s = buf.sample(16, &mut rng).unwrap();
        assert!(s.weights.iter().all(|&w| (w - 1.0).abs() < 1e-6));
    }

    #[test]
    fn stale_ids_are_skipped() {
        let buf = PrioritizedBuffer::new(2, 1, 1.0, 0.5);
        let id0 = buf.insert_with_priority(0, 1.0).unwrap();
        buf.insert_with_priority(1, 1.0).unwrap();
        // Evict slot 0 by wrapping around.
        buf.insert_with_priority(2, 1.0).unwrap();
        let before = buf.mass_total();
        buf.update_priorities(&[id0], &[100.0]).unwrap();
        assert_eq!(buf.mass_total(), before, "stale update must be ignored");
    }

    #[test]
    fn update_shifts_sampling_mass() {
        let buf = PrioritizedBuffer::new(2, 1, 1.0, 0.5);
        let a = buf.insert_with_priority("a", 1.0).unwrap();
        buf.insert_with_priority("b", 1.0).unwrap();
        buf.update_priorities(&[a], &[0.0]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        for _ in 0..200 {
            assert_eq!(buf.sample(1, &mut rng).unwrap().items[0], "b");
        }
    }

    #[test]
    fn max_seen_priority_seeds_inserts() {
        let buf = PrioritizedBuffer::new(4, 1, 1.0, 0.5);
        let first = buf.insert("x");
        // No priority seen yet: defaults to 1.0.
        buf.update_priorities(&[first], &[5.0]).unwrap();
        buf.insert("y");
        // "y" should carry priority 5 => mass 5 under alpha=1.
        assert!((buf.mass_total() - 10.0).abs() < 1e-9);
    }

    #[test]
    fn below_min_size_is_not_ready() {
        let buf = PrioritizedBuffer::new(8, 3, 0.9, 0.6);
        buf.insert_with_priority(0, 1.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        assert!(matches!(
            buf.sample(1, &mut rng),
            Err(SeedError::NotReady(_))
        ));
        assert!(!buf.is_ready());
    }

    #[test]
    fn interleaved_inserts_and_updates_keep_root_consistent() {
        let buf = PrioritizedBuffer::new(64, 1, 0.9, 0.6);
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let mut ids = Vec::new();
        for i in 0..1000 {
            if ids.is_empty() || rng.gen_bool(0.6) {
                ids.push(buf.insert_with_priority(i, rng.gen_range(0.0..5.0)).unwrap());
            } else {
                let id = ids[rng.gen_range(0..ids.len())];
                buf.update_priorities(&[id], &[rng.gen_range(0.0..5.0)])
                    .unwrap();
            }
        }
        let (root, exact) = (buf.mass_total(), buf.mass_exact());
        assert!((root - exact).abs() <= 1e-3 * exact.max(1.0));
    }
}
