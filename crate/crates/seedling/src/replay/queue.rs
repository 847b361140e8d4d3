//! Bounded multi-producer multi-consumer FIFO.
//!
//! The default policy blocks producers when full, which is what ties actor
//! speed to trainer speed in the on-policy path: actors stall on their next
//! inference reply until the trainer drains trajectories. Drop-oldest exists
//! for throughput benchmarking where training is intentionally absent.

use std::collections::VecDeque;
use std::sync::{Condvar, Mutex};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum OverflowPolicy {
    /// Producers wait for space (backpressure).
    Block,
    /// The oldest queued item is discarded to make room.
    DropOldest,
}

struct State<T> {
    items: VecDeque<T>,
    closed: bool,
    dropped: u64,
}

pub struct TrajectoryQueue<T> {
    state: Mutex<State<T>>,
    not_empty: Condvar,
    not_full: Condvar,
    capacity: usize,
    policy: OverflowPolicy,
}

impl<T> TrajectoryQueue<T> {
    pub fn new(capacity: usize, policy: OverflowPolicy) -> Self {
        assert!(capacity > 0, "queue capacity must be >= 1");
        TrajectoryQueue {
            state: Mutex::new(State {
                items: VecDeque::with_capacity(capacity),
                closed: false,
                dropped: 0,
            }),
            not_empty: Condvar::new(),
            not_full: Condvar::new(),
            capacity,
            policy,
        }
    }

    /// Enqueues an item, blocking or dropping the oldest when full per
    /// policy. Returns the item back if the queue is closed.
    pub fn push(&self, item: T) -> Result<(), T> {
        let mut st = self.state.lock().expect("queue lock");
        loop {
            if st.closed {
                return Err(item);
            }
            if st.items.len() < self.capacity {
                st.items.push_back(item);
                self.not_empty.notify_one();
                return Ok(());
            }
            match self.policy {
                OverflowPolicy::DropOldest => {
                    st.items.pop_front();
                    st.dropped += 1;
                }
                OverflowPolicy::Block => {
                    st = self.not_full.wait(st).expect("queue lock");
                }
            }
        }
    }

    /// Dequeues the oldest item, blocking while empty. Returns `None` once
    /// the queue is closed and drained.
    pub fn pop(&self) -> Option<T> {
        let mut st = self.state.lock().expect("queue lock");
        loop {
            if let Some(item) = st.items.pop_front() {
                self.not_full.notify_one();
                return Some(item);
            }
            if st.closed {
                return None;
            }
            st = self.not_empty.wait(st).expect("queue lock");
        }
    }

    /// Non-blocking dequeue.
    pub fn try_pop(&self) -> Option<T> {
        let mut st = self.state.lock().expect("queue lock");
        let item = st.items.pop_front();
        if item.is_some() {
            self.not_full.notify_one();
        }
        item
    }

    /// Wakes all waiters; subsequent pushes fail and pops drain then stop.
    pub fn close(&self) {
        let mut st = self.state.lock().expect("queue lock");
        st.closed = true;
        self.not_empty.notify_all();
        self.not_full.notify_all();
    }

    pub fn len(&self) -> usize {
        self.state.lock().expect("queue lock").items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Items discarded under [`OverflowPolicy::DropOldest`].
    pub fn dropped(&self) -> u64 {
        self.state.lock().expect("queue lock").dropped
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::Arc;
    use std::time::Duration;

    #[test]
    fn pops_in_push_order() {
        let q = TrajectoryQueue::new(8, OverflowPolicy::Block);
        for i in 0..5 {
            q.push(i).unwrap();
        }
        for i in 0..5 {
            assert_eq!(q.pop(), Some(i));
        }
        assert!(q.try_pop().is_none());
    }

    #[test]
    fn blocking_push_waits_for_space() {
        let q = Arc::new(TrajectoryQueue::new(1, OverflowPolicy::Block));
        q.push(1).unwrap();
        let q2 = Arc::clone(&q);
        let producer = std::thread::spawn(move || q2.push(2));
        // The producer must be blocked; give it time to run.
        std::thread::sleep(Duration::from_millis(30));
        assert_eq!(q.len(), 1);
        assert_eq!(q.pop(), Some(1));
        producer.join().unwrap().unwrap();
        assert_eq!(q.pop(), Some(2));
    }

    #[test]
    fn drop_oldest_discards_front() {
        let q = TrajectoryQueue::new(2, OverflowPolicy::DropOldest);
        q.push(1).unwrap();
        q.push(2).unwrap();
        q.push(3).unwrap();
        assert_eq!(q.dropped(), 1);
        assert_eq!(q.pop(), Some(2));
        assert_eq!(q.pop(), Some(3));
    }

    #[test]
    fn close_unblocks_consumers_and_rejects_producers() {
        let q = Arc::new(TrajectoryQueue::<u32>::new(4, OverflowPolicy::Block));
        let q2 = Arc::clone(&q);
        let consumer = std::thread::spawn(move || q2.pop());
        std::thread::sleep(Duration::from_millis(20));
        q.close();
        assert_eq!(consumer.join().unwrap(), None);
        assert_eq!(q.push(7), Err(7));
    }

    #[test]
    fn close_drains_remaining_items() {
        let q = TrajectoryQueue::new(4, OverflowPolicy::Block);
        q.push(1).unwrap();
        q.push(2).unwrap();
        q.close();
        assert_eq!(q.pop(), Some(1));
        assert_eq!(q.pop(), Some(2));
        assert_eq!(q.pop(), None);
    }

    #[test]
    fn per_producer_order_is_preserved() {
        let q = Arc::new(TrajectoryQueue::new(16, OverflowPolicy::Block));
        let mut handles = Vec::new();
        for p in 0..4u64 {
            let q = Arc::clone(&q);
            handles.push(std::thread::spawn(move || {
                for i in 0..100u64 {
                    q.push(p * 1000 + i).unwrap();
                }
            }));
        }
        let mut last_seen = [None::<u64>; 4];
        for _ in 0..400 {
            let v = q.pop().unwrap();
            let p = (v / 1000) as usize;
            let i = v % 1000;
            if let Some(prev) = last_seen[p] {
                assert!(i > prev, "producer {p} reordered: {prev} then {i}");
            }
            last_seen[p] = Some(i);
        }
        for h in handles {
            h.join().unwrap();
        }
    }
}
