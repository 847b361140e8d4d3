//! Dynamic batching of inference requests.
//!
//! Connection readers submit one entry per environment step; inference
//! workers poll and receive batches. A batch is released as soon as it
//! reaches `max_batch` entries, or when the oldest pending entry has waited
//! `max_wait`, whichever comes first. Each (connection, environment) pair
//! may have at most one request in flight: environments run in lock-step
//! with the learner, so a second submission before the response went out
//! means the peer violated the protocol.

use std::collections::{HashSet, VecDeque};
use std::sync::{Condvar, Mutex};
use std::time::{Duration, Instant};

use crate::error::{Result, SeedError};

/// One environment step awaiting inference.
#[derive(Clone, Debug)]
pub struct BatchEntry {
    /// Learner-assigned connection id, unique across the process lifetime.
    pub conn: u64,
    pub actor_id: u32,
    pub env_id: u32,
    pub reward: f32,
    pub done: bool,
    pub obs: Vec<f32>,
    pub submitted_at: Instant,
}

#[derive(Debug)]
pub struct InferenceBatch {
    pub entries: Vec<BatchEntry>,
}

struct BatcherState {
    pending: VecDeque<BatchEntry>,
    in_flight: HashSet<(u64, u32)>,
    closed_conns: HashSet<u64>,
    dropped: u64,
    shutdown: bool,
}

pub struct Batcher {
    state: Mutex<BatcherState>,
    ready: Condvar,
    max_batch: usize,
    max_wait: Duration,
}

impl Batcher {
    pub fn new(max_batch: usize, max_wait: Duration) -> Self {
        assert!(max_batch > 0, "batch size must be positive");
        Batcher {
            state: Mutex::new(BatcherState {
                pending: VecDeque::new(),
                in_flight: HashSet::new(),
                closed_conns: HashSet::new(),
                dropped: 0,
                shutdown: false,
            }),
            ready: Condvar::new(),
            max_batch,
            max_wait,
        }
    }

    /// Queues one request. Returns `Ok(false)` when the entry was dropped
    /// because its connection already closed; the caller should log and move
    /// on. A duplicate submission for an in-flight (connection, environment)
    /// is a protocol error.
    pub fn submit(&self, entry: BatchEntry) -> Result<bool> {
        let mut st = self.state.lock().unwrap();
        if st.shutdown || st.closed_conns.contains(&entry.conn) {
            st.dropped += 1;
            return Ok(false);
        }
        let key = (entry.conn, entry.env_id);
        if !st.in_flight.insert(key) {
            return Err(SeedError::protocol(format!(
                "env {} on connection {} submitted a second request before its response",
                entry.env_id, entry.conn
            )));
        }
        st.pending.push_back(entry);
        self.ready.notify_one();
        Ok(true)
    }

    /// Blocks until a batch is due, then returns up to `max_batch` entries in
    /// submission order. Returns `None` only after [`Batcher::shutdown`] once
    /// the queue has drained.
    pub fn poll(&self) -> Option<InferenceBatch> {
        let mut st = self.state.lock().unwrap();
        loop {
            if st.pending.len() >= self.max_batch {
                return Some(self.take_batch(&mut st));
            }
            if let Some(oldest) = st.pending.front() {
                if st.shutdown {
                    return Some(self.take_batch(&mut st));
                }
                let waited = oldest.submitted_at.elapsed();
                if waited >= self.max_wait {
                    return Some(self.take_batch(&mut st));
                }
                let (next, _) = self
                    .ready
                    .wait_timeout(st, self.max_wait - waited)
                    .unwrap();
                st = next;
            } else if st.shutdown {
                return None;
            } else {
                st = self.ready.wait(st).unwrap();
            }
        }
    }

    fn take_batch(&self, st: &mut BatcherState) -> InferenceBatch {
        let n = st.pending.len().min(self.max_batch);
        let entries = st.pending.drain(..n).collect();
        InferenceBatch { entries }
    }

    /// Clears the in-flight mark once the response has been handed to the
    /// connection writer, allowing the environment's next step.
    pub fn mark_responded(&self, conn: u64, env_id: u32) {
        let mut st = self.state.lock().unwrap();
        st.in_flight.remove(&(conn, env_id));
    }

    /// Marks a connection dead: queued entries from it are discarded and
    /// later submissions are dropped instead of batched.
    pub fn close_conn(&self, conn: u64) {
        let mut st = self.state.lock().unwrap();
        st.closed_conns.insert(conn);
        let before = st.pending.len();
        st.pending.retain(|e| e.conn != conn);
        st.dropped += (before - st.pending.len()) as u64;
        st.in_flight.retain(|&(c, _)| c != conn);
    }

    /// Entries discarded because their connection closed first.
    pub fn dropped(&self) -> u64 {
        self.state.lock().unwrap().dropped
    }

    pub fn shutdown(&self) {
        let mut st = self.state.lock().unwrap();
        st.shutdown = true;
        self.ready.notify_all();
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::Arc;

    fn entry(conn: u64, env_id: u32) -> BatchEntry {
        BatchEntry {
            conn,
            actor_id: conn as u32,
            env_id,
            reward: 0.0,
            done: false,
            obs: vec![0.5],
            submitted_at: Instant::now(),
        }
    }

    #[test]
    fn full_batch_releases_immediately() {
        let b = Batcher::new(4, Duration::from_secs(3600));
        for env in 0..4 {
            assert!(b.submit(entry(1, env)).unwrap());
        }
        let start = Instant::now();
        let batch = b.poll().unwrap();
        assert_eq!(batch.entries.len(), 4);
        assert!(start.elapsed() < Duration::from_secs(1));
        let envs: Vec<u32> = batch.entries.iter().map(|e| e.env_id).collect();
        assert_eq!(envs, [0, 1, 2, 3], "submission order preserved");
    }

    #[test]
    fn timeout_releases_partial_batch() {
        let b = Batcher::new(64, Duration::from_millis(20));
        b.submit(entry(1, 0)).unwrap();
        b.submit(entry(1, 1)).unwrap();
        let start = Instant::now();
        let batch = b.poll().unwrap();
        assert_eq!(batch.entries.len(), 2);
        assert!(start.elapsed() >= Duration::from_millis(15));
    }

    #[test]
    fn duplicate_in_flight_is_protocol_error() {
        let b = Batcher::new(8, Duration::from_millis(1));
        b.submit(entry(1, 0)).unwrap();
        assert!(b.submit(entry(1, 0)).is_err());
        // Same env id on another connection is a distinct environment.
        assert!(b.submit(entry(2, 0)).unwrap());
        // Responding frees the slot for the next step.
        b.poll().unwrap();
        b.mark_responded(1, 0);
        assert!(b.submit(entry(1, 0)).unwrap());
    }

    #[test]
    fn closed_connection_entries_are_dropped() {
        let b = Batcher::new(8, Duration::from_millis(1));
        b.submit(entry(1, 0)).unwrap();
        b.submit(entry(2, 0)).unwrap();
        b.close_conn(1);
        assert!(!b.submit(entry(1, 1)).unwrap(), "late submit is dropped");
        let batch = b.poll().unwrap();
        assert_eq!(batch.entries.len(), 1);
        assert_eq!(batch.entries[0].conn, 2);
        assert_eq!(b.dropped(), 2);
    }

    #[test]
    fn shutdown_drains_then_stops() {
        let b = Batcher::new(8, Duration::from_secs(3600));
        b.submit(entry(1, 0)).unwrap();
        b.shutdown();
        assert_eq!(b.poll().unwrap().entries.len(), 1);
        assert!(b.poll().is_none());
        assert!(!b.submit(entry(1, 1)).unwrap());
    }

    #[test]
    fn every_submission_answered_exactly_once() {
        let b = Arc::new(Batcher::new(32, Duration::from_millis(1)));
        let consumer = {
            let b = Arc::clone(&b);
            std::thread::spawn(move || {
                let mut seen = Vec::new();
                while let Some(batch) = b.poll() {
                    for e in batch.entries {
                        b.mark_responded(e.conn, e.env_id);
                        seen.push((e.conn, e.env_id, e.reward));
                    }
                }
                seen
            })
        };
        let producers: Vec<_> = (0..10u64)
            .map(|conn| {
                let b = Arc::clone(&b);
                std::thread::spawn(move || {
                    for step in 0..100 {
                        let mut e = entry(conn, step % 4);
                        e.reward = step as f32;
                        // Lock-step: retry until the previous response for
                        // this env cleared the in-flight mark.
                        loop {
                            match b.submit(e.clone()) {
                                Ok(true) => break,
                                Ok(false) => panic!("dropped"),
                                Err(_) => std::thread::yield_now(),
                            }
                        }
                    }
                })
            })
            .collect();
        for p in producers {
            p.join().unwrap();
        }
        // Give the consumer time to flush the tail before shutdown.
        while b.state.lock().unwrap().pending.len() > 0 {
            std::thread::sleep(Duration::from_millis(1));
        }
        b.shutdown();
        let seen = consumer.join().unwrap();
        assert_eq!(seen.len(), 1000);
        // Per (conn, env) the rewards must arrive in submission order.
        for conn in 0..10u64 {
            for env in 0..4u32 {
                let rewards: Vec<f32> = seen
                    .iter()
                    .filter(|&&(c, e, _)| c == conn && e == env)
                    .map(|&(_, _, r)| r)
                    .collect();
                let mut sorted = rewards.clone();
                sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
                assert_eq!(rewards, sorted);
                assert_eq!(rewards.len(), 25);
            }
        }
    }
}
