//! Counters and derived statistics the service reports once per second.
//!
//! Hot paths bump relaxed atomics; the reporting thread snapshots them and
//! formats one flat `key=value` line per interval, suitable for `grep` and
//! for the benchmark harness to parse.

use std::collections::VecDeque;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Mutex;
use std::time::Instant;

const RETURN_WINDOW: usize = 100;

/// Batch-size histogram bucket count; bucket `k` covers sizes in
/// `[2^k, 2^(k+1))` with the last bucket unbounded above.
pub const BATCH_HIST_BUCKETS: usize = 8;

/// Final numbers of the most recent completed training update.
#[derive(Clone, Copy, Debug, Default)]
pub struct TrainStats {
    pub loss: f64,
    pub pg_loss: f64,
    pub value_loss: f64,
    pub entropy: f64,
    pub mean_q: f64,
    pub grad_norm: f64,
}

#[derive(Default)]
pub struct Metrics {
    /// Environment frames received over the wire (one per step request).
    pub frames: AtomicU64,
    /// Transitions handed to training (emitted into queue or replay).
    pub steps_emitted: AtomicU64,
    /// Transitions discarded before training could see them.
    pub steps_dropped: AtomicU64,
    pub episodes: AtomicU64,
    pub updates: AtomicU64,
    pub skipped_updates: AtomicU64,
    /// Transitions consumed by completed training updates.
    pub trained_steps: AtomicU64,
    pub batches: AtomicU64,
    pub batch_entries: AtomicU64,
    /// Inference forward passes that failed and fell back to action 0.
    pub inference_errors: AtomicU64,
    /// Summed nanoseconds each request spent waiting for its batch.
    pub wait_ns: AtomicU64,
    /// Summed nanoseconds of whole-batch forward passes.
    pub forward_ns: AtomicU64,
    /// Summed nanoseconds of whole-batch response serialization and writes.
    pub respond_ns: AtomicU64,
    batch_hist: [AtomicU64; BATCH_HIST_BUCKETS],
    returns: Mutex<VecDeque<f32>>,
    train: Mutex<TrainStats>,
}

impl Metrics {
    pub fn record_episode(&self, ret: f32) {
        self.episodes.fetch_add(1, Ordering::Relaxed);
        let mut window = self.returns.lock().unwrap();
        if window.len() == RETURN_WINDOW {
            window.pop_front();
        }
        window.push_back(ret);
    }

    /// Mean return over the last hundred completed episodes.
    pub fn mean_return(&self) -> Option<f32> {
        let window = self.returns.lock().unwrap();
        if window.is_empty() {
            return None;
        }
        Some(window.iter().sum::<f32>() / window.len() as f32)
    }

    pub fn record_train(&self, stats: TrainStats) {
        *self.train.lock().unwrap() = stats;
    }

    pub fn add(&self, counter: &AtomicU64, n: u64) {
        counter.fetch_add(n, Ordering::Relaxed);
    }

    pub fn record_batch(&self, entries: usize) {
        self.batches.fetch_add(1, Ordering::Relaxed);
        self.batch_entries.fetch_add(entries as u64, Ordering::Relaxed);
        let bucket = (entries.max(1).ilog2() as usize).min(BATCH_HIST_BUCKETS - 1);
        self.batch_hist[bucket].fetch_add(1, Ordering::Relaxed);
    }

    pub fn batch_histogram(&self) -> [u64; BATCH_HIST_BUCKETS] {
        std::array::from_fn(|i| self.batch_hist[i].load(Ordering::Relaxed))
    }

    /// Per-frame means of the learner-side stages in milliseconds:
    /// batch wait, forward pass, response write.
    pub fn stage_means_ms(&self) -> (f64, f64, f64) {
        let frames = self.batch_entries.load(Ordering::Relaxed);
        if frames == 0 {
            return (0.0, 0.0, 0.0);
        }
        let per = |sum: &AtomicU64| sum.load(Ordering::Relaxed) as f64 / frames as f64 / 1e6;
        (per(&self.wait_ns), per(&self.forward_ns), per(&self.respond_ns))
    }

    /// Mean entries per released inference batch.
    pub fn mean_batch_size(&self) -> f64 {
        let batches = self.batches.load(Ordering::Relaxed);
        if batches == 0 {
            return 0.0;
        }
        self.batch_entries.load(Ordering::Relaxed) as f64 / batches as f64
    }

    /// One flat report line. `version` and `queue` come from the caller
    /// because they live outside the counter block.
    pub fn report_line(
        &self,
        started: Instant,
        last_frames: u64,
        last_instant: Instant,
        version: u64,
        queue_depth: usize,
    ) -> (String, u64) {
        let frames = self.frames.load(Ordering::Relaxed);
        let dt = last_instant.elapsed().as_secs_f64().max(1e-9);
        let fps = (frames - last_frames) as f64 / dt;
        let train = *self.train.lock().unwrap();
        let mean_ret = self
            .mean_return()
            .map_or_else(|| "none".to_string(), |r| format!("{r:.3}"));
        let (wait_ms, fwd_ms, resp_ms) = self.stage_means_ms();
        let line = format!(
            "t={:.1} frames={} fps={:.0} episodes={} mean_return_100={} updates={} \
             trained_steps={} version={} loss={:.5} pg_loss={:.5} value_loss={:.5} \
             entropy={:.4} mean_q={:.4} grad_norm={:.4} queue={} batch_mean={:.1} \
             wait_us={:.1} fwd_us={:.1} resp_us={:.1} \
             emitted={} dropped={} skipped_updates={} inference_errors={}",
            started.elapsed().as_secs_f64(),
            frames,
            fps,
            self.episodes.load(Ordering::Relaxed),
            mean_ret,
            self.updates.load(Ordering::Relaxed),
            self.trained_steps.load(Ordering::Relaxed),
            version,
            train.loss,
            train.pg_loss,
            train.value_loss,
            train.entropy,
            train.mean_q,
            train.grad_norm,
            queue_depth,
            self.mean_batch_size(),
            wait_ms * 1e3,
            fwd_ms * 1e3,
            resp_ms * 1e3,
            self.steps_emitted.load(Ordering::Relaxed),
            self.steps_dropped.load(Ordering::Relaxed),
            self.skipped_updates.load(Ordering::Relaxed),
            self.inference_errors.load(Ordering::Relaxed),
        );
        (line, frames)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn return_window_keeps_last_hundred() {
        let m = Metrics::default();
        assert_eq!(m.mean_return(), None);
        for i in 0..150 {
            m.record_episode(if i < 50 { 0.0 } else { 1.0 });
        }
        assert_eq!(m.mean_return(), Some(1.0));
        assert_eq!(m.episodes.load(Ordering::Relaxed), 150);
    }

    #[test]
    fn batch_histogram_buckets_by_power_of_two() {
        let m = Metrics::default();
        for size in [1, 2, 3, 4, 7, 8, 16, 31, 300] {
            m.record_batch(size);
        }
        let hist = m.batch_histogram();
        assert_eq!(hist, [1, 2, 2, 1, 2, 0, 0, 1]);
        assert_eq!(m.batches.load(Ordering::Relaxed), 9);
        assert_eq!(m.batch_entries.load(Ordering::Relaxed), 372);
    }

    #[test]
    fn stage_means_divide_by_entries() {
        let m = Metrics::default();
        assert_eq!(m.stage_means_ms(), (0.0, 0.0, 0.0));
        m.record_batch(4);
        m.add(&m.wait_ns, 8_000_000);
        m.add(&m.forward_ns, 4_000_000);
        m.add(&m.respond_ns, 2_000_000);
        let (wait, fwd, resp) = m.stage_means_ms();
        assert_eq!((wait, fwd, resp), (2.0, 1.0, 0.5));
    }

    #[test]
    fn report_line_is_flat_key_value() {
        let m = Metrics::default();
        m.add(&m.frames, 500);
        m.record_batch(4);
        m.record_batch(5);
        m.record_episode(0.5);
        let t0 = Instant::now();
        let (line, frames) = m.report_line(t0, 0, t0, 7, 3);
        assert_eq!(frames, 500);
        for key in [
            "frames=500",
            "version=7",
            "queue=3",
            "episodes=1",
            "mean_return_100=0.500",
            "batch_mean=4.5",
        ] {
            assert!(line.contains(key), "missing {key} in {line}");
        }
        assert!(!line.contains('\n'));
    }
}
