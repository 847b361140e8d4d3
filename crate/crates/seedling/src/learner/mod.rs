//! The learner service: the single process that owns the model.
//!
//! Actors connect over TCP and stream observations; connection readers feed
//! a dynamic batcher; inference workers run the shared network on whole
//! batches, sample actions, send them back, and accumulate finished steps
//! into training data; prefetchers shape that data into time-major batches;
//! a single trainer thread optimizes and publishes fresh parameter
//! snapshots. Inference always reads the latest published snapshot, so
//! behavior within one unroll can span several versions; each step records
//! the version that produced it.

mod inference;
mod metrics;
mod slots;
mod trainer;
mod trajectory;

pub use metrics::{Metrics, TrainStats, BATCH_HIST_BUCKETS};
pub use slots::{BeginOutcome, EnvSlot, SlotShape};
pub use trajectory::{
    assemble_pg, assemble_q, PgBatch, PreparedBatch, QBatch, StoredSequence, Trajectory,
};

use std::collections::VecDeque;
use std::io::Write as _;
use std::net::{Shutdown, SocketAddr, TcpListener, TcpStream};
use std::sync::atomic::{AtomicBool, AtomicU64, AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::thread::JoinHandle;
use std::time::{Duration, Instant};

use dashmap::DashMap;

use crate::config::{Algo, RunConfig};
use crate::envs::EnvSpec;
use crate::error::{Result, SeedError};
use crate::nn::{NetworkSpec, ParamSnapshot, SnapshotSlot};
use crate::replay::{OverflowPolicy, PrioritizedBuffer, TrajectoryQueue};
use crate::wire::{Batcher, FrameDecoder, WireMessage};

/// How many early trajectories to keep aside for behavior-fidelity checks
/// when snapshot retention is on.
const TAP_LIMIT: usize = 64;

/// One live actor connection. Responses from any inference worker go
/// through the writer lock; the raw handle lets shutdown cut the socket
/// from outside the reader thread.
pub struct ConnHandle {
    pub actor_id: u32,
    pub writer: Mutex<TcpStream>,
    raw: TcpStream,
}

/// Everything the service threads share.
pub struct Shared {
    pub cfg: RunConfig,
    pub env_spec: EnvSpec,
    pub net_spec: NetworkSpec,
    pub shape: SlotShape,
    pub snapshot: SnapshotSlot,
    /// Recent snapshots addressable by version, oldest first.
    pub retained: Mutex<VecDeque<Arc<ParamSnapshot>>>,
    pub batcher: Batcher,
    pub slots: DashMap<(u32, u32), EnvSlot>,
    pub conns: DashMap<u64, Arc<ConnHandle>>,
    pub pg_queue: TrajectoryQueue<Trajectory>,
    pub replay: PrioritizedBuffer<StoredSequence>,
    pub prepared: TrajectoryQueue<PreparedBatch>,
    pub metrics: Metrics,
    pub stop: AtomicBool,
    /// Creation-order counter assigning exploration-ladder rungs.
    pub epsilon_counter: AtomicUsize,
    /// Trained steps already committed to queued batches, for the replay
    /// ratio throttle.
    pub planned_trained: AtomicU64,
    /// Early trajectories kept verbatim for fidelity checks.
    pub tap: Mutex<Vec<Trajectory>>,
}

impl Shared {
    /// Depth of the stage between inference and training.
    pub fn queue_depth(&self) -> usize {
        match self.cfg.algo {
            Algo::Vtrace => self.pg_queue.len(),
            Algo::R2d2 => self.replay.len(),
        }
    }

    /// Steps sitting in per-environment accumulators, not yet emitted.
    pub fn open_steps(&self) -> u64 {
        self.slots.iter().map(|s| s.open_steps()).sum()
    }

    /// A retained snapshot by exact version, if retention kept it.
    pub fn snapshot_for_version(&self, version: u64) -> Option<Arc<ParamSnapshot>> {
        self.retained
            .lock()
            .unwrap()
            .iter()
            .find(|s| s.version() == version)
            .cloned()
    }

    pub fn retain_snapshot(&self, snap: Arc<ParamSnapshot>) {
        if self.cfg.snapshot_retention == 0 {
            return;
        }
        let mut kept = self.retained.lock().unwrap();
        kept.push_back(snap);
        while kept.len() > self.cfg.snapshot_retention {
            kept.pop_front();
        }
    }

    fn initiate_stop(&self) {
        self.stop.store(true, Ordering::SeqCst);
        self.batcher.shutdown();
        self.pg_queue.close();
        self.prepared.close();
        for conn in self.conns.iter() {
            let _ = conn.raw.shutdown(Shutdown::Both);
        }
    }
}

/// A running learner service and its thread handles.
pub struct LearnerHandle {
    pub addr: SocketAddr,
    pub shared: Arc<Shared>,
    threads: Vec<JoinHandle<()>>,
    readers: Arc<Mutex<Vec<JoinHandle<()>>>>,
}

impl LearnerHandle {
    /// True once the service decided to stop (frame budget or signal).
    pub fn stopping(&self) -> bool {
        self.shared.stop.load(Ordering::SeqCst)
    }

    /// Stops the service and joins every thread.
    pub fn stop(self) {
        self.shared.initiate_stop();
        self.join_threads();
    }

    /// Waits for the service to stop on its own (frame budget), polling
    /// `poll` in between; returns early when `poll` returns false.
    pub fn run_until_stopped(self, mut poll: impl FnMut() -> bool) {
        while !self.stopping() && poll() {
            std::thread::sleep(Duration::from_millis(50));
        }
        self.stop();
    }

    fn join_threads(mut self) {
        for t in self.threads.drain(..) {
            let _ = t.join();
        }
        let readers = std::mem::take(&mut *self.readers.lock().unwrap());
        for t in readers {
            let _ = t.join();
        }
    }
}

/// Binds the listener, spawns every service thread, and returns once the
/// service is accepting connections. Prints `listen addr=...` so harnesses
/// can find an OS-assigned port.
pub fn spawn(cfg: RunConfig) -> Result<LearnerHandle> {
    cfg.validate()?;
    let env_spec = cfg.env.spec();
    let net_spec = cfg.network_spec(env_spec);
    net_spec.validate()?;

    let params = net_spec.init_params(cfg.seed);
    let names = Arc::new(
        net_spec
            .param_layout()
            .into_iter()
            .map(|(name, _)| name)
            .collect::<Vec<_>>(),
    );
    let initial = match &cfg.checkpoint {
        Some(path) if path.exists() => crate::nn::read_checkpoint(path)?,
        _ => ParamSnapshot::new(0, names.clone(), params.clone()),
    };
    let start_params = initial.params().to_vec();
    let start_version = initial.version();
    let snapshot = SnapshotSlot::new(initial);

    let shape = SlotShape {
        obs_dim: env_spec.obs_dim,
        num_actions: env_spec.num_actions,
        lstm_units: cfg.lstm_units,
        unroll: cfg.unroll_length,
        burn_in: cfg.burn_in,
        trained: cfg.trained_steps(),
    };
    let listener = TcpListener::bind(&cfg.listen)?;
    let addr = listener.local_addr()?;
    listener.set_nonblocking(true)?;

    let shared = Arc::new(Shared {
        batcher: Batcher::new(
            cfg.inference_batch_size,
            Duration::from_micros(cfg.batch_wait_us),
        ),
        slots: DashMap::new(),
        conns: DashMap::new(),
        pg_queue: TrajectoryQueue::new(4 * cfg.training_batch_size, OverflowPolicy::Block),
        replay: PrioritizedBuffer::new(
            cfg.replay_buffer_size,
            cfg.min_replay_buffer_size,
            cfg.priority_exponent,
            cfg.importance_sampling_exponent,
        ),
        prepared: TrajectoryQueue::new(2, OverflowPolicy::Block),
        metrics: Metrics::default(),
        stop: AtomicBool::new(false),
        epsilon_counter: AtomicUsize::new(0),
        planned_trained: AtomicU64::new(0),
        tap: Mutex::new(Vec::new()),
        retained: Mutex::new(VecDeque::new()),
        snapshot,
        cfg,
        env_spec,
        net_spec,
        shape,
    });
    shared.retain_snapshot(shared.snapshot.load());

    println!("listen addr={addr}");
    std::io::stdout().flush().ok();

    let readers: Arc<Mutex<Vec<JoinHandle<()>>>> = Arc::new(Mutex::new(Vec::new()));
    let mut threads = Vec::new();

    {
        let shared = shared.clone();
        let readers = readers.clone();
        threads.push(
            std::thread::Builder::new()
                .name("ln-listen".into())
                .spawn(move || listen_loop(listener, shared, readers))
                .expect("spawn listener"),
        );
    }
    for worker in 0..shared.cfg.inference_workers {
        let shared = shared.clone();
        threads.push(
            std::thread::Builder::new()
                .name(format!("ln-infer-{worker}"))
                .spawn(move || inference::run_worker(&shared, worker as u64))
                .expect("spawn inference worker"),
        );
    }
    if !shared.cfg.bench_mode {
        for worker in 0..shared.cfg.prefetch_workers {
            let shared = shared.clone();
            threads.push(
                std::thread::Builder::new()
                    .name(format!("ln-fetch-{worker}"))
                    .spawn(move || trainer::run_prefetcher(&shared, worker as u64))
                    .expect("spawn prefetcher"),
            );
        }
        let shared_t = shared.clone();
        threads.push(
            std::thread::Builder::new()
                .name("ln-train".into())
                .spawn(move || trainer::run_trainer(&shared_t, start_params, start_version))
                .expect("spawn trainer"),
        );
    }
    {
        let shared = shared.clone();
        threads.push(
            std::thread::Builder::new()
                .name("ln-report".into())
                .spawn(move || report_loop(&shared))
                .expect("spawn reporter"),
        );
    }

    Ok(LearnerHandle {
        addr,
        shared,
        threads,
        readers,
    })
}

/// Runs a learner in the foreground until its frame budget is exhausted or
/// `interrupted` flips, then checkpoints if configured.
pub fn run(cfg: RunConfig, interrupted: &AtomicBool) -> Result<()> {
    let checkpoint = cfg.checkpoint.clone();
    let handle = spawn(cfg)?;
    let shared = handle.shared.clone();
    handle.run_until_stopped(|| !interrupted.load(Ordering::SeqCst));
    if let Some(path) = checkpoint {
        crate::nn::write_checkpoint(&path, &shared.snapshot.load())?;
        eprintln!("checkpoint written to {}", path.display());
    }
    Ok(())
}

fn listen_loop(
    listener: TcpListener,
    shared: Arc<Shared>,
    readers: Arc<Mutex<Vec<JoinHandle<()>>>>,
) {
    let mut next_conn: u64 = 1;
    while !shared.stop.load(Ordering::SeqCst) {
        match listener.accept() {
            Ok((stream, _peer)) => {
                let conn_id = next_conn;
                next_conn += 1;
                if let Err(err) = register_conn(&shared, conn_id, stream, &readers) {
                    eprintln!("connection {conn_id} rejected: {err}");
                }
            }
            Err(ref e) if e.kind() == std::io::ErrorKind::WouldBlock => {
                std::thread::sleep(Duration::from_millis(5));
            }
            Err(e) => {
                eprintln!("accept failed: {e}");
                std::thread::sleep(Duration::from_millis(50));
            }
        }
    }
}

fn register_conn(
    shared: &Arc<Shared>,
    conn_id: u64,
    stream: TcpStream,
    readers: &Mutex<Vec<JoinHandle<()>>>,
) -> Result<()> {
    stream.set_nodelay(true)?;
    let writer = stream.try_clone()?;
    let raw = stream.try_clone()?;
    let shared = shared.clone();
    let handle = std::thread::Builder::new()
        .name(format!("ln-conn-{conn_id}"))
        .spawn(move || {
            if let Err(err) = read_loop(&shared, conn_id, stream, writer, raw) {
                if !shared.stop.load(Ordering::SeqCst) {
                    eprintln!("connection {conn_id} closed: {err}");
                }
            }
            cleanup_conn(&shared, conn_id);
        })
        .map_err(SeedError::Io)?;
    readers.lock().unwrap().push(handle);
    Ok(())
}

/// Reads frames from one actor. The first message must identify the actor;
/// every later one must be a step request with a well-formed observation.
fn read_loop(
    shared: &Arc<Shared>,
    conn_id: u64,
    mut stream: TcpStream,
    writer: TcpStream,
    raw: TcpStream,
) -> Result<()> {
    use std::io::Read;

    let mut decoder = FrameDecoder::new();
    let mut buf = [0u8; 64 * 1024];
    let mut hello: Option<(u32, u32)> = None;

    loop {
        let msg = loop {
            if let Some(msg) = decoder.next().map_err(|e| fail(&writer, &e))? {
                break msg;
            }
            let n = stream.read(&mut buf)?;
            if n == 0 {
                return Ok(());
            }
            decoder.push(&buf[..n]);
        };
        match (msg, hello) {
            (WireMessage::Hello { actor_id, num_envs }, None) => {
                if num_envs == 0 || num_envs > 4096 {
                    let err = SeedError::protocol(format!(
                        "actor {actor_id} announced {num_envs} environments"
                    ));
                    return Err(fail(&writer, &err));
                }
                shared.conns.insert(
                    conn_id,
                    Arc::new(ConnHandle {
                        actor_id,
                        writer: Mutex::new(writer.try_clone()?),
                        raw: raw.try_clone()?,
                    }),
                );
                hello = Some((actor_id, num_envs));
            }
            (WireMessage::Hello { .. }, Some(_)) => {
                let err = SeedError::protocol("second hello on an open connection");
                return Err(fail(&writer, &err));
            }
            (msg, None) => {
                let err = SeedError::protocol(format!("first message was {msg:?}, not a hello"));
                return Err(fail(&writer, &err));
            }
            (
                WireMessage::StepRequest {
                    env_id,
                    reward,
                    done,
                    obs,
                },
                Some((actor_id, num_envs)),
            ) => {
                if env_id >= num_envs {
                    let err = SeedError::protocol(format!(
                        "env {env_id} out of range, actor announced {num_envs}"
                    ));
                    return Err(fail(&writer, &err));
                }
                if obs.len() != shared.env_spec.obs_dim {
                    let err = SeedError::protocol(format!(
                        "observation length {} does not match environment dimension {}",
                        obs.len(),
                        shared.env_spec.obs_dim
                    ));
                    return Err(fail(&writer, &err));
                }
                if !reward.is_finite() || obs.iter().any(|v| !v.is_finite()) {
                    let err = SeedError::protocol("non-finite values in step request");
                    return Err(fail(&writer, &err));
                }
                let entry = crate::wire::BatchEntry {
                    conn: conn_id,
                    actor_id,
                    env_id,
                    reward,
                    done,
                    obs,
                    submitted_at: Instant::now(),
                };
                match shared.batcher.submit(entry) {
                    Ok(true) => {}
                    Ok(false) => return Ok(()),
                    Err(err) => return Err(fail(&writer, &err)),
                }
            }
            (msg, Some(_)) => {
                let err =
                    SeedError::protocol(format!("unexpected message from an actor: {msg:?}"));
                return Err(fail(&writer, &err));
            }
        }
    }
}

/// Sends a protocol error frame (best effort) and returns the error.
fn fail(writer: &TcpStream, err: &SeedError) -> SeedError {
    let frame = WireMessage::Error {
        code: 1,
        message: err.to_string(),
    }
    .encode();
    let mut w = writer;
    let _ = w.write_all(&frame);
    SeedError::protocol(err.to_string())
}

/// Tears down everything a dead connection owned: its batcher entries, its
/// registry slot, and the per-env accumulators (partially filled unrolls
/// are dropped rather than trained).
fn cleanup_conn(shared: &Arc<Shared>, conn_id: u64) {
    shared.batcher.close_conn(conn_id);
    shared.conns.remove(&conn_id);
    let keys: Vec<(u32, u32)> = shared
        .slots
        .iter()
        .filter(|s| s.conn == conn_id)
        .map(|s| (s.actor_id, s.env_id))
        .collect();
    let mut dropped = 0;
    for key in keys {
        if let Some((_, slot)) = shared
            .slots
            .remove_if(&key, |_, slot| slot.conn == conn_id)
        {
            dropped += slot.open_steps();
        }
    }
    if dropped > 0 {
        shared.metrics.add(&shared.metrics.steps_dropped, dropped);
    }
}

/// Once per second: one metrics line to stdout (and the metrics file when
/// configured), plus the frame-budget check.
fn report_loop(shared: &Arc<Shared>) {
    let started = Instant::now();
    let mut last_frames = 0u64;
    let mut last_instant = started;
    let mut sink = shared.cfg.metrics.as_ref().and_then(|path| {
        std::fs::OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)
            .ok()
    });
    let mut ticks = 0u32;
    while !shared.stop.load(Ordering::SeqCst) {
        std::thread::sleep(Duration::from_millis(100));
        ticks += 1;
        let budget = shared.cfg.total_frames;
        if budget > 0 && shared.metrics.frames.load(Ordering::Relaxed) >= budget {
            emit_report(shared, started, &mut last_frames, &mut last_instant, &mut sink);
            shared.initiate_stop();
            return;
        }
        if ticks % 10 == 0 {
            emit_report(shared, started, &mut last_frames, &mut last_instant, &mut sink);
        }
    }
}

fn emit_report(
    shared: &Arc<Shared>,
    started: Instant,
    last_frames: &mut u64,
    last_instant: &mut Instant,
    sink: &mut Option<std::fs::File>,
) {
    let version = shared.snapshot.load().version();
    let (line, frames) = shared.metrics.report_line(
        started,
        *last_frames,
        *last_instant,
        version,
        shared.queue_depth(),
    );
    *last_frames = frames;
    *last_instant = Instant::now();
    println!("{line}");
    if let Some(file) = sink {
        let _ = writeln!(file, "{line}");
        let _ = file.flush();
    }
}
