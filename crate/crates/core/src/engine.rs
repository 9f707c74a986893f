//! Deterministic discrete-event core: simulation clock, event queue, and
//! named seeded random streams.
//!
//! Everything in a run is driven by one [`EventQueue`]. Time is integer
//! nanoseconds ([`SimTime`]): sensing durations span hundreds of milliseconds
//! while slot times are 9 microseconds, and float drift would reorder
//! equal-time events. Randomness comes from [`RngHub`] streams addressed by
//! name, so adding a node or flow never perturbs the draws of another.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::ops::{Add, AddAssign, Mul, Sub};

use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};

/// Simulation time as integer nanoseconds since run start.
#[derive(
    Clone, Copy, Debug, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize,
)]
#[serde(transparent)]
pub struct SimTime(pub u64);

impl SimTime {
    pub const ZERO: SimTime = SimTime(0);

    pub const fn from_ns(ns: u64) -> Self {
        SimTime(ns)
    }

    pub const fn from_us(us: u64) -> Self {
        SimTime(us * 1_000)
    }

    pub const fn from_ms(ms: u64) -> Self {
        SimTime(ms * 1_000_000)
    }

    pub const fn from_secs(s: u64) -> Self {
        SimTime(s * 1_000_000_000)
    }

    /// Nearest-nanosecond conversion, for CLI/config entry points.
    pub fn from_secs_f64(s: f64) -> Self {
        assert!(s >= 0.0 && s.is_finite(), "time must be finite and >= 0");
        SimTime((s * 1e9).round() as u64)
    }

    pub fn from_ms_f64(ms: f64) -> Self {
        Self::from_secs_f64(ms * 1e-3)
    }

    pub const fn as_ns(self) -> u64 {
        self.0
    }

    pub fn as_secs_f64(self) -> f64 {
        self.0 as f64 / 1e9
    }

    pub const fn is_zero(self) -> bool {
        self.0 == 0
    }

    pub fn saturating_sub(self, rhs: SimTime) -> SimTime {
        SimTime(self.0.saturating_sub(rhs.0))
    }
}

impl Add for SimTime {
    type Output = SimTime;
    fn add(self, rhs: SimTime) -> SimTime {
        SimTime(self.0 + rhs.0)
    }
}

impl AddAssign for SimTime {
    fn add_assign(&mut self, rhs: SimTime) {
        self.0 += rhs.0;
    }
}

impl Sub for SimTime {
    type Output = SimTime;
    fn sub(self, rhs: SimTime) -> SimTime {
        SimTime(self.0 - rhs.0)
    }
}

impl Mul<u64> for SimTime {
    type Output = SimTime;
    fn mul(self, rhs: u64) -> SimTime {
        SimTime(self.0 * rhs)
    }
}

impl fmt::Display for SimTime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}.{:09}s", self.0 / 1_000_000_000, self.0 % 1_000_000_000)
    }
}

/// Identifier of a scheduled event, unique within a run. The first
/// `schedule` call returns id 1.
pub type EventId = u64;

/// Lifetime accounting for the queue; every scheduled event is either
/// fired exactly once or cancelled exactly once.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct QueueStats {
    pub scheduled: u64,
    pub fired: u64,
    pub cancelled: u64,
}

/// Time-ordered event queue with a monotone clock.
///
/// Events with equal fire times dispatch in ascending id order, i.e. in
/// insertion order, which gives every run a total event order and makes
/// replays byte-identical.
#[derive(Debug)]
pub struct EventQueue<P> {
    clock: SimTime,
    next_id: EventId,
    pending: BTreeMap<(SimTime, EventId), P>,
    by_id: HashMap<EventId, SimTime>,
    stats: QueueStats,
}

impl<P> Default for EventQueue<P> {
    fn default() -> Self {
        Self::new()
    }
}

impl<P> EventQueue<P> {
    pub fn new() -> Self {
        EventQueue {
            clock: SimTime::ZERO,
            next_id: 1,
            pending: BTreeMap::new(),
            by_id: HashMap::new(),
            stats: QueueStats::default(),
        }
    }

    /// Current simulation time. Non-decreasing across processed events.
    pub fn now(&self) -> SimTime {
        self.clock
    }

    pub fn pending_len(&self) -> usize {
        self.pending.len()
    }

    pub fn stats(&self) -> QueueStats {
        self.stats
    }

    /// Schedules `payload` to fire at `at`.
    ///
    /// Scheduling in the past is a programming error and halts the run.
    pub fn schedule(&mut self, at: SimTime, payload: P) -> EventId {
        assert!(
            at >= self.clock,
            "schedule in the past: at={} clock={}",
            at,
            self.clock
        );
        let id = self.next_id;
        self.next_id += 1;
        self.pending.insert((at, id), payload);
        self.by_id.insert(id, at);
        self.stats.scheduled += 1;
        id
    }

    /// Cancels a pending event. Returns true iff the event existed and had
    /// not fired; cancelled events never fire.
    pub fn cancel(&mut self, id: EventId) -> bool {
        match self.by_id.remove(&id) {
            Some(at) => {
                let removed = self.pending.remove(&(at, id)).is_some();
                debug_assert!(removed);
                self.stats.cancelled += 1;
                true
            }
            None => false,
        }
    }

    /// Pops the next event with fire time <= `t_end`, advancing the clock to
    /// its fire time. Returns None when no such event remains (the clock is
    /// left untouched; see [`finish_until`](Self::finish_until)).
    pub fn pop_next_until(&mut self, t_end: SimTime) -> Option<(SimTime, EventId, P)> {
        let (&(at, id), _) = self.pending.first_key_value()?;
        if at > t_end {
            return None;
        }
        let payload = self.pending.remove(&(at, id)).unwrap();
        self.by_id.remove(&id);
        self.clock = at;
        self.stats.fired += 1;
        Some((at, id, payload))
    }

    /// Advances the clock to `t_end` once every event at or before it has
    /// been popped.
    pub fn finish_until(&mut self, t_end: SimTime) {
        assert!(t_end >= self.clock, "finish_until in the past");
        debug_assert!(self
            .pending
            .first_key_value()
            .map_or(true, |(&(at, _), _)| at > t_end));
        self.clock = t_end;
    }

    /// Processes every event with fire time <= `t_end` through `handler`,
    /// leaving the clock at `t_end`. Handlers may schedule and cancel;
    /// events they schedule at or before `t_end` are processed in the same
    /// call. Returns the number of events processed.
    pub fn run_until<F>(&mut self, t_end: SimTime, mut handler: F) -> u64
    where
        F: FnMut(&mut Self, SimTime, EventId, P),
    {
        assert!(t_end >= self.clock, "run_until in the past");
        let mut processed = 0;
        while let Some((at, id, payload)) = self.pop_next_until(t_end) {
            processed += 1;
            handler(self, at, id, payload);
        }
        self.finish_until(t_end);
        processed
    }
}

// ---------------------------------------------------------------------------
// Named random streams
// ---------------------------------------------------------------------------

/// FNV-1a over the stream name; stable across platforms and releases,
/// unlike the std hasher.
fn fnv1a_64(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

/// Stable 64-bit mix of (master seed, stream name).
pub fn derive_seed(master_seed: u64, name: &str) -> u64 {
    splitmix64(master_seed ^ fnv1a_64(name.as_bytes()))
}

/// Registry of named random streams derived from one master seed.
///
/// The same (master seed, name) pair yields the same value sequence on every
/// platform; repeated `stream` calls with one name continue one sequence.
#[derive(Debug)]
pub struct RngHub {
    master_seed: u64,
    streams: HashMap<String, ChaCha12Rng>,
}

impl RngHub {
    pub fn new(master_seed: u64) -> Self {
        RngHub {
            master_seed,
            streams: HashMap::new(),
        }
    }

    pub fn master_seed(&self) -> u64 {
        self.master_seed
    }

    /// The stream for `name`, created on first use.
    pub fn stream(&mut self, name: &str) -> &mut ChaCha12Rng {
        let master = self.master_seed;
        self.streams
            .entry(name.to_owned())
            .or_insert_with(|| ChaCha12Rng::seed_from_u64(derive_seed(master, name)))
    }
}
