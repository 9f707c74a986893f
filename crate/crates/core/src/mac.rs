//! Per-node IEEE 802.11e EDCA state: four access-category queues, contention
//! parameters, binary-exponential backoff, virtual internal collision, and
//! retry/drop transitions.
//!
//! This module holds the pure MAC data model and its transition rules. The
//! event wiring that drives frames from queue head to the physical layer
//! (AIFS timers, backoff freezing, the sensing phase, ACK exchange) lives in
//! [`crate::sim`].

use rand::Rng;
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};

use crate::engine::{EventId, SimTime};

pub type NodeId = usize;

/// Transmitter and receiver frame-size bounds, in bytes.
pub const MAX_TX_FRAME_BYTES: u32 = 3839;
pub const MAX_RX_FRAME_BYTES: u32 = 8191;
/// Per-AC transmission buffer capacity, in bits.
pub const BUFFER_CAPACITY_BITS: u64 = 256_000;

/// The four EDCA access categories, highest priority first.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum AccessCategory {
    #[serde(rename = "AC_VO")]
    Voice,
    #[serde(rename = "AC_VI")]
    Video,
    #[serde(rename = "AC_BE")]
    BestEffort,
    #[serde(rename = "AC_BK")]
    Background,
}

impl AccessCategory {
    pub const ALL: [AccessCategory; 4] = [
        AccessCategory::Voice,
        AccessCategory::Video,
        AccessCategory::BestEffort,
        AccessCategory::Background,
    ];

    /// Priority rank; lower wins contention.
    pub fn index(self) -> usize {
        match self {
            AccessCategory::Voice => 0,
            AccessCategory::Video => 1,
            AccessCategory::BestEffort => 2,
            AccessCategory::Background => 3,
        }
    }

    pub fn from_index(i: usize) -> AccessCategory {
        Self::ALL[i]
    }

    pub fn label(self) -> &'static str {
        match self {
            AccessCategory::Voice => "AC_VO",
            AccessCategory::Video => "AC_VI",
            AccessCategory::BestEffort => "AC_BE",
            AccessCategory::Background => "AC_BK",
        }
    }
}

impl std::fmt::Display for AccessCategory {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.label())
    }
}

/// Per-AC contention parameters derived from the PHY contention window.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EdcaParams {
    pub cw_min: u32,
    pub cw_max: u32,
    pub aifsn: u32,
}

/// Derives the per-category contention parameters from the PHY window.
/// Requires (phy_cw_min + 1) divisible by 4 so the voice window is exact.
pub fn edca_params_for(
    ac: AccessCategory,
    phy_cw_min: u32,
    phy_cw_max: u32,
) -> Result<EdcaParams, String> {
    if phy_cw_min > phy_cw_max {
        return Err(format!(
            "phy_cw_min {} exceeds phy_cw_max {}",
            phy_cw_min, phy_cw_max
        ));
    }
    if (phy_cw_min + 1) % 4 != 0 {
        return Err(format!(
            "phy_cw_min + 1 must be divisible by 4, got {}",
            phy_cw_min
        ));
    }
    let p = phy_cw_min;
    let big_p = phy_cw_max;
    let (cw_min, cw_max, aifsn) = match ac {
        AccessCategory::Voice => ((p + 1) / 4 - 1, (p + 1) / 2 - 1, 2),
        AccessCategory::Video => ((p + 1) / 2 - 1, p, 2),
        AccessCategory::BestEffort => (p, big_p, 3),
        AccessCategory::Background => (p, big_p, 7),
    };
    Ok(EdcaParams {
        cw_min,
        cw_max,
        aifsn,
    })
}

/// PHY-layer timing and rate parameters, completing an OFDM-style PHY
/// around the configured data rates. All values are config-overridable.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PhyParams {
    pub slot_time: SimTime,
    pub sifs: SimTime,
    pub phy_cw_min: u32,
    pub phy_cw_max: u32,
    pub data_rate_bps: u64,
    pub control_rate_bps: u64,
    /// Fixed per-transmission preamble and header airtime.
    pub phy_overhead: SimTime,
    pub ack_bits: u64,
    pub max_retries: u32,
}

impl Default for PhyParams {
    fn default() -> Self {
        PhyParams {
            slot_time: SimTime::from_us(9),
            sifs: SimTime::from_us(16),
            phy_cw_min: 15,
            phy_cw_max: 1023,
            data_rate_bps: 26_000_000,
            control_rate_bps: 6_000_000,
            phy_overhead: SimTime::from_us(40),
            ack_bits: 112,
            max_retries: 7,
        }
    }
}

impl PhyParams {
    /// AIFS[ac] = SIFS + AIFSN[ac] x slot time.
    pub fn aifs(&self, aifsn: u32) -> SimTime {
        self.sifs + self.slot_time * aifsn as u64
    }

    /// Airtime of a data frame: overhead plus payload at the data rate,
    /// rounded up to the nanosecond.
    pub fn data_tx_duration(&self, payload_bits: u64) -> SimTime {
        self.phy_overhead + bits_duration(payload_bits, self.data_rate_bps)
    }

    /// Airtime of an ACK at the control rate.
    pub fn ack_tx_duration(&self) -> SimTime {
        self.phy_overhead + bits_duration(self.ack_bits, self.control_rate_bps)
    }

    /// How long a sender waits for an ACK before declaring the attempt
    /// failed: SIFS, the ACK airtime, and one slot of guard.
    pub fn ack_timeout(&self) -> SimTime {
        self.sifs + self.ack_tx_duration() + self.slot_time
    }
}

fn bits_duration(bits: u64, rate_bps: u64) -> SimTime {
    assert!(rate_bps > 0);
    let ns = (bits as u128 * 1_000_000_000).div_ceil(rate_bps as u128);
    SimTime::from_ns(ns as u64)
}

/// One MAC service data unit. A relayed application frame becomes two MAC
/// frames, one per hop; `origin`, `final_dst`, and `created_at` persist
/// across hops while the remaining lifecycle fields are per hop.
#[derive(Clone, Debug)]
pub struct Frame {
    pub id: u64,
    pub src: NodeId,
    pub dst: NodeId,
    pub origin: NodeId,
    pub final_dst: NodeId,
    pub ac: AccessCategory,
    pub payload_bits: u64,
    pub created_at: SimTime,
    pub enqueued_at: SimTime,
    pub first_phy_tx_at: Option<SimTime>,
    pub delivered_at: Option<SimTime>,
    pub retry_count: u32,
    /// Largest media access delay over the hops taken so far; lets the
    /// delivery path audit MAD against end-to-end delay per frame.
    pub max_hop_mad: SimTime,
}

/// Outcome of offering a frame to a transmission queue.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EnqueueResult {
    Accepted,
    DroppedOverflow,
    RejectedOversize,
}

/// FIFO transmission queue for one access category, bounded in bits.
#[derive(Clone, Debug, Default)]
pub struct TxQueue {
    frames: std::collections::VecDeque<Frame>,
    occupied_bits: u64,
}

impl TxQueue {
    pub fn enqueue(&mut self, mut f: Frame, now: SimTime) -> EnqueueResult {
        if f.payload_bits > MAX_TX_FRAME_BYTES as u64 * 8 {
            return EnqueueResult::RejectedOversize;
        }
        if self.occupied_bits + f.payload_bits > BUFFER_CAPACITY_BITS {
            return EnqueueResult::DroppedOverflow;
        }
        f.enqueued_at = now;
        self.occupied_bits += f.payload_bits;
        self.frames.push_back(f);
        EnqueueResult::Accepted
    }

    pub fn pop(&mut self) -> Option<Frame> {
        let f = self.frames.pop_front()?;
        self.occupied_bits -= f.payload_bits;
        Some(f)
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn occupied_bits(&self) -> u64 {
        self.occupied_bits
    }

    /// Room check used by saturating sources to top up without generating
    /// overflow drops.
    pub fn fits(&self, payload_bits: u64) -> bool {
        self.occupied_bits + payload_bits <= BUFFER_CAPACITY_BITS
    }
}

/// Uniform draw in [0, cw].
pub fn draw_backoff(cw: u32, rng: &mut ChaCha12Rng) -> u32 {
    rng.gen_range(0..=cw)
}

/// Virtual (internal) collision resolution: the highest-priority ready AC
/// wins; every other ready AC is a loser and escalates its window as if it
/// had collided on the air.
pub fn resolve_internal_contention(
    ready: &[AccessCategory],
) -> (AccessCategory, Vec<AccessCategory>) {
    assert!(!ready.is_empty(), "contention needs at least one ready AC");
    let winner = *ready.iter().min_by_key(|ac| ac.index()).unwrap();
    let losers = ready.iter().copied().filter(|&ac| ac != winner).collect();
    (winner, losers)
}

/// Why a transmission attempt concluded.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TxResult {
    Success,
    Collision,
    PuHit,
    AckTimeout,
}

/// What the MAC does with the frame after `on_tx_result`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Disposition {
    Done,
    Retry,
    Dropped,
}

/// Contention phase of one access category. Event ids let the driver cancel
/// timers when the carrier or the node's radio state changes.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AcPhase {
    /// Nothing in service.
    Idle,
    /// Needs an idle-for-AIFS span before (re)entering countdown. The timer
    /// is armed only while the node is free and the carrier idle; None is
    /// the frozen form, holding the remaining backoff.
    WaitAifs(Option<EventId>),
    /// Counting down backoff slots.
    Counting(EventId),
    /// Backoff reached zero; awaiting internal contention resolution.
    Ready,
    /// Won contention; the radio commitment (sensing, transmission, ACK
    /// wait) tracks progress from here.
    Committed,
}

/// Full MAC state of one access category on one node.
#[derive(Clone, Debug)]
pub struct AcState {
    pub ac: AccessCategory,
    pub params: EdcaParams,
    pub queue: TxQueue,
    pub cw: u32,
    pub backoff: u32,
    pub phase: AcPhase,
    pub in_service: Option<Frame>,
}

impl AcState {
    pub fn new(ac: AccessCategory, params: EdcaParams) -> Self {
        AcState {
            ac,
            params,
            queue: TxQueue::default(),
            cw: params.cw_min,
            backoff: 0,
            phase: AcPhase::Idle,
            in_service: None,
        }
    }

    /// Doubling rule: CW <- min(2(CW+1)-1, cw_max).
    pub fn escalate_cw(&mut self) {
        self.cw = (2 * (self.cw + 1) - 1).min(self.params.cw_max);
    }

    pub fn reset_cw(&mut self) {
        self.cw = self.params.cw_min;
    }

    /// Applies a transmission result to the in-service frame. `Retry` has
    /// already escalated the window; the driver redraws backoff and
    /// re-enters contention. `Done` and `Dropped` leave the frame in place
    /// for the driver to dispose and reset the window.
    pub fn on_tx_result(&mut self, result: TxResult, max_retries: u32) -> Disposition {
        let f = self
            .in_service
            .as_mut()
            .expect("tx result without a frame in service");
        match result {
            TxResult::Success => {
                self.reset_cw();
                Disposition::Done
            }
            TxResult::Collision | TxResult::PuHit | TxResult::AckTimeout => {
                if f.retry_count >= max_retries {
                    self.reset_cw();
                    Disposition::Dropped
                } else {
                    f.retry_count += 1;
                    self.escalate_cw();
                    Disposition::Retry
                }
            }
        }
    }
}
