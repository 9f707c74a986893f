//! Shared-medium ground truth: one collision domain per channel, overlap
//! collisions, primary-user on/off activity, and carrier state queries.
//!
//! All nodes hear all nodes (no hidden terminals, zero propagation delay),
//! so a channel is busy for everyone or for no one. Primary-user activity is
//! pregenerated per channel as an alternating renewal process, which makes
//! every occupancy query a pure lookup and keeps runs deterministic.

use std::collections::VecDeque;

use rand::Rng;
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};

use crate::engine::SimTime;
use crate::mac::NodeId;

/// Index into the configured channel list.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ChannelId(pub usize);

/// What actually occupies a channel at one instant.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum GroundTruth {
    Idle,
    PuActive,
    SuTransmitting,
    PuAndSu,
}

/// Primary-user activity model for one channel.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PuSchedule {
    pub mode: PuMode,
    /// Mean of the exponential on-interval draw.
    pub mean_on: SimTime,
    /// Mean of the exponential off-interval draw.
    pub mean_off: SimTime,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PuMode {
    Off,
    Alternating,
}

impl PuSchedule {
    pub fn off() -> Self {
        PuSchedule {
            mode: PuMode::Off,
            mean_on: SimTime::ZERO,
            mean_off: SimTime::ZERO,
        }
    }

    pub fn alternating(mean_on: SimTime, mean_off: SimTime) -> Self {
        PuSchedule {
            mode: PuMode::Alternating,
            mean_on,
            mean_off,
        }
    }
}

/// Exponential draw in integer nanoseconds, clamped to at least 1 ns so
/// generated intervals are strictly positive.
fn exp_ns(mean: SimTime, rng: &mut ChaCha12Rng) -> SimTime {
    let u: f64 = rng.gen();
    let ns = -(mean.as_ns() as f64) * (1.0 - u).ln();
    SimTime::from_ns((ns.round() as u64).max(1))
}

/// Pregenerated PU on-intervals for one channel, sorted and disjoint.
/// The channel starts in an off period.
#[derive(Clone, Debug, Default)]
pub struct PuTimeline {
    on_intervals: Vec<(SimTime, SimTime)>,
}

impl PuTimeline {
    pub fn generate(sched: PuSchedule, horizon: SimTime, rng: &mut ChaCha12Rng) -> Self {
        let mut on_intervals = Vec::new();
        if sched.mode == PuMode::Alternating {
            let mut t = SimTime::ZERO;
            while t <= horizon {
                let on_start = t + exp_ns(sched.mean_off, rng);
                let on_end = on_start + exp_ns(sched.mean_on, rng);
                on_intervals.push((on_start, on_end));
                t = on_end;
            }
        }
        PuTimeline { on_intervals }
    }

    pub fn intervals(&self) -> &[(SimTime, SimTime)] {
        &self.on_intervals
    }

    /// PU active at instant `t`; intervals are half-open [start, end).
    pub fn active_at(&self, t: SimTime) -> bool {
        // First interval ending after t is the only one that can contain it.
        let i = self.on_intervals.partition_point(|&(_, end)| end <= t);
        self.on_intervals.get(i).map_or(false, |&(start, _)| start <= t)
    }

    /// PU active at any instant of [t0, t1).
    pub fn active_in(&self, t0: SimTime, t1: SimTime) -> bool {
        assert!(t1 > t0, "empty window");
        let i = self.on_intervals.partition_point(|&(_, end)| end <= t0);
        self.on_intervals.get(i).map_or(false, |&(start, _)| start < t1)
    }

    /// All on/off boundary instants at or before `horizon`, ascending.
    pub fn boundaries_until(&self, horizon: SimTime) -> Vec<SimTime> {
        let mut out = Vec::new();
        for &(s, e) in &self.on_intervals {
            if s <= horizon {
                out.push(s);
            }
            if e <= horizon {
                out.push(e);
            }
        }
        out
    }
}

/// Handle for an ongoing transmission, unique within a run.
pub type TxId = u64;

/// One transmission on a channel. `collided` and `pu_hit` are final once
/// the transmission has ended: a later-starting overlap can still set
/// `collided` while the transmission is in flight.
#[derive(Clone, Debug)]
pub struct TxRecord<M> {
    pub id: TxId,
    pub source: NodeId,
    pub payload: M,
    pub channel: ChannelId,
    pub start: SimTime,
    pub end: SimTime,
    pub collided: bool,
    pub pu_hit: bool,
}

#[derive(Debug)]
struct Lane<M> {
    timeline: PuTimeline,
    active: Vec<TxRecord<M>>,
    /// Recently ended transmissions, ordered by end time, kept long enough
    /// to answer sensing-window queries that look back `retention`.
    ended: VecDeque<TxRecord<M>>,
    successful_airtime: SimTime,
}

/// The shared medium: per-channel transmission sets plus PU ground truth.
#[derive(Debug)]
pub struct Medium<M> {
    lanes: Vec<Lane<M>>,
    retention: SimTime,
    next_tx: TxId,
    log: Option<Vec<TxRecord<M>>>,
}

impl<M: Clone> Medium<M> {
    /// `retention` must cover the longest occupancy window anyone will ask
    /// about (maximum sensing duration); `record_log` keeps every finished
    /// transmission for test inspection.
    pub fn new(timelines: Vec<PuTimeline>, retention: SimTime, record_log: bool) -> Self {
        assert!(!timelines.is_empty(), "at least one channel");
        Medium {
            lanes: timelines
                .into_iter()
                .map(|timeline| Lane {
                    timeline,
                    active: Vec::new(),
                    ended: VecDeque::new(),
                    successful_airtime: SimTime::ZERO,
                })
                .collect(),
            retention,
            next_tx: 1,
            log: record_log.then(Vec::new),
        }
    }

    pub fn channel_count(&self) -> usize {
        self.lanes.len()
    }

    pub fn timeline(&self, ch: ChannelId) -> &PuTimeline {
        &self.lanes[ch.0].timeline
    }

    /// Starts a transmission occupying `ch` during [now, now+duration).
    /// Every already-active transmission on the channel overlaps it, so all
    /// of them (and the new one, if any exist) are marked collided. The PU
    /// verdict is fixed here from the pregenerated timeline.
    pub fn begin_transmission(
        &mut self,
        source: NodeId,
        payload: M,
        ch: ChannelId,
        duration: SimTime,
        now: SimTime,
    ) -> TxId {
        assert!(!duration.is_zero(), "transmission must have positive duration");
        let id = self.next_tx;
        self.next_tx += 1;
        let lane = &mut self.lanes[ch.0];
        let end = now + duration;
        let mut collided = false;
        for other in &mut lane.active {
            other.collided = true;
            collided = true;
        }
        lane.active.push(TxRecord {
            id,
            source,
            payload,
            channel: ch,
            start: now,
            end,
            collided,
            pu_hit: lane.timeline.active_in(now, end),
        });
        self.prune(ch, now);
        id
    }

    /// Removes a transmission whose end time has been reached and returns
    /// its final record.
    pub fn end_transmission(&mut self, id: TxId, now: SimTime) -> TxRecord<M> {
        for lane in &mut self.lanes {
            if let Some(i) = lane.active.iter().position(|t| t.id == id) {
                let rec = lane.active.remove(i);
                debug_assert_eq!(rec.end, now, "ended at its scheduled end time");
                if !rec.collided && !rec.pu_hit {
                    lane.successful_airtime += rec.end - rec.start;
                }
                if let Some(log) = &mut self.log {
                    log.push(rec.clone());
                }
                lane.ended.push_back(rec.clone());
                return rec;
            }
        }
        panic!("end_transmission: unknown tx id {}", id);
    }

    pub fn ground_truth(&self, ch: ChannelId, t: SimTime) -> GroundTruth {
        let lane = &self.lanes[ch.0];
        let pu = lane.timeline.active_at(t);
        let su = lane.active.iter().any(|x| x.start <= t && t < x.end)
            || lane.ended.iter().rev().take_while(|x| x.end > t).any(|x| x.start <= t);
        match (pu, su) {
            (false, false) => GroundTruth::Idle,
            (true, false) => GroundTruth::PuActive,
            (false, true) => GroundTruth::SuTransmitting,
            (true, true) => GroundTruth::PuAndSu,
        }
    }

    pub fn carrier_busy(&self, ch: ChannelId, t: SimTime) -> bool {
        self.ground_truth(ch, t) != GroundTruth::Idle
    }

    /// PU active at any instant of [t0, t1).
    pub fn pu_active_in(&self, ch: ChannelId, t0: SimTime, t1: SimTime) -> bool {
        self.lanes[ch.0].timeline.active_in(t0, t1)
    }

    /// Any secondary transmission overlapping [t0, t1), ongoing or ended.
    /// Correct only while t0 is within the retention window.
    pub fn su_active_in(&self, ch: ChannelId, t0: SimTime, t1: SimTime) -> bool {
        assert!(t1 > t0, "empty window");
        let lane = &self.lanes[ch.0];
        lane.active.iter().any(|x| x.start < t1)
            || lane
                .ended
                .iter()
                .rev()
                .take_while(|x| x.end > t0)
                .any(|x| x.start < t1)
    }

    /// Total airtime of collision-free, PU-free transmissions on `ch`.
    pub fn successful_airtime(&self, ch: ChannelId) -> SimTime {
        self.lanes[ch.0].successful_airtime
    }

    pub fn active_count(&self, ch: ChannelId) -> usize {
        self.lanes[ch.0].active.len()
    }

    /// Full transmission log; present only when requested at construction.
    pub fn log(&self) -> Option<&[TxRecord<M>]> {
        self.log.as_deref()
    }

    /// Consumes the transmission log, if one was kept.
    pub fn take_log(&mut self) -> Option<Vec<TxRecord<M>>> {
        self.log.take()
    }

    fn prune(&mut self, ch: ChannelId, now: SimTime) {
        let lane = &mut self.lanes[ch.0];
        let cutoff = now.saturating_sub(self.retention);
        while lane.ended.front().map_or(false, |x| x.end < cutoff) {
            lane.ended.pop_front();
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn ms(x: u64) -> SimTime {
        SimTime::from_ms(x)
    }

    fn quiet_medium(channels: usize) -> Medium<u32> {
        Medium::new(
            vec![PuTimeline::default(); channels],
            SimTime::from_secs(2),
            true,
        )
    }

    #[test]
    fn single_transmission_is_clean() {
        let mut m = quiet_medium(1);
        let id = m.begin_transmission(0, 7, ChannelId(0), ms(1), ms(10));
        assert!(m.carrier_busy(ChannelId(0), ms(10)));
        let rec = m.end_transmission(id, ms(11));
        assert!(!rec.collided);
        assert!(!rec.pu_hit);
        assert!(!m.carrier_busy(ChannelId(0), ms(11)), "interval is half-open");
    }

    #[test]
    fn one_ns_overlap_collides_both() {
        let mut m = quiet_medium(1);
        let a = m.begin_transmission(0, 1, ChannelId(0), ms(1), SimTime::ZERO);
        // Starts 1 ns before a ends.
        let b = m.begin_transmission(1, 2, ChannelId(0), ms(1), ms(1) - SimTime::from_ns(1));
        let ra = m.end_transmission(a, ms(1));
        let rb = m.end_transmission(b, ms(2) - SimTime::from_ns(1));
        assert!(ra.collided);
        assert!(rb.collided);
    }

    #[test]
    fn back_to_back_transmissions_do_not_collide() {
        let mut m = quiet_medium(1);
        let a = m.begin_transmission(0, 1, ChannelId(0), ms(1), SimTime::ZERO);
        let ra = m.end_transmission(a, ms(1));
        let b = m.begin_transmission(1, 2, ChannelId(0), ms(1), ms(1));
        let rb = m.end_transmission(b, ms(2));
        assert!(!ra.collided);
        assert!(!rb.collided);
    }

    #[test]
    fn channels_are_independent_collision_domains() {
        let mut m = quiet_medium(2);
        let a = m.begin_transmission(0, 1, ChannelId(0), ms(1), SimTime::ZERO);
        let b = m.begin_transmission(1, 2, ChannelId(1), ms(1), SimTime::ZERO);
        assert!(!m.end_transmission(a, ms(1)).collided);
        assert!(!m.end_transmission(b, ms(1)).collided);
    }

    #[test]
    fn ground_truth_states() {
        let mut rng = ChaCha12Rng::seed_from_u64(9);
        let tl = PuTimeline::generate(
            PuSchedule::alternating(SimTime::from_secs(1), SimTime::from_secs(1)),
            SimTime::from_secs(10),
            &mut rng,
        );
        let (on_start, on_end) = tl.intervals()[0];
        let mut m = Medium::new(vec![tl], SimTime::from_secs(2), false);
        let ch = ChannelId(0);

        assert_eq!(m.ground_truth(ch, SimTime::ZERO), GroundTruth::Idle);
        assert_eq!(m.ground_truth(ch, on_start), GroundTruth::PuActive);
        assert_eq!(m.ground_truth(ch, on_end), GroundTruth::Idle);

        let id = m.begin_transmission(0, 0u32, ch, on_end - on_start, on_start);
        assert_eq!(m.ground_truth(ch, on_start), GroundTruth::PuAndSu);
        let rec = m.end_transmission(id, on_end);
        assert!(rec.pu_hit, "fully inside a PU-on interval");
        assert_eq!(
            m.ground_truth(ch, on_end.saturating_sub(SimTime::from_ns(1))),
            GroundTruth::PuAndSu,
            "point queries inside an ended transmission still see it"
        );
        assert_eq!(m.ground_truth(ch, on_end), GroundTruth::Idle);
    }

    #[test]
    fn carrier_busy_tracks_ground_truth() {
        let mut m = quiet_medium(1);
        let ch = ChannelId(0);
        assert!(!m.carrier_busy(ch, ms(1)));
        let id = m.begin_transmission(0, 0, ch, ms(2), ms(1));
        assert!(m.carrier_busy(ch, ms(2)));
        m.end_transmission(id, ms(3));
        assert!(!m.carrier_busy(ch, ms(3)));
    }

    #[test]
    fn pu_mode_off_never_active() {
        let mut rng = ChaCha12Rng::seed_from_u64(1);
        let tl = PuTimeline::generate(PuSchedule::off(), SimTime::from_secs(100), &mut rng);
        assert!(tl.intervals().is_empty());
        assert!(!tl.active_in(SimTime::ZERO, SimTime::from_secs(100)));
    }

    // Oracle: brute-force interval arithmetic over the generated schedule,
    // checked against the binary-search queries and begin_transmission's
    // pu_hit verdict.
    #[test]
    fn pu_queries_match_interval_arithmetic() {
        let mut rng = ChaCha12Rng::seed_from_u64(1234);
        let horizon = SimTime::from_secs(30);
        let tl = PuTimeline::generate(
            PuSchedule::alternating(ms(400), ms(900)),
            horizon,
            &mut rng,
        );
        let intervals = tl.intervals().to_vec();
        assert!(intervals.len() > 10, "schedule is non-trivial");
        for w in intervals.windows(2) {
            assert!(w[0].1 <= w[1].0, "intervals sorted and disjoint");
        }
        for &(s, e) in &intervals {
            assert!(e > s, "strictly positive on-intervals");
        }

        let brute_at = |t: SimTime| intervals.iter().any(|&(s, e)| s <= t && t < e);
        let brute_in =
            |t0: SimTime, t1: SimTime| intervals.iter().any(|&(s, e)| s < t1 && e > t0);

        let step = ms(7);
        let mut t = SimTime::ZERO;
        while t < horizon {
            assert_eq!(tl.active_at(t), brute_at(t), "active_at({})", t);
            assert_eq!(tl.active_in(t, t + ms(13)), brute_in(t, t + ms(13)));
            t += step;
        }

        // Transmissions walked over the same schedule carry the oracle's
        // pu_hit verdict, including windows straddling a boundary.
        let mut m = Medium::new(vec![tl], SimTime::from_secs(2), false);
        let mut t = SimTime::ZERO;
        let dur = ms(3);
        while t < horizon {
            let id = m.begin_transmission(0, 0u32, ChannelId(0), dur, t);
            let rec = m.end_transmission(id, t + dur);
            assert_eq!(rec.pu_hit, brute_in(t, t + dur), "tx at {}", t);
            t += ms(11);
        }
    }

    #[test]
    fn su_window_queries_see_ended_transmissions() {
        let mut m = quiet_medium(1);
        let ch = ChannelId(0);
        let id = m.begin_transmission(0, 0, ch, ms(2), ms(10));
        m.end_transmission(id, ms(12));
        assert!(m.su_active_in(ch, ms(11), ms(15)), "overlaps the tail");
        assert!(m.su_active_in(ch, ms(9), ms(11)), "overlaps the head");
        assert!(!m.su_active_in(ch, ms(12), ms(15)), "starts at its end");
        assert!(!m.su_active_in(ch, ms(8), ms(10)), "ends at its start");
    }

    #[test]
    fn successful_airtime_counts_only_clean_transmissions() {
        let mut m = quiet_medium(1);
        let ch = ChannelId(0);
        let a = m.begin_transmission(0, 1, ch, ms(4), SimTime::ZERO);
        m.end_transmission(a, ms(4));
        let b = m.begin_transmission(0, 2, ch, ms(2), ms(5));
        let c = m.begin_transmission(1, 3, ch, ms(2), ms(6));
        m.end_transmission(b, ms(7));
        m.end_transmission(c, ms(8));
        assert_eq!(m.successful_airtime(ch), ms(4));
        // Airtime can never exceed elapsed time on one channel.
        assert!(m.successful_airtime(ch) <= ms(8));
    }
}
