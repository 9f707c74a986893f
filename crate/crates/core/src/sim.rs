//! Event-driven simulation core. One [`World`] owns the event queue, the
//! per-node MAC state, the shared medium, and the metric sinks, and advances
//! the network through AIFS/backoff contention, the pre-transmission sensing
//! phase, data/ACK exchanges, and PU-triggered channel handoff.
//!
//! Concurrency model: a node has one radio. While it senses, transmits, or
//! waits for an ACK, every access category on that node freezes (backoff
//! timers are cancelled and the remaining count kept); categories on other
//! nodes freeze only while the carrier is busy. Backoff slots that reach
//! zero at the same instant as a foreign transmission start still transmit,
//! which reproduces slot-synchronized collisions; a category that was
//! already at zero when the medium turned busy re-waits AIFS instead.
//!
//! Sensing occupies the node, not the medium: other stations keep counting
//! down while a station senses, and the sensing window classifies whatever
//! the medium actually carried during it.

use crate::channel::{ChannelId, Medium, PuTimeline, TxId, TxRecord};
use crate::engine::{EventId, EventQueue, RngHub, SimTime};
use crate::mac::{
    draw_backoff, edca_params_for, resolve_internal_contention, AcPhase, AcState, AccessCategory,
    Disposition, EnqueueResult, Frame, NodeId, PhyParams, TxResult,
};
use crate::metrics::{FrameCounts, HandoffEvent, MetricsCollector};
use crate::scenario::ScenarioConfig;
use crate::sensing::{
    classify_outcome, post_sensing_action, scan_candidates, PostSensingAction, RocModel,
    SensingOutcome, SensingSpec, SensingStrategy,
};
use crate::traffic::{fragment_bytes, next_arrival, FlowSpec, TrafficModel, TrafficParams};
use serde::{Deserialize, Serialize};

/// Where the sensing phase sits in the channel-access pipeline.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SensePoint {
    /// Sense after every backoff completion, before every attempt.
    #[default]
    PostBackoff,
    /// Sense once per frame: the first attempt senses, retries reuse the
    /// verdict and go straight to transmission.
    PreContention,
}

/// What a transmission carries, attached to each medium record.
#[derive(Clone, Debug)]
pub enum TxPayload {
    Data {
        sender: NodeId,
        dst: NodeId,
        ac: AccessCategory,
        frame_id: u64,
    },
    Ack {
        data_sender: NodeId,
        ac: AccessCategory,
        frame_id: u64,
    },
}

/// Simulation events. Payloads carry indices, never references; all state
/// lives on the [`World`].
#[derive(Clone, Debug)]
enum Ev {
    /// Next message of one application flow arrives at its source queue.
    FlowArrival { flow: usize },
    /// The idle-for-AIFS wait of (node, ac) elapsed.
    AifsExpiry { node: NodeId, ac: usize },
    /// One backoff slot of (node, ac) elapsed.
    BackoffSlot { node: NodeId, ac: usize },
    /// Same-instant microtask: resolve internal contention among the ready
    /// categories of one node.
    TryResolve { node: NodeId },
    /// A sensing window on the current channel finished.
    SensingComplete { node: NodeId },
    /// A transmission (data or ACK) leaves the medium.
    TxEnd { tx: TxId },
    /// SIFS after a cleanly received data frame: the receiver replies.
    AckStart {
        receiver: NodeId,
        sender: NodeId,
        ac: usize,
        frame_id: u64,
        ch: ChannelId,
    },
    /// The sender gave up waiting for an ACK.
    AckTimeout { node: NodeId },
    /// Pregenerated PU on/off boundary.
    PuFlip { ch: ChannelId },
    /// One candidate-channel scan window of the handoff procedure finished.
    ScanStep { node: NodeId },
    /// Re-attempt a scan after no candidate was available.
    HandoffRetry { node: NodeId },
}

/// Radio occupancy of one node.
#[derive(Clone, Debug)]
enum Radio {
    Free,
    /// Assessing the current channel before a transmission attempt.
    Sensing {
        ac: usize,
        started: SimTime,
        spec: SensingSpec,
        ev: EventId,
    },
    TxData,
    /// Data sent; the verdict is the failure cause to apply if no ACK
    /// arrives before the timeout.
    AwaitAck {
        ac: usize,
        frame_id: u64,
        cause: TxResult,
        timeout_ev: EventId,
    },
    TxAck,
    /// Driving the handoff scan across candidate channels.
    Scanning {
        candidates: Vec<ChannelId>,
        idx: usize,
        window_start: SimTime,
        round_started: SimTime,
    },
    /// Parked while a network-wide handoff is in progress.
    Suspended,
}

struct Node {
    acs: [AcState; 4],
    radio: Radio,
    /// At most one pending TryResolve microtask per node.
    resolve_pending: Option<EventId>,
    /// Consecutive BusyUnknown verdicts; at the threshold one Fine sensing
    /// is inserted to disambiguate.
    unknown_streak: u32,
    /// Per-AC flag for [`SensePoint::PreContention`]: the in-service frame
    /// already passed its sensing phase.
    sense_cleared: [bool; 4],
}

/// Everything a finished run exposes.
pub struct RunOutput {
    pub metrics: MetricsCollector,
    /// MAC-level accounting per access category: `delivered` counts hop
    /// successes, so a relayed frame contributes twice.
    pub counts: [FrameCounts; 4],
    pub handoffs: Vec<HandoffEvent>,
    /// Scan rounds that found no usable channel and backed off.
    pub handoff_retries: u64,
    pub events_processed: u64,
    /// Contention-path sensing windows completed (escalations included,
    /// handoff scan windows excluded).
    pub sense_count: u64,
    pub final_channel: ChannelId,
    /// Collision-free, PU-free airtime per channel.
    pub successful_airtime: Vec<SimTime>,
    /// Full transmission log when requested via [`run_logged`].
    pub tx_log: Option<Vec<TxRecord<TxPayload>>>,
}

/// Runs a validated scenario to completion.
pub fn run(cfg: &ScenarioConfig) -> RunOutput {
    World::build(cfg, false).drive()
}

/// Like [`run`], but keeps every finished transmission for inspection.
pub fn run_logged(cfg: &ScenarioConfig) -> RunOutput {
    World::build(cfg, true).drive()
}

struct World {
    phy: PhyParams,
    strategy: SensingStrategy,
    roc: RocModel,
    sense_point: SensePoint,
    low_snr: bool,
    escalate_after: u32,
    escalate_fine_duration: SimTime,
    scan_duration: SimTime,
    handoff_retry_backoff: SimTime,
    duration: SimTime,
    traffic: TrafficParams,
    /// AIFS per AC index; identical on every node.
    aifs: [SimTime; 4],

    queue: EventQueue<Ev>,
    rng: RngHub,
    medium: Medium<TxPayload>,
    nodes: Vec<Node>,
    flows: Vec<FlowSpec>,

    current_channel: ChannelId,
    carrier_busy: bool,
    /// Instant of the last idle-to-busy flip; lets same-instant contenders
    /// still collide while later arrivals re-wait AIFS.
    carrier_busy_since: SimTime,
    handoff_active: bool,

    metrics: MetricsCollector,
    counts: [FrameCounts; 4],
    handoffs: Vec<HandoffEvent>,
    handoff_retries: u64,
    sense_count: u64,
    next_frame_id: u64,
}

impl World {
    fn build(cfg: &ScenarioConfig, record_log: bool) -> World {
        cfg.validate().expect("scenario validated before running");
        let mut rng = RngHub::new(cfg.master_seed);

        let timelines: Vec<PuTimeline> = cfg
            .channels
            .iter()
            .enumerate()
            .map(|(i, sched)| {
                PuTimeline::generate(*sched, cfg.duration, rng.stream(&format!("pu.ch{}", i)))
            })
            .collect();
        // The medium must answer occupancy queries over the longest window
        // anyone senses: contention sensing, Fine escalation, or a scan.
        let mut retention = cfg.scan_duration.max(cfg.escalate_fine_duration);
        for ac in AccessCategory::ALL {
            if let Some(spec) = cfg.strategy.spec_for(ac) {
                retention = retention.max(spec.duration);
            }
        }
        let medium = Medium::new(timelines, retention + SimTime::from_ms(1), record_log);

        let mut aifs = [SimTime::ZERO; 4];
        let nodes: Vec<Node> = (0..cfg.nodes)
            .map(|_| Node {
                acs: AccessCategory::ALL.map(|ac| {
                    let params = edca_params_for(ac, cfg.phy.phy_cw_min, cfg.phy.phy_cw_max)
                        .expect("validated EDCA parameters");
                    aifs[ac.index()] = cfg.phy.aifs(params.aifsn);
                    AcState::new(ac, params)
                }),
                radio: Radio::Free,
                resolve_pending: None,
                unknown_streak: 0,
                sense_cleared: [false; 4],
            })
            .collect();

        let mut world = World {
            phy: cfg.phy,
            strategy: cfg.strategy,
            roc: cfg.roc,
            sense_point: cfg.sense_point,
            low_snr: cfg.low_snr,
            escalate_after: cfg.escalate_after,
            escalate_fine_duration: cfg.escalate_fine_duration,
            scan_duration: cfg.scan_duration,
            handoff_retry_backoff: cfg.handoff_retry_backoff,
            duration: cfg.duration,
            traffic: cfg.traffic,
            aifs,
            queue: EventQueue::new(),
            rng,
            medium,
            nodes,
            flows: cfg.flows.clone(),
            current_channel: ChannelId(0),
            carrier_busy: false,
            carrier_busy_since: SimTime::ZERO,
            handoff_active: false,
            metrics: MetricsCollector::new(),
            counts: [FrameCounts::default(); 4],
            handoffs: Vec::new(),
            handoff_retries: 0,
            sense_count: 0,
            next_frame_id: 1,
        };

        for ch in 0..world.medium.channel_count() {
            for t in world
                .medium
                .timeline(ChannelId(ch))
                .boundaries_until(world.duration)
            {
                world.queue.schedule(t, Ev::PuFlip { ch: ChannelId(ch) });
            }
        }
        for idx in 0..world.flows.len() {
            let flow = world.flows[idx];
            let first = match flow.model {
                TrafficModel::Saturated => flow.start,
                _ => {
                    let stream = format!("traffic.{}.flow{}", flow.model.label(), idx);
                    let traffic = world.traffic;
                    next_arrival(flow.model, &traffic, flow.start, world.rng.stream(&stream))
                }
            };
            if first < world.flow_stop(&flow) {
                world.queue.schedule(first, Ev::FlowArrival { flow: idx });
            }
        }
        world
    }

    fn drive(mut self) -> RunOutput {
        while let Some((now, _id, ev)) = self.queue.pop_next_until(self.duration) {
            self.dispatch(now, ev);
        }
        self.queue.finish_until(self.duration);
        self.audit_conservation();
        RunOutput {
            events_processed: self.queue.stats().fired,
            successful_airtime: (0..self.medium.channel_count())
                .map(|ch| self.medium.successful_airtime(ChannelId(ch)))
                .collect(),
            tx_log: self.medium.take_log(),
            metrics: self.metrics,
            counts: self.counts,
            handoffs: self.handoffs,
            handoff_retries: self.handoff_retries,
            sense_count: self.sense_count,
            final_channel: self.current_channel,
        }
    }

    /// Every frame offered to a queue is either still queued/in service or
    /// accounted for in exactly one disposal counter.
    fn audit_conservation(&self) {
        for ai in 0..4 {
            let live: u64 = self
                .nodes
                .iter()
                .map(|n| n.acs[ai].queue.len() as u64 + n.acs[ai].in_service.is_some() as u64)
                .sum();
            assert_eq!(
                self.counts[ai].outstanding(),
                live,
                "frame conservation violated for {}",
                AccessCategory::from_index(ai).label()
            );
        }
    }

    fn flow_stop(&self, flow: &FlowSpec) -> SimTime {
        flow.stop.unwrap_or(self.duration).min(self.duration)
    }

    fn dispatch(&mut self, now: SimTime, ev: Ev) {
        match ev {
            Ev::FlowArrival { flow } => self.on_flow_arrival(now, flow),
            Ev::AifsExpiry { node, ac } => self.on_aifs_expiry(now, node, ac),
            Ev::BackoffSlot { node, ac } => self.on_backoff_slot(now, node, ac),
            Ev::TryResolve { node } => self.on_try_resolve(now, node),
            Ev::SensingComplete { node } => self.on_sensing_complete(now, node),
            Ev::TxEnd { tx } => self.on_tx_end(now, tx),
            Ev::AckStart {
                receiver,
                sender,
                ac,
                frame_id,
                ch,
            } => self.on_ack_start(now, receiver, sender, ac, frame_id, ch),
            Ev::AckTimeout { node } => self.on_ack_timeout(now, node),
            Ev::PuFlip { ch } => {
                if ch == self.current_channel {
                    self.carrier_refresh(now);
                }
            }
            Ev::ScanStep { node } => self.on_scan_step(now, node),
            Ev::HandoffRetry { node } => self.on_handoff_retry(now, node),
        }
    }

    // -- contention plumbing ------------------------------------------------

    /// A category may run its AIFS/backoff timers only while its node's
    /// radio is free and the carrier idle.
    fn eligible(&self, n: NodeId) -> bool {
        matches!(self.nodes[n].radio, Radio::Free) && !self.carrier_busy
    }

    /// Reconciles one category's timers with the current carrier and radio
    /// state: arms AIFS when it may run, freezes (keeping the remaining
    /// backoff) when it may not, and demotes a stale Ready back to an AIFS
    /// wait once the medium has been busy for longer than an instant.
    fn refresh_ac(&mut self, n: NodeId, ai: usize, now: SimTime) {
        let eligible = self.eligible(n);
        match self.nodes[n].acs[ai].phase {
            AcPhase::WaitAifs(None) if eligible => {
                let at = now + self.aifs[ai];
                let ev = self.queue.schedule(at, Ev::AifsExpiry { node: n, ac: ai });
                self.nodes[n].acs[ai].phase = AcPhase::WaitAifs(Some(ev));
            }
            AcPhase::WaitAifs(Some(ev)) if !eligible => {
                self.queue.cancel(ev);
                self.nodes[n].acs[ai].phase = AcPhase::WaitAifs(None);
            }
            AcPhase::Counting(ev) if !eligible => {
                self.queue.cancel(ev);
                self.nodes[n].acs[ai].phase = AcPhase::WaitAifs(None);
            }
            AcPhase::Ready => {
                if self.carrier_busy && self.carrier_busy_since < now {
                    self.nodes[n].acs[ai].phase = AcPhase::WaitAifs(None);
                } else if matches!(self.nodes[n].radio, Radio::Free) {
                    self.ensure_resolve(n, now);
                }
            }
            _ => {}
        }
    }

    fn refresh_node(&mut self, n: NodeId, now: SimTime) {
        for ai in 0..4 {
            self.refresh_ac(n, ai, now);
        }
    }

    fn refresh_all(&mut self, now: SimTime) {
        for n in 0..self.nodes.len() {
            self.refresh_node(n, now);
        }
    }

    /// Re-reads the carrier on the current channel and, on a flip, freezes
    /// or thaws every node.
    fn carrier_refresh(&mut self, now: SimTime) {
        let busy = self.medium.carrier_busy(self.current_channel, now);
        if busy != self.carrier_busy {
            self.carrier_busy = busy;
            if busy {
                self.carrier_busy_since = now;
            }
            self.refresh_all(now);
        }
    }

    fn ensure_resolve(&mut self, n: NodeId, now: SimTime) {
        if self.nodes[n].resolve_pending.is_none() {
            let ev = self.queue.schedule(now, Ev::TryResolve { node: n });
            self.nodes[n].resolve_pending = Some(ev);
        }
    }

    /// New backoff from the current window; the category then needs a fresh
    /// idle-for-AIFS span.
    fn redraw(&mut self, n: NodeId, ai: usize) {
        let cw = self.nodes[n].acs[ai].cw;
        let b = draw_backoff(cw, self.rng.stream(&format!("backoff.node{}", n)));
        self.nodes[n].acs[ai].backoff = b;
        self.nodes[n].acs[ai].phase = AcPhase::WaitAifs(None);
    }

    /// Moves the queue head into service and starts contention for it.
    fn start_service(&mut self, n: NodeId, ai: usize, now: SimTime) {
        debug_assert!(self.nodes[n].acs[ai].in_service.is_none());
        match self.nodes[n].acs[ai].queue.pop() {
            None => self.nodes[n].acs[ai].phase = AcPhase::Idle,
            Some(frame) => {
                self.nodes[n].acs[ai].in_service = Some(frame);
                self.nodes[n].sense_cleared[ai] = false;
                self.redraw(n, ai);
                self.refresh_ac(n, ai, now);
            }
        }
    }

    /// Offers a frame to (node, ac); every offer is counted as enqueued so
    /// the disposal counters add back up.
    fn offer(&mut self, n: NodeId, frame: Frame, now: SimTime) {
        let ai = frame.ac.index();
        self.counts[ai].enqueued += 1;
        match self.nodes[n].acs[ai].queue.enqueue(frame, now) {
            EnqueueResult::Accepted => {
                if self.nodes[n].acs[ai].in_service.is_none() {
                    self.start_service(n, ai, now);
                }
            }
            EnqueueResult::DroppedOverflow => self.counts[ai].dropped_overflow += 1,
            EnqueueResult::RejectedOversize => self.counts[ai].rejected_oversize += 1,
        }
    }

    /// Keeps saturated queues full: called at flow start and after every
    /// disposal on the category.
    fn saturated_topup(&mut self, n: NodeId, ai: usize, now: SimTime) {
        for idx in 0..self.flows.len() {
            let flow = self.flows[idx];
            if flow.model != TrafficModel::Saturated
                || flow.src != n
                || flow.ac.index() != ai
                || now < flow.start
                || now >= self.flow_stop(&flow)
            {
                continue;
            }
            let bits = u64::from(self.traffic.message_bytes(TrafficModel::Saturated)) * 8;
            while self.nodes[n].acs[ai].queue.fits(bits) {
                let frame = self.make_frame(&flow, self.traffic.message_bytes(flow.model), now);
                self.counts[ai].enqueued += 1;
                let res = self.nodes[n].acs[ai].queue.enqueue(frame, now);
                debug_assert_eq!(res, EnqueueResult::Accepted);
            }
        }
    }

    fn make_frame(&mut self, flow: &FlowSpec, bytes: u32, now: SimTime) -> Frame {
        let id = self.next_frame_id;
        self.next_frame_id += 1;
        Frame {
            id,
            src: flow.src,
            dst: flow.hop_dst(),
            origin: flow.src,
            final_dst: flow.dst,
            ac: flow.ac,
            payload_bits: u64::from(bytes) * 8,
            created_at: now,
            enqueued_at: now,
            first_phy_tx_at: None,
            delivered_at: None,
            retry_count: 0,
            max_hop_mad: SimTime::ZERO,
        }
    }

    /// Common tail of every disposal: the slot is free, saturated sources
    /// may refill, and the next head (if any) enters service.
    fn after_disposal(&mut self, n: NodeId, ai: usize, now: SimTime) {
        debug_assert!(self.nodes[n].acs[ai].in_service.is_none());
        self.saturated_topup(n, ai, now);
        self.start_service(n, ai, now);
    }

    /// Releases the radio after a commitment ends. During an active handoff
    /// the node parks instead of resuming contention.
    fn node_free(&mut self, n: NodeId, now: SimTime) {
        self.nodes[n].radio = if self.handoff_active {
            Radio::Suspended
        } else {
            Radio::Free
        };
        self.refresh_node(n, now);
    }

    // -- timer events -------------------------------------------------------

    fn on_flow_arrival(&mut self, now: SimTime, idx: usize) {
        let flow = self.flows[idx];
        if flow.model == TrafficModel::Saturated {
            let ai = flow.ac.index();
            self.saturated_topup(flow.src, ai, now);
            if self.nodes[flow.src].acs[ai].in_service.is_none() {
                self.start_service(flow.src, ai, now);
            }
            return;
        }
        let bytes = self.traffic.message_bytes(flow.model);
        for chunk in fragment_bytes(bytes) {
            let frame = self.make_frame(&flow, chunk, now);
            self.offer(flow.src, frame, now);
        }
        let stream = format!("traffic.{}.flow{}", flow.model.label(), idx);
        let traffic = self.traffic;
        let next = next_arrival(flow.model, &traffic, now, self.rng.stream(&stream));
        if next < self.flow_stop(&flow) {
            self.queue.schedule(next, Ev::FlowArrival { flow: idx });
        }
    }

    fn on_aifs_expiry(&mut self, now: SimTime, n: NodeId, ai: usize) {
        debug_assert!(matches!(
            self.nodes[n].acs[ai].phase,
            AcPhase::WaitAifs(Some(_))
        ));
        debug_assert!(self.eligible(n), "AIFS timer armed while ineligible");
        if self.nodes[n].acs[ai].backoff == 0 {
            self.nodes[n].acs[ai].phase = AcPhase::Ready;
            self.ensure_resolve(n, now);
        } else {
            let at = now + self.phy.slot_time;
            let ev = self.queue.schedule(at, Ev::BackoffSlot { node: n, ac: ai });
            self.nodes[n].acs[ai].phase = AcPhase::Counting(ev);
        }
    }

    fn on_backoff_slot(&mut self, now: SimTime, n: NodeId, ai: usize) {
        debug_assert!(matches!(self.nodes[n].acs[ai].phase, AcPhase::Counting(_)));
        let ac = &mut self.nodes[n].acs[ai];
        debug_assert!(ac.backoff > 0);
        ac.backoff -= 1;
        if ac.backoff == 0 {
            ac.phase = AcPhase::Ready;
            self.ensure_resolve(n, now);
        } else {
            let at = now + self.phy.slot_time;
            let ev = self.queue.schedule(at, Ev::BackoffSlot { node: n, ac: ai });
            self.nodes[n].acs[ai].phase = AcPhase::Counting(ev);
        }
    }

    /// Internal contention: among the ready categories the highest priority
    /// wins the radio; each loser suffers a virtual collision (window
    /// escalation and redraw, no retry charge).
    fn on_try_resolve(&mut self, now: SimTime, n: NodeId) {
        self.nodes[n].resolve_pending = None;
        if !matches!(self.nodes[n].radio, Radio::Free) {
            return;
        }
        let ready: Vec<AccessCategory> = AccessCategory::ALL
            .into_iter()
            .filter(|ac| self.nodes[n].acs[ac.index()].phase == AcPhase::Ready)
            .collect();
        if ready.is_empty() {
            return;
        }
        let (winner, losers) = resolve_internal_contention(&ready);
        for loser in losers {
            let li = loser.index();
            self.nodes[n].acs[li].escalate_cw();
            self.redraw(n, li);
        }
        let wi = winner.index();
        self.nodes[n].acs[wi].phase = AcPhase::Committed;
        self.grant(n, wi, now);
    }

    /// The category owns the radio; sense first unless disabled or already
    /// cleared for this frame.
    fn grant(&mut self, n: NodeId, ai: usize, now: SimTime) {
        let ac = AccessCategory::from_index(ai);
        match self.strategy.spec_for(ac) {
            Some(spec)
                if !(self.sense_point == SensePoint::PreContention
                    && self.nodes[n].sense_cleared[ai]) =>
            {
                self.start_sensing(n, ai, spec, now);
            }
            _ => self.begin_data_tx(n, ai, now),
        }
    }

    fn start_sensing(&mut self, n: NodeId, ai: usize, spec: SensingSpec, now: SimTime) {
        self.sense_count += 1;
        let ev = self
            .queue
            .schedule(now + spec.duration, Ev::SensingComplete { node: n });
        self.nodes[n].radio = Radio::Sensing {
            ac: ai,
            started: now,
            spec,
            ev,
        };
        // The radio is taken: freeze the node's other categories.
        self.refresh_node(n, now);
    }

    fn begin_data_tx(&mut self, n: NodeId, ai: usize, now: SimTime) {
        let frame = self.nodes[n].acs[ai]
            .in_service
            .as_mut()
            .expect("transmission granted without a frame");
        if frame.first_phy_tx_at.is_none() {
            frame.first_phy_tx_at = Some(now);
            let mad = now - frame.enqueued_at;
            frame.max_hop_mad = frame.max_hop_mad.max(mad);
            let snapshot = frame.clone();
            self.metrics.record_media_access_delay(&snapshot);
        }
        let frame = self.nodes[n].acs[ai].in_service.as_ref().unwrap();
        let payload = TxPayload::Data {
            sender: n,
            dst: frame.dst,
            ac: frame.ac,
            frame_id: frame.id,
        };
        let duration = self.phy.data_tx_duration(frame.payload_bits);
        let tx = self
            .medium
            .begin_transmission(n, payload, self.current_channel, duration, now);
        self.queue.schedule(now + duration, Ev::TxEnd { tx });
        self.nodes[n].radio = Radio::TxData;
        self.refresh_node(n, now);
        self.carrier_refresh(now);
    }

    // -- sensing ------------------------------------------------------------

    fn on_sensing_complete(&mut self, now: SimTime, n: NodeId) {
        let Radio::Sensing {
            ac: ai,
            started,
            spec,
            ..
        } = self.nodes[n].radio
        else {
            panic!("sensing completion for a node that is not sensing");
        };
        let ch = self.current_channel;
        let pu = self.medium.pu_active_in(ch, started, now);
        let su = self.medium.su_active_in(ch, started, now);
        let (pf, pmd) = self.roc.effective(spec.stype, self.low_snr);
        let outcome = classify_outcome(
            spec.stype,
            pu,
            su,
            pf,
            pmd,
            self.rng.stream("sensing.roc"),
        );
        if outcome == SensingOutcome::BusyUnknown {
            self.nodes[n].unknown_streak += 1;
        } else {
            self.nodes[n].unknown_streak = 0;
        }
        let action = post_sensing_action(
            outcome,
            spec.stype,
            self.nodes[n].unknown_streak,
            self.escalate_after,
        );
        match action {
            PostSensingAction::Transmit => {
                if self.sense_point == SensePoint::PreContention {
                    self.nodes[n].sense_cleared[ai] = true;
                }
                self.begin_data_tx(n, ai, now);
            }
            PostSensingAction::DeferBackoff => {
                // Shared-channel etiquette: re-contend without escalating.
                self.redraw(n, ai);
                self.node_free(n, now);
            }
            PostSensingAction::EscalateFine => {
                self.nodes[n].unknown_streak = 0;
                let fine = SensingSpec::from_duration(self.escalate_fine_duration);
                self.start_sensing(n, ai, fine, now);
            }
            PostSensingAction::Handoff => self.initiate_handoff(n, ai, now),
        }
    }

    // -- transmissions ------------------------------------------------------

    fn on_tx_end(&mut self, now: SimTime, tx: TxId) {
        let rec = self.medium.end_transmission(tx, now);
        self.carrier_refresh(now);
        match rec.payload {
            TxPayload::Data {
                sender,
                dst,
                ac,
                frame_id,
            } => {
                debug_assert!(matches!(self.nodes[sender].radio, Radio::TxData));
                // Failure cause if no ACK arrives: a collision or PU overlap
                // corrupted the frame, otherwise the ACK itself went missing.
                let cause = if rec.collided {
                    TxResult::Collision
                } else if rec.pu_hit {
                    TxResult::PuHit
                } else {
                    TxResult::AckTimeout
                };
                let timeout_ev = self.queue.schedule(
                    now + self.phy.ack_timeout(),
                    Ev::AckTimeout { node: sender },
                );
                self.nodes[sender].radio = Radio::AwaitAck {
                    ac: ac.index(),
                    frame_id,
                    cause,
                    timeout_ev,
                };
                if cause == TxResult::AckTimeout {
                    // Frame decodable: the receiver replies SIFS later.
                    self.queue.schedule(
                        now + self.phy.sifs,
                        Ev::AckStart {
                            receiver: dst,
                            sender,
                            ac: ac.index(),
                            frame_id,
                            ch: rec.channel,
                        },
                    );
                }
            }
            TxPayload::Ack {
                data_sender,
                ac,
                frame_id,
            } => {
                if matches!(self.nodes[rec.source].radio, Radio::TxAck) {
                    self.node_free(rec.source, now);
                }
                if !rec.collided && !rec.pu_hit {
                    self.on_ack_received(now, data_sender, ac, frame_id);
                }
            }
        }
    }

    fn on_ack_start(
        &mut self,
        now: SimTime,
        receiver: NodeId,
        sender: NodeId,
        ac: usize,
        frame_id: u64,
        ch: ChannelId,
    ) {
        // A radio mid-transmission or off-channel cannot reply; the sender
        // will time out and retry. Sensing, ACK-waiting, and suspended
        // radios still acknowledge (the reply is part of the previous
        // exchange; a concurrent sensing window simply observes it).
        match self.nodes[receiver].radio {
            Radio::TxData | Radio::TxAck | Radio::Scanning { .. } => return,
            Radio::Free => {
                self.nodes[receiver].radio = Radio::TxAck;
                self.refresh_node(receiver, now);
            }
            Radio::Sensing { .. } | Radio::AwaitAck { .. } | Radio::Suspended => {}
        }
        let payload = TxPayload::Ack {
            data_sender: sender,
            ac: AccessCategory::from_index(ac),
            frame_id,
        };
        let duration = self.phy.ack_tx_duration();
        let tx = self.medium.begin_transmission(receiver, payload, ch, duration, now);
        self.queue.schedule(now + duration, Ev::TxEnd { tx });
        self.carrier_refresh(now);
    }

    /// A clean ACK closes the exchange: the data frame is delivered to this
    /// hop atomically at ACK completion.
    fn on_ack_received(&mut self, now: SimTime, sender: NodeId, ac: AccessCategory, frame_id: u64) {
        let Radio::AwaitAck {
            ac: ai,
            frame_id: awaited,
            timeout_ev,
            ..
        } = self.nodes[sender].radio
        else {
            panic!("clean ACK for a sender that is not waiting");
        };
        assert_eq!(awaited, frame_id, "ACK matches the in-flight frame");
        debug_assert_eq!(ai, ac.index());
        self.queue.cancel(timeout_ev);

        let disposition = self.nodes[sender].acs[ai].on_tx_result(TxResult::Success, self.phy.max_retries);
        debug_assert_eq!(disposition, Disposition::Done);
        let mut frame = self.nodes[sender].acs[ai].in_service.take().unwrap();
        self.counts[ai].delivered += 1;

        if frame.dst == frame.final_dst {
            frame.delivered_at = Some(now);
            self.metrics.record_e2e_delay(&frame);
            self.metrics.record_delivery(frame.ac, frame.payload_bits, now);
        } else {
            // Relay hop: same application frame, fresh MAC lifecycle.
            let mut hop = frame.clone();
            hop.src = frame.dst;
            hop.dst = frame.final_dst;
            hop.first_phy_tx_at = None;
            hop.retry_count = 0;
            self.offer(frame.dst, hop, now);
        }
        self.after_disposal(sender, ai, now);
        self.node_free(sender, now);
    }

    fn on_ack_timeout(&mut self, now: SimTime, n: NodeId) {
        let Radio::AwaitAck { ac: ai, cause, .. } = self.nodes[n].radio else {
            panic!("ACK timeout for a node that is not waiting");
        };
        match self.nodes[n].acs[ai].on_tx_result(cause, self.phy.max_retries) {
            Disposition::Retry => {
                self.redraw(n, ai);
            }
            Disposition::Dropped => {
                self.counts[ai].dropped_retry += 1;
                self.nodes[n].acs[ai].in_service = None;
                self.after_disposal(n, ai, now);
            }
            Disposition::Done => unreachable!("timeout cannot succeed"),
        }
        self.node_free(n, now);
    }

    // -- handoff ------------------------------------------------------------

    /// A PU verdict suspends the whole network while the detecting node
    /// scans for a new channel. In-flight exchanges finish on the old
    /// channel; interrupted sensing windows are abandoned and re-contended.
    fn initiate_handoff(&mut self, n: NodeId, ai: usize, now: SimTime) {
        debug_assert!(!self.handoff_active);
        self.handoff_active = true;
        // The triggering frame re-contends after the switch, unescalated:
        // a PU appearance is not a failed attempt.
        self.redraw(n, ai);
        for m in 0..self.nodes.len() {
            if let Some(ev) = self.nodes[m].resolve_pending.take() {
                self.queue.cancel(ev);
            }
            for li in 0..4 {
                match self.nodes[m].acs[li].phase {
                    AcPhase::WaitAifs(Some(ev)) | AcPhase::Counting(ev) => {
                        self.queue.cancel(ev);
                        self.nodes[m].acs[li].phase = AcPhase::WaitAifs(None);
                    }
                    _ => {}
                }
            }
            match self.nodes[m].radio {
                Radio::Free => self.nodes[m].radio = Radio::Suspended,
                Radio::Sensing { ac, ev, .. } => {
                    self.queue.cancel(ev);
                    self.redraw(m, ac);
                    self.nodes[m].radio = Radio::Suspended;
                }
                // Let transmissions and ACK waits conclude; node_free parks
                // them while the handoff is still active.
                Radio::TxData | Radio::AwaitAck { .. } | Radio::TxAck => {}
                Radio::Suspended => {}
                Radio::Scanning { .. } => unreachable!("one handoff at a time"),
            }
        }
        self.start_scan_round(n, now);
    }

    fn start_scan_round(&mut self, n: NodeId, now: SimTime) {
        let candidates = scan_candidates(self.medium.channel_count(), self.current_channel);
        if candidates.is_empty() {
            self.schedule_handoff_retry(n, now);
            return;
        }
        self.queue
            .schedule(now + self.scan_duration, Ev::ScanStep { node: n });
        self.nodes[n].radio = Radio::Scanning {
            candidates,
            idx: 0,
            window_start: now,
            round_started: now,
        };
    }

    fn schedule_handoff_retry(&mut self, n: NodeId, now: SimTime) {
        self.handoff_retries += 1;
        self.nodes[n].radio = Radio::Suspended;
        self.queue.schedule(
            now + self.handoff_retry_backoff,
            Ev::HandoffRetry { node: n },
        );
    }

    fn on_scan_step(&mut self, now: SimTime, n: NodeId) {
        let Radio::Scanning {
            ref candidates,
            idx,
            window_start,
            round_started,
        } = self.nodes[n].radio
        else {
            panic!("scan step for a node that is not scanning");
        };
        let candidates = candidates.clone();
        let cand = candidates[idx];
        // Full-window Fine assessment of the candidate channel.
        let spec = SensingSpec::from_duration(self.scan_duration);
        let pu = self.medium.pu_active_in(cand, window_start, now);
        let su = self.medium.su_active_in(cand, window_start, now);
        let (pf, pmd) = self.roc.effective(spec.stype, self.low_snr);
        let outcome = classify_outcome(
            spec.stype,
            pu,
            su,
            pf,
            pmd,
            self.rng.stream("sensing.roc"),
        );
        match outcome {
            // Idle is adoptable; so is a channel carrying only other
            // secondary users, which EDCA contends with as usual.
            SensingOutcome::Idle | SensingOutcome::BusySU => {
                self.handoffs.push(HandoffEvent {
                    at: now,
                    initiated_at: round_started,
                    from: self.current_channel,
                    to: cand,
                    scans: (idx + 1) as u32,
                    pu_active_on_target: self.medium.timeline(cand).active_at(now),
                });
                self.current_channel = cand;
                self.handoff_active = false;
                self.nodes[n].radio = Radio::Free;
                for m in 0..self.nodes.len() {
                    // Streaks and per-frame sensing clearances are evidence
                    // about the old channel; they do not carry over.
                    self.nodes[m].unknown_streak = 0;
                    self.nodes[m].sense_cleared = [false; 4];
                    if matches!(self.nodes[m].radio, Radio::Suspended) {
                        self.nodes[m].radio = Radio::Free;
                    }
                }
                self.carrier_busy = self.medium.carrier_busy(cand, now);
                if self.carrier_busy {
                    self.carrier_busy_since = now;
                }
                self.refresh_all(now);
            }
            SensingOutcome::BusyPU | SensingOutcome::BusyUnknown => {
                if idx + 1 < candidates.len() {
                    self.queue
                        .schedule(now + self.scan_duration, Ev::ScanStep { node: n });
                    self.nodes[n].radio = Radio::Scanning {
                        candidates,
                        idx: idx + 1,
                        window_start: now,
                        round_started,
                    };
                } else {
                    self.schedule_handoff_retry(n, now);
                }
            }
        }
    }

    fn on_handoff_retry(&mut self, now: SimTime, n: NodeId) {
        debug_assert!(self.handoff_active);
        self.start_scan_round(n, now);
    }
}
