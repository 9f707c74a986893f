//! Run configuration: scenario validation, the named presets, single-run
//! execution with exported artifacts, and sensing-duration sweeps.

use std::collections::BTreeMap;
use std::io;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::channel::PuSchedule;
use crate::engine::{derive_seed, SimTime};
use crate::mac::{edca_params_for, AccessCategory, NodeId, PhyParams};
use crate::metrics::{
    self, BucketSeries, FrameCounts, HandoffEvent, SeriesKey, SeriesStats,
};
use crate::sensing::{classify_type, RocModel, SensingStrategy, DEFAULT_ESCALATE_AFTER};
use crate::sim::{self, RunOutput, SensePoint};
use crate::traffic::{FlowSpec, TrafficModel, TrafficParams};

/// Complete description of one simulation run. Every field has a default,
/// so config files only need to state what they change.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScenarioConfig {
    pub name: String,
    /// Station count, the relay (if any) included; ids are 0..nodes.
    pub nodes: usize,
    /// Which station relays `via` flows in an infrastructure topology.
    pub server: Option<NodeId>,
    pub flows: Vec<FlowSpec>,
    pub phy: PhyParams,
    pub strategy: SensingStrategy,
    pub roc: RocModel,
    /// One PU schedule per channel; the network starts on channel 0.
    pub channels: Vec<PuSchedule>,
    pub duration: SimTime,
    pub master_seed: u64,
    pub sense_point: SensePoint,
    pub n_buckets: usize,
    /// Consecutive BusyUnknown verdicts before a Fine sensing is inserted.
    pub escalate_after: u32,
    pub escalate_fine_duration: SimTime,
    /// Per-candidate assessment window of the handoff scan.
    pub scan_duration: SimTime,
    /// Pause before re-scanning when no candidate channel was usable.
    pub handoff_retry_backoff: SimTime,
    /// Degrade Coarse/Moderate accuracy as at low signal-to-noise ratio.
    pub low_snr: bool,
    pub traffic: TrafficParams,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        ScenarioConfig {
            name: "custom".to_owned(),
            nodes: 2,
            server: None,
            flows: Vec::new(),
            phy: PhyParams::default(),
            strategy: SensingStrategy::adaptive_default(),
            roc: RocModel::default(),
            channels: vec![PuSchedule::off()],
            duration: SimTime::from_secs(10),
            master_seed: 1,
            sense_point: SensePoint::default(),
            n_buckets: 100,
            escalate_after: DEFAULT_ESCALATE_AFTER,
            escalate_fine_duration: SimTime::from_ms(50),
            scan_duration: SimTime::from_ms(50),
            handoff_retry_backoff: SimTime::from_ms(200),
            low_snr: false,
            traffic: TrafficParams::default(),
        }
    }
}

impl ScenarioConfig {
    /// Structural checks; every runnable config passes them.
    pub fn validate(&self) -> Result<(), String> {
        if self.nodes == 0 {
            return Err("at least one node".to_owned());
        }
        if let Some(s) = self.server {
            if s >= self.nodes {
                return Err(format!("server id {} out of range (nodes = {})", s, self.nodes));
            }
        }
        for (i, f) in self.flows.iter().enumerate() {
            let check = |role: &str, id: NodeId| {
                if id >= self.nodes {
                    Err(format!("flow {}: {} {} out of range (nodes = {})", i, role, id, self.nodes))
                } else {
                    Ok(())
                }
            };
            check("src", f.src)?;
            check("dst", f.dst)?;
            if f.src == f.dst {
                return Err(format!("flow {}: src equals dst", i));
            }
            if let Some(v) = f.via {
                check("via", v)?;
                if v == f.src || v == f.dst {
                    return Err(format!("flow {}: relay must differ from endpoints", i));
                }
                if self.server != Some(v) {
                    return Err(format!("flow {}: via {} is not the configured server", i, v));
                }
            }
            if let Some(stop) = f.stop {
                if stop <= f.start {
                    return Err(format!("flow {}: stop at or before start", i));
                }
            }
        }
        for ac in AccessCategory::ALL {
            edca_params_for(ac, self.phy.phy_cw_min, self.phy.phy_cw_max)?;
        }
        self.roc.validate()?;
        if self.channels.is_empty() {
            return Err("at least one channel".to_owned());
        }
        if self.n_buckets == 0 {
            return Err("n_buckets must be positive".to_owned());
        }
        if self.escalate_after == 0 {
            return Err("escalate_after must be positive".to_owned());
        }
        for (label, d) in [
            ("scan_duration", self.scan_duration),
            ("escalate_fine_duration", self.escalate_fine_duration),
        ] {
            if d.is_zero() || !classify_type(d).distinguishes_pu() {
                return Err(format!(
                    "{} must exceed 5 ms so the window can identify a primary user",
                    label
                ));
            }
        }
        if self.handoff_retry_backoff.is_zero() {
            return Err("handoff_retry_backoff must be positive".to_owned());
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// Presets
// ---------------------------------------------------------------------------

/// Built-in scenario names, in listing order.
pub const PRESET_NAMES: [&str; 5] = [
    "voice-adhoc-4",
    "email-infra",
    "video-infra",
    "combined-eval",
    "handoff-demo",
];

/// One-line description of each preset, for `preset --list`.
pub fn preset_description(name: &str) -> &'static str {
    match name {
        "voice-adhoc-4" => "4-node ad hoc voice mesh: 12 directed CBR flows, 300 s",
        "email-infra" => "4 stations exchanging heavy email with a relay server, 300 s",
        "video-infra" => "4-station video conference relayed through a server, 300 s",
        "combined-eval" => "voice, video, and email mixed across 4 stations and a server, 300 s",
        "handoff-demo" => "2 stations dodging an intermittent primary user across 3 channels, 60 s",
        _ => "",
    }
}

/// Builds a named preset. Errors list the available names.
pub fn preset(name: &str) -> Result<ScenarioConfig, String> {
    let mut cfg = ScenarioConfig {
        name: name.to_owned(),
        duration: SimTime::from_secs(300),
        roc: RocModel::perfect(),
        ..ScenarioConfig::default()
    };
    match name {
        "voice-adhoc-4" => {
            cfg.nodes = 4;
            cfg.flows = directed_pairs(4)
                .into_iter()
                .enumerate()
                .map(|(k, (src, dst))| {
                    FlowSpec::new(src, dst, TrafficModel::VoiceCbr)
                        .starting_at(stagger(cfg.traffic.voice_period, k, 12))
                })
                .collect();
        }
        "email-infra" => {
            cfg.nodes = 5;
            cfg.server = Some(4);
            for i in 0..4 {
                cfg.flows.push(FlowSpec::new(i, 4, TrafficModel::EmailHeavy));
                cfg.flows.push(FlowSpec::new(4, i, TrafficModel::EmailHeavy));
            }
        }
        "video-infra" => {
            cfg.nodes = 5;
            cfg.server = Some(4);
            cfg.phy.data_rate_bps = 240_000_000;
            cfg.flows = directed_pairs(4)
                .into_iter()
                .enumerate()
                .map(|(k, (src, dst))| {
                    FlowSpec::new(src, dst, TrafficModel::VideoConf)
                        .via(4)
                        .starting_at(stagger(cfg.traffic.video_period, k, 12))
                })
                .collect();
        }
        "combined-eval" => {
            cfg.nodes = 5;
            cfg.server = Some(4);
            cfg.phy.data_rate_bps = 240_000_000;
            let voice_pairs = [(0, 1), (1, 0), (2, 3), (3, 2)];
            for (k, (src, dst)) in voice_pairs.into_iter().enumerate() {
                cfg.flows.push(
                    FlowSpec::new(src, dst, TrafficModel::VoiceCbr)
                        .starting_at(stagger(cfg.traffic.voice_period, k, 4)),
                );
            }
            for (k, (src, dst)) in voice_pairs.into_iter().enumerate() {
                cfg.flows.push(
                    FlowSpec::new(src, dst, TrafficModel::VideoConf)
                        .via(4)
                        .starting_at(stagger(cfg.traffic.video_period, k, 4)),
                );
            }
            for i in 0..4 {
                cfg.flows.push(FlowSpec::new(i, 4, TrafficModel::EmailHeavy));
                cfg.flows.push(FlowSpec::new(4, i, TrafficModel::EmailHeavy));
            }
        }
        "handoff-demo" => {
            cfg.nodes = 2;
            cfg.duration = SimTime::from_secs(60);
            cfg.strategy = SensingStrategy::fixed_ms(50.0);
            cfg.channels = vec![
                PuSchedule::alternating(SimTime::from_ms(500), SimTime::from_secs(2));
                3
            ];
            cfg.flows = vec![
                FlowSpec::new(0, 1, TrafficModel::Saturated),
                FlowSpec::new(1, 0, TrafficModel::VoiceCbr),
            ];
        }
        other => {
            return Err(format!(
                "unknown preset '{}'; available: {}",
                other,
                PRESET_NAMES.join(", ")
            ))
        }
    }
    cfg.validate().expect("presets are valid by construction");
    Ok(cfg)
}

/// All ordered (src, dst) pairs of nodes 0..n.
fn directed_pairs(n: NodeId) -> Vec<(NodeId, NodeId)> {
    let mut out = Vec::new();
    for src in 0..n {
        for dst in 0..n {
            if src != dst {
                out.push((src, dst));
            }
        }
    }
    out
}

/// Spreads `count` CBR flow starts evenly over one period so sources do not
/// fire in lockstep.
fn stagger(period: SimTime, k: usize, count: usize) -> SimTime {
    SimTime::from_ns(period.as_ns() * k as u64 / count as u64)
}

// ---------------------------------------------------------------------------
// Single runs
// ---------------------------------------------------------------------------

/// Global results of one run, exported as `summary.json`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RunSummary {
    pub scenario: String,
    pub master_seed: u64,
    pub duration_s: f64,
    pub strategy: String,
    pub events_processed: u64,
    pub sense_count: u64,
    pub final_channel: usize,
    pub handoff_count: u64,
    pub handoff_retries: u64,
    /// Delivered frames whose per-hop media access delay exceeded their
    /// end-to-end delay; an accounting self-check that must stay zero.
    pub mad_exceeds_e2e: u64,
    /// metric label -> AC label -> global stats over raw samples.
    pub metrics: BTreeMap<String, BTreeMap<String, SeriesStats>>,
    /// AC label -> MAC-level frame accounting (hop granularity).
    pub frames: BTreeMap<String, FrameCounts>,
    /// AC label -> frames delivered end to end (application granularity).
    pub delivered_frames_e2e: BTreeMap<String, u64>,
    pub handoffs: Vec<HandoffEvent>,
    /// Echo of the exact configuration that produced these results.
    pub config: ScenarioConfig,
}

/// A finished run: the summary, the bucketed series, and the raw output.
pub struct ResultBundle {
    pub summary: RunSummary,
    pub series: BTreeMap<SeriesKey, BucketSeries>,
    pub output: RunOutput,
}

/// Validates and runs one scenario.
pub fn run(cfg: &ScenarioConfig) -> Result<ResultBundle, String> {
    cfg.validate()?;
    Ok(bundle(cfg, sim::run(cfg)))
}

fn bundle(cfg: &ScenarioConfig, output: RunOutput) -> ResultBundle {
    let series = output.metrics.build_series(cfg.duration, cfg.n_buckets);
    let mut metric_stats: BTreeMap<String, BTreeMap<String, SeriesStats>> = BTreeMap::new();
    for (&(metric, ac), s) in &series {
        metric_stats
            .entry(metric.label().to_owned())
            .or_default()
            .insert(ac.label().to_owned(), SeriesStats::of(s));
    }
    let frames = AccessCategory::ALL
        .into_iter()
        .map(|ac| (ac.label().to_owned(), output.counts[ac.index()]))
        .collect();
    let delivered_frames_e2e = output
        .metrics
        .delivered_frames
        .iter()
        .map(|(ac, &n)| (ac.label().to_owned(), n))
        .collect();
    let summary = RunSummary {
        scenario: cfg.name.clone(),
        master_seed: cfg.master_seed,
        duration_s: cfg.duration.as_secs_f64(),
        strategy: cfg.strategy.describe(),
        events_processed: output.events_processed,
        sense_count: output.sense_count,
        final_channel: output.final_channel.0,
        handoff_count: output.handoffs.len() as u64,
        handoff_retries: output.handoff_retries,
        mad_exceeds_e2e: output.metrics.mad_exceeds_e2e,
        metrics: metric_stats,
        frames,
        delivered_frames_e2e,
        handoffs: output.handoffs.clone(),
        config: cfg.clone(),
    };
    ResultBundle {
        summary,
        series,
        output,
    }
}

impl RunSummary {
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("summary serializes");
        s.push('\n');
        s
    }

    /// Global stats of one series, if it produced samples.
    pub fn stat(&self, metric: crate::metrics::Metric, ac: AccessCategory) -> Option<SeriesStats> {
        self.metrics
            .get(metric.label())
            .and_then(|m| m.get(ac.label()))
            .copied()
    }
}

/// Writes `e2e_delay.csv`, `media_access_delay.csv`, `throughput.csv`, and
/// `summary.json` into `out_dir`.
pub fn export(bundle: &ResultBundle, out_dir: &Path) -> io::Result<()> {
    metrics::export(&bundle.series, &bundle.summary.to_json(), out_dir)
}

// ---------------------------------------------------------------------------
// Sweeps
// ---------------------------------------------------------------------------

/// One sweep case: the directory-safe label and its finished run.
pub struct SweepCase {
    pub label: String,
    pub bundle: ResultBundle,
}

/// Label of a fixed-duration case: `fixed-50ms`, `fixed-2.5ms`.
pub fn fixed_label(ms: f64) -> String {
    if ms.fract() == 0.0 {
        format!("fixed-{}ms", ms as u64)
    } else {
        format!("fixed-{}ms", ms)
    }
}

/// Runs the base scenario once per fixed sensing duration (plus the
/// adaptive strategy when asked), in parallel. Each case reseeds from the
/// base master seed and its own label, so results do not depend on sweep
/// order or on which other cases run.
pub fn sweep(
    base: &ScenarioConfig,
    durations_ms: &[f64],
    with_adaptive: bool,
) -> Result<Vec<SweepCase>, String> {
    let mut cases: Vec<(String, ScenarioConfig)> = Vec::new();
    for &ms in durations_ms {
        if !(ms.is_finite() && ms >= 0.0) {
            return Err(format!("invalid sweep duration {} ms", ms));
        }
        let label = fixed_label(ms);
        let mut cfg = base.clone();
        cfg.strategy = SensingStrategy::fixed_ms(ms);
        cfg.master_seed = derive_seed(base.master_seed, &format!("sweep.{}", label));
        cases.push((label, cfg));
    }
    if with_adaptive {
        let label = "adaptive".to_owned();
        let mut cfg = base.clone();
        cfg.strategy = SensingStrategy::adaptive_default();
        cfg.master_seed = derive_seed(base.master_seed, &format!("sweep.{}", label));
        cases.push((label, cfg));
    }
    for (_, cfg) in &cases {
        cfg.validate()?;
    }
    Ok(cases
        .into_par_iter()
        .map(|(label, cfg)| SweepCase {
            bundle: bundle(&cfg, sim::run(&cfg)),
            label,
        })
        .collect())
}

/// Cross-case comparison table: one row per (case, AC).
pub fn comparison_csv(cases: &[SweepCase]) -> String {
    use std::fmt::Write as _;
    let mut out = String::from(
        "strategy,s_d_ms,ac,e2e_delay_mean_s,e2e_delay_max_s,mad_mean_s,mad_max_s,\
         throughput_mean_bps,delivered,dropped\n",
    );
    for case in cases {
        let cfg = &case.bundle.summary.config;
        let kind = match cfg.strategy {
            SensingStrategy::Fixed { .. } => "fixed",
            SensingStrategy::AdaptiveByAc { .. } => "adaptive",
        };
        for ac in AccessCategory::ALL {
            let s_d_ms = cfg
                .strategy
                .spec_for(ac)
                .map_or(0.0, |spec| spec.duration.as_ns() as f64 / 1e6);
            let e2e = case
                .bundle
                .summary
                .stat(crate::metrics::Metric::E2eDelay, ac)
                .unwrap_or_default();
            let mad = case
                .bundle
                .summary
                .stat(crate::metrics::Metric::MediaAccessDelay, ac)
                .unwrap_or_default();
            let thr = case
                .bundle
                .summary
                .stat(crate::metrics::Metric::Throughput, ac)
                .unwrap_or_default();
            let counts = case.bundle.output.counts[ac.index()];
            let _ = writeln!(
                out,
                "{},{},{},{:.9},{:.9},{:.9},{:.9},{:.3},{},{}",
                kind,
                s_d_ms,
                ac.label(),
                e2e.mean,
                e2e.max,
                mad.mean,
                mad.max,
                thr.mean,
                counts.delivered,
                counts.dropped(),
            );
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_preset_builds_and_validates() {
        for name in PRESET_NAMES {
            let cfg = preset(name).unwrap();
            assert_eq!(cfg.name, name);
            cfg.validate().unwrap();
            assert!(!preset_description(name).is_empty());
        }
    }

    #[test]
    fn unknown_preset_lists_available_names() {
        let err = preset("no-such").unwrap_err();
        for name in PRESET_NAMES {
            assert!(err.contains(name));
        }
    }

    #[test]
    fn preset_survives_json_round_trip() {
        for name in PRESET_NAMES {
            let cfg = preset(name).unwrap();
            let json = serde_json::to_string_pretty(&cfg).unwrap();
            let back: ScenarioConfig = serde_json::from_str(&json).unwrap();
            assert_eq!(cfg, back);
        }
    }

    #[test]
    fn partial_config_fills_defaults() {
        let cfg: ScenarioConfig =
            serde_json::from_str(r#"{ "name": "tiny", "nodes": 3 }"#).unwrap();
        assert_eq!(cfg.nodes, 3);
        assert_eq!(cfg.n_buckets, 100);
        assert_eq!(cfg.strategy, SensingStrategy::adaptive_default());
        cfg.validate().unwrap();
    }

    #[test]
    fn unknown_config_key_is_rejected() {
        let err = serde_json::from_str::<ScenarioConfig>(r#"{ "nodez": 3 }"#);
        assert!(err.is_err());
    }

    #[test]
    fn validation_rejects_structural_errors() {
        let mut cfg = preset("voice-adhoc-4").unwrap();
        cfg.flows[0].dst = 9;
        assert!(cfg.validate().unwrap_err().contains("out of range"));

        let mut cfg = preset("voice-adhoc-4").unwrap();
        cfg.phy.phy_cw_min = 16;
        assert!(cfg.validate().unwrap_err().contains("divisible"));

        let mut cfg = preset("email-infra").unwrap();
        cfg.server = Some(7);
        assert!(cfg.validate().unwrap_err().contains("server"));

        let mut cfg = preset("video-infra").unwrap();
        cfg.server = None;
        assert!(cfg.validate().unwrap_err().contains("server"));

        let mut cfg = preset("handoff-demo").unwrap();
        cfg.scan_duration = SimTime::from_ms(2);
        assert!(cfg.validate().unwrap_err().contains("scan_duration"));
    }

    #[test]
    fn voice_preset_has_twelve_staggered_flows() {
        let cfg = preset("voice-adhoc-4").unwrap();
        assert_eq!(cfg.flows.len(), 12);
        let starts: Vec<u64> = cfg.flows.iter().map(|f| f.start.as_ns()).collect();
        let unique: std::collections::BTreeSet<u64> = starts.iter().copied().collect();
        assert_eq!(unique.len(), 12, "starts spread over one period");
        assert!(starts.iter().all(|&s| s < cfg.traffic.voice_period.as_ns()));
    }

    #[test]
    fn sweep_cases_reseed_independently_of_order() {
        let label_a = "fixed-5ms";
        let label_b = "fixed-50ms";
        let base = 77;
        assert_ne!(
            derive_seed(base, &format!("sweep.{}", label_a)),
            derive_seed(base, &format!("sweep.{}", label_b))
        );
    }

    #[test]
    fn fixed_labels_render_integers_plainly() {
        assert_eq!(fixed_label(0.0), "fixed-0ms");
        assert_eq!(fixed_label(50.0), "fixed-50ms");
        assert_eq!(fixed_label(2.5), "fixed-2.5ms");
    }
}
