//! Metric collection and export: per-frame delay samples, windowed
//! throughput, the 100-bucket sample-mean aggregation, and the CSV/JSON
//! result files.
//!
//! Delay buckets average only the samples that exist; an empty bucket
//! exports an empty mean field, never a fabricated zero. Throughput is the
//! opposite: a window with no deliveries is a real zero rate.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::io;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::engine::SimTime;
use crate::mac::{AccessCategory, Frame, NodeId};

/// What a sample measures.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Metric {
    E2eDelay,
    MediaAccessDelay,
    Throughput,
}

impl Metric {
    pub const ALL: [Metric; 3] = [Metric::E2eDelay, Metric::MediaAccessDelay, Metric::Throughput];

    pub fn label(self) -> &'static str {
        match self {
            Metric::E2eDelay => "e2e_delay",
            Metric::MediaAccessDelay => "media_access_delay",
            Metric::Throughput => "throughput",
        }
    }

    /// File stem of the exported CSV series.
    pub fn file_name(self) -> String {
        format!("{}.csv", self.label())
    }
}

/// One observation: seconds for delays, bits/second for throughput.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Sample {
    pub t: SimTime,
    pub value: f64,
    pub metric: Metric,
    pub node: NodeId,
    pub ac: AccessCategory,
}

/// Compensated accumulator so bucket and global sums agree to the last bit
/// regardless of sample count.
#[derive(Clone, Copy, Debug, Default)]
struct KahanSum {
    sum: f64,
    carry: f64,
}

impl KahanSum {
    fn add(&mut self, x: f64) {
        let y = x - self.carry;
        let t = self.sum + y;
        self.carry = (t - self.sum) - y;
        self.sum = t;
    }

    fn value(&self) -> f64 {
        self.sum
    }
}

/// Sample-mean aggregation of one metric series into `n` equal buckets over
/// the run, plus global statistics over the raw samples.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct BucketSeries {
    pub n_buckets: usize,
    pub duration: SimTime,
    /// Per bucket: (sample count, mean); None for empty delay buckets.
    pub buckets: Vec<Option<(u64, f64)>>,
    pub global_count: u64,
    pub global_mean: f64,
    pub global_max: f64,
}

impl BucketSeries {
    /// Start of bucket `b` in nanoseconds: floor(b * duration / n).
    pub fn bucket_start(&self, b: usize) -> SimTime {
        SimTime::from_ns((b as u128 * self.duration.as_ns() as u128 / self.n_buckets as u128) as u64)
    }

    /// Absolute recombination error: weighted bucket means against the raw
    /// sample sum. The exported identity check.
    pub fn recombination_error(&self) -> f64 {
        let mut weighted = KahanSum::default();
        let mut count = 0u64;
        for b in self.buckets.iter().flatten() {
            weighted.add(b.0 as f64 * b.1);
            count += b.0;
        }
        assert_eq!(count, self.global_count);
        (weighted.value() - self.global_mean * self.global_count as f64).abs()
    }

    pub fn relative_recombination_error(&self) -> f64 {
        let total = (self.global_mean * self.global_count as f64).abs();
        if total == 0.0 {
            self.recombination_error()
        } else {
            self.recombination_error() / total
        }
    }
}

/// Buckets `samples` over [0, duration). Sample times at the duration
/// boundary fold into the last bucket. `real_zero_buckets` renders empty
/// buckets as (0, 0.0) instead of None; throughput series use it.
pub fn bucketize(
    samples: &[(SimTime, f64)],
    duration: SimTime,
    n: usize,
    real_zero_buckets: bool,
) -> BucketSeries {
    assert!(n >= 1, "at least one bucket");
    let mut sums: Vec<KahanSum> = vec![KahanSum::default(); n];
    let mut counts = vec![0u64; n];
    let mut global = KahanSum::default();
    let mut global_max = f64::NEG_INFINITY;
    for &(t, v) in samples {
        debug_assert!(t <= duration, "sample outside the run");
        let idx = if duration.is_zero() {
            0
        } else {
            ((t.as_ns() as u128 * n as u128 / duration.as_ns() as u128) as usize).min(n - 1)
        };
        sums[idx].add(v);
        counts[idx] += 1;
        global.add(v);
        global_max = global_max.max(v);
    }
    let buckets = counts
        .iter()
        .zip(&sums)
        .map(|(&c, s)| {
            if c > 0 {
                Some((c, s.value() / c as f64))
            } else if real_zero_buckets {
                Some((0, 0.0))
            } else {
                None
            }
        })
        .collect();
    let global_count: u64 = counts.iter().sum();
    BucketSeries {
        n_buckets: n,
        duration,
        buckets,
        global_count,
        global_mean: if global_count > 0 {
            global.value() / global_count as f64
        } else {
            0.0
        },
        global_max: if global_count > 0 { global_max } else { 0.0 },
    }
}

/// Per-(metric, AC) series keyed for export.
pub type SeriesKey = (Metric, AccessCategory);

/// Collects raw samples during a run and aggregates them at the end.
#[derive(Debug, Default)]
pub struct MetricsCollector {
    delay_samples: BTreeMap<SeriesKey, Vec<(SimTime, f64)>>,
    /// Delivered payload bits per AC, timestamped at delivery.
    deliveries: BTreeMap<AccessCategory, Vec<(SimTime, u64)>>,
    pub delivered_frames: BTreeMap<AccessCategory, u64>,
    pub delivered_bits: BTreeMap<AccessCategory, u64>,
    /// Delivered frames whose largest hop MAD exceeded their e2e delay;
    /// stays zero unless the delay accounting is broken.
    pub mad_exceeds_e2e: u64,
}

impl MetricsCollector {
    pub fn new() -> Self {
        Self::default()
    }

    /// End-to-end delay at final delivery: creation to delivery.
    pub fn record_e2e_delay(&mut self, f: &Frame) {
        let delivered = f.delivered_at.expect("delivered frame");
        let delay = delivered - f.created_at;
        debug_assert!(delivered >= f.created_at);
        self.delay_samples
            .entry((Metric::E2eDelay, f.ac))
            .or_default()
            .push((delivered, delay.as_secs_f64()));
        if f.max_hop_mad > delay {
            self.mad_exceeds_e2e += 1;
        }
    }

    /// Media access delay, anchored at the first physical-layer
    /// transmission of this hop; one sample per MAC frame even if retried.
    pub fn record_media_access_delay(&mut self, f: &Frame) {
        let first_tx = f.first_phy_tx_at.expect("frame reached the PHY");
        let delay = first_tx - f.enqueued_at;
        self.delay_samples
            .entry((Metric::MediaAccessDelay, f.ac))
            .or_default()
            .push((first_tx, delay.as_secs_f64()));
    }

    /// Payload bits handed to the higher layer at the final destination.
    pub fn record_delivery(&mut self, ac: AccessCategory, payload_bits: u64, now: SimTime) {
        self.deliveries.entry(ac).or_default().push((now, payload_bits));
        *self.delivered_frames.entry(ac).or_default() += 1;
        *self.delivered_bits.entry(ac).or_default() += payload_bits;
    }

    pub fn delay_sample_count(&self, metric: Metric, ac: AccessCategory) -> u64 {
        self.delay_samples
            .get(&(metric, ac))
            .map_or(0, |v| v.len() as u64)
    }

    /// Raw timestamped delay samples for one series, in recording order.
    pub fn delay_samples(&self, metric: Metric, ac: AccessCategory) -> &[(SimTime, f64)] {
        self.delay_samples
            .get(&(metric, ac))
            .map_or(&[][..], |v| v.as_slice())
    }

    /// Throughput series for one AC: delivered bits per window converted to
    /// bits/second, one sample per window tiling [0, duration), then
    /// bucketized. Every window is a real observation, including zeroes.
    pub fn throughput_series(
        &self,
        ac: AccessCategory,
        window: SimTime,
        duration: SimTime,
        n_buckets: usize,
    ) -> BucketSeries {
        assert!(!window.is_zero(), "window must be positive");
        let n_windows = (duration.as_ns() as u128).div_ceil(window.as_ns() as u128) as usize;
        let mut bits = vec![0u64; n_windows.max(1)];
        if let Some(events) = self.deliveries.get(&ac) {
            for &(t, b) in events {
                let idx = ((t.as_ns() as u128 / window.as_ns() as u128) as usize)
                    .min(bits.len() - 1);
                bits[idx] += b;
            }
        }
        let samples: Vec<(SimTime, f64)> = bits
            .iter()
            .enumerate()
            .map(|(i, &b)| {
                let start = window * i as u64;
                let end = (start + window).min(duration).max(start + SimTime::from_ns(1));
                let secs = (end - start).as_secs_f64();
                (start, b as f64 / secs)
            })
            .collect();
        bucketize(&samples, duration, n_buckets, true)
    }

    /// All exported series: delay series for ACs that produced samples,
    /// throughput for every AC. Window defaults to the bucket width.
    pub fn build_series(
        &self,
        duration: SimTime,
        n_buckets: usize,
    ) -> BTreeMap<SeriesKey, BucketSeries> {
        let mut out = BTreeMap::new();
        for (&key, samples) in &self.delay_samples {
            out.insert(key, bucketize(samples, duration, n_buckets, false));
        }
        if !duration.is_zero() {
            let window = SimTime::from_ns(
                (duration.as_ns() as u128 / n_buckets as u128).max(1) as u64,
            );
            for ac in AccessCategory::ALL {
                out.insert(
                    (Metric::Throughput, ac),
                    self.throughput_series(ac, window, duration, n_buckets),
                );
            }
        }
        out
    }
}

/// Seconds with nine fractional digits, exact for nanosecond times.
pub fn format_secs(t: SimTime) -> String {
    format!("{}.{:09}", t.as_ns() / 1_000_000_000, t.as_ns() % 1_000_000_000)
}

/// One exported CSV series: header plus one row per (AC, bucket).
pub fn series_to_csv(
    metric: Metric,
    series: &[(AccessCategory, &BucketSeries)],
) -> String {
    let mut out = String::from("bucket_start_s,metric,node,ac,count,mean\n");
    for (ac, s) in series {
        for b in 0..s.n_buckets {
            let start = format_secs(s.bucket_start(b));
            match s.buckets[b] {
                Some((count, mean)) => {
                    let _ = writeln!(
                        out,
                        "{},{},all,{},{},{:.9}",
                        start,
                        metric.label(),
                        ac.label(),
                        count,
                        mean
                    );
                }
                None => {
                    let _ = writeln!(out, "{},{},all,{},0,", start, metric.label(), ac.label());
                }
            }
        }
    }
    out
}

/// Global statistics of one series in the JSON summary.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SeriesStats {
    pub count: u64,
    pub mean: f64,
    pub max: f64,
}

impl SeriesStats {
    pub fn of(s: &BucketSeries) -> Self {
        SeriesStats {
            count: s.global_count,
            mean: s.global_mean,
            max: s.global_max,
        }
    }
}

/// Per-AC frame accounting for the JSON summary.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FrameCounts {
    pub enqueued: u64,
    pub delivered: u64,
    pub dropped_overflow: u64,
    pub dropped_retry: u64,
    pub rejected_oversize: u64,
}

impl FrameCounts {
    pub fn dropped(&self) -> u64 {
        self.dropped_overflow + self.dropped_retry
    }

    /// Frames still queued or in flight at run end. `enqueued` counts every
    /// frame offered to a queue, including refused ones.
    pub fn outstanding(&self) -> u64 {
        self.enqueued - self.delivered - self.dropped() - self.rejected_oversize
    }
}

/// One completed channel switch.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct HandoffEvent {
    pub at: SimTime,
    /// When the triggering BusyPU verdict started the scan.
    pub initiated_at: SimTime,
    pub from: crate::channel::ChannelId,
    pub to: crate::channel::ChannelId,
    /// Candidate channels visited before one was adopted.
    pub scans: u32,
    /// Ground truth on the adopted channel at the switch instant.
    pub pu_active_on_target: bool,
}

/// Writes the per-metric CSV series and the JSON summary into `out_dir`.
/// `summary_json` is produced by the scenario layer so the config echo
/// stays next to its results.
pub fn export(
    series: &BTreeMap<SeriesKey, BucketSeries>,
    summary_json: &str,
    out_dir: &Path,
) -> io::Result<()> {
    fs::create_dir_all(out_dir)
        .map_err(|e| io::Error::new(e.kind(), format!("{}: {}", out_dir.display(), e)))?;
    for metric in Metric::ALL {
        let rows: Vec<(AccessCategory, &BucketSeries)> = series
            .iter()
            .filter(|((m, _), _)| *m == metric)
            .map(|((_, ac), s)| (*ac, s))
            .collect();
        if rows.is_empty() {
            continue;
        }
        let path = out_dir.join(metric.file_name());
        fs::write(&path, series_to_csv(metric, &rows))
            .map_err(|e| io::Error::new(e.kind(), format!("{}: {}", path.display(), e)))?;
    }
    let path = out_dir.join("summary.json");
    fs::write(&path, summary_json)
        .map_err(|e| io::Error::new(e.kind(), format!("{}: {}", path.display(), e)))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn secs(s: u64) -> SimTime {
        SimTime::from_secs(s)
    }

    #[test]
    fn bucket_mean_of_cohabiting_samples() {
        let samples = vec![(secs(1), 1.0), (secs(1), 3.0)];
        let s = bucketize(&samples, secs(100), 100, false);
        assert_eq!(s.buckets[1], Some((2, 2.0)));
        assert_eq!(s.global_count, 2);
        assert_eq!(s.global_mean, 2.0);
        assert_eq!(s.global_max, 3.0);
    }

    #[test]
    fn empty_buckets_are_null_for_delays() {
        let samples = vec![(secs(5), 1.0)];
        let s = bucketize(&samples, secs(100), 100, false);
        assert_eq!(s.buckets[0], None);
        assert_eq!(s.buckets[5], Some((1, 1.0)));
        assert_eq!(s.buckets.iter().flatten().count(), 1);
    }

    #[test]
    fn sample_at_duration_boundary_lands_in_last_bucket() {
        let samples = vec![(secs(100), 1.0), (SimTime::ZERO, 2.0)];
        let s = bucketize(&samples, secs(100), 100, false);
        assert_eq!(s.buckets[99], Some((1, 1.0)));
        assert_eq!(s.buckets[0], Some((1, 2.0)));
    }

    #[test]
    fn recombination_matches_global_mean() {
        // Irregular values spread over every bucket.
        let mut samples = Vec::new();
        let mut x = 0.123456789f64;
        for i in 0..15_000u64 {
            let t = SimTime::from_ns(i * 6_666_667 % 100_000_000_000);
            x = (x * 1.000113 + 0.001) % 17.0;
            samples.push((t, x));
        }
        let s = bucketize(&samples, secs(100), 100, false);
        assert!(
            s.relative_recombination_error() < 1e-9,
            "relative error {}",
            s.relative_recombination_error()
        );
    }

    #[test]
    fn throughput_windows_are_real_zeroes() {
        let mut c = MetricsCollector::new();
        c.record_delivery(AccessCategory::BestEffort, 1_000_000, secs(1));
        let s = c.throughput_series(AccessCategory::BestEffort, secs(1), secs(10), 10);
        // 10^6 bits inside the second window's one-second span.
        assert_eq!(s.buckets[1], Some((1, 1_000_000.0)));
        assert_eq!(s.buckets[0], Some((1, 0.0)), "no deliveries is a real zero");
        assert_eq!(s.global_count, 10);
        assert_eq!(s.global_mean, 100_000.0, "mean rate equals total/duration");
    }

    #[test]
    fn throughput_partitions_by_category() {
        let mut c = MetricsCollector::new();
        c.record_delivery(AccessCategory::Voice, 500, secs(1));
        c.record_delivery(AccessCategory::BestEffort, 700, secs(2));
        c.record_delivery(AccessCategory::Voice, 300, secs(3));
        let total: u64 = c.delivered_bits.values().sum();
        assert_eq!(total, 1_500);
        assert_eq!(c.delivered_bits[&AccessCategory::Voice], 800);
        assert_eq!(c.delivered_bits[&AccessCategory::BestEffort], 700);
    }

    #[test]
    fn delay_recording_from_frames() {
        use crate::mac::Frame;
        let mut c = MetricsCollector::new();
        let mut f = Frame {
            id: 1,
            src: 0,
            dst: 1,
            origin: 0,
            final_dst: 1,
            ac: AccessCategory::Voice,
            payload_bits: 1280,
            created_at: secs(1),
            enqueued_at: secs(1),
            first_phy_tx_at: Some(secs(1) + SimTime::from_ms(4)),
            delivered_at: Some(secs(1) + SimTime::from_ms(12)),
            retry_count: 0,
            max_hop_mad: SimTime::from_ms(4),
        };
        c.record_media_access_delay(&f);
        c.record_e2e_delay(&f);
        assert_eq!(c.delay_sample_count(Metric::MediaAccessDelay, f.ac), 1);
        assert_eq!(c.delay_sample_count(Metric::E2eDelay, f.ac), 1);
        assert_eq!(c.mad_exceeds_e2e, 0);

        // A hop MAD larger than the whole end-to-end delay is an accounting
        // violation and must be counted.
        f.max_hop_mad = SimTime::from_ms(20);
        c.record_e2e_delay(&f);
        assert_eq!(c.mad_exceeds_e2e, 1);
    }

    #[test]
    fn csv_format_and_null_means() {
        let samples = vec![(secs(0), 0.25)];
        let s = bucketize(&samples, secs(2), 2, false);
        let csv = series_to_csv(Metric::E2eDelay, &[(AccessCategory::Voice, &s)]);
        let mut lines = csv.lines();
        assert_eq!(lines.next(), Some("bucket_start_s,metric,node,ac,count,mean"));
        assert_eq!(
            lines.next(),
            Some("0.000000000,e2e_delay,all,AC_VO,1,0.250000000")
        );
        assert_eq!(lines.next(), Some("1.000000000,e2e_delay,all,AC_VO,0,"));
        assert_eq!(lines.next(), None);
    }

    #[test]
    fn format_secs_is_nanosecond_exact() {
        assert_eq!(format_secs(SimTime::from_ns(1)), "0.000000001");
        assert_eq!(format_secs(SimTime::from_ms(1_500)), "1.500000000");
        assert_eq!(format_secs(SimTime::from_secs(300)), "300.000000000");
    }

    #[test]
    fn frame_counts_identity() {
        let c = FrameCounts {
            enqueued: 100,
            delivered: 80,
            dropped_overflow: 12,
            dropped_retry: 5,
            rejected_oversize: 0,
        };
        assert_eq!(c.dropped(), 17);
        assert_eq!(c.outstanding(), 3);
        assert_eq!(c.delivered + c.dropped() + c.outstanding(), c.enqueued);
    }
}
