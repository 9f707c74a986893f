//! Deterministic discrete-event simulator of White-Fi (cognitive-radio
//! 802.11) networks. It models EDCA channel access with a spectrum-sensing
//! phase in front of every transmission attempt and quantifies how the
//! sensing duration degrades per-access-category quality of service:
//! end-to-end delay, media access delay, and throughput.
//!
//! The crate is organized as a stack:
//!
//! - [`engine`]: simulation clock, event queue, named random streams.
//! - [`channel`]: primary-user timelines and the shared medium.
//! - [`mac`]: EDCA parameters, queues, backoff, retry rules.
//! - [`sensing`]: sensing taxonomy, ROC model, post-sensing decisions.
//! - [`traffic`]: application flow models and fragmentation.
//! - [`metrics`]: sample collection, bucketing, CSV/JSON export.
//! - [`sim`]: the event-driven world tying everything together.
//! - [`scenario`]: run configuration, presets, sweeps.
//!
//! Every run is a pure function of its configuration (including the master
//! seed): same input, byte-identical output.

pub mod channel;
pub mod engine;
pub mod mac;
pub mod metrics;
pub mod scenario;
pub mod sensing;
pub mod sim;
pub mod traffic;
