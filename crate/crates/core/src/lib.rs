//! Privacy-preserving contact tracing over a shared spatiotemporal grid.
//!
//! Users quantize their GPS traces into point intervals, redact sensitive
//! zones, and learn which of their intervals were also visited by diagnosed
//! carriers through a Diffie-Hellman private set intersection with a regional
//! server. The server only ever holds hashed carrier intervals.

pub mod aggregation;
pub mod api;
pub mod client;
pub mod crypto;
pub mod flatfile;
pub mod grid;
pub mod redaction;
pub mod server;
pub mod sim;

pub use client::{run_exposure_check, ClientConfig, RiskLevel, RiskReport};
pub use crypto::{GroupParams, HashedInterval, Mode};
pub use grid::{GpsPoint, GridConfig, PointInterval};
pub use server::CarrierServer;
