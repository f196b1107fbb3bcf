//! Fleet analytics for edge IoT deployments.
//!
//! Simulated room sensors stream multivariate air-quality readings over a
//! topic-based message fabric to per-device edge agents. Each agent runs a
//! deployed regression model to forecast air quality 15 minutes ahead and
//! evaluates model drift once per simulated day. A fleet controller reacts to
//! drift by retraining, registering and redeploying models through a
//! versioned registry with an append-only audit trail, while a supervision
//! layer collects device telemetry, raises threshold alarms and renders
//! fleet-level reports.

pub mod agent;
pub mod cli;
pub mod models;
pub mod pipeline;
pub mod registry;
pub mod simulator;
pub mod supervision;
pub mod time;
pub mod transport;
