//! Synthetic data generation, the simulated clock, and the scenario runner
//! that drives the whole fleet end to end at accelerated time.

pub mod events;
pub mod profile;
pub mod scenario;

pub use events::{advance_clock, EventKind, EventQueue, ScheduledEvent};
pub use profile::{
    generate_room_series, FeatureCouplings, RegimeShift, RoomProfile, SpikeShape,
};
pub use scenario::{
    run_scenario, RoomConfig, ScenarioConfig, ScenarioResult, SimError, RETRAIN_WINDOW_MS,
    SEED_COMPONENTS,
};
