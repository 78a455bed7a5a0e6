//! Event-based state-based potential games for self-tuning PID controllers.
//!
//! Each PID gain is a player in a cooperative game. Players keep a
//! performance map over the loop state, pick a new gain only when a
//! control event opens (the deviation leaves a threshold envelope), hold it
//! until the loop has settled again, and then learn from the utility of the
//! finished event.
//!
//! The crate is organised bottom-up:
//!
//! - [`game`]: action bounds, utilities, barrier, and numerical condition checks
//! - [`map`]: performance maps with global interpolation and the two learners
//! - [`event`]: trigger and reset logic plus per-event metric accumulation
//! - [`pid`]: discrete PID with output saturation and anti-windup
//! - [`plant`]: surrogate two-circuit thermal plant and load scenarios
//! - [`tuner`]: closed-loop episodes, training, bounds detection, baselines
//! - [`experiment`]: baseline statistics and the per-setpoint suite
//! - [`report`]: CSV traces, event logs, and map tables

pub mod error;
pub mod event;
pub mod experiment;
pub mod game;
pub mod map;
pub mod pid;
pub mod plant;
pub mod report;
pub mod seed;
pub mod tuner;

pub use error::{Error, Result};
pub use event::{EventMonitor, EventRecord, TriggerConfig};
pub use game::{ActionBounds, EventMetrics, Player, PlayerId, UtilityParams, UtilityVariant};
pub use map::{Exploration, PerformanceMap};
pub use pid::{PidGains, PidState};
pub use plant::{PlantParams, PlantState, Scenario, ScenarioKind, Segment};
pub use tuner::{GameConfig, Learner, RunReport};
