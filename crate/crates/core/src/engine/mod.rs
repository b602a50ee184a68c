//! The participant-group abstraction and the I/O engine running on it.

mod file;
mod group;
mod hints;
mod io;
mod plan;
mod stats;

pub use file::SharedFile;
pub use group::{spawn, spawn_with, Comm, GroupOptions};
pub use hints::{
    HintSet, DEFAULT_BUFFER_SIZE, DEFAULT_MAX_AGGREGATORS, HINT_AGGREGATORS, HINT_BUFFER_SIZE,
    HINT_CHECK_COLLECTIVE, HINT_HEADER_PAD, HINT_RECORD_BATCH,
};
pub use io::{collective_read, collective_write, independent_read, independent_write};
pub(crate) use io::agree;
pub use plan::{build_plan, plan_two_phase, Direction, Exchange, FileDomain, IoPlan};
pub use stats::{EngineStats, StatsSnapshot};
