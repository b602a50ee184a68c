use std::ops::Sub;
use std::sync::atomic::{AtomicU64, Ordering};

use super::group::OpKind;

/// Group-wide instrumentation counters.
///
/// Collective operations count once per call across the group; file
/// operations count once per positioned read or write issued by any
/// participant.
#[derive(Debug, Default)]
pub struct EngineStats {
    barriers: AtomicU64,
    broadcasts: AtomicU64,
    all_matches: AtomicU64,
    all_gathers: AtomicU64,
    all_to_alls: AtomicU64,
    header_reads: AtomicU64,
    header_writes: AtomicU64,
    read_ops: AtomicU64,
    write_ops: AtomicU64,
    bytes_read: AtomicU64,
    bytes_written: AtomicU64,
}

/// A point-in-time copy of [`EngineStats`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct StatsSnapshot {
    pub barriers: u64,
    pub broadcasts: u64,
    pub all_matches: u64,
    pub all_gathers: u64,
    pub all_to_alls: u64,
    pub header_reads: u64,
    pub header_writes: u64,
    pub read_ops: u64,
    pub write_ops: u64,
    pub bytes_read: u64,
    pub bytes_written: u64,
}

impl StatsSnapshot {
    pub fn collectives(&self) -> u64 {
        self.barriers + self.broadcasts + self.all_matches + self.all_gathers + self.all_to_alls
    }

    pub fn file_ops(&self) -> u64 {
        self.header_reads + self.header_writes + self.read_ops + self.write_ops
    }
}

impl Sub for StatsSnapshot {
    type Output = StatsSnapshot;

    fn sub(self, rhs: StatsSnapshot) -> StatsSnapshot {
        StatsSnapshot {
            barriers: self.barriers - rhs.barriers,
            broadcasts: self.broadcasts - rhs.broadcasts,
            all_matches: self.all_matches - rhs.all_matches,
            all_gathers: self.all_gathers - rhs.all_gathers,
            all_to_alls: self.all_to_alls - rhs.all_to_alls,
            header_reads: self.header_reads - rhs.header_reads,
            header_writes: self.header_writes - rhs.header_writes,
            read_ops: self.read_ops - rhs.read_ops,
            write_ops: self.write_ops - rhs.write_ops,
            bytes_read: self.bytes_read - rhs.bytes_read,
            bytes_written: self.bytes_written - rhs.bytes_written,
        }
    }
}

fn bump(counter: &AtomicU64, by: u64) {
    counter.fetch_add(by, Ordering::SeqCst);
}

impl EngineStats {
    pub fn snapshot(&self) -> StatsSnapshot {
        let get = |c: &AtomicU64| c.load(Ordering::SeqCst);
        StatsSnapshot {
            barriers: get(&self.barriers),
            broadcasts: get(&self.broadcasts),
            all_matches: get(&self.all_matches),
            all_gathers: get(&self.all_gathers),
            all_to_alls: get(&self.all_to_alls),
            header_reads: get(&self.header_reads),
            header_writes: get(&self.header_writes),
            read_ops: get(&self.read_ops),
            write_ops: get(&self.write_ops),
            bytes_read: get(&self.bytes_read),
            bytes_written: get(&self.bytes_written),
        }
    }

    pub(crate) fn count_collective(&self, kind: OpKind) {
        let counter = match kind {
            OpKind::Barrier => &self.barriers,
            OpKind::Broadcast => &self.broadcasts,
            OpKind::AllMatch => &self.all_matches,
            OpKind::AllGather => &self.all_gathers,
            OpKind::AllToAll => &self.all_to_alls,
        };
        bump(counter, 1);
    }

    pub(crate) fn count_read(&self, bytes: u64) {
        bump(&self.read_ops, 1);
        bump(&self.bytes_read, bytes);
    }

    pub(crate) fn count_write(&self, bytes: u64) {
        bump(&self.write_ops, 1);
        bump(&self.bytes_written, bytes);
    }

    pub(crate) fn count_header_read(&self) {
        bump(&self.header_reads, 1);
    }

    pub(crate) fn count_header_write(&self) {
        bump(&self.header_writes, 1);
    }
}
