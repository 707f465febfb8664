use std::sync::atomic::{AtomicU64, Ordering};

/// Counters updated by the simulation thread and the session tasks.
#[derive(Debug, Default)]
pub struct ServerStats {
    pub sessions_accepted: AtomicU64,
    pub sessions_rejected: AtomicU64,
    pub commands_accepted: AtomicU64,
    pub rejected_no_authority: AtomicU64,
    pub rejected_not_armed: AtomicU64,
    pub rejected_invalid: AtomicU64,
    pub chunks_sent: AtomicU64,
    pub poses_sent: AtomicU64,
    pub probes_resolved: AtomicU64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct StatsSnapshot {
    pub sessions_accepted: u64,
    pub sessions_rejected: u64,
    pub commands_accepted: u64,
    pub rejected_no_authority: u64,
    pub rejected_not_armed: u64,
    pub rejected_invalid: u64,
    pub chunks_sent: u64,
    pub poses_sent: u64,
    pub probes_resolved: u64,
}

impl ServerStats {
    pub(crate) fn bump(counter: &AtomicU64) {
        counter.fetch_add(1, Ordering::Relaxed);
    }

    pub fn snapshot(&self) -> StatsSnapshot {
        let get = |c: &AtomicU64| c.load(Ordering::Relaxed);
        StatsSnapshot {
            sessions_accepted: get(&self.sessions_accepted),
            sessions_rejected: get(&self.sessions_rejected),
            commands_accepted: get(&self.commands_accepted),
            rejected_no_authority: get(&self.rejected_no_authority),
            rejected_not_armed: get(&self.rejected_not_armed),
            rejected_invalid: get(&self.rejected_invalid),
            chunks_sent: get(&self.chunks_sent),
            poses_sent: get(&self.poses_sent),
            probes_resolved: get(&self.probes_resolved),
        }
    }
}
