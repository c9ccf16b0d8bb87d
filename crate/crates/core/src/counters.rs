use std::sync::atomic::{AtomicU64, Ordering};

/// Instrumentation for the cost claims: transport solves, adjoint transport
/// solves and matrix-free transport applications.
#[derive(Debug, Default)]
pub struct Counters {
    rte_solves: AtomicU64,
    adjoint_solves: AtomicU64,
    apply_m: AtomicU64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct CounterSnapshot {
    pub rte_solves: u64,
    pub adjoint_solves: u64,
    pub apply_m: u64,
}

impl CounterSnapshot {
    pub fn since(&self, earlier: &CounterSnapshot) -> CounterSnapshot {
        CounterSnapshot {
            rte_solves: self.rte_solves - earlier.rte_solves,
            adjoint_solves: self.adjoint_solves - earlier.adjoint_solves,
            apply_m: self.apply_m - earlier.apply_m,
        }
    }

    pub fn total_solves(&self) -> u64 {
        self.rte_solves + self.adjoint_solves
    }
}

impl Counters {
    pub fn record_solve(&self) {
        self.rte_solves.fetch_add(1, Ordering::Relaxed);
    }

    pub fn record_adjoint_solve(&self) {
        self.adjoint_solves.fetch_add(1, Ordering::Relaxed);
    }

    pub fn record_apply(&self) {
        self.apply_m.fetch_add(1, Ordering::Relaxed);
    }

    pub fn snapshot(&self) -> CounterSnapshot {
        CounterSnapshot {
            rte_solves: self.rte_solves.load(Ordering::Relaxed),
            adjoint_solves: self.adjoint_solves.load(Ordering::Relaxed),
            apply_m: self.apply_m.load(Ordering::Relaxed),
        }
    }
}
