//! Per-iteration records shared by all reconstruction algorithms.

use std::sync::Arc;
use std::time::Instant;

use crate::counters::{CounterSnapshot, Counters};
use crate::experiment::relative_error;
use crate::field::ParameterPair;

#[derive(Debug, Clone, PartialEq)]
pub struct IterRecord {
    pub iter: usize,
    /// Illuminations used in this step.
    pub picked_i: Vec<usize>,
    /// Penalty term index for the multilinear algorithms.
    pub picked_l: Option<usize>,
    /// Evaluated at the iterate the step started from; the errors below
    /// are measured after the step.
    pub objective: f64,
    pub fidelity: f64,
    pub penalty: f64,
    pub rel_err_mu_a: f64,
    pub rel_err_mu_s: f64,
    /// Cumulative transport solves (forward and adjoint) since the start.
    pub rte_solves: u64,
    /// Cumulative matrix-free transport applications since the start.
    pub apply_m: u64,
    pub wall_s: f64,
    /// Loping flag: `Some(false)` when the update was skipped.
    pub omega: Option<bool>,
}

/// Iterate kept at a checkpoint.
#[derive(Debug, Clone, PartialEq)]
pub struct Snapshot {
    /// Number of completed iterations.
    pub iter: usize,
    pub mu: ParameterPair,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct IterateTrace {
    pub records: Vec<IterRecord>,
    pub snapshots: Vec<Snapshot>,
}

impl IterateTrace {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn last(&self) -> Option<&IterRecord> {
        self.records.last()
    }

    /// Number of skipped (ω = 0) steps.
    pub fn skips(&self) -> usize {
        self.records
            .iter()
            .filter(|r| r.omega == Some(false))
            .count()
    }
}

/// Collects records with timing and cost counters relative to its creation.
#[derive(Debug)]
pub struct Recorder {
    start: Instant,
    counters: Arc<Counters>,
    base: CounterSnapshot,
    truth: Option<ParameterPair>,
    mass: Vec<f64>,
    checkpoint_every: usize,
    pub trace: IterateTrace,
}

/// Values reported by an algorithm for one iteration.
#[derive(Debug, Clone, Default)]
pub struct StepReport {
    pub picked_i: Vec<usize>,
    pub picked_l: Option<usize>,
    pub fidelity: f64,
    pub penalty: f64,
    pub omega: Option<bool>,
}

impl Recorder {
    pub fn new(counters: Arc<Counters>, truth: Option<ParameterPair>, mass: Vec<f64>) -> Self {
        let base = counters.snapshot();
        Recorder {
            start: Instant::now(),
            counters,
            base,
            truth,
            mass,
            checkpoint_every: 0,
            trace: IterateTrace::default(),
        }
    }

    /// Keep the iterate after every `k`-th iteration; 0 disables.
    pub fn with_checkpoints(mut self, k: usize) -> Self {
        self.checkpoint_every = k;
        self
    }

    pub fn spent(&self) -> CounterSnapshot {
        self.counters.snapshot().since(&self.base)
    }

    pub fn errors(&self, mu: &ParameterPair) -> (f64, f64) {
        match &self.truth {
            Some(t) => (
                relative_error(&mu.mu_a, &t.mu_a, &self.mass),
                relative_error(&mu.mu_s, &t.mu_s, &self.mass),
            ),
            None => (f64::NAN, f64::NAN),
        }
    }

    /// Appends the record for iteration `iter` ending at `mu`.
    pub fn push(&mut self, iter: usize, mu: &ParameterPair, step: StepReport) {
        let (ea, es) = self.errors(mu);
        let spent = self.spent();
        self.trace.records.push(IterRecord {
            iter,
            picked_i: step.picked_i,
            picked_l: step.picked_l,
            objective: step.fidelity + step.penalty,
            fidelity: step.fidelity,
            penalty: step.penalty,
            rel_err_mu_a: ea,
            rel_err_mu_s: es,
            rte_solves: spent.total_solves(),
            apply_m: spent.apply_m,
            wall_s: self.start.elapsed().as_secs_f64(),
            omega: step.omega,
        });
        let k = self.checkpoint_every;
        if k > 0 && (iter + 1).is_multiple_of(k) {
            self.trace.snapshots.push(Snapshot {
                iter: iter + 1,
                mu: mu.clone(),
            });
        }
    }
}
