//! Rollout and cost accounting shared by every evaluation.

use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, Copy, PartialEq, Eq)]
#[error("rollout budget exceeded: {used} of {cap} used, {requested} requested")]
pub struct BudgetExceeded {
    pub cap: u64,
    pub used: u64,
    pub requested: u64,
}

/// Caps lifetime rollouts at `B` and records observed cost. `charge` is a
/// compare-and-increment, so concurrent callers can never overshoot the cap.
#[derive(Debug)]
pub struct BudgetLedger {
    cap: u64,
    used: AtomicU64,
    cost_cap: Option<f64>,
    cost_sum: Mutex<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LedgerSnapshot {
    pub cap: u64,
    pub used: u64,
    pub cost_cap: Option<f64>,
    pub cost_sum: f64,
}

impl BudgetLedger {
    pub fn new(cap: u64) -> Self {
        Self {
            cap,
            used: AtomicU64::new(0),
            cost_cap: None,
            cost_sum: Mutex::new(0.0),
        }
    }

    /// Ledger with a per-rollout mean cost bound.
    pub fn with_cost_cap(cap: u64, cost_cap: Option<f64>) -> Self {
        Self {
            cost_cap,
            ..Self::new(cap)
        }
    }

    /// Effectively unbounded ledger, for oracles.
    pub fn unbounded() -> Self {
        Self::new(u64::MAX)
    }

    pub fn cap(&self) -> u64 {
        self.cap
    }

    pub fn used(&self) -> u64 {
        self.used.load(Ordering::SeqCst)
    }

    pub fn remaining(&self) -> u64 {
        self.cap.saturating_sub(self.used())
    }

    pub fn cost_cap(&self) -> Option<f64> {
        self.cost_cap
    }

    pub fn cost_sum(&self) -> f64 {
        *self.cost_sum.lock().expect("cost lock")
    }

    /// Atomically adds `n` rollouts iff the total stays within the cap;
    /// otherwise changes nothing.
    pub fn charge(&self, n: u64) -> Result<(), BudgetExceeded> {
        self.used
            .fetch_update(Ordering::SeqCst, Ordering::SeqCst, |used| {
                used.checked_add(n).filter(|total| *total <= self.cap)
            })
            .map(|_| ())
            .map_err(|used| BudgetExceeded {
                cap: self.cap,
                used,
                requested: n,
            })
    }

    pub fn record_cost(&self, cost: f64) {
        if cost.is_finite() && cost > 0.0 {
            *self.cost_sum.lock().expect("cost lock") += cost;
        }
    }

    pub fn snapshot(&self) -> LedgerSnapshot {
        LedgerSnapshot {
            cap: self.cap,
            used: self.used(),
            cost_cap: self.cost_cap,
            cost_sum: self.cost_sum(),
        }
    }
}
