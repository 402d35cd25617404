use std::collections::HashMap;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use crate::error::{AcrlError, Result};
use crate::mdp::{Label, State, StateKey};

/// A ground-truth evaluation function.
pub trait Objective: Send + Sync {
    fn evaluate(&self, state: &State) -> Result<Label>;
}

/// Wraps an [`Objective`] with memoization, exact call counting and an
/// optional simulated latency.
///
/// The counter only moves when a new state enters the memo table, so it is
/// the number of distinct states ever evaluated. Memo updates happen under a
/// single lock; concurrent callers racing on the same uncached state may
/// both run the inner function but only one of them is counted.
pub struct InstrumentedOracle {
    inner: Arc<dyn Objective>,
    memo: Mutex<HashMap<StateKey, Label>>,
    calls: AtomicU64,
    latency: Duration,
}

impl InstrumentedOracle {
    pub fn new(inner: Arc<dyn Objective>) -> Self {
        Self::with_latency(inner, Duration::ZERO)
    }

    pub fn with_latency(inner: Arc<dyn Objective>, latency: Duration) -> Self {
        Self {
            inner,
            memo: Mutex::new(HashMap::new()),
            calls: AtomicU64::new(0),
            latency,
        }
    }

    /// Number of distinct states evaluated so far.
    pub fn calls(&self) -> u64 {
        self.calls.load(Ordering::SeqCst)
    }

    pub fn is_memoized(&self, state: &State) -> bool {
        self.memo.lock().unwrap().contains_key(&state.key())
    }

    pub fn evaluate(&self, state: &State) -> Result<Label> {
        let key = state.key();
        if let Some(hit) = self.memo.lock().unwrap().get(&key) {
            return Ok(hit.clone());
        }
        if !self.latency.is_zero() {
            std::thread::sleep(self.latency);
        }
        let value = self.inner.evaluate(state).map_err(|e| {
            log::warn!("oracle failed on {state}: {e}");
            AcrlError::Oracle {
                state: state.to_string(),
                message: e.to_string(),
            }
        })?;
        let mut memo = self.memo.lock().unwrap();
        let entry = memo.entry(key).or_insert_with(|| {
            self.calls.fetch_add(1, Ordering::SeqCst);
            value
        });
        Ok(entry.clone())
    }
}
