//! Emission plans: how many tuples each sender thread emits and when.

use std::time::Duration;

use thiserror::Error;

use crate::bucket::SEQ_LEN;

/// Relative slack allowed when checking that `rate · duration` is whole.
const INTEGRAL_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Error, PartialEq)]
pub enum PlanError {
    #[error("budget {budget_ns} ns is below the measured send overhead {overhead_ns:.1} ns")]
    BudgetBelowOverhead { budget_ns: u64, overhead_ns: f64 },
    #[error("rate {rate} tuples/s over {secs} s is not a whole number of tuples")]
    NotIntegral { rate: f64, secs: f64 },
    #[error("rate must be finite and non-negative, got {0}")]
    BadRate(f64),
    #[error("at least one sender thread is required")]
    NoThreads,
    #[error("payload template must hold at least {SEQ_LEN} bytes for the sequence number")]
    ShortPayload,
}

#[derive(Debug, Clone)]
pub struct EmissionPlan {
    pub rate: f64,
    pub duration: Duration,
    pub budget_ns: u64,
    pub threads: usize,
    pub payload: Vec<u8>,
}

/// The share of a plan run by one sender thread.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ThreadPlan {
    pub thread: usize,
    pub count: u64,
    /// Spacing of this thread's deadlines.
    pub period_ns: f64,
    pub budget_ns: u64,
}

impl ThreadPlan {
    /// Deadline of tuple `i`, relative to the run start.
    pub fn deadline_ns(&self, i: u64) -> u64 {
        ((i + 1) as f64 * self.period_ns).round() as u64
    }
}

impl EmissionPlan {
    pub fn new(
        rate: f64,
        duration: Duration,
        budget_ns: u64,
        threads: usize,
        payload: Vec<u8>,
        overhead_ns: f64,
    ) -> Result<Self, PlanError> {
        if !rate.is_finite() || rate < 0.0 {
            return Err(PlanError::BadRate(rate));
        }
        if threads == 0 {
            return Err(PlanError::NoThreads);
        }
        if payload.len() < SEQ_LEN {
            return Err(PlanError::ShortPayload);
        }
        if (budget_ns as f64) < overhead_ns {
            return Err(PlanError::BudgetBelowOverhead {
                budget_ns,
                overhead_ns,
            });
        }
        let exact = rate * duration.as_secs_f64();
        if (exact - exact.round()).abs() > INTEGRAL_TOLERANCE * exact.max(1.0) {
            return Err(PlanError::NotIntegral {
                rate,
                secs: duration.as_secs_f64(),
            });
        }
        Ok(Self {
            rate,
            duration,
            budget_ns,
            threads,
            payload,
        })
    }

    /// Largest rate not above `rate` for which `rate · duration` is whole.
    pub fn floor_rate(rate: f64, duration: Duration) -> f64 {
        let secs = duration.as_secs_f64();
        if secs == 0.0 {
            return 0.0;
        }
        (rate * secs).floor() / secs
    }

    pub fn total(&self) -> u64 {
        (self.rate * self.duration.as_secs_f64()).round() as u64
    }

    /// Splits the total as evenly as possible; the first `total % threads`
    /// threads send one extra tuple. Each thread spreads its tuples over the
    /// whole duration, so its last deadline is the end time.
    pub fn partition(&self) -> Vec<ThreadPlan> {
        let total = self.total();
        let n = self.threads as u64;
        let d_ns = self.duration.as_nanos() as f64;
        (0..n)
            .map(|k| {
                let count = total / n + u64::from(k < total % n);
                ThreadPlan {
                    thread: k as usize,
                    count,
                    period_ns: if count == 0 { 0.0 } else { d_ns / count as f64 },
                    budget_ns: self.budget_ns,
                }
            })
            .collect()
    }
}
