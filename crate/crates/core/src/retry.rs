//! Bounded retry with exponential backoff and jitter, shared by the network
//! clients.

use std::time::Duration;

use rand::Rng;
use serde::{Deserialize, Serialize};

const MAX_DELAY: Duration = Duration::from_secs(10);

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RetryPolicy {
    /// Retries after the initial attempt.
    pub max_retries: u32,
    /// Base delay; attempt `n` waits roughly `base * 2^n`.
    pub backoff_base_ms: u64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            max_retries: 3,
            backoff_base_ms: 250,
        }
    }
}

impl RetryPolicy {
    /// Backoff for the given zero-based attempt, capped at 10s, with ±25%
    /// jitter so simultaneous clients do not retry in lockstep.
    pub fn delay_for(&self, attempt: u32) -> Duration {
        let base = self.backoff_base_ms.saturating_mul(1u64 << attempt.min(16));
        let capped = Duration::from_millis(base).min(MAX_DELAY);
        let jitter = 0.75 + rand::rng().random::<f64>() * 0.5;
        capped.mul_f64(jitter)
    }

    /// Runs `op`, retrying on errors flagged retryable by `is_retryable`
    /// until the policy is exhausted. The last error is returned as-is.
    pub(crate) fn run<T, E>(
        &self,
        is_retryable: impl Fn(&E) -> bool,
        mut op: impl FnMut() -> Result<T, E>,
    ) -> Result<T, E> {
        let mut attempt = 0u32;
        loop {
            match op() {
                Ok(value) => return Ok(value),
                Err(err) if is_retryable(&err) && attempt < self.max_retries => {
                    std::thread::sleep(self.delay_for(attempt));
                    attempt += 1;
                }
                Err(err) => return Err(err),
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn retries_until_policy_exhausted() {
        let policy = RetryPolicy {
            max_retries: 2,
            backoff_base_ms: 1,
        };
        let mut calls = 0;
        let result: Result<(), &str> = policy.run(
            |_| true,
            || {
                calls += 1;
                Err("transient")
            },
        );
        assert!(result.is_err());
        assert_eq!(calls, 3);
    }

    #[test]
    fn fatal_errors_are_not_retried() {
        let policy = RetryPolicy {
            max_retries: 5,
            backoff_base_ms: 1,
        };
        let mut calls = 0;
        let result: Result<(), &str> = policy.run(
            |_| false,
            || {
                calls += 1;
                Err("fatal")
            },
        );
        assert!(result.is_err());
        assert_eq!(calls, 1);
    }

    #[test]
    fn success_stops_retrying() {
        let policy = RetryPolicy {
            max_retries: 5,
            backoff_base_ms: 1,
        };
        let mut calls = 0;
        let result: Result<u32, &str> = policy.run(
            |_| true,
            || {
                calls += 1;
                if calls < 3 {
                    Err("transient")
                } else {
                    Ok(calls)
                }
            },
        );
        assert_eq!(result.unwrap(), 3);
    }

    #[test]
    fn delay_is_capped() {
        let policy = RetryPolicy {
            max_retries: 0,
            backoff_base_ms: 60_000,
        };
        assert!(policy.delay_for(8) <= Duration::from_millis(12_500));
    }
}
