use std::collections::VecDeque;
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

/// Time source used by the limiter and retry backoff.
pub trait Clock: Send + Sync {
    /// Monotonic time since an arbitrary origin.
    fn now(&self) -> Duration;
    fn sleep(&self, d: Duration);
}

pub struct SystemClock {
    origin: Instant,
}

impl Default for SystemClock {
    fn default() -> Self {
        SystemClock { origin: Instant::now() }
    }
}

impl Clock for SystemClock {
    fn now(&self) -> Duration {
        self.origin.elapsed()
    }

    fn sleep(&self, d: Duration) {
        std::thread::sleep(d);
    }
}

/// Virtual clock: `sleep` advances time instantly. Used by offline tests.
#[derive(Default)]
pub struct ManualClock {
    now: Mutex<Duration>,
}

impl ManualClock {
    pub fn advance(&self, d: Duration) {
        *self.now.lock().unwrap() += d;
    }
}

impl Clock for ManualClock {
    fn now(&self) -> Duration {
        *self.now.lock().unwrap()
    }

    fn sleep(&self, d: Duration) {
        self.advance(d);
    }
}

/// Sliding-window limiter: at most `max_per_second` acquisitions in any
/// half-open one-second window.
pub struct RateLimiter {
    max_per_second: u32,
    window: Duration,
    history: Mutex<VecDeque<Duration>>,
    clock: Arc<dyn Clock>,
}

pub const DEFAULT_RATE: u32 = 5;

impl RateLimiter {
    pub fn new(max_per_second: u32, clock: Arc<dyn Clock>) -> Self {
        RateLimiter {
            max_per_second: max_per_second.max(1),
            window: Duration::from_secs(1),
            history: Mutex::new(VecDeque::new()),
            clock,
        }
    }

    pub fn max_per_second(&self) -> u32 {
        self.max_per_second
    }

    /// Blocks until a request may be issued and records it.
    pub fn acquire(&self) -> Duration {
        loop {
            let wait = {
                let mut hist = self.history.lock().unwrap();
                let now = self.clock.now();
                while hist.front().is_some_and(|&t| t + self.window <= now) {
                    hist.pop_front();
                }
                if hist.len() < self.max_per_second as usize {
                    hist.push_back(now);
                    return now;
                }
                hist[0] + self.window - now
            };
            self.clock.sleep(wait);
        }
    }
}

/// Bounded exponential backoff for throttled or failed requests.
#[derive(Clone, Copy, Debug)]
pub struct RetryPolicy {
    pub max_attempts: u32,
    pub base_backoff: Duration,
    pub max_backoff: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy {
            max_attempts: 5,
            base_backoff: Duration::from_millis(500),
            max_backoff: Duration::from_secs(8),
        }
    }
}

impl RetryPolicy {
    /// Delay after failed attempt number `attempt` (1-based).
    pub fn backoff(&self, attempt: u32) -> Duration {
        let factor = 1u32 << attempt.saturating_sub(1).min(16);
        (self.base_backoff * factor).min(self.max_backoff)
    }
}
