use std::sync::Mutex;
use std::time::{Duration, Instant};

/// Spaces requests at least `1 / rate` seconds apart, with a burst of one.
///
/// Over any window of `w` seconds at most `ceil(rate * w) + 1` permits are
/// handed out.
#[derive(Debug)]
pub struct RateLimiter {
    interval: Duration,
    next: Mutex<Option<Instant>>,
}

impl RateLimiter {
    pub fn new(rate_per_sec: f64) -> Self {
        assert!(rate_per_sec > 0.0, "rate must be positive");
        RateLimiter {
            interval: Duration::from_secs_f64(1.0 / rate_per_sec),
            next: Mutex::new(None),
        }
    }

    /// Blocks until the caller may issue a request.
    pub fn acquire(&self) {
        let wait = {
            let mut next = self.next.lock().expect("rate limiter lock");
            let now = Instant::now();
            let slot = match *next {
                Some(t) if t > now => t,
                _ => now,
            };
            *next = Some(slot + self.interval);
            slot - now
        };
        if !wait.is_zero() {
            std::thread::sleep(wait);
        }
    }
}
