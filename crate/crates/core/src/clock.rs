//! Time sources. Simulation runs on [`VirtualClock`]; only the remote
//! adapter reads the wall clock.

use std::time::Instant;

pub trait Clock {
    /// Seconds since the clock's origin.
    fn now_s(&self) -> f64;
}

#[derive(Debug, Clone)]
pub struct WallClock {
    origin: Instant,
}

impl WallClock {
    pub fn new() -> Self {
        Self { origin: Instant::now() }
    }
}

impl Default for WallClock {
    fn default() -> Self {
        Self::new()
    }
}

impl Clock for WallClock {
    fn now_s(&self) -> f64 {
        self.origin.elapsed().as_secs_f64()
    }
}

/// Deterministic clock that only moves when told to. Never goes backwards.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct VirtualClock {
    now: f64,
}

impl VirtualClock {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn starting_at(t: f64) -> Self {
        Self { now: t.max(0.0) }
    }

    pub fn advance(&mut self, dt: f64) -> f64 {
        if dt > 0.0 {
            self.now += dt;
        }
        self.now
    }

    /// Moves forward to `t` if it lies in the future.
    pub fn advance_to(&mut self, t: f64) -> f64 {
        if t > self.now {
            self.now = t;
        }
        self.now
    }
}

impl Clock for VirtualClock {
    fn now_s(&self) -> f64 {
        self.now
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn virtual_clock_is_monotone() {
        let mut c = VirtualClock::new();
        assert_eq!(c.advance(1.5), 1.5);
        assert_eq!(c.advance(-3.0), 1.5);
        assert_eq!(c.advance_to(1.0), 1.5);
        assert_eq!(c.advance_to(4.0), 4.0);
        assert_eq!(c.advance(f64::NAN), 4.0);
    }

    #[test]
    fn wall_clock_moves_forward() {
        let c = WallClock::new();
        let a = c.now_s();
        std::thread::sleep(std::time::Duration::from_millis(2));
        assert!(c.now_s() > a);
    }
}
