//! Simulation clock.
//!
//! All timing in the simulator is integer nanoseconds on a single logical
//! clock. Wall-clock time never enters simulation arithmetic, which keeps
//! replays bit-reproducible across hosts.

use std::fmt;

use serde::{Deserialize, Serialize};

/// A point on the simulation timeline, in nanoseconds since trace start.
///
/// Durations are plain `u64` nanosecond counts; only absolute instants get a
/// newtype so the two cannot be mixed up silently.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SimTime(pub u64);

impl SimTime {
    pub const ZERO: SimTime = SimTime(0);

    #[must_use]
    pub const fn from_nanos(ns: u64) -> Self {
        SimTime(ns)
    }

    #[must_use]
    pub const fn nanos(self) -> u64 {
        self.0
    }

    /// Instant `delta_ns` nanoseconds after `self`. Saturates instead of
    /// wrapping; a saturated clock is a configuration bug, not UB.
    #[must_use]
    pub const fn after(self, delta_ns: u64) -> Self {
        SimTime(self.0.saturating_add(delta_ns))
    }

    /// Nanoseconds elapsed since `earlier`, zero if `earlier` is in the future.
    #[must_use]
    pub const fn since(self, earlier: SimTime) -> u64 {
        self.0.saturating_sub(earlier.0)
    }
}

impl fmt::Display for SimTime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        // Render with a unit suffix so log lines are unambiguous.
        write!(f, "{}ns", self.0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn after_advances_by_delta() {
        let t = SimTime::from_nanos(1_000);
        assert_eq!(t.after(500), SimTime::from_nanos(1_500));
    }

    #[test]
    fn after_saturates_at_u64_max() {
        let t = SimTime::from_nanos(u64::MAX - 1);
        assert_eq!(t.after(10), SimTime::from_nanos(u64::MAX));
    }

    #[test]
    fn since_is_zero_for_future_instants() {
        let t = SimTime::from_nanos(5);
        assert_eq!(t.since(SimTime::from_nanos(10)), 0);
        assert_eq!(SimTime::from_nanos(10).since(t), 5);
    }

    #[test]
    fn ordering_follows_nanos() {
        assert!(SimTime::from_nanos(1) < SimTime::from_nanos(2));
    }
}
