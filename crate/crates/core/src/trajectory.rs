//! Per-iteration loss records and the windowed stop rule shared by all solvers.

use std::collections::VecDeque;

/// One recorded evaluation of a solver run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrajectoryPoint {
    /// Iteration (or epoch) index; 0 is the initialization.
    pub iteration: usize,
    pub loss: f64,
    /// Seconds since the run started.
    pub wall_time_sec: f64,
    /// Seed of the sampling plan used in this step, for sketched solvers.
    pub plan_seed: Option<u64>,
}

pub type Trajectory = Vec<TrajectoryPoint>;

/// Successive differences of the cumulative wall time.
pub fn step_times(trajectory: &[TrajectoryPoint]) -> Vec<f64> {
    trajectory
        .windows(2)
        .map(|w| w[1].wall_time_sec - w[0].wall_time_sec)
        .collect()
}

/// Stops once the loss improved by less than `eps` in each of the last
/// `window` steps. A negative `eps` disables the rule.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StopRule {
    pub eps: f64,
    pub window: usize,
}

impl StopRule {
    pub fn new(eps: f64, window: usize) -> Self {
        StopRule { eps, window }
    }

    pub fn disabled() -> Self {
        StopRule { eps: -1.0, window: 1 }
    }

    pub fn enabled(&self) -> bool {
        self.eps >= 0.0 && self.window >= 1
    }

    /// `history[0]` is the loss at initialization, `history[h]` after step `h`.
    pub fn fires(&self, history: &[f64]) -> bool {
        if !self.enabled() || history.len() < self.window + 1 {
            return false;
        }
        let h = history.len() - 1;
        (1..=self.window).all(|g| history[h + 1 - g] > history[h - g] - self.eps)
    }
}

impl Default for StopRule {
    fn default() -> Self {
        StopRule::new(1e-6, 3)
    }
}

/// Keeps the most recent `window + 1` snapshots so a run stopped at step `h`
/// can return the state from step `h - window`.
#[derive(Debug, Clone)]
pub(crate) struct SnapshotRing<M> {
    cap: usize,
    items: VecDeque<(usize, M)>,
}

impl<M: Clone> SnapshotRing<M> {
    pub(crate) fn new(window: usize) -> Self {
        SnapshotRing {
            cap: window + 1,
            items: VecDeque::with_capacity(window + 1),
        }
    }

    pub(crate) fn push(&mut self, step: usize, m: &M) {
        if self.items.len() == self.cap {
            self.items.pop_front();
        }
        self.items.push_back((step, m.clone()));
    }

    /// Oldest retained snapshot.
    pub(crate) fn oldest(&self) -> Option<&(usize, M)> {
        self.items.front()
    }
}
