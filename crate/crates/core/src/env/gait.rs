use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::clock::{
    advance, detect_touchdown, heuristic_gamma, linear_gamma, ClockState, CommandAverage, Foot,
    GammaKind, GammaSchedule,
};
use crate::command::{sample_command, uniform, FootstepCommand, FootstepTracker, RandomizationRanges, TouchdownRecord};
use crate::rng::Rng;

/// Clock, command tracking and step-frequency state shared by every
/// environment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaitState {
    pub clock: ClockState,
    pub tracker: FootstepTracker,
    pub schedule: GammaSchedule,
    pub average: CommandAverage,
    /// Control parameters drawn since the last touchdown, applied at the next.
    pub pending_ratio: Option<f64>,
    pub pending_gamma: Option<f64>,
    pub touchdowns: [usize; 2],
}

impl GaitState {
    pub fn new(clock: ClockState, tracker: FootstepTracker, schedule: GammaSchedule, decay: f64) -> Self {
        let average = CommandAverage::new(tracker.observed_command(), decay);
        GaitState {
            clock,
            tracker,
            schedule,
            average,
            pending_ratio: None,
            pending_gamma: None,
            touchdowns: [0, 0],
        }
    }

    /// Advances the clock one policy step and reports a touchdown, if any.
    pub fn tick(&mut self) -> Option<Foot> {
        let next = advance(&self.clock);
        let td = detect_touchdown(&self.clock, &next);
        self.clock = next;
        td
    }

    /// Scores the landing, promotes pending commands and control parameters,
    /// and updates the phase multiplier for the upcoming step.
    pub fn touchdown(&mut self, foot: Foot, landing: [f64; 2]) -> TouchdownRecord {
        let rec = self.tracker.on_touchdown(foot, landing);
        self.touchdowns[foot.index()] += 1;
        if let Some(r) = self.pending_ratio.take() {
            self.clock.ratios = [r, r];
        }
        if let Some(g) = self.pending_gamma.take() {
            self.clock.gamma = g;
        }
        let upcoming = self.tracker.active(foot.other());
        match self.schedule.kind {
            GammaKind::Fixed => {}
            GammaKind::Linear => {
                let l = upcoming.l_step.clamp(0.0, self.schedule.l_max);
                if let Ok(g) = linear_gamma(l, &self.schedule) {
                    self.clock.gamma = self.schedule.clamp(g);
                }
            }
            GammaKind::Heuristic => {
                if let Ok(g) = heuristic_gamma(upcoming, &self.average, &self.schedule) {
                    self.clock.gamma = g;
                }
                self.average = self.average.update(upcoming);
            }
        }
        rec
    }

    /// Draws fresh control parameters; the command is queued for both feet.
    pub fn randomize(&mut self, rng: &mut Rng, ranges: &RandomizationRanges) {
        let cmd = sample_command(rng, ranges);
        self.pending_ratio = Some(uniform(rng, ranges.ratio));
        self.pending_gamma = Some(uniform(rng, ranges.gamma));
        for foot in Foot::BOTH {
            self.tracker.set_pending(foot, cmd);
        }
    }

    /// Bernoulli draw used for per-step randomization.
    pub fn should_randomize(rng: &mut Rng, probability: f64) -> bool {
        probability > 0.0 && rng.random::<f64>() < probability
    }

    /// Sets both feet to `cmd` right away, re-anchored at their last
    /// touchdowns.
    pub fn command_both(&mut self, cmd: FootstepCommand) {
        for foot in Foot::BOTH {
            self.tracker.override_active(foot, cmd);
        }
        self.average = CommandAverage::new(cmd, self.average.decay);
    }
}
