use serde::{Deserialize, Serialize};

use super::{assemble_observation, GaitState, ObservationParts, StepOutcome, SteppingEnv, ACTION_DIM, OBS_DIM};
use crate::clock::{ClockState, Foot, GammaSchedule, DEFAULT_AVERAGE_DECAY};
use crate::command::{uniform, FootstepCommand, FootstepTracker, RandomizationRanges};
use crate::error::{Error, Result};
use crate::reward::{step_reward, total_reward, RewardBreakdown};
use crate::rng::{rng_from, Rng};
use crate::sim::N_JOINTS;

/// Where a scripted foot lands relative to its target.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LandingRule {
    Exact,
    /// Fixed world-frame offset from the target.
    WorldOffset { dx: f64, dy: f64 },
    /// Falls `distance` short along the line from the previous touchdown.
    RadialShort { distance: f64 },
    /// Error `scale · ‖c − gain · s‖²` where `c` is the commanded offset in
    /// the heading frame and `s` the episode's two state features; the foot
    /// lands that far from the target along +x.
    FeatureBowl { scale: f64, gain: f64 },
}

/// Kinematic walker with the full gait/command machinery and a scripted
/// landing rule in place of dynamics. Actions are ignored.
///
/// Each reset draws two features uniformly from `[-1, 1]`; they occupy the
/// first two observation slots and set the reported pelvis velocity.
#[derive(Debug, Clone)]
pub struct ScriptedWalker {
    rule: LandingRule,
    gait: GaitState,
    initial_command: FootstepCommand,
    ranges: RandomizationRanges,
    randomize_control: bool,
    rng: Rng,
    features: [f64; 2],
    steps: usize,
    horizon: usize,
}

impl ScriptedWalker {
    pub fn new(rule: LandingRule) -> Self {
        let cmd = FootstepCommand::new(0.0, 0.0);
        let mut w = ScriptedWalker {
            rule,
            gait: GaitState::new(
                ClockState::default(),
                FootstepTracker::new([[0.0; 2]; 2], 0.0, [cmd, cmd]),
                GammaSchedule::default(),
                DEFAULT_AVERAGE_DECAY,
            ),
            initial_command: cmd,
            ranges: RandomizationRanges::default(),
            randomize_control: false,
            rng: rng_from(0, &[]),
            features: [0.0; 2],
            steps: 0,
            horizon: 300,
        };
        w.reset(0).expect("scripted reset is infallible");
        w
    }

    pub fn with_initial_command(mut self, cmd: FootstepCommand) -> Self {
        self.initial_command = cmd;
        self.reset(0).expect("scripted reset is infallible");
        self
    }

    /// Enables per-step control-parameter randomization with `ranges`.
    pub fn with_randomization(mut self, ranges: RandomizationRanges) -> Self {
        self.ranges = ranges;
        self.randomize_control = true;
        self
    }

    pub fn features(&self) -> [f64; 2] {
        self.features
    }

    /// Step error the rule produces for a command, independent of history.
    pub fn scripted_error(&self, cmd: FootstepCommand) -> f64 {
        match self.rule {
            LandingRule::Exact => 0.0,
            LandingRule::WorldOffset { dx, dy } => dx.hypot(dy),
            LandingRule::RadialShort { distance } => distance,
            LandingRule::FeatureBowl { scale, gain } => {
                let c = cmd.to_cartesian();
                let dx = c[0] - gain * self.features[0];
                let dy = c[1] - gain * self.features[1];
                scale * (dx * dx + dy * dy)
            }
        }
    }

    fn landing(&self, foot: Foot) -> [f64; 2] {
        let t = &self.gait.tracker;
        let target = t.target(foot);
        match self.rule {
            LandingRule::Exact => target,
            LandingRule::WorldOffset { dx, dy } => [target[0] + dx, target[1] + dy],
            LandingRule::RadialShort { distance } => {
                let last = t.last_touchdown(foot);
                let (dx, dy) = (target[0] - last[0], target[1] - last[1]);
                let n = dx.hypot(dy);
                let (ux, uy) = if n > 0.0 {
                    (dx / n, dy / n)
                } else {
                    (t.heading.cos(), t.heading.sin())
                };
                [target[0] - distance * ux, target[1] - distance * uy]
            }
            LandingRule::FeatureBowl { .. } => {
                let e = self.scripted_error(t.active(foot));
                [target[0] + e, target[1]]
            }
        }
    }
}

impl SteppingEnv for ScriptedWalker {
    fn observation_dim(&self) -> usize {
        OBS_DIM
    }

    fn action_dim(&self) -> usize {
        ACTION_DIM
    }

    fn reset(&mut self, seed: u64) -> Result<Vec<f64>> {
        self.rng = rng_from(seed, &[0x5C41]);
        self.features = [uniform(&mut self.rng, [-1.0, 1.0]), uniform(&mut self.rng, [-1.0, 1.0])];
        let feet = [[0.0, 0.1], [0.0, -0.1]];
        let cmd = self.initial_command;
        self.gait = GaitState::new(
            ClockState::default(),
            FootstepTracker::new(feet, 0.0, [cmd, cmd]),
            self.gait.schedule,
            DEFAULT_AVERAGE_DECAY,
        );
        self.steps = 0;
        Ok(self.observation())
    }

    fn step(&mut self, action: &[f64]) -> Result<StepOutcome> {
        if action.len() != ACTION_DIM {
            return Err(Error::shape(format!(
                "action has {} entries, expected {ACTION_DIM}",
                action.len()
            )));
        }
        let randomized =
            self.randomize_control && GaitState::should_randomize(&mut self.rng, self.ranges.probability);
        if randomized {
            self.gait.randomize(&mut self.rng, &self.ranges);
        }
        self.steps += 1;
        let mut breakdown = RewardBreakdown::all(0.0);
        let touchdown = match self.gait.tick() {
            Some(foot) => {
                let landing = self.landing(foot);
                let rec = self.gait.touchdown(foot, landing);
                breakdown.sparse_step = Some(step_reward(rec.error)?);
                Some(rec)
            }
            None => None,
        };
        Ok(StepOutcome {
            observation: self.observation(),
            reward: total_reward(&breakdown),
            breakdown,
            touchdown,
            terminal: false,
            truncated: self.steps >= self.horizon,
            diverged: false,
            randomized,
        })
    }

    fn observation(&self) -> Vec<f64> {
        assemble_observation(&ObservationParts {
            angular_velocity: [self.features[0], self.features[1], 0.0],
            orientation: [1.0, 0.0, 0.0, 0.0],
            joint_positions: &[0.0; N_JOINTS],
            joint_velocities: &[0.0; N_JOINTS],
            clock: &self.gait.clock,
            turn_rate: 0.0,
            command: self.gait.tracker.observed_command(),
        })
    }

    fn gait(&self) -> &GaitState {
        &self.gait
    }

    fn gait_mut(&mut self) -> &mut GaitState {
        &mut self.gait
    }

    fn pelvis_speed(&self) -> f64 {
        self.features[0].hypot(self.features[1])
    }

    fn set_horizon(&mut self, horizon: usize) {
        self.horizon = horizon;
    }

    fn set_randomization(&mut self, on: bool) {
        self.randomize_control = on;
    }
}
