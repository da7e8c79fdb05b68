use serde::{Deserialize, Serialize};

use super::{assemble_observation, BodySnapshot, GaitState, ObservationParts, StepOutcome, SteppingEnv, ACTION_DIM, OBS_DIM};
use crate::clock::{ClockState, Foot, GammaSchedule, DEFAULT_AVERAGE_DECAY, NOMINAL_DELTA_PHI};
use crate::command::{sample_command, FootstepCommand, FootstepTracker, RandomizationRanges};
use crate::error::{Error, Result};
use crate::reward::{
    action_smoothness_reward, check_termination, foot_cycle_rewards, orientation_reward, pelvis_reward,
    pelvis_stability_reward, step_reward, torque_smoothness_reward, total_reward, RewardBreakdown, RewardConfig,
    TerminationCheck,
};
use crate::rng::{derive_seed, rng_from, Rng};
use crate::sim::{apply_dynamics_randomization, reset, step_physics, ActionCommand, ResetMode, RobotState, SimConfig, N_JOINTS};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TaskKind {
    /// Commands, ratios and γ re-drawn with the configured per-step
    /// probability.
    RandomCommands,
    /// One fixed command, nominal ratios and γ.
    Constant { l_step: f64, theta_step: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EnvConfig {
    pub sim: SimConfig,
    pub reward: RewardConfig,
    pub termination: TerminationCheck,
    pub ranges: RandomizationRanges,
    pub gamma_schedule: GammaSchedule,
    pub task: TaskKind,
    /// Policy steps per episode.
    pub horizon: usize,
    pub reset_mode: ResetMode,
    pub dynamics_randomization: bool,
    pub delta_phi: f64,
    pub average_decay: f64,
    /// rad per policy step added to the heading target; 0 in training.
    pub turn_rate: f64,
}

impl Default for EnvConfig {
    fn default() -> Self {
        EnvConfig {
            sim: SimConfig::default(),
            reward: RewardConfig::default(),
            termination: TerminationCheck::default(),
            ranges: RandomizationRanges::default(),
            gamma_schedule: GammaSchedule::default(),
            task: TaskKind::RandomCommands,
            horizon: 300,
            reset_mode: ResetMode::Randomized,
            dynamics_randomization: true,
            delta_phi: NOMINAL_DELTA_PHI,
            average_decay: DEFAULT_AVERAGE_DECAY,
            turn_rate: 0.0,
        }
    }
}

impl EnvConfig {
    pub fn validate(&self) -> Result<()> {
        self.sim.validate()?;
        self.ranges.validate()?;
        self.gamma_schedule.validate()?;
        if self.horizon == 0 {
            return Err(Error::config("horizon must be positive"));
        }
        if !(self.delta_phi > 0.0 && self.delta_phi < 1.0) {
            return Err(Error::config("delta_phi must lie in (0, 1)"));
        }
        if !(self.average_decay > 0.0 && self.average_decay < 1.0) {
            return Err(Error::config("average_decay must lie in (0, 1)"));
        }
        Ok(())
    }
}

/// The simulated biped following footstep commands.
#[derive(Debug, Clone)]
pub struct FootstepEnv {
    config: EnvConfig,
    sim: SimConfig,
    state: RobotState,
    gait: GaitState,
    rng: Rng,
    randomize_control: bool,
    steps: usize,
    heading: f64,
    prev_action: [f64; N_JOINTS],
    last_outcome: Option<StepOutcome>,
    last_error: Option<f64>,
}

impl FootstepEnv {
    pub fn new(config: EnvConfig) -> Result<Self> {
        config.validate()?;
        let sim = config.sim.clone();
        let state = reset(0, ResetMode::Nominal, &sim)?;
        let feet = [state.foot_xy(Foot::Left), state.foot_xy(Foot::Right)];
        let cmd = FootstepCommand::new(0.0, 0.0);
        let gait = GaitState::new(
            ClockState::default(),
            FootstepTracker::new(feet, 0.0, [cmd, cmd]),
            config.gamma_schedule,
            config.average_decay,
        );
        let randomize_control = matches!(config.task, TaskKind::RandomCommands);
        let mut env = FootstepEnv {
            config,
            sim,
            state,
            gait,
            rng: rng_from(0, &[]),
            randomize_control,
            steps: 0,
            heading: 0.0,
            prev_action: [0.0; N_JOINTS],
            last_outcome: None,
            last_error: None,
        };
        env.reset(0)?;
        Ok(env)
    }

    pub fn config(&self) -> &EnvConfig {
        &self.config
    }

    pub fn state(&self) -> &RobotState {
        &self.state
    }

    /// Physical parameters of the current episode.
    pub fn sim_config(&self) -> &SimConfig {
        &self.sim
    }

    pub fn heading(&self) -> f64 {
        self.heading
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn last_outcome(&self) -> Option<&StepOutcome> {
        self.last_outcome.as_ref()
    }

    pub fn last_step_error(&self) -> Option<f64> {
        self.last_error
    }

    /// Joint setpoints for a policy output: nominal pose plus offset, clamped
    /// to the joint limits.
    pub fn setpoints(&self, action: &[f64]) -> [f64; N_JOINTS] {
        let nominal = self.sim.nominal_joints();
        std::array::from_fn(|i| {
            let j = i % 3;
            (nominal[j] + action[i]).clamp(self.sim.joint_lower[j], self.sim.joint_upper[j])
        })
    }

    fn initial_command(&mut self) -> FootstepCommand {
        match self.config.task {
            TaskKind::RandomCommands => sample_command(&mut self.rng, &self.config.ranges),
            TaskKind::Constant { l_step, theta_step } => FootstepCommand::new(l_step, theta_step),
        }
    }

    fn pelvis_xy(&self) -> [f64; 2] {
        let p = self.state.pelvis.position;
        [p.x, p.y]
    }

    fn target_distance(&self) -> f64 {
        let t = self.gait.tracker.observed_target();
        let p = self.pelvis_xy();
        (t[0] - p[0]).hypot(t[1] - p[1])
    }
}

impl SteppingEnv for FootstepEnv {
    fn observation_dim(&self) -> usize {
        OBS_DIM
    }

    fn action_dim(&self) -> usize {
        ACTION_DIM
    }

    fn reset(&mut self, seed: u64) -> Result<Vec<f64>> {
        self.rng = rng_from(seed, &[0xE4F]);
        self.sim = if self.config.dynamics_randomization {
            apply_dynamics_randomization(&self.config.sim, derive_seed(seed, &[0xD7]))?
        } else {
            self.config.sim.clone()
        };
        self.state = reset(derive_seed(seed, &[0x5E7]), self.config.reset_mode, &self.sim)?;
        self.heading = self.state.pelvis.yaw();
        let cmd = self.initial_command();
        let feet = [self.state.foot_xy(Foot::Left), self.state.foot_xy(Foot::Right)];
        let clock = ClockState {
            delta_phi: self.config.delta_phi,
            ..Default::default()
        };
        self.gait = GaitState::new(
            clock,
            FootstepTracker::new(feet, self.heading, [cmd, cmd]),
            self.gait.schedule,
            self.config.average_decay,
        );
        self.steps = 0;
        self.prev_action = [0.0; N_JOINTS];
        self.last_outcome = None;
        self.last_error = None;
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
            self.randomize_control && GaitState::should_randomize(&mut self.rng, self.config.ranges.probability);
        if randomized {
            self.gait.randomize(&mut self.rng, &self.config.ranges);
        }

        let setpoints = self.setpoints(action);
        let d_prev = self.target_distance();
        let prev_torques = self.state.last_torques;
        let next = match step_physics(&self.state, &ActionCommand::new(setpoints.to_vec()), &self.sim) {
            Ok(s) => s,
            Err(Error::SimulationDiverged(_)) => {
                self.steps += 1;
                let out = StepOutcome {
                    observation: self.observation(),
                    reward: 0.0,
                    breakdown: RewardBreakdown::all(0.0),
                    touchdown: None,
                    terminal: false,
                    truncated: true,
                    diverged: true,
                    randomized,
                };
                self.last_outcome = Some(out.clone());
                return Ok(out);
            }
            Err(e) => return Err(e),
        };
        self.state = next;
        self.steps += 1;
        self.heading += self.config.turn_rate;

        let td = self.gait.tick();
        let cfg = &self.config.reward;
        let cycle = foot_cycle_rewards(&self.state, &self.gait.clock, cfg);
        let v = self.state.pelvis.linear_velocity;
        let step_len = self.gait.tracker.observed_command().l_step;
        let mut breakdown = RewardBreakdown {
            right_foot_force: cycle.force[Foot::Right.index()],
            left_foot_force: cycle.force[Foot::Left.index()],
            right_foot_speed: cycle.speed[Foot::Right.index()],
            left_foot_speed: cycle.speed[Foot::Left.index()],
            orientation: orientation_reward(&self.state.pelvis.orientation, self.heading, cfg),
            pelvis_stability: pelvis_stability_reward(&self.state, cfg),
            action_smoothness: action_smoothness_reward(&self.prev_action, action, cfg),
            torque_smoothness: torque_smoothness_reward(&prev_torques, &self.state.last_torques, cfg),
            pelvis: pelvis_reward(d_prev, self.target_distance(), [v.x, v.y], step_len, cfg),
            sparse_step: None,
        };
        let touchdown = match td {
            Some(foot) => {
                let rec = self.gait.touchdown(foot, self.state.foot_xy(foot));
                breakdown.sparse_step = Some(step_reward(rec.error)?);
                self.last_error = Some(rec.error);
                Some(rec)
            }
            None => None,
        };
        self.prev_action.copy_from_slice(action);

        let terminal = check_termination(&self.state, &self.config.termination);
        let out = StepOutcome {
            observation: self.observation(),
            reward: total_reward(&breakdown),
            breakdown,
            touchdown,
            terminal,
            truncated: !terminal && self.steps >= self.config.horizon,
            diverged: false,
            randomized,
        };
        self.last_outcome = Some(out.clone());
        Ok(out)
    }

    fn observation(&self) -> Vec<f64> {
        let p = &self.state.pelvis;
        let q = p.orientation.quaternion();
        let joints = self.state.joint_positions();
        let mut vel = [0.0; N_JOINTS];
        for (i, leg) in self.state.legs.iter().enumerate() {
            vel[i * 3..i * 3 + 3].copy_from_slice(&leg.joint_velocities);
        }
        assemble_observation(&ObservationParts {
            angular_velocity: [p.angular_velocity.x, p.angular_velocity.y, p.angular_velocity.z],
            orientation: [q.w, q.i, q.j, q.k],
            joint_positions: &joints,
            joint_velocities: &vel,
            clock: &self.gait.clock,
            turn_rate: self.config.turn_rate,
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
        let v = self.state.pelvis.linear_velocity;
        v.x.hypot(v.y)
    }

    fn set_horizon(&mut self, horizon: usize) {
        self.config.horizon = horizon;
    }

    fn set_randomization(&mut self, on: bool) {
        self.randomize_control = on;
    }

    fn body(&self) -> BodySnapshot {
        let p = &self.state.pelvis;
        let q = p.orientation.quaternion();
        BodySnapshot {
            pelvis_position: p.position.into(),
            pelvis_orientation: [q.w, q.i, q.j, q.k],
            pelvis_yaw: p.yaw(),
            feet: self.state.legs.each_ref().map(|l| l.foot_position.into()),
            contacts: self.state.legs.each_ref().map(|l| l.in_contact()),
        }
    }
}

impl FootstepEnv {
    /// Replaces the gamma schedule in the stored config too, so it survives
    /// resets.
    pub fn with_gamma_schedule(mut self, schedule: GammaSchedule) -> Self {
        self.config.gamma_schedule = schedule;
        self.gait.schedule = schedule;
        self
    }
}
