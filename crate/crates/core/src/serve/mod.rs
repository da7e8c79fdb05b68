//! Live serving: a simulation session driven by socket messages, a paced
//! loop that owns it, and offline replay of command scripts.

mod pacing;
mod protocol;

pub use pacing::{JitterStats, Pacer};
pub use protocol::{ClientMessage, Envelope, FootView, FootstepRequest, ServerMessage, StreamFrame, SCHEMA_VERSION};

use std::collections::VecDeque;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::mpsc::{Receiver, Sender, TryRecvError};

use crate::clock::{ClockState, Foot, GammaSchedule};
use crate::command::{world_to_relative, FootstepCommand, ScriptedCommand};
use crate::env::SteppingEnv;
use crate::error::{Error, Result};
use crate::ppo::Policy;
use crate::reward::RewardBreakdown;
use crate::rng::derive_seed;
use crate::td2td::ReachabilityModel;

/// Longest step a client may request, m.
pub const MAX_STEP_LENGTH: f64 = 0.8;

/// Foot addressed by a command without an explicit foot: the one in swing,
/// or the one that enters swing next. With both in swing, the one that
/// lifted off most recently.
pub fn swing_foot(clock: &ClockState) -> Foot {
    let swinging: Vec<Foot> = Foot::BOTH.into_iter().filter(|&f| clock.in_swing(f)).collect();
    match swinging.as_slice() {
        [f] => *f,
        [a, b] => {
            if clock.foot_phase(*a) <= clock.foot_phase(*b) {
                *a
            } else {
                *b
            }
        }
        _ => {
            if clock.foot_phase(Foot::Left) >= clock.foot_phase(Foot::Right) {
                Foot::Left
            } else {
                Foot::Right
            }
        }
    }
}

/// Simulator plus policy, stepped one policy period per [`tick`](Self::tick).
/// Holds all mutable simulation state; I/O talks to it through messages.
pub struct ServeSession<E: SteppingEnv> {
    env: E,
    policy: Box<dyn Policy>,
    model: Option<ReachabilityModel>,
    policy_period: f64,
    base_seed: u64,
    episode: u64,
    observation: Vec<f64>,
    paused: bool,
    seq: u64,
    time: f64,
    last_error: Option<f64>,
}

impl<E: SteppingEnv> ServeSession<E> {
    pub fn new(
        mut env: E,
        policy: Box<dyn Policy>,
        model: Option<ReachabilityModel>,
        policy_period: f64,
        seed: u64,
    ) -> Result<Self> {
        if env.observation_dim() == 0 || !(policy_period > 0.0) {
            return Err(Error::config("serve needs a positive policy period"));
        }
        if let Some(m) = &model {
            if m.input_mean.len() != env.observation_dim() {
                return Err(Error::shape(format!(
                    "reachability model takes {} inputs, env observes {}",
                    m.input_mean.len(),
                    env.observation_dim()
                )));
            }
        }
        env.set_randomization(false);
        env.set_horizon(usize::MAX);
        let mut s = ServeSession {
            env,
            policy,
            model,
            policy_period,
            base_seed: seed,
            episode: 0,
            observation: Vec::new(),
            paused: false,
            seq: 0,
            time: 0.0,
            last_error: None,
        };
        s.reset_episode(derive_seed(seed, &[0]))?;
        Ok(s)
    }

    pub fn env(&self) -> &E {
        &self.env
    }

    pub fn observation(&self) -> &[f64] {
        &self.observation
    }

    pub fn is_paused(&self) -> bool {
        self.paused
    }

    pub fn policy_period(&self) -> f64 {
        self.policy_period
    }

    pub fn hello(&self) -> ServerMessage {
        ServerMessage::Hello {
            schema_version: SCHEMA_VERSION,
            policy_period: self.policy_period,
            reachability: self.model.is_some(),
        }
    }

    fn reset_episode(&mut self, seed: u64) -> Result<()> {
        self.observation = self.env.reset(seed)?;
        self.policy.reset();
        self.last_error = None;
        Ok(())
    }

    /// Parses and applies one inbound text message. Bad input yields an
    /// error reply and leaves the session untouched.
    pub fn handle_text(&mut self, text: &str) -> Vec<ServerMessage> {
        match ClientMessage::from_json(text) {
            Ok(msg) => self.handle(msg),
            Err(e) => vec![ServerMessage::error(e.to_string())],
        }
    }

    pub fn handle(&mut self, msg: ClientMessage) -> Vec<ServerMessage> {
        match self.apply(msg) {
            Ok(reply) => reply.into_iter().collect(),
            Err(e) => vec![ServerMessage::error(e.to_string())],
        }
    }

    fn apply(&mut self, msg: ClientMessage) -> Result<Option<ServerMessage>> {
        match msg {
            ClientMessage::SetNextFootstep {
                foot,
                l_step,
                theta_step,
                x,
                y,
            } => {
                let request = FootstepRequest::parse(l_step, theta_step, x, y)?;
                let foot = foot.unwrap_or_else(|| swing_foot(self.env.clock()));
                let cmd = self.resolve(foot, request)?;
                self.env.gait_mut().tracker.set_pending(foot, cmd);
                Ok(None)
            }
            ClientMessage::SetRatio { ratio } => {
                if !(ratio > 0.0 && ratio < 1.0) {
                    return Err(Error::input(format!("ratio {ratio} outside (0, 1)")));
                }
                self.env.gait_mut().pending_ratio = Some(ratio);
                Ok(None)
            }
            ClientMessage::SetGammaSchedule { kind } => {
                let current = self.env.gait().schedule;
                self.env.set_gamma_schedule(GammaSchedule { kind, ..current });
                Ok(None)
            }
            ClientMessage::Pause => {
                self.paused = true;
                Ok(None)
            }
            ClientMessage::Resume => {
                self.paused = false;
                Ok(None)
            }
            ClientMessage::Reset { seed } => {
                self.episode += 1;
                let seed = seed.unwrap_or_else(|| derive_seed(self.base_seed, &[self.episode]));
                self.reset_episode(seed)?;
                Ok(None)
            }
            ClientMessage::Reachability => self.reachability().map(Some),
        }
    }

    /// Converts a request into a command for `foot`. World points are taken
    /// relative to the foot's current target, which is where the foot will
    /// land before the queued command becomes active.
    fn resolve(&self, foot: Foot, request: FootstepRequest) -> Result<FootstepCommand> {
        let cmd = match request {
            FootstepRequest::Relative(c) => c,
            FootstepRequest::World(p) => {
                let t = self.env.tracker();
                world_to_relative(t.target(foot), t.heading, p)
            }
        };
        if !(0.0..=MAX_STEP_LENGTH).contains(&cmd.l_step) {
            return Err(Error::input(format!(
                "step length {} outside [0, {MAX_STEP_LENGTH}]",
                cmd.l_step
            )));
        }
        Ok(cmd)
    }

    /// Predicted grid for the current observation.
    pub fn reachability(&self) -> Result<ServerMessage> {
        let model = self
            .model
            .as_ref()
            .ok_or_else(|| Error::input("no reachability model loaded"))?;
        let grid = model.predict_grid(&self.observation)?;
        let t = self.env.tracker();
        let foot = t.latest();
        Ok(ServerMessage::Reachability {
            seq: self.seq,
            foot,
            anchor: t.last_touchdown(foot),
            heading: t.heading,
            grid: grid.spec,
            errors: grid
                .errors
                .iter()
                .zip(&grid.mask)
                .map(|(&e, &m)| m.then_some(e))
                .collect(),
        })
    }

    /// Advances one policy step and returns its frame; `None` while paused.
    /// A fall is reported in its frame and the next episode starts at once.
    pub fn tick(&mut self) -> Result<Option<StreamFrame>> {
        if self.paused {
            return Ok(None);
        }
        let action = self.policy.act(&self.observation)?;
        let out = self.env.step(&action)?;
        if let Some(td) = &out.touchdown {
            self.last_error = Some(td.error);
        }
        self.observation = out.observation;
        self.seq += 1;
        self.time += self.policy_period;
        let fell = out.terminal || out.diverged || out.truncated;
        let frame = self.frame(out.touchdown, out.reward, out.breakdown, fell);
        if fell {
            self.episode += 1;
            self.reset_episode(derive_seed(self.base_seed, &[self.episode]))?;
        }
        Ok(Some(frame))
    }

    fn frame(
        &self,
        touchdown: Option<crate::command::TouchdownRecord>,
        reward: f64,
        breakdown: RewardBreakdown,
        fell: bool,
    ) -> StreamFrame {
        let g = self.env.gait();
        let view = |foot: Foot| FootView {
            active_command: g.tracker.active(foot),
            pending_command: g.tracker.pending(foot),
            world_target: g.tracker.target(foot),
            last_touchdown: g.tracker.last_touchdown(foot),
            phase: g.clock.foot_phase(foot),
            ratio: g.clock.ratios[foot.index()],
            in_swing: g.clock.in_swing(foot),
        };
        StreamFrame {
            seq: self.seq,
            timestamp: self.time,
            episode: self.episode,
            body: self.env.body(),
            feet: [view(Foot::Left), view(Foot::Right)],
            swing_foot: swing_foot(&g.clock),
            touchdown,
            last_step_error: self.last_error,
            clock_phase: g.clock.phi,
            gamma: g.clock.gamma,
            gamma_schedule: g.schedule.kind,
            reward,
            reward_breakdown: breakdown,
            fell,
        }
    }
}

/// Why [`run_loop`] returned.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LoopExit {
    Stopped,
    InboxClosed,
    OutboxClosed,
    StepLimit,
}

/// Paced serving loop: drain inbound messages, step, publish the frame,
/// sleep to the next deadline. Replies and frames go out as JSON text.
pub fn run_loop<E: SteppingEnv>(
    session: &mut ServeSession<E>,
    pacer: &mut Pacer,
    inbox: &Receiver<String>,
    outbox: &Sender<String>,
    stop: &AtomicBool,
    max_steps: Option<u64>,
) -> Result<LoopExit> {
    let mut steps = 0u64;
    loop {
        loop {
            match inbox.try_recv() {
                Ok(text) => {
                    let was_paused = session.is_paused();
                    for reply in session.handle_text(&text) {
                        if outbox.send(reply.to_json()).is_err() {
                            return Ok(LoopExit::OutboxClosed);
                        }
                    }
                    if was_paused && !session.is_paused() {
                        pacer.restart();
                    }
                }
                Err(TryRecvError::Empty) => break,
                Err(TryRecvError::Disconnected) => return Ok(LoopExit::InboxClosed),
            }
        }
        if stop.load(Ordering::Relaxed) {
            return Ok(LoopExit::Stopped);
        }
        if max_steps.is_some_and(|m| steps >= m) {
            return Ok(LoopExit::StepLimit);
        }
        if let Some(frame) = session.tick()? {
            steps += 1;
            if outbox.send(ServerMessage::Frame(frame).to_json()).is_err() {
                return Ok(LoopExit::OutboxClosed);
            }
        }
        pacer.wait();
    }
}

/// Feeds `script` into a session as queued commands, one outstanding per
/// foot, and returns every frame until each foot has executed its last
/// command or `max_steps` elapse.
pub fn replay<E: SteppingEnv>(
    session: &mut ServeSession<E>,
    script: &[ScriptedCommand],
    max_steps: usize,
) -> Result<Vec<StreamFrame>> {
    let mut queues: [VecDeque<FootstepCommand>; 2] = Default::default();
    for c in script {
        queues[c.foot.index()].push_back(c.command);
    }
    // Touchdown count at which each foot has flown its final command.
    let mut finish: [Option<usize>; 2] = [None; 2];
    for foot in Foot::BOTH {
        if queues[foot.index()].is_empty() {
            finish[foot.index()] = Some(0);
        }
    }
    let mut frames = Vec::new();
    for _ in 0..max_steps {
        for foot in Foot::BOTH {
            let i = foot.index();
            if session.env.tracker().pending(foot).is_none() {
                if let Some(cmd) = queues[i].pop_front() {
                    session.env.gait_mut().tracker.set_pending(foot, cmd);
                    if queues[i].is_empty() {
                        finish[i] = Some(session.env.gait().touchdowns[i] + 2);
                    }
                }
            }
        }
        let Some(frame) = session.tick()? else { break };
        let fell = frame.fell;
        frames.push(frame);
        if fell {
            break;
        }
        let counts = session.env.gait().touchdowns;
        if Foot::BOTH
            .iter()
            .all(|f| finish[f.index()].is_some_and(|n| counts[f.index()] >= n))
        {
            break;
        }
    }
    Ok(frames)
}

#[cfg(test)]
mod tests;
