//! Footstep commands: polar targets relative to a foot's previous touchdown,
//! their randomization, and per-foot bookkeeping of pending and active
//! commands.

use std::f64::consts::PI;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::clock::Foot;
use crate::error::{Error, Result};

/// Polar footstep command `(L, θ)`. Positive `theta_step` places the target to
/// the left of the previous same-side touchdown.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct FootstepCommand {
    pub l_step: f64,
    pub theta_step: f64,
}

impl FootstepCommand {
    pub const fn new(l_step: f64, theta_step: f64) -> Self {
        FootstepCommand { l_step, theta_step }
    }

    /// Polar command for a Cartesian offset expressed in the heading frame.
    pub fn from_cartesian(x: f64, y: f64) -> Self {
        FootstepCommand::new(x.hypot(y), y.atan2(x))
    }

    /// Cartesian offset in the heading frame.
    pub fn to_cartesian(self) -> [f64; 2] {
        [
            self.l_step * self.theta_step.cos(),
            self.l_step * self.theta_step.sin(),
        ]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WorldTarget {
    pub x: f64,
    pub y: f64,
    pub foot: Foot,
}

/// Control-parameter randomization ranges used during training.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RandomizationRanges {
    pub ratio: [f64; 2],
    pub gamma: [f64; 2],
    pub l_step: [f64; 2],
    pub theta_step: [f64; 2],
    /// Per-policy-step probability of re-drawing the control parameters.
    pub probability: f64,
    /// Commands shorter than this are rejected and re-drawn.
    pub min_length: f64,
}

impl Default for RandomizationRanges {
    fn default() -> Self {
        RandomizationRanges {
            ratio: [0.45, 0.6],
            gamma: [0.9, 1.3],
            l_step: [0.0, 0.8],
            theta_step: [-PI, PI],
            probability: 1.0 / 50.0,
            min_length: 0.01,
        }
    }
}

impl RandomizationRanges {
    pub fn validate(&self) -> Result<()> {
        for (name, r) in [
            ("ratio", self.ratio),
            ("gamma", self.gamma),
            ("l_step", self.l_step),
            ("theta_step", self.theta_step),
        ] {
            if !(r[0] <= r[1]) {
                return Err(Error::config(format!("{name} range inverted: {r:?}")));
            }
        }
        if !(0.0..=1.0).contains(&self.probability) {
            return Err(Error::config("randomization probability outside [0, 1]"));
        }
        Ok(())
    }
}

pub(crate) fn uniform<R: Rng + ?Sized>(rng: &mut R, range: [f64; 2]) -> f64 {
    if range[0] == range[1] {
        return range[0];
    }
    range[0] + (range[1] - range[0]) * rng.random::<f64>()
}

/// Uniform command draw with rejection of very short steps. When the whole
/// length range lies below `min_length` the draw is returned unchanged.
pub fn sample_command<R: Rng + ?Sized>(rng: &mut R, ranges: &RandomizationRanges) -> FootstepCommand {
    let rejectable = ranges.l_step[1] >= ranges.min_length;
    loop {
        let l = uniform(rng, ranges.l_step);
        let theta = uniform(rng, ranges.theta_step);
        if !rejectable || l >= ranges.min_length {
            return FootstepCommand::new(l, theta);
        }
    }
}

/// World-frame target: `stance + L (cos(heading + θ), sin(heading + θ))`.
pub fn command_to_world(stance: [f64; 2], heading: f64, cmd: FootstepCommand, foot: Foot) -> WorldTarget {
    let a = heading + cmd.theta_step;
    WorldTarget {
        x: stance[0] + cmd.l_step * a.cos(),
        y: stance[1] + cmd.l_step * a.sin(),
        foot,
    }
}

/// Inverse of [`command_to_world`], with θ wrapped to `(-π, π]`.
pub fn world_to_relative(stance: [f64; 2], heading: f64, target: [f64; 2]) -> FootstepCommand {
    let dx = target[0] - stance[0];
    let dy = target[1] - stance[1];
    FootstepCommand::new(dx.hypot(dy), wrap_angle(dy.atan2(dx) - heading))
}

pub fn wrap_angle(a: f64) -> f64 {
    let w = (a + PI).rem_euclid(2.0 * PI) - PI;
    if w <= -PI {
        w + 2.0 * PI
    } else {
        w
    }
}

/// The active command only changes at a touchdown, and only when a command
/// is waiting.
pub fn update_pending_command(
    current: FootstepCommand,
    pending: Option<FootstepCommand>,
    td_event: Option<Foot>,
) -> FootstepCommand {
    match (td_event, pending) {
        (Some(_), Some(next)) => next,
        _ => current,
    }
}

/// What happened at a touchdown of `foot`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TouchdownRecord {
    pub foot: Foot,
    pub landing: [f64; 2],
    /// The target this step was aiming for.
    pub target: [f64; 2],
    /// Command that produced `target`.
    pub command: FootstepCommand,
    /// Euclidean distance between landing and target.
    pub error: f64,
    /// Command active for this foot after the touchdown.
    pub next_command: FootstepCommand,
}

/// Per-foot command state: previous touchdown, active command, world target,
/// and a single-slot pending queue.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FootstepTracker {
    pub heading: f64,
    active: [FootstepCommand; 2],
    pending: [Option<FootstepCommand>; 2],
    last_touchdown: [[f64; 2]; 2],
    target: [[f64; 2]; 2],
    latest: Foot,
}

impl FootstepTracker {
    pub fn new(feet: [[f64; 2]; 2], heading: f64, initial: [FootstepCommand; 2]) -> Self {
        let mut t = FootstepTracker {
            heading,
            active: initial,
            pending: [None, None],
            last_touchdown: feet,
            target: feet,
            latest: Foot::Right,
        };
        for foot in Foot::BOTH {
            t.retarget(foot);
        }
        t
    }

    fn retarget(&mut self, foot: Foot) {
        let i = foot.index();
        let w = command_to_world(self.last_touchdown[i], self.heading, self.active[i], foot);
        self.target[i] = [w.x, w.y];
    }

    pub fn set_pending(&mut self, foot: Foot, cmd: FootstepCommand) {
        self.pending[foot.index()] = Some(cmd);
    }

    pub fn pending(&self, foot: Foot) -> Option<FootstepCommand> {
        self.pending[foot.index()]
    }

    pub fn active(&self, foot: Foot) -> FootstepCommand {
        self.active[foot.index()]
    }

    pub fn target(&self, foot: Foot) -> [f64; 2] {
        self.target[foot.index()]
    }

    pub fn last_touchdown(&self, foot: Foot) -> [f64; 2] {
        self.last_touchdown[foot.index()]
    }

    /// Foot whose command is currently shown to the policy.
    pub fn latest(&self) -> Foot {
        self.latest
    }

    /// Command carried in the observation: the most recently activated one.
    pub fn observed_command(&self) -> FootstepCommand {
        self.active[self.latest.index()]
    }

    pub fn observed_target(&self) -> [f64; 2] {
        self.target[self.latest.index()]
    }

    /// Replaces `foot`'s active command immediately and recomputes its target
    /// from the foot's previous touchdown.
    pub fn override_active(&mut self, foot: Foot, cmd: FootstepCommand) {
        self.active[foot.index()] = cmd;
        self.pending[foot.index()] = None;
        self.latest = foot;
        self.retarget(foot);
    }

    /// Scores the landing against the current target, then promotes any
    /// pending command and re-anchors the target at the landing point.
    pub fn on_touchdown(&mut self, foot: Foot, landing: [f64; 2]) -> TouchdownRecord {
        let i = foot.index();
        let target = self.target[i];
        let command = self.active[i];
        let error = (landing[0] - target[0]).hypot(landing[1] - target[1]);
        self.active[i] = update_pending_command(self.active[i], self.pending[i], Some(foot));
        self.pending[i] = None;
        self.last_touchdown[i] = landing;
        self.latest = foot;
        self.retarget(foot);
        TouchdownRecord {
            foot,
            landing,
            target,
            command,
            error,
            next_command: self.active[i],
        }
    }
}

/// One line of a scripted command file.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScriptedCommand {
    pub foot: Foot,
    pub command: FootstepCommand,
}

/// Parses `foot L theta` lines (whitespace or comma separated, `#` comments).
pub fn parse_command_script(text: &str) -> Result<Vec<ScriptedCommand>> {
    let mut out = Vec::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line
            .split(|c: char| c == ',' || c.is_whitespace())
            .filter(|s| !s.is_empty())
            .collect();
        if fields.len() != 3 {
            return Err(Error::format(format!(
                "line {}: expected 'foot L theta', got '{line}'",
                lineno + 1
            )));
        }
        let foot: Foot = fields[0].parse()?;
        let parse = |s: &str| {
            s.parse::<f64>()
                .map_err(|_| Error::format(format!("line {}: bad number '{s}'", lineno + 1)))
        };
        out.push(ScriptedCommand {
            foot,
            command: FootstepCommand::new(parse(fields[1])?, parse(fields[2])?),
        });
    }
    Ok(out)
}

pub fn load_command_script(path: &Path) -> Result<Vec<ScriptedCommand>> {
    parse_command_script(&std::fs::read_to_string(path)?)
}

/// Per-foot step-length sequence, starting with the left foot.
pub fn alternating_script(left: &[f64], right: &[f64]) -> Vec<ScriptedCommand> {
    let mut out = Vec::new();
    for i in 0..left.len().max(right.len()) {
        if let Some(&l) = left.get(i) {
            out.push(ScriptedCommand {
                foot: Foot::Left,
                command: FootstepCommand::new(l, 0.0),
            });
        }
        if let Some(&r) = right.get(i) {
            out.push(ScriptedCommand {
                foot: Foot::Right,
                command: FootstepCommand::new(r, 0.0),
            });
        }
    }
    out
}
