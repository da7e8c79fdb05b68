//! Gait clock: cyclic phase, per-foot swing/stance windows, clock-based
//! touchdown detection, and the step-frequency (gamma) schedules.

use std::f64::consts::{PI, TAU};

use serde::{Deserialize, Serialize};

use crate::command::FootstepCommand;
use crate::error::{Error, Result};

/// Foot identifier. `Left` swings first at the default offsets.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Foot {
    Left,
    Right,
}

impl Foot {
    pub const BOTH: [Foot; 2] = [Foot::Left, Foot::Right];

    pub fn index(self) -> usize {
        match self {
            Foot::Left => 0,
            Foot::Right => 1,
        }
    }

    pub fn other(self) -> Foot {
        match self {
            Foot::Left => Foot::Right,
            Foot::Right => Foot::Left,
        }
    }

    pub fn from_index(i: usize) -> Foot {
        if i == 0 {
            Foot::Left
        } else {
            Foot::Right
        }
    }
}

impl std::fmt::Display for Foot {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Foot::Left => "left",
            Foot::Right => "right",
        })
    }
}

impl std::str::FromStr for Foot {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "left" | "l" => Ok(Foot::Left),
            "right" | "r" => Ok(Foot::Right),
            other => Err(Error::input(format!("unknown foot id '{other}'"))),
        }
    }
}

/// The cyclic gait clock.
///
/// `ratios[i]` is the swing ratio of foot `i`: the fraction of the cycle the
/// foot spends in swing. A foot's local phase is `(phi + foot_offsets[i]) mod 1`;
/// it swings on `[0, ratio)` and stands on `[ratio, 1)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClockState {
    pub phi: f64,
    pub delta_phi: f64,
    pub gamma: f64,
    pub ratios: [f64; 2],
    pub foot_offsets: [f64; 2],
}

/// Nominal phase increment: one cycle every 30 policy steps (0.75 s at 40 Hz).
pub const NOMINAL_DELTA_PHI: f64 = 1.0 / 30.0;
pub const NOMINAL_RATIO: f64 = 0.45;

impl Default for ClockState {
    fn default() -> Self {
        ClockState {
            phi: 0.0,
            delta_phi: NOMINAL_DELTA_PHI,
            gamma: 1.0,
            ratios: [NOMINAL_RATIO; 2],
            foot_offsets: [0.0, 0.5],
        }
    }
}

fn wrap_unit(x: f64) -> f64 {
    let w = x.rem_euclid(1.0);
    // rem_euclid can round up to exactly 1.0 for tiny negative inputs
    if w >= 1.0 {
        0.0
    } else {
        w
    }
}

impl ClockState {
    /// Local phase of `foot` in `[0, 1)`.
    pub fn foot_phase(&self, foot: Foot) -> f64 {
        wrap_unit(self.phi + self.foot_offsets[foot.index()])
    }

    pub fn swing_fraction(&self, foot: Foot) -> f64 {
        self.ratios[foot.index()]
    }

    pub fn in_swing(&self, foot: Foot) -> bool {
        self.foot_phase(foot) < self.swing_fraction(foot)
    }

    pub fn in_stance(&self, foot: Foot) -> bool {
        !self.in_swing(foot)
    }
}

/// `phi' = (phi + gamma * delta_phi) mod 1`.
pub fn advance(clock: &ClockState) -> ClockState {
    ClockState {
        phi: wrap_unit(clock.phi + clock.gamma * clock.delta_phi),
        ..*clock
    }
}

/// Clock observation `(sin 2πφ, sin 2π(φ + ¼))`.
pub fn clock_inputs(phi: f64) -> [f64; 2] {
    [(TAU * phi).sin(), (TAU * (phi + 0.25)).sin()]
}

fn crossed(prev: f64, next: f64, boundary: f64) -> bool {
    if next >= prev {
        prev < boundary && boundary <= next
    } else {
        // wrapped through 1 -> 0
        boundary > prev || boundary <= next
    }
}

/// The foot whose local phase crossed its swing-to-stance boundary between
/// `prev` and `next`. Boundaries are taken from `next` (the ratios in effect
/// for the step). Left is reported first should both cross.
pub fn detect_touchdown(prev: &ClockState, next: &ClockState) -> Option<Foot> {
    Foot::BOTH.into_iter().find(|&foot| {
        crossed(
            prev.foot_phase(foot),
            next.foot_phase(foot),
            next.swing_fraction(foot),
        )
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GammaKind {
    Fixed,
    Linear,
    Heuristic,
}

impl std::str::FromStr for GammaKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "fixed" => Ok(GammaKind::Fixed),
            "linear" => Ok(GammaKind::Linear),
            "heuristic" => Ok(GammaKind::Heuristic),
            other => Err(Error::input(format!("unknown gamma schedule '{other}'"))),
        }
    }
}

impl std::fmt::Display for GammaKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            GammaKind::Fixed => "fixed",
            GammaKind::Linear => "linear",
            GammaKind::Heuristic => "heuristic",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GammaSchedule {
    pub kind: GammaKind,
    pub gamma_min: f64,
    pub gamma_max: f64,
    pub l_max: f64,
    pub clamp_min: f64,
    pub clamp_max: f64,
}

impl Default for GammaSchedule {
    fn default() -> Self {
        GammaSchedule {
            kind: GammaKind::Fixed,
            gamma_min: 0.9,
            gamma_max: 1.3,
            l_max: 0.8,
            clamp_min: 0.9,
            clamp_max: 1.3,
        }
    }
}

impl GammaSchedule {
    pub fn with_kind(kind: GammaKind) -> Self {
        GammaSchedule {
            kind,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.gamma_min < self.gamma_max) {
            return Err(Error::config("gamma_min must be below gamma_max"));
        }
        if !(self.l_max > 0.0) {
            return Err(Error::config("l_max must be positive"));
        }
        if !(self.clamp_min <= self.clamp_max) {
            return Err(Error::config("gamma clamp bounds inverted"));
        }
        Ok(())
    }

    pub fn clamp(&self, gamma: f64) -> f64 {
        gamma.clamp(self.clamp_min, self.clamp_max)
    }
}

/// Linear remapping from step length to phase multiplier: long steps get
/// slower clocks.
pub fn linear_gamma(l_step: f64, sched: &GammaSchedule) -> Result<f64> {
    if !(0.0..=sched.l_max).contains(&l_step) {
        return Err(Error::input(format!(
            "step length {l_step} outside [0, {}]",
            sched.l_max
        )));
    }
    Ok((1.0 - l_step / sched.l_max) * (sched.gamma_max - sched.gamma_min) + sched.gamma_min)
}

/// Exponentially weighted moving average of issued commands.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CommandAverage {
    pub l_avg: f64,
    pub theta_avg: f64,
    /// Weight kept on the previous average at each update.
    pub decay: f64,
}

pub const DEFAULT_AVERAGE_DECAY: f64 = 0.8;

impl CommandAverage {
    pub fn new(initial: FootstepCommand, decay: f64) -> Self {
        CommandAverage {
            l_avg: initial.l_step,
            theta_avg: initial.theta_step,
            decay,
        }
    }

    pub fn update(&self, cmd: FootstepCommand) -> CommandAverage {
        CommandAverage {
            l_avg: self.decay * self.l_avg + (1.0 - self.decay) * cmd.l_step,
            theta_avg: self.decay * self.theta_avg + (1.0 - self.decay) * cmd.theta_step,
            decay: self.decay,
        }
    }
}

/// Heuristic phase multiplier before clamping.
///
/// `delta` is the Euclidean norm of the polar difference `(L, θ)`; it mixes
/// metres and radians exactly as the heuristic is defined.
pub fn heuristic_gamma_raw(target: FootstepCommand, avg: &CommandAverage) -> Result<f64> {
    if target.l_step == 0.0 {
        return Err(Error::input("heuristic gamma undefined for zero target length"));
    }
    let dl = target.l_step - avg.l_avg;
    let dtheta = target.theta_step - avg.theta_avg;
    let delta = (dl * dl + dtheta * dtheta).sqrt();
    Ok(if delta < 0.2 {
        1.0
    } else if avg.l_avg >= target.l_step && dtheta.abs() <= PI / 10.0 {
        (avg.l_avg / target.l_step).powi(2)
    } else {
        1.0 / (0.8 + delta).powi(2)
    })
}

pub fn heuristic_gamma(
    target: FootstepCommand,
    avg: &CommandAverage,
    sched: &GammaSchedule,
) -> Result<f64> {
    Ok(sched.clamp(heuristic_gamma_raw(target, avg)?))
}
