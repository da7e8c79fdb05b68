//! Socket message schema. Every message is one JSON text object carrying
//! `"v"` (schema version) and `"type"`.

use serde::{Deserialize, Serialize};

use crate::clock::{Foot, GammaKind};
use crate::command::{FootstepCommand, TouchdownRecord};
use crate::env::BodySnapshot;
use crate::error::{Error, Result};
use crate::reward::RewardBreakdown;
use crate::td2td::GridSpec;

pub const SCHEMA_VERSION: u32 = 1;

fn current_version() -> u32 {
    SCHEMA_VERSION
}

/// Versioned wrapper around a message body.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Envelope<T> {
    #[serde(default = "current_version")]
    pub v: u32,
    #[serde(flatten)]
    pub body: T,
}

/// Inbound messages.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ClientMessage {
    /// Queue the next command for a foot. Give either `l_step` (with
    /// optional `theta_step`) relative to the foot's previous touchdown, or
    /// a world point `x, y`. Without `foot`, the swing foot is used.
    SetNextFootstep {
        #[serde(default)]
        foot: Option<Foot>,
        #[serde(default)]
        l_step: Option<f64>,
        #[serde(default)]
        theta_step: Option<f64>,
        #[serde(default)]
        x: Option<f64>,
        #[serde(default)]
        y: Option<f64>,
    },
    /// Swing ratio for both feet, applied at the next touchdown.
    SetRatio { ratio: f64 },
    SetGammaSchedule { kind: GammaKind },
    Pause,
    Resume,
    Reset {
        #[serde(default)]
        seed: Option<u64>,
    },
    /// Ask for the predicted step-error grid at the current state.
    Reachability,
}

/// Resolved form of a `set_next_footstep` request.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum FootstepRequest {
    Relative(FootstepCommand),
    World([f64; 2]),
}

impl FootstepRequest {
    pub fn parse(l_step: Option<f64>, theta_step: Option<f64>, x: Option<f64>, y: Option<f64>) -> Result<Self> {
        let finite = |v: f64, name: &str| {
            if v.is_finite() {
                Ok(v)
            } else {
                Err(Error::input(format!("{name} must be finite")))
            }
        };
        match (l_step, theta_step, x, y) {
            (Some(l), t, None, None) => Ok(FootstepRequest::Relative(FootstepCommand::new(
                finite(l, "l_step")?,
                finite(t.unwrap_or(0.0), "theta_step")?,
            ))),
            (None, None, Some(x), Some(y)) => Ok(FootstepRequest::World([finite(x, "x")?, finite(y, "y")?])),
            _ => Err(Error::input("give either l_step[, theta_step] or both x and y")),
        }
    }
}

/// Per-foot command view.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FootView {
    pub active_command: FootstepCommand,
    pub pending_command: Option<FootstepCommand>,
    /// World target of the active command.
    pub world_target: [f64; 2],
    pub last_touchdown: [f64; 2],
    /// Local clock phase in `[0, 1)`; swing while below the ratio.
    pub phase: f64,
    pub ratio: f64,
    pub in_swing: bool,
}

/// One policy step of the served simulation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StreamFrame {
    pub seq: u64,
    /// Simulated seconds since the session started; never reset.
    pub timestamp: f64,
    pub episode: u64,
    pub body: BodySnapshot,
    /// Left then right.
    pub feet: [FootView; 2],
    /// Foot a bare `set_next_footstep` would address.
    pub swing_foot: Foot,
    pub touchdown: Option<TouchdownRecord>,
    pub last_step_error: Option<f64>,
    pub clock_phase: f64,
    pub gamma: f64,
    pub gamma_schedule: GammaKind,
    pub reward: f64,
    pub reward_breakdown: RewardBreakdown,
    /// The episode ended on this step; the next frame starts a fresh one.
    pub fell: bool,
}

/// Outbound messages.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ServerMessage {
    Hello {
        schema_version: u32,
        policy_period: f64,
        reachability: bool,
    },
    Frame(StreamFrame),
    /// Predicted step errors, row-major with the forward offset as row;
    /// masked cells are `null`. Commands are relative to `anchor`, the last
    /// touchdown of `foot`.
    Reachability {
        seq: u64,
        foot: Foot,
        anchor: [f64; 2],
        heading: f64,
        grid: GridSpec,
        errors: Vec<Option<f64>>,
    },
    Error {
        message: String,
    },
}

impl ServerMessage {
    pub fn error(message: impl Into<String>) -> Self {
        ServerMessage::Error {
            message: message.into(),
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(&Envelope {
            v: SCHEMA_VERSION,
            body: self,
        })
        .expect("message serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let env: Envelope<ServerMessage> =
            serde_json::from_str(text).map_err(|e| Error::format(format!("server message: {e}")))?;
        check_version(env.v)?;
        Ok(env.body)
    }
}

impl ClientMessage {
    pub fn to_json(&self) -> String {
        serde_json::to_string(&Envelope {
            v: SCHEMA_VERSION,
            body: self,
        })
        .expect("message serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let env: Envelope<ClientMessage> =
            serde_json::from_str(text).map_err(|e| Error::format(format!("client message: {e}")))?;
        check_version(env.v)?;
        Ok(env.body)
    }
}

fn check_version(v: u32) -> Result<()> {
    if v == SCHEMA_VERSION {
        Ok(())
    } else {
        Err(Error::format(format!("schema version {v} unsupported (expected {SCHEMA_VERSION})")))
    }
}
