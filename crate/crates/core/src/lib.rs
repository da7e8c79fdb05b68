//! Footstep-constrained bipedal gait learning.

pub mod clock;
pub mod command;
pub mod config;
pub mod env;
pub mod error;
pub mod nn;
pub mod ppo;
pub mod reward;
pub mod rng;
pub mod serve;
pub mod sim;
pub mod td2td;

pub use error::{Error, Result};

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/gait-clock.md")]
    mod gait_clock {}
    #[doc = include_str!("../../../book/src/footstep-commands.md")]
    mod footstep_commands {}
    #[doc = include_str!("../../../book/src/rewards.md")]
    mod rewards {}
    #[doc = include_str!("../../../book/src/autodiff.md")]
    mod autodiff {}
    #[doc = include_str!("../../../book/src/ppo.md")]
    mod ppo {}
    #[doc = include_str!("../../../book/src/reachability.md")]
    mod reachability {}
    #[doc = include_str!("../../../book/src/serving.md")]
    mod serving {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
}
