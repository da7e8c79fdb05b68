//! Evaluation protocols: constant-command error maps, random command
//! increments under each γ schedule, and a fixed per-foot step sequence.

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::actor_critic::Policy;
use crate::clock::{Foot, GammaKind, GammaSchedule};
use crate::command::{world_to_relative, FootstepCommand};
use crate::env::SteppingEnv;
use crate::error::{Error, Result};
use crate::rng::{derive_seed, rng_from};
use crate::td2td::{GridSpec, ReachabilityGrid};

/// Policy-step budget per recorded touchdown before a run is abandoned.
const STEPS_PER_TOUCHDOWN: usize = 60;

/// Runs `f` over `items` on `workers` threads, preserving input order.
pub(crate) fn parallel_map<T, R, F>(items: &[T], workers: usize, f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync,
{
    let workers = workers.max(1).min(items.len().max(1));
    if workers == 1 {
        return items.iter().map(&f).collect();
    }
    let f = &f;
    let mut parts: Vec<Vec<(usize, R)>> = std::thread::scope(|s| {
        let handles: Vec<_> = (0..workers)
            .map(|w| {
                s.spawn(move || {
                    (w..items.len())
                        .step_by(workers)
                        .map(|i| (i, f(&items[i])))
                        .collect::<Vec<_>>()
                })
            })
            .collect();
        handles.into_iter().map(|h| h.join().expect("eval worker panicked")).collect()
    });
    let mut all: Vec<(usize, R)> = parts.drain(..).flatten().collect();
    all.sort_by_key(|(i, _)| *i);
    all.into_iter().map(|(_, r)| r).collect()
}

fn prepare<E: SteppingEnv, P: Policy>(env: &mut E, policy: &mut P, seed: u64, initial: FootstepCommand) -> Result<Vec<f64>> {
    env.set_randomization(false);
    env.set_horizon(usize::MAX);
    policy.reset();
    env.reset(seed)?;
    env.gait_mut().command_both(initial);
    Ok(env.observation())
}

/// Mean error of `touchdowns` consecutive steps under one fixed command, or
/// `None` if the robot fell first.
pub fn constant_command_error<E, P>(env: &mut E, policy: &mut P, cmd: FootstepCommand, touchdowns: usize, seed: u64) -> Result<Option<f64>>
where
    E: SteppingEnv,
    P: Policy,
{
    let mut obs = prepare(env, policy, seed, cmd)?;
    let mut errors = Vec::with_capacity(touchdowns);
    for _ in 0..touchdowns * STEPS_PER_TOUCHDOWN {
        let out = env.step(&policy.act(&obs)?)?;
        if let Some(td) = out.touchdown {
            errors.push(td.error);
            if errors.len() == touchdowns {
                return Ok(Some(errors.iter().sum::<f64>() / touchdowns as f64));
            }
        }
        if out.done() {
            return Ok(None);
        }
        obs = out.observation;
    }
    Ok(None)
}

/// Error map over every valid grid cell: each cell's Cartesian offset is
/// held as a constant command and `touchdowns` consecutive step errors are
/// averaged. All cells start from the same reset seed. Falls leave the cell
/// missing.
pub fn constant_command_map<E, P>(
    env: &E,
    policy: &P,
    spec: &GridSpec,
    touchdowns: usize,
    seed: u64,
    workers: usize,
) -> Result<ReachabilityGrid>
where
    E: SteppingEnv + Clone + Sync,
    P: Policy + Clone + Sync,
{
    let cells = spec.valid_cells();
    let results = parallel_map(&cells, workers, |&c| {
        constant_command_error(&mut env.clone(), &mut policy.clone(), spec.command(c), touchdowns, seed)
    });
    let mut errors = vec![f64::NAN; spec.cells()];
    for (c, r) in cells.iter().zip(results) {
        errors[*c] = r?.unwrap_or(f64::NAN);
    }
    ReachabilityGrid::new(*spec, errors)
}

/// One increment range of the random-increments protocol.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IncrementCategory {
    pub label: String,
    /// Half-width of the step-length increment, m.
    pub length: f64,
    /// Half-width of the direction increment, degrees.
    pub angle_deg: f64,
}

impl IncrementCategory {
    pub fn new(length: f64, angle_deg: f64) -> Self {
        IncrementCategory {
            label: format!("±{length}m, ±{angle_deg}°"),
            length,
            angle_deg,
        }
    }

    /// The four standard ranges.
    pub fn standard() -> Vec<IncrementCategory> {
        vec![
            Self::new(0.3, 0.0),
            Self::new(0.3, 20.0),
            Self::new(0.7, 0.0),
            Self::new(0.7, 20.0),
        ]
    }
}

/// Bounds for accepted commands in the increments protocol.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct IncrementLimits {
    pub min_length: f64,
    pub max_length: f64,
    pub start: FootstepCommand,
}

impl Default for IncrementLimits {
    fn default() -> Self {
        IncrementLimits {
            min_length: 0.01,
            max_length: 0.8,
            start: FootstepCommand::new(0.2, 0.0),
        }
    }
}

/// `U_next = U_prev + ΔU` with `ΔU` uniform in the category's box; draws
/// outside `[min_length, max_length]` are rejected and re-drawn. With a zero
/// range every command equals `limits.start`.
pub fn increment_sequence(cat: &IncrementCategory, limits: &IncrementLimits, n: usize, seed: u64) -> Result<Vec<FootstepCommand>> {
    let within = |c: &FootstepCommand| c.l_step >= limits.min_length && c.l_step <= limits.max_length;
    if !within(&limits.start) {
        return Err(Error::config("increment start command outside the accepted length range"));
    }
    let mut rng = rng_from(seed, &[0x1AC]);
    let dtheta = cat.angle_deg.to_radians();
    let mut prev = limits.start;
    let mut out = Vec::with_capacity(n);
    for _ in 0..n {
        let next = loop {
            let dl = if cat.length > 0.0 { rng.random_range(-cat.length..=cat.length) } else { 0.0 };
            let dt = if dtheta > 0.0 { rng.random_range(-dtheta..=dtheta) } else { 0.0 };
            let c = FootstepCommand::new(prev.l_step + dl, prev.theta_step + dt);
            if within(&c) {
                break c;
            }
        };
        out.push(next);
        prev = next;
    }
    Ok(out)
}

/// Touchdown of a sequenced command.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SequencedStep {
    pub foot: Foot,
    pub command: FootstepCommand,
    pub target: [f64; 2],
    pub landing: [f64; 2],
    /// Realized step relative to the same foot's previous touchdown.
    pub realized: FootstepCommand,
    pub error: f64,
}

/// Feeds `next_command(foot)` to each foot as soon as it lands and records
/// every touchdown of a fed command. Stops after `count` records, when the
/// source runs dry, or on a fall.
fn run_sequence<E, P>(
    env: &mut E,
    policy: &mut P,
    initial: FootstepCommand,
    seed: u64,
    count: usize,
    mut next_command: impl FnMut(Foot) -> Option<FootstepCommand>,
) -> Result<(Vec<SequencedStep>, bool)>
where
    E: SteppingEnv,
    P: Policy,
{
    let mut obs = prepare(env, policy, seed, initial)?;
    let mut fed = [false; 2];
    let mut exhausted = [false; 2];
    let mut out = Vec::with_capacity(count);
    let budget = (count + 4) * STEPS_PER_TOUCHDOWN;
    for _ in 0..budget {
        let prev_td = [env.tracker().last_touchdown(Foot::Left), env.tracker().last_touchdown(Foot::Right)];
        let heading = env.tracker().heading;
        let o = env.step(&policy.act(&obs)?)?;
        if let Some(td) = o.touchdown {
            let i = td.foot.index();
            if fed[i] {
                out.push(SequencedStep {
                    foot: td.foot,
                    command: td.command,
                    target: td.target,
                    landing: td.landing,
                    realized: world_to_relative(prev_td[i], heading, td.landing),
                    error: td.error,
                });
                if out.len() == count {
                    return Ok((out, false));
                }
            }
            match next_command(td.foot) {
                Some(cmd) => {
                    env.gait_mut().tracker.override_active(td.foot, cmd);
                    fed[i] = true;
                }
                None => {
                    fed[i] = false;
                    exhausted[i] = true;
                }
            }
            if exhausted.iter().all(|&e| e) && !fed.iter().any(|&f| f) {
                return Ok((out, false));
            }
        }
        if o.done() {
            return Ok((out, o.terminal || o.diverged));
        }
        obs = o.observation;
    }
    Ok((out, false))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IncrementResult {
    pub category: String,
    pub schedule: GammaKind,
    pub footsteps: usize,
    pub mean_error: Option<f64>,
    pub std_error: Option<f64>,
    pub fell: bool,
}

fn mean_std(xs: &[f64]) -> (Option<f64>, Option<f64>) {
    if xs.is_empty() {
        return (None, None);
    }
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    let v = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / n;
    (Some(m), Some(v.sqrt()))
}

/// Random-increments protocol for one category and γ schedule: `footsteps`
/// commands drawn by [`increment_sequence`] are fed alternately as each
/// foot lands.
pub fn random_increments<E, P>(
    env: &E,
    policy: &P,
    category: &IncrementCategory,
    schedule: GammaKind,
    limits: &IncrementLimits,
    footsteps: usize,
    seed: u64,
) -> Result<IncrementResult>
where
    E: SteppingEnv + Clone,
    P: Policy + Clone,
{
    let seq = increment_sequence(category, limits, footsteps, seed)?;
    let mut env = env.clone();
    env.set_gamma_schedule(GammaSchedule::with_kind(schedule));
    let mut it = seq.into_iter();
    let (steps, fell) = run_sequence(&mut env, &mut policy.clone(), limits.start, seed, footsteps, |_| it.next())?;
    let errors: Vec<f64> = steps.iter().map(|s| s.error).collect();
    let (mean_error, std_error) = mean_std(&errors);
    Ok(IncrementResult {
        category: category.label.clone(),
        schedule,
        footsteps: errors.len(),
        mean_error,
        std_error,
        fell,
    })
}

/// Every category under every schedule.
pub fn random_increments_table<E, P>(
    env: &E,
    policy: &P,
    categories: &[IncrementCategory],
    limits: &IncrementLimits,
    footsteps: usize,
    seed: u64,
    workers: usize,
) -> Result<Vec<IncrementResult>>
where
    E: SteppingEnv + Clone + Sync,
    P: Policy + Clone + Sync,
{
    let jobs: Vec<(usize, GammaKind)> = (0..categories.len())
        .flat_map(|c| [GammaKind::Fixed, GammaKind::Linear, GammaKind::Heuristic].map(|k| (c, k)))
        .collect();
    parallel_map(&jobs, workers, |&(c, k)| {
        random_increments(env, policy, &categories[c], k, limits, footsteps, derive_seed(seed, &[c as u64]))
    })
    .into_iter()
    .collect()
}

/// Step lengths of the demonstration sequence, per foot.
pub const SEQUENCE_LEFT: [f64; 4] = [0.1, 0.5, 0.7, 0.4];
pub const SEQUENCE_RIGHT: [f64; 4] = [0.3, 0.7, 0.5, 0.2];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SequenceReport {
    pub rows: Vec<SequencedStep>,
    pub fell: bool,
}

/// Feeds each foot its own list of straight-ahead step lengths, starting
/// from stepping in place. One row per commanded step that landed.
pub fn scripted_sequence<E, P>(env: &E, policy: &P, left: &[f64], right: &[f64], seed: u64) -> Result<SequenceReport>
where
    E: SteppingEnv + Clone,
    P: Policy + Clone,
{
    let mut queues = [left.iter(), right.iter()];
    let total = left.len() + right.len();
    let (rows, fell) = run_sequence(
        &mut env.clone(),
        &mut policy.clone(),
        FootstepCommand::new(0.0, 0.0),
        seed,
        total,
        |foot| queues[foot.index()].next().map(|&l| FootstepCommand::new(l, 0.0)),
    )?;
    Ok(SequenceReport { rows, fell })
}
