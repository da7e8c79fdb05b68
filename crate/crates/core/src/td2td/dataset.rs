use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::grid::{GridSpec, ReachabilityGrid};
use crate::clock::Foot;
use crate::env::SteppingEnv;
use crate::error::{Error, Result};
use crate::ppo::Policy;
use crate::rng::derive_seed;

/// Touchdowns (either foot) before the command swap.
pub const SETTLE_TOUCHDOWNS: usize = 5;
/// Policy-step budget for reaching one touchdown.
const STEPS_PER_TOUCHDOWN: usize = 60;

/// One reset state: the observation at the settle touchdown and the step
/// error of every grid command issued from it.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledSample {
    pub seed: u64,
    /// Foot that made the settle touchdown; the measured step is its next one.
    pub foot: Foot,
    /// Horizontal pelvis speed at the settle touchdown, m/s.
    pub speed: f64,
    pub x: Vec<f64>,
    pub y: ReachabilityGrid,
}

/// State reached at the settle touchdown, ready to be branched per cell.
pub struct SettledState<E, P> {
    pub env: E,
    pub policy: P,
    pub observation: Vec<f64>,
    pub foot: Foot,
    pub speed: f64,
}

/// Resets with `seed` and runs until the settle touchdown. `None` if the
/// robot fell first.
pub fn settle<E, P>(env: &E, policy: &P, seed: u64) -> Result<Option<SettledState<E, P>>>
where
    E: SteppingEnv + Clone,
    P: Policy + Clone,
{
    let mut env = env.clone();
    let mut policy = policy.clone();
    env.set_randomization(false);
    env.set_horizon(usize::MAX);
    policy.reset();
    let mut obs = env.reset(seed)?;
    let mut count = 0;
    for _ in 0..SETTLE_TOUCHDOWNS * STEPS_PER_TOUCHDOWN {
        let out = env.step(&policy.act(&obs)?)?;
        if out.terminal || out.diverged {
            return Ok(None);
        }
        obs = out.observation;
        if let Some(td) = out.touchdown {
            count += 1;
            if count == SETTLE_TOUCHDOWNS {
                let speed = env.pelvis_speed();
                return Ok(Some(SettledState {
                    env,
                    policy,
                    observation: obs,
                    foot: td.foot,
                    speed,
                }));
            }
        }
    }
    Ok(None)
}

/// Swaps in `cmd` as the settle foot's next step and returns the error at
/// that foot's next touchdown, or `None` on a fall.
pub fn measure_command<E, P>(state: &SettledState<E, P>, cmd: crate::command::FootstepCommand) -> Result<Option<f64>>
where
    E: SteppingEnv + Clone,
    P: Policy + Clone,
{
    let mut env = state.env.clone();
    let mut policy = state.policy.clone();
    env.gait_mut().tracker.override_active(state.foot, cmd);
    let mut obs = env.observation();
    for _ in 0..3 * STEPS_PER_TOUCHDOWN {
        let out = env.step(&policy.act(&obs)?)?;
        if out.terminal || out.diverged {
            return Ok(None);
        }
        if let Some(td) = out.touchdown.filter(|td| td.foot == state.foot) {
            return Ok(Some(td.error));
        }
        obs = out.observation;
    }
    Ok(None)
}

/// Measured error for one grid cell from reset `seed`, with the recorded
/// observation. Returns `None` when the robot fell before the swap.
pub fn collect_episode<E, P>(env: &E, policy: &P, seed: u64, spec: &GridSpec, cell: usize) -> Result<Option<(Vec<f64>, Option<f64>)>>
where
    E: SteppingEnv + Clone,
    P: Policy + Clone,
{
    if !spec.is_valid(cell) {
        return Err(Error::input(format!("cell {cell} is masked out")));
    }
    match settle(env, policy, seed)? {
        Some(s) => Ok(Some((s.observation.clone(), measure_command(&s, spec.command(cell))?))),
        None => Ok(None),
    }
}

/// Full grid from one reset state; `None` if the robot fell before the swap.
pub fn collect_sample<E, P>(env: &E, policy: &P, seed: u64, spec: &GridSpec) -> Result<Option<LabeledSample>>
where
    E: SteppingEnv + Clone,
    P: Policy + Clone,
{
    let Some(state) = settle(env, policy, seed)? else {
        return Ok(None);
    };
    let mut errors = vec![f64::NAN; spec.cells()];
    for c in spec.valid_cells() {
        errors[c] = measure_command(&state, spec.command(c))?.unwrap_or(f64::NAN);
    }
    Ok(Some(LabeledSample {
        seed,
        foot: state.foot,
        speed: state.speed,
        x: state.observation,
        y: ReachabilityGrid::new(*spec, errors)?,
    }))
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub obs_dim: usize,
    pub spec: GridSpec,
    pub config_hash: String,
    pub samples: Vec<LabeledSample>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CollectionReport {
    pub resets: usize,
    /// Resets that fell before the swap.
    pub failed_resets: usize,
    pub labels: usize,
    /// Valid cells whose measurement failed.
    pub invalid_cells: usize,
    pub invalid_rate: f64,
}

/// `n_resets` samples from reset seeds derived from `seed`, split across
/// `workers`. Falls before the swap drop the reset.
pub fn collect_dataset<E, P>(
    env: &E,
    policy: &P,
    spec: &GridSpec,
    n_resets: usize,
    seed: u64,
    workers: usize,
    config_hash: &str,
) -> Result<(Dataset, CollectionReport)>
where
    E: SteppingEnv + Clone + Sync,
    P: Policy + Clone + Sync,
{
    spec.validate()?;
    let seeds: Vec<u64> = (0..n_resets as u64).map(|k| derive_seed(seed, &[0x7D2, k])).collect();
    let results = crate::ppo::eval::parallel_map(&seeds, workers, |&s| collect_sample(env, policy, s, spec));
    let mut samples = Vec::new();
    let mut failed = 0;
    for r in results {
        match r? {
            Some(s) => samples.push(s),
            None => failed += 1,
        }
    }
    let labels = samples.len() * spec.valid_cells().len();
    let invalid: usize = samples.iter().map(|s| s.y.missing_count()).sum();
    let report = CollectionReport {
        resets: n_resets,
        failed_resets: failed,
        labels,
        invalid_cells: invalid,
        invalid_rate: if labels == 0 { 0.0 } else { invalid as f64 / labels as f64 },
    };
    Ok((
        Dataset {
            obs_dim: env.observation_dim(),
            spec: *spec,
            config_hash: config_hash.into(),
            samples,
        },
        report,
    ))
}

pub const DATASET_MAGIC: &[u8; 8] = b"TD2TDSET";
pub const DATASET_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct DatasetHeader {
    obs_dim: usize,
    grid: GridSpec,
    count: usize,
    config_hash: String,
}

fn read_exact<const N: usize>(r: &mut impl Read) -> Result<[u8; N]> {
    let mut b = [0u8; N];
    r.read_exact(&mut b)
        .map_err(|_| Error::format("dataset truncated"))?;
    Ok(b)
}

fn read_f64s(r: &mut impl Read, n: usize) -> Result<Vec<f64>> {
    (0..n).map(|_| Ok(f64::from_le_bytes(read_exact(r)?))).collect()
}

impl Dataset {
    pub fn label_count(&self) -> usize {
        self.samples.len() * self.spec.valid_cells().len()
    }

    /// Binary layout, little-endian: magic, `u32` version, `u32` header
    /// length, JSON header (`obs_dim`, `grid`, `count`, `config_hash`), then
    /// per sample `u64` seed, `u8` foot, `f64` speed, `obs_dim` floats of X
    /// and `size²` floats of Y (NaN for masked or missing cells).
    pub fn write_to(&self, w: &mut impl Write) -> Result<()> {
        let header = serde_json::to_vec(&DatasetHeader {
            obs_dim: self.obs_dim,
            grid: self.spec,
            count: self.samples.len(),
            config_hash: self.config_hash.clone(),
        })
        .expect("header serializes");
        w.write_all(DATASET_MAGIC)?;
        w.write_all(&DATASET_VERSION.to_le_bytes())?;
        w.write_all(&(header.len() as u32).to_le_bytes())?;
        w.write_all(&header)?;
        for s in &self.samples {
            if s.x.len() != self.obs_dim || s.y.errors.len() != self.spec.cells() {
                return Err(Error::shape("sample does not match dataset header"));
            }
            w.write_all(&s.seed.to_le_bytes())?;
            w.write_all(&[s.foot.index() as u8])?;
            w.write_all(&s.speed.to_le_bytes())?;
            for v in s.x.iter().chain(&s.y.errors) {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn read_from(r: &mut impl Read) -> Result<Self> {
        if &read_exact::<8>(r)? != DATASET_MAGIC {
            return Err(Error::format("not a dataset file"));
        }
        let version = u32::from_le_bytes(read_exact(r)?);
        if version != DATASET_VERSION {
            return Err(Error::format(format!("unsupported dataset version {version}")));
        }
        let len = u32::from_le_bytes(read_exact(r)?) as usize;
        let mut hb = vec![0u8; len];
        r.read_exact(&mut hb).map_err(|_| Error::format("dataset truncated"))?;
        let h: DatasetHeader =
            serde_json::from_slice(&hb).map_err(|e| Error::format(format!("dataset header: {e}")))?;
        h.grid.validate()?;
        let mut samples = Vec::with_capacity(h.count);
        for _ in 0..h.count {
            let seed = u64::from_le_bytes(read_exact(r)?);
            let foot = match read_exact::<1>(r)?[0] {
                0 => Foot::Left,
                1 => Foot::Right,
                b => return Err(Error::format(format!("bad foot byte {b}"))),
            };
            let speed = f64::from_le_bytes(read_exact(r)?);
            let x = read_f64s(r, h.obs_dim)?;
            let errors = read_f64s(r, h.grid.cells())?;
            samples.push(LabeledSample {
                seed,
                foot,
                speed,
                x,
                y: ReachabilityGrid::new(h.grid, errors)?,
            });
        }
        let mut rest = Vec::new();
        r.read_to_end(&mut rest)?;
        if !rest.is_empty() {
            return Err(Error::format("trailing bytes after dataset"));
        }
        Ok(Dataset {
            obs_dim: h.obs_dim,
            spec: h.grid,
            config_hash: h.config_hash,
            samples,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut buf = Vec::new();
        self.write_to(&mut buf)?;
        let tmp = path.with_extension("tmp");
        std::fs::write(&tmp, buf)?;
        std::fs::rename(tmp, path)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path)?;
        Self::read_from(&mut bytes.as_slice())
    }

    /// Writes one plain-text matrix per sample into `dir`.
    pub fn export_text(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        for (k, s) in self.samples.iter().enumerate() {
            std::fs::write(dir.join(format!("sample_{k:05}.txt")), s.y.to_text())?;
        }
        Ok(())
    }
}

/// Label count for a dataset of `resets` reset states on `cells` commands.
pub const fn label_count(resets: usize, cells: usize) -> usize {
    resets * cells
}

/// Size of a dataset collection, in labels, simulated steps and bytes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DatasetSize {
    pub resets: usize,
    pub cells: usize,
    pub labels: usize,
    pub file_bytes: usize,
}

impl DatasetSize {
    pub fn new(resets: usize, cells: usize, obs_dim: usize) -> Self {
        DatasetSize {
            resets,
            cells,
            labels: label_count(resets, cells),
            file_bytes: resets * (8 + 1 + 8 + 8 * (obs_dim + cells)),
        }
    }
}
