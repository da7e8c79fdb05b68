use std::fmt::Write as _;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use footgait::command::load_command_script;
use footgait::config::RunConfig;
use footgait::env::{FootstepEnv, SteppingEnv};
use footgait::nn::Checkpoint;
use footgait::ppo::eval::{
    constant_command_map, random_increments_table, scripted_sequence, IncrementCategory,
};
use footgait::ppo::{load_policy, DeterministicActor, Trainer};
use footgait::serve::{replay as replay_script, ServeSession, ServerMessage};
use footgait::td2td::{
    bin_by_velocity, collect_dataset, default_speed_edges, reachable_set_size, train_model as fit_model, Dataset, DatasetSize,
    REACHABLE_THRESHOLD,
};
use log::{info, warn};
use serde::Serialize;

use crate::Protocol;

pub const CONFIG_FILE: &str = "config.toml";

/// Writes the effective config next to an output.
pub fn write_config(cfg: &RunConfig, dir: &Path) -> anyhow::Result<PathBuf> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let path = dir.join(CONFIG_FILE);
    let text = format!("# config hash {}\n{}", cfg.hash(), cfg.to_toml());
    fs::write(&path, text).with_context(|| format!("writing {}", path.display()))?;
    Ok(path)
}

fn parent_dir(path: &Path) -> PathBuf {
    match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
        _ => PathBuf::from("."),
    }
}

pub fn build_env(cfg: &RunConfig) -> anyhow::Result<FootstepEnv> {
    Ok(FootstepEnv::new(cfg.env.clone())?)
}

/// Loads a policy checkpoint and checks it fits `env`.
pub fn load_actor(path: &Path, env: &FootstepEnv) -> anyhow::Result<(DeterministicActor, String)> {
    let ck = Checkpoint::load(path).with_context(|| format!("loading policy {}", path.display()))?;
    let ac = load_policy(&ck).with_context(|| format!("{} is not a policy checkpoint", path.display()))?;
    if ac.obs_dim() != env.observation_dim() || ac.action_dim() != env.action_dim() {
        bail!(
            "policy expects {} observations / {} actions, environment has {} / {}",
            ac.obs_dim(),
            ac.action_dim(),
            env.observation_dim(),
            env.action_dim()
        );
    }
    Ok((DeterministicActor::new(ac), ck.config_hash))
}

fn write_json(path: &Path, value: &impl Serialize) -> anyhow::Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    fs::write(path, text + "\n").with_context(|| format!("writing {}", path.display()))
}

pub fn train(cfg: &RunConfig, out: &Path) -> anyhow::Result<()> {
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    write_config(cfg, out)?;
    let env = build_env(cfg)?;
    let horizon = cfg.env.horizon;
    let mut trainer = Trainer::new(env, cfg.train.clone(), cfg.seed, cfg.workers, horizon, cfg.hash())?;
    info!(
        "training {} iterations of {} samples into {}",
        cfg.train.iterations,
        cfg.train.samples_per_iteration,
        out.display()
    );
    trainer.run(out, |m| {
        info!(
            "iter {:>5} return {:>8.3} len {:>6.1} falls {:>4} kl {:.4} epochs {} step error {}",
            m.iteration,
            m.mean_return,
            m.mean_episode_length,
            m.falls,
            m.kl_at_stop,
            m.epochs_run,
            m.mean_step_error.map_or("-".into(), |e| format!("{e:.3}"))
        );
    })?;
    info!("done at iteration {}", trainer.iteration);
    Ok(())
}

#[derive(Serialize)]
struct ReportHead<'a> {
    protocol: &'a str,
    config_hash: String,
    policy: String,
    policy_config_hash: String,
    seed: u64,
}

pub fn eval(cfg: &RunConfig, protocol: Protocol, policy_path: &Path, out: &Path) -> anyhow::Result<()> {
    let env = build_env(cfg)?;
    let (actor, policy_hash) = load_actor(policy_path, &env)?;
    fs::create_dir_all(out)?;
    write_config(cfg, out)?;
    let name = match protocol {
        Protocol::ConstantMap => "constant_map",
        Protocol::RandomIncrements => "random_increments",
        Protocol::ScriptedSequence => "scripted_sequence",
    };
    let head = ReportHead {
        protocol: name,
        config_hash: cfg.hash(),
        policy: policy_path.display().to_string(),
        policy_config_hash: policy_hash,
        seed: cfg.seed,
    };
    let mut md = format!(
        "# {name}\n\nconfig hash `{}`\npolicy `{}`\n\n",
        head.config_hash, head.policy
    );
    let body = match protocol {
        Protocol::ConstantMap => {
            let spec = cfg.eval.grid;
            let grid = constant_command_map(&env, &actor, &spec, cfg.eval.touchdowns_per_cell, cfg.seed, cfg.workers)?;
            let grid_file = out.join("constant_map_grid.txt");
            fs::write(&grid_file, format!("# config hash {}\n{}", head.config_hash, grid.to_text()))?;
            let measured: Vec<f64> = grid.measured().collect();
            let mean = (!measured.is_empty()).then(|| measured.iter().sum::<f64>() / measured.len() as f64);
            let size = reachable_set_size(&grid, REACHABLE_THRESHOLD);
            writeln!(
                md,
                "| valid cells | measured | mean error (m) | reachable (< {REACHABLE_THRESHOLD} m) |\n|---|---|---|---|\n| {} | {} | {} | {} |",
                grid.valid_count(),
                measured.len(),
                mean.map_or("-".into(), |m| format!("{m:.4}")),
                size
            )?;
            serde_json::json!({
                "grid": spec,
                "touchdowns_per_cell": cfg.eval.touchdowns_per_cell,
                "grid_file": grid_file.file_name().unwrap().to_string_lossy(),
                "valid_cells": grid.valid_count(),
                "measured_cells": measured.len(),
                "mean_error": mean,
                "reachable_set_size": size,
            })
        }
        Protocol::RandomIncrements => {
            let rows = random_increments_table(
                &env,
                &actor,
                &IncrementCategory::standard(),
                &cfg.eval.limits,
                cfg.eval.footsteps,
                cfg.seed,
                cfg.workers,
            )?;
            md.push_str("| increments | schedule | footsteps | error (m) | fell |\n|---|---|---|---|---|\n");
            for r in &rows {
                let err = match (r.mean_error, r.std_error) {
                    (Some(m), Some(s)) => format!("{m:.3} ± {s:.3}"),
                    _ => "-".into(),
                };
                writeln!(md, "| {} | {:?} | {} | {} | {} |", r.category, r.schedule, r.footsteps, err, r.fell)?;
            }
            serde_json::json!({ "footsteps": cfg.eval.footsteps, "limits": cfg.eval.limits, "rows": rows })
        }
        Protocol::ScriptedSequence => {
            let rep = scripted_sequence(&env, &actor, &cfg.eval.sequence_left, &cfg.eval.sequence_right, cfg.seed)?;
            md.push_str("| foot | commanded L (m) | realized L (m) | realized θ (rad) | error (m) |\n|---|---|---|---|---|\n");
            for r in &rep.rows {
                writeln!(
                    md,
                    "| {} | {:.3} | {:.3} | {:.3} | {:.4} |",
                    r.foot, r.command.l_step, r.realized.l_step, r.realized.theta_step, r.error
                )?;
            }
            if rep.fell {
                md.push_str("\nThe robot fell before the sequence completed.\n");
            }
            serde_json::to_value(&rep)?
        }
    };
    let mut report = serde_json::to_value(&head)?;
    report["result"] = body;
    write_json(&out.join(format!("{name}.json")), &report)?;
    fs::write(out.join(format!("{name}.md")), md)?;
    info!("wrote {name} report to {}", out.display());
    Ok(())
}

pub fn collect_td2td(cfg: &RunConfig, policy_path: &Path, out: &Path) -> anyhow::Result<()> {
    let env = build_env(cfg)?;
    let (actor, _) = load_actor(policy_path, &env)?;
    let spec = cfg.td2td.grid;
    let size = DatasetSize::new(cfg.td2td.resets, spec.cells(), env.observation_dim());
    info!("collecting {} resets, {} labels", cfg.td2td.resets, size.labels);
    let (dataset, report) = collect_dataset(&env, &actor, &spec, cfg.td2td.resets, cfg.seed, cfg.workers, &cfg.hash())?;
    let dir = parent_dir(out);
    fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
    dataset.save(out).with_context(|| format!("writing {}", out.display()))?;
    write_config(cfg, &dir)?;

    let sizes: Vec<(f64, usize)> = dataset
        .samples
        .iter()
        .map(|s| (s.speed, reachable_set_size(&s.y, REACHABLE_THRESHOLD)))
        .collect();
    write_json(
        &dir.join("td2td_collection.json"),
        &serde_json::json!({
            "config_hash": cfg.hash(),
            "dataset": out.display().to_string(),
            "size": size,
            "report": report,
            "reachable_by_speed": bin_by_velocity(&sizes, &default_speed_edges()),
        }),
    )?;
    info!(
        "kept {} samples ({} resets fell), {:.2}% of labels failed",
        dataset.samples.len(),
        report.failed_resets,
        100.0 * report.invalid_rate
    );
    Ok(())
}

pub fn train_model(cfg: &RunConfig, dataset_path: &Path, out: &Path) -> anyhow::Result<()> {
    let dataset = Dataset::load(dataset_path).with_context(|| format!("loading {}", dataset_path.display()))?;
    if dataset.config_hash != cfg.hash() {
        warn!("dataset was collected under config {}", dataset.config_hash);
    }
    let (model, report) = fit_model(&dataset, &cfg.td2td.model)?;
    let dir = parent_dir(out);
    fs::create_dir_all(&dir)?;
    model.checkpoint(&cfg.hash()).save(out)?;
    write_config(cfg, &dir)?;
    write_json(
        &dir.join("td2td_model.json"),
        &serde_json::json!({
            "config_hash": cfg.hash(),
            "dataset_config_hash": dataset.config_hash,
            "permute_labels": cfg.td2td.model.permute_labels,
            "report": report,
            "mse_over_variance": report.test_mse / report.label_variance,
        }),
    )?;
    info!(
        "test MSE {:.3e}, label variance {:.3e}",
        report.test_mse, report.label_variance
    );
    Ok(())
}

pub fn replay(cfg: &RunConfig, script: &Path, policy_path: &Path, out: &Path, max_steps: usize) -> anyhow::Result<()> {
    let commands = load_command_script(script).with_context(|| format!("reading {}", script.display()))?;
    let env = build_env(cfg)?;
    let (actor, _) = load_actor(policy_path, &env)?;
    let mut session = ServeSession::new(env, Box::new(actor), None, cfg.env.sim.policy_dt, cfg.seed)?;
    let frames = replay_script(&mut session, &commands, max_steps)?;
    fs::create_dir_all(parent_dir(out))?;
    let mut file = std::io::BufWriter::new(fs::File::create(out).with_context(|| format!("creating {}", out.display()))?);
    for f in &frames {
        writeln!(file, "{}", ServerMessage::Frame(f.clone()).to_json())?;
    }
    file.flush()?;
    let tds = frames.iter().filter(|f| f.touchdown.is_some()).count();
    info!("wrote {} frames ({tds} touchdowns) to {}", frames.len(), out.display());
    Ok(())
}
