//! Diagonal Gaussian policy distribution.

use std::f64::consts::PI;

use super::graph::{Graph, Var};
use super::tensor::Tensor;
use crate::error::Result;

const HALF_LN_2PI: f64 = 0.918_938_533_204_672_8;

pub fn log_prob(mean: &[f64], log_std: &[f64], action: &[f64]) -> f64 {
    mean.iter()
        .zip(log_std)
        .zip(action)
        .map(|((m, ls), a)| {
            let z = (a - m) / ls.exp();
            -0.5 * z * z - ls - HALF_LN_2PI
        })
        .sum()
}

pub fn entropy(log_std: &[f64]) -> f64 {
    log_std.iter().map(|ls| ls + 0.5 * (2.0 * PI * std::f64::consts::E).ln()).sum()
}

/// `KL(old ‖ new)` between diagonal Gaussians.
pub fn kl_divergence(old_mean: &[f64], old_log_std: &[f64], new_mean: &[f64], new_log_std: &[f64]) -> f64 {
    old_mean
        .iter()
        .zip(old_log_std)
        .zip(new_mean.iter().zip(new_log_std))
        .map(|((mo, lo), (mn, ln))| {
            let (vo, vn) = ((2.0 * lo).exp(), (2.0 * ln).exp());
            ln - lo + (vo + (mo - mn).powi(2)) / (2.0 * vn) - 0.5
        })
        .sum()
}

/// Log-density per row: `mean: [B, n]`, `log_std: [1, n]`, returns `[B, 1]`.
pub fn log_prob_graph(g: &mut Graph, mean: Var, log_std: Var, actions: &Tensor) -> Result<Var> {
    let n = actions.dims2().1;
    let a = g.input(actions.clone());
    let diff = g.sub(a, mean)?;
    let neg = g.scale(log_std, -1.0);
    let inv_std = g.exp(neg);
    let z = g.mul_row(diff, inv_std)?;
    let z2 = g.square(z);
    let quad = g.row_sum(z2);
    let quad = g.scale(quad, -0.5);
    let ls_sum = g.row_sum(log_std);
    let ls_sum = g.scale(ls_sum, -1.0);
    let lp = g.add_row(quad, ls_sum)?;
    Ok(g.add_scalar(lp, -(n as f64) * HALF_LN_2PI))
}

/// Entropy of the distribution as a graph scalar.
pub fn entropy_graph(g: &mut Graph, log_std: Var) -> Var {
    let n = g.value(log_std).len() as f64;
    let s = g.sum(log_std);
    g.add_scalar(s, n * 0.5 * (2.0 * PI * std::f64::consts::E).ln())
}
