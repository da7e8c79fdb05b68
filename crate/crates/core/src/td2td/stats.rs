use serde::{Deserialize, Serialize};

/// Reachable-set statistics for one speed bin.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VelocityBin {
    pub lower: f64,
    /// `f64::INFINITY` for the overflow bin.
    pub upper: f64,
    pub count: usize,
    pub median: f64,
    pub q1: f64,
    pub q3: f64,
}

impl VelocityBin {
    pub fn iqr(&self) -> f64 {
        self.q3 - self.q1
    }
}

/// Default edges: 0.25 m/s wide over `[0, 1.5]`.
pub fn default_speed_edges() -> Vec<f64> {
    (0..=6).map(|k| k as f64 * 0.25).collect()
}

/// Linear-interpolated quantile of sorted data.
pub fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

/// Median and quartiles of set size per speed bin. Bins are `[e_k, e_k+1)`;
/// speeds at or past the last edge go to an overflow bin, speeds below the
/// first edge to the first bin. Empty bins are omitted.
pub fn bin_by_velocity(samples: &[(f64, usize)], edges: &[f64]) -> Vec<VelocityBin> {
    if edges.len() < 2 {
        return Vec::new();
    }
    let nb = edges.len();
    let mut groups: Vec<Vec<f64>> = vec![Vec::new(); nb];
    for &(speed, size) in samples {
        let k = edges[1..].iter().take_while(|&&e| speed >= e).count();
        groups[k].push(size as f64);
    }
    groups
        .into_iter()
        .enumerate()
        .filter(|(_, g)| !g.is_empty())
        .map(|(k, mut g)| {
            g.sort_by(f64::total_cmp);
            VelocityBin {
                lower: edges[k],
                upper: edges.get(k + 1).copied().unwrap_or(f64::INFINITY),
                count: g.len(),
                median: quantile(&g, 0.5),
                q1: quantile(&g, 0.25),
                q3: quantile(&g, 0.75),
            }
        })
        .collect()
}
