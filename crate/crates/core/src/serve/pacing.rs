use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

/// Sleep-to-deadline pacing. A late tick re-anchors the schedule instead of
/// bursting to catch up.
#[derive(Debug)]
pub struct Pacer {
    period: Duration,
    realtime: bool,
    deadline: Option<Instant>,
    last: Option<Instant>,
    intervals: Vec<f64>,
}

impl Pacer {
    pub fn new(period: Duration, realtime: bool) -> Self {
        Pacer {
            period,
            realtime,
            deadline: None,
            last: None,
            intervals: Vec::new(),
        }
    }

    pub fn period(&self) -> Duration {
        self.period
    }

    /// Blocks until the next tick is due and records the interval since the
    /// previous one.
    pub fn wait(&mut self) {
        if self.realtime {
            let now = Instant::now();
            let deadline = self.deadline.unwrap_or(now + self.period);
            if deadline > now {
                std::thread::sleep(deadline - now);
            }
            let now = Instant::now();
            self.deadline = Some(if now > deadline + self.period {
                now + self.period
            } else {
                deadline + self.period
            });
        }
        let now = Instant::now();
        if let Some(prev) = self.last {
            self.intervals.push((now - prev).as_secs_f64());
        }
        self.last = Some(now);
    }

    /// Forgets the schedule, e.g. after a pause.
    pub fn restart(&mut self) {
        self.deadline = None;
        self.last = None;
    }

    pub fn intervals(&self) -> &[f64] {
        &self.intervals
    }

    pub fn stats(&self) -> JitterStats {
        JitterStats::from_intervals(&self.intervals, self.period.as_secs_f64())
    }
}

/// Tick-interval statistics, seconds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct JitterStats {
    pub count: usize,
    pub target: f64,
    pub mean: f64,
    pub std: f64,
    pub max_abs_deviation: f64,
    /// 99th percentile of `|interval - target|`.
    pub p99_abs_deviation: f64,
}

impl JitterStats {
    pub fn from_intervals(intervals: &[f64], target: f64) -> Self {
        let n = intervals.len();
        if n == 0 {
            return JitterStats {
                count: 0,
                target,
                mean: f64::NAN,
                std: f64::NAN,
                max_abs_deviation: f64::NAN,
                p99_abs_deviation: f64::NAN,
            };
        }
        let mean = intervals.iter().sum::<f64>() / n as f64;
        let var = intervals.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / n as f64;
        let mut dev: Vec<f64> = intervals.iter().map(|d| (d - target).abs()).collect();
        dev.sort_by(f64::total_cmp);
        let p99 = dev[((n as f64 * 0.99).ceil() as usize).clamp(1, n) - 1];
        JitterStats {
            count: n,
            target,
            mean,
            std: var.sqrt(),
            max_abs_deviation: dev[n - 1],
            p99_abs_deviation: p99,
        }
    }

    /// p99 deviation as a fraction of the target period.
    pub fn relative_jitter(&self) -> f64 {
        self.p99_abs_deviation / self.target
    }
}
