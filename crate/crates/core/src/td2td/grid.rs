use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::command::FootstepCommand;
use crate::error::{Error, Result};

/// Square grid of Cartesian step offsets in the heading frame.
///
/// Cell `(i, j)` has centre `(x_i, y_j)` with both axes a uniform
/// `size`-point linspace over `[-extent, extent]`. Values are stored
/// row-major with `i` (forward offset) as the row.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GridSpec {
    pub size: usize,
    pub extent: f64,
    /// Cells farther than this from the origin are masked out.
    pub radius: f64,
}

impl Default for GridSpec {
    fn default() -> Self {
        GridSpec {
            size: 30,
            extent: 0.8,
            radius: 0.8,
        }
    }
}

impl GridSpec {
    pub fn validate(&self) -> Result<()> {
        if self.size < 2 || !(self.extent > 0.0) || !(self.radius > 0.0) {
            return Err(Error::config(format!("degenerate grid {self:?}")));
        }
        Ok(())
    }

    pub fn cells(&self) -> usize {
        self.size * self.size
    }

    pub fn coordinate(&self, k: usize) -> f64 {
        -self.extent + 2.0 * self.extent * k as f64 / (self.size - 1) as f64
    }

    pub fn coordinates(&self) -> Vec<f64> {
        (0..self.size).map(|k| self.coordinate(k)).collect()
    }

    pub fn index(&self, i: usize, j: usize) -> usize {
        i * self.size + j
    }

    pub fn cell_center(&self, cell: usize) -> [f64; 2] {
        [self.coordinate(cell / self.size), self.coordinate(cell % self.size)]
    }

    pub fn command(&self, cell: usize) -> FootstepCommand {
        let [x, y] = self.cell_center(cell);
        FootstepCommand::from_cartesian(x, y)
    }

    pub fn is_valid(&self, cell: usize) -> bool {
        let [x, y] = self.cell_center(cell);
        x.hypot(y) <= self.radius
    }

    pub fn mask(&self) -> Vec<bool> {
        (0..self.cells()).map(|c| self.is_valid(c)).collect()
    }

    pub fn valid_cells(&self) -> Vec<usize> {
        (0..self.cells()).filter(|&c| self.is_valid(c)).collect()
    }
}

/// Step error per grid cell. Masked cells and cells whose measurement failed
/// hold NaN; masked cells are never part of a statistic.
#[derive(Debug, Clone, PartialEq)]
pub struct ReachabilityGrid {
    pub spec: GridSpec,
    pub errors: Vec<f64>,
    pub mask: Vec<bool>,
}

impl ReachabilityGrid {
    pub fn new(spec: GridSpec, errors: Vec<f64>) -> Result<Self> {
        spec.validate()?;
        if errors.len() != spec.cells() {
            return Err(Error::shape(format!("grid needs {} cells, got {}", spec.cells(), errors.len())));
        }
        if errors.iter().any(|&e| e < 0.0) {
            return Err(Error::input("step errors must be non-negative"));
        }
        Self::from_prediction(spec, errors)
    }

    /// Wraps model output: masked cells become NaN, other values are kept as
    /// they are (a regression head may dip slightly below zero).
    pub fn from_prediction(spec: GridSpec, values: Vec<f64>) -> Result<Self> {
        spec.validate()?;
        if values.len() != spec.cells() {
            return Err(Error::shape(format!("grid needs {} cells, got {}", spec.cells(), values.len())));
        }
        let mask = spec.mask();
        let errors = values
            .into_iter()
            .zip(&mask)
            .map(|(e, &m)| if m { e } else { f64::NAN })
            .collect();
        Ok(ReachabilityGrid { spec, errors, mask })
    }

    /// Grid with every valid cell set to `value`.
    pub fn filled(spec: GridSpec, value: f64) -> Result<Self> {
        Self::new(spec, vec![value; spec.cells()])
    }

    pub fn valid_count(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }

    /// Valid cells with a measurement.
    pub fn measured(&self) -> impl Iterator<Item = f64> + '_ {
        self.errors
            .iter()
            .zip(&self.mask)
            .filter(|(e, &m)| m && e.is_finite())
            .map(|(e, _)| *e)
    }

    /// Valid cells whose measurement failed.
    pub fn missing_count(&self) -> usize {
        self.errors
            .iter()
            .zip(&self.mask)
            .filter(|(e, &m)| m && !e.is_finite())
            .count()
    }

    /// Plain-text matrix, one grid row per line, `nan` for masked or missing
    /// cells.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for i in 0..self.spec.size {
            let row: Vec<String> = (0..self.spec.size)
                .map(|j| {
                    let e = self.errors[self.spec.index(i, j)];
                    if e.is_finite() {
                        format!("{e:.9}")
                    } else {
                        "nan".into()
                    }
                })
                .collect();
            let _ = writeln!(s, "{}", row.join(" "));
        }
        s
    }

    pub fn from_text(spec: GridSpec, text: &str) -> Result<Self> {
        let mut errors = Vec::with_capacity(spec.cells());
        for tok in text.split_whitespace() {
            let v = if tok.eq_ignore_ascii_case("nan") {
                f64::NAN
            } else {
                tok.parse::<f64>()
                    .map_err(|_| Error::format(format!("bad grid value '{tok}'")))?
            };
            errors.push(v);
        }
        Self::new(spec, errors)
    }
}

/// Number of valid cells with error strictly below `threshold`.
pub fn reachable_set_size(grid: &ReachabilityGrid, threshold: f64) -> usize {
    grid.errors
        .iter()
        .zip(&grid.mask)
        .filter(|(e, &m)| m && **e < threshold)
        .count()
}

pub const REACHABLE_THRESHOLD: f64 = 0.15;
