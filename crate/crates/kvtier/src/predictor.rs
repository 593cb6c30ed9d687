//! Bayesian reuse prediction.
//!
//! Every (block type, transition type) pair gets an independent Beta
//! posterior over "this block will be accessed again", seeded with the
//! uniform Beta(1, 1) prior. Alongside the posterior, each cell keeps a
//! bounded window of the most recent outcomes; the published probability
//! blends the two by a confidence weight `n / (n + pivot)` that grows with
//! the cell's observation count.
//!
//! The window term dominates while a cell is young and keeps the posterior
//! honest: long-run counts alone would need thousands of observations to
//! walk back a regime change, but the posterior itself also drifts, so a
//! workload whose reuse collapses is reflected after one window's worth of
//! evidence.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::block::{BlockType, TransitionType};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PredictorParams {
    /// Outcomes remembered per cell for the recency estimate.
    pub window_capacity: usize,
    /// Observation count at which posterior and window carry equal weight.
    pub confidence_pivot: f64,
    /// Symmetric prior pseudo-counts: cells start at Beta(s, s).
    #[serde(default = "default_prior")]
    pub prior_strength: f64,
}

fn default_prior() -> f64 {
    1.0
}

impl Default for PredictorParams {
    fn default() -> Self {
        PredictorParams {
            window_capacity: 1000,
            confidence_pivot: 20.0,
            prior_strength: 1.0,
        }
    }
}

#[derive(Debug, Clone)]
struct Cell {
    alpha: f64,
    beta: f64,
    window: VecDeque<bool>,
    window_ones: usize,
}

impl Cell {
    fn new(prior: f64) -> Self {
        Cell { alpha: prior, beta: prior, window: VecDeque::new(), window_ones: 0 }
    }

    fn observations(&self, prior: f64) -> f64 {
        self.alpha + self.beta - 2.0 * prior
    }

    fn posterior_mean(&self) -> f64 {
        self.alpha / (self.alpha + self.beta)
    }
}

#[derive(Debug, Clone)]
pub struct ReusePredictor {
    params: PredictorParams,
    cells: Vec<Cell>, // indexed by block_type.index() * 4 + transition.index()
}

/// Serializable image of the predictor, cell order fixed by the stable
/// `(block_type, transition_type)` index pair.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PredictorSnapshot {
    pub params: PredictorParams,
    pub cells: Vec<CellSnapshot>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CellSnapshot {
    pub block_type: BlockType,
    pub transition_type: TransitionType,
    pub alpha: f64,
    pub beta: f64,
    pub window: Vec<bool>,
}

impl ReusePredictor {
    #[must_use]
    pub fn new(params: PredictorParams) -> Self {
        ReusePredictor {
            params,
            cells: (0..16).map(|_| Cell::new(params.prior_strength)).collect(),
        }
    }

    fn cell_index(block_type: BlockType, transition: TransitionType) -> usize {
        block_type.index() * TransitionType::ALL.len() + transition.index()
    }

    /// Record one outcome for the pair: did the block see another access?
    pub fn observe(&mut self, block_type: BlockType, transition: TransitionType, reused: bool) {
        let cell = &mut self.cells[Self::cell_index(block_type, transition)];
        if reused {
            cell.alpha += 1.0;
        } else {
            cell.beta += 1.0;
        }
        cell.window.push_back(reused);
        cell.window_ones += usize::from(reused);
        if cell.window.len() > self.params.window_capacity {
            let old = cell.window.pop_front().expect("window non-empty");
            cell.window_ones -= usize::from(old);
        }
    }

    #[must_use]
    pub fn observation_count(&self, block_type: BlockType, transition: TransitionType) -> f64 {
        self.cells[Self::cell_index(block_type, transition)]
            .observations(self.params.prior_strength)
    }

    /// Long-run posterior mean of the reuse probability.
    #[must_use]
    pub fn posterior_mean(&self, block_type: BlockType, transition: TransitionType) -> f64 {
        self.cells[Self::cell_index(block_type, transition)].posterior_mean()
    }

    /// Weight of the posterior in the blend: `n / (n + pivot)`.
    #[must_use]
    pub fn confidence(&self, block_type: BlockType, transition: TransitionType) -> f64 {
        let n = self.observation_count(block_type, transition);
        n / (n + self.params.confidence_pivot)
    }

    /// Reuse fraction over the recent window; an empty window defers to the
    /// posterior so the blend stays well-defined from the first call.
    #[must_use]
    pub fn window_frequency(&self, block_type: BlockType, transition: TransitionType) -> f64 {
        let cell = &self.cells[Self::cell_index(block_type, transition)];
        if cell.window.is_empty() {
            return cell.posterior_mean();
        }
        cell.window_ones as f64 / cell.window.len() as f64
    }

    /// Blended reuse probability in [0, 1].
    #[must_use]
    pub fn predict(&self, block_type: BlockType, transition: TransitionType) -> f64 {
        let c = self.confidence(block_type, transition);
        c * self.posterior_mean(block_type, transition)
            + (1.0 - c) * self.window_frequency(block_type, transition)
    }

    #[must_use]
    pub fn snapshot(&self) -> PredictorSnapshot {
        let mut cells = Vec::with_capacity(16);
        for bt in BlockType::ALL {
            for tt in TransitionType::ALL {
                let cell = &self.cells[Self::cell_index(bt, tt)];
                cells.push(CellSnapshot {
                    block_type: bt,
                    transition_type: tt,
                    alpha: cell.alpha,
                    beta: cell.beta,
                    window: cell.window.iter().copied().collect(),
                });
            }
        }
        PredictorSnapshot { params: self.params, cells }
    }

    pub fn restore(snapshot: PredictorSnapshot) -> Result<Self, String> {
        if snapshot.params.window_capacity == 0 {
            return Err("window_capacity must be positive".into());
        }
        if snapshot.params.prior_strength <= 0.0 {
            return Err("prior_strength must be positive".into());
        }
        let prior = snapshot.params.prior_strength;
        let mut p = ReusePredictor::new(snapshot.params);
        for cs in snapshot.cells {
            if cs.alpha < prior || cs.beta < prior {
                return Err(format!(
                    "cell ({:?}, {:?}): Beta counts start at the prior {}, got ({}, {})",
                    cs.block_type, cs.transition_type, prior, cs.alpha, cs.beta
                ));
            }
            if cs.window.len() > p.params.window_capacity {
                return Err(format!(
                    "cell ({:?}, {:?}): window longer than capacity",
                    cs.block_type, cs.transition_type
                ));
            }
            let cell = &mut p.cells[Self::cell_index(cs.block_type, cs.transition_type)];
            cell.alpha = cs.alpha;
            cell.beta = cs.beta;
            cell.window_ones = cs.window.iter().filter(|&&r| r).count();
            cell.window = cs.window.into();
        }
        Ok(p)
    }

    pub fn dump_json(&self) -> String {
        serde_json::to_string_pretty(&self.snapshot()).expect("snapshot serializes")
    }

    pub fn load_json(text: &str) -> Result<Self, String> {
        let snap: PredictorSnapshot = serde_json::from_str(text).map_err(|e| e.to_string())?;
        Self::restore(snap)
    }
}
