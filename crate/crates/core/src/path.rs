use std::sync::Arc;

use crate::hilbert::{SpaceSpec, StateVector};
use crate::noise::TimeGrid;

/// Per-step diagnostics recorded by the solvers.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct StepDiagnostics {
    /// Resolvent iterations used at each step (length `n_steps`).
    pub resolvent_iterations: Vec<u32>,
    /// Largest `||X_t|| / bound(t)` seen against the a-priori bound of the inner equation.
    pub apriori_max_ratio: f64,
}

/// A state trajectory on a time grid, `states[n]` at `grid.time(n)`.
///
/// `increments[m]` holds the martingale increment taken over step `m` (empty if the
/// producing routine did not record one).
#[derive(Debug, Clone, PartialEq)]
pub struct SimulationPath {
    pub grid: TimeGrid,
    pub space: Arc<SpaceSpec>,
    pub states: Vec<Vec<f64>>,
    pub increments: Vec<Vec<f64>>,
    pub diagnostics: StepDiagnostics,
}

impl SimulationPath {
    pub fn new(grid: TimeGrid, space: Arc<SpaceSpec>, states: Vec<Vec<f64>>) -> Self {
        SimulationPath {
            grid,
            space,
            states,
            increments: Vec::new(),
            diagnostics: StepDiagnostics::default(),
        }
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn state(&self, n: usize) -> StateVector {
        StateVector::new(self.states[n].clone(), self.space.clone())
            .expect("path states share the path space")
    }

    pub fn last(&self) -> StateVector {
        self.state(self.states.len() - 1)
    }

    /// `sup_n ||self_n - other_n||`.
    pub fn sup_distance(&self, other: &SimulationPath) -> f64 {
        sup_distance(&self.space, &self.states, &other.states)
    }

    pub fn sup_norm_sq(&self) -> f64 {
        self.states
            .iter()
            .map(|s| self.space.norm_sq(s))
            .fold(0.0, f64::max)
    }
}

pub(crate) fn sup_distance(space: &SpaceSpec, a: &[Vec<f64>], b: &[Vec<f64>]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| space.dist_sq(x, y))
        .fold(0.0, f64::max)
        .sqrt()
}
