//! Path generation: hidden chain, returns, expert signals, the filter, and
//! the restricted state SDE (plain, tapered and regularized) with shared noise.

mod coefficients;
mod export;
mod market;
mod state;

use serde::{Deserialize, Serialize};

use crate::model::SimplexPoint;

pub use coefficients::SdeCoefficients;
pub use export::{read_binary, write_binary, write_bundles_csv};
pub use market::{
    bayes_update, filter_step, grid_steps, simulate_market, simulate_market_path, simulate_market_paths,
    FilterStep,
};
pub use state::{
    run_state, sde_step, simulate_coupled, sup_sq_distance, CoupledSample, CoupledSpec, Mode, NoiseRecord,
    StateRun, StepNoise,
};

/// An expert opinion: arrival time, the chain state at that time, the signal
/// value and the uniform mark it was generated from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SignalEvent<T> {
    pub time: T,
    pub state: usize,
    pub z: Vec<T>,
    pub u: Vec<T>,
}

/// Regularized state trajectory for one value of `m`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegularizedPath<T> {
    pub m: T,
    pub path: Vec<Vec<T>>,
}

/// Sample path data. Market simulation fills the chain, return, signal and
/// filter series; coupled state simulation fills the state series and the
/// noise record that drives them.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PathBundle<T> {
    pub time_grid: Vec<T>,
    /// Chain state at each grid time.
    pub chain_path: Vec<usize>,
    /// Return increment over each grid step.
    pub return_path: Vec<Vec<T>>,
    pub signal_events: Vec<SignalEvent<T>>,
    /// Filter at each grid time.
    pub filter_path: Vec<SimplexPoint<T>>,
    pub state_path: Vec<Vec<T>>,
    pub state_path_regularized: Vec<RegularizedPath<T>>,
    pub noise_record: Option<NoiseRecord<T>>,
    /// Steps where the filter had negative components clipped.
    pub filter_repairs: usize,
    /// Largest `|sum p - 1|` before repair.
    pub max_sum_defect: T,
    /// Steps whose pre-repair sum defect was at most `1e-10`.
    pub steps_sum_preserved: usize,
}

impl<T: num_traits::Zero> Default for PathBundle<T> {
    fn default() -> Self {
        Self {
            time_grid: Vec::new(),
            chain_path: Vec::new(),
            return_path: Vec::new(),
            signal_events: Vec::new(),
            filter_path: Vec::new(),
            state_path: Vec::new(),
            state_path_regularized: Vec::new(),
            noise_record: None,
            filter_repairs: 0,
            max_sum_defect: T::zero(),
            steps_sum_preserved: 0,
        }
    }
}
