//! Monte-Carlo fan-out of identification runs with reproducible seeds.
//!
//! Run `i` under master seed `s` gets its own seed from stream `i` of `s`.
//! Inside a run, stream 0 drives the excitation, stream 1 the plant noise
//! and [`STREAM_INIT`](crate::ident::STREAM_INIT) the parameter
//! initialization, so variants that share a seed see identical data.

use rand::RngCore;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::ident::{identify, RunConfig, RunTrace};
use crate::plant::{gen_input, rng_stream, DataRecord, InputGenSpec, PlantSpec};

pub const STREAM_INPUT: u64 = 0;
pub const STREAM_PLANT: u64 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSpec {
    pub plant: PlantSpec,
    pub input: InputGenSpec,
    pub run: RunConfig,
}

impl ExperimentSpec {
    pub fn validate(&self) -> Result<()> {
        self.plant.validate()?;
        self.input.validate()?;
        self.run.validate()
    }
}

pub fn run_seed(master_seed: u64, run_index: u64) -> u64 {
    rng_stream(master_seed, run_index).next_u64()
}

pub fn generate_data(plant: &PlantSpec, input: &InputGenSpec, horizon: usize, seed: u64) -> Result<Vec<DataRecord>> {
    let u = gen_input(input, &mut rng_stream(seed, STREAM_INPUT), horizon);
    plant.simulate(&u, &mut rng_stream(seed, STREAM_PLANT))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunOutcome {
    pub run_index: usize,
    pub seed: u64,
    pub trace: RunTrace,
}

pub fn run_one(spec: &ExperimentSpec, run_index: usize, master_seed: u64) -> Result<RunOutcome> {
    let seed = run_seed(master_seed, run_index as u64);
    let data = generate_data(&spec.plant, &spec.input, spec.run.horizon, seed)?;
    let cfg = RunConfig { seed, ..spec.run.clone() };
    let trace = identify(&cfg, &data)?;
    Ok(RunOutcome { run_index, seed, trace })
}

/// Runs `n_runs` independent identifications on the current rayon pool;
/// results come back in run order.
pub fn monte_carlo(spec: &ExperimentSpec, n_runs: usize, master_seed: u64) -> Result<Vec<RunOutcome>> {
    spec.validate()?;
    (0..n_runs).into_par_iter().map(|i| run_one(spec, i, master_seed)).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SampleStats {
    pub mean: f64,
    pub std_err: f64,
    pub min: f64,
    pub max: f64,
}

impl SampleStats {
    pub fn of(xs: &[f64]) -> Self {
        let n = xs.len() as f64;
        let mean = xs.iter().sum::<f64>() / n;
        let var = if xs.len() > 1 { xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0) } else { 0.0 };
        Self {
            mean,
            std_err: (var / n).sqrt(),
            min: xs.iter().copied().fold(f64::INFINITY, f64::min),
            max: xs.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        }
    }
}
