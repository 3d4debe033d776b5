//! Simulated power traces and fixed-vs-random leakage assessment.
//!
//! Leakage is the Hamming weight of every value a probe would see plus
//! Gaussian noise: architectural writes of the plain emulator, or wire
//! labels and fetched table rows of the garbled evaluator.

mod simulate;
mod stats;
mod traces;

use serde::Serialize;

pub use simulate::{
    run_campaign, simulate_garbled, simulate_unprotected, CampaignConfig, CampaignReport, SigmaResult, Target,
    DEFAULT_WINDOW_STEPS,
};
pub use stats::{tvla_verdict, welch_t, TScoreSeries, TvlaVerdict, WelchAccumulator, TVLA_THRESHOLD};
#[cfg(feature = "squared-n-welch")]
pub use stats::welch_t_squared_n;
pub use traces::{export_traces, import_traces, TraceWriter, TRACE_MAGIC, TRACE_VERSION};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize)]
pub enum LeakageKind {
    HammingWeight,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct LeakageModel {
    pub kind: LeakageKind,
    /// Standard deviation of the additive noise.
    pub noise_sigma: f64,
    /// Garbled traces: samples per evaluated step. Plain traces take one
    /// sample per write instead.
    pub samples_per_step: usize,
}

impl LeakageModel {
    pub fn new(noise_sigma: f64) -> LeakageModel {
        LeakageModel {
            kind: LeakageKind::HammingWeight,
            noise_sigma,
            samples_per_step: 16,
        }
    }

    pub fn validate(&self) -> Result<(), LeakageError> {
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return Err(LeakageError::Config(format!("noise sigma {} must be finite and >= 0", self.noise_sigma)));
        }
        if self.samples_per_step == 0 {
            return Err(LeakageError::Config("samples per step must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize)]
pub enum Population {
    Fixed,
    Random,
}

impl Population {
    pub fn tag(self) -> u8 {
        match self {
            Population::Fixed => 0,
            Population::Random => 1,
        }
    }

    pub fn from_tag(t: u8) -> Option<Population> {
        match t {
            0 => Some(Population::Fixed),
            1 => Some(Population::Random),
            _ => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum InputPolicy {
    Fixed(Vec<u32>),
    /// Fresh uniformly random input words per trace.
    Random,
}

impl InputPolicy {
    pub fn population(&self) -> Population {
        match self {
            InputPolicy::Fixed(_) => Population::Fixed,
            InputPolicy::Random => Population::Random,
        }
    }
}

/// Row-major `n_traces x n_samples` leakage matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct TraceSet {
    pub population: Population,
    pub n_samples: usize,
    pub data: Vec<f32>,
}

impl TraceSet {
    pub fn new(population: Population, n_samples: usize) -> TraceSet {
        TraceSet {
            population,
            n_samples,
            data: Vec::new(),
        }
    }

    pub fn n_traces(&self) -> usize {
        self.data.len().checked_div(self.n_samples).unwrap_or(0)
    }

    pub fn trace(&self, i: usize) -> &[f32] {
        &self.data[i * self.n_samples..(i + 1) * self.n_samples]
    }

    pub fn traces(&self) -> impl Iterator<Item = &[f32]> {
        self.data.chunks_exact(self.n_samples.max(1))
    }

    pub fn push(&mut self, row: &[f32]) -> Result<(), LeakageError> {
        if row.len() != self.n_samples {
            return Err(LeakageError::Shape(format!("row of {} samples in a {}-sample set", row.len(), self.n_samples)));
        }
        if let Some(i) = row.iter().position(|v| !v.is_finite()) {
            return Err(LeakageError::Shape(format!("sample {i} is not finite")));
        }
        self.data.extend_from_slice(row);
        Ok(())
    }
}

#[derive(Debug, thiserror::Error)]
pub enum LeakageError {
    #[error("invalid leakage configuration: {0}")]
    Config(String),
    #[error("trace shape: {0}")]
    Shape(String),
    #[error("Welch test needs at least two traces per population, got {n1} and {n2}")]
    TooFew { n1: u64, n2: u64 },
    #[error("trace file header at byte {offset}: {message}")]
    Header { offset: u64, message: String },
    #[error("trace file truncated at byte {offset}, expected {expected} bytes")]
    Truncated { offset: u64, expected: u64 },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Mips(#[from] crate::mips::MipsError),
    #[error(transparent)]
    Garble(#[from] crate::garble::GarbleError),
}
