//! Experiment orchestration and diagnostics.

pub mod config;
mod diagnostics;
mod experiment;

pub use config::{ExperimentConfig, Mode, ReferenceSignal, RetrainTrigger, UncertaintyKind, Units};
pub use diagnostics::{
    high_frequency_energy, ideal_weight_diagnostics, pe_spectrum, total_variation, write_pe_csv, Binned,
    ComparisonReport, DiagnosticsReport, EpochFit, IdealWeightReport, PEWindowReport, PeSummary, PhaseStats,
};
pub use experiment::{run_experiment, AdaptiveLog, Experiment, RetrainEvent, RunFailure, RunOutput};

use crate::error::HarnessError;
use crate::scalar::Real;

/// Both runs of a comparison and their joint report.
#[derive(Debug)]
pub struct Comparison<T: Real> {
    pub a: RunOutput<T>,
    pub b: RunOutput<T>,
    pub report: ComparisonReport,
}

/// Runs both configs and reports `a − b` deltas. The configs may differ only
/// in mode and learning-side settings, never in plant, gains, seed or
/// reference schedule.
pub fn compare_runs<T: Real>(a: &ExperimentConfig, b: &ExperimentConfig) -> Result<Comparison<T>, Box<RunFailure<T>>> {
    if !a.same_setup(b) {
        return Err(Box::new(RunFailure {
            error: HarnessError::Config("compared runs must share plant, gains, seed and reference".into()),
            log: crate::dynamics::TrajectoryLog::new(0, 0),
            adaptive: AdaptiveLog::new(0, 0),
            retrains: Vec::new(),
        }));
    }
    let ra = run_experiment::<T>(a)?;
    let rb = run_experiment::<T>(b)?;
    let report = ComparisonReport::new(ra.report.clone(), rb.report.clone());
    Ok(Comparison { a: ra, b: rb, report })
}

/// Per-window excitation of the sampled features of a finished run.
pub fn run_pe_spectrum<T: Real>(
    run: &RunOutput<T>,
    window: f64,
    stride: f64,
    threshold: f64,
) -> Result<Vec<PEWindowReport<T>>, HarnessError> {
    pe_spectrum(
        &run.adaptive.t,
        &run.adaptive.phi,
        T::lit(window),
        T::lit(stride),
        T::lit(threshold),
    )
}

/// Ideal-weight fit of a finished run against its logged `Δ`.
pub fn run_ideal_weights<T: Real>(run: &RunOutput<T>) -> Result<IdealWeightReport, HarnessError> {
    ideal_weight_diagnostics(
        &run.adaptive.t,
        &run.adaptive.phi_mean,
        &run.log.delta,
        &run.adaptive.sigma,
        &run.adaptive.weights,
    )
}
