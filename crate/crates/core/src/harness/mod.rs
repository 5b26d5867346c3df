//! Datasets, Monte Carlo BER evaluation, experiment sweeps and reports.

mod eval;
mod experiment;
mod report;
mod sim;

pub use eval::{
    binomial_stderr, curves_to_csv, evaluate_ber, read_curves_csv, write_curves_csv, BerCurve, BerRecord, BitDetector,
    ClassicalDetector, DetectorKind, EvalPlan, CSV_COLUMNS,
};
pub use experiment::{
    build_dataset, builtin_names, builtin_suite, default_snr_grid, evaluate_spec, evaluate_with_bank, plot_script,
    run_experiment, train_detector, train_on, DatasetFile, ExperimentSpec, FrameRecord, Manifest, ResultBundle,
    TrainingCache, TrainingSpec, DATASET_VERSION, MANIFEST_FILE, PARTIAL_FILE, PLOT_FILE, RESULTS_FILE,
};
pub use report::{crossing_snr, non_monotone_segments, report, report_at, Crossing, Report, ReportRow, REPORT_THRESHOLDS};
pub use sim::{generate_dataset, train_split, LinkModel, SimFrame, TrainingSnr};
