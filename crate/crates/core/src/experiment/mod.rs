//! Experiment configs, design runs, evaluation reports and ablation grids.

pub mod ablation;
pub mod config;
pub mod run;

pub use ablation::{ablation_csv, cells, mean_std, run_ablation, AblationAxis, AblationRow, Cell, CellScore, ABLATION_HEADER};
pub use config::{
    AblationConfig, ApertureConfig, Cubes, DataConfig, Dataset, ExperimentConfig, PhantomSpec, ProximalConfig, SplitConfig,
};
pub use run::{
    evaluate, load_design, metrics_csv, run_design, save_design, summarize, train_on, DesignOutcome, MetricsRow, METRICS_HEADER,
    TEST_STREAM, TRAIN_LOG_FILE,
};
