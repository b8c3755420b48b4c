//! Partitioning, metrics, disturbance stratification and report files.

mod evaluate;
mod grid;
mod metrics;
mod partition;
mod report;
mod stratify;

pub use evaluate::{evaluate_model, AnpPredictor, EvalPoint, GbqPredictor, Method, Predictor, QrfPredictor, SeedEvaluation};
pub use grid::{expanded_context, predict_grid, write_grid, GridCell, GridSpec, GRID_CSV};
pub use metrics::{accuracy_metrics, coverage, r2, z_stats, Accuracy, MetricsReport};
pub use partition::{apply_buffer, partition_tiles, role_counts, temporal_holdout, tile_context, HoldoutSplit, Role, TilePartition};
pub use report::{
    mean_std, stratum_cell, table1, table1_csv, table1_labels, table2, table2_csv, write_reports, Cell, MethodSummary,
    StratumCell, Table1, Table2, TABLE1_CSV, TABLE1_JSON, TABLE2_CSV, TABLE2_JSON,
};
pub use stratify::{
    disturbance_delta, pooled_stratified_r2, tile_disturbance, DeltaPooling, DisturbanceRecord, StratifiedPair, Stratum,
};
