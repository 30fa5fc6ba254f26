//! Off-policy evaluation and artifact emission.

pub mod evaluate;
pub mod ncis;
pub mod report;

pub use evaluate::{
    evaluate, evaluate_policy, evaluate_uniform, rollout_greedy, MetricsRecord, TrialMetrics,
};
pub use ncis::{ncis, TrajectoryRecord, TrajectoryStep};
pub use report::{read_metrics, report, ReportOutput};
