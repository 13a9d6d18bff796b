//! Policy evaluation, success statistics, demonstration collection and the
//! scripted expert.

pub mod collect;
pub mod episode;
pub mod error;
pub mod evaluate;
pub mod expert;
pub mod stats;

pub use collect::{
    collect_demos, collect_from_failures, collect_from_world, demo_start_poses, evaluation_poses, CollectConfig, CollectedDemo,
    SyncSummary, AUGMENTATION_TAG, DEMO_POSE_POOL, DEMO_POSE_SEED, EVAL_POSE_SEED,
};
pub use episode::{
    episode_seed, evaluate_episode, geometric_success, run_episode, start_poses, Controller, CouplingConfig, EpisodeOutcome,
    EpisodeRecord, EvalConfig, EvalMode, ExpertController, Plan, PolicyController, SuccessRule, Tolerance,
};
pub use error::EvalError;
pub use evaluate::{
    checkpoint_sweep, compare_representations, evaluate, evaluate_checkpoint, harvest_failures, load_json, save_json, summary_csv, ComparisonReport,
    FailureState, RepresentationEntry, DEDUP_ANGLE, DEDUP_POSITION, RepresentationPlan, SuccessReport, SweepEntry, SweepReport, CSV_HEADER,
};
pub use expert::{ExpertConfig, ScriptedExpert};
pub use stats::{confidence_interval, non_inferiority, spearman, success_rate, NonInferiority};
