//! Half-corpus split ensemble and per-model scoring.

mod scorelog;
mod scorer;
mod splits;

pub use scorelog::{
    ScoreLog, Split, format_score_line, parse_score_line, read_ensemble_log, read_seed_log, validate_logs,
    write_ensemble_log,
};
pub use scorer::{ScorerBackend, ToyScore, ToyScorer, TrainHalf, UnigramModel, run_scorer};
pub use splits::{MembershipMatrix, SplitPlan, make_splits, read_membership_manifest, write_membership_manifest};
