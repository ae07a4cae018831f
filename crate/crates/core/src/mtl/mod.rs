//! Multi-task training: sharing plans, the weighted objective, the
//! main + auxiliary schedule, Adam with dev-driven halving, adaptation and
//! checkpoints.

mod checkpoint;
mod objective;
mod optim;
mod plan;
mod schedule;
mod train;

pub use checkpoint::{Checkpoint, CheckpointMeta, DiscriminatorMeta, Restored};
pub use objective::{mtl_objective, validate_tasks, Objective, SentencePair, TaskBatch, TaskData, TaskTerm};
pub use optim::Adam;
pub use plan::{build_mtl_models, MultiTaskModel, SharingPlan, TaskSharing};
pub use schedule::{EpochSampler, ScheduledStep, Scheduler};
pub use train::{
    adapt, record_dev_perplexity, AdversarialConfig, EpochRecord, ModelPhase, Provenance, StepReport, TrainConfig, TrainOutcome,
    Trainer,
};
