//! Joint pretraining, few-shot fine-tuning, evaluation, ablations and the
//! mask-ratio sweep.

mod config;
mod experiment;
mod loops;
mod mask;

pub use config::{Ablation, TrainConfig};
pub use experiment::{
    ablation_suite, finetune_downstream, mask_sweep, run_grid, summarize, CheckpointRecord, Corpus, FinetuneCurve, ResultRow,
    RunReport, SplitRecord, SummaryRow, SPLIT_BEST, SPLIT_REPORT, SWEEP_ALPHAS,
};
pub use loops::{
    accuracy_from_logits, evaluate, finetune, model_config, prepare_downstream, pretrain, DownstreamSplit,
    EpochLoss, FinetuneEpoch, FinetuneOutcome, PretrainReport,
};
pub use mask::{derive_rng, mask_size, sample_mask_set};
