//! Gradual magnitude pruning.

pub mod allocation;
pub mod mask;
pub mod schedule;

pub use allocation::{
    allocate_sparsity, er_cnn_keep_fraction, er_mlp_keep_fraction, erdos_renyi_keep, Allocation,
    DistributionStrategy,
};
pub use mask::{apply_mask, prune_step, LayerMask, PruningMask};
pub use schedule::ScheduleConfig;
