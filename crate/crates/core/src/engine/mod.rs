//! Stage orchestration for prior-, proposal- and prior-proposal-recursive fits.

mod kernel;
mod online;
mod pool;
mod sample;
mod stage;

pub use kernel::{
    initial_state, initial_state_uniform, mh_accept, pprb_mh_step, pprb_mh_step_recompute,
    proposal_rb_mh_step, ChainState,
};
pub use online::{online_update, online_update_with_streams, PredictiveExtension};
pub use pool::{parallel_map, prefetch_loglik, prefetch_rows, ProposalPool, ResampleStrategy};
pub use sample::{SampleMatrix, SampleMeta};
pub use stage::{
    run_pool_chain, run_pprb, run_stage, PipelineOutput, StageConfig, StageDiagnostics, StageInput,
    StageOutput, StagedModel,
};
