//! Unrolled ADMM reconstruction network.

pub mod network;
pub mod prox;

pub use network::{
    backward, data_fidelity, f_update, forward_with_tape, initialize, reconstruct, reconstruct_states, run_stage, u_update,
    AdmmState, MaskGradRequest, NetworkGrads, StageGrads, StageParams, Tape,
};
pub use prox::{soft_threshold_dct, tv_chambolle, ConvDenoiser, ProximalKind, ProximalSpec};
