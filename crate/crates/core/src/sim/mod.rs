//! Monte Carlo execution of the prepare-and-measure protocol against a
//! depolarizing channel.

mod bits;
mod protocol;
mod toeplitz;

pub use bits::BitString;
pub use protocol::{
    batch_run, run_protocol, run_protocol_stream, BatchSummary, EcMode, PeScope, RunTranscript, SimOptions,
};
pub use toeplitz::{toeplitz_hash, ToeplitzHasher};
