//! Monte Carlo time-tag synthesis: photon-pair and noise sources, a lossy
//! jittery detection chain, and the binary time-tag file format.

mod io;
mod model;
mod sampler;
mod synth;

pub use io::{read_stream, write_stream, Channel, TagHeader, TagReader, TimeTagRecord, TimeTagStream, PulseGroups};
pub use model::{thermal_mode_weights, DetectionChain, PairStatistics, SourceModel};
pub use sampler::JtiSampler;
pub use synth::{synthesize_labeled, synthesize_run, write_run, write_run_with_metadata, Origin};
