//! OSIRIS: multi-domain RF interference classification for a disaggregated
//! RU/DU physical layer.
//!
//! The crate covers the full pipeline:
//!
//! - [`signal`] — complex baseband primitives: FFT/IFFT, Zadoff-Chu
//!   sequences, OFDM modulation with cyclic prefix.
//! - [`wavegen`] — labeled received-signal synthesis: an SRS pilot through a
//!   tapped-delay fading channel, one of seven interference classes, AWGN,
//!   and extraction of the time/frequency/CSI domain representations into a
//!   binary dataset format (OSDS).
//! - [`nnet`] — a small deterministic neural-network engine with exactly the
//!   layers the classifier needs (strided 1-D convolutions, depthwise
//!   separable convolutions, global average pooling, dense, dropout,
//!   softmax), analytic backprop, parameter/MAC counters, checkpoint I/O
//!   (OSMW).
//! - [`train`] — stratified splits, the two training strategies (random
//!   end-to-end vs. staged domain pre-training), multi-instance selection,
//!   and evaluation reports.
//! - [`splitrun`] — RU/DU split inference over a length-prefixed framed
//!   protocol, latency benchmarking, and compute-share reporting.
//! - [`cli`] — the `osiris` command-line driver tying it all together.
//!
//! Every path is deterministic given its seeds: regenerating a dataset or
//! rerunning a training yields bit-identical artifacts on one platform.

pub mod cli;
pub mod error;
pub mod nnet;
pub mod signal;
pub mod splitrun;
pub mod train;
pub mod wavegen;

pub use error::{Error, Result};
