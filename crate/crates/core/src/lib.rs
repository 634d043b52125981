//! Random-coding experiments on the equivalence between lossy source coding
//! and reliable communication over channels defined by a distortion budget.
//!
//! Modules, bottom up:
//!
//! * [`primitives`]: pmfs, sequences, types, distortion, typicality, log-space
//!   arithmetic.
//! * [`channels`]: the channel abstraction, concrete channels, and
//!   Monte-Carlo membership in the distortion-constrained channel set.
//! * [`codecs`]: random channel and source codebooks, typicality decoding
//!   and encoding, trial runners.
//! * [`typecalc`]: exact collision/covering probabilities over joint types
//!   and the sweep over reconstruction types.
//! * [`oracle`]: Blahut–Arimoto and a brute-force operational reference.
//! * [`stack`]: layered codecs over channels.
//! * [`registry`]: channels by name, built from JSON parameters.
//! * [`cli`]: the command-line driver.

pub mod channels;
pub mod cli;
pub mod codecs;
pub mod error;
pub mod oracle;
pub mod primitives;
pub mod randomness;
pub mod registry;
pub mod stack;
pub mod typecalc;

pub use error::{Error, Result};
pub use primitives::{Alphabet, DistortionSpec, Pmf, Sequence, TypeVector, TypicalityParams};
pub use randomness::CommonRandomness;
