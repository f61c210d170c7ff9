//! Transmit design for wireless information and energy transfer (WIET) in a
//! K-user MISO interference channel.
//!
//! The crate provides five transmission schemes (ideal simultaneous
//! decoding/harvesting, time-division mode switching, two-user TDMA, TDMA with
//! deterministic energy signals, and power splitting), the small convex solver
//! they share, brute-force verifiers, and a seeded Monte-Carlo harness.

pub mod channel;
pub mod closedform;
pub mod harness;
pub mod linalg;
pub mod oracle;
pub mod schemes;
pub mod subsolver;

pub use channel::{ChannelSet, Evaluation, GenConfig};
pub use linalg::{CVec, HermMat, C64};
pub use schemes::{Scheme, SchemeError, SchemeOptions, Strategy};
pub use subsolver::{ConvexProgram, SolveReport, SolveStatus, SolverOptions};
