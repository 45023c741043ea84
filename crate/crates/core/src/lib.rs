//! Cross-layer resource allocation for heterogeneous wireless networks.
//!
//! The crate implements the weighted-MMSE family of algorithms: precoder
//! design for interference channels ([`wmmse`]), joint scheduling
//! ([`scheduler`]), BS assignment ([`assignment`]), sparse CoMP clustering
//! ([`clustering`]), joint routing and beamforming over a wired/wireless
//! backhaul ([`backhaul`]) and stochastic precoding under partial channel
//! knowledge ([`stochastic`]). [`harness`] wires them into reproducible
//! experiments.
//!
//! Rates are in nats per channel use unless stated otherwise.

pub mod assignment;
pub mod backhaul;
pub mod clustering;
pub mod error;
pub mod harness;
pub mod linalg;
pub mod net_model;
pub mod quadratic;
pub mod report;
pub mod rng;
pub mod scheduler;
pub mod stochastic;
pub mod utility;
pub mod wmmse;

pub use error::{Error, Result};
pub use linalg::CMat;
pub use net_model::{ChannelDistribution, Dims, DistributionTable, NetworkInstance};
pub use report::{IterationRecord, SolveReport};
pub use utility::{UtilityConfig, UtilityKind};
pub use wmmse::{Link, PrecoderSet, Problem, ReceiverSet, SolveOptions, StopRule, WeightSet};
