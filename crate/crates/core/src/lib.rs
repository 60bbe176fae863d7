//! Computation-rate maximization for IRS-aided wireless-powered mobile edge
//! computing (WP-MEC).
//!
//! A hybrid access point (HAP) charges `K` single-antenna devices over the
//! downlink, then each device splits its harvested energy between local CPU
//! cycles and uplink task offloading (TDMA or NOMA). An intelligent reflecting
//! surface (IRS) with `N` passive elements shapes both links. Three dynamic
//! IRS beamforming regimes are supported:
//!
//! * [`DibfCase::Case1`]: one reflection vector for the whole frame,
//! * [`DibfCase::Case2`]: separate vectors for energy transfer and offloading,
//! * [`DibfCase::Case3`]: one offloading vector per time slot.
//!
//! The crate is organised bottom-up:
//!
//! * [`model`]: parameters, channels, beams, allocations and exact evaluators,
//! * [`single_user`]: closed-form single-device analysis and activation threshold,
//! * [`resource`]: the convex resource-allocation subproblem and the
//!   TDMA/NOMA solution maps,
//! * [`beamforming`]: the SCA beamforming subproblem,
//! * [`ao`]: the alternating-optimization drivers,
//! * [`oracle`]: brute-force reference solvers for tiny instances,
//! * [`experiments`]: scenario files, benchmarks and Monte-Carlo sweeps.

pub mod ao;
pub mod beamforming;
pub mod error;
pub mod experiments;
pub mod model;
pub mod oracle;
pub mod resource;
pub mod single_user;
pub mod units;

mod barrier;

pub use error::{Error, Result};
pub use model::{
    Beams, BeamVector, ChannelRealization, DibfCase, KktCertificate, ModulusMode,
    MultipleAccess, ResourceAllocation, Solution, SystemParams,
};
