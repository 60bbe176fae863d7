//! System model: parameters, channels, reflection vectors, allocations and
//! the exact evaluators every solver is checked against.

mod allocation;
mod beam;
mod channel;
mod eval;
pub mod io;
mod params;

pub use allocation::{KktCertificate, ResourceAllocation, Solution};
pub use beam::{Beams, BeamVector, ModulusMode};
pub use channel::{generate_channels, ChannelRealization, LOS_WAVELENGTH_M};
pub use eval::{
    check_feasibility, equivalent_gain, harvested_energy, objective_bits, offload_gain,
    offload_rate, offload_rate_noma, offload_rate_tdma, total_bits, FeasibilityReport,
    FEASIBILITY_REL_TOL, TIME_TOL,
};
pub use params::{Point3, SystemParams};
pub(crate) use eval::rate_term;

use serde::{Deserialize, Serialize};
use std::fmt;

/// Dynamic IRS beamforming regime.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, PartialOrd, Ord)]
#[serde(rename_all = "lowercase")]
pub enum DibfCase {
    /// One reflection vector for energy transfer and offloading.
    Case1,
    /// One vector for energy transfer, another shared by all offloading slots.
    Case2,
    /// One vector for energy transfer and one per offloading slot.
    Case3,
}

impl DibfCase {
    pub const ALL: [DibfCase; 3] = [DibfCase::Case1, DibfCase::Case2, DibfCase::Case3];
}

impl fmt::Display for DibfCase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DibfCase::Case1 => write!(f, "case1"),
            DibfCase::Case2 => write!(f, "case2"),
            DibfCase::Case3 => write!(f, "case3"),
        }
    }
}

/// Uplink multiple-access scheme for offloading.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, PartialOrd, Ord)]
#[serde(rename_all = "lowercase")]
pub enum MultipleAccess {
    Tdma,
    Noma,
}

impl fmt::Display for MultipleAccess {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            MultipleAccess::Tdma => write!(f, "tdma"),
            MultipleAccess::Noma => write!(f, "noma"),
        }
    }
}
