//! JSON import/export of channel realizations, so fixtures can be pinned
//! independently of the random generator.
//!
//! Layout (complex numbers are `[re, im]` pairs):
//!
//! ```json
//! {
//!   "format": "irsmec-channel",
//!   "version": 1,
//!   "seed": 7,
//!   "h_direct": [[re, im], ...],           // one per device
//!   "g_hap_irs": [[re, im], ...],          // one per element
//!   "h_irs_device": [[[re, im], ...], ...], // device-major
//!   "q_cascaded": [[[re, im], ...], ...]    // optional, checked on import
//! }
//! ```
//!
//! `q_cascaded[k][n] = conj(h_irs_device[k][n]) * g_hap_irs[n]` is always
//! recomputed on import; a stored copy that disagrees is rejected.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use std::path::Path;

use super::ChannelRealization;
use crate::error::{Error, Result};

pub const CHANNEL_FORMAT: &str = "irsmec-channel";
pub const CHANNEL_VERSION: u32 = 1;

const Q_REL_TOL: f64 = 1e-12;

#[derive(Debug, Serialize, Deserialize)]
struct ChannelFile {
    format: String,
    version: u32,
    seed: u64,
    h_direct: Vec<Complex64>,
    g_hap_irs: Vec<Complex64>,
    h_irs_device: Vec<Vec<Complex64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    q_cascaded: Option<Vec<Vec<Complex64>>>,
}

pub fn channel_to_json(chan: &ChannelRealization) -> Result<String> {
    let file = ChannelFile {
        format: CHANNEL_FORMAT.to_string(),
        version: CHANNEL_VERSION,
        seed: chan.seed(),
        h_direct: chan.h_direct().to_vec(),
        g_hap_irs: chan.g_hap_irs().to_vec(),
        h_irs_device: chan.h_irs_device().to_vec(),
        q_cascaded: Some(chan.q_cascaded().to_vec()),
    };
    Ok(serde_json::to_string_pretty(&file)?)
}

pub fn channel_from_json(text: &str) -> Result<ChannelRealization> {
    let file: ChannelFile = serde_json::from_str(text).map_err(|e| Error::Schema {
        path: "channel".into(),
        reason: e.to_string(),
    })?;
    if file.format != CHANNEL_FORMAT {
        return Err(Error::Schema {
            path: "format".into(),
            reason: format!("expected {CHANNEL_FORMAT:?}, got {:?}", file.format),
        });
    }
    if file.version != CHANNEL_VERSION {
        return Err(Error::Schema {
            path: "version".into(),
            reason: format!("unsupported version {}", file.version),
        });
    }
    let chan = ChannelRealization::from_links(file.h_direct, file.g_hap_irs, file.h_irs_device, file.seed)?;
    if let Some(stored) = file.q_cascaded {
        check_stored_q(&chan, &stored)?;
    }
    Ok(chan)
}

fn check_stored_q(chan: &ChannelRealization, stored: &[Vec<Complex64>]) -> Result<()> {
    let bad_shape = || Error::Schema {
        path: "q_cascaded".into(),
        reason: "shape does not match the links".into(),
    };
    if stored.len() != chan.num_devices() {
        return Err(bad_shape());
    }
    for (k, (row, want)) in stored.iter().zip(chan.q_cascaded()).enumerate() {
        if row.len() != want.len() {
            return Err(bad_shape());
        }
        for (n, (a, b)) in row.iter().zip(want).enumerate() {
            if (a - b).norm() > Q_REL_TOL * b.norm().max(f64::MIN_POSITIVE) {
                return Err(Error::Schema {
                    path: format!("q_cascaded[{k}][{n}]"),
                    reason: "does not equal conj(h_irs_device) * g_hap_irs".into(),
                });
            }
        }
    }
    Ok(())
}

pub fn write_channel(path: &Path, chan: &ChannelRealization) -> Result<()> {
    std::fs::write(path, channel_to_json(chan)?)?;
    Ok(())
}

pub fn read_channel(path: &Path) -> Result<ChannelRealization> {
    channel_from_json(&std::fs::read_to_string(path)?)
}
