use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use std::f64::consts::{FRAC_1_SQRT_2, PI};

use super::params::{Point3, SystemParams};
use crate::error::{Error, Result};

/// Carrier wavelength used for the deterministic line-of-sight phases.
pub const LOS_WAVELENGTH_M: f64 = 0.1;

// RNG stream ids. Every link family draws from its own ChaCha8 stream so
// that growing N or K only appends samples: the first N elements of an
// (N + 1)-element realization match the N-element one for the same seed.
const STREAM_DIRECT: u64 = 0;
const STREAM_HAP_IRS: u64 = 1;
const STREAM_IRS_DEVICE_BASE: u64 = 2;

/// One channel realization: direct links `h_d`, HAP-IRS link `g`, IRS-device
/// links `h_r` and the cascaded vectors `q_k`.
///
/// `q_cascaded[k][n] = conj(h_irs_device[k][n]) * g[n]`, and every gain in the
/// crate is `|conj(h_d) + sum_n conj(q[n]) v[n]|^2`.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelRealization {
    h_direct: Vec<Complex64>,
    g_hap_irs: Vec<Complex64>,
    h_irs_device: Vec<Vec<Complex64>>,
    q_cascaded: Vec<Vec<Complex64>>,
    seed: u64,
}

impl ChannelRealization {
    /// Builds a realization from raw links, deriving the cascaded vectors.
    pub fn from_links(
        h_direct: Vec<Complex64>,
        g_hap_irs: Vec<Complex64>,
        h_irs_device: Vec<Vec<Complex64>>,
        seed: u64,
    ) -> Result<Self> {
        if h_irs_device.len() != h_direct.len() {
            return Err(Error::params(
                "h_irs_device",
                format!(
                    "{} IRS-device links for {} devices",
                    h_irs_device.len(),
                    h_direct.len()
                ),
            ));
        }
        if let Some(bad) = h_irs_device.iter().find(|h| h.len() != g_hap_irs.len()) {
            return Err(Error::params(
                "h_irs_device",
                format!("link of length {} for N = {}", bad.len(), g_hap_irs.len()),
            ));
        }
        let q_cascaded = h_irs_device
            .iter()
            .map(|hr| hr.iter().zip(&g_hap_irs).map(|(h, g)| h.conj() * g).collect())
            .collect();
        Ok(ChannelRealization {
            h_direct,
            g_hap_irs,
            h_irs_device,
            q_cascaded,
            seed,
        })
    }

    pub fn num_devices(&self) -> usize {
        self.h_direct.len()
    }

    pub fn num_elements(&self) -> usize {
        self.g_hap_irs.len()
    }

    pub fn h_direct(&self) -> &[Complex64] {
        &self.h_direct
    }

    pub fn g_hap_irs(&self) -> &[Complex64] {
        &self.g_hap_irs
    }

    pub fn h_irs_device(&self) -> &[Vec<Complex64>] {
        &self.h_irs_device
    }

    pub fn q_cascaded(&self) -> &[Vec<Complex64>] {
        &self.q_cascaded
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// The same realization with the IRS removed (`N = 0`).
    pub fn without_irs(&self) -> Self {
        ChannelRealization {
            h_direct: self.h_direct.clone(),
            g_hap_irs: Vec::new(),
            h_irs_device: vec![Vec::new(); self.num_devices()],
            q_cascaded: vec![Vec::new(); self.num_devices()],
            seed: self.seed,
        }
    }

    /// Multiplies every direct and cascaded coefficient by a common
    /// unit-modulus factor. Gains are invariant under this map.
    pub fn rotated(&self, phase: f64) -> Self {
        let r = Complex64::from_polar(1.0, phase);
        // conj(h_d) and conj(q) both pick up conj(r); achieved by scaling h_d
        // and h_r by r (q = conj(h_r) g picks up conj(r), so scale g by r^2).
        let h_direct = self.h_direct.iter().map(|h| h * r).collect();
        let g = self.g_hap_irs.iter().map(|g| g * r * r).collect();
        let hr = self
            .h_irs_device
            .iter()
            .map(|row| row.iter().map(|h| h * r).collect())
            .collect();
        ChannelRealization::from_links(h_direct, g, hr, self.seed).expect("shape preserved")
    }

    pub(crate) fn check_consistent(&self, params: &SystemParams) -> Result<()> {
        if self.num_devices() != params.num_devices() {
            return Err(Error::params(
                "channel",
                format!(
                    "realization has {} devices, params have {}",
                    self.num_devices(),
                    params.num_devices()
                ),
            ));
        }
        Ok(())
    }
}

/// Draws a Rician realization for `params` from a ChaCha8 stream seeded with
/// `seed`.
///
/// Each link is `sqrt(beta d^-alpha) (sqrt(k/(k+1)) a + sqrt(1/(k+1)) w)` with
/// `w ~ CN(0, 1)` and `a` a unit-modulus line-of-sight term. The IRS is a
/// uniform linear array along the x axis with half-wavelength spacing; element
/// `n` of the line-of-sight response towards unit direction `u` is
/// `exp(-j 2 pi d / lambda) exp(j pi n u_x)`. Complex Gaussian samples take
/// two standard normals (real, then imaginary) scaled by `1/sqrt(2)`.
pub fn generate_channels(params: &SystemParams, seed: u64) -> Result<ChannelRealization> {
    params.validate()?;
    let n = params.num_elements;
    let k_count = params.num_devices();
    let kappa = params.rician_factor;
    let (w_los, w_nlos) = if kappa.is_infinite() {
        (1.0, 0.0)
    } else {
        ((kappa / (kappa + 1.0)).sqrt(), (1.0 / (kappa + 1.0)).sqrt())
    };

    let mut rng = stream(seed, STREAM_DIRECT);
    let h_direct = (0..k_count)
        .map(|k| {
            let d = params.dist_hap_device(k);
            let amp = params.path_gain(d, params.pathloss_exp_ad).sqrt();
            let los = Complex64::from_polar(1.0, -2.0 * PI * d / LOS_WAVELENGTH_M);
            amp * (w_los * los + w_nlos * cn(&mut rng))
        })
        .collect();

    let d_ai = params.dist_hap_irs();
    let u_hap = direction(&params.irs_pos, &params.hap_pos);
    let amp_ai = params.path_gain(d_ai, params.pathloss_exp_ai).sqrt();
    let mut rng = stream(seed, STREAM_HAP_IRS);
    let g = (0..n)
        .map(|i| {
            let los = steering(i, d_ai, u_hap[0]);
            amp_ai * (w_los * los + w_nlos * cn(&mut rng))
        })
        .collect();

    let h_r = (0..k_count)
        .map(|k| {
            let d = params.dist_irs_device(k);
            let u = direction(&params.irs_pos, &params.device_positions[k]);
            let amp = params.path_gain(d, params.pathloss_exp_id).sqrt();
            let mut rng = stream(seed, STREAM_IRS_DEVICE_BASE + k as u64);
            (0..n)
                .map(|i| amp * (w_los * steering(i, d, u[0]) + w_nlos * cn(&mut rng)))
                .collect()
        })
        .collect();

    ChannelRealization::from_links(h_direct, g, h_r, seed)
}

fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

fn cn(rng: &mut ChaCha8Rng) -> Complex64 {
    let re: f64 = StandardNormal.sample(rng);
    let im: f64 = StandardNormal.sample(rng);
    Complex64::new(re, im) * FRAC_1_SQRT_2
}

fn steering(element: usize, d: f64, u_x: f64) -> Complex64 {
    Complex64::from_polar(
        1.0,
        -2.0 * PI * d / LOS_WAVELENGTH_M + PI * element as f64 * u_x,
    )
}

fn direction(from: &Point3, to: &Point3) -> Point3 {
    let d = super::params::distance(from, to);
    if d == 0.0 {
        return [0.0; 3];
    }
    [(to[0] - from[0]) / d, (to[1] - from[1]) / d, (to[2] - from[2]) / d]
}
