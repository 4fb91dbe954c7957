//! Air-to-ground uplink propagation and NOMA rate model.
//!
//! Path loss follows a reference-distance power law, small-scale fading is
//! Rician with a unit-magnitude line-of-sight term, and users sharing a
//! channel are decoded with successive interference cancellation (SIC) in
//! order of received power.

use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Reference distance of the path-loss law, in meters.
pub const REFERENCE_DISTANCE_M: f64 = 1.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ChannelError {
    #[error("distance {0} m is below the 1 m reference distance")]
    BelowReferenceDistance(f64),
    #[error("expected {expected} user positions, got {got}")]
    UserCount { expected: usize, got: usize },
    #[error("channel choice {choice} for user {user} exceeds channel count {channels}")]
    ChoiceOutOfRange {
        user: usize,
        choice: usize,
        channels: usize,
    },
    #[error("dimension mismatch: {0}")]
    Dimension(String),
}

/// A point in the mission frame. Users sit on the ground (`z = 0`), the UAV at
/// its flight altitude.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Position3D {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Position3D {
    pub const fn new(x: f64, y: f64, z: f64) -> Self {
        Self { x, y, z }
    }

    pub const fn ground(x: f64, y: f64) -> Self {
        Self { x, y, z: 0.0 }
    }
}

/// Propagation and receiver parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ChannelParams {
    /// Power gain at the 1 m reference distance.
    pub beta0: f64,
    /// Path-loss exponent.
    pub alpha: f64,
    /// Rician K-factor (linear).
    pub rician_k: f64,
    pub bandwidth_hz: f64,
    /// Total in-band noise power in watts, or a PSD in W/Hz when
    /// `noise_is_psd` is set.
    pub noise_power_w: f64,
    pub noise_is_psd: bool,
    pub num_users: usize,
    pub num_channels: usize,
}

impl Default for ChannelParams {
    fn default() -> Self {
        Self {
            beta0: 1e-3,
            alpha: 2.0,
            rician_k: 10.0,
            bandwidth_hz: 5e6,
            noise_power_w: 5e-8,
            noise_is_psd: false,
            num_users: 5,
            num_channels: 3,
        }
    }
}

impl ChannelParams {
    /// Noise power in watts that divides the channel power gain.
    pub fn effective_noise_w(&self) -> f64 {
        if self.noise_is_psd {
            self.noise_power_w * self.bandwidth_hz
        } else {
            self.noise_power_w
        }
    }

    /// Returns the name of the first field that violates its range, if any.
    pub fn invalid_field(&self) -> Option<(&'static str, &'static str)> {
        if !(self.beta0 > 0.0 && self.beta0.is_finite()) {
            return Some(("beta0", "must be positive"));
        }
        if !(2.0..=6.0).contains(&self.alpha) {
            return Some(("alpha", "must lie in [2, 6]"));
        }
        if !(self.rician_k >= 0.0) {
            return Some(("rician_k", "must be nonnegative"));
        }
        if !(self.bandwidth_hz > 0.0 && self.bandwidth_hz.is_finite()) {
            return Some(("bandwidth_hz", "must be positive"));
        }
        if !(self.noise_power_w > 0.0 && self.noise_power_w.is_finite()) {
            return Some(("noise_power_w", "must be positive"));
        }
        if self.num_users == 0 {
            return Some(("num_users", "must be at least 1"));
        }
        if self.num_channels == 0 {
            return Some(("num_channels", "must be at least 1"));
        }
        None
    }
}

/// Euclidean distance between a ground user and the UAV.
pub fn distance(user: Position3D, uav: Position3D) -> f64 {
    let dx = user.x - uav.x;
    let dy = user.y - uav.y;
    let dz = user.z - uav.z;
    (dx * dx + dy * dy + dz * dz).sqrt()
}

/// Average power gain `beta0 * d^-alpha`.
pub fn large_scale_gain(d: f64, params: &ChannelParams) -> Result<f64, ChannelError> {
    if !(d >= REFERENCE_DISTANCE_M) {
        return Err(ChannelError::BelowReferenceDistance(d));
    }
    Ok(params.beta0 * d.powf(-params.alpha))
}

/// Draws one Rician small-scale coefficient with `E|g|^2 = 1`.
///
/// The line-of-sight term has unit magnitude and zero phase; the scattered
/// term is circularly-symmetric complex Gaussian with unit variance.
pub fn sample_small_scale<R: Rng + ?Sized>(rng: &mut R, rician_k: f64) -> Complex64 {
    let los_amp = (rician_k / (rician_k + 1.0)).sqrt();
    let nlos_amp = (1.0 / (rician_k + 1.0)).sqrt();
    let re: f64 = rng.sample(StandardNormal);
    let im: f64 = rng.sample(StandardNormal);
    let scattered = Complex64::new(re, im) * std::f64::consts::FRAC_1_SQRT_2;
    Complex64::new(los_amp, 0.0) + scattered * nlos_amp
}

/// Channel amplitudes and channel-to-noise ratios for one slot.
///
/// Both matrices are stored row-major, one row per user.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelRealization {
    num_users: usize,
    num_channels: usize,
    gains: Vec<Complex64>,
    cnrs: Vec<f64>,
}

impl ChannelRealization {
    /// Builds a realization from amplitudes, deriving `|h|^2 / noise`.
    pub fn from_gains(
        num_users: usize,
        num_channels: usize,
        gains: Vec<Complex64>,
        noise_w: f64,
    ) -> Result<Self, ChannelError> {
        if gains.len() != num_users * num_channels {
            return Err(ChannelError::Dimension(format!(
                "{} gains for a {num_users}x{num_channels} matrix",
                gains.len()
            )));
        }
        let cnrs = gains.iter().map(|h| h.norm_sqr() / noise_w).collect();
        Ok(Self {
            num_users,
            num_channels,
            gains,
            cnrs,
        })
    }

    pub fn num_users(&self) -> usize {
        self.num_users
    }

    pub fn num_channels(&self) -> usize {
        self.num_channels
    }

    pub fn gain(&self, user: usize, channel: usize) -> Complex64 {
        self.gains[user * self.num_channels + channel]
    }

    pub fn cnr(&self, user: usize, channel: usize) -> f64 {
        self.cnrs[user * self.num_channels + channel]
    }

    pub fn gains(&self) -> &[Complex64] {
        &self.gains
    }

    pub fn cnrs(&self) -> &[f64] {
        &self.cnrs
    }

    /// CNR of every user on channel `channel` (0-based).
    pub fn cnr_column(&self, channel: usize) -> Vec<f64> {
        (0..self.num_users).map(|n| self.cnr(n, channel)).collect()
    }
}

/// Draws `h[n][m] = sqrt(beta_n) * g[n][m]` for every user/channel pair.
///
/// Small-scale draws are taken user-major, channel-minor.
pub fn realize_channel<R: Rng + ?Sized>(
    users: &[Position3D],
    uav: Position3D,
    params: &ChannelParams,
    rng: &mut R,
) -> Result<ChannelRealization, ChannelError> {
    if users.len() != params.num_users {
        return Err(ChannelError::UserCount {
            expected: params.num_users,
            got: users.len(),
        });
    }
    let m = params.num_channels;
    let mut gains = Vec::with_capacity(users.len() * m);
    for user in users {
        let beta = large_scale_gain(distance(*user, uav), params)?;
        let amp = beta.sqrt();
        for _ in 0..m {
            gains.push(sample_small_scale(rng, params.rician_k) * amp);
        }
    }
    ChannelRealization::from_gains(users.len(), m, gains, params.effective_noise_w())
}

/// Per-user channel choice: 0 leaves the user idle, `1..=M` selects a channel.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ChannelAssignment(Vec<usize>);

impl ChannelAssignment {
    pub fn new(choice: Vec<usize>, num_channels: usize) -> Result<Self, ChannelError> {
        if let Some((user, &c)) = choice.iter().enumerate().find(|(_, &c)| c > num_channels) {
            return Err(ChannelError::ChoiceOutOfRange {
                user,
                choice: c,
                channels: num_channels,
            });
        }
        Ok(Self(choice))
    }

    pub fn unassigned(num_users: usize) -> Self {
        Self(vec![0; num_users])
    }

    pub fn choices(&self) -> &[usize] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Users on channel `channel` (1-based, as stored).
    pub fn members(&self, channel: usize) -> Vec<usize> {
        self.0
            .iter()
            .enumerate()
            .filter(|(_, &c)| c == channel)
            .map(|(n, _)| n)
            .collect()
    }
}

/// SINR of each member of one NOMA channel under SIC.
///
/// Members are decoded strongest received power first (ties by lower user
/// index). A member only sees interference from those decoded after it.
/// The result is indexed by user; non-members get 0.
pub fn sic_sinr(powers: &[f64], cnr_column: &[f64], members: &[usize]) -> Vec<f64> {
    let mut sinr = vec![0.0; powers.len()];
    let mut order: Vec<(usize, f64)> = members
        .iter()
        .map(|&n| (n, powers[n] * cnr_column[n]))
        .collect();
    order.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    // Interference seen by the k-th decoded user is the suffix sum after k.
    let mut residual = 0.0;
    for &(n, received) in order.iter().rev() {
        sinr[n] = received / (1.0 + residual);
        residual += received;
    }
    sinr
}

/// Shannon rate `B log2(1 + sinr)` in bit/s.
pub fn rate(sinr: f64, bandwidth_hz: f64) -> f64 {
    bandwidth_hz * (1.0 + sinr).log2()
}

/// Rate of every user given a channel assignment and transmit powers.
pub fn all_rates(
    realization: &ChannelRealization,
    assignment: &ChannelAssignment,
    powers: &[f64],
    bandwidth_hz: f64,
) -> Result<Vec<f64>, ChannelError> {
    let n = realization.num_users();
    if assignment.len() != n || powers.len() != n {
        return Err(ChannelError::Dimension(format!(
            "{n} users but {} choices and {} powers",
            assignment.len(),
            powers.len()
        )));
    }
    if let Some((user, &c)) = assignment
        .choices()
        .iter()
        .enumerate()
        .find(|(_, &c)| c > realization.num_channels())
    {
        return Err(ChannelError::ChoiceOutOfRange {
            user,
            choice: c,
            channels: realization.num_channels(),
        });
    }
    let mut rates = vec![0.0; n];
    for channel in 1..=realization.num_channels() {
        let members = assignment.members(channel);
        if members.is_empty() {
            continue;
        }
        let column = realization.cnr_column(channel - 1);
        let sinr = sic_sinr(powers, &column, &members);
        for &user in &members {
            rates[user] = rate(sinr[user], bandwidth_hz);
        }
    }
    Ok(rates)
}
