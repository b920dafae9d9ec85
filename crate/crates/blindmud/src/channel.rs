//! Multi-user flat-fading channel: per-user complex gains with an open-loop
//! power disparity window, superposition, and AWGN.
//!
//! Randomness is organized as one independent stream per (campaign seed,
//! drop index, role), so drops can run concurrently and reproduce exactly.

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use thiserror::Error;

use crate::phytx::{ResourceGeometry, TxFrame};

#[derive(Debug, Error, PartialEq)]
pub enum ChannelError {
    #[error("frame/channel count mismatch: {frames} frames, {channels} channels")]
    CountMismatch { frames: usize, channels: usize },
    #[error("frame geometry mismatch at user {ue}")]
    GeometryMismatch { ue: usize },
}

/// Flat scalar channel of one user, including its open-loop power state.
/// The magnitude is pinned by the drawn SNR; only the phase is random.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UeChannel {
    pub gain: Complex64,
    pub tx_snr_db: f64,
}

impl UeChannel {
    /// The equivalent spread-domain channel `h = g * c`.
    pub fn equivalent(&self, sequence: &[Complex64]) -> Vec<Complex64> {
        sequence.iter().map(|c| c * self.gain).collect()
    }
}

/// Received frame: the superposition of every user's spread frame plus
/// circular AWGN of total per-sample variance `noise_variance`.
#[derive(Debug, Clone, PartialEq)]
pub struct RxFrame {
    spreading_factor: usize,
    units: usize,
    data: Vec<Complex64>,
    noise_variance: f64,
}

impl RxFrame {
    pub fn from_samples(
        spreading_factor: usize,
        units: usize,
        data: Vec<Complex64>,
        noise_variance: f64,
    ) -> Self {
        assert_eq!(data.len(), spreading_factor * units);
        Self {
            spreading_factor,
            units,
            data,
            noise_variance,
        }
    }

    pub fn spreading_factor(&self) -> usize {
        self.spreading_factor
    }

    pub fn units(&self) -> usize {
        self.units
    }

    pub fn unit(&self, i: usize) -> &[Complex64] {
        let l = self.spreading_factor;
        &self.data[i * l..(i + 1) * l]
    }

    pub fn samples(&self) -> &[Complex64] {
        &self.data
    }

    /// Known only to the harness; the blind receiver never reads it.
    pub fn noise_variance(&self) -> f64 {
        self.noise_variance
    }

    pub fn energy(&self) -> f64 {
        crate::cplx::norm_sq(&self.data)
    }
}

/// Draws a user channel: SNR uniform in `central ± spread/2` dB, deterministic
/// magnitude from that SNR, uniform random phase.
pub fn draw_ue_channel(
    rng: &mut impl Rng,
    central_snr_db: f64,
    spread_db: f64,
    noise_variance: f64,
) -> UeChannel {
    debug_assert!(spread_db >= 0.0);
    let tx_snr_db = if spread_db == 0.0 {
        central_snr_db
    } else {
        rng.gen_range((central_snr_db - spread_db / 2.0)..(central_snr_db + spread_db / 2.0))
    };
    let magnitude = (10f64.powf(tx_snr_db / 10.0) * noise_variance).sqrt();
    let phase = rng.gen_range(0.0..std::f64::consts::TAU);
    UeChannel {
        gain: Complex64::from_polar(magnitude, phase),
        tx_snr_db,
    }
}

/// Superposes the users' frames through their scalar channels and adds
/// complex AWGN with per-component variance `noise_variance / 2`. With no
/// users the result is pure noise of the given geometry.
pub fn superpose(
    geometry: &ResourceGeometry,
    frames: &[TxFrame],
    channels: &[UeChannel],
    noise_variance: f64,
    rng: &mut impl Rng,
) -> Result<RxFrame, ChannelError> {
    if frames.len() != channels.len() {
        return Err(ChannelError::CountMismatch {
            frames: frames.len(),
            channels: channels.len(),
        });
    }
    let (l, units) = (geometry.spreading_factor(), geometry.spread_units());
    let mut data = vec![Complex64::ZERO; l * units];
    for (ue, (frame, ch)) in frames.iter().zip(channels).enumerate() {
        if frame.spreading_factor() != l || frame.units() != units {
            return Err(ChannelError::GeometryMismatch { ue });
        }
        for (acc, s) in data.iter_mut().zip(frame.samples()) {
            *acc += ch.gain * s;
        }
    }
    if noise_variance > 0.0 {
        let sigma = (noise_variance / 2.0).sqrt();
        for v in &mut data {
            *v += Complex64::new(sigma * gaussian(rng), sigma * gaussian(rng));
        }
    }
    Ok(RxFrame {
        spreading_factor: l,
        units,
        data,
        noise_variance,
    })
}

fn gaussian(rng: &mut impl Rng) -> f64 {
    // Box-Muller, taking one sample per call; the discarded pair keeps the
    // stream layout simple and drop-reproducible.
    let u1: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
    let u2: f64 = rng.gen();
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

/// Independent named RNG streams for one Monte Carlo drop.
pub struct DropStreams {
    pub payload: ChaCha12Rng,
    pub selection: ChaCha12Rng,
    pub channel: ChaCha12Rng,
    pub noise: ChaCha12Rng,
}

impl DropStreams {
    const ROLES: u64 = 4;

    pub fn new(campaign_seed: u64, drop_index: u64) -> Self {
        let stream = |role: u64| {
            let mut rng = ChaCha12Rng::seed_from_u64(campaign_seed);
            rng.set_stream(drop_index * Self::ROLES + role);
            rng
        };
        Self {
            payload: stream(0),
            selection: stream(1),
            channel: stream(2),
            noise: stream(3),
        }
    }
}
