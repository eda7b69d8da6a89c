//! Per-element hardware impairment models: antenna position errors (angle
//! dependent) and phase errors (angle independent), both entering the array
//! response as unit-modulus diagonal factors.
//!
//! Position offsets are stored in wavelength units, so the induced phase is
//! `2*pi*offset*angle` with no explicit carrier wavelength anywhere.

use crate::channel::PathChannel;
use crate::matrix::CMatrix;
use crate::rng::RngStream;
use num_complex::Complex64;
use std::f64::consts::TAU;
use thiserror::Error;

/// Physical bound for truncated position sampling: a quarter wavelength.
pub const POSITION_TRUNCATION_WAVELENGTHS: f64 = 0.25;

#[derive(Debug, Error)]
pub enum ImpairmentError {
    #[error("channel carries no path parameters; impairments need per-path angles")]
    MissingPathInfo,
    #[error("profile length {profile} does not match antenna count {antennas}")]
    ProfileLengthMismatch { profile: usize, antennas: usize },
}

/// Per-element offsets for one array side.
#[derive(Debug, Clone, PartialEq)]
pub struct ImpairmentProfile {
    /// Displacement of each element from its ideal position, in wavelengths.
    pub position_offsets: Vec<f64>,
    /// Phase offset of each element's RF chain, in radians.
    pub phase_offsets: Vec<f64>,
}

impl ImpairmentProfile {
    pub fn zero(n: usize) -> Self {
        Self {
            position_offsets: vec![0.0; n],
            phase_offsets: vec![0.0; n],
        }
    }

    pub fn len(&self) -> usize {
        self.position_offsets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.position_offsets.is_empty()
    }
}

/// Draw an i.i.d. Gaussian profile. With `truncated` set, position offsets
/// are redrawn until they fall within a quarter wavelength, preserving the
/// truncated-Gaussian shape instead of clipping.
pub fn sample_profile(
    n: usize,
    sigma_d_wavelengths: f64,
    sigma_p_radians: f64,
    truncated: bool,
    rng: &mut RngStream,
) -> ImpairmentProfile {
    assert!(sigma_d_wavelengths >= 0.0 && sigma_p_radians >= 0.0);
    let position_offsets = (0..n)
        .map(|_| loop {
            let draw = rng.normal(sigma_d_wavelengths);
            if !truncated || draw.abs() <= POSITION_TRUNCATION_WAVELENGTHS {
                break draw;
            }
        })
        .collect();
    let phase_offsets = (0..n).map(|_| rng.normal(sigma_p_radians)).collect();
    ImpairmentProfile {
        position_offsets,
        phase_offsets,
    }
}

/// Diagonal of the position-error matrix at direction `angle`. The first
/// element is the positional reference and its entry is exactly 1.
pub fn position_matrix(profile: &ImpairmentProfile, angle: f64) -> Vec<Complex64> {
    profile
        .position_offsets
        .iter()
        .enumerate()
        .map(|(n, &offset)| {
            if n == 0 {
                Complex64::new(1.0, 0.0)
            } else {
                Complex64::from_polar(1.0, TAU * offset * angle)
            }
        })
        .collect()
}

/// Diagonal of the angle-independent phase-error matrix.
pub fn phase_matrix(profile: &ImpairmentProfile) -> Vec<Complex64> {
    profile
        .phase_offsets
        .iter()
        .map(|&offset| Complex64::from_polar(1.0, offset))
        .collect()
}

/// Steering vector distorted by both impairments: elementwise product of the
/// ideal response with the position and phase diagonals at `angle`.
pub fn impaired_response(
    ideal: &[Complex64],
    profile: &ImpairmentProfile,
    angle: f64,
) -> Vec<Complex64> {
    assert_eq!(ideal.len(), profile.len());
    let pos = position_matrix(profile, angle);
    let phase = phase_matrix(profile);
    ideal
        .iter()
        .zip(pos.iter().zip(&phase))
        .map(|(a, (d, p))| a * d * p)
        .collect()
}

/// Effective channel under impairments: each path's receive and transmit
/// responses are distorted at that path's own angles.
pub fn impaired_channel(
    channel: &PathChannel,
    tx_profile: &ImpairmentProfile,
    rx_profile: &ImpairmentProfile,
) -> Result<CMatrix, ImpairmentError> {
    if channel.paths.is_empty() {
        return Err(ImpairmentError::MissingPathInfo);
    }
    if tx_profile.len() != channel.n_tx {
        return Err(ImpairmentError::ProfileLengthMismatch {
            profile: tx_profile.len(),
            antennas: channel.n_tx,
        });
    }
    if rx_profile.len() != channel.n_rx {
        return Err(ImpairmentError::ProfileLengthMismatch {
            profile: rx_profile.len(),
            antennas: channel.n_rx,
        });
    }
    let mut matrix = CMatrix::zeros(channel.n_rx, channel.n_tx);
    for path in &channel.paths {
        let u_ideal = crate::arraymath::steering(channel.n_rx, path.aoa);
        let v_ideal = crate::arraymath::steering(channel.n_tx, path.aod);
        let u = impaired_response(u_ideal.elements(), rx_profile, path.aoa.value());
        let v = impaired_response(v_ideal.elements(), tx_profile, path.aod.value());
        matrix.add_scaled_outer(path.gain, &u, &v);
    }
    Ok(matrix)
}
