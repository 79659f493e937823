//! Seeded Laplace mechanism for identity queries on demand vectors,
//! plus the adjacency check used by the test suites.
//!
//! The base generator is ChaCha8 keyed by the 64-bit seed: a counter
//! based stream cipher, so a stream can be repositioned in O(1) and two
//! streams with different seeds are independent. Samples are drawn by
//! inverse CDF from explicit bit manipulation of one `u64` per sample,
//! so a fixed `(seed, stream_position)` pair reproduces the same sample
//! exactly.

use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::domain::{DemandRole, DemandVector, DomainError, PrivacyParams};

#[derive(Debug, Error)]
pub enum DpError {
    #[error("noise scale {scale} does not match alpha/epsilon = {expected}")]
    Miscalibrated { scale: f64, expected: f64 },
    #[error(transparent)]
    Domain(#[from] DomainError),
}

/// Inverse CDF of the zero-centered Laplace distribution with the given
/// scale, for u in (-1/2, 1/2).
pub fn laplace_inverse_cdf(u: f64, scale: f64) -> f64 {
    debug_assert!(u > -0.5 && u < 0.5);
    -scale * u.signum() * (1.0 - 2.0 * u.abs()).ln()
}

/// A seeded Laplace noise stream with scale b = alpha / epsilon.
#[derive(Debug, Clone)]
pub struct LaplaceNoise {
    scale: f64,
    seed: u64,
    stream_position: u64,
    rng: ChaCha8Rng,
}

impl LaplaceNoise {
    pub fn new(scale: f64, seed: u64) -> Result<Self, DpError> {
        if !(scale.is_finite() && scale > 0.0) {
            return Err(DpError::Domain(DomainError::InvalidParameter(format!(
                "noise scale must be positive, got {scale}"
            ))));
        }
        Ok(Self {
            scale,
            seed,
            stream_position: 0,
            rng: ChaCha8Rng::seed_from_u64(seed),
        })
    }

    /// Stream calibrated for the identity query under `params`.
    pub fn for_params(params: &PrivacyParams) -> Self {
        Self::new(params.noise_scale(), params.seed).expect("validated params")
    }

    /// Rebuild a stream at an arbitrary position of the same sequence.
    pub fn at_position(scale: f64, seed: u64, stream_position: u64) -> Result<Self, DpError> {
        let mut noise = Self::new(scale, seed)?;
        // One sample consumes one u64 = two 32-bit stream words.
        noise.rng.set_word_pos((stream_position as u128) * 2);
        noise.stream_position = stream_position;
        Ok(noise)
    }

    pub fn scale(&self) -> f64 {
        self.scale
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream_position(&self) -> u64 {
        self.stream_position
    }

    /// Draw one sample and advance the stream position.
    pub fn sample(&mut self) -> f64 {
        let raw = self.rng.next_u64();
        self.stream_position += 1;
        // Bit 0 selects the sign; bits 12..64 form the magnitude, offset
        // by half a step so u never reaches 0 or the interval endpoints.
        let sign = if raw & 1 == 1 { 1.0 } else { -1.0 };
        let mag = ((raw >> 12) as f64 + 0.5) * 2f64.powi(-52);
        let u = sign * mag * 0.5;
        laplace_inverse_cdf(u, self.scale)
    }
}

/// Laplace mechanism on identity queries: returns d~ with one i.i.d.
/// Laplace(alpha/epsilon) draw added per coordinate. No clipping is
/// applied; feasibility repair is the bilevel model's job.
pub fn obfuscate_demands(
    d: &DemandVector,
    params: &PrivacyParams,
    noise: &mut LaplaceNoise,
) -> Result<DemandVector, DpError> {
    let expected = params.noise_scale();
    if noise.scale != expected {
        return Err(DpError::Miscalibrated {
            scale: noise.scale,
            expected,
        });
    }
    let values = d.values().iter().map(|v| v + noise.sample()).collect();
    Ok(DemandVector::new(values, DemandRole::Noisy)?)
}

/// True iff the two vectors differ in at most one coordinate and that
/// difference has magnitude at most alpha.
pub fn adjacency_check(
    d: &DemandVector,
    d_prime: &DemandVector,
    alpha: f64,
) -> Result<bool, DomainError> {
    if d.len() != d_prime.len() {
        return Err(DomainError::DimensionMismatch {
            expected: d.len(),
            got: d_prime.len(),
        });
    }
    let mut differing = 0usize;
    for (a, b) in d.values().iter().zip(d_prime.values()) {
        if a != b {
            differing += 1;
            if differing > 1 || (a - b).abs() > alpha {
                return Ok(false);
            }
        }
    }
    Ok(true)
}
