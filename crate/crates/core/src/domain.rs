//! Shared value types: demand vectors, privacy parameters, cost targets
//! and the distance bookkeeping used by the bisection engine.
//!
//! All quantities are per-unit; MW inputs are normalized at parse time.
//! Distances are stored squared throughout; the plain L2 norm only
//! appears in the factor-of-two bound reporting.

use thiserror::Error;

/// Errors raised by the domain types and their operations.
#[derive(Debug, Error)]
pub enum DomainError {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("non-finite value at index {0}")]
    NonFinite(usize),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
}

/// Provenance of a demand vector within the pipeline.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DemandRole {
    /// The sensitive input d°.
    Original,
    /// The Laplace-obfuscated vector d~.
    Noisy,
    /// The post-processed vector d* selected for release.
    Released,
    /// Optimum of the high point relaxation.
    HprPoint,
    /// Optimum of a push-up solve at some probed distance.
    PushUpPoint,
}

/// A per-unit real demand vector together with its pipeline role.
///
/// Entries are finite by construction; the length must match the number
/// of demand-bearing buses of the network it is used with (checked at
/// the operations that combine a vector with a network).
#[derive(Debug, Clone, PartialEq)]
pub struct DemandVector {
    values: Vec<f64>,
    role: DemandRole,
}

impl DemandVector {
    pub fn new(values: Vec<f64>, role: DemandRole) -> Result<Self, DomainError> {
        for (i, v) in values.iter().enumerate() {
            if !v.is_finite() {
                return Err(DomainError::NonFinite(i));
            }
        }
        Ok(Self { values, role })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn role(&self) -> DemandRole {
        self.role
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Same values, different role tag.
    pub fn with_role(&self, role: DemandRole) -> Self {
        Self {
            values: self.values.clone(),
            role,
        }
    }
}

/// Squared L2 distance between two demand vectors.
pub fn l2sq_distance(a: &DemandVector, b: &DemandVector) -> Result<f64, DomainError> {
    if a.len() != b.len() {
        return Err(DomainError::DimensionMismatch {
            expected: a.len(),
            got: b.len(),
        });
    }
    Ok(a.values()
        .iter()
        .zip(b.values())
        .map(|(x, y)| (x - y) * (x - y))
        .sum())
}

/// Ratio ||d* - d°|| / ||d~ - d°|| in plain (not squared) L2 norm.
///
/// For any optimally post-processed release this is at most 2. Returns
/// `Ok(None)` when the noisy vector equals the original (zero
/// denominator), in which case callers report the ratio as
/// not-applicable.
pub fn theorem2_ratio(
    d_star: &DemandVector,
    d_tilde: &DemandVector,
    d_orig: &DemandVector,
) -> Result<Option<f64>, DomainError> {
    let num = l2sq_distance(d_star, d_orig)?.sqrt();
    let den = l2sq_distance(d_tilde, d_orig)?.sqrt();
    if den == 0.0 {
        return Ok(None);
    }
    Ok(Some(num / den))
}

/// Privacy and convergence parameters for one obfuscation release.
#[derive(Debug, Clone)]
pub struct PrivacyParams {
    /// Privacy level epsilon (> 0).
    pub epsilon: f64,
    /// Indistinguishability level alpha in per-unit (> 0).
    pub alpha: f64,
    /// Fidelity half-width beta in absolute cost units (> 0).
    pub beta: f64,
    /// Optional floor beta°, the assumed bound |O(d°) - f~| <= beta°.
    pub beta_floor: Option<f64>,
    /// Binary-search tolerance on the squared distance (> 0).
    pub eta: f64,
    /// Cap on push-up solves, each paired with one follower solve.
    pub max_oracle_calls: usize,
    /// Base seed for the noise stream.
    pub seed: u64,
}

impl PrivacyParams {
    pub fn new(
        epsilon: f64,
        alpha: f64,
        beta: f64,
        beta_floor: Option<f64>,
        eta: f64,
        max_oracle_calls: usize,
        seed: u64,
    ) -> Result<Self, DomainError> {
        let positive = |name: &str, v: f64| -> Result<(), DomainError> {
            if !(v.is_finite() && v > 0.0) {
                return Err(DomainError::InvalidParameter(format!(
                    "{name} must be positive and finite, got {v}"
                )));
            }
            Ok(())
        };
        positive("epsilon", epsilon)?;
        positive("alpha", alpha)?;
        positive("beta", beta)?;
        positive("eta", eta)?;
        if let Some(floor) = beta_floor {
            positive("beta_floor", floor)?;
            if beta < floor {
                return Err(DomainError::InvalidParameter(format!(
                    "beta {beta} must be at least beta_floor {floor}"
                )));
            }
        }
        if max_oracle_calls == 0 {
            return Err(DomainError::InvalidParameter(
                "max_oracle_calls must be at least 1".into(),
            ));
        }
        Ok(Self {
            epsilon,
            alpha,
            beta,
            beta_floor,
            eta,
            max_oracle_calls,
            seed,
        })
    }

    /// Laplace scale for the identity query: alpha / epsilon.
    pub fn noise_scale(&self) -> f64 {
        self.alpha / self.epsilon
    }
}

/// Where the cost target f~ came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CostTargetSource {
    /// f~ is public knowledge (e.g. a market clearing value).
    Public,
    /// f~ is itself a privately estimated value supplied by the caller.
    PrivateEstimate,
}

/// The target objective value f~ the released vector must track.
#[derive(Debug, Clone, Copy)]
pub struct CostTarget {
    pub f_tilde: f64,
    pub source: CostTargetSource,
}

impl CostTarget {
    pub fn new(f_tilde: f64, source: CostTargetSource) -> Result<Self, DomainError> {
        if !f_tilde.is_finite() {
            return Err(DomainError::InvalidParameter(format!(
                "f_tilde must be finite, got {f_tilde}"
            )));
        }
        Ok(Self { f_tilde, source })
    }
}

/// Outcome of one follower solve O(d).
#[derive(Debug, Clone)]
pub struct FollowerResult {
    /// Optimal cost; meaningful only when `status` is `Optimal`.
    pub objective: f64,
    /// Optimal generator outputs, in generator order.
    pub dispatch: Vec<f64>,
    pub status: FollowerStatus,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FollowerStatus {
    Optimal,
    Infeasible,
    NumericFailure,
}

/// Lower and upper bounds on the optimal squared distance, maintained
/// by the bisection.
#[derive(Debug, Clone, Copy)]
pub struct DistanceBudget {
    pub delta_low: f64,
    pub delta_high: f64,
}

impl DistanceBudget {
    pub fn new(delta_low: f64, delta_high: f64) -> Result<Self, DomainError> {
        if !(delta_low.is_finite() && delta_high.is_finite()) || delta_low < 0.0 {
            return Err(DomainError::InvalidParameter(format!(
                "distance bounds must be finite and nonnegative, got [{delta_low}, {delta_high}]"
            )));
        }
        if delta_low > delta_high {
            return Err(DomainError::InvalidParameter(format!(
                "delta_low {delta_low} exceeds delta_high {delta_high}"
            )));
        }
        Ok(Self {
            delta_low,
            delta_high,
        })
    }

    pub fn width(&self) -> f64 {
        self.delta_high - self.delta_low
    }
}
