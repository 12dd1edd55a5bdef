//! Random force lists that respect the contact constraints.
//!
//! The first `M - 1` contacts are drawn from sector-banded impact angles,
//! a shared base magnitude with per-force spread, and normal tangent
//! angles. The last contact is solved in closed form so that the net
//! force and the net torque vanish; lists that violate any constraint are
//! discarded and redrawn.

use std::f64::consts::{FRAC_PI_2, PI, TAU};
use std::fmt;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::elastic::{circular_distance, net_force, normalize_angle, torque_residual, ForceList, ForceTriplet, MAX_FORCES, MIN_FORCES};
use crate::error::{Error, Result};
use crate::rng::{self, Domain};

/// Largest accepted `|Σf|` (N) and `|Σ F sin τ|` (N) on a valid list.
pub const BALANCE_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SamplerConfig {
    /// Rate of the exponential law for the base magnitude.
    pub magnitude_rate: f64,
    /// Truncation interval `[F_min, F_max]` in Newtons; also the accepted range.
    pub magnitude_range: [f64; 2],
    /// Standard deviation of each magnitude relative to the base magnitude.
    pub magnitude_rel_sd: f64,
    /// Standard deviation of the tangent angle (radians).
    pub tau_sd: f64,
    /// Minimum circular distance between impact angles (radians).
    pub min_separation: f64,
    /// Largest accepted `|τ|` (radians).
    pub tau_bound: f64,
    /// Inclusive range of force counts.
    pub m_range: [usize; 2],
    pub seed: u64,
    /// Rejection-loop cap per list.
    pub max_attempts: u64,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        SamplerConfig {
            magnitude_rate: 0.5,
            magnitude_range: [0.01, 0.9],
            magnitude_rel_sd: 0.2,
            tau_sd: PI / 12.0,
            min_separation: PI / 6.0,
            tau_bound: FRAC_PI_2,
            m_range: [MIN_FORCES, MAX_FORCES],
            seed: 0,
            max_attempts: 100_000,
        }
    }
}

impl SamplerConfig {
    pub fn validate(&self) -> Result<()> {
        let [lo, hi] = self.magnitude_range;
        if !(lo > 0.0 && lo < hi && hi.is_finite()) {
            return Err(Error::Config(format!("magnitude_range must satisfy 0 < min < max, got [{lo}, {hi}]")));
        }
        if !(self.magnitude_rate > 0.0 && self.magnitude_rate.is_finite()) {
            return Err(Error::Config("magnitude_rate must be positive".into()));
        }
        if !(self.magnitude_rel_sd >= 0.0) {
            return Err(Error::Config("magnitude_rel_sd must be non-negative".into()));
        }
        if !(self.tau_sd > 0.0) {
            return Err(Error::Config("tau_sd must be positive".into()));
        }
        if !(self.tau_bound > 0.0 && self.tau_bound <= FRAC_PI_2) {
            return Err(Error::Config("tau_bound must lie in (0, π/2]".into()));
        }
        let [m_lo, m_hi] = self.m_range;
        if !(MIN_FORCES <= m_lo && m_lo <= m_hi && m_hi <= MAX_FORCES) {
            return Err(Error::Config(format!(
                "m_range must lie within [{MIN_FORCES}, {MAX_FORCES}], got [{m_lo}, {m_hi}]"
            )));
        }
        if !(self.min_separation >= 0.0 && self.min_separation * m_hi as f64 <= TAU) {
            return Err(Error::Config("min_separation * max M must not exceed 2π".into()));
        }
        if self.max_attempts == 0 {
            return Err(Error::Config("max_attempts must be positive".into()));
        }
        Ok(())
    }

    pub fn force_counts(&self) -> std::ops::RangeInclusive<usize> {
        self.m_range[0]..=self.m_range[1]
    }
}

/// The first constraint a force list breaks.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Violation {
    Count(usize),
    NonFinite { index: usize },
    Magnitude { index: usize, value: f64 },
    TangentAngle { index: usize, value: f64 },
    Separation { first: usize, second: usize, distance: f64 },
    /// The torque of the first `M - 1` forces cannot be cancelled by the last one.
    TorqueUnreachable { ratio: f64 },
    ForceBalance { residual: f64 },
    TorqueBalance { residual: f64 },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match *self {
            Violation::Count(m) => write!(f, "force count {m} outside [{MIN_FORCES}, {MAX_FORCES}]"),
            Violation::NonFinite { index } => write!(f, "force {index} has a non-finite component"),
            Violation::Magnitude { index, value } => {
                write!(f, "magnitude of force {index} ({value} N) outside the allowed range")
            }
            Violation::TangentAngle { index, value } => {
                write!(f, "tangent angle of force {index} ({value} rad) exceeds the bound")
            }
            Violation::Separation { first, second, distance } => write!(
                f,
                "separation between forces {first} and {second} is {distance} rad, below the minimum"
            ),
            Violation::TorqueUnreachable { ratio } => {
                write!(f, "torque balance unreachable (|sin τ_M| would be {ratio})")
            }
            Violation::ForceBalance { residual } => {
                write!(f, "force balance violated: |Σf| = {residual:e} N")
            }
            Violation::TorqueBalance { residual } => {
                write!(f, "torque balance violated: |Σ F sin τ| = {residual:e} N")
            }
        }
    }
}

/// Checks every contact constraint and returns the first one violated.
pub fn validate_force_list(forces: &[ForceTriplet], config: &SamplerConfig) -> std::result::Result<(), Violation> {
    if !(MIN_FORCES..=MAX_FORCES).contains(&forces.len()) {
        return Err(Violation::Count(forces.len()));
    }
    for (index, f) in forces.iter().enumerate() {
        if !(f.magnitude.is_finite() && f.impact_angle.is_finite() && f.tangent_angle.is_finite()) {
            return Err(Violation::NonFinite { index });
        }
    }
    let [lo, hi] = config.magnitude_range;
    for (index, f) in forces.iter().enumerate() {
        if !(lo..=hi).contains(&f.magnitude) {
            return Err(Violation::Magnitude { index, value: f.magnitude });
        }
    }
    for (index, f) in forces.iter().enumerate() {
        if f.tangent_angle.abs() > config.tau_bound {
            return Err(Violation::TangentAngle { index, value: f.tangent_angle });
        }
    }
    if let Some(v) = separation_violation(forces, config.min_separation) {
        return Err(v);
    }
    let (sx, sy) = net_force(forces);
    let residual = sx.hypot(sy);
    if residual > BALANCE_TOLERANCE {
        return Err(Violation::ForceBalance { residual });
    }
    let residual = torque_residual(forces).abs();
    if residual > BALANCE_TOLERANCE {
        return Err(Violation::TorqueBalance { residual });
    }
    Ok(())
}

pub(crate) fn separation_violation(forces: &[ForceTriplet], min_separation: f64) -> Option<Violation> {
    for i in 0..forces.len() {
        for j in i + 1..forces.len() {
            let distance = circular_distance(forces[i].impact_angle, forces[j].impact_angle);
            if distance < min_separation {
                return Some(Violation::Separation { first: i, second: j, distance });
            }
        }
    }
    None
}

/// Inverse CDF of the truncated exponential base-magnitude law.
pub fn truncated_exponential_quantile(u: f64, config: &SamplerConfig) -> f64 {
    let [lo, hi] = config.magnitude_range;
    let rate = config.magnitude_rate;
    let mass = -(-rate * (hi - lo)).exp_m1();
    let f = lo - (-u * mass).ln_1p() / rate;
    f.clamp(lo, hi)
}

/// Analytic mean of the truncated exponential law.
pub fn truncated_exponential_mean(config: &SamplerConfig) -> f64 {
    let [lo, hi] = config.magnitude_range;
    let rate = config.magnitude_rate;
    let w = hi - lo;
    let tail = (-rate * w).exp();
    lo + 1.0 / rate - w * tail / (1.0 - tail)
}

/// Base magnitude `F` shared by the first `M - 1` forces of a list.
pub fn sample_base_magnitude<R: Rng + ?Sized>(rng: &mut R, config: &SamplerConfig) -> f64 {
    truncated_exponential_quantile(rng.random::<f64>(), config)
}

/// Impact-angle band `[lo, hi]` of the `i`-th force (1-based) for `m` forces.
pub fn sector_band(i: usize, m: usize, config: &SamplerConfig) -> (f64, f64) {
    let margin = 0.5 * config.min_separation;
    let width = TAU / m as f64;
    ((i - 1) as f64 * width + margin, i as f64 * width - margin)
}

/// Draws the first `m - 1` forces of a list, in sector order.
pub fn sample_partial_list<R: Rng + ?Sized>(m: usize, config: &SamplerConfig, rng: &mut R) -> Vec<ForceTriplet> {
    assert!((MIN_FORCES..=MAX_FORCES).contains(&m), "force count {m} out of range");
    let base = sample_base_magnitude(rng, config);
    let magnitude = Normal::new(base, config.magnitude_rel_sd * base).expect("finite spread");
    let tangent = Normal::new(0.0, config.tau_sd).expect("finite spread");
    (1..m)
        .map(|i| {
            let (lo, hi) = sector_band(i, m, config);
            let impact_angle = rng.random_range(lo..=hi);
            let mut f = magnitude.sample(rng);
            while f <= 0.0 {
                f = magnitude.sample(rng);
            }
            ForceTriplet {
                magnitude: f,
                impact_angle,
                tangent_angle: tangent.sample(rng),
            }
        })
        .collect()
}

/// Solves for the last force that balances force and torque.
///
/// With `v = -Σ f_i`, the closing force has magnitude `|v|`, tangent angle
/// `asin(-Σ F_i sin τ_i / |v|)` and sits where its direction matches `v`.
pub fn complete_balance(partial: &[ForceTriplet], config: &SamplerConfig) -> std::result::Result<ForceTriplet, Violation> {
    let (sx, sy) = net_force(partial);
    let (vx, vy) = (-sx, -sy);
    let magnitude = vx.hypot(vy);
    let [lo, hi] = config.magnitude_range;
    if !(lo..=hi).contains(&magnitude) {
        return Err(Violation::Magnitude { index: partial.len(), value: magnitude });
    }
    let ratio = -torque_residual(partial) / magnitude;
    if ratio.abs() > 1.0 {
        return Err(Violation::TorqueUnreachable { ratio });
    }
    let tangent_angle = ratio.asin();
    let closing = ForceTriplet {
        magnitude,
        impact_angle: normalize_angle(vy.atan2(vx) - PI - tangent_angle),
        tangent_angle,
    };
    for (i, f) in partial.iter().enumerate() {
        let distance = circular_distance(f.impact_angle, closing.impact_angle);
        if distance < config.min_separation {
            return Err(Violation::Separation { first: i, second: partial.len(), distance });
        }
    }
    Ok(closing)
}

/// An accepted list and how many draws it took.
#[derive(Debug, Clone, PartialEq)]
pub struct SampledList {
    pub forces: ForceList,
    pub attempts: u64,
}

/// Rejection loop: partial draw, closure, validation.
pub fn sample_force_list<R: Rng + ?Sized>(m: usize, config: &SamplerConfig, rng: &mut R) -> Result<SampledList> {
    if !(MIN_FORCES..=MAX_FORCES).contains(&m) {
        return Err(Error::Domain(format!("force count {m} outside [{MIN_FORCES}, {MAX_FORCES}]")));
    }
    for attempts in 1..=config.max_attempts {
        let mut forces = sample_partial_list(m, config, rng);
        let Ok(closing) = complete_balance(&forces, config) else {
            continue;
        };
        forces.push(closing);
        if validate_force_list(&forces, config).is_ok() {
            let forces = ForceList::new(forces)?;
            return Ok(SampledList { forces, attempts });
        }
    }
    Err(Error::SamplerExhausted { m, attempts: config.max_attempts })
}

/// The `index`-th list for `m` forces under `config.seed`, independent of
/// any other draw.
pub fn sample_indexed(m: usize, index: u64, config: &SamplerConfig) -> Result<SampledList> {
    let mut rng = rng::stream(config.seed, Domain::ForceList, m, index);
    sample_force_list(m, config, &mut rng)
}
