//! Closed-form stress and photoelastic intensity inside a loaded disk.
//!
//! Every contact contributes a radial stress field centred on its impact
//! point: the half-plane point-load solution plus a constant radial term
//! that removes the boundary traction of a normal load. Contributions are
//! realised as `σ_rr · (e_r ⊗ e_r)` in Cartesian coordinates and summed.
//!
//! Stresses are thickness-scaled (units N/m): the plate thickness cancels
//! against the thickness in the optical law, so only the combined fringe
//! coefficient is needed.

use std::f64::consts::{FRAC_PI_2, PI, TAU};
use std::ops::{Add, AddAssign, Mul};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Fewest contacts a particle in equilibrium can carry.
pub const MIN_FORCES: usize = 2;
/// Most contacts considered for a bi-disperse packing.
pub const MAX_FORCES: usize = 6;

/// Distance below which the contact singularity is saturated.
pub const R_MIN: f64 = 1e-12;

/// Wraps an angle into `[0, 2π)`.
pub fn normalize_angle(angle: f64) -> f64 {
    let a = angle.rem_euclid(TAU);
    // rem_euclid can round up to exactly TAU for tiny negative inputs
    if a >= TAU {
        0.0
    } else {
        a
    }
}

/// Shortest distance between two angles on the circle, in `[0, π]`.
pub fn circular_distance(a: f64, b: f64) -> f64 {
    let d = (a - b).rem_euclid(TAU);
    d.min(TAU - d)
}

/// One contact force: magnitude, impact angle and tangent angle.
///
/// The impact point is `R (cos α, sin α)` and the force points along
/// `(cos(α + π + τ), sin(α + π + τ))`, i.e. `τ = 0` pushes straight at the
/// centre.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(from = "[f64; 3]", into = "[f64; 3]")]
pub struct ForceTriplet {
    /// Newtons.
    pub magnitude: f64,
    /// Radians counterclockwise from the x-axis, in `[0, 2π)`.
    pub impact_angle: f64,
    /// Radians, deviation from the inward radius.
    pub tangent_angle: f64,
}

impl From<[f64; 3]> for ForceTriplet {
    fn from(v: [f64; 3]) -> Self {
        ForceTriplet {
            magnitude: v[0],
            impact_angle: v[1],
            tangent_angle: v[2],
        }
    }
}

impl From<ForceTriplet> for [f64; 3] {
    fn from(f: ForceTriplet) -> Self {
        [f.magnitude, f.impact_angle, f.tangent_angle]
    }
}

impl ForceTriplet {
    /// Checked constructor; the impact angle is wrapped into `[0, 2π)`.
    pub fn new(magnitude: f64, impact_angle: f64, tangent_angle: f64) -> Result<Self> {
        if !(magnitude.is_finite() && magnitude > 0.0) {
            return Err(Error::Domain(format!(
                "force magnitude must be positive, got {magnitude}"
            )));
        }
        if !impact_angle.is_finite() {
            return Err(Error::Domain("impact angle must be finite".into()));
        }
        if !(tangent_angle.abs() <= FRAC_PI_2) {
            return Err(Error::Domain(format!(
                "tangent angle {tangent_angle} outside [-π/2, π/2]"
            )));
        }
        Ok(ForceTriplet {
            magnitude,
            impact_angle: normalize_angle(impact_angle),
            tangent_angle,
        })
    }

    /// Unit direction of the force.
    pub fn direction(&self) -> (f64, f64) {
        let phi = self.impact_angle + PI + self.tangent_angle;
        (phi.cos(), phi.sin())
    }

    /// Force vector in Newtons.
    pub fn vector(&self) -> (f64, f64) {
        let (dx, dy) = self.direction();
        (self.magnitude * dx, self.magnitude * dy)
    }

    pub fn impact_point(&self, radius: f64) -> (f64, f64) {
        (
            radius * self.impact_angle.cos(),
            radius * self.impact_angle.sin(),
        )
    }

    /// The same contact after a rigid rotation of the particle by `delta`.
    pub fn rotated(&self, delta: f64) -> Self {
        ForceTriplet {
            impact_angle: normalize_angle(self.impact_angle + delta),
            ..*self
        }
    }
}

/// The forces acting on one particle, kept in ascending impact-angle order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ForceList {
    forces: Vec<ForceTriplet>,
}

impl ForceList {
    /// Builds a canonical list. Only the count is checked here; physical
    /// constraints are the job of [`crate::sampler::validate_force_list`].
    pub fn new(mut forces: Vec<ForceTriplet>) -> Result<Self> {
        if !(MIN_FORCES..=MAX_FORCES).contains(&forces.len()) {
            return Err(Error::Domain(format!(
                "force count {} outside [{MIN_FORCES}, {MAX_FORCES}]",
                forces.len()
            )));
        }
        for f in &mut forces {
            f.impact_angle = normalize_angle(f.impact_angle);
        }
        forces.sort_by(|a, b| a.impact_angle.total_cmp(&b.impact_angle));
        Ok(ForceList { forces })
    }

    pub fn len(&self) -> usize {
        self.forces.len()
    }

    pub fn is_empty(&self) -> bool {
        self.forces.is_empty()
    }

    pub fn as_slice(&self) -> &[ForceTriplet] {
        &self.forces
    }

    pub fn iter(&self) -> std::slice::Iter<'_, ForceTriplet> {
        self.forces.iter()
    }

    pub fn into_vec(self) -> Vec<ForceTriplet> {
        self.forces
    }

    /// Rigid rotation by `delta`, re-sorted into canonical order.
    pub fn rotated(&self, delta: f64) -> Self {
        let forces = self.forces.iter().map(|f| f.rotated(delta)).collect();
        ForceList::new(forces).expect("rotation preserves the force count")
    }

    /// All magnitudes multiplied by `k` (which must be positive).
    pub fn scaled(&self, k: f64) -> Self {
        let forces = self
            .forces
            .iter()
            .map(|f| ForceTriplet {
                magnitude: f.magnitude * k,
                ..*f
            })
            .collect();
        ForceList { forces }
    }

    pub fn mean_magnitude(&self) -> f64 {
        self.forces.iter().map(|f| f.magnitude).sum::<f64>() / self.forces.len() as f64
    }

    /// Vector sum of the forces.
    pub fn net_force(&self) -> (f64, f64) {
        net_force(&self.forces)
    }

    /// `Σ F_i sin τ_i`; the torque about the centre is `-R` times this.
    pub fn torque_residual(&self) -> f64 {
        torque_residual(&self.forces)
    }
}

impl<'a> IntoIterator for &'a ForceList {
    type Item = &'a ForceTriplet;
    type IntoIter = std::slice::Iter<'a, ForceTriplet>;

    fn into_iter(self) -> Self::IntoIter {
        self.forces.iter()
    }
}

pub fn net_force(forces: &[ForceTriplet]) -> (f64, f64) {
    forces.iter().fold((0.0, 0.0), |(sx, sy), f| {
        let (fx, fy) = f.vector();
        (sx + fx, sy + fy)
    })
}

pub fn torque_residual(forces: &[ForceTriplet]) -> f64 {
    forces
        .iter()
        .map(|f| f.magnitude * f.tangent_angle.sin())
        .sum()
}

/// Geometry and optical constants of a particle.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParticleSpec {
    /// Meters.
    pub radius: f64,
    /// Combined `h C(λ) / λ`, multiplies the thickness-scaled stress difference.
    #[serde(default = "default_fringe_coefficient")]
    pub fringe_coefficient: f64,
    /// Peak gray value `I_0`.
    #[serde(default = "default_intensity_scale")]
    pub intensity_scale: f64,
}

fn default_fringe_coefficient() -> f64 {
    0.18
}

fn default_intensity_scale() -> f64 {
    255.0
}

impl Default for ParticleSpec {
    fn default() -> Self {
        ParticleSpec {
            radius: 0.008,
            fringe_coefficient: default_fringe_coefficient(),
            intensity_scale: default_intensity_scale(),
        }
    }
}

impl ParticleSpec {
    pub fn with_radius(radius: f64) -> Result<Self> {
        let p = ParticleSpec {
            radius,
            ..Default::default()
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.radius.is_finite() && self.radius > 0.0) {
            return Err(Error::Domain(format!("radius must be positive, got {}", self.radius)));
        }
        if !(self.fringe_coefficient.is_finite() && self.fringe_coefficient > 0.0) {
            return Err(Error::Domain("fringe coefficient must be positive".into()));
        }
        if !(self.intensity_scale > 0.0 && self.intensity_scale <= 255.0) {
            return Err(Error::Domain("intensity scale must lie in (0, 255]".into()));
        }
        Ok(())
    }
}

/// Symmetric 2×2 thickness-scaled stress (N/m).
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct StressTensor2D {
    pub sxx: f64,
    pub sxy: f64,
    pub syy: f64,
}

impl StressTensor2D {
    pub const ZERO: StressTensor2D = StressTensor2D {
        sxx: 0.0,
        sxy: 0.0,
        syy: 0.0,
    };

    pub fn new(sxx: f64, sxy: f64, syy: f64) -> Self {
        StressTensor2D { sxx, sxy, syy }
    }

    /// `Q σ Qᵀ` with `Q` the counterclockwise rotation by `delta`.
    pub fn rotated(&self, delta: f64) -> Self {
        let (s, c) = delta.sin_cos();
        StressTensor2D {
            sxx: c * c * self.sxx - 2.0 * c * s * self.sxy + s * s * self.syy,
            sxy: c * s * (self.sxx - self.syy) + (c * c - s * s) * self.sxy,
            syy: s * s * self.sxx + 2.0 * c * s * self.sxy + c * c * self.syy,
        }
    }

    /// Traction vector `σ · n`.
    pub fn traction(&self, n: (f64, f64)) -> (f64, f64) {
        (
            self.sxx * n.0 + self.sxy * n.1,
            self.sxy * n.0 + self.syy * n.1,
        )
    }

    /// Frobenius norm.
    pub fn norm(&self) -> f64 {
        (self.sxx * self.sxx + 2.0 * self.sxy * self.sxy + self.syy * self.syy).sqrt()
    }

    /// Eigenvalues `(σ₊, σ₋)`.
    pub fn principal_stresses(&self) -> (f64, f64) {
        let mean = 0.5 * (self.sxx + self.syy);
        let half = 0.5 * principal_stress_difference(self);
        (mean + half, mean - half)
    }
}

impl Add for StressTensor2D {
    type Output = StressTensor2D;

    fn add(self, o: StressTensor2D) -> StressTensor2D {
        StressTensor2D {
            sxx: self.sxx + o.sxx,
            sxy: self.sxy + o.sxy,
            syy: self.syy + o.syy,
        }
    }
}

impl AddAssign for StressTensor2D {
    fn add_assign(&mut self, o: StressTensor2D) {
        self.sxx += o.sxx;
        self.sxy += o.sxy;
        self.syy += o.syy;
    }
}

impl Mul<f64> for StressTensor2D {
    type Output = StressTensor2D;

    fn mul(self, k: f64) -> StressTensor2D {
        StressTensor2D {
            sxx: self.sxx * k,
            sxy: self.sxy * k,
            syy: self.syy * k,
        }
    }
}

/// Radial stress of a point load on a half-plane, `-2F cos θ / (π r)`.
///
/// `theta` is measured from the load direction; the hoop and shear
/// components of this solution vanish identically.
pub fn flamant_radial_stress(r: f64, theta: f64, force: f64) -> Result<f64> {
    if !(r > 0.0) {
        return Err(Error::Domain(format!(
            "radial distance must be positive, got {r}"
        )));
    }
    Ok(-2.0 * force * theta.cos() / (PI * r))
}

/// Polar coordinates `(r_i, θ_i)` of `point` around the impact point of
/// `force`; `θ_i` is the signed angle from the force direction to the
/// radial vector, counterclockwise positive.
pub fn contact_polar(point: (f64, f64), force: &ForceTriplet, particle: &ParticleSpec) -> (f64, f64) {
    let (ox, oy) = force.impact_point(particle.radius);
    let (dx, dy) = (point.0 - ox, point.1 - oy);
    let (fx, fy) = force.direction();
    let r = dx.hypot(dy);
    let theta = (fx * dy - fy * dx).atan2(fx * dx + fy * dy);
    (r, theta)
}

/// A contact with its geometry resolved once, for repeated evaluation.
#[derive(Debug, Clone, Copy)]
pub struct PreparedForce {
    ox: f64,
    oy: f64,
    dir_x: f64,
    dir_y: f64,
    inward_x: f64,
    inward_y: f64,
    two_f_over_pi: f64,
    correction: f64,
}

impl PreparedForce {
    pub fn new(force: &ForceTriplet, particle: &ParticleSpec) -> Self {
        let (ox, oy) = force.impact_point(particle.radius);
        let (dir_x, dir_y) = force.direction();
        let (s, c) = force.impact_angle.sin_cos();
        PreparedForce {
            ox,
            oy,
            dir_x,
            dir_y,
            inward_x: -c,
            inward_y: -s,
            two_f_over_pi: 2.0 * force.magnitude / PI,
            correction: force.magnitude * force.tangent_angle.cos() / (PI * particle.radius),
        }
    }

    /// Cartesian stress at `(x, y)` contributed by this contact.
    #[inline]
    pub fn stress_at(&self, x: f64, y: f64) -> StressTensor2D {
        let dx = x - self.ox;
        let dy = y - self.oy;
        let r2 = dx * dx + dy * dy;
        if r2 < R_MIN * R_MIN {
            return self.saturated(dx, dy, r2);
        }
        // dir · Δ = r cos θ, so σ_rr = -(2F/π)(dir·Δ)/r² + F cos τ / (π R)
        let srr = -self.two_f_over_pi * (self.dir_x * dx + self.dir_y * dy) / r2 + self.correction;
        let k = srr / r2;
        StressTensor2D {
            sxx: k * dx * dx,
            sxy: k * dx * dy,
            syy: k * dy * dy,
        }
    }

    #[cold]
    fn saturated(&self, dx: f64, dy: f64, r2: f64) -> StressTensor2D {
        let (ex, ey) = if r2 > 0.0 {
            let r = r2.sqrt();
            (dx / r, dy / r)
        } else {
            (self.inward_x, self.inward_y)
        };
        let srr = -self.two_f_over_pi * (self.dir_x * ex + self.dir_y * ey) / R_MIN + self.correction;
        StressTensor2D {
            sxx: srr * ex * ex,
            sxy: srr * ex * ey,
            syy: srr * ey * ey,
        }
    }
}

/// The superposed stress field of a set of contacts.
#[derive(Debug, Clone)]
pub struct StressField {
    forces: Vec<PreparedForce>,
    particle: ParticleSpec,
    phase_scale: f64,
}

impl StressField {
    pub fn new(forces: &[ForceTriplet], particle: &ParticleSpec) -> Self {
        StressField {
            forces: forces.iter().map(|f| PreparedForce::new(f, particle)).collect(),
            particle: *particle,
            phase_scale: PI * particle.fringe_coefficient,
        }
    }

    pub fn particle(&self) -> &ParticleSpec {
        &self.particle
    }

    #[inline]
    pub fn stress_at(&self, x: f64, y: f64) -> StressTensor2D {
        let mut acc = StressTensor2D::ZERO;
        for f in &self.forces {
            acc += f.stress_at(x, y);
        }
        acc
    }

    /// Continuous intensity in `[0, I_0]`.
    #[inline]
    pub fn intensity_at(&self, x: f64, y: f64) -> f64 {
        let s = self.stress_at(x, y);
        let phase = self.phase_scale * principal_stress_difference(&s);
        let v = phase.sin();
        self.particle.intensity_scale * v * v
    }
}

/// Stress at `point` due to one contact.
pub fn contact_stress(point: (f64, f64), force: &ForceTriplet, particle: &ParticleSpec) -> StressTensor2D {
    PreparedForce::new(force, particle).stress_at(point.0, point.1)
}

/// Superposed stress of all contacts in `forces`.
pub fn total_stress(point: (f64, f64), forces: &ForceList, particle: &ParticleSpec) -> StressTensor2D {
    StressField::new(forces.as_slice(), particle).stress_at(point.0, point.1)
}

/// `σ₊ − σ₋ = sqrt((σxx − σyy)² + 4 σxy²)`.
#[inline]
pub fn principal_stress_difference(s: &StressTensor2D) -> f64 {
    let d = s.sxx - s.syy;
    (d * d + 4.0 * s.sxy * s.sxy).sqrt()
}

/// `I_0 sin²(π f Δσ)`.
pub fn intensity(stress_diff: f64, particle: &ParticleSpec) -> f64 {
    let v = (PI * particle.fringe_coefficient * stress_diff).sin();
    particle.intensity_scale * v * v
}

/// Central-difference divergence `(∂σxx/∂x + ∂σxy/∂y, ∂σxy/∂x + ∂σyy/∂y)`.
pub fn stress_divergence(field: &StressField, x: f64, y: f64, step: f64) -> (f64, f64) {
    let xp = field.stress_at(x + step, y);
    let xm = field.stress_at(x - step, y);
    let yp = field.stress_at(x, y + step);
    let ym = field.stress_at(x, y - step);
    let inv = 1.0 / (2.0 * step);
    (
        (xp.sxx - xm.sxx) * inv + (yp.sxy - ym.sxy) * inv,
        (xp.sxy - xm.sxy) * inv + (yp.syy - ym.syy) * inv,
    )
}
