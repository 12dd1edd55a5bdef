//! Starting points from local gradient statistics.

use std::f64::consts::{PI, TAU};

use crate::elastic::{normalize_angle, ForceList, ForceTriplet, ParticleSpec};
use crate::error::{Error, Result};
use crate::render::{render_forces, ImageSpec, IntensityImage};

/// Angular bins of the rim profile.
pub const PROFILE_BINS: usize = 72;
/// Annulus used for the rim profile, as fractions of the disk radius.
pub const ANNULUS: (f64, f64) = (0.6, 0.95);
const CALIBRATION_POINTS: usize = 20;

/// Squared central-difference gradient. Only pixels whose four neighbours
/// are inside the disk get a value; the rest are `None`.
pub fn gradient_energy(img: &IntensityImage) -> Vec<Option<f64>> {
    let (w, h) = (img.width, img.height);
    let radius = 0.5 * w.min(h) as f64;
    let inside = |c: isize, r: isize| -> bool {
        if c < 0 || r < 0 || c >= w as isize || r >= h as isize {
            return false;
        }
        let x = c as f64 + 0.5 - 0.5 * w as f64;
        let y = 0.5 * h as f64 - r as f64 - 0.5;
        x * x + y * y <= radius * radius
    };
    let at = |c: usize, r: usize| img.pixels[r * w + c] as f64;
    let mut out = vec![None; w * h];
    for r in 0..h {
        for c in 0..w {
            let (ci, ri) = (c as isize, r as isize);
            if inside(ci - 1, ri) && inside(ci + 1, ri) && inside(ci, ri - 1) && inside(ci, ri + 1) {
                let gx = 0.5 * (at(c + 1, r) - at(c - 1, r));
                let gy = 0.5 * (at(c, r - 1) - at(c, r + 1));
                out[r * w + c] = Some(gx * gx + gy * gy);
            }
        }
    }
    out
}

/// Mean of the defined entries of `g2`, or 0 if there are none.
pub fn mean_energy(g2: &[Option<f64>]) -> f64 {
    let (sum, n) = g2.iter().flatten().fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    if n == 0 { 0.0 } else { sum / n as f64 }
}

/// Circular Gaussian width of the profile smoothing, in bins.
pub const PROFILE_SMOOTHING: f64 = 2.5;

/// Mean `G²` per angular bin over the rim annulus, circularly smoothed
/// with a Gaussian of [`PROFILE_SMOOTHING`] bins. Bin `k` is centred on
/// `(k + 0.5) · 2π / bins`.
pub fn angular_profile(img: &IntensityImage, g2: &[Option<f64>]) -> Vec<f64> {
    let (w, h) = (img.width, img.height);
    let radius = 0.5 * w.min(h) as f64;
    let (lo, hi) = (ANNULUS.0 * radius, ANNULUS.1 * radius);
    let mut sum = vec![0.0; PROFILE_BINS];
    let mut count = vec![0usize; PROFILE_BINS];
    for r in 0..h {
        for c in 0..w {
            let Some(v) = g2[r * w + c] else { continue };
            let x = c as f64 + 0.5 - 0.5 * w as f64;
            let y = 0.5 * h as f64 - r as f64 - 0.5;
            let d = x.hypot(y);
            if d < lo || d > hi {
                continue;
            }
            let k = ((normalize_angle(y.atan2(x)) / TAU * PROFILE_BINS as f64) as usize).min(PROFILE_BINS - 1);
            sum[k] += v;
            count[k] += 1;
        }
    }
    let raw: Vec<f64> = sum.iter().zip(&count).map(|(s, &n)| if n == 0 { 0.0 } else { s / n as f64 }).collect();
    let n = PROFILE_BINS as isize;
    let reach = (3.0 * PROFILE_SMOOTHING).ceil() as isize;
    let weights: Vec<f64> = (-reach..=reach)
        .map(|d| (-0.5 * (d as f64 / PROFILE_SMOOTHING).powi(2)).exp())
        .collect();
    let norm: f64 = weights.iter().sum();
    (0..n)
        .map(|k| {
            (-reach..=reach)
                .zip(&weights)
                .map(|(d, w)| w * raw[(k + d).rem_euclid(n) as usize])
                .sum::<f64>()
                / norm
        })
        .collect()
}

fn bin_angle(k: f64) -> f64 {
    normalize_angle((k + 0.5) * TAU / PROFILE_BINS as f64)
}

/// Circular runs of `profile` above the mid level between its minimum and
/// maximum, as `(weighted centre angle, mass)` sorted by mass, largest first.
///
/// Strong contacts alias the fringes into a broad plateau whose edges carry
/// the largest gradient, so the centre of the run tracks the contact better
/// than the maximum does.
pub fn profile_arcs(profile: &[f64]) -> Vec<(f64, f64)> {
    let n = profile.len();
    let lo = profile.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = profile.iter().copied().fold(0.0, f64::max);
    if !(hi > lo) {
        return Vec::new();
    }
    let level = 0.5 * (lo + hi);
    let above = |k: usize| profile[k % n] > level;
    // start scanning just after a bin below the level so no run wraps
    let Some(origin) = (0..n).find(|&k| !above(k)) else { return Vec::new() };
    let mut arcs = Vec::new();
    let mut k = 1;
    while k <= n {
        if !above(origin + k) {
            k += 1;
            continue;
        }
        let (mut sx, mut sy, mut mass) = (0.0, 0.0, 0.0);
        while k <= n && above(origin + k) {
            let idx = (origin + k) % n;
            let w = profile[idx] - level;
            let (s, c) = bin_angle(idx as f64).sin_cos();
            sx += w * c;
            sy += w * s;
            mass += w;
            k += 1;
        }
        arcs.push((normalize_angle(sy.atan2(sx)), mass));
    }
    arcs.sort_by(|a, b| b.1.total_cmp(&a.1));
    arcs
}

/// Angles of `m` contact candidates at least `min_separation` apart: the
/// centres of [`profile_arcs`] first, then the strongest local maxima.
/// Returns `None` when fewer than `m` qualify.
pub fn pick_peaks(profile: &[f64], m: usize, min_separation: f64) -> Option<Vec<f64>> {
    let n = profile.len();
    let mut maxima: Vec<(usize, f64)> = (0..n)
        .filter_map(|k| {
            let (l, v, r) = (profile[(k + n - 1) % n], profile[k], profile[(k + 1) % n]);
            (v > 0.0 && v >= l && v > r).then(|| {
                let denom = l - 2.0 * v + r;
                let shift = if denom < 0.0 { (0.5 * (l - r) / denom).clamp(-0.5, 0.5) } else { 0.0 };
                (k, bin_angle(k as f64 + shift))
            })
        })
        .collect();
    maxima.sort_by(|a, b| profile[b.0].total_cmp(&profile[a.0]).then(a.0.cmp(&b.0)));
    let candidates = profile_arcs(profile).into_iter().map(|a| a.0).chain(maxima.into_iter().map(|m| m.1));
    let mut chosen: Vec<f64> = Vec::with_capacity(m);
    for angle in candidates {
        if chosen.iter().all(|&c| crate::elastic::circular_distance(c, angle) >= min_separation) {
            chosen.push(angle);
            if chosen.len() == m {
                return Some(chosen);
            }
        }
    }
    None
}

/// Mean `G²` of a diametral pair as a function of the load, made
/// non-decreasing, for turning image energy into a magnitude.
#[derive(Debug, Clone, PartialEq)]
pub struct CalibrationCurve {
    pub magnitudes: Vec<f64>,
    pub energies: Vec<f64>,
}

impl CalibrationCurve {
    /// Sweeps diametral loads across `magnitude_range` through the forward
    /// model at the given resolution.
    pub fn build(particle: &ParticleSpec, image: &ImageSpec, magnitude_range: [f64; 2]) -> Result<Self> {
        let [lo, hi] = magnitude_range;
        if !(lo > 0.0 && hi > lo) {
            return Err(Error::Config(format!("bad magnitude range [{lo}, {hi}]")));
        }
        let mut magnitudes = Vec::with_capacity(CALIBRATION_POINTS);
        let mut energies = Vec::with_capacity(CALIBRATION_POINTS);
        let mut running = 0.0f64;
        for i in 0..CALIBRATION_POINTS {
            let f = lo + (hi - lo) * i as f64 / (CALIBRATION_POINTS - 1) as f64;
            let pair = [ForceTriplet { magnitude: f, impact_angle: 0.0, tangent_angle: 0.0 }, ForceTriplet {
                magnitude: f,
                impact_angle: PI,
                tangent_angle: 0.0,
            }];
            let img = render_forces(&pair, particle, image);
            running = running.max(mean_energy(&gradient_energy(&img)));
            magnitudes.push(f);
            energies.push(running);
        }
        Ok(CalibrationCurve { magnitudes, energies })
    }

    /// Smallest magnitude whose calibrated energy reaches `energy`,
    /// interpolated linearly and clamped to the sweep.
    pub fn magnitude_for(&self, energy: f64) -> f64 {
        let (m, e) = (&self.magnitudes, &self.energies);
        if !(energy > e[0]) {
            return m[0];
        }
        for i in 1..e.len() {
            if energy <= e[i] {
                let t = if e[i] > e[i - 1] { (energy - e[i - 1]) / (e[i] - e[i - 1]) } else { 0.0 };
                return m[i - 1] + t * (m[i] - m[i - 1]);
            }
        }
        *m.last().unwrap()
    }
}

/// Initial contacts for a fit with `m` forces: rim-profile peaks for the
/// impact angles, `τ = 0`, and a shared magnitude from the calibration.
pub fn initial_guess(img: &IntensityImage, m: usize, calibration: &CalibrationCurve, min_separation: f64) -> Result<ForceList> {
    let g2 = gradient_energy(img);
    let profile = angular_profile(img, &g2);
    let angles = pick_peaks(&profile, m, min_separation)
        .unwrap_or_else(|| (0..m).map(|k| TAU * k as f64 / m as f64).collect());
    // a pair's energy is spread over two contacts
    let per_pair = mean_energy(&g2) * 2.0 / m as f64;
    let magnitude = calibration.magnitude_for(per_pair);
    ForceList::new(
        angles
            .into_iter()
            .map(|a| ForceTriplet { magnitude, impact_angle: a, tangent_angle: 0.0 })
            .collect(),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::elastic::circular_distance;

    fn calibration() -> CalibrationCurve {
        CalibrationCurve::build(&ParticleSpec::default(), &ImageSpec::default(), [0.01, 0.9]).unwrap()
    }

    fn pair(f: f64, a: f64) -> [ForceTriplet; 2] {
        [
            ForceTriplet { magnitude: f, impact_angle: a, tangent_angle: 0.0 },
            ForceTriplet { magnitude: f, impact_angle: a + PI, tangent_angle: 0.0 },
        ]
    }

    #[test]
    fn calibration_is_monotone_and_invertible() {
        let c = calibration();
        assert!(c.energies.windows(2).all(|w| w[1] >= w[0]));
        assert!(c.energies.last().unwrap() > &c.energies[0]);
        assert_eq!(c.magnitude_for(0.0), 0.01);
        assert_eq!(c.magnitude_for(f64::MAX), 0.9);
        let k = 7;
        assert!((c.magnitude_for(c.energies[k]) - c.magnitudes[k]).abs() <= c.magnitudes[k] - c.magnitudes[k - 1]);
    }

    #[test]
    fn diametral_pair_guess_near_truth() {
        let c = calibration();
        for (f, a) in [(0.1, 0.3), (0.4, 1.9), (0.25, 4.0)] {
            let forces = pair(f, a);
            let img = render_forces(&forces, &ParticleSpec::default(), &ImageSpec::default());
            let guess = initial_guess(&img, 2, &c, PI / 6.0).unwrap();
            for t in &forces {
                let best = guess
                    .iter()
                    .map(|g| circular_distance(g.impact_angle, t.impact_angle))
                    .fold(f64::INFINITY, f64::min);
                assert!(best < 10f64.to_radians(), "F={f} α={a}: off by {}°", best.to_degrees());
            }
            assert!(guess.iter().all(|g| g.tangent_angle == 0.0));
        }
    }

    #[test]
    fn blank_image_falls_back() {
        let img = IntensityImage::zeros(85, 85, 0.00019);
        let guess = initial_guess(&img, 4, &calibration(), PI / 6.0).unwrap();
        let angles: Vec<f64> = guess.iter().map(|g| g.impact_angle).collect();
        for (k, a) in angles.iter().enumerate() {
            assert!((a - k as f64 * PI / 2.0).abs() < 1e-12);
        }
        assert!(guess.iter().all(|g| g.magnitude == 0.01));
    }

    #[test]
    fn guesses_follow_rotation() {
        let c = calibration();
        let forces = pair(0.2, 0.5);
        let img = render_forces(&forces, &ParticleSpec::default(), &ImageSpec::default());
        let turned = render_forces(&pair(0.2, 0.5 + PI / 2.0), &ParticleSpec::default(), &ImageSpec::default());
        let a = initial_guess(&img, 2, &c, PI / 6.0).unwrap();
        let b = initial_guess(&turned, 2, &c, PI / 6.0).unwrap();
        let bin = TAU / PROFILE_BINS as f64;
        for g in a.iter() {
            let target = g.impact_angle + PI / 2.0;
            let best = b.iter().map(|h| circular_distance(h.impact_angle, target)).fold(f64::INFINITY, f64::min);
            assert!(best <= bin, "{}°", best.to_degrees());
        }
    }

    #[test]
    fn peaks_respect_separation() {
        let mut profile = vec![0.0; PROFILE_BINS];
        profile[10] = 5.0;
        profile[12] = 4.0;
        profile[40] = 3.0;
        let p = pick_peaks(&profile, 2, PI / 6.0).unwrap();
        assert!((p[0] - bin_angle(10.0)).abs() < 1e-12 && (p[1] - bin_angle(40.0)).abs() < 1e-12);
        assert!(pick_peaks(&profile, 3, PI / 6.0).is_none());
        assert!(pick_peaks(&vec![0.0; PROFILE_BINS], 2, PI / 6.0).is_none());
    }

    #[test]
    fn arc_centre_ignores_plateau_edges() {
        let mut profile = vec![1.0; PROFILE_BINS];
        profile[20..=30].fill(5.0);
        profile[20] = 6.0;
        let arcs = profile_arcs(&profile);
        assert_eq!(arcs.len(), 1);
        assert!((arcs[0].0 - bin_angle(25.0)).abs() < 0.5 * TAU / PROFILE_BINS as f64);
    }
}
