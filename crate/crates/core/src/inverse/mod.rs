//! Classical force reconstruction by fitting the forward model to an
//! observed fringe pattern.
//!
//! The fit minimises the RMS pixel difference between `render(params)` and
//! the observation plus a balance penalty, over `3M` parameters, starting
//! from [`initial_guess`]. [`reconstruct`] repeats this for every force
//! count and keeps the best one.
//!
//! Observations must be at native resolution: the frame side has to equal
//! `ImageSpec::side(radius)` for the image's pixel size.

pub mod global;
mod guess;
pub mod simplex;

use std::f64::consts::{FRAC_PI_2, PI};

use serde::{Deserialize, Serialize};

pub use guess::{angular_profile, gradient_energy, mean_energy, pick_peaks, profile_arcs, CalibrationCurve, ANNULUS, PROFILE_BINS};

use crate::elastic::{
    net_force, normalize_angle, torque_residual, ForceList, ForceTriplet, ParticleSpec, StressField, MAX_FORCES,
    MIN_FORCES,
};
use crate::error::{Error, Result};
use crate::render::{blur_plane, DiskRaster, ImageSpec, IntensityImage};
use crate::sampler::{separation_violation, BALANCE_TOLERANCE};
use simplex::{minimize, polish, Minimum, SimplexOptions};

/// Finite-difference steps per parameter class.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FdSteps {
    /// Newtons.
    pub magnitude: f64,
    /// Radians.
    pub impact_angle: f64,
    /// Radians.
    pub tangent_angle: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverConfig {
    /// Simplex iterations per restart.
    pub max_iterations: usize,
    pub max_restarts: usize,
    /// Relative residual decrease below which a stage stops.
    pub tolerance: f64,
    pub fd_steps: FdSteps,
    /// Blur widths (pixels) of the fringe-density stages, run first.
    pub envelope_sigmas: Vec<f64>,
    /// Blur widths (pixels) of the blurred-intensity stages run next,
    /// before the exact residual.
    pub coarse_sigmas: Vec<f64>,
    /// Try common magnitude rescalings before the first stage.
    pub scale_scan: bool,
    /// Gradient polish rounds after the simplex stage.
    pub polish_rounds: usize,
    /// Weight of `|Σf|² + (Σ F sin τ)²` in the residual.
    pub balance_weight: f64,
    pub magnitude_range: [f64; 2],
    pub tau_bound: f64,
    pub min_separation: f64,
    /// Compare 8-bit renders (as the forward renderer emits) instead of
    /// the continuous intensity.
    pub quantized: bool,
    /// Relative residual band within which the smaller force count wins.
    pub selection_band: f64,
    /// [`reconstruct`] stops trying larger force counts once a branch
    /// reaches this residual.
    pub accept_residual: f64,
    /// Global stage of [`reconstruct`], run on a decimated fringe-density
    /// comparison.
    pub global: global::GlobalOptions,
    pub global_stride: usize,
    pub global_sigma: f64,
    pub seed: u64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            max_iterations: 1500,
            max_restarts: 2,
            tolerance: 1e-6,
            fd_steps: FdSteps { magnitude: 2e-3, impact_angle: 2e-3, tangent_angle: 5e-3 },
            envelope_sigmas: vec![4.0, 2.0],
            coarse_sigmas: vec![1.0],
            scale_scan: false,
            polish_rounds: 20,
            balance_weight: 1e3,
            magnitude_range: [0.01, 0.9],
            tau_bound: FRAC_PI_2,
            min_separation: PI / 6.0,
            quantized: true,
            selection_band: 0.01,
            accept_residual: 1.0,
            global: global::GlobalOptions::default(),
            global_stride: 3,
            global_sigma: 1.5,
            seed: 0,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        let s = &self.fd_steps;
        let positive = [s.magnitude, s.impact_angle, s.tangent_angle, self.tolerance, self.tau_bound];
        if positive.iter().any(|v| !(*v > 0.0 && v.is_finite())) {
            return Err(Error::Config("solver steps, tolerance and tau_bound must be positive".into()));
        }
        let [lo, hi] = self.magnitude_range;
        if !(lo > 0.0 && hi > lo) {
            return Err(Error::Config(format!("solver magnitude range [{lo}, {hi}] is empty")));
        }
        if !(self.balance_weight >= 0.0) || !(self.selection_band >= 0.0) || !(self.min_separation >= 0.0) {
            return Err(Error::Config("balance_weight, selection_band and min_separation must be non-negative".into()));
        }
        if self.envelope_sigmas.iter().chain(&self.coarse_sigmas).any(|s| !(*s > 0.0 && s.is_finite())) {
            return Err(Error::Config("envelope_sigmas and coarse_sigmas must be positive".into()));
        }
        if self.global_stride == 0 || !(self.global_sigma > 0.0) {
            return Err(Error::Config("global_stride and global_sigma must be positive".into()));
        }
        if self.max_iterations == 0 {
            return Err(Error::Config("max_iterations must be at least 1".into()));
        }
        Ok(())
    }
}

/// Outcome of one force-count branch of [`reconstruct`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BranchOutcome {
    pub m: usize,
    pub residual: Option<f64>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReconstructionResult {
    pub forces: ForceList,
    /// RMS pixel error plus balance penalty at `forces`.
    pub residual: f64,
    pub iterations: usize,
    pub m_selected: usize,
    pub per_m: Vec<BranchOutcome>,
    /// Best residual after each iteration.
    pub history: Vec<f64>,
    /// The observation carried no usable signal, or every fitted magnitude
    /// sits on the lower bound.
    pub low_confidence: bool,
}

/// Precomputed comparison against one observation.
#[derive(Debug, Clone)]
pub struct ResidualModel {
    particle: ParticleSpec,
    side: usize,
    indices: Vec<usize>,
    points: Vec<(f64, f64)>,
    observed: Vec<f64>,
    balance_weight: f64,
    quantized: bool,
}

impl ResidualModel {
    pub fn new(observed: &IntensityImage, particle: &ParticleSpec, config: &SolverConfig) -> Result<Self> {
        particle.validate()?;
        let spec = ImageSpec { pixel_size: observed.pixel_size };
        spec.validate()?;
        let side = spec.side(particle.radius);
        if observed.width != side || observed.height != side {
            return Err(Error::Domain(format!(
                "observation is {}x{}, expected {side}x{side} for radius {} at pixel size {}",
                observed.width, observed.height, particle.radius, observed.pixel_size
            )));
        }
        let raster = DiskRaster::new(particle, &spec);
        Ok(ResidualModel {
            particle: *particle,
            side,
            indices: raster.points.iter().map(|&(i, _, _)| i).collect(),
            observed: raster.points.iter().map(|&(i, _, _)| observed.pixels[i] as f64).collect(),
            points: raster.points.iter().map(|&(_, x, y)| (x, y)).collect(),
            balance_weight: config.balance_weight,
            quantized: config.quantized,
        })
    }

    /// The same comparison after blurring both images with a Gaussian of
    /// `sigma` pixels; used as a coarse stage where fine fringes alias.
    pub fn smoothed(&self, sigma: f64) -> SmoothedResidual<'_> {
        let blurred = blur_plane(&self.plane(&self.observed), self.side, self.side, sigma);
        SmoothedResidual { base: self, sigma, observed: self.indices.iter().map(|&i| blurred[i]).collect() }
    }

    /// Scatters in-disk values into a zeroed `side × side` plane.
    fn plane(&self, values: &[f64]) -> Vec<f64> {
        let mut plane = vec![0.0; self.side * self.side];
        for (&i, &v) in self.indices.iter().zip(values) {
            plane[i] = v;
        }
        plane
    }

    /// The sub-lattice of every `stride`-th row and column, aligned so the
    /// centre pixel is kept. Pixel positions are unchanged, so the model is
    /// still compared at the observation's own sample points.
    pub fn decimated(&self, stride: usize) -> Self {
        let stride = stride.max(1);
        let offset = (self.side / 2) % stride;
        let side = (self.side - offset).div_ceil(stride);
        let mut indices = Vec::new();
        let mut points = Vec::new();
        let mut observed = Vec::new();
        for ((&i, &pt), &o) in self.indices.iter().zip(&self.points).zip(&self.observed) {
            let (r, c) = (i / self.side, i % self.side);
            if r % stride == offset && c % stride == offset {
                indices.push((r - offset) / stride * side + (c - offset) / stride);
                points.push(pt);
                observed.push(o);
            }
        }
        ResidualModel { side, indices, points, observed, ..self.clone() }
    }

    pub fn pixel_count(&self) -> usize {
        self.points.len()
    }

    /// Maximum observed in-disk intensity.
    pub fn observed_peak(&self) -> f64 {
        self.observed.iter().copied().fold(0.0, f64::max)
    }

    pub fn rms(&self, forces: &[ForceTriplet]) -> f64 {
        let field = StressField::new(forces, &self.particle);
        let mut sum = 0.0;
        for (&(x, y), &o) in self.points.iter().zip(&self.observed) {
            let mut v = field.intensity_at(x, y);
            if self.quantized {
                v = v.round().clamp(0.0, 255.0);
            }
            sum += (v - o) * (v - o);
        }
        (sum / self.points.len().max(1) as f64).sqrt()
    }

    /// Balance penalty; imbalance within [`BALANCE_TOLERANCE`] counts as zero.
    pub fn penalty(&self, forces: &[ForceTriplet]) -> f64 {
        let (fx, fy) = net_force(forces);
        let excess = |v: f64| (v.abs() - BALANCE_TOLERANCE).max(0.0);
        let f = excess(fx.hypot(fy));
        let t = excess(torque_residual(forces));
        self.balance_weight * (f * f + t * t)
    }

    pub fn eval(&self, forces: &[ForceTriplet]) -> f64 {
        self.rms(forces) + self.penalty(forces)
    }
}

/// Blurred variant of a [`ResidualModel`] built by [`ResidualModel::smoothed`].
#[derive(Debug, Clone)]
pub struct SmoothedResidual<'a> {
    base: &'a ResidualModel,
    sigma: f64,
    observed: Vec<f64>,
}

impl SmoothedResidual<'_> {
    pub fn eval(&self, forces: &[ForceTriplet]) -> f64 {
        let b = self.base;
        let field = StressField::new(forces, &b.particle);
        let mut plane = vec![0.0; b.side * b.side];
        for (&i, &(x, y)) in b.indices.iter().zip(&b.points) {
            plane[i] = field.intensity_at(x, y);
        }
        let blurred = blur_plane(&plane, b.side, b.side, self.sigma);
        let sum: f64 = b.indices.iter().zip(&self.observed).map(|(&i, o)| (blurred[i] - o).powi(2)).sum();
        (sum / b.indices.len().max(1) as f64).sqrt() + b.penalty(forces)
    }
}

/// Squared central-difference gradient of a `side × side` plane at the
/// pixels whose four neighbours are all in `mask`; zero elsewhere.
fn masked_gradient_energy(plane: &[f64], mask: &[bool], side: usize) -> Vec<f64> {
    let mut out = vec![0.0; plane.len()];
    for r in 1..side.saturating_sub(1) {
        for c in 1..side - 1 {
            let i = r * side + c;
            if mask[i - 1] && mask[i + 1] && mask[i - side] && mask[i + side] {
                let gx = 0.5 * (plane[i + 1] - plane[i - 1]);
                let gy = 0.5 * (plane[i - side] - plane[i + side]);
                out[i] = gx * gx + gy * gy;
            }
        }
    }
    out
}

/// Compares local fringe density instead of intensity: the square root of
/// the blurred gradient energy. Smooth in the parameters where the
/// intensity residual is not, because the density follows the stress
/// gradient rather than the wrapped fringe order.
#[derive(Debug, Clone)]
pub struct EnvelopeResidual<'a> {
    base: &'a ResidualModel,
    sigma: f64,
    mask: Vec<bool>,
    observed: Vec<f64>,
}

impl ResidualModel {
    pub fn envelope(&self, sigma: f64) -> EnvelopeResidual<'_> {
        let mut mask = vec![false; self.side * self.side];
        for &i in &self.indices {
            mask[i] = true;
        }
        let observed = self.density(&self.plane(&self.observed), &mask, sigma);
        EnvelopeResidual { base: self, sigma, mask, observed }
    }

    fn density(&self, plane: &[f64], mask: &[bool], sigma: f64) -> Vec<f64> {
        let g2 = masked_gradient_energy(plane, mask, self.side);
        let blurred = blur_plane(&g2, self.side, self.side, sigma);
        self.indices.iter().map(|&i| blurred[i].max(0.0).sqrt()).collect()
    }
}

impl EnvelopeResidual<'_> {
    pub fn eval(&self, forces: &[ForceTriplet]) -> f64 {
        let b = self.base;
        let field = StressField::new(forces, &b.particle);
        let mut plane = vec![0.0; b.side * b.side];
        for (&i, &(x, y)) in b.indices.iter().zip(&b.points) {
            let v = field.intensity_at(x, y);
            plane[i] = if b.quantized { v.round().clamp(0.0, 255.0) } else { v };
        }
        let model = b.density(&plane, &self.mask, self.sigma);
        let sum: f64 = model.iter().zip(&self.observed).map(|(a, o)| (a - o).powi(2)).sum();
        (sum / model.len().max(1) as f64).sqrt() + b.penalty(forces)
    }
}

/// RMS in-disk pixel error of `params` against `observed` plus the balance
/// penalty.
pub fn residual(params: &[ForceTriplet], observed: &IntensityImage, particle: &ParticleSpec, config: &SolverConfig) -> Result<f64> {
    Ok(ResidualModel::new(observed, particle, config)?.eval(params))
}

/// Maps between force lists and the scaled coordinates the optimiser sees.
struct Coordinates {
    m: usize,
    magnitude_scale: f64,
    angle_scale: f64,
    range: [f64; 2],
    tau_bound: f64,
}

impl Coordinates {
    fn new(guess: &[ForceTriplet], config: &SolverConfig) -> Self {
        let mean = guess.iter().map(|f| f.magnitude).sum::<f64>() / guess.len() as f64;
        Coordinates {
            m: guess.len(),
            magnitude_scale: 0.1 * mean.max(config.magnitude_range[0]),
            angle_scale: 0.05,
            range: config.magnitude_range,
            tau_bound: config.tau_bound,
        }
    }

    fn encode(&self, forces: &[ForceTriplet]) -> Vec<f64> {
        forces
            .iter()
            .flat_map(|f| {
                [f.magnitude / self.magnitude_scale, f.impact_angle / self.angle_scale, f.tangent_angle / self.angle_scale]
            })
            .collect()
    }

    /// Projects onto the bounds: magnitudes and `τ` are clamped, `α` wraps.
    fn decode(&self, x: &[f64]) -> Vec<ForceTriplet> {
        (0..self.m)
            .map(|i| ForceTriplet {
                magnitude: (x[3 * i] * self.magnitude_scale).clamp(self.range[0], self.range[1]),
                impact_angle: normalize_angle(x[3 * i + 1] * self.angle_scale),
                tangent_angle: (x[3 * i + 2] * self.angle_scale).clamp(-self.tau_bound, self.tau_bound),
            })
            .collect()
    }

    fn steps(&self, s: &FdSteps) -> Vec<f64> {
        (0..self.m)
            .flat_map(|_| [s.magnitude / self.magnitude_scale, s.impact_angle / self.angle_scale, s.tangent_angle / self.angle_scale])
            .collect()
    }
}

/// Pushes impact angles apart until every adjacent gap is at least
/// `min_separation`. Requires `m · min_separation < 2π`.
pub fn spread_angles(forces: &mut [ForceTriplet], min_separation: f64) {
    let m = forces.len();
    if m < 2 || min_separation * m as f64 >= 2.0 * PI {
        return;
    }
    let target = min_separation * (1.0 + 1e-9);
    for _ in 0..1000 {
        forces.sort_by(|a, b| a.impact_angle.total_cmp(&b.impact_angle));
        let mut moved = false;
        for i in 0..m {
            let j = (i + 1) % m;
            let gap = normalize_angle(forces[j].impact_angle - forces[i].impact_angle);
            if gap < target {
                let push = 0.5 * (target - gap);
                forces[i].impact_angle = normalize_angle(forces[i].impact_angle - push);
                forces[j].impact_angle = normalize_angle(forces[j].impact_angle + push);
                moved = true;
            }
        }
        if !moved {
            break;
        }
    }
}

fn clamp_forces(forces: &mut [ForceTriplet], config: &SolverConfig) {
    let [lo, hi] = config.magnitude_range;
    for f in forces.iter_mut() {
        f.magnitude = f.magnitude.clamp(lo, hi);
        f.tangent_angle = f.tangent_angle.clamp(-config.tau_bound, config.tau_bound);
        f.impact_angle = normalize_angle(f.impact_angle);
    }
}

/// Builds the starting force list for a fit with `m` contacts.
pub fn initial_guess(img: &IntensityImage, m: usize, calibration: &CalibrationCurve, config: &SolverConfig) -> Result<ForceList> {
    if !(MIN_FORCES..=MAX_FORCES).contains(&m) {
        return Err(Error::Domain(format!("force count {m} outside [{MIN_FORCES}, {MAX_FORCES}]")));
    }
    guess::initial_guess(img, m, calibration, config.min_separation)
}

/// Best common rescaling of all magnitudes over a geometric grid.
fn scale_scan<F: FnMut(&[f64]) -> f64>(objective: &mut F, x: &[f64]) -> Vec<f64> {
    let mut best = (x.to_vec(), objective(x));
    for k in (-8i32..=8).filter(|&k| k != 0) {
        let s = 2f64.powf(k as f64 / 4.0);
        let trial: Vec<f64> = x.iter().enumerate().map(|(i, v)| if i % 3 == 0 { v * s } else { *v }).collect();
        let v = objective(&trial);
        if v < best.1 {
            best = (trial, v);
        }
    }
    best.0
}

/// Local fit of `guess.len()` contacts to `observed`.
pub fn reconstruct_fixed_m(observed: &IntensityImage, particle: &ParticleSpec, guess: &ForceList, config: &SolverConfig) -> Result<ReconstructionResult> {
    config.validate()?;
    let model = ResidualModel::new(observed, particle, config)?;
    fit(&model, guess, config)
}

/// One objective in the coarse-to-fine sequence.
type Stage<'a> = Box<dyn Fn(&[ForceTriplet]) -> f64 + 'a>;

fn fit(model: &ResidualModel, guess: &ForceList, config: &SolverConfig) -> Result<ReconstructionResult> {
    let m = guess.len();
    let nan = |iteration: usize| Error::NonFinite { m, iteration };
    let mut start = guess.as_slice().to_vec();
    clamp_forces(&mut start, config);
    spread_angles(&mut start, config.min_separation);
    let coords = Coordinates::new(&start, config);
    let feasible = |x: &[f64]| -> Option<Vec<ForceTriplet>> {
        let forces = coords.decode(x);
        separation_violation(&forces, config.min_separation).is_none().then_some(forces)
    };
    let exact = |x: &[f64]| feasible(x).map_or(f64::INFINITY, |f| model.eval(&f));

    let x0 = coords.encode(&start);
    let v0 = exact(&x0);
    if v0.is_nan() {
        return Err(nan(0));
    }
    let mut best = Minimum { x: x0.clone(), value: v0, iterations: 0, history: Vec::new() };
    if v0 > 0.0 {
        let opts = SimplexOptions {
            max_iterations: config.max_iterations,
            tolerance: config.tolerance,
            initial_step: 1.0,
            max_restarts: config.max_restarts,
        };
        let mut x = x0;
        let stages: Vec<Stage<'_>> = config
            .envelope_sigmas
            .iter()
            .map(|&sigma| {
                let e = model.envelope(sigma);
                Box::new(move |f: &[ForceTriplet]| e.eval(f)) as Box<dyn Fn(&[ForceTriplet]) -> f64>
            })
            .chain(config.coarse_sigmas.iter().map(|&sigma| {
                let b = model.smoothed(sigma);
                Box::new(move |f: &[ForceTriplet]| b.eval(f)) as Box<dyn Fn(&[ForceTriplet]) -> f64>
            }))
            .collect();
        for (k, stage) in stages.iter().enumerate() {
            let mut objective = |x: &[f64]| feasible(x).map_or(f64::INFINITY, |f| stage(&f));
            if k == 0 && config.scale_scan {
                x = scale_scan(&mut objective, &x);
            }
            let run = minimize(objective, &x, &opts).map_err(|e| nan(best.iterations + e.iteration))?;
            best.iterations += run.iterations;
            x = run.x;
            let v = exact(&x);
            if v.is_nan() {
                return Err(nan(best.iterations));
            }
            if v < best.value {
                best.value = v;
                best.x = x.clone();
            }
            best.history.push(best.value);
        }
        if stages.is_empty() && config.scale_scan {
            x = scale_scan(&mut { exact }, &x);
        }
        let run = minimize(exact, &x, &opts).map_err(|e| nan(best.iterations + e.iteration))?;
        best.iterations += run.iterations;
        let floor = best.value;
        best.history.extend(run.history.iter().map(|h| h.min(floor)));
        if run.value < best.value {
            best.value = run.value;
            best.x = run.x;
        }
        if best.value > 0.0 && config.polish_rounds > 0 {
            best = polish(exact, best, &coords.steps(&config.fd_steps), config.polish_rounds)
                .map_err(|e| nan(e.iteration))?;
        }
    }

    let forces = ForceList::new(coords.decode(&best.x))?;
    let at_floor = forces.iter().all(|f| f.magnitude <= config.magnitude_range[0]);
    Ok(ReconstructionResult {
        residual: best.value,
        iterations: best.iterations,
        m_selected: m,
        per_m: vec![BranchOutcome { m, residual: Some(best.value), error: None }],
        history: best.history,
        low_confidence: at_floor || model.observed_peak() < 1.0,
        forces,
    })
}

/// Model selection helper: index of the winner among `(m, residual)`
/// pairs, preferring the smaller `m` within the relative `band` of the best.
pub fn select_model(candidates: &[(usize, f64)], band: f64) -> Option<usize> {
    let best = candidates.iter().map(|c| c.1).fold(f64::INFINITY, f64::min);
    if !best.is_finite() {
        return None;
    }
    candidates
        .iter()
        .enumerate()
        .filter(|(_, c)| c.1 <= best * (1.0 + band) + f64::MIN_POSITIVE)
        .min_by_key(|(_, c)| c.0)
        .map(|(i, _)| i)
}

/// Fits every force count in `[2, 6]` and returns the selected branch.
///
/// Each branch starts from [`initial_guess`], runs the global stage seeded
/// with it, then the local stages of [`reconstruct_fixed_m`]. Larger
/// counts are skipped once a branch reaches `accept_residual`.
pub fn reconstruct(observed: &IntensityImage, particle: &ParticleSpec, config: &SolverConfig) -> Result<ReconstructionResult> {
    let counts: Vec<usize> = (MIN_FORCES..=MAX_FORCES).collect();
    run_branches(observed, particle, &counts, config)
}

/// The same search with the force count fixed to `m`.
pub fn reconstruct_m(observed: &IntensityImage, particle: &ParticleSpec, m: usize, config: &SolverConfig) -> Result<ReconstructionResult> {
    if !(MIN_FORCES..=MAX_FORCES).contains(&m) {
        return Err(Error::Domain(format!("force count {m} outside [{MIN_FORCES}, {MAX_FORCES}]")));
    }
    run_branches(observed, particle, &[m], config)
}

fn run_branches(observed: &IntensityImage, particle: &ParticleSpec, counts: &[usize], config: &SolverConfig) -> Result<ReconstructionResult> {
    config.validate()?;
    let model = ResidualModel::new(observed, particle, config)?;
    let calibration = CalibrationCurve::build(particle, &ImageSpec { pixel_size: observed.pixel_size }, config.magnitude_range)?;
    let coarse = model.decimated(config.global_stride);
    let envelope = coarse.envelope(config.global_sigma);
    let bounds = global::Bounds { magnitude: config.magnitude_range, tau_bound: config.tau_bound };

    let mut branches: Vec<(usize, Result<ReconstructionResult>)> = Vec::new();
    for &m in counts {
        let run = || -> Result<ReconstructionResult> {
            let guess = initial_guess(observed, m, &calibration, config)?;
            let start = if config.global.generations > 0 {
                let mut rng = crate::rng::stream(config.seed, crate::rng::Domain::Evaluation, m, 0);
                let objective = |f: &[ForceTriplet]| {
                    if separation_violation(f, config.min_separation).is_some() {
                        f64::INFINITY
                    } else {
                        envelope.eval(f)
                    }
                };
                let g = global::evolve(objective, m, &[guess.as_slice().to_vec()], &bounds, &config.global, &mut rng);
                if g.value.is_nan() {
                    return Err(Error::NonFinite { m, iteration: g.generations });
                }
                ForceList::new(g.forces)?
            } else {
                guess
            };
            fit(&model, &start, config)
        };
        let r = run();
        let done = matches!(&r, Ok(r) if r.residual <= config.accept_residual);
        branches.push((m, r));
        if done {
            break;
        }
    }

    let per_m: Vec<BranchOutcome> = branches
        .iter()
        .map(|(m, r)| match r {
            Ok(r) => BranchOutcome { m: *m, residual: Some(r.residual), error: None },
            Err(e) => BranchOutcome { m: *m, residual: None, error: Some(e.to_string()) },
        })
        .collect();
    let ok: Vec<&ReconstructionResult> = branches.iter().filter_map(|(_, r)| r.as_ref().ok()).collect();
    let candidates: Vec<(usize, f64)> = ok.iter().map(|r| (r.m_selected, r.residual)).collect();
    let Some(winner) = select_model(&candidates, config.selection_band) else {
        let reasons: Vec<String> = per_m.iter().filter_map(|b| b.error.as_ref().map(|e| format!("M={}: {e}", b.m))).collect();
        return Err(Error::Reconstruction(format!("every branch failed ({})", reasons.join("; "))));
    };
    let mut result = ok[winner].clone();
    result.per_m = per_m;
    result.low_confidence |= model.observed_peak() < 1.0;
    Ok(result)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::render::render_forces;

    fn particle() -> ParticleSpec {
        ParticleSpec::default()
    }

    fn pair(f: f64, a: f64) -> Vec<ForceTriplet> {
        vec![
            ForceTriplet { magnitude: f, impact_angle: a, tangent_angle: 0.0 },
            ForceTriplet { magnitude: f, impact_angle: normalize_angle(a + PI), tangent_angle: 0.0 },
        ]
    }

    fn observe(forces: &[ForceTriplet]) -> IntensityImage {
        render_forces(forces, &particle(), &ImageSpec::default())
    }

    #[test]
    fn residual_vanishes_on_own_render() {
        let truth = pair(0.3, 0.7);
        let img = observe(&truth);
        assert_eq!(residual(&truth, &img, &particle(), &SolverConfig::default()).unwrap(), 0.0);
    }

    #[test]
    fn penalty_weight_is_monotone() {
        let mut unbalanced = pair(0.3, 0.7);
        unbalanced[0].magnitude = 0.4;
        let img = observe(&pair(0.3, 0.7));
        let mut cfg = SolverConfig::default();
        let a = residual(&unbalanced, &img, &particle(), &cfg).unwrap();
        cfg.balance_weight *= 2.0;
        let b = residual(&unbalanced, &img, &particle(), &cfg).unwrap();
        assert!(b > a);
    }

    #[test]
    fn wrong_frame_is_rejected() {
        let img = IntensityImage::zeros(128, 128, 0.00019);
        assert!(residual(&pair(0.1, 0.0), &img, &particle(), &SolverConfig::default()).is_err());
    }

    #[test]
    fn truth_is_a_fixed_point() {
        let truth = ForceList::new(pair(0.2, 1.1)).unwrap();
        let img = observe(truth.as_slice());
        let r = reconstruct_fixed_m(&img, &particle(), &truth, &SolverConfig::default()).unwrap();
        assert_eq!(r.residual, 0.0);
        assert!(r.iterations <= 1);
        assert_eq!(r.forces, truth);
    }

    #[test]
    fn perturbed_pair_recovers_angles() {
        let truth = pair(0.25, 0.4);
        let img = observe(&truth);
        let mut start = truth.clone();
        start[0].impact_angle += 5f64.to_radians();
        start[1].impact_angle -= 5f64.to_radians();
        let guess = ForceList::new(start).unwrap();
        let r = reconstruct_fixed_m(&img, &particle(), &guess, &SolverConfig::default()).unwrap();
        let truth = ForceList::new(truth).unwrap();
        for (a, b) in r.forces.iter().zip(truth.iter()) {
            assert!(crate::elastic::circular_distance(a.impact_angle, b.impact_angle) < 1f64.to_radians());
        }
        assert!(r.history.windows(2).all(|w| w[1] <= w[0]));
    }

    #[test]
    fn spread_fixes_crowded_angles() {
        let mut f = vec![
            ForceTriplet { magnitude: 0.1, impact_angle: 0.0, tangent_angle: 0.0 },
            ForceTriplet { magnitude: 0.1, impact_angle: 0.2, tangent_angle: 0.0 },
            ForceTriplet { magnitude: 0.1, impact_angle: 6.2, tangent_angle: 0.0 },
        ];
        spread_angles(&mut f, PI / 6.0);
        assert!(separation_violation(&f, PI / 6.0).is_none());
    }

    #[test]
    fn selection_prefers_smaller_within_band() {
        assert_eq!(select_model(&[(2, 1.005), (3, 1.0), (4, 0.5)], 0.01), Some(2));
        assert_eq!(select_model(&[(2, 1.02), (3, 1.0)], 0.01), Some(1));
        assert_eq!(select_model(&[(3, 0.0), (2, 0.0)], 0.01), Some(1));
        assert_eq!(select_model(&[], 0.01), None);
    }

    #[test]
    fn blank_image_is_low_confidence() {
        let img = IntensityImage::zeros(85, 85, 0.00019);
        let cfg = SolverConfig {
            max_iterations: 50,
            max_restarts: 0,
            polish_rounds: 0,
            global: global::GlobalOptions { generations: 20, ..Default::default() },
            ..SolverConfig::default()
        };
        let r = reconstruct(&img, &particle(), &cfg).unwrap();
        assert!(r.low_confidence);
        assert!(!r.per_m.is_empty());
        assert!(r.forces.iter().all(|f| f.magnitude < 0.05));
    }
}
