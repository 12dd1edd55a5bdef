//! Differential evolution over contact sets, used to find the basin of the
//! true configuration before the local stages.
//!
//! Candidates are `[ln F, α, τ]` per contact, kept sorted by `α` so that
//! crossover mixes corresponding contacts.

use std::f64::consts::TAU;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::elastic::{normalize_angle, ForceTriplet};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GlobalOptions {
    /// Generations; 0 disables the global stage.
    pub generations: usize,
    /// Population per parameter, clamped to `[30, 80]` members in total.
    pub population_per_parameter: usize,
    pub differential_weight: f64,
    pub crossover: f64,
    /// Stop once the best objective falls below this.
    pub target: f64,
    /// Stop after this many generations without improvement.
    pub patience: usize,
}

impl Default for GlobalOptions {
    fn default() -> Self {
        GlobalOptions {
            generations: 800,
            population_per_parameter: 10,
            differential_weight: 0.6,
            crossover: 0.9,
            target: 0.5,
            patience: 200,
        }
    }
}

pub struct Bounds {
    pub magnitude: [f64; 2],
    pub tau_bound: f64,
}

impl Bounds {
    pub fn decode(&self, x: &[f64]) -> Vec<ForceTriplet> {
        x.chunks(3)
            .map(|c| ForceTriplet {
                magnitude: c[0].exp().clamp(self.magnitude[0], self.magnitude[1]),
                impact_angle: normalize_angle(c[1]),
                tangent_angle: c[2].clamp(-self.tau_bound, self.tau_bound),
            })
            .collect()
    }

    pub fn encode(&self, forces: &[ForceTriplet]) -> Vec<f64> {
        let mut x: Vec<f64> = forces.iter().flat_map(|f| [f.magnitude.ln(), f.impact_angle, f.tangent_angle]).collect();
        canonicalize(&mut x);
        x
    }
}

/// Wraps angles and orders contacts by impact angle.
fn canonicalize(x: &mut [f64]) {
    let mut contacts: Vec<[f64; 3]> = x.chunks(3).map(|c| [c[0], normalize_angle(c[1]), c[2]]).collect();
    contacts.sort_by(|a, b| a[1].total_cmp(&b[1]));
    x.copy_from_slice(&contacts.concat());
}

#[derive(Debug, Clone)]
pub struct GlobalResult {
    pub forces: Vec<ForceTriplet>,
    pub value: f64,
    pub generations: usize,
}

/// Minimises `objective` over sets of `m` contacts. `seeds` join the
/// initial population; the rest are evenly spread rotations with jitter.
pub fn evolve<R: Rng + ?Sized, F: FnMut(&[ForceTriplet]) -> f64>(
    mut objective: F,
    m: usize,
    seeds: &[Vec<ForceTriplet>],
    bounds: &Bounds,
    opts: &GlobalOptions,
    rng: &mut R,
) -> GlobalResult {
    let d = 3 * m;
    let np = (opts.population_per_parameter * d).clamp(30, 80);
    let (ln_lo, ln_hi) = (bounds.magnitude[0].ln(), bounds.magnitude[1].ln());
    let mut pop: Vec<Vec<f64>> = seeds.iter().take(np).map(|s| bounds.encode(s)).collect();
    while pop.len() < np {
        let offset = rng.random_range(0.0..TAU);
        let mut x: Vec<f64> = (0..m)
            .flat_map(|j| {
                [
                    rng.random_range(ln_lo..ln_hi),
                    offset + TAU * j as f64 / m as f64 + rng.random_range(-0.3..0.3),
                    rng.random_range(-0.3..0.3),
                ]
            })
            .collect();
        canonicalize(&mut x);
        pop.push(x);
    }
    let mut cost: Vec<f64> = pop.iter().map(|x| objective(&bounds.decode(x))).collect();
    let best_of = |cost: &[f64]| (0..cost.len()).min_by(|&a, &b| cost[a].total_cmp(&cost[b])).unwrap();
    let mut best = best_of(&cost);
    let mut stale = 0;
    let mut generations = 0;
    while generations < opts.generations && cost[best] > opts.target && stale < opts.patience {
        generations += 1;
        let before = cost[best];
        for k in 0..np {
            let (a, b, c) = loop {
                let (a, b, c) = (rng.random_range(0..np), rng.random_range(0..np), rng.random_range(0..np));
                if a != b && b != c && a != c && a != k && b != k && c != k {
                    break (a, b, c);
                }
            };
            let forced = rng.random_range(0..d);
            let mut trial: Vec<f64> = (0..d)
                .map(|j| {
                    if j == forced || rng.random::<f64>() < opts.crossover {
                        pop[a][j] + opts.differential_weight * (pop[b][j] - pop[c][j])
                    } else {
                        pop[k][j]
                    }
                })
                .collect();
            for j in (0..d).step_by(3) {
                trial[j] = trial[j].clamp(ln_lo, ln_hi);
                trial[j + 2] = trial[j + 2].clamp(-bounds.tau_bound, bounds.tau_bound);
            }
            canonicalize(&mut trial);
            let v = objective(&bounds.decode(&trial));
            if v <= cost[k] {
                pop[k] = trial;
                cost[k] = v;
            }
        }
        best = best_of(&cost);
        if cost[best] < before {
            stale = 0;
        } else {
            stale += 1;
        }
    }
    GlobalResult { forces: bounds.decode(&pop[best]), value: cost[best], generations }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::elastic::circular_distance;
    use rand::SeedableRng;

    #[test]
    fn finds_planted_contacts() {
        let bounds = Bounds { magnitude: [0.01, 0.9], tau_bound: 1.5 };
        let target = [(0.3, 1.0, 0.1), (0.5, 3.0, -0.2), (0.2, 5.0, 0.0)];
        let objective = |f: &[ForceTriplet]| -> f64 {
            f.iter()
                .zip(&target)
                .map(|(a, t)| (a.magnitude - t.0).powi(2) + circular_distance(a.impact_angle, t.1).powi(2) + (a.tangent_angle - t.2).powi(2))
                .sum()
        };
        let opts = GlobalOptions { target: 1e-6, ..GlobalOptions::default() };
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let r = evolve(objective, 3, &[], &bounds, &opts, &mut rng);
        assert!(r.value < 1e-4, "{}", r.value);
        let mut again = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        assert_eq!(evolve(objective, 3, &[], &bounds, &opts, &mut again).value, r.value);
    }

    #[test]
    fn encoding_round_trips_in_angle_order() {
        let bounds = Bounds { magnitude: [0.01, 0.9], tau_bound: 1.5 };
        let f = vec![
            ForceTriplet { magnitude: 0.4, impact_angle: 4.0, tangent_angle: 0.1 },
            ForceTriplet { magnitude: 0.2, impact_angle: 1.0, tangent_angle: -0.1 },
        ];
        let back = bounds.decode(&bounds.encode(&f));
        assert!((back[0].magnitude - 0.2).abs() < 1e-12 && (back[1].impact_angle - 4.0).abs() < 1e-12);
    }
}
