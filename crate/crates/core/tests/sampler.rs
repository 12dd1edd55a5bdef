use std::f64::consts::{PI, TAU};

use photoforge::elastic::{circular_distance, net_force, torque_residual, ForceTriplet};
use photoforge::rng::{stream, Domain};
use photoforge::sampler::{
    sample_force_list, sample_indexed, sample_partial_list, sector_band, validate_force_list, SamplerConfig,
    BALANCE_TOLERANCE,
};
use proptest::prelude::*;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

/// Brute-force sampler written from the distribution statement alone:
/// plain rejection for the truncated exponential, Box–Muller normals, and
/// the closing force found from the balance conditions in vector form.
struct Oracle {
    rng: ChaCha8Rng,
}

impl Oracle {
    fn uniform(&mut self) -> f64 {
        self.rng.random::<f64>()
    }

    fn normal(&mut self, mean: f64, sd: f64) -> f64 {
        let u1 = 1.0 - self.uniform();
        let u2 = self.uniform();
        mean + sd * (-2.0 * u1.ln()).sqrt() * (TAU * u2).cos()
    }

    fn base_magnitude(&mut self) -> f64 {
        loop {
            let x = -(1.0 - self.uniform()).ln() / 0.5;
            if (0.01..=0.9).contains(&x) {
                return x;
            }
        }
    }

    fn list(&mut self, m: usize) -> Vec<[f64; 3]> {
        loop {
            let base = self.base_magnitude();
            let width = TAU / m as f64;
            let mut forces: Vec<[f64; 3]> = (0..m - 1)
                .map(|i| {
                    let alpha = i as f64 * width + PI / 12.0 + self.uniform() * (width - PI / 6.0);
                    let mut f = self.normal(base, base / 5.0);
                    while f <= 0.0 {
                        f = self.normal(base, base / 5.0);
                    }
                    [f, alpha, self.normal(0.0, PI / 12.0)]
                })
                .collect();
            // each force points along the inward normal turned by τ
            let (mut vx, mut vy, mut torque) = (0.0, 0.0, 0.0);
            for &[f, a, t] in &forces {
                vx -= f * (a + PI + t).cos();
                vy -= f * (a + PI + t).sin();
                torque -= f * t.sin();
            }
            let f_m = vx.hypot(vy);
            if !(0.01..=0.9).contains(&f_m) || (torque / f_m).abs() > 1.0 {
                continue;
            }
            let tau = (torque / f_m).asin();
            // inward normal of the closing contact is v turned back by τ
            let (nx, ny) = (vx * tau.cos() + vy * tau.sin(), -vx * tau.sin() + vy * tau.cos());
            let alpha = (-ny).atan2(-nx).rem_euclid(TAU);
            forces.push([f_m, alpha, tau]);
            let separated = (0..m).all(|i| (i + 1..m).all(|j| circular_distance(forces[i][1], forces[j][1]) >= PI / 6.0));
            let in_range = forces.iter().all(|&[f, _, t]| (0.01..=0.9).contains(&f) && t.abs() <= PI / 2.0);
            if separated && in_range {
                return forces;
            }
        }
    }
}

/// Two-sample Kolmogorov–Smirnov statistic.
fn ks(mut a: Vec<f64>, mut b: Vec<f64>) -> f64 {
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    let (mut i, mut j, mut d) = (0, 0, 0.0f64);
    while i < a.len() && j < b.len() {
        let x = a[i].min(b[j]);
        while i < a.len() && a[i] <= x {
            i += 1;
        }
        while j < b.len() && b[j] <= x {
            j += 1;
        }
        d = d.max((i as f64 / a.len() as f64 - j as f64 / b.len() as f64).abs());
    }
    d
}

#[test]
fn four_force_lists_match_brute_force_sampler() {
    let n = 10_000;
    let config = SamplerConfig { seed: 11, ..SamplerConfig::default() };
    let ours: Vec<Vec<ForceTriplet>> =
        (0..n as u64).into_par_iter().map(|i| sample_indexed(4, i, &config).unwrap().forces.into_vec()).collect();
    let mut oracle = Oracle { rng: stream(99, Domain::Evaluation, 4, 0) };
    let theirs: Vec<Vec<[f64; 3]>> = (0..n).map(|_| oracle.list(4)).collect();

    let ours_col = |k: usize| -> Vec<f64> {
        ours.iter()
            .flatten()
            .map(|f| [f.magnitude, f.impact_angle, f.tangent_angle][k])
            .collect()
    };
    let theirs_col = |k: usize| -> Vec<f64> { theirs.iter().flatten().map(|f| f[k]).collect() };
    // critical value at significance 1e-3 for two samples of 4·10⁴
    let critical = 1.95 * (2.0 / (4.0 * n as f64)).sqrt();
    for (k, name) in ["magnitude", "impact angle", "tangent angle"].iter().enumerate() {
        let d = ks(ours_col(k), theirs_col(k));
        assert!(d < critical, "{name}: KS statistic {d:.4} ≥ {critical:.4}");
    }
    let mean_of = |lists: Vec<f64>| lists.iter().sum::<f64>() / lists.len() as f64;
    let ours_mean: Vec<f64> = ours.iter().map(|l| l.iter().map(|f| f.magnitude).sum::<f64>() / 4.0).collect();
    let theirs_mean: Vec<f64> = theirs.iter().map(|l| l.iter().map(|f| f[0]).sum::<f64>() / 4.0).collect();
    let d = ks(ours_mean.clone(), theirs_mean.clone());
    assert!(d < 1.95 * (2.0 / n as f64).sqrt(), "mean magnitude: KS {d:.4}");
    assert!((mean_of(ours_mean) - mean_of(theirs_mean)).abs() < 0.01);
}

#[test]
fn output_is_independent_of_thread_count() {
    let config = SamplerConfig { seed: 3, ..SamplerConfig::default() };
    let draw = |threads: usize| -> Vec<Vec<ForceTriplet>> {
        let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
        pool.install(|| {
            (0..200u64)
                .into_par_iter()
                .map(|i| sample_indexed(2 + (i % 5) as usize, i, &config).unwrap().forces.into_vec())
                .collect()
        })
    };
    assert_eq!(draw(1), draw(3));
}

#[test]
fn repeated_seed_repeats_the_list() {
    let config = SamplerConfig { seed: 42, ..SamplerConfig::default() };
    let a = sample_force_list(3, &config, &mut stream(42, Domain::ForceList, 3, 0)).unwrap();
    let b = sample_force_list(3, &config, &mut stream(42, Domain::ForceList, 3, 0)).unwrap();
    assert_eq!(a, b);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn emitted_lists_are_valid_and_balanced(seed in any::<u64>(), m in 2usize..=6, index in 0u64..1_000_000) {
        let config = SamplerConfig { seed, ..SamplerConfig::default() };
        let list = sample_indexed(m, index, &config).unwrap().forces;
        let f = list.as_slice();
        prop_assert_eq!(f.len(), m);
        prop_assert!(validate_force_list(f, &config).is_ok());
        let (fx, fy) = net_force(f);
        prop_assert!(fx.hypot(fy) <= BALANCE_TOLERANCE);
        prop_assert!(torque_residual(f).abs() <= BALANCE_TOLERANCE);
        prop_assert!(f.windows(2).all(|w| w[0].impact_angle <= w[1].impact_angle));
    }

    #[test]
    fn partial_angles_stay_in_their_sectors(seed in any::<u64>(), m in 2usize..=6) {
        let config = SamplerConfig::default();
        let mut rng = stream(seed, Domain::ForceList, m, 0);
        let partial = sample_partial_list(m, &config, &mut rng);
        prop_assert_eq!(partial.len(), m - 1);
        for (i, f) in partial.iter().enumerate() {
            let (lo, hi) = sector_band(i + 1, m, &config);
            prop_assert!(f.impact_angle >= lo && f.impact_angle <= hi);
            prop_assert!(f.magnitude > 0.0);
        }
    }
}
