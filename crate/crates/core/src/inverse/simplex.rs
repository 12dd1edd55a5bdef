//! Derivative-free local minimisation: adaptive Nelder–Mead with restarts
//! followed by a central-difference gradient polish.
//!
//! The objective may return `+∞` to mark an infeasible point; such points
//! are never accepted as the best. `NaN` aborts.

#[derive(Debug, Clone, Copy)]
pub struct SimplexOptions {
    /// Iteration cap per restart.
    pub max_iterations: usize,
    /// Converged when the simplex value spread falls below `tolerance * (|f_best| + 1e-12)`.
    pub tolerance: f64,
    /// Initial simplex edge along each coordinate.
    pub initial_step: f64,
    pub max_restarts: usize,
}

#[derive(Debug, Clone)]
pub struct Minimum {
    pub x: Vec<f64>,
    pub value: f64,
    pub iterations: usize,
    /// Best value after each iteration (non-increasing).
    pub history: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NanObjective {
    pub iteration: usize,
}

struct Tracker {
    best_x: Vec<f64>,
    best: f64,
    iterations: usize,
    history: Vec<f64>,
}

impl Tracker {
    fn offer(&mut self, x: &[f64], v: f64) {
        if v < self.best {
            self.best = v;
            self.best_x.copy_from_slice(x);
        }
    }

    fn tick(&mut self) {
        self.iterations += 1;
        self.history.push(self.best);
    }
}

fn eval<F: FnMut(&[f64]) -> f64>(f: &mut F, x: &[f64], iteration: usize) -> Result<f64, NanObjective> {
    let v = f(x);
    if v.is_nan() {
        Err(NanObjective { iteration })
    } else {
        Ok(v)
    }
}

/// Minimises `f` from `start`; returns the best point ever evaluated.
pub fn minimize<F: FnMut(&[f64]) -> f64>(mut f: F, start: &[f64], opts: &SimplexOptions) -> Result<Minimum, NanObjective> {
    let n = start.len();
    let f0 = eval(&mut f, start, 0)?;
    let mut t = Tracker { best_x: start.to_vec(), best: f0, iterations: 0, history: Vec::new() };
    if n == 0 || f0 == 0.0 {
        return Ok(Minimum { x: t.best_x, value: t.best, iterations: 0, history: t.history });
    }

    let nf = n as f64;
    let (alpha, beta, gamma, delta) = (1.0, 1.0 + 2.0 / nf, 0.75 - 0.5 / nf, 1.0 - 1.0 / nf);

    for _restart in 0..=opts.max_restarts {
        let before = t.best;
        let origin = t.best_x.clone();
        let mut simplex: Vec<(Vec<f64>, f64)> = Vec::with_capacity(n + 1);
        simplex.push((origin.clone(), t.best));
        for i in 0..n {
            let mut x = origin.clone();
            x[i] += opts.initial_step;
            let mut v = eval(&mut f, &x, t.iterations)?;
            if v == f64::INFINITY {
                x[i] = origin[i] - opts.initial_step;
                v = eval(&mut f, &x, t.iterations)?;
            }
            t.offer(&x, v);
            simplex.push((x, v));
        }

        for _ in 0..opts.max_iterations {
            simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
            let fb = simplex[0].1;
            let fw = simplex[n].1;
            if fw.is_finite() && fw - fb <= opts.tolerance * (fb.abs() + 1e-12) {
                break;
            }
            let mut centroid = vec![0.0; n];
            for (x, _) in &simplex[..n] {
                for (c, xi) in centroid.iter_mut().zip(x) {
                    *c += xi / nf;
                }
            }
            let along = |k: f64, worst: &[f64]| -> Vec<f64> {
                centroid.iter().zip(worst).map(|(c, w)| c + k * (c - w)).collect()
            };
            let worst = simplex[n].0.clone();
            let xr = along(alpha, &worst);
            let fr = eval(&mut f, &xr, t.iterations)?;
            t.offer(&xr, fr);
            let second_worst = simplex[n - 1].1;
            if fr < fb {
                let xe = along(alpha * beta, &worst);
                let fe = eval(&mut f, &xe, t.iterations)?;
                t.offer(&xe, fe);
                simplex[n] = if fe < fr { (xe, fe) } else { (xr, fr) };
            } else if fr < second_worst {
                simplex[n] = (xr, fr);
            } else {
                let (xc, fc) = if fr < fw {
                    let xc = along(alpha * gamma, &worst);
                    let fc = eval(&mut f, &xc, t.iterations)?;
                    (xc, fc)
                } else {
                    let xc = along(-gamma, &worst);
                    let fc = eval(&mut f, &xc, t.iterations)?;
                    (xc, fc)
                };
                t.offer(&xc, fc);
                if fc < fr.min(fw) {
                    simplex[n] = (xc, fc);
                } else {
                    let anchor = simplex[0].0.clone();
                    for (x, v) in simplex.iter_mut().skip(1) {
                        for (xi, a) in x.iter_mut().zip(&anchor) {
                            *xi = a + delta * (*xi - a);
                        }
                        *v = eval(&mut f, x, t.iterations)?;
                        t.offer(x, *v);
                    }
                }
            }
            t.tick();
            if t.best == 0.0 {
                break;
            }
        }
        if !(t.best < before - opts.tolerance * (before.abs() + 1e-12)) {
            break;
        }
    }
    Ok(Minimum { x: t.best_x, value: t.best, iterations: t.iterations, history: t.history })
}

/// Central-difference gradient of `f` at `x` with per-coordinate `steps`.
pub fn central_gradient<F: FnMut(&[f64]) -> f64>(f: &mut F, x: &[f64], steps: &[f64]) -> Vec<f64> {
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|i| {
            probe[i] = x[i] + steps[i];
            let up = f(&probe);
            probe[i] = x[i] - steps[i];
            let down = f(&probe);
            probe[i] = x[i];
            (up - down) / (2.0 * steps[i])
        })
        .collect()
}

/// Steepest-descent polish with backtracking; only improvements are kept.
pub fn polish<F: FnMut(&[f64]) -> f64>(mut f: F, start: Minimum, steps: &[f64], rounds: usize) -> Result<Minimum, NanObjective> {
    let mut m = start;
    for _ in 0..rounds {
        let g = central_gradient(&mut f, &m.x, steps);
        if g.iter().any(|v| v.is_nan()) {
            return Err(NanObjective { iteration: m.iterations });
        }
        if !g.iter().all(|v| v.is_finite()) {
            break;
        }
        let gnorm = g.iter().map(|v| v * v).sum::<f64>().sqrt();
        if gnorm == 0.0 {
            break;
        }
        // step length starts at one finite-difference step and doubles
        // while the objective keeps dropping, otherwise halves
        let unit = steps.iter().copied().fold(f64::INFINITY, f64::min) / gnorm;
        let probe = |f: &mut F, k: f64| -> Result<(Vec<f64>, f64), NanObjective> {
            let x: Vec<f64> = m.x.iter().zip(&g).map(|(xi, gi)| xi - k * unit * gi).collect();
            let v = f(&x);
            if v.is_nan() { Err(NanObjective { iteration: m.iterations }) } else { Ok((x, v)) }
        };
        let mut accepted: Option<(Vec<f64>, f64)> = None;
        let mut k = 1.0;
        let first = probe(&mut f, k)?;
        if first.1 < m.value {
            accepted = Some(first);
            for _ in 0..30 {
                k *= 2.0;
                let next = probe(&mut f, k)?;
                if next.1 < accepted.as_ref().unwrap().1 {
                    accepted = Some(next);
                } else {
                    break;
                }
            }
        } else {
            for _ in 0..12 {
                k *= 0.5;
                let next = probe(&mut f, k)?;
                if next.1 < m.value {
                    accepted = Some(next);
                    break;
                }
            }
        }
        let improved = accepted.is_some();
        if let Some((x, v)) = accepted {
            m.x = x;
            m.value = v;
        }
        m.iterations += 1;
        m.history.push(m.value);
        if !improved {
            break;
        }
    }
    Ok(m)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn opts() -> SimplexOptions {
        SimplexOptions { max_iterations: 5000, tolerance: 1e-14, initial_step: 0.5, max_restarts: 3 }
    }

    #[test]
    fn rosenbrock() {
        let f = |x: &[f64]| (1.0 - x[0]).powi(2) + 100.0 * (x[1] - x[0] * x[0]).powi(2);
        let m = minimize(f, &[-1.2, 1.0], &opts()).unwrap();
        assert!((m.x[0] - 1.0).abs() < 1e-4 && (m.x[1] - 1.0).abs() < 1e-4, "{:?}", m.x);
        assert!(m.history.windows(2).all(|w| w[1] <= w[0]));
    }

    #[test]
    fn infeasible_region_is_avoided() {
        // minimum of the unconstrained bowl lies in the forbidden half-plane
        let f = |x: &[f64]| if x[0] < 0.5 { f64::INFINITY } else { x[0] * x[0] + (x[1] - 2.0).powi(2) };
        let m = minimize(f, &[3.0, 0.0], &opts()).unwrap();
        assert!(m.x[0] >= 0.5);
        assert!(m.value < 0.25 + 0.05, "{:?} {}", m.x, m.value);
    }

    #[test]
    fn zero_start_returns_immediately() {
        let mut calls = 0;
        let m = minimize(|x: &[f64]| { calls += 1; x[0].abs() }, &[0.0, 0.0], &opts()).unwrap();
        assert_eq!(m.iterations, 0);
        assert_eq!(calls, 1);
    }

    #[test]
    fn nan_aborts() {
        assert!(minimize(|_: &[f64]| f64::NAN, &[1.0], &opts()).is_err());
    }

    #[test]
    fn polish_descends_on_quadratic() {
        let mut f = |x: &[f64]| (x[0] - 0.3).powi(2) + 4.0 * (x[1] + 0.1).powi(2);
        let start = Minimum { x: vec![0.0, 0.0], value: f(&[0.0, 0.0]), iterations: 0, history: vec![] };
        let m = polish(&mut f, start, &[1e-4, 1e-4], 200).unwrap();
        assert!(m.value < 1e-6, "{}", m.value);
        let g = central_gradient(&mut f, &[1.0, 1.0], &[1e-3, 1e-3]);
        assert!((g[0] - 1.4).abs() < 1e-9 && (g[1] - 8.8).abs() < 1e-9);
    }
}
