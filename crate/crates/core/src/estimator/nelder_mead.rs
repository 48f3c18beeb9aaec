//! Nelder–Mead simplex minimization with box constraints handled by projection.

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NelderMeadOptions {
    pub max_iterations: usize,
    /// Converged when the spread of objective values over the simplex drops to this.
    pub f_tolerance: f64,
    /// ... and the largest vertex distance from the best vertex drops to this.
    pub x_tolerance: f64,
    /// Fresh simplices built around the incumbent after convergence.
    pub restarts: usize,
}

impl Default for NelderMeadOptions {
    fn default() -> Self {
        Self {
            max_iterations: 500,
            f_tolerance: 1e-10,
            x_tolerance: 1e-7,
            restarts: 2,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Minimum {
    pub x: Vec<f64>,
    pub value: f64,
    pub iterations: usize,
    pub converged: bool,
}

/// Minimizes `f` starting from `x0`. `steps` sets the initial simplex edge along each
/// coordinate; `lower`/`upper` are per-coordinate bounds (use infinities for free
/// coordinates). Every trial point is clamped into the box before evaluation.
pub fn minimize<F>(
    f: F,
    x0: &[f64],
    steps: &[f64],
    lower: &[f64],
    upper: &[f64],
    opts: &NelderMeadOptions,
) -> Minimum
where
    F: Fn(&[f64]) -> f64,
{
    let n = x0.len();
    assert!(
        steps.len() == n && lower.len() == n && upper.len() == n,
        "dimension mismatch"
    );
    let project = |x: &mut [f64]| {
        for i in 0..n {
            x[i] = x[i].clamp(lower[i], upper[i]);
        }
    };
    let eval = |x: &[f64]| {
        let v = f(x);
        if v.is_nan() {
            f64::INFINITY
        } else {
            v
        }
    };

    let mut best = x0.to_vec();
    project(&mut best);
    let mut best_value = eval(&best);
    let mut total_iterations = 0;
    let mut converged = false;

    for round in 0..=opts.restarts {
        let (x, value, iterations, ok) =
            run(&eval, &project, &best, best_value, steps, upper, opts);
        total_iterations += iterations;
        let improvement = best_value - value;
        if value <= best_value {
            best = x;
            best_value = value;
        }
        converged = ok;
        if !ok || (round > 0 && improvement <= opts.f_tolerance) {
            break;
        }
    }
    Minimum {
        x: best,
        value: best_value,
        iterations: total_iterations,
        converged,
    }
}

fn run<E, P>(
    eval: &E,
    project: &P,
    x0: &[f64],
    f0: f64,
    steps: &[f64],
    upper: &[f64],
    opts: &NelderMeadOptions,
) -> (Vec<f64>, f64, usize, bool)
where
    E: Fn(&[f64]) -> f64,
    P: Fn(&mut [f64]),
{
    let n = x0.len();
    let mut simplex: Vec<(Vec<f64>, f64)> = Vec::with_capacity(n + 1);
    simplex.push((x0.to_vec(), f0));
    for i in 0..n {
        let mut v = x0.to_vec();
        // step away from a bound rather than into it
        let step = if v[i] + steps[i] > upper[i] {
            -steps[i]
        } else {
            steps[i]
        };
        v[i] += step;
        project(&mut v);
        if v[i] == x0[i] {
            v[i] -= step;
            project(&mut v);
        }
        let fv = eval(&v);
        simplex.push((v, fv));
    }

    let (alpha, gamma, rho, sigma) = (1.0, 2.0, 0.5, 0.5);
    let mut iterations = 0;
    loop {
        simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
        let f_spread = simplex[n].1 - simplex[0].1;
        let x_spread = simplex[1..]
            .iter()
            .map(|(v, _)| {
                v.iter()
                    .zip(&simplex[0].0)
                    .map(|(a, b)| (a - b).abs())
                    .fold(0.0, f64::max)
            })
            .fold(0.0, f64::max);
        if f_spread <= opts.f_tolerance && x_spread <= opts.x_tolerance {
            return (simplex[0].0.clone(), simplex[0].1, iterations, true);
        }
        if iterations >= opts.max_iterations {
            return (simplex[0].0.clone(), simplex[0].1, iterations, false);
        }
        iterations += 1;

        let mut centroid = vec![0.0; n];
        for (v, _) in &simplex[..n] {
            for i in 0..n {
                centroid[i] += v[i] / n as f64;
            }
        }
        let towards = |coef: f64| {
            let mut p: Vec<f64> = (0..n)
                .map(|i| centroid[i] + coef * (simplex[n].0[i] - centroid[i]))
                .collect();
            project(&mut p);
            let fp = eval(&p);
            (p, fp)
        };

        let reflected = towards(-alpha);
        if reflected.1 < simplex[0].1 {
            let expanded = towards(-gamma);
            simplex[n] = if expanded.1 < reflected.1 {
                expanded
            } else {
                reflected
            };
            continue;
        }
        if reflected.1 < simplex[n - 1].1 {
            simplex[n] = reflected;
            continue;
        }
        let contracted = if reflected.1 < simplex[n].1 {
            towards(-rho)
        } else {
            towards(rho)
        };
        if contracted.1 < simplex[n].1.min(reflected.1) {
            simplex[n] = contracted;
            continue;
        }
        let best = simplex[0].0.clone();
        for (v, fv) in simplex.iter_mut().skip(1) {
            for i in 0..n {
                v[i] = best[i] + sigma * (v[i] - best[i]);
            }
            project(v);
            *fv = eval(v);
        }
    }
}
