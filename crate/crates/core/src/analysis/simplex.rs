//! Nelder–Mead minimization.

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimplexOptions {
    /// Stop when the simplex diameter falls below `tol · max(1, |x|∞)`.
    pub tol: f64,
    pub max_iter: usize,
    /// Fresh simplices started from the best point after convergence.
    pub restarts: usize,
}

impl Default for SimplexOptions {
    fn default() -> Self {
        Self { tol: 1e-8, max_iter: 2000, restarts: 2 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimplexResult {
    pub x: Vec<f64>,
    pub value: f64,
    pub iterations: usize,
    pub converged: bool,
}

fn diameter(simplex: &[Vec<f64>]) -> f64 {
    let best = &simplex[0];
    simplex[1..]
        .iter()
        .flat_map(|v| v.iter().zip(best).map(|(a, b)| (a - b).abs()))
        .fold(0.0, f64::max)
}

fn run(f: &mut impl FnMut(&[f64]) -> f64, x0: &[f64], steps: &[f64], opts: &SimplexOptions) -> SimplexResult {
    let n = x0.len();
    let eval = |f: &mut dyn FnMut(&[f64]) -> f64, x: &[f64]| {
        let v = f(x);
        if v.is_nan() { f64::INFINITY } else { v }
    };
    let mut simplex: Vec<Vec<f64>> = vec![x0.to_vec()];
    for i in 0..n {
        let mut v = x0.to_vec();
        v[i] += if steps[i] != 0.0 { steps[i] } else { 1e-3 };
        simplex.push(v);
    }
    let mut values: Vec<f64> = simplex.iter().map(|v| eval(f, v)).collect();
    let mut iterations = 0;
    let mut converged = false;
    while iterations < opts.max_iter {
        let mut idx: Vec<usize> = (0..=n).collect();
        idx.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
        simplex = idx.iter().map(|&i| simplex[i].clone()).collect();
        values = idx.iter().map(|&i| values[i]).collect();
        let scale = simplex[0].iter().fold(1.0f64, |m, v| m.max(v.abs()));
        if diameter(&simplex) < opts.tol * scale {
            converged = true;
            break;
        }
        iterations += 1;
        let centroid: Vec<f64> = (0..n).map(|j| simplex[..n].iter().map(|v| v[j]).sum::<f64>() / n as f64).collect();
        let along = |t: f64| -> Vec<f64> { (0..n).map(|j| centroid[j] + t * (simplex[n][j] - centroid[j])).collect() };
        let xr = along(-1.0);
        let fr = eval(f, &xr);
        if fr < values[0] {
            let xe = along(-2.0);
            let fe = eval(f, &xe);
            if fe < fr {
                simplex[n] = xe;
                values[n] = fe;
            } else {
                simplex[n] = xr;
                values[n] = fr;
            }
            continue;
        }
        if fr < values[n - 1] {
            simplex[n] = xr;
            values[n] = fr;
            continue;
        }
        let (xc, fc) = if fr < values[n] {
            let xc = along(-0.5);
            let fc = eval(f, &xc);
            (xc, fc)
        } else {
            let xc = along(0.5);
            let fc = eval(f, &xc);
            (xc, fc)
        };
        if fc < values[n].min(fr) {
            simplex[n] = xc;
            values[n] = fc;
            continue;
        }
        for i in 1..=n {
            let v: Vec<f64> = (0..n).map(|j| simplex[0][j] + 0.5 * (simplex[i][j] - simplex[0][j])).collect();
            values[i] = eval(f, &v);
            simplex[i] = v;
        }
    }
    let best = (0..=n).min_by(|&a, &b| values[a].total_cmp(&values[b])).unwrap();
    SimplexResult { x: simplex[best].clone(), value: values[best], iterations, converged }
}

/// Minimizes `f` from `x0` with initial simplex offsets `steps`.
pub fn minimize(mut f: impl FnMut(&[f64]) -> f64, x0: &[f64], steps: &[f64], opts: &SimplexOptions) -> SimplexResult {
    assert_eq!(x0.len(), steps.len(), "one step per coordinate");
    let mut res = run(&mut f, x0, steps, opts);
    for _ in 0..opts.restarts {
        if !res.converged {
            break;
        }
        let restart_steps: Vec<f64> = steps
            .iter()
            .zip(&res.x)
            .map(|(s, x)| (0.05 * s.abs()).max(1e-4 * x.abs()).max(1e-10))
            .collect();
        let again = run(&mut f, &res.x, &restart_steps, opts);
        let improved = again.value < res.value;
        let total = res.iterations + again.iterations;
        if improved {
            res = SimplexResult { iterations: total, ..again };
        } else {
            res.iterations = total;
            break;
        }
    }
    res
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rosenbrock() {
        let f = |x: &[f64]| (1.0 - x[0]).powi(2) + 100.0 * (x[1] - x[0] * x[0]).powi(2);
        let r = minimize(f, &[-1.2, 1.0], &[0.5, 0.5], &SimplexOptions::default());
        assert!(r.converged);
        assert!((r.x[0] - 1.0).abs() < 1e-6 && (r.x[1] - 1.0).abs() < 1e-6, "{:?}", r.x);
    }

    #[test]
    fn quadratic_in_four_dimensions() {
        let c = [3.0, -2.0, 0.5, 10.0];
        let f = |x: &[f64]| x.iter().zip(&c).enumerate().map(|(i, (a, b))| (i as f64 + 1.0) * (a - b).powi(2)).sum::<f64>();
        let r = minimize(f, &[0.0; 4], &[1.0; 4], &SimplexOptions::default());
        for i in 0..4 {
            assert!((r.x[i] - c[i]).abs() < 1e-6);
        }
    }

    #[test]
    fn iteration_cap_reports_not_converged() {
        let f = |x: &[f64]| (1.0 - x[0]).powi(2) + 100.0 * (x[1] - x[0] * x[0]).powi(2);
        let r = minimize(f, &[-1.2, 1.0], &[0.5, 0.5], &SimplexOptions { max_iter: 5, ..SimplexOptions::default() });
        assert!(!r.converged);
        assert_eq!(r.iterations, 5);
    }
}
