//! Nelder-Mead simplex search with box constraints enforced by clamping.

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimplexOptions {
    pub max_evals: usize,
    /// Stop once the simplex values differ by less than `f_tol * (1 + |f_best|)`.
    pub f_tol: f64,
    /// ...and the vertices lie within this distance of the best one.
    pub x_tol: f64,
    /// Initial edge length as a fraction of each box width.
    pub initial_step: f64,
}

impl Default for SimplexOptions {
    fn default() -> Self {
        Self { max_evals: 2000, f_tol: 1e-12, x_tol: 1e-7, initial_step: 0.05 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimplexResult {
    pub x: Vec<f64>,
    pub f: f64,
    pub evals: usize,
    pub converged: bool,
}

fn clamp_into(x: &mut [f64], lower: &[f64], upper: &[f64]) {
    for ((xi, lo), hi) in x.iter_mut().zip(lower).zip(upper) {
        *xi = xi.clamp(*lo, *hi);
    }
}

/// Minimizes `f` over the box `[lower, upper]` starting from `x0`.
///
/// Non-finite objective values are treated as `+inf`.
pub fn minimize<F>(mut f: F, x0: &[f64], lower: &[f64], upper: &[f64], opts: &SimplexOptions) -> SimplexResult
where
    F: FnMut(&[f64]) -> f64,
{
    let n = x0.len();
    assert!(lower.len() == n && upper.len() == n, "bounds must match the dimension");
    let mut evals = 0usize;
    let mut eval = |x: &[f64], evals: &mut usize| {
        *evals += 1;
        let v = f(x);
        if v.is_finite() { v } else { f64::INFINITY }
    };

    let mut start = x0.to_vec();
    clamp_into(&mut start, lower, upper);
    let mut simplex: Vec<Vec<f64>> = vec![start.clone()];
    for i in 0..n {
        let mut v = start.clone();
        let step = opts.initial_step * (upper[i] - lower[i]);
        // step away from the nearer wall
        v[i] = if v[i] + step <= upper[i] { v[i] + step } else { v[i] - step };
        simplex.push(v);
    }
    let mut values: Vec<f64> = simplex.iter().map(|v| eval(v, &mut evals)).collect();

    let (alpha, gamma, rho, sigma) = (1.0, 2.0, 0.5, 0.5);
    let mut converged = false;
    while evals < opts.max_evals {
        let mut order: Vec<usize> = (0..=n).collect();
        order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
        simplex = order.iter().map(|&i| simplex[i].clone()).collect();
        values = order.iter().map(|&i| values[i]).collect();

        let spread_f = values[n] - values[0];
        let spread_x = simplex[1..]
            .iter()
            .flat_map(|v| v.iter().zip(&simplex[0]).map(|(a, b)| (a - b).abs()))
            .fold(0.0, f64::max);
        if spread_f.is_finite() && spread_f <= opts.f_tol * (1.0 + values[0].abs()) && spread_x <= opts.x_tol {
            converged = true;
            break;
        }

        let mut centroid = vec![0.0; n];
        for v in &simplex[..n] {
            for (c, x) in centroid.iter_mut().zip(v) {
                *c += x / n as f64;
            }
        }
        let toward = |coef: f64| {
            let mut p: Vec<f64> =
                centroid.iter().zip(&simplex[n]).map(|(c, w)| c + coef * (c - w)).collect();
            clamp_into(&mut p, lower, upper);
            p
        };

        let reflected = toward(alpha);
        let fr = eval(&reflected, &mut evals);
        if fr < values[0] {
            let expanded = toward(gamma);
            let fe = eval(&expanded, &mut evals);
            if fe < fr {
                simplex[n] = expanded;
                values[n] = fe;
            } else {
                simplex[n] = reflected;
                values[n] = fr;
            }
            continue;
        }
        if fr < values[n - 1] {
            simplex[n] = reflected;
            values[n] = fr;
            continue;
        }
        let (contracted, fc) = if fr < values[n] {
            let c = toward(rho * alpha);
            let fc = eval(&c, &mut evals);
            (c, fc)
        } else {
            let c = toward(-rho);
            let fc = eval(&c, &mut evals);
            (c, fc)
        };
        if fc < values[n].min(fr) {
            simplex[n] = contracted;
            values[n] = fc;
            continue;
        }
        // shrink toward the best vertex
        for i in 1..=n {
            let shrunk: Vec<f64> =
                simplex[0].iter().zip(&simplex[i]).map(|(b, x)| b + sigma * (x - b)).collect();
            values[i] = eval(&shrunk, &mut evals);
            simplex[i] = shrunk;
        }
    }

    let best = (0..=n).min_by(|&a, &b| values[a].total_cmp(&values[b])).expect("simplex is nonempty");
    SimplexResult { x: simplex[best].clone(), f: values[best], evals, converged }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn finds_quadratic_minimum() {
        let f = |x: &[f64]| (x[0] - 1.0).powi(2) + 10.0 * (x[1] + 0.5).powi(2);
        let r = minimize(f, &[3.0, 3.0], &[-5.0, -5.0], &[5.0, 5.0], &SimplexOptions::default());
        assert!(r.converged);
        assert!((r.x[0] - 1.0).abs() < 1e-5 && (r.x[1] + 0.5).abs() < 1e-5, "{:?}", r.x);
    }

    #[test]
    fn rosenbrock() {
        let f = |x: &[f64]| (1.0 - x[0]).powi(2) + 100.0 * (x[1] - x[0] * x[0]).powi(2);
        let opts = SimplexOptions { max_evals: 5000, ..Default::default() };
        let r = minimize(f, &[-1.2, 1.0], &[-2.0, -2.0], &[2.0, 2.0], &opts);
        assert!((r.x[0] - 1.0).abs() < 1e-4 && (r.x[1] - 1.0).abs() < 1e-4, "{:?}", r.x);
    }

    #[test]
    fn respects_bounds() {
        let f = |x: &[f64]| (x[0] + 10.0).powi(2) + x[1].powi(2);
        let r = minimize(f, &[0.5, 0.5], &[0.0, -1.0], &[1.0, 1.0], &SimplexOptions::default());
        assert!(r.x[0] >= 0.0 && r.x[0] < 1e-6);
        assert!(r.x[1].abs() < 1e-5);
    }

    #[test]
    fn stops_at_budget() {
        let f = |x: &[f64]| x.iter().map(|v| v.sin() * v.cos()).sum::<f64>();
        let opts = SimplexOptions { max_evals: 20, f_tol: 0.0, x_tol: 0.0, ..Default::default() };
        let r = minimize(f, &[0.3, 0.2, 0.1], &[-1.0; 3], &[1.0; 3], &opts);
        assert!(!r.converged);
        assert!(r.evals <= 20 + 4);
    }
}
