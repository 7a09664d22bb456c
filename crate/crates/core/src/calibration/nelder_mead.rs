//! Nelder-Mead simplex search with box constraints enforced by projection.

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NmOptions {
    pub max_iter: usize,
    /// Stop when the simplex spread in every coordinate, relative to the box
    /// width, falls below this.
    pub xtol: f64,
    /// ... and the spread of function values falls below
    /// `ftol * (|f_best| + ftol)`.
    pub ftol: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NmResult {
    pub x: Vec<f64>,
    pub f: f64,
    pub iterations: usize,
    pub converged: bool,
}

fn project(x: &mut [f64], lo: &[f64], hi: &[f64]) {
    for ((v, &l), &h) in x.iter_mut().zip(lo).zip(hi) {
        *v = v.clamp(l, h);
    }
}

/// Minimizes `f` over the box `[lo, hi]` from `x0`. Non-finite values are
/// treated as `+inf`.
pub fn minimize(f: impl Fn(&[f64]) -> f64, x0: &[f64], lo: &[f64], hi: &[f64], opts: &NmOptions) -> NmResult {
    let n = x0.len();
    let eval = |x: &[f64]| {
        let v = f(x);
        if v.is_finite() {
            v
        } else {
            f64::INFINITY
        }
    };
    let width: Vec<f64> = lo.iter().zip(hi).map(|(l, h)| (h - l).max(f64::MIN_POSITIVE)).collect();
    let mut start = x0.to_vec();
    project(&mut start, lo, hi);
    let mut simplex = vec![start.clone()];
    for i in 0..n {
        let mut v = start.clone();
        let step = 0.1 * width[i];
        v[i] = if v[i] + step <= hi[i] { v[i] + step } else { v[i] - step };
        simplex.push(v);
    }
    let mut values: Vec<f64> = simplex.iter().map(|x| eval(x)).collect();

    let mut iterations = 0;
    let mut converged = false;
    while iterations < opts.max_iter {
        let mut order: Vec<usize> = (0..=n).collect();
        order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
        simplex = order.iter().map(|&k| simplex[k].clone()).collect();
        values = order.iter().map(|&k| values[k]).collect();

        let f_spread = values[n] - values[0];
        let x_spread = (0..n)
            .map(|i| {
                let (mn, mx) = simplex.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v[i]), b.max(v[i])));
                (mx - mn) / width[i]
            })
            .fold(0.0, f64::max);
        if f_spread <= opts.ftol * (values[0].abs() + opts.ftol) && x_spread <= opts.xtol {
            converged = true;
            break;
        }
        iterations += 1;

        let centroid: Vec<f64> = (0..n).map(|i| simplex[..n].iter().map(|v| v[i]).sum::<f64>() / n as f64).collect();
        let along = |t: f64| {
            let mut p: Vec<f64> = (0..n).map(|i| centroid[i] + t * (simplex[n][i] - centroid[i])).collect();
            project(&mut p, lo, hi);
            p
        };
        let xr = along(-1.0);
        let fr = eval(&xr);
        if fr < values[0] {
            let xe = along(-2.0);
            let fe = eval(&xe);
            if fe < fr {
                simplex[n] = xe;
                values[n] = fe;
            } else {
                simplex[n] = xr;
                values[n] = fr;
            }
        } else if fr < values[n - 1] {
            simplex[n] = xr;
            values[n] = fr;
        } else {
            let (xc, fc) = if fr < values[n] {
                let xc = along(-0.5);
                let fc = eval(&xc);
                (xc, fc)
            } else {
                let xc = along(0.5);
                let fc = eval(&xc);
                (xc, fc)
            };
            if fc < values[n].min(fr) {
                simplex[n] = xc;
                values[n] = fc;
            } else {
                for k in 1..=n {
                    let mut p: Vec<f64> = (0..n).map(|i| simplex[0][i] + 0.5 * (simplex[k][i] - simplex[0][i])).collect();
                    project(&mut p, lo, hi);
                    values[k] = eval(&p);
                    simplex[k] = p;
                }
            }
        }
    }
    let best = (0..=n).min_by(|&a, &b| values[a].total_cmp(&values[b])).unwrap();
    NmResult { x: simplex[best].clone(), f: values[best], iterations, converged }
}
