//! Pricers against independent oracles: Simpson quadrature of the
//! lognormal payoff for BS, and Monte Carlo for JD and SV.

use approx::assert_abs_diff_eq;
use hedgelab::pricing::{bs_price, jd_price, sv_price, EuroCall, JdParams, SvParams};
use hedgelab::rng::{self, domain, open_uniform, standard_normal, Stream};

/// `e^{-r tau} E[(S_T - K)^+]` by composite Simpson over the standard
/// normal variable, starting at the exercise boundary.
fn simpson_call(s: f64, k: f64, tau: f64, r: f64, sigma: f64) -> f64 {
    let sd = sigma * tau.sqrt();
    let drift = (r - 0.5 * sigma * sigma) * tau;
    let z_star = ((k / s).ln() - drift) / sd;
    let (a, b) = (z_star.max(-12.0), 12.0);
    if a >= b {
        return 0.0;
    }
    let n = 20_000;
    let h = (b - a) / n as f64;
    let f = |z: f64| (s * (drift + sd * z).exp() - k).max(0.0) * (-0.5 * z * z).exp() / (2.0 * std::f64::consts::PI).sqrt();
    let mut sum = f(a) + f(b);
    for i in 1..n {
        sum += f(a + i as f64 * h) * if i % 2 == 1 { 4.0 } else { 2.0 };
    }
    (-r * tau).exp() * sum * h / 3.0
}

#[test]
fn bs_matches_simpson_quadrature() {
    let mut g = rng::stream(11, domain::MISC, 0);
    for _ in 0..300 {
        let s = 50.0 + 100.0 * open_uniform(&mut g);
        let k = s * (0.7 + 0.6 * open_uniform(&mut g));
        let tau = 0.02 + 2.0 * open_uniform(&mut g);
        let r = 0.08 * open_uniform(&mut g);
        let sigma = 0.05 + 0.6 * open_uniform(&mut g);
        let want = simpson_call(s, k, tau, r, sigma);
        let got = bs_price(&EuroCall::new(s, k, tau, r), sigma).unwrap();
        assert_abs_diff_eq!(got, want, epsilon = 1e-8 * s);
    }
}

fn poisson(g: &mut Stream, mean: f64) -> usize {
    // Count exponential arrivals before `mean`.
    let mut t = 0.0;
    let mut n = 0;
    loop {
        t -= open_uniform(g).ln();
        if t > mean {
            return n;
        }
        n += 1;
    }
}

fn mean_and_se(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    let v = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0);
    (m, (v / n).sqrt())
}

#[test]
fn jd_matches_monte_carlo() {
    let opt = EuroCall::new(1.0, 1.05, 0.75, 0.03);
    let p: JdParams<f64> = JdParams { sigma: 0.18, jump_intensity: 1.5, jump_mean: -0.08, jump_vol: 0.12 };
    let kappa = (p.jump_mean + 0.5 * p.jump_vol * p.jump_vol).exp() - 1.0;
    let mut g = rng::stream(12, domain::PATHS, 0);
    let payoffs: Vec<f64> = (0..200_000)
        .map(|_| {
            let n = poisson(&mut g, p.jump_intensity * opt.tau);
            let jumps: f64 = (0..n).map(|_| p.jump_mean + p.jump_vol * standard_normal(&mut g)).sum();
            let x = (opt.r - p.jump_intensity * kappa - 0.5 * p.sigma * p.sigma) * opt.tau
                + p.sigma * opt.tau.sqrt() * standard_normal(&mut g)
                + jumps;
            (-opt.r * opt.tau).exp() * (opt.spot * x.exp() - opt.strike).max(0.0)
        })
        .collect();
    let (mc, se) = mean_and_se(&payoffs);
    let price = jd_price(&opt, &p).unwrap();
    assert!((price - mc).abs() < 4.0 * se, "series {price} vs MC {mc} +- {se}");
}

#[test]
fn sv_matches_monte_carlo() {
    let opt = EuroCall::new(1.0, 1.0, 0.5, 0.02);
    let p: SvParams<f64> = SvParams { v0: 0.04, kappa: 2.0, theta: 0.05, xi: 0.4, rho: -0.6 };
    let steps = 200;
    let dt = opt.tau / steps as f64;
    let mut g = rng::stream(13, domain::PATHS, 0);
    let payoffs: Vec<f64> = (0..40_000)
        .map(|_| {
            // Full-truncation Euler in log price.
            let (mut x, mut v) = (0.0f64, p.v0);
            for _ in 0..steps {
                let z1 = standard_normal(&mut g);
                let z2 = p.rho * z1 + (1.0 - p.rho * p.rho).sqrt() * standard_normal(&mut g);
                let vp = v.max(0.0);
                x += (opt.r - 0.5 * vp) * dt + (vp * dt).sqrt() * z1;
                v += p.kappa * (p.theta - vp) * dt + p.xi * (vp * dt).sqrt() * z2;
            }
            (-opt.r * opt.tau).exp() * (opt.spot * x.exp() - opt.strike).max(0.0)
        })
        .collect();
    let (mc, se) = mean_and_se(&payoffs);
    let price = sv_price(&opt, &p).unwrap();
    // Discretization bias of the Euler scheme is well below 5e-4 here.
    assert!((price - mc).abs() < 4.0 * se + 5e-4, "integral {price} vs MC {mc} +- {se}");
}
