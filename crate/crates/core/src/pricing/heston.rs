use num_complex::Complex;

use super::quad::{integrate_half_line, integrate_half_line_many};
use super::{bs_price_unchecked, EuroCall, SvParams};
use crate::error::Result;
use crate::scalar::Real;

// log(1 - a) - log(1 - b), accurate when both are tiny.
fn log_ratio_small<F: Real>(a: Complex<F>, b: Complex<F>) -> Complex<F> {
    let one = Complex::new(F::one(), F::zero());
    let tiny = F::lit(1e-4);
    if a.norm() < tiny && b.norm() < tiny {
        // (b - a) [1 + (a+b)/2 + (a^2+ab+b^2)/3 + (a^3+a^2 b+a b^2+b^3)/4]
        let s1 = (a + b) / F::lit(2.0);
        let s2 = (a * a + a * b + b * b) / F::lit(3.0);
        let s3 = (a * a * a + a * a * b + a * b * b + b * b * b) / F::lit(4.0);
        (b - a) * (one + s1 + s2 + s3)
    } else {
        (one - a).ln() - (one - b).ln()
    }
}

/// Characteristic function of `ln(S_T / S_0) - r tau` under the Heston
/// model, in the branch-cut-free "little trap" form. `u` may be complex.
///
/// `b - d` is computed as `-xi^2 (u^2 + iu) / (b + d)`, which stays exact as
/// `xi -> 0`.
pub fn heston_char_fn<F: Real>(u: Complex<F>, tau: F, p: &SvParams<F>) -> Complex<F> {
    let i = Complex::new(F::zero(), F::one());
    let xi2 = p.xi * p.xi;
    let b = Complex::new(p.kappa, F::zero()) - i * u * (p.rho * p.xi);
    let w = u * u + i * u;
    let d = (b * b + w * xi2).sqrt();
    let bpd = b + d;
    let q = -w / bpd; // (b - d) / xi^2
    let g = q * xi2 / bpd; // (b - d) / (b + d)
    let e = (-d * tau).exp();
    let one = Complex::new(F::one(), F::zero());
    let big_d = q * (one - e) / (one - g * e);
    // [ln(1 - g e) - ln(1 - g)] / xi^2
    let l = if g.norm() < F::lit(1e-4) {
        let a = g * e;
        let s1 = (a + g) / F::lit(2.0);
        let s2 = (a * a + a * g + g * g) / F::lit(3.0);
        let s3 = (a * a * a + a * a * g + a * g * g + g * g * g) / F::lit(4.0);
        q * (one - e) / bpd * (one + s1 + s2 + s3)
    } else {
        log_ratio_small(g * e, g) / xi2
    };
    let big_c = (q * tau - l * F::lit(2.0)) * (p.kappa * p.theta);
    (big_c + big_d * p.v0).exp()
}

const FIRST_BLOCK: f64 = 200.0;
const ABS_TOL: f64 = 1e-10;
const TAIL_TOL: f64 = 1e-10;

// Integrated variance over [0, tau] when xi = 0 (deterministic variance).
fn deterministic_total_variance<F: Real>(tau: F, p: &SvParams<F>) -> F {
    p.theta * tau + (p.v0 - p.theta) * (F::one() - (-p.kappa * tau).exp()) / p.kappa
}

/// Heston call via the single damped integral
/// `C = S - sqrt(S K) e^{-r tau / 2} / pi * int_0^inf Re[e^{iux} phi(u - i/2)] / (u^2 + 1/4) du`,
/// with `x = ln(S/K) + r tau`, integrated by adaptive Gauss-Kronrod.
pub fn sv_price<F: Real>(opt: &EuroCall<F>, p: &SvParams<F>) -> Result<F> {
    opt.validate()?;
    p.validate()?;
    if p.xi == F::zero() {
        let sigma = (deterministic_total_variance(opt.tau, p) / opt.tau).sqrt();
        return Ok(bs_price_unchecked(opt, sigma));
    }
    let x = (opt.spot / opt.strike).ln() + opt.r * opt.tau;
    let quarter = F::lit(0.25);
    let half = F::lit(0.5);
    let integrand = |u: F| {
        let z = Complex::new(u, -half);
        let phase = Complex::new(F::zero(), u * x).exp();
        (phase * heston_char_fn(z, opt.tau, p)).re / (u * u + quarter)
    };
    let integral = integrate_half_line(
        integrand,
        F::lit(FIRST_BLOCK),
        F::lit(ABS_TOL),
        F::lit(TAIL_TOL),
        50,
    )?;
    let scale = (opt.spot * opt.strike).sqrt() * (-half * opt.r * opt.tau).exp() / F::PI();
    let price = opt.spot - scale * integral;
    Ok(price.max(opt.lower_bound()).min(opt.upper_bound()))
}

/// Heston calls for several strikes sharing one maturity. The
/// characteristic function does not depend on the strike, so each
/// quadrature node evaluates it once for the whole strip.
pub fn sv_price_strip<F: Real>(spot: F, strikes: &[F], tau: F, r: F, p: &SvParams<F>) -> Result<Vec<F>> {
    let opts: Vec<EuroCall<F>> = strikes.iter().map(|&k| EuroCall::new(spot, k, tau, r)).collect();
    for o in &opts {
        o.validate()?;
    }
    p.validate()?;
    if p.xi == F::zero() || strikes.len() <= 1 {
        return opts.iter().map(|o| sv_price(o, p)).collect();
    }
    let xs: Vec<F> = strikes.iter().map(|&k| (spot / k).ln() + r * tau).collect();
    let quarter = F::lit(0.25);
    let half = F::lit(0.5);
    let integrand = |u: F, out: &mut [F]| {
        let phi = heston_char_fn(Complex::new(u, -half), tau, p) / (u * u + quarter);
        for (o, &x) in out.iter_mut().zip(&xs) {
            *o = (Complex::new(F::zero(), u * x).exp() * phi).re;
        }
    };
    let integrals =
        integrate_half_line_many(integrand, strikes.len(), F::lit(FIRST_BLOCK), F::lit(ABS_TOL), F::lit(TAIL_TOL), 50)?;
    Ok(opts
        .iter()
        .zip(integrals)
        .map(|(o, integral)| {
            let scale = (o.spot * o.strike).sqrt() * (-half * o.r * o.tau).exp() / F::PI();
            (o.spot - scale * integral).max(o.lower_bound()).min(o.upper_bound())
        })
        .collect())
}

/// Heston put from the two in-the-money probabilities
/// `P = K e^{-r tau} (1 - P2) - S (1 - P1)`, sharing [`heston_char_fn`] with
/// [`sv_price`] but not its integral representation.
pub fn sv_put<F: Real>(opt: &EuroCall<F>, p: &SvParams<F>) -> Result<F> {
    opt.validate()?;
    p.validate()?;
    let ln_k = opt.strike.ln();
    let drift = opt.spot.ln() + opt.r * opt.tau;
    let i = Complex::new(F::zero(), F::one());
    // CF of ln S_T.
    let phi = |u: Complex<F>| (i * u * drift).exp() * heston_char_fn(u, opt.tau, p);
    let phi_minus_i = phi(Complex::new(F::zero(), -F::one()));
    let p2_integrand = |u: F| {
        let z = Complex::new(u, F::zero());
        ((-i * z * ln_k).exp() * phi(z) / (i * z)).re
    };
    let p1_integrand = |u: F| {
        let z = Complex::new(u, F::zero());
        ((-i * z * ln_k).exp() * phi(z - i) / (i * z * phi_minus_i)).re
    };
    let tol = F::lit(ABS_TOL * 1e-2);
    let p1 = F::lit(0.5) + integrate_half_line(p1_integrand, F::lit(FIRST_BLOCK), tol, F::lit(1e-12), 50)? / F::PI();
    let p2 = F::lit(0.5) + integrate_half_line(p2_integrand, F::lit(FIRST_BLOCK), tol, F::lit(1e-12), 50)? / F::PI();
    Ok(opt.strike * opt.discount() * (F::one() - p2) - opt.spot * (F::one() - p1))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pricing::bs_price;

    fn sv(v0: f64, kappa: f64, theta: f64, xi: f64, rho: f64) -> SvParams<f64> {
        SvParams { v0, kappa, theta, xi, rho }
    }

    #[test]
    fn strip_matches_single_quotes() {
        let p = sv(0.04, 1.5, 0.05, 0.5, -0.7);
        let strikes = [80.0, 95.0, 100.0, 104.5, 130.0];
        for tau in [3.0 / 365.0, 0.25, 1.5] {
            let strip = sv_price_strip(100.0, &strikes, tau, 0.02, &p).unwrap();
            for (k, v) in strikes.iter().zip(strip) {
                let single = sv_price(&EuroCall::new(100.0, *k, tau, 0.02), &p).unwrap();
                assert!((v - single).abs() < 1e-8, "tau {tau} K {k}: {v} vs {single}");
            }
        }
    }

    // Reference prices from an independent scipy implementation (both the
    // damped single integral and the P1/P2 form agree to 1e-13).
    #[test]
    fn reference_prices() {
        let cases = [
            (EuroCall::new(100.0, 100.0, 0.5, 0.03), sv(0.04, 1.5, 0.05, 0.5, -0.7), 6.223_724_700_984_874),
            (EuroCall::new(100.0, 110.0, 1.0, 0.01), sv(0.09, 2.0, 0.04, 0.8, -0.3), 5.037_346_787_829_833),
            (EuroCall::new(1.0, 0.95, 0.1, 0.04), sv(0.03, 3.0, 0.05, 1.2, 0.2), 0.057_915_092_376_677_69),
        ];
        for (opt, p, want) in cases {
            let got = sv_price(&opt, &p).unwrap();
            assert!((got - want).abs() < 1e-8 * opt.spot, "{got} vs {want}");
        }
    }

    #[test]
    fn char_fn_is_normalized() {
        let p = sv(0.04, 1.5, 0.05, 0.5, -0.7);
        let at_zero = heston_char_fn(Complex::new(0.0, 0.0), 1.0, &p);
        assert!((at_zero - Complex::new(1.0, 0.0)).norm() < 1e-14);
        // E[S_T / S_0] e^{-r tau} = 1.
        let mart = heston_char_fn(Complex::new(0.0, -1.0), 1.0, &p);
        assert!((mart - Complex::new(1.0, 0.0)).norm() < 1e-12);
    }

    #[test]
    fn degenerate_vol_of_vol_matches_black_scholes() {
        let opt = EuroCall::new(100.0, 105.0, 0.75, 0.02);
        let sigma: f64 = 0.25;
        let p = sv(sigma * sigma, 2.0, sigma * sigma, 1e-6, -0.5);
        let bs = bs_price(&opt, sigma).unwrap();
        assert!((sv_price(&opt, &p).unwrap() - bs).abs() < 1e-6);
        let exact = sv(sigma * sigma, 2.0, sigma * sigma, 0.0, -0.5);
        assert!((sv_price(&opt, &exact).unwrap() - bs).abs() < 1e-12);
    }

    #[test]
    fn put_call_parity_across_representations() {
        let opt = EuroCall::new(100.0, 95.0, 1.0, 0.03);
        let p = sv(0.05, 1.2, 0.06, 0.7, -0.6);
        let call = sv_price(&opt, &p).unwrap();
        let put = sv_put(&opt, &p).unwrap();
        let parity = opt.spot - opt.strike * opt.discount();
        assert!((call - put - parity).abs() < 1e-8, "{}", call - put - parity);
    }
}
