//! European call pricers for the parametric baselines: Black-Scholes,
//! Merton jump-diffusion and Heston stochastic volatility, plus an
//! implied-volatility inverter and a bump-and-reprice delta.

mod heston;
pub mod quad;

pub use heston::{heston_char_fn, sv_price, sv_price_strip, sv_put};

use serde::{Deserialize, Serialize};

use crate::error::{ensure, Error, Result};
use crate::scalar::{norm_cdf, norm_pdf, Real};

/// European call contract seen from a given spot.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EuroCall<F> {
    pub strike: F,
    /// Time to maturity in years.
    pub tau: F,
    pub spot: F,
    pub r: F,
}

impl<F: Real> EuroCall<F> {
    pub fn new(spot: F, strike: F, tau: F, r: F) -> Self {
        Self { strike, tau, spot, r }
    }

    pub fn validate(&self) -> Result<()> {
        ensure!(self.strike > F::zero(), Validation, "strike must be > 0");
        ensure!(self.tau > F::zero(), Validation, "tau must be > 0");
        ensure!(self.spot > F::zero(), Validation, "spot must be > 0");
        ensure!(self.r.is_finite(), Validation, "rate must be finite");
        Ok(())
    }

    pub fn discount(&self) -> F {
        (-self.r * self.tau).exp()
    }

    pub fn forward(&self) -> F {
        self.spot * (self.r * self.tau).exp()
    }

    /// No-arbitrage lower bound `max(S - K e^{-r tau}, 0)`.
    pub fn lower_bound(&self) -> F {
        (self.spot - self.strike * self.discount()).max(F::zero())
    }

    pub fn upper_bound(&self) -> F {
        self.spot
    }

    pub fn with_spot(&self, spot: F) -> Self {
        Self { spot, ..*self }
    }

    pub fn payoff(&self, s: F) -> F {
        (s - self.strike).max(F::zero())
    }
}

/// Merton jump-diffusion parameters (lognormal jump sizes).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct JdParams<F> {
    pub sigma: F,
    /// Jumps per year.
    pub jump_intensity: F,
    /// Mean of the log jump size.
    pub jump_mean: F,
    /// Standard deviation of the log jump size.
    pub jump_vol: F,
}

impl<F: Real> JdParams<F> {
    pub fn validate(&self) -> Result<()> {
        ensure!(self.sigma >= F::zero(), Validation, "sigma must be >= 0");
        ensure!(self.jump_intensity >= F::zero(), Validation, "jump intensity must be >= 0");
        ensure!(self.jump_vol >= F::zero(), Validation, "jump vol must be >= 0");
        ensure!(self.jump_mean.is_finite(), Validation, "jump mean must be finite");
        Ok(())
    }
}

/// Heston parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SvParams<F> {
    pub v0: F,
    pub kappa: F,
    pub theta: F,
    /// Volatility of variance.
    pub xi: F,
    pub rho: F,
}

impl<F: Real> SvParams<F> {
    pub fn validate(&self) -> Result<()> {
        ensure!(self.v0 > F::zero(), Validation, "v0 must be > 0");
        ensure!(self.kappa > F::zero(), Validation, "kappa must be > 0");
        ensure!(self.theta > F::zero(), Validation, "theta must be > 0");
        ensure!(self.xi >= F::zero(), Validation, "xi must be >= 0");
        ensure!(self.rho.abs() <= F::one(), Validation, "rho must lie in [-1, 1]");
        Ok(())
    }
}

fn bs_d1<F: Real>(opt: &EuroCall<F>, sigma: F) -> F {
    let sd = sigma * opt.tau.sqrt();
    ((opt.spot / opt.strike).ln() + (opt.r + F::lit(0.5) * sigma * sigma) * opt.tau) / sd
}

/// Black-Scholes call value; `sigma = 0` gives the discounted intrinsic value.
pub fn bs_price<F: Real>(opt: &EuroCall<F>, sigma: F) -> Result<F> {
    opt.validate()?;
    ensure!(sigma >= F::zero() && sigma.is_finite(), Validation, "sigma must be finite and >= 0");
    Ok(bs_price_unchecked(opt, sigma))
}

pub(crate) fn bs_price_unchecked<F: Real>(opt: &EuroCall<F>, sigma: F) -> F {
    let sd = sigma * opt.tau.sqrt();
    let disc_k = opt.strike * opt.discount();
    if sd <= F::epsilon() * F::epsilon() {
        return (opt.spot - disc_k).max(F::zero());
    }
    let d1 = bs_d1(opt, sigma);
    let d2 = d1 - sd;
    let v = opt.spot * norm_cdf(d1) - disc_k * norm_cdf(d2);
    v.max(opt.lower_bound()).min(opt.spot)
}

/// Black-Scholes call delta `N(d1)`.
pub fn bs_delta<F: Real>(opt: &EuroCall<F>, sigma: F) -> F {
    let sd = sigma * opt.tau.sqrt();
    if sd <= F::epsilon() * F::epsilon() {
        return if opt.spot > opt.strike * opt.discount() { F::one() } else { F::zero() };
    }
    norm_cdf(bs_d1(opt, sigma))
}

/// Black-Scholes vega `S phi(d1) sqrt(tau)`.
pub fn bs_vega<F: Real>(opt: &EuroCall<F>, sigma: F) -> F {
    let sd = sigma * opt.tau.sqrt();
    if sd <= F::zero() {
        return F::zero();
    }
    opt.spot * norm_pdf(bs_d1(opt, sigma)) * opt.tau.sqrt()
}

/// Merton (1976) series, truncated once the remaining Poisson mass is below
/// `1e-12`.
pub fn jd_price<F: Real>(opt: &EuroCall<F>, p: &JdParams<F>) -> Result<F> {
    opt.validate()?;
    p.validate()?;
    let half = F::lit(0.5);
    let jump_var = p.jump_vol * p.jump_vol;
    let log_mean_jump = p.jump_mean + half * jump_var;
    let k = log_mean_jump.exp() - F::one();
    let lam_tau = p.jump_intensity * (F::one() + k) * opt.tau;
    let mut weight = (-lam_tau).exp();
    let mut mass = F::zero();
    let mut total = F::zero();
    let tail_tol = F::lit(1e-12).max(F::epsilon() * F::lit(16.0));
    for n in 0..=200usize {
        let nf = F::from_usize(n).unwrap();
        let sigma_n = (p.sigma * p.sigma + nf * jump_var / opt.tau).sqrt();
        let r_n = opt.r - p.jump_intensity * k + nf * log_mean_jump / opt.tau;
        let leg = EuroCall { r: r_n, ..*opt };
        // Weights use lambda (1 + k); the e^{(r_n - r) tau} factor of each
        // conditional price is absorbed into them.
        total += weight * bs_price_unchecked(&leg, sigma_n);
        mass += weight;
        if F::one() - mass < tail_tol {
            return Ok(total);
        }
        weight = weight * lam_tau / (nf + F::one());
    }
    Err(Error::Numeric(format!(
        "Merton series did not converge in 200 terms (intensity*tau = {lam_tau})"
    )))
}

/// Black-Scholes implied volatility by bracketed bisection with a Newton
/// polish. Prices outside the no-arbitrage band are a domain error.
pub fn implied_vol<F: Real>(opt: &EuroCall<F>, price: F) -> Result<F> {
    opt.validate()?;
    let lower = opt.lower_bound();
    let upper = opt.upper_bound();
    ensure!(
        price.is_finite() && price > lower && price < upper,
        Domain,
        "price {price} outside no-arbitrage bounds ({lower}, {upper})"
    );
    let f = |s: F| bs_price_unchecked(opt, s) - price;
    let mut lo = F::zero();
    let mut hi = F::one();
    let mut expand = 0;
    while f(hi) < F::zero() {
        lo = hi;
        hi = hi * F::lit(2.0);
        expand += 1;
        ensure!(expand < 12, Domain, "no volatility below {hi} reproduces price {price}");
    }
    // Coarse bisection so Newton starts inside its basin on low-vega wings.
    for _ in 0..12 {
        let mid = F::lit(0.5) * (lo + hi);
        if f(mid) < F::zero() {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let mut sigma = F::lit(0.5) * (lo + hi);
    for _ in 0..100 {
        let diff = f(sigma);
        if diff == F::zero() {
            break;
        }
        if diff < F::zero() {
            lo = sigma;
        } else {
            hi = sigma;
        }
        let vega = bs_vega(opt, sigma);
        let newton = sigma - diff / vega;
        let next = if vega > F::zero() && newton > lo && newton < hi {
            newton
        } else {
            F::lit(0.5) * (lo + hi)
        };
        let step = (next - sigma).abs();
        sigma = next;
        if step <= F::epsilon() * sigma || hi - lo <= F::epsilon() * hi {
            break;
        }
    }
    let resid = f(sigma).abs();
    ensure!(
        resid < F::lit(1e-10) * opt.spot,
        Numeric,
        "implied vol residual {resid} above tolerance"
    );
    Ok(sigma)
}

/// Central-difference delta with relative spot bump `h_rel`.
pub fn numeric_delta<F: Real>(
    price_fn: impl Fn(&EuroCall<F>) -> Result<F>,
    opt: &EuroCall<F>,
    h_rel: F,
) -> Result<F> {
    let h = h_rel * opt.spot;
    let up = price_fn(&opt.with_spot(opt.spot + h))?;
    let down = price_fn(&opt.with_spot(opt.spot - h))?;
    Ok((up - down) / (F::lit(2.0) * h))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn atm() -> EuroCall<f64> {
        EuroCall::new(100.0, 100.0, 1.0, 0.05)
    }

    #[test]
    fn zero_vol_is_intrinsic() {
        let opt = EuroCall::new(100.0, 90.0, 1.0, 0.0);
        assert_eq!(bs_price(&opt, 0.0).unwrap(), 10.0);
        let otm = EuroCall::new(100.0, 110.0, 1.0, 0.0);
        assert_eq!(bs_price(&otm, 0.0).unwrap(), 0.0);
    }

    #[test]
    fn textbook_value() {
        // Hull's classic ATM example; also checked against a quadrature
        // oracle in the integration tests.
        let v = bs_price(&atm(), 0.2).unwrap();
        assert!((v - 10.450_583_572_185_565).abs() < 1e-10, "{v}");
        assert!(bs_price(&atm(), 0.3).unwrap() > v);
    }

    #[test]
    fn delta_limits_and_fd() {
        let deep_itm = EuroCall::new(200.0, 100.0, 0.5, 0.01);
        let deep_otm = EuroCall::new(50.0, 100.0, 0.5, 0.01);
        assert!(bs_delta(&deep_itm, 0.1) > 1.0 - 1e-12);
        assert!(bs_delta(&deep_otm, 0.1) < 1e-12);
        let opt = EuroCall::<f64>::new(103.0, 100.0, 0.7, 0.03);
        let fd = numeric_delta(|o| bs_price(o, 0.25), &opt, 1e-4).unwrap();
        assert!((fd - bs_delta(&opt, 0.25)).abs() < 1e-6);
    }

    #[test]
    fn numeric_delta_exact_cases() {
        let opt = atm();
        let flat = numeric_delta(|_| Ok(3.0), &opt, 1e-4).unwrap();
        assert_eq!(flat, 0.0);
        let lin = numeric_delta(|o: &EuroCall<f64>| Ok(2.0 + 0.37 * o.spot), &opt, 1e-4).unwrap();
        assert!((lin - 0.37).abs() < 1e-10);
    }

    #[test]
    fn merton_nests_black_scholes() {
        let opt = EuroCall::<f64>::new(100.0, 95.0, 0.5, 0.02);
        let bs = bs_price(&opt, 0.25).unwrap();
        let none = JdParams { sigma: 0.25, jump_intensity: 0.0, jump_mean: -0.1, jump_vol: 0.3 };
        assert!((jd_price(&opt, &none).unwrap() - bs).abs() <= 1e-12);
        let trivial = JdParams { sigma: 0.25, jump_intensity: 1.5, jump_mean: 0.0, jump_vol: 0.0 };
        assert!((jd_price(&opt, &trivial).unwrap() - bs).abs() <= 1e-10);
    }

    #[test]
    fn merton_rejects_divergent_series() {
        let opt = EuroCall::new(100.0, 95.0, 50.0, 0.02);
        let wild = JdParams { sigma: 0.2, jump_intensity: 5.0, jump_mean: 0.5, jump_vol: 0.1 };
        assert!(matches!(jd_price(&opt, &wild), Err(Error::Numeric(_))));
    }

    #[test]
    fn implied_vol_round_trip_and_bounds() {
        let opt = atm();
        let p = bs_price(&opt, 0.2).unwrap();
        assert!((implied_vol(&opt, p).unwrap() - 0.2).abs() < 1e-8);
        let itm = EuroCall::new(150.0, 50.0, 1.0, 0.05);
        assert!(matches!(implied_vol(&itm, itm.lower_bound()), Err(Error::Domain(_))));
        assert!(matches!(implied_vol(&opt, 100.0), Err(Error::Domain(_))));
        assert!(matches!(implied_vol(&opt, -1.0), Err(Error::Domain(_))));
    }

    #[test]
    fn single_precision_pricing() {
        let opt = EuroCall::<f32>::new(100.0, 100.0, 1.0, 0.05);
        let v = bs_price(&opt, 0.2).unwrap();
        assert!((v - 10.450_584).abs() < 1e-3);
    }

    proptest! {
        #[test]
        fn bounds_and_monotonicity(
            spot in 20.0f64..200.0,
            k_ratio in 0.5f64..1.5,
            tau in 0.01f64..3.0,
            r in 0.0f64..0.1,
            sigma in 0.01f64..1.5,
        ) {
            let opt = EuroCall::new(spot, spot * k_ratio, tau, r);
            let c = bs_price(&opt, sigma).unwrap();
            prop_assert!(c >= opt.lower_bound() && c <= opt.upper_bound());
            let longer = bs_price(&EuroCall { tau: tau * 1.1, ..opt }, sigma).unwrap();
            prop_assert!(longer >= c - 1e-12);
            let higher_k = bs_price(&EuroCall { strike: opt.strike * 1.05, ..opt }, sigma).unwrap();
            prop_assert!(higher_k <= c + 1e-12);
            let d = bs_delta(&opt, sigma);
            prop_assert!((0.0..=1.0).contains(&d));

            let jd = JdParams { sigma, jump_intensity: 0.7, jump_mean: -0.05, jump_vol: 0.15 };
            let cj = jd_price(&opt, &jd).unwrap();
            prop_assert!(cj >= opt.lower_bound() - 1e-9 && cj <= opt.upper_bound() + 1e-9);
            let cj_k = jd_price(&EuroCall { strike: opt.strike * 1.05, ..opt }, &jd).unwrap();
            prop_assert!(cj_k <= cj + 1e-9);
        }
    }
}
