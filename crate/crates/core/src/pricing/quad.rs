//! Adaptive Gauss-Kronrod (7/15) quadrature.

use crate::error::{Error, Result};
use crate::scalar::Real;

const XGK: [f64; 8] = [
    0.991_455_371_120_812_6,
    0.949_107_912_342_758_5,
    0.864_864_423_359_769_1,
    0.741_531_185_599_394_4,
    0.586_087_235_467_691_1,
    0.405_845_151_377_397_2,
    0.207_784_955_007_898_5,
    0.0,
];
const WGK: [f64; 8] = [
    0.022_935_322_010_529_224,
    0.063_092_092_629_978_55,
    0.104_790_010_322_250_18,
    0.140_653_259_715_525_92,
    0.169_004_726_639_267_9,
    0.190_350_578_064_785_4,
    0.204_432_940_075_298_9,
    0.209_482_141_084_727_83,
];
// Gauss weights for the odd Kronrod nodes XGK[1], XGK[3], XGK[5], XGK[7].
const WG: [f64; 4] = [
    0.129_484_966_168_869_7,
    0.279_705_391_489_276_7,
    0.381_830_050_505_118_9,
    0.417_959_183_673_469_4,
];

fn gk15<F: Real>(f: &impl Fn(F) -> F, a: F, b: F) -> (F, F) {
    let half = F::lit(0.5);
    let center = half * (a + b);
    let half_len = half * (b - a);
    let fc = f(center);
    let mut kronrod = fc * F::lit(WGK[7]);
    let mut gauss = fc * F::lit(WG[3]);
    for j in 0..7 {
        let dx = half_len * F::lit(XGK[j]);
        let pair = f(center - dx) + f(center + dx);
        kronrod += F::lit(WGK[j]) * pair;
        if j % 2 == 1 {
            gauss += F::lit(WG[j / 2]) * pair;
        }
    }
    (kronrod * half_len, ((kronrod - gauss) * half_len).abs())
}

/// Integrates `f` over `[a, b]` to absolute tolerance `tol` by recursive
/// bisection. Fails if more than `max_intervals` subintervals are needed.
pub fn integrate<F: Real>(f: impl Fn(F) -> F, a: F, b: F, tol: F, max_intervals: usize) -> Result<F> {
    let width = b - a;
    let mut stack = vec![(a, b)];
    let mut total = F::zero();
    let mut used = 0usize;
    while let Some((lo, hi)) = stack.pop() {
        used += 1;
        let (val, err) = gk15(&f, lo, hi);
        if !val.is_finite() {
            return Err(Error::Numeric(format!("non-finite integrand on [{lo}, {hi}]")));
        }
        let budget = tol * (hi - lo) / width;
        // Stop refining once the interval is at the floating point floor.
        let floor = F::epsilon() * F::lit(64.0) * (lo.abs() + hi.abs());
        if err <= budget || hi - lo <= floor {
            total += val;
        } else {
            if used + stack.len() > max_intervals {
                return Err(Error::Numeric(format!(
                    "quadrature did not converge within {max_intervals} intervals"
                )));
            }
            let mid = F::lit(0.5) * (lo + hi);
            stack.push((mid, hi));
            stack.push((lo, mid));
        }
    }
    Ok(total)
}

/// Integrates `f` over `[0, inf)`: first `[0, first_end]`, then successive
/// blocks of the same width until a block contributes less than `tail_tol`.
pub fn integrate_half_line<F: Real>(
    f: impl Fn(F) -> F,
    first_end: F,
    tol: F,
    tail_tol: F,
    max_blocks: usize,
) -> Result<F> {
    let mut total = integrate(&f, F::zero(), first_end, tol, 4000)?;
    let mut lo = first_end;
    for _ in 0..max_blocks {
        let hi = lo + first_end;
        let block = integrate(&f, lo, hi, tol, 4000)?;
        total += block;
        if block.abs() < tail_tol {
            return Ok(total);
        }
        lo = hi;
    }
    Err(Error::Numeric("integrand tail did not decay".into()))
}

fn gk15_many<F: Real>(f: &impl Fn(F, &mut [F]), n: usize, a: F, b: F) -> (Vec<F>, F) {
    let half = F::lit(0.5);
    let center = half * (a + b);
    let half_len = half * (b - a);
    let mut buf = vec![F::zero(); n];
    let mut lo_buf = vec![F::zero(); n];
    f(center, &mut buf);
    let mut kronrod: Vec<F> = buf.iter().map(|v| *v * F::lit(WGK[7])).collect();
    let mut gauss: Vec<F> = buf.iter().map(|v| *v * F::lit(WG[3])).collect();
    for j in 0..7 {
        let dx = half_len * F::lit(XGK[j]);
        f(center - dx, &mut lo_buf);
        f(center + dx, &mut buf);
        for k in 0..n {
            let pair = lo_buf[k] + buf[k];
            kronrod[k] += F::lit(WGK[j]) * pair;
            if j % 2 == 1 {
                gauss[k] += F::lit(WG[j / 2]) * pair;
            }
        }
    }
    let err = kronrod.iter().zip(&gauss).map(|(k, g)| ((*k - *g) * half_len).abs()).fold(F::zero(), |m, e| m.max(e));
    (kronrod.into_iter().map(|k| k * half_len).collect(), err)
}

/// [`integrate`] for `n` integrands evaluated together by `f(x, out)`.
/// Subdivision is shared and driven by the worst component.
pub fn integrate_many<F: Real>(
    f: impl Fn(F, &mut [F]),
    n: usize,
    a: F,
    b: F,
    tol: F,
    max_intervals: usize,
) -> Result<Vec<F>> {
    let width = b - a;
    let mut stack = vec![(a, b)];
    let mut total = vec![F::zero(); n];
    let mut used = 0usize;
    while let Some((lo, hi)) = stack.pop() {
        used += 1;
        let (vals, err) = gk15_many(&f, n, lo, hi);
        if vals.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric(format!("non-finite integrand on [{lo}, {hi}]")));
        }
        let budget = tol * (hi - lo) / width;
        let floor = F::epsilon() * F::lit(64.0) * (lo.abs() + hi.abs());
        if err <= budget || hi - lo <= floor {
            total.iter_mut().zip(&vals).for_each(|(t, v)| *t += *v);
        } else {
            if used + stack.len() > max_intervals {
                return Err(Error::Numeric(format!(
                    "quadrature did not converge within {max_intervals} intervals"
                )));
            }
            let mid = F::lit(0.5) * (lo + hi);
            stack.push((mid, hi));
            stack.push((lo, mid));
        }
    }
    Ok(total)
}

/// [`integrate_half_line`] for `n` integrands evaluated together.
pub fn integrate_half_line_many<F: Real>(
    f: impl Fn(F, &mut [F]),
    n: usize,
    first_end: F,
    tol: F,
    tail_tol: F,
    max_blocks: usize,
) -> Result<Vec<F>> {
    let mut total = integrate_many(&f, n, F::zero(), first_end, tol, 4000)?;
    let mut lo = first_end;
    for _ in 0..max_blocks {
        let hi = lo + first_end;
        let block = integrate_many(&f, n, lo, hi, tol, 4000)?;
        total.iter_mut().zip(&block).for_each(|(t, b)| *t += *b);
        if block.iter().all(|b| b.abs() < tail_tol) {
            return Ok(total);
        }
        lo = hi;
    }
    Err(Error::Numeric("integrand tail did not decay".into()))
}
