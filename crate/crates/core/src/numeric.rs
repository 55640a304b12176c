//! Small numerical kernels shared by the solvers: bracketing root search,
//! golden-section minimisation, adaptive Gauss-Kronrod quadrature and a few
//! log-space helpers.

use statrs::function::gamma::ln_gamma;

use crate::error::{Error, Result};

/// `ln C(n, k)` via log-gamma; stays finite for any `n` the library handles.
pub fn ln_choose(n: u64, k: u64) -> f64 {
    debug_assert!(k <= n);
    if k == 0 || k == n {
        return 0.0;
    }
    ln_gamma(n as f64 + 1.0) - ln_gamma(k as f64 + 1.0) - ln_gamma((n - k) as f64 + 1.0)
}

/// `ln Σ exp(x_i)` without overflow. Empty input gives `-inf`.
pub fn log_sum_exp(values: impl IntoIterator<Item = f64>) -> f64 {
    let values: Vec<f64> = values.into_iter().collect();
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    if max == f64::INFINITY {
        return f64::INFINITY;
    }
    max + values.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

/// Binomial probability mass `C(n,k) p^k (1-p)^(n-k)` evaluated in log space.
pub fn binomial_pmf(n: u64, k: u64, p: f64) -> f64 {
    if k > n {
        return 0.0;
    }
    if p == 0.0 {
        return if k == 0 { 1.0 } else { 0.0 };
    }
    if p == 1.0 {
        return if k == n { 1.0 } else { 0.0 };
    }
    (ln_choose(n, k) + k as f64 * p.ln() + (n - k) as f64 * (-p).ln_1p()).exp()
}

/// Absolute tolerance used by every threshold solver.
pub const ROOT_TOLERANCE: f64 = 1e-9;

/// Bisection on a bracket whose end points have opposite signs.
///
/// Returns the midpoint of the final bracket once it is narrower than
/// `abs_tol`.
pub fn bisect<F>(mut f: F, lo: f64, hi: f64, abs_tol: f64, what: &'static str) -> Result<f64>
where
    F: FnMut(f64) -> Result<f64>,
{
    let (mut lo, mut hi) = (lo, hi);
    let f_lo = f(lo)?;
    let f_hi = f(hi)?;
    if f_lo == 0.0 {
        return Ok(lo);
    }
    if f_hi == 0.0 {
        return Ok(hi);
    }
    if f_lo.signum() == f_hi.signum() || f_lo.is_nan() || f_hi.is_nan() {
        return Err(Error::Numeric {
            what,
            reason: format!("no sign change on [{lo}, {hi}]: f(lo) = {f_lo}, f(hi) = {f_hi}"),
        });
    }
    let lo_negative = f_lo < 0.0;
    for _ in 0..400 {
        if hi - lo <= abs_tol {
            break;
        }
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        let f_mid = f(mid)?;
        if f_mid.is_nan() {
            return Err(Error::Numeric {
                what,
                reason: format!("NaN at {mid}"),
            });
        }
        if f_mid == 0.0 {
            return Ok(mid);
        }
        if (f_mid < 0.0) == lo_negative {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Golden-section minimisation of a unimodal function on `[a, b]`.
///
/// Stops when the bracket is narrower than `rel_tol * max(|x|, tiny)`.
/// Returns `(argmin, min)`.
pub fn golden_section<F>(mut f: F, a: f64, b: f64, rel_tol: f64) -> Result<(f64, f64)>
where
    F: FnMut(f64) -> Result<f64>,
{
    const INV_PHI: f64 = 0.618_033_988_749_894_8;
    let (mut a, mut b) = if a <= b { (a, b) } else { (b, a) };
    let mut c = b - INV_PHI * (b - a);
    let mut d = a + INV_PHI * (b - a);
    let mut fc = f(c)?;
    let mut fd = f(d)?;
    for _ in 0..500 {
        let scale = c.abs().max(d.abs()).max(1e-12);
        if (b - a) <= rel_tol * scale {
            break;
        }
        if fc <= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - INV_PHI * (b - a);
            fc = f(c)?;
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + INV_PHI * (b - a);
            fd = f(d)?;
        }
    }
    // the end points are candidates too: a boundary optimum must not be lost
    let mut best = if fc <= fd { (c, fc) } else { (d, fd) };
    for x in [a, b] {
        let fx = f(x)?;
        if fx < best.1 {
            best = (x, fx);
        }
    }
    Ok(best)
}

// Gauss-Kronrod 7/15 nodes and weights (QUADPACK).
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
    0.022_935_322_010_529_22,
    0.063_092_092_629_978_55,
    0.104_790_010_322_250_2,
    0.140_653_259_715_525_9,
    0.169_004_726_639_267_9,
    0.190_350_578_064_785_4,
    0.204_432_940_075_298_9,
    0.209_482_141_084_727_8,
];
const WG: [f64; 4] = [
    0.129_484_966_168_869_7,
    0.279_705_391_489_276_7,
    0.381_830_050_505_118_9,
    0.417_959_183_673_469_4,
];

fn gk15<F: FnMut(f64) -> f64>(f: &mut F, a: f64, b: f64) -> (f64, f64) {
    let center = 0.5 * (a + b);
    let half = 0.5 * (b - a);
    let fc = f(center);
    let mut kronrod = fc * WGK[7];
    let mut gauss = fc * WG[3];
    for j in 0..7 {
        let dx = half * XGK[j];
        let f1 = f(center - dx);
        let f2 = f(center + dx);
        kronrod += WGK[j] * (f1 + f2);
        if j % 2 == 1 {
            gauss += WG[j / 2] * (f1 + f2);
        }
    }
    (kronrod * half, ((kronrod - gauss) * half).abs())
}

/// Adaptive Gauss-Kronrod quadrature with global error control.
///
/// Subdivides the interval with the largest error estimate until the summed
/// estimate is below `rel_tol * |I|` (or `abs_tol`).
pub fn integrate<F>(mut f: F, a: f64, b: f64, rel_tol: f64, abs_tol: f64) -> Result<f64>
where
    F: FnMut(f64) -> f64,
{
    if a == b {
        return Ok(0.0);
    }
    let (value, err) = gk15(&mut f, a, b);
    let mut segments = vec![(a, b, value, err)];
    for _ in 0..2000 {
        let total: f64 = segments.iter().map(|s| s.2).sum();
        let total_err: f64 = segments.iter().map(|s| s.3).sum();
        if !total.is_finite() {
            return Err(Error::Numeric {
                what: "quadrature",
                reason: format!("non-finite integrand on [{a}, {b}]"),
            });
        }
        if total_err <= (rel_tol * total.abs()).max(abs_tol) {
            return Ok(total);
        }
        let (idx, _) = segments
            .iter()
            .enumerate()
            .max_by(|x, y| x.1 .3.total_cmp(&y.1 .3))
            .expect("non-empty");
        let (lo, hi, _, _) = segments.swap_remove(idx);
        let mid = 0.5 * (lo + hi);
        let (v1, e1) = gk15(&mut f, lo, mid);
        let (v2, e2) = gk15(&mut f, mid, hi);
        segments.push((lo, mid, v1, e1));
        segments.push((mid, hi, v2, e2));
    }
    let total_err: f64 = segments.iter().map(|s| s.3).sum();
    // round-off floor: once the error estimate is at the level of machine
    // precision further splitting cannot help
    let total: f64 = segments.iter().map(|s| s.2).sum();
    if total_err <= 1e-13 * total.abs() {
        return Ok(total);
    }
    Err(Error::Numeric {
        what: "quadrature",
        reason: format!("no convergence on [{a}, {b}], error estimate {total_err:e}"),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bisect_finds_sqrt2() {
        let r = bisect(|x| Ok(x * x - 2.0), 0.0, 2.0, 1e-12, "test").unwrap();
        assert!((r - 2f64.sqrt()).abs() < 1e-11);
    }

    #[test]
    fn bisect_reports_missing_sign_change() {
        let err = bisect(|x| Ok(x * x + 1.0), -1.0, 1.0, 1e-9, "test").unwrap_err();
        assert!(matches!(err, Error::Numeric { .. }));
    }

    #[test]
    fn golden_section_keeps_boundary_minimum() {
        let (x, _) = golden_section(Ok, 1.0, 3.0, 1e-8).unwrap();
        assert_eq!(x, 1.0);
        let (x, fx) = golden_section(|x| Ok((x - 2.5).powi(2)), 0.0, 4.0, 1e-10).unwrap();
        assert!((x - 2.5).abs() < 1e-7 && fx < 1e-13);
    }

    #[test]
    fn gauss_kronrod_is_exact_for_smooth_functions() {
        let v = integrate(|x| x.exp(), 0.0, 1.0, 1e-14, 0.0).unwrap();
        assert!((v - (1f64.exp() - 1.0)).abs() < 1e-14);
        let v = integrate(|x| 1.0 / (1.0 + 25.0 * x * x), -1.0, 1.0, 1e-13, 0.0).unwrap();
        assert!((v - 0.4 * 5f64.atan()).abs() < 1e-12);
    }

    #[test]
    fn log_sum_exp_handles_extremes() {
        assert_eq!(log_sum_exp([]), f64::NEG_INFINITY);
        let v = log_sum_exp([-1000.0, -1000.0]);
        assert!((v - (-1000.0 + 2f64.ln())).abs() < 1e-12);
    }

    #[test]
    fn binomial_pmf_sums_to_one() {
        let total: f64 = (0..=40).map(|k| binomial_pmf(40, k, 0.3)).sum();
        assert!((total - 1.0).abs() < 1e-13);
    }
}
