//! Special functions and periodic quadrature shared by the estimators.
//!
//! Every θ-average in the photon statistics is a mean of a smooth,
//! 2π-periodic integrand, so the trapezoid rule on equally spaced nodes
//! converges geometrically. Node sets are nested so each doubling reuses
//! the previous evaluations.

use std::f64::consts::PI;

use crate::error::{Error, Result};

/// Controls the periodic trapezoid rule.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuadratureSpec {
    /// Initial number of equally spaced nodes on `[0, 2π)`. At least 16.
    pub node_count: usize,
    /// Maximum number of node doublings.
    pub refinement_limit: u32,
    /// Successive estimates must agree to this relative tolerance.
    pub relative_tolerance: f64,
}

impl Default for QuadratureSpec {
    fn default() -> Self {
        Self { node_count: 16, refinement_limit: 10, relative_tolerance: 1e-14 }
    }
}

impl QuadratureSpec {
    pub fn validate(&self) -> Result<()> {
        if self.node_count < 16 {
            return Err(Error::InvalidParameter(format!(
                "quadrature node_count must be >= 16, got {}",
                self.node_count
            )));
        }
        if !(self.relative_tolerance > 0.0) {
            return Err(Error::InvalidParameter("quadrature relative_tolerance must be positive".into()));
        }
        Ok(())
    }
}

/// Mean of a 2π-periodic function over one period.
///
/// The estimate is accepted once two successive doublings agree to
/// `relative_tolerance` measured against the mean of `|f|`, which keeps
/// integrands with vanishing mean (e.g. `cos θ`) from stalling.
pub fn periodic_quadrature<F>(f: F, spec: QuadratureSpec) -> Result<f64>
where
    F: Fn(f64) -> f64,
{
    let mut out = [0.0];
    let value = periodic_quadrature_vec(1, |theta, buf| buf[0] = f(theta), spec)?;
    out[0] = value[0];
    Ok(out[0])
}

/// Vector-valued variant of [`periodic_quadrature`]: `f` writes `dim`
/// integrand values for node `θ` into the supplied buffer. Convergence is
/// required component by component.
pub fn periodic_quadrature_vec<F>(dim: usize, mut f: F, spec: QuadratureSpec) -> Result<Vec<f64>>
where
    F: FnMut(f64, &mut [f64]),
{
    spec.validate()?;
    let mut buf = vec![0.0; dim];
    let mut sum = vec![0.0; dim];
    let mut abs_sum = vec![0.0; dim];

    let mut accumulate = |theta: f64, sum: &mut [f64], abs_sum: &mut [f64]| {
        f(theta, &mut buf);
        for ((s, a), v) in sum.iter_mut().zip(abs_sum.iter_mut()).zip(&buf) {
            *s += v;
            *a += v.abs();
        }
    };

    let mut nodes = spec.node_count;
    let step = 2.0 * PI / nodes as f64;
    for k in 0..nodes {
        accumulate(k as f64 * step, &mut sum, &mut abs_sum);
    }
    let mut estimate: Vec<f64> = sum.iter().map(|s| s / nodes as f64).collect();

    for _ in 0..spec.refinement_limit {
        let step = 2.0 * PI / nodes as f64;
        for k in 0..nodes {
            accumulate((k as f64 + 0.5) * step, &mut sum, &mut abs_sum);
        }
        nodes *= 2;
        let next: Vec<f64> = sum.iter().map(|s| s / nodes as f64).collect();
        let converged = next
            .iter()
            .zip(&estimate)
            .zip(&abs_sum)
            .all(|((n, e), a)| (n - e).abs() <= spec.relative_tolerance * (a / nodes as f64));
        if converged {
            return Ok(next);
        }
        estimate = next;
    }

    // report the worst component
    let last: Vec<f64> = sum.iter().map(|s| s / nodes as f64).collect();
    let (previous, last) = estimate
        .iter()
        .zip(&last)
        .max_by(|a, b| (a.0 - a.1).abs().total_cmp(&(b.0 - b.1).abs()))
        .map(|(p, l)| (*p, *l))
        .unwrap_or((f64::NAN, f64::NAN));
    Err(Error::Quadrature { previous, last })
}

const BESSEL_SERIES_LIMIT: f64 = 15.0;

/// Modified Bessel function of the first kind, order zero.
///
/// Power series up to `|z| = 15`, Hankel asymptotic expansion above.
pub fn bessel_i0(z: f64) -> Result<f64> {
    if !z.is_finite() {
        return Err(Error::Domain(format!("bessel_i0 argument must be finite, got {z}")));
    }
    let x = z.abs();
    if x <= BESSEL_SERIES_LIMIT {
        Ok(1.0 + i0_series_tail(x))
    } else {
        Ok(i0_asymptotic(x))
    }
}

/// `I₀(z) − 1` without cancellation for small `z`.
pub(crate) fn bessel_i0m1(z: f64) -> f64 {
    let x = z.abs();
    if x <= BESSEL_SERIES_LIMIT {
        i0_series_tail(x)
    } else {
        i0_asymptotic(x) - 1.0
    }
}

/// Σ_{k≥1} (x/2)^{2k} / (k!)²
fn i0_series_tail(x: f64) -> f64 {
    let q = 0.25 * x * x;
    if q == 0.0 {
        return 0.0;
    }
    let mut term = q;
    let mut sum = 0.0;
    let mut k = 1.0;
    loop {
        sum += term;
        k += 1.0;
        term *= q / (k * k);
        if term <= 1e-17 * sum {
            sum += term;
            return sum;
        }
    }
}

fn i0_asymptotic(x: f64) -> f64 {
    let mut term = 1.0;
    let mut sum = 1.0;
    for k in 1..200 {
        let odd = (2 * k - 1) as f64;
        let next = term * odd * odd / (8.0 * k as f64 * x);
        if next >= term {
            break;
        }
        term = next;
        sum += term;
        if term <= 1e-17 * sum {
            break;
        }
    }
    x.exp() / (2.0 * PI * x).sqrt() * sum
}

/// Binary Shannon entropy in bits, with `H₂(0) = H₂(1) = 0`.
pub fn binary_entropy(x: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&x) {
        return Err(Error::Domain(format!("binary_entropy needs x in [0, 1], got {x}")));
    }
    if x == 0.0 || x == 1.0 {
        return Ok(0.0);
    }
    let y = 1.0 - x;
    Ok(-(x * x.log2()) - y * y.log2())
}

/// Poisson probability `e^{−mean} mean^n / n!`.
pub fn poisson_pmf(n: u32, mean: f64) -> Result<f64> {
    if !(mean >= 0.0) || !mean.is_finite() {
        return Err(Error::Domain(format!("Poisson mean must be finite and >= 0, got {mean}")));
    }
    if mean == 0.0 {
        return Ok(if n == 0 { 1.0 } else { 0.0 });
    }
    if n <= 20 {
        let mut p = (-mean).exp();
        for k in 1..=n {
            p *= mean / k as f64;
        }
        Ok(p)
    } else {
        Ok(ln_poisson_pmf(n, mean)?.exp())
    }
}

/// Natural log of [`poisson_pmf`]; `-inf` for impossible outcomes.
pub fn ln_poisson_pmf(n: u32, mean: f64) -> Result<f64> {
    if !(mean >= 0.0) || !mean.is_finite() {
        return Err(Error::Domain(format!("Poisson mean must be finite and >= 0, got {mean}")));
    }
    if mean == 0.0 {
        return Ok(if n == 0 { 0.0 } else { f64::NEG_INFINITY });
    }
    let n_f = n as f64;
    Ok(n_f * mean.ln() - mean - libm::lgamma(n_f + 1.0))
}

/// Fills `out[k]` with the Poisson probabilities for `k = 0..out.len()`.
pub(crate) fn poisson_table(mean: f64, out: &mut [f64]) {
    let mut p = (-mean).exp();
    for (k, slot) in out.iter_mut().enumerate() {
        if k > 0 {
            p *= mean / k as f64;
        }
        *slot = p;
    }
}

/// `1 − e^{−a}·I₀(b)`, accurate when the result is small.
pub(crate) fn one_minus_exp_i0(a: f64, b: f64) -> f64 {
    -(-a + bessel_i0m1(b).ln_1p()).exp_m1()
}
