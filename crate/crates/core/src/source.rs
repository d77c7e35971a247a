//! Photon-number statistics of the transformed WCP source.
//!
//! Two phase-randomised weak coherent pulses with mean photon numbers μ₁ and
//! μ₂ interfere on a beam splitter of transmittance `t`. Output mode `a` goes
//! to Bob; mode `b` is monitored by Alice's threshold detector. For a fixed
//! relative phase θ the two output modes are independent Poisson variables
//! with means
//!
//! ```text
//! x(θ) = w_a + ξ cos θ,    y(θ) = w_b − ξ cos θ,
//! ```
//!
//! so every statistic below is a θ-average of products of Poisson terms.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{
    bessel_i0, one_minus_exp_i0, periodic_quadrature, periodic_quadrature_vec, poisson_pmf, poisson_table,
    QuadratureSpec,
};

/// Hard cap on the photon-number truncation order.
pub const DEFAULT_N_CAP: usize = 64;

/// Tolerated negative rounding in `p_total − p_noclick`.
const CLICK_NEGATIVE_TOLERANCE: f64 = 1e-14;

/// Physical parameters of the source and of Alice's monitoring detector.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SourceParams {
    /// Mean photon number of the first WCP.
    pub mu1: f64,
    /// Mean photon number of the second WCP.
    pub mu2: f64,
    /// Beam-splitter transmittance.
    pub t: f64,
    /// Dark-count probability of Alice's detector.
    pub eps_dark: f64,
    /// Detection efficiency of Alice's detector.
    pub eta_d: f64,
}

impl Default for SourceParams {
    fn default() -> Self {
        Self { mu1: 0.5, mu2: 1e-4, t: 0.5, eps_dark: 3.2e-7, eta_d: 0.12 }
    }
}

impl SourceParams {
    pub fn validate(&self) -> Result<()> {
        let finite = [self.mu1, self.mu2, self.t, self.eps_dark, self.eta_d].iter().all(|v| v.is_finite());
        if !finite {
            return Err(Error::InvalidParameter("source parameters must be finite".into()));
        }
        if self.mu1 < 0.0 || self.mu2 < 0.0 {
            return Err(Error::InvalidParameter(format!(
                "intensities must be non-negative (mu1={}, mu2={})",
                self.mu1, self.mu2
            )));
        }
        if self.mu1 == 0.0 && self.mu2 == 0.0 {
            return Err(Error::InvalidParameter("mu1 and mu2 cannot both be zero".into()));
        }
        if !(0.0..=1.0).contains(&self.t) {
            return Err(Error::InvalidParameter(format!("t must lie in [0, 1], got {}", self.t)));
        }
        if !(0.0..=1.0).contains(&self.eta_d) {
            return Err(Error::InvalidParameter(format!("eta_d must lie in [0, 1], got {}", self.eta_d)));
        }
        if !(0.0..1.0).contains(&self.eps_dark) {
            return Err(Error::InvalidParameter(format!("eps_dark must lie in [0, 1), got {}", self.eps_dark)));
        }
        Ok(())
    }

    /// Same source with the two intensities replaced.
    pub fn with_intensities(&self, mu1: f64, mu2: f64) -> Self {
        Self { mu1, mu2, ..*self }
    }

    pub fn derive(&self) -> DerivedSourceParams {
        DerivedSourceParams::derive(self)
    }
}

/// Quantities derived from [`SourceParams`] that parameterise the θ-average.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DerivedSourceParams {
    /// Total intensity μ₁ + μ₂.
    pub nu: f64,
    /// Interference amplitude 2√(μ₁μ₂t(1−t)).
    pub xi: f64,
    /// Mean photon number of output mode `a`.
    pub w_a: f64,
    /// Mean photon number of output mode `b`.
    pub w_b: f64,
}

impl DerivedSourceParams {
    pub fn derive(p: &SourceParams) -> Self {
        let xi = 2.0 * (p.mu1 * p.mu2 * (1.0 - p.t) * p.t).sqrt();
        Self { nu: p.mu1 + p.mu2, xi, w_a: p.mu1 * p.t + p.mu2 * (1.0 - p.t), w_b: p.mu1 * (1.0 - p.t) + p.mu2 * p.t }
    }

    /// Mean photon numbers of modes `a` and `b` at relative phase θ.
    #[inline]
    pub fn mode_means(&self, theta: f64) -> (f64, f64) {
        let c = self.xi * theta.cos();
        ((self.w_a + c).max(0.0), (self.w_b - c).max(0.0))
    }
}

/// Per-photon-number probabilities for the three outcome classes.
///
/// `p_click[n]` and `p_noclick[n]` are joint probabilities (n photons in
/// mode `a` *and* the given detector outcome), so they add up to
/// `p_total[n]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhotonNumberStats {
    pub n_cut: usize,
    pub p_total: Vec<f64>,
    pub p_noclick: Vec<f64>,
    pub p_click: Vec<f64>,
    /// Aggregate probability that Alice's detector clicks.
    pub click_total: f64,
    /// Aggregate probability that Alice's detector stays silent.
    pub noclick_total: f64,
    pub source: SourceParams,
}

impl PhotonNumberStats {
    /// Probability mass missing from `p_total` because of truncation.
    pub fn tail_mass(&self) -> f64 {
        (1.0 - self.p_total.iter().sum::<f64>()).max(0.0)
    }
}

/// `p_{n,m}`: n photons in mode `a` and m photons in mode `b`.
pub fn joint_prob(n: u32, m: u32, params: &SourceParams) -> Result<f64> {
    params.validate()?;
    let d = params.derive();
    // mode means are finite and non-negative, so the pmf cannot fail here
    periodic_quadrature(
        |theta| {
            let (x, y) = d.mode_means(theta);
            poisson_pmf(n, x).unwrap_or(0.0) * poisson_pmf(m, y).unwrap_or(0.0)
        },
        QuadratureSpec::default(),
    )
}

/// `p_n^t`: n photons in mode `a`, detector outcome ignored.
pub fn p_total(n: u32, params: &SourceParams) -> Result<f64> {
    params.validate()?;
    let d = params.derive();
    periodic_quadrature(|theta| poisson_pmf(n, d.mode_means(theta).0).unwrap_or(0.0), QuadratureSpec::default())
}

/// `p_n^c̄`: n photons in mode `a` and no click at Alice's detector.
pub fn p_noclick(n: u32, params: &SourceParams) -> Result<f64> {
    params.validate()?;
    let d = params.derive();
    let keep = 1.0 - params.eps_dark;
    periodic_quadrature(
        |theta| {
            let (x, y) = d.mode_means(theta);
            keep * poisson_pmf(n, x).unwrap_or(0.0) * (-params.eta_d * y).exp()
        },
        QuadratureSpec::default(),
    )
}

/// `p_n^c = p_n^t − p_n^c̄`, with rounding noise below 1e-14 clamped to zero.
pub fn p_click(n: u32, params: &SourceParams) -> Result<f64> {
    let diff = p_total(n, params)? - p_noclick(n, params)?;
    if diff >= 0.0 {
        Ok(diff)
    } else if diff >= -CLICK_NEGATIVE_TOLERANCE {
        Ok(0.0)
    } else {
        Err(Error::Consistency(format!("p_click({n}) = {diff:e} is negative")))
    }
}

/// Closed-form probability that Alice's detector does not click,
/// `(1−ε)·e^{−η_d w_b}·I₀(η_d ξ)`.
pub fn noclick_aggregate(params: &SourceParams) -> f64 {
    let d = params.derive();
    let i0 = bessel_i0(params.eta_d * d.xi).unwrap_or(f64::INFINITY);
    (1.0 - params.eps_dark) * (-params.eta_d * d.w_b).exp() * i0
}

/// Closed-form click probability, evaluated without cancellation:
/// `ε + (1−ε)(1 − e^{−η_d w_b} I₀(η_d ξ))`.
pub fn click_aggregate(params: &SourceParams) -> f64 {
    let d = params.derive();
    let eps = params.eps_dark;
    eps + (1.0 - eps) * one_minus_exp_i0(params.eta_d * d.w_b, params.eta_d * d.xi)
}

/// Statistics truncated at the smallest `n_cut` whose total mass reaches
/// `1 − tail_mass`.
pub fn build_stats(params: &SourceParams, tail_mass: f64) -> Result<PhotonNumberStats> {
    build_stats_capped(params, tail_mass, DEFAULT_N_CAP)
}

pub fn build_stats_capped(params: &SourceParams, tail_mass: f64, cap: usize) -> Result<PhotonNumberStats> {
    if !(tail_mass > 0.0 && tail_mass <= 1e-6) {
        return Err(Error::InvalidParameter(format!("tail_mass must lie in (0, 1e-6], got {tail_mass}")));
    }
    let n_cut = truncation_order(params, tail_mass, cap)?;
    stats_fixed(params, n_cut)
}

/// Smallest `n` with `Σ_{k≤n} p_k^t ≥ 1 − tail_mass`.
pub fn truncation_order(params: &SourceParams, tail_mass: f64, cap: usize) -> Result<usize> {
    params.validate()?;
    let d = params.derive();
    let mut buf = vec![0.0; cap + 1];
    let totals = periodic_quadrature_vec(
        cap + 1,
        |theta, out| {
            poisson_table(d.mode_means(theta).0, &mut buf);
            out.copy_from_slice(&buf);
        },
        QuadratureSpec::default(),
    )?;
    let mut cum = 0.0;
    for (n, p) in totals.iter().enumerate() {
        cum += p;
        if cum >= 1.0 - tail_mass {
            return Ok(n);
        }
    }
    Err(Error::Truncation { cap })
}

/// Statistics at a fixed truncation order.
///
/// The click column integrates `1 − (1−ε)e^{−η_d y}` directly (via `expm1`)
/// rather than subtracting two nearly equal numbers, so tiny click
/// probabilities keep full relative precision.
pub fn stats_fixed(params: &SourceParams, n_cut: usize) -> Result<PhotonNumberStats> {
    params.validate()?;
    let d = params.derive();
    let eps = params.eps_dark;
    let keep = 1.0 - eps;
    let len = n_cut + 1;
    let mut pois = vec![0.0; len];
    let values = periodic_quadrature_vec(
        3 * len,
        |theta, out| {
            let (x, y) = d.mode_means(theta);
            poisson_table(x, &mut pois);
            let silent = keep * (-params.eta_d * y).exp();
            let fire = eps - keep * (-params.eta_d * y).exp_m1();
            for (k, p) in pois.iter().enumerate() {
                out[k] = *p;
                out[len + k] = p * silent;
                out[2 * len + k] = p * fire;
            }
        },
        QuadratureSpec::default(),
    )?;
    let p_total = values[..len].to_vec();
    let p_noclick = values[len..2 * len].to_vec();
    let p_click = values[2 * len..].to_vec();

    for n in 0..len {
        let gap = (p_click[n] + p_noclick[n] - p_total[n]).abs();
        if gap > 1e-12 {
            return Err(Error::Consistency(format!("click + no-click differs from total by {gap:e} at n = {n}")));
        }
    }

    Ok(PhotonNumberStats {
        n_cut,
        p_total,
        p_noclick,
        p_click,
        click_total: click_aggregate(params),
        noclick_total: noclick_aggregate(params),
        source: *params,
    })
}
