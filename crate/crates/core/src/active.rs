//! Active decoy-state baselines with a plain Poissonian source: the
//! vacuum + weak decoy (3-intensity) estimator and its 2-intensity variant
//! without a vacuum decoy.
//!
//! Under intensity fluctuation the realized signal and decoy intensities are
//! fixed but unknown inside `[x(1−δ), x(1+δ)]`. The observed gains and QBERs
//! stay fixed and the bounds are taken in the worst case over a lattice on
//! the `(μ′, ν′)` box, the same threat model as the passive estimator.

use serde::{Deserialize, Serialize};

use crate::channel::{eta_sys, ChannelParams};
use crate::error::{Error, Result};
use crate::flags::{Flag, Flags};
use crate::fluctuation::Interval;
use crate::passive::{ec_entropy, privacy_entropy, ProtocolParams};

/// Baseline intensities and fluctuation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ActiveDecoyParams {
    pub mu_signal: f64,
    pub nu_decoy: f64,
    /// Whether a vacuum decoy is sent (3-intensity) or not (2-intensity).
    pub include_vacuum: bool,
    /// Relative half-width of both intensity intervals.
    pub delta: f64,
    pub grid_per_axis: usize,
}

impl Default for ActiveDecoyParams {
    fn default() -> Self {
        Self { mu_signal: 0.5, nu_decoy: 0.05, include_vacuum: true, delta: 0.0, grid_per_axis: 21 }
    }
}

impl ActiveDecoyParams {
    pub fn three_intensity(delta: f64) -> Self {
        Self { delta, ..Default::default() }
    }

    pub fn two_intensity(delta: f64) -> Self {
        Self { delta, include_vacuum: false, ..Default::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.nu_decoy > 0.0 && self.nu_decoy < self.mu_signal && self.mu_signal.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "need 0 < nu_decoy < mu_signal (nu={}, mu={})",
                self.nu_decoy, self.mu_signal
            )));
        }
        if !(0.0..0.5).contains(&self.delta) {
            return Err(Error::InvalidParameter(format!("delta must lie in [0, 0.5), got {}", self.delta)));
        }
        if self.grid_per_axis < 2 {
            return Err(Error::InvalidParameter("grid_per_axis must be >= 2".into()));
        }
        Ok(())
    }
}

/// Gain and QBER of one intensity.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GainQber {
    pub q: f64,
    pub e: f64,
}

/// Observed statistics of the signal and decoy intensities.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ActiveObservation {
    pub signal: GainQber,
    pub decoy: GainQber,
}

/// Gain and QBER of a Poissonian source of mean `mu`:
/// `Q = 1 − (1−Y₀)e^{−ημ}`, `E·Q = e_d·Q + (e₀−e_d)Y₀`.
pub fn active_gain_qber(mu: f64, channel: &ChannelParams) -> Result<GainQber> {
    if !(mu >= 0.0) || !mu.is_finite() {
        return Err(Error::InvalidParameter(format!("intensity must be finite and >= 0, got {mu}")));
    }
    let eta = eta_sys(channel);
    let y0 = channel.y0;
    let q = y0 - (1.0 - y0) * (-eta * mu).exp_m1();
    if !(q > 0.0) {
        return Err(Error::DegenerateChannel(format!("gain of intensity {mu} is zero")));
    }
    let e = (channel.e_d * q + (channel.e0 - channel.e_d) * y0) / q;
    Ok(GainQber { q, e })
}

/// Observed statistics at the given true signal / decoy intensities.
pub fn active_gains_qbers(mu: f64, nu: f64, channel: &ChannelParams) -> Result<ActiveObservation> {
    Ok(ActiveObservation { signal: active_gain_qber(mu, channel)?, decoy: active_gain_qber(nu, channel)? })
}

/// Single-photon bounds of the active estimator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActiveBounds {
    pub y1_l: f64,
    pub e1_u: f64,
    /// Vacuum yield credited in the rate (`Y₀` with a vacuum decoy, else 0).
    pub y0_l: f64,
    pub flags: Flags,
}

impl ActiveBounds {
    fn vacuous(y0_l: f64, mut flags: Flags) -> Self {
        flags.raise(Flag::VacuousSinglePhoton);
        Self { y1_l: 0.0, e1_u: 1.0, y0_l, flags }
    }
}

/// Worst-case `Y₁^L` and `e₁^U` over the intensity box.
///
/// For a realization `(μ, ν)`:
///
/// ```text
/// Y₁^L = μ/(μν − ν²)·[Q_ν e^ν − Q_μ e^μ ν²/μ² − (μ² − ν²)/μ²·Y₀^U]
/// e₁^U = (E_ν Q_ν e^ν − e₀ Y₀^L)/(Y₁^L ν)
/// ```
///
/// With a vacuum decoy `Y₀^U = Y₀^L = Y₀`; without one the background yield
/// is only known to lie in `[0, E_ν Q_ν e^ν / e₀]`.
pub fn active_bounds(
    params: &ActiveDecoyParams,
    obs: &ActiveObservation,
    channel: &ChannelParams,
) -> Result<ActiveBounds> {
    params.validate()?;
    let mut flags = Flags::new();
    if params.delta > crate::fluctuation::STUDIED_DELTA_MAX {
        flags.raise(Flag::BeyondStudiedRange);
    }
    let (y0, e0) = (channel.y0, channel.e0);
    let y0_l = if params.include_vacuum { y0 } else { 0.0 };
    let mus = Interval::around(params.mu_signal, params.delta);
    let nus = Interval::around(params.nu_decoy, params.delta);
    if nus.hi >= mus.lo || (mus.lo - nus.hi) <= 1e-9 * mus.lo {
        // signal and decoy can no longer be told apart
        return Ok(ActiveBounds::vacuous(y0_l, flags));
    }
    let (qm, qn) = (obs.signal.q, obs.decoy.q);
    let en_qn = obs.decoy.e * qn;

    let g = params.grid_per_axis;
    let mut y1 = f64::INFINITY;
    let mut e1_numer_over_nu = f64::NEG_INFINITY;
    for nu in nus.lattice(g) {
        let y0_u = if params.include_vacuum { y0 } else { en_qn * nu.exp() / e0 };
        e1_numer_over_nu = e1_numer_over_nu.max((en_qn * nu.exp() - e0 * y0_l) / nu);
        for mu in mus.lattice(g) {
            let r = nu / mu;
            let v = mu / (mu * nu - nu * nu) * (qn * nu.exp() - qm * mu.exp() * r * r - (1.0 - r * r) * y0_u);
            y1 = y1.min(v);
        }
    }
    if !(y1 > 0.0) {
        return Ok(ActiveBounds::vacuous(y0_l, flags));
    }
    let y1 = y1.min(1.0);
    let e1 = flags.clamp(e1_numer_over_nu / y1, 0.0, 1.0, Flag::E1Clamped);
    Ok(ActiveBounds { y1_l: y1, e1_u: e1, y0_l, flags })
}

/// Result of an active-baseline rate evaluation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActiveRateResult {
    pub r: f64,
    pub bounds: ActiveBounds,
    pub obs: ActiveObservation,
}

/// GLLP rate of the signal intensity with worst-case Poisson weights
/// `p₀^L = e^{−μ(1+δ)}` and `p₁^L = min μ′e^{−μ′}` over the interval ends.
pub fn active_rate_from(
    params: &ActiveDecoyParams,
    obs: &ActiveObservation,
    channel: &ChannelParams,
    proto: &ProtocolParams,
) -> Result<ActiveRateResult> {
    proto.validate()?;
    let bounds = active_bounds(params, obs, channel)?;
    let mus = Interval::around(params.mu_signal, params.delta);
    let p0 = (-mus.hi).exp();
    let p1 = (mus.lo * (-mus.lo).exp()).min(mus.hi * (-mus.hi).exp());
    let r = proto.q_sifting
        * (p0 * bounds.y0_l + p1 * bounds.y1_l * (1.0 - privacy_entropy(bounds.e1_u))
            - obs.signal.q * proto.f_ec * ec_entropy(obs.signal.e));
    Ok(ActiveRateResult { r: r.max(0.0), bounds, obs: *obs })
}

/// Rate on an honest channel whose true intensities equal the nominal ones.
pub fn active_rate(
    params: &ActiveDecoyParams,
    channel: &ChannelParams,
    proto: &ProtocolParams,
) -> Result<ActiveRateResult> {
    params.validate()?;
    let obs = active_gains_qbers(params.mu_signal, params.nu_decoy, channel)?;
    active_rate_from(params, &obs, channel, proto)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::{error_rate_n, yield_n};

    fn ch(d: f64) -> ChannelParams {
        ChannelParams::default().at_distance(d)
    }

    #[test]
    fn vacuum_pulse_and_saturation() {
        let c = ch(30.0);
        let g = active_gain_qber(0.0, &c).unwrap();
        assert_eq!(g.q, c.y0);
        assert!((g.e - 0.5).abs() < 1e-15);
        let ideal = ChannelParams { alpha: 0.0, eta_bob: 1.0, y0: 0.0, ..Default::default() };
        assert!(active_gain_qber(40.0, &ideal).unwrap().q > 1.0 - 1e-15);
    }

    #[test]
    fn bounds_sound_without_fluctuation() {
        let c = ch(30.0);
        for p in [ActiveDecoyParams::three_intensity(0.0), ActiveDecoyParams::two_intensity(0.0)] {
            let obs = active_gains_qbers(p.mu_signal, p.nu_decoy, &c).unwrap();
            let b = active_bounds(&p, &obs, &c).unwrap();
            assert!(b.y1_l > 0.0 && b.y1_l <= yield_n(1, c.y0, eta_sys(&c)));
            assert!(b.e1_u >= error_rate_n(1, &c));
        }
    }

    #[test]
    fn bounds_nest_in_delta() {
        let c = ch(50.0);
        for vac in [true, false] {
            let mk = |d| ActiveDecoyParams { include_vacuum: vac, ..ActiveDecoyParams::three_intensity(d) };
            let obs = active_gains_qbers(0.5, 0.05, &c).unwrap();
            let a = active_bounds(&mk(0.02), &obs, &c).unwrap();
            let b = active_bounds(&mk(0.05), &obs, &c).unwrap();
            assert!(b.y1_l <= a.y1_l);
            assert!(b.e1_u >= a.e1_u);
        }
    }

    #[test]
    fn merged_intensities_are_vacuous() {
        let c = ch(30.0);
        let p = ActiveDecoyParams { nu_decoy: 0.5 * (1.0 - 1e-12), ..Default::default() };
        let obs = active_gains_qbers(p.mu_signal, p.nu_decoy, &c).unwrap();
        let b = active_bounds(&p, &obs, &c).unwrap();
        assert_eq!(b.y1_l, 0.0);
        assert!(b.flags.contains(Flag::VacuousSinglePhoton));
        let p = ActiveDecoyParams { nu_decoy: 0.45, delta: 0.1, ..Default::default() };
        let b = active_bounds(&p, &obs, &c).unwrap();
        assert_eq!(b.y1_l, 0.0);
        assert_eq!(active_rate(&p, &c, &ProtocolParams::default()).unwrap().r, 0.0);
    }

    #[test]
    fn three_beats_two_intensity() {
        let c = ch(30.0);
        let proto = ProtocolParams::default();
        let r3 = active_rate(&ActiveDecoyParams::three_intensity(0.0), &c, &proto).unwrap().r;
        let r2 = active_rate(&ActiveDecoyParams::two_intensity(0.0), &c, &proto).unwrap().r;
        assert!(r3 > r2 && r2 > 0.0);
    }

    #[test]
    fn validation() {
        assert!(ActiveDecoyParams { nu_decoy: 0.6, ..Default::default() }.validate().is_err());
        assert!(ActiveDecoyParams { nu_decoy: 0.0, ..Default::default() }.validate().is_err());
        assert!(ActiveDecoyParams { delta: 0.5, ..Default::default() }.validate().is_err());
    }
}
