//! Passive decoy-state bounds without intensity fluctuation, and the GLLP
//! key rate split over Alice's click / no-click outcomes.
//!
//! Alice's detector outcome plays the role of the decoy setting: the click
//! and no-click sub-ensembles have different photon-number statistics, so
//! the two observed gains give two linear equations in the unknown yields.

use serde::{Deserialize, Serialize};

use crate::channel::{ChannelParams, Observables};
use crate::error::{Error, Result};
use crate::flags::{Flag, Flags};
use crate::numerics::binary_entropy;
use crate::source::PhotonNumberStats;

/// Protocol-level constants of the GLLP rate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProtocolParams {
    /// Sifting efficiency (1/2 for BB84).
    pub q_sifting: f64,
    /// Error-correction inefficiency.
    pub f_ec: f64,
}

impl Default for ProtocolParams {
    fn default() -> Self {
        Self { q_sifting: 0.5, f_ec: 1.22 }
    }
}

impl ProtocolParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.q_sifting > 0.0 && self.q_sifting <= 1.0) {
            return Err(Error::InvalidParameter(format!("q_sifting must lie in (0, 1], got {}", self.q_sifting)));
        }
        if !(self.f_ec >= 1.0) || !self.f_ec.is_finite() {
            return Err(Error::InvalidParameter(format!("f_ec must be >= 1, got {}", self.f_ec)));
        }
        Ok(())
    }
}

/// Alice's detector outcome.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Outcome {
    Click,
    NoClick,
}

/// How the two per-outcome rates are combined.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Totaling {
    /// `max(R_c, 0) + max(R_nc, 0)`: a negative outcome is simply discarded.
    #[default]
    Clamped,
    /// `R_c + R_nc` without clamping either term.
    Raw,
}

/// Single-photon bounds of the fluctuation-free estimator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PassiveBounds {
    pub y1_l: f64,
    pub e1_u: f64,
    pub flags: Flags,
}

/// Per-outcome and total key rate with every intermediate bound.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateResult {
    pub r_c: f64,
    pub r_nc: f64,
    pub r: f64,
    /// Lower bound on the single-photon yield used for both outcomes.
    pub y1_l: f64,
    /// Upper bound on the single-photon error rate.
    pub e1_u: f64,
    /// Lower bounds on single-photon / vacuum fractions of detected events.
    pub delta1c_l: f64,
    pub delta0c_l: f64,
    pub delta1nc_l: f64,
    pub delta0nc_l: f64,
    pub obs: Observables,
    pub flags: Flags,
}

/// Single-photon yield lower bound from the total and no-click gains.
///
/// Uses photon number 2 as the pivot whose yield is eliminated.
pub fn y1_lower(stats: &PhotonNumberStats, obs: &Observables, y0: f64) -> Result<f64> {
    y1_lower_with_pivot(stats, obs, y0, 2)
}

/// Single-photon yield lower bound eliminating the yield of photon number
/// `m` (m ≥ 2).
///
/// The combination `p_m^t Q_nc − p_m^c̄ Q_t` weights each `Y_n` by
/// `p_m^c̄ p_n^c̄ (q_m − q_n)` with `q_n = p_n^c / p_n^c̄`. When `m`
/// maximises `q` over n ≥ 2 every multi-photon weight is non-negative and
/// can be dropped, leaving a lower bound on `Y₁` (the single-photon weight
/// is negative because `q₁ > q_m`).
pub fn y1_lower_with_pivot(stats: &PhotonNumberStats, obs: &Observables, y0: f64, m: usize) -> Result<f64> {
    if m < 2 || m > stats.n_cut {
        return Err(Error::InvalidParameter(format!("pivot photon number must lie in [2, {}], got {m}", stats.n_cut)));
    }
    let (pt, pnc) = (&stats.p_total, &stats.p_noclick);
    let den = pt[m] * pnc[1] - pnc[m] * pt[1];
    let scale = (pt[m] * pnc[1]).abs() + (pnc[m] * pt[1]).abs();
    if !(den.abs() > 1e-12 * scale) {
        return Err(Error::DegenerateSource("click and no-click photon statistics are proportional".into()));
    }
    let num = pt[m] * obs.q_nc - pnc[m] * obs.q_t - (pt[m] * pnc[0] - pnc[m] * pt[0]) * y0;
    Ok((num / den).clamp(0.0, 1.0))
}

/// The three single-photon error-rate bounds (click, no-click, and the
/// vacuum-eliminated combination), each divided by `y1_l`.
pub fn e1_candidates(
    stats: &PhotonNumberStats,
    obs: &Observables,
    channel: &ChannelParams,
    y1_l: f64,
) -> Result<[f64; 3]> {
    if !(y1_l > 0.0) {
        return Err(Error::UndefinedBound("single-photon error bound needs a positive yield bound".into()));
    }
    let (y0, e0) = (channel.y0, channel.e0);
    let (pt, pc, pnc) = (&stats.p_total, &stats.p_click, &stats.p_noclick);
    let click = (obs.e_c * obs.q_c - e0 * pc[0] * y0) / (pc[1] * y1_l);
    let noclick = (obs.e_nc * obs.q_nc - e0 * pnc[0] * y0) / (pnc[1] * y1_l);
    let mixed = (pnc[0] * obs.e_t * obs.q_t - pt[0] * obs.e_nc * obs.q_nc) / ((pt[1] * pnc[0] - pnc[1] * pt[0]) * y1_l);
    Ok([click, noclick, mixed])
}

/// Upper bound on the single-photon error rate: the smallest of the three
/// candidates, clamped into `[0, 1]` with a flag.
pub fn e1_upper(
    stats: &PhotonNumberStats,
    obs: &Observables,
    channel: &ChannelParams,
    y1_l: f64,
    flags: &mut Flags,
) -> Result<f64> {
    let c = e1_candidates(stats, obs, channel, y1_l)?;
    let raw = c.iter().copied().filter(|v| !v.is_nan()).fold(f64::INFINITY, f64::min);
    Ok(flags.clamp(raw, 0.0, 1.0, Flag::E1Clamped))
}

/// Both single-photon bounds. A zero yield bound is reported as vacuous
/// (`e1_u = 1`, flagged) instead of failing.
pub fn passive_bounds(stats: &PhotonNumberStats, obs: &Observables, channel: &ChannelParams) -> Result<PassiveBounds> {
    let mut flags = Flags::new();
    let y1_l = y1_lower(stats, obs, channel.y0)?;
    let e1_u = if y1_l > 0.0 {
        e1_upper(stats, obs, channel, y1_l, &mut flags)?
    } else {
        flags.raise(Flag::VacuousSinglePhoton);
        1.0
    };
    Ok(PassiveBounds { y1_l, e1_u, flags })
}

/// `H₂` capped at 1/2: an error bound above one half earns no credit.
pub(crate) fn privacy_entropy(e1: f64) -> f64 {
    binary_entropy(e1.clamp(0.0, 0.5)).unwrap_or(1.0)
}

pub(crate) fn ec_entropy(e: f64) -> f64 {
    binary_entropy(e.clamp(0.0, 1.0)).unwrap_or(1.0)
}

/// GLLP rate of one outcome class; negative values are meaningful.
pub fn rate_per_outcome(
    outcome: Outcome,
    stats: &PhotonNumberStats,
    obs: &Observables,
    bounds: &PassiveBounds,
    y0: f64,
    proto: &ProtocolParams,
) -> f64 {
    let (p, q, e) = match outcome {
        Outcome::Click => (&stats.p_click, obs.q_c, obs.e_c),
        Outcome::NoClick => (&stats.p_noclick, obs.q_nc, obs.e_nc),
    };
    proto.q_sifting
        * (p[0] * y0 + p[1] * bounds.y1_l * (1.0 - privacy_entropy(bounds.e1_u)) - q * proto.f_ec * ec_entropy(e))
}

/// Combines the per-outcome rates.
pub fn total_rate(r_c: f64, r_nc: f64, totaling: Totaling) -> f64 {
    match totaling {
        Totaling::Clamped => r_c.max(0.0) + r_nc.max(0.0),
        Totaling::Raw => r_c + r_nc,
    }
}

/// End-to-end fluctuation-free evaluation for already observed statistics.
pub fn evaluate(
    stats: &PhotonNumberStats,
    obs: &Observables,
    channel: &ChannelParams,
    proto: &ProtocolParams,
    totaling: Totaling,
) -> Result<RateResult> {
    proto.validate()?;
    let bounds = passive_bounds(stats, obs, channel)?;
    let y0 = channel.y0;
    let r_c = rate_per_outcome(Outcome::Click, stats, obs, &bounds, y0, proto);
    let r_nc = rate_per_outcome(Outcome::NoClick, stats, obs, &bounds, y0, proto);
    let mut flags = bounds.flags.clone();
    flags.merge(&obs.flags);
    Ok(RateResult {
        r_c,
        r_nc,
        r: total_rate(r_c, r_nc, totaling),
        y1_l: bounds.y1_l,
        e1_u: bounds.e1_u,
        delta1c_l: stats.p_click[1] * bounds.y1_l / obs.q_c,
        delta0c_l: stats.p_click[0] * y0 / obs.q_c,
        delta1nc_l: stats.p_noclick[1] * bounds.y1_l / obs.q_nc,
        delta0nc_l: stats.p_noclick[0] * y0 / obs.q_nc,
        obs: obs.clone(),
        flags,
    })
}
