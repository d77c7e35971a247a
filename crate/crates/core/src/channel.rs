//! Bob-side transmission and detection: yields, per-outcome gains and QBERs.
//!
//! Gains are evaluated in closed form. Summing `p_n·Y_n` with
//! `Y_n = 1 − (1−Y₀)(1−η)^n` turns every θ-average into an exponential
//! times a Bessel factor. The truncated photon-number series is kept as an
//! independent consistency check.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::flags::{Flag, Flags};
use crate::numerics::{bessel_i0m1, one_minus_exp_i0};
use crate::source::PhotonNumberStats;

/// Fiber and detection parameters on Bob's side.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChannelParams {
    /// Fiber loss coefficient in dB/km.
    pub alpha: f64,
    /// Transmission distance in km.
    pub distance: f64,
    /// Transmittance of Bob's apparatus (detector efficiency included).
    pub eta_bob: f64,
    /// Background yield.
    pub y0: f64,
    /// Misalignment error probability.
    pub e_d: f64,
    /// Error rate of background events.
    pub e0: f64,
}

impl Default for ChannelParams {
    fn default() -> Self {
        Self { alpha: 0.21, distance: 0.0, eta_bob: 0.045, y0: 1.7e-6, e_d: 0.033, e0: 0.5 }
    }
}

impl ChannelParams {
    pub fn validate(&self) -> Result<()> {
        let fields = [self.alpha, self.distance, self.eta_bob, self.y0, self.e_d, self.e0];
        if !fields.iter().all(|v| v.is_finite()) {
            return Err(Error::InvalidParameter("channel parameters must be finite".into()));
        }
        if self.alpha < 0.0 || self.distance < 0.0 {
            return Err(Error::InvalidParameter(format!(
                "alpha and distance must be non-negative (alpha={}, distance={})",
                self.alpha, self.distance
            )));
        }
        if !(0.0..=1.0).contains(&self.eta_bob) {
            return Err(Error::InvalidParameter(format!("eta_bob must lie in [0, 1], got {}", self.eta_bob)));
        }
        if !(0.0..=1.0).contains(&self.y0) {
            return Err(Error::InvalidParameter(format!("y0 must lie in [0, 1], got {}", self.y0)));
        }
        if !(0.0..=0.5).contains(&self.e_d) {
            return Err(Error::InvalidParameter(format!("e_d must lie in [0, 0.5], got {}", self.e_d)));
        }
        if self.e0 != 0.5 {
            return Err(Error::InvalidParameter(format!("background error rate e0 is fixed at 0.5, got {}", self.e0)));
        }
        Ok(())
    }

    pub fn at_distance(&self, distance: f64) -> Self {
        Self { distance, ..*self }
    }

    pub fn eta_sys(&self) -> f64 {
        eta_sys(self)
    }
}

/// Fiber transmittance `10^{−αd/10}`.
pub fn eta_channel(alpha: f64, distance: f64) -> f64 {
    10f64.powf(-alpha * distance / 10.0)
}

/// Overall transmittance: fiber times Bob's apparatus.
pub fn eta_sys(channel: &ChannelParams) -> f64 {
    eta_channel(channel.alpha, channel.distance) * channel.eta_bob
}

/// Probability that an n-photon pulse produces a detection at Bob.
pub fn yield_n(n: u32, y0: f64, eta_sys: f64) -> f64 {
    // 1 − (1−Y0)(1−η)^n, accurate for small η
    let loss = n as f64 * (-eta_sys).ln_1p();
    y0 - (1.0 - y0) * loss.exp_m1()
}

/// Error rate of n-photon detections under the background/misalignment model
/// `e_n·Y_n = e₀Y₀ + e_d(Y_n − Y₀)`.
pub fn error_rate_n(n: u32, channel: &ChannelParams) -> f64 {
    let yn = yield_n(n, channel.y0, eta_sys(channel));
    if yn == 0.0 {
        return channel.e0;
    }
    (channel.e0 * channel.y0 + channel.e_d * (yn - channel.y0)) / yn
}

/// Per-pulse detection probabilities, total and split by Alice's outcome.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Gains {
    pub q_t: f64,
    pub q_c: f64,
    pub q_nc: f64,
}

/// QBERs matching [`Gains`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Qbers {
    pub e_t: f64,
    pub e_c: f64,
    pub e_nc: f64,
}

/// How the per-outcome QBERs are formed from the error model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QberModel {
    /// Gain-weighted forms; `E_c·Q_c + E_nc·Q_nc = E_t·Q_t` holds exactly.
    #[default]
    Consistent,
    /// `E_nc = (e₀−e_d)Y₀/P_nc + e_d` and `E_c = E_t − E_nc`, as often
    /// printed. Kept only to quantify its effect on the rate.
    Literal,
}

/// Everything Alice and Bob observe in the asymptotic limit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Observables {
    pub q_t: f64,
    pub q_c: f64,
    pub q_nc: f64,
    pub e_t: f64,
    pub e_c: f64,
    pub e_nc: f64,
    /// Observed probability that Alice's detector clicks.
    pub p_click: f64,
    /// Observed probability that Alice's detector stays silent.
    pub p_noclick: f64,
    pub flags: Flags,
}

impl Observables {
    pub fn gains(&self) -> Gains {
        Gains { q_t: self.q_t, q_c: self.q_c, q_nc: self.q_nc }
    }

    pub fn qbers(&self) -> Qbers {
        Qbers { e_t: self.e_t, e_c: self.e_c, e_nc: self.e_nc }
    }
}

/// Closed-form gains, cross-checked against the truncated series.
pub fn gains(stats: &PhotonNumberStats, channel: &ChannelParams) -> Result<Gains> {
    channel.validate()?;
    let g = closed_form_gains(stats, channel);
    let eta = eta_sys(channel);
    let tail = stats.tail_mass();
    let (mut s_t, mut s_nc) = (0.0, 0.0);
    for n in 0..=stats.n_cut {
        let yn = yield_n(n as u32, channel.y0, eta);
        s_t += stats.p_total[n] * yn;
        s_nc += stats.p_noclick[n] * yn;
    }
    for (name, series, closed) in [("Q_t", s_t, g.q_t), ("Q_nc", s_nc, g.q_nc)] {
        if (series - closed).abs() > 1e-9 * closed.abs() + tail {
            return Err(Error::Consistency(format!("{name}: series {series:e} disagrees with closed form {closed:e}")));
        }
    }
    Ok(g)
}

/// The closed forms alone (no series check); used in hot loops.
pub fn closed_form_gains(stats: &PhotonNumberStats, channel: &ChannelParams) -> Gains {
    let src = &stats.source;
    let d = src.derive();
    let eta = eta_sys(channel);
    let y0 = channel.y0;
    let keep = 1.0 - src.eps_dark;

    // Q_t = 1 − (1−Y0)·e^{−η w_a}·I0(η ξ)
    let q_t = y0 + (1.0 - y0) * one_minus_exp_i0(eta * d.w_a, eta * d.xi);

    // Q_nc = (1−ε)e^{−η_d w_b}[I0(η_d ξ) − (1−Y0)e^{−η w_a} I0((η_d−η)ξ)]
    let a = src.eta_d * d.xi;
    let c = (src.eta_d - eta) * d.xi;
    let bracket =
        (bessel_i0m1(a) - bessel_i0m1(c)) + (1.0 + bessel_i0m1(c)) * (y0 - (1.0 - y0) * (-eta * d.w_a).exp_m1());
    let q_nc = keep * (-src.eta_d * d.w_b).exp() * bracket;

    Gains { q_t, q_c: q_t - q_nc, q_nc }
}

/// QBERs from the error model; see [`QberModel`].
pub fn qbers(
    stats: &PhotonNumberStats,
    channel: &ChannelParams,
    gains: &Gains,
    model: QberModel,
    flags: &mut Flags,
) -> Result<Qbers> {
    for (name, q) in [("Q_t", gains.q_t), ("Q_c", gains.q_c), ("Q_nc", gains.q_nc)] {
        if !(q > 0.0) {
            return Err(Error::DegenerateChannel(format!("{name} = {q:e} cannot normalise a QBER")));
        }
    }
    let (e0, ed, y0) = (channel.e0, channel.e_d, channel.y0);
    let e_t = (ed * gains.q_t + (e0 - ed) * y0) / gains.q_t;
    let q = match model {
        QberModel::Consistent => Qbers {
            e_t,
            e_c: (ed * gains.q_c + (e0 - ed) * y0 * stats.click_total) / gains.q_c,
            e_nc: (ed * gains.q_nc + (e0 - ed) * y0 * stats.noclick_total) / gains.q_nc,
        },
        QberModel::Literal => {
            if !(stats.noclick_total > 0.0) {
                return Err(Error::DegenerateChannel("no-click probability is zero".into()));
            }
            let e_nc = (e0 - ed) * y0 / stats.noclick_total + ed;
            Qbers { e_t, e_c: e_t - e_nc, e_nc }
        }
    };
    Ok(Qbers {
        e_t: flags.clamp(q.e_t, 0.0, 1.0, Flag::QberClamped),
        e_c: flags.clamp(q.e_c, 0.0, 1.0, Flag::QberClamped),
        e_nc: flags.clamp(q.e_nc, 0.0, 1.0, Flag::QberClamped),
    })
}

/// Gains and QBERs of an honest channel driven by the given source.
pub fn observe(stats: &PhotonNumberStats, channel: &ChannelParams, model: QberModel) -> Result<Observables> {
    let g = gains(stats, channel)?;
    observe_with_gains(stats, channel, g, model)
}

/// [`observe`] without the series cross-check.
pub fn observe_fast(stats: &PhotonNumberStats, channel: &ChannelParams, model: QberModel) -> Result<Observables> {
    channel.validate()?;
    let g = closed_form_gains(stats, channel);
    observe_with_gains(stats, channel, g, model)
}

fn observe_with_gains(
    stats: &PhotonNumberStats,
    channel: &ChannelParams,
    g: Gains,
    model: QberModel,
) -> Result<Observables> {
    let mut flags = Flags::new();
    let e = qbers(stats, channel, &g, model, &mut flags)?;
    Ok(Observables {
        q_t: g.q_t,
        q_c: g.q_c,
        q_nc: g.q_nc,
        e_t: e.e_t,
        e_c: e.e_c,
        e_nc: e.e_nc,
        p_click: stats.click_total,
        p_noclick: stats.noclick_total,
        flags,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::source::{build_stats, SourceParams};
    use approx::assert_relative_eq;

    fn stats() -> PhotonNumberStats {
        build_stats(&SourceParams::default(), 1e-15).unwrap()
    }

    #[test]
    fn transmittance() {
        assert_eq!(eta_channel(0.21, 0.0), 1.0);
        assert_eq!(eta_channel(0.0, 123.0), 1.0);
        assert_relative_eq!(eta_channel(0.21, 100.0), 7.943_282_347_242_815e-3, max_relative = 1e-14);
        let ch = ChannelParams::default();
        assert_eq!(eta_sys(&ch), 0.045);
        assert_relative_eq!(eta_sys(&ch.at_distance(30.0)), 0.045 * 10f64.powf(-0.63), max_relative = 1e-14);
        let ideal = ChannelParams { alpha: 0.0, eta_bob: 1.0, ..Default::default() };
        assert_eq!(eta_sys(&ideal), 1.0);
    }

    #[test]
    fn yields() {
        assert_eq!(yield_n(0, 1.7e-6, 0.3), 1.7e-6);
        assert_eq!(yield_n(3, 1.7e-6, 1.0), 1.0);
        let eta = eta_sys(&ChannelParams::default().at_distance(30.0));
        assert_relative_eq!(yield_n(1, 1.7e-6, eta), 1.0 - (1.0 - 1.7e-6) * (1.0 - eta), max_relative = 1e-12);
        for n in 0..10 {
            assert!(yield_n(n + 1, 1.7e-6, eta) >= yield_n(n, 1.7e-6, eta));
        }
    }

    #[test]
    fn background_only_gains() {
        let s = stats();
        let ch = ChannelParams { eta_bob: 0.0, ..Default::default() };
        let g = gains(&s, &ch).unwrap();
        assert_relative_eq!(g.q_t, ch.y0, max_relative = 1e-14);
        assert_relative_eq!(g.q_nc, s.noclick_total * ch.y0, max_relative = 1e-12);
        assert_relative_eq!(g.q_c, s.click_total * ch.y0, max_relative = 1e-10);

        let dark = ChannelParams { eta_bob: 0.0, y0: 0.0, ..Default::default() };
        let g = gains(&s, &dark).unwrap();
        assert_eq!((g.q_t, g.q_nc), (0.0, 0.0));
        assert!(g.q_c.abs() < 1e-18);
    }

    #[test]
    fn closed_forms_agree_with_series() {
        let s = stats();
        for d in [0.0, 30.0, 100.0, 200.0] {
            let ch = ChannelParams::default().at_distance(d);
            let g = gains(&s, &ch).unwrap();
            let eta = eta_sys(&ch);
            let series_c: f64 = (0..=s.n_cut).map(|n| s.p_click[n] * yield_n(n as u32, ch.y0, eta)).sum();
            assert_relative_eq!(g.q_c, series_c, max_relative = 1e-9);
        }
    }

    #[test]
    fn qber_limits() {
        let s = stats();
        let ch = ChannelParams { e_d: 0.0, eta_bob: 0.0, ..Default::default() };
        let o = observe(&s, &ch, QberModel::Consistent).unwrap();
        assert_relative_eq!(o.e_t, 0.5, max_relative = 1e-12);
        assert_relative_eq!(o.e_c, 0.5, max_relative = 1e-9);
        assert_relative_eq!(o.e_nc, 0.5, max_relative = 1e-12);

        let ch = ChannelParams { y0: 0.0, ..Default::default() }.at_distance(30.0);
        let o = observe(&s, &ch, QberModel::Consistent).unwrap();
        assert_eq!(o.e_t, 0.033);
    }

    #[test]
    fn weighted_identities() {
        let s = stats();
        let ch = ChannelParams::default().at_distance(30.0);
        let o = observe(&s, &ch, QberModel::Consistent).unwrap();
        assert!((o.q_c + o.q_nc - o.q_t).abs() <= 1e-12);
        assert!((o.e_c * o.q_c + o.e_nc * o.q_nc - o.e_t * o.q_t).abs() <= 1e-12);
        assert!(o.flags.is_empty());
    }

    #[test]
    fn literal_qbers_differ_from_consistent() {
        let s = stats();
        let ch = ChannelParams::default().at_distance(30.0);
        let a = observe(&s, &ch, QberModel::Consistent).unwrap();
        let b = observe(&s, &ch, QberModel::Literal).unwrap();
        assert_eq!(a.e_t, b.e_t);
        assert!((a.e_nc - b.e_nc).abs() > 1e-6);
    }

    #[test]
    fn degenerate_gain_errors() {
        let s = stats();
        let dark = ChannelParams { eta_bob: 0.0, y0: 0.0, ..Default::default() };
        assert!(matches!(observe(&s, &dark, QberModel::Consistent), Err(Error::DegenerateChannel(_))));
    }

    #[test]
    fn validation() {
        assert!(ChannelParams::default().validate().is_ok());
        assert!(ChannelParams { e0: 0.4, ..Default::default() }.validate().is_err());
        assert!(ChannelParams { e_d: 0.6, ..Default::default() }.validate().is_err());
        assert!(ChannelParams { distance: -1.0, ..Default::default() }.validate().is_err());
    }

    #[test]
    fn error_rate_model() {
        let ch = ChannelParams::default().at_distance(30.0);
        assert_eq!(error_rate_n(0, &ch), 0.5);
        let e1 = error_rate_n(1, &ch);
        assert!(e1 > ch.e_d && e1 < 0.5);
    }
}
