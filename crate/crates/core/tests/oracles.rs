//! Agreement with independent oracles.
//!
//! Frozen values come from two sources outside this crate: a 40-digit
//! mpmath θ-integration of the source and channel model, and a separate
//! NumPy implementation of the passive and active estimators (64-node
//! trapezoid, n ≤ 14). Monte Carlo checks use the crate's own sampler,
//! which shares no code with the closed forms.

// Frozen values are kept exactly as the oracle printed them.
#![allow(clippy::excessive_precision)]

use approx::assert_relative_eq;

use passive_decoy::active::{active_rate, ActiveDecoyParams};
use passive_decoy::channel::{observe, ChannelParams, QberModel};
use passive_decoy::mc::run_trials;
use passive_decoy::numerics::bessel_i0;
use passive_decoy::passive::ProtocolParams;
use passive_decoy::source::{build_stats, joint_prob, p_total, SourceParams};
use passive_decoy::study::{Scenario, DEFAULT_TAIL_MASS};

fn defaults() -> (SourceParams, ChannelParams) {
    (SourceParams::default(), ChannelParams::default())
}

#[test]
fn photon_number_statistics_match_high_precision_integration() {
    let (src, _) = defaults();
    let s = build_stats(&src, DEFAULT_TAIL_MASS).unwrap();
    let p_total = [0.77877157855920655, 0.19471236405094766, 0.024351213888340808, 0.002031093446369138];
    let p_noclick = [0.75574849250629297, 0.188958284164835, 0.023631877665632209, 0.0019711184372505149];
    for n in 0..4 {
        assert_relative_eq!(s.p_total[n], p_total[n], max_relative = 1e-12);
        assert_relative_eq!(s.p_noclick[n], p_noclick[n], max_relative = 1e-12);
    }
    assert_relative_eq!(s.noclick_total, 0.97043957503116731, max_relative = 1e-13);
}

#[test]
fn gains_and_qbers_match_high_precision_integration() {
    let (src, ch) = defaults();
    let s = build_stats(&src, DEFAULT_TAIL_MASS).unwrap();
    // (d, Q_t, Q_nc, E_t, E_nc)
    let frozen = [
        (0.0, 0.011190836164776542, 0.010860159835212221, 0.033070941973263698, 0.033070941127046699),
        (30.0, 0.0026360031054227623, 0.00255811236403617, 0.033301175669469735, 0.033301172063216825),
        (50.0, 0.0010040532381324044, 0.0009743846622172152, 0.033790695124370794, 0.033790685658848656),
    ];
    for (d, q_t, q_nc, e_t, e_nc) in frozen {
        let o = observe(&s, &ch.at_distance(d), QberModel::Consistent).unwrap();
        assert_relative_eq!(o.q_t, q_t, max_relative = 1e-12);
        assert_relative_eq!(o.q_nc, q_nc, max_relative = 1e-12);
        assert_relative_eq!(o.e_t, e_t, max_relative = 1e-12);
        assert_relative_eq!(o.e_nc, e_nc, max_relative = 1e-12);
    }
}

#[test]
fn bessel_i0_matches_high_precision_values_across_the_branch_switch() {
    for (z, v) in [
        (0.001, 1.0000002500000156),
        (2.5, 3.289839144050123),
        (14.9, 308375.57868743909),
        (15.1, 374103.41119040911),
        (40.0, 1.48947747934199e16),
    ] {
        assert_relative_eq!(bessel_i0(z).unwrap(), v, max_relative = 1e-13);
        assert_relative_eq!(bessel_i0(-z).unwrap(), v, max_relative = 1e-13);
    }
}

#[test]
fn passive_rates_match_independent_implementation() {
    let s = Scenario::default();
    // (d, R, Y1_L, e1_U)
    let frozen = [
        (0.0, 0.0017022647944616848, 0.04341685602938071, 0.04369562067555324),
        (30.0, 0.00039381286183163, 0.01016494008338065, 0.0440126220779997),
        (50.0, 0.0001481204116865608, 0.0038645975421310813, 0.04420346408214179),
        (100.0, 1.1294222341418611e-05, 0.00034591048079815227, 0.04657755956133002),
    ];
    for (d, r, y1, e1) in frozen {
        let res = s.passive_exact(d).unwrap();
        assert_relative_eq!(res.r, r, max_relative = 1e-9);
        assert_relative_eq!(res.y1_l, y1, max_relative = 1e-9);
        assert_relative_eq!(res.e1_u, e1, max_relative = 1e-9);
    }
}

#[test]
fn active_rates_match_independent_implementation() {
    let (_, ch) = defaults();
    let proto = ProtocolParams::default();
    // (d, R_3int, R_2int)
    let frozen = [
        (0.0, 0.0024062823189488097, 0.0019013048058839732),
        (30.0, 0.000555395202631241, 0.0004272402201556619),
        (50.0, 0.0002091455104526174, 0.0001527120289445386),
        (100.0, 1.6436145322620426e-05, 1.8602004843812149e-06),
    ];
    for (d, r3, r2) in frozen {
        let c = ch.at_distance(d);
        let three = active_rate(&ActiveDecoyParams::three_intensity(0.0), &c, &proto).unwrap();
        let two = active_rate(&ActiveDecoyParams::two_intensity(0.0), &c, &proto).unwrap();
        assert_relative_eq!(three.r, r3, max_relative = 1e-9);
        assert_relative_eq!(two.r, r2, max_relative = 1e-9);
    }
}

#[test]
fn joint_distribution_is_normalised_and_marginalises_to_p_total() {
    let src = SourceParams { mu1: 0.8, mu2: 0.3, t: 0.3, ..SourceParams::default() };
    let mut total = 0.0;
    for n in 0..40 {
        let row: f64 = (0..40).map(|m| joint_prob(n, m, &src).unwrap()).sum();
        assert_relative_eq!(row, p_total(n, &src).unwrap(), max_relative = 1e-12, epsilon = 1e-300);
        total += row;
    }
    assert_relative_eq!(total, 1.0, max_relative = 1e-13);
}

#[test]
fn monte_carlo_mean_photon_number_is_w_a() {
    let (src, ch) = defaults();
    let rep = run_trials(&src, &ch.at_distance(30.0), 1_000_000, 5).unwrap();
    let w_a = src.derive().w_a;
    assert!(rep.mean_n.z_score(w_a).abs() < 4.0, "{:?} vs {w_a}", rep.mean_n);
}

#[test]
fn monte_carlo_click_split_matches_closed_form() {
    let (src, ch) = defaults();
    let s = build_stats(&src, DEFAULT_TAIL_MASS).unwrap();
    let rep = run_trials(&src, &ch, 1_000_000, 9).unwrap();
    assert!(rep.p_click.z_score(s.click_total).abs() < 4.0);
    for n in 0..=3 {
        assert!(rep.click_freq[n].z_score(s.p_click[n]).abs() < 4.0, "n = {n}");
    }
}

#[test]
fn monte_carlo_without_detector_never_clicks() {
    let src = SourceParams { eta_d: 0.0, eps_dark: 0.0, ..SourceParams::default() };
    let rep = run_trials(&src, &ChannelParams::default(), 200_000, 3).unwrap();
    assert_eq!(rep.p_click.value, 0.0);
    assert_eq!(rep.tally.detect_click, 0);
}

#[test]
fn monte_carlo_is_reproducible_for_a_seed() {
    let (src, ch) = defaults();
    let a = run_trials(&src, &ch, 150_000, 42).unwrap();
    let b = run_trials(&src, &ch, 150_000, 42).unwrap();
    assert_eq!(a, b);
    let c = run_trials(&src, &ch, 150_000, 43).unwrap();
    assert_ne!(a.tally, c.tally);
}
