//! Photon-level Monte Carlo of the full setup and randomized soundness
//! batteries for the estimators.
//!
//! Trials are grouped into fixed-size blocks. Block `k` draws from a
//! ChaCha8 stream seeded with the run seed and stream index `k`, and blocks
//! are merged through integer tallies, so a report depends only on
//! `(seed, trials, parameters)` and never on the number of worker threads.

use std::f64::consts::TAU;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::active::{active_bounds, active_gains_qbers, ActiveDecoyParams};
use crate::channel::{error_rate_n, eta_sys, observe_fast, yield_n, ChannelParams, QberModel};
use crate::error::{Error, Result};
use crate::fluctuation::{FluctuationEstimator, FluctuationOptions, FluctuationSpec};
use crate::passive::{evaluate, ProtocolParams, Totaling};
use crate::source::{stats_fixed, SourceParams};

/// Trials per RNG stream.
pub const BLOCK_TRIALS: u64 = 65_536;

/// Photon numbers tallied individually; larger counts share the last bin.
pub const TRACKED_N: usize = 16;

/// One simulated pulse.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrialOutcome {
    pub n_a: u32,
    pub m_b: u32,
    pub alice_click: bool,
    pub bob_detect: bool,
    pub bob_error: bool,
}

/// Raw integer counts; merging is associative and commutative.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Tally {
    pub trials: u64,
    /// Pulses with n photons in mode `a` and an Alice click (index n, last bin open-ended).
    pub click_n: Vec<u64>,
    pub noclick_n: Vec<u64>,
    pub detect_click: u64,
    pub detect_noclick: u64,
    pub error_click: u64,
    pub error_noclick: u64,
    pub sum_n: u64,
    pub sum_n_sq: u64,
}

impl Tally {
    fn new() -> Self {
        Self { click_n: vec![0; TRACKED_N + 1], noclick_n: vec![0; TRACKED_N + 1], ..Default::default() }
    }

    fn record(&mut self, t: &TrialOutcome) {
        self.trials += 1;
        let bin = (t.n_a as usize).min(TRACKED_N);
        let n = t.n_a as u64;
        self.sum_n += n;
        self.sum_n_sq += n * n;
        if t.alice_click {
            self.click_n[bin] += 1;
            self.detect_click += t.bob_detect as u64;
            self.error_click += t.bob_error as u64;
        } else {
            self.noclick_n[bin] += 1;
            self.detect_noclick += t.bob_detect as u64;
            self.error_noclick += t.bob_error as u64;
        }
    }

    fn merge(mut self, other: Self) -> Self {
        self.trials += other.trials;
        for (a, b) in self.click_n.iter_mut().zip(&other.click_n) {
            *a += b;
        }
        for (a, b) in self.noclick_n.iter_mut().zip(&other.noclick_n) {
            *a += b;
        }
        self.detect_click += other.detect_click;
        self.detect_noclick += other.detect_noclick;
        self.error_click += other.error_click;
        self.error_noclick += other.error_noclick;
        self.sum_n += other.sum_n;
        self.sum_n_sq += other.sum_n_sq;
        self
    }
}

/// A sample estimate with its standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub value: f64,
    pub std_error: f64,
}

impl Estimate {
    fn proportion(k: u64, n: u64) -> Self {
        if n == 0 {
            return Self { value: f64::NAN, std_error: f64::NAN };
        }
        let p = k as f64 / n as f64;
        Self { value: p, std_error: (p * (1.0 - p) / n as f64).sqrt() }
    }

    /// Distance to `truth` in standard errors. A zero-variance estimate
    /// that hits the truth exactly scores 0.
    pub fn z_score(&self, truth: f64) -> f64 {
        let d = (self.value - truth).abs();
        if d == 0.0 {
            0.0
        } else {
            d / self.std_error
        }
    }
}

/// Summary of a Monte Carlo run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McReport {
    pub trials: u64,
    pub seed: u64,
    /// Joint frequency of (n photons in mode `a`, Alice click), n < TRACKED_N.
    pub click_freq: Vec<Estimate>,
    pub noclick_freq: Vec<Estimate>,
    pub p_click: Estimate,
    pub q_t: Estimate,
    pub q_c: Estimate,
    pub q_nc: Estimate,
    pub e_t: Estimate,
    pub e_c: Estimate,
    pub e_nc: Estimate,
    /// Mean photon number in mode `a`.
    pub mean_n: Estimate,
    pub tally: Tally,
}

impl McReport {
    fn from_tally(tally: Tally, seed: u64) -> Self {
        let n = tally.trials;
        let freq = |v: &[u64]| v[..TRACKED_N].iter().map(|&k| Estimate::proportion(k, n)).collect();
        let clicks: u64 = tally.click_n.iter().sum();
        let det = tally.detect_click + tally.detect_noclick;
        let err = tally.error_click + tally.error_noclick;
        let mean = tally.sum_n as f64 / n as f64;
        let var = (tally.sum_n_sq as f64 / n as f64 - mean * mean).max(0.0);
        Self {
            trials: n,
            seed,
            click_freq: freq(&tally.click_n),
            noclick_freq: freq(&tally.noclick_n),
            p_click: Estimate::proportion(clicks, n),
            q_t: Estimate::proportion(det, n),
            q_c: Estimate::proportion(tally.detect_click, n),
            q_nc: Estimate::proportion(tally.detect_noclick, n),
            e_t: Estimate::proportion(err, det),
            e_c: Estimate::proportion(tally.error_click, tally.detect_click),
            e_nc: Estimate::proportion(tally.error_noclick, tally.detect_noclick),
            mean_n: Estimate { value: mean, std_error: (var / n as f64).sqrt() },
            tally,
        }
    }
}

/// Draws one pulse of the generative model.
pub fn sample_trial<R: Rng + ?Sized>(rng: &mut R, source: &SourceParams, channel: &ChannelParams) -> TrialOutcome {
    let d = source.derive();
    let theta = rng.random::<f64>() * TAU;
    let (x, y) = d.mode_means(theta);
    let n_a = draw_poisson(rng, x);
    let m_b = draw_poisson(rng, y);
    let silent = (1.0 - source.eps_dark) * (1.0 - source.eta_d).powi(m_b as i32);
    let alice_click = rng.random::<f64>() >= silent;
    let yn = yield_n(n_a, channel.y0, eta_sys(channel));
    let bob_detect = rng.random::<f64>() < yn;
    let bob_error = bob_detect && rng.random::<f64>() < error_rate_n(n_a, channel);
    TrialOutcome { n_a, m_b, alice_click, bob_detect, bob_error }
}

fn draw_poisson<R: Rng + ?Sized>(rng: &mut R, mean: f64) -> u32 {
    if mean <= 0.0 {
        return 0;
    }
    match Poisson::new(mean) {
        Ok(p) => p.sample(rng) as u32,
        Err(_) => 0,
    }
}

/// Runs `trials` pulses; deterministic in `(seed, trials, parameters)`.
pub fn run_trials(source: &SourceParams, channel: &ChannelParams, trials: u64, seed: u64) -> Result<McReport> {
    source.validate()?;
    channel.validate()?;
    if trials == 0 {
        return Err(Error::InvalidParameter("trials must be >= 1".into()));
    }
    let blocks = trials.div_ceil(BLOCK_TRIALS);
    let tally = (0..blocks)
        .into_par_iter()
        .map(|b| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(b);
            let count = BLOCK_TRIALS.min(trials - b * BLOCK_TRIALS);
            let mut t = Tally::new();
            for _ in 0..count {
                t.record(&sample_trial(&mut rng, source, channel));
            }
            t
        })
        .reduce(Tally::new, Tally::merge);
    Ok(McReport::from_tally(tally, seed))
}

/// One bound that ended up on the wrong side of its true value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Violation {
    pub instance: usize,
    pub estimator: String,
    pub quantity: String,
    pub bound: f64,
    pub truth: f64,
    pub distance: f64,
}

/// Outcome of a soundness battery.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatteryReport {
    pub instances: usize,
    pub delta: f64,
    pub checks: usize,
    pub violations: Vec<Violation>,
    /// Instances where the observation was recognised as impossible under
    /// the declared box (only expected for mis-specified boxes).
    pub rejected_observations: usize,
    pub negative_control: bool,
}

impl BatteryReport {
    pub fn is_clean(&self) -> bool {
        self.violations.is_empty() && self.rejected_observations == 0
    }
}

/// Settings of a battery run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BatteryConfig {
    pub instances: usize,
    pub seed: u64,
    pub delta: f64,
    /// Place the true intensities outside the declared box.
    pub negative_control: bool,
    pub options: FluctuationOptions,
}

impl BatteryConfig {
    pub fn honest(instances: usize, seed: u64, delta: f64) -> Self {
        Self { instances, seed, delta, negative_control: false, options: FluctuationOptions::default() }
    }

    pub fn negative(instances: usize, seed: u64) -> Self {
        Self { negative_control: true, ..Self::honest(instances, seed, 0.02) }
    }
}

/// Relative slack for floating-point ties between a tight bound and its truth.
const TIE_SLACK: f64 = 1e-12;

struct Checker<'a> {
    instance: usize,
    distance: f64,
    out: &'a mut Vec<Violation>,
    checks: usize,
}

impl Checker<'_> {
    fn lower(&mut self, estimator: &str, quantity: &str, bound: f64, truth: f64) {
        self.checks += 1;
        if bound > truth + TIE_SLACK * truth.abs() || bound.is_nan() {
            self.push(estimator, quantity, bound, truth);
        }
    }

    fn upper(&mut self, estimator: &str, quantity: &str, bound: f64, truth: f64) {
        self.checks += 1;
        if bound < truth - TIE_SLACK * truth.abs() || bound.is_nan() {
            self.push(estimator, quantity, bound, truth);
        }
    }

    fn push(&mut self, estimator: &str, quantity: &str, bound: f64, truth: f64) {
        self.out.push(Violation {
            instance: self.instance,
            estimator: estimator.into(),
            quantity: quantity.into(),
            bound,
            truth,
            distance: self.distance,
        });
    }
}

/// Randomized honest instances around the default device parameters: random
/// distance in [5, 100] km, random true intensities inside the declared box.
/// True yields, error rates and fractions come from the generative model at
/// the true intensities; every bound is checked against them.
pub fn soundness_battery(config: &BatteryConfig) -> Result<BatteryReport> {
    let tail = 1e-15;
    let delta = config.delta;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut violations = Vec::new();
    let mut checks = 0;
    let mut rejected = 0;
    let proto = ProtocolParams::default();

    for i in 0..config.instances {
        let distance = rng.random_range(5.0..100.0);
        let declared = SourceParams {
            mu1: rng.random_range(0.4..0.6),
            mu2: rng.random_range(0.5e-4..2e-4),
            t: rng.random_range(0.4..0.6),
            eta_d: rng.random_range(0.08..0.16),
            ..SourceParams::default()
        };
        let channel = ChannelParams {
            distance,
            eta_bob: rng.random_range(0.035..0.055),
            e_d: rng.random_range(0.02..0.04),
            y0: rng.random_range(1e-6..3e-6),
            ..ChannelParams::default()
        };
        let u: [f64; 4] = std::array::from_fn(|_| rng.random_range(-1.0..=1.0));
        let (mu1_t, mu2_t, sig_t, dec_t) = if config.negative_control {
            // outside the declared box: weaker interference than declared,
            // stronger decoy than declared
            (declared.mu1 * (1.0 + delta * u[0]), declared.mu2 * 0.2, 0.5 * (1.0 + delta * u[2]), 0.05 * 1.6)
        } else {
            (
                declared.mu1 * (1.0 + delta * u[0]),
                declared.mu2 * (1.0 + delta * u[1]),
                0.5 * (1.0 + delta * u[2]),
                0.05 * (1.0 + delta * u[3]),
            )
        };
        let truth_src = declared.with_intensities(mu1_t, mu2_t);

        let est = FluctuationEstimator::new(declared, FluctuationSpec::uniform(delta), config.options, tail)?;
        let truth_stats = stats_fixed(&truth_src, est.n_cut())?;
        let obs = observe_fast(&truth_stats, &channel, QberModel::Consistent)?;
        let y1 = yield_n(1, channel.y0, eta_sys(&channel));
        let e1 = error_rate_n(1, &channel);
        let d1c = truth_stats.p_click[1] * y1 / obs.q_c;
        let d0c = truth_stats.p_click[0] * channel.y0 / obs.q_c;
        let d1nc = truth_stats.p_noclick[1] * y1 / obs.q_nc;
        let d0nc = truth_stats.p_noclick[0] * channel.y0 / obs.q_nc;

        let mut c = Checker { instance: i, distance, out: &mut violations, checks: 0 };

        if delta == 0.0 && !config.negative_control {
            let r = evaluate(&truth_stats, &obs, &channel, &proto, Totaling::Clamped)?;
            c.lower("passive", "Y1_L", r.y1_l, y1);
            if r.y1_l > 0.0 {
                c.upper("passive", "e1_U", r.e1_u, e1);
            }
            c.lower("passive", "Delta1c_L", r.delta1c_l, d1c);
            c.lower("passive", "Delta0c_L", r.delta0c_l, d0c);
            c.lower("passive", "Delta1nc_L", r.delta1nc_l, d1nc);
            c.lower("passive", "Delta0nc_L", r.delta0nc_l, d0nc);
        }

        match est.evaluate(&obs, &channel, &proto) {
            Ok(r) => {
                c.lower("fluctuation", "Y1c_L", r.y1_l, y1);
                if r.y1_l > 0.0 {
                    c.upper("fluctuation", "e1c_U", r.e1_u, e1);
                }
                c.lower("fluctuation", "Delta1c_L", r.delta1c_l, d1c);
                c.lower("fluctuation", "Delta0c_L", r.delta0c_l, d0c);
                c.lower("fluctuation", "Delta1nc_L", r.delta1nc_l, d1nc);
                c.lower("fluctuation", "Delta0nc_L", r.delta0nc_l, d0nc);
            }
            Err(Error::InconsistentObservation { .. }) => rejected += 1,
            Err(e) => return Err(e),
        }

        let aobs = active_gains_qbers(sig_t, dec_t, &channel)?;
        for (name, p) in [
            ("active3", ActiveDecoyParams::three_intensity(delta)),
            ("active2", ActiveDecoyParams::two_intensity(delta)),
        ] {
            let b = active_bounds(&p, &aobs, &channel)?;
            c.lower(name, "Y1_L", b.y1_l, y1);
            if b.y1_l > 0.0 {
                c.upper(name, "e1_U", b.e1_u, e1);
            }
        }
        checks += c.checks;
    }

    Ok(BatteryReport {
        instances: config.instances,
        delta,
        checks,
        violations,
        rejected_observations: rejected,
        negative_control: config.negative_control,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn blind_detector_never_clicks() {
        let src = SourceParams { eta_d: 0.0, eps_dark: 0.0, ..Default::default() };
        let r = run_trials(&src, &ChannelParams::default(), 100_000, 3).unwrap();
        assert_eq!(r.p_click.value, 0.0);
        assert_eq!(r.tally.detect_click, 0);
    }

    #[test]
    fn deterministic_given_seed() {
        let src = SourceParams::default();
        let ch = ChannelParams::default().at_distance(10.0);
        let a = run_trials(&src, &ch, 200_000, 42).unwrap();
        let b = run_trials(&src, &ch, 200_000, 42).unwrap();
        assert_eq!(a, b);
        let c = run_trials(&src, &ch, 200_000, 43).unwrap();
        assert_ne!(a.tally, c.tally);
    }

    #[test]
    fn independent_of_thread_count() {
        let src = SourceParams::default();
        let ch = ChannelParams::default();
        let one = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        let four = rayon::ThreadPoolBuilder::new().num_threads(4).build().unwrap();
        let a = one.install(|| run_trials(&src, &ch, 300_000, 9).unwrap());
        let b = four.install(|| run_trials(&src, &ch, 300_000, 9).unwrap());
        assert_eq!(a, b);
    }

    #[test]
    fn partial_last_block_counts_exactly() {
        let r = run_trials(&SourceParams::default(), &ChannelParams::default(), BLOCK_TRIALS + 17, 1).unwrap();
        assert_eq!(r.trials, BLOCK_TRIALS + 17);
        let total: u64 = r.tally.click_n.iter().chain(&r.tally.noclick_n).sum();
        assert_eq!(total, r.trials);
    }

    #[test]
    fn rejects_zero_trials() {
        assert!(run_trials(&SourceParams::default(), &ChannelParams::default(), 0, 1).is_err());
    }

    #[test]
    fn error_implies_detection() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let src = SourceParams::default();
        let ch = ChannelParams { eta_bob: 1.0, ..Default::default() };
        for _ in 0..10_000 {
            let t = sample_trial(&mut rng, &src, &ch);
            assert!(!t.bob_error || t.bob_detect);
        }
    }

    #[test]
    fn small_battery_is_clean() {
        let r = soundness_battery(&BatteryConfig::honest(5, 11, 0.05)).unwrap();
        assert!(r.is_clean(), "{:?}", r.violations);
        assert!(r.checks > 0);
    }
}
