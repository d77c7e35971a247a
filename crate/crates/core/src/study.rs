//! Scenario-level helpers: rate curves over distance and fluctuation,
//! fidelity `R(δ)/R(0)`, cutoff distances, the passive-versus-active
//! comparison, and the closed-form / series consistency suite.
//!
//! A [`Scenario`] fixes every device parameter except the fiber length and
//! the declared fluctuation. Observations are those of an honest channel
//! driven by the declared source, so Alice's click probabilities do not
//! depend on the distance and one realization scan serves a whole distance
//! curve.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::active::{active_rate, ActiveDecoyParams};
use crate::channel::{closed_form_gains, eta_sys, observe, yield_n, ChannelParams, Observables, QberModel};
use crate::error::{Error, Result};
use crate::fluctuation::{FluctuationEstimator, FluctuationOptions, FluctuationSpec, RealizationScan};
use crate::passive::{evaluate, ProtocolParams, RateResult};
use crate::source::{build_stats, PhotonNumberStats, SourceParams};

/// Tail mass used to truncate photon-number series throughout the pipeline.
pub const DEFAULT_TAIL_MASS: f64 = 1e-15;

/// Distance beyond which no cutoff search is attempted (km).
pub const MAX_SEARCH_DISTANCE: f64 = 500.0;

/// Key-rate method being compared.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Passive,
    /// Signal + weak decoy, no vacuum decoy.
    Active2,
    /// Signal + weak decoy + vacuum decoy.
    Active3,
}

impl Method {
    pub const ALL: [Method; 3] = [Method::Passive, Method::Active2, Method::Active3];

    pub fn as_str(self) -> &'static str {
        match self {
            Method::Passive => "passive",
            Method::Active2 => "active2",
            Method::Active3 => "active3",
        }
    }
}

/// Everything but the distance and the declared fluctuation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub source: SourceParams,
    /// Channel template; its `distance` field is overridden per point.
    pub channel: ChannelParams,
    pub proto: ProtocolParams,
    pub options: FluctuationOptions,
    pub qber_model: QberModel,
    /// Baseline intensities; `delta` and `include_vacuum` are set per call.
    pub active: ActiveDecoyParams,
    pub grid_per_axis: usize,
    pub tail_mass: f64,
}

impl Default for Scenario {
    fn default() -> Self {
        Self {
            source: SourceParams::default(),
            channel: ChannelParams::default(),
            proto: ProtocolParams::default(),
            options: FluctuationOptions::default(),
            qber_model: QberModel::default(),
            active: ActiveDecoyParams::default(),
            grid_per_axis: FluctuationSpec::default().grid_per_axis,
            tail_mass: DEFAULT_TAIL_MASS,
        }
    }
}

impl Scenario {
    pub fn validate(&self) -> Result<()> {
        self.source.validate()?;
        self.channel.validate()?;
        self.proto.validate()?;
        self.active.validate()?;
        if self.grid_per_axis < 2 {
            return Err(Error::InvalidParameter("grid_per_axis must be >= 2".into()));
        }
        if !(self.tail_mass > 0.0 && self.tail_mass <= 1e-6) {
            return Err(Error::InvalidParameter(format!("tail_mass must lie in (0, 1e-6], got {}", self.tail_mass)));
        }
        Ok(())
    }

    pub fn channel_at(&self, distance: f64) -> ChannelParams {
        self.channel.at_distance(distance)
    }

    pub fn fluctuation_spec(&self, delta: f64) -> FluctuationSpec {
        FluctuationSpec { grid_per_axis: self.grid_per_axis, ..FluctuationSpec::uniform(delta) }
    }

    fn active_params(&self, method: Method, delta: f64) -> ActiveDecoyParams {
        ActiveDecoyParams {
            delta,
            include_vacuum: method == Method::Active3,
            grid_per_axis: self.grid_per_axis,
            ..self.active
        }
    }

    /// Photon-number statistics of the declared source.
    pub fn stats(&self) -> Result<PhotonNumberStats> {
        build_stats(&self.source, self.tail_mass)
    }

    /// Honest observation at the given distance.
    pub fn observe(&self, stats: &PhotonNumberStats, distance: f64) -> Result<Observables> {
        observe(stats, &self.channel_at(distance), self.qber_model)
    }

    /// Passive evaluator for the same relative fluctuation on both
    /// intensities.
    pub fn passive(&self, delta: f64) -> Result<PassiveCurve> {
        self.passive_with_spec(self.fluctuation_spec(delta))
    }

    /// Passive evaluator for an arbitrary fluctuation box.
    pub fn passive_with_spec(&self, spec: FluctuationSpec) -> Result<PassiveCurve> {
        self.validate()?;
        let stats = self.stats()?;
        let estimator = FluctuationEstimator::new(self.source, spec, self.options, self.tail_mass)?;
        let obs0 = self.observe(&stats, 0.0)?;
        let scan = estimator.scan(obs0.p_click, obs0.p_noclick)?;
        Ok(PassiveCurve { scenario: self.clone(), stats, estimator, scan })
    }

    /// Fluctuation-free passive rate, bypassing the realization scan.
    pub fn passive_exact(&self, distance: f64) -> Result<RateResult> {
        self.validate()?;
        let stats = self.stats()?;
        let ch = self.channel_at(distance);
        let obs = observe(&stats, &ch, self.qber_model)?;
        evaluate(&stats, &obs, &ch, &self.proto, self.options.totaling)
    }

    /// Total key rate of any method at one point.
    pub fn rate(&self, method: Method, distance: f64, delta: f64) -> Result<f64> {
        match method {
            Method::Passive => Ok(self.passive(delta)?.rate(distance)?.r),
            _ => self.active_rate(method, distance, delta),
        }
    }

    fn active_rate(&self, method: Method, distance: f64, delta: f64) -> Result<f64> {
        let params = self.active_params(method, delta);
        Ok(active_rate(&params, &self.channel_at(distance), &self.proto)?.r)
    }

    /// Rate of `method` as a function of distance for one fluctuation.
    pub fn rate_fn(&self, method: Method, delta: f64) -> Result<RateCurve> {
        Ok(match method {
            Method::Passive => RateCurve::Passive(Box::new(self.passive(delta)?)),
            _ => RateCurve::Active { scenario: self.clone(), params: self.active_params(method, delta) },
        })
    }

    /// `R(δ)/R(0)` at one distance for each requested δ.
    pub fn fidelity(&self, distance: f64, deltas: &[f64]) -> Result<Vec<(f64, f64)>> {
        let r0 = self.passive(0.0)?.rate(distance)?.r;
        if !(r0 > 0.0) {
            return Err(Error::BeyondCutoff { distance_km: distance });
        }
        deltas.iter().map(|&d| Ok((d, self.passive(d)?.rate(distance)?.r / r0))).collect()
    }

    /// Rows of a δ sweep at fixed distance; fidelity is relative to δ = 0.
    pub fn delta_sweep(&self, distance: f64, deltas: &[f64]) -> Result<Vec<SweepRow>> {
        let r0 = self.passive(0.0)?.rate(distance)?.r;
        if !(r0 > 0.0) {
            return Err(Error::BeyondCutoff { distance_km: distance });
        }
        deltas
            .par_iter()
            .map(|&delta| {
                let result = self.passive(delta)?.rate(distance)?;
                let fidelity = Some(result.r / r0);
                Ok(SweepRow { distance, delta, fidelity, result })
            })
            .collect()
    }

    /// Rows of a distance sweep at fixed fluctuation (no fidelity column).
    pub fn distance_sweep(&self, spec: FluctuationSpec, distances: &[f64]) -> Result<Vec<SweepRow>> {
        let curve = self.passive_with_spec(spec)?;
        let delta = spec.delta_mu1.max(spec.delta_mu2);
        distances
            .par_iter()
            .map(|&distance| Ok(SweepRow { distance, delta, fidelity: None, result: curve.rate(distance)? }))
            .collect()
    }

    /// Largest distance with a positive rate (0 when the rate vanishes
    /// already at the source).
    pub fn cutoff_distance(&self, method: Method, delta: f64) -> Result<f64> {
        self.rate_fn(method, delta)?.cutoff()
    }

    /// Passive, 2-intensity and 3-intensity fidelities over a distance grid
    /// for each δ, plus every method's cutoff.
    pub fn compare(&self, deltas: &[f64], distances: &[f64]) -> Result<Comparison> {
        let baseline: Vec<RateCurve> = Method::ALL.iter().map(|&m| self.rate_fn(m, 0.0)).collect::<Result<_>>()?;
        let r0: Vec<Vec<f64>> = baseline
            .iter()
            .map(|c| distances.par_iter().map(|&d| c.rate(d)).collect::<Result<Vec<_>>>())
            .collect::<Result<_>>()?;
        let cutoff0: Vec<f64> = baseline.iter().map(RateCurve::cutoff).collect::<Result<_>>()?;

        let mut blocks = Vec::with_capacity(deltas.len());
        for &delta in deltas {
            let curves: Vec<RateCurve> = Method::ALL.iter().map(|&m| self.rate_fn(m, delta)).collect::<Result<_>>()?;
            let cutoffs: Vec<f64> = curves.iter().map(RateCurve::cutoff).collect::<Result<_>>()?;
            let rows = distances
                .par_iter()
                .enumerate()
                .map(|(i, &distance)| {
                    let mut pts = [MethodPoint::default(); 3];
                    for (k, c) in curves.iter().enumerate() {
                        let r = c.rate(distance)?;
                        let base = r0[k][i];
                        pts[k] = MethodPoint { r, r0: base, fidelity: (base > 0.0).then(|| r / base) };
                    }
                    Ok(CompareRow { delta, distance, passive: pts[0], active2: pts[1], active3: pts[2] })
                })
                .collect::<Result<Vec<_>>>()?;
            blocks.push(CompareBlock {
                delta,
                cutoff: MethodCutoffs { passive: cutoffs[0], active2: cutoffs[1], active3: cutoffs[2] },
                rows,
            });
        }
        Ok(Comparison {
            cutoff_at_zero: MethodCutoffs { passive: cutoff0[0], active2: cutoff0[1], active3: cutoff0[2] },
            blocks,
        })
    }

    /// Rate difference between the two QBER models at one distance
    /// (`R_consistent − R_literal`, fluctuation-free).
    pub fn qber_model_gap(&self, distance: f64) -> Result<f64> {
        let consistent = Scenario { qber_model: QberModel::Consistent, ..self.clone() };
        let literal = Scenario { qber_model: QberModel::Literal, ..self.clone() };
        Ok(consistent.passive_exact(distance)?.r - literal.passive_exact(distance)?.r)
    }
}

/// Passive rates over distance for one declared fluctuation, sharing one
/// realization scan.
#[derive(Debug)]
pub struct PassiveCurve {
    scenario: Scenario,
    stats: PhotonNumberStats,
    estimator: FluctuationEstimator,
    scan: RealizationScan,
}

impl PassiveCurve {
    pub fn stats(&self) -> &PhotonNumberStats {
        &self.stats
    }

    pub fn scan(&self) -> &RealizationScan {
        &self.scan
    }

    pub fn estimator(&self) -> &FluctuationEstimator {
        &self.estimator
    }

    pub fn rate(&self, distance: f64) -> Result<RateResult> {
        let ch = self.scenario.channel_at(distance);
        let obs = observe(&self.stats, &ch, self.scenario.qber_model)?;
        self.estimator.evaluate_with_scan(&self.scan, &obs, &ch, &self.scenario.proto)
    }
}

/// Total rate as a function of distance for one method and fluctuation.
#[derive(Debug)]
pub enum RateCurve {
    Passive(Box<PassiveCurve>),
    Active { scenario: Scenario, params: ActiveDecoyParams },
}

impl RateCurve {
    pub fn rate(&self, distance: f64) -> Result<f64> {
        match self {
            RateCurve::Passive(c) => Ok(c.rate(distance)?.r),
            RateCurve::Active { scenario, params } => {
                Ok(active_rate(params, &scenario.channel_at(distance), &scenario.proto)?.r)
            }
        }
    }

    /// Largest distance with a positive rate, located by a 1 km march and
    /// bisection to 1e-6 km. Rates are nonincreasing in distance, so the
    /// first zero ends the positive range.
    pub fn cutoff(&self) -> Result<f64> {
        if !(self.rate(0.0)? > 0.0) {
            return Ok(0.0);
        }
        let mut lo = 0.0;
        let mut hi = loop {
            let next = lo + 1.0;
            if next > MAX_SEARCH_DISTANCE {
                return Err(Error::Domain(format!("rate still positive at {MAX_SEARCH_DISTANCE} km")));
            }
            if self.rate(next)? > 0.0 {
                lo = next;
            } else {
                break next;
            }
        };
        while hi - lo > 1e-6 {
            let mid = 0.5 * (lo + hi);
            if self.rate(mid)? > 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        Ok(lo)
    }
}

/// One point of a passive sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub distance: f64,
    pub delta: f64,
    pub fidelity: Option<f64>,
    pub result: RateResult,
}

/// Rate of one method at one point, with its fluctuation-free reference.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct MethodPoint {
    pub r: f64,
    pub r0: f64,
    /// `r/r0`, undefined where the fluctuation-free rate vanishes.
    pub fidelity: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MethodCutoffs {
    pub passive: f64,
    pub active2: f64,
    pub active3: f64,
}

impl MethodCutoffs {
    pub fn get(&self, method: Method) -> f64 {
        match method {
            Method::Passive => self.passive,
            Method::Active2 => self.active2,
            Method::Active3 => self.active3,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CompareRow {
    pub delta: f64,
    pub distance: f64,
    pub passive: MethodPoint,
    pub active2: MethodPoint,
    pub active3: MethodPoint,
}

impl CompareRow {
    pub fn get(&self, method: Method) -> &MethodPoint {
        match method {
            Method::Passive => &self.passive,
            Method::Active2 => &self.active2,
            Method::Active3 => &self.active3,
        }
    }
}

/// All rows for one δ.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompareBlock {
    pub delta: f64,
    pub cutoff: MethodCutoffs,
    pub rows: Vec<CompareRow>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub cutoff_at_zero: MethodCutoffs,
    pub blocks: Vec<CompareBlock>,
}

/// Tolerances of the consistency suite.
pub const SPLIT_TOL_ABS: f64 = 1e-12;
pub const NORMALIZATION_TOL: f64 = 1e-9;
pub const SERIES_TOL_REL: f64 = 1e-9;
pub const ADDITIVITY_TOL_ABS: f64 = 1e-12;

/// One failed consistency check.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConsistencyFailure {
    pub point: usize,
    pub check: String,
    pub deviation: f64,
    pub tolerance: f64,
    pub source: SourceParams,
    pub distance: f64,
}

/// Outcome of [`consistency_suite`], with the worst deviation per check.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConsistencyReport {
    pub points: usize,
    pub checks: usize,
    pub max_split: f64,
    pub min_normalization: f64,
    pub max_series_noclick: f64,
    pub max_series_q_t: f64,
    pub max_series_q_nc: f64,
    pub max_gain_additivity: f64,
    pub max_qber_additivity: f64,
    pub failures: Vec<ConsistencyFailure>,
}

impl ConsistencyReport {
    pub fn is_clean(&self) -> bool {
        self.failures.is_empty()
    }
}

/// Random source / channel point of the consistency grid: μ₁ ∈ [0.1, 1],
/// μ₂ log-uniform in [1e-5, 1e-2], t ∈ [0.1, 0.9], η_d ∈ [0.05, 1],
/// ε ∈ [0, 1e-3], d ∈ [0, 150] km.
pub fn random_point<R: Rng + ?Sized>(rng: &mut R, template: &ChannelParams) -> (SourceParams, ChannelParams) {
    let source = SourceParams {
        mu1: rng.random_range(0.1..=1.0),
        mu2: 10f64.powf(rng.random_range(-5.0..=-2.0)),
        t: rng.random_range(0.1..=0.9),
        eps_dark: rng.random_range(0.0..=1e-3),
        eta_d: rng.random_range(0.05..=1.0),
    };
    (source, template.at_distance(rng.random_range(0.0..=150.0)))
}

/// Closed-form versus series agreement and conservation checks on `points`
/// random parameter sets.
pub fn consistency_suite(points: usize, seed: u64) -> Result<ConsistencyReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let template = ChannelParams::default();
    let mut rep = ConsistencyReport {
        points,
        checks: 0,
        max_split: 0.0,
        min_normalization: f64::INFINITY,
        max_series_noclick: 0.0,
        max_series_q_t: 0.0,
        max_series_q_nc: 0.0,
        max_gain_additivity: 0.0,
        max_qber_additivity: 0.0,
        failures: Vec::new(),
    };
    for point in 0..points {
        let (source, channel) = random_point(&mut rng, &template);
        let stats = build_stats(&source, DEFAULT_TAIL_MASS)?;
        let check = |rep: &mut ConsistencyReport, check: &str, deviation: f64, tolerance: f64| {
            rep.checks += 1;
            if !(deviation <= tolerance) {
                rep.failures.push(ConsistencyFailure {
                    point,
                    check: check.into(),
                    deviation,
                    tolerance,
                    source,
                    distance: channel.distance,
                });
            }
        };

        let split = (0..=stats.n_cut)
            .map(|n| (stats.p_click[n] + stats.p_noclick[n] - stats.p_total[n]).abs())
            .fold(0.0, f64::max);
        rep.max_split = rep.max_split.max(split);
        check(&mut rep, "p_click + p_noclick = p_total", split, SPLIT_TOL_ABS);

        let norm: f64 = stats.p_total.iter().sum();
        rep.min_normalization = rep.min_normalization.min(norm);
        check(&mut rep, "sum p_total >= 1 - 1e-9", (1.0 - NORMALIZATION_TOL) - norm, 0.0);

        let rel = |a: f64, b: f64| (a - b).abs() / b.abs();
        let series_nc: f64 = stats.p_noclick.iter().sum();
        let dev = rel(series_nc, stats.noclick_total);
        rep.max_series_noclick = rep.max_series_noclick.max(dev);
        check(&mut rep, "P_noclick series = closed form", dev, SERIES_TOL_REL);

        let eta = eta_sys(&channel);
        let yields: Vec<f64> = (0..=stats.n_cut).map(|n| yield_n(n as u32, channel.y0, eta)).collect();
        let g = closed_form_gains(&stats, &channel);
        let series_qt: f64 = stats.p_total.iter().zip(&yields).map(|(p, y)| p * y).sum();
        let series_qnc: f64 = stats.p_noclick.iter().zip(&yields).map(|(p, y)| p * y).sum();
        let dev = rel(series_qt, g.q_t);
        rep.max_series_q_t = rep.max_series_q_t.max(dev);
        check(&mut rep, "Q_t series = closed form", dev, SERIES_TOL_REL);
        let dev = rel(series_qnc, g.q_nc);
        rep.max_series_q_nc = rep.max_series_q_nc.max(dev);
        check(&mut rep, "Q_nc series = closed form", dev, SERIES_TOL_REL);

        let obs = observe(&stats, &channel, QberModel::Consistent)?;
        let dev = (obs.q_c + obs.q_nc - obs.q_t).abs();
        rep.max_gain_additivity = rep.max_gain_additivity.max(dev);
        check(&mut rep, "Q_c + Q_nc = Q_t", dev, ADDITIVITY_TOL_ABS);
        let dev = (obs.e_c * obs.q_c + obs.e_nc * obs.q_nc - obs.e_t * obs.q_t).abs();
        rep.max_qber_additivity = rep.max_qber_additivity.max(dev);
        check(&mut rep, "E_c Q_c + E_nc Q_nc = E_t Q_t", dev, ADDITIVITY_TOL_ABS);
    }
    Ok(rep)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn passive_curve_matches_fluctuation_free_pipeline_at_zero_delta() {
        let s = Scenario::default();
        let curve = s.passive(0.0).unwrap();
        for d in [0.0, 30.0, 100.0] {
            let a = curve.rate(d).unwrap().r;
            let b = s.passive_exact(d).unwrap().r;
            assert!((a - b).abs() <= 1e-10 * b.abs(), "{d}: {a} vs {b}");
        }
    }

    #[test]
    fn fidelity_is_one_at_zero_delta() {
        let f = Scenario::default().fidelity(30.0, &[0.0]).unwrap();
        assert_eq!(f, vec![(0.0, 1.0)]);
    }

    #[test]
    fn fidelity_beyond_cutoff_is_an_error() {
        let err = Scenario::default().fidelity(300.0, &[0.0, 0.02]).unwrap_err();
        assert!(matches!(err, Error::BeyondCutoff { .. }));
    }

    #[test]
    fn cutoff_brackets_the_last_positive_rate() {
        let s = Scenario::default();
        let c = s.cutoff_distance(Method::Passive, 0.0).unwrap();
        assert!(c > 100.0 && c < 250.0, "{c}");
        assert!(s.rate(Method::Passive, c, 0.0).unwrap() > 0.0);
        assert_eq!(s.rate(Method::Passive, c + 1e-5, 0.0).unwrap(), 0.0);
    }

    #[test]
    fn zero_delta_comparison_has_unit_fidelity() {
        let cmp = Scenario::default().compare(&[0.0], &[10.0, 50.0, 90.0]).unwrap();
        for row in &cmp.blocks[0].rows {
            for m in Method::ALL {
                assert_eq!(row.get(m).fidelity, Some(1.0), "{m:?} at {}", row.distance);
            }
        }
        assert_eq!(cmp.blocks[0].cutoff, cmp.cutoff_at_zero);
    }

    #[test]
    fn consistency_suite_small_run_is_clean() {
        let rep = consistency_suite(10, 3).unwrap();
        assert!(rep.is_clean(), "{:?}", rep.failures);
        assert_eq!(rep.checks, 70);
    }

    #[test]
    fn qber_models_give_different_rates() {
        let gap = Scenario::default().qber_model_gap(30.0).unwrap();
        assert!(gap.is_finite() && gap != 0.0);
    }
}
