//! Worst-case single-photon and vacuum fractions, and the key rate, when the
//! source intensities μ₁, μ₂ are only known to lie in relative intervals
//! `[μᵢ(1−δᵢ), μᵢ(1+δᵢ)]`.
//!
//! # Threat model
//!
//! The true intensities `(μ₁′, μ₂′)` are fixed but unknown inside the
//! declared box. Bounding the click and no-click probabilities separately
//! over the box throws away their correlation: with a weak second pulse the
//! click/no-click contrast per photon is orders of magnitude smaller than a
//! percent-level intensity shift, and such bounds are vacuous. Instead every
//! candidate realization is scanned, the fluctuation-free elimination is run
//! with that realization's own statistics, and the worst case is kept.
//! Because the truth is one of the candidates, the result is a valid bound.
//!
//! Alice observes her own detector's click rate, so by default only
//! realizations reproducing the observed no-click probability are scanned
//! ([`RealizationSet::ObservedSlice`]). [`RealizationSet::FullBox`] ignores
//! that information.
//!
//! # Elimination at one realization
//!
//! With `q_n = p_n^c / p_n^c̄`, pick the multi-photon pivot
//! `m* = argmax_{n≥2} q_n` and write `q̂ = q_{m*}`. Then
//!
//! ```text
//! Q_c − q̂·Q_c̄ = Σ_n p_n^c Y_n (1 − q̂/q_n)
//!             ≤ p₀^c Y₀ (1 − q̂/q₀) + p₁^c Y₁ (1 − q̂/q₁)
//! ```
//!
//! since every n ≥ 2 term is non-positive. Dividing by `Q_c` gives the
//! single-photon fraction bound
//!
//! ```text
//! Δ₁,c ≥ [Q_c − q̂ Q_c̄ − (1 − q̂/q₀) Δ₀,c Q_c] / [(1 − q̂/q₁) Q_c],
//! ```
//!
//! which requires `q₁ > q̂`. With the vacuum term taken from the known
//! background yield, `Δ₀,c = Y₀ p₀^c / Q_c`. The same inequality, rearranged
//! with `Q_t = Q_c + Q_c̄`, is the fluctuation-free yield bound with pivot
//! `m*`, so at δ = 0 the pipeline reproduces the passive estimator.
//!
//! # Transfer to the no-click outcome
//!
//! Single-photon yields do not depend on Alice's outcome, so
//!
//! ```text
//! Y₁ ≥ Y₁,c^L = Δ₁,c^L Q_c / p₁^{c,U},      Δ₁,c̄^L = Y₁,c^L p₁^{c̄,L} / Q_c̄,
//! ```
//!
//! with `p^L`, `p^U` taken over the scanned realizations.

use std::sync::OnceLock;

use serde::{Deserialize, Serialize};

use crate::channel::{ChannelParams, Observables};
use crate::error::{Error, Result};
use crate::flags::{Flag, Flags};
use crate::passive::{
    ec_entropy, privacy_entropy, total_rate, y1_lower_with_pivot, ProtocolParams, RateResult, Totaling,
};
use crate::source::{noclick_aggregate, stats_fixed, truncation_order, PhotonNumberStats, SourceParams, DEFAULT_N_CAP};

/// Largest fluctuation studied; larger values are accepted but flagged.
pub const STUDIED_DELTA_MAX: f64 = 0.10;

/// Declared relative fluctuation of the two intensities.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FluctuationSpec {
    pub delta_mu1: f64,
    pub delta_mu2: f64,
    /// Lattice points per axis used to scan the box.
    pub grid_per_axis: usize,
}

impl Default for FluctuationSpec {
    fn default() -> Self {
        Self { delta_mu1: 0.0, delta_mu2: 0.0, grid_per_axis: 21 }
    }
}

impl FluctuationSpec {
    /// Same relative fluctuation on both intensities.
    pub fn uniform(delta: f64) -> Self {
        Self { delta_mu1: delta, delta_mu2: delta, ..Default::default() }
    }

    /// Checks the invariants; returns a flag set noting values beyond the
    /// studied range.
    pub fn validate(&self) -> Result<Flags> {
        let mut flags = Flags::new();
        for (name, d) in [("delta_mu1", self.delta_mu1), ("delta_mu2", self.delta_mu2)] {
            if !(0.0..0.5).contains(&d) {
                return Err(Error::InvalidParameter(format!("{name} must lie in [0, 0.5), got {d}")));
            }
            if d > STUDIED_DELTA_MAX {
                flags.raise(Flag::BeyondStudiedRange);
            }
        }
        if self.grid_per_axis < 2 {
            return Err(Error::InvalidParameter(format!("grid_per_axis must be >= 2, got {}", self.grid_per_axis)));
        }
        Ok(flags)
    }

    pub fn is_zero(&self) -> bool {
        self.delta_mu1 == 0.0 && self.delta_mu2 == 0.0
    }

    /// Intervals of μ₁ and μ₂ around the declared source.
    pub fn intensity_box(&self, source: &SourceParams) -> (Interval, Interval) {
        (Interval::around(source.mu1, self.delta_mu1), Interval::around(source.mu2, self.delta_mu2))
    }
}

/// Closed real interval.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
}

impl Interval {
    pub fn point(x: f64) -> Self {
        Self { lo: x, hi: x }
    }

    pub fn around(center: f64, relative: f64) -> Self {
        if relative == 0.0 {
            Self::point(center)
        } else {
            Self { lo: center * (1.0 - relative), hi: center * (1.0 + relative) }
        }
    }

    pub fn contains(&self, x: f64) -> bool {
        self.lo <= x && x <= self.hi
    }

    pub fn width(&self) -> f64 {
        self.hi - self.lo
    }

    fn include(&mut self, x: f64) {
        self.lo = self.lo.min(x);
        self.hi = self.hi.max(x);
    }

    /// `n` equally spaced points including both ends (a single point when
    /// the interval is degenerate).
    pub fn lattice(&self, n: usize) -> Vec<f64> {
        if self.lo == self.hi || n < 2 {
            return vec![self.lo];
        }
        (0..n)
            .map(|k| if k == n - 1 { self.hi } else { self.lo + (self.hi - self.lo) * k as f64 / (n - 1) as f64 })
            .collect()
    }

    fn empty() -> Self {
        Self { lo: f64::INFINITY, hi: f64::NEG_INFINITY }
    }
}

/// Box-wide lower/upper bounds on the joint photon-number probabilities.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbabilityIntervals {
    pub n_cut: usize,
    pub click: Vec<Interval>,
    pub noclick: Vec<Interval>,
    pub p_click: Interval,
    pub p_noclick: Interval,
}

/// Extremes of every per-n click / no-click probability over the box,
/// found on a lattice (corners included) plus one local refinement pass
/// around each incumbent extremum.
pub fn probability_intervals(
    params: &SourceParams,
    fluct: &FluctuationSpec,
    n_cut: usize,
) -> Result<ProbabilityIntervals> {
    fluct.validate()?;
    if n_cut > DEFAULT_N_CAP {
        return Err(Error::Truncation { cap: DEFAULT_N_CAP });
    }
    let (b1, b2) = fluct.intensity_box(params);
    let g = fluct.grid_per_axis;
    let xs = b1.lattice(g);
    let ys = b2.lattice(g);

    let entries = 2 * (n_cut + 1) + 2;
    let mut acc = IntervalAccumulator::new(entries);
    for (i, &x) in xs.iter().enumerate() {
        for (j, &y) in ys.iter().enumerate() {
            let s = stats_fixed(&params.with_intensities(x, y), n_cut)?;
            acc.add(&flatten(&s), (i, j));
        }
    }

    // local refinement around every incumbent extremum
    let hx = if xs.len() > 1 { xs[1] - xs[0] } else { 0.0 };
    let hy = if ys.len() > 1 { ys[1] - ys[0] } else { 0.0 };
    let mut centers = acc.incumbents();
    centers.sort_unstable();
    centers.dedup();
    const OFFSETS: [f64; 5] = [-0.5, -0.25, 0.0, 0.25, 0.5];
    for (i, j) in centers {
        for ox in OFFSETS {
            for oy in OFFSETS {
                if ox == 0.0 && oy == 0.0 {
                    continue;
                }
                let x = (xs[i] + ox * hx).clamp(b1.lo, b1.hi);
                let y = (ys[j] + oy * hy).clamp(b2.lo, b2.hi);
                if x == xs[i] && y == ys[j] {
                    continue;
                }
                let s = stats_fixed(&params.with_intensities(x, y), n_cut)?;
                acc.add(&flatten(&s), (i, j));
            }
        }
    }

    let iv = acc.intervals;
    let len = n_cut + 1;
    Ok(ProbabilityIntervals {
        n_cut,
        click: iv[..len].to_vec(),
        noclick: iv[len..2 * len].to_vec(),
        p_click: iv[2 * len],
        p_noclick: iv[2 * len + 1],
    })
}

fn flatten(s: &PhotonNumberStats) -> Vec<f64> {
    let mut v = Vec::with_capacity(2 * s.p_click.len() + 2);
    v.extend_from_slice(&s.p_click);
    v.extend_from_slice(&s.p_noclick);
    v.push(s.click_total);
    v.push(s.noclick_total);
    v
}

struct IntervalAccumulator {
    intervals: Vec<Interval>,
    argmin: Vec<(usize, usize)>,
    argmax: Vec<(usize, usize)>,
}

impl IntervalAccumulator {
    fn new(n: usize) -> Self {
        Self { intervals: vec![Interval::empty(); n], argmin: vec![(0, 0); n], argmax: vec![(0, 0); n] }
    }

    fn add(&mut self, values: &[f64], at: (usize, usize)) {
        for (k, &v) in values.iter().enumerate() {
            let iv = &mut self.intervals[k];
            if v < iv.lo {
                iv.lo = v;
                self.argmin[k] = at;
            }
            if v > iv.hi {
                iv.hi = v;
                self.argmax[k] = at;
            }
        }
    }

    fn incumbents(&self) -> Vec<(usize, usize)> {
        self.argmin.iter().chain(&self.argmax).copied().collect()
    }
}

/// Box-level click/no-click ratios `q_m = p_m^{c,L} / p_m^{c̄,U}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QRatios {
    /// `q_m` for m = 0..=n_cut.
    pub q: Vec<f64>,
    /// Smallest ratio over m ≥ 2.
    pub q_star: f64,
    /// Largest ratio over m ≥ 2 (the one the multi-photon elimination needs).
    pub q_multi: f64,
    /// Whether `q_m ≤ q₁` for all m ≥ 1 and `q₂ < q₀` hold.
    pub orderings_hold: bool,
}

impl QRatios {
    pub fn q0(&self) -> f64 {
        self.q[0]
    }
    pub fn q1(&self) -> f64 {
        self.q[1]
    }
    pub fn q2(&self) -> f64 {
        self.q[2]
    }
}

/// Ratios from box-level intervals. Violated orderings raise
/// [`Flag::RatioOrderingDiagnostic`] rather than being assumed.
pub fn q_ratios(intervals: &ProbabilityIntervals, flags: &mut Flags) -> Result<QRatios> {
    if intervals.n_cut < 2 {
        return Err(Error::DegenerateSource("q ratios need n_cut >= 2".into()));
    }
    let mut q = Vec::with_capacity(intervals.n_cut + 1);
    for (m, (c, nc)) in intervals.click.iter().zip(&intervals.noclick).enumerate() {
        if !(nc.hi > 0.0) {
            return Err(Error::DegenerateSource(format!("no-click upper bound vanishes at m = {m}")));
        }
        q.push(c.lo / nc.hi);
    }
    let multi = &q[2..];
    let q_star = multi.iter().copied().fold(f64::INFINITY, f64::min);
    let q_multi = multi.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let orderings_hold = q[1..].iter().all(|&v| v <= q[1]) && q[2] < q[0];
    if !orderings_hold {
        flags.raise(Flag::RatioOrderingDiagnostic);
    }
    Ok(QRatios { q, q_star, q_multi, orderings_hold })
}

/// Which intensity realizations are considered possible.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RealizationSet {
    /// Box points reproducing the observed no-click probability.
    #[default]
    ObservedSlice,
    /// Every point of the box.
    FullBox,
}

/// Form of the click-side single-photon error bound.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum E1Variant {
    /// `(E_c − e₀Δ₀,c^L)/Δ₁,c^L`.
    #[default]
    Full,
    /// `E_c/Δ₁,c^L`: drops the vacuum subtraction (looser).
    Simplified,
}

/// Which end of the no-click single-photon probability enters the transfer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoClickTransfer {
    /// Lower end: keeps the transferred fraction a lower bound.
    #[default]
    Conservative,
    /// Upper end, as sometimes printed; not guaranteed to be a bound.
    Literal,
}

/// Estimator switches.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct FluctuationOptions {
    pub realization_set: RealizationSet,
    pub e1_variant: E1Variant,
    pub transfer: NoClickTransfer,
    pub totaling: Totaling,
}

/// One candidate intensity realization with outcome statistics normalised
/// to the observed click / no-click probabilities.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Realization {
    pub mu1: f64,
    pub mu2: f64,
    pub stats: PhotonNumberStats,
    /// Multi-photon pivot `argmax_{n≥2} q_n`, or `None` when `q₁` does not
    /// exceed every multi-photon ratio (no bound at this realization).
    pub pivot: Option<usize>,
    /// Whether `q_n ≤ q₀` for all n ≥ 1 (needed by the mixed error bound).
    pub vacuum_dominates: bool,
}

impl Realization {
    fn new(mu1: f64, mu2: f64, raw: PhotonNumberStats, p_click: f64, p_noclick: f64) -> Self {
        let stats = rescale(raw, p_click, p_noclick);
        let q = click_ratios(&stats);
        let (pivot, vacuum_dominates) = classify(&q);
        Self { mu1, mu2, stats, pivot, vacuum_dominates }
    }
}

/// Rescales joint probabilities so the aggregates match the observation.
/// Leaves the statistics untouched when they already match.
fn rescale(mut s: PhotonNumberStats, p_click: f64, p_noclick: f64) -> PhotonNumberStats {
    let fc = p_click / s.click_total;
    let fnc = p_noclick / s.noclick_total;
    if fc == 1.0 && fnc == 1.0 {
        return s;
    }
    for n in 0..=s.n_cut {
        s.p_click[n] *= fc;
        s.p_noclick[n] *= fnc;
        s.p_total[n] = s.p_click[n] + s.p_noclick[n];
    }
    s.click_total = p_click;
    s.noclick_total = p_noclick;
    s
}

/// `q_n = p_n^c / p_n^c̄`; `NaN` where the no-click probability vanishes.
pub fn click_ratios(s: &PhotonNumberStats) -> Vec<f64> {
    s.p_click.iter().zip(&s.p_noclick).map(|(c, nc)| if *nc > 0.0 { c / nc } else { f64::NAN }).collect()
}

fn classify(q: &[f64]) -> (Option<usize>, bool) {
    let mut pivot = None;
    let mut best = f64::NEG_INFINITY;
    for (m, &v) in q.iter().enumerate().skip(2) {
        if v.is_nan() {
            continue;
        }
        if v > best {
            best = v;
            pivot = Some(m);
        }
    }
    let q1 = q.get(1).copied().unwrap_or(f64::NAN);
    let pivot = pivot.filter(|_| q1 > best);
    let vacuum_dominates = q.iter().skip(1).all(|&v| v.is_nan() || v <= q[0]);
    (pivot, vacuum_dominates)
}

/// Realizations compatible with one observation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RealizationScan {
    pub points: Vec<Realization>,
    pub p_click: f64,
    pub p_noclick: f64,
    pub flags: Flags,
}

impl RealizationScan {
    /// Hull of the low-order probabilities over the scanned points.
    pub fn hull(&self) -> RealizationHull {
        let mut h = RealizationHull {
            p0_click: Interval::empty(),
            p1_click: Interval::empty(),
            p0_noclick: Interval::empty(),
            p1_noclick: Interval::empty(),
        };
        for r in &self.points {
            h.p0_click.include(r.stats.p_click[0]);
            h.p1_click.include(r.stats.p_click[1]);
            h.p0_noclick.include(r.stats.p_noclick[0]);
            h.p1_noclick.include(r.stats.p_noclick[1]);
        }
        h
    }
}

/// Ranges of the vacuum and single-photon probabilities over a scan.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RealizationHull {
    pub p0_click: Interval,
    pub p1_click: Interval,
    pub p0_noclick: Interval,
    pub p1_noclick: Interval,
}

/// Worst-case fractions and error bound under fluctuation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FluctuationBounds {
    /// Lower bound on the single-photon fraction of click detections.
    pub delta1c_l: f64,
    /// Lower bound on the vacuum fraction of click detections.
    pub delta0c_l: f64,
    /// Upper bound on the single-photon error rate.
    pub e1c_u: f64,
    pub delta1nc_l: f64,
    pub delta0nc_l: f64,
    /// Single-photon yield bound transferred from the click outcome.
    pub y1c_l: f64,
    /// Smallest per-realization yield bound.
    pub y1_min: f64,
    pub realizations: usize,
    pub flags: Flags,
}

/// Click-side fraction bounds from a realization scan:
/// `Δ₁,c^L = min_r p̃₁^c(r)·Y₁^L(r)/Q_c` and `Δ₀,c^L = Y₀ min_r p̃₀^c(r)/Q_c`.
///
/// Returns `(Δ₁,c^L, Δ₀,c^L, min_r Y₁^L(r))`.
pub fn delta_bounds_click(
    obs: &Observables,
    scan: &RealizationScan,
    y0: f64,
    flags: &mut Flags,
) -> Result<(f64, f64, f64)> {
    if !(obs.q_c > 0.0 && obs.q_nc > 0.0) {
        return Err(Error::DegenerateChannel("fraction bounds need positive click and no-click gains".into()));
    }
    if scan.points.is_empty() {
        return Err(Error::InconsistentObservation { observed: scan.p_noclick });
    }
    let mut d1 = f64::INFINITY;
    let mut y1_min = f64::INFINITY;
    for r in &scan.points {
        let y1 = match r.pivot {
            Some(m) => y1_lower_with_pivot(&r.stats, obs, y0, m)?,
            None => {
                flags.raise(Flag::RatioOrderingDiagnostic);
                0.0
            }
        };
        y1_min = y1_min.min(y1);
        d1 = d1.min(r.stats.p_click[1] * y1 / obs.q_c);
    }
    let hull = scan.hull();
    let d0 = y0 * hull.p0_click.lo / obs.q_c;
    let d1 = flags.clamp(d1, 0.0, 1.0, Flag::DeltaClamped);
    let d0 = flags.clamp(d0, 0.0, 1.0, Flag::DeltaClamped);
    if d1 == 0.0 {
        flags.raise(Flag::VacuousSinglePhoton);
    }
    Ok((d1, d0, y1_min))
}

/// The same click-side bound written with explicit ratios, for one
/// realization with pivot ratio `q_hat`:
/// `[Q_c − q̂Q_c̄ − (1 − q̂/q₀)Δ₀,c Q_c] / [(1 − q̂/q₁) Q_c]`.
pub fn delta1_click_ratio_form(obs: &Observables, q0: f64, q1: f64, q_hat: f64, delta0c: f64) -> Result<f64> {
    if !(q1 > q_hat) {
        return Err(Error::RatioOrdering(format!("q1 = {q1:e} does not exceed the pivot ratio {q_hat:e}")));
    }
    if !(q0 > 0.0) {
        return Err(Error::DegenerateSource("vacuum click ratio must be positive".into()));
    }
    let num = obs.q_c - q_hat * obs.q_nc - (1.0 - q_hat / q0) * delta0c * obs.q_c;
    Ok(num / ((1.0 - q_hat / q1) * obs.q_c))
}

/// Click-side single-photon error bound from the fraction bounds, clamped
/// into `[0, 1]` with a flag.
pub fn e1_click_upper(
    obs: &Observables,
    delta1c_l: f64,
    delta0c_l: f64,
    e0: f64,
    variant: E1Variant,
    flags: &mut Flags,
) -> Result<f64> {
    if !(delta1c_l > 0.0) {
        return Err(Error::UndefinedBound("single-photon fraction bound is zero".into()));
    }
    let raw = match variant {
        E1Variant::Full => (obs.e_c - e0 * delta0c_l) / delta1c_l,
        E1Variant::Simplified => obs.e_c / delta1c_l,
    };
    Ok(flags.clamp(raw, 0.0, 1.0, Flag::E1Clamped))
}

/// Transfers the click-side single-photon bound to the no-click outcome.
///
/// Returns `(Δ₁,c̄^L, Δ₀,c̄^L, Y₁,c^L)`.
pub fn transfer_to_noclick(
    obs: &Observables,
    hull: &RealizationHull,
    delta1c_l: f64,
    y0: f64,
    transfer: NoClickTransfer,
    flags: &mut Flags,
) -> Result<(f64, f64, f64)> {
    if !(obs.q_nc > 0.0) {
        return Err(Error::DegenerateChannel("no-click gain is zero".into()));
    }
    if !(hull.p1_click.hi > 0.0) {
        return Err(Error::DegenerateSource("single-photon click probability vanishes".into()));
    }
    let y1c_l = (delta1c_l * obs.q_c / hull.p1_click.hi).min(1.0);
    let p1nc = match transfer {
        NoClickTransfer::Conservative => hull.p1_noclick.lo,
        NoClickTransfer::Literal => hull.p1_noclick.hi,
    };
    let d1 = flags.clamp(y1c_l * p1nc / obs.q_nc, 0.0, 1.0, Flag::DeltaClamped);
    let d0 = flags.clamp(y0 * hull.p0_noclick.lo / obs.q_nc, 0.0, 1.0, Flag::DeltaClamped);
    Ok((d1, d0, y1c_l))
}

/// Per-outcome and total rates from fluctuation bounds.
pub fn rates_with_fluctuation(
    obs: &Observables,
    b: &FluctuationBounds,
    proto: &ProtocolParams,
    totaling: Totaling,
) -> RateResult {
    let credit = 1.0 - privacy_entropy(b.e1c_u);
    let r_c = proto.q_sifting * obs.q_c * (b.delta0c_l + b.delta1c_l * credit - proto.f_ec * ec_entropy(obs.e_c));
    let r_nc = proto.q_sifting * obs.q_nc * (b.delta0nc_l + b.delta1nc_l * credit - proto.f_ec * ec_entropy(obs.e_nc));
    let mut flags = b.flags.clone();
    flags.merge(&obs.flags);
    RateResult {
        r_c,
        r_nc,
        r: total_rate(r_c, r_nc, totaling),
        y1_l: b.y1c_l,
        e1_u: b.e1c_u,
        delta1c_l: b.delta1c_l,
        delta0c_l: b.delta0c_l,
        delta1nc_l: b.delta1nc_l,
        delta0nc_l: b.delta0nc_l,
        obs: obs.clone(),
        flags,
    }
}

/// Fluctuation-aware estimator for one declared source and fluctuation box.
#[derive(Debug)]
pub struct FluctuationEstimator {
    source: SourceParams,
    spec: FluctuationSpec,
    options: FluctuationOptions,
    n_cut: usize,
    spec_flags: Flags,
    diagnostics: OnceLock<Result<(ProbabilityIntervals, QRatios, Flags)>>,
}

impl FluctuationEstimator {
    /// `tail_mass` sets the truncation; it matches the fluctuation-free
    /// pipeline at the declared source and is widened to cover the box.
    pub fn new(
        source: SourceParams,
        spec: FluctuationSpec,
        options: FluctuationOptions,
        tail_mass: f64,
    ) -> Result<Self> {
        source.validate()?;
        let spec_flags = spec.validate()?;
        let (b1, b2) = spec.intensity_box(&source);
        let nominal = truncation_order(&source, tail_mass, DEFAULT_N_CAP)?;
        let corner = truncation_order(&source.with_intensities(b1.hi, b2.hi), tail_mass, DEFAULT_N_CAP)?;
        let n_cut = nominal.max(corner).max(2);
        Ok(Self { source, spec, options, n_cut, spec_flags, diagnostics: OnceLock::new() })
    }

    pub fn n_cut(&self) -> usize {
        self.n_cut
    }

    pub fn options(&self) -> &FluctuationOptions {
        &self.options
    }

    pub fn spec(&self) -> &FluctuationSpec {
        &self.spec
    }

    /// Box-level probability intervals and q ratios (computed once).
    pub fn diagnostics(&self) -> Result<&(ProbabilityIntervals, QRatios, Flags)> {
        self.diagnostics
            .get_or_init(|| {
                let iv = probability_intervals(&self.source, &self.spec, self.n_cut)?;
                let mut flags = Flags::new();
                let q = q_ratios(&iv, &mut flags)?;
                Ok((iv, q, flags))
            })
            .as_ref()
            .map_err(Clone::clone)
    }

    /// Candidate realizations for an observed click / no-click probability.
    pub fn scan(&self, p_click: f64, p_noclick: f64) -> Result<RealizationScan> {
        let mut flags = self.spec_flags.clone();
        let (b1, b2) = self.spec.intensity_box(&self.source);
        let mode = if self.source.eta_d == 0.0 && self.options.realization_set == RealizationSet::ObservedSlice {
            // the detector carries no intensity information
            flags.raise(Flag::SliceFallbackToBox);
            RealizationSet::FullBox
        } else {
            self.options.realization_set
        };
        let coords = match mode {
            RealizationSet::FullBox => {
                let mut v = Vec::new();
                for x in b1.lattice(self.spec.grid_per_axis) {
                    for y in b2.lattice(self.spec.grid_per_axis) {
                        v.push((x, y));
                    }
                }
                v
            }
            RealizationSet::ObservedSlice => self.slice_points(b1, b2, p_noclick),
        };
        if coords.is_empty() {
            return Err(Error::InconsistentObservation { observed: p_noclick });
        }
        let mut points = Vec::with_capacity(coords.len());
        for (x, y) in coords {
            let raw = stats_fixed(&self.source.with_intensities(x, y), self.n_cut)?;
            points.push(Realization::new(x, y, raw, p_click, p_noclick));
        }
        Ok(RealizationScan { points, p_click, p_noclick, flags })
    }

    /// Points of the box whose no-click probability equals the observed one:
    /// one per μ₂ lattice value (solved for μ₁), plus the crossings of the
    /// slice with the two μ₁ edges (solved for μ₂).
    fn slice_points(&self, b1: Interval, b2: Interval, target: f64) -> Vec<(f64, f64)> {
        let f = |x: f64, y: f64| noclick_aggregate(&self.source.with_intensities(x, y)) - target;
        let tol = 1e-12 * target.abs();
        let mut pts = Vec::new();
        for y in b2.lattice(self.spec.grid_per_axis) {
            if let Some(x) = solve(|x| f(x, y), b1, tol) {
                pts.push((x, y));
            }
        }
        if b2.width() > 0.0 {
            for x in [b1.lo, b1.hi] {
                if let Some(y) = solve(|y| f(x, y), b2, tol) {
                    if !pts.contains(&(x, y)) {
                        pts.push((x, y));
                    }
                }
            }
        }
        pts
    }

    /// Worst-case bounds for one observation and a precomputed scan.
    pub fn bounds_with_scan(
        &self,
        scan: &RealizationScan,
        obs: &Observables,
        channel: &ChannelParams,
    ) -> Result<FluctuationBounds> {
        let mut flags = scan.flags.clone();
        let (y0, e0) = (channel.y0, channel.e0);
        let (d1c, d0c, y1_min) = delta_bounds_click(obs, scan, y0, &mut flags)?;
        let hull = scan.hull();
        let (d1nc, d0nc, y1c) = transfer_to_noclick(obs, &hull, d1c, y0, self.options.transfer, &mut flags)?;

        let e1 = if d1c > 0.0 && y1c > 0.0 {
            let mut cands = vec![e1_click_upper_raw(obs, d1c, d0c, e0, self.options.e1_variant)];
            if d1nc > 0.0 {
                cands.push((obs.e_nc - e0 * d0nc) / d1nc);
            }
            if let Some(ey) = mixed_error_yield(scan, obs) {
                cands.push(ey / y1c);
            }
            let raw = cands.into_iter().fold(f64::INFINITY, f64::min);
            flags.clamp(raw, 0.0, 1.0, Flag::E1Clamped)
        } else {
            flags.raise(Flag::VacuousSinglePhoton);
            1.0
        };

        Ok(FluctuationBounds {
            delta1c_l: d1c,
            delta0c_l: d0c,
            e1c_u: e1,
            delta1nc_l: d1nc,
            delta0nc_l: d0nc,
            y1c_l: y1c,
            y1_min,
            realizations: scan.points.len(),
            flags,
        })
    }

    /// Full evaluation: scan, bounds and rates.
    pub fn evaluate(&self, obs: &Observables, channel: &ChannelParams, proto: &ProtocolParams) -> Result<RateResult> {
        let scan = self.scan(obs.p_click, obs.p_noclick)?;
        self.evaluate_with_scan(&scan, obs, channel, proto)
    }

    pub fn evaluate_with_scan(
        &self,
        scan: &RealizationScan,
        obs: &Observables,
        channel: &ChannelParams,
        proto: &ProtocolParams,
    ) -> Result<RateResult> {
        proto.validate()?;
        let b = self.bounds_with_scan(scan, obs, channel)?;
        Ok(rates_with_fluctuation(obs, &b, proto, self.options.totaling))
    }
}

fn e1_click_upper_raw(obs: &Observables, d1: f64, d0: f64, e0: f64, variant: E1Variant) -> f64 {
    match variant {
        E1Variant::Full => (obs.e_c - e0 * d0) / d1,
        E1Variant::Simplified => obs.e_c / d1,
    }
}

/// Largest upper bound on `e₁Y₁` from the vacuum-eliminating combination
/// `p₀^c̄ E_t Q_t − p₀^t E_c̄ Q_c̄`, over realizations where it is valid.
fn mixed_error_yield(scan: &RealizationScan, obs: &Observables) -> Option<f64> {
    let mut worst: Option<f64> = None;
    for r in &scan.points {
        if !r.vacuum_dominates {
            return None;
        }
        let (pt, pnc) = (&r.stats.p_total, &r.stats.p_noclick);
        let den = pt[1] * pnc[0] - pnc[1] * pt[0];
        if !(den < 0.0) {
            return None;
        }
        let v = (pnc[0] * obs.e_t * obs.q_t - pt[0] * obs.e_nc * obs.q_nc) / den;
        worst = Some(worst.map_or(v, |w| w.max(v)));
    }
    worst
}

/// Bisection for a sign change of a monotone function on `iv`.
fn solve<F: Fn(f64) -> f64>(f: F, iv: Interval, tol: f64) -> Option<f64> {
    let (mut lo, mut hi) = (iv.lo, iv.hi);
    let (flo, fhi) = (f(lo), f(hi));
    if flo.abs() <= tol && (lo == hi || flo == 0.0) {
        return Some(lo);
    }
    if fhi == 0.0 {
        return Some(hi);
    }
    if lo == hi || flo.signum() == fhi.signum() {
        return None;
    }
    let neg_at_lo = flo < 0.0;
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        let fm = f(mid);
        if fm == 0.0 {
            return Some(mid);
        }
        if (fm < 0.0) == neg_at_lo {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Some(0.5 * (lo + hi))
}
