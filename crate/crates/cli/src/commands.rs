//! The `sweep`, `compare` and `validate` subcommands.

use anyhow::Result;

use passive_decoy::channel::observe;
use passive_decoy::mc::{run_trials, soundness_battery, BatteryConfig};
use passive_decoy::study::{consistency_suite, Method, SweepRow};
use passive_decoy::{build_stats, Error, RateResult};

use crate::config::{Axis, RunConfig};
use crate::output::{Cell, Table};

/// Process outcome; see [`Status::code`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Status {
    Success,
    Violation,
    BeyondCutoff,
}

impl Status {
    pub fn code(self) -> u8 {
        match self {
            Status::Success => 0,
            Status::Violation => 1,
            Status::BeyondCutoff => 3,
        }
    }
}

/// Exit status for a configuration error.
pub const CONFIG_ERROR: u8 = 2;

const SWEEP_TAIL: [&str; 13] =
    ["r_c", "r_nc", "r", "fidelity", "y1_l", "e1_u", "delta1c_l", "q_t", "q_c", "q_nc", "e_t", "e_c", "e_nc"];

fn sweep_columns(axis: Axis, with_fidelity: bool) -> Vec<&'static str> {
    let mut cols = vec![axis.as_str()];
    cols.extend(SWEEP_TAIL.iter().copied().filter(|c| with_fidelity || *c != "fidelity"));
    cols.push("flags");
    cols
}

fn sweep_cells(axis_value: f64, fidelity: Option<Option<f64>>, r: &RateResult) -> Vec<Cell> {
    let o = &r.obs;
    let mut row = vec![Cell::Num(axis_value), r.r_c.into(), r.r_nc.into(), r.r.into()];
    if let Some(f) = fidelity {
        row.push(f.into());
    }
    row.extend([r.y1_l, r.e1_u, r.delta1c_l, o.q_t, o.q_c, o.q_nc, o.e_t, o.e_c, o.e_nc].map(Cell::Num));
    row.push(Cell::Text(r.flags.to_string()));
    row
}

/// Passive rate over the configured axis.
pub fn sweep(cfg: &RunConfig) -> Result<(Table, Status)> {
    let scenario = cfg.scenario();
    let grid = cfg.grid()?;
    match cfg.axis {
        Axis::Distance => {
            let rows = scenario.distance_sweep(cfg.fluct, &grid)?;
            let mut t = Table::new(sweep_columns(Axis::Distance, false));
            for SweepRow { distance, result, .. } in &rows {
                t.push(sweep_cells(*distance, None, result));
            }
            Ok((t, Status::Success))
        }
        Axis::Delta => {
            let mut t = Table::new(sweep_columns(Axis::Delta, true));
            match scenario.delta_sweep(cfg.distance, &grid) {
                Ok(rows) => {
                    for SweepRow { delta, fidelity, result, .. } in &rows {
                        t.push(sweep_cells(*delta, Some(*fidelity), result));
                    }
                    Ok((t, Status::Success))
                }
                Err(Error::BeyondCutoff { distance_km }) => {
                    let mut row = vec![Cell::Empty; t.columns.len()];
                    *row.last_mut().unwrap() = Cell::Text(format!("error:beyond_cutoff(R(0) = 0 at {distance_km} km)"));
                    t.push(row);
                    Ok((t, Status::BeyondCutoff))
                }
                Err(e) => Err(e.into()),
            }
        }
    }
}

pub const COMPARE_COLUMNS: [&str; 11] = [
    "delta",
    "distance",
    "r_passive",
    "r_active2",
    "r_active3",
    "fidelity_passive",
    "fidelity_active2",
    "fidelity_active3",
    "cutoff_passive",
    "cutoff_active2",
    "cutoff_active3",
];

/// Fidelity of every method over distance, for each configured δ.
pub fn compare(cfg: &RunConfig) -> Result<(Table, Status)> {
    let cmp = cfg.scenario().compare(&cfg.compare_deltas, &cfg.compare_grid()?)?;
    let mut t = Table::new(COMPARE_COLUMNS.to_vec());
    for block in &cmp.blocks {
        for row in &block.rows {
            let mut cells = vec![Cell::Num(row.delta), Cell::Num(row.distance)];
            cells.extend(Method::ALL.map(|m| Cell::Num(row.get(m).r)));
            cells.extend(Method::ALL.map(|m| Cell::from(row.get(m).fidelity)));
            cells.extend(Method::ALL.map(|m| Cell::Num(block.cutoff.get(m))));
            t.push(cells);
        }
    }
    Ok((t, Status::Success))
}

/// One line of the validation report.
#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub value: f64,
    pub limit: f64,
}

pub const VALIDATE_COLUMNS: [&str; 4] = ["check", "passed", "value", "limit"];

/// Monte Carlo agreement limit in standard errors.
const Z_LIMIT: f64 = 4.0;

/// Runs the invariant suite and returns the itemized report.
pub fn validate(cfg: &RunConfig) -> Result<(Table, Status, Vec<Check>)> {
    let mut checks = Vec::new();
    let mut push = |name: String, passed: bool, value: f64, limit: f64| {
        checks.push(Check { name, passed, value, limit });
    };

    let rep = consistency_suite(cfg.consistency_points, cfg.seed)?;
    let n_fail = rep.failures.len() as f64;
    push(format!("consistency suite ({} points): failures", rep.points), rep.is_clean(), n_fail, 0.0);

    let scenario = cfg.scenario();
    let stats = build_stats(&cfg.source, scenario.tail_mass)?;
    for d in [0.0, 30.0, 50.0] {
        let ch = scenario.channel_at(d);
        let obs = observe(&stats, &ch, cfg.qber_model)?;
        let mc = run_trials(&cfg.source, &ch, cfg.mc_trials, cfg.seed)?;
        let mut zs = vec![
            ("Q_t", mc.q_t.z_score(obs.q_t)),
            ("Q_c", mc.q_c.z_score(obs.q_c)),
            ("Q_nc", mc.q_nc.z_score(obs.q_nc)),
            ("E_t", mc.e_t.z_score(obs.e_t)),
        ];
        let names = ["p_noclick(0)", "p_noclick(1)", "p_noclick(2)", "p_noclick(3)", "p_noclick(4)", "p_noclick(5)"];
        for (n, name) in names.into_iter().enumerate() {
            zs.push((name, mc.noclick_freq[n].z_score(stats.p_noclick[n])));
        }
        for (name, z) in zs {
            push(format!("monte carlo {name} at {d} km: |z|"), z.abs() <= Z_LIMIT, z.abs(), Z_LIMIT);
        }
    }

    for delta in [0.0, 0.02, 0.05, 0.10] {
        let config =
            BatteryConfig { options: cfg.options, ..BatteryConfig::honest(cfg.battery_instances, cfg.seed, delta) };
        let rep = soundness_battery(&config)?;
        let v = rep.violations.len() as f64;
        push(format!("soundness battery at delta {delta}: violations"), rep.is_clean(), v, 0.0);
    }
    if cfg.negative_control {
        let rep = soundness_battery(&BatteryConfig::negative(cfg.battery_instances, cfg.seed))?;
        let v = rep.violations.len() as f64;
        push("soundness battery with mis-specified box: violations".into(), rep.is_clean(), v, 0.0);
    }

    let gap = scenario.qber_model_gap(cfg.distance)?;
    push(
        format!("rate difference consistent - literal QBER model at {} km (informational)", cfg.distance),
        true,
        gap,
        f64::NAN,
    );

    let mut t = Table::new(VALIDATE_COLUMNS.to_vec());
    for c in &checks {
        let limit = if c.limit.is_nan() { Cell::Empty } else { Cell::Num(c.limit) };
        t.push(vec![Cell::Text(c.name.clone()), Cell::Bool(c.passed), Cell::Num(c.value), limit]);
    }
    let status = if checks.iter().all(|c| c.passed) { Status::Success } else { Status::Violation };
    Ok((t, status, checks))
}

/// Human-readable validation summary.
pub fn summarize(checks: &[Check]) -> String {
    let failed: Vec<&Check> = checks.iter().filter(|c| !c.passed).collect();
    let mut s = format!("validate: {} checks, {} failed\n", checks.len(), failed.len());
    for c in failed {
        s.push_str(&format!("  FAILED {}: {} (limit {})\n", c.name, c.value, c.limit));
    }
    s
}
