//! Run configuration: a flat `key = value` text file with `#` comments,
//! overridable from the command line with `--set key=value`.

use std::fmt::{self, Write as _};
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::Serialize;

use passive_decoy::{
    ActiveDecoyParams, ChannelParams, E1Variant, FluctuationOptions, FluctuationSpec, NoClickTransfer, ProtocolParams,
    QberModel, RealizationSet, Scenario, SourceParams, Totaling,
};

/// A malformed or inconsistent configuration (exit status 2).
#[derive(Debug, Clone, PartialEq)]
pub struct ConfigError(pub String);

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "configuration error: {}", self.0)
    }
}

impl std::error::Error for ConfigError {}

type Result<T> = std::result::Result<T, ConfigError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Axis {
    Distance,
    Delta,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Format {
    Csv,
    Jsonl,
}

impl Axis {
    pub fn as_str(self) -> &'static str {
        match self {
            Axis::Distance => "distance",
            Axis::Delta => "delta",
        }
    }
}

impl Format {
    pub fn as_str(self) -> &'static str {
        match self {
            Format::Csv => "csv",
            Format::Jsonl => "jsonl",
        }
    }
}

/// Every knob of a run. Defaults reproduce the reference operating point.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub source: SourceParams,
    pub channel: ChannelParams,
    pub proto: ProtocolParams,
    pub fluct: FluctuationSpec,
    pub options: FluctuationOptions,
    pub qber_model: QberModel,
    pub active: ActiveDecoyParams,
    pub axis: Axis,
    /// Grid of the sweep axis; `None` means the axis default.
    pub start: Option<f64>,
    pub stop: Option<f64>,
    pub step: Option<f64>,
    /// Fixed distance of a δ sweep (km).
    pub distance: f64,
    /// Fluctuations compared by `compare`.
    pub compare_deltas: Vec<f64>,
    pub out: Option<PathBuf>,
    pub format: Format,
    pub seed: u64,
    pub mc_trials: u64,
    pub battery_instances: usize,
    pub consistency_points: usize,
    /// Run the mis-specified battery; its violations then fail validation.
    pub negative_control: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            source: SourceParams::default(),
            channel: ChannelParams::default(),
            proto: ProtocolParams::default(),
            fluct: FluctuationSpec::default(),
            options: FluctuationOptions::default(),
            qber_model: QberModel::default(),
            active: ActiveDecoyParams::default(),
            axis: Axis::Distance,
            start: None,
            stop: None,
            step: None,
            distance: 30.0,
            compare_deltas: vec![0.02, 0.05],
            out: None,
            format: Format::Csv,
            seed: 1,
            mc_trials: 1_000_000,
            battery_instances: 100,
            consistency_points: 100,
            negative_control: false,
        }
    }
}

fn parse_f64(key: &str, v: &str) -> Result<f64> {
    let x: f64 = v.parse().map_err(|_| ConfigError(format!("{key}: '{v}' is not a number")))?;
    if !x.is_finite() {
        return Err(ConfigError(format!("{key}: '{v}' is not finite")));
    }
    Ok(x)
}

fn parse_int<T: std::str::FromStr>(key: &str, v: &str) -> Result<T> {
    v.parse().map_err(|_| ConfigError(format!("{key}: '{v}' is not a nonnegative integer")))
}

fn parse_bool(key: &str, v: &str) -> Result<bool> {
    match v {
        "true" | "yes" | "1" => Ok(true),
        "false" | "no" | "0" => Ok(false),
        _ => Err(ConfigError(format!("{key}: '{v}' is not a boolean"))),
    }
}

/// Enumerations reuse the snake_case names of their serde form.
fn parse_enum<T: DeserializeOwned>(key: &str, v: &str) -> Result<T> {
    serde_json::from_value(serde_json::Value::String(v.to_owned()))
        .map_err(|_| ConfigError(format!("{key}: unknown value '{v}'")))
}

fn enum_name<T: Serialize>(x: &T) -> String {
    match serde_json::to_value(x) {
        Ok(serde_json::Value::String(s)) => s,
        other => panic!("enumeration does not serialise to a string: {other:?}"),
    }
}

fn parse_list(key: &str, v: &str) -> Result<Vec<f64>> {
    v.split(',').filter(|s| !s.trim().is_empty()).map(|s| parse_f64(key, s.trim())).collect()
}

impl RunConfig {
    /// Applies one `key = value` assignment.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        match key.trim() {
            "mu1" => self.source.mu1 = parse_f64(key, v)?,
            "mu2" => self.source.mu2 = parse_f64(key, v)?,
            "t" => self.source.t = parse_f64(key, v)?,
            "eps_dark" => self.source.eps_dark = parse_f64(key, v)?,
            "eta_d" => self.source.eta_d = parse_f64(key, v)?,
            "alpha" => self.channel.alpha = parse_f64(key, v)?,
            "eta_bob" => self.channel.eta_bob = parse_f64(key, v)?,
            "y0" => self.channel.y0 = parse_f64(key, v)?,
            "e_d" => self.channel.e_d = parse_f64(key, v)?,
            "e0" => self.channel.e0 = parse_f64(key, v)?,
            "q_sifting" => self.proto.q_sifting = parse_f64(key, v)?,
            "f_ec" => self.proto.f_ec = parse_f64(key, v)?,
            "delta_mu1" => self.fluct.delta_mu1 = parse_f64(key, v)?,
            "delta_mu2" => self.fluct.delta_mu2 = parse_f64(key, v)?,
            "delta" => {
                let d = parse_f64(key, v)?;
                self.fluct.delta_mu1 = d;
                self.fluct.delta_mu2 = d;
            }
            "grid_per_axis" => {
                let g = parse_int(key, v)?;
                self.fluct.grid_per_axis = g;
                self.active.grid_per_axis = g;
            }
            "realization_set" => self.options.realization_set = parse_enum::<RealizationSet>(key, v)?,
            "e1_variant" => self.options.e1_variant = parse_enum::<E1Variant>(key, v)?,
            "noclick_transfer" => self.options.transfer = parse_enum::<NoClickTransfer>(key, v)?,
            "totaling" => self.options.totaling = parse_enum::<Totaling>(key, v)?,
            "qber_model" => self.qber_model = parse_enum::<QberModel>(key, v)?,
            "active_mu" => self.active.mu_signal = parse_f64(key, v)?,
            "active_nu" => self.active.nu_decoy = parse_f64(key, v)?,
            "axis" => {
                self.axis = match v {
                    "distance" => Axis::Distance,
                    "delta" => Axis::Delta,
                    _ => return Err(ConfigError(format!("axis: expected distance or delta, got '{v}'"))),
                }
            }
            "start" => self.start = Some(parse_f64(key, v)?),
            "stop" => self.stop = Some(parse_f64(key, v)?),
            "step" => self.step = Some(parse_f64(key, v)?),
            "distance" => self.distance = parse_f64(key, v)?,
            "compare_deltas" => self.compare_deltas = parse_list(key, v)?,
            "out" => self.out = (!v.is_empty()).then(|| PathBuf::from(v)),
            "format" => {
                self.format = match v {
                    "csv" => Format::Csv,
                    "jsonl" => Format::Jsonl,
                    _ => return Err(ConfigError(format!("format: expected csv or jsonl, got '{v}'"))),
                }
            }
            "seed" => self.seed = parse_int(key, v)?,
            "mc_trials" => self.mc_trials = parse_int(key, v)?,
            "battery_instances" => self.battery_instances = parse_int(key, v)?,
            "consistency_points" => self.consistency_points = parse_int(key, v)?,
            "negative_control" => self.negative_control = parse_bool(key, v)?,
            other => return Err(ConfigError(format!("unknown key '{other}'"))),
        }
        Ok(())
    }

    /// Applies a `key=value` override as given on the command line.
    pub fn set_assignment(&mut self, assignment: &str) -> Result<()> {
        let (k, v) =
            assignment.split_once('=').ok_or_else(|| ConfigError(format!("expected key=value, got '{assignment}'")))?;
        self.set(k, v)
    }

    /// Parses a configuration text on top of the defaults.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) =
                line.split_once('=').ok_or_else(|| ConfigError(format!("line {}: expected key = value", i + 1)))?;
            cfg.set(k, v).map_err(|e| ConfigError(format!("line {}: {}", i + 1, e.0)))?;
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text =
            std::fs::read_to_string(path).map_err(|e| ConfigError(format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    /// Writes every key; `parse(serialize(c)) == c`. Floats use Rust's
    /// shortest round-trip representation.
    pub fn serialize(&self) -> String {
        let mut s = String::new();
        let mut kv = |k: &str, v: String| {
            let _ = writeln!(s, "{k} = {v}");
        };
        kv("mu1", self.source.mu1.to_string());
        kv("mu2", self.source.mu2.to_string());
        kv("t", self.source.t.to_string());
        kv("eps_dark", self.source.eps_dark.to_string());
        kv("eta_d", self.source.eta_d.to_string());
        kv("alpha", self.channel.alpha.to_string());
        kv("eta_bob", self.channel.eta_bob.to_string());
        kv("y0", self.channel.y0.to_string());
        kv("e_d", self.channel.e_d.to_string());
        kv("e0", self.channel.e0.to_string());
        kv("q_sifting", self.proto.q_sifting.to_string());
        kv("f_ec", self.proto.f_ec.to_string());
        kv("delta_mu1", self.fluct.delta_mu1.to_string());
        kv("delta_mu2", self.fluct.delta_mu2.to_string());
        kv("grid_per_axis", self.fluct.grid_per_axis.to_string());
        kv("realization_set", enum_name(&self.options.realization_set));
        kv("e1_variant", enum_name(&self.options.e1_variant));
        kv("noclick_transfer", enum_name(&self.options.transfer));
        kv("totaling", enum_name(&self.options.totaling));
        kv("qber_model", enum_name(&self.qber_model));
        kv("active_mu", self.active.mu_signal.to_string());
        kv("active_nu", self.active.nu_decoy.to_string());
        kv("axis", self.axis.as_str().into());
        for (k, v) in [("start", self.start), ("stop", self.stop), ("step", self.step)] {
            if let Some(x) = v {
                kv(k, x.to_string());
            }
        }
        kv("distance", self.distance.to_string());
        kv("compare_deltas", self.compare_deltas.iter().map(f64::to_string).collect::<Vec<_>>().join(","));
        if let Some(p) = &self.out {
            kv("out", p.display().to_string());
        }
        kv("format", self.format.as_str().into());
        kv("seed", self.seed.to_string());
        kv("mc_trials", self.mc_trials.to_string());
        kv("battery_instances", self.battery_instances.to_string());
        kv("consistency_points", self.consistency_points.to_string());
        kv("negative_control", self.negative_control.to_string());
        s
    }

    /// Physical scenario described by this configuration.
    pub fn scenario(&self) -> Scenario {
        Scenario {
            source: self.source,
            channel: self.channel,
            proto: self.proto,
            options: self.options,
            qber_model: self.qber_model,
            active: self.active,
            grid_per_axis: self.fluct.grid_per_axis,
            ..Scenario::default()
        }
    }

    /// Points of the sweep axis.
    pub fn grid(&self) -> Result<Vec<f64>> {
        let (start, stop, step) = match self.axis {
            Axis::Distance => (self.start.unwrap_or(0.0), self.stop.unwrap_or(150.0), self.step.unwrap_or(1.0)),
            Axis::Delta => (self.start.unwrap_or(0.0), self.stop.unwrap_or(0.10), self.step.unwrap_or(0.01)),
        };
        if !(step > 0.0) || stop < start {
            return Err(ConfigError(format!("grid must be increasing: start={start}, stop={stop}, step={step}")));
        }
        let n = ((stop - start) / step + 1e-9).floor() as usize + 1;
        if n > 1_000_000 {
            return Err(ConfigError(format!("grid has {n} points")));
        }
        // integer multiples keep the points free of accumulated rounding
        Ok((0..n).map(|i| start + i as f64 * step).collect())
    }

    /// Grid of distances used by `compare` (the distance axis defaults
    /// start at 1 km there, since 0 km is not a fiber link).
    pub fn compare_grid(&self) -> Result<Vec<f64>> {
        let cfg = RunConfig { axis: Axis::Distance, start: Some(self.start.unwrap_or(1.0)), ..self.clone() };
        cfg.grid()
    }

    /// Checks the whole configuration before any work starts.
    pub fn validate(&self) -> Result<()> {
        let wrap = |e: passive_decoy::Error| ConfigError(e.to_string());
        self.scenario().validate().map_err(wrap)?;
        self.fluct.validate().map_err(wrap)?;
        if !(self.distance >= 0.0) {
            return Err(ConfigError(format!("distance must be >= 0, got {}", self.distance)));
        }
        let grid = self.grid()?;
        if self.axis == Axis::Distance && grid[0] < 0.0 {
            return Err(ConfigError("distances must be >= 0".into()));
        }
        if self.axis == Axis::Delta && (grid[0] < 0.0 || *grid.last().unwrap() >= 0.5) {
            return Err(ConfigError("delta grid must lie in [0, 0.5)".into()));
        }
        if self.compare_deltas.is_empty() || self.compare_deltas.iter().any(|d| !(0.0..0.5).contains(d)) {
            return Err(ConfigError("compare_deltas must be a nonempty list in [0, 0.5)".into()));
        }
        if self.mc_trials == 0 || self.battery_instances == 0 || self.consistency_points == 0 {
            return Err(ConfigError("mc_trials, battery_instances and consistency_points must be >= 1".into()));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_reproduce_reference_point() {
        let c = RunConfig::default();
        assert_eq!(c.source.mu1, 0.5);
        assert_eq!(c.source.mu2, 1e-4);
        assert_eq!(c.source.eps_dark, 3.2e-7);
        assert_eq!(c.source.eta_d, 0.12);
        assert_eq!(c.channel.alpha, 0.21);
        assert_eq!(c.channel.eta_bob, 0.045);
        assert_eq!(c.proto.f_ec, 1.22);
        c.validate().unwrap();
    }

    #[test]
    fn comments_and_blank_lines_are_ignored() {
        let c = RunConfig::parse("# header\n\nmu1 = 0.4  # trailing\n  delta=0.02\n").unwrap();
        assert_eq!(c.source.mu1, 0.4);
        assert_eq!(c.fluct.delta_mu1, 0.02);
        assert_eq!(c.fluct.delta_mu2, 0.02);
    }

    #[test]
    fn unknown_keys_and_bad_values_are_rejected() {
        assert!(RunConfig::parse("nope = 1").is_err());
        assert!(RunConfig::parse("mu1 = abc").is_err());
        assert!(RunConfig::parse("qber_model = printed").is_err());
        assert!(RunConfig::parse("mu1 0.5").is_err());
    }

    #[test]
    fn enum_keys_use_snake_case_names() {
        let c = RunConfig::parse("realization_set = full_box\ne1_variant = simplified\nqber_model = literal").unwrap();
        assert_eq!(c.options.realization_set, RealizationSet::FullBox);
        assert_eq!(c.options.e1_variant, E1Variant::Simplified);
        assert_eq!(c.qber_model, QberModel::Literal);
    }

    #[test]
    fn grid_counts_include_both_ends() {
        let mut c = RunConfig { axis: Axis::Delta, ..Default::default() };
        assert_eq!(c.grid().unwrap().len(), 11);
        c.axis = Axis::Distance;
        assert_eq!(c.grid().unwrap().len(), 151);
        assert_eq!(c.compare_grid().unwrap().len(), 150);
        c.step = Some(-1.0);
        assert!(c.grid().is_err());
    }
}
