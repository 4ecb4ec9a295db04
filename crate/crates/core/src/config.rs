//! Experiment configuration: a flat `key = value` file split into
//! `[network]`, `[radio]`, `[energy]`, `[control]` and `[sim]` sections.
//!
//! Energies in `[energy]` and `[control]` (`r_max`, `theta`, `vartheta`)
//! are expressed in the normalized energy unit, the largest per-node
//! `e_max` in joules; see [`crate::sim::Scenario::energy_unit_j`].

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::Path;

use crate::control::bmse_min::ThetaMode;
use crate::control::energy_min::DescentParams;
use crate::error::{Error, Result};
use crate::radio_energy::{ArrivalProcess, RadioParams};

#[derive(Debug, Clone, PartialEq)]
pub struct NetworkConfig {
    pub nodes: usize,
    pub subspace_dim: usize,
    pub radius_m: f64,
    pub kernel_variance: f64,
    /// `10·log10 Tr{C_s}`.
    pub worst_bmse_db: f64,
    pub noise_var: f64,
    pub amplitude: f64,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        Self {
            nodes: 50,
            subspace_dim: 6,
            radius_m: 100.0,
            kernel_variance: 0.25,
            worst_bmse_db: -2.0,
            noise_var: 1e-4,
            amplitude: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RadioConfig {
    pub params: RadioParams,
    /// Fading percentile at which `e_max` buys `max_bits`.
    pub percentile: f64,
    /// Per-slot overhead as a fraction of each node's `e_max`.
    pub overhead_frac: f64,
}

impl Default for RadioConfig {
    fn default() -> Self {
        Self {
            params: RadioParams::default(),
            percentile: 0.05,
            overhead_frac: 0.05,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ArrivalMode {
    Uniform,
    OnOff,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnergyConfig {
    pub arrivals: ArrivalMode,
    pub r_max: f64,
    /// Length of one ON+OFF cycle; only used by [`ArrivalMode::OnOff`].
    pub window_s: f64,
    /// `B_i(0)` as a multiple of the node's offset.
    pub init_battery_frac: f64,
}

impl Default for EnergyConfig {
    fn default() -> Self {
        Self {
            arrivals: ArrivalMode::Uniform,
            r_max: 2.5,
            window_s: 1.0,
            init_battery_frac: 1.0,
        }
    }
}

impl EnergyConfig {
    pub fn arrival_process(&self) -> ArrivalProcess {
        match self.arrivals {
            ArrivalMode::Uniform => ArrivalProcess::uniform(self.r_max),
            ArrivalMode::OnOff => ArrivalProcess::on_off(self.r_max, self.window_s),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Algorithm {
    /// BMSE minimization with battery stability.
    Alg1,
    /// Energy minimization, per-slot problem solved by descent.
    Alg2,
    /// Energy minimization, linearized closed form.
    Alg3,
}

impl Algorithm {
    pub fn name(self) -> &'static str {
        match self {
            Algorithm::Alg1 => "alg1",
            Algorithm::Alg2 => "alg2",
            Algorithm::Alg3 => "alg3",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ControlConfig {
    pub algorithm: Algorithm,
    pub v: f64,
    /// Battery offsets for `alg1`.
    pub theta: ThetaMode,
    /// Battery offset for `alg2`/`alg3`.
    pub vartheta: f64,
    /// Average BMSE target for `alg2`/`alg3`.
    pub gamma: f64,
    pub mu: f64,
    /// `Z(0)`; `None` draws it uniformly in `(0, 1]`.
    pub z0: Option<f64>,
    pub descent: DescentParams,
}

impl Default for ControlConfig {
    fn default() -> Self {
        Self {
            algorithm: Algorithm::Alg1,
            v: 1.0,
            theta: ThetaMode::Theorem,
            vartheta: 20.0,
            gamma: 0.05,
            mu: 1.0,
            z0: None,
            descent: DescentParams::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Precision {
    F32,
    F64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimConfig {
    pub horizon: usize,
    /// Slots excluded from time averages; `None` means 90% of the horizon.
    pub burn_in: Option<usize>,
    pub trials: usize,
    pub seed: u64,
    pub precision: Precision,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            horizon: 10_000,
            burn_in: None,
            trials: 20,
            seed: 1,
            precision: Precision::F64,
        }
    }
}

impl SimConfig {
    pub fn effective_burn_in(&self) -> usize {
        self.burn_in.unwrap_or(self.horizon * 9 / 10)
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ExperimentConfig {
    pub network: NetworkConfig,
    pub radio: RadioConfig,
    pub energy: EnergyConfig,
    pub control: ControlConfig,
    pub sim: SimConfig,
}

/// A constraint violation, naming the offending key.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfigIssue {
    pub key: &'static str,
    pub message: String,
}

fn issue(key: &'static str, message: impl Into<String>) -> ConfigIssue {
    ConfigIssue {
        key,
        message: message.into(),
    }
}

fn positive(key: &'static str, v: f64) -> std::result::Result<(), ConfigIssue> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(issue(key, format!("must be positive and finite, got {v}")))
    }
}

fn nonnegative(key: &'static str, v: f64) -> std::result::Result<(), ConfigIssue> {
    if v >= 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(issue(key, format!("must be nonnegative and finite, got {v}")))
    }
}

impl ExperimentConfig {
    /// Checks every constraint except the horizon/burn-in relation.
    pub fn validate_model(&self) -> std::result::Result<(), ConfigIssue> {
        let n = &self.network;
        if n.nodes < 2 {
            return Err(issue("nodes", format!("need at least 2 nodes, got {}", n.nodes)));
        }
        if n.subspace_dim == 0 || n.subspace_dim > n.nodes {
            return Err(issue(
                "subspace_dim",
                format!("must lie in 1..={}, got {}", n.nodes, n.subspace_dim),
            ));
        }
        positive("radius_m", n.radius_m)?;
        positive("kernel_variance", n.kernel_variance)?;
        if !n.worst_bmse_db.is_finite() {
            return Err(issue("worst_bmse_db", "must be finite"));
        }
        positive("noise_var", n.noise_var)?;
        positive("amplitude", n.amplitude)?;

        let p = &self.radio.params;
        positive("noise_psd", p.noise_psd)?;
        positive("noise_figure", p.noise_figure)?;
        positive("system_const", p.system_const)?;
        positive("slot_s", p.slot_s)?;
        positive("carrier_hz", p.carrier_hz)?;
        if !(p.ber > 0.0 && p.ber < 1.0) {
            return Err(issue("ber", format!("must lie in (0, 1), got {}", p.ber)));
        }
        if p.max_bits == 0 || p.max_bits > 52 {
            return Err(issue("max_bits", format!("must lie in 1..=52, got {}", p.max_bits)));
        }
        let pct = self.radio.percentile;
        if !(pct > 0.0 && pct < 1.0) {
            return Err(issue("percentile", format!("must lie in (0, 1), got {pct}")));
        }
        nonnegative("overhead_frac", self.radio.overhead_frac)?;

        let e = &self.energy;
        nonnegative("r_max", e.r_max)?;
        positive("window_s", e.window_s)?;
        nonnegative("init_battery_frac", e.init_battery_frac)?;

        let c = &self.control;
        positive("v", c.v)?;
        if let ThetaMode::Free(x) = c.theta {
            nonnegative("theta", x)?;
        }
        nonnegative("vartheta", c.vartheta)?;
        positive("gamma", c.gamma)?;
        positive("mu", c.mu)?;
        if let Some(z) = c.z0 {
            nonnegative("z0", z)?;
        }
        let d = &c.descent;
        if d.max_iters == 0 {
            return Err(issue("descent_max_iters", "must be at least 1"));
        }
        positive("descent_step", d.step)?;
        if !(d.backtrack > 0.0 && d.backtrack < 1.0) {
            return Err(issue(
                "descent_backtrack",
                format!("must lie in (0, 1), got {}", d.backtrack),
            ));
        }
        nonnegative("descent_tolerance", d.tolerance)?;

        if self.sim.trials == 0 {
            return Err(issue("trials", "must be at least 1"));
        }
        Ok(())
    }

    pub fn validate(&self) -> std::result::Result<(), ConfigIssue> {
        self.validate_model()?;
        let s = &self.sim;
        if s.horizon == 0 {
            return Err(issue("horizon", "must be at least 1"));
        }
        if s.effective_burn_in() >= s.horizon {
            return Err(issue(
                "burn_in",
                format!("must be below the horizon {}, got {}", s.horizon, s.effective_burn_in()),
            ));
        }
        Ok(())
    }

    /// Serializes every key, so that parsing the output reproduces `self`.
    pub fn emit(&self) -> String {
        let mut out = String::new();
        let n = &self.network;
        let p = &self.radio.params;
        let e = &self.energy;
        let c = &self.control;
        let s = &self.sim;
        let w = &mut out;
        let _ = writeln!(w, "[network]");
        let _ = writeln!(w, "nodes = {}", n.nodes);
        let _ = writeln!(w, "subspace_dim = {}", n.subspace_dim);
        let _ = writeln!(w, "radius_m = {:?}", n.radius_m);
        let _ = writeln!(w, "kernel_variance = {:?}", n.kernel_variance);
        let _ = writeln!(w, "worst_bmse_db = {:?}", n.worst_bmse_db);
        let _ = writeln!(w, "noise_var = {:?}", n.noise_var);
        let _ = writeln!(w, "amplitude = {:?}", n.amplitude);
        let _ = writeln!(w, "\n[radio]");
        let _ = writeln!(w, "noise_psd = {:?}", p.noise_psd);
        let _ = writeln!(w, "noise_figure = {:?}", p.noise_figure);
        let _ = writeln!(w, "system_const = {:?}", p.system_const);
        let _ = writeln!(w, "slot_s = {:?}", p.slot_s);
        let _ = writeln!(w, "ber = {:?}", p.ber);
        let _ = writeln!(w, "carrier_hz = {:?}", p.carrier_hz);
        let _ = writeln!(w, "max_bits = {}", p.max_bits);
        let _ = writeln!(w, "fading = {}", p.fading);
        let _ = writeln!(w, "percentile = {:?}", self.radio.percentile);
        let _ = writeln!(w, "overhead_frac = {:?}", self.radio.overhead_frac);
        let _ = writeln!(w, "\n[energy]");
        let arrivals = match e.arrivals {
            ArrivalMode::Uniform => "uniform",
            ArrivalMode::OnOff => "on_off",
        };
        let _ = writeln!(w, "arrivals = {arrivals}");
        let _ = writeln!(w, "r_max = {:?}", e.r_max);
        let _ = writeln!(w, "window_s = {:?}", e.window_s);
        let _ = writeln!(w, "init_battery_frac = {:?}", e.init_battery_frac);
        let _ = writeln!(w, "\n[control]");
        let _ = writeln!(w, "algorithm = {}", c.algorithm.name());
        let _ = writeln!(w, "v = {:?}", c.v);
        match c.theta {
            ThetaMode::Theorem => {
                let _ = writeln!(w, "theta = theorem");
            }
            ThetaMode::TheoremClosedForm => {
                let _ = writeln!(w, "theta = theorem_closed_form");
            }
            ThetaMode::Free(x) => {
                let _ = writeln!(w, "theta = {x:?}");
            }
        }
        let _ = writeln!(w, "vartheta = {:?}", c.vartheta);
        let _ = writeln!(w, "gamma = {:?}", c.gamma);
        let _ = writeln!(w, "mu = {:?}", c.mu);
        match c.z0 {
            None => {
                let _ = writeln!(w, "z0 = random");
            }
            Some(z) => {
                let _ = writeln!(w, "z0 = {z:?}");
            }
        }
        let _ = writeln!(w, "descent_max_iters = {}", c.descent.max_iters);
        let _ = writeln!(w, "descent_step = {:?}", c.descent.step);
        let _ = writeln!(w, "descent_backtrack = {:?}", c.descent.backtrack);
        let _ = writeln!(w, "descent_tolerance = {:?}", c.descent.tolerance);
        let _ = writeln!(w, "\n[sim]");
        let _ = writeln!(w, "horizon = {}", s.horizon);
        match s.burn_in {
            None => {
                let _ = writeln!(w, "burn_in = auto");
            }
            Some(b) => {
                let _ = writeln!(w, "burn_in = {b}");
            }
        }
        let _ = writeln!(w, "trials = {}", s.trials);
        let _ = writeln!(w, "seed = {}", s.seed);
        let precision = match s.precision {
            Precision::F32 => "f32",
            Precision::F64 => "f64",
        };
        let _ = writeln!(w, "precision = {precision}");
        out
    }
}

fn parse_f64(v: &str) -> std::result::Result<f64, String> {
    v.parse::<f64>().map_err(|_| format!("expected a number, got `{v}`"))
}

fn parse_usize(v: &str) -> std::result::Result<usize, String> {
    v.parse::<usize>()
        .map_err(|_| format!("expected a nonnegative integer, got `{v}`"))
}

fn parse_bool(v: &str) -> std::result::Result<bool, String> {
    match v {
        "true" | "yes" | "1" => Ok(true),
        "false" | "no" | "0" => Ok(false),
        _ => Err(format!("expected true or false, got `{v}`")),
    }
}

/// Applies one key. Returns the canonical key name for diagnostics.
fn apply(
    cfg: &mut ExperimentConfig,
    section: &str,
    key: &str,
    v: &str,
) -> std::result::Result<&'static str, String> {
    let n = &mut cfg.network;
    let r = &mut cfg.radio;
    let e = &mut cfg.energy;
    let c = &mut cfg.control;
    let s = &mut cfg.sim;
    let name = match (section, key) {
        ("network", "nodes") => {
            n.nodes = parse_usize(v)?;
            "nodes"
        }
        ("network", "subspace_dim") => {
            n.subspace_dim = parse_usize(v)?;
            "subspace_dim"
        }
        ("network", "radius_m") => {
            n.radius_m = parse_f64(v)?;
            "radius_m"
        }
        ("network", "kernel_variance") => {
            n.kernel_variance = parse_f64(v)?;
            "kernel_variance"
        }
        ("network", "worst_bmse_db") => {
            n.worst_bmse_db = parse_f64(v)?;
            "worst_bmse_db"
        }
        ("network", "noise_var") => {
            n.noise_var = parse_f64(v)?;
            "noise_var"
        }
        ("network", "amplitude") => {
            n.amplitude = parse_f64(v)?;
            "amplitude"
        }
        ("radio", "noise_psd") => {
            r.params.noise_psd = parse_f64(v)?;
            "noise_psd"
        }
        ("radio", "noise_figure") => {
            r.params.noise_figure = parse_f64(v)?;
            "noise_figure"
        }
        ("radio", "system_const") => {
            r.params.system_const = parse_f64(v)?;
            "system_const"
        }
        ("radio", "slot_s") => {
            r.params.slot_s = parse_f64(v)?;
            "slot_s"
        }
        ("radio", "ber") => {
            r.params.ber = parse_f64(v)?;
            "ber"
        }
        ("radio", "carrier_hz") => {
            r.params.carrier_hz = parse_f64(v)?;
            "carrier_hz"
        }
        ("radio", "max_bits") => {
            r.params.max_bits = v
                .parse::<u32>()
                .map_err(|_| format!("expected a nonnegative integer, got `{v}`"))?;
            "max_bits"
        }
        ("radio", "fading") => {
            r.params.fading = parse_bool(v)?;
            "fading"
        }
        ("radio", "percentile") => {
            r.percentile = parse_f64(v)?;
            "percentile"
        }
        ("radio", "overhead_frac") => {
            r.overhead_frac = parse_f64(v)?;
            "overhead_frac"
        }
        ("energy", "arrivals") => {
            e.arrivals = match v {
                "uniform" => ArrivalMode::Uniform,
                "on_off" => ArrivalMode::OnOff,
                _ => return Err(format!("expected uniform or on_off, got `{v}`")),
            };
            "arrivals"
        }
        ("energy", "r_max") => {
            e.r_max = parse_f64(v)?;
            "r_max"
        }
        ("energy", "window_s") => {
            e.window_s = parse_f64(v)?;
            "window_s"
        }
        ("energy", "init_battery_frac") => {
            e.init_battery_frac = parse_f64(v)?;
            "init_battery_frac"
        }
        ("control", "algorithm") => {
            c.algorithm = match v {
                "alg1" => Algorithm::Alg1,
                "alg2" => Algorithm::Alg2,
                "alg3" => Algorithm::Alg3,
                _ => return Err(format!("expected alg1, alg2 or alg3, got `{v}`")),
            };
            "algorithm"
        }
        ("control", "v") => {
            c.v = parse_f64(v)?;
            "v"
        }
        ("control", "theta") => {
            c.theta = match v {
                "theorem" => ThetaMode::Theorem,
                "theorem_closed_form" => ThetaMode::TheoremClosedForm,
                _ => ThetaMode::Free(
                    parse_f64(v).map_err(|m| format!("{m}, `theorem` or `theorem_closed_form`"))?,
                ),
            };
            "theta"
        }
        ("control", "vartheta") => {
            c.vartheta = parse_f64(v)?;
            "vartheta"
        }
        ("control", "gamma") => {
            c.gamma = parse_f64(v)?;
            "gamma"
        }
        ("control", "mu") => {
            c.mu = parse_f64(v)?;
            "mu"
        }
        ("control", "z0") => {
            c.z0 = if v == "random" {
                None
            } else {
                Some(parse_f64(v).map_err(|m| format!("{m} or `random`"))?)
            };
            "z0"
        }
        ("control", "descent_max_iters") => {
            c.descent.max_iters = parse_usize(v)?;
            "descent_max_iters"
        }
        ("control", "descent_step") => {
            c.descent.step = parse_f64(v)?;
            "descent_step"
        }
        ("control", "descent_backtrack") => {
            c.descent.backtrack = parse_f64(v)?;
            "descent_backtrack"
        }
        ("control", "descent_tolerance") => {
            c.descent.tolerance = parse_f64(v)?;
            "descent_tolerance"
        }
        ("sim", "horizon") => {
            s.horizon = parse_usize(v)?;
            "horizon"
        }
        ("sim", "burn_in") => {
            s.burn_in = if v == "auto" {
                None
            } else {
                Some(parse_usize(v).map_err(|m| format!("{m} or `auto`"))?)
            };
            "burn_in"
        }
        ("sim", "trials") => {
            s.trials = parse_usize(v)?;
            "trials"
        }
        ("sim", "seed") => {
            s.seed = v
                .parse::<u64>()
                .map_err(|_| format!("expected a nonnegative integer, got `{v}`"))?;
            "seed"
        }
        ("sim", "precision") => {
            s.precision = match v {
                "f64" => Precision::F64,
                "f32" => Precision::F32,
                _ => return Err(format!("expected f32 or f64, got `{v}`")),
            };
            "precision"
        }
        _ => return Err(format!("unknown key in section [{section}]")),
    };
    Ok(name)
}

const SECTIONS: [&str; 5] = ["network", "radio", "energy", "control", "sim"];

/// Parses configuration text. Missing keys keep their defaults; the result
/// is validated.
pub fn parse_config_str(text: &str) -> Result<ExperimentConfig> {
    let mut cfg = ExperimentConfig::default();
    let mut lines: HashMap<&'static str, usize> = HashMap::new();
    let mut section: Option<String> = None;
    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        if let Some(rest) = line.strip_prefix('[') {
            let name = rest.strip_suffix(']').map(str::trim).ok_or_else(|| Error::Config {
                key: line.to_string(),
                line: line_no,
                message: "malformed section header".into(),
            })?;
            if !SECTIONS.contains(&name) {
                return Err(Error::Config {
                    key: name.to_string(),
                    line: line_no,
                    message: format!("unknown section; expected one of {}", SECTIONS.join(", ")),
                });
            }
            section = Some(name.to_string());
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| Error::Config {
            key: line.to_string(),
            line: line_no,
            message: "expected `key = value`".into(),
        })?;
        let key = key.trim();
        let value = value.trim();
        let sec = section.as_deref().ok_or_else(|| Error::Config {
            key: key.to_string(),
            line: line_no,
            message: "key appears before any section header".into(),
        })?;
        let name = apply(&mut cfg, sec, key, value).map_err(|message| Error::Config {
            key: key.to_string(),
            line: line_no,
            message,
        })?;
        if lines.insert(name, line_no).is_some() {
            return Err(Error::Config {
                key: key.to_string(),
                line: line_no,
                message: "duplicate key".into(),
            });
        }
    }
    cfg.validate().map_err(|e| Error::Config {
        key: e.key.to_string(),
        line: lines.get(e.key).copied().unwrap_or(0),
        message: e.message,
    })?;
    Ok(cfg)
}

pub fn parse_config(path: impl AsRef<Path>) -> Result<ExperimentConfig> {
    let text = std::fs::read_to_string(path)?;
    parse_config_str(&text)
}
