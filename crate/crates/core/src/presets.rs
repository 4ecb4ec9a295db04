//! Experiment presets mirroring the figures of the evaluation.
//!
//! A preset is a list of series; each series sweeps one parameter over a
//! few values, and every point carries a complete [`ExperimentConfig`].
//! Presets named `*_vs_t*` and `fig4_onoff` are read as time traces, one
//! trace per point. Energies (`r_max`, `vartheta`, `v`) are in the
//! normalized unit of [`crate::sim`].

use crate::config::{Algorithm, ArrivalMode, ExperimentConfig};
use crate::error::{invalid, Result};

pub const PRESET_NAMES: [&str; 10] = [
    "fig1_bmse_vs_v",
    "fig2_active_vs_v",
    "fig3_battery_vs_v",
    "fig4_onoff",
    "fig5_energy_vs_v",
    "fig6_active_vs_v_g",
    "fig7_battery_vs_t",
    "fig8_bmse_vs_t_alg2",
    "fig9_bmse_vs_t_alg3",
    "fig10_active_vs_t_mu",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scale {
    /// 10 nodes, 3-dimensional subspace, short horizons, few trials.
    Desk,
    /// 50 nodes, 6-dimensional subspace and 50 trials. Slow.
    Paper,
}

impl std::str::FromStr for Scale {
    type Err = crate::Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "desk" => Ok(Scale::Desk),
            "paper" => Ok(Scale::Paper),
            other => Err(invalid(format!("unknown scale `{other}`, expected desk or paper"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepPoint {
    pub value: f64,
    pub config: ExperimentConfig,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Series {
    /// Directory-safe name, e.g. `r_max_3`.
    pub label: String,
    pub points: Vec<SweepPoint>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Preset {
    pub name: &'static str,
    /// Name of the swept parameter, used for the `sweep_value` column.
    pub sweep_key: &'static str,
    pub series: Vec<Series>,
}

impl Preset {
    pub fn points(&self) -> impl Iterator<Item = &SweepPoint> {
        self.series.iter().flat_map(|s| s.points.iter())
    }
}

/// Shared base configuration of a scale.
pub fn base_config(scale: Scale, seed: u64) -> ExperimentConfig {
    let mut c = ExperimentConfig::default();
    match scale {
        Scale::Desk => {
            c.network.nodes = 10;
            c.network.subspace_dim = 3;
            c.sim.horizon = 10_000;
            c.sim.trials = 10;
        }
        Scale::Paper => {
            c.network.nodes = 50;
            c.network.subspace_dim = 6;
            c.sim.horizon = 20_000;
            c.sim.trials = 50;
        }
    }
    c.energy.r_max = 3.0;
    c.sim.seed = seed;
    c
}

fn series(
    label: String,
    values: &[f64],
    base: &ExperimentConfig,
    set: impl Fn(&mut ExperimentConfig, f64),
) -> Series {
    let points = values
        .iter()
        .map(|&value| {
            let mut config = base.clone();
            set(&mut config, value);
            SweepPoint { value, config }
        })
        .collect();
    Series { label, points }
}

fn decades(lo: i32, hi: i32) -> Vec<f64> {
    (lo..=hi).map(|k| 10f64.powi(k)).collect()
}

fn alg1_vs_v(base: &ExperimentConfig, scale: Scale, r_values: &[f64]) -> Vec<Series> {
    let v = match scale {
        Scale::Desk => vec![1e2, 1e4, 1e6],
        Scale::Paper => decades(1, 6),
    };
    r_values
        .iter()
        .map(|&r| {
            let mut b = base.clone();
            b.energy.r_max = r;
            series(format!("r_max_{r}"), &v, &b, |c, x| c.control.v = x)
        })
        .collect()
}

fn energy_min_vs_v(base: &ExperimentConfig, scale: Scale) -> Vec<Series> {
    let v = match scale {
        Scale::Desk => vec![0.3, 1.0, 3.0, 10.0, 30.0],
        Scale::Paper => vec![0.1, 0.3, 1.0, 3.0, 10.0, 30.0, 100.0],
    };
    let mut out = Vec::new();
    for alg in [Algorithm::Alg2, Algorithm::Alg3] {
        for gamma in [0.04, 0.1] {
            let mut b = base.clone();
            b.control.algorithm = alg;
            b.control.gamma = gamma;
            b.control.mu = 100.0;
            out.push(series(format!("{}_gamma_{gamma}", alg.name()), &v, &b, |c, x| {
                c.control.v = x
            }));
        }
    }
    out
}

/// Looks up a preset by name. `seed` overrides the master seed of every
/// point; all points of a preset share it.
pub fn preset(name: &str, scale: Scale, seed: u64) -> Result<Preset> {
    let base = base_config(scale, seed);
    let paper = scale == Scale::Paper;
    let (sweep_key, series) = match name {
        "fig1_bmse_vs_v" | "fig2_active_vs_v" => {
            let r: &[f64] = if paper { &[3.0, 4.0, 6.0] } else { &[3.0, 6.0] };
            ("v", alg1_vs_v(&base, scale, r))
        }
        "fig3_battery_vs_v" => {
            let mut b = base.clone();
            b.energy.r_max = 2.5;
            let v = decades(2, 6);
            ("v", vec![series("r_max_2.5".into(), &v, &b, |c, x| c.control.v = x)])
        }
        "fig4_onoff" => {
            let mut b = base.clone();
            b.energy.arrivals = ArrivalMode::OnOff;
            b.energy.window_s = 1.0;
            b.energy.r_max = 5.0;
            b.sim.trials = if paper { 100 } else { 20 };
            ("v", vec![series("onoff".into(), &[1.0], &b, |c, x| c.control.v = x)])
        }
        "fig5_energy_vs_v" | "fig6_active_vs_v_g" => ("v", energy_min_vs_v(&base, scale)),
        "fig7_battery_vs_t" => {
            let mut b = base.clone();
            b.control.algorithm = Algorithm::Alg2;
            b.control.gamma = 0.08;
            b.control.mu = 10.0;
            b.control.v = 0.3;
            b.energy.init_battery_frac = 0.5;
            let th = [10.0, 20.0, 40.0];
            ("vartheta", vec![series("alg2".into(), &th, &b, |c, x| c.control.vartheta = x)])
        }
        "fig8_bmse_vs_t_alg2" => {
            let mut b = base.clone();
            b.control.algorithm = Algorithm::Alg2;
            b.control.mu = 10.0;
            b.control.v = 0.3;
            let g = [0.04, 0.06, 0.08];
            ("gamma", vec![series("alg2".into(), &g, &b, |c, x| c.control.gamma = x)])
        }
        "fig9_bmse_vs_t_alg3" => {
            let mut b = base.clone();
            b.control.algorithm = Algorithm::Alg3;
            b.control.mu = 10.0;
            b.control.v = 0.3;
            let g = [0.08, 0.1, 0.12];
            ("gamma", vec![series("alg3".into(), &g, &b, |c, x| c.control.gamma = x)])
        }
        "fig10_active_vs_t_mu" => {
            let mut b = base.clone();
            b.control.algorithm = Algorithm::Alg3;
            b.control.gamma = 0.1;
            b.control.v = 0.3;
            b.energy.init_battery_frac = 0.5;
            let mu = [1.0, 10.0, 100.0];
            ("mu", vec![series("alg3".into(), &mu, &b, |c, x| c.control.mu = x)])
        }
        other => {
            return Err(invalid(format!(
                "unknown preset `{other}`; valid presets: {}",
                PRESET_NAMES.join(", ")
            )))
        }
    };
    let name = PRESET_NAMES.iter().find(|&&n| n == name).copied().unwrap_or("");
    Ok(Preset {
        name,
        sweep_key,
        series,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_name_resolves_to_valid_configs() {
        for scale in [Scale::Desk, Scale::Paper] {
            for name in PRESET_NAMES {
                let p = preset(name, scale, 5).unwrap();
                assert_eq!(p.name, name);
                assert!(p.points().count() > 0);
                for pt in p.points() {
                    pt.config.validate().unwrap();
                    assert_eq!(pt.config.sim.seed, 5);
                }
            }
        }
    }

    #[test]
    fn unknown_name_lists_valid_ones() {
        let msg = preset("fig99", Scale::Desk, 1).unwrap_err().to_string();
        for name in PRESET_NAMES {
            assert!(msg.contains(name));
        }
    }

    #[test]
    fn desk_scale_shape() {
        let p = preset("fig1_bmse_vs_v", Scale::Desk, 1).unwrap();
        assert_eq!(p.series.len(), 2);
        let pt = &p.series[0].points[0].config;
        assert_eq!((pt.network.nodes, pt.network.subspace_dim), (10, 3));
        assert_eq!(pt.sim.trials, 10);
        assert_eq!(p.series[0].points.len(), 3);
    }

    #[test]
    fn scale_parses() {
        assert_eq!("desk".parse::<Scale>().unwrap(), Scale::Desk);
        assert_eq!("paper".parse::<Scale>().unwrap(), Scale::Paper);
        assert!("huge".parse::<Scale>().is_err());
    }
}
