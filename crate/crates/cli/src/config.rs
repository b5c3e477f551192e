//! Flat `key = value` run configuration shared by every subcommand.

use std::fmt::Write as _;
use std::path::PathBuf;

use adi_core::ensemble::EnsembleHyper;
use adi_core::filters::FilterKind;
use adi_core::gaussian_mi::{Centering, KernelOptions, Ridge, WindowMode};
use adi_core::pipeline::PairConfig;
use adi_core::simulate::PiecewiseSpec;

use crate::CliError;

/// Every tunable, with defaults. `None` on the optional fields means
/// "derive from the others" and is resolved before the sidecar is written.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub out: PathBuf,
    pub seed: u64,
    pub bandwidth: f64,
    pub mode: WindowMode,
    pub centering: Centering,
    pub support_cutoff: f64,
    pub ridge: Ridge,
    pub window: usize,
    pub stride: usize,
    pub min_segment: Option<usize>,
    pub markov_order: usize,
    pub gate_radius: f64,
    pub side_cond_max: usize,
    pub min_gated: usize,
    pub tau: usize,
    pub beta: f64,
    pub gamma: f64,
    pub base_filters: Vec<FilterKind>,
    pub max_experts: Option<usize>,
    pub max_lag: usize,
    pub min_overlap: usize,
    pub scene: Option<String>,
    pub trials: usize,
    pub horizon: usize,
    pub levels: Vec<f64>,
    pub sigma: f64,
    pub changepoints: Option<Vec<usize>>,
}

impl Default for RunConfig {
    fn default() -> Self {
        let pair = PairConfig::default();
        RunConfig {
            out: PathBuf::from("out"),
            seed: 0,
            bandwidth: pair.kernel.bandwidth,
            mode: pair.kernel.mode,
            centering: pair.kernel.centering,
            support_cutoff: pair.kernel.support_cutoff,
            ridge: pair.ridge,
            window: 15,
            stride: 10,
            min_segment: None,
            markov_order: pair.markov_order,
            gate_radius: pair.gate_radius,
            side_cond_max: pair.side_cond_max,
            min_gated: pair.min_overlap,
            tau: pair.ensemble.tau,
            beta: pair.ensemble.beta,
            gamma: pair.ensemble.gamma,
            base_filters: pair.ensemble.base_set,
            max_experts: pair.ensemble.max_experts,
            max_lag: 50,
            min_overlap: 20,
            scene: None,
            trials: 100,
            horizon: 1000,
            levels: vec![0.2, 1.0, 0.5],
            sigma: 0.1,
            changepoints: None,
        }
    }
}

/// Accepted keys, in sidecar order.
pub const KEYS: &[&str] = &[
    "out",
    "seed",
    "bandwidth",
    "mode",
    "centering",
    "support_cutoff",
    "ridge",
    "ridge_value",
    "ridge_floor",
    "window",
    "stride",
    "min_segment",
    "markov_order",
    "gate_radius",
    "side_cond_max",
    "min_gated",
    "tau",
    "beta",
    "gamma",
    "base_filters",
    "max_experts",
    "max_lag",
    "min_overlap",
    "scene",
    "trials",
    "horizon",
    "levels",
    "sigma",
    "changepoints",
];

fn num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T, CliError>
where
    T::Err: std::fmt::Display,
{
    value
        .parse()
        .map_err(|e| CliError::Usage(format!("{key}: cannot parse {value:?}: {e}")))
}

fn list<T: std::str::FromStr>(key: &str, value: &str) -> Result<Vec<T>, CliError>
where
    T::Err: std::fmt::Display,
{
    value.split(',').map(|v| num(key, v.trim())).collect()
}

fn join<T: ToString>(xs: &[T]) -> String {
    xs.iter()
        .map(ToString::to_string)
        .collect::<Vec<_>>()
        .join(",")
}

impl RunConfig {
    /// Parses a config file. Blank lines and `#` comments are skipped;
    /// unknown and repeated keys are rejected.
    pub fn apply_file(&mut self, text: &str, origin: &str) -> Result<(), CliError> {
        let mut seen = Vec::new();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                CliError::Usage(format!("{origin}:{}: expected key = value", n + 1))
            })?;
            let key = key.trim();
            if seen.contains(&key) {
                return Err(CliError::Usage(format!(
                    "{origin}:{}: duplicate key {key}",
                    n + 1
                )));
            }
            seen.push(key);
            self.set(key, value.trim())
                .map_err(|e| CliError::Usage(format!("{origin}:{}: {e}", n + 1)))?;
        }
        Ok(())
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<(), CliError> {
        match key {
            "out" => self.out = PathBuf::from(value),
            "seed" => self.seed = num(key, value)?,
            "bandwidth" => self.bandwidth = num(key, value)?,
            "mode" => {
                self.mode = match value {
                    "offline" => WindowMode::Offline,
                    "causal" => WindowMode::Causal,
                    _ => {
                        return Err(CliError::Usage(format!(
                            "mode: expected offline or causal, got {value:?}"
                        )))
                    }
                }
            }
            "centering" => {
                self.centering = match value {
                    "per-sample" => Centering::PerSample,
                    "per-window" => Centering::PerWindow,
                    _ => {
                        return Err(CliError::Usage(format!(
                            "centering: expected per-sample or per-window, got {value:?}"
                        )))
                    }
                }
            }
            "support_cutoff" => self.support_cutoff = num(key, value)?,
            "ridge" => {
                self.ridge = match (value, self.ridge) {
                    ("trace", Ridge::TraceScaled { .. }) | ("fixed", Ridge::Fixed(_)) => self.ridge,
                    ("trace", Ridge::Fixed(v)) => Ridge::TraceScaled {
                        scale: v,
                        floor: 0.0,
                    },
                    ("fixed", Ridge::TraceScaled { scale, .. }) => Ridge::Fixed(scale),
                    _ => {
                        return Err(CliError::Usage(format!(
                            "ridge: expected trace or fixed, got {value:?}"
                        )))
                    }
                }
            }
            "ridge_value" => {
                let v = num(key, value)?;
                match &mut self.ridge {
                    Ridge::Fixed(r) => *r = v,
                    Ridge::TraceScaled { scale, .. } => *scale = v,
                }
            }
            "ridge_floor" => {
                let v = num(key, value)?;
                match &mut self.ridge {
                    Ridge::TraceScaled { floor, .. } => *floor = v,
                    Ridge::Fixed(_) => {
                        return Err(CliError::Usage(
                            "ridge_floor applies only to ridge = trace".into(),
                        ))
                    }
                }
            }
            "window" => self.window = num(key, value)?,
            "stride" => self.stride = num(key, value)?,
            "min_segment" => self.min_segment = auto(value).map(|v| num(key, v)).transpose()?,
            "markov_order" => self.markov_order = num(key, value)?,
            "gate_radius" => self.gate_radius = num(key, value)?,
            "side_cond_max" => self.side_cond_max = num(key, value)?,
            "min_gated" => self.min_gated = num(key, value)?,
            "tau" => self.tau = num(key, value)?,
            "beta" => self.beta = num(key, value)?,
            "gamma" => self.gamma = num(key, value)?,
            "base_filters" => self.base_filters = list(key, value)?,
            "max_experts" => self.max_experts = none(value).map(|v| num(key, v)).transpose()?,
            "max_lag" => self.max_lag = num(key, value)?,
            "min_overlap" => self.min_overlap = num(key, value)?,
            "scene" => self.scene = Some(value.to_string()),
            "trials" => self.trials = num(key, value)?,
            "horizon" => self.horizon = num(key, value)?,
            "levels" => self.levels = list(key, value)?,
            "sigma" => self.sigma = num(key, value)?,
            "changepoints" => self.changepoints = auto(value).map(|v| list(key, v)).transpose()?,
            _ => {
                return Err(CliError::Usage(format!(
                    "unknown configuration key {key:?}"
                )))
            }
        }
        Ok(())
    }

    /// Sidecar text; parsing it back with [`RunConfig::apply_file`] restores
    /// this configuration exactly.
    pub fn render(&self) -> String {
        let mut s = String::from("# resolved run configuration\n");
        for key in KEYS {
            let value = match *key {
                "out" => self.out.display().to_string(),
                "seed" => self.seed.to_string(),
                "bandwidth" => self.bandwidth.to_string(),
                "mode" => match self.mode {
                    WindowMode::Offline => "offline".into(),
                    WindowMode::Causal => "causal".into(),
                },
                "centering" => match self.centering {
                    Centering::PerSample => "per-sample".into(),
                    Centering::PerWindow => "per-window".into(),
                },
                "support_cutoff" => self.support_cutoff.to_string(),
                "ridge" => match self.ridge {
                    Ridge::Fixed(_) => "fixed".into(),
                    Ridge::TraceScaled { .. } => "trace".into(),
                },
                "ridge_value" => match self.ridge {
                    Ridge::Fixed(v) | Ridge::TraceScaled { scale: v, .. } => v.to_string(),
                },
                "ridge_floor" => match self.ridge {
                    Ridge::TraceScaled { floor, .. } => floor.to_string(),
                    Ridge::Fixed(_) => continue,
                },
                "window" => self.window.to_string(),
                "stride" => self.stride.to_string(),
                "min_segment" => self.min_segment().to_string(),
                "markov_order" => self.markov_order.to_string(),
                "gate_radius" => self.gate_radius.to_string(),
                "side_cond_max" => self.side_cond_max.to_string(),
                "min_gated" => self.min_gated.to_string(),
                "tau" => self.tau.to_string(),
                "beta" => self.beta.to_string(),
                "gamma" => self.gamma.to_string(),
                "base_filters" => join(&self.base_filters),
                "max_experts" => self.max_experts.map_or("none".into(), |m| m.to_string()),
                "max_lag" => self.max_lag.to_string(),
                "min_overlap" => self.min_overlap.to_string(),
                "scene" => match &self.scene {
                    Some(s) => s.clone(),
                    None => continue,
                },
                "trials" => self.trials.to_string(),
                "horizon" => self.horizon.to_string(),
                "levels" => join(&self.levels),
                "sigma" => self.sigma.to_string(),
                "changepoints" => match self.piecewise() {
                    Ok(spec) => join(&spec.changepoints),
                    Err(_) => "auto".into(),
                },
                _ => unreachable!("key list and renderer out of sync"),
            };
            let _ = writeln!(s, "{key} = {value}");
        }
        s
    }

    /// Defaults to `2 k + 1` samples.
    pub fn min_segment(&self) -> usize {
        self.min_segment.unwrap_or(2 * self.markov_order + 1)
    }

    pub fn ensemble(&self) -> EnsembleHyper {
        EnsembleHyper {
            tau: self.tau,
            beta: self.beta,
            gamma: self.gamma,
            base_set: self.base_filters.clone(),
            max_experts: self.max_experts,
        }
    }

    pub fn pair_config(&self) -> Result<PairConfig, CliError> {
        let cfg = PairConfig {
            markov_order: self.markov_order,
            gate_radius: self.gate_radius,
            side_cond_max: self.side_cond_max,
            kernel: KernelOptions {
                bandwidth: self.bandwidth,
                mode: self.mode,
                centering: self.centering,
                support_cutoff: self.support_cutoff,
            },
            ridge: self.ridge,
            ensemble: self.ensemble(),
            min_overlap: self.min_gated,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn piecewise(&self) -> Result<PiecewiseSpec, CliError> {
        let spec = match &self.changepoints {
            None => PiecewiseSpec::even(self.horizon, self.levels.clone(), self.sigma, self.seed)?,
            Some(cps) => PiecewiseSpec {
                horizon: self.horizon,
                changepoints: cps.clone(),
                levels: self.levels.clone(),
                noise_sd: vec![self.sigma; self.levels.len()],
                seed: self.seed,
            },
        };
        spec.validate()?;
        Ok(spec)
    }

    /// Checks the settings shared by all subcommands.
    pub fn validate_common(&self) -> Result<(), CliError> {
        if self.window == 0 || self.window.is_multiple_of(2) {
            return Err(CliError::Usage(format!(
                "window: must be a positive odd number, got {}",
                self.window
            )));
        }
        if self.stride == 0 {
            return Err(CliError::Usage("stride: must be at least 1".into()));
        }
        if self.min_overlap < 2 {
            return Err(CliError::Usage("min_overlap: must be at least 2".into()));
        }
        if self.trials == 0 {
            return Err(CliError::Usage("trials: must be at least 1".into()));
        }
        self.pair_config()?;
        Ok(())
    }
}

fn auto(value: &str) -> Option<&str> {
    (value != "auto").then_some(value)
}

fn none(value: &str) -> Option<&str> {
    (value != "none").then_some(value)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn render_round_trips() {
        let mut cfg = RunConfig::default();
        cfg.set("beta", "0.03").unwrap();
        cfg.set("base_filters", "exp(0.3),unif").unwrap();
        cfg.set("scene", "video7").unwrap();
        cfg.set("mode", "causal").unwrap();
        let mut back = RunConfig::default();
        back.apply_file(&cfg.render(), "sidecar").unwrap();
        assert_eq!(back.render(), cfg.render());
        assert_eq!(back.beta, 0.03);
        assert_eq!(back.changepoints, Some(vec![1, 334, 667]));
    }

    #[test]
    fn rejects_unknown_and_duplicate_keys() {
        let mut cfg = RunConfig::default();
        assert!(cfg.apply_file("bogus = 1", "f").is_err());
        assert!(cfg.apply_file("tau = 1\ntau = 2", "f").is_err());
        assert!(cfg.apply_file("tau", "f").is_err());
        assert!(cfg.apply_file("# comment\n\ntau = 4", "f").is_ok());
        assert_eq!(cfg.tau, 4);
    }

    #[test]
    fn every_key_is_settable() {
        let defaults = RunConfig::default().render();
        for line in defaults.lines().skip(1) {
            let (k, v) = line.split_once(" = ").unwrap();
            RunConfig::default().set(k, v).unwrap();
        }
        let mut cfg = RunConfig::default();
        cfg.set("ridge", "fixed").unwrap();
        cfg.set("ridge_value", "0.001").unwrap();
        assert_eq!(cfg.ridge, Ridge::Fixed(0.001));
        assert!(cfg.set("ridge_floor", "1").is_err());
    }
}
