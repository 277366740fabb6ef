//! Experiment configuration: one JSON file drives every subcommand.

use std::collections::BTreeMap;

use anyhow::{anyhow, bail, Context, Result};
use prwlab_core::{Coupling, Family, JointStepModel};
use serde::{Deserialize, Serialize};

/// Model block: family name, named positive parameters, optional coupling.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub family: String,
    #[serde(default)]
    pub params: BTreeMap<String, f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub coupling: Option<String>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub h: f64,
    #[serde(rename = "T")]
    pub t_max: f64,
}

impl Default for GridSpec {
    fn default() -> Self {
        GridSpec { h: 1e-2, t_max: 200.0 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GenerationsSpec {
    pub jmax: u32,
    /// Expression of the form `floor(t^p)`.
    pub j_schedule: String,
}

impl Default for GenerationsSpec {
    fn default() -> Self {
        GenerationsSpec { jmax: 5, j_schedule: "floor(t^0.55)".to_string() }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimulateSpec {
    pub t: f64,
    pub replicas: u32,
    pub master_seed: u64,
    pub max_nodes: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub height_horizon: Option<u32>,
}

impl Default for SimulateSpec {
    fn default() -> Self {
        SimulateSpec {
            t: 50.0,
            replicas: 100_000,
            master_seed: 0,
            max_nodes: 100_000_000,
            height_horizon: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Default, Serialize, Deserialize)]
pub struct VerifySpec {
    #[serde(default)]
    pub theorems: Vec<String>,
    #[serde(default = "default_checkpoints")]
    pub t_checkpoints: Vec<f64>,
}

fn default_checkpoints() -> Vec<f64> {
    vec![100.0, 150.0, 200.0]
}

/// The whole experiment file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub model: ModelSpec,
    #[serde(default)]
    pub grid: GridSpec,
    #[serde(default)]
    pub generations: GenerationsSpec,
    #[serde(default)]
    pub simulate: SimulateSpec,
    #[serde(default)]
    pub verify: VerifySpec,
    #[serde(default = "default_output_dir")]
    pub output_dir: String,
}

fn default_output_dir() -> String {
    "out".to_string()
}

/// Allowed verify labels, in output order.
pub const VERIFY_LABELS: [&str; 5] =
    ["elementary", "exp_correction", "second_order", "blackwell", "key_renewal"];

impl ExperimentConfig {
    pub fn to_model(&self) -> Result<JointStepModel> {
        let p = |name: &str| -> Result<f64> {
            self.model
                .params
                .get(name)
                .copied()
                .ok_or_else(|| anyhow!("model.params.{name}: required by family `{}`", self.model.family))
        };
        let family = match self.model.family.as_str() {
            "gem" => Family::Gem,
            "exp_exp" => Family::ExpExp { rate_xi: p("rate_xi")?, rate_eta: p("rate_eta")? },
            "det_det" => Family::DetDet { c_xi: p("c_xi")?, c_eta: p("c_eta")? },
            "exp_det" => Family::ExpDet { rate_xi: p("rate_xi")?, c_eta: p("c_eta")? },
            "pareto_det" => Family::ParetoDet {
                shape_r: p("shape_r")?,
                scale_b: p("scale_b")?,
                c_eta: p("c_eta")?,
            },
            "uniform_det" => Family::UniformDet {
                lo_xi: p("lo_xi")?,
                hi_xi: p("hi_xi")?,
                c_eta: p("c_eta")?,
            },
            other => bail!(
                "model.family: unknown family `{other}` (expected gem, exp_exp, det_det, \
                 exp_det, pareto_det or uniform_det)"
            ),
        };
        let coupling = match self.model.coupling.as_deref() {
            None => match family {
                Family::Gem => Coupling::GemCoupled,
                _ => Coupling::Independent,
            },
            Some("independent") => Coupling::Independent,
            Some("comonotone") => Coupling::Comonotone,
            Some("gem-coupled") => Coupling::GemCoupled,
            Some(other) => bail!("model.coupling: unknown coupling `{other}`"),
        };
        JointStepModel::new(family, coupling).map_err(|e| anyhow!("model: {e}"))
    }

    /// Exponent `p` of the `floor(t^p)` schedule.
    pub fn schedule_exponent(&self) -> Result<f64> {
        let expr = self.generations.j_schedule.trim();
        let inner = expr
            .strip_prefix("floor(t^")
            .and_then(|rest| rest.strip_suffix(')'))
            .ok_or_else(|| {
                anyhow!(
                    "generations.j_schedule: expected an expression of the form \
                     `floor(t^p)`, got `{expr}`"
                )
            })?;
        let p: f64 = inner
            .parse()
            .with_context(|| format!("generations.j_schedule: bad exponent `{inner}`"))?;
        Ok(p)
    }

    /// `j(t) = max(1, floor(t^p))`.
    pub fn schedule_j(&self, t: f64) -> Result<u32> {
        let p = self.schedule_exponent()?;
        Ok((t.powf(p).floor() as u32).max(1))
    }

    /// Full validation; errors name the offending key.
    pub fn validate(&self) -> Result<()> {
        if !(self.grid.h > 0.0) || !self.grid.h.is_finite() {
            bail!("grid.h: must be a positive real, got {}", self.grid.h);
        }
        if !(self.grid.t_max >= self.grid.h) {
            bail!("grid.T: must be at least grid.h, got {}", self.grid.t_max);
        }
        if self.generations.jmax == 0 {
            bail!("generations.jmax: must be at least 1");
        }
        let p = self.schedule_exponent()?;
        if !(p > 0.0 && p <= 2.0 / 3.0) {
            bail!(
                "generations.j_schedule: exponent must lie in (0, 2/3], got {p}; \
                 larger exponents leave every supported growth window"
            );
        }
        if p > 0.5 {
            log::warn!(
                "generations.j_schedule: exponent {p} is above 1/2; only the \
                 exponentially-corrected predictor is expected to track such schedules"
            );
        }
        if !(self.simulate.t >= 0.0) || !self.simulate.t.is_finite() {
            bail!("simulate.t: must be a nonnegative real, got {}", self.simulate.t);
        }
        if self.simulate.replicas == 0 {
            bail!("simulate.replicas: must be at least 1");
        }
        if self.simulate.max_nodes == 0 {
            bail!("simulate.max_nodes: must be at least 1");
        }
        if let Some(hh) = self.simulate.height_horizon {
            if hh < self.generations.jmax {
                bail!("simulate.height_horizon: must be >= generations.jmax");
            }
        }
        for (k, &v) in &self.model.params {
            if !v.is_finite() || v < 0.0 {
                bail!("model.params.{k}: must be a finite nonnegative real, got {v}");
            }
        }
        for name in &self.verify.theorems {
            if !VERIFY_LABELS.contains(&name.as_str()) {
                bail!(
                    "verify.theorems: unknown label `{name}` (expected one of {})",
                    VERIFY_LABELS.join(", ")
                );
            }
        }
        for &t in &self.verify.t_checkpoints {
            if !(t > 0.0) || t > self.grid.t_max {
                bail!("verify.t_checkpoints: {t} outside (0, grid.T]");
            }
        }
        if self.output_dir.is_empty() {
            bail!("output_dir: must not be empty");
        }
        let model = self.to_model()?;
        // lattice atoms must land on grid nodes
        model
            .validate_grid_alignment(self.grid.h)
            .map_err(|e| anyhow!("grid.h: {e}"))?;
        Ok(())
    }
}

/// Parses and validates an experiment file.
pub fn parse_config(text: &str) -> Result<ExperimentConfig> {
    let config: ExperimentConfig =
        serde_json::from_str(text).map_err(|e| anyhow!("parse error: {e}"))?;
    config.validate()?;
    Ok(config)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_config_fills_defaults() {
        let cfg = parse_config(r#"{"model": {"family": "gem"}}"#).unwrap();
        assert_eq!(cfg.grid.h, 1e-2);
        assert_eq!(cfg.grid.t_max, 200.0);
        assert_eq!(cfg.simulate.replicas, 100_000);
        assert_eq!(cfg.generations.jmax, 5);
        assert_eq!(cfg.schedule_j(100.0).unwrap(), 12);
        assert!(cfg.to_model().is_ok());
    }

    #[test]
    fn negative_grid_step_is_named_in_the_error() {
        let err = parse_config(r#"{"model": {"family": "gem"}, "grid": {"h": -0.1, "T": 10}}"#)
            .unwrap_err();
        assert!(err.to_string().contains("grid.h"), "{err}");
    }

    #[test]
    fn misaligned_lattice_grid_is_rejected() {
        let text = r#"{
            "model": {"family": "det_det", "params": {"c_xi": 1.0, "c_eta": 1.0}},
            "grid": {"h": 0.3, "T": 30}
        }"#;
        let err = parse_config(text).unwrap_err();
        assert!(err.to_string().contains("grid.h"), "{err}");
        let ok = text.replace("0.3", "0.25");
        assert!(parse_config(&ok).is_ok());
    }

    #[test]
    fn schedule_expression_is_parsed_and_bounded() {
        let mut cfg = parse_config(r#"{"model": {"family": "gem"}}"#).unwrap();
        cfg.generations.j_schedule = "floor(t^0.4)".into();
        assert_eq!(cfg.schedule_j(200.0).unwrap(), 8);
        cfg.generations.j_schedule = "floor(t^0.9)".into();
        assert!(cfg.validate().is_err());
        cfg.generations.j_schedule = "t^0.4".into();
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn config_round_trips_through_serialisation() {
        let text = r#"{
            "model": {"family": "exp_det", "params": {"rate_xi": 1.0, "c_eta": 0.5}},
            "grid": {"h": 0.005, "T": 120.0},
            "generations": {"jmax": 8, "j_schedule": "floor(t^0.55)"},
            "simulate": {"t": 20.0, "replicas": 500, "master_seed": 7, "max_nodes": 100000},
            "verify": {"theorems": ["elementary", "exp_correction"], "t_checkpoints": [50.0, 100.0]},
            "output_dir": "artifacts"
        }"#;
        let cfg = parse_config(text).unwrap();
        let round = parse_config(&serde_json::to_string(&cfg).unwrap()).unwrap();
        assert_eq!(cfg, round);
    }

    #[test]
    fn unknown_verify_labels_are_rejected() {
        let text = r#"{
            "model": {"family": "gem"},
            "verify": {"theorems": ["fancy"], "t_checkpoints": [100.0]}
        }"#;
        let err = parse_config(text).unwrap_err();
        assert!(err.to_string().contains("verify.theorems"), "{err}");
    }

    #[test]
    fn missing_family_parameters_are_named() {
        let err = parse_config(r#"{"model": {"family": "exp_exp", "params": {"rate_xi": 1.0}}}"#)
            .unwrap_err();
        assert!(err.to_string().contains("model.params.rate_eta"), "{err}");
    }
}
