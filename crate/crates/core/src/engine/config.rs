use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::demand::AssignmentMethod;
use crate::error::{Error, Result};
use crate::network::PartitionParams;

/// Traffic model used inside a region.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    #[serde(alias = "CTM")]
    Ctm,
    #[serde(alias = "LTM")]
    Ltm,
    #[serde(alias = "BATHTUB", alias = "Bathtub")]
    Bathtub,
}

impl ModelKind {
    pub fn name(self) -> &'static str {
        match self {
            ModelKind::Ctm => "ctm",
            ModelKind::Ltm => "ltm",
            ModelKind::Bathtub => "bathtub",
        }
    }

    pub fn is_link_model(self) -> bool {
        self != ModelKind::Bathtub
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AssignmentKind {
    #[serde(alias = "AON")]
    Aon,
    #[serde(alias = "INCREMENTAL")]
    Incremental,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AssignmentConfig {
    #[serde(rename = "type")]
    pub kind: AssignmentKind,
    pub n_slices: u32,
    /// Analysis period for BPR capacities; defaults to the horizon.
    pub period_hours: Option<f64>,
}

impl Default for AssignmentConfig {
    fn default() -> Self {
        AssignmentConfig {
            kind: AssignmentKind::Aon,
            n_slices: 4,
            period_hours: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelOverride {
    /// Region label as in `regions.csv`.
    pub region: String,
    pub model: ModelKind,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelMap {
    pub default: ModelKind,
    pub overrides: Vec<ModelOverride>,
}

impl Default for ModelMap {
    fn default() -> Self {
        ModelMap {
            default: ModelKind::Bathtub,
            overrides: Vec::new(),
        }
    }
}

impl ModelMap {
    pub fn uniform(model: ModelKind) -> Self {
        ModelMap {
            default: model,
            overrides: Vec::new(),
        }
    }

    pub fn with(mut self, region: impl Into<String>, model: ModelKind) -> Self {
        self.overrides.push(ModelOverride {
            region: region.into(),
            model,
        });
        self
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputConfig {
    pub trajectories: bool,
    pub link_volumes: bool,
    pub region_accumulation: bool,
    pub gridlock_report: bool,
    pub geojson: bool,
    pub volume_stride_s: f64,
    pub trajectory_stride_s: f64,
    pub accumulation_stride_s: f64,
    /// Width of the time bins in `network.geojson`.
    pub geojson_bin_s: f64,
    /// A jammed cycle must stand still this long to count as gridlock.
    pub gridlock_window_s: f64,
}

impl Default for OutputConfig {
    fn default() -> Self {
        OutputConfig {
            trajectories: false,
            link_volumes: true,
            region_accumulation: true,
            gridlock_report: true,
            geojson: false,
            volume_stride_s: 60.0,
            trajectory_stride_s: 60.0,
            accumulation_stride_s: 60.0,
            geojson_bin_s: 900.0,
            gridlock_window_s: 300.0,
        }
    }
}

impl OutputConfig {
    /// Everything off; the gridlock detector still runs.
    pub fn none() -> Self {
        OutputConfig {
            trajectories: false,
            link_volumes: false,
            region_accumulation: false,
            gridlock_report: false,
            geojson: false,
            ..OutputConfig::default()
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PartitionConfig {
    pub min_region_size: usize,
    pub resolution: f64,
}

impl Default for PartitionConfig {
    fn default() -> Self {
        PartitionConfig {
            min_region_size: 100,
            resolution: 1.0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Coordinates {
    /// Planar meters.
    Projected,
    /// Longitude and latitude in degrees.
    Lonlat,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimConfig {
    pub dt_s: f64,
    pub horizon_s: f64,
    pub seed: u64,
    pub demand_scale: f64,
    pub coordinates: Coordinates,
    pub assignment: AssignmentConfig,
    pub model_map: ModelMap,
    pub outputs: OutputConfig,
    pub partition: PartitionConfig,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            dt_s: 1.0,
            horizon_s: 86_400.0,
            seed: 0,
            demand_scale: 1.0,
            coordinates: Coordinates::Projected,
            assignment: AssignmentConfig::default(),
            model_map: ModelMap::default(),
            outputs: OutputConfig::default(),
            partition: PartitionConfig::default(),
        }
    }
}

fn whole_steps(value: f64, dt: f64) -> Option<u64> {
    let n = value / dt;
    (n >= 1.0 - 1e-9 && (n - n.round()).abs() <= 1e-9 * n.max(1.0)).then(|| n.round() as u64)
}

impl SimConfig {
    /// Reads JSON (`.json`) or TOML (anything else).
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let config: SimConfig = if path.extension().is_some_and(|e| e.eq_ignore_ascii_case("json")) {
            serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?
        } else {
            toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?
        };
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if !(self.dt_s.is_finite() && self.dt_s > 0.0) {
            return bad(format!("dt_s must be positive, got {}", self.dt_s));
        }
        if whole_steps(self.horizon_s, self.dt_s).is_none() {
            return bad(format!(
                "horizon_s {} is not a positive multiple of dt_s {}",
                self.horizon_s, self.dt_s
            ));
        }
        if !(self.demand_scale.is_finite() && self.demand_scale > 0.0) {
            return bad(format!("demand_scale must be positive, got {}", self.demand_scale));
        }
        if self.assignment.n_slices == 0 {
            return bad("assignment.n_slices must be at least 1".into());
        }
        if let Some(h) = self.assignment.period_hours {
            if !(h.is_finite() && h > 0.0) {
                return bad(format!("assignment.period_hours must be positive, got {h}"));
            }
        }
        let o = &self.outputs;
        for (name, v) in [
            ("volume_stride_s", o.volume_stride_s),
            ("trajectory_stride_s", o.trajectory_stride_s),
            ("accumulation_stride_s", o.accumulation_stride_s),
            ("geojson_bin_s", o.geojson_bin_s),
            ("gridlock_window_s", o.gridlock_window_s),
        ] {
            if whole_steps(v, self.dt_s).is_none() {
                return bad(format!("outputs.{name} {v} is not a positive multiple of dt_s"));
            }
        }
        if self.partition.min_region_size == 0 || !(self.partition.resolution > 0.0) {
            return bad("partition needs min_region_size >= 1 and resolution > 0".into());
        }
        Ok(())
    }

    pub fn steps(&self) -> u64 {
        whole_steps(self.horizon_s, self.dt_s).unwrap_or(0)
    }

    /// Steps in `seconds`, at least one.
    pub fn steps_in(&self, seconds: f64) -> u64 {
        whole_steps(seconds, self.dt_s).unwrap_or(1).max(1)
    }

    pub fn assignment_method(&self) -> AssignmentMethod {
        match self.assignment.kind {
            AssignmentKind::Aon => AssignmentMethod::Aon,
            AssignmentKind::Incremental => AssignmentMethod::Incremental {
                n_slices: self.assignment.n_slices,
            },
        }
    }

    pub fn period_hours(&self) -> f64 {
        self.assignment.period_hours.unwrap_or(self.horizon_s / 3600.0)
    }

    pub fn partition_params(&self) -> PartitionParams {
        PartitionParams {
            min_region_size: self.partition.min_region_size,
            resolution: self.partition.resolution,
            seed: self.seed,
            ..PartitionParams::default()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn toml_and_json_agree() {
        let dir = tempfile::tempdir().unwrap();
        let t = dir.path().join("c.toml");
        std::fs::write(
            &t,
            r#"
dt_s = 2
horizon_s = 3600
seed = 9
demand_scale = 2.0

[assignment]
type = "incremental"
n_slices = 3

[model_map]
default = "bathtub"
overrides = [{ region = "R1", model = "ctm" }, { region = "R2", model = "LTM" }]

[outputs]
trajectories = true
volume_stride_s = 10
"#,
        )
        .unwrap();
        let j = dir.path().join("c.json");
        std::fs::write(
            &j,
            r#"{"dt_s": 2, "horizon_s": 3600, "seed": 9, "demand_scale": 2.0,
                "assignment": {"type": "incremental", "n_slices": 3},
                "model_map": {"default": "bathtub", "overrides": [{"region": "R1", "model": "ctm"}, {"region": "R2", "model": "ltm"}]},
                "outputs": {"trajectories": true, "volume_stride_s": 10}}"#,
        )
        .unwrap();
        let a = SimConfig::load(&t).unwrap();
        let b = SimConfig::load(&j).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.steps(), 1800);
        assert_eq!(a.assignment_method(), AssignmentMethod::Incremental { n_slices: 3 });
        assert_eq!(a.model_map.overrides[1].model, ModelKind::Ltm);
        assert!(a.outputs.link_volumes);
    }

    #[test]
    fn rejects_bad_values() {
        let mut c = SimConfig::default();
        c.horizon_s = 10.5;
        assert!(c.validate().is_err());
        let mut c = SimConfig::default();
        c.dt_s = 0.0;
        assert!(c.validate().is_err());
        let mut c = SimConfig::default();
        c.outputs.volume_stride_s = 1.5;
        c.dt_s = 1.0;
        assert!(c.validate().is_err());
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.toml");
        std::fs::write(&p, "dt_s = 1\nbogus = 3\n").unwrap();
        assert_eq!(SimConfig::load(&p).unwrap_err().exit_code(), 1);
    }
}
