//! Run configuration: experiment selection, seed, output location, and the
//! nested override map that retunes individual experiment parameters.
//!
//! Resolution order is fixed: built-in defaults, then the JSON config file,
//! then command-line flags, then `--set key=value` overrides. Unknown keys are
//! rejected at every level, and the fully-resolved parameter set is echoed
//! into the output directory so a run can always be reproduced from its own
//! artifact.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::HarnessError;

/// The experiments the runner knows how to execute.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentId {
    Portfolio,
    Kinematics,
    Timeseries,
    RandomSuite,
    Custom,
}

impl ExperimentId {
    pub fn name(self) -> &'static str {
        match self {
            ExperimentId::Portfolio => "portfolio",
            ExperimentId::Kinematics => "kinematics",
            ExperimentId::Timeseries => "timeseries",
            ExperimentId::RandomSuite => "random-suite",
            ExperimentId::Custom => "custom",
        }
    }
}

impl fmt::Display for ExperimentId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ExperimentId {
    type Err = HarnessError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "portfolio" => Ok(ExperimentId::Portfolio),
            "kinematics" => Ok(ExperimentId::Kinematics),
            "timeseries" => Ok(ExperimentId::Timeseries),
            "random-suite" | "suite" => Ok(ExperimentId::RandomSuite),
            "custom" => Ok(ExperimentId::Custom),
            other => Err(HarnessError::Config(format!(
                "unknown experiment '{other}' (expected portfolio, kinematics, timeseries, \
                 random-suite, or custom)"
            ))),
        }
    }
}

/// A fully-resolved run request.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: ExperimentId,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
    /// Nested key-value map mirroring the chosen experiment's parameter
    /// struct; applied on top of the built-in defaults.
    #[serde(default)]
    pub overrides: Map<String, Value>,
}

impl ExperimentConfig {
    pub fn new(experiment: ExperimentId) -> Self {
        Self { experiment, seed: 0, output_dir: None, overrides: Map::new() }
    }

    /// Output directory for this run, defaulting to
    /// `runs/<experiment>/seed-<seed>` under the working directory.
    pub fn resolved_output_dir(&self) -> PathBuf {
        self.output_dir.clone().unwrap_or_else(|| {
            PathBuf::from("runs").join(self.experiment.name()).join(format!("seed-{}", self.seed))
        })
    }

    /// Combines a config file, command-line flags, and `--set` pairs into one
    /// resolved request. The subcommand names the experiment; a config file
    /// naming a different one is rejected rather than silently overridden.
    pub fn resolve(
        experiment: ExperimentId,
        file: Option<&Path>,
        seed: Option<u64>,
        out: Option<PathBuf>,
        set_pairs: &[String],
    ) -> Result<Self, HarnessError> {
        let file_cfg = match file {
            Some(path) => {
                let text = std::fs::read_to_string(path).map_err(|e| {
                    HarnessError::Config(format!("cannot read config {}: {e}", path.display()))
                })?;
                let parsed: ConfigFile = serde_json::from_str(&text).map_err(|e| {
                    HarnessError::Config(format!("invalid config {}: {e}", path.display()))
                })?;
                parsed
            }
            None => ConfigFile::default(),
        };
        if let Some(named) = file_cfg.experiment {
            if named != experiment {
                return Err(HarnessError::Config(format!(
                    "config file names experiment '{named}' but the command line asked for \
                     '{experiment}'"
                )));
            }
        }

        let mut overrides = Value::Object(file_cfg.overrides.unwrap_or_default());
        for pair in set_pairs {
            let patch = parse_set_pair(pair)?;
            deep_merge(&mut overrides, &patch);
        }
        let Value::Object(overrides) = overrides else { unreachable!("merge preserves objects") };

        Ok(Self {
            experiment,
            seed: seed.or(file_cfg.seed).unwrap_or(0),
            output_dir: out.or(file_cfg.output_dir),
            overrides,
        })
    }

    /// Materializes the experiment's typed parameter struct: defaults patched
    /// by the override map, with unknown or ill-typed keys rejected.
    pub fn resolved_params<T>(&self) -> Result<T, HarnessError>
    where
        T: Serialize + DeserializeOwned + Default,
    {
        let mut value = serde_json::to_value(T::default())
            .expect("default parameters serialize to plain JSON");
        deep_merge(&mut value, &Value::Object(self.overrides.clone()));
        serde_json::from_value(value)
            .map_err(|e| HarnessError::Config(format!("invalid parameter override: {e}")))
    }
}

/// On-disk config schema: every field optional so a file can pin any subset.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct ConfigFile {
    experiment: Option<ExperimentId>,
    seed: Option<u64>,
    output_dir: Option<PathBuf>,
    overrides: Option<Map<String, Value>>,
}

/// Parses one `--set key=value` pair into a nested single-path object:
/// `vi.h0=0.05` becomes `{"vi": {"h0": 0.05}}`. The value is read as JSON
/// when it parses as JSON and kept as a string otherwise.
pub fn parse_set_pair(pair: &str) -> Result<Value, HarnessError> {
    let (path, raw_value) = pair.split_once('=').ok_or_else(|| {
        HarnessError::Config(format!("--set expects key=value, got '{pair}'"))
    })?;
    if path.is_empty() || path.split('.').any(str::is_empty) {
        return Err(HarnessError::Config(format!("--set has an empty key segment in '{pair}'")));
    }
    let leaf: Value = serde_json::from_str(raw_value)
        .unwrap_or_else(|_| Value::String(raw_value.to_string()));
    let mut value = leaf;
    for segment in path.split('.').rev() {
        let mut object = Map::new();
        object.insert(segment.to_string(), value);
        value = Value::Object(object);
    }
    Ok(value)
}

/// Merges `patch` into `base`: objects merge key-by-key recursively, and any
/// other value replaces the base outright.
pub fn deep_merge(base: &mut Value, patch: &Value) {
    match (base, patch) {
        (Value::Object(base_map), Value::Object(patch_map)) => {
            for (key, patch_value) in patch_map {
                match base_map.get_mut(key) {
                    Some(base_value) => deep_merge(base_value, patch_value),
                    None => {
                        base_map.insert(key.clone(), patch_value.clone());
                    }
                }
            }
        }
        (base_slot, patch_value) => *base_slot = patch_value.clone(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[derive(Debug, PartialEq, Serialize, Deserialize)]
    #[serde(deny_unknown_fields, default)]
    struct DemoParams {
        gain: f64,
        inner: DemoInner,
    }

    #[derive(Debug, PartialEq, Serialize, Deserialize)]
    #[serde(deny_unknown_fields, default)]
    struct DemoInner {
        steps: usize,
        label: String,
    }

    impl Default for DemoParams {
        fn default() -> Self {
            Self { gain: 1.5, inner: DemoInner::default() }
        }
    }

    impl Default for DemoInner {
        fn default() -> Self {
            Self { steps: 10, label: "base".into() }
        }
    }

    #[test]
    fn dotted_set_pairs_patch_nested_defaults() {
        let mut cfg = ExperimentConfig::new(ExperimentId::Custom);
        for pair in ["inner.steps=25", "inner.label=tuned", "gain=0.5"] {
            deep_merge_into(&mut cfg, pair);
        }
        let params: DemoParams = cfg.resolved_params().unwrap();
        assert_eq!(
            params,
            DemoParams { gain: 0.5, inner: DemoInner { steps: 25, label: "tuned".into() } }
        );
    }

    fn deep_merge_into(cfg: &mut ExperimentConfig, pair: &str) {
        let patch = parse_set_pair(pair).unwrap();
        let mut base = Value::Object(std::mem::take(&mut cfg.overrides));
        deep_merge(&mut base, &patch);
        let Value::Object(map) = base else { unreachable!() };
        cfg.overrides = map;
    }

    #[test]
    fn unknown_keys_are_rejected_with_the_offending_name() {
        let mut cfg = ExperimentConfig::new(ExperimentId::Custom);
        deep_merge_into(&mut cfg, "gian=2.0");
        let err = cfg.resolved_params::<DemoParams>().unwrap_err();
        assert!(err.to_string().contains("gian"), "error should name the bad key: {err}");
    }

    #[test]
    fn values_parse_as_json_and_fall_back_to_strings() {
        assert_eq!(parse_set_pair("a=2.5").unwrap(), serde_json::json!({"a": 2.5}));
        assert_eq!(parse_set_pair("a=true").unwrap(), serde_json::json!({"a": true}));
        assert_eq!(parse_set_pair("a=[1,2]").unwrap(), serde_json::json!({"a": [1, 2]}));
        assert_eq!(parse_set_pair("a=hello").unwrap(), serde_json::json!({"a": "hello"}));
        assert!(parse_set_pair("no-equals").is_err());
        assert!(parse_set_pair(".=1").is_err());
    }

    #[test]
    fn config_resolution_respects_precedence_and_experiment_agreement() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cfg.json");
        std::fs::write(
            &path,
            r#"{"experiment": "custom", "seed": 7, "overrides": {"gain": 2.0, "inner": {"steps": 3}}}"#,
        )
        .unwrap();

        let cfg = ExperimentConfig::resolve(
            ExperimentId::Custom,
            Some(&path),
            Some(9),
            None,
            &["inner.steps=4".into()],
        )
        .unwrap();
        assert_eq!(cfg.seed, 9, "command-line seed outranks the file");
        let params: DemoParams = cfg.resolved_params().unwrap();
        assert_eq!(params.gain, 2.0, "file override survives");
        assert_eq!(params.inner.steps, 4, "--set outranks the file");

        let err = ExperimentConfig::resolve(ExperimentId::Portfolio, Some(&path), None, None, &[])
            .unwrap_err();
        assert!(err.to_string().contains("custom"));
    }
}
