//! Scenario names and resolution of defaults, config file, `--set` overrides
//! and flags into one parameter document.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde_json::{Map, Value};

use crate::error::{CliError, CliResult};

/// Environment variable naming the default output root.
pub const OUTPUT_ROOT_VAR: &str = "SIMPLEX_STDP_OUT";

/// Output root used when neither `--out` nor the environment variable is set.
pub const DEFAULT_OUTPUT_ROOT: &str = "simplex-stdp-out";

const RESERVED_KEYS: [&str; 5] = ["scenario", "seed", "out", "threads", "assert"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ScenarioKind {
    Fig2Trajectories,
    Fig2Ensemble,
    Fig3Algorithm1,
    CorrelatedFigure,
    Priming,
    Thm22Verify,
    Thm23Verify,
    ThmCorrVerify,
    Alg2Verify,
    SpikingValidate,
    MirrorCompare,
    LandscapeGrid,
}

impl ScenarioKind {
    pub const ALL: [ScenarioKind; 12] = [
        ScenarioKind::Fig2Trajectories,
        ScenarioKind::Fig2Ensemble,
        ScenarioKind::Fig3Algorithm1,
        ScenarioKind::CorrelatedFigure,
        ScenarioKind::Priming,
        ScenarioKind::Thm22Verify,
        ScenarioKind::Thm23Verify,
        ScenarioKind::ThmCorrVerify,
        ScenarioKind::Alg2Verify,
        ScenarioKind::SpikingValidate,
        ScenarioKind::MirrorCompare,
        ScenarioKind::LandscapeGrid,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ScenarioKind::Fig2Trajectories => "fig2-trajectories",
            ScenarioKind::Fig2Ensemble => "fig2-ensemble",
            ScenarioKind::Fig3Algorithm1 => "fig3-algorithm1",
            ScenarioKind::CorrelatedFigure => "correlated-figure",
            ScenarioKind::Priming => "priming",
            ScenarioKind::Thm22Verify => "thm22-verify",
            ScenarioKind::Thm23Verify => "thm23-verify",
            ScenarioKind::ThmCorrVerify => "thm-corr-verify",
            ScenarioKind::Alg2Verify => "alg2-verify",
            ScenarioKind::SpikingValidate => "spiking-validate",
            ScenarioKind::MirrorCompare => "mirror-compare",
            ScenarioKind::LandscapeGrid => "landscape-grid",
        }
    }
}

impl fmt::Display for ScenarioKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ScenarioKind {
    type Err = CliError;

    fn from_str(s: &str) -> CliResult<Self> {
        ScenarioKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| CliError::UnknownScenario(s.to_string()))
    }
}

/// What the user asked for, before resolution.
#[derive(Debug, Clone, Default)]
pub struct Invocation {
    pub scenario: String,
    pub config_file: Option<PathBuf>,
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub threads: Option<usize>,
    pub sets: Vec<String>,
    pub assert: bool,
}

/// A fully resolved run. `params` still has to pass the scenario's schema.
#[derive(Debug, Clone, PartialEq)]
pub struct ResolvedRun {
    pub scenario: ScenarioKind,
    pub seed: u64,
    pub out: PathBuf,
    pub threads: Option<usize>,
    pub assert: bool,
    pub params: Value,
}

#[derive(Debug, Default)]
struct Reserved {
    seed: Option<u64>,
    out: Option<PathBuf>,
    threads: Option<usize>,
    assert: Option<bool>,
}

impl Reserved {
    fn take(&mut self, scenario: ScenarioKind, key: &str, value: Value) -> CliResult<()> {
        let bad = |what: &str| CliError::config(format!("`{key}` must be {what}, got {value}"));
        match key {
            "scenario" => {
                let name = value.as_str().ok_or_else(|| bad("a string"))?;
                if name != scenario.name() {
                    return Err(CliError::config(format!(
                        "config is for scenario `{name}` but `{scenario}` was requested"
                    )));
                }
            }
            "seed" => self.seed = Some(value.as_u64().ok_or_else(|| bad("a nonnegative integer"))?),
            "out" => self.out = Some(PathBuf::from(value.as_str().ok_or_else(|| bad("a path string"))?)),
            "threads" => {
                let n = value.as_u64().filter(|&n| n > 0).ok_or_else(|| bad("a positive integer"))?;
                self.threads = Some(n as usize);
            }
            "assert" => self.assert = Some(value.as_bool().ok_or_else(|| bad("a boolean"))?),
            _ => unreachable!("not a reserved key"),
        }
        Ok(())
    }
}

/// Merges defaults, the config file, `--set` pairs and flags, in that order.
pub fn resolve(invocation: &Invocation, defaults: Value, env_out: Option<&str>) -> CliResult<ResolvedRun> {
    let scenario: ScenarioKind = invocation.scenario.parse()?;
    let mut params = defaults;
    let mut reserved = Reserved::default();
    if let Some(path) = &invocation.config_file {
        let file = read_config_file(path)?;
        for (key, value) in file {
            if RESERVED_KEYS.contains(&key.as_str()) {
                reserved.take(scenario, &key, value)?;
            } else {
                merge(&mut params, Value::Object(Map::from_iter([(key, value)])));
            }
        }
    }
    for pair in &invocation.sets {
        let (path, value) = parse_set(pair)?;
        if RESERVED_KEYS.contains(&path.as_str()) {
            reserved.take(scenario, &path, value)?;
        } else {
            set_path(&mut params, &path, value)?;
        }
    }
    if let Some(s) = invocation.seed {
        reserved.seed = Some(s);
    }
    if let Some(o) = &invocation.out {
        reserved.out = Some(o.clone());
    }
    if let Some(t) = invocation.threads {
        if t == 0 {
            return Err(CliError::config("--threads must be positive"));
        }
        reserved.threads = Some(t);
    }
    if invocation.assert {
        reserved.assert = Some(true);
    }
    let out = reserved.out.unwrap_or_else(|| {
        let root = env_out.filter(|s| !s.is_empty()).unwrap_or(DEFAULT_OUTPUT_ROOT);
        Path::new(root).join(scenario.name())
    });
    Ok(ResolvedRun {
        scenario,
        seed: reserved.seed.unwrap_or(0),
        out,
        threads: reserved.threads,
        assert: reserved.assert.unwrap_or(false),
        params,
    })
}

fn read_config_file(path: &Path) -> CliResult<Map<String, Value>> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::config(format!("cannot read {}: {e}", path.display())))?;
    match serde_json::from_str(&text) {
        Ok(Value::Object(map)) => Ok(map),
        Ok(_) => Err(CliError::config(format!("{} must hold a JSON object", path.display()))),
        Err(e) => Err(CliError::config(format!("{}: {e}", path.display()))),
    }
}

/// Objects merge key by key; anything else replaces the target.
pub fn merge(target: &mut Value, patch: Value) {
    match (target, patch) {
        (Value::Object(t), Value::Object(p)) => {
            for (k, v) in p {
                match t.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        t.insert(k, v);
                    }
                }
            }
        }
        (t, p) => *t = p,
    }
}

/// Splits `key=value`. The value is read as JSON when it parses, else as a string.
pub fn parse_set(pair: &str) -> CliResult<(String, Value)> {
    let (key, raw) = pair
        .split_once('=')
        .ok_or_else(|| CliError::config(format!("override `{pair}` is not of the form key=value")))?;
    if key.is_empty() || key.split('.').any(str::is_empty) {
        return Err(CliError::config(format!("override `{pair}` has an empty key")));
    }
    let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    Ok((key.to_string(), value))
}

/// Sets a dotted path such as `noise.q_bound` or `p0s.1`, creating objects on the way.
pub fn set_path(target: &mut Value, path: &str, value: Value) -> CliResult<()> {
    let mut slot = target;
    for segment in path.split('.') {
        slot = match slot {
            Value::Object(map) => map.entry(segment.to_string()).or_insert(Value::Null),
            Value::Array(items) => {
                let len = items.len();
                segment
                    .parse::<usize>()
                    .ok()
                    .and_then(|i| items.get_mut(i))
                    .ok_or_else(|| CliError::config(format!("`{path}`: no element `{segment}` in a list of {len}")))?
            }
            Value::Null => {
                *slot = Value::Object(Map::new());
                match slot {
                    Value::Object(map) => map.entry(segment.to_string()).or_insert(Value::Null),
                    _ => unreachable!(),
                }
            }
            _ => return Err(CliError::config(format!("`{path}`: `{segment}` is inside a scalar"))),
        };
    }
    *slot = value;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    fn invocation(sets: &[&str]) -> Invocation {
        Invocation {
            scenario: "landscape-grid".into(),
            sets: sets.iter().map(|s| s.to_string()).collect(),
            ..Default::default()
        }
    }

    #[test]
    fn names_round_trip() {
        for k in ScenarioKind::ALL {
            assert_eq!(k.name().parse::<ScenarioKind>().unwrap(), k);
        }
        assert_eq!("fig9".parse::<ScenarioKind>().unwrap_err().exit_code(), 64);
    }

    #[test]
    fn set_values_are_json_or_strings() {
        assert_eq!(parse_set("a.b=0.5").unwrap(), ("a.b".into(), json!(0.5)));
        assert_eq!(parse_set("x=[1,2]").unwrap().1, json!([1, 2]));
        assert_eq!(parse_set("loss=cubic-quartic").unwrap().1, json!("cubic-quartic"));
        assert!(parse_set("novalue").is_err());
        assert!(parse_set("a..b=1").is_err());
    }

    #[test]
    fn dotted_paths() {
        let mut v = json!({"noise": {"q_bound": 2.0}, "p0s": [[0.5, 0.5], [0.2, 0.8]]});
        set_path(&mut v, "noise.q_bound", json!(3.0)).unwrap();
        set_path(&mut v, "p0s.1", json!([0.1, 0.9])).unwrap();
        set_path(&mut v, "extra.deep", json!(1)).unwrap();
        assert_eq!(v["noise"]["q_bound"], json!(3.0));
        assert_eq!(v["p0s"][1], json!([0.1, 0.9]));
        assert_eq!(v["extra"]["deep"], json!(1));
        assert!(set_path(&mut v, "p0s.7", json!(0)).is_err());
        assert!(set_path(&mut v, "noise.q_bound.x", json!(0)).is_err());
    }

    #[test]
    fn merge_is_deep() {
        let mut v = json!({"a": {"b": 1, "c": 2}, "d": [1, 2]});
        merge(&mut v, json!({"a": {"c": 5}, "d": [3]}));
        assert_eq!(v, json!({"a": {"b": 1, "c": 5}, "d": [3]}));
    }

    #[test]
    fn flags_override_sets_and_env_root_applies() {
        let mut inv = invocation(&["seed=5", "grid_step=0.1"]);
        let run = resolve(&inv, json!({"grid_step": 0.005}), Some("/tmp/root")).unwrap();
        assert_eq!(run.seed, 5);
        assert_eq!(run.params["grid_step"], json!(0.1));
        assert_eq!(run.out, PathBuf::from("/tmp/root/landscape-grid"));
        inv.seed = Some(9);
        inv.out = Some("/tmp/x".into());
        let run = resolve(&inv, json!({}), Some("/tmp/root")).unwrap();
        assert_eq!(run.seed, 9);
        assert_eq!(run.out, PathBuf::from("/tmp/x"));
    }

    #[test]
    fn config_file_reserved_keys() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.json");
        std::fs::write(&path, r#"{"scenario": "landscape-grid", "seed": 3, "threads": 2, "grid_step": 0.25}"#).unwrap();
        let mut inv = invocation(&[]);
        inv.config_file = Some(path.clone());
        let run = resolve(&inv, json!({"grid_step": 0.005}), None).unwrap();
        assert_eq!((run.seed, run.threads), (3, Some(2)));
        assert_eq!(run.params, json!({"grid_step": 0.25}));

        std::fs::write(&path, r#"{"scenario": "priming"}"#).unwrap();
        assert_eq!(resolve(&inv, json!({}), None).unwrap_err().exit_code(), 2);
        std::fs::write(&path, "[1, 2]").unwrap();
        assert_eq!(resolve(&inv, json!({}), None).unwrap_err().exit_code(), 2);
        std::fs::write(&path, r#"{"seed": -1}"#).unwrap();
        assert_eq!(resolve(&inv, json!({}), None).unwrap_err().exit_code(), 2);
    }
}
