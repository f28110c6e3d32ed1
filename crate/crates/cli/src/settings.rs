//! Settings come from an optional JSON file overlaid by command-line flags.
//! Flag names are the file keys in kebab case.

use std::path::PathBuf;

use clap::Args;
use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::{Map, Value};

use crate::error::CliError;

#[derive(Args, Clone, Debug, Default)]
pub struct Common {
    /// JSON settings file; flags given on the command line win over its keys
    #[arg(long, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// Print the effective settings as JSON and exit
    #[arg(long)]
    pub print_config: bool,
}

fn load_file(path: &PathBuf) -> Result<Map<String, Value>, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
    match serde_json::from_str(&text) {
        Ok(Value::Object(m)) => Ok(m),
        Ok(_) => Err(CliError::Usage(format!("{}: expected a JSON object", path.display()))),
        Err(e) => Err(CliError::Usage(format!("{}: {e}", path.display()))),
    }
}

/// Merges file and flags into `T`. Returns `None` after printing when
/// `--print-config` was given.
pub fn resolve<T: DeserializeOwned + Serialize>(common: &Common, flags: &impl Serialize) -> Result<Option<T>, CliError> {
    let mut merged = match &common.config {
        Some(p) => load_file(p)?,
        None => Map::new(),
    };
    let Value::Object(flags) = serde_json::to_value(flags).map_err(|e| CliError::Usage(e.to_string()))? else {
        return Err(CliError::Usage("flags did not serialize to an object".into()));
    };
    for (k, v) in flags {
        if !v.is_null() {
            merged.insert(k, v);
        }
    }
    let settings: T = serde_json::from_value(Value::Object(merged)).map_err(|e| CliError::Usage(format!("settings: {e}")))?;
    if common.print_config {
        let text = serde_json::to_string_pretty(&settings).map_err(|e| CliError::Usage(e.to_string()))?;
        println!("{text}");
        return Ok(None);
    }
    Ok(Some(settings))
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde::Deserialize;

    #[derive(Serialize, Deserialize, Debug, PartialEq)]
    struct S {
        a: u32,
        #[serde(default)]
        b: String,
    }

    #[derive(Serialize)]
    struct F {
        a: Option<u32>,
        b: Option<String>,
    }

    #[test]
    fn flags_override_file_keys() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.json");
        std::fs::write(&p, r#"{"a": 1, "b": "file"}"#).unwrap();
        let common = Common {
            config: Some(p),
            print_config: false,
        };
        let s: S = resolve(&common, &F { a: Some(7), b: None }).unwrap().unwrap();
        assert_eq!(s, S { a: 7, b: "file".into() });
    }

    #[test]
    fn missing_required_key_is_a_usage_error() {
        let r = resolve::<S>(&Common::default(), &F { a: None, b: None });
        assert!(matches!(r, Err(CliError::Usage(_))));
    }
}
