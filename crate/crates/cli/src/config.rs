//! `--config` files: TOML with one table per subcommand whose keys are flag
//! names. Top-level scalar keys set global flags. Values become extra
//! `--key value` arguments unless the flag is already on the command line.

use std::ffi::OsString;
use std::fs;

use toml::{Table, Value};

pub const SUBCOMMANDS: [&str; 10] = ["synth", "train", "infer", "buildings", "rollup", "eval", "calibrate", "compare", "ablate", "serve"];
const GLOBAL_KEYS: [&str; 2] = ["json", "threads"];

#[derive(Debug)]
pub enum ConfigError {
    Read(String),
    Schema(String),
}

fn config_path(args: &[OsString]) -> Option<OsString> {
    let mut it = args.iter().skip(1);
    while let Some(a) = it.next() {
        let s = a.to_string_lossy();
        if s == "--" {
            break;
        }
        if s == "--config" {
            return it.next().cloned();
        }
        if let Some(p) = s.strip_prefix("--config=") {
            return Some(p.into());
        }
    }
    None
}

fn given(args: &[OsString], flag: &str) -> bool {
    args.iter().any(|a| {
        let s = a.to_string_lossy();
        s == flag || s.strip_prefix(flag).is_some_and(|rest| rest.starts_with('='))
    })
}

fn scalar(key: &str, v: &Value) -> Result<String, ConfigError> {
    match v {
        Value::String(s) => Ok(s.clone()),
        Value::Integer(i) => Ok(i.to_string()),
        Value::Float(f) => Ok(f.to_string()),
        Value::Datetime(d) => Ok(d.to_string()),
        _ => Err(ConfigError::Schema(format!("key '{key}' must be a string, number or boolean"))),
    }
}

fn push_flag(out: &mut Vec<OsString>, key: &str, v: &Value) -> Result<(), ConfigError> {
    let flag = format!("--{}", key.replace('_', "-"));
    match v {
        Value::Boolean(true) => out.push(flag.into()),
        Value::Boolean(false) => {}
        Value::Array(items) => {
            for item in items {
                out.push(flag.clone().into());
                out.push(scalar(key, item)?.into());
            }
        }
        other => {
            out.push(flag.into());
            out.push(scalar(key, other)?.into());
        }
    }
    Ok(())
}

/// Returns `args` extended with the settings of the `--config` file, if any.
pub fn merge(args: Vec<OsString>) -> Result<Vec<OsString>, ConfigError> {
    let Some(path) = config_path(&args) else { return Ok(args) };
    let text = fs::read_to_string(&path).map_err(|e| ConfigError::Read(format!("{}: {e}", path.to_string_lossy())))?;
    let table: Table = text.parse().map_err(|e| ConfigError::Schema(format!("{}: {e}", path.to_string_lossy())))?;
    let sub = args.iter().skip(1).map(|a| a.to_string_lossy().into_owned()).find(|a| SUBCOMMANDS.contains(&a.as_str()));
    let mut extra = Vec::new();
    for (key, value) in &table {
        match value {
            Value::Table(t) => {
                if !SUBCOMMANDS.contains(&key.as_str()) {
                    return Err(ConfigError::Schema(format!("unknown section [{key}]")));
                }
                if sub.as_deref() != Some(key.as_str()) {
                    continue;
                }
                for (k, v) in t {
                    if !given(&args, &format!("--{}", k.replace('_', "-"))) {
                        push_flag(&mut extra, k, v)?;
                    }
                }
            }
            v => {
                if !GLOBAL_KEYS.contains(&key.as_str()) {
                    return Err(ConfigError::Schema(format!("unknown top-level key '{key}'; subcommand settings go in a [section]")));
                }
                if !given(&args, &format!("--{key}")) {
                    push_flag(&mut extra, key, v)?;
                }
            }
        }
    }
    let mut out = args;
    if sub.is_some() {
        out.extend(extra);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn os(v: &[&str]) -> Vec<OsString> {
        v.iter().map(OsString::from).collect()
    }

    #[test]
    fn explicit_flags_win() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.toml");
        fs::write(&p, "threads = 2\njson = true\n[train]\ntrees = 75\nmin_leaf = 4\nno_balance = false\n[infer]\ntile_size = 64\n").unwrap();
        let args = os(&["sar-damage", "--config", p.to_str().unwrap(), "train", "--trees", "10"]);
        let got: Vec<String> = merge(args).unwrap().into_iter().map(|s| s.into_string().unwrap()).collect();
        let tail: Vec<&str> = got[6..].iter().map(String::as_str).collect();
        assert_eq!(tail, ["--json", "--threads", "2", "--min-leaf", "4"]);
    }

    #[test]
    fn unknown_sections_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.toml");
        fs::write(&p, "[optical]\nbands = 4\n").unwrap();
        assert!(matches!(merge(os(&["x", "--config", p.to_str().unwrap(), "train"])), Err(ConfigError::Schema(_))));
    }
}
