//! `--config FILE`: `key = value` lines whose keys are long flag names.
//! Values from the file are used only for flags absent from the command line.

use std::fs;
use std::path::Path;

#[derive(Debug)]
pub enum ConfigError {
    Read(String),
    Syntax(String),
}

fn flag_given(args: &[String], key: &str) -> bool {
    let long = format!("--{key}");
    let with_value = format!("{long}=");
    args.iter().any(|a| *a == long || a.starts_with(&with_value))
}

/// Location of `--config` in `args`, returning its value.
fn config_path(args: &[String]) -> Option<String> {
    let mut iter = args.iter();
    while let Some(a) = iter.next() {
        if a == "--config" {
            return iter.next().cloned();
        }
        if let Some(v) = a.strip_prefix("--config=") {
            return Some(v.to_string());
        }
    }
    None
}

pub fn parse(text: &str) -> Result<Vec<(String, String)>, ConfigError> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| ConfigError::Syntax(format!("line {}: expected key=value, got {line:?}", i + 1)))?;
        let key = key.trim().trim_start_matches("--");
        if key.is_empty() || key == "config" {
            return Err(ConfigError::Syntax(format!("line {}: invalid key {key:?}", i + 1)));
        }
        out.push((key.to_string(), value.trim().to_string()));
    }
    Ok(out)
}

/// Inserts config-file flags right after the subcommand name, so any flag
/// on the command line wins. Boolean flags take `true` or `false`.
pub fn merge(args: Vec<String>) -> Result<Vec<String>, ConfigError> {
    let Some(path) = config_path(&args) else {
        return Ok(args);
    };
    let text = fs::read_to_string(Path::new(&path)).map_err(|e| ConfigError::Read(format!("{path}: {e}")))?;
    let mut extra = Vec::new();
    for (key, value) in parse(&text)? {
        if flag_given(&args, &key) {
            continue;
        }
        match value.as_str() {
            "true" => extra.push(format!("--{key}")),
            "false" => {}
            _ => extra.push(format!("--{key}={value}")),
        }
    }
    // args[0] is the program and args[1] the subcommand
    let at = args.len().min(2);
    let mut merged = args[..at].to_vec();
    merged.extend(extra);
    merged.extend_from_slice(&args[at..]);
    Ok(merged)
}
