//! `key=value` config files, expanded into flags placed ahead of the ones
//! given on the command line so that explicit flags win.

use std::fs;
use std::path::Path;

use anyhow::{bail, Context, Result};

/// Parses a config file into `--key=value` tokens.
///
/// Blank lines and lines starting with `#` are ignored, underscores in keys
/// become dashes, `true` turns into a bare switch and `false` drops the key.
pub fn parse_config(text: &str) -> Result<Vec<String>> {
    let mut flags = Vec::new();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            bail!("config line {}: expected key=value, got {line:?}", n + 1);
        };
        let key = key.trim().replace('_', "-");
        let value = value.trim();
        if key.is_empty() || key == "config" {
            bail!("config line {}: invalid key {key:?}", n + 1);
        }
        match value {
            "true" => flags.push(format!("--{key}")),
            "false" => {}
            _ => flags.push(format!("--{key}={value}")),
        }
    }
    Ok(flags)
}

fn config_path(args: &[String]) -> Option<&str> {
    let mut it = args.iter();
    while let Some(a) = it.next() {
        if a == "--" {
            return None;
        }
        if a == "--config" {
            return it.next().map(String::as_str);
        }
        if let Some(p) = a.strip_prefix("--config=") {
            return Some(p);
        }
    }
    None
}

/// Splices the flags of any `--config FILE` right after the subcommand name.
pub fn expand_args(args: Vec<String>) -> Result<Vec<String>> {
    let Some(path) = config_path(&args) else {
        return Ok(args);
    };
    let text = fs::read_to_string(Path::new(path)).with_context(|| format!("reading config {path}"))?;
    let flags = parse_config(&text)?;
    if args.len() < 2 || args[1].starts_with('-') {
        return Ok(args);
    }
    let mut out = args[..2].to_vec();
    out.extend(flags);
    out.extend_from_slice(&args[2..]);
    Ok(out)
}
