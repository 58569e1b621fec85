//! `--config FILE` support: each `key = value` line of the file becomes
//! `--key value`, inserted before the command-line flags so that flags
//! given explicitly win.

use std::fs;

/// Expands the first `--config` found after the subcommand.
pub fn expand(args: Vec<String>) -> Result<Vec<String>, String> {
    if args.len() < 2 {
        return Ok(args);
    }
    let mut rest = Vec::with_capacity(args.len());
    let mut path = None;
    let mut iter = args[2..].iter();
    while let Some(a) = iter.next() {
        if a == "--config" {
            let p = iter.next().ok_or("--config needs a file path")?;
            path = Some(p.clone());
        } else if let Some(p) = a.strip_prefix("--config=") {
            path = Some(p.to_string());
        } else {
            rest.push(a.clone());
        }
    }
    let Some(path) = path else {
        return Ok(args);
    };
    let text = fs::read_to_string(&path).map_err(|e| format!("cannot read config {path}: {e}"))?;
    let mut out = args[..2].to_vec();
    out.extend(parse(&text).map_err(|e| format!("{path}: {e}"))?);
    out.extend(rest);
    Ok(out)
}

fn parse(text: &str) -> Result<Vec<String>, String> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| format!("line {}: expected key = value", i + 1))?;
        let key = key.trim();
        let value = value.trim();
        if key.is_empty() {
            return Err(format!("line {}: empty key", i + 1));
        }
        match value {
            "true" => out.push(format!("--{key}")),
            "false" => {}
            _ => {
                out.push(format!("--{key}"));
                out.push(value.to_string());
            }
        }
    }
    Ok(out)
}
