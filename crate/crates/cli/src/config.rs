//! Experiment config files: TOML with command-line `--key=value` overrides.

use std::path::Path;

use branchlab_core::experiments::{ExperimentConfig, ExperimentKind};
use sha2::{Digest, Sha256};

use crate::Failure;

fn kind_name(kind: ExperimentKind) -> String {
    serde_json::to_value(kind).ok().and_then(|v| v.as_str().map(str::to_owned)).unwrap_or_default()
}

fn line_of(text: &str, span: Option<std::ops::Range<usize>>) -> usize {
    span.map_or(0, |r| text[..r.start.min(text.len())].matches('\n').count() + 1)
}

fn parse_error(path: &Path, text: &str, err: toml::de::Error, shift: usize) -> Failure {
    let line = line_of(text, err.span()).saturating_sub(shift).max(1);
    Failure::config(format!("{}:{line}: {}", path.display(), err.message()))
}

/// Splits `--key=value` overrides from the arguments clap should see.
/// `--config` and `--out` stay with clap.
pub fn split_overrides(args: impl IntoIterator<Item = String>) -> (Vec<String>, Vec<(String, String)>) {
    let mut rest = Vec::new();
    let mut overrides = Vec::new();
    for a in args {
        match a.strip_prefix("--").and_then(|kv| kv.split_once('=')) {
            Some((k, v)) if k != "config" && k != "out" => overrides.push((k.to_string(), v.to_string())),
            _ => rest.push(a),
        }
    }
    (rest, overrides)
}

fn override_value(raw: &str) -> toml::Value {
    format!("v = {raw}")
        .parse::<toml::Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()))
}

fn apply_override(table: &mut toml::Table, key: &str, raw: &str) -> Result<(), Failure> {
    let parts: Vec<&str> = key.split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(Failure::config(format!("override --{key}: empty key segment")));
    }
    let mut cur = table;
    for p in &parts[..parts.len() - 1] {
        let entry = cur.entry(p.to_string()).or_insert_with(|| toml::Value::Table(toml::Table::new()));
        cur = entry
            .as_table_mut()
            .ok_or_else(|| Failure::config(format!("override --{key}: `{p}` is not a section")))?;
    }
    cur.insert(parts[parts.len() - 1].to_string(), override_value(raw));
    Ok(())
}

/// Reads `path`, fixes the experiment kind to the one the verb runs, applies
/// overrides and checks the result.
pub fn load(path: &Path, kind: ExperimentKind, overrides: &[(String, String)]) -> Result<ExperimentConfig, Failure> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Failure::config(format!("cannot read {}: {e}", path.display())))?;
    let mut table: toml::Table = text.parse().map_err(|e| parse_error(path, &text, e, 0))?;
    let name = kind_name(kind);
    let had_kind = table.contains_key("experiment");
    match table.get("experiment") {
        None => {
            table.insert("experiment".into(), toml::Value::String(name.clone()));
        }
        Some(toml::Value::String(s)) if *s == name => {}
        Some(other) => {
            return Err(Failure::config(format!(
                "{}: experiment = {other} does not match the `{name}` command",
                path.display()
            )))
        }
    }
    // Deserialize the file as written first so errors point at its lines.
    let (patched, shift) =
        if had_kind { (text.clone(), 0) } else { (format!("experiment = \"{name}\"\n{text}"), 1) };
    toml::from_str::<ExperimentConfig>(&patched).map_err(|e| parse_error(path, &patched, e, shift))?;
    for (k, v) in overrides {
        apply_override(&mut table, k, v)?;
    }
    let cfg: ExperimentConfig = toml::Value::Table(table)
        .try_into()
        .map_err(|e: toml::de::Error| Failure::config(format!("after overrides: {}", e.message())))?;
    cfg.validate().map_err(Failure::from)?;
    Ok(cfg)
}

/// Content hash of everything that affects results. The output location and
/// the cache flag are excluded.
pub fn config_hash(cfg: &ExperimentConfig) -> String {
    let mut c = cfg.clone();
    c.output_dir = None;
    c.cache = true;
    let body = serde_json::to_string(&c).expect("config serializes");
    let digest = Sha256::new()
        .chain_update(branchlab_core::VERSION.as_bytes())
        .chain_update(env!("CARGO_PKG_VERSION").as_bytes())
        .chain_update(body.as_bytes())
        .finalize();
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn overrides_are_split_and_typed() {
        let args = ["branchlab", "construct", "--config=a.toml", "--K=64", "--optimizer.rng_seed=3", "--out", "x"];
        let (rest, ov) = split_overrides(args.iter().map(|s| s.to_string()));
        assert_eq!(rest, ["branchlab", "construct", "--config=a.toml", "--out", "x"]);
        assert_eq!(ov.len(), 2);
        let mut t = toml::Table::new();
        apply_override(&mut t, &ov[1].0, &ov[1].1).unwrap();
        assert_eq!(t["optimizer"]["rng_seed"].as_integer(), Some(3));
        assert_eq!(override_value("[0.2, 0.4]").as_array().map(|a| a.len()), Some(2));
        assert_eq!(override_value("abc").as_str(), Some("abc"));
    }
}
